//! The composed objective: content + local patch style + global Gram style +
//! total variation, differentiated back to pixels.

use std::collections::BTreeMap;

use crate::backbone::{BackboneWeights, LayerId};
use crate::error::{Error, Result};
use crate::losses::{
    content_loss, global_style_loss, gram, local_style_loss_with_bank, tv_loss, GramMatrix, LossReport, LossWeights,
    PatchSet,
};
use crate::optimizer::{init_image, minimize_with, IterationInfo, Objective, OptimConfig, OptimState};
use crate::pyramid::{aggregate, AggregationScheme, SemanticAttach};
use crate::tensor::{FeatureMap, Image};

/// Everything about a transfer run except the images.
#[derive(Clone, Debug)]
pub struct TransferSettings {
    pub scheme: AggregationScheme,
    pub weights: LossWeights,
    pub attach: SemanticAttach,
    /// Patch assignments are recomputed after every `match_every` accepted
    /// steps (1 = every step).
    pub match_every: usize,
}

impl Default for TransferSettings {
    fn default() -> Self {
        Self {
            scheme: AggregationScheme::parse("g").expect("catalog scheme"),
            weights: LossWeights::default(),
            attach: SemanticAttach::PerLayer,
            match_every: 1,
        }
    }
}

/// Style statistics for one fused map of the scheme.
#[derive(Clone, Debug)]
pub struct MapTarget {
    pub subset: Vec<LayerId>,
    pub bank: Option<PatchSet>,
    pub gram: Option<GramMatrix>,
}

/// Targets computed once from the content and style images.
#[derive(Clone, Debug)]
pub struct Targets {
    /// Content-layer features of the content image.
    pub content: Option<FeatureMap>,
    pub maps: Vec<MapTarget>,
    /// Weighted semantic map applied to the generated image.
    pub generated_sem: Option<FeatureMap>,
}

fn weighted(sem: Option<&FeatureMap>, beta1: f64) -> Option<FeatureMap> {
    sem.map(|s| s.map(|v| v * beta1))
}

impl Targets {
    /// `content_sem` / `style_sem` are unweighted one-hot maps at the
    /// resolution of their photos; both present or both absent.
    pub fn precompute(
        net: &BackboneWeights,
        content: &Image,
        style: &Image,
        content_sem: Option<&FeatureMap>,
        style_sem: Option<&FeatureMap>,
        settings: &TransferSettings,
    ) -> Result<Self> {
        let lw = &settings.weights;
        lw.validate()?;
        match (content_sem, style_sem) {
            (Some(a), Some(b)) if a.channels() != b.channels() => {
                return Err(Error::Config(format!(
                    "semantic maps disagree on channel count ({} vs {})",
                    a.channels(),
                    b.channels()
                )))
            }
            (Some(_), None) | (None, Some(_)) => {
                return Err(Error::Config("semantic maps must be given for both images or neither".into()))
            }
            _ => {}
        }
        let content_feat = if lw.alpha > 0.0 {
            let trace = net.forward_trace(content, &[LayerId::CONTENT])?;
            trace.layer(LayerId::CONTENT).cloned()
        } else {
            None
        };

        let needs_style = lw.beta > 0.0 || lw.gamma > 0.0;
        let style_sem_w = weighted(style_sem, lw.beta1);
        let mut maps = Vec::with_capacity(settings.scheme.maps().len());
        let style_feats = if needs_style {
            Some(net.forward_trace(style, &settings.scheme.layers())?.features(&settings.scheme.layers())?)
        } else {
            None
        };
        for subset in settings.scheme.maps() {
            let (bank, gram_a) = match &style_feats {
                Some(feats) => {
                    let fused = aggregate(feats, subset, style_sem_w.as_ref(), settings.attach)?;
                    let bank = (lw.beta > 0.0).then(|| PatchSet::extract(&fused.map)).transpose()?;
                    let g = (lw.gamma > 0.0).then(|| gram(&fused.layout.strip_semantic(&fused.map)));
                    (bank, g)
                }
                None => (None, None),
            };
            maps.push(MapTarget {
                subset: subset.clone(),
                bank,
                gram: gram_a,
            });
        }
        Ok(Self {
            content: content_feat,
            maps,
            generated_sem: weighted(content_sem, lw.beta1),
        })
    }
}

/// The total loss as an [`Objective`] over the generated image's pixels.
pub struct TransferObjective<'a> {
    net: &'a BackboneWeights,
    targets: &'a Targets,
    settings: &'a TransferSettings,
    shape: (usize, usize, usize),
    frozen: Option<Vec<Vec<usize>>>,
    steps: usize,
    last: LossReport,
}

impl<'a> TransferObjective<'a> {
    pub fn new(net: &'a BackboneWeights, targets: &'a Targets, settings: &'a TransferSettings, shape: (usize, usize, usize)) -> Self {
        Self {
            net,
            targets,
            settings,
            shape,
            frozen: None,
            steps: 0,
            last: LossReport::default(),
        }
    }

    /// Report of the most recent evaluation.
    pub fn last_report(&self) -> &LossReport {
        &self.last
    }

    /// Drops the frozen patch assignment; the next evaluation rematches.
    pub fn invalidate_matches(&mut self) {
        self.frozen = None;
    }

    /// Loss report and pixel gradient at `img`.
    pub fn evaluate_image(&mut self, img: &Image) -> Result<(LossReport, Image)> {
        let lw = self.settings.weights;
        let (h, w, c) = img.shape();
        let mut report = LossReport::default();
        let mut grad = FeatureMap::zeros(h, w, c);

        let style_on = lw.beta > 0.0 || lw.gamma > 0.0;
        let mut layers = Vec::new();
        if lw.alpha > 0.0 {
            layers.push(LayerId::CONTENT);
        }
        if style_on {
            layers.extend(self.settings.scheme.layers());
        }
        layers.sort();
        layers.dedup();

        if !layers.is_empty() {
            let trace = self.net.forward_trace(img, &layers)?;
            let feats = trace.features(&layers)?;
            let mut upstream: BTreeMap<LayerId, FeatureMap> = BTreeMap::new();
            let mut add_up = |id: LayerId, g: &FeatureMap, s: f64| {
                upstream
                    .entry(id)
                    .or_insert_with(|| FeatureMap::zeros(g.height(), g.width(), g.channels()))
                    .add_scaled(g, s);
            };

            if lw.alpha > 0.0 {
                let p = self
                    .targets
                    .content
                    .as_ref()
                    .ok_or_else(|| Error::Config("content target missing for alpha > 0".into()))?;
                let (v, g) = content_loss(&feats[&LayerId::CONTENT], p)?;
                report.content = v;
                add_up(LayerId::CONTENT, &g, lw.alpha);
            }

            if style_on {
                let mut matches = Vec::with_capacity(self.targets.maps.len());
                for (idx, target) in self.targets.maps.iter().enumerate() {
                    let fused = aggregate(&feats, &target.subset, self.targets.generated_sem.as_ref(), self.settings.attach)?;
                    let mut g_fused = FeatureMap::zeros(fused.map.height(), fused.map.width(), fused.map.channels());
                    if lw.beta > 0.0 {
                        let bank = target
                            .bank
                            .as_ref()
                            .ok_or_else(|| Error::Config("patch bank missing for beta > 0".into()))?;
                        let frozen = self.frozen.as_ref().map(|f| f[idx].clone());
                        let mask = fused.layout.feature_mask();
                        let local = local_style_loss_with_bank(&fused.map, bank, frozen, Some(&mask))?;
                        report.local += local.value;
                        g_fused.add_scaled(&local.grad, lw.beta);
                        matches.push(local.matches);
                    }
                    if lw.gamma > 0.0 {
                        let g_a = target
                            .gram
                            .as_ref()
                            .ok_or_else(|| Error::Config("Gram target missing for gamma > 0".into()))?;
                        let ff = fused.layout.strip_semantic(&fused.map);
                        let (v, g) = global_style_loss(g_a, &ff)?;
                        report.global += v;
                        g_fused.add_scaled(&fused.layout.embed_features(&g), lw.gamma);
                    }
                    for (id, g) in fused.layout.backward(&g_fused)? {
                        add_up(id, &g, 1.0);
                    }
                }
                if lw.beta > 0.0 {
                    if self.frozen.is_none() {
                        self.frozen = Some(matches.clone());
                    }
                    report.matches = matches;
                }
            }
            grad = trace.backward(&upstream)?;
        }

        if lw.sigma > 0.0 {
            let (v, g) = tv_loss(img);
            report.tv = v;
            grad.add_scaled(&g, lw.sigma);
        }
        let report = report.combine(&lw);
        self.last = report.clone();
        Ok((report, grad))
    }
}

impl Objective for TransferObjective<'_> {
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let (h, w, c) = self.shape;
        let img = FeatureMap::from_vec(h, w, c, x.to_vec())?;
        let (report, g) = self.evaluate_image(&img)?;
        grad.copy_from_slice(g.as_slice());
        Ok(report.total)
    }

    fn refresh(&mut self) -> bool {
        if self.settings.weights.beta <= 0.0 {
            return false;
        }
        self.steps += 1;
        if self.steps.is_multiple_of(self.settings.match_every.max(1)) {
            self.frozen = None;
            true
        } else {
            false
        }
    }
}

/// Evaluates the total loss at `x` with freshly computed patch assignments.
pub fn total_loss(net: &BackboneWeights, x: &Image, targets: &Targets, settings: &TransferSettings) -> Result<(LossReport, Image)> {
    TransferObjective::new(net, targets, settings, x.shape()).evaluate_image(x)
}

/// Outcome of [`run`].
pub struct TransferOutcome {
    pub state: OptimState,
    /// One report per trace entry (start point, then every accepted step).
    pub reports: Vec<LossReport>,
}

/// Inputs to a transfer run. Photos must already be padded to multiples of 8.
pub struct TransferInputs<'a> {
    pub content: &'a Image,
    pub style: &'a Image,
    pub content_sem: Option<&'a FeatureMap>,
    pub style_sem: Option<&'a FeatureMap>,
}

/// Precomputes targets, initialises the image and minimises the total loss.
/// `on_iter` sees every accepted step together with its loss report.
pub fn run<F>(net: &BackboneWeights, inputs: &TransferInputs<'_>, settings: &TransferSettings, cfg: &OptimConfig, mut on_iter: F) -> Result<TransferOutcome>
where
    F: FnMut(&IterationInfo<'_>, &LossReport) -> Result<()>,
{
    if settings.match_every == 0 {
        return Err(Error::Config("match-every must be at least 1".into()));
    }
    let targets = Targets::precompute(net, inputs.content, inputs.style, inputs.content_sem, inputs.style_sem, settings)?;
    let x0 = init_image(cfg.init, inputs.content, inputs.style, cfg.seed)?;
    let mut objective = TransferObjective::new(net, &targets, settings, x0.shape());
    let mut reports = Vec::new();
    let state = minimize_with(&x0, &mut objective, cfg, |info, obj| {
        reports.push(obj.last_report().clone());
        on_iter(info, obj.last_report())
    })?;
    Ok(TransferOutcome { state, reports })
}
