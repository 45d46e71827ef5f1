//! Layer aggregation: the running fusion starts at the shallowest layer, is
//! bilinearly downsized to the next layer's resolution and concatenated with
//! that layer's map on the channel axis, repeating down to the deepest layer.
//!
//! Channel order of a fused map is shallowest-first. With
//! [`SemanticAttach::PerLayer`] every layer block is immediately followed by
//! its own semantic block:
//!
//! ```text
//! [F¹ | sem¹ | F² | sem² | … | Fᵏ | semᵏ]     (each earlier block resized)
//! ```
//!
//! With [`SemanticAttach::Once`] a single semantic block is appended after
//! the last feature block.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::LayerId;
use crate::error::{Error, Result};
use crate::tensor::{resize_bilinear, resize_bilinear_adjoint, resize_nearest, FeatureMap};

/// How semantic channels are attached to a fused map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SemanticAttach {
    /// One semantic block per contributing layer (`s·k` channels).
    #[default]
    PerLayer,
    /// A single semantic block on the finished fusion (`s` channels).
    Once,
}

impl FromStr for SemanticAttach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-layer" => Ok(Self::PerLayer),
            "once" => Ok(Self::Once),
            other => Err(Error::Config(format!("unknown sem-attach mode {other:?}"))),
        }
    }
}

impl fmt::Display for SemanticAttach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerLayer => "per-layer",
            Self::Once => "once",
        })
    }
}

/// One or more layer subsets, each producing one fused map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AggregationScheme {
    name: String,
    maps: Vec<Vec<LayerId>>,
}

impl AggregationScheme {
    pub fn new(name: impl Into<String>, maps: Vec<Vec<LayerId>>) -> Result<Self> {
        let name = name.into();
        if maps.is_empty() {
            return Err(Error::Scheme(format!("{name}: no maps")));
        }
        for subset in &maps {
            if subset.is_empty() || subset.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::Scheme(format!(
                    "{name}: each subset must be nonempty and strictly increasing"
                )));
            }
        }
        Ok(Self { name, maps })
    }

    fn from_digits(name: &str, maps: &[&[u8]]) -> Self {
        let maps = maps
            .iter()
            .map(|s| s.iter().map(|&i| LayerId::new(i).expect("static table")).collect())
            .collect();
        Self::new(name, maps).expect("static table")
    }

    /// Scheme `a`…`h`, or a custom layer list such as `"1,2,3"` or `"3+4"`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if let Some(s) = scheme_catalog().remove(text) {
            return Ok(s);
        }
        let maps = text
            .split('+')
            .map(|part| {
                part.split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<u8>()
                            .map_err(|_| Error::Scheme(text.to_string()))
                            .and_then(LayerId::new)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(text, maps)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn maps(&self) -> &[Vec<LayerId>] {
        &self.maps
    }

    /// Every layer referenced by any map, ascending.
    pub fn layers(&self) -> Vec<LayerId> {
        let mut all: Vec<LayerId> = self.maps.iter().flatten().copied().collect();
        all.sort();
        all.dedup();
        all
    }

    /// `(h, w, c)` of each fused map for an `height × width` input through
    /// VGG19, with `sem_channels` semantic channels per attachment.
    pub fn fused_shapes(&self, height: usize, width: usize, sem_channels: usize, attach: SemanticAttach) -> Vec<(usize, usize, usize)> {
        self.maps
            .iter()
            .map(|subset| {
                let deepest = *subset.last().expect("nonempty");
                let (h, w) = deepest.vgg_spatial(height, width);
                let feat: usize = subset.iter().map(|l| l.vgg_channels()).sum();
                let sem = match attach {
                    SemanticAttach::PerLayer => sem_channels * subset.len(),
                    SemanticAttach::Once => sem_channels,
                };
                (h, w, feat + sem)
            })
            .collect()
    }
}

impl fmt::Display for AggregationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// The eight schemes compared in the layer-aggregation study.
pub fn scheme_catalog() -> BTreeMap<String, AggregationScheme> {
    let table: [(&str, &[&[u8]]); 8] = [
        ("a", &[&[1, 2]]),
        ("b", &[&[3]]),
        ("c", &[&[4]]),
        ("d", &[&[3, 4]]),
        ("e", &[&[1, 2, 3]]),
        ("f", &[&[1, 2, 4]]),
        ("g", &[&[1, 2, 3, 4]]),
        ("h", &[&[3], &[4]]),
    ];
    table
        .iter()
        .map(|(n, maps)| (n.to_string(), AggregationScheme::from_digits(n, maps)))
        .collect()
}

/// Number of values in all fused maps of `scheme` (VGG19 widths, per-layer
/// semantic attachment).
pub fn fused_pixel_count(scheme: &AggregationScheme, height: usize, width: usize, sem_channels: usize) -> usize {
    scheme
        .fused_shapes(height, width, sem_channels, SemanticAttach::PerLayer)
        .iter()
        .map(|(h, w, c)| h * w * c)
        .sum()
}

/// Alias of [`resize_bilinear`] under the name used by the aggregation.
pub fn bilinear_resize(fm: &FeatureMap, target_h: usize, target_w: usize) -> Result<FeatureMap> {
    resize_bilinear(fm, target_h, target_w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Feature(LayerId),
    Semantic(LayerId),
}

/// A contiguous channel range of a fused map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Block {
    pub kind: BlockKind,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug)]
struct Step {
    layer: LayerId,
    h: usize,
    w: usize,
    /// Channels carried in from the previous fusion (0 for the first layer).
    carried: usize,
    feature: usize,
    semantic: usize,
}

/// Channel bookkeeping of one fused map, sufficient to run its adjoint.
#[derive(Clone, Debug)]
pub struct FusedLayout {
    blocks: Vec<Block>,
    steps: Vec<Step>,
    channels: usize,
}

impl FusedLayout {
    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of layers fused.
    pub fn depth(&self) -> usize {
        self.steps.len()
    }

    pub fn semantic_channels(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| matches!(b.kind, BlockKind::Semantic(_)))
            .map(|b| b.len)
            .sum()
    }

    pub fn feature_channels(&self) -> usize {
        self.channels - self.semantic_channels()
    }

    /// Per-channel flag: `true` for feature channels, `false` for semantic.
    pub fn feature_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.channels];
        for b in &self.blocks {
            if matches!(b.kind, BlockKind::Feature(_)) {
                mask[b.start..b.start + b.len].fill(true);
            }
        }
        mask
    }

    /// Drops the semantic channels, keeping feature channels in order.
    pub fn strip_semantic(&self, fused: &FeatureMap) -> FeatureMap {
        let mask = self.feature_mask();
        let keep = self.feature_channels();
        let mut data = Vec::with_capacity(fused.pixels() * keep);
        for px in fused.as_slice().chunks_exact(self.channels) {
            data.extend(px.iter().zip(&mask).filter(|(_, &m)| m).map(|(v, _)| *v));
        }
        FeatureMap::from_vec(fused.height(), fused.width(), keep, data).expect("sizes agree")
    }

    /// Inverse of [`Self::strip_semantic`] for cotangents: semantic channels
    /// receive zero.
    pub fn embed_features(&self, grad: &FeatureMap) -> FeatureMap {
        let mask = self.feature_mask();
        let mut out = FeatureMap::zeros(grad.height(), grad.width(), self.channels);
        for (dst, src) in out
            .as_mut_slice()
            .chunks_exact_mut(self.channels)
            .zip(grad.as_slice().chunks_exact(grad.channels()))
        {
            let mut it = src.iter();
            for (d, &m) in dst.iter_mut().zip(&mask) {
                if m {
                    *d = *it.next().expect("feature count agrees");
                }
            }
        }
        out
    }

    /// Adjoint of aggregation with respect to the feature inputs. Gradient on
    /// semantic channels is discarded (they are constants).
    pub fn backward(&self, grad: &FeatureMap) -> Result<BTreeMap<LayerId, FeatureMap>> {
        let last = self.steps.last().expect("nonempty");
        if grad.shape() != (last.h, last.w, self.channels) {
            return Err(Error::Shape(format!(
                "fused cotangent {:?}, expected {:?}",
                grad.shape(),
                (last.h, last.w, self.channels)
            )));
        }
        let mut out = BTreeMap::new();
        let mut g = grad.clone();
        for (i, step) in self.steps.iter().enumerate().rev() {
            // Trailing semantic block after the last feature block in `once` mode.
            let own = step.feature + step.semantic;
            let tail = g.channels() - step.carried - own;
            debug_assert!(tail == 0 || i + 1 == self.steps.len());
            out.insert(step.layer, g.slice_channels(step.carried, step.feature));
            if i == 0 {
                break;
            }
            let prev = &self.steps[i - 1];
            let carried = g.slice_channels(0, step.carried);
            g = resize_bilinear_adjoint(&carried, prev.h, prev.w)?;
        }
        Ok(out)
    }
}

/// A fused map and its channel layout.
#[derive(Clone, Debug)]
pub struct FusedFeatures {
    pub map: FeatureMap,
    pub layout: FusedLayout,
}

/// Fuses `subset` (ascending) of `features`. When `sem` is given it must
/// already be weighted; it is resampled (nearest) to each attachment's
/// resolution.
pub fn aggregate(
    features: &BTreeMap<LayerId, FeatureMap>,
    subset: &[LayerId],
    sem: Option<&FeatureMap>,
    attach: SemanticAttach,
) -> Result<FusedFeatures> {
    if subset.is_empty() {
        return Err(Error::Scheme("empty layer subset".into()));
    }
    let sem_at = |h: usize, w: usize| -> Result<Option<FeatureMap>> {
        sem.map(|s| resize_nearest(s, h, w)).transpose()
    };
    let mut steps = Vec::with_capacity(subset.len());
    let mut blocks = Vec::new();
    let mut fused: Option<FeatureMap> = None;
    for (i, &layer) in subset.iter().enumerate() {
        let f = features.get(&layer).ok_or(Error::Layer {
            layer: layer.get(),
            message: "missing from the feature set".into(),
        })?;
        let (h, w, fc) = f.shape();
        let carried = fused.as_ref().map_or(0, |m| m.channels());
        let attach_here = match attach {
            SemanticAttach::PerLayer => true,
            SemanticAttach::Once => i + 1 == subset.len(),
        };
        let sem_block = if attach_here { sem_at(h, w)? } else { None };
        let sc = sem_block.as_ref().map_or(0, |s| s.channels());

        let resized = match &fused {
            Some(prev) => Some(resize_bilinear(prev, h, w)?),
            None => None,
        };
        let mut parts: Vec<&FeatureMap> = Vec::with_capacity(3);
        if let Some(r) = &resized {
            parts.push(r);
        }
        parts.push(f);
        if let Some(s) = &sem_block {
            parts.push(s);
        }
        fused = Some(FeatureMap::concat_channels(&parts)?);

        blocks.push(Block {
            kind: BlockKind::Feature(layer),
            start: carried,
            len: fc,
        });
        if sc > 0 {
            blocks.push(Block {
                kind: BlockKind::Semantic(layer),
                start: carried + fc,
                len: sc,
            });
        }
        steps.push(Step {
            layer,
            h,
            w,
            carried,
            feature: fc,
            semantic: sc,
        });
    }
    let map = fused.expect("nonempty subset");
    let layout = FusedLayout {
        channels: map.channels(),
        blocks,
        steps,
    };
    Ok(FusedFeatures { map, layout })
}
