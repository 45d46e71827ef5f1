//! Limited-memory BFGS over image pixels with a strong-Wolfe line search.
//!
//! The objective may be piecewise (patch assignments change between
//! searches). [`Objective::refresh`] is called after every accepted
//! step; an objective that refreshes internal state there reports it, and the
//! optimizer re-evaluates the new point so the loss trace and the next search
//! both use the refreshed state. Curvature pairs always come from two
//! evaluations inside one search, i.e. under the same frozen state.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::tensor::{resize_bilinear, FeatureMap, Image};

/// A differentiable scalar function of a flat parameter vector.
pub trait Objective {
    /// Returns the value at `x` and writes the gradient into `grad`.
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64>;

    /// Hook run after each accepted step, before the next line search.
    /// Returns `true` when internal piecewise state was invalidated, so the
    /// value at the current point has changed.
    fn refresh(&mut self) -> bool {
        false
    }
}

impl<F> Objective for F
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        Ok(self(x, grad))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    #[default]
    Content,
    Style,
    Noise,
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "content" => Ok(Self::Content),
            "style" => Ok(Self::Style),
            "noise" => Ok(Self::Noise),
            other => Err(Error::Config(format!("unknown init mode {other:?}"))),
        }
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Content => "content",
            Self::Style => "style",
            Self::Noise => "noise",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub max_iters: usize,
    pub history: usize,
    pub c1: f64,
    pub c2: f64,
    /// Stop when the relative decrease of an accepted step falls below this.
    pub rel_loss_tol: f64,
    /// Stop when the gradient's Euclidean norm falls below this.
    pub grad_tol: f64,
    /// Evaluations allowed per line search.
    pub max_probes: usize,
    pub seed: u64,
    pub init: InitMode,
    /// Write a snapshot every this many iterations (0 disables).
    pub snapshot_every: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            history: 10,
            c1: 1e-4,
            c2: 0.9,
            rel_loss_tol: 1e-7,
            grad_tol: 1e-6,
            max_probes: 20,
            seed: 0,
            init: InitMode::Content,
            snapshot_every: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Config(format!("need 0 < c1 < c2 < 1, got c1={} c2={}", self.c1, self.c2)));
        }
        if self.history == 0 {
            return Err(Error::Config("history size must be at least 1".into()));
        }
        if self.max_probes == 0 {
            return Err(Error::Config("line search needs at least one probe".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    RelativeLoss,
    GradientNorm,
}

/// A stored `(s, y)` pair with `⟨s, y⟩ > 0`.
#[derive(Clone, Debug)]
pub struct CurvaturePair {
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub sy: f64,
}

#[derive(Clone, Debug)]
pub struct OptimState {
    pub x: Image,
    /// Loss at the start point followed by the loss after every accepted step.
    pub trace: Vec<f64>,
    pub history: VecDeque<CurvaturePair>,
    /// Accepted steps.
    pub iterations: usize,
    pub evaluations: usize,
    /// Wall-clock seconds of every iteration.
    pub timings: Vec<f64>,
    pub termination: Termination,
}

impl OptimState {
    pub fn mean_iteration_seconds(&self) -> f64 {
        if self.timings.is_empty() {
            0.0
        } else {
            self.timings.iter().sum::<f64>() / self.timings.len() as f64
        }
    }
}

/// Passed to the per-iteration callback.
pub struct IterationInfo<'a> {
    pub iteration: usize,
    pub loss: f64,
    pub seconds: f64,
    pub x: &'a [f64],
}

/// Starting image: a copy of the content, the style resized to the content's
/// size, or seeded uniform noise in `[0, 255]`.
pub fn init_image(mode: InitMode, content: &Image, style: &Image, seed: u64) -> Result<Image> {
    match mode {
        InitMode::Content => Ok(content.clone()),
        InitMode::Style => resize_bilinear(style, content.height(), content.width()),
        InitMode::Noise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (h, w, c) = content.shape();
            let data = (0..h * w * c).map(|_| rng.random_range(0.0..=255.0)).collect();
            FeatureMap::from_vec(h, w, c, data)
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn check_finite(f: f64, g: &[f64], iteration: usize) -> Result<()> {
    if !f.is_finite() {
        return Err(Error::NonFinite { what: "loss", iteration });
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "gradient", iteration });
    }
    Ok(())
}

/// `-H·g` by the two-loop recursion, with `H₀ = (sᵀy / yᵀy)·I`.
fn two_loop(g: &[f64], history: &VecDeque<CurvaturePair>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for pair in history.iter().rev() {
        let a = dot(&pair.s, &q) / pair.sy;
        for (qi, yi) in q.iter_mut().zip(&pair.y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some(last) = history.back() {
        let gamma = last.sy / dot(&last.y, &last.y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (pair, a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = dot(&pair.y, &q) / pair.sy;
        for (qi, si) in q.iter_mut().zip(&pair.s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

struct Probe {
    alpha: f64,
    f: f64,
    dphi: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

/// Minimiser of the cubic through `(a, fa, da)` and `(b, fb, db)`, if it exists.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    t.is_finite().then_some(t)
}

struct LineSearch<'a, O: Objective> {
    objective: &'a mut O,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
    probes_left: usize,
    evaluations: usize,
    iteration: usize,
}

impl<O: Objective> LineSearch<'_, O> {
    fn probe(&mut self, alpha: f64) -> Result<Probe> {
        let x: Vec<f64> = self.x.iter().zip(self.d).map(|(xi, di)| xi + alpha * di).collect();
        let mut g = vec![0.0; x.len()];
        let f = self.objective.evaluate(&x, &mut g)?;
        self.probes_left -= 1;
        self.evaluations += 1;
        check_finite(f, &g, self.iteration)?;
        let dphi = dot(&g, self.d);
        Ok(Probe { alpha, f, dphi, x, g })
    }

    fn armijo(&self, p: &Probe) -> bool {
        p.f <= self.f0 + self.c1 * p.alpha * self.dphi0 && p.f < self.f0
    }

    fn curvature(&self, p: &Probe) -> bool {
        p.dphi.abs() <= -self.c2 * self.dphi0
    }

    fn run(&mut self, alpha0: f64) -> Result<Option<Probe>> {
        let mut prev = Probe {
            alpha: 0.0,
            f: self.f0,
            dphi: self.dphi0,
            x: Vec::new(),
            g: Vec::new(),
        };
        let mut alpha = alpha0;
        let mut first = true;
        while self.probes_left > 0 {
            let p = self.probe(alpha)?;
            if !self.armijo(&p) || (!first && p.f >= prev.f) {
                return self.zoom(prev, p);
            }
            if self.curvature(&p) {
                return Ok(Some(p));
            }
            if p.dphi >= 0.0 {
                return self.zoom(p, prev);
            }
            let next = cubic_min(prev.alpha, prev.f, prev.dphi, p.alpha, p.f, p.dphi)
                .filter(|t| *t > p.alpha)
                .map_or(4.0 * p.alpha, |t| t.clamp(2.0 * p.alpha, 10.0 * p.alpha));
            first = false;
            prev = p;
            alpha = next;
        }
        Ok(None)
    }

    fn zoom(&mut self, mut lo: Probe, mut hi: Probe) -> Result<Option<Probe>> {
        while self.probes_left > 0 {
            let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
            let width = b - a;
            if width <= f64::EPSILON * b.max(1e-300) {
                return Ok(None);
            }
            let guard = 0.1 * width;
            let alpha = cubic_min(lo.alpha, lo.f, lo.dphi, hi.alpha, hi.f, hi.dphi)
                .filter(|t| *t > a + guard && *t < b - guard)
                .unwrap_or(0.5 * (a + b));
            let p = self.probe(alpha)?;
            if !self.armijo(&p) || p.f >= lo.f {
                hi = p;
            } else {
                if self.curvature(&p) {
                    return Ok(Some(p));
                }
                if p.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
        Ok(None)
    }
}

/// Minimises `objective` from `x0` with L-BFGS.
pub fn minimize<O: Objective>(x0: &Image, objective: &mut O, cfg: &OptimConfig) -> Result<OptimState> {
    minimize_with(x0, objective, cfg, |_, _| Ok(()))
}

/// [`minimize`] with a callback that sees the start point (iteration 0) and
/// every accepted step, along with the objective as it stands after the
/// evaluation that produced the reported loss.
pub fn minimize_with<O, C>(x0: &Image, objective: &mut O, cfg: &OptimConfig, mut on_iter: C) -> Result<OptimState>
where
    O: Objective,
    C: FnMut(&IterationInfo<'_>, &O) -> Result<()>,
{
    cfg.validate()?;
    let (h, w, c) = x0.shape();
    let mut x = x0.as_slice().to_vec();
    let mut g = vec![0.0; x.len()];
    let mut f = objective.evaluate(&x, &mut g)?;
    check_finite(f, &g, 0)?;
    let mut evaluations = 1;
    let mut trace = vec![f];
    on_iter(
        &IterationInfo {
            iteration: 0,
            loss: f,
            seconds: 0.0,
            x: &x,
        },
        objective,
    )?;
    let mut history: VecDeque<CurvaturePair> = VecDeque::with_capacity(cfg.history);
    let mut timings = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        if norm2(&g) < cfg.grad_tol {
            termination = Termination::GradientNorm;
            break;
        }
        let started = Instant::now();
        let iteration = iterations + 1;

        let mut d = two_loop(&g, &history);
        let mut dphi0 = dot(&g, &d);
        if !(dphi0 < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            dphi0 = dot(&g, &d);
        }
        let alpha0 = if history.is_empty() { (1.0 / norm2(&g)).min(1.0) } else { 1.0 };

        let mut search = LineSearch {
            objective: &mut *objective,
            x: &x,
            d: &d,
            f0: f,
            dphi0,
            c1: cfg.c1,
            c2: cfg.c2,
            probes_left: cfg.max_probes,
            evaluations: 0,
            iteration,
        };
        let mut accepted = search.run(alpha0)?;
        evaluations += search.evaluations;
        if accepted.is_none() && !history.is_empty() {
            // Fall back to steepest descent with a fresh memory.
            history.clear();
            d = g.iter().map(|v| -v).collect();
            let mut search = LineSearch {
                objective: &mut *objective,
                x: &x,
                d: &d,
                f0: f,
                dphi0: -dot(&g, &g),
                c1: cfg.c1,
                c2: cfg.c2,
                probes_left: cfg.max_probes,
                evaluations: 0,
                iteration,
            };
            accepted = search.run((1.0 / norm2(&g)).min(1.0))?;
            evaluations += search.evaluations;
        }
        let Some(step) = accepted else {
            return Err(Error::LineSearch { iteration });
        };

        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 0.0 {
            if history.len() == cfg.history {
                history.pop_front();
            }
            history.push_back(CurvaturePair { s, y, sy });
        }

        let f_prev = f;
        let f_accepted = step.f;
        x = step.x;
        g = step.g;
        f = step.f;
        iterations = iteration;
        if objective.refresh() {
            f = objective.evaluate(&x, &mut g)?;
            evaluations += 1;
            check_finite(f, &g, iteration)?;
        }
        trace.push(f);
        let seconds = started.elapsed().as_secs_f64();
        timings.push(seconds);
        on_iter(
            &IterationInfo {
                iteration,
                loss: f,
                seconds,
                x: &x,
            },
            objective,
        )?;

        if (f_prev - f_accepted).abs() < cfg.rel_loss_tol * f_prev.abs().max(f64::MIN_POSITIVE) {
            termination = Termination::RelativeLoss;
            break;
        }
    }
    if iterations == cfg.max_iters && termination == Termination::MaxIterations && norm2(&g) < cfg.grad_tol {
        termination = Termination::GradientNorm;
    }

    Ok(OptimState {
        x: FeatureMap::from_vec(h, w, c, x)?,
        trace,
        history,
        iterations,
        evaluations,
        timings,
        termination,
    })
}

/// Worst relative error between the analytic gradient and central
/// differences with step `step`, over `probes` randomly chosen coordinates.
///
/// The relative error at a coordinate is `|a − n| / max(|a|, |n|, τ)` with
/// `τ = 1e-6 · max|∇|`, so coordinates whose gradient is negligible next to
/// the largest one are judged on an absolute scale.
pub fn gradient_check<O: Objective>(objective: &mut O, x: &Image, probes: usize, step: f64, seed: u64) -> Result<f64> {
    let n = x.len();
    let mut grad = vec![0.0; n];
    objective.evaluate(x.as_slice(), &mut grad)?;
    let scale = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = x.as_slice().to_vec();
    let mut scratch = vec![0.0; n];
    let mut worst = 0.0f64;
    for _ in 0..probes.max(1) {
        let i = rng.random_range(0..n);
        let orig = probe[i];
        probe[i] = orig + step;
        let fp = objective.evaluate(&probe, &mut scratch)?;
        probe[i] = orig - step;
        let fm = objective.evaluate(&probe, &mut scratch)?;
        probe[i] = orig;
        let numeric = (fp - fm) / (2.0 * step);
        let analytic = grad[i];
        let denom = analytic.abs().max(numeric.abs()).max(floor);
        let err = if denom == 0.0 { 0.0 } else { (analytic - numeric).abs() / denom };
        worst = worst.max(err);
    }
    Ok(worst)
}
