//! The four objective terms and their weighted combination.

mod gram;
mod patch;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{FeatureMap, Image};

pub use gram::{global_style_loss, global_style_value, gram, GramMatrix};
pub use patch::{
    local_style_loss, local_style_loss_with_bank, match_patches, match_patches_exhaustive, LocalStyle, PatchSet, NCC_EPS,
};

/// `Σ (F − P)²` at the content layer and its gradient `2(F − P)`.
pub fn content_loss(f: &FeatureMap, p: &FeatureMap) -> Result<(f64, FeatureMap)> {
    f.ensure_shape(p, "content features")?;
    let mut grad = f.clone();
    grad.add_scaled(p, -1.0);
    let value = grad.dot(&grad);
    grad.scale(2.0);
    Ok((value, grad))
}

/// Sum of squared vertical and horizontal neighbour differences over all
/// channels, with its gradient.
pub fn tv_loss(img: &Image) -> (f64, Image) {
    let (h, w, c) = img.shape();
    let mut grad = FeatureMap::zeros(h, w, c);
    let mut value = 0.0;
    let src = img.as_slice();
    let g = grad.as_mut_slice();
    for y in 0..h {
        for x in 0..w {
            let o = (y * w + x) * c;
            if y + 1 < h {
                let n = o + w * c;
                for k in 0..c {
                    let d = src[n + k] - src[o + k];
                    value += d * d;
                    g[n + k] += 2.0 * d;
                    g[o + k] -= 2.0 * d;
                }
            }
            if x + 1 < w {
                let n = o + c;
                for k in 0..c {
                    let d = src[n + k] - src[o + k];
                    value += d * d;
                    g[n + k] += 2.0 * d;
                    g[o + k] -= 2.0 * d;
                }
            }
        }
    }
    (value, grad)
}

/// Weights of the content, local style, semantic, global style and
/// smoothness terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub beta1: f64,
    pub gamma: f64,
    pub sigma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 100.0,
            beta1: 10.0,
            gamma: 0.1,
            sigma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            beta1: 0.0,
            gamma: 0.0,
            sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.beta1, self.gamma, self.sigma];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(crate::Error::Config(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }
}

/// Term values of one evaluation. A term whose weight is zero is not
/// evaluated and reports 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub content: f64,
    pub local: f64,
    pub global: f64,
    pub tv: f64,
    pub total: f64,
    /// Patch assignment used for the local term, one list per fused map.
    pub matches: Vec<Vec<usize>>,
}

impl LossReport {
    /// Fills `total` from the terms.
    pub fn combine(mut self, w: &LossWeights) -> Self {
        self.total = w.alpha * self.content + w.beta * self.local + w.gamma * self.global + w.sigma * self.tv;
        self
    }

    pub const CSV_HEADER: &'static str = "iter,L,L_C,L_L,L_G,L_TV";

    /// `iter,L,L_C,L_L,L_G,L_TV`
    pub fn csv_row(&self, iter: usize) -> String {
        let mut s = String::new();
        write!(
            s,
            "{iter},{:e},{:e},{:e},{:e},{:e}",
            self.total, self.content, self.local, self.global, self.tv
        )
        .expect("string write");
        s
    }
}
