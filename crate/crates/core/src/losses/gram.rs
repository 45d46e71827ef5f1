//! Channel correlation (Gram) statistics and the global style loss.

use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::tensor::FeatureMap;

/// `G = R·Rᵀ` for the `N × M` reshaping `R` of a map (`N` channels, `M`
/// positions).
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl GramMatrix {
    pub fn from_raw(n: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(format!("{} values for a {n}x{n} Gram matrix", data.len())));
        }
        Ok(Self { n, m, data })
    }

    /// Channel count `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Spatial positions `M` of the source map.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }
}

pub fn gram(ff: &FeatureMap) -> GramMatrix {
    let (n, m) = (ff.channels(), ff.pixels());
    let mut data = vec![0.0; n * n];
    // The HWC buffer is Rᵀ (M × N); G = (Rᵀ)ᵀ · Rᵀ.
    gemm(n, m, n, ff.as_slice(), (1, n as isize), ff.as_slice(), (n as isize, 1), &mut data);
    // Mirror the upper triangle so G is exactly symmetric.
    for i in 0..n {
        for j in i + 1..n {
            data[j * n + i] = data[i * n + j];
        }
    }
    GramMatrix { n, m, data }
}

/// `1/(4N²) Σ (G_a/M_a − G_x/M_x)²`, which is `1/(4N²M²) Σ (G_a − G_x)²` when
/// both maps have `M` positions.
pub fn global_style_value(g_a: &GramMatrix, g_x: &GramMatrix) -> Result<f64> {
    if g_a.n != g_x.n {
        return Err(Error::Shape(format!("Gram sizes differ: {} vs {}", g_a.n, g_x.n)));
    }
    let (ma, mx) = (g_a.m.max(1) as f64, g_x.m.max(1) as f64);
    let n2 = (g_a.n * g_a.n) as f64;
    let sum: f64 = g_a
        .data
        .iter()
        .zip(&g_x.data)
        .map(|(a, x)| {
            let d = a / ma - x / mx;
            d * d
        })
        .sum();
    Ok(sum / (4.0 * n2))
}

/// Global style loss of `ff_x` against the target statistics `g_a`, with its
/// gradient with respect to `ff_x`.
pub fn global_style_loss(g_a: &GramMatrix, ff_x: &FeatureMap) -> Result<(f64, FeatureMap)> {
    let g_x = gram(ff_x);
    let value = global_style_value(g_a, &g_x)?;
    let (n, mx) = (g_x.n, g_x.m.max(1) as f64);
    let ma = g_a.m.max(1) as f64;
    // dL/dRᵀ = Rᵀ · (Ĝ_x − Ĝ_a) / (N² M_x)
    let coeff = 1.0 / ((n * n) as f64 * mx);
    let diff: Vec<f64> = g_x
        .data
        .iter()
        .zip(&g_a.data)
        .map(|(x, a)| coeff * (x / mx - a / ma))
        .collect();
    let mut grad = FeatureMap::zeros(ff_x.height(), ff_x.width(), n);
    gemm(ff_x.pixels(), n, n, ff_x.as_slice(), (n as isize, 1), &diff, (n as isize, 1), grad.as_mut_slice());
    Ok((value, grad))
}
