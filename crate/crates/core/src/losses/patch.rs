//! Neural patches, normalized cross-correlation matching and the local
//! (patch) style loss.

use crate::error::{Error, Result};
use crate::linalg::{dot, gemm, norm};
use crate::tensor::FeatureMap;

/// Guard on the NCC denominator.
pub const NCC_EPS: f64 = 1e-12;

/// Score-matrix entries materialised per GEMM block.
const SCORE_BUDGET: usize = 1 << 21;

/// All 3×3 patches of a map (stride 1, no padding), flattened in
/// `(ky, kx, channel)` order, row-major by top-left corner.
#[derive(Clone, Debug)]
pub struct PatchSet {
    channels: usize,
    grid_w: usize,
    grid_h: usize,
    data: Vec<f64>,
    norms: Vec<f64>,
}

impl PatchSet {
    pub fn extract(fm: &FeatureMap) -> Result<Self> {
        let (h, w, c) = fm.shape();
        if h < 3 || w < 3 || c == 0 {
            return Err(Error::Matching(format!("{h}x{w}x{c} map is too small for 3x3 patches")));
        }
        let (gh, gw) = (h - 2, w - 2);
        let dim = 9 * c;
        let mut data = Vec::with_capacity(gh * gw * dim);
        for y in 0..gh {
            for x in 0..gw {
                for ky in 0..3 {
                    let row = &fm.as_slice()[((y + ky) * w + x) * c..((y + ky) * w + x + 3) * c];
                    data.extend_from_slice(row);
                }
            }
        }
        let norms = data.chunks_exact(dim).map(norm).collect();
        Ok(Self {
            channels: c,
            grid_w: gw,
            grid_h: gh,
            data,
            norms,
        })
    }

    /// Builds a set directly from flat vectors (each of length `dim`).
    pub fn from_vectors(dim: usize, vectors: &[Vec<f64>]) -> Result<Self> {
        if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::Matching("patch vectors must share a nonzero dimension".into()));
        }
        let data: Vec<f64> = vectors.iter().flatten().copied().collect();
        let norms = data.chunks_exact(dim).map(norm).collect();
        Ok(Self {
            channels: 0,
            grid_w: vectors.len(),
            grid_h: 1,
            data,
            norms,
        })
    }

    /// Number of patches `m`.
    #[inline]
    pub fn len(&self) -> usize {
        self.norms.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    /// Length of one flattened patch.
    #[inline]
    pub fn dim(&self) -> usize {
        if self.norms.is_empty() {
            0
        } else {
            self.data.len() / self.norms.len()
        }
    }

    /// Channels of the source map (0 for sets built from raw vectors).
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(rows, cols)` of patch top-left corners.
    pub fn grid(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }

    #[inline]
    pub fn patch(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.data[i * d..(i + 1) * d]
    }

    #[inline]
    pub fn norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// Normalized cross-correlation between query patch `i` and bank patch `j`.
    pub fn ncc(&self, i: usize, bank: &PatchSet, j: usize) -> f64 {
        ncc_value(self.patch(i), self.norm(i), bank.patch(j), bank.norm(j))
    }
}

#[inline]
fn ncc_value(q: &[f64], nq: f64, b: &[f64], nb: f64) -> f64 {
    dot(q, b) / (nq * nb).max(NCC_EPS)
}

fn check_compatible(query: &PatchSet, bank: &PatchSet) -> Result<()> {
    if bank.is_empty() {
        return Err(Error::Matching("empty patch bank".into()));
    }
    if query.dim() != bank.dim() && !query.is_empty() {
        return Err(Error::Matching(format!(
            "patch dimension mismatch: query {} vs bank {}",
            query.dim(),
            bank.dim()
        )));
    }
    Ok(())
}

/// For every query patch, the index of the bank patch with the largest
/// normalized cross-correlation; ties go to the lowest index.
///
/// Scores are screened with one GEMM against unit-normalised bank patches.
/// Every bank patch whose screened score lies within the rounding bound of
/// the row maximum is then rescored with the sequential reference formula,
/// so the result is exactly that of the exhaustive double loop.
pub fn match_patches(query: &PatchSet, bank: &PatchSet) -> Result<Vec<usize>> {
    check_compatible(query, bank)?;
    let (m, ma, d) = (query.len(), bank.len(), bank.dim());
    let mut unit = bank.data.clone();
    for (row, &n) in unit.chunks_exact_mut(d).zip(&bank.norms) {
        let s = if n > 0.0 { 1.0 / n } else { 0.0 };
        row.iter_mut().for_each(|v| *v *= s);
    }

    let rel_tol = 4.0 * (d as f64 + 8.0) * f64::EPSILON;
    let block = (SCORE_BUDGET / ma).clamp(1, m.max(1));
    let mut scores = vec![0.0; block * ma];
    let mut out = Vec::with_capacity(m);
    let mut q0 = 0;
    while q0 < m {
        let q1 = (q0 + block).min(m);
        let rows = q1 - q0;
        gemm(
            rows,
            d,
            ma,
            &query.data[q0 * d..q1 * d],
            (d as isize, 1),
            &unit,
            (1, d as isize),
            &mut scores[..rows * ma],
        );
        for (r, row) in scores[..rows * ma].chunks_exact(ma).enumerate() {
            let i = q0 + r;
            let nq = query.norms[i];
            if nq == 0.0 {
                out.push(0);
                continue;
            }
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let floor = best - 2.0 * rel_tol * nq - f64::MIN_POSITIVE;
            let q = query.patch(i);
            let mut arg = usize::MAX;
            let mut arg_val = f64::NEG_INFINITY;
            for (j, &s) in row.iter().enumerate() {
                // Guarded denominators do not scale like the screen, so they
                // are always rescored.
                if s >= floor || nq * bank.norms[j] < NCC_EPS {
                    let v = ncc_value(q, nq, bank.patch(j), bank.norms[j]);
                    if v > arg_val {
                        arg_val = v;
                        arg = j;
                    }
                }
            }
            out.push(arg);
        }
        q0 = q1;
    }
    Ok(out)
}

/// Exhaustive reference matcher (same formula, no screening).
pub fn match_patches_exhaustive(query: &PatchSet, bank: &PatchSet) -> Result<Vec<usize>> {
    check_compatible(query, bank)?;
    Ok((0..query.len())
        .map(|i| {
            let mut arg = 0;
            let mut arg_val = f64::NEG_INFINITY;
            for j in 0..bank.len() {
                let v = query.ncc(i, bank, j);
                if v > arg_val {
                    arg_val = v;
                    arg = j;
                }
            }
            arg
        })
        .collect())
}

/// Value, gradient and assignment of the local style loss.
#[derive(Clone, Debug)]
pub struct LocalStyle {
    pub value: f64,
    /// Gradient with respect to the query map (zero on masked-out channels).
    pub grad: FeatureMap,
    pub matches: Vec<usize>,
}

/// `Σᵢ ‖Φᵢ(S_x) − Φ_NN(i)(S_a)‖²` against a prebuilt bank.
///
/// `matches` reuses a frozen assignment instead of recomputing it.
/// `feature_mask` (per channel of `s_x`) zeroes gradient on constant channels.
pub fn local_style_loss_with_bank(
    s_x: &FeatureMap,
    bank: &PatchSet,
    matches: Option<Vec<usize>>,
    feature_mask: Option<&[bool]>,
) -> Result<LocalStyle> {
    let query = PatchSet::extract(s_x)?;
    let matches = match matches {
        Some(m) if m.len() == query.len() && m.iter().all(|&j| j < bank.len()) => m,
        Some(m) => {
            return Err(Error::Matching(format!(
                "frozen assignment of {} entries does not fit {} queries / {} bank patches",
                m.len(),
                query.len(),
                bank.len()
            )))
        }
        None => match_patches(&query, bank)?,
    };
    check_compatible(&query, bank)?;

    let (h, w, c) = s_x.shape();
    let (gh, gw) = query.grid();
    let mut grad = FeatureMap::zeros(h, w, c);
    let mut value = 0.0;
    let mut diff = vec![0.0; query.dim()];
    for (i, &j) in matches.iter().enumerate() {
        for ((d, a), b) in diff.iter_mut().zip(query.patch(i)).zip(bank.patch(j)) {
            *d = a - b;
        }
        value += dot(&diff, &diff);
        let (y, x) = (i / gw, i % gw);
        debug_assert!(y < gh);
        for ky in 0..3 {
            let dst = &mut grad.as_mut_slice()[((y + ky) * w + x) * c..((y + ky) * w + x + 3) * c];
            for (g, d) in dst.iter_mut().zip(&diff[ky * 3 * c..(ky + 1) * 3 * c]) {
                *g += 2.0 * d;
            }
        }
    }
    if let Some(mask) = feature_mask {
        if mask.len() != c {
            return Err(Error::Shape(format!("feature mask of {} channels for a {c}-channel map", mask.len())));
        }
        for px in grad.as_mut_slice().chunks_exact_mut(c) {
            for (g, &keep) in px.iter_mut().zip(mask) {
                if !keep {
                    *g = 0.0;
                }
            }
        }
    }
    Ok(LocalStyle { value, grad, matches })
}

/// Local style loss between two maps of equal channel count.
pub fn local_style_loss(s_x: &FeatureMap, s_a: &FeatureMap, feature_mask: Option<&[bool]>) -> Result<LocalStyle> {
    if s_x.channels() != s_a.channels() {
        return Err(Error::Matching(format!(
            "channel mismatch: {} vs {}",
            s_x.channels(),
            s_a.channels()
        )));
    }
    let bank = PatchSet::extract(s_a)?;
    local_style_loss_with_bank(s_x, &bank, None, feature_mask)
}
