//! Shared fixtures and brute-force reference implementations. Nothing here
//! calls into the library's numerical kernels.
#![allow(dead_code)]

use glstyle_core::backbone::{Conv3x3, Stage};
use glstyle_core::{BackboneWeights, FeatureMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_map(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
    FeatureMap::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
}

pub fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
    FeatureMap::from_fn(h, w, 3, |_, _, _| rng.random_range(0.0..255.0))
}

fn random_conv(name: &str, i: usize, o: usize, rng: &mut ChaCha8Rng) -> Conv3x3 {
    let s = (2.0 / (9 * i) as f64).sqrt();
    let kernel = (0..9 * i * o).map(|_| rng.random_range(-s..s)).collect();
    let bias = (0..o).map(|_| rng.random_range(0.05..0.3)).collect();
    Conv3x3::new(name, i, o, kernel, bias).unwrap()
}

/// conv(3→4) · pool · conv(4→5), tapped as layers 1 and 4.
pub fn toy_backbone(seed: u64) -> BackboneWeights {
    let mut r = rng(seed);
    let stages = vec![
        Stage::Conv(random_conv("t1", 3, 4, &mut r)),
        Stage::AvgPool,
        Stage::Conv(random_conv("t2", 4, 5, &mut r)),
    ];
    BackboneWeights::from_stages(stages, [Some(0), None, None, Some(2)]).unwrap()
}

/// Direct 3×3 zero-padded convolution + ReLU, from the weight layout
/// `(ky, kx, in, out)`.
pub fn naive_conv_relu(src: &FeatureMap, conv: &Conv3x3) -> FeatureMap {
    let (h, w, ci) = src.shape();
    let co = conv.out_channels;
    FeatureMap::from_fn(h, w, co, |y, x, o| {
        let mut acc = conv.bias[o];
        for ky in 0..3 {
            for kx in 0..3 {
                let (sy, sx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                    continue;
                }
                for i in 0..ci {
                    acc += src.get(sy as usize, sx as usize, i) * conv.kernel[((ky * 3 + kx) * ci + i) * co + o];
                }
            }
        }
        acc.max(0.0)
    })
}

pub fn naive_pool(src: &FeatureMap) -> FeatureMap {
    FeatureMap::from_fn(src.height() / 2, src.width() / 2, src.channels(), |y, x, k| {
        (src.get(2 * y, 2 * x, k) + src.get(2 * y + 1, 2 * x, k) + src.get(2 * y, 2 * x + 1, k) + src.get(2 * y + 1, 2 * x + 1, k)) / 4.0
    })
}

/// 3×3 valid patches, row-major by top-left corner, `(ky, kx, c)` order.
pub fn bf_patches(fm: &FeatureMap) -> Vec<Vec<f64>> {
    let (h, w, c) = fm.shape();
    let mut out = Vec::new();
    for y in 0..h - 2 {
        for x in 0..w - 2 {
            let mut p = Vec::with_capacity(9 * c);
            for ky in 0..3 {
                for kx in 0..3 {
                    for k in 0..c {
                        p.push(fm.get(y + ky, x + kx, k));
                    }
                }
            }
            out.push(p);
        }
    }
    out
}

fn bf_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn bf_ncc(a: &[f64], b: &[f64]) -> f64 {
    let d = (bf_dot(a, a).sqrt() * bf_dot(b, b).sqrt()).max(1e-12);
    bf_dot(a, b) / d
}

/// Double-loop argmax; strict `>` keeps the lowest index on ties.
pub fn bf_match(query: &[Vec<f64>], bank: &[Vec<f64>]) -> Vec<usize> {
    query
        .iter()
        .map(|q| {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (j, b) in bank.iter().enumerate() {
                let v = bf_ncc(q, b);
                if v > best_v {
                    best_v = v;
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn bf_local_loss(s_x: &FeatureMap, s_a: &FeatureMap) -> f64 {
    let q = bf_patches(s_x);
    let b = bf_patches(s_a);
    let nn = bf_match(&q, &b);
    q.iter()
        .zip(&nn)
        .map(|(p, &j)| p.iter().zip(&b[j]).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
        .sum()
}

/// `G = R Rᵀ` with `R` the `c × hw` reshape.
pub fn bf_gram(fm: &FeatureMap) -> Vec<Vec<f64>> {
    let (h, w, c) = fm.shape();
    let mut g = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in 0..c {
            for y in 0..h {
                for x in 0..w {
                    g[i][j] += fm.get(y, x, i) * fm.get(y, x, j);
                }
            }
        }
    }
    g
}

/// Half-pixel-centre bilinear resize, one output sample at a time.
pub fn bf_bilinear(fm: &FeatureMap, th: usize, tw: usize) -> FeatureMap {
    let (h, w, c) = fm.shape();
    let coord = |t: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let s = ((t as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    FeatureMap::from_fn(th, tw, c, |y, x, k| {
        let (y0, y1, fy) = coord(y, h, th);
        let (x0, x1, fx) = coord(x, w, tw);
        let top = fm.get(y0, x0, k) * (1.0 - fx) + fm.get(y0, x1, k) * fx;
        let bot = fm.get(y1, x0, k) * (1.0 - fx) + fm.get(y1, x1, k) * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Central difference of `f` at `x` along `dir`.
pub fn directional_fd(f: &mut dyn FnMut(&FeatureMap) -> f64, x: &FeatureMap, dir: &FeatureMap, step: f64) -> f64 {
    let mut p = x.clone();
    p.add_scaled(dir, step);
    let mut m = x.clone();
    m.add_scaled(dir, -step);
    (f(&p) - f(&m)) / (2.0 * step)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let d = a.abs().max(b.abs());
    if d == 0.0 {
        0.0
    } else {
        (a - b).abs() / d
    }
}

/// Smallest eigenvalue of a symmetric matrix by cyclic Jacobi rotations.
pub fn min_eigenvalue(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).fold(f64::INFINITY, f64::min)
}
