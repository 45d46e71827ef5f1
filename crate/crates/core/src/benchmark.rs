//! Per-scheme cost measurement: fused map sizes, value counts and mean time
//! per objective evaluation with the global term disabled.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::BackboneWeights;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::pyramid::{fused_pixel_count, AggregationScheme, SemanticAttach};
use crate::semantic::{encode_semantic, Palette};
use crate::tensor::{FeatureMap, Image};
use crate::transfer::{Targets, TransferObjective, TransferSettings};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub scheme: String,
    /// `(h, w, c)` of each fused map.
    pub shapes: Vec<(usize, usize, usize)>,
    pub pixels: usize,
    pub mean_iter_seconds: f64,
}

pub const CSV_HEADER: &str = "scheme,height,width,channels,pixels,mean_iter_seconds";

impl BenchRow {
    /// Multi-map schemes join their per-map sizes with `+`.
    pub fn csv_row(&self) -> String {
        let join = |f: fn(&(usize, usize, usize)) -> usize| {
            self.shapes.iter().map(|s| f(s).to_string()).collect::<Vec<_>>().join("+")
        };
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{:.6}",
            self.scheme,
            join(|s| s.0),
            join(|s| s.1),
            join(|s| s.2),
            self.pixels,
            self.mean_iter_seconds
        )
        .expect("string write");
        s
    }
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// A smooth seeded test photo: a few random sinusoids per channel.
pub fn synthetic_photo(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<[f64; 4]> = (0..9)
        .map(|_| {
            [
                rng.random_range(0.5..6.0),
                rng.random_range(0.5..6.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(10.0..40.0),
            ]
        })
        .collect();
    FeatureMap::from_fn(h, w, 3, |y, x, k| {
        let (u, v) = (y as f64 / h as f64, x as f64 / w as f64);
        let s: f64 = waves[k * 3..k * 3 + 3]
            .iter()
            .map(|[fy, fx, ph, amp]| amp * (std::f64::consts::TAU * (fy * u + fx * v) + ph).sin())
            .sum();
        (127.5 + s).clamp(0.0, 255.0)
    })
}

/// `regions` horizontal bands, each a distinct colour, as an RGB image.
pub fn banded_semantic_image(h: usize, w: usize, regions: usize) -> Image {
    FeatureMap::from_fn(h, w, 3, |y, _, k| {
        let band = (y * regions / h) as f64;
        match k {
            0 => band * 40.0,
            1 => 255.0 - band * 40.0,
            _ => 128.0,
        }
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Times `iters` full evaluations (fresh patch matching, forward, adjoint)
/// of the objective with `γ = 0` for each scheme, on seeded synthetic inputs
/// of size `height × width` carrying `sem_channels` semantic regions.
pub fn run_benchmark(
    net: &BackboneWeights,
    height: usize,
    width: usize,
    sem_channels: usize,
    schemes: &[AggregationScheme],
    iters: usize,
) -> Result<Vec<BenchRow>> {
    if !height.is_multiple_of(8) || !width.is_multiple_of(8) {
        return Err(Error::Unpadded { height, width });
    }
    if iters == 0 {
        return Err(Error::Config("benchmark needs at least one iteration".into()));
    }
    let content = synthetic_photo(height, width, 1);
    let style = synthetic_photo(height, width, 2);
    let (content_sem, style_sem) = if sem_channels > 0 {
        let img = banded_semantic_image(height, width, sem_channels);
        let flipped = FeatureMap::from_fn(height, width, 3, |y, x, k| img.get(height - 1 - y, x, k));
        let palette = Palette::from_images(&[&img])?;
        (Some(encode_semantic(&img, &palette)?), Some(encode_semantic(&flipped, &palette)?))
    } else {
        (None, None)
    };
    let weights = LossWeights {
        gamma: 0.0,
        ..LossWeights::default()
    };

    let mut rows = Vec::with_capacity(schemes.len());
    for scheme in schemes {
        let settings = TransferSettings {
            scheme: scheme.clone(),
            weights,
            attach: SemanticAttach::PerLayer,
            match_every: 1,
        };
        let targets = Targets::precompute(net, &content, &style, content_sem.as_ref(), style_sem.as_ref(), &settings)?;
        let mut objective = TransferObjective::new(net, &targets, &settings, content.shape());
        // One untimed warm-up evaluation.
        objective.evaluate_image(&content)?;
        let mut total = 0.0;
        for _ in 0..iters {
            objective.invalidate_matches();
            let t = Instant::now();
            objective.evaluate_image(&content)?;
            total += t.elapsed().as_secs_f64();
        }
        rows.push(BenchRow {
            scheme: scheme.name().to_string(),
            shapes: scheme.fused_shapes(height, width, sem_channels, SemanticAttach::PerLayer),
            pixels: fused_pixel_count(scheme, height, width, sem_channels),
            mean_iter_seconds: total / iters as f64,
        });
    }
    Ok(rows)
}
