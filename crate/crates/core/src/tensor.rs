//! Dense height × width × channel arrays and the resampling operators used
//! throughout the pipeline.
//!
//! Storage is row-major HWC: element `(y, x, k)` lives at `(y * w + x) * c + k`.
//! That layout makes a 3×3 neighbourhood flatten to `(ky, kx, k)` order, which
//! is the same order convolution kernels and neural patches use.

use crate::error::{Error, Result};

/// An `h × w × c` array of reals.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

/// An RGB image is a three-channel feature map with nominal range `[0, 255]`.
pub type Image = FeatureMap;

impl FeatureMap {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn filled(h: usize, w: usize, c: usize, value: f64) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![value; h * w * c],
        }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::Shape(format!(
                "buffer of {} values cannot hold a {h}x{w}x{c} map",
                data.len()
            )));
        }
        Ok(Self { h, w, c, data })
    }

    pub fn from_fn(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                for k in 0..c {
                    data.push(f(y, x, k));
                }
            }
        }
        Self { h, w, c, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.c
    }

    /// `(h, w, c)`.
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, k: usize) -> f64 {
        self.data[(y * self.w + x) * self.c + k]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, k: usize, v: f64) {
        self.data[(y * self.w + x) * self.c + k] = v;
    }

    /// The `c` channel values at one pixel.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let o = (y * self.w + x) * self.c;
        &self.data[o..o + self.c]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let o = (y * self.w + x) * self.c;
        &mut self.data[o..o + self.c]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_shape(&self, other: &FeatureMap, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn dot(&self, other: &FeatureMap) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &FeatureMap, s: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMap {
        FeatureMap {
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Concatenates maps of equal spatial size along the channel axis.
    pub fn concat_channels(maps: &[&FeatureMap]) -> Result<FeatureMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Shape("concatenation of zero maps".into()))?;
        let (h, w) = (first.h, first.w);
        if let Some(m) = maps.iter().find(|m| m.h != h || m.w != w) {
            return Err(Error::Shape(format!(
                "cannot concatenate {h}x{w} with {}x{}",
                m.h, m.w
            )));
        }
        let c: usize = maps.iter().map(|m| m.c).sum();
        let mut data = Vec::with_capacity(h * w * c);
        for p in 0..h * w {
            for m in maps {
                data.extend_from_slice(&m.data[p * m.c..(p + 1) * m.c]);
            }
        }
        Ok(FeatureMap { h, w, c, data })
    }

    /// Copies channels `start..start + len` into a new map.
    pub fn slice_channels(&self, start: usize, len: usize) -> FeatureMap {
        assert!(start + len <= self.c, "channel slice out of range");
        let mut data = Vec::with_capacity(self.pixels() * len);
        for p in 0..self.pixels() {
            let o = p * self.c + start;
            data.extend_from_slice(&self.data[o..o + len]);
        }
        FeatureMap {
            h: self.h,
            w: self.w,
            c: len,
            data,
        }
    }

    /// Adds `src` into channels `start..start + src.c` of `self`.
    pub fn accumulate_channels(&mut self, start: usize, src: &FeatureMap) {
        assert_eq!((self.h, self.w), (src.h, src.w));
        assert!(start + src.c <= self.c);
        for p in 0..self.pixels() {
            let dst = &mut self.data[p * self.c + start..p * self.c + start + src.c];
            for (d, s) in dst.iter_mut().zip(&src.data[p * src.c..(p + 1) * src.c]) {
                *d += s;
            }
        }
    }

    /// Clamps every value into `[lo, hi]`.
    pub fn clamped(&self, lo: f64, hi: f64) -> FeatureMap {
        self.map(|v| v.clamp(lo, hi))
    }
}

/// One output coordinate's two source taps and the weight of the second.
#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f64,
}

fn bilinear_taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|t| {
            let s = ((t as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            Tap {
                i0,
                i1,
                frac: s - i0 as f64,
            }
        })
        .collect()
}

fn check_target(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::Shape(format!("resize target {h}x{w} has a zero dimension")));
    }
    Ok(())
}

/// Bilinear resampling with half-pixel centres and edge clamping; the source
/// coordinate of output index `t` is `(t + 0.5) * in / out - 0.5`.
pub fn resize_bilinear(fm: &FeatureMap, target_h: usize, target_w: usize) -> Result<FeatureMap> {
    check_target(target_h, target_w)?;
    if fm.is_empty() {
        return Err(Error::Shape("cannot resize an empty map".into()));
    }
    if (target_h, target_w) == (fm.h, fm.w) {
        return Ok(fm.clone());
    }
    let ty = bilinear_taps(fm.h, target_h);
    let tx = bilinear_taps(fm.w, target_w);
    let c = fm.c;
    let mut out = FeatureMap::zeros(target_h, target_w, c);
    for (y, ry) in ty.iter().enumerate() {
        for (x, rx) in tx.iter().enumerate() {
            let w00 = (1.0 - ry.frac) * (1.0 - rx.frac);
            let w01 = (1.0 - ry.frac) * rx.frac;
            let w10 = ry.frac * (1.0 - rx.frac);
            let w11 = ry.frac * rx.frac;
            let p00 = fm.pixel(ry.i0, rx.i0);
            let p01 = fm.pixel(ry.i0, rx.i1);
            let p10 = fm.pixel(ry.i1, rx.i0);
            let p11 = fm.pixel(ry.i1, rx.i1);
            let o = out.pixel_mut(y, x);
            for k in 0..c {
                o[k] = w00 * p00[k] + w01 * p01[k] + w10 * p10[k] + w11 * p11[k];
            }
        }
    }
    Ok(out)
}

/// Transpose of [`resize_bilinear`]: maps a cotangent on the resized grid back
/// onto the `src_h × src_w` grid.
pub fn resize_bilinear_adjoint(grad: &FeatureMap, src_h: usize, src_w: usize) -> Result<FeatureMap> {
    check_target(src_h, src_w)?;
    if (src_h, src_w) == (grad.h, grad.w) {
        return Ok(grad.clone());
    }
    let ty = bilinear_taps(src_h, grad.h);
    let tx = bilinear_taps(src_w, grad.w);
    let c = grad.c;
    let mut out = FeatureMap::zeros(src_h, src_w, c);
    for (y, ry) in ty.iter().enumerate() {
        for (x, rx) in tx.iter().enumerate() {
            let g = grad.pixel(y, x);
            let taps = [
                (ry.i0, rx.i0, (1.0 - ry.frac) * (1.0 - rx.frac)),
                (ry.i0, rx.i1, (1.0 - ry.frac) * rx.frac),
                (ry.i1, rx.i0, ry.frac * (1.0 - rx.frac)),
                (ry.i1, rx.i1, ry.frac * rx.frac),
            ];
            for (sy, sx, wgt) in taps {
                if wgt == 0.0 {
                    continue;
                }
                let o = out.pixel_mut(sy, sx);
                for k in 0..c {
                    o[k] += wgt * g[k];
                }
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour resampling (pixel-centre aligned). Used for categorical
/// data such as semantic masks.
pub fn resize_nearest(fm: &FeatureMap, target_h: usize, target_w: usize) -> Result<FeatureMap> {
    check_target(target_h, target_w)?;
    let pick = |src: usize, dst: usize, t: usize| -> usize {
        (((t as f64 + 0.5) * src as f64 / dst as f64).floor() as usize).min(src - 1)
    };
    let mut out = FeatureMap::zeros(target_h, target_w, fm.c);
    for y in 0..target_h {
        let sy = pick(fm.h, target_h, y);
        for x in 0..target_w {
            let sx = pick(fm.w, target_w, x);
            out.pixel_mut(y, x).copy_from_slice(fm.pixel(sy, sx));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize_is_exact() {
        let fm = FeatureMap::from_fn(5, 7, 2, |y, x, k| (y * 31 + x * 7 + k) as f64 * 0.37);
        assert_eq!(resize_bilinear(&fm, 5, 7).unwrap(), fm);
    }

    #[test]
    fn two_by_two_to_one_averages() {
        let fm = FeatureMap::from_vec(2, 2, 1, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let r = resize_bilinear(&fm, 1, 1).unwrap();
        assert_eq!(r.as_slice(), &[4.0]);
    }

    #[test]
    fn constant_stays_constant() {
        let fm = FeatureMap::filled(9, 13, 3, 2.5);
        for (h, w) in [(4, 6), (1, 1), (9, 2), (20, 30)] {
            let r = resize_bilinear(&fm, h, w).unwrap();
            assert!(r.as_slice().iter().all(|&v| (v - 2.5).abs() < 1e-12));
        }
    }

    #[test]
    fn zero_target_rejected() {
        let fm = FeatureMap::zeros(4, 4, 1);
        assert!(resize_bilinear(&fm, 0, 2).is_err());
        assert!(resize_nearest(&fm, 2, 0).is_err());
    }

    #[test]
    fn adjoint_matches_dense_transpose() {
        let src = FeatureMap::from_fn(6, 5, 2, |y, x, k| ((y * 5 + x) as f64).sin() + k as f64);
        let g = FeatureMap::from_fn(3, 4, 2, |y, x, k| ((y * 4 + x + k) as f64).cos());
        let fwd = resize_bilinear(&src, 3, 4).unwrap();
        let adj = resize_bilinear_adjoint(&g, 6, 5).unwrap();
        assert!((fwd.dot(&g) - src.dot(&adj)).abs() < 1e-12);
    }

    #[test]
    fn nearest_halves_by_picking() {
        let fm = FeatureMap::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as f64);
        let r = resize_nearest(&fm, 2, 2).unwrap();
        assert_eq!(r.as_slice(), &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let a = FeatureMap::from_fn(2, 3, 2, |y, x, k| (y + x + k) as f64);
        let b = FeatureMap::from_fn(2, 3, 1, |y, x, _| (10 * y + x) as f64);
        let cat = FeatureMap::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.channels(), 3);
        assert_eq!(cat.slice_channels(0, 2), a);
        assert_eq!(cat.slice_channels(2, 1), b);
    }
}
