//! VGG19-shaped convolutional backbone: weight loading, forward feature
//! extraction at `conv1_1 … conv4_1`, and the adjoint pass back to pixels.
//!
//! Convolutions are 3×3, stride 1, zero-padded by one pixel, followed by a
//! rectifier. Every pooling stage is a 2×2 average pool with stride 2 (the
//! max pools of the original network are replaced).
//!
//! Convolutions are lowered to `im2col` + GEMM. Kernels are stored as
//! `(3, 3, in, out)` which, flattened row-major, is exactly the
//! `[9·in, out]` right-hand operand for HWC patch rows.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::tensor::{FeatureMap, Image};

/// Per-channel RGB means subtracted before the first convolution.
pub const CHANNEL_MEANS: [f64; 3] = [123.68, 116.779, 103.939];

/// Output widths of `conv1_1 … conv4_1`.
pub const LAYER_CHANNELS: [usize; 4] = [64, 128, 256, 512];

/// The VGG19 prefix through `conv4_1`: `(name, in, out)`, with a pool after
/// `conv1_2`, `conv2_2` and `conv3_4`.
pub const VGG19_PREFIX: [(&str, usize, usize); 9] = [
    ("conv1_1", 3, 64),
    ("conv1_2", 64, 64),
    ("conv2_1", 64, 128),
    ("conv2_2", 128, 128),
    ("conv3_1", 128, 256),
    ("conv3_2", 256, 256),
    ("conv3_3", 256, 256),
    ("conv3_4", 256, 256),
    ("conv4_1", 256, 512),
];

const POOL_AFTER: [&str; 3] = ["conv1_2", "conv2_2", "conv3_4"];

/// Rows of `im2col` buffer materialised at once are capped at this many values.
const IM2COL_BUDGET: usize = 1 << 22;

/// Identifies `conv{i}_1`, `i ∈ {1, 2, 3, 4}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LayerId(u8);

impl LayerId {
    pub const ALL: [LayerId; 4] = [LayerId(1), LayerId(2), LayerId(3), LayerId(4)];
    pub const CONTENT: LayerId = LayerId(4);

    pub fn new(i: u8) -> Result<Self> {
        if (1..=4).contains(&i) {
            Ok(LayerId(i))
        } else {
            Err(Error::LayerId(i))
        }
    }

    #[inline]
    pub fn get(self) -> u8 {
        self.0
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    /// Channel width of this layer in VGG19.
    pub fn vgg_channels(self) -> usize {
        LAYER_CHANNELS[self.index()]
    }

    /// Spatial size of this layer's map in VGG19 for an `h × w` input
    /// (exact when `8 | h` and `8 | w`).
    pub fn vgg_spatial(self, h: usize, w: usize) -> (usize, usize) {
        let d = 1usize << self.index();
        (h / d, w / d)
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "conv{}_1", self.0)
    }
}

/// A 3×3 convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv3x3 {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `(3, 3, in, out)` row-major.
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3x3 {
    pub fn new(name: impl Into<String>, in_channels: usize, out_channels: usize, kernel: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if kernel.len() != 9 * in_channels * out_channels {
            return Err(Error::EntryShape {
                entry: format!("{name}.weight"),
                expected: vec![3, 3, in_channels, out_channels],
                actual: vec![kernel.len()],
            });
        }
        if bias.len() != out_channels {
            return Err(Error::EntryShape {
                entry: format!("{name}.bias"),
                expected: vec![out_channels],
                actual: vec![bias.len()],
            });
        }
        Ok(Self {
            name,
            in_channels,
            out_channels,
            kernel,
            bias,
        })
    }
}

#[derive(Clone, Debug)]
pub enum Stage {
    /// Convolution followed by the rectifier.
    Conv(Conv3x3),
    /// 2×2 average pool, stride 2.
    AvgPool,
}

/// An immutable stack of convolution and pooling stages with up to four tap
/// points standing in for `conv1_1 … conv4_1`.
#[derive(Clone, Debug)]
pub struct BackboneWeights {
    stages: Vec<Stage>,
    taps: [Option<usize>; 4],
}

impl BackboneWeights {
    /// Builds an arbitrary stack. `taps[i]` names the stage whose rectified
    /// output is exposed as layer `i + 1`; it must be a convolution.
    pub fn from_stages(stages: Vec<Stage>, taps: [Option<usize>; 4]) -> Result<Self> {
        let mut channels = 3;
        for stage in &stages {
            if let Stage::Conv(conv) = stage {
                if conv.in_channels != channels {
                    return Err(Error::EntryShape {
                        entry: format!("{}.weight", conv.name),
                        expected: vec![3, 3, channels, conv.out_channels],
                        actual: vec![3, 3, conv.in_channels, conv.out_channels],
                    });
                }
                channels = conv.out_channels;
            }
        }
        for (i, tap) in taps.iter().enumerate() {
            if let Some(s) = *tap {
                if !matches!(stages.get(s), Some(Stage::Conv(_))) {
                    return Err(Error::Config(format!(
                        "tap for conv{}_1 points at stage {s}, which is not a convolution",
                        i + 1
                    )));
                }
            }
        }
        Ok(Self { stages, taps })
    }

    /// Assembles the VGG19 prefix from its nine convolutions in order.
    pub fn vgg19(convs: Vec<Conv3x3>) -> Result<Self> {
        if convs.len() != VGG19_PREFIX.len() {
            return Err(Error::Archive(format!(
                "expected {} convolutions, got {}",
                VGG19_PREFIX.len(),
                convs.len()
            )));
        }
        let mut stages = Vec::with_capacity(12);
        let mut taps = [None; 4];
        for (conv, (name, in_c, out_c)) in convs.into_iter().zip(VGG19_PREFIX) {
            if conv.name != name || conv.in_channels != in_c || conv.out_channels != out_c {
                return Err(Error::EntryShape {
                    entry: format!("{}.weight", conv.name),
                    expected: vec![3, 3, in_c, out_c],
                    actual: vec![3, 3, conv.in_channels, conv.out_channels],
                });
            }
            if let Some(i) = name.strip_suffix("_1").and_then(|s| s.strip_prefix("conv")) {
                let layer: usize = i.parse().expect("static layer table");
                taps[layer - 1] = Some(stages.len());
            }
            stages.push(Stage::Conv(conv));
            if POOL_AFTER.contains(&name) {
                stages.push(Stage::AvgPool);
            }
        }
        Self::from_stages(stages, taps)
    }

    /// A VGG19-shaped network with He-normal kernels and zero biases drawn
    /// from a seeded generator. Useful wherever only the arithmetic shape of
    /// the network matters (timing, plumbing tests).
    pub fn random_vgg19(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = VGG19_PREFIX
            .iter()
            .map(|&(name, in_c, out_c)| {
                let std = (2.0 / (9 * in_c) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let kernel = (0..9 * in_c * out_c).map(|_| normal.sample(&mut rng)).collect();
                Conv3x3::new(name, in_c, out_c, kernel, vec![0.0; out_c]).expect("consistent sizes")
            })
            .collect();
        Self::vgg19(convs).expect("static layer table")
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// Whether layer `id` is exposed by this network.
    pub fn has_layer(&self, id: LayerId) -> bool {
        self.taps[id.index()].is_some()
    }

    pub fn layer_channels(&self, id: LayerId) -> Option<usize> {
        self.taps[id.index()].map(|s| match &self.stages[s] {
            Stage::Conv(c) => c.out_channels,
            Stage::AvgPool => unreachable!("taps are validated to be convolutions"),
        })
    }

    fn conv(&self, name: &str) -> Option<&Conv3x3> {
        self.stages.iter().find_map(|s| match s {
            Stage::Conv(c) if c.name == name => Some(c),
            _ => None,
        })
    }

    /// Reads a named-tensor archive (safetensors layout: little-endian f32
    /// payloads behind a JSON manifest) holding `convK_J.weight` with shape
    /// `(3, 3, in, out)` and `convK_J.bias` with shape `(out)`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_archive_bytes(&bytes)
    }

    pub fn from_archive_bytes(bytes: &[u8]) -> Result<Self> {
        let archive = SafeTensors::deserialize(bytes).map_err(|e| Error::Archive(e.to_string()))?;
        let mut convs = Vec::with_capacity(VGG19_PREFIX.len());
        for &(name, in_c, out_c) in &VGG19_PREFIX {
            let kernel = read_entry(&archive, &format!("{name}.weight"), &[3, 3, in_c, out_c])?;
            let bias = read_entry(&archive, &format!("{name}.bias"), &[out_c])?;
            convs.push(Conv3x3::new(name, in_c, out_c, kernel, bias)?);
        }
        Self::vgg19(convs)
    }

    /// Serialises the VGG19 prefix in the archive layout read by [`Self::load`].
    pub fn to_archive_bytes(&self) -> Result<Vec<u8>> {
        let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        for &(name, in_c, out_c) in &VGG19_PREFIX {
            let conv = self
                .conv(name)
                .ok_or_else(|| Error::MissingEntry(format!("{name}.weight")))?;
            buffers.push((format!("{name}.weight"), vec![3, 3, in_c, out_c], f32_le(&conv.kernel)));
            buffers.push((format!("{name}.bias"), vec![out_c], f32_le(&conv.bias)));
        }
        let views = buffers
            .iter()
            .map(|(n, shape, data)| {
                TensorView::new(Dtype::F32, shape.clone(), data)
                    .map(|v| (n.clone(), v))
                    .map_err(|e| Error::Archive(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        safetensors::serialize(views, None).map_err(|e| Error::Archive(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_archive_bytes()?).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn f32_le(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn read_entry(archive: &SafeTensors<'_>, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let view = archive
        .tensor(name)
        .map_err(|_| Error::MissingEntry(name.to_string()))?;
    if view.shape() != shape {
        return Err(Error::EntryShape {
            entry: name.to_string(),
            expected: shape.to_vec(),
            actual: view.shape().to_vec(),
        });
    }
    if view.dtype() != Dtype::F32 {
        return Err(Error::Archive(format!("{name}: expected F32, found {:?}", view.dtype())));
    }
    Ok(view
        .data()
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect())
}

/// Loads and validates a weight archive.
pub fn load_weights(archive_path: impl AsRef<Path>) -> Result<BackboneWeights> {
    BackboneWeights::load(archive_path)
}

/// Subtracts [`CHANNEL_MEANS`] from every pixel. No scaling, no reordering.
pub fn preprocess(img: &Image) -> FeatureMap {
    assert_eq!(img.channels(), 3, "preprocess expects an RGB image");
    let mut out = img.clone();
    for px in out.as_mut_slice().chunks_exact_mut(3) {
        for (v, m) in px.iter_mut().zip(CHANNEL_MEANS) {
            *v -= m;
        }
    }
    out
}

fn check_padded(img: &Image) -> Result<()> {
    if !img.height().is_multiple_of(8) || !img.width().is_multiple_of(8) || img.is_empty() {
        return Err(Error::Unpadded {
            height: img.height(),
            width: img.width(),
        });
    }
    if img.channels() != 3 {
        return Err(Error::Shape(format!("expected 3 channels, found {}", img.channels())));
    }
    Ok(())
}

/// Activations retained from a forward pass; enough to run the adjoint.
#[derive(Clone, Debug)]
pub struct ForwardTrace<'w> {
    weights: &'w BackboneWeights,
    input_shape: (usize, usize, usize),
    /// Output of each executed stage (rectified for convolutions).
    outputs: Vec<FeatureMap>,
}

impl<'w> ForwardTrace<'w> {
    /// Rectified output of layer `id`, if it was computed.
    pub fn layer(&self, id: LayerId) -> Option<&FeatureMap> {
        self.weights.taps[id.index()].and_then(|s| self.outputs.get(s))
    }

    /// Collects the requested layers.
    pub fn features(&self, layers: &[LayerId]) -> Result<BTreeMap<LayerId, FeatureMap>> {
        layers
            .iter()
            .map(|&id| {
                self.layer(id).cloned().map(|f| (id, f)).ok_or(Error::Layer {
                    layer: id.get(),
                    message: "not computed by this forward pass".into(),
                })
            })
            .collect()
    }

    /// Gradient with respect to the raw image of `Σ ⟨upstream[i], F^i⟩`.
    /// Preprocessing is a translation, so this is also the gradient with
    /// respect to the preprocessed input.
    pub fn backward(&self, upstream: &BTreeMap<LayerId, FeatureMap>) -> Result<Image> {
        let mut pending: BTreeMap<usize, &FeatureMap> = BTreeMap::new();
        for (&id, cot) in upstream {
            let stage = self.weights.taps[id.index()]
                .filter(|&s| s < self.outputs.len())
                .ok_or(Error::Layer {
                    layer: id.get(),
                    message: "cotangent supplied for a layer the forward pass did not reach".into(),
                })?;
            let fwd = &self.outputs[stage];
            if !fwd.same_shape(cot) {
                return Err(Error::Layer {
                    layer: id.get(),
                    message: format!("cotangent shape {:?} does not match feature shape {:?}", cot.shape(), fwd.shape()),
                });
            }
            pending.insert(stage, cot);
        }
        let (h, w, c) = self.input_shape;
        let Some((&deepest, _)) = pending.iter().next_back() else {
            return Ok(FeatureMap::zeros(h, w, c));
        };

        let mut grad = pending[&deepest].clone();
        for s in (0..=deepest).rev() {
            if s != deepest {
                if let Some(cot) = pending.get(&s) {
                    grad.add_scaled(cot, 1.0);
                }
            }
            grad = match &self.weights.stages[s] {
                Stage::Conv(conv) => {
                    let out = &self.outputs[s];
                    for (g, &o) in grad.as_mut_slice().iter_mut().zip(out.as_slice()) {
                        if o <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    conv_input_grad(conv, &grad)
                }
                Stage::AvgPool => {
                    let (ih, iw, ic) = if s == 0 {
                        self.input_shape
                    } else {
                        self.outputs[s - 1].shape()
                    };
                    avg_pool_adjoint(&grad, ih, iw, ic)
                }
            };
        }
        Ok(grad)
    }
}

impl BackboneWeights {
    /// Runs the network on `img` (raw pixels; preprocessing applied here) far
    /// enough to produce every layer in `layers`.
    pub fn forward_trace(&self, img: &Image, layers: &[LayerId]) -> Result<ForwardTrace<'_>> {
        check_padded(img)?;
        let mut last = 0;
        for &id in layers {
            let s = self.taps[id.index()].ok_or(Error::Layer {
                layer: id.get(),
                message: "not exposed by this backbone".into(),
            })?;
            last = last.max(s + 1);
        }
        let mut outputs: Vec<FeatureMap> = Vec::with_capacity(last);
        let input = preprocess(img);
        for s in 0..last {
            let src = if s == 0 { &input } else { &outputs[s - 1] };
            let next = match &self.stages[s] {
                Stage::Conv(conv) => conv_forward_relu(conv, src),
                Stage::AvgPool => avg_pool(src),
            };
            outputs.push(next);
        }
        Ok(ForwardTrace {
            weights: self,
            input_shape: img.shape(),
            outputs,
        })
    }
}

/// Features `F^i` for every requested layer.
pub fn forward_features(img: &Image, weights: &BackboneWeights, layers: &[LayerId]) -> Result<BTreeMap<LayerId, FeatureMap>> {
    weights.forward_trace(img, layers)?.features(layers)
}

/// Gradient of `Σᵢ ⟨upstream[i], F^i(img)⟩` with respect to `img`.
pub fn backward_to_image(img: &Image, weights: &BackboneWeights, upstream: &BTreeMap<LayerId, FeatureMap>) -> Result<Image> {
    let layers: Vec<LayerId> = upstream.keys().copied().collect();
    weights.forward_trace(img, &layers)?.backward(upstream)
}

fn rows_per_chunk(pixels: usize, width: usize) -> usize {
    (IM2COL_BUDGET / width.max(1)).clamp(1, pixels.max(1))
}

/// Writes the zero-padded 3×3 neighbourhoods of pixels `p0..p1` into `cols`.
fn im2col(src: &FeatureMap, p0: usize, p1: usize, cols: &mut [f64]) {
    let (h, w, c) = src.shape();
    let row = 9 * c;
    for p in p0..p1 {
        let (y, x) = (p / w, p % w);
        let dst = &mut cols[(p - p0) * row..(p - p0 + 1) * row];
        for ky in 0..3 {
            for kx in 0..3 {
                let seg = &mut dst[(ky * 3 + kx) * c..(ky * 3 + kx + 1) * c];
                let (sy, sx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                    seg.fill(0.0);
                } else {
                    seg.copy_from_slice(src.pixel(sy as usize, sx as usize));
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], p0: usize, p1: usize, dst: &mut FeatureMap) {
    let (h, w, c) = dst.shape();
    let row = 9 * c;
    for p in p0..p1 {
        let (y, x) = (p / w, p % w);
        let src = &cols[(p - p0) * row..(p - p0 + 1) * row];
        for ky in 0..3 {
            let sy = y as isize + ky as isize - 1;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for kx in 0..3 {
                let sx = x as isize + kx as isize - 1;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                let seg = &src[(ky * 3 + kx) * c..(ky * 3 + kx + 1) * c];
                for (d, s) in dst.pixel_mut(sy as usize, sx as usize).iter_mut().zip(seg) {
                    *d += s;
                }
            }
        }
    }
}

fn conv_forward_relu(conv: &Conv3x3, src: &FeatureMap) -> FeatureMap {
    let (h, w, _) = src.shape();
    let (k, n) = (9 * conv.in_channels, conv.out_channels);
    let mut out = FeatureMap::zeros(h, w, n);
    let chunk = rows_per_chunk(h * w, k);
    let mut cols = vec![0.0; chunk * k];
    let mut p0 = 0;
    while p0 < h * w {
        let p1 = (p0 + chunk).min(h * w);
        let m = p1 - p0;
        im2col(src, p0, p1, &mut cols[..m * k]);
        let dst = &mut out.as_mut_slice()[p0 * n..p1 * n];
        gemm(m, k, n, &cols[..m * k], (k as isize, 1), &conv.kernel, (n as isize, 1), dst);
        for px in dst.chunks_exact_mut(n) {
            for (v, b) in px.iter_mut().zip(&conv.bias) {
                *v = (*v + b).max(0.0);
            }
        }
        p0 = p1;
    }
    out
}

/// Gradient with respect to the convolution input, given the gradient with
/// respect to its (pre-rectifier) output.
fn conv_input_grad(conv: &Conv3x3, grad_out: &FeatureMap) -> FeatureMap {
    let (h, w, n) = grad_out.shape();
    let k = 9 * conv.in_channels;
    let mut out = FeatureMap::zeros(h, w, conv.in_channels);
    let chunk = rows_per_chunk(h * w, k);
    let mut cols = vec![0.0; chunk * k];
    let mut p0 = 0;
    while p0 < h * w {
        let p1 = (p0 + chunk).min(h * w);
        let m = p1 - p0;
        // dcols[m×k] = dout[m×n] · kernelᵀ, reading the [k×n] kernel transposed.
        gemm(m, n, k, &grad_out.as_slice()[p0 * n..p1 * n], (n as isize, 1), &conv.kernel, (1, n as isize), &mut cols[..m * k]);
        col2im_add(&cols[..m * k], p0, p1, &mut out);
        p0 = p1;
    }
    out
}

fn avg_pool(src: &FeatureMap) -> FeatureMap {
    let (h, w, c) = src.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = FeatureMap::zeros(oh, ow, c);
    for y in 0..oh {
        for x in 0..ow {
            let o = out.pixel_mut(y, x);
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                for (v, s) in o.iter_mut().zip(src.pixel(2 * y + dy, 2 * x + dx)) {
                    *v += 0.25 * s;
                }
            }
        }
    }
    out
}

fn avg_pool_adjoint(grad: &FeatureMap, h: usize, w: usize, c: usize) -> FeatureMap {
    let mut out = FeatureMap::zeros(h, w, c);
    for y in 0..grad.height() {
        for x in 0..grad.width() {
            let g = grad.pixel(y, x);
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                for (v, s) in out.pixel_mut(2 * y + dy, 2 * x + dx).iter_mut().zip(g) {
                    *v = 0.25 * s;
                }
            }
        }
    }
    out
}
