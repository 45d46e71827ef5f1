//! Region labelings encoded as one-hot channels.
//!
//! A semantic image is an RGB picture whose colours name regions. Colours map
//! to channels through a [`Palette`] shared by the content and style maps, so
//! channel `k` means the same region in both.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Image};

pub const MAX_PALETTE: usize = 32;

/// Packs an RGB triple into `0xRRGGBB`.
#[inline]
pub fn pack_rgb(r: u8, g: u8, b: u8) -> u32 {
    (r as u32) << 16 | (g as u32) << 8 | b as u32
}

fn pixel_color(img: &Image, y: usize, x: usize) -> u32 {
    let px = img.pixel(y, x);
    let q = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    pack_rgb(q(px[0]), q(px[1]), q(px[2]))
}

/// Distinct region colours, ascending by packed value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette(Vec<u32>);

impl Palette {
    pub fn new(colors: impl IntoIterator<Item = u32>) -> Result<Self> {
        let set: BTreeSet<u32> = colors.into_iter().collect();
        if set.len() > MAX_PALETTE {
            return Err(Error::PaletteOverflow(set.len()));
        }
        Ok(Self(set.into_iter().collect()))
    }

    /// Union of the colours found in all given images.
    pub fn from_images(images: &[&Image]) -> Result<Self> {
        let mut set = BTreeSet::new();
        for img in images {
            for y in 0..img.height() {
                for x in 0..img.width() {
                    set.insert(pixel_color(img, y, x));
                    if set.len() > MAX_PALETTE {
                        return Err(Error::PaletteOverflow(set.len()));
                    }
                }
            }
        }
        Ok(Self(set.into_iter().collect()))
    }

    pub fn colors(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, color: u32) -> Option<usize> {
        self.0.binary_search(&color).ok()
    }
}

/// One binary channel per palette colour; exactly one channel is set at
/// every pixel.
pub fn encode_semantic(sem_image: &Image, palette: &Palette) -> Result<FeatureMap> {
    let (h, w, _) = sem_image.shape();
    let mut out = FeatureMap::zeros(h, w, palette.len());
    let mut unknown = BTreeSet::new();
    for y in 0..h {
        for x in 0..w {
            let color = pixel_color(sem_image, y, x);
            match palette.index_of(color) {
                Some(k) => out.set(y, x, k, 1.0),
                None => {
                    unknown.insert(color);
                }
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownColors(unknown.into_iter().collect()));
    }
    Ok(out)
}

/// The labeling used when no semantic image is supplied: one region.
pub fn uniform_semantic(h: usize, w: usize) -> FeatureMap {
    FeatureMap::filled(h, w, 1, 1.0)
}

/// Region index per pixel (argmax channel), row-major.
pub fn decode_labels(sem: &FeatureMap) -> Vec<usize> {
    sem.as_slice()
        .chunks_exact(sem.channels().max(1))
        .map(|px| {
            px.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                .0
        })
        .collect()
}

/// Renders a labeling back into palette colours.
pub fn decode_semantic(sem: &FeatureMap, palette: &Palette) -> Image {
    let labels = decode_labels(sem);
    let mut img = FeatureMap::zeros(sem.height(), sem.width(), 3);
    for (px, &l) in img.as_mut_slice().chunks_exact_mut(3).zip(&labels) {
        let c = palette.colors()[l];
        px[0] = ((c >> 16) & 0xff) as f64;
        px[1] = ((c >> 8) & 0xff) as f64;
        px[2] = (c & 0xff) as f64;
    }
    img
}
