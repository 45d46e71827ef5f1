//! Shared fixtures for the criterion benchmarks.

use glstyle_core::benchmark::{banded_semantic_image, synthetic_photo};
use glstyle_core::transfer::TransferSettings;
use glstyle_core::{encode_semantic, AggregationScheme, BackboneWeights, FeatureMap, Image, LossWeights, Palette, SemanticAttach, Targets};

/// Content, style and their region maps at `h × w`.
pub struct Scene {
    pub content: Image,
    pub style: Image,
    pub content_sem: FeatureMap,
    pub style_sem: FeatureMap,
}

impl Scene {
    pub fn new(h: usize, w: usize, regions: usize) -> Self {
        let cs = banded_semantic_image(h, w, regions);
        let ss = FeatureMap::from_fn(h, w, 3, |y, x, k| cs.get(h - 1 - y, x, k));
        let palette = Palette::from_images(&[&cs, &ss]).expect("banded palette");
        Self {
            content: synthetic_photo(h, w, 1),
            style: synthetic_photo(h, w, 2),
            content_sem: encode_semantic(&cs, &palette).expect("known colours"),
            style_sem: encode_semantic(&ss, &palette).expect("known colours"),
        }
    }

    pub fn targets(&self, net: &BackboneWeights, settings: &TransferSettings) -> Targets {
        Targets::precompute(net, &self.content, &self.style, Some(&self.content_sem), Some(&self.style_sem), settings).expect("targets")
    }
}

/// Settings used for timing: default weights with the global term off.
pub fn timing_settings(scheme: AggregationScheme) -> TransferSettings {
    TransferSettings {
        scheme,
        weights: LossWeights {
            gamma: 0.0,
            ..LossWeights::default()
        },
        attach: SemanticAttach::PerLayer,
        match_every: 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_shapes() {
        let s = Scene::new(32, 24, 3);
        assert_eq!(s.content.shape(), (32, 24, 3));
        assert_eq!(s.content_sem.shape(), (32, 24, 3));
        assert_eq!(s.style_sem.shape(), (32, 24, 3));
    }
}
