//! Optimisation-based style transfer over fused multi-layer feature pyramids.
//!
//! The generated image's pixels are optimised with L-BFGS against a weighted
//! sum of a content term, a local patch-matching style term and a global
//! Gram-statistics style term (both computed on layer-aggregated features),
//! plus a total-variation smoothness prior.
//!
//! Module map:
//! - [`backbone`]: VGG19 prefix through `conv4_1`, forward and adjoint.
//! - [`pyramid`]: layer aggregation and the scheme catalog.
//! - [`losses`]: the four loss terms, patch matching, Gram statistics.
//! - [`optimizer`]: initialisation, L-BFGS, gradient checking.
//! - [`transfer`]: the composed objective and a run driver.
//! - [`semantic`]: palette-based region encoding.
//! - [`benchmark`]: per-scheme cost measurement.

pub mod backbone;
pub mod benchmark;
mod error;
pub mod linalg;
pub mod losses;
pub mod optimizer;
pub mod pyramid;
pub mod semantic;
pub mod tensor;
pub mod transfer;

pub use backbone::{backward_to_image, forward_features, load_weights, preprocess, BackboneWeights, LayerId};
pub use error::{Error, Result};
pub use losses::{LossReport, LossWeights};
pub use optimizer::{gradient_check, init_image, minimize, InitMode, Objective, OptimConfig, OptimState};
pub use pyramid::{aggregate, fused_pixel_count, scheme_catalog, AggregationScheme, SemanticAttach};
pub use semantic::{encode_semantic, Palette};
pub use tensor::{FeatureMap, Image};
pub use transfer::{total_loss, Targets, TransferObjective, TransferSettings};
