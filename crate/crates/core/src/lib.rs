//! Segmentation-aware pixel affinities.
//!
//! Per-pixel embeddings are compared within local windows ([`affinity`]),
//! turned into masks `exp(-lambda * d)`, and used as weights for
//! normalized window filtering ([`filter`]). Embeddings are learned with a
//! pairwise hinge loss ([`loss`]) by a small multi-scale network
//! ([`embednet`]); masks can also come from boundary maps via intervening
//! contours ([`contours`]).
//!
//! All window kernels share one layout, [`ColumnMatrix`]: for every output
//! pixel, `K` entries in row-major window order, each with a validity flag
//! set by the image geometry.

pub mod affinity;
pub mod bench;
pub mod cli;
pub mod contours;
pub mod embednet;
pub mod error;
pub mod filter;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod tensor;

pub use affinity::{im2dist, im2dist_backward, mask_backward, mask_from_dist, DistanceNorm, MaskParams};
pub use contours::{bresenham, im2interv, interv_mask, BoundaryMap};
pub use error::{Error, Result};
pub use filter::{bilateral_reference, masked_filter, masked_filter_backward, repeat_filter};
pub use loss::{embedding_loss, im2parity, pair_loss, pair_loss_backward, LossParams};
pub use tensor::{col2im_scatter, im2col, window_offsets, ColumnMatrix, FeatureMap, LabelMap, WindowSpec};
