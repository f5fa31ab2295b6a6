//! Post-detection tooling for perceptual artifacts in generated images.
//!
//! - [`mask`]: binary masks, connected components, square-element dilation/erosion,
//!   confusion counts.
//! - [`raster`]: RGB images and PNG codecs for images, masks and label maps.
//! - [`par`]: the Perceptual Artifacts Ratio, ranking, percentile sampling, argmin
//!   selection, heatmaps and per-class/per-task statistics.
//! - [`refine`]: zoom-in crop planning, compositing and the refinement pipeline.
//! - [`backends`]: detector and inpainter backends (files, remote HTTP services, stubs).
//! - [`eval`]: dataset-level mIoU and user-study permutation tests with Holm correction.

pub mod backends;
pub mod error;
pub mod eval;
pub mod mask;
pub mod par;
pub mod raster;
pub mod refine;

pub use backends::{Detector, DetectorBackend, DetectorSpec, Inpainter, InpainterBackend, InpainterSpec, PromptRule};
pub use error::{Error, Result};
pub use eval::{evaluate_miou, holm_bonferroni, permutation_test, EvalReport, PreferenceVotes};
pub use mask::{bounding_box, confusion_counts, connected_components, dilate, BBox, BinaryMask, ComponentSet, Confusion, Connectivity};
pub use par::{par, par_heatmap, par_histogram, per_class_par, percentile_samples, rank_by_par, select_best, ParRecord};
pub use raster::{decode_mask, RgbImage};
pub use refine::{composite_patch, naive_refine, plan_crops, refine, CropPlan, RefineOptions};
