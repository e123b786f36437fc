//! Attribution maps: per-layer average feature maps, Grad-CAM and patch
//! Shapley values, plus colormap rendering.

mod feature_map;
mod gradcam;
mod map;
mod render;
mod shapley;

pub use feature_map::{average_feature_map, explain_all_layers, feature_layer, LayerExplanation};
pub use gradcam::{grad_cam, grad_cam_from};
pub use map::{channel_mean, min_max_normalize, upsample, AttributionMap, Method, Normalization};
pub use render::{encode_png, jet, render_overlay, tensor_to_image, tensor_to_rgb, write_png};

pub use image::{DynamicImage, RgbImage};
pub use shapley::{
    all_orderings, shapley_from_orderings, shapley_patch, shapley_patch_exhaustive, PatchGrid,
    MAX_EXHAUSTIVE_PLAYERS,
};
