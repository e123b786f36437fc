//! Dataset ingestion, synthetic generation and splitting.

mod dataset;
mod idx;
mod image_dir;
mod synth;

pub use dataset::{Dataset, Sample, Split};
pub use idx::{
    encode_idx_images, encode_idx_labels, idx_dataset, load_idx, parse_idx_images, parse_idx_labels,
    IdxImages, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use image_dir::{load_image_dir, load_png_tensor, ImageDirOptions};
pub use synth::{blob_image, make_synthetic, quadrant_centroid, quadrant_of, SynthSpec, SYNTH_CLASSES};
