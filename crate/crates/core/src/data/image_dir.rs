use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::resample::resize_bilinear;
use crate::tensor::Tensor;

use super::dataset::{Dataset, Sample};

/// How directory images are brought to a common tensor shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageDirOptions {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for ImageDirOptions {
    fn default() -> Self {
        Self {
            channels: 1,
            height: 32,
            width: 32,
        }
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn is_png(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Decodes one PNG into a `[C,H,W]` tensor with values in `[0,1]`, resized
/// bilinearly (each channel independently) to the requested extent.
pub fn load_png_tensor(path: &Path, opts: ImageDirOptions) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let planes: Vec<Vec<f64>> = match opts.channels {
        1 => vec![img.to_luma8().into_raw().into_iter().map(|p| p as f64 / 255.0).collect()],
        3 => {
            // grayscale sources are promoted by replication
            let rgb = img.to_rgb8().into_raw();
            (0..3)
                .map(|c| rgb.iter().skip(c).step_by(3).map(|&p| p as f64 / 255.0).collect())
                .collect()
        }
        n => return Err(Error::Config(format!("unsupported channel count {n}"))),
    };
    let mut data = Vec::with_capacity(opts.channels * opts.height * opts.width);
    for plane in planes {
        data.extend(resize_bilinear(&plane, h, w, opts.height, opts.width));
    }
    Tensor::new(vec![opts.channels, opts.height, opts.width], data)
}

/// One subdirectory per class (class index = lexicographic rank of the
/// directory name), PNG files inside. Sample ids are `class/file_name`.
pub fn load_image_dir(root: &Path, opts: ImageDirOptions) -> Result<Dataset> {
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Data(format!("{} has no class subdirectories", root.display())));
    }
    let mut class_names = Vec::with_capacity(class_dirs.len());
    let mut samples = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let class = dir.file_name().unwrap().to_string_lossy().into_owned();
        let files: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| is_png(p)).collect();
        if files.is_empty() {
            return Err(Error::Data(format!("class directory {} contains no PNG images", dir.display())));
        }
        for file in files {
            let file_name = file.file_name().unwrap().to_string_lossy();
            samples.push(Sample {
                id: format!("{class}/{file_name}"),
                image: load_png_tensor(&file, opts)?,
                label,
                region: None,
            });
        }
        class_names.push(class);
    }
    let name = root
        .file_name()
        .map_or_else(|| "images".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, class_names, samples)
}
