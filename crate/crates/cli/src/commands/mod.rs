//! One module per subcommand. Each takes the resolved config and an open
//! run directory and returns the manifest headline.

pub mod dataset;
pub mod distill;
pub mod evaluate;
pub mod explain;
pub mod logits;
pub mod train;

use std::path::Path;

use kdlens::data::{load_idx, load_image_dir, make_synthetic, Dataset, Sample};
use kdlens::models::{load_model, Model};
use kdlens::{Error, Result};

use crate::config::{DatasetSource, RunConfig};

/// Loads the configured dataset and assigns splits from the root seed.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let ratios = cfg.split_ratios();
    match &cfg.dataset {
        DatasetSource::Synth(p) => make_synthetic(&p.spec(cfg.seed))?.split(&ratios, cfg.seed),
        DatasetSource::ImageDir(p) => load_image_dir(&p.root, p.options())?.split(&ratios, cfg.seed),
        DatasetSource::Idx(p) => {
            let train = load_idx(&p.train_images, &p.train_labels)?;
            let (Some(images), Some(labels)) = (&p.test_images, &p.test_labels) else {
                return train.split(&ratios, cfg.seed);
            };
            let test = load_idx(images, labels)?;
            if train.image_shape() != test.image_shape() {
                return Err(Error::Data(format!(
                    "IDX train images are {:?} but test images are {:?}",
                    train.image_shape(),
                    test.image_shape()
                )));
            }
            let classes = train.num_classes().max(test.num_classes());
            let test_ids: Vec<String> = test.samples.iter().map(|s| format!("test/{}", s.id)).collect();
            let samples: Vec<Sample> = train
                .samples
                .into_iter()
                .chain(test.samples.into_iter().zip(&test_ids).map(|(s, id)| Sample { id: id.clone(), ..s }))
                .collect();
            let names = (0..classes).map(|c| c.to_string()).collect();
            Dataset::new(train.name, names, samples)?.split_with_test(&test_ids, &ratios, cfg.seed)
        }
    }
}

/// Loads a model, or fails with a configuration error when the file is
/// absent, naming the config key that should point at it.
pub fn open_model(path: Option<&Path>, what: &str) -> Result<Model> {
    let path = path.ok_or_else(|| Error::Config(format!("no {what} given")))?;
    if !path.is_file() {
        return Err(Error::Config(format!("{what} {} does not exist", path.display())));
    }
    load_model(path)
}

/// Fails unless `model` takes the dataset's images and predicts its classes.
pub fn check_model_fits(model: &Model, dataset: &Dataset, what: &str) -> Result<()> {
    let spec = model.spec();
    if Some(spec.input_shape) != dataset.image_shape() || spec.num_classes != dataset.num_classes() {
        return Err(Error::Config(format!(
            "{what} expects {:?} inputs and {} classes; dataset has {:?} and {}",
            spec.input_shape,
            spec.num_classes,
            dataset.image_shape(),
            dataset.num_classes()
        )));
    }
    Ok(())
}

/// File-name-safe form of a sample id: `a/b.png` becomes `a_b.png`.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{IdxPaths, SynthParams};
    use kdlens::data::{encode_idx_images, encode_idx_labels, Split};

    #[test]
    fn sanitized_ids() {
        assert_eq!(file_stem("q0-top-left/000001.png"), "q0-top-left_000001.png");
        assert_eq!(file_stem("test/000003"), "test_000003");
        assert_eq!(file_stem("a b:c"), "a_b_c");
    }

    #[test]
    fn synthetic_split_is_seeded() {
        let mut cfg = RunConfig::default();
        cfg.dataset = DatasetSource::Synth(SynthParams {
            samples_per_class: 10,
            image_size: 8,
            ..Default::default()
        });
        let a = load_dataset(&cfg).unwrap();
        let b = load_dataset(&cfg).unwrap();
        assert_eq!(a.split_manifest_json(), b.split_manifest_json());
        assert_eq!(a.indices(Split::Test).len(), 4);
        cfg.seed += 1;
        assert_ne!(load_dataset(&cfg).unwrap().split_manifest_json(), a.split_manifest_json());
    }

    #[test]
    fn idx_test_files_form_the_test_split() {
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, bytes: Vec<u8>| {
            let p = dir.path().join(name);
            std::fs::write(&p, bytes).unwrap();
            p
        };
        let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let cfg = RunConfig {
            dataset: DatasetSource::Idx(IdxPaths {
                train_images: write("tr-img", encode_idx_images(20, 4, 4, &vec![7; 320])),
                train_labels: write("tr-lab", encode_idx_labels(&labels)),
                test_images: Some(write("te-img", encode_idx_images(3, 4, 4, &[9; 48]))),
                test_labels: Some(write("te-lab", encode_idx_labels(&[1, 0, 1]))),
            }),
            ..Default::default()
        };
        cfg.validate().unwrap();
        let ds = load_dataset(&cfg).unwrap();
        let test: Vec<&str> = ds.indices(Split::Test).iter().map(|&i| ds.samples[i].id.as_str()).collect();
        assert_eq!(test, ["test/000000", "test/000001", "test/000002"]);
        assert_eq!(ds.indices(Split::Train).len() + ds.indices(Split::Val).len(), 20);
    }
}
