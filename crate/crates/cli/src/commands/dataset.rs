use kdlens::data::Split;
use kdlens::explain::{encode_png, tensor_to_image};
use kdlens::{Error, Result};
use serde_json::{json, Value};

use super::load_dataset;
use crate::config::{DatasetSource, RunConfig};
use crate::run::Run;

/// Writes the synthetic dataset as `images/{class}/{id}.png`, a labels
/// CSV and the split assignment.
pub fn synth(cfg: &RunConfig, run: &mut Run) -> Result<Value> {
    if !matches!(cfg.dataset, DatasetSource::Synth(_)) {
        return Err(Error::Config("`dataset synth` needs dataset.source = \"synth\"".into()));
    }
    let ds = load_dataset(cfg)?;
    let mut labels = csv::Writer::from_writer(Vec::new());
    labels.write_record(["sample_id", "file", "label", "class", "region", "split"])?;
    for s in &ds.samples {
        let class = &ds.class_names[s.label];
        let file = format!("images/{class}/{}.png", s.id);
        run.write(&file, encode_png(tensor_to_image(&s.image)?)?)?;
        let split = ds.split_of(&s.id).map_or("", Split::as_str);
        let region = s.region.map(|r| r.to_string()).unwrap_or_default();
        labels.write_record([s.id.as_str(), file.as_str(), &s.label.to_string(), class, &region, split])?;
    }
    let labels = labels.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    run.write("labels.csv", labels)?;
    run.write("split.json", ds.split_manifest_json() + "\n")?;
    let counts: Vec<usize> = Split::ALL.iter().map(|&s| ds.indices(s).len()).collect();
    Ok(json!({
        "samples": ds.len(),
        "classes": ds.class_names,
        "train": counts[0],
        "val": counts[1],
        "test": counts[2],
    }))
}
