use kdlens::data::Split;
use kdlens::distill::LogitsTable;
use kdlens::Result;
use serde_json::{json, Value};

use super::{check_model_fits, load_dataset, open_model};
use crate::config::RunConfig;
use crate::run::Run;

pub const LOGITS_FILE: &str = "teacher_logits.csv";

/// Teacher logits for the train and val samples, for `distill` runs that
/// should not load the teacher.
pub fn export(cfg: &RunConfig, run: &mut Run) -> Result<Value> {
    let teacher = open_model(cfg.teacher.model.as_deref(), "teacher model (teacher.model / --teacher)")?;
    let ds = load_dataset(cfg)?;
    check_model_fits(&teacher, &ds, "teacher")?;
    let mut indices = ds.indices(Split::Train);
    indices.extend(ds.indices(Split::Val));
    indices.sort_unstable();
    let table = LogitsTable::from_model(&teacher, &ds, &indices)?;
    let mut bytes = Vec::new();
    table.to_writer(&mut bytes)?;
    run.write(LOGITS_FILE, bytes)?;
    run.write("split.json", ds.split_manifest_json() + "\n")?;
    Ok(json!({ "rows": table.rows.len(), "classes": table.num_classes }))
}
