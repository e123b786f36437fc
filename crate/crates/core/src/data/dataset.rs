use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

/// One labelled image. `region` holds ground-truth localisation metadata
/// when the source provides it (the synthetic quadrant index).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub label: usize,
    pub region: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
    pub split_assignment: BTreeMap<String, Split>,
    pub split_ratios: Vec<f64>,
    pub split_seed: Option<u64>,
}

impl Dataset {
    /// Builds an unsplit dataset after checking ids, labels and pixel range.
    pub fn new(name: impl Into<String>, class_names: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Data(format!("duplicate sample id '{}'", s.id)));
            }
            if s.label >= class_names.len() {
                return Err(Error::Data(format!(
                    "sample '{}' has label {} but only {} classes",
                    s.id,
                    s.label,
                    class_names.len()
                )));
            }
            if s.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Data(format!("sample '{}' has pixels outside [0,1]", s.id)));
            }
        }
        Ok(Self {
            name: name.into(),
            class_names,
            samples,
            split_assignment: BTreeMap::new(),
            split_ratios: Vec::new(),
            split_seed: None,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_shape(&self) -> Option<[usize; 3]> {
        self.samples.first().and_then(|s| s.image.chw().ok()).map(|(c, h, w)| [c, h, w])
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.split_assignment.get(id).copied()
    }

    /// Sample indices in `split`, in dataset order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| self.split_of(&s.id) == Some(split))
            .map(|(i, _)| i)
            .collect()
    }

    /// Non-empty sample indices of `split`, or a configuration error.
    pub fn require(&self, split: Split) -> Result<Vec<usize>> {
        let idx = self.indices(split);
        if idx.is_empty() {
            return Err(Error::Config(format!(
                "dataset '{}' has no {} samples",
                self.name,
                split.as_str()
            )));
        }
        Ok(idx)
    }

    pub fn sample_index(&self, id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.id == id)
    }

    /// `{id -> split}` as pretty-printed JSON with sorted keys.
    pub fn split_manifest_json(&self) -> String {
        serde_json::to_string_pretty(&self.split_assignment).expect("map serializes")
    }

    /// Stratified, seeded assignment. `ratios` has two (train/val) or three
    /// (train/val/test) entries summing to one.
    pub fn split(mut self, ratios: &[f64], seed: u64) -> Result<Self> {
        let targets = check_ratios(ratios)?;
        self.split_assignment = stratified(&self.samples, self.num_classes(), ratios, &targets, seed)?;
        self.split_ratios = ratios.to_vec();
        self.split_seed = Some(seed);
        Ok(self)
    }

    /// Puts `test_ids` into the test split and divides the remainder
    /// train/val by the two-way `ratios`.
    pub fn split_with_test(mut self, test_ids: &[String], ratios: &[f64], seed: u64) -> Result<Self> {
        if ratios.len() != 2 {
            return Err(Error::Config("a fixed test set needs two-way train/val ratios".into()));
        }
        let targets = check_ratios(ratios)?;
        let test: std::collections::HashSet<&str> = test_ids.iter().map(String::as_str).collect();
        for id in &test {
            if self.sample_index(id).is_none() {
                return Err(Error::Data(format!("test id '{id}' not in dataset")));
            }
        }
        let rest: Vec<Sample> = self
            .samples
            .iter()
            .filter(|s| !test.contains(s.id.as_str()))
            .cloned()
            .collect();
        let mut assignment = stratified(&rest, self.num_classes(), ratios, &targets, seed)?;
        for id in test {
            assignment.insert(id.to_string(), Split::Test);
        }
        self.split_assignment = assignment;
        self.split_ratios = ratios.to_vec();
        self.split_seed = Some(seed);
        Ok(self)
    }

    /// Assigns every sample to the training split.
    pub fn all_train(self) -> Self {
        let n = self.len();
        let ratios = [1.0, 0.0];
        let mut ds = self;
        ds.split_assignment = ds.samples.iter().map(|s| (s.id.clone(), Split::Train)).collect();
        ds.split_ratios = ratios.to_vec();
        debug_assert_eq!(ds.split_assignment.len(), n);
        ds
    }
}

fn check_ratios(ratios: &[f64]) -> Result<Vec<Split>> {
    if !(2..=3).contains(&ratios.len()) {
        return Err(Error::Config(format!(
            "split ratios need 2 or 3 entries, got {}",
            ratios.len()
        )));
    }
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::Config(format!("split ratios must lie in [0,1], got {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios sum to {total}, expected 1")));
    }
    Ok(Split::ALL[..ratios.len()].to_vec())
}

/// Per-class counts by largest remainder, so each realised count is within
/// one of `ratio · n`.
fn apportion(n: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let mut left = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..ratios.len()).filter(|&i| ratios[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - counts[a] as f64;
        let fb = exact[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn stratified(
    samples: &[Sample],
    num_classes: usize,
    ratios: &[f64],
    targets: &[Split],
    seed: u64,
) -> Result<BTreeMap<String, Split>> {
    let active = ratios.iter().filter(|&&r| r > 0.0).count();
    let mut assignment = BTreeMap::new();
    for class in 0..num_classes {
        let mut members: Vec<&Sample> = samples.iter().filter(|s| s.label == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < active {
            return Err(Error::Config(format!(
                "class {class} has {} samples, fewer than the {active} requested splits",
                members.len()
            )));
        }
        let mut rng = rng_for(seed, stream::SPLIT, class as u64);
        members.shuffle(&mut rng);
        let counts = apportion(members.len(), ratios);
        let mut it = members.into_iter();
        for (&split, &count) in targets.iter().zip(&counts) {
            for s in it.by_ref().take(count) {
                assignment.insert(s.id.clone(), split);
            }
        }
    }
    Ok(assignment)
}
