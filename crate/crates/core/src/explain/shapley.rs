//! Shapley values over square image patches, estimated by permutation
//! sampling. This is a stand-in for KernelSHAP: the players are patches,
//! and a coalition's value is the model's probability for the target class
//! when every patch outside it is replaced by a constant fill.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::softmax_slice;
use crate::error::{shape_err, Error, Result};
use crate::models::Model;
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor;

use super::map::{AttributionMap, Method, Normalization};

/// Exhaustive enumeration is only offered up to this many patches (8! orderings).
pub const MAX_EXHAUSTIVE_PLAYERS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchGrid {
    pub patch_size: usize,
    /// Pixel value used for patches outside a coalition.
    pub baseline: f64,
}

impl Default for PatchGrid {
    fn default() -> Self {
        Self {
            patch_size: 8,
            baseline: 0.0,
        }
    }
}

impl PatchGrid {
    /// Grid rows and columns for an `height`×`width` image.
    pub fn dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let p = self.patch_size;
        if p == 0 || !height.is_multiple_of(p) || !width.is_multiple_of(p) {
            return Err(shape_err!("patch size {p} does not tile a {height}x{width} image"));
        }
        let (rows, cols) = (height / p, width / p);
        if rows * cols > 64 {
            return Err(shape_err!("{} patches exceed the supported maximum of 64", rows * cols));
        }
        Ok((rows, cols))
    }

    /// `image` with every patch whose bit is clear in `coalition` filled
    /// with the baseline, across all channels.
    pub fn mask(&self, image: &Tensor, coalition: u64) -> Result<Tensor> {
        let (_, h, w) = image.chw()?;
        let (_, cols) = self.dims(h, w)?;
        let p = self.patch_size;
        let mut out = image.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let (r, c) = ((i / w) % h, i % w);
            let patch = (r / p) * cols + c / p;
            if coalition >> patch & 1 == 0 {
                *v = self.baseline;
            }
        }
        Ok(out)
    }
}

/// Averages marginal contributions over `orderings` of `n` players.
/// `value` receives coalitions as bitmasks; each distinct coalition is
/// evaluated once.
pub fn shapley_from_orderings<I, F>(n: usize, orderings: I, mut value: F) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = Vec<usize>>,
    F: FnMut(u64) -> Result<f64>,
{
    if n > 64 {
        return Err(shape_err!("at most 64 players are supported, got {n}"));
    }
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut eval = |s: u64| -> Result<f64> {
        if let Some(&v) = cache.get(&s) {
            return Ok(v);
        }
        let v = value(s)?;
        cache.insert(s, v);
        Ok(v)
    };
    let mut phi = vec![0.0; n];
    let mut count = 0usize;
    for order in orderings {
        if order.len() != n {
            return Err(shape_err!("ordering of length {} for {n} players", order.len()));
        }
        let mut s = 0u64;
        let mut prev = eval(s)?;
        for &p in &order {
            s |= 1 << p;
            let next = eval(s)?;
            phi[p] += next - prev;
            prev = next;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Domain("at least one permutation is required".into()));
    }
    phi.iter_mut().for_each(|v| *v /= count as f64);
    Ok(phi)
}

/// Every ordering of `0..n` in lexicographic order.
pub fn all_orderings(n: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..n).collect();
    let mut out = vec![current.clone()];
    // standard next-permutation step
    loop {
        let Some(i) = (1..n).rev().find(|&i| current[i - 1] < current[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| current[j] > current[i - 1]).expect("pivot successor");
        current.swap(i - 1, j);
        current[i..].reverse();
        out.push(current.clone());
    }
}

fn patch_game(model: &Model, image: &Tensor, target_class: usize, grid: &PatchGrid) -> Result<usize> {
    let (c, h, w) = image.chw()?;
    if [c, h, w] != model.spec().input_shape {
        return Err(shape_err!(
            "image {:?} does not match model input {:?}",
            image.shape(),
            model.spec().input_shape
        ));
    }
    if target_class >= model.num_classes() {
        return Err(Error::Usage(format!("target class {target_class} out of range")));
    }
    let (rows, cols) = grid.dims(h, w)?;
    Ok(rows * cols)
}

fn spread(phi: &[f64], image: &Tensor, grid: &PatchGrid) -> Result<Tensor> {
    let (_, h, w) = image.chw()?;
    let (_, cols) = grid.dims(h, w)?;
    let p = grid.patch_size;
    let data = (0..h * w).map(|i| phi[(i / w / p) * cols + (i % w) / p]).collect();
    Tensor::new(vec![h, w], data)
}

fn finish(model: &Model, image: &Tensor, target_class: usize, grid: &PatchGrid, orderings: Vec<Vec<usize>>) -> Result<AttributionMap> {
    let players = patch_game(model, image, target_class, grid)?;
    let phi = shapley_from_orderings(players, orderings, |s| {
        let logits = model.logits(&grid.mask(image, s)?)?;
        Ok(softmax_slice(logits.data(), 1.0)[target_class])
    })?;
    AttributionMap::new(spread(&phi, image, grid)?, Method::ShapleyPatch, target_class, Normalization::Raw)
}

/// Permutation-sampling estimate with `permutations` uniformly random
/// patch orderings drawn from `seed`.
pub fn shapley_patch(
    model: &Model,
    image: &Tensor,
    target_class: usize,
    grid: &PatchGrid,
    permutations: usize,
    seed: u64,
) -> Result<AttributionMap> {
    if permutations == 0 {
        return Err(Error::Domain("permutations must be ≥ 1".into()));
    }
    let players = patch_game(model, image, target_class, grid)?;
    let mut rng = rng_for(seed, stream::SHAPLEY, 0);
    let orderings = (0..permutations)
        .map(|_| {
            let mut o: Vec<usize> = (0..players).collect();
            o.shuffle(&mut rng);
            o
        })
        .collect();
    finish(model, image, target_class, grid, orderings)
}

/// Exact Shapley values by averaging over every ordering of the patches.
pub fn shapley_patch_exhaustive(model: &Model, image: &Tensor, target_class: usize, grid: &PatchGrid) -> Result<AttributionMap> {
    let players = patch_game(model, image, target_class, grid)?;
    if players > MAX_EXHAUSTIVE_PLAYERS {
        return Err(Error::Usage(format!(
            "exhaustive enumeration supports at most {MAX_EXHAUSTIVE_PLAYERS} patches, grid has {players}"
        )));
    }
    finish(model, image, target_class, grid, all_orderings(players))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orderings_are_complete() {
        let all = all_orderings(4);
        assert_eq!(all.len(), 24);
        let mut sorted = all.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 24);
        assert_eq!(all_orderings(1), vec![vec![0]]);
    }

    #[test]
    fn additive_game_recovers_weights() {
        let w = [0.5, -1.0, 2.0];
        let v = |s: u64| Ok((0..3).filter(|&i| s >> i & 1 == 1).map(|i| w[i]).sum());
        let phi = shapley_from_orderings(3, all_orderings(3), v).unwrap();
        for (a, b) in phi.iter().zip(w) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_fills_outside_patches() {
        let grid = PatchGrid {
            patch_size: 1,
            baseline: -1.0,
        };
        let img = Tensor::new(vec![1, 1, 2], vec![0.3, 0.7]).unwrap();
        assert_eq!(grid.mask(&img, 0b10).unwrap().data(), &[-1.0, 0.7]);
        assert!(PatchGrid { patch_size: 3, baseline: 0.0 }.dims(4, 4).is_err());
    }
}
