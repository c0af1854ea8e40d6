use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DocumentSample;
use crate::seed::rng_for;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub group_by_origin: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            group_by_origin: true,
        }
    }
}

/// Partition samples into (train, test). With `group_by_origin`, every
/// variant of one origin lands on the same side. The number of training
/// groups is `round(fraction * groups)`, kept within `1..groups`.
pub fn split_dataset(
    samples: &[DocumentSample],
    spec: &SplitSpec,
) -> Result<(Vec<DocumentSample>, Vec<DocumentSample>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction {} outside (0, 1)",
            spec.train_fraction
        )));
    }
    let mut group_of = Vec::with_capacity(samples.len());
    let mut keys: Vec<&str> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if spec.group_by_origin {
            let g = match keys.iter().position(|k| *k == s.origin_id) {
                Some(g) => g,
                None => {
                    keys.push(&s.origin_id);
                    keys.len() - 1
                }
            };
            group_of.push(g);
        } else {
            group_of.push(i);
        }
    }
    let groups = if spec.group_by_origin { keys.len() } else { samples.len() };
    if groups < 2 {
        return Err(Error::SplitInfeasible(format!(
            "{groups} group(s); need at least 2"
        )));
    }
    let mut order: Vec<usize> = (0..groups).collect();
    order.shuffle(&mut rng_for(spec.seed, "split"));
    let n_train = ((spec.train_fraction * groups as f64).round() as usize).clamp(1, groups - 1);
    let mut in_train = vec![false; groups];
    for &g in &order[..n_train] {
        in_train[g] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = samples
        .iter()
        .zip(&group_of)
        .partition(|(_, &g)| in_train[g]);
    Ok((
        train.into_iter().map(|(s, _)| s.clone()).collect(),
        test.into_iter().map(|(s, _)| s.clone()).collect(),
    ))
}
