//! ITU-R BT.500 subject screening.
//!
//! For every image the scores across raters give a mean, a sample standard
//! deviation and a kurtosis `b2 = m4 / m2^2`. A score counts toward `P`
//! (above) or `Q` (below) when it lies outside `mean ± k·sd`, with `k = 2`
//! for a near-normal distribution (`2 <= b2 <= 4`) and `k = sqrt(20)`
//! otherwise. A rater is rejected when `(P + Q) / N > 0.05` and
//! `|P - Q| / (P + Q) < 0.3`.
//!
//! The pass is repeated on the surviving raters until nobody else is
//! rejected, which makes screening idempotent.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::Serialize;

use super::DocumentSample;
use crate::{Error, Result};

const OUTLIER_RATIO: f64 = 0.05;
const BALANCE_RATIO: f64 = 0.3;

/// Scores of one dimension, raters × images. Missing ratings are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct RaterMatrix {
    pub dimension: String,
    pub rater_ids: Vec<String>,
    pub image_ids: Vec<String>,
    pub scores: Array2<Option<f64>>,
}

impl RaterMatrix {
    pub fn new(
        dimension: impl Into<String>,
        rater_ids: Vec<String>,
        image_ids: Vec<String>,
        scores: Array2<Option<f64>>,
    ) -> Result<Self> {
        if scores.dim() != (rater_ids.len(), image_ids.len()) {
            return Err(Error::invalid(format!(
                "score matrix {:?} does not match {} raters x {} images",
                scores.dim(),
                rater_ids.len(),
                image_ids.len()
            )));
        }
        Ok(Self {
            dimension: dimension.into(),
            rater_ids,
            image_ids,
            scores,
        })
    }

    /// Dense matrix with raters `r0..` from per-rater score rows.
    pub fn from_rows(dimension: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let raters = rows.len();
        let images = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != images) {
            return Err(Error::invalid("ragged rater rows"));
        }
        let scores = Array2::from_shape_fn((raters, images), |(r, i)| Some(rows[r][i]));
        Self::new(
            dimension,
            (0..raters).map(|r| format!("r{r}")).collect(),
            (0..images).map(|i| format!("i{i}")).collect(),
            scores,
        )
    }

    /// Matrix for `dimension` with rater identity taken from list position.
    pub fn from_samples(samples: &[&DocumentSample], dimension: &str) -> Result<Self> {
        let raters = samples
            .iter()
            .map(|s| s.scores.get(dimension).map_or(0, Vec::len))
            .max()
            .unwrap_or(0);
        let scores = Array2::from_shape_fn((raters, samples.len()), |(r, i)| {
            samples[i]
                .scores
                .get(dimension)
                .and_then(|v| v.get(r).copied().flatten())
        });
        Self::new(
            dimension,
            (0..raters).map(|r| format!("r{r}")).collect(),
            samples.iter().map(|s| s.image.display().to_string()).collect(),
            scores,
        )
    }

    pub fn rater_count(&self) -> usize {
        self.rater_ids.len()
    }

    pub fn image_count(&self) -> usize {
        self.image_ids.len()
    }

    fn without(&self, drop: &BTreeSet<usize>) -> Self {
        let keep: Vec<usize> = (0..self.rater_count()).filter(|r| !drop.contains(r)).collect();
        let scores = Array2::from_shape_fn((keep.len(), self.image_count()), |(r, i)| {
            self.scores[(keep[r], i)]
        });
        Self {
            dimension: self.dimension.clone(),
            rater_ids: keep.iter().map(|&r| self.rater_ids[r].clone()).collect(),
            image_ids: self.image_ids.clone(),
            scores,
        }
    }
}

/// Per-rater outlier counts from one screening pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct OutlierCounts {
    pub above: Vec<usize>,
    pub below: Vec<usize>,
    pub rated: Vec<usize>,
}

pub(crate) fn count_outliers(m: &RaterMatrix) -> OutlierCounts {
    let raters = m.rater_count();
    let mut counts = OutlierCounts {
        above: vec![0; raters],
        below: vec![0; raters],
        rated: vec![0; raters],
    };
    for col in m.scores.columns() {
        let present: Vec<(usize, f64)> = col
            .iter()
            .enumerate()
            .filter_map(|(r, s)| s.map(|v| (r, v)))
            .collect();
        let n = present.len();
        if n < 2 {
            continue;
        }
        for &(r, _) in &present {
            counts.rated[r] += 1;
        }
        let mean = present.iter().map(|p| p.1).sum::<f64>() / n as f64;
        let m2 = present.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / n as f64;
        if m2 == 0.0 {
            continue;
        }
        let m4 = present.iter().map(|p| (p.1 - mean).powi(4)).sum::<f64>() / n as f64;
        let kurtosis = m4 / (m2 * m2);
        let sd = (m2 * n as f64 / (n - 1) as f64).sqrt();
        let k = if (2.0..=4.0).contains(&kurtosis) {
            2.0
        } else {
            20f64.sqrt()
        };
        for &(r, v) in &present {
            if v > mean + k * sd {
                counts.above[r] += 1;
            } else if v < mean - k * sd {
                counts.below[r] += 1;
            }
        }
    }
    counts
}

fn single_pass(m: &RaterMatrix) -> BTreeSet<usize> {
    let c = count_outliers(m);
    (0..m.rater_count())
        .filter(|&r| {
            let flagged = c.above[r] + c.below[r];
            if flagged == 0 || c.rated[r] == 0 {
                return false;
            }
            let imbalance = c.above[r].abs_diff(c.below[r]) as f64 / flagged as f64;
            flagged as f64 / c.rated[r] as f64 > OUTLIER_RATIO && imbalance < BALANCE_RATIO
        })
        .collect()
}

/// Screen raters; returns the cleaned matrix and rejected rater ids in
/// rejection order.
pub fn screen_raters(matrix: &RaterMatrix) -> Result<(RaterMatrix, Vec<String>)> {
    if matrix.rater_count() < 3 || matrix.image_count() < 2 {
        return Err(Error::invalid(format!(
            "screening needs at least 3 raters and 2 images, got {} x {}",
            matrix.rater_count(),
            matrix.image_count()
        )));
    }
    let mut current = matrix.clone();
    let mut rejected = Vec::new();
    loop {
        let drop = single_pass(&current);
        if drop.is_empty() {
            break;
        }
        rejected.extend(drop.iter().map(|&r| current.rater_ids[r].clone()));
        current = current.without(&drop);
        if current.rater_count() < 3 {
            return Err(Error::ScreeningDegenerate {
                remaining: current.rater_count(),
                dimension: current.dimension,
            });
        }
    }
    Ok((current, rejected))
}

/// Rejections per batch and dimension.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ScreeningReport {
    /// batch -> dimension -> rejected rater ids
    pub rejected: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

impl ScreeningReport {
    pub fn total(&self) -> usize {
        self.rejected.values().flat_map(|d| d.values()).map(Vec::len).sum()
    }
}

/// Screen manifest samples per batch (records without a batch form one
/// batch) and per dimension. Rejected raters' scores become `None` and MOS
/// is recomputed from what remains.
pub fn screen_samples(samples: &[DocumentSample]) -> Result<(Vec<DocumentSample>, ScreeningReport)> {
    let mut out = samples.to_vec();
    let mut report = ScreeningReport::default();
    let mut batches: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        batches.entry(s.batch.clone().unwrap_or_default()).or_default().push(i);
    }
    for (batch, idx) in &batches {
        let members: Vec<&DocumentSample> = idx.iter().map(|&i| &samples[i]).collect();
        let mut dims: Vec<&str> = Vec::new();
        for s in &members {
            for d in s.dimensions() {
                if !dims.contains(&d) {
                    dims.push(d);
                }
            }
        }
        for dim in dims {
            let matrix = RaterMatrix::from_samples(&members, dim)?;
            let (_, rejected) = screen_raters(&matrix)?;
            if rejected.is_empty() {
                continue;
            }
            let positions: Vec<usize> = rejected
                .iter()
                .map(|id| matrix.rater_ids.iter().position(|r| r == id).expect("known rater"))
                .collect();
            for &i in idx {
                if let Some(scores) = out[i].scores.get_mut(dim) {
                    for &p in &positions {
                        if let Some(slot) = scores.get_mut(p) {
                            *slot = None;
                        }
                    }
                }
            }
            report
                .rejected
                .entry(batch.clone())
                .or_default()
                .insert(dim.to_string(), rejected);
        }
    }
    for s in &mut out {
        let dims: Vec<String> = s.scores.keys().cloned().collect();
        for dim in dims {
            let mos = s.recompute_mos(&dim)?;
            s.mos.insert(dim, mos);
        }
    }
    Ok((out, report))
}
