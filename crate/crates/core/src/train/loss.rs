use ndarray::{Array1, Array2};

use crate::ingest::DocumentSample;
use crate::model::{ScoreGrad, ScorePrediction};
use crate::{Error, Result};

/// Per-rater training targets with a presence mask.
#[derive(Clone, Debug, PartialEq)]
pub struct RaterTargets {
    pub scores: Array2<f64>,
    pub present: Array2<bool>,
    pub mos: Array1<f64>,
}

impl RaterTargets {
    /// Build targets; `mos` is the mean over present entries.
    pub fn new(scores: Array2<f64>, present: Array2<bool>) -> Result<Self> {
        if scores.dim() != present.dim() {
            return Err(Error::invalid(format!(
                "scores {:?} and mask {:?} differ in shape",
                scores.dim(),
                present.dim()
            )));
        }
        let mut mos = Array1::zeros(scores.nrows());
        for d in 0..scores.nrows() {
            let vals: Vec<f64> = scores
                .row(d)
                .iter()
                .zip(present.row(d))
                .filter(|(_, &p)| p)
                .map(|(&v, _)| v)
                .collect();
            if vals.is_empty() {
                return Err(Error::InvalidTarget(format!("dimension {d} has no present rater")));
            }
            mos[d] = vals.iter().sum::<f64>() / vals.len() as f64;
        }
        Ok(Self { scores, present, mos })
    }

    /// Targets for `dimensions`, padded to `raters` columns with absent
    /// entries.
    pub fn from_sample(sample: &DocumentSample, dimensions: &[String], raters: usize) -> Result<Self> {
        let mut scores = Array2::zeros((dimensions.len(), raters));
        let mut present = Array2::from_elem((dimensions.len(), raters), false);
        for (d, dim) in dimensions.iter().enumerate() {
            let row = sample.scores.get(dim).ok_or_else(|| Error::MissingScores {
                image: sample.image.display().to_string(),
                dimension: dim.clone(),
            })?;
            for (r, v) in row.iter().enumerate().take(raters) {
                if let Some(v) = v {
                    scores[(d, r)] = *v;
                    present[(d, r)] = true;
                }
            }
        }
        Self::new(scores, present).map_err(|e| match e {
            Error::InvalidTarget(m) => Error::InvalidTarget(format!("{}: {m}", sample.image.display())),
            e => e,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec {
    pub w_rater: f64,
    pub w_mos: f64,
    /// Compare sorted present scores rather than rater positions.
    pub order_invariant: bool,
    /// Single-output heads: only the MOS term applies.
    pub mos_only: bool,
}

impl LossSpec {
    pub fn new((w_rater, w_mos): (f64, f64)) -> Self {
        Self {
            w_rater,
            w_mos,
            order_invariant: false,
            mos_only: false,
        }
    }
}

/// Loss value and its gradient with respect to the prediction.
pub fn multi_rater_loss(pred: &ScorePrediction, target: &RaterTargets, spec: &LossSpec) -> Result<(f64, ScoreGrad)> {
    let (d, r) = pred.per_rater.dim();
    if target.mos.len() != d || pred.mos.len() != d {
        return Err(Error::invalid(format!(
            "prediction has {d} dimensions, target {}",
            target.mos.len()
        )));
    }
    if !spec.mos_only && target.scores.ncols() != r {
        return Err(Error::invalid(format!(
            "prediction has {r} raters, target {}",
            target.scores.ncols()
        )));
    }
    for i in 0..d {
        if !target.present.row(i).iter().any(|&p| p) {
            return Err(Error::InvalidTarget(format!("dimension {i} has no present rater")));
        }
    }
    let mut g_rater = Array2::zeros((d, r));
    let mut g_mos = Array1::zeros(d);

    let diff_mos = &pred.mos - &target.mos;
    let mos_mse = diff_mos.iter().map(|v| v * v).sum::<f64>() / d as f64;
    let w_mos = spec.w_mos;
    g_mos.assign(&(&diff_mos * (2.0 * w_mos / d as f64)));
    if spec.mos_only {
        return Ok((
            w_mos * mos_mse,
            ScoreGrad {
                per_rater: g_rater,
                mos: g_mos,
            },
        ));
    }

    let n_present = target.present.iter().filter(|&&p| p).count() as f64;
    let mut sq = 0.0;
    let coef = 2.0 * spec.w_rater / n_present;
    for i in 0..d {
        let idx: Vec<usize> = (0..r).filter(|&j| target.present[(i, j)]).collect();
        let mut pairs: Vec<(usize, f64)> = idx.iter().map(|&j| (j, target.scores[(i, j)])).collect();
        if spec.order_invariant {
            // k-th smallest prediction against k-th smallest target
            let mut p_idx = idx.clone();
            p_idx.sort_by(|&a, &b| pred.per_rater[(i, a)].total_cmp(&pred.per_rater[(i, b)]).then(a.cmp(&b)));
            let mut t_sorted: Vec<f64> = pairs.iter().map(|&(_, t)| t).collect();
            t_sorted.sort_by(f64::total_cmp);
            pairs = p_idx.into_iter().zip(t_sorted).collect();
        }
        for (j, t) in pairs {
            let e = pred.per_rater[(i, j)] - t;
            sq += e * e;
            g_rater[(i, j)] = coef * e;
        }
    }
    let loss = spec.w_rater * sq / n_present + w_mos * mos_mse;
    Ok((
        loss,
        ScoreGrad {
            per_rater: g_rater,
            mos: g_mos,
        },
    ))
}
