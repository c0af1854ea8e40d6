//! Correlation metrics used for every reported number: Pearson linear
//! correlation (PLCC) and Spearman rank correlation (SRCC).

use std::cmp::Ordering;

use crate::{Error, Result};

/// Predicted and ground-truth score lists of equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorePairs {
    predicted: Vec<f64>,
    ground_truth: Vec<f64>,
}

impl ScorePairs {
    pub fn new(predicted: Vec<f64>, ground_truth: Vec<f64>) -> Result<Self> {
        if predicted.len() != ground_truth.len() {
            return Err(Error::invalid(format!(
                "length mismatch: {} predicted vs {} ground truth",
                predicted.len(),
                ground_truth.len()
            )));
        }
        if predicted.len() < 3 {
            return Err(Error::invalid(format!(
                "need at least 3 pairs, got {}",
                predicted.len()
            )));
        }
        if predicted.iter().chain(&ground_truth).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite score"));
        }
        Ok(Self {
            predicted,
            ground_truth,
        })
    }

    pub fn predicted(&self) -> &[f64] {
        &self.predicted
    }

    pub fn ground_truth(&self) -> &[f64] {
        &self.ground_truth
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 {
        return Err(Error::UndefinedCorrelation("predicted scores are constant".into()));
    }
    if sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("ground-truth scores are constant".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson linear correlation coefficient.
pub fn plcc(pairs: &ScorePairs) -> Result<f64> {
    pearson(&pairs.predicted, &pairs.ground_truth)
}

/// Spearman rank correlation coefficient with average ranks for ties.
pub fn srcc(pairs: &ScorePairs) -> Result<f64> {
    pearson(&average_ranks(&pairs.predicted), &average_ranks(&pairs.ground_truth))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

/// Parameters of the monotone logistic `(b1 - b2) / (1 + exp(-(x - b3) / |b4|)) + b2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Logistic4 {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
}

impl Logistic4 {
    pub fn eval(&self, x: f64) -> f64 {
        (self.b1 - self.b2) / (1.0 + (-(x - self.b3) / self.b4.abs()).exp()) + self.b2
    }

    fn as_array(&self) -> [f64; 4] {
        [self.b1, self.b2, self.b3, self.b4]
    }

    fn from_array(p: [f64; 4]) -> Self {
        Self {
            b1: p[0],
            b2: p[1],
            b3: p[2],
            b4: p[3],
        }
    }

    fn jacobian_row(&self, x: f64) -> [f64; 4] {
        let s = self.b4.abs().max(1e-12);
        let e = (-(x - self.b3) / s).exp();
        let sig = 1.0 / (1.0 + e);
        let d = self.b1 - self.b2;
        let dsig = sig * (1.0 - sig);
        let sign4 = if self.b4 < 0.0 { -1.0 } else { 1.0 };
        [
            sig,
            1.0 - sig,
            -d * dsig / s,
            -d * dsig * (x - self.b3) / (s * s) * sign4,
        ]
    }
}

fn sse(p: &Logistic4, x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&a, &b)| (p.eval(a) - b).powi(2)).sum()
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Least-squares fit of [`Logistic4`] mapping predictions onto ground truth
/// (Levenberg-Marquardt).
pub fn fit_logistic(pairs: &ScorePairs) -> Logistic4 {
    let x = &pairs.predicted;
    let y = &pairs.ground_truth;
    let (ymin, ymax) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mx = mean(x);
    let sx = (x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    let mut p = Logistic4 {
        b1: ymax,
        b2: ymin,
        b3: mx,
        b4: sx.max(1e-6),
    };
    let mut cost = sse(&p, x, y);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (&xi, &yi) in x.iter().zip(y) {
            let row = p.jacobian_row(xi);
            let r = yi - p.eval(xi);
            for i in 0..4 {
                jtr[i] += row[i] * r;
                for j in 0..4 {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }
        let mut improved = false;
        for _ in 0..20 {
            let mut damped = jtj;
            for (i, row) in damped.iter_mut().enumerate() {
                row[i] += lambda * (jtj[i][i] + 1e-12);
            }
            let Some(step) = solve4(damped, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let cur = p.as_array();
            let cand = Logistic4::from_array([
                cur[0] + step[0],
                cur[1] + step[1],
                cur[2] + step[2],
                cur[3] + step[3],
            ]);
            let c = sse(&cand, x, y);
            if c.is_finite() && c < cost {
                let rel = (cost - c) / cost.max(1e-300);
                p = cand;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    p
}

/// PLCC after mapping predictions through a fitted 4-parameter logistic.
pub fn plcc_logistic(pairs: &ScorePairs) -> Result<f64> {
    let fit = fit_logistic(pairs);
    let mapped: Vec<f64> = pairs.predicted.iter().map(|&v| fit.eval(v)).collect();
    pearson(&mapped, &pairs.ground_truth)
}
