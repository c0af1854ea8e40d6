use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{ground_truth, TrainingSample};
use crate::metrics::{plcc, plcc_logistic, srcc, ScorePairs};
use crate::model::DocIq;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionMetrics {
    pub dimension: String,
    pub n: usize,
    pub plcc: f64,
    pub srcc: f64,
    /// PLCC after a four-parameter logistic fit, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plcc_logistic: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub plcc: f64,
    pub srcc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dimensions: Vec<DimensionMetrics>,
    pub average: Averages,
}

impl EvalReport {
    pub fn get(&self, dimension: &str) -> Option<&DimensionMetrics> {
        self.dimensions.iter().find(|d| d.dimension == dimension)
    }

    /// Fixed-width text table, one row per dimension plus the average.
    pub fn table(&self) -> String {
        let mut s = format!("{:<16} {:>6} {:>8} {:>8}\n", "dimension", "n", "PLCC", "SRCC");
        for d in &self.dimensions {
            s += &format!("{:<16} {:>6} {:>8.4} {:>8.4}\n", d.dimension, d.n, d.plcc, d.srcc);
        }
        s += &format!("{:<16} {:>6} {:>8.4} {:>8.4}\n", "average", "", self.average.plcc, self.average.srcc);
        s
    }
}

/// Predicted MOS per sample, `n x D`.
pub fn predict(model: &DocIq, samples: &[TrainingSample]) -> Result<Array2<f64>> {
    let rows: Vec<_> = samples
        .par_iter()
        .map(|s| model.forward(&s.image, s.mask.as_ref()).map(|p| p.mos))
        .collect::<Result<_>>()?;
    let d = model.config().dimension_count();
    let mut out = Array2::zeros((rows.len(), d));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(r);
    }
    Ok(out)
}

/// Correlations per dimension between two `n x D` matrices.
pub fn evaluate_predictions(
    dimensions: &[String],
    predicted: &Array2<f64>,
    truth: &Array2<f64>,
    logistic: bool,
) -> Result<EvalReport> {
    if predicted.dim() != truth.dim() || predicted.ncols() != dimensions.len() {
        return Err(Error::invalid(format!(
            "predictions {:?}, ground truth {:?}, {} dimensions",
            predicted.dim(),
            truth.dim(),
            dimensions.len()
        )));
    }
    if predicted.nrows() == 0 {
        return Err(Error::NoData("nothing to evaluate".into()));
    }
    let mut out = Vec::with_capacity(dimensions.len());
    for (d, name) in dimensions.iter().enumerate() {
        let pairs = ScorePairs::new(predicted.column(d).to_vec(), truth.column(d).to_vec())?;
        let ctx = |e: Error| match e {
            Error::UndefinedCorrelation(m) => Error::UndefinedCorrelation(format!("dimension `{name}`: {m}")),
            e => e,
        };
        out.push(DimensionMetrics {
            dimension: name.clone(),
            n: pairs.len(),
            plcc: plcc(&pairs).map_err(ctx)?,
            srcc: srcc(&pairs).map_err(ctx)?,
            plcc_logistic: if logistic {
                Some(plcc_logistic(&pairs).map_err(ctx)?)
            } else {
                None
            },
        });
    }
    let k = out.len() as f64;
    let average = Averages {
        plcc: out.iter().map(|m| m.plcc).sum::<f64>() / k,
        srcc: out.iter().map(|m| m.srcc).sum::<f64>() / k,
    };
    Ok(EvalReport { dimensions: out, average })
}

pub fn evaluate(model: &DocIq, samples: &[TrainingSample]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::NoData("empty evaluation split".into()));
    }
    let pred = predict(model, samples)?;
    evaluate_predictions(&model.config().dimensions, &pred, &ground_truth(samples), false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use rand_distr::{Distribution, Normal};

    fn dims() -> Vec<String> {
        crate::DEFAULT_DIMENSIONS.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_predictions() {
        let truth = Array2::from_shape_fn((12, 3), |(i, d)| (i * (d + 1)) as f64 % 7.0 + 0.1 * i as f64);
        let r = evaluate_predictions(&dims(), &truth, &truth, true).unwrap();
        let names: Vec<_> = r.dimensions.iter().map(|d| d.dimension.as_str()).collect();
        assert_eq!(names, ["overall", "sharpness", "color_fidelity"]);
        for d in &r.dimensions {
            assert!((d.plcc - 1.0).abs() < 1e-12 && (d.srcc - 1.0).abs() < 1e-12);
        }
        assert!((r.average.srcc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_predictions_are_uncorrelated() {
        // |SRCC| under independence has sd 1/sqrt(n-1) ~ 0.045 at n = 500
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut rng = rng_for(7, "eval-null");
        let truth = Array2::from_shape_simple_fn((500, 3), || n.sample(&mut rng));
        let pred = Array2::from_shape_simple_fn((500, 3), || n.sample(&mut rng));
        let r = evaluate_predictions(&dims(), &pred, &truth, false).unwrap();
        for d in &r.dimensions {
            assert!(d.srcc.abs() < 0.15, "{}: {}", d.dimension, d.srcc);
        }
    }

    #[test]
    fn constant_predictions_name_the_dimension() {
        let truth = Array2::from_shape_fn((5, 3), |(i, _)| i as f64);
        let pred = Array2::from_elem((5, 3), 2.0);
        match evaluate_predictions(&dims(), &pred, &truth, false) {
            Err(Error::UndefinedCorrelation(m)) => assert!(m.contains("overall"), "{m}"),
            other => panic!("{other:?}"),
        }
    }
}
