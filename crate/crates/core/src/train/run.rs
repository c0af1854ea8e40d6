use std::path::{Path, PathBuf};

use super::data::{dataset_shape, load_samples, TrainingSample};
use super::eval::{evaluate, EvalReport};
use super::fit::{init_seed, train, EpochLog, TrainOutcome};
use super::TrainConfig;
use crate::corpus::MANIFEST_FILE;
use crate::ingest::{load_manifest_with, split_dataset, DocumentSample, ManifestOptions, SplitSpec};
use crate::model::{DocIq, ModelConfig};
use crate::seed::child_seed;
use crate::Result;

/// Fraction of origins used for training; the rest form the test split.
pub const TRAIN_FRACTION: f64 = 0.8;

/// Origin-grouped train / validation / test partition of a manifest.
#[derive(Clone, Debug)]
pub struct Splits {
    pub base: PathBuf,
    pub dimensions: Vec<String>,
    pub raters: usize,
    pub score_range: (f64, f64),
    pub train: Vec<DocumentSample>,
    pub val: Vec<DocumentSample>,
    pub test: Vec<DocumentSample>,
}

/// `data` is a corpus directory or a manifest file.
pub fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(MANIFEST_FILE)
    } else {
        data.to_path_buf()
    }
}

pub fn split_for_training(data: &Path, config: &TrainConfig) -> Result<Splits> {
    let path = manifest_path(data);
    let opts = ManifestOptions::for_manifest(&path);
    let samples = load_manifest_with(&path, &opts)?;
    let (dimensions, raters) = dataset_shape(&samples)?;
    let (train, test) = split_dataset(
        &samples,
        &SplitSpec {
            train_fraction: TRAIN_FRACTION,
            seed: child_seed(config.seed, "split/test"),
            group_by_origin: true,
        },
    )?;
    let (train, val) = if config.val_fraction > 0.0 {
        match split_dataset(
            &train,
            &SplitSpec {
                train_fraction: 1.0 - config.val_fraction,
                seed: child_seed(config.seed, "split/val"),
                group_by_origin: true,
            },
        ) {
            Ok(parts) => parts,
            Err(crate::Error::SplitInfeasible(_)) => (train, Vec::new()),
            Err(e) => return Err(e),
        }
    } else {
        (train, Vec::new())
    };
    Ok(Splits {
        base: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        dimensions,
        raters,
        score_range: opts.score_range,
        train,
        val,
        test,
    })
}

pub struct LoadedSplits {
    pub model_config: ModelConfig,
    pub train: Vec<TrainingSample>,
    pub val: Vec<TrainingSample>,
    pub test: Vec<TrainingSample>,
}

pub fn load_splits(splits: &Splits, config: &TrainConfig) -> Result<LoadedSplits> {
    let model_config = config.model_config(&splits.dimensions, splits.raters, splits.score_range);
    model_config.validate()?;
    let load = |s: &[DocumentSample]| {
        load_samples(s, &splits.base, model_config.input_size, &splits.dimensions, splits.raters)
    };
    Ok(LoadedSplits {
        train: load(&splits.train)?,
        val: load(&splits.val)?,
        test: load(&splits.test)?,
        model_config,
    })
}

pub struct TrainRun {
    pub splits: Splits,
    pub outcome: TrainOutcome,
    pub test_report: EvalReport,
    pub param_count: usize,
}

/// Split, load, initialise, train, and score the best checkpoint on the
/// test split.
pub fn run_training(
    data: &Path,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainRun> {
    config.validate()?;
    let splits = split_for_training(data, config)?;
    let loaded = load_splits(&splits, config)?;
    let model = DocIq::new(loaded.model_config.clone(), init_seed(config))?;
    let param_count = model.param_count();
    let outcome = train(model, &loaded.train, &loaded.val, config, on_epoch)?;
    let test_report = evaluate(&outcome.best, &loaded.test)?;
    Ok(TrainRun {
        splits,
        outcome,
        test_report,
        param_count,
    })
}
