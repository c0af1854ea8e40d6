use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::corpus::{PipelineTrace, CORPUS_META_FILE};
use crate::{Error, Result};

/// Tolerance for stored MOS against the mean of retained scores.
const MOS_TOLERANCE: f64 = 1e-9;

/// One manifest record: an image, optional mask, and its rater scores.
///
/// Missing or screened-out ratings are `null` in `scores` and never count
/// toward the MOS. Unknown fields are carried through untouched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentSample {
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    pub origin_id: String,
    pub scores: IndexMap<String, Vec<Option<f64>>>,
    #[serde(default)]
    pub mos: IndexMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mos_std: Option<IndexMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PipelineTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl DocumentSample {
    pub fn retained(&self, dimension: &str) -> impl Iterator<Item = f64> + '_ {
        self.scores
            .get(dimension)
            .into_iter()
            .flatten()
            .filter_map(|s| *s)
    }

    pub fn dimensions(&self) -> impl Iterator<Item = &str> {
        self.scores.keys().map(String::as_str)
    }

    /// Mean of the retained scores for `dimension`.
    pub fn recompute_mos(&self, dimension: &str) -> Result<f64> {
        let (sum, n) = self
            .retained(dimension)
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        if n == 0 {
            return Err(Error::MissingScores {
                image: self.image.display().to_string(),
                dimension: dimension.to_string(),
            });
        }
        Ok(sum / n as f64)
    }

    pub fn image_path(&self, base: &Path) -> PathBuf {
        base.join(&self.image)
    }

    pub fn mask_path(&self, base: &Path) -> Option<PathBuf> {
        self.mask.as_ref().map(|m| base.join(m))
    }
}

#[derive(Clone, Debug)]
pub struct ManifestOptions {
    pub score_range: (f64, f64),
    /// Fail when referenced image or mask files are missing.
    pub check_files: bool,
}

impl Default for ManifestOptions {
    fn default() -> Self {
        Self {
            score_range: (1.0, 5.0),
            check_files: true,
        }
    }
}

impl ManifestOptions {
    /// Defaults, with the score range taken from a sibling `corpus_meta.json`
    /// when one exists.
    pub fn for_manifest(path: &Path) -> Self {
        let mut opts = Self::default();
        let meta = path.parent().unwrap_or(Path::new(".")).join(CORPUS_META_FILE);
        if let Ok(text) = fs::read_to_string(meta) {
            if let Ok(v) = serde_json::from_str::<Value>(&text) {
                let range = &v["config"]["rating"]["score_range"];
                if let (Some(lo), Some(hi)) = (range[0].as_f64(), range[1].as_f64()) {
                    opts.score_range = (lo, hi);
                }
            }
        }
        opts
    }
}

/// Load `manifest.jsonl` with options derived from its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<DocumentSample>> {
    let path = path.as_ref();
    load_manifest_with(path, &ManifestOptions::for_manifest(path))
}

pub fn load_manifest_with(path: &Path, opts: &ManifestOptions) -> Result<Vec<DocumentSample>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let reader = BufReader::new(fs::File::open(path)?);
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let mut sample: DocumentSample =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        validate_sample(&mut sample, opts).map_err(parse_err)?;
        if opts.check_files {
            let img = sample.image_path(base);
            if !img.is_file() {
                return Err(Error::ReferentialIntegrity(img));
            }
            if let Some(mask) = sample.mask_path(base) {
                if !mask.is_file() {
                    return Err(Error::ReferentialIntegrity(mask));
                }
            }
        }
        samples.push(sample);
    }
    Ok(samples)
}

fn validate_sample(sample: &mut DocumentSample, opts: &ManifestOptions) -> std::result::Result<(), String> {
    let (lo, hi) = opts.score_range;
    if sample.scores.is_empty() {
        return Err("record has no score dimensions".into());
    }
    if let Some(trace) = &sample.trace {
        trace.validate().map_err(|e| e.to_string())?;
    }
    for (dim, scores) in &sample.scores {
        for s in scores.iter().flatten() {
            if !s.is_finite() || *s < lo || *s > hi {
                return Err(format!("score {s} for `{dim}` outside [{lo}, {hi}]"));
            }
        }
    }
    for dim in sample.mos.keys() {
        if !sample.scores.contains_key(dim) {
            return Err(format!("mos for `{dim}` has no rater scores"));
        }
    }
    let dims: Vec<String> = sample.scores.keys().cloned().collect();
    for dim in dims {
        let mos = sample.recompute_mos(&dim).map_err(|e| e.to_string())?;
        match sample.mos.get(&dim) {
            Some(&stored) if (stored - mos).abs() > MOS_TOLERANCE => {
                return Err(format!(
                    "stored mos {stored} for `{dim}` differs from mean of retained scores {mos}"
                ));
            }
            Some(_) => {}
            None => {
                sample.mos.insert(dim, mos);
            }
        }
    }
    Ok(())
}

pub fn write_manifest(path: impl AsRef<Path>, samples: &[DocumentSample]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Fill `mos` (and `mos_std`, population) from the retained scores.
pub fn aggregate_mos(samples: &[DocumentSample]) -> Result<Vec<DocumentSample>> {
    samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            let mut mos = IndexMap::new();
            let mut std = IndexMap::new();
            for dim in s.scores.keys() {
                let m = s.recompute_mos(dim)?;
                let vals: Vec<f64> = s.retained(dim).collect();
                let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
                mos.insert(dim.clone(), m);
                std.insert(dim.clone(), var.sqrt());
            }
            s.mos = mos;
            s.mos_std = Some(std);
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs::File;

    fn sample(scores: &[f64]) -> DocumentSample {
        let mut map = IndexMap::new();
        map.insert("overall".to_string(), scores.iter().map(|&s| Some(s)).collect());
        DocumentSample {
            image: "a.png".into(),
            mask: None,
            origin_id: "o".into(),
            scores: map,
            mos: IndexMap::new(),
            mos_std: None,
            trace: None,
            batch: None,
            extra: Map::new(),
        }
    }

    fn write_lines(dir: &Path, lines: &[&str]) -> PathBuf {
        File::create(dir.join("a.png")).unwrap();
        let p = dir.join("manifest.jsonl");
        fs::write(&p, lines.join("\n")).unwrap();
        p
    }

    #[test]
    fn aggregate_examples() {
        for (scores, want) in [
            (vec![3.0; 15], 3.0),
            (vec![1.0, 2.0, 3.0, 4.0, 5.0], 3.0),
            (vec![2.0, 2.0, 3.0, 5.0], 3.0),
        ] {
            let out = aggregate_mos(&[sample(&scores)]).unwrap();
            assert!((out[0].mos["overall"] - want).abs() < 1e-12);
        }
        let out = aggregate_mos(&[sample(&[1.0, 2.0, 3.0, 4.0, 5.0])]).unwrap();
        assert!((out[0].mos_std.as_ref().unwrap()["overall"] - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn aggregate_ignores_missing_and_rejects_empty() {
        let mut s = sample(&[2.0, 4.0]);
        s.scores.get_mut("overall").unwrap().push(None);
        let out = aggregate_mos(&[s]).unwrap();
        assert_eq!(out[0].mos["overall"], 3.0);

        let mut s = sample(&[]);
        s.scores.get_mut("overall").unwrap().push(None);
        assert!(matches!(aggregate_mos(&[s]), Err(Error::MissingScores { .. })));
    }

    #[test]
    fn empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(dir.path(), &[]);
        assert!(load_manifest(&p).unwrap().is_empty());
    }

    #[test]
    fn single_record_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let line = r#"{"image":"a.png","origin_id":"o1","scores":{"overall":[2.0,3.0,4.0]},"mos":{"overall":3.0},"note":"kept"}"#;
        let p = write_lines(dir.path(), &[line]);
        let samples = load_manifest(&p).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].recompute_mos("overall").unwrap(), samples[0].mos["overall"]);
        assert_eq!(samples[0].extra["note"], "kept");
        let out = dir.path().join("out.jsonl");
        write_manifest(&out, &samples).unwrap();
        assert_eq!(fs::read_to_string(out).unwrap().trim_end(), line);
    }

    #[test]
    fn out_of_range_score_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let ok = r#"{"image":"a.png","origin_id":"o1","scores":{"overall":[2.0]}}"#;
        let bad = r#"{"image":"a.png","origin_id":"o1","scores":{"overall":[6.2,3.0]}}"#;
        let p = write_lines(dir.path(), &[ok, bad]);
        match load_manifest(&p) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("6.2"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_and_inconsistent_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_lines(dir.path(), &["{not json"]);
        assert!(matches!(load_manifest(&p), Err(Error::Parse { line: 1, .. })));

        let mismatch = r#"{"image":"a.png","origin_id":"o1","scores":{"overall":[2.0,4.0]},"mos":{"overall":3.5}}"#;
        let p = write_lines(dir.path(), &[mismatch]);
        assert!(matches!(load_manifest(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn missing_image_is_referential_error() {
        let dir = tempfile::tempdir().unwrap();
        let line = r#"{"image":"nope.png","origin_id":"o1","scores":{"overall":[2.0]}}"#;
        let p = write_lines(dir.path(), &[line]);
        assert!(matches!(load_manifest(&p), Err(Error::ReferentialIntegrity(_))));
        let line = r#"{"image":"a.png","mask":"m.png","origin_id":"o1","scores":{"overall":[2.0]}}"#;
        let p = write_lines(dir.path(), &[line]);
        assert!(matches!(load_manifest(&p), Err(Error::ReferentialIntegrity(_))));
    }

    #[test]
    fn null_scores_are_missing_not_zero() {
        let dir = tempfile::tempdir().unwrap();
        let line = r#"{"image":"a.png","origin_id":"o1","scores":{"overall":[2.0,null,4.0]},"mos":{"overall":3.0}}"#;
        let p = write_lines(dir.path(), &[line]);
        let s = load_manifest(&p).unwrap();
        assert_eq!(s[0].scores["overall"][1], None);
    }
}
