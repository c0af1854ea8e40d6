use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dociq_cli::plot::{histogram, BINS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dociq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dociq"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = dociq(args);
    assert!(
        out.status.success(),
        "dociq {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, originals: usize) -> String {
    let out = dir.display().to_string();
    ok(&["synth", "--out", &out, "--originals", &originals.to_string(), "--size", "96x96", "--seed", "1"]);
    out
}

#[test]
fn synth_writes_ten_variants_per_original() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 4);
    let text = fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 40);
    assert!(dir.path().join("corpus_meta.json").exists());
    ok(&["ingest", "validate", &dir.path().display().to_string()]);
}

#[test]
fn eval_on_targets_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(&dir.path().join("c"), 3);
    let manifest = format!("{corpus}/manifest.jsonl");
    let out = dir.path().join("eval").display().to_string();
    ok(&["eval", "--data", &corpus, "--predictions", &manifest, "--out", &out]);
    let report: dociq::train::EvalReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("eval/metrics.json")).unwrap()).unwrap();
    assert_eq!(report.dimensions.len(), 3);
    for d in &report.dimensions {
        assert!((d.plcc - 1.0).abs() < 1e-12 && (d.srcc - 1.0).abs() < 1e-12, "{d:?}");
    }
}

#[test]
fn screen_keeps_images_resolvable() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(&dir.path().join("c"), 2);
    let out = dir.path().join("clean/m.jsonl").display().to_string();
    ok(&["ingest", "screen", &corpus, "--out", &out]);
    ok(&["ingest", "validate", &out]);
    assert!(dir.path().join("clean/m.screening.json").exists());
}

#[test]
fn plot_bins_conserve_counts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(&dir.path().join("c"), 3);
    let out = dir.path().join("plot");
    ok(&["plot-mos", &corpus, "--out", &out.display().to_string()]);
    let bins: dociq_cli::plot::MosBins =
        serde_json::from_str(&fs::read_to_string(out.join("mos_bins.json")).unwrap()).unwrap();
    assert_eq!(bins.n, 30);
    for (d, counts) in &bins.dimensions {
        assert_eq!(counts.len(), BINS);
        assert_eq!(counts.iter().sum::<usize>(), 30, "{d}");
        assert!(out.join(format!("mos_{d}.png")).exists());
    }
}

#[test]
fn histogram_cases() {
    let single = histogram(&[3.0; 50], (1.0, 5.0)).unwrap();
    assert_eq!(single.iter().filter(|&&c| c > 0).count(), 1);
    assert_eq!(single[10], 50);
    let edges = histogram(&[1.0, 5.0], (1.0, 5.0)).unwrap();
    assert_eq!((edges[0], edges[BINS - 1]), (1, 1));
    assert!(histogram(&[], (1.0, 5.0)).is_err());
    assert!(histogram(&[5.5], (1.0, 5.0)).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let uniform: Vec<f64> = (0..5000).map(|_| rng.gen_range(1.0..5.0)).collect();
    let h = histogram(&uniform, (1.0, 5.0)).unwrap();
    let (lo, hi) = (*h.iter().min().unwrap(), *h.iter().max().unwrap());
    assert!((hi as f64) < 2.0 * lo as f64, "{h:?}");
}

#[test]
fn empty_manifest_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("manifest.jsonl"), "").unwrap();
    let out = dociq(&["plot-mos", &dir.path().display().to_string(), "--out", "unused"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn exit_codes() {
    assert_eq!(dociq(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(dociq(&["ingest", "validate", "/nonexistent/manifest.jsonl"]).status.code(), Some(1));
    let out = dociq(&["train", "--data", "x", "--out", "y", "--ablate", "no_everything"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_score_and_ablate_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(&dir.path().join("c"), 5);
    let cfg = dir.path().join("train.txt");
    fs::write(&cfg, "epochs = 1\nbackbone = tiny\ninput_size = 128x128\nmax_steps = 1\n").unwrap();
    let run = dir.path().join("run");
    let out = ok(&[
        "train", "--data", &corpus, "--config", &cfg.display().to_string(), "--out", &run.display().to_string(),
        "--ablate", "no_fusion",
    ]);
    assert!(out.contains("no_fusion"), "{out}");
    for f in ["config.txt", "model_config.json", "train_log.jsonl", "best.safetensors", "test_manifest.jsonl", "report.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let report: dociq_cli::train::RunReport =
        serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert!(report.config.ablations.no_fusion);
    assert_eq!(report.corpus_seed, Some(1));
    let saved = dociq::train::TrainConfig::from_file(&run.join("config.txt")).unwrap();
    assert_eq!(saved, report.config);

    let image = {
        let line = fs::read_to_string(Path::new(&corpus).join("manifest.jsonl")).unwrap();
        let rec: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        Path::new(&corpus).join(rec["image"].as_str().unwrap())
    };
    let scored = ok(&[
        "score", "--ckpt", &run.join("best.safetensors").display().to_string(), "--image",
        &image.display().to_string(),
    ]);
    let v: serde_json::Map<String, serde_json::Value> = serde_json::from_str(scored.trim()).unwrap();
    assert_eq!(v.keys().collect::<Vec<_>>(), ["overall", "sharpness", "color_fidelity"]);

    let ab = dir.path().join("ab");
    let table = ok(&["ablate", "--data", &corpus, "--config", &cfg.display().to_string(), "--out", &ab.display().to_string()]);
    assert_eq!(table.lines().count(), 7, "{table}");
    assert!(ab.join("ablation.json").exists() && ab.join("no_layout_no_fusion/report.json").exists());
}
