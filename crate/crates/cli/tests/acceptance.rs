//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use dociq::corpus::{generate_corpus, render_document, run_enhancement_pipeline, Choice, CorpusConfig, Stage};
use dociq::ingest::{screen_raters, RaterMatrix};
use dociq::metrics::{plcc, srcc, ScorePairs};
use dociq::model::{image_tensor, DocIq, ModelConfig, ScoreGrad};
use dociq::train::*;
use dociq_cli::ablate::ablate_into;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn desk_corpus(dir: &Path, originals: usize, seed: u64) -> Vec<dociq::ingest::DocumentSample> {
    let mut cfg = CorpusConfig::with_seed(seed);
    cfg.originals = originals;
    cfg.size = (128, 128);
    generate_corpus(dir, &cfg).unwrap()
}

fn desk_train_config() -> TrainConfig {
    TrainConfig {
        input_size: (128, 128),
        ..TrainConfig::default().desk()
    }
}

// ---- 1. metric oracle ------------------------------------------------------

fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let less = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn brute_pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|y| y * y).sum();
    (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let n = rng.gen_range(3..=500);
        let ties = k % 2 == 1;
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            if ties {
                rng.gen_range(1..=5) as f64
            } else {
                rng.sample(StandardNormal)
            }
        };
        let a: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.8 * draw(&mut rng)).collect();
        if a.iter().all(|x| *x == a[0]) || b.iter().all(|x| *x == b[0]) {
            continue;
        }
        let pairs = ScorePairs::new(a.clone(), b.clone()).map_err(|e| e.to_string())?;
        let p = plcc(&pairs).map_err(|e| e.to_string())?;
        let s = srcc(&pairs).map_err(|e| e.to_string())?;
        let bp = brute_pearson(&a, &b);
        let bs = brute_pearson(&brute_ranks(&a), &brute_ranks(&b));
        worst = worst.max((p - bp).abs()).max((s - bs).abs());
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("max deviation {worst:.1e} in {:.2?}", start.elapsed()))
}

// ---- 2. gradient fidelity --------------------------------------------------

fn quadratic(model: &DocIq, img: &dociq::model::Feature, mask: &dociq::corpus::LayoutMask, t: &Array2<f64>) -> (f64, ScoreGrad) {
    let p = model.forward(img, Some(mask)).unwrap();
    let d = &p.per_rater - t;
    let tm = t.mean_axis(ndarray::Axis(1)).unwrap();
    let dm = &p.mos - &tm;
    let loss = 0.5 * d.iter().map(|v| v * v).sum::<f64>() + 0.5 * dm.iter().map(|v| v * v).sum::<f64>();
    (loss, ScoreGrad { per_rater: d, mos: dm })
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::tiny().with_input_size(128, 128).with_score_range((1.0, 5.0));
    let mut model = DocIq::new(cfg, 21).map_err(|e| e.to_string())?;
    let doc = render_document(4, (128, 128)).unwrap();
    let (img, mask) = (image_tensor(&doc.image), doc.mask);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let base = model.forward(&img, Some(&mask)).unwrap();
    let targets = base.per_rater.mapv(|v| v + 0.3 * rng.sample::<f64, _>(StandardNormal));
    let (_, g) = quadratic(&model, &img, &mask, &targets);
    let (_, cache) = model.forward_train(&img, Some(&mask)).unwrap();
    let mut grads = model.zeros_like();
    model.backward(&cache, &g, &mut grads);
    let analytic: Vec<(String, Vec<f64>)> = grads
        .named_params()
        .into_iter()
        .map(|(n, p)| (n, p.iter().copied().collect()))
        .collect();

    // (tensor, element) candidates per group, sampled uniformly over elements
    let groups = ["downsampler.", "fusion.", "heads."];
    let per_group = 350;
    let mut picks = Vec::new();
    for prefix in groups {
        let tensors: Vec<usize> = (0..analytic.len()).filter(|&k| analytic[k].0.starts_with(prefix)).collect();
        let total: usize = tensors.iter().map(|&k| analytic[k].1.len()).sum();
        ensure(total > 0, || format!("no parameters under {prefix}"))?;
        for _ in 0..per_group {
            let mut i = rng.gen_range(0..total);
            for &k in &tensors {
                if i < analytic[k].1.len() {
                    picks.push((k, i));
                    break;
                }
                i -= analytic[k].1.len();
            }
        }
    }

    let h = 1e-5;
    let mut worst: (f64, String) = (0.0, String::new());
    for &(k, i) in &picks {
        let orig = model.named_params()[k].1.iter().nth(i).copied().unwrap();
        let mut eval = |v: f64| {
            *model.named_params_mut()[k].1.iter_mut().nth(i).unwrap() = v;
            quadratic(&model, &img, &mask, &targets).0
        };
        let num = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
        eval(orig);
        let ana = analytic[k].1[i];
        let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-6);
        if rel > worst.0 {
            worst = (rel, format!("{}[{i}] analytic {ana:e} numeric {num:e}", analytic[k].0));
        }
    }
    ensure(picks.len() >= 1000, || format!("only {} parameters checked", picks.len()))?;
    ensure(worst.0 < 1e-4, || format!("max relative error {:.2e} at {}", worst.0, worst.1))?;
    within(start.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "{} parameters, max relative error {:.2e}, {:.1?}",
        picks.len(),
        worst.0,
        start.elapsed()
    ))
}

// ---- 3. overfit smoke ------------------------------------------------------

fn overfit() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let samples = desk_corpus(dir.path(), 2, 5);
    let cfg = TrainConfig {
        lr: 3e-3,
        batch: 16,
        epochs: 200,
        step_size: 200,
        max_steps: Some(200),
        augment: false,
        ..desk_train_config()
    };
    let (dims, raters) = dataset_shape(&samples).unwrap();
    let mcfg = cfg.model_config(&dims, raters, (1.0, 5.0));
    let data = load_samples(&samples[..16], dir.path(), mcfg.input_size, &dims, raters).unwrap();
    let model = DocIq::new(mcfg, init_seed(&cfg)).unwrap();
    let spec = loss_spec(&cfg, &model);
    let initial = dataset_loss(&model, &data, &spec).unwrap();
    let out = train(model, &data, &[], &cfg, |_| Ok(())).map_err(|e| e.to_string())?;
    let steps = out.log.last().map_or(0, |l| l.steps);
    ensure(steps == 200, || format!("{steps} steps"))?;
    let fin = dataset_loss(&out.last, &data, &spec).unwrap();
    let report = evaluate(&out.last, &data).map_err(|e| e.to_string())?;
    let srccs: Vec<String> = report.dimensions.iter().map(|d| format!("{}={:.3}", d.dimension, d.srcc)).collect();
    ensure(fin < 0.1 * initial, || format!("loss {initial:.3} -> {fin:.3}"))?;
    ensure(report.dimensions.iter().all(|d| d.srcc >= 0.95), || format!("SRCC {}", srccs.join(" ")))?;
    within(start.elapsed(), Duration::from_secs(600))?;
    Ok(format!(
        "loss {initial:.3} -> {fin:.4}, SRCC {}, {:.1?}",
        srccs.join(" "),
        start.elapsed()
    ))
}

// ---- 4. pipeline contract --------------------------------------------------

fn pipeline_contract() -> Outcome {
    let img = render_document(0, (64, 64)).unwrap().image;
    let mut seen: BTreeSet<(Stage, Option<usize>)> = BTreeSet::new();
    for seed in 0..1000u64 {
        let out = run_enhancement_pipeline(&img, seed).map_err(|e| e.to_string())?;
        ensure(out.len() == 10, || format!("seed {seed}: {} variants", out.len()))?;
        let distinct: HashSet<String> = out.iter().map(|(_, t)| format!("{:?}{:?}", t.stage_order, t.choices)).collect();
        ensure(distinct.len() == 10, || format!("seed {seed}: {} distinct traces", distinct.len()))?;
        for (_, t) in &out {
            t.validate().map_err(|e| format!("seed {seed}: {e}"))?;
            for (&stage, &choice) in &t.choices {
                seen.insert((
                    stage,
                    match choice {
                        Choice::Skip => None,
                        Choice::Algorithm(k) => Some(k),
                    },
                ));
            }
        }
    }
    for stage in Stage::ALL {
        for k in 0..stage.option_count() {
            ensure(seen.contains(&(stage, Some(k))), || format!("{stage} option {k} never drawn"))?;
        }
        if stage.skippable() {
            ensure(seen.contains(&(stage, None)), || format!("{stage} never skipped"))?;
        }
    }
    ensure(Stage::Dewarp.option_count() == 3 && Stage::Demoire.option_count() == 2, || {
        "dewarp/demoire option counts".into()
    })?;
    Ok(format!("1000 seeds x 10 variants valid, {} stage options covered", seen.len()))
}

// ---- 5. rater screening ----------------------------------------------------

fn screening() -> Outcome {
    // honest raters with offsets spread evenly over [-1, 1]; a tight panel
    // would make each image's scores leptokurtic and widen the band to
    // sqrt(20) sigma, which no single rater can exceed
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let images = 50;
    let latent: Vec<f64> = (0..images).map(|_| rng.gen_range(2.5..3.5)).collect();
    let mut rows: Vec<Vec<f64>> = (0..14)
        .map(|r| {
            let bias = -1.0 + 2.0 * r as f64 / 13.0;
            latent.iter().map(|l| l + bias + rng.sample(noise)).collect()
        })
        .collect();
    rows.push((0..images).map(|j| if j % 2 == 0 { 1.0 } else { 5.0 }).collect());
    let m = RaterMatrix::from_rows("overall", &rows).unwrap();
    let (_, rejected) = screen_raters(&m).map_err(|e| e.to_string())?;
    ensure(rejected == ["r14"], || format!("adversarial panel rejected {rejected:?}"))?;

    let concordant: Vec<Vec<f64>> = (0..15).map(|_| latent.clone()).collect();
    let m = RaterMatrix::from_rows("overall", &concordant).unwrap();
    let (_, rejected) = screen_raters(&m).map_err(|e| e.to_string())?;
    ensure(rejected.is_empty(), || format!("concordant panel rejected {rejected:?}"))?;

    let mut total_rejected = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let latent: Vec<f64> = (0..40).map(|_| rng.gen_range(1.5..4.5)).collect();
        let rows: Vec<Vec<f64>> = (0..15)
            .map(|r| {
                let bias = 0.3 * rng.sample(n);
                let sd = if r < 2 { 1.5 } else { 0.4 };
                latent
                    .iter()
                    .map(|l| (l + bias + sd * rng.sample(n)).clamp(1.0, 5.0))
                    .collect()
            })
            .collect();
        let m = RaterMatrix::from_rows("overall", &rows).unwrap();
        let (clean, rejected) = screen_raters(&m).map_err(|e| format!("seed {seed}: {e}"))?;
        total_rejected += rejected.len();
        let (again, second) = screen_raters(&clean).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(second.is_empty() && again == clean, || format!("seed {seed}: second pass rejected {second:?}"))?;
    }
    Ok(format!(
        "adversarial rater alone rejected, concordant panel kept, idempotent on 100 panels ({total_rejected} first-pass rejections)"
    ))
}

// ---- 6. masked loss --------------------------------------------------------

fn masked_loss() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for round in 0..100 {
        let (d, r) = (3, 15);
        let scores = Array2::from_shape_simple_fn((d, r), || rng.gen_range(1.0..5.0));
        let mut present = Array2::from_shape_simple_fn((d, r), || rng.gen_bool(0.6));
        for i in 0..d {
            present[(i, rng.gen_range(0..r))] = true;
        }
        let t = RaterTargets::new(scores, present.clone()).map_err(|e| e.to_string())?;
        let pred = dociq::model::ScorePrediction::from_per_rater(Array2::from_shape_simple_fn((d, r), || {
            rng.gen_range(0.0..6.0)
        }));
        let mut t2 = t.clone();
        for ((i, j), p) in present.indexed_iter() {
            if !p {
                t2.scores[(i, j)] += rng.gen_range(-100.0..100.0);
            }
        }
        for spec in [
            LossSpec::new((1.0, 1.0)),
            LossSpec {
                order_invariant: true,
                ..LossSpec::new((1.0, 1.0))
            },
        ] {
            let (a, ga) = multi_rater_loss(&pred, &t, &spec).map_err(|e| e.to_string())?;
            let (b, gb) = multi_rater_loss(&pred, &t2, &spec).map_err(|e| e.to_string())?;
            ensure(a == b, || format!("round {round}: loss {a} vs {b}"))?;
            ensure(ga.per_rater == gb.per_rater && ga.mos == gb.mos, || format!("round {round}: gradients differ"))?;
        }
    }
    Ok("100 masks, loss and gradient unchanged".into())
}

// ---- 7. ablation harness ---------------------------------------------------

fn ablation_harness() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    desk_corpus(&corpus, 20, 0);
    let cfg = TrainConfig {
        epochs: 15,
        batch: 8,
        lr: 1e-3,
        ..desk_train_config()
    };
    let rows = ablate_into(&corpus, &cfg, &dir.path().join("ablate")).map_err(|e| format!("{e:#}"))?;
    ensure(rows.len() == 5, || format!("{} rows", rows.len()))?;
    let counts: BTreeSet<usize> = rows.iter().map(|r| r.report.param_count).collect();
    ensure(counts.len() == 5, || format!("parameter counts not distinct: {counts:?}"))?;
    let full = &rows[0];
    ensure(full.name == "full", || "first row is not the full model".into())?;
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for row in &rows[1..4] {
        let wins = full
            .report
            .test
            .dimensions
            .iter()
            .zip(&row.report.test.dimensions)
            .filter(|(f, a)| f.srcc >= a.srcc)
            .count();
        lines.push(format!("full>={} in {wins}/3", row.name));
        if wins < 2 {
            failed.push(row.name.clone());
        }
    }
    let table = dociq_cli::ablate::comparison_table(&rows);
    ensure(failed.is_empty(), || {
        format!("{}; full model behind {:?}\n{table}", lines.join(", "), failed)
    })?;
    Ok(format!("{}, {:.0?}", lines.join(", "), start.elapsed()))
}

// ---- 8. determinism --------------------------------------------------------

fn dociq(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dociq"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("dociq {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn chain(root: &Path) -> Result<(Vec<u8>, Vec<u8>, String), String> {
    let p = |s: &str| root.join(s).display().to_string();
    dociq(&["synth", "--out", &p("corpus"), "--originals", "6", "--size", "128x128", "--seed", "11"])?;
    dociq(&[
        "train", "--data", &p("corpus"), "--desk", "--input-size", "128x128", "--epochs", "1", "--seed", "11",
        "--out", &p("run"),
    ])?;
    dociq(&[
        "eval", "--data", &p("run/test_manifest.jsonl"), "--ckpt", &p("run/best.safetensors"), "--out", &p("eval"),
    ])?;
    let read = |s: &str| std::fs::read(root.join(s)).map_err(|e| format!("{s}: {e}"));
    let log = String::from_utf8(read("run/train_log.jsonl")?).unwrap();
    Ok((read("corpus/manifest.jsonl")?, read("eval/metrics.json")?, log.lines().next().unwrap_or("").to_string()))
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ma, ea, la) = chain(a.path())?;
    let (mb, eb, lb) = chain(b.path())?;
    ensure(ma == mb, || "manifests differ".into())?;
    ensure(ea == eb, || "metrics.json differ".into())?;
    ensure(la == lb, || "epoch-0 logs differ".into())?;
    Ok(format!("manifest {} bytes, metrics {} bytes identical", ma.len(), ea.len()))
}

// ---- 9. schedule -----------------------------------------------------------

fn schedule() -> Outcome {
    let cfg = TrainConfig::default();
    let lr = |e| lr_schedule(cfg.lr, cfg.decay, cfg.step_size, e);
    for (epoch, expected) in [(0, 2e-4), (10, 1.2e-4), (59, 2e-4 * 0.6f64.powi(5))] {
        let got = lr(epoch);
        ensure((got - expected).abs() <= 1e-12, || format!("lr({epoch}) = {got:e}, expected {expected:e}"))?;
    }
    Ok(format!("lr(0)={:e} lr(10)={:e} lr(59)={:e}", lr(0), lr(10), lr(59)))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("metric oracle", metric_oracle),
        ("gradient fidelity", gradient_fidelity),
        ("overfit smoke", overfit),
        ("pipeline contract", pipeline_contract),
        ("rater screening", screening),
        ("masked loss", masked_loss),
        ("ablation harness", ablation_harness),
        ("determinism", determinism),
        ("schedule", schedule),
    ];
    let mut failures = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        // written straight to stderr so the lines show without --nocapture
        let line = match &outcome {
            Ok(detail) => format!("PASS {}. {name}: {detail}\n", i + 1),
            Err(why) => format!("FAIL {}. {name}: {why}\n", i + 1),
        };
        let _ = std::io::stderr().write_all(line.as_bytes());
        if outcome.is_err() {
            failures.push(i + 1);
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
