//! Acceptance suite: one pass/fail line per criterion.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use trustgate_core::backend::synthetic::{long_tail_fixture, LongTailParams};
use trustgate_core::backend::{generate_synthetic, SyntheticSpec};
use trustgate_core::conformal::{
    calibrate, calibrate_split, predict_set, ConformalCalibration, NonconformityScores, ScoreScheme,
    CALIBRATION_VERSION,
};
use trustgate_core::longtail::{
    assign_splits, evaluate_delta, per_class_accuracy, recompose_head, RecomposeConfig, Split,
};
use trustgate_core::metrics::evaluate;
use trustgate_core::ood::{calibrate_threshold, energy, EnergyConfig};
use trustgate_core::{softmax, ClassIndexMap, LogitTable, Matrix, Rank, TaxonRecord, Taxonomy};
use trustgate_ingest::mock::{MockOptions, MockServer};
use trustgate_ingest::{build_manifest, ManifestStore, PhotoRow, QualityFilter, QualityGrade, RecordState};
use trustgate_service::Bundle;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_trustgate")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn conformal_coverage() -> Outcome {
    let start = Instant::now();
    let mut coverages = Vec::new();
    for seed in 0..20 {
        let spec = SyntheticSpec::generated(10, 8, vec![400; 10], 0.6, 1000 + seed);
        let (features, head) = generate_synthetic(&spec).map_err(|e| e.to_string())?;
        let table = head.logit_table(&features).map_err(|e| e.to_string())?;
        let (cal, report) = calibrate_split(&table, 0.025, seed).map_err(|e| e.to_string())?;
        ensure!(cal.n == 2000 && report.rows == 2000, "split sizes {} / {}", cal.n, report.rows);
        coverages.push(report.empirical_coverage);
    }
    let mean = coverages.iter().sum::<f64>() / coverages.len() as f64;
    let min = coverages.iter().copied().fold(f64::INFINITY, f64::min);
    let secs = start.elapsed().as_secs_f64();
    ensure!(mean >= 0.965, "mean coverage {mean:.4} < 0.965");
    ensure!(min >= 0.94, "a seed covered only {min:.4}");
    ensure!(secs < 10.0, "took {secs:.1}s");
    Ok(format!("mean {mean:.4}, min {min:.4}, {secs:.2}s"))
}

/// ⌈(n+1)(1-α)⌉ in integers with α = num/den.
fn oracle_qhat(scores: &[f64], num: u64, den: u64) -> f64 {
    let n = scores.len() as u64;
    let rank = ((n + 1) * (den - num)).div_ceil(den);
    if rank > n {
        return 1.0;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[rank as usize - 1]
}

fn qhat_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    let mut clamped = 0;
    for n in 1..=200usize {
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let s = NonconformityScores::new(scores.clone()).map_err(|e| e.to_string())?;
        for (alpha, num, den) in [(0.5, 1, 2), (0.1, 1, 10), (0.025, 1, 40)] {
            let got = calibrate(&s, alpha).map_err(|e| e.to_string())?.qhat;
            let want = oracle_qhat(&scores, num, den);
            ensure!(got.to_bits() == want.to_bits(), "n={n} alpha={alpha}: {got} vs {want}");
            checked += 1;
            clamped += usize::from(want == 1.0);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(clamped > 0, "clamp path never exercised");
    ensure!(secs < 1.0, "took {secs:.2}s");
    Ok(format!("{checked} cases exact ({clamped} clamped), {secs:.3}s"))
}

fn nested_sets() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scores: Vec<f64> = (0..500).map(|_| rng.random::<f64>().powi(3)).collect();
    let s = NonconformityScores::new(scores).map_err(|e| e.to_string())?;
    let loose = calibrate(&s, 0.1).map_err(|e| e.to_string())?;
    let strict = calibrate(&s, 0.025).map_err(|e| e.to_string())?;
    let mut violations = 0;
    for _ in 0..1000 {
        let k = rng.random_range(2..=20);
        let scale = rng.random_range(0.1..8.0);
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let p = softmax(&z).map_err(|e| e.to_string())?;
        let small: BTreeSet<usize> = predict_set(&p, &loose).into_iter().collect();
        let big: BTreeSet<usize> = predict_set(&p, &strict).into_iter().collect();
        violations += usize::from(!small.is_subset(&big));
    }
    ensure!(violations == 0, "{violations} violations");
    Ok(format!("0 violations (qhat {:.4} vs {:.4})", loose.qhat, strict.qhat))
}

fn energy_identities() -> Outcome {
    let e0 = energy(&[0.0, 0.0], 1.0).map_err(|e| e.to_string())?;
    ensure!((e0 + std::f64::consts::LN_2).abs() <= 1e-12, "E([0,0]) = {e0}");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(1..=12);
        let t = rng.random_range(0.2..5.0);
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-20.0..20.0)).collect();
        let c = rng.random_range(-50.0..50.0);
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let a = energy(&z, t).map_err(|e| e.to_string())?;
        let b = energy(&shifted, t).map_err(|e| e.to_string())?;
        worst = worst.max((b - (a - c)).abs());
    }
    ensure!(worst <= 1e-9, "shift identity off by {worst:e}");
    for _ in 0..1000 {
        let k = rng.random_range(1..=12);
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mut bumped = z.clone();
        let i = rng.random_range(0..k);
        bumped[i] += rng.random_range(0.01..3.0);
        let (a, b) = (energy(&z, 1.0).unwrap(), energy(&bumped, 1.0).unwrap());
        ensure!(b < a, "raising logit {i} of {z:?} did not lower energy");
    }
    Ok(format!("E([0,0]) = {e0:.12}, worst shift error {worst:.1e}"))
}

fn ood_calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for folds in 2..=10 {
        for seed in 0..3 {
            let id: Vec<f64> = (0..40).map(|_| rng.random_range(-12.0..-2.0)).collect();
            let ood: Vec<f64> = (0..30).map(|_| rng.random_range(1.0..9.0)).collect();
            let fit = calibrate_threshold(&id, &ood, folds, seed).map_err(|e| e.to_string())?;
            ensure!(fit.detection_accuracy == 1.0, "folds {folds}: accuracy {}", fit.detection_accuracy);
        }
    }
    let id_dist = Normal::new(-2.0, 1.0).unwrap();
    let ood_dist = Normal::new(2.0, 1.0).unwrap();
    let id: Vec<f64> = (0..10000).map(|_| id_dist.sample(&mut rng)).collect();
    let ood: Vec<f64> = (0..10000).map(|_| ood_dist.sample(&mut rng)).collect();
    let fit = calibrate_threshold(&id, &ood, 5, 0).map_err(|e| e.to_string())?;
    let bayes = StdNormal::new(0.0, 1.0).unwrap().cdf(2.0);
    let gap = (fit.detection_accuracy - bayes).abs();
    ensure!(gap <= 0.02, "accuracy {} vs Bayes {bayes}", fit.detection_accuracy);
    Ok(format!(
        "separable exact for folds 2..=10; Gaussian accuracy {:.4} vs {bayes:.4} (threshold {:.3})",
        fit.detection_accuracy, fit.threshold
    ))
}

fn split_boundaries() -> Outcome {
    let acc = [Some(0.799999), Some(0.80), Some(0.90), Some(0.900001)];
    let got = assign_splits(&acc).splits;
    ensure!(
        got == [Split::Few, Split::Medium, Split::Medium, Split::Many],
        "got {got:?}"
    );
    Ok("few, medium, medium, many".into())
}

fn head_recomposition() -> Outcome {
    let start = Instant::now();
    let params = LongTailParams::default();
    ensure!(params.classes == 20 && params.tail_classes.len() == 3, "fixture shape changed");
    ensure!(params.tail_count == 10, "tail count changed");
    let (mut gains, mut drops) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let fx = long_tail_fixture(&params, seed).map_err(|e| e.to_string())?;
        let preds: Vec<usize> = fx
            .cal
            .features()
            .iter_rows()
            .map(|x| fx.head.predict(x).unwrap())
            .collect();
        let acc = per_class_accuracy(&preds, fx.cal.labels(), params.classes).map_err(|e| e.to_string())?;
        let splits = assign_splits(&acc);
        let config = RecomposeConfig {
            seed,
            ..RecomposeConfig::default()
        };
        let r = recompose_head(&fx.head, &splits, &fx.cal, &config).map_err(|e| format!("seed {seed}: {e}"))?;
        for c in 0..params.classes {
            if splits.get(c) != Some(Split::Few) {
                let same = fx.head.row(c).iter().zip(r.head.row(c)).all(|(a, b)| a.to_bits() == b.to_bits());
                ensure!(same, "seed {seed}: non-few row {c} changed");
            }
        }
        ensure!(r.head.bias() == fx.head.bias(), "seed {seed}: bias changed");
        let d = evaluate_delta(&fx.head, &r.head, &fx.test, &splits).map_err(|e| e.to_string())?;
        gains.push(d.few_gain().ok_or(format!("seed {seed}: no few classes in test"))?);
        drops.push(d.overall_drop());
    }
    let (gain, drop) = (median(gains), median(drops));
    let secs = start.elapsed().as_secs_f64();
    ensure!(gain >= 0.05, "median few gain {:.2} points", gain * 100.0);
    ensure!(drop <= 0.02, "median overall drop {:.2} points", drop * 100.0);
    ensure!(secs < 30.0, "took {secs:.1}s");
    Ok(format!(
        "median few gain {:+.1} pts, median overall drop {:+.1} pts, {secs:.1}s",
        gain * 100.0,
        drop * 100.0
    ))
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for t in 0..100 {
        let n = rng.random_range(1..200);
        let k = rng.random_range(1..12);
        // coarse values make exact logit ties common
        let data: Vec<f64> = (0..n * k).map(|_| rng.random_range(0..6) as f64).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let table = LogitTable::with_row_ids(Matrix::new(n, k, data).unwrap(), Some(labels.clone())).unwrap();
        let correct = (0..n)
            .filter(|&i| {
                let row = table.row(i);
                let mut best = 0;
                for j in 1..k {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best == labels[i]
            })
            .count();
        let report = evaluate(&table).map_err(|e| e.to_string())?;
        let want = correct as f64 / n as f64;
        ensure!(report.top1 == want, "table {t}: top1 {} vs {want}", report.top1);
    }
    // class 0 always right, class 1 right 3 times in 5; rows at 9:1
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..45 {
        rows.push(vec![2.0, 0.0]);
        labels.push(0);
    }
    for i in 0..5 {
        rows.push(if i < 3 { vec![0.0, 2.0] } else { vec![2.0, 0.0] });
        labels.push(1);
    }
    let table = LogitTable::with_row_ids(Matrix::from_rows(&rows).unwrap(), Some(labels)).unwrap();
    let r = evaluate(&table).map_err(|e| e.to_string())?;
    ensure!(r.top1 == 0.96, "top1 {}", r.top1);
    ensure!(r.mean_per_class == 0.8, "mpc {}", r.mean_per_class);
    Ok("100 random tables match; 9:1 example top1 = 0.96, mpc = 0.8".into())
}

fn photo_rows(n: i64) -> Vec<PhotoRow> {
    (1..=n)
        .map(|id| PhotoRow {
            photo_id: 1000 + id,
            taxon_id: 10 + id % 4,
            extension: "jpg".into(),
            quality_grade: QualityGrade::Research,
            license: "cc0".into(),
        })
        .collect()
}

fn plan(dir: &Path, n: i64) -> std::path::PathBuf {
    let m = build_manifest(&photo_rows(n), &(10..14).collect(), QualityFilter::Research).manifest;
    let path = dir.join("manifest.ndjson");
    ManifestStore::create(&path, m).unwrap();
    path
}

fn ingest_cmd(base: &str, manifest: &Path, dest: &Path, concurrency: usize) -> Command {
    let mut c = Command::new(bin());
    c.env("TRUSTGATE_BASE_URL", base)
        .args(["ingest", "run", "--rate", "1000", "--concurrency"])
        .arg(concurrency.to_string())
        .arg("--manifest")
        .arg(manifest)
        .arg("--dest")
        .arg(dest)
        .stdout(Stdio::null())
        .stderr(Stdio::null());
    c
}

fn verify_clean(manifest: &Path, dest: &Path) -> Result<(), String> {
    let out = Command::new(bin())
        .args(["ingest", "verify", "--manifest"])
        .arg(manifest)
        .arg("--dest")
        .arg(dest)
        .output()
        .map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&out.stdout);
    ensure!(out.status.success(), "verify failed: {text}");
    ensure!(text.contains("\"ok\":100"), "verify report {text}");
    Ok(())
}

fn ingest_integration(rt: &tokio::runtime::Runtime) -> Outcome {
    let start = Instant::now();

    // full run
    let dir = tempfile::tempdir().unwrap();
    let server = rt.block_on(MockServer::start(MockOptions::default())).unwrap();
    let manifest = plan(dir.path(), 100);
    let dest = dir.path().join("images");
    let status = ingest_cmd(&server.base_url(), &manifest, &dest, 8).status().unwrap();
    ensure!(status.success(), "ingest run failed");
    ensure!(server.stats().requests() == 100, "{} requests", server.stats().requests());
    verify_clean(&manifest, &dest)?;

    // kill at about half way, then resume
    let dir = tempfile::tempdir().unwrap();
    let server = rt
        .block_on(MockServer::start(MockOptions {
            delay: Duration::from_millis(25),
            ..Default::default()
        }))
        .unwrap();
    let manifest = plan(dir.path(), 100);
    let dest = dir.path().join("images");
    let mut child: Child = ingest_cmd(&server.base_url(), &manifest, &dest, 2).spawn().unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut stall = None;
    while server.stats().requests() < 50 {
        if Instant::now() >= deadline {
            stall = Some(format!("child made only {} requests", server.stats().requests()));
            break;
        }
        if child.try_wait().unwrap().is_some() {
            stall = Some("child exited early".to_string());
            break;
        }
        std::thread::sleep(Duration::from_millis(2));
    }
    let _ = child.kill();
    child.wait().unwrap();
    if let Some(reason) = stall {
        return Err(reason);
    }
    let interrupted = ManifestStore::open(&manifest).map_err(|e| format!("reopen after kill: {e}"))?;
    let done: Vec<i64> = interrupted
        .manifest()
        .entries
        .iter()
        .filter(|e| matches!(e.state, RecordState::Done { .. }))
        .map(|e| e.record.photo_id)
        .collect();
    ensure!((20..100).contains(&done.len()), "{} done at kill time", done.len());
    let before = server.stats().hits();
    let status = ingest_cmd(&server.base_url(), &manifest, &dest, 4).status().unwrap();
    ensure!(status.success(), "resume failed");
    let after = server.stats().hits();
    let refetched = done.iter().filter(|id| after.get(id) != before.get(id)).count();
    ensure!(refetched == 0, "{refetched} done records fetched again");
    let final_counts = ManifestStore::open(&manifest).unwrap().manifest().counts();
    ensure!(final_counts.done == 100, "final state {final_counts:?}");
    verify_clean(&manifest, &dest)?;

    // concurrency bound
    let mut seen = HashMap::new();
    for c in [1, 4, 16] {
        let dir = tempfile::tempdir().unwrap();
        let server = rt
            .block_on(MockServer::start(MockOptions {
                delay: Duration::from_millis(10),
                ..Default::default()
            }))
            .unwrap();
        let manifest = plan(dir.path(), 100);
        let status = ingest_cmd(&server.base_url(), &manifest, &dir.path().join("img"), c)
            .status()
            .unwrap();
        ensure!(status.success(), "run at concurrency {c} failed");
        let max = server.stats().max_in_flight();
        ensure!(max <= c, "concurrency {c}: {max} simultaneous");
        seen.insert(c, max);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!(
        "100/100 verified; killed with {} done, 0 refetched; max in flight {}/{}/{} for 1/4/16; {secs:.1}s",
        done.len(),
        seen[&1],
        seen[&4],
        seen[&16]
    ))
}

fn service_bundle() -> Bundle {
    let cal = ConformalCalibration {
        version: CALIBRATION_VERSION,
        alpha: 0.025,
        n: 2000,
        qhat: 0.6,
        score_scheme: ScoreScheme::OneMinusTrueProb,
        split_seed: Some(0),
        created_at: "2026-01-01T00:00:00Z".into(),
    };
    let species = [
        ("Trichoplusia ni", Some("Cabbage looper")),
        ("Helicoverpa zea", Some("Corn earworm")),
        ("Helicoverpa armigera", Some("Cotton bollworm")),
        ("Danaus plexippus", Some("Monarch")),
        ("Apis mellifera", None),
    ];
    let taxa = Taxonomy::from_records(species.iter().enumerate().map(|(i, (s, c))| TaxonRecord {
        taxon_id: 81569 + i as i64,
        scientific_name: s.to_string(),
        common_name: c.map(str::to_string),
        rank: Rank::Species,
        ancestor_ids: vec![1, 47120, 47158],
    }))
    .unwrap();
    Bundle::new(
        cal,
        EnergyConfig::with_threshold(1.0, -4.0),
        None,
        ClassIndexMap::new((81569..81574).collect()).unwrap(),
        taxa,
    )
    .unwrap()
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn service_end_to_end(rt: &tokio::runtime::Runtime) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bundle_dir = dir.path().join("bundle");
    service_bundle().save(&bundle_dir).map_err(|e| e.to_string())?;

    let mut child = Command::new(bin())
        .args(["serve", "--addr", "127.0.0.1:0", "--bundle"])
        .arg(&bundle_dir)
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let _server = Server(child);
    let base = loop {
        let line = lines.next().ok_or("server exited before listening")?.map_err(|e| e.to_string())?;
        if let Some(rest) = line.split("listening on ").nth(1) {
            break rest.trim().to_string();
        }
    };
    std::thread::spawn(move || for _ in lines {});

    let client = reqwest::Client::new();
    let post = |z: Vec<f64>| {
        let client = client.clone();
        let url = format!("{base}/v1/predict");
        async move {
            let r = client
                .post(url)
                .body(serde_json::json!({ "logits": z }).to_string())
                .send()
                .await
                .map_err(|e| e.to_string())?;
            let status = r.status().as_u16();
            let text = r.text().await.map_err(|e| e.to_string())?;
            Ok::<_, String>((status, text))
        }
    };
    let cli = |z: &[f64]| -> Result<String, String> {
        let row = dir.path().join("row.json");
        std::fs::write(&row, serde_json::to_string(z).unwrap()).unwrap();
        let out = Command::new(bin())
            .args(["predict", "--bundle"])
            .arg(&bundle_dir)
            .arg("--logits-row")
            .arg(&row)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(out.status.success(), "cli predict: {}", String::from_utf8_lossy(&out.stderr));
        Ok(String::from_utf8(out.stdout).unwrap().trim_end_matches('\n').to_string())
    };

    // (name, logits, expect warning, expected set size)
    let scenarios: [(&str, Vec<f64>, bool, usize); 3] = [
        ("warning+prediction", vec![0.3, 0.2, 0.1, 0.0, -0.1], true, 1),
        ("clean prediction", vec![9.0, 1.0, 0.5, 0.0, -1.0], false, 1),
        ("two-species set", vec![-3.0, 6.0, 5.9, -2.0, -4.0], false, 2),
    ];
    for (name, z, warn, size) in &scenarios {
        let (status, http) = rt.block_on(post(z.clone()))?;
        ensure!(status == 200, "{name}: status {status}: {http}");
        ensure!(http == cli(z)?, "{name}: HTTP and CLI differ");
        let v: serde_json::Value = serde_json::from_str(&http).unwrap();
        ensure!(v["warning"].is_string() == *warn, "{name}: warning {}", v["warning"]);
        ensure!(v["ood"]["is_ood"] == *warn, "{name}: verdict {}", v["ood"]);
        ensure!(v["top1"]["scientific_name"].is_string(), "{name}: no top-1 name");
        let set = v["conformal_set"].as_array().unwrap();
        ensure!(set.len() == *size, "{name}: set size {}", set.len());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let inputs: Vec<Vec<f64>> = (0..10_000)
        .map(|_| {
            let scale = 10f64.powf(rng.random_range(-2.0..1.5));
            (0..5).map(|_| rng.random_range(-1.0..1.0) * scale).collect()
        })
        .collect();
    let failures = rt.block_on(async {
        let limit = Arc::new(tokio::sync::Semaphore::new(32));
        let mut tasks = Vec::with_capacity(inputs.len());
        for z in inputs {
            let permit = limit.clone().acquire_owned().await.unwrap();
            let fut = post(z);
            tasks.push(tokio::spawn(async move {
                let r = fut.await;
                drop(permit);
                match r {
                    Ok((200, text)) => {
                        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
                        let set = v["conformal_set"].as_array().unwrap();
                        !set.is_empty() && set.iter().any(|m| m == &v["top1"])
                    }
                    _ => false,
                }
            }));
        }
        let mut bad = 0;
        for t in tasks {
            bad += usize::from(!t.await.unwrap());
        }
        bad
    });
    ensure!(failures == 0, "{failures} of 10000 fuzzed responses broke the set invariants");
    Ok("3 scenarios byte-identical to CLI; 10000 fuzzed requests keep top-1 in a non-empty set".into())
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let criteria: Vec<Criterion<'_>> = vec![
        ("conformal coverage", Box::new(conformal_coverage)),
        ("qhat oracle equivalence", Box::new(qhat_oracle)),
        ("nested prediction sets", Box::new(nested_sets)),
        ("energy identities", Box::new(energy_identities)),
        ("OOD threshold calibration", Box::new(ood_calibration)),
        ("split boundaries", Box::new(split_boundaries)),
        ("head recomposition", Box::new(head_recomposition)),
        ("metrics oracle", Box::new(metrics_oracle)),
        ("ingest integration", Box::new(|| ingest_integration(&rt))),
        ("service end-to-end", Box::new(|| service_end_to_end(&rt))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()))));
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
