//! Offline analysis commands over logit and feature files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use trustgate_core::backend::{formats, generate_synthetic, load_head, write_features, write_head, SyntheticSpec};
use trustgate_core::conformal::{
    calibrate, calibrate_split, evaluate_coverage, nonconformity_scores, ConformalCalibration, NonconformityScores,
};
use trustgate_core::longtail::{
    assign_splits, evaluate_delta, per_class_accuracy, recompose_head, RecomposeConfig, SplitAssignment,
};
use trustgate_core::metrics::{evaluate, ood_summary};
use trustgate_core::ood::{energy, EnergyConfig, Objective};
use trustgate_core::softmax;

use crate::io;

#[derive(Subcommand)]
pub enum ConformalCmd {
    /// Fit the set threshold from calibration scores.
    Fit {
        #[arg(long, default_value_t = 0.025)]
        alpha: f64,
        /// Labeled logit table, or one score per line.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Split a labeled table 50/50 with this seed; fit on one half and
        /// report coverage on the other.
        #[arg(long)]
        split_seed: Option<u64>,
    },
    /// Prediction sets for every row of a logit table.
    Predict {
        #[arg(long)]
        cal: PathBuf,
        #[arg(long)]
        logits: PathBuf,
    },
}

#[derive(Subcommand)]
pub enum OodCmd {
    /// Fit the energy threshold from in- and out-of-distribution logits.
    Fit {
        #[arg(long)]
        id: PathBuf,
        #[arg(long)]
        ood: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `balanced` or `plain` accuracy.
        #[arg(long, default_value = "balanced")]
        objective: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Energy and verdict per row.
    Score {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        logits: PathBuf,
    },
}

#[derive(Subcommand)]
pub enum LongtailCmd {
    /// Per-class accuracy and few/medium/many split.
    Splits {
        /// Predicted class per line.
        #[arg(long)]
        preds: PathBuf,
        /// True class per line.
        #[arg(long)]
        labels: PathBuf,
        /// Class count; defaults to one past the largest index seen.
        #[arg(long)]
        classes: Option<usize>,
        /// Also write the assignment as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompose few-split head rows from their strongest neighbors.
    Recompose {
        #[arg(long)]
        head: PathBuf,
        /// Labeled calibration features.
        #[arg(long)]
        cal: PathBuf,
        /// Split assignment JSON; computed from the head's accuracy on
        /// `--cal` when absent.
        #[arg(long)]
        splits: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        step_size: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the composition record; defaults to `<out>.json`.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Labeled features to report the before/after accuracy on.
        #[arg(long)]
        test: Option<PathBuf>,
    },
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    logits: PathBuf,
    /// `class_index,taxon_id` map for the per-class CSV.
    #[arg(long)]
    class_map: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-class rows `taxon_id,n_test,accuracy,split`.
    #[arg(long)]
    class_csv: Option<PathBuf>,
}

fn read_scores(path: &Path) -> Result<(NonconformityScores, Option<trustgate_core::LogitTable>)> {
    if io::looks_like_table(path)? {
        let table = io::logits(path)?;
        return Ok((nonconformity_scores(&table)?, Some(table)));
    }
    let text = io::text(path)?;
    let values = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .with_context(|| format!("{} line {}: bad score {l:?}", path.display(), i + 1))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((NonconformityScores::new(values)?, None))
}

pub fn conformal(cmd: ConformalCmd) -> Result<()> {
    match cmd {
        ConformalCmd::Fit {
            alpha,
            scores,
            out,
            split_seed,
        } => {
            let cal = match split_seed {
                Some(seed) => {
                    let table = io::logits(&scores)?;
                    let (cal, report) = calibrate_split(&table, alpha, seed)?;
                    eprintln!("{}", serde_json::to_string(&report)?);
                    cal
                }
                None => calibrate(&read_scores(&scores)?.0, alpha)?,
            };
            io::write_text(&out, &cal.to_json()?)?;
            io::println(&format!("n={} level={} qhat={}", cal.n, cal.level(), cal.qhat))
        }
        ConformalCmd::Predict { cal, logits } => {
            let cal = ConformalCalibration::from_json(&io::text(&cal)?)?;
            let table = io::logits(&logits)?;
            let mut w = io::stdout_csv();
            w.write_record(["item_id", "set_size", "classes"])?;
            for (i, id) in table.item_ids().iter().enumerate() {
                let set = cal.predict_set(&softmax(table.row(i))?);
                let classes: Vec<String> = set.iter().map(|c| c.to_string()).collect();
                w.write_record([id.as_str(), &set.len().to_string(), &classes.join(" ")])?;
            }
            w.flush()?;
            if table.labels().is_some() && !table.is_empty() {
                eprintln!("{}", serde_json::to_string(&evaluate_coverage(&table, &cal)?)?);
            }
            Ok(())
        }
    }
}

pub fn ood(cmd: OodCmd) -> Result<()> {
    match cmd {
        OodCmd::Fit {
            id,
            ood,
            temperature,
            folds,
            seed,
            objective,
            out,
        } => {
            let objective: Objective = objective.parse()?;
            let (id, ood) = (io::logits(&id)?, io::logits(&ood)?);
            if id.class_count() != ood.class_count() {
                bail!(
                    "ID logits have {} classes, OOD logits have {}",
                    id.class_count(),
                    ood.class_count()
                );
            }
            let (config, fit) = EnergyConfig::fit(
                temperature,
                id.logits().iter_rows(),
                ood.logits().iter_rows(),
                folds,
                seed,
                objective,
            )?;
            io::write_text(&out, &config.to_json()?)?;
            let energies = |t: &trustgate_core::LogitTable| -> Result<Vec<f64>> {
                t.logits()
                    .iter_rows()
                    .map(|z| Ok(energy(z, temperature)?))
                    .collect()
            };
            let in_sample = ood_summary(&energies(&id)?, &energies(&ood)?, fit.threshold)?;
            io::println(&serde_json::json!({ "fit": fit, "in_sample": in_sample }).to_string())
        }
        OodCmd::Score { config, logits } => {
            let config = EnergyConfig::from_json(&io::text(&config)?)?;
            let table = io::logits(&logits)?;
            let mut w = io::stdout_csv();
            w.write_record(["item_id", "energy", "is_ood"])?;
            for (i, id) in table.item_ids().iter().enumerate() {
                let v = config.detect(table.row(i))?;
                w.write_record([id.as_str(), &v.energy.to_string(), &v.is_ood.to_string()])?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn read_indices(path: &Path) -> Result<Vec<usize>> {
    let f = std::fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    formats::read_indices(f).with_context(|| path.display().to_string())
}

fn splits_from(head: &trustgate_core::ClassifierHead, cal: &trustgate_core::FeatureTable) -> Result<SplitAssignment> {
    let preds = cal
        .features()
        .iter_rows()
        .map(|x| head.predict(x))
        .collect::<trustgate_core::Result<Vec<_>>>()?;
    Ok(assign_splits(&per_class_accuracy(&preds, cal.labels(), head.class_count())?))
}

pub fn longtail(cmd: LongtailCmd) -> Result<()> {
    match cmd {
        LongtailCmd::Splits {
            preds,
            labels,
            classes,
            out,
        } => {
            let (preds, labels) = (read_indices(&preds)?, read_indices(&labels)?);
            let k = classes.unwrap_or_else(|| preds.iter().chain(&labels).max().map_or(0, |m| m + 1));
            let acc = per_class_accuracy(&preds, &labels, k)?;
            let splits = assign_splits(&acc);
            let mut w = io::stdout_csv();
            w.write_record(["class_index", "accuracy", "split"])?;
            for (c, (a, s)) in acc.iter().zip(&splits.splits).enumerate() {
                w.write_record([c.to_string(), a.map(|a| a.to_string()).unwrap_or_default(), s.as_str().into()])?;
            }
            w.flush()?;
            if let Some(out) = out {
                io::write_text(&out, &serde_json::to_string_pretty(&splits)?)?;
            }
            Ok(())
        }
        LongtailCmd::Recompose {
            head,
            cal,
            splits,
            k,
            steps,
            step_size,
            seed,
            out,
            record,
            test,
        } => {
            let head = load_head(&head).with_context(|| head.display().to_string())?;
            let cal = io::features(&cal)?;
            let splits = match splits {
                Some(p) => serde_json::from_str(&io::text(&p)?)?,
                None => splits_from(&head, &cal)?,
            };
            let config = RecomposeConfig {
                k_neighbors: k,
                steps,
                step_size,
                seed,
            };
            let r = recompose_head(&head, &splits, &cal, &config)?;
            for w in &r.record.warnings {
                tracing::warn!("{w}");
            }
            write_head(&out, &r.head)?;
            let record = record.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".json");
                p.into()
            });
            io::write_text(&record, &serde_json::to_string_pretty(&r.record)?)?;
            if let Some(test) = test {
                let delta = evaluate_delta(&head, &r.head, &io::features(&test)?, &splits)?;
                io::println(&serde_json::to_string(&delta)?)?;
            }
            Ok(())
        }
    }
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let table = io::logits(&args.logits)?;
    let report = evaluate(&table)?;
    let text = report.to_json()?;
    match &args.out {
        Some(p) => io::write_text(p, &text)?,
        None => io::println(&text)?,
    }
    if let Some(p) = &args.class_csv {
        let map = match &args.class_map {
            Some(m) => Some(formats::read_class_map(
                std::fs::File::open(m).with_context(|| m.display().to_string())?,
            )?),
            None => None,
        };
        report.write_class_csv(io::create(p)?, map.as_ref())?;
    }
    Ok(())
}

pub fn synth(spec: &Path, out_features: &Path, out_head: &Path, format: io::Format) -> Result<()> {
    let spec: SyntheticSpec =
        serde_json::from_str(&io::text(spec)?).with_context(|| format!("parsing {}", spec.display()))?;
    let (features, head) = generate_synthetic(&spec)?;
    write_features(out_features, &features, format.into())?;
    write_head(out_head, &head)?;
    io::println(&format!(
        "rows={} classes={} dim={} rng={}",
        features.len(),
        head.class_count(),
        head.dim(),
        trustgate_core::RNG_ALGORITHM
    ))
}
