//! Long-tail diagnosis and post-hoc head recomposition.
//!
//! Classes are bucketed by per-class accuracy into few (`< 0.80`), medium
//! (`[0.80, 0.90]`) and many (`> 0.90`). Each few-split classifier row is
//! then recomposed as itself plus a learned combination of its most similar
//! many-split rows,
//!
//! ```text
//! w'_f = w_f + Σ_j α_j · v_j
//! ```
//!
//! with `α` starting at zero and fitted by gradient descent on the
//! cross-entropy of a class-balanced resample of a calibration set. The
//! backbone, the biases and every non-few row stay untouched.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::prob::logsumexp;
use crate::table::dot;
use crate::{ClassifierHead, Error, FeatureTable, Result};

pub const FEW_UPPER: f64 = 0.80;
pub const MANY_LOWER: f64 = 0.90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Few,
    Medium,
    Many,
}

impl Split {
    pub fn of(accuracy: Option<f64>) -> Split {
        match accuracy {
            None => Split::Few,
            Some(a) if a < FEW_UPPER => Split::Few,
            Some(a) if a <= MANY_LOWER => Split::Medium,
            Some(_) => Split::Many,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Few => "few",
            Split::Medium => "medium",
            Split::Many => "many",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub splits: Vec<Split>,
    pub boundaries: (f64, f64),
}

impl SplitAssignment {
    pub fn new(splits: Vec<Split>) -> Self {
        SplitAssignment {
            splits,
            boundaries: (FEW_UPPER, MANY_LOWER),
        }
    }

    pub fn get(&self, class: usize) -> Option<Split> {
        self.splits.get(class).copied()
    }

    pub fn classes_in(&self, split: Split) -> impl Iterator<Item = usize> + '_ {
        self.splits
            .iter()
            .enumerate()
            .filter(move |(_, s)| **s == split)
            .map(|(i, _)| i)
    }

    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }
}

/// Accuracy per class; `None` for classes without any labeled row.
pub fn per_class_accuracy(preds: &[usize], labels: &[usize], k: usize) -> Result<Vec<Option<f64>>> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut correct = vec![0usize; k];
    let mut total = vec![0usize; k];
    for (i, (&p, &y)) in preds.iter().zip(labels).enumerate() {
        if p >= k || y >= k {
            return Err(Error::InvalidInput(format!(
                "row {i}: class index outside [0, {k})"
            )));
        }
        total[y] += 1;
        if p == y {
            correct[y] += 1;
        }
    }
    Ok(correct
        .iter()
        .zip(&total)
        .map(|(&c, &t)| (t > 0).then(|| c as f64 / t as f64))
        .collect())
}

/// Absent classes go to the few split.
pub fn assign_splits(acc: &[Option<f64>]) -> SplitAssignment {
    SplitAssignment::new(acc.iter().map(|a| Split::of(*a)).collect())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// The `k_neighbors` many-split classes whose weight rows are most
/// cosine-similar to `class`'s row, most similar first.
pub fn nearest_strong(
    head: &ClassifierHead,
    class: usize,
    splits: &SplitAssignment,
    k_neighbors: usize,
) -> Result<Vec<usize>> {
    if class >= head.class_count() || splits.len() != head.class_count() {
        return Err(Error::InvalidInput(format!(
            "class {class} / {} split entries do not match a head with {} classes",
            splits.len(),
            head.class_count()
        )));
    }
    let target = head.row(class);
    let mut donors: Vec<(usize, f64)> = splits
        .classes_in(Split::Many)
        .filter(|&j| j != class)
        .map(|j| (j, cosine(target, head.row(j))))
        .collect();
    if donors.len() < k_neighbors {
        return Err(Error::InsufficientDonors {
            class,
            needed: k_neighbors,
            available: donors.len(),
        });
    }
    donors.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(donors.into_iter().take(k_neighbors).map(|(j, _)| j).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecomposeConfig {
    pub k_neighbors: usize,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for RecomposeConfig {
    fn default() -> Self {
        RecomposeConfig {
            k_neighbors: 5,
            steps: 200,
            step_size: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassComposition {
    pub class: usize,
    pub donors: Vec<usize>,
    pub alphas: Vec<f64>,
}

/// Reproducibility record written next to a recomposed head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecompositionRecord {
    pub config: RecomposeConfig,
    pub rng: String,
    pub compositions: Vec<ClassComposition>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recomposition {
    pub head: ClassifierHead,
    pub record: RecompositionRecord,
}

pub fn recompose_head(
    head: &ClassifierHead,
    splits: &SplitAssignment,
    cal: &FeatureTable,
    config: &RecomposeConfig,
) -> Result<Recomposition> {
    let k = head.class_count();
    if splits.len() != k {
        return Err(Error::InvalidInput(format!(
            "{} split entries for a head with {k} classes",
            splits.len()
        )));
    }
    if cal.is_empty() {
        return Err(Error::InsufficientCalibrationData(
            "calibration feature table is empty".into(),
        ));
    }
    if cal.dim() != head.dim() {
        return Err(Error::InvalidInput(format!(
            "calibration features have dimension {}, head expects {}",
            cal.dim(),
            head.dim()
        )));
    }
    if let Some(&y) = cal.labels().iter().find(|&&y| y >= k) {
        return Err(Error::InvalidInput(format!("calibration label {y} outside [0, {k})")));
    }

    let mut out = Recomposition {
        head: head.clone(),
        record: RecompositionRecord {
            config: config.clone(),
            rng: crate::RNG_ALGORITHM.to_string(),
            compositions: Vec::new(),
            warnings: Vec::new(),
        },
    };
    let few: Vec<usize> = splits.classes_in(Split::Few).collect();
    if config.k_neighbors == 0 {
        out.record
            .warnings
            .push("k_neighbors = 0: no donors, head returned unchanged".into());
        return Ok(out);
    }
    if few.is_empty() {
        return Ok(out);
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in cal.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    if let Some(&f) = few.iter().find(|&&f| by_class[f].is_empty()) {
        return Err(Error::InsufficientCalibrationData(format!(
            "few-split class {f} has no calibration samples"
        )));
    }
    let donors: Vec<Vec<usize>> = few
        .iter()
        .map(|&f| nearest_strong(head, f, splits, config.k_neighbors))
        .collect::<Result<_>>()?;

    let sample = balanced_resample(&by_class, config.seed);
    let base: Vec<Vec<f64>> = sample
        .iter()
        .map(|&i| head.logits(cal.row(i)))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = sample.iter().map(|&i| cal.labels()[i]).collect();

    let compositions: Vec<ClassComposition> = few
        .par_iter()
        .zip(donors.par_iter())
        .map(|(&f, donors)| {
            let alphas = fit_alphas(head, cal, &sample, &base, &labels, f, donors, config);
            ClassComposition {
                class: f,
                donors: donors.clone(),
                alphas,
            }
        })
        .collect();

    let mut new_head = head.clone();
    for c in &compositions {
        let row = new_head.row_mut(c.class);
        for (&j, &a) in c.donors.iter().zip(&c.alphas) {
            if a == 0.0 {
                continue;
            }
            for (w, v) in row.iter_mut().zip(head.row(j)) {
                *w += a * v;
            }
        }
    }
    out.head = new_head;
    out.record.compositions = compositions;
    Ok(out)
}

/// Every class with calibration rows contributes as many draws (with
/// replacement) as the largest class has rows.
fn balanced_resample(by_class: &[Vec<usize>], seed: u64) -> Vec<usize> {
    let per_class = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = crate::seeded_rng(seed);
    let mut sample = Vec::with_capacity(per_class * by_class.len());
    for rows in by_class.iter().filter(|r| !r.is_empty()) {
        for _ in 0..per_class {
            sample.push(rows[rng.random_range(0..rows.len())]);
        }
    }
    sample
}

/// Plain gradient descent on the mean cross-entropy over `sample`, moving
/// only class `f`'s logit: `z_f(α) = z_f + Σ_j α_j (v_j · x)`.
#[allow(clippy::too_many_arguments)]
fn fit_alphas(
    head: &ClassifierHead,
    cal: &FeatureTable,
    sample: &[usize],
    base: &[Vec<f64>],
    labels: &[usize],
    f: usize,
    donors: &[usize],
    config: &RecomposeConfig,
) -> Vec<f64> {
    let mut alphas = vec![0.0; donors.len()];
    if config.steps == 0 {
        return alphas;
    }
    // donor projections u[i][j] = v_j · x_i and the log-partition of the other classes
    let proj: Vec<Vec<f64>> = sample
        .iter()
        .map(|&i| donors.iter().map(|&j| dot(head.row(j), cal.row(i))).collect())
        .collect();
    let rest: Vec<f64> = base
        .iter()
        .map(|z| {
            let others: Vec<f64> = z
                .iter()
                .enumerate()
                .filter(|(c, _)| *c != f)
                .map(|(_, v)| *v)
                .collect();
            if others.is_empty() {
                f64::NEG_INFINITY
            } else {
                logsumexp(&others).expect("head logits are finite")
            }
        })
        .collect();

    let n = sample.len() as f64;
    let mut grad = vec![0.0; donors.len()];
    for _ in 0..config.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..sample.len() {
            let zf = base[i][f] + dot(&alphas, &proj[i]);
            // p_f = exp(z_f) / (exp(z_f) + exp(rest)) as a logistic
            let p = 1.0 / (1.0 + (rest[i] - zf).exp());
            let r = p - if labels[i] == f { 1.0 } else { 0.0 };
            for (g, u) in grad.iter_mut().zip(&proj[i]) {
                *g += r * u;
            }
        }
        for (a, g) in alphas.iter_mut().zip(&grad) {
            *a -= config.step_size * g / n;
        }
    }
    alphas
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub few_classes: Vec<usize>,
    /// Mean per-class accuracy over few-split classes present in the test set.
    pub few_acc_before: Option<f64>,
    pub few_acc_after: Option<f64>,
    pub overall_acc_before: f64,
    pub overall_acc_after: f64,
}

impl DeltaReport {
    pub fn few_gain(&self) -> Option<f64> {
        Some(self.few_acc_after? - self.few_acc_before?)
    }

    pub fn overall_drop(&self) -> f64 {
        self.overall_acc_before - self.overall_acc_after
    }
}

pub fn evaluate_delta(
    before: &ClassifierHead,
    after: &ClassifierHead,
    test: &FeatureTable,
    splits: &SplitAssignment,
) -> Result<DeltaReport> {
    if test.is_empty() {
        return Err(Error::InvalidInput("empty test table".into()));
    }
    if before.class_count() != after.class_count() || splits.len() != before.class_count() {
        return Err(Error::InvalidInput(
            "heads and split assignment disagree on the class count".into(),
        ));
    }
    let k = before.class_count();
    let few: Vec<usize> = splits.classes_in(Split::Few).collect();
    let eval = |head: &ClassifierHead| -> Result<(Option<f64>, f64)> {
        let preds: Vec<usize> = test
            .features()
            .iter_rows()
            .map(|x| head.predict(x))
            .collect::<Result<_>>()?;
        let acc = per_class_accuracy(&preds, test.labels(), k)?;
        let present: Vec<f64> = few.iter().filter_map(|&f| acc[f]).collect();
        let few_acc = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        let correct = preds.iter().zip(test.labels()).filter(|(p, y)| p == y).count();
        Ok((few_acc, correct as f64 / test.len() as f64))
    };
    let (few_acc_before, overall_acc_before) = eval(before)?;
    let (few_acc_after, overall_acc_after) = eval(after)?;
    Ok(DeltaReport {
        few_classes: few,
        few_acc_before,
        few_acc_after,
        overall_acc_before,
        overall_acc_after,
    })
}
