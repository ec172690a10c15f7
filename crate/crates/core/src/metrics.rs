//! Evaluation reports over labeled logit tables.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::longtail::{per_class_accuracy, Split};
use crate::ood::{detection_accuracy, Objective};
use crate::prob::softmax;
use crate::{ClassIndexMap, Error, LogitTable, Result};

pub const REPORT_VERSION: u32 = 1;
pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class_index: usize,
    pub n_test: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub rows: usize,
    pub top1: f64,
    /// Top-5, or top-K when there are fewer than five classes.
    pub top5: f64,
    pub mean_per_class: f64,
    pub histogram: Vec<usize>,
    pub class_count_evaluated: usize,
    pub below_80_fraction: f64,
    pub per_class: Vec<ClassRow>,
}

/// Number of classes ranked strictly ahead of `class` (higher probability,
/// or equal probability and lower index).
fn rank_of(probs: &[f64], class: usize) -> usize {
    let p = probs[class];
    probs
        .iter()
        .enumerate()
        .filter(|&(c, &q)| q > p || (q == p && c < class))
        .count()
}

pub fn evaluate(table: &LogitTable) -> Result<EvalReport> {
    let labels = table.require_labels("evaluation")?;
    if table.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate an empty table".into()));
    }
    let k = table.class_count();
    let mut top1 = 0usize;
    let mut top5 = 0usize;
    let mut preds = Vec::with_capacity(table.len());
    for (i, &y) in labels.iter().enumerate() {
        let p = softmax(table.row(i))?;
        let rank = rank_of(p.as_slice(), y);
        top1 += usize::from(rank == 0);
        top5 += usize::from(rank < 5);
        preds.push(p.argmax());
    }
    let acc = per_class_accuracy(&preds, labels, k)?;
    let mut counts = vec![0usize; k];
    for &y in labels {
        counts[y] += 1;
    }
    let present: Vec<f64> = acc.iter().flatten().copied().collect();
    let histogram = histogram(&present, HISTOGRAM_BINS);
    let below: usize = histogram.iter().take(HISTOGRAM_BINS * 8 / 10).sum();
    let n = table.len() as f64;
    Ok(EvalReport {
        version: REPORT_VERSION,
        rows: table.len(),
        top1: top1 as f64 / n,
        top5: top5 as f64 / n,
        mean_per_class: present.iter().sum::<f64>() / present.len() as f64,
        histogram,
        class_count_evaluated: present.len(),
        below_80_fraction: below as f64 / present.len() as f64,
        per_class: acc
            .iter()
            .zip(&counts)
            .enumerate()
            .map(|(class_index, (a, &n_test))| ClassRow {
                class_index,
                n_test,
                accuracy: *a,
            })
            .collect(),
    })
}

/// Equal-width bins over `[0, 1]`; bin `i` holds `[i/bins, (i+1)/bins)` and
/// the last bin also holds 1.0.
pub fn histogram(acc: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    if bins == 0 {
        return counts;
    }
    for &a in acc {
        let bin = (1..bins)
            .take_while(|&i| a >= i as f64 / bins as f64)
            .count();
        counts[bin] += 1;
    }
    counts
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-class rows as `taxon_id,n_test,accuracy,split`. Classes without
    /// test rows get an empty accuracy and the few split.
    pub fn write_class_csv<W: Write>(&self, writer: W, class_map: Option<&ClassIndexMap>) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["taxon_id", "n_test", "accuracy", "split"])
            .map_err(csv_io)?;
        for row in &self.per_class {
            let taxon = match class_map {
                Some(m) => m.taxon(row.class_index).ok_or_else(|| {
                    Error::NotFound(format!("class {} missing from class map", row.class_index))
                })?,
                None => row.class_index as i64,
            };
            w.write_record([
                taxon.to_string(),
                row.n_test.to_string(),
                row.accuracy.map(|a| a.to_string()).unwrap_or_default(),
                Split::of(row.accuracy).as_str().to_string(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSummary {
    pub threshold: f64,
    pub balanced_accuracy: f64,
    pub plain_accuracy: f64,
    pub id_kept_rate: f64,
    pub ood_flagged_rate: f64,
    pub id_count: usize,
    pub ood_count: usize,
}

/// Detection quality of a fixed threshold on labeled ID/OOD energies.
pub fn ood_summary(id_energies: &[f64], ood_energies: &[f64], threshold: f64) -> Result<OodSummary> {
    if id_energies.is_empty() || ood_energies.is_empty() {
        return Err(Error::InsufficientData("need both ID and OOD energies".into()));
    }
    let kept = id_energies.iter().filter(|e| **e < threshold).count();
    let flagged = ood_energies.iter().filter(|e| **e >= threshold).count();
    Ok(OodSummary {
        threshold,
        balanced_accuracy: detection_accuracy(id_energies, ood_energies, threshold, Objective::Balanced),
        plain_accuracy: detection_accuracy(id_energies, ood_energies, threshold, Objective::Plain),
        id_kept_rate: kept as f64 / id_energies.len() as f64,
        ood_flagged_rate: flagged as f64 / ood_energies.len() as f64,
        id_count: id_energies.len(),
        ood_count: ood_energies.len(),
    })
}
