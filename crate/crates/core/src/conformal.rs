//! Split conformal prediction.
//!
//! Calibration turns the nonconformity scores `s_i = 1 - p_i(true label)` of
//! a held-out calibration set into a threshold `qhat`: the
//! `⌈(n+1)(1-α)⌉`-th smallest score. At prediction time every class whose
//! score `1 - p_k` is strictly below `qhat` enters the set, and the argmax
//! class is always kept so the set is never empty. Under exchangeability the
//! set contains the true label with probability at least `1 - α`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::prob::{softmax, ProbVector};
use crate::{Error, LogitTable, Result};

pub const CALIBRATION_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScheme {
    OneMinusTrueProb,
}

/// One score per calibration row, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonconformityScores(Vec<f64>);

impl NonconformityScores {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidInput(format!(
                "nonconformity score {s} outside [0, 1]"
            )));
        }
        Ok(NonconformityScores(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn nonconformity_scores(table: &LogitTable) -> Result<NonconformityScores> {
    let labels = table.require_labels("nonconformity scoring")?;
    let scores = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| Ok(1.0 - softmax(table.row(i))?.as_slice()[y]))
        .collect::<Result<Vec<_>>>()?;
    Ok(NonconformityScores(scores))
}

/// Fitted conformal threshold. Immutable once produced by [`calibrate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalCalibration {
    pub version: u32,
    pub alpha: f64,
    pub n: usize,
    pub qhat: f64,
    pub score_scheme: ScoreScheme,
    /// Seed of the calibration/test split, when the artifact was fit from a split.
    pub split_seed: Option<u64>,
    pub created_at: String,
}

/// `⌈(n+1)(1-α)⌉`, snapping products within rounding error of an integer.
///
/// `(n+1) * 0.9` for `n = 9` is `9.000000000000002` in binary floating point;
/// the plain ceiling would give 10.
pub fn order_statistic_rank(n: usize, alpha: f64) -> usize {
    let x = (n as f64 + 1.0) * (1.0 - alpha);
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

pub fn calibrate(scores: &NonconformityScores, alpha: f64) -> Result<ConformalCalibration> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha = {alpha} must lie in (0, 1)"
        )));
    }
    let n = scores.len();
    if n == 0 {
        return Err(Error::InsufficientCalibrationData(
            "no calibration scores".into(),
        ));
    }
    let rank = order_statistic_rank(n, alpha);
    let qhat = if rank > n {
        1.0
    } else {
        let mut sorted = scores.as_slice().to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted[rank - 1]
    };
    Ok(ConformalCalibration {
        version: CALIBRATION_VERSION,
        alpha,
        n,
        qhat,
        score_scheme: ScoreScheme::OneMinusTrueProb,
        split_seed: None,
        created_at: now_rfc3339(),
    })
}

pub(crate) fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl ConformalCalibration {
    /// Level `⌈(n+1)(1-α)⌉ / n`; above 1 means the full-set fallback applies.
    pub fn level(&self) -> f64 {
        order_statistic_rank(self.n, self.alpha) as f64 / self.n as f64
    }

    /// Classes in the prediction set, ascending by index.
    pub fn predict_set(&self, probs: &ProbVector) -> Vec<usize> {
        predict_set(probs, self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cal: ConformalCalibration = serde_json::from_str(text)?;
        if cal.version != CALIBRATION_VERSION {
            return Err(Error::Version {
                found: cal.version,
                expected: CALIBRATION_VERSION,
            });
        }
        // qhat may be exactly 0 when the order statistic is a perfectly confident row.
        if !(cal.alpha > 0.0 && cal.alpha < 1.0) || cal.n == 0 || !(0.0..=1.0).contains(&cal.qhat) {
            return Err(Error::InvalidInput(
                "calibration artifact out of range".into(),
            ));
        }
        Ok(cal)
    }
}

/// `{k : 1 - p_k < qhat} ∪ {argmax}`; `qhat ≥ 1` is the full-set fallback and
/// keeps every class, including ones whose probability underflowed to zero.
pub fn predict_set(probs: &ProbVector, cal: &ConformalCalibration) -> Vec<usize> {
    if cal.qhat >= 1.0 {
        return (0..probs.len()).collect();
    }
    let top = probs.argmax();
    probs
        .as_slice()
        .iter()
        .enumerate()
        .filter(|&(k, p)| k == top || 1.0 - p < cal.qhat)
        .map(|(k, _)| k)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub empirical_coverage: f64,
    pub mean_set_size: f64,
    /// `set_size_histogram[s]` counts rows whose set has `s` members.
    pub set_size_histogram: Vec<usize>,
    pub rows: usize,
}

pub fn evaluate_coverage(test: &LogitTable, cal: &ConformalCalibration) -> Result<CoverageReport> {
    let labels = test.require_labels("coverage evaluation")?;
    if test.is_empty() {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    let mut hist = vec![0usize; test.class_count() + 1];
    let mut covered = 0usize;
    let mut total_size = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        let set = predict_set(&softmax(test.row(i))?, cal);
        if set.binary_search(&y).is_ok() {
            covered += 1;
        }
        total_size += set.len();
        hist[set.len()] += 1;
    }
    let n = test.len() as f64;
    Ok(CoverageReport {
        empirical_coverage: covered as f64 / n,
        mean_set_size: total_size as f64 / n,
        set_size_histogram: hist,
        rows: test.len(),
    })
}

/// Seeded 50/50 split of held-out labeled rows into (calibration, test).
///
/// With an odd row count the extra row goes to the test half.
pub fn split_calibration_test(table: &LogitTable, seed: u64) -> (LogitTable, LogitTable) {
    let mut idx: Vec<usize> = (0..table.len()).collect();
    idx.shuffle(&mut crate::seeded_rng(seed));
    let half = table.len() / 2;
    (table.select(&idx[..half]), table.select(&idx[half..]))
}

/// Calibrate on a seeded 50/50 split and record the seed in the artifact.
pub fn calibrate_split(
    table: &LogitTable,
    alpha: f64,
    seed: u64,
) -> Result<(ConformalCalibration, CoverageReport)> {
    let (cal_half, test_half) = split_calibration_test(table, seed);
    let mut cal = calibrate(&nonconformity_scores(&cal_half)?, alpha)?;
    cal.split_seed = Some(seed);
    let report = evaluate_coverage(&test_half, &cal)?;
    Ok((cal, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Matrix;
    use proptest::prelude::*;

    fn scores(v: &[f64]) -> NonconformityScores {
        NonconformityScores::new(v.to_vec()).unwrap()
    }

    fn cal_with(qhat: f64) -> ConformalCalibration {
        ConformalCalibration {
            version: CALIBRATION_VERSION,
            alpha: 0.1,
            n: 10,
            qhat,
            score_scheme: ScoreScheme::OneMinusTrueProb,
            split_seed: None,
            created_at: String::new(),
        }
    }

    /// Exact integer oracle: α = num/den, rank = ⌈(n+1)(den-num)/den⌉.
    fn oracle_qhat(values: &[f64], num: usize, den: usize) -> f64 {
        let n = values.len();
        let rank = ((n + 1) * (den - num)).div_ceil(den);
        if rank > n {
            return 1.0;
        }
        let mut s = values.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s[rank - 1]
    }

    #[test]
    fn nonconformity_examples() {
        let z = [0.0, 0.0];
        let t = LogitTable::with_row_ids(Matrix::new(1, 2, z.to_vec()).unwrap(), Some(vec![0])).unwrap();
        assert_eq!(nonconformity_scores(&t).unwrap().as_slice(), &[0.5]);

        // p_true = 0.9 via logits [ln 9, 0]
        let t = LogitTable::with_row_ids(
            Matrix::new(1, 2, vec![9f64.ln(), 0.0]).unwrap(),
            Some(vec![0]),
        )
        .unwrap();
        assert!((nonconformity_scores(&t).unwrap().as_slice()[0] - 0.1).abs() < 1e-15);

        let t = LogitTable::with_row_ids(
            Matrix::new(1, 3, vec![1000.0, 0.0, 0.0]).unwrap(),
            Some(vec![0]),
        )
        .unwrap();
        assert_eq!(nonconformity_scores(&t).unwrap().as_slice(), &[0.0]);

        let unlabeled = LogitTable::with_row_ids(Matrix::new(1, 2, vec![0.0; 2]).unwrap(), None).unwrap();
        assert!(matches!(nonconformity_scores(&unlabeled), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn calibrate_examples() {
        let cal = calibrate(&scores(&[0.1, 0.2, 0.3, 0.4]), 0.5).unwrap();
        assert_eq!(cal.qhat, oracle_qhat(&[0.1, 0.2, 0.3, 0.4], 1, 2));
        assert_eq!(cal.qhat, 0.3);
        assert_eq!(cal.level(), 0.75);

        let s: Vec<f64> = (1..=99).map(|i| i as f64 / 100.0).collect();
        let cal = calibrate(&scores(&s), 0.025).unwrap();
        assert_eq!(cal.qhat, oracle_qhat(&s, 1, 40));
        assert_eq!(cal.qhat, 0.98);

        let cal = calibrate(&scores(&[0.1, 0.2, 0.3]), 0.025).unwrap();
        assert!(cal.level() > 1.0);
        assert_eq!(cal.qhat, 1.0);
    }

    #[test]
    fn calibrate_errors() {
        assert!(matches!(
            calibrate(&scores(&[]), 0.1),
            Err(Error::InsufficientCalibrationData(_))
        ));
        assert!(calibrate(&scores(&[0.1]), 0.0).is_err());
        assert!(calibrate(&scores(&[0.1]), 1.0).is_err());
    }

    #[test]
    fn rank_snapping() {
        assert_eq!(order_statistic_rank(9, 0.1), 9);
        assert_eq!(order_statistic_rank(39, 0.025), 39);
        assert_eq!(order_statistic_rank(99, 0.025), 98);
    }

    #[test]
    fn predict_set_examples() {
        let p = ProbVector::new(vec![0.5, 0.3, 0.15, 0.05]).unwrap();
        assert_eq!(predict_set(&p, &cal_with(0.6)), vec![0]);
        assert_eq!(predict_set(&p, &cal_with(0.98)), vec![0, 1, 2, 3]);
        let one_hot = ProbVector::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(predict_set(&one_hot, &cal_with(0.3)), vec![1]);
        // score exactly at qhat is excluded
        assert_eq!(predict_set(&p, &cal_with(0.7)), vec![0]);
        // diffuse probs with tiny qhat still keep the argmax
        let flat = ProbVector::new(vec![0.25; 4]).unwrap();
        assert_eq!(predict_set(&flat, &cal_with(0.01)), vec![0]);
    }

    #[test]
    fn coverage_examples() {
        let rows = vec![vec![50.0, 0.0, 0.0], vec![0.0, 50.0, 0.0], vec![0.0, 0.0, 50.0]];
        let t = LogitTable::with_row_ids(Matrix::from_rows(&rows).unwrap(), Some(vec![0, 1, 2])).unwrap();
        let r = evaluate_coverage(&t, &cal_with(0.5)).unwrap();
        assert_eq!(r.empirical_coverage, 1.0);
        assert_eq!(r.mean_set_size, 1.0);
        assert_eq!(r.set_size_histogram, vec![0, 3, 0, 0]);

        let r = evaluate_coverage(&t, &cal_with(1.0)).unwrap();
        assert_eq!(r.empirical_coverage, 1.0);
        assert_eq!(r.mean_set_size, 3.0);

        let empty = LogitTable::with_row_ids(Matrix::zeros(0, 3), Some(vec![])).unwrap();
        assert!(matches!(evaluate_coverage(&empty, &cal_with(0.5)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn artifact_round_trip() {
        let mut cal = calibrate(&scores(&[0.1, 0.2, 0.3, 0.4]), 0.5).unwrap();
        cal.split_seed = Some(7);
        let text = cal.to_json().unwrap();
        assert!(text.contains("\"score_scheme\": \"one_minus_true_prob\""));
        assert_eq!(ConformalCalibration::from_json(&text).unwrap(), cal);
        let bumped = text.replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(ConformalCalibration::from_json(&bumped), Err(Error::Version { .. })));
    }

    #[test]
    fn split_is_seeded_and_even() {
        let m = Matrix::new(11, 2, (0..22).map(|v| v as f64).collect()).unwrap();
        let t = LogitTable::with_row_ids(m, Some(vec![0; 11])).unwrap();
        let (a, b) = split_calibration_test(&t, 3);
        let (a2, b2) = split_calibration_test(&t, 3);
        assert_eq!((a.len(), b.len()), (5, 6));
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        let mut ids: Vec<String> = a.item_ids().iter().chain(b.item_ids()).cloned().collect();
        ids.sort_by_key(|s| s.parse::<usize>().unwrap());
        assert_eq!(ids, (0..11).map(|i| i.to_string()).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn matches_oracle(values in prop::collection::vec(0.0f64..=1.0, 1..200)) {
            for (num, den) in [(1, 2), (1, 10), (1, 40)] {
                let alpha = num as f64 / den as f64;
                let cal = calibrate(&scores(&values), alpha).unwrap();
                prop_assert_eq!(cal.qhat, oracle_qhat(&values, num, den));
            }
        }

        #[test]
        fn qhat_monotone_and_sets_nested(
            values in prop::collection::vec(0.0f64..=1.0, 1..100),
            probs in prop::collection::vec(0.0f64..1.0, 2..8),
        ) {
            let s: f64 = probs.iter().sum::<f64>().max(1e-12);
            let p = ProbVector::new(probs.iter().map(|v| v / s).collect());
            prop_assume!(p.is_ok());
            let p = p.unwrap();
            let strict = calibrate(&scores(&values), 0.025).unwrap();
            let loose = calibrate(&scores(&values), 0.1).unwrap();
            prop_assert!(strict.qhat >= loose.qhat);
            let big = predict_set(&p, &strict);
            let small = predict_set(&p, &loose);
            prop_assert!(small.iter().all(|k| big.contains(k)));
            prop_assert!(big.contains(&p.argmax()));
        }
    }
}
