//! Stratified k-fold cross-validation, confusion matrices and per-label metrics.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{self, CnnArchitecture, EpochStats, Example, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::target::TargetLabel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    /// Fold index per sample.
    pub folds: Vec<usize>,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] != fold).collect()
    }
}

/// Shuffle each class with its own seeded stream, then deal its samples to
/// folds round-robin.
pub fn make_folds(labels: &[TargetLabel], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut folds = vec![usize::MAX; labels.len()];
    for class in TargetLabel::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::Data(format!(
                "class {class} has {} samples, fewer than the {k} folds",
                members.len()
            )));
        }
        let mut rng = rng::stream(seed, Domain::Folds, class.index() as u64);
        members.shuffle(&mut rng);
        for (pos, i) in members.into_iter().enumerate() {
            folds[i] = pos % k;
        }
    }
    Ok(FoldAssignment { k, folds })
}

/// Rows are actual labels, columns predicted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Array2<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            counts: Array2::zeros((n, n)),
        }
    }

    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut m = Self::new(n);
        for (actual, predicted) in pairs {
            m.record(actual, predicted)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, actual: usize, predicted: usize) -> Result<()> {
        let n = self.counts.nrows();
        if actual >= n || predicted >= n {
            return Err(Error::Dimension(format!(
                "label pair ({actual}, {predicted}) outside a {n}-class matrix"
            )));
        }
        self.counts[[actual, predicted]] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }

    pub fn as_f64(&self) -> Array2<f64> {
        self.counts.mapv(|c| c as f64)
    }
}

/// Element-wise mean of per-fold count matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedConfusion {
    pub mean: Array2<f64>,
}

impl AveragedConfusion {
    pub fn from_folds(folds: &[ConfusionMatrix]) -> Result<Self> {
        let first = folds
            .first()
            .ok_or_else(|| Error::Data("no fold matrices to average".into()))?;
        let dim = first.counts.dim();
        let mut sum = Array2::<f64>::zeros(dim);
        for f in folds {
            if f.counts.dim() != dim {
                return Err(Error::Dimension("fold matrices differ in size".into()));
            }
            sum += &f.as_f64();
        }
        Ok(Self {
            mean: sum / folds.len() as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    /// `None` when the class has no actual samples.
    pub recall: Option<f64>,
    /// `None` when nothing was predicted as this class.
    pub precision: Option<f64>,
    /// `None` when either input is undefined; 0 when both are 0.
    pub f_measure: Option<f64>,
    /// Same as recall.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub per_label: Vec<LabelRow>,
    pub overall_accuracy: f64,
    /// Mean of the defined recalls.
    pub macro_recall: f64,
}

/// `2PR / (P + R)`, 0 when `P + R = 0`.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Metrics from a square matrix of counts or mean counts.
pub fn metrics(conf: &Array2<f64>) -> Result<LabelMetrics> {
    let (r, c) = conf.dim();
    if r != c || r == 0 {
        return Err(Error::Dimension(format!("confusion matrix must be square, got {r}x{c}")));
    }
    if conf.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Data("confusion entries must be finite and >= 0".into()));
    }
    let total = conf.sum();
    if total <= 0.0 {
        return Err(Error::Data("confusion matrix is empty".into()));
    }
    let ratio = |num: f64, den: f64| (den > 0.0).then(|| num / den);
    let per_label: Vec<LabelRow> = (0..r)
        .map(|i| {
            let diag = conf[[i, i]];
            let recall = ratio(diag, conf.row(i).sum());
            let precision = ratio(diag, conf.column(i).sum());
            let f = match (precision, recall) {
                (Some(p), Some(rc)) => Some(f_measure(p, rc)),
                _ => None,
            };
            LabelRow {
                recall,
                precision,
                f_measure: f,
                accuracy: recall,
            }
        })
        .collect();
    let trace: f64 = (0..r).map(|i| conf[[i, i]]).sum();
    let recalls: Vec<f64> = per_label.iter().filter_map(|l| l.recall).collect();
    Ok(LabelMetrics {
        overall_accuracy: trace / total,
        macro_recall: recalls.iter().sum::<f64>() / recalls.len() as f64,
        per_label,
    })
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: LabelMetrics,
    pub history: Vec<EpochStats>,
}

#[derive(Debug, Clone)]
pub struct CvReport {
    pub assignment: FoldAssignment,
    pub folds: Vec<FoldResult>,
    pub averaged: AveragedConfusion,
    pub metrics: LabelMetrics,
}

/// What a learner hands back for one fold.
pub struct FoldOutput {
    /// Predicted label per test index, in the order given.
    pub predictions: Vec<TargetLabel>,
    pub history: Vec<EpochStats>,
}

/// Cross-validate any learner. `fit_predict(fold, train, test)` trains on the
/// `train` indices and predicts the `test` indices.
pub fn run_cv_with<F>(labels: &[TargetLabel], k: usize, master_seed: u64, fit_predict: F) -> Result<CvReport>
where
    F: Fn(usize, &[usize], &[usize]) -> Result<FoldOutput> + Sync,
{
    let assignment = make_folds(labels, k, master_seed)?;
    let folds: Vec<FoldResult> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let train = assignment.train_indices(fold);
            let test = assignment.test_indices(fold);
            let out = fit_predict(fold, &train, &test).map_err(|e| match e {
                Error::Divergence { epoch, .. } => Error::Divergence {
                    epoch,
                    fold: Some(fold),
                },
                other => other,
            })?;
            if out.predictions.len() != test.len() {
                return Err(Error::Dimension(format!(
                    "fold {fold}: {} predictions for {} test samples",
                    out.predictions.len(),
                    test.len()
                )));
            }
            let confusion = ConfusionMatrix::from_pairs(
                TargetLabel::COUNT,
                test.iter()
                    .zip(&out.predictions)
                    .map(|(&i, p)| (labels[i].index(), p.index())),
            )?;
            Ok(FoldResult {
                fold,
                metrics: metrics(&confusion.as_f64())?,
                confusion,
                history: out.history,
            })
        })
        .collect::<Result<_>>()?;
    let matrices: Vec<ConfusionMatrix> = folds.iter().map(|f| f.confusion.clone()).collect();
    let averaged = AveragedConfusion::from_folds(&matrices)?;
    Ok(CvReport {
        assignment,
        metrics: metrics(&averaged.mean)?,
        averaged,
        folds,
    })
}

/// Seed for fold `fold`'s weight init and shuffling.
pub fn fold_seed(master_seed: u64, fold: usize) -> u64 {
    rng::derive_seed(master_seed, Domain::Training, fold as u64)
}

/// Cross-validate the CNN on `data`; `train_config.rng_seed` is replaced per
/// fold by a seed derived from `master_seed`.
pub fn run_cv(
    data: &[Example],
    arch: CnnArchitecture,
    train_config: &TrainConfig,
    k: usize,
    master_seed: u64,
) -> Result<CvReport> {
    let labels: Vec<TargetLabel> = data
        .iter()
        .map(|e| {
            TargetLabel::from_index(e.label)
                .ok_or_else(|| Error::Data(format!("label index {} out of range", e.label)))
        })
        .collect::<Result<_>>()?;
    run_cv_with(&labels, k, master_seed, |fold, train, test| {
        let train_set: Vec<Example> = train.iter().map(|&i| data[i].clone()).collect();
        let cfg = TrainConfig {
            rng_seed: fold_seed(master_seed, fold),
            ..train_config.clone()
        };
        let out = classifier::train(&train_set, arch, &cfg)?;
        let predictions = test
            .iter()
            .map(|&i| classifier::forward_chw(&out.params, &data[i].input).map(|p| p.label))
            .collect::<Result<_>>()?;
        Ok(FoldOutput {
            predictions,
            history: out.history,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn balanced(per_class: usize) -> Vec<TargetLabel> {
        (0..per_class * 5).map(|i| TargetLabel::ALL[i % 5]).collect()
    }

    #[test]
    fn five_per_class_gives_one_per_fold() {
        let labels = balanced(5);
        let a = make_folds(&labels, 5, 1).unwrap();
        for f in 0..5 {
            let test = a.test_indices(f);
            assert_eq!(test.len(), 5);
            for c in TargetLabel::ALL {
                assert_eq!(test.iter().filter(|&&i| labels[i] == c).count(), 1);
            }
        }
        assert_eq!(a, make_folds(&labels, 5, 1).unwrap());
    }

    #[test]
    fn uneven_classes_stay_stratified() {
        // 503 samples with skewed class sizes.
        let sizes = [140, 101, 97, 88, 77];
        let mut labels = Vec::new();
        for (c, &n) in sizes.iter().enumerate() {
            labels.extend(std::iter::repeat(TargetLabel::ALL[c]).take(n));
        }
        assert_eq!(labels.len(), 503);
        let a = make_folds(&labels, 5, 42).unwrap();
        for c in TargetLabel::ALL {
            let counts: Vec<usize> = (0..5)
                .map(|f| (0..labels.len()).filter(|&i| labels[i] == c && a.folds[i] == f).count())
                .collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "{c}: {counts:?}");
        }
        assert!(a.folds.iter().all(|&f| f < 5));
    }

    #[test]
    fn small_class_is_named() {
        let mut labels = balanced(5);
        labels.retain(|&l| l != TargetLabel::T);
        labels.extend([TargetLabel::T; 3]);
        match make_folds(&labels, 5, 0) {
            Err(Error::Data(msg)) => assert!(msg.contains("class T")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_class_hand_example() {
        let m = metrics(&array![[3.0, 1.0], [0.0, 4.0]]).unwrap();
        assert_eq!(m.per_label[0].recall, Some(0.75));
        assert_eq!(m.per_label[0].precision, Some(1.0));
        assert!((m.per_label[0].f_measure.unwrap() - 0.857142857).abs() < 1e-6);
        assert_eq!(m.overall_accuracy, 0.875);
        assert_eq!(m.per_label[0].accuracy, m.per_label[0].recall);
    }

    #[test]
    fn identity_matrix_is_perfect() {
        let m = metrics(&Array2::eye(5)).unwrap();
        for row in &m.per_label {
            assert_eq!(row.recall, Some(1.0));
            assert_eq!(row.precision, Some(1.0));
            assert_eq!(row.f_measure, Some(1.0));
        }
        assert_eq!(m.overall_accuracy, 1.0);
        assert_eq!(m.macro_recall, 1.0);
    }

    #[test]
    fn empty_column_is_undefined_not_nan() {
        let m = metrics(&array![[2.0, 0.0], [3.0, 0.0]]).unwrap();
        assert_eq!(m.per_label[1].precision, None);
        assert_eq!(m.per_label[1].recall, Some(0.0));
        assert_eq!(m.per_label[1].f_measure, None);
    }

    #[test]
    fn published_rows_are_self_consistent() {
        // (precision, recall, f) per label.
        let rows = [
            ("F", 0.9091, 0.9091, 0.9091),
            ("H", 0.9070, 0.8864, 0.8966),
            ("I", 0.8495, 0.8977, 0.8729),
            ("O", 0.9767, 1.0000, 0.9882),
            ("T", 0.9146, 0.8621, 0.8876),
        ];
        for (name, p, r, f) in rows {
            let got = f_measure(p, r);
            assert!((got - f).abs() <= 5e-4, "{name}: {got} vs {f}");
        }
    }

    #[test]
    fn constant_stub_fills_one_column() {
        let labels = balanced(6);
        let rep = run_cv_with(&labels, 5, 3, |_, _, test| {
            Ok(FoldOutput {
                predictions: vec![TargetLabel::O; test.len()],
                history: vec![],
            })
        })
        .unwrap();
        let o = TargetLabel::O.index();
        for ((_, j), &v) in rep.averaged.mean.indexed_iter() {
            if j != o {
                assert_eq!(v, 0.0);
            }
        }
        for (i, row) in rep.metrics.per_label.iter().enumerate() {
            assert_eq!(row.recall, Some(if i == o { 1.0 } else { 0.0 }));
        }
    }

    #[test]
    fn oracle_stub_is_perfect_and_average_is_mean() {
        let labels = balanced(7);
        let rep = run_cv_with(&labels, 5, 9, |_, _, test| {
            Ok(FoldOutput {
                predictions: test.iter().map(|&i| labels[i]).collect(),
                history: vec![],
            })
        })
        .unwrap();
        assert_eq!(rep.metrics.overall_accuracy, 1.0);
        let mut manual = Array2::<f64>::zeros((5, 5));
        for f in &rep.folds {
            manual += &f.confusion.as_f64();
        }
        manual /= 5.0;
        assert_eq!(manual, rep.averaged.mean);
        assert!((rep.averaged.mean.sum() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn divergence_carries_fold() {
        let labels = balanced(5);
        let err = run_cv_with(&labels, 5, 0, |fold, _, _| {
            if fold == 2 {
                Err(Error::Divergence { epoch: 4, fold: None })
            } else {
                Ok(FoldOutput {
                    predictions: vec![TargetLabel::F; 5],
                    history: vec![],
                })
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 4, fold: Some(2) }));
    }

    proptest! {
        #[test]
        fn metrics_are_scale_invariant(
            counts in proptest::collection::vec(0u32..50, 25),
            c in 0.1f64..100.0,
        ) {
            let m = Array2::from_shape_vec((5, 5), counts.iter().map(|&v| v as f64).collect()).unwrap();
            prop_assume!(m.sum() > 0.0);
            let a = metrics(&m).unwrap();
            let b = metrics(&m.mapv(|v| v * c)).unwrap();
            prop_assert!((a.overall_accuracy - b.overall_accuracy).abs() < 1e-12);
            for (x, y) in a.per_label.iter().zip(&b.per_label) {
                for (u, v) in [(x.recall, y.recall), (x.precision, y.precision), (x.f_measure, y.f_measure)] {
                    match (u, v) {
                        (Some(u), Some(v)) => prop_assert!((u - v).abs() < 1e-12),
                        (None, None) => {}
                        _ => prop_assert!(false, "definedness changed"),
                    }
                }
            }
        }
    }
}
