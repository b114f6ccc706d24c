//! Confusion matrices, macro-averaged metrics, and the experiment runners:
//! held-out evaluation, stratified k-fold cross-validation, learning curves
//! and drift evaluation.

use std::collections::HashMap;
use std::fmt::Write as _;

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, ClassId, ClassScheme, LabeledExample};
use crate::error::{Error, Result};
use crate::features::FeatureSpace;
use crate::pipeline::{label_indices, PipelineConfig, TimeWindow, TrainedPipeline};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    class_list: Vec<ClassId>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(class_list: Vec<ClassId>) -> Self {
        let k = class_list.len();
        Self {
            class_list,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(class_list: Vec<ClassId>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = class_list.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension(format!(
                "confusion matrix must be {k}x{k}"
            )));
        }
        Ok(Self { class_list, counts })
    }

    pub fn class_list(&self) -> &[ClassId] {
        &self.class_list
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.class_list.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn column_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total())
    }

    /// Micro-averaged (precision, recall). For single-label predictions both
    /// equal accuracy.
    pub fn micro_precision_recall(&self) -> (f64, f64) {
        let k = self.class_list.len();
        let tp: u64 = self.trace();
        let fp: u64 = (0..k).map(|j| self.column_sum(j) - self.counts[j][j]).sum();
        let fn_: u64 = (0..k).map(|i| self.row_sum(i) - self.counts[i][i]).sum();
        (ratio(tp, tp + fp), ratio(tp, tp + fn_))
    }

    /// Reorders classes: new class `i` is old class `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            class_list: order.iter().map(|&i| self.class_list[i].clone()).collect(),
            counts: order
                .iter()
                .map(|&i| order.iter().map(|&j| self.counts[i][j]).collect())
                .collect(),
        }
    }

    /// Sums the matrix into the scheme's coarse classes.
    pub fn coarsened(&self, scheme: &ClassScheme) -> Result<Self> {
        let target: Vec<usize> = self
            .class_list
            .iter()
            .map(|c| {
                let coarse = scheme.coarse_of(c).ok_or_else(|| Error::UnknownLabel {
                    label: c.to_string(),
                    line: 0,
                })?;
                Ok(scheme
                    .coarse_list()
                    .iter()
                    .position(|x| x == coarse)
                    .expect("coarse class in list"))
            })
            .collect::<Result<_>>()?;
        let mut out = Self::new(scheme.coarse_list().to_vec());
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                out.counts[target[i]][target[j]] += n;
            }
        }
        Ok(out)
    }

    /// Tab-separated table with class names as header row and first column.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for c in &self.class_list {
            s.push('\t');
            s.push_str(c.as_str());
        }
        s.push('\n');
        for (c, row) in self.class_list.iter().zip(&self.counts) {
            s.push_str(c.as_str());
            for n in row {
                let _ = write!(s, "\t{n}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidConfig("empty confusion matrix file".into()))?;
        let class_list: Vec<ClassId> = header
            .split('\t')
            .skip(1)
            .map(|c| ClassId::from(c.trim()))
            .collect();
        let mut counts = Vec::with_capacity(class_list.len());
        for (i, line) in lines.enumerate() {
            let mut cells = line.split('\t');
            let name = cells.next().unwrap_or("").trim();
            if class_list.get(i).map(ClassId::as_str) != Some(name) {
                return Err(Error::UnknownLabel {
                    label: name.to_owned(),
                    line: i + 2,
                });
            }
            let row = cells
                .map(|c| {
                    c.trim()
                        .parse::<u64>()
                        .map_err(|e| Error::InvalidConfig(format!("matrix line {}: {e}", i + 2)))
                })
                .collect::<Result<Vec<_>>>()?;
            counts.push(row);
        }
        Self::from_counts(class_list, counts)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Builds a matrix from (true, predicted) label pairs. Labels outside
/// `class_list` are reported by 1-based pair position.
pub fn confusion(pairs: &[(ClassId, ClassId)], class_list: &[ClassId]) -> Result<ConfusionMatrix> {
    let pos: HashMap<&ClassId, usize> =
        class_list.iter().enumerate().map(|(i, c)| (c, i)).collect();
    let mut m = ConfusionMatrix::new(class_list.to_vec());
    for (n, (t, p)) in pairs.iter().enumerate() {
        let lookup = |c: &ClassId| {
            pos.get(c).copied().ok_or_else(|| Error::UnknownLabel {
                label: c.to_string(),
                line: n + 1,
            })
        };
        m.add(lookup(t)?, lookup(p)?);
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: ClassId,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 per class; empty denominators give 0.
pub fn per_class_metrics(matrix: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..matrix.class_list.len())
        .map(|c| {
            let tp = matrix.get(c, c);
            let precision = ratio(tp, matrix.column_sum(c));
            let recall = ratio(tp, matrix.row_sum(c));
            ClassMetrics {
                class: matrix.class_list[c].clone(),
                precision,
                recall,
                f1: f1(precision, recall),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_window: Option<TimeWindow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_window: Option<TimeWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
    pub accuracy: f64,
    pub total: u64,
    pub matrix: ConfusionMatrix,
    pub metadata: ReportMeta,
}

/// Unweighted means of the per-class metrics, plus accuracy.
pub fn macro_report(matrix: &ConfusionMatrix) -> EvalReport {
    let per_class = per_class_metrics(matrix);
    let k = per_class.len().max(1) as f64;
    let macro_avg = MacroMetrics {
        precision: per_class.iter().map(|m| m.precision).sum::<f64>() / k,
        recall: per_class.iter().map(|m| m.recall).sum::<f64>() / k,
        f1: per_class.iter().map(|m| m.f1).sum::<f64>() / k,
    };
    EvalReport {
        per_class,
        macro_avg,
        accuracy: matrix.accuracy(),
        total: matrix.total(),
        matrix: matrix.clone(),
        metadata: ReportMeta::default(),
    }
}

impl EvalReport {
    pub fn with_meta(mut self, metadata: ReportMeta) -> Self {
        self.metadata = metadata;
        self
    }
}

fn pipeline_meta(p: &TrainedPipeline, protocol: &str) -> ReportMeta {
    ReportMeta {
        protocol: Some(protocol.into()),
        variant: Some(p.config.variant.to_string()),
        seed: Some(p.config.train.seed),
        training_size: Some(p.training_size()),
        train_window: p.train_window,
        ..Default::default()
    }
}

/// Evaluates a trained pipeline on a labeled test set.
pub fn evaluate(pipeline: &TrainedPipeline, test: &[LabeledExample]) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut meta = pipeline_meta(pipeline, "holdout");
    meta.test_window = TimeWindow::of(test);
    Ok(macro_report(&pipeline.confusion(test)?).with_meta(meta))
}

/// Evaluation on a test set harvested after the training data. The report
/// carries both time windows.
pub fn drift_eval(pipeline: &TrainedPipeline, later: &[LabeledExample]) -> Result<EvalReport> {
    let mut report = evaluate(pipeline, later)?;
    report.metadata.protocol = Some("drift".into());
    Ok(report)
}

/// Stratified fold id for every example. Within each class, a seeded shuffle
/// deals examples round-robin over the folds.
pub fn stratified_folds(
    corpus: &[LabeledExample],
    classes: &[ClassId],
    k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 folds, got {k}"
        )));
    }
    label_indices(corpus, classes)?;
    let mut fold = vec![usize::MAX; corpus.len()];
    for (class, mut members) in classes.iter().zip(corpus::group_by_class(corpus, classes)) {
        if members.len() < k {
            return Err(Error::ClassTooSmall {
                class: class.to_string(),
                size: members.len(),
                needed: k,
            });
        }
        let mut rng = corpus::class_rng(seed, class, corpus::FOLD_STREAM);
        members.shuffle(&mut rng);
        for (pos, i) in members.into_iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    Ok(fold)
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: EvalReport,
    pub fold_of: Vec<usize>,
    /// Predicted class index of every example, from the model of its fold.
    pub predictions: Vec<usize>,
    pub fold_spaces: Vec<FeatureSpace>,
}

/// k-fold cross-validation. Feature selection and training are redone on
/// each fold's training part; the report covers the union of all folds.
pub fn cross_validate(
    corpus: &[LabeledExample],
    classes: &[ClassId],
    k: usize,
    config: &PipelineConfig,
    seed: u64,
) -> Result<CvOutcome> {
    let fold_of = stratified_folds(corpus, classes, k, seed)?;
    let truth = label_indices(corpus, classes)?;
    let folds: Vec<(Vec<usize>, FeatureSpace, Vec<usize>)> = (0..k)
        .into_par_iter()
        .map(|f| {
            let (test_idx, train): (Vec<usize>, Vec<usize>) =
                (0..corpus.len()).partition(|&i| fold_of[i] == f);
            let train: Vec<LabeledExample> = train.into_iter().map(|i| corpus[i].clone()).collect();
            let pipeline = TrainedPipeline::fit(&train, classes, config)?;
            let texts: Vec<&str> = test_idx.iter().map(|&i| corpus[i].text.as_str()).collect();
            let predicted = pipeline.predict_all(&texts);
            Ok((test_idx, pipeline.feature_space, predicted))
        })
        .collect::<Result<_>>()?;
    let mut predictions = vec![usize::MAX; corpus.len()];
    let mut fold_spaces = Vec::with_capacity(k);
    for (test_idx, space, predicted) in folds {
        for (i, p) in test_idx.into_iter().zip(predicted) {
            predictions[i] = p;
        }
        fold_spaces.push(space);
    }
    let mut matrix = ConfusionMatrix::new(classes.to_vec());
    for (&t, &p) in truth.iter().zip(&predictions) {
        matrix.add(t, p);
    }
    let meta = ReportMeta {
        protocol: Some("cross-validation".into()),
        variant: Some(config.variant.to_string()),
        seed: Some(seed),
        training_size: Some(corpus.len()),
        folds: Some(k),
        train_window: TimeWindow::of(corpus),
        test_window: TimeWindow::of(corpus),
    };
    Ok(CvOutcome {
        report: macro_report(&matrix).with_meta(meta),
        fold_of,
        predictions,
        fold_spaces,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Requested total training size.
    pub size: usize,
    /// Examples actually used after per-class balancing.
    pub used: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub seed: u64,
}

/// Accuracy as a function of training size. Each size draws a balanced
/// sample of `size / |classes|` examples per class from `pool` (or
/// `per_class_cap` when given) and runs the full pipeline.
pub fn learning_curve(
    pool: &[LabeledExample],
    classes: &[ClassId],
    sizes: &[usize],
    test: &[LabeledExample],
    config: &PipelineConfig,
    seed: u64,
    per_class_cap: Option<usize>,
) -> Result<Vec<CurvePoint>> {
    if test.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    sizes
        .par_iter()
        .map(|&size| {
            if size > pool.len() {
                warn!(
                    "curve size {size} exceeds the pool of {}; using all of it",
                    pool.len()
                );
            }
            let cap = per_class_cap.unwrap_or_else(|| (size / classes.len()).max(1));
            let sample = corpus::balance_sample(pool, classes, cap, seed)?;
            let pipeline = TrainedPipeline::fit(&sample, classes, config)?;
            let report = macro_report(&pipeline.confusion(test)?);
            Ok(CurvePoint {
                size,
                used: sample.len(),
                accuracy: report.accuracy,
                macro_f1: report.macro_avg.f1,
                seed,
            })
        })
        .collect()
}

pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("size,accuracy,macro_f1,seed\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{}", p.size, p.accuracy, p.macro_f1, p.seed);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cl(names: &[&str]) -> Vec<ClassId> {
        names.iter().map(|&n| ClassId::from(n)).collect()
    }

    #[test]
    fn confusion_counts() {
        let pairs =
            [("A", "A"), ("A", "B"), ("B", "B")].map(|(t, p)| (ClassId::from(t), ClassId::from(p)));
        let m = confusion(&pairs, &cl(&["A", "B"])).unwrap();
        assert_eq!(m.counts(), &[vec![1, 1], vec![0, 1]]);
        let empty = confusion(&[], &cl(&["A", "B"])).unwrap();
        assert_eq!(empty.total(), 0);
        assert_eq!(empty.counts(), &[vec![0, 0], vec![0, 0]]);
        let bad = [(ClassId::from("A"), ClassId::from("Z"))];
        assert!(matches!(
            confusion(&bad, &cl(&["A"])),
            Err(Error::UnknownLabel { line: 1, .. })
        ));
    }

    #[test]
    fn diagonal_is_perfect() {
        let m = ConfusionMatrix::from_counts(
            cl(&["A", "B", "C"]),
            vec![vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 5]],
        )
        .unwrap();
        let r = macro_report(&m);
        assert!(r
            .per_class
            .iter()
            .all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(
            r.macro_avg,
            MacroMetrics {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
    }

    #[test]
    fn symmetric_two_class() {
        let m =
            ConfusionMatrix::from_counts(cl(&["A", "B"]), vec![vec![3, 1], vec![1, 3]]).unwrap();
        let r = macro_report(&m);
        for v in [
            r.macro_avg.precision,
            r.macro_avg.recall,
            r.macro_avg.f1,
            r.accuracy,
        ] {
            assert!((v - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn never_predicted_class_scores_zero() {
        let m =
            ConfusionMatrix::from_counts(cl(&["A", "B"]), vec![vec![2, 0], vec![2, 0]]).unwrap();
        let pc = per_class_metrics(&m);
        assert_eq!((pc[1].precision, pc[1].recall, pc[1].f1), (0.0, 0.0, 0.0));
        assert!((pc[0].precision - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tsv_round_trip() {
        let m =
            ConfusionMatrix::from_counts(cl(&["A&B", "C"]), vec![vec![1, 2], vec![3, 4]]).unwrap();
        let tsv = m.to_tsv();
        assert!(tsv.starts_with("true\\predicted\tA&B\tC\n"));
        assert_eq!(ConfusionMatrix::from_tsv(&tsv).unwrap(), m);
        assert!(ConfusionMatrix::from_tsv("x\tA\nB\t1\n").is_err());
    }

    #[test]
    fn random_predictions_near_chance() {
        let classes: Vec<ClassId> = (0..14).map(|i| ClassId::new(format!("c{i}"))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut m = ConfusionMatrix::new(classes);
        for i in 0..5000 {
            m.add(i % 14, rng.gen_range(0..14));
        }
        assert!(
            (m.accuracy() - 1.0 / 14.0).abs() <= 0.02,
            "{}",
            m.accuracy()
        );
    }

    #[test]
    fn folds_need_enough_examples() {
        let corpus: Vec<LabeledExample> = (0..5)
            .map(|i| LabeledExample::new(format!("t{i}"), if i < 4 { "A" } else { "B" }))
            .collect();
        let err = stratified_folds(&corpus, &cl(&["A", "B"]), 2, 0).unwrap_err();
        assert!(matches!(err, Error::ClassTooSmall { ref class, .. } if class == "B"));
        assert!(stratified_folds(&corpus, &cl(&["A", "B"]), 1, 0).is_err());
    }

    #[test]
    fn stratified_fold_sizes() {
        let corpus: Vec<LabeledExample> = (0..30)
            .map(|i| LabeledExample::new(format!("t{i}"), ["A", "B", "C"][i % 3]))
            .collect();
        let folds = stratified_folds(&corpus, &cl(&["A", "B", "C"]), 5, 9).unwrap();
        for f in 0..5 {
            for c in ["A", "B", "C"] {
                let n = corpus
                    .iter()
                    .zip(&folds)
                    .filter(|(e, &g)| g == f && e.label.as_str() == c)
                    .count();
                assert_eq!(n, 2);
            }
        }
        assert_eq!(
            folds,
            stratified_folds(&corpus, &cl(&["A", "B", "C"]), 5, 9).unwrap()
        );
    }

    #[test]
    fn curve_csv_shape() {
        let pts = [CurvePoint {
            size: 10,
            used: 10,
            accuracy: 0.5,
            macro_f1: 0.25,
            seed: 3,
        }];
        assert_eq!(
            curve_to_csv(&pts),
            "size,accuracy,macro_f1,seed\n10,0.5,0.25,3\n"
        );
    }

    fn matrix_strategy() -> impl Strategy<Value = Vec<Vec<u64>>> {
        (2usize..6)
            .prop_flat_map(|k| proptest::collection::vec(proptest::collection::vec(0u64..50, k), k))
    }

    proptest! {
        #[test]
        fn metrics_bounded_and_micro_equals_accuracy(counts in matrix_strategy()) {
            let k = counts.len();
            let names: Vec<ClassId> = (0..k).map(|i| ClassId::new(format!("c{i}"))).collect();
            let m = ConfusionMatrix::from_counts(names, counts).unwrap();
            let r = macro_report(&m);
            for c in &r.per_class {
                for v in [c.precision, c.recall, c.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            let (p, rc) = m.micro_precision_recall();
            prop_assert!((p - r.accuracy).abs() < 1e-12);
            prop_assert!((rc - r.accuracy).abs() < 1e-12);
            prop_assert!((r.accuracy - ratio(m.trace(), m.total())).abs() < 1e-15);
        }

        #[test]
        fn macro_report_permutation_invariant(counts in matrix_strategy(), seed in any::<u64>()) {
            let k = counts.len();
            let names: Vec<ClassId> = (0..k).map(|i| ClassId::new(format!("c{i}"))).collect();
            let m = ConfusionMatrix::from_counts(names, counts).unwrap();
            let mut order: Vec<usize> = (0..k).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let a = macro_report(&m);
            let b = macro_report(&m.permuted(&order));
            prop_assert!((a.macro_avg.precision - b.macro_avg.precision).abs() < 1e-12);
            prop_assert!((a.macro_avg.recall - b.macro_avg.recall).abs() < 1e-12);
            prop_assert!((a.macro_avg.f1 - b.macro_avg.f1).abs() < 1e-12);
            prop_assert_eq!(a.accuracy, b.accuracy);
        }

        #[test]
        fn coarsening_never_lowers_accuracy(cells in proptest::collection::vec(0u64..20, 196)) {
            let scheme = ClassScheme::default_scheme();
            let counts: Vec<Vec<u64>> = cells.chunks(14).map(|r| r.to_vec()).collect();
            let m = ConfusionMatrix::from_counts(scheme.class_list().to_vec(), counts).unwrap();
            let c = m.coarsened(&scheme).unwrap();
            prop_assert_eq!(c.total(), m.total());
            prop_assert!(c.trace() >= m.trace());
        }
    }
}
