mod common;

use common::{fine_classes, synthetic_corpus, SyntheticSpec};
use silverlabel::corpus;
use silverlabel::eval::{self, cross_validate, learning_curve};
use silverlabel::pipeline::TimeWindow;
use silverlabel::{Error, PipelineConfig, TrainedPipeline};

fn config() -> PipelineConfig {
    PipelineConfig {
        n_per_class: 25,
        ..PipelineConfig::default()
    }
}

fn data(
    per_class: usize,
) -> (
    Vec<silverlabel::LabeledExample>,
    Vec<silverlabel::LabeledExample>,
) {
    let spec = SyntheticSpec {
        train_per_class: per_class,
        test_per_class: 10,
        seed: 21,
        ..SyntheticSpec::default()
    };
    synthetic_corpus(&fine_classes(), &spec)
}

#[test]
fn drift_report_carries_both_windows() {
    let (train, test) = data(40);
    let p = TrainedPipeline::fit(&train, &fine_classes(), &config()).unwrap();
    let r = eval::drift_eval(&p, &test).unwrap();
    let (tw, sw) = (
        r.metadata.train_window.unwrap(),
        r.metadata.test_window.unwrap(),
    );
    assert!(tw.end < sw.start);
    assert_eq!(Some(tw), TimeWindow::of(&train));
    assert_eq!(r.metadata.protocol.as_deref(), Some("drift"));
    assert!(matches!(
        eval::drift_eval(&p, &[]),
        Err(Error::EmptyEvaluation)
    ));
}

#[test]
fn cross_validation_selects_features_per_fold() {
    let (train, _) = data(20);
    let out = cross_validate(&train, &fine_classes(), 4, &config(), 5).unwrap();
    assert_eq!(out.report.total, train.len() as u64);
    assert_eq!(out.fold_spaces.len(), 4);
    assert!(out.fold_spaces.windows(2).any(|w| w[0] != w[1]));
    // each prediction comes from the model that never saw the example
    for f in 0..4 {
        let held: Vec<_> = train
            .iter()
            .zip(&out.fold_of)
            .filter(|(_, &g)| g != f)
            .map(|(e, _)| e.clone())
            .collect();
        let p = TrainedPipeline::fit(&held, &fine_classes(), &config()).unwrap();
        assert_eq!(p.feature_space, out.fold_spaces[f]);
        for (i, e) in train
            .iter()
            .enumerate()
            .filter(|(i, _)| out.fold_of[*i] == f)
        {
            assert_eq!(p.predict_index(&e.text), out.predictions[i]);
        }
    }
    let small = &train[..14 * 3];
    assert!(matches!(
        cross_validate(small, &fine_classes(), 4, &config(), 5),
        Err(Error::ClassTooSmall { .. })
    ));
}

#[test]
fn curve_at_full_size_equals_direct_run() {
    let (train, test) = data(30);
    let classes = fine_classes();
    let points = learning_curve(
        &train,
        &classes,
        &[140, train.len()],
        &test,
        &config(),
        2,
        None,
    )
    .unwrap();
    assert_eq!(points.len(), 2);
    assert_eq!(points[0].used, 140);
    assert_eq!(points[1].used, train.len());
    let direct = TrainedPipeline::fit(&train, &classes, &config()).unwrap();
    let report = eval::evaluate(&direct, &test).unwrap();
    assert_eq!(points[1].accuracy, report.accuracy);
    assert_eq!(points[1].macro_f1, report.macro_avg.f1);
}

#[test]
fn holdout_after_balance_partitions() {
    let (train, _) = data(30);
    let classes = fine_classes();
    let balanced = corpus::balance_sample(&train, &classes, 20, 1).unwrap();
    let (a, b) = corpus::split_holdout(&balanced, &classes, 5, 1).unwrap();
    assert_eq!((a.len(), b.len()), (14 * 15, 14 * 5));
    let mut ids: Vec<_> = a.iter().chain(&b).map(|e| e.id.clone()).collect();
    ids.sort();
    let mut want: Vec<_> = balanced.iter().map(|e| e.id.clone()).collect();
    want.sort();
    assert_eq!(ids, want);
}
