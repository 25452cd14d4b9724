use lmfcn::data::{gen_gaussian_stripes, split, Dataset, StripeSpec};
use lmfcn::trainer::{
    evaluate, fit, fit_cnn_baseline, fit_multiclass, EpochRecord, Hyperparams, LmfcnTrainer,
};
use lmfcn::{Error, Exec};

fn stripes(angles: &[f64], per_class: usize, seed: u64) -> (Dataset, Dataset, Dataset) {
    let d = gen_gaussian_stripes(&StripeSpec::with_angles(angles), per_class, 16, seed).unwrap();
    split(&d, (0.5, 0.25, 0.25), seed).unwrap()
}

fn small_hp() -> Hyperparams {
    Hyperparams {
        phi: 8,
        max_epochs: 3,
        gamma: lmfcn::geometry::GammaRule::Median,
        ..Hyperparams::default()
    }
}

fn without_ms(r: &[EpochRecord]) -> Vec<EpochRecord> {
    r.iter().map(|r| EpochRecord { ms: 0, ..r.clone() }).collect()
}

#[test]
fn separable_data_clears_misclassified_set() {
    let (tr, va, _) = stripes(&[0.0, 90.0], 24, 1);
    let m = fit(&tr, &va, &small_hp()).unwrap();
    assert!(m.records.iter().any(|r| r.n_q == 0), "{:?}", m.records);
}

#[test]
fn same_seed_same_records_and_weights() {
    let (tr, va, _) = stripes(&[30.0, 60.0], 16, 2);
    let a = fit(&tr, &va, &small_hp()).unwrap();
    let b = fit(&tr, &va, &small_hp()).unwrap();
    assert_eq!(without_ms(&a.records), without_ms(&b.records));
    assert_eq!(a.fcn, b.fcn);
    assert_eq!(a.svm, b.svm);
}

#[test]
fn gradient_set_is_sv_q_and_anchored_r() {
    let (tr, va, _) = stripes(&[30.0, 60.0], 20, 3);
    let hp = Hyperparams { sh_close: 1, ..small_hp() };
    let mut t = LmfcnTrainer::new(Exec::default(), &tr, &va, &hp).unwrap();
    for _ in 0..2 {
        let rec = t.train_epoch().unwrap();
        let trace = t.last_trace().unwrap();
        let p = &trace.partition;
        let mut expected: Vec<usize> = p.s.iter().chain(&p.q).copied().collect();
        expected.extend(p.r.iter().zip(&trace.tables.g).filter(|(_, g)| !g.is_empty()).map(|(&i, _)| i));
        expected.sort_unstable();
        assert_eq!(trace.selected, expected);
        assert_eq!(rec.n_backprop, trace.selected.len());
        assert!(rec.n_backprop <= tr.len());
        assert_eq!(rec.n_sv + rec.n_q + rec.n_r, tr.len());
        assert!(trace.stage_ends.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn single_epoch_budget_and_snapshot_properties() {
    let (tr, va, _) = stripes(&[30.0, 60.0], 16, 4);
    let one = fit(&tr, &va, &Hyperparams { max_epochs: 1, ..small_hp() }).unwrap();
    assert_eq!(one.records.len(), 1);
    assert_eq!(one.best_epoch, 1);

    let m = fit(&tr, &va, &small_hp()).unwrap();
    let best = &m.records[m.best_epoch - 1];
    assert!(m.records.iter().all(|r| r.val_bacc <= best.val_bacc));
    assert!(m.records[..m.best_epoch - 1].iter().all(|r| r.val_bacc < best.val_bacc));
    assert_eq!(evaluate(&m, &va, "val").unwrap().balanced_accuracy, best.val_bacc);
    assert_eq!(evaluate(&m, &tr, "train").unwrap().balanced_accuracy, best.train_bacc);
    assert_eq!(m.train_latents.cols(), 8);
}

#[test]
fn patience_stops_early() {
    let (tr, va, _) = stripes(&[0.0, 90.0], 16, 5);
    let m = fit(&tr, &va, &Hyperparams { max_epochs: 10, patience: Some(1), ..small_hp() }).unwrap();
    assert!(m.records.len() <= m.best_epoch + 1);
}

#[test]
fn invalid_inputs_are_rejected() {
    let (tr, va, _) = stripes(&[30.0, 60.0], 8, 6);
    let empty = tr.subset(&[]);
    assert!(matches!(fit(&empty, &va, &small_hp()), Err(Error::Data(_))));
    let zeros: Vec<usize> = (0..tr.len()).filter(|&i| tr.labels[i] == 0).collect();
    assert!(matches!(fit(&tr.subset(&zeros), &va, &small_hp()), Err(Error::SingleClass)));
    assert!(fit(&tr, &tr, &small_hp()).is_err());
    assert!(fit(&tr, &va, &Hyperparams { max_epochs: 0, ..small_hp() }).is_err());
}

#[test]
fn multiclass_concatenates_per_class_latents() {
    let (tr, va, te) = stripes(&[0.0, 45.0, 90.0], 12, 7);
    let hp = Hyperparams { epochs_per_class: 2, ..small_hp() };
    let m = fit_multiclass(&tr, &va, &hp, 3).unwrap();
    assert_eq!(m.train_latents.cols(), 8 * 3);
    assert_eq!(m.fcns.len(), 3);
    assert!(m.sub_records.iter().all(|r| r.len() == 2));
    let r = evaluate(&m, &te, "test").unwrap();
    assert_eq!(r.confusion.iter().flatten().sum::<usize>(), te.len());

    assert!(fit_multiclass(&tr, &va, &hp, 2).is_err());
    let keep: Vec<usize> = (0..tr.len()).filter(|&i| tr.labels[i] != 2).chain((0..tr.len()).find(|&i| tr.labels[i] == 2)).collect();
    assert!(matches!(fit_multiclass(&tr.subset(&keep), &va, &hp, 3), Err(Error::Data(_))));
}

#[test]
fn cnn_baseline_is_full_batch_and_reproducible() {
    let (tr, va, _) = stripes(&[30.0, 60.0], 12, 8);
    let hp = Hyperparams { cnn_max_epochs: 3, cnn_batch: 5, ..small_hp() };
    let a = fit_cnn_baseline(&tr, &va, &hp).unwrap();
    let b = fit_cnn_baseline(&tr, &va, &hp).unwrap();
    assert_eq!(without_ms(&a.records), without_ms(&b.records));
    assert!(a.records.len() <= 3);
    assert!(a.records.iter().all(|r| r.n_backprop == tr.len() && r.n_sv == 0));
    assert_eq!(a.fcn, b.fcn);
}
