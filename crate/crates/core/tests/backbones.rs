use calib_il::backbones::*;
use calib_il::eval::per_state_accuracy;
use calib_il::schedule::argmax;

fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        num_classes: 8,
        num_states: 4,
        feature_dim: 8,
        train_per_class: 30,
        val_per_class: 5,
        test_per_class: 10,
        center_scale: 2.0,
        noise_scale: 0.7,
        drift_scale: 0.0,
        seed,
    }
}

fn small_config(kind: BackboneKind, seed: u64) -> BackboneConfig {
    BackboneConfig {
        kind,
        hidden_dim: 16,
        epochs_initial: 15,
        epochs_incremental: 8,
        seed,
        ..BackboneConfig::default()
    }
}

fn setup(seed: u64) -> (IncrementalDataset, StateViews) {
    let ds = gen_synthetic_dataset(&small_spec(seed), "small").unwrap();
    let views = split_states(&ds, 4).unwrap();
    (ds, views)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

const ALL_KINDS: [BackboneKind; 5] = [
    BackboneKind::Finetune,
    BackboneKind::Ftplus,
    BackboneKind::Siw,
    BackboneKind::Lwf,
    BackboneKind::LucirLite,
];

#[test]
fn near_noiseless_data_is_fitted_perfectly() {
    let spec = SynthSpec {
        num_classes: 6,
        num_states: 1,
        noise_scale: 1e-6,
        ..small_spec(3)
    };
    let ds = gen_synthetic_dataset(&spec, "clean").unwrap();
    let views = split_states(&ds, 1).unwrap();
    let (model, losses) = train_initial_with_losses(&small_config(BackboneKind::Ftplus, 3), &ds, &views).unwrap();
    let train = &views.train[0];
    let correct = train.iter().filter(|&&i| predict(&model, ds.sample(i)) == ds.labels()[i]).count();
    assert_eq!(correct, train.len());
    assert!(losses.last().unwrap() <= &losses[0]);
}

#[test]
fn initial_training_loss_decreases_and_is_deterministic() {
    let (ds, views) = setup(11);
    let config = small_config(BackboneKind::Ftplus, 11);
    let (a, losses) = train_initial_with_losses(&config, &ds, &views).unwrap();
    let (b, _) = train_initial_with_losses(&config, &ds, &views).unwrap();
    assert_eq!(a, b);
    assert_eq!(losses.len(), config.epochs_initial);
    assert!(losses.last().unwrap() < &losses[0]);
    for r in 0..a.num_outputs() {
        assert_eq!(a.initial_row(r).unwrap(), a.output_row(r));
    }
}

#[test]
fn ftplus_freezes_past_rows_bitwise() {
    let (ds, views) = setup(5);
    let config = small_config(BackboneKind::Ftplus, 5);
    let mut model = train_initial(&config, &ds, &views).unwrap();
    for s in 2..=4 {
        let next = update_ftplus(&model, &ds, &views, s, &config).unwrap();
        for r in 0..model.num_outputs() {
            assert_eq!(bits(next.output_row(r)), bits(model.output_row(r)), "state {s} row {r}");
            assert_eq!(next.output_bias(r).to_bits(), model.output_bias(r).to_bits());
            assert!(next.is_frozen(r));
        }
        assert_ne!(next.hidden_params().0, model.hidden_params().0, "hidden layer keeps training");
        model = next;
    }
}

#[test]
fn new_rows_move_and_zero_epochs_change_nothing() {
    let (ds, views) = setup(6);
    let config = small_config(BackboneKind::Ftplus, 6);
    let model = train_initial(&config, &ds, &views).unwrap();
    let idle = BackboneConfig {
        epochs_incremental: 0,
        ..config.clone()
    };
    for kind in ALL_KINDS {
        if kind == BackboneKind::Siw {
            continue;
        }
        let base = if kind == BackboneKind::LucirLite {
            train_initial(&small_config(kind, 6), &ds, &views).unwrap()
        } else {
            model.clone()
        };
        let still = update(&base, &ds, &views, 2, &BackboneConfig { kind, ..idle.clone() }).unwrap();
        assert_eq!(still.hidden_params(), base.hidden_params(), "{kind:?}");
        assert_eq!(still.eta(), base.eta());
        for r in 0..base.num_outputs() {
            assert_eq!(still.output_row(r), base.output_row(r));
            assert_eq!(still.output_bias(r), base.output_bias(r));
        }
        let trained = update(&base, &ds, &views, 2, &BackboneConfig { kind, epochs_incremental: 1, ..config.clone() }).unwrap();
        for r in base.num_outputs()..trained.num_outputs() {
            let delta: f64 = trained
                .output_row(r)
                .iter()
                .zip(still.output_row(r))
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            assert!(delta > 0.0, "{kind:?} row {r} did not move");
        }
    }
}

#[test]
fn siw_rows_are_standardized_and_past_rows_restored() {
    let (ds, views) = setup(8);
    let config = small_config(BackboneKind::Siw, 8);
    let initial = train_initial(&config, &ds, &views).unwrap();
    let mut model = initial.clone();
    for s in 2..=4 {
        model = update_siw(&model, &ds, &views, s, &config).unwrap();
        for r in 0..model.num_outputs() {
            let row = model.output_row(r);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9, "state {s} row {r}: {mean} {std}");
        }
    }
    let first = standardize_row(initial.initial_row(0).unwrap()).unwrap().unwrap();
    assert_eq!(model.output_row(0), first.as_slice());
}

#[test]
fn siw_standardization_examples() {
    // population std of [2, 4, 6] is sqrt(8/3)
    let z = standardize_row(&[2.0, 4.0, 6.0]).unwrap().unwrap();
    let expected = [-1.224744871391589, 0.0, 1.224744871391589];
    for (a, b) in z.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(standardize_row(&[3.0, 3.0, 3.0]).unwrap(), None);
    assert!(standardize_row(&[1.0]).is_err());
}

#[test]
fn distillation_terms_vanish_at_the_teacher() {
    let (ds, views) = setup(9);
    for kind in [BackboneKind::Lwf, BackboneKind::LucirLite] {
        let config = small_config(kind, 9);
        let teacher = train_initial(&config, &ds, &views).unwrap();
        for &i in views.train[1].iter().take(20) {
            let x = ds.sample(i);
            let scores = teacher.scores(x);
            assert!(lwf_distillation(&scores, &scores, config.temperature).abs() < 1e-12);
            let h = teacher.hidden(x);
            assert!(feature_distillation(&h, &h).abs() < 1e-12);
        }
    }
    assert!(lwf_distillation(&[1.0, 2.0], &[2.0, 1.0], 2.0) > 0.0);
}

#[test]
fn lucir_weight_and_cosine_bound() {
    assert_eq!(lucir_lambda(5.0, 16, 4), 10.0);
    let (ds, views) = setup(10);
    let config = small_config(BackboneKind::LucirLite, 10);
    let mut model = train_initial(&config, &ds, &views).unwrap();
    model = update_lucir_lite(&model, &ds, &views, 2, &config).unwrap();
    for i in 0..ds.len() {
        for s in model.scores(ds.sample(i)) {
            assert!(s.abs() <= model.eta() + 1e-9);
        }
    }
}

#[test]
fn lwf_without_distillation_is_plain_finetuning() {
    let (ds, views) = setup(12);
    let lwf = BackboneConfig {
        distill_weight: 0.0,
        ..small_config(BackboneKind::Lwf, 12)
    };
    let ft = small_config(BackboneKind::Finetune, 12);
    let a = run_incremental(&ds, &views, &lwf).unwrap();
    let b = run_incremental(&ds, &views, &ft).unwrap();
    assert_eq!(a.final_model, b.final_model);
    for (x, y) in a.test.iter().zip(&b.test) {
        assert_eq!(x.scores(), y.scores());
    }
}

/// Past-group accuracy at the final state of an LwF run.
fn past_accuracy(seed: u64, distill_weight: f64) -> f64 {
    let spec = SynthSpec {
        num_classes: 12,
        num_states: 3,
        feature_dim: 16,
        train_per_class: 40,
        val_per_class: 5,
        test_per_class: 20,
        center_scale: 1.0,
        noise_scale: 1.0,
        drift_scale: 0.0,
        seed,
    };
    let ds = gen_synthetic_dataset(&spec, "lwf").unwrap();
    let views = split_states(&ds, 3).unwrap();
    let config = BackboneConfig {
        kind: BackboneKind::Lwf,
        hidden_dim: 32,
        epochs_initial: 20,
        epochs_incremental: 10,
        distill_weight,
        seed,
        ..BackboneConfig::default()
    };
    let run = run_incremental(&ds, &views, &config).unwrap();
    let last = run.test.last().unwrap();
    let preds = last.columns_to_classes(&last.scores().argmax_rows());
    let acc = per_state_accuracy(&preds, last.labels(), last.schedule(), 3).unwrap();
    let counts = &acc.group_counts[..2];
    let hits: f64 = acc.per_group[..2]
        .iter()
        .zip(counts)
        .map(|(a, &n)| a.unwrap() * n as f64)
        .sum();
    hits / counts.iter().sum::<usize>() as f64
}

#[test]
fn strong_distillation_protects_past_groups() {
    let wins = (0..10).filter(|&seed| past_accuracy(seed, 10.0) > past_accuracy(seed, 0.0)).count();
    assert!(wins >= 7, "large distillation helped in only {wins}/10 seeds");
}

#[test]
fn logits_reproduce_model_decisions() {
    let (ds, views) = setup(13);
    for kind in ALL_KINDS {
        let config = small_config(kind, 13);
        let run = run_incremental(&ds, &views, &config).unwrap();
        let s = 4;
        let idx = views.eval(Split::Test, s);
        let prov = run.test[3].provenance().clone();
        let logits = extract_logits(&run.final_model, &ds, idx, s, &views.schedule, prov.clone()).unwrap();
        let again = extract_logits(&run.final_model, &ds, idx, s, &views.schedule, prov).unwrap();
        assert_eq!(bits(logits.scores().as_slice()), bits(again.scores().as_slice()));
        assert_eq!(logits.scores().rows(), idx.len());
        assert_eq!(logits.scores().cols(), views.schedule.cumulative_len(s));
        for (row, &i) in logits.scores().iter_rows().zip(idx) {
            let class = logits.columns_to_classes(&[argmax(row)])[0];
            assert_eq!(class, predict(&run.final_model, ds.sample(i)), "{kind:?}");
        }
    }
}

#[test]
fn every_trainer_is_deterministic() {
    let (ds, views) = setup(14);
    for kind in ALL_KINDS {
        let config = small_config(kind, 14);
        let a = run_incremental(&ds, &views, &config).unwrap();
        let b = run_incremental(&ds, &views, &config).unwrap();
        assert_eq!(a.final_model, b.final_model, "{kind:?}");
        for (x, y) in a.validation.iter().zip(&b.validation) {
            assert_eq!(bits(x.scores().as_slice()), bits(y.scores().as_slice()));
        }
    }
}

#[test]
fn evaluation_views_cover_the_cumulative_classes() {
    let (ds, views) = setup(15);
    for s in 1..=4 {
        let mut seen: Vec<usize> = views.eval(Split::Test, s).iter().map(|&i| ds.labels()[i]).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen, views.schedule.cumulative_classes(s));
        let mut train: Vec<usize> = views.train[s - 1].iter().map(|&i| ds.labels()[i]).collect();
        train.sort();
        train.dedup();
        assert_eq!(train, views.schedule.group_classes(s));
    }
}

#[test]
fn overlapping_classes_are_rejected() {
    let (ds, views) = setup(16);
    let config = small_config(BackboneKind::Ftplus, 16);
    let model = train_initial(&config, &ds, &views).unwrap();
    let next = update_ftplus(&model, &ds, &views, 2, &config).unwrap();
    assert!(update_ftplus(&next, &ds, &views, 2, &config).is_err());
    assert!(update_ftplus(&model, &ds, &views, 1, &config).is_err());
}
