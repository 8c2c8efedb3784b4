use std::collections::BTreeSet;
use std::ops::ControlFlow;

use num_complex::Complex32;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xdom::io::{DatasetManifest, FrameRecord};
use xdom::model::{AnyModel, ModelKind, Network, Profile, TaskMode};
use xdom::synth::{synth_dataset_with_devices, ChannelModel, DeviceProfile, Protocol, SynthConfig};
use xdom::tensor::{encode_checkpoint, ParamStore};
use xdom::train::*;

fn balanced_keys(classes: usize, per: usize) -> Vec<usize> {
    (0..classes * per).map(|i| i % classes).collect()
}

fn check_partition(keys: &[usize], parts: &[Vec<usize>; 3]) {
    let all: BTreeSet<usize> = parts.iter().flatten().copied().collect();
    assert_eq!(all.len(), keys.len(), "partitions overlap or drop items");
    let classes: BTreeSet<usize> = keys.iter().copied().collect();
    for c in classes {
        let n = keys.iter().filter(|&&k| k == c).count() as f64;
        for (p, share) in parts.iter().zip([0.7, 0.15, 0.15]) {
            let got = p.iter().filter(|&&i| keys[i] == c).count() as f64;
            assert!(got >= 1.0, "class {c} missing from a partition");
            // below one frame of quota the one-per-partition floor wins
            if 0.15 * n >= 1.0 {
                assert!((got - share * n).abs() <= 1.0 + 1e-9, "class {c}: {got} vs {}", share * n);
            }
        }
    }
}

#[test]
fn split_of_1000_is_700_150_150() {
    let keys = balanced_keys(10, 100);
    let parts = split_70_15_15(&keys, 3).unwrap();
    assert_eq!([parts[0].len(), parts[1].len(), parts[2].len()], [700, 150, 150]);
    check_partition(&keys, &parts);
}

#[test]
fn split_is_seeded() {
    let keys = balanced_keys(7, 31);
    assert_eq!(split_70_15_15(&keys, 11).unwrap(), split_70_15_15(&keys, 11).unwrap());
    assert_ne!(split_70_15_15(&keys, 11).unwrap(), split_70_15_15(&keys, 12).unwrap());
}

#[test]
fn split_rejects_tiny_classes() {
    let mut keys = balanced_keys(4, 10);
    keys.extend([9, 9]);
    assert!(matches!(split_70_15_15(&keys, 0), Err(TrainError::SmallClass { count: 2, .. })));
    keys.push(9);
    assert!(split_70_15_15(&keys, 0).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn split_sizes_hold_for_uneven_classes(counts in prop::collection::vec(3usize..60, 1..12), seed in any::<u64>()) {
        let keys: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let parts = split_70_15_15(&keys, seed).unwrap();
        check_partition(&keys, &parts);
        let n = keys.len() as f64;
        // floors of one per class can push a tiny class above its quota
        let slack = 1.0 + counts.iter().filter(|&&c| (c as f64 * 0.15) < 1.0).count() as f64;
        prop_assert!((parts[1].len() as f64 - 0.15 * n).abs() <= slack);
        prop_assert!((parts[2].len() as f64 - 0.15 * n).abs() <= slack);
        for p in &parts {
            prop_assert!(p.windows(2).all(|w| w[0] < w[1]));
        }
    }
}

/// Manifest with `per` frames for every device, protocol and scenario; no files behind it.
fn fake_manifest(devices: usize, seeds: &[u64], per: usize) -> DatasetManifest {
    let mut frames = Vec::new();
    for &s in seeds {
        for d in 0..devices {
            for p in 0..2 {
                for k in 0..per {
                    frames.push(FrameRecord { file: format!("s{s}_d{d}_p{p}"), offset: k * 1024, device: d, protocol: p, scenario_seed: s });
                }
            }
        }
    }
    DatasetManifest { frame_len: 1024, frames, devices: (0..devices as u32).collect(), protocols: Protocol::ALL.to_vec(), scenarios: seeds.to_vec() }
}

#[test]
fn ttsd_stays_on_one_seed() {
    let m = fake_manifest(4, &[5, 6, 7], 20);
    let s = build_scenario(&m, Scenario::Ttsd, &[6], RunMode::Mtl, 0, None).unwrap();
    for part in [&s.train, &s.val, &s.test] {
        assert_eq!(ScenarioSplit::seeds_in(&m, part), vec![6]);
    }
    assert_eq!(s.train.len() + s.val.len() + s.test.len(), 4 * 2 * 20);
}

#[test]
fn ttmd_pools_seeds_into_every_partition() {
    let m = fake_manifest(4, &[5, 6, 7], 20);
    let s = build_scenario(&m, Scenario::Ttmd, &[5, 6, 7], RunMode::StlBt, 1, None).unwrap();
    assert!(ScenarioSplit::seeds_in(&m, &s.test).len() >= 2);
    assert!(ScenarioSplit::seeds_in(&m, &s.train).len() == 3);
    let parts: Vec<BTreeSet<usize>> = [&s.train, &s.val, &s.test].iter().map(|p| p.iter().copied().collect()).collect();
    assert!(parts[0].is_disjoint(&parts[1]) && parts[0].is_disjoint(&parts[2]) && parts[1].is_disjoint(&parts[2]));
    let bt = Protocol::ALL.iter().position(|&p| p == Protocol::Bt).unwrap();
    assert!(s.train.iter().chain(&s.val).chain(&s.test).all(|&i| m.frames[i].protocol == bt));
}

#[test]
fn scenario_seed_counts_are_enforced() {
    let m = fake_manifest(2, &[1, 2, 3], 10);
    let err = |kind, seeds: &[u64]| build_scenario(&m, kind, seeds, RunMode::Mtl, 0, None).unwrap_err();
    assert!(matches!(err(Scenario::Ttsd, &[1, 2]), TrainError::Seeds { got: 2, .. }));
    assert!(matches!(err(Scenario::Ttsd, &[]), TrainError::Seeds { got: 0, .. }));
    assert!(matches!(err(Scenario::Ttmd, &[1]), TrainError::Seeds { got: 1, .. }));
    assert!(matches!(err(Scenario::Ttmd, &[1, 9]), TrainError::UnknownSeed(9)));
}

#[test]
fn per_class_cap_equalizes_pools() {
    let m = fake_manifest(3, &[1, 2, 3], 30);
    let single = build_scenario(&m, Scenario::Ttsd, &[1], RunMode::Mtl, 4, None).unwrap();
    let pooled = build_scenario(&m, Scenario::Ttmd, &[1, 2, 3], RunMode::Mtl, 4, Some(30)).unwrap();
    assert_eq!(single.train.len(), pooled.train.len());
    assert_eq!(single.test.len(), pooled.test.len());
    assert!(ScenarioSplit::seeds_in(&m, &pooled.train).len() == 3);
    assert_eq!(pooled, build_scenario(&m, Scenario::Ttmd, &[1, 2, 3], RunMode::Mtl, 4, Some(30)).unwrap());
}

#[test]
fn train_config_validation() {
    let ok = TrainConfig::default();
    assert!(ok.validate().is_ok());
    assert_eq!((ok.lr, ok.momentum, ok.epochs, ok.batch_size), (0.1, 0.9, 150, 32));
    for bad in [
        TrainConfig { lr: 0.0, ..ok.clone() },
        TrainConfig { lr: f64::NAN, ..ok.clone() },
        TrainConfig { epochs: 0, ..ok.clone() },
        TrainConfig { batch_size: 0, ..ok.clone() },
        TrainConfig { momentum: 1.0, ..ok.clone() },
        TrainConfig { lambda_f: -1.0, ..ok.clone() },
        TrainConfig { lambda_f: 0.0, lambda_p: 0.0, ..ok.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))), "{bad:?}");
    }
    assert!(TrainConfig { lambda_f: 0.0, ..ok }.validate().is_ok());
}

#[test]
fn perfect_predictor_metrics() {
    let truth = balanced_keys(10, 7);
    let r = metrics_from_predictions(&truth, &truth, 10, Some((&[0, 1], &[0, 1]))).unwrap();
    assert_eq!(r.top1_fingerprint, 1.0);
    assert_eq!(r.top1_protocol, Some(1.0));
    assert!(r.per_class_false_alarm.iter().all(|&f| f == 0.0));
}

#[test]
fn constant_predictor_metrics() {
    let truth = balanced_keys(10, 20);
    let r = metrics_from_predictions(&vec![0; truth.len()], &truth, 10, None).unwrap();
    assert_eq!(r.top1_fingerprint, 0.1);
    assert_eq!(r.per_class_false_alarm[0], 1.0);
    assert!(r.per_class_false_alarm[1..].iter().all(|&f| f == 0.0));
    assert_eq!(r.top1_protocol, None);
    assert!(r.confusion_fingerprint.iter().all(|row| row.iter().sum::<u64>() == 20));
}

#[test]
fn metrics_reject_bad_input() {
    assert!(matches!(metrics_from_predictions(&[], &[], 3, None), Err(TrainError::Empty)));
    assert!(metrics_from_predictions(&[0, 1], &[0], 3, None).is_err());
    assert!(metrics_from_predictions(&[3], &[0], 3, None).is_err());
}

proptest! {
    #[test]
    fn accuracy_matches_recount(pairs in prop::collection::vec((0usize..6, 0usize..6), 1..200)) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let r = metrics_from_predictions(&pred, &truth, 6, None).unwrap();
        let hits = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
        prop_assert_eq!(r.top1_fingerprint, hits as f64 / pred.len() as f64);
        let diag: u64 = (0..6).map(|c| r.confusion_fingerprint[c][c]).sum();
        prop_assert_eq!(r.top1_fingerprint, diag as f64 / pred.len() as f64);
        for c in 0..6 {
            let count = truth.iter().filter(|&&t| t == c).count() as u64;
            prop_assert_eq!(r.confusion_fingerprint[c].iter().sum::<u64>(), count);
            let fp = pred.iter().zip(&truth).filter(|(&p, &t)| p == c && t != c).count() as f64;
            let neg = (pred.len() as u64 - count) as f64;
            prop_assert_eq!(r.per_class_false_alarm[c], if neg == 0.0 { 0.0 } else { fp / neg });
        }
    }
}

fn report(model: ModelKind, mode: RunMode, scenario: Scenario, f: f64, p: Option<f64>) -> RunReport {
    let m = metrics_from_predictions(&[0], &[0], 1, None).unwrap();
    RunReport {
        model,
        profile: Profile::Reduced,
        mode,
        scenario,
        seeds: vec![0],
        classes: vec![0],
        parameters: 1,
        train_frames: 1,
        val_frames: 1,
        test_frames: 1,
        test_seeds: vec![0],
        epochs_run: 1,
        best_epoch: 1,
        test: MetricsReport { top1_fingerprint: f, top1_protocol: p, ..m },
    }
}

#[test]
fn comparison_tables_match_fixture() {
    use ModelKind::*;
    use RunMode::*;
    use Scenario::*;
    let reports = [
        report(Xdom, StlBt, Ttsd, 0.5, None),
        report(Xdom, StlBt, Ttsd, 0.25, None),
        report(Baseline, StlBt, Ttsd, 0.125, None),
        report(Xdom, StlWifi, Ttsd, 1.0, None),
        report(Xdom, Mtl, Ttmd, 0.6, Some(1.0)),
        report(Baseline, Mtl, Ttsd, 0.7, Some(0.99)),
    ];
    let c = compare_runs(&reports);
    assert_eq!(
        c.table1_csv(),
        "scenario,waveform,xdom,baseline,runs\n\
         ttsd,wifi,1.0000,—,1\n\
         ttsd,bt,0.3750,0.1250,3\n"
    );
    assert_eq!(
        c.table2_csv(),
        "scenario,model,mode,protocol_acc,fingerprint_acc,runs\n\
         ttsd,xdom,stl-wifi,—,1.0000,1\n\
         ttsd,xdom,stl-bt,—,0.3750,2\n\
         ttsd,baseline,stl-bt,—,0.1250,1\n\
         ttsd,baseline,mtl,0.9900,0.7000,1\n\
         ttmd,xdom,mtl,1.0000,0.6000,1\n"
    );
    let json = serde_json::to_string(&c).unwrap();
    assert_eq!(serde_json::from_str::<Comparison>(&json).unwrap(), c);
}

fn noise_frame(rng: &mut ChaCha8Rng) -> Vec<Complex32> {
    (0..1024).map(|_| Complex32::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

/// Random frames whose label is only noise, plus a model to fit them.
fn noise_task(kind: ModelKind, classes: usize, n: usize, multi: bool) -> (AnyModel, ParamStore<f32>, LabeledSet) {
    let mut store = ParamStore::new();
    let model = AnyModel::build(kind, Profile::Reduced, classes, multi.then_some(2), &mut store, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let frames: Vec<Vec<Complex32>> = (0..n).map(|_| noise_frame(&mut rng)).collect();
    let views: Vec<&[Complex32]> = frames.iter().map(|f| f.as_slice()).collect();
    let fp = (0..n).map(|i| i % classes).collect();
    let pp = (0..n).map(|i| i % 2).collect();
    let set = LabeledSet::from_frames(&views, fp, pp, model.input_config()).unwrap();
    (model, store, set)
}

#[test]
fn untrained_loss_is_near_log_classes() {
    for kind in [ModelKind::Xdom, ModelKind::Baseline] {
        for classes in [4, 10] {
            let (model, store, set) = noise_task(kind, classes, 40, false);
            let cfg = TrainConfig::default();
            let loss = loss_on(&model, &store, &set, TaskMode::SingleTask, &cfg, classes).unwrap();
            let ln_c = (classes as f64).ln();
            assert!((loss - ln_c).abs() <= 0.01 * ln_c, "{kind:?} C={classes}: {loss} vs {ln_c}");
        }
    }
}

#[test]
fn multi_task_loss_adds_weighted_protocol_term() {
    let (model, store, set) = noise_task(ModelKind::Xdom, 4, 12, true);
    let cfg = TrainConfig { lambda_p: 0.5, ..TrainConfig::default() };
    let r = evaluate(&model, &store, &set, TaskMode::MultiTask, 4).unwrap();
    let loss = loss_on(&model, &store, &set, TaskMode::MultiTask, &cfg, 4).unwrap();
    assert_eq!(loss, r.mean_loss_fingerprint + 0.5 * r.mean_loss_protocol.unwrap());
    let single = loss_on(&model, &store, &set, TaskMode::SingleTask, &cfg, 4).unwrap();
    assert_eq!(single, r.mean_loss_fingerprint);
}

fn small_fit(deterministic: bool) -> (Vec<EpochStats>, Vec<u8>, Vec<u8>) {
    let (model, mut store, set) = noise_task(ModelKind::Xdom, 3, 30, true);
    let cfg = TrainConfig { epochs: 3, batch_size: 8, lr: 0.05, seed: 7, deterministic, ..TrainConfig::default() };
    let out = fit(&model, &mut store, &set, &set, &cfg, TaskMode::MultiTask, 3, |_| ControlFlow::Continue(())).unwrap();
    (out.curve, encode_checkpoint(&out.best), encode_checkpoint(&store))
}

#[test]
fn deterministic_fit_is_bit_identical() {
    let a = small_fit(true);
    let b = small_fit(true);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert_eq!(a.0.len(), 3);
    assert!(a.0.iter().all(|e| e.val_acc_p.is_some()));
}

#[test]
fn fit_changes_parameters_and_keeps_best() {
    let (model, mut store, set) = noise_task(ModelKind::Baseline, 3, 24, false);
    let before = encode_checkpoint(&store);
    let cfg = TrainConfig { epochs: 2, batch_size: 6, lr: 0.01, ..TrainConfig::default() };
    let out = fit(&model, &mut store, &set, &set, &cfg, TaskMode::SingleTask, 3, |_| ControlFlow::Continue(())).unwrap();
    assert_ne!(before, encode_checkpoint(&store));
    let best = &out.curve[out.best_epoch - 1];
    assert_eq!(out.best_score, best.val_acc_f);
    assert!(out.curve.iter().all(|e| e.val_acc_f <= out.best_score));
    let rescored = evaluate(&model, &out.best, &set, TaskMode::SingleTask, 3).unwrap();
    assert_eq!(rescored.top1_fingerprint, best.val_acc_f);
}

#[test]
fn early_stop_via_callback() {
    let (model, mut store, set) = noise_task(ModelKind::Xdom, 2, 10, false);
    let cfg = TrainConfig { epochs: 50, batch_size: 5, lr: 0.01, ..TrainConfig::default() };
    let out = fit(&model, &mut store, &set, &set, &cfg, TaskMode::SingleTask, 2, |e| if e.epoch == 2 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) }).unwrap();
    assert_eq!(out.curve.len(), 2);
}

#[test]
fn huge_learning_rate_diverges_with_diagnostic() {
    let (model, mut store, set) = noise_task(ModelKind::Baseline, 3, 24, false);
    let cfg = TrainConfig { epochs: 20, batch_size: 4, lr: 1e12, ..TrainConfig::default() };
    match fit(&model, &mut store, &set, &set, &cfg, TaskMode::SingleTask, 3, |_| ControlFlow::Continue(())) {
        Err(e @ TrainError::Diverged { .. }) => assert!(e.to_string().contains("learning rate")),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training at lr 1e12 stayed finite"),
    }
}

fn clone_device(d: &DeviceProfile, id: u32) -> DeviceProfile {
    let mut p = d.params().clone();
    p.device_id = id;
    DeviceProfile::new(p).unwrap()
}

fn run_cfg(data: &std::path::Path, model: ModelKind, epochs: usize) -> RunConfig {
    RunConfig {
        data: data.to_path_buf(),
        model,
        profile: Profile::Reduced,
        mode: RunMode::StlWifi,
        scenario: Scenario::Ttsd,
        seeds: vec![],
        split_seed: 0,
        max_per_class: None,
        train: TrainConfig { epochs, batch_size: 16, lr: 0.05, seed: 1, deterministic: true, ..TrainConfig::default() },
    }
}

/// Four copies of one radio over a clean, identical channel carry no
/// fingerprint, so nothing above chance can be learned.
#[test]
fn identical_devices_stay_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        devices_a: 1,
        devices_b: 0,
        frames: 60,
        protocols: vec![Protocol::Wifi],
        channel: ChannelModel { echoes: 0, max_echo: 0.0, snr_db: (20.0, 20.0), cfo_drift_ppm: 0.0 },
        ..SynthConfig::default()
    };
    let one = cfg.draw_devices().unwrap().remove(0);
    let devices: Vec<DeviceProfile> = (0..4).map(|i| clone_device(&one, i)).collect();
    synth_dataset_with_devices(&cfg, &devices, dir.path()).unwrap();
    let report = run_training(&run_cfg(dir.path(), ModelKind::Xdom, 15), &dir.path().join("run"), |_| ControlFlow::Continue(())).unwrap();
    // 36 test frames; 0.5 sits about 3.5 standard deviations above 0.25
    assert!(report.test.top1_fingerprint <= 0.5, "accuracy {}", report.test.top1_fingerprint);
}

#[test]
fn run_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { devices_a: 2, devices_b: 1, frames: 12, protocols: vec![Protocol::Wifi], ..SynthConfig::default() };
    xdom::synth::synth_dataset(&cfg, dir.path()).unwrap();
    let out = dir.path().join("run");
    let rc = run_cfg(dir.path(), ModelKind::Xdom, 2);
    let report = run_training(&rc, &out, |_| ControlFlow::Continue(())).unwrap();
    for f in [CONFIG_FILE, CURVE_FILE, REPORT_FILE, CONFUSION_FILE, CHECKPOINT_FILE] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let curve = std::fs::read_to_string(out.join(CURVE_FILE)).unwrap();
    assert_eq!(curve.lines().next(), Some("epoch,train_loss,val_loss,val_acc_f,val_acc_p"));
    assert_eq!(curve.lines().count(), 3);
    let confusion = std::fs::read_to_string(out.join(CONFUSION_FILE)).unwrap();
    assert_eq!(confusion.lines().next(), Some("true\\pred,0,1,2"));

    let effective: RunConfig = serde_json::from_str(&std::fs::read_to_string(out.join(CONFIG_FILE)).unwrap()).unwrap();
    assert_eq!(effective.seeds, vec![0]);
    assert_eq!(read_run_report(&out).unwrap(), report);
    assert_eq!(report.train_frames + report.val_frames + report.test_frames, 3 * 12);
    assert_eq!(report.test.confusion_fingerprint.iter().flatten().sum::<u64>() as usize, report.test_frames);

    let again = eval_run(&out, None).unwrap();
    assert_eq!(again.test, report.test);
}
