mod common;

use std::sync::OnceLock;

use csiforge::binio::FormatError;
use csiforge::channel::CsiMatrix;
use csiforge::dataset::{split, SplitIndex, SplitMode};
use csiforge::features::{build_features, FeatureConfig, FeatureSet};
use csiforge::learn::checkpoint::{checkpoint_bytes, checkpoint_from_bytes, parse_checkpoint};
use csiforge::learn::mlp::Mlp;
use csiforge::learn::model::{model_input, CsiModel, ModelRegistry, ModelSpec};
use csiforge::learn::train::{evaluate_nmse, prepare, train_prepared};
use csiforge::learn::vae::Vae;
use csiforge::learn::{nmse, AdamWConfig, LearnError, NmseMode, TrainConfig};
use csiforge::Complex64;
use proptest::prelude::*;

fn reference_features() -> &'static FeatureSet {
    static SET: OnceLock<FeatureSet> = OnceLock::new();
    SET.get_or_init(|| build_features(&common::courtyard(), &common::reference_dataset(7), &FeatureConfig::default()).unwrap())
}

fn reference_split() -> SplitIndex {
    split(&common::reference_dataset(7), 0.2, 7, SplitMode::Random).unwrap()
}

fn small_mlp() -> Mlp {
    let mut spec = ModelSpec::mlp(&reference_features().meta);
    spec.conv = None;
    spec.hidden = vec![16];
    Mlp::new(spec).unwrap()
}

fn cfg(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        optimizer: AdamWConfig { lr, ..AdamWConfig::default() },
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_keeps_metrics_constant() {
    let model = small_mlp();
    let data = prepare(&model, reference_features()).unwrap();
    let out = train_prepared(&model, &data, &reference_split(), &cfg(3, 0.0)).unwrap();
    let e = &out.metrics.epochs;
    assert_eq!(e.len(), 3);
    for m in &e[1..] {
        assert_eq!((m.train_loss, m.train_nmse, m.val_nmse), (e[0].train_loss, e[0].train_nmse, e[0].val_nmse));
    }
    assert_eq!(out.params, model.init_params(7));
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let model = small_mlp();
    let data = prepare(&model, reference_features()).unwrap();
    let s = reference_split();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train_prepared(&model, &data, &s, &cfg(3, 1e-3)).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.metrics.to_csv(), b.metrics.to_csv());
    assert_eq!(a.params.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.params.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn single_record_is_memorized() {
    let model = Mlp::new(ModelSpec::mlp(&reference_features().meta)).unwrap();
    let data = prepare(&model, reference_features()).unwrap();
    let one = SplitIndex { train_ids: vec![100], val_ids: vec![100] };
    let c = TrainConfig { epochs: 2000, batch_size: 1, patience: 2000, ..cfg(2000, 1e-3) };
    let out = train_prepared(&model, &data, &one, &c).unwrap();
    let best = out.metrics.epochs.iter().map(|m| m.train_loss).fold(f64::INFINITY, f64::min);
    assert!(best < 1e-3, "best single-record loss {best:e}");
}

#[test]
fn small_learning_rate_loss_is_non_increasing() {
    let model = Mlp::new(ModelSpec::mlp(&reference_features().meta)).unwrap();
    let data = prepare(&model, reference_features()).unwrap();
    let out = train_prepared(&model, &data, &reference_split(), &cfg(5, 1e-4)).unwrap();
    let losses: Vec<f64> = out.metrics.epochs.iter().map(|m| m.train_loss).collect();
    assert!(losses.windows(2).all(|w| w[1] <= w[0]), "train losses {losses:?}");
}

#[test]
fn untrained_nmse_is_order_one() {
    let model = Mlp::new(ModelSpec::mlp(&reference_features().meta)).unwrap();
    let data = prepare(&model, reference_features()).unwrap();
    let ids: Vec<usize> = (0..data.inputs.len()).collect();
    let v = evaluate_nmse(&model, &model.init_params(7), &data, &ids, NmseMode::MeanOfRatios).unwrap();
    assert!((0.1..10.0).contains(&v), "untrained NMSE {v}");
}

#[test]
fn zeroed_output_layer_predicts_constant() {
    let model = small_mlp();
    let mut params = model.init_params(3);
    let n = params.len();
    for i in [n - 2, n - 1] {
        params.get_mut(i).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let set = reference_features();
    let io = model.spec().io;
    for r in set.records.iter().step_by(50) {
        let p = model.predict(&params, &model_input(model.spec(), r).unwrap()).unwrap();
        assert!(p[..io.csi_len()].iter().all(|&a| a == std::f64::consts::LN_2));
        assert!(p[io.csi_len()..].iter().all(|&ph| ph == 0.0));
    }
}

#[test]
fn position_only_model_ignores_walls() {
    let mut spec = ModelSpec::mlp(&reference_features().meta);
    spec.conv = None;
    spec.use_walls = false;
    spec.hidden = vec![8];
    let model = Mlp::new(spec).unwrap();
    let params = model.init_params(1);
    let mut rec = reference_features().records[5].clone();
    let a = model.predict(&params, &model_input(model.spec(), &rec).unwrap()).unwrap();
    rec.wall_feats.iter_mut().for_each(|v| *v += 0.37);
    let b = model.predict(&params, &model_input(model.spec(), &rec).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn vae_eval_mode_is_deterministic() {
    let vae = Vae::new(ModelSpec::vae(&reference_features().meta)).unwrap();
    let params = vae.init_params(5);
    let input = model_input(vae.spec(), &reference_features().records[17]).unwrap();
    let a = vae.predict(&params, &input).unwrap();
    let b = vae.predict(&params, &input).unwrap();
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    let s1 = vae.forward(&params, &input, 1).unwrap();
    let s2 = vae.forward(&params, &input, 2).unwrap();
    assert_eq!(s1.mu, s2.mu);
    assert_ne!(s1.prediction, s2.prediction);
    assert_eq!(vae.forward_eval(&params, &input).unwrap().prediction, a);
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let registry = ModelRegistry::with_builtins();
    for kind in ["mlp", "vae"] {
        let spec = ModelSpec::for_kind(kind, &reference_features().meta).unwrap();
        let model = registry.build(spec.clone()).unwrap();
        let params = model.init_params(11);
        let bytes = checkpoint_bytes(&spec, &params);
        let (back, loaded) = checkpoint_from_bytes(&bytes, &registry).unwrap();
        assert_eq!(back.spec(), &spec);
        assert_eq!(loaded, params);
        let input = model_input(&spec, &reference_features().records[0]).unwrap();
        assert_eq!(back.predict(&loaded, &input).unwrap(), model.predict(&params, &input).unwrap());

        let mut flipped = bytes.clone();
        let at = bytes.len() - 100;
        flipped[at] ^= 0x40;
        assert!(matches!(parse_checkpoint(&flipped), Err(LearnError::Format(FormatError::Checksum { .. }))));
        assert!(matches!(parse_checkpoint(&bytes[..bytes.len() - 9]), Err(LearnError::Format(FormatError::Truncated { .. }))));
        let mut magic = bytes.clone();
        magic[1] = b'X';
        assert!(matches!(parse_checkpoint(&magic), Err(LearnError::Format(FormatError::Version { .. }))));
    }
}

#[test]
fn registry_reports_unknown_and_accepts_custom_heads() {
    let mut registry = ModelRegistry::with_builtins();
    let mut spec = ModelSpec::mlp(&reference_features().meta);
    spec.kind = "wide".into();
    match registry.build(spec.clone()) {
        Err(LearnError::UnknownModel { name, known }) => {
            assert_eq!(name, "wide");
            assert_eq!(known, "mlp, vae");
        }
        other => panic!("expected unknown model, got {:?}", other.map(|_| ())),
    }
    registry.register("wide", |s| Ok(Box::new(Mlp::new(s)?)));
    assert_eq!(registry.names(), vec!["mlp", "vae", "wide"]);
    assert_eq!(registry.build(spec).unwrap().spec().kind, "wide");
}

#[test]
fn nmse_rejects_zero_power_truth() {
    let z = CsiMatrix::zeros(2, 2);
    let one = CsiMatrix::from_vec(2, 2, vec![Complex64::new(1.0, 0.0); 4]);
    let err = nmse(&[one.clone(), one.clone()], &[one.clone(), z.clone()], NmseMode::MeanOfRatios);
    assert!(matches!(err, Err(LearnError::ZeroPowerTarget { index: 1 })));
    assert!(nmse(std::slice::from_ref(&one), &[z], NmseMode::RatioOfSums).is_err());
    assert!(matches!(nmse(&[], &[], NmseMode::MeanOfRatios), Err(LearnError::EmptyBatch)));
}

fn csi_strategy() -> impl Strategy<Value = Vec<CsiMatrix>> {
    prop::collection::vec(prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 6), 1..6).prop_map(|samples| {
        samples
            .into_iter()
            .map(|v| CsiMatrix::from_vec(2, 3, v.into_iter().map(|(re, im)| Complex64::new(re, im)).collect()))
            .filter(|m| m.frobenius_sq() > 1e-6)
            .collect()
    })
}

proptest! {
    #[test]
    fn nmse_scale_identity(gt in csi_strategy(), a in -3.0f64..3.0, sum_mode in any::<bool>()) {
        prop_assume!(!gt.is_empty());
        let mode = if sum_mode { NmseMode::RatioOfSums } else { NmseMode::MeanOfRatios };
        let pred: Vec<CsiMatrix> = gt.iter().map(|m| { let mut p = m.clone(); p.scale(a); p }).collect();
        let v = nmse(&pred, &gt, mode).unwrap();
        prop_assert!((v - (a - 1.0).powi(2)).abs() < 1e-10);
    }
}
