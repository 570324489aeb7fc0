use dualnet_core::bnn::{train_bnn, BnnModel};
use dualnet_core::checkpoint::Checkpoint;
use dualnet_core::normalize::Standardizer;
use dualnet_core::training::{LearningCurve, Splits};
use dualnet_core::variance_net::{train_variance_net, VarianceModel};
use dualnet_core::{joint_train, BenchmarkSpec, Error, JointOptions, Rng, Split, TrainConfig};

fn small_benchmark() -> (BenchmarkSpec, TrainConfig) {
    let mut spec = BenchmarkSpec::default();
    spec.features.sample_count = 200;
    spec.test_id_count = 100;
    spec.test_ood_count = 100;
    let cfg = TrainConfig {
        epochs: 30,
        eval_interval: 7,
        seed: 5,
        ..TrainConfig::default()
    };
    (spec, cfg)
}

#[test]
fn variance_training_leaves_bnn_untouched() {
    let (spec, cfg) = small_benchmark();
    let train = spec.generate(Split::Train).unwrap();
    let root = Rng::new(cfg.seed);
    let st = Standardizer::fit(&train);
    let mut bnn = BnnModel::from_config(&cfg, &root);
    train_bnn(&mut bnn, &st, &Splits::train_only(&train), &cfg, &root).unwrap();
    let before = serde_json::to_string(&bnn).unwrap();

    let mut vnet = VarianceModel::from_config(&cfg, &root);
    let initial = vnet.clone();
    train_variance_net(&mut vnet, &bnn, &st, &Splits::train_only(&train), &cfg, &root).unwrap();
    assert_eq!(serde_json::to_string(&bnn).unwrap(), before);
    assert_ne!(vnet, initial, "variance net should have moved");
}

#[test]
fn disabling_the_variance_net_reproduces_bnn_training() {
    let (spec, cfg) = small_benchmark();
    let train = spec.generate(Split::Train).unwrap();
    let id = spec.generate(Split::TestId).unwrap();
    let splits = Splits {
        train: &train,
        test_id: Some(&id),
        test_ood: None,
    };
    let joint = joint_train(
        &splits,
        &cfg,
        JointOptions {
            train_variance_net: false,
        },
    )
    .unwrap();

    let root = Rng::new(cfg.seed);
    let mut bnn = BnnModel::from_config(&cfg, &root);
    let curve = train_bnn(&mut bnn, &Standardizer::fit(&train), &splits, &cfg, &root).unwrap();
    assert_eq!(joint.bnn, bnn);
    assert_eq!(joint.history.bnn, curve);
    assert!(joint.history.vnet.is_empty());
    assert_eq!(joint.vnet, VarianceModel::from_config(&cfg, &root));
}

#[test]
fn checkpoints_round_trip_and_are_deterministic() {
    let (spec, cfg) = small_benchmark();
    let train = spec.generate(Split::Train).unwrap();
    let splits = Splits::train_only(&train);
    let a = joint_train(&splits, &cfg, JointOptions::default()).unwrap();
    let b = joint_train(&splits, &cfg, JointOptions::default()).unwrap();
    let ja = Checkpoint::new(&a, "abc").to_json().unwrap();
    let jb = Checkpoint::new(&b, "abc").to_json().unwrap();
    assert_eq!(ja, jb);
    assert_eq!(a.history.bnn.len(), cfg.curve_len());
    assert_eq!(a.history.vnet.len(), cfg.curve_len());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    Checkpoint::new(&a, "abc").save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.config_hash, "abc");
    let model = loaded.into_model().unwrap();
    assert_eq!(model, a);
    let x = &train.features[..20];
    assert_eq!(model.predict_default(x).unwrap(), a.predict_default(x).unwrap());
}

#[test]
fn foreign_checkpoints_are_rejected() {
    let (spec, mut cfg) = small_benchmark();
    cfg.epochs = 1;
    let train = spec.generate(Split::Train).unwrap();
    let m = joint_train(&Splits::train_only(&train), &cfg, JointOptions::default()).unwrap();
    let json = Checkpoint::new(&m, "h").to_json().unwrap();
    let bumped = json.replacen("\"version\": 1", "\"version\": 2", 1);
    assert!(matches!(Checkpoint::from_json(&bumped), Err(Error::Incompatible(_))));
    let renamed = json.replacen("dualnet-checkpoint", "something-else", 1);
    assert!(matches!(Checkpoint::from_json(&renamed), Err(Error::Incompatible(_))));
    let mut no_vnet = Checkpoint::new(&m, "h");
    no_vnet.sections.pop();
    assert!(matches!(no_vnet.into_model(), Err(Error::Incompatible(_))));
}

#[test]
fn empty_training_split_is_rejected() {
    let (spec, cfg) = small_benchmark();
    let mut train = spec.generate(Split::Train).unwrap();
    train.features.clear();
    train.targets.clear();
    train.noise_sigma.clear();
    assert!(joint_train(&Splits::train_only(&train), &cfg, JointOptions::default()).is_err());
}

/// Over the final quarter of the curve no point rises more than 10% above the
/// quarter's first point, and the last point ends at or below it.
fn settled(curve: &LearningCurve, pick: impl Fn(usize) -> f64) -> Result<(), String> {
    let n = curve.len();
    let start = n - n.div_ceil(4);
    let base = pick(start);
    for j in start + 1..n {
        if pick(j) > 1.1 * base {
            return Err(format!(
                "epoch {} = {:.3} exceeds epoch {} = {:.3} by more than 10%",
                curve.points[j].epoch, pick(j), curve.points[start].epoch, base
            ));
        }
    }
    if pick(n - 1) > base {
        return Err(format!("final value {:.3} above {:.3}", pick(n - 1), base));
    }
    Ok(())
}

#[test]
fn default_benchmark_training_settles() {
    let spec = BenchmarkSpec::default();
    let train = spec.generate(Split::Train).unwrap();
    let id = spec.generate(Split::TestId).unwrap();
    let ood = spec.generate(Split::TestOod).unwrap();
    let cfg = TrainConfig::default();
    let splits = Splits {
        train: &train,
        test_id: Some(&id),
        test_ood: Some(&ood),
    };
    let m = joint_train(&splits, &cfg, JointOptions::default()).unwrap();
    let bnn = &m.history.bnn;
    let vnet = &m.history.vnet;
    assert_eq!(bnn.len(), cfg.curve_len());
    settled(bnn, |i| bnn.points[i].train).expect("BNN train RMSE");
    settled(vnet, |i| vnet.points[i].train).expect("variance-net train RMSE");
    let last = bnn.last().unwrap();
    assert!(last.test_ood.unwrap() > last.test_id.unwrap());
}
