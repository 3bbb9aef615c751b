//! End-to-end use of the core crate on a synthetic family of fields.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use usmnet_core::dataset::{build_training_table, is_partition, split, CaseType, Corpus, GeometryProvider, GeometryRef, LandmarkSet, Snapshot, TrainingTable};
use usmnet_core::eval::evaluate_table;
use usmnet_core::network::{build, CoordinateMode, Head, Model, ModelParams, ModelSpec, Network};
use usmnet_core::training::{loss, train, AdamConfig, BcSamples, BfgsConfig, Discrepancy, LossConfig, OptSchedule, Regularizer, TrainLog};

/// Rectangles `[0, 1] x [0, height]`, mapped to the unit square.
struct Boxes;

impl GeometryProvider for Boxes {
    fn landmarks(&self, geometry: &GeometryRef, _: LandmarkSet) -> usmnet_core::Result<Vec<f64>> {
        match geometry {
            GeometryRef::Cavity { height } => Ok(vec![*height]),
            _ => unreachable!(),
        }
    }

    fn universal_coordinates(&self, geometry: &GeometryRef, p: &[f64]) -> usmnet_core::Result<Vec<f64>> {
        match geometry {
            GeometryRef::Cavity { height } => Ok(vec![p[0], p[1] / height]),
            _ => unreachable!(),
        }
    }
}

/// Smooth field depending on the amplitude `a` and the box height.
fn field(p: [f64; 2], a: f64, height: f64) -> [f64; 2] {
    let y = p[1] / height;
    [a * (1.5 * p[0]).sin() * y, (1.0 - y) * (p[0] - 0.5) * a]
}

fn corpus(n: usize, points: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Corpus::new(CaseType::Cavity, 2, 2, 1);
    for i in 0..n {
        let (a, h) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
        let mut pts = Vec::new();
        let mut vals = Vec::new();
        for _ in 0..points {
            let p = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..h)];
            pts.extend(p);
            vals.extend(field(p, a, h));
        }
        c.push(Snapshot::new(format!("s{i}"), vec![a], GeometryRef::Cavity { height: h }, 2, 2, pts, vals).unwrap()).unwrap();
    }
    c
}

fn fitted_spec(table: &TrainingTable, coords: CoordinateMode) -> ModelSpec {
    let mut spec = ModelSpec::new(2, 1, 1, 2, vec![12, 8], Head::Velocity, coords);
    spec.fit_normalization(&table.inputs, &table.targets).unwrap();
    spec
}

#[test]
fn trained_surrogate_generalizes_and_round_trips() {
    let data = corpus(24, 60, 1);
    let s = split(data.len(), [0.75, 0.125, 0.125], 9).unwrap();
    let train_table = build_training_table(&data.subset(&s.train).unwrap(), CoordinateMode::Universal, LandmarkSet::Height, &Boxes).unwrap();
    let test_table = build_training_table(&data.subset(&s.test).unwrap(), CoordinateMode::Universal, LandmarkSet::Height, &Boxes).unwrap();
    let spec = fitted_spec(&train_table, CoordinateMode::Universal);
    let net = Network::new(spec.clone()).unwrap();
    let schedule = OptSchedule {
        adam: AdamConfig { iterations: 200, ..Default::default() },
        bfgs: BfgsConfig { iterations: 400, ..Default::default() },
    };
    let w0 = build(&spec, 0).unwrap().w;
    let untrained = Model::new(spec.clone(), ModelParams { w: w0.clone() }).unwrap();
    let out = train(&net, &w0, &train_table, &LossConfig::new(Discrepancy::SquaredL2), &schedule, &mut TrainLog::default()).unwrap();
    let model = Model::new(spec, ModelParams { w: out.params }).unwrap();

    let before = evaluate_table(&untrained, &test_table, "m", 0, "test").unwrap().aggregate("relative_rmse_v").unwrap().median;
    let after = evaluate_table(&model, &test_table, "m", 0, "test").unwrap().aggregate("relative_rmse_v").unwrap().median;
    assert!(after < 0.05, "held-out relative error {after}");
    assert!(after < 0.1 * before);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.usmn");
    model.write_checkpoint(&path).unwrap();
    let back = Model::read_checkpoint(&path).unwrap();
    let rows = &test_table.inputs;
    let (a, b) = (model.evaluate_batch(rows).unwrap(), back.evaluate_batch(rows).unwrap());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn corpus_round_trip_preserves_tables() {
    let data = corpus(5, 7, 2);
    let dir = tempfile::tempdir().unwrap();
    data.write(dir.path()).unwrap();
    let back = Corpus::read(dir.path()).unwrap();
    assert_eq!(back, data);
    let t1 = build_training_table(&data, CoordinateMode::Physical, LandmarkSet::Height, &Boxes).unwrap();
    let t2 = build_training_table(&back, CoordinateMode::Physical, LandmarkSet::Height, &Boxes).unwrap();
    assert_eq!(t1.inputs, t2.inputs);
    assert_eq!(t1.targets, t2.targets);
    assert_eq!(t1.snapshots.len(), 5);
}

#[test]
fn regularized_loss_gradient_matches_differences() {
    let data = corpus(3, 6, 3);
    let table = build_training_table(&data, CoordinateMode::Physical, LandmarkSet::Height, &Boxes).unwrap();
    let spec = fitted_spec(&table, CoordinateMode::Physical);
    let net = Network::new(spec.clone()).unwrap();
    let w = build(&spec, 5).unwrap().w;
    let mut cfg = LossConfig::new(Discrepancy::DirectionAugmented { eps: 1e-4 });
    cfg.regularizers.push(Regularizer::BcPenalty {
        samples: BcSamples { inputs: vec![0.0, 1.0, 1.0, 1.0, 1.0, 0.5, 1.5, 1.2], datum: vec![1.0, 0.0, 0.0, 0.0] },
        weight: 0.7,
    });
    cfg.regularizers.push(Regularizer::Tikhonov { lambda: 1e-3 });
    cfg.snapshot_weights = Some(vec![1.0, 2.0, 0.5]);
    let (_, g) = loss(&net, &w, &table, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..w.len() {
        let h = 1e-6;
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp[i] += h;
        wm[i] -= h;
        let fd = (loss(&net, &wp, &table, &cfg).unwrap().0 - loss(&net, &wm, &table, &cfg).unwrap().0) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / g[i].abs().max(1e-3));
    }
    assert!(worst < 1e-5, "worst gradient error {worst}");
}

#[test]
fn uniform_snapshot_weights_scale_the_loss() {
    let data = corpus(4, 5, 4);
    let table = build_training_table(&data, CoordinateMode::Physical, LandmarkSet::Height, &Boxes).unwrap();
    let spec = fitted_spec(&table, CoordinateMode::Physical);
    let net = Network::new(spec.clone()).unwrap();
    let w = build(&spec, 1).unwrap().w;
    let plain = loss(&net, &w, &table, &LossConfig::new(Discrepancy::SquaredL2)).unwrap().0;
    let mut cfg = LossConfig::new(Discrepancy::SquaredL2);
    cfg.snapshot_weights = Some(vec![4.0; 4]);
    let weighted = loss(&net, &w, &table, &cfg).unwrap().0;
    assert_eq!(weighted, 4.0 * plain);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_are_seeded_partitions(n in 3usize..200, seed in any::<u64>(), f0 in 0.3f64..0.8) {
        let rest = (1.0 - f0) / 2.0;
        let fractions = [f0, rest, 1.0 - f0 - rest];
        if let Ok(s) = split(n, fractions, seed) {
            prop_assert!(is_partition(&s, n));
            prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), n);
            prop_assert_eq!(split(n, fractions, seed).unwrap(), s);
        }
    }

    #[test]
    fn batch_and_row_evaluation_agree(seed in any::<u64>(), rows in prop::collection::vec(prop::array::uniform4(-2.0f64..3.0), 1..20)) {
        let mut spec = ModelSpec::new(2, 1, 1, 2, vec![5, 3], Head::Potential, CoordinateMode::Physical);
        spec.fit_normalization(&[0.0, 0.0, 0.5, 0.5, 1.0, 2.0, 2.0, 2.0], &[-1.0, 0.0, 1.0, 0.5]).unwrap();
        let model = Model::new(spec.clone(), build(&spec, seed).unwrap()).unwrap();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let batch = model.evaluate_batch(&flat).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let single = model.evaluate_row(r).unwrap();
            prop_assert_eq!(&batch[2 * i..2 * i + 2], &single[..]);
        }
    }
}
