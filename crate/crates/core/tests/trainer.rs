use std::sync::OnceLock;

use flowbench::datakit::{Dataset, DatasetSplit};
use flowbench::diffmath::{Tape, Tensor};
use flowbench::flowgen::{case_id, enumerate_cases, solve_case, Problem, SolverConfig, Subset};
use flowbench::operators::{build_model, Architecture, ModelKind, ModelSpec};
use flowbench::trainer::{
    load_history, load_run, lr_at_epoch, nmse, nmse_loss, sample_queries, scheduled_lr, train, write_run, ExampleSet,
    TrainConfig, TrainError, CONFIG_FILE, HISTORY_FILE,
};
use proptest::prelude::*;

fn toy_dataset() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| {
        let cfg = SolverConfig { resolution: [16, 16], n_frames: 6, frame_flow_fraction: Some(0.5), ..Default::default() };
        let cases = enumerate_cases(Problem::Cavity, Subset::Prop)
            .iter()
            .enumerate()
            .step_by(10)
            .take(8)
            .map(|(i, p)| {
                let mut r = solve_case(p, &cfg).unwrap();
                r.meta.case_id = case_id(Problem::Cavity, Subset::Prop, i);
                r
            })
            .collect::<Vec<_>>();
        let ids: Vec<String> = cases.iter().map(|c| c.meta.case_id.clone()).collect();
        let split = DatasetSplit { train: ids[..6].to_vec(), val: vec![ids[6].clone()], test: vec![ids[7].clone()], seed: 0, ratio: [8, 1, 1] };
        Dataset::new(cases, split).unwrap()
    })
}

fn toy_spec(kind: ModelKind) -> ModelSpec {
    let mut spec = ModelSpec::new(kind, Problem::Cavity.omega_dim(), [16, 16], 3);
    spec.arch = match kind {
        ModelKind::UNet => Architecture::UNet { base: 4, depth: 2 },
        ModelKind::Ffn => Architecture::Ffn { hidden: vec![16, 16] },
        ModelKind::DeepOnet => Architecture::DeepOnet { width: 8, branch_hidden: vec![16], trunk_hidden: vec![16] },
        ModelKind::AutoDeepOnet => Architecture::AutoDeepOnet { width: 8, branch_hidden: vec![16], trunk_hidden: vec![16] },
        ModelKind::Fno => Architecture::Fno { hidden: 4, blocks: 1, modes: 4, projection: 8 },
        other => Architecture::default_for(other),
    };
    spec
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 8, k: 32, ..Default::default() }
}

#[test]
fn nmse_definition_examples() {
    assert_eq!(nmse(&[1.0f64, 2.0], &[1.0, 2.0]).unwrap(), (0.0, false));
    assert_eq!(nmse(&[0.0f64, 0.0], &[1.0, 2.0]).unwrap(), (1.0, false));
    let (v, flagged) = nmse(&[1.0f64, 0.0], &[0.0, 0.0]).unwrap();
    assert!(flagged && v.is_finite() && v > 0.0);
    assert!(matches!(nmse(&[1.0f64], &[1.0, 2.0]), Err(TrainError::Contract(_))));
}

#[test]
fn tape_loss_matches_plain_nmse_and_its_gradient() {
    let pred = Tensor::new([2, 3], vec![0.1f64, -0.4, 0.9, 1.2, 0.0, -0.3]).unwrap();
    let label = Tensor::new([2, 3], vec![0.2f64, -0.1, 1.0, 1.0, 0.5, -0.6]).unwrap();
    let mut tape = Tape::new();
    let p = tape.param(pred.clone());
    let y = tape.constant(label.clone());
    let (loss, flagged) = nmse_loss(&mut tape, p, y).unwrap();
    assert!(!flagged);
    let value = tape.value(loss).data()[0];
    assert!((value - nmse(pred.data(), label.data()).unwrap().0).abs() < 1e-15);
    let g = tape.backward(loss).unwrap();
    let energy: f64 = label.data().iter().map(|v| v * v).sum();
    for (k, gk) in g.get(p).unwrap().data().iter().enumerate() {
        assert!((gk - 2.0 * (pred.data()[k] - label.data()[k]) / energy).abs() < 1e-14);
    }
}

#[test]
fn schedule_examples() {
    assert_eq!(lr_at_epoch(1e-3, 0), 1e-3);
    assert_eq!(lr_at_epoch(1e-3, 19), 1e-3);
    assert!((lr_at_epoch(1e-3, 20) - 0.9e-3).abs() < 1e-18);
    assert!((lr_at_epoch(1e-3, 45) - 0.81e-3).abs() < 1e-18);
    assert_eq!(scheduled_lr(2.0, 0.5, 3, 7), 0.5);
}

#[test]
fn exhaustive_sample_covers_every_cell_once() {
    let frame: Vec<f32> = (0..2 * 20).map(|v| v as f32).collect();
    let mask = vec![1u8; 20];
    let mut s = sample_queries(&frame, &mask, 4, 5, 20, 9).unwrap();
    s.sort_by_key(|q| q.cell);
    for (k, q) in s.iter().enumerate() {
        assert_eq!(q.cell, k);
        assert_eq!(q.value, [k as f32, (20 + k) as f32]);
        assert_eq!((q.x, q.y), (((k % 5) as f64 + 0.5) / 5.0, ((k / 5) as f64 + 0.5) / 4.0));
    }
    assert_eq!(sample_queries(&frame, &mask, 4, 5, 7, 1).unwrap(), sample_queries(&frame, &mask, 4, 5, 7, 1).unwrap());
    assert!(matches!(sample_queries(&frame, &mask, 4, 5, 21, 1), Err(TrainError::Contract(_))));
}

#[test]
fn sampling_skips_obstacle_cells() {
    let frame = vec![1.0f32; 2 * 16];
    let mut mask = vec![1u8; 16];
    for c in [0, 5, 6, 15] {
        mask[c] = 0;
    }
    let s = sample_queries(&frame, &mask, 4, 4, 12, 3).unwrap();
    assert!(s.iter().all(|q| mask[q.cell] == 1));
    assert!(matches!(sample_queries(&frame, &mask, 4, 4, 13, 3), Err(TrainError::Contract(_))));
}

#[test]
fn cell_selection_is_uniform() {
    let (cells, k, draws) = (25usize, 3usize, 100_000u64);
    let frame = vec![0.0f32; 2 * cells];
    let mask = vec![1u8; cells];
    let mut counts = vec![0u64; cells];
    for seed in 0..draws {
        for q in sample_queries(&frame, &mask, 5, 5, k, seed).unwrap() {
            counts[q.cell] += 1;
        }
    }
    let p = k as f64 / cells as f64;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (c, &n) in counts.iter().enumerate() {
        assert!((n as f64 - mean).abs() <= 3.0 * sigma, "cell {c}: {n} vs {mean} +- {sigma}");
    }
}

#[test]
fn config_validation() {
    let ok = TrainConfig::default();
    assert_eq!((ok.batch_size, ok.k, ok.decay, ok.decay_period, ok.patience), (32, 1000, 0.9, 20, 30));
    ok.validate().unwrap();
    for bad in [
        TrainConfig { decay: 0.0, ..Default::default() },
        TrainConfig { decay: 1.1, ..Default::default() },
        TrainConfig { k: 0, ..Default::default() },
        TrainConfig { batch_size: 0, ..Default::default() },
        TrainConfig { lr: Some(-1.0), ..Default::default() },
    ] {
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))), "{bad:?}");
    }
    let parsed: TrainConfig = serde_json::from_str(r#"{"lr": 0.01, "epochs": 3}"#).unwrap();
    assert_eq!((parsed.lr, parsed.epochs, parsed.batch_size), (Some(0.01), 3, 32));
}

#[test]
fn zero_epochs_returns_the_model_unchanged() {
    let model = build_model::<f32>(&toy_spec(ModelKind::UNet)).unwrap();
    let (out, state) = train(model.clone(), toy_dataset(), &quick(0)).unwrap();
    assert_eq!(out.params(), model.params());
    assert!(state.history.is_empty());
    assert_eq!(state.epoch, 0);
}

#[test]
fn unet_learns_on_the_toy_set() {
    let data = toy_dataset();
    let before = data.clone();
    let model = build_model::<f32>(&toy_spec(ModelKind::UNet)).unwrap();
    let (trained, state) = train(model, data, &quick(50)).unwrap();
    assert_eq!(data.cases, before.cases, "dataset mutated");
    assert_eq!(state.history.len(), state.epoch);
    assert!(state.history.iter().all(|r| r.train_nmse.is_finite() && r.val_nmse.is_none_or(f64::is_finite)));
    let first = state.history.first().unwrap().train_nmse;
    let last = state.history.last().unwrap().train_nmse;
    assert!(last < first, "train NMSE {first} -> {last}");

    // The returned parameters are those of the best validation epoch.
    let best = state.history.iter().filter_map(|r| r.val_nmse).fold(f64::INFINITY, f64::min);
    let stats = data.stats().unwrap();
    let val = ExampleSet::new(data.val(), &stats, ModelKind::UNet);
    let all: Vec<usize> = (0..val.len()).collect();
    let (input, label, mask) = val.batch::<f32>(&all, 1, 0, 0).unwrap();
    let mut pred = trained.predict(&input).unwrap();
    pred.data_mut().iter_mut().zip(mask.unwrap().data()).for_each(|(p, m)| *p *= m);
    let per = pred.numel() / all.len();
    let score: f64 = pred.data().chunks(per).zip(label.data().chunks(per)).map(|(p, y)| nmse(p, y).unwrap().0).sum::<f64>() / all.len() as f64;
    assert!((score - best).abs() <= 1e-6 * best.max(1e-12), "{score} vs {best}");
}

#[test]
fn identical_seeds_give_identical_histories() {
    let cfg = quick(3);
    let run = || {
        let model = build_model::<f32>(&toy_spec(ModelKind::DeepOnet)).unwrap();
        train(model, toy_dataset(), &cfg).unwrap()
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(sa.history, sb.history);
    assert_eq!(a.params(), b.params());
}

#[test]
fn every_input_family_trains() {
    for kind in [ModelKind::Ffn, ModelKind::AutoDeepOnet, ModelKind::Fno] {
        let model = build_model::<f32>(&toy_spec(kind)).unwrap();
        let (_, state) = train(model, toy_dataset(), &quick(2)).unwrap();
        assert_eq!(state.history.len(), 2, "{kind}");
        assert!(state.history.iter().all(|r| r.train_nmse.is_finite()), "{kind}");
    }
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let mut model = build_model::<f32>(&toy_spec(ModelKind::Ffn)).unwrap();
    model.params_mut()[0].data_mut()[0] = f32::NAN;
    let cfg = TrainConfig { lr: Some(2e-3), ..quick(3) };
    match train(model, toy_dataset(), &cfg) {
        Err(TrainError::NonFinite { epoch, batch, lr }) => assert_eq!((epoch, batch, lr), (0, 0, 2e-3)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn contract_violations_are_reported() {
    let model = build_model::<f32>(&toy_spec(ModelKind::Ffn)).unwrap();
    let cfg = TrainConfig { k: 257, ..quick(1) };
    assert!(matches!(train(model, toy_dataset(), &cfg), Err(TrainError::Contract(_))));
    let mut spec = toy_spec(ModelKind::UNet);
    spec.resolution = [32, 32];
    let model = build_model::<f32>(&spec).unwrap();
    assert!(matches!(train(model, toy_dataset(), &quick(1)), Err(TrainError::Contract(_))));
}

#[test]
fn run_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = build_model::<f32>(&toy_spec(ModelKind::AutoDeepOnet)).unwrap();
    let cfg = quick(2);
    let (trained, state) = train(model, toy_dataset(), &cfg).unwrap();
    write_run(dir.path(), &cfg, &trained, &state).unwrap();
    assert_eq!(load_history(&dir.path().join(HISTORY_FILE)).unwrap(), state.history);
    let header = std::fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap();
    assert!(header.starts_with("epoch,train_nmse,val_nmse,lr\n"));
    let recorded: TrainConfig = serde_json::from_slice(&std::fs::read(dir.path().join(CONFIG_FILE)).unwrap()).unwrap();
    assert_eq!(recorded.lr, Some(ModelKind::AutoDeepOnet.default_lr()));
    let (back, stats) = load_run::<f32>(dir.path()).unwrap();
    assert_eq!(back.params(), trained.params());
    assert_eq!(stats, state.stats);
}

proptest! {
    #[test]
    fn nmse_is_scale_invariant(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..40),
        c in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3],
    ) {
        let (y, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(y.iter().map(|v| v * v).sum::<f64>() > 1e-6);
        let a = nmse(&p, &y).unwrap().0;
        let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
        let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
        let b = nmse(&ps, &ys).unwrap().0;
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn schedule_never_increases(base in 1e-6f64..1.0, e in 0usize..500) {
        prop_assert!(lr_at_epoch(base, e + 1) <= lr_at_epoch(base, e));
    }
}
