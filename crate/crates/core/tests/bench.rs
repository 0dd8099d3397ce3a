use flowbench::bench::{
    compute_metrics, emit_report, eval_identity, evaluate, profile, read_results, rollout, rollout_mean, Aggregation,
    BenchError, IdentityPredictor, Metrics, ModelPredictor, OraclePredictor, ProfileConfig, RecordKey, ResultRecord,
    RESULTS_FILE,
};
use flowbench::datakit::{CaseMeta, CaseRecord, Dataset, DatasetSplit, SCHEMA_VERSION};
use flowbench::flowgen::{OperatingParams, Problem, Subset};
use flowbench::operators::{build_model, Architecture, ModelKind, ModelSpec};
use flowbench::trainer::nmse;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: usize = 8;
const W: usize = 8;

fn record(id: &str, u_b: f64, t: usize, seed: u64) -> CaseRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = OperatingParams { u_b, ..OperatingParams::baseline(Problem::Cavity) };
    let (hm, wm) = params.extents_m();
    let meta = CaseMeta {
        schema_version: SCHEMA_VERSION,
        problem: Problem::Cavity,
        subset: Some(Subset::Prop),
        case_id: id.into(),
        dt: 0.1,
        extents_m: [hm, wm],
        resolution: [H, W],
        n_frames: t,
        channels: vec!["u".into(), "v".into()],
        flags: Default::default(),
        params,
    };
    let frames = (0..t * 2 * H * W).map(|_| rng.random_range(-2.0f32..2.0)).collect();
    let mask = (0..H * W).map(|k| u8::from(k % 9 != 4)).collect();
    CaseRecord::new(meta, frames, mask).unwrap()
}

fn dataset() -> Dataset {
    let cases: Vec<CaseRecord> = (0..6).map(|i| record(&format!("c{i}"), 1.0 + i as f64, 4 + i % 3, i as u64)).collect();
    let ids: Vec<String> = cases.iter().map(|c| c.meta.case_id.clone()).collect();
    let split = DatasetSplit { train: ids[..3].to_vec(), val: vec![ids[3].clone()], test: ids[4..].to_vec(), seed: 0, ratio: [8, 1, 1] };
    Dataset::new(cases, split).unwrap()
}

/// Definitional metrics over fluid cells, written independently of the library.
fn brute(y: &[f32], yhat: &[f32], mask: &[u8]) -> Metrics {
    let plane = mask.len();
    let (mut se, mut e, mut ae, mut n) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    for c in 0..y.len() / plane {
        for k in 0..plane {
            if mask[k] == 0 {
                continue;
            }
            let (a, b) = (y[c * plane + k] as f64, yhat[c * plane + k] as f64);
            se += (a - b).powi(2);
            e += a.powi(2);
            ae += (a - b).abs();
            n += 1;
        }
    }
    Metrics { mse: se / n as f64, nmse: se / e, mae: ae / n as f64 }
}

fn close(a: &Metrics, b: &Metrics, tol: f64) -> bool {
    (a.mse - b.mse).abs() < tol && (a.nmse - b.nmse).abs() < tol && (a.mae - b.mae).abs() < tol
}

#[test]
fn definition_examples() {
    let (m, flagged) = compute_metrics(&[1.0, 2.0], &[0.0, 0.0], &[1, 1]).unwrap();
    assert_eq!(m, Metrics { mse: 2.5, nmse: 1.0, mae: 1.5 });
    assert!(!flagged);
    assert_eq!(compute_metrics(&[1.0, 2.0], &[1.0, 2.0], &[1, 1]).unwrap().0, Metrics::default());
    let (z, flagged) = compute_metrics(&[0.0, 0.0], &[1.0, 0.0], &[1, 1]).unwrap();
    assert!(flagged && z.nmse.is_finite());
    assert!(matches!(compute_metrics(&[1.0], &[1.0, 2.0], &[1, 1]), Err(BenchError::Contract(_))));
}

#[test]
fn metrics_match_brute_force_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let plane = rng.random_range(1..40);
        let c = rng.random_range(1..3);
        let y: Vec<f32> = (0..c * plane).map(|_| rng.random_range(-5.0f32..5.0)).collect();
        let yhat: Vec<f32> = (0..c * plane).map(|_| rng.random_range(-5.0f32..5.0)).collect();
        let mut mask: Vec<u8> = (0..plane).map(|_| u8::from(rng.random_bool(0.8))).collect();
        mask[0] = 1;
        let got = compute_metrics(&y, &yhat, &mask).unwrap().0;
        assert!(close(&got, &brute(&y, &yhat, &mask), 1e-12), "{got:?}");
    }
}

#[test]
fn training_loss_agrees_with_the_metric() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y: Vec<f32> = (0..50).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let p: Vec<f32> = (0..50).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let metric = compute_metrics(&y, &p, &[1u8; 25]).unwrap().0.nmse;
    assert!((metric - nmse(&p, &y).unwrap().0).abs() < 1e-12);
}

#[test]
fn steady_case_has_zero_identity_error() {
    let mut base = record("s", 1.0, 5, 3);
    let first = base.velocity(0).to_vec();
    let (meta, _, mask) = base.clone().into_parts();
    base = CaseRecord::new(meta, first.repeat(5), mask).unwrap();
    let report = evaluate(&IdentityPredictor, &[&base], Aggregation::PerFrame, 1).unwrap();
    assert_eq!(report.metrics, Metrics::default());
    assert_eq!(report.frames, 4);
}

#[test]
fn identity_baseline_equals_pairwise_loop() {
    let data = dataset();
    let report = eval_identity(&data, "test").unwrap();
    let test = data.test();
    let mut sum = Metrics::default();
    let mut frames = 0;
    let mut pooled = (0.0, 0.0, 0.0, 0usize);
    for case in &test {
        for t in 1..case.n_frames() {
            let m = brute(case.velocity(t), case.velocity(t - 1), case.mask());
            sum.mse += m.mse;
            sum.nmse += m.nmse;
            sum.mae += m.mae;
            frames += 1;
            for c in 0..2 {
                for k in 0..H * W {
                    if case.mask()[k] == 1 {
                        let (a, b) = (case.velocity(t)[c * H * W + k] as f64, case.velocity(t - 1)[c * H * W + k] as f64);
                        pooled.0 += (a - b).powi(2);
                        pooled.1 += a * a;
                        pooled.2 += (a - b).abs();
                        pooled.3 += 1;
                    }
                }
            }
        }
    }
    assert_eq!(report.frames, test.iter().map(|c| c.n_frames() - 1).sum::<usize>());
    let n = frames as f64;
    let mean = Metrics { mse: sum.mse / n, nmse: sum.nmse / n, mae: sum.mae / n };
    assert!(close(&report.metrics, &mean, 1e-12), "{:?} vs {mean:?}", report.metrics);
    let pooled_report = evaluate(&IdentityPredictor, &test, Aggregation::Pooled, 2).unwrap();
    let want = Metrics { mse: pooled.0 / pooled.3 as f64, nmse: pooled.0 / pooled.1, mae: pooled.2 / pooled.3 as f64 };
    assert!(close(&pooled_report.metrics, &want, 1e-12));
    assert!(matches!(eval_identity(&data, "holdout"), Err(BenchError::Data(_))));
}

#[test]
fn parallel_evaluation_is_deterministic() {
    let data = dataset();
    let cases: Vec<&CaseRecord> = data.cases.iter().collect();
    let one = evaluate(&IdentityPredictor, &cases, Aggregation::PerFrame, 1).unwrap();
    let four = evaluate(&IdentityPredictor, &cases, Aggregation::PerFrame, 4).unwrap();
    assert_eq!(one, four);
}

#[test]
fn oracle_rollout_is_exact() {
    let case = record("o", 2.0, 6, 4);
    let curve = rollout(&OraclePredictor, &case, 5).unwrap();
    assert_eq!(curve.steps, vec![1, 2, 3, 4, 5]);
    assert!(curve.metrics.iter().all(|m| *m == Metrics::default()));
}

#[test]
fn identity_rollout_matches_the_loop_oracle() {
    let case = record("i", 2.0, 8, 5);
    let curve = rollout(&IdentityPredictor, &case, 7).unwrap();
    assert_eq!(curve.len(), 7);
    for (k, m) in curve.steps.iter().zip(&curve.metrics) {
        let want = compute_metrics(case.velocity(*k), case.velocity(0), case.mask()).unwrap().0;
        assert_eq!(*m, want, "step {k}");
        assert!(close(m, &brute(case.velocity(*k), case.velocity(0), case.mask()), 1e-12));
    }
}

#[test]
fn rollout_is_truncated_to_labeled_frames() {
    let case = record("t", 2.0, 4, 6);
    assert_eq!(rollout(&IdentityPredictor, &case, 20).unwrap().steps, vec![1, 2, 3]);
    let short = record("u", 1.0, 3, 7);
    let mean = rollout_mean(&IdentityPredictor, &[&case, &short], 20, 1).unwrap();
    assert_eq!(mean.steps, vec![1, 2]);
    let a = rollout(&IdentityPredictor, &case, 2).unwrap();
    let b = rollout(&IdentityPredictor, &short, 2).unwrap();
    assert!((mean.metrics[1].nmse - 0.5 * (a.metrics[1].nmse + b.metrics[1].nmse)).abs() < 1e-12);
}

#[test]
fn trained_models_roll_out_for_both_families() {
    let data = dataset();
    let stats = data.stats().unwrap();
    let mut unet = ModelSpec::new(ModelKind::UNet, 5, [H, W], 0);
    unet.arch = Architecture::UNet { base: 2, depth: 2 };
    let mut ffn = ModelSpec::new(ModelKind::Ffn, 5, [H, W], 0);
    ffn.arch = Architecture::Ffn { hidden: vec![8] };
    for spec in [unet, ffn] {
        let model = build_model::<f32>(&spec).unwrap();
        let p = ModelPredictor { model: &model, stats: &stats };
        let curve = rollout(&p, &data.cases[0], 3).unwrap();
        assert_eq!(curve.len(), 3);
        assert!(curve.metrics.iter().all(|m| m.nmse.is_finite()));
    }
}

#[test]
fn profile_counts_and_times_without_touching_weights() {
    let data = dataset();
    let mut spec = ModelSpec::new(ModelKind::UNet, 5, [H, W], 0);
    spec.arch = Architecture::UNet { base: 4, depth: 2 };
    let model = build_model::<f32>(&spec).unwrap();
    let before = model.params().to_vec();
    let cfg = ProfileConfig { iterations: 5, warmup: 2, train_batch: 4, k: 16 };
    let a = profile(&model, &data, &cfg).unwrap();
    let b = profile(&model, &data, &cfg).unwrap();
    assert_eq!(model.params(), before.as_slice());
    assert_eq!(a.params, model.count_params());
    assert_eq!(a.iterations, 20);
    assert!(a.inference_secs > 0.0 && a.train_step_secs > 0.0 && a.train_epoch_secs >= a.train_step_secs);
    assert!(a.peak_train_bytes > 4 * model.count_params() * 4);
    let ratio = a.inference_secs / b.inference_secs;
    assert!((1.0 / 3.0..3.0).contains(&ratio), "latency ratio {ratio}");
}

#[test]
fn profile_of_a_query_model() {
    let data = dataset();
    let mut spec = ModelSpec::new(ModelKind::DeepOnet, 5, [H, W], 0);
    spec.arch = Architecture::DeepOnet { width: 8, branch_hidden: vec![8], trunk_hidden: vec![8] };
    let model = build_model::<f32>(&spec).unwrap();
    let p = profile(&model, &data, &ProfileConfig { k: 16, ..Default::default() }).unwrap();
    assert_eq!(p.params, model.count_params());
}

#[test]
fn empty_report_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&[], dir.path()).unwrap();
    assert_eq!(files.len(), 1);
    assert_eq!(std::fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap(), "model,problem,subset,split,metric,step,value\n");
    assert!(read_results(&files[0]).unwrap().is_empty());
}

#[test]
fn report_round_trip_and_plot_grouping() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset();
    let mut records = RecordKey::new("identity", "cavity", "prop", "test").metrics(&eval_identity(&data, "test").unwrap());
    for (model, seed) in [("identity", 1), ("oracle", 2)] {
        let case = record("r", 1.0, 6, seed);
        let curve = if model == "identity" { rollout(&IdentityPredictor, &case, 5) } else { rollout(&OraclePredictor, &case, 5) };
        records.extend(RecordKey::new(model, "cavity", "prop", "test").rollout(&curve.unwrap()));
    }
    records.extend(RecordKey::new("identity", "tube", "bc", "test").rollout(&rollout(&IdentityPredictor, &record("q", 1.0, 3, 9), 2).unwrap()));
    let files = emit_report(&records, dir.path()).unwrap();
    assert_eq!(read_results(&dir.path().join(RESULTS_FILE)).unwrap(), records);
    let mut svgs: Vec<String> = files[1..].iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    svgs.sort();
    assert_eq!(svgs.len(), 6);
    assert!(svgs.contains(&"rollout_cavity_nmse.svg".to_string()));
    assert!(svgs.contains(&"rollout_tube_mae.svg".to_string()));
    let svg = std::fs::read_to_string(dir.path().join("rollout_cavity_nmse.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("oracle (prop, test)"));
}

#[test]
fn report_rejects_duplicates_and_unwritable_paths() {
    let dir = tempfile::tempdir().unwrap();
    let row = ResultRecord {
        model: "m".into(),
        problem: "cavity".into(),
        subset: "prop".into(),
        split: "test".into(),
        metric: "nmse".into(),
        step: None,
        value: 1.0,
    };
    assert!(matches!(emit_report(&[row.clone(), row.clone()], dir.path()), Err(BenchError::Contract(_))));
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    assert!(matches!(emit_report(&[row], &blocker.join("sub")), Err(BenchError::Io { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nmse_is_scale_invariant(
        seed in 0u64..10_000,
        c in prop_oneof![-100.0f32..-0.01, 0.01f32..100.0],
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f32> = (0..32).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let p: Vec<f32> = (0..32).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let mask = [1u8; 16];
        let a = compute_metrics(&y, &p, &mask).unwrap().0.nmse;
        // Scale in f64 so the comparison is not limited by f32 rounding of the inputs.
        let scaled = |v: &[f32]| -> Vec<f64> { v.iter().map(|&x| x as f64 * c as f64).collect() };
        let b = nmse(&scaled(&p), &scaled(&y)).unwrap().0;
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn obstacle_values_never_matter(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<u8> = (0..20).map(|k| u8::from(k % 4 != 1)).collect();
        let y: Vec<f32> = (0..40).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let p: Vec<f32> = (0..40).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let mut y2 = y.clone();
        let mut p2 = p.clone();
        for k in 0..40 {
            if mask[k % 20] == 0 {
                y2[k] = rng.random_range(-100.0f32..100.0);
                p2[k] = rng.random_range(-100.0f32..100.0);
            }
        }
        prop_assert_eq!(compute_metrics(&y, &p, &mask).unwrap(), compute_metrics(&y2, &p2, &mask).unwrap());
    }
}
