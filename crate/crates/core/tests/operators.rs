use std::f64::consts::PI;

use flowbench::diffmath::{conv2d, Tape, Tensor};
use flowbench::operators::{
    build_model, load_checkpoint, sample_lattice, save_checkpoint, Architecture, InputStyle, Model, ModelInput,
    ModelKind, ModelSpec, OpError, MANIFEST_FILE,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn tiny_spec(kind: ModelKind, seed: u64) -> ModelSpec {
    let mut spec = ModelSpec::new(kind, 3, [8, 8], seed);
    spec.arch = match kind {
        ModelKind::Ffn => Architecture::Ffn { hidden: vec![6, 5] },
        ModelKind::DeepOnet => Architecture::DeepOnet { width: 4, branch_hidden: vec![5], trunk_hidden: vec![5] },
        ModelKind::AutoFfn => Architecture::AutoFfn { hidden: vec![6] },
        ModelKind::AutoDeepOnet => Architecture::AutoDeepOnet { width: 3, branch_hidden: vec![5], trunk_hidden: vec![4] },
        ModelKind::AutoEdeepOnet => {
            Architecture::AutoEdeepOnet { width: 3, sample_hidden: vec![4], omega_hidden: vec![4], trunk_hidden: vec![4] }
        }
        ModelKind::AutoDeepOnetCnn => {
            Architecture::AutoDeepOnetCnn { width: 3, conv_channels: vec![3, 4], dense_hidden: vec![5], trunk_hidden: vec![4] }
        }
        ModelKind::ResNet => Architecture::ResNet { hidden: 3, blocks: 2 },
        ModelKind::UNet => Architecture::UNet { base: 2, depth: 2 },
        ModelKind::Fno => Architecture::Fno { hidden: 3, blocks: 2, modes: 3, projection: 4 },
    };
    spec
}

fn random_input(spec: &ModelSpec, n: usize, q: usize, rng: &mut ChaCha8Rng) -> ModelInput<f64> {
    let [h, w] = spec.resolution;
    let style = spec.kind().style();
    if style == InputStyle::Field {
        return ModelInput::Field(rand_tensor(&[n, spec.in_channels, h, w], rng));
    }
    let context = match style {
        InputStyle::SampledQuery => Some(rand_tensor(&[n, spec.sample_len()], rng)),
        InputStyle::GridQuery => Some(rand_tensor(&[n, spec.in_channels, h, w], rng)),
        _ => None,
    };
    ModelInput::Query {
        omega: Tensor::from_fn([n, spec.omega_dim], |_| rng.random_range(0.0..1.0)),
        coords: Tensor::from_fn([n * q, style.coord_dim()], |_| rng.random_range(0.0..1.0)),
        queries: q,
        context,
    }
}

#[test]
fn reference_parameter_counts_are_exact() {
    for (kind, expected) in [(ModelKind::DeepOnet, 263_701), (ModelKind::UNet, 1_095_025), (ModelKind::Fno, 1_188_545)] {
        let spec = ModelSpec::paper_reference(kind).unwrap();
        assert_eq!(build_model::<f32>(&spec).unwrap().count_params(), expected, "{kind}");
    }
    assert!(ModelSpec::paper_reference(ModelKind::ResNet).is_none());
}

#[test]
fn default_parameter_counts() {
    let expected = [
        (ModelKind::Ffn, 67_458),
        (ModelKind::AutoFfn, 1_123_138),
        (ModelKind::AutoDeepOnet, 572_202),
        (ModelKind::AutoEdeepOnet, 652_802),
        (ModelKind::AutoDeepOnetCnn, 752_690),
        (ModelKind::ResNet, 20_018),
    ];
    for (kind, count) in expected {
        let spec = ModelSpec::new(kind, 5, [64, 64], 0);
        assert_eq!(build_model::<f32>(&spec).unwrap().count_params(), count, "{kind}");
    }
}

#[test]
fn sample_lattice_is_a_quarter_grid() {
    let l = sample_lattice(64, 64);
    assert_eq!(l.len(), 1024);
    assert_eq!(&l[..3], &[0, 2, 4]);
    assert_eq!(l[32], 128);
    assert_eq!(ModelSpec::new(ModelKind::AutoFfn, 5, [64, 64], 0).sample_len(), 2048);
}

#[test]
fn kinds_parse_and_classify() {
    for kind in ModelKind::ALL {
        assert_eq!(kind.name().parse::<ModelKind>().unwrap(), kind);
        assert_eq!(Architecture::default_for(kind).kind(), kind);
    }
    assert_eq!("Auto-DeepONet".parse::<ModelKind>().unwrap(), ModelKind::AutoDeepOnet);
    assert!(matches!("transformer".parse::<ModelKind>(), Err(OpError::Config(_))));
    let auto: Vec<_> = ModelKind::ALL.iter().filter(|k| !k.autoregressive()).collect();
    assert_eq!(auto, vec![&ModelKind::Ffn, &ModelKind::DeepOnet]);
}

#[test]
fn invalid_hyperparameters_are_configuration_errors() {
    let mut spec = ModelSpec::new(ModelKind::UNet, 5, [66, 64], 0);
    assert!(matches!(build_model::<f32>(&spec), Err(OpError::Config(_))));
    spec.resolution = [64, 64];
    spec.arch = Architecture::UNet { base: 0, depth: 4 };
    assert!(matches!(build_model::<f32>(&spec), Err(OpError::Config(_))));
    let mut fno = ModelSpec::new(ModelKind::Fno, 5, [8, 8], 0);
    assert!(matches!(build_model::<f32>(&fno), Err(OpError::Config(_))));
    fno.arch = Architecture::Fno { hidden: 4, blocks: 1, modes: 8, projection: 4 };
    assert!(build_model::<f32>(&fno).is_ok());
    let mut ffn = ModelSpec::new(ModelKind::Ffn, 5, [8, 8], 0);
    ffn.arch = Architecture::Ffn { hidden: vec![4, 0] };
    assert!(matches!(build_model::<f32>(&ffn), Err(OpError::Config(_))));
}

#[test]
fn every_kind_has_the_declared_output_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kind in ModelKind::ALL {
        let spec = tiny_spec(kind, 3);
        let model = build_model::<f64>(&spec).unwrap();
        let input = random_input(&spec, 2, 5, &mut rng);
        let out = model.predict(&input).unwrap();
        let expected: Vec<usize> = if kind.style() == InputStyle::Field { vec![2, 2, 8, 8] } else { vec![10, 2] };
        assert_eq!(out.shape(), expected.as_slice(), "{kind}");
        assert!(out.is_finite());
        assert_eq!(model.predict(&input).unwrap(), out, "{kind} is deterministic");
    }
}

#[test]
fn initialization_is_seeded() {
    let a = build_model::<f32>(&tiny_spec(ModelKind::UNet, 5)).unwrap();
    let b = build_model::<f32>(&tiny_spec(ModelKind::UNet, 5)).unwrap();
    let c = build_model::<f32>(&tiny_spec(ModelKind::UNet, 6)).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}

#[test]
fn single_query_gives_a_velocity_pair() {
    let spec = ModelSpec::new(ModelKind::Ffn, 5, [64, 64], 0);
    let model = build_model::<f32>(&spec).unwrap();
    let input = ModelInput::Query {
        omega: Tensor::new([1, 5], vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap(),
        coords: Tensor::new([1, 3], vec![0.5, 0.5, 0.1]).unwrap(),
        queries: 1,
        context: None,
    };
    assert_eq!(model.predict(&input).unwrap().shape(), &[1, 2]);
}

#[test]
fn ffn_with_zero_last_layer_returns_its_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = tiny_spec(ModelKind::Ffn, 0);
    let mut model = build_model::<f64>(&spec).unwrap();
    model.set_param("ffn.2.weight", Tensor::zeros([5, 2])).unwrap();
    model.set_param("ffn.2.bias", Tensor::new([2], vec![0.3, -0.7]).unwrap()).unwrap();
    let out = model.predict(&random_input(&spec, 3, 4, &mut rng)).unwrap();
    for row in out.data().chunks(2) {
        assert_eq!(row, &[0.3, -0.7]);
    }
}

fn swap_queries(input: &ModelInput<f64>, a: usize, b: usize) -> ModelInput<f64> {
    let ModelInput::Query { omega, coords, queries, context } = input else { panic!() };
    let cd = coords.shape()[1];
    let mut c = coords.data().to_vec();
    for k in 0..cd {
        c.swap(a * cd + k, b * cd + k);
    }
    ModelInput::Query { omega: omega.clone(), coords: Tensor::new(coords.shape().to_vec(), c).unwrap(), queries: *queries, context: context.clone() }
}

#[test]
fn query_models_treat_queries_independently() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for kind in ModelKind::ALL.into_iter().filter(|k| k.style() != InputStyle::Field) {
        let spec = tiny_spec(kind, 1);
        let model = build_model::<f64>(&spec).unwrap();
        let input = random_input(&spec, 1, 6, &mut rng);
        let out = model.predict(&input).unwrap();
        let swapped = model.predict(&swap_queries(&input, 1, 4)).unwrap();
        for c in 0..2 {
            assert_eq!(out.data()[2 + c], swapped.data()[8 + c], "{kind}");
            assert_eq!(out.data()[8 + c], swapped.data()[2 + c], "{kind}");
            assert_eq!(out.data()[c], swapped.data()[c], "{kind}");
        }
    }
}

/// Evaluates every query with its own forward pass (branch recomputed each time).
fn naive_per_query(model: &Model<f64>, input: &ModelInput<f64>) -> Vec<f64> {
    let ModelInput::Query { omega, coords, queries, context } = input else { panic!() };
    let (n, d, cd) = (omega.shape()[0], omega.shape()[1], coords.shape()[1]);
    let mut out = Vec::new();
    for s in 0..n {
        let ctx = context.as_ref().map(|c| {
            let len = c.numel() / n;
            let mut shape = c.shape().to_vec();
            shape[0] = 1;
            Tensor::new(shape, c.data()[s * len..(s + 1) * len].to_vec()).unwrap()
        });
        for q in 0..*queries {
            let r = s * queries + q;
            let single = ModelInput::Query {
                omega: Tensor::new([1, d], omega.data()[s * d..(s + 1) * d].to_vec()).unwrap(),
                coords: Tensor::new([1, cd], coords.data()[r * cd..(r + 1) * cd].to_vec()).unwrap(),
                queries: 1,
                context: ctx.clone(),
            };
            out.extend_from_slice(model.predict(&single).unwrap().data());
        }
    }
    out
}

#[test]
fn branch_reuse_matches_naive_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for kind in [ModelKind::DeepOnet, ModelKind::AutoDeepOnet, ModelKind::AutoEdeepOnet, ModelKind::AutoDeepOnetCnn] {
        let spec = tiny_spec(kind, 9);
        let model = build_model::<f64>(&spec).unwrap();
        let input = random_input(&spec, 3, 7, &mut rng);
        let batched = model.predict(&input).unwrap();
        let naive = naive_per_query(&model, &input);
        let err = batched.data().iter().zip(&naive).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{kind}: {err}");
    }
}

fn set_last_branch(model: &mut Model<f64>, prefix: &str, fan_in: usize, bias: &[f64]) {
    model.set_param(&format!("{prefix}.weight"), Tensor::zeros([fan_in, bias.len()])).unwrap();
    model.set_param(&format!("{prefix}.bias"), Tensor::new([bias.len()], bias.to_vec()).unwrap()).unwrap();
}

fn one_output(mut spec: ModelSpec) -> ModelSpec {
    spec.outputs = 1;
    spec
}

#[test]
fn deeponet_dot_of_ones_and_bias_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = one_output(tiny_spec(ModelKind::DeepOnet, 0));
    let mut model = build_model::<f64>(&spec).unwrap();
    set_last_branch(&mut model, "branch.1", 5, &[1.0; 4]);
    set_last_branch(&mut model, "trunk.1", 5, &[1.0; 4]);
    let input = random_input(&spec, 2, 3, &mut rng);
    assert!(model.predict(&input).unwrap().data().iter().all(|&v| v == 4.0));
    set_last_branch(&mut model, "branch.1", 5, &[1.0, 0.0, 0.0, 0.0]);
    set_last_branch(&mut model, "trunk.1", 5, &[0.0, 1.0, 0.0, 0.0]);
    model.set_param("bias", Tensor::new([1], vec![0.5]).unwrap()).unwrap();
    assert!(model.predict(&input).unwrap().data().iter().all(|&v| v == 0.5));
}

#[test]
fn branch_width_mismatch_is_rejected() {
    let mut spec = tiny_spec(ModelKind::DeepOnet, 0);
    spec.arch = Architecture::DeepOnet { width: 0, branch_hidden: vec![4], trunk_hidden: vec![4] };
    assert!(matches!(build_model::<f64>(&spec), Err(OpError::Config(_))));
}

#[test]
fn auto_deeponet_with_dead_trunk_returns_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let spec = tiny_spec(ModelKind::AutoDeepOnet, 0);
    let mut model = build_model::<f64>(&spec).unwrap();
    set_last_branch(&mut model, "trunk.1", 4, &[0.0; 3]);
    model.set_param("bias", Tensor::new([2], vec![0.25, -1.5]).unwrap()).unwrap();
    let out = model.predict(&random_input(&spec, 2, 4, &mut rng)).unwrap();
    assert_eq!(out.shape(), &[8, 2]);
    for row in out.data().chunks(2) {
        assert_eq!(row, &[0.25, -1.5]);
    }
}

#[test]
fn edeeponet_hand_value() {
    let mut spec = one_output(tiny_spec(ModelKind::AutoEdeepOnet, 0));
    spec.arch = Architecture::AutoEdeepOnet { width: 2, sample_hidden: vec![4], omega_hidden: vec![4], trunk_hidden: vec![4] };
    let mut model = build_model::<f64>(&spec).unwrap();
    set_last_branch(&mut model, "branch_field.1", 4, &[1.0, 2.0]);
    set_last_branch(&mut model, "branch_params.1", 4, &[3.0, 4.0]);
    set_last_branch(&mut model, "trunk.1", 4, &[1.0, 1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let out = model.predict(&random_input(&spec, 1, 3, &mut rng)).unwrap();
    assert_eq!(out.data(), &[11.0, 11.0, 11.0]);
    set_last_branch(&mut model, "branch_field.1", 4, &[0.0, 0.0]);
    model.set_param("bias", Tensor::new([1], vec![0.75]).unwrap()).unwrap();
    assert_eq!(model.predict(&random_input(&spec, 1, 3, &mut rng)).unwrap().data(), &[0.75; 3]);
}

#[test]
fn edeeponet_with_unit_parameter_branch_equals_auto_deeponet() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let e_spec = tiny_spec(ModelKind::AutoEdeepOnet, 11);
    let mut e = build_model::<f64>(&e_spec).unwrap();
    set_last_branch(&mut e, "branch_params.1", 4, &[1.0; 6]);
    let mut d_spec = tiny_spec(ModelKind::AutoDeepOnet, 12);
    d_spec.arch = Architecture::AutoDeepOnet { width: 3, branch_hidden: vec![4], trunk_hidden: vec![4] };
    let mut d = build_model::<f64>(&d_spec).unwrap();
    let s = e_spec.sample_len();
    let w0 = e.param("branch_field.0.weight").unwrap();
    let mut first = w0.data().to_vec();
    first.extend(std::iter::repeat_n(0.0, 3 * 4));
    d.set_param("branch.0.weight", Tensor::new([s + 3, 4], first).unwrap()).unwrap();
    for (from, to) in [
        ("branch_field.0.bias", "branch.0.bias"),
        ("branch_field.1.weight", "branch.1.weight"),
        ("branch_field.1.bias", "branch.1.bias"),
        ("trunk.0.weight", "trunk.0.weight"),
        ("trunk.0.bias", "trunk.0.bias"),
        ("trunk.1.weight", "trunk.1.weight"),
        ("trunk.1.bias", "trunk.1.bias"),
    ] {
        d.set_param(to, e.param(from).unwrap().clone()).unwrap();
    }
    e.set_param("bias", Tensor::new([2], vec![0.1, 0.2]).unwrap()).unwrap();
    d.set_param("bias", Tensor::new([2], vec![0.1, 0.2]).unwrap()).unwrap();
    let input = random_input(&e_spec, 3, 5, &mut rng);
    let diff = e.predict(&input).unwrap().max_abs_diff(&d.predict(&input).unwrap()).unwrap();
    assert!(diff <= 1e-6, "{diff}");
}

#[test]
fn grid_branch_contracts() {
    let spec = tiny_spec(ModelKind::AutoDeepOnetCnn, 0);
    let mut model = build_model::<f64>(&spec).unwrap();
    let coords = Tensor::new([2, 2], vec![0.25, 0.5, 0.375, 0.5]).unwrap();
    let zero = ModelInput::Query {
        omega: Tensor::zeros([1, 3]),
        coords: coords.clone(),
        queries: 2,
        context: Some(Tensor::zeros([1, 6, 8, 8])),
    };
    model.set_param("bias", Tensor::new([2], vec![0.5, -0.5]).unwrap()).unwrap();
    assert_eq!(model.predict(&zero).unwrap().data(), &[0.5, -0.5, 0.5, -0.5]);
    // A constant field with a query-blind trunk cannot depend on where it is queried.
    set_last_branch(&mut model, "trunk.1", 4, &[0.3, -0.2, 0.1]);
    let constant = ModelInput::Query {
        omega: Tensor::full([1, 3], 0.5),
        coords,
        queries: 2,
        context: Some(Tensor::full([1, 6, 8, 8], 0.7)),
    };
    let out = model.predict(&constant).unwrap();
    assert_eq!(out.data()[..2], out.data()[2..]);
    let wrong = ModelInput::Query {
        omega: Tensor::zeros([1, 3]),
        coords: Tensor::zeros([1, 2]),
        queries: 1,
        context: Some(Tensor::zeros([1, 6, 16, 16])),
    };
    assert!(matches!(model.predict(&wrong), Err(OpError::Input(_))));
}

#[test]
fn style_mismatch_is_a_contract_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let fno = build_model::<f64>(&tiny_spec(ModelKind::Fno, 0)).unwrap();
    let query = random_input(&tiny_spec(ModelKind::Ffn, 0), 1, 2, &mut rng);
    match fno.predict(&query) {
        Err(OpError::Contract(msg)) => assert!(msg.contains("fno") && msg.contains("query")),
        other => panic!("{other:?}"),
    }
    let ffn = build_model::<f64>(&tiny_spec(ModelKind::Ffn, 0)).unwrap();
    let field = random_input(&tiny_spec(ModelKind::UNet, 0), 1, 1, &mut rng);
    assert!(matches!(ffn.predict(&field), Err(OpError::Contract(_))));
    let sampled = random_input(&tiny_spec(ModelKind::AutoFfn, 0), 1, 2, &mut rng);
    assert!(matches!(ffn.predict(&sampled), Err(OpError::Contract(_))));
    let unet = build_model::<f64>(&tiny_spec(ModelKind::UNet, 0)).unwrap();
    assert!(matches!(unet.predict(&ModelInput::Field(Tensor::zeros([1, 5, 8, 8]))), Err(OpError::Input(_))));
}

#[test]
fn image_models_preserve_order_across_a_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for kind in [ModelKind::ResNet, ModelKind::UNet, ModelKind::Fno] {
        let spec = tiny_spec(kind, 2);
        let model = build_model::<f64>(&spec).unwrap();
        let a = rand_tensor(&[1, 6, 8, 8], &mut rng);
        let b = rand_tensor(&[1, 6, 8, 8], &mut rng);
        let cat = |x: &Tensor<f64>, y: &Tensor<f64>| {
            let mut d = x.data().to_vec();
            d.extend_from_slice(y.data());
            ModelInput::Field(Tensor::new([2, 6, 8, 8], d).unwrap())
        };
        let ab = model.predict(&cat(&a, &b)).unwrap();
        let ba = model.predict(&cat(&b, &a)).unwrap();
        let half = ab.numel() / 2;
        assert!(Tensor::new([half], ab.data()[..half].to_vec()).unwrap().max_abs_diff(&Tensor::new([half], ba.data()[half..].to_vec()).unwrap()).unwrap() < 1e-12);
        let singles = model.predict_many(&[ModelInput::Field(a.clone()), ModelInput::Field(b.clone())]).unwrap();
        assert!((singles[1].data()[3] - ab.data()[half + 3]).abs() < 1e-12, "{kind}");
    }
}

fn add_bias_planes(x: &mut Tensor<f64>, b: &Tensor<f64>) {
    let s = x.shape().to_vec();
    let plane = s[2] * s[3];
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v += b.data()[(i / plane) % s[1]];
    }
}

#[test]
fn resnet_with_zero_residuals_is_lift_then_out() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = tiny_spec(ModelKind::ResNet, 4);
    let mut model = build_model::<f64>(&spec).unwrap();
    for i in 0..2 {
        model.set_param(&format!("block{i}.conv2.weight"), Tensor::zeros([3, 3, 3, 3])).unwrap();
    }
    let mut lift_bias = rand_tensor(&[3], &mut rng);
    lift_bias.data_mut()[0] = 0.2;
    model.set_param("lift.bias", lift_bias.clone()).unwrap();
    let x = rand_tensor(&[1, 6, 8, 8], &mut rng);
    let mut h = conv2d(&x, model.param("lift.weight").unwrap(), 1).unwrap();
    add_bias_planes(&mut h, &lift_bias);
    let mut y = conv2d(&h, model.param("out.weight").unwrap(), 1).unwrap();
    add_bias_planes(&mut y, model.param("out.bias").unwrap());
    let got = model.predict(&ModelInput::Field(x)).unwrap();
    assert!(got.max_abs_diff(&y).unwrap() < 1e-12);
}

fn gelu(x: f64) -> f64 {
    x * Normal::new(0.0, 1.0).unwrap().cdf(x)
}

/// 1x1 convolution on a `[C, H*W]` array.
fn pointwise(x: &[Vec<f64>], w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (co, ci) = (w.shape()[0], w.shape()[1]);
    (0..co)
        .map(|o| (0..x[0].len()).map(|k| b.data()[o] + (0..ci).map(|i| w.data()[o * ci + i] * x[i][k]).sum::<f64>()).collect())
        .collect()
}

/// Dense-DFT spectral mix over the half spectrum with all rows retained.
fn dense_spectral(x: &[Vec<f64>], wr: &Tensor<f64>, wi: &Tensor<f64>, h: usize, w: usize) -> Vec<Vec<f64>> {
    let (co, ci, mr, mc) = (wr.shape()[0], wr.shape()[1], wr.shape()[2], wr.shape()[3]);
    assert_eq!((mr, mc), (h, w / 2 + 1));
    let spectra: Vec<Vec<(f64, f64)>> = x
        .iter()
        .map(|plane| {
            let mut s = vec![(0.0, 0.0); mr * mc];
            for k1 in 0..mr {
                for k2 in 0..mc {
                    for y in 0..h {
                        for xx in 0..w {
                            let a = -2.0 * PI * (k1 as f64 * y as f64 / h as f64 + k2 as f64 * xx as f64 / w as f64);
                            s[k1 * mc + k2].0 += plane[y * w + xx] * a.cos();
                            s[k1 * mc + k2].1 += plane[y * w + xx] * a.sin();
                        }
                    }
                }
            }
            s
        })
        .collect();
    (0..co)
        .map(|o| {
            let mut out = vec![0.0; h * w];
            for k1 in 0..mr {
                for k2 in 0..mc {
                    let (mut yr, mut yi) = (0.0, 0.0);
                    for (i, s) in spectra.iter().enumerate() {
                        let idx = ((o * ci + i) * mr + k1) * mc + k2;
                        let (ar, ai) = s[k1 * mc + k2];
                        yr += ar * wr.data()[idx] - ai * wi.data()[idx];
                        yi += ar * wi.data()[idx] + ai * wr.data()[idx];
                    }
                    let mult = if k2 == 0 || (w % 2 == 0 && k2 == w / 2) { 1.0 } else { 2.0 };
                    for y in 0..h {
                        for xx in 0..w {
                            let a = 2.0 * PI * (k1 as f64 * y as f64 / h as f64 + k2 as f64 * xx as f64 / w as f64);
                            out[y * w + xx] += mult * (yr * a.cos() - yi * a.sin()) / (h * w) as f64;
                        }
                    }
                }
            }
            out
        })
        .collect()
}

fn fno_oracle(model: &Model<f64>, x: &Tensor<f64>, blocks: usize) -> Vec<f64> {
    let p = |n: &str| model.param(n).unwrap();
    let (c, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    let planes: Vec<Vec<f64>> = (0..c).map(|i| x.data()[i * h * w..(i + 1) * h * w].to_vec()).collect();
    let mut hdn = pointwise(&planes, p("lift.weight"), p("lift.bias"));
    for b in 0..blocks {
        let k = dense_spectral(&hdn, p(&format!("block{b}.spectral.real")), p(&format!("block{b}.spectral.imag")), h, w);
        let m = pointwise(&hdn, p(&format!("block{b}.mix.weight")), p(&format!("block{b}.mix.bias")));
        for ch in 0..hdn.len() {
            for q in 0..h * w {
                hdn[ch][q] += gelu(k[ch][q] + m[ch][q]);
            }
        }
    }
    let mut y = pointwise(&hdn, p("project.weight"), p("project.bias"));
    y.iter_mut().flatten().for_each(|v| *v = gelu(*v));
    pointwise(&y, p("out.weight"), p("out.bias")).concat()
}

#[test]
fn fno_matches_dense_dft_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut spec = tiny_spec(ModelKind::Fno, 13);
    spec.arch = Architecture::Fno { hidden: 3, blocks: 2, modes: 8, projection: 4 };
    let mut model = build_model::<f64>(&spec).unwrap();
    for b in 0..2 {
        for part in ["real", "imag"] {
            model.set_param(&format!("block{b}.spectral.{part}"), rand_tensor(&[3, 3, 8, 5], &mut rng)).unwrap();
        }
        model.set_param(&format!("block{b}.mix.bias"), rand_tensor(&[3], &mut rng)).unwrap();
    }
    let x = rand_tensor(&[1, 6, 8, 8], &mut rng);
    let got = model.predict(&ModelInput::Field(x.clone())).unwrap();
    let want = fno_oracle(&model, &x, 2);
    let err = got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn fno_blocks_without_kernels_are_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let spec = tiny_spec(ModelKind::Fno, 15);
    let mut model = build_model::<f64>(&spec).unwrap();
    for b in 0..2 {
        for part in ["real", "imag"] {
            model.set_param(&format!("block{b}.spectral.{part}"), Tensor::zeros([3, 3, 3, 3])).unwrap();
        }
        model.set_param(&format!("block{b}.mix.weight"), Tensor::zeros([3, 3, 1, 1])).unwrap();
    }
    let x = rand_tensor(&[1, 6, 8, 8], &mut rng);
    let got = model.predict(&ModelInput::Field(x.clone())).unwrap();
    let want = fno_oracle(&model, &x, 0);
    let err = got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-9, "{err}");
}

/// Weighted-sum loss of the prediction, recorded on a fresh tape.
fn loss_and_grads(model: &Model<f64>, input: &ModelInput<f64>, weights: &Tensor<f64>) -> (f64, Vec<Option<Tensor<f64>>>) {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, true);
    let y = model.forward(&mut tape, &vars, input).unwrap();
    let c = tape.constant(weights.clone());
    let yc = tape.mul(y, c).unwrap();
    let loss = tape.sum(yc);
    let value = tape.value(loss).data()[0];
    let mut g = tape.backward(loss).unwrap();
    (value, vars.iter().map(|&v| g.take(v)).collect())
}

fn weighted(model: &Model<f64>, input: &ModelInput<f64>, weights: &Tensor<f64>) -> f64 {
    model.predict(input).unwrap().data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for kind in ModelKind::ALL {
        let spec = tiny_spec(kind, 21);
        let mut model = build_model::<f64>(&spec).unwrap();
        let input = random_input(&spec, 2, 4, &mut rng);
        let shape = model.predict(&input).unwrap().shape().to_vec();
        let weights = rand_tensor(&shape, &mut rng);
        let (_, grads) = loss_and_grads(&model, &input, &weights);
        let (mut num, mut ana) = (Vec::new(), Vec::new());
        for i in 0..model.params().len() {
            for _ in 0..2 {
                let k = rng.random_range(0..model.params()[i].numel());
                let orig = model.params()[i].data()[k];
                let h = 1e-6;
                model.params_mut()[i].data_mut()[k] = orig + h;
                let up = weighted(&model, &input, &weights);
                model.params_mut()[i].data_mut()[k] = orig - h;
                let down = weighted(&model, &input, &weights);
                model.params_mut()[i].data_mut()[k] = orig;
                num.push((up - down) / (2.0 * h));
                ana.push(grads[i].as_ref().map_or(0.0, |g| g.data()[k]));
            }
        }
        let diff: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        assert!(diff / scale < 1e-3, "{kind}: relative error {}", diff / scale);
    }
}

#[test]
fn unet_gradients_reach_every_parameter() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let spec = ModelSpec::new(ModelKind::UNet, 5, [64, 64], 1);
    let model = build_model::<f64>(&spec).unwrap();
    let input = ModelInput::Field(rand_tensor(&[1, 8, 64, 64], &mut rng));
    let weights = rand_tensor(&[1, 2, 64, 64], &mut rng);
    let (_, grads) = loss_and_grads(&model, &input, &weights);
    for (name, g) in model.names().iter().zip(&grads) {
        let g = g.as_ref().unwrap_or_else(|| panic!("{name} unreachable"));
        assert!(g.data().iter().any(|&v| v != 0.0), "{name} has zero gradient");
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let spec = tiny_spec(ModelKind::AutoDeepOnetCnn, 3);
    let mut model = build_model::<f32>(&spec).unwrap();
    let noisy: Vec<Tensor<f32>> = model.params().iter().map(|p| p.map(|v| v + 0.01)).collect();
    for (i, t) in noisy.into_iter().enumerate() {
        model.params_mut()[i] = t;
    }
    save_checkpoint(&model, dir.path()).unwrap();
    let back = load_checkpoint::<f32>(dir.path()).unwrap();
    assert_eq!(back.spec(), model.spec());
    assert_eq!(back.names(), model.names());
    assert_eq!(back.params(), model.params());
    let bytes = std::fs::metadata(dir.path().join("weights.bin")).unwrap().len() as usize;
    assert_eq!(bytes, model.count_params() * 4);
    let input = random_input(&spec, 1, 3, &mut rng);
    let input32 = match input {
        ModelInput::Query { omega, coords, queries, context } => {
            ModelInput::Query { omega: omega.cast(), coords: coords.cast(), queries, context: context.map(|c| c.cast()) }
        }
        ModelInput::Field(f) => ModelInput::Field(f.cast()),
    };
    assert_eq!(back.predict(&input32).unwrap(), model.predict(&input32).unwrap());
}

#[test]
fn tampered_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = build_model::<f32>(&tiny_spec(ModelKind::Ffn, 0)).unwrap();
    save_checkpoint(&model, dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).unwrap().replace("ffn.1.bias", "ffn.9.bias");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(load_checkpoint::<f32>(dir.path()), Err(OpError::Parse(_))));
    assert!(matches!(load_checkpoint::<f32>(&dir.path().join("missing")), Err(OpError::Io { .. })));
}

#[test]
fn spec_serializes_by_kind_tag() {
    let spec = ModelSpec::new(ModelKind::Fno, 5, [64, 64], 7);
    let json = serde_json::to_value(&spec).unwrap();
    assert_eq!(json["arch"]["kind"], "fno");
    let back: ModelSpec = serde_json::from_value(json).unwrap();
    assert_eq!(back, spec);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn image_models_are_shape_preserving(h in 1usize..4, w in 1usize..4, kind in 0usize..3) {
        let kind = [ModelKind::ResNet, ModelKind::UNet, ModelKind::Fno][kind];
        let mut spec = tiny_spec(kind, 0);
        spec.resolution = [4 * h, 4 * w];
        let model = build_model::<f32>(&spec).unwrap();
        let out = model.predict(&ModelInput::Field(Tensor::full([1, 6, 4 * h, 4 * w], 0.5f32))).unwrap();
        prop_assert_eq!(out.shape(), &[1, 2, 4 * h, 4 * w]);
    }
}
