//! Forward-pass fixtures for the assembled model.

use lemole::conditioning::{Conv1d, FilmGenerator, FilmPair};
use lemole::experts::LinearExpert;
use lemole::params::Parameterized;
use lemole::{ConditioningMode, ExpertBank, ExpertDomain, LemoleModel, Matrix, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn col(v: &[f64]) -> Matrix {
    Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
}

fn generator(channel_map: f64, time_map: [f64; 2], time_bias: [f64; 2]) -> FilmGenerator {
    FilmGenerator {
        channel_map: Matrix::from_rows(&[[channel_map]]),
        channel_bias: vec![0.0],
        time_map: Matrix::from_rows(&[time_map]),
        time_bias: time_bias.to_vec(),
    }
}

fn toy_spec() -> ModelSpec {
    ModelSpec {
        lookback: 2,
        horizon: 2,
        channels: 1,
        window_lengths: vec![2, 1],
        domain: ExpertDomain::Time,
        d_llm: 1,
        static_tokens: 1,
        dynamic_tokens: 1,
        kernel_size: 1,
        mode: ConditioningMode::Aggregate,
        use_static: true,
        use_dynamic: true,
        freq_cutoff_bins: None,
        freq_init_noise: 0.0,
    }
}

fn conv(weights: &[f64], bias: f64) -> Conv1d {
    let mut c = Conv1d::zeros(weights.len(), 1, 1).unwrap();
    c.weight = weights.to_vec();
    c.bias = vec![bias];
    c
}

/// Two experts (w = 2, 1), H = 2, C = 1, every intermediate worked by hand:
///
/// x = [1, 2]
/// Y1 = [[0.5, 1], [1, -1]] [1, 2] + [0.1, 0]          = [2.6, -1]
/// Y2 = [[2], [-1]] [2] + [0, 0.5]                     = [4, -1.5]
/// Y  = 0.5 Y1 + 0.5 Y2                                = [3.3, -1.25]
/// Z_S = [[2]]: gamma_S = [0.5, 1] * 2                 = [1, 2]
///              beta_S  = [0, 0.25] * 2 + [0.1, 0]     = [0.1, 0.5]
/// Y'_S = gamma_S Y + beta_S                           = [3.4, -2]
/// Z_D = [[-1]]: gamma_D = [1, 1], beta_D = [-1, -1]
/// Y'_D                                                = [2.3, -2.25]
/// Yhat = Y + 0.5 Y'_S - Y'_D + 0.2                    = [2.9, 0.2]
fn toy_model() -> LemoleModel {
    let e1 = LinearExpert { weight: Matrix::from_rows(&[[0.5, 1.0], [1.0, -1.0]]), bias: col(&[0.1, 0.0]), window_length: 2 };
    let e2 = LinearExpert { weight: Matrix::from_rows(&[[2.0], [-1.0]]), bias: col(&[0.0, 0.5]), window_length: 1 };
    LemoleModel::from_parts(
        toy_spec(),
        ExpertBank::new_time(vec![e1, e2]).unwrap(),
        Some(conv(&[0.5, 0.5], 0.0)),
        Some(FilmPair { gamma: generator(1.0, [0.5, 1.0], [0.0, 0.0]), beta: generator(1.0, [0.0, 0.25], [0.1, 0.0]) }),
        Some(FilmPair { gamma: generator(1.0, [0.0, 0.0], [1.0, 1.0]), beta: generator(1.0, [1.0, 1.0], [0.0, 0.0]) }),
        conv(&[1.0, 0.5, -1.0], 0.2),
    )
    .unwrap()
}

fn assert_close(got: &Matrix, want: &[f64]) {
    assert_eq!(got.as_slice().len(), want.len(), "{got:?}");
    for (a, b) in got.as_slice().iter().zip(want) {
        assert!((a - b).abs() < 1e-12, "{got:?} vs {want:?}");
    }
}

#[test]
fn two_expert_hand_trace() {
    let m = toy_model();
    let x = col(&[1.0, 2.0]);
    let (zs, zd) = (Matrix::from_rows(&[[2.0]]), Matrix::from_rows(&[[-1.0]]));
    let (y, trace) = m.forward(&x, &zs, &zd).unwrap();
    assert_close(&trace.expert_outputs[0], &[2.6, -1.0]);
    assert_close(&trace.expert_outputs[1], &[4.0, -1.5]);
    assert_close(trace.aggregated.as_ref().unwrap(), &[3.3, -1.25]);
    assert_close(trace.static_gamma().unwrap(), &[1.0, 2.0]);
    assert_close(trace.dynamic_gamma().unwrap(), &[1.0, 1.0]);
    assert_close(&trace.fusion_inputs[1], &[3.4, -2.0]);
    assert_close(&trace.fusion_inputs[2], &[2.3, -2.25]);
    assert_close(&y, &[2.9, 0.2]);

    // Backward with upstream [1, 1]: fusion-weight gradients are the summed
    // branch outputs, the bias gradient is H, and d/d gamma_S = 0.5 Y.
    let g = m.backward(&trace, &col(&[1.0, 1.0])).unwrap();
    let fw = &g.final_conv.weight;
    for (a, b) in fw.iter().zip([2.05, 1.4, 0.05]) {
        assert!((a - b).abs() < 1e-12, "{fw:?}");
    }
    assert!((g.final_conv.bias[0] - 2.0).abs() < 1e-12);
    let tb = &g.static_film.as_ref().unwrap().gamma.time_bias;
    assert!((tb[0] - 1.65).abs() < 1e-12 && (tb[1] + 0.625).abs() < 1e-12, "{tb:?}");
}

#[test]
fn zero_model_predicts_zero() {
    let mut m = toy_model();
    let zeros = m.zeros_like();
    m.set_flat(&zeros.flat());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Matrix::from_fn(2, 1, |_, _| rng.gen_range(-5.0..5.0));
    let y = m.predict(&x, &Matrix::from_rows(&[[3.0]]), &Matrix::from_rows(&[[-7.0]])).unwrap();
    assert!(y.as_slice().iter().all(|v| *v == 0.0));
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let m = toy_model();
    let (zs, zd) = (Matrix::from_rows(&[[2.0]]), Matrix::from_rows(&[[-1.0]]));
    let (_, trace) = m.forward(&col(&[1.0, 2.0]), &zs, &zd).unwrap();
    let g = m.backward(&trace, &Matrix::zeros(2, 1)).unwrap();
    assert!(g.flat().iter().all(|v| *v == 0.0));
}

fn random_spec(mode: ConditioningMode) -> ModelSpec {
    ModelSpec {
        lookback: 12,
        horizon: 4,
        channels: 2,
        window_lengths: vec![12, 6, 3],
        domain: ExpertDomain::Time,
        d_llm: 6,
        static_tokens: 3,
        dynamic_tokens: 5,
        kernel_size: 3,
        mode,
        use_static: true,
        use_dynamic: true,
        freq_cutoff_bins: None,
        freq_init_noise: 1e-3,
    }
}

#[test]
fn zeroed_dynamic_generators_remove_prompt_dependence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for mode in [ConditioningMode::Aggregate, ConditioningMode::PerExpert] {
        let spec = random_spec(mode);
        let mut m = LemoleModel::init(spec.clone(), 5).unwrap();
        let (l, d, h, c) = (spec.dynamic_tokens, spec.d_llm, spec.horizon, spec.channels);
        // gamma_D = 0 and beta_D = 0 whatever Z_D is.
        m.dynamic_film = Some(FilmPair { gamma: FilmGenerator::zeros(l, d, h, c), beta: FilmGenerator::zeros(l, d, h, c) });
        let x = Matrix::from_fn(12, 2, |_, _| rng.gen_range(-1.0..1.0));
        let zs = Matrix::from_fn(3, 6, |_, _| rng.gen_range(-1.0..1.0));
        let base = m.predict(&x, &zs, &Matrix::zeros(l, d)).unwrap();
        for _ in 0..5 {
            let zd = Matrix::from_fn(l, d, |_, _| rng.gen_range(-10.0..10.0));
            assert_eq!(m.predict(&x, &zs, &zd).unwrap(), base);
        }
    }
}

#[test]
fn dropping_branches_shrinks_fusion_and_params() {
    let full = random_spec(ConditioningMode::Aggregate);
    let mut none = full.clone();
    none.use_static = false;
    none.use_dynamic = false;
    let mf = LemoleModel::init(full.clone(), 1).unwrap();
    let mn = LemoleModel::init(none.clone(), 1).unwrap();
    assert_eq!(mf.final_conv.in_channels, 3);
    assert_eq!(mn.final_conv.in_channels, 1);
    assert!(mn.count_params() < mf.count_params());
    assert_eq!(mn.count_params(), none.param_count());
    // Embeddings are ignored entirely when both branches are gone.
    let x = Matrix::from_fn(12, 2, |i, j| (i + j) as f64 / 10.0);
    let a = mn.predict(&x, &Matrix::zeros(1, 1), &Matrix::zeros(1, 1)).unwrap();
    let b = mn.predict(&x, &Matrix::filled(7, 3, 9.0), &Matrix::filled(2, 2, -4.0)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn drop_both_on_identity_chain_is_the_plain_mixture() {
    let mut spec = random_spec(ConditioningMode::Aggregate);
    spec.use_static = false;
    spec.use_dynamic = false;
    spec.kernel_size = 1;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let experts: Vec<LinearExpert> = spec.window_lengths.iter().map(|&w| LinearExpert::init(w, 4, 2, &mut rng)).collect();
    let m = LemoleModel::from_parts(
        spec,
        ExpertBank::new_time(experts.clone()).unwrap(),
        Some(Conv1d::averaging(3, 1, 1).unwrap()),
        None,
        None,
        Conv1d::averaging(1, 1, 1).unwrap(),
    )
    .unwrap();
    let x = Matrix::from_fn(12, 2, |_, _| rng.gen_range(-1.0..1.0));
    let y = m.predict(&x, &Matrix::zeros(1, 1), &Matrix::zeros(1, 1)).unwrap();
    let mut mean = Matrix::zeros(4, 2);
    for e in &experts {
        let out = e.forward(&x.tail_rows(e.window_length)).unwrap();
        mean.add_assign(&out.map(|v| v / 3.0));
    }
    assert!(y.max_abs_diff(&mean) < 1e-12);
}

#[test]
fn forward_is_deterministic_and_count_is_enumerable() {
    for mode in [ConditioningMode::Aggregate, ConditioningMode::PerExpert] {
        for domain in [ExpertDomain::Time, ExpertDomain::Frequency] {
            let mut spec = random_spec(mode);
            spec.domain = domain;
            let m = LemoleModel::init(spec.clone(), 9).unwrap();
            let n: usize = m.tensors().iter().map(|t| t.shape.iter().product::<usize>()).sum();
            assert_eq!(n, spec.param_count());
            assert_eq!(n, m.count_params());
            let x = Matrix::from_fn(12, 2, |i, j| ((i * 7 + j) % 5) as f64);
            let zs = Matrix::filled(3, 6, 0.3);
            let zd = Matrix::filled(5, 6, -0.2);
            assert_eq!(m.predict(&x, &zs, &zd).unwrap(), m.predict(&x, &zs, &zd).unwrap());
        }
    }
}

#[test]
fn empty_bank_is_rejected() {
    let mut spec = random_spec(ConditioningMode::Aggregate);
    spec.window_lengths.clear();
    assert!(LemoleModel::init(spec, 0).is_err());
}
