//! Randomised invariants.

use lemole::checkpoint::Checkpoint;
use lemole::conditioning::Conv1d;
use lemole::data::{self, fit_stats, make_windows, window_count};
use lemole::eval::{mae, mse};
use lemole::experts::LinearExpert;
use lemole::fft::{irfft, rfft};
use lemole::prompts::hash_encoder;
use lemole::{ConditioningMode, ExpertDomain, LemoleModel, Matrix, ModelSpec, SeriesFrame};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-10.0..10.0))
}

fn frame(rows: usize, cols: usize, seed: u64) -> SeriesFrame {
    let ts = (0..rows as i64).map(|i| 1_000_000 + 900 * i).collect();
    let names = (0..cols).map(|c| format!("c{c}")).collect();
    SeriesFrame::new(ts, random_matrix(rows, cols, seed), names, 900).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn standardize_round_trips(rows in 2usize..60, cols in 1usize..4, seed in any::<u64>()) {
        let f = frame(rows, cols, seed);
        let stats = fit_stats(&f).unwrap();
        let z = data::standardize(&f, &stats).unwrap();
        let back = data::destandardize(&z.values, &stats).unwrap();
        let scale = f.values.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(back.max_abs_diff(&f.values) <= 1e-12 * scale);
        prop_assert_eq!(z.timestamps, f.timestamps);
    }

    #[test]
    fn windows_are_contiguous_and_counted(rows in 1usize..80, t in 1usize..12, h in 1usize..8, stride in 1usize..5) {
        let f = frame(rows, 1, rows as u64);
        match make_windows(&f, t, h, stride) {
            Ok(ws) => {
                prop_assert_eq!(Some(ws.len()), window_count(rows, t, h, stride));
                prop_assert_eq!(ws.len(), (rows - t - h) / stride + 1);
                for (k, w) in ws.iter().enumerate() {
                    let all: Vec<i64> = w.lookback_timestamps.iter().chain(&w.target_timestamps).copied().collect();
                    prop_assert_eq!(all.len(), t + h);
                    prop_assert!(all.windows(2).all(|p| p[1] - p[0] == 900));
                    prop_assert_eq!(all[0], f.timestamps[k * stride]);
                    let want = f.values.slice_rows(k * stride + t, k * stride + t + h);
                    prop_assert_eq!(w.target.as_slice(), want.as_slice());
                }
            }
            Err(_) => prop_assert!(rows < t + h),
        }
    }

    #[test]
    fn rfft_round_trips(n in 1usize..200, seed in any::<u64>()) {
        let x = random_matrix(n, 1, seed).into_vec();
        let back = irfft(&rfft(&x), n).unwrap();
        let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn linear_expert_is_affine(w in 1usize..16, h in 1usize..8, c in 1usize..4, seed in any::<u64>(), a in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = LinearExpert::init(w, h, c, &mut rng);
        let (x1, x2) = (random_matrix(w, c, seed ^ 1), random_matrix(w, c, seed ^ 2));
        let f0 = e.forward(&Matrix::zeros(w, c)).unwrap();
        let lhs = e.forward(&x1.zip_map(&x2, |p, q| a * p + q)).unwrap();
        let (y1, y2) = (e.forward(&x1).unwrap(), e.forward(&x2).unwrap());
        // f(a x1 + x2) = a f(x1) + f(x2) - a f(0)
        let rhs = Matrix::from_fn(h, c, |i, j| {
            let k = i * c + j;
            a * y1.as_slice()[k] + y2.as_slice()[k] - a * f0.as_slice()[k]
        });
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-9);
    }

    #[test]
    fn metrics_are_nonnegative_and_permutation_invariant(n in 1usize..50, seed in any::<u64>()) {
        let (p, t) = (random_matrix(n, 1, seed), random_matrix(n, 1, seed.wrapping_add(7)));
        let mut idx: Vec<usize> = (0..n).collect();
        idx.reverse();
        idx.rotate_left(seed as usize % n);
        let perm = |m: &Matrix| Matrix::from_fn(n, 1, |i, _| m.as_slice()[idx[i]]);
        let (m1, a1) = (mse(&p, &t).unwrap(), mae(&p, &t).unwrap());
        prop_assert!(m1 >= 0.0 && a1 >= 0.0);
        prop_assert!((mse(&perm(&p), &perm(&t)).unwrap() - m1).abs() < 1e-9);
        prop_assert!((mae(&perm(&p), &perm(&t)).unwrap() - a1).abs() < 1e-9);
        prop_assert_eq!(mse(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn hash_encoder_rows_have_unit_norm(text in "[a-z ]{1,40}", d in 1usize..64, seed in any::<u64>()) {
        prop_assume!(!text.trim().is_empty());
        let z = hash_encoder(&text, d, seed).unwrap();
        for i in 0..z.rows() {
            let norm: f64 = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
        }
        prop_assert_eq!(z, hash_encoder(&text, d, seed).unwrap());
    }

    #[test]
    fn conv_preserves_length(k in prop::sample::select(vec![1usize, 3, 5, 7, 9]), len in 1usize..30, ins in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = Conv1d::init_averaging(ins, 1, k, 1e-2, &mut rng).unwrap();
        let inputs: Vec<Matrix> = (0..ins).map(|i| random_matrix(len, 2, seed ^ i as u64)).collect();
        let out = conv.forward(&inputs).unwrap();
        prop_assert_eq!(out.len(), 1);
        prop_assert_eq!(out[0].shape(), (len, 2));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_round_trips(seed in any::<u64>(), per_expert in any::<bool>(), freq in any::<bool>(), use_static in any::<bool>()) {
        let spec = ModelSpec {
            lookback: 16,
            horizon: 4,
            channels: 2,
            window_lengths: vec![16, 8],
            domain: if freq { ExpertDomain::Frequency } else { ExpertDomain::Time },
            d_llm: 5,
            static_tokens: 3,
            dynamic_tokens: 2,
            kernel_size: 3,
            mode: if per_expert { ConditioningMode::PerExpert } else { ConditioningMode::Aggregate },
            use_static,
            use_dynamic: true,
            freq_cutoff_bins: None,
            freq_init_noise: 1e-3,
        };
        let m = LemoleModel::init(spec, seed).unwrap();
        let json = Checkpoint::from_model(&m).to_json().unwrap();
        let back = serde_json::from_str::<Checkpoint>(&json).unwrap().into_model().unwrap();
        prop_assert_eq!(back, m);
    }
}
