use std::sync::Arc;

use proptest::prelude::*;
use spde_core::drift::{DriftSpec, GradientDrift, LogCoshPotential, ShiftedDrift, ZeroDrift};
use spde_core::engine::{
    decomposition_gap, solve_exp_euler, solve_exp_euler_with_noise, solve_shifted, NoiseRecord, StepKernel,
};
use spde_core::rng::StreamId;
use spde_core::stats::pairwise_sum;
use spde_core::{HVector, SpectrumQ};

fn spectrum(n: usize, alpha: f64) -> SpectrumQ<f64> {
    SpectrumQ::power_family(1.0, 2.0, n, alpha).unwrap()
}

fn coeffs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

fn alpha() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(0.25), Just(0.5), 0.0f64..0.5]
}

proptest! {
    #[test]
    fn semigroup_is_a_contraction(x in coeffs(12), t in 0.0f64..5.0, a in alpha()) {
        let s = spectrum(12, a);
        let x = HVector::new(x);
        let y = s.apply_semigroup(t, &x).unwrap();
        prop_assert!(y.norm() <= x.norm() * (1.0 + 1e-14));
        prop_assert!(s.h_alpha_norm(&y).unwrap() <= s.h_alpha_norm(&x).unwrap() * (1.0 + 1e-14));
    }

    #[test]
    fn semigroup_law(x in coeffs(10), t in 0.0f64..3.0, u in 0.0f64..3.0, a in alpha()) {
        let s = spectrum(10, a);
        let x = HVector::new(x);
        let two_stage = s.apply_semigroup(t, &s.apply_semigroup(u, &x).unwrap()).unwrap();
        let one_stage = s.apply_semigroup(t + u, &x).unwrap();
        prop_assert!(two_stage.checked_sub(&one_stage).unwrap().norm() <= 1e-12 * (1.0 + x.norm()));
    }

    #[test]
    fn h_alpha_embeds_into_x(h in coeffs(16), a in alpha()) {
        let s = spectrum(16, a);
        let h = HVector::new(h);
        // ‖h‖_X ≤ ‖Q^α‖ ‖h‖_α with ‖Q^α‖ = λ_1^α = 1.
        prop_assert!(h.norm() <= s.q_pow_norm(a) * s.h_alpha_norm(&h).unwrap() * (1.0 + 1e-12));
        prop_assert!((s.weighted_norm(a, &h).unwrap() - s.h_alpha_norm(&h).unwrap()).abs() <= 1e-10 * (1.0 + h.norm()));
    }

    #[test]
    fn covariance_trace_increases_to_trace_of_q(t in 0.0f64..10.0, dt in 0.0f64..1.0, a in alpha()) {
        let s = spectrum(20, a);
        let early = s.q_t_covariance(t).unwrap().trace();
        let late = s.q_t_covariance(t + dt).unwrap().trace();
        prop_assert!(early <= late + 1e-15);
        prop_assert!(late <= s.trace() + 1e-15);
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers(xs in prop::collection::vec(-1000i32..1000, 0..300)) {
        let f: Vec<f64> = xs.iter().map(|&v| f64::from(v)).collect();
        prop_assert_eq!(pairwise_sum(&f), xs.iter().map(|&v| i64::from(v)).sum::<i64>() as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn variational_process_is_linear_in_the_direction(
        h1 in coeffs(6), h2 in coeffs(6), a in -2.0f64..2.0, b in -2.0f64..2.0, seed in any::<u64>()
    ) {
        let s = Arc::new(spectrum(6, 0.5));
        let drift = GradientDrift::new(s.clone(), Arc::new(LogCoshPotential::new(vec![1.0; 6]).unwrap())).unwrap();
        let (h1, h2) = (HVector::new(h1), HVector::new(h2));
        let mut combo = h1.scaled(a);
        combo.axpy(b, &h2).unwrap();
        let path = solve_exp_euler(&*s, &drift, &HVector::zeros(6), 1.0, 20, StreamId::new(seed, "prop", 0), &[h1, h2, combo]).unwrap();
        let scale = 1.0 + path.variational[0].iter().chain(&path.variational[1]).map(|y| y.norm()).fold(0.0, f64::max);
        for m in 0..path.times.len() {
            let mut lin = path.variational[0][m].scaled(a);
            lin.axpy(b, &path.variational[1][m]).unwrap();
            prop_assert!(lin.checked_sub(&path.variational[2][m]).unwrap().norm() <= 1e-11 * scale);
        }
    }

    #[test]
    fn same_stream_same_path(seed in any::<u64>(), index in 0u64..1000) {
        let s = spectrum(8, 0.25);
        let drift = ZeroDrift::new(8);
        let x0 = HVector::basis(8, 0);
        let stream = StreamId::new(seed, "prop", index);
        let p = solve_exp_euler(&s, &drift, &x0, 1.0, 10, stream, &[]).unwrap();
        let q = solve_exp_euler(&s, &drift, &x0, 1.0, 10, stream, &[]).unwrap();
        prop_assert_eq!(p.states, q.states);
    }

    #[test]
    fn shifted_decomposition_holds_for_any_start(x0 in coeffs(8), seed in any::<u64>()) {
        let s = Arc::new(spectrum(8, 0.5));
        let drift: DriftSpec<f64> = Arc::new(GradientDrift::new(s.clone(), Arc::new(LogCoshPotential::new(vec![0.5; 8]).unwrap())).unwrap());
        let x0 = HVector::new(x0);
        let kernel = StepKernel::new(&*s, 0.05, None).unwrap();
        let noise = Arc::new(NoiseRecord::sample(&kernel, 20, StreamId::new(seed, "prop", 1)).unwrap());
        let x = solve_exp_euler_with_noise(&*s, &*drift, &x0, noise.clone(), &[]).unwrap();
        let shifted = ShiftedDrift::new(drift, x0.clone(), s.clone()).unwrap();
        let z = solve_shifted(&*s, &shifted, &HVector::zeros(8), noise, &[]).unwrap();
        prop_assert!(decomposition_gap(&*s, &x, &z, &x0).unwrap() < 1e-10);
    }
}

#[test]
fn single_and_double_precision_paths_agree() {
    let s64 = spectrum(6, 0.5);
    let s32 = SpectrumQ::<f32>::power_family(1.0, 2.0, 6, 0.5).unwrap();
    let stream = StreamId::new(3, "precision", 0);
    let p64 = solve_exp_euler(&s64, &ZeroDrift::new(6), &HVector::basis(6, 0), 1.0, 16, stream, &[]).unwrap();
    let p32 = solve_exp_euler(&s32, &ZeroDrift::new(6), &HVector::basis(6, 0), 1.0f32, 16, stream, &[]).unwrap();
    let last64 = p64.states.last().unwrap().to_f64();
    let last32 = p32.states.last().unwrap().to_f64();
    for (a, b) in last64.iter().zip(&last32) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
}
