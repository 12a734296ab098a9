use std::f64::consts::FRAC_PI_2;

use proptest::prelude::*;

use ovwave::asymwave::{headway_at, u0_at, WaveSpec};
use ovwave::diagnostics::{
    classify, linf_error, phase_shift, StabilityReport, StabilityThresholds, Verdict,
};
use ovwave::ovsim::{
    dopri5, dopri5_fixed, integrate, pack_state, rhs, ring_system, total_headway_closed_form,
    IntegratorSettings, RingState,
};
use ovwave::paramspace::{
    fixed_point, greek_constants, quantised_fixed_point, residual_itilde, sensitivity,
    solve_kappa1, wave_polynomial, Branch, ModelConfig, WaveDomain, BRANCH_POINT, INV_SQRT3,
};
use ovwave::quartic::{real_roots_sorted, QuarticCoeffs};
use ovwave::specfun::{ellip_e, ellip_k, jacobi_sn_cn_dn, Modulus};

const V_MAX: f64 = 2.0;
const H_C: f64 = 4.0;

fn in_domain() -> impl Strategy<Value = f64> {
    let d = WaveDomain::get();
    (d.lower + 1e-4..d.upper - 1e-4).prop_filter("off the branch point", |k| {
        (k - BRANCH_POINT).abs() > 1e-4
    })
}

fn fig2_spec() -> WaveSpec {
    let g = greek_constants(V_MAX, H_C);
    let k = solve_kappa1(1.99, 1, 100, Branch::First, &g).unwrap();
    let (fp, cfg) = quantised_fixed_point(k, V_MAX, H_C, 100, 1).unwrap();
    WaveSpec::new(fp, cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quartic_vieta(r0 in -3.0..3.0f64, gaps in prop::array::uniform3(0.05..2.0f64), lead in 0.5..4.0f64) {
        let roots = [r0, r0 + gaps[0], r0 + gaps[0] + gaps[1], r0 + gaps[0] + gaps[1] + gaps[2]];
        let m = QuarticCoeffs::from_roots(roots);
        let q = QuarticCoeffs::new(lead, lead * m.c3, lead * m.c2, lead * m.c1, lead * m.c0).unwrap();
        let got = real_roots_sorted(q).unwrap();
        let [e1, e2, e3, e4] = got.elementary_symmetric();
        prop_assert!((e1 + m.c3).abs() < 1e-9);
        prop_assert!((e2 - m.c2).abs() < 1e-9);
        prop_assert!((e3 + m.c1).abs() < 1e-9);
        prop_assert!((e4 - m.c0).abs() < 1e-9);
        for (x, y) in got.as_array().iter().zip(roots) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn inv_sqrt3_is_always_a_root(k in in_domain()) {
        let r = real_roots_sorted(wave_polynomial(k)).unwrap();
        let [e1, e2, e3, e4] = r.elementary_symmetric();
        let q = wave_polynomial(k);
        prop_assert!((e1 + q.c3).abs() < 1e-9 && e2.abs() < 1e-9);
        prop_assert!((e3 + q.c1).abs() < 1e-9 && (e4 - q.c0).abs() < 1e-9);
        let hits_b = (r.b - INV_SQRT3).abs() < 1e-9;
        let hits_c = (r.c - INV_SQRT3).abs() < 1e-9;
        prop_assert!(hits_b != hits_c);
        prop_assert!(r.b <= INV_SQRT3 + 1e-12 && r.c >= INV_SQRT3 - 1e-12);
    }

    #[test]
    fn branch_label_matches_root(k in in_domain()) {
        let cfg = ModelConfig::new(V_MAX, H_C, 100, 1, 1.9).unwrap();
        let fp = fixed_point(k, &cfg).unwrap();
        match fp.branch {
            Branch::First => prop_assert!((fp.roots.c - INV_SQRT3).abs() < 1e-9 && k < BRANCH_POINT),
            Branch::Second => prop_assert!((fp.roots.b - INV_SQRT3).abs() < 1e-9 && k > BRANCH_POINT),
        }
        prop_assert!(fp.e <= -1.0);
    }

    #[test]
    fn legendre_relation(m in 0.001..0.999f64) {
        let md = Modulus::new(m).unwrap();
        let mc = Modulus::from_complement(m).unwrap();
        let (k, e) = (ellip_k(md).unwrap(), ellip_e(md).unwrap());
        let (kc, ec) = (ellip_k(mc).unwrap(), ellip_e(mc).unwrap());
        prop_assert!((e * kc + ec * k - k * kc - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn jacobi_identities(u in -50.0..50.0f64, m in 0.0..0.9999f64) {
        let md = Modulus::new(m).unwrap();
        let (sn, cn, dn) = jacobi_sn_cn_dn(u, md);
        prop_assert!((sn * sn + cn * cn - 1.0).abs() < 1e-12);
        prop_assert!((dn * dn + m * m * sn * sn - 1.0).abs() < 1e-12);
        let k = ellip_k(md).unwrap();
        let (sp, cp, dp) = jacobi_sn_cn_dn(u + 4.0 * k, md);
        prop_assert!((sp - sn).abs() < 1e-12 && (cp - cn).abs() < 1e-12 && (dp - dn).abs() < 1e-12);
        let (sh, ch, _) = jacobi_sn_cn_dn(u + 2.0 * k, md);
        prop_assert!((sh + sn).abs() < 1e-12 && (ch + cn).abs() < 1e-12);
    }

    #[test]
    fn ring_rhs_telescopes(h in prop::collection::vec(2.0..6.0f64, 3..40), seed in 0.0..1.0f64) {
        let n = h.len();
        let rate: Vec<f64> = (0..n).map(|j| ((j as f64 + seed) * 12.9898).sin()).collect();
        let cfg = ModelConfig::new(V_MAX, H_C, n, 1, 1.3).unwrap();
        let state = RingState { t: 0.0, headway: h, rate: rate.clone() };
        let (dh, dr) = rhs(&state, &cfg);
        prop_assert_eq!(dh, rate.clone());
        let lhs: f64 = dr.iter().sum();
        let want = -1.3 * rate.iter().sum::<f64>();
        prop_assert!((lhs - want).abs() < 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn phase_shift_is_equivariant(k in 0usize..100, frac in 0.0..1.0f64) {
        let spec = fig2_spec();
        let sample: Vec<f64> = (0..100).map(|j| headway_at(&spec, j as f64 + frac, 3.0)).collect();
        let rolled: Vec<f64> = (0..100).map(|j| sample[(j + k) % 100]).collect();
        let s0 = phase_shift(&sample, &spec, 3.0).unwrap();
        let s1 = phase_shift(&rolled, &spec, 3.0).unwrap();
        let diff = (s1 - s0 - k as f64).rem_euclid(100.0);
        prop_assert!(diff.min(100.0 - diff) < 1e-6, "{} {} {}", s0, s1, k);
    }

    #[test]
    fn linf_triangle(x in prop::collection::vec(-5.0..5.0f64, 8), y in prop::collection::vec(-5.0..5.0f64, 8), z in prop::collection::vec(-5.0..5.0f64, 8)) {
        let xz = linf_error(&x, &z).unwrap();
        let xy = linf_error(&x, &y).unwrap();
        let yz = linf_error(&y, &z).unwrap();
        prop_assert!(xz <= xy + yz + 1e-15);
    }

    #[test]
    fn verdict_monotone_in_thresholds(
        growth in 0.5..20.0f64, amp in 0.0..0.05f64, rate in 0.0..3e-4f64, drift in 0.0..2.0f64,
        loosen in 1.0..4.0f64, align in any::<bool>(),
    ) {
        let report = StabilityReport {
            linf_t0_window: 1e-3,
            linf_final: growth * 1e-3,
            linf_final_aligned: 0.5 * growth * 1e-3,
            phase_shift_final: drift,
            phase_drift: drift,
            phase_drift_rate: rate,
            amplitude_early: 0.1,
            amplitude_late: 0.1 * (1.0 + amp),
            amplitude_drift: amp,
            wave_amplitude: 0.1,
            verdict: Verdict::Stable,
            thresholds: StabilityThresholds::default(),
            samples: Vec::new(),
        };
        let base = StabilityThresholds { align_final: align, ..Default::default() };
        let loose = StabilityThresholds {
            max_amplitude_drift: base.max_amplitude_drift * loosen,
            max_phase_rate: base.max_phase_rate * loosen,
            max_phase_drift: base.max_phase_drift * loosen,
            max_linf_growth: base.max_linf_growth * loosen,
            align_final: align,
            linf_amplitude_floor: base.linf_amplitude_floor + 0.01 * (loosen - 1.0),
        };
        if classify(&report, &base) == Verdict::Stable {
            prop_assert_eq!(classify(&report, &loose), Verdict::Stable);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn solve_round_trip(k in in_domain(), n in 1u32..4) {
        let g = greek_constants(V_MAX, H_C);
        let cfg = ModelConfig::new(V_MAX, H_C, 100, n, 1.5).unwrap();
        let fp = fixed_point(k, &cfg).unwrap();
        let a = sensitivity(&fp, g.a_hat_c, n, 100);
        prop_assume!(a > 0.05);
        let back = solve_kappa1(a, n, 100, fp.branch, &g).unwrap();
        prop_assert!((back - k).abs() < 1e-8, "{} -> {} -> {}", k, a, back);
    }

    #[test]
    fn fixed_points_have_zero_residual_and_close(k in in_domain(), n in 1u32..5) {
        let g = greek_constants(V_MAX, H_C);
        let (fp, cfg) = quantised_fixed_point(k, V_MAX, H_C, 100, n).unwrap();
        prop_assert!(residual_itilde(&fp, &g).abs() <= 1e-7);
        let lhs = fp.beta_k * fp.epsilon * cfg.cars as f64;
        let rhs = 2.0 * n as f64 * fp.quarter_period();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs);
    }

    #[test]
    fn wave_period_range_and_translation(j in 0.0..100.0f64, t in 0.0..500.0f64, delta in -30.0..30.0f64) {
        let spec = fig2_spec();
        let r = spec.fp.roots;
        let u = u0_at(&spec, j, t);
        prop_assert!(u >= r.b - 1e-12 && u <= r.c + 1e-12);
        prop_assert!((u0_at(&spec, j + 100.0, t) - u).abs() < 1e-9);
        prop_assert!((u0_at(&spec, j + spec.wavelength(), t) - u).abs() < 1e-9);
        let c = -spec.pattern_velocity();
        prop_assert!((u0_at(&spec, j + delta, t - delta / c) - u).abs() < 1e-9);
    }
}

#[test]
fn conservation_along_trajectory() {
    let spec = fig2_spec();
    let mut state = ovwave::asymwave::sample_initial_state(&spec);
    // Give the ring a net rate so the closed form is not trivially constant.
    for r in state.rate.iter_mut() {
        *r += 0.01;
    }
    let cfg = spec.cfg;
    let mut worst: f64 = 0.0;
    integrate(&state, 50.0, &IntegratorSettings::default(), &cfg, |s| {
        let total: f64 = s.headway.iter().sum();
        worst = worst.max((total - total_headway_closed_form(&state, cfg.a_hat, s.t)).abs());
    })
    .unwrap();
    assert!(worst <= 1e-6 * cfg.cars as f64, "{worst}");
}

#[test]
fn deterministic_runs() {
    let spec = fig2_spec();
    let state = ovwave::asymwave::sample_initial_state(&spec);
    let run = || {
        let mut out = Vec::new();
        integrate(&state, 30.0, &IntegratorSettings::default(), &spec.cfg, |s| {
            out.extend(s.headway.iter().map(|x| x.to_bits()))
        })
        .unwrap();
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn stable_side_perturbation_decays() {
    // â above the neutral line at h_c: uniform flow is linearly stable.
    let cfg = ModelConfig { a_hat: 2.2, ..ModelConfig::new(V_MAX, H_C, 40, 1, 1.9).unwrap() };
    let mut state = RingState::uniform(H_C, 40);
    for (j, h) in state.headway.iter_mut().enumerate() {
        *h += 0.05 * ((j as f64 * 0.7).sin() + (j as f64 * 2.3).cos());
    }
    let mean: f64 = state.headway.iter().sum::<f64>() / 40.0;
    let mut deviations = Vec::new();
    let settings = IntegratorSettings { dense_sample_dt: 20.0, ..Default::default() };
    integrate(&state, 400.0, &settings, &cfg, |s| {
        deviations.push(s.headway.iter().map(|h| (h - mean).abs()).fold(0.0, f64::max))
    })
    .unwrap();
    for w in deviations[1..].windows(2) {
        assert!(w[1] < w[0], "{deviations:?}");
    }
    assert!(deviations.last().unwrap() < &(0.5 * deviations[0]));
}

#[test]
fn ring_self_convergence_order() {
    let spec = fig2_spec();
    let state = ovwave::asymwave::sample_initial_state(&spec);
    let sys = ring_system(&spec.cfg);
    let y0 = pack_state(&state);
    let t_end = 20.0;
    let solve = |steps| dopri5_fixed(&sys, 0.0, &y0, t_end, steps);
    let (coarse, mid, fine) = (solve(25), solve(50), solve(100));
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let order = (diff(&coarse, &mid) / diff(&mid, &fine)).log2();
    assert!(order >= 4.0, "observed order {order}");
}

#[test]
fn tighter_tolerance_reduces_error() {
    let spec = fig2_spec();
    let state = ovwave::asymwave::sample_initial_state(&spec);
    let sys = ring_system(&spec.cfg);
    let y0 = pack_state(&state);
    let run = |tol: f64| {
        let s = IntegratorSettings { rel_tol: tol, abs_tol: tol, ..Default::default() };
        dopri5(&sys, 0.0, &y0, 40.0, &s, |_, _| {}).unwrap().0
    };
    let reference = run(1e-13);
    let err = |y: Vec<f64>| y.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let errors: Vec<f64> = [1e-6, 1e-7, 1e-8, 1e-9].iter().map(|&t| err(run(t))).collect();
    for w in errors.windows(2) {
        assert!(w[1] < w[0], "{errors:?}");
    }
}
