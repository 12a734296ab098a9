//! Direct simulation of the optimal-velocity model on a ring.
//!
//! The state is the headway and headway rate of every car, so the ring is
//! closed in `2N` first-order equations:
//!
//! ```text
//! Δx_j' = r_j
//! r_j'  = â (V(Δx_{j+1}) − V(Δx_j) − r_j),   Δx_N ≡ Δx_0
//! ```
//!
//! Time stepping uses the Dormand–Prince 5(4) pair (local extrapolation,
//! FSAL) with Hairer's PI step-size controller and the matching
//! fourth-order continuous extension for evenly spaced snapshots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paramspace::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingState {
    pub t: f64,
    pub headway: Vec<f64>,
    pub rate: Vec<f64>,
}

impl RingState {
    pub fn uniform(headway: f64, cars: usize) -> Self {
        Self {
            t: 0.0,
            headway: vec![headway; cars],
            rate: vec![0.0; cars],
        }
    }

    pub fn cars(&self) -> usize {
        self.headway.len()
    }

    fn validate(&self) -> Result<()> {
        if self.headway.len() != self.rate.len() {
            return Err(Error::LengthMismatch {
                left: self.headway.len(),
                right: self.rate.len(),
            });
        }
        if !self.is_finite() {
            return Err(Error::NonFiniteState { t: self.t });
        }
        Ok(())
    }

    fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.headway.iter().all(|x| x.is_finite())
            && self.rate.iter().all(|x| x.is_finite())
    }

    fn pack(&self) -> Vec<f64> {
        let mut y = self.headway.clone();
        y.extend_from_slice(&self.rate);
        y
    }

    fn unpack(t: f64, y: &[f64]) -> Self {
        let (headway, rate) = y.split_at(y.len() / 2);
        Self {
            t,
            headway: headway.to_vec(),
            rate: rate.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Spacing of the snapshots handed to the sink.
    pub dense_sample_dt: f64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-10,
            max_step: 10.0,
            dense_sample_dt: 1.0,
        }
    }
}

impl IntegratorSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !(positive(self.rel_tol) && positive(self.abs_tol)) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if !(positive(self.max_step) && positive(self.dense_sample_dt)) {
            return Err(Error::InvalidConfig(
                "max_step and dense_sample_dt must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `V(Δx) = (v_max/2)(tanh(Δx − h_c) + tanh h_c)`. Not clamped at zero.
pub fn ov_velocity(dx: f64, v_max: f64, h_c: f64) -> f64 {
    0.5 * v_max * ((dx - h_c).tanh() + h_c.tanh())
}

/// Right-hand side of the ring equations: `(dΔx/dt, dr/dt)`.
pub fn rhs(state: &RingState, cfg: &ModelConfig) -> (Vec<f64>, Vec<f64>) {
    let sys = Ring::new(cfg, state.cars());
    let y = state.pack();
    let mut dy = vec![0.0; y.len()];
    sys.derivative(state.t, &y, &mut dy);
    let rate = dy.split_off(state.cars());
    (dy, rate)
}

/// A first-order system `y' = f(t, y)`.
pub trait OdeSystem {
    fn derivative(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

struct Ring {
    a_hat: f64,
    v_max: f64,
    h_c: f64,
    cars: usize,
    // V(Δx_j) is shared by cars j and j−1; computing it once halves the tanh calls.
    scratch: std::cell::RefCell<Vec<f64>>,
}

impl Ring {
    fn new(cfg: &ModelConfig, cars: usize) -> Self {
        Self {
            a_hat: cfg.a_hat,
            v_max: cfg.v_max,
            h_c: cfg.h_c,
            cars,
            scratch: std::cell::RefCell::new(vec![0.0; cars]),
        }
    }
}

impl OdeSystem for Ring {
    fn derivative(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.cars;
        let (headway, rate) = y.split_at(n);
        let (d_headway, d_rate) = dy.split_at_mut(n);
        d_headway.copy_from_slice(rate);
        let mut v = self.scratch.borrow_mut();
        for (vj, &h) in v.iter_mut().zip(headway) {
            *vj = ov_velocity(h, self.v_max, self.h_c);
        }
        for j in 0..n {
            let ahead = if j + 1 == n { 0 } else { j + 1 };
            d_rate[j] = self.a_hat * (v[ahead] - v[j] - rate[j]);
        }
    }
}

const C2: f64 = 0.2;
const C3: f64 = 0.3;
const C4: f64 = 0.8;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 0.2;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;
const PI_EXPO: f64 = 0.2 - PI_BETA * 0.75;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

struct Stages {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

impl Stages {
    fn new(dim: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
            y_new: vec![0.0; dim],
        }
    }

    /// One Dormand–Prince step from `(t, y)` with `k[0] = f(t, y)` already set.
    /// Leaves the fifth-order solution in `y_new`, `f(t+h, y_new)` in `k[6]`
    /// and the embedded error estimate in `tmp`.
    fn step<S: OdeSystem>(&mut self, sys: &S, t: f64, y: &[f64], h: f64) {
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let tmp = &mut self.tmp;
        let n = y.len();
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        sys.derivative(t + C2 * h, tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        sys.derivative(t + C3 * h, tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        sys.derivative(t + C4 * h, tmp, k4);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        sys.derivative(t + C5 * h, tmp, k5);
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        sys.derivative(t + h, tmp, k6);
        let y_new = &mut self.y_new;
        for i in 0..n {
            y_new[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        sys.derivative(t + h, y_new, k7);
        for i in 0..n {
            tmp[i] = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
    }
}

/// Continuous extension over the last accepted step.
struct Dense {
    t: f64,
    h: f64,
    rcont: [Vec<f64>; 5],
}

impl Dense {
    fn new(dim: usize) -> Self {
        Self {
            t: 0.0,
            h: 0.0,
            rcont: std::array::from_fn(|_| vec![0.0; dim]),
        }
    }

    fn prepare(&mut self, t: f64, h: f64, y: &[f64], st: &Stages) {
        self.t = t;
        self.h = h;
        let [r1, r2, r3, r4, r5] = &mut self.rcont;
        let k = &st.k;
        for i in 0..y.len() {
            let ydiff = st.y_new[i] - y[i];
            let bspl = h * k[0][i] - ydiff;
            r1[i] = y[i];
            r2[i] = ydiff;
            r3[i] = bspl;
            r4[i] = ydiff - h * k[6][i] - bspl;
            r5[i] = h
                * (D1 * k[0][i]
                    + D3 * k[2][i]
                    + D4 * k[3][i]
                    + D5 * k[4][i]
                    + D6 * k[5][i]
                    + D7 * k[6][i]);
        }
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        let s = (t - self.t) / self.h;
        let s1 = 1.0 - s;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        for i in 0..out.len() {
            out[i] = r1[i] + s * (r2[i] + s1 * (r3[i] + s * (r4[i] + s1 * r5[i])));
        }
    }
}

fn error_norm(err: &[f64], y: &[f64], y_new: &[f64], s: &IntegratorSettings) -> f64 {
    let sum: f64 = err
        .iter()
        .zip(y.iter().zip(y_new))
        .map(|(&e, (&a, &b))| {
            let sk = s.abs_tol + s.rel_tol * a.abs().max(b.abs());
            (e / sk).powi(2)
        })
        .sum();
    (sum / err.len() as f64).sqrt()
}

fn initial_step<S: OdeSystem>(
    sys: &S,
    t: f64,
    y: &[f64],
    f0: &[f64],
    s: &IntegratorSettings,
) -> f64 {
    let scale = |i: usize| s.abs_tol + s.rel_tol * y[i].abs();
    let norm = |v: &[f64]| -> f64 {
        (v.iter()
            .enumerate()
            .map(|(i, x)| (x / scale(i)).powi(2))
            .sum::<f64>()
            / v.len() as f64)
            .sqrt()
    };
    let (d0, d1) = (norm(y), norm(f0));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(s.max_step);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; y.len()];
    sys.derivative(t + h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = norm(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(s.max_step)
}

/// Integrates `sys` from `(t0, y0)` to `t_end`, calling `observe(t, y)` at
/// `t0 + k·dense_sample_dt` for every such time up to `t_end`.
pub fn dopri5<S: OdeSystem>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    settings: &IntegratorSettings,
    mut observe: impl FnMut(f64, &[f64]),
) -> Result<(Vec<f64>, StepStats)> {
    settings.validate()?;
    if !(t_end > t0) {
        return Err(Error::InvalidConfig(format!(
            "t_end ({t_end}) must exceed the start time ({t0})"
        )));
    }
    let dim = y0.len();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut stats = StepStats::default();
    let mut st = Stages::new(dim);
    let mut dense = Dense::new(dim);
    let mut sample = vec![0.0; dim];

    let dt = settings.dense_sample_dt;
    let span = t_end - t0;
    let last_sample = ((span / dt) * (1.0 + 1e-12)).floor() as u64;
    let mut next_sample: u64 = 1;
    observe(t0, &y);

    sys.derivative(t, &y, &mut st.k[0]);
    stats.evaluations += 1;
    let mut h = initial_step(sys, t, &y, &st.k[0], settings);
    stats.evaluations += 1;
    let mut fac_old = 1e-4_f64;
    let mut last_rejected = false;

    loop {
        let remaining = t_end - t;
        if remaining <= 1e-13 * t_end.abs().max(1.0) {
            break;
        }
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepSizeUnderflow { t, h });
        }
        st.step(sys, t, &y, h);
        stats.evaluations += 6;
        let err = error_norm(&st.tmp, &y, &st.y_new, settings);
        if !err.is_finite() {
            if st.y_new.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFiniteState { t });
            }
            h *= FAC_MIN;
            stats.rejected += 1;
            last_rejected = true;
            continue;
        }
        let fac11 = err.powf(PI_EXPO);
        if err <= 1.0 {
            let fac = (fac11 / fac_old.powf(PI_BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = (h / fac).min(settings.max_step);
            if last_rejected {
                h_new = h_new.min(h);
            }
            fac_old = err.max(1e-4);
            stats.accepted += 1;

            dense.prepare(t, h, &y, &st);
            let t_new = if last { t_end } else { t + h };
            while next_sample <= last_sample {
                let ts = t0 + next_sample as f64 * dt;
                if ts > t_new {
                    break;
                }
                if next_sample == last_sample && (ts - t_end).abs() <= 1e-9 * dt {
                    observe(t_end, &st.y_new);
                } else {
                    dense.eval(ts, &mut sample);
                    observe(ts, &sample);
                }
                next_sample += 1;
            }

            std::mem::swap(&mut y, &mut st.y_new);
            let [k1, .., k7] = &mut st.k;
            std::mem::swap(k1, k7);
            t = t_new;
            h = h_new;
            last_rejected = false;
            if last {
                break;
            }
        } else {
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            stats.rejected += 1;
            last_rejected = true;
        }
    }
    if !y.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFiniteState { t });
    }
    Ok((y, stats))
}

/// Fixed-step fifth-order Dormand–Prince; used for convergence studies.
pub fn dopri5_fixed<S: OdeSystem>(sys: &S, t0: f64, y0: &[f64], t_end: f64, steps: usize) -> Vec<f64> {
    let h = (t_end - t0) / steps as f64;
    let mut y = y0.to_vec();
    let mut st = Stages::new(y.len());
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        sys.derivative(t, &y, &mut st.k[0]);
        st.step(sys, t, &y, h);
        std::mem::swap(&mut y, &mut st.y_new);
    }
    y
}

/// Simulates the ring from `state0` to `t_end`, streaming a snapshot to
/// `sink` every `dense_sample_dt` (including the initial state).
pub fn integrate(
    state0: &RingState,
    t_end: f64,
    settings: &IntegratorSettings,
    cfg: &ModelConfig,
    sink: impl FnMut(&RingState),
) -> Result<RingState> {
    integrate_with_stats(state0, t_end, settings, cfg, sink).map(|(s, _)| s)
}

pub fn integrate_with_stats(
    state0: &RingState,
    t_end: f64,
    settings: &IntegratorSettings,
    cfg: &ModelConfig,
    mut sink: impl FnMut(&RingState),
) -> Result<(RingState, StepStats)> {
    state0.validate()?;
    if state0.cars() != cfg.cars {
        return Err(Error::LengthMismatch {
            left: state0.cars(),
            right: cfg.cars,
        });
    }
    let sys = Ring::new(cfg, cfg.cars);
    let (y, stats) = dopri5(&sys, state0.t, &state0.pack(), t_end, settings, |t, y| {
        sink(&RingState::unpack(t, y))
    })?;
    Ok((RingState::unpack(t_end, &y), stats))
}

/// Wraps a ring configuration as an [`OdeSystem`] over the packed state
/// `[headways…, rates…]`.
pub fn ring_system(cfg: &ModelConfig) -> impl OdeSystem {
    Ring::new(cfg, cfg.cars)
}

/// Packs a state into the vector layout used by [`ring_system`].
pub fn pack_state(state: &RingState) -> Vec<f64> {
    state.pack()
}

/// `S(t) = Σ_j Δx_j` predicted from the initial state: `S(0) + S'(0)(1 − e^{−ât})/â`.
pub fn total_headway_closed_form(state0: &RingState, a_hat: f64, t: f64) -> f64 {
    let s0: f64 = state0.headway.iter().sum();
    let r0: f64 = state0.rate.iter().sum();
    s0 + r0 * (-(-a_hat * (t - state0.t)).exp_m1()) / a_hat
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(cars: usize) -> ModelConfig {
        ModelConfig::new(2.0, 4.0, cars, 1, 1.5).unwrap()
    }

    struct Oscillator;
    impl OdeSystem for Oscillator {
        fn derivative(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
    }

    #[test]
    fn velocity_limits() {
        assert_eq!(ov_velocity(4.0, 2.0, 4.0), 4f64.tanh());
        assert!((ov_velocity(1e3, 2.0, 4.0) - (1.0 + 4f64.tanh())).abs() < 1e-15);
        assert!(ov_velocity(-1e3, 2.0, 4.0) < 0.0);
    }

    #[test]
    fn uniform_flow_is_steady() {
        let (dh, dr) = rhs(&RingState::uniform(3.7, 10), &cfg(10));
        assert!(dh.iter().chain(&dr).all(|&x| x == 0.0));
    }

    #[test]
    fn two_car_acceleration() {
        let state = RingState {
            t: 0.0,
            headway: vec![4.1, 3.9],
            rate: vec![0.0, 0.0],
        };
        let (_, dr) = rhs(&state, &cfg(2));
        let want = 3.0 * 0.1f64.tanh();
        assert!((dr[0] + want).abs() < 1e-15);
        assert!((dr[1] - want).abs() < 1e-15);
    }

    #[test]
    fn oscillator_full_period() {
        let s = IntegratorSettings {
            rel_tol: 1e-12,
            abs_tol: 1e-12,
            ..Default::default()
        };
        let mut samples = Vec::new();
        let tau = 2.0 * std::f64::consts::PI;
        let (y, stats) = dopri5(&Oscillator, 0.0, &[1.0, 0.0], tau, &s, |t, y| {
            samples.push((t, y[0]))
        })
        .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-8 && y[1].abs() < 1e-8);
        assert!(stats.accepted > 0);
        assert_eq!(samples.len(), 7);
        for (t, x) in samples {
            assert!((x - t.cos()).abs() < 1e-8, "{t} {x}");
        }
    }

    #[test]
    fn fixed_step_order() {
        let tau = 2.0_f64;
        let exact = [tau.cos(), -tau.sin()];
        let err = |n| {
            let y = dopri5_fixed(&Oscillator, 0.0, &[1.0, 0.0], tau, n);
            (y[0] - exact[0]).hypot(y[1] - exact[1])
        };
        let order = (err(10) / err(20)).log2();
        assert!(order > 4.5, "{order}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = IntegratorSettings::default();
        let c = cfg(3);
        assert!(integrate(&RingState::uniform(4.0, 4), 1.0, &s, &c, |_| {}).is_err());
        assert!(integrate(&RingState::uniform(4.0, 3), 0.0, &s, &c, |_| {}).is_err());
        let mut nan = RingState::uniform(4.0, 3);
        nan.rate[1] = f64::NAN;
        assert!(matches!(
            integrate(&nan, 1.0, &s, &c, |_| {}),
            Err(Error::NonFiniteState { .. })
        ));
        let bad = IntegratorSettings {
            rel_tol: 0.0,
            ..s
        };
        assert!(integrate(&RingState::uniform(4.0, 3), 1.0, &bad, &c, |_| {}).is_err());
    }
}
