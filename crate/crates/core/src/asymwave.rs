//! The leading-order travelling wave and the headway field it predicts.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ovsim::RingState;
use crate::paramspace::{FixedPointParams, GreekSet, ModelConfig, INV_SQRT3};
use crate::specfun;

/// Largest relative quantisation defect accepted by [`WaveSpec::new`].
pub const QUANTISATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaveSpec {
    pub fp: FixedPointParams,
    pub cfg: ModelConfig,
    pub theta0: f64,
    greek: GreekSet,
}

impl WaveSpec {
    /// Fails unless `n` whole wavelengths of the wave fit on the ring.
    pub fn new(fp: FixedPointParams, cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let defect = fp.quantisation_defect(cfg.cars, cfg.oscillations);
        if !(defect.abs() <= QUANTISATION_TOL) {
            let rhs = 2.0 * cfg.oscillations as f64 * fp.quarter_period();
            return Err(Error::QuantisationMismatch {
                lhs: fp.beta_k * fp.epsilon * cfg.cars as f64,
                rhs,
            });
        }
        Ok(Self {
            fp,
            cfg,
            theta0: 0.0,
            greek: cfg.greek(),
        })
    }

    pub fn with_phase(mut self, theta0: f64) -> Self {
        self.theta0 = theta0;
        self
    }

    pub fn greek(&self) -> &GreekSet {
        &self.greek
    }

    /// Speed of the wave pattern in car indices per unit time, `ωg₁ε² − V'(h_c)`.
    /// Negative: the pattern travels upstream.
    pub fn pattern_velocity(&self) -> f64 {
        -self.phase_speed()
    }

    /// Wavelength in car indices, `N/n`.
    pub fn wavelength(&self) -> f64 {
        self.cfg.cars as f64 / self.cfg.oscillations as f64
    }

    /// `ε √(ω g₁/g₂) (c − b)`, the peak-to-trough headway variation.
    pub fn amplitude(&self) -> f64 {
        self.fp.headway_scale(&self.greek) * (self.fp.roots.c - self.fp.roots.b)
    }

    fn phase_speed(&self) -> f64 {
        let eps = self.fp.epsilon;
        0.5 * self.cfg.v_max - self.fp.omega * self.greek.g1 * eps * eps
    }

    fn phase(&self, j: f64, t: f64) -> f64 {
        self.fp.beta_k * self.fp.epsilon * (j + self.phase_speed() * t) - self.theta0
    }
}

fn sn_cn_dn(spec: &WaveSpec, phi: f64) -> (f64, f64, f64) {
    specfun::jacobi_sn_cn_dn(phi, spec.fp.modulus())
}

/// `u₀(j, t) = c + (d − c) sn²/(e + sn²)`; lies in `[b, c]`.
pub fn u0_at(spec: &WaveSpec, j: f64, t: f64) -> f64 {
    let r = spec.fp.roots;
    if r.c == r.b {
        return r.c;
    }
    let (sn, _, _) = sn_cn_dn(spec, spec.phase(j, t));
    let w = sn * sn;
    r.c + (r.d - r.c) * w / (spec.fp.e + w)
}

/// Headway of car `j` at time `t`.
pub fn headway_at(spec: &WaveSpec, j: f64, t: f64) -> f64 {
    spec.cfg.h_c + spec.fp.headway_scale(&spec.greek) * (u0_at(spec, j, t) - INV_SQRT3)
}

/// `∂Δx/∂j`, the headway slope along the ring at real-valued `j`.
pub fn headway_slope_at(spec: &WaveSpec, j: f64, t: f64) -> f64 {
    let fp = &spec.fp;
    let r = fp.roots;
    if r.c == r.b {
        return 0.0;
    }
    let (sn, cn, dn) = sn_cn_dn(spec, spec.phase(j, t));
    let denom = fp.e + sn * sn;
    let du_dphi = (r.d - r.c) * fp.e / (denom * denom) * 2.0 * sn * cn * dn;
    fp.headway_scale(&spec.greek) * du_dphi * fp.beta_k * fp.epsilon
}

/// `∂Δx_j/∂t`, analytic.
pub fn headway_rate_at(spec: &WaveSpec, j: f64, t: f64) -> f64 {
    headway_slope_at(spec, j, t) * spec.phase_speed()
}

/// Headways and rates of cars `0..N` at `t = 0`.
pub fn sample_initial_state(spec: &WaveSpec) -> RingState {
    sample_state(spec, 0.0)
}

pub fn sample_state(spec: &WaveSpec, t: f64) -> RingState {
    let cars = spec.cfg.cars;
    RingState {
        t,
        headway: (0..cars).map(|j| headway_at(spec, j as f64, t)).collect(),
        rate: (0..cars).map(|j| headway_rate_at(spec, j as f64, t)).collect(),
    }
}

/// Headways of cars `0..N` at `t`.
pub fn sample_headways(spec: &WaveSpec, t: f64) -> Vec<f64> {
    (0..spec.cfg.cars)
        .map(|j| headway_at(spec, j as f64, t))
        .collect()
}
