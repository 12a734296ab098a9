//! Fixed points of the modulation system and their ring quantisation.
//!
//! A steady wave is labelled by the single constant `κ₁/γ`. The second
//! integration constant follows from requiring `1/√3` to be a root of the
//! wave polynomial, which pins the headway range to straddle `h_c`:
//!
//! ```text
//! κ₂/γ = 1/36 − κ₁/(√3 γ)
//! Q(z) = z⁴ − (4/√3) z³ + 12 (κ₁/γ) z + 12 (κ₂/γ)
//! ```
//!
//! The roots `a ≤ b ≤ c ≤ d` of `Q` fix the elliptic modulus, the offset `e`
//! and the period averages `α₁`, `α₂`; the wave speed `ω` is the value that
//! makes `D̂_X = Ĩ` vanish. On a ring of `N` cars holding `n` wavelengths the
//! driver sensitivity `â` is then determined, which is what [`solve_kappa1`]
//! inverts.
//!
//! Only the ratios `κ₁/γ`, `κ₂/γ` are stored. Where formulas need `P` and `k`
//! separately the convention `P = K(m)` (so `β = 1`) is used; every observable
//! depends on the product `βk` only.

use std::f64::consts::FRAC_PI_2;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{self, QuadSettings};
use crate::quartic::{self, QuarticCoeffs, SortedRoots};
use crate::specfun::{self, Modulus};

/// `1/√3`, the root shared by every admissible wave polynomial.
pub const INV_SQRT3: f64 = 0.577_350_269_189_625_764_509_148_780_501_957_456;
pub const SQRT3: f64 = 1.732_050_807_568_877_293_527_446_341_505_872_367;
/// `2/(9√3)`: here `1/√3` becomes a double root and the two branches meet.
pub const BRANCH_POINT: f64 = 2.0 / (9.0 * SQRT3);

/// `ν/γ` for `λ = 1`, `γ = 3ω`, `ν = 2√3 ω`.
const NU_OVER_GAMMA: f64 = 2.0 / SQRT3;

/// Below this root separation `c − b` the closed forms for `ω` lose all their
/// digits to cancellation and the small-amplitude limit `ω = g₃/g₄` is used.
// TODO: replace the cutoff with a small-n series for the period averages.
const SMALL_AMPLITUDE: f64 = 3e-4;

const BISECTION_TOL: f64 = 1e-13;

/// Physical and ring parameters of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub v_max: f64,
    pub h_c: f64,
    /// `N`, number of cars on the ring.
    pub cars: usize,
    /// `n`, number of wavelengths around the ring.
    pub oscillations: u32,
    pub a_hat: f64,
}

impl ModelConfig {
    pub fn new(v_max: f64, h_c: f64, cars: usize, oscillations: u32, a_hat: f64) -> Result<Self> {
        let cfg = Self {
            v_max,
            h_c,
            cars,
            oscillations,
            a_hat,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return bad(format!("v_max must be positive, got {}", self.v_max));
        }
        if !(self.h_c > 0.0 && self.h_c.is_finite()) {
            return bad(format!("h_c must be positive, got {}", self.h_c));
        }
        if self.cars < 2 {
            return bad(format!("need at least 2 cars, got {}", self.cars));
        }
        if self.oscillations < 1 {
            return bad("need at least one oscillation".into());
        }
        let critical = self.greek().a_hat_c;
        if !(self.a_hat > 0.0 && self.a_hat < critical) {
            return bad(format!(
                "a_hat must lie in (0, {critical}) (unstable regime), got {}",
                self.a_hat
            ));
        }
        Ok(())
    }

    pub fn greek(&self) -> GreekSet {
        greek_constants(self.v_max, self.h_c)
    }

    /// `ε = √(â_c/â − 1)`.
    pub fn epsilon(&self) -> f64 {
        (self.greek().a_hat_c / self.a_hat - 1.0).sqrt()
    }
}

/// Expansion coefficients of the optimal-velocity function about `h_c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreekSet {
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub g4: f64,
    pub g5: f64,
    pub a_hat_c: f64,
}

/// `g₁ … g₅` and `â_c = 2V'(h_c)` for `V(Δx) = (v_max/2)(tanh(Δx − h_c) + tanh h_c)`.
///
/// At the inflection point `V'(h_c) = v_max/2` and `V'''(h_c) = −v_max`, so
/// none of these depend on `h_c`.
pub fn greek_constants(v_max: f64, _h_c: f64) -> GreekSet {
    let v1 = 0.5 * v_max;
    let v3 = -v_max;
    GreekSet {
        g1: v1 / 6.0,
        g2: -v3 / 6.0,
        g3: v1 / 2.0,
        g4: v1 / 8.0,
        g5: v3 / 12.0,
        a_hat_c: 2.0 * v1,
    }
}

/// Neutral stability line `â_s(h) = 2V'(h)`.
pub fn neutral_stability(h: f64, v_max: f64, h_c: f64) -> f64 {
    let sech = 1.0 / (h - h_c).cosh();
    v_max * sech * sech
}

/// `κ₂/γ` forced by the root `1/√3`.
pub fn kappa2_of_kappa1(k1g: f64) -> f64 {
    1.0 / 36.0 - k1g / SQRT3
}

/// The wave polynomial `Q(z)` for a given `κ₁/γ`.
pub fn wave_polynomial(k1g: f64) -> QuarticCoeffs {
    QuarticCoeffs {
        c4: 1.0,
        c3: -4.0 / SQRT3,
        c2: 0.0,
        c1: 12.0 * k1g,
        c0: 12.0 * kappa2_of_kappa1(k1g),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Downward wave, `c = 1/√3`, headway never above `h_c`.
    First,
    /// Upward wave, `b = 1/√3`, headway never below `h_c`.
    Second,
}

/// One steady travelling wave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointParams {
    pub kappa1_over_gamma: f64,
    pub kappa2_over_gamma: f64,
    pub roots: SortedRoots,
    pub m: f64,
    /// `√(1 − m²)`, computed from the roots directly.
    pub m_complement: f64,
    pub e: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub omega: f64,
    pub beta_k: f64,
    pub epsilon: f64,
    pub branch: Branch,
}

impl FixedPointParams {
    pub fn modulus(&self) -> Modulus {
        Modulus::from_squares(self.m * self.m, self.m_complement * self.m_complement)
            .expect("stored modulus is valid")
    }

    /// `K(m)`, half the period of `sn²` in the phase variable.
    pub fn quarter_period(&self) -> f64 {
        if self.m == 0.0 {
            return FRAC_PI_2;
        }
        specfun::ellip_k(self.modulus()).expect("fixed points have m < 1")
    }

    /// Headway-wave amplitude scale `ε √(ω g₁/g₂)`.
    pub fn headway_scale(&self, greek: &GreekSet) -> f64 {
        self.epsilon * (self.omega * greek.g1 / greek.g2).sqrt()
    }

    /// `(βkεN − 2nK) / 2nK`; zero when the wave closes on the ring.
    pub fn quantisation_defect(&self, cars: usize, oscillations: u32) -> f64 {
        let rhs = 2.0 * oscillations as f64 * self.quarter_period();
        (self.beta_k * self.epsilon * cars as f64 - rhs) / rhs
    }

    fn is_flat(&self) -> bool {
        self.roots.c - self.roots.b == 0.0
    }
}

struct Shape {
    roots: SortedRoots,
    modulus: Modulus,
    e: f64,
    branch: Branch,
}

fn wave_shape(k1g: f64) -> Result<Shape> {
    let roots = quartic::real_roots_sorted(wave_polynomial(k1g))?;
    let SortedRoots { a, b, c, d } = roots;
    let denom = (c - a) * (d - b);
    let modulus = Modulus::from_squares((d - a) * (c - b) / denom, (b - a) * (d - c) / denom)?;
    let e = if c == b {
        f64::NEG_INFINITY
    } else {
        (d - b) / (b - c)
    };
    let (dist_b, dist_c) = ((b - INV_SQRT3).abs(), (c - INV_SQRT3).abs());
    let branch = if dist_c < dist_b || (dist_c == dist_b && k1g <= BRANCH_POINT) {
        Branch::First
    } else {
        Branch::Second
    };
    Ok(Shape {
        roots,
        modulus,
        e,
        branch,
    })
}

/// Period averages `α₁ = ⟨u₀⟩`, `α₂ = ⟨u₀²⟩` of
/// `u₀ = (c e + d sn²)/(e + sn²)` in closed form through `K`, `E` and `Π(−1/e, m)`.
pub fn alpha_integrals(m: Modulus, roots: &SortedRoots, e: f64) -> Result<(f64, f64)> {
    let (c, d) = (roots.c, roots.d);
    if m.complement() == 0.0 && e == -1.0 {
        return Err(Error::Domain {
            function: "alpha_integrals",
            value: e,
            expected: "not both m = 1 and e = -1 (kink limit)",
        });
    }
    if !(e <= -1.0) {
        return Err(Error::Domain {
            function: "alpha_integrals",
            value: e,
            expected: "e <= -1",
        });
    }
    let n = -1.0 / e;
    if d == c || n == 0.0 {
        return Ok((c, c * c));
    }
    let k = specfun::ellip_k(m)?;
    let big_e = specfun::ellip_e(m)?;
    let pi = specfun::ellip_pi(n, m)?;
    let m2 = m.value() * m.value();

    // ⟨sn²/(e + sn²)⟩ and ⟨sn⁴/(e + sn²)²⟩
    let s1 = 1.0 - pi / k;
    let s2 = (k - 2.0 * pi) / k
        + (n * big_e + (m2 - n) * k + pi * (2.0 * m2 * n + 2.0 * n - n * n - 3.0 * m2))
            / (2.0 * k * (n - 1.0) * (m2 - n));

    let span = d - c;
    Ok((c + span * s1, c * c + 2.0 * c * span * s1 + span * span * s2))
}

/// `γ/k² · (Ĩ₁, Ĩ₂, Ĩ₃)` for `λ = 1`, `ν/γ = 2/√3`.
fn scaled_itilde(k1g: f64, k2g: f64, alpha1: f64, alpha2: f64) -> [f64; 3] {
    let nu = NU_OVER_GAMMA;
    let (r1, r2) = (k1g, k2g);
    let j1 = -nu * nu / 12.0 * alpha2 + (alpha1 + nu / 6.0) * r1 + 4.0 / 3.0 * r2;
    let j2 = (alpha2 * (4.5 * r1 - 5.0 * nu.powi(3) / 8.0)
        + alpha1 * (6.0 * r2 + 1.5 * nu * r1)
        + 1.25 * nu * nu * r1
        + nu * r2)
        / 6.0;
    let j3 = (alpha2 * (6.9 * r1 * nu - 7.0 * nu.powi(4) / 8.0 + 4.8 * r2)
        + alpha1 * (1.2 * nu * r2 + 2.1 * nu * nu * r1)
        + 1.75 * nu.powi(3) * r1
        + 1.4 * nu * nu * r2
        - 10.8 * r1 * r1)
        / 6.0;
    [j1, j2, j3]
}

/// Wave speed from `Ĩ = 0`, i.e. `ω = −ρ₁/ρ₂`.
fn wave_speed(itilde: [f64; 3], greek: &GreekSet) -> f64 {
    let [i1, i2, i3] = itilde;
    let sg1 = greek.g1.sqrt();
    let rho1 = greek.g3 / sg1 * i1;
    let rho2 = i1 * sg1 * greek.g5 / greek.g2
        + (3.0 * i3 - 2.0 * SQRT3 * i2) * (greek.g4 / sg1 + sg1 * greek.g5 / greek.g2);
    -rho1 / rho2
}

/// Everything except `ε`, which needs the sensitivity.
fn wave_core(k1g: f64, greek: &GreekSet) -> Result<FixedPointParams> {
    let shape = wave_shape(k1g)?;
    let k2g = kappa2_of_kappa1(k1g);
    let (alpha1, alpha2) = alpha_integrals(shape.modulus, &shape.roots, shape.e)?;
    let SortedRoots { a, b, c, d } = shape.roots;
    let omega = if c - b < SMALL_AMPLITUDE {
        greek.g3 / greek.g4
    } else {
        wave_speed(scaled_itilde(k1g, k2g, alpha1, alpha2), greek)
    };
    if !(omega > 0.0) {
        return Err(Error::NegativeSpeed { omega });
    }
    Ok(FixedPointParams {
        kappa1_over_gamma: k1g,
        kappa2_over_gamma: k2g,
        roots: shape.roots,
        m: shape.modulus.value(),
        m_complement: shape.modulus.complement(),
        e: shape.e,
        alpha1,
        alpha2,
        omega,
        beta_k: (omega * (a - c) * (b - d) / 8.0).sqrt(),
        epsilon: f64::NAN,
        branch: shape.branch,
    })
}

/// The steady wave labelled by `κ₁/γ`, with `ε` taken from `cfg.a_hat`.
///
/// The wave only closes on the ring when `cfg.a_hat` equals
/// [`sensitivity`] of the result; use [`quantised_fixed_point`] to get a
/// consistent pair.
pub fn fixed_point(k1g: f64, cfg: &ModelConfig) -> Result<FixedPointParams> {
    let mut fp = wave_core(k1g, &cfg.greek())?;
    fp.epsilon = cfg.epsilon();
    Ok(fp)
}

/// Driver sensitivity that makes `n` wavelengths fit on `N` cars.
pub fn sensitivity(fp: &FixedPointParams, a_hat_c: f64, oscillations: u32, cars: usize) -> f64 {
    let SortedRoots { a, b, c, d } = fp.roots;
    let w = fp.omega * (a - c) * (b - d) * (cars * cars) as f64;
    let k = fp.quarter_period();
    let n = oscillations as f64;
    a_hat_c * w / (32.0 * k * k * n * n + w)
}

/// The fixed point at `κ₁/γ` together with the ring configuration it quantises to.
pub fn quantised_fixed_point(
    k1g: f64,
    v_max: f64,
    h_c: f64,
    cars: usize,
    oscillations: u32,
) -> Result<(FixedPointParams, ModelConfig)> {
    let greek = greek_constants(v_max, h_c);
    let mut fp = wave_core(k1g, &greek)?;
    let a_hat = sensitivity(&fp, greek.a_hat_c, oscillations, cars);
    let cfg = ModelConfig::new(v_max, h_c, cars, oscillations, a_hat)?;
    fp.epsilon = cfg.epsilon();
    Ok((fp, cfg))
}

fn sensitivity_at(k1g: f64, greek: &GreekSet, oscillations: u32, cars: usize) -> Result<f64> {
    let fp = wave_core(k1g, greek)?;
    Ok(sensitivity(&fp, greek.a_hat_c, oscillations, cars))
}

/// The interval of `κ₁/γ` with four real roots, and the branch point inside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaveDomain {
    pub lower: f64,
    pub upper: f64,
    /// Analytic double-root value `2/(9√3)`.
    pub branch_point: f64,
    /// Argmax of the sensitivity curve found by golden-section search.
    pub branch_point_search: f64,
}

impl WaveDomain {
    /// Computed once per process; the domain depends on nothing but `κ₁/γ`.
    pub fn get() -> &'static WaveDomain {
        static DOMAIN: OnceLock<WaveDomain> = OnceLock::new();
        DOMAIN.get_or_init(discover_domain)
    }

    pub fn contains(&self, k1g: f64) -> bool {
        k1g > self.lower && k1g < self.upper
    }
}

fn four_real(k1g: f64) -> bool {
    wave_polynomial(k1g).has_four_distinct_real_roots()
}

/// Walks outward from `inside` in steps of `step` until the sign test fails,
/// then bisects the crossing.
fn domain_edge(inside: f64, step: f64) -> f64 {
    let mut good = inside;
    let mut bad = inside + step;
    while four_real(bad) {
        good = bad;
        bad += step;
    }
    while (bad - good).abs() > 1e-15 {
        let mid = 0.5 * (good + bad);
        if four_real(mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    good
}

fn discover_domain() -> WaveDomain {
    // The discriminant only touches zero at the branch point, so start just off it.
    let offset = 1e-3;
    assert!(four_real(BRANCH_POINT - offset) && four_real(BRANCH_POINT + offset));
    let lower = domain_edge(BRANCH_POINT - offset, -5e-3);
    let upper = domain_edge(BRANCH_POINT + offset, 5e-3);

    // â ∝ W/(32K²n² + W N²) is monotone in W/K², so its argmax does not
    // depend on n, N or v_max.
    let greek = greek_constants(1.0, 1.0);
    let score = |k: f64| -> f64 {
        wave_core(k, &greek)
            .map(|fp| {
                let SortedRoots { a, b, c, d } = fp.roots;
                let kk = fp.quarter_period();
                fp.omega * (a - c) * (b - d) / (kk * kk)
            })
            .unwrap_or(0.0)
    };
    let branch_point_search = golden_section_max(score, lower, upper, 1e-9);
    WaveDomain {
        lower,
        upper,
        branch_point: BRANCH_POINT,
        branch_point_search,
    }
}

fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let ratio = 0.5 * (5.0_f64.sqrt() - 1.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Inverts [`sensitivity`]: the `κ₁/γ` on `branch` whose wave closes with
/// `n` wavelengths on `N` cars at driver sensitivity `a_hat_target`.
///
/// On each side of the branch point `â(κ₁/γ)` rises monotonically from zero
/// at the domain edge (the kink limit) to its peak, so plain bisection applies.
pub fn solve_kappa1(
    a_hat_target: f64,
    oscillations: u32,
    cars: usize,
    branch: Branch,
    greek: &GreekSet,
) -> Result<f64> {
    let domain = WaveDomain::get();
    let peak = sensitivity_at(domain.branch_point, greek, oscillations, cars)?;
    if !(a_hat_target > 0.0 && a_hat_target < peak) {
        return Err(Error::TargetUnreachable {
            target: a_hat_target,
            max: peak,
        });
    }
    let (mut outer, mut inner) = match branch {
        Branch::First => (domain.lower, domain.branch_point),
        Branch::Second => (domain.upper, domain.branch_point),
    };
    // Points where the root solve fails sit at the kink edge, where â → 0.
    while (inner - outer).abs() > BISECTION_TOL {
        let mid = 0.5 * (outer + inner);
        let a_hat = sensitivity_at(mid, greek, oscillations, cars).unwrap_or(0.0);
        if a_hat < a_hat_target {
            outer = mid;
        } else {
            inner = mid;
        }
    }
    Ok(0.5 * (outer + inner))
}

/// `u₀` and its first two phase derivatives at phase `phi` (with `β = 1`).
pub(crate) fn profile(fp: &FixedPointParams, phi: f64) -> (f64, f64, f64) {
    let SortedRoots { c, d, .. } = fp.roots;
    if fp.is_flat() {
        return (c, 0.0, 0.0);
    }
    let m = fp.modulus();
    let (sn, cn, dn) = specfun::jacobi_sn_cn_dn(phi, m);
    let m2 = fp.m * fp.m;
    let w = sn * sn;
    let w1 = 2.0 * sn * cn * dn;
    let w2 = 2.0 * (cn * cn * dn * dn - sn * sn * dn * dn - m2 * sn * sn * cn * cn);
    let e = fp.e;
    let denom = e + w;
    let u = c + (d - c) * w / denom;
    let f1 = (d - c) * e / (denom * denom);
    let f2 = -2.0 * f1 / denom;
    (u, f1 * w1, f2 * w1 * w1 + f1 * w2)
}

/// Independent check of the wave speed: evaluates `Ĩ/k²` by adaptive
/// quadrature of the `θ`-derivatives of `u₀`, with `∫u₀ u₀,θθθθ = ∫u₀,θθ²`.
///
/// Returns `Ĩ / (|term without ω| + |term with ω|)`, which is zero at a
/// fixed point and dimensionless.
pub fn residual_itilde(fp: &FixedPointParams, greek: &GreekSet) -> f64 {
    if fp.is_flat() {
        return 0.0;
    }
    let period = 2.0 * fp.quarter_period();
    let settings = QuadSettings {
        abs_tol: 1e-14,
        rel_tol: 1e-13,
        initial_panels: 16,
        max_panels: 4000,
    };
    let mean = |f: &dyn Fn(f64) -> f64| quadrature::integrate(f, 0.0, period, settings).value / period;

    let i1 = mean(&|t| profile(fp, t).1.powi(2));
    let shifted = mean(&|t| {
        let (u, du, _) = profile(fp, t);
        du * du * (u - INV_SQRT3).powi(2)
    });
    let i4 = mean(&|t| profile(fp, t).2.powi(2));

    let SortedRoots { a, b, c, d } = fp.roots;
    let sg1 = greek.g1.sqrt();
    // k² = ω (a − c)(b − d) / 8 under P = K(m).
    let k2_over_omega = (a - c) * (b - d) / 8.0;
    let without_omega = greek.g3 / sg1 * i1;
    let with_omega = fp.omega
        * (-greek.g4 / sg1 * k2_over_omega * i4 + 3.0 * sg1 * greek.g5 / greek.g2 * shifted);
    (without_omega + with_omega) / (without_omega.abs() + with_omega.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepValues {
    pub roots: SortedRoots,
    pub m: f64,
    pub omega: f64,
}

/// One `κ₁/γ` sample; `a_hat[i]` belongs to the i-th requested oscillation count.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub kappa1_over_gamma: f64,
    pub outcome: std::result::Result<(SweepValues, Vec<f64>), Error>,
}

/// Tabulates the parameter space on `steps` evenly spaced `κ₁/γ` values.
/// Points outside the four-real-root domain come back as flagged rows.
pub fn sweep(
    range: (f64, f64),
    steps: usize,
    greek: &GreekSet,
    cars: usize,
    oscillations: &[u32],
) -> Vec<SweepRow> {
    let steps = steps.max(2);
    let (lo, hi) = range;
    (0..steps)
        .into_par_iter()
        .map(|i| {
            let k = lo + (hi - lo) * i as f64 / (steps - 1) as f64;
            let outcome = wave_core(k, greek).map(|fp| {
                let values = SweepValues {
                    roots: fp.roots,
                    m: fp.m,
                    omega: fp.omega,
                };
                let a_hats = oscillations
                    .iter()
                    .map(|&n| sensitivity(&fp, greek.a_hat_c, n, cars))
                    .collect();
                (values, a_hats)
            });
            SweepRow {
                kappa1_over_gamma: k,
                outcome,
            }
        })
        .collect()
}
