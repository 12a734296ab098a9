//! Complete elliptic integrals and Jacobi elliptic functions.
//!
//! Everything here is parameterised by the elliptic *modulus* `m`, not the
//! parameter `m²`: `K(m) = ∫₀^{π/2} dθ / √(1 − m² sin²θ)` and
//! `sn(u; m)` has quarter period `K(m)`. The travelling-wave formulas are
//! all written in the modulus, so keeping the same convention at the API
//! boundary avoids a class of silent squaring mistakes.
//!
//! All routines are built on the arithmetic–geometric mean of `1` and the
//! complementary modulus `m' = √(1 − m²)`. Carrying `m'` explicitly (see
//! [`Modulus::from_squares`]) keeps full relative precision as `m → 1`, where
//! the waves of interest live.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

const AGM_MAX_ITER: usize = 32;

/// Elliptic modulus together with its complement `√(1 − m²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Modulus {
    m: f64,
    mc: f64,
}

impl Modulus {
    pub fn new(m: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::Domain {
                function: "Modulus::new",
                value: m,
                expected: "0 <= m <= 1",
            });
        }
        Ok(Self {
            m,
            mc: ((1.0 - m) * (1.0 + m)).sqrt(),
        })
    }

    /// Builds the modulus from its complement; precise when `m` is close to 1.
    pub fn from_complement(mc: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mc) {
            return Err(Error::Domain {
                function: "Modulus::from_complement",
                value: mc,
                expected: "0 <= m' <= 1",
            });
        }
        Ok(Self {
            m: ((1.0 - mc) * (1.0 + mc)).sqrt(),
            mc,
        })
    }

    /// Builds the modulus from independently computed `m²` and `m'²`.
    ///
    /// Both squares are renormalised so that `m² + m'² = 1` exactly; each one is
    /// taken from whichever expression is free of cancellation at the caller.
    pub fn from_squares(m2: f64, mc2: f64) -> Result<Self> {
        if !(m2 >= 0.0 && mc2 >= 0.0 && m2 + mc2 > 0.0) {
            return Err(Error::Domain {
                function: "Modulus::from_squares",
                value: m2,
                expected: "m², m'² >= 0",
            });
        }
        let total = m2 + mc2;
        Ok(Self {
            m: (m2 / total).sqrt(),
            mc: (mc2 / total).sqrt(),
        })
    }

    pub fn value(self) -> f64 {
        self.m
    }

    pub fn complement(self) -> f64 {
        self.mc
    }

    fn require_below_one(self, function: &'static str) -> Result<()> {
        if self.mc == 0.0 {
            return Err(Error::Domain {
                function,
                value: self.m,
                expected: "m < 1",
            });
        }
        Ok(())
    }
}

fn agm(mut a: f64, mut g: f64) -> f64 {
    for _ in 0..AGM_MAX_ITER {
        let an = 0.5 * (a + g);
        let gn = (a * g).sqrt();
        if (a - g).abs() <= f64::EPSILON * an {
            return an;
        }
        a = an;
        g = gn;
    }
    a
}

/// Complete elliptic integral of the first kind.
pub fn ellip_k(m: Modulus) -> Result<f64> {
    m.require_below_one("ellip_k")?;
    Ok(FRAC_PI_2 / agm(1.0, m.mc))
}

/// Complete elliptic integral of the second kind. `E(1) = 1`.
pub fn ellip_e(m: Modulus) -> Result<f64> {
    if m.mc == 0.0 {
        return Ok(1.0);
    }
    let (mut a, mut b, mut c) = (1.0_f64, m.mc, m.m);
    let mut weight = 0.5;
    let mut sum = weight * c * c;
    for _ in 0..AGM_MAX_ITER {
        let an = 0.5 * (a + b);
        // c_{n+1} = c_n² / (4 a_{n+1}) avoids the a_n − b_n cancellation.
        let cn = c * c / (4.0 * an);
        let bn = (a * b).sqrt();
        weight *= 2.0;
        sum += weight * cn * cn;
        a = an;
        b = bn;
        c = cn;
        if c.abs() <= f64::EPSILON * a {
            break;
        }
    }
    Ok(FRAC_PI_2 / a * (1.0 - sum))
}

/// Complete elliptic integral of the third kind,
/// `Π(n, m) = ∫₀^{π/2} dθ / [(1 − n sin²θ) √(1 − m² sin²θ)]`, for `n < 1`.
///
/// Uses the quadratically convergent AGM scheme with the auxiliary sequences
/// `p_j`, `Q_j` (the AGM scheme for Pi in DLMF).
pub fn ellip_pi(n: f64, m: Modulus) -> Result<f64> {
    if !(n < 1.0) || !n.is_finite() {
        return Err(Error::Domain {
            function: "ellip_pi",
            value: n,
            expected: "characteristic n < 1",
        });
    }
    m.require_below_one("ellip_pi")?;
    if n == 0.0 {
        return ellip_k(m);
    }
    let (mut a, mut g) = (1.0_f64, m.mc);
    let mut p = (1.0 - n).sqrt();
    let mut q = 1.0_f64;
    let mut q_sum = q;
    for _ in 0..AGM_MAX_ITER {
        let p2 = p * p;
        let ag = a * g;
        let eps = (p2 - ag) / (p2 + ag);
        p = (p2 + ag) / (2.0 * p);
        q *= 0.5 * eps;
        q_sum += q;
        let an = 0.5 * (a + g);
        g = (a * g).sqrt();
        a = an;
        if q.abs() <= f64::EPSILON * q_sum.abs() && (a - g).abs() <= f64::EPSILON * a {
            break;
        }
    }
    Ok(PI / (4.0 * a) * (2.0 + n / (1.0 - n) * q_sum))
}

/// Jacobi elliptic functions `(sn, cn, dn)` by descending Landen transformation.
///
/// `m = 0` and `m = 1` return the trigonometric and hyperbolic limits exactly.
/// The argument is reduced modulo the real period `4K` first, so large phases
/// (long simulation times) keep their accuracy.
pub fn jacobi_sn_cn_dn(u: f64, m: Modulus) -> (f64, f64, f64) {
    if m.m == 0.0 {
        return (u.sin(), u.cos(), 1.0);
    }
    if m.mc == 0.0 {
        let sech = 1.0 / u.cosh();
        return (u.tanh(), sech, sech);
    }

    let mut a = [0.0_f64; AGM_MAX_ITER + 1];
    let mut c = [0.0_f64; AGM_MAX_ITER + 1];
    a[0] = 1.0;
    c[0] = m.m;
    let mut b = m.mc;
    let mut levels = 0;
    while levels < AGM_MAX_ITER && c[levels].abs() > f64::EPSILON * a[levels] {
        let an = 0.5 * (a[levels] + b);
        c[levels + 1] = 0.5 * (a[levels] - b);
        b = (a[levels] * b).sqrt();
        a[levels + 1] = an;
        levels += 1;
    }

    let quarter = FRAC_PI_2 / a[levels];
    let period = 4.0 * quarter;
    let u = u - period * (u / period).round();

    let mut phi = (1u64 << levels) as f64 * a[levels] * u;
    for level in (1..=levels).rev() {
        phi = 0.5 * (phi + (c[level] * phi.sin() / a[level]).asin());
    }
    let (sn, cn) = phi.sin_cos();
    let dn = (m.mc * m.mc + m.m * m.m * cn * cn).sqrt();
    (sn, cn, dn)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn modulus(m: f64) -> Modulus {
        Modulus::new(m).unwrap()
    }

    #[test]
    fn k_at_zero_is_half_pi() {
        assert!((ellip_k(modulus(0.0)).unwrap() - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn k_rejects_unit_modulus() {
        assert!(matches!(ellip_k(modulus(1.0)), Err(Error::Domain { .. })));
        assert!(Modulus::new(-0.1).is_err());
        assert!(Modulus::new(1.5).is_err());
    }

    #[test]
    fn k_grows_without_bound_towards_one() {
        let near = ellip_k(Modulus::from_complement(1e-12).unwrap()).unwrap();
        // K ~ ln(4/m') as m' → 0
        assert!((near - (4.0e12_f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn e_endpoints() {
        assert!((ellip_e(modulus(0.0)).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(ellip_e(modulus(1.0)).unwrap(), 1.0);
    }

    #[test]
    fn pi_reduces_to_k_and_closed_form() {
        let m = modulus(0.6);
        assert_eq!(ellip_pi(0.0, m).unwrap(), ellip_k(m).unwrap());
        let pi_half = ellip_pi(0.5, modulus(0.0)).unwrap();
        assert!((pi_half - PI / 2.0_f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn pi_rejects_singular_characteristic() {
        assert!(ellip_pi(1.0, modulus(0.3)).is_err());
        assert!(ellip_pi(1.2, modulus(0.3)).is_err());
        assert!(ellip_pi(0.3, modulus(1.0)).is_err());
    }

    #[test]
    fn jacobi_degenerate_moduli() {
        for &u in &[-2.3, 0.0, 0.4, 1.7, 10.0] {
            let (sn, cn, dn) = jacobi_sn_cn_dn(u, modulus(0.0));
            assert_eq!((sn, cn, dn), (u.sin(), u.cos(), 1.0));
            let (sn, cn, dn) = jacobi_sn_cn_dn(u, modulus(1.0));
            assert!((sn - u.tanh()).abs() < 1e-15);
            assert!((cn - 1.0 / u.cosh()).abs() < 1e-15);
            assert!((dn - cn).abs() < 1e-15);
        }
    }

    #[test]
    fn jacobi_quarter_period_values() {
        let m = modulus(0.9);
        let k = ellip_k(m).unwrap();
        let (sn, cn, dn) = jacobi_sn_cn_dn(k, m);
        assert!((sn - 1.0).abs() < 1e-14);
        assert!(cn.abs() < 1e-14);
        assert!((dn - m.complement()).abs() < 1e-14);
    }

    #[test]
    fn jacobi_parity() {
        let m = modulus(0.75);
        let (s1, c1, d1) = jacobi_sn_cn_dn(0.83, m);
        let (s2, c2, d2) = jacobi_sn_cn_dn(-0.83, m);
        assert!((s1 + s2).abs() < 1e-15);
        assert!((c1 - c2).abs() < 1e-15);
        assert!((d1 - d2).abs() < 1e-15);
    }
}
