//! Real roots of quartic polynomials.
//!
//! Ferrari's resolvent gives all four roots in closed form; each root is then
//! Newton-polished against the original coefficients. Close to a double root
//! the resolvent only delivers about half the working precision, and the
//! imaginary part of a grazing pair is pure rounding noise, so pairs whose
//! imaginary part falls below `1e-7·scale` are flattened onto the real axis
//! and refined as a double root at the critical point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Imaginary parts below this (relative to the root scale) are treated as zero.
pub const COMPLEX_PAIR_TOL: f64 = 1e-7;

const POLISH_ITERS: usize = 8;

/// Coefficients of `c4 z⁴ + c3 z³ + c2 z² + c1 z + c0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuarticCoeffs {
    pub c4: f64,
    pub c3: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl QuarticCoeffs {
    pub fn new(c4: f64, c3: f64, c2: f64, c1: f64, c0: f64) -> Result<Self> {
        if c4 == 0.0 || !c4.is_finite() {
            return Err(Error::DegenerateQuartic);
        }
        Ok(Self { c4, c3, c2, c1, c0 })
    }

    /// Monic quartic `∏ (z − rᵢ)`.
    pub fn from_roots(r: [f64; 4]) -> Self {
        let e = elementary_symmetric(r);
        Self {
            c4: 1.0,
            c3: -e[0],
            c2: e[1],
            c1: -e[2],
            c0: e[3],
        }
    }

    pub fn monic(self) -> Self {
        Self {
            c4: 1.0,
            c3: self.c3 / self.c4,
            c2: self.c2 / self.c4,
            c1: self.c1 / self.c4,
            c0: self.c0 / self.c4,
        }
    }

    pub fn eval(&self, z: f64) -> f64 {
        (((self.c4 * z + self.c3) * z + self.c2) * z + self.c1) * z + self.c0
    }

    pub fn eval_derivative(&self, z: f64) -> f64 {
        ((4.0 * self.c4 * z + 3.0 * self.c3) * z + 2.0 * self.c2) * z + self.c1
    }

    fn eval_second_derivative(&self, z: f64) -> f64 {
        (12.0 * self.c4 * z + 6.0 * self.c3) * z + 2.0 * self.c2
    }

    /// Discriminant `∏_{i<j} (rᵢ − rⱼ)²` scaled by `c4⁶`.
    pub fn discriminant(&self) -> f64 {
        let (a, b, c, d, e) = (self.c4, self.c3, self.c2, self.c1, self.c0);
        256.0 * a.powi(3) * e.powi(3) - 192.0 * a * a * b * d * e * e
            - 128.0 * a * a * c * c * e * e
            + 144.0 * a * a * c * d * d * e
            - 27.0 * a * a * d.powi(4)
            + 144.0 * a * b * b * c * e * e
            - 6.0 * a * b * b * d * d * e
            - 80.0 * a * b * c * c * d * e
            + 18.0 * a * b * c * d.powi(3)
            + 16.0 * a * c.powi(4) * e
            - 4.0 * a * c.powi(3) * d * d
            - 27.0 * b.powi(4) * e * e
            + 18.0 * b.powi(3) * c * d * e
            - 4.0 * b.powi(3) * d.powi(3)
            - 4.0 * b * b * c.powi(3) * e
            + b * b * c * c * d * d
    }

    /// Sign test for four distinct real roots: `Δ > 0`, `P < 0`, `D < 0`.
    pub fn has_four_distinct_real_roots(&self) -> bool {
        let (a, b, c, d, e) = (self.c4, self.c3, self.c2, self.c1, self.c0);
        let p = 8.0 * a * c - 3.0 * b * b;
        let dd = 64.0 * a.powi(3) * e - 16.0 * a * a * c * c + 16.0 * a * b * b * c
            - 16.0 * a * a * b * d
            - 3.0 * b.powi(4);
        self.discriminant() > 0.0 && p < 0.0 && dd < 0.0
    }
}

/// Four real roots in ascending order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SortedRoots {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl SortedRoots {
    pub fn as_array(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    /// `[Σrᵢ, Σrᵢrⱼ, Σrᵢrⱼrₖ, ∏rᵢ]`.
    pub fn elementary_symmetric(&self) -> [f64; 4] {
        elementary_symmetric(self.as_array())
    }
}

fn elementary_symmetric(r: [f64; 4]) -> [f64; 4] {
    let [a, b, c, d] = r;
    [
        a + b + c + d,
        a * b + a * c + a * d + b * c + b * d + c * d,
        a * b * c + a * b * d + a * c * d + b * c * d,
        a * b * c * d,
    ]
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    re: f64,
    imag: f64,
    paired: bool,
}

/// All real roots of `y² + p y + q`, or the imaginary part of the pair.
fn quadratic(p: f64, q: f64) -> ([f64; 2], f64) {
    let disc = p * p - 4.0 * q;
    if disc < 0.0 {
        let re = -0.5 * p;
        return ([re, re], 0.5 * (-disc).sqrt());
    }
    let sq = disc.sqrt();
    let t = -0.5 * (p + p.signum() * sq);
    if t == 0.0 {
        return ([0.0, 0.0], 0.0);
    }
    ([t, q / t], 0.0)
}

/// Largest real root of the monic cubic `s³ + a s² + b s + c`.
fn largest_cubic_root(a: f64, b: f64, c: f64) -> f64 {
    let q = (a * a - 3.0 * b) / 9.0;
    let r = (2.0 * a.powi(3) - 9.0 * a * b + 27.0 * c) / 54.0;
    let mut s = if r * r < q.powi(3) {
        let theta = (r / q.powi(3).sqrt()).clamp(-1.0, 1.0).acos();
        -2.0 * q.sqrt() * (theta / 3.0).cos() - a / 3.0
    } else {
        let big = -r.signum() * (r.abs() + (r * r - q.powi(3)).sqrt()).cbrt();
        let small = if big == 0.0 { 0.0 } else { q / big };
        big + small - a / 3.0
    };
    for _ in 0..POLISH_ITERS {
        let f = ((s + a) * s + b) * s + c;
        let df = (3.0 * s + 2.0 * a) * s + b;
        if df == 0.0 {
            break;
        }
        let next = s - f / df;
        let fn_ = ((next + a) * next + b) * next + c;
        if fn_.abs() >= f.abs() {
            break;
        }
        s = next;
    }
    s
}

fn ferrari(q: &QuarticCoeffs) -> [Candidate; 4] {
    let (b, c, d, e) = (q.c3, q.c2, q.c1, q.c0);
    let shift = -0.25 * b;
    let p = c - 3.0 * b * b / 8.0;
    let qq = b.powi(3) / 8.0 - 0.5 * b * c + d;
    let r = -3.0 * b.powi(4) / 256.0 + b * b * c / 16.0 - 0.25 * b * d + e;

    let scale = 1.0 + p.abs() + qq.abs().sqrt() + r.abs().sqrt();
    let mut out = [Candidate {
        re: 0.0,
        imag: 0.0,
        paired: false,
    }; 4];

    let mut put = |slot: usize, roots: [f64; 2], imag: f64, offset: f64| {
        for (k, y) in roots.iter().enumerate() {
            out[slot + k] = Candidate {
                re: y + offset,
                imag,
                paired: imag > 0.0 || roots[0] == roots[1],
            };
        }
    };

    if qq.abs() <= 1e-15 * scale * scale {
        // Biquadratic in y²: w² + p w + r = 0.
        let (ws, wimag) = quadratic(p, r);
        if wimag > 0.0 {
            // w = ρ e^{±iψ}: all four roots complex.
            let rho = (ws[0] * ws[0] + wimag * wimag).sqrt().sqrt();
            let half = 0.5 * wimag.atan2(ws[0]);
            put(0, [rho * half.cos(); 2], rho * half.sin().abs(), shift);
            put(2, [-rho * half.cos(); 2], rho * half.sin().abs(), shift);
            return out;
        }
        for (k, w) in ws.iter().enumerate() {
            if *w >= 0.0 {
                let y = w.sqrt();
                put(2 * k, [y, -y], 0.0, shift);
            } else {
                put(2 * k, [0.0, 0.0], (-w).sqrt(), shift);
            }
        }
        return out;
    }

    let s = largest_cubic_root(p, 0.25 * p * p - r, -qq * qq / 8.0).max(0.0);
    let root2s = (2.0 * s).sqrt();
    for (k, sigma) in [1.0_f64, -1.0].iter().enumerate() {
        let lin = -sigma * root2s;
        let cst = 0.5 * p + s + sigma * qq / (2.0 * root2s);
        let (ys, imag) = quadratic(lin, cst);
        put(2 * k, ys, imag, shift);
    }
    out
}

fn polish_simple(q: &QuarticCoeffs, mut z: f64) -> f64 {
    let mut fz = q.eval(z);
    for _ in 0..POLISH_ITERS {
        let dq = q.eval_derivative(z);
        if dq == 0.0 || fz == 0.0 {
            break;
        }
        let next = z - fz / dq;
        let fnext = q.eval(next);
        if fnext.abs() >= fz.abs() {
            break;
        }
        z = next;
        fz = fnext;
    }
    z
}

/// Newton on `Q'` from the centre of a grazing pair: lands on the double root.
fn polish_double(q: &QuarticCoeffs, mut z: f64) -> f64 {
    let mut fz = q.eval_derivative(z);
    for _ in 0..POLISH_ITERS {
        let d2 = q.eval_second_derivative(z);
        if d2 == 0.0 || fz == 0.0 {
            break;
        }
        let next = z - fz / d2;
        let fnext = q.eval_derivative(next);
        if fnext.abs() >= fz.abs() || q.eval(next).abs() > q.eval(z).abs() * 2.0 + f64::EPSILON {
            break;
        }
        z = next;
        fz = fnext;
    }
    z
}

/// A double root split by rounding into two nearby simple roots is only
/// resolved to about `√ε` by Newton; refine it at the critical point instead
/// when that does not worsen the residual.
fn merge_close_pairs(q: &QuarticCoeffs, roots: &mut [f64; 4]) {
    let scale = roots.iter().fold(1.0_f64, |s, r| s.max(r.abs()));
    for i in 0..3 {
        if roots[i + 1] - roots[i] > 1e-7 * scale {
            continue;
        }
        let z = polish_double(q, 0.5 * (roots[i] + roots[i + 1]));
        let worst = q.eval(roots[i]).abs().max(q.eval(roots[i + 1]).abs());
        if q.eval(z).abs() <= worst && z >= roots[i] && z <= roots[i + 1] {
            roots[i] = z;
            roots[i + 1] = z;
        }
    }
}

/// Four real roots of `q`, ascending, each Newton-polished.
///
/// Fails with [`Error::NoFourRealRoots`] when a complex pair has an imaginary
/// part larger than [`COMPLEX_PAIR_TOL`] times the root scale.
pub fn real_roots_sorted(q: QuarticCoeffs) -> Result<SortedRoots> {
    if q.c4 == 0.0 || !q.c4.is_finite() {
        return Err(Error::DegenerateQuartic);
    }
    let monic = q.monic();
    let candidates = ferrari(&monic);

    let scale = candidates
        .iter()
        .map(|c| c.re.abs().max(c.imag))
        .fold(1.0_f64, f64::max);
    if let Some(worst) = candidates
        .iter()
        .map(|c| c.imag)
        .filter(|&im| im > COMPLEX_PAIR_TOL * scale)
        .reduce(f64::max)
    {
        return Err(Error::NoFourRealRoots { imag: worst });
    }

    let mut roots = [0.0_f64; 4];
    for pair in 0..2 {
        let (x, y) = (candidates[2 * pair], candidates[2 * pair + 1]);
        if x.paired || y.paired {
            let z = polish_double(&monic, 0.5 * (x.re + y.re));
            roots[2 * pair] = z;
            roots[2 * pair + 1] = z;
        } else {
            roots[2 * pair] = polish_simple(&monic, x.re);
            roots[2 * pair + 1] = polish_simple(&monic, y.re);
        }
    }
    roots.sort_by(f64::total_cmp);
    merge_close_pairs(&monic, &mut roots);
    let [a, b, c, d] = roots;
    Ok(SortedRoots { a, b, c, d })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual_ok(q: &QuarticCoeffs, r: &SortedRoots) {
        for z in r.as_array() {
            assert!(
                q.eval(z).abs() <= 1e-10 * z.abs().powi(4).max(1.0),
                "residual {} at {z}",
                q.eval(z)
            );
        }
    }

    #[test]
    fn constructed_roots() {
        let q = QuarticCoeffs::from_roots([3.0, 1.0, 4.0, 2.0]);
        let r = real_roots_sorted(q).unwrap();
        for (got, want) in r.as_array().iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!((got - want).abs() < 1e-13);
        }
        residual_ok(&q, &r);
    }

    #[test]
    fn discriminant_of_consecutive_integers() {
        let q = QuarticCoeffs::from_roots([1.0, 2.0, 3.0, 4.0]);
        assert!((q.discriminant() - 144.0).abs() < 1e-9);
        assert!(q.has_four_distinct_real_roots());
    }

    #[test]
    fn double_root_at_branch_point() {
        // (z − 1/√3)² (z² − (2/√3) z − 5/3)
        let s3 = 3.0_f64.sqrt();
        let k1 = 2.0 / (9.0 * s3);
        let k2 = -5.0 / 108.0;
        let q = QuarticCoeffs::new(1.0, -4.0 / s3, 0.0, 12.0 * k1, 12.0 * k2).unwrap();
        let r = real_roots_sorted(q).unwrap();
        let want = [1.0 / s3 - 2f64.sqrt(), 1.0 / s3, 1.0 / s3, 1.0 / s3 + 2f64.sqrt()];
        for (got, w) in r.as_array().iter().zip(want) {
            assert!((got - w).abs() < 1e-9, "{got} vs {w}");
        }
        residual_ok(&q, &r);
    }

    #[test]
    fn biquadratic() {
        let q = QuarticCoeffs::from_roots([-2.0, -1.0, 1.0, 2.0]);
        let r = real_roots_sorted(q).unwrap();
        assert_eq!(r.as_array().map(|x| (x * 1e12).round() / 1e12), [-2.0, -1.0, 1.0, 2.0]);
    }

    #[test]
    fn complex_pair_is_rejected() {
        // (z² + 1)(z − 1)(z − 2)
        let q = QuarticCoeffs::new(1.0, -3.0, 3.0, -3.0, 2.0).unwrap();
        assert!(matches!(
            real_roots_sorted(q),
            Err(Error::NoFourRealRoots { .. })
        ));
        assert!(!q.has_four_distinct_real_roots());
        let none = QuarticCoeffs::new(1.0, 0.0, 2.0, 0.0, 1.0).unwrap();
        assert!(real_roots_sorted(none).is_err());
    }

    #[test]
    fn non_monic_input_is_normalised() {
        let q = QuarticCoeffs::from_roots([-1.5, 0.25, 0.5, 7.0]);
        let scaled = QuarticCoeffs::new(-3.0, -3.0 * q.c3, -3.0 * q.c2, -3.0 * q.c1, -3.0 * q.c0).unwrap();
        let r = real_roots_sorted(scaled).unwrap();
        assert!((r.a + 1.5).abs() < 1e-12 && (r.d - 7.0).abs() < 1e-12);
    }

    #[test]
    fn zero_leading_coefficient() {
        assert_eq!(
            QuarticCoeffs::new(0.0, 1.0, 0.0, 0.0, 0.0),
            Err(Error::DegenerateQuartic)
        );
    }
}
