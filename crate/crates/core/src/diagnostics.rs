//! Comparison of simulated headways with the asymptotic wave.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymwave::{headway_at, headway_slope_at, WaveSpec};
use crate::error::{Error, Result};

/// Headways of all cars at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub headway: Vec<f64>,
}

pub type Trajectory = Vec<Snapshot>;

/// `max_j |numeric_j − asym_j|`.
pub fn linf_error(numeric: &[f64], asym: &[f64]) -> Result<f64> {
    if numeric.len() != asym.len() {
        return Err(Error::LengthMismatch {
            left: numeric.len(),
            right: asym.len(),
        });
    }
    Ok(numeric
        .iter()
        .zip(asym)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Peak-to-trough variation `max_j − min_j`.
pub fn amplitude(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if values.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

fn pearson(x: &[f64], y: impl Iterator<Item = f64>) -> f64 {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&a, b) in x.iter().zip(y) {
        sx += a;
        sy += b;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    let cov = sxy - sx * sy / n;
    let var = (sxx - sx * sx / n) * (syy - sy * sy / n);
    if var <= 0.0 {
        0.0
    } else {
        cov / var.sqrt()
    }
}

fn wrap(s: f64, period: f64) -> f64 {
    let w = s - period * (s / period).round();
    if w <= -0.5 * period {
        w + period
    } else {
        w
    }
}

/// The shift `s` (in cars) for which `numeric_j ≈ asym(j + s, t)`, wrapped
/// to `(−N/2n, N/2n]`.
///
/// Integer shifts over one wavelength are scored by circular Pearson
/// correlation and the best one is refined by a parabola through its
/// neighbours. The correlation is flat at its peak, so the final estimate is
/// the nearby zero of its derivative in `s`, which uses the analytic slope of
/// the wave between cars and resolves the shift to rounding level.
pub fn phase_shift(numeric: &[f64], spec: &WaveSpec, t: f64) -> Result<f64> {
    let cars = spec.cfg.cars;
    if numeric.len() != cars {
        return Err(Error::LengthMismatch {
            left: numeric.len(),
            right: cars,
        });
    }
    let amp = amplitude(numeric);
    if !(amp >= 1e-12) || !(spec.amplitude() >= 1e-12) {
        return Err(Error::DegenerateWave { amplitude: amp });
    }
    let wavelength = spec.wavelength();
    let grid: Vec<f64> = (0..cars).map(|j| headway_at(spec, j as f64, t)).collect();
    let span = wavelength.ceil() as usize;
    let scores: Vec<f64> = (0..span)
        .map(|s| pearson(numeric, (0..cars).map(|j| grid[(j + s) % cars])))
        .collect();
    let best = (0..span)
        .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
        .expect("wavelength at least one car");
    let prev = scores[(best + span - 1) % span];
    let next = scores[(best + 1) % span];
    let curvature = prev - 2.0 * scores[best] + next;
    let mut centre = best as f64;
    if curvature < 0.0 {
        centre += 0.5 * (prev - next) / curvature;
    }
    Ok(wrap(refine_peak(numeric, spec, t, centre), wavelength))
}

/// Sign-equivalent derivative of the Pearson correlation with respect to the shift.
fn correlation_slope(x: &[f64], spec: &WaveSpec, t: f64, s: f64) -> f64 {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sd, mut sxy, mut sxd, mut syy, mut syd) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (j, &a) in x.iter().enumerate() {
        let y = headway_at(spec, j as f64 + s, t);
        let d = headway_slope_at(spec, j as f64 + s, t);
        sx += a;
        sy += y;
        sd += d;
        sxy += a * y;
        sxd += a * d;
        syy += y * y;
        syd += y * d;
    }
    let cov_xy = sxy - sx * sy / n;
    let cov_xd = sxd - sx * sd / n;
    let var_y = syy - sy * sy / n;
    let cov_yd = syd - sy * sd / n;
    // d/ds [cov_xy / √var_y] · √var_y³
    cov_xd * var_y - cov_xy * cov_yd
}

fn refine_peak(x: &[f64], spec: &WaveSpec, t: f64, centre: f64) -> f64 {
    let f = |s: f64| correlation_slope(x, spec, t, s);
    let (mut lo, mut hi) = (centre - 1.0, centre + 1.0);
    let (mut flo, mut fhi) = (f(lo), f(hi));
    // A maximum has slope > 0 on the left and < 0 on the right.
    if !(flo > 0.0 && fhi < 0.0) {
        return centre;
    }
    // Illinois variant of regula falsi.
    let mut side = 0;
    for _ in 0..100 {
        let mid = (lo * fhi - hi * flo) / (fhi - flo);
        if !(mid > lo && mid < hi) || hi - lo < 1e-12 {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm > 0.0 {
            lo = mid;
            flo = fm;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = mid;
            fhi = fm;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
        if (hi - lo).abs() < 1e-12 * (1.0 + mid.abs()) {
            break;
        }
    }
    if flo.abs() < fhi.abs() {
        lo
    } else {
        hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityThresholds {
    /// Largest relative change of the mean amplitude between the windows.
    pub max_amplitude_drift: f64,
    /// Largest least-squares phase drift rate, cars per unit time.
    pub max_phase_rate: f64,
    /// Largest total phase drift over the run, cars.
    pub max_phase_drift: f64,
    /// `linf_final` may not exceed this multiple of `linf_t0_window`.
    pub max_linf_growth: f64,
    /// Compare the final snapshot after removing the measured phase shift.
    pub align_final: bool,
    /// `linf_final` below this fraction of the wave amplitude always passes.
    pub linf_amplitude_floor: f64,
}

impl Default for StabilityThresholds {
    fn default() -> Self {
        Self {
            max_amplitude_drift: 0.02,
            max_phase_rate: 1e-4,
            max_phase_drift: 1.0,
            max_linf_growth: 3.0,
            align_final: false,
            linf_amplitude_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityWindows {
    pub early: (f64, f64),
    pub late: (f64, f64),
    /// Between the windows only every `stride`-th snapshot is phase-tracked.
    pub stride: usize,
}

impl Default for StabilityWindows {
    fn default() -> Self {
        Self {
            early: (0.0, 100.0),
            late: (9600.0, 10000.0),
            stride: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Drifting,
    Diverged,
}

/// Per-snapshot measurements behind a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub t: f64,
    pub linf: f64,
    pub amplitude: f64,
    /// Unwrapped phase shift, cars.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub linf_t0_window: f64,
    pub linf_final: f64,
    pub linf_final_aligned: f64,
    pub phase_shift_final: f64,
    pub phase_drift: f64,
    pub phase_drift_rate: f64,
    pub amplitude_early: f64,
    pub amplitude_late: f64,
    pub amplitude_drift: f64,
    pub wave_amplitude: f64,
    pub verdict: Verdict,
    pub thresholds: StabilityThresholds,
    #[serde(skip)]
    pub samples: Vec<WindowSample>,
}

fn in_window(t: f64, w: (f64, f64)) -> bool {
    t >= w.0 - 1e-9 && t <= w.1 + 1e-9
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let tx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let ty = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for &(x, y) in points {
        num += (x - tx) * (y - ty);
        den += (x - tx) * (x - tx);
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Measures the trajectory against `spec` in the two windows and classifies it.
///
/// The trajectory must be sorted by time. Phases are unwrapped along the
/// tracked snapshots, so successive tracked samples must move by less than
/// half a wavelength.
pub fn stability_report(
    trajectory: &[Snapshot],
    spec: &WaveSpec,
    windows: &StabilityWindows,
    thresholds: &StabilityThresholds,
) -> Result<StabilityReport> {
    let wave_amplitude = spec.amplitude();
    let finite = trajectory
        .iter()
        .all(|s| s.t.is_finite() && s.headway.iter().all(|x| x.is_finite()));
    for w in [windows.early, windows.late] {
        if !trajectory.iter().any(|s| in_window(s.t, w)) {
            return Err(Error::EmptyWindow {
                start: w.0,
                end: w.1,
            });
        }
    }
    let last_index = trajectory
        .iter()
        .rposition(|s| in_window(s.t, windows.late))
        .expect("late window checked above");
    if !finite {
        let nan = f64::NAN;
        return Ok(StabilityReport {
            linf_t0_window: nan,
            linf_final: nan,
            linf_final_aligned: nan,
            phase_shift_final: nan,
            phase_drift: nan,
            phase_drift_rate: nan,
            amplitude_early: nan,
            amplitude_late: nan,
            amplitude_drift: nan,
            wave_amplitude,
            verdict: Verdict::Diverged,
            thresholds: *thresholds,
            samples: Vec::new(),
        });
    }

    let stride = windows.stride.max(1);
    let wavelength = spec.wavelength();
    let tracked: Vec<(&Snapshot, bool)> = trajectory
        .iter()
        .enumerate()
        .take(last_index + 1)
        .filter_map(|(i, snap)| {
            let windowed = in_window(snap.t, windows.early) || in_window(snap.t, windows.late);
            (windowed || i % stride == 0 || i == last_index).then_some((snap, windowed))
        })
        .collect();
    let measured: Vec<(f64, Option<WindowSample>)> = tracked
        .par_iter()
        .map(|&(snap, windowed)| -> Result<(f64, Option<WindowSample>)> {
            let raw = phase_shift(&snap.headway, spec, snap.t)?;
            let sample = if windowed {
                let asym: Vec<f64> = (0..snap.headway.len())
                    .map(|j| headway_at(spec, j as f64, snap.t))
                    .collect();
                Some(WindowSample {
                    t: snap.t,
                    linf: linf_error(&snap.headway, &asym)?,
                    amplitude: amplitude(&snap.headway),
                    phase: raw,
                })
            } else {
                None
            };
            Ok((raw, sample))
        })
        .collect::<Result<_>>()?;

    let mut samples: Vec<WindowSample> = Vec::new();
    let mut track: Vec<(f64, f64)> = Vec::new();
    for ((snap, _), (raw, sample)) in tracked.iter().zip(measured) {
        let phase = match track.last() {
            Some(&(_, prev)) => prev + wrap(raw - prev, wavelength),
            None => raw,
        };
        track.push((snap.t, phase));
        if let Some(mut sample) = sample {
            sample.phase = phase;
            samples.push(sample);
        }
    }

    let early: Vec<&WindowSample> = samples
        .iter()
        .filter(|s| in_window(s.t, windows.early))
        .collect();
    let late: Vec<&WindowSample> = samples
        .iter()
        .filter(|s| in_window(s.t, windows.late))
        .collect();
    let linf_t0_window = early.iter().map(|s| s.linf).fold(0.0, f64::max);
    let final_sample = *late.last().expect("late window nonempty");
    let final_snap = &trajectory[last_index];
    let aligned: Vec<f64> = (0..final_snap.headway.len())
        .map(|j| headway_at(spec, j as f64 + final_sample.phase, final_snap.t))
        .collect();
    let linf_final_aligned = linf_error(&final_snap.headway, &aligned)?;
    let amplitude_early = mean(early.iter().map(|s| s.amplitude));
    let amplitude_late = mean(late.iter().map(|s| s.amplitude));
    let amplitude_drift = (amplitude_late - amplitude_early).abs() / amplitude_early;
    let phase_drift = track.last().unwrap().1 - track[0].1;
    let phase_drift_rate = slope(&track);

    let mut report = StabilityReport {
        linf_t0_window,
        linf_final: final_sample.linf,
        linf_final_aligned,
        phase_shift_final: final_sample.phase,
        phase_drift,
        phase_drift_rate,
        amplitude_early,
        amplitude_late,
        amplitude_drift,
        wave_amplitude,
        verdict: Verdict::Stable,
        thresholds: *thresholds,
        samples,
    };
    report.verdict = classify(&report, thresholds);
    Ok(report)
}

/// Verdict of `report` under `thresholds`.
///
/// Diverged when the wave has lost its shape (final error above the wave
/// amplitude, or amplitude doubled or halved); Drifting when any stable
/// threshold is exceeded; Stable otherwise.
pub fn classify(report: &StabilityReport, thresholds: &StabilityThresholds) -> Verdict {
    let values = [
        report.linf_final,
        report.linf_final_aligned,
        report.amplitude_drift,
        report.phase_drift,
        report.phase_drift_rate,
    ];
    if values.iter().any(|x| !x.is_finite()) {
        return Verdict::Diverged;
    }
    let ratio = report.amplitude_late / report.amplitude_early;
    if report.linf_final_aligned > report.wave_amplitude || !(0.5..=2.0).contains(&ratio) {
        return Verdict::Diverged;
    }
    let linf_final = if thresholds.align_final {
        report.linf_final_aligned
    } else {
        report.linf_final
    };
    let linf_limit = (thresholds.max_linf_growth * report.linf_t0_window)
        .max(thresholds.linf_amplitude_floor * report.wave_amplitude);
    let stable = report.amplitude_drift <= thresholds.max_amplitude_drift
        && report.phase_drift_rate.abs() <= thresholds.max_phase_rate
        && report.phase_drift.abs() <= thresholds.max_phase_drift
        && linf_final <= linf_limit;
    if stable {
        Verdict::Stable
    } else {
        Verdict::Drifting
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymwave::sample_headways;
    use crate::paramspace::{greek_constants, quantised_fixed_point, solve_kappa1, Branch};

    fn spec() -> WaveSpec {
        let g = greek_constants(2.0, 4.0);
        let k = solve_kappa1(1.99, 1, 100, Branch::First, &g).unwrap();
        let (fp, cfg) = quantised_fixed_point(k, 2.0, 4.0, 100, 1).unwrap();
        WaveSpec::new(fp, cfg).unwrap()
    }

    #[test]
    fn linf_basics() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(linf_error(&a, &a).unwrap(), 0.0);
        let b = [1.25, 2.25, 3.25];
        assert_eq!(linf_error(&a, &b).unwrap(), 0.25);
        assert!(linf_error(&a, &b[..2]).is_err());
    }

    #[test]
    fn amplitude_basics() {
        assert_eq!(amplitude(&[2.0; 5]), 0.0);
        assert_eq!(amplitude(&[1.0, -2.0, 0.5]), 3.0);
        assert_eq!(amplitude(&[11.0, 8.0, 10.5]), 3.0);
    }

    #[test]
    fn phase_of_exact_and_shifted_waves() {
        let s = spec();
        let at = |shift: f64| -> Vec<f64> {
            (0..100).map(|j| headway_at(&s, j as f64 + shift, 5.0)).collect()
        };
        assert!(phase_shift(&at(0.0), &s, 5.0).unwrap().abs() < 1e-6);
        assert!((phase_shift(&at(3.0), &s, 5.0).unwrap() - 3.0).abs() < 1e-6);
        assert!((phase_shift(&at(2.5), &s, 5.0).unwrap() - 2.5).abs() < 0.01);
        assert!((phase_shift(&at(-20.25), &s, 5.0).unwrap() + 20.25).abs() < 1e-6);
        assert!(matches!(
            phase_shift(&[4.0; 100], &s, 0.0),
            Err(Error::DegenerateWave { .. })
        ));
    }

    #[test]
    fn sampled_wave_is_stable() {
        let s = spec();
        let traj: Vec<Snapshot> = (0..=40)
            .map(|i| {
                let t = 10.0 * i as f64;
                Snapshot {
                    t,
                    headway: sample_headways(&s, t),
                }
            })
            .collect();
        let windows = StabilityWindows {
            early: (0.0, 100.0),
            late: (300.0, 400.0),
            stride: 1,
        };
        let r = stability_report(&traj, &s, &windows, &StabilityThresholds::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Stable);
        assert!(r.linf_final < 1e-12 && r.phase_drift.abs() < 1e-9);
        // max − min over integer cars only sees the peak to within the sampling grid
        assert!(r.amplitude_drift < 1e-3);
    }

    #[test]
    fn missing_window_is_an_error() {
        let s = spec();
        let traj = vec![Snapshot {
            t: 0.0,
            headway: sample_headways(&s, 0.0),
        }];
        assert!(matches!(
            stability_report(&traj, &s, &StabilityWindows::default(), &Default::default()),
            Err(Error::EmptyWindow { .. })
        ));
    }
}
