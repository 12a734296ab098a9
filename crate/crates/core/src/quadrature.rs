//! Globally adaptive Gauss–Kronrod (7/15) quadrature.
//!
//! Used to evaluate period averages by brute force, independently of the
//! closed forms built on elliptic integrals.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Number of equal panels the interval is split into before adapting.
    pub initial_panels: usize,
    pub max_panels: usize,
}

impl Default for QuadSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-11,
            rel_tol: 1e-13,
            initial_panels: 8,
            max_panels: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub panels: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Panel {
    let centre = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(centre);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let dx = half * XGK[i];
        let pair = f(centre - dx) + f(centre + dx);
        kron += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    Panel {
        lo,
        hi,
        value: kron * half,
        error: ((kron - gauss) * half).abs(),
    }
}

/// Integrates `f` over `[lo, hi]`, bisecting the worst panel until the summed
/// error estimate meets `max(abs_tol, rel_tol·|I|)` or the panel budget runs out.
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, settings: QuadSettings) -> QuadResult {
    let start = settings.initial_panels.max(1);
    let width = (hi - lo) / start as f64;
    let mut panels: Vec<Panel> = (0..start)
        .map(|i| {
            let a = lo + width * i as f64;
            let b = if i + 1 == start { hi } else { a + width };
            kronrod(&f, a, b)
        })
        .collect();

    loop {
        let value: f64 = panels.iter().map(|p| p.value).sum();
        let error: f64 = panels.iter().map(|p| p.error).sum();
        let target = settings.abs_tol.max(settings.rel_tol * value.abs());
        if error <= target || panels.len() >= settings.max_panels {
            return QuadResult {
                value,
                error,
                panels: panels.len(),
            };
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("at least one panel");
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.lo + p.hi);
        panels.push(kronrod(&f, p.lo, mid));
        panels.push(kronrod(&f, mid, p.hi));
    }
}
