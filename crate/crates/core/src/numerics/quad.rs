use super::SolverSettings;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Globally adaptive 7/15-point Gauss-Kronrod quadrature.
///
/// The interval with the largest error estimate is bisected until the summed
/// estimate is below `max(abs_tol, rel_tol * |I|)`. At most `max_iterations`
/// bisections are performed.
pub fn integrate_adaptive<F>(mut f: F, a: f64, b: f64, settings: &SolverSettings) -> Result<Quadrature>
where
    F: FnMut(f64) -> f64,
{
    if a == b {
        return Ok(Quadrature { value: 0.0, error: 0.0, evaluations: 0 });
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::domain("integration limits must be finite"));
    }
    let (v, e) = kronrod15(&mut f, a, b);
    let mut segments = vec![(a, b, v, e)];
    let mut evaluations = 15;
    for _ in 0..=settings.max_iterations {
        let value: f64 = segments.iter().map(|s| s.2).sum();
        let error: f64 = segments.iter().map(|s| s.3).sum();
        if !value.is_finite() {
            return Err(Error::Tolerance("integrand produced a non-finite value".into()));
        }
        if error <= settings.abs_tol.max(settings.rel_tol * value.abs()) {
            return Ok(Quadrature { value, error, evaluations });
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("at least one segment");
        let (lo, hi, _, _) = segments.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = kronrod15(&mut f, lo, mid);
        let (v2, e2) = kronrod15(&mut f, mid, hi);
        evaluations += 30;
        segments.push((lo, mid, v1, e1));
        segments.push((mid, hi, v2, e2));
    }
    let error: f64 = segments.iter().map(|s| s.3).sum();
    Err(Error::Tolerance(format!(
        "quadrature error estimate {error:e} above tolerance after {} subdivisions",
        settings.max_iterations
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant() {
        let q = integrate_adaptive(|_| 1.0, 0.0, 1.0, &SolverSettings::default()).unwrap();
        assert!((q.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decaying_exponential() {
        let q = integrate_adaptive(|t: f64| (-t).exp(), 0.0, 1.0, &SolverSettings::default()).unwrap();
        let exact = 1.0 - (-1f64).exp();
        assert!((q.value - exact).abs() < 1e-14);
        assert!((q.value - exact).abs() <= 10.0 * q.error.max(1e-16));
    }

    #[test]
    fn kink_needs_subdivision() {
        let s = SolverSettings::default().with_abs_tol(1e-12).with_rel_tol(1e-12);
        let q = integrate_adaptive(|t: f64| (t - 0.3).abs(), 0.0, 1.0, &s).unwrap();
        let exact = 0.5 * (0.09 + 0.49);
        assert!((q.value - exact).abs() < 1e-10);
        assert!(q.evaluations > 15);
    }

    #[test]
    fn error_estimate_is_honest_on_smooth_integrands() {
        let s = SolverSettings::default().with_abs_tol(1e-6).with_rel_tol(1e-6);
        for k in 1..8 {
            let w = k as f64 * 3.0;
            let q = integrate_adaptive(|t: f64| (w * t).cos(), 0.0, 1.0, &s).unwrap();
            let exact = w.sin() / w;
            assert!((q.value - exact).abs() <= 10.0 * q.error + 1e-15, "w = {w}");
        }
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let s = SolverSettings::default();
        let q = integrate_adaptive(|t: f64| t * t, 1.0, 0.0, &s).unwrap();
        assert!((q.value + 1.0 / 3.0).abs() < 1e-14);
    }
}
