use super::SolverSettings;
use crate::{Error, Result};

/// Brent's method on a bracketing interval `[lo, hi]`.
///
/// Terminates when the bracket half-width falls below
/// `abs_tol / 2 + 2 eps |b|` or the function value is exactly zero.
pub fn find_root_bracketed<F>(mut f: F, lo: f64, hi: f64, settings: &SolverSettings) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa.is_nan() || fb.is_nan() {
        return Err(Error::domain("function is NaN at a bracket end"));
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoBracket { lo, hi, f_lo: fa, f_hi: fb });
    }

    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..settings.max_iterations.max(100) {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * settings.abs_tol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
        if fb.is_nan() {
            return Err(Error::domain(format!("function is NaN at {b}")));
        }
    }
    Err(Error::Tolerance(format!(
        "Brent iteration did not converge within {} iterations",
        settings.max_iterations
    )))
}

/// Grows `hi` geometrically away from `lo` until `f` changes sign.
/// Returns the last two probe points bracketing the sign change.
pub fn expand_bracket<F>(
    mut f: F,
    lo: f64,
    first_step: f64,
    limit: f64,
    settings: &SolverSettings,
) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let f_lo = f(lo);
    let mut a = lo;
    let mut step = first_step;
    let mut b = (lo + step).min(limit);
    for _ in 0..settings.max_iterations {
        let fb = f(b);
        if fb == 0.0 || fb.signum() != f_lo.signum() {
            return Ok((a, b));
        }
        if b >= limit {
            return Err(Error::NoBracket { lo, hi: b, f_lo, f_hi: fb });
        }
        a = b;
        step *= settings.bracket_expansion;
        b = (b + step).min(limit);
    }
    Err(Error::NoBracket { lo, hi: b, f_lo, f_hi: f(b) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear() {
        let s = SolverSettings::default();
        let r = find_root_bracketed(|x| x - 0.5, 0.0, 1.0, &s).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cube_root_of_two() {
        let s = SolverSettings::default();
        let r = find_root_bracketed(|x| x * x * x - 2.0, 1.0, 2.0, &s).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-10);
    }

    #[test]
    fn missing_bracket() {
        let s = SolverSettings::default();
        let err = find_root_bracketed(|x| x * x + 1.0, -1.0, 1.0, &s).unwrap_err();
        assert!(matches!(err, Error::NoBracket { .. }));
    }

    #[test]
    fn bracket_expansion_finds_sign_change() {
        let s = SolverSettings::default();
        let (a, b) = expand_bracket(|x| x - 10.0, 0.0, 0.1, 100.0, &s).unwrap();
        assert!(a < 10.0 && b >= 10.0);
        assert!(expand_bracket(|x| x - 10.0, 0.0, 0.1, 5.0, &s).is_err());
    }
}
