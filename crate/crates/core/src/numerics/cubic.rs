use crate::{Error, Result};
use std::f64::consts::PI;

/// Real roots of `a3*y^3 + a1*y + a0 = 0`, ascending.
///
/// Closed form (trigonometric when three real roots exist, Cardano otherwise)
/// followed by a Newton polish of every root. `a3 == 0` falls back to the
/// linear equation.
pub fn solve_cubic_real(a3: f64, a1: f64, a0: f64) -> Result<Vec<f64>> {
    if !(a3.is_finite() && a1.is_finite() && a0.is_finite()) {
        return Err(Error::domain("cubic coefficients must be finite"));
    }
    if a3 == 0.0 {
        if a1 == 0.0 {
            return if a0 == 0.0 {
                Err(Error::domain("all cubic coefficients vanish"))
            } else {
                Ok(Vec::new())
            };
        }
        return Ok(vec![-a0 / a1]);
    }

    let p = a1 / a3;
    let q = a0 / a3;
    let mut roots = if p == 0.0 {
        vec![(-q).cbrt()]
    } else {
        let disc = q * q / 4.0 + p * p * p / 27.0;
        if disc > 0.0 {
            // one real root; pick the cancellation-free branch
            let a = -q.signum() * (q.abs() / 2.0 + disc.sqrt()).cbrt();
            let b = if a != 0.0 { -p / (3.0 * a) } else { 0.0 };
            vec![a + b]
        } else {
            let m = 2.0 * (-p / 3.0).sqrt();
            let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
            let phi = arg.acos() / 3.0;
            (0..3)
                .map(|k| m * (phi - 2.0 * PI * k as f64 / 3.0).cos())
                .collect()
        }
    };

    for r in roots.iter_mut() {
        *r = polish(p, q, *r);
    }
    roots.sort_by(|a, b| a.total_cmp(b));
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0));
    Ok(roots)
}

fn polish(p: f64, q: f64, y: f64) -> f64 {
    let f = |y: f64| (y * y + p) * y + q;
    let mut best = y;
    let mut best_res = f(y).abs();
    let mut cur = y;
    for _ in 0..3 {
        let d = 3.0 * cur * cur + p;
        if d == 0.0 {
            break;
        }
        let next = cur - f(cur) / d;
        let res = f(next).abs();
        if res < best_res {
            best = next;
            best_res = res;
            cur = next;
        } else {
            break;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_roots() {
        let r = solve_cubic_real(1.0, -1.0, 0.0).unwrap();
        assert_eq!(r.len(), 3);
        assert!((r[0] + 1.0).abs() < 1e-14);
        assert!(r[1].abs() < 1e-14);
        assert!((r[2] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn single_root() {
        let r = solve_cubic_real(1.0, 1.0, -2.0).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pure_cube() {
        let r = solve_cubic_real(2.0, 0.0, -16.0).unwrap();
        assert_eq!(r, vec![2.0]);
    }

    #[test]
    fn degenerate_linear() {
        assert_eq!(solve_cubic_real(0.0, 2.0, -1.0).unwrap(), vec![0.5]);
        assert!(solve_cubic_real(0.0, 0.0, 1.0).unwrap().is_empty());
        assert!(solve_cubic_real(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn double_root_is_reported_once() {
        // (y - 1)^2 (y + 2) = y^3 - 3y + 2
        let r = solve_cubic_real(1.0, -3.0, 2.0).unwrap();
        assert!((r[0] + 2.0).abs() < 1e-12);
        assert!((r[r.len() - 1] - 1.0).abs() < 1e-7);
    }
}
