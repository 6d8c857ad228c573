//! Bounded scalar minimisation: coarse grid scan followed by golden-section refinement.

use super::SolverSettings;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search on `[lo, hi]`, assuming `f` is unimodal there.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, settings: &SolverSettings) -> (f64, f64) {
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..settings.max_iterations {
        if (b - a) <= settings.abs_tol + settings.rel_tol * 1e-4 * (a.abs() + b.abs()) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let (fa, fb) = (f(a), f(b));
    // smallest value wins; ties go to the smaller argument
    [(a, fa), (c, fc), (d, fd), (b, fb)]
        .into_iter()
        .filter(|(_, v)| !v.is_nan())
        .fold((f64::NAN, f64::INFINITY), |best, (x, v)| {
            if v < best.1 || (v == best.1 && x < best.0) {
                (x, v)
            } else {
                best
            }
        })
}

/// Global-ish minimisation on `[lo, hi]`: scans `settings.grid_points` points,
/// then refines around the best grid point. Ties go to the smallest argument.
/// Returns `(argmin, min)`.
pub fn minimize_scalar<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, settings: &SolverSettings) -> (f64, f64) {
    if hi <= lo {
        return (lo, f(lo));
    }
    let n = settings.grid_points.max(3);
    let step = (hi - lo) / (n - 1) as f64;
    let grid: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let x = if k == n - 1 { hi } else { lo + k as f64 * step };
            (x, f(x))
        })
        .collect();
    let (kbest, &(xg, fg)) = grid
        .iter()
        .enumerate()
        .filter(|(_, (_, v))| !v.is_nan())
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
        .unwrap_or((0, &grid[0]));
    let a = grid[kbest.saturating_sub(1)].0;
    let b = grid[(kbest + 1).min(n - 1)].0;
    let (xr, fr) = golden_section(&mut f, a, b, settings);
    if fr < fg - settings.abs_tol * 1e-3 {
        (xr, fr)
    } else {
        (xg, fg)
    }
}
