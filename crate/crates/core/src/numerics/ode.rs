//! Adaptive ODE integration with event detection.
//!
//! Two methods are available: the explicit Dormand-Prince 5(4) pair with its
//! fourth-order continuous extension, and a variable-step BDF2 for stiff
//! problems. Events are zero crossings of user functions `g(t, y)`; crossings
//! are bracketed on the dense output and terminal events are polished by
//! re-stepping from the start of the step to the located time.

use super::{find_root_bracketed, SolverSettings};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OdeMethod {
    #[default]
    DormandPrince45,
    Bdf2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Rising,
    Falling,
    Either,
}

pub type EventFn<'a> = Box<dyn Fn(f64, &[f64]) -> f64 + 'a>;

pub struct EventSpec<'a> {
    pub g: EventFn<'a>,
    pub direction: Direction,
    pub terminal: bool,
}

impl<'a> EventSpec<'a> {
    pub fn new(g: impl Fn(f64, &[f64]) -> f64 + 'a) -> Self {
        Self { g: Box::new(g), direction: Direction::Either, terminal: false }
    }

    pub fn direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn terminal(mut self) -> Self {
        self.terminal = true;
        self
    }

    fn crossed(&self, g0: f64, g1: f64) -> bool {
        let rising = g0 < 0.0 && g1 >= 0.0;
        let falling = g0 > 0.0 && g1 <= 0.0;
        match self.direction {
            Direction::Rising => rising,
            Direction::Falling => falling,
            Direction::Either => rising || falling,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub index: usize,
    pub t: f64,
    pub y: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OdeStatus {
    Completed,
    Terminated { event: usize },
}

#[derive(Clone, Debug)]
pub struct OdeSolution {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub events: Vec<EventRecord>,
    pub status: OdeStatus,
    pub accepted: usize,
    pub rejected: usize,
    /// Sum of the local error estimates of the accepted steps, in state units.
    pub error_estimate: f64,
}

impl OdeSolution {
    pub fn last(&self) -> (f64, &[f64]) {
        let n = self.t.len() - 1;
        (self.t[n], &self.y[n])
    }

    pub fn terminal_event(&self) -> Option<&EventRecord> {
        match self.status {
            OdeStatus::Terminated { event } => self.events.iter().rev().find(|e| e.index == event),
            OdeStatus::Completed => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeOptions {
    pub method: OdeMethod,
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_max: f64,
    /// Disables error control and integrates with a constant step.
    pub fixed_step: Option<f64>,
    pub max_steps: usize,
    /// Residual accepted for a polished terminal event.
    pub event_tol: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        let s = SolverSettings::default();
        Self {
            method: OdeMethod::DormandPrince45,
            rtol: s.rel_tol,
            atol: s.abs_tol,
            h_init: None,
            h_max: f64::INFINITY,
            fixed_step: None,
            max_steps: 2_000_000,
            event_tol: 1e-13,
        }
    }
}

impl OdeOptions {
    pub fn from_settings(settings: &SolverSettings) -> Self {
        Self { rtol: settings.rel_tol, atol: settings.abs_tol, ..Self::default() }
    }

    pub fn method(mut self, method: OdeMethod) -> Self {
        self.method = method;
        self
    }

    pub fn h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }

    pub fn tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }
}

type Rhs<'r> = dyn FnMut(f64, &[f64], &mut [f64]) + 'r;

trait Stepper {
    fn order(&self) -> f64;
    /// Attempts a step of size `h` from the committed state; returns the
    /// weighted error norm. The candidate is kept until `commit` or the next attempt.
    fn attempt(&mut self, rhs: &mut Rhs, h: f64, opts: &OdeOptions) -> f64;
    fn candidate(&self) -> &[f64];
    fn dense(&self, theta: f64) -> Vec<f64>;
    /// State at `t + s` computed by a genuine step, without committing.
    fn restep(&mut self, rhs: &mut Rhs, s: f64, opts: &OdeOptions) -> Vec<f64>;
    fn commit(&mut self, rhs: &mut Rhs, h: f64);
    fn state(&self) -> (f64, &[f64]);
    fn derivative(&self) -> &[f64];
}

fn weighted_norm(err: &[f64], y0: &[f64], y1: &[f64], opts: &OdeOptions) -> f64 {
    let n = err.len() as f64;
    let s: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = opts.atol + opts.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

struct DormandPrince {
    t: f64,
    y: Vec<f64>,
    k1: Vec<f64>,
    // candidate
    h: f64,
    y_new: Vec<f64>,
    k7: Vec<f64>,
    cont: [Vec<f64>; 5],
}

impl DormandPrince {
    fn new(rhs: &mut Rhs, t: f64, y: &[f64]) -> Self {
        let n = y.len();
        let mut k1 = vec![0.0; n];
        rhs(t, y, &mut k1);
        Self {
            t,
            y: y.to_vec(),
            k1,
            h: 0.0,
            y_new: vec![0.0; n],
            k7: vec![0.0; n],
            cont: std::array::from_fn(|_| vec![0.0; n]),
        }
    }

    /// One DP step of size `h` from the committed state. Returns (y5, err, k-stages).
    fn raw_step(&self, rhs: &mut Rhs, h: f64) -> (Vec<f64>, Vec<f64>, [Vec<f64>; 7]) {
        let n = self.y.len();
        let y = &self.y;
        let t = self.t;
        let k1 = self.k1.clone();
        let mut tmp = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut k5 = vec![0.0; n];
        let mut k6 = vec![0.0; n];
        let mut k7 = vec![0.0; n];
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        rhs(t + C2 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(t + C3 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(t + C4 * h, &tmp, &mut k4);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(t + C5 * h, &tmp, &mut k5);
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs(t + h, &tmp, &mut k6);
        let mut y5 = vec![0.0; n];
        for i in 0..n {
            y5[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        rhs(t + h, &y5, &mut k7);
        let mut err = vec![0.0; n];
        for i in 0..n {
            err[i] = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        (y5, err, [k1, k2, k3, k4, k5, k6, k7])
    }
}

impl Stepper for DormandPrince {
    fn order(&self) -> f64 {
        5.0
    }

    fn attempt(&mut self, rhs: &mut Rhs, h: f64, opts: &OdeOptions) -> f64 {
        let (y5, err, k) = self.raw_step(rhs, h);
        let norm = weighted_norm(&err, &self.y, &y5, opts);
        let n = self.y.len();
        for i in 0..n {
            let dy = y5[i] - self.y[i];
            let bspl = h * k[0][i] - dy;
            self.cont[0][i] = self.y[i];
            self.cont[1][i] = dy;
            self.cont[2][i] = bspl;
            self.cont[3][i] = dy - h * k[6][i] - bspl;
            self.cont[4][i] = h
                * (D1 * k[0][i]
                    + D3 * k[2][i]
                    + D4 * k[3][i]
                    + D5 * k[4][i]
                    + D6 * k[5][i]
                    + D7 * k[6][i]);
        }
        self.h = h;
        self.y_new = y5;
        self.k7 = k[6].clone();
        norm
    }

    fn candidate(&self) -> &[f64] {
        &self.y_new
    }

    fn dense(&self, theta: f64) -> Vec<f64> {
        let th1 = 1.0 - theta;
        (0..self.y.len())
            .map(|i| {
                self.cont[0][i]
                    + theta
                        * (self.cont[1][i]
                            + th1 * (self.cont[2][i] + theta * (self.cont[3][i] + th1 * self.cont[4][i])))
            })
            .collect()
    }

    fn restep(&mut self, rhs: &mut Rhs, s: f64, _opts: &OdeOptions) -> Vec<f64> {
        self.raw_step(rhs, s).0
    }

    fn commit(&mut self, _rhs: &mut Rhs, h: f64) {
        self.t += h;
        std::mem::swap(&mut self.y, &mut self.y_new);
        std::mem::swap(&mut self.k1, &mut self.k7);
    }

    fn state(&self) -> (f64, &[f64]) {
        (self.t, &self.y)
    }

    fn derivative(&self) -> &[f64] {
        &self.k1
    }
}

/// Variable-step BDF2 with a first BDF1 step, Newton iterations on a
/// finite-difference Jacobian and an extrapolation-based error estimate.
struct Bdf2 {
    t: f64,
    y: Vec<f64>,
    f: Vec<f64>,
    prev: Option<(f64, Vec<f64>)>,
    h: f64,
    y_new: Vec<f64>,
}

impl Bdf2 {
    fn new(rhs: &mut Rhs, t: f64, y: &[f64]) -> Self {
        let mut f = vec![0.0; y.len()];
        rhs(t, y, &mut f);
        Self { t, y: y.to_vec(), f, prev: None, h: 0.0, y_new: y.to_vec() }
    }

    fn coefficients(&self, h: f64) -> (f64, f64, f64) {
        match &self.prev {
            Some((tp, _)) => {
                let w = h / (self.t - tp);
                let d = 1.0 + 2.0 * w;
                ((1.0 + w).powi(2) / d, -w * w / d, (1.0 + w) / d)
            }
            None => (1.0, 0.0, 1.0),
        }
    }

    fn predictor(&self, h: f64) -> Vec<f64> {
        match &self.prev {
            Some((tp, yp)) => {
                // quadratic through (tp, yp), (t, y) with slope f at t
                let hp = self.t - tp;
                (0..self.y.len())
                    .map(|i| {
                        let c = (yp[i] - self.y[i] + hp * self.f[i]) / (hp * hp);
                        self.y[i] + h * self.f[i] + c * h * h
                    })
                    .collect()
            }
            None => (0..self.y.len()).map(|i| self.y[i] + h * self.f[i]).collect(),
        }
    }

    fn solve(&self, rhs: &mut Rhs, h: f64, opts: &OdeOptions) -> Option<Vec<f64>> {
        let n = self.y.len();
        let (alpha, beta, gamma) = self.coefficients(h);
        let base: Vec<f64> = match &self.prev {
            Some((_, yp)) => (0..n).map(|i| alpha * self.y[i] + beta * yp[i]).collect(),
            None => self.y.clone(),
        };
        let t1 = self.t + h;
        let mut z = self.predictor(h);
        let mut fz = vec![0.0; n];
        rhs(t1, &z, &mut fz);

        // iteration matrix M = I - h*gamma*J
        let mut m = vec![vec![0.0; n]; n];
        let mut fp = vec![0.0; n];
        for j in 0..n {
            let dz = 1e-7 * z[j].abs().max(1e-3);
            let mut zp = z.clone();
            zp[j] += dz;
            rhs(t1, &zp, &mut fp);
            for i in 0..n {
                let jac = (fp[i] - fz[i]) / dz;
                m[i][j] = if i == j { 1.0 } else { 0.0 } - h * gamma * jac;
            }
        }
        let lu = lu_factor(m)?;
        for _ in 0..10 {
            let r: Vec<f64> = (0..n).map(|i| z[i] - base[i] - h * gamma * fz[i]).collect();
            let dz = lu_solve(&lu, &r);
            for i in 0..n {
                z[i] -= dz[i];
            }
            if !z.iter().all(|v| v.is_finite()) {
                return None;
            }
            rhs(t1, &z, &mut fz);
            if weighted_norm(&dz, &self.y, &z, opts) < 1e-3 {
                return Some(z);
            }
        }
        None
    }
}

impl Stepper for Bdf2 {
    fn order(&self) -> f64 {
        if self.prev.is_some() {
            3.0
        } else {
            2.0
        }
    }

    fn attempt(&mut self, rhs: &mut Rhs, h: f64, opts: &OdeOptions) -> f64 {
        self.h = h;
        match self.solve(rhs, h, opts) {
            Some(z) => {
                let pred = self.predictor(h);
                let scale = if self.prev.is_some() { 1.0 / 3.0 } else { 0.5 };
                let err: Vec<f64> = z.iter().zip(&pred).map(|(a, b)| scale * (a - b)).collect();
                let norm = weighted_norm(&err, &self.y, &z, opts);
                self.y_new = z;
                norm
            }
            None => f64::INFINITY,
        }
    }

    fn candidate(&self) -> &[f64] {
        &self.y_new
    }

    fn dense(&self, theta: f64) -> Vec<f64> {
        let h = self.h;
        let t = theta * h;
        match &self.prev {
            Some((tp, yp)) => {
                // Lagrange through (-hp, yp), (0, y), (h, y_new)
                let hp = self.t - tp;
                let lp = t * (t - h) / (hp * (hp + h));
                let l0 = (t + hp) * (t - h) / (-hp * h);
                let l1 = (t + hp) * t / ((h + hp) * h);
                (0..self.y.len())
                    .map(|i| lp * yp[i] + l0 * self.y[i] + l1 * self.y_new[i])
                    .collect()
            }
            None => (0..self.y.len())
                .map(|i| self.y[i] + theta * (self.y_new[i] - self.y[i]))
                .collect(),
        }
    }

    fn restep(&mut self, rhs: &mut Rhs, s: f64, opts: &OdeOptions) -> Vec<f64> {
        self.solve(rhs, s, opts).unwrap_or_else(|| self.dense(s / self.h))
    }

    fn commit(&mut self, rhs: &mut Rhs, h: f64) {
        let old_t = self.t;
        let old_y = std::mem::replace(&mut self.y, self.y_new.clone());
        self.prev = Some((old_t, old_y));
        self.t = old_t + h;
        rhs(self.t, &self.y, &mut self.f);
    }

    fn state(&self) -> (f64, &[f64]) {
        (self.t, &self.y)
    }

    fn derivative(&self) -> &[f64] {
        &self.f
    }
}

#[allow(clippy::needless_range_loop)]
fn lu_factor(mut a: Vec<Vec<f64>>) -> Option<(Vec<Vec<f64>>, Vec<usize>)> {
    let n = a.len();
    let mut piv: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[p][k] == 0.0 || !a[p][k].is_finite() {
            return None;
        }
        a.swap(k, p);
        piv.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            a[i][k] = f;
            for j in k + 1..n {
                a[i][j] -= f * a[k][j];
            }
        }
    }
    Some((a, piv))
}

fn lu_solve((a, piv): &(Vec<Vec<f64>>, Vec<usize>), b: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut x: Vec<f64> = piv.iter().map(|&p| b[p]).collect();
    for i in 0..n {
        for j in 0..i {
            x[i] -= a[i][j] * x[j];
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            x[i] -= a[i][j] * x[j];
        }
        x[i] /= a[i][i];
    }
    x
}

fn initial_step(y0: &[f64], f0: &[f64], span: f64, order: f64, opts: &OdeOptions) -> f64 {
    let sc: Vec<f64> = y0.iter().map(|y| opts.atol + opts.rtol * y.abs()).collect();
    let d0 = (y0.iter().zip(&sc).map(|(y, s)| (y / s).powi(2)).sum::<f64>() / y0.len() as f64).sqrt();
    let d1 = (f0.iter().zip(&sc).map(|(f, s)| (f / s).powi(2)).sum::<f64>() / y0.len() as f64).sqrt();
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h_tol = (0.01f64).powf(1.0 / order) / d1.max(1e-300);
    h.min(h_tol.max(1e-6 * span)).min(span.abs()).min(opts.h_max)
}

/// Integrates `y' = rhs(t, y)` from `t0` to `t_end` (or the first terminal event).
pub fn ode_solve_with_events<F>(
    mut rhs: F,
    y0: &[f64],
    t0: f64,
    t_end: f64,
    events: &[EventSpec<'_>],
    opts: &OdeOptions,
) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if t_end <= t0 {
        return Err(Error::domain("integration interval must satisfy t_end > t0"));
    }
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::domain("ODE tolerances must be positive"));
    }
    let rhs: &mut Rhs = &mut rhs;
    let mut stepper: Box<dyn Stepper> = match opts.method {
        OdeMethod::DormandPrince45 => Box::new(DormandPrince::new(rhs, t0, y0)),
        OdeMethod::Bdf2 => Box::new(Bdf2::new(rhs, t0, y0)),
    };
    let mut sol = OdeSolution {
        t: vec![t0],
        y: vec![y0.to_vec()],
        events: Vec::new(),
        status: OdeStatus::Completed,
        accepted: 0,
        rejected: 0,
        error_estimate: 0.0,
    };
    let mut g_prev: Vec<f64> = events.iter().map(|e| (e.g)(t0, y0)).collect();
    let span = t_end - t0;
    let mut h = match (opts.fixed_step, opts.h_init) {
        (Some(h), _) => h,
        (None, Some(h)) => h,
        (None, None) => initial_step(y0, stepper.derivative(), span, stepper.order(), opts),
    };
    let loc = SolverSettings { abs_tol: 1e-14, max_iterations: 200, ..SolverSettings::default() };

    while sol.accepted + sol.rejected < opts.max_steps {
        let (t, _) = stepper.state();
        let remaining = t_end - t;
        if remaining <= 1e-15 * t_end.abs().max(1.0) {
            return Ok(sol);
        }
        h = h.min(opts.h_max).min(remaining);
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t, h });
        }
        let err = stepper.attempt(rhs, h, opts);
        let accept = opts.fixed_step.is_some() || err <= 1.0;
        if !accept {
            sol.rejected += 1;
            let fac = if err.is_finite() { (0.9 * err.powf(-1.0 / stepper.order())).max(0.2) } else { 0.25 };
            h *= fac.min(0.9);
            continue;
        }

        let t1 = t + h;
        let y1 = stepper.candidate().to_vec();
        let y_scale = y1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if err.is_finite() {
            sol.error_estimate += err * (opts.atol + opts.rtol * y_scale);
        }
        let g_new: Vec<f64> = events.iter().map(|e| (e.g)(t1, &y1)).collect();
        // earliest crossing inside this step
        let mut first: Option<(usize, f64)> = None;
        let mut crossings = Vec::new();
        for (k, ev) in events.iter().enumerate() {
            if !ev.crossed(g_prev[k], g_new[k]) {
                continue;
            }
            let theta = find_root_bracketed(
                |th| (ev.g)(t + th * h, &stepper.dense(th)),
                0.0,
                1.0,
                &loc,
            )
            .unwrap_or(1.0);
            crossings.push((k, theta));
            if first.is_none_or(|(_, th)| theta < th) {
                first = Some((k, theta));
            }
        }
        let terminal = crossings
            .iter()
            .filter(|(k, _)| events[*k].terminal)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .copied();
        crossings.sort_by(|a, b| a.1.total_cmp(&b.1));
        for &(k, theta) in &crossings {
            if let Some((_, th_term)) = terminal {
                if theta > th_term {
                    break;
                }
                if events[k].terminal {
                    continue;
                }
            }
            sol.events.push(EventRecord { index: k, t: t + theta * h, y: stepper.dense(theta) });
        }

        if let Some((k, theta)) = terminal {
            let (s, y_ev) = polish_event(stepper.as_mut(), rhs, &events[k], t, theta * h, h, opts);
            sol.accepted += 1;
            sol.t.push(t + s);
            sol.y.push(y_ev.clone());
            sol.events.push(EventRecord { index: k, t: t + s, y: y_ev });
            sol.status = OdeStatus::Terminated { event: k };
            return Ok(sol);
        }

        stepper.commit(rhs, h);
        sol.accepted += 1;
        sol.t.push(t1);
        sol.y.push(y1);
        g_prev = g_new;
        if opts.fixed_step.is_none() {
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-1.0 / stepper.order())).clamp(0.2, 5.0) };
            h *= fac;
        }
    }
    Err(Error::Tolerance(format!("ODE integration exceeded {} steps", opts.max_steps)))
}

/// Refines a terminal event by secant iteration on genuine steps of length
/// `s` from the start of the current step.
fn polish_event(
    stepper: &mut dyn Stepper,
    rhs: &mut Rhs,
    ev: &EventSpec<'_>,
    t: f64,
    s0: f64,
    h: f64,
    opts: &OdeOptions,
) -> (f64, Vec<f64>) {
    let mut phi = |stepper: &mut dyn Stepper, s: f64| {
        let y = stepper.restep(rhs, s, opts);
        ((ev.g)(t + s, &y), y)
    };
    let s_min = 1e-15 * h.max(1e-300);
    let mut sa = s0.clamp(s_min, h);
    let (mut ga, mut ya) = phi(stepper, sa);
    if ga.abs() <= opts.event_tol {
        return (sa, ya);
    }
    let mut sb = (sa * (1.0 - 1e-6)).max(s_min);
    if sb == sa {
        sb = (sa + 1e-6 * h).min(h);
    }
    let (mut gb, mut yb) = phi(stepper, sb);
    for _ in 0..8 {
        if gb.abs() < ga.abs() {
            std::mem::swap(&mut sa, &mut sb);
            std::mem::swap(&mut ga, &mut gb);
            std::mem::swap(&mut ya, &mut yb);
        }
        if ga.abs() <= opts.event_tol || gb == ga {
            break;
        }
        let s_next = (sa - ga * (sa - sb) / (ga - gb)).clamp(s_min, h);
        sb = sa;
        gb = ga;
        yb = std::mem::take(&mut ya);
        sa = s_next;
        let (g, y) = phi(stepper, sa);
        ga = g;
        ya = y;
    }
    if gb.abs() < ga.abs() {
        (sb, yb)
    } else {
        (sa, ya)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> OdeOptions {
        OdeOptions::default().tolerances(1e-10, 1e-12)
    }

    #[test]
    fn constant_rate_hits_event_at_one() {
        let ev = [EventSpec::new(|_, y| y[0] - 1.0).terminal()];
        let sol = ode_solve_with_events(|_, _, d| d[0] = 1.0, &[0.0], 0.0, 10.0, &ev, &opts()).unwrap();
        let e = sol.terminal_event().unwrap();
        assert!((e.t - 1.0).abs() < 1e-12);
        assert!((e.y[0] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn exponential_decay_event() {
        let target = (-1f64).exp();
        let ev = [EventSpec::new(move |_, y| y[0] - target).direction(Direction::Falling).terminal()];
        let sol = ode_solve_with_events(|_, y, d| d[0] = -y[0], &[1.0], 0.0, 5.0, &ev, &opts()).unwrap();
        let e = sol.terminal_event().unwrap();
        assert!((e.t - 1.0).abs() < 1e-9, "t = {}", e.t);
    }

    #[test]
    fn direction_filters_crossings() {
        // y = sin t: rising zero at 2 pi, falling at pi
        let ev = [
            EventSpec::new(|_, y| y[0]).direction(Direction::Rising),
            EventSpec::new(|_, y| y[0]).direction(Direction::Falling),
        ];
        let sol = ode_solve_with_events(
            |_, y, d| {
                d[0] = y[1];
                d[1] = -y[0];
            },
            &[0.0, 1.0],
            0.0,
            7.0,
            &ev,
            &opts(),
        )
        .unwrap();
        let rising: Vec<_> = sol.events.iter().filter(|e| e.index == 0).collect();
        let falling: Vec<_> = sol.events.iter().filter(|e| e.index == 1).collect();
        assert_eq!(rising.len(), 1);
        assert_eq!(falling.len(), 1);
        assert!((rising[0].t - 2.0 * std::f64::consts::PI).abs() < 1e-7);
        assert!((falling[0].t - std::f64::consts::PI).abs() < 1e-7);
        assert_eq!(sol.status, OdeStatus::Completed);
    }

    #[test]
    fn dormand_prince_is_fifth_order() {
        let err_at = |h: f64| {
            let o = OdeOptions { fixed_step: Some(h), ..OdeOptions::default() };
            let sol = ode_solve_with_events(|t, y, d| d[0] = y[0] * t.cos(), &[1.0], 0.0, 2.0, &[], &o).unwrap();
            (sol.last().1[0] - 2f64.sin().exp()).abs()
        };
        let e1 = err_at(0.1);
        let e2 = err_at(0.05);
        let order = (e1 / e2).log2();
        assert!(order >= 4.0, "observed order {order}");
    }

    #[test]
    fn bdf2_handles_stiff_relaxation() {
        let o = OdeOptions { method: OdeMethod::Bdf2, ..OdeOptions::default() }.tolerances(1e-6, 1e-8);
        let rhs = |t: f64, y: &[f64], d: &mut [f64]| d[0] = -1e4 * (y[0] - t.cos());
        let sol = ode_solve_with_events(rhs, &[0.0], 0.0, 1.0, &[], &o).unwrap();
        let (_, y) = sol.last();
        // slow manifold: y ~ cos t + 1e-4 sin t
        assert!((y[0] - (1f64.cos() + 1e-4 * 1f64.sin())).abs() < 1e-4);
        assert!(sol.accepted < 2_000, "{} steps", sol.accepted);
    }

    #[test]
    fn bdf2_event_localization() {
        let o = OdeOptions { method: OdeMethod::Bdf2, ..OdeOptions::default() }.tolerances(1e-9, 1e-11);
        let ev = [EventSpec::new(|_, y| y[0] - 1.0).terminal()];
        let sol = ode_solve_with_events(|_, y, d| d[0] = y[0], &[0.5], 0.0, 5.0, &ev, &o).unwrap();
        let e = sol.terminal_event().unwrap();
        assert!((e.t - 2f64.ln()).abs() < 1e-4);
        assert!((e.y[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_empty_interval() {
        assert!(ode_solve_with_events(|_, _, d| d[0] = 1.0, &[0.0], 1.0, 1.0, &[], &opts()).is_err());
    }
}
