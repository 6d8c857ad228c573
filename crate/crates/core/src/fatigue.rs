//! Attack with fatigue: after the attack the power decays exponentially from
//! a peak `P_max` toward a sustainable floor `P_s` at rate `μ`.
//!
//! For a given attack position the budget and the arrival condition fix
//! `(P_max, t_f)`; this 2×2 system is solved by damped Newton with an analytic
//! Jacobian, falling back to a bracketed 1-D solve. The attack position is
//! then chosen by a 1-D search. An attack whose rider arrives after the
//! peloton (`t_f > 1`) has been caught and counts as failed, as in [`crate::flat`].

use std::cell::RefCell;

use crate::crash::exposure_simple;
use crate::flat::{Branch, StrategyProblem};
use crate::model::decay_integral;
use crate::numerics::{find_root_bracketed, integrate_adaptive, minimize_scalar, SolverSettings};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FatigueParams {
    pub p_max: f64,
    pub p_sustain: f64,
    pub p_lurk: f64,
    pub mu: f64,
    pub attack_time: f64,
}

impl FatigueParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_sustain >= 0.0 && self.p_max >= self.p_sustain && self.p_max.is_finite()) {
            return Err(Error::domain(format!(
                "powers must satisfy p_max >= p_sustain >= 0, got {} and {}",
                self.p_max, self.p_sustain
            )));
        }
        if !(self.p_lurk >= 0.0) {
            return Err(Error::domain(format!("lurking power must be non-negative, got {}", self.p_lurk)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::domain(format!("fatigue rate must be non-negative, got {}", self.mu)));
        }
        if !(self.attack_time >= 0.0) {
            return Err(Error::domain(format!("attack time must be non-negative, got {}", self.attack_time)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FatigueResult {
    pub attack_position: f64,
    pub peak_power: f64,
    pub finish_time: f64,
    pub time_gap: f64,
    pub exposure: f64,
    pub objective: f64,
    pub branch: Branch,
    pub converged: bool,
    /// Newton iterations of the final inner solve.
    pub iterations: usize,
    pub energy_residual: f64,
    pub position_residual: f64,
}

pub fn power_at(t: f64, params: &FatigueParams) -> f64 {
    if t < params.attack_time {
        params.p_lurk
    } else {
        (params.p_max - params.p_sustain) * (-params.mu * (t - params.attack_time)).exp() + params.p_sustain
    }
}

/// Energy spent by `t_f` when attacking at `x_a = t_a`.
pub fn total_energy(x_a: f64, t_f: f64, params: &FatigueParams) -> Result<f64> {
    if !(x_a >= 0.0 && t_f >= x_a) {
        return Err(Error::domain(format!("need 0 <= x_a <= t_f, got x_a = {x_a}, t_f = {t_f}")));
    }
    let tau = t_f - x_a;
    Ok(params.p_lurk * x_a
        + params.p_sustain * tau
        + decay_integral(params.mu, tau) * (params.p_max - params.p_sustain))
}

/// Peak power that spends exactly `energy` by `t_f`.
pub fn p_max_from_budget(energy: f64, x_a: f64, t_f: f64, p_sustain: f64, p_lurk: f64, mu: f64) -> Result<f64> {
    if !(t_f > x_a && x_a >= 0.0) {
        return Err(Error::domain(format!("need 0 <= x_a < t_f, got x_a = {x_a}, t_f = {t_f}")));
    }
    let tau = t_f - x_a;
    let surplus = energy - p_lurk * x_a - p_sustain * tau;
    if surplus < 0.0 {
        return Err(Error::Infeasible(format!(
            "budget {energy} is below the sustainable ride to t_f = {t_f} (burst energy {surplus})"
        )));
    }
    Ok(p_sustain + surplus / decay_integral(mu, tau))
}

fn quad_settings() -> SolverSettings {
    SolverSettings::default().with_abs_tol(1e-13).with_rel_tol(1e-13)
}

/// Distance covered `τ` after the attack, with burst amplitude `burst = P_max - P_s`.
fn distance_after(tau: f64, burst: f64, p_sustain: f64, mu: f64, cd_front: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Ok(0.0);
    }
    let scale = cd_front.cbrt().recip();
    if mu == 0.0 || burst == 0.0 {
        return Ok(scale * (p_sustain + burst).cbrt() * tau);
    }
    let q = integrate_adaptive(|s| (p_sustain + burst * (-mu * s).exp()).cbrt(), 0.0, tau, &quad_settings())?;
    Ok(scale * q.value)
}

/// `∂x/∂P_max` at `τ` after the attack.
fn distance_sensitivity(tau: f64, burst: f64, p_sustain: f64, mu: f64, cd_front: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Ok(0.0);
    }
    let scale = cd_front.cbrt().recip() / 3.0;
    if mu == 0.0 {
        return Ok(scale * (p_sustain + burst).powf(-2.0 / 3.0) * tau);
    }
    let q = integrate_adaptive(
        |s| {
            let e = (-mu * s).exp();
            (p_sustain + burst * e).powf(-2.0 / 3.0) * e
        },
        0.0,
        tau,
        &quad_settings(),
    )?;
    Ok(scale * q.value)
}

pub fn position_after_attack(t: f64, params: &FatigueParams, cd_front: f64) -> Result<f64> {
    params.validate()?;
    if t < params.attack_time {
        return Err(Error::domain(format!("t = {t} precedes the attack at {}", params.attack_time)));
    }
    let d = distance_after(
        t - params.attack_time,
        params.p_max - params.p_sustain,
        params.p_sustain,
        params.mu,
        cd_front,
    )?;
    Ok(params.attack_time + d)
}

/// Time at which the rider reaches the finish when attacking at `x_a` with peak `P_max`.
pub fn finish_time(x_a: f64, p_max: f64, params: &FatigueParams, cd_front: f64) -> Result<f64> {
    let p = FatigueParams { p_max, attack_time: x_a, ..*params };
    p.validate()?;
    if !(cd_front > 0.0) {
        return Err(Error::domain("cd_front must be positive"));
    }
    if x_a >= 1.0 {
        return Ok(x_a);
    }
    let remaining = 1.0 - x_a;
    let burst = p.p_max - p.p_sustain;
    let reach = |tau: f64| distance_after(tau, burst, p.p_sustain, p.mu, cd_front).map(|d| d - remaining);
    let floor_speed = (p.p_sustain / cd_front).cbrt();
    let hi = if floor_speed > 0.0 {
        // speed never drops below the floor
        remaining / floor_speed
    } else {
        // distance saturates at (P_max/C)^{1/3} · 3/μ
        let reachable = if p.mu > 0.0 { 3.0 * (burst / cd_front).cbrt() / p.mu } else { f64::INFINITY };
        if reachable <= remaining {
            return Err(Error::NeverFinishes(format!("distance saturates at {reachable} < {remaining}")));
        }
        let mut hi = remaining / (p.p_max / cd_front).cbrt();
        while reach(hi)? < 0.0 {
            hi *= 2.0;
            if hi > 1e9 {
                return Err(Error::NeverFinishes("no finish within the search horizon".into()));
            }
        }
        hi
    };
    let s = SolverSettings::default().with_abs_tol(1e-13);
    let err = std::cell::Cell::new(None);
    let tau = find_root_bracketed(
        |tau| {
            reach(tau).unwrap_or_else(|e| {
                err.set(Some(e));
                f64::NAN
            })
        },
        0.0,
        hi,
        &s,
    )?;
    if let Some(e) = err.take() {
        return Err(e);
    }
    Ok(x_a + tau)
}

/// `(P_max, t_f)` meeting the budget and the arrival condition.
#[derive(Clone, Copy, Debug, PartialEq)]
struct InnerSolution {
    p_max: f64,
    t_f: f64,
    iterations: usize,
    energy_residual: f64,
    position_residual: f64,
}

#[derive(Clone, Copy, Debug)]
struct Rider {
    energy: f64,
    p_sustain: f64,
    p_lurk: f64,
    mu: f64,
    cd_front: f64,
}

impl Rider {
    fn residuals(&self, x_a: f64, p_max: f64, t_f: f64) -> Result<(f64, f64)> {
        let tau = t_f - x_a;
        let burst = p_max - self.p_sustain;
        let f1 = self.p_lurk * x_a + self.p_sustain * tau + burst * decay_integral(self.mu, tau) - self.energy;
        let f2 = x_a + distance_after(tau, burst, self.p_sustain, self.mu, self.cd_front)? - 1.0;
        Ok((f1, f2))
    }

    fn newton(&self, x_a: f64) -> Result<Option<InnerSolution>> {
        // constant-power solution as the starting point
        let rest = 1.0 - x_a;
        let spare = self.energy - self.p_lurk * x_a;
        let tau0 = rest.powf(1.5) * (self.cd_front / spare).sqrt();
        let mut t_f = x_a + tau0;
        let mut p_max = match p_max_from_budget(self.energy, x_a, t_f, self.p_sustain, self.p_lurk, self.mu) {
            Ok(p) => p,
            Err(_) => return Ok(None),
        };
        let (mut f1, mut f2) = self.residuals(x_a, p_max, t_f)?;
        let mut norm = f1.hypot(f2);
        for it in 1..=60 {
            let tau = t_f - x_a;
            let burst = p_max - self.p_sustain;
            let decay = (-self.mu * tau).exp();
            let j11 = decay_integral(self.mu, tau);
            let j12 = self.p_sustain + burst * decay;
            let j21 = distance_sensitivity(tau, burst, self.p_sustain, self.mu, self.cd_front)?;
            let j22 = (j12 / self.cd_front).cbrt();
            let det = j11 * j22 - j12 * j21;
            if !(det.is_finite() && det != 0.0) {
                return Ok(None);
            }
            let dp = (f1 * j22 - j12 * f2) / det;
            let dt = (j11 * f2 - j21 * f1) / det;
            let mut lambda = 1.0;
            loop {
                let p_new = p_max - lambda * dp;
                let t_new = t_f - lambda * dt;
                if p_new >= self.p_sustain && t_new > x_a {
                    let (g1, g2) = self.residuals(x_a, p_new, t_new)?;
                    let n = g1.hypot(g2);
                    if n < norm || n < 1e-15 {
                        p_max = p_new;
                        t_f = t_new;
                        f1 = g1;
                        f2 = g2;
                        norm = n;
                        break;
                    }
                }
                lambda *= 0.5;
                if lambda < 1e-10 {
                    return Ok(None);
                }
            }
            if f1.abs() < 1e-13 * self.energy.max(1.0) && f2.abs() < 1e-13 {
                return Ok(Some(InnerSolution {
                    p_max,
                    t_f,
                    iterations: it,
                    energy_residual: f1,
                    position_residual: f2,
                }));
            }
        }
        Ok(None)
    }

    /// Bracketed solve in `t_f` with `P_max` eliminated through the budget.
    fn bracketed(&self, x_a: f64) -> Result<InnerSolution> {
        let spare = self.energy - self.p_lurk * x_a;
        let horizon = if self.p_sustain > 0.0 { x_a + spare / self.p_sustain } else { x_a + 1e6 };
        let err = RefCell::new(None);
        let g = |t: f64| -> f64 {
            let run = || -> Result<f64> {
                let p = p_max_from_budget(self.energy, x_a, t, self.p_sustain, self.p_lurk, self.mu)?;
                Ok(self.residuals(x_a, p, t)?.1)
            };
            run().unwrap_or_else(|e| {
                err.borrow_mut().get_or_insert(e);
                f64::NAN
            })
        };
        let lo = x_a + 1e-12 * (1.0 - x_a).max(1e-3);
        let hi = horizon * (1.0 - 1e-15);
        if !(g(hi) >= 0.0) {
            return Err(Error::Infeasible(format!("budget cannot carry the rider to the finish from x_a = {x_a}")));
        }
        let s = SolverSettings::default().with_abs_tol(1e-14);
        let t_f = find_root_bracketed(g, lo, hi, &s)?;
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        let p_max = p_max_from_budget(self.energy, x_a, t_f, self.p_sustain, self.p_lurk, self.mu)?;
        let (f1, f2) = self.residuals(x_a, p_max, t_f)?;
        Ok(InnerSolution { p_max, t_f, iterations: 0, energy_residual: f1, position_residual: f2 })
    }

    fn solve(&self, x_a: f64) -> Result<InnerSolution> {
        if self.energy - self.p_lurk * x_a <= 0.0 {
            return Err(Error::Infeasible(format!("budget exhausted before the attack at {x_a}")));
        }
        match self.newton(x_a)? {
            Some(s) => Ok(s),
            None => self.bracketed(x_a),
        }
    }
}

/// Minimises `ℳ = -β(1 - t_f) + (1-β)𝒫(x_a)` over the attack position, with
/// the peak power and finish time fixed by the budget and the arrival condition.
pub fn optimize_fatigue(problem: &StrategyProblem, mu: f64, p_sustain: f64) -> Result<FatigueResult> {
    problem.validate()?;
    FatigueParams { p_max: p_sustain, p_sustain, p_lurk: problem.cd_lurk, mu, attack_time: 0.0 }.validate()?;
    let rider = Rider { energy: problem.energy_budget, p_sustain, p_lurk: problem.cd_lurk, mu, cd_front: problem.cd_front };
    let beta = problem.risk_index;
    let exposure = |x: f64| exposure_simple(x, problem.position, &problem.crash);
    let plateau = (1.0 - beta) * exposure(1.0)?;
    let hard_error: RefCell<Option<Error>> = RefCell::new(None);

    // None for failed or infeasible attacks
    let attempt = |x: f64| -> Option<InnerSolution> {
        if x >= 1.0 {
            return None;
        }
        match rider.solve(x) {
            Ok(s) if s.t_f <= 1.0 => Some(s),
            Ok(_) | Err(Error::Infeasible(_)) => None,
            Err(e) => {
                hard_error.borrow_mut().get_or_insert(e);
                None
            }
        }
    };
    let objective = |x: f64| -> f64 {
        match attempt(x) {
            Some(s) => -beta * (1.0 - s.t_f) + (1.0 - beta) * exposure(x).unwrap_or(f64::NAN),
            None => plateau,
        }
    };

    let settings = SolverSettings::default();
    let n = settings.grid_points;
    let grid: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
    let wins: Vec<bool> = grid.iter().map(|&x| attempt(x).is_some()).collect();
    if let Some(e) = hard_error.borrow_mut().take() {
        return Err(e);
    }

    let Some(first) = wins.iter().position(|&w| w) else {
        return Ok(FatigueResult {
            attack_position: 1.0,
            peak_power: p_sustain,
            finish_time: 1.0,
            time_gap: 0.0,
            exposure: exposure(1.0)?,
            objective: plateau,
            branch: Branch::NoWin,
            converged: true,
            iterations: 0,
            energy_residual: 0.0,
            position_residual: 0.0,
        });
    };

    // earliest attack that still beats or ties the peloton
    let boundary = if first == 0 {
        0.0
    } else {
        let (mut lo, mut hi) = (grid[first - 1], grid[first]);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if attempt(mid).is_some() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let boundary_objective = if first == 0 {
        objective(0.0)
    } else {
        // arrival with the peloton: no gap
        (1.0 - beta) * exposure(boundary)?
    };

    let (x_int, m_int) = minimize_scalar(&objective, boundary, 1.0, &settings);
    if let Some(e) = hard_error.borrow_mut().take() {
        return Err(e);
    }

    let (x_best, branch) = if m_int < boundary_objective - 1e-12 && x_int > boundary {
        (x_int, Branch::Interior)
    } else {
        (boundary, Branch::Boundary)
    };
    let sol = rider.solve(x_best)?;
    let on_boundary_tie = branch == Branch::Boundary && first > 0;
    let time_gap = if on_boundary_tie { 0.0 } else { (1.0 - sol.t_f).max(0.0) };
    let converged = sol.energy_residual.abs() < 1e-8 && sol.position_residual.abs() < 1e-8;
    Ok(FatigueResult {
        attack_position: x_best,
        peak_power: sol.p_max,
        finish_time: if on_boundary_tie { 1.0 } else { sol.t_f },
        time_gap,
        exposure: exposure(x_best)?,
        objective: -beta * time_gap + (1.0 - beta) * exposure(x_best)?,
        branch,
        converged,
        iterations: sol.iterations,
        energy_residual: sol.energy_residual,
        position_residual: sol.position_residual,
    })
}
