//! Constant-power attack on a flat course in the quasi-steady limit.
//!
//! The rider lurks at drafting position `i` with power `C_{d,i}` until `x_a`,
//! then rides solo at constant power `P_a` and speed `(P_a/C_{d,1})^{1/3}`,
//! spending exactly the budget `E*` by the finish. The peloton finishes at
//! `t = 1`. An attack slower than the peloton fails: the rider is swept up,
//! finishes with the group and keeps its drafting position for the whole race.

use crate::crash::{exposure_simple, CrashModel};
use crate::numerics::solve_cubic_real;
use crate::{Error, Result};

/// Ties in the objective closer than this go to the boundary branch.
const TIE_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct StrategyProblem {
    /// Energy budget `E*`.
    pub energy_budget: f64,
    /// Risk index `β`; 1 only cares about the winning margin, 0 only about crashes.
    pub risk_index: f64,
    /// Drafting position `i` before the attack.
    pub position: f64,
    /// Solo drag `C_{d,1}`.
    pub cd_front: f64,
    /// Drag at position `i`, equal to the lurking power on the flat.
    pub cd_lurk: f64,
    pub crash: CrashModel,
}

impl Default for StrategyProblem {
    fn default() -> Self {
        Self {
            energy_budget: 1.2,
            risk_index: 0.5,
            position: 5.0,
            cd_front: 1.43,
            cd_lurk: 0.46,
            crash: CrashModel::default(),
        }
    }
}

impl StrategyProblem {
    pub fn new(energy_budget: f64, risk_index: f64) -> Self {
        Self { energy_budget, risk_index, ..Self::default() }
    }

    pub fn with_energy(&self, energy_budget: f64) -> Self {
        Self { energy_budget, ..self.clone() }
    }

    pub fn with_risk(&self, risk_index: f64) -> Self {
        Self { risk_index, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.risk_index) {
            return Err(Error::domain(format!("risk index must lie in [0, 1], got {}", self.risk_index)));
        }
        if !(self.cd_lurk > 0.0 && self.cd_front > self.cd_lurk && self.cd_front.is_finite()) {
            return Err(Error::domain(format!(
                "drag values must satisfy cd_front > cd_lurk > 0, got {} and {}",
                self.cd_front, self.cd_lurk
            )));
        }
        if !(self.energy_budget >= 0.0 && self.energy_budget.is_finite()) {
            return Err(Error::domain(format!("energy budget must be non-negative, got {}", self.energy_budget)));
        }
        if !(self.position >= 1.0) {
            return Err(Error::domain(format!("drafting position must be >= 1, got {}", self.position)));
        }
        self.crash.validate()?;
        if self.crash.constant_intensity().is_none() {
            return Err(Error::domain("the flat strategy needs a homogeneous crash intensity"));
        }
        if self.exposure_slope()? < 0.0 {
            return Err(Error::domain("crash exposure must not decrease when the attack is delayed"));
        }
        Ok(())
    }

    /// Exposure at the front for the whole race.
    fn exposure_front(&self) -> Result<f64> {
        exposure_simple(0.0, self.position, &self.crash)
    }

    /// Exposure for a rider who never leaves position `i`.
    fn exposure_lurking(&self) -> Result<f64> {
        exposure_simple(1.0, self.position, &self.crash)
    }

    /// `d𝒫/dx_a`, constant because exposure is affine in the attack position.
    fn exposure_slope(&self) -> Result<f64> {
        Ok(self.exposure_lurking()? - self.exposure_front()?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// Earliest feasible attack, at the minimum attack power.
    Boundary,
    /// Stationary point of the objective.
    Interior,
    /// The budget cannot beat the peloton; the rider stays in the group.
    NoWin,
}

impl Branch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Boundary => "boundary",
            Branch::Interior => "interior",
            Branch::NoWin => "no_win",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrategyResult {
    pub attack_position: f64,
    pub attack_power: f64,
    pub time_gap: f64,
    pub exposure: f64,
    pub objective: f64,
    pub branch: Branch,
}

/// Stationary point of the objective in terms of `η = ((1-x_a)/(E*-C_{d,i}x_a))^{1/2}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InteriorOptimum {
    pub eta: f64,
    pub attack_position: f64,
    pub attack_power: f64,
}

/// `C_{d,1}^{1/3} P_a^{2/3}`: energy per unit distance of a solo ride at `P_a`.
fn solo_cost(p_a: f64, problem: &StrategyProblem) -> f64 {
    problem.cd_front.cbrt() * p_a.powf(2.0 / 3.0)
}

/// Earliest position from which power `P_a` exhausts the budget exactly at the
/// finish. Values above one mean the budget cannot sustain a winning attack.
pub fn earliest_attack_position(p_a: f64, problem: &StrategyProblem) -> Result<f64> {
    if !(p_a > problem.cd_front) {
        return Err(Error::InfeasibleAttack { power: p_a, min: problem.cd_front });
    }
    let c = solo_cost(p_a, problem);
    Ok(((c - problem.energy_budget) / (c - problem.cd_lurk)).max(0.0))
}

/// Earliest attack at the minimum useful power `C_{d,1}`.
pub fn min_attack_position(problem: &StrategyProblem) -> f64 {
    let (c1, ci) = (problem.cd_front, problem.cd_lurk);
    ((c1 - problem.energy_budget) / (c1 - ci)).max(0.0)
}

/// Power that spends the whole budget when attacking at `x_a`.
pub fn attack_power(x_a: f64, problem: &StrategyProblem) -> Result<f64> {
    if !(0.0..1.0).contains(&x_a) {
        return Err(Error::domain(format!("attack position must lie in [0, 1), got {x_a}")));
    }
    let surplus = problem.energy_budget - problem.cd_lurk * x_a;
    if !(surplus > 0.0) {
        return Err(Error::InfeasibleAttack { power: 0.0, min: problem.cd_front });
    }
    let p = (surplus / (problem.cd_front.cbrt() * (1.0 - x_a))).powf(1.5);
    if x_a < min_attack_position(problem) * (1.0 - 1e-14) {
        return Err(Error::InfeasibleAttack { power: p, min: problem.cd_front });
    }
    Ok(p)
}

/// Winning margin when attacking at power `P_a` from the earliest position.
/// Zero for powers that cannot outrun the peloton or budgets that cannot sustain them.
pub fn time_gap_from_power(p_a: f64, problem: &StrategyProblem) -> f64 {
    let Ok(x_a) = earliest_attack_position(p_a, problem) else { return 0.0 };
    if x_a >= 1.0 {
        return 0.0;
    }
    let slower = (problem.cd_front / p_a).cbrt();
    ((1.0 - x_a) * (1.0 - slower)).max(0.0)
}

/// Winning margin when attacking at `x_a` with the whole budget; zero for a
/// failed attack before `x_a^min`.
pub fn time_gap_from_position(x_a: f64, problem: &StrategyProblem) -> Result<f64> {
    if !(0.0..=1.0).contains(&x_a) {
        return Err(Error::domain(format!("attack position must lie in [0, 1], got {x_a}")));
    }
    let surplus = problem.energy_budget - problem.cd_lurk * x_a;
    if !(surplus > 0.0) {
        return Err(Error::domain(format!(
            "budget {} does not cover lurking to x_a = {x_a}",
            problem.energy_budget
        )));
    }
    let x_min = min_attack_position(problem);
    // at x_a^min > 0 the rider only matches the peloton
    if x_a < x_min || (x_a == x_min && x_min > 0.0) {
        return Ok(0.0);
    }
    let rest = 1.0 - x_a;
    Ok((rest - rest.powf(1.5) * (problem.cd_front / surplus).sqrt()).max(0.0))
}

/// Energy spent by lurking to `x_a` and then riding solo at `P_a`.
pub fn energy_spent(x_a: f64, p_a: f64, problem: &StrategyProblem) -> f64 {
    let v_a = (p_a / problem.cd_front).cbrt();
    problem.cd_lurk * x_a + p_a * (1.0 - x_a) / v_a
}

fn failed_attack(x_a: f64, problem: &StrategyProblem) -> bool {
    problem.energy_budget <= problem.cd_lurk * x_a || x_a < min_attack_position(problem)
}

/// Risk-weighted objective `ℳ = -β Δt + (1-β) 𝒫`; smaller is better.
///
/// Attacks before `x_a^min` fail and the rider spends the race at position `i`,
/// so the objective is flat there.
pub fn objective(x_a: f64, problem: &StrategyProblem) -> Result<f64> {
    if !(0.0..=1.0).contains(&x_a) {
        return Err(Error::domain(format!("attack position must lie in [0, 1], got {x_a}")));
    }
    let beta = problem.risk_index;
    if failed_attack(x_a, problem) {
        return Ok((1.0 - beta) * problem.exposure_lurking()?);
    }
    let gap = time_gap_from_position(x_a, problem)?;
    Ok(-beta * gap + (1.0 - beta) * exposure_simple(x_a, problem.position, &problem.crash)?)
}

/// Stationary point of the objective inside `(max(x_a^min, 0), 1)`, if any.
pub fn interior_optimum(problem: &StrategyProblem) -> Result<Option<InteriorOptimum>> {
    problem.validate()?;
    let beta = problem.risk_index;
    if beta <= 0.0 {
        return Ok(None);
    }
    let (c1, ci, e) = (problem.cd_front, problem.cd_lurk, problem.energy_budget);
    let slope = problem.exposure_slope()?;
    let sq = c1.sqrt();
    let roots = solve_cubic_real(0.5 * beta * sq * ci, -1.5 * beta * sq, beta + (1.0 - beta) * slope)?;
    let lo = min_attack_position(problem);
    let mut best: Option<(f64, InteriorOptimum)> = None;
    for eta in roots.into_iter().filter(|&r| r > 0.0) {
        let denom = 1.0 - ci * eta * eta;
        if denom <= 0.0 {
            continue;
        }
        let x = (1.0 - e * eta * eta) / denom;
        if !(x > lo && x < 1.0) {
            continue;
        }
        let m = objective(x, problem)?;
        let cand = InteriorOptimum { eta, attack_position: x, attack_power: 1.0 / (sq * eta.powi(3)) };
        if best.is_none_or(|(bm, _)| m < bm) {
            best = Some((m, cand));
        }
    }
    Ok(best.map(|(_, c)| c))
}

/// Global minimiser of the objective: the better of the earliest feasible
/// attack and the interior stationary point.
pub fn optimal_attack(problem: &StrategyProblem) -> Result<StrategyResult> {
    problem.validate()?;
    let beta = problem.risk_index;
    if problem.energy_budget <= problem.cd_lurk {
        let exposure = problem.exposure_lurking()?;
        return Ok(StrategyResult {
            attack_position: 1.0,
            attack_power: problem.cd_lurk,
            time_gap: 0.0,
            exposure,
            objective: (1.0 - beta) * exposure,
            branch: Branch::NoWin,
        });
    }
    let evaluate = |x: f64, p: f64, branch: Branch| -> Result<StrategyResult> {
        Ok(StrategyResult {
            attack_position: x,
            attack_power: p,
            time_gap: time_gap_from_position(x, problem)?,
            exposure: exposure_simple(x, problem.position, &problem.crash)?,
            objective: objective(x, problem)?,
            branch,
        })
    };
    let x_min = min_attack_position(problem);
    let p_min = if x_min > 0.0 { problem.cd_front } else { attack_power(0.0, problem)? };
    let boundary = evaluate(x_min, p_min, Branch::Boundary)?;
    match interior_optimum(problem)? {
        Some(opt) => {
            let interior = evaluate(opt.attack_position, opt.attack_power, Branch::Interior)?;
            if interior.objective < boundary.objective - TIE_TOL {
                Ok(interior)
            } else {
                Ok(boundary)
            }
        }
        None => Ok(boundary),
    }
}

/// Risk index above which the interior optimum beats the earliest attack.
pub fn critical_risk(problem: &StrategyProblem) -> Result<f64> {
    problem.validate()?;
    let a = problem.exposure_slope()?;
    if a == 0.0 {
        return Ok(0.0);
    }
    Ok(a / (a + 0.5 * (1.0 - problem.cd_lurk / problem.cd_front)))
}

/// Smallest budget that can win at risk index `β`.
pub fn minimum_winning_energy(beta: f64, problem: &StrategyProblem) -> Result<f64> {
    let critical = critical_risk(problem)?;
    Ok(if beta > critical { problem.cd_lurk } else { problem.cd_front })
}

/// Smallest risk index that can win with budget `E*`; `None` if no risk suffices.
pub fn minimum_winning_risk(energy: f64, problem: &StrategyProblem) -> Result<Option<f64>> {
    let critical = critical_risk(problem)?;
    Ok(if energy >= problem.cd_front {
        Some(0.0)
    } else if energy > problem.cd_lurk {
        Some(critical)
    } else {
        None
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WinFrontier {
    pub critical_risk: f64,
    /// `(β, E_min(β))`.
    pub energy_min: Vec<(f64, f64)>,
    /// `(E*, β_min(E*))`.
    pub risk_min: Vec<(f64, Option<f64>)>,
}

/// Both frontier curves on the requested grids.
pub fn win_frontier(problem: &StrategyProblem, betas: &[f64], energies: &[f64]) -> Result<WinFrontier> {
    let critical = critical_risk(problem)?;
    Ok(WinFrontier {
        critical_risk: critical,
        energy_min: betas.iter().map(|&b| Ok((b, minimum_winning_energy(b, problem)?))).collect::<Result<_>>()?,
        risk_min: energies.iter().map(|&e| Ok((e, minimum_winning_risk(e, problem)?))).collect::<Result<_>>()?,
    })
}
