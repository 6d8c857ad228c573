//! Race simulation over a course with elevation.
//!
//! The peloton rides at unit power with unit drag and unit mass. Its motion
//! obeys `ε ẍ = P/ẋ − ẋ² − γ sin θ(x)`. A tracked rider sits inside it at
//! lurking power until the attack, then rides alone with
//! `ε m ẍ = P/ẋ − C_{d,1} ẋ² − m γ sin θ(x)`. With `ε = 0`, the speed is the
//! positive root of the balance cubic, and the race is marched in distance.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::model::{drag_dimensionless, PelotonConfig, PowerProfile, ScaleSet};
use crate::numerics::{
    ode_solve_with_events, solve_cubic_real, Direction, EventSpec, OdeMethod, OdeOptions, OdeSolution,
    OdeStatus,
};
use crate::{Error, Result};

/// One term `A sin(2π f x + φ)` of a closed-form elevation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl Sinusoid {
    pub fn new(amplitude: f64, frequency: f64, phase: f64) -> Self {
        Self { amplitude, frequency, phase }
    }

    fn height(&self, x: f64) -> f64 {
        self.amplitude * (2.0 * PI * self.frequency * x + self.phase).sin()
    }

    fn slope(&self, x: f64) -> f64 {
        2.0 * PI * self.frequency * self.amplitude * (2.0 * PI * self.frequency * x + self.phase).cos()
    }
}

/// Sampled elevation with monotone piecewise-cubic (PCHIP) interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct ElevationTable {
    xs: Vec<f64>,
    hs: Vec<f64>,
    ds: Vec<f64>,
}

impl ElevationTable {
    /// `xs` must increase strictly from 0 to 1.
    pub fn new(xs: Vec<f64>, hs: Vec<f64>) -> Result<Self> {
        if xs.len() != hs.len() || xs.len() < 2 {
            return Err(Error::domain("elevation table needs at least two (x, h) pairs"));
        }
        if xs.iter().chain(&hs).any(|v| !v.is_finite()) {
            return Err(Error::domain("elevation table entries must be finite"));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("elevation table x must be strictly increasing"));
        }
        if xs[0] != 0.0 || xs[xs.len() - 1] != 1.0 {
            return Err(Error::domain("elevation table must span x = 0 to x = 1"));
        }
        let ds = pchip_slopes(&xs, &hs);
        Ok(Self { xs, hs, ds })
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.hs.iter().copied())
    }

    fn segment(&self, x: f64) -> usize {
        let k = self.xs.partition_point(|&xk| xk <= x);
        k.saturating_sub(1).min(self.xs.len() - 2)
    }

    fn eval(&self, x: f64) -> (f64, f64) {
        let n = self.xs.len();
        if x <= 0.0 {
            return (self.hs[0] + self.ds[0] * x, self.ds[0]);
        }
        if x >= 1.0 {
            return (self.hs[n - 1] + self.ds[n - 1] * (x - 1.0), self.ds[n - 1]);
        }
        let k = self.segment(x);
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let (y0, y1, d0, d1) = (self.hs[k], self.hs[k + 1], self.ds[k], self.ds[k + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * h * d0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * h * d1;
        let deriv = ((6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * h * d0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * h * d1)
            / h;
        (value, deriv)
    }
}

/// Fritsch-Carlson derivatives: zero at local extrema, weighted harmonic
/// means elsewhere, shape-preserving one-sided ends.
fn pchip_slopes(xs: &[f64], hs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (hs[k + 1] - hs[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        let (a, b) = (delta[k - 1], delta[k]);
        if a * b > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / a + w2 / b);
        }
    }
    let end = |h0: f64, h1: f64, m0: f64, m1: f64| {
        let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
        if d.signum() != m0.signum() || m0 == 0.0 {
            0.0
        } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
            3.0 * m0
        } else {
            d
        }
    };
    d[0] = end(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

/// Dimensionless elevation `h(x)` over the unit course.
#[derive(Clone, Debug, PartialEq)]
pub enum CourseProfile {
    Flat,
    /// Constant gradient `h(x) = αx`.
    Grade(f64),
    Sinusoids(Vec<Sinusoid>),
    Table(ElevationTable),
}

impl CourseProfile {
    /// Rolling demo course with climbs and descents of up to about 13% grade.
    pub fn demo_hills() -> Self {
        CourseProfile::Sinusoids(vec![
            Sinusoid::new(0.003, 2.0, 0.0),
            Sinusoid::new(0.0015, 5.0, PI / 2.0),
            Sinusoid::new(0.0008, 9.0, 0.5),
        ])
    }

    /// Parses a two-column `x h` table. Columns are separated by whitespace
    /// or commas, `#` starts a comment, and one leading header line is
    /// allowed.
    pub fn parse_table(text: &str) -> Result<Self> {
        let mut xs = Vec::new();
        let mut hs = Vec::new();
        let mut lines = Vec::new();
        let mut seen_content = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
            let parsed: Vec<Option<f64>> = fields.iter().map(|f| f.parse::<f64>().ok()).collect();
            let first = !seen_content;
            seen_content = true;
            if first && parsed.iter().any(Option::is_none) {
                continue;
            }
            let parse_err = |message: String| Error::Parse { line: line_no, message };
            if fields.len() != 2 {
                return Err(parse_err(format!("expected two columns (x h), found {}", fields.len())));
            }
            let (Some(x), Some(h)) = (parsed[0], parsed[1]) else {
                return Err(parse_err(format!("non-numeric entry in `{line}`")));
            };
            if !(x.is_finite() && h.is_finite()) {
                return Err(parse_err("entries must be finite".into()));
            }
            if !(0.0..=1.0).contains(&x) {
                return Err(parse_err(format!("x = {x} lies outside [0, 1]")));
            }
            if let Some(&prev) = xs.last() {
                if x <= prev {
                    return Err(parse_err(format!("x must increase strictly, got {x} after {prev}")));
                }
            }
            xs.push(x);
            hs.push(h);
            lines.push(line_no);
        }
        if xs.len() < 2 {
            return Err(Error::Parse { line: lines.last().copied().unwrap_or(0), message: "need at least two data rows".into() });
        }
        if xs[0] != 0.0 {
            return Err(Error::Parse { line: lines[0], message: "first x must be 0".into() });
        }
        if xs[xs.len() - 1] != 1.0 {
            return Err(Error::Parse { line: lines[lines.len() - 1], message: "last x must be 1".into() });
        }
        ElevationTable::new(xs, hs).map(CourseProfile::Table)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CourseProfile::Flat | CourseProfile::Table(_) => Ok(()),
            CourseProfile::Grade(a) if a.is_finite() => Ok(()),
            CourseProfile::Grade(a) => Err(Error::domain(format!("grade must be finite, got {a}"))),
            CourseProfile::Sinusoids(terms) => {
                if terms.iter().all(|s| s.amplitude.is_finite() && s.frequency.is_finite() && s.phase.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::domain("sinusoid coefficients must be finite"))
                }
            }
        }
    }

    pub fn height(&self, x: f64) -> f64 {
        match self {
            CourseProfile::Flat => 0.0,
            CourseProfile::Grade(a) => a * x,
            CourseProfile::Sinusoids(terms) => terms.iter().map(|s| s.height(x)).sum(),
            CourseProfile::Table(t) => t.eval(x).0,
        }
    }

    /// `h′(x)`. Tables extend linearly beyond the ends.
    pub fn slope(&self, x: f64) -> f64 {
        match self {
            CourseProfile::Flat => 0.0,
            CourseProfile::Grade(a) => *a,
            CourseProfile::Sinusoids(terms) => terms.iter().map(|s| s.slope(x)).sum(),
            CourseProfile::Table(t) => t.eval(x).1,
        }
    }

    /// `sin θ(x)` without forming θ.
    fn sin_theta(&self, x: f64) -> f64 {
        let s = self.slope(x);
        s / (1.0 + s * s).sqrt()
    }
}

/// Road angle `θ(x) = arctan h′(x)`.
pub fn steepness(profile: &CourseProfile, x: f64) -> f64 {
    profile.slope(x).atan()
}

/// Drag and mass of the tracked rider.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiderSpec {
    /// Drag when riding alone, `C_{d,1}`.
    pub cd_front: f64,
    /// Drag inside the peloton, `C_{d,i}`.
    pub cd_lurk: f64,
    /// Rider mass over peloton average mass.
    pub mass_ratio: f64,
}

impl Default for RiderSpec {
    fn default() -> Self {
        Self { cd_front: 1.43, cd_lurk: 0.46, mass_ratio: 1.0 }
    }
}

impl RiderSpec {
    /// Drag coefficients from the peloton drag law for drafting position `i`.
    pub fn from_peloton(position: f64, peloton: &PelotonConfig, mass_ratio: f64) -> Result<Self> {
        Ok(Self {
            cd_front: drag_dimensionless(1.0, peloton)?,
            cd_lurk: drag_dimensionless(position, peloton)?,
            mass_ratio,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("cd_front", self.cd_front), ("cd_lurk", self.cd_lurk), ("mass_ratio", self.mass_ratio)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Integrator controls for the race simulations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TerrainOptions {
    pub method: OdeMethod,
    pub rtol: f64,
    pub atol: f64,
    /// Largest step, which also bounds the sample spacing of trajectories.
    pub h_max: f64,
    /// Speeds at or below this count as a stall.
    pub min_speed: f64,
    /// Dimensionless time after which a rider is declared never to finish.
    pub t_max: f64,
}

impl Default for TerrainOptions {
    fn default() -> Self {
        Self { method: OdeMethod::DormandPrince45, rtol: 1e-10, atol: 1e-12, h_max: 1e-4, min_speed: 1e-6, t_max: 1e3 }
    }
}

impl TerrainOptions {
    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    fn ode(&self) -> OdeOptions {
        OdeOptions::default().method(self.method).tolerances(self.rtol, self.atol).h_max(self.h_max)
    }

    fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.h_max > 0.0 && self.min_speed > 0.0 && self.t_max > 0.0) {
            return Err(Error::domain("terrain options must be positive"));
        }
        Ok(())
    }
}

/// Sampled race history of one rider or of the peloton.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub powers: Vec<f64>,
    pub cumulative_energy: Vec<f64>,
    pub finish_time: f64,
    /// Estimated integration error in `finish_time`.
    pub finish_time_error: f64,
}

impl Trajectory {
    fn push(&mut self, t: f64, x: f64, v: f64, p: f64, e: f64) {
        self.times.push(t);
        self.positions.push(x);
        self.velocities.push(v);
        self.powers.push(p);
        self.cumulative_energy.push(e);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_energy(&self) -> f64 {
        self.cumulative_energy.last().copied().unwrap_or(0.0)
    }

    /// Trapezoid rule over the sampled power series.
    pub fn trapezoid_energy(&self) -> f64 {
        self.times
            .windows(2)
            .zip(self.powers.windows(2))
            .map(|(t, p)| 0.5 * (t[1] - t[0]) * (p[0] + p[1]))
            .sum()
    }
}

/// Positive speed at which power balances drag and gravity:
/// the largest positive root of `C v³ + m γ sin θ v − P = 0`. Zero when
/// no positive root exists.
pub fn steady_speed(power: f64, drag: f64, mass: f64, gravity_ratio: f64, sin_theta: f64) -> f64 {
    let a = mass * gravity_ratio * sin_theta;
    if power <= 0.0 {
        return if a < 0.0 { (-a / drag).sqrt() } else { 0.0 };
    }
    solve_cubic_real(drag, a, -power)
        .ok()
        .and_then(|r| r.into_iter().filter(|v| *v > 0.0).reduce(f64::max))
        .unwrap_or(0.0)
}

struct Race<'a> {
    profile: &'a CourseProfile,
    rider: RiderSpec,
    eps: f64,
    gamma: f64,
}

impl Race<'_> {
    fn peloton_force(&self, x: f64, v: f64) -> f64 {
        1.0 / v - v * v - self.gamma * self.profile.sin_theta(x)
    }

    fn solo_force(&self, power: f64, x: f64, v: f64) -> f64 {
        let m = self.rider.mass_ratio;
        power / v - self.rider.cd_front * v * v - m * self.gamma * self.profile.sin_theta(x)
    }

    /// Power that keeps the rider at the peloton's speed and acceleration,
    /// clamped at zero.
    fn lurk_power(&self, x: f64, v: f64) -> f64 {
        let m = self.rider.mass_ratio;
        let inertia = if self.eps > 0.0 { m * self.peloton_force(x, v) } else { 0.0 };
        (v * (inertia + self.rider.cd_lurk * v * v + m * self.gamma * self.profile.sin_theta(x))).max(0.0)
    }

    fn peloton_speed(&self, x: f64) -> f64 {
        steady_speed(1.0, 1.0, 1.0, self.gamma, self.profile.sin_theta(x))
    }

    /// Distance steps shrink with the slowest peloton speed on the course,
    /// so `h_max` still bounds the time spacing of the samples.
    fn march_options(&self, opts: &TerrainOptions) -> OdeOptions {
        let slowest = (0..=4096).map(|k| self.peloton_speed(k as f64 / 4096.0)).fold(1.0, f64::min);
        opts.ode().h_max(opts.h_max * slowest.max(opts.min_speed))
    }

    fn solo_speed(&self, power: f64, x: f64) -> f64 {
        steady_speed(power, self.rider.cd_front, self.rider.mass_ratio, self.gamma, self.profile.sin_theta(x))
    }
}

fn check_scales(scales: &ScaleSet) -> Result<()> {
    if !(scales.inertia >= 0.0 && scales.inertia.is_finite()) {
        return Err(Error::domain(format!("inertia ε must be non-negative, got {}", scales.inertia)));
    }
    if !scales.gravity_ratio.is_finite() {
        return Err(Error::domain("gravity ratio γ must be finite"));
    }
    Ok(())
}

/// Integrates the peloton from `x = 0`, `v = 1` at unit power until it
/// reaches `x = 1`.
pub fn simulate_peloton(profile: &CourseProfile, scales: &ScaleSet, opts: &TerrainOptions) -> Result<Trajectory> {
    profile.validate()?;
    check_scales(scales)?;
    opts.validate()?;
    let race = Race { profile, rider: RiderSpec::default(), eps: scales.inertia, gamma: scales.gravity_ratio };
    let mut traj = Trajectory::default();
    if race.eps > 0.0 {
        let sol = inertial_lurk(&race, [0.0, 1.0, 0.0, 0.0], 0.0, 1.0, opts)?;
        for (t, y) in sol.t.iter().zip(&sol.y) {
            traj.push(*t, y[0], y[1], 1.0, y[2]);
        }
        let (t_p, y) = sol.last();
        traj.finish_time = t_p;
        traj.finish_time_error = sol.error_estimate * (1.0 + 1.0 / y[1]);
    } else {
        let sol = marched_lurk(&race, [0.0, 0.0, 0.0], 0.0, 1.0, opts)?;
        for (x, y) in sol.t.iter().zip(&sol.y) {
            traj.push(y[0], *x, race.peloton_speed(*x), 1.0, y[1]);
        }
        traj.finish_time = sol.last().1[0];
        traj.finish_time_error = sol.error_estimate;
    }
    Ok(traj)
}

/// Power series a rider at drafting drag `C_{d,i}` needs to match the
/// peloton's speed and acceleration at each sample of `peloton`.
pub fn lurking_power(
    rider: &RiderSpec,
    peloton: &Trajectory,
    profile: &CourseProfile,
    scales: &ScaleSet,
) -> Result<Vec<f64>> {
    rider.validate()?;
    check_scales(scales)?;
    let race = Race { profile, rider: *rider, eps: scales.inertia, gamma: scales.gravity_ratio };
    Ok(peloton.positions.iter().zip(&peloton.velocities).map(|(&x, &v)| race.lurk_power(x, v)).collect())
}

/// Outcome of one simulated breakaway.
#[derive(Clone, Debug, PartialEq)]
pub struct BreakawayOutcome {
    pub rider: Trajectory,
    pub peloton: Trajectory,
    /// `t_p − t_f`; zero when the attack fails and the rider rejoins.
    pub time_gap: f64,
    pub rider_energy: f64,
    pub attack_time: f64,
    /// Time at which the peloton absorbed the rider, if it did. Equals
    /// `attack_time` when the attack could not open a gap at all.
    pub caught_at: Option<f64>,
}

/// Rider lurks at position `i` until `x_a`, then rides alone with
/// `attack.power_at(t − t_a)`. If the peloton catches the rider, or the
/// rider cannot open a gap at all, the rider rejoins and `Δt = 0`.
pub fn simulate_breakaway(
    x_a: f64,
    attack: &PowerProfile,
    rider: &RiderSpec,
    profile: &CourseProfile,
    scales: &ScaleSet,
    opts: &TerrainOptions,
) -> Result<BreakawayOutcome> {
    if !(0.0..1.0).contains(&x_a) {
        return Err(Error::domain(format!("attack position must lie in [0, 1), got {x_a}")));
    }
    rider.validate()?;
    profile.validate()?;
    check_scales(scales)?;
    opts.validate()?;
    let race = Race { profile, rider: *rider, eps: scales.inertia, gamma: scales.gravity_ratio };
    if race.eps > 0.0 {
        inertial_breakaway(&race, x_a, attack, opts)
    } else {
        marched_breakaway(&race, x_a, attack, opts)
    }
}

/// Runs [`simulate_breakaway`] for each `(x_a, P_a)` at constant attack power.
pub fn sweep_breakaway(
    grid: &[(f64, f64)],
    rider: &RiderSpec,
    profile: &CourseProfile,
    scales: &ScaleSet,
    opts: &TerrainOptions,
) -> Vec<Result<BreakawayOutcome>> {
    grid.par_iter()
        .map(|&(x_a, p_a)| simulate_breakaway(x_a, &PowerProfile::constant(p_a), rider, profile, scales, opts))
        .collect()
}

fn finish_error(status: &OdeStatus, stall_events: &[(usize, Error)]) -> Result<()> {
    if let OdeStatus::Terminated { event } = status {
        for (k, err) in stall_events {
            if event == k {
                return Err(err.clone());
            }
        }
    }
    Ok(())
}

/// Peloton with an attached rider: `[x_p, v_p, E_p, E_r]`, stopped when
/// `x_p` reaches `x_stop`.
fn inertial_lurk(race: &Race, y0: [f64; 4], t0: f64, x_stop: f64, opts: &TerrainOptions) -> Result<OdeSolution> {
    let eps = race.eps;
    let events = [
        EventSpec::new(move |_, y: &[f64]| y[0] - x_stop).direction(Direction::Rising).terminal(),
        EventSpec::new(|_, y: &[f64]| y[1] - opts.min_speed).direction(Direction::Falling).terminal(),
    ];
    let sol = ode_solve_with_events(
        |_, y, dy| {
            let v = y[1].max(opts.min_speed);
            dy[0] = y[1];
            dy[1] = race.peloton_force(y[0], v) / eps;
            dy[2] = 1.0;
            dy[3] = race.lurk_power(y[0], v);
        },
        &y0,
        t0,
        t0 + opts.t_max,
        &events,
        &opts.ode(),
    )?;
    match sol.status {
        OdeStatus::Terminated { event: 0 } => Ok(sol),
        OdeStatus::Terminated { .. } => {
            let (t, y) = sol.last();
            Err(Error::Stall { t, x: y[0] })
        }
        OdeStatus::Completed => Err(Error::NeverFinishes(format!("peloton still short of x = {x_stop} at t = {}", t0 + opts.t_max))),
    }
}

fn inertial_breakaway(race: &Race, x_a: f64, attack: &PowerProfile, opts: &TerrainOptions) -> Result<BreakawayOutcome> {
    let eps = race.eps;
    let m = race.rider.mass_ratio;
    let mut rider = Trajectory::default();
    let mut peloton = Trajectory::default();
    let mut error_estimate = 0.0;

    let mut state = [0.0, 1.0, 0.0, 0.0];
    let mut t_a = 0.0;
    if x_a > 0.0 {
        let sol = inertial_lurk(race, state, 0.0, x_a, opts)?;
        for (t, y) in sol.t.iter().zip(&sol.y) {
            peloton.push(*t, y[0], y[1], 1.0, y[2]);
            rider.push(*t, y[0], y[1], race.lurk_power(y[0], y[1]), y[3]);
        }
        let (t, y) = sol.last();
        t_a = t;
        state = [y[0], y[1], y[2], y[3]];
        error_estimate += sol.error_estimate;
    } else {
        peloton.push(0.0, 0.0, 1.0, 1.0, 0.0);
        rider.push(0.0, 0.0, 1.0, race.lurk_power(0.0, 1.0), 0.0);
    }
    let [x0, v0, ep0, er0] = state;

    let p0 = attack.power_at(0.0);
    let opens_gap = race.solo_force(p0, x0, v0) / m > race.peloton_force(x0, v0);
    let mut caught_at = None;
    let mut join = (t_a, state);
    let mut rider_done = None;
    let mut peloton_done = None;

    if opens_gap {
        let events = [
            EventSpec::new(|_, y: &[f64]| y[3] - 1.0).direction(Direction::Rising),
            EventSpec::new(|_, y: &[f64]| y[0] - 1.0).direction(Direction::Rising),
            EventSpec::new(|_, y: &[f64]| y[0].min(y[3]) - 1.0).direction(Direction::Rising).terminal(),
            EventSpec::new(|_, y: &[f64]| y[3] - y[0]).direction(Direction::Falling).terminal(),
            EventSpec::new(|_, y: &[f64]| y[4] - opts.min_speed).direction(Direction::Falling).terminal(),
            EventSpec::new(|_, y: &[f64]| y[1] - opts.min_speed).direction(Direction::Falling).terminal(),
        ];
        // the attack is integrated one power segment at a time so that jumps
        // in power fall on step boundaries
        let horizon = t_a + opts.t_max;
        let mut rows: Vec<Row> = Vec::new();
        let mut marks: Vec<(usize, Row)> = Vec::new();
        let mut y = vec![x0, v0, ep0, x0, v0, er0];
        let mut t0 = t_a;
        let mut status = OdeStatus::Completed;
        for (k, (s0, s1)) in attack.pieces().into_iter().enumerate() {
            if t_a + s0 >= horizon {
                break;
            }
            let t_stop = (t_a + s1).min(horizon);
            let power = |t: f64| attack.segment_power(k, t - t_a);
            let sol = ode_solve_with_events(
                |t, y, dy| {
                    let vp = y[1].max(opts.min_speed);
                    let vr = y[4].max(opts.min_speed);
                    let p = power(t);
                    dy[0] = y[1];
                    dy[1] = race.peloton_force(y[0], vp) / eps;
                    dy[2] = 1.0;
                    dy[3] = y[4];
                    dy[4] = race.solo_force(p, y[3], vr) / (eps * m);
                    dy[5] = p;
                },
                &y,
                t0,
                t_stop,
                &events,
                &opts.ode(),
            )?;
            error_estimate += sol.error_estimate;
            for (j, (t, yy)) in sol.t.iter().zip(&sol.y).enumerate() {
                rows.push(Row { t: *t, y: yy.clone(), power: power(*t), restart: j == 0 });
            }
            for e in &sol.events {
                marks.push((e.index, Row { t: e.t, y: e.y.clone(), power: power(e.t), restart: false }));
            }
            status = sol.status;
            let (t1, y1) = sol.last();
            t0 = t1;
            y = y1.to_vec();
            if status != OdeStatus::Completed {
                break;
            }
        }
        let t_end = t0;
        let y_end = y;
        finish_error(
            &status,
            &[
                (4, Error::NeverFinishes(format!("rider stalled at x = {:.6} (t = {t_end:.6})", y_end[3]))),
                (5, Error::Stall { t: t_end, x: y_end[0] }),
            ],
        )?;
        let first_mark = |k: usize| marks.iter().find(|(i, _)| *i == k).map(|(_, r)| r.clone());
        match status {
            OdeStatus::Terminated { event: 2 } => {
                // the later finisher is the terminal state
                let last = rows.last().cloned().expect("rows recorded");
                rider_done = if y_end[3] <= y_end[0] { Some(last.clone()) } else { first_mark(0) };
                peloton_done = if y_end[0] <= y_end[3] { Some(last) } else { first_mark(1) };
            }
            OdeStatus::Terminated { event: 3 } => {
                caught_at = Some(t_end);
                join = (t_end, [y_end[0], y_end[1], y_end[2], y_end[5]]);
            }
            _ => return Err(Error::NeverFinishes(format!("no finish by t = {t_end}"))),
        }
        let t_rider_stop = rider_done.as_ref().map_or(f64::INFINITY, |r| r.t);
        let t_pel_stop = peloton_done.as_ref().map_or(f64::INFINITY, |r| r.t);
        for r in rows.iter().filter(|r| r.t < t_rider_stop) {
            rider.push(r.t, r.y[3], r.y[4], r.power, r.y[5]);
        }
        for r in rows.iter().filter(|r| r.t < t_pel_stop && !r.restart) {
            peloton.push(r.t, r.y[0], r.y[1], 1.0, r.y[2]);
        }
        if let Some(r) = &rider_done {
            rider.push(r.t, r.y[3], r.y[4], r.power, r.y[5]);
        }
        if let Some(r) = &peloton_done {
            peloton.push(r.t, r.y[0], r.y[1], 1.0, r.y[2]);
        }
    } else {
        caught_at = Some(t_a);
    }

    let (t_f, t_p) = if caught_at.is_some() {
        let (t_c, y_c) = join;
        rider.push(t_c, y_c[0], y_c[1], race.lurk_power(y_c[0], y_c[1]), y_c[3]);
        let sol = inertial_lurk(race, y_c, t_c, 1.0, opts)?;
        error_estimate += sol.error_estimate;
        for (t, y) in sol.t.iter().zip(&sol.y).skip(1) {
            peloton.push(*t, y[0], y[1], 1.0, y[2]);
            rider.push(*t, y[0], y[1], race.lurk_power(y[0], y[1]), y[3]);
        }
        (sol.last().0, sol.last().0)
    } else {
        (rider_done.expect("rider finish recorded").t, peloton_done.expect("peloton finish recorded").t)
    };

    let v_end = rider.velocities.last().copied().unwrap_or(1.0).min(peloton.velocities.last().copied().unwrap_or(1.0));
    let time_error = error_estimate * (1.0 + 1.0 / v_end.max(opts.min_speed));
    rider.finish_time = t_f;
    rider.finish_time_error = time_error;
    peloton.finish_time = t_p;
    peloton.finish_time_error = time_error;
    let time_gap = if caught_at.is_some() { 0.0 } else { t_p - t_f };
    Ok(BreakawayOutcome { rider_energy: rider.final_energy(), rider, peloton, time_gap, attack_time: t_a, caught_at })
}

/// Joint state at one output point of the attack phase.
#[derive(Clone, Debug)]
struct Row {
    t: f64,
    y: Vec<f64>,
    power: f64,
    /// First point of a power segment; duplicates the previous time.
    restart: bool,
}

/// Quasi-steady peloton with an attached rider, marched in distance:
/// `[t_p, E_p, E_r]` as functions of `x`.
fn marched_lurk(race: &Race, y0: [f64; 3], x0: f64, x1: f64, opts: &TerrainOptions) -> Result<OdeSolution> {
    let events = [EventSpec::new(|x, _: &[f64]| race.peloton_speed(x) - opts.min_speed).direction(Direction::Falling).terminal()];
    let sol = ode_solve_with_events(
        |x, _, dy| {
            let v = race.peloton_speed(x).max(opts.min_speed);
            dy[0] = 1.0 / v;
            dy[1] = 1.0 / v;
            dy[2] = race.lurk_power(x, v) / v;
        },
        &y0,
        x0,
        x1,
        &events,
        &race.march_options(opts),
    )?;
    if sol.status != OdeStatus::Completed {
        let (x, y) = sol.last();
        return Err(Error::Stall { t: y[0], x });
    }
    Ok(sol)
}

fn marched_breakaway(race: &Race, x_a: f64, attack: &PowerProfile, opts: &TerrainOptions) -> Result<BreakawayOutcome> {
    let mut rider = Trajectory::default();
    let mut peloton = Trajectory::default();
    let mut error_estimate = 0.0;
    let mut state = [0.0, 0.0, 0.0];
    if x_a > 0.0 {
        let sol = marched_lurk(race, state, 0.0, x_a, opts)?;
        for (x, y) in sol.t.iter().zip(&sol.y) {
            let v = race.peloton_speed(*x);
            peloton.push(y[0], *x, v, 1.0, y[1]);
            rider.push(y[0], *x, v, race.lurk_power(*x, v), y[2]);
        }
        let y = sol.last().1;
        state = [y[0], y[1], y[2]];
        error_estimate += sol.error_estimate;
    } else {
        let v = race.peloton_speed(0.0);
        if v <= opts.min_speed {
            return Err(Error::Stall { t: 0.0, x: 0.0 });
        }
        peloton.push(0.0, 0.0, v, 1.0, 0.0);
        rider.push(0.0, 0.0, v, race.lurk_power(0.0, v), 0.0);
    }
    let [t_a, ep0, er0] = state;

    let p0 = attack.power_at(0.0);
    let opens_gap = race.solo_speed(p0, x_a) > race.peloton_speed(x_a);
    let mut caught_at = None;
    let mut join = (x_a, state);

    if opens_gap {
        let ode = race.march_options(opts);
        let mut y = vec![t_a, ep0, t_a, er0];
        let mut x0 = x_a;
        for (k, (_, s1)) in attack.pieces().into_iter().enumerate() {
            let solo = |x: f64, t: f64| race.solo_speed(attack.segment_power(k, t - t_a), x);
            if solo(x0, y[2]) <= opts.min_speed {
                return Err(Error::NeverFinishes(format!("rider stalled at x = {x0:.6} (t = {:.6})", y[2])));
            }
            let events = [
                EventSpec::new(|_, y: &[f64]| y[2] - y[0]).direction(Direction::Rising).terminal(),
                EventSpec::new(|x, y: &[f64]| solo(x, y[2]) - opts.min_speed).direction(Direction::Falling).terminal(),
                EventSpec::new(|x, _: &[f64]| race.peloton_speed(x) - opts.min_speed).direction(Direction::Falling).terminal(),
                EventSpec::new(move |_, y: &[f64]| y[2] - t_a - s1).direction(Direction::Rising).terminal(),
            ];
            let sol = ode_solve_with_events(
                |x, y, dy| {
                    let vp = race.peloton_speed(x).max(opts.min_speed);
                    let vr = solo(x, y[2]).max(opts.min_speed);
                    dy[0] = 1.0 / vp;
                    dy[1] = 1.0 / vp;
                    dy[2] = 1.0 / vr;
                    dy[3] = attack.segment_power(k, y[2] - t_a) / vr;
                },
                &y,
                x0,
                1.0,
                &events,
                &ode,
            )?;
            error_estimate += sol.error_estimate;
            let (x_end, y_end) = sol.last();
            finish_error(
                &sol.status,
                &[
                    (1, Error::NeverFinishes(format!("rider stalled at x = {x_end:.6} (t = {:.6})", y_end[2]))),
                    (2, Error::Stall { t: y_end[0], x: x_end }),
                ],
            )?;
            for (j, (x, yy)) in sol.t.iter().zip(&sol.y).enumerate() {
                if j > 0 {
                    peloton.push(yy[0], *x, race.peloton_speed(*x), 1.0, yy[1]);
                }
                rider.push(yy[2], *x, solo(*x, yy[2]), attack.segment_power(k, yy[2] - t_a), yy[3]);
            }
            x0 = x_end;
            y = y_end.to_vec();
            match sol.status {
                OdeStatus::Terminated { event: 0 } => {
                    caught_at = Some(y[0]);
                    join = (x0, [y[0], y[1], y[3]]);
                    break;
                }
                OdeStatus::Terminated { .. } => continue,
                OdeStatus::Completed => break,
            }
        }
    } else {
        caught_at = Some(t_a);
    }

    if caught_at.is_some() {
        let (x_c, y_c) = join;
        let v = race.peloton_speed(x_c);
        rider.push(y_c[0], x_c, v, race.lurk_power(x_c, v), y_c[2]);
        if x_c < 1.0 {
            let sol = marched_lurk(race, y_c, x_c, 1.0, opts)?;
            error_estimate += sol.error_estimate;
            for (x, y) in sol.t.iter().zip(&sol.y).skip(1) {
                let v = race.peloton_speed(*x);
                peloton.push(y[0], *x, v, 1.0, y[1]);
                rider.push(y[0], *x, v, race.lurk_power(*x, v), y[2]);
            }
        }
    }

    rider.finish_time = *rider.times.last().expect("non-empty");
    peloton.finish_time = *peloton.times.last().expect("non-empty");
    rider.finish_time_error = error_estimate;
    peloton.finish_time_error = error_estimate;
    let time_gap = if caught_at.is_some() { 0.0 } else { peloton.finish_time - rider.finish_time };
    Ok(BreakawayOutcome { rider_energy: rider.final_energy(), rider, peloton, time_gap, attack_time: t_a, caught_at })
}
