//! Two-timescale structure of the attack onset on a flat road.
//!
//! Let the peloton front sit at `x = t` and let the rider start `i − 1`
//! spacings `δ = γ ε²` behind it. The rider first works up through the
//! peloton on the inner time `τ̃ = t / ε^{3/2}` with `x − t = δ ζ`, which
//! gives `γ m ζ″ = P − C(−ζ)` plus an `O(√ε)` drag-speed correction. Once
//! the rider has passed the front, they relax to the solo speed on the outer
//! time `τ = t / ε`.

use crate::model::{drag_dimensional, PelotonConfig};
use crate::numerics::{
    find_root_bracketed, ode_solve_with_events, Direction, EventSpec, OdeOptions, OdeStatus, SolverSettings,
};
use crate::{Error, Result};

/// Terms kept in the inner (passage) layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LayerOrder {
    /// `γ m ζ″ = P − C(−ζ)`.
    Leading,
    /// Adds the first correction in `u = γ√ε ζ′`:
    /// `γ m ζ″ = P(1 − u) − C(−ζ)(1 + 2u)`.
    #[default]
    TwoTerm,
}

/// Inputs of the onset analysis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MicroParams {
    /// Drafting position `i` before the attack (1 is the front).
    pub position: f64,
    /// Attack power.
    pub power: f64,
    pub mass_ratio: f64,
    /// `γ` in `δ = γ ε²`. Not the gravity ratio of the terrain model.
    pub gamma_ratio: f64,
    /// Inertia `ε`.
    pub inertia: f64,
    pub peloton: PelotonConfig,
    pub order: LayerOrder,
}

impl Default for MicroParams {
    fn default() -> Self {
        Self {
            position: 5.0,
            power: 2.0,
            mass_ratio: 1.0,
            gamma_ratio: 1.0,
            inertia: 0.005,
            peloton: PelotonConfig::default(),
            order: LayerOrder::TwoTerm,
        }
    }
}

impl MicroParams {
    pub fn validate(&self) -> Result<()> {
        self.peloton.validate()?;
        if !(self.position >= 1.0 && self.position.is_finite()) {
            return Err(Error::domain(format!("position must be >= 1, got {}", self.position)));
        }
        for (name, v) in [
            ("power", self.power),
            ("mass_ratio", self.mass_ratio),
            ("gamma_ratio", self.gamma_ratio),
            ("inertia", self.inertia),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// Dimensionless drag `depth` spacings behind the front; ahead of it the
    /// rider has full drag.
    pub fn drag(&self, depth: f64) -> f64 {
        drag_dimensional(depth, &self.peloton.drag) / self.peloton.cd_avg
    }

    /// Solo drag `C_d(0) = C_{d,1}`.
    pub fn solo_drag(&self) -> f64 {
        self.drag(0.0)
    }

    pub fn spacing(&self) -> f64 {
        self.gamma_ratio * self.inertia * self.inertia
    }

    /// Inner time unit `ε^{3/2}`.
    pub fn inner_time_unit(&self) -> f64 {
        self.inertia * self.inertia.sqrt()
    }

    /// Factor turning `ζ′` into a speed excess, `γ√ε`.
    fn speed_factor(&self) -> f64 {
        self.gamma_ratio * self.inertia.sqrt()
    }

    fn inner_force(&self, zeta: f64, dzeta: f64) -> f64 {
        let c = self.drag(-zeta);
        match self.order {
            LayerOrder::Leading => self.power - c,
            LayerOrder::TwoTerm => {
                let u = self.speed_factor() * dzeta;
                self.power * (1.0 - u) - c * (1.0 + 2.0 * u)
            }
        }
    }
}

/// Inner-layer solution up to the front of the peloton.
#[derive(Clone, Debug, PartialEq)]
pub struct Passage {
    /// `τ̃_d`, inner time to reach the front.
    pub duration: f64,
    /// `v_f = 1 + γ√ε ζ′(τ̃_d)`.
    pub front_speed: f64,
    /// `(τ̃, ζ, ζ′)` at the integrator steps.
    pub samples: Vec<[f64; 3]>,
}

/// Integrates the inner layer from `ζ = −(i − 1)` at rest relative to the
/// peloton until `ζ = 0`.
pub fn peloton_passage(params: &MicroParams) -> Result<Passage> {
    params.validate()?;
    let zeta0 = -(params.position - 1.0);
    if zeta0 == 0.0 {
        return Ok(Passage { duration: 0.0, front_speed: 1.0, samples: vec![[0.0, 0.0, 0.0]] });
    }
    if params.inner_force(zeta0, 0.0) <= 0.0 {
        return Err(Error::NeverReachesFront(format!(
            "power {} does not exceed the drafting drag {:.6}",
            params.power,
            params.drag(-zeta0)
        )));
    }
    let scale = params.gamma_ratio * params.mass_ratio;
    let events = [
        EventSpec::new(|_, y: &[f64]| y[0]).direction(Direction::Rising).terminal(),
        EventSpec::new(|_, y: &[f64]| y[1]).direction(Direction::Falling).terminal(),
    ];
    let opts = OdeOptions::default().tolerances(1e-12, 1e-13);
    let sol = ode_solve_with_events(
        |_, y, dy| {
            dy[0] = y[1];
            dy[1] = params.inner_force(y[0], y[1]) / scale;
        },
        &[zeta0, 0.0],
        0.0,
        1e6,
        &events,
        &opts,
    )?;
    match sol.status {
        OdeStatus::Terminated { event: 0 } => {}
        _ => {
            let (_, y) = sol.last();
            return Err(Error::NeverReachesFront(format!("rider stops {:.6} spacings behind the front", -y[0])));
        }
    }
    let (duration, y) = sol.last();
    let samples = sol.t.iter().zip(&sol.y).map(|(t, y)| [*t, y[0], y[1]]).collect();
    Ok(Passage { duration, front_speed: 1.0 + params.speed_factor() * y[1], samples })
}

/// The quoted closed form for the escape layer:
/// `v = P v_f / (C v_f + (P − C v_f) e^{−P τ / m})`.
pub fn post_escape_velocity(tau: f64, v_f: f64, power: f64, cd_front: f64, mass_ratio: f64) -> f64 {
    power * v_f / (cd_front * v_f + (power - cd_front * v_f) * (-power * tau / mass_ratio).exp())
}

/// Both layers of the onset, matched at the front of the peloton.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSolution {
    pub params: MicroParams,
    /// `τ̃_d`.
    pub passage_duration: f64,
    /// `v_f`.
    pub front_speed: f64,
    /// `(P / C_{d,1})^{1/3}`.
    pub terminal_speed: f64,
    pub gamma_ratio: f64,
    passage: Passage,
}

pub fn layer_solution(params: &MicroParams) -> Result<LayerSolution> {
    let passage = peloton_passage(params)?;
    Ok(LayerSolution {
        params: *params,
        passage_duration: passage.duration,
        front_speed: passage.front_speed,
        terminal_speed: (params.power / params.solo_drag()).cbrt(),
        gamma_ratio: params.gamma_ratio,
        passage,
    })
}

impl LayerSolution {
    /// Time after the attack at which the rider passes the front.
    pub fn front_time(&self) -> f64 {
        self.passage_duration * self.params.inner_time_unit()
    }

    /// Speed `1 + γ√ε ζ′` at inner time `τ̃`, by cubic Hermite interpolation
    /// of `ζ′` with slopes from the layer equation.
    pub fn passage_velocity(&self, tau_tilde: f64) -> f64 {
        let p = &self.params;
        let s = &self.passage.samples;
        let dz = if tau_tilde >= self.passage_duration {
            s[s.len() - 1][2]
        } else if tau_tilde <= 0.0 {
            0.0
        } else {
            let k = s.partition_point(|r| r[0] <= tau_tilde).clamp(1, s.len() - 1);
            let (a, b) = (s[k - 1], s[k]);
            let h = b[0] - a[0];
            let t = (tau_tilde - a[0]) / h;
            let scale = p.gamma_ratio * p.mass_ratio;
            let (da, db) = (p.inner_force(a[1], a[2]) / scale, p.inner_force(b[1], b[2]) / scale);
            let t2 = t * t;
            let t3 = t2 * t;
            (2.0 * t3 - 3.0 * t2 + 1.0) * a[2]
                + (t3 - 2.0 * t2 + t) * h * da
                + (-2.0 * t3 + 3.0 * t2) * b[2]
                + (t3 - t2) * h * db
        };
        1.0 + p.speed_factor() * dz
    }

    /// Speed at outer time `τ` after passing the front: the exact solution
    /// of `m V′ = P/V − C V²` with `V(0) = v_f`, inverted from
    /// `6 a C τ / m = F(V) − F(v_f)` where `a` is the terminal speed.
    pub fn relaxation(&self, tau: f64) -> f64 {
        let p = &self.params;
        let a = self.terminal_speed;
        let v_f = self.front_speed;
        if tau <= 0.0 || v_f == a {
            return v_f;
        }
        let f = |v: f64| {
            ((v * v + a * v + a * a) / ((a - v) * (a - v))).ln()
                - 2.0 * 3f64.sqrt() * ((2.0 * v + a) / (3f64.sqrt() * a)).atan()
        };
        let target = f(v_f) + 6.0 * a * p.solo_drag() * tau / p.mass_ratio;
        // V = a − (a − v_f) e^{−u}, with F increasing in u
        let v_of = |u: f64| a - (a - v_f) * (-u).exp();
        let g = |u: f64| f(v_of(u)) - target;
        let mut hi = 1.0;
        while g(hi) < 0.0 {
            hi *= 2.0;
            if hi > 700.0 {
                return a;
            }
        }
        let settings = SolverSettings::default().with_abs_tol(1e-14);
        find_root_bracketed(g, 0.0, hi, &settings).map(v_of).unwrap_or(a)
    }

    /// Composite speed at time `t` after the attack.
    pub fn composite_velocity(&self, t: f64) -> f64 {
        let t_front = self.front_time();
        if t <= t_front {
            self.passage_velocity(t / self.params.inner_time_unit())
        } else {
            self.relaxation((t - t_front) / self.params.inertia)
        }
    }
}

/// Speed history from the full inertial equation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VelocitySeries {
    /// Time since the attack.
    pub times: Vec<f64>,
    pub velocities: Vec<f64>,
    /// Time at which the rider passed the front of the peloton.
    pub front_crossing: Option<f64>,
}

impl VelocitySeries {
    /// Indices of strict local maxima of the speed.
    pub fn interior_maxima(&self) -> Vec<usize> {
        let v = &self.velocities;
        (1..v.len().saturating_sub(1)).filter(|&k| v[k] > v[k - 1] && v[k] >= v[k + 1]).collect()
    }
}

/// Integrates `ε m v′ = P/v − C(depth) v²` through the attack, with
/// `depth = (t − x)/δ` measured from the front of a peloton moving at unit
/// speed. Runs for `duration` after the attack.
pub fn full_ode_attack(params: &MicroParams, duration: f64) -> Result<VelocitySeries> {
    params.validate()?;
    if !(duration > 0.0) {
        return Err(Error::domain(format!("duration must be positive, got {duration}")));
    }
    let delta = params.spacing();
    let eps_m = params.inertia * params.mass_ratio;
    let min_speed = 1e-6;
    let events = [
        EventSpec::new(|_, y: &[f64]| y[0]).direction(Direction::Rising),
        EventSpec::new(move |_, y: &[f64]| y[1] - min_speed).direction(Direction::Falling).terminal(),
    ];
    let opts = OdeOptions::default().tolerances(1e-11, 1e-13).h_max(params.inner_time_unit() / 20.0);
    // state: offset w = x − t from the front, and speed
    let sol = ode_solve_with_events(
        |_, y, dy| {
            let v = y[1].max(min_speed);
            dy[0] = y[1] - 1.0;
            dy[1] = (params.power / v - params.drag(-y[0] / delta) * v * v) / eps_m;
        },
        &[-delta * (params.position - 1.0), 1.0],
        0.0,
        duration,
        &events,
        &opts,
    )?;
    if sol.status != OdeStatus::Completed {
        let (t, _) = sol.last();
        return Err(Error::Stall { t, x: t });
    }
    let front_crossing = if params.position == 1.0 { Some(0.0) } else { sol.events.iter().find(|e| e.index == 0).map(|e| e.t) };
    Ok(VelocitySeries {
        times: sol.t.clone(),
        velocities: sol.y.iter().map(|y| y[1]).collect(),
        front_crossing,
    })
}

/// Largest `|composite − full| / full` over the samples of `series`.
pub fn composite_deviation(layers: &LayerSolution, series: &VelocitySeries) -> f64 {
    series
        .times
        .iter()
        .zip(&series.velocities)
        .map(|(&t, &v)| (layers.composite_velocity(t) - v).abs() / v)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn front_rider_has_no_passage() {
        let p = MicroParams { position: 1.0, ..Default::default() };
        let s = peloton_passage(&p).unwrap();
        assert_eq!((s.duration, s.front_speed), (0.0, 1.0));
    }

    #[test]
    fn balanced_power_does_not_move() {
        let base = MicroParams::default();
        let p = MicroParams { power: base.drag(4.0), ..base };
        assert!(matches!(peloton_passage(&p), Err(Error::NeverReachesFront(_))));
    }

    #[test]
    fn weak_attack_stalls_inside_the_peloton() {
        // accelerates at depth 4 but cannot beat the drag nearer the front
        let p = MicroParams { power: 0.8, order: LayerOrder::Leading, ..Default::default() };
        assert!(matches!(peloton_passage(&p), Err(Error::NeverReachesFront(_))));
    }

    #[test]
    fn leading_order_passage_conserves_energy() {
        // γ m ζ′²/2 = ∫ (P − C(−ζ)) dζ along the path
        let p = MicroParams { position: 5.0, power: 4.0, order: LayerOrder::Leading, ..Default::default() };
        let s = peloton_passage(&p).unwrap();
        let d = &p.peloton.drag;
        let lam = d.decay;
        // ∫_{-4}^{0} C(−ζ) dζ = ∫_0^4 C(depth) d(depth)
        let work = (d.cd_min * 4.0 + (d.cd_max - d.cd_min) * (1.0 - (-4.0 * lam).exp()) / lam) / p.peloton.cd_avg;
        let dz = (2.0 * (p.power * 4.0 - work) / (p.gamma_ratio * p.mass_ratio)).sqrt();
        let v_f = 1.0 + p.gamma_ratio * p.inertia.sqrt() * dz;
        assert!((s.front_speed - v_f).abs() < 1e-10, "{} vs {v_f}", s.front_speed);
    }

    #[test]
    fn post_escape_velocity_examples() {
        let (p, c, m) = (2.0, 1.43, 1.0);
        assert_eq!(post_escape_velocity(0.0, 1.2, p, c, m), 1.2);
        assert!((post_escape_velocity(1e3, 1.2, p, c, m) - p / c).abs() < 1e-12);
        let eq = p / c;
        for tau in [0.0, 0.3, 5.0] {
            assert!((post_escape_velocity(tau, eq, p, c, m) - eq).abs() < 1e-15);
        }
    }

    #[test]
    fn relaxation_solves_the_escape_equation() {
        let layers = layer_solution(&MicroParams::default()).unwrap();
        let p = layers.params;
        assert_eq!(layers.relaxation(0.0), layers.front_speed);
        let c = p.solo_drag();
        for tau in [0.05, 0.2, 0.7, 2.0] {
            let h = 1e-5;
            let dv = (layers.relaxation(tau + h) - layers.relaxation(tau - h)) / (2.0 * h);
            let v = layers.relaxation(tau);
            let rhs = (p.power / v - c * v * v) / p.mass_ratio;
            assert!((dv - rhs).abs() < 1e-6, "tau = {tau}: {dv} vs {rhs}");
        }
        assert!((layers.relaxation(1e3) - layers.terminal_speed).abs() < 1e-12);
    }

    #[test]
    fn full_ode_tends_to_solo_speed() {
        let p = MicroParams::default();
        let series = full_ode_attack(&p, 40.0 * p.inertia).unwrap();
        let terminal = (p.power / p.solo_drag()).cbrt();
        assert!((series.velocities.last().unwrap() - terminal).abs() < 1e-6);
    }

    #[test]
    fn composite_tracks_full_ode() {
        let p = MicroParams::default();
        let layers = layer_solution(&p).unwrap();
        let series = full_ode_attack(&p, 20.0 * p.inertia).unwrap();
        let dev = composite_deviation(&layers, &series);
        assert!(dev < 5.0 * p.inertia, "{dev}");
        let leading = layer_solution(&MicroParams { order: LayerOrder::Leading, ..p }).unwrap();
        assert!(composite_deviation(&leading, &series) > dev);
    }

    #[test]
    fn speed_rises_then_relaxes() {
        let p = MicroParams::default();
        let series = full_ode_attack(&p, 20.0 * p.inertia).unwrap();
        let maxima = series.interior_maxima();
        assert_eq!(maxima.len(), 1);
        let t_peak = series.times[maxima[0]];
        let t_front = series.front_crossing.unwrap();
        assert!((t_peak - t_front).abs() < 0.1 * t_front, "{t_peak} vs {t_front}");
    }

    #[test]
    fn smaller_inertia_sharpens_the_step() {
        let t = 0.02;
        let gap = |eps: f64| {
            let p = MicroParams { inertia: eps, ..Default::default() };
            let s = full_ode_attack(&p, t).unwrap();
            (s.velocities.last().unwrap() - (p.power / p.solo_drag()).cbrt()).abs()
        };
        assert!(gap(0.001) < gap(0.005));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn closed_form_is_monotone(v_f in 0.5f64..2.0, power in 0.5f64..5.0, tau in 0.0f64..5.0, dt in 0.0f64..1.0) {
            let c = 1.43;
            let a = post_escape_velocity(tau, v_f, power, c, 1.0);
            let b = post_escape_velocity(tau + dt, v_f, power, c, 1.0);
            let (lo, hi) = (v_f.min(power / c), v_f.max(power / c));
            proptest::prop_assert!(a >= lo - 1e-12 && a <= hi + 1e-12);
            if v_f < power / c {
                proptest::prop_assert!(b >= a - 1e-12);
            } else {
                proptest::prop_assert!(b <= a + 1e-12);
            }
        }
    }
}
