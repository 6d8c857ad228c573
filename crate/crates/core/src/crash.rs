//! Crash involvement.
//!
//! A crash starts at some rider `k` and propagates backwards: rider `i ≥ k`
//! goes down with probability `kernel(i, k)`, riders ahead are untouched.
//! Crashes occur along the course with a given intensity, so exposure is an
//! expected involvement count rather than a probability, and may exceed one
//! for long or dangerous stages.

use std::fmt;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::numerics::{integrate_adaptive, SolverSettings};
use crate::{Error, Result};

/// Crashes per unit dimensionless distance.
#[derive(Clone)]
pub enum Intensity {
    Constant(f64),
    /// Position-dependent rate bounded above by `max_rate`.
    Varying { rate: Arc<dyn Fn(f64) -> f64 + Send + Sync>, max_rate: f64 },
}

impl fmt::Debug for Intensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Intensity::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            Intensity::Varying { max_rate, .. } => f.debug_struct("Varying").field("max_rate", max_rate).finish_non_exhaustive(),
        }
    }
}

impl Intensity {
    fn rate(&self, x: f64) -> f64 {
        match self {
            Intensity::Constant(c) => *c,
            Intensity::Varying { rate, .. } => rate(x),
        }
    }

    /// Expected number of crashes on `[a, b]`.
    fn mass(&self, a: f64, b: f64) -> f64 {
        match self {
            Intensity::Constant(c) => c * (b - a),
            Intensity::Varying { rate, .. } => {
                let s = SolverSettings::default().with_abs_tol(1e-13).with_rel_tol(1e-12);
                integrate_adaptive(|x| rate(x), a, b, &s).map(|q| q.value).unwrap_or(f64::NAN)
            }
        }
    }
}

/// Where a crash starts, over riders `1..=N`.
#[derive(Clone, Debug, PartialEq)]
pub enum StartDistribution {
    Uniform,
    PointMass(usize),
    /// Probabilities for riders `1..=N`, in order.
    Weights(Vec<f64>),
}

/// Probability that rider `i` is caught up in a crash started by rider `k`.
#[derive(Clone)]
pub enum Kernel {
    /// `e^{-ω(i-k)}` for `i ≥ k`.
    Exponential,
    /// Everybody behind the start goes down.
    Step,
    Custom(Arc<dyn Fn(f64, usize) -> f64 + Send + Sync>),
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Exponential => f.write_str("Exponential"),
            Kernel::Step => f.write_str("Step"),
            Kernel::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CrashModel {
    pub omega: f64,
    pub intensity: Intensity,
    pub n_riders: usize,
    pub start_distribution: StartDistribution,
    pub kernel: Kernel,
}

impl Default for CrashModel {
    /// Two crashes per stage in a 75-rider field, `ω = 0.5`.
    fn default() -> Self {
        Self::new(0.5, 2.0, 75)
    }
}

impl CrashModel {
    /// Uniform start, exponential kernel, homogeneous intensity.
    pub fn new(omega: f64, intensity: f64, n_riders: usize) -> Self {
        Self {
            omega,
            intensity: Intensity::Constant(intensity),
            n_riders,
            start_distribution: StartDistribution::Uniform,
            kernel: Kernel::Exponential,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) {
            return Err(Error::domain(format!("omega must be positive, got {}", self.omega)));
        }
        if self.n_riders == 0 {
            return Err(Error::domain("crash model needs at least one rider"));
        }
        match &self.intensity {
            Intensity::Constant(c) if !(*c >= 0.0 && c.is_finite()) => {
                return Err(Error::domain(format!("crash intensity must be non-negative, got {c}")))
            }
            Intensity::Varying { max_rate, .. } if !(*max_rate >= 0.0 && max_rate.is_finite()) => {
                return Err(Error::domain(format!("max_rate must be non-negative, got {max_rate}")))
            }
            _ => {}
        }
        match &self.start_distribution {
            StartDistribution::Uniform => {}
            StartDistribution::PointMass(k) => {
                if *k < 1 || *k > self.n_riders {
                    return Err(Error::domain(format!("start rider {k} outside 1..={}", self.n_riders)));
                }
            }
            StartDistribution::Weights(w) => {
                if w.len() != self.n_riders {
                    return Err(Error::domain(format!("{} start weights for {} riders", w.len(), self.n_riders)));
                }
                if w.iter().any(|p| !(*p >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(Error::domain("start weights must be non-negative and sum to one"));
                }
            }
        }
        Ok(())
    }

    /// Homogeneous intensity, if that is what the model has.
    pub fn constant_intensity(&self) -> Option<f64> {
        match self.intensity {
            Intensity::Constant(c) => Some(c),
            Intensity::Varying { .. } => None,
        }
    }

    fn is_standard(&self) -> bool {
        matches!(self.start_distribution, StartDistribution::Uniform) && matches!(self.kernel, Kernel::Exponential)
    }

    fn start_prob(&self, k: usize) -> f64 {
        match &self.start_distribution {
            StartDistribution::Uniform => 1.0 / self.n_riders as f64,
            StartDistribution::PointMass(j) => f64::from(u8::from(*j == k)),
            StartDistribution::Weights(w) => w[k - 1],
        }
    }

    /// Kernel value for rider position `i` and start rider `k`.
    pub fn kernel_value(&self, i: f64, k: usize) -> f64 {
        match &self.kernel {
            Kernel::Exponential => propagation_prob(i, k as f64, self.omega),
            Kernel::Step => f64::from(u8::from(i >= k as f64)),
            Kernel::Custom(f) => {
                if i < k as f64 {
                    0.0
                } else {
                    f(i, k).clamp(0.0, 1.0)
                }
            }
        }
    }

    /// `Σ_k kernel(i, k) P(S_k)`.
    fn involvement_general(&self, i: f64) -> f64 {
        match &self.start_distribution {
            StartDistribution::PointMass(k) => self.kernel_value(i, *k),
            _ => (1..=self.n_riders).map(|k| self.kernel_value(i, k) * self.start_prob(k)).sum(),
        }
    }
}

/// Piecewise-constant drafting position along the course.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionTrace {
    /// Breakpoints `0 = x_0 < x_1 < … < x_m = 1`.
    breaks: Vec<f64>,
    /// Position on `[x_j, x_{j+1})`.
    positions: Vec<f64>,
}

impl PositionTrace {
    pub fn constant(position: f64) -> Result<Self> {
        Self::from_pieces(&[(1.0, position)])
    }

    /// Position `i` before the attack at `x_a`, the front afterwards.
    pub fn simple_attack(x_a: f64, position: f64) -> Result<Self> {
        check_unit("attack position", x_a)?;
        Self::from_pieces(&[(x_a, position), (1.0, 1.0)])
    }

    /// Pieces as `(end, position)` with increasing ends; the last must end at 1.
    /// Empty pieces are dropped.
    pub fn from_pieces(pieces: &[(f64, f64)]) -> Result<Self> {
        let mut breaks = vec![0.0];
        let mut positions = Vec::new();
        for &(end, pos) in pieces {
            if !(pos >= 1.0) {
                return Err(Error::domain(format!("drafting position must be >= 1, got {pos}")));
            }
            let start = *breaks.last().expect("non-empty");
            if end < start || end > 1.0 {
                return Err(Error::domain(format!("piece end {end} out of order or beyond 1")));
            }
            if end > start {
                breaks.push(end);
                positions.push(pos);
            }
        }
        if *breaks.last().expect("non-empty") != 1.0 {
            return Err(Error::domain("position trace must cover [0, 1]"));
        }
        Ok(Self { breaks, positions })
    }

    pub fn position_at(&self, x: f64) -> f64 {
        let j = self.breaks.partition_point(|&b| b <= x).saturating_sub(1);
        self.positions[j.min(self.positions.len() - 1)]
    }

    /// `(start, end, position)` for every piece.
    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.positions.iter().enumerate().map(|(j, &p)| (self.breaks[j], self.breaks[j + 1], p))
    }
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must lie in [0, 1], got {x}")))
    }
}

pub fn propagation_prob(i: f64, k: f64, omega: f64) -> f64 {
    if i < k {
        0.0
    } else {
        (-omega * (i - k)).exp()
    }
}

/// `(1 - e^{-ωi}) / (1 - e^{-ω})`, the sum `Σ_{j<i} e^{-ωj}` for integer `i`.
pub fn involvement_ratio(i: f64, omega: f64) -> f64 {
    (-omega * i).exp_m1() / (-omega).exp_m1()
}

/// `H(i; ω)`: probability that rider `i` goes down given a crash, uniform start.
pub fn involvement_given_crash(i: f64, omega: f64, n: usize) -> f64 {
    involvement_ratio(i, omega) / n as f64
}

/// Expected involvement along `trace`. Uses the closed form `H` for the
/// uniform-start exponential model and falls back to [`exposure_general`] otherwise.
pub fn exposure(trace: &PositionTrace, model: &CrashModel) -> Result<f64> {
    model.validate()?;
    if !model.is_standard() {
        return exposure_general(trace, model);
    }
    Ok(trace
        .pieces()
        .map(|(a, b, i)| model.intensity.mass(a, b) * involvement_given_crash(i, model.omega, model.n_riders))
        .sum())
}

/// Exposure when riding at position `i` until `x_a` and at the front afterwards.
pub fn exposure_simple(x_a: f64, i: f64, model: &CrashModel) -> Result<f64> {
    check_unit("attack position", x_a)?;
    match model.constant_intensity() {
        Some(c) if model.is_standard() => {
            model.validate()?;
            let n = model.n_riders as f64;
            Ok(c / n * (x_a * involvement_ratio(i, model.omega) + 1.0 - x_a))
        }
        _ => exposure(&PositionTrace::simple_attack(x_a, i)?, model),
    }
}

/// Exposure by total probability over the start distribution and kernel.
pub fn exposure_general(trace: &PositionTrace, model: &CrashModel) -> Result<f64> {
    model.validate()?;
    Ok(trace.pieces().map(|(a, b, i)| model.intensity.mass(a, b) * model.involvement_general(i)).sum())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub trials: u64,
}

impl MonteCarloEstimate {
    /// Standardised distance to a reference value; zero when both agree exactly.
    pub fn z_score(&self, reference: f64) -> f64 {
        let d = self.estimate - reference;
        if d == 0.0 {
            0.0
        } else {
            d / self.std_error
        }
    }
}

/// Simulates whole races and counts the rider's crash involvements.
///
/// Trial `j` draws from its own stream `j` of a generator seeded by `seed`,
/// so the estimate does not depend on how trials are scheduled.
pub fn monte_carlo_exposure(
    trace: &PositionTrace,
    model: &CrashModel,
    trials: u64,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    model.validate()?;
    if trials == 0 {
        return Err(Error::domain("monte carlo needs at least one trial"));
    }
    let max_rate = match &model.intensity {
        Intensity::Constant(c) => *c,
        Intensity::Varying { max_rate, .. } => *max_rate,
    };
    let poisson = if max_rate > 0.0 {
        Some(Poisson::new(max_rate).map_err(|e| Error::domain(format!("crash intensity: {e}")))?)
    } else {
        None
    };
    let weighted = match &model.start_distribution {
        StartDistribution::Weights(w) => {
            Some(WeightedIndex::new(w).map_err(|e| Error::domain(format!("start weights: {e}")))?)
        }
        _ => None,
    };
    let thinning = matches!(model.intensity, Intensity::Varying { .. });

    let one_trial = |trial: u64| -> u64 {
        let Some(poisson) = &poisson else { return 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        let candidates = poisson.sample(&mut rng) as u64;
        let mut involved = 0;
        for _ in 0..candidates {
            let x: f64 = rng.random();
            if thinning && rng.random::<f64>() * max_rate >= model.intensity.rate(x) {
                continue;
            }
            let k = match (&model.start_distribution, &weighted) {
                (StartDistribution::PointMass(k), _) => *k,
                (_, Some(w)) => w.sample(&mut rng) + 1,
                _ => rng.random_range(1..=model.n_riders),
            };
            let p = model.kernel_value(trace.position_at(x), k);
            if rng.random::<f64>() < p {
                involved += 1;
            }
        }
        involved
    };

    let (sum, sum_sq) = (0..trials)
        .into_par_iter()
        .map(|t| {
            let c = one_trial(t);
            (c, c * c)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = trials as f64;
    let mean = sum as f64 / n;
    let var = if trials > 1 { ((sum_sq as f64 - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    Ok(MonteCarloEstimate { estimate: mean, std_error: (var / n).sqrt(), trials })
}
