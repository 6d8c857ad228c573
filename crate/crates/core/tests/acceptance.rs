//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use breakaway_core::crash::{exposure_simple, monte_carlo_exposure, CrashModel, PositionTrace};
use breakaway_core::fatigue::{optimize_fatigue, p_max_from_budget, total_energy, FatigueParams};
use breakaway_core::flat::{
    attack_power, critical_risk, earliest_attack_position, optimal_attack, time_gap_from_position, win_frontier,
    StrategyProblem,
};
use breakaway_core::micro::{composite_deviation, full_ode_attack, layer_solution, MicroParams};
use breakaway_core::model::{scale_factors, PelotonConfig, PhysicalParams, PowerProfile, ScaleSet};
use breakaway_core::terrain::{simulate_breakaway, simulate_peloton, CourseProfile, RiderSpec, TerrainOptions};

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

const C1: f64 = 1.43;
const CI: f64 = 0.46;

fn betas(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 / (n - 1) as f64).collect()
}

fn non_decreasing(values: &[f64], tol: f64) -> bool {
    values.windows(2).all(|w| w[1] >= w[0] - tol)
}

fn c1_critical_risk() -> Outcome {
    let beta = critical_risk(&StrategyProblem::default()).unwrap();
    ((beta - 0.0949).abs() <= 5e-4, format!("β* = {beta:.6} (target 0.0949 ± 5e-4)"))
}

fn c2_energy_thresholds() -> Outcome {
    let p = StrategyProblem::default();
    let frontier = win_frontier(&p, &betas(101), &[0.3, 0.46, 0.47, 1.0, 1.42, 1.43, 2.0]).unwrap();
    let b_star = frontier.critical_risk;
    let crit_ok = frontier.energy_min.iter().filter(|(b, _)| *b <= b_star).all(|(_, e)| *e == C1);
    let min_ok = frontier.energy_min.iter().filter(|(b, _)| *b > b_star).all(|(_, e)| *e == CI);
    let risk = &frontier.risk_min;
    let risk_ok = risk.iter().all(|(e, b)| match b {
        None => *e <= CI,
        Some(b) if *e >= C1 => *b == 0.0,
        Some(b) => *e > CI && *b == b_star,
    });
    let (lo, hi) = frontier.energy_min.iter().fold((f64::MAX, f64::MIN), |(lo, hi), (_, e)| (lo.min(*e), hi.max(*e)));
    (
        crit_ok && min_ok && risk_ok,
        format!("E*_crit = {hi} and E*_min = {lo} from the frontier; β_min(E*) consistent: {risk_ok}"),
    )
}

fn c3_interior_structure() -> Outcome {
    let energies = [0.8, 1.0, 1.2, 1.4];
    let opts: Vec<_> = energies.iter().map(|&e| optimal_attack(&StrategyProblem::new(e, 0.8)).unwrap()).collect();
    let xs: Vec<f64> = opts.iter().map(|o| o.attack_position).collect();
    let ps: Vec<f64> = opts.iter().map(|o| o.attack_power).collect();
    // least-squares line through (E*, x_a†)
    let n = energies.len() as f64;
    let (se, sx) = (energies.iter().sum::<f64>(), xs.iter().sum::<f64>());
    let see: f64 = energies.iter().map(|e| e * e).sum();
    let sex: f64 = energies.iter().zip(&xs).map(|(e, x)| e * x).sum();
    let slope = (n * sex - se * sx) / (n * see - se * se);
    let icpt = (sx - slope * se) / n;
    let resid = energies.iter().zip(&xs).map(|(e, x)| (x - icpt - slope * e).abs()).fold(0.0, f64::max);
    let spread = ps.iter().fold(f64::MIN, |m, p| m.max(*p)) - ps.iter().fold(f64::MAX, |m, p| m.min(*p));
    let interior = opts.iter().all(|o| o.branch.as_str() == "interior");
    (
        interior && resid < 1e-8 && spread < 1e-8,
        format!("linear-fit residual {resid:.2e}, P_a† spread {spread:.2e} (P_a† = {:.6}), all interior: {interior}", ps[0]),
    )
}

/// Independent closed forms for the objective on the flat course.
fn objective_oracle(x: f64, e: f64, beta: f64) -> f64 {
    let (omega, crashes, n, i) = (0.5f64, 2.0, 75.0, 5.0);
    let h_i = (1.0 - (-omega * i).exp()) / (1.0 - (-omega).exp());
    let exposure = |x: f64| crashes / n * (x * h_i + (1.0 - x));
    let x_min = ((C1 - e) / (C1 - CI)).max(0.0);
    if x < x_min || e <= CI * x {
        return (1.0 - beta) * exposure(1.0);
    }
    let r = 1.0 - x;
    let gap = if x == x_min && x_min > 0.0 { 0.0 } else { (r - r.powf(1.5) * (C1 / (e - CI * x)).sqrt()).max(0.0) };
    -beta * gap + (1.0 - beta) * exposure(x)
}

fn c4_brute_force() -> Outcome {
    let n = 100_000usize;
    let h = 1.0 / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws: Vec<(f64, f64)> = (0..200).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.5..2.0))).collect();
    let worst = draws
        .par_iter()
        .map(|&(beta, e)| {
            let opt = optimal_attack(&StrategyProblem::new(e, beta)).unwrap();
            let (mut best_x, mut best_m) = (0.0, f64::INFINITY);
            for k in 0..n {
                let x = k as f64 * h;
                let m = objective_oracle(x, e, beta);
                if m < best_m {
                    best_m = m;
                    best_x = x;
                }
            }
            ((opt.attack_position - best_x).abs(), beta, e)
        })
        .reduce(|| (0.0, 0.0, 0.0), |a, b| if b.0 > a.0 { b } else { a });
    (
        worst.0 <= h,
        format!("max |Δx_a| = {:.3e} over 200 draws (grid spacing {h:.0e}; worst at β = {:.4}, E* = {:.4})", worst.0, worst.1, worst.2),
    )
}

fn c5_crash_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws: Vec<(f64, f64, usize, f64, f64)> = (0..20)
        .map(|_| {
            let n = rng.random_range(10..150usize);
            (rng.random_range(0.05..1.5), rng.random_range(0.5..5.0), n, rng.random_range(1..=n) as f64, rng.random_range(0.0..1.0))
        })
        .collect();
    let mut worst: f64 = 0.0;
    for (k, &(omega, intensity, n, i, x_a)) in draws.iter().enumerate() {
        let model = CrashModel::new(omega, intensity, n);
        let exact = exposure_simple(x_a, i, &model).unwrap();
        let trace = PositionTrace::simple_attack(x_a, i).unwrap();
        let mc = monte_carlo_exposure(&trace, &model, 1_000_000, 1000 + k as u64).unwrap();
        worst = worst.max(mc.z_score(exact).abs());
    }
    (worst < 4.0, format!("max |z| = {worst:.3} over 20 draws of 10^6 trials (bound 4)"))
}

fn fatigue_problem(beta: f64) -> StrategyProblem {
    StrategyProblem::new(1.25, beta)
}

fn c6_fatigue_limit() -> Outcome {
    let worst = betas(21)
        .par_iter()
        .map(|&beta| {
            let p = fatigue_problem(beta);
            let flat = optimal_attack(&p).unwrap().attack_position;
            let fat = optimize_fatigue(&p, 1e-3, CI).unwrap().attack_position;
            (flat - fat).abs()
        })
        .reduce(|| 0.0, f64::max);
    (worst < 1e-2, format!("max |Δx_a| = {worst:.3e} on 21 β values at μ = 1e-3 (bound 1e-2)"))
}

fn c7_fatigue_scaling() -> Outcome {
    let rows: Vec<(f64, f64, f64, f64)> = betas(21)
        .par_iter()
        .map(|&beta| {
            let p = fatigue_problem(beta);
            let pm = |mu: f64| optimize_fatigue(&p, mu, CI).unwrap().peak_power;
            (beta, pm(1.0), pm(10.0), pm(50.0))
        })
        .collect();
    let grows = rows.iter().all(|r| r.2 > r.1 && r.3 > r.2);
    let ratios: Vec<f64> = rows.iter().map(|r| r.2 / r.1).collect();
    let (lo, hi) = ratios.iter().fold((f64::MAX, f64::MIN), |(l, h), r| (l.min(*r), h.max(*r)));
    let failing: Vec<String> = rows.iter().zip(&ratios).filter(|(_, r)| **r <= 3.0).map(|(row, _)| format!("{:.2}", row.0)).collect();
    let order = rows.iter().map(|r| r.3 / 50.0).fold(f64::MAX, f64::min);
    (
        grows && lo > 3.0,
        format!(
            "P_max* grows with μ: {grows}; P_max*(50)/50 >= {order:.3}; P_max*(10)/P_max*(1) in [{lo:.3}, {hi:.3}], <= 3 at β = {}",
            if failing.is_empty() { "none".to_string() } else { failing.join(",") }
        ),
    )
}

fn terrain_scales(eps: f64) -> ScaleSet {
    let base = scale_factors(&PhysicalParams::default(), &PelotonConfig::default()).unwrap();
    ScaleSet { inertia: eps, ..base }
}

fn c8_terrain_reduction() -> Outcome {
    let scales = terrain_scales(1e-4);
    let opts = TerrainOptions::default();
    let grid: Vec<(f64, f64)> =
        [0.1, 0.3, 0.5, 0.7].iter().flat_map(|&x| [1.6, 2.0, 2.5, 3.2, 4.0].map(move |p| (x, p))).collect();
    let worst = grid
        .par_iter()
        .map(|&(x_a, p_a)| {
            let out = simulate_breakaway(x_a, &PowerProfile::constant(p_a), &RiderSpec::default(), &CourseProfile::Flat, &scales, &opts)
                .unwrap();
            // budget spent by this (x_a, P_a), then the closed-form gap
            let e = CI * x_a + p_a * (1.0 - x_a) / (p_a / C1).cbrt();
            let expected = time_gap_from_position(x_a, &StrategyProblem::new(e, 0.5)).unwrap();
            (out.time_gap - expected).abs()
        })
        .reduce(|| 0.0, f64::max);
    let t_p = simulate_peloton(&CourseProfile::Flat, &scales, &opts).unwrap().finish_time;
    (
        worst < 1e-4 && (t_p - 1.0).abs() <= 1e-3,
        format!("max |Δt − closed form| = {worst:.3e} on 20 (x_a, P_a) at ε = 1e-4 (bound 1e-4); t_p = {t_p:.12}"),
    )
}

fn c9_microstructure() -> Outcome {
    let p = MicroParams::default();
    let layers = layer_solution(&p).unwrap();
    let series = full_ode_attack(&p, 20.0 * p.inertia).unwrap();
    let dev = composite_deviation(&layers, &series);
    let long = full_ode_attack(&p, 60.0 * p.inertia).unwrap();
    let v_inf = (p.power / C1).cbrt();
    let term_err = (layers.terminal_speed - v_inf).abs().max((long.velocities.last().unwrap() - v_inf).abs());
    let maxima = series.interior_maxima().len();
    (
        dev < 5.0 * p.inertia && term_err < 1e-6 && maxima == 1,
        format!(
            "max relative deviation {dev:.3e} = {:.3}ε (bound 5ε); terminal speed error {term_err:.2e}; interior maxima: {maxima}",
            dev / p.inertia
        ),
    )
}

fn c10_qualitative() -> Outcome {
    let bs = betas(21);
    let mut notes = Vec::new();
    let mut ok = true;
    for e in [0.8, 1.0, 1.2, 1.5] {
        let res: Vec<_> = bs.iter().map(|&b| optimal_attack(&StrategyProblem::new(e, b)).unwrap()).collect();
        let xs: Vec<f64> = res.iter().map(|r| r.attack_position).collect();
        let gaps: Vec<f64> = res.iter().map(|r| r.time_gap).collect();
        ok &= non_decreasing(&xs, 1e-12) && non_decreasing(&gaps, 1e-12);
    }
    notes.push(format!("x_a*, Δt monotone in β: {ok}"));
    let energies: Vec<f64> = (0..21).map(|k| 0.5 + 1.5 * k as f64 / 20.0).collect();
    let mut e_ok = true;
    for b in [0.05, 0.3, 0.8] {
        let gaps: Vec<f64> =
            energies.iter().map(|&e| optimal_attack(&StrategyProblem::new(e, b)).unwrap().time_gap).collect();
        e_ok &= non_decreasing(&gaps, 1e-12);
    }
    notes.push(format!("Δt monotone in E*: {e_ok}"));
    let omegas: Vec<f64> = (0..11).map(|k| 0.1 + 0.09 * k as f64).collect();
    let mut w_ok = true;
    for (b, e) in [(0.5, 1.2), (0.8, 1.5), (0.3, 1.1)] {
        let res: Vec<_> = omegas
            .iter()
            .map(|&w| {
                let p = StrategyProblem { crash: CrashModel::new(w, 2.0, 75), ..StrategyProblem::new(e, b) };
                optimal_attack(&p).unwrap()
            })
            .collect();
        let xs: Vec<f64> = res.iter().map(|r| r.attack_position).collect();
        let gaps: Vec<f64> = res.iter().map(|r| r.time_gap).collect();
        w_ok &= non_decreasing(&xs, 1e-12) && non_decreasing(&gaps, 1e-12);
    }
    notes.push(format!("smaller ω never later/larger: {w_ok}"));
    let mus = [1e-3, 0.01, 0.1, 0.3, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 20.0];
    let mu_ok = [0.3, 0.6, 1.0].par_iter().all(|&b| {
        let p = fatigue_problem(b);
        let xs: Vec<f64> = mus.iter().map(|&mu| optimize_fatigue(&p, mu, CI).unwrap().attack_position).collect();
        non_decreasing(&xs, 1e-6)
    });
    notes.push(format!("larger μ never earlier: {mu_ok}"));
    (ok && e_ok && w_ok && mu_ok, notes.join("; "))
}

fn c11_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_power: f64 = 0.0;
    let mut worst_budget: f64 = 0.0;
    let mut worst_books: f64 = 0.0;
    for _ in 0..500 {
        let e = rng.random_range(0.6..1.42);
        let p = StrategyProblem::new(e, 0.5);
        let p_a = rng.random_range(1.5..6.0);
        let x = earliest_attack_position(p_a, &p).unwrap();
        if x > 0.0 && x < 1.0 {
            worst_power = worst_power.max((attack_power(x, &p).unwrap() - p_a).abs() / p_a);
            // flat bookkeeping: t_a = x_a at unit peloton speed
            let t_f = x + (1.0 - x) / (p_a / C1).cbrt();
            worst_books = worst_books.max((CI * x + p_a * (t_f - x) - e).abs());
        }
        let mu = rng.random_range(0.0..20.0);
        let x_a = rng.random_range(0.0..0.9);
        let t_f = rng.random_range(x_a + 0.05..1.0);
        let budget = rng.random_range(CI * x_a + 0.46 * (t_f - x_a) + 0.01..3.0);
        let pm = p_max_from_budget(budget, x_a, t_f, CI, CI, mu).unwrap();
        let params = FatigueParams { p_max: pm, p_sustain: CI, p_lurk: CI, mu, attack_time: x_a };
        worst_budget = worst_budget.max((total_energy(x_a, t_f, &params).unwrap() - budget).abs());
    }
    (
        worst_power < 1e-10 && worst_budget < 1e-10 && worst_books < 1e-10,
        format!("attack_power∘earliest {worst_power:.1e}; total_energy∘p_max_from_budget {worst_budget:.1e}; bookkeeping {worst_books:.1e} (bound 1e-10)"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("critical risk", c1_critical_risk),
        ("energy thresholds", c2_energy_thresholds),
        ("interior-optimum structure", c3_interior_structure),
        ("brute-force equivalence", c4_brute_force),
        ("crash oracle", c5_crash_oracle),
        ("fatigue limit", c6_fatigue_limit),
        ("fatigue scaling", c7_fatigue_scaling),
        ("terrain reduction", c8_terrain_reduction),
        ("microstructure agreement", c9_microstructure),
        ("qualitative properties", c10_qualitative),
        ("round-trip identities", c11_round_trips),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = run();
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} {} {name}: {detail} [{:.1} s]",
            k + 1,
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
