//! One function per subcommand. Each returns a table plus the exit code it
//! earned; sweeps evaluate their points in parallel and keep input order.

use rayon::prelude::*;

use breakaway_core::crash::{exposure_simple, monte_carlo_exposure, CrashModel, PositionTrace};
use breakaway_core::fatigue::optimize_fatigue;
use breakaway_core::flat::{
    critical_risk, min_attack_position, minimum_winning_energy, minimum_winning_risk, optimal_attack, StrategyProblem,
};
use breakaway_core::micro::{composite_deviation, full_ode_attack, layer_solution, LayerOrder, MicroParams};
use breakaway_core::model::{scale_factors, DragParams, PelotonConfig, PhysicalParams, PowerProfile, ScaleSet};
use breakaway_core::numerics::OdeMethod;
use breakaway_core::terrain::{simulate_breakaway, BreakawayOutcome, CourseProfile, RiderSpec, TerrainOptions, Trajectory};
use breakaway_core::Error;

use crate::config::{Config, ConfigError};
use crate::table::{Cell, ResultTable};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;
pub const EXIT_GATE: u8 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub code: u8,
    /// Short tag for the status column.
    pub status: &'static str,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, status: "config", message: message.into() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::usage(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, status) = match &e {
            Error::Domain(_) => (EXIT_USAGE, "domain"),
            Error::Parse { .. } => (EXIT_USAGE, "parse"),
            Error::InfeasibleAttack { .. } => (EXIT_USAGE, "infeasible-attack"),
            Error::Infeasible(_) => (EXIT_NUMERICAL, "infeasible"),
            Error::NoBracket { .. } => (EXIT_NUMERICAL, "no-bracket"),
            Error::Tolerance(_) => (EXIT_NUMERICAL, "tolerance"),
            Error::StepUnderflow { .. } => (EXIT_NUMERICAL, "step-underflow"),
            Error::Stall { .. } => (EXIT_NUMERICAL, "stall"),
            Error::NeverFinishes(_) => (EXIT_NUMERICAL, "never-finishes"),
            Error::NeverReachesFront(_) => (EXIT_NUMERICAL, "never-reaches-front"),
        };
        Self { code, status, message: e.to_string() }
    }
}

/// A computed row, possibly flagged by a diagnostic or statistical check.
pub struct Row {
    cells: Vec<Cell>,
    flag: Option<Failure>,
}

impl Row {
    fn ok(cells: Vec<Cell>) -> Self {
        Self { cells, flag: None }
    }
}

pub struct Outcome {
    pub table: ResultTable,
    pub exit: u8,
    /// Messages for stderr.
    pub notes: Vec<String>,
}

type RowFn = fn(&Config) -> Result<Row, Failure>;

/// Runs `row` once, or once per sweep value with the swept key as first column.
fn tabulate(cfg: &Config, columns: &[&str], row: RowFn) -> Result<Outcome, Failure> {
    let mut notes = Vec::new();
    let mut exit = 0;
    let Some((key, values)) = cfg.sweep()? else {
        let r = row(cfg)?;
        let mut table = ResultTable::new(&[columns, &["status"]].concat());
        let status = r.flag.as_ref().map_or("ok", |f| f.status);
        if let Some(f) = &r.flag {
            exit = f.code;
            notes.push(f.message.clone());
        }
        table.push([r.cells, vec![status.into()]].concat());
        return Ok(Outcome { table, exit, notes });
    };
    let results: Vec<Result<Row, Failure>> =
        values.par_iter().map(|&v| cfg.with_value(key, v).map_err(Failure::from).and_then(|c| row(&c))).collect();
    let mut table = ResultTable::new(&[&[key], columns, &["status"]].concat());
    for (v, r) in values.iter().zip(results) {
        let (cells, flag) = match r {
            Ok(r) => (r.cells, r.flag),
            Err(f) => (vec![Cell::Missing; columns.len()], Some(f)),
        };
        let status = flag.as_ref().map_or("ok", |f| f.status);
        if let Some(f) = flag {
            exit = exit.max(f.code);
            notes.push(format!("{key} = {v}: {}", f.message));
        }
        table.push([vec![Cell::Num(*v)], cells, vec![status.into()]].concat());
    }
    Ok(Outcome { table, exit, notes })
}

fn crash_model(cfg: &Config) -> CrashModel {
    CrashModel::new(cfg.float("crash.omega"), cfg.float("crash.intensity"), cfg.int("crash.riders") as usize)
}

fn strategy(cfg: &Config) -> Result<StrategyProblem, Failure> {
    let p = StrategyProblem {
        energy_budget: cfg.float("strategy.energy"),
        risk_index: cfg.float("strategy.risk"),
        position: cfg.float("rider.position"),
        cd_front: cfg.float("rider.cd_front"),
        cd_lurk: cfg.float("rider.cd_lurk"),
        crash: crash_model(cfg),
    };
    p.validate()?;
    p.crash.validate()?;
    Ok(p)
}

const FLAT_COLUMNS: &[&str] = &[
    "energy",
    "risk",
    "x_a_min",
    "x_a_opt",
    "p_a_opt",
    "time_gap",
    "exposure",
    "objective",
    "branch",
    "critical_risk",
    "energy_min",
    "risk_min",
];

fn flat_row(cfg: &Config) -> Result<Row, Failure> {
    let p = strategy(cfg)?;
    let opt = optimal_attack(&p)?;
    Ok(Row::ok(vec![
        p.energy_budget.into(),
        p.risk_index.into(),
        min_attack_position(&p).into(),
        opt.attack_position.into(),
        opt.attack_power.into(),
        opt.time_gap.into(),
        opt.exposure.into(),
        opt.objective.into(),
        opt.branch.as_str().into(),
        critical_risk(&p)?.into(),
        minimum_winning_energy(p.risk_index, &p)?.into(),
        minimum_winning_risk(p.energy_budget, &p)?.into(),
    ]))
}

pub fn flat(cfg: &Config) -> Result<Outcome, Failure> {
    tabulate(cfg, FLAT_COLUMNS, flat_row)
}

const FATIGUE_COLUMNS: &[&str] = &[
    "mu",
    "energy",
    "risk",
    "x_a_opt",
    "p_max_opt",
    "t_f_opt",
    "time_gap",
    "exposure",
    "objective",
    "branch",
    "converged",
    "iterations",
    "energy_residual",
    "position_residual",
];

fn fatigue_row(cfg: &Config) -> Result<Row, Failure> {
    let p = strategy(cfg)?;
    let mu = cfg.float("fatigue.mu");
    let r = optimize_fatigue(&p, mu, cfg.float("fatigue.p_sustain"))?;
    let flag = (!r.converged).then(|| Failure {
        code: EXIT_NUMERICAL,
        status: "not-converged",
        message: format!("inner solve did not converge (energy residual {:e})", r.energy_residual),
    });
    let cells = vec![
        mu.into(),
        p.energy_budget.into(),
        p.risk_index.into(),
        r.attack_position.into(),
        r.peak_power.into(),
        r.finish_time.into(),
        r.time_gap.into(),
        r.exposure.into(),
        r.objective.into(),
        r.branch.as_str().into(),
        Cell::Int(i64::from(r.converged)),
        Cell::Int(r.iterations as i64),
        r.energy_residual.into(),
        r.position_residual.into(),
    ];
    Ok(Row { cells, flag })
}

pub fn fatigue(cfg: &Config) -> Result<Outcome, Failure> {
    tabulate(cfg, FATIGUE_COLUMNS, fatigue_row)
}

const CRASH_COLUMNS: &[&str] = &["attack_position", "position", "analytic", "estimate", "std_error", "z_score", "trials"];

fn crash_row(cfg: &Config) -> Result<Row, Failure> {
    let model = crash_model(cfg);
    let (x_a, i) = (cfg.float("crash_mc.attack_position"), cfg.float("rider.position"));
    let trials = cfg.int("run.trials");
    let analytic = exposure_simple(x_a, i, &model)?;
    let trace = PositionTrace::simple_attack(x_a, i)?;
    let mc = monte_carlo_exposure(&trace, &model, trials, cfg.int("run.seed"))?;
    let z = mc.z_score(analytic);
    let z_max = cfg.float("crash_mc.z_max");
    let flag = (z.abs() > z_max || z.is_nan()).then(|| Failure {
        code: EXIT_GATE,
        status: "gate",
        message: format!("Monte Carlo estimate {} is {z:.3} standard errors from {analytic} (limit {z_max})", mc.estimate),
    });
    let cells = vec![
        x_a.into(),
        i.into(),
        analytic.into(),
        mc.estimate.into(),
        mc.std_error.into(),
        z.into(),
        Cell::Int(mc.trials as i64),
    ];
    Ok(Row { cells, flag })
}

pub fn crash_mc(cfg: &Config) -> Result<Outcome, Failure> {
    if cfg.int("run.trials") == 0 {
        return Err(Failure::usage("run.trials must be at least 1"));
    }
    tabulate(cfg, CRASH_COLUMNS, crash_row)
}

fn course(cfg: &Config) -> Result<CourseProfile, Failure> {
    let spec = cfg.str("terrain.course");
    let profile = match spec {
        "demo" => CourseProfile::demo_hills(),
        "flat" => CourseProfile::Flat,
        s if s.starts_with("grade:") => {
            let g = s["grade:".len()..]
                .parse::<f64>()
                .map_err(|_| Failure::usage(format!("terrain.course: bad grade in `{s}`")))?;
            CourseProfile::Grade(g)
        }
        path => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("cannot read course file {path}: {e}")))?;
            CourseProfile::parse_table(&text).map_err(|e| Failure::usage(format!("course file {path}: {e}")))?
        }
    };
    profile.validate()?;
    Ok(profile)
}

fn terrain_setup(cfg: &Config) -> Result<(CourseProfile, RiderSpec, ScaleSet, TerrainOptions), Failure> {
    let base = scale_factors(&PhysicalParams::default(), &PelotonConfig::default())?;
    let scales = ScaleSet {
        inertia: cfg.float("model.epsilon"),
        gravity_ratio: cfg.float_or_auto("terrain.gravity_ratio").unwrap_or(base.gravity_ratio),
        ..base
    };
    let rider = RiderSpec {
        cd_front: cfg.float("rider.cd_front"),
        cd_lurk: cfg.float("rider.cd_lurk"),
        mass_ratio: cfg.float("rider.mass_ratio"),
    };
    let method = if cfg.str("terrain.method") == "bdf2" { OdeMethod::Bdf2 } else { OdeMethod::DormandPrince45 };
    let opts = TerrainOptions { method, ..TerrainOptions::default() }
        .with_tolerances(cfg.float("terrain.rtol"), cfg.float("terrain.atol"));
    Ok((course(cfg)?, rider, scales, opts))
}

fn run_terrain(cfg: &Config) -> Result<BreakawayOutcome, Failure> {
    let (profile, rider, scales, opts) = terrain_setup(cfg)?;
    let power = PowerProfile::constant(cfg.float("terrain.attack_power"));
    Ok(simulate_breakaway(cfg.float("terrain.attack_position"), &power, &rider, &profile, &scales, &opts)?)
}

/// About `samples` evenly strided indices of `0..n`, always keeping both ends.
fn decimate(n: usize, samples: usize) -> Vec<usize> {
    let samples = samples.max(2);
    if n <= samples {
        return (0..n).collect();
    }
    let stride = (n - 1).div_ceil(samples - 1);
    let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
    if idx.last() != Some(&(n - 1)) {
        idx.push(n - 1);
    }
    idx
}

const TERRAIN_SUMMARY: &[&str] =
    &["attack_position", "attack_power", "peloton_finish", "rider_finish", "time_gap", "rider_energy", "attack_time", "caught_at"];

fn terrain_summary(cfg: &Config, out: &BreakawayOutcome) -> Vec<Cell> {
    vec![
        cfg.float("terrain.attack_position").into(),
        cfg.float("terrain.attack_power").into(),
        out.peloton.finish_time.into(),
        out.rider.finish_time.into(),
        out.time_gap.into(),
        out.rider_energy.into(),
        out.attack_time.into(),
        out.caught_at.into(),
    ]
}

fn terrain_row(cfg: &Config) -> Result<Row, Failure> {
    let out = run_terrain(cfg)?;
    Ok(Row::ok(terrain_summary(cfg, &out)))
}

pub fn terrain(cfg: &Config) -> Result<Outcome, Failure> {
    if cfg.sweep()?.is_some() {
        return tabulate(cfg, TERRAIN_SUMMARY, terrain_row);
    }
    let out = run_terrain(cfg)?;
    let mut table = ResultTable::new(&["series", "t", "x", "v", "power", "energy"]);
    let samples = cfg.int("terrain.samples") as usize;
    let mut emit = |name: &str, tr: &Trajectory| {
        for k in decimate(tr.len(), samples) {
            table.push(vec![
                name.into(),
                tr.times[k].into(),
                tr.positions[k].into(),
                tr.velocities[k].into(),
                tr.powers[k].into(),
                tr.cumulative_energy[k].into(),
            ]);
        }
    };
    emit("rider", &out.rider);
    emit("peloton", &out.peloton);
    table.summary = TERRAIN_SUMMARY.iter().map(|s| s.to_string()).zip(terrain_summary(cfg, &out)).collect();
    table.summary.push(("peloton_energy".into(), out.peloton.final_energy().into()));
    table.summary.push(("finish_time_error".into(), out.rider.finish_time_error.into()));
    Ok(Outcome { table, exit: 0, notes: Vec::new() })
}

fn micro_params(cfg: &Config) -> MicroParams {
    let base = PelotonConfig::default();
    MicroParams {
        position: cfg.float("rider.position"),
        power: cfg.float("micro.power"),
        mass_ratio: cfg.float("rider.mass_ratio"),
        gamma_ratio: cfg.float("micro.gamma_ratio"),
        inertia: cfg.float("model.epsilon"),
        peloton: PelotonConfig { drag: DragParams { decay: cfg.float("model.decay"), ..base.drag }, ..base },
        order: if cfg.str("micro.order") == "leading" { LayerOrder::Leading } else { LayerOrder::TwoTerm },
    }
}

const MICRO_SUMMARY: &[&str] = &[
    "epsilon",
    "passage_duration",
    "front_speed",
    "front_time",
    "terminal_speed",
    "max_rel_deviation",
    "deviation_over_epsilon",
    "interior_maxima",
];

struct MicroRun {
    series: breakaway_core::micro::VelocitySeries,
    layers: breakaway_core::micro::LayerSolution,
    summary: Vec<Cell>,
}

fn run_micro(cfg: &Config) -> Result<MicroRun, Failure> {
    let p = micro_params(cfg);
    p.validate()?;
    if p.inertia.is_nan() || p.inertia <= 0.0 {
        return Err(Failure::usage("microstructure needs model.epsilon > 0"));
    }
    let layers = layer_solution(&p)?;
    let series = full_ode_attack(&p, cfg.float("micro.duration") * p.inertia)?;
    let dev = composite_deviation(&layers, &series);
    let summary = vec![
        p.inertia.into(),
        layers.passage_duration.into(),
        layers.front_speed.into(),
        layers.front_time().into(),
        layers.terminal_speed.into(),
        dev.into(),
        (dev / p.inertia).into(),
        Cell::Int(series.interior_maxima().len() as i64),
    ];
    Ok(MicroRun { series, layers, summary })
}

fn micro_row(cfg: &Config) -> Result<Row, Failure> {
    Ok(Row::ok(run_micro(cfg)?.summary))
}

pub fn microstructure(cfg: &Config) -> Result<Outcome, Failure> {
    if cfg.sweep()?.is_some() {
        return tabulate(cfg, MICRO_SUMMARY, micro_row);
    }
    let run = run_micro(cfg)?;
    let mut table = ResultTable::new(&["t", "v_full", "v_composite", "rel_deviation"]);
    let s = &run.series;
    for k in decimate(s.times.len(), cfg.int("micro.samples") as usize) {
        let (t, v) = (s.times[k], s.velocities[k]);
        let c = run.layers.composite_velocity(t);
        table.push(vec![t.into(), v.into(), c.into(), ((c - v).abs() / v).into()]);
    }
    table.summary = MICRO_SUMMARY.iter().map(|s| s.to_string()).zip(run.summary).collect();
    Ok(Outcome { table, exit: 0, notes: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(pairs: &[&str]) -> Config {
        let mut c = Config::default();
        for p in pairs {
            c.set_pair(p).unwrap();
        }
        c
    }

    fn column(t: &ResultTable, name: &str) -> Vec<Cell> {
        let j = t.columns.iter().position(|c| c == name).unwrap();
        t.rows.iter().map(|r| r[j].clone()).collect()
    }

    fn failure(r: Result<Outcome, Failure>) -> Failure {
        match r {
            Err(f) => f,
            Ok(_) => panic!("expected a failure"),
        }
    }

    fn num(c: &Cell) -> f64 {
        match c {
            Cell::Num(v) => *v,
            other => panic!("not a number: {other:?}"),
        }
    }

    fn summary(t: &ResultTable, key: &str) -> f64 {
        num(&t.summary.iter().find(|(k, _)| k == key).unwrap().1)
    }

    #[test]
    fn decimation_keeps_ends() {
        assert_eq!(decimate(5, 10), vec![0, 1, 2, 3, 4]);
        assert_eq!(decimate(10, 4), vec![0, 3, 6, 9]);
        assert_eq!(decimate(11, 4), vec![0, 4, 8, 10]);
    }

    #[test]
    fn flat_default_reports_the_critical_risk() {
        let out = flat(&Config::default()).unwrap();
        assert_eq!(out.exit, 0);
        assert!((num(&column(&out.table, "critical_risk")[0]) - 0.0949).abs() < 5e-4);
    }

    #[test]
    fn invalid_strategy_is_a_usage_error() {
        let err = failure(flat(&cfg(&["strategy.risk=1.5"])));
        assert_eq!(err.code, EXIT_USAGE);
    }

    #[test]
    fn sweep_rows_follow_input_order() {
        let out = flat(&cfg(&["sweep.param=strategy.risk", "sweep.points=6"])).unwrap();
        let risks: Vec<f64> = column(&out.table, "risk").iter().map(num).collect();
        assert_eq!(risks.len(), 6);
        assert!(risks.iter().enumerate().all(|(k, r)| (r - k as f64 / 5.0).abs() < 1e-15));
        assert_eq!(out.table.columns[0], "strategy.risk");
    }

    #[test]
    fn fatigue_small_mu_matches_flat() {
        let c = cfg(&["fatigue.mu=0.001", "strategy.energy=1.25", "strategy.risk=0.8"]);
        let f = num(&column(&fatigue(&c).unwrap().table, "x_a_opt")[0]);
        let x = num(&column(&flat(&c).unwrap().table, "x_a_opt")[0]);
        assert!((f - x).abs() < 1e-2);
    }

    #[test]
    fn crash_gate_and_limits() {
        let zero = crash_mc(&cfg(&["crash.intensity=0", "run.trials=1000"])).unwrap();
        assert_eq!(zero.exit, 0);
        assert_eq!(num(&column(&zero.table, "analytic")[0]), 0.0);
        assert_eq!(num(&column(&zero.table, "estimate")[0]), 0.0);
        // a strict gate must trip on sampling noise
        let strict = crash_mc(&cfg(&["run.trials=1000", "crash_mc.z_max=0"])).unwrap();
        assert_eq!(strict.exit, EXIT_GATE);
        let wide = crash_mc(&cfg(&["crash.omega=10", "run.trials=20000"])).unwrap();
        assert!((num(&column(&wide.table, "analytic")[0]) - 2.0 / 75.0).abs() < 1e-3);
        assert_eq!(failure(crash_mc(&cfg(&["run.trials=0"]))).code, EXIT_USAGE);
    }

    #[test]
    fn terrain_flat_course_matches_flat_model() {
        let c = cfg(&["terrain.course=flat", "model.epsilon=0", "terrain.attack_power=2.5", "terrain.attack_position=0.4"]);
        let out = terrain(&c).unwrap();
        let v = (2.5f64 / 1.43).cbrt();
        assert!((summary(&out.table, "time_gap") - (0.6 - 0.6 / v)).abs() < 1e-6);
        assert!((summary(&out.table, "peloton_finish") - 1.0).abs() < 1e-9);
    }

    #[test]
    fn terrain_demo_and_zero_attack() {
        let out = terrain(&Config::default()).unwrap();
        assert!(summary(&out.table, "time_gap") > 0.0);
        let idle = terrain(&cfg(&["terrain.attack_power=0"])).unwrap();
        assert_eq!(summary(&idle.table, "time_gap"), 0.0);
    }

    #[test]
    fn course_errors_are_usage_errors() {
        let err = failure(terrain(&cfg(&["terrain.course=/nonexistent/course.txt"])));
        assert_eq!(err.code, EXIT_USAGE);
        let err = failure(terrain(&cfg(&["terrain.course=grade:x"])));
        assert_eq!(err.code, EXIT_USAGE);
    }

    #[test]
    fn microstructure_bounds() {
        let out = microstructure(&Config::default()).unwrap();
        assert!(summary(&out.table, "deviation_over_epsilon") < 5.0);
        assert!((summary(&out.table, "terminal_speed") - (2.0f64 / 1.43).cbrt()).abs() < 1e-12);
        let front = microstructure(&cfg(&["rider.position=1"])).unwrap();
        assert_eq!(summary(&front.table, "passage_duration"), 0.0);
        assert_eq!(failure(microstructure(&cfg(&["model.epsilon=0"]))).code, EXIT_USAGE);
    }
}
