//! Scenario runner behind the `regprod` binary.
//!
//! Each subcommand reads a JSON run configuration, solves or simulates, and
//! writes CSV trajectories plus `summary.json` / `residuals.json` into the
//! output directory. Exit codes: 0 success, 1 invalid input, 2 numerical or
//! I/O failure; failures print a one-line JSON object on stderr.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::contract::{
    effective_aversions, gradient_coupling, lambda_pair, OracleOptions, RateMap,
};
use crate::mc::{self, Deviation, McError, SimConfig};
use crate::model::{Firm, ModelKind, ModelParams, ParamError, RawParams, StateVector};
use crate::nash::{self, NashError, OpponentStrategy};
use crate::ode::{OdeError, TimeGrid, DEFAULT_NODES};
use crate::riccati::{self, QuadraticValueFn, RiccatiError};
use crate::verify::{self, GridSpec, SupError};

#[derive(Debug, Parser)]
#[command(name = "regprod", version, about = "Optimal contracts and duopoly equilibria")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scenario {
    SingleFirm,
    TwoFirm,
    Nash,
    BestResponse,
    Verify,
    Simulate,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimal contract for one firm running two technologies.
    SingleFirm(CommonArgs),
    /// Optimal contract for two regulated firms.
    TwoFirm(CommonArgs),
    /// Feedback Nash equilibrium of the unregulated duopoly.
    Nash(CommonArgs),
    /// Best responses against deterministic opponent controls.
    BestResponse(CommonArgs),
    /// HJB residuals and derivative checks for the configured model.
    Verify(CommonArgs),
    /// Monte Carlo utilities for the configured model.
    Simulate(CommonArgs),
}

#[derive(Debug, clap::Args)]
struct CommonArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed; overrides `numerics.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the alternative sign conventions of the model primitives.
    #[arg(long)]
    literal_signs: bool,
}

impl Command {
    fn split(self) -> (Scenario, CommonArgs) {
        match self {
            Command::SingleFirm(a) => (Scenario::SingleFirm, a),
            Command::TwoFirm(a) => (Scenario::TwoFirm, a),
            Command::Nash(a) => (Scenario::Nash, a),
            Command::BestResponse(a) => (Scenario::BestResponse, a),
            Command::Verify(a) => (Scenario::Verify, a),
            Command::Simulate(a) => (Scenario::Simulate, a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    pub n_nodes: usize,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub grid_bound: f64,
    pub grid_points: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        let sim = SimConfig::default();
        let grid = GridSpec::default();
        Numerics {
            n_nodes: DEFAULT_NODES,
            dt: sim.dt,
            n_paths: sim.n_paths,
            seed: sim.seed,
            antithetic: sim.antithetic,
            grid_bound: grid.bound,
            grid_points: grid.n_points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationSpec {
    pub firm: u8,
    #[serde(default = "unit")]
    pub scale: f64,
    #[serde(default)]
    pub shift: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Simulation {
    pub x0: [f64; 2],
    pub y0: [f64; 2],
    pub deviations: Vec<DeviationSpec>,
    /// Write per-path payoffs to `paths.csv`.
    pub dump_paths: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BestResponseSpec {
    pub firm: u8,
    pub opponents: Vec<OpponentStrategy>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: RawParams,
    pub numerics: Numerics,
    pub best_response: Option<BestResponseSpec>,
    pub simulation: Simulation,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Validation { message: String, field: Option<String> },
    Numerical(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Validation { .. } => 1,
            CliError::Numerical(_) | CliError::Io(_) => 2,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Usage(m) => json!({"error": "usage", "message": m}),
            CliError::Validation { message, field } => {
                json!({"error": "validation", "field": field, "message": message})
            }
            CliError::Numerical(m) => json!({"error": "numerical", "message": m}),
            CliError::Io(m) => json!({"error": "io", "message": m}),
        }
    }

    fn validation(message: impl Into<String>, field: Option<&str>) -> Self {
        CliError::Validation {
            message: message.into(),
            field: field.map(str::to_string),
        }
    }
}

impl From<ParamError> for CliError {
    fn from(e: ParamError) -> Self {
        CliError::validation(e.to_string(), e.field())
    }
}

impl From<OdeError> for CliError {
    fn from(e: OdeError) -> Self {
        match e {
            OdeError::BlowUp { .. } => CliError::Numerical(e.to_string()),
            OdeError::InvalidGrid(_) => CliError::validation(e.to_string(), Some("n_nodes")),
        }
    }
}

impl From<RiccatiError> for CliError {
    fn from(e: RiccatiError) -> Self {
        match e {
            RiccatiError::Params(p) => p.into(),
            RiccatiError::Ode(o) => o.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<NashError> for CliError {
    fn from(e: NashError) -> Self {
        match e {
            NashError::Params(p) => p.into(),
            NashError::Ode(o) => o.into(),
            NashError::BlowUp { .. } => CliError::Numerical(e.to_string()),
            NashError::InvalidOpponent(_) => CliError::validation(e.to_string(), Some("opponents")),
        }
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::Params(p) => p.into(),
            McError::InvalidConfig(_) => CliError::validation(e.to_string(), Some("numerics")),
            McError::ConfigMismatch(_) | McError::NonFinitePath { .. } | McError::Empty => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

impl From<SupError> for CliError {
    fn from(e: SupError) -> Self {
        match e {
            SupError::Params(p) => p.into(),
            SupError::Oracle(o) => CliError::Numerical(o.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Formats a float so that parsing the text gives back the same bits.
fn fmt_float(v: f64) -> String {
    format!("{v:?}")
}

/// Writes a header row and then one row per record, `\n`-terminated, with
/// round-trip float formatting.
pub fn emit_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> std::io::Result<()> {
    if let Some(bad) = rows.iter().find(|r| r.len() != header.len()) {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            format!("row of length {} under a {}-column header", bad.len(), header.len()),
        ));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| fmt_float(*v)))?;
    }
    w.flush()
}

/// Reads a file written by [`emit_csv`].
pub fn read_csv(path: &Path) -> std::io::Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn new(dir: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Output { dir })
    }

    fn csv(&self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        emit_csv(&path, header, rows).map_err(|e| io_err(&path, e))
    }

    fn json(&self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(&path, e))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| io_err(&path, e))
    }
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::validation(e.to_string(), None))
}

fn scenario_kind(s: Scenario) -> Option<ModelKind> {
    match s {
        Scenario::SingleFirm => Some(ModelKind::SingleFirm),
        Scenario::TwoFirm => Some(ModelKind::TwoFirmRegulated),
        Scenario::Nash | Scenario::BestResponse => Some(ModelKind::TwoFirmNash),
        Scenario::Verify | Scenario::Simulate => None,
    }
}

fn build_params(scenario: Scenario, cfg: &RunConfig, literal: bool) -> Result<ModelParams, CliError> {
    let mut raw = cfg.model.clone();
    if let Some(kind) = scenario_kind(scenario) {
        match raw.kind {
            None => raw.kind = Some(kind),
            Some(k) if k != kind => {
                return Err(CliError::validation(
                    format!("model kind {k:?} does not match the subcommand"),
                    Some("kind"),
                ))
            }
            Some(_) => {}
        }
    }
    if literal {
        raw.literal_signs = Some(true);
    }
    Ok(raw.validate()?)
}

fn grid_spec(n: &Numerics) -> Result<GridSpec, CliError> {
    if !(n.grid_bound.is_finite() && n.grid_bound > 0.0) {
        return Err(CliError::validation(format!("grid_bound = {}", n.grid_bound), Some("grid_bound")));
    }
    if n.grid_points < 2 {
        return Err(CliError::validation(format!("grid_points = {}", n.grid_points), Some("grid_points")));
    }
    Ok(GridSpec {
        bound: n.grid_bound,
        n_points: n.grid_points,
        ..GridSpec::default()
    })
}

fn sim_config(cfg: &RunConfig) -> SimConfig {
    SimConfig {
        n_paths: cfg.numerics.n_paths,
        dt: cfg.numerics.dt,
        seed: cfg.numerics.seed,
        x0: cfg.simulation.x0,
        y0: cfg.simulation.y0,
        antithetic: cfg.numerics.antithetic,
    }
}

fn firm_of(n: u8, field: &str) -> Result<Firm, CliError> {
    Firm::from_number(n).ok_or_else(|| CliError::validation(format!("firm {n}"), Some(field)))
}

const RICCATI_HEADER: [&str; 7] = ["t", "A11", "A12", "A22", "B1", "B2", "C"];
const NASH_HEADER: [&str; 13] = [
    "t", "A", "B", "C", "D", "E", "F", "At", "Bt", "Ct", "Dt", "Et", "Ft",
];
const BEST_RESPONSE_HEADER: [&str; 7] = ["t", "A", "B", "C", "D", "E", "F"];

fn riccati_rows(v: &QuadraticValueFn) -> Vec<Vec<f64>> {
    (0..v.grid().n_nodes())
        .map(|k| {
            let (a, b, c) = (v.a_nodes()[k], v.b_nodes()[k], v.c_nodes()[k]);
            vec![v.grid().time(k), a[(0, 0)], a[(0, 1)], a[(1, 1)], b[0], b[1], c]
        })
        .collect()
}

fn with_time<const N: usize>(grid: &TimeGrid, values: &[[f64; N]]) -> Vec<Vec<f64>> {
    values
        .iter()
        .enumerate()
        .map(|(k, y)| std::iter::once(grid.time(k)).chain(y.iter().copied()).collect())
        .collect()
}

fn principal_summary(params: &ModelParams, v: &QuadraticValueFn) -> Result<serde_json::Value, CliError> {
    let origin = StateVector::zeros();
    let (a0, b0, c0) = v.coefficients(0.0)?;
    let mut s = json!({
        "kind": params.kind(),
        "horizon": params.horizon(),
        "n_nodes": v.grid().n_nodes(),
        "literal_signs": params.literal_signs(),
        "gradient_coupling": gradient_coupling(params)?,
        "v0_origin": v.value(0.0, &origin)?,
        "coefficients_t0": {
            "A": [[a0[(0, 0)], a0[(0, 1)]], [a0[(1, 0)], a0[(1, 1)]]],
            "B": [b0[0], b0[1]],
            "C": c0,
        },
        "rates_at_origin_t0": RateMap::new(params)?.apply(&(a0 * origin + b0)),
    });
    if params.kind() == ModelKind::TwoFirmRegulated {
        let (l12, l21) = lambda_pair(params)?;
        let a = effective_aversions(params)?;
        s["lambda"] = json!([l12, l21]);
        s["eta_bar"] = json!(a.eta_bar);
        s["eta_ratio"] = json!(a.eta_ratio);
    }
    Ok(s)
}

fn run_principal(params: &ModelParams, cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let grid = TimeGrid::new(params.horizon(), cfg.numerics.n_nodes)?;
    let v = riccati::solve_principal_on(params, &grid)?;
    out.csv("riccati_coeffs.csv", &RICCATI_HEADER, &riccati_rows(&v))?;
    let report = verify::hjb_residual_principal(&v, params, &grid_spec(&cfg.numerics)?)?;
    let mut summary = principal_summary(params, &v)?;
    summary["hjb_residual_max"] = json!(report.max);
    out.json("summary.json", &summary)?;
    out.json("residuals.json", &json!({ "hjb": report }))
}

fn run_nash(params: &ModelParams, cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let grid = TimeGrid::new(params.horizon(), cfg.numerics.n_nodes)?;
    let coeffs = nash::solve_nash_on(params, &grid)?;
    out.csv("nash_coeffs.csv", &NASH_HEADER, &with_time(&grid, &coeffs.values))?;
    let ode = nash::ode_residual_nash(&coeffs, params);
    let (r1, r2) = verify::hjb_residual_nash(&coeffs, params, &grid_spec(&cfg.numerics)?);
    let s0 = StateVector::new(cfg.simulation.x0[0], cfg.simulation.x0[1]);
    let mut firms = Vec::new();
    for f in Firm::BOTH {
        firms.push(json!({
            "firm": f.index() + 1,
            "coefficients_t0": coeffs.firm(f, 0),
            "w0": coeffs.w(f, 0.0, &s0),
            "utility0": coeffs.utility(params, f, 0.0, &s0),
        }));
    }
    out.json(
        "summary.json",
        &json!({
            "kind": params.kind(),
            "horizon": params.horizon(),
            "n_nodes": grid.n_nodes(),
            "literal_signs": params.literal_signs(),
            "state0": [s0[0], s0[1]],
            "firms": firms,
            "ode_residual_max": ode.max,
            "hjb_residual_max": [r1.max, r2.max],
        }),
    )?;
    out.json("residuals.json", &json!({ "ode": ode, "hjb": [r1, r2] }))
}

fn run_best_response(params: &ModelParams, cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let spec = cfg
        .best_response
        .as_ref()
        .ok_or_else(|| CliError::validation("missing best_response section", Some("best_response")))?;
    let firm = firm_of(spec.firm, "best_response.firm")?;
    if spec.opponents.is_empty() {
        return Err(CliError::validation("no opponent strategies", Some("opponents")));
    }
    let grid = TimeGrid::new(params.horizon(), cfg.numerics.n_nodes)?;
    let mut runs = Vec::new();
    for (k, opp) in spec.opponents.iter().enumerate() {
        let br = nash::best_response_on(params, firm, opp, &grid)?;
        let name = format!("best_response_firm{}_opp{k}.csv", spec.firm);
        out.csv(&name, &BEST_RESPONSE_HEADER, &with_time(&grid, &br.values))?;
        let res = nash::ode_residual_best_response(&br, params, opp);
        runs.push(json!({
            "file": name,
            "opponent": opp,
            "coefficients_t0": br.values[0],
            "ode_residual_max": res.max,
        }));
    }
    out.json(
        "summary.json",
        &json!({
            "kind": params.kind(),
            "firm": spec.firm,
            "horizon": params.horizon(),
            "n_nodes": grid.n_nodes(),
            "literal_signs": params.literal_signs(),
            "runs": runs,
        }),
    )
}

/// Deterministic gradient probes for sup-consistency.
fn probe_gradients() -> Vec<Vector2<f64>> {
    let vals = [-1.5, -0.5, 0.0, 0.7, 2.0];
    vals.iter()
        .flat_map(|&a| vals.iter().map(move |&b| Vector2::new(a, b)))
        .collect()
}

fn run_verify(params: &ModelParams, cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let grid = TimeGrid::new(params.horizon(), cfg.numerics.n_nodes)?;
    let spec = grid_spec(&cfg.numerics)?;
    if params.kind().has_principal() {
        let v = riccati::solve_principal_on(params, &grid)?;
        let hjb = verify::hjb_residual_principal(&v, params, &spec)?;
        let opts = OracleOptions::default();
        let mut sup_gap = 0.0f64;
        for g in probe_gradients() {
            sup_gap = sup_gap.max(verify::sup_consistency(params, &g, &opts)?);
        }
        let mut fd_max = 0.0f64;
        let axis = spec.axis();
        for k in 0..grid.n_steps() {
            if k % (grid.n_steps() / 4).max(1) != 0 {
                continue;
            }
            let t = 0.5 * (grid.time(k) + grid.time(k + 1));
            for &x1 in axis.iter().step_by(5) {
                let x = StateVector::new(x1, -x1 / 2.0);
                let e = verify::finite_diff_check(&v, t, &x, 1e-5, (0.0, params.horizon()));
                fd_max = fd_max.max(e.max());
            }
        }
        out.json(
            "summary.json",
            &json!({
                "kind": params.kind(),
                "hjb_residual_max": hjb.max,
                "sup_consistency_max_gap": sup_gap,
                "finite_difference_max_rel_error": fd_max,
            }),
        )?;
        out.json("residuals.json", &json!({ "hjb": hjb }))
    } else {
        let coeffs = nash::solve_nash_on(params, &grid)?;
        let ode = nash::ode_residual_nash(&coeffs, params);
        let (r1, r2) = verify::hjb_residual_nash(&coeffs, params, &spec);
        out.json(
            "summary.json",
            &json!({
                "kind": params.kind(),
                "ode_residual_max": ode.max,
                "hjb_residual_max": [r1.max, r2.max],
            }),
        )?;
        out.json("residuals.json", &json!({ "ode": ode, "hjb": [r1, r2] }))
    }
}

fn warn_dump(n: usize) {
    eprintln!("warning: writing {n} per-path records to paths.csv");
}

fn run_simulate(params: &ModelParams, cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let grid = TimeGrid::new(params.horizon(), cfg.numerics.n_nodes)?;
    let sim = sim_config(cfg);
    if params.kind().has_principal() {
        if !cfg.simulation.deviations.is_empty() {
            return Err(CliError::validation(
                "deviations apply to the duopoly model only",
                Some("deviations"),
            ));
        }
        let v = riccati::solve_principal_on(params, &grid)?;
        let paths = mc::principal_paths(params, &v, &sim)?;
        let est = mc::principal_estimates(params, &paths, &sim)?;
        let oracle = mc::principal_utility_oracle(params, &v, &sim)?;
        let agent_oracles: Vec<f64> = est
            .agents
            .iter()
            .enumerate()
            .map(|(i, _)| -(-params.eta(Firm::BOTH[i]) * sim.y0[i]).exp())
            .collect();
        if cfg.simulation.dump_paths {
            warn_dump(paths.len());
            let rows: Vec<Vec<f64>> = paths
                .iter()
                .enumerate()
                .map(|(j, p)| vec![j as f64, p.principal, p.agents[0], p.agents[1]])
                .collect();
            out.csv("paths.csv", &["path", "principal", "agent1", "agent2"], &rows)?;
        }
        out.json(
            "summary.json",
            &json!({
                "kind": params.kind(),
                "config": sim,
                "principal": est.principal,
                "principal_oracle": oracle,
                "principal_z_score": est.principal.z_score(oracle),
                "agents": est.agents,
                "agent_oracles": agent_oracles,
            }),
        )
    } else {
        let coeffs = nash::solve_nash_on(params, &grid)?;
        let strategies = nash::feedback_strategies(&coeffs, params);
        let pays = mc::nash_paths(params, &strategies, &sim, None)?;
        let est = mc::nash_estimates(params, &pays, &sim)?;
        let s0 = StateVector::new(sim.x0[0], sim.x0[1]);
        let oracles: Vec<f64> = Firm::BOTH
            .iter()
            .map(|&f| coeffs.utility(params, f, 0.0, &s0).expect("t = 0 on grid"))
            .collect();
        let mut deviations = Vec::new();
        for d in &cfg.simulation.deviations {
            let dev = Deviation {
                firm: firm_of(d.firm, "deviations.firm")?,
                scale: d.scale,
                shift: d.shift,
            };
            deviations.push(mc::deviation_test(params, &strategies, &sim, &dev)?);
        }
        if cfg.simulation.dump_paths {
            warn_dump(pays.len());
            let rows: Vec<Vec<f64>> = pays
                .iter()
                .enumerate()
                .map(|(j, p)| vec![j as f64, p[0], p[1]])
                .collect();
            out.csv("paths.csv", &["path", "firm1", "firm2"], &rows)?;
        }
        out.json(
            "summary.json",
            &json!({
                "kind": params.kind(),
                "config": sim,
                "firms": est,
                "oracles": oracles,
                "z_scores": [est[0].z_score(oracles[0]), est[1].z_score(oracles[1])],
                "deviations": deviations,
            }),
        )
    }
}

fn execute(scenario: Scenario, args: CommonArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.numerics.seed = seed;
    }
    let params = build_params(scenario, &cfg, args.literal_signs)?;
    let dir = args
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let out = Output::new(dir)?;
    match scenario {
        Scenario::SingleFirm | Scenario::TwoFirm => run_principal(&params, &cfg, &out),
        Scenario::Nash => run_nash(&params, &cfg, &out),
        Scenario::BestResponse => run_best_response(&params, &cfg, &out),
        Scenario::Verify => run_verify(&params, &cfg, &out),
        Scenario::Simulate => run_simulate(&params, &cfg, &out),
    }
}

/// Parses `argv` (including the program name), runs the scenario and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = CliError::Usage(e.to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    let (scenario, args) = cli.command.split();
    match execute(scenario, args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let rows = vec![
            vec![0.1, -1.0 / 3.0, 1e-300],
            vec![f64::MAX, f64::MIN_POSITIVE, -0.0],
            vec![std::f64::consts::PI, 123456789.123456789, 5e-324],
        ];
        emit_csv(&path, &["a", "b", "c"], &rows).unwrap();
        let (h, back) = read_csv(&path).unwrap();
        assert_eq!(h, vec!["a", "b", "c"]);
        for (r, s) in rows.iter().zip(&back) {
            for (x, y) in r.iter().zip(s) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let text = fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
    }

    #[test]
    fn header_only_when_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        emit_csv(&path, &["t", "v"], &[]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "t,v\n");
        assert!(emit_csv(&path, &["t"], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn config_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"model": {"kind": "nash"}}"#).unwrap();
        assert_eq!(cfg.numerics, Numerics::default());
        assert!(serde_json::from_str::<RunConfig>(r#"{"modle": {}}"#).is_err());
    }
}
