//! Configuration-driven experiment runner and result tables.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::problems::{
    generate_cloud, Encoding, LowDimMetric, LowDimProblem, MatrixGame, PencilInstance,
    PencilProblem, PencilSizes,
};
use crate::solver::{run_dmp, run_smp, Budget, HorizonMode, OracleKind, SaddlePoint, SmpSetup};

/// Environment variable naming the directory relative output paths land in.
pub const OUT_DIR_ENV: &str = "SMP_OUT_DIR";

pub const CSV_HEADER: &str = "seed,solver,iterations,gap_or_deviation,f_exact_evals,oracle_samples,prox_calls,flops_f,flops_prox,wall_seconds";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Pencil,
    Lowdim,
    MatrixGame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Dmp,
    Smp,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::Dmp => "dmp",
            SolverKind::Smp => "smp",
        })
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dmp" => Ok(SolverKind::Dmp),
            "smp" => Ok(SolverKind::Smp),
            other => Err(Error::Format(format!("unknown solver `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    /// `.json` selects JSON, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => OutputFormat::Json,
            _ => OutputFormat::Csv,
        }
    }
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::config(
                "format",
                format!("expected csv or json, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PencilSizeSpec {
    pub m: usize,
    pub nu: usize,
    pub blocks: usize,
    /// Defaults to one term per block.
    #[serde(default)]
    pub terms: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudSizeSpec {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub delta: f64,
    #[serde(default)]
    pub adversarial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSizeSpec {
    pub rows: usize,
    pub cols: usize,
}

/// Problem sizes, interpreted according to the configured family.
#[derive(Debug, Clone, PartialEq)]
pub enum Sizes {
    Pencil(PencilSizeSpec),
    Cloud(CloudSizeSpec),
    Game(GameSizeSpec),
}

impl Sizes {
    fn parse(kind: ProblemKind, raw: &serde_json::Value) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::config("sizes", e.to_string());
        Ok(match kind {
            ProblemKind::Pencil => Sizes::Pencil(serde_json::from_value(raw.clone()).map_err(bad)?),
            ProblemKind::Lowdim => Sizes::Cloud(serde_json::from_value(raw.clone()).map_err(bad)?),
            ProblemKind::MatrixGame => {
                Sizes::Game(serde_json::from_value(raw.clone()).map_err(bad)?)
            }
        })
    }

    fn to_value(&self) -> serde_json::Value {
        match self {
            Sizes::Pencil(s) => serde_json::to_value(s),
            Sizes::Cloud(s) => serde_json::to_value(s),
            Sizes::Game(s) => serde_json::to_value(s),
        }
        .expect("size specs serialize")
    }

    pub fn pencil(&self) -> Option<PencilSizes> {
        match self {
            Sizes::Pencil(s) => {
                let mut p = PencilSizes::uniform(s.m, s.nu, s.blocks);
                if let Some(t) = s.terms {
                    p.terms = t;
                }
                Some(p)
            }
            _ => None,
        }
    }
}

fn default_one() -> usize {
    1
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: ProblemKind,
    sizes: serde_json::Value,
    solvers: Vec<SolverKind>,
    #[serde(default = "default_one")]
    k_x: usize,
    #[serde(default = "default_one")]
    k_y: usize,
    #[serde(default = "default_alpha")]
    alpha: f64,
    epsilon: f64,
    #[serde(default)]
    v_upper: Option<f64>,
    seeds: Vec<u64>,
    max_iters: usize,
    check_interval: usize,
    #[serde(default)]
    output_path: Option<PathBuf>,
    #[serde(default)]
    metric: Option<LowDimMetric>,
    #[serde(default = "default_horizon")]
    horizon: HorizonMode,
}

fn default_horizon() -> HorizonMode {
    HorizonMode::Rolling
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub sizes: Sizes,
    pub solvers: Vec<SolverKind>,
    pub k_x: usize,
    pub k_y: usize,
    pub alpha: f64,
    pub epsilon: f64,
    /// Overrides the family's scale-factor bound (pencil and matrix game).
    pub v_upper: Option<f64>,
    pub seeds: Vec<u64>,
    pub max_iters: usize,
    pub check_interval: usize,
    pub output_path: Option<PathBuf>,
    /// Low-dim termination measure; deviation by default.
    pub metric: Option<LowDimMetric>,
    pub horizon: HorizonMode,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let msg = e.inner().to_string();
            let field = match e.path().to_string() {
                p if p != "." => p,
                _ => named_field(&msg).unwrap_or_else(|| "<document>".into()),
            };
            Error::config(field, msg)
        })?;
        let cfg = ExperimentConfig {
            sizes: Sizes::parse(raw.problem, &raw.sizes)?,
            problem: raw.problem,
            solvers: raw.solvers,
            k_x: raw.k_x,
            k_y: raw.k_y,
            alpha: raw.alpha,
            epsilon: raw.epsilon,
            v_upper: raw.v_upper,
            seeds: raw.seeds,
            max_iters: raw.max_iters,
            check_interval: raw.check_interval,
            output_path: raw.output_path,
            metric: raw.metric,
            horizon: raw.horizon,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let raw = RawConfig {
            problem: self.problem,
            sizes: self.sizes.to_value(),
            solvers: self.solvers.clone(),
            k_x: self.k_x,
            k_y: self.k_y,
            alpha: self.alpha,
            epsilon: self.epsilon,
            v_upper: self.v_upper,
            seeds: self.seeds.clone(),
            max_iters: self.max_iters,
            check_interval: self.check_interval,
            output_path: self.output_path.clone(),
            metric: self.metric,
            horizon: self.horizon,
        };
        serde_json::to_string_pretty(&raw).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must list at least one seed"));
        }
        if self.solvers.is_empty() {
            return Err(Error::config("solvers", "must list at least one solver"));
        }
        if self.k_x == 0 {
            return Err(Error::config("k_x", "must be ≥ 1"));
        }
        if self.k_y == 0 {
            return Err(Error::config("k_y", "must be ≥ 1"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 1.0) {
            return Err(Error::config("alpha", "must be a finite real ≥ 1"));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::config("epsilon", "must be finite and ≥ 0"));
        }
        if let Some(v) = self.v_upper {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config("v_upper", "must be finite and positive"));
            }
            if self.problem == ProblemKind::Lowdim {
                return Err(Error::config(
                    "v_upper",
                    "the low-dim family fixes the scale bound at 1",
                ));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters", "must be ≥ 1"));
        }
        if self.check_interval == 0 {
            return Err(Error::config("check_interval", "must be ≥ 1"));
        }
        if self.metric.is_some() && self.problem != ProblemKind::Lowdim {
            return Err(Error::config(
                "metric",
                "only applies to the low-dim family",
            ));
        }
        let mismatch = !matches!(
            (self.problem, &self.sizes),
            (ProblemKind::Pencil, Sizes::Pencil(_))
                | (ProblemKind::Lowdim, Sizes::Cloud(_))
                | (ProblemKind::MatrixGame, Sizes::Game(_))
        );
        if mismatch {
            return Err(Error::config("sizes", "do not match the problem family"));
        }
        match &self.sizes {
            Sizes::Pencil(_) => self.sizes.pencil().expect("pencil sizes").validate()?,
            Sizes::Cloud(s) => {
                if s.k < 2 || 2 * s.k > s.m {
                    return Err(Error::config("sizes.k", "need 2 ≤ k ≤ m/2"));
                }
                if s.n == 0 {
                    return Err(Error::config("sizes.n", "must be ≥ 1"));
                }
                if !(s.delta > 0.0 && s.delta < 1.0) {
                    return Err(Error::config("sizes.delta", "must lie in (0, 1)"));
                }
            }
            Sizes::Game(s) => {
                if s.rows == 0 || s.cols == 0 {
                    return Err(Error::config("sizes", "rows and cols must be ≥ 1"));
                }
            }
        }
        Ok(())
    }

    /// Output location: the configured path (or `results.<ext>`), placed
    /// under [`OUT_DIR_ENV`] when that is set and the path is relative.
    pub fn resolved_output(&self, format: OutputFormat) -> PathBuf {
        let default = match format {
            OutputFormat::Csv => "results.csv",
            OutputFormat::Json => "results.json",
        };
        let p = self
            .output_path
            .clone()
            .unwrap_or_else(|| PathBuf::from(default));
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if p.is_relative() && !dir.is_empty() => PathBuf::from(dir).join(p),
            _ => p,
        }
    }
}

/// Field named by a serde error message, when there is one.
fn named_field(msg: &str) -> Option<String> {
    let rest = msg
        .strip_prefix("unknown field `")
        .or_else(|| msg.strip_prefix("missing field `"))?;
    Some(rest[..rest.find('`')?].to_string())
}

/// A generated instance of any family.
#[derive(Debug, Clone)]
pub enum Instance {
    Pencil(PencilProblem),
    LowDim(LowDimProblem),
    Game(MatrixGame),
}

impl Instance {
    pub fn generate(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        Ok(match &cfg.sizes {
            Sizes::Pencil(_) => {
                let inst =
                    PencilInstance::generate(&cfg.sizes.pencil().expect("pencil sizes"), seed)?;
                Instance::Pencil(match cfg.v_upper {
                    Some(v) => PencilProblem::with_scale_bound(inst, v)?,
                    None => PencilProblem::new(inst)?,
                })
            }
            Sizes::Cloud(s) => {
                let cloud = generate_cloud(s.m, s.n, s.k, s.delta, seed, s.adversarial)?;
                Instance::LowDim(LowDimProblem::new(cloud, cfg.metric.unwrap_or_default())?)
            }
            Sizes::Game(s) => {
                let g = MatrixGame::random(s.rows, s.cols, seed)?;
                Instance::Game(match cfg.v_upper {
                    Some(v) => g.with_scale_bound(v),
                    None => g,
                })
            }
        })
    }

    /// Writes the instance data; matrix games are written as a JSON payoff table.
    pub fn save(&self, path: &Path, encoding: Encoding) -> Result<()> {
        match self {
            Instance::Pencil(p) => p.instance().save(path, encoding),
            Instance::LowDim(p) => p.cloud().save(path, encoding),
            Instance::Game(g) => {
                let a = g.payoff();
                let rows: Vec<Vec<f64>> =
                    a.row_iter().map(|r| r.iter().copied().collect()).collect();
                let text = serde_json::to_string(&serde_json::json!({ "payoff": rows }))
                    .expect("payoff serializes");
                fs::write(path, text).map_err(|e| Error::io(path, e))
            }
        }
    }
}

/// One solver run on one seed. Reals are kept at the ten significant digits
/// the tables carry, so emitting and parsing reproduces a row exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub seed: u64,
    pub solver: SolverKind,
    pub iterations: usize,
    #[serde(serialize_with = "ser_real", deserialize_with = "de_real")]
    pub gap_or_deviation: f64,
    pub f_exact_evals: u64,
    pub oracle_samples: u64,
    pub prox_calls: u64,
    pub flops_f: u64,
    pub flops_prox: u64,
    #[serde(serialize_with = "ser_real", deserialize_with = "de_real")]
    pub wall_seconds: f64,
    /// Why the run produced no result; not part of the emitted table.
    #[serde(skip)]
    pub failure: Option<String>,
}

impl PartialEq for ResultRow {
    /// Bitwise on reals so failed rows (NaN) compare equal to themselves.
    fn eq(&self, o: &Self) -> bool {
        self.seed == o.seed
            && self.solver == o.solver
            && self.iterations == o.iterations
            && self.gap_or_deviation.to_bits() == o.gap_or_deviation.to_bits()
            && self.f_exact_evals == o.f_exact_evals
            && self.oracle_samples == o.oracle_samples
            && self.prox_calls == o.prox_calls
            && self.flops_f == o.flops_f
            && self.flops_prox == o.flops_prox
            && self.wall_seconds.to_bits() == o.wall_seconds.to_bits()
    }
}

fn ser_real<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn de_real<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn format_real(v: f64) -> String {
    format!("{v:.9e}")
}

/// Rounds to ten significant digits.
pub fn round_real(v: f64) -> f64 {
    if v.is_finite() {
        format_real(v).parse().expect("formatted real parses")
    } else {
        f64::NAN
    }
}

impl ResultRow {
    fn failed(seed: u64, solver: SolverKind, wall: f64, err: &Error) -> Self {
        ResultRow {
            seed,
            solver,
            iterations: 0,
            gap_or_deviation: f64::NAN,
            f_exact_evals: 0,
            oracle_samples: 0,
            prox_calls: 0,
            flops_f: 0,
            flops_prox: 0,
            wall_seconds: round_real(wall),
            failure: Some(err.to_string()),
        }
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.solver,
            self.iterations,
            format_real(self.gap_or_deviation),
            self.f_exact_evals,
            self.oracle_samples,
            self.prox_calls,
            self.flops_f,
            self.flops_prox,
            format_real(self.wall_seconds)
        )
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 10 {
            return Err(Error::Format(format!(
                "expected 10 columns, found {}",
                cols.len()
            )));
        }
        fn num<T: FromStr>(s: &str, name: &str) -> Result<T> {
            s.trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad {name} value `{s}`")))
        }
        Ok(ResultRow {
            seed: num(cols[0], "seed")?,
            solver: cols[1].trim().parse()?,
            iterations: num(cols[2], "iterations")?,
            gap_or_deviation: num(cols[3], "gap_or_deviation")?,
            f_exact_evals: num(cols[4], "f_exact_evals")?,
            oracle_samples: num(cols[5], "oracle_samples")?,
            prox_calls: num(cols[6], "prox_calls")?,
            flops_f: num(cols[7], "flops_f")?,
            flops_prox: num(cols[8], "flops_prox")?,
            wall_seconds: num(cols[9], "wall_seconds")?,
            failure: None,
        })
    }
}

fn run_one<P: SaddlePoint>(
    p: &P,
    cfg: &ExperimentConfig,
    solver: SolverKind,
    seed: u64,
) -> Result<(usize, f64, crate::solver::CostCounters)> {
    let setup = SmpSetup::with_defaults(p, cfg.k_x, cfg.k_y, cfg.alpha, cfg.horizon)?;
    let budget = Budget::new(cfg.max_iters, cfg.epsilon, cfg.check_interval);
    let run = match solver {
        SolverKind::Dmp => run_dmp(p, &setup, &budget)?,
        SolverKind::Smp => run_smp(
            p,
            &setup,
            OracleKind::Randomized {
                kx: cfg.k_x,
                ky: cfg.k_y,
            },
            &budget,
            seed,
        )?,
    };
    Ok((run.iterations, run.final_gap(), run.counters))
}

fn solve(inst: &Instance, cfg: &ExperimentConfig, solver: SolverKind, seed: u64) -> ResultRow {
    let t0 = Instant::now();
    let out = match inst {
        Instance::Pencil(p) => run_one(p, cfg, solver, seed),
        Instance::LowDim(p) => run_one(p, cfg, solver, seed),
        Instance::Game(p) => run_one(p, cfg, solver, seed),
    };
    let wall = t0.elapsed().as_secs_f64();
    match out {
        Ok((iterations, gap, c)) => ResultRow {
            seed,
            solver,
            iterations,
            gap_or_deviation: round_real(gap),
            f_exact_evals: c.f_exact_evals,
            oracle_samples: c.oracle_samples,
            prox_calls: c.prox_calls,
            flops_f: c.flops_f,
            flops_prox: c.flops_prox,
            wall_seconds: round_real(wall),
            failure: None,
        },
        Err(e) => ResultRow::failed(seed, solver, wall, &e),
    }
}

/// Runs every configured solver on every seed against the instance generated
/// from the first seed. Rows come out seed-major in configuration order.
///
/// DMP does not consume randomness, so it is run once and its row repeated
/// for each seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let inst = Instance::generate(cfg, cfg.seeds[0])?;
    let dmp = cfg
        .solvers
        .contains(&SolverKind::Dmp)
        .then(|| solve(&inst, cfg, SolverKind::Dmp, cfg.seeds[0]));
    let rows: Vec<Vec<ResultRow>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            cfg.solvers
                .iter()
                .map(|&solver| match (&dmp, solver) {
                    (Some(row), SolverKind::Dmp) => ResultRow {
                        seed,
                        ..row.clone()
                    },
                    _ => solve(&inst, cfg, solver, seed),
                })
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == CSV_HEADER => {}
        _ => return Err(Error::Format("missing or unexpected CSV header".into())),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(ResultRow::from_csv_line)
        .collect()
}

pub fn rows_to_json(rows: &[ResultRow]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("rows serialize");
    s.push('\n');
    s
}

pub fn rows_from_json(text: &str) -> Result<Vec<ResultRow>> {
    serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
}

pub fn emit_results(rows: &[ResultRow], path: &Path, format: OutputFormat) -> Result<()> {
    let text = match format {
        OutputFormat::Csv => rows_to_csv(rows),
        OutputFormat::Json => rows_to_json(rows),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path, format: OutputFormat) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        OutputFormat::Csv => rows_from_csv(&text),
        OutputFormat::Json => rows_from_json(&text),
    }
}
