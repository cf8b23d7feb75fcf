//! Batch command-line front end.
//!
//! [`run`] parses arguments, loads the JSON config, dispatches and returns
//! the exit code with everything destined for stdout and stderr, so the
//! binary is a thin wrapper and the whole surface is testable in-process.
//!
//! Exit codes: `0` success, `2` bad arguments, config or model validation,
//! `3` numerical failure (ill-conditioned fundamental matrix, overflow,
//! blow-up).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::QtsmError;
use crate::flows1d::{self, FlowParams};
use crate::model::{make_even, validate_model, FactorModel, QuadraticPayoff, QuadraticRate, TimeGrid};
use crate::montecarlo::{self, FbsdeReport, McEstimate};
use crate::pricing::{self, PricedSystem, ProductTag};

/// Version stamped on every JSON report and expected in configs that carry
/// a `schema_version` field.
pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    #[serde(rename = "Gamma")]
    pub gamma: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<f64>,
    pub k: f64,
    #[serde(default)]
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffConfig {
    #[serde(rename = "aT")]
    pub a_t: Vec<Vec<f64>>,
    #[serde(rename = "bT")]
    pub b_t: Vec<f64>,
    #[serde(rename = "cT")]
    pub c_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericConfig {
    #[serde(default = "default_step")]
    pub grid_step_max: f64,
    #[serde(default = "default_paths")]
    pub mc_paths: usize,
    #[serde(default)]
    pub mc_seed: u64,
    /// Explicit step count; overrides `grid_step_max` when present.
    #[serde(default)]
    pub steps: Option<usize>,
}

fn default_step() -> f64 {
    TimeGrid::DEFAULT_MAX_STEP
}

fn default_paths() -> usize {
    100_000
}

impl Default for NumericConfig {
    fn default() -> Self {
        Self {
            grid_step_max: default_step(),
            mc_paths: default_paths(),
            mc_seed: 0,
            steps: None,
        }
    }
}

/// JSON configuration; matrices are arrays of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub schema_version: Option<u32>,
    pub n: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub rate: RateConfig,
    #[serde(default)]
    pub payoff: Option<PayoffConfig>,
    #[serde(default)]
    pub numeric: NumericConfig,
}

/// A config turned into model types.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub model: FactorModel,
    pub rate: QuadraticRate,
    pub payoff: Option<QuadraticPayoff>,
    pub numeric: NumericConfig,
    pub warnings: Vec<String>,
}

/// Failure of a CLI step, already mapped to its exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<QtsmError> for CliError {
    fn from(e: QtsmError) -> Self {
        Self {
            code: if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_INPUT },
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn matrix(path: &str, rows: &[Vec<f64>], n: usize, errors: &mut Vec<String>) -> DMatrix<f64> {
    if rows.len() != n {
        errors.push(format!("{path}: expected {n} rows, got {}", rows.len()));
        return DMatrix::zeros(n, n);
    }
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            errors.push(format!("{path}[{i}]: expected {n} entries, got {}", row.len()));
            continue;
        }
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                errors.push(format!("{path}[{i}][{j}]: not finite"));
            }
            m[(i, j)] = *v;
        }
    }
    m
}

fn vector(path: &str, values: &[f64], n: usize, errors: &mut Vec<String>) -> DVector<f64> {
    if values.len() != n {
        errors.push(format!("{path}: expected {n} entries, got {}", values.len()));
        return DVector::zeros(n);
    }
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            errors.push(format!("{path}[{i}]: not finite"));
        }
    }
    DVector::from_column_slice(values)
}

/// JSON path of the config entry a validation check concerns.
fn check_path(name: &str) -> &'static str {
    match name {
        "rate.gamma_psd" => "rate.Gamma",
        "rate.r_in_range" => "rate.R",
        "rate.nonnegative" => "rate.k",
        "payoff.a_t_nsd" => "payoff.aT",
        _ => "",
    }
}

impl Config {
    pub fn parse(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| {
            CliError::input(format!("config parse error at line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    /// Builds and validates the model types; every problem is listed with
    /// the JSON path it comes from.
    pub fn load(&self) -> CliResult<LoadedConfig> {
        let mut errors = Vec::new();
        if let Some(v) = self.schema_version {
            if v != SCHEMA_VERSION {
                errors.push(format!("schema_version: expected {SCHEMA_VERSION}, got {v}"));
            }
        }
        let n = self.n;
        if n == 0 {
            return Err(CliError::input("n: must be at least 1"));
        }
        let a = matrix("A", &self.a, n, &mut errors);
        let b = vector("B", &self.b, n, &mut errors);
        let sigma = matrix("sigma", &self.sigma, n, &mut errors);
        let x0 = vector("x0", &self.x0, n, &mut errors);
        let gamma = matrix("rate.Gamma", &self.rate.gamma, n, &mut errors);
        let r = vector("rate.R", &self.rate.r, n, &mut errors);
        if !self.rate.k.is_finite() {
            errors.push("rate.k: not finite".into());
        }
        let payoff = self.payoff.as_ref().map(|p| {
            let a_t = matrix("payoff.aT", &p.a_t, n, &mut errors);
            let b_t = vector("payoff.bT", &p.b_t, n, &mut errors);
            if !p.c_t.is_finite() {
                errors.push("payoff.cT: not finite".into());
            }
            (a_t, b_t, p.c_t)
        });
        let num = &self.numeric;
        if !(num.grid_step_max.is_finite() && num.grid_step_max > 0.0) {
            errors.push("numeric.grid_step_max: must be positive".into());
        }
        if num.mc_paths == 0 {
            errors.push("numeric.mc_paths: must be positive".into());
        }
        if num.steps == Some(0) {
            errors.push("numeric.steps: must be positive".into());
        }
        if !errors.is_empty() {
            return Err(CliError::input(format!("invalid config:\n  {}", errors.join("\n  "))));
        }

        let model = FactorModel::new(a, b, sigma, x0)?;
        let rate = QuadraticRate::new(gamma, r, self.rate.k, self.rate.strict)?;
        let payoff = match payoff {
            Some((a_t, b_t, c_t)) => Some(QuadraticPayoff::new(a_t, b_t, c_t)?),
            None => None,
        };
        let report = validate_model(&model, &rate, payoff.as_ref())?;
        if !report.passed() {
            let mut msg = String::from("model validation failed:");
            for c in report.failures() {
                let _ = write!(msg, "\n  {} ({}): {}", check_path(&c.name), c.name, c.detail);
            }
            return Err(CliError::input(msg));
        }

        let mut numeric = num.clone();
        let mut warnings = Vec::new();
        if let Some(steps) = num.steps {
            let (even, bumped) = make_even(steps);
            if bumped {
                warnings.push(format!("numeric.steps = {steps} is odd; using {even}"));
            }
            numeric.steps = Some(even);
        }
        Ok(LoadedConfig {
            model,
            rate,
            payoff,
            numeric,
            warnings,
        })
    }
}

pub fn load_config(path: &Path) -> CliResult<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
    Config::parse(&text)?.load()
}

impl LoadedConfig {
    fn grid(&self, maturity: f64) -> CliResult<TimeGrid> {
        Ok(match self.numeric.steps {
            Some(steps) => TimeGrid::new(maturity, steps)?,
            None => TimeGrid::with_max_step(maturity, self.numeric.grid_step_max)?,
        })
    }

    fn require_payoff(&self) -> CliResult<&QuadraticPayoff> {
        self.payoff
            .as_ref()
            .ok_or_else(|| CliError::input("payoff required for this product (config has no \"payoff\")"))
    }

    fn system(&self, product: Product, grid: TimeGrid) -> CliResult<PricedSystem> {
        Ok(match product {
            Product::Bond => pricing::bond_system(&self.model, &self.rate, grid)?,
            Product::Futures => pricing::futures_system(&self.model, self.require_payoff()?, grid)?,
            Product::Forward => pricing::forward_system(&self.model, &self.rate, self.require_payoff()?, grid)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Product {
    Bond,
    Futures,
    Forward,
}

impl Product {
    fn tag(self) -> ProductTag {
        match self {
            Product::Bond => ProductTag::Bond,
            Product::Futures => ProductTag::Futures,
            Product::Forward => ProductTag::Forward,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qtsm", version, about = "Quadratic term-structure model pricing and verification")]
pub struct Args {
    /// JSON model configuration (not needed by `flows1d`)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "json")]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dump the Riccati coefficient path of a product
    Solve {
        #[arg(long, value_enum, default_value = "bond")]
        product: Product,
        #[arg(long, default_value_t = 1.0)]
        maturity: f64,
    },
    /// Closed-form price at (t, state)
    Price {
        #[arg(long, value_enum, default_value = "bond")]
        product: Product,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        /// Comma-separated factor state; defaults to x0
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        state: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1.0)]
        maturity: f64,
    },
    /// Zero-coupon yield curve at t = 0
    Curve {
        #[arg(long, value_delimiter = ',', required = true)]
        maturities: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        state: Option<Vec<f64>>,
    },
    /// One-factor closed form from the stochastic-flow formulas
    Flows1d {
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long, allow_hyphen_values = true)]
        a: f64,
        #[arg(long, allow_hyphen_values = true)]
        b: f64,
        #[arg(long)]
        c: f64,
        #[arg(long)]
        tau: f64,
        #[arg(long, allow_hyphen_values = true)]
        state: Option<f64>,
    },
    /// Monte Carlo bracketing of the closed forms plus the FBSDE check
    Validate {
        /// Defaults to numeric.mc_paths
        #[arg(long)]
        paths: Option<usize>,
        /// Defaults to numeric.steps or the grid_step_max grid
        #[arg(long)]
        steps: Option<usize>,
        /// Defaults to numeric.mc_seed
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 3.0)]
        sigmas: f64,
        #[arg(long, default_value_t = 1.0)]
        maturity: f64,
    },
}

/// Result of one invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the CLI on `args` (including the program name).
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            return if code == EXIT_OK {
                Outcome { code, stdout: text, stderr: String::new() }
            } else {
                Outcome { code, stdout: String::new(), stderr: text }
            };
        }
    };
    let mut stderr = String::new();
    match dispatch(&args, &mut stderr) {
        Ok(stdout) => Outcome {
            code: EXIT_OK,
            stdout,
            stderr,
        },
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            Outcome {
                code: e.code,
                stdout: String::new(),
                stderr,
            }
        }
    }
}

fn load(args: &Args, stderr: &mut String) -> CliResult<LoadedConfig> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| CliError::input("--config is required for this command"))?;
    let cfg = load_config(path)?;
    for w in &cfg.warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
    Ok(cfg)
}

fn state_or_x0(cfg: &LoadedConfig, state: &Option<Vec<f64>>) -> CliResult<DVector<f64>> {
    match state {
        Some(v) => {
            if v.len() != cfg.model.dim() {
                return Err(CliError::input(format!(
                    "--state: expected {} values, got {}",
                    cfg.model.dim(),
                    v.len()
                )));
            }
            Ok(DVector::from_column_slice(v))
        }
        None => Ok(cfg.model.x0().clone()),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn dispatch(args: &Args, stderr: &mut String) -> CliResult<String> {
    match &args.command {
        Command::Solve { product, maturity } => {
            let cfg = load(args, stderr)?;
            let sys = cfg.system(*product, cfg.grid(*maturity)?)?;
            Ok(render_solve(&sys, args.format))
        }
        Command::Price {
            product,
            t,
            state,
            maturity,
        } => {
            let cfg = load(args, stderr)?;
            let x = state_or_x0(&cfg, state)?;
            if !(maturity.is_finite() && *maturity >= 0.0 && *t >= 0.0 && *t <= *maturity) {
                return Err(CliError::input(format!("need 0 <= t <= maturity, got t = {t}, maturity = {maturity}")));
            }
            if *product != Product::Bond {
                cfg.require_payoff()?;
            }
            let price = if *t == *maturity {
                pricing::terminal_price(product.tag(), cfg.payoff.as_ref(), &x)?
            } else {
                cfg.system(*product, cfg.grid(*maturity)?)?.price(*t, &x)?
            };
            let report = PriceReport {
                schema_version: SCHEMA_VERSION,
                product: *product,
                maturity: *maturity,
                t: *t,
                state: x.iter().copied().collect(),
                price,
            };
            Ok(match args.format {
                Format::Json => to_json(&report),
                Format::Csv => format!(
                    "product,maturity,t,state,price\n{},{},{},{},{}\n",
                    product_name(*product),
                    report.maturity,
                    report.t,
                    join(&report.state, ";"),
                    report.price
                ),
            })
        }
        Command::Curve { maturities, state } => {
            let cfg = load(args, stderr)?;
            let x = state_or_x0(&cfg, state)?;
            let step = cfg.numeric.grid_step_max;
            let points = pricing::yield_curve(&cfg.model, &cfg.rate, &x, maturities, step)?;
            Ok(match args.format {
                Format::Json => to_json(&CurveReport {
                    schema_version: SCHEMA_VERSION,
                    state: x.iter().copied().collect(),
                    points,
                }),
                Format::Csv => {
                    let mut s = String::from("maturity,yield,price\n");
                    for p in &points {
                        let _ = writeln!(s, "{},{},{}", p.maturity, p.yield_, p.price);
                    }
                    s
                }
            })
        }
        Command::Flows1d {
            alpha,
            beta,
            sigma,
            a,
            b,
            c,
            tau,
            state,
        } => {
            let p = FlowParams::new(*alpha, *beta, *sigma, *a, *b, *c)?;
            let coeff_a = flows1d::coeff_a(*tau, &p)?;
            let coeff_b = flows1d::coeff_b(*tau, &p)?;
            let coeff_c = flows1d::coeff_c(*tau, &p)?;
            let price = match state {
                Some(x) => Some(flows1d::bond_price_1d(0.0, *tau, *x, &p)?),
                None => None,
            };
            let report = FlowsReport {
                schema_version: SCHEMA_VERSION,
                tau: *tau,
                eta: p.eta(),
                a: coeff_a,
                b: coeff_b,
                c: coeff_c,
                state: *state,
                price,
            };
            Ok(match args.format {
                Format::Json => to_json(&report),
                Format::Csv => format!(
                    "tau,eta,A,B,C,state,price\n{},{},{},{},{},{},{}\n",
                    report.tau,
                    report.eta,
                    report.a,
                    report.b,
                    report.c,
                    state.map(|v| v.to_string()).unwrap_or_default(),
                    price.map(|v| v.to_string()).unwrap_or_default()
                ),
            })
        }
        Command::Validate {
            paths,
            steps,
            seed,
            sigmas,
            maturity,
        } => {
            let cfg = load(args, stderr)?;
            let report = validate(&cfg, *paths, *steps, *seed, *sigmas, *maturity, stderr)?;
            Ok(match args.format {
                Format::Json => to_json(&report),
                Format::Csv => {
                    let mut s = String::from("product,closed_form,mc_mean,mc_stderr,z_score,within\n");
                    for c in &report.products {
                        let _ = writeln!(
                            s,
                            "{},{},{},{},{},{}",
                            product_name(c.product),
                            c.closed_form,
                            c.mc.mean,
                            c.mc.stderr,
                            c.z_score,
                            c.within
                        );
                    }
                    s
                }
            })
        }
    }
}

fn product_name(p: Product) -> &'static str {
    p.tag().as_str()
}

fn join(values: &[f64], sep: &str) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(sep)
}

fn render_solve(sys: &PricedSystem, format: Format) -> String {
    let record = sys.path().to_record();
    match format {
        Format::Json => to_json(&SolveReport {
            schema_version: SCHEMA_VERSION,
            path: record,
        }),
        Format::Csv => {
            let n = record.n;
            let mut s = String::from("t,R0");
            for i in 0..n {
                let _ = write!(s, ",R1_{i}");
            }
            for i in 0..n {
                for j in 0..n {
                    let _ = write!(s, ",R2_{i}{j}");
                }
            }
            s.push('\n');
            for (k, t) in record.times.iter().enumerate() {
                let _ = write!(s, "{t},{}", record.r0[k]);
                for v in record.r1[k].iter().chain(&record.r2[k]) {
                    let _ = write!(s, ",{v}");
                }
                s.push('\n');
            }
            s
        }
    }
}

#[derive(Debug, Serialize)]
struct SolveReport {
    schema_version: u32,
    path: crate::riccati::CoefficientPathRecord,
}

#[derive(Debug, Serialize)]
struct PriceReport {
    schema_version: u32,
    product: Product,
    maturity: f64,
    t: f64,
    state: Vec<f64>,
    price: f64,
}

#[derive(Debug, Serialize)]
struct CurveReport {
    schema_version: u32,
    state: Vec<f64>,
    points: Vec<pricing::CurvePoint>,
}

#[derive(Debug, Serialize)]
struct FlowsReport {
    schema_version: u32,
    tau: f64,
    eta: f64,
    #[serde(rename = "A")]
    a: f64,
    #[serde(rename = "B")]
    b: f64,
    #[serde(rename = "C")]
    c: f64,
    state: Option<f64>,
    price: Option<f64>,
}

/// One product's closed form against its Monte Carlo estimate.
#[derive(Debug, Clone, Serialize)]
pub struct ProductCheck {
    pub product: Product,
    pub closed_form: f64,
    pub mc: McEstimate,
    /// `(closed_form − mean) / stderr`, zero when both agree exactly.
    pub z_score: f64,
    pub within: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidateReport {
    pub schema_version: u32,
    pub maturity: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    pub sigmas: f64,
    pub products: Vec<ProductCheck>,
    pub fbsde: FbsdeReport,
    pub closed_form_within_sigmas: bool,
    pub closed_form_within_3_sigma: bool,
}

fn product_check(product: Product, closed_form: f64, mc: McEstimate, sigmas: f64) -> ProductCheck {
    let diff = closed_form - mc.mean;
    let z_score = if diff == 0.0 { 0.0 } else { diff / mc.stderr };
    ProductCheck {
        product,
        closed_form,
        mc,
        z_score,
        within: mc.brackets(closed_form, sigmas),
    }
}

fn validate(
    cfg: &LoadedConfig,
    paths: Option<usize>,
    steps: Option<usize>,
    seed: Option<u64>,
    sigmas: f64,
    maturity: f64,
    stderr: &mut String,
) -> CliResult<ValidateReport> {
    if !(sigmas.is_finite() && sigmas > 0.0) {
        return Err(CliError::input("--sigmas must be positive"));
    }
    if !(maturity.is_finite() && maturity > 0.0) {
        return Err(CliError::input("--maturity must be positive"));
    }
    let paths = paths.unwrap_or(cfg.numeric.mc_paths);
    if paths < 2 {
        return Err(CliError::input("--paths must be at least 2"));
    }
    let seed = seed.unwrap_or(cfg.numeric.mc_seed);
    let grid = match steps {
        Some(s) => {
            let (even, bumped) = make_even(s);
            if bumped {
                let _ = writeln!(stderr, "warning: --steps {s} is odd; using {even}");
            }
            TimeGrid::new(maturity, even)?
        }
        None => cfg.grid(maturity)?,
    };
    let x0 = cfg.model.x0();
    let bond = pricing::bond_system(&cfg.model, &cfg.rate, grid)?;
    let mut products = vec![product_check(
        Product::Bond,
        bond.price(0.0, x0)?,
        montecarlo::mc_bond(&cfg.model, &cfg.rate, paths, grid, seed)?,
        sigmas,
    )];
    if let Some(payoff) = &cfg.payoff {
        let futures = pricing::futures_system(&cfg.model, payoff, grid)?;
        products.push(product_check(
            Product::Futures,
            futures.price(0.0, x0)?,
            montecarlo::mc_terminal_expectation(&cfg.model, payoff, paths, grid, seed)?,
            sigmas,
        ));
        let forward = pricing::forward_system(&cfg.model, &cfg.rate, payoff, grid)?;
        products.push(product_check(
            Product::Forward,
            forward.price(0.0, x0)?,
            montecarlo::mc_forward(&cfg.model, &cfg.rate, payoff, paths, grid, seed)?.ratio,
            sigmas,
        ));
    }
    let fbsde = montecarlo::fbsde_check(&cfg.model, &cfg.rate, bond.path(), paths, grid, seed)?;
    let within_sigmas = products.iter().all(|c| c.within);
    let within_3 = products.iter().all(|c| c.mc.brackets(c.closed_form, 3.0));
    Ok(ValidateReport {
        schema_version: SCHEMA_VERSION,
        maturity,
        steps: grid.steps(),
        paths,
        seed,
        sigmas,
        products,
        fbsde,
        closed_form_within_sigmas: within_sigmas,
        closed_form_within_3_sigma: within_3,
    })
}
