//! Command-line front end.
//!
//! Exit codes: 0 when every inequality holds, 1 on a violation (reports are
//! still written, with a `violations.json` payload), 2 on any configuration
//! error (nothing is written).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::constants::{ConstantId, ConstantInputs, ConstantReport, ConstantsConfig};
use crate::grid::Window;
use crate::search::{
    maximize_ratio, sharpness_scan, write_scan_csv, Objective, ParamFamily, ParamKind, ScanFamily, SearchError,
    SearchResult,
};
use crate::verify::{
    bundled_suite, run_suite, ExperimentSpec, ExponentSpec, SuiteReport, TheoremId, WeightSpec, WindowSpec, SUITES,
};
use crate::weights::{
    a1_constant, ap_constant, apr_bracket, apr_double, fujii_wilson, multilinear_ap, multilinear_apr, rh_constant,
    rh_inf, AprVariant, ExponentTuple, WeightVector,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Environment variable read when `--threads` is absent.
pub const THREADS_ENV: &str = "WLAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "wlab", version, about = "Discrete laboratory for weighted maximal inequalities")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Seed overriding the file value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; falls back to WLAB_THREADS, then to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long = "window-K", global = true)]
    pub window_k: Option<u32>,
    #[arg(long = "window-L", global = true)]
    pub window_l: Option<u32>,
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub dim: Option<u8>,
    /// Constant c_n of the A_1 bound for powers of maximal functions.
    #[arg(long, global = true)]
    pub cn: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Weight constants and theorem constants for the configured weights.
    Constants,
    /// Run an experiment, a list of experiments, or a bundled suite.
    Verify {
        /// Bundled suite to run instead of a config file.
        #[arg(long)]
        suite: Option<String>,
    },
    /// Extremal search over a parametric weight family.
    Search,
    /// Empirical versus theoretical constants over an exponent grid.
    Scan,
}

/// A configuration problem; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl<E: std::fmt::Display> From<E> for ConfigError {
    fn from(e: E) -> Self {
        ConfigError(e.to_string())
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let threads = match thread_count(cli.global.threads) {
        Ok(t) => t,
        Err(e) => return config_failure(e),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => return config_failure(ConfigError::from(e)),
    };
    let result = pool.install(|| match &cli.command {
        Command::Constants => cmd_constants(&cli.global),
        Command::Verify { suite } => cmd_verify(&cli.global, suite.as_deref()),
        Command::Search => cmd_search(&cli.global),
        Command::Scan => cmd_scan(&cli.global),
    });
    match result {
        Ok(code) => code,
        Err(e) => config_failure(e),
    }
}

fn config_failure(e: ConfigError) -> i32 {
    eprintln!("error: {}", e.0);
    EXIT_CONFIG
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, ConfigError> {
    let t = match flag {
        Some(t) => Some(t),
        None => match std::env::var(THREADS_ENV) {
            Ok(s) => Some(s.trim().parse::<usize>().map_err(|_| ConfigError(format!("{THREADS_ENV}={s} is not a count")))?),
            Err(_) => None,
        },
    };
    if t == Some(0) {
        return Err(ConfigError("thread count must be positive".into()));
    }
    Ok(t)
}

fn read_config(global: &GlobalArgs) -> Result<Value, ConfigError> {
    let path = global.config.as_ref().ok_or_else(|| ConfigError("--config is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
}

fn parse<T: for<'de> Deserialize<'de>>(value: Value, what: &str) -> Result<T, ConfigError> {
    serde_json::from_value(value).map_err(|e| ConfigError(format!("{what}: {e}")))
}

fn apply_window(global: &GlobalArgs, w: &mut WindowSpec) {
    if let Some(n) = global.dim {
        w.n = n as usize;
    }
    if let Some(k) = global.window_k {
        w.k = k;
    }
    if let Some(l) = global.window_l {
        w.l = l;
    }
}

fn constants_config(global: &GlobalArgs, file: Option<ConstantsConfig>) -> Result<ConstantsConfig, ConfigError> {
    let mut cfg = file.unwrap_or_default();
    if let Some(cn) = global.cn {
        cfg.c_n = Some(cn);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes `bytes` to `dir/name` through a temporary file in the same
/// directory, so readers never see a partial file.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name)).map_err(|e| e.error)?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, ConfigError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Output files of one command, written together after the run succeeded.
#[derive(Default)]
struct Outputs(Vec<(String, Vec<u8>)>);

impl Outputs {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.0.push((name.to_string(), bytes));
    }

    fn write(self, dir: &Path) -> Result<(), ConfigError> {
        for (name, bytes) in self.0 {
            write_atomic(dir, &name, &bytes).map_err(|e| ConfigError(format!("writing {name}: {e}")))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// constants

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantsRequest {
    #[serde(default)]
    window: WindowSpec,
    #[serde(default)]
    exponents: ExponentSpec,
    #[serde(default)]
    weights: Vec<WeightSpec>,
    /// Exponent of the reverse Holder constant, when wanted.
    #[serde(default)]
    rh_s: Option<f64>,
    #[serde(default)]
    theorem_constants: Vec<TheoremConstantRequest>,
    #[serde(default)]
    constants: Option<ConstantsConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TheoremConstantRequest {
    id: String,
    inputs: ConstantInputs,
}

#[derive(Debug, Clone, Serialize)]
struct WeightConstants {
    weight: WeightSpec,
    values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
struct ConstantsOutput {
    window: WindowSpec,
    p_list: Vec<f64>,
    weights: Vec<WeightConstants>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    multilinear: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    theorem_constants: Vec<ConstantReport>,
}

fn cmd_constants(global: &GlobalArgs) -> Result<i32, ConfigError> {
    let mut req: ConstantsRequest = parse(read_config(global)?, "constants config")?;
    apply_window(global, &mut req.window);
    let cfg = constants_config(global, req.constants.take())?;
    let window: Window = req.window.build()?;
    if req.weights.is_empty() && req.theorem_constants.is_empty() {
        return Err(ConfigError("missing field `weights`".into()));
    }
    let p_list = req.exponents.p_list.clone();
    if !req.weights.is_empty() && p_list.is_empty() {
        return Err(ConfigError("missing field `exponents.p_list` (needed for the A_p constants)".into()));
    }
    if !req.weights.is_empty() && p_list.len() != 1 && p_list.len() != req.weights.len() {
        return Err(ConfigError(format!(
            "`exponents.p_list` must hold one exponent or one per weight, got {}",
            p_list.len()
        )));
    }
    let built: Vec<_> = req.weights.iter().map(|w| w.build(&window)).collect::<Result<_, _>>()?;
    let mut weights = Vec::new();
    for (i, (spec, w)) in req.weights.iter().zip(&built).enumerate() {
        let p = if p_list.len() == 1 { p_list[0] } else { p_list[i] };
        let mut values = BTreeMap::new();
        values.insert("a1".to_string(), a1_constant(w)?);
        values.insert("fujii_wilson".into(), fujii_wilson(w)?);
        values.insert("rh_inf".into(), rh_inf(w)?);
        if let Some(s) = req.rh_s {
            values.insert(format!("rh_{s}"), rh_constant(w, s)?);
        }
        if p > 1.0 {
            values.insert(format!("ap_{p}"), ap_constant(w, p)?);
        }
        let bracket = apr_bracket(w, p)?;
        let double = apr_double(w, p)?;
        values.insert(format!("apr_bracket_{p}"), bracket);
        values.insert(format!("apr_double_{p}"), double);
        values.insert(format!("apr_double_over_bracket_{p}"), double / bracket);
        weights.push(WeightConstants { weight: spec.clone(), values });
    }
    let mut multilinear = BTreeMap::new();
    if built.len() > 1 && p_list.len() == built.len() {
        let e = ExponentTuple::new(p_list.clone())?;
        let wv = WeightVector::new(built.clone(), &e)?;
        multilinear.insert("bracket".to_string(), multilinear_apr(&wv, &e, AprVariant::Bracket)?);
        multilinear.insert("double_bar".into(), multilinear_apr(&wv, &e, AprVariant::DoubleBar)?);
        multilinear.insert("classical".into(), multilinear_ap(&wv, &e)?);
    }
    let theorem_constants = req
        .theorem_constants
        .iter()
        .map(|t| -> Result<ConstantReport, ConfigError> {
            let id: ConstantId = t.id.parse()?;
            Ok(ConstantReport::evaluate(id, t.inputs.clone(), &cfg)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let out = ConstantsOutput { window: req.window, p_list, weights, multilinear, theorem_constants };
    let mut files = Outputs::default();
    files.add("constants.json", to_json(&out)?);
    files.write(&global.out)?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// verify

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteRequest {
    suite: String,
    #[serde(default)]
    window: WindowSpec,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    constants: Option<ConstantsConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentsRequest {
    experiments: Vec<ExperimentSpec>,
    #[serde(default)]
    constants: Option<ConstantsConfig>,
}

fn verify_specs(global: &GlobalArgs, suite: Option<&str>) -> Result<(String, Vec<ExperimentSpec>, ConstantsConfig), ConfigError> {
    let suite_specs = |name: &str, mut window: WindowSpec, seed: u64| -> Result<Vec<ExperimentSpec>, ConfigError> {
        apply_window(global, &mut window);
        bundled_suite(name, window, global.seed.unwrap_or(seed))
            .ok_or_else(|| ConfigError(format!("unknown suite `{name}` (known: {})", SUITES.join(", "))))
    };
    if let Some(name) = suite {
        let specs = suite_specs(name, WindowSpec::default(), 0)?;
        return Ok((name.to_string(), specs, constants_config(global, None)?));
    }
    let value = read_config(global)?;
    let (name, mut specs, file_cfg) = if value.get("suite").is_some() {
        let req: SuiteRequest = parse(value, "suite config")?;
        let specs = suite_specs(&req.suite, req.window, req.seed)?;
        (req.suite, specs, req.constants)
    } else if value.get("experiments").is_some() {
        let req: ExperimentsRequest = parse(value, "experiments config")?;
        ("experiments".to_string(), req.experiments, req.constants)
    } else {
        let spec: ExperimentSpec = parse(value, "experiment config")?;
        (spec.label(), vec![spec], None)
    };
    if specs.is_empty() {
        return Err(ConfigError("no experiments to run".into()));
    }
    for s in specs.iter_mut() {
        apply_window(global, &mut s.window);
        if let Some(seed) = global.seed {
            s.seed = seed;
        }
    }
    Ok((name, specs, constants_config(global, file_cfg)?))
}

/// Violation payload: the failing experiments with everything needed to
/// replay them.
#[derive(Debug, Serialize)]
struct ViolationReport<'a> {
    kind: &'static str,
    suite: &'a str,
    experiments: Vec<&'a crate::verify::ExperimentRecord>,
}

fn cmd_verify(global: &GlobalArgs, suite: Option<&str>) -> Result<i32, ConfigError> {
    let (name, specs, cfg) = verify_specs(global, suite)?;
    let report: SuiteReport = run_suite(&name, &specs, &cfg)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    let mut files = Outputs::default();
    files.add("report.json", to_json(&report)?);
    files.add("report.csv", csv);
    let violations = report.violations();
    let code = if violations.is_empty() {
        EXIT_OK
    } else {
        for v in &violations {
            eprintln!("VIOLATION {} ({})", v.id, v.outcome.theorem());
        }
        let payload = ViolationReport { kind: "VIOLATION", suite: &report.suite, experiments: violations };
        files.add("violations.json", to_json(&payload)?);
        EXIT_VIOLATION
    };
    files.write(&global.out)?;
    for rec in &report.experiments {
        let secs = rec.outcome.runtime().map_or(0.0, |d| d.as_secs_f64());
        println!("{} {} ({secs:.2} s)", if rec.outcome.pass() { "PASS" } else { "FAIL" }, rec.id);
    }
    Ok(code)
}

// ---------------------------------------------------------------------------
// search

fn default_restarts() -> usize {
    4
}
fn default_budget() -> usize {
    200
}
fn default_search_samples() -> usize {
    8
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchRequest {
    objective: Objective,
    family: ParamKind,
    #[serde(default)]
    window: WindowSpec,
    exponents: ExponentSpec,
    #[serde(default)]
    decouple_nu: bool,
    #[serde(default)]
    lower: Option<Vec<f64>>,
    #[serde(default)]
    upper: Option<Vec<f64>>,
    #[serde(default = "default_search_samples")]
    samples: usize,
    #[serde(default)]
    input_seed: u64,
    #[serde(default = "default_budget")]
    budget: usize,
    #[serde(default = "default_restarts")]
    restarts: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    constants: Option<ConstantsConfig>,
}

#[derive(Debug, Serialize)]
struct SearchViolationReport<'a> {
    kind: &'static str,
    result: &'a SearchResult,
}

fn search_error(e: SearchError) -> ConfigError {
    ConfigError(e.to_string())
}

fn cmd_search(global: &GlobalArgs) -> Result<i32, ConfigError> {
    let mut req: SearchRequest = parse(read_config(global)?, "search config")?;
    apply_window(global, &mut req.window);
    let cfg = constants_config(global, req.constants.take())?;
    let seed = global.seed.unwrap_or(req.seed);
    let mut family = ParamFamily::new(req.family, req.window, req.exponents.p_list.clone(), req.decouple_nu)
        .map_err(search_error)?;
    if req.lower.is_some() || req.upper.is_some() {
        let lower = req.lower.clone().unwrap_or_else(|| family.lower.clone());
        let upper = req.upper.clone().unwrap_or_else(|| family.upper.clone());
        family = family.with_box(lower, upper).map_err(search_error)?;
    }
    family.samples = req.samples;
    family.input_seed = req.input_seed;
    let result = maximize_ratio(req.objective, &family, req.budget, req.restarts, seed, &cfg).map_err(search_error)?;
    let mut trace = Vec::new();
    result.write_trace_csv(&mut trace)?;
    let mut files = Outputs::default();
    files.add("search.json", to_json(&result)?);
    files.add("search_trace.csv", trace);
    let code = if result.has_violation() {
        eprintln!("VIOLATION: {} evaluations exceed their theoretical constant", result.violations.len());
        files.add("violations.json", to_json(&SearchViolationReport { kind: "VIOLATION", result: &result })?);
        EXIT_VIOLATION
    } else {
        EXIT_OK
    };
    files.write(&global.out)?;
    println!("best ratio {} at {:?}", result.best_ratio, result.best_params);
    Ok(code)
}

// ---------------------------------------------------------------------------
// scan

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanRequest {
    theorem: TheoremId,
    exponent_grid: Vec<Vec<f64>>,
    families: Vec<ScanFamily>,
    #[serde(default)]
    window: WindowSpec,
    #[serde(default = "default_search_samples")]
    samples: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    epsilon: Option<f64>,
    #[serde(default)]
    constants: Option<ConstantsConfig>,
}

fn cmd_scan(global: &GlobalArgs) -> Result<i32, ConfigError> {
    let mut req: ScanRequest = parse(read_config(global)?, "scan config")?;
    apply_window(global, &mut req.window);
    let cfg = constants_config(global, req.constants.take())?;
    if req.exponent_grid.is_empty() || req.families.is_empty() {
        return Err(ConfigError("scan needs a nonempty exponent_grid and families".into()));
    }
    let rows = sharpness_scan(
        req.theorem,
        &req.exponent_grid,
        &req.families,
        req.window,
        req.samples,
        global.seed.unwrap_or(req.seed),
        req.epsilon,
        &cfg,
    )
    .map_err(search_error)?;
    let mut csv = Vec::new();
    write_scan_csv(&rows, &mut csv)?;
    let mut files = Outputs::default();
    files.add("scan.csv", csv);
    files.add("scan.json", to_json(&rows)?);
    files.write(&global.out)?;
    Ok(if rows.iter().all(|r| r.log10_gap >= 0.0) { EXIT_OK } else { EXIT_VIOLATION })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(dir.path(), "a.txt", b"one").unwrap();
        write_atomic(dir.path(), "a.txt", b"two").unwrap();
        assert_eq!(fs::read(dir.path().join("a.txt")).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn thread_flag_rejects_zero() {
        assert!(thread_count(Some(0)).is_err());
        assert_eq!(thread_count(Some(3)).unwrap(), Some(3));
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "wlab", "verify", "--suite", "paper-core", "--window-K", "3", "--window-L", "4", "--dim", "1", "--cn",
            "7.5", "--threads", "2",
        ])
        .unwrap();
        assert_eq!(cli.global.window_k, Some(3));
        assert_eq!(cli.global.cn, Some(7.5));
        assert!(Cli::try_parse_from(["wlab", "verify", "--dim", "3"]).is_err());
    }
}
