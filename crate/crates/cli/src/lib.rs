//! Command-line front end: argument table, dispatch and exit codes.

pub mod commands;
pub mod config;
pub mod selftest;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};

use config::{read_config, ConfigError, Settings};

/// Failure of one run, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys or model parameters (exit 2).
    Config(String),
    /// The computation itself failed (exit 1).
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Compute(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Compute(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<rotvec::Error> for CliError {
    fn from(e: rotvec::Error) -> Self {
        use rotvec::Error as E;
        match e {
            E::InvalidArgument(_) | E::UnknownModel(_) | E::ParameterOutOfRange { .. } => CliError::Config(e.to_string()),
            other => CliError::Compute(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Compute(format!("i/o: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

const MODEL_KEYS: &[(&str, &str)] = &[
    ("model", "constant | circle | torus-product | winfree-type"),
    ("omega", "frequencies, comma separated (constant, winfree-type)"),
    ("c", "base speed(s) (circle, torus-product)"),
    ("eps", "forcing amplitude(s) (circle, torus-product)"),
    ("kappa", "coupling (winfree-type)"),
    ("x0", "initial point, comma separated (default 0)"),
];

/// `(name, about, takes model keys, own keys with help)`.
pub type CommandSpec = (&'static str, &'static str, bool, &'static [(&'static str, &'static str)]);

pub const COMMANDS: &[CommandSpec] = &[
    (
        "simulate",
        "Integrate the flow and write the trajectory",
        true,
        &[
            ("t0", "start time (default 0)"),
            ("t1", "end time (default 100)"),
            ("tol", "integrator tolerance (default 1e-10)"),
            ("output", "trajectory CSV path"),
        ],
    ),
    (
        "rotvec",
        "Rotation vector by direct integration",
        true,
        &[
            ("horizon", "integration horizon (default 1e4)"),
            ("tol", "integrator tolerance (default 1e-10)"),
            ("output", "trajectory CSV path"),
            ("json", "report JSON path"),
        ],
    ),
    (
        "solve",
        "Rotation vector from the fixed-point formula",
        true,
        &[
            ("gamma", "normalization scale (default min(0.5, smallness/|df|))"),
            ("norm-c", "normalization shift (default 2 + beta + gamma |f|)"),
            ("beta", "margin in the shift (default 0.5)"),
            ("smallness", "largest accepted gamma |df| (default 0.1)"),
            ("l", "admissible-set radius L (default 2)"),
            ("k-schedule", "averaging horizons, comma separated"),
            ("tol", "fixed-point tolerance (default 1e-11)"),
            ("certificate-horizon", "horizon of the residual certificate (default 1000)"),
            ("output", "per-horizon diagnostics CSV path"),
            ("json", "full solution JSON path"),
        ],
    ),
    (
        "psi",
        "Sample the psi functions along a line",
        true,
        &[
            ("rho", "direction of the line, comma separated (required)"),
            ("t-max", "last sample time (default 100)"),
            ("dt", "sample spacing (default 1)"),
            ("method", "quadrature | ode (default quadrature)"),
            ("output", "CSV path (default stdout)"),
        ],
    ),
    (
        "riccati",
        "Check the Riccati hypotheses and simulate",
        false,
        &[
            ("system", "random | constant (default random)"),
            ("q", "dimension (default 2)"),
            ("gamma", "coefficient bound (default 0.01)"),
            ("seed", "seed of the random system (default 0)"),
            ("a", "constant drift, q entries"),
            ("b", "constant linear term, q*q entries row-major"),
            ("h", "constant quadratic term, q*q*q entries"),
            ("horizon", "check horizon (default 200)"),
            ("tol", "integrator tolerance (default 1e-10)"),
            ("output", "psi CSV path"),
            ("json", "report JSON path"),
        ],
    ),
    (
        "leader",
        "Check the leader-trajectory conditions for mu(t) = rho t + x0",
        true,
        &[
            ("rho", "slope of the curve (default: integrated rotation vector)"),
            ("horizon", "check horizon (default 1e4)"),
            ("tol", "integrator tolerance (default 1e-10)"),
            ("output", "psi CSV path"),
            ("json", "report JSON path"),
        ],
    ),
    (
        "tongue",
        "Scan a two-parameter family for mode locking",
        false,
        &[
            ("grid", "family JSON path (default: standard circle family)"),
            ("n1", "points on the first axis of the standard family (default 101)"),
            ("n2", "points on the second axis of the standard family (default 51)"),
            ("horizon", "integration horizon per cell (default 2500)"),
            ("tol", "integrator tolerance (default 1e-9)"),
            ("lock-tol", "locking tolerance (default 1e-3)"),
            ("targets", "accepted locking values, comma separated"),
            ("max-denominator", "largest q of p/q targets when none given (default 8)"),
            ("output", "grid CSV path"),
            ("json", "grid JSON path"),
        ],
    ),
    ("selftest", "Run the built-in example suite", false, &[]),
];

/// Keys accepted by a command, model keys included.
pub fn command_keys(name: &str) -> Vec<&'static str> {
    COMMANDS
        .iter()
        .find(|c| c.0 == name)
        .map(|(_, _, model, keys)| {
            let base = if *model { MODEL_KEYS } else { &[] };
            base.iter().chain(keys.iter()).map(|k| k.0).collect()
        })
        .unwrap_or_default()
}

pub fn cli() -> Command {
    let mut cmd = Command::new("rotvec")
        .about("Rotation vectors of periodic flows on the torus")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .help("key = value file; flags override its entries"),
        )
        .arg(
            Arg::new("threads")
                .long("threads")
                .global(true)
                .value_name("N")
                .value_parser(clap::value_parser!(usize))
                .help("worker threads (default: ROTVEC_THREADS or all cores)"),
        );
    for (name, about, model, keys) in COMMANDS {
        let mut sub = Command::new(*name).about(*about);
        let base = if *model { MODEL_KEYS } else { &[] };
        for (key, help) in base.iter().chain(keys.iter()) {
            sub = sub.arg(
                Arg::new(*key)
                    .long(*key)
                    .value_name("VALUE")
                    .allow_hyphen_values(true)
                    .action(ArgAction::Set)
                    .help(*help),
            );
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Settings for a parsed subcommand: the config file overlaid by flags.
fn settings_for(name: &str, matches: &ArgMatches) -> CliResult<Settings> {
    let file = match matches.get_one::<String>("config") {
        Some(path) => read_config(&PathBuf::from(path))?,
        None => BTreeMap::new(),
    };
    let mut flags = BTreeMap::new();
    for key in command_keys(name) {
        if let Some(v) = matches.get_one::<String>(key) {
            flags.insert(key.to_string(), v.clone());
        }
    }
    Ok(Settings::new(file, flags))
}

/// Thread cap from `--threads`, else `ROTVEC_THREADS`.
pub fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("ROTVEC_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("ROTVEC_THREADS must be a positive integer, got `{v}`"))),
        _ => Ok(None),
    }
}

/// Runs one subcommand with resolved settings, writing its report to `out`.
pub fn execute(name: &str, settings: Settings, out: &mut dyn Write) -> CliResult<()> {
    match name {
        "simulate" => commands::simulate(settings, out),
        "rotvec" => commands::rotvec(settings, out),
        "solve" => commands::solve(settings, out),
        "psi" => commands::psi(settings, out),
        "riccati" => commands::riccati(settings, out),
        "leader" => commands::leader(settings, out),
        "tongue" => commands::tongue(settings, out),
        "selftest" => {
            settings.finish()?;
            selftest::run(out)
        }
        other => Err(CliError::Config(format!("unknown command `{other}`"))),
    }
}

/// Parses `argv` (including the program name) and runs it. Returns the
/// process exit code; diagnostics go to `err`.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match cli().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let result = (|| {
        if let Some(n) = thread_count(sub.get_one::<usize>("threads").copied())? {
            if n == 0 {
                return Err(CliError::Config("thread count must be positive".into()));
            }
            // Only the first call in a process can size the global pool.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        let settings = settings_for(name, sub)?;
        execute(name, settings, out)
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            e.exit_code()
        }
    }
}
