//! Command-line front end. `run` parses arguments, writes data to `out` and
//! diagnostics to `err`, and returns the process exit code.

pub mod modelfile;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use seqfisher::expr::ParamPoint;
use seqfisher::export::curve_csv;
use seqfisher::inforate::{
    entropy_curve, information_vector, myopic_rate_curve, zero_mode_cutoff, zero_mode_split, InfoError,
};
use seqfisher::model::{Initial, ParamHmm};
use seqfisher::msp::{Closure, Msp, MspOptions};
use seqfisher::oracle::{brute_fisher, mle_exact, MleOptions, OracleError, OracleOptions};
use seqfisher::spectral::{eigendecompose_msp, transient_annihilation_check, SpectralOptions};
use seqfisher::zoo::{ZooModel, NAMES};

use modelfile::ModelFile;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_HORIZON: i32 = 3;
pub const EXIT_CAP: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "seqfisher", version, about = "Exact Fisher-information rates of parametrized hidden Markov processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// `zoo:<name>[?key=value&...]` or `file:<path>`.
    #[arg(long)]
    model: String,
    /// Parameter value, repeatable.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct MspArgs {
    #[arg(long, default_value_t = 64)]
    max_depth: usize,
    #[arg(long, default_value_t = 10_000)]
    max_states: usize,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long = "L")]
    l: usize,
    #[arg(long, default_value_t = 1e-5)]
    fd_step: f64,
    /// Maximum number of enumerated words.
    #[arg(long, default_value_t = 1 << 24)]
    cap: u64,
    #[arg(long, default_value_t = 2.0)]
    log_base: f64,
}

#[derive(Args, Debug)]
struct RatesArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    msp: MspArgs,
    #[arg(long = "L")]
    l: usize,
    /// Add zero-mode and relaxation columns.
    #[arg(long)]
    split: bool,
    /// Add the myopic entropy rate column.
    #[arg(long)]
    entropy: bool,
    #[arg(long, default_value_t = 2.0)]
    log_base: f64,
}

#[derive(Subcommand, Debug)]
enum OracleMode {
    /// Brute-force Fisher information F(L) and f_L.
    Fisher(OracleArgs),
    /// Brute-force block entropy H(L) and h_l.
    Entropy(OracleArgs),
}

#[derive(Subcommand, Debug)]
enum ZooCommand {
    /// Names, parameters, canonical point and metadata of every built-in model.
    List,
    /// A built-in model as a model file.
    Show { selector: String },
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Myopic rate, cumulative and excess information curves as CSV.
    Rates(RatesArgs),
    /// Spectral report of the mixed-state transition operator as JSON.
    Spectrum {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        msp: MspArgs,
    },
    /// Enumeration oracles.
    Oracle {
        #[command(subcommand)]
        mode: OracleMode,
    },
    /// Exact bias and covariance of the maximum-likelihood estimator.
    Mle {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "L")]
        l: usize,
        #[arg(long = "N")]
        n: usize,
        #[arg(long, default_value_t = 1 << 24)]
        cap: u64,
        /// Write per-outcome estimates to this CSV file.
        #[arg(long)]
        outcomes_csv: Option<PathBuf>,
    },
    /// Mixed-state presentation as JSON.
    Msp {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        msp: MspArgs,
    },
    /// Structural diagnostics at a parameter point.
    Validate {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Built-in models.
    Zoo {
        #[command(subcommand)]
        command: ZooCommand,
    },
}

/// Failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl std::fmt::Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }

    fn validation(message: impl std::fmt::Display) -> Self {
        Self::new(EXIT_VALIDATION, message)
    }
}

impl From<InfoError> for Failure {
    fn from(e: InfoError) -> Self {
        let code = match e {
            InfoError::HorizonExceeded { .. } | InfoError::Truncated(_) => EXIT_HORIZON,
            _ => EXIT_VALIDATION,
        };
        Failure::new(code, e)
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        let code = match e {
            OracleError::EnumerationCap { .. } => EXIT_CAP,
            _ => EXIT_VALIDATION,
        };
        Failure::new(code, e)
    }
}

struct Loaded {
    hmm: ParamHmm,
    theta: ParamPoint,
}

fn load(args: &ModelArgs) -> Result<Loaded, Failure> {
    let (hmm, mut theta) = if let Some(sel) = args.model.strip_prefix("zoo:") {
        let entry = ZooModel::from_selector(sel)
            .and_then(|m| m.build())
            .map_err(Failure::validation)?;
        (entry.hmm, entry.canonical)
    } else if let Some(path) = args.model.strip_prefix("file:") {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::validation(format!("{path}: {e}")))?;
        let hmm = ModelFile::from_json(&text)
            .map_err(Failure::validation)?
            .to_hmm()
            .map_err(Failure::validation)?;
        (hmm, ParamPoint::new())
    } else {
        return Err(Failure::new(
            EXIT_USAGE,
            format!("model selector `{}` must start with zoo: or file:", args.model),
        ));
    };
    for kv in &args.set {
        let (name, value) = kv
            .split_once('=')
            .ok_or_else(|| Failure::new(EXIT_USAGE, format!("--set `{kv}` is not NAME=VALUE")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Failure::new(EXIT_USAGE, format!("--set `{kv}`: value is not a number")))?;
        if !hmm.parameters().iter().any(|p| p == name) {
            return Err(Failure::validation(format!("model has no parameter `{name}`")));
        }
        if !value.is_finite() {
            return Err(Failure::validation(format!("--set `{kv}`: value is not finite")));
        }
        theta = theta.with(name, value);
    }
    let diag = hmm.validate(&theta);
    if !diag.is_valid() {
        return Err(Failure::validation(format!("model is invalid: {}", diag.problems.join("; "))));
    }
    Ok(Loaded { hmm, theta })
}

fn build_msp(loaded: &Loaded, args: &MspArgs) -> Result<Msp, Failure> {
    let numeric = loaded.hmm.instantiate(&loaded.theta).map_err(Failure::validation)?;
    let opts = MspOptions {
        max_depth: args.max_depth,
        max_states: args.max_states,
        ..MspOptions::default()
    };
    Ok(Msp::build(&numeric, &opts))
}

fn write_json(out: &mut dyn Write, value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::new(EXIT_USAGE, e))?;
    writeln!(out, "{text}").map_err(|e| Failure::new(EXIT_USAGE, e))
}

fn cmd_rates(args: &RatesArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let l = args.l;
    if l == 0 {
        return Err(Failure::new(EXIT_USAGE, "--L must be at least 1"));
    }
    let loaded = load(&args.model)?;
    let msp = build_msp(&loaded, &args.msp)?;
    for w in msp.warnings() {
        let _ = writeln!(err, "warning: {w}");
    }
    let iv = information_vector(&msp)?;
    let curve = myopic_rate_curve(&msp, &iv, l)?;
    match &curve.rate {
        Some(r) if r.leak > 0.0 => {
            let _ = writeln!(
                err,
                "warning: recurrent class is truncated (leak {:.3e}); asymptotic rate is provisional",
                r.leak
            );
        }
        Some(_) => {}
        None => {
            let _ = writeln!(err, "note: no single resolved attractor; E columns omitted");
        }
    }
    let split_data = if args.split {
        let spec = eigendecompose_msp(&msp, &SpectralOptions::default()).map_err(Failure::validation)?;
        let s = zero_mode_split(&msp, &iv, &spec, l)?;
        let cutoff = zero_mode_cutoff(&s);
        let declared = loaded
            .hmm
            .metadata()
            .cryptic_order
            .map_or("undeclared".to_string(), |k| k.to_string());
        let _ = writeln!(err, "zero-mode cutoff L* = {cutoff}; declared cryptic order K = {declared}");
        Some(s)
    } else {
        None
    };
    let entropy_data = if args.entropy {
        Some(entropy_curve(&msp, l, args.log_base)?)
    } else {
        None
    };
    let text = curve_csv(
        loaded.hmm.parameters(),
        &loaded.theta,
        &curve,
        split_data.as_ref(),
        entropy_data.as_ref(),
    );
    out.write_all(text.as_bytes()).map_err(|e| Failure::new(EXIT_USAGE, e))
}

fn cmd_spectrum(model: &ModelArgs, msp_args: &MspArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let loaded = load(model)?;
    let msp = build_msp(&loaded, msp_args)?;
    if let Closure::Truncated(d) = msp.closure() {
        return Err(Failure::new(
            EXIT_HORIZON,
            format!("mixed-state presentation is truncated at depth {d}; spectrum needs a closed presentation"),
        ));
    }
    let spec = eigendecompose_msp(&msp, &SpectralOptions::default()).map_err(Failure::validation)?;
    let stationary = matches!(loaded.hmm.initial(), Initial::Stationary);
    let annihilation = match transient_annihilation_check(&msp, &spec, stationary) {
        Ok(r) => json!({
            "passed": r.passed(),
            "tolerance": r.tolerance,
            "overlaps": r.overlaps.iter().map(|o| json!({"re": o.eigenvalue.re, "im": o.eigenvalue.im, "norm": o.norm})).collect::<Vec<_>>(),
        }),
        Err(e) => json!({"skipped": e.to_string()}),
    };
    let mut report = spec.to_json(Some(msp.start()));
    report["eigenvalues"] = json!(spec
        .eigenvalues()
        .iter()
        .map(|z| json!({"re": z.re, "im": z.im}))
        .collect::<Vec<_>>());
    report["annihilation"] = annihilation;
    report["states"] = json!(msp.len());
    write_json(out, &report)
}

fn cmd_oracle(mode: &OracleMode, out: &mut dyn Write) -> Result<(), Failure> {
    let (args, fisher) = match mode {
        OracleMode::Fisher(a) => (a, true),
        OracleMode::Entropy(a) => (a, false),
    };
    if args.l == 0 {
        return Err(Failure::new(EXIT_USAGE, "--L must be at least 1"));
    }
    let loaded = load(&args.model)?;
    let opts = OracleOptions {
        fd_step: args.fd_step,
        cap: args.cap,
        log_base: args.log_base,
        ..OracleOptions::default()
    };
    if fisher {
        let r = brute_fisher(&loaded.hmm, &loaded.theta, args.l, &opts)?;
        write_json(out, &r.to_json(loaded.hmm.parameters()))
    } else {
        let (big_h, h) = seqfisher::oracle::brute_block_entropy(&loaded.hmm, &loaded.theta, args.l, &opts)?;
        write_json(
            out,
            &json!({
                "L": args.l,
                "log_base": args.log_base,
                "H": big_h[args.l - 1],
                "H_by_length": big_h,
                "h": h,
            }),
        )
    }
}

fn cmd_mle(
    model: &ModelArgs,
    l: usize,
    n: usize,
    cap: u64,
    outcomes_csv: Option<&PathBuf>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), Failure> {
    if l == 0 || n == 0 {
        return Err(Failure::new(EXIT_USAGE, "--L and --N must be at least 1"));
    }
    let loaded = load(model)?;
    let opts = MleOptions {
        oracle: OracleOptions {
            cap,
            ..OracleOptions::default()
        },
        ..MleOptions::default()
    };
    let r = mle_exact(&loaded.hmm, &loaded.theta, l, n, &opts)?;
    if r.boundary_probability > 0.0 {
        let _ = writeln!(
            err,
            "note: estimate on the search boundary with probability {:.6}",
            r.boundary_probability
        );
    }
    if r.flat_probability > 0.0 {
        let _ = writeln!(err, "warning: flat likelihood with probability {:.6}", r.flat_probability);
    }
    if let Some(path) = outcomes_csv {
        std::fs::write(path, r.outcomes_csv(loaded.hmm.alphabet()))
            .map_err(|e| Failure::new(EXIT_USAGE, format!("{}: {e}", path.display())))?;
    }
    write_json(out, &r.to_json())
}

fn cmd_msp(model: &ModelArgs, msp_args: &MspArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let loaded = load(model)?;
    let msp = build_msp(&loaded, msp_args)?;
    write_json(out, &msp.to_json(loaded.hmm.alphabet(), loaded.hmm.parameters()))
}

fn cmd_validate(model: &ModelArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let loaded = load(model)?;
    let d = loaded.hmm.validate(&loaded.theta);
    let report = json!({
        "valid": d.is_valid(),
        "row_residuals": d.row_residuals,
        "initial_residual": d.initial_residual,
        "components": d.components,
        "closed_classes": d.closed_classes,
        "attractors": d.attractors(),
        "irreducible": d.is_irreducible(),
        "problems": d.problems,
    });
    write_json(out, &report)
}

fn cmd_zoo(command: &ZooCommand, out: &mut dyn Write) -> Result<(), Failure> {
    match command {
        ZooCommand::List => {
            let mut models = Vec::new();
            for name in NAMES {
                let e = seqfisher::zoo::get_model(name, &[]).map_err(Failure::validation)?;
                let args = match &e.model {
                    ZooModel::MkGoldenMean { m, k } => json!({"M": m, "K": k}),
                    ZooModel::OverparamEven { g } => json!({"g": g.to_string()}),
                    _ => json!({}),
                };
                models.push(json!({
                    "name": name,
                    "args": args,
                    "parameters": e.hmm.parameters(),
                    "canonical": e.canonical.iter().map(|(k, v)| (k.to_string(), json!(v))).collect::<serde_json::Map<_, _>>(),
                    "states": e.hmm.states().len(),
                    "metadata": e.hmm.metadata(),
                }));
            }
            write_json(out, &json!(models))
        }
        ZooCommand::Show { selector } => {
            let sel = selector.strip_prefix("zoo:").unwrap_or(selector);
            let e = ZooModel::from_selector(sel)
                .and_then(|m| m.build())
                .map_err(Failure::validation)?;
            let file = ModelFile::from_hmm(&e.hmm);
            write_json(out, &serde_json::to_value(file).map_err(|e| Failure::new(EXIT_USAGE, e))?)
        }
    }
}

/// Runs one command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match &cli.command {
        Command::Rates(args) => cmd_rates(args, out, err),
        Command::Spectrum { model, msp } => cmd_spectrum(model, msp, out),
        Command::Oracle { mode } => cmd_oracle(mode, out),
        Command::Mle {
            model,
            l,
            n,
            cap,
            outcomes_csv,
        } => cmd_mle(model, *l, *n, *cap, outcomes_csv.as_ref(), out, err),
        Command::Msp { model, msp } => cmd_msp(model, msp, out),
        Command::Validate { model } => cmd_validate(model, out),
        Command::Zoo { command } => cmd_zoo(command, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
