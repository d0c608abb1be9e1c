//! `fedzo run | sweep | bounds`.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use super::config::ExperimentConfig;
use super::experiment::{build_experiment, run_experiment, theory_report, RunOutput, TheoryReport};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "fedzo", version, about = "Federated zeroth-order optimization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write `<name>.csv` and `<name>.json`.
    Run(ConfigArgs),
    /// Run one experiment per value of a single key.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// `KEY=v1,v2,...`, e.g. `H=5,10,20,50`.
        #[arg(long)]
        sweep: String,
    },
    /// Print step-size caps, the corollary schedule and the bound for a config.
    Bounds {
        #[command(flatten)]
        config: ConfigArgs,
        /// Emit the report as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML config; every key has a default, so this may be omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// `key=value` override; dotted keys reach into tables.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        for s in &self.set {
            cfg.apply_override(s)?;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exit status for an error: 2 config, 3 divergence, 4 I/O, 1 otherwise.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::InvalidParams(_) | Error::InvalidDimension(_) | Error::UnsupportedBaseline => {
            2
        }
        Error::Divergence { .. } => 3,
        Error::Io { .. } | Error::Idx(_) | Error::Csv(_) | Error::Json(_) => 4,
        _ => 1,
    }
}

/// Parse `KEY=v1,v2,...` into the key and its values.
pub fn parse_sweep(arg: &str) -> Result<(String, Vec<String>)> {
    let (key, values) = arg
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("sweep {arg:?} is not KEY=v1,v2,...")))?;
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_owned())
        .filter(|v| !v.is_empty())
        .collect();
    if key.trim().is_empty() || values.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "sweep {arg:?} needs a key and at least one value"
        )));
    }
    Ok((key.trim().to_owned(), values))
}

/// Run one arm per value; arm `v` of key `K` is named `<name>_<K><v>`.
pub fn run_sweep(base: &ExperimentConfig, key: &str, values: &[String]) -> Result<Vec<RunOutput>> {
    let mut arms = Vec::with_capacity(values.len());
    for v in values {
        let mut cfg = base.clone();
        cfg.apply_override(&format!("{key}={v}"))?;
        cfg.name = format!("{}_{}{}", base.name, key.rsplit('.').next().unwrap_or(key), v);
        cfg.validate()?;
        arms.push(cfg);
    }
    arms.iter().map(|cfg| run_experiment(cfg, true)).collect()
}

/// Theory report for a config, building the instance to learn the dimension.
pub fn bounds_report(cfg: &ExperimentConfig) -> Result<TheoryReport> {
    let exp = build_experiment(cfg)?;
    exp.theory()
        .or_else(|_| theory_report(cfg, exp.info.dim, Some(exp.steps), None, None))
}

fn fmt(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6e}")
    }
}

fn print_report(r: &TheoryReport) {
    let s = &r.setting;
    println!("variant        {}", s.variant);
    println!(
        "d={} b1={} b2={} N={} cohort={} H={} gamma={}",
        s.d,
        s.b1,
        s.b2,
        s.n,
        s.cohort,
        s.h,
        fmt(s.gamma)
    );
    println!("corollary      eta={} mu={}", fmt(r.corollary.eta), fmt(r.corollary.mu));
    println!(
        "               in regime: {}  SNR sufficient: {}",
        r.corollary.in_regime, r.corollary.snr_sufficient
    );
    println!("H order est.   {}", r.max_local_iters_order);
    if let Some(d) = &r.derived {
        println!(
            "derived        c_g~={} c_h~={} sigma~^2={} c_hat={}",
            fmt(d.c_g_tilde),
            fmt(d.c_h_tilde),
            fmt(d.sigma_tilde_sq),
            fmt(d.c_hat)
        );
    }
    if let Some(terms) = &r.cap_terms {
        println!("eta cap terms");
        for t in terms {
            println!("  {:<36} {}", t.expr, fmt(t.value));
        }
    }
    if let Some(c) = &r.cap_check {
        println!(
            "eta cap        {} ({}), satisfied: {}",
            fmt(c.cap),
            c.binding,
            c.satisfied
        );
    }
    if let Some(b) = &r.bound {
        println!(
            "bound          {} = {} + {} + {}",
            fmt(b.total),
            fmt(b.initial_gap),
            fmt(b.variance),
            fmt(b.smoothing)
        );
    }
    if r.assumption_constants.is_none() {
        println!("(no assumption constants for this loss; caps and bound omitted)");
    }
}

fn summarize(out: &RunOutput) {
    let e = &out.sidecar.final_eval;
    let mut line = format!(
        "{}: {} rounds, final loss {}",
        out.sidecar.config.name,
        out.sidecar.rounds,
        fmt(e.loss)
    );
    if let Some(g) = e.grad_sq {
        line += &format!(", grad_sq {}", fmt(g));
    }
    if let Some(a) = e.test_acc {
        line += &format!(", test acc {a:.4}");
    }
    if let Some(p) = &out.csv_path {
        line += &format!(" -> {}", p.display());
    }
    println!("{line}");
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => summarize(&run_experiment(&args.resolve()?, true)?),
        Command::Sweep { config, sweep } => {
            let base = config.resolve()?;
            let (key, values) = parse_sweep(&sweep)?;
            for out in run_sweep(&base, &key, &values)? {
                summarize(&out);
            }
        }
        Command::Bounds { config, json } => {
            let report = bounds_report(&config.resolve()?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print_report(&report);
            }
        }
    }
    Ok(())
}

/// Entry point shared by the binary and tests.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_spec_parsing() {
        let (k, v) = parse_sweep("H=5,10, 20,50").unwrap();
        assert_eq!(k, "H");
        assert_eq!(v, ["5", "10", "20", "50"]);
        assert!(parse_sweep("H").is_err());
        assert!(parse_sweep("H=").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), 2);
        assert_eq!(
            exit_code(&Error::Divergence {
                device: 0,
                round: 1,
                step: 2
            }),
            3
        );
        assert_eq!(exit_code(&Error::io("/x", std::io::Error::other("boom"))), 4);
        assert_eq!(exit_code(&Error::EmptyCohort { round: 0 }), 1);
    }

    #[test]
    fn cli_parses_subcommands() {
        Cli::try_parse_from(["fedzo", "run", "--config", "a.toml", "--set", "T=3"]).unwrap();
        Cli::try_parse_from(["fedzo", "sweep", "--sweep", "H=5,10"]).unwrap();
        Cli::try_parse_from(["fedzo", "bounds", "--json"]).unwrap();
        assert!(Cli::try_parse_from(["fedzo", "train"]).is_err());
    }
}
