//! `jjl <suite|sweep|fiber> --config <path>`: runs experiment suites and
//! writes CSV/JSON artifacts. Exit codes: 0 pass, 1 assertion failure,
//! 2 usage or config error, 3 precision exhaustion.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use jjl::experiments::{
    conjecture_sweep, exit_code_for, parse_config, run_suite, sweep_checks, write_fibers, write_sweep_csv, Check,
    Experiment, Suite, SuiteReport,
};
use jjl::Error;

#[derive(Parser, Debug)]
#[command(name = "jjl", version, about = "Spectral renormalization experiments for Jacobi matrices")]
struct Cli {
    /// renorm, flow, traces, decay, limitperiod, conjecture, all, sweep, fiber, or `suite <name>`
    command: String,
    /// Suite name when the command is `suite`
    name: Option<String>,
    /// JSON experiment config
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output_path`
    #[arg(long)]
    out: Option<PathBuf>,
    /// Working precision, overriding `precision_bits`
    #[arg(long)]
    precision_bits: Option<u32>,
    /// Accept maps with a critical value on the invariant interval boundary
    #[arg(long)]
    allow_boundary: bool,
}

enum Action {
    Suite(Suite),
    Sweep,
    Fiber,
}

impl Action {
    fn label(&self) -> &'static str {
        match self {
            Action::Suite(s) => s.name(),
            Action::Sweep => "sweep",
            Action::Fiber => "fiber",
        }
    }
}

fn action(cli: &Cli) -> Result<Action, Error> {
    match (cli.command.as_str(), cli.name.as_deref()) {
        ("suite", Some(name)) => Ok(Action::Suite(name.parse()?)),
        ("suite", None) => Err(Error::Config("`suite` needs a suite name".into())),
        (_, Some(extra)) => Err(Error::Config(format!("unexpected argument {extra:?}"))),
        ("sweep", None) => Ok(Action::Sweep),
        ("fiber", None) => Ok(Action::Fiber),
        (name, None) => Ok(Action::Suite(name.parse()?)),
    }
}

fn experiment(cli: &Cli) -> Result<Experiment, Error> {
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", cli.config.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(out) = &cli.out {
        cfg.output_path = out.display().to_string();
    }
    if let Some(bits) = cli.precision_bits {
        cfg.precision_bits = bits;
    }
    if cli.allow_boundary {
        cfg.allow_boundary = true;
    }
    cfg.apply_env()?;
    Experiment::new(cfg)
}

fn execute(exp: &Experiment, action: &Action) -> Result<SuiteReport, Error> {
    match action {
        Action::Suite(s) => run_suite(exp, *s),
        Action::Sweep => {
            let rows = conjecture_sweep(exp)?;
            let path = exp.write_artifact("conjecture.csv", |w| write_sweep_csv(&rows, w))?;
            Ok(SuiteReport {
                checks: sweep_checks(&rows),
                artifacts: vec![path],
            })
        }
        Action::Fiber => Ok(SuiteReport {
            checks: Vec::new(),
            artifacts: vec![write_fibers(exp)?],
        }),
    }
}

fn write_report(exp: Option<&Experiment>, label: &str, report: &SuiteReport) {
    let failures = report.failures();
    let doc = serde_json::json!({
        "command": label,
        "passed": report.passed(),
        "checks": report.checks.len(),
        "failures": failures,
    });
    let text = serde_json::to_string_pretty(&doc).expect("report serializes");
    if !failures.is_empty() {
        eprintln!("{text}");
    }
    if let Some(exp) = exp {
        let path = exp.out_dir().join(format!("report_{label}.json"));
        if let Err(e) = std::fs::create_dir_all(exp.out_dir()).and_then(|_| std::fs::write(&path, text + "\n")) {
            eprintln!("jjl: cannot write {}: {e}", path.display());
        }
    }
}

fn fail(exp: Option<&Experiment>, label: &str, err: &Error) -> ExitCode {
    let report = SuiteReport {
        checks: vec![Check::from_error(label, err)],
        artifacts: Vec::new(),
    };
    eprintln!("jjl: {err}");
    write_report(exp, label, &report);
    ExitCode::from(exit_code_for(err) as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let action = match action(&cli) {
        Ok(a) => a,
        Err(e) => return fail(None, &cli.command, &e),
    };
    let label = action.label();
    let exp = match experiment(&cli) {
        Ok(exp) => exp,
        Err(e) => return fail(None, label, &e),
    };
    match execute(&exp, &action) {
        Ok(report) => {
            for c in &report.checks {
                println!("{c}");
            }
            for a in &report.artifacts {
                println!("wrote {}", a.display());
            }
            write_report(Some(&exp), label, &report);
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => fail(Some(&exp), label, &e),
    }
}
