use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use homog_cli::config::{parse_config, RunConfig};
use homog_cli::run::{self, Outcome, RunError};

#[derive(Parser)]
#[command(name = "homog", version, about = "Locally-periodic two-phase homogenization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve cell problems and write the coefficient table
    Cell(Common),
    /// Run the heterogeneous micro model
    Micro(Common),
    /// Run the two-scale limit model
    Macro(Common),
    /// Corrector norms over an epsilon ladder
    Correctors(Common),
    /// Numerical checks of the auxiliary estimates
    Lemmas(Common),
}

/// Flags override the matching config keys.
#[derive(Args, Clone)]
struct Common {
    /// Config file with [geometry], [physics], [discretization] and [run] sections
    #[arg(long)]
    config: Option<PathBuf>,
    /// Exit with status 3 when an acceptance check fails
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    h: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long = "T")]
    t_end: Option<String>,
    #[arg(long = "H")]
    h_macro: Option<String>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    n: Option<String>,
    /// constant:r0 | linear:r0,a | bump:r0,amp,cx,cy,width
    #[arg(long = "radius-spec")]
    radius_spec: Option<String>,
    /// Stream-function amplitude
    #[arg(long)]
    velocity: Option<String>,
    #[arg(long = "d-h")]
    d_h: Option<String>,
    #[arg(long = "d-l")]
    d_l: Option<String>,
    /// Coefficient table written by `homog cell`
    #[arg(long)]
    table: Option<String>,
    /// Comma-separated epsilon ladder
    #[arg(long)]
    epsilons: Option<String>,
    /// Comma-separated output times
    #[arg(long)]
    times: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

impl Common {
    fn overrides(&self) -> Vec<(String, String)> {
        let list = |s: &str| format!("[{s}]");
        let quoted = |s: &str| format!("{s:?}");
        let fields = [
            ("epsilon", self.epsilon.clone()),
            ("h", self.h.clone()),
            ("dt", self.dt.clone()),
            ("T", self.t_end.clone()),
            ("H", self.h_macro.clone()),
            ("m", self.m.clone()),
            ("n", self.n.clone()),
            ("radius-spec", self.radius_spec.as_deref().map(quoted)),
            ("velocity", self.velocity.clone()),
            ("d-h", self.d_h.clone()),
            ("d-l", self.d_l.clone()),
            ("table", self.table.as_deref().map(quoted)),
            ("epsilons", self.epsilons.as_deref().map(list)),
            ("times", self.times.as_deref().map(list)),
            ("out", self.out.as_deref().map(quoted)),
        ];
        fields.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))).collect()
    }

    fn load(&self) -> Result<RunConfig, RunError> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p).map_err(|e| RunError::Input(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Ok(parse_config(&text, &self.overrides())?)
    }
}

fn threads() {
    if let Some(n) = std::env::var("HOMOG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    threads();
    let cli = Cli::parse();
    let (common, task): (&Common, fn(&RunConfig) -> Result<Outcome, RunError>) = match &cli.command {
        Command::Cell(c) => (c, run::cell),
        Command::Micro(c) => (c, run::micro),
        Command::Macro(c) => (c, run::macroscale),
        Command::Correctors(c) => (c, run::correctors),
        Command::Lemmas(c) => (c, run::lemmas),
    };
    let result = common.load().and_then(|cfg| {
        for w in &cfg.warnings {
            eprintln!("warning: {w}");
        }
        task(&cfg)
    });
    match result {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            if common.strict && !outcome.passed() {
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
