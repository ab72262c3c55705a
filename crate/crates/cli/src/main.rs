use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use phi4_cli::config::{parse_config, Cost};
use phi4_cli::run::{exit_code, run, EXIT_CONFIG, EXIT_PASS, EXIT_VERDICT};
use phi4_cli::suite;

#[derive(Parser)]
#[command(name = "phi4lab", version, about = "Lattice phi^4 laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML configuration.
    Run { config: PathBuf },
    /// Check a configuration and list every problem found.
    Validate { config: PathBuf },
    /// Run acceptance criteria and print one verdict line each.
    Acceptance {
        /// Comma-separated criterion ids; all up to --max-cost when omitted.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u32>,
        #[arg(long, value_enum, default_value = "m")]
        max_cost: CostArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CostArg {
    S,
    M,
    L,
}

impl From<CostArg> for Cost {
    fn from(c: CostArg) -> Self {
        match c {
            CostArg::S => Cost::S,
            CostArg::M => Cost::M,
            CostArg::L => Cost::L,
        }
    }
}

fn init_threads() {
    // PHI4_THREADS caps the rayon pool; unset means one thread per core.
    if let Some(k) = std::env::var("PHI4_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            log::warn!("could not size thread pool: {e}");
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    init_threads();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config } => match parse_config(&config) {
            Ok(cfg) => {
                let result = run(&cfg);
                match &result {
                    Ok(m) => println!("{} {}", if m.passed { "PASS" } else { "FAIL" }, cfg.output_dir.display()),
                    Err(e) => eprintln!("{e}"),
                }
                exit_code(&result)
            }
            Err(e) => {
                eprint!("{e}");
                EXIT_CONFIG
            }
        },
        Command::Validate { config } => match parse_config(&config) {
            Ok(_) => {
                println!("ok");
                EXIT_PASS
            }
            Err(e) => {
                eprint!("{e}");
                EXIT_CONFIG
            }
        },
        Command::Acceptance { criteria, max_cost, seed } => {
            let results = suite::run_selected(&criteria, max_cost.into(), seed);
            for r in &results {
                println!("{}", r.line());
            }
            if results.iter().all(|r| r.passed) {
                EXIT_PASS
            } else {
                EXIT_VERDICT
            }
        }
    };
    ExitCode::from(code as u8)
}
