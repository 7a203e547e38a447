use std::path::PathBuf;
use std::process::ExitCode;

use binospec::runner::{run_experiment, run_sweep, write_outputs, RunError};
use binospec::scenario::{parse_sweep, Scenario};
use binospec::speculator::PolicyKind;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "binospec", version, about = "MapReduce fault-recovery simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write jobs.csv, summary.csv, pdf.csv and cdf.csv.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// yarn, bino or off.
        #[arg(long, default_value = "bino")]
        policy: PolicyKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the event trace to trace.txt.
        #[arg(long)]
        trace: bool,
        /// Parameter sweep as key=v1,v2,... (repeatable; cross product).
        #[arg(long = "sweep", value_name = "KEY=V1,V2")]
        sweep: Vec<String>,
    },
}

fn simulate(
    scenario: PathBuf,
    policy: PolicyKind,
    seed: u64,
    out: PathBuf,
    trace: bool,
    sweep: Vec<String>,
) -> Result<(), RunError> {
    let text = std::fs::read_to_string(&scenario)
        .map_err(|e| RunError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", scenario.display()))))?;
    if sweep.is_empty() {
        let s = Scenario::parse(&text, &[])?;
        let exp = run_experiment(&s, policy, seed, trace)?;
        for w in &exp.outcome.world.warnings {
            eprintln!("warning: {w}");
        }
        let row = write_outputs(&exp, s.output.pdf_bin_width, &out)?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into());
        println!(
            "{}: {} jobs, {} incomplete, mean slowdown {}, {} speculative attempts -> {}",
            row.policy,
            row.jobs,
            row.incomplete,
            fmt(row.mean_slowdown),
            row.spec_tasks,
            out.display()
        );
    } else {
        let axes = sweep.iter().map(|a| parse_sweep(a)).collect::<Result<Vec<_>, _>>()?;
        let points = run_sweep(&text, &axes, policy, seed, trace, &out)?;
        println!("{} sweep points -> {}", points.len(), out.join("sweep_summary.csv").display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Simulate {
            scenario,
            policy,
            seed,
            out,
            trace,
            sweep,
        } => simulate(scenario, policy, seed, out, trace, sweep),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
