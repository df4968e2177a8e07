use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ehic::experiment::{
    describe_source, fig7_scenario, run_and_write, run_fig8, to_json, write_atomic, write_diagnostic, write_fig8, SolverKind, SolverOptions,
    FIG8_RUNS,
};
use ehic::generate::{gen_scenario, GeneratorParams, PacketParams};
use ehic::rates::ChannelParams;
use ehic::scenario_file::{load_scenario, ScenarioFile};
use ehic::{Error, Result};

#[derive(Parser)]
#[command(name = "ehic", version, about = "Power schedules for two energy harvesting transmitters on an interference channel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Iterative stopping tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    /// Oracle power step or DP battery spacing.
    #[arg(long)]
    grid: Option<f64>,
}

#[derive(Args, Clone)]
struct SolveArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone)]
struct GenArgs {
    #[arg(long, default_value_t = 20)]
    slots: usize,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Battery capacity of both users.
    #[arg(long, default_value_t = 10.0)]
    emax: f64,
    /// Mean seconds between harvests.
    #[arg(long, default_value_t = 5.0)]
    mean_interarrival: f64,
    #[arg(long, default_value_t = 0.7)]
    a: f64,
    #[arg(long, default_value_t = 5.0)]
    b: f64,
    /// Mean seconds between data packets; omit for backlogged users.
    #[arg(long)]
    packet_interarrival: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    packet_max: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Fig7,
    Fig8,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random scenario and write scenario.json.
    GenScenario(GenArgs),
    /// Iterative water-filling with unlimited data.
    SolveOffline(SolveArgs),
    /// Iterative water-filling with data arrivals (penalty method).
    SolveData(SolveArgs),
    /// Dynamic program over discretized batteries, run on the file's arrivals.
    OnlineDp(SolveArgs),
    /// Constant power at the mean harvest rate.
    Naive(SolveArgs),
    /// Per-user water-filling against an assumed mean interference.
    Distributed(SolveArgs),
    /// Exhaustive search on a power lattice (small instances only).
    Oracle(SolveArgs),
    /// Canned experiments.
    Preset {
        name: Preset,
        #[command(flatten)]
        common: Common,
    },
}

fn options(c: &Common) -> SolverOptions {
    SolverOptions { tol: c.tol, max_sweeps: c.max_sweeps, grid: c.grid }
}

fn solve(kind: SolverKind, args: &SolveArgs) -> Result<()> {
    let loaded = load_scenario(&args.scenario)?;
    let source = describe_source(Some(&args.scenario), None);
    let summary = run_and_write(&loaded, kind, &options(&args.common), &args.common.out, &source, args.common.seed)?;
    println!("objective {:.6} ({:.6e} bits)", summary.objective, summary.objective_bits);
    Ok(())
}

fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::GenScenario(g) => {
            let params = GeneratorParams {
                slots: g.slots,
                tau: g.tau,
                e_max: [g.emax, g.emax],
                mean_interarrival: g.mean_interarrival,
                channel: ChannelParams { a: g.a, b: g.b },
                packets: g.packet_interarrival.map(|m| PacketParams { mean_interarrival: m, max_size: g.packet_max }),
                seed: g.common.seed.unwrap_or(0),
            };
            let s = gen_scenario(&params)?;
            std::fs::create_dir_all(&g.common.out).map_err(|e| Error::InvalidInput(format!("creating {}: {e}", g.common.out.display())))?;
            let path = g.common.out.join("scenario.json");
            let mut text = ScenarioFile::from_scenario(&s).to_json();
            text.push('\n');
            write_atomic(&path, text.as_bytes())?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::SolveOffline(a) => solve(SolverKind::Offline, a),
        Command::SolveData(a) => solve(SolverKind::Data, a),
        Command::OnlineDp(a) => solve(SolverKind::OnlineDp, a),
        Command::Naive(a) => solve(SolverKind::Naive, a),
        Command::Distributed(a) => solve(SolverKind::Distributed, a),
        Command::Oracle(a) => solve(SolverKind::Oracle, a),
        Command::Preset { name: Preset::Fig7, common } => {
            let loaded = fig7_scenario()?;
            let summary = run_and_write(&loaded, SolverKind::Offline, &options(common), &common.out, &describe_source(None, Some("fig7")), common.seed)?;
            println!("objective {:.6} ({:.6e} bits)", summary.objective, summary.objective_bits);
            Ok(())
        }
        Command::Preset { name: Preset::Fig8, common } => {
            let (rows, summary) = run_fig8(common.seed.unwrap_or(0), FIG8_RUNS, &options(common))?;
            write_fig8(&common.out, &rows, &summary)?;
            print!("{}", to_json(&summary));
            Ok(())
        }
    }
}

fn out_dir(cmd: &Command) -> &PathBuf {
    match cmd {
        Command::GenScenario(g) => &g.common.out,
        Command::SolveOffline(a) | Command::SolveData(a) | Command::OnlineDp(a) | Command::Naive(a) | Command::Distributed(a) | Command::Oracle(a) => {
            &a.common.out
        }
        Command::Preset { common, .. } => &common.out,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Err(w) = write_diagnostic(out_dir(&cli.command), &e) {
                eprintln!("could not write diagnostic: {w}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
