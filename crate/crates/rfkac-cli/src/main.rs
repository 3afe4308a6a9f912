use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rfkac::pipeline::{run_pipeline, GChoice, PipelineConfig, RunContext, RunManifest, Stage};
use rfkac::Result;

#[derive(Parser, Debug)]
#[command(name = "rfkac", version, about = "Random-field Kac model: phases, instanton, field blocks, localization, cluster expansion, Gibbs sampling")]
struct Cli {
    /// TOML run configuration; defaults are used for anything missing
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifacts and manifest.json go here
    #[arg(long, global = true, default_value = "rfkac-out")]
    out_dir: PathBuf,
    /// What to print on stdout: the stage summary or its main table
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    theta: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    delta_star: Option<f64>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[arg(long, global = true)]
    q: Option<f64>,
    /// Scale function g: "log" or "power:<exponent>"
    #[arg(long, global = true, value_parser = parse_g)]
    g: Option<GChoice>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mean-field constants and the parameter constraint report
    Phase {
        /// Replace ε, Q, ζ₅, ζ₁, δ by the g-driven schedule before validating
        #[arg(long)]
        schedule: bool,
    },
    /// Front profile and surface tension
    Instanton {
        #[arg(long)]
        cells_per_unit: Option<usize>,
        #[arg(long)]
        half_length: Option<f64>,
    },
    /// Block field statistics
    Field {
        #[arg(long)]
        blocks: Option<usize>,
    },
    /// Random walk and interface localization
    Localize,
    /// Boundary-sign experiment and a thinned trajectory
    Gibbs {
        #[arg(long)]
        sweeps: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
        #[arg(long)]
        n_seeds: Option<usize>,
    },
    /// Cluster expansion on a small convergent system
    Cluster {
        #[arg(long)]
        order: Option<usize>,
    },
    /// Empirical probability-bound suite
    Verify {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// All configured stages
    Pipeline,
}

fn parse_g(s: &str) -> std::result::Result<GChoice, String> {
    match s.split_once(':') {
        None if s == "log" => Ok(GChoice::Log),
        Some(("power", e)) => e.parse().map(|exponent| GChoice::Power { exponent }).map_err(|e| format!("bad exponent: {e}")),
        _ => Err(format!("expected \"log\" or \"power:<exponent>\", got {s:?}")),
    }
}

fn build_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let m = &mut cfg.model;
    for (dst, src) in [(&mut m.beta, cli.beta), (&mut m.theta, cli.theta), (&mut m.gamma, cli.gamma), (&mut m.delta_star, cli.delta_star), (&mut m.eps, cli.eps), (&mut m.q, cli.q)] {
        if let Some(v) = src {
            *dst = v;
        }
    }
    if let Some(g) = cli.g {
        m.g = g;
    }
    let single = |st: Stage| vec![st];
    match &cli.command {
        Command::Phase { schedule } => {
            if *schedule {
                let ctx = RunContext::new(&cfg)?;
                cfg.model = cfg.model.asymptotic_schedule(&ctx.constants);
            }
            cfg.stages = single(Stage::Phase);
        }
        Command::Instanton { cells_per_unit, half_length } => {
            cfg.instanton.cells_per_unit = cells_per_unit.unwrap_or(cfg.instanton.cells_per_unit);
            cfg.instanton.half_length = half_length.unwrap_or(cfg.instanton.half_length);
            cfg.stages = single(Stage::Instanton);
        }
        Command::Field { blocks } => {
            cfg.field.blocks = blocks.unwrap_or(cfg.field.blocks);
            cfg.stages = single(Stage::Field);
        }
        Command::Localize => cfg.stages = single(Stage::Localize),
        Command::Gibbs { sweeps, thin, n_seeds } => {
            let g = &mut cfg.gibbs;
            g.sweeps = sweeps.unwrap_or(g.sweeps);
            g.trajectory_thin = thin.unwrap_or(g.trajectory_thin);
            g.n_seeds = n_seeds.unwrap_or(g.n_seeds);
            cfg.stages = single(Stage::Gibbs);
        }
        Command::Cluster { order } => {
            cfg.cluster.order = order.unwrap_or(cfg.cluster.order);
            cfg.stages = single(Stage::Cluster);
        }
        Command::Verify { trials } => {
            cfg.verify.trials = trials.unwrap_or(cfg.verify.trials);
            cfg.stages = single(Stage::Verify);
        }
        Command::Pipeline => {}
    }
    Ok(cfg)
}

fn main_table(stage: Stage) -> &'static str {
    match stage {
        Stage::Phase => "constraints.csv",
        Stage::Instanton => "instanton.csv",
        Stage::Field => "blocks.csv",
        Stage::Localize => "walk.csv",
        Stage::Gibbs => "trajectory.csv",
        Stage::Cluster => "cluster_series.csv",
        Stage::Verify => "verify.csv",
    }
}

fn emit(cli: &Cli, m: &RunManifest) -> Result<()> {
    let pipeline = matches!(cli.command, Command::Pipeline);
    match (cli.format, pipeline) {
        (Format::Json, true) => println!("{}", serde_json::to_string_pretty(m).expect("serializable")),
        (Format::Json, false) => println!("{}", serde_json::to_string_pretty(&m.stages[0].summary).expect("serializable")),
        (Format::Csv, true) => {
            println!("stage,seconds,artifact,sha256");
            for s in &m.stages {
                for a in &s.artifacts {
                    println!("{},{:.3},{},{}", s.stage.name(), s.seconds, a.path, a.sha256);
                }
            }
        }
        (Format::Csv, false) => print!("{}", std::fs::read_to_string(cli.out_dir.join(main_table(m.stages[0].stage)))?),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = build_config(cli)?;
    let m = run_pipeline(&cfg, &cli.out_dir)?;
    emit(cli, &m)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
