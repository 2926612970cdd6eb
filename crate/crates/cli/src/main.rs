use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ltinact::degree_dist::DistSpec;
use ltinact::failure_bound::DEFAULT_PRECISION_BITS;
use ltinact::harness::{self, ExperimentSpec, Mode};
use ltinact::lt_codec::InactivationStrategy;
use ltinact::ripple_model::write_trajectory_csv;
use ltinact::sa_optimizer::{anneal, evaluate, rsd_parameter_search, AnnealConfig, DesignConstraints};

/// LT code design and analysis under inactivation decoding.
#[derive(Parser)]
#[command(name = "ltinact", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print a degree distribution and its summary.
    Dist {
        #[command(flatten)]
        code: Code,
        /// Emit JSON instead of the text format.
        #[arg(long)]
        json: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predicted inactivations from the ripple model.
    Predict {
        #[command(flatten)]
        code: Code,
        #[command(flatten)]
        grid: Grid,
        /// Also write the per-step model state (single epsilon only).
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo encode/decode runs.
    Simulate {
        #[command(flatten)]
        code: Code,
        #[command(flatten)]
        grid: Grid,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value = "random")]
        strategy: InactivationStrategy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lower bound on the decoding failure probability.
    Bound {
        #[command(flatten)]
        code: Code,
        #[command(flatten)]
        grid: Grid,
        /// Fractional bits of the extended-precision evaluation.
        #[arg(long, default_value_t = DEFAULT_PRECISION_BITS)]
        precision: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulated-annealing search for a degree distribution.
    Optimize(OptimizeArgs),
}

#[derive(Args)]
struct Code {
    /// Number of input symbols.
    #[arg(long)]
    k: usize,
    /// rsd:c,delta | rsd-trunc:c,delta,dmax | lrfc:mean | file:PATH
    #[arg(long)]
    dist: DistSpec,
}

#[derive(Args)]
struct Grid {
    /// Overheads: a comma list or start:step:stop.
    #[arg(long, default_value = "0")]
    eps: String,
}

#[derive(Args)]
struct OptimizeArgs {
    /// JSON file with the full annealing configuration. Flags below override
    /// its schedule fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Block size, when no config file is given.
    #[arg(long)]
    k: Option<usize>,
    /// Starting distribution; without it a truncated robust soliton grid
    /// search picks the start.
    #[arg(long)]
    dist: Option<DistSpec>,
    #[arg(long)]
    pf_target: Option<f64>,
    #[arg(long)]
    mean_cap: Option<f64>,
    #[arg(long)]
    dmax_cap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    t_init: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    cooling: Option<f64>,
    #[arg(long)]
    moves: Option<usize>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// History CSV destination.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the best distribution (text format).
    #[arg(long)]
    best: Option<PathBuf>,
}

/// Default grid for picking a starting point.
const C_GRID: [f64; 10] = [0.005, 0.0075, 0.01, 0.0125, 0.015, 0.02, 0.03, 0.05, 0.075, 0.1];
const DELTA_GRID: [f64; 10] = [0.0005, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5];

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn spec(mode: Mode, code: Code, grid: &Grid) -> Result<ExperimentSpec> {
    let eps = harness::parse_eps_grid(&grid.eps)?;
    Ok(ExperimentSpec::new(mode, code.dist, code.k, eps))
}

fn optimize(a: OptimizeArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<AnnealConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let Some(k) = a.k else {
                bail!("either --config or --k is required");
            };
            let mut c = DesignConstraints::standard(k);
            if let Some(v) = a.pf_target {
                c.pf_target = v;
            }
            if let Some(v) = a.mean_cap {
                c.mean_degree_cap = v;
            }
            if let Some(v) = a.dmax_cap {
                c.d_max_cap = v;
            }
            c.validate()?;
            let start = match &a.dist {
                Some(spec) => spec.build(k)?,
                None => {
                    let r = rsd_parameter_search(&c, &C_GRID, &DELTA_GRID)
                        .context("no feasible truncated robust soliton start in the default grid")?;
                    eprintln!(
                        "start: rsd-trunc:{},{},{} energy {}",
                        r.c, r.delta, c.d_max_cap, r.energy.total
                    );
                    r.dist
                }
            };
            AnnealConfig::new(c, start)
        }
    };
    macro_rules! set {
        ($($f:ident = $v:expr),*) => { $(if let Some(v) = $v { cfg.$f = v; })* };
    }
    set!(
        seed = a.seed,
        t_init = a.t_init,
        t_final = a.t_final,
        cooling_factor = a.cooling,
        moves_per_temperature = a.moves,
        perturbation_scale = a.scale,
        max_steps = a.max_steps
    );

    let run = anneal(&cfg)?;
    let e = evaluate(&run.best_dist, &cfg.constraints);
    eprintln!(
        "best energy {} (inactivations {}, failure bound {:e}, mean degree {}) after {} evaluations",
        run.best_energy,
        e.n_inact,
        e.pf_bound,
        run.best_dist.mean_degree(),
        run.evaluations
    );
    let mut out = sink(a.out.as_deref())?;
    run.write_history_csv(&mut out)?;
    out.flush()?;
    if let Some(p) = &a.best {
        std::fs::write(p, run.best_dist.to_text()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Dist { code, json, out } => {
            let dist = code.dist.build(code.k)?;
            let text = if json {
                dist.to_json() + "\n"
            } else {
                harness::emit_dist(&code.dist, &dist)
            };
            let mut w = sink(out.as_deref())?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
        Cmd::Predict { code, grid, trajectory, out } => {
            let s = spec(Mode::Predict, code, &grid)?;
            if trajectory.is_some() && s.epsilons.len() != 1 {
                bail!("--trajectory needs exactly one epsilon");
            }
            let rows = harness::run_prediction(&s)?;
            if let Some(p) = trajectory {
                let mut w = sink(Some(&p))?;
                write_trajectory_csv(&mut w, &rows[0].1.trajectory)?;
                w.flush()?;
            }
            let mut w = sink(out.as_deref())?;
            harness::write_prediction_csv(&mut w, &rows)?;
            w.flush()?;
        }
        Cmd::Simulate { code, grid, trials, strategy, seed, out } => {
            let mut s = spec(Mode::Simulate, code, &grid)?;
            s.trials = trials;
            s.strategy = strategy;
            s.master_seed = seed;
            let stats = harness::run_simulation(&s)?;
            let mut w = sink(out.as_deref())?;
            harness::write_simulation_csv(&mut w, &stats)?;
            w.flush()?;
        }
        Cmd::Bound { code, grid, precision, out } => {
            let s = spec(Mode::Bound, code, &grid)?;
            let rows = harness::run_bound(&s, precision)?;
            let mut w = sink(out.as_deref())?;
            harness::write_bound_csv(&mut w, &rows)?;
            w.flush()?;
        }
        Cmd::Optimize(a) => optimize(a)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
