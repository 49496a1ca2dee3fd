use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use powerctl::baselines::{fp_solve, grid_oracle, wmmse_solve};
use powerctl::experiment::{run_experiment, Allocator, RunConfig};
use powerctl::rng::{stream_rng, Stream};
use powerctl::simcore::Network;
use powerctl::{Error, Result};

/// Transmit-power allocation experiments: learned multi-agent control
/// against centralized benchmarks.
#[derive(Parser, Debug)]
#[command(name = "powerctl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the learned allocator, test it, and run the benchmarks.
    Train(RunArgs),
    /// Test a trained checkpoint on fresh layouts alongside the benchmarks.
    Test {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Benchmarks only.
    Bench(RunArgs),
    /// Exhaustive grid search on small instances, compared with FP and WMMSE.
    Oracle {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 10)]
        levels: usize,
        #[arg(long, default_value_t = 20)]
        instances: u64,
    },
}

/// Precedence: defaults, then `--config`, then the named flags, then each
/// `--set` in order.
#[derive(Args, Debug)]
struct RunArgs {
    /// JSON run configuration; missing fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    train_slots: Option<u64>,
    #[arg(long)]
    test_slots: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    allocators: Option<Vec<Allocator>>,
    /// sum-rate or pf
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    n_cells: Option<usize>,
    #[arg(long)]
    half_spacing: Option<f64>,
    #[arg(long)]
    inner_radius: Option<f64>,
    /// "k", "random:k" or "1-k"
    #[arg(long)]
    links_per_cell: Option<String>,
    /// Hz, "uncorrelated", or "random[:lo-hi]"
    #[arg(long)]
    doppler: Option<String>,
    #[arg(long)]
    per_slot_csv: bool,
    /// Any field by its dotted path, e.g. `agents.hyper.gamma=0.7`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = root;
    let mut parts = path.split('.').peekable();
    while let Some(key) = parts.next() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("'{path}' does not name a config field")))?;
        if !obj.contains_key(key) {
            return Err(Error::InvalidConfig(format!("unknown config field '{key}' in '{path}'")));
        }
        if parts.peek().is_none() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.get_mut(key).unwrap();
    }
    Err(Error::InvalidConfig("empty field path".into()))
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.train_slots {
            cfg.train_slots = v;
        }
        if let Some(v) = self.test_slots {
            cfg.test_slots = v;
        }
        if let Some(v) = &self.allocators {
            cfg.allocators = v.clone();
        }
        if let Some(v) = &self.mode {
            cfg.sim.mode = v.parse()?;
        }
        if let Some(v) = self.n_cells {
            cfg.sim.n_cells = v;
        }
        if let Some(v) = self.half_spacing {
            cfg.sim.half_spacing = v;
        }
        if let Some(v) = self.inner_radius {
            cfg.sim.inner_radius = v;
        }
        if let Some(v) = &self.links_per_cell {
            cfg.sim.links_per_cell = v.parse()?;
        }
        if let Some(v) = &self.doppler {
            cfg.sim.doppler = v.parse()?;
        }
        if self.per_slot_csv {
            cfg.per_slot_csv = true;
        }
        if !self.set.is_empty() {
            let mut tree = serde_json::to_value(&cfg)?;
            for item in &self.set {
                let (path, raw) = item
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidConfig(format!("expected PATH=VALUE, got '{item}'")))?;
                let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
                set_path(&mut tree, path, value)?;
            }
            cfg = serde_json::from_value(tree)?;
        }
        cfg.overrides = std::env::args().skip(1).collect();
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_summary(summary: &powerctl::experiment::Summary) {
    for r in &summary.results {
        match r.log_avg_mean {
            Some(l) => println!("{:<16} {:.4} bit/s/Hz per link (std {:.4}), log-avg utility {:.3}", r.allocator, r.mean, r.std, l),
            None => println!("{:<16} {:.4} bit/s/Hz per link (std {:.4})", r.allocator, r.mean, r.std),
        }
    }
}

fn run_oracle(cfg: &RunConfig, levels: usize, instances: u64) -> Result<()> {
    let base = cfg.seeds[0];
    let mut rows = Vec::new();
    for k in 0..instances {
        let seed = base + k;
        let net = Network::new(cfg.sim.clone(), seed)?;
        let g = net.gains();
        let w = net.weights().to_vec();
        let (p_max, noise) = (net.p_max(), net.noise());
        let grid = grid_oracle(g, &w, p_max, noise, levels)?;
        let mut rng = stream_rng(seed, Stream::FpInit);
        let fp = fp_solve(g, &w, p_max, noise, cfg.solver, &mut rng)?;
        let wmmse = wmmse_solve(g, &w, p_max, noise, cfg.solver)?;
        rows.push(serde_json::json!({
            "seed": seed,
            "grid": { "objective": grid.objective(), "p": grid.p },
            "fp": { "objective": fp.objective(), "p": fp.p, "iterations": fp.iterations },
            "wmmse": { "objective": wmmse.objective(), "p": wmmse.p, "iterations": wmmse.iterations },
        }));
        println!(
            "seed {seed}: grid {:.4}  fp {:.4}  wmmse {:.4}",
            grid.objective(),
            fp.objective(),
            wmmse.objective()
        );
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    let doc = serde_json::json!({ "config": cfg, "levels": levels, "instances": rows });
    std::fs::write(cfg.output_dir.join("oracle.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let mut cfg = args.resolve()?;
            if !cfg.allocators.contains(&Allocator::DqnMatched) {
                cfg.allocators.insert(0, Allocator::DqnMatched);
            }
            print_summary(&run_experiment(&cfg)?);
        }
        Command::Test { checkpoint, run } => {
            let mut cfg = run.resolve()?;
            cfg.allocators.retain(|a| !matches!(a, Allocator::DqnMatched | Allocator::DqnUnmatched(_)));
            cfg.allocators.insert(0, Allocator::DqnUnmatched(checkpoint));
            print_summary(&run_experiment(&cfg)?);
        }
        Command::Bench(args) => {
            let mut cfg = args.resolve()?;
            cfg.allocators.retain(|a| !matches!(a, Allocator::DqnMatched | Allocator::DqnUnmatched(_)));
            if cfg.allocators.is_empty() {
                cfg.allocators = Allocator::benchmarks();
            }
            print_summary(&run_experiment(&cfg)?);
        }
        Command::Oracle { run, levels, instances } => {
            let cfg = run.resolve()?;
            run_oracle(&cfg, levels, instances)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
