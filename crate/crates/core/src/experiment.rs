//! Experiment runner: trains and tests the learned allocator and the
//! benchmarks on identical channel realizations and writes the results.
//!
//! Every allocator gets its own [`Network`] built from the same seed, so the
//! layouts and fading sequences coincide. The learned allocator trains for
//! `train_slots` and then tests on the following `test_slots`; every other
//! allocator idles at full power through the training horizon and is then
//! evaluated on the same test slots.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{central_delayed, fp_solve, full_power, random_alloc, wmmse_solve, SolverOptions};
use crate::dqn::{Checkpoint, MlpParams};
use crate::error::{Error, Result};
use crate::marl::{AgentConfig, DqnController};
use crate::rng::{stream_rng, Stream};
use crate::simcore::{Mode, Network, SimConfig, SlotOutcome};

pub const MOVING_AVERAGE_WINDOW: usize = 250;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Allocator {
    DqnMatched,
    DqnUnmatched(PathBuf),
    Wmmse,
    Fp,
    Central,
    Random,
    FullPower,
}

impl Allocator {
    pub fn benchmarks() -> Vec<Allocator> {
        vec![Allocator::Wmmse, Allocator::Fp, Allocator::Central, Allocator::Random, Allocator::FullPower]
    }

    /// Short name used for directories and summary keys.
    pub fn name(&self) -> &'static str {
        match self {
            Allocator::DqnMatched => "dqn-matched",
            Allocator::DqnUnmatched(_) => "dqn-unmatched",
            Allocator::Wmmse => "wmmse",
            Allocator::Fp => "fp",
            Allocator::Central => "central",
            Allocator::Random => "random",
            Allocator::FullPower => "full-power",
        }
    }
}

impl fmt::Display for Allocator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Allocator::DqnUnmatched(p) => write!(f, "dqn-unmatched:{}", p.display()),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for Allocator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("dqn-unmatched:") {
            return Ok(Allocator::DqnUnmatched(PathBuf::from(path)));
        }
        Ok(match s {
            "dqn-matched" | "dqn" => Allocator::DqnMatched,
            "wmmse" => Allocator::Wmmse,
            "fp" => Allocator::Fp,
            "central" => Allocator::Central,
            "random" => Allocator::Random,
            "full-power" => Allocator::FullPower,
            "dqn-unmatched" => {
                return Err(Error::InvalidConfig("dqn-unmatched needs a checkpoint: dqn-unmatched:<path>".into()))
            }
            _ => return Err(Error::InvalidConfig(format!("unknown allocator '{s}'"))),
        })
    }
}

impl TryFrom<String> for Allocator {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Allocator> for String {
    fn from(a: Allocator) -> String {
        a.to_string()
    }
}

/// Everything needed to reproduce a run. Missing JSON fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub agents: AgentConfig,
    pub solver: SolverOptions,
    pub train_slots: u64,
    pub test_slots: u64,
    pub allocators: Vec<Allocator>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Write one CSV row per test slot.
    pub per_slot_csv: bool,
    /// Command-line overrides, verbatim.
    pub overrides: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut allocators = vec![Allocator::DqnMatched];
        allocators.extend(Allocator::benchmarks());
        Self {
            sim: SimConfig::default(),
            agents: AgentConfig::default(),
            solver: SolverOptions::default(),
            train_slots: 40_000,
            test_slots: 5_000,
            allocators,
            seeds: (0..10).collect(),
            output_dir: PathBuf::from("runs"),
            per_slot_csv: false,
            overrides: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.test_slots == 0 {
            return Err(Error::InvalidConfig("test_slots must be positive".into()));
        }
        Ok(())
    }
}

/// Per-slot summary of a test (or training) slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotMetrics {
    pub t: u64,
    /// Average spectral efficiency per link (bit/s/Hz).
    pub mean_rate: f64,
    pub weighted_sum: f64,
    /// `sum ln(Cbar * bandwidth)` after the slot, PF mode only.
    pub log_avg: Option<f64>,
}

fn metrics(net: &Network, o: &SlotOutcome) -> Result<SlotMetrics> {
    let log_avg = match net.mode() {
        Mode::ProportionalFair => Some(net.log_avg_objective()?),
        Mode::SumRate => None,
    };
    Ok(SlotMetrics { t: o.t, mean_rate: o.mean_rate(), weighted_sum: o.weighted_sum(), log_avg })
}

/// Results of one allocator on one seed.
#[derive(Debug, Clone)]
pub struct AllocatorRun {
    pub allocator: Allocator,
    pub seed: u64,
    pub test: Vec<SlotMetrics>,
    /// Time-averaged spectral efficiency of each link over the test.
    pub per_link: Vec<f64>,
    /// Per-slot average rate per link during training (learned allocator only).
    pub training_curve: Vec<f64>,
    /// Trained parameters (matched learned allocator only).
    pub params: Option<MlpParams>,
}

impl AllocatorRun {
    /// Average spectral efficiency per link over the test.
    pub fn mean_rate(&self) -> f64 {
        self.test.iter().map(|m| m.mean_rate).sum::<f64>() / self.test.len() as f64
    }

    pub fn final_log_avg(&self) -> Option<f64> {
        self.test.last().and_then(|m| m.log_avg)
    }
}

struct TestAccumulator {
    test: Vec<SlotMetrics>,
    rate_sums: Vec<f64>,
}

impl TestAccumulator {
    fn new(n: usize, slots: u64) -> Self {
        Self { test: Vec::with_capacity(slots as usize), rate_sums: vec![0.0; n] }
    }

    fn push(&mut self, net: &Network, o: &SlotOutcome) -> Result<()> {
        for (s, r) in self.rate_sums.iter_mut().zip(&o.rates) {
            *s += r;
        }
        self.test.push(metrics(net, o)?);
        Ok(())
    }

    fn per_link(&self) -> Vec<f64> {
        let k = self.test.len().max(1) as f64;
        self.rate_sums.iter().map(|s| s / k).collect()
    }
}

/// Trains the learned allocator on a fresh network for `cfg.train_slots`.
/// Returns the controller (still training), the network positioned at the
/// first test slot, and the per-slot average rate per link.
pub fn train_dqn(cfg: &RunConfig, seed: u64) -> Result<(DqnController, Network, Vec<f64>)> {
    let mut net = Network::new(cfg.sim.clone(), seed)?;
    let mut ctl = DqnController::for_training(&cfg.sim, cfg.agents.clone(), net.n_links(), seed)?;
    let mut curve = Vec::with_capacity(cfg.train_slots as usize);
    for _ in 0..cfg.train_slots {
        let rec = ctl.step(&mut net)?;
        curve.push(rec.outcome.mean_rate());
    }
    Ok((ctl, net, curve))
}

/// Greedy test of a controller; PF weights restart at the first test slot.
pub fn test_dqn(cfg: &RunConfig, net: &mut Network, ctl: &mut DqnController) -> Result<(Vec<SlotMetrics>, Vec<f64>)> {
    ctl.finish_training();
    net.reinitialize_weights();
    let mut acc = TestAccumulator::new(net.n_links(), cfg.test_slots);
    for _ in 0..cfg.test_slots {
        let rec = ctl.step(net)?;
        acc.push(net, &rec.outcome)?;
    }
    let per_link = acc.per_link();
    Ok((acc.test, per_link))
}

fn warm_up(net: &mut Network, slots: u64) -> Result<()> {
    let p = full_power(net.n_links(), net.p_max());
    for _ in 0..slots {
        net.step(&p)?;
    }
    Ok(())
}

/// Runs one allocator on one seed.
pub fn run_allocator(cfg: &RunConfig, seed: u64, allocator: &Allocator) -> Result<AllocatorRun> {
    if let Allocator::DqnMatched = allocator {
        let (mut ctl, mut net, curve) = train_dqn(cfg, seed)?;
        let params = ctl.params().clone();
        let (test, per_link) = test_dqn(cfg, &mut net, &mut ctl)?;
        return Ok(AllocatorRun {
            allocator: allocator.clone(),
            seed,
            test,
            per_link,
            training_curve: curve,
            params: Some(params),
        });
    }

    let mut net = Network::new(cfg.sim.clone(), seed)?;
    warm_up(&mut net, cfg.train_slots)?;
    net.reinitialize_weights();

    if let Allocator::DqnUnmatched(path) = allocator {
        let ckpt = Checkpoint::load(path)?;
        let params = ckpt.to_params_with_shape(&cfg.agents.layer_sizes())?;
        let mut ctl = DqnController::for_testing(&cfg.sim, cfg.agents.clone(), params)?;
        let (test, per_link) = test_dqn(cfg, &mut net, &mut ctl)?;
        return Ok(AllocatorRun {
            allocator: allocator.clone(),
            seed,
            test,
            per_link,
            training_curve: Vec::new(),
            params: None,
        });
    }

    let n = net.n_links();
    let p_max = net.p_max();
    let noise = net.noise();
    let mut fp_rng = stream_rng(seed, Stream::FpInit);
    let mut random_rng = stream_rng(seed, Stream::RandomAlloc);
    let mut acc = TestAccumulator::new(n, cfg.test_slots);
    for _ in 0..cfg.test_slots {
        let st = net.state();
        let w = &st.w_now;
        let p = match allocator {
            Allocator::Wmmse => wmmse_solve(&st.g_now, w, p_max, noise, cfg.solver)?.p,
            Allocator::Fp => fp_solve(&st.g_now, w, p_max, noise, cfg.solver, &mut fp_rng)?.p,
            Allocator::Central => central_delayed(&st.g_prev, w, p_max, noise, cfg.solver, &mut fp_rng)?.p,
            Allocator::Random => random_alloc(n, p_max, &mut random_rng),
            Allocator::FullPower => full_power(n, p_max),
            Allocator::DqnMatched | Allocator::DqnUnmatched(_) => unreachable!(),
        };
        let o = net.step(&p)?;
        acc.push(&net, &o)?;
    }
    let per_link = acc.per_link();
    Ok(AllocatorRun {
        allocator: allocator.clone(),
        seed,
        test: acc.test,
        per_link,
        training_curve: Vec::new(),
        params: None,
    })
}

/// Mean over the previous `window` values (fewer at the start).
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(x.len());
    let mut sum = 0.0;
    for (k, v) in x.iter().enumerate() {
        sum += v;
        if k >= window {
            sum -= x[k - window];
        }
        out.push(sum / (k + 1).min(window) as f64);
    }
    out
}

/// Empirical CDF as `(value, F(value))` pairs: sorted samples, the k-th
/// (1-based) carrying `k/n`. Repeated values produce a vertical step.
pub fn emit_cdf(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("CDF sample"));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    Ok(v.into_iter().enumerate().map(|(k, x)| (x, (k + 1) as f64 / n)).collect())
}

pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocatorSummary {
    pub allocator: String,
    /// Average bit/s/Hz per link, per seed.
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Final PF utility per seed, PF mode only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_avg_per_seed: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_avg_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: RunConfig,
    pub results: Vec<AllocatorSummary>,
}

pub fn summarize(cfg: &RunConfig, runs: &[AllocatorRun]) -> Summary {
    let results = cfg
        .allocators
        .iter()
        .map(|a| {
            let mine: Vec<&AllocatorRun> = runs.iter().filter(|r| &r.allocator == a).collect();
            let per_seed: Vec<f64> = mine.iter().map(|r| r.mean_rate()).collect();
            let (mean, std) = mean_std(&per_seed);
            let log_avg: Option<Vec<f64>> = mine.iter().map(|r| r.final_log_avg()).collect();
            let log_avg_mean = log_avg.as_ref().map(|v| mean_std(v).0);
            AllocatorSummary {
                allocator: a.to_string(),
                per_seed,
                mean,
                std,
                log_avg_per_seed: log_avg,
                log_avg_mean,
            }
        })
        .collect();
    Summary { config: cfg.clone(), results }
}

fn csv_header<W: Write>(out: &mut W, cfg: &RunConfig, seed: Option<u64>) -> Result<()> {
    writeln!(out, "# config: {}", serde_json::to_string(cfg)?)?;
    if let Some(seed) = seed {
        writeln!(out, "# seed: {seed}")?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

pub fn write_slots_csv(path: &Path, cfg: &RunConfig, run: &AllocatorRun) -> Result<()> {
    let mut out = create(path)?;
    csv_header(&mut out, cfg, Some(run.seed))?;
    writeln!(out, "slot,mean_rate,weighted_sum,log_avg")?;
    for m in &run.test {
        let log_avg = m.log_avg.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", m.t, m.mean_rate, m.weighted_sum, log_avg)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_learning_curve_csv(path: &Path, cfg: &RunConfig, seed: u64, curve: &[f64]) -> Result<()> {
    let mut out = create(path)?;
    csv_header(&mut out, cfg, Some(seed))?;
    writeln!(out, "slot,mean_rate,moving_average")?;
    let ma = moving_average(curve, MOVING_AVERAGE_WINDOW);
    for (k, (c, m)) in curve.iter().zip(&ma).enumerate() {
        writeln!(out, "{},{c},{m}", k + 1)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_cdf_csv(path: &Path, cfg: &RunConfig, seed: Option<u64>, samples: &[f64]) -> Result<()> {
    let mut out = create(path)?;
    csv_header(&mut out, cfg, seed)?;
    writeln!(out, "value,quantile")?;
    for (x, q) in emit_cdf(samples)? {
        writeln!(out, "{x},{q}")?;
    }
    out.flush()?;
    Ok(())
}

/// Runs every (seed, allocator) pair and writes all result files under
/// `cfg.output_dir`. Returns the summary that was written to `summary.json`.
pub fn run_experiment(cfg: &RunConfig) -> Result<Summary> {
    cfg.validate()?;
    let root = &cfg.output_dir;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        for allocator in &cfg.allocators {
            let run = run_allocator(cfg, seed, allocator)?;
            let dir = root.join(format!("seed-{seed}")).join(allocator.name());
            if cfg.per_slot_csv {
                write_slots_csv(&dir.join("slots.csv"), cfg, &run)?;
            }
            write_cdf_csv(&dir.join("cdf.csv"), cfg, Some(seed), &run.per_link)?;
            if !run.training_curve.is_empty() {
                write_learning_curve_csv(&dir.join("learning_curve.csv"), cfg, seed, &run.training_curve)?;
            }
            if let Some(params) = &run.params {
                let meta = serde_json::json!({ "seed": seed, "train_slots": cfg.train_slots, "config": cfg });
                fs::create_dir_all(&dir)?;
                Checkpoint::from_params(params, meta).save(&dir.join("checkpoint.json"))?;
            }
            runs.push(run);
        }
    }
    for allocator in &cfg.allocators {
        let pooled: Vec<f64> = runs
            .iter()
            .filter(|r| &r.allocator == allocator)
            .flat_map(|r| r.per_link.iter().copied())
            .collect();
        write_cdf_csv(&root.join(allocator.name()).join("cdf.csv"), cfg, None, &pooled)?;
    }
    let summary = summarize(cfg, &runs);
    let mut out = create(&root.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut out, &summary)?;
    writeln!(out)?;
    out.flush()?;
    Ok(summary)
}
