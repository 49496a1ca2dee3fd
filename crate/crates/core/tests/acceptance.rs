//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! per criterion, and exits nonzero if any fails.
//!
//! The network-scale criteria (7, 8, 10) share one set of runs: three seeds of
//! 40,000 training and 5,000 test slots for every allocator. Expect roughly
//! half an hour on one core.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use powerctl::baselines::{fp_solve, grid_oracle, wmmse_solve, SolverOptions};
use powerctl::channel::{init_fading, step_fading, Doppler};
use powerctl::dqn::{loss_and_grad, Experience, MlpParams, LAYER_SIZES};
use powerctl::experiment::{mean_std, moving_average, run_allocator, Allocator, AllocatorRun, RunConfig};
use powerctl::geometry::LinksPerCell;
use powerctl::marl::{compute_reward, interference_price};
use powerctl::rng::{stream_rng, Stream};
use powerctl::simcore::{Mode, Network, SimConfig};

type Outcome = (bool, String);

const SEEDS: [u64; 3] = [1, 2, 3];
const FRESH_SEEDS: [u64; 3] = [101, 102, 103];

fn three_link_config() -> SimConfig {
    SimConfig { n_cells: 3, links_per_cell: LinksPerCell::Fixed(1), ..SimConfig::default() }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let cfg = three_link_config();
    let w = [1.0; 3];
    let mut worst_fp = f64::INFINITY;
    let mut worst_wmmse = f64::INFINITY;
    let mut both_ok = 0;
    for seed in 0..20u64 {
        let net = Network::new(cfg.clone(), seed).unwrap();
        let (g, p_max, noise) = (net.gains(), net.p_max(), net.noise());
        let best = grid_oracle(g, &w, p_max, noise, 10).unwrap().objective();
        let mut rng = stream_rng(seed, Stream::FpInit);
        let fp = fp_solve(g, &w, p_max, noise, SolverOptions::default(), &mut rng).unwrap().objective() / best;
        let wm = wmmse_solve(g, &w, p_max, noise, SolverOptions::default()).unwrap().objective() / best;
        worst_fp = worst_fp.min(fp);
        worst_wmmse = worst_wmmse.min(wm);
        if fp >= 0.95 && wm >= 0.95 {
            both_ok += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_fp >= 0.95 && worst_wmmse >= 0.95 && secs < 1.0;
    (
        pass,
        format!(
            "worst FP/grid {worst_fp:.3}, worst WMMSE/grid {worst_wmmse:.3}, \
             {both_ok}/20 instances with both >= 0.95, {secs:.2} s"
        ),
    )
}

fn solver_monotonicity() -> Outcome {
    let mut checked = 0;
    let mut worst_drop = 0.0f64;
    for (k, &n_cells) in [3usize, 10, 19].iter().cycle().take(100).enumerate() {
        let seed = 1000 + k as u64;
        let cfg = SimConfig { n_cells, ..SimConfig::default() };
        let net = Network::new(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..net.n_links()).map(|_| rng.random_range(0.1..5.0)).collect();
        let fp = fp_solve(net.gains(), &w, net.p_max(), net.noise(), SolverOptions::default(), &mut rng).unwrap();
        let wm = wmmse_solve(net.gains(), &w, net.p_max(), net.noise(), SolverOptions::default()).unwrap();
        for r in [fp, wm] {
            for pair in r.objective_trace.windows(2) {
                worst_drop = worst_drop.max(pair[0] - pair[1]);
            }
            checked += 1;
        }
    }
    (worst_drop <= 1e-9, format!("{checked} traces, largest per-iteration decrease {worst_drop:.2e}"))
}

fn lag1_autocorrelation(doppler: Doppler, slots: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut fading = init_fading(2, doppler, 0.02, &mut rng);
    let mut prev = fading.h.clone();
    let mut cross = 0.0;
    let mut power = 0.0;
    for _ in 0..slots {
        step_fading(&mut fading, &mut rng);
        for (a, b) in prev.iter().zip(fading.h.iter()) {
            cross += (b * a.conj()).re;
            power += a.norm_sqr();
        }
        prev.assign(&fading.h);
    }
    cross / power
}

fn fading_statistics() -> Outcome {
    let oracle = powerctl::channel::bessel_j0(2.0 * std::f64::consts::PI * 10.0 * 0.02);
    let rho = lag1_autocorrelation(Doppler::Fixed(10.0), 100_000);
    let flat = lag1_autocorrelation(Doppler::Uncorrelated, 100_000);
    let pass = (rho - 0.6425).abs() <= 0.01 && (oracle - 0.6425).abs() < 1e-4 && flat.abs() < 0.01;
    (pass, format!("lag-1 {rho:.4} (J0 oracle {oracle:.4}), uncorrelated {flat:.4}"))
}

fn parameter_count() -> Outcome {
    let n = MlpParams::zeros(&LAYER_SIZES).n_params();
    (n == 36_150, format!("{n} parameters"))
}

fn naive_forward(p: &MlpParams, s: &[f64]) -> Vec<f64> {
    let mut a = s.to_vec();
    let last = p.layers.len() - 1;
    for (k, l) in p.layers.iter().enumerate() {
        let (ni, no) = l.weights.dim();
        a = (0..no)
            .map(|j| {
                let z = l.bias[j] + (0..ni).map(|i| a[i] * l.weights[[i, j]]).sum::<f64>();
                if k < last { z.tanh() } else { z }
            })
            .collect();
    }
    a
}

fn naive_loss(p: &MlpParams, batch: &[&Experience], target: &MlpParams, gamma: f64) -> f64 {
    batch
        .iter()
        .map(|e| {
            let next = naive_forward(target, &e.s_next).into_iter().fold(f64::NEG_INFINITY, f64::max);
            (e.r + gamma * next - naive_forward(p, &e.s)[e.a]).powi(2)
        })
        .sum()
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let std = rng.random_range(0.05..0.3);
        let p = MlpParams::init(&LAYER_SIZES, std, &mut rng);
        let target = MlpParams::init(&LAYER_SIZES, std, &mut rng);
        let batch: Vec<Experience> = (0..4)
            .map(|_| Experience {
                s: (0..57).map(|_| rng.random_range(-1.0..1.0)).collect(),
                a: rng.random_range(0..10),
                r: rng.random_range(-2.0..5.0),
                s_next: (0..57).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let refs: Vec<&Experience> = batch.iter().collect();
        let grad = loss_and_grad(&p, &refs, &target, 0.5).unwrap().1.to_flat();
        let flat = p.to_flat();
        for _ in 0..100 {
            let k = rng.random_range(0..flat.len());
            let mut plus = flat.clone();
            plus[k] += h;
            let mut minus = flat.clone();
            minus[k] -= h;
            let lp = naive_loss(&MlpParams::from_flat(&LAYER_SIZES, &plus).unwrap(), &refs, &target, 0.5);
            let lm = naive_loss(&MlpParams::from_flat(&LAYER_SIZES, &minus).unwrap(), &refs, &target, 0.5);
            let fd = (lp - lm) / (2.0 * h);
            // relative error; the 1e-7 floor keeps exact zeros comparable
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-7);
            worst = worst.max(rel);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (worst < 1e-4 && secs < 60.0, format!("worst relative error {worst:.2e} over 1000 coordinates, {secs:.1} s"))
}

fn reward_properties() -> Outcome {
    let mut silent = 0;
    let mut prices = 0;
    let mut violations = 0;
    for slot in 0..1000u64 {
        let mode = if slot % 2 == 0 { Mode::SumRate } else { Mode::ProportionalFair };
        let cfg = SimConfig { n_cells: 7, mode, ..SimConfig::default() };
        let mut net = Network::new(cfg.clone(), slot).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(slot);
        let n = net.n_links();
        let p: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < 0.3 { 0.0 } else { cfg.p_max() * rng.random::<f64>() })
            .collect();
        let o = net.step(&p).unwrap();
        let sets = &net.state().interfered_now;
        for i in 0..n {
            let r = compute_reward(&o, sets, i, cfg.noise(), cfg.sinr_cap());
            if p[i] == 0.0 {
                silent += 1;
                if r != 0.0 {
                    violations += 1;
                }
            }
            for &k in &sets[i] {
                prices += 1;
                if interference_price(&o, i, k, cfg.noise(), cfg.sinr_cap()) < 0.0 {
                    violations += 1;
                }
            }
        }
    }
    (violations == 0, format!("{silent} silent agents, {prices} prices, {violations} violations"))
}

struct SumRateRuns {
    by_seed: Vec<Vec<AllocatorRun>>,
}

impl SumRateRuns {
    fn get(&self, seed_index: usize, a: &Allocator) -> &AllocatorRun {
        self.by_seed[seed_index].iter().find(|r| &r.allocator == a).unwrap()
    }

    fn means(&self, a: &Allocator) -> Vec<f64> {
        (0..self.by_seed.len()).map(|s| self.get(s, a).mean_rate()).collect()
    }
}

fn sum_rate_runs() -> SumRateRuns {
    let cfg = RunConfig::default();
    let mut allocators = vec![Allocator::DqnMatched];
    allocators.extend(Allocator::benchmarks());
    let by_seed = SEEDS
        .iter()
        .map(|&seed| {
            allocators
                .iter()
                .map(|a| {
                    let t = Instant::now();
                    let run = run_allocator(&cfg, seed, a).unwrap();
                    eprintln!("  seed {seed} {a}: {:.4} bit/s/Hz per link ({:.0} s)", run.mean_rate(), t.elapsed().as_secs_f64());
                    run
                })
                .collect()
        })
        .collect();
    SumRateRuns { by_seed }
}

fn avg(x: &[f64]) -> f64 {
    mean_std(x).0
}

/// Paired gap `a - b` across seeds is nonnegative within two standard errors.
fn gap_ok(a: &[f64], b: &[f64]) -> (bool, f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (m, s) = mean_std(&d);
    let se = s / (d.len() as f64).sqrt();
    (m >= -2.0 * se, m, se)
}

fn benchmark_ordering(runs: &SumRateRuns) -> Outcome {
    let dqn = avg(&runs.means(&Allocator::DqnMatched));
    let wmmse = runs.means(&Allocator::Wmmse);
    let fp = runs.means(&Allocator::Fp);
    let central = runs.means(&Allocator::Central);
    let random = avg(&runs.means(&Allocator::Random));
    let full = avg(&runs.means(&Allocator::FullPower));
    let (wm_m, fp_m, ce_m) = (avg(&wmmse), avg(&fp), avg(&central));

    let close = (random - full).abs() / random.max(full) <= 0.05;
    let low = random < 0.6 * fp_m && full < 0.6 * fp_m;
    let a = close && low;
    let (g1, d1, se1) = gap_ok(&wmmse, &fp);
    let (g2, d2, se2) = gap_ok(&fp, &central);
    let b = g1 && g2;
    let c = dqn >= 0.95 * fp_m;
    (
        a && b && c,
        format!(
            "dqn {dqn:.3}, wmmse {wm_m:.3}, fp {fp_m:.3}, central {ce_m:.3}, random {random:.3}, full-power {full:.3}; \
             (a) {} [random/full gap {:.1}%, random/fp {:.2}, full/fp {:.2}]; \
             (b) {} [wmmse-fp {d1:+.3} (se {se1:.3}), fp-central {d2:+.3} (se {se2:.3})]; \
             (c) {} [dqn/fp {:.3}]; reported: dqn >= wmmse is {}",
            verdict(a),
            100.0 * (random - full).abs() / random.max(full),
            random / fp_m,
            full / fp_m,
            verdict(b),
            verdict(c),
            dqn / fp_m,
            dqn >= wm_m,
        ),
    )
}

fn convergence_horizon(runs: &SumRateRuns) -> Outcome {
    let curves: Vec<&Vec<f64>> = (0..SEEDS.len()).map(|s| &runs.get(s, &Allocator::DqnMatched).training_curve).collect();
    let len = curves[0].len();
    let mean_curve: Vec<f64> = (0..len).map(|t| curves.iter().map(|c| c[t]).sum::<f64>() / curves.len() as f64).collect();
    let ma = moving_average(&mean_curve, 250);
    let full = avg(&runs.means(&Allocator::FullPower));
    // the first 249 slots average fewer than 250 values
    let first = ma.iter().enumerate().skip(249).find(|(_, v)| **v > full).map(|(t, _)| t + 1);
    let pass = first.is_some_and(|t| t <= 30_000);
    let at = |t: usize| ma[t.min(len) - 1];
    (
        pass,
        format!(
            "first slot above full-power average {full:.3}: {}; moving average at 5k/15k/30k/40k: {:.3}/{:.3}/{:.3}/{:.3}",
            first.map_or("never".to_string(), |t| t.to_string()),
            at(5_000),
            at(15_000),
            at(30_000),
            at(40_000)
        ),
    )
}

fn pf_mode() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.sim.mode = Mode::ProportionalFair;
    let seed = SEEDS[0];
    let dqn = run_allocator(&cfg, seed, &Allocator::DqnMatched).unwrap();
    let fp = run_allocator(&cfg, seed, &Allocator::Fp).unwrap();
    let traj: Vec<f64> = dqn.test.iter().map(|m| m.log_avg.unwrap()).collect();
    let head = avg(&traj[..1000]);
    let tail = avg(&traj[traj.len() - 1000..]);
    let (start, end) = (traj[0], *traj.last().unwrap());
    let fp_end = fp.final_log_avg().unwrap();
    let increasing = end > start && tail > head;
    let pass = increasing && end >= 0.9 * fp_end;
    (
        pass,
        format!(
            "dqn utility {start:.2} -> {end:.2} (first/last 1000-slot means {head:.2}/{tail:.2}), \
             fp {fp_end:.2}, ratio {:.3}; mean rate dqn {:.3} fp {:.3}",
            end / fp_end,
            dqn.mean_rate(),
            fp.mean_rate()
        ),
    )
}

fn unmatched_transfer(runs: &SumRateRuns) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    let params = runs.get(0, &Allocator::DqnMatched).params.clone().unwrap();
    powerctl::dqn::Checkpoint::from_params(&params, serde_json::json!({ "seed": SEEDS[0] }))
        .save(&path)
        .unwrap();
    let cfg = RunConfig::default();
    let unmatched = Allocator::DqnUnmatched(path);
    let mut dqn = Vec::new();
    let mut central = Vec::new();
    for &seed in &FRESH_SEEDS {
        dqn.push(run_allocator(&cfg, seed, &unmatched).unwrap().mean_rate());
        central.push(run_allocator(&cfg, seed, &Allocator::Central).unwrap().mean_rate());
    }
    let (d, c) = (avg(&dqn), avg(&central));
    (d >= 0.9 * c, format!("unmatched dqn {d:.3} vs central {c:.3} on fresh layouts, ratio {:.3}", d / c))
}

fn verdict(ok: bool) -> &'static str {
    if ok { "PASS" } else { "FAIL" }
}

fn report(id: u32, name: &str, start: Instant, (ok, detail): Outcome) -> bool {
    println!("criterion {id:>2} {:<28} {}  {detail}  [{:.0} s]", name, verdict(ok), start.elapsed().as_secs_f64());
    ok
}

fn main() -> ExitCode {
    let mut all = true;
    let t = Instant::now();
    all &= report(1, "oracle equivalence", t, oracle_equivalence());
    let t = Instant::now();
    all &= report(2, "solver monotonicity", t, solver_monotonicity());
    let t = Instant::now();
    all &= report(3, "fading statistics", t, fading_statistics());
    let t = Instant::now();
    all &= report(4, "parameter count", t, parameter_count());
    let t = Instant::now();
    all &= report(5, "gradient correctness", t, gradient_correctness());
    let t = Instant::now();
    all &= report(6, "reward properties", t, reward_properties());

    let t = Instant::now();
    let runs = sum_rate_runs();
    all &= report(7, "benchmark ordering", t, benchmark_ordering(&runs));
    let t = Instant::now();
    all &= report(8, "convergence horizon", t, convergence_horizon(&runs));
    let t = Instant::now();
    all &= report(9, "proportional fairness", t, pf_mode());
    let t = Instant::now();
    all &= report(10, "unmatched transfer", t, unmatched_transfer(&runs));

    if all {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: some criteria failed");
        ExitCode::FAILURE
    }
}
