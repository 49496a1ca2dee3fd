//! Replays a scripted episode and rebuilds every agent state from the raw
//! per-slot history (gains, powers, rates, weights), independently of the
//! simulator's own bookkeeping.

use powerctl::channel::ChannelGains;
use powerctl::geometry::LinksPerCell;
use powerctl::marl::StateBuilder;
use powerctl::simcore::{Mode, Network, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct History {
    g: Vec<ChannelGains>,
    p: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
}

fn config(n_cells: usize, links: usize) -> SimConfig {
    SimConfig {
        n_cells,
        half_spacing: 150.0,
        links_per_cell: LinksPerCell::Fixed(links),
        mode: Mode::ProportionalFair,
        ..SimConfig::default()
    }
}

fn script(n: usize, slots: usize, p_max: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..slots)
        .map(|t| {
            (0..n)
                .map(|i| {
                    // link 0 goes quiet for a stretch to exercise stale feedback
                    if i == 0 && (6..11).contains(&t) {
                        return 0.0;
                    }
                    if rng.random::<f64>() < 0.3 {
                        0.0
                    } else {
                        p_max * rng.random_range(1..10) as f64 / 9.0
                    }
                })
                .collect()
        })
        .collect()
}

fn record(cfg: &SimConfig, seed: u64, powers: &[Vec<f64>]) -> History {
    let mut net = Network::new(cfg.clone(), seed).unwrap();
    let st = net.state();
    let mut h = History {
        g: vec![st.g_prev.clone()],
        p: vec![st.p_prev.clone()],
        c: vec![st.c_prev.clone()],
        w: vec![st.w_prev.clone()],
    };
    for p in powers {
        let o = net.step(p).unwrap();
        h.g.push(o.gains);
        h.p.push(o.powers);
        h.c.push(o.rates);
        h.w.push(o.weights);
    }
    h
}

fn ranked(mut v: Vec<(usize, f64)>, c: usize) -> Vec<Option<usize>> {
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut out: Vec<Option<usize>> = v.into_iter().take(c).map(|(j, _)| Some(j)).collect();
    out.resize(c, None);
    out
}

fn expected_state(h: &History, t: usize, i: usize, eta: f64, noise: f64) -> Vec<f64> {
    let n = h.p[0].len();
    let c = 5;
    let th = eta * noise;
    let g = |s: usize, a: usize, b: usize| h.g[s].get(a, b);
    let inr = |s: usize, ps: usize, k: usize| {
        noise + (0..n).filter(|&j| j != k).map(|j| g(s, j, k) * h.p[ps][j]).sum::<f64>()
    };
    let mut s = vec![
        h.p[t - 1][i],
        1.0 / h.w[t][i],
        h.c[t - 1][i],
        g(t, i, i),
        g(t - 1, i, i),
        inr(t, t - 1, i),
        inr(t - 1, t - 2, i),
    ];
    let now: Vec<(usize, f64)> = (0..n)
        .filter(|&j| j != i && g(t - 1, j, i) * h.p[t - 1][j] > th)
        .map(|j| (j, g(t, j, i) * h.p[t - 1][j]))
        .collect();
    for slot in ranked(now, c) {
        match slot {
            Some(j) => s.extend([g(t, j, i) * h.p[t - 1][j], 1.0 / h.w[t - 1][j], h.c[t - 1][j]]),
            None => s.extend([0.0, -1.0, -1.0]),
        }
    }
    let prev: Vec<(usize, f64)> = (0..n)
        .filter(|&j| j != i && g(t - 2, j, i) * h.p[t - 2][j] > th)
        .map(|j| (j, g(t - 1, j, i) * h.p[t - 2][j]))
        .collect();
    for slot in ranked(prev, c) {
        match slot {
            Some(j) => s.extend([g(t - 1, j, i) * h.p[t - 2][j], 1.0 / h.w[t - 2][j], h.c[t - 2][j]]),
            None => s.extend([0.0, -1.0, -1.0]),
        }
    }
    let last_active = (0..t).rev().find(|&s| h.p[s][i] > 0.0).unwrap();
    let shares: Vec<(usize, f64)> = (0..n)
        .filter(|&k| k != i && g(last_active, i, k) * h.p[last_active][i] > th)
        .map(|k| (k, g(last_active, i, k) * h.p[last_active][i] / inr(t - 1, t - 1, k)))
        .collect();
    for slot in ranked(shares.clone(), c) {
        match slot {
            Some(k) => {
                let share = shares.iter().find(|(x, _)| *x == k).unwrap().1;
                s.extend([g(t - 1, k, k), 1.0 / h.w[t - 1][k], h.c[t - 1][k], share]);
            }
            None => s.extend([0.0, -1.0, -1.0, 0.0]),
        }
    }
    s
}

fn check_replay(cfg: SimConfig, seed: u64, slots: usize) -> usize {
    let n = Network::new(cfg.clone(), seed).unwrap().n_links();
    let powers = script(n, slots, cfg.p_max(), seed);
    let h = record(&cfg, seed, &powers);
    let builder = StateBuilder::new(&cfg, 5).unwrap();
    let mut net = Network::new(cfg.clone(), seed).unwrap();
    let mut checked_stale = false;
    let mut widest = 0;
    for (step, p) in powers.iter().enumerate() {
        let t = step + 1;
        assert_eq!(net.t(), t as u64);
        if t >= 3 {
            widest = widest.max(net.state().interferers_now.iter().map(Vec::len).max().unwrap());
            for i in 0..n {
                let got = builder.raw(net.state(), i);
                let want = expected_state(&h, t, i, cfg.eta, cfg.noise());
                assert_eq!(got.len(), 57);
                for (e, (a, b)) in got.iter().zip(&want).enumerate() {
                    assert!(
                        (a - b).abs() <= 1e-12 * b.abs().max(1e-300),
                        "slot {t} agent {i} entry {e}: {a} vs {b}"
                    );
                }
            }
            if h.p[t - 1][0] == 0.0 && h.p[t - 2][0] == 0.0 && h.p[t - 3][0] == 0.0 {
                checked_stale = true;
            }
        }
        net.step(p).unwrap();
    }
    assert!(checked_stale);
    widest
}

#[test]
fn three_link_trace_matches_history() {
    check_replay(config(3, 1), 11, 30);
}

#[test]
fn crowded_trace_matches_history() {
    // enough links for truncation to the five strongest
    assert!(check_replay(config(7, 2), 12, 25) > 5);
}

#[test]
fn slot_zero_fills_the_history() {
    let cfg = config(3, 1);
    let net = Network::new(cfg.clone(), 1).unwrap();
    let st = net.state();
    assert_eq!(st.t, 1);
    assert_eq!(st.p_prev, vec![cfg.p_max(); 3]);
    assert_eq!(st.p_prev2, st.p_prev);
    assert_eq!(st.c_prev2, st.c_prev);
    assert_eq!(st.interf_prev, st.interf_realized_prev);
}
