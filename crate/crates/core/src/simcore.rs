//! The slotted network engine.
//!
//! A [`Network`] holds the ground truth (layout, large-scale gains, fading) and
//! a [`SlotState`] describing what is known at the *beginning* of slot `t`:
//! the current gains `g(t)`, the two previous power vectors, rates and
//! weights, the interference measurements taken with the new gains but the
//! old powers, and the neighbor sets built from slot `t-1`.
//!
//! [`Network::step`] applies the powers chosen for slot `t`, evaluates the
//! slot, and advances everything to the beginning of slot `t+1`.

use serde::{Deserialize, Serialize};

use crate::channel::{compose_gains, init_fading, step_fading, ChannelGains, Doppler, FadingState};
use crate::error::{Error, Result};
use crate::geometry::{compose_large_scale, LargeScaleGains, LinksPerCell, NetworkLayout, SHADOWING_STD_DB};
use crate::rng::{stream_rng, SimRng, Stream};

/// Floor applied to the PF rate average so that weights stay finite.
pub const CBAR_FLOOR: f64 = 1e-6;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SumRate,
    ProportionalFair,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum-rate" | "sumrate" => Ok(Mode::SumRate),
            "pf" | "proportional-fair" => Ok(Mode::ProportionalFair),
            _ => Err(Error::InvalidConfig(format!("unknown mode '{s}'"))),
        }
    }
}

/// Physical and scheduling parameters of one simulated network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_cells: usize,
    /// Half transmitter-to-transmitter distance (m).
    pub half_spacing: f64,
    /// Receiver-free inner radius (m).
    pub inner_radius: f64,
    pub links_per_cell: LinksPerCell,
    /// Maximum transmit power over the whole band (dBm).
    pub p_max_dbm: f64,
    /// Noise power over the whole band (dBm).
    pub noise_dbm: f64,
    pub bandwidth_hz: f64,
    pub slot_s: f64,
    pub doppler: Doppler,
    pub shadow_std_db: f64,
    /// Neighbor threshold as a multiple of the noise PSD.
    pub eta: f64,
    pub sinr_cap_db: f64,
    /// PF averaging factor.
    pub beta: f64,
    pub mode: Mode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_cells: 19,
            half_spacing: 500.0,
            inner_radius: 10.0,
            links_per_cell: LinksPerCell::Fixed(1),
            p_max_dbm: 38.0,
            noise_dbm: -114.0,
            bandwidth_hz: 10e6,
            slot_s: 0.02,
            doppler: Doppler::Fixed(10.0),
            shadow_std_db: SHADOWING_STD_DB,
            eta: 5.0,
            sinr_cap_db: 30.0,
            beta: 0.01,
            mode: Mode::SumRate,
        }
    }
}

impl SimConfig {
    /// Maximum transmit PSD (W/Hz).
    pub fn p_max(&self) -> f64 {
        dbm_to_watts(self.p_max_dbm) / self.bandwidth_hz
    }

    /// Noise PSD (W/Hz).
    pub fn noise(&self) -> f64 {
        dbm_to_watts(self.noise_dbm) / self.bandwidth_hz
    }

    /// SINR cap in linear scale.
    pub fn sinr_cap(&self) -> f64 {
        10f64.powf(self.sinr_cap_db / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_cells == 0 {
            return bad("n_cells must be at least 1".into());
        }
        if !(self.half_spacing > 0.0) {
            return bad(format!("R must be positive, got {}", self.half_spacing));
        }
        if !(self.inner_radius >= 10.0 && self.inner_radius <= self.half_spacing - 1.0) {
            return bad(format!(
                "r must lie in [10, R-1] = [10, {}], got {}",
                self.half_spacing - 1.0,
                self.inner_radius
            ));
        }
        if !(self.eta > 0.0) {
            return bad("eta must be positive".into());
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta must lie in (0, 1]".into());
        }
        if !(self.slot_s > 0.0 && self.bandwidth_hz > 0.0 && self.p_max().is_finite()) {
            return bad("slot duration, bandwidth and P_max must be positive".into());
        }
        match self.doppler {
            Doppler::Fixed(fd) if !(fd >= 0.0) => bad("doppler must be nonnegative".into()),
            Doppler::Random { lo, hi } if !(lo >= 0.0 && hi >= lo) => bad("bad doppler range".into()),
            _ => Ok(()),
        }
    }
}

/// Received SINR of link `i`.
pub fn sinr(g: &ChannelGains, p: &[f64], i: usize, noise: f64) -> f64 {
    let signal = g.get(i, i) * p[i];
    if signal == 0.0 {
        return 0.0;
    }
    signal / interference_plus_noise(g, p, i, noise)
}

/// `sum_{j != i} g[j->i] p_j + noise`.
pub fn interference_plus_noise(g: &ChannelGains, p: &[f64], i: usize, noise: f64) -> f64 {
    let mut total = noise;
    for (j, pj) in p.iter().enumerate() {
        if j != i {
            total += g.get(j, i) * pj;
        }
    }
    total
}

/// `log2(1 + min(gamma, cap))`.
pub fn spectral_efficiency(gamma: f64, sinr_cap: f64) -> f64 {
    (1.0 + gamma.min(sinr_cap)).log2()
}

/// Uncapped weighted sum-rate of a power vector, the objective optimizers see.
pub fn weighted_sum_rate(g: &ChannelGains, w: &[f64], p: &[f64], noise: f64) -> f64 {
    (0..p.len()).map(|i| w[i] * (1.0 + sinr(g, p, i, noise)).log2()).sum()
}

/// `Cbar' = beta C + (1 - beta) Cbar`, `w' = 1 / Cbar'` (floored).
pub fn pf_update(cbar: f64, rate: f64, beta: f64) -> (f64, f64) {
    let next = (beta * rate + (1.0 - beta) * cbar).max(CBAR_FLOOR);
    (next, 1.0 / next)
}

pub fn objective(w: &[f64], c: &[f64]) -> f64 {
    w.iter().zip(c).map(|(w, c)| w * c).sum()
}

/// `sum_i ln(Cbar_i * bandwidth)`.
pub fn log_avg_objective(cbar: &[f64], bandwidth_hz: f64) -> Result<f64> {
    let mut total = 0.0;
    for (link, &value) in cbar.iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::NonPositiveRate { link, value });
        }
        total += (value * bandwidth_hz).ln();
    }
    Ok(total)
}

/// Interferer (`I`) and interfered (`O`) sets, one entry per link, ascending indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NeighborSets {
    pub interferers: Vec<Vec<usize>>,
    pub interfered: Vec<Vec<usize>>,
}

pub fn neighbor_sets(g_prev: &ChannelGains, p_prev: &[f64], eta: f64, noise: f64) -> NeighborSets {
    let n = p_prev.len();
    let threshold = eta * noise;
    let mut sets = NeighborSets {
        interferers: vec![Vec::new(); n],
        interfered: vec![Vec::new(); n],
    };
    for tx in 0..n {
        for rx in 0..n {
            if tx != rx && g_prev.get(tx, rx) * p_prev[tx] > threshold {
                sets.interferers[rx].push(tx);
                sets.interfered[tx].push(rx);
            }
        }
    }
    sets
}

/// Everything that happened in one slot, as measured with the powers actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub t: u64,
    pub powers: Vec<f64>,
    pub gains: ChannelGains,
    pub sinr: Vec<f64>,
    /// Capped spectral efficiency (bit/s/Hz).
    pub rates: Vec<f64>,
    /// Weights in force during the slot.
    pub weights: Vec<f64>,
    /// `sum_{j != i} g[j->i] p_j + noise` under this slot's powers.
    pub interference: Vec<f64>,
    /// Rate averages after this slot's update.
    pub cbar: Vec<f64>,
}

impl SlotOutcome {
    pub fn weighted_sum(&self) -> f64 {
        objective(&self.weights, &self.rates)
    }

    pub fn mean_rate(&self) -> f64 {
        self.rates.iter().sum::<f64>() / self.rates.len() as f64
    }
}

/// Network snapshot at the beginning of slot `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotState {
    pub t: u64,
    pub p_prev: Vec<f64>,
    pub p_prev2: Vec<f64>,
    pub g_now: ChannelGains,
    pub g_prev: ChannelGains,
    pub c_prev: Vec<f64>,
    pub c_prev2: Vec<f64>,
    pub w_now: Vec<f64>,
    pub w_prev: Vec<f64>,
    pub w_prev2: Vec<f64>,
    /// Rate averages through slot `t-1`.
    pub cbar: Vec<f64>,
    /// `sum_{j != i} g(t)[j->i] p(t-1)_j + noise`.
    pub interf_now: Vec<f64>,
    /// `sum_{j != i} g(t-1)[j->i] p(t-2)_j + noise`.
    pub interf_prev: Vec<f64>,
    /// `sum_{j != i} g(t-1)[j->i] p(t-1)_j + noise`, as reported after slot `t-1`.
    pub interf_realized_prev: Vec<f64>,
    /// `I(t)`, built from `g(t-1) p(t-1)`.
    pub interferers_now: Vec<Vec<usize>>,
    /// `I(t-1)`.
    pub interferers_prev: Vec<Vec<usize>>,
    /// `O(t)`.
    pub interfered_now: Vec<Vec<usize>>,
    /// Last slot in which each link transmitted with nonzero power.
    pub last_active: Vec<u64>,
    /// For each link, its interfered receivers and the power it delivered to
    /// them in its last active slot: `(k, g(t')[i->k] p(t')_i)`.
    pub last_footprint: Vec<Vec<(usize, f64)>>,
}

impl SlotState {
    pub fn n_links(&self) -> usize {
        self.p_prev.len()
    }
}

/// Ground truth plus the evolving slot state of one episode.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: SimConfig,
    pub layout: NetworkLayout,
    pub large_scale: LargeScaleGains,
    fading: FadingState,
    fading_rng: SimRng,
    state: SlotState,
    p_max: f64,
    noise: f64,
    sinr_cap: f64,
}

impl Network {
    /// Draws a layout, shadowing and fading from `seed` and bootstraps slot 0
    /// with every link at full power.
    pub fn new(config: SimConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = NetworkLayout::generate(
            config.n_cells,
            config.half_spacing,
            config.inner_radius,
            config.links_per_cell,
            seed,
        )?;
        Self::with_layout(config, layout, seed)
    }

    /// Uses a given layout; shadowing and fading streams still derive from `seed`.
    pub fn with_layout(config: SimConfig, layout: NetworkLayout, seed: u64) -> Result<Self> {
        let mut shadow_rng = stream_rng(seed, Stream::Shadowing);
        let large_scale = compose_large_scale(&layout, config.shadow_std_db, &mut shadow_rng)?;
        Self::from_parts(config, layout, large_scale, seed)
    }

    pub fn from_parts(
        config: SimConfig,
        layout: NetworkLayout,
        large_scale: LargeScaleGains,
        seed: u64,
    ) -> Result<Self> {
        let n = layout.n_links();
        if large_scale.n_links() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: large_scale.n_links() });
        }
        let mut fading_rng = stream_rng(seed, Stream::Fading);
        let fading = init_fading(n, config.doppler, config.slot_s, &mut fading_rng);
        let g0 = compose_gains(&large_scale, &fading)?;
        let p_max = config.p_max();
        let noise = config.noise();
        let sinr_cap = config.sinr_cap();
        let p0 = vec![p_max; n];
        let interference0: Vec<f64> = (0..n).map(|i| interference_plus_noise(&g0, &p0, i, noise)).collect();
        let c0: Vec<f64> = (0..n)
            .map(|i| spectral_efficiency(g0.get(i, i) * p0[i] / interference0[i], sinr_cap))
            .collect();
        let (cbar, w0) = match config.mode {
            Mode::SumRate => (c0.clone(), vec![1.0; n]),
            Mode::ProportionalFair => {
                let cbar: Vec<f64> = c0.iter().map(|c| c.max(CBAR_FLOOR)).collect();
                let w = cbar.iter().map(|c| 1.0 / c).collect();
                (cbar, w)
            }
        };
        let sets = neighbor_sets(&g0, &p0, config.eta, noise);
        let footprint = footprints(&g0, &p0, config.eta * noise);
        let state = SlotState {
            t: 0,
            p_prev: p0.clone(),
            p_prev2: p0.clone(),
            g_now: g0.clone(),
            g_prev: g0,
            c_prev: c0.clone(),
            c_prev2: c0,
            w_now: w0.clone(),
            w_prev: w0.clone(),
            w_prev2: w0,
            cbar,
            interf_now: interference0.clone(),
            interf_prev: interference0.clone(),
            interf_realized_prev: interference0,
            interferers_now: sets.interferers.clone(),
            interferers_prev: sets.interferers,
            interfered_now: sets.interfered,
            last_active: vec![0; n],
            last_footprint: footprint,
        };
        let mut net = Self {
            config,
            layout,
            large_scale,
            fading,
            fading_rng,
            state,
            p_max,
            noise,
            sinr_cap,
        };
        net.advance_channel()?;
        Ok(net)
    }

    fn advance_channel(&mut self) -> Result<()> {
        step_fading(&mut self.fading, &mut self.fading_rng);
        let g = compose_gains(&self.large_scale, &self.fading)?;
        let st = &mut self.state;
        st.g_now = g;
        st.t = self.fading.slot;
        let n = st.p_prev.len();
        st.interf_now = (0..n)
            .map(|i| interference_plus_noise(&st.g_now, &st.p_prev, i, self.noise))
            .collect();
        Ok(())
    }

    pub fn state(&self) -> &SlotState {
        &self.state
    }

    pub fn n_links(&self) -> usize {
        self.layout.n_links()
    }

    pub fn t(&self) -> u64 {
        self.state.t
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn sinr_cap(&self) -> f64 {
        self.sinr_cap
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    /// Current-slot gains `g(t)` (full CSI).
    pub fn gains(&self) -> &ChannelGains {
        &self.state.g_now
    }

    /// Weights in force for the current slot.
    pub fn weights(&self) -> &[f64] {
        &self.state.w_now
    }

    /// Applies `powers` in slot `t`, then moves to slot `t+1`.
    pub fn step(&mut self, powers: &[f64]) -> Result<SlotOutcome> {
        let n = self.n_links();
        if powers.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: powers.len() });
        }
        let tol = self.p_max * 1e-9;
        if powers.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > self.p_max + tol) {
            return Err(Error::InvalidConfig("powers must lie in [0, P_max]".into()));
        }
        let powers: Vec<f64> = powers.iter().map(|p| p.min(self.p_max)).collect();
        let st = &mut self.state;
        let g = st.g_now.clone();
        let interference: Vec<f64> = (0..n).map(|i| interference_plus_noise(&g, &powers, i, self.noise)).collect();
        let sinr: Vec<f64> = (0..n).map(|i| g.get(i, i) * powers[i] / interference[i]).collect();
        let rates: Vec<f64> = sinr.iter().map(|&s| spectral_efficiency(s, self.sinr_cap)).collect();
        let weights = st.w_now.clone();

        let next_w = match self.config.mode {
            Mode::SumRate => {
                for (cb, c) in st.cbar.iter_mut().zip(&rates) {
                    *cb = self.config.beta * c + (1.0 - self.config.beta) * *cb;
                }
                vec![1.0; n]
            }
            Mode::ProportionalFair => {
                let mut w = Vec::with_capacity(n);
                for (cb, &c) in st.cbar.iter_mut().zip(&rates) {
                    let (next, wi) = pf_update(*cb, c, self.config.beta);
                    *cb = next;
                    w.push(wi);
                }
                w
            }
        };

        let threshold = self.config.eta * self.noise;
        let sets = neighbor_sets(&g, &powers, self.config.eta, self.noise);
        let fp = footprints(&g, &powers, threshold);
        for i in 0..n {
            if powers[i] > 0.0 {
                st.last_active[i] = st.t;
                st.last_footprint[i] = fp[i].clone();
            }
        }

        let outcome = SlotOutcome {
            t: st.t,
            powers: powers.clone(),
            gains: g.clone(),
            sinr,
            rates: rates.clone(),
            weights: weights.clone(),
            interference: interference.clone(),
            cbar: st.cbar.clone(),
        };

        // shift the two-deep history to the beginning of slot t+1
        st.p_prev2 = std::mem::replace(&mut st.p_prev, powers);
        st.g_prev = g;
        st.c_prev2 = std::mem::replace(&mut st.c_prev, rates);
        st.w_prev2 = std::mem::replace(&mut st.w_prev, weights);
        st.w_now = next_w;
        st.interf_prev = std::mem::take(&mut st.interf_now);
        st.interf_realized_prev = interference;
        st.interferers_prev = std::mem::replace(&mut st.interferers_now, sets.interferers);
        st.interfered_now = sets.interfered;

        self.advance_channel()?;
        Ok(outcome)
    }

    /// Restarts the PF averages as if every link had just transmitted at full
    /// power on the current gains. No-op in sum-rate mode.
    pub fn reinitialize_weights(&mut self) {
        if self.config.mode != Mode::ProportionalFair {
            return;
        }
        let n = self.n_links();
        let full = vec![self.p_max; n];
        let st = &mut self.state;
        for i in 0..n {
            let s = sinr(&st.g_now, &full, i, self.noise);
            let cbar = spectral_efficiency(s, self.sinr_cap).max(CBAR_FLOOR);
            st.cbar[i] = cbar;
            st.w_now[i] = 1.0 / cbar;
            st.w_prev[i] = 1.0 / cbar;
            st.w_prev2[i] = 1.0 / cbar;
        }
    }

    /// Current value of the PF utility `sum ln(Cbar * bandwidth)`.
    pub fn log_avg_objective(&self) -> Result<f64> {
        log_avg_objective(&self.state.cbar, self.config.bandwidth_hz)
    }
}

fn footprints(g: &ChannelGains, p: &[f64], threshold: f64) -> Vec<Vec<(usize, f64)>> {
    let n = p.len();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&k| k != i)
                .map(|k| (k, g.get(i, k) * p[i]))
                .filter(|&(_, rx)| rx > threshold)
                .collect()
        })
        .collect()
}
