//! Multi-agent power control: per-agent states, epsilon-greedy actions,
//! interference-priced rewards, and the central trainer that learns from
//! delayed experiences and broadcasts parameters with a delivery delay.
//!
//! One slot of training, in order:
//! 1. every agent builds its state from the network snapshot;
//! 2. the experiences completed one slot earlier reach the replay memory;
//! 3. broadcasts whose delivery time has come replace the agents' copy;
//! 4. agents act, the network steps, the trainer prices the outcome;
//! 5. one minibatch step; every `target_period` slots the target network is
//!    synced and the parameters broadcast.

use std::collections::VecDeque;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dqn::{argmax, Experience, Learner, MlpParams, ReplayMemory, TrainHyper};
use crate::error::{Error, Result};
use crate::geometry::path_loss_db;
use crate::rng::{stream_rng, SimRng, Stream};
use crate::simcore::{Network, SimConfig, SlotOutcome, SlotState};

/// Neighbors kept per group.
pub const NEIGHBORS: usize = 5;
pub const LOCAL_FEATURES: usize = 7;
pub const STATE_LEN: usize = LOCAL_FEATURES + 10 * NEIGHBORS;
pub const POWER_LEVELS: usize = 10;

/// Weight reciprocal and spectral efficiency reported by a virtual agent.
pub const VIRTUAL_INV_WEIGHT: f64 = -1.0;
pub const VIRTUAL_RATE: f64 = -1.0;

pub fn state_len(c: usize) -> usize {
    LOCAL_FEATURES + 10 * c
}

/// Evenly spaced power levels from 0 to `p_max` inclusive.
pub fn action_set(p_max: f64, levels: usize) -> Result<Vec<f64>> {
    if levels < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 power levels, got {levels}")));
    }
    let mut a: Vec<f64> = (0..levels).map(|k| p_max * k as f64 / (levels - 1) as f64).collect();
    a[levels - 1] = p_max;
    Ok(a)
}

/// Greedy with probability `1 - eps`, uniform otherwise.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], eps: f64, rng: &mut R) -> usize {
    if eps > 0.0 && rng.random::<f64>() < eps {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}

/// The `c` members of `set` with the largest metric, strongest first, padded
/// with `None` for virtual agents. Ties go to the lower link index.
pub fn rank_and_pad(set: &[usize], metric: impl Fn(usize) -> f64, c: usize) -> Vec<Option<usize>> {
    let mut ranked: Vec<(usize, f64)> = set.iter().map(|&j| (j, metric(j))).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<Option<usize>> = ranked.into_iter().take(c).map(|(j, _)| Some(j)).collect();
    out.resize(c, None);
    out
}

/// Interferers of `i` in `st.interferers_now`, ranked by current received
/// power `g(t)[j->i] p(t-1)_j`.
pub fn rank_and_pad_interferers(st: &SlotState, i: usize, c: usize) -> Vec<Option<usize>> {
    rank_and_pad(&st.interferers_now[i], |j| st.g_now.get(j, i) * st.p_prev[j], c)
}

/// Interferers of `i` one slot earlier, ranked by `g(t-1)[j->i] p(t-2)_j`.
pub fn rank_and_pad_interferers_prev(st: &SlotState, i: usize, c: usize) -> Vec<Option<usize>> {
    rank_and_pad(&st.interferers_prev[i], |j| st.g_prev.get(j, i) * st.p_prev2[j], c)
}

/// Interference share of `i` at receiver `k`: the power `i` delivered to `k`
/// in its last active slot over `k`'s latest interference-plus-noise.
pub fn interference_share(st: &SlotState, i: usize, k: usize) -> f64 {
    st.last_footprint[i]
        .iter()
        .find(|(rx, _)| *rx == k)
        .map_or(0.0, |(_, rx_power)| rx_power / st.interf_realized_prev[k])
}

/// Receivers that `i` interfered with in its last active slot, ranked by share.
pub fn rank_and_pad_interfered(st: &SlotState, i: usize, c: usize) -> Vec<Option<usize>> {
    let set: Vec<usize> = st.last_footprint[i].iter().map(|(k, _)| *k).collect();
    rank_and_pad(&set, |k| interference_share(st, i, k), c)
}

/// Physical meaning of a state entry; decides its normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    OwnPower,
    InvWeight,
    Rate,
    /// Channel gain, read as the full-power SNR it would give.
    Gain,
    /// Power at a receiver (interference or interference-plus-noise).
    ReceivedPower,
    Share,
}

pub fn feature_layout(c: usize) -> Vec<Feature> {
    use Feature::*;
    let mut f = vec![OwnPower, InvWeight, Rate, Gain, Gain, ReceivedPower, ReceivedPower];
    for _ in 0..2 * c {
        f.extend([ReceivedPower, InvWeight, Rate]);
    }
    for _ in 0..c {
        f.extend([Gain, InvWeight, Rate, Share]);
    }
    f
}

/// Maps raw state entries to comparable magnitudes.
///
/// Powers and gains go to dB above the noise floor, clipped at 0 dB so that
/// absent signals map to 0, and are divided by the full-power SNR of a
/// receiver at the inner radius. Own power is a fraction of `P_max`, weight
/// reciprocals and rates are divided by the rate cap, and the share `x` maps
/// to `x / (1 + x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub p_max: f64,
    pub noise: f64,
    /// dB span mapped to 1.
    pub snr_scale_db: f64,
    pub rate_scale: f64,
}

impl Normalizer {
    pub fn new(config: &SimConfig) -> Result<Self> {
        let loss = path_loss_db(config.inner_radius / 1000.0)?;
        Ok(Self {
            p_max: config.p_max(),
            noise: config.noise(),
            snr_scale_db: config.p_max_dbm - config.noise_dbm - loss,
            rate_scale: (1.0 + config.sinr_cap()).log2(),
        })
    }

    fn db_over_noise(&self, x: f64) -> f64 {
        if x <= self.noise {
            0.0
        } else {
            10.0 * (x / self.noise).log10() / self.snr_scale_db
        }
    }

    pub fn apply(&self, feature: Feature, x: f64) -> f64 {
        match feature {
            Feature::OwnPower => x / self.p_max,
            Feature::InvWeight | Feature::Rate => x / self.rate_scale,
            Feature::Gain => self.db_over_noise(x * self.p_max),
            Feature::ReceivedPower => self.db_over_noise(x),
            Feature::Share => x / (1.0 + x),
        }
    }
}

/// Builds agent states from a network snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBuilder {
    pub c: usize,
    pub normalizer: Normalizer,
    #[serde(skip)]
    layout: Vec<Feature>,
}

impl StateBuilder {
    pub fn new(config: &SimConfig, c: usize) -> Result<Self> {
        Ok(Self { c, normalizer: Normalizer::new(config)?, layout: feature_layout(c) })
    }

    pub fn len(&self) -> usize {
        state_len(self.c)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Unnormalized state of agent `i`.
    pub fn raw(&self, st: &SlotState, i: usize) -> Vec<f64> {
        let c = self.c;
        let mut s = Vec::with_capacity(self.len());
        s.extend([
            st.p_prev[i],
            1.0 / st.w_now[i],
            st.c_prev[i],
            st.g_now.get(i, i),
            st.g_prev.get(i, i),
            st.interf_now[i],
            st.interf_prev[i],
        ]);
        for slot in rank_and_pad_interferers(st, i, c) {
            match slot {
                Some(j) => s.extend([st.g_now.get(j, i) * st.p_prev[j], 1.0 / st.w_prev[j], st.c_prev[j]]),
                None => s.extend([0.0, VIRTUAL_INV_WEIGHT, VIRTUAL_RATE]),
            }
        }
        for slot in rank_and_pad_interferers_prev(st, i, c) {
            match slot {
                Some(j) => s.extend([st.g_prev.get(j, i) * st.p_prev2[j], 1.0 / st.w_prev2[j], st.c_prev2[j]]),
                None => s.extend([0.0, VIRTUAL_INV_WEIGHT, VIRTUAL_RATE]),
            }
        }
        for slot in rank_and_pad_interfered(st, i, c) {
            match slot {
                Some(k) => s.extend([
                    st.g_prev.get(k, k),
                    1.0 / st.w_prev[k],
                    st.c_prev[k],
                    interference_share(st, i, k),
                ]),
                None => s.extend([0.0, VIRTUAL_INV_WEIGHT, VIRTUAL_RATE, 0.0]),
            }
        }
        s
    }

    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.layout).map(|(&x, &f)| self.normalizer.apply(f, x)).collect()
    }

    pub fn build(&self, st: &SlotState, i: usize) -> Vec<f64> {
        self.normalize(&self.raw(st, i))
    }

    /// All agents' states, one row per link.
    pub fn build_all(&self, st: &SlotState) -> Array2<f64> {
        let n = st.n_links();
        let mut m = Array2::zeros((n, self.len()));
        for i in 0..n {
            let s = self.build(st, i);
            m.row_mut(i).as_slice_mut().unwrap().copy_from_slice(&s);
        }
        m
    }
}

/// Spectral efficiency of receiver `k` with transmitter `i` switched off,
/// capped like the simulator's rates.
pub fn rate_without(outcome: &SlotOutcome, k: usize, i: usize, noise: f64, sinr_cap: f64) -> f64 {
    let g = &outcome.gains;
    let p = &outcome.powers;
    let denom: f64 = noise
        + (0..p.len())
            .filter(|&j| j != i && j != k)
            .map(|j| g.get(j, k) * p[j])
            .sum::<f64>();
    (1.0 + (g.get(k, k) * p[k] / denom).min(sinr_cap)).log2()
}

/// Price charged to `i` for its interference at `k`.
pub fn interference_price(outcome: &SlotOutcome, i: usize, k: usize, noise: f64, sinr_cap: f64) -> f64 {
    outcome.weights[k] * (rate_without(outcome, k, i, noise, sinr_cap) - outcome.rates[k])
}

/// `w_i C_i` minus the prices over every receiver `i` interfered with during
/// the slot (`interfered_next[i]`, built from the slot's own activity).
pub fn compute_reward(
    outcome: &SlotOutcome,
    interfered_next: &[Vec<usize>],
    i: usize,
    noise: f64,
    sinr_cap: f64,
) -> f64 {
    let penalty: f64 = interfered_next[i]
        .iter()
        .map(|&k| interference_price(outcome, i, k, noise, sinr_cap))
        .sum();
    outcome.weights[i] * outcome.rates[i] - penalty
}

/// Retrain/broadcast period and delivery delay, in slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerSchedule {
    pub target_period: u64,
    pub delivery_delay: u64,
}

impl Default for TrainerSchedule {
    fn default() -> Self {
        Self { target_period: 100, delivery_delay: 50 }
    }
}

/// Agent-side setup shared by training and testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub neighbors: usize,
    pub power_levels: usize,
    pub hyper: TrainHyper,
    pub schedule: TrainerSchedule,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            neighbors: NEIGHBORS,
            power_levels: POWER_LEVELS,
            hyper: TrainHyper::default(),
            schedule: TrainerSchedule::default(),
        }
    }
}

impl AgentConfig {
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.hyper.layer_sizes(state_len(self.neighbors), self.power_levels)
    }
}

/// A parameter vector as held by the agents, tagged with the slot at which
/// the trainer broadcast it (0 for the initial parameters).
#[derive(Debug, Clone)]
pub struct Broadcast {
    pub version: u64,
    pub params: Arc<MlpParams>,
}

/// What happened in one slot, from the agents' side.
#[derive(Debug, Clone)]
pub struct SlotRecord {
    pub outcome: SlotOutcome,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Version of the parameters the agents acted with.
    pub version: u64,
    pub epsilon: f64,
    pub loss: Option<f64>,
}

struct Trainer {
    learner: Learner,
    memory: ReplayMemory,
    replay_rng: SimRng,
    explore_rng: SimRng,
    in_flight: VecDeque<(u64, Broadcast)>,
    /// Experiences completed last slot, delivered this slot.
    delivering: Vec<Experience>,
    /// States, actions and rewards awaiting their next state.
    open: Option<(Array2<f64>, Vec<usize>, Vec<f64>)>,
    slot: u64,
}

/// Distributed executors plus (while training) the central trainer.
pub struct DqnController {
    pub config: AgentConfig,
    builder: StateBuilder,
    actions: Vec<f64>,
    noise: f64,
    sinr_cap: f64,
    active: Broadcast,
    trainer: Option<Trainer>,
}

impl DqnController {
    fn executors(sim: &SimConfig, config: AgentConfig, params: MlpParams) -> Result<Self> {
        sim.validate()?;
        let sizes = config.layer_sizes();
        if params.sizes() != sizes {
            return Err(Error::Checkpoint(format!(
                "layer shape {:?} does not match expected {sizes:?}",
                params.sizes()
            )));
        }
        Ok(Self {
            builder: StateBuilder::new(sim, config.neighbors)?,
            actions: action_set(sim.p_max(), config.power_levels)?,
            noise: sim.noise(),
            sinr_cap: sim.sinr_cap(),
            active: Broadcast { version: 0, params: Arc::new(params) },
            trainer: None,
            config,
        })
    }

    /// Fresh parameters and an empty replay memory sized for `n_links` agents.
    pub fn for_training(sim: &SimConfig, config: AgentConfig, n_links: usize, seed: u64) -> Result<Self> {
        let mut init_rng = stream_rng(seed, Stream::ParamInit);
        let params = MlpParams::init(&config.layer_sizes(), config.hyper.init_std, &mut init_rng);
        Self::from_params_for_training(sim, config, params, n_links, seed)
    }

    pub fn from_params_for_training(
        sim: &SimConfig,
        config: AgentConfig,
        params: MlpParams,
        n_links: usize,
        seed: u64,
    ) -> Result<Self> {
        if config.hyper.batch_size == 0 || config.schedule.target_period == 0 {
            return Err(Error::InvalidConfig("batch size and target period must be positive".into()));
        }
        let trainer = Trainer {
            learner: Learner::new(params.clone(), &config.hyper),
            memory: ReplayMemory::new((n_links * config.hyper.memory_per_agent).max(1)),
            replay_rng: stream_rng(seed, Stream::Replay),
            explore_rng: stream_rng(seed, Stream::Exploration),
            in_flight: VecDeque::new(),
            delivering: Vec::new(),
            open: None,
            slot: 0,
        };
        let mut ctl = Self::executors(sim, config, params)?;
        ctl.trainer = Some(trainer);
        Ok(ctl)
    }

    /// Greedy executors with frozen parameters.
    pub fn for_testing(sim: &SimConfig, config: AgentConfig, params: MlpParams) -> Result<Self> {
        Self::executors(sim, config, params)
    }

    pub fn builder(&self) -> &StateBuilder {
        &self.builder
    }

    pub fn action_levels(&self) -> &[f64] {
        &self.actions
    }

    pub fn active_version(&self) -> u64 {
        self.active.version
    }

    /// Latest trained parameters, or the frozen ones when testing.
    pub fn params(&self) -> &MlpParams {
        match &self.trainer {
            Some(t) => &t.learner.train,
            None => &self.active.params,
        }
    }

    pub fn memory_len(&self) -> usize {
        self.trainer.as_ref().map_or(0, |t| t.memory.len())
    }

    /// The trainer leaves: agents switch to the latest trained parameters
    /// and act greedily from now on.
    pub fn finish_training(&mut self) {
        if let Some(t) = self.trainer.take() {
            self.active = Broadcast { version: t.slot, params: Arc::new(t.learner.train) };
        }
    }

    pub fn is_training(&self) -> bool {
        self.trainer.is_some()
    }

    fn q_values(&self, states: &Array2<f64>) -> Array2<f64> {
        self.active.params.forward_batch(states.view())
    }

    /// One slot: act, step the network, and learn if training.
    pub fn step(&mut self, net: &mut Network) -> Result<SlotRecord> {
        let states = self.builder.build_all(net.state());
        if states.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("agent state"));
        }
        let n = states.nrows();

        let mut epsilon = 0.0;
        if let Some(tr) = self.trainer.as_mut() {
            if let Some((prev_s, prev_a, prev_r)) = tr.open.take() {
                let completed: Vec<Experience> = (0..n)
                    .map(|i| Experience {
                        s: prev_s.row(i).to_vec(),
                        a: prev_a[i],
                        r: prev_r[i],
                        s_next: states.row(i).to_vec(),
                    })
                    .collect();
                for e in std::mem::replace(&mut tr.delivering, completed) {
                    tr.memory.push(e);
                }
            }
            while tr.in_flight.front().is_some_and(|(at, _)| *at <= tr.slot) {
                self.active = tr.in_flight.pop_front().unwrap().1;
            }
            epsilon = self.config.hyper.schedule(tr.slot).1;
        }

        let q = self.q_values(&states);
        let actions: Vec<usize> = match self.trainer.as_mut() {
            Some(tr) => (0..n)
                .map(|i| select_action(q.row(i).as_slice().unwrap(), epsilon, &mut tr.explore_rng))
                .collect(),
            None => (0..n).map(|i| argmax(q.row(i).as_slice().unwrap())).collect(),
        };
        let powers: Vec<f64> = actions.iter().map(|&a| self.actions[a]).collect();
        let version = self.active.version;
        let outcome = net.step(&powers)?;

        let interfered = &net.state().interfered_now;
        let rewards: Vec<f64> = (0..n)
            .map(|i| compute_reward(&outcome, interfered, i, self.noise, self.sinr_cap))
            .collect();

        let mut loss = None;
        if let Some(tr) = self.trainer.as_mut() {
            tr.open = Some((states, actions.clone(), rewards.clone()));
            let hyper = &self.config.hyper;
            if tr.memory.len() >= hyper.batch_size {
                let lr = hyper.schedule(tr.slot).0;
                let batch = tr.memory.sample(hyper.batch_size, &mut tr.replay_rng)?;
                loss = Some(tr.learner.train_step(&batch, lr)?);
            }
            tr.slot += 1;
            let sched = self.config.schedule;
            if tr.slot % sched.target_period == 0 {
                tr.learner.sync_target();
                let b = Broadcast { version: tr.slot, params: Arc::new(tr.learner.train.clone()) };
                tr.in_flight.push_back((tr.slot + sched.delivery_delay, b));
            }
        }

        Ok(SlotRecord { outcome, actions, rewards, version, epsilon, loss })
    }
}
