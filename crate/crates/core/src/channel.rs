//! Small-scale fading as a first-order complex Gauss-Markov process and the
//! composition of per-slot channel gains `g = |h|^2 * alpha`.

use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LargeScaleGains;

/// Zeroth-order Bessel function of the first kind by its ascending series.
///
/// Accurate to ~1e-15 for |x| <= 8, which covers every Doppler/slot
/// combination used here (2*pi*15 Hz*20 ms ~ 1.88).
pub fn bessel_j0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term: f64 = 1.0;
    let mut sum: f64 = 1.0;
    let mut k = 1.0;
    while term.abs() > 1e-18 * sum.abs().max(1e-300) {
        term *= -q / (k * k);
        sum += term;
        k += 1.0;
        if k > 500.0 {
            break;
        }
    }
    sum
}

/// Maximum Doppler configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Doppler {
    /// Same `f_d` (Hz) for all pairs.
    Fixed(f64),
    /// `f_d -> inf`, i.e. `rho = 0`.
    Uncorrelated,
    /// `f_d` drawn uniformly in `[lo, hi]` per directed pair and per slot.
    Random { lo: f64, hi: f64 },
}

impl Default for Doppler {
    fn default() -> Self {
        Doppler::Fixed(10.0)
    }
}

impl std::str::FromStr for Doppler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "uncorrelated" | "inf" => Ok(Doppler::Uncorrelated),
            "random" => Ok(Doppler::Random { lo: 2.0, hi: 15.0 }),
            other => {
                if let Some(range) = other.strip_prefix("random:") {
                    let (lo, hi) = range
                        .split_once('-')
                        .ok_or_else(|| Error::InvalidConfig(format!("bad doppler range '{range}'")))?;
                    let lo = lo.parse().map_err(|_| Error::InvalidConfig(format!("bad doppler '{s}'")))?;
                    let hi = hi.parse().map_err(|_| Error::InvalidConfig(format!("bad doppler '{s}'")))?;
                    return Ok(Doppler::Random { lo, hi });
                }
                other
                    .parse()
                    .map(Doppler::Fixed)
                    .map_err(|_| Error::InvalidConfig(format!("bad doppler '{s}'")))
            }
        }
    }
}

/// `rho = J0(2 pi f_d T)`.
pub fn correlation_rho(doppler_hz: f64, slot_s: f64) -> f64 {
    if doppler_hz.is_infinite() {
        return 0.0;
    }
    bessel_j0(2.0 * std::f64::consts::PI * doppler_hz * slot_s)
}

impl Doppler {
    /// Correlation used for every pair, or `None` when it is redrawn per slot.
    pub fn fixed_rho(&self, slot_s: f64) -> Option<f64> {
        match *self {
            Doppler::Fixed(fd) => Some(correlation_rho(fd, slot_s)),
            Doppler::Uncorrelated => Some(0.0),
            Doppler::Random { .. } => None,
        }
    }
}

/// Draw of a circularly symmetric complex Gaussian with unit variance.
pub fn cscg<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Small-scale fading coefficients `h[tx, rx]` at slot `slot`.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingState {
    pub h: Array2<Complex64>,
    pub doppler: Doppler,
    pub slot_s: f64,
    pub slot: u64,
}

impl FadingState {
    pub fn n_links(&self) -> usize {
        self.h.nrows()
    }
}

pub fn init_fading<R: Rng + ?Sized>(n: usize, doppler: Doppler, slot_s: f64, rng: &mut R) -> FadingState {
    let h = Array2::from_shape_simple_fn((n, n), || cscg(rng));
    FadingState { h, doppler, slot_s, slot: 0 }
}

/// `h <- rho h + sqrt(1 - rho^2) e` entrywise with fresh innovations.
pub fn step_fading<R: Rng + ?Sized>(state: &mut FadingState, rng: &mut R) {
    match state.doppler.fixed_rho(state.slot_s) {
        Some(rho) => {
            let s = (1.0 - rho * rho).max(0.0).sqrt();
            for h in state.h.iter_mut() {
                *h = *h * rho + cscg(rng) * s;
            }
        }
        None => {
            let Doppler::Random { lo, hi } = state.doppler else { unreachable!() };
            for h in state.h.iter_mut() {
                let fd = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                let rho = correlation_rho(fd, state.slot_s);
                let s = (1.0 - rho * rho).max(0.0).sqrt();
                *h = *h * rho + cscg(rng) * s;
            }
        }
    }
    state.slot += 1;
}

/// Per-slot linear channel gains, indexed `[tx, rx]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelGains(pub Array2<f64>);

impl ChannelGains {
    pub fn n_links(&self) -> usize {
        self.0.nrows()
    }

    /// Gain from transmitter `tx` to receiver `rx`.
    #[inline]
    pub fn get(&self, tx: usize, rx: usize) -> f64 {
        self.0[[tx, rx]]
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }
}

pub fn compose_gains(alpha: &LargeScaleGains, fading: &FadingState) -> Result<ChannelGains> {
    if alpha.alpha.dim() != fading.h.dim() {
        return Err(Error::DimensionMismatch {
            expected: alpha.n_links(),
            actual: fading.n_links(),
        });
    }
    let mut g = alpha.alpha.clone();
    g.zip_mut_with(&fading.h, |a, h| *a *= h.norm_sqr());
    Ok(ChannelGains(g))
}

/// Appends one slot of gains as `slot,tx,rx,gain` rows.
pub fn write_gain_trace<W: Write>(out: &mut W, slot: u64, gains: &ChannelGains) -> Result<()> {
    for ((tx, rx), g) in gains.0.indexed_iter() {
        writeln!(out, "{slot},{tx},{rx},{g:e}")?;
    }
    Ok(())
}
