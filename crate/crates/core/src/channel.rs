//! Sparse multipath MIMO channels, pilot propagation and AWGN.
//!
//! Each (receiver, transmitter) link is a length-`L` complex CIR with exactly
//! `L_nz` nonzero taps at uniformly drawn positions. Tap amplitudes are drawn
//! uniformly on `(0, A_max]` with `A_max = sqrt(1 / (N_t * sqrt(L_nz)))`, and
//! phases uniformly on `[0, 2π)`.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::pilot::{build_batch_plan, Batch, BatchPlan, PilotConfig, PilotError, PilotFrame};
use crate::pn::PnSequence;

pub const AMPLITUDE_LAW: &str = "amplitude uniform (0, a_max], phase uniform [0, 2pi)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("invalid channel spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Pilot(#[from] PilotError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub l: usize,
    pub l_nz: usize,
    pub nt: usize,
    pub nr: usize,
    pub seed: u64,
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.l == 0 || self.nt == 0 || self.nr == 0 {
            return Err(ChannelError::InvalidSpec(format!(
                "dimensions must be >= 1 (L={}, N_t={}, N_r={})",
                self.l, self.nt, self.nr
            )));
        }
        if self.l_nz == 0 || self.l_nz > self.l {
            return Err(ChannelError::InvalidSpec(format!(
                "need 1 <= L_nz <= L, got L_nz={}, L={}",
                self.l_nz, self.l
            )));
        }
        Ok(())
    }

    /// Per-tap amplitude cap.
    pub fn a_max(&self) -> f64 {
        (1.0 / (self.nt as f64 * (self.l_nz as f64).sqrt())).sqrt()
    }
}

/// Ground-truth CIRs, indexed `taps[r][t][l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub nr: usize,
    pub nt: usize,
    pub l: usize,
    pub l_nz: usize,
    pub a_max: f64,
    pub amplitude_law: String,
    pub taps: Vec<Vec<Vec<Complex64>>>,
}

impl ChannelRealization {
    /// Wrap explicit CIRs. `l_nz` and `a_max` are taken from the data.
    pub fn from_taps(taps: Vec<Vec<Vec<Complex64>>>) -> Result<Self, ChannelError> {
        let nr = taps.len();
        let nt = taps.first().map_or(0, Vec::len);
        let l = taps.first().and_then(|r| r.first()).map_or(0, Vec::len);
        if nr == 0 || nt == 0 || l == 0 {
            return Err(ChannelError::DimensionMismatch("empty channel".into()));
        }
        if taps
            .iter()
            .any(|row| row.len() != nt || row.iter().any(|h| h.len() != l))
        {
            return Err(ChannelError::DimensionMismatch("ragged channel taps".into()));
        }
        let all = taps.iter().flatten();
        let l_nz = all
            .clone()
            .map(|h| h.iter().filter(|x| **x != Complex64::ZERO).count())
            .max()
            .unwrap_or(0);
        let a_max = all.flatten().map(|x| x.norm()).fold(0.0, f64::max);
        Ok(Self {
            nr,
            nt,
            l,
            l_nz,
            a_max,
            amplitude_law: "explicit".into(),
            taps,
        })
    }

    pub fn cir(&self, r: usize, t: usize) -> &[Complex64] {
        &self.taps[r][t]
    }

    /// `Σ_l |h_{r,t}[l]|`, the scale of the correlation sidelobe error.
    pub fn l1_norm(&self, r: usize, t: usize) -> f64 {
        self.taps[r][t].iter().map(|x| x.norm()).sum()
    }
}

pub fn draw_channel(spec: &ChannelSpec) -> Result<ChannelRealization, ChannelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a_max = spec.a_max();
    let taps = (0..spec.nr)
        .map(|_| {
            (0..spec.nt)
                .map(|_| {
                    let mut h = vec![Complex64::ZERO; spec.l];
                    let mut positions = rand::seq::index::sample(&mut rng, spec.l, spec.l_nz).into_vec();
                    positions.sort_unstable();
                    for pos in positions {
                        // 1 - U[0,1) lies in (0, 1].
                        let a = a_max * (1.0 - rng.random::<f64>());
                        let theta = TAU * rng.random::<f64>();
                        h[pos] = Complex64::from_polar(a, theta);
                    }
                    h
                })
                .collect()
        })
        .collect();
    Ok(ChannelRealization {
        nr: spec.nr,
        nt: spec.nt,
        l: spec.l,
        l_nz: spec.l_nz,
        a_max,
        amplitude_law: AMPLITUDE_LAW.into(),
        taps,
    })
}

/// SNR in dB; `f64::INFINITY` means noiseless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrSpec {
    pub snr_db: f64,
    pub seed: u64,
}

impl SnrSpec {
    pub fn noiseless() -> Self {
        Self {
            snr_db: f64::INFINITY,
            seed: 0,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.snr_db == f64::INFINITY
    }
}

/// Per-sample complex noise variance for a given SNR and signal power.
pub fn noise_variance(snr_db: f64, signal_power: f64) -> f64 {
    signal_power / 10f64.powf(snr_db / 10.0)
}

/// Samples seen by one receiver during one batch: `P + L - 1` samples, the
/// last `L - 1` being the convolution tail.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedFrame {
    pub receiver: usize,
    pub batch: usize,
    pub pilot_len: usize,
    pub samples: Vec<Complex64>,
    pub noise_variance: f64,
}

impl ReceivedFrame {
    /// Mean power over the first `P` samples.
    pub fn signal_power(&self) -> f64 {
        let n = self.pilot_len.min(self.samples.len());
        if n == 0 {
            return 0.0;
        }
        self.samples[..n].iter().map(|x| x.norm_sqr()).sum::<f64>() / n as f64
    }
}

fn convolve_into(out: &mut [Complex64], x: &[f64], h: &[Complex64]) {
    for (d, &tap) in h.iter().enumerate() {
        if tap == Complex64::ZERO {
            continue;
        }
        for (o, &s) in out[d..d + x.len()].iter_mut().zip(x) {
            *o += tap * s;
        }
    }
}

/// Superpose every batch member's pilot, each convolved with its own CIR.
pub fn apply_channel(
    frames: &[PilotFrame],
    h: &ChannelRealization,
    batch: &Batch,
) -> Result<Vec<ReceivedFrame>, ChannelError> {
    if frames.len() != batch.members.len() {
        return Err(ChannelError::DimensionMismatch(format!(
            "{} frames for a batch of {}",
            frames.len(),
            batch.members.len()
        )));
    }
    let p = frames.first().map_or(0, |f| f.samples.len());
    for (f, mem) in frames.iter().zip(&batch.members) {
        if f.samples.len() != p {
            return Err(ChannelError::DimensionMismatch("pilot frames differ in length".into()));
        }
        if f.transmitter != mem.transmitter || f.shift != mem.shift {
            return Err(ChannelError::DimensionMismatch(format!(
                "frame for transmitter {} (shift {}) does not match plan entry {} (shift {})",
                f.transmitter, f.shift, mem.transmitter, mem.shift
            )));
        }
        if f.transmitter >= h.nt {
            return Err(ChannelError::DimensionMismatch(format!(
                "transmitter {} beyond channel N_t={}",
                f.transmitter, h.nt
            )));
        }
    }
    let out_len = p + h.l - 1;
    Ok((0..h.nr)
        .map(|r| {
            let mut samples = vec![Complex64::ZERO; out_len];
            for f in frames {
                convolve_into(&mut samples, &f.samples, h.cir(r, f.transmitter));
            }
            ReceivedFrame {
                receiver: r,
                batch: batch.index,
                pilot_len: p,
                samples,
                noise_variance: 0.0,
            }
        })
        .collect())
}

/// Add circularly-symmetric complex Gaussian noise of variance
/// `signal_power / 10^(snr_db / 10)` to every sample.
pub fn add_awgn(
    y: &ReceivedFrame,
    snr: &SnrSpec,
    signal_power: f64,
) -> Result<ReceivedFrame, ChannelError> {
    if snr.snr_db.is_nan() || snr.snr_db == f64::NEG_INFINITY {
        return Err(ChannelError::InvalidSpec(format!("bad SNR {}", snr.snr_db)));
    }
    if snr.is_noiseless() {
        return Ok(y.clone());
    }
    if !(signal_power > 0.0 && signal_power.is_finite()) {
        return Err(ChannelError::InvalidSpec(format!(
            "signal power must be positive, got {signal_power}"
        )));
    }
    let var = noise_variance(snr.snr_db, signal_power);
    let normal = Normal::new(0.0, (var / 2.0).sqrt())
        .map_err(|e| ChannelError::InvalidSpec(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(snr.seed);
    let samples = y
        .samples
        .iter()
        .map(|&s| s + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();
    Ok(ReceivedFrame {
        samples,
        noise_variance: y.noise_variance + var,
        ..y.clone()
    })
}

/// Noiseless received frames, `[batch][receiver]`.
pub fn propagate_plan(
    plan: &BatchPlan,
    h: &ChannelRealization,
    seq: &PnSequence,
) -> Result<Vec<Vec<ReceivedFrame>>, ChannelError> {
    plan.batches
        .iter()
        .map(|b| {
            let frames = plan.frames(seq, b.index)?;
            apply_channel(&frames, h, b)
        })
        .collect()
}

/// Noise each frame with its own measured signal power and a seed derived
/// from `(snr.seed, batch, receiver)`.
pub fn add_noise_to_all(
    clean: &[Vec<ReceivedFrame>],
    snr: &SnrSpec,
) -> Result<Vec<Vec<ReceivedFrame>>, ChannelError> {
    clean
        .iter()
        .map(|per_rx| {
            per_rx
                .iter()
                .map(|y| {
                    let s = SnrSpec {
                        snr_db: snr.snr_db,
                        seed: derive_seed(snr.seed, &[y.batch as u64, y.receiver as u64]),
                    };
                    add_awgn(y, &s, y.signal_power())
                })
                .collect()
        })
        .collect()
}

/// Draw a channel and push every batch of the plan through it.
pub fn simulate_frame(
    cfg: &PilotConfig,
    chan: &ChannelSpec,
    snr: &SnrSpec,
    seq: &PnSequence,
) -> Result<(ChannelRealization, Vec<Vec<ReceivedFrame>>), ChannelError> {
    if chan.l != cfg.l || chan.nt != cfg.nt || seq.len() != cfg.m {
        return Err(ChannelError::DimensionMismatch(format!(
            "pilot config (M={}, L={}, N_t={}) vs channel (L={}, N_t={}) vs sequence length {}",
            cfg.m,
            cfg.l,
            cfg.nt,
            chan.l,
            chan.nt,
            seq.len()
        )));
    }
    let plan = build_batch_plan(cfg)?;
    let h = draw_channel(chan)?;
    let clean = propagate_plan(&plan, &h, seq)?;
    let noisy = add_noise_to_all(&clean, snr)?;
    Ok((h, noisy))
}
