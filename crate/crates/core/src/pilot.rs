//! Cyclic-prefixed pilot frames and the multiplexed batch plan.
//!
//! Transmitters sharing a batch send the same PN sequence, each circularly
//! advanced by `floor(M / N_batch) * (t mod N_batch)` samples. As long as
//! `N_batch <= floor(M / C)` and `C >= L`, neighbouring shifts are at least
//! `L` apart, so the correlation windows of batch members never overlap.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pn::{PnError, PnSequence};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PilotError {
    #[error("invalid pilot configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Pn(#[from] PnError),
}

fn invalid(msg: impl Into<String>) -> PilotError {
    PilotError::InvalidConfig(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotConfig {
    /// PN length `M`.
    pub m: usize,
    /// Cyclic-prefix length `C`.
    pub c: usize,
    pub nt: usize,
    pub n_batch: usize,
    /// Maximum CIR length `L`.
    pub l: usize,
    /// Sampling rate, samples per second.
    pub fs: f64,
}

impl PilotConfig {
    /// Config with the prefix length set to the channel length (`C = L`).
    pub fn new(m: usize, l: usize, nt: usize, n_batch: usize, fs: f64) -> Result<Self, PilotError> {
        let cfg = Self {
            m,
            c: l,
            nt,
            n_batch,
            l,
            fs,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_cp(mut self, c: usize) -> Result<Self, PilotError> {
        self.c = c;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), PilotError> {
        if self.l < 1 {
            return Err(invalid("channel length L must be at least 1"));
        }
        if !(self.l <= self.c && self.c <= self.m) {
            return Err(invalid(format!(
                "need L <= C <= M, got L={}, C={}, M={}",
                self.l, self.c, self.m
            )));
        }
        if self.nt < 1 {
            return Err(invalid("N_t must be at least 1"));
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(invalid(format!("sampling rate must be positive, got {}", self.fs)));
        }
        let bound = max_batch(self.m, self.c)?;
        if self.n_batch < 1 || self.n_batch > bound {
            return Err(invalid(format!(
                "N_batch={} outside 1..={} (floor(M/C) for M={}, C={})",
                self.n_batch, bound, self.m, self.c
            )));
        }
        Ok(())
    }

    /// Pilot length `P = C + M`.
    pub fn pilot_len(&self) -> usize {
        self.c + self.m
    }

    /// Spacing between consecutive shifts inside a batch.
    pub fn shift_step(&self) -> usize {
        self.m / self.n_batch
    }

    pub fn num_batches(&self) -> usize {
        self.nt.div_ceil(self.n_batch)
    }
}

/// Upper bound on transmitters per batch, `floor(M / C)`.
pub fn max_batch(m: usize, c: usize) -> Result<usize, PilotError> {
    if c < 1 || c > m {
        return Err(invalid(format!("need 1 <= C <= M, got C={c}, M={m}")));
    }
    Ok(m / c)
}

/// Circular advance applied to transmitter `t`'s PN body.
pub fn shift_for_transmitter(t: usize, cfg: &PilotConfig) -> Result<usize, PilotError> {
    cfg.validate()?;
    if t >= cfg.nt {
        return Err(invalid(format!("transmitter {t} out of range for N_t={}", cfg.nt)));
    }
    Ok(cfg.shift_step() * (t % cfg.n_batch))
}

/// One transmitter's pilot: `C` prefix samples followed by the shifted body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotFrame {
    pub samples: Vec<f64>,
    pub transmitter: usize,
    pub shift: usize,
    pub cp_len: usize,
}

impl PilotFrame {
    pub fn body(&self) -> &[f64] {
        &self.samples[self.cp_len..]
    }

    pub fn prefix(&self) -> &[f64] {
        &self.samples[..self.cp_len]
    }
}

/// Shift the sequence and prepend its last `c` samples.
pub fn build_pilot(seq: &PnSequence, shift: usize, c: usize) -> Result<PilotFrame, PilotError> {
    let m = seq.len();
    if c > m {
        return Err(invalid(format!("CP length {c} exceeds PN length {m}")));
    }
    let body = seq.circular_shift(shift)?;
    let chips = body.chips();
    let mut samples = Vec::with_capacity(c + m);
    samples.extend_from_slice(&chips[m - c..]);
    samples.extend_from_slice(chips);
    Ok(PilotFrame {
        samples,
        transmitter: 0,
        shift,
        cp_len: c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchMember {
    pub transmitter: usize,
    pub shift: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub index: usize,
    pub members: Vec<BatchMember>,
}

impl Batch {
    /// Smallest cyclic distance between any two shifts in the batch, or
    /// `None` for a single-member batch.
    pub fn min_separation(&self, m: usize) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, a) in self.members.iter().enumerate() {
            for b in &self.members[i + 1..] {
                let d = a.shift.abs_diff(b.shift);
                let d = d.min(m - d);
                best = Some(best.map_or(d, |x| x.min(d)));
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub config: PilotConfig,
    pub batches: Vec<Batch>,
}

/// Assign transmitters `0..N_t` in index order to consecutive batches of
/// `N_batch`; the last batch may be short.
pub fn build_batch_plan(cfg: &PilotConfig) -> Result<BatchPlan, PilotError> {
    cfg.validate()?;
    let batches = (0..cfg.nt)
        .collect::<Vec<_>>()
        .chunks(cfg.n_batch)
        .enumerate()
        .map(|(index, ts)| Batch {
            index,
            members: ts
                .iter()
                .map(|&t| BatchMember {
                    transmitter: t,
                    shift: cfg.shift_step() * (t % cfg.n_batch),
                })
                .collect(),
        })
        .collect();
    Ok(BatchPlan {
        config: *cfg,
        batches,
    })
}

impl BatchPlan {
    /// Pilot frames for every member of batch `index`.
    pub fn frames(&self, seq: &PnSequence, index: usize) -> Result<Vec<PilotFrame>, PilotError> {
        let batch = self
            .batches
            .get(index)
            .ok_or_else(|| invalid(format!("batch {index} out of range")))?;
        batch
            .members
            .iter()
            .map(|mem| {
                let mut f = build_pilot(seq, mem.shift, self.config.c)?;
                f.transmitter = mem.transmitter;
                Ok(f)
            })
            .collect()
    }
}

/// Pilot airtime for all transmitters, `(P * N_t) / (F_s * N_batch)` seconds.
pub fn propagation_time(cfg: &PilotConfig) -> Result<f64, PilotError> {
    cfg.validate()?;
    let num = (cfg.pilot_len() * cfg.nt) as f64;
    Ok(num / (cfg.fs * cfg.n_batch as f64))
}

/// Exact rational form of [`propagation_time`]; needs an integral sampling rate.
pub fn propagation_time_exact(cfg: &PilotConfig) -> Result<Ratio<u128>, PilotError> {
    cfg.validate()?;
    if cfg.fs.fract() != 0.0 || cfg.fs > u64::MAX as f64 {
        return Err(invalid(format!(
            "exact propagation time needs an integral sampling rate, got {}",
            cfg.fs
        )));
    }
    let num = (cfg.pilot_len() * cfg.nt) as u128;
    let den = cfg.fs as u128 * cfg.n_batch as u128;
    Ok(Ratio::new(num, den))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(m: usize, c: usize, nt: usize, nb: usize) -> PilotConfig {
        PilotConfig {
            m,
            c,
            nt,
            n_batch: nb,
            l: c,
            fs: 10e6,
        }
    }

    #[test]
    fn max_batch_values() {
        assert_eq!(max_batch(2047, 128).unwrap(), 15);
        assert_eq!(max_batch(511, 64).unwrap(), 7);
        assert_eq!(max_batch(511, 511).unwrap(), 1);
        assert!(max_batch(511, 0).is_err());
        assert!(max_batch(511, 512).is_err());
    }

    #[test]
    fn shifts() {
        let c = cfg(2047, 128, 16, 4);
        assert_eq!(shift_for_transmitter(5, &c).unwrap(), 511);
        assert_eq!(shift_for_transmitter(0, &c).unwrap(), 0);
        assert_eq!(shift_for_transmitter(3, &cfg(511, 64, 16, 2)).unwrap(), 255);
        assert!(shift_for_transmitter(16, &c).is_err());
    }

    #[test]
    fn pilot_prefix_is_cyclic() {
        let seq = PnSequence::builtin(7).unwrap();
        let f = build_pilot(&seq, 0, 3).unwrap();
        assert_eq!(f.samples.len(), 10);
        assert_eq!(&f.samples[..3], &f.samples[7..]);

        let seq = PnSequence::builtin(511).unwrap();
        let f = build_pilot(&seq, 255, 64).unwrap();
        assert_eq!(f.shift, 255);
        assert_eq!(f.prefix(), &f.samples[511..]);
        assert_eq!(f.body(), seq.circular_shift(255).unwrap().chips());
        assert!(build_pilot(&seq, 511, 64).is_err());
    }

    #[test]
    fn sequential_plan() {
        let plan = build_batch_plan(&cfg(511, 64, 16, 1)).unwrap();
        assert_eq!(plan.batches.len(), 16);
        for (i, b) in plan.batches.iter().enumerate() {
            assert_eq!(b.members, vec![BatchMember { transmitter: i, shift: 0 }]);
        }
    }

    #[test]
    fn four_way_plan() {
        let plan = build_batch_plan(&cfg(2047, 128, 16, 4)).unwrap();
        assert_eq!(plan.batches.len(), 4);
        for b in &plan.batches {
            let shifts: Vec<_> = b.members.iter().map(|m| m.shift).collect();
            assert_eq!(shifts, vec![0, 511, 1022, 1533]);
            assert!(b.min_separation(2047).unwrap() >= 128);
        }
    }

    #[test]
    fn over_batching_rejected() {
        assert!(matches!(
            build_batch_plan(&cfg(511, 64, 16, 16)),
            Err(PilotError::InvalidConfig(_))
        ));
    }

    #[test]
    fn ragged_last_batch() {
        let plan = build_batch_plan(&cfg(511, 64, 5, 2)).unwrap();
        assert_eq!(plan.batches.len(), 3);
        assert_eq!(plan.batches[2].members.len(), 1);
    }

    #[test]
    fn propagation_examples() {
        let mut c = cfg(511, 64, 16, 1);
        assert_eq!(propagation_time(&c).unwrap(), 0.00092);
        c.n_batch = 4;
        assert_eq!(propagation_time(&c).unwrap(), 0.00023);
        let unit = PilotConfig { nt: 1, fs: 575.0, ..cfg(511, 64, 1, 1) };
        assert_eq!(propagation_time(&unit).unwrap(), 1.0);
        assert_eq!(propagation_time_exact(&unit).unwrap(), Ratio::from_integer(1));
    }

    #[test]
    fn config_validation() {
        assert!(PilotConfig::new(511, 64, 16, 7, 1e6).is_ok());
        assert!(PilotConfig::new(511, 64, 16, 8, 1e6).is_err());
        assert!(PilotConfig::new(511, 64, 0, 1, 1e6).is_err());
        assert!(PilotConfig::new(511, 64, 4, 1, 0.0).is_err());
        assert!(cfg(511, 64, 4, 1).with_cp(32).is_err()); // C < L
    }

    proptest! {
        #[test]
        fn batch_shifts_are_separated(deg in 5u32..12, l in 1usize..64, nt in 1usize..40, nb_pick in 0usize..64) {
            let m = (1usize << deg) - 1;
            prop_assume!(l <= m);
            let nb = 1 + nb_pick % (m / l);
            let c = PilotConfig { m, c: l, nt, n_batch: nb, l, fs: 1.0 };
            let plan = build_batch_plan(&c).unwrap();
            prop_assert_eq!(plan.batches.len(), nt.div_ceil(nb));
            let mut seen = vec![false; nt];
            for b in &plan.batches {
                for mem in &b.members {
                    prop_assert!(!seen[mem.transmitter]);
                    seen[mem.transmitter] = true;
                }
                if let Some(sep) = b.min_separation(m) {
                    prop_assert!(sep >= l);
                }
            }
            prop_assert!(seen.into_iter().all(|s| s));
        }

        #[test]
        fn batching_divides_airtime(nt in 1usize..65, nb in 1usize..8, fs in 1u32..100_000_000) {
            let base = PilotConfig { m: 2047, c: 128, nt, n_batch: 1, l: 128, fs: fs as f64 };
            let batched = PilotConfig { n_batch: nb, ..base };
            let t1 = propagation_time_exact(&base).unwrap();
            let tb = propagation_time_exact(&batched).unwrap();
            prop_assert_eq!(tb * Ratio::from_integer(nb as u128), t1);
        }

        #[test]
        fn cp_removal_recovers_body(shift in 0usize..255, c in 1usize..255) {
            let seq = PnSequence::builtin(255).unwrap();
            let f = build_pilot(&seq, shift, c).unwrap();
            let shifted = seq.circular_shift(shift).unwrap();
            prop_assert_eq!(&f.samples[c..c + 255], shifted.chips());
        }
    }
}
