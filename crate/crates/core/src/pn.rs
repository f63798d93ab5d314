//! Maximal-length (m-)sequence generation and circular sequence utilities.
//!
//! Sequences are produced by a Fibonacci LFSR. A tap set `{k, j, ...}` selects
//! the feedback polynomial `x^k + x^j + ... + 1`. Primitivity is not tested
//! algebraically; instead the generator runs the register until the state
//! repeats and rejects anything whose period is not `2^k - 1`.
//!
//! Output bits are mapped to bipolar chips with `0 -> +1.0` and `1 -> -1.0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest register width accepted. Period checks walk the whole cycle, so
/// this is bounded by what is cheap to enumerate.
pub const MAX_DEGREE: u32 = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnError {
    #[error("LFSR degree {0} outside supported range 2..={MAX_DEGREE}")]
    InvalidDegree(u32),
    #[error("invalid tap set {taps:?} for degree {degree}: taps must lie in [1, degree] and include degree")]
    InvalidTaps { degree: u32, taps: Vec<u32> },
    #[error("LFSR initial state is zero")]
    ZeroState,
    #[error("initial state {state:#x} does not fit in {degree} bits")]
    StateOutOfRange { degree: u32, state: u32 },
    #[error("feedback polynomial is not primitive: period {period}, expected {expected}")]
    NotMaximalLength { period: u64, expected: u64 },
    #[error("lag {lag} out of range for sequence of length {len}")]
    LagOutOfRange { lag: usize, len: usize },
    #[error("shift {shift} out of range for sequence of length {len}")]
    ShiftOutOfRange { shift: usize, len: usize },
    #[error("chip value {0} is not +1 or -1")]
    InvalidChip(f64),
    #[error("empty sequence")]
    Empty,
    #[error("no built-in primitive polynomial for length {0}")]
    UnknownLength(usize),
}

/// Register width, feedback taps and seed of a Fibonacci LFSR.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LfsrSpec {
    degree: u32,
    taps: Vec<u32>,
    initial_state: u32,
}

/// Known primitive trinomials for the pilot lengths used in the experiments
/// (511, 1023, 2047), plus a few small ones handy for tests.
const BUILTIN_TAPS: &[(u32, &[u32])] = &[
    (2, &[2, 1]),
    (3, &[3, 2]),
    (4, &[4, 3]),
    (5, &[5, 3]),
    (6, &[6, 5]),
    (7, &[7, 6]),
    (8, &[8, 6, 5, 4]),
    (9, &[9, 5]),
    (10, &[10, 7]),
    (11, &[11, 9]),
];

impl LfsrSpec {
    pub fn new(degree: u32, taps: &[u32], initial_state: u32) -> Result<Self, PnError> {
        if !(2..=MAX_DEGREE).contains(&degree) {
            return Err(PnError::InvalidDegree(degree));
        }
        let mut sorted: Vec<u32> = taps.to_vec();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        sorted.dedup();
        if sorted.first() != Some(&degree) || sorted.iter().any(|&t| t == 0 || t > degree) {
            return Err(PnError::InvalidTaps {
                degree,
                taps: taps.to_vec(),
            });
        }
        if initial_state == 0 {
            return Err(PnError::ZeroState);
        }
        if u64::from(initial_state) >= 1u64 << degree {
            return Err(PnError::StateOutOfRange {
                degree,
                state: initial_state,
            });
        }
        Ok(Self {
            degree,
            taps: sorted,
            initial_state,
        })
    }

    /// Built-in primitive polynomial for `degree`, seeded with state 1.
    pub fn builtin(degree: u32) -> Result<Self, PnError> {
        let (_, taps) = BUILTIN_TAPS
            .iter()
            .find(|(d, _)| *d == degree)
            .ok_or(PnError::InvalidDegree(degree))?;
        Self::new(degree, taps, 1)
    }

    /// Built-in spec whose period equals `len` (which must be `2^k - 1`).
    pub fn builtin_for_length(len: usize) -> Result<Self, PnError> {
        let plus_one = len + 1;
        if len < 3 || !plus_one.is_power_of_two() {
            return Err(PnError::UnknownLength(len));
        }
        Self::builtin(plus_one.trailing_zeros()).map_err(|_| PnError::UnknownLength(len))
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// Tap positions, highest first.
    pub fn taps(&self) -> &[u32] {
        &self.taps
    }

    pub fn initial_state(&self) -> u32 {
        self.initial_state
    }

    /// Expected period `2^k - 1`.
    pub fn period(&self) -> usize {
        (1usize << self.degree) - 1
    }

    pub fn register(&self) -> Lfsr {
        let mask = self
            .taps
            .iter()
            .fold(0u32, |m, &t| m | 1 << (self.degree - t));
        Lfsr {
            state: self.initial_state,
            feedback_mask: mask,
            top: self.degree - 1,
        }
    }
}

/// Running Fibonacci shift register. Bit 0 is the output stage.
#[derive(Debug, Clone)]
pub struct Lfsr {
    state: u32,
    feedback_mask: u32,
    top: u32,
}

impl Lfsr {
    pub fn state(&self) -> u32 {
        self.state
    }

    /// Emit the output bit and clock the register once.
    pub fn step(&mut self) -> u8 {
        let out = (self.state & 1) as u8;
        let fb = (self.state & self.feedback_mask).count_ones() & 1;
        self.state = (self.state >> 1) | (fb << self.top);
        out
    }
}

impl Iterator for Lfsr {
    type Item = u8;

    fn next(&mut self) -> Option<u8> {
        Some(self.step())
    }
}

/// Bipolar pilot sequence. Normally an m-sequence, but arbitrary ±1 chip
/// vectors can be wrapped with [`PnSequence::from_chips`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnSequence {
    chips: Vec<f64>,
    origin: Option<LfsrSpec>,
}

#[inline]
fn chip(bit: u8) -> f64 {
    if bit == 0 {
        1.0
    } else {
        -1.0
    }
}

/// One full period of the LFSR described by `spec`, as bipolar chips.
pub fn generate_mseq(spec: &LfsrSpec) -> Result<PnSequence, PnError> {
    let expected = spec.period();
    let mut reg = spec.register();
    let mut chips = Vec::with_capacity(expected);
    loop {
        chips.push(chip(reg.step()));
        if reg.state() == spec.initial_state {
            break;
        }
        if chips.len() > expected {
            // Can only happen for tail-then-cycle trajectories, which a
            // register with tap k (invertible map) never produces.
            break;
        }
    }
    if chips.len() != expected {
        return Err(PnError::NotMaximalLength {
            period: chips.len() as u64,
            expected: expected as u64,
        });
    }
    Ok(PnSequence {
        chips,
        origin: Some(spec.clone()),
    })
}

impl PnSequence {
    /// Wrap an arbitrary ±1 chip vector. No m-sequence properties are implied.
    pub fn from_chips(chips: Vec<f64>) -> Result<Self, PnError> {
        if chips.is_empty() {
            return Err(PnError::Empty);
        }
        if let Some(&bad) = chips.iter().find(|&&c| c != 1.0 && c != -1.0) {
            return Err(PnError::InvalidChip(bad));
        }
        Ok(Self {
            chips,
            origin: None,
        })
    }

    /// Built-in m-sequence of period `len` (511, 1023, 2047, ...).
    pub fn builtin(len: usize) -> Result<Self, PnError> {
        generate_mseq(&LfsrSpec::builtin_for_length(len)?)
    }

    pub fn chips(&self) -> &[f64] {
        &self.chips
    }

    pub fn len(&self) -> usize {
        self.chips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chips.is_empty()
    }

    pub fn origin(&self) -> Option<&LfsrSpec> {
        self.origin.as_ref()
    }

    /// `count(+1) - count(-1)`.
    pub fn balance(&self) -> i64 {
        self.chips.iter().map(|&c| c as i64).sum()
    }

    /// Normalized circular autocorrelation `(1/M) Σ s[m] s[(m + lag) mod M]`.
    pub fn circular_autocorrelation(&self, lag: usize) -> Result<f64, PnError> {
        let len = self.len();
        if lag >= len {
            return Err(PnError::LagOutOfRange { lag, len });
        }
        let (head, tail) = self.chips.split_at(lag);
        // Chips are ±1 so the sum is an exact integer.
        let sum: f64 = self
            .chips
            .iter()
            .zip(tail.iter().chain(head))
            .map(|(a, b)| a * b)
            .sum();
        Ok(sum / len as f64)
    }

    /// Circular advance: `out[i] = self[(i + shift) mod M]`.
    pub fn circular_shift(&self, shift: usize) -> Result<PnSequence, PnError> {
        let len = self.len();
        if shift >= len {
            return Err(PnError::ShiftOutOfRange { shift, len });
        }
        let mut chips = self.chips.clone();
        chips.rotate_left(shift);
        Ok(PnSequence {
            chips,
            origin: self.origin.clone(),
        })
    }
}

/// Free-function form of [`PnSequence::circular_autocorrelation`].
pub fn circular_autocorrelation(seq: &PnSequence, lag: usize) -> Result<f64, PnError> {
    seq.circular_autocorrelation(lag)
}

/// Free-function form of [`PnSequence::circular_shift`].
pub fn circular_shift(seq: &PnSequence, shift: usize) -> Result<PnSequence, PnError> {
    seq.circular_shift(shift)
}
