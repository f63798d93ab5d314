//! Correlation-based CIR estimation.
//!
//! After CP removal the received body `y` is correlated against the PN
//! sequence: lag `i` of the estimate is `(1/M) Σ_n s[(n - i) mod M] · y[n]`,
//! i.e. row `i` of a partial circulant matrix times `y`. A channel tap at
//! delay `d` shows up at lag `d`; a transmitter whose pilot body was advanced
//! by `shift` shows up in the window starting at `(M - shift) mod M`.
//!
//! Three interchangeable backends compute the product: plain `f64`, plain
//! `f32`, and an emulated half-precision tiled MMA ([`gemm`]).

pub mod binary16;
pub mod gemm;

use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ReceivedFrame;
use crate::pilot::{Batch, BatchPlan};
use crate::pn::PnSequence;

pub use binary16::{quantize_binary16, F16_MAX};
pub use gemm::{tiled_mma, Accumulator, GemmStats, HalfMatrix, TILE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("frame has {len} samples, need at least C + M = {need}")]
    FrameTooShort { len: usize, need: usize },
    #[error("requested {rows} correlation rows for a length-{m} sequence")]
    RowsOutOfRange { rows: usize, m: usize },
    #[error("received body has length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("batch plan mismatch: {0}")]
    PlanMismatch(String),
    #[error("saturation detected in {count} output values")]
    SaturationDetected { count: usize },
    #[error("invalid backend configuration: {0}")]
    InvalidBackend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Reference64,
    Reference32,
    Tensor16,
}

impl BackendKind {
    pub fn name(&self) -> &'static str {
        match self {
            BackendKind::Reference64 => "reference64",
            BackendKind::Reference32 => "reference32",
            BackendKind::Tensor16 => "tensor16",
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = EstimatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reference64" => Ok(Self::Reference64),
            "reference32" => Ok(Self::Reference32),
            "tensor16" => Ok(Self::Tensor16),
            other => Err(EstimatorError::InvalidBackend(format!("unknown backend {other:?}"))),
        }
    }
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub const DEFAULT_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default = "default_tile")]
    pub tile: usize,
    /// Samples per partial-normalization chunk; `None` normalizes once at
    /// the end of the full reduction. Only used by `tensor16`.
    #[serde(default = "default_chunk")]
    pub chunk_len: Option<usize>,
    #[serde(default = "default_acc")]
    pub accumulator: Accumulator,
}

fn default_tile() -> usize {
    TILE
}

fn default_chunk() -> Option<usize> {
    Some(DEFAULT_CHUNK)
}

fn default_acc() -> Accumulator {
    Accumulator::Binary32
}

impl BackendConfig {
    pub fn reference64() -> Self {
        Self::of(BackendKind::Reference64)
    }

    pub fn reference32() -> Self {
        Self::of(BackendKind::Reference32)
    }

    /// Half-precision MMA with 256-sample chunks and binary32 accumulation.
    pub fn tensor16() -> Self {
        Self::of(BackendKind::Tensor16)
    }

    pub fn of(kind: BackendKind) -> Self {
        Self {
            kind,
            tile: TILE,
            chunk_len: Some(DEFAULT_CHUNK),
            accumulator: Accumulator::Binary32,
        }
    }

    pub fn with_chunk(mut self, chunk: Option<usize>) -> Self {
        self.chunk_len = chunk;
        self
    }

    pub fn with_accumulator(mut self, acc: Accumulator) -> Self {
        self.accumulator = acc;
        self
    }

    /// Check the config against a reduction length `m`. Chunks may reach the
    /// tile-padded length, so `K_c = 2048` is a single chunk for `M = 2047`.
    pub fn validate(&self, m: usize) -> Result<(), EstimatorError> {
        if self.tile != TILE {
            return Err(EstimatorError::InvalidBackend(format!(
                "tile size is fixed at {TILE}, got {}",
                self.tile
            )));
        }
        if let (BackendKind::Tensor16, Some(kc)) = (self.kind, self.chunk_len) {
            if kc == 0 || kc % TILE != 0 {
                return Err(EstimatorError::InvalidBackend(format!(
                    "chunk length {kc} is not a positive multiple of {TILE}"
                )));
            }
            if kc > gemm::round_up(m) {
                return Err(EstimatorError::InvalidBackend(format!(
                    "chunk length {kc} exceeds padded sequence length {}",
                    gemm::round_up(m)
                )));
            }
        }
        Ok(())
    }
}

/// Rows of the (partial) circulant correlation matrix, row-major `rows x M`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub m: usize,
    pub lags: Vec<usize>,
    pub data: Vec<f64>,
}

impl CorrelationMatrix {
    /// Rows for arbitrary lags; row for lag `i` is `s[(n - i) mod M]`.
    pub fn for_lags(seq: &PnSequence, lags: &[usize]) -> Result<Self, EstimatorError> {
        let m = seq.len();
        if let Some(&bad) = lags.iter().find(|&&l| l >= m) {
            return Err(EstimatorError::RowsOutOfRange { rows: bad + 1, m });
        }
        let s = seq.chips();
        let mut data = Vec::with_capacity(lags.len() * m);
        for &lag in lags {
            data.extend_from_slice(&s[m - lag..]);
            data.extend_from_slice(&s[..m - lag]);
        }
        Ok(Self {
            m,
            lags: lags.to_vec(),
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.lags.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }
}

/// The first `rows` lags of the circulant correlation matrix.
pub fn build_partial_circulant(seq: &PnSequence, rows: usize) -> Result<CorrelationMatrix, EstimatorError> {
    let m = seq.len();
    if rows < 1 || rows > m {
        return Err(EstimatorError::RowsOutOfRange { rows, m });
    }
    CorrelationMatrix::for_lags(seq, &(0..rows).collect::<Vec<_>>())
}

/// Strip the cyclic prefix, keeping samples `C..C+M`.
pub fn remove_cp(frame: &ReceivedFrame, c: usize, m: usize) -> Result<Vec<Complex64>, EstimatorError> {
    remove_cp_slice(&frame.samples, c, m).map(<[Complex64]>::to_vec)
}

fn remove_cp_slice(samples: &[Complex64], c: usize, m: usize) -> Result<&[Complex64], EstimatorError> {
    if samples.len() < c + m {
        return Err(EstimatorError::FrameTooShort {
            len: samples.len(),
            need: c + m,
        });
    }
    Ok(&samples[c..c + m])
}

/// Start of a batch member's lag window.
pub fn window_start(shift: usize, m: usize) -> usize {
    (m - shift % m) % m
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrelationStats {
    pub saturated: usize,
    pub max_abs_partial: f64,
    pub macs: u64,
}

impl CorrelationStats {
    fn merge(&mut self, o: &CorrelationStats) {
        self.saturated += o.saturated;
        self.max_abs_partial = self.max_abs_partial.max(o.max_abs_partial);
        self.macs += o.macs;
    }
}

/// Correlator prepared for a fixed sequence and lag set. Reusable across
/// receivers and frames.
#[derive(Debug, Clone)]
pub struct Correlator {
    m: usize,
    lags: Vec<usize>,
    chips: Vec<f64>,
    chips32: Vec<f32>,
    half: Option<HalfMatrix>,
}

impl Correlator {
    pub fn new(seq: &PnSequence, lags: &[usize], backend: &BackendConfig) -> Result<Self, EstimatorError> {
        let m = seq.len();
        backend.validate(m)?;
        if let Some(&bad) = lags.iter().find(|&&l| l >= m) {
            return Err(EstimatorError::RowsOutOfRange { rows: bad + 1, m });
        }
        let half = (backend.kind == BackendKind::Tensor16).then(|| {
            let s = CorrelationMatrix::for_lags(seq, lags).expect("lags checked above");
            HalfMatrix::from_rows(&s.data, lags.len(), m)
        });
        Ok(Self {
            m,
            lags: lags.to_vec(),
            chips: seq.chips().to_vec(),
            chips32: seq.chips().iter().map(|&c| c as f32).collect(),
            half,
        })
    }

    pub fn lags(&self) -> &[usize] {
        &self.lags
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Correlate several bodies at once. Output is `[column][lag index]`.
    pub fn correlate(
        &self,
        ys: &[&[Complex64]],
        backend: &BackendConfig,
    ) -> Result<(Vec<Vec<Complex64>>, CorrelationStats), EstimatorError> {
        for y in ys {
            if y.len() != self.m {
                return Err(EstimatorError::LengthMismatch {
                    got: y.len(),
                    expected: self.m,
                });
            }
        }
        match backend.kind {
            BackendKind::Reference64 => Ok(self.reference64(ys)),
            BackendKind::Reference32 => Ok(self.reference32(ys)),
            BackendKind::Tensor16 => self.tensor16(ys, backend),
        }
    }

    fn ref_stats(&self, cols: usize) -> CorrelationStats {
        CorrelationStats {
            macs: (2 * self.lags.len() * self.m * cols) as u64,
            ..Default::default()
        }
    }

    fn reference64(&self, ys: &[&[Complex64]]) -> (Vec<Vec<Complex64>>, CorrelationStats) {
        let m = self.m;
        let norm = 1.0 / m as f64;
        let mut re = vec![0.0; 2 * m];
        let mut im = vec![0.0; 2 * m];
        let out = ys
            .iter()
            .map(|y| {
                // y repeated twice turns the circular index into a slice.
                for (i, v) in y.iter().chain(y.iter()).enumerate() {
                    re[i] = v.re;
                    im[i] = v.im;
                }
                self.lags
                    .iter()
                    .map(|&lag| {
                        let r = dot64(&self.chips, &re[lag..lag + m]);
                        let q = dot64(&self.chips, &im[lag..lag + m]);
                        Complex64::new(r * norm, q * norm)
                    })
                    .collect()
            })
            .collect();
        (out, self.ref_stats(ys.len()))
    }

    fn reference32(&self, ys: &[&[Complex64]]) -> (Vec<Vec<Complex64>>, CorrelationStats) {
        let m = self.m;
        let norm = 1.0 / m as f32;
        let mut re = vec![0f32; 2 * m];
        let mut im = vec![0f32; 2 * m];
        let out = ys
            .iter()
            .map(|y| {
                for (i, v) in y.iter().chain(y.iter()).enumerate() {
                    re[i] = v.re as f32;
                    im[i] = v.im as f32;
                }
                self.lags
                    .iter()
                    .map(|&lag| {
                        let r = dot32(&self.chips32, &re[lag..lag + m]) * norm;
                        let q = dot32(&self.chips32, &im[lag..lag + m]) * norm;
                        Complex64::new(f64::from(r), f64::from(q))
                    })
                    .collect()
            })
            .collect();
        (out, self.ref_stats(ys.len()))
    }

    fn tensor16(
        &self,
        ys: &[&[Complex64]],
        backend: &BackendConfig,
    ) -> Result<(Vec<Vec<Complex64>>, CorrelationStats), EstimatorError> {
        let a = match &self.half {
            Some(a) => a,
            None => {
                return Err(EstimatorError::InvalidBackend(
                    "correlator was not prepared for tensor16".into(),
                ))
            }
        };
        // Real and imaginary parts become separate GEMM columns.
        let cols = 2 * ys.len();
        let mut b = HalfMatrix::zeros(self.m, cols);
        for (j, y) in ys.iter().enumerate() {
            for (k, v) in y.iter().enumerate() {
                b.set(k, 2 * j, v.re);
                b.set(k, 2 * j + 1, v.im);
            }
        }
        let scale = (1.0 / self.m as f64) as f32;
        let (flat, g) = tiled_mma(a, &b, scale, backend.chunk_len, backend.accumulator);
        let rows = self.lags.len();
        let out = (0..ys.len())
            .map(|j| {
                (0..rows)
                    .map(|i| {
                        Complex64::new(
                            f64::from(flat[i * cols + 2 * j]),
                            f64::from(flat[i * cols + 2 * j + 1]),
                        )
                    })
                    .collect()
            })
            .collect();
        Ok((
            out,
            CorrelationStats {
                saturated: g.saturated,
                max_abs_partial: g.max_abs_partial,
                macs: g.macs,
            },
        ))
    }
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn dot32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f32>() + tail
}

fn saturation_check(stats: &CorrelationStats) -> Result<(), EstimatorError> {
    if stats.saturated > 0 {
        return Err(EstimatorError::SaturationDetected {
            count: stats.saturated,
        });
    }
    Ok(())
}

/// First `l` lags of the correlation of one CP-free body.
pub fn estimate_sequential(
    y: &[Complex64],
    seq: &PnSequence,
    l: usize,
    backend: &BackendConfig,
) -> Result<Vec<Complex64>, EstimatorError> {
    let m = seq.len();
    if l < 1 || l > m {
        return Err(EstimatorError::RowsOutOfRange { rows: l, m });
    }
    let lags: Vec<usize> = (0..l).collect();
    let corr = Correlator::new(seq, &lags, backend)?;
    let (mut out, stats) = corr.correlate(&[y], backend)?;
    saturation_check(&stats)?;
    Ok(out.pop().expect("one column in, one column out"))
}

/// Lags for every member of `batch`, in member order, `l` per member.
pub fn batch_lags(batch: &Batch, m: usize, l: usize) -> Result<Vec<usize>, EstimatorError> {
    if l < 1 || l > m {
        return Err(EstimatorError::RowsOutOfRange { rows: l, m });
    }
    if let Some(mem) = batch.members.iter().find(|mem| mem.shift >= m) {
        return Err(EstimatorError::PlanMismatch(format!(
            "shift {} of transmitter {} not below M={m}",
            mem.shift, mem.transmitter
        )));
    }
    if let Some(sep) = batch.min_separation(m) {
        if sep < l {
            return Err(EstimatorError::PlanMismatch(format!(
                "shifts separated by {sep} < L={l}"
            )));
        }
    }
    Ok(batch
        .members
        .iter()
        .flat_map(|mem| {
            let start = window_start(mem.shift, m);
            (0..l).map(move |i| (start + i) % m)
        })
        .collect())
}

/// Correlate one body carrying a whole batch and split the result into
/// per-transmitter CIRs.
pub fn estimate_batched(
    y: &[Complex64],
    seq: &PnSequence,
    batch: &Batch,
    l: usize,
    backend: &BackendConfig,
) -> Result<Vec<(usize, Vec<Complex64>)>, EstimatorError> {
    let lags = batch_lags(batch, seq.len(), l)?;
    let corr = Correlator::new(seq, &lags, backend)?;
    let (mut out, stats) = corr.correlate(&[y], backend)?;
    saturation_check(&stats)?;
    let all = out.pop().expect("one column");
    Ok(batch
        .members
        .iter()
        .zip(all.chunks(l))
        .map(|(mem, w)| (mem.transmitter, w.to_vec()))
        .collect())
}

/// Single-column form of the emulated MMA: `(1/M) A y` for a real `rows x M`
/// matrix and complex `y`, with real and imaginary parts as two columns.
pub fn tiled_mma_gemm(
    a: &[f64],
    rows: usize,
    y: &[Complex64],
    backend: &BackendConfig,
) -> Result<(Vec<Complex64>, GemmStats), EstimatorError> {
    let m = y.len();
    if backend.kind != BackendKind::Tensor16 {
        return Err(EstimatorError::InvalidBackend("tiled_mma_gemm needs the tensor16 backend".into()));
    }
    backend.validate(m)?;
    if a.len() != rows * m {
        return Err(EstimatorError::LengthMismatch {
            got: a.len(),
            expected: rows * m,
        });
    }
    let am = HalfMatrix::from_rows(a, rows, m);
    let mut b = HalfMatrix::zeros(m, 2);
    for (k, v) in y.iter().enumerate() {
        b.set(k, 0, v.re);
        b.set(k, 1, v.im);
    }
    let (flat, stats) = tiled_mma(&am, &b, (1.0 / m as f64) as f32, backend.chunk_len, backend.accumulator);
    if stats.saturated > 0 {
        return Err(EstimatorError::SaturationDetected {
            count: stats.saturated,
        });
    }
    let out = flat
        .chunks_exact(2)
        .map(|p| Complex64::new(f64::from(p[0]), f64::from(p[1])))
        .collect();
    Ok((out, stats))
}

/// Estimated CIRs for every link, indexed `taps[r][t][l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirEstimate {
    pub nr: usize,
    pub nt: usize,
    pub l: usize,
    pub backend: BackendKind,
    pub normalization: f64,
    pub taps: Vec<Vec<Vec<Complex64>>>,
}

/// Work accounting for one frame: samples ingested and real MACs executed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameStats {
    pub samples_moved: u64,
    pub macs: u64,
    pub saturated: usize,
    pub max_abs_partial: f64,
}

/// Prepared estimator for a batch plan: one correlator per distinct batch
/// shape, built once and reused for every frame.
#[derive(Debug, Clone)]
pub struct FrameEstimator {
    plan: BatchPlan,
    backend: BackendConfig,
    correlators: HashMap<Vec<usize>, Correlator>,
}

impl FrameEstimator {
    pub fn new(plan: &BatchPlan, seq: &PnSequence, backend: BackendConfig) -> Result<Self, EstimatorError> {
        let cfg = &plan.config;
        if seq.len() != cfg.m {
            return Err(EstimatorError::LengthMismatch {
                got: seq.len(),
                expected: cfg.m,
            });
        }
        let mut correlators = HashMap::new();
        for b in &plan.batches {
            let key: Vec<usize> = b.members.iter().map(|mem| mem.shift).collect();
            if let std::collections::hash_map::Entry::Vacant(slot) = correlators.entry(key) {
                let lags = batch_lags(b, cfg.m, cfg.l)?;
                slot.insert(Correlator::new(seq, &lags, &backend)?);
            }
        }
        Ok(Self {
            plan: plan.clone(),
            backend,
            correlators,
        })
    }

    pub fn plan(&self) -> &BatchPlan {
        &self.plan
    }

    pub fn backend(&self) -> &BackendConfig {
        &self.backend
    }

    /// Estimate every CIR from `frames[batch][receiver]`. Saturation is
    /// reported in the stats rather than as an error.
    pub fn estimate(&self, frames: &[Vec<ReceivedFrame>]) -> Result<(CirEstimate, FrameStats), EstimatorError> {
        let cfg = &self.plan.config;
        if frames.len() != self.plan.batches.len() {
            return Err(EstimatorError::PlanMismatch(format!(
                "{} received batches for a plan of {}",
                frames.len(),
                self.plan.batches.len()
            )));
        }
        let nr = frames.first().map_or(0, Vec::len);
        let mut taps = vec![vec![Vec::new(); cfg.nt]; nr];
        let mut stats = FrameStats::default();
        let mut corr_stats = CorrelationStats::default();
        for (batch, per_rx) in self.plan.batches.iter().zip(frames) {
            if per_rx.len() != nr {
                return Err(EstimatorError::PlanMismatch("receiver count varies across batches".into()));
            }
            let bodies = per_rx
                .iter()
                .map(|f| remove_cp_slice(&f.samples, cfg.c, cfg.m))
                .collect::<Result<Vec<_>, _>>()?;
            stats.samples_moved += (nr * cfg.pilot_len()) as u64;
            let key: Vec<usize> = batch.members.iter().map(|mem| mem.shift).collect();
            let corr = &self.correlators[&key];
            let (cols, cs) = corr.correlate(&bodies, &self.backend)?;
            corr_stats.merge(&cs);
            for (r, col) in cols.into_iter().enumerate() {
                for (mem, w) in batch.members.iter().zip(col.chunks(cfg.l)) {
                    taps[r][mem.transmitter] = w.to_vec();
                }
            }
        }
        stats.macs = corr_stats.macs;
        stats.saturated = corr_stats.saturated;
        stats.max_abs_partial = corr_stats.max_abs_partial;
        Ok((
            CirEstimate {
                nr,
                nt: cfg.nt,
                l: cfg.l,
                backend: self.backend.kind,
                normalization: 1.0 / cfg.m as f64,
                taps,
            },
            stats,
        ))
    }
}

/// One-shot form of [`FrameEstimator::estimate`]; fails on saturation.
pub fn estimate_frame(
    plan: &BatchPlan,
    seq: &PnSequence,
    frames: &[Vec<ReceivedFrame>],
    backend: BackendConfig,
) -> Result<CirEstimate, EstimatorError> {
    let (est, stats) = FrameEstimator::new(plan, seq, backend)?.estimate(frames)?;
    if stats.saturated > 0 {
        return Err(EstimatorError::SaturationDetected {
            count: stats.saturated,
        });
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pilot::BatchMember;

    /// Direct matrix-vector product, independent of the correlator.
    fn brute(seq: &PnSequence, lags: &[usize], y: &[Complex64]) -> Vec<Complex64> {
        let s = CorrelationMatrix::for_lags(seq, lags).unwrap();
        let m = seq.len() as f64;
        (0..s.rows())
            .map(|i| s.row(i).iter().zip(y).map(|(a, b)| b * *a).sum::<Complex64>() / m)
            .collect()
    }

    fn real(v: &[f64]) -> Vec<Complex64> {
        v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
    }

    #[test]
    fn remove_cp_cases() {
        let frame = ReceivedFrame {
            receiver: 0,
            batch: 0,
            pilot_len: 10,
            samples: (0..10).map(|i| Complex64::new(i as f64, 0.0)).collect(),
            noise_variance: 0.0,
        };
        let body = remove_cp(&frame, 3, 7).unwrap();
        assert_eq!(body, frame.samples[3..].to_vec());
        assert!(matches!(
            remove_cp(&frame, 4, 7),
            Err(EstimatorError::FrameTooShort { len: 10, need: 11 })
        ));
    }

    #[test]
    fn full_circulant_reproduces_autocorrelation() {
        let seq = PnSequence::builtin(7).unwrap();
        let s = build_partial_circulant(&seq, 7).unwrap();
        let r = brute(&seq, &s.lags, &real(seq.chips()));
        assert_eq!(r[0].re, 1.0);
        for v in &r[1..] {
            assert!((v.re + 1.0 / 7.0).abs() < 1e-15);
        }
        let one = build_partial_circulant(&seq, 1).unwrap();
        assert_eq!(one.row(0), seq.chips());
        let big = build_partial_circulant(&PnSequence::builtin(511).unwrap(), 64).unwrap();
        assert_eq!((big.rows(), big.m), (64, 511));
        assert!(build_partial_circulant(&seq, 0).is_err());
        assert!(build_partial_circulant(&seq, 8).is_err());
    }

    #[test]
    fn sequential_examples() {
        let seq = PnSequence::builtin(127).unwrap();
        let inv = -1.0 / 127.0;
        let be = BackendConfig::reference64();
        let est = estimate_sequential(&real(seq.chips()), &seq, 4, &be).unwrap();
        let want = [1.0, inv, inv, inv];
        for (e, w) in est.iter().zip(want) {
            assert!((e.re - w).abs() < 1e-15 && e.im == 0.0);
        }

        let mut delayed = seq.chips().to_vec();
        delayed.rotate_right(2);
        let est = estimate_sequential(&real(&delayed), &seq, 4, &be).unwrap();
        let want = [inv, inv, 1.0, inv];
        for (e, w) in est.iter().zip(want) {
            assert!((e.re - w).abs() < 1e-15);
        }

        let zeros = vec![Complex64::ZERO; 127];
        for be in [BackendConfig::reference64(), BackendConfig::reference32(), BackendConfig::tensor16().with_chunk(Some(64))] {
            let est = estimate_sequential(&zeros, &seq, 4, &be).unwrap();
            assert!(est.iter().all(|v| *v == Complex64::ZERO));
        }
    }

    #[test]
    fn batched_two_unit_taps() {
        let m = 511;
        let seq = PnSequence::builtin(m).unwrap();
        let batch = Batch {
            index: 0,
            members: vec![
                BatchMember { transmitter: 0, shift: 0 },
                BatchMember { transmitter: 1, shift: 255 },
            ],
        };
        // tx0 body unshifted with delay 0, tx1 body advanced by 255 with delay 3
        let b0 = seq.chips().to_vec();
        let mut b1 = seq.circular_shift(255).unwrap().chips().to_vec();
        b1.rotate_right(3);
        let y: Vec<Complex64> = b0.iter().zip(&b1).map(|(a, b)| Complex64::new(a + b, 0.0)).collect();
        let est = estimate_batched(&y, &seq, &batch, 64, &BackendConfig::reference64()).unwrap();
        assert_eq!(est.len(), 2);
        let lags = batch_lags(&batch, m, 64).unwrap();
        let oracle = brute(&seq, &lags, &y);
        for (k, (t, w)) in est.iter().enumerate() {
            assert_eq!(*t, k);
            for (i, v) in w.iter().enumerate() {
                assert!((*v - oracle[k * 64 + i]).norm() < 1e-12);
            }
        }
        let peak0 = est[0].1[0].re;
        let peak1 = est[1].1[3].re;
        assert!((peak0 - 1.0).abs() <= 2.0 / m as f64 + 1e-12);
        assert!((peak1 - 1.0).abs() <= 2.0 / m as f64 + 1e-12);
        let argmax = |w: &[Complex64]| (0..w.len()).max_by(|&a, &b| w[a].re.total_cmp(&w[b].re)).unwrap();
        assert_eq!(argmax(&est[0].1), 0);
        assert_eq!(argmax(&est[1].1), 3);

        let single = Batch { index: 0, members: vec![BatchMember { transmitter: 0, shift: 0 }] };
        let b = estimate_batched(&y, &seq, &single, 64, &BackendConfig::reference64()).unwrap();
        let s = estimate_sequential(&y, &seq, 64, &BackendConfig::reference64()).unwrap();
        assert_eq!(b[0].1, s);

        let tight = Batch {
            index: 0,
            members: vec![
                BatchMember { transmitter: 0, shift: 0 },
                BatchMember { transmitter: 1, shift: 40 },
            ],
        };
        assert!(matches!(
            estimate_batched(&y, &seq, &tight, 64, &BackendConfig::reference64()),
            Err(EstimatorError::PlanMismatch(_))
        ));
    }

    #[test]
    fn backend_validation() {
        assert!(BackendConfig::tensor16().validate(2047).is_ok());
        assert!(BackendConfig::tensor16().with_chunk(Some(2048)).validate(2047).is_ok());
        assert!(BackendConfig::tensor16().with_chunk(Some(6)).validate(2047).is_err());
        assert!(BackendConfig::tensor16().with_chunk(Some(2052)).validate(2047).is_err());
        let mut bad = BackendConfig::tensor16();
        bad.tile = 8;
        assert!(bad.validate(2047).is_err());
        assert_eq!("tensor16".parse::<BackendKind>().unwrap(), BackendKind::Tensor16);
        assert!("fp8".parse::<BackendKind>().is_err());
    }

    #[test]
    fn tiled_gemm_identity() {
        let mut eye = vec![0.0; 16];
        for i in 0..4 {
            eye[i * 4 + i] = 1.0;
        }
        let y: Vec<Complex64> = [5.0, -3.0, 100.0, 2048.0].iter().map(|&v| Complex64::new(v, -v)).collect();
        let be = BackendConfig::tensor16().with_chunk(Some(4));
        let (out, _) = tiled_mma_gemm(&eye, 4, &y, &be).unwrap();
        for (o, v) in out.iter().zip(&y) {
            assert_eq!(*o, *v / 4.0);
        }
        assert!(tiled_mma_gemm(&eye, 4, &y, &BackendConfig::reference64()).is_err());
    }

    #[test]
    fn tiled_gemm_zeros() {
        let a: Vec<f64> = (0..3 * 8).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let (out, _) = tiled_mma_gemm(&a, 3, &[Complex64::ZERO; 8], &BackendConfig::tensor16().with_chunk(None)).unwrap();
        assert!(out.iter().all(|v| *v == Complex64::ZERO));
    }

    #[test]
    fn zero_padding_does_not_change_results() {
        // M = 127 pads to 128; compare with an explicitly padded problem.
        let seq = PnSequence::builtin(127).unwrap();
        let y: Vec<Complex64> = (0..127).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect();
        let be = BackendConfig::tensor16().with_chunk(Some(32));
        let s = build_partial_circulant(&seq, 5).unwrap();
        let (plain, _) = tiled_mma_gemm(&s.data, 5, &y, &be).unwrap();
        let mut padded_a = Vec::new();
        for i in 0..5 {
            padded_a.extend_from_slice(s.row(i));
            padded_a.push(0.0);
        }
        let mut padded_y = y.clone();
        padded_y.push(Complex64::ZERO);
        let am = HalfMatrix::from_rows(&padded_a, 5, 128);
        let mut b = HalfMatrix::zeros(128, 2);
        for (k, v) in padded_y.iter().enumerate() {
            b.set(k, 0, v.re);
            b.set(k, 1, v.im);
        }
        let (flat, _) = tiled_mma(&am, &b, (1.0 / 127.0f64) as f32, Some(32), Accumulator::Binary32);
        for (i, v) in plain.iter().enumerate() {
            assert_eq!(v.re, f64::from(flat[2 * i]));
            assert_eq!(v.im, f64::from(flat[2 * i + 1]));
        }
    }

    #[test]
    fn reference32_close_to_reference64() {
        let seq = PnSequence::builtin(255).unwrap();
        let y: Vec<Complex64> = (0..255).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 1.3).cos())).collect();
        let a = estimate_sequential(&y, &seq, 16, &BackendConfig::reference64()).unwrap();
        let b = estimate_sequential(&y, &seq, 16, &BackendConfig::reference32()).unwrap();
        for (x, z) in a.iter().zip(&b) {
            assert!((x - z).norm() < 1e-6);
        }
    }
}
