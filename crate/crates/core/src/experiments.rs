//! Monte-Carlo sweeps (MAE vs SNR, MAE vs tap count) and the per-frame
//! latency benchmark.
//!
//! Every iteration draws its own channel from a seed derived from the master
//! seed and the iteration index, so results do not depend on scheduling.
//! Within one iteration the channel is shared by all SNR points, PN lengths
//! and batch sizes of the same scale; noise is drawn independently per point.

use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{self, ChannelError, ChannelSpec, SnrSpec};
use crate::derive_seed;
use crate::estimator::{BackendConfig, BackendKind, EstimatorError, FrameEstimator, FrameStats};
use crate::metrics::{self, mean_and_sem, MetricsError};
use crate::pilot::{build_batch_plan, max_batch, PilotConfig, PilotError};
use crate::pn::{PnError, PnSequence};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Pn(#[from] PnError),
    #[error(transparent)]
    Pilot(#[from] PilotError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "PNCE_THREADS";

pub const MIMO_SCALES: [usize; 3] = [16, 32, 64];
pub const PN_LENGTHS: [usize; 3] = [511, 1023, 2047];
pub const N_BATCH_VALUES: [usize; 4] = [1, 2, 4, 8];
pub const MIN_LATENCY_REPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MimoScale {
    pub nt: usize,
    pub nr: usize,
}

impl MimoScale {
    pub fn square(n: usize) -> Self {
        Self { nt: n, nr: n }
    }
}

/// Default SNR grid, -10 dB to 30 dB in 5 dB steps.
pub fn default_snr_grid() -> Vec<f64> {
    (0..9).map(|i| -10.0 + 5.0 * i as f64).collect()
}

fn default_fs() -> f64 {
    10e6
}

fn default_reps() -> usize {
    MIN_LATENCY_REPS
}

fn default_warmup() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scales: Vec<MimoScale>,
    pub pn_lengths: Vec<usize>,
    /// Cyclic-prefix length; defaults to `l`.
    #[serde(default)]
    pub cp_len: Option<usize>,
    pub l: usize,
    pub l_nz: Vec<usize>,
    pub n_batch: Vec<usize>,
    #[serde(default = "default_snr_grid")]
    pub snr_db: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
    pub backend: BackendConfig,
    #[serde(default = "default_fs")]
    pub sample_rate: f64,
    #[serde(default = "default_reps")]
    pub latency_reps: usize,
    #[serde(default = "default_warmup")]
    pub latency_warmup: usize,
    /// Allow values outside the published parameter table.
    #[serde(default)]
    pub desk_scale: bool,
}

impl ExperimentConfig {
    pub fn cp(&self) -> usize {
        self.cp_len.unwrap_or(self.l)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidConfig(m));
        if self.iterations < 1 {
            return bad("iterations must be >= 1".into());
        }
        if self.scales.is_empty() || self.pn_lengths.is_empty() || self.l_nz.is_empty() || self.n_batch.is_empty() {
            return bad("scales, pn_lengths, l_nz and n_batch must be non-empty".into());
        }
        if self.snr_db.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return bad("SNR grid contains NaN or -inf".into());
        }
        if let Some(&z) = self.l_nz.iter().find(|&&z| z < 1 || z > self.l) {
            return bad(format!("L_nz={z} outside 1..={}", self.l));
        }
        if self.latency_reps < MIN_LATENCY_REPS {
            return bad(format!("latency_reps must be >= {MIN_LATENCY_REPS}"));
        }
        for &m in &self.pn_lengths {
            PnSequence::builtin(m)?;
        }
        if self.desk_scale {
            return Ok(());
        }
        if let Some(s) = self.scales.iter().find(|s| s.nt != s.nr || !MIMO_SCALES.contains(&s.nt)) {
            return bad(format!("scale {}x{} not in {{16,32,64}} squares (set desk_scale to override)", s.nt, s.nr));
        }
        if let Some(m) = self.pn_lengths.iter().find(|m| !PN_LENGTHS.contains(m)) {
            return bad(format!("PN length {m} not in {{511,1023,2047}} (set desk_scale to override)"));
        }
        if !(64..=128).contains(&self.cp()) {
            return bad(format!("CP length {} outside 64..=128 (set desk_scale to override)", self.cp()));
        }
        if let Some(z) = self.l_nz.iter().find(|&&z| z > 128) {
            return bad(format!("L_nz={z} outside 1..=128 (set desk_scale to override)"));
        }
        if let Some(b) = self.n_batch.iter().find(|b| !N_BATCH_VALUES.contains(b)) {
            return bad(format!("N_batch={b} not in {{1,2,4,8}} (set desk_scale to override)"));
        }
        Ok(())
    }

    fn feasible(&self, m: usize, nb: usize) -> bool {
        match max_batch(m, self.cp()) {
            Ok(bound) if nb <= bound => true,
            _ => {
                warn!("skipping M={m}, N_batch={nb}: exceeds floor(M/C) with C={}", self.cp());
                false
            }
        }
    }
}

/// One aggregated sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub experiment: String,
    pub backend: BackendKind,
    pub nt: usize,
    pub nr: usize,
    pub m: usize,
    pub c: usize,
    pub l: usize,
    pub l_nz: usize,
    pub n_batch: usize,
    pub snr_db: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Mean MAE over iterations.
    pub mae: f64,
    /// Standard error of the mean MAE.
    pub mae_sem: f64,
    /// Per-iteration MAE, in iteration order.
    pub iteration_maes: Vec<f64>,
    /// Mean wall-clock estimation time per frame, seconds.
    pub latency_s: f64,
    pub samples_moved: u64,
    pub macs: u64,
    pub saturations: usize,
}

impl SweepResult {
    /// Expand into one row per iteration (`iterations = 1`, `mae_sem = 0`).
    pub fn per_iteration(&self) -> Vec<SweepResult> {
        self.iteration_maes
            .iter()
            .map(|&e| SweepResult {
                iterations: 1,
                mae: e,
                mae_sem: 0.0,
                iteration_maes: vec![e],
                ..self.clone()
            })
            .collect()
    }
}

/// Worker pool honouring `PNCE_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool, ExperimentError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| ExperimentError::InvalidConfig(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| ExperimentError::ThreadPool(e.to_string()))
}

struct PointSample {
    mae: f64,
    seconds: f64,
    stats: FrameStats,
}

#[derive(Clone, Copy)]
struct GroupKey {
    scale: MimoScale,
    m: usize,
    n_batch: usize,
    l_nz: usize,
}

fn channel_seed(cfg: &ExperimentConfig, key: &GroupKey, iteration: usize) -> u64 {
    derive_seed(
        cfg.seed,
        &[0, iteration as u64, key.scale.nt as u64, key.scale.nr as u64, cfg.l as u64, key.l_nz as u64],
    )
}

fn noise_seed(cfg: &ExperimentConfig, key: &GroupKey, iteration: usize, snr_idx: usize) -> u64 {
    derive_seed(
        cfg.seed,
        &[
            1,
            iteration as u64,
            snr_idx as u64,
            key.scale.nt as u64,
            key.scale.nr as u64,
            key.m as u64,
            key.n_batch as u64,
            key.l_nz as u64,
        ],
    )
}

/// Run every iteration of one (scale, M, N_batch, L_nz) group over the SNR grid.
fn run_group(
    cfg: &ExperimentConfig,
    key: GroupKey,
    experiment: &str,
    pool: &rayon::ThreadPool,
) -> Result<Vec<SweepResult>, ExperimentError> {
    let seq = PnSequence::builtin(key.m)?;
    let pilot = PilotConfig {
        m: key.m,
        c: cfg.cp(),
        nt: key.scale.nt,
        n_batch: key.n_batch,
        l: cfg.l,
        fs: cfg.sample_rate,
    };
    let plan = build_batch_plan(&pilot)?;
    let estimator = FrameEstimator::new(&plan, &seq, cfg.backend)?;

    let per_iter: Vec<Vec<PointSample>> = pool.install(|| {
        (0..cfg.iterations)
            .into_par_iter()
            .map(|i| -> Result<Vec<PointSample>, ExperimentError> {
                let spec = ChannelSpec {
                    l: cfg.l,
                    l_nz: key.l_nz,
                    nt: key.scale.nt,
                    nr: key.scale.nr,
                    seed: channel_seed(cfg, &key, i),
                };
                let h = channel::draw_channel(&spec)?;
                let clean = channel::propagate_plan(&plan, &h, &seq)?;
                cfg.snr_db
                    .iter()
                    .enumerate()
                    .map(|(k, &snr_db)| {
                        let snr = SnrSpec {
                            snr_db,
                            seed: noise_seed(cfg, &key, i, k),
                        };
                        let noisy = channel::add_noise_to_all(&clean, &snr)?;
                        let t0 = Instant::now();
                        let (est, stats) = estimator.estimate(&noisy)?;
                        let seconds = t0.elapsed().as_secs_f64();
                        Ok(PointSample {
                            mae: metrics::mae(&h, &est)?,
                            seconds,
                            stats,
                        })
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    Ok(cfg
        .snr_db
        .iter()
        .enumerate()
        .map(|(k, &snr_db)| {
            let maes: Vec<f64> = per_iter.iter().map(|it| it[k].mae).collect();
            let secs: Vec<f64> = per_iter.iter().map(|it| it[k].seconds).collect();
            let (mae, mae_sem) = mean_and_sem(&maes);
            let (latency, _) = mean_and_sem(&secs);
            let first = &per_iter[0][k].stats;
            SweepResult {
                experiment: experiment.to_string(),
                backend: cfg.backend.kind,
                nt: key.scale.nt,
                nr: key.scale.nr,
                m: key.m,
                c: cfg.cp(),
                l: cfg.l,
                l_nz: key.l_nz,
                n_batch: key.n_batch,
                snr_db,
                iterations: cfg.iterations,
                seed: cfg.seed,
                mae,
                mae_sem,
                iteration_maes: maes,
                latency_s: latency.max(f64::MIN_POSITIVE),
                samples_moved: first.samples_moved,
                macs: first.macs,
                saturations: per_iter.iter().map(|it| it[k].stats.saturated).sum(),
            }
        })
        .collect())
}

fn run_grid(cfg: &ExperimentConfig, experiment: &str) -> Result<Vec<SweepResult>, ExperimentError> {
    cfg.validate()?;
    let pool = thread_pool()?;
    let mut rows = Vec::new();
    for &scale in &cfg.scales {
        for &m in &cfg.pn_lengths {
            for &n_batch in &cfg.n_batch {
                if !cfg.feasible(m, n_batch) {
                    continue;
                }
                for &l_nz in &cfg.l_nz {
                    info!("{experiment}: {}x{} M={m} N_batch={n_batch} L_nz={l_nz}", scale.nt, scale.nr);
                    rows.extend(run_group(cfg, GroupKey { scale, m, n_batch, l_nz }, experiment, &pool)?);
                }
            }
        }
    }
    Ok(rows)
}

/// MAE vs SNR for every (scale, M, N_batch, L_nz) in the config. Rows are
/// ordered by scale, M, N_batch, L_nz, then SNR.
pub fn run_snr_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepResult>, ExperimentError> {
    run_grid(cfg, "snr_sweep")
}

/// MAE vs SNR with the tap count varied. Rows are sorted by (L_nz, SNR).
pub fn run_tap_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepResult>, ExperimentError> {
    let mut rows = run_grid(cfg, "tap_sweep")?;
    rows.sort_by(|a, b| {
        a.l_nz
            .cmp(&b.l_nz)
            .then(a.snr_db.total_cmp(&b.snr_db))
            .then((a.nt, a.nr, a.m, a.n_batch).cmp(&(b.nt, b.nr, b.m, b.n_batch)))
    });
    Ok(rows)
}

/// Timing of one (scale, M, N_batch) configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyPoint {
    pub backend: BackendKind,
    pub nt: usize,
    pub nr: usize,
    pub m: usize,
    pub c: usize,
    pub l: usize,
    pub l_nz: usize,
    pub n_batch: usize,
    pub warmup: usize,
    pub reps: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub median_s: f64,
    /// Received samples ingested per frame, all receivers.
    pub samples_moved: u64,
    pub macs: u64,
    pub saturations: usize,
    pub seed: u64,
}

impl LatencyPoint {
    /// Samples ingested per receiver per frame.
    pub fn samples_per_receiver(&self) -> u64 {
        self.samples_moved / self.nr as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub points: Vec<LatencyPoint>,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

struct BenchCase {
    n_batch: usize,
    frames: Vec<Vec<channel::ReceivedFrame>>,
    estimator: FrameEstimator,
    times: Vec<f64>,
    stats: FrameStats,
}

/// Time the CP-removal, conversion, correlation and assembly path for one
/// frame per configuration. Runs on the calling thread. Repetitions are
/// interleaved across the N_batch values of each (scale, M) group so slow
/// drift of the host affects every point alike.
pub fn run_latency_bench(cfg: &ExperimentConfig) -> Result<LatencyReport, ExperimentError> {
    cfg.validate()?;
    let l_nz = cfg.l_nz[0];
    let snr_db = cfg.snr_db.first().copied().unwrap_or(f64::INFINITY);
    let mut points = Vec::new();
    for &scale in &cfg.scales {
        for &m in &cfg.pn_lengths {
            let seq = PnSequence::builtin(m)?;
            let h = channel::draw_channel(&ChannelSpec {
                l: cfg.l,
                l_nz,
                nt: scale.nt,
                nr: scale.nr,
                seed: derive_seed(cfg.seed, &[2, scale.nt as u64, scale.nr as u64, m as u64]),
            })?;
            let mut cases = Vec::new();
            for &n_batch in &cfg.n_batch {
                if !cfg.feasible(m, n_batch) {
                    continue;
                }
                let pilot = PilotConfig {
                    m,
                    c: cfg.cp(),
                    nt: scale.nt,
                    n_batch,
                    l: cfg.l,
                    fs: cfg.sample_rate,
                };
                let plan = build_batch_plan(&pilot)?;
                let clean = channel::propagate_plan(&plan, &h, &seq)?;
                let frames = channel::add_noise_to_all(
                    &clean,
                    &SnrSpec {
                        snr_db,
                        seed: derive_seed(cfg.seed, &[3, m as u64, n_batch as u64]),
                    },
                )?;
                let estimator = FrameEstimator::new(&plan, &seq, cfg.backend)?;
                cases.push(BenchCase {
                    n_batch,
                    frames,
                    estimator,
                    times: Vec::with_capacity(cfg.latency_reps),
                    stats: FrameStats::default(),
                });
            }
            for _ in 0..cfg.latency_warmup {
                for c in &cases {
                    c.estimator.estimate(&c.frames)?;
                }
            }
            for _ in 0..cfg.latency_reps {
                for c in cases.iter_mut() {
                    let t0 = Instant::now();
                    let (est, s) = c.estimator.estimate(&c.frames)?;
                    c.times.push(t0.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
                    std::hint::black_box(&est);
                    c.stats = s;
                }
            }
            for mut c in cases {
                let (mean, sem) = mean_and_sem(&c.times);
                let std = sem * (c.times.len() as f64).sqrt();
                info!(
                    "latency {}x{} M={m} N_batch={}: mean {:.3} ms",
                    scale.nt,
                    scale.nr,
                    c.n_batch,
                    mean * 1e3
                );
                points.push(LatencyPoint {
                    backend: cfg.backend.kind,
                    nt: scale.nt,
                    nr: scale.nr,
                    m,
                    c: cfg.cp(),
                    l: cfg.l,
                    l_nz,
                    n_batch: c.n_batch,
                    warmup: cfg.latency_warmup,
                    reps: c.times.len(),
                    mean_s: mean,
                    std_s: std,
                    median_s: median(&mut c.times),
                    samples_moved: c.stats.samples_moved,
                    macs: c.stats.macs,
                    saturations: c.stats.saturated,
                    seed: cfg.seed,
                });
            }
        }
    }
    Ok(LatencyReport { points })
}
