//! Software model of a 4x4 half-precision matrix-multiply-accumulate unit.
//!
//! Operands are rounded to binary16 once, when they are loaded into a
//! [`HalfMatrix`]. Products of two binary16 values fit exactly in binary32, so
//! the only rounding during a multiply-accumulate happens in the accumulator:
//! once per step in binary32, or re-rounded to binary16 after every step when
//! the half-precision accumulator is selected.
//!
//! The reduction dimension is split into chunks of `K_c` samples. Each chunk
//! is accumulated from zero, scaled by the normalization factor, and only then
//! added into a binary32 running total. A single chunk spanning the whole
//! reduction reproduces normalize-at-the-end behaviour.

use serde::{Deserialize, Serialize};

use super::binary16::{quantize_binary16, F16_MAX};

/// Edge of the square MMA fragment.
pub const TILE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accumulator {
    Binary32,
    Binary16,
}

pub(crate) fn round_up(n: usize) -> usize {
    n.div_ceil(TILE) * TILE
}

/// Row-major matrix of binary16 values held in `f32`, zero-padded so both
/// dimensions are multiples of [`TILE`].
#[derive(Debug, Clone, PartialEq)]
pub struct HalfMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    data: Vec<f32>,
}

impl HalfMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let stride = round_up(cols);
        Self {
            rows,
            cols,
            stride,
            data: vec![0.0; round_up(rows) * stride],
        }
    }

    /// Quantize a row-major `rows x cols` slice.
    pub fn from_rows(values: &[f64], rows: usize, cols: usize) -> Self {
        assert_eq!(values.len(), rows * cols, "matrix data does not match shape");
        let mut m = Self::zeros(rows, cols);
        for (r, src) in values.chunks_exact(cols.max(1)).enumerate().take(rows) {
            for (c, &v) in src.iter().enumerate() {
                m.set(r, c, v);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn padded_rows(&self) -> usize {
        self.data.len() / self.stride.max(1)
    }

    pub fn padded_cols(&self) -> usize {
        self.stride
    }

    /// Store `v` rounded to binary16.
    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.stride + c] = quantize_binary16(v) as f32;
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.stride + c]
    }

    #[inline]
    fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.stride..(r + 1) * self.stride]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GemmStats {
    /// Largest magnitude of any chunk partial sum before scaling.
    pub max_abs_partial: f64,
    /// Count of output elements whose stored intermediates went non-finite.
    pub saturated: usize,
    /// Scalar multiply-accumulates over the unpadded problem.
    pub macs: u64,
}

impl GemmStats {
    /// True when every chunk partial stayed within the binary16 finite range.
    pub fn within_binary16_range(&self) -> bool {
        self.saturated == 0 && self.max_abs_partial <= F16_MAX
    }

    pub fn merge(&mut self, other: &GemmStats) {
        self.max_abs_partial = self.max_abs_partial.max(other.max_abs_partial);
        self.saturated += other.saturated;
        self.macs += other.macs;
    }
}

/// `scale * (A · B)` on the emulated MMA unit. `a` is `rows x K`, `b` is
/// `K x n`; the result is `rows x n`, row-major, in binary32.
///
/// `chunk` is the reduction length per partial normalization; `None` means a
/// single chunk. It must be a positive multiple of [`TILE`].
pub fn tiled_mma(
    a: &HalfMatrix,
    b: &HalfMatrix,
    scale: f32,
    chunk: Option<usize>,
    acc: Accumulator,
) -> (Vec<f32>, GemmStats) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let k_pad = a.padded_cols();
    debug_assert_eq!(k_pad, b.padded_rows());
    let kc = chunk.unwrap_or(k_pad).max(TILE);
    assert!(kc.is_multiple_of(TILE), "chunk length must be a multiple of {TILE}");
    let n_pad = b.padded_cols();

    let mut out = vec![0f32; a.rows * b.cols];
    let mut stats = GemmStats {
        macs: (a.rows * a.cols * b.cols) as u64,
        ..GemmStats::default()
    };

    let mut total = vec![0f32; TILE * n_pad];
    let mut part32 = vec![0f32; TILE * n_pad];
    let mut part16 = vec![0f64; TILE * n_pad];
    let mut bad = vec![false; TILE * n_pad];

    for i0 in (0..a.padded_rows()).step_by(TILE) {
        total.fill(0.0);
        bad.fill(false);
        for k0 in (0..k_pad).step_by(kc) {
            let k1 = (k0 + kc).min(k_pad);
            match acc {
                Accumulator::Binary32 => {
                    part32.fill(0.0);
                    for kt in (k0..k1).step_by(TILE) {
                        mma_tile_f32(a, b, i0, kt, n_pad, &mut part32);
                    }
                    for ((t, &p), flag) in total.iter_mut().zip(&part32).zip(bad.iter_mut()) {
                        let p64 = f64::from(p);
                        if !p.is_finite() {
                            *flag = true;
                        }
                        stats.max_abs_partial = stats.max_abs_partial.max(p64.abs());
                        *t += p * scale;
                    }
                }
                Accumulator::Binary16 => {
                    part16.fill(0.0);
                    for kt in (k0..k1).step_by(TILE) {
                        mma_tile_f16(a, b, i0, kt, n_pad, &mut part16);
                    }
                    for ((t, &p), flag) in total.iter_mut().zip(&part16).zip(bad.iter_mut()) {
                        if !p.is_finite() {
                            *flag = true;
                        }
                        stats.max_abs_partial = stats.max_abs_partial.max(p.abs());
                        *t += p as f32 * scale;
                    }
                }
            }
        }
        for i in 0..TILE {
            let r = i0 + i;
            if r >= a.rows {
                break;
            }
            for j in 0..b.cols {
                let v = total[i * n_pad + j];
                if bad[i * n_pad + j] || !v.is_finite() {
                    stats.saturated += 1;
                }
                out[r * b.cols + j] = v;
            }
        }
    }
    (out, stats)
}

/// One 4x4 A fragment against the matching 4 rows of B, all columns.
#[inline]
fn mma_tile_f32(a: &HalfMatrix, b: &HalfMatrix, i0: usize, k0: usize, n_pad: usize, acc: &mut [f32]) {
    for i in 0..TILE {
        let a_row = &a.row(i0 + i)[k0..k0 + TILE];
        let acc_row = &mut acc[i * n_pad..(i + 1) * n_pad];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = b.row(k0 + kk);
            for (c, &bv) in acc_row.iter_mut().zip(b_row) {
                // exact product, single rounding on the add
                *c += av * bv;
            }
        }
    }
}

#[inline]
fn mma_tile_f16(a: &HalfMatrix, b: &HalfMatrix, i0: usize, k0: usize, n_pad: usize, acc: &mut [f64]) {
    for i in 0..TILE {
        let a_row = &a.row(i0 + i)[k0..k0 + TILE];
        let acc_row = &mut acc[i * n_pad..(i + 1) * n_pad];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = b.row(k0 + kk);
            for (c, &bv) in acc_row.iter_mut().zip(b_row) {
                *c = quantize_binary16(*c + f64::from(av) * f64::from(bv));
            }
        }
    }
}
