//! Estimation error metric and the frequency-domain correlation oracle.

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::channel::ChannelRealization;
use crate::estimator::CirEstimate;
use crate::pn::PnSequence;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("length mismatch: sequence {seq}, signal {signal}")]
    LengthMismatch { seq: usize, signal: usize },
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Mean and standard error of the mean. The standard error is zero for a
/// single sample.
pub fn mean_and_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().copied().collect::<CompensatedSum>().value() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = xs.iter().map(|x| (x - mean).powi(2)).collect::<CompensatedSum>().value();
    let sd = (ss / (n - 1) as f64).sqrt();
    (mean, sd / (n as f64).sqrt())
}

/// Mean absolute error over all lags and links, using the complex modulus.
pub fn mae(truth: &ChannelRealization, est: &CirEstimate) -> Result<f64, MetricsError> {
    if truth.nr != est.nr || truth.nt != est.nt || truth.l != est.l {
        return Err(MetricsError::DimensionMismatch(format!(
            "truth {}x{}x{} vs estimate {}x{}x{}",
            truth.nr, truth.nt, truth.l, est.nr, est.nt, est.l
        )));
    }
    let mut acc = CompensatedSum::default();
    for r in 0..truth.nr {
        for t in 0..truth.nt {
            let (h, e) = (truth.cir(r, t), &est.taps[r][t]);
            if e.len() != h.len() {
                return Err(MetricsError::DimensionMismatch(format!(
                    "link ({r}, {t}): estimate has {} lags, truth {}",
                    e.len(),
                    h.len()
                )));
            }
            for (a, b) in e.iter().zip(h) {
                acc.add((a - b).norm());
            }
        }
    }
    Ok(acc.value() / (truth.l * truth.nt * truth.nr) as f64)
}

/// Full circular correlation `(1/M) Σ_n s[(n - i) mod M] y[n]` for every lag
/// `i`, computed through the DFT. Independent of the estimator backends.
pub fn oracle_circular_correlate(y: &[Complex64], seq: &PnSequence) -> Result<Vec<Complex64>, MetricsError> {
    let m = seq.len();
    if y.len() != m {
        return Err(MetricsError::LengthMismatch { seq: m, signal: y.len() });
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut s: Vec<Complex64> = seq.chips().iter().map(|&c| Complex64::new(c, 0.0)).collect();
    let mut yf = y.to_vec();
    fwd.process(&mut s);
    fwd.process(&mut yf);
    let mut prod: Vec<Complex64> = s.iter().zip(&yf).map(|(a, b)| a.conj() * b).collect();
    inv.process(&mut prod);
    // one 1/M for the unnormalized inverse, one for the correlation
    let scale = 1.0 / (m as f64 * m as f64);
    Ok(prod.into_iter().map(|v| v * scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::BackendKind;

    fn est_from(taps: Vec<Vec<Vec<Complex64>>>) -> CirEstimate {
        CirEstimate {
            nr: taps.len(),
            nt: taps[0].len(),
            l: taps[0][0].len(),
            backend: BackendKind::Reference64,
            normalization: 1.0,
            taps,
        }
    }

    #[test]
    fn mae_examples() {
        let h = vec![vec![vec![Complex64::new(1.0, 0.0), Complex64::ZERO]]];
        let truth = ChannelRealization::from_taps(h.clone()).unwrap();
        assert_eq!(mae(&truth, &est_from(h)).unwrap(), 0.0);

        let e = vec![vec![vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.5)]]];
        assert_eq!(mae(&truth, &est_from(e)).unwrap(), 0.25);

        let mut zero = ChannelRealization::from_taps(vec![vec![vec![Complex64::ONE; 3]; 2]; 2]).unwrap();
        for h in zero.taps.iter_mut().flatten() {
            h.fill(Complex64::ZERO);
        }
        let c = Complex64::from_polar(0.3, 1.1);
        let got = mae(&zero, &est_from(vec![vec![vec![c; 3]; 2]; 2])).unwrap();
        assert!((got - 0.3).abs() < 1e-15);

        let wrong = est_from(vec![vec![vec![Complex64::ZERO; 3]]]);
        assert!(mae(&truth, &wrong).is_err());
    }

    #[test]
    fn oracle_on_sequence_itself() {
        let seq = PnSequence::builtin(63).unwrap();
        let y: Vec<Complex64> = seq.chips().iter().map(|&c| Complex64::new(c, 0.0)).collect();
        let r = oracle_circular_correlate(&y, &seq).unwrap();
        assert!((r[0].re - 1.0).abs() < 1e-12);
        for v in &r[1..] {
            assert!((v.re + 1.0 / 63.0).abs() < 1e-12 && v.im.abs() < 1e-12);
        }
        let z = oracle_circular_correlate(&vec![Complex64::ZERO; 63], &seq).unwrap();
        assert!(z.iter().all(|v| v.norm() == 0.0));
        assert!(oracle_circular_correlate(&y[1..], &seq).is_err());
    }

    #[test]
    fn compensated_sum_and_sem() {
        let s: CompensatedSum = [1e16, 1.0, -1e16].into_iter().collect();
        assert_eq!(s.value(), 1.0);
        let (m, se) = mean_and_sem(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(mean_and_sem(&[7.0]), (7.0, 0.0));
    }
}
