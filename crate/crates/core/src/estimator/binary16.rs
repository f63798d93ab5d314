//! IEEE 754 binary16 rounding, done on `f64` values so the emulated GEMM can
//! keep half-precision numbers in wider registers without changing them.

/// Largest finite binary16 value.
pub const F16_MAX: f64 = 65504.0;
/// Smallest positive normal binary16 value, `2^-14`.
pub const F16_MIN_NORMAL: f64 = 6.103515625e-5;

const MANTISSA_BITS: i32 = 10;
const MIN_EXP: i32 = -14;

/// Nearest binary16 value to `x` under round-to-nearest, ties-to-even,
/// returned widened. Out-of-range magnitudes become signed infinity.
pub fn quantize_binary16(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    let a = x.abs();
    // Unbiased exponent of a normal f64; any f64 subnormal is far below
    // the binary16 subnormal range, which the clamp below covers.
    let exp = (((a.to_bits() >> 52) & 0x7ff) as i32 - 1023).max(MIN_EXP);
    let ulp = pow2(exp - MANTISSA_BITS);
    let q = (a / ulp).round_ties_even() * ulp;
    if q > F16_MAX {
        f64::INFINITY.copysign(x)
    } else {
        q.copysign(x)
    }
}

/// [`quantize_binary16`] for `f32` inputs; binary16 values are exact in `f32`.
pub fn quantize_binary16_f32(x: f32) -> f32 {
    quantize_binary16(f64::from(x)) as f32
}

fn pow2(e: i32) -> f64 {
    f64::from_bits(((e + 1023) as u64) << 52)
}

#[cfg(test)]
mod tests {
    use super::*;
    use half::f16;
    use proptest::prelude::*;

    #[test]
    fn named_cases() {
        assert_eq!(quantize_binary16(1.0), 1.0);
        assert_eq!(quantize_binary16(70000.0), f64::INFINITY);
        assert_eq!(quantize_binary16(-70000.0), f64::NEG_INFINITY);
        assert_eq!(quantize_binary16(2049.0), 2048.0);
        assert_eq!(quantize_binary16(2051.0), 2052.0);
        assert_eq!(quantize_binary16(65504.0), 65504.0);
        assert_eq!(quantize_binary16(65519.0), 65504.0);
        assert_eq!(quantize_binary16(65520.0), f64::INFINITY);
        assert_eq!(quantize_binary16(F16_MIN_NORMAL), F16_MIN_NORMAL);
        // smallest subnormal 2^-24; half of it ties to zero (even)
        assert_eq!(quantize_binary16(2f64.powi(-24)), 2f64.powi(-24));
        assert_eq!(quantize_binary16(2f64.powi(-25)), 0.0);
        assert_eq!(quantize_binary16(1.5 * 2f64.powi(-24)), 2.0 * 2f64.powi(-24));
        assert!(quantize_binary16(f64::NAN).is_nan());
    }

    proptest! {
        // `half` performs the same conversion with independent bit-level code.
        #[test]
        fn agrees_with_half_crate(x in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL) {
            let ours = quantize_binary16(x);
            let theirs = f16::from_f64(x).to_f64();
            prop_assert!(ours == theirs || (ours == 0.0 && theirs == 0.0), "{x}: {ours} vs {theirs}");
        }

        #[test]
        fn agrees_in_working_range(x in -70000.0f64..70000.0) {
            prop_assert_eq!(quantize_binary16(x), f16::from_f64(x).to_f64());
        }

        #[test]
        fn idempotent(x in -1.0e5f64..1.0e5) {
            let q = quantize_binary16(x);
            prop_assert_eq!(quantize_binary16(q), q);
        }
    }
}
