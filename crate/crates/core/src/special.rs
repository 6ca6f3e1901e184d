//! Normal distribution primitives with care in the far tails.
//!
//! `erfc` from `libm` is accurate to a few ulp over its whole range; beyond
//! `x ≈ 5` the upper tail is evaluated through the Mills ratio so that log
//! survival probabilities stay finite long after `Φc` itself underflows.

use std::f64::consts::FRAC_1_SQRT_2;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn norm_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Φ(x).
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// 1 − Φ(x), without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Mills ratio Φc(x)/φ(x), valid for all real x.
pub fn mills_ratio(x: f64) -> f64 {
    if x < 5.0 {
        return norm_sf(x) / norm_pdf(x);
    }
    // Lentz evaluation of 1/(x + 1/(x + 2/(x + 3/(x + ...)))).
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..200 {
        let a = k as f64;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// log(1 − Φ(x)).
pub fn norm_log_sf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if x < 0.0 {
        (-norm_cdf(x)).ln_1p()
    } else if x < 5.0 {
        norm_sf(x).ln()
    } else {
        norm_log_pdf(x) + mills_ratio(x).ln()
    }
}

/// log Φ(x).
pub fn norm_log_cdf(x: f64) -> f64 {
    norm_log_sf(-x)
}

/// Hazard φ(x)/(1 − Φ(x)), the inverse Mills ratio.
pub fn norm_hazard(x: f64) -> f64 {
    1.0 / mills_ratio(x)
}

/// Standard normal quantile (Wichura, AS 241), about 1e-16 relative accuracy.
pub fn norm_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        let num = (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5)
            * q;
        let den = ((((((5.226_495_278_852_545e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// log(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// log(Σ exp(xᵢ)), −∞ for an empty or all −∞ input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values computed with 50-digit arithmetic.
    const CDF: &[(f64, f64)] = &[
        (-10.0, 7.619_853_024_160_526e-24),
        (-3.0, 0.001_349_898_031_630_094_5),
        (-1.0, 0.158_655_253_931_457_05),
        (0.0, 0.5),
        (0.5, 0.691_462_461_274_013_1),
        (1.0, 0.841_344_746_068_542_9),
        (1.96, 0.975_002_104_851_779_6),
        (3.0, 0.998_650_101_968_369_9),
    ];

    const LOG_SF: &[(f64, f64)] = &[
        (-10.0, -7.619_853_024_160_526e-24),
        (-3.0, -0.001_350_809_964_748_193_8),
        (-1.0, -0.172_753_779_023_449_9),
        (0.0, -std::f64::consts::LN_2),
        (1.0, -1.841_021_645_009_263_5),
        (1.96, -3.688_963_651_729_638_6),
        (3.0, -6.607_726_221_510_349),
        (5.0, -15.064_998_393_988_726),
        (8.0, -35.013_437_159_914_55),
        (12.0, -75.410_673_001_568_8),
        (30.0, -454.321_243_956_343_2),
        (40.0, -804.608_442_013_753_8),
        (100.0, -5_005.524_208_694_205),
    ];

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn cdf_matches_reference() {
        for &(x, want) in CDF {
            assert!(rel(norm_cdf(x), want) < 1e-14, "Φ({x})");
        }
    }

    #[test]
    fn log_sf_matches_reference_into_far_tail() {
        for &(x, want) in LOG_SF {
            assert!(
                rel(norm_log_sf(x), want) < 1e-13,
                "log Φc({x}) = {}",
                norm_log_sf(x)
            );
        }
        assert_eq!(norm_log_sf(f64::INFINITY), f64::NEG_INFINITY);
        assert_eq!(norm_log_sf(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn mills_ratio_is_continuous_at_switch() {
        let below = norm_sf(4.999_999_999) / norm_pdf(4.999_999_999);
        assert!(rel(mills_ratio(5.0), below) < 1e-9);
    }

    #[test]
    fn quantile_matches_reference() {
        let table = [
            (1e-300, -37.047_096_299_361_2),
            (1e-20, -9.262_340_089_798_408),
            (1e-10, -6.361_340_902_404_056),
            (0.001, -3.090_232_306_167_813_5),
            (0.025, -1.959_963_984_540_054_2),
            (0.3, -0.524_400_512_708_040_8),
            (0.5, 0.0),
            (0.9, 1.281_551_565_544_600_6),
            (0.95, 1.644_853_626_951_472_2),
            (0.975, 1.959_963_984_540_053_9),
            (0.999_999, 4.753_424_308_817_088),
        ];
        for (p, want) in table {
            let got = norm_quantile(p);
            assert!(
                (got - want).abs() <= 1e-13 * want.abs().max(1.0),
                "q({p}) = {got}"
            );
        }
        assert_eq!(norm_quantile(0.0), f64::NEG_INFINITY);
        assert!(norm_quantile(1.5).is_nan());
    }

    #[test]
    fn softplus_and_lse_are_stable() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }
}
