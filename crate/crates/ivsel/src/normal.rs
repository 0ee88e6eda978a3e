//! Standard-normal special functions.
//!
//! Everything downstream (truncated moments, severity grids, closed forms)
//! rests on four scalar functions: density, distribution, quantile, and the
//! upper-tail hazard `lambda(x) = pdf(x) / (1 - cdf(x))` together with its
//! derivative `psi(x) = lambda(x) * (lambda(x) - x)`. They are implemented
//! here from scratch so results do not drift with the bit-level behavior of
//! an external statistics library:
//!
//! * `erfc`/`erfcx` use W. J. Cody's rational Chebyshev approximations
//!   (relative error below 1e-15 in double precision),
//! * the quantile uses Acklam's rational approximation polished by one
//!   Newton step against the cdf implemented here,
//! * the hazard switches to a scaled-complementary-error-function form for
//!   large arguments, where the naive `pdf/tail` ratio would go 0/0.

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_677_94;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// sqrt(2/pi), the hazard at 0 is twice the density at 0.
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_355_88;
/// Above this argument the hazard uses the scaled-tail formulation; below it
/// the plain `pdf/tail` ratio is already accurate. The two branches agree to
/// better than 1e-10 at the crossover.
const HAZARD_CROSSOVER: f64 = 6.0;

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function, absolute error below 1e-12.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - cdf(x)`, computed without cancellation.
pub fn normal_tail(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Standard normal quantile, absolute error below 1e-9 on (0, 1).
///
/// Acklam's rational approximation supplies the initial value; one Newton
/// step against [`normal_cdf`] (evaluated on whichever tail is smaller, so
/// the residual is formed without cancellation) finishes the job.
pub fn normal_inv_cdf(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::OutOfRange { name: "probability", value: q });
    }
    if q == 0.5 {
        return Ok(0.0);
    }
    // Reduce to the lower tail: find y >= 0 with tail(y) = t, answer sign*y.
    let (t, sign) = if q < 0.5 { (q, -1.0) } else { (1.0 - q, 1.0) };
    let mut y = -acklam(t);
    let f = normal_pdf(y);
    if f > 0.0 {
        y += (normal_tail(y) - t) / f;
    }
    Ok(sign * y)
}

/// Inverse Mills ratio `pdf(x) / (1 - cdf(x))`.
///
/// Relative error stays below 1e-10 over the whole real line: for
/// `x > 6` the tail is re-expressed through the scaled complementary error
/// function, `lambda(x) = sqrt(2/pi) / erfcx(x / sqrt(2))`, which never
/// underflows.
pub fn hazard(x: f64) -> f64 {
    if x > HAZARD_CROSSOVER {
        SQRT_2_OVER_PI / erfcx(x * FRAC_1_SQRT_2)
    } else {
        normal_pdf(x) / normal_tail(x)
    }
}

/// Variance-reduction factor of one-sided truncation at `s0`.
///
/// `psi(s0) = hazard(s0) * (hazard(s0) - s0)` is the derivative of the
/// hazard; it increases strictly from 0 to 1, with `psi(0) = 2/pi`.
pub fn psi(s0: f64) -> f64 {
    let h = hazard(s0);
    h * (h - s0)
}

/// Inverse of [`psi`]: the threshold whose truncation shrinks variance by
/// the factor `p`. Errors unless `p` lies strictly inside (0, 1).
pub fn psi_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::OutOfRange { name: "psi", value: p });
    }
    // psi is strictly increasing; bracket generously and bisect. psi(-40)
    // underflows to 0 and psi(1e6) is 1 to machine precision, so every
    // representable p in (0, 1) is bracketed.
    let (mut lo, mut hi) = (-40.0_f64, 1.0e6_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if psi(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Threshold `s0` at which a unit-variance score is cut to leave severity
/// `q = Pr(dropped)`; this is just the normal quantile of `q`.
pub fn severity_to_threshold(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::OutOfRange { name: "severity", value: q });
    }
    normal_inv_cdf(q)
}

/// Severity (share of the population dropped) of a cut at `s0`.
pub fn threshold_to_severity(s0: f64) -> f64 {
    normal_cdf(s0)
}

// ---------------------------------------------------------------------------
// Complementary error function, after Cody (rational Chebyshev fits).
// ---------------------------------------------------------------------------

const THRESH: f64 = 0.46875;
const SQRPI: f64 = 0.564_189_583_547_756_286_95; // 1/sqrt(pi)

const A: [f64; 5] = [
    3.161_123_743_870_565_60e0,
    1.138_641_541_510_501_56e2,
    3.774_852_376_853_020_21e2,
    3.209_377_589_138_469_47e3,
    1.857_777_061_846_031_53e-1,
];
const B: [f64; 4] = [
    2.360_129_095_234_412_09e1,
    2.440_246_379_344_441_73e2,
    1.282_616_526_077_372_28e3,
    2.844_236_833_439_170_62e3,
];
const C: [f64; 9] = [
    5.641_884_969_886_700_89e-1,
    8.883_149_794_388_375_94e0,
    6.611_919_063_714_162_95e1,
    2.986_351_381_974_001_31e2,
    8.819_522_212_417_690_90e2,
    1.712_047_612_634_070_58e3,
    2.051_078_377_826_071_47e3,
    1.230_339_354_797_997_25e3,
    2.153_115_354_744_038_46e-8,
];
const D: [f64; 8] = [
    1.574_492_611_070_983_47e1,
    1.176_939_508_913_124_99e2,
    5.371_811_018_620_098_58e2,
    1.621_389_574_566_690_19e3,
    3.290_799_235_733_459_63e3,
    4.362_619_090_143_247_16e3,
    3.439_367_674_143_721_64e3,
    1.230_339_354_803_749_42e3,
];
const P: [f64; 6] = [
    3.053_266_349_612_323_44e-1,
    3.603_448_999_498_044_39e-1,
    1.257_817_261_112_292_46e-1,
    1.608_378_514_874_227_66e-2,
    6.587_491_615_298_378_03e-4,
    1.631_538_713_730_209_78e-2,
];
const Q: [f64; 5] = [
    2.568_520_192_289_822_42e0,
    1.872_952_849_923_460_47e0,
    5.279_051_029_514_284_12e-1,
    6.051_834_131_244_131_91e-2,
    2.335_204_976_268_691_85e-3,
];

/// erf for |x| <= THRESH.
fn erf_small(x: f64) -> f64 {
    let y = x * x;
    let mut num = A[4] * y;
    let mut den = y;
    for i in 0..3 {
        num = (num + A[i]) * y;
        den = (den + B[i]) * y;
    }
    x * (num + A[3]) / (den + B[3])
}

/// Rational part of erfc for THRESH < y <= 4 (the `exp(-y^2)` factor is
/// applied by the caller when it wants the unscaled value).
fn erfc_mid_scaled(y: f64) -> f64 {
    let mut num = C[8] * y;
    let mut den = y;
    for i in 0..7 {
        num = (num + C[i]) * y;
        den = (den + D[i]) * y;
    }
    (num + C[7]) / (den + D[7])
}

/// Rational part of erfc for y > 4, again scaled by exp(y^2).
fn erfc_far_scaled(y: f64) -> f64 {
    // Beyond this point 1/y^2 underflows in the fit; the leading term of the
    // asymptotic series is exact to double precision anyway.
    if y >= 6.71e7 {
        return SQRPI / y;
    }
    let ysq = 1.0 / (y * y);
    let mut num = P[5] * ysq;
    let mut den = ysq;
    for i in 0..4 {
        num = (num + P[i]) * ysq;
        den = (den + Q[i]) * ysq;
    }
    let r = ysq * (num + P[4]) / (den + Q[4]);
    (SQRPI - r) / y
}

/// exp(-y^2) evaluated as Cody does: split y^2 into a coarse square plus a
/// small remainder so the large exponent loses no low-order bits.
fn exp_neg_ysq(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

fn erfc(x: f64) -> f64 {
    let y = x.abs();
    let result = if y <= THRESH {
        return 1.0 - erf_small(x);
    } else if y <= 4.0 {
        exp_neg_ysq(y) * erfc_mid_scaled(y)
    } else if y < 26.6 {
        exp_neg_ysq(y) * erfc_far_scaled(y)
    } else {
        0.0 // underflows in double precision
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// Scaled complementary error function `exp(x^2) * erfc(x)` for `x >= 0`.
fn erfcx(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x <= THRESH {
        (x * x).exp() * (1.0 - erf_small(x))
    } else if x <= 4.0 {
        erfc_mid_scaled(x)
    } else {
        erfc_far_scaled(x)
    }
}

/// Acklam's rational approximation to the normal quantile (about 1e-9
/// relative error on its own; callers polish it).
fn acklam(q: f64) -> f64 {
    const AA: [f64; 6] = [
        -3.969_683_028_665_376e+01,
        2.209_460_984_245_205e+02,
        -2.759_285_104_469_687e+02,
        1.383_577_518_672_690e+02,
        -3.066_479_806_614_716e+01,
        2.506_628_277_459_239e+00,
    ];
    const BB: [f64; 5] = [
        -5.447_609_879_822_406e+01,
        1.615_858_368_580_409e+02,
        -1.556_989_798_598_866e+02,
        6.680_131_188_771_972e+01,
        -1.328_068_155_288_572e+01,
    ];
    const CC: [f64; 6] = [
        -7.784_894_002_430_293e-03,
        -3.223_964_580_411_365e-01,
        -2.400_758_277_161_838e+00,
        -2.549_732_539_343_734e+00,
        4.374_664_141_464_968e+00,
        2.938_163_982_698_783e+00,
    ];
    const DD: [f64; 4] = [
        7.784_695_709_041_462e-03,
        3.224_671_290_700_398e-01,
        2.445_134_137_142_996e+00,
        3.754_408_661_907_416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if q < P_LOW {
        let r = (-2.0 * q.ln()).sqrt();
        (((((CC[0] * r + CC[1]) * r + CC[2]) * r + CC[3]) * r + CC[4]) * r + CC[5])
            / ((((DD[0] * r + DD[1]) * r + DD[2]) * r + DD[3]) * r + 1.0)
    } else if q <= 1.0 - P_LOW {
        let u = q - 0.5;
        let r = u * u;
        u * (((((AA[0] * r + AA[1]) * r + AA[2]) * r + AA[3]) * r + AA[4]) * r + AA[5])
            / (((((BB[0] * r + BB[1]) * r + BB[2]) * r + BB[3]) * r + BB[4]) * r + 1.0)
    } else {
        let r = (-2.0 * (1.0 - q).ln()).sqrt();
        -(((((CC[0] * r + CC[1]) * r + CC[2]) * r + CC[3]) * r + CC[4]) * r + CC[5])
            / ((((DD[0] * r + DD[1]) * r + DD[2]) * r + DD[3]) * r + 1.0)
    }
}
