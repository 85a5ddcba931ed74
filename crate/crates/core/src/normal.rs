//! Standard normal density, distribution, survival and quantile functions.
//!
//! Tail probabilities go through the complementary error function so that
//! `sf(8.0)` keeps full relative precision instead of rounding `1 - cdf` to
//! zero.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `1/sqrt(2 pi)`
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// `ln pdf(z)`
pub fn ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

/// `P(Z <= z)`
pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Survival function `P(Z > z)`.
pub fn sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// Inverse of [`cdf`]. Returns `-inf` at 0 and `+inf` at 1; NaN outside `[0, 1]`.
pub fn quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    if p <= 0.5 {
        lower_tail_quantile(p)
    } else {
        -lower_tail_quantile(1.0 - p)
    }
}

/// Inverse of [`sf`]: the `z` with `P(Z > z) = q`.
///
/// Computed from the lower tail by symmetry, so small `q` (deep upper tail)
/// does not lose precision to `1 - q`.
pub fn inverse_sf(q: f64) -> f64 {
    -quantile(q)
}

/// Solves `cdf(z) = p` for `0 < p <= 1/2`.
fn lower_tail_quantile(p: f64) -> f64 {
    let mut z = initial_guess(p);
    // Halley iterations on cdf(z) - p. For z <= 0 the cdf is evaluated as
    // 0.5 erfc(|z|/sqrt 2), which is relatively accurate down to p ~ 1e-300.
    for _ in 0..50 {
        let density = pdf(z);
        if density == 0.0 {
            break;
        }
        let e = (cdf(z) - p) / density;
        let step = e / (1.0 + 0.5 * z * e);
        z -= step;
        if step.abs() <= 4.0 * f64::EPSILON * z.abs().max(1.0) {
            break;
        }
    }
    z
}

/// Acklam's rational approximation (relative error about 1e-9).
fn initial_guess(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}
