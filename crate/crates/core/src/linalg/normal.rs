//! Standard normal density, distribution and quantile functions.

use statrs::function::erf::{erf, erfc};

use crate::error::{Result, SalrError};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(t: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * t * t).exp()
}

pub fn normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t / std::f64::consts::SQRT_2)
}

/// `Φ(t) − ½` without the cancellation of computing `Φ` first.
pub(crate) fn normal_cdf_minus_half(t: f64) -> f64 {
    0.5 * erf(t / std::f64::consts::SQRT_2)
}

// Acklam's rational approximation coefficients.
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
const D: [f64; 4] = [7.784_695_709_041_462e-3, 3.224_671_290_700_398e-1, 2.445_134_137_142_996, 3.754_408_661_907_416];
const P_LOW: f64 = 0.02425;

fn tail(q: f64) -> f64 {
    (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
        / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
}

fn acklam(u: f64) -> f64 {
    if u < P_LOW {
        tail((-2.0 * u.ln()).sqrt())
    } else if u <= 1.0 - P_LOW {
        let q = u - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - u).ln()).sqrt())
    }
}

/// `Φ⁻¹(u)` for `0 < u < 1`: rational approximation plus one Newton step.
pub fn normal_quantile(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(SalrError::Domain(format!("normal quantile requires 0 < u < 1, got {u}")));
    }
    let x = acklam(u);
    // residual Φ(x) − u, evaluated on the side that avoids cancellation
    let resid = if u > 0.5 { (1.0 - u) - 0.5 * erfc(x / std::f64::consts::SQRT_2) } else { normal_cdf(x) - u };
    Ok(x - resid / normal_pdf(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_symmetry_point() {
        assert_eq!(normal_cdf(0.0), 0.5);
    }

    #[test]
    fn quantile_of_three_quarters() {
        // scipy.stats.norm.ppf(0.75)
        let t = normal_quantile(0.75).unwrap();
        assert!((t - 0.674_489_750_196_081_7).abs() < 1e-12);
        assert!((t - 0.674).abs() < 5e-4);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn pdf_near_median_threshold() {
        // scipy.stats.norm.pdf(0.674) = 0.31785...
        assert!((normal_pdf(0.674) - 0.3177).abs() < 2e-4);
        assert!((normal_pdf(0.674) - 0.318).abs() < 1e-3);
    }

    #[test]
    fn cdf_reference_values() {
        // scipy.stats.norm.cdf
        let cases = [
            (1.0, 0.841_344_746_068_542_9),
            (-2.5, 0.006_209_665_325_776_132),
            (3.0, 0.998_650_101_968_369_9),
            (-6.0, 9.865_876_450_376_946e-10),
        ];
        for (t, want) in cases {
            assert!((normal_cdf(t) - want).abs() <= 1e-10, "t={t}");
        }
    }

    #[test]
    fn quantile_reference_values() {
        // scipy.stats.norm.ppf
        let cases = [
            (0.95, 1.644_853_626_951_472_2),
            (0.001, -3.090_232_306_167_813_5),
            (0.5, 0.0),
            (1e-8, -5.612_001_244_174_789),
        ];
        for (u, want) in cases {
            let got = normal_quantile(u).unwrap();
            let rel = if want == 0.0 { got.abs() } else { ((got - want) / want).abs() };
            assert!(rel <= 1e-10, "u={u} got={got}");
        }
    }

    #[test]
    fn quantile_rejects_endpoints() {
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
        assert!(normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn cdf_inverts_quantile() {
        for k in 1..=99 {
            let u = k as f64 / 100.0;
            let back = normal_cdf(normal_quantile(u).unwrap());
            assert!((back - u).abs() <= 1e-9, "u={u}");
        }
    }
}
