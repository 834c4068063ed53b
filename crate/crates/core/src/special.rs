//! Standard normal distribution helpers.

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;
use statrs::function::erf::erfc_inv;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Upper tail `1 - Φ(z)` without cancellation for large `z`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Inverse of the standard normal CDF for `p` in (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    let mut z = -SQRT_2 * erfc_inv(2.0 * p);
    // statrs' inverse is good to ~1e-11; Newton steps on the tail nearest p
    // bring it to full precision.
    for _ in 0..2 {
        let density = normal_pdf(z);
        if !(density > 0.0) {
            break;
        }
        let residual = if p < 0.5 { normal_cdf(z) - p } else { (1.0 - p) - normal_sf(z) };
        z -= residual / density;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_symmetry() {
        for &z in &[0.0, 0.3, 1.0, 2.5, 6.0] {
            assert!((normal_cdf(z) + normal_cdf(-z) - 1.0).abs() < 1e-15);
            assert!((normal_sf(z) - normal_cdf(-z)).abs() < 1e-15);
        }
        assert_eq!(normal_cdf(0.0), 0.5);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-6, 0.01, 0.3, 0.5, 0.9, 0.975, 0.999_999] {
            let z = normal_quantile(p);
            assert!((normal_cdf(z) - p).abs() < 1e-13 * p.max(1e-3), "p = {p}");
        }
        assert_eq!(normal_quantile(0.5), 0.0);
    }
}
