//! Chi-squared distribution functions via the regularized incomplete gamma.

use crate::error::{Error, Result};

use statrs::function::gamma::{gamma_lr, gamma_ur};

pub use statrs::function::gamma::ln_gamma;

/// Returns `(P(a, x), Q(a, x))`, the regularized lower and upper incomplete
/// gamma functions.
pub fn gamma_pq(a: f64, x: f64) -> (f64, f64) {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return (0.0, 1.0);
    }
    if x.is_infinite() {
        return (1.0, 0.0);
    }
    // evaluate the smaller tail directly and complement the other
    if x < a + 1.0 {
        let p = gamma_lr(a, x);
        (p, 1.0 - p)
    } else {
        let q = gamma_ur(a, x);
        (1.0 - q, q)
    }
}

fn check(d: u32, q: f64) -> Result<()> {
    if d == 0 {
        return Err(Error::invalid("chi-squared degrees of freedom must be at least 1"));
    }
    if !(q >= 0.0) {
        return Err(Error::invalid(format!("chi-squared argument must be nonnegative, got {q}")));
    }
    Ok(())
}

/// `F_{χ²_d}(q) = P(d/2, q/2)`.
pub fn chi2_cdf(d: u32, q: f64) -> Result<f64> {
    check(d, q)?;
    Ok(gamma_pq(0.5 * d as f64, 0.5 * q).0)
}

/// Upper tail `1 − F_{χ²_d}(q)`, computed directly so tiny tails survive.
pub fn chi2_sf(d: u32, q: f64) -> Result<f64> {
    check(d, q)?;
    Ok(gamma_pq(0.5 * d as f64, 0.5 * q).1)
}

/// Mean `K + ℓ` of the noncentral chi-squared distribution `χ²_K(ℓ)`.
pub fn noncentral_chi2_mean(degrees: u32, noncentrality: f64) -> Result<f64> {
    if degrees == 0 {
        return Err(Error::invalid("degrees of freedom must be at least 1"));
    }
    if !(noncentrality >= 0.0) {
        return Err(Error::invalid(format!("noncentrality must be nonnegative, got {noncentrality}")));
    }
    Ok(degrees as f64 + noncentrality)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Composite Simpson quadrature of the χ²₂ density `e^{−x/2}/2`.
    fn chi2_2_quadrature(q: f64) -> f64 {
        let n = 20_000;
        let h = q / n as f64;
        let f = |x: f64| 0.5 * (-0.5 * x).exp();
        let mut s = f(0.0) + f(q);
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    /// Maclaurin series of erf, adequate for |x| ≲ 3.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        for n in 1..200 {
            term *= -x * x / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }

    #[test]
    fn ln_gamma_known_values() {
        assert_relative_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_relative_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-14);
        assert_relative_eq!(ln_gamma(5.0), 24f64.ln(), epsilon = 1e-13);
        assert_relative_eq!(ln_gamma(10.5), 13.940_625_219_403_763, epsilon = 1e-12);
    }

    #[test]
    fn chi2_cdf_examples() {
        assert_eq!(chi2_cdf(2, 0.0).unwrap(), 0.0);
        let q = 2.0 * 2f64.ln();
        let oracle = chi2_2_quadrature(q);
        assert_relative_eq!(oracle, 0.5, epsilon = 1e-12);
        assert_relative_eq!(chi2_cdf(2, q).unwrap(), oracle, epsilon = 1e-12);

        let q: f64 = 3.841_459;
        let oracle = erf_series((q / 2.0).sqrt());
        assert_relative_eq!(oracle, 0.95, epsilon = 1e-6);
        assert_relative_eq!(chi2_cdf(1, q).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn chi2_cdf_d1_matches_erf_on_grid() {
        for i in 0..=36 {
            let q = 0.25 * i as f64;
            assert_relative_eq!(chi2_cdf(1, q).unwrap(), erf_series((q / 2.0).sqrt()), epsilon = 1e-12);
        }
    }

    #[test]
    fn chi2_limits_and_tails() {
        assert_eq!(chi2_cdf(3, f64::INFINITY).unwrap(), 1.0);
        let tail = chi2_sf(2, 250.0).unwrap();
        assert_relative_eq!(tail, (-125.0f64).exp(), max_relative = 1e-10);
        assert!(tail < 1e-40);
        assert!(chi2_cdf(0, 1.0).is_err());
        assert!(chi2_cdf(1, -1.0).is_err());
    }

    #[test]
    fn cdf_plus_sf_is_one() {
        for d in 1..8 {
            for i in 0..60 {
                let q = 0.37 * i as f64;
                let s = chi2_cdf(d, q).unwrap() + chi2_sf(d, q).unwrap();
                assert_relative_eq!(s, 1.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn noncentral_mean() {
        assert_eq!(noncentral_chi2_mean(1, 0.0).unwrap(), 1.0);
        assert_eq!(noncentral_chi2_mean(3, 4.0).unwrap(), 7.0);
        assert_eq!(noncentral_chi2_mean(2, 0.25).unwrap(), 2.25);
        assert!(noncentral_chi2_mean(0, 1.0).is_err());
        assert!(noncentral_chi2_mean(1, -0.1).is_err());
    }

    proptest::proptest! {
        #[test]
        fn cdf_monotone(d in 1u32..10, q in 0.0..80.0f64, dq in 0.0..5.0f64) {
            let lo = chi2_cdf(d, q).unwrap();
            let hi = chi2_cdf(d, q + dq).unwrap();
            proptest::prop_assert!(hi >= lo - 1e-15);
            proptest::prop_assert!((0.0..=1.0).contains(&lo));
        }
    }
}
