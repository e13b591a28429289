//! Empirical Bayes estimates of a site's expected crash frequency.
//!
//! Both estimators shrink the observed count `y` towards a prior mean with
//! weight `w = E / (E + Var)`. For the NB prior `Var = alpha mu^2`, which
//! reduces the weight to `1 / (1 + alpha mu)`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Floor applied to a generator-derived prior mean that came out as zero.
pub const PRIOR_MEAN_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EbMethod {
    NbEb,
    CganEb,
}

impl EbMethod {
    pub fn label(self) -> &'static str {
        match self {
            EbMethod::NbEb => "NB-EB",
            EbMethod::CganEb => "CGAN-EB",
        }
    }
}

impl std::fmt::Display for EbMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EbEstimate {
    pub method: EbMethod,
    pub prior_mean: f64,
    pub prior_variance: f64,
    pub weight: f64,
    pub observed: u64,
    pub value: f64,
}

fn shrink(weight: f64, prior_mean: f64, observed: u64) -> f64 {
    let y = observed as f64;
    let value = weight * prior_mean + (1.0 - weight) * y;
    // rounding can push a convex combination a hair outside its endpoints
    value.clamp(prior_mean.min(y), prior_mean.max(y))
}

/// NB-EB: `w = 1 / (1 + alpha mu)`, estimate `w mu + (1 - w) y`.
pub fn nb_eb(mu: f64, alpha: f64, y: u64) -> Result<EbEstimate> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidPrior(format!(
            "NB mean must be positive, got {mu}"
        )));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidPrior(format!(
            "dispersion must be >= 0, got {alpha}"
        )));
    }
    let weight = 1.0 / (1.0 + alpha * mu);
    Ok(EbEstimate {
        method: EbMethod::NbEb,
        prior_mean: mu,
        prior_variance: alpha * mu * mu,
        weight,
        observed: y,
        value: shrink(weight, mu, y),
    })
}

/// CGAN-EB: `w = E / (E + Var)` from generator moments.
pub fn cgan_eb(prior_mean: f64, prior_variance: f64, y: u64) -> Result<EbEstimate> {
    if !(prior_mean > 0.0 && prior_mean.is_finite()) {
        return Err(Error::InvalidPrior(format!(
            "prior mean must be positive, got {prior_mean}"
        )));
    }
    if !(prior_variance >= 0.0 && prior_variance.is_finite()) {
        return Err(Error::InvalidPrior(format!(
            "prior variance must be >= 0, got {prior_variance}"
        )));
    }
    let weight = prior_mean / (prior_mean + prior_variance);
    Ok(EbEstimate {
        method: EbMethod::CganEb,
        prior_mean,
        prior_variance,
        weight,
        observed: y,
        value: shrink(weight, prior_mean, y),
    })
}

/// [`cgan_eb`] with the prior mean raised to [`PRIOR_MEAN_FLOOR`], for moments
/// taken from a generator that can emit all-zero samples.
pub fn cgan_eb_floored(prior_mean: f64, prior_variance: f64, y: u64) -> Result<EbEstimate> {
    cgan_eb(prior_mean.max(PRIOR_MEAN_FLOOR), prior_variance, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nb_examples() {
        let e = nb_eb(2.0, 0.5, 4).unwrap();
        assert_eq!((e.weight, e.value), (0.5, 3.0));
        let e = nb_eb(2.0, 0.0, 17).unwrap();
        assert_eq!((e.weight, e.value), (1.0, 2.0));
        assert_eq!(nb_eb(2.0, 0.5, 2).unwrap().value, 2.0);
        assert!(nb_eb(0.0, 0.5, 2).is_err());
        assert!(nb_eb(1.0, -0.5, 2).is_err());
    }

    #[test]
    fn cgan_examples() {
        let e = cgan_eb(3.0, 0.0, 7).unwrap();
        assert_eq!((e.weight, e.value), (1.0, 3.0));
        let e = cgan_eb(2.0, 2.0, 4).unwrap();
        assert_eq!((e.weight, e.value), (0.5, 3.0));
        assert_eq!(cgan_eb(2.0, 2.0, 2).unwrap().value, 2.0);
        assert!(matches!(cgan_eb(0.0, 1.0, 2), Err(Error::InvalidPrior(_))));
        assert!(cgan_eb(-1.0, 1.0, 2).is_err());
        let e = cgan_eb_floored(0.0, 0.0, 5).unwrap();
        assert_eq!(e.prior_mean, PRIOR_MEAN_FLOOR);
    }

    proptest! {
        #[test]
        fn cgan_bounds(mean in 1e-6f64..200.0, var in 0.0f64..1e4, y in 0u64..500) {
            let e = cgan_eb(mean, var, y).unwrap();
            prop_assert!(e.weight > 0.0 && e.weight <= 1.0);
            prop_assert!(e.value >= mean.min(y as f64) && e.value <= mean.max(y as f64));
            let next = cgan_eb(mean, var, y + 1).unwrap();
            prop_assert!(next.value >= e.value);
        }

        #[test]
        fn cgan_with_nb_moments_is_nb(mu in 1e-3f64..100.0, alpha in 0.0f64..5.0, y in 0u64..300) {
            let nb = nb_eb(mu, alpha, y).unwrap();
            let cg = cgan_eb(mu, alpha * mu * mu, y).unwrap();
            prop_assert!((nb.weight - cg.weight).abs() <= 1e-12);
            prop_assert!((nb.value - cg.value).abs() <= 1e-12 * nb.value.abs().max(1.0));
        }
    }
}
