//! Poisson-gamma crash data generator.
//!
//! Each site gets four uniform covariates, a mean-one gamma heterogeneity
//! multiplier with variance `alpha`, a true Poisson mean `lambda` and an
//! observed count drawn from `Poisson(lambda)`. With the log-linear mean this
//! is exactly the NB2 model with dispersion `alpha`.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::rng::substream;
use crate::{Error, Result};

pub const N_FEATURES: usize = 4;

/// Slope vector of the log-linear mean, `X1..X4`.
pub const LOGLINEAR_SLOPES: [f64; N_FEATURES] = [0.05, -0.05, 1.0, -1.0];

/// Means below this use inversion, above it transformed rejection.
const POISSON_INVERSION_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FunctionalForm {
    LogLinear,
    LogNonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dispersion_alpha: f64,
    pub intercept_beta0: f64,
    pub functional_form: FunctionalForm,
    pub n_sites: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dispersion_alpha > 0.0 && self.dispersion_alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dispersion alpha must be positive and finite, got {}",
                self.dispersion_alpha
            )));
        }
        if !self.intercept_beta0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "intercept must be finite, got {}",
                self.intercept_beta0
            )));
        }
        if self.n_sites == 0 {
            return Err(Error::InvalidParameter("n_sites must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub features: [f64; N_FEATURES],
    pub true_lambda: f64,
    pub observed_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub sites: Vec<Site>,
    pub config: SimConfig,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn counts(&self) -> Vec<u64> {
        self.sites.iter().map(|s| s.observed_count).collect()
    }

    pub fn true_lambdas(&self) -> Vec<f64> {
        self.sites.iter().map(|s| s.true_lambda).collect()
    }

    pub fn feature_rows(&self) -> Vec<[f64; N_FEATURES]> {
        self.sites.iter().map(|s| s.features).collect()
    }
}

/// Four independent draws on `[0, 1)`.
pub fn sample_uniform_features<R: Rng + ?Sized>(rng: &mut R) -> [f64; N_FEATURES] {
    std::array::from_fn(|_| rng.random::<f64>())
}

/// Log of the crash mean without the heterogeneity term.
pub fn linear_predictor(features: &[f64; N_FEATURES], beta0: f64, form: FunctionalForm) -> f64 {
    let [x1, x2, x3, x4] = *features;
    match form {
        FunctionalForm::LogLinear => beta0 + 0.05 * x1 - 0.05 * x2 + x3 - x4,
        FunctionalForm::LogNonlinear => {
            beta0 + 0.05 * x1.sqrt() - 0.05 * x2.sqrt() + x3 * x3 - x1 * x4
        }
    }
}

/// `exp(linear predictor + epsilon)`.
pub fn mean_function(
    features: &[f64; N_FEATURES],
    beta0: f64,
    epsilon: f64,
    form: FunctionalForm,
) -> f64 {
    (linear_predictor(features, beta0, form) + epsilon).exp()
}

/// Draw `exp(epsilon)` from the gamma law with mean 1 and variance `alpha`
/// (shape `1/alpha`, scale `alpha`).
pub fn sample_heterogeneity<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "heterogeneity variance must be positive and finite, got {alpha}"
        )));
    }
    let gamma = Gamma::new(1.0 / alpha, alpha)
        .map_err(|e| Error::InvalidParameter(format!("gamma(1/{alpha}, {alpha}): {e}")))?;
    Ok(gamma.sample(rng))
}

/// Poisson variate. Inversion by sequential search below a mean of 30, and
/// Hörmann's PTRS transformed rejection above.
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    debug_assert!(lambda >= 0.0 && lambda.is_finite());
    if lambda <= 0.0 {
        return 0;
    }
    if lambda < POISSON_INVERSION_LIMIT {
        poisson_inversion(lambda, rng)
    } else {
        poisson_ptrs(lambda, rng)
    }
}

fn poisson_inversion<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    // the cap only matters when u lands in the last ulp below 1
    while u > cdf && k < 1000 {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
    }
    k
}

fn poisson_ptrs<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
            <= -lambda + k * loglam - ln_gamma(k + 1.0)
        {
            return k as u64;
        }
    }
}

fn simulate_site(config: &SimConfig, index: usize) -> Result<Site> {
    let mut rng = substream(config.seed, index as u64);
    let features = sample_uniform_features(&mut rng);
    let heterogeneity = sample_heterogeneity(config.dispersion_alpha, &mut rng)?;
    let lambda = linear_predictor(&features, config.intercept_beta0, config.functional_form).exp()
        * heterogeneity;
    let observed_count = sample_poisson(lambda, &mut rng);
    Ok(Site {
        features,
        true_lambda: lambda,
        observed_count,
    })
}

/// Generate `config.n_sites` sites. Site `i` only reads substream `i` of
/// `config.seed`, so the output is a pure function of the config.
pub fn simulate_dataset(config: &SimConfig) -> Result<Dataset> {
    config.validate()?;
    let sites = (0..config.n_sites)
        .map(|i| simulate_site(config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        sites,
        config: *config,
    })
}

/// Population mean of the observed counts under the log-linear form:
/// `exp(beta0) * prod_j E[exp(b_j U)]` with `E[exp(bU)] = (e^b - 1) / b`.
pub fn loglinear_population_mean(beta0: f64) -> f64 {
    LOGLINEAR_SLOPES
        .iter()
        .map(|&b| b.exp_m1() / b)
        .product::<f64>()
        * beta0.exp()
}
