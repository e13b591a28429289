//! Negative binomial safety performance function.
//!
//! Fitting is two-stage: a Poisson log-link GLM solved by IRLS gives the
//! coefficients, then a no-intercept auxiliary OLS regression of
//! `((y - mu)^2 - y) / mu` on `mu` gives the dispersion `alpha`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::sim::Dataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    /// Stop once the largest absolute coefficient change is below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbFit {
    /// Intercept followed by one slope per feature, on the log scale.
    pub coefficients: Vec<f64>,
    pub dispersion_alpha_hat: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Poisson log-likelihood at the final coefficients.
    pub log_likelihood: f64,
    /// Log-likelihood after each accepted IRLS step, starting at the initial point.
    pub log_likelihood_trace: Vec<f64>,
}

impl NbFit {
    pub fn n_features(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn predict_mu(&self, features: &[f64]) -> f64 {
        predict_mu(self, features)
    }
}

/// `exp(b0 + sum_j b_j x_j)`.
pub fn predict_mu(fit: &NbFit, features: &[f64]) -> f64 {
    debug_assert_eq!(features.len() + 1, fit.coefficients.len());
    linear_predictor(&fit.coefficients, features).exp()
}

fn linear_predictor(coefficients: &[f64], features: &[f64]) -> f64 {
    coefficients[0]
        + coefficients[1..]
            .iter()
            .zip(features)
            .map(|(b, x)| b * x)
            .sum::<f64>()
}

fn poisson_log_likelihood(rows: &[&[f64]], counts: &[u64], coefficients: &[f64]) -> f64 {
    rows.iter()
        .zip(counts)
        .map(|(x, &y)| {
            let eta = linear_predictor(coefficients, x);
            let y = y as f64;
            y * eta - eta.exp() - ln_gamma(y + 1.0)
        })
        .sum()
}

/// Poisson GLM with log link on raw feature rows (an intercept is added).
///
/// IRLS with step halving, so the log-likelihood never decreases between
/// accepted iterates. Starts from slopes at zero and intercept `ln(mean y)`.
pub fn fit_poisson_design<X: AsRef<[f64]>>(
    rows: &[X],
    counts: &[u64],
    options: IrlsOptions,
) -> Result<NbFit> {
    let n = rows.len();
    if counts.len() != n {
        return Err(Error::Shape(format!(
            "{n} feature rows but {} counts",
            counts.len()
        )));
    }
    let rows: Vec<&[f64]> = rows.iter().map(|r| r.as_ref()).collect();
    let n_features = rows.first().map_or(0, |r| r.len());
    if let Some(bad) = rows.iter().position(|r| r.len() != n_features) {
        return Err(Error::Shape(format!(
            "row {bad} has {} features, expected {n_features}",
            rows[bad].len()
        )));
    }
    let p = n_features + 1;
    if n < p + 1 {
        return Err(Error::InvalidInput(format!(
            "{n} observations for {p} coefficients"
        )));
    }
    if !(options.tol > 0.0) || options.max_iter == 0 {
        return Err(Error::InvalidParameter(
            "IRLS needs tol > 0 and max_iter >= 1".into(),
        ));
    }
    if rows.iter().flat_map(|r| r.iter()).any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature value".into()));
    }
    let mean_y = counts.iter().sum::<u64>() as f64 / n as f64;
    if mean_y == 0.0 {
        return Err(Error::InvalidInput(
            "all counts are zero; the Poisson intercept has no finite maximizer".into(),
        ));
    }

    let mut beta = vec![0.0; p];
    beta[0] = mean_y.ln();
    let mut ll = poisson_log_likelihood(&rows, counts, &beta);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iter {
        iterations += 1;
        let target = weighted_least_squares_step(&rows, counts, &beta)?;
        let step: Vec<f64> = target.iter().zip(&beta).map(|(t, b)| t - b).collect();

        let mut scale = 1.0;
        let (candidate, candidate_ll) = loop {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let cand_ll = poisson_log_likelihood(&rows, counts, &cand);
            if cand_ll.is_finite() && cand_ll >= ll {
                break (cand, cand_ll);
            }
            scale *= 0.5;
            // at the optimum the likelihood change is pure roundoff
            if scale < 1e-10 {
                break (beta.clone(), ll);
            }
        };

        let max_change = candidate
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        beta = candidate;
        ll = candidate_ll;
        trace.push(ll);
        if max_change < options.tol {
            converged = true;
            break;
        }
    }

    Ok(NbFit {
        coefficients: beta,
        dispersion_alpha_hat: 0.0,
        converged,
        iterations,
        log_likelihood: ll,
        log_likelihood_trace: trace,
    })
}

/// Solve `(X'WX) b = X'Wz` for the IRLS working response at `beta`.
fn weighted_least_squares_step(rows: &[&[f64]], counts: &[u64], beta: &[f64]) -> Result<Vec<f64>> {
    let p = beta.len();
    let mut xtwx = DMatrix::<f64>::zeros(p, p);
    let mut xtwz = DVector::<f64>::zeros(p);
    let mut design = vec![1.0; p];
    for (x, &y) in rows.iter().zip(counts) {
        design[1..].copy_from_slice(x);
        let eta = linear_predictor(beta, x);
        let mu = eta.exp();
        let z = eta + (y as f64 - mu) / mu;
        for i in 0..p {
            let wi = mu * design[i];
            xtwz[i] += wi * z;
            for j in 0..=i {
                xtwx[(i, j)] += wi * design[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            xtwx[(j, i)] = xtwx[(i, j)];
        }
    }

    let max_diag = (0..p).map(|i| xtwx[(i, i)]).fold(0.0, f64::max);
    if let Some(col) = (0..p).find(|&i| xtwx[(i, i)] <= 1e-12 * max_diag) {
        return Err(Error::RankDeficient(format!(
            "column {col} carries no weighted information"
        )));
    }
    let chol = xtwx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("weighted normal equations are singular".into()))?;
    // relative pivot check catches collinear columns that survive factorization
    let l = chol.l_dirty();
    for i in 0..p {
        if l[(i, i)] * l[(i, i)] <= 1e-12 * xtwx[(i, i)] {
            return Err(Error::RankDeficient(format!(
                "column {i} is (nearly) a combination of the preceding columns"
            )));
        }
    }
    Ok(chol.solve(&xtwz).iter().copied().collect())
}

/// Poisson GLM coefficients for a simulated dataset; `alpha_hat` is left at 0.
pub fn fit_poisson_glm(dataset: &Dataset, tol: f64, max_iter: usize) -> Result<NbFit> {
    fit_poisson_design(
        &dataset.feature_rows(),
        &dataset.counts(),
        IrlsOptions { tol, max_iter },
    )
}

/// No-constant OLS slope of `z_i = ((y_i - mu_i)^2 - y_i) / mu_i` on `mu_i`,
/// clamped at zero.
pub fn aux_ols_dispersion(counts: &[u64], fitted_mu: &[f64]) -> Result<f64> {
    if counts.len() != fitted_mu.len() {
        return Err(Error::Shape(format!(
            "{} counts but {} fitted means",
            counts.len(),
            fitted_mu.len()
        )));
    }
    if counts.is_empty() {
        return Err(Error::InvalidInput("no observations".into()));
    }
    if let Some(bad) = fitted_mu.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "fitted means must be positive and finite, got {bad}"
        )));
    }
    let (num, den) = counts
        .iter()
        .zip(fitted_mu)
        .fold((0.0, 0.0), |(num, den), (&y, &mu)| {
            let y = y as f64;
            let z = ((y - mu).powi(2) - y) / mu;
            (num + z * mu, den + mu * mu)
        });
    Ok((num / den).max(0.0))
}

pub fn estimate_dispersion_aux_ols(dataset: &Dataset, fitted_mu: &[f64]) -> Result<f64> {
    aux_ols_dispersion(&dataset.counts(), fitted_mu)
}

/// Both stages: Poisson IRLS coefficients, then auxiliary-OLS dispersion.
pub fn fit_nb(dataset: &Dataset, options: IrlsOptions) -> Result<NbFit> {
    let mut fit = fit_poisson_glm(dataset, options.tol, options.max_iter)?;
    let mu: Vec<f64> = dataset
        .sites
        .iter()
        .map(|s| fit.predict_mu(&s.features))
        .collect();
    fit.dispersion_alpha_hat = estimate_dispersion_aux_ols(dataset, &mu)?;
    Ok(fit)
}

/// `ln Γ(y + r) - ln Γ(r) + y ln α` for `r = 1/α`, which equals
/// `sum_{j<y} ln(1 + j α)`. The product form is exact for tiny `alpha`,
/// where the gamma-function difference would cancel catastrophically.
fn ln_rising_scaled(y: u64, alpha: f64) -> f64 {
    if y <= 10_000 {
        (0..y).map(|j| (j as f64 * alpha).ln_1p()).sum()
    } else {
        let r = 1.0 / alpha;
        ln_gamma(y as f64 + r) - ln_gamma(r) + y as f64 * alpha.ln()
    }
}

/// Log of the NB2 pmf with mean `mu` and variance `mu + alpha mu^2`.
pub fn nb_ln_pmf(y: u64, mu: f64, alpha: f64) -> Result<f64> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "mean must be positive, got {mu}"
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "NB dispersion must be positive (use poisson_pmf for alpha = 0), got {alpha}"
        )));
    }
    let yf = y as f64;
    Ok(ln_rising_scaled(y, alpha) + yf * mu.ln()
        - ln_gamma(yf + 1.0)
        - (yf + 1.0 / alpha) * (alpha * mu).ln_1p())
}

/// NB2 probability mass
/// `Γ(y+1/α) / (Γ(1/α) y!) (αμ/(1+αμ))^y (1/(1+αμ))^(1/α)`.
pub fn nb_pmf(y: u64, mu: f64, alpha: f64) -> Result<f64> {
    nb_ln_pmf(y, mu, alpha).map(f64::exp)
}

pub fn poisson_pmf(y: u64, mu: f64) -> f64 {
    let yf = y as f64;
    (yf * mu.ln() - mu - ln_gamma(yf + 1.0)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_dataset, FunctionalForm, SimConfig};

    fn sim(alpha: f64, n: usize, seed: u64) -> Dataset {
        simulate_dataset(&SimConfig {
            dispersion_alpha: alpha,
            intercept_beta0: 0.5,
            functional_form: FunctionalForm::LogLinear,
            n_sites: n,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn constant_counts_give_log_intercept() {
        let rows: Vec<Vec<f64>> = vec![vec![]; 10];
        let fit = fit_poisson_design(&rows, &[3; 10], IrlsOptions::default()).unwrap();
        assert_eq!(fit.coefficients.len(), 1);
        assert!((fit.coefficients[0] - 3f64.ln()).abs() < 1e-12);
        assert!(fit.converged);
    }

    #[test]
    fn zero_column_is_rank_deficient() {
        let rows: Vec<[f64; 2]> = (0..20).map(|i| [i as f64 / 20.0, 0.0]).collect();
        let counts: Vec<u64> = (0..20).map(|i| (i % 4) as u64 + 1).collect();
        let err = fit_poisson_design(&rows, &counts, IrlsOptions::default()).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)), "{err}");
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let rows: Vec<[f64; 2]> = (0..20)
            .map(|i| [i as f64 / 20.0, i as f64 / 20.0])
            .collect();
        let counts: Vec<u64> = (0..20).map(|i| (i % 4) as u64 + 1).collect();
        let err = fit_poisson_design(&rows, &counts, IrlsOptions::default()).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)), "{err}");
    }

    #[test]
    fn too_few_sites_and_all_zero_counts_are_rejected() {
        let ds = sim(0.5, 5, 1);
        assert!(fit_poisson_glm(&ds, 1e-8, 100).is_err());
        let rows = vec![[0.1], [0.2], [0.3]];
        assert!(fit_poisson_design(&rows, &[0, 0, 0], IrlsOptions::default()).is_err());
    }

    #[test]
    fn recovers_simulator_coefficients_with_monotone_likelihood() {
        // intercept sampling sd is about 0.035 at this size
        for seed in 0..4 {
            let ds = sim(0.5, 20_000, seed);
            let fit = fit_nb(&ds, IrlsOptions::default()).unwrap();
            assert!(fit.converged);
            let truth = [0.5, 0.05, -0.05, 1.0, -1.0];
            for (b, t) in fit.coefficients.iter().zip(truth) {
                assert!((b - t).abs() < 0.1, "seed {seed}: {:?}", fit.coefficients);
            }
            assert!((fit.dispersion_alpha_hat - 0.5).abs() <= 0.5 * 0.1 + 0.05);
            for w in fit.log_likelihood_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-10, "{:?}", fit.log_likelihood_trace);
            }
        }
    }

    #[test]
    fn recovers_high_dispersion() {
        let ds = sim(1.5, 20_000, 31);
        let fit = fit_nb(&ds, IrlsOptions::default()).unwrap();
        assert!(
            (fit.dispersion_alpha_hat - 1.5).abs() < 0.15,
            "{}",
            fit.dispersion_alpha_hat
        );
    }

    #[test]
    fn non_convergence_is_flagged_not_raised() {
        let ds = sim(0.5, 500, 3);
        let fit = fit_poisson_glm(&ds, 1e-300, 2).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 2);
    }

    #[test]
    fn aux_ols_examples() {
        assert!((aux_ols_dispersion(&[3, 1], &[1.0, 2.0]).unwrap() - 0.2).abs() < 1e-15);
        // (y - mu)^2 == y at every site
        assert_eq!(
            aux_ols_dispersion(&[4, 1, 9], &[2.0, 2.0, 6.0]).unwrap(),
            0.0
        );
        // underdispersed data clamps at zero
        assert_eq!(
            aux_ols_dispersion(&[2, 2, 2], &[2.0, 2.0, 2.0]).unwrap(),
            0.0
        );
        assert!(aux_ols_dispersion(&[1], &[0.0]).is_err());
        assert!(aux_ols_dispersion(&[1, 2], &[1.0]).is_err());
    }

    #[test]
    fn predict_mu_examples() {
        let fit = |c: Vec<f64>| NbFit {
            coefficients: c,
            dispersion_alpha_hat: 0.0,
            converged: true,
            iterations: 0,
            log_likelihood: 0.0,
            log_likelihood_trace: vec![],
        };
        let f = fit(vec![0.5, 0.05, -0.05, 1.0, -1.0]);
        assert!((f.predict_mu(&[0.0; 4]) - 0.5f64.exp()).abs() < 1e-15);
        assert!((f.predict_mu(&[1.0; 4]) - 1.64872).abs() < 1e-5);
        assert_eq!(fit(vec![0.0; 5]).predict_mu(&[0.3, 0.2, 0.9, 0.4]), 1.0);
    }

    #[test]
    fn pmf_examples() {
        assert!((nb_pmf(0, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-14);
        assert!((nb_pmf(2, 1.0, 1.0).unwrap() - 0.125).abs() < 1e-14);
        let total: f64 = (0..=500).map(|y| nb_pmf(y, 12.0, 1.5).unwrap()).sum();
        assert!(total > 0.999, "{total}");
        assert!(nb_pmf(1, 1.0, 0.0).is_err());
        assert!(nb_pmf(1, 0.0, 1.0).is_err());
    }

    #[test]
    fn pmf_approaches_poisson() {
        for mu in [0.5, 1.5, 12.0] {
            for y in 0..60 {
                let nb = nb_pmf(y, mu, 1e-8).unwrap();
                assert!((nb - poisson_pmf(y, mu)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn pmf_large_count_branch_is_continuous() {
        // both evaluation routes agree at the switch point
        let alpha = 0.7;
        let exact: f64 = (0..10_001u64).map(|j| (j as f64 * alpha).ln_1p()).sum();
        let r = 1.0 / alpha;
        let gamma_route = ln_gamma(10_001.0 + r) - ln_gamma(r) + 10_001.0 * alpha.ln();
        assert!((exact - gamma_route).abs() / exact.abs() < 1e-10);
    }
}
