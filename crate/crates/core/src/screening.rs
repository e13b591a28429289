//! Hotspot screening metrics.
//!
//! For a cutoff fraction `f` over `n` sites, `R = ceil(f n)`. `H` is the set of
//! the `R` sites with the largest true Poisson means and `X` the `R` sites a
//! method ranks highest. Ties in either ranking go to the lower site index.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Top 2.5%, 5%, 7.5% and 10% of sites.
pub const DEFAULT_CUTOFFS: [f64; 4] = [0.025, 0.05, 0.075, 0.10];

/// Which hotspot set MAPE is averaged over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapeSet {
    /// The method's own top-`R` sites.
    #[default]
    Proposed,
    /// The true top-`R` sites.
    True,
}

impl std::str::FromStr for MapeSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(MapeSet::Proposed),
            "true" => Ok(MapeSet::True),
            other => Err(format!("expected `proposed` or `true`, got `{other}`")),
        }
    }
}

/// Site indices by descending score, ties by ascending index.
pub fn rank_sites(scores: &[f64]) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("no scores to rank".into()));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::InvalidInput(format!("score {i} is NaN")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps index order within ties
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    Ok(order)
}

/// `ceil(fraction * n)`, guarded against representation error in the product.
pub fn hotspot_count(n: usize, cutoff_fraction: f64) -> Result<usize> {
    if !(cutoff_fraction > 0.0 && cutoff_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "cutoff fraction must lie in (0, 1), got {cutoff_fraction}"
        )));
    }
    let r = (cutoff_fraction * n as f64 - 1e-9).ceil() as usize;
    Ok(r.clamp(1, n))
}

/// True and proposed hotspot sets as membership masks.
struct Hotspots {
    r: usize,
    true_top: Vec<usize>,
    proposed_top: Vec<usize>,
    in_proposed: Vec<bool>,
}

fn hotspots(true_lambdas: &[f64], scores: &[f64], cutoff_fraction: f64) -> Result<Hotspots> {
    if true_lambdas.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} true means for {} scores",
            true_lambdas.len(),
            scores.len()
        )));
    }
    let r = hotspot_count(true_lambdas.len(), cutoff_fraction)?;
    let mut true_top = rank_sites(true_lambdas)?;
    true_top.truncate(r);
    let mut proposed_top = rank_sites(scores)?;
    proposed_top.truncate(r);
    let mut in_proposed = vec![false; scores.len()];
    for &i in &proposed_top {
        in_proposed[i] = true;
    }
    Ok(Hotspots {
        r,
        true_top,
        proposed_top,
        in_proposed,
    })
}

/// Share of true hotspots missing from the proposed set, `|H \ X| / R`.
pub fn fi_test(true_lambdas: &[f64], scores: &[f64], cutoff_fraction: f64) -> Result<f64> {
    let h = hotspots(true_lambdas, scores, cutoff_fraction)?;
    let missed = h.true_top.iter().filter(|&&i| !h.in_proposed[i]).count();
    Ok(missed as f64 / h.r as f64)
}

/// Relative shortfall of the proposed set's summed true means,
/// `(sum_H lambda - sum_X lambda) / sum_H lambda`.
pub fn pmd_test(true_lambdas: &[f64], scores: &[f64], cutoff_fraction: f64) -> Result<f64> {
    let h = hotspots(true_lambdas, scores, cutoff_fraction)?;
    let sum_true: f64 = h.true_top.iter().map(|&i| true_lambdas[i]).sum();
    let sum_proposed: f64 = h.proposed_top.iter().map(|&i| true_lambdas[i]).sum();
    if !(sum_true > 0.0) {
        return Err(Error::InvalidInput("true hotspot means sum to zero".into()));
    }
    let pmd = (sum_true - sum_proposed) / sum_true;
    debug_assert!(pmd >= -1e-12, "H maximizes the summed means, got {pmd}");
    Ok(pmd.max(0.0))
}

/// Mean absolute percentage error `|EB - lambda| / lambda` over a hotspot set.
pub fn mape_hotspots(
    true_lambdas: &[f64],
    eb_values: &[f64],
    scores: &[f64],
    cutoff_fraction: f64,
    set: MapeSet,
) -> Result<f64> {
    if eb_values.len() != true_lambdas.len() {
        return Err(Error::Shape(format!(
            "{} EB values for {} true means",
            eb_values.len(),
            true_lambdas.len()
        )));
    }
    let h = hotspots(true_lambdas, scores, cutoff_fraction)?;
    let sites = match set {
        MapeSet::Proposed => &h.proposed_top,
        MapeSet::True => &h.true_top,
    };
    let mut total = 0.0;
    for &i in sites {
        let lambda = true_lambdas[i];
        if !(lambda > 0.0) {
            return Err(Error::InvalidInput(format!(
                "true mean at site {i} must be positive, got {lambda}"
            )));
        }
        total += (eb_values[i] - lambda).abs() / lambda;
    }
    Ok(total / sites.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_examples() {
        assert_eq!(rank_sites(&[1.0, 3.0, 2.0]).unwrap(), [1, 2, 0]);
        assert_eq!(rank_sites(&[4.0; 5]).unwrap(), [0, 1, 2, 3, 4]);
        assert!(rank_sites(&[1.0, f64::NAN]).is_err());
        assert!(rank_sites(&[]).is_err());
    }

    #[test]
    fn hotspot_counts_use_ceiling() {
        assert_eq!(hotspot_count(500, 0.025).unwrap(), 13);
        assert_eq!(hotspot_count(2000, 0.05).unwrap(), 100);
        assert_eq!(hotspot_count(1000, 0.075).unwrap(), 75);
        assert_eq!(hotspot_count(1000, 0.10).unwrap(), 100);
        assert_eq!(hotspot_count(8, 0.5).unwrap(), 4);
        assert_eq!(hotspot_count(3, 0.01).unwrap(), 1);
        assert!(hotspot_count(10, 0.0).is_err());
        assert!(hotspot_count(10, 1.0).is_err());
    }

    #[test]
    fn fi_examples() {
        let lambdas: Vec<f64> = (0..20).map(|i| 1.0 + i as f64).collect();
        let proportional: Vec<f64> = lambdas.iter().map(|l| 3.0 * l).collect();
        assert_eq!(fi_test(&lambdas, &proportional, 0.25).unwrap(), 0.0);

        // H = {s1..s4}, X = {s1, s2, s5, s6}
        let lambdas = [8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0];
        let scores = [9.0, 8.0, 0.0, 0.0, 7.0, 6.0, 0.0, 0.0];
        assert_eq!(fi_test(&lambdas, &scores, 0.5).unwrap(), 0.5);

        let lambdas: Vec<f64> = (0..100).map(|i| 1.0 + i as f64).collect();
        let reversed: Vec<f64> = lambdas.iter().map(|l| -l).collect();
        assert_eq!(fi_test(&lambdas, &reversed, 0.1).unwrap(), 1.0);

        assert!(fi_test(&[1.0, 2.0], &[1.0], 0.5).is_err());
    }

    #[test]
    fn pmd_examples() {
        let lambdas = [10.0, 9.0, 8.0, 5.0, 1.0, 1.0];
        let perfect = lambdas;
        assert_eq!(pmd_test(&lambdas, &perfect, 0.5).unwrap(), 0.0);
        // H lambdas (10, 9, 8), X lambdas (10, 8, 5)
        let scores = [6.0, 0.0, 5.0, 4.0, 1.0, 1.0];
        let pmd = pmd_test(&lambdas, &scores, 0.5).unwrap();
        assert!((pmd - 4.0 / 27.0).abs() < 1e-15);
        assert!((pmd - 0.14815).abs() < 1e-5);
    }

    #[test]
    fn mape_examples() {
        let lambdas = [4.0, 1.0, 2.0, 3.0];
        assert_eq!(
            mape_hotspots(&lambdas, &lambdas, &lambdas, 0.5, MapeSet::Proposed).unwrap(),
            0.0
        );
        let eb = [5.0, 1.0, 2.0, 3.0];
        assert_eq!(
            mape_hotspots(&lambdas, &eb, &eb, 0.25, MapeSet::Proposed).unwrap(),
            0.25
        );
        let zeros = [0.0; 4];
        assert_eq!(
            mape_hotspots(&lambdas, &zeros, &lambdas, 0.5, MapeSet::Proposed).unwrap(),
            1.0
        );
    }

    #[test]
    fn mape_set_selects_sites() {
        let lambdas = [4.0, 1.0];
        let eb = [4.0, 2.0];
        let scores = [0.0, 1.0];
        // proposed top-1 is site 1 (error 1.0); true top-1 is site 0 (error 0)
        assert_eq!(
            mape_hotspots(&lambdas, &eb, &scores, 0.5, MapeSet::Proposed).unwrap(),
            1.0
        );
        assert_eq!(
            mape_hotspots(&lambdas, &eb, &scores, 0.5, MapeSet::True).unwrap(),
            0.0
        );
        assert_eq!("true".parse::<MapeSet>().unwrap(), MapeSet::True);
        assert!("both".parse::<MapeSet>().is_err());
    }
}
