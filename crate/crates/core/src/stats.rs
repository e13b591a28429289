//! t-based confidence intervals and paired t-tests over replications.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

/// Two-sided 95% critical value of Student's t with 24 degrees of freedom.
pub const T_CRIT_975_DOF24: f64 = 2.063_898_561_628_021;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStat {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

/// Quantile at `prob` of Student's t with `dof` degrees of freedom.
pub fn t_quantile(prob: f64, dof: usize) -> Result<f64> {
    if dof == 0 || !(prob > 0.0 && prob < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "t quantile needs dof >= 1 and prob in (0,1), got dof={dof} prob={prob}"
        )));
    }
    let t =
        StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(t.inverse_cdf(prob))
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Mean with a 95% t interval on `n - 1` degrees of freedom.
pub fn summarize(values: &[f64]) -> Result<SummaryStat> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 values, got {n}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in summary".into()));
    }
    let (mean, sd) = mean_and_sd(values);
    let t = t_quantile(0.975, n - 1)?;
    let half = t * sd / (n as f64).sqrt();
    Ok(SummaryStat {
        mean,
        ci_low: mean - half,
        ci_high: mean + half,
        n,
    })
}

/// Which of the two paired samples has the lower mean, when the test rejects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Better {
    First,
    Second,
    Neither,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    /// `mean(d) / (sd(d) / sqrt(n))` for `d = a - b`; `±inf` when the
    /// differences are constant and nonzero, `0` when they are all zero.
    pub t_stat: f64,
    pub dof: usize,
    pub critical: f64,
    pub significant: bool,
    pub better: Better,
}

/// Two-sided paired t-test of `a` against `b` at level `alpha_level`.
pub fn paired_t_test(a: &[f64], b: &[f64], alpha_level: f64) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "{} vs {} paired values",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 pairs, got {n}"
        )));
    }
    if !(alpha_level > 0.0 && alpha_level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "significance level must lie in (0, 1), got {alpha_level}"
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidInput("non-finite paired difference".into()));
    }
    let dof = n - 1;
    let critical = t_quantile(1.0 - alpha_level / 2.0, dof)?;
    let (mean, sd) = mean_and_sd(&diffs);
    let t_stat = if sd > 0.0 {
        mean / (sd / (n as f64).sqrt())
    } else if mean != 0.0 {
        f64::INFINITY.copysign(mean)
    } else {
        0.0
    };
    let significant = t_stat.abs() > critical;
    let better = match (significant, mean < 0.0) {
        (false, _) => Better::Neither,
        (true, true) => Better::First,
        (true, false) => Better::Second,
    };
    Ok(PairedTTest {
        t_stat,
        dof,
        critical,
        significant,
        better,
    })
}
