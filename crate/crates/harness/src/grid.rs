//! Experiment specifications and the built-in grid.
//!
//! E1-E12 cross dispersion `alpha in {0.5, 1.5}` and intercept
//! `beta0 in {0.5, 2.5}` with `n in {2000, 1000, 500}`, numbered along rows of
//! sample size. F5-F8 repeat E5-E8 with the nonlinear mean function.

use std::path::Path;

use ebscreen_core::cgan::CganConfig;
use ebscreen_core::screening::{MapeSet, DEFAULT_CUTOFFS};
use ebscreen_core::sim::{FunctionalForm, SimConfig};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

pub const DEFAULT_MASTER_SEED: u64 = 20_210_505;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub id: String,
    pub alpha: f64,
    pub beta0: f64,
    pub n_sites: usize,
    pub functional_form: FunctionalForm,
    pub n_train_sets: usize,
    pub n_test_sets_per_train: usize,
    pub cutoffs: Vec<f64>,
    pub cgan_config: CganConfig,
    pub m_samples: usize,
    pub master_seed: u64,
    pub mape_set: MapeSet,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            id: "custom".into(),
            alpha: 0.5,
            beta0: 0.5,
            n_sites: 2000,
            functional_form: FunctionalForm::LogLinear,
            n_train_sets: 5,
            n_test_sets_per_train: 5,
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            cgan_config: CganConfig::default(),
            m_samples: 500,
            master_seed: DEFAULT_MASTER_SEED,
            mape_set: MapeSet::Proposed,
        }
    }
}

impl ExperimentSpec {
    pub fn replications(&self) -> usize {
        self.n_train_sets * self.n_test_sets_per_train
    }

    /// Simulation settings for one dataset; the seed is supplied by the runner.
    pub fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            dispersion_alpha: self.alpha,
            intercept_beta0: self.beta0,
            functional_form: self.functional_form,
            n_sites: self.n_sites,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Spec(format!("{}: {msg}", self.id)));
        if self.id.is_empty() {
            return bad("empty experiment id".into());
        }
        if self.n_train_sets == 0 || self.n_test_sets_per_train == 0 {
            return bad("need at least one train and one test set".into());
        }
        if self.m_samples < 2 {
            return bad(format!("m_samples must be >= 2, got {}", self.m_samples));
        }
        if self.cutoffs.is_empty() {
            return bad("no cutoffs".into());
        }
        if let Some(c) = self.cutoffs.iter().find(|c| !(**c > 0.0 && **c < 1.0)) {
            return bad(format!("cutoff {c} outside (0, 1)"));
        }
        self.sim_config(0).validate()?;
        self.cgan_config.validate()?;
        Ok(())
    }

    /// Reads a spec from `.json` or `.toml`; fields left out take defaults.
    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let spec: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?,
            Some("toml") => toml::from_str(&text)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?,
            _ => {
                return Err(HarnessError::Config(format!(
                    "{}: expected a .json or .toml file",
                    path.display()
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes to TOML")
    }
}

fn experiment(
    id: &str,
    alpha: f64,
    beta0: f64,
    n_sites: usize,
    form: FunctionalForm,
) -> ExperimentSpec {
    ExperimentSpec {
        id: id.into(),
        alpha,
        beta0,
        n_sites,
        functional_form: form,
        ..ExperimentSpec::default()
    }
}

pub fn builtin_grid() -> Vec<ExperimentSpec> {
    let mut grid = Vec::with_capacity(16);
    let mut k = 1;
    for n in [2000, 1000, 500] {
        for alpha in [0.5, 1.5] {
            for beta0 in [0.5, 2.5] {
                grid.push(experiment(
                    &format!("E{k}"),
                    alpha,
                    beta0,
                    n,
                    FunctionalForm::LogLinear,
                ));
                k += 1;
            }
        }
    }
    for k in 5..=8 {
        let e = &grid[k - 1];
        grid.push(experiment(
            &format!("F{k}"),
            e.alpha,
            e.beta0,
            e.n_sites,
            FunctionalForm::LogNonlinear,
        ));
    }
    grid
}

pub fn find_experiment(id: &str) -> Option<ExperimentSpec> {
    builtin_grid()
        .into_iter()
        .find(|e| e.id.eq_ignore_ascii_case(id))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(id: &str) -> (f64, f64, usize, FunctionalForm) {
        let e = find_experiment(id).unwrap();
        (e.alpha, e.beta0, e.n_sites, e.functional_form)
    }

    #[test]
    fn table_cells() {
        use FunctionalForm::*;
        assert_eq!(settings("E1"), (0.5, 0.5, 2000, LogLinear));
        assert_eq!(settings("E12"), (1.5, 2.5, 500, LogLinear));
        assert_eq!(settings("F7"), (1.5, 0.5, 1000, LogNonlinear));
        assert_eq!(settings("E6"), (0.5, 2.5, 1000, LogLinear));
        assert_eq!(settings("E9"), (0.5, 0.5, 500, LogLinear));
        assert!(find_experiment("E13").is_none());
    }

    #[test]
    fn grid_defaults_follow_protocol() {
        let grid = builtin_grid();
        assert_eq!(grid.len(), 16);
        for e in &grid {
            assert_eq!(e.replications(), 25);
            assert_eq!(e.cutoffs, DEFAULT_CUTOFFS);
            assert_eq!(e.m_samples, 500);
            assert_eq!(e.cgan_config, CganConfig::default());
            e.validate().unwrap();
        }
        for k in 5..=8 {
            let (a, b) = (&grid[k - 1], &grid[k + 7]);
            assert_eq!((a.alpha, a.beta0, a.n_sites), (b.alpha, b.beta0, b.n_sites));
        }
    }

    #[test]
    fn config_round_trips() {
        let spec = find_experiment("F7").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("f7.toml");
        std::fs::write(&toml_path, spec.to_toml()).unwrap();
        assert_eq!(ExperimentSpec::from_path(&toml_path).unwrap(), spec);
        let json_path = dir.path().join("f7.json");
        std::fs::write(&json_path, serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(ExperimentSpec::from_path(&json_path).unwrap(), spec);
    }

    #[test]
    fn partial_config_takes_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        std::fs::write(
            &path,
            "id = \"small\"\nn_sites = 300\n\n[cgan_config]\nepochs = 20\n",
        )
        .unwrap();
        let spec = ExperimentSpec::from_path(&path).unwrap();
        assert_eq!((spec.n_sites, spec.cgan_config.epochs), (300, 20));
        assert_eq!(spec.cgan_config.batch_size, 100);
        assert_eq!(spec.n_train_sets, 5);

        std::fs::write(&path, "id = \"x\"\ncutoffs = [0.0]\n").unwrap();
        assert!(ExperimentSpec::from_path(&path).is_err());
        std::fs::write(&path, "id = \"x\"\nbogus = 1\n").unwrap();
        assert!(ExperimentSpec::from_path(&path).is_err());
    }
}
