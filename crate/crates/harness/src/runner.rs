//! The replication protocol for one experiment.
//!
//! For each of `n_train_sets` training sets: simulate, fit the NB model
//! (coefficients, then dispersion), train a CGAN. Each trained pair scores
//! `n_test_sets_per_train` fresh test sets of the same size, and every test
//! set yields FI, PMD and MAPE per method and cutoff.
//!
//! Seeds. With `e = derive_seed(master_seed, [fnv1a(id)])`:
//!
//! ```text
//! training data   derive_seed(e, [1, t])
//! CGAN init+SGD   derive_seed(e, [2, t])
//! test data       derive_seed(e, [3, t, s])
//! CGAN sampling   derive_seed(e, [4, t, s]), site i on ChaCha stream i
//! ```
//!
//! Nothing is drawn from a shared generator, so the results do not depend on
//! execution order or thread count.

use std::time::Instant;

use ebscreen_core::cgan::{self, CganModel};
use ebscreen_core::eb::{cgan_eb_floored, nb_eb, EbMethod};
use ebscreen_core::nb_glm::{fit_nb, IrlsOptions, NbFit};
use ebscreen_core::rng::{derive_seed, label_from_str, substream};
use ebscreen_core::screening::{fi_test, mape_hotspots, pmd_test};
use ebscreen_core::sim::{simulate_dataset, Dataset};
use ebscreen_core::stats::{paired_t_test, summarize, Better};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::grid::ExperimentSpec;
use crate::HarnessError;

pub const METHODS: [EbMethod; 2] = [EbMethod::NbEb, EbMethod::CganEb];
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

const PHASE_TRAIN_DATA: u64 = 1;
const PHASE_CGAN_TRAIN: u64 = 2;
const PHASE_TEST_DATA: u64 = 3;
const PHASE_CGAN_SAMPLE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Fi,
    Pmd,
    Mape,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Fi, Metric::Pmd, Metric::Mape];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Fi => "fi",
            Metric::Pmd => "pmd",
            Metric::Mape => "mape",
        }
    }
}

/// One line of `replications.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub experiment_id: String,
    pub train_idx: usize,
    pub test_idx: usize,
    pub method: String,
    pub cutoff: f64,
    pub fi: f64,
    pub pmd: f64,
    pub mape: f64,
}

impl ReplicationRow {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Fi => self.fi,
            Metric::Pmd => self.pmd,
            Metric::Mape => self.mape,
        }
    }
}

/// One line of `summary.csv`. The interval is left empty below two values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment_id: String,
    pub method: String,
    pub cutoff: f64,
    pub metric: String,
    pub mean: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n: usize,
}

/// One line of `tests.csv`: CGAN-EB against NB-EB, paired by replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub experiment_id: String,
    pub cutoff: f64,
    pub metric: String,
    pub t_stat: f64,
    pub dof: usize,
    pub significant: bool,
    /// Method with the lower mean error when significant, else `none`.
    pub better_method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub train_idx: usize,
    /// `None` when the training stage failed and took all its test sets down.
    pub test_idx: Option<usize>,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_secs: f64,
    pub nb_fit_secs: Vec<f64>,
    pub cgan_train_secs: Vec<f64>,
    pub scoring_secs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub rows: Vec<ReplicationRow>,
    pub summaries: Vec<SummaryRow>,
    pub tests: Vec<TestRow>,
    pub failures: Vec<ReplicationFailure>,
    pub expected_replications: usize,
    pub completed_replications: usize,
    pub timings: Timings,
}

impl ExperimentReport {
    pub fn is_partial(&self) -> bool {
        self.completed_replications < self.expected_replications
    }
}

fn experiment_seed(spec: &ExperimentSpec) -> u64 {
    derive_seed(spec.master_seed, &[label_from_str(&spec.id)])
}

pub fn train_data_seed(spec: &ExperimentSpec, train_idx: usize) -> u64 {
    derive_seed(experiment_seed(spec), &[PHASE_TRAIN_DATA, train_idx as u64])
}

pub fn cgan_seed(spec: &ExperimentSpec, train_idx: usize) -> u64 {
    derive_seed(experiment_seed(spec), &[PHASE_CGAN_TRAIN, train_idx as u64])
}

pub fn test_data_seed(spec: &ExperimentSpec, train_idx: usize, test_idx: usize) -> u64 {
    derive_seed(
        experiment_seed(spec),
        &[PHASE_TEST_DATA, train_idx as u64, test_idx as u64],
    )
}

pub fn sampling_seed(spec: &ExperimentSpec, train_idx: usize, test_idx: usize) -> u64 {
    derive_seed(
        experiment_seed(spec),
        &[PHASE_CGAN_SAMPLE, train_idx as u64, test_idx as u64],
    )
}

struct Trained {
    nb: NbFit,
    cgan: CganModel,
    nb_secs: f64,
    cgan_secs: f64,
}

fn train_models(spec: &ExperimentSpec, train_idx: usize) -> Result<Trained, HarnessError> {
    let data = simulate_dataset(&spec.sim_config(train_data_seed(spec, train_idx)))?;
    let start = Instant::now();
    let nb = fit_nb(&data, IrlsOptions::default())?;
    if !nb.converged {
        warn!(experiment = %spec.id, train_idx, "NB fit hit the iteration limit");
    }
    let nb_secs = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let config = cgan::CganConfig {
        seed: cgan_seed(spec, train_idx),
        ..spec.cgan_config
    };
    let cgan = cgan::train(&data, &config)?;
    let cgan_secs = start.elapsed().as_secs_f64();
    info!(
        experiment = %spec.id, train_idx, alpha_hat = nb.dispersion_alpha_hat,
        nb_secs, cgan_secs, "trained"
    );
    Ok(Trained {
        nb,
        cgan,
        nb_secs,
        cgan_secs,
    })
}

/// EB estimates for every site of `test`, per method in [`METHODS`] order.
pub fn eb_values(
    nb: &NbFit,
    model: &CganModel,
    test: &Dataset,
    m_samples: usize,
    sample_seed: u64,
) -> Result<[Vec<f64>; 2], HarnessError> {
    let mut nb_values = Vec::with_capacity(test.len());
    let mut cgan_values = Vec::with_capacity(test.len());
    for (i, site) in test.sites.iter().enumerate() {
        let mu = nb.predict_mu(&site.features);
        nb_values.push(nb_eb(mu, nb.dispersion_alpha_hat, site.observed_count)?.value);
        let mut rng = substream(sample_seed, i as u64);
        let (mean, var) = model.predictive_moments(&site.features, m_samples, &mut rng)?;
        cgan_values.push(cgan_eb_floored(mean, var, site.observed_count)?.value);
    }
    Ok([nb_values, cgan_values])
}

fn score_replication(
    spec: &ExperimentSpec,
    trained: &Trained,
    train_idx: usize,
    test_idx: usize,
) -> Result<Vec<ReplicationRow>, HarnessError> {
    let test = simulate_dataset(&spec.sim_config(test_data_seed(spec, train_idx, test_idx)))?;
    let values = eb_values(
        &trained.nb,
        &trained.cgan,
        &test,
        spec.m_samples,
        sampling_seed(spec, train_idx, test_idx),
    )?;
    let lambdas = test.true_lambdas();
    let mut rows = Vec::with_capacity(METHODS.len() * spec.cutoffs.len());
    for (method, scores) in METHODS.iter().zip(&values) {
        for &cutoff in &spec.cutoffs {
            rows.push(ReplicationRow {
                experiment_id: spec.id.clone(),
                train_idx,
                test_idx,
                method: method.label().to_string(),
                cutoff,
                fi: fi_test(&lambdas, scores, cutoff)?,
                pmd: pmd_test(&lambdas, scores, cutoff)?,
                mape: mape_hotspots(&lambdas, scores, scores, cutoff, spec.mape_set)?,
            });
        }
    }
    Ok(rows)
}

/// Outcome of one training set and its test sets.
struct TrainOutcome {
    rows: Vec<ReplicationRow>,
    failures: Vec<ReplicationFailure>,
    completed: usize,
    nb_secs: Option<f64>,
    cgan_secs: Option<f64>,
    scoring_secs: Vec<f64>,
}

fn run_train_set(spec: &ExperimentSpec, train_idx: usize) -> TrainOutcome {
    let trained = match train_models(spec, train_idx) {
        Ok(t) => t,
        Err(e) => {
            warn!(experiment = %spec.id, train_idx, error = %e, "training failed");
            return TrainOutcome {
                rows: vec![],
                failures: vec![ReplicationFailure {
                    train_idx,
                    test_idx: None,
                    error: e.to_string(),
                }],
                completed: 0,
                nb_secs: None,
                cgan_secs: None,
                scoring_secs: vec![],
            };
        }
    };
    let scored: Vec<(usize, Result<Vec<ReplicationRow>, HarnessError>, f64)> = (0..spec
        .n_test_sets_per_train)
        .into_par_iter()
        .map(|test_idx| {
            let start = Instant::now();
            let r = score_replication(spec, &trained, train_idx, test_idx);
            (test_idx, r, start.elapsed().as_secs_f64())
        })
        .collect();
    let mut out = TrainOutcome {
        rows: vec![],
        failures: vec![],
        completed: 0,
        nb_secs: Some(trained.nb_secs),
        cgan_secs: Some(trained.cgan_secs),
        scoring_secs: vec![],
    };
    for (test_idx, result, secs) in scored {
        out.scoring_secs.push(secs);
        match result {
            Ok(rows) => {
                out.rows.extend(rows);
                out.completed += 1;
            }
            Err(e) => {
                warn!(experiment = %spec.id, train_idx, test_idx, error = %e, "replication failed");
                out.failures.push(ReplicationFailure {
                    train_idx,
                    test_idx: Some(test_idx),
                    error: e.to_string(),
                });
            }
        }
    }
    out
}

/// Runs every replication of `spec` on a pool of `threads` workers.
///
/// A failing replication is logged and recorded in `failures`; the report is
/// then partial but still aggregated over what completed.
pub fn run_experiment(
    spec: &ExperimentSpec,
    threads: usize,
) -> Result<ExperimentReport, HarnessError> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| HarnessError::Spec(format!("thread pool: {e}")))?;
    let start = Instant::now();
    info!(experiment = %spec.id, replications = spec.replications(), threads, "starting");
    let outcomes: Vec<TrainOutcome> = pool.install(|| {
        (0..spec.n_train_sets)
            .into_par_iter()
            .map(|t| run_train_set(spec, t))
            .collect()
    });

    let mut rows = vec![];
    let mut failures = vec![];
    let mut completed = 0;
    let mut timings = Timings::default();
    for o in outcomes {
        rows.extend(o.rows);
        failures.extend(o.failures);
        completed += o.completed;
        timings.nb_fit_secs.extend(o.nb_secs);
        timings.cgan_train_secs.extend(o.cgan_secs);
        timings.scoring_secs.extend(o.scoring_secs);
    }
    timings.total_secs = start.elapsed().as_secs_f64();
    let (summaries, tests) = aggregate(&spec.id, &spec.cutoffs, &rows)?;
    let report = ExperimentReport {
        spec: spec.clone(),
        rows,
        summaries,
        tests,
        failures,
        expected_replications: spec.replications(),
        completed_replications: completed,
        timings,
    };
    if report.is_partial() {
        warn!(
            experiment = %spec.id,
            completed = report.completed_replications,
            expected = report.expected_replications,
            "partial report"
        );
    }
    Ok(report)
}

/// Metric values for one method and cutoff, in replication order.
fn series(
    rows: &[ReplicationRow],
    method: EbMethod,
    cutoff: f64,
    metric: Metric,
) -> Vec<(usize, usize, f64)> {
    let mut v: Vec<_> = rows
        .iter()
        .filter(|r| r.method == method.label() && r.cutoff == cutoff)
        .map(|r| (r.train_idx, r.test_idx, r.metric(metric)))
        .collect();
    v.sort_by_key(|&(t, s, _)| (t, s));
    v
}

/// Per-(method, cutoff, metric) summaries and per-(cutoff, metric) paired
/// tests of CGAN-EB against NB-EB.
pub fn aggregate(
    experiment_id: &str,
    cutoffs: &[f64],
    rows: &[ReplicationRow],
) -> Result<(Vec<SummaryRow>, Vec<TestRow>), HarnessError> {
    let mut summaries = vec![];
    for method in METHODS {
        for &cutoff in cutoffs {
            for metric in Metric::ALL {
                let values: Vec<f64> = series(rows, method, cutoff, metric)
                    .into_iter()
                    .map(|x| x.2)
                    .collect();
                let row = match values.len() {
                    0 => continue,
                    1 => SummaryRow {
                        experiment_id: experiment_id.to_string(),
                        method: method.label().into(),
                        cutoff,
                        metric: metric.name().into(),
                        mean: values[0],
                        ci_low: None,
                        ci_high: None,
                        n: 1,
                    },
                    _ => {
                        let s = summarize(&values)?;
                        SummaryRow {
                            experiment_id: experiment_id.to_string(),
                            method: method.label().into(),
                            cutoff,
                            metric: metric.name().into(),
                            mean: s.mean,
                            ci_low: Some(s.ci_low),
                            ci_high: Some(s.ci_high),
                            n: s.n,
                        }
                    }
                };
                summaries.push(row);
            }
        }
    }

    let mut tests = vec![];
    for &cutoff in cutoffs {
        for metric in Metric::ALL {
            let cg = series(rows, EbMethod::CganEb, cutoff, metric);
            let nb = series(rows, EbMethod::NbEb, cutoff, metric);
            // pair only replications where both methods were scored
            let (a, b): (Vec<f64>, Vec<f64>) = cg
                .iter()
                .filter_map(|&(t, s, v)| nb.iter().find(|x| (x.0, x.1) == (t, s)).map(|x| (v, x.2)))
                .unzip();
            if a.len() < 2 {
                continue;
            }
            let r = paired_t_test(&a, &b, SIGNIFICANCE_LEVEL)?;
            tests.push(TestRow {
                experiment_id: experiment_id.to_string(),
                cutoff,
                metric: metric.name().into(),
                t_stat: r.t_stat,
                dof: r.dof,
                significant: r.significant,
                better_method: match r.better {
                    Better::First => EbMethod::CganEb.label().into(),
                    Better::Second => EbMethod::NbEb.label().into(),
                    Better::Neither => "none".into(),
                },
            });
        }
    }
    Ok((summaries, tests))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: EbMethod, t: usize, s: usize, fi: f64) -> ReplicationRow {
        ReplicationRow {
            experiment_id: "X".into(),
            train_idx: t,
            test_idx: s,
            method: method.label().into(),
            cutoff: 0.05,
            fi,
            pmd: fi / 2.0,
            mape: 0.3,
        }
    }

    #[test]
    fn seeds_are_distinct_per_phase_and_index() {
        let spec = crate::grid::find_experiment("E1").unwrap();
        let mut seen = std::collections::HashSet::new();
        for t in 0..5 {
            assert!(seen.insert(train_data_seed(&spec, t)));
            assert!(seen.insert(cgan_seed(&spec, t)));
            for s in 0..5 {
                assert!(seen.insert(test_data_seed(&spec, t, s)));
                assert!(seen.insert(sampling_seed(&spec, t, s)));
            }
        }
        let other = crate::grid::find_experiment("E2").unwrap();
        assert_ne!(train_data_seed(&spec, 0), train_data_seed(&other, 0));
    }

    #[test]
    fn aggregation_pairs_by_replication() {
        let mut rows = vec![];
        for (k, (t, s)) in [(0, 0), (0, 1), (1, 0)].into_iter().enumerate() {
            rows.push(row(EbMethod::NbEb, t, s, 0.5));
            rows.push(row(EbMethod::CganEb, t, s, 0.4 - 0.01 * k as f64));
        }
        let (summaries, tests) = aggregate("X", &[0.05], &rows).unwrap();
        assert_eq!(summaries.len(), 6);
        let nb_fi = summaries
            .iter()
            .find(|s| s.method == "NB-EB" && s.metric == "fi")
            .unwrap();
        assert_eq!((nb_fi.mean, nb_fi.ci_low, nb_fi.n), (0.5, Some(0.5), 3));
        let fi = tests.iter().find(|t| t.metric == "fi").unwrap();
        assert!(fi.significant);
        assert_eq!(fi.better_method, "CGAN-EB");
        assert_eq!(fi.dof, 2);
        // constant mape on both sides: zero differences
        let mape = tests.iter().find(|t| t.metric == "mape").unwrap();
        assert_eq!(
            (mape.t_stat, mape.significant, mape.better_method.as_str()),
            (0.0, false, "none")
        );
    }

    #[test]
    fn single_replication_has_no_interval_or_test() {
        let rows = vec![
            row(EbMethod::NbEb, 0, 0, 0.5),
            row(EbMethod::CganEb, 0, 0, 0.25),
        ];
        let (summaries, tests) = aggregate("X", &[0.05], &rows).unwrap();
        assert!(summaries.iter().all(|s| s.n == 1 && s.ci_low.is_none()));
        assert!(tests.is_empty());
        let (summaries, tests) = aggregate("X", &[0.05], &[]).unwrap();
        assert!(summaries.is_empty() && tests.is_empty());
    }
}
