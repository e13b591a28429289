//! Conditional GAN used as a non-parametric crash-count prior.
//!
//! Generator: `X -> Dense(100, ELU)` and `z -> Dense(100, ELU)`, concatenated
//! to 200 units, then three `Dense(40, ELU)` and a `Dense(1, ReLU)` head.
//! Discriminator: `X -> Dense(100, ELU)` and `y -> Dense(100, ELU)`,
//! concatenated, then two `Dense(40, ELU)` and a `Dense(1, Sigmoid)` head.
//!
//! Targets are divided by `y_scale` before they reach either network and
//! generated samples are multiplied back. `y_scale` puts the mean scaled
//! target at [`SCALED_TARGET_MEAN`]. Dividing by the largest count instead
//! leaves targets near 0.1, where a single Adam step at the published
//! learning rate moves the generator output by about half the target
//! spread; the oscillation that follows drives every pre-activation of the
//! ReLU head negative and the generator never recovers.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::{
    bce_grad, bce_loss, read_networks, write_networks, Activation, AdamConfig, AdamState,
    DenseLayer, Network,
};
use crate::rng::{rng_from_seed, SimRng};
use crate::sim::Dataset;
use crate::{Error, Result};

const BRANCH_WIDTH: usize = 100;
const TRUNK_WIDTH: usize = 40;
const GENERATOR_TRUNK_DEPTH: usize = 3;
const DISCRIMINATOR_TRUNK_DEPTH: usize = 2;

/// Mean of the targets after scaling.
pub const SCALED_TARGET_MEAN: f64 = 8.0;

/// `mean(targets) / SCALED_TARGET_MEAN`, or 1 when every target is zero.
pub fn target_scale(targets: &[f64]) -> f64 {
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    if mean > 0.0 {
        mean / SCALED_TARGET_MEAN
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CganConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub gen_lr: f64,
    pub disc_lr: f64,
    pub gen_decay: f64,
    pub disc_decay: f64,
    pub noise_dim: usize,
    pub seed: u64,
}

impl Default for CganConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 100,
            gen_lr: 0.001,
            disc_lr: 0.001,
            gen_decay: 0.001,
            disc_decay: 0.0,
            noise_dim: 1,
            seed: 0,
        }
    }
}

impl CganConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.noise_dim == 0 {
            return Err(Error::InvalidParameter(
                "batch_size and noise_dim must be positive".into(),
            ));
        }
        for (name, lr) in [("gen_lr", self.gen_lr), ("disc_lr", self.disc_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {lr}"
                )));
            }
        }
        for (name, d) in [
            ("gen_decay", self.gen_decay),
            ("disc_decay", self.disc_decay),
        ] {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be >= 0, got {d}"
                )));
            }
        }
        Ok(())
    }
}

/// Sample-weighted epoch means of the batch losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    /// `BCE(D(X, y), 1)`.
    pub real_loss: f64,
    /// `BCE(D(X, G(X, z)), 0)`.
    pub fake_loss: f64,
    /// `BCE(D(X, G(X, z)), 1)` after the discriminator update.
    pub generator_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CganModel {
    pub generator: Network,
    pub discriminator: Network,
    pub y_scale: f64,
    pub feature_dim: usize,
    pub noise_dim: usize,
    pub loss_history: Vec<EpochLosses>,
}

pub fn build_generator<R: Rng + ?Sized>(
    feature_dim: usize,
    noise_dim: usize,
    rng: &mut R,
) -> Result<Network> {
    let mut trunk = vec![DenseLayer::glorot(
        2 * BRANCH_WIDTH,
        TRUNK_WIDTH,
        Activation::Elu,
        rng,
    )];
    for _ in 1..GENERATOR_TRUNK_DEPTH {
        trunk.push(DenseLayer::glorot(
            TRUNK_WIDTH,
            TRUNK_WIDTH,
            Activation::Elu,
            rng,
        ));
    }
    trunk.push(DenseLayer::glorot(TRUNK_WIDTH, 1, Activation::Relu, rng));
    Network::new(
        vec![feature_dim, noise_dim],
        vec![
            vec![DenseLayer::glorot(
                feature_dim,
                BRANCH_WIDTH,
                Activation::Elu,
                rng,
            )],
            vec![DenseLayer::glorot(
                noise_dim,
                BRANCH_WIDTH,
                Activation::Elu,
                rng,
            )],
        ],
        trunk,
    )
}

pub fn build_discriminator<R: Rng + ?Sized>(feature_dim: usize, rng: &mut R) -> Result<Network> {
    let mut trunk = vec![DenseLayer::glorot(
        2 * BRANCH_WIDTH,
        TRUNK_WIDTH,
        Activation::Elu,
        rng,
    )];
    for _ in 1..DISCRIMINATOR_TRUNK_DEPTH {
        trunk.push(DenseLayer::glorot(
            TRUNK_WIDTH,
            TRUNK_WIDTH,
            Activation::Elu,
            rng,
        ));
    }
    trunk.push(DenseLayer::glorot(TRUNK_WIDTH, 1, Activation::Sigmoid, rng));
    Network::new(
        vec![feature_dim, 1],
        vec![
            vec![DenseLayer::glorot(
                feature_dim,
                BRANCH_WIDTH,
                Activation::Elu,
                rng,
            )],
            vec![DenseLayer::glorot(1, BRANCH_WIDTH, Activation::Elu, rng)],
        ],
        trunk,
    )
}

/// Train on a simulated dataset: features as-is, observed counts as targets.
pub fn train(dataset: &Dataset, config: &CganConfig) -> Result<CganModel> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput(
            "cannot train on an empty dataset".into(),
        ));
    }
    let rows = dataset.feature_rows();
    let features = Array2::from_shape_fn((rows.len(), rows[0].len()), |(i, j)| rows[i][j]);
    let targets: Vec<f64> = dataset
        .sites
        .iter()
        .map(|s| s.observed_count as f64)
        .collect();
    train_on(features.view(), &targets, config)
}

/// Adversarial training on arbitrary non-negative targets.
///
/// Per mini-batch: one discriminator step on `real + fake` loss, then one
/// generator step on the non-saturating loss `BCE(D(X, G(X, z)), 1)` through
/// the freshly updated discriminator. Batches come from a fresh shuffle each
/// epoch; the last batch may be short.
pub fn train_on(
    features: ArrayView2<'_, f64>,
    targets: &[f64],
    config: &CganConfig,
) -> Result<CganModel> {
    config.validate()?;
    let (n, feature_dim) = features.dim();
    if n == 0 || feature_dim == 0 {
        return Err(Error::InvalidInput(
            "training set has no rows or no features".into(),
        ));
    }
    if targets.len() != n {
        return Err(Error::Shape(format!(
            "{n} feature rows but {} targets",
            targets.len()
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature value".into()));
    }
    if let Some(bad) = targets.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "targets must be finite and >= 0, got {bad}"
        )));
    }

    let mut rng = rng_from_seed(config.seed);
    let y_scale = target_scale(targets);
    let mut model = CganModel {
        generator: build_generator(feature_dim, config.noise_dim, &mut rng)?,
        discriminator: build_discriminator(feature_dim, &mut rng)?,
        y_scale,
        feature_dim,
        noise_dim: config.noise_dim,
        loss_history: Vec::with_capacity(config.epochs),
    };
    let scaled: Vec<f64> = targets.iter().map(|&t| model.scale_target(t)).collect();

    let mut gen_opt = AdamState::new(
        &model.generator,
        AdamConfig {
            lr: config.gen_lr,
            decay: config.gen_decay,
            ..AdamConfig::default()
        },
    );
    let mut disc_opt = AdamState::new(
        &model.discriminator,
        AdamConfig {
            lr: config.disc_lr,
            decay: config.disc_decay,
            ..AdamConfig::default()
        },
    );

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        for batch in order.chunks(config.batch_size) {
            let losses = train_batch(
                &mut model,
                &mut gen_opt,
                &mut disc_opt,
                features,
                &scaled,
                batch,
                &mut rng,
            )
            .map_err(|e| match e {
                Error::Divergence { detail, .. } => Error::Divergence {
                    epoch: Some(epoch),
                    detail,
                },
                other => other,
            })?;
            for (s, l) in sums.iter_mut().zip(losses) {
                *s += l * batch.len() as f64;
            }
        }
        model.loss_history.push(EpochLosses {
            real_loss: sums[0] / n as f64,
            fake_loss: sums[1] / n as f64,
            generator_loss: sums[2] / n as f64,
        });
    }
    Ok(model)
}

fn noise_matrix<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, dim), || rng.sample(StandardNormal))
}

fn column(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column shape")
}

/// Returns `[real_loss, fake_loss, generator_loss]` for the batch.
fn train_batch(
    model: &mut CganModel,
    gen_opt: &mut AdamState,
    disc_opt: &mut AdamState,
    features: ArrayView2<'_, f64>,
    scaled_targets: &[f64],
    batch: &[usize],
    rng: &mut SimRng,
) -> Result<[f64; 3]> {
    let b = batch.len();
    let x = features.select(Axis(0), batch);
    let y_real = column(&batch.iter().map(|&i| scaled_targets[i]).collect::<Vec<_>>());
    let z = noise_matrix(b, model.noise_dim, rng);

    let (y_fake, gen_tape) = model.generator.forward(&[x.view(), z.view()])?;

    // discriminator: real towards 1, fake towards 0
    let ones = vec![1.0; b];
    let zeros = vec![0.0; b];
    let (p_real, real_tape) = model.discriminator.forward(&[x.view(), y_real.view()])?;
    let (p_fake, fake_tape) = model.discriminator.forward(&[x.view(), y_fake.view()])?;
    let p_real = p_real.column(0).to_vec();
    let p_fake = p_fake.column(0).to_vec();
    let real_loss = bce_loss(&p_real, &ones)?;
    let fake_loss = bce_loss(&p_fake, &zeros)?;
    if !(real_loss.is_finite() && fake_loss.is_finite()) {
        return Err(Error::Divergence {
            epoch: None,
            detail: format!("discriminator loss real={real_loss} fake={fake_loss}"),
        });
    }
    let mut disc_grads = model
        .discriminator
        .backward(&real_tape, column(&bce_grad(&p_real, &ones)?).view())?
        .params;
    disc_grads.add_assign(
        &model
            .discriminator
            .backward(&fake_tape, column(&bce_grad(&p_fake, &zeros)?).view())?
            .params,
    )?;
    disc_opt.step(&mut model.discriminator, &disc_grads)?;

    // generator through the updated, frozen discriminator
    let (p_gen, gen_disc_tape) = model.discriminator.forward(&[x.view(), y_fake.view()])?;
    let p_gen = p_gen.column(0).to_vec();
    let generator_loss = bce_loss(&p_gen, &ones)?;
    if !generator_loss.is_finite() {
        return Err(Error::Divergence {
            epoch: None,
            detail: format!("generator loss {generator_loss}"),
        });
    }
    let through_disc = model
        .discriminator
        .backward(&gen_disc_tape, column(&bce_grad(&p_gen, &ones)?).view())?;
    let gen_grads = model
        .generator
        .backward(&gen_tape, through_disc.inputs[1].view())?
        .params;
    gen_opt.step(&mut model.generator, &gen_grads)?;

    Ok([real_loss, fake_loss, generator_loss])
}

/// Sample mean and unbiased sample variance (denominator `m - 1`).
pub fn sample_moments(samples: &[f64]) -> Result<(f64, f64)> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 samples for a variance, got {m}"
        )));
    }
    let mean = samples.iter().sum::<f64>() / m as f64;
    let var = samples.iter().map(|s| (mean - s).powi(2)).sum::<f64>() / (m - 1) as f64;
    Ok((mean, var))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMetadata {
    y_scale: f64,
    feature_dim: usize,
    noise_dim: usize,
    config: Option<CganConfig>,
    loss_history: Vec<EpochLosses>,
}

impl CganModel {
    pub fn scale_target(&self, y: f64) -> f64 {
        y / self.y_scale
    }

    pub fn unscale_target(&self, v: f64) -> f64 {
        v * self.y_scale
    }

    /// `m` generator draws for one site, each with its own `z ~ N(0, I)`, on
    /// the crash-count scale.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        features: &[f64],
        m: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if features.len() != self.feature_dim {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.feature_dim,
                features.len()
            )));
        }
        if m == 0 {
            return Err(Error::InvalidParameter("sample count must be >= 1".into()));
        }
        let x = Array2::from_shape_fn((m, self.feature_dim), |(_, j)| features[j]);
        let z = noise_matrix(m, self.noise_dim, rng);
        let out = self.generator.predict(&[x.view(), z.view()])?;
        Ok(out
            .column(0)
            .iter()
            .map(|&v| self.unscale_target(v))
            .collect())
    }

    /// Monte-Carlo prior mean and variance of the crash count at one site.
    pub fn predictive_moments<R: Rng + ?Sized>(
        &self,
        features: &[f64],
        m: usize,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        if m < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 samples for a variance, got {m}"
            )));
        }
        sample_moments(&self.sample(features, m, rng)?)
    }

    pub fn save(&self, dir: &Path, config: Option<&CganConfig>) -> Result<()> {
        let meta = ModelMetadata {
            y_scale: self.y_scale,
            feature_dim: self.feature_dim,
            noise_dim: self.noise_dim,
            config: config.copied(),
            loss_history: self.loss_history.clone(),
        };
        let meta = serde_json::to_value(meta).map_err(|e| Error::Format(e.to_string()))?;
        write_networks(
            dir,
            &[
                ("generator", &self.generator),
                ("discriminator", &self.discriminator),
            ],
            meta,
        )
    }

    pub fn load(dir: &Path) -> Result<(Self, Option<CganConfig>)> {
        let (networks, meta) = read_networks(dir)?;
        let meta: ModelMetadata =
            serde_json::from_value(meta).map_err(|e| Error::Format(e.to_string()))?;
        if !(meta.y_scale > 0.0) {
            return Err(Error::Format(format!(
                "y_scale must be positive, got {}",
                meta.y_scale
            )));
        }
        let mut generator = None;
        let mut discriminator = None;
        for named in networks {
            match named.name.as_str() {
                "generator" => generator = Some(named.network),
                "discriminator" => discriminator = Some(named.network),
                other => return Err(Error::Format(format!("unexpected network {other}"))),
            }
        }
        let model = CganModel {
            generator: generator.ok_or_else(|| Error::Format("missing generator".into()))?,
            discriminator: discriminator
                .ok_or_else(|| Error::Format("missing discriminator".into()))?,
            y_scale: meta.y_scale,
            feature_dim: meta.feature_dim,
            noise_dim: meta.noise_dim,
            loss_history: meta.loss_history,
        };
        if model.generator.input_dims() != [meta.feature_dim, meta.noise_dim]
            || model.discriminator.input_dims() != [meta.feature_dim, 1]
        {
            return Err(Error::Format(
                "network inputs disagree with metadata".into(),
            ));
        }
        Ok((model, meta.config))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_dataset, FunctionalForm, SimConfig};

    fn small_dataset(n: usize) -> Dataset {
        simulate_dataset(&SimConfig {
            dispersion_alpha: 0.5,
            intercept_beta0: 0.5,
            functional_form: FunctionalForm::LogLinear,
            n_sites: n,
            seed: 12,
        })
        .unwrap()
    }

    #[test]
    fn defaults_match_published_configuration() {
        let c = CganConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.noise_dim), (500, 100, 1));
        assert_eq!(
            (c.gen_lr, c.disc_lr, c.gen_decay, c.disc_decay),
            (0.001, 0.001, 0.001, 0.0)
        );
    }

    #[test]
    fn architectures() {
        let mut rng = rng_from_seed(0);
        let g = build_generator(4, 1, &mut rng).unwrap();
        let widths: Vec<_> = g
            .trunk()
            .iter()
            .map(|l| (l.in_dim(), l.out_dim()))
            .collect();
        assert_eq!(widths, [(200, 40), (40, 40), (40, 40), (40, 1)]);
        assert_eq!(g.trunk()[3].activation, Activation::Relu);
        let d = build_discriminator(4, &mut rng).unwrap();
        let widths: Vec<_> = d
            .trunk()
            .iter()
            .map(|l| (l.in_dim(), l.out_dim()))
            .collect();
        assert_eq!(widths, [(200, 40), (40, 40), (40, 1)]);
        assert_eq!(d.trunk()[2].activation, Activation::Sigmoid);
        assert_eq!(d.input_dims(), [4, 1]);
    }

    #[test]
    fn zero_epochs_returns_untrained_model() {
        let ds = small_dataset(50);
        let cfg = CganConfig {
            epochs: 0,
            ..CganConfig::default()
        };
        let model = train(&ds, &cfg).unwrap();
        assert!(model.loss_history.is_empty());
        let counts = ds.counts();
        let mean = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
        assert!((model.y_scale - mean / 8.0).abs() < 1e-15);
        let mut rng = rng_from_seed(0);
        assert_eq!(model.generator, build_generator(4, 1, &mut rng).unwrap());
    }

    #[test]
    fn training_is_reproducible() {
        let ds = small_dataset(120);
        let cfg = CganConfig {
            epochs: 3,
            seed: 5,
            ..CganConfig::default()
        };
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.loss_history.len(), 3);
        let sa = a
            .sample(&[0.1, 0.2, 0.3, 0.4], 10, &mut rng_from_seed(1))
            .unwrap();
        let sb = b
            .sample(&[0.1, 0.2, 0.3, 0.4], 10, &mut rng_from_seed(1))
            .unwrap();
        assert_eq!(sa, sb);
    }

    #[test]
    fn samples_are_non_negative() {
        let ds = small_dataset(200);
        let model = train(
            &ds,
            &CganConfig {
                epochs: 2,
                ..CganConfig::default()
            },
        )
        .unwrap();
        let mut rng = rng_from_seed(8);
        for site in ds.sites.iter().take(20) {
            let s = model.sample(&site.features, 500, &mut rng).unwrap();
            assert_eq!(s.len(), 500);
            assert!(s.iter().all(|&v| v >= 0.0));
        }
        let one = model
            .sample(&ds.sites[0].features, 1, &mut rng_from_seed(3))
            .unwrap();
        assert_eq!(
            one,
            model
                .sample(&ds.sites[0].features, 1, &mut rng_from_seed(3))
                .unwrap()
        );
        assert!(model.sample(&[0.0; 3], 5, &mut rng).is_err());
        assert!(model
            .predictive_moments(&ds.sites[0].features, 1, &mut rng)
            .is_err());
    }

    #[test]
    fn target_scale_examples() {
        assert!((target_scale(&[0.0, 4.0, 12.0]) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(target_scale(&[0.0; 5]), 1.0);
    }

    #[test]
    fn moment_examples() {
        assert_eq!(sample_moments(&[3.0; 7]).unwrap(), (3.0, 0.0));
        assert_eq!(sample_moments(&[2.0, 4.0]).unwrap(), (3.0, 2.0));
        assert_eq!(sample_moments(&[1.0, 2.0, 3.0]).unwrap(), (2.0, 1.0));
        assert!(sample_moments(&[1.0]).is_err());
    }

    #[test]
    fn scaling_round_trip() {
        let model = train(
            &small_dataset(30),
            &CganConfig {
                epochs: 0,
                ..CganConfig::default()
            },
        )
        .unwrap();
        for y in [0.0, 0.3, 1.0, 7.0, 123.456, 1e6] {
            let back = model.unscale_target(model.scale_target(y));
            assert!((back - y).abs() <= 1e-12 * y.abs().max(1e-300));
        }
    }

    #[test]
    fn invalid_training_inputs() {
        let ds = small_dataset(10);
        let bad = CganConfig {
            batch_size: 0,
            ..CganConfig::default()
        };
        assert!(train(&ds, &bad).is_err());
        let x = Array2::<f64>::zeros((3, 2));
        assert!(train_on(x.view(), &[1.0, 2.0], &CganConfig::default()).is_err());
        assert!(train_on(x.view(), &[1.0, -2.0, 0.0], &CganConfig::default()).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let ds = small_dataset(60);
        let cfg = CganConfig {
            epochs: 1,
            ..CganConfig::default()
        };
        let model = train(&ds, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path(), Some(&cfg)).unwrap();
        let (loaded, loaded_cfg) = CganModel::load(dir.path()).unwrap();
        assert_eq!(loaded.generator, model.generator);
        assert_eq!(loaded.discriminator, model.discriminator);
        assert_eq!(loaded.y_scale, model.y_scale);
        assert_eq!(loaded.loss_history, model.loss_history);
        assert_eq!(loaded_cfg, Some(cfg));
    }
}
