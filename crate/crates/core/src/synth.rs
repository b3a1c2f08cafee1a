//! Synthetic populations of cloud/edge model pairs.
//!
//! Cloud distributions are symmetric Dirichlet draws and the label of every
//! example is sampled from its cloud distribution, so the cloud model is the
//! true conditional law. The edge model is a tempered, noisy copy of the
//! cloud: temperatures below one give an over-confident edge, above one an
//! under-confident one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{Categorical, Example};
use crate::error::{Error, Result};

/// Floor applied before taking logs for the feature embedding.
const FEATURE_LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_labels: usize,
    pub feature_dim: usize,
    pub dirichlet_concentration: f64,
    pub edge_temperature: f64,
    pub edge_noise: f64,
    pub pool_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_labels: 10,
            feature_dim: 10,
            dirichlet_concentration: 0.2,
            edge_temperature: 0.5,
            edge_noise: 0.2,
            pool_size: 1400,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_labels < 2 {
            return Err(Error::InvalidLabelSpace(self.num_labels));
        }
        if !(self.dirichlet_concentration > 0.0 && self.dirichlet_concentration.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "dirichlet_concentration must be positive, got {}",
                self.dirichlet_concentration
            )));
        }
        if !(self.edge_temperature > 0.0) {
            return Err(Error::InvalidTemperature(self.edge_temperature));
        }
        if !(self.edge_noise >= 0.0 && self.edge_noise.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "edge_noise must be non-negative, got {}",
                self.edge_noise
            )));
        }
        Ok(())
    }
}

/// Edge distribution `softmax((log p + eps) / T)` with Gaussian logit noise.
pub fn temperature_distort<R: Rng + ?Sized>(
    cloud: &Categorical,
    temperature: f64,
    noise: f64,
    rng: &mut R,
) -> Result<Categorical> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidTemperature(temperature));
    }
    if temperature == 1.0 && noise == 0.0 {
        return Ok(cloud.clone());
    }
    let logits: Vec<f64> = cloud
        .probs()
        .iter()
        .map(|&p| {
            let eps = if noise > 0.0 {
                noise * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            (p.ln() + eps) / temperature
        })
        .collect();
    Ok(softmax(&logits))
}

fn softmax(logits: &[f64]) -> Categorical {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Categorical::new_unchecked(exps.into_iter().map(|e| e / total).collect())
}

fn dirichlet<R: Rng + ?Sized>(k: usize, concentration: f64, rng: &mut R) -> Categorical {
    let gamma = Gamma::new(concentration, 1.0).expect("validated concentration");
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return Categorical::new_unchecked(draws.into_iter().map(|g| g / total).collect());
        }
    }
}

fn sample_label<R: Rng + ?Sized>(dist: &Categorical, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (y, &p) in dist.probs().iter().enumerate() {
        acc += p;
        if u < acc {
            return y;
        }
    }
    // rounding left a sliver above the last cumulative value
    dist.probs().iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Draws one example with the generator's conventions.
pub fn gen_example<R: Rng + ?Sized>(
    config: &SynthConfig,
    id: String,
    rng: &mut R,
) -> Result<Example> {
    let cloud = dirichlet(config.num_labels, config.dirichlet_concentration, rng);
    let edge = temperature_distort(&cloud, config.edge_temperature, config.edge_noise, rng)?;
    let label = sample_label(&cloud, rng);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let features = (0..config.feature_dim)
        .map(|j| {
            let base = cloud
                .probs()
                .get(j)
                .map_or(0.0, |&p| p.max(FEATURE_LOG_FLOOR).ln());
            base + unit.sample(rng)
        })
        .collect();
    Ok(Example {
        id,
        features,
        cloud_dist: cloud,
        edge_dist: edge,
        label: Some(label),
    })
}

/// I.i.d. pool of `config.pool_size` examples, deterministic in `config.seed`.
pub fn gen_pool(config: &SynthConfig) -> Result<Vec<Example>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = config.pool_size.max(1).to_string().len();
    (0..config.pool_size)
        .map(|i| gen_example(config, format!("ex-{i:0width$}"), &mut rng))
        .collect()
}
