//! Pseudo-keyword padding and the precision/privacy equilibrium search.
//!
//! Every weighted index of partition `i` is extended with `U_i` pseudo-keyword
//! dimensions. For each vector, `omega_i` of those positions (chosen uniformly
//! at random) receive an i.i.d. noise sample `eps`; the rest stay 0. Noise is
//! drawn from one seeded stream per document, so sweeping `sigma` with a fixed
//! seed rescales the same underlying draws.
//!
//! The equilibrium search evaluates a grid of `sigma` values end to end and
//! keeps the one maximizing `f(x, y) = x^2/95 + y^2/80`, where `x` and `y` are
//! query precision and rank privacy in percent. A logistic discriminator
//! reports how separable padded result scores are from exact ones.

use alloc::vec::Vec;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::eval::equilibrium;
use crate::weighting::WeightedIndex;
use crate::{rng, DocId, Error, OwnerId, PartitionId, Result};

/// Lowest and highest admissible per-entry noise deviation for the sweep.
pub const SIGMA_RANGE: (f64, f64) = (0.01, 0.2);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseDistribution {
    /// `eps ~ N(0, sigma^2)`.
    Normal { sigma: f64 },
    /// `eps ~ U(center - half_width, center + half_width)`.
    Uniform { center: f64, half_width: f64 },
}

impl NoiseDistribution {
    fn validate(&self) -> Result<()> {
        match *self {
            Self::Normal { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::InvalidParameter("sigma must be finite and >= 0"))
            }
            Self::Uniform { half_width, center } if !(half_width >= 0.0 && center.is_finite()) => {
                Err(Error::InvalidParameter("uniform half-width must be >= 0"))
            }
            _ => Ok(()),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let eps = match *self {
            Self::Normal { sigma } => sigma * rng::standard_normal(rng),
            Self::Uniform { center, half_width } => center + half_width * (2.0 * rng.gen::<f64>() - 1.0),
        };
        eps.clamp(-1.0, 1.0)
    }
}

/// Padding parameters of one partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionNoise {
    /// `U_i`.
    pub pseudo: usize,
    /// `omega_i`: non-zero pseudo entries per vector.
    pub omega: usize,
    pub distribution: NoiseDistribution,
}

impl PartitionNoise {
    pub fn new(pseudo: usize, omega: usize, distribution: NoiseDistribution) -> Result<Self> {
        if omega > pseudo {
            return Err(Error::InvalidParameter("omega must not exceed the pseudo-keyword count"));
        }
        distribution.validate()?;
        Ok(Self { pseudo, omega, distribution })
    }

    /// `U = ceil(ratio * width)`, `omega = ceil(U / 2)`.
    pub fn with_ratio(width: usize, ratio: f64, distribution: NoiseDistribution) -> Result<Self> {
        if !(ratio >= 0.0) {
            return Err(Error::InvalidParameter("pseudo-keyword ratio must be >= 0"));
        }
        let pseudo = libm::ceil(ratio * width as f64) as usize;
        Self::new(pseudo, pseudo.div_ceil(2), distribution)
    }

    pub fn with_distribution(self, distribution: NoiseDistribution) -> Result<Self> {
        Self::new(self.pseudo, self.omega, distribution)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub partitions: Vec<PartitionNoise>,
    pub seed: u64,
}

/// A weighted index followed by `U_i` pseudo-keyword entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecureWeightedIndex {
    pub doc_id: DocId,
    pub owner_id: OwnerId,
    pub partition: PartitionId,
    /// Number of real keyword dimensions `N_i`.
    pub width: usize,
    pub values: Vec<f64>,
}

impl SecureWeightedIndex {
    pub fn real(&self) -> &[f64] {
        &self.values[..self.width]
    }

    pub fn pseudo(&self) -> &[f64] {
        &self.values[self.width..]
    }
}

/// Pads a single weighted index. The noise stream depends only on the seed,
/// the partition and the document.
pub fn pad_index(index: &WeightedIndex, noise: &PartitionNoise, seed: u64) -> Result<SecureWeightedIndex> {
    if noise.omega > noise.pseudo {
        return Err(Error::InvalidParameter("omega must not exceed the pseudo-keyword count"));
    }
    let width = index.values.len();
    let mut values = Vec::with_capacity(width + noise.pseudo);
    values.extend_from_slice(&index.values);
    values.resize(width + noise.pseudo, 0.0);
    if noise.pseudo > 0 {
        let mut r = rng::stream(seed, &[rng::label::PADDING, index.partition.0 as u64, index.doc_id.0]);
        let mut positions = index::sample(&mut r, noise.pseudo, noise.omega).into_vec();
        positions.sort_unstable();
        for p in positions {
            values[width + p] = noise.distribution.sample(&mut r);
        }
    }
    Ok(SecureWeightedIndex { doc_id: index.doc_id, owner_id: index.owner_id, partition: index.partition, width, values })
}

pub fn pad_partition(weighted: &[WeightedIndex], noise: &PartitionNoise, seed: u64) -> Result<Vec<SecureWeightedIndex>> {
    weighted.iter().map(|w| pad_index(w, noise, seed)).collect()
}

/// Mean and variance of a sum of `omega` i.i.d. `U(mu' - delta, mu' + delta)`
/// variables, used as its normal approximation.
pub fn uniform_to_normal(mu_prime: f64, delta: f64, omega: usize) -> Result<(f64, f64)> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter("delta must be >= 0"));
    }
    if omega == 0 {
        return Err(Error::InvalidParameter("omega must be >= 1"));
    }
    let w = omega as f64;
    Ok((w * mu_prime, w * delta * delta / 3.0))
}

/// Logistic regression on `(z, z^2)` of standardized scores, trained by
/// full-batch gradient descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discriminator {
    weights: [f64; 3],
    mean: f64,
    scale: f64,
    sq_mean: f64,
    sq_scale: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct DiscriminatorConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { epochs: 400, learning_rate: 0.5, train_fraction: 0.7, seed: 0 }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-z))
}

fn moments(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count().max(1) as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let scale = libm::sqrt(var);
    (mean, if scale > 0.0 { scale } else { 1.0 })
}

impl Discriminator {
    /// Fits on `(score, label)` pairs; label `true` means padded.
    pub fn fit(samples: &[(f64, bool)], config: &DiscriminatorConfig) -> Self {
        let (mean, scale) = moments(samples.iter().map(|s| s.0));
        let (sq_mean, sq_scale) = moments(samples.iter().map(|s| {
            let z = (s.0 - mean) / scale;
            z * z
        }));
        let mut model = Self { weights: [0.0; 3], mean, scale, sq_mean, sq_scale };
        let n = samples.len().max(1) as f64;
        for _ in 0..config.epochs {
            let mut grad = [0.0; 3];
            for &(x, label) in samples {
                let f = model.features(x);
                let err = sigmoid(model.logit(&f)) - if label { 1.0 } else { 0.0 };
                for (g, fi) in grad.iter_mut().zip(f) {
                    *g += err * fi;
                }
            }
            for (w, g) in model.weights.iter_mut().zip(grad) {
                *w -= config.learning_rate * g / n;
            }
        }
        model
    }

    fn features(&self, x: f64) -> [f64; 3] {
        let z = (x - self.mean) / self.scale;
        [1.0, z, (z * z - self.sq_mean) / self.sq_scale]
    }

    fn logit(&self, f: &[f64; 3]) -> f64 {
        self.weights.iter().zip(f).map(|(w, x)| w * x).sum()
    }

    /// Probability that `x` came from padded search.
    pub fn predict(&self, x: f64) -> f64 {
        sigmoid(self.logit(&self.features(x)))
    }

    pub fn accuracy(&self, samples: &[(f64, bool)]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let correct = samples.iter().filter(|&&(x, label)| (self.predict(x) >= 0.5) == label).count();
        correct as f64 / samples.len() as f64
    }
}

/// Held-out accuracy of a logistic discriminator separating padded from
/// unpadded scores. 0.5 means the two are indistinguishable to it.
pub fn distinguishability(padded: &[f64], unpadded: &[f64], config: &DiscriminatorConfig) -> Result<f64> {
    if padded.is_empty() || unpadded.is_empty() {
        return Err(Error::SingleClass);
    }
    if padded.len() != unpadded.len() {
        return Err(Error::Dimension { expected: padded.len(), actual: unpadded.len() });
    }
    let mut samples: Vec<(f64, bool)> =
        padded.iter().map(|&x| (x, true)).chain(unpadded.iter().map(|&x| (x, false))).collect();
    let mut r = rng::stream(config.seed, &[rng::label::DISCRIMINATOR]);
    samples.shuffle(&mut r);
    let cut = ((samples.len() as f64 * config.train_fraction) as usize).clamp(1, samples.len() - 1);
    let (train, test) = samples.split_at(cut);
    if train.iter().all(|s| s.1) || train.iter().all(|s| !s.1) {
        return Err(Error::SingleClass);
    }
    Ok(Discriminator::fit(train, config).accuracy(test))
}

/// What one `sigma` grid point produced after pad -> encrypt -> search.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    /// Mean query precision in [0, 1].
    pub precision: f64,
    /// Mean rank privacy (fraction, not percent).
    pub rank_privacy: f64,
    /// Scores the server computed for retrieved documents.
    pub padded_scores: Vec<f64>,
    /// Exact unpadded scores of the exact top-k documents.
    pub exact_scores: Vec<f64>,
}

/// Runs the full pipeline at one noise level.
pub trait NoiseTrial {
    fn trial(&mut self, sigma: f64) -> Result<TrialOutcome>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumRow {
    pub sigma: f64,
    /// Precision in percent.
    pub precision: f64,
    /// Rank privacy in percent.
    pub rank_privacy: f64,
    pub f: f64,
    pub discriminator_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub rows: Vec<EquilibriumRow>,
    /// Index of the argmax row (first on ties).
    pub best: usize,
}

impl EquilibriumReport {
    pub fn optimum(&self) -> &EquilibriumRow {
        &self.rows[self.best]
    }

    pub fn sigma_star(&self) -> f64 {
        self.optimum().sigma
    }
}

/// Grid `start, start + step, ..` up to `stop` inclusive, generated by index
/// so the values do not drift.
pub fn sigma_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || stop < start {
        return Err(Error::InvalidParameter("grid needs step > 0 and stop >= start"));
    }
    let count = libm::floor((stop - start) / step + 1e-9) as usize + 1;
    Ok((0..count).map(|i| libm::round((start + step * i as f64) * 1e12) / 1e12).collect())
}

pub fn optimize_noise<T: NoiseTrial + ?Sized>(
    trial: &mut T,
    grid: &[f64],
    discriminator: &DiscriminatorConfig,
) -> Result<EquilibriumReport> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("sigma grid is empty"));
    }
    let (lo, hi) = SIGMA_RANGE;
    if grid.iter().any(|&s| !(s >= lo - 1e-12 && s <= hi + 1e-12)) {
        return Err(Error::InvalidParameter("sigma grid must lie within [0.01, 0.2]"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &sigma in grid {
        let out = trial.trial(sigma)?;
        let x = 100.0 * out.precision;
        let y = 100.0 * out.rank_privacy;
        let accuracy = distinguishability(&out.padded_scores, &out.exact_scores, discriminator)?;
        rows.push(EquilibriumRow { sigma, precision: x, rank_privacy: y, f: equilibrium(x, y), discriminator_accuracy: accuracy });
    }
    let mut best = 0;
    for (i, row) in rows.iter().enumerate() {
        if row.f > rows[best].f {
            best = i;
        }
    }
    Ok(EquilibriumReport { rows, best })
}
