use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numkit::{gaussian_sample, stream, Matrix, SeededRng};

const PLACEMENT_ATTEMPTS: usize = 10_000;

/// Geometry of the mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub classes: usize,
    pub dim: usize,
    /// Minimum pairwise centroid distance.
    pub centroid_separation: f64,
    /// Standard deviation of each isotropic cluster.
    pub cluster_scale: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.dim < 2 {
            return Err(Error::InvalidArgument(format!("need dim >= 2, got {}", self.dim)));
        }
        if !(self.centroid_separation > 0.0) || !(self.cluster_scale > 0.0) {
            return Err(Error::InvalidArgument(
                "centroid separation and cluster scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Exponentially decaying class sizes: `n_c = round(n_max · γ^(−c/(C−1)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceSpec {
    pub gamma: f64,
    pub n_max: usize,
}

impl ImbalanceSpec {
    pub fn balanced(per_class: usize) -> Self {
        Self {
            gamma: 1.0,
            n_max: per_class,
        }
    }

    pub fn counts(&self, classes: usize) -> Result<Vec<usize>> {
        if !(self.gamma >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be >= 1, got {}",
                self.gamma
            )));
        }
        if classes < 2 {
            return Ok(vec![self.n_max; classes]);
        }
        let last = (classes - 1) as f64;
        Ok((0..classes)
            .map(|c| (self.n_max as f64 * self.gamma.powf(-(c as f64) / last)).round() as usize)
            .collect())
    }
}

/// Class centroids fixed by a [`DatasetSpec`]; draws any number of datasets from them.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    pub spec: DatasetSpec,
    pub centroids: Matrix,
}

impl MixtureModel {
    /// Places centroids by rejection sampling from `N(0, σ²I)` with
    /// `σ = 1.25·separation/√(2·dim)`, so typical pairwise distances sit just
    /// above the required separation.
    pub fn new(spec: DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = SeededRng::new(spec.seed, stream::CENTROIDS);
        let sigma = 1.25 * spec.centroid_separation / (2.0 * spec.dim as f64).sqrt();
        let origin = vec![0.0; spec.dim];
        let mut placed: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
        let mut attempts = 0;
        while placed.len() < spec.classes {
            attempts += 1;
            if attempts > PLACEMENT_ATTEMPTS * spec.classes {
                return Err(Error::CentroidPlacement {
                    classes: spec.classes,
                    separation: spec.centroid_separation,
                    attempts,
                });
            }
            let candidate = gaussian_sample(&mut rng, &origin, sigma)?;
            let ok = placed
                .iter()
                .all(|p| distance(p, &candidate) >= spec.centroid_separation);
            if ok {
                placed.push(candidate);
            }
        }
        let centroids = Matrix::from_rows(&placed)?;
        Ok(Self { spec, centroids })
    }

    /// Draws `imb.counts()` rows per class from the `(seed, stream)` generator, shuffled.
    pub fn sample(&self, imb: &ImbalanceSpec, seed: u64, stream: u64) -> Result<Dataset> {
        let counts = imb.counts(self.spec.classes)?;
        let mut rng = SeededRng::new(seed, stream);
        let total: usize = counts.iter().sum();
        let mut rows = Vec::with_capacity(total);
        for (c, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                rows.push((
                    gaussian_sample(&mut rng, self.centroids.row(c), self.spec.cluster_scale)?,
                    c,
                ));
            }
        }
        rows.shuffle(&mut rng);
        let mut data = Vec::with_capacity(total * self.spec.dim);
        let mut labels = Vec::with_capacity(total);
        for (x, c) in rows {
            data.extend_from_slice(&x);
            labels.push(c);
        }
        let features = Matrix::from_vec(total, self.spec.dim, data)?;
        let mut ds = Dataset::new(features, labels, vec![false; total], self.spec.classes)?;
        ds.gamma = imb.gamma;
        ds.seed = seed;
        Ok(ds)
    }

    /// Index of the closest centroid.
    pub fn nearest_centroid(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for c in 0..self.centroids.rows() {
            let d = distance(self.centroids.row(c), x);
            if d < best.1 {
                best = (c, d);
            }
        }
        best.0
    }
}

/// Centroids from `spec`, samples from the default sample stream.
pub fn generate_mixture(spec: &DatasetSpec, imb: &ImbalanceSpec) -> Result<Dataset> {
    MixtureModel::new(spec.clone())?.sample(imb, spec.seed, stream::SAMPLES)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
