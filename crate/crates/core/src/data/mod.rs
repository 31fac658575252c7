//! Synthetic Gaussian-mixture classification data.
//!
//! A [`Dataset`] keeps ground-truth labels for every row, but training code can
//! only reach labels through [`Dataset::training_label`], which returns `None`
//! for unlabeled rows. Ground truth for evaluation goes through
//! [`Dataset::evaluation_labels`], which is counted by a [`LabelAudit`].

mod augment;
pub mod io;
mod mixture;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use augment::{shift_domain, shift_features, Augmentor, DomainShift};
pub use mixture::{generate_mixture, DatasetSpec, ImbalanceSpec, MixtureModel};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, SeededRng};

/// Counts reads of ground-truth labels made through the evaluation accessor.
#[derive(Debug, Default)]
pub struct LabelAudit {
    evaluation_reads: AtomicUsize,
}

impl LabelAudit {
    pub fn evaluation_reads(&self) -> usize {
        self.evaluation_reads.load(Ordering::Relaxed)
    }
}

/// How many labels [`split_labeled`] reveals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LabelBudget {
    /// Exactly this many per class.
    PerClass(usize),
    /// `⌊fraction · n_c⌋` per class, keeping the pool's class profile.
    Fraction(f64),
}

#[derive(Debug, Clone)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    train_labels: Vec<Option<usize>>,
    classes: usize,
    class_counts: Vec<usize>,
    pub gamma: f64,
    pub seed: u64,
    audit: Arc<LabelAudit>,
}

impl Dataset {
    /// Builds a dataset; `labeled[i]` reveals `labels[i]` to training.
    pub fn new(features: Matrix, labels: Vec<usize>, labeled: Vec<bool>, classes: usize) -> Result<Self> {
        if labels.len() != features.rows() || labeled.len() != features.rows() {
            return Err(Error::shape("Dataset::new rows", features.rows(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!("label {bad} >= class count {classes}")));
        }
        let mut class_counts = vec![0; classes];
        for &l in &labels {
            class_counts[l] += 1;
        }
        let train_labels = labels.iter().zip(&labeled).map(|(&l, &m)| m.then_some(l)).collect();
        Ok(Self {
            features,
            labels,
            train_labels,
            classes,
            class_counts,
            gamma: 1.0,
            seed: 0,
            audit: Arc::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Ground-truth count per class over all rows.
    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.train_labels[i].is_some()
    }

    pub fn labeled_mask(&self) -> Vec<bool> {
        self.train_labels.iter().map(Option::is_some).collect()
    }

    /// The label training may use for row `i`; `None` when the row is unlabeled.
    pub fn training_label(&self, i: usize) -> Option<usize> {
        self.train_labels[i]
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_labeled(i)).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_labeled(i)).collect()
    }

    /// Per-class count of training labels.
    pub fn labeled_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for l in self.train_labels.iter().flatten() {
            counts[*l] += 1;
        }
        counts
    }

    /// Ground truth for every row. Evaluation code only; each call is recorded.
    pub fn evaluation_labels(&self) -> &[usize] {
        self.audit.evaluation_reads.fetch_add(1, Ordering::Relaxed);
        &self.labels
    }

    pub fn audit(&self) -> &LabelAudit {
        &self.audit
    }

    /// Copy with the features replaced; labels and mask are kept.
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.rows() != self.len() {
            return Err(Error::shape("Dataset::with_features", self.len(), features.rows()));
        }
        Ok(Self {
            features,
            audit: Arc::default(),
            ..self.clone()
        })
    }

    /// Copy where exactly the rows in `assigned` are labeled, with the given
    /// training labels (which need not match ground truth).
    pub fn with_assigned_labels(&self, assigned: &[(usize, usize)]) -> Result<Self> {
        let mut train_labels = vec![None; self.len()];
        for &(i, l) in assigned {
            if i >= self.len() || l >= self.classes {
                return Err(Error::InvalidArgument(format!(
                    "assigned label ({i}, {l}) out of range"
                )));
            }
            train_labels[i] = Some(l);
        }
        Ok(Self {
            train_labels,
            audit: Arc::default(),
            ..self.clone()
        })
    }

    /// Row subset, keeping labels and mask.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        let mut class_counts = vec![0; self.classes];
        for &l in &labels {
            class_counts[l] += 1;
        }
        Self {
            features: self.features.select_rows(indices),
            train_labels: indices.iter().map(|&i| self.train_labels[i]).collect(),
            labels,
            classes: self.classes,
            class_counts,
            gamma: self.gamma,
            seed: self.seed,
            audit: Arc::default(),
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.classes != other.classes {
            return Err(Error::shape("Dataset::concat classes", self.classes, other.classes));
        }
        let features = self.features.vstack(&other.features)?;
        let mut out = self.clone();
        out.features = features;
        out.labels.extend_from_slice(&other.labels);
        out.train_labels.extend_from_slice(&other.train_labels);
        for (a, b) in out.class_counts.iter_mut().zip(&other.class_counts) {
            *a += b;
        }
        out.audit = Arc::default();
        Ok(out)
    }
}

/// Reveals labels according to `budget`, replacing any previous mask.
///
/// Within each class the revealed rows are a seeded random choice.
pub fn split_labeled(ds: &Dataset, budget: LabelBudget, rng: &mut SeededRng) -> Result<Dataset> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut labeled = vec![false; ds.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        let take = match budget {
            LabelBudget::PerClass(k) => k,
            LabelBudget::Fraction(f) => {
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::InvalidArgument(format!(
                        "label fraction must be in [0,1], got {f}"
                    )));
                }
                // guard against products like 0.29·100 = 28.999…
                ((f * members.len() as f64) + 1e-9).floor() as usize
            }
        };
        if take > members.len() {
            return Err(Error::InsufficientSamples {
                class,
                available: members.len(),
                requested: take,
            });
        }
        members.shuffle(rng);
        for &i in &members[..take] {
            labeled[i] = true;
        }
    }
    let train_labels = ds.labels.iter().zip(&labeled).map(|(&l, &m)| m.then_some(l)).collect();
    Ok(Dataset {
        train_labels,
        audit: Arc::default(),
        ..ds.clone()
    })
}
