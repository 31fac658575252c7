use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numkit::{Matrix, SeededRng};

/// Weak view: Gaussian jitter. Strong view: heavier jitter, then a random
/// `mask_fraction` of coordinates set to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Augmentor {
    pub weak_noise: f64,
    pub strong_noise: f64,
    pub mask_fraction: f64,
}

impl Default for Augmentor {
    fn default() -> Self {
        Self {
            weak_noise: 0.1,
            strong_noise: 0.5,
            mask_fraction: 0.25,
        }
    }
}

impl Augmentor {
    pub fn validate(&self) -> Result<()> {
        if !(self.weak_noise >= 0.0) || !(self.strong_noise >= self.weak_noise) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= weak_noise <= strong_noise, got {} and {}",
                self.weak_noise, self.strong_noise
            )));
        }
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return Err(Error::InvalidArgument(format!(
                "mask_fraction must be in [0,1), got {}",
                self.mask_fraction
            )));
        }
        Ok(())
    }

    pub fn weak(&self, x: &Matrix, rng: &mut SeededRng) -> Matrix {
        jitter(x, self.weak_noise, rng)
    }

    pub fn strong(&self, x: &Matrix, rng: &mut SeededRng) -> Matrix {
        let mut out = jitter(x, self.strong_noise, rng);
        let dim = x.cols();
        let masked = (self.mask_fraction * dim as f64).round() as usize;
        if masked > 0 {
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                for c in index::sample(rng, dim, masked.min(dim)) {
                    row[c] = 0.0;
                }
            }
        }
        out
    }
}

fn jitter(x: &Matrix, scale: f64, rng: &mut SeededRng) -> Matrix {
    if scale == 0.0 {
        return x.clone();
    }
    let mut out = x.clone();
    for v in out.as_mut_slice() {
        *v += scale * rng.standard_normal();
    }
    out
}

/// Rotation of the first two coordinates followed by a translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    pub angle: f64,
    pub translation: Vec<f64>,
}

impl DomainShift {
    pub fn identity(dim: usize) -> Self {
        Self {
            angle: 0.0,
            translation: vec![0.0; dim],
        }
    }
}

pub fn shift_features(x: &Matrix, shift: &DomainShift) -> Result<Matrix> {
    if shift.translation.len() != x.cols() {
        return Err(Error::shape(
            "shift_domain translation",
            x.cols(),
            shift.translation.len(),
        ));
    }
    let (sin, cos) = shift.angle.sin_cos();
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        if row.len() >= 2 {
            let (a, b) = (row[0], row[1]);
            row[0] = cos * a - sin * b;
            row[1] = sin * a + cos * b;
        }
        for (v, t) in row.iter_mut().zip(&shift.translation) {
            *v += t;
        }
    }
    Ok(out)
}

/// Applies `shift` to every feature row; labels and mask are unchanged.
pub fn shift_domain(ds: &Dataset, shift: &DomainShift) -> Result<Dataset> {
    ds.with_features(shift_features(ds.features(), shift)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sample() -> Matrix {
        let mut rng = SeededRng::new(4, 0);
        Matrix::from_vec(5, 4, (0..20).map(|_| rng.standard_normal()).collect()).unwrap()
    }

    #[test]
    fn zero_noise_views_are_identity() {
        let aug = Augmentor {
            weak_noise: 0.0,
            strong_noise: 0.0,
            mask_fraction: 0.0,
        };
        let x = sample();
        let mut rng = SeededRng::new(1, 5);
        let w = aug.weak(&x, &mut rng);
        let s = aug.strong(&x, &mut rng);
        let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&w), bits(&x));
        assert_eq!(bits(&s), bits(&x));
    }

    #[test]
    fn strong_masks_exact_count() {
        let aug = Augmentor {
            weak_noise: 0.0,
            strong_noise: 0.0,
            mask_fraction: 0.5,
        };
        let x = Matrix::from_vec(3, 4, vec![1.0; 12]).unwrap();
        let s = aug.strong(&x, &mut SeededRng::new(2, 5));
        for row in s.iter_rows() {
            assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 2);
        }
    }

    #[test]
    fn weak_noise_perturbs() {
        let aug = Augmentor::default();
        let x = sample();
        assert_ne!(aug.weak(&x, &mut SeededRng::new(1, 5)), x);
        let bad = Augmentor {
            weak_noise: 1.0,
            strong_noise: 0.5,
            mask_fraction: 0.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn shift_identity_and_period() {
        let x = sample();
        assert_eq!(shift_features(&x, &DomainShift::identity(4)).unwrap(), x);
        let full = DomainShift {
            angle: 2.0 * PI,
            translation: vec![0.0; 4],
        };
        let y = shift_features(&x, &full).unwrap();
        for (a, b) in x.as_slice().iter().zip(y.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_turn() {
        let x = Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        let shift = DomainShift {
            angle: PI / 2.0,
            translation: vec![0.0; 3],
        };
        let y = shift_features(&x, &shift).unwrap();
        assert!(y.get(0, 0).abs() < 1e-12);
        assert!((y.get(0, 1) - 1.0).abs() < 1e-12);
        assert_eq!(y.get(0, 2), 0.0);
        let bad = DomainShift {
            angle: 0.0,
            translation: vec![0.0; 2],
        };
        assert!(shift_features(&x, &bad).is_err());
    }
}
