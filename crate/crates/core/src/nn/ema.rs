use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::mlp::MlpParams;

/// Exponential moving average of student weights, used for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaTeacher {
    pub shadow: MlpParams,
    pub decay: f64,
}

impl EmaTeacher {
    pub fn new(student: &MlpParams, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::InvalidArgument(format!(
                "ema decay must be in [0,1], got {decay}"
            )));
        }
        Ok(Self {
            shadow: student.clone(),
            decay,
        })
    }

    /// `θ_t ← decay·θ_t + (1 − decay)·θ_s`
    pub fn update(&mut self, student: &MlpParams) -> Result<()> {
        if !self.shadow.same_layout(student) {
            return Err(Error::shape(
                "ema_update",
                format!("{:?}", self.shadow.dims()),
                format!("{:?}", student.dims()),
            ));
        }
        let d = self.decay;
        for (t, s) in self.shadow.values_mut().zip(student.values()) {
            *t = d * *t + (1.0 - d) * s;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::Dense;
    use crate::numkit::{Matrix, SeededRng};

    fn scalar(v: f64) -> MlpParams {
        MlpParams::from_layers(vec![Dense {
            weight: Matrix::from_vec(1, 1, vec![v]).unwrap(),
            bias: vec![v],
        }])
        .unwrap()
    }

    #[test]
    fn decay_one_keeps_teacher() {
        let mut t = EmaTeacher::new(&scalar(0.3), 1.0).unwrap();
        t.update(&scalar(5.0)).unwrap();
        assert_eq!(t.shadow, scalar(0.3));
    }

    #[test]
    fn decay_zero_copies_student() {
        let mut t = EmaTeacher::new(&scalar(0.3), 0.0).unwrap();
        t.update(&scalar(5.0)).unwrap();
        assert_eq!(t.shadow, scalar(5.0));
    }

    #[test]
    fn scalar_update() {
        let mut t = EmaTeacher::new(&scalar(0.0), 0.9).unwrap();
        t.update(&scalar(1.0)).unwrap();
        assert!((t.shadow.layers[0].weight.get(0, 0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn geometric_contraction() {
        let mut t = EmaTeacher::new(&scalar(0.0), 0.9).unwrap();
        for k in 1..=50 {
            t.update(&scalar(1.0)).unwrap();
            let gap = (t.shadow.layers[0].weight.get(0, 0) - 1.0).abs();
            assert!((gap - 0.9f64.powi(k)).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut rng = SeededRng::new(0, 0);
        let a = MlpParams::init(&[2, 3], &mut rng).unwrap();
        let b = MlpParams::init(&[2, 4], &mut rng).unwrap();
        let mut t = EmaTeacher::new(&a, 0.5).unwrap();
        assert!(t.update(&b).is_err());
    }
}
