use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// RMSprop: `v = ρ v + (1 - ρ) g²`, `θ -= lr g / (√v + ε)`.
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    accum: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(lr: f64, rho: f64, eps: f64) -> Self {
        RmsProp {
            lr,
            rho,
            eps,
            accum: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "rmsprop: {} parameters vs {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.accum.is_empty() {
            self.accum = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.accum) {
            if p.len() != g.len() || v.len() != g.len() {
                return Err(Error::Shape("rmsprop: parameter/gradient size".into()));
            }
            for ((pv, &gv), a) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *a = self.rho * *a + (1.0 - self.rho) * gv * gv;
                *pv -= self.lr * gv / (a.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut opt = RmsProp::new(0.003, 0.9, 1e-8);
        let mut p = Tensor::from_vec(&[3], vec![0.1, -2.0, 5.0]).unwrap();
        let before = p.clone();
        for _ in 0..5 {
            opt.step(vec![&mut p], &[Tensor::zeros(&[3])]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let mut opt = RmsProp::new(0.01, 0.9, 1e-8);
        let mut p = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        opt.step(vec![&mut p], &[Tensor::from_vec(&[1], vec![2.0]).unwrap()]).unwrap();
        let v: f64 = 0.1 * 4.0;
        assert!((p.data()[0] - (1.0 - 0.01 * 2.0 / (v.sqrt() + 1e-8))).abs() < 1e-15);
    }
}
