use super::{Param, Scalar};
use crate::error::{Error, Result};

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

impl Adam {
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter from its accumulated gradient.
    /// Parameters must be passed in the same order on every call.
    pub fn step<T: Scalar>(&mut self, params: &mut [&mut Param<T>], lr: f64) -> Result<()> {
        for p in params.iter() {
            if let Some(g) = p.grad.iter().find(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient {g:?} in {}", p.name)));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.value.len())
        {
            return Err(Error::ShapeMismatch("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.value.len() {
                let g = p.grad[i].to_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                p.value[i] = T::from_f64(p.value[i].to_f64() - update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Param::new("w", vec![3], vec![0.5f32, -1.0, 2.0]);
        let before = p.value.clone();
        let mut adam = Adam::default();
        adam.step(&mut [&mut p], 0.1).unwrap();
        assert_eq!(p.value, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Param::new("w", vec![1], vec![0.0f64]);
        p.grad[0] = 1.0;
        let mut adam = Adam::default();
        adam.step(&mut [&mut p], 0.1).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction
        assert!((p.value[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-12);
        for _ in 0..4 {
            adam.step(&mut [&mut p], 0.1).unwrap();
        }
        assert!((p.value[0] + 0.5).abs() < 1e-6);
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut p = Param::new("w", vec![2], vec![1.0f32, -1.0]);
            let mut adam = Adam::default();
            let mut traj = Vec::new();
            for i in 0..20 {
                p.grad = vec![p.value[0] * 0.3 + i as f32 * 0.01, p.value[1].sin()];
                adam.step(&mut [&mut p], 0.02).unwrap();
                traj.push(p.value.clone());
            }
            traj
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut p = Param::new("w", vec![1], vec![0.0f32]);
        p.grad[0] = f32::NAN;
        assert!(matches!(
            Adam::default().step(&mut [&mut p], 0.1),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(p.value[0], 0.0);
    }
}
