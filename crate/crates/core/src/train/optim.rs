use crate::error::{Error, Result};
use crate::grad::Tensor;

/// Global L2 norm over every present gradient, accumulated in f64.
pub fn global_norm(grads: &[Option<Tensor<f32>>]) -> f64 {
    grads.iter().flatten().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Rescales all gradients by `max_norm / g` when their global norm `g`
/// exceeds `max_norm`. Returns the factor applied (1 when untouched).
pub fn clip_gradients(grads: &mut [Option<Tensor<f32>>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm.is_nan() || norm <= max_norm {
        return 1.0;
    }
    let factor = max_norm / norm;
    let f = factor as f32;
    for g in grads.iter_mut().flatten() {
        for v in g.data_mut() {
            *v *= f;
        }
    }
    factor
}

/// Adam with bias correction. Each parameter keeps its own step count, so
/// a parameter that receives no gradient in a step is left alone.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Tensor<f32>>,
    second: Vec<Tensor<f32>>,
    steps: Vec<u64>,
    updates: u64,
}

impl Adam {
    pub fn new(params: &[&Tensor<f32>]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            steps: vec![0; params.len()],
            updates: 0,
        }
    }

    /// Number of calls to [`Adam::step`].
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn param_steps(&self) -> &[u64] {
        &self.steps
    }

    pub fn first_moments(&self) -> &[Tensor<f32>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<f32>] {
        &self.second
    }

    /// True while every moment is still zero.
    pub fn is_fresh(&self) -> bool {
        self.first
            .iter()
            .chain(&self.second)
            .all(|t| t.data().iter().all(|&v| v == 0.0))
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<f32>], grads: &[Option<Tensor<f32>>], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Dimension {
                expected: self.first.len(),
                found: params.len().min(grads.len()),
                context: "optimizer parameter count".into(),
            });
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.shape() != params[i].shape() {
                    return Err(Error::shape("adam", params[i].shape(), g.shape()));
                }
                if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of parameter {i} at element {pos} is {}",
                        g.data()[pos]
                    )));
                }
            }
        }
        self.updates += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            let step_size = (lr / c1) as f32;
            let c2_sqrt = c2.sqrt() as f32;
            let eps = self.eps as f32;
            let (b1, b2) = (b1 as f32, b2 as f32);
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((p, &gk), mk), vk) in params[i].data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mk = b1 * *mk + (1.0 - b1) * gk;
                *vk = b2 * *vk + (1.0 - b2) * gk * gk;
                *p -= step_size * *mk / ((*vk).sqrt() / c2_sqrt + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor<f32> {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn clip_scales_to_max() {
        let mut g = vec![Some(t(&[3.0, 0.0]))];
        let f = clip_gradients(&mut g, 2.0);
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
        assert!((global_norm(&g) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn clip_leaves_small_norm() {
        let mut g = vec![Some(t(&[0.6, 0.8]))];
        assert_eq!(clip_gradients(&mut g, 2.0), 1.0);
        assert_eq!(g[0].as_ref().unwrap().data(), &[0.6, 0.8]);
    }

    #[test]
    fn clip_uses_flattened_norm() {
        let mut g = vec![Some(t(&[1.0, 2.0])), None, Some(t(&[2.0, 4.0, 4.0]))];
        let flat: f64 = [1.0f64, 2.0, 2.0, 4.0, 4.0].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((global_norm(&g) - flat).abs() < 1e-12);
        clip_gradients(&mut g, 1.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = t(&[0.5]);
        let mut adam = Adam::new(&[&p]);
        adam.step(&mut [&mut p], &[Some(t(&[1.0]))], 2e-4).unwrap();
        assert!((p.data()[0] - (0.5 - 2e-4)).abs() < 1e-7, "{}", p.data()[0]);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = t(&[0.5, -1.0]);
        let mut adam = Adam::new(&[&p]);
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[Some(t(&[0.0, 0.0]))], 2e-4).unwrap();
        }
        assert_eq!(p.data(), &[0.5, -1.0]);
    }

    #[test]
    fn missing_gradient_skips_param() {
        let mut a = t(&[1.0]);
        let mut b = t(&[1.0]);
        let mut adam = Adam::new(&[&a, &b]);
        adam.step(&mut [&mut a, &mut b], &[Some(t(&[1.0])), None], 0.1).unwrap();
        assert_eq!(b.data(), &[1.0]);
        assert_eq!(adam.param_steps(), &[1, 0]);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut p = t(&[0.5]);
        let mut adam = Adam::new(&[&p]);
        let err = adam.step(&mut [&mut p], &[Some(t(&[f32::NAN]))], 0.1).unwrap_err();
        assert!(err.is_numeric_error());
        assert_eq!(p.data(), &[0.5]);
    }

    #[test]
    fn deterministic_over_many_steps() {
        let run = || {
            let mut p = t(&[0.1, 0.2, 0.3]);
            let mut adam = Adam::new(&[&p]);
            for k in 0..100 {
                let g = t(&[(k as f32).sin(), 0.5, -(k as f32) * 0.01]);
                adam.step(&mut [&mut p], &[Some(g)], 2e-4).unwrap();
            }
            p
        };
        assert_eq!(run().data(), run().data());
    }
}
