use crate::tensor::Tensor;

/// Adam with exponential learning-rate decay and global-norm clipping over
/// one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub decay: f64,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: usize,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, decay: f64, clip_norm: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            decay,
            clip_norm,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// Learning rate applied at the next step.
    pub fn current_lr(&self) -> f64 {
        self.lr * self.decay.powi(self.step as i32)
    }

    /// Descends along `grads`. Returns the pre-clip global gradient norm.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> f64 {
        assert_eq!(
            params.len(),
            grads.len(),
            "parameter and gradient counts differ"
        );
        let norm = grads
            .iter()
            .flat_map(|g| g.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let scale = if norm > self.clip_norm {
            self.clip_norm / norm
        } else {
            1.0
        };
        let lr = self.current_lr();
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for (i, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gv = gv * scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gv;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gv * gv;
                *pv -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_a_quadratic() {
        let mut x = Tensor::vector(vec![3.0, -2.0]);
        let mut opt = Adam::new(0.1, 1.0, 10.0, &[2]);
        for _ in 0..500 {
            let g = x.map(|v| 2.0 * v);
            opt.step(&mut [&mut x], &[&g]);
        }
        assert!(x.data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn clipping_bounds_the_first_step() {
        let mut x = Tensor::vector(vec![0.0]);
        let mut opt = Adam::new(0.01, 0.999, 10.0, &[1]);
        let norm = opt.step(&mut [&mut x], &[&Tensor::vector(vec![1e6])]);
        assert_eq!(norm, 1e6);
        assert!((x.data()[0] + 0.01).abs() < 1e-9);
        assert!((opt.current_lr() - 0.01 * 0.999).abs() < 1e-15);
    }
}
