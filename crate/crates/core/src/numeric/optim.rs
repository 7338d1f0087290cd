use super::param::ParamStore;

/// Adam with bias correction. Frozen parameters are skipped.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        if self.m.len() != store.len() {
            self.m = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let grads = p.grad.data().to_vec();
            for (i, (w, g)) in p.value.data_mut().iter_mut().zip(grads).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    fn store_with(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::full(&[3], value)).unwrap();
        s.get_mut(id).grad = Tensor::full(&[3], grad);
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store_with(1.5, 0.0);
        let mut adam = Adam::new(0.1);
        adam.step(&mut s);
        assert_eq!(s.get(s.id("w").unwrap()).value.data(), &[1.5; 3]);
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut s = store_with(1.0, -3.0);
        Adam::new(0.01).step(&mut s);
        let w = s.get(s.id("w").unwrap()).value.data()[0];
        assert!((w - 1.01).abs() < 1e-9);
    }

    #[test]
    fn two_steps_match_unrolled_recurrence() {
        let (lr, g, w0) = (0.05, 0.4, 2.0);
        let mut s = store_with(w0, g);
        let mut adam = Adam::new(lr);
        adam.step(&mut s);
        adam.step(&mut s);
        // hand-unrolled: m1=.1g, v1=.001g^2, m2=.19g, v2=.001999g^2
        let m1 = 0.1 * g;
        let v1 = 0.001 * g * g;
        let w1 = w0 - lr * (m1 / 0.1) / ((v1 / 0.001).sqrt() + 1e-8);
        let m2 = 0.9 * m1 + 0.1 * g;
        let v2 = 0.999 * v1 + 0.001 * g * g;
        let w2 = w1 - lr * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.998001)).sqrt() + 1e-8);
        let w = s.get(s.id("w").unwrap()).value.data()[0];
        assert!((w - w2).abs() < 1e-12, "{w} vs {w2}");
    }

    #[test]
    fn frozen_params_not_updated() {
        let mut s = store_with(1.0, 5.0);
        let id = s.id("w").unwrap();
        s.set_trainable(id, false);
        Adam::new(0.1).step(&mut s);
        assert_eq!(s.get(id).value.data(), &[1.0; 3]);
    }
}
