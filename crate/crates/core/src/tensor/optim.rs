use crate::scalar::Scalar;

use super::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Only parameters flagged trainable are touched.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig) -> Self {
        let m: Vec<Vec<T>> = store
            .iter()
            .map(|(_, p)| vec![T::zero(); p.value.numel()])
            .collect();
        Adam {
            cfg,
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr`, reading accumulated gradients.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.step += 1;
        let b1 = T::lit(self.cfg.beta1);
        let b2 = T::lit(self.cfg.beta2);
        let eps = T::lit(self.cfg.eps);
        let bc1 = T::one() - b1.powi(self.step as i32);
        let bc2 = T::one() - b2.powi(self.step as i32);
        let lr = T::lit(lr);
        for (i, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for ((w, &g), (mi, vi)) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap());
        let before = store.get(id).value.clone();
        let mut adam = Adam::new(&store, AdamConfig::default());
        for _ in 0..10 {
            adam.step(&mut store, 1e-2);
        }
        assert_eq!(store.get(id).value, before);
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap());
        store.get_mut(id).grad = Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap();
        store.set_trainable(|_| false);
        let mut adam = Adam::new(&store, AdamConfig::default());
        adam.step(&mut store, 0.1);
        assert_eq!(store.get(id).value.data(), &[1.0, 1.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", Tensor::from_vec(&[1], vec![0.0]).unwrap());
        store.get_mut(id).grad = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let mut adam = Adam::new(&store, AdamConfig::default());
        adam.step(&mut store, 0.1);
        assert!((store.get(id).value.data()[0] + 0.1).abs() < 1e-6);
    }
}
