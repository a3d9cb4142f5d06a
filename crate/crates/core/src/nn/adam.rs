use super::{Gradients, ParamStore};

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    step: i32,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(learning_rate: f32, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Applies one update; parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.first[id.0], &mut self.second[id.0]);
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Graph, Tensor};

    #[test]
    fn first_step_moves_by_learning_rate() {
        // with bias correction the first step is lr·sign(g)
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(&[3], vec![1.0, -2.0, 0.5]));
        let mut grads = Gradients::new(&store);
        grads.accumulate(id, &[0.3, -4.0, 1e-3]);
        let mut adam = Adam::new(0.01, &store);
        adam.step(&mut store, &grads);
        let p = store.get(id).data();
        assert!((p[0] - 0.99).abs() < 1e-6);
        assert!((p[1] + 1.99).abs() < 1e-6);
        assert!((p[2] - 0.49).abs() < 1e-4);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(&[2], vec![0.25, -0.75]));
        let before = store.clone();
        let mut grads = Gradients::new(&store);
        grads.accumulate(id, &[5.0, -5.0]);
        let mut adam = Adam::new(0.0, &store);
        adam.step(&mut store, &grads);
        assert_eq!(store, before);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(&[1, 2], vec![3.0, -2.0]));
        let mut adam = Adam::new(0.1, &store);
        for _ in 0..500 {
            let mut g = Graph::new(&store);
            let w = g.param(id);
            let sq = g.mul(w, w);
            let seed = Tensor::filled(&[1, 2], 1.0);
            let mut grads = Gradients::new(&store);
            g.backward(sq, &seed, &mut grads);
            adam.step(&mut store, &grads);
        }
        assert!(store.get(id).data().iter().all(|v| v.abs() < 1e-2));
    }
}
