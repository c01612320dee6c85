use super::params::{Grads, ParamStore};
use super::{Real, Tensor};

/// Decoupled-weight-decay Adam.
#[derive(Clone, Debug)]
pub struct AdamW<F> {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> AdamW<F> {
    pub fn new(store: &ParamStore<F>, lr: f64, weight_decay: f64) -> Self {
        let zeros = || store.iter().map(|(_, t)| vec![F::zero(); t.len()]).collect::<Vec<_>>();
        Self { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &Grads<F>) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let bc1 = F::of(1.0 - self.beta1.powi(t));
        let bc2 = F::of(1.0 - self.beta2.powi(t));
        let lr = F::of(self.lr);
        let decay = F::one() - F::of(self.lr * self.weight_decay);
        let eps = F::of(self.eps);
        let one = F::one();
        for id in store.ids().collect::<Vec<_>>() {
            let i = id.index();
            let g = grads.get(id);
            let p = store.get_mut(id).data_mut();
            for (((p, g), m), v) in p.iter_mut().zip(g).zip(self.m[i].iter_mut()).zip(self.v[i].iter_mut()) {
                *m = b1 * *m + (one - b1) * *g;
                *v = b2 * *v + (one - b2) * *g * *g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p = *p * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    /// Moment buffers as named tensors for checkpointing.
    pub fn state_tensors(&self, store: &ParamStore<F>) -> Vec<(String, Tensor<F>)> {
        let mut out = vec![(
            "adamw.step".to_string(),
            Tensor::new(&[1], vec![F::of(self.step as f64)]).expect("scalar"),
        )];
        for (i, (name, t)) in store.iter().enumerate() {
            out.push((format!("adamw.m.{name}"), Tensor::new(t.shape(), self.m[i].clone()).expect("shape")));
            out.push((format!("adamw.v.{name}"), Tensor::new(t.shape(), self.v[i].clone()).expect("shape")));
        }
        out
    }

    /// Restores state written by [`AdamW::state_tensors`]. Returns false if
    /// any buffer is missing.
    pub fn load_state(&mut self, store: &ParamStore<F>, lookup: impl Fn(&str) -> Option<Tensor<F>>) -> bool {
        let Some(step) = lookup("adamw.step") else { return false };
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, t) in store.iter() {
            match (lookup(&format!("adamw.m.{name}")), lookup(&format!("adamw.v.{name}"))) {
                (Some(a), Some(b)) if a.len() == t.len() && b.len() == t.len() => {
                    m.push(a.into_data());
                    v.push(b.into_data());
                }
                _ => return false,
            }
        }
        self.step = step.item().f64().round() as u64;
        self.m = m;
        self.v = v;
        true
    }
}
