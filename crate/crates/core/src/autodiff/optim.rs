use super::params::ParamStore;
use super::tensor::{Scalar, Tensor};

/// Cosine decay from `lr0` at step 0 to `lr_min` at `t_max`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub lr0: f64,
    pub lr_min: f64,
    pub t_max: u64,
}

impl Default for CosineSchedule {
    fn default() -> Self {
        Self {
            lr0: 5e-4,
            lr_min: 5e-7,
            t_max: 1,
        }
    }
}

impl CosineSchedule {
    pub fn lr(&self, t: u64) -> f64 {
        let frac = t.min(self.t_max) as f64 / self.t_max.max(1) as f64;
        self.lr_min + 0.5 * (self.lr0 - self.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: CosineSchedule,
    step: u64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(store: &ParamStore<S>, schedule: CosineSchedule) -> Self {
        let zeros = || store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Learning rate the next update will use.
    pub fn current_lr(&self) -> f64 {
        self.schedule.lr(self.step)
    }

    /// Applies one update from the gradients held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<S>) {
        let lr = self.schedule.lr(self.step);
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let c1 = S::of(1.0 - self.beta1.powi(t));
        let c2 = S::of(1.0 - self.beta2.powi(t));
        let (lr, eps) = (S::of(lr), S::of(self.eps));
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let grad = store.grad(id).data().to_vec();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let value = store.value_mut(id).data_mut();
            for j in 0..value.len() {
                let g = grad[j];
                m[j] = b1 * m[j] + (S::one() - b1) * g;
                v[j] = b2 * v[j] + (S::one() - b2) * g * g;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                value[j] = value[j] - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn schedule_end_points() {
        let s = CosineSchedule {
            t_max: 1000,
            ..CosineSchedule::default()
        };
        assert_eq!(s.lr(0), 5e-4);
        assert!((s.lr(1000) - 5e-7).abs() < 1e-20);
        assert!((s.lr(500) - (5e-7 + 0.5 * (5e-4 - 5e-7))).abs() < 1e-15);
        assert!(s.lr(2000) == s.lr(1000));
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let coef = tape.constant(Tensor::from_f64(&[3], &[3.0, -0.1, 0.0]).unwrap());
        let y = tape.mul(w, coef).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss, &mut store).unwrap();
        let mut adam = Adam::new(&store, CosineSchedule { t_max: 10, ..Default::default() });
        adam.step(&mut store);
        let v = store.value(id).data();
        assert!((v[0] - (1.0 - 5e-4)).abs() < 1e-9);
        assert!((v[1] - (-2.0 + 5e-4)).abs() < 1e-9);
        assert_eq!(v[2], 0.5);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", Tensor::from_f64(&[2], &[0.3, 0.7]).unwrap()).unwrap();
        let before = store.value(id).clone();
        let mut adam = Adam::new(&store, CosineSchedule::default());
        for _ in 0..5 {
            adam.step(&mut store);
        }
        assert_eq!(store.value(id), &before);
    }
}
