use crate::{ParamStore, Tensor};

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
/// `v <- momentum * v + (g + wd * w)`, `w <- w - lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(store: &ParamStore, learning_rate: f64, weight_decay: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            weight_decay,
            momentum,
            velocity: store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// Updates every unfrozen parameter, then zeroes all gradients.
    pub fn step(&mut self, store: &mut ParamStore) {
        let (lr, wd, mu) = (self.learning_rate, self.weight_decay, self.momentum);
        for (p, v) in store.iter_mut().zip(&mut self.velocity) {
            if !p.frozen {
                let w = p.value.data_mut();
                for ((w, v), g) in w.iter_mut().zip(v.data_mut()).zip(p.grad.data()) {
                    *v = mu * *v + (g + wd * *w);
                    *w -= lr * *v;
                }
            }
        }
        store.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(w)).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore, g: f64) {
        s.iter_mut().next().unwrap().grad.data_mut()[0] = g;
    }

    fn value(s: &ParamStore) -> f64 {
        s.iter().next().unwrap().1.value.data()[0]
    }

    #[test]
    fn plain_step() {
        let mut s = one_param(1.0);
        let mut opt = Sgd::new(&s, 0.1, 0.0, 0.0);
        set_grad(&mut s, 0.5);
        opt.step(&mut s);
        assert!((value(&s) - 0.95).abs() < 1e-15);
        assert_eq!(s.iter().next().unwrap().1.grad.data()[0], 0.0);
    }

    #[test]
    fn weight_decay_alone_shrinks_geometrically() {
        let mut s = one_param(2.0);
        let (lr, wd) = (0.01, 1e-4);
        let mut opt = Sgd::new(&s, lr, wd, 0.0);
        for k in 1..=5 {
            opt.step(&mut s);
            let expected = 2.0 * (1.0 - lr * wd).powi(k);
            assert!((value(&s) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn momentum_matches_unrolled_recurrence() {
        let (lr, wd, mu) = (0.1, 0.01, 0.9);
        let (w0, g1, g2) = (1.0, 0.5, -0.25);
        let mut s = one_param(w0);
        let mut opt = Sgd::new(&s, lr, wd, mu);
        set_grad(&mut s, g1);
        opt.step(&mut s);
        set_grad(&mut s, g2);
        opt.step(&mut s);

        let v1 = g1 + wd * w0;
        let w1 = w0 - lr * v1;
        let v2 = mu * v1 + (g2 + wd * w1);
        let w2 = w1 - lr * v2;
        assert_eq!(value(&s), w2);
    }

    #[test]
    fn frozen_parameters_untouched() {
        let mut s = one_param(1.0);
        s.iter_mut().next().unwrap().frozen = true;
        let mut opt = Sgd::new(&s, 0.1, 0.1, 0.9);
        for _ in 0..100 {
            set_grad(&mut s, 3.0);
            opt.step(&mut s);
        }
        assert_eq!(value(&s), 1.0);
    }
}
