use indexmap::IndexMap;

use super::{Real, Tensor, TensorError};

/// Hyper-parameters of SGD with momentum and L2 weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdParams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// SGD with momentum. Velocity buffers are keyed by parameter name and
/// created zeroed on first use.
///
/// `v ← momentum·v + grad + weight_decay·param`, then `param ← param − lr·v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum<T> {
    pub hyper: SgdParams,
    velocity: IndexMap<String, Tensor<T>>,
}

impl<T: Real> SgdMomentum<T> {
    pub fn new(hyper: SgdParams) -> Self {
        Self {
            hyper,
            velocity: IndexMap::new(),
        }
    }

    pub fn with_velocities(hyper: SgdParams, velocity: IndexMap<String, Tensor<T>>) -> Self {
        Self { hyper, velocity }
    }

    pub fn velocities(&self) -> &IndexMap<String, Tensor<T>> {
        &self.velocity
    }

    /// One update of a single parameter. `decay` selects whether the weight
    /// decay term applies to it.
    pub fn step(&mut self, name: &str, param: &mut Tensor<T>, grad: &Tensor<T>, decay: bool) -> Result<(), TensorError> {
        if grad.shape() != param.shape() {
            return Err(shape_error("grad", param, grad));
        }
        let v = self
            .velocity
            .entry(name.to_owned())
            .or_insert_with(|| Tensor::zeros(param.shape()));
        if v.shape() != param.shape() {
            return Err(shape_error("velocity", param, v));
        }
        let lr = T::from_f64(self.hyper.learning_rate);
        let mu = T::from_f64(self.hyper.momentum);
        let wd = if decay {
            T::from_f64(self.hyper.weight_decay)
        } else {
            T::zero()
        };
        for ((p, vel), &g) in param.data_mut().iter_mut().zip(v.data_mut()).zip(grad.data()) {
            *vel = mu * *vel + g + wd * *p;
            *p -= lr * *vel;
        }
        Ok(())
    }
}

fn shape_error<T: Real>(what: &'static str, param: &Tensor<T>, other: &Tensor<T>) -> TensorError {
    let (a, b) = (param.shape(), other.shape());
    let dim = if a.batch != b.batch {
        "batch"
    } else if a.channels != b.channels {
        "channels"
    } else if a.height != b.height {
        "height"
    } else {
        "width"
    };
    TensorError::ShapeMismatch {
        op: if what == "grad" { "sgd_step (grad)" } else { "sgd_step (velocity)" },
        dim,
        left: a.numel(),
        right: b.numel(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn reduces_to_plain_gradient_descent() {
        let mut opt = SgdMomentum::new(SgdParams {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        });
        let mut p = t(2.0);
        opt.step("w", &mut p, &t(3.0), true).unwrap();
        assert!((p.item() - 1.7).abs() < 1e-15);
        opt.step("w", &mut p, &t(1.0), true).unwrap();
        assert!((p.item() - 1.6).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut opt = SgdMomentum::new(SgdParams {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        });
        let mut p = t(-4.25);
        for _ in 0..5 {
            opt.step("w", &mut p, &t(0.0), true).unwrap();
        }
        assert_eq!(p.item(), -4.25);
    }

    #[test]
    fn quadratic_recurrence() {
        // f(w) = 0.5·a·w², grad = a·w
        let (a, lr, mu, wd) = (3.0, 0.05, 0.9, 0.01);
        let mut opt = SgdMomentum::new(SgdParams {
            learning_rate: lr,
            momentum: mu,
            weight_decay: wd,
        });
        let mut p = t(1.0);
        let (mut w, mut v) = (1.0f64, 0.0f64);
        for _ in 0..2 {
            let g = t(a * p.item());
            opt.step("w", &mut p, &g, true).unwrap();
            v = mu * v + a * w + wd * w;
            w -= lr * v;
        }
        // two steps by hand: v1 = 3.01, w1 = 0.8495; v2 = 0.9·3.01 + 3.01·0.8495
        assert!((w - (0.8495 - 0.05 * (0.9 * 3.01 + 3.01 * 0.8495))).abs() < 1e-12);
        assert!((p.item() - w).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut opt = SgdMomentum::<f32>::new(SgdParams {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        });
        let mut p = Tensor::zeros([1, 1, 2, 2]);
        let g = Tensor::zeros([1, 1, 2, 3]);
        assert!(opt.step("w", &mut p, &g, false).is_err());
    }
}
