use super::{Scalar, Tensor};

/// Trainable tensor with its gradient accumulator and momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub momentum_buffer: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        let momentum_buffer = Tensor::zeros(value.shape());
        Parameter {
            value,
            grad,
            momentum_buffer,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    /// Adds `g` into the gradient accumulator. Panics on shape mismatch,
    /// which can only come from a layer/parameter pairing bug.
    pub fn accumulate(&mut self, g: &Tensor<T>) {
        self.grad
            .add_assign(g)
            .expect("gradient shape must match parameter shape");
    }

    pub fn cast<U: Scalar>(&self) -> Parameter<U> {
        Parameter {
            value: self.value.cast(),
            grad: self.grad.cast(),
            momentum_buffer: self.momentum_buffer.cast(),
        }
    }
}

/// Heavy-ball SGD: `v ← μ·v + g + λ·w`, `w ← w − lr·v`, then `g ← 0`.
pub fn sgd_momentum_step<'a, T: Scalar>(
    params: impl IntoIterator<Item = &'a mut Parameter<T>>,
    lr: T,
    momentum: T,
    weight_decay: T,
) {
    for p in params {
        let v = p.momentum_buffer.data_mut();
        let w = p.value.data_mut();
        let g = p.grad.data_mut();
        for i in 0..w.len() {
            v[i] = momentum * v[i] + g[i] + weight_decay * w[i];
            w[i] = w[i] - lr * v[i];
            g[i] = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(v: f64) -> Parameter<f64> {
        Parameter::new(Tensor::scalar(v))
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = scalar(1.5);
        sgd_momentum_step([&mut p], 0.1, 0.9, 0.0);
        assert_eq!(p.value.data(), &[1.5]);
    }

    #[test]
    fn plain_step() {
        let mut p = scalar(0.0);
        p.grad.data_mut()[0] = 1.0;
        sgd_momentum_step([&mut p], 0.1, 0.0, 0.0);
        assert_relative_eq!(p.value.data()[0], -0.1);
        assert_eq!(p.grad.data(), &[0.0]);
    }

    #[test]
    fn momentum_recurrence() {
        // v1 = 1, w1 = -0.1; v2 = 0.9 + 1 = 1.9, w2 = -0.1 - 0.19 = -0.29
        let mut p = scalar(0.0);
        for _ in 0..2 {
            p.grad.data_mut()[0] = 1.0;
            sgd_momentum_step([&mut p], 0.1, 0.9, 0.0);
        }
        assert_relative_eq!(p.value.data()[0], -0.29, epsilon = 1e-12);
        assert_relative_eq!(p.momentum_buffer.data()[0], 1.9, epsilon = 1e-12);
    }

    #[test]
    fn weight_decay_enters_velocity() {
        let mut p = scalar(2.0);
        sgd_momentum_step([&mut p], 0.5, 0.9, 0.1);
        assert_relative_eq!(p.value.data()[0], 2.0 - 0.5 * 0.2, epsilon = 1e-12);
    }
}
