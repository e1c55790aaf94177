use crate::layers::{Layer, Param};
use crate::scalar::Scalar;

/// Stochastic gradient descent with heavy-ball momentum:
/// `v = momentum * v + g; p -= lr * v`, with `v` starting at the first gradient.
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, model: &mut dyn Layer<T>) {
        let lr = T::from_f64_lossy(self.lr);
        let mu = T::from_f64_lossy(self.momentum);
        let first = self.velocity.is_empty();
        let mut i = 0;
        let velocity = &mut self.velocity;
        model.visit_params(&mut |p: &mut Param<T>| {
            if first {
                velocity.push(p.grad.clone());
            } else {
                for (v, &g) in velocity[i].iter_mut().zip(&p.grad) {
                    *v = mu * *v + g;
                }
            }
            for (w, &v) in p.value.iter_mut().zip(&velocity[i]) {
                *w -= lr * v;
            }
            i += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::tensor::Tensor;

    struct Scalars(Param<f64>);

    impl Layer<f64> for Scalars {
        fn forward(&mut self, x: Tensor<f64>, _: Mode) -> Tensor<f64> {
            x
        }
        fn backward(&mut self, g: Tensor<f64>) -> Tensor<f64> {
            g
        }
        fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<f64>)) {
            f(&mut self.0)
        }
    }

    #[test]
    fn momentum_accumulates_like_heavy_ball() {
        let mut m = Scalars(Param::new(&[1], vec![1.0]));
        let mut opt = Sgd::new(0.1, 0.9);
        m.0.grad = vec![1.0];
        opt.step(&mut m);
        assert!((m.0.value[0] - 0.9).abs() < 1e-15);
        opt.step(&mut m);
        // v = 0.9 * 1 + 1 = 1.9
        assert!((m.0.value[0] - (0.9 - 0.19)).abs() < 1e-15);
    }
}
