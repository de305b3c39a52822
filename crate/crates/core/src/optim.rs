use ndarray::{Array, Dimension, Zip};

/// Adam moment estimates for one parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam<D: Dimension> {
    m: Array<f64, D>,
    v: Array<f64, D>,
    t: i32,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<D: Dimension> Adam<D> {
    pub fn new(shape: D, lr: f64) -> Self {
        Adam {
            m: Array::zeros(shape.clone()),
            v: Array::zeros(shape),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Moves `param` against `grad` (descent).
    pub fn descend(&mut self, param: &mut Array<f64, D>, grad: &Array<f64, D>) {
        self.step(param, grad, -1.0);
    }

    /// Moves `param` along `grad` (ascent).
    pub fn ascend(&mut self, param: &mut Array<f64, D>, grad: &Array<f64, D>) {
        self.step(param, grad, 1.0);
    }

    fn step(&mut self, param: &mut Array<f64, D>, grad: &Array<f64, D>, sign: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, eps) = (self.lr, self.eps);
        Zip::from(param)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p += sign * lr * mh / (vh.sqrt() + eps);
            });
    }
}
