use crate::matrix::Matrix;
use crate::model::Model;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam with bias correction, keeping first- and second-moment
/// estimates shaped like the model's parameter tensors.
pub struct Adam {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u32,
}

impl Adam {
    pub fn new(model: &Model) -> Self {
        Adam {
            m: model.zero_grads(),
            v: model.zero_grads(),
            t: 0,
        }
    }

    /// Applies one update with the given gradients (one tensor per
    /// parameter, in model order) at learning rate `lr`.
    pub fn step(&mut self, model: &mut Model, grads: &[Matrix], lr: f64) {
        assert_eq!(grads.len(), model.num_params(), "gradient count mismatch");
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = model.param_mut(i).data_mut();
            for ((p, g), (m, v)) in p.iter_mut().zip(g.data()).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
    }
}
