use ndarray::ArrayD;

use crate::model::DocIq;

/// Step decay: `lr * decay^floor(epoch / step_size)`.
pub fn lr_schedule(lr: f64, decay: f64, step_size: usize, epoch: usize) -> f64 {
    lr * decay.powi((epoch / step_size.max(1)) as i32)
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(model: &DocIq) -> Self {
        let zeros: Vec<ArrayD<f64>> = model
            .named_params()
            .iter()
            .map(|(_, p)| ArrayD::zeros(p.raw_dim()))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            v: zeros.clone(),
            m: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut DocIq, grads: &DocIq, lr: f64) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let params = model.named_params_mut();
        let gs = grads.named_params();
        for ((((_, mut p), (_, g)), m), v) in params.into_iter().zip(gs).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut p)
                .and(&g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}
