//! Adam with bias correction and classic (coupled) L2 regularization: the
//! decay term is added to the gradient before the moment updates.

use crate::mat::Mat;

use super::tape::TapeError;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Adam {
        assert!(lr >= 0.0, "learning rate must be non-negative");
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// One update over all parameters. Moment buffers are allocated lazily on
    /// the first call and must keep matching shapes afterwards.
    pub fn step(&mut self, params: &mut [Mat], grads: &[Mat]) -> Result<(), TapeError> {
        if params.len() != grads.len() {
            return Err(TapeError::ShapeMismatch {
                op: "adam_step",
                lhs: (params.len(), 0),
                rhs: (grads.len(), 0),
            });
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        for ((p, g), (m, v)) in params
            .iter()
            .zip(grads)
            .zip(self.m.iter().zip(&self.v))
        {
            if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
                return Err(TapeError::ShapeMismatch { op: "adam_step", lhs: p.shape(), rhs: g.shape() });
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for ((pv, &gv0), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()))
            {
                let gv = gv0 + self.weight_decay * *pv;
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
