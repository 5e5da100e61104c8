use serde::{Deserialize, Serialize};

use super::Params;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer. Moment buffers are keyed by visit order, so one
/// optimizer must always be stepped against the same model.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::adam(), lr)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients currently accumulated in `model`.
    pub fn step<P: Params + ?Sized>(&mut self, model: &mut P) {
        self.t += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => model.visit_params(&mut |p, g| {
                for (pi, gi) in p.iter_mut().zip(g.iter()) {
                    *pi -= lr * gi;
                }
            }),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.t as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                let (ms, vs) = (&mut self.m, &mut self.v);
                let mut slot = 0;
                model.visit_params(&mut |p, g| {
                    if ms.len() <= slot {
                        ms.push(vec![0.0; p.len()]);
                        vs.push(vec![0.0; p.len()]);
                    }
                    let (m, v) = (&mut ms[slot], &mut vs[slot]);
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let mh = m[i] / bc1;
                        let vh = v[i] / bc2;
                        p[i] -= lr * mh / (vh.sqrt() + eps);
                    }
                    slot += 1;
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scalar {
        w: [f64; 1],
        g: [f64; 1],
    }

    impl Params for Scalar {
        fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
            f(&mut self.w, &mut self.g)
        }
    }

    #[test]
    fn zero_lr_is_noop() {
        for mut opt in [Optimizer::sgd(0.0), Optimizer::adam(0.0)] {
            let mut s = Scalar { w: [1.5], g: [3.0] };
            opt.step(&mut s);
            assert_eq!(s.w[0], 1.5);
        }
    }

    #[test]
    fn sgd_descends_quadratic() {
        // L(w) = (w - 3)^2
        let mut s = Scalar { w: [0.0], g: [0.0] };
        let mut opt = Optimizer::sgd(0.1);
        let loss = |w: f64| (w - 3.0) * (w - 3.0);
        let mut prev = loss(s.w[0]);
        for _ in 0..2 {
            s.g[0] = 2.0 * (s.w[0] - 3.0);
            opt.step(&mut s);
            let cur = loss(s.w[0]);
            assert!(cur < prev);
            prev = cur;
        }
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut s = Scalar { w: [0.0], g: [5.0] };
        let mut opt = Optimizer::adam(0.01);
        opt.step(&mut s);
        assert!((s.w[0] + 0.01).abs() < 1e-8);
    }
}
