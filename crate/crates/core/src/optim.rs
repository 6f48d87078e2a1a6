//! Adam with per-parameter step sizes.

#[derive(Debug, Clone)]
pub struct Adam {
    lr: Vec<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    /// `lr[i]` is the step size of parameter `i`, in that parameter's units.
    pub fn new(lr: Vec<f64>) -> Self {
        let n = lr.len();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-12,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.lr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lr.is_empty()
    }

    /// Scales every step size by `factor`.
    pub fn decay(&mut self, factor: f64) {
        for lr in &mut self.lr {
            *lr *= factor;
        }
    }

    /// Parameter increments for gradient `g` (to be added to the parameters).
    pub fn step(&mut self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        g.iter()
            .enumerate()
            .map(|(i, &gi)| {
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * gi;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = self.m[i] / c1;
                let v_hat = self.v[i] / c2;
                -self.lr[i] * m_hat / (v_hat.sqrt() + self.eps)
            })
            .collect()
    }

    /// Like [`Adam::step`] but only for the listed parameter indices; moments
    /// of the others are left untouched. Each entry keeps its own step count.
    pub fn step_sparse(&mut self, idx: &[usize], g: &[f64], counts: &mut [i32]) -> Vec<f64> {
        idx.iter()
            .zip(g)
            .map(|(&i, &gi)| {
                counts[i] += 1;
                let t = counts[i];
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * gi;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = self.m[i] / (1.0 - self.beta1.powi(t));
                let v_hat = self.v[i] / (1.0 - self.beta2.powi(t));
                -self.lr[i] * m_hat / (v_hat.sqrt() + self.eps)
            })
            .collect()
    }
}
