use std::collections::{BTreeMap, HashMap};

use crate::tensor::Parameters;

/// Adam over named parameter arrays.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            moments: HashMap::new(),
        }
    }

    /// Applies one update using `grads * scale`. `grads` must share the
    /// naming structure of `params`.
    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &P, scale: f64) {
        let mut flat: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        grads.visit("", &mut |name, _, data| {
            flat.insert(name.to_string(), data.iter().map(|g| g * scale).collect());
        });
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let moments = &mut self.moments;
        params.visit_mut("", &mut |name, _, data| {
            let Some(g) = flat.get(name) else { return };
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; data.len()], vec![0.0; data.len()]));
            for i in 0..data.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
}

pub fn squared_norm<P: Parameters + ?Sized>(grads: &P) -> f64 {
    let mut total = 0.0;
    grads.visit("", &mut |_, _, data| {
        total += data.iter().map(|g| g * g).sum::<f64>()
    });
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Affine;

    #[test]
    fn adam_minimises_a_quadratic() {
        // minimise sum (w - 3)^2 over a 1x1 affine map
        let mut p = Affine::zeros(1, 1);
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let mut g = p.zeros_like();
            g.weight[[0, 0]] = 2.0 * (p.weight[[0, 0]] - 3.0);
            g.bias[0] = 2.0 * (p.bias[0] + 1.0);
            opt.step(&mut p, &g, 1.0);
        }
        assert!((p.weight[[0, 0]] - 3.0).abs() < 1e-3);
        assert!((p.bias[0] + 1.0).abs() < 1e-3);
    }
}
