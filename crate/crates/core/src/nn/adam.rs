use serde::{Deserialize, Serialize};

use super::{Gradients, Mlp, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, flattened in [`Mlp::flatten`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    /// Applies one bias-corrected update to `net` in place.
    pub fn update(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<(), NnError> {
        let n = net.num_params();
        if self.m.len() != n || self.v.len() != n {
            return Err(NnError::ShapeMismatch(format!(
                "optimizer state has {} entries, network has {n} parameters",
                self.m.len()
            )));
        }
        if grads.layers.len() != net.layers.len()
            || grads
                .layers
                .iter()
                .zip(&net.layers)
                .any(|(g, l)| g.weight.dim() != l.weight.dim() || g.bias.len() != l.bias.len())
        {
            return Err(NnError::ShapeMismatch("gradients do not match the network".into()));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        let mut k = 0;
        for (l, g) in net.layers.iter_mut().zip(&grads.layers) {
            let params = l.weight.iter_mut().chain(l.bias.iter_mut());
            let gs = g.weight.iter().chain(g.bias.iter());
            for (p, &gi) in params.zip(gs) {
                let m = c.beta1 * self.m[k] + (1.0 - c.beta1) * gi;
                let v = c.beta2 * self.v[k] + (1.0 - c.beta2) * gi * gi;
                self.m[k] = m;
                self.v[k] = v;
                *p -= c.lr * (m / bc1) / ((v / bc2).sqrt() + c.eps);
                k += 1;
            }
        }
        Ok(())
    }
}

/// Pure form of [`AdamState::update`].
pub fn adam_step(state: &AdamState, params: &Mlp, grads: &Gradients) -> Result<(Mlp, AdamState), NnError> {
    let mut s = state.clone();
    let mut p = params.clone();
    s.update(&mut p, grads)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Architecture};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> Mlp {
        Mlp::new(
            &Architecture::stack(&[3, 4, 1], Activation::Relu),
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let n = net();
        let s = AdamState::new(AdamConfig::default(), n.num_params());
        let (p, s2) = adam_step(&s, &n, &Gradients::zeros_like(&n)).unwrap();
        assert_eq!(p, n);
        assert_eq!(s2.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let n = net();
        let mut g = Gradients::zeros_like(&n);
        g.layers[0].weight[[0, 0]] = 3.0;
        g.layers[1].bias[0] = -0.01;
        let cfg = AdamConfig::default();
        let (p, _) = adam_step(&AdamState::new(cfg, n.num_params()), &n, &g).unwrap();
        let d0 = p.layers[0].weight[[0, 0]] - n.layers[0].weight[[0, 0]];
        let d1 = p.layers[1].bias[0] - n.layers[1].bias[0];
        assert!((d0 + cfg.lr).abs() < 1e-9);
        assert!((d1 - cfg.lr).abs() < 1e-9);
    }

    #[test]
    fn quadratic_converges() {
        // minimise sum(w^2) over a linear layer's parameters
        let mut n = net();
        let mut s = AdamState::new(
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            n.num_params(),
        );
        for _ in 0..2000 {
            let mut g = Gradients::zeros_like(&n);
            for (gl, l) in g.layers.iter_mut().zip(&n.layers) {
                gl.weight = &l.weight * 2.0;
                gl.bias = &l.bias * 2.0;
            }
            s.update(&mut n, &g).unwrap();
        }
        assert!(n.flatten().iter().all(|w| w.abs() < 1e-3));
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let run = || {
            let mut n = net();
            let mut s = AdamState::new(AdamConfig::default(), n.num_params());
            for k in 0..10 {
                let mut g = Gradients::zeros_like(&n);
                g.layers[0].weight.mapv_inplace(|_| (k as f64).sin());
                s.update(&mut n, &g).unwrap();
            }
            (n.flatten(), s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let n = net();
        let s = AdamState::new(AdamConfig::default(), 3);
        assert!(adam_step(&s, &n, &Gradients::zeros_like(&n)).is_err());
    }
}
