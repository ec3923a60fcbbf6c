//! Adam over a fixed list of parameter groups.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    /// `sizes` gives the length of each parameter group.
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Restores saved moments; `None` if group sizes disagree.
    pub fn from_state(config: AdamConfig, step: u64, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>) -> Option<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return None;
        }
        Some(Self { config, step, m, v })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f32>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f32>] {
        &self.v
    }

    /// One update. `groups` yields `(params, grads)` in the order given to
    /// [`Adam::new`].
    pub fn step<'a, I>(&mut self, groups: I)
    where
        I: IntoIterator<Item = (&'a mut [f32], &'a [f32])>,
    {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step.min(i32::MAX as u64) as i32;
        let c1 = 1.0 - (beta1 as f64).powi(t);
        let c2 = 1.0 - (beta2 as f64).powi(t);
        let mut n = 0;
        for (gi, (p, g)) in groups.into_iter().enumerate() {
            let (m, v) = (&mut self.m[gi], &mut self.v[gi]);
            assert!(p.len() == m.len() && g.len() == m.len(), "parameter group {gi} changed size");
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mh = m[i] as f64 / c1;
                let vh = v[i] as f64 / c2;
                p[i] -= (lr as f64 * mh / (vh.sqrt() + eps as f64)) as f32;
            }
            n += 1;
        }
        assert_eq!(n, self.m.len(), "wrong number of parameter groups");
    }
}
