//! Adam with per-name moment buffers and step counters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: BTreeMap::new(),
        }
    }

    /// One update of the array registered as `name`. Buffers are created on
    /// first use and reset if the array length changes.
    pub fn step(&mut self, name: &str, values: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(values.len(), grads.len());
        let n = values.len();
        let st = self
            .state
            .entry(name.to_string())
            .or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                step: 0,
            });
        if st.m.len() != n {
            *st = Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                step: 0,
            };
        }
        st.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(st.step as i32);
        let c2 = 1.0 - beta2.powi(st.step as i32);
        for i in 0..n {
            let g = grads[i];
            st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
            st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
            values[i] -= lr * (st.m[i] / c1) / ((st.v[i] / c2).sqrt() + eps);
        }
    }
}
