use std::collections::BTreeMap;

use super::params::{Container, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
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

/// Bias-corrected Adam. Moments are keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = |_: ()| {
            params
                .iter()
                .map(|(k, p)| (k.clone(), Tensor::zeros(p.value.shape())))
                .collect::<BTreeMap<_, _>>()
        };
        Self {
            config,
            t: 0,
            m: zeros(()),
            v: zeros(()),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the stored gradients, then zeroes them.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        self.t = self
            .t
            .checked_add(1)
            .ok_or_else(|| Error::InvalidArgument("Adam step counter overflow".into()))?;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            let (m, v) = (m.data_mut(), v.data_mut());
            let (w, g) = (p.value.data_mut(), p.grad.data_mut());
            for i in 0..w.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                w[i] -= lr * mh / (vh.sqrt() + eps);
                g[i] = 0.0;
            }
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.meta.insert("adam.t".into(), self.t.to_string());
        c.meta.insert("adam.lr".into(), format!("{:e}", self.config.lr));
        for (k, m) in &self.m {
            c.tensors.insert(format!("adam.m/{k}"), m.clone());
        }
        for (k, v) in &self.v {
            c.tensors.insert(format!("adam.v/{k}"), v.clone());
        }
        c
    }

    pub fn from_container(config: AdamConfig, c: &Container) -> Result<Self> {
        let t = c
            .meta
            .get("adam.t")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint("missing adam.t".into()))?;
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (k, tensor) in &c.tensors {
            if let Some(name) = k.strip_prefix("adam.m/") {
                m.insert(name.to_string(), tensor.clone());
            } else if let Some(name) = k.strip_prefix("adam.v/") {
                v.insert(name.to_string(), tensor.clone());
            }
        }
        Ok(Self { config, t, m, v })
    }
}
