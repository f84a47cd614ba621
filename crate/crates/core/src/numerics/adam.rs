use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{GradMap, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Global-norm clipping threshold; `None` disables clipping.
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_clip() -> Option<f64> {
    Some(5.0)
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            clip_norm: default_clip(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState<S> {
    pub cfg: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Tensor<S>, Tensor<S>)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(cfg: AdamConfig) -> Self {
        OptimizerState {
            cfg,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update of every parameter in `stores` that has a gradient
    /// in `grads`. Frozen parameters are never touched.
    pub fn step(&mut self, stores: &mut [&mut ParamStore<S>], grads: &GradMap<S>) -> Result<StepStats> {
        let norm = grads.values().map(|g| g.sq_norm()).sum::<f64>().sqrt();
        let mut factor = 1.0;
        let mut clipped = false;
        if let Some(c) = self.cfg.clip_norm {
            if norm > c && norm.is_finite() {
                factor = c / norm;
                clipped = true;
            }
        }
        for (name, g) in grads {
            if g.data().iter().any(|x| !(x.f64() * factor).is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let lr = self.cfg.lr;
        let eps = self.cfg.eps;
        for store in stores.iter_mut() {
            for p in store.iter_mut() {
                if p.frozen {
                    continue;
                }
                let Some(g) = grads.get(&p.name) else { continue };
                if g.shape() != p.value.shape() {
                    return Err(Error::Shape(format!(
                        "gradient for {} has shape {:?}, parameter {:?}",
                        p.name,
                        g.shape(),
                        p.value.shape()
                    )));
                }
                let (m, v) = self
                    .moments
                    .entry(p.name.clone())
                    .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
                let f = S::of(factor);
                let (b1s, b2s) = (S::of(b1), S::of(b2));
                let (one_b1, one_b2) = (S::of(1.0 - b1), S::of(1.0 - b2));
                let (bc1s, bc2s) = (S::of(bc1), S::of(bc2));
                let (lrs, epss) = (S::of(lr), S::of(eps));
                let vals = p.value.data_mut();
                let (md, vd) = (m.data_mut(), v.data_mut());
                for (i, &gi) in g.data().iter().enumerate() {
                    let gi = gi * f;
                    md[i] = b1s * md[i] + one_b1 * gi;
                    vd[i] = b2s * vd[i] + one_b2 * gi * gi;
                    let mh = md[i] / bc1s;
                    let vh = vd[i] / bc2s;
                    vals[i] -= lrs * mh / (vh.sqrt() + epss);
                }
            }
        }
        Ok(StepStats {
            grad_norm: norm,
            clipped,
        })
    }
}

/// Scales `grads` so their global norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_global_norm<S: Scalar>(grads: &mut GradMap<S>, max_norm: f64) -> f64 {
    let norm = grads.values().map(|g| g.sq_norm()).sum::<f64>().sqrt();
    if norm > max_norm {
        let f = S::of(max_norm / norm);
        for g in grads.values_mut() {
            g.scale_assign(f);
        }
    }
    norm
}
