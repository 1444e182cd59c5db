//! Adam with bias correction, plus global-norm gradient clipping.

use indexmap::IndexMap;

use super::params::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// One optimizer instance over a fixed list of parameter names.
///
/// Two instances tracking the same parameters keep fully separate moment
/// buffers, which is what the alternating main/orthogonality schedule needs.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: IndexMap<String, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet, names: &[String]) -> Result<Self> {
        let mut moments = IndexMap::new();
        for name in names {
            let n = params.value(name)?.len();
            moments.insert(
                name.clone(),
                Moments {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                },
            );
        }
        Ok(AdamState {
            config,
            step: 0,
            moments,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn tracked(&self) -> impl Iterator<Item = &str> {
        self.moments.keys().map(String::as_str)
    }

    /// Serialised moment buffers and step counter, for byte-level comparison.
    pub fn state_bytes(&self) -> Vec<u8> {
        let mut out = self.step.to_le_bytes().to_vec();
        for mom in self.moments.values() {
            out.extend(mom.m.iter().flat_map(|x| x.to_le_bytes()));
            out.extend(mom.v.iter().flat_map(|x| x.to_le_bytes()));
        }
        out
    }

    /// Applies one bias-corrected update to every tracked, unfrozen parameter
    /// and clears their gradients. Frozen parameters are left untouched.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        for name in self.moments.keys() {
            let p = params.get(name)?;
            if p.requires_grad && p.grad.is_none() {
                return Err(Error::MissingGrad(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (name, mom) in self.moments.iter_mut() {
            let p = params.get_mut(name)?;
            if !p.requires_grad {
                continue;
            }
            let grad = p.grad.take().expect("checked above");
            let values = p.value.values_mut();
            for (i, g) in grad.values().iter().enumerate() {
                mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * g;
                mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * g * g;
                let m_hat = mom.m[i] / bc1;
                let v_hat = mom.v[i] / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Global L2 norm of the gradients of `names` (frozen or gradient-less
/// parameters count as zero).
pub fn grad_norm(params: &ParamSet, names: &[String]) -> Result<f64> {
    let mut total = 0.0;
    for name in names {
        let p = params.get(name)?;
        if let (true, Some(g)) = (p.requires_grad, &p.grad) {
            total += g.norm_sq();
        }
    }
    Ok(total.sqrt())
}

/// Rescales the gradients of `names` so their global norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ParamSet, names: &[String], max_norm: f64) -> Result<f64> {
    let norm = grad_norm(params, names)?;
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for name in names {
            let p = params.get_mut(name)?;
            if let (true, Some(g)) = (p.requires_grad, p.grad.as_mut()) {
                g.values_mut().iter_mut().for_each(|x| *x *= factor);
            }
        }
    }
    Ok(norm)
}
