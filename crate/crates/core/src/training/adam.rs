//! Adam with bias correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Model;
use crate::tensor::{Float, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-parameter moment estimates, step count and current learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Float = f32> {
    pub(crate) m: BTreeMap<String, Tensor<T>>,
    pub(crate) v: BTreeMap<String, Tensor<T>>,
    pub(crate) step: u64,
    pub(crate) lr: f64,
}

/// Scalar part of [`Adam`], for snapshots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamScalars {
    pub step: u64,
    pub lr: f64,
}

impl<T: Float> Adam<T> {
    pub fn new(model: &Model<T>, lr: f64) -> Self {
        let zeros: BTreeMap<String, Tensor<T>> = model
            .params()
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn scalars(&self) -> AdamScalars {
        AdamScalars {
            step: self.step,
            lr: self.lr,
        }
    }

    pub(crate) fn from_parts(
        m: BTreeMap<String, Tensor<T>>,
        v: BTreeMap<String, Tensor<T>>,
        scalars: AdamScalars,
    ) -> Self {
        Adam {
            m,
            v,
            step: scalars.step,
            lr: scalars.lr,
        }
    }

    /// One update. Parameters missing from `grads` are treated as having zero
    /// gradient (their moments still decay).
    pub fn step(&mut self, model: &mut Model<T>, grads: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let names: Vec<String> = model.params().keys().cloned().collect();
        for name in names {
            let p = model.param(&name).expect("listed parameter");
            let g = grads.get(&name);
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(Error::shape(format!(
                        "gradient of {name} is {:?}, parameter is {:?}",
                        g.shape(),
                        p.shape()
                    )));
                }
            }
            let m = self.m.get_mut(&name).ok_or_else(|| Error::InvalidArgument(format!("no moments for {name}")))?;
            let v = self.v.get_mut(&name).expect("moments come in pairs");
            let mut next = p.clone();
            let (md, vd, pd) = (m.data_mut(), v.data_mut(), next.data_mut());
            for i in 0..pd.len() {
                let gi = g.map_or(0.0, |g| g.data()[i].to_f64().unwrap());
                let mi = ADAM_BETA1 * md[i].to_f64().unwrap() + (1.0 - ADAM_BETA1) * gi;
                let vi = ADAM_BETA2 * vd[i].to_f64().unwrap() + (1.0 - ADAM_BETA2) * gi * gi;
                md[i] = T::from_f64_lossy(mi);
                vd[i] = T::from_f64_lossy(vi);
                let update = self.lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
                pd[i] = T::from_f64_lossy(pd[i].to_f64().unwrap() - update);
            }
            model.set_param(&name, next)?;
        }
        Ok(())
    }
}
