use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::network::{Backbone, NetConfig};
use crate::numerics::{Element, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Pretrained parameters as ordered `(name, shape, values)` records plus the
/// topology they were trained with. Values are always held in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: NetConfig,
    pub records: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn from_backbone<T: Element>(config: &NetConfig, backbone: &Backbone<T>) -> Self {
        let mut records = Vec::new();
        backbone.for_each_param(|name, t| {
            records.push(ParamRecord {
                name,
                shape: t.shape().to_vec(),
                values: t.as_f64_vec(),
            })
        });
        Self {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            records,
        }
    }

    /// Rebuilds parameters for `expected`. Any disagreement in topology, names
    /// or shapes is reported in full rather than at the first difference.
    pub fn to_backbone<T: Element>(&self, expected: &NetConfig) -> Result<Backbone<T>> {
        let mut diffs = Vec::new();
        if self.version != CHECKPOINT_VERSION {
            diffs.push(format!("version {} (expected {CHECKPOINT_VERSION})", self.version));
        }
        if &self.config != expected {
            diffs.push(format!("config {:?} vs expected {:?}", self.config, expected));
        }
        let mut backbone = Backbone::<T>::zeros(expected)?;
        let mut slots = Vec::new();
        backbone.for_each_param(|name, t| slots.push((name, t.shape().to_vec())));
        if slots.len() != self.records.len() {
            diffs.push(format!(
                "{} parameter records (expected {})",
                self.records.len(),
                slots.len()
            ));
        }
        for ((name, shape), rec) in slots.iter().zip(&self.records) {
            if name != &rec.name {
                diffs.push(format!("record `{}` where `{name}` was expected", rec.name));
            } else if shape != &rec.shape {
                diffs.push(format!("`{name}` has shape {:?}, expected {shape:?}", rec.shape));
            }
        }
        if !diffs.is_empty() {
            return Err(Error::Topology(diffs.join("; ")));
        }
        let mut records = self.records.iter();
        let mut failure = None;
        backbone.for_each_param_mut(|_, t| {
            let rec = records.next().expect("record count checked");
            match Tensor::from_f64(&rec.shape, &rec.values) {
                Ok(v) => *t = v,
                Err(e) => failure = Some(e),
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(backbone),
        }
    }
}
