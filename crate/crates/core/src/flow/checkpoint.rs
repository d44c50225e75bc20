//! Policy checkpoints: JSON with a config header and base64 little-endian
//! `f64` tensors, plus a content hash over everything else.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::autodiff::Mat;
use super::context::{ContextEncoder, ContextSource, EncoderConfig};
use super::matching::SignConvention;
use super::net::{NetConfig, VectorFieldNet};
use super::policy::FlowPolicy;
use super::scaler::ActionScaler;
use super::FlowError;
use crate::io::seed::content_hash;

pub const CHECKPOINT_SCHEMA: &str = "checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBlob {
    pub name: String,
    pub shape: [usize; 2],
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContextHeader {
    Entities,
    Encoder { config: EncoderConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub net: NetConfig,
    pub scaler: ActionScaler,
    pub context: ContextHeader,
    pub sign: SignConvention,
    pub integration_steps: usize,
    pub tensors: Vec<TensorBlob>,
    pub content_hash: String,
}

fn encode(name: &str, m: &Mat) -> TensorBlob {
    let bytes: Vec<u8> = m.iter().flat_map(|v| v.to_le_bytes()).collect();
    TensorBlob { name: name.to_string(), shape: [m.nrows(), m.ncols()], data: STANDARD.encode(bytes) }
}

fn decode(b: &TensorBlob) -> Result<Mat, FlowError> {
    let bad = |m: String| FlowError::Checkpoint(format!("tensor {}: {m}", b.name));
    let bytes = STANDARD.decode(&b.data).map_err(|e| bad(e.to_string()))?;
    if bytes.len() != b.shape[0] * b.shape[1] * 8 {
        return Err(bad(format!("{} bytes for shape {:?}", bytes.len(), b.shape)));
    }
    let vals = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Array2::from_shape_vec((b.shape[0], b.shape[1]), vals).map_err(|e| bad(e.to_string()))
}

impl Checkpoint {
    fn hash_body(&self) -> String {
        let body = Self { content_hash: String::new(), ..self.clone() };
        content_hash(serde_json::to_string(&body).expect("serializable").as_bytes())
    }

    pub fn from_policy(p: &FlowPolicy) -> Self {
        let tensors: Vec<TensorBlob> = p.net.names().iter().zip(p.net.params()).map(|(n, m)| encode(n, m)).collect();
        // Encoder weights travel with the network tensors.
        let context = match &p.context {
            ContextSource::Entities => ContextHeader::Entities,
            ContextSource::Encoder(e) => ContextHeader::Encoder { config: e.cfg.clone() },
        };
        let mut c = Self {
            schema: CHECKPOINT_SCHEMA.to_string(),
            net: p.net.config().clone(),
            scaler: p.scaler.clone(),
            context,
            sign: p.sign,
            integration_steps: p.integration_steps,
            tensors,
            content_hash: String::new(),
        };
        c.content_hash = c.hash_body();
        c
    }

    pub fn to_policy(&self) -> Result<FlowPolicy, FlowError> {
        if self.schema != CHECKPOINT_SCHEMA {
            return Err(FlowError::Checkpoint(format!("unsupported schema {:?}", self.schema)));
        }
        if self.hash_body() != self.content_hash {
            return Err(FlowError::Checkpoint("content hash mismatch".into()));
        }
        let mut net = VectorFieldNet::new(self.net.clone())?;
        let n = net.params().len();
        if self.tensors.len() != n {
            return Err(FlowError::Checkpoint(format!("expected {n} tensors, found {}", self.tensors.len())));
        }
        for (blob, name) in self.tensors.iter().zip(net.names()) {
            if &blob.name != name {
                return Err(FlowError::Checkpoint(format!("expected tensor {name}, found {}", blob.name)));
            }
        }
        let params = self.tensors.iter().map(decode).collect::<Result<Vec<_>, _>>()?;
        net.set_params(params)?;
        let context = match (&self.context, net.encoder()) {
            (ContextHeader::Entities, None) => ContextSource::Entities,
            (ContextHeader::Encoder { config }, Some(e)) => {
                ContextSource::Encoder(ContextEncoder::from_params(config.clone(), e.params)?)
            }
            _ => return Err(FlowError::Checkpoint("context header disagrees with the network".into())),
        };
        Ok(FlowPolicy {
            net,
            scaler: self.scaler.clone(),
            context,
            sign: self.sign,
            integration_steps: self.integration_steps,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    pub fn save(&self, path: &Path) -> Result<(), FlowError> {
        std::fs::write(path, self.to_json()).map_err(|e| FlowError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, FlowError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| FlowError::Checkpoint(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| FlowError::Checkpoint(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::net::NetInit;
    use crate::flow::policy::policy_net_config;

    fn policy(context: ContextSource) -> FlowPolicy {
        let mut cfg = policy_net_config(&context, 4);
        cfg.init = NetInit::RandomHead;
        FlowPolicy {
            net: VectorFieldNet::new(cfg).unwrap(),
            scaler: ActionScaler { center: vec![0.0; 3], scale: vec![20.0, 20.0, 1.0], degenerate: vec![false; 3] },
            context,
            sign: SignConvention::default(),
            integration_steps: 10,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for ctx in [ContextSource::Entities, ContextSource::Encoder(ContextEncoder::random(EncoderConfig::default()))] {
            let p = policy(ctx);
            let c = Checkpoint::from_policy(&p);
            let back: Checkpoint = serde_json::from_str(&c.to_json()).unwrap();
            assert_eq!(back.to_policy().unwrap(), p);
            assert_eq!(back.to_json(), c.to_json());
        }
    }

    #[test]
    fn tampering_is_detected() {
        let mut c = Checkpoint::from_policy(&policy(ContextSource::Entities));
        c.integration_steps = 5;
        assert!(matches!(c.to_policy(), Err(FlowError::Checkpoint(_))));
    }
}
