use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GeneratorConfig;
use crate::dataset::{theta_of_dataset, Dataset, Schema};
use crate::error::{Error, Result};
use crate::space::{phi_of_theta, PerpSampling, SafeSpace, SafeSpaceDescriptor, SafeStatistics};

/// Generator identity as recorded on a card.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CardGenerator {
    pub kind: String,
    pub params: serde_json::Value,
}

impl CardGenerator {
    pub fn from_config(cfg: &GeneratorConfig) -> Self {
        let mut params = serde_json::to_value(cfg).expect("serializable config");
        let kind = params
            .as_object_mut()
            .and_then(|o| o.remove("kind"))
            .and_then(|k| k.as_str().map(String::from))
            .unwrap_or_default();
        CardGenerator { kind, params }
    }

    /// Rebuilds the config for the built-in kinds.
    pub fn to_config(&self) -> Result<GeneratorConfig> {
        let mut v = self.params.clone();
        match v.as_object_mut() {
            Some(o) => {
                o.insert("kind".into(), serde_json::Value::String(self.kind.clone()));
            }
            None => return Err(Error::InvalidConfig("generator params must be an object".into())),
        }
        Ok(serde_json::from_value(v)?)
    }
}

/// The triplet of safe statistic values, safe space, and generator: a label
/// for a synthetic dataset stating which statistics went into it.
///
/// Never contains records or the fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorCard {
    pub psi: Vec<f64>,
    pub workload: Vec<Vec<String>>,
    pub schema: Schema,
    pub schema_fingerprint: String,
    pub safespace_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perp_sampling: Option<PerpSampling>,
    pub generator: CardGenerator,
    /// Provenance strings; timestamps live here and nowhere else.
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

pub fn make_card(d_real: &Dataset, safespace: &SafeSpace, config: &GeneratorConfig) -> Result<GeneratorCard> {
    safespace.check_schema(d_real.schema())?;
    let psi = phi_of_theta(safespace, &theta_of_dataset(d_real)?)?;
    Ok(GeneratorCard::new(safespace, psi, CardGenerator::from_config(config)))
}

impl GeneratorCard {
    pub fn new(ss: &SafeSpace, psi: SafeStatistics, generator: CardGenerator) -> Self {
        let schema = ss.schema().clone();
        let mut metadata = BTreeMap::new();
        metadata.insert("created_at".into(), chrono::Utc::now().to_rfc3339());
        metadata.insert("schema_fingerprint".into(), schema.fingerprint());
        metadata.insert("tool_version".into(), crate::VERSION.into());
        GeneratorCard {
            psi: psi.psi,
            workload: ss.workload().to_names(),
            schema_fingerprint: schema.fingerprint(),
            schema,
            safespace_fingerprint: ss.fingerprint().to_string(),
            perp_sampling: ss.sampling().cloned(),
            generator,
            metadata,
        }
    }

    pub fn with_purpose(mut self, purpose: impl Into<String>) -> Self {
        self.metadata.insert("purpose".into(), purpose.into());
        self
    }

    pub fn descriptor(&self) -> SafeSpaceDescriptor {
        SafeSpaceDescriptor {
            schema: self.schema.clone(),
            workload: self.workload.clone(),
            sampling: self.perp_sampling.clone(),
            fingerprint: self.safespace_fingerprint.clone(),
        }
    }

    /// Rebuilds the safe space and checks it against the recorded
    /// fingerprints and psi length.
    pub fn safespace(&self, cap: usize) -> Result<SafeSpace> {
        if self.schema.fingerprint() != self.schema_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.schema_fingerprint.clone(),
                found: self.schema.fingerprint(),
            });
        }
        let ss = self.descriptor().rebuild(cap)?;
        ss.check_stats(&self.safe_statistics())?;
        Ok(ss)
    }

    pub fn safe_statistics(&self) -> SafeStatistics {
        SafeStatistics {
            safespace_fingerprint: self.safespace_fingerprint.clone(),
            psi: self.psi.clone(),
        }
    }

    /// Digest of everything except metadata.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.metadata.clear();
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&c).expect("serializable card"));
        hex::encode(&h.finalize()[..16])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable card")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
