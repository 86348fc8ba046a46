//! Provenance block embedded in every output file.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Identifies the exact run that produced an output: a hash of the
/// effective configuration, the seed, the generator family, and the crate
/// version. Identical provenance implies identical content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub rng: String,
    pub version: String,
}

impl Provenance {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self {
            config_hash,
            seed,
            rng: survrad_core::synth::RNG_NAME.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Leading comment line for CSV outputs.
    pub fn comment_line(&self) -> String {
        format!(
            "# provenance: config_hash={} seed={} rng={} version={}\n",
            self.config_hash, self.seed, self.rng, self.version
        )
    }
}

/// SHA-256 hex digest of any serializable parameter block.
pub fn hash_params<T: Serialize>(params: &T) -> String {
    let json = serde_json::to_string(params).expect("parameters serialize");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
