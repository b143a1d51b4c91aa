//! JSON model checkpoints. Floats are written in shortest round-trip form,
//! so save -> load -> save reproduces the file byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::losses::LossKind;
use super::nets::{BinaryHead, TrafficModel};
use super::ModelError;

pub const CHECKPOINT_FORMAT: &str = "nesylab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub loss: LossKind,
    pub binary_head: BinaryHead,
    pub shared_encoder: bool,
    pub model: TrafficModel,
}

impl Checkpoint {
    pub fn new(
        seed: u64,
        loss: LossKind,
        binary_head: BinaryHead,
        shared_encoder: bool,
        model: TrafficModel,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed,
            loss,
            binary_head,
            shared_encoder,
            model,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(self).expect("checkpoint serializes");
        out.push(b'\n');
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let ck: Checkpoint = serde_json::from_slice(bytes)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                ck.format, ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        crate::fsutil::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::nets::{BinaryDigitNet, JointWorldNet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_save_is_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let models = [
            TrafficModel::Pair {
                red: BinaryDigitNet::init(BinaryHead::TwoUnitNormalized, &mut rng),
                green: BinaryDigitNet::init(BinaryHead::TwoUnitNormalized, &mut rng),
            },
            TrafficModel::Joint(JointWorldNet::init(false, &mut rng)),
        ];
        let dir = tempfile::tempdir().unwrap();
        for (i, model) in models.into_iter().enumerate() {
            let ck = Checkpoint::new(11, LossKind::Semantic, BinaryHead::TwoUnitNormalized, i == 0, model);
            let path = dir.path().join(format!("ck{i}.json"));
            ck.save(&path).unwrap();
            let loaded = Checkpoint::load(&path).unwrap();
            assert!(loaded == ck, "checkpoint changed on reload");
            assert!(loaded.to_bytes() == std::fs::read(&path).unwrap());
        }
    }

    #[test]
    fn rejects_foreign_format_and_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ck = Checkpoint::new(
            1,
            LossKind::Disjunctive,
            BinaryHead::SingleLogit,
            true,
            TrafficModel::Joint(JointWorldNet::init(true, &mut rng)),
        );
        let text = String::from_utf8(ck.to_bytes()).unwrap();
        let renamed = text.replacen(CHECKPOINT_FORMAT, "other", 1);
        assert!(matches!(
            Checkpoint::from_bytes(renamed.as_bytes()),
            Err(ModelError::Checkpoint(_))
        ));
        let broken = text.replacen("\"shape\":[6,1,5,5]", "\"shape\":[6,1,5,4]", 1);
        assert_ne!(broken, text);
        assert!(Checkpoint::from_bytes(broken.as_bytes()).is_err());
    }
}
