//! Trained-model files: vocabulary, parameters and tuned thresholds in one
//! JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NamError, Result};
use crate::evaluator::Thresholds;
use crate::kb::Vocabulary;
use crate::model::NamParams;

pub const FORMAT: &str = "nam-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    format: String,
    pub vocab: Vocabulary,
    pub params: NamParams,
    pub thresholds: Thresholds,
}

impl Checkpoint {
    pub fn new(vocab: Vocabulary, params: NamParams, thresholds: Thresholds) -> Self {
        Checkpoint {
            format: FORMAT.to_owned(),
            vocab,
            params,
            thresholds,
        }
    }

    fn check(&self, path: &Path) -> Result<()> {
        let fail = |reason: String| NamError::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        if self.format != FORMAT {
            return Err(fail(format!("unsupported format {:?}", self.format)));
        }
        self.params.validate().map_err(|e| fail(e.to_string()))?;
        if self.vocab.entities.len() != self.params.num_entities()
            || self.vocab.relations.len() != self.params.num_relations()
        {
            return Err(fail(format!(
                "vocabulary has {} entities and {} relations, parameters have {} and {}",
                self.vocab.entities.len(),
                self.vocab.relations.len(),
                self.params.num_entities(),
                self.params.num_relations()
            )));
        }
        if !self.thresholds.global.is_finite() || self.thresholds.per_relation.values().any(|t| !t.is_finite()) {
            return Err(fail("non-finite threshold".to_owned()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string(self).expect("checkpoint values are serializable");
        out.push('\n');
        out
    }

    /// `path` is only used in error messages.
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| NamError::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        ckpt.check(path)?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.check(path)?;
        std::fs::write(path, self.to_json()).map_err(|e| NamError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NamError::io(path, e))?;
        Self::from_json(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Rng;
    use crate::model::{ModelShape, Variant};

    fn sample(variant: Variant) -> Checkpoint {
        let mut vocab = Vocabulary::new();
        for e in ["cat", "animal", "dog_house"] {
            vocab.entities.intern(e);
        }
        vocab.relations.intern("isa");
        let shape = ModelShape {
            variant,
            entity_dim: 3,
            relation_dim: 2,
            hidden: vec![4, 3],
        };
        let params = NamParams::init(&shape, &vocab, None, &mut Rng::new(11)).unwrap();
        let mut thresholds = Thresholds::global(0.4321987654321);
        thresholds.per_relation.insert(0, 0.1 + 0.2);
        Checkpoint::new(vocab, params, thresholds)
    }

    #[test]
    fn save_load_save_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        for variant in [Variant::Dnn, Variant::Rmnn] {
            let a = dir.path().join("a.json");
            let b = dir.path().join("b.json");
            let ckpt = sample(variant);
            ckpt.save(&a).unwrap();
            let loaded = Checkpoint::load(&a).unwrap();
            assert_eq!(loaded, ckpt);
            loaded.save(&b).unwrap();
            assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        }
    }

    #[test]
    fn rejects_foreign_or_inconsistent_files() {
        let p = Path::new("m.json");
        assert!(matches!(
            Checkpoint::from_json("{}", p),
            Err(NamError::Checkpoint { .. })
        ));

        let mut ckpt = sample(Variant::Dnn);
        ckpt.format = "other".into();
        assert!(Checkpoint::from_json(&ckpt.to_json(), p).is_err());

        let mut ckpt = sample(Variant::Dnn);
        ckpt.vocab.relations.intern("extra");
        let err = Checkpoint::from_json(&ckpt.to_json(), p).unwrap_err();
        assert!(err.to_string().contains("m.json"), "{err}");
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = Checkpoint::load(Path::new("/nonexistent/model.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/model.json"));
    }
}
