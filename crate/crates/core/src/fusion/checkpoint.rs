use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{Classifier, ContextEncoder, FusionMode, FusionModel};
use crate::syntax_graph::WordPiece;
use crate::taxonomy::{Granularity, TAXONOMY_JSON};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub dim: usize,
    pub label_count: usize,
    pub granularity: Granularity,
    pub config_hash: String,
    pub scalar: String,
    pub window: usize,
    pub lowercase: bool,
    pub max_len: usize,
    pub mode: FusionMode,
    /// Trained with entity-only masks.
    pub entity_only_mask: bool,
    pub version: String,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: FusionModel<T>,
    pub tokenizer: WordPiece,
    pub manifest: CheckpointManifest,
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

/// Write `encoder.json`, `classifier.json`, `vocab.txt`, `taxonomy.json` and `checkpoint.json` (shapes and settings).
pub fn save_checkpoint<T: Scalar>(dir: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir, "encoder.json", &serde_json::to_string(&ckpt.model.encoder)?)?;
    write(dir, "classifier.json", &serde_json::to_string(&ckpt.model.classifier)?)?;
    write(dir, "vocab.txt", &ckpt.tokenizer.to_vocab_text())?;
    write(dir, "taxonomy.json", TAXONOMY_JSON)?;
    write(dir, "checkpoint.json", &serde_json::to_string_pretty(&ckpt.manifest)?)?;
    Ok(())
}

/// Settings of a saved checkpoint without loading its weights.
pub fn read_checkpoint_manifest(dir: &Path) -> Result<CheckpointManifest> {
    Ok(serde_json::from_str(&read(dir, "checkpoint.json")?)?)
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<Checkpoint<T>> {
    let manifest = read_checkpoint_manifest(dir)?;
    if manifest.scalar != T::NAME {
        return Err(Error::Config(format!(
            "checkpoint stores {} parameters, loading as {}",
            manifest.scalar,
            T::NAME
        )));
    }
    let encoder: ContextEncoder<T> = serde_json::from_str(&read(dir, "encoder.json")?)?;
    let classifier: Classifier<T> = serde_json::from_str(&read(dir, "classifier.json")?)?;
    let vocab_path = dir.join("vocab.txt");
    let tokenizer = WordPiece::from_vocab_file(&vocab_path, manifest.lowercase)?;
    let mut model = FusionModel { encoder, classifier };
    let d = model.dim();
    if d != manifest.dim
        || model.classes() != manifest.label_count
        || model.classifier.weight.ncols() != 2 * d
        || model.encoder.vocab_size() != tokenizer.tokens().len()
    {
        return Err(Error::Config(format!(
            "checkpoint {} has inconsistent shapes",
            dir.display()
        )));
    }
    if !model.all_finite() {
        return Err(Error::Config(format!("checkpoint {} holds non-finite weights", dir.display())));
    }
    Ok(Checkpoint {
        model,
        tokenizer,
        manifest,
    })
}
