use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, PalModel, Params, TrainReport};
use crate::error::{PalError, Result};
use crate::nn::Tensor;

pub const CHECKPOINT_FORMAT: &str = "pal-checkpoint";
const VERSION: u32 = 1;

/// Self-describing JSON container; tensors carry shape and row-major data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub corpus_hash: String,
    pub video_course: Vec<usize>,
    pub raw: Tensor,
    pub params: Params,
    pub report: Option<TrainReport>,
}

impl Checkpoint {
    pub fn into_model(self) -> Result<PalModel> {
        PalModel::from_parts(self.config, self.raw, self.video_course, self.params)
    }
}

/// Writes the checkpoint via a temporary sibling and a rename.
pub fn save_checkpoint(path: &Path, model: &PalModel, corpus_hash: &str, report: Option<&TrainReport>) -> Result<()> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: VERSION,
        config: model.config.clone(),
        corpus_hash: corpus_hash.into(),
        video_course: model.video_course.clone(),
        raw: model.raw.clone(),
        params: model.params.clone(),
        report: report.cloned(),
    };
    let body = serde_json::to_string(&ck).map_err(|e| PalError::Checkpoint(e.to_string()))?;
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| PalError::io(&tmp, e))?;
        f.write_all(body.as_bytes()).map_err(|e| PalError::io(&tmp, e))?;
        f.sync_all().map_err(|e| PalError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| PalError::io(path, e))
}

/// Loads a checkpoint; when `corpus_hash` is given it must match the one
/// recorded at training time.
pub fn load_checkpoint(path: &Path, corpus_hash: Option<&str>) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| PalError::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| PalError::Checkpoint(format!("{}: {e}", path.display())))?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != VERSION {
        return Err(PalError::Checkpoint(format!(
            "{}: unsupported container {} v{}",
            path.display(),
            ck.format,
            ck.version
        )));
    }
    if let Some(h) = corpus_hash {
        if h != ck.corpus_hash {
            return Err(PalError::Checkpoint(format!(
                "{} was trained on corpus {}, not {h}",
                path.display(),
                ck.corpus_hash
            )));
        }
    }
    Ok(ck)
}
