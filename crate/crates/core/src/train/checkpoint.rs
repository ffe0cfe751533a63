use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::QMatrix;
use crate::error::{Error, Result};

use super::config::TrainConfig;
use super::step::Assembly;

const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Every random draw is keyed by the seed and the epoch, so these two values
/// are the whole generator state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub config: TrainConfig,
    pub config_hash: String,
    pub data_fingerprint: String,
    pub num_students: usize,
    pub num_exercises: usize,
    pub num_concepts: usize,
    /// Epoch whose parameters are stored.
    pub epoch: usize,
    pub rng: RngState,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn capture(
        asm: &Assembly,
        config: &TrainConfig,
        data_fingerprint: &str,
        num_students: usize,
        epoch: usize,
        next_epoch: usize,
    ) -> Self {
        let tensors = asm
            .store
            .ids()
            .map(|id| {
                let t = asm.store.get(id);
                NamedTensor {
                    name: asm.store.name(id).to_string(),
                    shape: [t.nrows(), t.ncols()],
                    data: t.iter().copied().collect(),
                }
            })
            .collect();
        Self {
            format: FORMAT_VERSION,
            config: config.clone(),
            config_hash: config.hash(data_fingerprint),
            data_fingerprint: data_fingerprint.to_string(),
            num_students,
            num_exercises: asm.q.num_exercises(),
            num_concepts: asm.q.num_concepts(),
            epoch,
            rng: RngState {
                seed: config.seed,
                next_epoch,
            },
            tensors,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ckpt.format != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {} (expected {FORMAT_VERSION})",
                ckpt.format
            )));
        }
        Ok(ckpt)
    }

    /// Rebuilds the assembly and overwrites every tensor by name.
    pub fn restore(&self, q: &QMatrix) -> Result<Assembly> {
        if q.num_exercises() != self.num_exercises || q.num_concepts() != self.num_concepts {
            return Err(Error::Checkpoint(format!(
                "Q-matrix is {}x{}, checkpoint expects {}x{}",
                q.num_exercises(),
                q.num_concepts(),
                self.num_exercises,
                self.num_concepts
            )));
        }
        let mut asm = Assembly::new(&self.config, self.num_students, q)?;
        if asm.store.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, the model has {}",
                self.tensors.len(),
                asm.store.len()
            )));
        }
        for t in &self.tensors {
            let id = asm
                .store
                .find(&t.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{}`", t.name)))?;
            let target = asm.store.get_mut(id);
            if [target.nrows(), target.ncols()] != t.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    t.name,
                    t.shape,
                    target.shape()
                )));
            }
            *target = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone())
                .map_err(|e| Error::Checkpoint(format!("tensor `{}`: {e}", t.name)))?;
        }
        Ok(asm)
    }
}
