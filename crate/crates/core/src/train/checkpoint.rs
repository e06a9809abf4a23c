//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes   "MISCCKPT"
//! version  u32 LE    1
//! length   u64 LE    byte length of the header
//! header   JSON      configs, training settings, vocab, RNG state, best
//!                    metric and the name and shape of every parameter
//! blobs    f64 LE    parameter values in header order, row-major
//! ```

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MtlMode, TrainConfig};
use crate::embed::Vocab;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MISCCKPT";
pub const VERSION: u32 = 1;

/// Position of a ChaCha8 stream, enough to resume it exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// 128-bit word position, as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad RNG position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    configs: Vec<ModelConfig>,
    train: TrainConfig,
    mtl: MtlMode,
    vocab: Vocab,
    model_seed: u64,
    rng: RngState,
    best_metric: Option<f64>,
    epochs: usize,
    params: Vec<ParamHeader>,
}

/// A trained model with everything needed to rebuild and resume it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
    pub mtl: MtlMode,
    pub rng: RngState,
    /// Best dev selection metric, if any dev data was seen.
    pub best_metric: Option<f64>,
    pub epochs: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let store = &self.model.store;
        let header = Header {
            configs: self.model.configs(),
            train: self.train.clone(),
            mtl: self.mtl,
            vocab: self.model.vocab.clone(),
            model_seed: self.model.seed(),
            rng: self.rng.clone(),
            best_metric: self.best_metric,
            epochs: self.epochs,
            params: store
                .ids()
                .map(|id| {
                    let [rows, cols] = store.get(id).shape();
                    ParamHeader {
                        name: store.name(id).to_string(),
                        rows,
                        cols,
                    }
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 8 * store.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for id in store.ids() {
            for x in store.get(id).data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let header_end = usize::try_from(len)
            .ok()
            .and_then(|l| l.checked_add(20))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let mut model = Model::new(header.configs, header.vocab, None, header.model_seed)?;
        if model.store.len() != header.params.len() {
            return Err(Error::Checkpoint(format!(
                "header lists {} parameters, the model has {}",
                header.params.len(),
                model.store.len()
            )));
        }
        let mut offset = header_end;
        let ids: Vec<_> = model.store.ids().collect();
        for (id, p) in ids.into_iter().zip(&header.params) {
            let [rows, cols] = model.store.get(id).shape();
            if p.name != model.store.name(id) || p.rows != rows || p.cols != cols {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {}x{} does not match the model's {} {rows}x{cols}",
                    p.name,
                    p.rows,
                    p.cols,
                    model.store.name(id)
                )));
            }
            let n = rows * cols;
            let end = offset
                .checked_add(n * 8)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| bad("truncated parameter data"))?;
            let data: Vec<f64> = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            model.store.set(id, Tensor::new(rows, cols, data)?)?;
            offset = end;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after parameter data"));
        }
        header.rng.restore()?;
        Ok(Checkpoint {
            model,
            train: header.train,
            mtl: header.mtl,
            rng: header.rng,
            best_metric: header.best_metric,
            epochs: header.epochs,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}
