//! Single-file binary checkpoints (little-endian, versioned). Parameters and
//! optimizer moments are keyed by parameter name.

use std::io::{Cursor, Read};
use std::path::Path;

use crate::entropy::QuantizedCdfTable;
use crate::error::{Error, Result};
use crate::models::{ArchitectureConfig, CodecModel, CodingTables, Metric, ModelKind};
use crate::tensor::{Adam, AdamState, Tensor};

use super::LrPlateau;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NZCK";
pub const CHECKPOINT_VERSION: u8 = 1;
pub const CHECKPOINT_EXTENSION: &str = "nzck";

/// Position of a seeded ChaCha8 stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchitectureConfig,
    /// Text form of the training configuration, empty for inference-only files.
    pub training_config: String,
    pub step: u64,
    pub best_eval: f64,
    pub scheduler: LrPlateau,
    pub rng: Option<RngState>,
    pub params: Vec<(String, Tensor<f32>)>,
    pub main_adam: Vec<(String, AdamState<f32>)>,
    pub aux_adam: Vec<(String, AdamState<f32>)>,
    pub tables: Option<CodingTables>,
}

fn adam_entries(opt: &Adam<f32>, model: &CodecModel<f32>) -> Vec<(String, AdamState<f32>)> {
    opt.entries
        .iter()
        .map(|(id, st)| (model.store.get(*id).name.clone(), st.clone()))
        .collect()
}

impl Checkpoint {
    /// Inference-only checkpoint of a model; tables are built if missing.
    pub fn from_model(model: &CodecModel<f32>) -> Result<Self> {
        let tables = match model.tables() {
            Some(t) => t.clone(),
            None => model.build_tables()?,
        };
        Ok(Checkpoint {
            arch: model.config,
            training_config: String::new(),
            step: 0,
            best_eval: f64::INFINITY,
            scheduler: LrPlateau::new(0.0, 1),
            rng: None,
            params: model.store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
            main_adam: vec![],
            aux_adam: vec![],
            tables: Some(tables),
        })
    }

    pub(crate) fn capture(
        model: &CodecModel<f32>,
        main: &Adam<f32>,
        aux: &Adam<f32>,
        training_config: String,
        step: u64,
        best_eval: f64,
        scheduler: &LrPlateau,
        rng: RngState,
    ) -> Result<Self> {
        let mut ck = Checkpoint::from_model(model)?;
        ck.training_config = training_config;
        ck.step = step;
        ck.best_eval = best_eval;
        ck.scheduler = scheduler.clone();
        ck.rng = Some(rng);
        ck.main_adam = adam_entries(main, model);
        ck.aux_adam = adam_entries(aux, model);
        Ok(ck)
    }

    /// Rebuilds the model; with stored tables it is returned in evaluation mode.
    pub fn to_model(&self) -> Result<CodecModel<f32>> {
        let mut model = CodecModel::<f32>::new(self.arch, 0)?;
        if model.store.iter().count() != self.params.len() {
            return Err(Error::ModelMismatch(format!(
                "checkpoint has {} parameters, architecture expects {}",
                self.params.len(),
                model.store.iter().count()
            )));
        }
        for (name, value) in &self.params {
            let id = model
                .store
                .id(name)
                .ok_or_else(|| Error::ModelMismatch(format!("unknown parameter `{name}`")))?;
            let p = model.store.get_mut(id);
            if p.value.shape() != value.shape() {
                return Err(Error::ModelMismatch(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value.clone();
        }
        if let Some(t) = &self.tables {
            model.eval_with_tables(t.clone())?;
        }
        Ok(model)
    }

    /// Restores optimizer moments saved by name into `opt`.
    pub(crate) fn restore_adam(entries: &[(String, AdamState<f32>)], model: &CodecModel<f32>, opt: &mut Adam<f32>) -> Result<()> {
        for (name, state) in entries {
            let id = model
                .store
                .id(name)
                .ok_or_else(|| Error::ModelMismatch(format!("optimizer state for unknown parameter `{name}`")))?;
            let slot = opt
                .state_mut(id)
                .ok_or_else(|| Error::ModelMismatch(format!("parameter `{name}` is not optimized here")))?;
            if slot.m.shape() != state.m.shape() {
                return Err(Error::ModelMismatch(format!("optimizer state shape mismatch for `{name}`")));
            }
            *slot = state.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(CHECKPOINT_MAGIC);
        w.push(CHECKPOINT_VERSION);
        w.push(self.arch.model.id());
        w.push(self.arch.quality);
        w.push(self.arch.metric.id());
        put_u32(&mut w, self.arch.n as u32);
        put_u32(&mut w, self.arch.m as u32);
        w.extend_from_slice(&self.step.to_le_bytes());
        w.extend_from_slice(&self.best_eval.to_le_bytes());
        let s = &self.scheduler;
        for v in [s.lr, s.factor, s.threshold, s.best] {
            w.extend_from_slice(&v.to_le_bytes());
        }
        put_u32(&mut w, s.patience as u32);
        put_u32(&mut w, s.bad_evals as u32);
        put_u32(&mut w, self.training_config.len() as u32);
        w.extend_from_slice(self.training_config.as_bytes());
        match &self.rng {
            Some(r) => {
                w.push(1);
                w.extend_from_slice(&r.seed);
                w.extend_from_slice(&r.stream.to_le_bytes());
                w.extend_from_slice(&r.word_pos.to_le_bytes());
            }
            None => w.push(0),
        }
        put_u32(&mut w, self.params.len() as u32);
        for (name, t) in &self.params {
            put_name(&mut w, name);
            w.push(t.shape().len() as u8);
            for &d in t.shape() {
                put_u32(&mut w, d as u32);
            }
            put_f32s(&mut w, t.data());
        }
        for entries in [&self.main_adam, &self.aux_adam] {
            put_u32(&mut w, entries.len() as u32);
            for (name, st) in entries {
                put_name(&mut w, name);
                w.extend_from_slice(&st.step.to_le_bytes());
                put_u32(&mut w, st.m.numel() as u32);
                put_f32s(&mut w, st.m.data());
                put_f32s(&mut w, st.v.data());
            }
        }
        match &self.tables {
            Some(t) => {
                w.push(1);
                t.bottleneck.write_to(&mut w).expect("in-memory write");
                match &t.gaussian {
                    Some(g) => {
                        w.push(1);
                        g.write_to(&mut w).expect("in-memory write");
                    }
                    None => w.push(0),
                }
            }
            None => w.push(0),
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let magic: [u8; 4] = take(&mut r)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let [version, model, quality, metric]: [u8; 4] = take(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let arch = ArchitectureConfig {
            model: ModelKind::from_id(model)?,
            quality,
            metric: Metric::from_id(metric)?,
            n: get_u32(&mut r)? as usize,
            m: get_u32(&mut r)? as usize,
        };
        let step = u64::from_le_bytes(take(&mut r)?);
        let best_eval = f64::from_le_bytes(take(&mut r)?);
        let [lr, factor, threshold, best] = [0; 4].map(|_| 0.0f64);
        let mut vals = [lr, factor, threshold, best];
        for v in &mut vals {
            *v = f64::from_le_bytes(take(&mut r)?);
        }
        let scheduler = LrPlateau {
            lr: vals[0],
            factor: vals[1],
            threshold: vals[2],
            best: vals[3],
            patience: get_u32(&mut r)? as usize,
            bad_evals: get_u32(&mut r)? as usize,
        };
        let len = get_u32(&mut r)? as usize;
        let training_config = String::from_utf8(take_vec(&mut r, len)?)
            .map_err(|_| Error::Format("training config is not UTF-8".into()))?;
        let rng = match take::<1>(&mut r)?[0] {
            0 => None,
            _ => Some(RngState {
                seed: take(&mut r)?,
                stream: u64::from_le_bytes(take(&mut r)?),
                word_pos: u128::from_le_bytes(take(&mut r)?),
            }),
        };
        let count = get_u32(&mut r)? as usize;
        let mut params = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = get_name(&mut r)?;
            let rank = take::<1>(&mut r)?[0] as usize;
            let shape = (0..rank).map(|_| get_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().product();
            params.push((name, Tensor::new(shape, get_f32s(&mut r, n)?)?));
        }
        let mut adams = vec![];
        for _ in 0..2 {
            let count = get_u32(&mut r)? as usize;
            let mut entries = Vec::with_capacity(count.min(4096));
            for _ in 0..count {
                let name = get_name(&mut r)?;
                let step = u64::from_le_bytes(take(&mut r)?);
                let n = get_u32(&mut r)? as usize;
                let shape = params
                    .iter()
                    .find(|p| p.0 == name)
                    .map(|p| p.1.shape().to_vec())
                    .ok_or_else(|| Error::Format(format!("optimizer state for unknown parameter `{name}`")))?;
                if shape.iter().product::<usize>() != n {
                    return Err(Error::Format(format!("optimizer state size mismatch for `{name}`")));
                }
                let m = Tensor::new(shape.clone(), get_f32s(&mut r, n)?)?;
                let v = Tensor::new(shape, get_f32s(&mut r, n)?)?;
                entries.push((name, AdamState { step, m, v }));
            }
            adams.push(entries);
        }
        let aux_adam = adams.pop().expect("two optimizers");
        let main_adam = adams.pop().expect("two optimizers");
        let tables = match take::<1>(&mut r)?[0] {
            0 => None,
            _ => {
                let bottleneck = QuantizedCdfTable::read_from(&mut r)?;
                let gaussian = match take::<1>(&mut r)?[0] {
                    0 => None,
                    _ => Some(QuantizedCdfTable::read_from(&mut r)?),
                };
                Some(CodingTables { bottleneck, gaussian })
            }
        };
        Ok(Checkpoint {
            arch,
            training_config,
            step,
            best_eval,
            scheduler,
            rng,
            params,
            main_adam,
            aux_adam,
            tables,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_name(w: &mut Vec<u8>, name: &str) {
    w.extend_from_slice(&(name.len() as u16).to_le_bytes());
    w.extend_from_slice(name.as_bytes());
}

fn put_f32s(w: &mut Vec<u8>, data: &[f32]) {
    for v in data {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

fn truncated() -> Error {
    Error::Format("checkpoint truncated".into())
}

fn take<const N: usize>(r: &mut Cursor<&[u8]>) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|_| truncated())?;
    Ok(b)
}

fn take_vec(r: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<u8>> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if n > remaining {
        return Err(truncated());
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(|_| truncated())?;
    Ok(b)
}

fn get_u32(r: &mut Cursor<&[u8]>) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r)?))
}

fn get_name(r: &mut Cursor<&[u8]>) -> Result<String> {
    let len = u16::from_le_bytes(take(r)?) as usize;
    String::from_utf8(take_vec(r, len)?).map_err(|_| Error::Format("parameter name is not UTF-8".into()))
}

fn get_f32s(r: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<f32>> {
    let raw = take_vec(r, n.checked_mul(4).ok_or_else(truncated)?)?;
    Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
}
