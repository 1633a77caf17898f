//! Checkpoint format: `FPCK` magic, version, model configuration echo, run
//! metadata, a tensor manifest (name, shape, sync/trainable flags) and the
//! raw little-endian f64 payloads in manifest order. Reloading reproduces
//! forward outputs bit-exactly.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use fedpoint_core::model::{
    ModelConfig, ModelWeights, ParamEntry, PositionMode, SamplingMode,
};
use fedpoint_core::tensor::Tensor;

pub const CKPT_MAGIC: &[u8; 4] = b"FPCK";
pub const CKPT_VERSION: u16 = 1;

#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    Format(String),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "checkpoint io error: {e}"),
            CheckpointError::Format(m) => write!(f, "checkpoint format error: {m}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

fn format_err(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format(msg.into())
}

/// Everything needed to resume evaluation of a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub weights: ModelWeights,
    pub epoch: u32,
    pub master_seed: u64,
    pub split_seed: u64,
    /// Generator state snapshot for the evaluation stream.
    pub rng_state: [u64; 4],
}

fn sampling_tag(s: SamplingMode) -> u8 {
    match s {
        SamplingMode::Fps => 0,
        SamplingMode::Fcs => 1,
    }
}

fn position_tag(p: PositionMode) -> u8 {
    match p {
        PositionMode::Real => 0,
        PositionMode::AllZero => 1,
        PositionMode::AllOne => 2,
    }
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());

    let m = &ckpt.model;
    buf.extend_from_slice(&(m.n_points as u32).to_le_bytes());
    buf.extend_from_slice(&(m.d_in as u32).to_le_bytes());
    buf.extend_from_slice(&(m.base_width as u32).to_le_bytes());
    buf.extend_from_slice(&(m.k_neighbors as u32).to_le_bytes());
    buf.push(sampling_tag(m.sampling));
    buf.push(position_tag(m.position_mode));
    buf.push(u8::from(m.w_q_single_linear));

    buf.extend_from_slice(&ckpt.epoch.to_le_bytes());
    buf.extend_from_slice(&ckpt.master_seed.to_le_bytes());
    buf.extend_from_slice(&ckpt.split_seed.to_le_bytes());
    for s in ckpt.rng_state {
        buf.extend_from_slice(&s.to_le_bytes());
    }

    let entries = ckpt.weights.entries();
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(e.tensor.shape().len() as u8);
        for &d in e.tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.push(u8::from(e.synced));
        buf.push(u8::from(e.trainable));
    }
    for e in entries {
        for &v in e.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
        if *off + n > bytes.len() {
            return Err(format_err(format!(
                "{}: truncated at byte {}",
                path.display(),
                *off
            )));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    let magic = take(&mut off, 4)?;
    if magic != CKPT_MAGIC {
        return Err(format_err(format!("{}: not a checkpoint file", path.display())));
    }
    let version = u16::from_le_bytes(take(&mut off, 2)?.try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(format_err(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let read_u32 = |off: &mut usize| -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(take(off, 4)?.try_into().unwrap()))
    };
    let n_points = read_u32(&mut off)? as usize;
    let d_in = read_u32(&mut off)? as usize;
    let base_width = read_u32(&mut off)? as usize;
    let k_neighbors = read_u32(&mut off)? as usize;
    let sampling = match take(&mut off, 1)?[0] {
        0 => SamplingMode::Fps,
        1 => SamplingMode::Fcs,
        t => return Err(format_err(format!("bad sampling tag {t}"))),
    };
    let position_mode = match take(&mut off, 1)?[0] {
        0 => PositionMode::Real,
        1 => PositionMode::AllZero,
        2 => PositionMode::AllOne,
        t => return Err(format_err(format!("bad position tag {t}"))),
    };
    let w_q_single_linear = take(&mut off, 1)?[0] != 0;

    let epoch = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    let master_seed = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
    let split_seed = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
    let mut rng_state = [0u64; 4];
    for s in &mut rng_state {
        *s = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
    }

    let n_tensors = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let mut manifest = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = u16::from_le_bytes(take(&mut off, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
            .map_err(|_| format_err("tensor name is not utf-8"))?;
        let ndim = take(&mut off, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize);
        }
        let synced = take(&mut off, 1)?[0] != 0;
        let trainable = take(&mut off, 1)?[0] != 0;
        manifest.push((name, shape, synced, trainable));
    }
    let mut entries = Vec::with_capacity(n_tensors);
    for (name, shape, synced, trainable) in manifest {
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()));
        }
        let tensor = Tensor::from_vec(&shape, data)
            .map_err(|e| format_err(format!("tensor {name}: {e}")))?;
        entries.push(ParamEntry {
            name,
            tensor,
            synced,
            trainable,
        });
    }
    if off != bytes.len() {
        return Err(format_err(format!(
            "{}: {} trailing bytes",
            path.display(),
            bytes.len() - off
        )));
    }
    let weights =
        ModelWeights::from_entries(entries).map_err(|e| format_err(format!("{e}")))?;
    Ok(Checkpoint {
        model: ModelConfig {
            n_points,
            d_in,
            base_width,
            k_neighbors,
            sampling,
            position_mode,
            w_q_single_linear,
        },
        weights,
        epoch,
        master_seed,
        split_seed,
        rng_state,
    })
}
