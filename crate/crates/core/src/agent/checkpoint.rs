//! Single-file checkpoints.
//!
//! ```text
//! 4 bytes  "LPLN"
//! u32      format version
//! 32 bytes SHA-256 of the canonical config text
//! u32 len, config text
//! u32      segment count
//! segments (see `diffmath::segment`): world_model, policy, value
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{AgentError, TrainConfig};
use crate::diffmath::segment::{get_str, get_u32, read_segment, write_segment};
use crate::diffmath::ParameterSet;

pub const MAGIC: &[u8; 4] = b"LPLN";
pub const FORMAT_VERSION: u32 = 1;
pub const SEGMENTS: [&str; 3] = ["world_model", "policy", "value"];

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub world_model: ParameterSet,
    pub policy: ParameterSet,
    pub value: ParameterSet,
}

pub fn write_checkpoint(w: &mut impl Write, ck: &Checkpoint) -> Result<(), AgentError> {
    let text = ck.config.to_text();
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&ck.config.hash())?;
    w.write_all(&(text.len() as u32).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    w.write_all(&(SEGMENTS.len() as u32).to_le_bytes())?;
    for (name, params) in SEGMENTS.iter().zip([&ck.world_model, &ck.policy, &ck.value]) {
        write_segment(w, name, params)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint, AgentError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(AgentError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = get_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(AgentError::Checkpoint(format!("unsupported format version {version}")));
    }
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    let text = get_str(r)?;
    let digest: [u8; 32] = Sha256::digest(text.as_bytes()).into();
    if digest != hash {
        return Err(AgentError::Checkpoint("config hash mismatch".into()));
    }
    let config = TrainConfig::parse(&text)?;
    let count = get_u32(r)? as usize;
    if count != SEGMENTS.len() {
        return Err(AgentError::Checkpoint(format!("{count} segments, expected {}", SEGMENTS.len())));
    }
    let mut sets = Vec::with_capacity(count);
    for expected in SEGMENTS {
        let (name, params) = read_segment(r)?;
        if name != expected {
            return Err(AgentError::Checkpoint(format!("segment {name:?} where {expected:?} was expected")));
        }
        sets.push(params);
    }
    let value = sets.pop().expect("three segments");
    let policy = sets.pop().expect("three segments");
    let world_model = sets.pop().expect("three segments");
    Ok(Checkpoint {
        config,
        world_model,
        policy,
        value,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), AgentError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ck)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, AgentError> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
