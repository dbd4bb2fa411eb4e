//! Versioned little-endian checkpoint files.
//!
//! Layout: magic `INVLCKPT`, format version (u32), block count (u32), then
//! per block: name length (u32), UTF-8 name, dim count (u32), dims (u32 each),
//! value count (u64), values (f64). All integers and floats little-endian.
//! A policy file holds one `actor` block whose dims are the layer widths; a
//! learner file adds the critics, targets, temperature and optimizer state.
//! Every policy file has a JSON sidecar (`<file>.json`) with the observation
//! scaling needed to use it.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::sac::{critic_dims, Sac, SacHyperparams};
use crate::nn::{Adam, Mlp};
use crate::policy::PolicyParams;
use crate::sensing::SensingConfig;

pub const MAGIC: &[u8; 8] = b"INVLCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: Vec<f64>,
}

impl Block {
    pub fn net(name: &str, net: &Mlp) -> Self {
        Self {
            name: name.into(),
            dims: net.dims().iter().map(|&d| d as u32).collect(),
            values: net.to_flat(),
        }
    }

    pub fn scalar(name: &str, v: f64) -> Self {
        Self {
            name: name.into(),
            dims: vec![1],
            values: vec![v],
        }
    }

    pub fn vector(name: &str, v: &[f64]) -> Self {
        Self {
            name: name.into(),
            dims: vec![v.len() as u32],
            values: v.to_vec(),
        }
    }
}

pub fn encode(blocks: &[Block]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in blocks {
        out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
        out.extend_from_slice(b.name.as_bytes());
        out.extend_from_slice(&(b.dims.len() as u32).to_le_bytes());
        for d in &b.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&(b.values.len() as u64).to_le_bytes());
        for v in &b.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<Block>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let n = c.u32()?;
    let mut blocks = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?
            .to_string();
        let nd = c.u32()? as usize;
        let dims = (0..nd).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let nv = c.u64()? as usize;
        let raw = c.take(nv.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let values = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        blocks.push(Block { name, dims, values });
    }
    if c.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after last block".into()));
    }
    Ok(blocks)
}

pub fn write_blocks(path: &Path, blocks: &[Block]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(blocks))?;
    Ok(())
}

pub fn read_blocks(path: &Path) -> Result<Vec<Block>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut buf)?;
    decode(&buf)
}

fn find<'a>(blocks: &'a [Block], name: &str) -> Result<&'a Block> {
    blocks
        .iter()
        .find(|b| b.name == name)
        .ok_or_else(|| Error::Checkpoint(format!("missing block '{name}'")))
}

fn net_from(blocks: &[Block], name: &str) -> Result<Mlp> {
    let b = find(blocks, name)?;
    let dims: Vec<usize> = b.dims.iter().map(|&d| d as usize).collect();
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Checkpoint(format!("block '{name}' has bad dims {dims:?}")));
    }
    Mlp::from_flat(&dims, &b.values)
        .ok_or_else(|| Error::Checkpoint(format!("block '{name}' value count does not match dims")))
}

fn scalar_from(blocks: &[Block], name: &str) -> Result<f64> {
    let b = find(blocks, name)?;
    match b.values.as_slice() {
        [v] => Ok(*v),
        _ => Err(Error::Checkpoint(format!("block '{name}' is not a scalar"))),
    }
}

/// Path of the JSON sidecar for a checkpoint file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySidecar {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub sensing: SensingConfig,
    pub trigger_threshold: f64,
    /// Flip moment at a squashed output of +1, N·m.
    pub max_moment: f64,
}

impl PolicySidecar {
    pub fn new(policy: &PolicyParams, sensing: &SensingConfig, trigger_threshold: f64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            layer_dims: policy.net.dims(),
            sensing: *sensing,
            trigger_threshold,
            max_moment: crate::dynamics::MAX_FLIP_MOMENT,
        }
    }
}

pub fn save_policy(path: &Path, policy: &PolicyParams, sidecar: &PolicySidecar) -> Result<()> {
    write_blocks(path, &[Block::net("actor", &policy.net)])?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(sidecar)?)?;
    Ok(())
}

/// Loads the actor from a policy or learner checkpoint plus its sidecar.
pub fn load_policy(path: &Path) -> Result<(PolicyParams, PolicySidecar)> {
    let blocks = read_blocks(path)?;
    let policy = PolicyParams {
        net: net_from(&blocks, "actor")?,
    };
    policy.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side)
        .map_err(|e| Error::Checkpoint(format!("cannot read sidecar {}: {e}", side.display())))?;
    let sidecar: PolicySidecar = serde_json::from_str(&text)?;
    if sidecar.layer_dims != policy.net.dims() {
        return Err(Error::Checkpoint("sidecar layer dims disagree with the weights".into()));
    }
    Ok((policy, sidecar))
}

fn adam_blocks(name: &str, opt: &Adam, out: &mut Vec<Block>) {
    out.push(Block::scalar(&format!("{name}.t"), opt.t as f64));
    out.push(Block::vector(&format!("{name}.m"), &opt.m));
    out.push(Block::vector(&format!("{name}.v"), &opt.v));
}

fn adam_from(blocks: &[Block], name: &str, n: usize, lr: f64) -> Result<Adam> {
    let mut opt = Adam::new(n, lr);
    opt.t = scalar_from(blocks, &format!("{name}.t"))? as u64;
    opt.m = find(blocks, &format!("{name}.m"))?.values.clone();
    opt.v = find(blocks, &format!("{name}.v"))?.values.clone();
    if opt.m.len() != n || opt.v.len() != n {
        return Err(Error::Checkpoint(format!("optimizer '{name}' has the wrong size")));
    }
    Ok(opt)
}

/// Full learner state; the actor block doubles as a policy file.
pub fn learner_blocks(sac: &Sac) -> Vec<Block> {
    let mut b = vec![
        Block::net("actor", &sac.actor.net),
        Block::net("q1", &sac.q1),
        Block::net("q2", &sac.q2),
        Block::net("q1_target", &sac.q1_target),
        Block::net("q2_target", &sac.q2_target),
        Block::scalar("log_beta", sac.log_beta),
    ];
    adam_blocks("actor_opt", &sac.actor_opt, &mut b);
    adam_blocks("q1_opt", &sac.q1_opt, &mut b);
    adam_blocks("q2_opt", &sac.q2_opt, &mut b);
    adam_blocks("beta_opt", &sac.beta_opt, &mut b);
    b
}

pub fn learner_from_blocks(blocks: &[Block], hp: SacHyperparams) -> Result<Sac> {
    hp.validate()?;
    let actor = PolicyParams {
        net: net_from(blocks, "actor")?,
    };
    let q1 = net_from(blocks, "q1")?;
    let q2 = net_from(blocks, "q2")?;
    let expect = critic_dims(hp.hidden).to_vec();
    if actor.net.dims() != PolicyParams::dims(hp.hidden).to_vec() || q1.dims() != expect || q2.dims() != expect {
        return Err(Error::Checkpoint("checkpoint network sizes do not match sac.hidden".into()));
    }
    let mut sac = Sac::from_parts(hp, actor, q1, q2);
    sac.q1_target = net_from(blocks, "q1_target")?;
    sac.q2_target = net_from(blocks, "q2_target")?;
    if sac.q1_target.dims() != expect || sac.q2_target.dims() != expect {
        return Err(Error::Checkpoint("target network sizes do not match".into()));
    }
    sac.log_beta = scalar_from(blocks, "log_beta")?;
    sac.actor_opt = adam_from(blocks, "actor_opt", sac.actor.net.param_count(), hp.actor_lr)?;
    sac.q1_opt = adam_from(blocks, "q1_opt", sac.q1.param_count(), hp.critic_lr)?;
    sac.q2_opt = adam_from(blocks, "q2_opt", sac.q2.param_count(), hp.critic_lr)?;
    sac.beta_opt = adam_from(blocks, "beta_opt", 1, hp.beta_lr)?;
    if !sac.is_finite() {
        return Err(Error::Checkpoint("checkpoint holds non-finite parameters".into()));
    }
    Ok(sac)
}

pub fn save_learner(path: &Path, sac: &Sac, sidecar: &PolicySidecar) -> Result<()> {
    write_blocks(path, &learner_blocks(sac))?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(sidecar)?)?;
    Ok(())
}

pub fn load_learner(path: &Path, hp: SacHyperparams) -> Result<Sac> {
    learner_from_blocks(&read_blocks(path)?, hp)
}
