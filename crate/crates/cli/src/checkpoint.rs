//! Checkpoint file: magic `MTLTAC01`, `u32` version, `u32`-prefixed JSON
//! snapshot, `u64` step, `u32` tensor count, then per tensor a `u16`-prefixed
//! name, `u8` rank, `u32` dims and little-endian `f32` data, and finally a
//! CRC32 of everything before it. All integers are little-endian.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use phrasenet_core::tensor::{AdamState, ParamStore, Tensor};
use phrasenet_core::text::SymbolTable;
use phrasenet_core::train::{LossEma, TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"MTLTAC01";
pub const VERSION: u32 = 1;
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

/// What a checkpoint holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// Full model of the configured variant.
    Joint,
    /// Prosody generator trained alone.
    Prosody,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub kind: CheckpointKind,
    pub config: TrainConfig,
    /// Symbol table characters after the PAD and UNK slots.
    pub symbols: Vec<char>,
    pub adam_t: u64,
    pub ema: LossEma,
    /// Names of frozen parameters.
    pub frozen: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub snapshot: Snapshot,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind, config: &TrainConfig, symbols: &SymbolTable, state: &TrainState) -> Self {
        let frozen = state
            .store
            .iter()
            .filter(|(_, p)| !p.tensor.requires_grad())
            .map(|(_, p)| p.name.clone())
            .collect();
        Self {
            snapshot: Snapshot {
                kind,
                config: config.clone(),
                symbols: symbols.symbols().to_vec(),
                adam_t: state.adam.t,
                ema: state.ema,
                frozen,
            },
            state: state.clone(),
        }
    }

    pub fn symbol_table(&self) -> SymbolTable {
        SymbolTable::from_symbols(self.snapshot.symbols.iter().copied())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let snap = serde_json::to_vec(&self.snapshot)?;
        out.extend_from_slice(&(snap.len() as u32).to_le_bytes());
        out.extend_from_slice(&snap);
        out.extend_from_slice(&self.state.step.to_le_bytes());
        let store = &self.state.store;
        let n = store.len() * 3;
        out.extend_from_slice(&(n as u32).to_le_bytes());
        for (_, p) in store.iter() {
            write_tensor(&mut out, &p.name, p.tensor.shape(), p.tensor.data())?;
        }
        for (prefix, moments) in [(ADAM_M, &self.state.adam.m), (ADAM_V, &self.state.adam.v)] {
            for ((_, p), m) in store.iter().zip(moments.iter()) {
                write_tensor(&mut out, &format!("{prefix}{}", p.name), p.tensor.shape(), m)?;
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        ensure!(bytes.len() >= MAGIC.len() + 4 + 4, "checkpoint too short");
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(crc_bytes.try_into().expect("four bytes"));
        let actual = crc32fast::hash(body);
        ensure!(stored == actual, "checkpoint CRC mismatch: stored {stored:08x}, computed {actual:08x}");
        let mut r = Reader { bytes: body, pos: 0 };
        ensure!(r.take(8)? == MAGIC, "not a checkpoint (bad magic)");
        let version = r.u32()?;
        ensure!(version == VERSION, "unsupported checkpoint version {version}");
        let snap_len = r.u32()? as usize;
        let snapshot: Snapshot = serde_json::from_slice(r.take(snap_len)?).context("checkpoint snapshot")?;
        let step = r.u64()?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            tensors.push(r.tensor()?);
        }
        ensure!(r.pos == body.len(), "trailing bytes in checkpoint");
        ensure!(n % 3 == 0, "tensor count {n} is not params + two moment sets");
        let k = n / 3;
        let mut store = ParamStore::new();
        for (name, t) in &tensors[..k] {
            store.register(name, t.clone())?;
        }
        for name in &snapshot.frozen {
            let id = store.id(name)?;
            store.tensor_mut(id).set_requires_grad(false);
        }
        let mut m = Vec::with_capacity(k);
        let mut v = Vec::with_capacity(k);
        for (i, (_, p)) in store.iter().enumerate() {
            let (mn, mt) = &tensors[k + i];
            let (vn, vt) = &tensors[2 * k + i];
            ensure!(
                *mn == format!("{ADAM_M}{}", p.name) && *vn == format!("{ADAM_V}{}", p.name),
                "optimizer tensors out of order at {}",
                p.name
            );
            m.push(mt.data().to_vec());
            v.push(vt.data().to_vec());
        }
        let adam = AdamState {
            config: snapshot.config.adam(),
            m,
            v,
            t: snapshot.adam_t,
        };
        let state = TrainState {
            step,
            store,
            adam,
            ema: snapshot.ema,
        };
        Ok(Self { snapshot, state })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes()?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))
    }
}

fn write_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    ensure!(name.len() <= u16::MAX as usize, "tensor name too long");
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in data {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let Some(s) = self.bytes.get(self.pos..self.pos + n) else {
            bail!("checkpoint truncated at byte {}", self.pos)
        };
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")) as usize;
        let name = String::from_utf8(self.take(len)?.to_vec()).context("tensor name")?;
        let rank = self.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let data = self
            .take(count * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
            .collect();
        Ok((name, Tensor::new(shape, data)?))
    }
}
