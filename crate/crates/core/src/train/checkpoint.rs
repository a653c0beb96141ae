//! Checkpoint directory: `config.txt`, `params.bin`, `adam.bin`, `rng.txt`,
//! `cursor.txt`.
//!
//! Tensor files are `magic[4] | version u32 | count u32`, then per tensor
//! `name_len u32 | name | rank u32 | dims u64... | f32 data`, all little
//! endian, followed by the SHA-256 of everything before it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

use super::loader::Cursor;
use super::TrainError;
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::{AdamState, Tensor};
use crate::Scalar;

pub const PARAMS_MAGIC: [u8; 4] = *b"MPTW";
pub const ADAM_MAGIC: [u8; 4] = *b"MPTA";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

pub fn encode_tensors<T: Scalar>(magic: [u8; 4], tensors: &[(&str, &Tensor<T>)]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&magic);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| TrainError::Integrity("truncated tensor file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a tensor file after verifying its digest; nothing is returned on
/// any corruption.
pub fn decode_tensors(magic: [u8; 4], bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>, TrainError> {
    let bad = |m: &str| TrainError::Integrity(m.to_string());
    if bytes.len() < 12 + DIGEST_LEN {
        return Err(bad("truncated tensor file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch"));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != magic {
        return Err(bad("wrong magic bytes"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(TrainError::Integrity(format!("unsupported format version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("shape overflow"))?;
        let raw = r.take(len.checked_mul(4).ok_or_else(|| bad("shape overflow"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, Tensor::new(&shape, data).map_err(|e| bad(&e.to_string()))?));
    }
    if r.pos != body.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

/// Bytes of raw tensor data in an encoded file.
pub fn data_bytes(tensors: &[(String, Tensor<f32>)]) -> usize {
    tensors.iter().map(|(_, t)| 4 * t.len()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub cursor: Cursor,
    /// `f64::INFINITY` until the first evaluation.
    pub best_val: f64,
    pub best_step: u64,
    pub finished: bool,
    /// Training loss accumulated since the last evaluation.
    pub loss_sum: f64,
    pub loss_count: u64,
}

impl Default for TrainState {
    fn default() -> Self {
        TrainState {
            step: 0,
            cursor: Cursor::default(),
            best_val: f64::INFINITY,
            best_step: 0,
            finished: false,
            loss_sum: 0.0,
            loss_count: 0,
        }
    }
}

impl TrainState {
    fn to_kv(&self, adam_step: u64) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "version={FORMAT_VERSION}");
        let _ = writeln!(s, "step={}", self.step);
        let _ = writeln!(s, "adam_step={adam_step}");
        let _ = writeln!(s, "pass={}", self.cursor.pass);
        let _ = writeln!(s, "row={}", self.cursor.row);
        let _ = writeln!(s, "best_val={:?}", self.best_val);
        let _ = writeln!(s, "best_step={}", self.best_step);
        let _ = writeln!(s, "finished={}", self.finished);
        let _ = writeln!(s, "loss_sum={:?}", self.loss_sum);
        let _ = writeln!(s, "loss_count={}", self.loss_count);
        s
    }

    fn from_kv(text: &str) -> Result<(TrainState, u64), TrainError> {
        let map = parse_kv(text)?;
        let get = |k: &str| {
            map.get(k)
                .ok_or_else(|| TrainError::Integrity(format!("cursor.txt: missing '{k}'")))
        };
        fn num<V: std::str::FromStr>(k: &str, v: &str) -> Result<V, TrainError> {
            v.parse()
                .map_err(|_| TrainError::Integrity(format!("cursor.txt: bad value for '{k}'")))
        }
        if num::<u32>("version", get("version")?)? != FORMAT_VERSION {
            return Err(TrainError::Integrity("cursor.txt: unsupported version".into()));
        }
        let st = TrainState {
            step: num("step", get("step")?)?,
            cursor: Cursor {
                pass: num("pass", get("pass")?)?,
                row: num("row", get("row")?)?,
            },
            best_val: num("best_val", get("best_val")?)?,
            best_step: num("best_step", get("best_step")?)?,
            finished: num("finished", get("finished")?)?,
            loss_sum: num("loss_sum", get("loss_sum")?)?,
            loss_count: num("loss_count", get("loss_count")?)?,
        };
        Ok((st, num("adam_step", get("adam_step")?)?))
    }
}

pub(crate) fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, TrainError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| TrainError::Config(format!("line {}: expected key=value", i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn rng_to_text(rng: &ChaCha8Rng) -> String {
    let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    format!(
        "version={FORMAT_VERSION}\nseed={seed}\nstream={}\nword_pos={}\n",
        rng.get_stream(),
        rng.get_word_pos()
    )
}

fn rng_from_text(text: &str) -> Result<ChaCha8Rng, TrainError> {
    let bad = || TrainError::Integrity("rng.txt is malformed".into());
    let map = parse_kv(text)?;
    let hex = map.get("seed").ok_or_else(bad)?;
    if hex.len() != 64 {
        return Err(bad());
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(map.get("stream").ok_or_else(bad)?.parse().map_err(|_| bad())?);
    rng.set_word_pos(map.get("word_pos").ok_or_else(bad)?.parse().map_err(|_| bad())?);
    Ok(rng)
}

/// Everything needed to continue training bitwise-identically.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    pub rng: ChaCha8Rng,
    pub state: TrainState,
}

impl Checkpoint {
    /// Writes into a sibling temp directory and renames it into place, so a
    /// crash never leaves a half-written checkpoint under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        let tmp = dir.with_extension("tmp");
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp)?;
        }
        std::fs::create_dir_all(&tmp)?;
        std::fs::write(tmp.join("config.txt"), self.params.config().to_kv())?;
        let named: Vec<(&str, &Tensor<f32>)> = self
            .params
            .names()
            .iter()
            .map(String::as_str)
            .zip(self.params.tensors())
            .collect();
        std::fs::write(tmp.join("params.bin"), encode_tensors(PARAMS_MAGIC, &named))?;
        let moments: Vec<(String, Tensor<f32>)> = self
            .params
            .names()
            .iter()
            .zip(self.params.tensors())
            .enumerate()
            .flat_map(|(i, (n, t))| {
                [
                    (format!("m.{n}"), Tensor::new(t.shape(), self.adam.m[i].clone()).expect("moment shape")),
                    (format!("v.{n}"), Tensor::new(t.shape(), self.adam.v[i].clone()).expect("moment shape")),
                ]
            })
            .collect();
        let named: Vec<(&str, &Tensor<f32>)> = moments.iter().map(|(n, t)| (n.as_str(), t)).collect();
        std::fs::write(tmp.join("adam.bin"), encode_tensors(ADAM_MAGIC, &named))?;
        std::fs::write(tmp.join("rng.txt"), rng_to_text(&self.rng))?;
        std::fs::write(tmp.join("cursor.txt"), self.state.to_kv(self.adam.step))?;
        let old = dir.with_extension("old");
        if old.exists() {
            std::fs::remove_dir_all(&old)?;
        }
        if dir.exists() {
            std::fs::rename(dir, &old)?;
        }
        std::fs::rename(&tmp, dir)?;
        if old.exists() {
            std::fs::remove_dir_all(&old)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Checkpoint, TrainError> {
        let read = |name: &str| -> Result<Vec<u8>, TrainError> {
            std::fs::read(dir.join(name)).map_err(|e| TrainError::Integrity(format!("{}: {e}", dir.join(name).display())))
        };
        let config = ModelConfig::from_kv(&String::from_utf8_lossy(&read("config.txt")?))?;
        let params = ModelParams::from_tensors(&config, decode_tensors(PARAMS_MAGIC, &read("params.bin")?)?)
            .map_err(|e| TrainError::Integrity(format!("params.bin: {e}")))?;
        let moments = decode_tensors(ADAM_MAGIC, &read("adam.bin")?)?;
        if moments.len() != 2 * params.names().len() {
            return Err(TrainError::Integrity("adam.bin: tensor count mismatch".into()));
        }
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (i, (name, t)) in params.names().iter().zip(params.tensors()).enumerate() {
            let (mn, mt) = &moments[2 * i];
            let (vn, vt) = &moments[2 * i + 1];
            if *mn != format!("m.{name}") || *vn != format!("v.{name}") || mt.shape() != t.shape() || vt.shape() != t.shape() {
                return Err(TrainError::Integrity(format!("adam.bin: order mismatch at '{name}'")));
            }
            m.push(mt.data().to_vec());
            v.push(vt.data().to_vec());
        }
        let rng = rng_from_text(&String::from_utf8_lossy(&read("rng.txt")?))?;
        let (state, adam_step) = TrainState::from_kv(&String::from_utf8_lossy(&read("cursor.txt")?))?;
        Ok(Checkpoint {
            params,
            adam: AdamState { step: adam_step, m, v },
            rng,
            state,
        })
    }
}
