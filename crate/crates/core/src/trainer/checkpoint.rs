//! `SPWC` checkpoint container.
//!
//! ```text
//! "SPWC" | u32 version
//! u32 len | config block (UTF-8 `key=value` lines)
//! u32 n | n x (u16 name_len | name | u32 ndim | u64 dims.. | f64 data..)
//! u64 step | f64 lr, beta1, beta2, eps | m tensors | v tensors (data only)
//! 32-byte seed | u64 stream | u128 word_pos
//! ```
//!
//! All integers and floats are little-endian.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::embedder::{AdamConfig, AdamState, EmbedderConfig, ModelParams, TdnnLayer, Tensor};
use crate::features::CmvnStats;

pub const SPWC_MAGIC: &[u8; 4] = b"SPWC";
pub const SPWC_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Complete training state after some number of epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: EmbedderConfig,
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub adam: AdamConfig,
    pub stage_id: u8,
    pub epoch: u32,
    pub rng: RngState,
    /// Class index -> speaker id.
    pub speakers: Vec<String>,
    pub cmvn: CmvnStats,
}

impl Checkpoint {
    pub fn speaker_index(&self, speaker: &str) -> Option<usize> {
        self.speakers
            .binary_search_by(|s| s.as_str().cmp(speaker))
            .ok()
    }

    /// Fails on the first embedder field that differs from `expected`.
    /// `n_classes` and `input_dim` are compared only when nonzero in `expected`.
    pub fn expect_config(&self, expected: &EmbedderConfig) -> Result<(), TrainError> {
        let mismatch = |field: &str, want: String, got: String| {
            Err(TrainError::ConfigMismatch {
                field: field.to_string(),
                expected: want,
                found: got,
            })
        };
        let (a, b) = (expected, &self.config);
        if a.input_dim != 0 && a.input_dim != b.input_dim {
            return mismatch(
                "input_dim",
                a.input_dim.to_string(),
                b.input_dim.to_string(),
            );
        }
        if a.n_classes != 0 && a.n_classes != b.n_classes {
            return mismatch(
                "n_classes",
                a.n_classes.to_string(),
                b.n_classes.to_string(),
            );
        }
        if a.channels != b.channels {
            return mismatch("channels", a.channels.to_string(), b.channels.to_string());
        }
        if a.tdnn_layers != b.tdnn_layers {
            return mismatch(
                "tdnn_layers",
                layers_text(&a.tdnn_layers),
                layers_text(&b.tdnn_layers),
            );
        }
        if a.attention_dim != b.attention_dim {
            return mismatch(
                "attention_dim",
                a.attention_dim.to_string(),
                b.attention_dim.to_string(),
            );
        }
        if a.embedding_dim != b.embedding_dim {
            return mismatch(
                "embedding_dim",
                a.embedding_dim.to_string(),
                b.embedding_dim.to_string(),
            );
        }
        if a.aam_scale.to_bits() != b.aam_scale.to_bits() {
            return mismatch(
                "aam_scale",
                a.aam_scale.to_string(),
                b.aam_scale.to_string(),
            );
        }
        if a.aam_margin.to_bits() != b.aam_margin.to_bits() {
            return mismatch(
                "aam_margin",
                a.aam_margin.to_string(),
                b.aam_margin.to_string(),
            );
        }
        Ok(())
    }
}

fn layers_text(layers: &[TdnnLayer]) -> String {
    layers
        .iter()
        .map(|l| format!("{}:{}", l.kernel, l.dilation))
        .collect::<Vec<_>>()
        .join(",")
}

fn config_block(ck: &Checkpoint) -> String {
    let c = &ck.config;
    let mut s = String::new();
    let _ = writeln!(s, "input_dim={}", c.input_dim);
    let _ = writeln!(s, "channels={}", c.channels);
    let _ = writeln!(s, "tdnn_layers={}", layers_text(&c.tdnn_layers));
    let _ = writeln!(s, "attention_dim={}", c.attention_dim);
    let _ = writeln!(s, "embedding_dim={}", c.embedding_dim);
    let _ = writeln!(s, "n_classes={}", c.n_classes);
    let _ = writeln!(s, "aam_scale={:016x}", c.aam_scale.to_bits());
    let _ = writeln!(s, "aam_margin={:016x}", c.aam_margin.to_bits());
    let _ = writeln!(s, "stage_id={}", ck.stage_id);
    let _ = writeln!(s, "epoch={}", ck.epoch);
    let _ = writeln!(s, "speakers={}", ck.speakers.join("\t"));
    let _ = writeln!(s, "cmvn_frames={}", ck.cmvn.frame_count);
    let hex = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{:016x}", x.to_bits()))
            .collect::<Vec<_>>()
            .join(",")
    };
    let _ = writeln!(s, "cmvn_mean={}", hex(&ck.cmvn.mean));
    let _ = writeln!(s, "cmvn_std={}", hex(&ck.cmvn.std));
    s
}

fn put_tensor_data(out: &mut Vec<u8>, t: &Tensor) {
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SPWC_MAGIC);
    out.extend_from_slice(&SPWC_VERSION.to_le_bytes());
    let block = config_block(ck);
    out.extend_from_slice(&(block.len() as u32).to_le_bytes());
    out.extend_from_slice(block.as_bytes());

    out.extend_from_slice(&(ck.params.tensors.len() as u32).to_le_bytes());
    for t in &ck.params.tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        put_tensor_data(&mut out, t);
    }

    out.extend_from_slice(&ck.optimizer.step.to_le_bytes());
    for h in [ck.adam.lr, ck.adam.beta1, ck.adam.beta2, ck.adam.eps] {
        out.extend_from_slice(&h.to_le_bytes());
    }
    for t in ck.optimizer.m.tensors.iter().chain(&ck.optimizer.v.tensors) {
        put_tensor_data(&mut out, t);
    }

    out.extend_from_slice(&ck.rng.seed);
    out.extend_from_slice(&ck.rng.stream.to_le_bytes());
    out.extend_from_slice(&ck.rng.word_pos.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        if self.bytes.len() - self.pos < n {
            return Err(TrainError::Truncated {
                path: self.path.to_path_buf(),
                offset: self.pos,
                needed: n,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, TrainError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, TrainError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, TrainError> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| self.malformed("tensor size overflow"))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn malformed(&self, msg: impl Into<String>) -> TrainError {
        TrainError::Malformed {
            path: self.path.to_path_buf(),
            message: msg.into(),
        }
    }
}

fn parse_config_block(
    text: &str,
    r: &Reader,
) -> Result<(EmbedderConfig, u8, u32, Vec<String>, CmvnStats), TrainError> {
    let mut fields = std::collections::BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| r.malformed(format!("config line without '=': {line}")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| {
        fields
            .get(k)
            .map(|s| s.as_str())
            .ok_or_else(|| r.malformed(format!("config block lacks {k}")))
    };
    let num = |k: &str| -> Result<u64, TrainError> {
        get(k)?
            .parse()
            .map_err(|_| r.malformed(format!("bad value for {k}")))
    };
    let bits = |s: &str, k: &str| -> Result<f64, TrainError> {
        u64::from_str_radix(s, 16)
            .map(f64::from_bits)
            .map_err(|_| r.malformed(format!("bad value for {k}")))
    };
    let hex_list = |k: &str| -> Result<Vec<f64>, TrainError> {
        let v = get(k)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',').map(|s| bits(s, k)).collect()
    };
    let mut layers = Vec::new();
    for part in get("tdnn_layers")?.split(',') {
        let (k, d) = part
            .split_once(':')
            .ok_or_else(|| r.malformed("bad tdnn_layers"))?;
        layers.push(TdnnLayer {
            kernel: k.parse().map_err(|_| r.malformed("bad tdnn_layers"))?,
            dilation: d.parse().map_err(|_| r.malformed("bad tdnn_layers"))?,
        });
    }
    let config = EmbedderConfig {
        input_dim: num("input_dim")? as usize,
        channels: num("channels")? as usize,
        tdnn_layers: layers,
        attention_dim: num("attention_dim")? as usize,
        embedding_dim: num("embedding_dim")? as usize,
        n_classes: num("n_classes")? as usize,
        aam_scale: bits(get("aam_scale")?, "aam_scale")?,
        aam_margin: bits(get("aam_margin")?, "aam_margin")?,
    };
    let speakers_text = get("speakers")?;
    let speakers = if speakers_text.is_empty() {
        Vec::new()
    } else {
        speakers_text.split('\t').map(String::from).collect()
    };
    let cmvn = CmvnStats {
        mean: hex_list("cmvn_mean")?,
        std: hex_list("cmvn_std")?,
        frame_count: num("cmvn_frames")?,
    };
    Ok((
        config,
        num("stage_id")? as u8,
        num("epoch")? as u32,
        speakers,
        cmvn,
    ))
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint, TrainError> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    let magic = r.take(4)?;
    if magic != SPWC_MAGIC {
        return Err(TrainError::BadMagic {
            path: path.to_path_buf(),
            found: magic.try_into().unwrap(),
        });
    }
    let version = r.u32()?;
    if version != SPWC_VERSION {
        return Err(TrainError::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let block_len = r.u32()? as usize;
    let block = std::str::from_utf8(r.take(block_len)?)
        .map_err(|_| r.malformed("config block is not UTF-8"))?
        .to_string();
    let (config, stage_id, epoch, speakers, cmvn) = parse_config_block(&block, &r)?;

    let n = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| r.malformed("tensor name is not UTF-8"))?;
        let ndim = r.u32()? as usize;
        if ndim > 8 {
            return Err(r.malformed(format!("tensor {name} has {ndim} dims")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| r.malformed("tensor size overflow"))?;
        let data = r.f64s(count)?;
        tensors.push(Tensor { name, shape, data });
    }
    let params = ModelParams { tensors };
    params
        .check_layout(&config)
        .map_err(|e| r.malformed(e.to_string()))?;

    let step = r.u64()?;
    let adam = AdamConfig {
        lr: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
    };
    let mut m = params.zeros_like();
    for t in &mut m.tensors {
        t.data = r.f64s(t.data.len())?;
    }
    let mut v = params.zeros_like();
    for t in &mut v.tensors {
        t.data = r.f64s(t.data.len())?;
    }

    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
    if r.pos != bytes.len() {
        return Err(r.malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        config,
        params,
        optimizer: AdamState { step, m, v },
        adam,
        stage_id,
        epoch,
        rng: RngState {
            seed,
            stream,
            word_pos,
        },
        speakers,
        cmvn,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<(), TrainError> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ck)).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, TrainError> {
    let path: PathBuf = path.as_ref().to_path_buf();
    let bytes = fs::read(&path).map_err(|source| TrainError::Io {
        path: path.clone(),
        source,
    })?;
    decode_checkpoint(&bytes, &path)
}
