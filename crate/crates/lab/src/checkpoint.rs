//! `PRFTCKPT` binary tensor container plus its JSON manifest.
//!
//! Layout, all integers little-endian:
//! `b"PRFTCKPT"`, version `u8`, then until end of file, per tensor:
//! name length `u32`, UTF-8 name, rank `u32`, `rank` dims as `u64`,
//! `product(dims)` values as `f64`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use pointrft_core::encoder::Body;
use pointrft_core::paradigms::PretrainManifest;
use pointrft_core::{Checkpoint, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const MAGIC: &[u8; 8] = b"PRFTCKPT";
pub const VERSION: u8 = 1;
const MAX_NAME: u32 = 1 << 12;
const MAX_RANK: u32 = 8;

/// Base/new class assignment made at pretraining time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub seed: u64,
    pub base: Vec<String>,
    pub new: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub pretrain: PretrainManifest,
    pub split: Option<ClassSplit>,
    /// Content hash of the data file the body was trained on.
    pub data_hash: Option<String>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    crate::prftpc::sidecar_path(path)
}

pub fn write_tensors<W: Write>(w: &mut W, tensors: &[(&str, &Tensor)]) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Fills `buf` unless the stream is already at its end, which returns false.
fn read_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<bool> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) if got == 0 => return Ok(false),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

pub fn read_tensors<R: Read>(r: &mut R, path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bad = |msg: String| LabError::Format {
        path: path.to_path_buf(),
        msg,
    };
    let io_err = |e: io::Error| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            bad("truncated checkpoint".into())
        } else {
            LabError::io(path, e)
        }
    };
    let mut head = [0u8; 9];
    r.read_exact(&mut head).map_err(io_err)?;
    if &head[..8] != MAGIC {
        return Err(bad("not a PRFTCKPT file".into()));
    }
    if head[8] != VERSION {
        return Err(bad(format!("unsupported version {}", head[8])));
    }
    let mut out = Vec::new();
    loop {
        let mut len = [0u8; 4];
        if !read_or_eof(r, &mut len).map_err(io_err)? {
            break;
        }
        let len = u32::from_le_bytes(len);
        if len > MAX_NAME {
            return Err(bad(format!("tensor name length {len}")));
        }
        let mut name = vec![0u8; len as usize];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8".into()))?;
        let rank = read_u32(r).map_err(io_err)?;
        if rank > MAX_RANK {
            return Err(bad(format!("{name}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel = 1usize;
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(io_err)?;
            let d = usize::try_from(u64::from_le_bytes(b)).map_err(|_| bad(format!("{name}: dim overflow")))?;
            numel = numel.checked_mul(d).ok_or_else(|| bad(format!("{name}: size overflow")))?;
            shape.push(d);
        }
        let mut bytes = Vec::new();
        r.by_ref()
            .take(numel as u64 * 8)
            .read_to_end(&mut bytes)
            .map_err(io_err)?;
        if bytes.len() != numel * 8 {
            return Err(bad(format!("{name}: truncated payload")));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| bad(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn save_body(path: &Path, body: &Body) -> Result<()> {
    let f = File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_tensors(&mut w, &body.named())
        .and_then(|_| w.flush())
        .map_err(|e| LabError::io(path, e))
}

pub fn load_body(path: &Path) -> Result<Body> {
    let f = File::open(path).map_err(|e| LabError::io(path, e))?;
    let tensors = read_tensors(&mut BufReader::new(f), path)?;
    let take = |want: &str| {
        tensors
            .iter()
            .find(|(n, _)| n == want)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| LabError::Format {
                path: path.to_path_buf(),
                msg: format!("missing tensor {want}"),
            })
    };
    Ok(Body::from_tensors(take("body.w1")?, take("body.b1")?, take("body.w2")?, take("body.b2")?)?)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint, manifest: &CheckpointManifest) -> Result<()> {
    save_body(path, &ckpt.body)?;
    crate::records::write_json(&manifest_path(path), manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, CheckpointManifest)> {
    let body = load_body(path)?;
    let manifest: CheckpointManifest = crate::records::read_json(&manifest_path(path))?;
    if (manifest.pretrain.h1, manifest.pretrain.h2) != (body.h1(), body.h2()) {
        return Err(LabError::Format {
            path: path.to_path_buf(),
            msg: format!(
                "manifest dims {}x{} disagree with stored {}x{}",
                manifest.pretrain.h1,
                manifest.pretrain.h2,
                body.h1(),
                body.h2()
            ),
        });
    }
    let ckpt = Checkpoint {
        body,
        manifest: manifest.pretrain.clone(),
    };
    Ok((ckpt, manifest))
}
