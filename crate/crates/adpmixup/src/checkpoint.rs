//! Binary checkpoint format for backbones and adapters.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   7 bytes  b"ADPMIX1"
//! kind    1 byte   0 = backbone, 1 = adapter
//! vocab   u32      0 when not applicable
//! hidden  u32
//! rank    u32      bottleneck width; 0 when not applicable
//! classes u32
//! tag_len u32
//! tag     tag_len bytes UTF-8
//! payload f64 LE, row-major, fixed field order
//! ```
//!
//! Backbone payload order: embedding, layer1, bias1, layer2, bias2, head,
//! head_bias. Adapter payload order: block1 (down, down_bias, up, up_bias),
//! block2 (same), head_delta, head_bias_delta.
//!
//! Saving the same value twice produces byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::{AdapterBlock, AdapterDelta, BackboneParams, FORMAT_TAG};

const MAGIC: &[u8; 7] = b"ADPMIX1";
const KIND_BACKBONE: u8 = 0;
const KIND_ADAPTER: u8 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64s(w: &mut impl Write, vals: &[f64]) -> Result<()> {
    for &v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_mat(r: &mut impl Read, rows: usize, cols: usize) -> Result<Mat> {
    let data = read_f64s(r, rows * cols)?;
    Mat::from_vec(rows, cols, data)
}

struct Header {
    kind: u8,
    vocab: u32,
    hidden: u32,
    rank: u32,
    classes: u32,
    tag: String,
}

fn write_header(w: &mut impl Write, h: &Header) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[h.kind])?;
    write_u32(w, h.vocab)?;
    write_u32(w, h.hidden)?;
    write_u32(w, h.rank)?;
    write_u32(w, h.classes)?;
    let tag_bytes = h.tag.as_bytes();
    write_u32(w, tag_bytes.len() as u32)?;
    w.write_all(tag_bytes)?;
    Ok(())
}

fn read_header(r: &mut impl Read, path: &Path) -> Result<Header> {
    let bad = |detail: String| Error::Checkpoint(format!("{}: {detail}", path.display()));
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)
        .map_err(|e| bad(format!("short read on magic: {e}")))?;
    if &magic != MAGIC {
        return Err(bad(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            FORMAT_TAG
        )));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    if kind[0] != KIND_BACKBONE && kind[0] != KIND_ADAPTER {
        return Err(bad(format!("unknown kind byte {}", kind[0])));
    }
    let vocab = read_u32(r)?;
    let hidden = read_u32(r)?;
    let rank = read_u32(r)?;
    let classes = read_u32(r)?;
    if hidden == 0 || classes == 0 {
        return Err(bad(format!(
            "degenerate dims: hidden={hidden} classes={classes}"
        )));
    }
    let tag_len = read_u32(r)? as usize;
    if tag_len > 4096 {
        return Err(bad(format!("unreasonable tag length {tag_len}")));
    }
    let mut tag_bytes = vec![0u8; tag_len];
    r.read_exact(&mut tag_bytes)?;
    let tag = String::from_utf8(tag_bytes).map_err(|_| bad("tag is not UTF-8".into()))?;
    Ok(Header {
        kind: kind[0],
        vocab,
        hidden,
        rank,
        classes,
        tag,
    })
}

/// Write a backbone checkpoint. Overwrites any existing file.
pub fn save_backbone(path: &Path, b: &BackboneParams) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_header(
        &mut w,
        &Header {
            kind: KIND_BACKBONE,
            vocab: b.vocab() as u32,
            hidden: b.hidden() as u32,
            rank: 0,
            classes: b.classes() as u32,
            tag: b.version.clone(),
        },
    )?;
    write_f64s(&mut w, b.embedding.data())?;
    write_f64s(&mut w, b.layer1.data())?;
    write_f64s(&mut w, &b.bias1)?;
    write_f64s(&mut w, b.layer2.data())?;
    write_f64s(&mut w, &b.bias2)?;
    write_f64s(&mut w, b.head.data())?;
    write_f64s(&mut w, &b.head_bias)?;
    w.flush()?;
    Ok(())
}

/// Read a backbone checkpoint, validating magic, kind, and payload length.
pub fn load_backbone(path: &Path) -> Result<BackboneParams> {
    let file = File::open(path).map_err(|e| {
        Error::Checkpoint(format!("{}: cannot open: {e}", path.display()))
    })?;
    let mut r = BufReader::new(file);
    let h = read_header(&mut r, path)?;
    if h.kind != KIND_BACKBONE {
        return Err(Error::Checkpoint(format!(
            "{}: expected a backbone checkpoint, found an adapter",
            path.display()
        )));
    }
    if h.vocab < 2 {
        return Err(Error::Checkpoint(format!(
            "{}: backbone vocab {} is too small",
            path.display(),
            h.vocab
        )));
    }
    let (v, d, k) = (h.vocab as usize, h.hidden as usize, h.classes as usize);
    let b = BackboneParams {
        embedding: read_mat(&mut r, v, d)?,
        layer1: read_mat(&mut r, d, d)?,
        bias1: read_f64s(&mut r, d)?,
        layer2: read_mat(&mut r, d, d)?,
        bias2: read_f64s(&mut r, d)?,
        head: read_mat(&mut r, d, k)?,
        head_bias: read_f64s(&mut r, k)?,
        version: h.tag,
    };
    expect_eof(&mut r, path)?;
    Ok(b)
}

/// Write an adapter checkpoint. Overwrites any existing file.
pub fn save_adapter(path: &Path, a: &AdapterDelta) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_header(
        &mut w,
        &Header {
            kind: KIND_ADAPTER,
            vocab: 0,
            hidden: a.hidden() as u32,
            rank: a.bottleneck() as u32,
            classes: a.classes() as u32,
            tag: a.tag.clone(),
        },
    )?;
    for block in [&a.block1, &a.block2] {
        write_f64s(&mut w, block.down.data())?;
        write_f64s(&mut w, &block.down_bias)?;
        write_f64s(&mut w, block.up.data())?;
        write_f64s(&mut w, &block.up_bias)?;
    }
    write_f64s(&mut w, a.head_delta.data())?;
    write_f64s(&mut w, &a.head_bias_delta)?;
    w.flush()?;
    Ok(())
}

/// Read an adapter checkpoint, validating magic, kind, and payload length.
pub fn load_adapter(path: &Path) -> Result<AdapterDelta> {
    let file = File::open(path).map_err(|e| {
        Error::Checkpoint(format!("{}: cannot open: {e}", path.display()))
    })?;
    let mut r = BufReader::new(file);
    let h = read_header(&mut r, path)?;
    if h.kind != KIND_ADAPTER {
        return Err(Error::Checkpoint(format!(
            "{}: expected an adapter checkpoint, found a backbone",
            path.display()
        )));
    }
    if h.rank == 0 || h.rank >= h.hidden {
        return Err(Error::Checkpoint(format!(
            "{}: adapter rank {} must be in 1..hidden ({})",
            path.display(),
            h.rank,
            h.hidden
        )));
    }
    let (d, r_, k) = (h.hidden as usize, h.rank as usize, h.classes as usize);
    let read_block = |rdr: &mut BufReader<File>| -> Result<AdapterBlock> {
        Ok(AdapterBlock {
            down: read_mat(rdr, d, r_)?,
            down_bias: read_f64s(rdr, r_)?,
            up: read_mat(rdr, r_, d)?,
            up_bias: read_f64s(rdr, d)?,
        })
    };
    let block1 = read_block(&mut r)?;
    let block2 = read_block(&mut r)?;
    let a = AdapterDelta {
        block1,
        block2,
        head_delta: read_mat(&mut r, d, k)?,
        head_bias_delta: read_f64s(&mut r, k)?,
        tag: h.tag,
    };
    expect_eof(&mut r, path)?;
    Ok(a)
}

fn expect_eof(r: &mut impl Read, path: &Path) -> Result<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => Ok(()),
        _ => Err(Error::Checkpoint(format!(
            "{}: trailing bytes after payload",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn sample_backbone() -> BackboneParams {
        let dims = ModelDims {
            vocab: 16,
            hidden: 4,
            bottleneck: 2,
            classes: 3,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut b = BackboneParams::zeros(&dims);
        for m in [
            &mut b.embedding,
            &mut b.layer1,
            &mut b.layer2,
            &mut b.head,
        ] {
            for v in m.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        b
    }

    fn sample_adapter() -> AdapterDelta {
        let dims = ModelDims {
            vocab: 16,
            hidden: 4,
            bottleneck: 2,
            classes: 3,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut a = AdapterDelta::zeros(&dims, "adv:char_noise");
        for m in [
            &mut a.block1.down,
            &mut a.block1.up,
            &mut a.block2.down,
            &mut a.block2.up,
            &mut a.head_delta,
        ] {
            for v in m.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        a.head_bias_delta = vec![0.5, -0.25, 0.125];
        a
    }

    #[test]
    fn backbone_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("backbone.adpmix");
        let b = sample_backbone();
        save_backbone(&path, &b).unwrap();
        let loaded = load_backbone(&path).unwrap();
        assert_eq!(b, loaded);
        assert_eq!(loaded.version, FORMAT_TAG);
    }

    #[test]
    fn adapter_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adapter.adpmix");
        let a = sample_adapter();
        save_adapter(&path, &a).unwrap();
        let loaded = load_adapter(&path).unwrap();
        assert_eq!(a, loaded);
        assert_eq!(loaded.tag, "adv:char_noise");
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a1.adpmix");
        let p2 = dir.path().join("a2.adpmix");
        let a = sample_adapter();
        save_adapter(&p1, &a).unwrap();
        save_adapter(&p2, &a).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.adpmix");
        let a = sample_adapter();
        save_adapter(&path, &a).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = load_adapter(&path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "got {err:?}");
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn rejects_wrong_kind() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kind.adpmix");
        save_backbone(&path, &sample_backbone()).unwrap();
        let err = load_adapter(&path).unwrap_err();
        assert!(err.to_string().contains("expected an adapter"));
        let path2 = dir.path().join("kind2.adpmix");
        save_adapter(&path2, &sample_adapter()).unwrap();
        let err2 = load_backbone(&path2).unwrap_err();
        assert!(err2.to_string().contains("expected a backbone"));
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.adpmix");
        save_adapter(&path, &sample_adapter()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(load_adapter(&path).is_err());
    }

    #[test]
    fn rejects_trailing_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trail.adpmix");
        save_adapter(&path, &sample_adapter()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0u8; 4]);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_adapter(&path).unwrap_err();
        assert!(err.to_string().contains("trailing"));
    }

    #[test]
    fn rejects_missing_file() {
        let err = load_backbone(Path::new("/nonexistent/nothing.adpmix")).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn rejects_corrupt_rank() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rank.adpmix");
        save_adapter(&path, &sample_adapter()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // rank field sits after magic(7) + kind(1) + vocab(4) + hidden(4).
        bytes[16..20].copy_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = load_adapter(&path).unwrap_err();
        assert!(err.to_string().contains("rank"));
    }
}
