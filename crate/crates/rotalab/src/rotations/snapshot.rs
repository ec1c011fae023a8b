//! Binary snapshots: magic bytes `ROTL1`, little-endian dims, raw doubles.
//!
//! A snapshot is a list of named records (rotations, vectors, counters), so
//! the same container serves standalone rotation files and full run
//! checkpoints. Round trips are bit exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::compiled::{BlockSet, CompiledKind, CompiledRotation, PartitionOp, SvdLayerOp};
use super::layout::Scope;
use super::RotationError;
use crate::linalg::{DenseMatrix, DenseVector, Permutation};

pub const MAGIC: &[u8; 5] = b"ROTL1";

const TAG_ROTATION: u8 = 1;
const TAG_VECTOR: u8 = 2;
const TAG_SCALAR: u8 = 3;

#[derive(Debug, Clone)]
pub enum Record {
    Rotation(CompiledRotation),
    Vector(DenseVector),
    Scalar(u64),
}

pub fn write_snapshot(path: &Path, records: &[(String, Record)]) -> Result<(), RotationError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, records.len() as u32)?;
    for (name, record) in records {
        match record {
            Record::Rotation(rot) => {
                w.write_all(&[TAG_ROTATION])?;
                write_name(&mut w, name)?;
                write_rotation(&mut w, rot)?;
            }
            Record::Vector(v) => {
                w.write_all(&[TAG_VECTOR])?;
                write_name(&mut w, name)?;
                write_u64(&mut w, v.len() as u64)?;
                for x in v.iter() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            Record::Scalar(x) => {
                w.write_all(&[TAG_SCALAR])?;
                write_name(&mut w, name)?;
                write_u64(&mut w, *x)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Vec<(String, Record)>, RotationError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| RotationError::CorruptSnapshot("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(RotationError::CorruptSnapshot(format!(
            "bad magic bytes {magic:02x?}"
        )));
    }
    let count = read_u32(&mut r)?;
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let tag = read_u8(&mut r)?;
        let name = read_name(&mut r)?;
        let record = match tag {
            TAG_ROTATION => Record::Rotation(read_rotation(&mut r)?),
            TAG_VECTOR => {
                let len = read_u64(&mut r)? as usize;
                let mut data = Vec::with_capacity(len);
                for _ in 0..len {
                    data.push(read_f64(&mut r)?);
                }
                Record::Vector(DenseVector::new(data))
            }
            TAG_SCALAR => Record::Scalar(read_u64(&mut r)?),
            other => {
                return Err(RotationError::CorruptSnapshot(format!(
                    "unknown record tag {other}"
                )))
            }
        };
        records.push((name, record));
    }
    Ok(records)
}

/// Pulls one named record out of a snapshot listing.
pub fn find<'a>(records: &'a [(String, Record)], name: &str) -> Option<&'a Record> {
    records.iter().find(|(n, _)| n == name).map(|(_, r)| r)
}

fn write_rotation<W: Write>(w: &mut W, rot: &CompiledRotation) -> Result<(), RotationError> {
    w.write_all(&[scope_code(rot.scope()), rot.omit_permutation_undo() as u8])?;
    write_u64(w, rot.dim() as u64)?;
    match rot.kind() {
        CompiledKind::Identity => w.write_all(&[0u8])?,
        CompiledKind::Random(parts) => {
            w.write_all(&[1u8])?;
            write_u64(w, parts.len() as u64)?;
            for part in parts {
                write_u64(w, part.indices.len() as u64)?;
                for &i in &part.indices {
                    write_u64(w, i as u64)?;
                }
                for &i in part.perm.forward() {
                    write_u64(w, i as u64)?;
                }
                w.write_all(&[part.blocks.is_shared() as u8])?;
                write_u64(w, part.blocks.block_dim() as u64)?;
                write_u64(w, part.blocks.count() as u64)?;
                let stored = if part.blocks.is_shared() {
                    1
                } else {
                    part.blocks.count()
                };
                for b in 0..stored {
                    write_matrix_data(w, part.blocks.get(b))?;
                }
                match &part.residual {
                    None => w.write_all(&[0u8])?,
                    Some(res) => {
                        w.write_all(&[1u8])?;
                        write_u64(w, res.rows() as u64)?;
                        write_matrix_data(w, res)?;
                    }
                }
            }
        }
        CompiledKind::Svd(layers) => {
            w.write_all(&[2u8])?;
            write_u64(w, layers.len() as u64)?;
            for layer in layers {
                write_name(w, &layer.layer_name)?;
                write_u64(w, layer.start as u64)?;
                write_u64(w, layer.out_dim as u64)?;
                write_u64(w, layer.in_dim as u64)?;
                w.write_all(&[layer.transposed as u8])?;
                match &layer.factors {
                    None => w.write_all(&[0u8])?,
                    Some((u, v)) => {
                        w.write_all(&[1u8])?;
                        write_u64(w, u.rows() as u64)?;
                        write_matrix_data(w, u)?;
                        write_u64(w, v.rows() as u64)?;
                        write_matrix_data(w, v)?;
                    }
                }
            }
        }
    }
    Ok(())
}

fn read_rotation<R: Read>(r: &mut R) -> Result<CompiledRotation, RotationError> {
    let scope = scope_from_code(read_u8(r)?)?;
    let omit = read_u8(r)? != 0;
    let dim = read_u64(r)? as usize;
    let kind = match read_u8(r)? {
        0 => CompiledKind::Identity,
        1 => {
            let n_parts = read_u64(r)? as usize;
            let mut parts = Vec::with_capacity(n_parts);
            for _ in 0..n_parts {
                let s = read_u64(r)? as usize;
                let mut indices = Vec::with_capacity(s);
                for _ in 0..s {
                    indices.push(read_u64(r)? as usize);
                }
                let mut forward = Vec::with_capacity(s);
                for _ in 0..s {
                    forward.push(read_u64(r)? as usize);
                }
                let perm = Permutation::from_forward(forward)
                    .map_err(|e| RotationError::CorruptSnapshot(e.to_string()))?;
                let shared = read_u8(r)? != 0;
                let block_dim = read_u64(r)? as usize;
                let count = read_u64(r)? as usize;
                let blocks = if shared {
                    let block = read_matrix(r, block_dim, block_dim)?;
                    BlockSet::Shared {
                        block: Arc::new(block),
                        count,
                    }
                } else {
                    let mut blocks = Vec::with_capacity(count);
                    for _ in 0..count {
                        blocks.push(read_matrix(r, block_dim, block_dim)?);
                    }
                    BlockSet::Independent(blocks)
                };
                let residual = if read_u8(r)? != 0 {
                    let p = read_u64(r)? as usize;
                    Some(read_matrix(r, p, p)?)
                } else {
                    None
                };
                parts.push(PartitionOp {
                    indices,
                    perm,
                    blocks,
                    residual,
                });
            }
            CompiledKind::Random(parts)
        }
        2 => {
            let n_layers = read_u64(r)? as usize;
            let mut layers = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                let layer_name = read_name(r)?;
                let start = read_u64(r)? as usize;
                let out_dim = read_u64(r)? as usize;
                let in_dim = read_u64(r)? as usize;
                let transposed = read_u8(r)? != 0;
                let factors = if read_u8(r)? != 0 {
                    let un = read_u64(r)? as usize;
                    let u = read_matrix(r, un, un)?;
                    let vn = read_u64(r)? as usize;
                    let v = read_matrix(r, vn, vn)?;
                    Some((u, v))
                } else {
                    None
                };
                layers.push(SvdLayerOp {
                    layer_name,
                    start,
                    out_dim,
                    in_dim,
                    transposed,
                    factors,
                });
            }
            CompiledKind::Svd(layers)
        }
        other => {
            return Err(RotationError::CorruptSnapshot(format!(
                "unknown rotation kind {other}"
            )))
        }
    };
    Ok(CompiledRotation::from_parts(dim, scope, omit, kind))
}

fn scope_code(scope: Scope) -> u8 {
    match scope {
        Scope::None => 0,
        Scope::Global => 1,
        Scope::Layer => 2,
        Scope::Output => 3,
        Scope::Input => 4,
        Scope::Svd => 5,
    }
}

fn scope_from_code(code: u8) -> Result<Scope, RotationError> {
    Ok(match code {
        0 => Scope::None,
        1 => Scope::Global,
        2 => Scope::Layer,
        3 => Scope::Output,
        4 => Scope::Input,
        5 => Scope::Svd,
        other => {
            return Err(RotationError::CorruptSnapshot(format!(
                "unknown scope code {other}"
            )))
        }
    })
}

fn write_matrix_data<W: Write>(w: &mut W, m: &DenseMatrix) -> Result<(), RotationError> {
    for x in m.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<DenseMatrix, RotationError> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(read_f64(r)?);
    }
    DenseMatrix::from_vec(rows, cols, data)
        .map_err(|e| RotationError::CorruptSnapshot(e.to_string()))
}

fn write_name<W: Write>(w: &mut W, name: &str) -> Result<(), RotationError> {
    let bytes = name.as_bytes();
    write_u32(w, bytes.len() as u32)?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_name<R: Read>(r: &mut R) -> Result<String, RotationError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(RotationError::CorruptSnapshot("name too long".into()));
    }
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes)?;
    String::from_utf8(bytes).map_err(|_| RotationError::CorruptSnapshot("name not utf8".into()))
}

fn write_u32<W: Write>(w: &mut W, x: u32) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn write_u64<W: Write>(w: &mut W, x: u64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8, RotationError> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)
        .map_err(|_| RotationError::CorruptSnapshot("truncated file".into()))?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, RotationError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| RotationError::CorruptSnapshot("truncated file".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, RotationError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| RotationError::CorruptSnapshot("truncated file".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, RotationError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| RotationError::CorruptSnapshot("truncated file".into()))?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from_seed;
    use crate::rotations::{compile, LayerSpec, ParamLayout, RotationSpec};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn roundtrip_rotation(rot: &CompiledRotation) -> CompiledRotation {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rot.bin");
        write_snapshot(&path, &[("rotation".into(), Record::Rotation(rot.clone()))]).unwrap();
        let records = read_snapshot(&path).unwrap();
        match find(&records, "rotation").unwrap() {
            Record::Rotation(r) => r.clone(),
            _ => panic!("wrong record type"),
        }
    }

    #[test]
    fn rotation_round_trip_bit_exact() {
        let layout = ParamLayout::new(vec![
            LayerSpec::matrix("w1", 4, 5),
            LayerSpec::vector("b1", 3),
        ])
        .unwrap();
        for scope in [Scope::Global, Scope::Layer, Scope::Output, Scope::Input] {
            let mut rng = stream_from_seed(7);
            let spec = RotationSpec {
                scope,
                block_dim: 3,
                ..Default::default()
            };
            let rot = compile(&spec, &layout, &mut rng).unwrap();
            let back = roundtrip_rotation(&rot);
            let mut vrng = stream_from_seed(8);
            for _ in 0..20 {
                let g = DenseVector::from_fn(layout.total_dim(), |_| vrng.sample(StandardNormal));
                let a = rot.apply(&g).unwrap();
                let b = back.apply(&g).unwrap();
                assert_eq!(a.as_slice(), b.as_slice(), "scope {scope:?} not bit exact");
            }
        }
    }

    #[test]
    fn svd_rotation_round_trip() {
        let layout = ParamLayout::new(vec![LayerSpec::matrix("w", 3, 4)]).unwrap();
        let mut rng = stream_from_seed(9);
        let spec = RotationSpec {
            scope: Scope::Svd,
            ..Default::default()
        };
        let rot = compile(&spec, &layout, &mut rng).unwrap();
        let grad = DenseMatrix::from_fn(3, 4, |_, _| rng.sample(StandardNormal));
        let rot = rot.svd_refresh(&[grad]).unwrap();
        let back = roundtrip_rotation(&rot);
        let g = DenseVector::from_fn(12, |i| (i as f64).cos());
        assert_eq!(
            rot.apply(&g).unwrap().as_slice(),
            back.apply(&g).unwrap().as_slice()
        );
    }

    #[test]
    fn vectors_and_scalars_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        let v = DenseVector::new(vec![1.5, -2.25, f64::MIN_POSITIVE, 0.0]);
        write_snapshot(
            &path,
            &[
                ("w".into(), Record::Vector(v.clone())),
                ("t".into(), Record::Scalar(12345)),
            ],
        )
        .unwrap();
        let records = read_snapshot(&path).unwrap();
        match find(&records, "w").unwrap() {
            Record::Vector(read) => assert_eq!(read.as_slice(), v.as_slice()),
            _ => panic!(),
        }
        match find(&records, "t").unwrap() {
            Record::Scalar(t) => assert_eq!(*t, 12345),
            _ => panic!(),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOTROTL-whatever").unwrap();
        assert!(matches!(
            read_snapshot(&path),
            Err(RotationError::CorruptSnapshot(_))
        ));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let layout = ParamLayout::single_vector(6);
        let mut rng = stream_from_seed(3);
        let spec = RotationSpec {
            scope: Scope::Global,
            block_dim: 4,
            ..Default::default()
        };
        let rot = compile(&spec, &layout, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rot.bin");
        write_snapshot(&path, &[("rotation".into(), Record::Rotation(rot))]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(read_snapshot(&path).is_err());
    }
}
