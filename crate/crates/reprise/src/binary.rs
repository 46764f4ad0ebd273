//! Little-endian binary files: embedding matrices (`SWEM`), index snapshots
//! (`SWIX`) and gater models (`SWMB`).

use std::io::{self, Read, Write};

use anyhow::{bail, ensure, Context, Result};
use reprise_core::gater::{ArmSet, BanditModel};
use reprise_core::index::{IndexParams, IndexedVector, IvfIndex, PyramidDescriptor};
use reprise_core::{normalize, EmbeddingVector, EntryId};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"SWEM";
pub const INDEX_MAGIC: &[u8; 4] = b"SWIX";
pub const MODEL_MAGIC: &[u8; 4] = b"SWMB";

fn put_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f32s<W: Write>(w: &mut W, vs: impl IntoIterator<Item = f32>) -> io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn get_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    get::<4, _>(r).map(u32::from_le_bytes)
}

fn get_f32s<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let got = get::<4, _>(r).context("reading header")?;
    if &got != magic {
        bail!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        );
    }
    Ok(())
}

/// Re-normalizes a vector read back from `f32` storage.
pub fn unit_from_f32(values: &[f32]) -> Result<EmbeddingVector> {
    let raw: Vec<f64> = values.iter().map(|&x| f64::from(x)).collect();
    Ok(normalize(&raw)?)
}

pub fn write_embeddings<W: Write>(w: &mut W, rows: &[EmbeddingVector]) -> Result<()> {
    let dim = rows.first().map_or(0, EmbeddingVector::dim);
    ensure!(rows.iter().all(|r| r.dim() == dim), "embeddings differ in dimension");
    w.write_all(EMBEDDING_MAGIC)?;
    put_u32(w, u32::try_from(rows.len())?)?;
    put_u32(w, u32::try_from(dim)?)?;
    for r in rows {
        put_f32s(w, r.to_f32())?;
    }
    Ok(())
}

pub fn read_embeddings<R: Read>(r: &mut R) -> Result<Vec<EmbeddingVector>> {
    expect_magic(r, EMBEDDING_MAGIC)?;
    let count = get_u32(r)? as usize;
    let dim = get_u32(r)? as usize;
    (0..count)
        .map(|i| {
            let row = get_f32s(r, dim).with_context(|| format!("row {i}"))?;
            unit_from_f32(&row).with_context(|| format!("row {i}"))
        })
        .collect()
}

pub fn write_index<W: Write>(w: &mut W, index: &IvfIndex) -> Result<()> {
    w.write_all(INDEX_MAGIC)?;
    put_u32(w, u32::try_from(index.centroids().len())?)?;
    put_u32(w, u32::try_from(index.params().nprobe)?)?;
    put_u32(w, u32::try_from(index.dim())?)?;
    for c in index.centroids() {
        put_f32s(w, c.iter().copied())?;
    }
    for list in index.lists() {
        put_u32(w, u32::try_from(list.len())?)?;
        for item in list {
            let s = item.segment;
            w.write_all(&s.entry.0.to_le_bytes())?;
            w.write_all(&[s.level])?;
            put_f32s(w, [s.start, s.length])?;
            put_f32s(w, item.vector.iter().copied())?;
        }
    }
    Ok(())
}

/// Reads an index snapshot. `params` supplies the settings the file does not
/// store; its `nprobe` is replaced by the stored value.
pub fn read_index<R: Read>(r: &mut R, params: IndexParams) -> Result<IvfIndex> {
    expect_magic(r, INDEX_MAGIC)?;
    let clusters = get_u32(r)? as usize;
    let nprobe = get_u32(r)? as usize;
    let dim = get_u32(r)? as usize;
    let centroids = (0..clusters)
        .map(|_| get_f32s(r, dim))
        .collect::<io::Result<Vec<_>>>()
        .context("reading centroids")?;
    let mut lists = Vec::with_capacity(clusters);
    for li in 0..clusters {
        let n = get_u32(r).with_context(|| format!("list {li} header"))? as usize;
        let mut list = Vec::with_capacity(n);
        for _ in 0..n {
            let entry = u64::from_le_bytes(get::<8, _>(r)?);
            let level = get::<1, _>(r)?[0];
            let sl = get_f32s(r, 2)?;
            let vector = get_f32s(r, dim)?;
            list.push(IndexedVector {
                segment: PyramidDescriptor {
                    entry: EntryId(entry),
                    level,
                    start: sl[0],
                    length: sl[1],
                },
                vector,
            });
        }
        lists.push(list);
    }
    let params = IndexParams {
        nprobe: nprobe.max(1),
        ..params
    };
    Ok(IvfIndex::from_parts(dim, params, centroids, lists)?)
}

pub fn write_model<W: Write>(w: &mut W, model: &BanditModel) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    put_u32(w, u32::try_from(model.dim)?)?;
    put_u32(w, u32::try_from(model.arms.len())?)?;
    for row in model.value.iter().chain(&model.uncertainty) {
        put_f32s(w, row.iter().map(|&x| x as f32))?;
    }
    Ok(())
}

/// Reads a gater model. The arm set is the default one and must match the
/// stored arm count.
pub fn read_model<R: Read>(r: &mut R) -> Result<BanditModel> {
    expect_magic(r, MODEL_MAGIC)?;
    let dim = get_u32(r)? as usize;
    let arms = get_u32(r)? as usize;
    let arm_set = ArmSet::default();
    ensure!(arms == arm_set.len(), "model has {arms} arms, expected {}", arm_set.len());
    let mut model = BanditModel::with_dim(arm_set, dim);
    for row in model.value.iter_mut().chain(model.uncertainty.iter_mut()) {
        *row = get_f32s(r, dim)?.into_iter().map(f64::from).collect();
    }
    ensure!(
        model.value.iter().chain(&model.uncertainty).flatten().all(|x| x.is_finite()),
        "model contains non-finite parameters"
    );
    Ok(model)
}

/// Rounds a model's parameters to the precision a model file keeps.
pub fn round_to_f32(model: &mut BanditModel) {
    for row in model.value.iter_mut().chain(model.uncertainty.iter_mut()) {
        for x in row.iter_mut() {
            *x = f64::from(*x as f32);
        }
    }
}
