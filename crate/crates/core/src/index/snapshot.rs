//! `KGSI` index snapshots.
//!
//! ```text
//! "KGSI" u32:version u8:kind u32:dim u32:n
//! n × { u16:id_len id }  f32[n*dim]
//! hnsw:  u32:M u32:ef_construction u64:seed u32:entry
//!        n × { u8:levels  levels × { u32:len  u32[len] } }
//! ivf:   u32:nlist u32:kmeans_iters u64:seed  f32[nlist*dim]
//!        nlist × { u32:len  u32[len] }
//! u32:crc32 of every preceding byte
//! ```

use std::path::Path;

use super::{HnswIndex, HnswParams, IvfIndex, IvfParams, Structure, VectorIndex, VectorStore};
use crate::error::{Error, Result};
use crate::snapshot::{self, Reader};

pub const MAGIC: &[u8; 4] = b"KGSI";
pub const SNAPSHOT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_rows(out: &mut Vec<u8>, rows: &[u32]) {
    put_u32(out, rows.len());
    for r in rows {
        out.extend_from_slice(&r.to_le_bytes());
    }
}

fn take_rows(r: &mut Reader, n: usize) -> Result<Vec<u32>> {
    let len = r.u32()? as usize;
    let rows = (0..len).map(|_| r.u32()).collect::<Result<Vec<u32>>>()?;
    if rows.iter().any(|&x| x as usize >= n) {
        return Err(Error::CorruptSnapshot("row reference out of range".into()));
    }
    Ok(rows)
}

impl VectorIndex {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let store = &self.store;
        if store.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let mut out = Vec::with_capacity(32 + store.data().len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.push(match self.structure {
            Structure::Exact => 0,
            Structure::Hnsw(_) => 1,
            Structure::Ivf(_) => 2,
        });
        put_u32(&mut out, store.dim());
        put_u32(&mut out, store.len());
        for id in store.ids() {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for v in store.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.structure {
            Structure::Exact => {}
            Structure::Hnsw(h) => {
                put_u32(&mut out, h.params.m);
                put_u32(&mut out, h.params.ef_construction);
                out.extend_from_slice(&h.params.seed.to_le_bytes());
                put_u32(&mut out, h.entry as usize);
                for levels in &h.links {
                    out.push(levels.len() as u8);
                    for l in levels {
                        put_rows(&mut out, l);
                    }
                }
            }
            Structure::Ivf(i) => {
                put_u32(&mut out, i.params.nlist);
                put_u32(&mut out, i.params.kmeans_iters);
                out.extend_from_slice(&i.params.seed.to_le_bytes());
                for v in &i.centroids {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for l in &i.lists {
                    put_rows(&mut out, l);
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::CorruptSnapshot("truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let mut r = Reader::new(body);
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::CorruptSnapshot(format!("unsupported version {version}")));
        }
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(Error::CorruptSnapshot("checksum mismatch".into()));
        }
        let kind = r.u8()?;
        let dim = r.u32()? as usize;
        let n = r.u32()? as usize;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u16()? as usize;
            let id = std::str::from_utf8(r.take(len)?).map_err(|e| Error::CorruptSnapshot(e.to_string()))?;
            ids.push(id.to_string());
        }
        let data = r.f32s(n * dim)?;
        let rows = ids
            .into_iter()
            .zip(data.chunks_exact(dim.max(1)))
            .map(|(id, v)| (id, v.to_vec()))
            .collect();
        let store = VectorStore::new(dim, rows).map_err(|e| Error::CorruptSnapshot(e.to_string()))?;
        if store.is_empty() {
            return Err(Error::CorruptSnapshot("empty index".into()));
        }
        let structure = match kind {
            0 => Structure::Exact,
            1 => {
                let params = HnswParams {
                    m: r.u32()? as usize,
                    ef_construction: r.u32()? as usize,
                    seed: r.u64()?,
                };
                let entry = r.u32()?;
                let mut links = Vec::with_capacity(n);
                for _ in 0..n {
                    let levels = r.u8()? as usize;
                    if levels == 0 {
                        return Err(Error::CorruptSnapshot("node without level 0".into()));
                    }
                    links.push((0..levels).map(|_| take_rows(&mut r, n)).collect::<Result<Vec<_>>>()?);
                }
                let h = HnswIndex { params, entry, links };
                let audit = h.audit();
                if !audit.passed() {
                    return Err(Error::CorruptSnapshot(audit.violations.join("; ")));
                }
                Structure::Hnsw(h)
            }
            2 => {
                let params = IvfParams {
                    nlist: r.u32()? as usize,
                    kmeans_iters: r.u32()? as usize,
                    seed: r.u64()?,
                };
                let centroids = r.f32s(params.nlist * dim)?;
                let lists = (0..params.nlist)
                    .map(|_| take_rows(&mut r, n))
                    .collect::<Result<Vec<_>>>()?;
                let i = IvfIndex {
                    params,
                    dim,
                    centroids,
                    lists,
                };
                if !i.is_partition(n) {
                    return Err(Error::CorruptSnapshot("inverted lists do not partition the store".into()));
                }
                Structure::Ivf(i)
            }
            k => return Err(Error::CorruptSnapshot(format!("unknown index kind {k}"))),
        };
        r.finish()?;
        Ok(VectorIndex { store, structure })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        snapshot::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        VectorIndex::from_bytes(&snapshot::read_file(path)?)
    }
}
