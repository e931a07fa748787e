//! Exact cosine k-nearest-neighbor search over the unlabeled pool.
//!
//! Vectors are stored L2-normalized in one flat buffer and queried by a
//! linear scan. Hits are ordered by descending similarity, then ascending id.
//!
//! The on-disk cache is little-endian:
//!
//! ```text
//! "SOUPEMB1"            8 bytes
//! dim                   u32
//! count                 u64
//! count × {
//!     id length         u32
//!     id                UTF-8 bytes
//!     vector            dim × f32
//! }
//! ```

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SoupError};

pub const CACHE_MAGIC: &[u8; 8] = b"SOUPEMB1";

/// Vectors whose norm is this close to 1 are stored as given.
const UNIT_NORM_TOLERANCE: f64 = 1e-6;

fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| f64::from(*a) * f64::from(*b))
        .sum()
}

fn norm(u: &[f32]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity, computed in `f64`.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(SoupError::Domain(format!(
            "dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(SoupError::Domain("cosine of a zero vector".into()));
    }
    Ok(dot(u, v) / (nu * nv))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, vector: Vec<f32>) -> Self {
        EmbeddingRecord {
            id: id.into(),
            vector,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborHit {
    pub id: String,
    pub similarity: f64,
}

#[derive(Clone, Debug)]
pub struct Index {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f32>,
    norms: Vec<f64>,
    positions: HashMap<String, usize>,
}

impl PartialEq for Index {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.ids == other.ids
            && self.vectors.len() == other.vectors.len()
            && self
                .vectors
                .iter()
                .zip(&other.vectors)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn normalized(vector: Vec<f32>) -> Vec<f32> {
    let n = norm(&vector);
    if (n - 1.0).abs() <= UNIT_NORM_TOLERANCE {
        vector
    } else {
        vector
            .into_iter()
            .map(|x| (f64::from(x) / n) as f32)
            .collect()
    }
}

impl Index {
    pub fn empty() -> Self {
        Index {
            dim: 0,
            ids: Vec::new(),
            vectors: Vec::new(),
            norms: Vec::new(),
            positions: HashMap::new(),
        }
    }

    /// Build from records sharing one dimension, with unique ids and no zero
    /// or non-finite vectors.
    pub fn build(records: Vec<EmbeddingRecord>) -> Result<Self> {
        Self::assemble(records, normalized, SoupError::Domain)
    }

    fn assemble(
        records: Vec<EmbeddingRecord>,
        prepare: impl Fn(Vec<f32>) -> Vec<f32>,
        err: impl Fn(String) -> SoupError,
    ) -> Result<Self> {
        let Some(first) = records.first() else {
            return Ok(Self::empty());
        };
        let dim = first.vector.len();
        if dim == 0 {
            return Err(err("zero-dimensional vectors".into()));
        }
        let mut index = Index {
            dim,
            ids: Vec::with_capacity(records.len()),
            vectors: Vec::with_capacity(records.len() * dim),
            norms: Vec::with_capacity(records.len()),
            positions: HashMap::with_capacity(records.len()),
        };
        for record in records {
            if record.vector.len() != dim {
                return Err(err(format!(
                    "record {:?} has dimension {}, expected {dim}",
                    record.id,
                    record.vector.len()
                )));
            }
            if record.vector.iter().any(|x| !x.is_finite()) {
                return Err(err(format!(
                    "record {:?} has non-finite entries",
                    record.id
                )));
            }
            if norm(&record.vector) == 0.0 {
                return Err(err(format!("record {:?} is a zero vector", record.id)));
            }
            if index.positions.contains_key(&record.id) {
                return Err(err(format!("duplicate id {:?}", record.id)));
            }
            let vector = prepare(record.vector);
            index.positions.insert(record.id.clone(), index.ids.len());
            index.norms.push(norm(&vector));
            index.vectors.extend_from_slice(&vector);
            index.ids.push(record.id);
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// 0 for an empty index.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    /// The stored (normalized) vector for `id`.
    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.positions.get(id).map(|&i| self.row(i))
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn records(&self) -> impl Iterator<Item = EmbeddingRecord> + '_ {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| EmbeddingRecord::new(id.clone(), self.row(i).to_vec()))
    }

    /// The `k` most similar records not in `exclude`.
    pub fn search_knn(
        &self,
        query: &[f32],
        k: usize,
        exclude: &HashSet<String>,
    ) -> Result<Vec<NeighborHit>> {
        if k == 0 {
            return Err(SoupError::Domain("k must be at least 1".into()));
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        if query.len() != self.dim {
            return Err(SoupError::Domain(format!(
                "query has dimension {}, index has {}",
                query.len(),
                self.dim
            )));
        }
        let query_norm = norm(query);
        if query_norm == 0.0 {
            return Err(SoupError::Domain("query is a zero vector".into()));
        }

        let mut heap: BinaryHeap<Reverse<Ranked<'_>>> = BinaryHeap::with_capacity(k + 1);
        for (i, id) in self.ids.iter().enumerate() {
            if exclude.contains(id) {
                continue;
            }
            let similarity = dot(self.row(i), query) / (self.norms[i] * query_norm);
            heap.push(Reverse(Ranked { similarity, id }));
            if heap.len() > k {
                heap.pop();
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|Reverse(r)| NeighborHit {
                id: r.id.clone(),
                similarity: r.similarity,
            })
            .collect())
    }

    pub fn save_cache(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_cache(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_cache<W: Write>(&self, w: &mut W) -> Result<()> {
        let dim = u32::try_from(self.dim)
            .map_err(|_| SoupError::Format("dimension does not fit in u32".into()))?;
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&dim.to_le_bytes())?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        for (i, id) in self.ids.iter().enumerate() {
            let len = u32::try_from(id.len())
                .map_err(|_| SoupError::Format(format!("id {id:?} too long")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            for x in self.row(i) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load_cache(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::read_cache(&bytes)
    }

    /// Parse a cache image. Vectors are taken verbatim.
    pub fn read_cache(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(8)? != CACHE_MAGIC {
            return Err(SoupError::Format("bad magic, not a SOUPEMB1 cache".into()));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        // Every record needs at least its length prefix and vector.
        let min_record = 4 + 4 * dim as u64;
        if count.saturating_mul(min_record) > r.remaining() as u64 {
            return Err(SoupError::Format("truncated file".into()));
        }
        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| SoupError::Format("id is not valid UTF-8".into()))?
                .to_string();
            let vector = r
                .take(4 * dim)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            records.push(EmbeddingRecord { id, vector });
        }
        if r.remaining() != 0 {
            return Err(SoupError::Format(format!(
                "{} trailing bytes after the last record",
                r.remaining()
            )));
        }
        if count == 0 && dim != 0 {
            let mut empty = Self::empty();
            empty.dim = dim;
            return Ok(empty);
        }
        Self::assemble(records, |v| v, SoupError::Format)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(SoupError::Format("truncated file".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut buf = [0u8; 8];
        buf.copy_from_slice(b);
        Ok(u64::from_le_bytes(buf))
    }
}

/// Greater means a better hit: higher similarity, then smaller id.
struct Ranked<'a> {
    similarity: f64,
    id: &'a String,
}

impl Ord for Ranked<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.similarity
            .total_cmp(&other.similarity)
            .then_with(|| other.id.cmp(self.id))
    }
}

impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked<'_> {}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, v: &[f32]) -> EmbeddingRecord {
        EmbeddingRecord::new(id, v.to_vec())
    }

    fn none() -> HashSet<String> {
        HashSet::new()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[0.6, 0.8], &[0.6, 0.8]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap() - 8.0 / 9.0).abs() < 1e-12);
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(SoupError::Domain(_))
        ));
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(SoupError::Domain(_))
        ));
    }

    #[test]
    fn knn_example() {
        let index = Index::build(vec![
            rec("a", &[1.0, 0.0]),
            rec("b", &[0.0, 1.0]),
            rec("c", &[0.6, 0.8]),
        ])
        .unwrap();
        assert_eq!(index.len(), 3);
        assert_eq!(index.dim(), 2);
        let hits = index.search_knn(&[0.0, 1.0], 2, &none()).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].id, "b");
        assert!((hits[0].similarity - 1.0).abs() < 1e-7);
        assert_eq!(hits[1].id, "c");
        assert!((hits[1].similarity - 0.8).abs() < 1e-7);

        let all = index.search_knn(&[0.0, 1.0], 10, &none()).unwrap();
        assert_eq!(
            all.iter().map(|h| h.id.as_str()).collect::<Vec<_>>(),
            ["b", "c", "a"]
        );

        let excl: HashSet<String> = ["b".to_string()].into();
        let hits = index.search_knn(&[0.0, 1.0], 10, &excl).unwrap();
        assert_eq!(hits.len(), 2);
        assert!(hits.iter().all(|h| h.id != "b"));

        let hits = index.search_knn(&[1.0, 0.0], 1, &none()).unwrap();
        assert_eq!(hits[0].id, "a");
    }

    #[test]
    fn ties_break_by_id() {
        let index = Index::build(vec![
            rec("z", &[1.0, 0.0]),
            rec("m", &[1.0, 0.0]),
            rec("a", &[1.0, 0.0]),
        ])
        .unwrap();
        let hits = index.search_knn(&[1.0, 0.0], 2, &none()).unwrap();
        assert_eq!(hits[0].id, "a");
        assert_eq!(hits[1].id, "m");
    }

    #[test]
    fn build_errors() {
        assert!(Index::build(vec![rec("a", &[1.0]), rec("a", &[2.0])]).is_err());
        assert!(Index::build(vec![rec("a", &[1.0]), rec("b", &[1.0, 2.0])]).is_err());
        assert!(Index::build(vec![rec("a", &[0.0, 0.0])]).is_err());
        assert!(Index::build(vec![rec("a", &[f32::NAN, 1.0])]).is_err());
    }

    #[test]
    fn empty_index_returns_nothing() {
        let index = Index::build(Vec::new()).unwrap();
        assert!(index.is_empty());
        assert!(index
            .search_knn(&[1.0, 2.0, 3.0], 5, &none())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn query_errors() {
        let index = Index::build(vec![rec("a", &[1.0, 0.0])]).unwrap();
        assert!(index.search_knn(&[1.0], 1, &none()).is_err());
        assert!(index.search_knn(&[0.0, 0.0], 1, &none()).is_err());
        assert!(index.search_knn(&[1.0, 0.0], 0, &none()).is_err());
    }

    #[test]
    fn stores_normalized_vectors() {
        let index = Index::build(vec![rec("a", &[3.0, 4.0])]).unwrap();
        assert_eq!(index.vector("a").unwrap(), &[0.6, 0.8]);
        let again = Index::build(index.records().collect()).unwrap();
        assert_eq!(again, index);
    }

    #[test]
    fn cache_round_trip() {
        let index = Index::build(vec![
            rec("a", &[1.0, 0.0, 2.0]),
            rec("ünï", &[0.0, 1.0, 0.5]),
            rec("c", &[0.6, 0.8, 0.0]),
        ])
        .unwrap();
        let mut buf = Vec::new();
        index.write_cache(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"SOUPEMB1");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 3);
        assert_eq!(buf.len(), 20 + 3 * (4 + 12) + 1 + 5 + 1);
        let loaded = Index::read_cache(&buf).unwrap();
        assert_eq!(loaded, index);
    }

    #[test]
    fn cache_format_errors() {
        let index = Index::build(vec![rec("a", &[1.0, 0.0])]).unwrap();
        let mut buf = Vec::new();
        index.write_cache(&mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Index::read_cache(&bad), Err(SoupError::Format(_))));
        assert!(matches!(
            Index::read_cache(&buf[..buf.len() - 1]),
            Err(SoupError::Format(_))
        ));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(
            Index::read_cache(&long),
            Err(SoupError::Format(_))
        ));
        assert!(matches!(
            Index::read_cache(b"SOUP"),
            Err(SoupError::Format(_))
        ));
    }

    #[test]
    fn empty_cache_round_trip() {
        let mut buf = Vec::new();
        Index::empty().write_cache(&mut buf).unwrap();
        assert_eq!(buf.len(), 20);
        assert!(Index::read_cache(&buf).unwrap().is_empty());
    }
}
