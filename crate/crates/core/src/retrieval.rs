//! Frozen image encoders and exhaustive cosine retrieval over per-category
//! candidate pools.
//!
//! Index file layout (little endian):
//!
//! ```text
//! magic     8 bytes  "MICTIDX1"
//! category  u32 length + UTF-8 bytes
//! d_v       u64
//! pool      u64
//! ids       pool x (u32 length + UTF-8 bytes)
//! rows      pool x d_v f64, row-major
//! ```

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::tensor::Real;

const INDEX_MAGIC: &[u8; 8] = b"MICTIDX1";

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoding {
    /// Unit-norm global vector.
    pub global: Vec<Real>,
    /// Patch vectors; kept for completeness, retrieval uses only `global`.
    pub patches: Option<Vec<Vec<Real>>>,
}

/// A frozen image encoder producing fixed-width global vectors.
pub trait ImageEncoder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode(&self, image_ref: &str) -> Result<ImageEncoding>;

    /// Encodes a precomputed feature vector by normalising it.
    fn encode_feature(&self, feature: &[Real]) -> Result<ImageEncoding> {
        if feature.len() != self.dim() {
            return Err(Error::Shape {
                op: "encode_feature",
                lhs: vec![feature.len()],
                rhs: vec![self.dim()],
            });
        }
        Ok(ImageEncoding {
            global: normalize(feature)?,
            patches: None,
        })
    }

    fn encode_sample(&self, sample: &Sample) -> Result<ImageEncoding> {
        match (&sample.image_feature, &sample.image_ref) {
            (Some(f), _) => self.encode_feature(f),
            (None, Some(r)) => self.encode(r),
            (None, None) => Err(Error::Corpus(format!("sample {} has no image", sample.id))),
        }
    }
}

/// Stand-in for a pretrained vision encoder: hashes the image reference into
/// a seed and draws a Gaussian vector, normalised to unit length.
#[derive(Debug, Clone)]
pub struct SyntheticEncoder {
    dim: usize,
    seed: u64,
}

impl SyntheticEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("encoder dimension must be positive".into()));
        }
        Ok(Self { dim, seed })
    }
}

impl ImageEncoder for SyntheticEncoder {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, image_ref: &str) -> Result<ImageEncoding> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(image_ref.as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let raw: Vec<Real> = (0..self.dim)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                x as Real
            })
            .collect();
        Ok(ImageEncoding {
            global: normalize(&raw)?,
            patches: None,
        })
    }
}

pub fn encoder_by_name(name: &str, dim: usize, seed: u64) -> Result<Box<dyn ImageEncoder>> {
    match name {
        "synthetic" => Ok(Box::new(SyntheticEncoder::new(dim, seed)?)),
        other => Err(Error::UnknownEncoder(other.to_string())),
    }
}

fn dot(u: &[Real], v: &[Real]) -> Real {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn normalize(v: &[Real]) -> Result<Vec<Real>> {
    let norm = dot(v, v).sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite("image vector".into()));
    }
    if norm == 0.0 {
        return Err(Error::Retrieval("cannot normalise a zero vector".into()));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

pub fn cosine_similarity(u: &[Real], v: &[Real]) -> Result<Real> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            op: "cosine_similarity",
            lhs: vec![u.len()],
            rhs: vec![v.len()],
        });
    }
    let (nu, nv) = (dot(u, u).sqrt(), dot(v, v).sqrt());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Retrieval("cosine similarity of a zero vector".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Immutable pool of unit-norm image vectors for one category.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    category: String,
    ids: Vec<String>,
    dim: usize,
    globals: Vec<Real>,
}

impl RetrievalIndex {
    /// Builds from `(id, vector)` pairs; vectors are normalised.
    pub fn from_vectors(category: impl Into<String>, entries: Vec<(String, Vec<Real>)>) -> Result<Self> {
        Self::from_rows(category.into(), entries, true)
    }

    /// With `normalise` false the rows are stored bit for bit, after checking
    /// that they already have unit norm.
    fn from_rows(category: String, entries: Vec<(String, Vec<Real>)>, normalise: bool) -> Result<Self> {
        let Some(dim) = entries.first().map(|(_, v)| v.len()) else {
            return Err(Error::Retrieval(format!("empty candidate pool for category `{category}`")));
        };
        let mut seen = HashSet::new();
        let mut ids = Vec::with_capacity(entries.len());
        let mut globals = Vec::with_capacity(entries.len() * dim);
        for (id, v) in entries {
            if v.len() != dim {
                return Err(Error::Shape {
                    op: "build_index",
                    lhs: vec![v.len()],
                    rhs: vec![dim],
                });
            }
            if !seen.insert(id.clone()) {
                return Err(Error::Retrieval(format!("duplicate sample id `{id}`")));
            }
            if normalise {
                globals.extend(normalize(&v)?);
            } else {
                let norm = dot(&v, &v).sqrt();
                if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
                    return Err(Error::Retrieval(format!("stored vector of `{id}` is not unit norm")));
                }
                globals.extend_from_slice(&v);
            }
            ids.push(id);
        }
        Ok(Self {
            category,
            ids,
            dim,
            globals,
        })
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[Real] {
        &self.globals[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.globals.len() * 8);
        out.extend_from_slice(INDEX_MAGIC);
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.write_u32::<LittleEndian>(s.len() as u32).unwrap();
            out.extend_from_slice(s.as_bytes());
        };
        put_str(&mut out, &self.category);
        out.write_u64::<LittleEndian>(self.dim as u64).unwrap();
        out.write_u64::<LittleEndian>(self.ids.len() as u64).unwrap();
        for id in &self.ids {
            put_str(&mut out, id);
        }
        for &x in &self.globals {
            out.write_f64::<LittleEndian>(x as f64).unwrap();
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |what: &str| Error::Retrieval(format!("malformed index file: {what}"));
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != INDEX_MAGIC {
            return Err(bad("bad magic"));
        }
        let get_str = |r: &mut Cursor<&[u8]>| -> Result<String> {
            let n = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated string length"))? as usize;
            if n > bytes.len() {
                return Err(bad("string length out of range"));
            }
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf).map_err(|_| bad("truncated string"))?;
            String::from_utf8(buf).map_err(|_| bad("invalid UTF-8"))
        };
        let category = get_str(&mut r)?;
        let dim = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
        let pool = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
        if pool > bytes.len() || dim > bytes.len() {
            return Err(bad("header sizes out of range"));
        }
        let mut entries = Vec::with_capacity(pool);
        let mut ids = Vec::with_capacity(pool);
        for _ in 0..pool {
            ids.push(get_str(&mut r)?);
        }
        for id in ids {
            let row = (0..dim)
                .map(|_| r.read_f64::<LittleEndian>().map(|x| x as Real))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(|_| bad("truncated rows"))?;
            entries.push((id, row));
        }
        if (r.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Self::from_rows(category, entries, false)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Encodes every sample of `category` into an index. All samples must belong
/// to that category.
pub fn build_index(samples: &[Sample], category: &str, encoder: &dyn ImageEncoder) -> Result<RetrievalIndex> {
    if let Some(s) = samples.iter().find(|s| s.category != category) {
        return Err(Error::Retrieval(format!(
            "sample {} has category `{}`, expected `{category}`",
            s.id, s.category
        )));
    }
    let entries = samples
        .iter()
        .map(|s| Ok((s.id.clone(), encoder.encode_sample(s)?.global)))
        .collect::<Result<Vec<_>>>()?;
    RetrievalIndex::from_vectors(category, entries)
}

/// Top-`k` ids by descending similarity to `query`, ties broken by ascending
/// id; `exclude_id` is never returned.
pub fn retrieve_similar(
    index: &RetrievalIndex,
    query: &[Real],
    k: usize,
    exclude_id: Option<&str>,
) -> Result<Vec<String>> {
    if query.len() != index.dim {
        return Err(Error::Shape {
            op: "retrieve_similar",
            lhs: vec![query.len()],
            rhs: vec![index.dim],
        });
    }
    if query.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("retrieval query".into()));
    }
    let mut scored: Vec<(Real, usize)> = (0..index.len())
        .filter(|&i| exclude_id != Some(index.ids[i].as_str()))
        .map(|i| (dot(index.row(i), query), i))
        .collect();
    if scored.is_empty() {
        return Err(Error::Retrieval("candidate pool is empty after exclusion".into()));
    }
    if k == 0 || k > scored.len() {
        return Err(Error::Retrieval(format!(
            "k = {k} must be between 1 and the pool size {}",
            scored.len()
        )));
    }
    let cmp = |a: &(Real, usize), b: &(Real, usize)| -> Ordering {
        b.0.total_cmp(&a.0).then_with(|| index.ids[a.1].cmp(&index.ids[b.1]))
    };
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    Ok(scored.into_iter().map(|(_, i)| index.ids[i].clone()).collect())
}

/// Reorders a most-similar-first retrieval result so the nearest reference
/// ends up adjacent to the query in the prompt.
pub fn prompt_order<T>(mut most_similar_first: Vec<T>) -> Vec<T> {
    most_similar_first.reverse();
    most_similar_first
}
