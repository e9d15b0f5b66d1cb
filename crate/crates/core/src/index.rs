//! Exact cosine-similarity search over a small set of normalized embeddings.
//!
//! Vectors are stored as `f32` but every dot product and norm accumulates in
//! `f64`. Search is a linear scan, so results are exact rather than approximate.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SocialClass;

pub const DEFAULT_DIMENSION: usize = 768;

/// Norms below this are treated as zero.
const MIN_NORM: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vector contains a non-finite component at {0}")]
    NonFinite(usize),
    #[error("duplicate entry id {0:?}")]
    DuplicateId(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be positive")]
    InvalidK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, IndexError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
    }

    /// Scales by a positive factor; used by property tests and mocks.
    pub fn scaled(&self, alpha: f32) -> Result<Self, IndexError> {
        Self::new(self.0.iter().map(|x| x * alpha).collect())
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub fn normalize(v: &EmbeddingVector) -> Result<EmbeddingVector, IndexError> {
    let norm = v.norm();
    if !(norm > MIN_NORM) || !norm.is_finite() {
        return Err(IndexError::ZeroVector);
    }
    Ok(EmbeddingVector(
        v.0.iter().map(|&x| (f64::from(x) / norm) as f32).collect(),
    ))
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, IndexError> {
    if u.dim() != v.dim() {
        return Err(IndexError::DimensionMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if !(nu > MIN_NORM) || !(nv > MIN_NORM) {
        return Err(IndexError::ZeroVector);
    }
    Ok((dot(&u.0, &v.0) / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub label: SocialClass,
    pub definition_text: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: String,
    pub label: SocialClass,
    pub score: f64,
}

/// Linear-scan cosine index with a fixed dimension.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
}

impl EmbeddingIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn insert(&mut self, mut entry: IndexEntry) -> Result<(), IndexError> {
        self.check_dim(&entry.vector)?;
        if self.get(&entry.id).is_some() {
            return Err(IndexError::DuplicateId(entry.id));
        }
        entry.vector = normalize(&entry.vector)?;
        self.entries.push(entry);
        Ok(())
    }

    /// Top-k entries by cosine similarity, score descending then id ascending.
    pub fn query_top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if self.entries.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        self.check_dim(query)?;
        let q = normalize(query)?;
        let mut scored: Vec<(f64, &IndexEntry)> = self
            .entries
            .iter()
            .map(|e| (dot(&e.vector.0, &q.0).clamp(-1.0, 1.0), e))
            .collect();
        scored.sort_by(|(sa, a), (sb, b)| match sb.total_cmp(sa) {
            Ordering::Equal => a.id.cmp(&b.id),
            o => o,
        });
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(score, e)| SearchHit {
                id: e.id.clone(),
                label: e.label,
                score,
            })
            .collect())
    }

    fn check_dim(&self, v: &EmbeddingVector) -> Result<(), IndexError> {
        if v.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                actual: v.dim(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    fn entry(id: &str, v: &[f32]) -> IndexEntry {
        IndexEntry {
            id: id.into(),
            label: SocialClass::None,
            definition_text: id.into(),
            vector: ev(v),
        }
    }

    #[test]
    fn normalize_examples() {
        let n = normalize(&ev(&[3.0, 4.0])).unwrap();
        assert!((n.as_slice()[0] - 0.6).abs() < 1e-7 && (n.as_slice()[1] - 0.8).abs() < 1e-7);
        assert_eq!(normalize(&ev(&[1.0, 0.0, 0.0])).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
        let n = normalize(&ev(&[1.0, 1.0])).unwrap();
        for c in n.as_slice() {
            assert!((f64::from(*c) - 0.70710678).abs() < 1e-7);
        }
        assert_eq!(normalize(&ev(&[0.0, 0.0])), Err(IndexError::ZeroVector));
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&ev(&[0.6, 0.8]), &ev(&[0.6, 0.8])).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(cosine(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine(&ev(&[1.0, 0.0]), &ev(&[1.0, 1.0])).unwrap() - 0.70710678).abs() < 1e-8);
        assert!(matches!(
            cosine(&ev(&[1.0]), &ev(&[1.0, 0.0])),
            Err(IndexError::DimensionMismatch { .. })
        ));
        assert_eq!(cosine(&ev(&[0.0, 0.0]), &ev(&[1.0, 0.0])), Err(IndexError::ZeroVector));
    }

    #[test]
    fn rejects_non_finite() {
        assert_eq!(EmbeddingVector::new(vec![1.0, f32::NAN]), Err(IndexError::NonFinite(1)));
    }

    #[test]
    fn insert_and_exact_match() {
        let mut idx = EmbeddingIndex::new(3);
        idx.insert(entry("a", &[1.0, 2.0, 3.0])).unwrap();
        idx.insert(entry("b", &[-1.0, 0.5, 0.0])).unwrap();
        let hits = idx.query_top_k(&ev(&[1.0, 2.0, 3.0]), 1).unwrap();
        assert_eq!(hits[0].id, "a");
        assert!((hits[0].score - 1.0).abs() < 1e-6);
        assert_eq!(
            idx.insert(entry("a", &[0.0, 0.0, 1.0])),
            Err(IndexError::DuplicateId("a".into()))
        );
        assert_eq!(idx.insert(entry("z", &[0.0, 0.0, 0.0])), Err(IndexError::ZeroVector));
        let stored = idx.get("a").unwrap().vector.norm();
        assert!((stored - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ties_break_by_id() {
        let mut idx = EmbeddingIndex::new(2);
        idx.insert(entry("zeta", &[1.0, 1.0])).unwrap();
        idx.insert(entry("alpha", &[2.0, 2.0])).unwrap();
        idx.insert(entry("mid", &[0.0, 1.0])).unwrap();
        let hits = idx.query_top_k(&ev(&[1.0, 1.0]), 10).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.id.as_str()).collect();
        assert_eq!(ids, ["alpha", "zeta", "mid"]);
    }

    #[test]
    fn query_errors() {
        let idx = EmbeddingIndex::new(2);
        assert_eq!(idx.query_top_k(&ev(&[1.0, 0.0]), 1), Err(IndexError::EmptyIndex));
        let mut idx = EmbeddingIndex::new(2);
        idx.insert(entry("a", &[1.0, 0.0])).unwrap();
        assert_eq!(idx.query_top_k(&ev(&[0.0, 0.0]), 1), Err(IndexError::ZeroVector));
        assert_eq!(idx.query_top_k(&ev(&[1.0, 0.0]), 0), Err(IndexError::InvalidK));
        assert_eq!(idx.query_top_k(&ev(&[1.0, 0.0]), 5).unwrap().len(), 1);
    }

    fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-100.0f32..100.0, dim)
            .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn normalized_has_unit_norm(v in nonzero_vec(16)) {
            let n = normalize(&ev(&v)).unwrap();
            prop_assert!((n.norm() - 1.0).abs() <= 1e-6);
            prop_assert!(cosine(&ev(&v), &n).unwrap() >= 1.0 - 1e-6);
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            u in nonzero_vec(8), v in nonzero_vec(8), alpha in 0.001f32..1000.0
        ) {
            let (u, v) = (ev(&u), ev(&v));
            let c = cosine(&u, &v).unwrap();
            prop_assert!((c - cosine(&v, &u).unwrap()).abs() <= 1e-6);
            prop_assert!((cosine(&u, &u).unwrap() - 1.0).abs() <= 1e-6);
            prop_assert!((cosine(&u.scaled(alpha).unwrap(), &v).unwrap() - c).abs() <= 1e-6);
        }
    }
}
