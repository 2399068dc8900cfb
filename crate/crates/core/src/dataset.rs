//! Turns corpus samples into in-context instances: each query gets its `k`
//! nearest same-category training samples as references.

use std::collections::{BTreeMap, HashMap};

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::incontext::{InContextInstance, Query, Reference, Vocabulary, DEFAULT_KEYWORD_SEPARATOR};
use crate::retrieval::{build_index, prompt_order, retrieve_similar, ImageEncoder, RetrievalIndex};
use crate::tensor::Real;

/// Training samples with one retrieval index per category.
pub struct ReferencePool<'a> {
    samples: HashMap<&'a str, &'a Sample>,
    images: HashMap<&'a str, Vec<Real>>,
    indexes: BTreeMap<String, RetrievalIndex>,
}

impl<'a> ReferencePool<'a> {
    pub fn new(train: &'a [Sample], encoder: &dyn ImageEncoder) -> Result<Self> {
        let mut by_category: BTreeMap<&str, Vec<Sample>> = BTreeMap::new();
        for s in train {
            by_category.entry(&s.category).or_default().push(s.clone());
        }
        let mut indexes = BTreeMap::new();
        for (cat, samples) in by_category {
            indexes.insert(cat.to_string(), build_index(&samples, cat, encoder)?);
        }
        Self::with_indexes(train, encoder, indexes)
    }

    /// Uses prebuilt indexes; every indexed id must be a training sample.
    pub fn with_indexes(
        train: &'a [Sample],
        encoder: &dyn ImageEncoder,
        indexes: BTreeMap<String, RetrievalIndex>,
    ) -> Result<Self> {
        let mut samples = HashMap::new();
        let mut images = HashMap::new();
        for s in train {
            if samples.insert(s.id.as_str(), s).is_some() {
                return Err(Error::Corpus(format!("duplicate training id `{}`", s.id)));
            }
            images.insert(s.id.as_str(), encoder.encode_sample(s)?.global);
        }
        for idx in indexes.values() {
            if let Some(id) = idx.ids().iter().find(|id| !samples.contains_key(id.as_str())) {
                return Err(Error::Retrieval(format!("index entry `{id}` is not a training sample")));
            }
        }
        Ok(Self {
            samples,
            images,
            indexes,
        })
    }

    pub fn index(&self, category: &str) -> Option<&RetrievalIndex> {
        self.indexes.get(category)
    }

    /// `k` references for `query` in prompt order (most similar last). With
    /// `exclude_self` the query's own id is skipped.
    pub fn references(&self, query: &Sample, query_image: &[Real], k: usize, exclude_self: bool) -> Result<Vec<Reference>> {
        if k == 0 {
            return Ok(Vec::new());
        }
        let index = self
            .indexes
            .get(&query.category)
            .ok_or_else(|| Error::Retrieval(format!("no training pool for category `{}`", query.category)))?;
        let exclude = exclude_self.then_some(query.id.as_str());
        let ids = retrieve_similar(index, query_image, k, exclude)?;
        prompt_order(ids)
            .into_iter()
            .map(|id| {
                let s = self.samples[id.as_str()];
                Ok(Reference {
                    id: s.id.clone(),
                    keywords: s.keywords.clone(),
                    description: s.description.clone(),
                    image: self.images[id.as_str()].clone(),
                })
            })
            .collect()
    }
}

/// Builds one instance per query. Training instances (`with_target`) exclude
/// the query itself from its own references.
pub fn build_instances(
    queries: &[Sample],
    pool: &ReferencePool<'_>,
    encoder: &dyn ImageEncoder,
    shots: usize,
    with_target: bool,
) -> Result<Vec<InContextInstance>> {
    queries
        .iter()
        .map(|q| {
            let image = encoder.encode_sample(q)?.global;
            let references = pool.references(q, &image, shots, true)?;
            Ok(InContextInstance {
                category: q.category.clone(),
                references,
                query: Query {
                    id: q.id.clone(),
                    keywords: q.keywords.clone(),
                    image,
                },
                target: with_target.then(|| q.description.clone()),
            })
        })
        .collect()
}

/// Vocabulary over the template clauses plus every keyword and description.
pub fn build_vocabulary(samples: &[Sample]) -> Vocabulary {
    let clauses = "Input Image: and Marketing Keywords: , output description is ";
    let mut texts: Vec<&str> = vec![clauses, DEFAULT_KEYWORD_SEPARATOR];
    for s in samples {
        texts.extend(s.keywords.iter().map(String::as_str));
        texts.push(&s.description);
    }
    Vocabulary::build(texts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::SyntheticEncoder;

    fn sample(id: &str, feature: Vec<Real>) -> Sample {
        Sample {
            id: id.into(),
            category: "c".into(),
            image_ref: None,
            image_feature: Some(feature),
            keywords: vec![format!("kw{id}")],
            description: format!("desc {id}"),
        }
    }

    #[test]
    fn training_instances_never_reference_themselves() {
        let train = vec![
            sample("a", vec![1.0, 0.0]),
            sample("b", vec![0.9, 0.1]),
            sample("c", vec![0.0, 1.0]),
        ];
        let enc = SyntheticEncoder::new(2, 0).unwrap();
        let pool = ReferencePool::new(&train, &enc).unwrap();
        let inst = build_instances(&train, &pool, &enc, 2, true).unwrap();
        for i in &inst {
            assert!(i.references.iter().all(|r| r.id != i.query.id));
            assert_eq!(i.references.len(), 2);
        }
        // Nearest reference sits last.
        assert_eq!(inst[0].references[1].id, "b");
        assert_eq!(inst[0].references[0].id, "c");
    }

    #[test]
    fn zero_shot_has_no_references() {
        let train = vec![sample("a", vec![1.0, 0.0]), sample("b", vec![0.0, 1.0])];
        let enc = SyntheticEncoder::new(2, 0).unwrap();
        let pool = ReferencePool::new(&train, &enc).unwrap();
        let inst = build_instances(&train, &pool, &enc, 0, false).unwrap();
        assert!(inst.iter().all(|i| i.references.is_empty() && i.target.is_none()));
    }

    #[test]
    fn vocabulary_covers_clauses() {
        let v = build_vocabulary(&[sample("a", vec![1.0])]);
        for w in ["Input", "Image", ":", "Marketing", "Keywords", "output", "description", "is", ",", "desc", "kwa"] {
            assert_ne!(v.id(w), crate::incontext::special::UNK, "{w}");
        }
    }
}
