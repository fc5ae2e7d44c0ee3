use std::sync::{Arc, Mutex};

use crate::backends::{cosine, Backends, EmbeddingVector};
use crate::data::DatasetSpec;

use super::RelabelError;

/// Embeddings of each class's seed examples, or of the class name when the
/// dataset has no seed examples.
type NameVectors = Arc<Vec<(String, EmbeddingVector)>>;

#[derive(Debug)]
pub struct ClassEmbeddingIndex {
    /// `(class, vectors)` in dataset order.
    per_class_vectors: Vec<(String, Vec<EmbeddingVector>)>,
    dimension: usize,
    /// Class-name embeddings for resolving free-text answers, filled on
    /// first use.
    names: Mutex<Option<NameVectors>>,
}

impl ClassEmbeddingIndex {
    /// Builds an index from precomputed unit vectors.
    pub fn from_vectors(per_class_vectors: Vec<(String, Vec<EmbeddingVector>)>) -> Result<Self, RelabelError> {
        let dimension = per_class_vectors
            .iter()
            .flat_map(|(_, v)| v.first())
            .map(EmbeddingVector::dimension)
            .next()
            .ok_or(RelabelError::NoCandidates)?;
        for (class, vectors) in &per_class_vectors {
            if vectors.is_empty() {
                return Err(RelabelError::UnknownClass(class.clone()));
            }
            if let Some(v) = vectors.iter().find(|v| v.dimension() != dimension) {
                return Err(crate::backends::BackendError::DimensionMismatch {
                    expected: dimension,
                    found: v.dimension(),
                }
                .into());
            }
        }
        Ok(Self {
            per_class_vectors,
            dimension,
            names: Mutex::new(None),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.per_class_vectors.iter().map(|(c, _)| c.as_str())
    }

    pub fn vectors(&self, class: &str) -> Option<&[EmbeddingVector]> {
        self.per_class_vectors
            .iter()
            .find(|(c, _)| c == class)
            .map(|(_, v)| v.as_slice())
    }

    pub fn vector_count(&self) -> usize {
        self.per_class_vectors.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn len(&self) -> usize {
        self.per_class_vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_class_vectors.is_empty()
    }

    pub fn contains(&self, class: &str) -> bool {
        self.per_class_vectors.iter().any(|(c, _)| c == class)
    }

    /// True when the index holds exactly the dataset's classes.
    pub fn covers(&self, dataset: &DatasetSpec) -> bool {
        self.len() == dataset.classes().len() && dataset.classes().iter().all(|c| self.contains(&c.name))
    }

    /// Class-name embeddings, computed once. In zero-shot indices the class
    /// vectors already are name embeddings and are reused.
    pub(crate) fn name_vectors(&self, backends: &Backends) -> Result<NameVectors, RelabelError> {
        let mut slot = self.names.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(names) = slot.as_ref() {
            return Ok(names.clone());
        }
        let names = self
            .per_class_vectors
            .iter()
            .map(|(class, _)| Ok((class.clone(), backends.embed(class)?)))
            .collect::<Result<Vec<_>, RelabelError>>()?;
        let names = Arc::new(names);
        *slot = Some(names.clone());
        Ok(names)
    }

    fn seed_name_vectors(&self) {
        let vectors: Vec<_> = self.per_class_vectors.iter().map(|(c, v)| (c.clone(), v[0].clone())).collect();
        *self.names.lock().unwrap_or_else(|p| p.into_inner()) = Some(Arc::new(vectors));
    }
}

/// Embeds every seed example, or every class name in a zero-shot dataset.
/// Issues `sum(max(k, 1))` embedding calls.
pub fn build_index(dataset: &DatasetSpec, backends: &Backends) -> Result<ClassEmbeddingIndex, RelabelError> {
    let zero_shot = dataset.k() == 0;
    let per_class = dataset
        .classes()
        .iter()
        .map(|class| {
            let vectors = if zero_shot {
                vec![backends.embed(&class.name)?]
            } else {
                class
                    .seed_examples
                    .iter()
                    .map(|e| backends.embed(e))
                    .collect::<Result<Vec<_>, _>>()?
            };
            Ok((class.name.clone(), vectors))
        })
        .collect::<Result<Vec<_>, RelabelError>>()?;
    let index = ClassEmbeddingIndex::from_vectors(per_class)?;
    if zero_shot {
        index.seed_name_vectors();
    }
    Ok(index)
}

/// Top `min(m, |C|)` classes for an already embedded query. A class scores
/// the maximum cosine over its vectors; ties go to the smaller name.
pub fn rank_with_vector(
    index: &ClassEmbeddingIndex,
    query: &EmbeddingVector,
    m: usize,
) -> Result<Vec<String>, RelabelError> {
    if m == 0 {
        return Err(RelabelError::ZeroCandidates);
    }
    let mut scored = index
        .per_class_vectors
        .iter()
        .map(|(class, vectors)| {
            let mut best = f64::NEG_INFINITY;
            for v in vectors {
                best = best.max(cosine(query, v)?);
            }
            Ok((best, class.as_str()))
        })
        .collect::<Result<Vec<_>, RelabelError>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored.into_iter().take(m).map(|(_, c)| c.to_string()).collect())
}

/// Embeds `query` and ranks the classes against it.
pub fn rank_candidates(
    index: &ClassEmbeddingIndex,
    query: &str,
    m: usize,
    backends: &Backends,
) -> Result<Vec<String>, RelabelError> {
    if m == 0 {
        return Err(RelabelError::ZeroCandidates);
    }
    rank_with_vector(index, &backends.embed(query)?, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{HashedTokenEmbedder, ScriptedEmbedder};
    use crate::backends::CallKind;
    use crate::data::ClassSpec;
    use std::sync::Arc;

    fn unit(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap().normalized().unwrap()
    }

    fn orthogonal() -> (DatasetSpec, Backends) {
        let ds = DatasetSpec::new(
            "o",
            vec![
                ClassSpec::new("one", "d", ["e1"]),
                ClassSpec::new("two", "d", ["e2"]),
                ClassSpec::new("three", "d", ["e3"]),
            ],
        )
        .unwrap();
        let mut e = ScriptedEmbedder::new();
        e.insert("e1", vec![1.0, 0.0, 0.0]);
        e.insert("e2", vec![0.0, 1.0, 0.0]);
        e.insert("e3", vec![0.0, 0.0, 1.0]);
        e.insert("query", vec![0.0, 1.0, 0.0]);
        (ds, Backends::default().with_embed(Arc::new(e)))
    }

    #[test]
    fn orthogonal_query_ranks_its_class_first() {
        let (ds, b) = orthogonal();
        let index = build_index(&ds, &b).unwrap();
        let ranked = rank_candidates(&index, "query", 5, &b).unwrap();
        assert_eq!(ranked, ["two", "one", "three"]);
    }

    #[test]
    fn m_is_clamped_and_validated() {
        let (ds, b) = orthogonal();
        let index = build_index(&ds, &b).unwrap();
        assert_eq!(rank_candidates(&index, "query", 2, &b).unwrap(), ["two", "one"]);
        assert!(matches!(rank_candidates(&index, "query", 0, &b), Err(RelabelError::ZeroCandidates)));
    }

    #[test]
    fn call_counts_and_vector_counts() {
        let classes: Vec<ClassSpec> = (0..77)
            .map(|i| ClassSpec::new(format!("intent_{i}"), "d", [format!("first {i}"), format!("second {i}")]))
            .collect();
        let ds = DatasetSpec::new("b77", classes.clone()).unwrap();
        let b = Backends::default().with_embed(Arc::new(HashedTokenEmbedder::default()));
        let index = build_index(&ds, &b).unwrap();
        assert_eq!(index.vector_count(), 154);
        assert_eq!(b.ledger().count(CallKind::Embed), 154);

        let zero: Vec<ClassSpec> = classes[..6].iter().map(|c| ClassSpec::new(c.name.clone(), "d", Vec::<String>::new())).collect();
        let ds0 = DatasetSpec::new("z", zero).unwrap();
        let b0 = Backends::default().with_embed(Arc::new(HashedTokenEmbedder::default()));
        let index0 = build_index(&ds0, &b0).unwrap();
        assert_eq!(index0.vector_count(), 6);
        index0.name_vectors(&b0).unwrap();
        assert_eq!(b0.ledger().count(CallKind::Embed), 6);
    }

    #[test]
    fn building_twice_is_identical() {
        let (ds, b) = orthogonal();
        let a = build_index(&ds, &b).unwrap();
        let c = build_index(&ds, &b).unwrap();
        assert_eq!(a.per_class_vectors, c.per_class_vectors);
    }

    #[test]
    fn max_aggregation_and_name_tie_break() {
        let index = ClassEmbeddingIndex::from_vectors(vec![
            ("zeta".into(), vec![unit(&[1.0, 0.0])]),
            ("alpha".into(), vec![unit(&[0.0, 1.0]), unit(&[1.0, 0.0])]),
            ("mid".into(), vec![unit(&[1.0, 1.0])]),
        ])
        .unwrap();
        let ranked = rank_with_vector(&index, &unit(&[1.0, 0.0]), 3).unwrap();
        assert_eq!(ranked, ["alpha", "zeta", "mid"]);
    }

    proptest::proptest! {
        #[test]
        fn ranking_is_distinct_and_order_invariant(
            vectors in proptest::collection::vec(proptest::collection::vec(-3i8..=3, 3), 6),
            query in proptest::collection::vec(-3i8..=3, 3),
            rotate in 0usize..6,
        ) {
            let to_unit = |v: &[i8]| {
                let v: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
                EmbeddingVector::new(v).unwrap().normalized().ok()
            };
            let Some(q) = to_unit(&query) else { return Ok(()) };
            let mut classes = Vec::new();
            for (i, v) in vectors.iter().enumerate() {
                let Some(u) = to_unit(v) else { return Ok(()) };
                classes.push((format!("c{i}"), vec![u]));
            }
            let a = rank_with_vector(&ClassEmbeddingIndex::from_vectors(classes.clone()).unwrap(), &q, 4).unwrap();
            classes.rotate_left(rotate);
            let b = rank_with_vector(&ClassEmbeddingIndex::from_vectors(classes).unwrap(), &q, 4).unwrap();
            let mut dedup = a.clone();
            dedup.sort();
            dedup.dedup();
            proptest::prop_assert_eq!(dedup.len(), a.len());
            proptest::prop_assert_eq!(a, b);
        }
    }
}
