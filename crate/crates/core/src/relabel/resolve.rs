use serde::{Deserialize, Serialize};

use crate::backends::{cosine, Backends};

use super::{ClassEmbeddingIndex, RelabelError};

/// A free-text answer mapped onto a dataset class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub label: String,
    pub similarity: f64,
    /// The answer was exactly a class name.
    pub exact: bool,
    pub out_of_scope_suspect: bool,
}

/// Trims whitespace, quotes, backticks and periods from both ends.
pub fn clean_prediction(raw: &str) -> &str {
    raw.trim_matches(|c: char| c.is_whitespace() || matches!(c, '"' | '\'' | '`' | '.'))
}

/// Maps an answer to a class. An exact class name resolves with similarity
/// 1 and no embedding call; anything else resolves to the class whose name
/// embedding is closest (ties to the smaller name) and is flagged when that
/// similarity is below `tau`.
pub fn resolve_prediction(
    raw: &str,
    index: &ClassEmbeddingIndex,
    backends: &Backends,
    tau: f64,
) -> Result<Resolution, RelabelError> {
    let cleaned = clean_prediction(raw);
    if cleaned.is_empty() {
        return Err(RelabelError::EmptyPrediction);
    }
    if index.contains(cleaned) {
        return Ok(Resolution {
            label: cleaned.to_string(),
            similarity: 1.0,
            exact: true,
            out_of_scope_suspect: false,
        });
    }
    let names = index.name_vectors(backends)?;
    let query = backends.embed(cleaned)?;
    let mut best: Option<(f64, &str)> = None;
    for (class, v) in names.iter() {
        let s = cosine(&query, v)?;
        let better = match best {
            None => true,
            Some((bs, bc)) => s > bs || (s == bs && class.as_str() < bc),
        };
        if better {
            best = Some((s, class));
        }
    }
    let (similarity, label) = best.ok_or(RelabelError::NoCandidates)?;
    Ok(Resolution {
        label: label.to_string(),
        similarity,
        exact: false,
        out_of_scope_suspect: similarity < tau,
    })
}
