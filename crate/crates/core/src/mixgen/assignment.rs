use rand::seq::{index, IndexedRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_alpha, Alpha, MixgenError};

/// Which prompt features a batch uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentMode {
    /// `t` classes in the prompt, mixup instruction with a sampled minority.
    Mixup,
    /// `t` classes in the prompt, plain instruction for the focus class.
    MultiClass,
    /// Only the focus class in the prompt.
    SingleClass,
}

/// Classes and proportions for one generation call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixupAssignment {
    pub majority_class: String,
    /// Present iff mixup is in effect, together with `alpha`.
    pub minority_class: Option<String>,
    pub alpha: Option<Alpha>,
    /// Classes shown in the prompt, in dataset order.
    pub subset: Vec<String>,
}

impl MixupAssignment {
    pub fn is_mixup(&self) -> bool {
        self.minority_class.is_some()
    }
}

/// Mixup assignment: the focus class plus `t - 1` others drawn uniformly
/// without replacement, a minority drawn uniformly from the others, and an
/// alpha from [`sample_alpha`].
pub fn select_assignment<R: Rng + ?Sized>(
    classes: &[String],
    focus: &str,
    t: usize,
    rng: &mut R,
) -> Result<MixupAssignment, MixgenError> {
    plan_assignment(classes, focus, t, AssignmentMode::Mixup, rng)
}

pub fn plan_assignment<R: Rng + ?Sized>(
    classes: &[String],
    focus: &str,
    t: usize,
    mode: AssignmentMode,
    rng: &mut R,
) -> Result<MixupAssignment, MixgenError> {
    let focus_index = classes
        .iter()
        .position(|c| c == focus)
        .ok_or_else(|| MixgenError::UnknownClass(focus.to_string()))?;
    if mode == AssignmentMode::SingleClass {
        return Ok(MixupAssignment {
            majority_class: focus.to_string(),
            minority_class: None,
            alpha: None,
            subset: vec![focus.to_string()],
        });
    }
    if t < 2 {
        return Err(MixgenError::SubsetTooSmall { t });
    }
    if t > classes.len() {
        return Err(MixgenError::SubsetTooLarge {
            t,
            available: classes.len(),
        });
    }
    let others: Vec<usize> = (0..classes.len()).filter(|&i| i != focus_index).collect();
    let mut members: Vec<usize> = index::sample(rng, others.len(), t - 1)
        .into_iter()
        .map(|i| others[i])
        .collect();
    let minority = (mode == AssignmentMode::Mixup).then(|| {
        let pick = *members.choose(rng).expect("t >= 2 leaves at least one other class");
        (classes[pick].clone(), sample_alpha(rng))
    });
    members.push(focus_index);
    members.sort_unstable();
    let (minority_class, alpha) = match minority {
        Some((m, a)) => (Some(m), Some(a)),
        None => (None, None),
    };
    Ok(MixupAssignment {
        majority_class: focus.to_string(),
        minority_class,
        alpha,
        subset: members.into_iter().map(|i| classes[i].clone()).collect(),
    })
}
