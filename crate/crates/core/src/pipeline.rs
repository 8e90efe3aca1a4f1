//! Training documents: concatenated histories, half-history augmentation
//! and the stratified train/validation split.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::UserHistory;
use crate::error::PipelineError;
use crate::labels::LabelRecord;

pub const DEFAULT_SEPARATOR: &str = "\n";
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub subject_id: String,
    pub text: String,
    pub n_messages_used: usize,
    pub augmented: bool,
}

fn join_prefix(h: &UserHistory, n: usize, separator: &str) -> String {
    h.messages[..n]
        .iter()
        .map(|m| m.text.as_str())
        .collect::<Vec<_>>()
        .join(separator)
}

/// The whole history as one document, in date order.
pub fn concat_history(h: &UserHistory, separator: &str) -> Document {
    Document {
        subject_id: h.subject_id.clone(),
        text: join_prefix(h, h.len(), separator),
        n_messages_used: h.len(),
        augmented: false,
    }
}

/// Number of messages in the half-history document: `max(1, ⌊n/2⌋)`.
pub fn half_length(n: usize) -> usize {
    (n / 2).max(1)
}

/// The earliest half of the history as one document.
pub fn augment_half(h: &UserHistory, separator: &str) -> Document {
    let n = half_length(h.len()).min(h.len());
    Document {
        subject_id: h.subject_id.clone(),
        text: join_prefix(h, n, separator),
        n_messages_used: n,
        augmented: true,
    }
}

/// Full and half document of every subject, each with its own labels.
pub fn build_training_set(
    histories: &[UserHistory],
    labels: &BTreeMap<String, LabelRecord>,
    separator: &str,
) -> Result<Vec<(Document, LabelRecord)>, PipelineError> {
    let mut rows = Vec::with_capacity(histories.len() * 2);
    for h in histories {
        let label = labels
            .get(&h.subject_id)
            .ok_or_else(|| PipelineError::MissingLabel(h.subject_id.clone()))?;
        rows.push((concat_history(h, separator), label.clone()));
        rows.push((augment_half(h, separator), label.clone()));
    }
    Ok(rows)
}

/// Label space used to form strata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StratifyOn {
    #[default]
    TaskC,
    TaskA,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub validation_fraction: f64,
    pub seed: u64,
    pub stratify_on: StratifyOn,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            seed: 0,
            stratify_on: StratifyOn::TaskC,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
    pub warnings: Vec<String>,
}

/// Stratified split with `round(fraction · N)` validation subjects.
///
/// Per-stratum validation counts use largest-remainder apportionment of the
/// exact proportional shares, so each differs from its share by less than
/// one. Members are drawn with a seeded shuffle; both id lists are sorted.
pub fn stratified_split(labels: &[LabelRecord], spec: &SplitSpec) -> Result<Split, PipelineError> {
    let f = spec.validation_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(PipelineError::Fraction(f));
    }
    if labels.is_empty() {
        return Err(PipelineError::Empty);
    }
    let mut strata: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for r in labels {
        let key = match spec.stratify_on {
            StratifyOn::TaskC => r.c_label.index(),
            StratifyOn::TaskA => usize::from(r.a_label),
        };
        strata.entry(key).or_default().push(&r.subject_id);
    }

    let n = labels.len();
    // f64::round rounds half away from zero
    let target = (f * n as f64).round() as usize;
    let shares: Vec<(usize, f64)> = strata
        .iter()
        .map(|(&k, members)| (k, target as f64 * members.len() as f64 / n as f64))
        .collect();
    let mut counts: BTreeMap<usize, usize> =
        shares.iter().map(|&(k, s)| (k, s.floor() as usize)).collect();
    let assigned: usize = counts.values().sum();
    let mut by_remainder = shares.clone();
    by_remainder.sort_by(|a, b| {
        let ra = a.1 - a.1.floor();
        let rb = b.1 - b.1.floor();
        rb.total_cmp(&ra).then(a.0.cmp(&b.0))
    });
    for &(k, _) in by_remainder.iter().take(target.saturating_sub(assigned)) {
        *counts.get_mut(&k).expect("stratum exists") += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train_ids = Vec::new();
    let mut validation_ids = Vec::new();
    let mut warnings = Vec::new();
    for (k, members) in &strata {
        let mut members = members.clone();
        members.sort_unstable();
        members.shuffle(&mut rng);
        let take = counts[k];
        if take == 0 {
            warnings.push(format!(
                "stratum {k} ({} subjects) has no validation member",
                members.len()
            ));
        }
        validation_ids.extend(members[..take].iter().map(|s| s.to_string()));
        train_ids.extend(members[take..].iter().map(|s| s.to_string()));
    }
    train_ids.sort();
    validation_ids.sort();
    Ok(Split {
        train_ids,
        validation_ids,
        warnings,
    })
}
