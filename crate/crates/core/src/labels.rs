//! The four subtask label spaces and the conversions between them.
//!
//! Every annotation is stored as a 4-way distribution of annotator votes
//! (task 2d). The other three label spaces are functions of it:
//!
//! * task 2c: the most voted class ([`d_to_c`]),
//! * task 2a: whether that class is one of the "suffer" classes ([`c_to_a`]),
//! * task 2b: the total vote share of the "suffer" classes ([`d_to_b`]).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::LabelError;

/// Tolerance used for sums and tenth-multiples of annotator fractions.
pub const LABEL_TOLERANCE: f64 = 1e-9;

/// The four annotation classes, in canonical storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RiskClass {
    #[serde(rename = "suffer+in favour")]
    SufferInFavour,
    #[serde(rename = "suffer+against")]
    SufferAgainst,
    #[serde(rename = "suffer+other")]
    SufferOther,
    #[serde(rename = "control")]
    Control,
}

impl RiskClass {
    /// Canonical order. Also the argmax tie-break priority.
    pub const ALL: [RiskClass; 4] = [
        RiskClass::SufferInFavour,
        RiskClass::SufferAgainst,
        RiskClass::SufferOther,
        RiskClass::Control,
    ];

    /// Default regressor-chain order: most to least annotated class.
    pub const CHAIN_ORDER: [RiskClass; 4] = [
        RiskClass::Control,
        RiskClass::SufferInFavour,
        RiskClass::SufferAgainst,
        RiskClass::SufferOther,
    ];

    pub fn index(self) -> usize {
        match self {
            RiskClass::SufferInFavour => 0,
            RiskClass::SufferAgainst => 1,
            RiskClass::SufferOther => 2,
            RiskClass::Control => 3,
        }
    }

    pub fn from_index(index: usize) -> Option<RiskClass> {
        RiskClass::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiskClass::SufferInFavour => "suffer+in favour",
            RiskClass::SufferAgainst => "suffer+against",
            RiskClass::SufferOther => "suffer+other",
            RiskClass::Control => "control",
        }
    }

    /// Abbreviation used in metric column names (`rmse sf`, `r2 c`, ...).
    pub fn short_name(self) -> &'static str {
        match self {
            RiskClass::SufferInFavour => "sf",
            RiskClass::SufferAgainst => "sa",
            RiskClass::SufferOther => "so",
            RiskClass::Control => "c",
        }
    }

    pub fn is_suffer(self) -> bool {
        self != RiskClass::Control
    }
}

impl fmt::Display for RiskClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskClass {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RiskClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| LabelError::UnknownClass(s.to_string()))
    }
}

/// A probability distribution over the four classes, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Distribution4([f64; 4]);

impl Distribution4 {
    pub fn new(p: [f64; 4]) -> Result<Self, LabelError> {
        for &v in &p {
            if !(-LABEL_TOLERANCE..=1.0 + LABEL_TOLERANCE).contains(&v) {
                return Err(LabelError::OutOfRange(v));
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > LABEL_TOLERANCE {
            return Err(LabelError::BadSum(sum));
        }
        Ok(Distribution4(p))
    }

    pub fn uniform() -> Self {
        Distribution4([0.25; 4])
    }

    pub fn probs(&self) -> &[f64; 4] {
        &self.0
    }

    pub fn get(&self, class: RiskClass) -> f64 {
        self.0[class.index()]
    }

    /// Whether every component is a whole number of annotator votes out of ten.
    pub fn is_vote_fraction(&self) -> bool {
        self.0.iter().all(|&v| is_tenth(v))
    }
}

impl TryFrom<[f64; 4]> for Distribution4 {
    type Error = LabelError;

    fn try_from(p: [f64; 4]) -> Result<Self, Self::Error> {
        Distribution4::new(p)
    }
}

impl From<Distribution4> for [f64; 4] {
    fn from(d: Distribution4) -> Self {
        d.0
    }
}

pub(crate) fn is_tenth(v: f64) -> bool {
    ((v * 10.0).round() - v * 10.0).abs() <= 10.0 * LABEL_TOLERANCE
}

/// Most probable class; ties go to the earlier class in canonical order.
pub fn d_to_c(d: &Distribution4) -> RiskClass {
    argmax_class(d.probs())
}

/// Argmax over raw scores with the canonical-order tie-break. Scores within
/// a relative `LABEL_TOLERANCE` of each other count as tied, so rounding
/// noise in predictions cannot override the class order.
pub fn argmax_class(scores: &[f64; 4]) -> RiskClass {
    let mut best = 0;
    for i in 1..4 {
        let slack = LABEL_TOLERANCE * scores[i].abs().max(scores[best].abs());
        if scores[i] > scores[best] + slack {
            best = i;
        }
    }
    RiskClass::ALL[best]
}

pub fn c_to_a(c: RiskClass) -> u8 {
    u8::from(c.is_suffer())
}

/// Total probability mass on the three suffer classes.
pub fn d_to_b(d: &Distribution4) -> f64 {
    let p = d.probs();
    (p[0] + p[1] + p[2]).clamp(0.0, 1.0)
}

/// Task 2a/2b/2c labels recovered from one distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveredLabels {
    pub a: u8,
    pub b: f64,
    pub c: RiskClass,
}

pub fn recover(d: &Distribution4) -> RecoveredLabels {
    let c = d_to_c(d);
    RecoveredLabels {
        a: c_to_a(c),
        b: d_to_b(d),
        c,
    }
}

/// A subject's gold labels in all four encodings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub subject_id: String,
    pub a_label: u8,
    pub b_label: f64,
    pub c_label: RiskClass,
    pub d_dist: Distribution4,
}

impl LabelRecord {
    /// Builds a record whose a/b/c labels are derived from `d`.
    pub fn from_distribution(subject_id: impl Into<String>, d: Distribution4) -> Self {
        let r = recover(&d);
        LabelRecord {
            subject_id: subject_id.into(),
            a_label: r.a,
            b_label: r.b,
            c_label: r.c,
            d_dist: d,
        }
    }
}

/// Mismatches between the stored a/b/c labels and those recovered from d.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub subject_id: String,
    /// `(recovered, stored)` when d_to_c(d) disagrees with c_label.
    pub c_mismatch: Option<(RiskClass, RiskClass)>,
    /// `(recovered, stored)` when c_to_a(c_label) disagrees with a_label.
    pub a_mismatch: Option<(u8, u8)>,
    pub b_mismatch: Option<(f64, f64)>,
}

impl ConsistencyReport {
    pub fn is_consistent(&self) -> bool {
        self.c_mismatch.is_none() && self.a_mismatch.is_none() && self.b_mismatch.is_none()
    }
}

pub fn check_consistency(r: &LabelRecord) -> ConsistencyReport {
    let c = d_to_c(&r.d_dist);
    let a = c_to_a(r.c_label);
    let b = d_to_b(&r.d_dist);
    ConsistencyReport {
        subject_id: r.subject_id.clone(),
        c_mismatch: (c != r.c_label).then_some((c, r.c_label)),
        a_mismatch: (a != r.a_label).then_some((a, r.a_label)),
        b_mismatch: ((b - r.b_label).abs() > LABEL_TOLERANCE).then_some((b, r.b_label)),
    }
}
