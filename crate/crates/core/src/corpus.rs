//! Raw task data: per-subject JSON message arrays and label CSV files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CorpusError;
use crate::labels::{is_tenth, Distribution4, LabelRecord, RiskClass, LABEL_TOLERANCE};

pub const DATE_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub id_message: String,
    #[serde(rename = "message")]
    pub text: String,
    #[serde(with = "date_format")]
    pub date: NaiveDateTime,
}

mod date_format {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(date: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&date.format(super::DATE_FORMAT))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let raw = String::deserialize(d)?;
        NaiveDateTime::parse_from_str(&raw, super::DATE_FORMAT).map_err(serde::de::Error::custom)
    }
}

/// One subject's messages, sorted by date (stable for equal dates).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistory {
    pub subject_id: String,
    pub messages: Vec<Message>,
}

impl UserHistory {
    pub fn new(subject_id: impl Into<String>, mut messages: Vec<Message>) -> Result<Self, CorpusError> {
        let subject_id = subject_id.into();
        if messages.is_empty() {
            return Err(CorpusError::EmptyHistory(subject_id));
        }
        messages.sort_by_key(|m| m.date);
        Ok(UserHistory {
            subject_id,
            messages,
        })
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Serializes back to the source JSON array layout.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.messages).expect("messages always serialize")
    }
}

/// Removes commas that directly precede `]` or `}` outside string literals.
///
/// Source files in the wild carry trailing commas (the task's own sample
/// does), which strict JSON rejects.
fn strip_trailing_commas(raw: &str) -> String {
    let bytes = raw.as_bytes();
    let mut out = String::with_capacity(raw.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut last = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b',' => {
                let next = bytes[i + 1..].iter().find(|c| !c.is_ascii_whitespace());
                if matches!(next, Some(b']') | Some(b'}')) {
                    out.push_str(&raw[last..i]);
                    // keep byte offsets stable for error columns
                    out.push(' ');
                    last = i + 1;
                }
            }
            _ => {}
        }
    }
    out.push_str(&raw[last..]);
    out
}

pub fn parse_user_messages(raw: &[u8], subject_id: &str) -> Result<UserHistory, CorpusError> {
    let text = std::str::from_utf8(raw).map_err(|e| CorpusError::Parse {
        line: 1,
        column: e.valid_up_to() + 1,
        message: "invalid UTF-8".into(),
    })?;
    let cleaned = strip_trailing_commas(text);
    let value: Value = serde_json::from_str(&cleaned).map_err(|e| CorpusError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let Value::Array(items) = value else {
        return Err(CorpusError::Parse {
            line: 1,
            column: 1,
            message: "expected a JSON array of messages".into(),
        });
    };

    let mut messages = Vec::with_capacity(items.len());
    for (index, item) in items.iter().enumerate() {
        let id_message = match item.get("id_message") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(CorpusError::Schema { key: "id_message", index }),
        };
        let text = match item.get("message") {
            Some(Value::String(s)) => s.clone(),
            _ => return Err(CorpusError::Schema { key: "message", index }),
        };
        let date = match item.get("date") {
            Some(Value::String(s)) => NaiveDateTime::parse_from_str(s.trim(), DATE_FORMAT)
                .map_err(|_| CorpusError::Date {
                    index,
                    value: s.clone(),
                })?,
            _ => return Err(CorpusError::Schema { key: "date", index }),
        };
        messages.push(Message {
            id_message,
            text,
            date,
        });
    }
    UserHistory::new(subject_id, messages)
}

/// Loads every `<subject_id>.json` file of a directory, sorted by subject id.
pub fn load_histories(dir: &Path) -> Result<Vec<UserHistory>, CorpusError> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|path| {
            let subject_id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let raw = fs::read(path)?;
            parse_user_messages(&raw, &subject_id).map_err(|e| e.in_file(path))
        })
        .collect()
}

pub const LABEL_COLUMNS: [&str; 8] = [
    "subject_id",
    "a_label",
    "b_label",
    "c_label",
    "d_suffer_in_favour",
    "d_suffer_against",
    "d_suffer_other",
    "d_control",
];

const D_COLUMNS: [&str; 4] = [
    "d_suffer_in_favour",
    "d_suffer_against",
    "d_suffer_other",
    "d_control",
];

#[derive(Default)]
struct PartialLabel {
    a: Option<u8>,
    b: Option<f64>,
    c: Option<RiskClass>,
    d: Option<[f64; 4]>,
}

/// Parses the merged label CSV (one row per subject, every task's columns).
pub fn parse_labels(raw: &[u8]) -> Result<Vec<LabelRecord>, CorpusError> {
    parse_label_files(&[raw])
}

/// Parses one or more label CSVs and merges them by subject id.
///
/// Each file needs a `subject_id` column plus any subset of the task columns;
/// the four task files and the single merged file are both accepted. Output
/// is sorted by subject id.
pub fn parse_label_files(files: &[&[u8]]) -> Result<Vec<LabelRecord>, CorpusError> {
    let mut merged: BTreeMap<String, PartialLabel> = BTreeMap::new();
    for raw in files {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(*raw);
        let headers = reader
            .headers()
            .map_err(|e| csv_error(&e))?
            .clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let id_col = col("subject_id").ok_or(CorpusError::MissingColumn("subject_id"))?;
        let (a_col, b_col, c_col) = (col("a_label"), col("b_label"), col("c_label"));
        let d_cols: Vec<Option<usize>> = D_COLUMNS.iter().map(|c| col(c)).collect();
        let has_d = d_cols.iter().any(Option::is_some);
        if has_d {
            if let Some(i) = d_cols.iter().position(Option::is_none) {
                return Err(CorpusError::MissingColumn(D_COLUMNS[i]));
            }
        }

        let mut seen = BTreeSet::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(&e))?;
            let field = |i: usize| record.get(i).unwrap_or("");
            let id = field(id_col).to_string();
            if !seen.insert(id.clone()) {
                return Err(CorpusError::Duplicate(id));
            }
            let entry = merged.entry(id.clone()).or_default();
            if let Some(i) = a_col {
                entry.a = Some(parse_binary(&id, field(i))?);
            }
            if let Some(i) = b_col {
                entry.b = Some(parse_tenth(&id, "b_label", field(i))?);
            }
            if let Some(i) = c_col {
                let value = field(i);
                entry.c = Some(value.parse().map_err(|_| CorpusError::Enum {
                    subject_id: id.clone(),
                    value: value.to_string(),
                })?);
            }
            if has_d {
                let mut d = [0.0; 4];
                for (k, slot) in d.iter_mut().enumerate() {
                    let i = d_cols[k].expect("checked above");
                    *slot = parse_tenth(&id, D_COLUMNS[k], field(i))?;
                }
                entry.d = Some(d);
            }
        }
    }

    merged
        .into_iter()
        .map(|(subject_id, p)| {
            let missing = |column| CorpusError::IncompleteLabels {
                subject_id: subject_id.clone(),
                column,
            };
            let a_label = p.a.ok_or_else(|| missing("a_label"))?;
            let b_label = p.b.ok_or_else(|| missing("b_label"))?;
            let c_label = p.c.ok_or_else(|| missing("c_label"))?;
            let d = p.d.ok_or_else(|| missing("d_control"))?;
            let d_dist =
                Distribution4::new(d).map_err(|_| CorpusError::Distribution(subject_id.clone()))?;
            Ok(LabelRecord {
                subject_id,
                a_label,
                b_label,
                c_label,
                d_dist,
            })
        })
        .collect()
}

pub fn load_labels(paths: &[&Path]) -> Result<Vec<LabelRecord>, CorpusError> {
    let raws = paths
        .iter()
        .map(|p| fs::read(p).map_err(|e| CorpusError::from(e).in_file(p)))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&[u8]> = raws.iter().map(Vec::as_slice).collect();
    parse_label_files(&refs)
}

/// Writes labels in the merged CSV layout.
pub fn write_labels_csv(labels: &[LabelRecord]) -> String {
    let mut out = LABEL_COLUMNS.join(",");
    out.push('\n');
    for r in labels {
        let d = r.d_dist.probs();
        out.push_str(&format!(
            "{},{},{:.1},{},{:.1},{:.1},{:.1},{:.1}\n",
            r.subject_id, r.a_label, r.b_label, r.c_label, d[0], d[1], d[2], d[3]
        ));
    }
    out
}

fn csv_error(e: &csv::Error) -> CorpusError {
    CorpusError::Csv {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

fn parse_binary(subject_id: &str, raw: &str) -> Result<u8, CorpusError> {
    match raw.parse::<f64>() {
        Ok(0.0) => Ok(0),
        Ok(1.0) => Ok(1),
        _ => Err(CorpusError::LabelValue {
            subject_id: subject_id.to_string(),
            column: "a_label",
            value: raw.to_string(),
        }),
    }
}

fn parse_tenth(subject_id: &str, column: &'static str, raw: &str) -> Result<f64, CorpusError> {
    match raw.parse::<f64>() {
        Ok(v) if (-LABEL_TOLERANCE..=1.0 + LABEL_TOLERANCE).contains(&v) && is_tenth(v) => Ok(v),
        _ => Err(CorpusError::LabelValue {
            subject_id: subject_id.to_string(),
            column,
            value: raw.to_string(),
        }),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    /// Subjects per task-2a label, `[control, suffer]`.
    pub a_counts: [usize; 2],
    /// Subjects per task-2c class, canonical order.
    pub c_counts: [usize; 4],
    /// Subjects per b_label value in tenths, index = round(10·b).
    pub b_histogram: [usize; 11],
    /// Mean task-2d distribution.
    pub d_mean: [f64; 4],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub matched: usize,
    pub unlabeled_subjects: Vec<String>,
    pub unmatched_labels: Vec<String>,
    pub n_histories: usize,
    pub n_labels: usize,
    pub n_messages: usize,
    pub label_distribution: LabelDistribution,
}

pub fn validate_dataset(histories: &[UserHistory], labels: &[LabelRecord]) -> ValidationReport {
    let history_ids: BTreeSet<&str> = histories.iter().map(|h| h.subject_id.as_str()).collect();
    let label_ids: BTreeSet<&str> = labels.iter().map(|l| l.subject_id.as_str()).collect();

    let mut dist = LabelDistribution::default();
    for r in labels {
        dist.a_counts[usize::from(r.a_label)] += 1;
        dist.c_counts[r.c_label.index()] += 1;
        dist.b_histogram[(r.b_label * 10.0).round() as usize] += 1;
        for (m, p) in dist.d_mean.iter_mut().zip(r.d_dist.probs()) {
            *m += p;
        }
    }
    if !labels.is_empty() {
        for m in &mut dist.d_mean {
            *m /= labels.len() as f64;
        }
    }

    ValidationReport {
        matched: history_ids.intersection(&label_ids).count(),
        unlabeled_subjects: history_ids.difference(&label_ids).map(|s| s.to_string()).collect(),
        unmatched_labels: label_ids.difference(&history_ids).map(|s| s.to_string()).collect(),
        n_histories: histories.len(),
        n_labels: labels.len(),
        n_messages: histories.iter().map(UserHistory::len).sum(),
        label_distribution: dist,
    }
}
