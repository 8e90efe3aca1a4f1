//! Seeded synthetic corpora: histories, annotator-vote labels and a
//! matching per-round embedding file, for demos and tests without an
//! encoder.

use chrono::NaiveDateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Message, UserHistory, DATE_FORMAT};
use crate::embeddings::{EmbeddingHeader, EmbeddingTable};
use crate::labels::{Distribution4, LabelRecord};

const WORDS: [&str; 16] = [
    "hoy", "no", "puedo", "dormir", "gracias", "amigos", "triste", "vacuna", "trabajo", "casa",
    "feliz", "cansado", "nadie", "música", "mañana", "solo",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub dimension: usize,
    pub min_messages: usize,
    pub max_messages: usize,
    /// Distance of the at-risk cluster centre from the origin.
    pub separation: f64,
    pub annotators: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_subjects: 60,
            dimension: 16,
            min_messages: 3,
            max_messages: 12,
            separation: 2.0,
            annotators: 10,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub histories: Vec<UserHistory>,
    pub labels: Vec<LabelRecord>,
    /// Full-history vectors at `round: null` plus one vector per round.
    pub embeddings: EmbeddingTable,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generates `spec.n_subjects` subjects with ids `subject0001`, ...
///
/// The suffering probability of each subject is a logistic function of its
/// vector's projection on a fixed direction; annotator votes are drawn from
/// it, so labels are vote fractions. Round vectors move linearly from the
/// corpus centre to the subject's vector, reaching it at the last round.
pub fn generate(spec: &SynthSpec) -> SynthData {
    assert!(spec.dimension >= 2 && spec.annotators >= 1);
    assert!(1 <= spec.min_messages && spec.min_messages <= spec.max_messages);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let d = spec.dimension;

    let risk_dir = unit_vector(&mut rng, &unit, d);
    let flavour_dir = unit_vector(&mut rng, &unit, d);
    let base = NaiveDateTime::parse_from_str("2023-01-01 08:00:00", DATE_FORMAT).expect("fixed date");

    let mut histories = Vec::with_capacity(spec.n_subjects);
    let mut labels = Vec::with_capacity(spec.n_subjects);
    let mut vectors = Vec::with_capacity(spec.n_subjects);
    for s in 0..spec.n_subjects {
        let id = format!("subject{:04}", s + 1);
        let at_risk = rng.random_bool(0.4);
        let centre = if at_risk { spec.separation } else { -spec.separation };
        let v: Vec<f64> = risk_dir
            .iter()
            .map(|r| centre * r + unit.sample(&mut rng))
            .collect();

        let proj = dot(&v, &risk_dir);
        let flavour = dot(&v, &flavour_dir);
        let p_suffer = sigmoid(1.5 * proj);
        let p_favour = sigmoid(flavour);
        let class_p = [
            p_suffer * 0.6 * p_favour,
            p_suffer * 0.6 * (1.0 - p_favour),
            p_suffer * 0.4,
            1.0 - p_suffer,
        ];
        let mut votes = [0usize; 4];
        for _ in 0..spec.annotators {
            votes[draw(&mut rng, &class_p)] += 1;
        }
        let dist = votes.map(|c| c as f64 / spec.annotators as f64);
        let dist = Distribution4::new(dist).expect("vote fractions form a distribution");
        labels.push(LabelRecord::from_distribution(id.clone(), dist));

        let n = rng.random_range(spec.min_messages..=spec.max_messages);
        let mut date = base;
        let messages = (0..n)
            .map(|i| {
                date += chrono::Duration::minutes(rng.random_range(5..600));
                let len = rng.random_range(3..9);
                let text = (0..len)
                    .map(|_| WORDS[rng.random_range(0..WORDS.len())])
                    .collect::<Vec<_>>()
                    .join(" ");
                Message {
                    id_message: format!("{}{:03}", s + 1, i),
                    text,
                    date,
                }
            })
            .collect();
        histories.push(UserHistory::new(id, messages).expect("non-empty history"));
        vectors.push(v);
    }

    let mut centre = vec![0.0; d];
    for v in &vectors {
        centre.iter_mut().zip(v).for_each(|(c, x)| *c += x / vectors.len().max(1) as f64);
    }
    let mut embeddings = EmbeddingTable::new(EmbeddingHeader {
        encoder: "synthetic".into(),
        pooling: "none".into(),
        dimension: d,
        max_length: 0,
        created_at: "1970-01-01T00:00:00Z".into(),
    });
    for (h, v) in histories.iter().zip(&vectors) {
        let n = h.len();
        for r in 1..=n {
            let t = r as f64 / n as f64;
            let rv = if r == n {
                v.clone()
            } else {
                centre.iter().zip(v).map(|(c, x)| c + t * (x - c)).collect()
            };
            embeddings.insert(h.subject_id.clone(), Some(r), rv).expect("fresh key");
        }
        embeddings.insert(h.subject_id.clone(), None, v.clone()).expect("fresh key");
    }
    SynthData {
        histories,
        labels,
        embeddings,
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, unit: &Normal<f64>, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| unit.sample(rng)).collect();
    let norm = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn draw(rng: &mut ChaCha8Rng, p: &[f64; 4]) -> usize {
    let total: f64 = p.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in p.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    3
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_dataset;
    use crate::labels::check_consistency;

    #[test]
    fn deterministic_and_consistent() {
        let spec = SynthSpec::default();
        let a = generate(&spec);
        assert_eq!(a, generate(&spec));
        assert_ne!(a.labels, generate(&SynthSpec { seed: 8, ..spec }).labels);
        assert_eq!(a.histories.len(), 60);
        let report = validate_dataset(&a.histories, &a.labels);
        assert_eq!(report.matched, 60);
        for r in &a.labels {
            assert!(check_consistency(r).is_consistent());
            assert!(r.d_dist.is_vote_fraction());
        }
    }

    #[test]
    fn embeddings_cover_every_round() {
        let data = generate(&SynthSpec {
            n_subjects: 5,
            ..Default::default()
        });
        for h in &data.histories {
            let full = data.embeddings.get(&h.subject_id, None).unwrap();
            assert_eq!(data.embeddings.round(&h.subject_id, h.len()).unwrap(), full);
            assert!(data.embeddings.round(&h.subject_id, h.len() + 1).is_err());
        }
        let rounds: usize = data.histories.iter().map(UserHistory::len).sum();
        assert_eq!(data.embeddings.len(), rounds + 5);
    }

    #[test]
    fn both_outcomes_occur() {
        let data = generate(&SynthSpec::default());
        let positives = data.labels.iter().filter(|r| r.a_label == 1).count();
        assert!(positives > 5 && positives < 55, "{positives}");
    }
}
