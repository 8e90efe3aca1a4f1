//! Round-based message delivery and streaming evaluation.
//!
//! Round k carries every subject's k-th message (or marks the subject
//! absent once its history is exhausted). A [`StreamClient`] embeds each
//! subject's cumulative document after every round, scores it and latches
//! binary decisions into [`DecisionTrace`]s. The same client can run
//! in-process ([`run_streaming_eval`]) or against a server over a
//! newline-delimited JSON socket protocol ([`serve_session`],
//! [`wire_client`]).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{Message, UserHistory};
use crate::embeddings::EmbeddingTable;
use crate::error::StreamError;
use crate::metrics::{DecisionTrace, TraceEntry};
use crate::numerics::Matrix;
use crate::pipeline::DEFAULT_SEPARATOR;
use crate::regression::RiskModel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundItem {
    pub subject_id: String,
    /// `None` once the subject has no messages left.
    pub message: Option<Message>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub index: usize,
    pub items: Vec<RoundItem>,
}

/// One message per subject per round, in date order; as many rounds as the
/// longest history.
pub fn serve_rounds(histories: &[UserHistory]) -> Vec<Round> {
    let total = histories.iter().map(UserHistory::len).max().unwrap_or(0);
    (1..=total)
        .map(|index| Round {
            index,
            items: histories
                .iter()
                .map(|h| RoundItem {
                    subject_id: h.subject_id.clone(),
                    message: h.messages.get(index - 1).cloned(),
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionPolicy {
    pub threshold: f64,
    /// Keep a raised alarm for the rest of the stream.
    pub sticky: bool,
}

impl Default for DecisionPolicy {
    fn default() -> Self {
        DecisionPolicy {
            threshold: 0.5,
            sticky: true,
        }
    }
}

/// Maps a subject's cumulative document to an embedding.
pub trait EmbeddingProvider {
    /// `round` is the number of the subject's messages in `text`.
    fn embed(&mut self, subject_id: &str, round: usize, text: &str) -> Result<Vec<f64>, String>;
}

/// Looks vectors up in a precomputed per-round embedding file.
pub struct TableProvider<'a> {
    table: &'a EmbeddingTable,
}

impl<'a> TableProvider<'a> {
    pub fn new(table: &'a EmbeddingTable) -> Self {
        TableProvider { table }
    }
}

impl EmbeddingProvider for TableProvider<'_> {
    fn embed(&mut self, subject_id: &str, round: usize, _text: &str) -> Result<Vec<f64>, String> {
        self.table
            .round(subject_id, round)
            .map(<[f64]>::to_vec)
            .map_err(|e| e.to_string())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    subject_id: &'a str,
    round: usize,
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    subject_id: String,
    round: Option<usize>,
    vector: Vec<f64>,
}

/// Talks to an exporter process: one JSON request line
/// `{"subject_id", "round", "text"}` per document, answered by one
/// embedding-file body record.
pub struct PipeProvider<R, W> {
    reader: R,
    writer: W,
    child: Option<Child>,
}

impl<R: BufRead, W: Write> PipeProvider<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        PipeProvider {
            reader,
            writer,
            child: None,
        }
    }
}

impl PipeProvider<BufReader<ChildStdout>, ChildStdin> {
    /// Spawns `program args...` and speaks the protocol over its stdio.
    pub fn spawn(program: &str, args: &[String]) -> std::io::Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(PipeProvider {
            reader: BufReader::new(stdout),
            writer: stdin,
            child: Some(child),
        })
    }
}

impl<R, W> Drop for PipeProvider<R, W> {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl<R: BufRead, W: Write> EmbeddingProvider for PipeProvider<R, W> {
    fn embed(&mut self, subject_id: &str, round: usize, text: &str) -> Result<Vec<f64>, String> {
        let request = EmbedRequest {
            subject_id,
            round,
            text,
        };
        let mut line = serde_json::to_string(&request).map_err(|e| e.to_string())?;
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| format!("exporter write failed: {e}"))?;
        let mut reply = String::new();
        let n = self
            .reader
            .read_line(&mut reply)
            .map_err(|e| format!("exporter read failed: {e}"))?;
        if n == 0 {
            return Err("exporter closed its output".into());
        }
        let response: EmbedResponse =
            serde_json::from_str(&reply).map_err(|e| format!("bad exporter reply: {e}"))?;
        if response.subject_id != subject_id || response.round != Some(round) {
            return Err(format!(
                "exporter answered for {}/{:?}, expected {subject_id}/{round}",
                response.subject_id, response.round
            ));
        }
        Ok(response.vector)
    }
}

/// Anything that turns one embedding into a suffering probability.
pub trait RiskScorer {
    fn score(&self, x: &[f64]) -> Result<f64, String>;
}

impl RiskScorer for RiskModel {
    fn score(&self, x: &[f64]) -> Result<f64, String> {
        let row = Matrix::new(1, x.len(), x.to_vec()).map_err(|e| e.to_string())?;
        let scores = RiskModel::score(self, &row).map_err(|e| e.to_string())?;
        Ok(scores[0].b)
    }
}

impl<F: Fn(&[f64]) -> f64> RiskScorer for F {
    fn score(&self, x: &[f64]) -> Result<f64, String> {
        Ok(self(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub label: u8,
    pub prob: f64,
}

/// Client-side state of one streaming session.
pub struct StreamClient<'a> {
    scorer: &'a dyn RiskScorer,
    provider: &'a mut dyn EmbeddingProvider,
    policy: DecisionPolicy,
    separator: String,
    documents: BTreeMap<String, (usize, String)>,
    traces: BTreeMap<String, Vec<TraceEntry>>,
    rounds_seen: usize,
}

impl<'a> StreamClient<'a> {
    pub fn new(
        scorer: &'a dyn RiskScorer,
        provider: &'a mut dyn EmbeddingProvider,
        policy: DecisionPolicy,
    ) -> Self {
        StreamClient {
            scorer,
            provider,
            policy,
            separator: DEFAULT_SEPARATOR.to_string(),
            documents: BTreeMap::new(),
            traces: BTreeMap::new(),
            rounds_seen: 0,
        }
    }

    pub fn with_separator(mut self, separator: &str) -> Self {
        self.separator = separator.to_string();
        self
    }

    /// Consumes one round and returns a decision for every present subject.
    pub fn on_round(&mut self, round: &Round) -> Result<BTreeMap<String, PredictionEntry>, StreamError> {
        let abort = |subject_id: &str, message: String| StreamError::RoundAbort {
            round: round.index,
            subject_id: subject_id.to_string(),
            message,
        };
        let mut out = BTreeMap::new();
        for item in &round.items {
            let Some(message) = &item.message else {
                continue;
            };
            let (count, text) = self.documents.entry(item.subject_id.clone()).or_default();
            if *count > 0 {
                text.push_str(&self.separator);
            }
            text.push_str(&message.text);
            *count += 1;

            let vector = self
                .provider
                .embed(&item.subject_id, *count, text)
                .map_err(|e| abort(&item.subject_id, e))?;
            let prob = self
                .scorer
                .score(&vector)
                .map_err(|e| abort(&item.subject_id, e))?;
            if !prob.is_finite() {
                return Err(abort(&item.subject_id, format!("non-finite score {prob}")));
            }
            let prob = prob.clamp(0.0, 1.0);
            let entries = self.traces.entry(item.subject_id.clone()).or_default();
            let latched = self.policy.sticky && entries.last().is_some_and(|e| e.decision == 1);
            let label = u8::from(latched || prob >= self.policy.threshold);
            entries.push(TraceEntry {
                round: round.index,
                decision: label,
                prob,
            });
            out.insert(item.subject_id.clone(), PredictionEntry { label, prob });
        }
        self.rounds_seen = self.rounds_seen.max(round.index);
        Ok(out)
    }

    pub fn into_traces(self) -> Vec<DecisionTrace> {
        let total_rounds = self.rounds_seen;
        self.traces
            .into_iter()
            .map(|(subject_id, entries)| DecisionTrace {
                subject_id,
                entries,
                total_rounds,
            })
            .collect()
    }
}

/// Runs the whole stream in-process.
pub fn run_streaming_eval(
    scorer: &dyn RiskScorer,
    provider: &mut dyn EmbeddingProvider,
    histories: &[UserHistory],
    policy: DecisionPolicy,
) -> Result<Vec<DecisionTrace>, StreamError> {
    let mut client = StreamClient::new(scorer, provider, policy);
    for round in serve_rounds(histories) {
        client.on_round(&round)?;
    }
    Ok(client.into_traces())
}

/// Traces as JSON Lines, one subject per line, sorted by subject id.
pub fn traces_to_jsonl(traces: &[DecisionTrace]) -> String {
    let mut sorted: Vec<&DecisionTrace> = traces.iter().collect();
    sorted.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let mut out = String::new();
    for t in sorted {
        out.push_str(&serde_json::to_string(t).expect("traces serialize"));
        out.push('\n');
    }
    out
}

pub fn traces_from_jsonl(raw: &str) -> Result<Vec<DecisionTrace>, serde_json::Error> {
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Frames of the wire protocol, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Frame {
    Round {
        index: usize,
        items: Vec<RoundItem>,
    },
    Predict {
        index: usize,
        predictions: BTreeMap<String, PredictionEntry>,
    },
    Done,
    Error {
        message: String,
        line: String,
    },
}

fn write_frame(stream: &mut impl Write, frame: &Frame) -> Result<(), StreamError> {
    let mut line = serde_json::to_string(frame).expect("frames serialize");
    line.push('\n');
    stream.write_all(line.as_bytes())?;
    stream.flush()?;
    Ok(())
}

fn read_line(reader: &mut impl BufRead) -> Result<String, StreamError> {
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Err(StreamError::Closed);
    }
    Ok(line.trim_end_matches(['\r', '\n']).to_string())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionOptions {
    /// Read timeout while waiting for the peer; `None` blocks forever.
    pub timeout: Option<Duration>,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            timeout: Some(Duration::from_secs(30)),
        }
    }
}

/// Serves the rounds of `histories` to the first client that connects and
/// returns the traces logged from its predictions.
///
/// Any malformed or inconsistent client frame is answered with an `error`
/// frame echoing the offending line, and the session aborts.
pub fn serve_session(
    listener: &TcpListener,
    histories: &[UserHistory],
    options: SessionOptions,
) -> Result<Vec<DecisionTrace>, StreamError> {
    let (stream, _) = listener.accept()?;
    stream.set_read_timeout(options.timeout)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);

    let rounds = serve_rounds(histories);
    let mut log: BTreeMap<String, Vec<TraceEntry>> = BTreeMap::new();
    for round in &rounds {
        write_frame(
            &mut writer,
            &Frame::Round {
                index: round.index,
                items: round.items.clone(),
            },
        )?;
        let line = read_line(&mut reader)?;
        let result = serde_json::from_str::<Frame>(&line)
            .map_err(|e| format!("malformed frame: {e}"))
            .and_then(|frame| check_predictions(round, frame));
        let predictions = match result {
            Ok(p) => p,
            Err(message) => {
                let _ = write_frame(
                    &mut writer,
                    &Frame::Error {
                        message: message.clone(),
                        line: line.clone(),
                    },
                );
                return Err(StreamError::Protocol { message, line });
            }
        };
        for (subject_id, p) in predictions {
            log.entry(subject_id).or_default().push(TraceEntry {
                round: round.index,
                decision: p.label,
                prob: p.prob,
            });
        }
    }
    write_frame(&mut writer, &Frame::Done)?;
    let total_rounds = rounds.len();
    Ok(log
        .into_iter()
        .map(|(subject_id, entries)| DecisionTrace {
            subject_id,
            entries,
            total_rounds,
        })
        .collect())
}

fn check_predictions(round: &Round, frame: Frame) -> Result<BTreeMap<String, PredictionEntry>, String> {
    let Frame::Predict { index, predictions } = frame else {
        return Err("expected a predict frame".into());
    };
    if index != round.index {
        return Err(format!("predict for round {index} while round {} is open", round.index));
    }
    let present: BTreeSet<&str> = round
        .items
        .iter()
        .filter(|i| i.message.is_some())
        .map(|i| i.subject_id.as_str())
        .collect();
    let got: BTreeSet<&str> = predictions.keys().map(String::as_str).collect();
    if present != got {
        return Err("predictions must cover exactly the subjects present this round".into());
    }
    for (id, p) in &predictions {
        if p.label > 1 || !(0.0..=1.0).contains(&p.prob) {
            return Err(format!("invalid prediction for {id}"));
        }
    }
    Ok(predictions)
}

/// Connects to a round server and drives `client` until `done`.
pub fn wire_client(
    addr: impl ToSocketAddrs,
    mut client: StreamClient<'_>,
    options: SessionOptions,
) -> Result<Vec<DecisionTrace>, StreamError> {
    let stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(options.timeout)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    loop {
        let line = read_line(&mut reader)?;
        let frame: Frame = serde_json::from_str(&line).map_err(|e| StreamError::Protocol {
            message: format!("malformed frame: {e}"),
            line: line.clone(),
        })?;
        match frame {
            Frame::Round { index, items } => {
                let round = Round { index, items };
                let predictions = client.on_round(&round)?;
                write_frame(&mut writer, &Frame::Predict { index, predictions })?;
            }
            Frame::Done => return Ok(client.into_traces()),
            Frame::Error { message, .. } => return Err(StreamError::Remote(message)),
            Frame::Predict { .. } => {
                return Err(StreamError::Protocol {
                    message: "unexpected predict frame from server".into(),
                    line,
                })
            }
        }
    }
}
