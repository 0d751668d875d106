//! JSON-lines transcripts and offline replay.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::entcf::{PublicKey, Trapdoor};

use super::messages::{decode_bits, decode_pairs, decode_values, Flag, Message, RoundType};
use super::verifier::{hadamard_flag, prep_outputs, preimage_flag, BlockTally};
use super::ProtocolError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "v2p")]
    VerifierToProver,
    #[serde(rename = "p2v")]
    ProverToVerifier,
    #[serde(rename = "local")]
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundKind {
    Test,
    Prep,
}

/// Verifier-side data that never crosses the wire.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LocalRecord {
    Plan { n: usize, m: usize, delta: f64, width: u32, s: usize, r: usize, strict: bool },
    Trapdoors { kind: RoundKind, theta: String, trapdoors: Vec<Trapdoor> },
    Summary {
        accepted: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        abort_block: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        v: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Body {
    Wire(Message),
    Local(LocalRecord),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub round: u32,
    pub dir: Direction,
    pub msg: Body,
}

/// Ordered log of one protocol session. `seq` is a logical timestamp.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTranscript {
    pub entries: Vec<TranscriptEntry>,
}

impl ProtocolTranscript {
    pub fn push(&mut self, round: u32, dir: Direction, msg: Body) {
        let seq = self.entries.len() as u64;
        self.entries.push(TranscriptEntry { seq, round, dir, msg });
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("transcript entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ProtocolError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: TranscriptEntry = serde_json::from_str(line)
                .map_err(|err| ProtocolError::Parse(format!("line {}: {err}", i + 1)))?;
            entries.push(e);
        }
        Ok(ProtocolTranscript { entries })
    }

    pub fn write(&self, path: &Path) -> Result<(), ProtocolError> {
        fs::write(path, self.to_jsonl()).map_err(|e| ProtocolError::Io(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, ProtocolError> {
        let text = fs::read_to_string(path).map_err(|e| ProtocolError::Io(e.to_string()))?;
        Self::from_jsonl(&text)
    }

    pub fn messages(&self) -> impl Iterator<Item = (&TranscriptEntry, &Message)> {
        self.entries.iter().filter_map(|e| match &e.msg {
            Body::Wire(m) => Some((e, m)),
            Body::Local(_) => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mismatch {
    pub round: u32,
    pub field: String,
    pub recorded: String,
    pub recomputed: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplayReport {
    pub rounds_checked: usize,
    pub flags: Vec<Flag>,
    pub accepted_recorded: bool,
    pub accepted_recomputed: bool,
    pub mismatches: Vec<Mismatch>,
}

impl ReplayReport {
    pub fn is_consistent(&self) -> bool {
        self.mismatches.is_empty()
    }
}

#[derive(Default)]
struct RoundData {
    kind: Option<RoundKind>,
    theta: Vec<u8>,
    trapdoors: Vec<Trapdoor>,
    keys: Vec<PublicKey>,
    images: Option<Vec<String>>,
    round_type: Option<RoundType>,
    pairs: Option<Vec<super::messages::PreimagePair>>,
    d: Option<Vec<String>>,
    q: Option<u8>,
    v: Option<Vec<u8>>,
}

/// Recomputes every flag and the final decision from a transcript.
///
/// Structural damage (missing plan, missing final message, undecodable
/// trapdoor data) is an error; disagreement between recorded and recomputed
/// values is reported as a [`Mismatch`].
pub fn replay(t: &ProtocolTranscript) -> Result<ReplayReport, ProtocolError> {
    let mut plan = None;
    let mut rounds: std::collections::BTreeMap<u32, RoundData> = Default::default();
    let mut verdicts: Vec<(u32, Flag)> = Vec::new();
    let mut final_msg = None;
    let mut summary = None;

    for e in &t.entries {
        let rd = rounds.entry(e.round).or_default();
        match &e.msg {
            Body::Local(LocalRecord::Plan { n, m, delta, width, s, r, strict }) => {
                plan = Some((*n, *m, *delta, *width, *s, *r, *strict));
            }
            Body::Local(LocalRecord::Trapdoors { kind, theta, trapdoors }) => {
                let n = trapdoors.len();
                let th = crate::bits::BitString::from_hex(theta, n)
                    .map_err(|err| ProtocolError::Parse(format!("round {}: theta: {err}", e.round)))?;
                rd.kind = Some(*kind);
                rd.theta = th.bits().to_vec();
                rd.trapdoors = trapdoors.clone();
            }
            Body::Local(s @ LocalRecord::Summary { .. }) => summary = Some(s.clone()),
            Body::Wire(Message::Keys { keys, .. }) => rd.keys = keys.clone(),
            Body::Wire(Message::Images { y }) => rd.images = Some(y.clone()),
            Body::Wire(Message::RoundType { round_type }) => rd.round_type = Some(*round_type),
            Body::Wire(Message::Preimages { pairs }) => rd.pairs = Some(pairs.clone()),
            Body::Wire(Message::Equations { d }) => rd.d = Some(d.clone()),
            Body::Wire(Message::Question { q }) => rd.q = Some(*q),
            Body::Wire(Message::Answers { v }) => rd.v = Some(v.clone()),
            Body::Wire(Message::Verdict { flag }) => verdicts.push((e.round, *flag)),
            Body::Wire(Message::Final { accepted, .. }) => final_msg = Some(*accepted),
        }
    }

    let (n, m, delta, width, s, r, strict) = plan.ok_or_else(|| ProtocolError::Parse("transcript has no PLAN record".into()))?;
    let accepted_recorded = final_msg.ok_or_else(|| ProtocolError::Parse("transcript has no FINAL message".into()))?;

    let mut mismatches = Vec::new();
    let mut flags = Vec::new();
    let mut tally = BlockTally::new(m, delta, s, r, strict);
    let mut aborted = false;

    for (round, recorded) in &verdicts {
        let rd = &rounds[round];
        if rd.kind != Some(RoundKind::Test) || rd.trapdoors.len() != n {
            return Err(ProtocolError::Parse(format!("round {round}: missing trapdoor record")));
        }
        let public: Vec<PublicKey> = rd.trapdoors.iter().map(|t| t.public_key()).collect();
        if public != rd.keys {
            mismatches.push(Mismatch {
                round: *round,
                field: "keys".into(),
                recorded: "KEYS message".into(),
                recomputed: "public part of trapdoors".into(),
            });
        }
        let flag = recompute_flag(rd, n, width).unwrap_or(None);
        let flag_s = flag.map(|f| format!("{f:?}")).unwrap_or_else(|| "malformed".into());
        if flag != Some(*recorded) {
            mismatches.push(Mismatch { round: *round, field: "flag".into(), recorded: format!("{recorded:?}"), recomputed: flag_s });
        }
        if let (Some(RoundType::Hadamard), Some(q)) = (rd.round_type, rd.q) {
            if rd.theta.first().copied() != Some(q) {
                mismatches.push(Mismatch {
                    round: *round,
                    field: "question".into(),
                    recorded: q.to_string(),
                    recomputed: format!("{:?}", rd.theta.first()),
                });
            }
        }
        let f = flag.unwrap_or(*recorded);
        flags.push(f);
        if !aborted && tally.record(f).is_some() {
            aborted = true;
        }
    }

    let mut accepted_recomputed = !aborted && tally.complete();
    let mut v_recomputed = None;
    if accepted_recomputed {
        let prep = rounds.values().find(|rd| rd.kind == Some(RoundKind::Prep));
        match prep {
            Some(rd) => {
                let images = rd.images.as_deref().unwrap_or(&[]);
                let d = rd.d.as_deref().unwrap_or(&[]);
                let out = decode_values(images, n, width + 1, "images")
                    .and_then(|ys| Ok((ys, decode_values(d, n, width, "equations")?)))
                    .and_then(|(ys, ds)| prep_outputs(&rd.trapdoors, &rd.theta, &ys, &ds));
                match out {
                    Ok(v) => v_recomputed = Some(crate::bits::BitString::from_bits(&v).to_hex()),
                    Err(_) => accepted_recomputed = false,
                }
            }
            None => accepted_recomputed = false,
        }
    }

    if accepted_recomputed != accepted_recorded {
        mismatches.push(Mismatch {
            round: 0,
            field: "accepted".into(),
            recorded: accepted_recorded.to_string(),
            recomputed: accepted_recomputed.to_string(),
        });
    }
    if let Some(LocalRecord::Summary { v: Some(v), .. }) = &summary {
        if v_recomputed.as_deref() != Some(v.as_str()) {
            mismatches.push(Mismatch {
                round: 0,
                field: "v".into(),
                recorded: v.clone(),
                recomputed: v_recomputed.unwrap_or_else(|| "none".into()),
            });
        }
    }

    Ok(ReplayReport { rounds_checked: verdicts.len(), flags, accepted_recorded, accepted_recomputed, mismatches })
}

fn recompute_flag(rd: &RoundData, n: usize, width: u32) -> Result<Option<Flag>, ProtocolError> {
    let ys = decode_values(rd.images.as_deref().unwrap_or(&[]), n, width + 1, "images")?;
    Ok(match rd.round_type {
        Some(RoundType::Preimage) => {
            let pairs = decode_pairs(rd.pairs.as_deref().unwrap_or(&[]), n, width)?;
            Some(preimage_flag(&rd.keys, &ys, &pairs))
        }
        Some(RoundType::Hadamard) => {
            let ds = decode_values(rd.d.as_deref().unwrap_or(&[]), n, width, "equations")?;
            let v = decode_bits(rd.v.as_deref().unwrap_or(&[]), n)?;
            let theta = *rd.theta.first().unwrap_or(&0);
            Some(hadamard_flag(&rd.trapdoors, theta, &ys, &ds, &v))
        }
        None => None,
    })
}
