//! Wire messages exchanged between verifier and prover.
//!
//! Multi-bit values travel as lowercase hex, most significant bit first.
//! Single bits travel as the integers 0 and 1.

use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::entcf::PublicKey;

use super::ProtocolError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundType {
    Preimage,
    Hadamard,
}

/// Outcome of a single test round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Flag {
    #[serde(rename = "ok")]
    Ok,
    #[serde(rename = "fail_Pre")]
    FailPre,
    #[serde(rename = "fail_Had")]
    FailHad,
}

impl Flag {
    pub fn is_ok(self) -> bool {
        self == Flag::Ok
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreimagePair {
    pub b: u8,
    pub x: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Message {
    Keys { session: String, round: u32, keys: Vec<PublicKey> },
    Images { y: Vec<String> },
    RoundType { round_type: RoundType },
    Preimages { pairs: Vec<PreimagePair> },
    Equations { d: Vec<String> },
    Question { q: u8 },
    Answers { v: Vec<u8> },
    Verdict { flag: Flag },
    Final {
        accepted: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<String>,
        note: String,
    },
}

impl Message {
    /// Whether the prover must answer this message.
    pub fn expects_reply(&self) -> bool {
        matches!(self, Message::Keys { .. } | Message::RoundType { .. } | Message::Question { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::Keys { .. } => "KEYS",
            Message::Images { .. } => "IMAGES",
            Message::RoundType { .. } => "ROUND_TYPE",
            Message::Preimages { .. } => "PREIMAGES",
            Message::Equations { .. } => "EQUATIONS",
            Message::Question { .. } => "QUESTION",
            Message::Answers { .. } => "ANSWERS",
            Message::Verdict { .. } => "VERDICT",
            Message::Final { .. } => "FINAL",
        }
    }
}

pub(crate) fn encode_value(value: u64, bits: u32) -> String {
    BitString::from_u64(value, bits as usize).to_hex()
}

pub(crate) fn decode_value(s: &str, bits: u32, what: &str) -> Result<u64, ProtocolError> {
    BitString::from_hex(s, bits as usize)
        .map(|b| b.to_u64())
        .map_err(|e| ProtocolError::Malformed(format!("{what}: {e}")))
}

pub(crate) fn decode_values(values: &[String], n: usize, bits: u32, what: &str) -> Result<Vec<u64>, ProtocolError> {
    if values.len() != n {
        return Err(ProtocolError::Malformed(format!("{what}: expected {n} entries, got {}", values.len())));
    }
    values.iter().map(|s| decode_value(s, bits, what)).collect()
}

pub(crate) fn decode_pairs(pairs: &[PreimagePair], n: usize, width: u32) -> Result<Vec<(u8, u64)>, ProtocolError> {
    if pairs.len() != n {
        return Err(ProtocolError::Malformed(format!("preimages: expected {n} entries, got {}", pairs.len())));
    }
    pairs
        .iter()
        .map(|p| {
            if p.b > 1 {
                return Err(ProtocolError::Malformed(format!("preimages: bit {} is not 0/1", p.b)));
            }
            Ok((p.b, decode_value(&p.x, width, "preimages")?))
        })
        .collect()
}

pub(crate) fn decode_bits(v: &[u8], n: usize) -> Result<Vec<u8>, ProtocolError> {
    if v.len() != n {
        return Err(ProtocolError::Malformed(format!("answers: expected {n} entries, got {}", v.len())));
    }
    if let Some(b) = v.iter().find(|&&b| b > 1) {
        return Err(ProtocolError::Malformed(format!("answers: bit {b} is not 0/1")));
    }
    Ok(v.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_names() {
        let m = Message::RoundType { round_type: RoundType::Hadamard };
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"{"type":"ROUND_TYPE","round_type":"hadamard"}"#);
        let v = Message::Verdict { flag: Flag::FailHad };
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"{"type":"VERDICT","flag":"fail_Had"}"#);
        let f = Message::Final { accepted: true, theta: None, note: "ok".into() };
        let s = serde_json::to_string(&f).unwrap();
        assert!(!s.contains("theta"));
        assert_eq!(serde_json::from_str::<Message>(&s).unwrap(), f);
    }

    #[test]
    fn strict_decoding() {
        assert_eq!(decode_value("1f", 5, "y").unwrap(), 31);
        assert!(decode_value("3f", 5, "y").is_err());
        assert!(decode_values(&["1".into()], 2, 4, "d").is_err());
        assert!(decode_bits(&[0, 2], 2).is_err());
        assert!(decode_pairs(&[PreimagePair { b: 2, x: "0".into() }], 1, 4).is_err());
    }
}
