//! Wire messages. Each message travels as one frame whose tag identifies the
//! variant.

use num_bigint::BigUint;

use super::engine::Disclosure;
use crate::blindsig::PublicKey;
use crate::bloom::{BloomFilter, CountingBloomFilter};
use crate::entropy::MetricId;
use crate::kg::GraphStatistics;
use crate::ot::{OtRequest, OtResponse, OtSetup};
use crate::role::Role;
use crate::wire::{WireError, WireReader, WireWriter};

pub const PROTOCOL_VERSION: u32 = 1;

pub mod tag {
    pub const HELLO: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const STATS: u8 = 3;
    pub const BLIND_BATCH: u8 = 4;
    pub const SIGNED_BATCH: u8 = 5;
    pub const PSI_FILTER: u8 = 6;
    pub const COUNTING_FILTER: u8 = 7;
    pub const OT_SETUP: u8 = 8;
    pub const OT_REQUEST: u8 = 9;
    pub const OT_RESPONSE: u8 = 10;
    pub const CONTINUE: u8 = 11;
    pub const ABORT: u8 = 12;
    pub const DISCLOSURE: u8 = 13;
}

pub fn tag_name(t: u8) -> &'static str {
    match t {
        tag::HELLO => "HELLO",
        tag::CONFIG => "CONFIG",
        tag::STATS => "STATS",
        tag::BLIND_BATCH => "BLIND_BATCH",
        tag::SIGNED_BATCH => "SIGNED_BATCH",
        tag::PSI_FILTER => "PSI_FILTER",
        tag::COUNTING_FILTER => "COUNTING_FILTER",
        tag::OT_SETUP => "OT_SETUP",
        tag::OT_REQUEST => "OT_REQUEST",
        tag::OT_RESPONSE => "OT_RESPONSE",
        tag::CONTINUE => "CONTINUE",
        tag::ABORT => "ABORT",
        tag::DISCLOSURE => "DISCLOSURE",
        _ => "UNKNOWN",
    }
}

/// What a batch of blind signatures is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Intersection,
    Metric(MetricId),
}

impl Purpose {
    pub fn code(self) -> u8 {
        match self {
            Purpose::Intersection => 0,
            Purpose::Metric(m) => m.wire_id(),
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Purpose::Intersection),
            c => MetricId::from_wire_id(c).map(Purpose::Metric),
        }
    }

    pub fn step(self) -> u8 {
        match self {
            Purpose::Intersection => 2,
            Purpose::Metric(_) => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { version: u32, role: Role },
    /// Buyer proposal (`key` absent) or Seller acceptance carrying the
    /// signing key.
    Config { text: String, key: Option<PublicKey> },
    Stats(GraphStatistics),
    BlindBatch { purpose: Purpose, values: Vec<BigUint> },
    SignedBatch { purpose: Purpose, values: Vec<BigUint> },
    PsiFilter(BloomFilter),
    CountingFilter { metric: MetricId, filter: CountingBloomFilter },
    OtSetup(OtSetup),
    OtRequest(OtRequest),
    OtResponse(OtResponse),
    /// At step 2 the Buyer may narrow the agreed metrics; `metrics` is
    /// empty otherwise.
    Continue { step: u8, metrics: Vec<MetricId> },
    Abort { step: u8, reason: String },
    Disclosure(Box<Disclosure>),
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("malformed {tag} payload: {reason}")]
    Malformed { tag: &'static str, reason: String },
}

fn encode_batch(purpose: Purpose, values: &[BigUint]) -> Vec<u8> {
    let mut w = WireWriter::new();
    w.u8(purpose.code()).u32(values.len() as u32);
    for v in values {
        w.biguint(v);
    }
    w.finish()
}

fn decode_batch(payload: &[u8]) -> Result<(Purpose, Vec<BigUint>), WireError> {
    let mut r = WireReader::new(payload);
    let code = r.u8()?;
    let purpose = Purpose::from_code(code).ok_or_else(|| WireError::Invalid(format!("purpose {code}")))?;
    let n = r.count(4)?;
    let values = (0..n).map(|_| r.biguint()).collect::<Result<Vec<_>, _>>()?;
    r.finish()?;
    Ok((purpose, values))
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Hello { .. } => tag::HELLO,
            Message::Config { .. } => tag::CONFIG,
            Message::Stats(_) => tag::STATS,
            Message::BlindBatch { .. } => tag::BLIND_BATCH,
            Message::SignedBatch { .. } => tag::SIGNED_BATCH,
            Message::PsiFilter(_) => tag::PSI_FILTER,
            Message::CountingFilter { .. } => tag::COUNTING_FILTER,
            Message::OtSetup(_) => tag::OT_SETUP,
            Message::OtRequest(_) => tag::OT_REQUEST,
            Message::OtResponse(_) => tag::OT_RESPONSE,
            Message::Continue { .. } => tag::CONTINUE,
            Message::Abort { .. } => tag::ABORT,
            Message::Disclosure(_) => tag::DISCLOSURE,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            Message::Hello { version, role } => {
                let mut w = WireWriter::new();
                w.u32(*version).u8(role.code());
                w.finish()
            }
            Message::Config { text, key } => {
                let mut w = WireWriter::new();
                w.str(text);
                match key {
                    Some(k) => {
                        w.u8(1);
                        k.encode_into(&mut w);
                    }
                    None => {
                        w.u8(0);
                    }
                }
                w.finish()
            }
            Message::Stats(s) => s.encode(),
            Message::BlindBatch { purpose, values } | Message::SignedBatch { purpose, values } => {
                encode_batch(*purpose, values)
            }
            Message::PsiFilter(f) => f.encode(),
            Message::CountingFilter { metric, filter } => {
                let body = filter.encode();
                let mut out = Vec::with_capacity(body.len() + 1);
                out.push(metric.wire_id());
                out.extend_from_slice(&body);
                out
            }
            Message::OtSetup(s) => s.encode(),
            Message::OtRequest(r) => r.encode(),
            Message::OtResponse(r) => r.encode(),
            Message::Continue { step, metrics } => {
                let mut out = vec![*step];
                out.extend(metrics.iter().map(|m| m.wire_id()));
                out
            }
            Message::Abort { step, reason } => {
                let mut w = WireWriter::new();
                w.u8(*step).str(reason);
                w.finish()
            }
            Message::Disclosure(d) => d.encode(),
        }
    }

    pub fn decode(t: u8, payload: &[u8]) -> Result<Self, DecodeError> {
        let name = tag_name(t);
        let bad = |reason: String| DecodeError::Malformed { tag: name, reason };
        let wire = |e: WireError| bad(e.to_string());
        Ok(match t {
            tag::HELLO => {
                let mut r = WireReader::new(payload);
                let version = r.u32().map_err(wire)?;
                let code = r.u8().map_err(wire)?;
                r.finish().map_err(wire)?;
                let role = Role::from_code(code).ok_or_else(|| bad(format!("role {code}")))?;
                Message::Hello { version, role }
            }
            tag::CONFIG => {
                let mut r = WireReader::new(payload);
                let text = r.str().map_err(wire)?.to_string();
                let key = match r.u8().map_err(wire)? {
                    0 => None,
                    1 => Some(PublicKey::decode_from(&mut r).map_err(|e| bad(e.to_string()))?),
                    other => return Err(bad(format!("key flag {other}"))),
                };
                r.finish().map_err(wire)?;
                Message::Config { text, key }
            }
            tag::STATS => Message::Stats(GraphStatistics::decode(payload).map_err(wire)?),
            tag::BLIND_BATCH => {
                let (purpose, values) = decode_batch(payload).map_err(wire)?;
                Message::BlindBatch { purpose, values }
            }
            tag::SIGNED_BATCH => {
                let (purpose, values) = decode_batch(payload).map_err(wire)?;
                Message::SignedBatch { purpose, values }
            }
            tag::PSI_FILTER => Message::PsiFilter(BloomFilter::decode(payload).map_err(|e| bad(e.to_string()))?),
            tag::COUNTING_FILTER => {
                let (&id, body) = payload.split_first().ok_or_else(|| bad("empty".into()))?;
                let metric = MetricId::from_wire_id(id).ok_or_else(|| bad(format!("metric {id}")))?;
                let filter = CountingBloomFilter::decode(body).map_err(|e| bad(e.to_string()))?;
                Message::CountingFilter { metric, filter }
            }
            tag::OT_SETUP => Message::OtSetup(OtSetup::decode(payload).map_err(|e| bad(e.to_string()))?),
            tag::OT_REQUEST => Message::OtRequest(OtRequest::decode(payload).map_err(|e| bad(e.to_string()))?),
            tag::OT_RESPONSE => Message::OtResponse(OtResponse::decode(payload).map_err(|e| bad(e.to_string()))?),
            tag::CONTINUE => {
                let (&step, ids) = payload.split_first().ok_or_else(|| bad("empty".into()))?;
                let metrics = ids
                    .iter()
                    .map(|id| MetricId::from_wire_id(*id).ok_or_else(|| bad(format!("metric {id}"))))
                    .collect::<Result<_, _>>()?;
                Message::Continue { step, metrics }
            }
            tag::ABORT => {
                let mut r = WireReader::new(payload);
                let step = r.u8().map_err(wire)?;
                let reason = r.str().map_err(wire)?.to_string();
                r.finish().map_err(wire)?;
                Message::Abort { step, reason }
            }
            tag::DISCLOSURE => Message::Disclosure(Box::new(Disclosure::decode(payload).map_err(|e| bad(e.to_string()))?)),
            other => return Err(DecodeError::UnknownTag(other)),
        })
    }
}

/// Protocol step a frame belongs to, for traffic accounting.
pub fn step_of(t: u8, payload: &[u8]) -> u8 {
    match t {
        tag::HELLO | tag::CONFIG | tag::STATS => 1,
        tag::BLIND_BATCH | tag::SIGNED_BATCH => match payload.first().copied().and_then(Purpose::from_code) {
            Some(p) => p.step(),
            None => 2,
        },
        tag::PSI_FILTER => 2,
        tag::COUNTING_FILTER => 3,
        tag::OT_SETUP | tag::OT_REQUEST | tag::OT_RESPONSE => 4,
        tag::CONTINUE | tag::ABORT => payload.first().copied().unwrap_or(0),
        tag::DISCLOSURE => 5,
        _ => 0,
    }
}
