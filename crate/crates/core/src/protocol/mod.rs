//! The two offload protocols and the device attachment stub.
//!
//! * rsf-gs: anonymous authentication. The responder's SA produces a group
//!   signature over `E_j = E_K(Nonce_i)`, the initiator's SA verifies it.
//! * rsf-abe: attribute-based access control. The sender's SA wraps
//!   `E_i = E_K(data || ack)` under ABE, the receiver's SA unwraps it if its
//!   key policy is satisfied.
//!
//! Principals are sans-IO state machines: each one consumes a delivered
//! [`ProtocolMessage`] and answers with a [`Reaction`]. The harness owns the
//! clock, the fabric and fault injection.

use std::collections::BTreeSet;
use std::fmt;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::perf_model::{
    predict_sf_time, OpCountFormula, PerfError, PrimitiveTimings, SfPhase, TimingTable,
};

mod agent;
mod attach;
mod device;

pub use crate::harness::{run_rsf_abe, run_rsf_gs};
pub use agent::SecurityAgent;
pub use attach::{attach, attach_with_secret, AaaStub, AttachError, Attachment, ChannelKey};
pub use device::{compute_e_j, Behavior, Device, RunSecrets};

pub type PrincipalId = u64;

/// Length of the initiator's challenge `Nonce_i`.
pub const NONCE_I_BYTES: usize = 20;
/// Length of the rsf-abe acknowledgement token appended to the data.
pub const ACK_BYTES: usize = 16;
pub const MAC_BYTES: usize = 32;

const HEADER_BYTES: usize = 1 + 8 + 8 + 8 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Device,
    SecurityAgent,
    KeyAuthority,
    AaaStub,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    RsfGs,
    RsfAbe,
}

impl ProtocolKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolKind::RsfGs => "rsf-gs",
            ProtocolKind::RsfAbe => "rsf-abe",
        }
    }

    /// Message kinds in protocol order.
    pub fn sequence(&self) -> &'static [MessageKind] {
        use MessageKind::*;
        match self {
            ProtocolKind::RsfGs => &[AuthReq, SignReq, SignResp, AuthResp, VerifyReq, VerifyResp],
            ProtocolKind::RsfAbe => &[
                AbacInit,
                AbacResp,
                EncReq,
                EncResp,
                DataTransfer,
                DecReq,
                DecResp,
                Ack,
            ],
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    AuthReq,
    SignReq,
    SignResp,
    AuthResp,
    VerifyReq,
    VerifyResp,
    AbacInit,
    /// The responder's half of the rsf-abe key exchange.
    AbacResp,
    EncReq,
    EncResp,
    DataTransfer,
    DecReq,
    DecResp,
    Ack,
}

impl MessageKind {
    pub const ALL: [MessageKind; 14] = [
        MessageKind::AuthReq,
        MessageKind::SignReq,
        MessageKind::SignResp,
        MessageKind::AuthResp,
        MessageKind::VerifyReq,
        MessageKind::VerifyResp,
        MessageKind::AbacInit,
        MessageKind::AbacResp,
        MessageKind::EncReq,
        MessageKind::EncResp,
        MessageKind::DataTransfer,
        MessageKind::DecReq,
        MessageKind::DecResp,
        MessageKind::Ack,
    ];

    pub fn code(&self) -> u8 {
        use MessageKind::*;
        match self {
            AuthReq => 1,
            SignReq => 2,
            SignResp => 3,
            AuthResp => 4,
            VerifyReq => 5,
            VerifyResp => 6,
            AbacInit => 16,
            AbacResp => 17,
            EncReq => 18,
            EncResp => 19,
            DataTransfer => 20,
            DecReq => 21,
            DecResp => 22,
            Ack => 23,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn name(&self) -> &'static str {
        use MessageKind::*;
        match self {
            AuthReq => "auth_req",
            SignReq => "sign_req",
            SignResp => "sign_resp",
            AuthResp => "auth_resp",
            VerifyReq => "verify_req",
            VerifyResp => "verify_resp",
            AbacInit => "abac_init",
            AbacResp => "abac_resp",
            EncReq => "enc_req",
            EncResp => "enc_resp",
            DataTransfer => "data_transfer",
            DecReq => "dec_req",
            DecResp => "dec_resp",
            Ack => "ack",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn protocol(&self) -> ProtocolKind {
        if self.code() < 16 {
            ProtocolKind::RsfGs
        } else {
            ProtocolKind::RsfAbe
        }
    }

    /// The protocol step in which this message is sent.
    pub fn step(&self) -> u8 {
        use MessageKind::*;
        match self {
            AuthReq => 1,
            SignReq => 2,
            SignResp => 3,
            AuthResp => 4,
            VerifyReq => 5,
            VerifyResp => 6,
            AbacInit | AbacResp => 1,
            EncReq => 2,
            EncResp => 3,
            DataTransfer => 4,
            DecReq => 5,
            DecResp => 6,
            Ack => 7,
        }
    }

    /// The step in which the receiver acts on this message. Failures detected
    /// while handling a message carry this label.
    pub fn processing_step(&self) -> u8 {
        use MessageKind::*;
        match self {
            AbacInit => 1,
            VerifyResp => 6,
            Ack => 7,
            k => k.step() + 1,
        }
    }

    /// Payload field names, in wire order.
    pub fn fields(&self) -> &'static [&'static str] {
        use MessageKind::*;
        match self {
            AuthReq => &["dh_x", "nonce"],
            SignReq => &["e_j", "mac"],
            SignResp => &["sigma", "mac"],
            AuthResp => &["dh_y", "e_prime_j"],
            VerifyReq => &["e_j", "sigma", "mac"],
            VerifyResp => &["verdict", "mac"],
            AbacInit => &["dh_x"],
            AbacResp => &["dh_y"],
            EncReq => &["e_i", "descriptor", "mac"],
            EncResp => &["status", "e_prime_i", "mac"],
            DataTransfer => &["e_double_prime_i"],
            DecReq => &["e_prime_i", "mac"],
            DecResp => &["status", "e_i", "mac"],
            Ack => &["ack"],
        }
    }

    /// Fields whose value is one of a few public constants.
    pub fn is_constant_field(&self, field: &str) -> bool {
        matches!(field, "verdict" | "status" | "descriptor")
    }

    pub fn field_index(&self, field: &str) -> Option<usize> {
        self.fields().iter().position(|f| *f == field)
    }

    /// Whether the message is sent over a device-SA channel and carries a MAC.
    pub fn is_sa_channel(&self) -> bool {
        self.fields().last() == Some(&"mac")
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("message truncated")]
    Truncated,
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("{kind} expects {expected} fields, got {got}")]
    FieldCount {
        kind: MessageKind,
        expected: usize,
        got: usize,
    },
    #[error("payload length mismatch")]
    Length,
}

/// A protocol message.
///
/// Wire layout: `kind u8 | session u64 | sender u64 | receiver u64 |
/// payload_len u32 | payload`, all big-endian. The payload is a field count
/// `u8` followed by `u32`-length-prefixed fields.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProtocolMessage {
    pub kind: MessageKind,
    pub session: u64,
    /// Link address of the sender: a device's attachment handle towards an
    /// SA, otherwise the principal id.
    pub sender: u64,
    pub receiver: u64,
    #[serde(serialize_with = "hex_fields")]
    pub fields: Vec<Vec<u8>>,
}

fn hex_fields<S: serde::Serializer>(fields: &[Vec<u8>], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(fields.iter().map(hex::encode))
}

impl ProtocolMessage {
    pub fn new(
        kind: MessageKind,
        session: u64,
        sender: u64,
        receiver: u64,
        fields: Vec<Vec<u8>>,
    ) -> Self {
        debug_assert_eq!(fields.len(), kind.fields().len());
        Self {
            kind,
            session,
            sender,
            receiver,
            fields,
        }
    }

    pub fn field(&self, name: &str) -> Option<&[u8]> {
        self.kind
            .field_index(name)
            .and_then(|i| self.fields.get(i))
            .map(Vec::as_slice)
    }

    pub fn field_mut(&mut self, name: &str) -> Option<&mut Vec<u8>> {
        self.kind
            .field_index(name)
            .and_then(|i| self.fields.get_mut(i))
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_parts(
            self.kind,
            self.session,
            self.sender,
            self.receiver,
            &self.fields,
        )
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < HEADER_BYTES {
            return Err(WireError::Truncated);
        }
        let kind = MessageKind::from_code(bytes[0]).ok_or(WireError::UnknownKind(bytes[0]))?;
        let u64_at = |i: usize| u64::from_be_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
        let session = u64_at(1);
        let sender = u64_at(9);
        let receiver = u64_at(17);
        let len = u32::from_be_bytes(bytes[25..29].try_into().expect("4 bytes")) as usize;
        let payload = &bytes[HEADER_BYTES..];
        if payload.len() != len {
            return Err(WireError::Length);
        }
        let (&count, mut rest) = payload.split_first().ok_or(WireError::Truncated)?;
        let mut fields = Vec::with_capacity(count as usize);
        for _ in 0..count {
            if rest.len() < 4 {
                return Err(WireError::Truncated);
            }
            let n = u32::from_be_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
            rest = &rest[4..];
            if rest.len() < n {
                return Err(WireError::Truncated);
            }
            fields.push(rest[..n].to_vec());
            rest = &rest[n..];
        }
        if !rest.is_empty() {
            return Err(WireError::Length);
        }
        let expected = kind.fields().len();
        if fields.len() != expected {
            return Err(WireError::FieldCount {
                kind,
                expected,
                got: fields.len(),
            });
        }
        Ok(Self {
            kind,
            session,
            sender,
            receiver,
            fields,
        })
    }

    /// Builds a device-SA message, appending the channel MAC over the header
    /// and every other field.
    pub fn sealed(
        kind: MessageKind,
        session: u64,
        sender: u64,
        receiver: u64,
        mut fields: Vec<Vec<u8>>,
        key: &ChannelKey,
    ) -> Self {
        let tag = channel_mac(key, kind, session, sender, receiver, &fields);
        fields.push(tag.to_vec());
        Self::new(kind, session, sender, receiver, fields)
    }

    /// Checks the trailing MAC field.
    pub fn verify_mac(&self, key: &ChannelKey) -> bool {
        let Some((tag, rest)) = self.fields.split_last() else {
            return false;
        };
        let mut mac = channel_hmac(key);
        mac.update(&encode_parts(
            self.kind,
            self.session,
            self.sender,
            self.receiver,
            rest,
        ));
        mac.verify_slice(tag).is_ok()
    }
}

fn encode_parts(
    kind: MessageKind,
    session: u64,
    sender: u64,
    receiver: u64,
    fields: &[Vec<u8>],
) -> Vec<u8> {
    let payload_len = 1 + fields.iter().map(|f| 4 + f.len()).sum::<usize>();
    let mut out = Vec::with_capacity(HEADER_BYTES + payload_len);
    out.push(kind.code());
    out.extend_from_slice(&session.to_be_bytes());
    out.extend_from_slice(&sender.to_be_bytes());
    out.extend_from_slice(&receiver.to_be_bytes());
    out.extend_from_slice(&(payload_len as u32).to_be_bytes());
    out.push(fields.len() as u8);
    for f in fields {
        out.extend_from_slice(&(f.len() as u32).to_be_bytes());
        out.extend_from_slice(f);
    }
    out
}

fn channel_hmac(key: &ChannelKey) -> Hmac<Sha256> {
    <Hmac<Sha256> as Mac>::new_from_slice(key.as_bytes()).expect("HMAC accepts any key length")
}

fn channel_mac(
    key: &ChannelKey,
    kind: MessageKind,
    session: u64,
    sender: u64,
    receiver: u64,
    fields: &[Vec<u8>],
) -> [u8; MAC_BYTES] {
    let mut mac = channel_hmac(key);
    mac.update(&encode_parts(kind, session, sender, receiver, fields));
    mac.finalize().into_bytes().into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    /// A message arrived that the session was not waiting for.
    StepOrder,
    /// Authenticated decryption under the session key failed.
    Decryption,
    SignatureRejected,
    /// The device-SA channel MAC did not verify.
    ChannelAuth,
    /// The SA has no attachment for the requesting device.
    NotAttached,
    Timeout,
    AckMismatch,
    Malformed,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureReason::StepOrder => "step-order",
            FailureReason::Decryption => "decryption",
            FailureReason::SignatureRejected => "signature-rejected",
            FailureReason::ChannelAuth => "channel-auth",
            FailureReason::NotAttached => "not-attached",
            FailureReason::Timeout => "timeout",
            FailureReason::AckMismatch => "ack-mismatch",
            FailureReason::Malformed => "malformed",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("step {step}: {reason}: {detail}")]
pub struct ProtocolError {
    pub step: u8,
    pub reason: FailureReason,
    pub detail: String,
}

impl ProtocolError {
    pub fn new(step: u8, reason: FailureReason, detail: impl Into<String>) -> Self {
        Self {
            step,
            reason,
            detail: detail.into(),
        }
    }
}

/// How a protocol run ended.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Outcome {
    /// rsf-gs: the initiator's SA verified the responder's signature.
    Accept,
    /// rsf-abe: the receiver recovered the data and the ack matched.
    Delivered,
    /// rsf-abe: the receiver's SA key policy is not satisfied.
    Denied { step: u8 },
    /// The run aborted.
    Abort {
        step: u8,
        reason: FailureReason,
        detail: String,
    },
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Accept => "accept",
            Outcome::Delivered => "delivered",
            Outcome::Denied { .. } => "denied",
            Outcome::Abort { .. } => "abort",
        }
    }

    pub fn step(&self) -> Option<u8> {
        match self {
            Outcome::Denied { step } | Outcome::Abort { step, .. } => Some(*step),
            _ => None,
        }
    }

    pub fn reason(&self) -> Option<FailureReason> {
        match self {
            Outcome::Abort { reason, .. } => Some(*reason),
            _ => None,
        }
    }
}

impl From<ProtocolError> for Outcome {
    fn from(e: ProtocolError) -> Self {
        Outcome::Abort {
            step: e.step,
            reason: e.reason,
            detail: e.detail,
        }
    }
}

/// What a principal does after handling a message.
#[derive(Debug, Default)]
pub struct Reaction {
    /// Simulated computation time before the outgoing messages leave.
    pub compute_ms: f64,
    pub send: Vec<ProtocolMessage>,
    /// The next message this principal waits for, if any.
    pub await_next: Option<MessageKind>,
    pub outcome: Option<Outcome>,
}

/// Simulated computation times charged by the principals.
#[derive(Clone, Debug, PartialEq)]
pub struct ComputeCosts {
    device_rsf_ms: f64,
    sa: PrimitiveTimings,
}

impl ComputeCosts {
    /// `device_rsf_ms` is `t_DH + t_Enc`, charged once per offload leg on
    /// the device. `sa` must price every SA-side security function.
    pub fn new(device_rsf_ms: f64, sa: PrimitiveTimings) -> Result<Self, PerfError> {
        if !(device_rsf_ms >= 0.0) {
            return Err(PerfError::NegativeTiming {
                field: "device_rsf_ms".into(),
                value: device_rsf_ms,
            });
        }
        for phase in SfPhase::ALL {
            predict_sf_time(&OpCountFormula::for_phase(phase, 2), &sa)?;
        }
        Ok(Self { device_rsf_ms, sa })
    }

    pub fn from_table(table: &TimingTable) -> Result<Self, PerfError> {
        Self::new(table.device.device_rsf_time(), table.sa.clone())
    }

    pub fn zero() -> Self {
        let z = Some(0.0);
        Self {
            device_rsf_ms: 0.0,
            sa: PrimitiveTimings {
                label: "zero".into(),
                pairing: z,
                exp_g1: z,
                mul_g1: z,
                exp_g2: z,
                mul_g2: z,
                exp_gt: z,
                mul_gt: z,
                dh_ms: z,
                sym_enc_ms: z,
            },
        }
    }

    pub fn device_rsf_ms(&self) -> f64 {
        self.device_rsf_ms
    }

    /// SA-side time for one security function on `n_attrs` attributes.
    pub fn sa_phase(&self, phase: SfPhase, n_attrs: u32) -> f64 {
        predict_sf_time(&OpCountFormula::for_phase(phase, n_attrs), &self.sa)
            .expect("primitives checked at construction")
    }
}

/// Encodes an attribute set as the rsf-abe descriptor field.
pub fn encode_descriptor(attrs: &BTreeSet<u32>) -> Vec<u8> {
    attrs.iter().flat_map(|a| a.to_be_bytes()).collect()
}

pub fn decode_descriptor(bytes: &[u8]) -> Option<BTreeSet<u32>> {
    if !bytes.len().is_multiple_of(4) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")))
            .collect(),
    )
}

/// Whether a message was sent or received by the viewing principal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Sent,
    Received,
}

/// One message on the fabric.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub from: PrincipalId,
    pub to: PrincipalId,
    pub kind: MessageKind,
    pub sent_at: f64,
    /// `None` if the message was dropped.
    pub delivered_at: Option<f64>,
    pub sent: ProtocolMessage,
    /// The version the receiver got, which differs from `sent` under a fault.
    pub delivered: Option<ProtocolMessage>,
    pub fault: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Transcript {
    /// Every principal that exists in the world the run took place in.
    pub principals: BTreeSet<PrincipalId>,
    pub entries: Vec<TranscriptEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViewedMessage {
    pub direction: Direction,
    pub at: f64,
    pub message: ProtocolMessage,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown principal {0}")]
pub struct UnknownPrincipal(pub PrincipalId);

/// The messages `principal` sent or received, in order.
pub fn transcript_view(
    transcript: &Transcript,
    principal: PrincipalId,
) -> Result<Vec<ViewedMessage>, UnknownPrincipal> {
    if !transcript.principals.contains(&principal) {
        return Err(UnknownPrincipal(principal));
    }
    let mut view = Vec::new();
    for e in &transcript.entries {
        if e.from == principal {
            view.push(ViewedMessage {
                direction: Direction::Sent,
                at: e.sent_at,
                message: e.sent.clone(),
            });
        }
        if e.to == principal {
            if let (Some(msg), Some(at)) = (&e.delivered, e.delivered_at) {
                view.push(ViewedMessage {
                    direction: Direction::Received,
                    at,
                    message: msg.clone(),
                });
            }
        }
    }
    Ok(view)
}

/// Variable values in a view: session ids, the peer's link address and all
/// non-constant payload fields. The viewer's own address is excluded.
pub fn variable_values(view: &[ViewedMessage], viewer_address: u64) -> BTreeSet<Vec<u8>> {
    let mut out = BTreeSet::new();
    for v in view {
        let m = &v.message;
        out.insert(m.session.to_be_bytes().to_vec());
        for addr in [m.sender, m.receiver] {
            if addr != viewer_address {
                out.insert(addr.to_be_bytes().to_vec());
            }
        }
        for (name, value) in m.kind.fields().iter().zip(&m.fields) {
            if !m.kind.is_constant_field(name) && !value.is_empty() {
                out.insert(value.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(b: u8) -> ChannelKey {
        ChannelKey::from_bytes([b; 32])
    }

    #[test]
    fn wire_round_trip() {
        let m = ProtocolMessage::new(
            MessageKind::AuthReq,
            7,
            1,
            2,
            vec![vec![1, 2, 3], vec![9; 20]],
        );
        let bytes = m.encode();
        assert_eq!(bytes.len(), HEADER_BYTES + 1 + 4 + 3 + 4 + 20);
        assert_eq!(ProtocolMessage::decode(&bytes).unwrap(), m);
    }

    #[test]
    fn wire_rejects_bad_input() {
        let m = ProtocolMessage::new(MessageKind::Ack, 1, 1, 2, vec![vec![5; 8]]);
        let bytes = m.encode();
        assert_eq!(
            ProtocolMessage::decode(&bytes[..10]),
            Err(WireError::Truncated)
        );
        let mut bad = bytes.clone();
        bad[0] = 99;
        assert_eq!(
            ProtocolMessage::decode(&bad),
            Err(WireError::UnknownKind(99))
        );
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(ProtocolMessage::decode(&extra), Err(WireError::Length));
        let mut wrong_kind = bytes;
        wrong_kind[0] = MessageKind::AuthReq.code();
        assert!(matches!(
            ProtocolMessage::decode(&wrong_kind),
            Err(WireError::FieldCount { .. })
        ));
    }

    #[test]
    fn mac_binds_header_and_fields() {
        let k = key(3);
        let m = ProtocolMessage::sealed(MessageKind::SignReq, 5, 10, 20, vec![vec![1; 40]], &k);
        assert!(m.verify_mac(&k));
        assert!(!m.verify_mac(&key(4)));
        let mut other_session = m.clone();
        other_session.session = 6;
        assert!(!other_session.verify_mac(&k));
        let mut flipped = m.clone();
        flipped.fields[0][0] ^= 1;
        assert!(!flipped.verify_mac(&k));
    }

    #[test]
    fn step_labels() {
        assert_eq!(MessageKind::AuthResp.processing_step(), 5);
        assert_eq!(MessageKind::VerifyReq.processing_step(), 6);
        assert_eq!(MessageKind::VerifyResp.processing_step(), 6);
        assert_eq!(MessageKind::DecReq.processing_step(), 6);
        assert_eq!(MessageKind::Ack.processing_step(), 7);
        for p in [ProtocolKind::RsfGs, ProtocolKind::RsfAbe] {
            let steps: Vec<u8> = p.sequence().iter().map(|k| k.step()).collect();
            assert!(steps.windows(2).all(|w| w[0] <= w[1]));
            assert!(p.sequence().iter().all(|k| k.protocol() == p));
        }
    }

    #[test]
    fn descriptor_round_trip() {
        let attrs: BTreeSet<u32> = [0, 3, 49].into();
        assert_eq!(decode_descriptor(&encode_descriptor(&attrs)), Some(attrs));
        assert_eq!(decode_descriptor(&[1, 2, 3]), None);
    }

    #[test]
    fn paper_costs_reproduce_sa_cells() {
        let c = ComputeCosts::from_table(&TimingTable::paper()).unwrap();
        assert!((c.sa_phase(SfPhase::GsSign, 1) - 208.5).abs() < 1e-9);
        assert!((c.sa_phase(SfPhase::GsVerify, 1) - 224.7).abs() < 1e-9);
        assert!((c.device_rsf_ms() - 2.337).abs() < 1e-12);
    }
}
