//! Security-agent request handling. An SA serves attached devices only and
//! keeps no per-session state: every request is answered on its own.

use std::collections::BTreeMap;

use rand::{CryptoRng, RngCore};

use super::{
    decode_descriptor, Attachment, ChannelKey, ComputeCosts, FailureReason, MessageKind,
    PrincipalId, ProtocolError, ProtocolMessage, Reaction,
};
use crate::abe::{
    abe_decrypt, abe_encrypt, AbeCiphertext, AbeDecryptionKey, AbeError, AbePublicKey,
};
use crate::group_sig::{gs_sign, gs_verify_bytes, GroupPublicKey, MemberKey};
use crate::perf_model::SfPhase;

const STATUS_OK: u8 = 0;
const STATUS_DENIED: u8 = 1;
const STATUS_MALFORMED: u8 = 2;

#[derive(Debug)]
pub struct SecurityAgent {
    pub id: PrincipalId,
    pub name: String,
    /// Group public key used both for signing and for verifying.
    pub gpk: Option<GroupPublicKey>,
    member_key: Option<MemberKey>,
    pub abe_pk: Option<AbePublicKey>,
    abe_key: Option<AbeDecryptionKey>,
    channels: BTreeMap<u64, ChannelKey>,
}

fn err(kind: MessageKind, reason: FailureReason, detail: impl Into<String>) -> ProtocolError {
    ProtocolError::new(kind.processing_step(), reason, detail)
}

impl SecurityAgent {
    pub fn new(id: PrincipalId, name: impl Into<String>) -> Self {
        Self {
            id,
            name: name.into(),
            gpk: None,
            member_key: None,
            abe_pk: None,
            abe_key: None,
            channels: BTreeMap::new(),
        }
    }

    pub fn with_group(mut self, gpk: GroupPublicKey, member: Option<MemberKey>) -> Self {
        self.gpk = Some(gpk);
        self.member_key = member;
        self
    }

    pub fn with_abe(mut self, pk: AbePublicKey, key: Option<AbeDecryptionKey>) -> Self {
        self.abe_pk = Some(pk);
        self.abe_key = key;
        self
    }

    pub fn member_key(&self) -> Option<&MemberKey> {
        self.member_key.as_ref()
    }

    pub fn abe_key(&self) -> Option<&AbeDecryptionKey> {
        self.abe_key.as_ref()
    }

    /// Records the SA side of a completed attachment.
    pub fn install(&mut self, attachment: &Attachment) {
        debug_assert_eq!(attachment.sa, self.id);
        self.channels
            .insert(attachment.handle, attachment.key.clone());
    }

    pub fn is_attached(&self, handle: u64) -> bool {
        self.channels.contains_key(&handle)
    }

    /// Serves one offload request.
    pub fn handle<R: RngCore + CryptoRng>(
        &mut self,
        msg: &ProtocolMessage,
        costs: &ComputeCosts,
        rng: &mut R,
    ) -> Result<Reaction, ProtocolError> {
        let kind = msg.kind;
        if !matches!(
            kind,
            MessageKind::SignReq
                | MessageKind::VerifyReq
                | MessageKind::EncReq
                | MessageKind::DecReq
        ) {
            return Err(err(
                kind,
                FailureReason::StepOrder,
                format!("SA does not serve {kind}"),
            ));
        }
        let key = self.channels.get(&msg.sender).ok_or_else(|| {
            err(
                kind,
                FailureReason::NotAttached,
                format!("no attachment for address {}", msg.sender),
            )
        })?;
        if !msg.verify_mac(key) {
            return Err(err(
                kind,
                FailureReason::ChannelAuth,
                "channel MAC rejected",
            ));
        }
        let key = key.clone();
        let reply = |k: MessageKind, fields: Vec<Vec<u8>>| {
            ProtocolMessage::sealed(k, msg.session, self.id, msg.sender, fields, &key)
        };
        let field = |name: &str| msg.field(name).unwrap_or_default();

        let (compute_ms, response) = match kind {
            MessageKind::SignReq => {
                let (Some(gpk), Some(member)) = (&self.gpk, &self.member_key) else {
                    return Err(err(
                        kind,
                        FailureReason::Malformed,
                        "SA holds no group member key",
                    ));
                };
                let sigma = gs_sign(gpk, member, field("e_j"), rng);
                (
                    costs.sa_phase(SfPhase::GsSign, 0),
                    reply(MessageKind::SignResp, vec![sigma.to_bytes()]),
                )
            }
            MessageKind::VerifyReq => {
                let Some(gpk) = &self.gpk else {
                    return Err(err(
                        kind,
                        FailureReason::Malformed,
                        "SA holds no group public key",
                    ));
                };
                let ok = gs_verify_bytes(gpk, field("e_j"), field("sigma")).is_ok();
                (
                    costs.sa_phase(SfPhase::GsVerify, 0),
                    reply(MessageKind::VerifyResp, vec![vec![u8::from(ok)]]),
                )
            }
            MessageKind::EncReq => {
                let Some(pk) = &self.abe_pk else {
                    return Err(err(
                        kind,
                        FailureReason::Malformed,
                        "SA holds no ABE public key",
                    ));
                };
                let encrypted = decode_descriptor(field("descriptor"))
                    .ok_or(AbeError::Malformed("descriptor".into()))
                    .and_then(|attrs| {
                        let ct = abe_encrypt(pk, &attrs, field("e_i"), rng)?;
                        Ok((attrs.len() as u32, ct.to_bytes()))
                    });
                match encrypted {
                    Ok((n, ct)) => (
                        costs.sa_phase(SfPhase::AbeEncrypt, n),
                        reply(MessageKind::EncResp, vec![vec![STATUS_OK], ct]),
                    ),
                    Err(_) => (
                        0.0,
                        reply(
                            MessageKind::EncResp,
                            vec![vec![STATUS_MALFORMED], Vec::new()],
                        ),
                    ),
                }
            }
            MessageKind::DecReq => {
                let decrypted = AbeCiphertext::from_bytes(field("e_prime_i")).and_then(|ct| {
                    let key = self.abe_key.as_ref().ok_or(AbeError::PolicyUnsatisfied)?;
                    let n = ct.attributes.len() as u32;
                    abe_decrypt(key, &ct).map(|pt| (n, pt))
                });
                match decrypted {
                    Ok((n, e_i)) => (
                        costs.sa_phase(SfPhase::AbeDecrypt, n),
                        reply(MessageKind::DecResp, vec![vec![STATUS_OK], e_i]),
                    ),
                    Err(AbeError::PolicyUnsatisfied) => (
                        0.0,
                        reply(MessageKind::DecResp, vec![vec![STATUS_DENIED], Vec::new()]),
                    ),
                    Err(_) => (
                        0.0,
                        reply(
                            MessageKind::DecResp,
                            vec![vec![STATUS_MALFORMED], Vec::new()],
                        ),
                    ),
                }
            }
            _ => unreachable!("filtered above"),
        };
        Ok(Reaction {
            compute_ms,
            send: vec![response],
            await_next: None,
            outcome: None,
        })
    }
}
