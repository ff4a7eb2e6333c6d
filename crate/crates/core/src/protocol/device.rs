//! Device-side state machines. Devices hold no group or ABE material: only
//! their AAA secret, their SA attachments and per-session DH state.

use std::collections::{BTreeMap, BTreeSet};

use rand::{CryptoRng, RngCore};

use super::{
    encode_descriptor, Attachment, ChannelKey, ComputeCosts, FailureReason, MessageKind, Outcome,
    PrincipalId, ProtocolError, ProtocolKind, ProtocolMessage, Reaction, ACK_BYTES, NONCE_I_BYTES,
};
use crate::crypto_suite::{
    decode_g1, dh_agree, dh_generate, hash256, sym_decrypt, sym_encrypt, sym_encrypt_with_nonce,
    Ciphertext, DhKeypair, SessionKey, NONCE_BYTES,
};
use crate::group_sig::GroupSignature;

const EJ_NONCE_LABEL: &[u8] = b"resiot/rsf-gs/ej-nonce/v1";

const STATUS_OK: u8 = 0;
const STATUS_DENIED: u8 = 1;

/// Deviations a malicious device can apply to its own messages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Behavior {
    #[default]
    Honest,
    /// rsf-gs responder: tamper with the SA's signature before wrapping it.
    FlipSignature,
    /// rsf-abe receiver: return a wrong acknowledgement.
    WrongAck,
}

/// Session secrets, kept for tests and never serialized.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunSecrets {
    pub nonce_i: Option<[u8; NONCE_I_BYTES]>,
    pub session_key: Option<SessionKey>,
    pub data_sent: Option<Vec<u8>>,
    pub data_received: Option<Vec<u8>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Part {
    Initiator,
    Responder,
}

#[derive(Debug)]
struct Session {
    protocol: ProtocolKind,
    part: Part,
    id: u64,
    peer: PrincipalId,
    sa: PrincipalId,
    expected: Option<MessageKind>,
    dh: Option<DhKeypair>,
    key: Option<SessionKey>,
    nonce_i: [u8; NONCE_I_BYTES],
    data: Vec<u8>,
    attrs: BTreeSet<u32>,
    ack: [u8; ACK_BYTES],
}

#[derive(Debug)]
pub struct Device {
    pub id: PrincipalId,
    pub name: String,
    aaa_secret: [u8; 32],
    attachments: BTreeMap<PrincipalId, Attachment>,
    pub behavior: Behavior,
    session: Option<Session>,
    secrets: RunSecrets,
}

fn err(kind: MessageKind, reason: FailureReason, detail: impl Into<String>) -> ProtocolError {
    ProtocolError::new(kind.processing_step(), reason, detail)
}

/// `E_j = E_K(Nonce_i)` with a nonce fixed by `(K, Nonce_i)`, so the
/// initiator can recompute the exact bytes the responder's SA signed.
pub fn compute_e_j(key: &SessionKey, nonce_i: &[u8]) -> Vec<u8> {
    let h = hash256(EJ_NONCE_LABEL, &[key.as_bytes(), nonce_i]);
    let nonce: [u8; NONCE_BYTES] = h[..NONCE_BYTES].try_into().expect("12 bytes");
    sym_encrypt_with_nonce(key, nonce, nonce_i, &[]).to_bytes()
}

impl Device {
    pub fn new(id: PrincipalId, name: impl Into<String>, aaa_secret: [u8; 32]) -> Self {
        Self {
            id,
            name: name.into(),
            aaa_secret,
            attachments: BTreeMap::new(),
            behavior: Behavior::Honest,
            session: None,
            secrets: RunSecrets::default(),
        }
    }

    pub(crate) fn aaa_secret(&self) -> &[u8; 32] {
        &self.aaa_secret
    }

    /// Installs or replaces the attachment to `attachment.sa`.
    pub fn install(&mut self, attachment: Attachment) {
        self.attachments.insert(attachment.sa, attachment);
    }

    pub fn attachment(&self, sa: PrincipalId) -> Option<&Attachment> {
        self.attachments.get(&sa)
    }

    pub fn attachments(&self) -> impl Iterator<Item = &Attachment> {
        self.attachments.values()
    }

    pub fn secrets(&self) -> &RunSecrets {
        &self.secrets
    }

    /// Forgets any session state.
    pub fn reset(&mut self) {
        self.session = None;
        self.secrets = RunSecrets::default();
    }

    /// The address and key this device uses towards `sa`. An unattached
    /// device still speaks, with its bare id and no valid key.
    fn channel(&self, sa: PrincipalId) -> (u64, ChannelKey) {
        match self.attachments.get(&sa) {
            Some(a) => (a.handle, a.key.clone()),
            None => (self.id, ChannelKey::from_bytes([0; 32])),
        }
    }

    fn new_session(
        &mut self,
        protocol: ProtocolKind,
        part: Part,
        id: u64,
        peer: PrincipalId,
        sa: PrincipalId,
    ) {
        self.secrets = RunSecrets::default();
        self.session = Some(Session {
            protocol,
            part,
            id,
            peer,
            sa,
            expected: None,
            dh: None,
            key: None,
            nonce_i: [0; NONCE_I_BYTES],
            data: Vec::new(),
            attrs: BTreeSet::new(),
            ack: [0; ACK_BYTES],
        });
    }

    /// rsf-gs step 1: `auth_req = {DH_X, Nonce_i}` to the responder.
    pub fn start_gs<R: RngCore + CryptoRng>(
        &mut self,
        session: u64,
        responder: PrincipalId,
        sa: PrincipalId,
        rng: &mut R,
    ) -> Reaction {
        self.new_session(ProtocolKind::RsfGs, Part::Initiator, session, responder, sa);
        let dh = dh_generate(rng);
        let mut nonce_i = [0u8; NONCE_I_BYTES];
        rng.fill_bytes(&mut nonce_i);
        let msg = ProtocolMessage::new(
            MessageKind::AuthReq,
            session,
            self.id,
            responder,
            vec![dh.public_bytes().to_vec(), nonce_i.to_vec()],
        );
        self.secrets.nonce_i = Some(nonce_i);
        let s = self.session.as_mut().expect("session just created");
        s.dh = Some(dh);
        s.nonce_i = nonce_i;
        s.expected = Some(MessageKind::AuthResp);
        Reaction {
            send: vec![msg],
            await_next: s.expected,
            ..Reaction::default()
        }
    }

    /// Prepares the rsf-gs responder to accept `auth_req`.
    pub fn expect_gs(&mut self, session: u64, initiator: PrincipalId, sa: PrincipalId) {
        self.new_session(ProtocolKind::RsfGs, Part::Responder, session, initiator, sa);
        self.session.as_mut().expect("session").expected = Some(MessageKind::AuthReq);
    }

    /// rsf-abe step 1: the sender opens the key exchange.
    pub fn start_abe<R: RngCore + CryptoRng>(
        &mut self,
        session: u64,
        receiver: PrincipalId,
        sa: PrincipalId,
        data: Vec<u8>,
        attrs: BTreeSet<u32>,
        rng: &mut R,
    ) -> Reaction {
        self.new_session(ProtocolKind::RsfAbe, Part::Initiator, session, receiver, sa);
        let dh = dh_generate(rng);
        let msg = ProtocolMessage::new(
            MessageKind::AbacInit,
            session,
            self.id,
            receiver,
            vec![dh.public_bytes().to_vec()],
        );
        self.secrets.data_sent = Some(data.clone());
        let s = self.session.as_mut().expect("session just created");
        s.dh = Some(dh);
        s.data = data;
        s.attrs = attrs;
        s.expected = Some(MessageKind::AbacResp);
        Reaction {
            send: vec![msg],
            await_next: s.expected,
            ..Reaction::default()
        }
    }

    pub fn expect_abe(&mut self, session: u64, sender: PrincipalId, sa: PrincipalId) {
        self.new_session(ProtocolKind::RsfAbe, Part::Responder, session, sender, sa);
        self.session.as_mut().expect("session").expected = Some(MessageKind::AbacInit);
    }

    /// Processes one delivered message.
    pub fn handle<R: RngCore + CryptoRng>(
        &mut self,
        msg: &ProtocolMessage,
        costs: &ComputeCosts,
        rng: &mut R,
    ) -> Result<Reaction, ProtocolError> {
        let kind = msg.kind;
        let Some(session) = self.session.as_ref() else {
            return Err(err(
                kind,
                FailureReason::StepOrder,
                "no session in progress",
            ));
        };
        if session.id != msg.session || session.expected != Some(kind) {
            let expected = session.expected.map_or("nothing", |k| k.name());
            return Err(err(
                kind,
                FailureReason::StepOrder,
                format!("got {kind}, expected {expected}"),
            ));
        }
        if kind.is_sa_channel() {
            let (_, key) = self.channel(session.sa);
            if !msg.verify_mac(&key) {
                return Err(err(
                    kind,
                    FailureReason::ChannelAuth,
                    "channel MAC rejected",
                ));
            }
        }
        let reaction = match (session.protocol, session.part, kind) {
            (ProtocolKind::RsfGs, Part::Responder, MessageKind::AuthReq) => {
                self.gs_on_auth_req(msg, costs, rng)
            }
            (ProtocolKind::RsfGs, Part::Responder, MessageKind::SignResp) => {
                self.gs_on_sign_resp(msg, rng)
            }
            (ProtocolKind::RsfGs, Part::Initiator, MessageKind::AuthResp) => {
                self.gs_on_auth_resp(msg, costs)
            }
            (ProtocolKind::RsfGs, Part::Initiator, MessageKind::VerifyResp) => {
                self.gs_on_verify_resp(msg)
            }
            (ProtocolKind::RsfAbe, Part::Responder, MessageKind::AbacInit) => {
                self.abe_on_init(msg, rng)
            }
            (ProtocolKind::RsfAbe, Part::Initiator, MessageKind::AbacResp) => {
                self.abe_on_resp(msg, costs, rng)
            }
            (ProtocolKind::RsfAbe, Part::Initiator, MessageKind::EncResp) => {
                self.abe_on_enc_resp(msg, rng)
            }
            (ProtocolKind::RsfAbe, Part::Responder, MessageKind::DataTransfer) => {
                self.abe_on_data(msg, costs)
            }
            (ProtocolKind::RsfAbe, Part::Responder, MessageKind::DecResp) => {
                self.abe_on_dec_resp(msg, rng)
            }
            (ProtocolKind::RsfAbe, Part::Initiator, MessageKind::Ack) => self.abe_on_ack(msg),
            _ => Err(err(
                kind,
                FailureReason::StepOrder,
                "message not valid in this role",
            )),
        };
        let session = self.session.as_mut().expect("session");
        match &reaction {
            Ok(r) => session.expected = r.await_next,
            Err(_) => session.expected = None,
        }
        reaction
    }

    fn session(&self) -> &Session {
        self.session.as_ref().expect("checked by handle")
    }

    fn session_mut(&mut self) -> &mut Session {
        self.session.as_mut().expect("checked by handle")
    }

    fn key(&self) -> &SessionKey {
        self.session().key.as_ref().expect("key agreed before use")
    }

    /// Derives K from the peer's DH value and our own pair.
    fn agree(&mut self, kind: MessageKind, peer_public: &[u8]) -> Result<(), ProtocolError> {
        let theirs = decode_g1(peer_public).map_err(|e| {
            err(
                kind,
                FailureReason::Malformed,
                format!("peer DH value: {e}"),
            )
        })?;
        let s = self.session_mut();
        let key =
            dh_agree(s.dh.as_ref().expect("own DH pair generated"), &theirs).map_err(|e| {
                err(
                    kind,
                    FailureReason::Malformed,
                    format!("key agreement: {e}"),
                )
            })?;
        s.key = Some(key.clone());
        self.secrets.session_key = Some(key);
        Ok(())
    }

    fn to_sa(&self, kind: MessageKind, fields: Vec<Vec<u8>>) -> ProtocolMessage {
        let s = self.session();
        let (handle, key) = self.channel(s.sa);
        ProtocolMessage::sealed(kind, s.id, handle, s.sa, fields, &key)
    }

    fn to_peer(&self, kind: MessageKind, fields: Vec<Vec<u8>>) -> ProtocolMessage {
        let s = self.session();
        ProtocolMessage::new(kind, s.id, self.id, s.peer, fields)
    }

    fn own_dh_bytes(&self) -> Vec<u8> {
        self.session()
            .dh
            .as_ref()
            .expect("generated")
            .public_bytes()
            .to_vec()
    }

    // rsf-gs step 2: D_j derives K, computes E_j and asks SA_j to sign it.
    fn gs_on_auth_req<R: RngCore + CryptoRng>(
        &mut self,
        msg: &ProtocolMessage,
        costs: &ComputeCosts,
        rng: &mut R,
    ) -> Result<Reaction, ProtocolError> {
        let kind = msg.kind;
        let nonce: [u8; NONCE_I_BYTES] = msg
            .field("nonce")
            .and_then(|n| n.try_into().ok())
            .ok_or_else(|| {
                err(
                    kind,
                    FailureReason::Malformed,
                    "Nonce_i has the wrong length",
                )
            })?;
        self.session_mut().dh = Some(dh_generate(rng));
        self.agree(kind, msg.field("dh_x").unwrap_or_default())?;
        self.session_mut().nonce_i = nonce;
        self.secrets.nonce_i = Some(nonce);
        let e_j = compute_e_j(self.key(), &nonce);
        Ok(Reaction {
            compute_ms: costs.device_rsf_ms(),
            send: vec![self.to_sa(MessageKind::SignReq, vec![e_j])],
            await_next: Some(MessageKind::SignResp),
            outcome: None,
        })
    }

    // rsf-gs step 4: D_j wraps sigma_j under K and answers D_i.
    fn gs_on_sign_resp<R: RngCore + CryptoRng>(
        &mut self,
        msg: &ProtocolMessage,
        rng: &mut R,
    ) -> Result<Reaction, ProtocolError> {
        let mut sigma = msg.field("sigma").unwrap_or_default().to_vec();
        if self.behavior == Behavior::FlipSignature {
            if let Ok(mut sig) = GroupSignature::from_bytes(&sigma) {
                sig.s_x += crate::crypto_suite::Scalar::from(1u64);
                sigma = sig.to_bytes();
            } else if let Some(b) = sigma.last_mut() {
                *b ^= 1;
            }
        }
        let e_prime_j = sym_encrypt(self.key(), &sigma, rng).to_bytes();
        Ok(Reaction {
            send: vec![self.to_peer(MessageKind::AuthResp, vec![self.own_dh_bytes(), e_prime_j])],
            ..Reaction::default()
        })
    }

    // rsf-gs step 5: D_i derives K, recovers sigma_j, recomputes E_j and
    // hands both to SA_i.
    fn gs_on_auth_resp(
        &mut self,
        msg: &ProtocolMessage,
        costs: &ComputeCosts,
    ) -> Result<Reaction, ProtocolError> {
        let kind = msg.kind;
        self.agree(kind, msg.field("dh_y").unwrap_or_default())?;
        let ct = Ciphertext::from_bytes(msg.field("e_prime_j").unwrap_or_default())
            .map_err(|e| err(kind, FailureReason::Malformed, format!("E'_j: {e}")))?;
        let sigma = sym_decrypt(self.key(), &ct).map_err(|_| {
            err(
                kind,
                FailureReason::Decryption,
                "E'_j does not decrypt under K",
            )
        })?;
        let e_j = compute_e_j(self.key(), &self.session().nonce_i);
        Ok(Reaction {
            compute_ms: costs.device_rsf_ms(),
            send: vec![self.to_sa(MessageKind::VerifyReq, vec![e_j, sigma])],
            await_next: Some(MessageKind::VerifyResp),
            outcome: None,
        })
    }

    // rsf-gs step 6: SA_i's verdict.
    fn gs_on_verify_resp(&mut self, msg: &ProtocolMessage) -> Result<Reaction, ProtocolError> {
        let kind = msg.kind;
        match msg.field("verdict") {
            Some([1]) => Ok(Reaction {
                outcome: Some(Outcome::Accept),
                ..Reaction::default()
            }),
            Some([0]) => Err(err(
                kind,
                FailureReason::SignatureRejected,
                "SA_i rejected sigma_j",
            )),
            _ => Err(err(kind, FailureReason::Malformed, "verdict is not 0 or 1")),
        }
    }

    // rsf-abe step 1, receiver side.
    fn abe_on_init<R: RngCore + CryptoRng>(
        &mut self,
        msg: &ProtocolMessage,
        rng: &mut R,
    ) -> Result<Reaction, ProtocolError> {
        self.session_mut().dh = Some(dh_generate(rng));
        self.agree(msg.kind, msg.field("dh_x").unwrap_or_default())?;
        Ok(Reaction {
            send: vec![self.to_peer(MessageKind::AbacResp, vec![self.own_dh_bytes()])],
            await_next: Some(MessageKind::DataTransfer),
            ..Reaction::default()
        })
    }

    // rsf-abe step 2: E_i = E_K(data || ack) goes to SA_i with the descriptor.
    fn abe_on_resp<R: RngCore + CryptoRng>(
        &mut self,
        msg: &ProtocolMessage,
        costs: &ComputeCosts,
        rng: &mut R,
    ) -> Result<Reaction, ProtocolError> {
        self.agree(msg.kind, msg.field("dh_y").unwrap_or_default())?;
        let mut ack = [0u8; ACK_BYTES];
        rng.fill_bytes(&mut ack);
        let s = self.session_mut();
        s.ack = ack;
        let mut plaintext = s.data.clone();
        plaintext.extend_from_slice(&ack);
        let descriptor = encode_descriptor(&s.attrs);
        let e_i = sym_encrypt(self.key(), &plaintext, rng).to_bytes();
        Ok(Reaction {
            compute_ms: costs.device_rsf_ms(),
            send: vec![self.to_sa(MessageKind::EncReq, vec![e_i, descriptor])],
            await_next: Some(MessageKind::EncResp),
            outcome: None,
        })
    }

    // rsf-abe step 4: E''_i = E_K(E'_i) to the receiver.
    fn abe_on_enc_resp<R: RngCore + CryptoRng>(
        &mut self,
        msg: &ProtocolMessage,
        rng: &mut R,
    ) -> Result<Reaction, ProtocolError> {
        if msg.field("status") != Some(&[STATUS_OK]) {
            return Err(err(
                msg.kind,
                FailureReason::Malformed,
                "SA_i could not encrypt",
            ));
        }
        let e_prime_i = msg.field("e_prime_i").unwrap_or_default();
        let wrapped = sym_encrypt(self.key(), e_prime_i, rng).to_bytes();
        Ok(Reaction {
            send: vec![self.to_peer(MessageKind::DataTransfer, vec![wrapped])],
            await_next: Some(MessageKind::Ack),
            ..Reaction::default()
        })
    }

    // rsf-abe step 5: D_j unwraps E''_i and asks SA_j to decrypt E'_i.
    fn abe_on_data(
        &mut self,
        msg: &ProtocolMessage,
        costs: &ComputeCosts,
    ) -> Result<Reaction, ProtocolError> {
        let kind = msg.kind;
        let ct = Ciphertext::from_bytes(msg.field("e_double_prime_i").unwrap_or_default())
            .map_err(|e| err(kind, FailureReason::Malformed, format!("E''_i: {e}")))?;
        let e_prime_i = sym_decrypt(self.key(), &ct).map_err(|_| {
            err(
                kind,
                FailureReason::Decryption,
                "E''_i does not decrypt under K",
            )
        })?;
        Ok(Reaction {
            compute_ms: costs.device_rsf_ms(),
            send: vec![self.to_sa(MessageKind::DecReq, vec![e_prime_i])],
            await_next: Some(MessageKind::DecResp),
            outcome: None,
        })
    }

    // rsf-abe step 7, receiver side: recover data || ack and confirm.
    fn abe_on_dec_resp<R: RngCore + CryptoRng>(
        &mut self,
        msg: &ProtocolMessage,
        rng: &mut R,
    ) -> Result<Reaction, ProtocolError> {
        let kind = msg.kind;
        let reply = match msg.field("status") {
            Some([STATUS_OK]) => {
                let ct = Ciphertext::from_bytes(msg.field("e_i").unwrap_or_default())
                    .map_err(|e| err(kind, FailureReason::Malformed, format!("E_i: {e}")))?;
                let mut plaintext = sym_decrypt(self.key(), &ct).map_err(|_| {
                    err(
                        kind,
                        FailureReason::Decryption,
                        "E_i does not decrypt under K",
                    )
                })?;
                if plaintext.len() < ACK_BYTES {
                    return Err(err(
                        kind,
                        FailureReason::Malformed,
                        "E_i too short to carry ack",
                    ));
                }
                let ack = plaintext.split_off(plaintext.len() - ACK_BYTES);
                self.secrets.data_received = Some(plaintext);
                let mut reply = vec![STATUS_OK];
                reply.extend_from_slice(&ack);
                if self.behavior == Behavior::WrongAck {
                    reply[1] ^= 0x80;
                }
                reply
            }
            Some([STATUS_DENIED]) => vec![STATUS_DENIED],
            _ => {
                return Err(err(
                    kind,
                    FailureReason::Malformed,
                    "SA_j could not decrypt",
                ))
            }
        };
        let ack = sym_encrypt(self.key(), &reply, rng).to_bytes();
        Ok(Reaction {
            send: vec![self.to_peer(MessageKind::Ack, vec![ack])],
            ..Reaction::default()
        })
    }

    // rsf-abe step 7, sender side: compare the acknowledgement.
    fn abe_on_ack(&mut self, msg: &ProtocolMessage) -> Result<Reaction, ProtocolError> {
        let kind = msg.kind;
        let ct = Ciphertext::from_bytes(msg.field("ack").unwrap_or_default())
            .map_err(|e| err(kind, FailureReason::Malformed, format!("ack: {e}")))?;
        let reply = sym_decrypt(self.key(), &ct).map_err(|_| {
            err(
                kind,
                FailureReason::Decryption,
                "ack does not decrypt under K",
            )
        })?;
        let outcome = match reply.split_first() {
            Some((&STATUS_OK, ack)) if ack == self.session().ack => Outcome::Delivered,
            Some((&STATUS_OK, _)) => {
                return Err(err(
                    kind,
                    FailureReason::AckMismatch,
                    "ack differs from the one sent",
                ))
            }
            Some((&STATUS_DENIED, [])) => Outcome::Denied {
                step: MessageKind::DecReq.processing_step(),
            },
            _ => return Err(err(kind, FailureReason::Malformed, "unrecognized ack")),
        };
        Ok(Reaction {
            outcome: Some(outcome),
            ..Reaction::default()
        })
    }
}
