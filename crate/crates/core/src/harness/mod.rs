//! Deterministic discrete-event harness for the offload protocols.
//!
//! A [`World`] holds the principals, the key material issued to SAs and a
//! message fabric with constant per-link latencies. Computation advances the
//! simulated clock by model-predicted durations, never by wall-clock time,
//! so runs are reproducible on any machine.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, RngCore};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abe::{abe_keygen, abe_setup, AbeError, AbeMasterKey, AbePublicKey};
use crate::crypto_suite::{hash256, rng_from_seed, BilinearSuite};
use crate::group_sig::{gs_enroll, gs_setup, GroupIssuerKey};
use crate::perf_model::LatencyConstants;
use crate::policy::AccessPolicy;
use crate::protocol::{
    attach_with_secret, AaaStub, AttachError, Behavior, ComputeCosts, Device, FailureReason,
    MessageKind, Outcome, PrincipalId, ProtocolError, ProtocolKind, ProtocolMessage, Reaction,
    Role, RunSecrets, SecurityAgent, Transcript, TranscriptEntry,
};

mod scenario;

pub use scenario::{
    build_world, inject_fault, run_scenario, run_scenario_detailed, run_spec, AbeSection,
    AttachmentReport, AttachmentSpec, FabricSection, FaultSpec, MessageReport, PrincipalReport,
    PrincipalSpec, RunReport, RunSpecToml, Scenario, ScenarioError, ScenarioReport, StepRef,
    TimingSource,
};

/// Simulated time in milliseconds plus a FIFO queue of pending events.
/// Events at equal times fire in insertion order.
#[derive(Debug)]
pub struct SimClock<E> {
    now: f64,
    seq: u64,
    queue: BinaryHeap<Pending<E>>,
}

#[derive(Debug)]
struct Pending<E> {
    at: f64,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Pending<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Pending<E> {}

impl<E> PartialOrd for Pending<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Pending<E> {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .at
            .total_cmp(&self.at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl<E> Default for SimClock<E> {
    fn default() -> Self {
        Self::starting_at(0.0)
    }
}

impl<E> SimClock<E> {
    pub fn starting_at(now: f64) -> Self {
        Self {
            now,
            seq: 0,
            queue: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Schedules `event` at `at`, clamped so it never lies in the past.
    pub fn schedule(&mut self, at: f64, event: E) {
        let at = at.max(self.now);
        self.queue.push(Pending {
            at,
            seq: self.seq,
            event,
        });
        self.seq += 1;
    }

    /// Removes the next event without moving the clock.
    pub fn pop(&mut self) -> Option<(f64, E)> {
        self.queue.pop().map(|p| (p.at, p.event))
    }

    /// Moves the clock forward. Time never decreases.
    pub fn advance_to(&mut self, t: f64) {
        assert!(
            t >= self.now,
            "clock would move backwards: {t} < {}",
            self.now
        );
        self.now = t;
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

/// Link latencies and step deadlines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FabricConfig {
    /// One device-to-device message.
    pub device_device_ms: f64,
    /// One device-to-SA or SA-to-device message.
    pub device_sa_ms: f64,
    /// How long a device waits for the next expected message.
    pub step_timeout_ms: f64,
    /// Per-message-kind deadline overrides.
    #[serde(default)]
    pub step_timeouts: BTreeMap<MessageKind, f64>,
    /// Uniform extra latency in `[0, jitter_ms)` per message. Off by default.
    #[serde(default)]
    pub jitter_ms: f64,
}

pub const DEFAULT_STEP_TIMEOUT_MS: f64 = 10_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("unknown principal {0}")]
    UnknownPrincipal(String),
    #[error("{name} is not a {expected:?}")]
    WrongRole { name: String, expected: Role },
    #[error("duplicate principal name {0}")]
    DuplicateName(String),
    #[error("invalid fabric: {0}")]
    Fabric(String),
    #[error("ABE is not set up in this world")]
    NoAbe,
    #[error(transparent)]
    Abe(#[from] AbeError),
    #[error("{0}")]
    Fault(String),
    #[error("no SA given for {0} and it has no declared attachment")]
    NoSa(String),
}

impl FabricConfig {
    /// Fabric from the cost model's constants: `t_COM^{D-SA}` covers a
    /// request and its response, so each device-SA message takes half.
    pub fn from_latency(lat: &LatencyConstants) -> Self {
        Self {
            device_device_ms: lat.device_device_ms,
            device_sa_ms: lat.device_sa_ms / 2.0,
            step_timeout_ms: DEFAULT_STEP_TIMEOUT_MS,
            step_timeouts: BTreeMap::new(),
            jitter_ms: 0.0,
        }
    }

    pub fn zero() -> Self {
        Self::from_latency(&LatencyConstants::ZERO)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut values = vec![
            ("device_device_ms", self.device_device_ms),
            ("device_sa_ms", self.device_sa_ms),
            ("jitter_ms", self.jitter_ms),
        ];
        if !(self.step_timeout_ms > 0.0) {
            return Err(HarnessError::Fabric(
                "step_timeout_ms must be positive".into(),
            ));
        }
        values.extend(self.step_timeouts.values().map(|v| ("step_timeouts", *v)));
        for (name, v) in values {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(HarnessError::Fabric(format!(
                    "{name} must be a finite value >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn timeout_for(&self, kind: MessageKind) -> f64 {
        self.step_timeouts
            .get(&kind)
            .copied()
            .unwrap_or(self.step_timeout_ms)
    }
}

/// An in-flight mutation applied to one message of a run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum FaultAction {
    Drop,
    FlipBit {
        field: String,
        bit: usize,
    },
    /// Replaces the field with fresh random bytes of the same length.
    ReplaceField {
        field: String,
    },
    /// Substitutes the payload recorded for the same message kind in an
    /// earlier run.
    Replay {
        from_run: usize,
    },
    /// The rsf-gs responder tampers with the signature it forwards.
    FlipSignature,
    /// The rsf-abe receiver returns a wrong acknowledgement.
    WrongAck,
}

impl FaultAction {
    pub fn label(&self) -> String {
        match self {
            FaultAction::Drop => "drop".into(),
            FaultAction::FlipBit { field, bit } => format!("flip-bit {field}[{bit}]"),
            FaultAction::ReplaceField { field } => format!("replace-field {field}"),
            FaultAction::Replay { from_run } => format!("replay from run {from_run}"),
            FaultAction::FlipSignature => "flip-signature".into(),
            FaultAction::WrongAck => "wrong-ack".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Fault {
    pub at: MessageKind,
    pub action: FaultAction,
}

/// One protocol run to execute.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub protocol: ProtocolKind,
    pub initiator: PrincipalId,
    pub responder: PrincipalId,
    /// Defaults to the SA the device was attached to.
    pub initiator_sa: Option<PrincipalId>,
    pub responder_sa: Option<PrincipalId>,
    pub data: Vec<u8>,
    pub attributes: BTreeSet<u32>,
    pub faults: Vec<Fault>,
    /// Defaults to a value derived from the world seed and run index.
    pub seed: Option<u64>,
}

impl RunSpec {
    pub fn gs(initiator: PrincipalId, responder: PrincipalId) -> Self {
        Self {
            protocol: ProtocolKind::RsfGs,
            initiator,
            responder,
            initiator_sa: None,
            responder_sa: None,
            data: Vec::new(),
            attributes: BTreeSet::new(),
            faults: Vec::new(),
            seed: None,
        }
    }

    pub fn abe(
        sender: PrincipalId,
        receiver: PrincipalId,
        data: Vec<u8>,
        attributes: BTreeSet<u32>,
    ) -> Self {
        Self {
            protocol: ProtocolKind::RsfAbe,
            data,
            attributes,
            ..Self::gs(sender, receiver)
        }
    }

    pub fn with_sas(mut self, initiator_sa: PrincipalId, responder_sa: PrincipalId) -> Self {
        self.initiator_sa = Some(initiator_sa);
        self.responder_sa = Some(responder_sa);
        self
    }

    pub fn with_fault(mut self, at: MessageKind, action: FaultAction) -> Self {
        self.faults.push(Fault { at, action });
        self
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub index: usize,
    pub protocol: ProtocolKind,
    pub initiator: PrincipalId,
    pub responder: PrincipalId,
    pub initiator_sa: PrincipalId,
    pub responder_sa: PrincipalId,
    pub session: u64,
    pub outcome: Outcome,
    pub started_at: f64,
    /// Simulated time from the first send to the moment the outcome was
    /// decided.
    pub elapsed_ms: f64,
    pub transcript: Transcript,
    pub initiator_secrets: RunSecrets,
    pub responder_secrets: RunSecrets,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttachRecord {
    pub device: PrincipalId,
    pub sa: PrincipalId,
    /// The run this attachment was made for, `None` for setup.
    pub run: Option<usize>,
    pub at: f64,
    pub handle: Option<u64>,
    pub error: Option<String>,
}

#[derive(Debug)]
enum Principal {
    Device(Device),
    Agent(SecurityAgent),
    Other(Role),
}

#[derive(Debug)]
enum Event {
    Deliver(usize),
    Timeout {
        who: PrincipalId,
        kind: MessageKind,
        token: u64,
    },
}

#[derive(Clone, Debug)]
struct DeclaredAttachment {
    device: PrincipalId,
    sa: PrincipalId,
    wrong_secret: bool,
}

/// Principals, issued key material and the fabric.
pub struct World {
    seed: u64,
    rng: ChaCha20Rng,
    fabric: FabricConfig,
    costs: ComputeCosts,
    now: f64,
    anonymous: bool,
    principals: BTreeMap<PrincipalId, Principal>,
    names: BTreeMap<String, PrincipalId>,
    routes: BTreeMap<u64, PrincipalId>,
    aaa: AaaStub,
    groups: BTreeMap<String, GroupIssuerKey>,
    abe: Option<(AbePublicKey, AbeMasterKey)>,
    declared: Vec<DeclaredAttachment>,
    attach_log: Vec<AttachRecord>,
    history: Vec<(ProtocolKind, Transcript)>,
}

impl World {
    pub fn new(seed: u64, fabric: FabricConfig, costs: ComputeCosts) -> Result<Self, HarnessError> {
        fabric.validate()?;
        Ok(Self {
            seed,
            rng: rng_from_seed(seed),
            fabric,
            costs,
            now: 0.0,
            anonymous: false,
            principals: BTreeMap::new(),
            names: BTreeMap::new(),
            routes: BTreeMap::new(),
            aaa: AaaStub::new(),
            groups: BTreeMap::new(),
            abe: None,
            declared: Vec::new(),
            attach_log: Vec::new(),
            history: Vec::new(),
        })
    }

    /// Selects anonymous attachment: every run re-attaches its devices under
    /// fresh pseudonyms.
    pub fn set_anonymous_attachment(&mut self, on: bool) {
        self.anonymous = on;
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn fabric(&self) -> &FabricConfig {
        &self.fabric
    }

    fn register(&mut self, name: &str, p: Principal) -> Result<PrincipalId, HarnessError> {
        if self.names.contains_key(name) {
            return Err(HarnessError::DuplicateName(name.into()));
        }
        let id = self.principals.len() as PrincipalId + 1;
        self.principals.insert(id, p);
        self.names.insert(name.into(), id);
        self.routes.insert(id, id);
        Ok(id)
    }

    pub fn add_device(&mut self, name: &str) -> Result<PrincipalId, HarnessError> {
        let mut secret = [0u8; 32];
        self.rng.fill_bytes(&mut secret);
        let id = self.principals.len() as PrincipalId + 1;
        let id2 = self.register(name, Principal::Device(Device::new(id, name, secret)))?;
        debug_assert_eq!(id, id2);
        self.aaa.register(id, secret);
        Ok(id)
    }

    /// Adds a principal with no protocol role (AAA stub, key authority).
    pub fn add_passive(&mut self, name: &str, role: Role) -> Result<PrincipalId, HarnessError> {
        self.register(name, Principal::Other(role))
    }

    /// Sets up the ABE authority. Must precede [`World::add_agent`] for SAs
    /// that take part in rsf-abe.
    pub fn setup_abe(&mut self, universe: u32) -> Result<(), HarnessError> {
        let (pk, msk) = abe_setup(&BilinearSuite, universe, &mut self.rng)?;
        self.abe = Some((pk, msk));
        Ok(())
    }

    /// Adds an SA enrolled in `group` (created on first use) and, when
    /// `policy` is given, holding an ABE key for it.
    pub fn add_agent(
        &mut self,
        name: &str,
        group: Option<&str>,
        policy: Option<&AccessPolicy>,
    ) -> Result<PrincipalId, HarnessError> {
        let id = self.principals.len() as PrincipalId + 1;
        let mut sa = SecurityAgent::new(id, name);
        if let Some(group) = group {
            let rng = &mut self.rng;
            let issuer = self
                .groups
                .entry(group.to_string())
                .or_insert_with(|| gs_setup(&BilinearSuite, rng).1);
            let index = issuer.enrolled().count() as u32 + 1;
            let member = gs_enroll(issuer, index, rng).expect("fresh index");
            sa = sa.with_group(issuer.public_key().clone(), Some(member));
        }
        match (&self.abe, policy) {
            (Some((pk, msk)), policy) => {
                let key = policy
                    .map(|p| abe_keygen(msk, p, &mut self.rng))
                    .transpose()?;
                sa = sa.with_abe(pk.clone(), key);
            }
            (None, Some(_)) => return Err(HarnessError::NoAbe),
            (None, None) => {}
        }
        self.register(name, Principal::Agent(sa))
    }

    pub fn id_of(&self, name: &str) -> Result<PrincipalId, HarnessError> {
        self.names
            .get(name)
            .copied()
            .ok_or_else(|| HarnessError::UnknownPrincipal(name.into()))
    }

    pub fn name_of(&self, id: PrincipalId) -> &str {
        self.names
            .iter()
            .find(|(_, v)| **v == id)
            .map(|(k, _)| k.as_str())
            .unwrap_or("?")
    }

    pub fn role_of(&self, id: PrincipalId) -> Option<Role> {
        self.principals.get(&id).map(|p| match p {
            Principal::Device(_) => Role::Device,
            Principal::Agent(_) => Role::SecurityAgent,
            Principal::Other(r) => *r,
        })
    }

    pub fn principal_ids(&self) -> BTreeSet<PrincipalId> {
        self.principals.keys().copied().collect()
    }

    pub fn device(&self, id: PrincipalId) -> Option<&Device> {
        match self.principals.get(&id) {
            Some(Principal::Device(d)) => Some(d),
            _ => None,
        }
    }

    pub fn agent(&self, id: PrincipalId) -> Option<&SecurityAgent> {
        match self.principals.get(&id) {
            Some(Principal::Agent(a)) => Some(a),
            _ => None,
        }
    }

    pub fn group_issuer(&self, group: &str) -> Option<&GroupIssuerKey> {
        self.groups.get(group)
    }

    pub fn abe_public_key(&self) -> Option<&AbePublicKey> {
        self.abe.as_ref().map(|(pk, _)| pk)
    }

    pub fn attach_log(&self) -> &[AttachRecord] {
        &self.attach_log
    }

    fn expect_role(&self, id: PrincipalId, role: Role) -> Result<(), HarnessError> {
        if self.role_of(id) == Some(role) {
            Ok(())
        } else if self.role_of(id).is_none() {
            Err(HarnessError::UnknownPrincipal(id.to_string()))
        } else {
            Err(HarnessError::WrongRole {
                name: self.name_of(id).into(),
                expected: role,
            })
        }
    }

    /// Declares an attachment and performs it. In anonymous mode it is
    /// repeated before every run that involves the device.
    pub fn attach(
        &mut self,
        device: PrincipalId,
        sa: PrincipalId,
        wrong_secret: bool,
    ) -> Result<(), HarnessError> {
        self.expect_role(device, Role::Device)?;
        self.expect_role(sa, Role::SecurityAgent)?;
        let decl = DeclaredAttachment {
            device,
            sa,
            wrong_secret,
        };
        self.declared.push(decl.clone());
        // A failed attachment is logged and leaves the device unattached.
        let _ = self.perform_attach(&decl, None);
        Ok(())
    }

    fn perform_attach(
        &mut self,
        decl: &DeclaredAttachment,
        run: Option<usize>,
    ) -> Result<(), AttachError> {
        let Some(Principal::Device(dev)) = self.principals.get(&decl.device) else {
            unreachable!("validated on declaration")
        };
        let mut secret = *dev.aaa_secret();
        if decl.wrong_secret {
            secret[0] ^= 0xff;
        }
        let Some(Principal::Agent(sa)) = self.principals.get(&decl.sa) else {
            unreachable!("validated on declaration")
        };
        let result = attach_with_secret(
            decl.device,
            &secret,
            sa,
            &self.aaa,
            self.anonymous,
            self.now,
            &mut self.rng,
        );
        self.attach_log.push(AttachRecord {
            device: decl.device,
            sa: decl.sa,
            run,
            at: self.now,
            handle: result.as_ref().ok().map(|a| a.handle),
            error: result.as_ref().err().map(|e| e.to_string()),
        });
        let attachment = result?;
        self.routes.insert(attachment.handle, decl.device);
        if let Some(Principal::Agent(sa)) = self.principals.get_mut(&decl.sa) {
            sa.install(&attachment);
        }
        if let Some(Principal::Device(dev)) = self.principals.get_mut(&decl.device) {
            dev.install(attachment);
        }
        Ok(())
    }

    fn default_sa(&self, device: PrincipalId) -> Result<PrincipalId, HarnessError> {
        self.declared
            .iter()
            .find(|d| d.device == device)
            .map(|d| d.sa)
            .ok_or_else(|| HarnessError::NoSa(self.name_of(device).into()))
    }

    fn check_faults(&self, spec: &RunSpec) -> Result<(), HarnessError> {
        let index = self.history.len();
        for f in &spec.faults {
            if f.at.protocol() != spec.protocol {
                return Err(HarnessError::Fault(format!(
                    "{} is not a step of {}",
                    f.at, spec.protocol
                )));
            }
            match &f.action {
                FaultAction::FlipBit { field, .. } | FaultAction::ReplaceField { field } => {
                    if f.at.field_index(field).is_none() {
                        return Err(HarnessError::Fault(format!(
                            "{} has no field {field:?} (fields: {})",
                            f.at,
                            f.at.fields().join(", ")
                        )));
                    }
                }
                FaultAction::Replay { from_run } => {
                    let ok = *from_run < index
                        && self.history[*from_run].0 == spec.protocol
                        && self.history[*from_run]
                            .1
                            .entries
                            .iter()
                            .any(|e| e.kind == f.at);
                    if !ok {
                        return Err(HarnessError::Fault(format!(
                            "run {from_run} has no recorded {} to replay",
                            f.at
                        )));
                    }
                }
                FaultAction::FlipSignature if f.at != MessageKind::AuthResp => {
                    return Err(HarnessError::Fault(
                        "flip-signature applies at auth_resp".into(),
                    ))
                }
                FaultAction::WrongAck if f.at != MessageKind::Ack => {
                    return Err(HarnessError::Fault("wrong-ack applies at ack".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Executes one protocol run and records its transcript.
    pub fn run(&mut self, spec: &RunSpec) -> Result<RunResult, HarnessError> {
        self.expect_role(spec.initiator, Role::Device)?;
        self.expect_role(spec.responder, Role::Device)?;
        let sa_i = match spec.initiator_sa {
            Some(sa) => sa,
            None => self.default_sa(spec.initiator)?,
        };
        let sa_j = match spec.responder_sa {
            Some(sa) => sa,
            None => self.default_sa(spec.responder)?,
        };
        self.expect_role(sa_i, Role::SecurityAgent)?;
        self.expect_role(sa_j, Role::SecurityAgent)?;
        self.check_faults(spec)?;

        let index = self.history.len();
        if self.anonymous {
            let fresh: Vec<DeclaredAttachment> = self
                .declared
                .iter()
                .filter(|d| {
                    (d.device == spec.initiator && d.sa == sa_i)
                        || (d.device == spec.responder && d.sa == sa_j)
                })
                .cloned()
                .collect();
            for d in fresh {
                // A failed attachment leaves the device unattached; the SA
                // then refuses its requests.
                let _ = self.perform_attach(&d, Some(index));
            }
        }

        let seed = spec.seed.unwrap_or_else(|| {
            let h = hash256(
                b"resiot/harness/run-seed/v1",
                &[&self.seed.to_be_bytes(), &(index as u64).to_be_bytes()],
            );
            u64::from_be_bytes(h[..8].try_into().expect("8 bytes"))
        });
        let mut rng = rng_from_seed(seed);
        let session = rng.next_u64();

        for (id, behavior) in [
            (spec.initiator, Behavior::Honest),
            (spec.responder, responder_behavior(spec)),
        ] {
            if let Some(Principal::Device(d)) = self.principals.get_mut(&id) {
                d.reset();
                d.behavior = behavior;
            }
        }

        let mut sim = Sim {
            world: self,
            rng,
            clock: SimClock::starting_at(0.0),
            entries: Vec::new(),
            awaiting: BTreeMap::new(),
            token: 0,
            faults: spec.faults.iter().map(|f| (f.clone(), false)).collect(),
        };
        sim.clock.advance_to(sim.world.now);
        let started_at = sim.clock.now();

        let first = {
            let Some(Principal::Device(resp)) = sim.world.principals.get_mut(&spec.responder)
            else {
                unreachable!("role checked")
            };
            match spec.protocol {
                ProtocolKind::RsfGs => resp.expect_gs(session, spec.initiator, sa_j),
                ProtocolKind::RsfAbe => resp.expect_abe(session, spec.initiator, sa_j),
            }
            let Some(Principal::Device(init)) = sim.world.principals.get_mut(&spec.initiator)
            else {
                unreachable!("role checked")
            };
            match spec.protocol {
                ProtocolKind::RsfGs => init.start_gs(session, spec.responder, sa_i, &mut sim.rng),
                ProtocolKind::RsfAbe => init.start_abe(
                    session,
                    spec.responder,
                    sa_i,
                    spec.data.clone(),
                    spec.attributes.clone(),
                    &mut sim.rng,
                ),
            }
        };
        let mut decided = sim.react(spec.initiator, first);
        while decided.is_none() {
            let Some((at, event)) = sim.clock.pop() else {
                break;
            };
            match event {
                Event::Deliver(i) => {
                    sim.clock.advance_to(at);
                    decided = sim.deliver(i);
                }
                Event::Timeout { who, kind, token } => {
                    if sim.awaiting.get(&who) != Some(&(kind, token)) {
                        continue;
                    }
                    sim.clock.advance_to(at);
                    decided = Some(Outcome::Abort {
                        step: kind.step(),
                        reason: FailureReason::Timeout,
                        detail: format!("{} timed out waiting for {kind}", sim.world.name_of(who)),
                    });
                }
            }
        }
        let outcome = decided.unwrap_or_else(|| Outcome::Abort {
            step: 0,
            reason: FailureReason::Timeout,
            detail: "run ended without an outcome".into(),
        });
        let decided_at = sim.clock.now();
        // Messages still in flight reach their receivers but are not acted on.
        while let Some((at, event)) = sim.clock.pop() {
            if let Event::Deliver(i) = event {
                sim.entries[i].delivered_at = Some(at);
                sim.entries[i]
                    .fault
                    .get_or_insert_with(|| "arrived after outcome".into());
            }
        }
        let entries = std::mem::take(&mut sim.entries);
        drop(sim);
        self.now = decided_at;

        let transcript = Transcript {
            principals: self.principal_ids(),
            entries,
        };
        self.history.push((spec.protocol, transcript.clone()));
        let secrets = |w: &World, id| {
            w.device(id)
                .map(|d| d.secrets().clone())
                .unwrap_or_default()
        };
        Ok(RunResult {
            index,
            protocol: spec.protocol,
            initiator: spec.initiator,
            responder: spec.responder,
            initiator_sa: sa_i,
            responder_sa: sa_j,
            session,
            outcome,
            started_at,
            elapsed_ms: decided_at - started_at,
            transcript,
            initiator_secrets: secrets(self, spec.initiator),
            responder_secrets: secrets(self, spec.responder),
        })
    }
}

fn responder_behavior(spec: &RunSpec) -> Behavior {
    spec.faults
        .iter()
        .find_map(|f| match f.action {
            FaultAction::FlipSignature => Some(Behavior::FlipSignature),
            FaultAction::WrongAck => Some(Behavior::WrongAck),
            _ => None,
        })
        .unwrap_or_default()
}

struct Sim<'w> {
    world: &'w mut World,
    rng: ChaCha20Rng,
    clock: SimClock<Event>,
    entries: Vec<TranscriptEntry>,
    awaiting: BTreeMap<PrincipalId, (MessageKind, u64)>,
    token: u64,
    /// Faults and whether each has fired.
    faults: Vec<(Fault, bool)>,
}

impl Sim<'_> {
    fn link_latency(&mut self, from: PrincipalId, to: PrincipalId) -> f64 {
        let both_devices = self.world.role_of(from) == Some(Role::Device)
            && self.world.role_of(to) == Some(Role::Device);
        let base = if both_devices {
            self.world.fabric.device_device_ms
        } else {
            self.world.fabric.device_sa_ms
        };
        let jitter = self.world.fabric.jitter_ms;
        if jitter > 0.0 {
            base + self.rng.gen_range(0.0..jitter)
        } else {
            base
        }
    }

    /// Applies the reaction of `actor` at the current time.
    fn react(&mut self, actor: PrincipalId, r: Reaction) -> Option<Outcome> {
        let send_at = self.clock.now() + r.compute_ms;
        for msg in r.send {
            self.send(actor, msg, send_at);
        }
        match r.await_next {
            Some(kind) => {
                self.token += 1;
                self.awaiting.insert(actor, (kind, self.token));
                let deadline = send_at + self.world.fabric.timeout_for(kind);
                self.clock.schedule(
                    deadline,
                    Event::Timeout {
                        who: actor,
                        kind,
                        token: self.token,
                    },
                );
            }
            None => {
                self.awaiting.remove(&actor);
            }
        }
        if r.outcome.is_some() {
            self.clock.advance_to(send_at);
        }
        r.outcome
    }

    fn send(&mut self, from: PrincipalId, msg: ProtocolMessage, at: f64) {
        let to = self.world.routes.get(&msg.receiver).copied();
        let seq = self.entries.len() as u64;
        let mut delivered = Some(msg.clone());
        let mut fault_label = None;
        if let Some((fault, fired)) = self
            .faults
            .iter_mut()
            .find(|(f, fired)| !*fired && f.at == msg.kind)
        {
            *fired = true;
            let action = fault.action.clone();
            fault_label = Some(action.label());
            delivered = self.mutate(msg.clone(), &action);
        }
        match (&delivered, to) {
            (Some(_), Some(to)) => {
                let t = at + self.link_latency(from, to);
                self.clock.schedule(t, Event::Deliver(seq as usize));
            }
            _ => {
                if to.is_none() {
                    fault_label.get_or_insert_with(|| "unroutable".into());
                }
                delivered = None;
            }
        }
        self.entries.push(TranscriptEntry {
            seq,
            from,
            to: to.unwrap_or(0),
            kind: msg.kind,
            sent_at: at,
            delivered_at: None,
            sent: msg,
            delivered,
            fault: fault_label,
        });
    }

    fn mutate(
        &mut self,
        mut msg: ProtocolMessage,
        action: &FaultAction,
    ) -> Option<ProtocolMessage> {
        match action {
            FaultAction::Drop => return None,
            FaultAction::FlipBit { field, bit } => {
                let f = msg.field_mut(field).expect("field checked");
                if !f.is_empty() {
                    let bit = bit % (f.len() * 8);
                    f[bit / 8] ^= 1 << (bit % 8);
                }
            }
            FaultAction::ReplaceField { field } => {
                let f = msg.field_mut(field).expect("field checked");
                let len = f.len().max(16);
                let mut fresh = vec![0u8; len];
                self.rng.fill_bytes(&mut fresh);
                *f = fresh;
            }
            FaultAction::Replay { from_run } => {
                let old = self.world.history[*from_run]
                    .1
                    .entries
                    .iter()
                    .find(|e| e.kind == msg.kind)
                    .expect("checked before the run");
                let old = old.delivered.as_ref().unwrap_or(&old.sent);
                msg.fields = old.fields.clone();
            }
            FaultAction::FlipSignature | FaultAction::WrongAck => {}
        }
        Some(msg)
    }

    fn deliver(&mut self, i: usize) -> Option<Outcome> {
        let now = self.clock.now();
        self.entries[i].delivered_at = Some(now);
        let to = self.entries[i].to;
        let msg = self.entries[i]
            .delivered
            .clone()
            .expect("only delivered entries are scheduled");
        let costs = self.world.costs.clone();
        let result: Result<Reaction, ProtocolError> = match self.world.principals.get_mut(&to) {
            Some(Principal::Device(d)) => d.handle(&msg, &costs, &mut self.rng),
            Some(Principal::Agent(a)) => a.handle(&msg, &costs, &mut self.rng),
            _ => return None,
        };
        match result {
            Ok(r) => self.react(to, r),
            Err(e) => Some(e.into()),
        }
    }
}

/// Runs rsf-gs between two devices through their SAs.
pub fn run_rsf_gs(
    world: &mut World,
    initiator: PrincipalId,
    responder: PrincipalId,
    sa_i: PrincipalId,
    sa_j: PrincipalId,
) -> Result<RunResult, HarnessError> {
    world.run(&RunSpec::gs(initiator, responder).with_sas(sa_i, sa_j))
}

/// Runs rsf-abe from `sender` to `receiver` through their SAs.
pub fn run_rsf_abe(
    world: &mut World,
    sender: PrincipalId,
    receiver: PrincipalId,
    sa_i: PrincipalId,
    sa_j: PrincipalId,
    data: &[u8],
    attributes: &BTreeSet<u32>,
) -> Result<RunResult, HarnessError> {
    world.run(
        &RunSpec::abe(sender, receiver, data.to_vec(), attributes.clone()).with_sas(sa_i, sa_j),
    )
}
