//! Scenario files: principals, attachments, protocol runs and faults in one
//! TOML document, plus the report produced by running them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{FabricConfig, Fault, FaultAction, RunResult, RunSpec, World};
use crate::perf_model::TimingTable;
use crate::policy::AccessPolicy;
use crate::protocol::{ComputeCosts, MessageKind, Outcome, ProtocolKind, Role};

/// A validation or I/O problem, located by a path into the scenario.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{path}: {message}")]
pub struct ScenarioError {
    pub path: String,
    pub message: String,
}

impl ScenarioError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Where primitive timings come from.
#[derive(Clone, Debug, PartialEq)]
pub enum TimingSource {
    Paper,
    /// All computation free; only link latencies advance the clock.
    Zero,
    File(PathBuf),
    Table(TimingTable),
}

impl TimingSource {
    pub fn parse(text: &str, base: Option<&Path>) -> Self {
        match text {
            "paper" => TimingSource::Paper,
            "zero" => TimingSource::Zero,
            path => {
                let p = PathBuf::from(path);
                TimingSource::File(match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p,
                })
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FabricSection {
    /// Overrides `t_COM^D`, the device-to-device message latency.
    pub device_device_ms: Option<f64>,
    /// Overrides `t_COM^{D-SA}`, the device-SA request/response round trip.
    pub device_sa_ms: Option<f64>,
    pub step_timeout_ms: Option<f64>,
    /// Per-message deadlines keyed by message kind.
    #[serde(default)]
    pub step_timeouts: BTreeMap<String, f64>,
    pub jitter_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbeSection {
    pub universe: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrincipalSpec {
    pub name: String,
    pub role: Role,
    /// SA only: group to enroll in. Defaults to `main`.
    pub group: Option<String>,
    /// SA only: ABE key policy.
    pub policy: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttachmentSpec {
    pub device: String,
    pub sa: String,
    /// The device presents a secret the AAA does not know.
    #[serde(default)]
    pub wrong_secret: bool,
}

/// A step given either by number or by message kind name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepRef {
    Number(u8),
    Kind(String),
}

impl StepRef {
    /// The message sent in this step. Step 1 of rsf-abe is `abac_init`.
    pub fn resolve(&self, protocol: ProtocolKind) -> Option<MessageKind> {
        match self {
            StepRef::Number(n) => protocol.sequence().iter().copied().find(|k| k.step() == *n),
            StepRef::Kind(name) => {
                MessageKind::from_name(name).filter(|k| k.protocol() == protocol)
            }
        }
    }
}

impl std::fmt::Display for StepRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepRef::Number(n) => write!(f, "{n}"),
            StepRef::Kind(k) => write!(f, "{k:?}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub at: StepRef,
    /// drop | flip-bit | replace-field | replay | flip-signature | wrong-ack
    pub action: String,
    pub field: Option<String>,
    pub bit: Option<usize>,
    pub from_run: Option<usize>,
}

impl FaultSpec {
    pub fn from_action(at: StepRef, action: &FaultAction) -> Self {
        let mut spec = Self {
            at,
            action: String::new(),
            field: None,
            bit: None,
            from_run: None,
        };
        spec.action = match action {
            FaultAction::Drop => "drop",
            FaultAction::FlipBit { field, bit } => {
                spec.field = Some(field.clone());
                spec.bit = Some(*bit);
                "flip-bit"
            }
            FaultAction::ReplaceField { field } => {
                spec.field = Some(field.clone());
                "replace-field"
            }
            FaultAction::Replay { from_run } => {
                spec.from_run = Some(*from_run);
                "replay"
            }
            FaultAction::FlipSignature => "flip-signature",
            FaultAction::WrongAck => "wrong-ack",
        }
        .into();
        spec
    }

    fn to_fault(&self, protocol: ProtocolKind, path: &str) -> Result<Fault, ScenarioError> {
        let at = self.at.resolve(protocol).ok_or_else(|| {
            ScenarioError::new(
                format!("{path}.at"),
                format!("unknown step {} for {protocol}", self.at),
            )
        })?;
        let need_field = || {
            let field = self.field.clone().ok_or_else(|| {
                ScenarioError::new(format!("{path}.field"), "required for this action")
            })?;
            if at.field_index(&field).is_none() {
                return Err(ScenarioError::new(
                    format!("{path}.field"),
                    format!(
                        "{at} has no field {field:?} (fields: {})",
                        at.fields().join(", ")
                    ),
                ));
            }
            Ok(field)
        };
        let action = match self.action.as_str() {
            "drop" => FaultAction::Drop,
            "flip-bit" => FaultAction::FlipBit {
                field: need_field()?,
                bit: self.bit.unwrap_or(0),
            },
            "replace-field" => FaultAction::ReplaceField { field: need_field()? },
            "replay" => FaultAction::Replay {
                from_run: self
                    .from_run
                    .ok_or_else(|| ScenarioError::new(format!("{path}.from_run"), "required for replay"))?,
            },
            "flip-signature" if at == MessageKind::AuthResp => FaultAction::FlipSignature,
            "wrong-ack" if at == MessageKind::Ack => FaultAction::WrongAck,
            "flip-signature" | "wrong-ack" => {
                return Err(ScenarioError::new(
                    format!("{path}.at"),
                    format!("{} is a responder misbehavior at auth_resp (flip-signature) or ack (wrong-ack)", self.action),
                ))
            }
            other => {
                return Err(ScenarioError::new(
                    format!("{path}.action"),
                    format!("unknown action {other:?}"),
                ))
            }
        };
        Ok(Fault { at, action })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpecToml {
    pub protocol: ProtocolKind,
    pub initiator: String,
    pub responder: String,
    pub initiator_sa: Option<String>,
    pub responder_sa: Option<String>,
    /// rsf-abe payload as UTF-8 text.
    pub data: Option<String>,
    /// rsf-abe payload as hex, instead of `data`.
    pub data_hex: Option<String>,
    /// rsf-abe ciphertext attribute set.
    #[serde(default)]
    pub attributes: Vec<u32>,
    /// accept | delivered | denied | abort (aliases: reject, failure)
    pub expect: Option<String>,
    pub expect_step: Option<u8>,
    pub expect_reason: Option<String>,
    pub seed: Option<u64>,
    #[serde(default, rename = "fault")]
    pub faults: Vec<FaultSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub anonymous_attachment: bool,
    /// `paper`, `zero`, or a path to a timing table (relative to the file).
    #[serde(default = "default_timings")]
    pub timings: String,
    #[serde(default)]
    pub fabric: FabricSection,
    pub abe: Option<AbeSection>,
    #[serde(default, rename = "principal")]
    pub principals: Vec<PrincipalSpec>,
    #[serde(default, rename = "attachment")]
    pub attachments: Vec<AttachmentSpec>,
    #[serde(default, rename = "run")]
    pub runs: Vec<RunSpecToml>,
    /// Directory relative timing paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
    /// Replaces `timings` when set.
    #[serde(skip)]
    pub timing_override: Option<TimingTable>,
}

fn default_timings() -> String {
    "paper".into()
}

const DEFAULT_GROUP: &str = "main";

fn normalize_expect(e: &str) -> Option<&'static str> {
    Some(match e {
        "accept" => "accept",
        "delivered" => "delivered",
        "denied" => "denied",
        "abort" | "reject" | "failure" => "abort",
        _ => return None,
    })
}

fn parse_reason(r: &str) -> bool {
    [
        "step-order",
        "decryption",
        "signature-rejected",
        "channel-auth",
        "not-attached",
        "timeout",
        "ack-mismatch",
        "malformed",
    ]
    .contains(&r)
}

impl Scenario {
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self, ScenarioError> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| {
            let at = e
                .span()
                .map(|r| {
                    let line = text[..r.start].matches('\n').count() + 1;
                    format!("line {line}")
                })
                .unwrap_or_else(|| "scenario".into());
            ScenarioError::new(at, e.message())
        })?;
        s.base_dir = base_dir.map(Path::to_path_buf);
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::new(path.display().to_string(), e.to_string()))?;
        let mut s = Self::from_toml_str(&text, path.parent())?;
        if s.name.is_empty() {
            s.name = path
                .file_stem()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn timing_table(&self) -> Result<TimingTable, ScenarioError> {
        if let Some(t) = &self.timing_override {
            return Ok(t.clone());
        }
        match TimingSource::parse(&self.timings, self.base_dir.as_deref()) {
            TimingSource::Paper => Ok(TimingTable::paper()),
            TimingSource::Zero => Ok(zero_table()),
            TimingSource::Table(t) => Ok(t),
            TimingSource::File(p) => {
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| ScenarioError::new("timings", format!("{}: {e}", p.display())))?;
                TimingTable::from_toml_str(&text)
                    .map_err(|e| ScenarioError::new("timings", e.to_string()))
            }
        }
    }

    fn fabric_config(&self, table: &TimingTable) -> Result<FabricConfig, ScenarioError> {
        let mut lat = table.latency;
        let f = &self.fabric;
        if let Some(v) = f.device_device_ms {
            lat.device_device_ms = v;
        }
        if let Some(v) = f.device_sa_ms {
            lat.device_sa_ms = v;
        }
        let mut fabric = FabricConfig::from_latency(&lat);
        if let Some(v) = f.step_timeout_ms {
            fabric.step_timeout_ms = v;
        }
        if let Some(v) = f.jitter_ms {
            fabric.jitter_ms = v;
        }
        for (name, v) in &f.step_timeouts {
            let kind = MessageKind::from_name(name).ok_or_else(|| {
                ScenarioError::new(
                    format!("fabric.step_timeouts.{name}"),
                    "unknown message kind",
                )
            })?;
            fabric.step_timeouts.insert(kind, *v);
        }
        fabric
            .validate()
            .map_err(|e| ScenarioError::new("fabric", e.to_string()))?;
        Ok(fabric)
    }

    /// Checks every reference and value, reporting the first problem with its
    /// location.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let table = self.timing_table()?;
        ComputeCosts::from_table(&table)
            .map_err(|e| ScenarioError::new("timings", e.to_string()))?;
        self.fabric_config(&table)?;
        if let Some(abe) = &self.abe {
            if abe.universe == 0 {
                return Err(ScenarioError::new("abe.universe", "must be at least 1"));
            }
        }

        let mut roles: BTreeMap<&str, Role> = BTreeMap::new();
        for (i, p) in self.principals.iter().enumerate() {
            let path = format!("principal[{i}]");
            if p.name.is_empty() {
                return Err(ScenarioError::new(
                    format!("{path}.name"),
                    "must not be empty",
                ));
            }
            if roles.insert(&p.name, p.role).is_some() {
                return Err(ScenarioError::new(
                    format!("{path}.name"),
                    format!("duplicate name {:?}", p.name),
                ));
            }
            if p.role != Role::SecurityAgent && (p.group.is_some() || p.policy.is_some()) {
                return Err(ScenarioError::new(
                    path,
                    "only security agents take group or policy",
                ));
            }
            if let Some(text) = &p.policy {
                let policy = AccessPolicy::parse(text)
                    .map_err(|e| ScenarioError::new(format!("{path}.policy"), e.to_string()))?;
                let Some(abe) = &self.abe else {
                    return Err(ScenarioError::new(
                        format!("{path}.policy"),
                        "requires an [abe] section",
                    ));
                };
                policy
                    .validate_universe(abe.universe)
                    .map_err(|e| ScenarioError::new(format!("{path}.policy"), e.to_string()))?;
            }
        }
        let check = |path: String, name: &str, role: Role| -> Result<(), ScenarioError> {
            match roles.get(name) {
                None => Err(ScenarioError::new(
                    path,
                    format!("unknown principal {name:?}"),
                )),
                Some(r) if *r != role => Err(ScenarioError::new(
                    path,
                    format!("{name:?} is a {r:?}, expected {role:?}"),
                )),
                Some(_) => Ok(()),
            }
        };
        for (i, a) in self.attachments.iter().enumerate() {
            check(format!("attachment[{i}].device"), &a.device, Role::Device)?;
            check(format!("attachment[{i}].sa"), &a.sa, Role::SecurityAgent)?;
        }
        for (i, r) in self.runs.iter().enumerate() {
            let path = format!("run[{i}]");
            check(format!("{path}.initiator"), &r.initiator, Role::Device)?;
            check(format!("{path}.responder"), &r.responder, Role::Device)?;
            for (field, dev, sa) in [
                ("initiator_sa", &r.initiator, &r.initiator_sa),
                ("responder_sa", &r.responder, &r.responder_sa),
            ] {
                match sa {
                    Some(sa) => check(format!("{path}.{field}"), sa, Role::SecurityAgent)?,
                    None => {
                        if !self.attachments.iter().any(|a| &a.device == dev) {
                            return Err(ScenarioError::new(
                                format!("{path}.{field}"),
                                format!("required: {dev:?} has no declared attachment"),
                            ));
                        }
                    }
                }
            }
            if r.protocol == ProtocolKind::RsfAbe {
                let Some(abe) = &self.abe else {
                    return Err(ScenarioError::new(
                        format!("{path}.protocol"),
                        "rsf-abe requires an [abe] section",
                    ));
                };
                if r.attributes.is_empty() {
                    return Err(ScenarioError::new(
                        format!("{path}.attributes"),
                        "must not be empty for rsf-abe",
                    ));
                }
                if let Some(a) = r.attributes.iter().find(|a| **a >= abe.universe) {
                    return Err(ScenarioError::new(
                        format!("{path}.attributes"),
                        format!("attribute {a} outside universe of {}", abe.universe),
                    ));
                }
            }
            if r.data.is_some() && r.data_hex.is_some() {
                return Err(ScenarioError::new(
                    format!("{path}.data_hex"),
                    "give either data or data_hex",
                ));
            }
            if let Some(h) = &r.data_hex {
                hex::decode(h)
                    .map_err(|e| ScenarioError::new(format!("{path}.data_hex"), e.to_string()))?;
            }
            if let Some(e) = &r.expect {
                if normalize_expect(e).is_none() {
                    return Err(ScenarioError::new(
                        format!("{path}.expect"),
                        format!("unknown outcome {e:?} (accept, delivered, denied, abort)"),
                    ));
                }
            }
            if let Some(reason) = &r.expect_reason {
                if !parse_reason(reason) {
                    return Err(ScenarioError::new(
                        format!("{path}.expect_reason"),
                        format!("unknown failure reason {reason:?}"),
                    ));
                }
            }
            for (k, f) in r.faults.iter().enumerate() {
                let fpath = format!("{path}.fault[{k}]");
                let fault = f.to_fault(r.protocol, &fpath)?;
                if let FaultAction::Replay { from_run } = fault.action {
                    let ok = from_run < i && self.runs[from_run].protocol == r.protocol;
                    if !ok {
                        return Err(ScenarioError::new(
                            format!("{fpath}.from_run"),
                            format!("must name an earlier {} run", r.protocol),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

fn zero_table() -> TimingTable {
    let paper = TimingTable::paper();
    let zero = |label: &str| crate::perf_model::PrimitiveTimings {
        label: label.into(),
        pairing: Some(0.0),
        exp_g1: Some(0.0),
        mul_g1: Some(0.0),
        exp_g2: Some(0.0),
        mul_g2: Some(0.0),
        exp_gt: Some(0.0),
        mul_gt: Some(0.0),
        dh_ms: Some(0.0),
        sym_enc_ms: Some(0.0),
    };
    TimingTable {
        provenance: crate::perf_model::Provenance::File,
        device: zero("zero"),
        sa: zero("zero"),
        latency: paper.latency,
        reported: None,
    }
}

/// Adds a fault to run `run` at `at` and revalidates.
pub fn inject_fault(
    scenario: &Scenario,
    run: usize,
    at: StepRef,
    action: FaultAction,
) -> Result<Scenario, ScenarioError> {
    let mut s = scenario.clone();
    let r = s
        .runs
        .get_mut(run)
        .ok_or_else(|| ScenarioError::new(format!("run[{run}]"), "no such run"))?;
    r.faults.push(FaultSpec::from_action(at, &action));
    s.validate()?;
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrincipalReport {
    pub id: u64,
    pub name: String,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttachmentReport {
    pub device: String,
    pub sa: String,
    pub run: Option<usize>,
    pub at_ms: f64,
    pub ok: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MessageReport {
    pub seq: u64,
    pub kind: MessageKind,
    pub from: String,
    pub to: String,
    pub sent_at_ms: f64,
    pub delivered_at_ms: Option<f64>,
    pub fault: Option<String>,
    /// Hex of the encoded message as sent.
    pub wire: String,
    /// Hex of the delivered message when a fault changed it.
    pub delivered_wire: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub index: usize,
    pub protocol: ProtocolKind,
    pub initiator: String,
    pub responder: String,
    pub initiator_sa: String,
    pub responder_sa: String,
    pub session: String,
    pub outcome: Outcome,
    pub expect: Option<String>,
    pub expect_step: Option<u8>,
    pub expect_reason: Option<String>,
    pub matched: bool,
    pub started_at_ms: f64,
    pub elapsed_ms: f64,
    pub messages: Vec<MessageReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub anonymous_attachment: bool,
    pub timings: String,
    pub fabric: FabricConfig,
    pub principals: Vec<PrincipalReport>,
    pub attachments: Vec<AttachmentReport>,
    pub runs: Vec<RunReport>,
    pub all_matched: bool,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of the JSON report, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// One row per run.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "run,protocol,initiator,responder,outcome,step,reason,expect,matched,elapsed_ms,messages\n",
        );
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.index,
                r.protocol,
                r.initiator,
                r.responder,
                r.outcome.label(),
                r.outcome.step().map(|s| s.to_string()).unwrap_or_default(),
                r.outcome
                    .reason()
                    .map(|s| s.to_string())
                    .unwrap_or_default(),
                r.expect.as_deref().unwrap_or(""),
                r.matched,
                r.elapsed_ms,
                r.messages.len()
            );
        }
        out
    }
}

fn matches_expectation(spec: &RunSpecToml, outcome: &Outcome) -> bool {
    let label_ok = spec
        .expect
        .as_deref()
        .and_then(normalize_expect)
        .is_none_or(|e| e == outcome.label());
    let step_ok = spec.expect_step.is_none_or(|s| outcome.step() == Some(s));
    let reason_ok = spec
        .expect_reason
        .as_deref()
        .is_none_or(|r| outcome.reason().map(|x| x.to_string()).as_deref() == Some(r));
    label_ok && step_ok && reason_ok
}

/// Builds the world a scenario describes: principals, keys and attachments.
pub fn build_world(scenario: &Scenario) -> Result<World, ScenarioError> {
    scenario.validate()?;
    let table = scenario.timing_table()?;
    let costs = ComputeCosts::from_table(&table)
        .map_err(|e| ScenarioError::new("timings", e.to_string()))?;
    let fabric = scenario.fabric_config(&table)?;
    let mut world = World::new(scenario.seed, fabric, costs)
        .map_err(|e| ScenarioError::new("fabric", e.to_string()))?;
    world.set_anonymous_attachment(scenario.anonymous_attachment);
    if let Some(abe) = &scenario.abe {
        world
            .setup_abe(abe.universe)
            .map_err(|e| ScenarioError::new("abe", e.to_string()))?;
    }
    for (i, p) in scenario.principals.iter().enumerate() {
        let path = format!("principal[{i}]");
        let r = match p.role {
            Role::Device => world.add_device(&p.name),
            Role::SecurityAgent => {
                let policy = p
                    .policy
                    .as_deref()
                    .map(AccessPolicy::parse)
                    .transpose()
                    .map_err(|e| ScenarioError::new(format!("{path}.policy"), e.to_string()))?;
                world.add_agent(
                    &p.name,
                    Some(p.group.as_deref().unwrap_or(DEFAULT_GROUP)),
                    policy.as_ref(),
                )
            }
            role => world.add_passive(&p.name, role),
        };
        r.map_err(|e| ScenarioError::new(path, e.to_string()))?;
    }
    for (i, a) in scenario.attachments.iter().enumerate() {
        let path = format!("attachment[{i}]");
        let dev = world
            .id_of(&a.device)
            .map_err(|e| ScenarioError::new(&path, e.to_string()))?;
        let sa = world
            .id_of(&a.sa)
            .map_err(|e| ScenarioError::new(&path, e.to_string()))?;
        world
            .attach(dev, sa, a.wrong_secret)
            .map_err(|e| ScenarioError::new(&path, e.to_string()))?;
    }
    Ok(world)
}

/// The harness-level spec for run `i` of the scenario.
pub fn run_spec(scenario: &Scenario, world: &World, i: usize) -> Result<RunSpec, ScenarioError> {
    let r = &scenario.runs[i];
    let path = format!("run[{i}]");
    let id = |name: &str, field: &str| {
        world
            .id_of(name)
            .map_err(|e| ScenarioError::new(format!("{path}.{field}"), e.to_string()))
    };
    let data = match (&r.data, &r.data_hex) {
        (Some(d), _) => d.as_bytes().to_vec(),
        (None, Some(h)) => hex::decode(h)
            .map_err(|e| ScenarioError::new(format!("{path}.data_hex"), e.to_string()))?,
        (None, None) => Vec::new(),
    };
    let faults = r
        .faults
        .iter()
        .enumerate()
        .map(|(k, f)| f.to_fault(r.protocol, &format!("{path}.fault[{k}]")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunSpec {
        protocol: r.protocol,
        initiator: id(&r.initiator, "initiator")?,
        responder: id(&r.responder, "responder")?,
        initiator_sa: r
            .initiator_sa
            .as_deref()
            .map(|n| id(n, "initiator_sa"))
            .transpose()?,
        responder_sa: r
            .responder_sa
            .as_deref()
            .map(|n| id(n, "responder_sa"))
            .transpose()?,
        data,
        attributes: r.attributes.iter().copied().collect::<BTreeSet<u32>>(),
        faults,
        seed: r.seed,
    })
}

/// Runs every run of the scenario in order, returning the report and the
/// raw results (which carry session secrets for testing).
pub fn run_scenario_detailed(
    scenario: &Scenario,
) -> Result<(ScenarioReport, Vec<RunResult>), ScenarioError> {
    let mut world = build_world(scenario)?;
    let mut results = Vec::new();
    let mut runs = Vec::new();
    for i in 0..scenario.runs.len() {
        let spec = run_spec(scenario, &world, i)?;
        let result = world
            .run(&spec)
            .map_err(|e| ScenarioError::new(format!("run[{i}]"), e.to_string()))?;
        let r = &scenario.runs[i];
        let name = |id| world.name_of(id).to_string();
        let messages = result
            .transcript
            .entries
            .iter()
            .map(|e| {
                let wire = hex::encode(e.sent.encode());
                let delivered_wire = e
                    .delivered
                    .as_ref()
                    .map(|m| hex::encode(m.encode()))
                    .filter(|d| *d != wire);
                MessageReport {
                    seq: e.seq,
                    kind: e.kind,
                    from: name(e.from),
                    to: if e.to == 0 { "?".into() } else { name(e.to) },
                    sent_at_ms: e.sent_at,
                    delivered_at_ms: e.delivered_at,
                    fault: e.fault.clone(),
                    wire,
                    delivered_wire,
                }
            })
            .collect();
        runs.push(RunReport {
            index: i,
            protocol: result.protocol,
            initiator: name(result.initiator),
            responder: name(result.responder),
            initiator_sa: name(result.initiator_sa),
            responder_sa: name(result.responder_sa),
            session: format!("{:016x}", result.session),
            outcome: result.outcome.clone(),
            expect: r.expect.clone(),
            expect_step: r.expect_step,
            expect_reason: r.expect_reason.clone(),
            matched: matches_expectation(r, &result.outcome),
            started_at_ms: result.started_at,
            elapsed_ms: result.elapsed_ms,
            messages,
        });
        results.push(result);
    }
    let table = scenario.timing_table()?;
    let report = ScenarioReport {
        name: scenario.name.clone(),
        seed: scenario.seed,
        anonymous_attachment: scenario.anonymous_attachment,
        timings: match &scenario.timing_override {
            Some(t) => t.provenance.to_string(),
            None => format!("{} ({})", scenario.timings, table.provenance),
        },
        fabric: world.fabric().clone(),
        principals: world
            .principal_ids()
            .into_iter()
            .map(|id| PrincipalReport {
                id,
                name: world.name_of(id).to_string(),
                role: world.role_of(id).expect("listed"),
            })
            .collect(),
        attachments: world
            .attach_log()
            .iter()
            .map(|a| AttachmentReport {
                device: world.name_of(a.device).to_string(),
                sa: world.name_of(a.sa).to_string(),
                run: a.run,
                at_ms: a.at,
                ok: a.error.is_none(),
                error: a.error.clone(),
            })
            .collect(),
        all_matched: runs.iter().all(|r| r.matched),
        runs,
    };
    Ok((report, results))
}

pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioReport, ScenarioError> {
    run_scenario_detailed(scenario).map(|(r, _)| r)
}
