use std::collections::{BTreeMap, BTreeSet};

use resiot_core::harness::{FabricConfig, FaultAction, RunResult, RunSpec, World};
use resiot_core::perf_model::TimingTable;
use resiot_core::policy::AccessPolicy;
use resiot_core::protocol::{
    transcript_view, variable_values, ComputeCosts, Direction, FailureReason, MessageKind, Outcome,
    PrincipalId, ProtocolKind, Role,
};

const RUNS: u64 = 100;

struct Net {
    world: World,
    d_i: PrincipalId,
    d_j: PrincipalId,
    sa_i: PrincipalId,
    sa_j: PrincipalId,
}

fn net(seed: u64, anonymous: bool) -> Net {
    let table = TimingTable::paper();
    let mut world = World::new(
        seed,
        FabricConfig::from_latency(&table.latency),
        ComputeCosts::from_table(&table).unwrap(),
    )
    .unwrap();
    world.set_anonymous_attachment(anonymous);
    world.setup_abe(4).unwrap();
    let d_i = world.add_device("d_i").unwrap();
    let d_j = world.add_device("d_j").unwrap();
    let policy = AccessPolicy::parse("and(attr0, or(attr1, attr2))").unwrap();
    let sa_i = world
        .add_agent("sa_i", Some("main"), Some(&policy))
        .unwrap();
    let sa_j = world
        .add_agent("sa_j", Some("main"), Some(&policy))
        .unwrap();
    world.attach(d_i, sa_i, false).unwrap();
    world.attach(d_j, sa_j, false).unwrap();
    Net {
        world,
        d_i,
        d_j,
        sa_i,
        sa_j,
    }
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

fn marker(k: u64) -> Vec<u8> {
    format!("PLANTED-MARKER-{k:04}-do-not-leak").into_bytes()
}

/// Alternates rsf-gs and rsf-abe; the rsf-abe data carries a marker.
fn mixed_runs(n: &mut Net) -> Vec<RunResult> {
    (0..RUNS)
        .map(|k| {
            let spec = if k % 2 == 0 {
                RunSpec::gs(n.d_i, n.d_j)
            } else {
                RunSpec::abe(n.d_i, n.d_j, marker(k), [0, 2].into())
            };
            n.world.run(&spec.with_sas(n.sa_i, n.sa_j)).unwrap()
        })
        .collect()
}

#[test]
fn honest_runs_succeed_and_agree_on_keys() {
    let mut n = net(1, false);
    for r in mixed_runs(&mut n) {
        match r.protocol {
            ProtocolKind::RsfGs => assert_eq!(r.outcome, Outcome::Accept, "run {}", r.index),
            ProtocolKind::RsfAbe => {
                assert_eq!(r.outcome, Outcome::Delivered, "run {}", r.index);
                assert_eq!(
                    r.responder_secrets.data_received,
                    r.initiator_secrets.data_sent
                );
            }
        }
        let ki = r
            .initiator_secrets
            .session_key
            .as_ref()
            .expect("initiator key");
        let kj = r
            .responder_secrets
            .session_key
            .as_ref()
            .expect("responder key");
        assert_eq!(ki.as_bytes(), kj.as_bytes());
    }
}

#[test]
fn agents_never_see_planted_secrets() {
    for anonymous in [false, true] {
        let mut n = net(2, anonymous);
        let mut keys = BTreeSet::new();
        for r in mixed_runs(&mut n) {
            let s = &r.initiator_secrets;
            let mut secrets: Vec<Vec<u8>> = Vec::new();
            if let Some(nonce) = s.nonce_i {
                secrets.push(nonce.to_vec());
            }
            if let Some(k) = &s.session_key {
                secrets.push(k.as_bytes().to_vec());
                assert!(keys.insert(k.as_bytes().to_vec()), "session key reused");
            }
            if let Some(d) = &s.data_sent {
                secrets.push(d.clone());
            }
            assert!(!secrets.is_empty());
            for sa in [n.sa_i, n.sa_j] {
                for v in transcript_view(&r.transcript, sa).unwrap() {
                    let wire = v.message.encode();
                    for secret in &secrets {
                        assert!(!contains(&wire, secret), "run {} leaks to SA {sa}", r.index);
                    }
                    assert!(!contains(&wire, b"PLANTED-MARKER"));
                }
            }
        }
    }
}

#[test]
fn unattached_devices_are_refused() {
    let mut n = net(3, false);
    let d_x = n.world.add_device("d_x").unwrap();
    let d_y = n.world.add_device("d_y").unwrap();
    // Attachment with the wrong AAA secret fails closed.
    n.world.attach(d_y, n.sa_j, true).unwrap();
    assert!(n
        .world
        .attach_log()
        .iter()
        .any(|a| a.device == d_y && a.error.is_some()));
    for k in 0..10 {
        for victim in [d_x, d_y] {
            let r = n
                .world
                .run(&RunSpec::gs(n.d_i, victim).with_sas(n.sa_i, n.sa_j))
                .unwrap();
            assert!(
                matches!(
                    r.outcome,
                    Outcome::Abort {
                        step: 3,
                        reason: FailureReason::NotAttached,
                        ..
                    }
                ),
                "{k}: {:?}",
                r.outcome
            );
            // No SA ever answered the unattached device.
            let served = transcript_view(&r.transcript, n.sa_j)
                .unwrap()
                .iter()
                .any(|v| v.direction == Direction::Sent);
            assert!(!served);
        }
        let r = n
            .world
            .run(&RunSpec::abe(d_x, n.d_j, b"x".to_vec(), [0].into()).with_sas(n.sa_i, n.sa_j))
            .unwrap();
        assert!(
            matches!(
                r.outcome,
                Outcome::Abort {
                    reason: FailureReason::NotAttached,
                    ..
                }
            ),
            "{:?}",
            r.outcome
        );
    }
}

fn per_run_values(n: &mut Net) -> BTreeMap<PrincipalId, Vec<BTreeSet<Vec<u8>>>> {
    let runs = mixed_runs(n);
    let mut out: BTreeMap<PrincipalId, Vec<BTreeSet<Vec<u8>>>> = BTreeMap::new();
    for sa in [n.sa_i, n.sa_j] {
        for r in &runs {
            let view = transcript_view(&r.transcript, sa).unwrap();
            assert!(!view.is_empty());
            out.entry(sa).or_default().push(variable_values(&view, sa));
        }
    }
    out
}

#[test]
fn anonymous_attachment_is_untraceable() {
    let mut n = net(4, true);
    for (sa, views) in per_run_values(&mut n) {
        let mut seen: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
        for (run, values) in views.iter().enumerate() {
            for v in values {
                if let Some(prev) = seen.insert(v.clone(), run) {
                    panic!("SA {sa} links runs {prev} and {run} through {}", hex(v));
                }
            }
        }
    }
}

#[test]
fn identity_attachment_is_traceable() {
    let mut n = net(5, false);
    let values = per_run_values(&mut n);
    let views = &values[&n.sa_i];
    let common: BTreeSet<_> = views[0].intersection(&views[1]).collect();
    assert!(
        !common.is_empty(),
        "identity mode should expose a stable device address"
    );
}

fn hex(v: &[u8]) -> String {
    v.iter().map(|b| format!("{b:02x}")).collect()
}

fn abort_of(o: &Outcome) -> (u8, FailureReason) {
    match o {
        Outcome::Abort { step, reason, .. } => (*step, *reason),
        other => panic!("expected abort, got {other:?}"),
    }
}

#[test]
fn faults_abort_at_documented_steps() {
    for seed in 0..10 {
        let mut n = net(100 + seed, seed % 2 == 1);
        let base = n
            .world
            .run(&RunSpec::gs(n.d_i, n.d_j).with_sas(n.sa_i, n.sa_j))
            .unwrap();
        assert_eq!(base.outcome, Outcome::Accept);
        let gs = || RunSpec::gs(n.d_i, n.d_j).with_sas(n.sa_i, n.sa_j);
        let cases: Vec<(RunSpec, (u8, FailureReason))> = vec![
            (
                gs().with_fault(
                    MessageKind::AuthReq,
                    FaultAction::ReplaceField {
                        field: "nonce".into(),
                    },
                ),
                (6, FailureReason::SignatureRejected),
            ),
            (
                gs().with_fault(
                    MessageKind::AuthResp,
                    FaultAction::FlipBit {
                        field: "e_prime_j".into(),
                        bit: 400,
                    },
                ),
                (5, FailureReason::Decryption),
            ),
            (
                gs().with_fault(MessageKind::AuthResp, FaultAction::Drop),
                (4, FailureReason::Timeout),
            ),
            (
                gs().with_fault(
                    MessageKind::AuthResp,
                    FaultAction::Replay {
                        from_run: base.index,
                    },
                ),
                (5, FailureReason::Decryption),
            ),
            (
                gs().with_fault(MessageKind::AuthResp, FaultAction::FlipSignature),
                (6, FailureReason::SignatureRejected),
            ),
            (
                gs().with_fault(
                    MessageKind::SignReq,
                    FaultAction::FlipBit {
                        field: "e_j".into(),
                        bit: 3,
                    },
                ),
                (3, FailureReason::ChannelAuth),
            ),
        ];
        let abe = || {
            RunSpec::abe(n.d_i, n.d_j, b"payload".to_vec(), [0, 1].into()).with_sas(n.sa_i, n.sa_j)
        };
        let abe_cases: Vec<(RunSpec, (u8, FailureReason))> = vec![
            (
                abe().with_fault(
                    MessageKind::DataTransfer,
                    FaultAction::FlipBit {
                        field: "e_double_prime_i".into(),
                        bit: 400,
                    },
                ),
                (5, FailureReason::Decryption),
            ),
            (
                abe().with_fault(MessageKind::Ack, FaultAction::WrongAck),
                (7, FailureReason::AckMismatch),
            ),
            (
                abe().with_fault(MessageKind::DataTransfer, FaultAction::Drop),
                (4, FailureReason::Timeout),
            ),
        ];
        for (spec, expected) in cases.into_iter().chain(abe_cases) {
            let r = n.world.run(&spec).unwrap();
            assert_eq!(
                abort_of(&r.outcome),
                expected,
                "seed {seed} fault {:?}",
                spec.faults
            );
        }
    }
}

#[test]
fn cross_group_agent_is_rejected() {
    let mut n = net(6, false);
    let rogue = n.world.add_agent("sa_rogue", Some("rogue"), None).unwrap();
    n.world.attach(n.d_j, rogue, false).unwrap();
    for _ in 0..5 {
        let r = n
            .world
            .run(&RunSpec::gs(n.d_i, n.d_j).with_sas(n.sa_i, rogue))
            .unwrap();
        assert_eq!(abort_of(&r.outcome), (6, FailureReason::SignatureRejected));
    }
}

#[test]
fn unsatisfied_policy_is_denied() {
    let mut n = net(7, false);
    let r = n
        .world
        .run(
            &RunSpec::abe(n.d_i, n.d_j, b"secret".to_vec(), [1, 2].into()).with_sas(n.sa_i, n.sa_j),
        )
        .unwrap();
    assert_eq!(r.outcome, Outcome::Denied { step: 6 });
    assert_eq!(r.responder_secrets.data_received, None);
}

#[test]
fn transcript_views_respect_participation() {
    let mut n = net(8, false);
    let bystander = n.world.add_passive("kas", Role::KeyAuthority).unwrap();
    let r = n
        .world
        .run(&RunSpec::gs(n.d_i, n.d_j).with_sas(n.sa_i, n.sa_j))
        .unwrap();
    assert!(transcript_view(&r.transcript, 9999).is_err());
    assert!(transcript_view(&r.transcript, bystander)
        .unwrap()
        .is_empty());
    let dev = transcript_view(&r.transcript, n.d_i).unwrap();
    let kinds: Vec<_> = dev.iter().map(|v| v.message.kind).collect();
    assert_eq!(kinds.first(), Some(&MessageKind::AuthReq));
    assert!(dev.windows(2).all(|w| w[0].at <= w[1].at));
}

#[test]
fn runs_are_deterministic() {
    let wire = |seed| {
        let mut n = net(seed, true);
        mixed_runs(&mut n)
            .iter()
            .take(10)
            .flat_map(|r| {
                r.transcript
                    .entries
                    .iter()
                    .map(|e| e.sent.encode())
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(wire(9), wire(9));
    assert_ne!(wire(9), wire(10));
}

#[test]
fn out_of_order_messages_are_rejected() {
    use resiot_core::crypto_suite::rng_from_seed;
    use resiot_core::protocol::{Device, ProtocolMessage};

    let mut rng = rng_from_seed(1);
    let costs = ComputeCosts::zero();
    let mut d = Device::new(2, "d_j", [7; 32]);
    let stray = ProtocolMessage::new(MessageKind::AuthResp, 5, 1, 2, vec![vec![1], vec![2]]);
    let e = d.handle(&stray, &costs, &mut rng).unwrap_err();
    assert_eq!(e.reason, FailureReason::StepOrder);

    // A responder waiting for auth_req refuses a later step and a foreign session.
    d.expect_gs(5, 1, 3);
    let skip = ProtocolMessage::new(MessageKind::SignResp, 5, 3, 2, vec![vec![0], vec![0]]);
    assert_eq!(
        d.handle(&skip, &costs, &mut rng).unwrap_err().reason,
        FailureReason::StepOrder
    );
    let other = ProtocolMessage::new(MessageKind::AuthReq, 6, 1, 2, vec![vec![0], vec![0]]);
    assert_eq!(
        d.handle(&other, &costs, &mut rng).unwrap_err().reason,
        FailureReason::StepOrder
    );
}
