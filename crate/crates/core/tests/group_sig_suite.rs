use rand::{Rng, RngCore};
use resiot_core::crypto_suite::{rng_from_seed, BilinearSuite};
use resiot_core::group_sig::{
    gs_enroll, gs_open, gs_setup, gs_sign, gs_verify, gs_verify_bytes, GroupSignature, MemberKey,
};

const MEMBERS: u32 = 12;

fn group(seed: u64) -> (resiot_core::group_sig::GroupIssuerKey, Vec<MemberKey>) {
    let mut rng = rng_from_seed(seed);
    let (_, mut issuer) = gs_setup(&BilinearSuite, &mut rng);
    let members = (1..=MEMBERS)
        .map(|i| gs_enroll(&mut issuer, i, &mut rng).unwrap())
        .collect();
    (issuer, members)
}

#[test]
fn hundred_messages_verify_and_open() {
    let (issuer, members) = group(11);
    let gpk = issuer.public_key().clone();
    let mut rng = rng_from_seed(12);
    for n in 0..100 {
        let mut msg = vec![0u8; rng.gen_range(0..200)];
        rng.fill_bytes(&mut msg);
        let signer = &members[n % members.len()];
        let sig = gs_sign(&gpk, signer, &msg, &mut rng);
        let decoded = GroupSignature::from_bytes(&sig.to_bytes()).unwrap();
        gs_verify(&gpk, &msg, &decoded).unwrap();
        assert_eq!(gs_open(&issuer, &msg, &decoded).unwrap(), signer.index);
        msg.push(1);
        assert!(
            gs_verify(&gpk, &msg, &sig).is_err(),
            "message {n} extension verified"
        );
    }
}

#[test]
fn every_member_is_recovered_by_open() {
    let (issuer, members) = group(21);
    let mut rng = rng_from_seed(22);
    for m in &members {
        let sig = gs_sign(issuer.public_key(), m, b"open me", &mut rng);
        assert_eq!(gs_open(&issuer, b"open me", &sig).unwrap(), m.index);
    }
}

#[test]
fn cross_group_verification_fails() {
    let (a, ma) = group(31);
    let (b, mb) = group(32);
    let mut rng = rng_from_seed(33);
    for (i, (x, y)) in ma.iter().zip(&mb).enumerate() {
        let msg = format!("cross {i}");
        let sa = gs_sign(a.public_key(), x, msg.as_bytes(), &mut rng);
        let sb = gs_sign(b.public_key(), y, msg.as_bytes(), &mut rng);
        assert!(gs_verify(b.public_key(), msg.as_bytes(), &sa).is_err());
        assert!(gs_verify(a.public_key(), msg.as_bytes(), &sb).is_err());
        assert!(gs_open(&b, msg.as_bytes(), &sa).is_err());
        // Signing with a foreign member key under this group's parameters.
        let forged = gs_sign(a.public_key(), y, msg.as_bytes(), &mut rng);
        assert!(gs_verify(a.public_key(), msg.as_bytes(), &forged).is_err());
    }
}

#[test]
fn signatures_are_unlinkable_bytes() {
    let (issuer, members) = group(41);
    let mut rng = rng_from_seed(42);
    let s1 = gs_sign(issuer.public_key(), &members[0], b"m", &mut rng).to_bytes();
    let s2 = gs_sign(issuer.public_key(), &members[0], b"m", &mut rng).to_bytes();
    assert_ne!(s1, s2);
    assert!(gs_verify_bytes(issuer.public_key(), b"m", &s1[..s1.len() - 1]).is_err());
}

#[test]
fn duplicate_enrollment_is_refused() {
    let (mut issuer, _) = group(51);
    let mut rng = rng_from_seed(52);
    assert!(gs_enroll(&mut issuer, 1, &mut rng).is_err());
}
