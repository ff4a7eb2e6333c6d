//! BBS short group signatures with issuer-side opening.
//!
//! A signature is a linear encryption `(T1, T2, T3)` of the member's
//! certificate `A` under `(u, v, h)` plus a Fiat-Shamir proof of knowledge of
//! `(alpha, beta, x, x*alpha, x*beta)` such that `A^(gamma + x) = g1`.
//! Anyone holding the [`GroupPublicKey`] can verify; only the issuer, who
//! knows the linear-encryption trapdoor `(xi1, xi2)`, can recover `A` and
//! with it the enrolled member index.

use std::collections::BTreeMap;

use ark_ff::{Field, Zero};
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto_suite::{hash_to_scalar, ops, BilinearSuite, Gt, Scalar, G1, G2};

pub type MemberId = u32;

const CHALLENGE_LABEL: &[u8] = b"resiot/bbs/challenge/v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupSigError {
    #[error("malformed signature: {0}")]
    Malformed(#[from] DecodeError),
    #[error("signature rejected: challenge mismatch")]
    ChallengeMismatch,
    #[error("member {0} is already enrolled")]
    DuplicateMember(MemberId),
    #[error("signature does not open to any enrolled member")]
    UnknownSigner,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupPublicKey {
    pub g1: G1,
    pub g2: G2,
    pub h: G1,
    pub u: G1,
    pub v: G1,
    pub w: G2,
    /// e(g1, g2), fixed at setup.
    pub e_g1_g2: Gt,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupIssuerKey {
    gamma: Scalar,
    xi1: Scalar,
    xi2: Scalar,
    gpk: GroupPublicKey,
    registry: BTreeMap<MemberId, G1>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemberKey {
    pub index: MemberId,
    pub a: G1,
    pub x: Scalar,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupSignature {
    pub t1: G1,
    pub t2: G1,
    pub t3: G1,
    pub c: Scalar,
    pub s_alpha: Scalar,
    pub s_beta: Scalar,
    pub s_x: Scalar,
    pub s_delta1: Scalar,
    pub s_delta2: Scalar,
}

pub fn gs_setup<R: RngCore + CryptoRng>(
    suite: &BilinearSuite,
    rng: &mut R,
) -> (GroupPublicKey, GroupIssuerKey) {
    let g1 = suite.g1();
    let g2 = suite.g2();
    let h = ops::g1_exp(&g1, &suite.random_nonzero_scalar(rng));
    let xi1 = suite.random_nonzero_scalar(rng);
    let xi2 = suite.random_nonzero_scalar(rng);
    let u = ops::g1_exp(&h, &xi1.inverse().expect("non-zero"));
    let v = ops::g1_exp(&h, &xi2.inverse().expect("non-zero"));
    let gamma = suite.random_nonzero_scalar(rng);
    let w = ops::g2_exp(&g2, &gamma);
    let gpk = GroupPublicKey {
        g1,
        g2,
        h,
        u,
        v,
        w,
        e_g1_g2: suite.pairing(&g1, &g2),
    };
    let issuer = GroupIssuerKey {
        gamma,
        xi1,
        xi2,
        gpk: gpk.clone(),
        registry: BTreeMap::new(),
    };
    (gpk, issuer)
}

/// Issues the membership certificate `A = g1^(1/(gamma + x))` for `index`.
pub fn gs_enroll<R: RngCore + CryptoRng>(
    issuer: &mut GroupIssuerKey,
    index: MemberId,
    rng: &mut R,
) -> Result<MemberKey, GroupSigError> {
    if issuer.registry.contains_key(&index) {
        return Err(GroupSigError::DuplicateMember(index));
    }
    let (x, inv) = loop {
        let x = BilinearSuite.random_nonzero_scalar(rng);
        if let Some(inv) = (issuer.gamma + x).inverse() {
            break (x, inv);
        }
    };
    let a = ops::g1_exp(&issuer.gpk.g1, &inv);
    issuer.registry.insert(index, a);
    Ok(MemberKey { index, a, x })
}

pub fn gs_sign<R: RngCore + CryptoRng>(
    gpk: &GroupPublicKey,
    member: &MemberKey,
    message: &[u8],
    rng: &mut R,
) -> GroupSignature {
    let suite = BilinearSuite;
    let alpha = suite.random_scalar(rng);
    let beta = suite.random_scalar(rng);
    let r_alpha = suite.random_scalar(rng);
    let r_beta = suite.random_scalar(rng);
    let r_x = suite.random_scalar(rng);
    let r_delta1 = suite.random_scalar(rng);
    let r_delta2 = suite.random_scalar(rng);

    let t1 = ops::g1_exp(&gpk.u, &alpha);
    let t2 = ops::g1_exp(&gpk.v, &beta);
    let t3 = ops::g1_mul(&member.a, &ops::g1_exp(&gpk.h, &(alpha + beta)));
    let delta1 = member.x * alpha;
    let delta2 = member.x * beta;

    let r1 = ops::g1_exp(&gpk.u, &r_alpha);
    let r2 = ops::g1_exp(&gpk.v, &r_beta);
    let r3 = ops::gt_mul(
        &ops::gt_mul(
            &ops::gt_exp(&ops::pairing(&t3, &gpk.g2), &r_x),
            &ops::gt_exp(&ops::pairing(&gpk.h, &gpk.w), &(-r_alpha - r_beta)),
        ),
        &ops::gt_exp(&ops::pairing(&gpk.h, &gpk.g2), &(-r_delta1 - r_delta2)),
    );
    let r4 = ops::g1_mul(&ops::g1_exp(&t1, &r_x), &ops::g1_exp(&gpk.u, &(-r_delta1)));
    let r5 = ops::g1_mul(&ops::g1_exp(&t2, &r_x), &ops::g1_exp(&gpk.v, &(-r_delta2)));

    let c = challenge(gpk, message, &t1, &t2, &t3, &[r1, r2, r4, r5], &r3);
    GroupSignature {
        t1,
        t2,
        t3,
        c,
        s_alpha: r_alpha + c * alpha,
        s_beta: r_beta + c * beta,
        s_x: r_x + c * member.x,
        s_delta1: r_delta1 + c * delta1,
        s_delta2: r_delta2 + c * delta2,
    }
}

pub fn gs_verify(
    gpk: &GroupPublicKey,
    message: &[u8],
    sig: &GroupSignature,
) -> Result<(), GroupSigError> {
    let neg_c = -sig.c;
    let r1 = ops::g1_mul(
        &ops::g1_exp(&gpk.u, &sig.s_alpha),
        &ops::g1_exp(&sig.t1, &neg_c),
    );
    let r2 = ops::g1_mul(
        &ops::g1_exp(&gpk.v, &sig.s_beta),
        &ops::g1_exp(&sig.t2, &neg_c),
    );
    let r3 = {
        let a = ops::gt_exp(&ops::pairing(&sig.t3, &gpk.g2), &sig.s_x);
        let b = ops::gt_exp(&ops::pairing(&gpk.h, &gpk.w), &(-sig.s_alpha - sig.s_beta));
        let c = ops::gt_exp(
            &ops::pairing(&gpk.h, &gpk.g2),
            &(-sig.s_delta1 - sig.s_delta2),
        );
        let d = ops::gt_exp(&ops::pairing(&sig.t3, &gpk.w), &sig.c);
        let e = ops::gt_exp(&gpk.e_g1_g2, &neg_c);
        ops::gt_mul(&ops::gt_mul(&ops::gt_mul(&a, &b), &ops::gt_mul(&c, &d)), &e)
    };
    let r4 = ops::g1_mul(
        &ops::g1_exp(&sig.t1, &sig.s_x),
        &ops::g1_exp(&gpk.u, &(-sig.s_delta1)),
    );
    let r5 = ops::g1_mul(
        &ops::g1_exp(&sig.t2, &sig.s_x),
        &ops::g1_exp(&gpk.v, &(-sig.s_delta2)),
    );
    let c = challenge(
        gpk,
        message,
        &sig.t1,
        &sig.t2,
        &sig.t3,
        &[r1, r2, r4, r5],
        &r3,
    );
    if c == sig.c {
        Ok(())
    } else {
        Err(GroupSigError::ChallengeMismatch)
    }
}

/// Verifies an encoded signature; malformed bytes are rejected with
/// [`GroupSigError::Malformed`].
pub fn gs_verify_bytes(
    gpk: &GroupPublicKey,
    message: &[u8],
    sig: &[u8],
) -> Result<(), GroupSigError> {
    let sig = GroupSignature::from_bytes(sig)?;
    gs_verify(gpk, message, &sig)
}

/// Recovers the signer: `A = T3 / (T1^xi1 * T2^xi2)`.
pub fn gs_open(
    issuer: &GroupIssuerKey,
    message: &[u8],
    sig: &GroupSignature,
) -> Result<MemberId, GroupSigError> {
    gs_verify(&issuer.gpk, message, sig)?;
    let mask = sig.t1 * issuer.xi1 + sig.t2 * issuer.xi2;
    let a = sig.t3 - mask;
    issuer
        .registry
        .iter()
        .find(|(_, cert)| **cert == a)
        .map(|(id, _)| *id)
        .ok_or(GroupSigError::UnknownSigner)
}

fn challenge(
    gpk: &GroupPublicKey,
    message: &[u8],
    t1: &G1,
    t2: &G1,
    t3: &G1,
    commitments: &[G1; 4],
    r3: &Gt,
) -> Scalar {
    let mut w = Writer::default();
    w.bytes(&gpk.to_bytes()).bytes(message).g1(t1).g1(t2).g1(t3);
    for r in commitments {
        w.g1(r);
    }
    w.gt(r3);
    hash_to_scalar(CHALLENGE_LABEL, &[&w.finish()])
}

impl MemberKey {
    /// Checks the certificate equation `e(A, w * g2^x) = e(g1, g2)`.
    pub fn is_consistent_with(&self, gpk: &GroupPublicKey) -> bool {
        if self.a.is_zero() {
            return false;
        }
        let rhs = gpk.w + gpk.g2 * self.x;
        BilinearSuite.pairing(&self.a, &rhs) == gpk.e_g1_g2
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new("bbs-member")
            .u32(self.index)
            .g1(&self.a)
            .scalar(&self.x)
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes, "bbs-member")?;
        let key = Self {
            index: r.u32("index")?,
            a: r.g1("A")?,
            x: r.scalar("x")?,
        };
        r.finish()?;
        Ok(key)
    }
}

impl GroupPublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new("bbs-gpk")
            .g1(&self.g1)
            .g2(&self.g2)
            .g1(&self.h)
            .g1(&self.u)
            .g1(&self.v)
            .g2(&self.w)
            .gt(&self.e_g1_g2)
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes, "bbs-gpk")?;
        let key = Self {
            g1: r.g1("g1")?,
            g2: r.g2("g2")?,
            h: r.g1("h")?,
            u: r.g1("u")?,
            v: r.g1("v")?,
            w: r.g2("w")?,
            e_g1_g2: r.gt("e(g1,g2)")?,
        };
        r.finish()?;
        Ok(key)
    }
}

impl GroupIssuerKey {
    pub fn public_key(&self) -> &GroupPublicKey {
        &self.gpk
    }

    pub fn enrolled(&self) -> impl Iterator<Item = MemberId> + '_ {
        self.registry.keys().copied()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new("bbs-issuer");
        w.scalar(&self.gamma)
            .scalar(&self.xi1)
            .scalar(&self.xi2)
            .bytes(&self.gpk.to_bytes())
            .u32(self.registry.len() as u32);
        for (id, a) in &self.registry {
            w.u32(*id).g1(a);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes, "bbs-issuer")?;
        let gamma = r.scalar("gamma")?;
        let xi1 = r.scalar("xi1")?;
        let xi2 = r.scalar("xi2")?;
        let gpk = GroupPublicKey::from_bytes(r.bytes("gpk")?)?;
        let n = r.u32("registry size")?;
        let mut registry = BTreeMap::new();
        for _ in 0..n {
            let id = r.u32("member id")?;
            registry.insert(id, r.g1("certificate")?);
        }
        r.finish()?;
        Ok(Self {
            gamma,
            xi1,
            xi2,
            gpk,
            registry,
        })
    }
}

impl GroupSignature {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new("bbs-sig")
            .g1(&self.t1)
            .g1(&self.t2)
            .g1(&self.t3)
            .scalar(&self.c)
            .scalar(&self.s_alpha)
            .scalar(&self.s_beta)
            .scalar(&self.s_x)
            .scalar(&self.s_delta1)
            .scalar(&self.s_delta2)
            .finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes, "bbs-sig")?;
        let sig = Self {
            t1: r.g1("T1")?,
            t2: r.g1("T2")?,
            t3: r.g1("T3")?,
            c: r.scalar("c")?,
            s_alpha: r.scalar("s_alpha")?,
            s_beta: r.scalar("s_beta")?,
            s_x: r.scalar("s_x")?,
            s_delta1: r.scalar("s_delta1")?,
            s_delta2: r.scalar("s_delta2")?,
        };
        r.finish()?;
        Ok(sig)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto_suite::rng_from_seed;
    use std::collections::HashSet;

    fn group(seed: u64, members: u32) -> (GroupPublicKey, GroupIssuerKey, Vec<MemberKey>) {
        let mut rng = rng_from_seed(seed);
        let (gpk, mut issuer) = gs_setup(&BilinearSuite, &mut rng);
        let keys = (1..=members)
            .map(|i| gs_enroll(&mut issuer, i, &mut rng).unwrap())
            .collect();
        (gpk, issuer, keys)
    }

    #[test]
    fn setup_is_deterministic() {
        let (a, _) = gs_setup(&BilinearSuite, &mut rng_from_seed(5));
        let (b, _) = gs_setup(&BilinearSuite, &mut rng_from_seed(5));
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn distinct_setups_give_distinct_keys() {
        let mut seen = HashSet::new();
        for seed in 0..100 {
            let (gpk, _) = gs_setup(&BilinearSuite, &mut rng_from_seed(seed));
            assert!(seen.insert(gpk.to_bytes()));
        }
    }

    #[test]
    fn enrolled_key_satisfies_certificate_equation() {
        let (gpk, _, keys) = group(1, 1);
        assert!(keys[0].is_consistent_with(&gpk));
        let mut forged = keys[0].clone();
        forged.x += Scalar::from(1u64);
        assert!(!forged.is_consistent_with(&gpk));
    }

    #[test]
    fn duplicate_enrollment_rejected() {
        let mut rng = rng_from_seed(2);
        let (_, mut issuer) = gs_setup(&BilinearSuite, &mut rng);
        gs_enroll(&mut issuer, 1, &mut rng).unwrap();
        assert_eq!(
            gs_enroll(&mut issuer, 1, &mut rng).unwrap_err(),
            GroupSigError::DuplicateMember(1)
        );
    }

    #[test]
    fn fifty_certificates_are_distinct() {
        let (_, _, keys) = group(3, 50);
        let certs: HashSet<_> = keys
            .iter()
            .map(|k| crate::crypto_suite::encode_g1(&k.a))
            .collect();
        assert_eq!(certs.len(), 50);
    }

    #[test]
    fn sign_verify_and_message_binding() {
        let (gpk, _, keys) = group(4, 2);
        let mut rng = rng_from_seed(40);
        let sig = gs_sign(&gpk, &keys[0], b"ping", &mut rng);
        gs_verify(&gpk, b"ping", &sig).unwrap();
        assert_eq!(
            gs_verify(&gpk, b"pinh", &sig).unwrap_err(),
            GroupSigError::ChallengeMismatch
        );
    }

    #[test]
    fn two_seeds_give_different_valid_signatures() {
        let (gpk, _, keys) = group(5, 1);
        let a = gs_sign(&gpk, &keys[0], b"m", &mut rng_from_seed(1));
        let b = gs_sign(&gpk, &keys[0], b"m", &mut rng_from_seed(2));
        assert_ne!(a, b);
        gs_verify(&gpk, b"m", &a).unwrap();
        gs_verify(&gpk, b"m", &b).unwrap();
    }

    #[test]
    fn malformed_encoding_has_distinct_reason() {
        let (gpk, _, keys) = group(6, 1);
        let sig = gs_sign(&gpk, &keys[0], b"m", &mut rng_from_seed(1)).to_bytes();
        let err = gs_verify_bytes(&gpk, b"m", &sig[..sig.len() - 1]).unwrap_err();
        assert!(matches!(err, GroupSigError::Malformed(_)));
        gs_verify_bytes(&gpk, b"m", &sig).unwrap();
    }

    #[test]
    fn open_recovers_signer_and_rejects_tampering() {
        let (gpk, issuer, keys) = group(7, 3);
        let mut rng = rng_from_seed(70);
        let sig = gs_sign(&gpk, &keys[2], b"hello", &mut rng);
        assert_eq!(gs_open(&issuer, b"hello", &sig).unwrap(), 3);
        let mut bad = sig.clone();
        bad.s_x += Scalar::from(1u64);
        assert_eq!(
            gs_open(&issuer, b"hello", &bad).unwrap_err(),
            GroupSigError::ChallengeMismatch
        );
    }

    #[test]
    fn sign_operation_counts() {
        let (gpk, _, keys) = group(8, 1);
        let (_, counts) = ops::count(|| gs_sign(&gpk, &keys[0], b"m", &mut rng_from_seed(1)));
        assert_eq!(counts.exp_g1, 9);
        assert_eq!(counts.mul_g1, 3);
        assert_eq!(counts.exp_gt, 3);
        assert_eq!(counts.pairing, 3);
        assert_eq!(counts.mul_gt, 2);
        assert_eq!(counts.exp_g2 + counts.mul_g2, 0);
    }

    #[test]
    fn verify_operation_counts() {
        let (gpk, _, keys) = group(9, 1);
        let sig = gs_sign(&gpk, &keys[0], b"m", &mut rng_from_seed(1));
        let (res, counts) = ops::count(|| gs_verify(&gpk, b"m", &sig));
        res.unwrap();
        assert_eq!(counts.exp_g1, 8);
        assert_eq!(counts.mul_g1, 4);
        assert_eq!(counts.exp_gt, 5);
        assert_eq!(counts.pairing, 4);
        assert_eq!(counts.mul_gt, 4);
    }

    #[test]
    fn keys_reload_byte_identically() {
        let (gpk, issuer, keys) = group(10, 2);
        let bytes = issuer.to_bytes();
        assert_eq!(
            GroupIssuerKey::from_bytes(&bytes).unwrap().to_bytes(),
            bytes
        );
        assert_eq!(GroupPublicKey::from_bytes(&gpk.to_bytes()).unwrap(), gpk);
        assert_eq!(MemberKey::from_bytes(&keys[1].to_bytes()).unwrap(), keys[1]);
    }
}
