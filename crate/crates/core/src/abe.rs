//! Key-policy attribute-based encryption over a small attribute universe
//! (GPSW construction), with a hybrid layer for arbitrary-length payloads.
//!
//! Ciphertexts are labelled with an attribute set and carry `E_i = T_i^s` for
//! each attribute `i`; decryption keys embed an [`AccessPolicy`] whose root
//! secret `y` is Shamir-shared down the tree, leaf `x` holding
//! `D_x = g2^(q_x(0) / t_i)`. A key decrypts iff its tree is satisfied by the
//! ciphertext's attribute set.
//!
//! The pairing-group message `M` is a random GT element masked by `Y^s`;
//! `SHA-256(M)` keys AES-256-GCM over the payload.

use std::collections::{BTreeMap, BTreeSet};

use ark_ff::{Field, One, Zero};
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto_suite::{
    encode_gt, hash256, ops, sym_decrypt_with_aad, sym_encrypt_with_nonce, BilinearSuite,
    Ciphertext, Gt, Scalar, SessionKey, G1, G2, NONCE_BYTES,
};
use crate::policy::{AccessPolicy, AttributeId, PolicyError, PolicyNode};

const DEM_LABEL: &[u8] = b"resiot/abe/dem/v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AbeError {
    #[error("attribute universe must contain at least one attribute")]
    EmptyUniverse,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("attribute {0} is not in the universe")]
    UnknownAttribute(AttributeId),
    #[error("ciphertext attribute set is empty")]
    EmptyAttributeSet,
    #[error("ciphertext attributes do not satisfy the key policy")]
    PolicyUnsatisfied,
    #[error("malformed ciphertext: {0}")]
    Malformed(String),
    #[error("payload integrity check failed")]
    IntegrityFailure,
}

impl From<DecodeError> for AbeError {
    fn from(e: DecodeError) -> Self {
        AbeError::Malformed(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbePublicKey {
    pub g1: G1,
    pub g2: G2,
    /// `T_i = g1^(t_i)` for every attribute in the universe.
    pub attributes: Vec<G1>,
    /// `Y = e(g1, g2)^y`.
    pub y: Gt,
    pub e_g1_g2: Gt,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbeMasterKey {
    t: Vec<Scalar>,
    y: Scalar,
    g2: G2,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbeDecryptionKey {
    policy: AccessPolicy,
    /// One share per leaf, in depth-first leaf order.
    shares: Vec<G2>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbeCiphertext {
    pub attributes: BTreeSet<AttributeId>,
    /// `E_i = T_i^s`, aligned with `attributes`.
    pub components: Vec<G1>,
    /// `E' = M * Y^s`.
    pub masked: Gt,
    pub payload: Ciphertext,
}

impl AbePublicKey {
    pub fn universe_size(&self) -> u32 {
        self.attributes.len() as u32
    }
}

pub fn abe_setup<R: RngCore + CryptoRng>(
    suite: &BilinearSuite,
    universe_size: u32,
    rng: &mut R,
) -> Result<(AbePublicKey, AbeMasterKey), AbeError> {
    if universe_size == 0 {
        return Err(AbeError::EmptyUniverse);
    }
    let g1 = suite.g1();
    let g2 = suite.g2();
    let t: Vec<Scalar> = (0..universe_size)
        .map(|_| suite.random_nonzero_scalar(rng))
        .collect();
    let y = suite.random_nonzero_scalar(rng);
    let e_g1_g2 = suite.pairing(&g1, &g2);
    let pk = AbePublicKey {
        g1,
        g2,
        attributes: t.iter().map(|ti| ops::g1_exp(&g1, ti)).collect(),
        y: ops::gt_exp(&e_g1_g2, &y),
        e_g1_g2,
    };
    Ok((pk, AbeMasterKey { t, y, g2 }))
}

pub fn abe_keygen<R: RngCore + CryptoRng>(
    msk: &AbeMasterKey,
    policy: &AccessPolicy,
    rng: &mut R,
) -> Result<AbeDecryptionKey, AbeError> {
    policy.validate_universe(msk.t.len() as u32)?;
    let mut shares = Vec::new();
    share_node(msk, policy.root(), msk.y, rng, &mut shares);
    Ok(AbeDecryptionKey {
        policy: policy.clone(),
        shares,
    })
}

fn share_node<R: RngCore + CryptoRng>(
    msk: &AbeMasterKey,
    node: &PolicyNode,
    secret: Scalar,
    rng: &mut R,
    out: &mut Vec<G2>,
) {
    match node {
        PolicyNode::Leaf(attr) => {
            let t_inv = msk.t[*attr as usize].inverse().expect("non-zero");
            out.push(ops::g2_exp(&msk.g2, &(secret * t_inv)));
        }
        PolicyNode::Threshold {
            threshold,
            children,
        } => {
            // q(0) = secret, degree threshold - 1
            let mut coeffs = vec![secret];
            coeffs.extend((1..*threshold).map(|_| BilinearSuite.random_scalar(rng)));
            for (i, child) in children.iter().enumerate() {
                let share = eval_poly(&coeffs, Scalar::from(i as u64 + 1));
                share_node(msk, child, share, rng, out);
            }
        }
    }
}

fn eval_poly(coeffs: &[Scalar], x: Scalar) -> Scalar {
    coeffs
        .iter()
        .rev()
        .fold(Scalar::zero(), |acc, c| acc * x + c)
}

/// Lagrange coefficient for index `i` over `set`, evaluated at zero.
pub fn lagrange_at_zero(i: u64, set: &[u64]) -> Scalar {
    let xi = Scalar::from(i);
    set.iter()
        .filter(|&&j| j != i)
        .fold(Scalar::one(), |acc, &j| {
            let xj = Scalar::from(j);
            acc * (-xj) * (xi - xj).inverse().expect("distinct indices")
        })
}

fn check_attributes(pk: &AbePublicKey, attrs: &BTreeSet<AttributeId>) -> Result<(), AbeError> {
    if attrs.is_empty() {
        return Err(AbeError::EmptyAttributeSet);
    }
    match attrs.iter().find(|&&a| a >= pk.universe_size()) {
        Some(&a) => Err(AbeError::UnknownAttribute(a)),
        None => Ok(()),
    }
}

/// The GPSW encryption of a GT message under randomness `s`:
/// `N_a` exponentiations in G1, one in GT and one GT multiplication.
pub fn encrypt_group_element(
    pk: &AbePublicKey,
    attrs: &BTreeSet<AttributeId>,
    message: &Gt,
    s: &Scalar,
) -> Result<(Vec<G1>, Gt), AbeError> {
    check_attributes(pk, attrs)?;
    let components = attrs
        .iter()
        .map(|&a| ops::g1_exp(&pk.attributes[a as usize], s))
        .collect();
    let masked = ops::gt_mul(message, &ops::gt_exp(&pk.y, s));
    Ok((components, masked))
}

pub fn abe_encrypt<R: RngCore + CryptoRng>(
    pk: &AbePublicKey,
    attrs: &BTreeSet<AttributeId>,
    payload: &[u8],
    rng: &mut R,
) -> Result<AbeCiphertext, AbeError> {
    check_attributes(pk, attrs)?;
    let m = ops::gt_exp(&pk.e_g1_g2, &BilinearSuite.random_nonzero_scalar(rng));
    let s = BilinearSuite.random_nonzero_scalar(rng);
    let (components, masked) = encrypt_group_element(pk, attrs, &m, &s)?;
    let mut nonce = [0u8; NONCE_BYTES];
    rng.fill_bytes(&mut nonce);
    let payload = sym_encrypt_with_nonce(&dem_key(&m), nonce, payload, &attribute_aad(attrs));
    Ok(AbeCiphertext {
        attributes: attrs.clone(),
        components,
        masked,
        payload,
    })
}

/// Recovers `M` from a ciphertext, selecting the lowest-indexed satisfied
/// children at every threshold node.
pub fn decrypt_group_element(key: &AbeDecryptionKey, ct: &AbeCiphertext) -> Result<Gt, AbeError> {
    if ct.components.len() != ct.attributes.len() {
        return Err(AbeError::Malformed(
            "component count does not match attribute set".into(),
        ));
    }
    if !key.policy.is_satisfied_by(&ct.attributes) {
        return Err(AbeError::PolicyUnsatisfied);
    }
    let comps: BTreeMap<AttributeId, &G1> = ct
        .attributes
        .iter()
        .copied()
        .zip(ct.components.iter())
        .collect();
    let mut leaf_cursor = 0usize;
    let f = decrypt_node(key, key.policy.root(), &comps, &mut leaf_cursor)
        .expect("satisfiability checked above");
    // M = E' / e(g1, g2)^(ys)
    Ok(ops::gt_mul(&ct.masked, &-f))
}

fn decrypt_node(
    key: &AbeDecryptionKey,
    node: &PolicyNode,
    comps: &BTreeMap<AttributeId, &G1>,
    leaf_cursor: &mut usize,
) -> Option<Gt> {
    match node {
        PolicyNode::Leaf(attr) => {
            let share = &key.shares[*leaf_cursor];
            *leaf_cursor += 1;
            comps.get(attr).map(|e| ops::pairing(e, share))
        }
        PolicyNode::Threshold {
            threshold,
            children,
        } => {
            let mut chosen: Vec<(u64, Gt)> = Vec::with_capacity(*threshold);
            for (i, child) in children.iter().enumerate() {
                if chosen.len() == *threshold {
                    skip_leaves(child, leaf_cursor);
                    continue;
                }
                match decrypt_subtree_if_satisfied(key, child, comps, leaf_cursor) {
                    Some(f) => chosen.push((i as u64 + 1, f)),
                    None => continue,
                }
            }
            if chosen.len() < *threshold {
                return None;
            }
            let indices: Vec<u64> = chosen.iter().map(|(i, _)| *i).collect();
            let mut acc: Option<Gt> = None;
            for (i, f) in &chosen {
                let term = ops::gt_exp(f, &lagrange_at_zero(*i, &indices));
                acc = Some(match acc {
                    None => term,
                    Some(a) => ops::gt_mul(&a, &term),
                });
            }
            acc
        }
    }
}

/// Decrypts `node` only if the ciphertext attributes satisfy it, so no
/// pairing is spent on branches that cannot contribute.
fn decrypt_subtree_if_satisfied(
    key: &AbeDecryptionKey,
    node: &PolicyNode,
    comps: &BTreeMap<AttributeId, &G1>,
    leaf_cursor: &mut usize,
) -> Option<Gt> {
    let attrs: BTreeSet<AttributeId> = comps.keys().copied().collect();
    let sub = AccessPolicy::new(node.clone()).expect("subtree of a valid policy");
    if sub.is_satisfied_by(&attrs) {
        decrypt_node(key, node, comps, leaf_cursor)
    } else {
        skip_leaves(node, leaf_cursor);
        None
    }
}

fn skip_leaves(node: &PolicyNode, leaf_cursor: &mut usize) {
    match node {
        PolicyNode::Leaf(_) => *leaf_cursor += 1,
        PolicyNode::Threshold { children, .. } => {
            children.iter().for_each(|c| skip_leaves(c, leaf_cursor))
        }
    }
}

pub fn abe_decrypt(key: &AbeDecryptionKey, ct: &AbeCiphertext) -> Result<Vec<u8>, AbeError> {
    let m = decrypt_group_element(key, ct)?;
    sym_decrypt_with_aad(&dem_key(&m), &ct.payload, &attribute_aad(&ct.attributes))
        .map_err(|_| AbeError::IntegrityFailure)
}

fn dem_key(m: &Gt) -> SessionKey {
    SessionKey::from_bytes(&hash256(DEM_LABEL, &[&encode_gt(m)])).expect("32 bytes")
}

fn attribute_aad(attrs: &BTreeSet<AttributeId>) -> Vec<u8> {
    attrs.iter().flat_map(|a| a.to_be_bytes()).collect()
}

impl AbeDecryptionKey {
    pub fn policy(&self) -> &AccessPolicy {
        &self.policy
    }

    pub fn shares(&self) -> &[G2] {
        &self.shares
    }

    /// Assembles a key from raw parts; the share count must match the leaves.
    pub fn from_parts(policy: AccessPolicy, shares: Vec<G2>) -> Result<Self, AbeError> {
        if policy.leaves().len() != shares.len() {
            return Err(AbeError::Malformed(
                "share count does not match policy".into(),
            ));
        }
        Ok(Self { policy, shares })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new("gpsw-key");
        w.bytes(self.policy.to_string().as_bytes())
            .u32(self.shares.len() as u32);
        for d in &self.shares {
            w.g2(d);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AbeError> {
        let mut r = Reader::new(bytes, "gpsw-key")?;
        let text = std::str::from_utf8(r.bytes("policy")?)
            .map_err(|_| AbeError::Malformed("policy text is not UTF-8".into()))?;
        let policy = AccessPolicy::parse(text)?;
        let n = r.u32("share count")?;
        let shares = (0..n)
            .map(|_| r.g2("share"))
            .collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        Self::from_parts(policy, shares)
    }
}

impl AbePublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new("gpsw-pk");
        w.g1(&self.g1)
            .g2(&self.g2)
            .gt(&self.y)
            .gt(&self.e_g1_g2)
            .u32(self.attributes.len() as u32);
        for t in &self.attributes {
            w.g1(t);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AbeError> {
        let mut r = Reader::new(bytes, "gpsw-pk")?;
        let g1 = r.g1("g1")?;
        let g2 = r.g2("g2")?;
        let y = r.gt("Y")?;
        let e_g1_g2 = r.gt("e(g1,g2)")?;
        let n = r.u32("universe")?;
        let attributes = (0..n).map(|_| r.g1("T_i")).collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        Ok(Self {
            g1,
            g2,
            attributes,
            y,
            e_g1_g2,
        })
    }
}

impl AbeMasterKey {
    pub fn universe_size(&self) -> u32 {
        self.t.len() as u32
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new("gpsw-msk");
        w.scalar(&self.y).g2(&self.g2).u32(self.t.len() as u32);
        for t in &self.t {
            w.scalar(t);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AbeError> {
        let mut r = Reader::new(bytes, "gpsw-msk")?;
        let y = r.scalar("y")?;
        let g2 = r.g2("g2")?;
        let n = r.u32("universe")?;
        let t = (0..n)
            .map(|_| r.scalar("t_i"))
            .collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        Ok(Self { t, y, g2 })
    }
}

impl AbeCiphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new("gpsw-ct");
        w.u32(self.attributes.len() as u32);
        for (a, e) in self.attributes.iter().zip(&self.components) {
            w.u32(*a).g1(e);
        }
        w.gt(&self.masked).bytes(&self.payload.to_bytes());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AbeError> {
        let mut r = Reader::new(bytes, "gpsw-ct")?;
        let n = r.u32("attribute count")?;
        let mut attributes = BTreeSet::new();
        let mut components = Vec::with_capacity(n as usize);
        let mut last = None;
        for _ in 0..n {
            let a = r.u32("attribute")?;
            if last.is_some_and(|l| a <= l) {
                return Err(AbeError::Malformed(
                    "attributes not strictly ascending".into(),
                ));
            }
            last = Some(a);
            attributes.insert(a);
            components.push(r.g1("E_i")?);
        }
        let masked = r.gt("E'")?;
        let payload = Ciphertext::from_bytes(r.bytes("payload")?)
            .map_err(|e| AbeError::Malformed(e.to_string()))?;
        r.finish()?;
        Ok(Self {
            attributes,
            components,
            masked,
            payload,
        })
    }
}
