//! Bilinear groups, Diffie-Hellman, authenticated symmetric encryption and
//! hashing shared by every other module.
//!
//! Group arithmetic is written multiplicatively in the rest of the crate
//! (`exp` is scalar multiplication, `mul` is the group law) and always goes
//! through the counting wrappers in [`ops`], so that the operation-count
//! audit sees every primitive the schemes perform.

use aes_gcm::aead::AeadInPlace;
use aes_gcm::{Aes256Gcm, KeyInit, Nonce};
use ark_bls12_381::{Bls12_381, Fr, G1Projective, G2Projective};
use ark_ec::pairing::{Pairing, PairingOutput};
use ark_ec::{CurveGroup, Group};
use ark_ff::{PrimeField, UniformRand, Zero};
use ark_serialize::{CanonicalDeserialize, CanonicalSerialize, Compress, Validate};
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256, Sha512};
use thiserror::Error;

pub type Scalar = Fr;
pub type G1 = G1Projective;
pub type G2 = G2Projective;
pub type Gt = PairingOutput<Bls12_381>;

/// Compressed encoding sizes.
pub const G1_BYTES: usize = 48;
pub const G2_BYTES: usize = 96;
pub const GT_BYTES: usize = 576;
pub const SCALAR_BYTES: usize = 32;

/// Label mixed into the session-key derivation hash.
pub const KDF_LABEL: &[u8] = b"resiot/kdf/sha256/v1";
pub const SESSION_KEY_BYTES: usize = 32;
pub const NONCE_BYTES: usize = 12;
pub const TAG_BYTES: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("peer public value is the identity element")]
    IdentityElement,
    #[error("invalid encoding: {0}")]
    InvalidEncoding(&'static str),
    #[error("authentication failed")]
    AuthenticationFailed,
    #[error("key length {0} does not match the suite's {SESSION_KEY_BYTES}")]
    KeyLength(usize),
}

/// Deterministic RNG for a seed. Every randomized operation takes one of these.
pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// The fixed pairing setting: BLS12-381 with its standard generators.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BilinearSuite;

impl BilinearSuite {
    pub fn g1(&self) -> G1 {
        G1::generator()
    }

    pub fn g2(&self) -> G2 {
        G2::generator()
    }

    pub fn random_scalar<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Scalar {
        Scalar::rand(rng)
    }

    /// A uniformly random non-zero scalar.
    pub fn random_nonzero_scalar<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Scalar {
        loop {
            let s = Scalar::rand(rng);
            if !s.is_zero() {
                return s;
            }
        }
    }

    pub fn pairing(&self, p: &G1, q: &G2) -> Gt {
        ops::pairing(p, q)
    }
}

/// Hashes arbitrary labelled input to a scalar (wide reduction of SHA-512).
pub fn hash_to_scalar(label: &[u8], parts: &[&[u8]]) -> Scalar {
    let mut h = Sha512::new();
    h.update((label.len() as u32).to_be_bytes());
    h.update(label);
    for p in parts {
        h.update((p.len() as u32).to_be_bytes());
        h.update(p);
    }
    Scalar::from_le_bytes_mod_order(&h.finalize())
}

/// Labelled SHA-256 over length-prefixed parts.
pub fn hash256(label: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((label.len() as u32).to_be_bytes());
    h.update(label);
    for p in parts {
        h.update((p.len() as u32).to_be_bytes());
        h.update(p);
    }
    h.finalize().into()
}

pub fn encode_g1(p: &G1) -> [u8; G1_BYTES] {
    let mut out = [0u8; G1_BYTES];
    p.into_affine()
        .serialize_compressed(&mut out[..])
        .expect("fixed-size buffer");
    out
}

pub fn decode_g1(bytes: &[u8]) -> Result<G1, CryptoError> {
    if bytes.len() != G1_BYTES {
        return Err(CryptoError::InvalidEncoding("G1 length"));
    }
    ark_bls12_381::G1Affine::deserialize_with_mode(bytes, Compress::Yes, Validate::Yes)
        .map(Into::into)
        .map_err(|_| CryptoError::InvalidEncoding("G1 point"))
}

pub fn encode_g2(p: &G2) -> [u8; G2_BYTES] {
    let mut out = [0u8; G2_BYTES];
    p.into_affine()
        .serialize_compressed(&mut out[..])
        .expect("fixed-size buffer");
    out
}

pub fn decode_g2(bytes: &[u8]) -> Result<G2, CryptoError> {
    if bytes.len() != G2_BYTES {
        return Err(CryptoError::InvalidEncoding("G2 length"));
    }
    ark_bls12_381::G2Affine::deserialize_with_mode(bytes, Compress::Yes, Validate::Yes)
        .map(Into::into)
        .map_err(|_| CryptoError::InvalidEncoding("G2 point"))
}

pub fn encode_gt(x: &Gt) -> Vec<u8> {
    let mut out = Vec::with_capacity(GT_BYTES);
    x.serialize_compressed(&mut out).expect("vec writer");
    out
}

pub fn decode_gt(bytes: &[u8]) -> Result<Gt, CryptoError> {
    if bytes.len() != GT_BYTES {
        return Err(CryptoError::InvalidEncoding("GT length"));
    }
    Gt::deserialize_with_mode(bytes, Compress::Yes, Validate::Yes)
        .map_err(|_| CryptoError::InvalidEncoding("GT element"))
}

pub fn encode_scalar(s: &Scalar) -> [u8; SCALAR_BYTES] {
    let mut out = [0u8; SCALAR_BYTES];
    s.serialize_compressed(&mut out[..])
        .expect("fixed-size buffer");
    out
}

pub fn decode_scalar(bytes: &[u8]) -> Result<Scalar, CryptoError> {
    if bytes.len() != SCALAR_BYTES {
        return Err(CryptoError::InvalidEncoding("scalar length"));
    }
    Scalar::deserialize_with_mode(bytes, Compress::Yes, Validate::Yes)
        .map_err(|_| CryptoError::InvalidEncoding("scalar"))
}

/// Diffie-Hellman keypair in G1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DhKeypair {
    secret: Scalar,
    public: G1,
}

impl DhKeypair {
    pub fn from_secret(secret: Scalar) -> Self {
        let public = ops::g1_exp(&BilinearSuite.g1(), &secret);
        Self { secret, public }
    }

    pub fn secret(&self) -> &Scalar {
        &self.secret
    }

    pub fn public(&self) -> &G1 {
        &self.public
    }

    pub fn public_bytes(&self) -> [u8; G1_BYTES] {
        encode_g1(&self.public)
    }
}

pub fn dh_generate<R: RngCore + CryptoRng>(rng: &mut R) -> DhKeypair {
    DhKeypair::from_secret(BilinearSuite.random_nonzero_scalar(rng))
}

/// Derives the shared session key from our keypair and the peer's public value.
pub fn dh_agree(mine: &DhKeypair, theirs_public: &G1) -> Result<SessionKey, CryptoError> {
    if theirs_public.is_zero() {
        return Err(CryptoError::IdentityElement);
    }
    let shared = ops::g1_exp(theirs_public, &mine.secret);
    Ok(SessionKey::derive(&shared))
}

/// Symmetric key derived from a Diffie-Hellman shared element.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKey([u8; SESSION_KEY_BYTES]);

impl std::fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SessionKey({}..)", hex::encode(&self.0[..4]))
    }
}

impl SessionKey {
    pub fn derive(shared: &G1) -> Self {
        Self(hash256(KDF_LABEL, &[&encode_g1(shared)]))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; SESSION_KEY_BYTES] = bytes
            .try_into()
            .map_err(|_| CryptoError::KeyLength(bytes.len()))?;
        Ok(Self(arr))
    }

    pub fn as_bytes(&self) -> &[u8; SESSION_KEY_BYTES] {
        &self.0
    }
}

/// Output of [`sym_encrypt`]: AES-256-GCM nonce, body and detached tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    pub nonce: [u8; NONCE_BYTES],
    pub body: Vec<u8>,
    pub tag: [u8; TAG_BYTES],
}

impl Ciphertext {
    /// `nonce || u32-BE body length || body || tag`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(NONCE_BYTES + 4 + self.body.len() + TAG_BYTES);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&(self.body.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.body);
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < NONCE_BYTES + 4 + TAG_BYTES {
            return Err(CryptoError::InvalidEncoding("ciphertext too short"));
        }
        let nonce: [u8; NONCE_BYTES] = bytes[..NONCE_BYTES].try_into().expect("sliced");
        let len = u32::from_be_bytes(
            bytes[NONCE_BYTES..NONCE_BYTES + 4]
                .try_into()
                .expect("sliced"),
        ) as usize;
        let body_start = NONCE_BYTES + 4;
        if bytes.len() != body_start + len + TAG_BYTES {
            return Err(CryptoError::InvalidEncoding("ciphertext length"));
        }
        let body = bytes[body_start..body_start + len].to_vec();
        let tag: [u8; TAG_BYTES] = bytes[body_start + len..].try_into().expect("sliced");
        Ok(Self { nonce, body, tag })
    }
}

pub fn sym_encrypt<R: RngCore + CryptoRng>(
    key: &SessionKey,
    plaintext: &[u8],
    rng: &mut R,
) -> Ciphertext {
    let mut nonce = [0u8; NONCE_BYTES];
    rng.fill_bytes(&mut nonce);
    sym_encrypt_with_nonce(key, nonce, plaintext, &[])
}

/// Encryption with a caller-chosen nonce and associated data. The caller must
/// never reuse a nonce with different plaintexts under one key.
pub fn sym_encrypt_with_nonce(
    key: &SessionKey,
    nonce: [u8; NONCE_BYTES],
    plaintext: &[u8],
    aad: &[u8],
) -> Ciphertext {
    let cipher = Aes256Gcm::new_from_slice(&key.0).expect("32-byte key");
    let mut body = plaintext.to_vec();
    let tag = cipher
        .encrypt_in_place_detached(Nonce::from_slice(&nonce), aad, &mut body)
        .expect("plaintext within AES-GCM limits");
    Ciphertext {
        nonce,
        body,
        tag: tag.into(),
    }
}

pub fn sym_decrypt(key: &SessionKey, ct: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
    sym_decrypt_with_aad(key, ct, &[])
}

pub fn sym_decrypt_with_aad(
    key: &SessionKey,
    ct: &Ciphertext,
    aad: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let cipher = Aes256Gcm::new_from_slice(&key.0).expect("32-byte key");
    let mut body = ct.body.clone();
    cipher
        .decrypt_in_place_detached(
            Nonce::from_slice(&ct.nonce),
            aad,
            &mut body,
            aes_gcm::Tag::from_slice(&ct.tag),
        )
        .map_err(|_| CryptoError::AuthenticationFailed)?;
    Ok(body)
}

/// Counted group operations.
///
/// Every exponentiation, group-law multiplication and pairing performed by
/// the schemes goes through these functions, which bump thread-local
/// counters. [`ops::count`] runs a closure and returns what it performed.
pub mod ops {
    use super::*;
    use serde::{Deserialize, Serialize};
    use std::cell::Cell;

    #[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
    pub struct OpCounts {
        pub pairing: u64,
        pub exp_g1: u64,
        pub mul_g1: u64,
        pub exp_g2: u64,
        pub mul_g2: u64,
        pub exp_gt: u64,
        pub mul_gt: u64,
    }

    impl std::ops::Sub for OpCounts {
        type Output = OpCounts;
        fn sub(self, o: OpCounts) -> OpCounts {
            OpCounts {
                pairing: self.pairing - o.pairing,
                exp_g1: self.exp_g1 - o.exp_g1,
                mul_g1: self.mul_g1 - o.mul_g1,
                exp_g2: self.exp_g2 - o.exp_g2,
                mul_g2: self.mul_g2 - o.mul_g2,
                exp_gt: self.exp_gt - o.exp_gt,
                mul_gt: self.mul_gt - o.mul_gt,
            }
        }
    }

    thread_local! {
        static COUNTS: Cell<OpCounts> = Cell::new(OpCounts::default());
    }

    fn bump(f: impl FnOnce(&mut OpCounts)) {
        COUNTS.with(|c| {
            let mut v = c.get();
            f(&mut v);
            c.set(v);
        });
    }

    pub fn snapshot() -> OpCounts {
        COUNTS.with(|c| c.get())
    }

    /// Runs `f` and reports the group operations it performed on this thread.
    pub fn count<T>(f: impl FnOnce() -> T) -> (T, OpCounts) {
        let before = snapshot();
        let out = f();
        (out, snapshot() - before)
    }

    pub fn g1_exp(p: &G1, s: &Scalar) -> G1 {
        bump(|c| c.exp_g1 += 1);
        *p * s
    }

    pub fn g1_mul(a: &G1, b: &G1) -> G1 {
        bump(|c| c.mul_g1 += 1);
        *a + b
    }

    pub fn g2_exp(p: &G2, s: &Scalar) -> G2 {
        bump(|c| c.exp_g2 += 1);
        *p * s
    }

    pub fn g2_mul(a: &G2, b: &G2) -> G2 {
        bump(|c| c.mul_g2 += 1);
        *a + b
    }

    pub fn gt_exp(x: &Gt, s: &Scalar) -> Gt {
        bump(|c| c.exp_gt += 1);
        *x * s
    }

    pub fn gt_mul(a: &Gt, b: &Gt) -> Gt {
        bump(|c| c.mul_gt += 1);
        *a + b
    }

    pub fn pairing(p: &G1, q: &G2) -> Gt {
        bump(|c| c.pairing += 1);
        Bls12_381::pairing(p.into_affine(), q.into_affine())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn secret_one_gives_generator() {
        let kp = DhKeypair::from_secret(Scalar::from(1u64));
        assert_eq!(*kp.public(), BilinearSuite.g1());
    }

    #[test]
    fn dh_generate_is_deterministic_per_seed() {
        let a = dh_generate(&mut rng_from_seed(9));
        let b = dh_generate(&mut rng_from_seed(9));
        assert_eq!(a, b);
    }

    #[test]
    fn dh_secrets_do_not_collide() {
        let mut seen = HashSet::new();
        for seed in 0..1000u64 {
            let kp = dh_generate(&mut rng_from_seed(seed));
            assert!(seen.insert(encode_scalar(kp.secret())));
        }
    }

    #[test]
    fn small_exponents_agree_on_g6() {
        let a = DhKeypair::from_secret(Scalar::from(2u64));
        let b = DhKeypair::from_secret(Scalar::from(3u64));
        let k_ab = dh_agree(&a, b.public()).unwrap();
        let k_ba = dh_agree(&b, a.public()).unwrap();
        assert_eq!(k_ab, k_ba);
        let g6 = BilinearSuite.g1() * Scalar::from(6u64);
        assert_eq!(k_ab, SessionKey::derive(&g6));
    }

    #[test]
    fn identity_peer_rejected() {
        let a = dh_generate(&mut rng_from_seed(1));
        assert_eq!(
            dh_agree(&a, &G1::zero()).unwrap_err(),
            CryptoError::IdentityElement
        );
    }

    #[test]
    fn malformed_point_rejected() {
        // compressed flag with an x-coordinate above the field modulus
        let mut bytes = [0xffu8; G1_BYTES];
        bytes[0] = 0x9f;
        assert!(decode_g1(&bytes).is_err());
        assert!(decode_g1(&[0u8; 10]).is_err());
    }

    #[test]
    fn sym_roundtrip_empty_and_160_bit() {
        let key = SessionKey::from_bytes(&[7u8; 32]).unwrap();
        let mut rng = rng_from_seed(3);
        let ct = sym_encrypt(&key, b"", &mut rng);
        assert_eq!(sym_decrypt(&key, &ct).unwrap(), b"");
        let input = [0xA5u8; 20];
        let ct = sym_encrypt(&key, &input, &mut rng);
        assert_eq!(sym_decrypt(&key, &ct).unwrap(), input);
    }

    #[test]
    fn sym_detects_body_flip_and_wrong_key() {
        let key = SessionKey::from_bytes(&[7u8; 32]).unwrap();
        let other = SessionKey::from_bytes(&[8u8; 32]).unwrap();
        let mut ct = sym_encrypt(&key, b"hello world", &mut rng_from_seed(4));
        assert_eq!(
            sym_decrypt(&other, &ct).unwrap_err(),
            CryptoError::AuthenticationFailed
        );
        ct.body[0] ^= 1;
        assert_eq!(
            sym_decrypt(&key, &ct).unwrap_err(),
            CryptoError::AuthenticationFailed
        );
    }

    #[test]
    fn key_length_checked() {
        assert_eq!(
            SessionKey::from_bytes(&[0u8; 16]).unwrap_err(),
            CryptoError::KeyLength(16)
        );
    }

    #[test]
    fn ciphertext_encoding_rejects_bad_length() {
        let key = SessionKey::from_bytes(&[1u8; 32]).unwrap();
        let ct = sym_encrypt(&key, b"abc", &mut rng_from_seed(5));
        let mut bytes = ct.to_bytes();
        assert_eq!(Ciphertext::from_bytes(&bytes).unwrap(), ct);
        bytes.push(0);
        assert!(Ciphertext::from_bytes(&bytes).is_err());
    }

    #[test]
    fn pairing_is_non_degenerate() {
        let e = BilinearSuite.pairing(&BilinearSuite.g1(), &BilinearSuite.g2());
        assert!(!e.is_zero());
    }

    #[test]
    fn counter_tracks_operations() {
        let g = BilinearSuite.g1();
        let (_, c) = ops::count(|| {
            let a = ops::g1_exp(&g, &Scalar::from(5u64));
            ops::g1_mul(&a, &g)
        });
        assert_eq!(c.exp_g1, 1);
        assert_eq!(c.mul_g1, 1);
        assert_eq!(c.pairing, 0);
    }
}
