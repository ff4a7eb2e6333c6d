//! Device-to-SA attachment: a three-message pre-shared-key
//! challenge-response relayed through the AAA stub.
//!
//! 1. device -> SA: `{handle, claim, N_D}`. The claim is the device id, or in
//!    anonymous mode the id encrypted for the AAA under a fresh pseudonym.
//! 2. SA -> device: `{N_A, proof_A}` after the AAA resolves the claim and
//!    hands the SA the derived channel key.
//! 3. device -> SA: `{proof_D}` under the channel key.
//!
//! Both sides derive the channel key from the device's AAA secret, so a
//! device holding the wrong secret fails closed at step 2.

use std::collections::BTreeMap;

use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use serde::Serialize;
use sha2::Sha256;
use thiserror::Error;

use super::{Device, PrincipalId, SecurityAgent};
use crate::crypto_suite::{hash256, sym_decrypt, sym_encrypt, Ciphertext, SessionKey};

const KEY_LABEL: &[u8] = b"resiot/attach/key/v1";
const AAA_PROOF_LABEL: &[u8] = b"resiot/attach/aaa-proof/v1";
const DEVICE_PROOF_LABEL: &[u8] = b"resiot/attach/device-proof/v1";
const CLAIM_LABEL: &[u8] = b"resiot/attach/claim/v1";

/// Symmetric key protecting one device-SA channel.
#[derive(Clone, PartialEq, Eq)]
pub struct ChannelKey([u8; 32]);

impl std::fmt::Debug for ChannelKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ChannelKey(..)")
    }
}

impl ChannelKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttachError {
    #[error("authentication failed: {0}")]
    AuthenticationFailed(&'static str),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Attachment {
    pub device: PrincipalId,
    pub sa: PrincipalId,
    /// The device's link address towards this SA.
    pub handle: u64,
    pub anonymous: bool,
    pub established_at: f64,
    #[serde(skip)]
    pub key: ChannelKey,
}

/// The AAA system: the only party besides each device that knows the
/// device's pre-shared secret.
#[derive(Clone, Debug, Default)]
pub struct AaaStub {
    secrets: BTreeMap<PrincipalId, [u8; 32]>,
}

struct Grant {
    key: ChannelKey,
    n_a: [u8; 16],
    proof_a: [u8; 32],
}

impl AaaStub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, device: PrincipalId, secret: [u8; 32]) {
        self.secrets.insert(device, secret);
    }

    fn resolve(&self, handle: u64, claim: &[u8]) -> Option<(PrincipalId, [u8; 32])> {
        if claim.len() == 8 {
            let id = u64::from_be_bytes(claim.try_into().ok()?);
            return (id == handle)
                .then(|| self.secrets.get(&id).map(|s| (id, *s)))
                .flatten();
        }
        let ct = Ciphertext::from_bytes(claim).ok()?;
        self.secrets.iter().find_map(|(&id, secret)| {
            let pt = sym_decrypt(&claim_key(secret), &ct).ok()?;
            (pt == id.to_be_bytes()).then_some((id, *secret))
        })
    }

    fn grant<R: RngCore + CryptoRng>(
        &self,
        handle: u64,
        claim: &[u8],
        n_d: &[u8; 16],
        sa: PrincipalId,
        rng: &mut R,
    ) -> Option<Grant> {
        let (_, secret) = self.resolve(handle, claim)?;
        let mut n_a = [0u8; 16];
        rng.fill_bytes(&mut n_a);
        Some(Grant {
            key: derive_key(&secret, n_d, &n_a, sa, handle),
            proof_a: aaa_proof(&secret, n_d, &n_a, sa, handle),
            n_a,
        })
    }
}

fn hmac(key: &[u8], label: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(label);
    for p in parts {
        mac.update(&(p.len() as u32).to_be_bytes());
        mac.update(p);
    }
    mac.finalize().into_bytes().into()
}

fn claim_key(secret: &[u8; 32]) -> SessionKey {
    SessionKey::from_bytes(&hash256(CLAIM_LABEL, &[secret])).expect("32 bytes")
}

fn derive_key(
    secret: &[u8; 32],
    n_d: &[u8],
    n_a: &[u8],
    sa: PrincipalId,
    handle: u64,
) -> ChannelKey {
    ChannelKey(hmac(
        secret,
        KEY_LABEL,
        &[n_d, n_a, &sa.to_be_bytes(), &handle.to_be_bytes()],
    ))
}

fn aaa_proof(secret: &[u8; 32], n_d: &[u8], n_a: &[u8], sa: PrincipalId, handle: u64) -> [u8; 32] {
    hmac(
        secret,
        AAA_PROOF_LABEL,
        &[n_d, n_a, &sa.to_be_bytes(), &handle.to_be_bytes()],
    )
}

/// Attaches `device` to `sa` using the device's own AAA secret.
pub fn attach<R: RngCore + CryptoRng>(
    device: &Device,
    sa: &SecurityAgent,
    aaa: &AaaStub,
    anonymous: bool,
    now: f64,
    rng: &mut R,
) -> Result<Attachment, AttachError> {
    attach_with_secret(device.id, device.aaa_secret(), sa, aaa, anonymous, now, rng)
}

/// Attachment attempt by `device` presenting `secret`. Neither side is
/// modified; the caller installs the returned attachment.
pub fn attach_with_secret<R: RngCore + CryptoRng>(
    device: PrincipalId,
    secret: &[u8; 32],
    sa: &SecurityAgent,
    aaa: &AaaStub,
    anonymous: bool,
    now: f64,
    rng: &mut R,
) -> Result<Attachment, AttachError> {
    // Message 1.
    let mut n_d = [0u8; 16];
    rng.fill_bytes(&mut n_d);
    let (handle, claim) = if anonymous {
        let pseudonym = rng.next_u64();
        let ct = sym_encrypt(&claim_key(secret), &device.to_be_bytes(), rng);
        (pseudonym, ct.to_bytes())
    } else {
        (device, device.to_be_bytes().to_vec())
    };

    // The SA relays to the AAA, then message 2.
    let grant =
        aaa.grant(handle, &claim, &n_d, sa.id, rng)
            .ok_or(AttachError::AuthenticationFailed(
                "AAA could not resolve the device claim",
            ))?;
    let expected = aaa_proof(secret, &n_d, &grant.n_a, sa.id, handle);
    if expected != grant.proof_a {
        return Err(AttachError::AuthenticationFailed(
            "AAA proof did not verify at the device",
        ));
    }

    // Message 3.
    let key = derive_key(secret, &n_d, &grant.n_a, sa.id, handle);
    let proof_d = hmac(key.as_bytes(), DEVICE_PROOF_LABEL, &[&grant.n_a, &n_d]);
    if proof_d
        != hmac(
            grant.key.as_bytes(),
            DEVICE_PROOF_LABEL,
            &[&grant.n_a, &n_d],
        )
    {
        return Err(AttachError::AuthenticationFailed(
            "device proof did not verify at the SA",
        ));
    }
    Ok(Attachment {
        device,
        sa: sa.id,
        handle,
        anonymous,
        established_at: now,
        key,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto_suite::rng_from_seed;

    fn setup() -> (Device, Device, SecurityAgent, AaaStub) {
        let mut aaa = AaaStub::new();
        let d1 = Device::new(1, "d1", [1; 32]);
        let d2 = Device::new(2, "d2", [2; 32]);
        aaa.register(1, [1; 32]);
        aaa.register(2, [2; 32]);
        (d1, d2, SecurityAgent::new(10, "sa"), aaa)
    }

    #[test]
    fn matching_secrets_attach() {
        let (d1, _, sa, aaa) = setup();
        let mut rng = rng_from_seed(1);
        for anonymous in [false, true] {
            let a = attach(&d1, &sa, &aaa, anonymous, 0.0, &mut rng).unwrap();
            assert_eq!((a.device, a.sa), (1, 10));
            assert_eq!(a.handle == 1, !anonymous);
        }
    }

    #[test]
    fn wrong_secret_fails_closed() {
        let (_, _, sa, aaa) = setup();
        let mut rng = rng_from_seed(2);
        for anonymous in [false, true] {
            let r = attach_with_secret(1, &[9; 32], &sa, &aaa, anonymous, 0.0, &mut rng);
            assert!(matches!(r, Err(AttachError::AuthenticationFailed(_))));
        }
        let unknown = attach_with_secret(3, &[3; 32], &sa, &aaa, false, 0.0, &mut rng);
        assert!(unknown.is_err());
    }

    #[test]
    fn two_devices_get_independent_keys() {
        let (d1, d2, sa, aaa) = setup();
        let mut rng = rng_from_seed(3);
        let a1 = attach(&d1, &sa, &aaa, false, 0.0, &mut rng).unwrap();
        let a2 = attach(&d2, &sa, &aaa, false, 0.0, &mut rng).unwrap();
        assert_ne!(a1.key, a2.key);
        let again = attach(&d1, &sa, &aaa, false, 0.0, &mut rng).unwrap();
        assert_ne!(a1.key, again.key);
    }

    #[test]
    fn anonymous_pseudonyms_are_fresh() {
        let (d1, _, sa, aaa) = setup();
        let mut rng = rng_from_seed(4);
        let a = attach(&d1, &sa, &aaa, true, 0.0, &mut rng).unwrap();
        let b = attach(&d1, &sa, &aaa, true, 0.0, &mut rng).unwrap();
        assert_ne!(a.handle, b.handle);
    }
}
