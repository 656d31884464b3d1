//! Cryptographic building blocks.
//!
//! Everything outside this module talks in terms of [`Digest`], [`KeyPair`],
//! [`PublicKey`], [`Signature`] and [`SealedBox`]. The concrete algorithms are:
//!
//! * digest: SHA-256 (32 bytes)
//! * signatures: Ed25519 (32-byte public keys, 64-byte signatures)
//! * sealed boxes: ephemeral X25519 against the recipient's Ed25519 key
//!   mapped to its Montgomery form, HKDF-SHA256 key derivation and
//!   ChaCha20-Poly1305 encryption.
//!
//! Keys are derived from a 32-byte seed so simulation runs are reproducible.

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use hkdf::Hkdf;
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub const DIGEST_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
pub const SEED_LEN: usize = 32;

const SEAL_INFO: &[u8] = b"dlc-sealed-box-v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("seed must be {SEED_LEN} bytes, got {0}")]
    SeedLength(usize),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("sealed box could not be opened")]
    Decrypt,
}

/// A 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest([u8; DIGEST_LEN]);

impl Digest {
    /// The all-zero digest, used as the NULL marker in reference fields.
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub const fn from_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; DIGEST_LEN]
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let raw = hex::decode(s).map_err(|e| CryptoError::Format {
            what: "digest",
            detail: e.to_string(),
        })?;
        let bytes: [u8; DIGEST_LEN] = raw.try_into().map_err(|v: Vec<u8>| CryptoError::Format {
            what: "digest",
            detail: format!("expected {DIGEST_LEN} bytes, got {}", v.len()),
        })?;
        Ok(Self(bytes))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}..)", hex::encode(&self.0[..6]))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Hashes exactly the given bytes.
pub fn digest(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Hashes the concatenation of `parts` without materializing it.
pub fn digest_concat(parts: &[&[u8]]) -> Digest {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    Digest(hasher.finalize().into())
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey([u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    /// Placeholder for "no key" in fixed-width fields.
    pub const ZERO: PublicKey = PublicKey([0u8; PUBLIC_KEY_LEN]);

    pub const fn from_array(bytes: [u8; PUBLIC_KEY_LEN]) -> Self {
        Self(bytes)
    }

    /// Accepts only byte strings that are a valid Ed25519 point encoding.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; PUBLIC_KEY_LEN] = bytes.try_into().map_err(|_| CryptoError::Format {
            what: "public key",
            detail: format!("expected {PUBLIC_KEY_LEN} bytes, got {}", bytes.len()),
        })?;
        VerifyingKey::from_bytes(&arr).map_err(|e| CryptoError::Format {
            what: "public key",
            detail: e.to_string(),
        })?;
        Ok(Self(arr))
    }

    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; PUBLIC_KEY_LEN]
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let raw = hex::decode(s).map_err(|e| CryptoError::Format {
            what: "public key",
            detail: e.to_string(),
        })?;
        Self::from_bytes(&raw)
    }

    fn verifying_key(&self) -> Option<VerifyingKey> {
        VerifyingKey::from_bytes(&self.0).ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({}..)", hex::encode(&self.0[..6]))
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature([u8; SIGNATURE_LEN]);

impl Signature {
    pub const fn from_array(bytes: [u8; SIGNATURE_LEN]) -> Self {
        Self(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; SIGNATURE_LEN] = bytes.try_into().map_err(|_| CryptoError::Format {
            what: "signature",
            detail: format!("expected {SIGNATURE_LEN} bytes, got {}", bytes.len()),
        })?;
        Ok(Self(arr))
    }

    pub fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..6]))
    }
}

/// Signing key pair derived deterministically from a 32-byte seed.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    public: PublicKey,
}

impl KeyPair {
    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn seed(&self) -> [u8; SEED_LEN] {
        self.signing.to_bytes()
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(self.signing.sign(msg).to_bytes())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

pub fn keygen(seed: &[u8]) -> Result<KeyPair, CryptoError> {
    let seed: [u8; SEED_LEN] = seed
        .try_into()
        .map_err(|_| CryptoError::SeedLength(seed.len()))?;
    let signing = SigningKey::from_bytes(&seed);
    let public = PublicKey(signing.verifying_key().to_bytes());
    Ok(KeyPair { signing, public })
}

pub fn sign(key: &KeyPair, msg: &[u8]) -> Signature {
    key.sign(msg)
}

/// Strict Ed25519 verification. Never panics; an undecodable key is simply
/// a failed verification.
pub fn verify(pk: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    let Some(vk) = pk.verifying_key() else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    vk.verify_strict(msg, &sig).is_ok()
}

/// Public-key encrypted payload: `ephemeral (32) || ciphertext+tag`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SealedBox {
    pub ephemeral: [u8; 32],
    pub ciphertext: Vec<u8>,
}

impl SealedBox {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.ciphertext.len());
        out.extend_from_slice(&self.ephemeral);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < 32 + 16 {
            return Err(CryptoError::Decrypt);
        }
        let mut ephemeral = [0u8; 32];
        ephemeral.copy_from_slice(&bytes[..32]);
        Ok(Self {
            ephemeral,
            ciphertext: bytes[32..].to_vec(),
        })
    }
}

fn seal_key(shared: &[u8; 32], ephemeral: &[u8; 32], recipient: &[u8; 32]) -> Key {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(ephemeral);
    salt[32..].copy_from_slice(recipient);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut okm = [0u8; 32];
    hk.expand(SEAL_INFO, &mut okm)
        .expect("32 bytes is a valid HKDF length");
    Key::from(okm)
}

/// Encrypts `plaintext` to `recipient`. `ephemeral_seed` must be fresh per
/// call; the simulator draws it from its seeded RNG.
pub fn seal(
    recipient: &PublicKey,
    plaintext: &[u8],
    ephemeral_seed: [u8; 32],
) -> Result<SealedBox, CryptoError> {
    let vk = recipient
        .verifying_key()
        .ok_or_else(|| CryptoError::Format {
            what: "public key",
            detail: "not a valid curve point".into(),
        })?;
    let recipient_x = x25519_dalek::PublicKey::from(vk.to_montgomery().to_bytes());
    let secret = x25519_dalek::StaticSecret::from(ephemeral_seed);
    let ephemeral = x25519_dalek::PublicKey::from(&secret).to_bytes();
    let shared = secret.diffie_hellman(&recipient_x);
    if !shared.was_contributory() {
        return Err(CryptoError::Format {
            what: "public key",
            detail: "low-order point".into(),
        });
    }
    let cipher = ChaCha20Poly1305::new(&seal_key(
        shared.as_bytes(),
        &ephemeral,
        recipient.as_bytes(),
    ));
    // Each key is used exactly once, so a constant nonce is fine.
    let ciphertext = cipher
        .encrypt(&Nonce::default(), plaintext)
        .map_err(|_| CryptoError::Decrypt)?;
    Ok(SealedBox {
        ephemeral,
        ciphertext,
    })
}

pub fn open(key: &KeyPair, sealed: &SealedBox) -> Result<Vec<u8>, CryptoError> {
    let secret = x25519_dalek::StaticSecret::from(key.signing.to_scalar_bytes());
    let shared = secret.diffie_hellman(&x25519_dalek::PublicKey::from(sealed.ephemeral));
    if !shared.was_contributory() {
        return Err(CryptoError::Decrypt);
    }
    let cipher = ChaCha20Poly1305::new(&seal_key(
        shared.as_bytes(),
        &sealed.ephemeral,
        key.public.as_bytes(),
    ));
    cipher
        .decrypt(&Nonce::default(), sealed.ciphertext.as_slice())
        .map_err(|_| CryptoError::Decrypt)
}
