//! ID-card credentials: Ed25519 keys, card issuance by the registration
//! authority, signing, and the `.bcid` card file.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::canonical::{self, DecodeError, Fields, Value};

pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error("key seed must be 32 bytes, got {0}")]
    SeedLength(usize),
    #[error("participant reference must not be empty")]
    EmptyParticipantRef,
    #[error("connection profile needs a network id and at least one endpoint")]
    InvalidProfile,
    #[error("card {0} carries no secret key")]
    NoSecretKey(String),
    #[error("malformed card file: {0}")]
    MalformedCard(String),
    #[error("card issuer signature does not verify")]
    SignatureInvalid,
    #[error("card was issued for network `{0}`")]
    WrongNetwork(String),
    #[error("card secret key does not match its public key")]
    KeyMismatch,
    #[error("card file I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl From<DecodeError> for IdentityError {
    fn from(e: DecodeError) -> Self {
        IdentityError::MalformedCard(e.to_string())
    }
}

/// An Ed25519 verifying key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    /// Strict Ed25519 verification. Anything that is not a well-formed
    /// 64-byte signature from this key over `message` yields false.
    pub fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        let Ok(sig) = <[u8; SIGNATURE_LEN]>::try_from(signature) else {
            return false;
        };
        let Ok(key) = VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        key.verify_strict(message, &ed25519_dalek::Signature::from_bytes(&sig)).is_ok()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for PublicKey {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|e| IdentityError::MalformedCard(format!("public key hex: {e}")))?;
        Ok(PublicKey(out))
    }
}

impl serde::Serialize for PublicKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> serde::Deserialize<'de> for PublicKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// An Ed25519 keypair, stored as its 32-byte seed.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        KeyPair { signing: SigningKey::from_bytes(&seed) }
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn seed(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> [u8; SIGNATURE_LEN] {
        self.signing.sign(message).to_bytes()
    }
}

impl PartialEq for KeyPair {
    fn eq(&self, other: &Self) -> bool {
        self.seed() == other.seed()
    }
}

impl Eq for KeyPair {}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public_key", &self.public_key()).finish_non_exhaustive()
    }
}

/// Derives a keypair from a 32-byte seed, or from the OS RNG when no seed
/// is given.
pub fn generate_keypair(seed: Option<&[u8]>) -> Result<KeyPair, IdentityError> {
    match seed {
        Some(bytes) => {
            let seed: [u8; 32] = bytes.try_into().map_err(|_| IdentityError::SeedLength(bytes.len()))?;
            Ok(KeyPair::from_seed(seed))
        }
        None => Ok(KeyPair::generate(&mut rand::rngs::OsRng)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Coordinator,
    User,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Coordinator => "coordinator",
            Role::User => "user",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coordinator" => Ok(Role::Coordinator),
            "user" => Ok(Role::User),
            other => Err(format!("unknown role `{other}` (expected coordinator or user)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConnectionProfile {
    pub network_id: String,
    pub node_endpoints: Vec<String>,
}

impl ConnectionProfile {
    pub fn new(network_id: impl Into<String>, endpoint: impl Into<String>) -> Self {
        ConnectionProfile { network_id: network_id.into(), node_endpoints: vec![endpoint.into()] }
    }
}

/// A participant credential signed by the network's registration authority.
///
/// Holder copies carry the secret key; the public variant (see
/// [`IdCard::public`]) omits it and is what node-side registries keep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdCard {
    pub card_id: String,
    pub participant_type: String,
    pub participant_ref: String,
    pub role: Role,
    pub profile: ConnectionProfile,
    pub public_key: PublicKey,
    pub secret: Option<KeyPair>,
    pub issuer_public_key: PublicKey,
    pub issuer_signature: Vec<u8>,
}

const CARD_FIELDS: &[&str] = &[
    "card_id",
    "participant_type",
    "participant_ref",
    "role",
    "network_id",
    "node_endpoints",
    "public_key",
    "secret_key",
    "issuer_public_key",
    "issuer_signature",
];

impl IdCard {
    /// Canonical bytes covered by the issuer signature: every field except
    /// the secret key and the signature itself.
    pub fn signed_bytes(&self) -> Vec<u8> {
        canonical::encode(&self.signed_value())
    }

    fn signed_value(&self) -> Value {
        Value::map([
            ("card_id", Value::str(&self.card_id)),
            ("participant_type", Value::str(&self.participant_type)),
            ("participant_ref", Value::str(&self.participant_ref)),
            ("role", Value::str(self.role.as_str())),
            ("network_id", Value::str(&self.profile.network_id)),
            ("node_endpoints", Value::List(self.profile.node_endpoints.iter().map(Value::str).collect())),
            ("public_key", Value::bytes(self.public_key.0)),
            ("issuer_public_key", Value::bytes(self.issuer_public_key.0)),
        ])
    }

    pub fn verify_issuer(&self) -> bool {
        self.issuer_public_key.verify(&self.signed_bytes(), &self.issuer_signature)
    }

    /// Copy without secret material.
    pub fn public(&self) -> IdCard {
        IdCard { secret: None, ..self.clone() }
    }

    pub fn sign(&self, message: &[u8]) -> Result<[u8; SIGNATURE_LEN], IdentityError> {
        self.secret.as_ref().map(|k| k.sign(message)).ok_or_else(|| IdentityError::NoSecretKey(self.card_id.clone()))
    }

    pub fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        self.public_key.verify(message, signature)
    }

    pub fn to_value(&self) -> Value {
        let mut v = self.signed_value();
        if let Value::Map(m) = &mut v {
            m.insert("issuer_signature".into(), Value::bytes(self.issuer_signature.clone()));
            if let Some(secret) = &self.secret {
                m.insert("secret_key".into(), Value::bytes(secret.seed()));
            }
        }
        v
    }

    /// Parses a decoded card map and checks the issuer signature and key
    /// consistency.
    pub fn from_value(value: &Value) -> Result<Self, IdentityError> {
        let f = Fields::of(value, "card")?;
        f.only(CARD_FIELDS)?;
        let role = f.str("role")?.parse::<Role>().map_err(IdentityError::MalformedCard)?;
        let node_endpoints = f
            .list("node_endpoints")?
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_owned)
                    .ok_or_else(|| IdentityError::MalformedCard("endpoint is not a string".into()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let secret = match f.opt("secret_key") {
            Some(Value::Bytes(b)) => Some(KeyPair::from_seed(
                b.as_slice()
                    .try_into()
                    .map_err(|_| IdentityError::MalformedCard("secret_key must be 32 bytes".into()))?,
            )),
            Some(_) => return Err(IdentityError::MalformedCard("secret_key must be bytes".into())),
            None => None,
        };
        let card = IdCard {
            card_id: f.str("card_id")?.to_owned(),
            participant_type: f.str("participant_type")?.to_owned(),
            participant_ref: f.str("participant_ref")?.to_owned(),
            role,
            profile: ConnectionProfile { network_id: f.str("network_id")?.to_owned(), node_endpoints },
            public_key: PublicKey(f.fixed("public_key")?),
            secret,
            issuer_public_key: PublicKey(f.fixed("issuer_public_key")?),
            issuer_signature: f.bytes("issuer_signature")?.to_vec(),
        };
        if let Some(secret) = &card.secret {
            if secret.public_key() != card.public_key {
                return Err(IdentityError::KeyMismatch);
            }
        }
        if !card.verify_issuer() {
            return Err(IdentityError::SignatureInvalid);
        }
        Ok(card)
    }

    /// `.bcid` text: the canonical card map, hex-encoded, one line.
    pub fn to_file_text(&self) -> String {
        let mut s = hex::encode(canonical::encode(&self.to_value()));
        s.push('\n');
        s
    }

    pub fn from_file_text(text: &str) -> Result<Self, IdentityError> {
        let line = text.strip_suffix('\n').unwrap_or(text);
        if line.is_empty() || line.bytes().any(|b| !matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(IdentityError::MalformedCard("expected one line of lowercase hex".into()));
        }
        let bytes = hex::decode(line).map_err(|e| IdentityError::MalformedCard(e.to_string()))?;
        Self::from_value(&canonical::decode(&bytes)?)
    }
}

/// Issues a card with a fresh keypair drawn from `rng`.
pub fn issue_card_with_rng<R: RngCore + CryptoRng>(
    rng: &mut R,
    authority_key: &KeyPair,
    participant_type: &str,
    participant_ref: &str,
    role: Role,
    profile: ConnectionProfile,
) -> Result<IdCard, IdentityError> {
    if participant_ref.trim().is_empty() {
        return Err(IdentityError::EmptyParticipantRef);
    }
    if profile.network_id.is_empty() || profile.node_endpoints.is_empty() {
        return Err(IdentityError::InvalidProfile);
    }
    let mut id = [0u8; 16];
    rng.fill_bytes(&mut id);
    let keypair = KeyPair::generate(rng);
    let mut card = IdCard {
        card_id: format!("card-{}", hex::encode(id)),
        participant_type: participant_type.to_owned(),
        participant_ref: participant_ref.to_owned(),
        role,
        profile,
        public_key: keypair.public_key(),
        secret: Some(keypair),
        issuer_public_key: authority_key.public_key(),
        issuer_signature: Vec::new(),
    };
    card.issuer_signature = authority_key.sign(&card.signed_bytes()).to_vec();
    Ok(card)
}

pub fn issue_card(
    authority_key: &KeyPair,
    participant_type: &str,
    participant_ref: &str,
    role: Role,
    profile: ConnectionProfile,
) -> Result<IdCard, IdentityError> {
    issue_card_with_rng(&mut rand::rngs::OsRng, authority_key, participant_type, participant_ref, role, profile)
}

/// Public cards known to a network, keyed by card id. Only cards whose
/// issuer signature verifies under the network's registration authority
/// get in.
#[derive(Debug, Clone, Default)]
pub struct CardDirectory {
    cards: std::collections::BTreeMap<String, IdCard>,
}

impl CardDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the public half of `card` after checking it was issued by
    /// `authority` for `network_id`. Re-inserting a known card is a no-op.
    pub fn admit(&mut self, card: &IdCard, authority: &PublicKey, network_id: &str) -> Result<(), IdentityError> {
        check_card(card, authority, network_id)?;
        self.cards.entry(card.card_id.clone()).or_insert_with(|| card.public());
        Ok(())
    }

    pub fn get(&self, card_id: &str) -> Option<&IdCard> {
        self.cards.get(card_id)
    }

    pub fn len(&self) -> usize {
        self.cards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cards.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &IdCard> {
        self.cards.values()
    }
}

/// A card is valid for a network when the registration authority signed it
/// and its connection profile names that network.
pub fn check_card(card: &IdCard, authority: &PublicKey, network_id: &str) -> Result<(), IdentityError> {
    if card.issuer_public_key != *authority || !card.verify_issuer() {
        return Err(IdentityError::SignatureInvalid);
    }
    if card.profile.network_id != network_id {
        return Err(IdentityError::WrongNetwork(card.profile.network_id.clone()));
    }
    Ok(())
}

pub fn save_card(card: &IdCard, path: impl AsRef<Path>) -> Result<(), IdentityError> {
    fs::write(path, card.to_file_text())?;
    Ok(())
}

pub fn load_card(path: impl AsRef<Path>) -> Result<IdCard, IdentityError> {
    let text = fs::read(path)?;
    let text = String::from_utf8(text).map_err(|_| IdentityError::MalformedCard("card file is not UTF-8".into()))?;
    IdCard::from_file_text(&text)
}
