//! Topic-level authorization: tag-based least privilege.
//!
//! Grants address tags, not raw topics: a principal is granted `(device
//! glob, tag glob or #base, read|write)` and the evaluator compiles that
//! against the parsed topic on every publish, subscription and delivery.
//! Absence of a matching grant means deny. Device principals get the fixed
//! allowances they need to run the shadow cycle on their own base shadow
//! (publish `update`/`get`, read the response and `delta` channels), and the
//! admin channel `tags/push` requires the admin role outright.
//!
//! The policy is an immutable snapshot swapped atomically on grant/revoke;
//! `authorize` is read-only and callable from any thread. The same
//! [`AccessDecider`] contract is what an external-broker auth plugin would
//! implement.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};

use argon2::password_hash::rand_core::OsRng;
use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::Argon2;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::glob::glob_match;
use crate::ident::{DeviceId, PrincipalId, ShadowName};
use crate::transport::{Channel, Topic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Admin,
    Device,
    App,
}

/// Stored client credential. Passwords are argon2 PHC strings (memory-hard,
/// per-entry salt); pre-shared keys are opaque byte strings stored as their
/// SHA-256 digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum Credential {
    Password { phc: String },
    Psk { sha256: String },
}

/// An authenticatable client identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub id: PrincipalId,
    #[serde(default)]
    pub roles: BTreeSet<Role>,
    /// Device principals are bound to exactly one device.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<DeviceId>,
    pub credential: Credential,
}

impl Principal {
    pub fn validate(&self) -> Result<(), AccessError> {
        if self.roles.contains(&Role::Device) && self.device.is_none() {
            return Err(AccessError::DeviceRoleUnbound(self.id.clone()));
        }
        Ok(())
    }
}

/// Direction of an operation against a shadow topic. Publishing a state
/// mutation is `Write`; requesting or observing state is `Read`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Read,
    Write,
}

/// Which shadows a grant addresses: the base shadow (`#base`) or tag names
/// matched by a glob.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ShadowPattern {
    Base,
    TagGlob(String),
}

impl ShadowPattern {
    pub fn parse(s: &str) -> Result<Self, AccessError> {
        if s == "#base" {
            return Ok(ShadowPattern::Base);
        }
        let ok = !s.is_empty()
            && s.chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || matches!(c, '_' | '-' | '*' | '?'));
        if ok {
            Ok(ShadowPattern::TagGlob(s.to_owned()))
        } else {
            Err(AccessError::InvalidShadowPattern(s.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            ShadowPattern::Base => "#base",
            ShadowPattern::TagGlob(g) => g,
        }
    }

    fn matches(&self, shadow: &ShadowName) -> bool {
        match (self, shadow) {
            (ShadowPattern::Base, ShadowName::Base) => true,
            (ShadowPattern::TagGlob(g), ShadowName::Tag(t)) => glob_match(g, t.as_str()),
            _ => false,
        }
    }
}

impl Serialize for ShadowPattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ShadowPattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        ShadowPattern::parse(&s).map_err(de::Error::custom)
    }
}

/// One policy entry: principal may `action` the shadows of `device` matched
/// by `tag`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Grant {
    pub principal: PrincipalId,
    /// Glob over device ids.
    pub device: String,
    /// Tag glob, or `#base` for the base shadow.
    pub tag: ShadowPattern,
    pub action: Action,
}

impl Grant {
    fn matches(&self, principal: &PrincipalId, action: Action, topic: &Topic) -> bool {
        self.principal == *principal
            && self.action == action
            && glob_match(&self.device, topic.device.as_str())
            && self.tag.matches(&topic.shadow)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DenyReason {
    UnparsableTopic(String),
    UnknownPrincipal(PrincipalId),
    AdminRequired,
    NoMatchingGrant,
}

impl std::fmt::Display for DenyReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DenyReason::UnparsableTopic(t) => write!(f, "unparsable topic {t:?}"),
            DenyReason::UnknownPrincipal(p) => write!(f, "unknown principal {p}"),
            DenyReason::AdminRequired => write!(f, "admin role required"),
            DenyReason::NoMatchingGrant => write!(f, "no matching grant"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny(DenyReason),
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        matches!(self, Decision::Allow)
    }
}

/// Deny-by-default grant set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessPolicy {
    pub grants: BTreeSet<Grant>,
}

/// The fixed allowances a device principal holds on its own base shadow:
/// publish update and get, read the update/get response channels and delta.
fn device_implicit(channel: Channel, action: Action) -> bool {
    matches!(
        (channel, action),
        (Channel::Update, Action::Write)
            | (Channel::Get, Action::Read)
            | (Channel::UpdateDelta, Action::Read)
            | (Channel::UpdateAccepted, Action::Read)
            | (Channel::UpdateRejected, Action::Read)
            | (Channel::GetAccepted, Action::Read)
            | (Channel::GetRejected, Action::Read)
    )
}

impl AccessPolicy {
    pub fn new(grants: impl IntoIterator<Item = Grant>) -> Self {
        AccessPolicy {
            grants: grants.into_iter().collect(),
        }
    }

    /// Pure decision for one operation. Deny-by-default: only the admin
    /// rule, the device self-rule or an explicit grant can allow.
    pub fn authorize(&self, principal: &Principal, action: Action, topic: &Topic) -> Decision {
        if topic.channel == Channel::TagsPush {
            return if principal.roles.contains(&Role::Admin) {
                Decision::Allow
            } else {
                Decision::Deny(DenyReason::AdminRequired)
            };
        }
        if principal.roles.contains(&Role::Device)
            && principal.device.as_ref() == Some(&topic.device)
            && topic.shadow.is_base()
            && device_implicit(topic.channel, action)
        {
            return Decision::Allow;
        }
        if self
            .grants
            .iter()
            .any(|g| g.matches(&principal.id, action, topic))
        {
            return Decision::Allow;
        }
        Decision::Deny(DenyReason::NoMatchingGrant)
    }
}

/// Convenience wrapper over [`AccessPolicy::authorize`] that parses the
/// topic first; unparsable topics deny with the offending string.
pub fn authorize(
    policy: &AccessPolicy,
    principal: &Principal,
    action: Action,
    topic: &str,
) -> Decision {
    match Topic::parse(topic) {
        Ok(t) => policy.authorize(principal, action, &t),
        Err(_) => Decision::Deny(DenyReason::UnparsableTopic(topic.to_owned())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccessError {
    #[error("principal {0} is not an administrator")]
    Unauthorized(PrincipalId),
    #[error("unknown principal {0}")]
    UnknownPrincipal(PrincipalId),
    #[error("device-role principal {0} must be bound to a device id")]
    DeviceRoleUnbound(PrincipalId),
    #[error("invalid shadow pattern {0:?} (tag glob or #base)")]
    InvalidShadowPattern(String),
    #[error("duplicate principal id {0}")]
    DuplicatePrincipal(PrincipalId),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("unknown principal {0}")]
    UnknownPrincipal(PrincipalId),
    #[error("credential verification failed")]
    BadCredentials,
    #[error("password hashing failed: {0}")]
    Hash(String),
}

/// Hashes a password into an argon2 PHC string with a fresh random salt.
pub fn hash_password(password: &str) -> Result<String, AuthError> {
    let salt = SaltString::generate(&mut OsRng);
    Argon2::default()
        .hash_password(password.as_bytes(), &salt)
        .map(|h| h.to_string())
        .map_err(|e| AuthError::Hash(e.to_string()))
}

/// Digest used to store pre-shared keys at rest.
pub fn psk_digest(secret: &[u8]) -> String {
    let digest = Sha256::digest(secret);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// The broker-side decision hook consulted on every publish, subscription
/// establishment and delivery. No result is cached across policy changes.
pub trait AccessDecider: Send + Sync {
    fn decide(&self, principal: &PrincipalId, action: Action, topic: &Topic) -> Decision;
}

/// Principal store plus the live policy snapshot.
pub struct AccessController {
    principals: BTreeMap<PrincipalId, Principal>,
    policy: RwLock<Arc<AccessPolicy>>,
}

impl AccessController {
    pub fn new(
        principals: impl IntoIterator<Item = Principal>,
        policy: AccessPolicy,
    ) -> Result<Self, AccessError> {
        let mut map = BTreeMap::new();
        for p in principals {
            p.validate()?;
            if map.insert(p.id.clone(), p.clone()).is_some() {
                return Err(AccessError::DuplicatePrincipal(p.id));
            }
        }
        Ok(AccessController {
            principals: map,
            policy: RwLock::new(Arc::new(policy)),
        })
    }

    pub fn principal(&self, id: &PrincipalId) -> Option<&Principal> {
        self.principals.get(id)
    }

    pub fn principals(&self) -> impl Iterator<Item = &Principal> {
        self.principals.values()
    }

    /// Current immutable policy snapshot.
    pub fn policy(&self) -> Arc<AccessPolicy> {
        self.policy.read().expect("policy lock poisoned").clone()
    }

    /// Verifies a secret against the stored credential.
    pub fn authenticate(&self, id: &PrincipalId, secret: &[u8]) -> Result<&Principal, AuthError> {
        let p = self
            .principals
            .get(id)
            .ok_or_else(|| AuthError::UnknownPrincipal(id.clone()))?;
        match &p.credential {
            Credential::Password { phc } => {
                let parsed = PasswordHash::new(phc).map_err(|e| AuthError::Hash(e.to_string()))?;
                Argon2::default()
                    .verify_password(secret, &parsed)
                    .map_err(|_| AuthError::BadCredentials)?;
            }
            Credential::Psk { sha256 } => {
                if psk_digest(secret) != *sha256 {
                    return Err(AuthError::BadCredentials);
                }
            }
        }
        Ok(p)
    }

    fn require_admin(&self, caller: &PrincipalId) -> Result<(), AccessError> {
        let p = self
            .principals
            .get(caller)
            .ok_or_else(|| AccessError::UnknownPrincipal(caller.clone()))?;
        if p.roles.contains(&Role::Admin) {
            Ok(())
        } else {
            Err(AccessError::Unauthorized(caller.clone()))
        }
    }

    /// Adds a grant; admin-only. The policy snapshot is replaced atomically.
    pub fn grant(&self, caller: &PrincipalId, grant: Grant) -> Result<(), AccessError> {
        self.require_admin(caller)?;
        let mut guard = self.policy.write().expect("policy lock poisoned");
        let mut next = (**guard).clone();
        next.grants.insert(grant);
        *guard = Arc::new(next);
        Ok(())
    }

    /// Removes a grant; admin-only. Revoking an absent entry is a no-op.
    pub fn revoke(&self, caller: &PrincipalId, grant: &Grant) -> Result<(), AccessError> {
        self.require_admin(caller)?;
        let mut guard = self.policy.write().expect("policy lock poisoned");
        if guard.grants.contains(grant) {
            let mut next = (**guard).clone();
            next.grants.remove(grant);
            *guard = Arc::new(next);
        }
        Ok(())
    }
}

impl AccessDecider for AccessController {
    fn decide(&self, principal: &PrincipalId, action: Action, topic: &Topic) -> Decision {
        match self.principals.get(principal) {
            None => Decision::Deny(DenyReason::UnknownPrincipal(principal.clone())),
            Some(p) => self.policy().authorize(p, action, topic),
        }
    }
}

/// On-disk policy document: `{"grants":[{"principal":"app1","device":"car1",
/// "tag":"pressure","action":"read"}]}`.
pub type PolicyFile = AccessPolicy;

/// On-disk credential store with hashed secrets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialsFile {
    pub principals: Vec<Principal>,
}
