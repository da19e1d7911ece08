//! Identifier newtypes and the grammars they enforce.
//!
//! Keys, tags, device ids and principal ids all travel through topic strings
//! and JSON payloads, so each one validates its grammar at construction and
//! is immutable afterwards. Tag names are case-normalized to lowercase on
//! ingest. The inner `Arc<str>` keeps clones cheap; tagged pairs are fanned
//! out into one sub-document per tag, so identifiers get cloned a lot.

use std::fmt;
use std::sync::Arc;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Grammar violations for the identifier newtypes.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentError {
    #[error("invalid key {0:?}: keys must match [a-zA-Z0-9_./-]{{1,128}}")]
    InvalidKey(String),
    #[error("invalid tag {0:?}: tags must match [a-z0-9_-]{{1,64}}")]
    InvalidTag(String),
    #[error("invalid device id {0:?}: device ids must match [a-zA-Z0-9_-]{{1,64}}")]
    InvalidDeviceId(String),
    #[error("invalid principal id {0:?}: principal ids must match [a-zA-Z0-9_.@-]{{1,128}}")]
    InvalidPrincipalId(String),
}

fn key_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '/' | '-')
}

fn tag_char(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || matches!(c, '_' | '-')
}

fn device_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-')
}

fn principal_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '@' | '-')
}

macro_rules! str_newtype {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                $name::new(&s).map_err(de::Error::custom)
            }
        }
    };
}

str_newtype! {
    /// Name of one key-value pair within a shadow document.
    Key
}

str_newtype! {
    /// A tag attached to a key-value pair; the unit of data classification.
    TagName
}

str_newtype! {
    /// Identifies one physical device and its shadow family.
    DeviceId
}

str_newtype! {
    /// Identifies an authenticated client (device, application or admin).
    PrincipalId
}

impl Key {
    pub fn new(s: impl AsRef<str>) -> Result<Self, IdentError> {
        let s = s.as_ref();
        if s.is_empty() || s.len() > 128 || !s.chars().all(key_char) {
            return Err(IdentError::InvalidKey(s.to_owned()));
        }
        Ok(Key(Arc::from(s)))
    }
}

impl TagName {
    /// Validates and case-normalizes a tag name. Uppercase ASCII is folded to
    /// lowercase; any other out-of-grammar character rejects the tag.
    pub fn new(s: impl AsRef<str>) -> Result<Self, IdentError> {
        let raw = s.as_ref();
        if raw.is_empty() || raw.len() > 64 {
            return Err(IdentError::InvalidTag(raw.to_owned()));
        }
        let lowered = raw.to_ascii_lowercase();
        if !lowered.chars().all(tag_char) {
            return Err(IdentError::InvalidTag(raw.to_owned()));
        }
        Ok(TagName(Arc::from(lowered.as_str())))
    }
}

impl DeviceId {
    pub fn new(s: impl AsRef<str>) -> Result<Self, IdentError> {
        let s = s.as_ref();
        if s.is_empty() || s.len() > 64 || !s.chars().all(device_char) {
            return Err(IdentError::InvalidDeviceId(s.to_owned()));
        }
        Ok(DeviceId(Arc::from(s)))
    }
}

impl PrincipalId {
    pub fn new(s: impl AsRef<str>) -> Result<Self, IdentError> {
        let s = s.as_ref();
        if s.is_empty() || s.len() > 128 || !s.chars().all(principal_char) {
            return Err(IdentError::InvalidPrincipalId(s.to_owned()));
        }
        Ok(PrincipalId(Arc::from(s)))
    }
}

/// Which shadow of a device a message or document refers to: the single
/// unnamed base shadow, or one named per-tag sub-shadow.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ShadowName {
    Base,
    Tag(TagName),
}

impl ShadowName {
    pub fn is_base(&self) -> bool {
        matches!(self, ShadowName::Base)
    }

    pub fn tag(&self) -> Option<&TagName> {
        match self {
            ShadowName::Base => None,
            ShadowName::Tag(t) => Some(t),
        }
    }
}

impl fmt::Display for ShadowName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShadowName::Base => f.write_str("base"),
            ShadowName::Tag(t) => f.write_str(t.as_str()),
        }
    }
}

/// Full address of one shadow instance: device plus base-or-tag name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ShadowId {
    pub device: DeviceId,
    pub shadow: ShadowName,
}

impl ShadowId {
    pub fn base(device: DeviceId) -> Self {
        ShadowId {
            device,
            shadow: ShadowName::Base,
        }
    }

    pub fn tagged(device: DeviceId, tag: TagName) -> Self {
        ShadowId {
            device,
            shadow: ShadowName::Tag(tag),
        }
    }
}

impl fmt::Display for ShadowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.device, self.shadow)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_grammar() {
        assert!(Key::new("tire_pressure_ds").is_ok());
        assert!(Key::new("a/b.c-d_0").is_ok());
        assert!(Key::new("UPPER.ok").is_ok());
        assert!(Key::new("").is_err());
        assert!(Key::new("has space").is_err());
        assert!(Key::new("x".repeat(129)).is_err());
        assert!(Key::new("x".repeat(128)).is_ok());
    }

    #[test]
    fn tag_lowercase_normalization() {
        let t = TagName::new("Pressure").unwrap();
        assert_eq!(t.as_str(), "pressure");
        assert_eq!(t, TagName::new("pressure").unwrap());
    }

    #[test]
    fn tag_grammar() {
        assert!(TagName::new("warning").is_ok());
        assert!(TagName::new("temp_zone-2").is_ok());
        assert!(TagName::new("").is_err());
        assert!(TagName::new("dot.ted").is_err());
        assert!(TagName::new("sla/sh").is_err());
        assert!(TagName::new("x".repeat(65)).is_err());
    }

    #[test]
    fn device_grammar_excludes_topic_separators() {
        assert!(DeviceId::new("car1").is_ok());
        assert!(DeviceId::new("a/b").is_err());
        assert!(DeviceId::new("a.b").is_err());
    }

    #[test]
    fn shadow_id_display() {
        let id = ShadowId::tagged(
            DeviceId::new("car1").unwrap(),
            TagName::new("pressure").unwrap(),
        );
        assert_eq!(id.to_string(), "car1/pressure");
        assert_eq!(
            ShadowId::base(DeviceId::new("car1").unwrap()).to_string(),
            "car1/base"
        );
    }
}
