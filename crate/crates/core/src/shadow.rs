//! Per-device shadow state machine.
//!
//! A shadow document holds three subgroups: `reported` (last state the
//! device declared, each value carrying its tags), `desired` (plain values
//! requested by authorized clients) and `delta` (the desired keys whose
//! values differ from reported). Every accepted mutation bumps the version
//! by exactly one, recomputes the delta and resolves matched desired keys.
//! Desired and delta values never carry tags; tags enter the system only on
//! reported data.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::ident::{Key, ShadowId, TagName};
use crate::scalar::Scalar;

/// An ordered, duplicate-free set of tag names attached to one value.
///
/// Order is first-occurrence; a pair fans out into one sub-document per tag,
/// so the backing storage is shared to make clones cheap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tags(Arc<[TagName]>);

impl Tags {
    pub fn new(tags: impl IntoIterator<Item = TagName>) -> Self {
        let mut out: Vec<TagName> = Vec::new();
        for t in tags {
            if !out.contains(&t) {
                out.push(t);
            }
        }
        Tags(out.into())
    }

    pub fn empty() -> Self {
        Tags(Arc::from([]))
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TagName> {
        self.0.iter()
    }

    pub fn contains(&self, tag: &TagName) -> bool {
        self.0.contains(tag)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[TagName] {
        &self.0
    }
}

impl FromIterator<TagName> for Tags {
    fn from_iter<I: IntoIterator<Item = TagName>>(iter: I) -> Self {
        Tags::new(iter)
    }
}

impl<'a> IntoIterator for &'a Tags {
    type Item = &'a TagName;
    type IntoIter = std::slice::Iter<'a, TagName>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// A sensor reading plus the tag set attached to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedValue {
    pub value: Scalar,
    pub tags: Tags,
}

impl TaggedValue {
    pub fn new(value: impl Into<Scalar>, tags: impl IntoIterator<Item = TagName>) -> Self {
        TaggedValue {
            value: value.into(),
            tags: Tags::new(tags),
        }
    }

    pub fn untagged(value: impl Into<Scalar>) -> Self {
        TaggedValue {
            value: value.into(),
            tags: Tags::empty(),
        }
    }
}

/// Versioned state document with reported/desired/delta subgroups.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ShadowDocument {
    pub reported: BTreeMap<Key, TaggedValue>,
    pub desired: BTreeMap<Key, Scalar>,
    pub delta: BTreeMap<Key, Scalar>,
    pub version: u64,
    pub timestamp: u64,
}

impl ShadowDocument {
    /// Deletes every key whose reported value equals its desired value from
    /// both the desired and delta subgroups. Idempotent. Returns the keys
    /// that were resolved.
    pub fn resolve_matched(&mut self) -> Vec<Key> {
        let resolved: Vec<Key> = self
            .desired
            .iter()
            .filter(|(k, want)| self.reported.get(*k).is_some_and(|tv| tv.value == **want))
            .map(|(k, _)| k.clone())
            .collect();
        for k in &resolved {
            self.desired.remove(k);
            self.delta.remove(k);
        }
        resolved
    }
}

/// Delta between desired and reported state: every desired key that is
/// absent from reported or whose reported value differs. Tags never
/// influence the comparison. Pure.
pub fn compute_delta(
    reported: &BTreeMap<Key, TaggedValue>,
    desired: &BTreeMap<Key, Scalar>,
) -> BTreeMap<Key, Scalar> {
    desired
        .iter()
        .filter(|(k, want)| reported.get(*k).map_or(true, |tv| tv.value != **want))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

/// One entry of a reported update: set a tagged value, or delete the key
/// (the wire tombstone `null`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReportedPatch {
    Set(TaggedValue),
    Remove,
}

/// One entry of a desired update: set a plain value, or delete the key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DesiredPatch {
    Set(Scalar),
    Remove,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportedUpdate {
    pub entries: BTreeMap<Key, ReportedPatch>,
    /// Optimistic concurrency: reject when lower than the current version.
    pub expected_version: Option<u64>,
}

impl ReportedUpdate {
    pub fn set(mut self, key: Key, value: TaggedValue) -> Self {
        self.entries.insert(key, ReportedPatch::Set(value));
        self
    }

    pub fn remove(mut self, key: Key) -> Self {
        self.entries.insert(key, ReportedPatch::Remove);
        self
    }
}

impl FromIterator<(Key, TaggedValue)> for ReportedUpdate {
    fn from_iter<I: IntoIterator<Item = (Key, TaggedValue)>>(iter: I) -> Self {
        ReportedUpdate {
            entries: iter
                .into_iter()
                .map(|(k, v)| (k, ReportedPatch::Set(v)))
                .collect(),
            expected_version: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DesiredUpdate {
    pub entries: BTreeMap<Key, DesiredPatch>,
    pub expected_version: Option<u64>,
}

impl DesiredUpdate {
    pub fn set(mut self, key: Key, value: impl Into<Scalar>) -> Self {
        self.entries.insert(key, DesiredPatch::Set(value.into()));
        self
    }

    pub fn remove(mut self, key: Key) -> Self {
        self.entries.insert(key, DesiredPatch::Remove);
        self
    }
}

impl FromIterator<(Key, Scalar)> for DesiredUpdate {
    fn from_iter<I: IntoIterator<Item = (Key, Scalar)>>(iter: I) -> Self {
        DesiredUpdate {
            entries: iter
                .into_iter()
                .map(|(k, v)| (k, DesiredPatch::Set(v)))
                .collect(),
            expected_version: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShadowError {
    #[error("version conflict: update expected version {expected}, shadow is at {current}")]
    VersionConflict { expected: u64, current: u64 },
}

/// Machine-readable rejection codes carried on `rejected` events and wire
/// payloads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectCode {
    InvalidKey,
    InvalidTag,
    InvalidValue,
    SchemaViolation,
    VersionConflict,
    Unauthorized,
    KeyNotHeld,
    TwinLimit,
}

/// The update fragment an `accepted` event echoes back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AppliedPatch {
    Reported(BTreeMap<Key, ReportedPatch>),
    Desired(BTreeMap<Key, DesiredPatch>),
}

/// State-change notifications produced by shadow mutations. Every accepted
/// mutation emits exactly one `Accepted` and, when the delta subgroup is
/// non-empty afterwards, exactly one `DeltaPublished`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShadowEvent {
    Accepted {
        shadow: ShadowId,
        version: u64,
        timestamp: u64,
        patch: AppliedPatch,
    },
    Rejected {
        shadow: ShadowId,
        code: RejectCode,
        message: String,
    },
    DeltaPublished {
        shadow: ShadowId,
        version: u64,
        timestamp: u64,
        delta: BTreeMap<Key, Scalar>,
    },
    DocumentsChanged {
        shadow: ShadowId,
        document: ShadowDocument,
    },
    Resolved {
        shadow: ShadowId,
        keys: Vec<Key>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Accepted,
    Rejected,
    DeltaPublished,
    DocumentsChanged,
    Resolved,
}

impl ShadowEvent {
    pub fn kind(&self) -> EventKind {
        match self {
            ShadowEvent::Accepted { .. } => EventKind::Accepted,
            ShadowEvent::Rejected { .. } => EventKind::Rejected,
            ShadowEvent::DeltaPublished { .. } => EventKind::DeltaPublished,
            ShadowEvent::DocumentsChanged { .. } => EventKind::DocumentsChanged,
            ShadowEvent::Resolved { .. } => EventKind::Resolved,
        }
    }

    pub fn shadow(&self) -> &ShadowId {
        match self {
            ShadowEvent::Accepted { shadow, .. }
            | ShadowEvent::Rejected { shadow, .. }
            | ShadowEvent::DeltaPublished { shadow, .. }
            | ShadowEvent::DocumentsChanged { shadow, .. }
            | ShadowEvent::Resolved { shadow, .. } => shadow,
        }
    }

    pub fn rejected(shadow: ShadowId, code: RejectCode, message: impl Into<String>) -> Self {
        ShadowEvent::Rejected {
            shadow,
            code,
            message: message.into(),
        }
    }
}

impl From<&ShadowError> for RejectCode {
    fn from(e: &ShadowError) -> Self {
        match e {
            ShadowError::VersionConflict { .. } => RejectCode::VersionConflict,
        }
    }
}

/// One shadow instance: the document plus its address. All mutations for a
/// given shadow are serialized through the single owner holding this value;
/// snapshots are plain immutable clones.
#[derive(Debug, Clone)]
pub struct Shadow {
    id: ShadowId,
    doc: ShadowDocument,
}

impl Shadow {
    pub fn new(id: ShadowId) -> Self {
        Shadow {
            id,
            doc: ShadowDocument::default(),
        }
    }

    pub fn id(&self) -> &ShadowId {
        &self.id
    }

    pub fn document(&self) -> &ShadowDocument {
        &self.doc
    }

    /// Immutable point-in-time copy, safe to hand to any thread.
    pub fn snapshot(&self) -> ShadowDocument {
        self.doc.clone()
    }

    /// Restores the factory state (fresh document at version 0).
    pub fn reset(&mut self) {
        self.doc = ShadowDocument::default();
    }

    fn check_version(&self, expected: Option<u64>) -> Result<(), ShadowError> {
        match expected {
            Some(v) if v < self.doc.version => Err(ShadowError::VersionConflict {
                expected: v,
                current: self.doc.version,
            }),
            _ => Ok(()),
        }
    }

    /// Merges a reported update key-wise (update wins), recomputes the delta
    /// and resolves matched desired keys. On error the document is untouched.
    pub fn apply_reported(
        &mut self,
        update: ReportedUpdate,
        now_ms: u64,
    ) -> Result<Vec<ShadowEvent>, ShadowError> {
        self.check_version(update.expected_version)?;
        for (key, patch) in &update.entries {
            match patch {
                ReportedPatch::Set(tv) => {
                    self.doc.reported.insert(key.clone(), tv.clone());
                }
                ReportedPatch::Remove => {
                    self.doc.reported.remove(key);
                }
            }
        }
        let resolved = self.doc.resolve_matched();
        self.doc.delta = compute_delta(&self.doc.reported, &self.doc.desired);
        self.finish_mutation(now_ms, AppliedPatch::Reported(update.entries), resolved)
    }

    /// Merges a desired update key-wise, recomputes the delta and resolves
    /// keys whose reported value already matches. On error the document is
    /// untouched.
    pub fn apply_desired(
        &mut self,
        update: DesiredUpdate,
        now_ms: u64,
    ) -> Result<Vec<ShadowEvent>, ShadowError> {
        self.check_version(update.expected_version)?;
        for (key, patch) in &update.entries {
            match patch {
                DesiredPatch::Set(v) => {
                    self.doc.desired.insert(key.clone(), v.clone());
                }
                DesiredPatch::Remove => {
                    self.doc.desired.remove(key);
                }
            }
        }
        let resolved = self.doc.resolve_matched();
        self.doc.delta = compute_delta(&self.doc.reported, &self.doc.desired);
        self.finish_mutation(now_ms, AppliedPatch::Desired(update.entries), resolved)
    }

    fn finish_mutation(
        &mut self,
        now_ms: u64,
        patch: AppliedPatch,
        resolved: Vec<Key>,
    ) -> Result<Vec<ShadowEvent>, ShadowError> {
        self.doc.version += 1;
        self.doc.timestamp = now_ms;

        let mut events = vec![ShadowEvent::Accepted {
            shadow: self.id.clone(),
            version: self.doc.version,
            timestamp: now_ms,
            patch,
        }];
        if !resolved.is_empty() {
            events.push(ShadowEvent::Resolved {
                shadow: self.id.clone(),
                keys: resolved,
            });
        }
        if !self.doc.delta.is_empty() {
            events.push(ShadowEvent::DeltaPublished {
                shadow: self.id.clone(),
                version: self.doc.version,
                timestamp: now_ms,
                delta: self.doc.delta.clone(),
            });
        }
        events.push(ShadowEvent::DocumentsChanged {
            shadow: self.id.clone(),
            document: self.doc.clone(),
        });
        Ok(events)
    }
}
