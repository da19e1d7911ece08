//! Topic API and wire transport.
//!
//! Topics follow the AWS-style shadow layout, frozen as this repo's external
//! contract:
//!
//! ```text
//! things/{device}/shadow/{channel}                 base shadow
//! things/{device}/shadow/name/{tag}/{channel}      per-tag sub-shadow
//! things/{device}/shadow/tags/push                 admin tag channel (base only)
//! ```
//!
//! where `{channel}` is one of `update`, `update/accepted`, `update/rejected`,
//! `update/delta`, `update/documents`, `get`, `get/accepted`, `get/rejected`.
//! The in-process [`bus`] speaks these topics deterministically for tests and
//! benchmarks; an external MQTT 5.0 broker can be bridged behind the same
//! publish/subscribe contract.

pub mod bus;
pub mod wire;

use std::fmt;

use thiserror::Error;

use crate::ident::{DeviceId, ShadowName, TagName};

/// Maximum wire payload size in bytes.
pub const MAX_PAYLOAD_BYTES: usize = 256 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("unparsable topic {0:?}")]
    UnparsableTopic(String),
    #[error("admin channel tags/push exists only on the base shadow")]
    AdminChannelOnNamedShadow,
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD_BYTES} byte limit")]
    PayloadTooLarge(usize),
    #[error("payload is not valid JSON: {0}")]
    PayloadNotJson(String),
    #[error("invalid topic filter {0:?}")]
    InvalidFilter(String),
    #[error("publish denied: {0}")]
    PublishDenied(String),
    #[error("subscribe denied: {0}")]
    SubscribeDenied(String),
    #[error("channel {0} is not client-publishable")]
    NotClientPublishable(&'static str),
}

/// The fixed set of per-shadow channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    Update,
    UpdateAccepted,
    UpdateRejected,
    UpdateDelta,
    UpdateDocuments,
    Get,
    GetAccepted,
    GetRejected,
    TagsPush,
}

impl Channel {
    pub const ALL: [Channel; 9] = [
        Channel::Update,
        Channel::UpdateAccepted,
        Channel::UpdateRejected,
        Channel::UpdateDelta,
        Channel::UpdateDocuments,
        Channel::Get,
        Channel::GetAccepted,
        Channel::GetRejected,
        Channel::TagsPush,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Channel::Update => "update",
            Channel::UpdateAccepted => "update/accepted",
            Channel::UpdateRejected => "update/rejected",
            Channel::UpdateDelta => "update/delta",
            Channel::UpdateDocuments => "update/documents",
            Channel::Get => "get",
            Channel::GetAccepted => "get/accepted",
            Channel::GetRejected => "get/rejected",
            Channel::TagsPush => "tags/push",
        }
    }

    fn from_segments(segments: &[&str]) -> Option<Channel> {
        match segments {
            ["update"] => Some(Channel::Update),
            ["update", "accepted"] => Some(Channel::UpdateAccepted),
            ["update", "rejected"] => Some(Channel::UpdateRejected),
            ["update", "delta"] => Some(Channel::UpdateDelta),
            ["update", "documents"] => Some(Channel::UpdateDocuments),
            ["get"] => Some(Channel::Get),
            ["get", "accepted"] => Some(Channel::GetAccepted),
            ["get", "rejected"] => Some(Channel::GetRejected),
            ["tags", "push"] => Some(Channel::TagsPush),
            _ => None,
        }
    }

    /// Channels clients may publish on; the rest are emitted by the shadow
    /// service itself.
    pub fn client_publishable(&self) -> bool {
        matches!(self, Channel::Update | Channel::Get | Channel::TagsPush)
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A fully-parsed shadow topic. Renders and parses losslessly.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Topic {
    pub device: DeviceId,
    pub shadow: ShadowName,
    pub channel: Channel,
}

impl Topic {
    /// The admin channel lives only on the base shadow.
    pub fn new(
        device: DeviceId,
        shadow: ShadowName,
        channel: Channel,
    ) -> Result<Self, TransportError> {
        if channel == Channel::TagsPush && !shadow.is_base() {
            return Err(TransportError::AdminChannelOnNamedShadow);
        }
        Ok(Topic {
            device,
            shadow,
            channel,
        })
    }

    pub fn base(device: DeviceId, channel: Channel) -> Self {
        Topic {
            device,
            shadow: ShadowName::Base,
            channel,
        }
    }

    pub fn named(device: DeviceId, tag: TagName, channel: Channel) -> Result<Self, TransportError> {
        Topic::new(device, ShadowName::Tag(tag), channel)
    }

    pub fn render(&self) -> String {
        match &self.shadow {
            ShadowName::Base => format!("things/{}/shadow/{}", self.device, self.channel),
            ShadowName::Tag(t) => {
                format!("things/{}/shadow/name/{}/{}", self.device, t, self.channel)
            }
        }
    }

    pub fn parse(s: &str) -> Result<Topic, TransportError> {
        let err = || TransportError::UnparsableTopic(s.to_owned());
        let segments: Vec<&str> = s.split('/').collect();
        if segments.len() < 4 || segments[0] != "things" || segments[2] != "shadow" {
            return Err(err());
        }
        let device = DeviceId::new(segments[1]).map_err(|_| err())?;
        let rest = &segments[3..];
        if rest[0] == "name" {
            if rest.len() < 3 {
                return Err(err());
            }
            let tag = TagName::new(rest[1]).map_err(|_| err())?;
            // Tag names are already lowercase; reject topics whose tag
            // segment needed normalization so parse/render round-trips.
            if tag.as_str() != rest[1] {
                return Err(err());
            }
            let channel = Channel::from_segments(&rest[2..]).ok_or_else(err)?;
            Topic::named(device, tag, channel).map_err(|_| err())
        } else {
            let channel = Channel::from_segments(rest).ok_or_else(err)?;
            Ok(Topic::base(device, channel))
        }
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Renders the topic string for a device/shadow/channel triple.
pub fn topic_for(
    device: DeviceId,
    shadow: ShadowName,
    channel: Channel,
) -> Result<String, TransportError> {
    Ok(Topic::new(device, shadow, channel)?.render())
}

/// Parses a topic string.
pub fn parse_topic(s: &str) -> Result<Topic, TransportError> {
    Topic::parse(s)
}

/// MQTT-style subscription filter: `+` matches one level, a trailing `#`
/// matches the rest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicFilter {
    segments: Vec<FilterSegment>,
    raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum FilterSegment {
    Literal(String),
    SingleLevel,
    MultiLevel,
}

impl TopicFilter {
    pub fn parse(s: &str) -> Result<Self, TransportError> {
        let err = || TransportError::InvalidFilter(s.to_owned());
        if s.is_empty() {
            return Err(err());
        }
        let parts: Vec<&str> = s.split('/').collect();
        let mut segments = Vec::with_capacity(parts.len());
        for (i, part) in parts.iter().enumerate() {
            let seg = match *part {
                "+" => FilterSegment::SingleLevel,
                "#" => {
                    if i != parts.len() - 1 {
                        return Err(err());
                    }
                    FilterSegment::MultiLevel
                }
                lit => {
                    if lit.is_empty() || lit.contains('+') || lit.contains('#') {
                        return Err(err());
                    }
                    FilterSegment::Literal(lit.to_owned())
                }
            };
            segments.push(seg);
        }
        Ok(TopicFilter {
            segments,
            raw: s.to_owned(),
        })
    }

    pub fn exact(topic: &Topic) -> Self {
        // Rendered topics never contain wildcards, so this cannot fail.
        TopicFilter::parse(&topic.render()).expect("rendered topic is a valid filter")
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    /// `Some(topic)` when the filter is a single concrete topic.
    pub fn as_exact_topic(&self) -> Option<Topic> {
        if self
            .segments
            .iter()
            .all(|s| matches!(s, FilterSegment::Literal(_)))
        {
            Topic::parse(&self.raw).ok()
        } else {
            None
        }
    }

    pub fn matches_str(&self, topic: &str) -> bool {
        let levels: Vec<&str> = topic.split('/').collect();
        let mut li = 0;
        for (i, seg) in self.segments.iter().enumerate() {
            match seg {
                FilterSegment::MultiLevel => return true,
                FilterSegment::SingleLevel => {
                    if li >= levels.len() {
                        return false;
                    }
                    li += 1;
                }
                FilterSegment::Literal(lit) => {
                    if li >= levels.len() || levels[li] != lit {
                        return false;
                    }
                    li += 1;
                }
            }
            if i == self.segments.len() - 1 {
                return li == levels.len();
            }
        }
        li == levels.len()
    }

    pub fn matches(&self, topic: &Topic) -> bool {
        self.matches_str(&topic.render())
    }
}

/// Delivery guarantee requested for one message. The in-process bus retains
/// every message until its subscriber consumes it, which satisfies QoS 1's
/// redeliver-until-acknowledged contract; the flag matters to the MQTT
/// bridge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QoS {
    #[default]
    AtMostOnce,
    AtLeastOnce,
}

/// One message on the bus: topic, UTF-8 JSON payload, QoS flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub topic: Topic,
    pub payload: Vec<u8>,
    pub qos: QoS,
}

impl WireMessage {
    /// Validates the payload invariants: at most [`MAX_PAYLOAD_BYTES`] and
    /// well-formed JSON.
    pub fn new(topic: Topic, payload: Vec<u8>, qos: QoS) -> Result<Self, TransportError> {
        if payload.len() > MAX_PAYLOAD_BYTES {
            return Err(TransportError::PayloadTooLarge(payload.len()));
        }
        serde_json::from_slice::<serde::de::IgnoredAny>(&payload)
            .map_err(|e| TransportError::PayloadNotJson(e.to_string()))?;
        Ok(WireMessage {
            topic,
            payload,
            qos,
        })
    }

    pub fn json(
        topic: Topic,
        value: &serde_json::Value,
        qos: QoS,
    ) -> Result<Self, TransportError> {
        let payload = serde_json::to_vec(value).expect("serde_json::Value always serializes");
        if payload.len() > MAX_PAYLOAD_BYTES {
            return Err(TransportError::PayloadTooLarge(payload.len()));
        }
        Ok(WireMessage {
            topic,
            payload,
            qos,
        })
    }

    pub fn payload_str(&self) -> &str {
        // Payloads are validated JSON, hence UTF-8.
        std::str::from_utf8(&self.payload).expect("payload is UTF-8 JSON")
    }
}

/// Wildcard filter matching every shadow topic of every device.
pub fn all_shadows_filter() -> TopicFilter {
    TopicFilter::parse("things/#").expect("static filter")
}
