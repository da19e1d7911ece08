//! On-the-fly tag attachment.
//!
//! Tags reach a reported pair from three sources: the device pre-attaches
//! its own, threshold rules evaluated at ingest add severity tags such as
//! `warning` or `critical`, and administrators push sticky tags through the
//! base shadow that apply to all further data from a device. Rule sets and
//! admin tag sets are immutable snapshots; evaluation is read-only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access::{Principal, Role};
use crate::glob::glob_match;
use crate::ident::{DeviceId, Key, TagName};
use crate::scalar::Scalar;
use crate::shadow::{TaggedValue, Tags};

/// Glob over key names: `*` matches any run of characters, `?` exactly one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct KeyPattern(String);

impl KeyPattern {
    pub fn new(pattern: impl Into<String>) -> Result<Self, TagError> {
        let p = pattern.into();
        let ok = !p.is_empty()
            && p.chars().all(|c| {
                c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '/' | '-' | '*' | '?')
            });
        if ok {
            Ok(KeyPattern(p))
        } else {
            Err(TagError::InvalidPattern(p))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn matches(&self, key: &Key) -> bool {
        glob_match(&self.0, key.as_str())
    }
}

impl TryFrom<String> for KeyPattern {
    type Error = TagError;
    fn try_from(s: String) -> Result<Self, TagError> {
        KeyPattern::new(s)
    }
}

impl From<KeyPattern> for String {
    fn from(p: KeyPattern) -> String {
        p.0
    }
}

/// Threshold predicate of one tag rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Gt(f64),
    Lt(f64),
    Outside(f64, f64),
    /// Holds for any non-numeric value and for negative numbers; the
    /// malfunction detector for keys constrained to positive numerics.
    NonNumericOrNegative,
}

impl Predicate {
    fn validate(&self) -> Result<(), TagError> {
        match self {
            Predicate::Gt(t) | Predicate::Lt(t) if !t.is_finite() => {
                Err(TagError::NonFiniteThreshold)
            }
            Predicate::Outside(lo, hi) => {
                if !lo.is_finite() || !hi.is_finite() {
                    Err(TagError::NonFiniteThreshold)
                } else if lo > hi {
                    Err(TagError::EmptyInterval { lo: *lo, hi: *hi })
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// `Ok(true/false)` when the predicate could be evaluated; `Err(())`
    /// when a numeric predicate met a non-numeric value (rule skipped,
    /// diagnostic recorded upstream).
    fn holds(&self, value: &Scalar) -> Result<bool, ()> {
        match self {
            Predicate::NonNumericOrNegative => Ok(match value.as_f64() {
                None => true,
                Some(v) => v < 0.0,
            }),
            Predicate::Gt(t) => value.as_f64().map(|v| v > *t).ok_or(()),
            Predicate::Lt(t) => value.as_f64().map(|v| v < *t).ok_or(()),
            Predicate::Outside(lo, hi) => value.as_f64().map(|v| v < *lo || v > *hi).ok_or(()),
        }
    }
}

/// Per-key threshold rule that attaches a tag when its predicate holds.
/// Rules sharing a key pattern form a family; within one family only the
/// highest rank that fires wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRule {
    pub key: KeyPattern,
    pub when: Predicate,
    pub tag: TagName,
    #[serde(default)]
    pub rank: u32,
}

/// Recorded when a rule could not evaluate a value: a numeric threshold met
/// a non-numeric reading, which usually means the device is malfunctioning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleDiagnostic {
    pub key: Key,
    pub tag: TagName,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleOutcome {
    pub tags: Vec<TagName>,
    pub diagnostics: Vec<RuleDiagnostic>,
}

/// Declarative rule document, loaded at startup and hot-swappable through
/// the admin channel. File format:
/// `{"rules":[{"key":"tire_pressure_*","when":{"lt":30},"tag":"critical","rank":2}]}`
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<TagRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<TagRule>) -> Result<Self, TagError> {
        let set = RuleSet { rules };
        set.validate()?;
        Ok(set)
    }

    pub fn from_json(json: &str) -> Result<Self, TagError> {
        let set: RuleSet = serde_json::from_str(json).map_err(TagError::Parse)?;
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), TagError> {
        for rule in &self.rules {
            rule.when.validate()?;
        }
        Ok(())
    }

    /// Evaluates every rule against one key-value pair and collapses each
    /// family (same key pattern) to its highest firing rank.
    pub fn evaluate(&self, key: &Key, value: &Scalar) -> RuleOutcome {
        let mut outcome = RuleOutcome::default();
        // family pattern -> (rank, tag), highest rank wins, first rule wins ties
        let mut families: BTreeMap<&str, (u32, &TagName)> = BTreeMap::new();
        let mut order: Vec<&str> = Vec::new();
        for rule in &self.rules {
            if !rule.key.matches(key) {
                continue;
            }
            match rule.when.holds(value) {
                Ok(true) => {
                    let family = rule.key.as_str();
                    match families.get(family) {
                        Some((best, _)) if *best >= rule.rank => {}
                        _ => {
                            if !families.contains_key(family) {
                                order.push(family);
                            }
                            families.insert(family, (rule.rank, &rule.tag));
                        }
                    }
                }
                Ok(false) => {}
                Err(()) => outcome.diagnostics.push(RuleDiagnostic {
                    key: key.clone(),
                    tag: rule.tag.clone(),
                    detail: format!(
                        "numeric predicate {:?} cannot evaluate non-numeric value {value}; \
                         probable device malfunction",
                        rule.when
                    ),
                }),
            }
        }
        for family in order {
            let (_, tag) = families[family];
            if !outcome.tags.contains(tag) {
                outcome.tags.push(tag.clone());
            }
        }
        outcome
    }
}

/// Pure rule evaluation: the union of firing tags after family collapse.
pub fn evaluate_rules(key: &Key, value: &Scalar, rules: &[TagRule]) -> Vec<TagName> {
    RuleSet {
        rules: rules.to_vec(),
    }
    .evaluate(key, value)
    .tags
}

/// Composes the three tag sources into one ordered, deduplicated set:
/// device tags first, then rule tags, then admin tags. First occurrence
/// wins its position.
pub fn effective_tags(pair_tags: &Tags, rule_tags: &[TagName], admin_tags: &Tags) -> Tags {
    Tags::new(
        pair_tags
            .iter()
            .cloned()
            .chain(rule_tags.iter().cloned())
            .chain(admin_tags.iter().cloned()),
    )
}

/// Sticky tags an administrator pushed through the base shadow; applied to
/// all subsequently reported pairs of the device until replaced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdminTagSet {
    pub device: DeviceId,
    pub tags: Tags,
    pub applied_at: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TagError {
    #[error("principal is not an administrator")]
    Unauthorized,
    #[error("admin tag set must not be empty")]
    EmptyTagSet,
    #[error("invalid key pattern {0:?}")]
    InvalidPattern(String),
    #[error("rule threshold must be finite")]
    NonFiniteThreshold,
    #[error("outside-interval bounds are inverted: lo {lo} > hi {hi}")]
    EmptyInterval { lo: f64, hi: f64 },
    #[error("rule document did not parse: {0}")]
    Parse(#[source] std::sync::Arc<serde_json::Error>),
}

impl TagError {
    fn parse(e: serde_json::Error) -> Self {
        TagError::Parse(std::sync::Arc::new(e))
    }
}

impl From<serde_json::Error> for TagError {
    fn from(e: serde_json::Error) -> Self {
        TagError::parse(e)
    }
}

/// Ingest-side tagging state for all devices: the active rule set plus each
/// device's sticky admin tags.
#[derive(Debug, Default)]
pub struct TagEngine {
    rules: RuleSet,
    admin_tags: BTreeMap<DeviceId, AdminTagSet>,
}

impl TagEngine {
    pub fn new(rules: RuleSet) -> Self {
        TagEngine {
            rules,
            admin_tags: BTreeMap::new(),
        }
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    /// Swaps in a new rule set (hot reload through the admin channel).
    pub fn replace_rules(&mut self, rules: RuleSet) {
        self.rules = rules;
    }

    pub fn admin_tags(&self, device: &DeviceId) -> Option<&AdminTagSet> {
        self.admin_tags.get(device)
    }

    /// Replaces the device's sticky tag set. Only administrators may do
    /// this; an empty tag set is rejected without touching the current one.
    pub fn push_admin_tags(
        &mut self,
        device: DeviceId,
        tags: impl IntoIterator<Item = TagName>,
        principal: &Principal,
        now_ms: u64,
    ) -> Result<AdminTagSet, TagError> {
        if !principal.roles.contains(&Role::Admin) {
            return Err(TagError::Unauthorized);
        }
        let tags = Tags::new(tags);
        if tags.is_empty() {
            return Err(TagError::EmptyTagSet);
        }
        let set = AdminTagSet {
            device: device.clone(),
            tags,
            applied_at: now_ms,
        };
        self.admin_tags.insert(device, set.clone());
        Ok(set)
    }

    /// Attaches rule and admin tags to one incoming reported pair.
    pub fn enrich(
        &self,
        device: &DeviceId,
        key: &Key,
        pair: TaggedValue,
    ) -> (TaggedValue, Vec<RuleDiagnostic>) {
        let outcome = self.rules.evaluate(key, &pair.value);
        let admin = self
            .admin_tags
            .get(device)
            .map(|s| s.tags.clone())
            .unwrap_or_else(Tags::empty);
        let tags = effective_tags(&pair.tags, &outcome.tags, &admin);
        (
            TaggedValue {
                value: pair.value,
                tags,
            },
            outcome.diagnostics,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::access::tests_support::principal_with_roles;

    fn key(s: &str) -> Key {
        Key::new(s).unwrap()
    }

    fn tag(s: &str) -> TagName {
        TagName::new(s).unwrap()
    }

    fn rule(pattern: &str, when: Predicate, t: &str, rank: u32) -> TagRule {
        TagRule {
            key: KeyPattern::new(pattern).unwrap(),
            when,
            tag: tag(t),
            rank,
        }
    }

    fn pressure_rules() -> Vec<TagRule> {
        vec![
            rule("tire_pressure_*", Predicate::Lt(35.0), "warning", 1),
            rule("tire_pressure_*", Predicate::Lt(30.0), "critical", 2),
        ]
    }

    #[test]
    fn threshold_exceeded_attaches_warning() {
        let rules = vec![rule("temperature", Predicate::Gt(100.0), "warning", 1)];
        assert_eq!(
            evaluate_rules(&key("temperature"), &Scalar::Int(101), &rules),
            vec![tag("warning")]
        );
    }

    #[test]
    fn highest_rank_in_family_wins() {
        // 28 is below both thresholds; only the rank-2 critical tag survives.
        assert_eq!(
            evaluate_rules(&key("tire_pressure_ps"), &Scalar::Int(28), &pressure_rules()),
            vec![tag("critical")]
        );
        // 33 only trips the warning rule.
        assert_eq!(
            evaluate_rules(&key("tire_pressure_ds"), &Scalar::Int(33), &pressure_rules()),
            vec![tag("warning")]
        );
    }

    #[test]
    fn in_range_value_attaches_nothing() {
        let rules = vec![
            rule("temperature", Predicate::Gt(100.0), "warning", 1),
            rule("temperature", Predicate::Gt(120.0), "critical", 2),
        ];
        assert!(evaluate_rules(&key("temperature"), &Scalar::Int(25), &rules).is_empty());
    }

    #[test]
    fn distinct_families_do_not_suppress_each_other() {
        let rules = vec![
            rule("tire_pressure_*", Predicate::Lt(30.0), "critical", 2),
            rule("tire_*", Predicate::Lt(40.0), "tire_check", 1),
        ];
        let tags = evaluate_rules(&key("tire_pressure_ps"), &Scalar::Int(28), &rules);
        assert_eq!(tags, vec![tag("critical"), tag("tire_check")]);
    }

    #[test]
    fn non_numeric_against_numeric_predicate_is_skipped_with_diagnostic() {
        let set = RuleSet::new(vec![rule("temperature", Predicate::Gt(100.0), "warning", 1)])
            .unwrap();
        let outcome = set.evaluate(&key("temperature"), &Scalar::from("hot"));
        assert!(outcome.tags.is_empty());
        assert_eq!(outcome.diagnostics.len(), 1);
        assert_eq!(outcome.diagnostics[0].key, key("temperature"));
    }

    #[test]
    fn malfunction_predicate_catches_non_numeric_and_negative() {
        let rules = vec![rule(
            "temperature",
            Predicate::NonNumericOrNegative,
            "malfunction",
            9,
        )];
        assert_eq!(
            evaluate_rules(&key("temperature"), &Scalar::from("oops"), &rules),
            vec![tag("malfunction")]
        );
        assert_eq!(
            evaluate_rules(&key("temperature"), &Scalar::Int(-4), &rules),
            vec![tag("malfunction")]
        );
        assert!(evaluate_rules(&key("temperature"), &Scalar::Int(21), &rules).is_empty());
    }

    #[test]
    fn outside_interval_predicate() {
        let rules = vec![rule("rpm", Predicate::Outside(500.0, 6000.0), "warning", 1)];
        assert!(evaluate_rules(&key("rpm"), &Scalar::Int(3000), &rules).is_empty());
        assert_eq!(
            evaluate_rules(&key("rpm"), &Scalar::Int(7000), &rules),
            vec![tag("warning")]
        );
        assert_eq!(
            evaluate_rules(&key("rpm"), &Scalar::Int(100), &rules),
            vec![tag("warning")]
        );
    }

    #[test]
    fn rule_document_round_trip() {
        let json = r#"{"rules":[{"key":"tire_pressure_*","when":{"lt":30},"tag":"critical","rank":2}]}"#;
        let set = RuleSet::from_json(json).unwrap();
        assert_eq!(set.rules.len(), 1);
        assert_eq!(set.rules[0].when, Predicate::Lt(30.0));
        assert_eq!(set.rules[0].tag, tag("critical"));
        assert_eq!(set.rules[0].rank, 2);

        let back = serde_json::to_string(&set).unwrap();
        assert_eq!(RuleSet::from_json(&back).unwrap(), set);
    }

    #[test]
    fn invalid_interval_rejected_at_load() {
        let json = r#"{"rules":[{"key":"x","when":{"outside":[5,1]},"tag":"bad","rank":0}]}"#;
        assert!(matches!(
            RuleSet::from_json(json),
            Err(TagError::EmptyInterval { .. })
        ));
    }

    #[test]
    fn glob_semantics() {
        let p = KeyPattern::new("tire_pressure_*").unwrap();
        assert!(p.matches(&key("tire_pressure_ps")));
        assert!(p.matches(&key("tire_pressure_")));
        assert!(!p.matches(&key("tire_temp_ps")));

        let q = KeyPattern::new("sensor_?").unwrap();
        assert!(q.matches(&key("sensor_1")));
        assert!(!q.matches(&key("sensor_12")));

        let star = KeyPattern::new("*").unwrap();
        assert!(star.matches(&key("anything")));
    }

    #[test]
    fn effective_tags_order_and_dedup() {
        let pair = Tags::new([tag("pressure"), tag("tire")]);
        let rules = vec![tag("critical")];
        let out = effective_tags(&pair, &rules, &Tags::empty());
        let names: Vec<&str> = out.iter().map(|t| t.as_str()).collect();
        assert_eq!(names, vec!["pressure", "tire", "critical"]);

        let a = Tags::new([tag("a")]);
        let dedup = effective_tags(&a, &[tag("a")], &a);
        assert_eq!(dedup.len(), 1);

        let empty = effective_tags(&Tags::empty(), &[], &Tags::empty());
        assert!(empty.is_empty());
    }

    #[test]
    fn push_admin_tags_requires_admin_and_non_empty_set() {
        let mut engine = TagEngine::default();
        let device = DeviceId::new("car1").unwrap();
        let admin = principal_with_roles("root", &[Role::Admin]);
        let app = principal_with_roles("app1", &[Role::App]);

        assert_eq!(
            engine.push_admin_tags(device.clone(), [tag("audit")], &app, 5),
            Err(TagError::Unauthorized)
        );
        assert!(engine.admin_tags(&device).is_none());

        assert_eq!(
            engine.push_admin_tags(device.clone(), [], &admin, 5),
            Err(TagError::EmptyTagSet)
        );

        let set = engine
            .push_admin_tags(device.clone(), [tag("audit")], &admin, 5)
            .unwrap();
        assert_eq!(set.applied_at, 5);
        assert_eq!(engine.admin_tags(&device), Some(&set));
    }

    #[test]
    fn enrich_composes_all_three_sources() {
        let mut engine = TagEngine::new(RuleSet::new(pressure_rules()).unwrap());
        let device = DeviceId::new("car1").unwrap();
        let admin = principal_with_roles("root", &[Role::Admin]);
        engine
            .push_admin_tags(device.clone(), [tag("audit")], &admin, 1)
            .unwrap();

        let pair = TaggedValue::new(28, [tag("pressure"), tag("tire")]);
        let (enriched, diags) = engine.enrich(&device, &key("tire_pressure_ps"), pair);
        let names: Vec<&str> = enriched.tags.iter().map(|t| t.as_str()).collect();
        assert_eq!(names, vec!["pressure", "tire", "critical", "audit"]);
        assert!(diags.is_empty());
    }

    #[test]
    fn admin_tags_stick_until_replaced() {
        let mut engine = TagEngine::default();
        let device = DeviceId::new("car1").unwrap();
        let admin = principal_with_roles("root", &[Role::Admin]);
        engine
            .push_admin_tags(device.clone(), [tag("audit")], &admin, 1)
            .unwrap();

        for v in [1i64, 2, 3] {
            let (enriched, _) =
                engine.enrich(&device, &key("speed"), TaggedValue::new(v, [tag("motion")]));
            assert!(enriched.tags.contains(&tag("audit")));
        }

        engine
            .push_admin_tags(device.clone(), [tag("trace")], &admin, 2)
            .unwrap();
        let (enriched, _) =
            engine.enrich(&device, &key("speed"), TaggedValue::new(4, [tag("motion")]));
        assert!(enriched.tags.contains(&tag("trace")));
        assert!(!enriched.tags.contains(&tag("audit")));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Within a fixed below-threshold family, lowering the value can
            /// only keep or raise the winning severity rank.
            #[test]
            fn severity_is_monotone_in_distance_below_threshold(
                v1 in -50.0f64..34.9,
                drop in 0.0f64..50.0
            ) {
                let rules = pressure_rules();
                let k = key("tire_pressure_ps");
                let rank_of = |v: f64| -> u32 {
                    let tags = evaluate_rules(&k, &Scalar::try_from_f64(v).unwrap(), &rules);
                    match tags.first().map(|t| t.as_str()) {
                        Some("critical") => 2,
                        Some("warning") => 1,
                        _ => 0,
                    }
                };
                prop_assert!(rank_of(v1 - drop) >= rank_of(v1));
            }

            #[test]
            fn evaluation_is_deterministic(v in -100i64..200) {
                let rules = pressure_rules();
                let k = key("tire_pressure_ds");
                let a = evaluate_rules(&k, &Scalar::Int(v), &rules);
                let b = evaluate_rules(&k, &Scalar::Int(v), &rules);
                prop_assert_eq!(a, b);
            }
        }
    }
}
