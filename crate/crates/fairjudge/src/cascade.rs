//! Progressive judging: accept confident cheap verdicts, escalate
//! abstentions and parse failures, arbitrate concrete disagreements with
//! a third judge, and account for every call made.
//!
//! Arbitration is per field: attribute fields are independent judgments,
//! so a disagreement on Race never discards an agreed Gender.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Decoding, Gateway, GatewayError, ImageRef, JudgeReply, JudgeRequest, MicroUsd};
use crate::prompt::{PromptText, PromptVariant, TemplateSet};
use crate::taxonomy::{AttributeKind, Taxonomy};
use crate::verdict::{
    parse_attribute_verdict, AlignmentVerdict, AttributeLabels, AttributeVerdict, DefectCategory,
    ParseDefect, ParseStatus,
};

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("cascade policy needs at least one stage")]
    NoStages,
    #[error("cascade stages must be distinct, `{0}` repeats")]
    DuplicateStage(String),
    #[error("empty ledger")]
    EmptyLedger,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// When does a verdict escalate to the next stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EscalationTrigger {
    AnyFieldAbstained,
    ParseFailed,
    RatingAtOrBelow(u8),
}

impl fmt::Display for EscalationTrigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EscalationTrigger::AnyFieldAbstained => f.write_str("any-field-abstained"),
            EscalationTrigger::ParseFailed => f.write_str("parse-failed"),
            EscalationTrigger::RatingAtOrBelow(k) => write!(f, "rating-at-or-below:{k}"),
        }
    }
}

impl EscalationTrigger {
    pub fn parse(s: &str) -> Option<EscalationTrigger> {
        match s {
            "any-field-abstained" => Some(EscalationTrigger::AnyFieldAbstained),
            "parse-failed" => Some(EscalationTrigger::ParseFailed),
            _ => s
                .strip_prefix("rating-at-or-below:")
                .and_then(|k| k.parse().ok())
                .map(EscalationTrigger::RatingAtOrBelow),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arbitration {
    ThirdJudgeMajority,
    AcceptFirst,
}

impl Arbitration {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arbitration::ThirdJudgeMajority => "third-judge-majority",
            Arbitration::AcceptFirst => "accept-first",
        }
    }

    pub fn parse(s: &str) -> Option<Arbitration> {
        match s {
            "third-judge-majority" => Some(Arbitration::ThirdJudgeMajority),
            "accept-first" => Some(Arbitration::AcceptFirst),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadePolicy {
    pub stages: Vec<String>,
    pub triggers: BTreeSet<EscalationTrigger>,
    pub arbitration: Arbitration,
}

impl CascadePolicy {
    pub fn new(
        stages: Vec<String>,
        triggers: BTreeSet<EscalationTrigger>,
        arbitration: Arbitration,
    ) -> Result<CascadePolicy, CascadeError> {
        if stages.is_empty() {
            return Err(CascadeError::NoStages);
        }
        let mut seen = BTreeSet::new();
        for stage in &stages {
            if !seen.insert(stage.clone()) {
                return Err(CascadeError::DuplicateStage(stage.clone()));
            }
        }
        Ok(CascadePolicy {
            stages,
            triggers,
            arbitration,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RouteAction {
    AcceptedAtStage,
    Escalated,
    Arbitrated,
    Unresolved,
}

impl RouteAction {
    pub fn as_str(&self) -> &'static str {
        match self {
            RouteAction::AcceptedAtStage => "accepted-at-stage",
            RouteAction::Escalated => "escalated",
            RouteAction::Arbitrated => "arbitrated",
            RouteAction::Unresolved => "unresolved",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub item_id: String,
    pub stage_reached: usize,
    pub action: RouteAction,
    pub trigger: Option<EscalationTrigger>,
    /// Fields left at abstention after a three-way arbitration split.
    pub unresolved_fields: Vec<AttributeKind>,
    /// True when the driver should consult the next stage.
    pub consult_next: bool,
}

/// A verdict as the router sees it, attribute or alignment.
#[derive(Debug, Clone, PartialEq)]
pub enum StageVerdict {
    Attribute(AttributeVerdict),
    Alignment(AlignmentVerdict),
}

impl StageVerdict {
    fn parse_failed(&self) -> bool {
        match self {
            StageVerdict::Attribute(v) => v.parse_status == ParseStatus::Failed,
            StageVerdict::Alignment(v) => v.parse_status == ParseStatus::Failed,
        }
    }
}

fn fired_trigger(
    verdict: &StageVerdict,
    triggers: &BTreeSet<EscalationTrigger>,
    taxonomy: &Taxonomy,
) -> Option<EscalationTrigger> {
    for trigger in triggers {
        let fires = match trigger {
            EscalationTrigger::ParseFailed => verdict.parse_failed(),
            EscalationTrigger::AnyFieldAbstained => match verdict {
                StageVerdict::Attribute(v) => match &v.labels {
                    Some(labels) => AttributeKind::JUDGED.iter().any(|&kind| {
                        labels.get(kind) == taxonomy.label_set(kind).abstention_label()
                    }),
                    None => v.parse_status == ParseStatus::Failed,
                },
                StageVerdict::Alignment(_) => false,
            },
            EscalationTrigger::RatingAtOrBelow(k) => match verdict {
                StageVerdict::Alignment(v) => v.rating.map(|r| r <= *k).unwrap_or(false),
                StageVerdict::Attribute(_) => false,
            },
        };
        if fires {
            return Some(*trigger);
        }
    }
    None
}

/// Pure routing decision over the verdicts gathered so far. Total: every
/// input yields a decision.
pub fn route(
    item_id: &str,
    verdicts_so_far: &[StageVerdict],
    policy: &CascadePolicy,
    taxonomy: &Taxonomy,
) -> RoutingDecision {
    assert!(
        !verdicts_so_far.is_empty(),
        "route needs at least one verdict"
    );
    let stage = verdicts_so_far.len() - 1;
    let newest = verdicts_so_far.last().expect("non-empty");
    let decision = |action, trigger, unresolved: Vec<AttributeKind>, consult_next| RoutingDecision {
        item_id: item_id.to_string(),
        stage_reached: stage,
        action,
        trigger,
        unresolved_fields: unresolved,
        consult_next,
    };

    if stage == 0 {
        return match fired_trigger(newest, &policy.triggers, taxonomy) {
            None => decision(RouteAction::AcceptedAtStage, None, vec![], false),
            Some(trigger) if policy.stages.len() > 1 => {
                decision(RouteAction::Escalated, Some(trigger), vec![], true)
            }
            Some(trigger) => decision(RouteAction::Unresolved, Some(trigger), vec![], false),
        };
    }

    if stage == 1 {
        let disagreements = match (&verdicts_so_far[0], newest) {
            (StageVerdict::Attribute(a), StageVerdict::Attribute(b)) => {
                field_disagreements(a, b, taxonomy)
            }
            _ => vec![],
        };
        if disagreements.is_empty() {
            return decision(RouteAction::Escalated, None, vec![], false);
        }
        return match policy.arbitration {
            Arbitration::ThirdJudgeMajority if policy.stages.len() >= 3 => {
                decision(RouteAction::Escalated, None, disagreements, true)
            }
            Arbitration::ThirdJudgeMajority => {
                decision(RouteAction::Unresolved, None, disagreements, false)
            }
            Arbitration::AcceptFirst => decision(RouteAction::Escalated, None, vec![], false),
        };
    }

    // Three or more verdicts: arbitration happened.
    let unresolved = match (&verdicts_so_far[0], &verdicts_so_far[1], newest) {
        (StageVerdict::Attribute(a), StageVerdict::Attribute(b), StageVerdict::Attribute(c)) => {
            field_disagreements(a, b, taxonomy)
                .into_iter()
                .filter(|&kind| {
                    let la = concrete_label(a, kind, taxonomy);
                    let lb = concrete_label(b, kind, taxonomy);
                    let lc = concrete_label(c, kind, taxonomy);
                    !(lc == la || lc == lb)
                })
                .collect()
        }
        _ => vec![],
    };
    if unresolved.is_empty() {
        decision(RouteAction::Arbitrated, None, vec![], false)
    } else {
        decision(RouteAction::Unresolved, None, unresolved, false)
    }
}

fn concrete_label(
    verdict: &AttributeVerdict,
    kind: AttributeKind,
    taxonomy: &Taxonomy,
) -> Option<String> {
    let labels = verdict.labels.as_ref()?;
    let label = labels.get(kind);
    if label == taxonomy.label_set(kind).abstention_label() {
        None
    } else {
        Some(label.to_string())
    }
}

/// Fields where both verdicts commit to different concrete labels.
/// Abstention against a concrete label is a gap to fill, not a
/// disagreement.
fn field_disagreements(
    a: &AttributeVerdict,
    b: &AttributeVerdict,
    taxonomy: &Taxonomy,
) -> Vec<AttributeKind> {
    AttributeKind::JUDGED
        .into_iter()
        .filter(|&kind| {
            match (
                concrete_label(a, kind, taxonomy),
                concrete_label(b, kind, taxonomy),
            ) {
                (Some(la), Some(lb)) => la != lb,
                _ => false,
            }
        })
        .collect()
}

/// Merge two attribute verdicts: later stages fill gaps, agreement keeps
/// the label, concrete conflicts resolve per `resolve`.
fn merge_labels(
    a: &AttributeVerdict,
    b: &AttributeVerdict,
    taxonomy: &Taxonomy,
    mut resolve: impl FnMut(AttributeKind, &str, &str) -> Option<String>,
) -> AttributeLabels {
    let mut merged = AttributeLabels::all_abstention(taxonomy);
    for kind in AttributeKind::JUDGED {
        let la = concrete_label(a, kind, taxonomy);
        let lb = concrete_label(b, kind, taxonomy);
        let label = match (la, lb) {
            (None, None) => None,
            (Some(l), None) | (None, Some(l)) => Some(l),
            (Some(la), Some(lb)) if la == lb => Some(la),
            (Some(la), Some(lb)) => resolve(kind, &la, &lb),
        };
        if let Some(label) = label {
            merged.set(kind, label);
        }
    }
    merged
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub item_id: String,
    pub model_id: String,
    pub latency_s: f64,
    pub cost: MicroUsd,
}

/// Per-call latency/cost records plus exact totals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub entries: Vec<LedgerEntry>,
}

impl RunLedger {
    pub fn push(&mut self, entry: LedgerEntry) {
        self.entries.push(entry);
    }

    pub fn total_cost(&self) -> MicroUsd {
        self.entries.iter().map(|e| e.cost).sum()
    }

    pub fn total_time_s(&self) -> f64 {
        self.entries.iter().map(|e| e.latency_s).sum()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("item_id\tmodel_id\tlatency_s\tcost_micro_usd\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.item_id, e.model_id, e.latency_s, e.cost.0
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBreakdown {
    pub calls: u64,
    pub total_time_s: f64,
    pub total_cost: MicroUsd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub items: u64,
    pub mean_time_s_per_image: f64,
    pub mean_cost_usd_per_image: f64,
    pub total_cost: MicroUsd,
    pub per_model: BTreeMap<String, ModelBreakdown>,
}

/// Means are over items (an item's time/cost is the sum of its calls),
/// not over calls; the per-model breakdown sums back to the totals.
pub fn summarize_cost(ledger: &RunLedger) -> Result<CostSummary, CascadeError> {
    if ledger.entries.is_empty() {
        return Err(CascadeError::EmptyLedger);
    }
    let mut per_item: BTreeMap<&str, (f64, i64)> = BTreeMap::new();
    let mut per_model: BTreeMap<String, ModelBreakdown> = BTreeMap::new();
    for e in &ledger.entries {
        let item = per_item.entry(e.item_id.as_str()).or_insert((0.0, 0));
        item.0 += e.latency_s;
        item.1 += e.cost.0;
        let model = per_model.entry(e.model_id.clone()).or_insert(ModelBreakdown {
            calls: 0,
            total_time_s: 0.0,
            total_cost: MicroUsd::ZERO,
        });
        model.calls += 1;
        model.total_time_s += e.latency_s;
        model.total_cost = model.total_cost + e.cost;
    }
    let items = per_item.len() as u64;
    let mean_time = per_item.values().map(|(t, _)| t).sum::<f64>() / items as f64;
    let mean_cost = per_item.values().map(|(_, c)| *c as f64).sum::<f64>() / items as f64 / 1e6;
    Ok(CostSummary {
        items,
        mean_time_s_per_image: mean_time,
        mean_cost_usd_per_image: mean_cost,
        total_cost: ledger.total_cost(),
        per_model: per_model.into_iter().collect(),
    })
}

/// One item to judge through the cascade.
#[derive(Debug, Clone)]
pub struct CascadeItem {
    pub item_id: String,
    pub image: ImageRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeItemOutcome {
    pub item_id: String,
    pub final_labels: Option<AttributeLabels>,
    pub decision: RoutingDecision,
    pub stage_verdicts: Vec<(String, AttributeVerdict)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutcome {
    pub items: Vec<CascadeItemOutcome>,
    pub ledger: RunLedger,
}

/// Run the attribute cascade over items. Stages share one prompt (the
/// profile's Full attribute prompt); items never consult a stage the
/// router did not reach, and the ledger records every call actually made.
pub fn run_attribute_cascade(
    items: &[CascadeItem],
    policy: &CascadePolicy,
    gateway: &Gateway,
    taxonomy: &Taxonomy,
    templates: &TemplateSet,
    decoding: Decoding,
) -> Result<CascadeOutcome, CascadeError> {
    let prompt = templates.build_attribute_prompt(taxonomy, PromptVariant::Full);
    let mut outcomes = Vec::with_capacity(items.len());
    let mut ledger = RunLedger::default();

    for item in items {
        let outcome = run_item(item, &prompt, policy, gateway, taxonomy, decoding, &mut ledger)?;
        outcomes.push(outcome);
    }
    Ok(CascadeOutcome {
        items: outcomes,
        ledger,
    })
}

fn run_item(
    item: &CascadeItem,
    prompt: &PromptText,
    policy: &CascadePolicy,
    gateway: &Gateway,
    taxonomy: &Taxonomy,
    decoding: Decoding,
    ledger: &mut RunLedger,
) -> Result<CascadeItemOutcome, CascadeError> {
    let mut stage_verdicts: Vec<(String, AttributeVerdict)> = Vec::new();
    let mut routed: Vec<StageVerdict> = Vec::new();
    let mut decision;

    loop {
        let stage_index = routed.len();
        let model_id = &policy.stages[stage_index];
        let request = JudgeRequest {
            request_id: format!("{}::{}::{}", item.item_id, model_id, stage_index),
            image: item.image.clone(),
            prompt: prompt.clone(),
            model_id: model_id.clone(),
            decoding,
        };
        let reply = gateway.submit(&request)?;
        ledger.push(LedgerEntry {
            item_id: item.item_id.clone(),
            model_id: model_id.clone(),
            latency_s: reply.latency_s(),
            cost: reply.cost(),
        });
        let verdict = match &reply {
            JudgeReply::Answered(r) => parse_attribute_verdict(&r.raw_text, taxonomy),
            // Terminal gateway failure counts as a parse failure for routing.
            JudgeReply::Failed(f) => AttributeVerdict::failed(ParseDefect::new(
                DefectCategory::NoJsonFound,
                format!("transport failure ({}): {}", f.class, f.detail),
            )),
        };
        stage_verdicts.push((model_id.clone(), verdict.clone()));
        routed.push(StageVerdict::Attribute(verdict));
        decision = route(&item.item_id, &routed, policy, taxonomy);
        if !decision.consult_next || routed.len() >= policy.stages.len() {
            break;
        }
    }

    let final_labels = assemble_final_labels(&stage_verdicts, &decision, taxonomy);
    Ok(CascadeItemOutcome {
        item_id: item.item_id.clone(),
        final_labels,
        decision,
        stage_verdicts,
    })
}

fn assemble_final_labels(
    stage_verdicts: &[(String, AttributeVerdict)],
    decision: &RoutingDecision,
    policy: &CascadePolicy,
    taxonomy: &Taxonomy,
) -> Option<AttributeLabels> {
    match stage_verdicts.len() {
        0 => None,
        1 => {
            let v = &stage_verdicts[0].1;
            v.labels.clone()
        }
        2 => {
            let (a, b) = (&stage_verdicts[0].1, &stage_verdicts[1].1);
            // Concrete conflicts: keep the first stage's answer (either
            // AcceptFirst mode or an exhausted two-stage policy).
            Some(merge_labels(a, b, taxonomy, |_, first, _| {
                Some(first.to_string())
            }))
        }
        _ => {
            let (a, b, c) = (
                &stage_verdicts[0].1,
                &stage_verdicts[1].1,
                &stage_verdicts[2].1,
            );
            let _ = policy;
            Some(merge_labels(a, b, taxonomy, |kind, first, second| {
                let arbiter = concrete_label(c, kind, taxonomy);
                match arbiter.as_deref() {
                    Some(l) if l == first => Some(first.to_string()),
                    Some(l) if l == second => Some(second.to_string()),
                    // Three-way split: abstain; recorded per field in the
                    // routing decision.
                    _ => {
                        debug_assert!(decision.unresolved_fields.contains(&kind));
                        None
                    }
                }
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::DatasetProfile;
    use crate::verdict::parse_attribute_verdict;

    fn tax() -> Taxonomy {
        Taxonomy::for_profile(DatasetProfile::FairCoT)
    }

    fn verdict(gender: &str, race: &str) -> StageVerdict {
        let raw = format!(
            r#"{{"Gender":"{gender}","Race":"{race}","Age":"child","Religion":"Neutral","Culture":"unspecified","Disability":"unspecified"}}"#
        );
        StageVerdict::Attribute(parse_attribute_verdict(&raw, &tax()))
    }

    fn policy(stages: &[&str]) -> CascadePolicy {
        CascadePolicy::new(
            stages.iter().map(|s| s.to_string()).collect(),
            [
                EscalationTrigger::AnyFieldAbstained,
                EscalationTrigger::ParseFailed,
            ]
            .into_iter()
            .collect(),
            Arbitration::ThirdJudgeMajority,
        )
        .unwrap()
    }

    #[test]
    fn fully_specified_first_verdict_is_accepted() {
        let taxonomy = tax();
        // Culture "unspecified" fires AnyFieldAbstained, so give culture a tag.
        let raw = r#"{"Gender":"male","Race":"White","Age":"child","Religion":"Neutral","Culture":"British","Disability":"vitiligo"}"#;
        let v = StageVerdict::Attribute(parse_attribute_verdict(raw, &taxonomy));
        let d = route("i1", &[v], &policy(&["a", "b"]), &taxonomy);
        assert_eq!(d.action, RouteAction::AcceptedAtStage);
        assert_eq!(d.stage_reached, 0);
        assert!(!d.consult_next);
    }

    #[test]
    fn abstained_field_escalates_with_trigger() {
        let taxonomy = tax();
        let d = route(
            "i1",
            &[verdict("unspecified", "White")],
            &policy(&["a", "b"]),
            &taxonomy,
        );
        assert_eq!(d.action, RouteAction::Escalated);
        assert_eq!(d.trigger, Some(EscalationTrigger::AnyFieldAbstained));
        assert!(d.consult_next);
    }

    #[test]
    fn disagreement_goes_to_the_third_judge_majority() {
        let taxonomy = tax();
        let fixtures = [
            verdict("male", "White"),
            verdict("male", "Black"),
            verdict("male", "White"),
        ];
        let two = route("i1", &fixtures[..2].to_vec(), &policy(&["a", "b", "c"]), &taxonomy);
        assert_eq!(two.action, RouteAction::Escalated);
        assert!(two.consult_next);

        let three = route("i1", &fixtures.to_vec(), &policy(&["a", "b", "c"]), &taxonomy);
        assert_eq!(three.action, RouteAction::Arbitrated);
        assert!(three.unresolved_fields.is_empty());
    }

    #[test]
    fn three_way_split_leaves_the_field_unresolved() {
        let taxonomy = tax();
        let fixtures = vec![
            verdict("male", "White"),
            verdict("male", "Black"),
            verdict("male", "East Asian"),
        ];
        let d = route("i1", &fixtures, &policy(&["a", "b", "c"]), &taxonomy);
        assert_eq!(d.action, RouteAction::Unresolved);
        assert_eq!(d.unresolved_fields, vec![AttributeKind::Race]);
    }

    #[test]
    fn monotone_escalation_in_the_trigger_set() {
        let taxonomy = tax();
        let small = CascadePolicy::new(
            vec!["a".into(), "b".into()],
            [EscalationTrigger::ParseFailed].into_iter().collect(),
            Arbitration::ThirdJudgeMajority,
        )
        .unwrap();
        let big = policy(&["a", "b"]);
        let verdicts = [verdict("unspecified", "White")];
        let d_small = route("i", &verdicts.to_vec(), &small, &taxonomy);
        let d_big = route("i", &verdicts.to_vec(), &big, &taxonomy);
        // the bigger trigger set escalates at least as often
        assert!(!d_small.consult_next);
        assert!(d_big.consult_next);
    }

    #[test]
    fn policy_validation() {
        assert!(CascadePolicy::new(vec![], Default::default(), Arbitration::AcceptFirst).is_err());
        assert!(CascadePolicy::new(
            vec!["a".into(), "a".into()],
            Default::default(),
            Arbitration::AcceptFirst
        )
        .is_err());
    }

    #[test]
    fn summarize_cost_means_are_per_item() {
        let mut ledger = RunLedger::default();
        ledger.push(LedgerEntry {
            item_id: "i1".into(),
            model_id: "gpt-4.1".into(),
            latency_s: 4.47,
            cost: MicroUsd(2500),
        });
        let s = summarize_cost(&ledger).unwrap();
        assert_eq!(s.items, 1);
        assert_eq!(s.mean_time_s_per_image, 4.47);
        assert_eq!(s.total_cost, MicroUsd(2500));

        ledger.push(LedgerEntry {
            item_id: "i2".into(),
            model_id: "gemini-1.5-pro".into(),
            latency_s: 14.42,
            cost: MicroUsd(1700),
        });
        let s = summarize_cost(&ledger).unwrap();
        assert_eq!(s.items, 2);
        let breakdown_total: MicroUsd = s.per_model.values().map(|b| b.total_cost).sum();
        assert_eq!(breakdown_total, s.total_cost);
        assert!(summarize_cost(&RunLedger::default()).is_err());
    }

    #[test]
    fn trigger_parsing_round_trips() {
        for t in [
            EscalationTrigger::AnyFieldAbstained,
            EscalationTrigger::ParseFailed,
            EscalationTrigger::RatingAtOrBelow(2),
        ] {
            assert_eq!(EscalationTrigger::parse(&t.to_string()), Some(t));
        }
        assert_eq!(EscalationTrigger::parse("nope"), None);
    }
}
