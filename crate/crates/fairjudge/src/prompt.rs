//! Byte-exact construction of judge prompts and baseline class texts.
//!
//! The shipped templates are the source of truth for prompt bytes; the
//! Full attribute variant only rewrites a label enumeration when the
//! profile's vocabulary differs from the shipped one, so default bodies
//! are bit-identical to the template files. Line endings are LF and
//! bodies carry no trailing newline, so golden digests are stable across
//! platforms.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Digest;
use crate::taxonomy::{AttributeKind, CanonResult, LabelSet, Taxonomy};

/// Which ablation variant of the attribute prompt to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptVariant {
    Full,
    WithoutLabels,
    WithoutUnspecified,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 3] = [
        PromptVariant::Full,
        PromptVariant::WithoutLabels,
        PromptVariant::WithoutUnspecified,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptVariant::Full => "full",
            PromptVariant::WithoutLabels => "without-labels",
            PromptVariant::WithoutUnspecified => "without-unspecified",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|v| v.as_str() == s)
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The two caption carriers used for template perturbation checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Carrier {
    PhotoOf,
    ImageOf,
}

impl Carrier {
    pub const ALL: [Carrier; 2] = [Carrier::PhotoOf, Carrier::ImageOf];

    pub fn prefix(&self) -> &'static str {
        match self {
            Carrier::PhotoOf => "a photo of ",
            Carrier::ImageOf => "an image of ",
        }
    }

    pub fn other(&self) -> Carrier {
        match self {
            Carrier::PhotoOf => Carrier::ImageOf,
            Carrier::ImageOf => Carrier::PhotoOf,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Carrier::PhotoOf => "photo-of",
            Carrier::ImageOf => "image-of",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for Carrier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A fully rendered prompt. `body` is deterministic given the template,
/// variant, perturbation, and substitutions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub body: String,
    pub template_id: String,
    pub variant: PromptVariant,
    pub perturbation: Carrier,
}

impl PromptText {
    pub fn digest(&self) -> Digest {
        Digest::of_str(&self.body)
    }
}

/// A caption with its carrier, tracked through perturbation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbedCaption {
    pub text: String,
    /// True when the leading carrier was actually swapped.
    pub changed: bool,
    /// False when the caption started with neither carrier (no-op flag).
    pub carrier_found: bool,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("caption must be non-empty")]
    EmptyCaption,
    #[error("profession `{0}` is not in the Professions label set")]
    OffTaxonomyProfession(String),
    #[error("template overlay `{path}`: {source}")]
    OverlayIo {
        path: String,
        source: std::io::Error,
    },
    #[error("unknown template id `{0}` in overlay directory")]
    UnknownTemplateId(String),
}

pub const TEMPLATE_ATTRIBUTE_FULL: &str = "attribute_full";
pub const TEMPLATE_ATTRIBUTE_WITHOUT_LABELS: &str = "attribute_without_labels";
pub const TEMPLATE_ALIGNMENT: &str = "alignment";
pub const TEMPLATE_PROFESSION: &str = "profession";

const BUILTIN_ATTRIBUTE_FULL: &str = include_str!("../templates/attribute_full.txt");
const BUILTIN_ATTRIBUTE_WITHOUT_LABELS: &str =
    include_str!("../templates/attribute_without_labels.txt");
const BUILTIN_ALIGNMENT: &str = include_str!("../templates/alignment.txt");
const BUILTIN_PROFESSION: &str = include_str!("../templates/profession.txt");

/// The prompt templates in force for a run. Per-model phrasing overlays
/// replace whole template bodies by id; the shipped defaults carry no
/// overlays.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    attribute_full: String,
    attribute_without_labels: String,
    alignment: String,
    profession: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> TemplateSet {
        TemplateSet {
            attribute_full: BUILTIN_ATTRIBUTE_FULL.to_string(),
            attribute_without_labels: BUILTIN_ATTRIBUTE_WITHOUT_LABELS.to_string(),
            alignment: BUILTIN_ALIGNMENT.to_string(),
            profession: BUILTIN_PROFESSION.to_string(),
        }
    }

    /// Apply overlays from a directory of `<template_id>.txt` files.
    pub fn with_overlays(dir: &Path) -> Result<TemplateSet, PromptError> {
        let mut set = TemplateSet::builtin();
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| PromptError::OverlayIo {
                path: dir.display().to_string(),
                source: e,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("txt"))
            .collect();
        entries.sort();
        for path in entries {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let body = std::fs::read_to_string(&path).map_err(|e| PromptError::OverlayIo {
                path: path.display().to_string(),
                source: e,
            })?;
            let body = body.trim_end_matches('\n').to_string();
            match id.as_str() {
                TEMPLATE_ATTRIBUTE_FULL => set.attribute_full = body,
                TEMPLATE_ATTRIBUTE_WITHOUT_LABELS => set.attribute_without_labels = body,
                TEMPLATE_ALIGNMENT => set.alignment = body,
                TEMPLATE_PROFESSION => set.profession = body,
                _ => return Err(PromptError::UnknownTemplateId(id)),
            }
        }
        Ok(set)
    }

    /// Digests of the template bodies, recorded in run manifests.
    pub fn template_digests(&self) -> BTreeMap<String, Digest> {
        let mut out = BTreeMap::new();
        out.insert(TEMPLATE_ATTRIBUTE_FULL.into(), Digest::of_str(&self.attribute_full));
        out.insert(
            TEMPLATE_ATTRIBUTE_WITHOUT_LABELS.into(),
            Digest::of_str(&self.attribute_without_labels),
        );
        out.insert(TEMPLATE_ALIGNMENT.into(), Digest::of_str(&self.alignment));
        out.insert(TEMPLATE_PROFESSION.into(), Digest::of_str(&self.profession));
        out
    }

    /// The six-attribute judging prompt for a profile.
    ///
    /// Full substitutes the profile's label sets into the shipped template
    /// (bit-identical to it when the sets match the shipped enumeration);
    /// WithoutLabels drops every label enumeration; WithoutUnspecified
    /// removes the abstention option and the insufficiency instruction
    /// ("Neutral" stays: it is a class, not an abstention).
    pub fn build_attribute_prompt(&self, taxonomy: &Taxonomy, variant: PromptVariant) -> PromptText {
        let (body, template_id) = match variant {
            PromptVariant::Full => (
                substitute_label_sets(&self.attribute_full, taxonomy),
                TEMPLATE_ATTRIBUTE_FULL,
            ),
            PromptVariant::WithoutLabels => (
                self.attribute_without_labels.clone(),
                TEMPLATE_ATTRIBUTE_WITHOUT_LABELS,
            ),
            PromptVariant::WithoutUnspecified => (
                strip_abstention_options(&substitute_label_sets(&self.attribute_full, taxonomy)),
                TEMPLATE_ATTRIBUTE_FULL,
            ),
        };
        PromptText {
            body,
            template_id: template_id.to_string(),
            variant,
            perturbation: Carrier::PhotoOf,
        }
    }

    /// The rubric alignment prompt with `<CAPTION>` substituted exactly once.
    pub fn build_alignment_prompt(&self, caption: &str) -> Result<PromptText, PromptError> {
        if caption.is_empty() {
            return Err(PromptError::EmptyCaption);
        }
        let body = self.alignment.replacen("<CAPTION>", caption, 1);
        Ok(PromptText {
            body,
            template_id: TEMPLATE_ALIGNMENT.to_string(),
            variant: PromptVariant::Full,
            perturbation: Carrier::PhotoOf,
        })
    }

    /// The combined profession + alignment prompt with both `<PROFESSION>`
    /// slots substituted.
    pub fn build_profession_prompt(
        &self,
        taxonomy: &Taxonomy,
        profession: &str,
    ) -> Result<PromptText, PromptError> {
        let set = taxonomy.label_set(AttributeKind::Profession);
        let canonical = match taxonomy.canonicalize(AttributeKind::Profession, profession) {
            CanonResult::Canonical(c) if c != set.abstention_label() => c,
            _ => return Err(PromptError::OffTaxonomyProfession(profession.to_string())),
        };
        let body = self.profession.replace("<PROFESSION>", &canonical);
        Ok(PromptText {
            body,
            template_id: TEMPLATE_PROFESSION.to_string(),
            variant: PromptVariant::Full,
            perturbation: Carrier::PhotoOf,
        })
    }
}

/// Swap a caption's leading carrier to `to`. Captions already carrying
/// `to` are untouched; captions with neither carrier come back unchanged
/// with `carrier_found: false`.
pub fn perturb_caption(caption: &str, to: Carrier) -> PerturbedCaption {
    let from = to.other();
    if let Some(rest) = caption.strip_prefix(from.prefix()) {
        return PerturbedCaption {
            text: format!("{}{}", to.prefix(), rest),
            changed: true,
            carrier_found: true,
        };
    }
    if caption.starts_with(to.prefix()) {
        return PerturbedCaption {
            text: caption.to_string(),
            changed: false,
            carrier_found: true,
        };
    }
    PerturbedCaption {
        text: caption.to_string(),
        changed: false,
        carrier_found: false,
    }
}

/// One templated class text per non-abstention label, in label-set order.
/// Demographic classes read "a photo of a {label} person"; professions
/// read "a photo of a {label}".
pub fn build_class_prompts(set: &LabelSet, carrier: Carrier) -> Vec<(String, String)> {
    set.class_labels()
        .map(|label| {
            let text = if set.kind() == AttributeKind::Profession {
                format!("{}a {}", carrier.prefix(), label)
            } else {
                format!("{}a {} person", carrier.prefix(), label)
            };
            (label.to_string(), text)
        })
        .collect()
}

/// Caption for a profession item under a carrier, e.g. "a photo of a nurse".
pub fn profession_caption(profession: &str, carrier: Carrier) -> String {
    format!("{}a {}", carrier.prefix(), profession)
}

const ENUMERATED_KINDS: [AttributeKind; 5] = [
    AttributeKind::Gender,
    AttributeKind::Race,
    AttributeKind::Age,
    AttributeKind::Religion,
    AttributeKind::Disability,
];

/// Shipped enumerations, used to detect when a profile needs a rewrite.
fn shipped_enumeration(kind: AttributeKind) -> &'static [&'static str] {
    match kind {
        AttributeKind::Gender => &["male", "female", "unspecified"],
        AttributeKind::Race => &[
            "Black",
            "White",
            "East Asian",
            "South Asian",
            "Middle Eastern",
            "Latino_Hispanic",
            "Indigenous",
            "unspecified",
        ],
        AttributeKind::Age => &["child", "young adult", "middle-aged", "elderly", "unspecified"],
        AttributeKind::Religion => &[
            "Christian",
            "Muslim",
            "Hindu",
            "Buddhist",
            "Jewish",
            "Sikh",
            "Shinto",
            "Neutral",
            "unspecified",
        ],
        AttributeKind::Disability => &[
            "mobility impairment",
            "blind/low vision",
            "deaf/hard of hearing",
            "dwarfism",
            "vitiligo",
            "unspecified",
        ],
        _ => &[],
    }
}

fn substitute_label_sets(template: &str, taxonomy: &Taxonomy) -> String {
    let mut body = template.to_string();
    for kind in ENUMERATED_KINDS {
        let set = taxonomy.label_set(kind);
        if set.labels() == shipped_enumeration(kind) {
            continue;
        }
        let marker = format!("- {}: {{", kind.as_str());
        let Some(start) = body.find(&marker) else {
            continue;
        };
        let open = start + marker.len() - 1;
        let Some(close_rel) = body[open..].find('}') else {
            continue;
        };
        let close = open + close_rel;
        let joined = set.labels().join(", ");
        body.replace_range(open + 1..close, &joined);
    }
    body
}

fn strip_abstention_options(full_body: &str) -> String {
    let mut body = full_body
        .lines()
        .filter(|line| {
            *line != "If evidence is insufficient for any field, output \"unspecified\"."
        })
        .collect::<Vec<_>>()
        .join("\n");
    body = body.replace(", unspecified}", "}");
    body = body.replace(" OR \"unspecified\"", "");
    body = body.replace(", use \"unspecified\" if no visible cue", "");
    body
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::DatasetProfile;

    fn templates() -> TemplateSet {
        TemplateSet::builtin()
    }

    #[test]
    fn full_prompt_matches_shipped_template_for_base_profiles() {
        let tax = Taxonomy::for_profile(DatasetProfile::FairCoT);
        let p = templates().build_attribute_prompt(&tax, PromptVariant::Full);
        assert_eq!(p.body, BUILTIN_ATTRIBUTE_FULL);
    }

    #[test]
    fn diversify_full_prompt_substitutes_race_and_disability() {
        let tax = Taxonomy::for_profile(DatasetProfile::Diversify);
        let p = templates().build_attribute_prompt(&tax, PromptVariant::Full);
        assert!(p.body.contains(
            "- Race: {Black, White, East Asian, South Asian, Middle Eastern, \
             Latino_Hispanic, Indigenous, Southeast Asian, unspecified}"
        ));
        assert!(p.body.contains("down syndrome"));
        assert!(p.body.contains("- Age: {child, young adult, middle-aged, elderly, unspecified}"));
    }

    #[test]
    fn without_unspecified_removes_every_abstention_option() {
        let tax = Taxonomy::for_profile(DatasetProfile::Diversify);
        let p = templates().build_attribute_prompt(&tax, PromptVariant::WithoutUnspecified);
        assert!(!p.body.contains("unspecified"));
        assert!(p.body.contains("Neutral"));
        assert!(p.body.contains("- Gender: {male, female}"));
    }

    #[test]
    fn without_labels_enumerates_no_label_lists() {
        let tax = Taxonomy::for_profile(DatasetProfile::Diversify);
        let p = templates().build_attribute_prompt(&tax, PromptVariant::WithoutLabels);
        for kind in AttributeKind::JUDGED {
            let line = format!("- {}", kind.as_str());
            assert!(p.body.contains(&line));
        }
        for line in p.body.lines().filter(|l| l.starts_with("- ")) {
            assert!(!line.contains('{') && !line.contains('('), "enumeration in {line:?}");
        }
    }

    #[test]
    fn alignment_prompt_substitutes_caption_once() {
        let p = templates().build_alignment_prompt("a photo of a nurse").unwrap();
        assert!(p.body.contains("5 = Matches exactly"));
        assert_eq!(p.body.matches("a photo of a nurse").count(), 1);
        assert!(!p.body.contains("<CAPTION>"));
        let single = templates().build_alignment_prompt("x").unwrap();
        assert_eq!(single.body.matches('x').count(), 1);
    }

    #[test]
    fn alignment_prompt_rejects_empty_caption() {
        assert!(matches!(
            templates().build_alignment_prompt(""),
            Err(PromptError::EmptyCaption)
        ));
    }

    #[test]
    fn perturbed_caption_passes_through_alignment_prompt() {
        let p = templates().build_alignment_prompt("an image of a nurse").unwrap();
        assert!(p.body.contains("\"an image of a nurse\""));
    }

    #[test]
    fn profession_prompt_substitutes_both_slots() {
        let tax = Taxonomy::for_profile(DatasetProfile::Professions);
        let p = templates().build_profession_prompt(&tax, "doctor").unwrap();
        assert!(p.body.contains("Caption    = \"a photo of a doctor\""));
        assert!(p.body.contains("Profession = \"doctor\""));
        assert!(!p.body.contains("<PROFESSION>"));
    }

    #[test]
    fn profession_prompt_rejects_off_taxonomy() {
        let tax = Taxonomy::for_profile(DatasetProfile::Professions);
        assert!(templates().build_profession_prompt(&tax, "astronaut").is_err());
    }

    #[test]
    fn six_professions_give_six_distinct_bodies() {
        let tax = Taxonomy::for_profile(DatasetProfile::Professions);
        let t = templates();
        let bodies: Vec<String> = tax
            .label_set(AttributeKind::Profession)
            .class_labels()
            .map(|p| t.build_profession_prompt(&tax, p).unwrap().body)
            .collect();
        assert_eq!(bodies.len(), 6);
        for i in 0..bodies.len() {
            for j in i + 1..bodies.len() {
                assert_ne!(bodies[i], bodies[j]);
            }
        }
    }

    #[test]
    fn perturbation_swaps_and_is_an_involution() {
        let once = perturb_caption("a photo of a teacher", Carrier::ImageOf);
        assert_eq!(once.text, "an image of a teacher");
        assert!(once.changed && once.carrier_found);
        let back = perturb_caption(&once.text, Carrier::PhotoOf);
        assert_eq!(back.text, "a photo of a teacher");
    }

    #[test]
    fn perturbation_flags_missing_carrier() {
        let p = perturb_caption("portrait of a teacher", Carrier::ImageOf);
        assert_eq!(p.text, "portrait of a teacher");
        assert!(!p.changed && !p.carrier_found);
    }

    #[test]
    fn class_prompts_skip_abstention_and_keep_order() {
        let tax = Taxonomy::for_profile(DatasetProfile::Professions);
        let profs = build_class_prompts(tax.label_set(AttributeKind::Profession), Carrier::PhotoOf);
        assert_eq!(profs.len(), 6);
        assert_eq!(profs[0].1, "a photo of a doctor");

        let genders = build_class_prompts(tax.label_set(AttributeKind::Gender), Carrier::PhotoOf);
        assert_eq!(genders.len(), 2);
        assert_eq!(genders[0].1, "a photo of a male person");

        let image_of = build_class_prompts(tax.label_set(AttributeKind::Gender), Carrier::ImageOf);
        assert_eq!(image_of[1].1, "an image of a female person");
    }

    #[test]
    fn determinism_across_calls() {
        let tax = Taxonomy::for_profile(DatasetProfile::Diversify);
        let t = templates();
        for variant in PromptVariant::ALL {
            let a = t.build_attribute_prompt(&tax, variant);
            let b = t.build_attribute_prompt(&tax, variant);
            assert_eq!(a.body, b.body);
        }
    }
}
