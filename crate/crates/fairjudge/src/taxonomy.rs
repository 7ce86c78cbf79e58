//! Closed label vocabularies per attribute, synonym canonicalization, and
//! abstention semantics.
//!
//! Everything here is immutable after construction and safe to share
//! across threads. Canonicalization never guesses: a raw string either
//! normalizes onto a known label (directly or through the canon map) or
//! comes back as [`CanonResult::OffTaxonomy`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// The abstention marker shared by every attribute.
///
/// For Religion, "Neutral" is a regular class (no visible symbol), not an
/// abstention; "unspecified" is the abstention there too.
pub const ABSTENTION: &str = "unspecified";

/// The seven judged dimensions. String rendering is stable and
/// case-sensitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttributeKind {
    Gender,
    Race,
    Age,
    Religion,
    Culture,
    Disability,
    Profession,
}

impl AttributeKind {
    pub const ALL: [AttributeKind; 7] = [
        AttributeKind::Gender,
        AttributeKind::Race,
        AttributeKind::Age,
        AttributeKind::Religion,
        AttributeKind::Culture,
        AttributeKind::Disability,
        AttributeKind::Profession,
    ];

    /// The six fields a single attribute judgment covers, in prompt order.
    pub const JUDGED: [AttributeKind; 6] = [
        AttributeKind::Gender,
        AttributeKind::Race,
        AttributeKind::Age,
        AttributeKind::Religion,
        AttributeKind::Culture,
        AttributeKind::Disability,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AttributeKind::Gender => "Gender",
            AttributeKind::Race => "Race",
            AttributeKind::Age => "Age",
            AttributeKind::Religion => "Religion",
            AttributeKind::Culture => "Culture",
            AttributeKind::Disability => "Disability",
            AttributeKind::Profession => "Profession",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Datasets the harness knows vocabularies for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DatasetProfile {
    FairFace,
    PaTA,
    FairCoT,
    Diversify,
    Professions,
}

impl DatasetProfile {
    pub const ALL: [DatasetProfile; 5] = [
        DatasetProfile::FairFace,
        DatasetProfile::PaTA,
        DatasetProfile::FairCoT,
        DatasetProfile::Diversify,
        DatasetProfile::Professions,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetProfile::FairFace => "FairFace",
            DatasetProfile::PaTA => "PaTA",
            DatasetProfile::FairCoT => "FairCoT",
            DatasetProfile::Diversify => "DIVERSIFY",
            DatasetProfile::Professions => "Professions",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|p| p.as_str() == s)
    }
}

impl fmt::Display for DatasetProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An ordered closed vocabulary for one attribute. The abstention label is
/// always a member; by convention it is last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    kind: AttributeKind,
    labels: Vec<String>,
    abstention_label: String,
}

impl LabelSet {
    fn new(kind: AttributeKind, labels: &[&str]) -> Self {
        let labels: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        let mut seen = BTreeSet::new();
        for l in &labels {
            assert!(seen.insert(l.to_lowercase()), "duplicate label {l} for {kind}");
        }
        assert!(
            labels.iter().any(|l| l == ABSTENTION),
            "label set for {kind} lacks the abstention label"
        );
        LabelSet {
            kind,
            labels,
            abstention_label: ABSTENTION.to_string(),
        }
    }

    pub fn kind(&self) -> AttributeKind {
        self.kind
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn abstention_label(&self) -> &str {
        &self.abstention_label
    }

    /// Concrete (non-abstention) labels, in set order.
    pub fn class_labels(&self) -> impl Iterator<Item = &str> {
        self.labels
            .iter()
            .filter(|l| *l != &self.abstention_label)
            .map(String::as_str)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }
}

/// Outcome of canonicalization. `OffTaxonomy` is a value, not an error:
/// the caller decides what an unmappable string means.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CanonResult {
    Canonical(String),
    OffTaxonomy(String),
}

impl CanonResult {
    pub fn canonical(&self) -> Option<&str> {
        match self {
            CanonResult::Canonical(s) => Some(s),
            CanonResult::OffTaxonomy(_) => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("unknown canonical label `{label}` for {kind}")]
    UnknownLabel { kind: AttributeKind, label: String },
    #[error("canon map line {line}: {reason}")]
    BadConfig { line: usize, reason: String },
}

/// Normalize a raw string into a lookup key: Unicode NFC, case fold, and
/// "/", "_", "-", punctuation and whitespace runs collapsed to single
/// spaces.
pub fn normalize_key(raw: &str) -> String {
    let nfc: String = raw.nfc().collect();
    let lower = nfc.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    let mut pending_sep = false;
    for ch in lower.chars() {
        let is_sep = ch.is_whitespace()
            || matches!(ch, '/' | '_' | '-' | '.' | ',' | ';' | ':' | '"' | '\'' | '(' | ')' | '!' | '?');
        if is_sep {
            pending_sep = true;
        } else {
            if pending_sep && !out.is_empty() {
                out.push(' ');
            }
            pending_sep = false;
            out.push(ch);
        }
    }
    out
}

/// Profile-scoped vocabularies plus the canon map.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    profile: DatasetProfile,
    sets: BTreeMap<AttributeKind, LabelSet>,
    canon: BTreeMap<AttributeKind, BTreeMap<String, String>>,
}

const BASE_GENDER: &[&str] = &["male", "female", "unspecified"];
const BASE_RACE: &[&str] = &[
    "Black",
    "White",
    "East Asian",
    "South Asian",
    "Middle Eastern",
    "Latino_Hispanic",
    "Indigenous",
    "unspecified",
];
const DIVERSIFY_RACE: &[&str] = &[
    "Black",
    "White",
    "East Asian",
    "South Asian",
    "Middle Eastern",
    "Latino_Hispanic",
    "Indigenous",
    "Southeast Asian",
    "unspecified",
];
const BASE_AGE: &[&str] = &["child", "young adult", "middle-aged", "elderly", "unspecified"];
const BASE_RELIGION: &[&str] = &[
    "Christian",
    "Muslim",
    "Hindu",
    "Buddhist",
    "Jewish",
    "Sikh",
    "Shinto",
    "Neutral",
    "unspecified",
];
const PROFESSIONS_RELIGION: &[&str] = &[
    "Christian",
    "Muslim",
    "Hindu",
    "Buddhist",
    "Jewish",
    "Sikh",
    "Shinto",
    "Taoist",
    "Neutral",
    "unspecified",
];
const BASE_DISABILITY: &[&str] = &[
    "mobility impairment",
    "blind/low vision",
    "deaf/hard of hearing",
    "dwarfism",
    "vitiligo",
    "unspecified",
];
const DIVERSIFY_DISABILITY: &[&str] = &[
    "mobility impairment",
    "blind/low vision",
    "deaf/hard of hearing",
    "dwarfism",
    "vitiligo",
    "down syndrome",
    "amputee",
    "autism",
    "albinism",
    "cerebral palsy",
    "unspecified",
];
const PROFESSIONS: &[&str] = &[
    "doctor",
    "engineer",
    "janitor",
    "lawyer",
    "nurse",
    "teacher",
    "unspecified",
];

const DEFAULT_CANON_TSV: &str = include_str!("../data/taxonomy.tsv");

impl Taxonomy {
    /// The profile's vocabulary with the shipped default canon map.
    pub fn for_profile(profile: DatasetProfile) -> Taxonomy {
        Taxonomy::for_profile_with_config(profile, DEFAULT_CANON_TSV)
            .expect("embedded taxonomy config is valid")
    }

    /// Build from a canon-map config (`kind<TAB>raw<TAB>canonical[<TAB>profiles]`,
    /// one mapping per line, `#` comments). Entries for other profiles are
    /// skipped; targets for closed kinds must be members of the label set.
    pub fn for_profile_with_config(
        profile: DatasetProfile,
        config: &str,
    ) -> Result<Taxonomy, TaxonomyError> {
        let sets = label_sets_for(profile);
        let mut canon: BTreeMap<AttributeKind, BTreeMap<String, String>> = BTreeMap::new();
        for kind in AttributeKind::ALL {
            let mut map = BTreeMap::new();
            if let Some(set) = sets.get(&kind) {
                for label in set.labels() {
                    map.insert(normalize_key(label), label.clone());
                }
            }
            canon.insert(kind, map);
        }

        for (idx, line) in config.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 && cols.len() != 4 {
                return Err(TaxonomyError::BadConfig {
                    line: line_no,
                    reason: format!("expected 3 or 4 tab-separated columns, got {}", cols.len()),
                });
            }
            let kind = AttributeKind::parse(cols[0]).ok_or_else(|| TaxonomyError::BadConfig {
                line: line_no,
                reason: format!("unknown attribute kind `{}`", cols[0]),
            })?;
            if cols.len() == 4 {
                let applies = cols[3]
                    .split(',')
                    .map(str::trim)
                    .any(|p| DatasetProfile::parse(p) == Some(profile));
                if !applies {
                    continue;
                }
            }
            let key = normalize_key(cols[1]);
            let target = cols[2].trim().to_string();
            if key.is_empty() {
                return Err(TaxonomyError::BadConfig {
                    line: line_no,
                    reason: "raw key normalizes to empty".into(),
                });
            }
            if kind != AttributeKind::Culture {
                let set = &sets[&kind];
                if !set.contains(&target) {
                    return Err(TaxonomyError::BadConfig {
                        line: line_no,
                        reason: format!("target `{target}` is not in the {kind} label set"),
                    });
                }
            }
            let map = canon.get_mut(&kind).expect("all kinds present");
            if let Some(prev) = map.get(&key) {
                if prev != &target {
                    return Err(TaxonomyError::BadConfig {
                        line: line_no,
                        reason: format!("conflicting entries for key `{key}`: `{prev}` vs `{target}`"),
                    });
                }
            }
            map.insert(key, target);
        }

        Ok(Taxonomy { profile, sets, canon })
    }

    /// Register the culture vocabulary observed in a dataset's metadata.
    /// Tags are deduplicated after normalization and stored sorted, with
    /// the abstention label last.
    pub fn with_culture_tags<I, S>(mut self, tags: I) -> Taxonomy
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = BTreeSet::new();
        let mut labels: Vec<String> = Vec::new();
        for tag in tags {
            let tag = tag.as_ref().trim();
            let key = normalize_key(tag);
            if key.is_empty() || key == ABSTENTION {
                continue;
            }
            if seen.insert(key) {
                labels.push(tag.to_string());
            }
        }
        labels.sort();
        labels.push(ABSTENTION.to_string());
        let set = LabelSet {
            kind: AttributeKind::Culture,
            labels,
            abstention_label: ABSTENTION.to_string(),
        };
        let culture_canon = self
            .canon
            .get_mut(&AttributeKind::Culture)
            .expect("culture map present");
        for label in set.labels() {
            culture_canon.insert(normalize_key(label), label.clone());
        }
        self.sets.insert(AttributeKind::Culture, set);
        self
    }

    pub fn profile(&self) -> DatasetProfile {
        self.profile
    }

    pub fn label_set(&self, kind: AttributeKind) -> &LabelSet {
        &self.sets[&kind]
    }

    /// The canon entries for a kind (normalized key -> canonical label).
    /// Used by the free-form keyword scanner and the descriptor lexicon
    /// validator.
    pub fn canon_entries(&self, kind: AttributeKind) -> &BTreeMap<String, String> {
        &self.canon[&kind]
    }

    /// Case-fold, trim and separator-normalize `raw`, then look it up.
    /// Empty input maps to the abstention label. Culture falls back to a
    /// normalized pass-through tag instead of `OffTaxonomy`.
    pub fn canonicalize(&self, kind: AttributeKind, raw: &str) -> CanonResult {
        let key = normalize_key(raw);
        if key.is_empty() {
            return CanonResult::Canonical(self.sets[&kind].abstention_label().to_string());
        }
        if let Some(target) = self.canon[&kind].get(&key) {
            return CanonResult::Canonical(target.clone());
        }
        if kind == AttributeKind::Culture {
            return CanonResult::Canonical(key);
        }
        CanonResult::OffTaxonomy(raw.to_string())
    }

    /// True iff `label` is the kind's abstention label. The label must be
    /// canonical; anything else is a contract violation. Culture accepts
    /// any pass-through tag.
    pub fn is_abstention(&self, kind: AttributeKind, label: &str) -> Result<bool, TaxonomyError> {
        let set = &self.sets[&kind];
        if kind != AttributeKind::Culture && !set.contains(label) {
            return Err(TaxonomyError::UnknownLabel {
                kind,
                label: label.to_string(),
            });
        }
        Ok(label == set.abstention_label())
    }
}

fn label_sets_for(profile: DatasetProfile) -> BTreeMap<AttributeKind, LabelSet> {
    let race: &[&str] = match profile {
        DatasetProfile::Diversify => DIVERSIFY_RACE,
        _ => BASE_RACE,
    };
    let religion: &[&str] = match profile {
        DatasetProfile::Professions => PROFESSIONS_RELIGION,
        _ => BASE_RELIGION,
    };
    let disability: &[&str] = match profile {
        DatasetProfile::Diversify => DIVERSIFY_DISABILITY,
        _ => BASE_DISABILITY,
    };
    let mut sets = BTreeMap::new();
    sets.insert(
        AttributeKind::Gender,
        LabelSet::new(AttributeKind::Gender, BASE_GENDER),
    );
    sets.insert(AttributeKind::Race, LabelSet::new(AttributeKind::Race, race));
    sets.insert(AttributeKind::Age, LabelSet::new(AttributeKind::Age, BASE_AGE));
    sets.insert(
        AttributeKind::Religion,
        LabelSet::new(AttributeKind::Religion, religion),
    );
    sets.insert(
        AttributeKind::Culture,
        LabelSet::new(AttributeKind::Culture, &["unspecified"]),
    );
    sets.insert(
        AttributeKind::Disability,
        LabelSet::new(AttributeKind::Disability, disability),
    );
    sets.insert(
        AttributeKind::Profession,
        LabelSet::new(AttributeKind::Profession, PROFESSIONS),
    );
    sets
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indian_folds_to_south_asian() {
        let tax = Taxonomy::for_profile(DatasetProfile::Diversify);
        assert_eq!(
            tax.canonicalize(AttributeKind::Race, "Indian"),
            CanonResult::Canonical("South Asian".into())
        );
    }

    #[test]
    fn abstention_is_identity() {
        let tax = Taxonomy::for_profile(DatasetProfile::Diversify);
        assert_eq!(
            tax.canonicalize(AttributeKind::Gender, "unspecified"),
            CanonResult::Canonical("unspecified".into())
        );
    }

    #[test]
    fn separator_normalization() {
        let tax = Taxonomy::for_profile(DatasetProfile::Diversify);
        assert_eq!(
            tax.canonicalize(AttributeKind::Race, "hispanic/latino"),
            CanonResult::Canonical("Latino_Hispanic".into())
        );
        assert_eq!(
            tax.canonicalize(AttributeKind::Race, "Latino/Hispanic"),
            CanonResult::Canonical("Latino_Hispanic".into())
        );
    }

    #[test]
    fn senior_folds_to_elderly() {
        let tax = Taxonomy::for_profile(DatasetProfile::Professions);
        assert_eq!(
            tax.canonicalize(AttributeKind::Age, "senior"),
            CanonResult::Canonical("elderly".into())
        );
    }

    #[test]
    fn empty_maps_to_abstention() {
        let tax = Taxonomy::for_profile(DatasetProfile::FairFace);
        assert_eq!(
            tax.canonicalize(AttributeKind::Religion, "  "),
            CanonResult::Canonical("unspecified".into())
        );
    }

    #[test]
    fn off_taxonomy_is_not_guessed() {
        let tax = Taxonomy::for_profile(DatasetProfile::FairFace);
        assert_eq!(
            tax.canonicalize(AttributeKind::Race, "Martian"),
            CanonResult::OffTaxonomy("Martian".into())
        );
    }

    #[test]
    fn asian_fold_is_profile_scoped() {
        let face = Taxonomy::for_profile(DatasetProfile::FairCoT);
        assert_eq!(
            face.canonicalize(AttributeKind::Race, "Asian"),
            CanonResult::Canonical("East Asian".into())
        );
        let div = Taxonomy::for_profile(DatasetProfile::Diversify);
        assert_eq!(
            div.canonicalize(AttributeKind::Race, "Asian"),
            CanonResult::OffTaxonomy("Asian".into())
        );
    }

    #[test]
    fn neutral_is_not_abstention() {
        let tax = Taxonomy::for_profile(DatasetProfile::Diversify);
        assert!(!tax.is_abstention(AttributeKind::Religion, "Neutral").unwrap());
        assert!(tax.is_abstention(AttributeKind::Disability, "unspecified").unwrap());
        assert!(!tax.is_abstention(AttributeKind::Profession, "doctor").unwrap());
    }

    #[test]
    fn unknown_canonical_label_is_a_contract_error() {
        let tax = Taxonomy::for_profile(DatasetProfile::Diversify);
        assert!(tax.is_abstention(AttributeKind::Gender, "Male ").is_err());
    }

    #[test]
    fn diversify_race_set_has_nine_labels() {
        let tax = Taxonomy::for_profile(DatasetProfile::Diversify);
        let set = tax.label_set(AttributeKind::Race);
        assert_eq!(set.labels().len(), 9);
        assert!(set.contains("Southeast Asian"));
    }

    #[test]
    fn professions_religion_includes_taoist() {
        let tax = Taxonomy::for_profile(DatasetProfile::Professions);
        assert!(tax.label_set(AttributeKind::Religion).contains("Taoist"));
        assert_eq!(
            tax.canonicalize(AttributeKind::Religion, "Taoist"),
            CanonResult::Canonical("Taoist".into())
        );
        let base = Taxonomy::for_profile(DatasetProfile::FairFace);
        assert!(matches!(
            base.canonicalize(AttributeKind::Religion, "Taoist"),
            CanonResult::OffTaxonomy(_)
        ));
    }

    #[test]
    fn profession_set_has_six_classes() {
        let tax = Taxonomy::for_profile(DatasetProfile::Professions);
        let set = tax.label_set(AttributeKind::Profession);
        let classes: Vec<&str> = set.class_labels().collect();
        assert_eq!(classes, ["doctor", "engineer", "janitor", "lawyer", "nurse", "teacher"]);
    }

    #[test]
    fn diversify_age_set_matches_prompt() {
        let tax = Taxonomy::for_profile(DatasetProfile::Diversify);
        let set = tax.label_set(AttributeKind::Age);
        assert_eq!(
            set.labels(),
            ["child", "young adult", "middle-aged", "elderly", "unspecified"]
        );
    }

    #[test]
    fn fairface_gender_set() {
        let tax = Taxonomy::for_profile(DatasetProfile::FairFace);
        assert_eq!(
            tax.label_set(AttributeKind::Gender).labels(),
            ["male", "female", "unspecified"]
        );
    }

    #[test]
    fn culture_passes_through_normalized() {
        let tax = Taxonomy::for_profile(DatasetProfile::Diversify)
            .with_culture_tags(["Latin American", "West African"]);
        assert_eq!(
            tax.canonicalize(AttributeKind::Culture, "latin american"),
            CanonResult::Canonical("Latin American".into())
        );
        assert_eq!(
            tax.canonicalize(AttributeKind::Culture, "Andean highland"),
            CanonResult::Canonical("andean highland".into())
        );
    }

    #[test]
    fn canonicalize_is_idempotent_over_canon_targets() {
        for profile in DatasetProfile::ALL {
            let tax = Taxonomy::for_profile(profile).with_culture_tags(["British", "Gulf"]);
            for kind in AttributeKind::ALL {
                for (_, target) in tax.canon_entries(kind) {
                    let once = tax.canonicalize(kind, target);
                    let c = once.canonical().expect("canon target maps");
                    assert_eq!(tax.canonicalize(kind, c), once, "{kind}/{target}");
                }
            }
        }
    }

    #[test]
    fn canon_closure_over_all_profiles() {
        for profile in DatasetProfile::ALL {
            let tax = Taxonomy::for_profile(profile);
            for kind in AttributeKind::ALL {
                if kind == AttributeKind::Culture {
                    continue;
                }
                let set = tax.label_set(kind);
                for (key, target) in tax.canon_entries(kind) {
                    assert!(set.contains(target), "{profile}/{kind}: {key} -> {target}");
                }
            }
        }
    }

    #[test]
    fn exactly_one_abstention_per_set() {
        for profile in DatasetProfile::ALL {
            let tax = Taxonomy::for_profile(profile);
            for kind in AttributeKind::ALL {
                let set = tax.label_set(kind);
                let count = set
                    .labels()
                    .iter()
                    .filter(|l| tax.is_abstention(kind, l).unwrap())
                    .count();
                assert_eq!(count, 1, "{profile}/{kind}");
            }
        }
    }

    #[test]
    fn config_rejects_bad_target() {
        let cfg = "Race\tgreen\tMartian\n";
        let err = Taxonomy::for_profile_with_config(DatasetProfile::FairFace, cfg);
        assert!(err.is_err());
    }

    #[test]
    fn config_rejects_conflicting_duplicates() {
        let cfg = "Gender\tdude\tmale\nGender\tdude\tfemale\n";
        assert!(Taxonomy::for_profile_with_config(DatasetProfile::FairFace, cfg).is_err());
    }
}
