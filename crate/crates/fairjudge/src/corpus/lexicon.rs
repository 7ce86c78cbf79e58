//! Deterministic prompt-text label parsing.
//!
//! The descriptor lexicon is the single source of truth: a record carries
//! a label only when an explicit lexicon phrase matched the prompt, with
//! word boundaries and longest-match-first preference. Two different
//! labels for one single-label attribute reject the prompt.

use std::collections::BTreeMap;

use super::metadata::{MetadataRecord, Split};
use super::CorpusError;
use crate::taxonomy::{normalize_key, AttributeKind, Taxonomy};

const DEFAULT_LEXICON_TSV: &str = include_str!("../../data/descriptor_lexicon.tsv");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedPrompt {
    pub id: String,
    pub reason: String,
}

/// Descriptor phrase -> (attribute, canonical label) table with a single
/// compiled matcher.
#[derive(Debug)]
pub struct DescriptorLexicon {
    by_key: BTreeMap<String, (AttributeKind, String)>,
    matcher: regex::Regex,
}

impl DescriptorLexicon {
    pub fn builtin() -> DescriptorLexicon {
        DescriptorLexicon::from_config(DEFAULT_LEXICON_TSV).expect("embedded lexicon is valid")
    }

    /// Parse `kind<TAB>phrase<TAB>canonical` lines (`#` comments).
    pub fn from_config(config: &str) -> Result<DescriptorLexicon, CorpusError> {
        let mut by_key = BTreeMap::new();
        for (idx, line) in config.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(CorpusError::BadLexicon {
                    line: line_no,
                    reason: format!("expected 3 columns, got {}", cols.len()),
                });
            }
            let kind = AttributeKind::parse(cols[0]).ok_or_else(|| CorpusError::BadLexicon {
                line: line_no,
                reason: format!("unknown attribute kind `{}`", cols[0]),
            })?;
            let key = normalize_key(cols[1]);
            if key.is_empty() {
                return Err(CorpusError::BadLexicon {
                    line: line_no,
                    reason: "phrase normalizes to empty".into(),
                });
            }
            let target = cols[2].trim().to_string();
            if let Some((prev_kind, prev)) = by_key.get(&key) {
                if (*prev_kind, prev.as_str()) != (kind, target.as_str()) {
                    return Err(CorpusError::BadLexicon {
                        line: line_no,
                        reason: format!("phrase `{key}` already maps to {prev_kind}/{prev}"),
                    });
                }
            }
            by_key.insert(key, (kind, target));
        }
        let mut keys: Vec<&String> = by_key.keys().collect();
        keys.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()).then(a.cmp(b)));
        let alternation = keys
            .iter()
            .map(|k| {
                k.split(' ')
                    .map(regex::escape)
                    .collect::<Vec<_>>()
                    .join(r"[\s/_\-]+")
            })
            .collect::<Vec<_>>()
            .join("|");
        let matcher = regex::RegexBuilder::new(&format!(r"\b(?:{alternation})\b"))
            .case_insensitive(true)
            .build()
            .map_err(|e| CorpusError::BadLexicon {
                line: 0,
                reason: format!("matcher failed to compile: {e}"),
            })?;
        Ok(DescriptorLexicon { by_key, matcher })
    }

    fn lookup(&self, matched: &str) -> Option<&(AttributeKind, String)> {
        self.by_key.get(&normalize_key(matched))
    }
}

/// Parse one prompt into a metadata record. Exactly one label per
/// single-label attribute; absent descriptors map to the abstention
/// label; contradictory descriptors reject the prompt with a reason.
pub fn parse_prompt_labels(
    id: &str,
    text: &str,
    taxonomy: &Taxonomy,
    lexicon: &DescriptorLexicon,
) -> Result<MetadataRecord, String> {
    let mut hits: BTreeMap<AttributeKind, Vec<String>> = BTreeMap::new();
    for m in lexicon.matcher.find_iter(text) {
        if let Some((kind, label)) = lexicon.lookup(m.as_str()) {
            let bucket = hits.entry(*kind).or_default();
            if !bucket.contains(label) {
                bucket.push(label.clone());
            }
        }
    }

    let mut labels = BTreeMap::new();
    for kind in AttributeKind::JUDGED {
        let abstention = taxonomy.label_set(kind).abstention_label().to_string();
        match hits.get(&kind).map(Vec::as_slice) {
            None | Some([]) => {
                labels.insert(kind, abstention);
            }
            Some([one]) => {
                if kind != AttributeKind::Culture && !taxonomy.label_set(kind).contains(one) {
                    return Err(format!(
                        "{kind} descriptor `{one}` is not representable in the {} profile",
                        taxonomy.profile()
                    ));
                }
                labels.insert(kind, one.clone());
            }
            Some(many) => {
                return Err(format!(
                    "conflicting {kind} descriptors: {}",
                    many.join(", ")
                ));
            }
        }
    }

    let profession = match hits.get(&AttributeKind::Profession).map(Vec::as_slice) {
        None | Some([]) => None,
        Some([one]) => Some(one.clone()),
        Some(many) => {
            return Err(format!(
                "conflicting Profession descriptors: {}",
                many.join(", ")
            ));
        }
    };

    Ok(MetadataRecord {
        id: id.to_string(),
        labels,
        profession,
        split: Split::Unassigned,
        image_digest: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::DatasetProfile;

    fn tax() -> Taxonomy {
        Taxonomy::for_profile(DatasetProfile::Professions)
    }

    #[test]
    fn spec_prompt_parses_fully() {
        let lex = DescriptorLexicon::builtin();
        let rec = parse_prompt_labels(
            "p1",
            "a middle-aged South Asian male Sikh teacher in a classroom",
            &tax(),
            &lex,
        )
        .unwrap();
        assert_eq!(rec.label(AttributeKind::Gender), Some("male"));
        assert_eq!(rec.label(AttributeKind::Race), Some("South Asian"));
        assert_eq!(rec.label(AttributeKind::Age), Some("middle-aged"));
        assert_eq!(rec.label(AttributeKind::Religion), Some("Sikh"));
        assert_eq!(rec.label(AttributeKind::Culture), Some("unspecified"));
        assert_eq!(rec.label(AttributeKind::Disability), Some("unspecified"));
        assert_eq!(rec.profession.as_deref(), Some("teacher"));
    }

    #[test]
    fn bare_prompt_is_all_unspecified() {
        let lex = DescriptorLexicon::builtin();
        let rec = parse_prompt_labels("p2", "a person at a market", &tax(), &lex).unwrap();
        for kind in AttributeKind::JUDGED {
            assert_eq!(rec.label(kind), Some("unspecified"), "{kind}");
        }
        assert_eq!(rec.profession, None);
    }

    #[test]
    fn gender_conflict_rejects() {
        let lex = DescriptorLexicon::builtin();
        let err = parse_prompt_labels("p3", "a male and female doctor", &tax(), &lex).unwrap_err();
        assert!(err.contains("Gender"));
    }

    #[test]
    fn symbol_descriptors_are_explicit_entries() {
        let lex = DescriptorLexicon::builtin();
        let rec = parse_prompt_labels("p4", "a woman wearing a hijab at a library", &tax(), &lex)
            .unwrap();
        assert_eq!(rec.label(AttributeKind::Religion), Some("Muslim"));
        assert_eq!(rec.label(AttributeKind::Gender), Some("female"));
    }

    #[test]
    fn longest_match_wins_over_prefix() {
        let lex = DescriptorLexicon::builtin();
        let rec = parse_prompt_labels(
            "p5",
            "a young adult janitor in southeast asian attire",
            &tax(),
            &lex,
        )
        .unwrap();
        assert_eq!(rec.label(AttributeKind::Age), Some("young adult"));
        assert_eq!(rec.label(AttributeKind::Culture), Some("Southeast Asian"));
        assert_eq!(rec.label(AttributeKind::Race), Some("unspecified"));
    }

    #[test]
    fn repeated_same_descriptor_is_not_a_conflict() {
        let lex = DescriptorLexicon::builtin();
        let rec =
            parse_prompt_labels("p6", "a teacher, yes a teacher, reading", &tax(), &lex).unwrap();
        assert_eq!(rec.profession.as_deref(), Some("teacher"));
    }

    #[test]
    fn out_of_profile_descriptor_rejects() {
        let lex = DescriptorLexicon::builtin();
        // Southeast Asian race exists only in the DIVERSIFY vocabulary.
        let err = parse_prompt_labels("p7", "a southeast asian engineer", &tax(), &lex).unwrap_err();
        assert!(err.contains("Race"));
        let div = Taxonomy::for_profile(DatasetProfile::Diversify);
        assert!(parse_prompt_labels("p7", "a southeast asian engineer", &div, &lex).is_ok());
    }
}
