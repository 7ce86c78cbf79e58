//! Single-factor counterfactual pairs derived from prompt lineage.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metadata::MetadataRecord;
use super::CorpusError;
use crate::taxonomy::AttributeKind;

/// One prompt with its lineage. Variants reference the prompt they were
/// derived from; the toggled attribute is established from the metadata
/// diff, not trusted from the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub id: String,
    pub text: String,
    pub variant_of: Option<String>,
    /// Root id of the scene family this prompt belongs to.
    pub base_scene: String,
    pub toggled_attribute: Option<AttributeKind>,
}

/// Load `prompts.txt`: one prompt per line, `id<TAB>text[<TAB>variant_of]`.
pub fn load_prompts(path: &Path) -> Result<Vec<PromptSpec>, CorpusError> {
    let err = |reason: String| CorpusError::BadPrompts {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let mut specs = Vec::new();
    let mut parents: BTreeMap<String, Option<String>> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 && cols.len() != 3 {
            return Err(err(format!(
                "line {line_no}: expected `id<TAB>text[<TAB>variant_of]`"
            )));
        }
        let id = cols[0].trim().to_string();
        if id.is_empty() || parents.contains_key(&id) {
            return Err(err(format!("line {line_no}: missing or duplicate id")));
        }
        let variant_of = cols
            .get(2)
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        parents.insert(id.clone(), variant_of.clone());
        specs.push(PromptSpec {
            id,
            text: cols[1].to_string(),
            variant_of,
            base_scene: String::new(),
            toggled_attribute: None,
        });
    }
    // Resolve scene roots by following variant_of links.
    for spec in &mut specs {
        let mut root = spec.id.clone();
        let mut hops = 0;
        while let Some(Some(parent)) = parents.get(&root) {
            root = parent.clone();
            hops += 1;
            if hops > parents.len() {
                return Err(err(format!("lineage cycle at `{}`", spec.id)));
            }
        }
        spec.base_scene = root;
    }
    Ok(specs)
}

/// A pair of records differing in exactly one attribute label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CounterfactualPair {
    pub a: String,
    pub b: String,
    pub toggled: AttributeKind,
}

/// Pair each variant with its base when their metadata differs in exactly
/// one attribute (profession included). Pairs are symmetric (ids stored
/// sorted) and deduplicated; lineage candidates failing the single-diff
/// check are dropped.
pub fn counterfactual_pairs(
    records: &[MetadataRecord],
    lineage: &[PromptSpec],
) -> Vec<CounterfactualPair> {
    let by_id: BTreeMap<&str, &MetadataRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut pairs = BTreeSet::new();
    for spec in lineage {
        let Some(parent) = spec.variant_of.as_deref() else {
            continue;
        };
        let (Some(a), Some(b)) = (by_id.get(spec.id.as_str()), by_id.get(parent)) else {
            continue;
        };
        if let Some(toggled) = single_diff(a, b) {
            let (lo, hi) = if a.id <= b.id {
                (a.id.clone(), b.id.clone())
            } else {
                (b.id.clone(), a.id.clone())
            };
            pairs.insert(CounterfactualPair {
                a: lo,
                b: hi,
                toggled,
            });
        }
    }
    pairs.into_iter().collect()
}

fn single_diff(a: &MetadataRecord, b: &MetadataRecord) -> Option<AttributeKind> {
    let mut toggled = None;
    for kind in AttributeKind::ALL {
        let (va, vb) = if kind == AttributeKind::Profession {
            (a.profession.as_deref(), b.profession.as_deref())
        } else {
            (a.label(kind), b.label(kind))
        };
        if va != vb {
            if toggled.is_some() {
                return None;
            }
            toggled = Some(kind);
        }
    }
    toggled
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::metadata::Split;

    fn rec(id: &str, gender: &str, age: &str) -> MetadataRecord {
        let mut labels = BTreeMap::new();
        labels.insert(AttributeKind::Gender, gender.to_string());
        labels.insert(AttributeKind::Age, age.to_string());
        MetadataRecord {
            id: id.into(),
            labels,
            profession: None,
            split: Split::Unassigned,
            image_digest: None,
        }
    }

    fn spec(id: &str, variant_of: Option<&str>) -> PromptSpec {
        PromptSpec {
            id: id.into(),
            text: String::new(),
            variant_of: variant_of.map(str::to_string),
            base_scene: String::new(),
            toggled_attribute: None,
        }
    }

    #[test]
    fn base_and_gender_variant_pair_once() {
        let records = vec![rec("b1", "male", "elderly"), rec("b1.g", "female", "elderly")];
        let lineage = vec![spec("b1", None), spec("b1.g", Some("b1"))];
        let pairs = counterfactual_pairs(&records, &lineage);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].toggled, AttributeKind::Gender);
        assert_eq!((pairs[0].a.as_str(), pairs[0].b.as_str()), ("b1", "b1.g"));
    }

    #[test]
    fn two_attribute_diffs_are_excluded() {
        let records = vec![rec("b1", "male", "elderly"), rec("b1.x", "female", "child")];
        let lineage = vec![spec("b1", None), spec("b1.x", Some("b1"))];
        assert!(counterfactual_pairs(&records, &lineage).is_empty());
    }

    #[test]
    fn empty_lineage_yields_no_pairs() {
        let records = vec![rec("b1", "male", "elderly"), rec("b2", "female", "elderly")];
        let lineage = vec![spec("b1", None), spec("b2", None)];
        assert!(counterfactual_pairs(&records, &lineage).is_empty());
    }
}
