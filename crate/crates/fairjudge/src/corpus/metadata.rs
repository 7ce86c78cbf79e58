//! Per-image ground-truth records and their delimited-text form.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::taxonomy::{AttributeKind, CanonResult, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Dev,
    Test,
    Unassigned,
}

impl Split {
    pub const ASSIGNED: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "dev" => Some(Split::Dev),
            "test" => Some(Split::Test),
            "" | "unassigned" => Some(Split::Unassigned),
            _ => None,
        }
    }
}

/// One dataset item: canonical labels derived from prompt text, plus an
/// optional profession, split tag, and image digest.
///
/// A label of `None` means the dataset does not annotate that attribute
/// at all (the metadata file lacks the column); an explicit abstention
/// label means "annotated as unspecified" and stays scoreable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub id: String,
    pub labels: BTreeMap<AttributeKind, String>,
    pub profession: Option<String>,
    pub split: Split,
    pub image_digest: Option<String>,
}

impl MetadataRecord {
    pub fn label(&self, kind: AttributeKind) -> Option<&str> {
        self.labels.get(&kind).map(String::as_str)
    }
}

const COLUMNS: [(&str, AttributeKind); 6] = [
    ("gender", AttributeKind::Gender),
    ("race", AttributeKind::Race),
    ("age_group", AttributeKind::Age),
    ("religion", AttributeKind::Religion),
    ("culture", AttributeKind::Culture),
    ("disability", AttributeKind::Disability),
];

/// Load a metadata CSV with the datasheet column set
/// (`id, profession, gender, race, age_group, religion, culture,
/// disability, split, image_digest`); attribute columns may be absent.
/// Cells are canonicalized on load; an off-taxonomy gold label is a data
/// error.
pub fn load_metadata(path: &Path, taxonomy: &Taxonomy) -> Result<Vec<MetadataRecord>, CorpusError> {
    let data_err = |reason: String| CorpusError::BadMetadata {
        path: path.display().to_string(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| data_err(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| data_err(e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name || (name == "age_group" && h == "age"));
    let Some(id_col) = col("id") else {
        return Err(data_err("missing `id` column".into()));
    };
    let profession_col = col("profession");
    let split_col = col("split");
    let digest_col = col("image_digest");
    let attr_cols: Vec<(usize, AttributeKind)> = COLUMNS
        .iter()
        .filter_map(|(name, kind)| col(name).map(|i| (i, *kind)))
        .collect();

    let mut records = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row.map_err(|e| data_err(e.to_string()))?;
        let line = idx + 2;
        let id = row.get(id_col).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(data_err(format!("row {line}: empty id")));
        }
        if !seen.insert(id.clone()) {
            return Err(data_err(format!("row {line}: duplicate id `{id}`")));
        }
        let mut labels = BTreeMap::new();
        for &(i, kind) in &attr_cols {
            let cell = row.get(i).unwrap_or("").trim();
            match taxonomy.canonicalize(kind, cell) {
                CanonResult::Canonical(c) => {
                    labels.insert(kind, c);
                }
                CanonResult::OffTaxonomy(raw) => {
                    return Err(data_err(format!(
                        "row {line}: {kind} label `{raw}` is off-taxonomy for {}",
                        taxonomy.profile()
                    )));
                }
            }
        }
        let profession = match profession_col.map(|i| row.get(i).unwrap_or("").trim()) {
            None | Some("") => None,
            Some(cell) => match taxonomy.canonicalize(AttributeKind::Profession, cell) {
                CanonResult::Canonical(c) => Some(c),
                CanonResult::OffTaxonomy(raw) => {
                    return Err(data_err(format!(
                        "row {line}: profession `{raw}` is off-taxonomy"
                    )));
                }
            },
        };
        let split = match split_col.map(|i| row.get(i).unwrap_or("").trim()) {
            None => Split::Unassigned,
            Some(cell) => Split::parse(cell)
                .ok_or_else(|| data_err(format!("row {line}: bad split `{cell}`")))?,
        };
        let image_digest = digest_col
            .map(|i| row.get(i).unwrap_or("").trim())
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        records.push(MetadataRecord {
            id,
            labels,
            profession,
            split,
            image_digest,
        });
    }
    if records.is_empty() {
        return Err(data_err("no rows".into()));
    }
    Ok(records)
}

/// Write records back out with the full column set.
pub fn save_metadata(records: &[MetadataRecord], path: &Path) -> Result<(), CorpusError> {
    let io_err = |source: std::io::Error| CorpusError::MetadataIo {
        path: path.display().to_string(),
        source,
    };
    let mut out = String::new();
    out.push_str("id,profession,gender,race,age_group,religion,culture,disability,split,image_digest\n");
    for record in records {
        let cell = |kind| record.label(kind).unwrap_or("");
        let fields = [
            record.id.as_str(),
            record.profession.as_deref().unwrap_or(""),
            cell(AttributeKind::Gender),
            cell(AttributeKind::Race),
            cell(AttributeKind::Age),
            cell(AttributeKind::Religion),
            cell(AttributeKind::Culture),
            cell(AttributeKind::Disability),
            record.split.as_str(),
            record.image_digest.as_deref().unwrap_or(""),
        ];
        let row: Vec<String> = fields.iter().map(|f| csv_escape(f)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io_err)
}

fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}
