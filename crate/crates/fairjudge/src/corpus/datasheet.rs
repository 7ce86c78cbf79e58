//! Datasheet tables: count and one-decimal percent per label, per
//! attribute, mirroring the release documentation layout.

use serde::{Deserialize, Serialize};

use super::metadata::MetadataRecord;
use crate::taxonomy::{AttributeKind, Taxonomy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasheetRow {
    pub label: String,
    pub count: u64,
    pub percent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasheetTable {
    pub kind: AttributeKind,
    pub n: u64,
    pub rows: Vec<DatasheetRow>,
    /// Set when column counts do not sum to N; the emitter reports the
    /// mismatch instead of resolving it.
    pub note: Option<String>,
}

impl DatasheetTable {
    pub fn count_for(&self, label: &str) -> Option<u64> {
        self.rows.iter().find(|r| r.label == label).map(|r| r.count)
    }

    pub fn percent_for(&self, label: &str) -> Option<&str> {
        self.rows
            .iter()
            .find(|r| r.label == label)
            .map(|r| r.percent.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Datasheet {
    pub n: u64,
    pub tables: Vec<DatasheetTable>,
}

impl Datasheet {
    pub fn table(&self, kind: AttributeKind) -> Option<&DatasheetTable> {
        self.tables.iter().find(|t| t.kind == kind)
    }

    /// Human-readable rendering, one block per attribute.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for table in &self.tables {
            out.push_str(&format!("{} distribution (N={})\n", table.kind, self.n));
            for row in &table.rows {
                out.push_str(&format!("  {}\t{}\t{}\n", row.label, row.count, row.percent));
            }
            if let Some(note) = &table.note {
                out.push_str(&format!("  note: {note}\n"));
            }
            out.push('\n');
        }
        out
    }

    /// Machine-readable counts.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("attribute\tlabel\tcount\tpercent\n");
        for table in &self.tables {
            for row in &table.rows {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    table.kind, row.label, row.count, row.percent
                ));
            }
        }
        out
    }
}

/// Percent with one decimal, rounded half-up, rendered like "49.9%".
pub fn percent_half_up(count: u64, n: u64) -> String {
    if n == 0 {
        return "0.0%".to_string();
    }
    // tenths of a percent, exact integer arithmetic, half-up
    let numerator = count as u128 * 1000;
    let tenths = numerator / n as u128 + u128::from(2 * (numerator % n as u128) >= n as u128);
    format!("{}.{}%", tenths / 10, tenths % 10)
}

/// Build count tables for every annotated attribute plus profession.
/// Closed vocabularies list every label (zero counts included) in set
/// order; culture lists observed tags by descending count.
pub fn emit_datasheet(records: &[MetadataRecord], taxonomy: &Taxonomy) -> Datasheet {
    let n = records.len() as u64;
    let mut tables = Vec::new();

    for kind in AttributeKind::ALL {
        let values: Vec<&str> = records
            .iter()
            .filter_map(|r| {
                if kind == AttributeKind::Profession {
                    r.profession.as_deref()
                } else {
                    r.label(kind)
                }
            })
            .collect();
        if values.is_empty() {
            continue;
        }

        let mut rows = Vec::new();
        if kind == AttributeKind::Culture {
            let mut counts: std::collections::BTreeMap<&str, u64> = Default::default();
            for v in &values {
                *counts.entry(v).or_default() += 1;
            }
            let mut pairs: Vec<(&str, u64)> = counts.into_iter().collect();
            pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            for (label, count) in pairs {
                rows.push(DatasheetRow {
                    label: label.to_string(),
                    count,
                    percent: percent_half_up(count, n),
                });
            }
        } else {
            let set = taxonomy.label_set(kind);
            for label in set.labels() {
                let count = values.iter().filter(|v| *v == label).count() as u64;
                rows.push(DatasheetRow {
                    label: label.clone(),
                    count,
                    percent: percent_half_up(count, n),
                });
            }
        }

        let sum: u64 = rows.iter().map(|r| r.count).sum();
        let annotated = values.len() as u64;
        let mut note = None;
        if sum != annotated {
            note = Some(format!("counts sum to {sum}, not the {annotated} annotated rows"));
        } else if annotated != n {
            note = Some(format!("{annotated} of {n} records annotate {kind}"));
        }
        tables.push(DatasheetTable {
            kind,
            n,
            rows,
            note,
        });
    }

    Datasheet { n, tables }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::metadata::Split;
    use crate::taxonomy::DatasetProfile;
    use std::collections::BTreeMap;

    #[test]
    fn percent_rounds_half_up() {
        assert_eq!(percent_half_up(234, 469), "49.9%");
        assert_eq!(percent_half_up(235, 469), "50.1%");
        assert_eq!(percent_half_up(130, 469), "27.7%");
        assert_eq!(percent_half_up(409, 469), "87.2%");
        assert_eq!(percent_half_up(200, 1200), "16.7%");
        // exact .75 rounds up
        assert_eq!(percent_half_up(9, 1200), "0.8%");
        assert_eq!(percent_half_up(0, 469), "0.0%");
    }

    #[test]
    fn closed_sets_show_zero_count_labels() {
        let tax = Taxonomy::for_profile(DatasetProfile::Diversify);
        let mut labels = BTreeMap::new();
        labels.insert(AttributeKind::Gender, "male".to_string());
        let records = vec![MetadataRecord {
            id: "a".into(),
            labels,
            profession: None,
            split: Split::Unassigned,
            image_digest: None,
        }];
        let sheet = emit_datasheet(&records, &tax);
        let gender = sheet.table(AttributeKind::Gender).unwrap();
        assert_eq!(gender.count_for("male"), Some(1));
        assert_eq!(gender.count_for("female"), Some(0));
        assert_eq!(gender.count_for("unspecified"), Some(0));
    }

    #[test]
    fn culture_orders_by_descending_count() {
        let tax = Taxonomy::for_profile(DatasetProfile::Diversify)
            .with_culture_tags(["Gulf", "British"]);
        let mk = |id: &str, culture: &str| {
            let mut labels = BTreeMap::new();
            labels.insert(AttributeKind::Culture, culture.to_string());
            MetadataRecord {
                id: id.into(),
                labels,
                profession: None,
                split: Split::Unassigned,
                image_digest: None,
            }
        };
        let records = vec![mk("a", "Gulf"), mk("b", "Gulf"), mk("c", "British")];
        let sheet = emit_datasheet(&records, &tax);
        let culture = sheet.table(AttributeKind::Culture).unwrap();
        assert_eq!(culture.rows[0].label, "Gulf");
        assert_eq!(culture.rows[0].count, 2);
    }
}
