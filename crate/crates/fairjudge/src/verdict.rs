//! Turn raw judge text into validated, canonical verdicts.
//!
//! Parsers here are total: any byte sequence yields either a verdict or a
//! categorized `Failed` outcome, never a panic. Raw text is taken as-is;
//! no upstream trimming is assumed. Every anomaly is recorded as a
//! [`ParseDefect`] so parser logs capture exactly what happened.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::taxonomy::{AttributeKind, CanonResult, Taxonomy};

/// Parse health, worst-first ordering: Clean < Repaired < FieldDefaulted < Failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParseStatus {
    Clean,
    Repaired,
    FieldDefaulted,
    Failed,
}

impl ParseStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParseStatus::Clean => "clean",
            ParseStatus::Repaired => "repaired",
            ParseStatus::FieldDefaulted => "field-defaulted",
            ParseStatus::Failed => "failed",
        }
    }
}

impl fmt::Display for ParseStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Closed defect taxonomy for parser logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DefectCategory {
    NoJsonFound,
    Malformed,
    MissingKey,
    OffTaxonomy,
    OutOfRange,
    NonIntegerRating,
    ExtraProse,
}

impl DefectCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            DefectCategory::NoJsonFound => "no-json-found",
            DefectCategory::Malformed => "malformed",
            DefectCategory::MissingKey => "missing-key",
            DefectCategory::OffTaxonomy => "off-taxonomy",
            DefectCategory::OutOfRange => "out-of-range",
            DefectCategory::NonIntegerRating => "non-integer-rating",
            DefectCategory::ExtraProse => "extra-prose",
        }
    }
}

impl fmt::Display for DefectCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One logged anomaly; `detail` names the offending field or span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDefect {
    pub category: DefectCategory,
    pub detail: String,
}

impl ParseDefect {
    pub fn new(category: DefectCategory, detail: impl Into<String>) -> Self {
        ParseDefect {
            category,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for ParseDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.category, self.detail)
    }
}

/// Canonical labels for the six judged attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeLabels {
    pub gender: String,
    pub race: String,
    pub age: String,
    pub religion: String,
    pub culture: String,
    pub disability: String,
}

impl AttributeLabels {
    /// Every field set to the profile's abstention label.
    pub fn all_abstention(taxonomy: &Taxonomy) -> Self {
        let abst = |kind: AttributeKind| {
            taxonomy.label_set(kind).abstention_label().to_string()
        };
        AttributeLabels {
            gender: abst(AttributeKind::Gender),
            race: abst(AttributeKind::Race),
            age: abst(AttributeKind::Age),
            religion: abst(AttributeKind::Religion),
            culture: abst(AttributeKind::Culture),
            disability: abst(AttributeKind::Disability),
        }
    }

    pub fn get(&self, kind: AttributeKind) -> &str {
        match kind {
            AttributeKind::Gender => &self.gender,
            AttributeKind::Race => &self.race,
            AttributeKind::Age => &self.age,
            AttributeKind::Religion => &self.religion,
            AttributeKind::Culture => &self.culture,
            AttributeKind::Disability => &self.disability,
            AttributeKind::Profession => panic!("profession is not an attribute-verdict field"),
        }
    }

    pub fn set(&mut self, kind: AttributeKind, value: String) {
        match kind {
            AttributeKind::Gender => self.gender = value,
            AttributeKind::Race => self.race = value,
            AttributeKind::Age => self.age = value,
            AttributeKind::Religion => self.religion = value,
            AttributeKind::Culture => self.culture = value,
            AttributeKind::Disability => self.disability = value,
            AttributeKind::Profession => panic!("profession is not an attribute-verdict field"),
        }
    }

    /// Render to the strict six-key JSON schema, key order as prompted.
    pub fn to_schema_json(&self) -> String {
        let quote = |s: &str| serde_json::to_string(s).expect("string serializes");
        format!(
            "{{\"Gender\": {}, \"Race\": {}, \"Age\": {}, \"Religion\": {}, \"Culture\": {}, \"Disability\": {}}}",
            quote(&self.gender),
            quote(&self.race),
            quote(&self.age),
            quote(&self.religion),
            quote(&self.culture),
            quote(&self.disability),
        )
    }
}

/// One judge's structured answer for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeVerdict {
    /// Canonical labels; `None` iff the parse failed outright.
    pub labels: Option<AttributeLabels>,
    pub rationale_text: Option<String>,
    pub parse_status: ParseStatus,
    pub defects: Vec<ParseDefect>,
}

impl AttributeVerdict {
    pub fn failed(defect: ParseDefect) -> Self {
        AttributeVerdict {
            labels: None,
            rationale_text: None,
            parse_status: ParseStatus::Failed,
            defects: vec![defect],
        }
    }
}

/// Rubric alignment answer. `rating` is in 1..=5 or the status is Failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentVerdict {
    pub rating: Option<u8>,
    pub analysis: String,
    pub parse_status: ParseStatus,
    pub defects: Vec<ParseDefect>,
}

impl AlignmentVerdict {
    pub fn failed(defect: ParseDefect) -> Self {
        AlignmentVerdict {
            rating: None,
            analysis: String::new(),
            parse_status: ParseStatus::Failed,
            defects: vec![defect],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfessionCall {
    Yes,
    No,
    Unspecified,
}

impl ProfessionCall {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProfessionCall::Yes => "yes",
            ProfessionCall::No => "no",
            ProfessionCall::Unspecified => "unspecified",
        }
    }
}

/// Combined profession + alignment answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfessionVerdict {
    pub prediction: Option<ProfessionCall>,
    pub evidence: String,
    pub rating: Option<u8>,
    pub analysis: String,
    pub parse_status: ParseStatus,
    pub defects: Vec<ParseDefect>,
}

impl ProfessionVerdict {
    pub fn failed(defect: ParseDefect) -> Self {
        ProfessionVerdict {
            prediction: None,
            evidence: String::new(),
            rating: None,
            analysis: String::new(),
            parse_status: ParseStatus::Failed,
            defects: vec![defect],
        }
    }
}

/// The object pulled out of a raw reply, plus any packaging defects.
#[derive(Debug, Clone)]
pub struct ExtractedJson {
    pub object: serde_json::Map<String, Value>,
    pub defects: Vec<ParseDefect>,
}

/// Find the first balanced top-level JSON object in `raw`.
///
/// Code fences are stripped first and do not count as prose; anything
/// else outside the chosen object is recorded as `ExtraProse` (including
/// any second object). No balanced object is `NoJsonFound`; a balanced
/// span that is not valid JSON is `Malformed`.
pub fn extract_json(raw: &str) -> Result<ExtractedJson, ParseDefect> {
    let defenced: String = raw
        .lines()
        .filter(|line| !line.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n");

    let Some((start, end)) = first_balanced_object(&defenced) else {
        return Err(ParseDefect::new(
            DefectCategory::NoJsonFound,
            "no balanced top-level object in reply",
        ));
    };
    let span = &defenced[start..=end];
    let value: Value = match serde_json::from_str(span) {
        Ok(v) => v,
        Err(e) => {
            return Err(ParseDefect::new(
                DefectCategory::Malformed,
                format!("balanced span is not valid JSON: {e}"),
            ))
        }
    };
    let Value::Object(object) = value else {
        return Err(ParseDefect::new(
            DefectCategory::Malformed,
            "balanced span did not parse as an object",
        ));
    };

    let mut defects = Vec::new();
    let before = defenced[..start].trim();
    let after = defenced[end + 1..].trim();
    if !before.is_empty() || !after.is_empty() {
        let mut spans = Vec::new();
        if !before.is_empty() {
            spans.push(format!("before object: {}", snippet(before)));
        }
        if !after.is_empty() {
            spans.push(format!("after object: {}", snippet(after)));
        }
        defects.push(ParseDefect::new(DefectCategory::ExtraProse, spans.join("; ")));
    }
    Ok(ExtractedJson { object, defects })
}

fn snippet(s: &str) -> String {
    let mut out: String = s.chars().take(60).collect();
    if s.chars().count() > 60 {
        out.push('…');
    }
    out
}

/// Byte offsets of the first `{ ... }` span balanced outside strings.
fn first_balanced_object(text: &str) -> Option<(usize, usize)> {
    let mut depth = 0usize;
    let mut start = None;
    let mut in_string = false;
    let mut escaped = false;
    for (i, ch) in text.char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_string = false;
            }
            continue;
        }
        match ch {
            '"' if depth > 0 => in_string = true,
            '{' => {
                if depth == 0 {
                    start = Some(i);
                }
                depth += 1;
            }
            '}' => {
                if depth > 0 {
                    depth -= 1;
                    if depth == 0 {
                        return Some((start.expect("start set when depth>0"), i));
                    }
                }
            }
            _ => {}
        }
    }
    None
}

struct StatusTracker {
    worst: ParseStatus,
    defects: Vec<ParseDefect>,
}

impl StatusTracker {
    fn new(initial_defects: Vec<ParseDefect>) -> Self {
        let worst = if initial_defects.is_empty() {
            ParseStatus::Clean
        } else {
            ParseStatus::Repaired
        };
        StatusTracker {
            worst,
            defects: initial_defects,
        }
    }

    fn record(&mut self, severity: ParseStatus, defect: ParseDefect) {
        self.worst = self.worst.max(severity);
        self.defects.push(defect);
    }
}

/// Exact-key lookup with a single case-insensitive fallback pass. The
/// fallback repairs the verdict rather than failing it.
fn lookup_key<'a>(
    object: &'a serde_json::Map<String, Value>,
    key: &str,
    tracker: &mut StatusTracker,
) -> Option<&'a Value> {
    if let Some(v) = object.get(key) {
        return Some(v);
    }
    for (k, v) in object {
        if k.eq_ignore_ascii_case(key) {
            tracker.record(
                ParseStatus::Repaired,
                ParseDefect::new(
                    DefectCategory::MissingKey,
                    format!("{key}: exact key absent, matched `{k}` case-insensitively"),
                ),
            );
            return Some(v);
        }
    }
    None
}

fn value_as_label(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Null | Value::Array(_) | Value::Object(_) => None,
    }
}

const ATTRIBUTE_KEYS: [&str; 6] = ["Gender", "Race", "Age", "Religion", "Culture", "Disability"];
const RATIONALE_HINTS: [&str; 5] = ["rationale", "evidence", "reason", "analysis", "explanation"];

/// Parse a six-field attribute reply. Missing keys default to abstention;
/// off-taxonomy values are replaced by abstention; every anomaly is a
/// defect and the verdict status is the worst one seen.
pub fn parse_attribute_verdict(raw: &str, taxonomy: &Taxonomy) -> AttributeVerdict {
    let extracted = match extract_json(raw) {
        Ok(e) => e,
        Err(defect) => return AttributeVerdict::failed(defect),
    };
    let mut tracker = StatusTracker::new(extracted.defects);
    let object = extracted.object;
    let mut labels = AttributeLabels::all_abstention(taxonomy);

    for (kind, key) in AttributeKind::JUDGED.into_iter().zip(ATTRIBUTE_KEYS) {
        let Some(value) = lookup_key(&object, key, &mut tracker) else {
            tracker.record(
                ParseStatus::FieldDefaulted,
                ParseDefect::new(
                    DefectCategory::MissingKey,
                    format!("{key}: missing, defaulted to abstention"),
                ),
            );
            continue;
        };
        let Some(text) = value_as_label(value) else {
            tracker.record(
                ParseStatus::FieldDefaulted,
                ParseDefect::new(
                    DefectCategory::OffTaxonomy,
                    format!("{key}: non-string value `{value}`, defaulted to abstention"),
                ),
            );
            continue;
        };
        match taxonomy.canonicalize(kind, &text) {
            CanonResult::Canonical(canonical) => labels.set(kind, canonical),
            CanonResult::OffTaxonomy(raw_label) => {
                tracker.record(
                    ParseStatus::FieldDefaulted,
                    ParseDefect::new(
                        DefectCategory::OffTaxonomy,
                        format!("{key}: `{raw_label}` is outside the taxonomy, defaulted to abstention"),
                    ),
                );
            }
        }
    }

    let mut rationale_parts = Vec::new();
    for (k, v) in &object {
        if ATTRIBUTE_KEYS.iter().any(|key| k.eq_ignore_ascii_case(key)) {
            continue;
        }
        let k_lower = k.to_lowercase();
        if RATIONALE_HINTS.iter().any(|h| k_lower.contains(h)) {
            if let Some(text) = value_as_label(v) {
                rationale_parts.push(text);
            }
        }
    }
    let rationale_text = if rationale_parts.is_empty() {
        None
    } else {
        Some(rationale_parts.join("\n"))
    };

    AttributeVerdict {
        labels: Some(labels),
        rationale_text,
        parse_status: tracker.worst,
        defects: tracker.defects,
    }
}

enum RatingOutcome {
    Ok(u8),
    Defect(ParseDefect),
}

/// Accept an integer or numeric-string rating; 1..=5 inclusive.
fn parse_rating(value: &Value, key: &str) -> RatingOutcome {
    let number: Option<i64> = match value {
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Some(i)
            } else {
                n.as_f64().and_then(|f| {
                    if f.fract() == 0.0 && f.abs() < i64::MAX as f64 {
                        Some(f as i64)
                    } else {
                        None
                    }
                })
            }
        }
        Value::String(s) => {
            let t = s.trim();
            if let Ok(i) = t.parse::<i64>() {
                Some(i)
            } else {
                match t.parse::<f64>() {
                    Ok(f) if f.is_finite() && f.fract() == 0.0 && f.abs() < i64::MAX as f64 => {
                        Some(f as i64)
                    }
                    _ => None,
                }
            }
        }
        _ => None,
    };
    match number {
        None => RatingOutcome::Defect(ParseDefect::new(
            DefectCategory::NonIntegerRating,
            format!("{key}: `{value}` is not an integer rating"),
        )),
        Some(r) if (1..=5).contains(&r) => RatingOutcome::Ok(r as u8),
        Some(r) => RatingOutcome::Defect(ParseDefect::new(
            DefectCategory::OutOfRange,
            format!("{key}: rating {r} outside 1..=5"),
        )),
    }
}

fn string_field(
    object: &serde_json::Map<String, Value>,
    key: &str,
    tracker: &mut StatusTracker,
) -> String {
    match lookup_key(object, key, tracker) {
        Some(v) => match value_as_label(v) {
            Some(s) => s,
            None => {
                tracker.record(
                    ParseStatus::FieldDefaulted,
                    ParseDefect::new(
                        DefectCategory::OffTaxonomy,
                        format!("{key}: non-string value, defaulted to empty"),
                    ),
                );
                String::new()
            }
        },
        None => {
            tracker.record(
                ParseStatus::FieldDefaulted,
                ParseDefect::new(DefectCategory::MissingKey, format!("{key}: missing")),
            );
            String::new()
        }
    }
}

/// Parse a rubric alignment reply.
pub fn parse_alignment_verdict(raw: &str) -> AlignmentVerdict {
    let extracted = match extract_json(raw) {
        Ok(e) => e,
        Err(defect) => return AlignmentVerdict::failed(defect),
    };
    let mut tracker = StatusTracker::new(extracted.defects);
    let object = extracted.object;

    let analysis = string_field(&object, "Alignment analysis", &mut tracker);

    let rating = match lookup_key(&object, "Alignment score", &mut tracker) {
        None => {
            tracker.record(
                ParseStatus::Failed,
                ParseDefect::new(DefectCategory::MissingKey, "Alignment score: missing"),
            );
            None
        }
        Some(v) => match parse_rating(v, "Alignment score") {
            RatingOutcome::Ok(r) => Some(r),
            RatingOutcome::Defect(d) => {
                tracker.record(ParseStatus::Failed, d);
                None
            }
        },
    };

    AlignmentVerdict {
        rating,
        analysis,
        parse_status: tracker.worst,
        defects: tracker.defects,
    }
}

/// Parse a combined profession + alignment reply. An unknown prediction
/// token fails the verdict; a failed verdict carries neither prediction
/// nor rating.
pub fn parse_profession_verdict(raw: &str) -> ProfessionVerdict {
    let extracted = match extract_json(raw) {
        Ok(e) => e,
        Err(defect) => return ProfessionVerdict::failed(defect),
    };
    let mut tracker = StatusTracker::new(extracted.defects);
    let object = extracted.object;

    let mut prediction = match lookup_key(&object, "Profession prediction", &mut tracker) {
        None => {
            tracker.record(
                ParseStatus::Failed,
                ParseDefect::new(DefectCategory::MissingKey, "Profession prediction: missing"),
            );
            None
        }
        Some(v) => match value_as_label(v).as_deref().map(str::trim).map(str::to_lowercase) {
            Some(token) if token == "yes" => Some(ProfessionCall::Yes),
            Some(token) if token == "no" => Some(ProfessionCall::No),
            Some(token) if token == "unspecified" => Some(ProfessionCall::Unspecified),
            other => {
                tracker.record(
                    ParseStatus::Failed,
                    ParseDefect::new(
                        DefectCategory::OffTaxonomy,
                        format!(
                            "Profession prediction: `{}` is not yes|no|unspecified",
                            other.unwrap_or_else(|| "<non-string>".into())
                        ),
                    ),
                );
                None
            }
        },
    };

    let evidence = string_field(&object, "Prediction evidence", &mut tracker);
    let analysis = string_field(&object, "Alignment analysis", &mut tracker);

    let mut rating = match lookup_key(&object, "Alignment score", &mut tracker) {
        None => {
            tracker.record(
                ParseStatus::Failed,
                ParseDefect::new(DefectCategory::MissingKey, "Alignment score: missing"),
            );
            None
        }
        Some(v) => match parse_rating(v, "Alignment score") {
            RatingOutcome::Ok(r) => Some(r),
            RatingOutcome::Defect(d) => {
                tracker.record(ParseStatus::Failed, d);
                None
            }
        },
    };

    if tracker.worst == ParseStatus::Failed {
        prediction = None;
        rating = None;
    }

    ProfessionVerdict {
        prediction,
        evidence,
        rating,
        analysis,
        parse_status: tracker.worst,
        defects: tracker.defects,
    }
}

/// Keyword scanner for the without-labels ablation: matches canon-map
/// entries in prose, per attribute, with word boundaries and longest-first
/// preference. Deliberately demonstrates taxonomy drift rather than
/// repairing it.
pub struct FreeformScanner {
    per_kind: BTreeMap<AttributeKind, KindScanner>,
}

struct KindScanner {
    regex: regex::Regex,
    by_key: BTreeMap<String, String>,
}

impl FreeformScanner {
    pub fn new(taxonomy: &Taxonomy) -> FreeformScanner {
        let mut per_kind = BTreeMap::new();
        for kind in AttributeKind::JUDGED {
            let entries = taxonomy.canon_entries(kind);
            let mut keys: Vec<&String> = entries.keys().collect();
            // Longest first so "young adult" wins over "young".
            keys.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()).then(a.cmp(b)));
            let alternation = keys
                .iter()
                .map(|k| {
                    k.split(' ')
                        .map(|tok| regex::escape(tok))
                        .collect::<Vec<_>>()
                        .join(r"[\s/_\-]+")
                })
                .collect::<Vec<_>>()
                .join("|");
            let pattern = format!(r"\b(?:{alternation})\b");
            let regex = regex::RegexBuilder::new(&pattern)
                .case_insensitive(true)
                .build()
                .expect("canon keys build a valid pattern");
            per_kind.insert(
                kind,
                KindScanner {
                    regex,
                    by_key: entries.clone(),
                },
            );
        }
        FreeformScanner { per_kind }
    }

    /// Best-effort scan of free-form prose. Zero hits or conflicting hits
    /// for an attribute yield abstention plus a defect.
    pub fn parse(&self, raw: &str, taxonomy: &Taxonomy) -> AttributeVerdict {
        let mut tracker = StatusTracker::new(Vec::new());
        let mut labels = AttributeLabels::all_abstention(taxonomy);

        for kind in AttributeKind::JUDGED {
            let scanner = &self.per_kind[&kind];
            let mut targets: Vec<String> = Vec::new();
            for m in scanner.regex.find_iter(raw) {
                let key = crate::taxonomy::normalize_key(m.as_str());
                if let Some(target) = scanner.by_key.get(&key) {
                    if !targets.contains(target) {
                        targets.push(target.clone());
                    }
                }
            }
            match targets.len() {
                0 => tracker.record(
                    ParseStatus::FieldDefaulted,
                    ParseDefect::new(
                        DefectCategory::MissingKey,
                        format!("{kind}: no taxonomy mention in prose"),
                    ),
                ),
                1 => labels.set(kind, targets.remove(0)),
                _ => tracker.record(
                    ParseStatus::FieldDefaulted,
                    ParseDefect::new(
                        DefectCategory::OffTaxonomy,
                        format!("{kind}: conflicting mentions {}", targets.join(", ")),
                    ),
                ),
            }
        }

        AttributeVerdict {
            labels: Some(labels),
            rationale_text: None,
            parse_status: tracker.worst,
            defects: tracker.defects,
        }
    }
}

/// Convenience wrapper; builds a scanner per call. Hold a
/// [`FreeformScanner`] when parsing many replies.
pub fn parse_freeform_attribute(raw: &str, taxonomy: &Taxonomy) -> AttributeVerdict {
    FreeformScanner::new(taxonomy).parse(raw, taxonomy)
}
