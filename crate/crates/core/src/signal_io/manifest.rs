use super::SignalError;
use crate::screen::{AgeGroup, DemographicRecord, Sex};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

/// Column order used when writing; reading accepts any order.
pub const MANIFEST_COLUMNS: [&str; 9] = [
    "path",
    "quality_score",
    "outcome_label",
    "sex",
    "age_group",
    "height_cm",
    "weight_kg",
    "pregnant",
    "split_tag",
];

const DEMOGRAPHIC_COLUMNS: [&str; 5] = ["sex", "age_group", "height_cm", "weight_kg", "pregnant"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeLabel {
    Normal,
    Abnormal,
}

impl OutcomeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeLabel::Normal => "normal",
            OutcomeLabel::Abnormal => "abnormal",
        }
    }

    /// Class index used by the screening models (abnormal is the positive class).
    pub fn class_index(self) -> u8 {
        match self {
            OutcomeLabel::Normal => 0,
            OutcomeLabel::Abnormal => 1,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Some(OutcomeLabel::Normal),
            "abnormal" => Some(OutcomeLabel::Abnormal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub path: String,
    pub quality_score: Option<u8>,
    pub outcome: Option<OutcomeLabel>,
    pub demographics: DemographicRecord,
    pub split_tag: Option<String>,
}

impl ManifestRow {
    pub fn new(path: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            quality_score: None,
            outcome: None,
            demographics: DemographicRecord::default(),
            split_tag: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Directory relative paths are resolved against (the manifest's own directory).
    pub base_dir: PathBuf,
    /// Whether the source file carried any demographic column.
    pub has_demographics: bool,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>, base_dir: impl Into<PathBuf>) -> Result<Self, SignalError> {
        let m = Self {
            rows,
            base_dir: base_dir.into(),
            has_demographics: true,
        };
        m.check_unique()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Same base directory and flags, different rows.
    pub fn with_rows(&self, rows: Vec<ManifestRow>) -> Self {
        Self {
            rows,
            base_dir: self.base_dir.clone(),
            has_demographics: self.has_demographics,
        }
    }

    fn check_unique(&self) -> Result<(), SignalError> {
        let mut seen = HashSet::new();
        for r in &self.rows {
            if !seen.insert(r.path.as_str()) {
                return Err(SignalError::DuplicatePath(r.path.clone()));
            }
        }
        Ok(())
    }
}

fn bad(row: usize, column: &str, value: &str) -> SignalError {
    SignalError::BadLabel {
        row,
        column: column.to_string(),
        value: value.to_string(),
    }
}

fn parse_positive(row: usize, column: &str, v: &str) -> Result<Option<f64>, SignalError> {
    if v.is_empty() || v.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() && x > 0.0 => Ok(Some(x)),
        _ => Err(bad(row, column, v)),
    }
}

/// Reads a manifest CSV. Only `path` is required; absent optional columns read as missing.
pub fn read_manifest(path: &Path) -> Result<Manifest, SignalError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let path_col = *index.get("path").ok_or_else(|| SignalError::MissingColumn("path".into()))?;
    let has_demographics = DEMOGRAPHIC_COLUMNS.iter().any(|c| index.contains_key(c));

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let cell = |name: &str| -> &str { index.get(name).and_then(|&j| rec.get(j)).unwrap_or("") };

        let score_raw = cell("quality_score");
        let quality_score = if score_raw.is_empty() {
            None
        } else {
            match score_raw.parse::<u8>() {
                Ok(s @ 1..=5) => Some(s),
                _ => {
                    return Err(SignalError::BadScore {
                        row: line,
                        value: score_raw.to_string(),
                    })
                }
            }
        };
        let outcome_raw = cell("outcome_label");
        let outcome = if outcome_raw.is_empty() {
            None
        } else {
            Some(OutcomeLabel::parse(outcome_raw).ok_or_else(|| bad(line, "outcome_label", outcome_raw))?)
        };
        let sex_raw = cell("sex");
        let sex = Sex::parse(sex_raw).ok_or_else(|| bad(line, "sex", sex_raw))?;
        let age_raw = cell("age_group");
        let age_group = AgeGroup::parse(age_raw).ok_or_else(|| bad(line, "age_group", age_raw))?;
        let preg_raw = cell("pregnant");
        let pregnant = match preg_raw.to_ascii_lowercase().as_str() {
            "" | "nan" => None,
            "true" | "1" => Some(true),
            "false" | "0" => Some(false),
            _ => return Err(bad(line, "pregnant", preg_raw)),
        };
        let split_tag = Some(cell("split_tag")).filter(|s| !s.is_empty()).map(str::to_string);

        rows.push(ManifestRow {
            path: rec.get(path_col).unwrap_or("").to_string(),
            quality_score,
            outcome,
            demographics: DemographicRecord {
                sex,
                age_group,
                height_cm: parse_positive(line, "height_cm", cell("height_cm"))?,
                weight_kg: parse_positive(line, "weight_kg", cell("weight_kg"))?,
                pregnant,
            },
            split_tag,
        });
    }
    let m = Manifest {
        rows,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        has_demographics,
    };
    m.check_unique()?;
    Ok(m)
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Writes all columns in [`MANIFEST_COLUMNS`] order.
pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<(), SignalError> {
    manifest.check_unique()?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_COLUMNS)?;
    for r in &manifest.rows {
        let d = &r.demographics;
        w.write_record([
            r.path.clone(),
            r.quality_score.map(|s| s.to_string()).unwrap_or_default(),
            r.outcome.map(|o| o.as_str().to_string()).unwrap_or_default(),
            d.sex.code().to_string(),
            d.age_group.code().to_string(),
            fmt_opt_f64(d.height_cm),
            fmt_opt_f64(d.weight_kg),
            d.pregnant.map(|b| b.to_string()).unwrap_or_default(),
            r.split_tag.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_text(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
        p
    }

    const HEADER: &str = "path,quality_score,outcome_label,sex,age_group,height_cm,weight_kg,pregnant,split_tag\n";

    #[test]
    fn parses_full_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_text(dir.path(), "m.csv", &format!("{HEADER}a.wav,4,normal,F,child,130.0,30.0,false,\n"));
        let m = read_manifest(&p).unwrap();
        let r = &m.rows[0];
        assert_eq!(r.quality_score, Some(4));
        assert_eq!(r.outcome, Some(OutcomeLabel::Normal));
        assert_eq!(r.demographics.sex, Sex::Female);
        assert_eq!(r.demographics.age_group, AgeGroup::Child);
        assert_eq!(r.demographics.height_cm, Some(130.0));
        assert_eq!(r.demographics.pregnant, Some(false));
        assert_eq!(r.split_tag, None);
        assert!(m.has_demographics);
        assert_eq!(m.resolve(r), dir.path().join("a.wav"));
    }

    #[test]
    fn empty_score_is_unlabeled() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_text(dir.path(), "m.csv", &format!("{HEADER}b.wav,,,,,,,,\n"));
        let r = &read_manifest(&p).unwrap().rows[0];
        assert_eq!(r.quality_score, None);
        assert_eq!(r.outcome, None);
        assert_eq!(r.demographics, DemographicRecord::default());
    }

    #[test]
    fn rejects_duplicates_bad_scores_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let dup = write_text(dir.path(), "d.csv", &format!("{HEADER}a.wav,4,,,,,,,\na.wav,3,,,,,,,\n"));
        assert!(matches!(read_manifest(&dup), Err(SignalError::DuplicatePath(p)) if p == "a.wav"));
        let score = write_text(dir.path(), "s.csv", &format!("{HEADER}a.wav,6,,,,,,,\n"));
        assert!(matches!(read_manifest(&score), Err(SignalError::BadScore { .. })));
        let zero = write_text(dir.path(), "z.csv", &format!("{HEADER}a.wav,0,,,,,,,\n"));
        assert!(matches!(read_manifest(&zero), Err(SignalError::BadScore { .. })));
        let label = write_text(dir.path(), "l.csv", &format!("{HEADER}a.wav,4,sick,,,,,,\n"));
        assert!(matches!(read_manifest(&label), Err(SignalError::BadLabel { .. })));
        let nopath = write_text(dir.path(), "n.csv", "file,quality_score\na.wav,3\n");
        assert!(matches!(read_manifest(&nopath), Err(SignalError::MissingColumn(c)) if c == "path"));
    }

    #[test]
    fn minimal_manifest_has_no_demographics() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_text(dir.path(), "m.csv", "path,outcome_label\nx.wav,abnormal\n");
        let m = read_manifest(&p).unwrap();
        assert!(!m.has_demographics);
        assert_eq!(m.rows[0].outcome, Some(OutcomeLabel::Abnormal));
    }

    #[test]
    fn write_then_read_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = ManifestRow::new("a.wav");
        a.quality_score = Some(5);
        a.outcome = Some(OutcomeLabel::Abnormal);
        a.demographics = DemographicRecord {
            sex: Sex::Male,
            age_group: AgeGroup::Infant,
            height_cm: Some(70.5),
            weight_kg: Some(8.25),
            pregnant: Some(false),
        };
        a.split_tag = Some("train".into());
        let b = ManifestRow::new("sub/b.wav");
        let m = Manifest::new(vec![a, b], dir.path()).unwrap();
        let p = dir.path().join("out.csv");
        write_manifest(&m, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(HEADER));
        assert_eq!(read_manifest(&p).unwrap(), m);
    }
}
