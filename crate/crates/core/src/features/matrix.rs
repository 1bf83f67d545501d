use super::FeatureError;
use ndarray::Array2;
use std::path::Path;

/// Row-per-recording feature table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub ids: Vec<String>,
    pub data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, ids: Vec<String>, data: Array2<f64>) -> Result<Self, FeatureError> {
        if data.ncols() != names.len() || data.nrows() != ids.len() {
            return Err(FeatureError::SchemaMismatch(format!(
                "{}x{} matrix with {} names and {} ids",
                data.nrows(),
                data.ncols(),
                names.len(),
                ids.len()
            )));
        }
        Ok(Self { names, ids, data })
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Columns picked by name, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<Self, FeatureError> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| FeatureError::SchemaMismatch(format!("missing column {n}"))))
            .collect::<Result<_, _>>()?;
        let data = Array2::from_shape_fn((self.n_rows(), idx.len()), |(r, c)| self.data[[r, idx[c]]]);
        Ok(Self {
            names: names.to_vec(),
            ids: self.ids.clone(),
            data,
        })
    }

    /// CSV with header `id,<names...>`.
    pub fn write_csv(&self, path: &Path) -> Result<(), FeatureError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.ids.iter().zip(self.data.rows()) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, FeatureError> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.get(0) != Some("id") {
            return Err(FeatureError::SchemaMismatch("first column must be id".into()));
        }
        let names: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let mut ids = Vec::new();
        let mut flat = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            ids.push(rec[0].to_string());
            for field in rec.iter().skip(1) {
                flat.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| FeatureError::SchemaMismatch(format!("bad number {field:?}")))?,
                );
            }
        }
        let data = Array2::from_shape_vec((ids.len(), names.len()), flat)
            .map_err(|e| FeatureError::SchemaMismatch(e.to_string()))?;
        Self::new(names, ids, data)
    }
}

/// Feature schema as a JSON array of names.
pub fn write_feature_schema(names: &[String], path: &Path) -> Result<(), FeatureError> {
    std::fs::write(path, serde_json::to_string_pretty(names)?)?;
    Ok(())
}

pub fn read_feature_schema(path: &Path) -> Result<Vec<String>, FeatureError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
