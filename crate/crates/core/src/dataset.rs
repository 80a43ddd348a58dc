//! Tabular input, schema validation and the encoded feature projection.
//!
//! Categorical attributes are one-hot expanded (one column per declared
//! value), continuous attributes are z-scored with the population standard
//! deviation. Only sensitive attributes contribute columns. An optional
//! trailing intercept column of ones is exempt from the sparsity penalty.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttributeKind {
    Categorical(Vec<String>),
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
    pub sensitive: bool,
}

impl AttributeSpec {
    pub fn categorical<S: Into<String>>(name: S, values: &[&str]) -> Self {
        AttributeSpec {
            name: name.into(),
            kind: AttributeKind::Categorical(values.iter().map(|v| v.to_string()).collect()),
            sensitive: true,
        }
    }

    pub fn continuous<S: Into<String>>(name: S) -> Self {
        AttributeSpec {
            name: name.into(),
            kind: AttributeKind::Continuous,
            sensitive: true,
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, AttributeKind::Continuous)
    }
}

/// A cell value. Categorical cells hold the index into the attribute's value list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Cat(usize),
    Num(f64),
}

impl Value {
    pub fn as_num(self) -> f64 {
        match self {
            Value::Num(x) => x,
            Value::Cat(i) => i as f64,
        }
    }
}

/// Column kind override for CSV loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Categorical,
    Continuous,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    schema: Vec<AttributeSpec>,
    rows: Vec<Vec<Value>>,
    fav: Vec<bool>,
}

impl Dataset {
    pub fn new(schema: Vec<AttributeSpec>, rows: Vec<Vec<Value>>, fav: Vec<bool>) -> Result<Self> {
        let mut names = HashSet::new();
        for attr in &schema {
            if !names.insert(attr.name.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate attribute `{}`",
                    attr.name
                )));
            }
            if let AttributeKind::Categorical(values) = &attr.kind {
                if values.is_empty() {
                    return Err(Error::Schema(format!("`{}` has no values", attr.name)));
                }
                let distinct: HashSet<_> = values.iter().collect();
                if distinct.len() != values.len() {
                    return Err(Error::Schema(format!(
                        "`{}` has duplicate values",
                        attr.name
                    )));
                }
            }
        }
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if rows.len() < 2 {
            return Err(Error::Schema("at least two rows are required".into()));
        }
        if fav.len() != rows.len() {
            return Err(Error::Dimension(format!(
                "{} favorable flags for {} rows",
                fav.len(),
                rows.len()
            )));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::RaggedRow {
                    row: r + 1,
                    expected: schema.len(),
                    found: row.len(),
                });
            }
            for (attr, value) in schema.iter().zip(row) {
                let ok = match (&attr.kind, value) {
                    (AttributeKind::Categorical(vals), Value::Cat(i)) => *i < vals.len(),
                    (AttributeKind::Continuous, Value::Num(x)) => {
                        if !x.is_finite() {
                            return Err(Error::NonFinite {
                                row: r + 1,
                                column: attr.name.clone(),
                            });
                        }
                        true
                    }
                    _ => false,
                };
                if !ok {
                    return Err(Error::TypeMismatch {
                        row: r + 1,
                        column: attr.name.clone(),
                    });
                }
            }
        }
        Ok(Dataset { schema, rows, fav })
    }

    pub fn schema(&self) -> &[AttributeSpec] {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn fav(&self) -> &[bool] {
        &self.fav
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|a| a.name == name)
    }

    pub fn sensitive_indices(&self) -> Vec<usize> {
        (0..self.schema.len())
            .filter(|&i| self.schema[i].sensitive)
            .collect()
    }

    /// Mark exactly the named attributes as sensitive.
    pub fn with_sensitive<S: AsRef<str>>(mut self, names: &[S]) -> Result<Self> {
        let wanted: HashSet<&str> = names.iter().map(|s| s.as_ref()).collect();
        for name in &wanted {
            if self.attribute_index(name).is_none() {
                return Err(Error::MissingColumn(name.to_string()));
            }
        }
        for attr in &mut self.schema {
            attr.sensitive = wanted.contains(attr.name.as_str());
        }
        Ok(self)
    }

    /// Render a cell the way it appeared in the input.
    pub fn display_value(&self, attr: usize, value: Value) -> String {
        match (&self.schema[attr].kind, value) {
            (AttributeKind::Categorical(vals), Value::Cat(i)) => vals[i].clone(),
            (_, v) => format_number(v.as_num()),
        }
    }

    /// SHA-256 over a canonical text rendering of schema, rows and favorable flags.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        let header: Vec<&str> = self.schema.iter().map(|a| a.name.as_str()).collect();
        hasher.update(header.join(",").as_bytes());
        hasher.update(b",__fav__\n");
        for (row, fav) in self.rows.iter().zip(&self.fav) {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(a, v)| match v {
                    Value::Num(x) => format!("{:e}", x),
                    Value::Cat(_) => self.display_value(a, *v),
                })
                .collect();
            hasher.update(cells.join(",").as_bytes());
            hasher.update(if *fav { b",1\n" } else { b",0\n" });
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub(crate) fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        let s = format!("{:.4}", x);
        let s = s.trim_end_matches('0');
        s.trim_end_matches('.').to_string()
    }
}

/// Read a headered CSV. `fav_column` is removed from the attribute schema and
/// turned into the favorable flags; every remaining column is sensitive.
pub fn load_csv<P: AsRef<Path>>(
    path: P,
    schema_hints: &HashMap<String, ColumnKind>,
    fav_column: &str,
    fav_value: &str,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let fav_pos = header
        .iter()
        .position(|h| h == fav_column)
        .ok_or_else(|| Error::MissingColumn(fav_column.to_string()))?;
    for name in schema_hints.keys() {
        if !header.contains(name) {
            return Err(Error::MissingColumn(name.clone()));
        }
    }

    let mut raw: Vec<Vec<String>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::RaggedRow {
                row: r + 1,
                expected: header.len(),
                found: record.len(),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::MissingValue {
                    row: r + 1,
                    column: header[c].clone(),
                });
            }
        }
        raw.push(record.iter().map(str::to_string).collect());
    }
    if raw.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut schema = Vec::new();
    let mut columns = Vec::new();
    for (c, name) in header.iter().enumerate() {
        if c == fav_pos {
            continue;
        }
        let numeric = raw.iter().all(|row| row[c].parse::<f64>().is_ok());
        let kind = schema_hints.get(name).copied().unwrap_or(if numeric {
            ColumnKind::Continuous
        } else {
            ColumnKind::Categorical
        });
        let kind = match kind {
            ColumnKind::Continuous => AttributeKind::Continuous,
            ColumnKind::Categorical => {
                let values: BTreeSet<&str> = raw.iter().map(|row| row[c].as_str()).collect();
                AttributeKind::Categorical(values.into_iter().map(str::to_string).collect())
            }
        };
        schema.push(AttributeSpec {
            name: name.clone(),
            kind,
            sensitive: true,
        });
        columns.push(c);
    }

    let lookups: Vec<Option<HashMap<&str, usize>>> = schema
        .iter()
        .map(|a| match &a.kind {
            AttributeKind::Categorical(vals) => Some(
                vals.iter()
                    .enumerate()
                    .map(|(i, v)| (v.as_str(), i))
                    .collect(),
            ),
            AttributeKind::Continuous => None,
        })
        .collect();

    let mut rows = Vec::with_capacity(raw.len());
    for (r, record) in raw.iter().enumerate() {
        let mut row = Vec::with_capacity(schema.len());
        for (a, &c) in columns.iter().enumerate() {
            let cell = record[c].as_str();
            let value = match &lookups[a] {
                Some(map) => Value::Cat(map[cell]),
                None => {
                    let x: f64 = cell.parse().map_err(|_| Error::TypeMismatch {
                        row: r + 1,
                        column: schema[a].name.clone(),
                    })?;
                    if !x.is_finite() {
                        return Err(Error::NonFinite {
                            row: r + 1,
                            column: schema[a].name.clone(),
                        });
                    }
                    Value::Num(x)
                }
            };
            row.push(value);
        }
        rows.push(row);
    }
    let fav = raw
        .iter()
        .map(|record| record[fav_pos] == fav_value)
        .collect();
    Dataset::new(schema, rows, fav)
}

/// What a feature column encodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnSource {
    OneHot { value: usize, label: String },
    Continuous { mean: f64, std: f64 },
    Intercept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnInfo {
    /// Schema index of the source attribute; `None` for the intercept.
    pub attribute: Option<usize>,
    pub attribute_name: String,
    pub source: ColumnSource,
}

impl ColumnInfo {
    pub fn is_penalizable(&self) -> bool {
        self.attribute.is_some()
    }
}

/// Row-major `n x d` encoded matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
    colmap: Vec<ColumnInfo>,
    intercept: bool,
}

impl FeatureMatrix {
    pub fn from_parts(
        n: usize,
        data: Vec<f64>,
        colmap: Vec<ColumnInfo>,
        intercept: bool,
    ) -> Result<Self> {
        let d = colmap.len();
        if data.len() != n * d {
            return Err(Error::Dimension(format!(
                "{} cells for {n} x {d} matrix",
                data.len()
            )));
        }
        Ok(FeatureMatrix {
            n,
            d,
            data,
            colmap,
            intercept,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn colmap(&self) -> &[ColumnInfo] {
        &self.colmap
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn penalizable(&self) -> Vec<bool> {
        self.colmap.iter().map(ColumnInfo::is_penalizable).collect()
    }

    pub fn project_row(&self, row_index: usize) -> Result<Vec<f64>> {
        if row_index >= self.n {
            return Err(Error::RowOutOfRange {
                index: row_index,
                n: self.n,
            });
        }
        Ok(self.row(row_index).to_vec())
    }

    /// Map an encoded value of column `j` back to original units.
    pub fn decode(&self, j: usize, encoded: f64) -> f64 {
        match self.colmap[j].source {
            ColumnSource::Continuous { mean, std } => encoded * std + mean,
            _ => encoded,
        }
    }

    /// Keep only the columns whose source attribute is in `attributes`
    /// (intercept dropped).
    pub fn restrict(&self, attributes: &[usize]) -> FeatureMatrix {
        let keep: Vec<usize> = (0..self.d)
            .filter(|&j| matches!(self.colmap[j].attribute, Some(a) if attributes.contains(&a)))
            .collect();
        let mut data = Vec::with_capacity(self.n * keep.len());
        for i in 0..self.n {
            let row = self.row(i);
            data.extend(keep.iter().map(|&j| row[j]));
        }
        FeatureMatrix {
            n: self.n,
            d: keep.len(),
            data,
            colmap: keep.iter().map(|&j| self.colmap[j].clone()).collect(),
            intercept: false,
        }
    }
}

pub fn encode(data: &Dataset, intercept: bool) -> FeatureMatrix {
    let n = data.n();
    let mut colmap = Vec::new();
    // Per attribute: first column index in the encoded row.
    let mut plan: Vec<(usize, usize)> = Vec::new();
    for a in data.sensitive_indices() {
        let attr = &data.schema()[a];
        plan.push((a, colmap.len()));
        match &attr.kind {
            AttributeKind::Categorical(vals) => {
                for (v, label) in vals.iter().enumerate() {
                    colmap.push(ColumnInfo {
                        attribute: Some(a),
                        attribute_name: attr.name.clone(),
                        source: ColumnSource::OneHot {
                            value: v,
                            label: label.clone(),
                        },
                    });
                }
            }
            AttributeKind::Continuous => {
                let xs: Vec<f64> = data.rows().iter().map(|r| r[a].as_num()).collect();
                let mean = xs.iter().sum::<f64>() / n as f64;
                let constant = xs.iter().all(|&x| x == xs[0]);
                let std = if constant {
                    1.0
                } else {
                    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
                };
                let mean = if constant { xs[0] } else { mean };
                colmap.push(ColumnInfo {
                    attribute: Some(a),
                    attribute_name: attr.name.clone(),
                    source: ColumnSource::Continuous { mean, std },
                });
            }
        }
    }
    if intercept {
        colmap.push(ColumnInfo {
            attribute: None,
            attribute_name: "(intercept)".into(),
            source: ColumnSource::Intercept,
        });
    }
    let d = colmap.len();
    let mut cells = vec![0.0; n * d];
    for (i, row) in data.rows().iter().enumerate() {
        let out = &mut cells[i * d..(i + 1) * d];
        for &(a, start) in &plan {
            match (row[a], &colmap[start].source) {
                (Value::Cat(v), _) => out[start + v] = 1.0,
                (Value::Num(x), ColumnSource::Continuous { mean, std }) => {
                    out[start] = (x - mean) / std
                }
                _ => unreachable!("schema validated"),
            }
        }
        if intercept {
            out[d - 1] = 1.0;
        }
    }
    FeatureMatrix {
        n,
        d,
        data: cells,
        colmap,
        intercept,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn yes_no(rows: &[&str]) -> Dataset {
        let schema = vec![AttributeSpec::categorical("b", &["yes", "no"])];
        let rows = rows
            .iter()
            .map(|r| vec![Value::Cat(if *r == "yes" { 0 } else { 1 })])
            .collect();
        Dataset::new(schema, rows, vec![true, false, true]).unwrap()
    }

    fn numeric(xs: &[f64]) -> Dataset {
        let rows = xs.iter().map(|&x| vec![Value::Num(x)]).collect();
        Dataset::new(
            vec![AttributeSpec::continuous("x")],
            rows,
            vec![false; xs.len()],
        )
        .unwrap()
    }

    fn write_csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn one_hot_binary_attribute() {
        let fm = encode(&yes_no(&["yes", "no", "yes"]), false);
        assert_eq!(fm.d(), 2);
        assert_eq!(fm.row(0), &[1.0, 0.0]);
        assert_eq!(fm.row(1), &[0.0, 1.0]);
        assert_eq!(fm.row(2), &[1.0, 0.0]);
        assert_eq!(fm.project_row(0).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn zscore_uses_population_std() {
        let fm = encode(&numeric(&[1.0, 2.0, 3.0]), false);
        let col: Vec<f64> = (0..3).map(|i| fm.get(i, 0)).collect();
        assert!((col[0] + 1.224_744_871_391_589).abs() < 1e-12);
        assert_eq!(col[1], 0.0);
        assert!((col[2] - 1.224_744_871_391_589).abs() < 1e-12);
        match fm.colmap()[0].source {
            ColumnSource::Continuous { mean, std } => {
                assert_eq!(mean, 2.0);
                assert!((std - 0.816_496_580_927_726).abs() < 1e-12);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn constant_column_becomes_zero_with_unit_std() {
        let fm = encode(&numeric(&[5.0, 5.0, 5.0]), false);
        assert!((0..3).all(|i| fm.get(i, 0) == 0.0));
        assert_eq!(
            fm.colmap()[0].source,
            ColumnSource::Continuous {
                mean: 5.0,
                std: 1.0
            }
        );
        assert_eq!(fm.decode(0, 0.0), 5.0);
    }

    #[test]
    fn intercept_is_last_and_unpenalized() {
        let fm = encode(&yes_no(&["yes", "no", "yes"]), true);
        for i in 0..3 {
            assert_eq!(*fm.project_row(i).unwrap().last().unwrap(), 1.0);
        }
        assert_eq!(fm.penalizable(), vec![true, true, false]);
    }

    #[test]
    fn project_row_out_of_range() {
        let fm = encode(&yes_no(&["yes", "no", "yes"]), false);
        assert!(matches!(
            fm.project_row(3),
            Err(Error::RowOutOfRange { index: 3, n: 3 })
        ));
    }

    #[test]
    fn non_sensitive_attributes_contribute_no_columns() {
        let schema = vec![
            AttributeSpec::categorical("a", &["x", "y"]),
            AttributeSpec::continuous("b"),
        ];
        let rows = vec![
            vec![Value::Cat(0), Value::Num(1.0)],
            vec![Value::Cat(1), Value::Num(2.0)],
        ];
        let data = Dataset::new(schema, rows, vec![true, false])
            .unwrap()
            .with_sensitive(&["b"])
            .unwrap();
        let fm = encode(&data, false);
        assert_eq!(fm.d(), 1);
        assert_eq!(fm.colmap()[0].attribute_name, "b");
    }

    #[test]
    fn load_small_csv() {
        let f = write_csv("sex,age,pred\nm,30,low\nf,40,high\nf,50,low\n");
        let data = load_csv(f.path(), &HashMap::new(), "pred", "low").unwrap();
        assert_eq!(data.n(), 3);
        assert_eq!(data.fav(), &[true, false, true]);
        assert_eq!(data.schema().len(), 2);
        assert!(data.schema()[1].is_continuous());
        assert_eq!(
            data.schema()[0].kind,
            AttributeKind::Categorical(vec!["f".into(), "m".into()])
        );
    }

    #[test]
    fn hint_forces_categorical_numeric_column() {
        let f = write_csv("grade,pred\n1,y\n2,n\n1,y\n");
        let hints = HashMap::from([("grade".to_string(), ColumnKind::Categorical)]);
        let data = load_csv(f.path(), &hints, "pred", "y").unwrap();
        assert_eq!(
            data.schema()[0].kind,
            AttributeKind::Categorical(vec!["1".into(), "2".into()])
        );
    }

    #[test]
    fn load_errors() {
        let hints = HashMap::from([("age".to_string(), ColumnKind::Continuous)]);
        let f = write_csv("sex,age,pred\nm,30,low\nf,old,high\n");
        let err = load_csv(f.path(), &hints, "pred", "low").unwrap_err();
        assert_eq!(err.to_string(), "type mismatch at row 2, column age");

        let f = write_csv("sex,age,pred\nm,30,low\nf,40\n");
        assert!(matches!(
            load_csv(f.path(), &HashMap::new(), "pred", "low"),
            Err(Error::RaggedRow { row: 2, .. })
        ));

        let f = write_csv("sex,age,pred\nm,30,low\nf,40,high\n");
        assert!(matches!(
            load_csv(f.path(), &HashMap::new(), "label", "low"),
            Err(Error::MissingColumn(_))
        ));

        let f = write_csv("sex,age,pred\nm,inf,low\nf,40,high\n");
        assert!(matches!(
            load_csv(f.path(), &HashMap::new(), "pred", "low"),
            Err(Error::NonFinite { .. })
        ));

        let f = write_csv("sex,age,pred\n");
        assert!(matches!(
            load_csv(f.path(), &HashMap::new(), "pred", "low"),
            Err(Error::EmptyDataset)
        ));

        let f = write_csv("sex,age,pred\nm,,low\nf,40,high\n");
        assert!(matches!(
            load_csv(f.path(), &HashMap::new(), "pred", "low"),
            Err(Error::MissingValue { .. })
        ));

        assert!(matches!(
            load_csv("/nonexistent/file.csv", &HashMap::new(), "pred", "low"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn schema_invariants_are_checked() {
        let dup = vec![
            AttributeSpec::continuous("a"),
            AttributeSpec::continuous("a"),
        ];
        let rows = vec![vec![Value::Num(0.0), Value::Num(0.0)]; 2];
        assert!(Dataset::new(dup, rows, vec![true, false]).is_err());

        let empty_vals = vec![AttributeSpec::categorical("a", &[])];
        let rows = vec![vec![Value::Cat(0)]; 2];
        assert!(Dataset::new(empty_vals, rows, vec![true, false]).is_err());

        let one_row = vec![vec![Value::Num(1.0)]];
        assert!(Dataset::new(vec![AttributeSpec::continuous("a")], one_row, vec![true]).is_err());
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive_to_content() {
        let a = yes_no(&["yes", "no", "yes"]);
        let b = yes_no(&["yes", "no", "yes"]);
        let c = yes_no(&["no", "no", "yes"]);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }
}
