//! Schema-tagged feature/label tables, the unit of sharing in data mode.
//!
//! Classification labels are stored as class indices (`0.0, 1.0, ...`) into
//! `LabelSpec::Classes`; regression labels are the raw values.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::PartnerId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpec {
    Classes(Vec<String>),
    Range { lo: f64, hi: f64 },
}

impl LabelSpec {
    pub fn is_classification(&self) -> bool {
        matches!(self, LabelSpec::Classes(_))
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self {
            LabelSpec::Classes(c) => Some(c.len()),
            LabelSpec::Range { .. } => None,
        }
    }

    pub fn class_names(&self) -> &[String] {
        match self {
            LabelSpec::Classes(c) => c,
            LabelSpec::Range { .. } => &[],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub format: String,
    pub fields: Vec<String>,
    pub labels: LabelSpec,
}

impl Schema {
    /// Same field names in the same order and the same label vocabulary.
    pub fn compatible_with(&self, other: &Schema) -> bool {
        if self.fields != other.fields {
            return false;
        }
        match (&self.labels, &other.labels) {
            (LabelSpec::Classes(a), LabelSpec::Classes(b)) => a == b,
            (LabelSpec::Range { .. }, LabelSpec::Range { .. }) => true,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub partner: PartnerId,
    pub row: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Schema,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub provenance: Vec<Provenance>,
    /// Rows known to be corrupted, when the generator recorded it.
    pub noise_marks: Option<Vec<bool>>,
}

/// Lexicographic order on feature tuples, then label.
pub(crate) fn row_cmp(a: (&[f64], f64), b: (&[f64], f64)) -> Ordering {
    for (x, y) in a.0.iter().zip(b.0) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.0.len().cmp(&b.0.len()).then(a.1.total_cmp(&b.1))
}

impl Dataset {
    pub fn empty(schema: Schema) -> Self {
        Self {
            schema,
            features: Vec::new(),
            labels: Vec::new(),
            provenance: Vec::new(),
            noise_marks: None,
        }
    }

    /// Builds a dataset whose provenance points at `partner`, rows in order.
    pub fn from_rows(
        schema: Schema,
        features: Vec<Vec<f64>>,
        labels: Vec<f64>,
        partner: &str,
    ) -> Result<Self> {
        let provenance = (0..labels.len())
            .map(|row| Provenance {
                partner: partner.to_string(),
                row,
            })
            .collect();
        let ds = Self {
            schema,
            features,
            labels,
            provenance,
            noise_marks: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.features.len() != n || self.provenance.len() != n {
            return Err(Error::Schema(format!(
                "row count mismatch: {} feature rows, {} labels, {} provenance entries",
                self.features.len(),
                n,
                self.provenance.len()
            )));
        }
        if let Some(marks) = &self.noise_marks {
            if marks.len() != n {
                return Err(Error::Schema("noise_marks length differs from row count".into()));
            }
        }
        let d = self.schema.fields.len();
        if let Some(bad) = self.features.iter().position(|r| r.len() != d) {
            return Err(Error::Schema(format!(
                "row {bad} has {} features, schema declares {d} fields",
                self.features[bad].len()
            )));
        }
        if let LabelSpec::Classes(classes) = &self.schema.labels {
            let k = classes.len() as f64;
            if let Some(bad) = self
                .labels
                .iter()
                .position(|&l| l < 0.0 || l >= k || l.fract() != 0.0)
            {
                return Err(Error::Schema(format!(
                    "row {bad} has label {} outside the {} declared classes",
                    self.labels[bad],
                    classes.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.schema.fields.len()
    }

    pub fn push(&mut self, features: Vec<f64>, label: f64, provenance: Provenance) {
        self.features.push(features);
        self.labels.push(label);
        self.provenance.push(provenance);
        if let Some(marks) = &mut self.noise_marks {
            marks.push(false);
        }
    }

    /// Appends the rows of `other`, which must share this dataset's schema.
    pub fn extend_from(&mut self, other: &Dataset) -> Result<()> {
        if !self.schema.compatible_with(&other.schema) {
            return Err(Error::Schema("cannot append rows with an incompatible schema".into()));
        }
        let marks = match (&self.noise_marks, &other.noise_marks) {
            (None, None) => None,
            (a, b) => {
                let mut m = a.clone().unwrap_or_else(|| vec![false; self.len()]);
                m.extend(b.clone().unwrap_or_else(|| vec![false; other.len()]));
                Some(m)
            }
        };
        self.features.extend(other.features.iter().cloned());
        self.labels.extend_from_slice(&other.labels);
        self.provenance.extend(other.provenance.iter().cloned());
        self.noise_marks = marks;
        Ok(())
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            features: rows.iter().map(|&i| self.features[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            provenance: rows.iter().map(|&i| self.provenance[i].clone()).collect(),
            noise_marks: self
                .noise_marks
                .as_ref()
                .map(|m| rows.iter().map(|&i| m[i]).collect()),
        }
    }

    /// Sorts rows by feature tuple, then label; ties keep provenance order.
    pub fn canonicalize(&mut self) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            row_cmp(
                (&self.features[a], self.labels[a]),
                (&self.features[b], self.labels[b]),
            )
            .then_with(|| self.provenance[a].cmp(&self.provenance[b]))
        });
        *self = self.select(&order);
    }

    pub fn canonicalized(&self) -> Dataset {
        let mut ds = self.clone();
        ds.canonicalize();
        ds
    }

    pub fn is_canonical(&self) -> bool {
        (1..self.len()).all(|i| {
            row_cmp(
                (&self.features[i - 1], self.labels[i - 1]),
                (&self.features[i], self.labels[i]),
            ) != Ordering::Greater
        })
    }

    /// Per-class counts keyed by class name; empty for regression data.
    pub fn class_histogram(&self) -> BTreeMap<String, usize> {
        let mut hist = BTreeMap::new();
        if let LabelSpec::Classes(classes) = &self.schema.labels {
            for &l in &self.labels {
                *hist.entry(classes[l as usize].clone()).or_insert(0) += 1;
            }
        }
        hist
    }

    /// Per-axis `[min, max]` of the feature columns.
    pub fn feature_bounds(&self) -> Option<Vec<(f64, f64)>> {
        let first = self.features.first()?;
        let mut bounds: Vec<(f64, f64)> = first.iter().map(|&v| (v, v)).collect();
        for row in &self.features[1..] {
            for (b, &v) in bounds.iter_mut().zip(row) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
        Some(bounds)
    }

    pub fn label_bounds(&self) -> Option<(f64, f64)> {
        let mut it = self.labels.iter();
        let first = *it.next()?;
        Some(it.fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))))
    }

    /// Writes the dataset as CSV: header of field names plus `label`.
    /// Class labels are written by name.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.schema.fields.iter().map(String::as_str).collect();
        header.push("label");
        w.write_record(&header)?;
        for (row, &label) in self.features.iter().zip(&self.labels) {
            let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            record.push(match &self.schema.labels {
                LabelSpec::Classes(classes) => classes[label as usize].clone(),
                LabelSpec::Range { .. } => label.to_string(),
            });
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads CSV written by [`Dataset::write_csv`]. Without a schema hint,
    /// an all-numeric label column is regression over its observed range and
    /// anything else is classification with classes sorted by name.
    pub fn read_csv<R: Read>(reader: R, partner: &str, hint: Option<&Schema>) -> Result<Dataset> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.iter().next_back() != Some("label") {
            return Err(Error::Schema("last CSV column must be `label`".into()));
        }
        let fields: Vec<String> = header.iter().take(header.len() - 1).map(String::from).collect();
        let mut features = Vec::new();
        let mut raw_labels = Vec::new();
        for (i, record) in r.records().enumerate() {
            let record = record?;
            let mut row = Vec::with_capacity(fields.len());
            for cell in record.iter().take(fields.len()) {
                row.push(cell.trim().parse::<f64>().map_err(|_| {
                    Error::Schema(format!("row {i}: non-numeric feature value `{cell}`"))
                })?);
            }
            features.push(row);
            raw_labels.push(record.get(fields.len()).unwrap_or_default().trim().to_string());
        }

        let numeric: Option<Vec<f64>> = raw_labels.iter().map(|s| s.parse::<f64>().ok()).collect();
        let (labels, label_spec) = match (hint.map(|s| &s.labels), numeric) {
            (Some(LabelSpec::Classes(classes)), _) => (class_ids(&raw_labels, classes)?, LabelSpec::Classes(classes.clone())),
            (Some(range @ LabelSpec::Range { .. }), Some(values)) => (values, range.clone()),
            (Some(LabelSpec::Range { .. }), None) => {
                return Err(Error::Schema("schema declares numeric labels, CSV has names".into()))
            }
            (None, Some(values)) => {
                let (lo, hi) = values
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                let spec = if values.is_empty() {
                    LabelSpec::Range { lo: 0.0, hi: 0.0 }
                } else {
                    LabelSpec::Range { lo, hi }
                };
                (values, spec)
            }
            (None, None) => {
                let mut classes: Vec<String> = raw_labels.clone();
                classes.sort();
                classes.dedup();
                (class_ids(&raw_labels, &classes)?, LabelSpec::Classes(classes))
            }
        };
        let format = hint.map(|s| s.format.clone()).unwrap_or_else(|| "canonical".into());
        Dataset::from_rows(
            Schema {
                format,
                fields,
                labels: label_spec,
            },
            features,
            labels,
            partner,
        )
    }

    /// Provenance sidecar: `row,partner,original_row`.
    pub fn write_provenance<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "partner", "original_row"])?;
        for (i, p) in self.provenance.iter().enumerate() {
            w.write_record([i.to_string(), p.partner.clone(), p.row.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_provenance<R: Read>(&mut self, reader: R) -> Result<()> {
        let mut r = csv::Reader::from_reader(reader);
        let mut prov = vec![None; self.len()];
        for record in r.records() {
            let record = record?;
            let parse = |i: usize| -> Result<usize> {
                record
                    .get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Schema("malformed provenance row".into()))
            };
            let row = parse(0)?;
            let original = parse(2)?;
            let partner = record.get(1).unwrap_or_default().to_string();
            let slot = prov
                .get_mut(row)
                .ok_or_else(|| Error::Schema(format!("provenance row {row} out of range")))?;
            *slot = Some(Provenance { partner, row: original });
        }
        self.provenance = prov
            .into_iter()
            .enumerate()
            .map(|(i, p)| p.ok_or_else(|| Error::Schema(format!("provenance missing for row {i}"))))
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn save(&self, csv_path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(csv_path)?)?;
        self.write_provenance(std::fs::File::create(provenance_path(csv_path))?)
    }

    pub fn load(csv_path: &Path, partner: &str, hint: Option<&Schema>) -> Result<Dataset> {
        let mut ds = Dataset::read_csv(std::fs::File::open(csv_path)?, partner, hint)?;
        let sidecar = provenance_path(csv_path);
        if sidecar.exists() {
            ds.read_provenance(std::fs::File::open(sidecar)?)?;
        }
        Ok(ds)
    }
}

pub fn provenance_path(csv_path: &Path) -> std::path::PathBuf {
    let mut name = csv_path.file_stem().unwrap_or_default().to_os_string();
    name.push(".provenance.csv");
    csv_path.with_file_name(name)
}

fn class_ids(raw: &[String], classes: &[String]) -> Result<Vec<f64>> {
    raw.iter()
        .map(|s| {
            classes
                .iter()
                .position(|c| c == s)
                .map(|i| i as f64)
                .ok_or_else(|| Error::Schema(format!("label `{s}` not in declared classes")))
        })
        .collect()
}
