//! CSV and JSON file formats.
//!
//! Input panels use a long layout with one row per observation:
//!
//! ```text
//! subject,time,value[,threshold][,<covariate>...]
//! ```
//!
//! `subject` is any label, `time` an integer. Missing rows are missing
//! observations. A `threshold` column, when present, fixes the threshold of
//! each row instead of computing empirical quantiles.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::{apply_thresholds, ExcessPanel, PanelBuilder, RawPanel, Thresholded};

/// Version tag written into every JSON document.
pub const SCHEMA_VERSION: u32 = 1;

/// A long-format panel after parsing, before thresholding.
#[derive(Debug, Clone)]
pub struct LongTable {
    /// Subject labels in order of first appearance.
    pub subjects: Vec<String>,
    /// Distinct time stamps, ascending; position is the time index.
    pub times: Vec<i64>,
    pub raw: RawPanel,
    /// Per-row thresholds `[subject][time]`, if the file has the column.
    pub thresholds: Option<Vec<Vec<f64>>>,
}

fn parse_f64(field: &str, line: u64, col: &str) -> Result<f64> {
    let f = field.trim();
    if f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    f.parse::<f64>()
        .map_err(|_| Error::parse(Some(line), format!("column '{col}': cannot parse '{f}' as a number")))
}

/// Parses a long-format CSV. `covariates` selects covariate columns by name
/// (all non-reserved columns when `None`).
pub fn read_long_csv<R: Read>(reader: R, covariates: Option<&[String]>) -> Result<LongTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse(Some(1), e.to_string()))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| find(name).ok_or_else(|| Error::parse(Some(1), format!("missing column '{name}'")));
    let c_subject = need("subject")?;
    let c_time = need("time")?;
    let c_value = need("value")?;
    let c_threshold = find("threshold");
    let reserved = ["subject", "time", "value", "threshold"];
    let cov_names: Vec<String> = match covariates {
        Some(sel) => sel.to_vec(),
        None => headers
            .iter()
            .filter(|h| !reserved.contains(h))
            .map(str::to_string)
            .collect(),
    };
    let mut cov_cols = Vec::with_capacity(cov_names.len());
    for name in &cov_names {
        if reserved.contains(&name.as_str()) {
            return Err(Error::parse(None, format!("'{name}' is not a covariate column")));
        }
        cov_cols.push(need(name)?);
    }

    struct Row {
        subject: usize,
        time: i64,
        value: f64,
        threshold: f64,
        covs: Vec<f64>,
    }
    let mut subjects: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows = Vec::new();
    let mut times = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line());
            Error::parse(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let label = rec.get(c_subject).unwrap_or("").to_string();
        if label.is_empty() {
            return Err(Error::parse(Some(line), "empty subject label"));
        }
        let next = subjects.len();
        let subject = *index.entry(label.clone()).or_insert_with(|| {
            subjects.push(label);
            next
        });
        let t_field = rec.get(c_time).unwrap_or("");
        let time = t_field.parse::<i64>().map_err(|_| {
            Error::parse(
                Some(line),
                format!("column 'time': cannot parse '{t_field}' as an integer"),
            )
        })?;
        let value = parse_f64(rec.get(c_value).unwrap_or(""), line, "value")?;
        let threshold = match c_threshold {
            Some(c) => parse_f64(rec.get(c).unwrap_or(""), line, "threshold")?,
            None => f64::NAN,
        };
        let mut covs = Vec::with_capacity(cov_cols.len());
        for (k, &c) in cov_cols.iter().enumerate() {
            let v = parse_f64(rec.get(c).unwrap_or(""), line, &cov_names[k])?;
            if !value.is_nan() && !v.is_finite() {
                return Err(Error::parse(
                    Some(line),
                    format!("column '{}': missing covariate value", cov_names[k]),
                ));
            }
            covs.push(v);
        }
        if c_threshold.is_some() && !value.is_nan() && !threshold.is_finite() {
            return Err(Error::parse(Some(line), "column 'threshold': missing value"));
        }
        times.insert(time);
        rows.push((
            line,
            Row {
                subject,
                time,
                value,
                threshold,
                covs,
            },
        ));
    }
    if rows.is_empty() {
        return Err(Error::parse(None, "no data rows"));
    }
    let times: Vec<i64> = times.into_iter().collect();
    let t_index: BTreeMap<i64, usize> = times.iter().enumerate().map(|(k, &t)| (t, k)).collect();
    let (n, t, q) = (subjects.len(), times.len(), cov_names.len());
    let mut values = vec![vec![f64::NAN; t]; n];
    let mut covs = vec![vec![0.0; t * q]; n];
    let mut thr = vec![vec![f64::NAN; t]; n];
    let mut seen = vec![vec![false; t]; n];
    for (line, r) in rows {
        let k = t_index[&r.time];
        if seen[r.subject][k] {
            return Err(Error::parse(
                Some(line),
                format!("duplicate row for subject '{}' at time {}", subjects[r.subject], r.time),
            ));
        }
        seen[r.subject][k] = true;
        values[r.subject][k] = r.value;
        thr[r.subject][k] = r.threshold;
        for (c, v) in r.covs.into_iter().enumerate() {
            covs[r.subject][k * q + c] = v;
        }
    }
    let raw = RawPanel::new(values, covs, cov_names)?;
    Ok(LongTable {
        subjects,
        times,
        raw,
        thresholds: c_threshold.map(|_| thr),
    })
}

pub fn read_long_csv_path(path: &Path, covariates: Option<&[String]>) -> Result<LongTable> {
    let f = File::open(path)?;
    read_long_csv(BufReader::new(f), covariates)
}

impl LongTable {
    /// Excess panel: supplied thresholds if the file has them, otherwise
    /// per-subject empirical `q` quantiles.
    pub fn threshold(&self, q: f64) -> Result<Thresholded> {
        let Some(thr) = &self.thresholds else {
            return apply_thresholds(&self.raw, q);
        };
        let raw = &self.raw;
        let (n, t) = (raw.n_subjects(), raw.n_times());
        let qd = raw.covariate_names.len();
        let mut b = PanelBuilder::new(n, t, raw.covariate_names.clone());
        let mut mean_thr = Vec::with_capacity(n);
        for i in 0..n {
            let mut observed = 0;
            let mut sum = 0.0;
            for tt in 0..t {
                let y = raw.values[i][tt];
                if y.is_nan() {
                    continue;
                }
                observed += 1;
                let u = thr[i][tt];
                sum += u;
                if y > u {
                    b.push(i, tt, y - u, u, &raw.covariates[i][tt * qd..(tt + 1) * qd])?;
                }
            }
            if observed == 0 {
                return Err(Error::InvalidArgument(format!(
                    "subject '{}' has no observations",
                    self.subjects[i]
                )));
            }
            b.set_observed(i, observed)?;
            mean_thr.push(sum / observed as f64);
        }
        let panel = b.build()?;
        let empty_subjects = panel.empty_subjects();
        Ok(Thresholded {
            panel,
            thresholds: mean_thr,
            empty_subjects,
        })
    }
}

/// Writes an excess panel in the long layout, with its thresholds, so the
/// file reproduces the panel when read back.
pub fn write_panel_csv<W: Write>(panel: &ExcessPanel, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["subject".to_string(), "time".into(), "value".into(), "threshold".into()];
    header.extend(panel.covariate_names().iter().cloned());
    wtr.write_record(&header).map_err(csv_err)?;
    for (i, s) in panel.subjects().iter().enumerate() {
        for k in 0..s.len() {
            let u = s.threshold()[k];
            let mut rec = vec![
                (i + 1).to_string(),
                s.times()[k].to_string(),
                (u + s.excess()[k]).to_string(),
                u.to_string(),
            ];
            for &v in &s.covariates(k)[1..] {
                rec.push(v.to_string());
            }
            wtr.write_record(&rec).map_err(csv_err)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::parse(None, format!("{other:?}")),
    }
}

/// Serializes `value` wrapped as `{"schema_version": 1, "kind": .., "data": ..}`.
pub fn write_json<T: Serialize>(path: &Path, kind: &str, value: &T) -> Result<()> {
    let doc = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "data": value,
    });
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &doc)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Reads a document written by [`write_json`]. Bare documents without the
/// envelope are accepted too.
pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let f = File::open(path)?;
    let v: serde_json::Value = serde_json::from_reader(BufReader::new(f))?;
    let Some(obj) = v.as_object().filter(|o| o.contains_key("schema_version")) else {
        return Ok(serde_json::from_value(v)?);
    };
    let version = obj["schema_version"].as_u64().unwrap_or(0);
    if version != SCHEMA_VERSION as u64 {
        return Err(Error::parse(None, format!("unsupported schema version {version}")));
    }
    if let Some(k) = obj.get("kind").and_then(|k| k.as_str()) {
        if k != kind {
            return Err(Error::parse(None, format!("expected a '{kind}' document, found '{k}'")));
        }
    }
    let data = obj.get("data").cloned().unwrap_or(serde_json::Value::Null);
    Ok(serde_json::from_value(data)?)
}
