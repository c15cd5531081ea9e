//! Panel data model: one observation per unit per period, validated on
//! construction, with CSV ingestion/export and the delta/centering transforms
//! used by the estimators.
//!
//! Periods are remapped to consecutive integers 1..=T at ingestion (original
//! labels are kept for export). Units with a record for every period and both
//! outcomes present are "complete"; everything else is retained in the dataset
//! but excluded from estimator inputs and counted in [`DataQuality`].

use std::borrow::Cow;
use std::collections::HashMap;
use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};

/// Index of a unit within a dataset. Opaque; resolve labels via
/// [`PanelDataset::unit_label`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UnitId(pub u32);

/// One observation: a unit in a period, with treatment flag and the two
/// outcome series (either may be missing for partially labeled rows).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelRecord {
    pub unit: UnitId,
    /// Remapped period, 1..=T.
    pub period: u32,
    pub treated: bool,
    pub actual: Option<f64>,
    pub predicted: Option<f64>,
}

/// Within-unit difference across the two periods of a T=2 panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaPair {
    pub unit_id: UnitId,
    /// actual(t=2) - actual(t=1).
    pub delta_actual: f64,
    /// predicted(t=2) - predicted(t=1).
    pub delta_predicted: f64,
}

/// Observation with the unit's time-mean removed from both outcome series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenteredObservation {
    pub unit_id: UnitId,
    pub period: u32,
    pub centered_actual: f64,
    pub centered_predicted: f64,
}

/// Row counts describing how much of the panel is usable.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DataQuality {
    pub n_records: usize,
    pub n_units: usize,
    pub n_periods: u32,
    pub n_complete_units: usize,
    pub n_incomplete_units: usize,
    pub n_treated_units: usize,
    pub n_untreated_units: usize,
    /// Units whose treatment flag changes across periods.
    pub n_mixed_treatment_units: usize,
}

/// Immutable panel of records, grouped by unit and sorted by period.
///
/// Safe to share read-only across concurrent estimator runs; all mutation
/// happens during construction.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    /// Sorted by (unit, period).
    records: Vec<PanelRecord>,
    /// Per unit: (start, len) into `records`.
    unit_ranges: Vec<(u32, u32)>,
    /// Original unit labels; `None` for synthetic panels (labels generated on demand).
    unit_labels: Option<Vec<String>>,
    /// Original period labels, indexed by remapped period - 1.
    period_labels: Vec<i64>,
    n_periods: u32,
}

/// A not-yet-validated row, as read from a file or built by a generator.
#[derive(Debug, Clone)]
pub struct RawRow {
    pub unit_label: String,
    pub period_label: i64,
    pub treated: bool,
    pub actual: Option<f64>,
    pub predicted: Option<f64>,
}

impl PanelDataset {
    /// Validate and index a set of raw rows.
    ///
    /// Units keep first-appearance order; period labels are sorted and
    /// remapped to 1..=T. Duplicate (unit, period) pairs are rejected.
    pub fn from_raw_rows(rows: Vec<RawRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("panel has no data rows".into()));
        }

        let mut unit_labels: Vec<String> = Vec::new();
        let mut unit_of: HashMap<String, u32> = HashMap::new();
        let mut period_labels: Vec<i64> = rows.iter().map(|r| r.period_label).collect();
        period_labels.sort_unstable();
        period_labels.dedup();
        let period_of: HashMap<i64, u32> = period_labels
            .iter()
            .enumerate()
            .map(|(i, &p)| (p, i as u32 + 1))
            .collect();

        let mut records = Vec::with_capacity(rows.len());
        let mut seen: HashMap<(u32, u32), ()> = HashMap::with_capacity(rows.len());
        for row in rows {
            let next_id = unit_labels.len() as u32;
            let unit = *unit_of.entry(row.unit_label.clone()).or_insert_with(|| {
                unit_labels.push(row.unit_label.clone());
                next_id
            });
            let period = period_of[&row.period_label];
            if seen.insert((unit, period), ()).is_some() {
                return Err(Error::DuplicateKey {
                    unit: row.unit_label,
                    period: row.period_label,
                });
            }
            records.push(PanelRecord {
                unit: UnitId(unit),
                period,
                treated: row.treated,
                actual: row.actual,
                predicted: row.predicted,
            });
        }

        records.sort_by_key(|r| (r.unit, r.period));
        let unit_ranges = build_ranges(&records, unit_labels.len());
        let n_periods = period_labels.len() as u32;

        Ok(PanelDataset {
            records,
            unit_ranges,
            unit_labels: Some(unit_labels),
            period_labels,
            n_periods,
        })
    }

    /// Build a panel from pre-validated records (synthetic data path).
    ///
    /// Records must already use unit ids 0..n_units and periods 1..=T, one
    /// record per (unit, period), sorted by (unit, period).
    pub(crate) fn from_synthetic(
        records: Vec<PanelRecord>,
        n_units: usize,
        n_periods: u32,
    ) -> Self {
        debug_assert_eq!(records.len(), n_units * n_periods as usize);
        let unit_ranges = build_ranges(&records, n_units);
        PanelDataset {
            records,
            unit_ranges,
            unit_labels: None,
            period_labels: (1..=n_periods as i64).collect(),
            n_periods,
        }
    }

    /// Overwrite the predicted series, record-aligned (synthetic-data path).
    pub(crate) fn set_predicted(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.records.len());
        for (r, v) in self.records.iter_mut().zip(values) {
            r.predicted = Some(*v);
        }
    }

    pub fn n_units(&self) -> usize {
        self.unit_ranges.len()
    }

    pub fn n_periods(&self) -> u32 {
        self.n_periods
    }

    pub fn n_records(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &[PanelRecord] {
        &self.records
    }

    /// Records of one unit, sorted by period.
    pub fn unit_records(&self, unit: UnitId) -> &[PanelRecord] {
        let (start, len) = self.unit_ranges[unit.0 as usize];
        &self.records[start as usize..(start + len) as usize]
    }

    pub fn unit_ids(&self) -> impl Iterator<Item = UnitId> + '_ {
        (0..self.unit_ranges.len() as u32).map(UnitId)
    }

    /// Original label of a unit, or a generated one for synthetic panels.
    pub fn unit_label(&self, unit: UnitId) -> Cow<'_, str> {
        match &self.unit_labels {
            Some(labels) => Cow::Borrowed(labels[unit.0 as usize].as_str()),
            None => Cow::Owned(format!("u{}", unit.0)),
        }
    }

    /// A unit is complete when it has a record for every period 1..=T with
    /// both outcomes present.
    pub fn is_complete(&self, unit: UnitId) -> bool {
        let recs = self.unit_records(unit);
        recs.len() == self.n_periods as usize
            && recs
                .iter()
                .all(|r| r.actual.is_some() && r.predicted.is_some())
    }

    /// Complete for the actual-outcome series only (predictions may be absent).
    pub fn is_actual_complete(&self, unit: UnitId) -> bool {
        let recs = self.unit_records(unit);
        recs.len() == self.n_periods as usize && recs.iter().all(|r| r.actual.is_some())
    }

    pub fn complete_units(&self) -> Vec<UnitId> {
        self.unit_ids().filter(|&u| self.is_complete(u)).collect()
    }

    pub fn n_complete_units(&self) -> usize {
        self.unit_ids().filter(|&u| self.is_complete(u)).count()
    }

    pub fn unit_has_treatment(&self, unit: UnitId) -> bool {
        self.unit_records(unit).iter().any(|r| r.treated)
    }

    pub fn any_treated(&self) -> bool {
        self.records.iter().any(|r| r.treated)
    }

    /// True when some records are treated and some are not.
    pub fn has_treatment_variation(&self) -> bool {
        self.records.iter().any(|r| r.treated) && self.records.iter().any(|r| !r.treated)
    }

    /// True when no unit changes treatment status across its periods.
    pub fn treatment_fixed_within_units(&self) -> bool {
        self.unit_ids().all(|u| {
            let recs = self.unit_records(u);
            recs.iter().all(|r| r.treated == recs[0].treated)
        })
    }

    /// Sub-panel of the units selected by `keep`, with units re-indexed.
    pub fn subset_units<F: Fn(UnitId) -> bool>(&self, keep: F) -> PanelDataset {
        let mut records = Vec::new();
        let mut labels = self.unit_labels.as_ref().map(|_| Vec::new());
        let mut next = 0u32;
        for u in self.unit_ids() {
            if !keep(u) {
                continue;
            }
            for r in self.unit_records(u) {
                records.push(PanelRecord {
                    unit: UnitId(next),
                    ..*r
                });
            }
            if let (Some(out), Some(src)) = (labels.as_mut(), self.unit_labels.as_ref()) {
                out.push(src[u.0 as usize].clone());
            }
            next += 1;
        }
        let unit_ranges = build_ranges(&records, next as usize);
        PanelDataset {
            records,
            unit_ranges,
            unit_labels: labels,
            period_labels: self.period_labels.clone(),
            n_periods: self.n_periods,
        }
    }

    /// Units with `treated = false` in all periods.
    pub fn untreated_subsample(&self) -> PanelDataset {
        self.subset_units(|u| !self.unit_has_treatment(u))
    }

    /// Resample whole units (cluster bootstrap); duplicated units get fresh ids.
    pub(crate) fn resample_units(&self, unit_indices: &[u32]) -> PanelDataset {
        let mut records = Vec::with_capacity(self.records.len());
        for (new_id, &src) in unit_indices.iter().enumerate() {
            for r in self.unit_records(UnitId(src)) {
                records.push(PanelRecord {
                    unit: UnitId(new_id as u32),
                    ..*r
                });
            }
        }
        let unit_ranges = build_ranges(&records, unit_indices.len());
        PanelDataset {
            records,
            unit_ranges,
            unit_labels: None,
            period_labels: self.period_labels.clone(),
            n_periods: self.n_periods,
        }
    }

    pub fn quality(&self) -> DataQuality {
        let mut complete = 0;
        let mut treated = 0;
        let mut untreated = 0;
        let mut mixed = 0;
        for u in self.unit_ids() {
            if self.is_complete(u) {
                complete += 1;
            }
            let recs = self.unit_records(u);
            let any = recs.iter().any(|r| r.treated);
            let all = recs.iter().all(|r| r.treated);
            if any && !all {
                mixed += 1;
            }
            if any {
                treated += 1;
            } else {
                untreated += 1;
            }
        }
        DataQuality {
            n_records: self.records.len(),
            n_units: self.n_units(),
            n_periods: self.n_periods,
            n_complete_units: complete,
            n_incomplete_units: self.n_units() - complete,
            n_treated_units: treated,
            n_untreated_units: untreated,
            n_mixed_treatment_units: mixed,
        }
    }
}

fn build_ranges(records: &[PanelRecord], n_units: usize) -> Vec<(u32, u32)> {
    let mut ranges = vec![(0u32, 0u32); n_units];
    for (i, r) in records.iter().enumerate() {
        let entry = &mut ranges[r.unit.0 as usize];
        if entry.1 == 0 {
            entry.0 = i as u32;
        }
        entry.1 += 1;
    }
    ranges
}

/// Per-unit differences across the two periods of a T=2 panel, complete units only.
pub fn make_deltas(data: &PanelDataset) -> Result<Vec<DeltaPair>> {
    if data.n_periods() != 2 {
        return Err(Error::Dimension(format!(
            "make_deltas requires exactly 2 periods, dataset has {}; use center_panel for T > 2",
            data.n_periods()
        )));
    }
    let mut out = Vec::new();
    for u in data.unit_ids() {
        if !data.is_complete(u) {
            continue;
        }
        let recs = data.unit_records(u);
        out.push(DeltaPair {
            unit_id: u,
            delta_actual: recs[1].actual.unwrap() - recs[0].actual.unwrap(),
            delta_predicted: recs[1].predicted.unwrap() - recs[0].predicted.unwrap(),
        });
    }
    Ok(out)
}

/// Remove each complete unit's time-mean from both outcome series.
pub fn center_panel(data: &PanelDataset) -> Result<Vec<CenteredObservation>> {
    if data.n_periods() < 2 {
        return Err(Error::InsufficientPeriods {
            required: 2,
            found: data.n_periods(),
        });
    }
    let mut out = Vec::new();
    for u in data.unit_ids() {
        if !data.is_complete(u) {
            continue;
        }
        let recs = data.unit_records(u);
        let t = recs.len() as f64;
        let mean_a = recs.iter().map(|r| r.actual.unwrap()).sum::<f64>() / t;
        let mean_p = recs.iter().map(|r| r.predicted.unwrap()).sum::<f64>() / t;
        for r in recs {
            out.push(CenteredObservation {
                unit_id: u,
                period: r.period,
                centered_actual: r.actual.unwrap() - mean_a,
                centered_predicted: r.predicted.unwrap() - mean_p,
            });
        }
    }
    Ok(out)
}

/// Column-name map for delimited panel files.
#[derive(Debug, Clone)]
pub struct PanelSchema {
    pub unit_id: String,
    pub period: String,
    pub treated: String,
    pub actual: String,
    pub predicted: String,
}

impl Default for PanelSchema {
    fn default() -> Self {
        PanelSchema {
            unit_id: "unit_id".into(),
            period: "period".into(),
            treated: "treated".into(),
            actual: "actual_outcome".into(),
            predicted: "predicted_outcome".into(),
        }
    }
}

fn parse_treated(raw: &str, row: usize, column: &str) -> Result<bool> {
    match raw.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        s if s.eq_ignore_ascii_case("true") => Ok(true),
        s if s.eq_ignore_ascii_case("false") => Ok(false),
        other => Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("treated flag must be one of 0, 1, true, false; got '{other}'"),
        }),
    }
}

fn parse_period(raw: &str, row: usize, column: &str) -> Result<i64> {
    raw.trim().parse::<i64>().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("period must be an integer; got '{raw}'"),
    })
}

fn parse_outcome(raw: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    trimmed.parse::<f64>().map(Some).map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("unparseable numeric cell '{raw}'"),
    })
}

struct HeaderIndex {
    unit: usize,
    period: usize,
    treated: usize,
    actual: Option<usize>,
    predicted: Option<usize>,
}

fn index_headers(headers: &csv::StringRecord, schema: &PanelSchema) -> Result<HeaderIndex> {
    let find = |name: &str| headers.iter().position(|h| h == name);
    let unit = find(&schema.unit_id).ok_or_else(|| Error::MissingColumn(schema.unit_id.clone()))?;
    let period = find(&schema.period).ok_or_else(|| Error::MissingColumn(schema.period.clone()))?;
    let treated =
        find(&schema.treated).ok_or_else(|| Error::MissingColumn(schema.treated.clone()))?;
    let actual = find(&schema.actual);
    let predicted = find(&schema.predicted);
    if actual.is_none() && predicted.is_none() {
        return Err(Error::MissingColumn(format!(
            "{} (or {})",
            schema.actual, schema.predicted
        )));
    }
    Ok(HeaderIndex {
        unit,
        period,
        treated,
        actual,
        predicted,
    })
}

/// Load a comma-separated panel with a header row.
///
/// Rows with empty outcome cells are retained with the corresponding field
/// unset; such units simply never qualify as complete.
pub fn load_panel<R: Read>(reader: R, schema: &PanelSchema) -> Result<PanelDataset> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let idx = index_headers(csv_reader.headers()?, schema)?;

    let mut rows = Vec::new();
    for (i, record) in csv_reader.records().enumerate() {
        let record = record?;
        let row = i + 2; // 1-based, after the header line
        let get = |col: usize| record.get(col).unwrap_or("");
        rows.push(RawRow {
            unit_label: get(idx.unit).trim().to_string(),
            period_label: parse_period(get(idx.period), row, &schema.period)?,
            treated: parse_treated(get(idx.treated), row, &schema.treated)?,
            actual: match idx.actual {
                Some(c) => parse_outcome(get(c), row, &schema.actual)?,
                None => None,
            },
            predicted: match idx.predicted {
                Some(c) => parse_outcome(get(c), row, &schema.predicted)?,
                None => None,
            },
        });
    }
    PanelDataset::from_raw_rows(rows)
}

pub fn load_panel_path(path: &std::path::Path, schema: &PanelSchema) -> Result<PanelDataset> {
    load_panel(std::fs::File::open(path)?, schema)
}

/// Multi-model panel: shared unit/period/treated/actual columns plus one
/// prediction column per candidate model (`<predicted>_<name>`, or the bare
/// `<predicted>` column as model "default").
#[derive(Debug)]
pub struct MultiModelPanel {
    pub model_names: Vec<String>,
    /// One dataset per model, aligned with `model_names`.
    pub panels: Vec<PanelDataset>,
}

pub fn load_panel_models<R: Read>(reader: R, schema: &PanelSchema) -> Result<MultiModelPanel> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let unit = find(&schema.unit_id).ok_or_else(|| Error::MissingColumn(schema.unit_id.clone()))?;
    let period = find(&schema.period).ok_or_else(|| Error::MissingColumn(schema.period.clone()))?;
    let treated =
        find(&schema.treated).ok_or_else(|| Error::MissingColumn(schema.treated.clone()))?;
    let actual = find(&schema.actual).ok_or_else(|| Error::MissingColumn(schema.actual.clone()))?;

    let prefix = format!("{}_", schema.predicted);
    let mut model_cols: Vec<(String, usize)> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if h == schema.predicted {
            model_cols.push(("default".to_string(), i));
        } else if let Some(name) = h.strip_prefix(&prefix) {
            if !name.is_empty() {
                model_cols.push((name.to_string(), i));
            }
        }
    }
    if model_cols.is_empty() {
        return Err(Error::MissingColumn(format!(
            "no prediction columns found ({} or {}<name>)",
            schema.predicted, prefix
        )));
    }

    let mut base_rows: Vec<RawRow> = Vec::new();
    let mut model_values: Vec<Vec<Option<f64>>> = vec![Vec::new(); model_cols.len()];
    for (i, record) in csv_reader.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let get = |col: usize| record.get(col).unwrap_or("");
        base_rows.push(RawRow {
            unit_label: get(unit).trim().to_string(),
            period_label: parse_period(get(period), row, &schema.period)?,
            treated: parse_treated(get(treated), row, &schema.treated)?,
            actual: parse_outcome(get(actual), row, &schema.actual)?,
            predicted: None,
        });
        for (slot, (name, col)) in model_values.iter_mut().zip(&model_cols) {
            slot.push(parse_outcome(get(*col), row, name)?);
        }
    }

    let mut panels = Vec::with_capacity(model_cols.len());
    for values in &model_values {
        let rows = base_rows
            .iter()
            .zip(values)
            .map(|(r, v)| RawRow {
                predicted: *v,
                ..r.clone()
            })
            .collect();
        panels.push(PanelDataset::from_raw_rows(rows)?);
    }
    Ok(MultiModelPanel {
        model_names: model_cols.into_iter().map(|(n, _)| n).collect(),
        panels,
    })
}

/// Write the panel back out in the same delimited format.
///
/// Outcome values use the shortest representation that round-trips f64
/// exactly, so load -> export -> load is lossless.
pub fn export_panel<W: Write>(writer: W, data: &PanelDataset, schema: &PanelSchema) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    w.write_record([
        schema.unit_id.as_str(),
        schema.period.as_str(),
        schema.treated.as_str(),
        schema.actual.as_str(),
        schema.predicted.as_str(),
    ])?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for u in data.unit_ids() {
        for r in data.unit_records(u) {
            w.write_record([
                data.unit_label(u).as_ref(),
                &data.period_labels[(r.period - 1) as usize].to_string(),
                if r.treated { "1" } else { "0" },
                &fmt(r.actual),
                &fmt(r.predicted),
            ])?;
        }
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

impl PanelDataset {
    /// Datasets are equal when they hold the same observations under the same
    /// labels, regardless of construction path.
    pub fn same_observations(&self, other: &PanelDataset) -> bool {
        if self.n_units() != other.n_units()
            || self.n_periods != other.n_periods
            || self.records.len() != other.records.len()
        {
            return false;
        }
        for (u1, u2) in self.unit_ids().zip(other.unit_ids()) {
            if self.unit_label(u1) != other.unit_label(u2) {
                return false;
            }
            let (r1, r2) = (self.unit_records(u1), other.unit_records(u2));
            if r1.len() != r2.len() {
                return false;
            }
            for (a, b) in r1.iter().zip(r2) {
                if a.period != b.period
                    || a.treated != b.treated
                    || a.actual != b.actual
                    || a.predicted != b.predicted
                {
                    return false;
                }
            }
        }
        true
    }
}
