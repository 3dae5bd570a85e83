//! Return-panel ingestion: CSV loading, price-to-return conversion,
//! alignment checks and date slicing.
//!
//! A [`ReturnsPanel`] is the immutable N x T table of simple returns that
//! every downstream stage consumes. Dates are opaque ordered identifiers
//! (ISO-8601 strings compare correctly as text); no calendar arithmetic is
//! performed anywhere.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use crate::mat::Mat;

/// Sector/industry label pair attached to an asset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssetLabel {
    pub sector: String,
    pub industry: String,
}

#[derive(Debug, thiserror::Error)]
pub enum PanelError {
    #[error("panel needs at least 2 assets, found {0}")]
    TooFewAssets(usize),
    #[error("panel needs at least 2 dates, found {0}")]
    TooFewDates(usize),
    #[error("duplicate asset id {0:?}")]
    DuplicateAsset(String),
    #[error("dates not strictly increasing at position {index} ({date:?})")]
    DatesNotIncreasing { index: usize, date: String },
    #[error("asset {asset:?} has {found} values, expected {expected}")]
    RowLength {
        asset: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value for asset {asset:?} at date {date:?}")]
    NonFinite { asset: String, date: String },
    #[error("label references unknown asset id {0:?}")]
    UnknownLabelId(String),
    #[error("duplicate cell for asset {asset:?} at date {date:?}")]
    DuplicateCell { asset: String, date: String },
    #[error("cannot parse {text:?} as a number (row {row}, column {col})")]
    ParseValue {
        row: usize,
        col: usize,
        text: String,
    },
    #[error("missing value for asset {asset:?} at date {date:?} (strict mode)")]
    MissingValue { asset: String, date: String },
    #[error("non-positive price {value} for asset {asset:?} at index {index}")]
    NonPositivePrice {
        asset: String,
        index: usize,
        value: f64,
    },
    #[error("price series needs at least 2 points, found {0}")]
    PriceSeriesTooShort(usize),
    #[error("date range [{start:?}, {end:?}] does not intersect the panel")]
    EmptySlice { start: String, end: String },
    #[error("start date {start:?} is after end date {end:?}")]
    InvertedRange { start: String, end: String },
    #[error("csv file has no usable rows")]
    EmptyFile,
    #[error("expected {expected} columns, found {found} (row {row})")]
    ColumnCount {
        expected: usize,
        found: usize,
        row: usize,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable panel of simple returns for N assets over T dates.
#[derive(Debug, Clone)]
pub struct ReturnsPanel {
    asset_ids: Vec<String>,
    dates: Vec<String>,
    returns: Mat,
    labels: Option<BTreeMap<String, AssetLabel>>,
}

impl ReturnsPanel {
    /// Validates all invariants and builds a panel. `rows` is one return
    /// series per asset, aligned with `dates`.
    pub fn new(
        asset_ids: Vec<String>,
        dates: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Option<BTreeMap<String, AssetLabel>>,
    ) -> Result<Self, PanelError> {
        if asset_ids.len() < 2 {
            return Err(PanelError::TooFewAssets(asset_ids.len()));
        }
        if dates.len() < 2 {
            return Err(PanelError::TooFewDates(dates.len()));
        }
        let mut seen = HashSet::new();
        for id in &asset_ids {
            if !seen.insert(id.as_str()) {
                return Err(PanelError::DuplicateAsset(id.clone()));
            }
        }
        for (i, pair) in dates.windows(2).enumerate() {
            if pair[1] <= pair[0] {
                return Err(PanelError::DatesNotIncreasing {
                    index: i + 1,
                    date: pair[1].clone(),
                });
            }
        }
        if rows.len() != asset_ids.len() {
            return Err(PanelError::RowLength {
                asset: "<panel>".into(),
                expected: asset_ids.len(),
                found: rows.len(),
            });
        }
        for (id, row) in asset_ids.iter().zip(&rows) {
            if row.len() != dates.len() {
                return Err(PanelError::RowLength {
                    asset: id.clone(),
                    expected: dates.len(),
                    found: row.len(),
                });
            }
            for (t, value) in row.iter().enumerate() {
                if !value.is_finite() {
                    return Err(PanelError::NonFinite {
                        asset: id.clone(),
                        date: dates[t].clone(),
                    });
                }
            }
        }
        if let Some(labels) = &labels {
            for id in labels.keys() {
                if !seen.contains(id.as_str()) {
                    return Err(PanelError::UnknownLabelId(id.clone()));
                }
            }
        }
        Ok(ReturnsPanel {
            asset_ids,
            dates,
            returns: Mat::from_rows(&rows),
            labels,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    /// Full return series of asset `i`, aligned with `dates()`.
    #[inline]
    pub fn series(&self, i: usize) -> &[f64] {
        self.returns.row(i)
    }

    pub fn value(&self, i: usize, t: usize) -> f64 {
        self.returns.get(i, t)
    }

    pub fn labels(&self) -> Option<&BTreeMap<String, AssetLabel>> {
        self.labels.as_ref()
    }

    pub fn label_of(&self, asset_id: &str) -> Option<&AssetLabel> {
        self.labels.as_ref().and_then(|m| m.get(asset_id))
    }

    pub fn index_of(&self, asset_id: &str) -> Option<usize> {
        self.asset_ids.iter().position(|id| id == asset_id)
    }

    /// Sub-panel with dates in `[start_date, end_date]` (inclusive, text
    /// order). Asset order and labels are preserved.
    pub fn slice(&self, start_date: &str, end_date: &str) -> Result<ReturnsPanel, PanelError> {
        if start_date > end_date {
            return Err(PanelError::InvertedRange {
                start: start_date.into(),
                end: end_date.into(),
            });
        }
        let lo = self.dates.partition_point(|d| d.as_str() < start_date);
        let hi = self.dates.partition_point(|d| d.as_str() <= end_date);
        if lo >= hi {
            return Err(PanelError::EmptySlice {
                start: start_date.into(),
                end: end_date.into(),
            });
        }
        let dates = self.dates[lo..hi].to_vec();
        let rows: Vec<Vec<f64>> = (0..self.n_assets())
            .map(|i| self.series(i)[lo..hi].to_vec())
            .collect();
        ReturnsPanel::new(self.asset_ids.clone(), dates, rows, self.labels.clone())
    }

    /// Writes the panel in the canonical wide layout (`date` column first,
    /// one column per asset, full-precision values).
    pub fn write_wide_csv(&self, path: &Path) -> Result<(), PanelError> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_string()];
        header.extend(self.asset_ids.iter().cloned());
        writer.write_record(&header)?;
        for (t, date) in self.dates.iter().enumerate() {
            let mut record = vec![date.clone()];
            for i in 0..self.n_assets() {
                record.push(format!("{}", self.value(i, t)));
            }
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Simple returns from a strictly positive price series:
/// `out[t-1] = (p[t] - p[t-1]) / p[t-1]`.
pub fn prices_to_returns(prices: &[f64]) -> Result<Vec<f64>, PanelError> {
    prices_to_returns_named(prices, "<series>")
}

fn prices_to_returns_named(prices: &[f64], asset: &str) -> Result<Vec<f64>, PanelError> {
    if prices.len() < 2 {
        return Err(PanelError::PriceSeriesTooShort(prices.len()));
    }
    for (index, &value) in prices.iter().enumerate() {
        if !(value.is_finite() && value > 0.0) {
            return Err(PanelError::NonPositivePrice {
                asset: asset.into(),
                index,
                value,
            });
        }
    }
    Ok(prices
        .windows(2)
        .map(|pair| (pair[1] - pair[0]) / pair[0])
        .collect())
}

/// Whether the input file holds prices (converted on load) or returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    Prices,
    Returns,
}

/// CSV shape: wide (one column per asset) or long (`date,asset_id,value`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvLayout {
    Wide,
    Long,
}

/// What to do with assets that have missing values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// Reject the whole file on the first missing cell.
    #[default]
    Strict,
    /// Drop incomplete assets and report them.
    DropAssets,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub kind: ValueKind,
    pub layout: CsvLayout,
    pub missing: MissingPolicy,
}

/// A loaded panel plus the ids dropped under [`MissingPolicy::DropAssets`].
#[derive(Debug)]
pub struct LoadedPanel {
    pub panel: ReturnsPanel,
    pub dropped: Vec<String>,
}

/// Loads a panel from CSV. Wide layout: header row `date,<asset>,...`, one
/// row per date. Long layout: header row then `date,asset_id,value`
/// records in any order. Prices are converted with [`prices_to_returns`],
/// consuming the first date.
pub fn load_panel(path: &Path, options: &LoadOptions) -> Result<LoadedPanel, PanelError> {
    let table = match options.layout {
        CsvLayout::Wide => read_wide(path)?,
        CsvLayout::Long => read_long(path)?,
    };
    finish_load(table, options)
}

/// Loads `asset_id,sector,industry` records and attaches them to the
/// panel. Label rows for assets outside the panel are ignored.
pub fn attach_labels(panel: ReturnsPanel, labels_path: &Path) -> Result<ReturnsPanel, PanelError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(labels_path)?;
    let mut labels = BTreeMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() < 3 {
            return Err(PanelError::ColumnCount {
                expected: 3,
                found: record.len(),
                row: row + 2,
            });
        }
        let id = record[0].trim().to_string();
        if panel.index_of(&id).is_some() {
            labels.insert(
                id,
                AssetLabel {
                    sector: record[1].trim().to_string(),
                    industry: record[2].trim().to_string(),
                },
            );
        }
    }
    let labels = if labels.is_empty() { None } else { Some(labels) };
    ReturnsPanel::new(
        panel.asset_ids.clone(),
        panel.dates.clone(),
        (0..panel.n_assets())
            .map(|i| panel.series(i).to_vec())
            .collect(),
        labels,
    )
}

/// Intermediate parse result: dates in final order, per-asset sparse cells.
struct RawTable {
    asset_ids: Vec<String>,
    dates: Vec<String>,
    /// cells[asset][date_index] = value
    cells: Vec<Vec<Option<f64>>>,
}

fn parse_cell(text: &str, row: usize, col: usize) -> Result<Option<f64>, PanelError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    trimmed
        .parse::<f64>()
        .map(Some)
        .map_err(|_| PanelError::ParseValue {
            row,
            col,
            text: text.to_string(),
        })
}

fn read_wide(path: &Path) -> Result<RawTable, PanelError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 {
        return Err(PanelError::EmptyFile);
    }
    let asset_ids: Vec<String> = headers.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut dates: Vec<String> = Vec::new();
    let mut cells: Vec<Vec<Option<f64>>> = vec![Vec::new(); asset_ids.len()];
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = idx + 2; // 1-based, counting the header
        if record.len() != headers.len() {
            return Err(PanelError::ColumnCount {
                expected: headers.len(),
                found: record.len(),
                row,
            });
        }
        let date = record[0].trim().to_string();
        if let Some(last) = dates.last() {
            if date == *last {
                return Err(PanelError::DuplicateCell {
                    asset: asset_ids[0].clone(),
                    date,
                });
            }
            if date < *last {
                return Err(PanelError::DatesNotIncreasing {
                    index: dates.len(),
                    date,
                });
            }
        }
        dates.push(date);
        for (col, field) in record.iter().skip(1).enumerate() {
            cells[col].push(parse_cell(field, row, col + 2)?);
        }
    }
    Ok(RawTable {
        asset_ids,
        dates,
        cells,
    })
}

fn read_long(path: &Path) -> Result<RawTable, PanelError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    // (asset, date) -> value, plus first-appearance order for assets
    let mut asset_ids: Vec<String> = Vec::new();
    let mut asset_index: HashMap<String, usize> = HashMap::new();
    let mut date_set: HashSet<String> = HashSet::new();
    let mut entries: HashMap<(usize, String), f64> = HashMap::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = idx + 2;
        if record.len() < 3 {
            return Err(PanelError::ColumnCount {
                expected: 3,
                found: record.len(),
                row,
            });
        }
        let date = record[0].trim().to_string();
        let asset = record[1].trim().to_string();
        let value = parse_cell(&record[2], row, 3)?;
        let ai = *asset_index.entry(asset.clone()).or_insert_with(|| {
            asset_ids.push(asset.clone());
            asset_ids.len() - 1
        });
        date_set.insert(date.clone());
        let Some(value) = value else {
            continue; // empty cell in long layout = missing observation
        };
        if entries.insert((ai, date.clone()), value).is_some() {
            return Err(PanelError::DuplicateCell { asset, date });
        }
    }
    if asset_ids.is_empty() || date_set.is_empty() {
        return Err(PanelError::EmptyFile);
    }
    let mut dates: Vec<String> = date_set.into_iter().collect();
    dates.sort_unstable();
    let cells: Vec<Vec<Option<f64>>> = (0..asset_ids.len())
        .map(|ai| {
            dates
                .iter()
                .map(|d| entries.get(&(ai, d.clone())).copied())
                .collect()
        })
        .collect();
    Ok(RawTable {
        asset_ids,
        dates,
        cells,
    })
}

fn finish_load(table: RawTable, options: &LoadOptions) -> Result<LoadedPanel, PanelError> {
    if table.dates.len() < 2 {
        return Err(PanelError::TooFewDates(table.dates.len()));
    }
    let mut kept_ids: Vec<String> = Vec::new();
    let mut kept_rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped: Vec<String> = Vec::new();
    for (id, cells) in table.asset_ids.iter().zip(&table.cells) {
        match cells.iter().position(Option::is_none) {
            None => {
                kept_ids.push(id.clone());
                kept_rows.push(cells.iter().map(|v| v.unwrap()).collect());
            }
            Some(t) => match options.missing {
                MissingPolicy::Strict => {
                    return Err(PanelError::MissingValue {
                        asset: id.clone(),
                        date: table.dates[t].clone(),
                    });
                }
                MissingPolicy::DropAssets => dropped.push(id.clone()),
            },
        }
    }
    let (dates, rows) = match options.kind {
        ValueKind::Returns => (table.dates, kept_rows),
        ValueKind::Prices => {
            let mut converted = Vec::with_capacity(kept_rows.len());
            for (id, prices) in kept_ids.iter().zip(&kept_rows) {
                converted.push(prices_to_returns_named(prices, id)?);
            }
            (table.dates[1..].to_vec(), converted)
        }
    };
    let panel = ReturnsPanel::new(kept_ids, dates, rows, None)?;
    Ok(LoadedPanel { panel, dropped })
}
