//! Range-based volatility, panel assembly and rolling windows.

use std::io::{Read, Write};

use chrono::NaiveDate;
use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::demean_columns;

/// One daily open/high/low/close observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OhlcBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

impl OhlcBar {
    pub fn new(date: NaiveDate, open: f64, high: f64, low: f64, close: f64) -> Result<Self> {
        let bar = OhlcBar {
            date,
            open,
            high,
            low,
            close,
        };
        bar.validate()?;
        Ok(bar)
    }

    pub fn validate(&self) -> Result<()> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::Domain(format!(
                "{}: prices must be positive and finite, got {prices:?}",
                self.date
            )));
        }
        if self.high < self.open.max(self.close) || self.low > self.open.min(self.close) {
            return Err(Error::Domain(format!(
                "{}: high/low do not bracket open/close ({prices:?})",
                self.date
            )));
        }
        Ok(())
    }
}

/// Garman–Klass style daily variance from log prices, clamped at zero.
pub fn range_volatility(bar: &OhlcBar) -> Result<f64> {
    let prices = [bar.open, bar.high, bar.low, bar.close];
    if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
        return Err(Error::Domain(format!(
            "{}: non-positive price in {prices:?}",
            bar.date
        )));
    }
    // everything is expressed relative to the log open, which cancels exactly
    let o = bar.open.ln();
    let h = bar.high.ln() - o;
    let l = bar.low.ln() - o;
    let c = bar.close.ln() - o;
    let var = 0.511 * (h - l).powi(2) - 0.019 * (c * (h + l) - 2.0 * h * l) - 0.383 * c * c;
    Ok(var.max(0.0))
}

/// Optional transform applied to daily volatilities before modelling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolatilityTransform {
    #[default]
    Raw,
    Log,
}

impl VolatilityTransform {
    pub fn apply(self, value: f64) -> Result<f64> {
        match self {
            VolatilityTransform::Raw => Ok(value),
            VolatilityTransform::Log if value > 0.0 => Ok(value.ln()),
            VolatilityTransform::Log => Err(Error::Domain(format!(
                "log transform of non-positive value {value}"
            ))),
        }
    }
}

/// A `T × N` panel with a strictly increasing date index.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    values: DMatrix<f64>,
    dates: Vec<NaiveDate>,
    names: Vec<String>,
}

impl Panel {
    pub fn new(values: DMatrix<f64>, dates: Vec<NaiveDate>, names: Vec<String>) -> Result<Self> {
        let (t, n) = values.shape();
        if t == 0 || n == 0 {
            return Err(Error::InvalidParameter(
                "panel must have T >= 1 and N >= 1".into(),
            ));
        }
        if dates.len() != t {
            return Err(Error::Dimension {
                context: "panel dates",
                expected: t,
                actual: dates.len(),
            });
        }
        if names.len() != n {
            return Err(Error::Dimension {
                context: "panel names",
                expected: n,
                actual: names.len(),
            });
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(format!(
                "panel dates must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("panel values"));
        }
        Ok(Panel {
            values,
            dates,
            names,
        })
    }

    /// Panel with synthetic consecutive dates starting 2000-01-01 and names `s1…sN`.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
        let dates = (0..values.nrows())
            .map(|i| start + chrono::Days::new(i as u64))
            .collect();
        let names = (1..=values.ncols()).map(|i| format!("s{i}")).collect();
        Panel::new(values, dates, names)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    pub fn last_date(&self) -> NaiveDate {
        *self.dates.last().expect("panel is nonempty")
    }

    /// Column-demeaned copy of the values.
    pub fn demeaned(&self) -> DMatrix<f64> {
        demean_columns(&self.values)
    }

    /// Rows `start..end` as a new panel.
    pub fn slice(&self, start: usize, end: usize) -> Result<Panel> {
        if start >= end || end > self.n_obs() {
            return Err(Error::InvalidParameter(format!(
                "row range {start}..{end} outside panel of {} rows",
                self.n_obs()
            )));
        }
        Ok(Panel {
            values: self.values.rows(start, end - start).into_owned(),
            dates: self.dates[start..end].to_vec(),
            names: self.names.clone(),
        })
    }

    /// Columns reordered by `perm` (column `k` of the result is `perm[k]` of self).
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Panel> {
        let n = self.n_series();
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::InvalidParameter(
                "not a permutation of the columns".into(),
            ));
        }
        let values = DMatrix::from_fn(self.n_obs(), n, |t, k| self.values[(t, perm[k])]);
        let names = perm.iter().map(|&p| self.names[p].clone()).collect();
        Panel::new(values, self.dates.clone(), names)
    }

    /// Write as wide CSV: `date` then one column per series.
    pub fn write_wide_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (t, date) in self.dates.iter().enumerate() {
            let mut row = vec![date.to_string()];
            row.extend((0..self.n_series()).map(|k| self.values[(t, k)].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Daily observations per series, in input order.
pub type SeriesMap = IndexMap<String, Vec<(NaiveDate, f64)>>;

/// Inner-join series on the dates they all share.
pub fn assemble_panel(series: &SeriesMap) -> Result<Panel> {
    if series.is_empty() {
        return Err(Error::Assembly("no series supplied".into()));
    }
    let mut sorted: Vec<Vec<(NaiveDate, f64)>> = Vec::with_capacity(series.len());
    for (name, obs) in series {
        if obs.is_empty() {
            return Err(Error::Assembly(format!("series '{name}' is empty")));
        }
        let mut obs = obs.clone();
        obs.sort_by_key(|(d, _)| *d);
        if let Some(w) = obs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Assembly(format!(
                "series '{name}' has duplicate date {}",
                w[0].0
            )));
        }
        sorted.push(obs);
    }

    let mut common: Vec<NaiveDate> = sorted[0].iter().map(|(d, _)| *d).collect();
    for obs in &sorted[1..] {
        let mut i = 0;
        common.retain(|d| {
            while i < obs.len() && obs[i].0 < *d {
                i += 1;
            }
            i < obs.len() && obs[i].0 == *d
        });
    }
    if common.is_empty() {
        let ranges = series
            .iter()
            .zip(&sorted)
            .map(|((name, _), obs)| format!("{name}: {}..{}", obs[0].0, obs[obs.len() - 1].0))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Assembly(format!(
            "no date common to every series ({ranges})"
        )));
    }

    let mut values = DMatrix::zeros(common.len(), series.len());
    for (k, obs) in sorted.iter().enumerate() {
        let mut i = 0;
        for (t, d) in common.iter().enumerate() {
            while obs[i].0 < *d {
                i += 1;
            }
            values[(t, k)] = obs[i].1;
        }
    }
    Panel::new(values, common, series.keys().cloned().collect())
}

/// Window length and stride for rolling estimation, in rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollingWindowSpec {
    pub window_length: usize,
    pub step: usize,
}

impl RollingWindowSpec {
    pub fn new(window_length: usize, step: usize) -> Result<Self> {
        if window_length == 0 || step == 0 {
            return Err(Error::InvalidParameter(
                "window_length and step must be positive".into(),
            ));
        }
        Ok(RollingWindowSpec {
            window_length,
            step,
        })
    }

    /// Number of windows over a panel of `t` rows.
    pub fn count(&self, t: usize) -> usize {
        if self.window_length > t {
            0
        } else {
            (t - self.window_length) / self.step + 1
        }
    }
}

/// A window slice labelled by its final date.
#[derive(Debug, Clone)]
pub struct Window {
    pub index: usize,
    pub end_date: NaiveDate,
    pub panel: Panel,
}

pub fn rolling_windows(panel: &Panel, spec: RollingWindowSpec) -> Result<Vec<Window>> {
    if spec.window_length == 0 || spec.step == 0 {
        return Err(Error::InvalidParameter(
            "window_length and step must be positive".into(),
        ));
    }
    if spec.window_length > panel.n_obs() {
        return Err(Error::InvalidParameter(format!(
            "window length {} exceeds panel length {}",
            spec.window_length,
            panel.n_obs()
        )));
    }
    (0..spec.count(panel.n_obs()))
        .map(|index| {
            let start = index * spec.step;
            let slice = panel.slice(start, start + spec.window_length)?;
            Ok(Window {
                index,
                end_date: slice.last_date(),
                panel: slice,
            })
        })
        .collect()
}

/// Layout of a long-form input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    /// `date,name,open,high,low,close`
    Ohlc,
    /// `date,name,value`
    Values,
}

/// Read a long-form CSV into per-series observations.
pub fn read_long_csv<R: Read>(
    reader: R,
    kind: InputKind,
    transform: VolatilityTransform,
) -> Result<SeriesMap> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let wanted: &[&str] = match kind {
        InputKind::Ohlc => &["date", "name", "open", "high", "low", "close"],
        InputKind::Values => &["date", "name", "value"],
    };
    let idx: Vec<usize> = wanted
        .iter()
        .map(|w| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(w))
                .ok_or_else(|| Error::Assembly(format!("input is missing column '{w}'")))
        })
        .collect::<Result<_>>()?;

    let mut out = SeriesMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(idx[i]).unwrap_or("");
        let row = line + 2;
        let date = NaiveDate::parse_from_str(field(0), "%Y-%m-%d")
            .map_err(|e| Error::Assembly(format!("row {row}: bad date '{}': {e}", field(0))))?;
        let number = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|e| Error::Assembly(format!("row {row}: bad number '{}': {e}", field(i))))
        };
        let value = match kind {
            InputKind::Ohlc => {
                let bar = OhlcBar::new(date, number(2)?, number(3)?, number(4)?, number(5)?)
                    .map_err(|e| Error::Domain(format!("row {row} ({}): {e}", field(1))))?;
                range_volatility(&bar)?
            }
            InputKind::Values => number(2)?,
        };
        let value = transform
            .apply(value)
            .map_err(|e| Error::Domain(format!("row {row} ({}): {e}", field(1))))?;
        out.entry(field(1).to_string())
            .or_default()
            .push((date, value));
    }
    Ok(out)
}
