//! Hourly transaction features and fixed-length windows for the autoencoder.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::TxRecord;
use crate::stats;

pub const HOUR: u64 = 3600;
pub const N_FEATURES: usize = 8;
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "tx_count",
    "internal_tx_count",
    "unique_senders",
    "unique_receivers",
    "total_value_wei",
    "mean_gas_used",
    "mean_gas_price",
    "failed_tx_count",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyWindow {
    pub contract_address: String,
    pub hour_start: u64,
    pub features: [f64; N_FEATURES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowTensor {
    pub contract_address: String,
    pub start_hour: u64,
    /// `W` rows of `N_FEATURES` values, oldest hour first.
    pub window: Vec<Vec<f64>>,
}

impl WindowTensor {
    /// Channel-major `[F, W]` layout used by the convolutional model.
    pub fn channels(&self) -> Vec<f64> {
        let w = self.window.len();
        let f = self.window.first().map_or(0, Vec::len);
        let mut out = vec![0.0; f * w];
        for (t, row) in self.window.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                out[c * w + t] = *v;
            }
        }
        out
    }
}

fn hour_features(txs: &[&TxRecord]) -> [f64; N_FEATURES] {
    if txs.is_empty() {
        return [0.0; N_FEATURES];
    }
    let senders: HashSet<&str> = txs.iter().map(|t| t.from_addr.as_str()).collect();
    let receivers: HashSet<&str> = txs.iter().map(|t| t.to_addr.as_str()).collect();
    let n = txs.len() as f64;
    let priced: Vec<f64> = txs
        .iter()
        .filter(|t| !t.is_internal)
        .map(|t| t.gas_price as f64)
        .collect();
    [
        n,
        txs.iter().filter(|t| t.is_internal).count() as f64,
        senders.len() as f64,
        receivers.len() as f64,
        txs.iter().map(|t| t.value as f64).sum(),
        txs.iter().map(|t| t.gas_used as f64).sum::<f64>() / n,
        // internal calls carry no gas price of their own
        if priced.is_empty() { 0.0 } else { stats::mean(&priced) },
        txs.iter().filter(|t| t.is_error).count() as f64,
    ]
}

/// One row per hour from the first to the last transaction's hour inclusive;
/// silent hours are emitted as all-zero rows.
pub fn aggregate_hourly(address: &str, txs: &[TxRecord]) -> Vec<HourlyWindow> {
    let mut buckets: BTreeMap<u64, Vec<&TxRecord>> = BTreeMap::new();
    for t in txs {
        buckets.entry(t.timestamp / HOUR).or_default().push(t);
    }
    let (Some(&first), Some(&last)) = (buckets.keys().next(), buckets.keys().next_back()) else {
        return Vec::new();
    };
    (first..=last)
        .map(|h| HourlyWindow {
            contract_address: address.to_string(),
            hour_start: h * HOUR,
            features: hour_features(buckets.get(&h).map_or(&[][..], Vec::as_slice)),
        })
        .collect()
}

/// Per-feature Tukey fences `[Q1 − k·IQR, Q3 + k·IQR]`, fitted on active
/// hours only. Silent hours (all-zero rows) are neither used for the fit nor
/// ever dropped: for averaged features like gas used a zero sits far outside
/// any fence, and removing it would hide dormancy from the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierFences {
    pub lower: [f64; N_FEATURES],
    pub upper: [f64; N_FEATURES],
}

impl OutlierFences {
    pub fn fit(windows: &[HourlyWindow], k: f64) -> Result<Self> {
        let windows: Vec<&HourlyWindow> = windows.iter().filter(|w| !is_silent(w)).collect();
        if windows.len() < 4 {
            return Err(Error::InsufficientData(format!(
                "{} active windows; quartiles need at least 4",
                windows.len()
            )));
        }
        let mut lower = [0.0; N_FEATURES];
        let mut upper = [0.0; N_FEATURES];
        for f in 0..N_FEATURES {
            let mut col: Vec<f64> = windows.iter().map(|w| w.features[f]).collect();
            col.sort_by(f64::total_cmp);
            let q1 = stats::percentile_sorted(&col, 25.0);
            let q3 = stats::percentile_sorted(&col, 75.0);
            let iqr = q3 - q1;
            lower[f] = q1 - k * iqr;
            upper[f] = q3 + k * iqr;
        }
        Ok(OutlierFences { lower, upper })
    }

    pub fn contains(&self, w: &HourlyWindow) -> bool {
        is_silent(w)
            || w.features
            .iter()
            .enumerate()
            .all(|(f, &v)| v >= self.lower[f] && v <= self.upper[f])
    }
}

fn is_silent(w: &HourlyWindow) -> bool {
    w.features.iter().all(|&v| v == 0.0)
}

/// Drops windows with any feature outside the fences fitted on `windows`
/// itself. With fewer than 4 windows the input is returned unchanged.
pub fn remove_outlier_windows(windows: &[HourlyWindow], k: f64) -> Vec<HourlyWindow> {
    match OutlierFences::fit(windows, k) {
        Ok(fences) => windows.iter().filter(|w| fences.contains(w)).cloned().collect(),
        Err(_) => {
            log::warn!("outlier removal skipped: only {} windows", windows.len());
            windows.to_vec()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutlierScope {
    /// Fences fitted once over the whole reputable training population.
    Global,
    /// Fences fitted separately for each contract's own hours.
    PerContract,
}

/// Outlier removal over several contracts' hourly rows.
pub fn remove_outliers_scoped(
    series: &[Vec<HourlyWindow>],
    k: f64,
    scope: OutlierScope,
) -> Vec<Vec<HourlyWindow>> {
    match scope {
        OutlierScope::PerContract => series.iter().map(|s| remove_outlier_windows(s, k)).collect(),
        OutlierScope::Global => {
            let all: Vec<HourlyWindow> = series.iter().flatten().cloned().collect();
            match OutlierFences::fit(&all, k) {
                Ok(fences) => series
                    .iter()
                    .map(|s| s.iter().filter(|w| fences.contains(w)).cloned().collect())
                    .collect(),
                Err(_) => {
                    log::warn!("outlier removal skipped: only {} windows", all.len());
                    series.to_vec()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Population standard deviations.
    pub stds: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>], feature_names: &[&str]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InsufficientData("standardizer fit on empty set".into()));
        }
        let d = rows[0].len();
        if feature_names.len() != d || rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape {
                expected: format!("{} features", feature_names.len()),
                actual: format!("rows of width {d}"),
            });
        }
        let mut means = Vec::with_capacity(d);
        let mut stds = Vec::with_capacity(d);
        for f in 0..d {
            let col: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            means.push(stats::mean(&col));
            stds.push(stats::variance(&col).sqrt());
        }
        Ok(Standardizer {
            means,
            stds,
            feature_names: feature_names.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn fit_windows(windows: &[HourlyWindow]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = windows.iter().map(|w| w.features.to_vec()).collect();
        Self::fit(&rows, &FEATURE_NAMES)
    }

    /// `(x − μ)/σ`, with zero-variance features mapped to 0.
    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(&x, (&m, &s))| if s > 0.0 { (x - m) / s } else { 0.0 })
            .collect()
    }

    pub fn apply(&self, windows: &[HourlyWindow]) -> Vec<HourlyWindow> {
        windows
            .iter()
            .map(|w| {
                let mut out = w.clone();
                out.features.copy_from_slice(&self.transform_row(&w.features));
                out
            })
            .collect()
    }
}

/// Sliding windows of `w` consecutive hours. Series shorter than `w` yield a
/// single window front-padded with zero rows; an empty series yields none.
pub fn windowize(hourly: &[HourlyWindow], w: usize, stride: usize) -> Result<Vec<WindowTensor>> {
    if w == 0 || stride == 0 {
        return Err(Error::InvalidArgument("window and stride must be >= 1".into()));
    }
    let Some(first) = hourly.first() else {
        return Ok(Vec::new());
    };
    let address = first.contract_address.clone();
    let h = hourly.len();
    if h < w {
        let pad = w - h;
        let mut window = vec![vec![0.0; N_FEATURES]; pad];
        window.extend(hourly.iter().map(|r| r.features.to_vec()));
        return Ok(vec![WindowTensor {
            contract_address: address,
            start_hour: first.hour_start.saturating_sub(pad as u64 * HOUR),
            window,
        }]);
    }
    Ok((0..=(h - w) / stride)
        .map(|i| {
            let rows = &hourly[i * stride..i * stride + w];
            WindowTensor {
                contract_address: address.clone(),
                start_hour: rows[0].hour_start,
                window: rows.iter().map(|r| r.features.to_vec()).collect(),
            }
        })
        .collect())
}

/// `address,hour_start,<features>` rows.
pub fn write_hourly_csv<W: Write>(w: W, windows: &[HourlyWindow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["address", "hour_start"];
    header.extend(FEATURE_NAMES);
    wtr.write_record(&header)?;
    for win in windows {
        let mut rec = vec![win.contract_address.clone(), win.hour_start.to_string()];
        rec.extend(win.features.iter().map(|v| format!("{v:.17e}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_hourly_csv<R: std::io::Read>(r: R) -> Result<Vec<HourlyWindow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 2 + N_FEATURES {
            return Err(Error::Data(format!("hourly row has {} columns", rec.len())));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Data(format!("{s:?}: {e}")));
        let mut features = [0.0; N_FEATURES];
        for (f, slot) in features.iter_mut().enumerate() {
            *slot = parse(&rec[2 + f])?;
        }
        out.push(HourlyWindow {
            contract_address: rec[0].to_string(),
            hour_start: rec[1].parse().map_err(|e| Error::Data(format!("hour_start: {e}")))?,
            features,
        });
    }
    Ok(out)
}

pub fn write_tensors_jsonl<W: Write>(mut w: W, tensors: &[WindowTensor]) -> Result<()> {
    for t in tensors {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_tensors_jsonl<R: BufRead>(r: R) -> Result<Vec<WindowTensor>> {
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}
