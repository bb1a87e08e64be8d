//! Series ingestion, chronological splitting, z-scoring and windowing.

use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Multivariate series on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    /// Epoch seconds, strictly increasing with stride `freq_seconds`.
    pub timestamps: Vec<i64>,
    /// `rows = time steps`, `cols = channels`.
    pub values: Matrix,
    pub channel_names: Vec<String>,
    pub freq_seconds: i64,
}

impl SeriesFrame {
    /// Validates the grid and value invariants.
    pub fn new(
        timestamps: Vec<i64>,
        values: Matrix,
        channel_names: Vec<String>,
        freq_seconds: i64,
    ) -> Result<Self> {
        if freq_seconds <= 0 {
            return Err(Error::Config(format!(
                "freq_seconds must be positive, got {freq_seconds}"
            )));
        }
        if values.rows() != timestamps.len() {
            return Err(Error::shape(
                "SeriesFrame::new",
                format!("{} value rows", timestamps.len()),
                values.rows(),
            ));
        }
        if values.cols() != channel_names.len() {
            return Err(Error::shape(
                "SeriesFrame::new",
                format!("{} channel names", values.cols()),
                channel_names.len(),
            ));
        }
        check_uniform(&timestamps, freq_seconds)?;
        if !values.is_finite() {
            return Err(Error::Config("series contains NaN or Inf".into()));
        }
        Ok(Self {
            timestamps,
            values,
            channel_names,
            freq_seconds,
        })
    }

    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    /// Rows `start..end` as a new frame.
    pub fn slice(&self, start: usize, end: usize) -> SeriesFrame {
        SeriesFrame {
            timestamps: self.timestamps[start..end].to_vec(),
            values: self.values.slice_rows(start, end),
            channel_names: self.channel_names.clone(),
            freq_seconds: self.freq_seconds,
        }
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select_channels(&self, indices: &[usize]) -> Result<SeriesFrame> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.channels()) {
            return Err(Error::MissingColumn(format!("channel index {bad}")));
        }
        let values = Matrix::from_fn(self.rows(), indices.len(), |i, j| {
            self.values[(i, indices[j])]
        });
        Ok(SeriesFrame {
            timestamps: self.timestamps.clone(),
            values,
            channel_names: indices
                .iter()
                .map(|&i| self.channel_names[i].clone())
                .collect(),
            freq_seconds: self.freq_seconds,
        })
    }

    /// Writes the frame as CSV with an ISO-8601 timestamp column.
    pub fn write_csv(&self, path: &Path, timestamp_column: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![timestamp_column.to_string()];
        header.extend(self.channel_names.iter().cloned());
        w.write_record(&header)?;
        for (i, ts) in self.timestamps.iter().enumerate() {
            let mut rec = vec![format_iso(*ts)];
            rec.extend(self.values.row(i).iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn check_uniform(timestamps: &[i64], freq: i64) -> Result<()> {
    for (i, pair) in timestamps.windows(2).enumerate() {
        let gap = pair[1] - pair[0];
        if gap != freq {
            return Err(Error::NonUniformSampling {
                row: i + 1,
                gap,
                expected: freq,
            });
        }
    }
    Ok(())
}

/// Formats epoch seconds as `YYYY-MM-DDTHH:MM:SSZ` (UTC).
pub fn format_iso(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| ts.to_string())
}

/// Parses epoch integers or ISO-8601 date/time strings into epoch seconds.
/// Values without an offset are taken as UTC.
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let s = raw.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(d) = DateTime::parse_from_rfc3339(s) {
        return Some(d.timestamp());
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H:%M",
    ];
    for f in FORMATS {
        if let Ok(d) = NaiveDateTime::parse_from_str(s, f) {
            return Some(d.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|d| d.and_utc().timestamp())
}

/// Loads a CSV file with a header row; see [`read_csv`].
pub fn load_csv(path: &Path, timestamp_column: &str, freq_seconds: i64) -> Result<SeriesFrame> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, timestamp_column, freq_seconds).map_err(|e| match e {
        Error::EmptyFile(_) => Error::EmptyFile(path.to_path_buf()),
        other => other,
    })
}

/// Parses a CSV stream: one timestamp column, every other column a numeric
/// channel. Rows are sorted by time and must then sit on a uniform grid.
pub fn read_csv<R: Read>(reader: R, timestamp_column: &str, freq_seconds: i64) -> Result<SeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyFile(Default::default()));
    }
    let ts_idx = headers
        .iter()
        .position(|h| h.trim() == timestamp_column)
        .ok_or_else(|| Error::MissingColumn(timestamp_column.to_string()))?;
    let channel_idx: Vec<usize> = (0..headers.len()).filter(|&i| i != ts_idx).collect();
    let channel_names: Vec<String> = channel_idx
        .iter()
        .map(|&i| headers[i].trim().to_string())
        .collect();

    let mut rows: Vec<(i64, Vec<f64>)> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let raw_ts = rec.get(ts_idx).unwrap_or("");
        let ts = parse_timestamp(raw_ts).ok_or_else(|| Error::BadTimestamp {
            row: r,
            value: raw_ts.to_string(),
        })?;
        let mut vals = Vec::with_capacity(channel_idx.len());
        for (k, &ci) in channel_idx.iter().enumerate() {
            let cell = rec.get(ci).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| Error::NonNumericCell {
                row: r,
                column: channel_names[k].clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumericCell {
                    row: r,
                    column: channel_names[k].clone(),
                    value: cell.to_string(),
                });
            }
            vals.push(v);
        }
        rows.push((ts, vals));
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile(Default::default()));
    }
    rows.sort_by_key(|(ts, _)| *ts);
    let timestamps: Vec<i64> = rows.iter().map(|(t, _)| *t).collect();
    let c = channel_names.len();
    let mut data = Vec::with_capacity(rows.len() * c);
    for (_, v) in &rows {
        data.extend_from_slice(v);
    }
    let values = Matrix::from_vec(rows.len(), c, data)?;
    SeriesFrame::new(timestamps, values, channel_names, freq_seconds)
}

/// Chronological train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            val_fraction: 0.1,
            test_fraction: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fr.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::InvalidSplit(format!("fractions must lie in (0,1): {fr:?}")));
        }
        let sum: f64 = fr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!("fractions sum to {sum}")));
        }
        Ok(())
    }
}

// Guards against 0.7 * 10 = 6.999.. style products.
fn floor_fraction(fraction: f64, rows: usize) -> usize {
    (fraction * rows as f64 + 1e-9).floor() as usize
}

/// Splits into (train, val, test). Train and validation take
/// `floor(fraction * rows)` rows each; the remainder goes to test. Every
/// segment must hold at least `min_rows` rows (typically `T + H`).
pub fn chrono_split(
    frame: &SeriesFrame,
    spec: &SplitSpec,
    min_rows: usize,
) -> Result<(SeriesFrame, SeriesFrame, SeriesFrame)> {
    spec.validate()?;
    let n = frame.rows();
    let n_train = floor_fraction(spec.train_fraction, n);
    let n_val = floor_fraction(spec.val_fraction, n);
    let n_test = n - n_train - n_val;
    for (segment, rows) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        if rows < min_rows.max(1) {
            return Err(Error::SplitTooSmall {
                segment,
                rows,
                needed: min_rows.max(1),
            });
        }
    }
    Ok((
        frame.slice(0, n_train),
        frame.slice(n_train, n_train + n_val),
        frame.slice(n_train + n_val, n),
    ))
}

/// Chronological head holding `floor(fraction * rows)` rows.
pub fn few_shot_subset(train: &SeriesFrame, fraction: f64, min_rows: usize) -> Result<SeriesFrame> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidSplit(format!(
            "few-shot fraction must lie in (0,1], got {fraction}"
        )));
    }
    let rows = floor_fraction(fraction, train.rows()).min(train.rows());
    if rows < min_rows.max(1) {
        return Err(Error::SplitTooSmall {
            segment: "few-shot train",
            rows,
            needed: min_rows.max(1),
        });
    }
    Ok(train.slice(0, rows))
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn fit(train: &SeriesFrame) -> Result<Self> {
        fit_stats(train)
    }

    pub fn standardize(&self, frame: &SeriesFrame) -> Result<SeriesFrame> {
        standardize(frame, self)
    }

    pub fn destandardize(&self, m: &Matrix) -> Result<Matrix> {
        destandardize(m, self)
    }
}

pub fn fit_stats(train: &SeriesFrame) -> Result<ChannelStats> {
    let n = train.rows();
    if n == 0 {
        return Err(Error::FrameTooShort { rows: 0, needed: 1 });
    }
    let c = train.channels();
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    for j in 0..c {
        let col = train.values.column(j);
        let mu = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        // Relative floor so channels stuck at a large constant are still caught.
        if !(sd > 1e-12 * (1.0 + mu.abs())) {
            return Err(Error::ZeroVariance { channel: j });
        }
        mean[j] = mu;
        std[j] = sd;
    }
    Ok(ChannelStats { mean, std })
}

pub fn standardize(frame: &SeriesFrame, stats: &ChannelStats) -> Result<SeriesFrame> {
    if stats.mean.len() != frame.channels() {
        return Err(Error::shape(
            "standardize",
            format!("{} channels", stats.mean.len()),
            frame.channels(),
        ));
    }
    let values = Matrix::from_fn(frame.rows(), frame.channels(), |i, j| {
        (frame.values[(i, j)] - stats.mean[j]) / stats.std[j]
    });
    Ok(SeriesFrame {
        values,
        ..frame.clone()
    })
}

pub fn destandardize(m: &Matrix, stats: &ChannelStats) -> Result<Matrix> {
    if stats.mean.len() != m.cols() {
        return Err(Error::shape(
            "destandardize",
            format!("{} channels", stats.mean.len()),
            m.cols(),
        ));
    }
    Ok(Matrix::from_fn(m.rows(), m.cols(), |i, j| {
        m[(i, j)] * stats.std[j] + stats.mean[j]
    }))
}

/// One lookback/target pair cut from a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub lookback: Matrix,
    pub target: Matrix,
    pub lookback_timestamps: Vec<i64>,
    pub target_timestamps: Vec<i64>,
}

/// Number of windows `make_windows` would produce, or `None` if the frame is too short.
pub fn window_count(rows: usize, lookback: usize, horizon: usize, stride: usize) -> Option<usize> {
    let need = lookback + horizon;
    if rows < need || stride == 0 {
        return None;
    }
    Some((rows - need) / stride + 1)
}

fn check_window_args(lookback: usize, horizon: usize, stride: usize) -> Result<()> {
    if lookback == 0 || horizon == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "lookback, horizon and stride must be >= 1 (got {lookback}, {horizon}, {stride})"
        )));
    }
    Ok(())
}

/// Start row of every window, in source order.
pub fn window_starts(frame: &SeriesFrame, lookback: usize, horizon: usize, stride: usize) -> Result<Vec<usize>> {
    check_window_args(lookback, horizon, stride)?;
    let count = window_count(frame.rows(), lookback, horizon, stride).ok_or(Error::FrameTooShort {
        rows: frame.rows(),
        needed: lookback + horizon,
    })?;
    Ok((0..count).map(|k| k * stride).collect())
}

/// The window whose lookback starts at `start`.
pub fn window_at(frame: &SeriesFrame, start: usize, lookback: usize, horizon: usize) -> WindowSample {
    let mid = start + lookback;
    let end = mid + horizon;
    WindowSample {
        lookback: frame.values.slice_rows(start, mid),
        target: frame.values.slice_rows(mid, end),
        lookback_timestamps: frame.timestamps[start..mid].to_vec(),
        target_timestamps: frame.timestamps[mid..end].to_vec(),
    }
}

/// Sliding windows; count is `floor((rows - T - H) / stride) + 1`.
pub fn make_windows(
    frame: &SeriesFrame,
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<WindowSample>> {
    Ok(window_starts(frame, lookback, horizon, stride)?
        .into_iter()
        .map(|s| window_at(frame, s, lookback, horizon))
        .collect())
}

/// Checks `lookback >= w_1 >= ... >= w_M >= 1`.
pub fn validate_window_lengths(lookback: usize, lengths: &[usize]) -> Result<()> {
    if lengths.is_empty() || lengths.contains(&0) || lengths.windows(2).any(|p| p[1] > p[0]) {
        return Err(Error::NonDescendingWindows(lengths.to_vec()));
    }
    if lengths[0] > lookback {
        return Err(Error::WindowExceedsLookback {
            window: lengths[0],
            lookback,
        });
    }
    Ok(())
}

/// Suffix views of the lookback, one per expert: view `m` holds the most
/// recent `w_m` rows.
pub fn expert_views(lookback: &Matrix, window_lengths: &[usize]) -> Result<Vec<Matrix>> {
    validate_window_lengths(lookback.rows(), window_lengths)?;
    Ok(window_lengths.iter().map(|&w| lookback.tail_rows(w)).collect())
}

/// Geometric halving schedule `w_m = w_1 / 2^(m-1)`, floored at 8 (or at
/// `max_window` itself when that is smaller).
pub fn halving_schedule(max_window: usize, experts: usize) -> Vec<usize> {
    let floor = max_window.clamp(1, 8);
    (0..experts)
        .map(|m| (max_window >> m.min(63)).max(floor))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hourly(rows: usize, channels: usize) -> SeriesFrame {
        let ts: Vec<i64> = (0..rows as i64).map(|i| 1_467_331_200 + 3600 * i).collect();
        let values = Matrix::from_fn(rows, channels, |i, j| (i * channels + j) as f64);
        let names = (0..channels).map(|j| format!("c{j}")).collect();
        SeriesFrame::new(ts, values, names, 3600).unwrap()
    }

    #[test]
    fn reads_small_hourly_csv() {
        let text = "date,a,b\n2016-07-01 00:00:00,1,2\n2016-07-01 01:00:00,3,4\n2016-07-01 02:00:00,5,6\n2016-07-01 03:00:00,7,8\n";
        let f = read_csv(text.as_bytes(), "date", 3600).unwrap();
        assert_eq!(f.rows(), 4);
        assert_eq!(f.channels(), 2);
        assert_eq!(f.freq_seconds, 3600);
        assert_eq!(f.values.row(3), &[7.0, 8.0]);
        assert_eq!(f.channel_names, vec!["a", "b"]);
    }

    #[test]
    fn epoch_and_unsorted_rows_are_accepted() {
        let text = "ts,v\n7200,3\n0,1\n3600,2\n";
        let f = read_csv(text.as_bytes(), "ts", 3600).unwrap();
        assert_eq!(f.timestamps, vec![0, 3600, 7200]);
        assert_eq!(f.values.column(0), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn gap_is_rejected() {
        let text = "date,a\n2016-07-01T00:00:00,1\n2016-07-01T01:00:00,1\n2016-07-01T03:00:00,1\n";
        let err = read_csv(text.as_bytes(), "date", 3600).unwrap_err();
        assert!(matches!(err, Error::NonUniformSampling { gap: 7200, .. }), "{err}");
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            read_csv("x,a\n0,1\n".as_bytes(), "date", 1).unwrap_err(),
            Error::MissingColumn(_)
        ));
        assert!(matches!(
            read_csv("date,a\n0,abc\n".as_bytes(), "date", 1).unwrap_err(),
            Error::NonNumericCell { .. }
        ));
        assert!(matches!(
            read_csv("date,a\n".as_bytes(), "date", 1).unwrap_err(),
            Error::EmptyFile(_)
        ));
        assert!(matches!(
            read_csv("".as_bytes(), "date", 1).unwrap_err(),
            Error::EmptyFile(_)
        ));
    }

    #[test]
    fn split_sizes() {
        let f = hourly(100, 1);
        let (a, b, c) = chrono_split(&f, &SplitSpec::default(), 1).unwrap();
        assert_eq!((a.rows(), b.rows(), c.rows()), (70, 10, 20));
        assert!(a.timestamps.last() < b.timestamps.first());
        assert!(b.timestamps.last() < c.timestamps.first());

        // floor at each boundary, remainder to test
        let f = hourly(17_544, 1);
        let (a, b, c) = chrono_split(&f, &SplitSpec::default(), 1).unwrap();
        assert_eq!((a.rows(), b.rows(), c.rows()), (12_280, 1_754, 3_510));

        let f = hourly(10, 1);
        assert!(matches!(
            chrono_split(&f, &SplitSpec::default(), 20).unwrap_err(),
            Error::SplitTooSmall { .. }
        ));
    }

    #[test]
    fn few_shot_head() {
        let f = hourly(1000, 1);
        assert_eq!(few_shot_subset(&f, 0.1, 1).unwrap().rows(), 100);
        assert_eq!(few_shot_subset(&f, 1.0, 1).unwrap(), f);
        let f = hourly(12_280, 1);
        let head = few_shot_subset(&f, 0.1, 1).unwrap();
        assert_eq!(head.rows(), 1_228);
        assert_eq!(head.timestamps[0], f.timestamps[0]);
        assert!(few_shot_subset(&f, 0.0, 1).is_err());
        assert!(few_shot_subset(&hourly(50, 1), 0.1, 10).is_err());
    }

    #[test]
    fn zscore_hand_values() {
        let ts = vec![0, 1, 2];
        let v = Matrix::from_rows(&[[1.0], [2.0], [3.0]]);
        let f = SeriesFrame::new(ts, v, vec!["x".into()], 1).unwrap();
        let s = fit_stats(&f).unwrap();
        assert!((s.mean[0] - 2.0).abs() < 1e-15);
        assert!((s.std[0] - 0.816_496_580_927_726).abs() < 1e-12);
        let z = standardize(&f, &s).unwrap();
        let expect = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        for (got, want) in z.values.column(0).iter().zip(expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_channel_has_zero_variance() {
        let f = SeriesFrame::new(vec![0, 1, 2], Matrix::filled(3, 1, 5.0), vec!["x".into()], 1).unwrap();
        assert!(matches!(fit_stats(&f).unwrap_err(), Error::ZeroVariance { channel: 0 }));
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&hourly(10, 1), 4, 2, 1).unwrap().len(), 5);
        let one = make_windows(&hourly(6, 2), 4, 2, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].lookback.rows() + one[0].target.rows(), 6);
        assert_eq!(window_count(1000, 512, 96, 1), Some(393));
        assert!(matches!(
            make_windows(&hourly(5, 1), 4, 2, 1).unwrap_err(),
            Error::FrameTooShort { .. }
        ));
    }

    #[test]
    fn views_are_suffixes() {
        let lb = Matrix::from_fn(8, 1, |i, _| i as f64);
        let v = expert_views(&lb, &[8, 4, 2]).unwrap();
        assert_eq!(v.iter().map(Matrix::rows).collect::<Vec<_>>(), vec![8, 4, 2]);
        assert_eq!(v[2].column(0), vec![6.0, 7.0]);
        assert_eq!(expert_views(&lb, &[8]).unwrap()[0], lb);
        assert!(matches!(
            expert_views(&lb, &[4, 8]).unwrap_err(),
            Error::NonDescendingWindows(_)
        ));
        assert!(matches!(
            expert_views(&lb, &[16, 4]).unwrap_err(),
            Error::WindowExceedsLookback { .. }
        ));
        let lb = Matrix::zeros(512, 1);
        let v = expert_views(&lb, &halving_schedule(512, 5)).unwrap();
        assert_eq!(v.iter().map(Matrix::rows).collect::<Vec<_>>(), vec![512, 256, 128, 64, 32]);
    }

    #[test]
    fn schedule_floors_at_eight() {
        assert_eq!(halving_schedule(96, 3), vec![96, 48, 24]);
        assert_eq!(halving_schedule(32, 4), vec![32, 16, 8, 8]);
        assert_eq!(halving_schedule(6, 2), vec![6, 6]);
    }
}
