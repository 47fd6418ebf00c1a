//! Synthetic dataset generators, CSV ingestion, splitting, and
//! standardization. Generators are pure functions of their parameters and
//! seed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::stats;

/// Per-feature standardization statistics, recorded so downstream inputs
/// (anchors, fingerprints) stay expressible in the same coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// A labeled sample matrix. `soft_labels`, when present, carries one
/// teacher-logit row per sample and is what distillation trains against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_labels: Option<Vec<Vec<f64>>>,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormStats>,
}

impl Dataset {
    pub fn new(name: &str, inputs: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Self {
        Dataset {
            name: name.to_string(),
            inputs,
            labels,
            soft_labels: None,
            num_classes,
            normalization: None,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Feature dimension (0 for an empty dataset).
    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::Empty("dataset".into()));
        }
        if self.inputs.len() != self.labels.len() {
            return Err(Error::Shape {
                expected: format!("{} labels", self.inputs.len()),
                got: format!("{}", self.labels.len()),
            });
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "dataset needs at least 2 classes, got {}",
                self.num_classes
            )));
        }
        let d = self.dim();
        for (i, row) in self.inputs.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Shape {
                    expected: format!("row of dim {d}"),
                    got: format!("row {i} has dim {}", row.len()),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite input at row {i}")));
            }
        }
        if let Some(bad) = self.labels.iter().position(|&y| y >= self.num_classes) {
            return Err(Error::Index(format!(
                "label {} at row {bad} exceeds {} classes",
                self.labels[bad], self.num_classes
            )));
        }
        if let Some(soft) = &self.soft_labels {
            if soft.len() != self.inputs.len() {
                return Err(Error::Shape {
                    expected: format!("{} soft-label rows", self.inputs.len()),
                    got: format!("{}", soft.len()),
                });
            }
        }
        Ok(())
    }
}

/// Gaussian clusters around the given centers, `n_per_class` samples each,
/// class index = center index. Deterministic in `seed`.
pub fn gen_blobs(
    n_per_class: usize,
    centers: &[Vec<f64>],
    stddev: f64,
    seed: u64,
) -> Result<Dataset> {
    if centers.len() < 2 {
        return Err(Error::Config(format!(
            "gen_blobs needs at least 2 centers, got {}",
            centers.len()
        )));
    }
    if n_per_class == 0 {
        return Err(Error::Config("n_per_class must be positive".into()));
    }
    if stddev.is_nan() || stddev <= 0.0 {
        return Err(Error::Config(format!(
            "stddev must be positive, got {stddev}"
        )));
    }
    let d = centers[0].len();
    if centers.iter().any(|c| c.len() != d) {
        return Err(Error::Config("centers must share one dimension".into()));
    }
    let mut rng = Rng::from_seed(seed);
    let mut inputs = Vec::with_capacity(n_per_class * centers.len());
    let mut labels = Vec::with_capacity(n_per_class * centers.len());
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            let row: Vec<f64> = center.iter().map(|&c| c + stddev * rng.normal()).collect();
            inputs.push(row);
            labels.push(class);
        }
    }
    Ok(Dataset::new("blobs", inputs, labels, centers.len()))
}

/// Two interleaved half-circles of unit radius. Class 0 traces the upper
/// half-circle `(cos t, sin t)`; class 1 traces the lower half-circle
/// offset by `(1, 0.5)`, i.e. `(1 - cos t, 0.5 - sin t)`, with `t` evenly
/// spaced over `[0, pi]` plus isotropic Gaussian noise.
pub fn gen_two_moons(n_per_class: usize, noise_stddev: f64, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::Config("n_per_class must be positive".into()));
    }
    if noise_stddev < 0.0 {
        return Err(Error::Config(format!(
            "noise_stddev must be non-negative, got {noise_stddev}"
        )));
    }
    let mut rng = Rng::from_seed(seed);
    let n = n_per_class;
    let angle = |i: usize| {
        if n == 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (n - 1) as f64
        }
    };
    let mut inputs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(2 * n);
    for i in 0..n {
        let t = angle(i);
        inputs.push(vec![
            t.cos() + noise_stddev * rng.normal(),
            t.sin() + noise_stddev * rng.normal(),
        ]);
        labels.push(0);
    }
    for i in 0..n {
        let t = angle(i);
        inputs.push(vec![
            1.0 - t.cos() + noise_stddev * rng.normal(),
            0.5 - t.sin() + noise_stddev * rng.normal(),
        ]);
        labels.push(1);
    }
    Ok(Dataset::new("two_moons", inputs, labels, 2))
}

/// Parse a CSV of `d` feature columns followed by one integer label
/// column. The dimension is inferred from the first data row; the class
/// count is `max(label) + 1`, floored at 2.
pub fn load_csv(path: &Path, has_header: bool) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".to_string());
    parse_csv(&text, has_header, &name)
}

fn parse_csv(text: &str, has_header: bool, name: &str) -> Result<Dataset> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut dim: Option<usize> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line_display = lineno + 1;
        if has_header && lineno == 0 {
            continue;
        }
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() < 2 {
            return Err(Error::Parse {
                line: line_display,
                msg: format!("expected at least 2 columns, got {}", cells.len()),
            });
        }
        let d = cells.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expect) if expect != d => {
                return Err(Error::Parse {
                    line: line_display,
                    msg: format!("expected {expect} feature columns, got {d}"),
                });
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(d);
        for cell in &cells[..d] {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line: line_display,
                msg: format!("non-numeric cell {cell:?}"),
            })?;
            row.push(v);
        }
        let label: usize = cells[d].parse().map_err(|_| Error::Parse {
            line: line_display,
            msg: format!("non-integer label {:?}", cells[d]),
        })?;
        inputs.push(row);
        labels.push(label);
    }
    if inputs.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no data rows".into(),
        });
    }
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Ok(Dataset::new(name, inputs, labels, num_classes.max(2)))
}

/// Write the dataset as bare CSV (features then label), using the shortest
/// decimal representation that round-trips each value exactly.
pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (row, label) in data.inputs.iter().zip(&data.labels) {
        for v in row {
            out.push_str(&format!("{v}"));
            out.push(',');
        }
        out.push_str(&format!("{label}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Disjoint shuffled partition: the first part receives
/// `round(fraction * n)` samples. Errors if either part would be empty.
pub fn split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must lie in (0,1), got {fraction}"
        )));
    }
    let n = data.len();
    let n_a = (fraction * n as f64).round() as usize;
    if n_a == 0 || n_a == n {
        return Err(Error::Config(format!(
            "split of {n} samples at fraction {fraction} leaves an empty part"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::from_seed(seed).shuffle(&mut order);
    let take = |idx: &[usize]| -> Dataset {
        Dataset {
            name: data.name.clone(),
            inputs: idx.iter().map(|&i| data.inputs[i].clone()).collect(),
            labels: idx.iter().map(|&i| data.labels[i]).collect(),
            soft_labels: data
                .soft_labels
                .as_ref()
                .map(|s| idx.iter().map(|&i| s[i].clone()).collect()),
            num_classes: data.num_classes,
            normalization: data.normalization.clone(),
        }
    };
    Ok((take(&order[..n_a]), take(&order[n_a..])))
}

/// Standardize features to zero mean and unit variance (population std).
/// Constant features are left unscaled. The statistics are recorded on the
/// returned dataset.
pub fn standardize(data: &Dataset) -> Result<(Dataset, NormStats)> {
    if data.is_empty() {
        return Err(Error::Empty("standardize of empty dataset".into()));
    }
    let d = data.dim();
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for j in 0..d {
        let col: Vec<f64> = data.inputs.iter().map(|row| row[j]).collect();
        mean[j] = stats::mean(&col);
        let s = stats::std_dev(&col);
        std[j] = if s > 0.0 { s } else { 1.0 };
    }
    let inputs = data
        .inputs
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean[j]) / std[j])
                .collect()
        })
        .collect();
    let norm = NormStats { mean, std };
    let mut out = data.clone();
    out.inputs = inputs;
    out.normalization = Some(norm.clone());
    Ok((out, norm))
}

/// Per-feature population standard deviations of the inputs.
pub fn feature_std(data: &Dataset) -> Vec<f64> {
    let d = data.dim();
    (0..d)
        .map(|j| {
            let col: Vec<f64> = data.inputs.iter().map(|row| row[j]).collect();
            stats::std_dev(&col)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_balanced_and_deterministic() {
        let centers = vec![vec![-5.0, 0.0], vec![5.0, 0.0]];
        let a = gen_blobs(100, &centers, 0.5, 1).unwrap();
        assert_eq!(a.len(), 200);
        assert_eq!(a.labels.iter().filter(|&&y| y == 0).count(), 100);
        assert_eq!(a.labels.iter().filter(|&&y| y == 1).count(), 100);
        let b = gen_blobs(100, &centers, 0.5, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn blobs_degenerate_spread_sits_on_centers() {
        let centers = vec![vec![-5.0, 0.0], vec![5.0, 0.0]];
        let data = gen_blobs(50, &centers, 1e-9, 2).unwrap();
        for (row, &y) in data.inputs.iter().zip(&data.labels) {
            let c = &centers[y];
            let dist: f64 = row
                .iter()
                .zip(c)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(dist < 1e-6);
        }
    }

    #[test]
    fn blobs_reject_single_center() {
        assert!(gen_blobs(10, &[vec![0.0, 0.0]], 1.0, 0).is_err());
    }

    #[test]
    fn moons_noiseless_class0_on_unit_circle() {
        let data = gen_two_moons(40, 0.0, 3).unwrap();
        for (row, &y) in data.inputs.iter().zip(&data.labels) {
            if y == 0 {
                let r = (row[0] * row[0] + row[1] * row[1]).sqrt();
                assert!((r - 1.0).abs() < 1e-12);
                assert!(row[1] >= -1e-12);
            }
        }
    }

    #[test]
    fn moons_counts_and_determinism() {
        let a = gen_two_moons(50, 0.1, 7).unwrap();
        assert_eq!(a.len(), 100);
        let b = gen_two_moons(50, 0.1, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_parses_simple_input() {
        let data = parse_csv("1.0,2.0,0\n3.0,4.0,1", false, "t").unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.dim(), 2);
        assert!(data.num_classes >= 2);
        assert_eq!(data.inputs[1], vec![3.0, 4.0]);
    }

    #[test]
    fn csv_reports_ragged_line() {
        match parse_csv("1.0,0\n1.0,2.0,1", false, "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_reports_non_numeric_cell() {
        match parse_csv("1.0,2.0,0\nx,4.0,1", false, "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_rejects_empty() {
        assert!(parse_csv("", false, "t").is_err());
        assert!(parse_csv("a,b,label\n", true, "t").is_err());
    }

    #[test]
    fn csv_round_trips_exactly() {
        let data = gen_blobs(20, &[vec![-1.5, 2.0], vec![0.25, -3.0]], 0.7, 9).unwrap();
        let dir = std::env::temp_dir().join("modelprint-csv-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.csv");
        save_csv(&data, &path).unwrap();
        let back = load_csv(&path, false).unwrap();
        assert_eq!(back.inputs, data.inputs);
        assert_eq!(back.labels, data.labels);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn split_partitions_80_20() {
        let data = gen_blobs(50, &[vec![-5.0, 0.0], vec![5.0, 0.0]], 0.5, 4).unwrap();
        let (a, b) = split(&data, 0.8, 5).unwrap();
        assert_eq!(a.len(), 80);
        assert_eq!(b.len(), 20);
    }

    #[test]
    fn split_union_is_original_multiset() {
        let data = gen_blobs(30, &[vec![-5.0, 0.0], vec![5.0, 0.0]], 0.5, 6).unwrap();
        let (a, b) = split(&data, 0.5, 7).unwrap();
        let mut union: Vec<(String, usize)> = a
            .inputs
            .iter()
            .zip(&a.labels)
            .chain(b.inputs.iter().zip(&b.labels))
            .map(|(row, &y)| (format!("{row:?}"), y))
            .collect();
        let mut original: Vec<(String, usize)> = data
            .inputs
            .iter()
            .zip(&data.labels)
            .map(|(row, &y)| (format!("{row:?}"), y))
            .collect();
        union.sort();
        original.sort();
        assert_eq!(union, original);
    }

    #[test]
    fn split_is_deterministic() {
        let data = gen_blobs(40, &[vec![-5.0, 0.0], vec![5.0, 0.0]], 0.5, 8).unwrap();
        let (a1, b1) = split(&data, 0.75, 9).unwrap();
        let (a2, b2) = split(&data, 0.75, 9).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn split_rejects_degenerate_fraction() {
        let data = gen_blobs(2, &[vec![-5.0], vec![5.0]], 0.5, 10).unwrap();
        assert!(split(&data, 0.0, 0).is_err());
        assert!(split(&data, 1.0, 0).is_err());
        // 4 samples at 0.01 rounds to an empty first part.
        assert!(split(&data, 0.01, 0).is_err());
    }

    #[test]
    fn standardize_centers_and_scales() {
        let data = gen_blobs(200, &[vec![-5.0, 1.0], vec![5.0, 3.0]], 0.5, 11).unwrap();
        let (out, norm) = standardize(&data).unwrap();
        let fs = feature_std(&out);
        for j in 0..2 {
            let col: Vec<f64> = out.inputs.iter().map(|r| r[j]).collect();
            assert!(stats::mean(&col).abs() < 1e-10);
            assert!((fs[j] - 1.0).abs() < 1e-10);
        }
        assert_eq!(out.normalization.as_ref().unwrap(), &norm);
    }
}
