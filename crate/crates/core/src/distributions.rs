//! Synthetic data: the binary variance-asymmetric Gaussian mixture (with an
//! optional block of non-robust features), a generic multiclass isotropic
//! mixture, and CSV ingestion.
//!
//! Labels are 0-based. For the binary mixture class 0 is the compact class
//! (mean `-theta`, std `sigma`) and class 1 the diffuse one (mean `+theta`,
//! std `k_ratio * sigma`); signed formulas use `2 * label - 1`.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Parameters of the binary mixture. `m = 0` gives the robust-feature-only
/// distribution; `m > 0` appends `m` coordinates with mean scale `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub d: usize,
    #[serde(default)]
    pub m: usize,
    pub eta: f64,
    #[serde(default)]
    pub gamma: f64,
    pub sigma: f64,
    pub k_ratio: f64,
}

impl MixtureSpec {
    pub fn new(d: usize, m: usize, eta: f64, gamma: f64, sigma: f64, k_ratio: f64) -> Result<Self> {
        let spec = Self { d, m, eta, gamma, sigma, k_ratio };
        spec.validate()?;
        Ok(spec)
    }

    /// Robust features only (`m = 0`).
    pub fn robust_only(d: usize, eta: f64, sigma: f64, k_ratio: f64) -> Result<Self> {
        Self::new(d, 0, eta, 0.0, sigma, k_ratio)
    }

    /// The two-dimensional scene: theta = (2, 2), class variances 1 and 2.
    pub fn fig2() -> Self {
        Self { d: 2, m: 0, eta: 2.0, gamma: 0.0, sigma: 1.0, k_ratio: std::f64::consts::SQRT_2 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Parameter(msg.to_string()));
        if self.d < 1 {
            return bad("d must be at least 1");
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad("eta must be positive and finite");
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad("sigma must be positive and finite");
        }
        if !(self.k_ratio.is_finite() && self.k_ratio >= 1.0) {
            return bad("k_ratio must be >= 1");
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return bad("gamma must be non-negative");
        }
        if self.m > 0 && self.gamma <= 0.0 {
            return bad("gamma must be positive when non-robust features are present (m > 0)");
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d + self.m
    }

    /// Mean of class 1; class 0 has mean `-theta`.
    pub fn theta(&self) -> Vec<f64> {
        let mut t = vec![self.eta; self.d];
        t.extend(std::iter::repeat_n(self.gamma, self.m));
        t
    }

    /// Standard deviation of the given 0-based class.
    pub fn class_sigma(&self, label: usize) -> f64 {
        if label == 1 {
            self.k_ratio * self.sigma
        } else {
            self.sigma
        }
    }

    /// Same spec with the robust mean scale replaced.
    pub fn with_eta(&self, eta: f64) -> Self {
        Self { eta, ..*self }
    }
}

/// Fills `out` with sample `index` of the binary mixture drawn from class `label`.
pub(crate) fn draw_binary(spec: &MixtureSpec, seed: u64, index: u64, label: usize, out: &mut [f64]) {
    let mut stream = rng::stream(seed, index);
    let sign = if label == 1 { 1.0 } else { -1.0 };
    let s = spec.class_sigma(label);
    for (j, v) in out.iter_mut().enumerate() {
        let mean = if j < spec.d { spec.eta } else { spec.gamma };
        let z: f64 = stream.sample(StandardNormal);
        *v = sign * mean + s * z;
    }
}

/// Class label of sample `index` in an exactly balanced binary draw of size `n`.
pub(crate) fn binary_label(index: usize, n: usize) -> usize {
    usize::from(index >= n / 2)
}

pub fn sample_binary_mixture(spec: &MixtureSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n < 2 {
        return Err(Error::Parameter("n must be at least 2".into()));
    }
    let p = spec.dim();
    let mut features = vec![0.0; n * p];
    let mut labels = Vec::with_capacity(n);
    for (i, row) in features.chunks_exact_mut(p).enumerate() {
        let label = binary_label(i, n);
        draw_binary(spec, seed, i as u64, label, row);
        labels.push(label);
    }
    Dataset::new(features, p, labels, 2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassMixtureSpec {
    pub centers: Vec<Vec<f64>>,
    pub sigmas: Vec<f64>,
}

impl MulticlassMixtureSpec {
    pub fn new(centers: Vec<Vec<f64>>, sigmas: Vec<f64>) -> Result<Self> {
        let spec = Self { centers, sigmas };
        spec.validate()?;
        Ok(spec)
    }

    /// Reference four-class task: centers `4 e_i` in R^4 (mutually orthogonal,
    /// each at distance 4 from the origin) with stds (1, 1, 2, 2).
    pub fn four_class_benchmark() -> Self {
        let centers = (0..4)
            .map(|i| {
                let mut c = vec![0.0; 4];
                c[i] = 4.0;
                c
            })
            .collect();
        Self { centers, sigmas: vec![1.0, 1.0, 2.0, 2.0] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.len() < 2 {
            return Err(Error::Parameter("need at least two classes".into()));
        }
        if self.centers.len() != self.sigmas.len() {
            return Err(Error::Parameter(format!(
                "{} centers but {} sigmas",
                self.centers.len(),
                self.sigmas.len()
            )));
        }
        let p = self.centers[0].len();
        if p == 0 {
            return Err(Error::Parameter("centers must have dimension >= 1".into()));
        }
        for c in &self.centers {
            if c.len() != p {
                return Err(Error::Dimension { expected: p, got: c.len() });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter("non-finite center coordinate".into()));
            }
        }
        if self.sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Parameter("sigmas must be positive".into()));
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }
}

/// Balanced multiclass draw; rows are grouped by class.
pub fn sample_multiclass_mixture(spec: &MulticlassMixtureSpec, n_per_class: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n_per_class < 1 {
        return Err(Error::Parameter("n_per_class must be at least 1".into()));
    }
    let c = spec.class_count();
    let p = spec.dim();
    let n = c * n_per_class;
    let mut features = vec![0.0; n * p];
    let mut labels = Vec::with_capacity(n);
    for (i, row) in features.chunks_exact_mut(p).enumerate() {
        let label = i / n_per_class;
        let mut stream = rng::stream(seed, i as u64);
        let s = spec.sigmas[label];
        for (v, mean) in row.iter_mut().zip(&spec.centers[label]) {
            let z: f64 = stream.sample(StandardNormal);
            *v = mean + s * z;
        }
        labels.push(label);
    }
    Dataset::new(features, p, labels, c)
}

/// A labelled sample held as a row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    class_count: usize,
    per_class_index: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("feature dimension must be >= 1".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Dimension { expected: labels.len() * dim, got: features.len() });
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite feature in row {}", pos / dim)));
        }
        let mut per_class_index = vec![Vec::new(); class_count];
        for (i, &y) in labels.iter().enumerate() {
            if y >= class_count {
                return Err(Error::Parameter(format!("label {y} in row {i} outside [0, {class_count})")));
            }
            per_class_index[y].push(i);
        }
        Ok(Self { features, dim, labels, class_count, per_class_index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn per_class_index(&self) -> &[Vec<usize>] {
        &self.per_class_index
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        self.per_class_index.iter().map(Vec::len).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(csv_io)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format_f64(*v)).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// 17 significant digits: enough to reproduce any finite double exactly.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn save_csv_dataset(data: &Dataset, path: &Path) -> Result<()> {
    data.save_csv(path)
}

pub fn load_csv_dataset(path: &Path, label_column: &str) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv_dataset(file, label_column)
}

/// Parses a header-first CSV; every column other than `label_column` is a
/// feature, in header order.
pub fn read_csv_dataset<R: Read>(reader: R, label_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Ingestion { row: 0, column: String::new(), message: e.to_string() })?
        .clone();
    if header.is_empty() {
        return Err(Error::Ingestion { row: 0, column: String::new(), message: "empty file".into() });
    }
    let label_idx = header.iter().position(|h| h == label_column).ok_or_else(|| Error::Ingestion {
        row: 0,
        column: label_column.to_string(),
        message: "label column missing from header".into(),
    })?;
    let dim = header.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Ingestion { row, column: String::new(), message: e.to_string() })?;
        for (j, cell) in record.iter().enumerate() {
            let name = header.get(j).unwrap_or("").to_string();
            let cell = cell.trim();
            if j == label_idx {
                if cell.is_empty() {
                    return Err(Error::Ingestion { row, column: name, message: "missing label".into() });
                }
                let y: i64 = cell.parse().map_err(|_| Error::Ingestion {
                    row,
                    column: name.clone(),
                    message: format!("label `{cell}` is not an integer"),
                })?;
                if y < 0 {
                    return Err(Error::Ingestion { row, column: name, message: format!("label {y} is negative; labels are 0-based") });
                }
                labels.push(y as usize);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Ingestion {
                    row,
                    column: name.clone(),
                    message: format!("`{cell}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Ingestion { row, column: name, message: "non-finite value".into() });
                }
                features.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Ingestion { row: 1, column: String::new(), message: "no data rows".into() });
    }
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, dim, labels, class_count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class_moments(data: &Dataset, label: usize, coord: usize) -> (f64, f64) {
        let idx = &data.per_class_index()[label];
        let n = idx.len() as f64;
        let mean = idx.iter().map(|&i| data.row(i)[coord]).sum::<f64>() / n;
        let var = idx.iter().map(|&i| (data.row(i)[coord] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn scene_spec_class_means() {
        let spec = MixtureSpec::fig2();
        let n = 1_000_000;
        let data = sample_binary_mixture(&spec, n, 11).unwrap();
        let band = 2.0 * spec.k_ratio * spec.sigma / ((n / 2) as f64).sqrt();
        for coord in 0..2 {
            let (m1, _) = class_moments(&data, 1, coord);
            let (m0, _) = class_moments(&data, 0, coord);
            assert!((m1 - 2.0).abs() < band, "class 1 mean {m1}");
            assert!((m0 + 2.0).abs() < band, "class 0 mean {m0}");
        }
    }

    #[test]
    fn symmetric_variances_when_k_is_one() {
        let spec = MixtureSpec::robust_only(3, 1.0, 1.5, 1.0).unwrap();
        let data = sample_binary_mixture(&spec, 400_000, 3).unwrap();
        let trace = |label| (0..3).map(|c| class_moments(&data, label, c).1).sum::<f64>();
        let (t0, t1) = (trace(0), trace(1));
        assert!((t0 / t1 - 1.0).abs() < 0.01, "{t0} vs {t1}");
    }

    #[test]
    fn diffuse_class_variance() {
        // (K sigma)^2 = 4; the sample variance of 10^6 draws has standard error
        // 4 * sqrt(2 / 10^6) ~ 0.0057 per coordinate, and ten coordinates are pooled.
        let spec = MixtureSpec::robust_only(10, 0.5, 1.0, 2.0).unwrap();
        let data = sample_binary_mixture(&spec, 2_000_000, 5).unwrap();
        let pooled = (0..10).map(|c| class_moments(&data, 1, c).1).sum::<f64>() / 10.0;
        assert!((pooled - 4.0).abs() < 0.02, "pooled variance {pooled}");
        let (_, v) = class_moments(&data, 1, 0);
        assert!((v - 4.0).abs() < 4.0 * 4.0 * (2.0f64 / 1e6).sqrt(), "coordinate variance {v}");
    }

    #[test]
    fn exact_balance_and_determinism() {
        let spec = MixtureSpec::fig2();
        let a = sample_binary_mixture(&spec, 1001, 9).unwrap();
        let b = sample_binary_mixture(&spec, 1001, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_sizes(), vec![500, 501]);
        let c = sample_binary_mixture(&spec, 1001, 10).unwrap();
        assert_ne!(a.features(), c.features());
    }

    #[test]
    fn non_robust_block_uses_gamma() {
        let spec = MixtureSpec::new(2, 3, 1.0, 0.25, 1.0, 2.0).unwrap();
        assert_eq!(spec.theta(), vec![1.0, 1.0, 0.25, 0.25, 0.25]);
        let data = sample_binary_mixture(&spec, 200_000, 1).unwrap();
        let (m, _) = class_moments(&data, 0, 4);
        assert!((m + 0.25).abs() < 0.01);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(MixtureSpec::new(0, 0, 1.0, 0.0, 1.0, 2.0).is_err());
        assert!(MixtureSpec::new(2, 0, 0.0, 0.0, 1.0, 2.0).is_err());
        assert!(MixtureSpec::new(2, 0, 1.0, 0.0, -1.0, 2.0).is_err());
        assert!(MixtureSpec::new(2, 0, 1.0, 0.0, 1.0, 0.5).is_err());
        assert!(MixtureSpec::new(2, 4, 1.0, 0.0, 1.0, 2.0).is_err());
        assert!(sample_binary_mixture(&MixtureSpec::fig2(), 1, 0).is_err());
    }

    #[test]
    fn multiclass_reduces_to_binary() {
        let spec = MixtureSpec::robust_only(2, 1.0, 1.0, 2.0).unwrap();
        let theta = spec.theta();
        let neg: Vec<f64> = theta.iter().map(|v| -v).collect();
        let multi = MulticlassMixtureSpec::new(vec![neg, theta], vec![1.0, 2.0]).unwrap();
        let a = sample_multiclass_mixture(&multi, 200_000, 4).unwrap();
        let b = sample_binary_mixture(&spec, 400_000, 8).unwrap();
        for label in 0..2 {
            let (ma, va) = class_moments(&a, label, 0);
            let (mb, vb) = class_moments(&b, label, 0);
            let s = spec.class_sigma(label);
            let se_mean = s / (200_000f64).sqrt();
            assert!((ma - mb).abs() < 4.0 * se_mean * 2f64.sqrt());
            let se_var = s * s * (2.0 / 200_000f64).sqrt();
            assert!((va - vb).abs() < 4.0 * se_var * 2f64.sqrt());
        }
    }

    #[test]
    fn benchmark_layout() {
        let spec = MulticlassMixtureSpec::four_class_benchmark();
        let data = sample_multiclass_mixture(&spec, 2500, 0).unwrap();
        assert_eq!(data.len(), 10_000);
        assert_eq!(data.class_sizes(), vec![2500; 4]);
    }

    #[test]
    fn nearest_center_errs_more_on_diffuse_classes() {
        let spec = MulticlassMixtureSpec::four_class_benchmark();
        let data = sample_multiclass_mixture(&spec, 2500, 2).unwrap();
        let mut wrong = [0usize; 4];
        for i in 0..data.len() {
            let x = data.row(i);
            let pred = (0..4)
                .min_by(|&a, &b| {
                    let da: f64 = x.iter().zip(&spec.centers[a]).map(|(u, v)| (u - v).powi(2)).sum();
                    let db: f64 = x.iter().zip(&spec.centers[b]).map(|(u, v)| (u - v).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            if pred != data.label(i) {
                wrong[data.label(i)] += 1;
            }
        }
        assert!(wrong[2].min(wrong[3]) > wrong[0].max(wrong[1]), "{wrong:?}");
    }

    #[test]
    fn multiclass_dimension_mismatch() {
        let err = MulticlassMixtureSpec::new(vec![vec![0.0, 1.0], vec![1.0]], vec![1.0, 1.0]);
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn csv_parsing() {
        let text = "f0,f1,label\n1.5,2,0\n-1,0.25,1\n3,4,1\n";
        let data = read_csv_dataset(text.as_bytes(), "label").unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.dim(), 2);
        assert_eq!(data.row(1), &[-1.0, 0.25]);
        assert_eq!(data.labels(), &[0, 1, 1]);
        assert_eq!(data.class_count(), 2);
    }

    #[test]
    fn csv_errors_name_the_cell() {
        let neg = read_csv_dataset("f0,label\n1,-1\n".as_bytes(), "label");
        assert!(matches!(neg, Err(Error::Ingestion { row: 1, .. })));
        let text = read_csv_dataset("f0,label\n1,0\nabc,1\n".as_bytes(), "label");
        match text {
            Err(Error::Ingestion { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "f0");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_csv_dataset("f0,label\n1,\n".as_bytes(), "label").is_err());
        assert!(read_csv_dataset("".as_bytes(), "label").is_err());
        assert!(read_csv_dataset("f0,label\n".as_bytes(), "label").is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let data = sample_binary_mixture(&MixtureSpec::new(3, 2, 0.7, 0.1, 1.3, 1.7).unwrap(), 50, 21).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"f0,f1,f2,f3,f4,label\n"));
        let back = read_csv_dataset(buf.as_slice(), "label").unwrap();
        assert_eq!(back, data);
    }
}
