//! Datasets: CSV and IDX loading, synthetic mixtures with known labels,
//! stratified splitting and label masking.
//!
//! Labels are 0-based in memory. CSV label columns hold 1-based cluster ids
//! and IDX label bytes are class digits (so digit `d` is cluster `d + 1`
//! externally and `d` in memory).

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{seeded, std_normal};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetMeta {
    pub name: String,
    pub binarized: bool,
    /// Ratios of the split this dataset came from, if any.
    pub split_ratios: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F> {
    pub x: Vec<Vec<F>>,
    pub labels: Option<Vec<Option<usize>>>,
    pub meta: DatasetMeta,
}

impl<F: Scalar> Dataset<F> {
    /// Checks rectangularity and finiteness.
    pub fn new(x: Vec<Vec<F>>, labels: Option<Vec<Option<usize>>>, meta: DatasetMeta) -> Result<Self> {
        if let Some(first) = x.first() {
            let d = first.len();
            for (n, row) in x.iter().enumerate() {
                if row.len() != d {
                    return Err(Error::Data(format!("row {n} has {} values, expected {d}", row.len())));
                }
                if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("non-finite value at row {n}, column {j}")));
                }
            }
        }
        if let Some(l) = &labels {
            if l.len() != x.len() {
                return Err(Error::dim("dataset labels", x.len(), l.len()));
            }
        }
        Ok(Dataset { x, labels, meta })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// Largest label + 1, or 0 without labels.
    pub fn num_classes(&self) -> usize {
        self.labels
            .iter()
            .flatten()
            .flatten()
            .map(|&y| y + 1)
            .max()
            .unwrap_or(0)
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Dataset {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            meta: self.meta.clone(),
        }
    }

    /// Labels as plain indices; fails if any is missing.
    pub fn full_labels(&self) -> Result<Vec<usize>> {
        let labels = self.labels.as_ref().ok_or_else(|| Error::Data("dataset has no labels".into()))?;
        labels
            .iter()
            .enumerate()
            .map(|(n, y)| y.ok_or_else(|| Error::Data(format!("label of row {n} is missing"))))
            .collect()
    }
}

fn is_missing(field: &str) -> bool {
    matches!(field.trim(), "" | "NA" | "na" | "?")
}

/// Reads a comma-separated numeric table. A first row containing any
/// non-numeric field is taken as a header. `label_column` names the label
/// column, or gives its 0-based index when the file has no header. Label
/// values are 1-based; empty, `NA` and `?` mark missing labels. Rows and
/// columns in parse errors are 1-based file positions.
pub fn load_csv<F: Scalar>(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset<F>> {
    let path = path.as_ref();
    let source_name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Data(format!("{source_name}: {other:?}")),
        })?;
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            source_name: source_name.clone(),
            row: i + 1,
            column: 0,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    let has_header = records
        .first()
        .is_some_and(|r| r.iter().any(|f| !f.is_empty() && f.parse::<f64>().is_err()));
    let header = if has_header { Some(records.remove(0)) } else { None };
    let label_idx = match label_column {
        None => None,
        Some(name) => Some(match &header {
            Some(h) => h
                .iter()
                .position(|f| f == name)
                .ok_or_else(|| Error::Data(format!("{source_name}: no column named {name:?}")))?,
            None => name.parse::<usize>().map_err(|_| {
                Error::Data(format!("{source_name}: file has no header, label column must be an index"))
            })?,
        }),
    };
    let width = header.as_ref().map(|h| h.len()).or_else(|| records.first().map(|r| r.len()));
    let mut x = Vec::with_capacity(records.len());
    let mut labels = label_idx.map(|_| Vec::with_capacity(records.len()));
    let first_data_row = usize::from(has_header);
    for (i, rec) in records.iter().enumerate() {
        let row = i + first_data_row + 1;
        let parse_err = |j: usize, message: String| Error::Parse {
            source_name: source_name.clone(),
            row,
            column: j + 1,
            message,
        };
        if Some(rec.len()) != width {
            return Err(parse_err(rec.len(), format!("expected {} fields", width.unwrap_or(0))));
        }
        let mut values = Vec::with_capacity(rec.len());
        for (j, field) in rec.iter().enumerate() {
            if Some(j) == label_idx {
                let y = if is_missing(field) {
                    None
                } else {
                    let v: f64 = field.parse().map_err(|_| parse_err(j, format!("bad label {field:?}")))?;
                    if v.fract() != 0.0 || v < 1.0 {
                        return Err(parse_err(j, format!("label {field:?} is not a positive integer")));
                    }
                    Some(v as usize - 1)
                };
                labels.as_mut().expect("label column").push(y);
                continue;
            }
            let v: f64 = field.parse().map_err(|_| parse_err(j, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(j, format!("non-finite value {field:?}")));
            }
            values.push(F::lit(v));
        }
        x.push(values);
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Dataset::new(
        x,
        labels,
        DatasetMeta {
            name,
            ..Default::default()
        },
    )
}

/// Writes `x` (and 1-based labels in a trailing `label` column, if any) as CSV
/// with a header.
pub fn write_csv<F: Scalar>(path: impl AsRef<Path>, data: &Dataset<F>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let map = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut header: Vec<String> = (1..=data.dim()).map(|j| format!("x{j}")).collect();
    if data.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(map)?;
    for (n, row) in data.x.iter().enumerate() {
        let mut fields: Vec<String> = row.iter().map(|v| format!("{}", v.to_f64_lossy())).collect();
        if let Some(l) = &data.labels {
            fields.push(l[n].map_or(String::new(), |y| (y + 1).to_string()));
        }
        w.write_record(&fields).map_err(map)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Data(format!("{what}: truncated header")))
}

/// Reads IDX image (and optionally label) files. Pixels are scaled by 1/255;
/// with `binarize_threshold = Some(c)` every pixel becomes `1` if above `c`
/// and `0` otherwise.
pub fn load_idx_images<F: Scalar>(
    images: impl AsRef<Path>,
    labels: Option<&Path>,
    binarize_threshold: Option<f64>,
) -> Result<Dataset<F>> {
    let images = images.as_ref();
    let what = images.display().to_string();
    let bytes = fs::read(images).map_err(|e| Error::io(images, e))?;
    let magic = be_u32(&bytes, 0, &what)?;
    if magic != IDX_IMAGES {
        return Err(Error::Data(format!("{what}: bad magic {magic:#010x}, expected {IDX_IMAGES:#010x}")));
    }
    let count = be_u32(&bytes, 4, &what)? as usize;
    let rows = be_u32(&bytes, 8, &what)? as usize;
    let cols = be_u32(&bytes, 12, &what)? as usize;
    let dim = rows * cols;
    let body = &bytes[16..];
    if body.len() < count * dim {
        return Err(Error::Data(format!(
            "{what}: truncated, {} of {} pixel bytes",
            body.len(),
            count * dim
        )));
    }
    let x: Vec<Vec<F>> = body[..count * dim]
        .chunks_exact(dim.max(1))
        .take(count)
        .map(|img| {
            img.iter()
                .map(|&b| {
                    let v = f64::from(b) / 255.0;
                    match binarize_threshold {
                        Some(c) => F::lit(if v > c { 1.0 } else { 0.0 }),
                        None => F::lit(v),
                    }
                })
                .collect()
        })
        .collect();
    let labels = match labels {
        None => None,
        Some(path) => {
            let what = path.display().to_string();
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let magic = be_u32(&bytes, 0, &what)?;
            if magic != IDX_LABELS {
                return Err(Error::Data(format!("{what}: bad magic {magic:#010x}, expected {IDX_LABELS:#010x}")));
            }
            let n = be_u32(&bytes, 4, &what)? as usize;
            if n != count {
                return Err(Error::dim("idx labels", count, n));
            }
            let body = &bytes[8..];
            if body.len() < n {
                return Err(Error::Data(format!("{what}: truncated, {} of {n} label bytes", body.len())));
            }
            Some(body[..n].iter().map(|&b| Some(usize::from(b))).collect())
        }
    };
    let name = images.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Dataset::new(
        x,
        labels,
        DatasetMeta {
            name,
            binarized: binarize_threshold.is_some(),
            split_ratios: None,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Linear,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub clusters: usize,
    pub per_cluster: usize,
    pub latent_dim: usize,
    pub data_dim: usize,
    /// Minimum pairwise distance between latent cluster means.
    pub separation: f64,
    pub nonlinearity: Nonlinearity,
    pub noise_scale: f64,
    pub seed: u64,
}

/// Latent means with pairwise distances of at least `separation`: a regular
/// polygon in the first two coordinates, or evenly spaced points on a line for
/// one latent dimension.
fn cluster_means(k: usize, latent_dim: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|c| {
            let mut m = vec![0.0; latent_dim];
            if k == 1 {
                return m;
            }
            if latent_dim == 1 {
                m[0] = separation * (c as f64 - (k as f64 - 1.0) / 2.0);
            } else {
                let radius = separation / (2.0 * (std::f64::consts::PI / k as f64).sin());
                let angle = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                m[0] = radius * angle.cos();
                m[1] = radius * angle.sin();
            }
            m
        })
        .collect()
}

/// Gaussian clusters in latent space pushed through a fixed random map.
///
/// Latents are `N(μ_k, I)`. `Linear` maps `x = A h`; `Tanh` maps
/// `x = B tanh(A h)`. Entries of `A` and `B` are `N(0, 1/fan_in)`. Gaussian
/// noise of scale `noise_scale` is added to `x`. Rows are ordered cluster by
/// cluster.
pub fn make_synthetic_mixture<F: Scalar>(spec: &MixtureSpec) -> Result<Dataset<F>> {
    if spec.clusters == 0 || spec.latent_dim == 0 || spec.data_dim == 0 {
        return Err(Error::Config("clusters and dimensions must be at least 1".into()));
    }
    let mut rng = seeded(spec.seed);
    let matrix = |rows: usize, cols: usize, rng: &mut crate::rng::EngineRng| -> Vec<Vec<f64>> {
        let s = 1.0 / (cols as f64).sqrt();
        (0..rows)
            .map(|_| (0..cols).map(|_| s * std_normal::<f64, _>(rng)).collect())
            .collect()
    };
    let apply = |m: &[Vec<f64>], v: &[f64]| -> Vec<f64> {
        m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    };
    let a = matrix(spec.data_dim, spec.latent_dim, &mut rng);
    let b = matrix(spec.data_dim, spec.data_dim, &mut rng);
    let means = cluster_means(spec.clusters, spec.latent_dim, spec.separation);
    let mut x = Vec::with_capacity(spec.clusters * spec.per_cluster);
    let mut labels = Vec::with_capacity(spec.clusters * spec.per_cluster);
    for (k, mean) in means.iter().enumerate() {
        for _ in 0..spec.per_cluster {
            let h: Vec<f64> = mean.iter().map(|&m| m + std_normal::<f64, _>(&mut rng)).collect();
            let mut v = apply(&a, &h);
            if spec.nonlinearity == Nonlinearity::Tanh {
                v.iter_mut().for_each(|u| *u = u.tanh());
                v = apply(&b, &v);
            }
            let row = v
                .iter()
                .map(|&u| F::lit(u + spec.noise_scale * std_normal::<f64, _>(&mut rng)))
                .collect();
            x.push(row);
            labels.push(Some(k));
        }
    }
    Dataset::new(
        x,
        Some(labels),
        DatasetMeta {
            name: "synthetic".into(),
            ..Default::default()
        },
    )
}

/// A permutation in which every class is spread evenly: element `i` of a
/// class of size `n_c` sits at relative position `(i + 1/2) / n_c`. Any prefix
/// then holds each class in proportion, up to rounding.
fn stratified_order<R: Rng + ?Sized>(labels: Option<&[Option<usize>]>, n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let Some(labels) = labels else {
        return idx;
    };
    // Missing labels form their own stratum.
    let key = |i: usize| labels[i].map_or(0, |y| y + 1);
    let strata = idx.iter().map(|&i| key(i)).max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); strata];
    for &i in &idx {
        members[key(i)].push(i);
    }
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    for (c, m) in members.iter().enumerate() {
        for (r, &i) in m.iter().enumerate() {
            keyed.push(((r as f64 + 0.5) / m.len() as f64, c, i));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

/// Disjoint train/valid/test split, stratified by label when labels exist.
/// Sizes are `round(r · N)` for the first two parts and the rest of
/// `round((r0 + r1 + r2) · N)` for the third. Each part keeps the input order.
pub fn split<F: Scalar>(data: &Dataset<F>, ratios: [f64; 3], seed: u64) -> Result<(Dataset<F>, Dataset<F>, Dataset<F>)> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(*r >= 0.0)) || !(total > 0.0) || total > 1.0 + 1e-12 {
        return Err(Error::Config(format!("invalid split ratios {ratios:?}")));
    }
    let n = data.len();
    let n_all = ((total * n as f64).round() as usize).min(n);
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n_all);
    let n_valid = ((ratios[1] * n as f64).round() as usize).min(n_all - n_train);
    let n_test = n_all - n_train - n_valid;
    let mut rng = seeded(seed);
    let order = stratified_order(data.labels.as_deref(), n, &mut rng);
    let mut parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_valid].to_vec(),
        order[n_train + n_valid..n_train + n_valid + n_test].to_vec(),
    ]
    .map(|mut idx| {
        idx.sort_unstable();
        data.subset(&idx)
    });
    for p in &mut parts {
        p.meta.split_ratios = Some(ratios);
    }
    let [a, b, c] = parts;
    Ok((a, b, c))
}

/// Keeps exactly `round(fraction · N)` labels, spread evenly over classes,
/// and marks the rest missing.
pub fn mask_labels<F: Scalar>(data: &Dataset<F>, fraction: f64, seed: u64) -> Result<Dataset<F>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("label fraction {fraction} outside [0, 1]")));
    }
    let labels = data.full_labels()?;
    let n = data.len();
    let keep = (fraction * n as f64).round() as usize;
    let wrapped: Vec<Option<usize>> = labels.iter().map(|&y| Some(y)).collect();
    let mut rng = seeded(seed);
    let order = stratified_order(Some(&wrapped), n, &mut rng);
    let mut masked = vec![None; n];
    for &i in &order[..keep] {
        masked[i] = Some(labels[i]);
    }
    let mut out = data.clone();
    out.labels = Some(masked);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polygon_means_respect_separation() {
        for k in 2..8 {
            for d in [1, 2, 3] {
                let m = cluster_means(k, d, 4.0);
                for i in 0..k {
                    for j in 0..i {
                        let dist: f64 = m[i].iter().zip(&m[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                        assert!(dist >= 4.0 - 1e-9, "k={k} d={d} dist={dist}");
                    }
                }
            }
        }
    }

    #[test]
    fn stratified_order_is_a_permutation() {
        let labels: Vec<Option<usize>> = (0..37).map(|i| if i % 5 == 0 { None } else { Some(i % 3) }).collect();
        let mut rng = seeded(3);
        let mut o = stratified_order(Some(&labels), 37, &mut rng);
        o.sort_unstable();
        assert_eq!(o, (0..37).collect::<Vec<_>>());
    }
}
