//! Multi-modal datasets: synthetic generation, the on-disk feature-table
//! format, Gaussian corruption and train/test splits.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, RandomStream};

/// Version tag of the canonical dominance benchmark parameters.
pub const DOMINANCE_BENCHMARK_VERSION: &str = "dominance-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Modality {
    pub name: String,
    pub features: Matrix,
}

impl Modality {
    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Per-sample features for each modality plus integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiModalDataset {
    modalities: Vec<Modality>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl MultiModalDataset {
    pub fn new(modalities: Vec<Modality>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::invalid("a dataset needs at least one modality"));
        }
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        for m in &modalities {
            if m.features.rows() != labels.len() {
                return Err(Error::invalid(format!(
                    "modality '{}' has {} rows but there are {} labels",
                    m.name,
                    m.features.rows(),
                    labels.len()
                )));
            }
            if m.dim() == 0 {
                return Err(Error::invalid(format!("modality '{}' has zero width", m.name)));
            }
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::invalid(format!(
                "label {y} at sample {i} is out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            modalities,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn modality(&self, k: usize) -> Result<&Modality> {
        self.modalities.get(k).ok_or_else(|| {
            Error::invalid(format!(
                "modality {k} out of range ({} modalities)",
                self.modalities.len()
            ))
        })
    }

    pub fn features(&self, k: usize) -> Result<&Matrix> {
        Ok(&self.modality(k)?.features)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.modalities.iter().map(Modality::dim).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.modalities.iter().map(|m| m.name.clone()).collect()
    }

    /// Rows `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> MultiModalDataset {
        MultiModalDataset {
            modalities: self
                .modalities
                .iter()
                .map(|m| Modality {
                    name: m.name.clone(),
                    features: m.features.select_rows(indices),
                })
                .collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Keeps only modality `k`.
    pub fn single_modality(&self, k: usize) -> Result<MultiModalDataset> {
        let m = self.modality(k)?.clone();
        MultiModalDataset::new(vec![m], self.labels.clone(), self.num_classes)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }

    /// Per-feature standardization to zero mean and unit variance, in place.
    /// Constant features are only centered.
    pub fn standardize(&mut self) {
        let n = self.len() as f64;
        if n == 0.0 {
            return;
        }
        for m in &mut self.modalities {
            let (rows, cols) = m.features.shape();
            for c in 0..cols {
                let mean = (0..rows).map(|r| m.features.get(r, c)).sum::<f64>() / n;
                let var = (0..rows)
                    .map(|r| (m.features.get(r, c) - mean).powi(2))
                    .sum::<f64>()
                    / n;
                let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
                for r in 0..rows {
                    let v = m.features.get(r, c);
                    m.features.set(r, c, (v - mean) * scale);
                }
            }
        }
    }
}

/// Generation parameters for one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: String,
    pub dim: usize,
    /// Pairwise distance between distinct class means.
    pub margin: f64,
    /// Isotropic noise standard deviation.
    pub noise: f64,
    /// Class pairs whose means coincide in this modality.
    #[serde(default)]
    pub confusable_pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub num_samples: usize,
    pub modalities: Vec<ModalitySpec>,
}

impl SyntheticSpec {
    /// The canonical dominance benchmark: six classes; a strong modality whose
    /// class means are far apart but collapse three class pairs, and a weak
    /// modality with small margins that separates every class.
    pub fn dominance_benchmark(num_samples: usize) -> Self {
        Self {
            num_classes: 6,
            num_samples,
            modalities: vec![
                ModalitySpec {
                    name: "strong".into(),
                    dim: 16,
                    margin: 4.0,
                    noise: 1.0,
                    confusable_pairs: vec![(0, 1), (2, 3), (4, 5)],
                },
                ModalitySpec {
                    name: "weak".into(),
                    dim: 16,
                    margin: 1.2,
                    noise: 1.0,
                    confusable_pairs: vec![],
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("synthetic data needs at least two classes"));
        }
        if self.num_samples == 0 {
            return Err(Error::invalid("num_samples must be positive"));
        }
        if self.modalities.is_empty() {
            return Err(Error::invalid("at least one modality is required"));
        }
        for m in &self.modalities {
            if m.dim + 1 < self.num_classes {
                return Err(Error::invalid(format!(
                    "modality '{}': dim {} cannot hold {} separated class means (needs >= {})",
                    m.name,
                    m.dim,
                    self.num_classes,
                    self.num_classes - 1
                )));
            }
            if !(m.margin >= 0.0) || !m.margin.is_finite() {
                return Err(Error::invalid(format!("modality '{}': margin must be >= 0", m.name)));
            }
            if !(m.noise > 0.0) || !m.noise.is_finite() {
                return Err(Error::invalid(format!("modality '{}': noise must be > 0", m.name)));
            }
            for &(a, b) in &m.confusable_pairs {
                if a >= self.num_classes || b >= self.num_classes || a == b {
                    return Err(Error::invalid(format!(
                        "modality '{}': invalid confusable pair ({a}, {b})",
                        m.name
                    )));
                }
            }
            validate_name(&m.name)?;
        }
        Ok(())
    }
}

fn validate_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name != "labels"
        && name != "manifest"
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "modality name '{name}' must be non-empty [A-Za-z0-9_-] and not 'labels' or 'manifest'"
        )))
    }
}

// Stream tags; every consumer draws from its own child stream.
const TAG_LABELS: u64 = 0;
const TAG_MEANS: u64 = 1_000;
const TAG_NOISE: u64 = 2_000;

/// Orthonormal basis (columns) of the subspace of `R^y` orthogonal to the
/// all-ones vector. Row `c` gives the simplex vertex `e_c − ē` in that basis.
fn helmert(y: usize) -> Matrix {
    let mut h = Matrix::zeros(y, y - 1);
    for j in 1..y {
        let norm = ((j * (j + 1)) as f64).sqrt();
        for i in 0..j {
            h.set(i, j - 1, 1.0 / norm);
        }
        h.set(j, j - 1, -(j as f64) / norm);
    }
    h
}

/// `d × r` matrix with orthonormal columns from Gram–Schmidt on Gaussian draws.
fn random_orthonormal(d: usize, r: usize, stream: &mut RandomStream) -> Result<Matrix> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(r);
    while cols.len() < r {
        let mut v = stream.gaussian(d, 0.0, 1.0)?;
        for c in &cols {
            let proj: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= proj * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
    }
    let mut q = Matrix::zeros(d, r);
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            q.set(i, j, v);
        }
    }
    Ok(q)
}

/// Class means of every modality (one `Y × d_k` matrix per modality), as used
/// by [`generate_synthetic`] with the same seed.
pub fn synthetic_class_means(spec: &SyntheticSpec, seed: u64) -> Result<Vec<Matrix>> {
    spec.validate()?;
    let root = RandomStream::new(seed);
    let y = spec.num_classes;
    let vertices = helmert(y);
    spec.modalities
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let mut stream = root.child(TAG_MEANS + k as u64);
            let basis = random_orthonormal(m.dim, y - 1, &mut stream)?;
            // vertex c lives at (margin/√2)·H[c,:] so pairwise distances equal margin.
            let mut coords = vertices.clone();
            coords.scale(m.margin / std::f64::consts::SQRT_2);
            let mut means = coords.matmul_t(&basis)?;
            for &(a, b) in &m.confusable_pairs {
                let shared = means.row(a).to_vec();
                means.row_mut(b).copy_from_slice(&shared);
            }
            Ok(means)
        })
        .collect()
}

/// Samples labels uniformly over classes and, per modality, features
/// `N(μ_k(y), σ_k²·I)`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<MultiModalDataset> {
    let means = synthetic_class_means(spec, seed)?;
    let root = RandomStream::new(seed);
    let n = spec.num_samples;
    let y = spec.num_classes;
    let mut label_stream = root.child(TAG_LABELS);
    let labels: Vec<usize> = (0..n)
        .map(|_| ((label_stream.uniform() * y as f64) as usize).min(y - 1))
        .collect();
    let mut modalities = Vec::with_capacity(spec.modalities.len());
    for (k, m) in spec.modalities.iter().enumerate() {
        let mut noise = root.child(TAG_NOISE + k as u64);
        let mut data = noise.gaussian(n * m.dim, 0.0, m.noise)?;
        for (i, &label) in labels.iter().enumerate() {
            let row = &mut data[i * m.dim..(i + 1) * m.dim];
            for (v, mu) in row.iter_mut().zip(means[k].row(label)) {
                *v += mu;
            }
        }
        modalities.push(Modality {
            name: m.name.clone(),
            features: Matrix::from_vec(n, m.dim, data)?,
        });
    }
    MultiModalDataset::new(modalities, labels, y)
}

/// Adds `N(0, sigma²)` noise to modality `k` of exactly `⌊p·N⌋` samples chosen
/// by a seeded shuffle.
pub fn corrupt_gaussian(
    dataset: &MultiModalDataset,
    k: usize,
    fraction: f64,
    sigma: f64,
    seed: u64,
) -> Result<MultiModalDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    dataset.modality(k)?;
    let count = (fraction * dataset.len() as f64).floor() as usize;
    let mut out = dataset.clone();
    if count == 0 || sigma == 0.0 {
        return Ok(out);
    }
    let mut stream = RandomStream::new(seed);
    let chosen = &stream.permutation(dataset.len())[..count];
    let features = &mut out.modalities[k].features;
    let d = features.cols();
    for &i in chosen {
        let noise = stream.gaussian(d, 0.0, sigma)?;
        for (v, e) in features.row_mut(i).iter_mut().zip(noise) {
            *v += e;
        }
    }
    Ok(out)
}

/// Disjoint `(train, test)` index lists covering `0..N`, each ascending.
/// The test part has `⌊r·N⌋` samples; when stratified, every class
/// contributes within one sample of its proportional share.
pub fn split_indices(
    dataset: &MultiModalDataset,
    test_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = dataset.len();
    let n_test = (test_fraction * n as f64).floor() as usize;
    let mut stream = RandomStream::new(seed);
    let mut is_test = vec![false; n];
    if stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
        for (i, &y) in dataset.labels().iter().enumerate() {
            by_class[y].push(i);
        }
        let shares: Vec<f64> = by_class
            .iter()
            .map(|c| c.len() as f64 * n_test as f64 / n.max(1) as f64)
            .collect();
        let mut quota: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
        let mut remaining = n_test - quota.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..by_class.len()).collect();
        // largest fractional remainder first, ties to the lower class index.
        order.sort_by(|&a, &b| {
            let fa = shares[a] - shares[a].floor();
            let fb = shares[b] - shares[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        for &c in order.iter().cycle().take(order.len() * 2) {
            if remaining == 0 {
                break;
            }
            if quota[c] < by_class[c].len() {
                quota[c] += 1;
                remaining -= 1;
            }
        }
        for (c, members) in by_class.iter_mut().enumerate() {
            stream.shuffle(members);
            for &i in &members[..quota[c]] {
                is_test[i] = true;
            }
        }
    } else {
        for &i in &stream.permutation(n)[..n_test] {
            is_test[i] = true;
        }
    }
    let test: Vec<usize> = (0..n).filter(|&i| is_test[i]).collect();
    let train: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
    Ok((train, test))
}

pub fn split(
    dataset: &MultiModalDataset,
    test_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(MultiModalDataset, MultiModalDataset)> {
    let (train, test) = split_indices(dataset, test_fraction, seed, stratified)?;
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    num_classes: usize,
    num_samples: usize,
    modalities: Vec<ManifestModality>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestModality {
    name: String,
    dim: usize,
}

fn format_float(v: f64) -> String {
    // 17 significant digits round-trip every finite f64.
    format!("{v:.16e}")
}

/// Writes `manifest.json`, `labels.csv` and one `<name>.csv` per modality.
pub fn save_feature_table(dataset: &MultiModalDataset, dir: &Path) -> Result<()> {
    for m in &dataset.modalities {
        validate_name(&m.name)?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        num_classes: dataset.num_classes,
        num_samples: dataset.len(),
        modalities: dataset
            .modalities
            .iter()
            .map(|m| ManifestModality {
                name: m.name.clone(),
                dim: m.dim(),
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;

    let mut labels = String::with_capacity(dataset.len() * 3);
    for y in &dataset.labels {
        labels.push_str(&y.to_string());
        labels.push('\n');
    }
    let path = dir.join("labels.csv");
    fs::write(&path, labels).map_err(|e| Error::io(&path, e))?;

    for m in &dataset.modalities {
        let mut text = String::new();
        for row in m.features.row_iter() {
            let cells: Vec<String> = row.iter().map(|&v| format_float(v)).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        let path = dir.join(format!("{}.csv", m.name));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.trim().is_empty()).collect()
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads a dataset directory written by [`save_feature_table`] (or by hand in
/// the same layout).
pub fn load_feature_table(dir: &Path) -> Result<MultiModalDataset> {
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(&read_text(&manifest_path)?)
        .map_err(|e| format_err(&manifest_path, e.to_string()))?;
    if manifest.modalities.is_empty() {
        return Err(format_err(&manifest_path, "no modalities listed"));
    }
    if manifest.num_classes == 0 {
        return Err(format_err(&manifest_path, "num_classes must be positive"));
    }

    let labels_path = dir.join("labels.csv");
    let text = read_text(&labels_path)?;
    let lines = data_lines(&text);
    if lines.len() != manifest.num_samples {
        return Err(format_err(
            &labels_path,
            format!("{} rows, manifest declares {}", lines.len(), manifest.num_samples),
        ));
    }
    let mut labels = Vec::with_capacity(lines.len());
    for (r, line) in lines.iter().enumerate() {
        let y: usize = line.trim().parse().map_err(|e| Error::Parse {
            path: labels_path.clone(),
            row: r + 1,
            col: 1,
            message: format!("'{}': {e}", line.trim()),
        })?;
        if y >= manifest.num_classes {
            return Err(format_err(
                &labels_path,
                format!(
                    "label {y} at row {} is out of range for {} classes",
                    r + 1,
                    manifest.num_classes
                ),
            ));
        }
        labels.push(y);
    }

    let mut modalities = Vec::with_capacity(manifest.modalities.len());
    for m in &manifest.modalities {
        validate_name(&m.name).map_err(|e| format_err(&manifest_path, e.to_string()))?;
        let path: PathBuf = dir.join(format!("{}.csv", m.name));
        let text = read_text(&path)?;
        let lines = data_lines(&text);
        if lines.len() != manifest.num_samples {
            return Err(format_err(
                &path,
                format!("{} rows, manifest declares {}", lines.len(), manifest.num_samples),
            ));
        }
        let mut data = Vec::with_capacity(lines.len() * m.dim);
        for (r, line) in lines.iter().enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != m.dim {
                return Err(format_err(
                    &path,
                    format!("row {} has {} columns, manifest declares {}", r + 1, cells.len(), m.dim),
                ));
            }
            for (c, cell) in cells.iter().enumerate() {
                let v: f64 = cell.trim().parse().map_err(|e| Error::Parse {
                    path: path.clone(),
                    row: r + 1,
                    col: c + 1,
                    message: format!("'{}': {e}", cell.trim()),
                })?;
                data.push(v);
            }
        }
        modalities.push(Modality {
            name: m.name.clone(),
            features: Matrix::from_vec(manifest.num_samples, m.dim, data)?,
        });
    }
    MultiModalDataset::new(modalities, labels, manifest.num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::normal_cdf;

    fn tiny(seed: u64) -> MultiModalDataset {
        let spec = SyntheticSpec {
            num_classes: 3,
            num_samples: 40,
            modalities: vec![
                ModalitySpec {
                    name: "a".into(),
                    dim: 4,
                    margin: 2.0,
                    noise: 1.0,
                    confusable_pairs: vec![],
                },
                ModalitySpec {
                    name: "b".into(),
                    dim: 2,
                    margin: 1.0,
                    noise: 0.5,
                    confusable_pairs: vec![(0, 2)],
                },
            ],
        };
        generate_synthetic(&spec, seed).unwrap()
    }

    #[test]
    fn one_dimensional_bayes_accuracy() {
        let spec = SyntheticSpec {
            num_classes: 2,
            num_samples: 100_000,
            modalities: vec![ModalitySpec {
                name: "x".into(),
                dim: 1,
                margin: 2.0,
                noise: 1.0,
                confusable_pairs: vec![],
            }],
        };
        let means = synthetic_class_means(&spec, 9).unwrap();
        assert!((means[0].get(0, 0).abs() - 1.0).abs() < 1e-12);
        assert!((means[0].get(0, 0) + means[0].get(1, 0)).abs() < 1e-12);
        let data = generate_synthetic(&spec, 9).unwrap();
        let sign0 = means[0].get(0, 0).signum();
        let x = data.features(0).unwrap();
        let correct = data
            .labels()
            .iter()
            .enumerate()
            .filter(|(i, &y)| {
                let predicted = if x.get(*i, 0) * sign0 > 0.0 { 0 } else { 1 };
                predicted == y
            })
            .count();
        let acc = correct as f64 / data.len() as f64;
        let bayes = normal_cdf(1.0);
        assert!((acc - bayes).abs() < 0.01, "acc {acc} vs {bayes}");
    }

    #[test]
    fn class_counts_are_uniform() {
        let mut spec = SyntheticSpec::dominance_benchmark(10_000);
        spec.num_classes = 4;
        spec.modalities[0].confusable_pairs.clear();
        let data = generate_synthetic(&spec, 3).unwrap();
        // 99% two-sided binomial interval for n = 10000, p = 1/4: 2500 ± 2.576·43.3.
        for c in data.class_counts() {
            assert!((c as f64 - 2500.0).abs() <= 111.6, "count {c}");
        }
    }

    #[test]
    fn pairwise_mean_distances() {
        let spec = SyntheticSpec::dominance_benchmark(10);
        let means = synthetic_class_means(&spec, 5).unwrap();
        let dist = |m: &Matrix, a: usize, b: usize| {
            m.row(a)
                .iter()
                .zip(m.row(b))
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        for a in 0..6 {
            for b in (a + 1)..6 {
                assert!((dist(&means[1], a, b) - 1.2).abs() < 1e-12);
                let confused = b == a + 1 && a % 2 == 0;
                let expected = if confused { 0.0 } else { 4.0 };
                assert!((dist(&means[0], a, b) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(tiny(5), tiny(5));
        assert_ne!(tiny(5), tiny(6));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = SyntheticSpec::dominance_benchmark(10);
        spec.modalities[0].noise = 0.0;
        assert!(generate_synthetic(&spec, 1).is_err());
        let mut spec = SyntheticSpec::dominance_benchmark(10);
        spec.modalities[1].confusable_pairs.push((2, 9));
        assert!(generate_synthetic(&spec, 1).is_err());
        let mut spec = SyntheticSpec::dominance_benchmark(10);
        spec.modalities[1].dim = 3;
        assert!(generate_synthetic(&spec, 1).is_err());
    }

    #[test]
    fn feature_table_round_trip() {
        let data = tiny(11);
        let dir = tempfile::tempdir().unwrap();
        save_feature_table(&data, dir.path()).unwrap();
        let back = load_feature_table(dir.path()).unwrap();
        assert_eq!(back, data);
        for k in 0..2 {
            let a = data.features(k).unwrap().as_slice();
            let b = back.features(k).unwrap().as_slice();
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn feature_table_errors() {
        let data = tiny(12);
        let dir = tempfile::tempdir().unwrap();
        save_feature_table(&data, dir.path()).unwrap();

        let labels = dir.path().join("labels.csv");
        let original = fs::read_to_string(&labels).unwrap();
        let mut rows: Vec<&str> = original.lines().collect();
        rows[1] = "7";
        fs::write(&labels, rows.join("\n")).unwrap();
        match load_feature_table(dir.path()) {
            Err(Error::Format { path, message }) => {
                assert!(path.ends_with("labels.csv"));
                assert!(message.contains("out of range"), "{message}");
            }
            other => panic!("expected range error, got {other:?}"),
        }
        fs::write(&labels, &original).unwrap();

        let b = dir.path().join("b.csv");
        let text = fs::read_to_string(&b).unwrap();
        let widened: String = text.lines().map(|l| format!("{l},0.0\n")).collect();
        fs::write(&b, widened).unwrap();
        assert!(matches!(load_feature_table(dir.path()), Err(Error::Format { .. })));

        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[2] = "1.0,nope".into();
        fs::write(&b, lines.join("\n")).unwrap();
        match load_feature_table(dir.path()) {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (3, 2)),
            other => panic!("expected parse error, got {other:?}"),
        }

        lines.pop();
        fs::write(&b, lines.join("\n")).unwrap();
        match load_feature_table(dir.path()) {
            Err(Error::Format { path, .. }) => assert!(path.ends_with("b.csv")),
            other => panic!("expected row-count error, got {other:?}"),
        }
    }

    #[test]
    fn corruption_contract() {
        let data = tiny(13);
        assert_eq!(corrupt_gaussian(&data, 0, 0.0, 3.0, 1).unwrap(), data);
        assert_eq!(corrupt_gaussian(&data, 0, 0.7, 0.0, 1).unwrap(), data);
        assert!(corrupt_gaussian(&data, 0, 1.5, 1.0, 1).is_err());
        assert!(corrupt_gaussian(&data, 0, 0.5, -1.0, 1).is_err());
        assert!(corrupt_gaussian(&data, 5, 0.5, 1.0, 1).is_err());

        let mut spec = SyntheticSpec::dominance_benchmark(100);
        spec.num_samples = 100;
        let d = generate_synthetic(&spec, 2).unwrap();
        let c = corrupt_gaussian(&d, 1, 0.5, 1.0, 3).unwrap();
        let changed = (0..100)
            .filter(|&i| d.features(1).unwrap().row(i) != c.features(1).unwrap().row(i))
            .count();
        assert_eq!(changed, 50);
        assert_eq!(d.features(0).unwrap(), c.features(0).unwrap());
    }

    #[test]
    fn corruption_adds_variance() {
        let spec = SyntheticSpec {
            num_classes: 2,
            num_samples: 40_000,
            modalities: vec![ModalitySpec {
                name: "x".into(),
                dim: 2,
                margin: 0.0,
                noise: 1.0,
                confusable_pairs: vec![],
            }],
        };
        let d = generate_synthetic(&spec, 4).unwrap();
        let c = corrupt_gaussian(&d, 0, 0.5, 2.0f64.sqrt(), 5).unwrap();
        let (a, b) = (d.features(0).unwrap(), c.features(0).unwrap());
        let rows: Vec<usize> = (0..d.len()).filter(|&i| a.row(i) != b.row(i)).collect();
        for col in 0..2 {
            let var = |m: &Matrix| {
                let vals: Vec<f64> = rows.iter().map(|&r| m.get(r, col)).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64
            };
            let increase = var(b) - var(a);
            assert!((increase - 2.0).abs() < 0.1, "variance increase {increase}");
        }
    }

    #[test]
    fn split_contract() {
        let spec = SyntheticSpec::dominance_benchmark(100);
        let d = generate_synthetic(&spec, 8).unwrap();
        let (train, test) = split_indices(&d, 0.2, 1, false).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(split_indices(&d, 0.0, 1, false).is_err());
        assert!(split_indices(&d, 1.0, 1, false).is_err());

        // balanced two-class set
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let m = Modality {
            name: "x".into(),
            features: Matrix::zeros(100, 1),
        };
        let bal = MultiModalDataset::new(vec![m], labels, 2).unwrap();
        let (_, test) = split(&bal, 0.2, 3, true).unwrap();
        assert_eq!(test.class_counts(), vec![10, 10]);

        let (_, test) = split(&d, 0.3, 4, true).unwrap();
        let counts = d.class_counts();
        for (c, &t) in test.class_counts().iter().enumerate() {
            let share = counts[c] as f64 * 30.0 / 100.0;
            assert!((t as f64 - share).abs() <= 1.0);
        }
    }
}
