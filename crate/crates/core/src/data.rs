//! Labeled datasets: a seeded Gaussian-cluster generator, a CSV loader/writer
//! and the class-balanced train/test split.
//!
//! Every example carries a stable `index` that survives splitting and
//! subsetting. Task sequences, exemplar memories and manifests all refer to
//! examples by this index, never by position.
//!
//! CSV layout: one example per line, integer label first, then the feature
//! values, comma separated. Reals are written with 17 significant digits so
//! a save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::rng_for;

/// Distance of every synthetic class mean from the origin.
pub const SYNTHETIC_RADIUS: f64 = 1.0;

const MEAN_STREAM: u64 = 0x6d65_616e;
const SAMPLE_STREAM: u64 = 0x7361_6d70;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<LabeledExample>,
    num_classes: usize,
    feature_dim: usize,
    per_class_index: Vec<Vec<usize>>,
    position: Vec<usize>,
}

const NO_POSITION: usize = usize::MAX;

impl Dataset {
    /// Validates and indexes `examples`. Classes without examples are allowed
    /// here; the CSV loader rejects them separately.
    pub fn new(examples: Vec<LabeledExample>, num_classes: usize, feature_dim: usize) -> Result<Self> {
        let mut per_class_index = vec![Vec::new(); num_classes];
        let max_index = examples.iter().map(|e| e.index).max().unwrap_or(0);
        let mut position = if examples.is_empty() {
            Vec::new()
        } else {
            vec![NO_POSITION; max_index + 1]
        };
        for (pos, e) in examples.iter().enumerate() {
            if e.label >= num_classes {
                return Err(Error::Contract(format!(
                    "example {} has label {} but there are {num_classes} classes",
                    e.index, e.label
                )));
            }
            if e.features.len() != feature_dim {
                return Err(Error::Format(format!(
                    "example {} has {} features, expected {feature_dim}",
                    e.index,
                    e.features.len()
                )));
            }
            if !e.features.iter().all(|v| v.is_finite()) {
                return Err(Error::Format(format!("example {} has non-finite features", e.index)));
            }
            if position[e.index] != NO_POSITION {
                return Err(Error::Contract(format!("duplicate example index {}", e.index)));
            }
            position[e.index] = pos;
            per_class_index[e.label].push(e.index);
        }
        Ok(Self {
            examples,
            num_classes,
            feature_dim,
            per_class_index,
            position,
        })
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Stable indices of the examples of class `c`, in dataset order.
    pub fn class_indices(&self, c: usize) -> &[usize] {
        self.per_class_index.get(c).map_or(&[], Vec::as_slice)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.per_class_index.iter().map(Vec::len).collect()
    }

    pub fn get(&self, index: usize) -> Option<&LabeledExample> {
        match self.position.get(index) {
            Some(&pos) if pos != NO_POSITION => Some(&self.examples[pos]),
            _ => None,
        }
    }

    fn lookup(&self, index: usize) -> Result<&LabeledExample> {
        self.get(index)
            .ok_or_else(|| Error::Contract(format!("example index {index} not in dataset")))
    }

    pub fn label_of(&self, index: usize) -> Result<usize> {
        self.lookup(index).map(|e| e.label)
    }

    /// Feature rows for `indices`, in the given order.
    pub fn features_of(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.feature_dim);
        for &i in indices {
            data.extend_from_slice(&self.lookup(i)?.features);
        }
        Matrix::from_vec(indices.len(), self.feature_dim, data)
    }

    pub fn labels_of(&self, indices: &[usize]) -> Result<Vec<usize>> {
        indices.iter().map(|&i| self.label_of(i)).collect()
    }

    /// The examples with the given indices, keeping this dataset's order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut positions = indices
            .iter()
            .map(|&i| {
                self.lookup(i)?;
                Ok(self.position[i])
            })
            .collect::<Result<Vec<_>>>()?;
        positions.sort_unstable();
        positions.dedup();
        let examples = positions.into_iter().map(|p| self.examples[p].clone()).collect();
        Dataset::new(examples, self.num_classes, self.feature_dim)
    }

    /// All examples as one matrix plus labels, in dataset order.
    pub fn to_matrix(&self) -> (Matrix, Vec<usize>) {
        let data = self.examples.iter().flat_map(|e| e.features.iter().copied()).collect();
        let x = Matrix::from_vec(self.len(), self.feature_dim, data).expect("validated dims");
        (x, self.examples.iter().map(|e| e.label).collect())
    }
}

/// Formats a real with 17 significant digits, enough for an exact round trip.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Isotropic Gaussian clusters around seeded unit directions scaled to
/// [`SYNTHETIC_RADIUS`]. Example `i` of class `c` gets index
/// `c * per_class + i` and depends only on `(seed, c, i)`.
pub fn generate_synthetic(
    num_classes: usize,
    per_class: usize,
    feature_dim: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || per_class == 0 || feature_dim == 0 {
        return Err(Error::Parameter("synthetic dataset counts must all be at least 1".into()));
    }
    if !(cluster_spread > 0.0 && cluster_spread.is_finite()) {
        return Err(Error::Parameter(format!("cluster_spread must be positive, got {cluster_spread}")));
    }
    let means = synthetic_class_means(num_classes, feature_dim, seed);
    let mut examples = Vec::with_capacity(num_classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for i in 0..per_class {
            let mut rng = rng_for(seed, &[SAMPLE_STREAM, c as u64, i as u64]);
            let features = mean
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + cluster_spread * z
                })
                .collect();
            examples.push(LabeledExample {
                features,
                label: c,
                index: c * per_class + i,
            });
        }
    }
    Dataset::new(examples, num_classes, feature_dim)
}

/// The cluster centres used by [`generate_synthetic`] for the same seed.
pub fn synthetic_class_means(num_classes: usize, feature_dim: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..num_classes)
        .map(|c| {
            let mut rng = rng_for(seed, &[MEAN_STREAM, c as u64]);
            loop {
                let v: Vec<f64> = (0..feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    break v.into_iter().map(|x| SYNTHETIC_RADIUS * x / norm).collect();
                }
            }
        })
        .collect()
}

/// Reads a CSV dataset. Blank lines are skipped; line numbers in errors are
/// 1-based file lines.
pub fn load_csv(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, expected_dim)
}

pub fn parse_csv(text: &str, expected_dim: Option<usize>) -> Result<Dataset> {
    let mut examples = Vec::new();
    let mut dim = expected_dim;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let line_no = lineno + 1;
        let mut fields = line.split(',').map(str::trim);
        let label_field = fields.next().unwrap_or_default();
        let label: usize = label_field.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("label `{label_field}` is not a non-negative integer"),
        })?;
        let features = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        message: format!("feature `{f}` is not a finite number"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        match dim {
            Some(d) if d != features.len() => {
                return Err(Error::Format(format!(
                    "line {line_no}: {} features, expected {d}",
                    features.len()
                )))
            }
            None => dim = Some(features.len()),
            _ => {}
        }
        let index = examples.len();
        examples.push(LabeledExample { features, label, index });
    }
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let num_classes = examples.iter().map(|e| e.label).max().unwrap_or(0) + 1;
    let ds = Dataset::new(examples, num_classes, dim.unwrap_or(0))?;
    if let Some(c) = (0..num_classes).find(|&c| ds.class_indices(c).is_empty()) {
        return Err(Error::Format(format!(
            "class ids must be dense 0..{num_classes}; class {c} has no examples"
        )));
    }
    Ok(ds)
}

pub fn to_csv(ds: &Dataset) -> String {
    let mut out = String::new();
    for e in ds.examples() {
        write!(out, "{}", e.label).expect("write to String");
        for v in &e.features {
            write!(out, ",{}", format_real(*v)).expect("write to String");
        }
        out.push('\n');
    }
    out
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_csv(ds)).map_err(|e| Error::io(path, e))
}

/// Holds out exactly `test_per_class` seeded examples of every class.
pub fn split_train_test(ds: &Dataset, test_per_class: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut test_ids = Vec::with_capacity(test_per_class * ds.num_classes());
    if test_per_class > 0 {
        for c in 0..ds.num_classes() {
            let pool = ds.class_indices(c);
            if pool.len() <= test_per_class {
                return Err(Error::InsufficientSamples {
                    class: c,
                    needed: test_per_class + 1,
                    available: pool.len(),
                });
            }
            let mut rng = rng_for(seed, &[c as u64]);
            test_ids.extend(sample(&mut rng, pool.len(), test_per_class).into_iter().map(|k| pool[k]));
        }
    }
    let mut is_test = vec![false; ds.position.len()];
    for &i in &test_ids {
        is_test[i] = true;
    }
    let (test, train): (Vec<_>, Vec<_>) = ds.examples().iter().cloned().partition(|e| is_test[e.index]);
    Ok((
        Dataset::new(train, ds.num_classes(), ds.feature_dim())?,
        Dataset::new(test, ds.num_classes(), ds.feature_dim())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn synthetic_is_deterministic_and_counted() {
        let a = generate_synthetic(10, 100, 8, 0.3, 42).unwrap();
        let b = generate_synthetic(10, 100, 8, 0.3, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1000);
        assert!(a.class_counts().iter().all(|&n| n == 100));
        let total: usize = (0..10).map(|c| a.class_indices(c).len()).sum();
        assert_eq!(total, a.len());
    }

    #[test]
    fn synthetic_examples_independent_of_generation_order() {
        let small = generate_synthetic(3, 5, 4, 0.2, 9).unwrap();
        let large = generate_synthetic(6, 5, 4, 0.2, 9).unwrap();
        for e in small.examples() {
            assert_eq!(large.get(e.index).unwrap(), e);
        }
        // example i of class c is the same whether the class has 5 or 50 examples
        let longer = generate_synthetic(3, 50, 4, 0.2, 9).unwrap();
        assert_eq!(small.get(5 + 2).unwrap().features, longer.get(50 + 2).unwrap().features);
    }

    #[test]
    fn synthetic_means_distinct() {
        let means = synthetic_class_means(20, 16, 3);
        for i in 0..means.len() {
            for j in i + 1..means.len() {
                assert_ne!(means[i], means[j]);
            }
        }
    }

    #[test]
    fn near_separable_nearest_mean_oracle() {
        let ds = generate_synthetic(10, 100, 8, 0.01, 5).unwrap();
        let (train, test) = split_train_test(&ds, 20, 1).unwrap();
        let means: Vec<Vec<f64>> = (0..10)
            .map(|c| {
                let ids = train.class_indices(c);
                (0..8)
                    .map(|k| ids.iter().map(|&i| train.get(i).unwrap().features[k]).sum::<f64>() / ids.len() as f64)
                    .collect()
            })
            .collect();
        let correct = test
            .examples()
            .iter()
            .filter(|e| {
                let dist = |m: &Vec<f64>| m.iter().zip(&e.features).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                let best = (0..10).min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b]))).unwrap();
                best == e.label
            })
            .count();
        assert!(correct as f64 / test.len() as f64 > 0.99);
    }

    #[test]
    fn synthetic_rejects_bad_params() {
        assert!(generate_synthetic(0, 1, 1, 0.1, 0).is_err());
        assert!(generate_synthetic(2, 1, 1, 0.0, 0).is_err());
    }

    #[test]
    fn parse_small_file() {
        let ds = parse_csv("0,1.0,2.0\n1,3.0,4.0", None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.feature_dim(), 2);
        assert_eq!(ds.get(1).unwrap().features, vec![3.0, 4.0]);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_csv("", None), Err(Error::EmptyDataset)));
        assert!(matches!(parse_csv("\n\n", None), Err(Error::EmptyDataset)));
        assert!(matches!(parse_csv("0,1.0\nx,2.0\n", None), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_csv("0,1.0\n1,abc\n", None), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_csv("0,1.0\n1,2.0,3.0\n", None), Err(Error::Format(_))));
        assert!(matches!(parse_csv("0,1.0\n", Some(2)), Err(Error::Format(_))));
        // class 1 missing
        assert!(matches!(parse_csv("0,1.0\n2,2.0\n", None), Err(Error::Format(_))));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = generate_synthetic(3, 7, 5, 0.37, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        save_csv(&ds, &path).unwrap();
        let back = load_csv(&path, Some(5)).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in ds.examples().iter().zip(back.examples()) {
            assert_eq!(a.label, b.label);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.features), bits(&b.features));
        }
    }

    #[test]
    fn split_counts_and_disjointness() {
        let ds = generate_synthetic(10, 100, 4, 0.5, 2).unwrap();
        let (train, test) = split_train_test(&ds, 20, 7).unwrap();
        assert_eq!(test.len(), 200);
        assert!(test.class_counts().iter().all(|&n| n == 20));
        assert!(train.class_counts().iter().all(|&n| n == 80));
        let tr: BTreeSet<_> = train.examples().iter().map(|e| e.index).collect();
        let te: BTreeSet<_> = test.examples().iter().map(|e| e.index).collect();
        assert!(tr.is_disjoint(&te));
        let all: BTreeSet<_> = ds.examples().iter().map(|e| e.index).collect();
        assert_eq!(tr.union(&te).copied().collect::<BTreeSet<_>>(), all);
        assert_eq!(split_train_test(&ds, 20, 7).unwrap(), (train, test));
    }

    #[test]
    fn split_zero_and_too_small() {
        let ds = generate_synthetic(3, 5, 2, 0.5, 2).unwrap();
        let (train, test) = split_train_test(&ds, 0, 1).unwrap();
        assert!(test.is_empty());
        assert_eq!(test.num_classes(), 3);
        assert_eq!(train, ds);
        assert!(matches!(
            split_train_test(&ds, 5, 1),
            Err(Error::InsufficientSamples { class: 0, .. })
        ));
    }
}
