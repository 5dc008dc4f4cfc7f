//! Task data: CSV ingestion, synthetic blobs, standardization, splitting and
//! IID partitioning across simulated nodes.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::overlay::NodeId;
use crate::rng;

/// Dense row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, num_classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::shape("feature dimension must be at least 1"));
        }
        if num_classes == 0 {
            return Err(Error::shape("num_classes must be at least 1"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::shape(format!(
                "{} feature values do not form {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::shape(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Self {
            features,
            labels,
            dim,
            num_classes,
        })
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

    pub fn num_classes(&self) -> usize {
        self.num_classes
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

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.features
            .chunks_exact(self.dim)
            .zip(self.labels.iter().copied())
    }

    /// Copies the given rows, in order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }
}

/// The local data held by one node.
#[derive(Debug, Clone, PartialEq)]
pub struct DataShard {
    pub owner: NodeId,
    pub data: Dataset,
}

impl DataShard {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Which CSV column holds the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelColumn {
    #[default]
    Last,
    Index(usize),
}

/// Reads a numeric CSV file. Distinct label values are mapped, in ascending
/// numeric order, onto class indices `0..k`.
pub fn load_csv(path: &Path, label_column: LabelColumn, header: bool) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut width = None;
    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        // 1-based file line numbers for diagnostics.
        let row = idx + 1 + usize::from(header);
        let record = record.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Parse {
                row,
                column: record.len().min(w) + 1,
                message: format!("expected {w} cells, found {}", record.len()),
            });
        }
        if w < 2 {
            return Err(Error::Parse {
                row,
                column: 1,
                message: "need at least one feature column and a label column".into(),
            });
        }
        let label_idx = match label_column {
            LabelColumn::Last => w - 1,
            LabelColumn::Index(i) if i < w => i,
            LabelColumn::Index(i) => {
                return Err(Error::config(format!("label column {i} out of range for {w} columns")))
            }
        };
        for (col, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: col + 1,
                message: format!("non-numeric cell {cell:?}"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: col + 1,
                    message: format!("non-finite cell {cell:?}"),
                });
            }
            if col == label_idx {
                raw_labels.push(value);
            } else {
                features.push(value);
            }
        }
    }
    let Some(w) = width else {
        return Err(Error::Parse {
            row: 1,
            column: 1,
            message: "file contains no data rows".into(),
        });
    };

    let mut classes: Vec<f64> = raw_labels.clone();
    classes.sort_by(f64::total_cmp);
    classes.dedup();
    let labels = raw_labels
        .iter()
        .map(|v| classes.binary_search_by(|c| c.total_cmp(v)).expect("label present"))
        .collect();
    Dataset::new(features, labels, w - 1, classes.len().max(2))
}

/// `k` isotropic unit-variance Gaussian clusters. For `k <= d` the means sit
/// on scaled axis vectors, pairwise `separation` apart; otherwise they are
/// spaced `separation` apart along the first axis. Labels cycle `0..k`, so
/// class sizes differ by at most one.
pub fn generate_synthetic(n: usize, d: usize, k: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if k < 2 || n < k || d == 0 {
        return Err(Error::config(format!(
            "synthetic data needs n >= k >= 2 and d >= 1 (got n={n}, d={d}, k={k})"
        )));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::config("separation must be finite and non-negative"));
    }
    let means: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let mut m = vec![0.0; d];
            if k <= d {
                m[j] = separation / std::f64::consts::SQRT_2;
            } else {
                m[0] = j as f64 * separation;
            }
            m
        })
        .collect();
    let mut rng = rng::from_seed(seed);
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        for &mu in &means[class] {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(mu + z);
        }
        labels.push(class);
    }
    Dataset::new(features, labels, d, k)
}

/// Per-feature standardization learned from one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Sample standard deviation (n - 1 denominator); zero for constant columns.
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &Dataset) -> Result<Self> {
        let n = ds.len();
        if n < 2 {
            return Err(Error::precondition("normalization needs at least two rows"));
        }
        let d = ds.dim();
        let mut mean = vec![0.0; d];
        for (row, _) in ds.rows() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for (row, _) in ds.rows() {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(row) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|v| (v / (n - 1) as f64).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.dim() != self.mean.len() {
            return Err(Error::shape(format!(
                "standardizer fitted on {} features, dataset has {}",
                self.mean.len(),
                ds.dim()
            )));
        }
        let mut features = ds.features.clone();
        for row in features.chunks_exact_mut(ds.dim()) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                if *s > 0.0 {
                    *x = (*x - m) / s;
                }
            }
        }
        Dataset::new(features, ds.labels.clone(), ds.dim(), ds.num_classes())
    }
}

/// Standardizes every feature to sample mean 0 and sample std 1. Constant
/// features pass through unchanged.
pub fn normalize(ds: &Dataset) -> Result<(Dataset, Standardizer)> {
    let st = Standardizer::fit(ds)?;
    Ok((st.apply(ds)?, st))
}

/// Seeded shuffle, then the first `round(n * test_fraction)` rows form the
/// test set. Returns `(train, test)`.
pub fn split_train_test(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let n = ds.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::config(format!(
            "test fraction {test_fraction} leaves an empty split for {n} rows"
        )));
    }
    let order = shuffled(n, seed);
    Ok((ds.subset(&order[n_test..]), ds.subset(&order[..n_test])))
}

/// Seeded shuffle followed by round-robin assignment: shard `i` receives
/// shuffled positions `i, i + n_nodes, ...`. Shard owners are `0..n_nodes`.
pub fn partition_iid(ds: &Dataset, n_nodes: usize, seed: u64) -> Result<Vec<DataShard>> {
    if n_nodes == 0 {
        return Err(Error::config("cannot partition across zero nodes"));
    }
    if ds.len() < n_nodes {
        return Err(Error::config(format!(
            "{} rows cannot cover {n_nodes} nodes",
            ds.len()
        )));
    }
    let order = shuffled(ds.len(), seed);
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pos, &row) in order.iter().enumerate() {
        buckets.entry(pos % n_nodes).or_default().push(row);
    }
    Ok(buckets
        .into_iter()
        .map(|(node, rows)| DataShard {
            owner: NodeId(node as u64),
            data: ds.subset(&rows),
        })
        .collect())
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::from_seed(seed));
    order
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use proptest::prelude::*;

    use super::*;

    fn csv_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn column(ds: &Dataset, j: usize) -> Vec<f64> {
        ds.rows().map(|(r, _)| r[j]).collect()
    }

    #[test]
    fn load_small_csv() {
        let f = csv_file("1,2,0\n3,4,1\n5,6,1");
        let ds = load_csv(f.path(), LabelColumn::Last, false).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.labels(), &[0, 1, 1]);
        assert_eq!(ds.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn load_csv_with_header_and_first_label_column() {
        let f = csv_file("y,a,b\n-1,2,3\n1,4,5\n");
        let ds = load_csv(f.path(), LabelColumn::Index(0), true).unwrap();
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(ds.row(0), &[2.0, 3.0]);
    }

    #[test]
    fn text_cell_is_named_in_error() {
        let f = csv_file("1,2,0\n3,spam,1\n");
        let err = load_csv(f.path(), LabelColumn::Last, false).unwrap_err();
        match err {
            Error::Parse { row, column, message } => {
                assert_eq!((row, column), (2, 2));
                assert!(message.contains("spam"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_rejected() {
        let f = csv_file("1,2,0\n3,1\n");
        assert!(matches!(
            load_csv(f.path(), LabelColumn::Last, false),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_csv(Path::new("/nonexistent/x.csv"), LabelColumn::Last, false).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a = generate_synthetic(100, 2, 2, 10.0, 1).unwrap();
        assert_eq!(a, generate_synthetic(100, 2, 2, 10.0, 1).unwrap());
        assert_ne!(a, generate_synthetic(100, 2, 2, 10.0, 2).unwrap());
        let ten = generate_synthetic(10, 3, 10, 4.0, 5).unwrap();
        let mut counts = vec![0; 10];
        ten.labels().iter().for_each(|&l| counts[l] += 1);
        assert!(counts.iter().all(|&c| c == 1));
        assert!(generate_synthetic(5, 2, 10, 1.0, 0).is_err());
        assert!(generate_synthetic(5, 0, 2, 1.0, 0).is_err());
    }

    #[test]
    fn synthetic_means_are_separation_apart() {
        let ds = generate_synthetic(20_000, 3, 3, 6.0, 9).unwrap();
        let mut sums = vec![vec![0.0; 3]; 3];
        let mut counts = [0.0; 3];
        for (r, l) in ds.rows() {
            counts[l] += 1.0;
            for j in 0..3 {
                sums[l][j] += r[j];
            }
        }
        let means: Vec<Vec<f64>> = sums.iter().zip(counts).map(|(s, c)| s.iter().map(|v| v / c).collect()).collect();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!((dist(&means[0], &means[1]) - 6.0).abs() < 0.1);
        assert!((dist(&means[1], &means[2]) - 6.0).abs() < 0.1);
    }

    #[test]
    fn normalize_two_point_and_constant_columns() {
        let ds = Dataset::new(vec![1.0, 5.0, 3.0, 5.0], vec![0, 1], 2, 2).unwrap();
        let (norm, st) = normalize(&ds).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let c0 = column(&norm, 0);
        assert!((c0[0] + h).abs() < 1e-12 && (c0[1] - h).abs() < 1e-12);
        assert_eq!(column(&norm, 1), vec![5.0, 5.0]);
        assert_eq!(st.std[1], 0.0);

        let three = Dataset::new(vec![5.0, 5.0, 5.0], vec![0, 1, 0], 1, 2).unwrap();
        assert_eq!(normalize(&three).unwrap().0, three);
        let one = Dataset::new(vec![1.0], vec![0], 1, 2).unwrap();
        assert!(matches!(normalize(&one), Err(Error::Precondition(_))));
    }

    #[test]
    fn renormalizing_is_idempotent() {
        let ds = generate_synthetic(200, 4, 3, 3.0, 11).unwrap();
        let (once, _) = normalize(&ds).unwrap();
        let (twice, _) = normalize(&once).unwrap();
        for (a, b) in once.features.iter().zip(&twice.features) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn split_sizes_and_partition_law() {
        let ds = generate_synthetic(10, 2, 2, 1.0, 3).unwrap();
        let (train, test) = split_train_test(&ds, 0.2, 4).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let mut all: Vec<_> = train.rows().chain(test.rows()).map(|(r, l)| (r.to_vec(), l)).collect();
        let mut orig: Vec<_> = ds.rows().map(|(r, l)| (r.to_vec(), l)).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        orig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(all, orig);
        assert_eq!(split_train_test(&ds, 0.2, 4).unwrap(), (train, test));
        assert!(split_train_test(&ds, 0.0, 4).is_err());
        assert!(split_train_test(&ds, 1.0, 4).is_err());
        assert!(split_train_test(&ds, 0.01, 4).is_err());
    }

    #[test]
    fn partition_balance_bounds() {
        let ds = generate_synthetic(100, 2, 2, 1.0, 3).unwrap();
        let shards = partition_iid(&ds, 100, 7).unwrap();
        assert!(shards.iter().all(|s| s.len() == 1));
        let ds = generate_synthetic(101, 2, 2, 1.0, 3).unwrap();
        let shards = partition_iid(&ds, 100, 7).unwrap();
        assert_eq!(shards.iter().filter(|s| s.len() == 2).count(), 1);
        assert_eq!(shards.iter().filter(|s| s.len() == 1).count(), 99);
        assert!(partition_iid(&ds, 102, 7).is_err());
    }

    fn multiset(rows: impl Iterator<Item = (Vec<f64>, usize)>) -> Vec<(Vec<u64>, usize)> {
        let mut v: Vec<_> = rows.map(|(r, l)| (r.iter().map(|x| x.to_bits()).collect(), l)).collect();
        v.sort();
        v
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn partition_is_a_disjoint_cover(n in 1usize..120, nodes in 1usize..60, seed in any::<u64>()) {
            prop_assume!(n >= nodes);
            // Row index encoded as the feature makes disjointness checkable.
            let ds = Dataset::new((0..n).map(|i| i as f64).collect(), vec![0; n], 1, 2).unwrap();
            let shards = partition_iid(&ds, nodes, seed).unwrap();
            prop_assert_eq!(shards.len(), nodes);
            let mut seen: Vec<usize> = shards.iter().flat_map(|s| s.data.rows().map(|(r, _)| r[0] as usize)).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = shards.iter().map(DataShard::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }

        #[test]
        fn concatenated_shards_permute_training_rows(seed in any::<u64>(), nodes in 1usize..20) {
            let ds = generate_synthetic(40, 3, 4, 2.0, seed).unwrap();
            let shards = partition_iid(&ds, nodes, seed ^ 1).unwrap();
            let joined = multiset(shards.iter().flat_map(|s| s.data.rows().map(|(r, l)| (r.to_vec(), l))));
            prop_assert_eq!(joined, multiset(ds.rows().map(|(r, l)| (r.to_vec(), l))));
        }

        #[test]
        fn normalization_ignores_positive_rescaling(
            seed in any::<u64>(),
            scales in proptest::collection::vec(0.01f64..100.0, 3),
        ) {
            let ds = generate_synthetic(30, 3, 2, 2.0, seed).unwrap();
            let mut scaled = ds.clone();
            for row in scaled.features.chunks_exact_mut(3) {
                for (x, s) in row.iter_mut().zip(&scales) {
                    *x *= s;
                }
            }
            let (a, _) = normalize(&ds).unwrap();
            let (b, _) = normalize(&scaled).unwrap();
            for (x, y) in a.features.iter().zip(&b.features) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
