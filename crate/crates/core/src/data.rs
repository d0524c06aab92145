//! Datasets, CSV loading, and synthetic data generators.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{CounterRng, Domain};

/// One client's slice of data. Rows of `features` pair with `labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataShard {
    pub client_id: usize,
    /// Row-major matrix, `n_samples x n_features`.
    pub features: Vec<Vec<f64>>,
    /// Regression targets or class indices (as f64 for a uniform container).
    pub labels: Vec<f64>,
}

impl DataShard {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.labels.len() {
            return Err(Error::dim(self.labels.len(), self.features.len(), "shard rows"));
        }
        if self.is_empty() {
            return Err(Error::Contract(format!(
                "shard for client {} is empty",
                self.client_id
            )));
        }
        let width = self.n_features();
        for (i, row) in self.features.iter().enumerate() {
            if row.len() != width {
                return Err(Error::dim(width, row.len(), "feature row width"));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Contract(format!("non-finite feature in row {i}")));
            }
        }
        if self.labels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite label".into()));
        }
        Ok(())
    }

    /// Deterministic train/validation split: a seeded permutation of rows,
    /// first `fraction` to train. Every shard keeps at least one row on each
    /// side when it has two or more rows.
    pub fn split(&self, fraction: f64, seed: u64) -> (DataShard, DataShard) {
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = CounterRng::new(seed, Domain::Split, self.client_id as u64, 0, 0);
        for i in (1..n).rev() {
            let j = rng.next_index(i + 1);
            idx.swap(i, j);
        }
        let mut cut = ((n as f64) * fraction).round() as usize;
        cut = cut.clamp(1, n.saturating_sub(1).max(1));
        let pick = |ids: &[usize]| DataShard {
            client_id: self.client_id,
            features: ids.iter().map(|&i| self.features[i].clone()).collect(),
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
        };
        (pick(&idx[..cut]), pick(&idx[cut..]))
    }
}

/// A labeled dataset before partitioning.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    /// Client assignment per row when the source carries one.
    pub clients: Option<Vec<usize>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of distinct class labels, treating labels as class indices.
    pub fn class_count(&self) -> usize {
        self.labels
            .iter()
            .map(|&l| l as usize)
            .max()
            .map_or(0, |m| m + 1)
    }

    /// Group rows by the client column. Requires `clients` to be present.
    pub fn shards_by_client(&self) -> Result<Vec<DataShard>> {
        let clients = self
            .clients
            .as_ref()
            .ok_or_else(|| Error::Contract("dataset has no client column".into()))?;
        let n_clients = clients.iter().max().map_or(0, |m| m + 1);
        let mut shards: Vec<DataShard> = (0..n_clients)
            .map(|client_id| DataShard {
                client_id,
                features: Vec::new(),
                labels: Vec::new(),
            })
            .collect();
        for (row, &c) in clients.iter().enumerate() {
            shards[c].features.push(self.features[row].clone());
            shards[c].labels.push(self.labels[row]);
        }
        for s in &shards {
            s.validate()?;
        }
        Ok(shards)
    }
}

/// Column layout of a CSV dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub feature_columns: Vec<String>,
    pub label_column: String,
    #[serde(default)]
    pub client_column: Option<String>,
    /// Prepend a constant-1 feature (intercept term).
    #[serde(default)]
    pub add_intercept: bool,
}

/// Parse a headered CSV into a dataset according to `schema`.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Parse {
            row: 0,
            column: String::new(),
            msg: format!("cannot open {}: {e}", path.display()),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            column: String::new(),
            msg: e.to_string(),
        })?
        .clone();
    let col_index = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 1,
            column: name.to_string(),
            msg: "missing column".into(),
        })
    };

    let feature_idx: Vec<usize> = schema
        .feature_columns
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_>>()?;
    let label_idx = col_index(&schema.label_column)?;
    let client_idx = match &schema.client_column {
        Some(c) => Some(col_index(c)?),
        None => None,
    };

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut clients = client_idx.map(|_| Vec::new());

    for (row_no, record) in reader.records().enumerate() {
        let row = row_no + 2; // 1-based, after header
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            msg: e.to_string(),
        })?;
        let parse_cell = |idx: usize| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            raw.trim().parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: headers.get(idx).unwrap_or("?").to_string(),
                msg: format!("non-numeric cell {raw:?}"),
            })
        };
        let mut feat = Vec::with_capacity(feature_idx.len() + schema.add_intercept as usize);
        if schema.add_intercept {
            feat.push(1.0);
        }
        for &idx in &feature_idx {
            feat.push(parse_cell(idx)?);
        }
        features.push(feat);
        labels.push(parse_cell(label_idx)?);
        if let (Some(cs), Some(idx)) = (clients.as_mut(), client_idx) {
            let c = parse_cell(idx)?;
            if c < 0.0 || c.fract() != 0.0 {
                return Err(Error::Parse {
                    row,
                    column: headers.get(idx).unwrap_or("?").to_string(),
                    msg: format!("client id must be a nonnegative integer, got {c}"),
                });
            }
            cs.push(c as usize);
        }
    }

    if labels.is_empty() {
        return Err(Error::Parse {
            row: 1,
            column: String::new(),
            msg: "empty dataset".into(),
        });
    }

    Ok(Dataset {
        features,
        labels,
        clients,
    })
}

/// Synthetic heterogeneous regression: client `i` draws
/// `y = <x, truth_i> + noise`, features standard normal (first coordinate
/// fixed to 1 as an intercept). The spread of the ground truths is the
/// heterogeneity knob.
pub fn synth_regression(
    n_samples_per_client: usize,
    client_ground_truths: &[Vec<f64>],
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<DataShard>> {
    if client_ground_truths.is_empty() {
        return Err(Error::Contract("need at least one client ground truth".into()));
    }
    let d = client_ground_truths[0].len();
    if d == 0 || n_samples_per_client == 0 {
        return Err(Error::Contract("dimension and sample count must be positive".into()));
    }
    let mut shards = Vec::with_capacity(client_ground_truths.len());
    for (client_id, truth) in client_ground_truths.iter().enumerate() {
        if truth.len() != d {
            return Err(Error::dim(d, truth.len(), "ground truth dimension"));
        }
        let mut rng = CounterRng::new(seed, Domain::Data, client_id as u64, 0, 0);
        let mut features = Vec::with_capacity(n_samples_per_client);
        let mut labels = Vec::with_capacity(n_samples_per_client);
        for _ in 0..n_samples_per_client {
            let mut x = vec![1.0];
            for _ in 1..d {
                x.push(rng.next_standard_normal());
            }
            let mut y: f64 = x.iter().zip(truth).map(|(a, b)| a * b).sum();
            if noise_sd > 0.0 {
                y += noise_sd * rng.next_standard_normal();
            }
            features.push(x);
            labels.push(y);
        }
        shards.push(DataShard {
            client_id,
            features,
            labels,
        });
    }
    Ok(shards)
}

/// Synthetic classification pool: `class_count` Gaussian blobs in
/// `n_features` dimensions with centers scaled by `separation`.
pub fn synth_classification(
    n_samples: usize,
    n_features: usize,
    class_count: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_samples == 0 || n_features == 0 || class_count < 2 {
        return Err(Error::Contract(
            "need samples, features and at least two classes".into(),
        ));
    }
    let mut centers = Vec::with_capacity(class_count);
    let mut rng = CounterRng::new(seed, Domain::Data, 0, 0, 0);
    for _ in 0..class_count {
        centers.push((0..n_features).map(|_| separation * rng.next_standard_normal()).collect::<Vec<_>>());
    }
    let mut features = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let class = i % class_count;
        let center = &centers[class];
        let mut rng = CounterRng::new(seed, Domain::Data, 1, i as u64, 0);
        let x: Vec<f64> = center.iter().map(|c| c + rng.next_standard_normal()).collect();
        features.push(x);
        labels.push(class as f64);
    }
    Ok(Dataset {
        features,
        labels,
        clients: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(contents: &str) -> std::path::PathBuf {
        let mut path = std::env::temp_dir();
        path.push(format!("relfair-data-{}.csv", splitat(contents)));
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    fn splitat(s: &str) -> u64 {
        use std::collections::hash_map::DefaultHasher;
        use std::hash::{Hash, Hasher};
        let mut h = DefaultHasher::new();
        s.hash(&mut h);
        std::process::id() as u64 ^ h.finish()
    }

    #[test]
    fn csv_roundtrip_with_client_column() {
        let mut body = String::from("depth,flipper,bill,species\n");
        for c in 0..3 {
            for j in 0..10 {
                body.push_str(&format!("{}.0,{}.5,{},{}\n", c + j, j, 30 + c * 5 + j, c));
            }
        }
        let path = write_temp(&body);
        let schema = CsvSchema {
            feature_columns: vec!["depth".into(), "flipper".into()],
            label_column: "bill".into(),
            client_column: Some("species".into()),
            add_intercept: true,
        };
        let ds = load_csv(&path, &schema).unwrap();
        assert_eq!(ds.len(), 30);
        let shards = ds.shards_by_client().unwrap();
        assert_eq!(shards.len(), 3);
        for s in &shards {
            assert_eq!(s.len(), 10);
            assert_eq!(s.n_features(), 3); // intercept + 2
            assert_eq!(s.features[0][0], 1.0);
        }
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn csv_empty_file_is_parse_error() {
        let path = write_temp("a,b\n");
        let schema = CsvSchema {
            feature_columns: vec!["a".into()],
            label_column: "b".into(),
            client_column: None,
            add_intercept: false,
        };
        let err = load_csv(&path, &schema).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn csv_missing_column_and_bad_cell_name_location() {
        let path = write_temp("a,b\n1,2\n");
        let schema = CsvSchema {
            feature_columns: vec!["zz".into()],
            label_column: "b".into(),
            client_column: None,
            add_intercept: false,
        };
        match load_csv(&path, &schema).unwrap_err() {
            Error::Parse { column, .. } => assert_eq!(column, "zz"),
            other => panic!("unexpected {other}"),
        }

        let path2 = write_temp("a,b\n1,x\n");
        let schema2 = CsvSchema {
            feature_columns: vec!["a".into()],
            label_column: "b".into(),
            client_column: None,
            add_intercept: false,
        };
        match load_csv(&path2, &schema2).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other}"),
        }
        std::fs::remove_file(path).ok();
        std::fs::remove_file(path2).ok();
    }

    #[test]
    fn synth_regression_degenerate_heterogeneity() {
        let truth = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]];
        let shards = synth_regression(20, &truth, 0.0, 9).unwrap();
        // noise_sd = 0 and identical truths: every client's loss is minimized
        // exactly at the shared ground truth (zero residuals).
        for s in &shards {
            for (x, y) in s.features.iter().zip(&s.labels) {
                let pred = x[0] * 1.0 + x[1] * 2.0;
                assert!((pred - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn synth_regression_deterministic() {
        let truth = vec![vec![0.5, -1.0], vec![2.0, 0.0]];
        let a = synth_regression(15, &truth, 0.3, 11).unwrap();
        let b = synth_regression(15, &truth, 0.3, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_is_deterministic_and_exhaustive() {
        let shard = DataShard {
            client_id: 2,
            features: (0..10).map(|i| vec![i as f64]).collect(),
            labels: (0..10).map(|i| i as f64).collect(),
        };
        let (tr1, va1) = shard.split(0.8, 5);
        let (tr2, va2) = shard.split(0.8, 5);
        assert_eq!(tr1, tr2);
        assert_eq!(va1, va2);
        assert_eq!(tr1.len(), 8);
        assert_eq!(va1.len(), 2);
        let mut all: Vec<f64> = tr1.labels.iter().chain(&va1.labels).copied().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(all, shard.labels);
    }
}
