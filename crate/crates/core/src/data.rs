//! Dataset ingestion, client partitioning and per-client splits.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One labeled sample. `x` already carries the trailing constant-1 feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: Vec<f64>,
    /// Sensitive attribute, 1 = privileged group.
    pub s: u8,
    /// Label in {-1, +1}.
    pub y: i8,
}

impl DataPoint {
    pub fn new(x: Vec<f64>, s: u8, y: i8) -> Result<Self> {
        if s > 1 {
            return Err(Error::Encoding(format!("sensitive value {s} not in {{0,1}}")));
        }
        if y != 1 && y != -1 {
            return Err(Error::Encoding(format!("label {y} not in {{-1,+1}}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Encoding("non-finite feature value".into()));
        }
        Ok(Self { x, s, y })
    }

    /// The model input `a = (x, s)`.
    pub fn a(&self) -> Vec<f64> {
        let mut a = Vec::with_capacity(self.x.len() + 1);
        a.extend_from_slice(&self.x);
        a.push(self.s as f64);
        a
    }

    /// Length of `a`, i.e. the model dimension.
    pub fn model_dim(&self) -> usize {
        self.x.len() + 1
    }

    pub fn label(&self) -> f64 {
        self.y as f64
    }
}

/// A client's data. After [`partition_clients`] the whole shard sits in
/// `original_train`; [`split_train_test`] moves part of it to `test`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client_id: usize,
    pub original_train: Vec<DataPoint>,
    /// Row indices into the loaded dataset, parallel to `original_train`.
    pub train_ids: Vec<usize>,
    pub test: Vec<DataPoint>,
    pub test_ids: Vec<usize>,
    pub root: Vec<DataPoint>,
    /// Positions in `original_train` the root was drawn from.
    pub root_idx: Vec<usize>,
    pub proxy: Vec<DataPoint>,
}

impl ClientDataset {
    pub fn shard_len(&self) -> usize {
        self.original_train.len() + self.test.len()
    }

    /// Train and test together: the client's full original local dataset.
    pub fn original(&self) -> Vec<DataPoint> {
        let mut v = self.original_train.clone();
        v.extend_from_slice(&self.test);
        v
    }
}

/// Column layout of a tabular fairness dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub label_column: String,
    pub sensitive_column: String,
    pub positive_label_value: String,
    pub privileged_sensitive_value: String,
    pub feature_columns: Vec<String>,
    /// Subset of `feature_columns` that is one-hot encoded (first level dropped).
    #[serde(default)]
    pub categorical_columns: Vec<String>,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_true() -> bool {
    true
}

impl DatasetSpec {
    /// Law School admissions (bar passage), race as sensitive attribute.
    pub fn law_school() -> Self {
        Self {
            name: "law_school".into(),
            label_column: "pass_bar".into(),
            sensitive_column: "race".into(),
            positive_label_value: "1".into(),
            privileged_sensitive_value: "White".into(),
            feature_columns: [
                "decile1b", "decile3", "lsat", "ugpa", "zfygpa", "zgpa", "fulltime", "fam_inc",
                "male", "tier",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            categorical_columns: vec![],
            standardize: true,
        }
    }

    /// Dutch census 2001 (prestigious occupation), sex as sensitive attribute.
    pub fn dutch() -> Self {
        Self {
            name: "dutch".into(),
            label_column: "occupation".into(),
            sensitive_column: "sex".into(),
            positive_label_value: "5_4_9".into(),
            privileged_sensitive_value: "male".into(),
            feature_columns: [
                "age",
                "household_position",
                "household_size",
                "prev_residence_place",
                "citizenship",
                "country_birth",
                "edu_level",
                "economic_status",
                "cur_eco_activity",
                "marital_status",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            categorical_columns: vec![],
            standardize: true,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "law_school" | "law" => Some(Self::law_school()),
            "dutch" => Some(Self::dutch()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.label_column == self.sensitive_column {
            return Err(Error::Schema("label and sensitive columns coincide".into()));
        }
        for c in [&self.label_column, &self.sensitive_column] {
            if self.feature_columns.contains(c) {
                return Err(Error::Schema(format!("column {c:?} listed as a feature")));
            }
        }
        for c in &self.categorical_columns {
            if !self.feature_columns.contains(c) {
                return Err(Error::Schema(format!(
                    "categorical column {c:?} is not a feature column"
                )));
            }
        }
        Ok(())
    }
}

/// Loads a delimited file (comma separated, header row) into data points.
pub fn load_dataset(path: impl AsRef<Path>, spec: &DatasetSpec) -> Result<Vec<DataPoint>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, spec)
}

fn raw_equal(a: &str, b: &str) -> bool {
    if a == b {
        return true;
    }
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// [`load_dataset`] over any reader.
pub fn read_dataset<R: Read>(reader: R, spec: &DatasetSpec) -> Result<Vec<DataPoint>> {
    spec.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };
    let label_col = col(&spec.label_column)?;
    let sens_col = col(&spec.sensitive_column)?;
    let feat_cols: Vec<usize> = spec
        .feature_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;
    let is_cat: Vec<bool> = spec
        .feature_columns
        .iter()
        .map(|c| spec.categorical_columns.contains(c))
        .collect();

    let mut rows: Vec<(String, String, Vec<String>)> = Vec::new();
    let mut rejected = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("").to_string();
        let label = field(label_col);
        let sens = field(sens_col);
        let feats: Vec<String> = feat_cols.iter().map(|&i| field(i)).collect();
        if label.is_empty() || sens.is_empty() || feats.iter().any(|f| f.is_empty() || f == "?") {
            rejected += 1;
            continue;
        }
        rows.push((label, sens, feats));
    }
    if rejected > 0 {
        log::warn!("{}: rejected {rejected} rows with missing values", spec.name);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("{}: no data rows", spec.name)));
    }

    let distinct = |pick: &dyn Fn(&(String, String, Vec<String>)) -> &str| -> BTreeSet<String> {
        rows.iter().map(|r| pick(r).to_string()).collect()
    };
    let labels = distinct(&|r| &r.0);
    if labels.len() > 2 {
        return Err(Error::Encoding(format!(
            "label column {:?} has {} distinct values",
            spec.label_column,
            labels.len()
        )));
    }
    let sens = distinct(&|r| &r.1);
    if sens.len() > 2 {
        return Err(Error::Encoding(format!(
            "sensitive column {:?} has {} distinct values",
            spec.sensitive_column,
            sens.len()
        )));
    }

    // Categorical levels, sorted; the first level is the reference.
    let mut levels: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (j, &cat) in is_cat.iter().enumerate() {
        if cat {
            let set: BTreeSet<String> = rows.iter().map(|r| r.2[j].clone()).collect();
            levels.insert(j, set.into_iter().collect());
        }
    }

    let mut matrix: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    let mut numeric_mask: Vec<bool> = Vec::new();
    for (j, &cat) in is_cat.iter().enumerate() {
        if cat {
            numeric_mask.extend(std::iter::repeat_n(false, levels[&j].len().saturating_sub(1)));
        } else {
            numeric_mask.push(true);
        }
    }
    for (line, (_, _, feats)) in rows.iter().enumerate() {
        let mut x = Vec::with_capacity(numeric_mask.len() + 1);
        for (j, raw) in feats.iter().enumerate() {
            if is_cat[j] {
                let lv = &levels[&j];
                for level in &lv[1..] {
                    x.push(if level == raw { 1.0 } else { 0.0 });
                }
            } else {
                let v: f64 = raw.parse().map_err(|_| {
                    Error::Encoding(format!(
                        "row {}: column {:?} value {raw:?} is not numeric",
                        line + 2,
                        spec.feature_columns[j]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::Encoding(format!("row {}: non-finite value", line + 2)));
                }
                x.push(v);
            }
        }
        matrix.push(x);
    }

    if spec.standardize {
        standardize_columns(&mut matrix, &numeric_mask);
    }

    rows.iter()
        .zip(matrix)
        .map(|((label, sens, _), mut x)| {
            x.push(1.0);
            let y = if raw_equal(label, &spec.positive_label_value) { 1 } else { -1 };
            let s = if raw_equal(sens, &spec.privileged_sensitive_value) { 1 } else { 0 };
            DataPoint::new(x, s, y)
        })
        .collect()
}

/// Zero mean, unit population variance for every masked non-constant column.
fn standardize_columns(matrix: &mut [Vec<f64>], mask: &[bool]) {
    let n = matrix.len() as f64;
    for (j, &numeric) in mask.iter().enumerate() {
        if !numeric {
            continue;
        }
        let mean = matrix.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = matrix.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd <= 1e-12 * (1.0 + mean.abs()) {
            continue;
        }
        for r in matrix.iter_mut() {
            r[j] = (r[j] - mean) / sd;
        }
    }
}

/// Round half up on nonnegative reals; absorbs representation error just
/// below an exact half.
pub fn round_half_up(v: f64) -> usize {
    (v + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Randomly assigns points to `k` shards of near-equal size.
pub fn partition_clients<R: Rng + ?Sized>(
    data: &[DataPoint],
    k: usize,
    rng: &mut R,
) -> Result<Vec<ClientDataset>> {
    if k == 0 {
        return Err(Error::Partition("K must be at least 1".into()));
    }
    if k > data.len() {
        return Err(Error::Partition(format!(
            "cannot split {} points among {k} clients",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let base = data.len() / k;
    let extra = data.len() % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for c in 0..k {
        let len = base + usize::from(c < extra);
        let ids: Vec<usize> = order[start..start + len].to_vec();
        start += len;
        out.push(ClientDataset {
            client_id: c,
            original_train: ids.iter().map(|&i| data[i].clone()).collect(),
            train_ids: ids,
            test: vec![],
            test_ids: vec![],
            root: vec![],
            root_idx: vec![],
            proxy: vec![],
        });
    }
    Ok(out)
}

/// Shuffles the client's shard and splits it into train and test parts.
pub fn split_train_test<R: Rng + ?Sized>(
    client: &ClientDataset,
    train_frac: f64,
    rng: &mut R,
) -> Result<ClientDataset> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train fraction {train_frac} outside (0,1)")));
    }
    let mut pairs: Vec<(usize, DataPoint)> = client
        .train_ids
        .iter()
        .copied()
        .zip(client.original_train.iter().cloned())
        .chain(client.test_ids.iter().copied().zip(client.test.iter().cloned()))
        .collect();
    pairs.shuffle(rng);
    let n_train = round_half_up(train_frac * pairs.len() as f64).min(pairs.len());
    if n_train == pairs.len() {
        log::warn!(
            "client {}: shard of {} points leaves an empty test split",
            client.client_id,
            pairs.len()
        );
    }
    let test = pairs.split_off(n_train);
    let (train_ids, original_train) = pairs.into_iter().unzip();
    let (test_ids, test) = test.into_iter().unzip();
    Ok(ClientDataset {
        client_id: client.client_id,
        original_train,
        train_ids,
        test,
        test_ids,
        root: vec![],
        root_idx: vec![],
        proxy: client.proxy.clone(),
    })
}

/// Draws the server-side root sample from the client's training split,
/// uniformly without replacement, and records it on the client.
pub fn sample_root<R: Rng + ?Sized>(
    client: &mut ClientDataset,
    frac: f64,
    rng: &mut R,
) -> Result<Vec<DataPoint>> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::Config(format!("root fraction {frac} outside (0,1]")));
    }
    let n = client.original_train.len();
    if n == 0 {
        return Err(Error::Sampling(format!(
            "client {} has no training data",
            client.client_id
        )));
    }
    let m = round_half_up(frac * n as f64).clamp(1, n);
    let idx = rand::seq::index::sample(rng, n, m).into_vec();
    client.root = idx.iter().map(|&i| client.original_train[i].clone()).collect();
    client.root_idx = idx;
    Ok(client.root.clone())
}
