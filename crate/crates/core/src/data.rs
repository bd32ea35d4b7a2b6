//! Multi-view datasets: CSV ingestion, stratified splitting, train-only
//! z-scoring and a seeded synthetic generator.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::loss::OneHot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Unassigned,
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Unassigned => "unassigned",
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// One view's `n_samples × dim` feature matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMatrix {
    pub id: String,
    pub feature_names: Vec<String>,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl ViewMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Aligned per-view feature matrices with labels, ids and split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    views: Vec<ViewMatrix>,
    labels: Vec<usize>,
    sample_ids: Vec<String>,
    split: Vec<Split>,
    classes: usize,
}

impl MultiViewDataset {
    pub fn new(
        views: Vec<ViewMatrix>,
        labels: Vec<usize>,
        sample_ids: Vec<String>,
        classes: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if views.is_empty() {
            return Err(Error::EmptyInput("dataset has no views".to_string()));
        }
        if classes < 2 {
            return Err(Error::Label(format!("need at least 2 classes, got {classes}")));
        }
        if sample_ids.len() != n {
            return Err(Error::Alignment(format!(
                "{} sample ids for {} labels",
                sample_ids.len(),
                n
            )));
        }
        let mut seen = BTreeSet::new();
        for v in &views {
            if v.data.len() != n * v.dim || v.dim == 0 {
                return Err(Error::Alignment(format!(
                    "view '{}' does not hold {} rows of width {}",
                    v.id, n, v.dim
                )));
            }
            if !seen.insert(v.id.clone()) {
                return Err(Error::Config(format!("duplicate view id '{}'", v.id)));
            }
        }
        if let Some(bad) = labels.iter().find(|l| **l >= classes) {
            return Err(Error::Label(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self {
            views,
            labels,
            sample_ids,
            split: vec![Split::Unassigned; n],
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn views(&self) -> &[ViewMatrix] {
        &self.views
    }

    pub fn view_ids(&self) -> Vec<String> {
        self.views.iter().map(|v| v.id.clone()).collect()
    }

    pub fn view(&self, id: &str) -> Option<&ViewMatrix> {
        self.views.iter().find(|v| v.id == id)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn one_hot(&self, i: usize) -> OneHot {
        OneHot::new(self.labels[i], self.classes).expect("labels validated at construction")
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|i| self.split[*i] == split).collect()
    }

    pub fn with_split(mut self, split: Vec<Split>) -> Result<Self> {
        if split.len() != self.len() {
            return Err(Error::Alignment(format!(
                "{} split tags for {} samples",
                split.len(),
                self.len()
            )));
        }
        self.split = split;
        Ok(self)
    }

    /// Borrowed view of one sample's features; does not expose the label.
    pub fn sample(&self, i: usize) -> SampleRef<'_> {
        SampleRef { dataset: self, index: i }
    }
}

/// Features of one sample, looked up lazily by view id.
#[derive(Debug, Clone, Copy)]
pub struct SampleRef<'a> {
    dataset: &'a MultiViewDataset,
    index: usize,
}

impl<'a> SampleRef<'a> {
    pub fn index(&self) -> usize {
        self.index
    }
}

/// Source of per-view features for a single sample.
pub trait ViewFeatures {
    fn sample_id(&self) -> &str;
    fn features(&self, view_id: &str) -> Option<&[f64]>;
}

impl ViewFeatures for SampleRef<'_> {
    fn sample_id(&self) -> &str {
        &self.dataset.sample_ids[self.index]
    }

    fn features(&self, view_id: &str) -> Option<&[f64]> {
        self.dataset.view(view_id).map(|v| v.row(self.index))
    }
}

/// An owned sample: per-view features plus its one-hot label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub sample_id: String,
    pub features: Vec<(String, Vec<f64>)>,
    pub label: OneHot,
}

impl ViewFeatures for LabeledSample {
    fn sample_id(&self) -> &str {
        &self.sample_id
    }

    fn features(&self, view_id: &str) -> Option<&[f64]> {
        self.features
            .iter()
            .find(|(id, _)| id == view_id)
            .map(|(_, x)| x.as_slice())
    }
}

/// Whether view CSVs carry the sample id in their first column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IdColumn {
    /// First column holds ids when its header is `sample_id`.
    #[default]
    Auto,
    First,
    /// Rows follow the label file order.
    None,
}

fn parse_err(file: &Path, row: usize, column: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        file: file.display().to_string(),
        row,
        column,
        detail: detail.into(),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn short_list(ids: &[&String]) -> String {
    let shown: Vec<&str> = ids.iter().take(5).map(|s| s.as_str()).collect();
    if ids.len() > 5 {
        format!("{} and {} more", shown.join(", "), ids.len() - 5)
    } else {
        shown.join(", ")
    }
}

fn read_labels(path: &Path) -> Result<(Vec<String>, Vec<usize>)> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, 1, e.to_string()))?
        .clone();
    let id_col = headers.iter().position(|h| h == "sample_id").unwrap_or(0);
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .unwrap_or(if id_col == 0 { 1 } else { 0 });
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(path, row, 0, e.to_string())
        })?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let id = record
            .get(id_col)
            .ok_or_else(|| parse_err(path, row, id_col + 1, "missing sample_id"))?;
        let raw = record
            .get(label_col)
            .ok_or_else(|| parse_err(path, row, label_col + 1, "missing label"))?;
        let label: usize = raw
            .parse()
            .map_err(|_| parse_err(path, row, label_col + 1, format!("'{raw}' is not a class index")))?;
        ids.push(id.to_string());
        labels.push(label);
    }
    if ids.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no rows", path.display())));
    }
    Ok((ids, labels))
}

struct RawView {
    ids: Option<Vec<String>>,
    names: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_view(path: &Path, policy: IdColumn) -> Result<RawView> {
    let mut reader = open_csv(path)?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, 1, e.to_string()))?
        .clone();
    let has_ids = match policy {
        IdColumn::First => true,
        IdColumn::None => false,
        IdColumn::Auto => headers.get(0) == Some("sample_id"),
    };
    let skip = usize::from(has_ids);
    let names: Vec<String> = headers.iter().skip(skip).map(str::to_string).collect();
    if names.is_empty() {
        return Err(parse_err(path, 1, 1, "no feature columns"));
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(path, row, 0, e.to_string())
        })?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != names.len() + skip {
            return Err(parse_err(
                path,
                row,
                record.len(),
                format!("expected {} columns", names.len() + skip),
            ));
        }
        if has_ids {
            ids.push(record[0].to_string());
        }
        let mut values = Vec::with_capacity(names.len());
        for (c, cell) in record.iter().enumerate().skip(skip) {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(parse_err(
                        path,
                        row,
                        c + 1,
                        format!("'{cell}' is not a finite number"),
                    ))
                }
            }
        }
        rows.push(values);
    }
    Ok(RawView {
        ids: has_ids.then_some(ids),
        names,
        rows,
    })
}

/// Loads one CSV per view plus a `sample_id,label` CSV, aligned by sample id.
/// The label file fixes the sample order.
pub fn load_dataset(
    views: &[(String, PathBuf)],
    label_path: &Path,
    policy: IdColumn,
) -> Result<MultiViewDataset> {
    if views.is_empty() {
        return Err(Error::Config("no view files given".to_string()));
    }
    let (ids, labels) = read_labels(label_path)?;
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, id) in ids.iter().enumerate() {
        if index.insert(id.as_str(), i).is_some() {
            return Err(Error::Alignment(format!(
                "{}: duplicate sample id '{id}'",
                label_path.display()
            )));
        }
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let mut matrices = Vec::with_capacity(views.len());
    for (view_id, path) in views {
        let raw = read_view(path, policy)?;
        let dim = raw.names.len();
        let mut data = vec![0.0; ids.len() * dim];
        match raw.ids {
            Some(view_ids) => {
                let mut seen = vec![false; ids.len()];
                let mut unknown = Vec::new();
                for (r, id) in view_ids.iter().enumerate() {
                    match index.get(id.as_str()) {
                        Some(&i) if !seen[i] => {
                            seen[i] = true;
                            data[i * dim..(i + 1) * dim].copy_from_slice(&raw.rows[r]);
                        }
                        Some(_) => {
                            return Err(Error::Alignment(format!(
                                "{}: duplicate sample id '{id}'",
                                path.display()
                            )))
                        }
                        None => unknown.push(id),
                    }
                }
                if !unknown.is_empty() {
                    return Err(Error::Alignment(format!(
                        "{}: ids missing from the label file: {}",
                        path.display(),
                        short_list(&unknown)
                    )));
                }
                let missing: Vec<&String> = ids
                    .iter()
                    .zip(&seen)
                    .filter(|(_, s)| !**s)
                    .map(|(id, _)| id)
                    .collect();
                if !missing.is_empty() {
                    return Err(Error::Alignment(format!(
                        "{}: labelled ids missing from this view: {}",
                        path.display(),
                        short_list(&missing)
                    )));
                }
            }
            None => {
                if raw.rows.len() != ids.len() {
                    return Err(Error::Alignment(format!(
                        "{}: {} rows but the label file has {}",
                        path.display(),
                        raw.rows.len(),
                        ids.len()
                    )));
                }
                for (i, r) in raw.rows.iter().enumerate() {
                    data[i * dim..(i + 1) * dim].copy_from_slice(r);
                }
            }
        }
        matrices.push(ViewMatrix {
            id: view_id.clone(),
            feature_names: raw.names,
            dim,
            data,
        });
    }
    MultiViewDataset::new(matrices, labels, ids, classes)
}

/// How to partition samples into train / validation / test.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    Fractions { train: f64, validation: f64, test: f64 },
    /// Explicit sample-id lists that must partition the dataset.
    Explicit {
        train: Vec<String>,
        validation: Vec<String>,
        test: Vec<String>,
    },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

/// Tags every sample with a split. Fractions are applied per class after a
/// seeded shuffle.
pub fn split_dataset(ds: MultiViewDataset, spec: &SplitSpec, seed: u64) -> Result<MultiViewDataset> {
    let n = ds.len();
    let mut tags = vec![Split::Unassigned; n];
    match spec {
        SplitSpec::Fractions {
            train,
            validation,
            test,
        } => {
            let fracs = [*train, *validation, *test];
            if fracs.iter().any(|f| !(*f > 0.0)) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "split fractions must be positive and sum to 1, got {fracs:?}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for class in 0..ds.classes() {
                let mut members: Vec<usize> = (0..n).filter(|i| ds.labels[*i] == class).collect();
                if members.is_empty() {
                    continue;
                }
                members.shuffle(&mut rng);
                let m = members.len() as f64;
                let n_train = ((m * train).round() as usize).min(members.len());
                let n_val = ((m * validation).round() as usize).min(members.len() - n_train);
                let n_test = members.len() - n_train - n_val;
                if n_train == 0 || n_val == 0 || n_test == 0 {
                    return Err(Error::Stratification(format!(
                        "class {class} ({} samples) cannot populate every split ({n_train}/{n_val}/{n_test})",
                        members.len()
                    )));
                }
                for (r, &i) in members.iter().enumerate() {
                    tags[i] = if r < n_train {
                        Split::Train
                    } else if r < n_train + n_val {
                        Split::Validation
                    } else {
                        Split::Test
                    };
                }
            }
        }
        SplitSpec::Explicit {
            train,
            validation,
            test,
        } => {
            let index: HashMap<&str, usize> = ds
                .sample_ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.as_str(), i))
                .collect();
            for (ids, tag) in [(train, Split::Train), (validation, Split::Validation), (test, Split::Test)] {
                for id in ids {
                    let i = *index.get(id.as_str()).ok_or_else(|| {
                        Error::Alignment(format!("split file names unknown sample '{id}'"))
                    })?;
                    if tags[i] != Split::Unassigned {
                        return Err(Error::Alignment(format!(
                            "sample '{id}' assigned to more than one split"
                        )));
                    }
                    tags[i] = tag;
                }
            }
            let unassigned: Vec<&String> = tags
                .iter()
                .zip(&ds.sample_ids)
                .filter(|(t, _)| **t == Split::Unassigned)
                .map(|(_, id)| id)
                .collect();
            if !unassigned.is_empty() {
                return Err(Error::Alignment(format!(
                    "split files leave samples unassigned: {}",
                    short_list(&unassigned)
                )));
            }
        }
    }
    for s in [Split::Train, Split::Validation, Split::Test] {
        if !tags.contains(&s) {
            return Err(Error::Stratification(format!("{} split is empty", s.name())));
        }
    }
    ds.with_split(tags)
}

/// Per-feature mean and population standard deviation of the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const MIN_STD: f64 = 1e-12;

pub fn training_stats(ds: &MultiViewDataset) -> Result<Vec<FeatureStats>> {
    let train = ds.indices(Split::Train);
    if train.is_empty() {
        return Err(Error::Config("normalization needs a non-empty training split".to_string()));
    }
    let n = train.len() as f64;
    Ok(ds
        .views
        .iter()
        .map(|v| {
            let mut mean = vec![0.0; v.dim];
            for &i in &train {
                for (m, x) in mean.iter_mut().zip(v.row(i)) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; v.dim];
            for &i in &train {
                for ((s, x), m) in var.iter_mut().zip(v.row(i)).zip(&mean) {
                    *s += (x - m) * (x - m);
                }
            }
            let std = var.iter().map(|s| (s / n).sqrt()).collect();
            FeatureStats { mean, std }
        })
        .collect())
}

/// Z-scores every feature with training-split statistics; near-constant
/// features are only centred.
pub fn normalize(ds: &MultiViewDataset) -> Result<MultiViewDataset> {
    let stats = training_stats(ds)?;
    let mut out = ds.clone();
    for (v, st) in out.views.iter_mut().zip(&stats) {
        let dim = v.dim;
        for (j, x) in v.data.iter_mut().enumerate() {
            let f = j % dim;
            let centred = *x - st.mean[f];
            *x = if st.std[f] < MIN_STD { centred } else { centred / st.std[f] };
        }
    }
    Ok(out)
}

/// Parameters of the Gaussian-blob multi-view generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub classes: usize,
    pub feature_dims: Vec<usize>,
    /// Norm of every class mean, per view.
    pub separations: Vec<f64>,
    pub noise: f64,
    pub seed: u64,
    #[serde(default)]
    pub view_ids: Vec<String>,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("synthetic classes must be >= 2".to_string()));
        }
        if self.n_samples < self.classes {
            return Err(Error::Config("synthetic n_samples must be >= classes".to_string()));
        }
        if self.feature_dims.is_empty() || self.feature_dims.contains(&0) {
            return Err(Error::Config("synthetic feature_dims must be non-empty and >= 1".to_string()));
        }
        if self.separations.len() != self.feature_dims.len() {
            return Err(Error::Config("one separation per view is required".to_string()));
        }
        if self.separations.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Config("separations must be finite and >= 0".to_string()));
        }
        if !(self.noise > 0.0) || !self.noise.is_finite() {
            return Err(Error::Config("noise must be > 0".to_string()));
        }
        if !self.view_ids.is_empty() && self.view_ids.len() != self.feature_dims.len() {
            return Err(Error::Config("view_ids must name every view".to_string()));
        }
        Ok(())
    }

    pub fn view_names(&self) -> Vec<String> {
        if self.view_ids.is_empty() {
            (1..=self.feature_dims.len()).map(|v| format!("view{v}")).collect()
        } else {
            self.view_ids.clone()
        }
    }
}

/// Class `k` in view `v` is an isotropic Gaussian (scale `noise`) around a
/// mean of norm `separations[v]`: the `k`-th axis when `K <= dim`, otherwise
/// a seeded random direction.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<MultiViewDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = cfg.n_samples;
    let k = cfg.classes;
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);
    let sample_ids: Vec<String> = (0..n).map(|i| format!("s{:05}", i + 1)).collect();
    let mut views = Vec::with_capacity(cfg.feature_dims.len());
    for ((id, &dim), &sep) in cfg.view_names().into_iter().zip(&cfg.feature_dims).zip(&cfg.separations) {
        let means: Vec<Vec<f64>> = (0..k)
            .map(|class| {
                let mut dir = vec![0.0; dim];
                if k <= dim {
                    dir[class] = 1.0;
                } else {
                    dir.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
                    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                    dir.iter_mut().for_each(|x| *x /= norm);
                }
                dir.iter().map(|x| x * sep).collect()
            })
            .collect();
        let mut data = Vec::with_capacity(n * dim);
        for &label in &labels {
            for mu in &means[label] {
                data.push(mu + cfg.noise * normal.sample(&mut rng));
            }
        }
        views.push(ViewMatrix {
            feature_names: (1..=dim).map(|j| format!("f{j}")).collect(),
            id,
            dim,
            data,
        });
    }
    MultiViewDataset::new(views, labels, sample_ids, k)
}

/// Writes `view_<id>.csv` files (with a `sample_id` column) and `labels.csv`.
/// Returns the written paths.
pub fn write_dataset(ds: &MultiViewDataset, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let io = |e: csv::Error| Error::Io(e.to_string());
    for v in &ds.views {
        let path = dir.join(format!("view_{}.csv", v.id));
        let mut w = csv::Writer::from_path(&path).map_err(io)?;
        let mut header = vec!["sample_id".to_string()];
        header.extend(v.feature_names.iter().cloned());
        w.write_record(&header).map_err(io)?;
        for i in 0..ds.len() {
            let mut rec = vec![ds.sample_ids[i].clone()];
            rec.extend(v.row(i).iter().map(|x| x.to_string()));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush()?;
        written.push(path);
    }
    let path = dir.join("labels.csv");
    let mut w = csv::Writer::from_path(&path).map_err(io)?;
    w.write_record(["sample_id", "label"]).map_err(io)?;
    for (id, label) in ds.sample_ids.iter().zip(&ds.labels) {
        w.write_record([id.clone(), label.to_string()]).map_err(io)?;
    }
    w.flush()?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, k: usize) -> MultiViewDataset {
        let view = ViewMatrix {
            id: "a".into(),
            feature_names: vec!["x".into()],
            dim: 1,
            data: (0..n).map(|i| i as f64).collect(),
        };
        MultiViewDataset::new(
            vec![view],
            (0..n).map(|i| i % k).collect(),
            (0..n).map(|i| format!("id{i}")).collect(),
            k,
        )
        .unwrap()
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_and_aligns_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write(dir.path(), "labels.csv", "sample_id,label\np1,0\np2,1\np3,1\n");
        let a = write(dir.path(), "a.csv", "sample_id,g1,g2\np3,5,6\np1,1,2\np2,3,4\n");
        let b = write(dir.path(), "b.csv", "sample_id,m1\np2,20\np1,10\np3,30\n");
        let ds = load_dataset(
            &[("a".into(), a), ("b".into(), b)],
            &labels,
            IdColumn::Auto,
        )
        .unwrap();
        assert_eq!(ds.views().len(), 2);
        assert_eq!(ds.classes(), 2);
        assert_eq!(ds.view("a").unwrap().row(0), &[1.0, 2.0]);
        assert_eq!(ds.view("a").unwrap().row(2), &[5.0, 6.0]);
        assert_eq!(ds.view("b").unwrap().row(1), &[20.0]);
        assert_eq!(ds.sample_ids(), &["p1", "p2", "p3"]);
    }

    #[test]
    fn row_order_policy() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write(dir.path(), "labels.csv", "sample_id,label\np1,0\np2,1\n");
        let a = write(dir.path(), "a.csv", "g1,g2\n1,2\n3,4\n");
        let ds = load_dataset(&[("a".into(), a.clone())], &labels, IdColumn::None).unwrap();
        assert_eq!(ds.view("a").unwrap().row(1), &[3.0, 4.0]);
        let short = write(dir.path(), "s.csv", "g1\n1\n");
        assert!(matches!(
            load_dataset(&[("s".into(), short)], &labels, IdColumn::None),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn label_file_missing_an_id() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write(dir.path(), "labels.csv", "sample_id,label\np1,0\np2,1\n");
        let a = write(dir.path(), "a.csv", "sample_id,g\np1,1\np2,2\np9,3\n");
        match load_dataset(&[("a".into(), a)], &labels, IdColumn::Auto) {
            Err(Error::Alignment(msg)) => assert!(msg.contains("p9"), "{msg}"),
            other => panic!("expected alignment error, got {other:?}"),
        }
        let b = write(dir.path(), "b.csv", "sample_id,g\np1,1\n");
        match load_dataset(&[("b".into(), b)], &labels, IdColumn::Auto) {
            Err(Error::Alignment(msg)) => assert!(msg.contains("p2"), "{msg}"),
            other => panic!("expected alignment error, got {other:?}"),
        }
    }

    #[test]
    fn nan_cell_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write(dir.path(), "labels.csv", "sample_id,label\np1,0\np2,1\n");
        let a = write(dir.path(), "a.csv", "sample_id,g1,g2\np1,1,2\np2,NaN,4\n");
        match load_dataset(&[("a".into(), a)], &labels, IdColumn::Auto) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn stratified_counts() {
        let ds = split_dataset(tiny(100, 2), &SplitSpec::default(), 5).unwrap();
        for class in 0..2 {
            let count = |s| {
                (0..100)
                    .filter(|i| ds.labels()[*i] == class && ds.split()[*i] == s)
                    .count()
            };
            assert_eq!(count(Split::Train), 30);
            assert_eq!(count(Split::Validation), 10);
            assert_eq!(count(Split::Test), 10);
        }
        let again = split_dataset(tiny(100, 2), &SplitSpec::default(), 5).unwrap();
        assert_eq!(ds.split(), again.split());
        let other = split_dataset(tiny(100, 2), &SplitSpec::default(), 6).unwrap();
        assert_ne!(ds.split(), other.split());
    }

    #[test]
    fn stratification_failure() {
        // Two samples per class cannot fill three splits.
        assert!(matches!(
            split_dataset(tiny(4, 2), &SplitSpec::default(), 1),
            Err(Error::Stratification(_))
        ));
    }

    #[test]
    fn explicit_split_is_honored() {
        let ids = |r: std::ops::Range<usize>| r.map(|i| format!("id{i}")).collect::<Vec<_>>();
        let spec = SplitSpec::Explicit {
            train: ids(0..5),
            validation: ids(5..7),
            test: ids(7..10),
        };
        let ds = split_dataset(tiny(10, 2), &spec, 0).unwrap();
        assert_eq!(ds.indices(Split::Train), (0..5).collect::<Vec<_>>());
        assert_eq!(ds.indices(Split::Validation), vec![5, 6]);
        assert_eq!(ds.indices(Split::Test), vec![7, 8, 9]);

        let bad = SplitSpec::Explicit {
            train: ids(0..5),
            validation: ids(5..7),
            test: ids(8..10),
        };
        assert!(matches!(split_dataset(tiny(10, 2), &bad, 0), Err(Error::Alignment(_))));
    }

    #[test]
    fn normalization_uses_training_rows_only() {
        let view = ViewMatrix {
            id: "a".into(),
            feature_names: vec!["x".into(), "c".into()],
            dim: 2,
            data: vec![1.0, 7.0, 3.0, 7.0, 100.0, 7.0],
        };
        let ds = MultiViewDataset::new(vec![view], vec![0, 1, 0], vec!["a".into(), "b".into(), "c".into()], 2)
            .unwrap()
            .with_split(vec![Split::Train, Split::Train, Split::Test])
            .unwrap();
        let z = normalize(&ds).unwrap();
        let v = z.view("a").unwrap();
        assert_eq!(v.row(0), &[-1.0, 0.0]);
        assert_eq!(v.row(1), &[1.0, 0.0]);
        // Test row scaled with the training mean 2 and std 1.
        assert_eq!(v.row(2), &[98.0, 0.0]);
    }

    #[test]
    fn normalize_requires_training_rows() {
        assert!(normalize(&tiny(6, 2)).is_err());
    }

    fn cfg(seps: Vec<f64>) -> SyntheticConfig {
        SyntheticConfig {
            n_samples: 90,
            classes: 3,
            feature_dims: vec![4; seps.len()],
            separations: seps,
            noise: 1.0,
            seed: 17,
            view_ids: vec![],
        }
    }

    #[test]
    fn generator_is_deterministic_and_balanced() {
        let a = generate_synthetic(&cfg(vec![2.0, 0.0])).unwrap();
        let b = generate_synthetic(&cfg(vec![2.0, 0.0])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.view_ids(), vec!["view1", "view2"]);
        for class in 0..3 {
            assert_eq!(a.labels().iter().filter(|l| **l == class).count(), 30);
        }
    }

    #[test]
    fn generator_class_means_have_requested_norm() {
        let mut c = cfg(vec![5.0]);
        c.n_samples = 30_000;
        c.noise = 0.1;
        let ds = generate_synthetic(&c).unwrap();
        let v = &ds.views()[0];
        for class in 0..3 {
            let rows: Vec<usize> = (0..ds.len()).filter(|i| ds.labels()[*i] == class).collect();
            let mut mean = vec![0.0; v.dim];
            for &i in &rows {
                for (m, x) in mean.iter_mut().zip(v.row(i)) {
                    *m += x / rows.len() as f64;
                }
            }
            let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 5.0).abs() < 0.01, "class {class}: {norm}");
        }
    }

    #[test]
    fn csv_round_trip_reproduces_generated_data() {
        let ds = generate_synthetic(&cfg(vec![1.5, 0.5])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_dataset(&ds, dir.path()).unwrap();
        let views: Vec<(String, PathBuf)> = ds
            .view_ids()
            .into_iter()
            .zip(paths.iter().cloned())
            .collect();
        let back = load_dataset(&views, paths.last().unwrap(), IdColumn::Auto).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn invalid_generator_configs() {
        let mut c = cfg(vec![1.0]);
        c.noise = 0.0;
        assert!(generate_synthetic(&c).is_err());
        let mut c = cfg(vec![1.0, 2.0]);
        c.feature_dims = vec![3];
        assert!(generate_synthetic(&c).is_err());
        let mut c = cfg(vec![-1.0]);
        c.classes = 3;
        assert!(generate_synthetic(&c).is_err());
    }
}
