//! Run configuration and the generate / train / tune / evaluate / all
//! commands behind the CLI.
//!
//! Commands share one output directory. `train` writes checkpoints and the
//! split, `tune` reads them and writes the policy, `evaluate` reads all of it.
//! Every command merges its own section into `manifest.txt`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    generate_synthetic, load_dataset, normalize, split_dataset, write_dataset, IdColumn, MultiViewDataset, Split,
    SplitSpec, SyntheticConfig, ViewFeatures,
};
use crate::decision::{
    select_view_order, stage_candidates, stage_distribution, staged_predict, tune_threshold_list, PredictionRecord,
    StageShare, StagedDecisionPolicy, ViewAccuracies, DEFAULT_GRID,
};
use crate::error::{Error, Result};
use crate::fusion::combine_all;
use crate::metrics::MetricReport;
use crate::model::{train, ModelSet, TrainConfig};
use crate::numfmt::{round_sig, sig};
use crate::opinion::SubjectiveOpinion;

/// Bins of the uncertainty histograms over [0, 1].
pub const HIST_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewPath {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub views: Vec<ViewPath>,
    pub labels: PathBuf,
    #[serde(default)]
    pub id_column: IdColumn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuneSplit {
    #[default]
    Validation,
    /// Tune on the evaluation split itself.
    Test,
}

impl std::str::FromStr for TuneSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "validation" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            other => Err(Error::Config(format!("unknown tune split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub view_order: Option<Vec<String>>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    /// General form for more than three views; excludes `t1` / `t2`.
    pub thresholds: Option<Vec<f64>>,
    pub grid: usize,
    pub tune_split: TuneSplit,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            view_order: None,
            t1: None,
            t2: None,
            thresholds: None,
            grid: DEFAULT_GRID,
            tune_split: TuneSplit::Validation,
        }
    }
}

impl PolicyConfig {
    /// Threshold override, if any.
    pub fn threshold_override(&self) -> Result<Option<Vec<f64>>> {
        match (&self.thresholds, self.t1, self.t2) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => Err(Error::Config(
                "give either thresholds or t1/t2, not both".to_string(),
            )),
            (Some(t), None, None) => Ok(Some(t.clone())),
            (None, Some(t1), Some(t2)) => Ok(Some(vec![t1, t2])),
            (None, None, None) => Ok(None),
            _ => Err(Error::Config("t1 and t2 must be given together".to_string())),
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/default")
}

fn default_repeat() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: Option<DataPaths>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Its `seed` is replaced by the run seed.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_repeat")]
    pub repeat: usize,
    /// Drives the split and weight initialization.
    #[serde(default)]
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            synthetic: None,
            split: SplitFractions::default(),
            normalize: true,
            train: TrainConfig::default(),
            policy: PolicyConfig::default(),
            output: default_output(),
            repeat: 1,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Parses a TOML config. Relative data paths resolve against the file's
    /// directory; the output path stays relative to the working directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(data) = &mut cfg.data {
            for v in &mut data.views {
                v.path = base.join(&v.path);
            }
            data.labels = base.join(&data.labels);
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data, &self.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either [data] or [synthetic], not both".to_string()))
            }
            (None, None) => return Err(Error::Config("no [data] or [synthetic] section".to_string())),
            (Some(d), None) if d.views.is_empty() => {
                return Err(Error::Config("[data] lists no views".to_string()))
            }
            (None, Some(s)) => s.validate()?,
            _ => {}
        }
        if self.repeat == 0 {
            return Err(Error::Config("repeat must be >= 1".to_string()));
        }
        if self.policy.grid == 0 {
            return Err(Error::Config("grid must be >= 1".to_string()));
        }
        self.policy.threshold_override()?;
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    fn split_spec(&self) -> SplitSpec {
        SplitSpec::Fractions {
            train: self.split.train,
            validation: self.split.validation,
            test: self.split.test,
        }
    }

    /// Config for repeat `r` of `all`.
    pub fn for_repeat(&self, r: usize) -> Self {
        Self {
            seed: self.seed.wrapping_add(r as u64),
            output: self.output.join(format!("rep_{r}")),
            repeat: 1,
            ..self.clone()
        }
    }
}

/// Per-command record of seeds, call order and file hashes.
#[derive(Debug, Clone)]
pub struct Manifest {
    command: &'static str,
    lines: Vec<String>,
    events: Vec<String>,
}

const COMMAND_ORDER: [&str; 5] = ["generate", "train", "tune", "evaluate", "all"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

impl Manifest {
    fn new(command: &'static str, cfg: &RunConfig) -> Self {
        let mut lines = vec![format!("seed = {}", cfg.seed)];
        if let Some(s) = &cfg.synthetic {
            lines.push(format!("synthetic_seed = {}", s.seed));
        }
        let tc = cfg.train_config();
        let n_views = cfg
            .data
            .as_ref()
            .map(|d| d.views.len())
            .or(cfg.synthetic.as_ref().map(|s| s.feature_dims.len()))
            .unwrap_or(0);
        for v in 0..n_views {
            lines.push(format!("view_seed[{v}] = {}", tc.view_seed(v)));
        }
        lines.push("config:".to_string());
        lines.extend(
            cfg.to_toml()
                .lines()
                .map(|l| if l.is_empty() { String::new() } else { format!("  {l}") }),
        );
        Self {
            command,
            lines,
            events: Vec::new(),
        }
    }

    fn event(&mut self, text: impl Into<String>) {
        self.events.push(text.into());
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let h = file_hash(path)?;
        self.lines.push(format!("input {} sha256={h}", path.display()));
        Ok(())
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        let h = file_hash(path)?;
        self.lines.push(format!("output {} sha256={h}", path.display()));
        Ok(())
    }

    fn section(&self) -> String {
        let mut s = format!("== {} ==\n", self.command);
        for l in &self.lines {
            s.push_str(l);
            s.push('\n');
        }
        for (i, e) in self.events.iter().enumerate() {
            s.push_str(&format!("step {}: {e}\n", i + 1));
        }
        s
    }

    /// Replaces this command's section in `dir/manifest.txt`, keeping the
    /// others.
    fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.txt");
        let mut sections: BTreeMap<usize, String> = BTreeMap::new();
        if let Ok(existing) = fs::read_to_string(&path) {
            let mut current: Option<(usize, String)> = None;
            for line in existing.lines() {
                if let Some(name) = line.strip_prefix("== ").and_then(|l| l.strip_suffix(" ==")) {
                    if let Some((k, body)) = current.take() {
                        sections.insert(k, body.trim_end().to_string() + "\n");
                    }
                    current = COMMAND_ORDER.iter().position(|c| *c == name).map(|k| (k, String::new()));
                }
                if let Some((_, body)) = &mut current {
                    body.push_str(line);
                    body.push('\n');
                }
            }
            if let Some((k, body)) = current {
                sections.insert(k, body.trim_end().to_string() + "\n");
            }
        }
        let k = COMMAND_ORDER.iter().position(|c| *c == self.command).unwrap_or(0);
        sections.insert(k, self.section());
        fs::write(&path, sections.into_values().collect::<Vec<_>>().join("\n"))?;
        Ok(path)
    }
}

fn load_source(cfg: &RunConfig, manifest: &mut Manifest) -> Result<MultiViewDataset> {
    cfg.validate()?;
    if let Some(d) = &cfg.data {
        let views: Vec<(String, PathBuf)> = d.views.iter().map(|v| (v.id.clone(), v.path.clone())).collect();
        let ds = load_dataset(&views, &d.labels, d.id_column)?;
        for (_, p) in &views {
            manifest.input(p)?;
        }
        manifest.input(&d.labels)?;
        manifest.event(format!("load {} samples from {} view files", ds.len(), views.len()));
        Ok(ds)
    } else {
        let s = cfg.synthetic.as_ref().expect("validated");
        let ds = generate_synthetic(s)?;
        manifest.event(format!("generate {} synthetic samples", ds.len()));
        Ok(ds)
    }
}

fn parse_split(name: &str) -> Option<Split> {
    [Split::Train, Split::Validation, Split::Test, Split::Unassigned]
        .into_iter()
        .find(|s| s.name() == name)
}

fn write_split(ds: &MultiViewDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    w.write_record(["sample_id", "split"]).map_err(|e| Error::Io(e.to_string()))?;
    for (id, s) in ds.sample_ids().iter().zip(ds.split()) {
        w.write_record([id.as_str(), s.name()]).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn read_split(ds: &MultiViewDataset, path: &Path) -> Result<Vec<Split>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e} (run train first)", path.display())))?;
    let mut by_id: BTreeMap<String, Split> = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            file: path.display().to_string(),
            row: i + 2,
            column: 1,
            detail: e.to_string(),
        })?;
        let split = parse_split(rec.get(1).unwrap_or("")).ok_or_else(|| Error::Parse {
            file: path.display().to_string(),
            row: i + 2,
            column: 2,
            detail: format!("unknown split '{}'", rec.get(1).unwrap_or("")),
        })?;
        by_id.insert(rec.get(0).unwrap_or("").to_string(), split);
    }
    ds.sample_ids()
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| Error::Alignment(format!("sample {id} missing from {}", path.display())))
        })
        .collect()
}

/// Splits with the run seed, or reuses `split.csv` when `reuse` is set, then
/// normalizes with training statistics.
fn prepare(cfg: &RunConfig, ds: MultiViewDataset, reuse: bool, manifest: &mut Manifest) -> Result<MultiViewDataset> {
    let split_path = cfg.output.join("split.csv");
    let ds = if reuse {
        let tags = read_split(&ds, &split_path)?;
        manifest.input(&split_path)?;
        manifest.event("assign splits from split.csv");
        ds.with_split(tags)?
    } else {
        manifest.event(format!("stratified split with seed {}", cfg.seed));
        split_dataset(ds, &cfg.split_spec(), cfg.seed)?
    };
    if cfg.normalize {
        manifest.event("normalize with training-split statistics");
        normalize(&ds)
    } else {
        Ok(ds)
    }
}

/// Writes the dataset described by `[synthetic]` under `<output>/data`.
pub fn generate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let s = cfg
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::Config("generate needs a [synthetic] section".to_string()))?;
    let mut manifest = Manifest::new("generate", cfg);
    let ds = generate_synthetic(s)?;
    manifest.event(format!("generate {} synthetic samples", ds.len()));
    let written = write_dataset(&ds, &cfg.output.join("data"))?;
    for p in &written {
        manifest.output(p)?;
    }
    manifest.write(&cfg.output)?;
    Ok(written)
}

/// Opinions of `views` fused in model order for the given rows.
fn subset_opinions(
    models: &ModelSet,
    ds: &MultiViewDataset,
    rows: &[usize],
    views: &[String],
) -> Result<Vec<SubjectiveOpinion>> {
    let ordered: Vec<&str> = models
        .view_ids()
        .into_iter()
        .filter(|id| views.contains(id))
        .map(|id| models.get(&id).expect("listed").view_id())
        .collect();
    rows.iter()
        .map(|&i| {
            let s = ds.sample(i);
            let ops = ordered
                .iter()
                .map(|v| {
                    let x = s
                        .features(v)
                        .ok_or_else(|| Error::Dimension(format!("dataset has no view '{v}'")))?;
                    models.opinion(v, x)
                })
                .collect::<Result<Vec<_>>>()?;
            combine_all(&ops)
                .map(|r| r.opinion)
                .map_err(|e| match e {
                    Error::TotalConflict { remaining } => Error::SampleConflict {
                        sample_id: ds.sample_ids()[i].clone(),
                        remaining,
                    },
                    other => other,
                })
        })
        .collect()
}

fn positive_scores(opinions: &[SubjectiveOpinion]) -> Vec<f64> {
    opinions
        .iter()
        .map(|o| o.expected_probabilities().get(1).copied().unwrap_or(0.0))
        .collect()
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Metrics of one view subset on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub split: String,
    pub views: Vec<String>,
    pub metrics: MetricReport,
    pub n_correct: usize,
    pub mean_uncertainty: f64,
    pub mean_uncertainty_correct: Option<f64>,
    pub mean_uncertainty_incorrect: Option<f64>,
}

impl SubsetMetrics {
    fn rounded(&self) -> Self {
        Self {
            metrics: self.metrics.rounded(),
            mean_uncertainty: round_sig(self.mean_uncertainty),
            mean_uncertainty_correct: self.mean_uncertainty_correct.map(round_sig),
            mean_uncertainty_incorrect: self.mean_uncertainty_incorrect.map(round_sig),
            ..self.clone()
        }
    }
}

pub fn subset_metrics(
    models: &ModelSet,
    ds: &MultiViewDataset,
    split: Split,
    views: &[String],
) -> Result<SubsetMetrics> {
    let rows = ds.indices(split);
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("{} split is empty", split.name())));
    }
    let ops = subset_opinions(models, ds, &rows, views)?;
    let pred: Vec<usize> = ops.iter().map(|o| o.predicted_class()).collect();
    let truth: Vec<usize> = rows.iter().map(|&i| ds.labels()[i]).collect();
    let scores = positive_scores(&ops);
    let u: Vec<f64> = ops.iter().map(|o| o.uncertainty()).collect();
    let hit = |want: bool| mean((0..rows.len()).filter(|&j| (pred[j] == truth[j]) == want).map(|j| u[j]));
    Ok(SubsetMetrics {
        split: split.name().to_string(),
        views: views.to_vec(),
        metrics: MetricReport::compute(&pred, &truth, ds.classes(), Some(&scores))?,
        n_correct: pred.iter().zip(&truth).filter(|(p, t)| p == t).count(),
        mean_uncertainty: mean(u.iter().copied()).unwrap_or(0.0),
        mean_uncertainty_correct: hit(true),
        mean_uncertainty_incorrect: hit(false),
    })
}

/// Every non-empty view subset, singles first, in model order.
fn view_subsets(ids: &[String]) -> Vec<Vec<String>> {
    let v = ids.len().min(16);
    let mut subsets: Vec<Vec<String>> = (1u32..(1 << v))
        .map(|mask| (0..v).filter(|b| mask & (1 << b) != 0).map(|b| ids[b].clone()).collect())
        .collect();
    subsets.sort_by_key(|s: &Vec<String>| s.len());
    subsets
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub final_loss: f64,
    pub subsets: Vec<SubsetMetrics>,
}

fn opt_sig(x: Option<f64>) -> String {
    x.map(sig).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Splits, trains one classifier per view and reports every view subset on
/// the validation and test splits.
pub fn train_command(cfg: &RunConfig) -> Result<TrainSummary> {
    let mut manifest = Manifest::new("train", cfg);
    let ds = load_source(cfg, &mut manifest)?;
    let ds = prepare(cfg, ds, false, &mut manifest)?;
    fs::create_dir_all(&cfg.output)?;
    let split_path = cfg.output.join("split.csv");
    write_split(&ds, &split_path)?;

    let tc = cfg.train_config();
    manifest.event(format!("train {} views for {} epochs", ds.views().len(), tc.epochs));
    let outcome = train(&ds, &tc)?;
    let mut outputs = outcome.models.save(&cfg.output.join("models"))?;
    outputs.push(split_path);

    let mut subsets = Vec::new();
    for split in [Split::Validation, Split::Test] {
        for views in view_subsets(&outcome.models.view_ids()) {
            subsets.push(subset_metrics(&outcome.models, &ds, split, &views)?.rounded());
        }
    }
    manifest.event("score view subsets on validation and test");

    let rows: Vec<Vec<String>> = subsets
        .iter()
        .map(|s| {
            vec![
                s.split.clone(),
                s.views.join("+"),
                s.metrics.n.to_string(),
                sig(s.metrics.accuracy),
                opt_sig(s.metrics.f1_binary),
                sig(s.metrics.weighted_f1),
                sig(s.metrics.macro_f1),
                opt_sig(s.metrics.auc),
                sig(s.mean_uncertainty),
            ]
        })
        .collect();
    let table = cfg.output.join("view_metrics.csv");
    write_csv(
        &table,
        &["split", "views", "n", "accuracy", "f1_binary", "weighted_f1", "macro_f1", "auc", "mean_uncertainty"],
        &rows,
    )?;
    outputs.push(table);

    let summary = TrainSummary {
        epochs: tc.epochs,
        final_loss: round_sig(outcome.loss_history.last().copied().unwrap_or(f64::NAN)),
        subsets,
    };
    let json = cfg.output.join("train_metrics.json");
    write_json(&json, &summary)?;
    outputs.push(json);
    for p in &outputs {
        manifest.output(p)?;
    }
    manifest.write(&cfg.output)?;
    Ok(summary)
}

fn load_models(cfg: &RunConfig, manifest: &mut Manifest) -> Result<ModelSet> {
    let dir = cfg.output.join("models");
    let models = ModelSet::load(&dir).map_err(|e| match e {
        Error::Io(msg) => Error::Config(format!("{msg} (run train first)")),
        other => other,
    })?;
    for id in models.view_ids() {
        manifest.input(&dir.join(format!("model_{id}.json")))?;
    }
    Ok(models)
}

/// Tuned policy as stored in `policy.json` (full precision).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedPolicy {
    pub view_order: Vec<String>,
    pub thresholds: Vec<f64>,
    pub correct: usize,
    pub n: usize,
    pub tune_split: TuneSplit,
}

/// Picks the view order from validation accuracies (unless overridden) and
/// grid-searches the thresholds.
pub fn tune_command(cfg: &RunConfig) -> Result<TunedPolicy> {
    let mut manifest = Manifest::new("tune", cfg);
    let models = load_models(cfg, &mut manifest)?;
    let ds = load_source(cfg, &mut manifest)?;
    let ds = prepare(cfg, ds, true, &mut manifest)?;

    let view_order = match &cfg.policy.view_order {
        Some(order) => {
            manifest.event("view order from config");
            order.clone()
        }
        None => {
            let ids = models.view_ids();
            let mut acc = ViewAccuracies::default();
            for (a, id) in ids.iter().enumerate() {
                let single = subset_metrics(&models, &ds, Split::Validation, std::slice::from_ref(id))?;
                acc.single.insert(id.clone(), single.metrics.accuracy);
                for other in &ids[a + 1..] {
                    let pair = subset_metrics(&models, &ds, Split::Validation, &[id.clone(), other.clone()])?;
                    acc.insert_pair(id, other, pair.metrics.accuracy);
                }
            }
            manifest.event("select view order from validation accuracies");
            select_view_order(&acc, None)?
        }
    };
    let split = match cfg.policy.tune_split {
        TuneSplit::Validation => Split::Validation,
        TuneSplit::Test => Split::Test,
    };
    let rows = ds.indices(split);
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("{} split is empty", split.name())));
    }
    let stages = view_order.len();
    let mut uncertainties = vec![Vec::with_capacity(rows.len()); stages.saturating_sub(1)];
    let mut predictions = vec![Vec::with_capacity(rows.len()); stages];
    for &i in &rows {
        let c = stage_candidates(&ds.sample(i), &models, &view_order)?;
        for (s, o) in c.opinions.iter().enumerate() {
            if s + 1 < stages {
                uncertainties[s].push(o.uncertainty());
            }
            predictions[s].push(o.predicted_class());
        }
    }
    let labels: Vec<usize> = rows.iter().map(|&i| ds.labels()[i]).collect();
    manifest.event(format!(
        "grid search {}^{} thresholds on {} split",
        cfg.policy.grid,
        stages.saturating_sub(1),
        split.name()
    ));
    let tuned = tune_threshold_list(&uncertainties, &predictions, &labels, cfg.policy.grid)?;
    let policy = TunedPolicy {
        view_order,
        thresholds: tuned.thresholds,
        correct: tuned.correct,
        n: tuned.n,
        tune_split: cfg.policy.tune_split,
    };
    let json = cfg.output.join("policy.json");
    write_json(&json, &policy)?;

    let mut text = format!("view_order = {}\n", policy.view_order.join(","));
    for (s, t) in policy.thresholds.iter().enumerate() {
        text.push_str(&format!("t{} = {}\n", s + 1, sig(*t)));
    }
    text.push_str(&format!(
        "correct = {}\nn = {}\ntune_split = {}\n",
        policy.correct,
        policy.n,
        split.name()
    ));
    let txt = cfg.output.join("thresholds.txt");
    fs::write(&txt, text)?;
    manifest.output(&json)?;
    manifest.output(&txt)?;
    manifest.write(&cfg.output)?;
    Ok(policy)
}

fn resolve_policy(cfg: &RunConfig, models: &ModelSet, manifest: &mut Manifest) -> Result<StagedDecisionPolicy> {
    let stored: Option<TunedPolicy> = match fs::read_to_string(cfg.output.join("policy.json")) {
        Ok(text) => Some(
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("policy.json: {e}")))?,
        ),
        Err(_) => None,
    };
    if stored.is_some() {
        manifest.input(&cfg.output.join("policy.json"))?;
    }
    let order = cfg
        .policy
        .view_order
        .clone()
        .or_else(|| stored.as_ref().map(|p| p.view_order.clone()))
        .unwrap_or_else(|| models.view_ids());
    let thresholds = match cfg.policy.threshold_override()? {
        Some(t) => {
            manifest.event("thresholds from config");
            t
        }
        None => {
            manifest.event("thresholds from policy.json");
            stored
                .map(|p| p.thresholds)
                .ok_or_else(|| Error::Config("no thresholds: run tune or set t1/t2".to_string()))?
        }
    };
    StagedDecisionPolicy::new(order, thresholds)
}

/// Summary written to `metrics.json` by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub view_order: Vec<String>,
    pub thresholds: Vec<f64>,
    pub staged: MetricReport,
    pub full_fusion: MetricReport,
    pub stage_distribution: Vec<StageShare>,
    pub mean_uncertainty_correct: Option<f64>,
    pub mean_uncertainty_incorrect: Option<f64>,
}

impl EvaluationSummary {
    pub fn stage_fraction(&self, stage: usize) -> f64 {
        self.stage_distribution
            .iter()
            .find(|s| s.stage == stage)
            .map_or(0.0, |s| s.fraction)
    }
}

fn histogram(values: impl IntoIterator<Item = f64>) -> Vec<usize> {
    let mut counts = vec![0; HIST_BINS];
    for v in values {
        let b = ((v.clamp(0.0, 1.0) * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
        counts[b] += 1;
    }
    counts
}

fn bin_edges(b: usize) -> [String; 2] {
    [sig(b as f64 / HIST_BINS as f64), sig((b + 1) as f64 / HIST_BINS as f64)]
}

fn predictions_digest(records: &[PredictionRecord]) -> String {
    let mut text = String::new();
    for r in records {
        text.push_str(&format!("{},{},{}\n", r.sample_id, r.stage_used, r.predicted_class));
    }
    sha256_hex(text.as_bytes())
}

/// Staged inference on the test split. Predictions are fixed (and hashed)
/// before any test label is looked at.
pub fn evaluate_command(cfg: &RunConfig) -> Result<EvaluationSummary> {
    let mut manifest = Manifest::new("evaluate", cfg);
    let models = load_models(cfg, &mut manifest)?;
    let ds = load_source(cfg, &mut manifest)?;
    let ds = prepare(cfg, ds, true, &mut manifest)?;
    let policy = resolve_policy(cfg, &models, &mut manifest)?;
    let rows = ds.indices(Split::Test);
    if rows.is_empty() {
        return Err(Error::EmptyInput("test split is empty".to_string()));
    }

    let records = rows
        .iter()
        .map(|&i| staged_predict(&ds.sample(i), &models, &policy))
        .collect::<Result<Vec<_>>>()?;
    let all_views = models.view_ids();
    let full = subset_opinions(&models, &ds, &rows, &all_views)?;
    manifest.event(format!(
        "predictions fixed for {} test samples sha256={}",
        records.len(),
        predictions_digest(&records)
    ));

    let truth: Vec<usize> = rows.iter().map(|&i| ds.labels()[i]).collect();
    manifest.event("read test labels");

    let pred: Vec<usize> = records.iter().map(|r| r.predicted_class).collect();
    let scores: Vec<f64> = records.iter().map(|r| r.positive_score()).collect();
    let staged = MetricReport::compute(&pred, &truth, ds.classes(), Some(&scores))?;
    let full_pred: Vec<usize> = full.iter().map(|o| o.predicted_class()).collect();
    let full_metrics = MetricReport::compute(&full_pred, &truth, ds.classes(), Some(&positive_scores(&full)))?;
    let dist = stage_distribution(&records, &policy)?;
    let correct: Vec<bool> = pred.iter().zip(&truth).map(|(p, t)| p == t).collect();
    let u = |r: &PredictionRecord| r.opinion.uncertainty();
    let by = |want: bool| mean(records.iter().zip(&correct).filter(|(_, c)| **c == want).map(|(r, _)| u(r)));

    let summary = EvaluationSummary {
        view_order: policy.view_order().to_vec(),
        thresholds: policy.thresholds().iter().map(|t| round_sig(*t)).collect(),
        staged: staged.rounded(),
        full_fusion: full_metrics.rounded(),
        stage_distribution: dist
            .iter()
            .map(|s| StageShare {
                fraction: round_sig(s.fraction),
                ..s.clone()
            })
            .collect(),
        mean_uncertainty_correct: by(true).map(round_sig),
        mean_uncertainty_incorrect: by(false).map(round_sig),
    };
    manifest.event("compute metrics");

    let out = &cfg.output;
    let mut outputs = Vec::new();
    let json = out.join("metrics.json");
    write_json(&json, &summary)?;
    outputs.push(json);

    let mut text = summary.staged.to_text("staged.");
    text.push_str(&summary.full_fusion.to_text("full_fusion."));
    for s in &summary.stage_distribution {
        text.push_str(&format!("stage{}.fraction = {}\n", s.stage, sig(s.fraction)));
    }
    text.push_str(&format!(
        "mean_uncertainty.correct = {}\nmean_uncertainty.incorrect = {}\n",
        opt_sig(summary.mean_uncertainty_correct),
        opt_sig(summary.mean_uncertainty_incorrect)
    ));
    let txt = out.join("metrics.txt");
    fs::write(&txt, text)?;
    outputs.push(txt);

    let dist_path = out.join("stage_distribution.csv");
    let dist_rows: Vec<Vec<String>> = summary
        .stage_distribution
        .iter()
        .map(|s| vec![s.stage.to_string(), s.views.join("+"), s.count.to_string(), sig(s.fraction)])
        .collect();
    write_csv(&dist_path, &["stage", "views", "count", "fraction"], &dist_rows)?;
    outputs.push(dist_path);

    let stages = policy.stages();
    let mut header = vec!["sample_id".to_string(), "stage".to_string()];
    header.extend((1..=stages).map(|s| format!("u_stage{s}")));
    header.extend(["predicted".to_string(), "true".to_string()]);
    let pred_rows: Vec<Vec<String>> = records
        .iter()
        .zip(&truth)
        .map(|(r, t)| {
            let mut row = vec![r.sample_id.clone(), r.stage_used.to_string()];
            row.extend((1..=stages).map(|s| opt_sig(r.stage_uncertainty(s))));
            row.extend([r.predicted_class.to_string(), t.to_string()]);
            row
        })
        .collect();
    let pred_path = out.join("predictions.csv");
    write_csv(&pred_path, &header.iter().map(String::as_str).collect::<Vec<_>>(), &pred_rows)?;
    outputs.push(pred_path);

    let hc = histogram(records.iter().zip(&correct).filter(|(_, c)| **c).map(|(r, _)| u(r)));
    let hi = histogram(records.iter().zip(&correct).filter(|(_, c)| !**c).map(|(r, _)| u(r)));
    let hist_rows: Vec<Vec<String>> = (0..HIST_BINS)
        .map(|b| {
            let [lo, up] = bin_edges(b);
            vec![lo, up, hc[b].to_string(), hi[b].to_string()]
        })
        .collect();
    let hist_ci = out.join("hist_correct_incorrect.csv");
    write_csv(&hist_ci, &["bin_lo", "bin_hi", "correct", "incorrect"], &hist_rows)?;
    outputs.push(hist_ci);

    let per_stage: Vec<Vec<usize>> = (1..=stages)
        .map(|s| histogram(records.iter().filter(|r| r.stage_used == s).map(u)))
        .collect();
    let mut header = vec!["bin_lo".to_string(), "bin_hi".to_string()];
    header.extend((1..=stages).map(|s| format!("stage{s}")));
    let stage_rows: Vec<Vec<String>> = (0..HIST_BINS)
        .map(|b| {
            let mut row = bin_edges(b).to_vec();
            row.extend(per_stage.iter().map(|h| h[b].to_string()));
            row
        })
        .collect();
    let hist_stage = out.join("hist_by_stage.csv");
    write_csv(&hist_stage, &header.iter().map(String::as_str).collect::<Vec<_>>(), &stage_rows)?;
    outputs.push(hist_stage);

    for p in &outputs {
        manifest.output(p)?;
    }
    manifest.write(out)?;
    Ok(summary)
}

/// Mean and sample standard deviation (absent for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: Option<f64>,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Option<Self> {
        let m = mean(xs.iter().copied())?;
        let std = (xs.len() > 1).then(|| {
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
        });
        Some(Self {
            mean: round_sig(m),
            std: std.map(round_sig),
        })
    }

    fn text(&self) -> String {
        match self.std {
            Some(s) => format!("{} ± {}", sig(self.mean), sig(s)),
            None => sig(self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub repeats: usize,
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, MeanStd>,
}

/// Train, tune and evaluate once per repeat (seed, seed + 1, ...) under
/// `rep_<i>/`, then aggregate.
pub fn all_command(cfg: &RunConfig) -> Result<RepeatSummary> {
    cfg.validate()?;
    let mut manifest = Manifest::new("all", cfg);
    let mut runs = Vec::with_capacity(cfg.repeat);
    let mut seeds = Vec::with_capacity(cfg.repeat);
    for r in 0..cfg.repeat {
        let sub = cfg.for_repeat(r);
        train_command(&sub)?;
        tune_command(&sub)?;
        runs.push(evaluate_command(&sub)?);
        seeds.push(sub.seed);
        manifest.event(format!("repeat {r} seed {} in {}", sub.seed, sub.output.display()));
    }
    let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for run in &runs {
        let mut put = |k: &str, v: Option<f64>| {
            if let Some(v) = v {
                series.entry(k.to_string()).or_default().push(v);
            }
        };
        for (prefix, m) in [("staged", &run.staged), ("full_fusion", &run.full_fusion)] {
            put(&format!("{prefix}.accuracy"), Some(m.accuracy));
            put(&format!("{prefix}.f1_binary"), m.f1_binary);
            put(&format!("{prefix}.weighted_f1"), Some(m.weighted_f1));
            put(&format!("{prefix}.macro_f1"), Some(m.macro_f1));
            put(&format!("{prefix}.auc"), m.auc);
        }
        for s in &run.stage_distribution {
            put(&format!("stage{}.fraction", s.stage), Some(s.fraction));
        }
    }
    let summary = RepeatSummary {
        repeats: cfg.repeat,
        seeds,
        metrics: series
            .iter()
            .filter_map(|(k, v)| MeanStd::of(v).map(|m| (k.clone(), m)))
            .collect(),
    };
    fs::create_dir_all(&cfg.output)?;
    let json = cfg.output.join("metrics.json");
    write_json(&json, &summary)?;
    let text: String = summary
        .metrics
        .iter()
        .map(|(k, m)| format!("{k} = {}\n", m.text()))
        .collect();
    let txt = cfg.output.join("metrics.txt");
    fs::write(&txt, text)?;
    manifest.output(&json)?;
    manifest.output(&txt)?;
    manifest.write(&cfg.output)?;
    Ok(summary)
}
