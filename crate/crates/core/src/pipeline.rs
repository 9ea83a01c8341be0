//! Config loading, stage execution and the run manifest.
//!
//! A run lives in one output directory:
//!
//! ```text
//! split/node_space.json            pretrain
//! split/{train,validation,test}_ub.tsv
//! pretrain/selection_embeddings.tsv
//! views/view-<i>.tsv               augment
//! checkpoint/params.tsv            train
//! checkpoint/config.toml
//! checkpoint/train_log.csv
//! metrics.csv, metrics.json        eval
//! embeddings.tsv                   export-emb
//! sample_complexity.json           sample-complexity
//! manifest.json                    every stage
//! ```
//!
//! Stage `s` draws its randomness from `derive_seed(master, s)`, so
//! re-running one stage with a different seed leaves the others valid.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::{
    generate_view_set, read_delta, write_delta, AugmentConfig, CounterfactualView, SamplerKind,
};
use crate::encoder::{propagate, write_embedding_tsv, EmbeddingTable, PropagatedEmbeddings};
use crate::error::{Error, Result};
use crate::eval::{evaluate, split, HeldOut, MetricsReport, SplitSpec};
use crate::graph::{NodeSpace, Pair, RelationKind, TripartiteGraph};
use crate::io::{
    file_sha256, open, read_edge_file, read_edge_list, read_embedding_tsv, write_edge_list,
    write_file,
};
use crate::objective::LossConfig;
use crate::seed::derive_seed;
use crate::theory::{sample_complexity, sample_complexity_bound, SampleComplexityQuery};
use crate::trainer::{pretrain_selection_model, train, write_log, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub ub: Option<PathBuf>,
    pub ui: Option<PathBuf>,
    pub bi: Option<PathBuf>,
    /// Node counts; inferred as `max id + 1` when absent.
    pub num_users: Option<usize>,
    pub num_items: Option<usize>,
    pub num_bundles: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { ks: vec![20, 40] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub loss: LossConfig,
    pub split: SplitSpec,
    pub eval: EvalConfig,
    pub theory: SampleComplexityQuery,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            threads: 0,
            output_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            loss: LossConfig::default(),
            split: SplitSpec::default(),
            eval: EvalConfig::default(),
            theory: SampleComplexityQuery::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::config("seed", "must fit in a signed 64-bit integer"));
        }
        for (key, path) in [
            ("data.ub", &self.data.ub),
            ("data.ui", &self.data.ui),
            ("data.bi", &self.data.bi),
        ] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(Error::config(
                        key,
                        format!("file not found: {}", p.display()),
                    ));
                }
            }
        }
        self.train.validate()?;
        self.augment.validate()?;
        self.loss.validate()?;
        self.split.validate()?;
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::config(
                "eval.ks",
                "cutoffs must be a nonempty list of values >= 1",
            ));
        }
        self.theory
            .validate()
            .map_err(|e| Error::config("theory", e.to_string()))
    }

    /// The training config with the `[loss]` section and the train stage seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: stage_seed(self.seed, Stage::Train),
            loss: self.loss.clone(),
            ..self.train.clone()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }
}

/// The dotted key on the line holding byte `offset` of a TOML document.
fn key_at(src: &str, offset: usize) -> String {
    let mut section = String::new();
    let mut consumed = 0;
    for line in src.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with('[') && trimmed.ends_with(']') {
            section = trimmed
                .trim_matches(|c| c == '[' || c == ']')
                .trim()
                .to_string();
        }
        let end = consumed + line.len();
        if offset <= end {
            return match trimmed.split_once('=') {
                Some((k, _)) if section.is_empty() => k.trim().to_string(),
                Some((k, _)) => format!("{section}.{}", k.trim()),
                None if section.is_empty() => "config".to_string(),
                None => section,
            };
        }
        consumed = end + 1;
    }
    "config".to_string()
}

/// Parses and validates a config from TOML text; relative paths resolve
/// against `base`.
pub fn parse_config(src: &str, base: &Path) -> Result<PipelineConfig> {
    let mut cfg: PipelineConfig = toml::from_str(src).map_err(|e| {
        let key = e
            .span()
            .map(|s| key_at(src, s.start))
            .unwrap_or_else(|| "config".into());
        Error::config(key, e.message().to_string())
    })?;
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    for p in [&mut cfg.data.ub, &mut cfg.data.ui, &mut cfg.data.bi]
        .into_iter()
        .flatten()
    {
        resolve(p);
    }
    resolve(&mut cfg.output_dir);
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&src, path.parent().unwrap_or(Path::new(".")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Pretrain,
    Augment,
    Train,
    Eval,
    ExportEmb,
    SampleComplexity,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Pretrain,
        Stage::Augment,
        Stage::Train,
        Stage::Eval,
        Stage::ExportEmb,
        Stage::SampleComplexity,
    ];

    /// The stages that make up a full training run, in order.
    pub const PIPELINE: [Stage; 4] = [Stage::Pretrain, Stage::Augment, Stage::Train, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Augment => "augment",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::ExportEmb => "export-emb",
            Stage::SampleComplexity => "sample-complexity",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config("stage", format!("unknown stage `{s}`")))
    }
}

pub fn stage_seed(master: u64, stage: Stage) -> u64 {
    derive_seed(master, stage.name())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub master_seed: u64,
    pub config: Option<PipelineConfig>,
    pub stage_seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, InputRecord>,
    /// Output files relative to the run directory, with their SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(dir: &Path) -> Result<Option<RunManifest>> {
        let path = dir.join(Self::FILE);
        if !path.is_file() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::Parse {
                path,
                line: e.line(),
                message: e.to_string(),
            })
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(Self::FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(&path, |w| {
            use std::io::Write;
            writeln!(w, "{text}")
        })
    }
}

/// Paths of every artifact inside one run directory.
struct Layout {
    root: PathBuf,
}

impl Layout {
    fn node_space(&self) -> PathBuf {
        self.root.join("split/node_space.json")
    }
    fn split_file(&self, part: &str) -> PathBuf {
        self.root.join(format!("split/{part}_ub.tsv"))
    }
    fn selection(&self) -> PathBuf {
        self.root.join("pretrain/selection_embeddings.tsv")
    }
    fn view(&self, i: usize) -> PathBuf {
        self.root.join(format!("views/view-{i}.tsv"))
    }
    fn params(&self) -> PathBuf {
        self.root.join("checkpoint/params.tsv")
    }
    fn checkpoint_config(&self) -> PathBuf {
        self.root.join("checkpoint/config.toml")
    }
    fn train_log(&self) -> PathBuf {
        self.root.join("checkpoint/train_log.csv")
    }
    fn metrics_csv(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    fn metrics_json(&self) -> PathBuf {
        self.root.join("metrics.json")
    }
    fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings.tsv")
    }
    fn sample_complexity(&self) -> PathBuf {
        self.root.join("sample_complexity.json")
    }
}

fn require(path: PathBuf, stage: Stage, required: Stage) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact {
            stage: stage.name(),
            required: required.name(),
            path,
        })
    }
}

/// What a stage produced, for the caller to report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageOutcome {
    pub written: Vec<PathBuf>,
    pub metrics: Option<MetricsReport>,
    pub sample_complexity: Option<u64>,
}

fn data_path<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::config(key, "required by the pretrain stage"))
}

fn load_dataset(cfg: &PipelineConfig) -> Result<TripartiteGraph> {
    let ub = read_edge_file(data_path(&cfg.data.ub, "data.ub")?)?;
    let ui = read_edge_file(data_path(&cfg.data.ui, "data.ui")?)?;
    let bi = read_edge_file(data_path(&cfg.data.bi, "data.bi")?)?;
    let max_id = |lists: &[(&[Pair], bool)]| {
        lists
            .iter()
            .flat_map(|(l, src)| l.iter().map(move |p| if *src { p.0 } else { p.1 }))
            .max()
            .map_or(0, |m| m + 1)
    };
    let users = cfg
        .data
        .num_users
        .unwrap_or_else(|| max_id(&[(&ub, true), (&ui, true)]));
    let items = cfg
        .data
        .num_items
        .unwrap_or_else(|| max_id(&[(&ui, false), (&bi, false)]));
    let bundles = cfg
        .data
        .num_bundles
        .unwrap_or_else(|| max_id(&[(&ub, false), (&bi, true)]));
    TripartiteGraph::new(NodeSpace::new(users, items, bundles)?, [ub, ui, bi])
}

fn read_space(layout: &Layout, stage: Stage) -> Result<NodeSpace> {
    let path = require(layout.node_space(), stage, Stage::Pretrain)?;
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let space: NodeSpace = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    NodeSpace::new(space.num_users, space.num_items, space.num_bundles)
}

/// The training graph: train user-bundle edges plus the full item relations.
fn load_train_graph(
    cfg: &PipelineConfig,
    layout: &Layout,
    stage: Stage,
) -> Result<TripartiteGraph> {
    let space = read_space(layout, stage)?;
    let train_path = require(layout.split_file("train"), stage, Stage::Pretrain)?;
    let ub = read_edge_list(open(&train_path)?, &train_path)?;
    let ui = read_edge_file(data_path(&cfg.data.ui, "data.ui")?)?;
    let bi = read_edge_file(data_path(&cfg.data.bi, "data.bi")?)?;
    TripartiteGraph::new(space, [ub, ui, bi])
}

fn held_out_pairs(h: &HeldOut) -> Vec<Pair> {
    h.pairs().collect()
}

fn read_held_out(path: &Path, space: NodeSpace) -> Result<HeldOut> {
    let mut per_user = vec![Vec::new(); space.num_users];
    for (u, b) in read_edge_list(open(path)?, path)? {
        if u >= space.num_users || b >= space.num_bundles {
            return Err(Error::EdgeOutOfBounds {
                relation: RelationKind::UserBundle,
                src: u,
                dst: b,
                src_limit: space.num_users,
                dst_limit: space.num_bundles,
            });
        }
        per_user[u].push(b);
    }
    for list in &mut per_user {
        list.sort_unstable();
        list.dedup();
    }
    Ok(HeldOut { per_user })
}

fn load_params(
    cfg: &PipelineConfig,
    layout: &Layout,
    stage: Stage,
) -> Result<(TripartiteGraph, EmbeddingTable)> {
    let params_path = require(layout.params(), stage, Stage::Train)?;
    let graph = load_train_graph(cfg, layout, stage)?;
    let values = read_embedding_tsv(open(&params_path)?, &params_path, graph.space())?;
    let table = EmbeddingTable::new(graph.space(), values)?;
    Ok((graph, table))
}

fn final_embeddings(
    cfg: &PipelineConfig,
    graph: &TripartiteGraph,
    table: &EmbeddingTable,
) -> Result<PropagatedEmbeddings> {
    propagate(
        table,
        &crate::graph::normalized_adjacency(graph),
        cfg.train.layers,
    )
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_file(path, |w| writeln!(w, "{text}"))
}

fn run_pretrain(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutcome> {
    let graph = load_dataset(cfg)?;
    let seed = stage_seed(cfg.seed, Stage::Pretrain);
    let parts = split(
        &graph,
        &SplitSpec {
            seed,
            ..cfg.split.clone()
        },
    )?;
    let space = graph.space();

    let mut out = StageOutcome::default();
    write_json(&layout.node_space(), &space)?;
    out.written.push(layout.node_space());
    let train_ub = parts.train.edges(RelationKind::UserBundle).pairs().to_vec();
    for (name, pairs) in [
        ("train", train_ub),
        ("validation", held_out_pairs(&parts.validation)),
        ("test", held_out_pairs(&parts.test)),
    ] {
        let path = layout.split_file(name);
        write_file(&path, |w| write_edge_list(w, &pairs))?;
        out.written.push(path);
    }

    let selection = pretrain_selection_model(
        &parts.train,
        &TrainConfig {
            seed,
            ..cfg.train_config()
        },
    )?;
    write_file(&layout.selection(), |w| {
        write_embedding_tsv(w, space, selection.values())
    })?;
    out.written.push(layout.selection());
    Ok(out)
}

fn run_augment(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutcome> {
    let graph = load_train_graph(cfg, layout, Stage::Augment)?;
    let selection = if cfg.augment.sampler == SamplerKind::Heuristic {
        let path = require(layout.selection(), Stage::Augment, Stage::Pretrain)?;
        let values = read_embedding_tsv(open(&path)?, &path, graph.space())?;
        Some(PropagatedEmbeddings::from_matrix(
            graph.space(),
            cfg.train.layers,
            values,
        )?)
    } else {
        None
    };
    let seed = stage_seed(cfg.seed, Stage::Augment);
    let views = generate_view_set(&graph, selection.as_ref(), &cfg.augment, seed)?;
    let mut out = StageOutcome::default();
    for (i, view) in views.iter().enumerate() {
        let path = layout.view(i);
        write_file(&path, |w| {
            write_delta(w, &view.delta, view.seed, &cfg.augment)
        })?;
        out.written.push(path);
    }
    Ok(out)
}

fn run_train(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutcome> {
    let graph = load_train_graph(cfg, layout, Stage::Train)?;
    let views = (0..cfg.augment.num_views)
        .map(|i| {
            let path = require(layout.view(i), Stage::Train, Stage::Augment)?;
            let (delta, seed) = read_delta(open(&path)?, &path)?;
            CounterfactualView::from_delta(&graph, delta, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let model = train(&graph, &views, &cfg.train_config())?;

    let mut out = StageOutcome::default();
    write_file(&layout.params(), |w| {
        write_embedding_tsv(w, graph.space(), model.params.values())
    })?;
    let snapshot = cfg.to_toml()?;
    write_file(&layout.checkpoint_config(), |w| {
        w.write_all(snapshot.as_bytes())
    })?;
    write_file(&layout.train_log(), |w| write_log(w, &model.history))?;
    out.written.extend([
        layout.params(),
        layout.checkpoint_config(),
        layout.train_log(),
    ]);
    Ok(out)
}

fn run_eval(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutcome> {
    let (graph, table) = load_params(cfg, layout, Stage::Eval)?;
    let test_path = require(layout.split_file("test"), Stage::Eval, Stage::Pretrain)?;
    let test = read_held_out(&test_path, graph.space())?;
    let emb = final_embeddings(cfg, &graph, &table)?;
    let report = evaluate(&emb, &graph, &test, &cfg.eval.ks, cfg.seed)?;

    write_file(&layout.metrics_csv(), |w| report.write_csv(w))?;
    write_json(&layout.metrics_json(), &report)?;
    Ok(StageOutcome {
        written: vec![layout.metrics_csv(), layout.metrics_json()],
        metrics: Some(report),
        sample_complexity: None,
    })
}

fn run_export(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutcome> {
    let (graph, table) = load_params(cfg, layout, Stage::ExportEmb)?;
    let emb = final_embeddings(cfg, &graph, &table)?;
    write_file(&layout.embeddings(), |w| {
        write_embedding_tsv(w, graph.space(), emb.values())
    })?;
    Ok(StageOutcome {
        written: vec![layout.embeddings()],
        ..StageOutcome::default()
    })
}

#[derive(Serialize)]
struct SampleComplexityReport {
    query: SampleComplexityQuery,
    bound: f64,
    samples: u64,
}

fn run_sample_complexity(cfg: &PipelineConfig, layout: &Layout) -> Result<StageOutcome> {
    let q = cfg.theory;
    let samples = sample_complexity(&q)?;
    let report = SampleComplexityReport {
        query: q,
        bound: sample_complexity_bound(&q)?,
        samples,
    };
    write_json(&layout.sample_complexity(), &report)?;
    Ok(StageOutcome {
        written: vec![layout.sample_complexity()],
        metrics: None,
        sample_complexity: Some(samples),
    })
}

fn update_manifest(cfg: &PipelineConfig, stage: Stage, outcome: &StageOutcome) -> Result<()> {
    let root = &cfg.output_dir;
    let mut manifest = RunManifest::load(root)?.unwrap_or_default();
    manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
    manifest.master_seed = cfg.seed;
    manifest.config = Some(cfg.clone());
    manifest
        .stage_seeds
        .insert(stage.name().to_string(), stage_seed(cfg.seed, stage));
    if stage == Stage::Pretrain {
        for (key, path) in [
            ("data.ub", &cfg.data.ub),
            ("data.ui", &cfg.data.ui),
            ("data.bi", &cfg.data.bi),
        ] {
            if let Some(p) = path {
                manifest.inputs.insert(
                    key.to_string(),
                    InputRecord {
                        path: p.clone(),
                        sha256: file_sha256(p)?,
                    },
                );
            }
        }
    }
    for path in &outcome.written {
        let rel = path.strip_prefix(root).unwrap_or(path);
        manifest
            .outputs
            .insert(rel.to_string_lossy().replace('\\', "/"), file_sha256(path)?);
    }
    manifest.save(root)
}

/// Runs one stage against the config's output directory and records its
/// outputs in the manifest. Uses a pool of `cfg.threads` workers.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<StageOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))?;
    pool.install(|| {
        let layout = Layout {
            root: cfg.output_dir.clone(),
        };
        let outcome = match stage {
            Stage::Pretrain => run_pretrain(cfg, &layout)?,
            Stage::Augment => run_augment(cfg, &layout)?,
            Stage::Train => run_train(cfg, &layout)?,
            Stage::Eval => run_eval(cfg, &layout)?,
            Stage::ExportEmb => run_export(cfg, &layout)?,
            Stage::SampleComplexity => run_sample_complexity(cfg, &layout)?,
        };
        update_manifest(cfg, stage, &outcome)?;
        Ok(outcome)
    })
}

/// Pretrain, augment, train and eval in sequence.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<MetricsReport> {
    let mut metrics = None;
    for stage in Stage::PIPELINE {
        metrics = run_stage(stage, cfg)?.metrics.or(metrics);
    }
    Ok(metrics.expect("eval produces metrics"))
}
