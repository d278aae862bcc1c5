//! Experiment orchestration: config ingestion, grid generation, method
//! execution, metrics, and deterministic CSV/JSON persistence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::matrix::{build_circulant, random_catalog, CombinationMatrix};
use crate::merging::{
    coefficients, extrapolate, merge_with_coefficients, select_alpha_scored, AlphaSelection,
    ExtrapolationConfig, MergeRule, DEFAULT_ALPHA_CANDIDATES,
};
use crate::metrics::{auto_reference, MetricsReport};
use crate::rewards::{BanditEnvironment, QuadraticReward, SoftmaxPolicy, World};
use crate::trainer::{
    bandit_kl_closed_form, select_beta_scored, train_backbones, train_quadratic_closed_form,
    BackboneSet, BetaSelection, TrainerConfig, DEFAULT_BETA_CANDIDATES,
};
use crate::types::{FrontPoint, MethodTag, ParamVector, PreferenceVector};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Problem definition inside an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorldSpec {
    Quadratic {
        rewards: Vec<QuadraticReward>,
        reference: Vec<f64>,
    },
    /// Isotropic rewards drawn from the experiment seed.
    RandomQuadratic {
        dim: usize,
        k_range: (f64, f64),
        theta_bound: f64,
    },
    Bandit {
        context_probs: Vec<f64>,
        reward_tables: Vec<Vec<Vec<f64>>>,
        /// Reference logits, row-major; uniform when absent.
        #[serde(default)]
        reference_logits: Option<Vec<f64>>,
    },
    /// Rewards in `[0, 1)` drawn from the experiment seed, uniform reference.
    RandomBandit { contexts: usize, arms: usize },
}

impl WorldSpec {
    pub fn build(&self, objectives: usize, seed: u64) -> Result<World> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let world = match self {
            WorldSpec::Quadratic { rewards, reference } => {
                World::quadratic(rewards.clone(), ParamVector::new(reference.clone())?)?
            }
            WorldSpec::RandomQuadratic {
                dim,
                k_range,
                theta_bound,
            } => {
                if *dim == 0
                    || !(k_range.0 > 0.0 && k_range.0 <= k_range.1)
                    || !(*theta_bound > 0.0)
                {
                    return Err(Error::InvalidConfig(
                        "random_quadratic: bad dim, k_range or theta_bound".into(),
                    ));
                }
                World::random_quadratic(&mut rng, objectives, *dim, *k_range, *theta_bound)?
            }
            WorldSpec::Bandit {
                context_probs,
                reward_tables,
                reference_logits,
            } => {
                let env = BanditEnvironment::new(context_probs.clone(), reward_tables.clone())?;
                let reference = match reference_logits {
                    Some(l) => SoftmaxPolicy::new(
                        env.contexts(),
                        env.arms(),
                        ParamVector::new(l.clone())?,
                    )?,
                    None => SoftmaxPolicy::uniform(env.contexts(), env.arms()),
                };
                World::bandit(env, reference)?
            }
            WorldSpec::RandomBandit { contexts, arms } => {
                if *contexts == 0 || *arms < 2 {
                    return Err(Error::InvalidConfig(
                        "random_bandit: need contexts >= 1 and arms >= 2".into(),
                    ));
                }
                World::random_bandit(&mut rng, objectives, *contexts, *arms)?
            }
        };
        if world.objectives() != objectives {
            return Err(Error::InvalidConfig(format!(
                "world has {} objectives, config says {objectives}",
                world.objectives()
            )));
        }
        Ok(world)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    TwoObjStep(f64),
    ThreeObjStep(f64),
    Explicit(Vec<Vec<f64>>),
}

impl GridSpec {
    pub fn preferences(&self, objectives: usize) -> Result<Vec<PreferenceVector>> {
        let grid = match self {
            GridSpec::TwoObjStep(step) => generate_grid(2, *step)?,
            GridSpec::ThreeObjStep(step) => generate_grid(3, *step)?,
            GridSpec::Explicit(points) => {
                if points.is_empty() {
                    return Err(Error::InvalidConfig("explicit grid is empty".into()));
                }
                points
                    .iter()
                    .map(|p| PreferenceVector::new(p.clone()))
                    .collect::<std::result::Result<Vec<_>, _>>()?
            }
        };
        if let Some(p) = grid.iter().find(|p| p.dim() != objectives) {
            return Err(Error::InvalidConfig(format!(
                "grid preference of dimension {} for {objectives} objectives",
                p.dim()
            )));
        }
        Ok(grid)
    }
}

/// Hypervolume reference: explicit vector or the automatic rule.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum HvReference {
    #[default]
    Auto,
    Fixed(Vec<f64>),
}

impl Serialize for HvReference {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            HvReference::Auto => s.serialize_str("auto"),
            HvReference::Fixed(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for HvReference {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            Vector(Vec<f64>),
        }
        match Raw::deserialize(d)? {
            Raw::Word(w) if w == "auto" => Ok(HvReference::Auto),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "expected \"auto\" or a vector, got {w:?}"
            ))),
            Raw::Vector(v) => Ok(HvReference::Fixed(v)),
        }
    }
}

impl HvReference {
    fn fixed(&self) -> Option<&[f64]> {
        match self {
            HvReference::Auto => None,
            HvReference::Fixed(v) => Some(v),
        }
    }
}

fn default_beta_candidates() -> Vec<f64> {
    DEFAULT_BETA_CANDIDATES.to_vec()
}

fn default_alpha_candidates() -> Vec<f64> {
    DEFAULT_ALPHA_CANDIDATES.to_vec()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldSpec,
    pub objectives: usize,
    pub methods: Vec<MethodTag>,
    pub grid: GridSpec,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default = "default_beta_candidates")]
    pub beta_candidates: Vec<f64>,
    #[serde(default = "default_alpha_candidates")]
    pub alpha_candidates: Vec<f64>,
    #[serde(default)]
    pub hv_reference: HvReference,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Preferences for β/α selection; the evaluation grid when absent.
    #[serde(default)]
    pub validation_grid: Option<GridSpec>,
    /// Thread count; the rayon default when absent. Results do not depend on it.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.objectives < 2 {
            return Err(Error::InvalidConfig("objectives must be >= 2".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("methods must be non-empty".into()));
        }
        for m in &self.methods {
            m.validate()?;
        }
        self.trainer.validate()?;
        if self.beta_candidates.is_empty() || self.alpha_candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        if self.beta_candidates.iter().any(|b| !(*b > 0.5 && *b < 1.0)) {
            return Err(Error::InvalidConfig(
                "beta candidates must lie in (0.5, 1)".into(),
            ));
        }
        ExtrapolationConfig {
            alpha: self.alpha_candidates[0],
            candidates: self.alpha_candidates.clone(),
        }
        .validate()?;
        if let HvReference::Fixed(r) = &self.hv_reference {
            if r.len() != self.objectives {
                return Err(Error::InvalidConfig(format!(
                    "hv_reference has {} entries for {} objectives",
                    r.len(),
                    self.objectives
                )));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        self.grid.preferences(self.objectives)?;
        if let Some(v) = &self.validation_grid {
            v.preferences(self.objectives)?;
        }
        Ok(())
    }
}

/// The simplex lattice with spacing `step`; only `0.1` is supported. Points
/// are built from integer numerators over 10, first coordinate ascending.
pub fn generate_grid(n: usize, step: f64) -> Result<Vec<PreferenceVector>> {
    if (step - 0.1).abs() > 1e-12 || !(2..=3).contains(&n) {
        return Err(Error::UnsupportedGrid { n, step });
    }
    let mut out = Vec::new();
    if n == 2 {
        for k in 0..=10u32 {
            out.push(PreferenceVector::from_numerators(&[k, 10 - k], 10)?);
        }
    } else {
        for i in 0..=10u32 {
            for j in 0..=10 - i {
                out.push(PreferenceVector::from_numerators(&[i, j, 10 - i - j], 10)?);
            }
        }
    }
    Ok(out)
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: MethodTag,
    pub grid_index: usize,
    pub preference: PreferenceVector,
    /// Merging coefficients; absent for the oracle.
    pub coefficients: Option<Vec<f64>>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selections {
    pub beta: Option<BetaSelection>,
    pub alpha: Vec<(String, AlphaSelection)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub methods: Vec<MethodTag>,
    pub hv_reference: Vec<f64>,
    pub selections: Selections,
    pub rows: Vec<SweepRow>,
    pub reports: Vec<MetricsReport>,
}

impl SweepResult {
    pub fn front(&self, method: &MethodTag) -> Vec<FrontPoint> {
        self.rows
            .iter()
            .filter(|r| &r.method == method)
            .map(|r| FrontPoint {
                preference: r.preference.clone(),
                rewards: r.rewards.clone(),
                method: r.method.clone(),
            })
            .collect()
    }

    pub fn report(&self, method: &MethodTag) -> Option<&MetricsReport> {
        let name = method.to_string();
        self.reports.iter().find(|r| r.method == name)
    }
}

/// Which backbones a merging method uses.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
enum MatrixKey {
    Identity,
    Circulant(f64),
    Catalog(usize),
}

impl MatrixKey {
    fn label(self) -> String {
        match self {
            MatrixKey::Identity => "identity".into(),
            MatrixKey::Circulant(b) => format!("circulant({b})"),
            MatrixKey::Catalog(id) => format!("catalog({id})"),
        }
    }

    fn build(self, n: usize) -> Result<CombinationMatrix> {
        Ok(match self {
            MatrixKey::Identity => CombinationMatrix::identity(n)?,
            MatrixKey::Circulant(b) => build_circulant(n, b)?,
            MatrixKey::Catalog(id) => random_catalog(id)?,
        })
    }
}

/// Backbones and coefficient rule of a resolved non-oracle method, before extrapolation.
fn merge_plan(method: &MethodTag) -> Option<(MatrixKey, MergeRule)> {
    match method {
        MethodTag::BoneSoup { beta: Some(b) } => Some((MatrixKey::Circulant(*b), MergeRule::Solve)),
        MethodTag::Aba { beta: Some(b) } => Some((MatrixKey::Circulant(*b), MergeRule::Preference)),
        MethodTag::RewardedSoup => Some((MatrixKey::Identity, MergeRule::Solve)),
        MethodTag::RandomMatrix { id } => Some((MatrixKey::Catalog(*id), MergeRule::Solve)),
        MethodTag::Extrapolated { inner, .. } => merge_plan(inner),
        _ => None,
    }
}

/// Trained backbones keyed by matrix label.
pub struct BackboneCache {
    sets: BTreeMap<String, BackboneSet>,
}

impl BackboneCache {
    fn get(&self, key: MatrixKey) -> &BackboneSet {
        &self.sets[&key.label()]
    }
}

fn train_keys(keys: &[MatrixKey], world: &World, config: &TrainerConfig) -> Result<BackboneCache> {
    let sets = keys
        .par_iter()
        .map(|&key| {
            let set = key
                .build(world.objectives())
                .and_then(|m| train_backbones(&m, world, config))
                .map_err(|e| Error::TrainingFailure {
                    method: key.label(),
                    source: Box::new(e),
                })?;
            Ok((key.label(), set))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BackboneCache {
        sets: sets.into_iter().collect(),
    })
}

fn with_beta(method: &MethodTag, beta: f64) -> MethodTag {
    match method {
        MethodTag::BoneSoup { beta: None } => MethodTag::bone_soup(beta),
        MethodTag::Aba { beta: None } => MethodTag::aba(beta),
        MethodTag::Extrapolated { alpha, inner } => MethodTag::Extrapolated {
            alpha: *alpha,
            inner: Box::new(with_beta(inner, beta)),
        },
        other => other.clone(),
    }
}

/// Maximizer of `Σ μ_j r_j` with the world's regularizer.
fn oracle_point(
    world: &World,
    mu: &PreferenceVector,
    config: &TrainerConfig,
) -> Result<ParamVector> {
    match world {
        World::Quadratic(q) => {
            train_quadratic_closed_form(&q.rewards, mu.as_slice(), config.eta, &q.reference)
        }
        World::Bandit(b) => {
            Ok(
                bandit_kl_closed_form(&b.env, mu.as_slice(), config.eta, &b.reference)?
                    .logits()
                    .clone(),
            )
        }
    }
}

/// Front of one resolved method over `grid`.
pub fn run_method(
    method: &MethodTag,
    world: &World,
    grid: &[PreferenceVector],
    trainer: &TrainerConfig,
    backbones: &BackboneCache,
) -> Result<Vec<SweepRow>> {
    if !method.is_resolved() {
        return Err(Error::InvalidConfig(format!(
            "method {method} has unresolved parameters"
        )));
    }
    grid.par_iter()
        .enumerate()
        .map(|(grid_index, mu)| {
            let (point, coeffs) = match merge_plan(method) {
                None => (
                    oracle_point(world, mu, trainer).map_err(|e| Error::TrainingFailure {
                        method: method.to_string(),
                        source: Box::new(e),
                    })?,
                    None,
                ),
                Some((key, rule)) => {
                    let set = backbones.get(key);
                    let lambda = coefficients(rule, &set.matrix, mu)?;
                    let merged = merge_with_coefficients(set, &lambda)?;
                    let point = match method.alpha() {
                        Some(alpha) => extrapolate(&merged, &set.reference, alpha)?,
                        None => merged,
                    };
                    (point, Some(lambda.as_slice().to_vec()))
                }
            };
            Ok(SweepRow {
                method: method.clone(),
                grid_index,
                preference: mu.clone(),
                coefficients: coeffs,
                rewards: world.evaluate(&point)?,
            })
        })
        .collect()
}

fn with_pool<T: Send>(workers: Option<usize>, job: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        None => job(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start {n} workers: {e}")))?
            .install(job),
    }
}

fn validation_prefs(config: &ExperimentConfig) -> Result<Vec<PreferenceVector>> {
    config
        .validation_grid
        .as_ref()
        .unwrap_or(&config.grid)
        .preferences(config.objectives)
}

/// Short-budget β selection for the configured world.
pub fn select_beta_for_config(config: &ExperimentConfig) -> Result<BetaSelection> {
    config.validate()?;
    with_pool(config.workers, || {
        let world = config.world.build(config.objectives, config.seed)?;
        select_beta_scored(
            &config.beta_candidates,
            &world,
            &config.trainer,
            &validation_prefs(config)?,
            config.hv_reference.fixed(),
        )
    })
}

/// Runs every configured method over the grid and computes metrics. Nothing
/// is written; see [`emit_outputs`].
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    with_pool(config.workers, || run_sweep_inner(config))
}

fn run_sweep_inner(config: &ExperimentConfig) -> Result<SweepResult> {
    let world = config.world.build(config.objectives, config.seed)?;
    let grid = config.grid.preferences(config.objectives)?;
    let validation = validation_prefs(config)?;
    let fixed_reference = config.hv_reference.fixed();

    let beta_selection = if config
        .methods
        .iter()
        .any(|m| m.beta().is_none() && needs_beta(m))
    {
        Some(select_beta_scored(
            &config.beta_candidates,
            &world,
            &config.trainer,
            &validation,
            fixed_reference,
        )?)
    } else {
        None
    };
    let mut methods: Vec<MethodTag> = config
        .methods
        .iter()
        .map(|m| match &beta_selection {
            Some(s) => with_beta(m, s.beta),
            None => m.clone(),
        })
        .collect();

    let mut keys: Vec<MatrixKey> = Vec::new();
    for m in &methods {
        if let Some((key, _)) = merge_plan(m) {
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }
    let cache = train_keys(&keys, &world, &config.trainer)?;

    // α resolution, once per distinct inner method
    let mut alpha_choices: Vec<(String, AlphaSelection)> = Vec::new();
    for m in methods.iter_mut() {
        if let MethodTag::Extrapolated { alpha: None, inner } = m {
            let name = inner.to_string();
            if !alpha_choices.iter().any(|(n, _)| n == &name) {
                let (key, rule) = merge_plan(inner).expect("validated extrapolation wraps a merge");
                let ext = ExtrapolationConfig {
                    alpha: config.alpha_candidates[0],
                    candidates: config.alpha_candidates.clone(),
                };
                let sel = select_alpha_scored(
                    &ext,
                    &world,
                    cache.get(key),
                    rule,
                    &validation,
                    fixed_reference,
                )?;
                alpha_choices.push((name.clone(), sel));
            }
            let chosen = alpha_choices
                .iter()
                .find(|(n, _)| n == &name)
                .map(|(_, s)| s.alpha);
            *m = MethodTag::Extrapolated {
                alpha: chosen,
                inner: inner.clone(),
            };
        }
    }

    let mut seen = std::collections::BTreeSet::new();
    for m in &methods {
        if !seen.insert(m.to_string()) {
            return Err(Error::InvalidConfig(format!("method {m} listed twice")));
        }
    }
    methods.sort_by_key(|m| m.to_string());

    let fronts = methods
        .par_iter()
        .map(|m| run_method(m, &world, &grid, &config.trainer, &cache))
        .collect::<Result<Vec<_>>>()?;

    let reference = match fixed_reference {
        Some(r) => r.to_vec(),
        None => {
            let reward_sets: Vec<Vec<&[f64]>> = fronts
                .iter()
                .map(|f| f.iter().map(|r| r.rewards.as_slice()).collect())
                .collect();
            auto_reference(reward_sets.iter().map(Vec::as_slice))?
        }
    };
    let reports = methods
        .iter()
        .zip(&fronts)
        .map(|(m, rows)| {
            let points: Vec<FrontPoint> = rows
                .iter()
                .map(|r| FrontPoint {
                    preference: r.preference.clone(),
                    rewards: r.rewards.clone(),
                    method: m.clone(),
                })
                .collect();
            MetricsReport::compute(&m.to_string(), &points, &reference, 0.0)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;

    Ok(SweepResult {
        tool_version: TOOL_VERSION.to_string(),
        config: config.clone(),
        methods,
        hv_reference: reference,
        selections: Selections {
            beta: beta_selection,
            alpha: alpha_choices,
        },
        rows: fronts.into_iter().flatten().collect(),
        reports,
    })
}

fn needs_beta(m: &MethodTag) -> bool {
    match m {
        MethodTag::BoneSoup { .. } | MethodTag::Aba { .. } => true,
        MethodTag::Extrapolated { inner, .. } => needs_beta(inner),
        _ => false,
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidConfig(format!("csv buffer: {e}")))
}

pub fn fronts_csv(result: &SweepResult) -> Result<Vec<u8>> {
    let n = result.config.objectives;
    let mut header: Vec<String> = vec!["method".into(), "beta".into(), "alpha".into()];
    for prefix in ["pref", "lambda", "reward"] {
        header.extend((0..n).map(|i| format!("{prefix}_{i}")));
    }
    let rows: Vec<Vec<String>> = result
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.method.to_string(),
                r.method.beta().map(num).unwrap_or_default(),
                r.method.alpha().map(num).unwrap_or_default(),
            ];
            row.extend(r.preference.as_slice().iter().map(|&x| num(x)));
            match &r.coefficients {
                Some(c) => row.extend(c.iter().map(|&x| num(x))),
                None => row.extend(std::iter::repeat_n(String::new(), n)),
            }
            row.extend(r.rewards.iter().map(|&x| num(x)));
            row
        })
        .collect();
    csv_bytes(&header, &rows)
}

pub fn metrics_csv(reports: &[MetricsReport]) -> Result<Vec<u8>> {
    let header: Vec<String> = MetricsReport::CSV_HEADER
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = reports.iter().map(MetricsReport::csv_row).collect();
    csv_bytes(&header, &rows)
}

fn plot_csv(result: &SweepResult, method: &MethodTag) -> Result<Vec<u8>> {
    let n = result.config.objectives;
    let mut header: Vec<String> = (0..n).map(|i| format!("pref_{i}")).collect();
    header.extend((0..n).map(|i| format!("reward_{i}")));
    let mut rows: Vec<&SweepRow> = result.rows.iter().filter(|r| &r.method == method).collect();
    rows.sort_by(|a, b| a.preference.as_slice()[0].total_cmp(&b.preference.as_slice()[0]));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            r.preference
                .as_slice()
                .iter()
                .chain(&r.rewards)
                .map(|&x| num(x))
                .collect()
        })
        .collect();
    csv_bytes(&header, &body)
}

/// File-name-safe form of a method tag.
pub fn slug(method: &MethodTag) -> String {
    let mut out = String::new();
    let mut last_sep = true;
    for c in method.to_string().chars() {
        if c.is_ascii_alphanumeric() || c == '.' {
            out.push(c);
            last_sep = false;
        } else if !last_sep {
            out.push('_');
            last_sep = true;
        }
    }
    while out.ends_with('_') {
        out.pop();
    }
    out
}

/// Relative path and contents of every output file.
pub fn render_outputs(result: &SweepResult) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    let mut files = vec![
        (PathBuf::from("fronts.csv"), fronts_csv(result)?),
        (PathBuf::from("metrics.csv"), metrics_csv(&result.reports)?),
    ];
    let mut json = serde_json::to_string_pretty(result)?;
    json.push('\n');
    files.push((PathBuf::from("result.json"), json.into_bytes()));
    for m in &result.methods {
        files.push((
            Path::new("plotdata").join(format!("{}.csv", slug(m))),
            plot_csv(result, m)?,
        ));
    }
    Ok(files)
}

/// Writes all outputs under `dir`. Files are first written to a staging
/// directory next to `dir` and moved into place only once all succeeded.
pub fn emit_outputs(result: &SweepResult, dir: &Path) -> Result<Vec<PathBuf>> {
    let files = render_outputs(result)?;
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
    let stage = || -> Result<()> {
        for (rel, bytes) in &files {
            let path = staging.join(rel);
            if let Some(p) = path.parent() {
                fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
            }
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        fs::create_dir_all(dir.join("plotdata")).map_err(|e| Error::io(dir.join("plotdata"), e))?;
        for (rel, _) in &files {
            let to = dir.join(rel);
            fs::rename(staging.join(rel), &to).map_err(|e| Error::io(&to, e))?;
        }
        Ok(())
    };
    let outcome = stage();
    let _ = fs::remove_dir_all(&staging);
    outcome?;
    Ok(files.into_iter().map(|(rel, _)| dir.join(rel)).collect())
}

/// Fronts read back from a `fronts.csv`, grouped by method in file order.
pub fn load_fronts(path: &Path) -> Result<Vec<(MethodTag, Vec<FrontPoint>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fronts(&text)
}

pub fn parse_fronts(text: &str) -> Result<Vec<(MethodTag, Vec<FrontPoint>)>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let column = |prefix: &str| -> Vec<usize> {
        header
            .iter()
            .enumerate()
            .filter(|(_, h)| {
                h.strip_prefix(prefix)
                    .is_some_and(|rest| rest.parse::<usize>().is_ok())
            })
            .map(|(i, _)| i)
            .collect()
    };
    let (prefs, rewards) = (column("pref_"), column("reward_"));
    let method_col = header.iter().position(|h| h == "method");
    let Some(method_col) = method_col.filter(|_| !prefs.is_empty() && prefs.len() == rewards.len())
    else {
        return Err(Error::InvalidConfig(
            "fronts file needs method, pref_i and reward_i columns".into(),
        ));
    };
    let mut out: Vec<(MethodTag, Vec<FrontPoint>)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |cols: &[usize]| -> Result<Vec<f64>> {
            cols.iter()
                .map(|&c| {
                    record[c].trim().parse::<f64>().map_err(|_| {
                        Error::InvalidConfig(format!(
                            "row {}: bad number {:?}",
                            line + 2,
                            &record[c]
                        ))
                    })
                })
                .collect()
        };
        let method: MethodTag = record[method_col].parse()?;
        let point = FrontPoint::new(
            PreferenceVector::new(parse(&prefs)?)?,
            parse(&rewards)?,
            method.clone(),
        )?;
        match out.iter_mut().find(|(m, _)| m == &method) {
            Some((_, f)) => f.push(point),
            None => out.push((method, vec![point])),
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig("fronts file has no rows".into()));
    }
    Ok(out)
}

/// Metrics for fronts loaded from disk, using `reference` or the automatic rule.
pub fn metrics_for_fronts(
    fronts: &[(MethodTag, Vec<FrontPoint>)],
    reference: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<MetricsReport>)> {
    let reference = match reference {
        Some(r) => r.to_vec(),
        None => {
            let sets: Vec<Vec<&[f64]>> = fronts
                .iter()
                .map(|(_, f)| f.iter().map(|p| p.rewards.as_slice()).collect())
                .collect();
            auto_reference(sets.iter().map(Vec::as_slice))?
        }
    };
    let reports = fronts
        .iter()
        .map(|(m, f)| MetricsReport::compute(&m.to_string(), f, &reference, 0.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((reference, reports))
}

/// Human-readable one-line-per-method summary.
pub fn summary(result: &SweepResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "hv reference: {:?}", result.hv_reference);
    for r in &result.reports {
        let _ = writeln!(
            s,
            "{:<40} hv={:.6} ip={:.6} c={:.4} len={} sp={} spacing={}",
            r.method,
            r.hypervolume,
            r.inner_product,
            r.controllability,
            r.front_length,
            r.sparsity.map_or("-".into(), |v| format!("{v:.6}")),
            r.spacing.map_or("-".into(), |v| format!("{v:.6}"))
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_config(methods: &str, grid: &str) -> ExperimentConfig {
        let text = format!(
            r#"{{
                "world": {{
                    "kind": "quadratic",
                    "rewards": [
                        {{"peak": 0.0, "maximizer": [1.0, 1.0], "curvature": 1.0}},
                        {{"peak": 0.0, "maximizer": [3.0, -1.0], "curvature": [[1.0, 0.0], [0.0, 4.0]]}}
                    ],
                    "reference": [0.0, 0.0]
                }},
                "objectives": 2,
                "methods": {methods},
                "grid": {grid},
                "trainer": {{"eta": 0.0}}
            }}"#
        );
        ExperimentConfig::from_json(&text).unwrap()
    }

    #[test]
    fn grid_examples() {
        assert_eq!(generate_grid(2, 0.1).unwrap().len(), 11);
        let g3 = generate_grid(3, 0.1).unwrap();
        assert_eq!(g3.len(), 66);
        assert!(g3
            .iter()
            .all(|p| (p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12));
        assert!(matches!(
            generate_grid(4, 0.1),
            Err(Error::UnsupportedGrid { .. })
        ));
        assert!(matches!(
            generate_grid(2, 0.2),
            Err(Error::UnsupportedGrid { .. })
        ));
        assert_eq!(generate_grid(2, 0.1).unwrap()[3].as_slice(), &[0.3, 0.7]);
    }

    #[test]
    fn config_parsing() {
        let c = example_config(
            r#"["bone_soup(0.6)", "rewarded_soup"]"#,
            r#"{"two_obj_step": 0.1}"#,
        );
        assert_eq!(c.hv_reference, HvReference::Auto);
        assert_eq!(c.beta_candidates, vec![0.8, 0.7, 0.6]);
        assert_eq!(c.trainer.eta, 0.0);
        assert!(c.validate().is_ok());

        let unknown = r#"{"world": {"kind": "random_bandit", "contexts": 2, "arms": 3}, "objectives": 2,
            "methods": ["rewarded_soup"], "grid": {"two_obj_step": 0.1}, "colour": 1}"#;
        assert!(matches!(
            ExperimentConfig::from_json(unknown),
            Err(Error::Json(_))
        ));
        let fixed = r#"{"world": {"kind": "random_bandit", "contexts": 2, "arms": 3}, "objectives": 2,
            "methods": ["rewarded_soup"], "grid": {"two_obj_step": 0.1}, "hv_reference": [-1, -1]}"#;
        assert_eq!(
            ExperimentConfig::from_json(fixed).unwrap().hv_reference,
            HvReference::Fixed(vec![-1.0, -1.0])
        );
        let empty = example_config("[]", r#"{"two_obj_step": 0.1}"#);
        assert!(matches!(empty.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn run_method_examples() {
        let c = example_config(
            r#"["rewarded_soup", "bone_soup(0.6)", "morlhf_oracle"]"#,
            r#"{"explicit": [[0.5, 0.5]]}"#,
        );
        let r = run_sweep(&c).unwrap();
        let get = |m: MethodTag| {
            r.rows
                .iter()
                .find(|row| row.method == m)
                .unwrap()
                .rewards
                .clone()
        };
        let rs = get(MethodTag::RewardedSoup);
        assert!((rs[0] + 2.0).abs() < 1e-12 && (rs[1] + 5.0).abs() < 1e-12);
        let bs = get(MethodTag::bone_soup(0.6));
        let (x, y): (f64, f64) = (2.0, -45.0 / 77.0);
        assert!((bs[0] - (-(x - 1.0).powi(2) - (y - 1.0).powi(2))).abs() < 1e-12);
        assert!((bs[1] - (-(x - 3.0).powi(2) - 4.0 * (y + 1.0).powi(2))).abs() < 1e-12);
        assert!((bs[0] + 3.5104).abs() < 1e-3 && (bs[1] + 1.6908).abs() < 1e-3);
        let oracle = get(MethodTag::MorlhfOracle);
        assert!((oracle[0] + 3.56).abs() < 1e-12 && (oracle[1] + 1.64).abs() < 1e-12);
    }

    #[test]
    fn sweep_row_counts_and_coefficients() {
        let c = example_config(
            r#"["bone_soup(0.6)", "rewarded_soup", "morlhf_oracle"]"#,
            r#"{"two_obj_step": 0.1}"#,
        );
        let r = run_sweep(&c).unwrap();
        assert_eq!(r.rows.len(), 33);
        assert_eq!(r.reports.len(), 3);
        for row in &r.rows {
            let Some(lambda) = &row.coefficients else {
                continue;
            };
            let m = merge_plan(&row.method).unwrap().0.build(2).unwrap();
            let back = m.apply(lambda);
            for (a, b) in back.iter().zip(row.preference.as_slice()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        // oracle optimality at η = 0
        for (i, mu) in generate_grid(2, 0.1).unwrap().iter().enumerate() {
            let g = |m: &MethodTag| {
                let row = r
                    .rows
                    .iter()
                    .find(|row| &row.method == m && row.grid_index == i)
                    .unwrap();
                mu.dot(&row.rewards).unwrap()
            };
            let best = g(&MethodTag::MorlhfOracle);
            assert!(best >= g(&MethodTag::RewardedSoup) - 1e-9);
            assert!(best >= g(&MethodTag::bone_soup(0.6)) - 1e-9);
        }
    }

    #[test]
    fn three_objective_grid_rows() {
        let text = r#"{"world": {"kind": "random_quadratic", "dim": 3, "k_range": [0.5, 2.0], "theta_bound": 3.0},
            "objectives": 3, "methods": ["rewarded_soup"], "grid": {"three_obj_step": 0.1}}"#;
        let r = run_sweep(&ExperimentConfig::from_json(text).unwrap()).unwrap();
        assert_eq!(r.rows.len(), 66);
    }

    #[test]
    fn identity_override_matches_rewarded_soup() {
        let c = example_config(r#"["rewarded_soup"]"#, r#"{"two_obj_step": 0.1}"#);
        let r = run_sweep(&c).unwrap();
        let world = World::example21();
        let id = CombinationMatrix::identity(2).unwrap();
        let set = train_backbones(&id, &world, &c.trainer).unwrap();
        for row in &r.rows {
            let merged = crate::merging::merge(&set, &row.preference).unwrap();
            assert_eq!(world.evaluate(&merged).unwrap(), row.rewards);
        }
    }

    #[test]
    fn auto_parameters_are_resolved() {
        let c = example_config(
            r#"["bone_soup(auto)", "extrapolated(auto, bone_soup(auto))"]"#,
            r#"{"two_obj_step": 0.1}"#,
        );
        let r = run_sweep(&c).unwrap();
        let beta = r.selections.beta.as_ref().unwrap().beta;
        assert!(r
            .methods
            .iter()
            .all(|m| m.is_resolved() && m.beta() == Some(beta)));
        assert_eq!(r.selections.alpha.len(), 1);
    }

    #[test]
    fn outputs_round_trip() {
        let c = example_config(
            r#"["bone_soup(0.7)", "rewarded_soup"]"#,
            r#"{"two_obj_step": 0.1}"#,
        );
        let r = run_sweep(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        emit_outputs(&r, &out).unwrap();
        let fronts = fs::read_to_string(out.join("fronts.csv")).unwrap();
        assert_eq!(fronts.lines().count(), 23);
        assert!(fronts
            .starts_with("method,beta,alpha,pref_0,pref_1,lambda_0,lambda_1,reward_0,reward_1\n"));
        assert!(out.join("plotdata/bone_soup_0.7.csv").exists());
        assert!(out.join("result.json").exists());
        let loaded = load_fronts(&out.join("fronts.csv")).unwrap();
        let (reference, reports) = metrics_for_fronts(&loaded, Some(&r.hv_reference)).unwrap();
        assert_eq!(reference, r.hv_reference);
        assert_eq!(reports, r.reports);
        // leftover staging directories are cleaned up
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn unwritable_output_leaves_nothing() {
        let c = example_config(r#"["rewarded_soup"]"#, r#"{"two_obj_step": 0.1}"#);
        let r = run_sweep(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = emit_outputs(&r, &blocker.join("out")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn slugs() {
        assert_eq!(slug(&MethodTag::bone_soup(0.6)), "bone_soup_0.6");
        assert_eq!(
            slug(&MethodTag::extrapolated(0.3, MethodTag::RewardedSoup)),
            "extrapolated_0.3_rewarded_soup"
        );
    }
}
