//! Experiment configuration, the schema → backend → stats pipelines, and
//! the files they write.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use mgt_core::backend::{
    batch_evaluate, Backend, BackendDescriptor, BackendError, BatchError, FillMaskBackend, FillMaskResult,
    PromptFailure, RetryPolicy, SyntheticModelConfig, DEFAULT_TOP_K,
};
use mgt_core::causal::{
    adjustment_table, check_recoverability, enumerate_joint, sample, verify_selection_collider, AdjustmentRow,
    CausalError, ColliderReport, DgpSpec, RecoverabilityReport,
};
use mgt_core::schema::{
    builtin_winogender_schema, default_date_axis, default_place_axis, default_winogender_axis, expand_custom_prompts,
    expand_mgt_prompts, expand_winogender_prompts, load_gender_lexicon, load_winogender_schema, render_winogender,
    sentence_id, AxisKind, GenderLexicon, MgtTemplateSpec, OccupationStats, Participant, Prompt, SchemaError, WAxis,
    WinogenderRecord,
};
use mgt_core::stats::{
    aggregate_gender_mass, fit_difference, linear_fit, prompt_gender_mass, uncertainty, AxisSeries, FitDiff,
    FitSummary, GenderMassPoint, Response, StatsError, UncertaintyScore, DEFAULT_N_EDGE,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cache::CachedBackend;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_SIM_SAMPLES: usize = 100_000;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Usage(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("{context}: {source}")]
    Batch {
        context: String,
        #[source]
        source: BatchError,
    },
    #[error("{context}: {source}")]
    Stats {
        context: String,
        #[source]
        source: StatsError,
    },
    #[error("spec {path}: {source}")]
    Causal {
        path: String,
        #[source]
        source: CausalError,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl RunError {
    /// 2 for usage and validation problems, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) | RunError::Schema(_) => 2,
            RunError::Backend(e) => match e {
                BackendError::Config { .. } | BackendError::Render { .. } => 2,
                _ => 1,
            },
            RunError::Causal { source, .. } => match source {
                CausalError::Validation { .. } | CausalError::TooLarge { .. } => 2,
                _ => 1,
            },
            RunError::Batch { .. } | RunError::Stats { .. } | RunError::Io { .. } => 1,
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        RunError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

fn stats_err(context: impl Into<String>) -> impl FnOnce(StatsError) -> RunError {
    let context = context.into();
    move |source| RunError::Stats { context, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    MgtDate,
    MgtPlace,
    Winogender,
    Sim,
    Custom,
}

/// Which pair of responses fits and uncertainty scores use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Female (male) mass over total gendered mass.
    #[default]
    Share,
    /// Female (male) mass as returned in the top-k.
    Raw,
}

impl Basis {
    pub fn female(self) -> Response {
        match self {
            Basis::Share => Response::FemaleShare,
            Basis::Raw => Response::FemaleMass,
        }
    }

    pub fn male(self) -> Response {
        match self {
            Basis::Share => Response::MaleShare,
            Basis::Raw => Response::MaleMass,
        }
    }
}

impl std::str::FromStr for Basis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "share" | "normalized_female_share" => Ok(Basis::Share),
            "raw" | "raw_female_mass" => Ok(Basis::Raw),
            other => Err(format!("unknown basis `{other}` (expected `share` or `raw`)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: i64,
    pub end: i64,
    pub count: usize,
}

impl DateRange {
    pub const MGT: DateRange = DateRange {
        start: 1801,
        end: 2001,
        count: 21,
    };

    pub fn axis(&self) -> Result<WAxis, SchemaError> {
        default_date_axis(self.start, self.end, self.count)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WinogenderFiles {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<PathBuf>,
    /// Restricts the run to these occupations; empty means all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub occupations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub backend: BackendDescriptor,
    /// Used when `backend` has no endpoint. Its seed is replaced by `seed`.
    pub synthetic: SyntheticModelConfig,
    /// Date axis; `None` picks the experiment's default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dates: Option<DateRange>,
    /// Template for `custom` runs, with `{MASK}` and optionally `{W}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    /// Axis kind for `custom` runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_axis: Option<AxisKind>,
    #[serde(default)]
    pub winogender: WinogenderFiles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<PathBuf>,
    pub sim_samples: usize,
    pub top_k: usize,
    pub parallelism: usize,
    pub retry: RetryPolicy,
    pub n_edge: usize,
    pub basis: Basis,
    pub seed: u64,
    pub out: PathBuf,
    /// Results cache for remote backends; `None` disables it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind, out: impl Into<PathBuf>) -> Self {
        Self {
            experiment,
            backend: BackendDescriptor::synthetic("synthetic"),
            synthetic: SyntheticModelConfig::default(),
            dates: None,
            template: None,
            custom_axis: None,
            winogender: WinogenderFiles::default(),
            lexicon: None,
            spec: None,
            sim_samples: DEFAULT_SIM_SAMPLES,
            top_k: DEFAULT_TOP_K,
            parallelism: 8,
            retry: RetryPolicy::default(),
            n_edge: DEFAULT_N_EDGE,
            basis: Basis::Share,
            seed: 0,
            out: out.into(),
            cache_dir: None,
        }
    }

    /// Checks everything that can be checked before any evaluation,
    /// creating the output directory.
    pub fn validate(&self) -> Result<(), RunError> {
        let usage = |m: String| Err(RunError::Usage(m));
        if self.top_k == 0 {
            return usage("top_k must be at least 1".into());
        }
        if self.parallelism == 0 {
            return usage("parallelism must be at least 1".into());
        }
        if self.n_edge == 0 {
            return usage("n_edge must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.retry.max_failure_fraction) {
            return usage("max_failure_fraction must be in [0, 1]".into());
        }
        self.backend.validate()?;
        self.synthetic.validate()?;
        let files = [
            ("lexicon", self.lexicon.as_ref()),
            ("winogender templates", self.winogender.templates.as_ref()),
            ("occupation stats", self.winogender.stats.as_ref()),
            ("spec", self.spec.as_ref()),
        ];
        for (what, path) in files {
            if let Some(p) = path {
                if !p.is_file() {
                    return usage(format!("{what} file {} does not exist", p.display()));
                }
            }
        }
        if self.winogender.templates.is_some() != self.winogender.stats.is_some() {
            return usage("winogender templates and occupation stats must be given together".into());
        }
        match self.experiment {
            ExperimentKind::Sim if self.spec.is_none() => return usage("sim needs a spec file".into()),
            ExperimentKind::Custom if self.template.is_none() => {
                return usage("custom experiments need a template".into())
            }
            _ => {}
        }
        if let Some(d) = &self.dates {
            d.axis()?;
        }
        std::fs::create_dir_all(&self.out).map_err(|e| RunError::io(&self.out, e))?;
        tempfile::NamedTempFile::new_in(&self.out)
            .map_err(|e| RunError::io(&self.out, format!("output directory is not writable: {e}")))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; any field change changes it.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn synthetic_config(&self) -> SyntheticModelConfig {
        SyntheticModelConfig {
            seed: self.seed,
            ..self.synthetic.clone()
        }
    }

    pub fn build_backend(&self) -> Result<CachedBackend, RunError> {
        let inner = Backend::from_descriptor(self.backend.clone(), Some(self.synthetic_config()))?;
        Ok(CachedBackend::new(inner, self.cache_dir.clone()))
    }

    fn lexicon(&self) -> Result<GenderLexicon, RunError> {
        Ok(load_gender_lexicon(self.lexicon.as_deref())?)
    }
}

/// Timestamp recorded in provenance blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunContext {
    pub timestamp: String,
}

impl RunContext {
    pub fn fixed(timestamp: impl Into<String>) -> Self {
        Self {
            timestamp: timestamp.into(),
        }
    }

    /// `SOURCE_DATE_EPOCH` when set (reproducible reports), else now.
    pub fn from_env() -> Self {
        let epoch = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.parse::<i64>().ok());
        let time = epoch
            .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0))
            .unwrap_or_else(chrono::Utc::now);
        Self::fixed(time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub backend: String,
    pub timestamp: String,
    pub tool_version: String,
}

impl Provenance {
    fn new(config: &ExperimentConfig, ctx: &RunContext) -> Self {
        Self {
            config_hash: config.hash(),
            backend: config.backend.name.clone(),
            timestamp: ctx.timestamp.clone(),
            tool_version: TOOL_VERSION.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fits {
    pub female: FitSummary,
    pub male: FitSummary,
}

/// Everything derived from one axis series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub basis: Basis,
    pub points: Vec<GenderMassPoint>,
    pub fits: Fits,
    /// Male minus female.
    pub fit_diff: FitDiff,
    pub uncertainty: UncertaintyScore,
}

pub fn summarize(series: &AxisSeries, basis: Basis, n_edge: usize) -> Result<SeriesSummary, StatsError> {
    let female = linear_fit(series, basis.female())?;
    let male = linear_fit(series, basis.male())?;
    let fit_diff = fit_difference(&male, &female)?;
    let uncertainty = uncertainty(series, n_edge, basis.female())?;
    Ok(SeriesSummary {
        basis,
        points: series.points.clone(),
        fits: Fits { female, male },
        fit_diff,
        uncertainty,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinogenderScore {
    pub occupation: String,
    pub pct_female: f64,
    pub sentence_id: usize,
    pub coref_target: String,
    pub participant: Participant,
    pub participant_word: String,
    /// The sentence with its pronoun masked, without the date prefix.
    pub sentence: String,
    pub n_points: usize,
    pub uncertainty: UncertaintyScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingCheck {
    pub n: usize,
    pub seed: u64,
    /// Between the empirical and the enumerated joint.
    pub total_variation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub spec_name: String,
    pub dependent_under_selection: bool,
    pub recoverable: bool,
    pub collider: ColliderReport,
    pub recoverability: RecoverabilityReport,
    pub backdoor: Vec<AdjustmentRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<WAxis>,
    pub n_prompts: usize,
    pub n_evaluated: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<PromptFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<SeriesSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winogender: Option<Vec<WinogenderScore>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimReport>,
}

impl ExperimentReport {
    fn new(config: &ExperimentConfig, ctx: &RunContext) -> Self {
        Self {
            experiment: config.experiment,
            provenance: Provenance::new(config, ctx),
            axis: None,
            n_prompts: 0,
            n_evaluated: 0,
            failures: Vec::new(),
            series: None,
            winogender: None,
            sim: None,
        }
    }
}

/// Successful results plus the failures tolerated by the retry policy.
pub async fn evaluate<B: FillMaskBackend>(
    backend: &B,
    prompts: &[Prompt],
    top_k: usize,
    parallelism: usize,
    retry: &RetryPolicy,
) -> Result<(Vec<FillMaskResult>, Vec<PromptFailure>), BatchError> {
    let batch = batch_evaluate(backend, prompts, top_k, parallelism, retry).await?;
    let failures = batch.failures().cloned().collect();
    let results = batch.outcomes.into_iter().filter_map(Result::ok).collect();
    Ok((results, failures))
}

/// Prompt set and axis for `mgt_date`, `mgt_place` and `custom` runs.
pub fn mgt_prompts(config: &ExperimentConfig) -> Result<(WAxis, Vec<Prompt>), RunError> {
    let date_axis = || config.dates.unwrap_or(DateRange::MGT).axis();
    let axis = match config.experiment {
        ExperimentKind::MgtDate => date_axis()?,
        ExperimentKind::MgtPlace => default_place_axis(),
        ExperimentKind::Custom => match config.custom_axis.unwrap_or(AxisKind::Date) {
            AxisKind::Date => date_axis()?,
            AxisKind::Place => default_place_axis(),
        },
        other => return Err(RunError::Usage(format!("{other:?} is not an axis experiment"))),
    };
    let prompts = match &config.template {
        Some(t) if config.experiment == ExperimentKind::Custom => expand_custom_prompts(t, &axis)?,
        _ => expand_mgt_prompts(&axis, &MgtTemplateSpec::default()),
    };
    Ok((axis, prompts))
}

/// Masked gender task over a date or place axis (or a custom template).
/// Writes series.csv, fits.json, report.json and the plot files.
pub async fn run_mgt_experiment(config: &ExperimentConfig, ctx: &RunContext) -> Result<ExperimentReport, RunError> {
    config.validate()?;
    let lexicon = config.lexicon()?;
    let (axis, prompts) = mgt_prompts(config)?;
    let backend = config.build_backend()?;
    let (results, failures) = evaluate(&backend, &prompts, config.top_k, config.parallelism, &config.retry)
        .await
        .map_err(|source| RunError::Batch {
            context: format!("{:?} with backend `{}`", config.experiment, config.backend.name),
            source,
        })?;
    let series = aggregate_gender_mass(&results, &prompts, &axis, &lexicon).map_err(stats_err("aggregating"))?;
    let summary = summarize(&series, config.basis, config.n_edge).map_err(stats_err("fitting series"))?;

    let mut report = ExperimentReport::new(config, ctx);
    report.axis = Some(axis);
    report.n_prompts = prompts.len();
    report.n_evaluated = results.len();
    report.failures = failures;
    report.series = Some(summary);

    write_series_csv(&config.out, report.series.as_ref().expect("set above"))?;
    write_json(
        &config.out.join("fits.json"),
        &report.series.as_ref().map(|s| FitsFile::from(s)),
    )?;
    write_json(&config.out.join("report.json"), &report)?;
    emit_plot_data(&report, &config.out)?;
    Ok(report)
}

#[derive(Serialize)]
struct FitsFile<'a> {
    basis: Basis,
    female: &'a FitSummary,
    male: &'a FitSummary,
    fit_diff: &'a FitDiff,
    uncertainty: &'a UncertaintyScore,
}

impl<'a> From<&'a SeriesSummary> for FitsFile<'a> {
    fn from(s: &'a SeriesSummary) -> Self {
        Self {
            basis: s.basis,
            female: &s.fits.female,
            male: &s.fits.male,
            fit_diff: &s.fit_diff,
            uncertainty: &s.uncertainty,
        }
    }
}

fn load_schema(config: &ExperimentConfig) -> Result<(Vec<WinogenderRecord>, Vec<OccupationStats>), RunError> {
    match (&config.winogender.templates, &config.winogender.stats) {
        (Some(t), Some(s)) => Ok(load_winogender_schema(t, s)?),
        _ => Ok(builtin_winogender_schema()),
    }
}

/// Uncertainty per occupation × participant × coreference target over the
/// extended Winogender set, sorted by the occupation's female share.
pub async fn run_winogender_experiment(
    config: &ExperimentConfig,
    ctx: &RunContext,
) -> Result<ExperimentReport, RunError> {
    config.validate()?;
    let lexicon = config.lexicon()?;
    let (records, stats) = load_schema(config)?;
    let wanted = &config.winogender.occupations;
    for occ in wanted {
        if !records.iter().any(|r| &r.occupation == occ) {
            return Err(RunError::Usage(format!("unknown occupation `{occ}`")));
        }
    }
    let records: Vec<WinogenderRecord> = records
        .into_iter()
        .filter(|r| wanted.is_empty() || wanted.contains(&r.occupation))
        .collect();
    let axis = match config.dates {
        Some(d) => d.axis()?,
        None => default_winogender_axis(),
    };
    let prompts = expand_winogender_prompts(&records, &Participant::ALL, &axis)?;
    let backend = config.build_backend()?;
    let (results, failures) = evaluate(&backend, &prompts, config.top_k, config.parallelism, &config.retry)
        .await
        .map_err(|source| RunError::Batch {
            context: format!("winogender with backend `{}`", config.backend.name),
            source,
        })?;
    let scores = winogender_scores(&records, &stats, &axis, &results, &lexicon, config.basis, config.n_edge)?;

    let mut report = ExperimentReport::new(config, ctx);
    report.axis = Some(axis);
    report.n_prompts = prompts.len();
    report.n_evaluated = results.len();
    report.failures = failures;
    report.winogender = Some(scores);
    write_json(&config.out.join("report.json"), &report)?;
    emit_plot_data(&report, &config.out)?;
    Ok(report)
}

/// Groups results (from `expand_winogender_prompts` over all participants)
/// into one series per sentence variant and scores each.
pub fn winogender_scores(
    records: &[WinogenderRecord],
    stats: &[OccupationStats],
    axis: &WAxis,
    results: &[FillMaskResult],
    lexicon: &GenderLexicon,
    basis: Basis,
    n_edge: usize,
) -> Result<Vec<WinogenderScore>, RunError> {
    let per_group = axis.len();
    let n_groups = records.len() * Participant::ALL.len();
    let mut masses: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); n_groups];
    for r in results {
        let group = r.prompt_id / per_group;
        let slot = masses
            .get_mut(group)
            .ok_or_else(|| RunError::Usage(format!("result for unknown prompt {}", r.prompt_id)))?;
        let (f, m) = prompt_gender_mass(r, lexicon);
        slot.push((r.prompt_id % per_group, f, m));
    }
    let mut scores = Vec::with_capacity(n_groups);
    for (group, group_masses) in masses.into_iter().enumerate() {
        let record = &records[group / Participant::ALL.len()];
        let participant = Participant::ALL[group % Participant::ALL.len()];
        let context = format!(
            "{} / {} / {}",
            record.occupation,
            participant.as_str(),
            record.coref_target.as_str()
        );
        let series = AxisSeries::from_prompt_masses(axis, group_masses).map_err(stats_err(context.clone()))?;
        let score = uncertainty(&series, n_edge, basis.female()).map_err(stats_err(context))?;
        let pct_female = stats
            .iter()
            .find(|s| s.occupation == record.occupation)
            .map(|s| s.pct_female)
            .unwrap_or(f64::NAN);
        scores.push(WinogenderScore {
            occupation: record.occupation.clone(),
            pct_female,
            sentence_id: sentence_id(record.coref_target, participant),
            coref_target: record.coref_target.as_str().to_string(),
            participant,
            participant_word: match participant {
                Participant::Other => record.other_participant.clone(),
                p => p.as_str().to_string(),
            },
            sentence: render_winogender(record, participant),
            n_points: series.points.len(),
            uncertainty: score,
        });
    }
    scores.sort_by(|a, b| {
        a.pct_female
            .total_cmp(&b.pct_female)
            .then_with(|| a.occupation.cmp(&b.occupation))
            .then_with(|| a.sentence_id.cmp(&b.sentence_id))
    });
    Ok(scores)
}

/// Exact collider, recoverability and adjustment checks for one spec file,
/// plus a Monte Carlo comparison. Writes report.json.
pub fn run_sim(config: &ExperimentConfig, ctx: &RunContext) -> Result<ExperimentReport, RunError> {
    config.validate()?;
    let path = config.spec.as_ref().expect("validated");
    let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    let causal = |source| RunError::Causal {
        path: path.display().to_string(),
        source,
    };
    let spec = DgpSpec::from_json(&text).map_err(causal)?;
    let sim = simulate(&spec, config.sim_samples, config.seed).map_err(causal)?;
    let mut report = ExperimentReport::new(config, ctx);
    report.sim = Some(sim);
    write_json(&config.out.join("report.json"), &report)?;
    Ok(report)
}

pub fn simulate(spec: &DgpSpec, samples: usize, seed: u64) -> Result<SimReport, CausalError> {
    let collider = verify_selection_collider(spec)?;
    let recoverability = check_recoverability(spec)?;
    let backdoor = adjustment_table(spec)?;
    let sampling = if samples > 0 {
        let exact = enumerate_joint(spec)?;
        let empirical = sample(spec, samples, seed)?.empirical()?;
        Some(SamplingCheck {
            n: samples,
            seed,
            total_variation: exact.total_variation(&empirical),
        })
    } else {
        None
    };
    Ok(SimReport {
        spec_name: spec.name.clone(),
        dependent_under_selection: collider.dependent_under_selection,
        recoverable: recoverability.recoverable,
        collider,
        recoverability,
        backdoor,
        sampling,
    })
}

pub async fn run_experiment(config: &ExperimentConfig, ctx: &RunContext) -> Result<ExperimentReport, RunError> {
    match config.experiment {
        ExperimentKind::MgtDate | ExperimentKind::MgtPlace | ExperimentKind::Custom => {
            run_mgt_experiment(config, ctx).await
        }
        ExperimentKind::Winogender => run_winogender_experiment(config, ctx).await,
        ExperimentKind::Sim => run_sim(config, ctx),
    }
}

#[derive(Serialize)]
struct PlotRow<'a> {
    w_index: usize,
    w_value: &'a str,
    female_mass: f64,
    male_mass: f64,
    female_share: Option<f64>,
    fit_lower: f64,
    fit_fitted: f64,
    fit_upper: f64,
}

#[derive(Serialize)]
struct SeriesRow<'a> {
    w_index: usize,
    w_value: &'a str,
    female_mass: f64,
    male_mass: f64,
    female_share: Option<f64>,
    n_prompts: usize,
    n_missing: usize,
}

#[derive(Serialize)]
struct WinogenderRow<'a> {
    occupation: &'a str,
    pct_female: f64,
    sentence_id: usize,
    coref_target: &'a str,
    participant: &'a str,
    participant_word: &'a str,
    n_points: usize,
    uncertainty: f64,
    basis: &'a str,
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}

/// Writes via a temporary file in the same directory and a rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| RunError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| RunError::io(path, e))?;
    tmp.persist(path).map_err(|e| RunError::io(path, e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn write_series_csv(dir: &Path, summary: &SeriesSummary) -> Result<(), RunError> {
    let rows = summary.points.iter().map(|p| SeriesRow {
        w_index: p.w_index,
        w_value: &p.w_value,
        female_mass: p.female_mass,
        male_mass: p.male_mass,
        female_share: p.female_share(),
        n_prompts: p.n_prompts,
        n_missing: p.n_missing,
    });
    write_atomic(&dir.join("series.csv"), &csv_bytes(rows))
}

fn plot_rows<'a>(points: &'a [GenderMassPoint], fit: &'a FitSummary) -> impl Iterator<Item = PlotRow<'a>> {
    points.iter().zip(&fit.ci95_band).map(|(p, b)| PlotRow {
        w_index: p.w_index,
        w_value: &p.w_value,
        female_mass: p.female_mass,
        male_mass: p.male_mass,
        female_share: p.female_share(),
        fit_lower: b.lower,
        fit_fitted: b.fitted,
        fit_upper: b.upper,
    })
}

/// Writes figure-shaped data: `series_female.csv` and `series_male.csv`
/// for axis experiments, `winogender_uncertainty.csv` for Winogender runs.
/// Fails without writing anything when the report holds neither.
pub fn emit_plot_data(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    if let Some(s) = &report.series {
        files.push((
            dir.join("series_female.csv"),
            csv_bytes(plot_rows(&s.points, &s.fits.female)),
        ));
        files.push((
            dir.join("series_male.csv"),
            csv_bytes(plot_rows(&s.points, &s.fits.male)),
        ));
    }
    if let Some(scores) = &report.winogender {
        if !scores.is_empty() {
            let rows = scores.iter().map(|s| WinogenderRow {
                occupation: &s.occupation,
                pct_female: s.pct_female,
                sentence_id: s.sentence_id,
                coref_target: &s.coref_target,
                participant: s.participant.as_str(),
                participant_word: &s.participant_word,
                n_points: s.n_points,
                uncertainty: s.uncertainty.value,
                basis: s.uncertainty.basis.as_str(),
            });
            files.push((dir.join("winogender_uncertainty.csv"), csv_bytes(rows)));
        }
    }
    if files.is_empty() {
        return Err(RunError::Usage("report has no series to plot".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    for (path, bytes) in &files {
        write_atomic(path, bytes)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_every_field() {
        let base = ExperimentConfig::new(ExperimentKind::MgtDate, "out");
        let h = base.hash();
        assert_eq!(h, base.clone().hash());
        let mut variants = Vec::new();
        let mut c = base.clone();
        c.seed = 1;
        variants.push(c);
        let mut c = base.clone();
        c.top_k = 4;
        variants.push(c);
        let mut c = base.clone();
        c.basis = Basis::Raw;
        variants.push(c);
        let mut c = base.clone();
        c.synthetic.female_base = 0.3;
        variants.push(c);
        let mut c = base.clone();
        c.retry.max_retries = 1;
        variants.push(c);
        let mut c = base.clone();
        c.backend.mask_token = "<mask>".into();
        variants.push(c);
        for v in variants {
            assert_ne!(v.hash(), h);
        }
    }

    #[test]
    fn basis_parsing() {
        assert_eq!("share".parse::<Basis>().unwrap(), Basis::Share);
        assert_eq!("raw".parse::<Basis>().unwrap(), Basis::Raw);
        assert!("bits".parse::<Basis>().is_err());
        assert_eq!(Basis::Share.male(), Response::MaleShare);
    }

    #[test]
    fn context_prefers_source_date_epoch() {
        let ctx = RunContext::fixed("2020-01-01T00:00:00Z");
        assert_eq!(ctx.timestamp, "2020-01-01T00:00:00Z");
        let t = chrono::DateTime::from_timestamp(1_600_000_000, 0).unwrap();
        assert_eq!(
            t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            "2020-09-13T12:26:40Z"
        );
    }

    #[test]
    fn exit_codes() {
        assert_eq!(RunError::Usage("x".into()).exit_code(), 2);
        assert_eq!(
            RunError::Backend(BackendError::Transport { message: "x".into() }).exit_code(),
            1
        );
        let v = CausalError::Validation {
            pointer: "/a".into(),
            message: "b".into(),
        };
        assert_eq!(
            RunError::Causal {
                path: "p".into(),
                source: v
            }
            .exit_code(),
            2
        );
    }
}
