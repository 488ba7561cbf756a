//! End-to-end runs: prompts, traces, retrieval, evaluation and reports.
//!
//! A benchmark run has two phases. Traces for every query are generated on a
//! worker pool of `parallelism` threads (the gateway's in-flight ceiling is a
//! second bound). After all traces are in, target descriptions are embedded,
//! ranked and scored in `query_id` order on one thread.

mod cache;
mod config;
mod store_builder;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

pub use cache::{CacheEntry, FileCache};
pub use config::{Ablation, BackendKind, FailPolicy, Mode, ProviderKind, RunConfig, MAX_PARALLELISM};
pub use store_builder::{build_store, load_items, GalleryItem};

use crate::embedding::{
    embed_text, load_store, EmbeddingProvider, HttpEmbeddingConfig, HttpEmbeddingProvider,
    MockProvider,
};
use crate::error::QueryFailure;
use crate::evaluation::{
    check_against_gallery, evaluate_run, load_manifest, MetricReport, MetricSpec, QueryRankings,
    QueryRecord, RunInfo,
};
use crate::gateway::{
    FixtureBackend, Gateway, MllmBackend, OpenAiChatBackend, OpenAiChatConfig, ReasoningTrace,
    ResponseCache, TwoStagePrompts,
};
use crate::index::{Gallery, RetrievalResult, ScoredCandidate, SearchConfig};
use crate::prompting::{
    assemble_prompt, default_samples, load_icl_file, BenchmarkTask, CotTemplate, IclSample,
    ManipulationText, ReferenceImage, StepKind, TaskVariant,
};
use crate::CirError;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";
pub const TRACE_LOG: &str = "traces.jsonl";

/// Ranking entries kept per query in the trace log.
pub const TRACE_LOG_HEAD: usize = 10;

/// Everything needed to answer queries, built once per run.
pub struct Session {
    config: RunConfig,
    gateway: Gateway,
    provider: Arc<dyn EmbeddingProvider>,
    gallery: Gallery,
    template: CotTemplate,
    samples: Vec<IclSample>,
    two_stage: TwoStagePrompts,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: MetricReport,
    pub run_dir: PathBuf,
    pub failures: Vec<QueryFailure>,
}

#[derive(Debug, Clone)]
pub struct ComposeOutput {
    pub trace: ReasoningTrace,
    pub result: RetrievalResult,
}

#[derive(Serialize)]
struct TraceLogLine<'a> {
    query_id: &'a str,
    task: BenchmarkTask,
    mode: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<&'a ReasoningTrace>,
    ranking: &'a [ScoredCandidate],
    #[serde(skip_serializing_if = "Option::is_none")]
    subset_ranking: Option<&'a [ScoredCandidate]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl Session {
    /// Builds the backend and provider named by the config.
    pub fn open(config: RunConfig) -> Result<Self, CirError> {
        let backend = backend_from_config(&config)?;
        let provider = provider_from_config(&config)?;
        Self::with_components(config, backend, provider)
    }

    pub fn with_components(
        config: RunConfig,
        backend: Arc<dyn MllmBackend>,
        provider: Arc<dyn EmbeddingProvider>,
    ) -> Result<Self, CirError> {
        config.validate()?;
        if provider.name() != config.provider_name {
            return Err(CirError::Config(format!(
                "provider is `{}`, config names `{}`",
                provider.name(),
                config.provider_name
            )));
        }

        let mut gateway = Gateway::new(backend, config.generation_config())?;
        if let Some(dir) = &config.cache_dir {
            let cache: Arc<dyn ResponseCache> =
                Arc::new(FileCache::open(dir).map_err(crate::gateway::GatewayError::from)?);
            gateway = gateway.with_cache(cache);
        }

        let store = load_store(&config.gallery_store_path)?;
        if store.provider != config.provider_name {
            return Err(CirError::Config(format!(
                "gallery store was built with `{}`, config names `{}`",
                store.provider, config.provider_name
            )));
        }
        if store.dim != provider.dim() {
            return Err(CirError::Config(format!(
                "gallery store has dimension {}, provider has {}",
                store.dim,
                provider.dim()
            )));
        }
        let gallery = Gallery::from_store(&store)?;

        let mut template = match &config.template_path {
            Some(path) => CotTemplate::from_file(path)?,
            None => CotTemplate::default_template(),
        };
        for ablation in &config.ablation {
            let step = match ablation {
                Ablation::NoOriginalDescription => StepKind::OriginalImageDescription,
                Ablation::NoThoughts => StepKind::Thoughts,
                Ablation::NoReflections => StepKind::Reflections,
                Ablation::NoIcl => continue,
            };
            template = template.without_step(step)?;
        }
        let samples = if config.ablation.contains(&Ablation::NoIcl) {
            Vec::new()
        } else {
            match &config.icl_path {
                Some(path) => load_icl_file(path)?,
                None => default_samples(),
            }
        };
        let mut two_stage = TwoStagePrompts::default();
        if let Some(path) = &config.caption_prompt_path {
            two_stage.caption_prompt = read_text(path)?.trim().to_string();
        }
        if let Some(path) = &config.modify_prompt_path {
            two_stage.modify_template = read_text(path)?.trim().to_string();
        }
        two_stage.validate()?;

        Ok(Self {
            config,
            gateway,
            provider,
            gallery,
            template,
            samples,
            two_stage,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn gallery(&self) -> &Gallery {
        &self.gallery
    }

    /// Template after ablations.
    pub fn template(&self) -> &CotTemplate {
        &self.template
    }

    /// Reasoning trace for one reference image and manipulation text.
    pub fn trace_for(
        &self,
        image: &ReferenceImage,
        manipulation: &str,
        task: BenchmarkTask,
    ) -> Result<ReasoningTrace, CirError> {
        match self.config.mode {
            Mode::Onestage => {
                let text = ManipulationText::new(manipulation)?;
                let bundle = assemble_prompt(
                    &self.template,
                    &self.samples,
                    image,
                    &text,
                    &TaskVariant::from(task),
                )?;
                Ok(self.gateway.generate_trace(&bundle)?)
            }
            Mode::Twostage => Ok(self
                .gateway
                .two_stage_generate(image, manipulation, &self.two_stage)?),
        }
    }

    /// Gallery ranking for a target description.
    pub fn retrieve(&self, description: &str, k: usize) -> Result<RetrievalResult, CirError> {
        let query = embed_text(self.provider.as_ref(), description)?;
        Ok(self.gallery.top_k_with(&query, k, SearchConfig::default())?)
    }

    pub fn compose(
        &self,
        image_path: &Path,
        manipulation: &str,
        k: usize,
    ) -> Result<ComposeOutput, CirError> {
        let id = image_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        let image = ReferenceImage::from_file(id, image_path);
        image.resolve_bytes()?;
        let trace = self.trace_for(&image, manipulation, BenchmarkTask::General)?;
        let result = self.retrieve(&trace.target_image_description, k)?;
        Ok(ComposeOutput { trace, result })
    }

    fn spec_for(&self, task: BenchmarkTask) -> MetricSpec {
        let spec = MetricSpec::for_task(task);
        match &self.config.k_list {
            Some(ks) => spec.with_ks(ks),
            None => spec,
        }
    }

    fn generate_all(
        &self,
        records: &[QueryRecord],
        images: &HashMap<String, PathBuf>,
    ) -> Result<Vec<Result<ReasoningTrace, CirError>>, CirError> {
        let one = |r: &QueryRecord| {
            let path = images.get(&r.reference_image_id).ok_or_else(|| {
                CirError::Config(format!(
                    "no reference image `{}` in the image directory",
                    r.reference_image_id
                ))
            })?;
            let image = ReferenceImage::from_file(r.reference_image_id.clone(), path);
            self.trace_for(&image, &r.manipulation_text, r.task)
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.config.parallelism)
                .build()
                .map_err(|e| CirError::Config(format!("cannot start worker pool: {e}")))?;
            Ok(pool.install(|| records.par_iter().map(one).collect()))
        }
        #[cfg(not(feature = "parallel"))]
        {
            Ok(records.iter().map(one).collect())
        }
    }

    fn rank_record(
        &self,
        record: &QueryRecord,
        trace: &ReasoningTrace,
        depth: usize,
    ) -> Result<(RetrievalResult, Option<RetrievalResult>), CirError> {
        let query = embed_text(self.provider.as_ref(), &trace.target_image_description)?;
        let full = self
            .gallery
            .top_k_with(&query, depth, SearchConfig::default())?;
        let subset = match &record.subset_ids {
            Some(ids) => Some(self.gallery.rank_subset(&query, ids)?),
            None => None,
        };
        Ok((full, subset))
    }

    /// Runs every manifest query, writes the report files and returns the
    /// report.
    pub fn run_benchmark(&self) -> Result<RunOutcome, CirError> {
        let manifest_path = self
            .config
            .manifest_path
            .as_ref()
            .ok_or_else(|| CirError::Config("manifest_path is not set".into()))?;
        let mut records = load_manifest(manifest_path)?;
        records.sort_by(|a, b| a.query_id.cmp(&b.query_id));
        check_against_gallery(&records, |id| self.gallery.contains(id))?;
        let image_dir = self
            .config
            .image_dir
            .as_ref()
            .ok_or_else(|| CirError::Config("image_dir is not set".into()))?;
        let images = index_images(image_dir)?;

        let traces = self.generate_all(&records, &images)?;

        let depth = records
            .iter()
            .map(|r| self.spec_for(r.task).depth())
            .max()
            .unwrap_or(1)
            .max(TRACE_LOG_HEAD);
        let mut failures = Vec::new();
        let mut rankings = BTreeMap::new();
        let mut log = String::new();
        for (record, trace) in records.iter().zip(traces) {
            let failure = |e: CirError| QueryFailure {
                query_id: record.query_id.clone(),
                message: e.to_string(),
                exit_code: e.exit_code(),
            };
            let trace = trace.map_err(failure);
            let answered = trace
                .clone()
                .and_then(|t| self.rank_record(record, &t, depth).map_err(failure));
            let ranking = match answered {
                Ok((full, subset)) => {
                    push_log_line(
                        &mut log,
                        record,
                        self.config.mode,
                        trace.as_ref().ok(),
                        &full.ranked[..full.ranked.len().min(TRACE_LOG_HEAD)],
                        subset.as_ref().map(|s| s.ranked.as_slice()),
                        None,
                    );
                    QueryRankings::new(
                        full.ids().into_iter().map(String::from).collect(),
                        subset.map(|s| s.ids().into_iter().map(String::from).collect()),
                    )
                }
                Err(f) => {
                    push_log_line(
                        &mut log,
                        record,
                        self.config.mode,
                        trace.as_ref().ok(),
                        &[],
                        None,
                        Some(f.message.clone()),
                    );
                    failures.push(f);
                    QueryRankings::miss()
                }
            };
            rankings.insert(record.query_id.clone(), ranking);
        }

        if !failures.is_empty() && self.config.fail_policy == FailPolicy::Abort {
            return Err(CirError::QueryFailures(failures));
        }

        let report = evaluate_run(
            &records,
            &rankings,
            |t| self.spec_for(t),
            RunInfo {
                run_id: self.config.run_id.clone(),
                provider: self.config.provider_name.clone(),
                backend: self.config.backend_name.clone(),
                mode: self.config.mode.as_str().to_string(),
            },
        )?;

        let run_dir = self.config.run_dir();
        std::fs::create_dir_all(&run_dir).map_err(|e| CirError::io(&run_dir, e))?;
        for (name, body) in [
            (REPORT_JSON, report.to_json()),
            (REPORT_TABLE, report.to_table()),
            (TRACE_LOG, log),
        ] {
            let path = run_dir.join(name);
            std::fs::write(&path, body).map_err(|e| CirError::io(&path, e))?;
        }
        Ok(RunOutcome {
            report,
            run_dir,
            failures,
        })
    }
}

fn push_log_line(
    log: &mut String,
    record: &QueryRecord,
    mode: Mode,
    trace: Option<&ReasoningTrace>,
    ranking: &[ScoredCandidate],
    subset_ranking: Option<&[ScoredCandidate]>,
    error: Option<String>,
) {
    let line = TraceLogLine {
        query_id: &record.query_id,
        task: record.task,
        mode: mode.as_str(),
        trace,
        ranking,
        subset_ranking,
        error,
    };
    log.push_str(&serde_json::to_string(&line).expect("log line serializes"));
    log.push('\n');
}

impl ComposeOutput {
    /// The four trace fields followed by the ranking table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (step, value) in StepKind::ALL.iter().zip(self.trace.fields()) {
            let _ = writeln!(out, "{}: {}", step.header(), value);
        }
        let width = self
            .result
            .ranked
            .iter()
            .map(|c| c.id.len())
            .max()
            .unwrap_or(2)
            .max(2);
        let _ = writeln!(out, "\n{:>4}  {:<width$}  {:>7}", "rank", "id", "score");
        for (i, c) in self.result.ranked.iter().enumerate() {
            let _ = writeln!(out, "{:>4}  {:<width$}  {:>7.4}", i + 1, c.id, c.score);
        }
        out
    }
}

/// Reads and runs a benchmark from a config, with adapters from the config.
pub fn run_benchmark(config: RunConfig) -> Result<MetricReport, CirError> {
    Ok(Session::open(config)?.run_benchmark()?.report)
}

pub fn compose_once(
    config: RunConfig,
    image_path: &Path,
    manipulation: &str,
    k: usize,
) -> Result<ComposeOutput, CirError> {
    Session::open(config)?.compose(image_path, manipulation, k)
}

pub fn backend_from_config(config: &RunConfig) -> Result<Arc<dyn MllmBackend>, CirError> {
    Ok(match config.backend_kind {
        BackendKind::Fixture => {
            let path = config
                .backend_fixture
                .as_ref()
                .ok_or_else(|| CirError::Config("backend_fixture is not set".into()))?;
            Arc::new(FixtureBackend::from_file(config.backend_name.clone(), path)?)
        }
        BackendKind::OpenaiChat => Arc::new(OpenAiChatBackend::new(OpenAiChatConfig {
            name: config.backend_name.clone(),
            endpoint: config.backend_endpoint.clone().unwrap_or_default(),
            model: config.backend_model.clone().unwrap_or_default(),
            api_key_env: config.backend_api_key_env.clone().unwrap_or_default(),
            timeout: config.generation_config().timeout,
        })?),
    })
}

pub fn provider_from_config(config: &RunConfig) -> Result<Arc<dyn EmbeddingProvider>, CirError> {
    let dim = config
        .provider_dim
        .ok_or_else(|| CirError::Config("provider_dim is not set".into()))?;
    Ok(match config.provider_kind {
        ProviderKind::Mock => Arc::new(MockProvider::new(config.provider_name.clone(), dim)),
        ProviderKind::Http => Arc::new(HttpEmbeddingProvider::new(HttpEmbeddingConfig {
            name: config.provider_name.clone(),
            endpoint: config.provider_endpoint.clone().unwrap_or_default(),
            model: config.provider_model.clone().unwrap_or_default(),
            dim,
            api_key_env: config.provider_api_key_env.clone().unwrap_or_default(),
            timeout: config.generation_config().timeout,
        })?),
    })
}

fn read_text(path: &Path) -> Result<String, CirError> {
    std::fs::read_to_string(path).map_err(|e| CirError::io(path, e))
}

/// Image files in `dir` keyed by file stem.
pub fn index_images(dir: &Path) -> Result<HashMap<String, PathBuf>, CirError> {
    let mut out = HashMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| CirError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CirError::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(previous) = out.insert(stem.to_string(), path.clone()) {
            return Err(CirError::Config(format!(
                "image id `{stem}` matches both {} and {}",
                previous.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}
