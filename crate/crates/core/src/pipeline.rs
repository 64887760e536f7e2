//! End-to-end captioning run: read records, filter, then per image
//! debias, derive, bag, prompt and fuse, writing a sharded manifest.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bow::{assemble_bow, PhraseTable};
use crate::config::{ConfigError, PipelineConfig};
use crate::dataset::{DatasetError, DatasetManifest, ManifestEntry, ManifestWriter, Seeds};
use crate::debias::apply_debias_flags;
use crate::derive::{derive_attributes, sample_age_phrase, DeriveError};
use crate::filter::{check_image, compute_crop, estimate_alignment, DatasetProfile, FilterReason, FilterVerdict, GeometryError};
use crate::fusion::{build_prompt, fuse_captions, CompletionBackend, FusionError, HttpChatClient, MockBackend};
use crate::schema::{parse_record, AttributeRecord, SchemaError, VOCABULARY_VERSION};
use crate::seed::{image_rng, STREAM_PIPELINE};

pub const RUN_META_FILE: &str = "run_meta.json";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {error}")]
    BadRecord {
        path: PathBuf,
        line: usize,
        error: SchemaError,
    },
    #[error("{path} line {line}: duplicate image_id `{image_id}`")]
    DuplicateInput {
        path: PathBuf,
        line: usize,
        image_id: String,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("run aborted after {written} entries: {source}")]
    Aborted {
        written: usize,
        #[source]
        source: FusionError,
    },
    #[error("existing run in {0} used a different configuration")]
    ConfigMismatch(PathBuf),
}

impl PipelineError {
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config_error",
            PipelineError::Io { .. } => "io_error",
            PipelineError::BadRecord { .. } => "bad_record",
            PipelineError::DuplicateInput { .. } => "duplicate_image_id",
            PipelineError::Dataset(e) => e.kind(),
            PipelineError::Aborted { source, .. } => source.kind(),
            PipelineError::ConfigMismatch(_) => "config_mismatch",
        }
    }
}

/// Why a single accepted image produced no manifest entry.
#[derive(Debug, thiserror::Error)]
pub enum ItemError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Derive(#[from] DeriveError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

impl ItemError {
    /// Service-level failures stop the whole run; everything else is
    /// recorded against the image.
    fn is_fatal(&self) -> bool {
        matches!(
            self,
            ItemError::Fusion(FusionError::ServiceUnreachable { .. } | FusionError::ServiceError { .. })
        )
    }
}

/// Reads a JSONL file of attribute records. Blank lines are skipped; the
/// first invalid line aborts with its 1-based line number.
pub fn read_records(path: &Path) -> Result<Vec<AttributeRecord>, PipelineError> {
    let io = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    let f = fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record(&line).map_err(|error| PipelineError::BadRecord {
            path: path.to_path_buf(),
            line: i + 1,
            error,
        })?;
        if !seen.insert(record.image_id.clone()) {
            return Err(PipelineError::DuplicateInput {
                path: path.to_path_buf(),
                line: i + 1,
                image_id: record.image_id,
            });
        }
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictLine {
    pub image_id: String,
    #[serde(flatten)]
    pub verdict: FilterVerdict,
}

pub fn filter_records(
    records: &[AttributeRecord],
    profile: &DatasetProfile,
) -> (Vec<VerdictLine>, BTreeMap<FilterReason, u64>) {
    let mut counts = BTreeMap::new();
    let verdicts = records
        .iter()
        .map(|r| {
            let verdict = check_image(r, profile);
            *counts.entry(verdict.reason).or_insert(0) += 1;
            VerdictLine {
                image_id: r.image_id.clone(),
                verdict,
            }
        })
        .collect();
    (verdicts, counts)
}

/// Everything needed to turn one accepted record into a manifest entry.
pub struct Processor<'a> {
    pub config: &'a PipelineConfig,
    pub backend: &'a dyn CompletionBackend,
    pub phrases: &'a PhraseTable,
}

impl Processor<'_> {
    /// Deterministic in the record and the global seed (given a
    /// deterministic backend). The order of draws is fixed: debias, age,
    /// bag seed, then caption sampling.
    pub fn process(&self, record: &AttributeRecord) -> Result<ManifestEntry, ItemError> {
        let cfg = self.config;
        let seeds = Seeds::for_image(cfg.global_seed, &record.image_id);
        let mut rng = image_rng(seeds.per_image, STREAM_PIPELINE);

        let bbox = record
            .detection
            .bbox
            .as_ref()
            .expect("accepted records carry a face box");
        let crop_rect = compute_crop(bbox, record.image_size, cfg.crop.margin)?;
        let alignment = match (&record.detection.landmarks, cfg.crop.align) {
            (Some(lm), true) => Some(estimate_alignment(lm, &cfg.crop.template)?),
            _ => None,
        };

        let (flags, dropped_labels) = apply_debias_flags(&record.attributes, &cfg.debias.rules, &mut rng);
        let debiased = AttributeRecord {
            attributes: flags,
            ..record.clone()
        };
        let derived = derive_attributes(&record.emotions, &record.parsing, &cfg.derive)?;
        let age_phrase = sample_age_phrase(
            record.demographics.age_pred,
            &cfg.derive.age_categories,
            &mut rng,
        );
        let bag = assemble_bow(&debiased, &derived, &age_phrase, rng.next_u64(), self.phrases);
        let prompt = build_prompt(&bag)?;
        let caption_set = fuse_captions(
            &record.image_id,
            &prompt,
            cfg.fusion.captions_per_image,
            cfg.fusion.attempt_budget(),
            self.backend,
            &mut rng,
        )?;

        Ok(ManifestEntry {
            image_id: record.image_id.clone(),
            image_path: cfg.output.image_path_template.replace("{image_id}", &record.image_id),
            crop_rect,
            alignment,
            source_dataset: record.source_dataset,
            attribute_record: record.clone(),
            derived,
            age_phrase,
            bag_of_words: bag,
            caption_set,
            dropped_labels,
            seeds,
            pipeline_version: env!("CARGO_PKG_VERSION").to_string(),
            phrase_table_version: self.phrases.version.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub tool_version: String,
    pub config_hash: String,
    pub global_seed: u64,
    pub vocabulary_version: String,
    pub phrase_table_version: String,
    pub llm_model_id: String,
    pub input_count: u64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub resume: bool,
    /// Stop after this many new entries (the index is still finalized).
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub input_count: u64,
    pub counts: BTreeMap<FilterReason, u64>,
    pub already_present: usize,
    pub written: usize,
    pub failed: BTreeMap<String, String>,
    /// Accepted images left for a later `--resume`.
    pub remaining: usize,
    pub incomplete_caption_sets: usize,
}

impl RunSummary {
    pub fn is_partial(&self) -> bool {
        !self.failed.is_empty()
    }
}

pub fn make_backend(config: &PipelineConfig) -> Box<dyn CompletionBackend> {
    if config.fusion.mock {
        Box::new(MockBackend)
    } else {
        Box::new(HttpChatClient::new(config.fusion.http_client_config()))
    }
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let io = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    let text = serde_json::to_string_pretty(value).expect("serializable");
    f.write_all(text.as_bytes()).map_err(io)?;
    f.write_all(b"\n").map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// Runs the captioning pipeline over `records_path`, writing to `out`.
pub fn run(
    config: &PipelineConfig,
    records_path: &Path,
    out: &Path,
    options: &RunOptions,
    backend: &dyn CompletionBackend,
) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let records = read_records(records_path)?;
    let profile = config.profile.resolve();
    let (verdicts, counts) = filter_records(&records, &profile);

    fs::create_dir_all(out).map_err(|source| PipelineError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let phrases = PhraseTable::builtin();
    let meta = RunMeta {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.config_hash(),
        global_seed: config.global_seed,
        vocabulary_version: VOCABULARY_VERSION.to_string(),
        phrase_table_version: phrases.version.clone(),
        llm_model_id: backend.model_id().to_string(),
        input_count: records.len() as u64,
    };
    let meta_path = out.join(RUN_META_FILE);
    if options.resume && meta_path.is_file() {
        let previous: Option<RunMeta> = fs::read_to_string(&meta_path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        if previous.as_ref() != Some(&meta) {
            return Err(PipelineError::ConfigMismatch(out.to_path_buf()));
        }
    }

    let shard_size = config.output.shard_size;
    let mut writer = if options.resume {
        ManifestWriter::resume(out, config.global_seed, shard_size)?
    } else {
        if DatasetManifest::exists(out) {
            return Err(DatasetError::ManifestExists(out.to_path_buf()).into());
        }
        ManifestWriter::create(out, config.global_seed, shard_size)?
    };
    write_json_atomic(&meta_path, &meta)?;
    writer.set_profile(profile);
    writer.set_counts(counts.clone(), records.len() as u64);

    let accepted: Vec<&AttributeRecord> = records
        .iter()
        .zip(&verdicts)
        .filter(|(_, v)| v.verdict.accepted)
        .map(|(r, _)| r)
        .collect();
    let pending: Vec<&AttributeRecord> = accepted
        .iter()
        .copied()
        .filter(|r| !writer.contains(&r.image_id))
        .collect();
    let already_present = accepted.len() - pending.len();
    let budget = options.limit.unwrap_or(usize::MAX).min(pending.len());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.concurrency)
        .build()
        .expect("thread pool");
    let processor = Processor {
        config,
        backend,
        phrases,
    };

    let mut summary = RunSummary {
        input_count: records.len() as u64,
        counts,
        already_present,
        written: 0,
        failed: BTreeMap::new(),
        remaining: 0,
        incomplete_caption_sets: 0,
    };
    let chunk = (config.concurrency * 4).max(1);
    let mut done = 0;
    for batch in pending[..budget].chunks(chunk) {
        let results: Vec<Result<ManifestEntry, ItemError>> =
            pool.install(|| batch.par_iter().map(|r| processor.process(r)).collect());
        for (record, result) in batch.iter().zip(results) {
            match result {
                Ok(entry) => {
                    summary.incomplete_caption_sets += usize::from(entry.caption_set.incomplete);
                    writer.push(&entry)?;
                    summary.written += 1;
                }
                Err(e) if e.is_fatal() => {
                    let written = summary.written;
                    writer.finish()?;
                    let ItemError::Fusion(source) = e else { unreachable!() };
                    return Err(PipelineError::Aborted { written, source });
                }
                Err(e) => {
                    log::warn!("{}: {e}", record.image_id);
                    writer.record_failure(&record.image_id, e.to_string());
                    summary.failed.insert(record.image_id.clone(), e.to_string());
                }
            }
            done += 1;
        }
        log::info!("processed {done}/{budget}");
    }
    summary.remaining = pending.len() - budget;
    writer.finish()?;
    Ok(summary)
}
