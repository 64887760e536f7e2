//! Sharded JSONL manifests.
//!
//! Layout under a manifest root:
//!
//! ```text
//! shard-00000.jsonl   one ManifestEntry per line
//! shard-00001.jsonl
//! index.json          DatasetManifest: shard list, id -> location, counts
//! ```
//!
//! Shards and the index are written to a temporary name and renamed into
//! place. The index is rewritten after every completed shard and once more
//! at the end, so an interrupted run always leaves a consistent prefix that
//! a resumed run can extend.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bow::BagOfWords;
use crate::debias::{ConditionalPair, CooccurrenceCounter, CooccurrenceReport};
use crate::derive::{AgeCategories, AgePhrase, DerivedAttributes};
use crate::filter::{CropRect, DatasetProfile, FilterReason, SimilarityTransform};
use crate::fusion::CaptionSet;
use crate::schema::{Attribute, AttributeRecord, SourceDataset, Vocabulary};
use crate::seed::{image_rng, per_image_seed, STREAM_EXPORT};

pub const INDEX_FILE: &str = "index.json";
pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_SHARD_SIZE: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate image_id `{0}`")]
    DuplicateImageId(String),
    #[error("corrupt manifest index: {0}")]
    CorruptIndex(String),
    #[error("corrupt shard {path} line {line}: {message}")]
    CorruptShard {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0} already holds a manifest; resume it or choose another output directory")]
    ManifestExists(PathBuf),
    #[error("manifest has no entries")]
    EmptyManifest,
    #[error("entry `{0}` has an empty caption set")]
    EmptyCaptionSet(String),
}

impl DatasetError {
    pub fn kind(&self) -> &'static str {
        match self {
            DatasetError::Io { .. } => "io_error",
            DatasetError::DuplicateImageId(_) => "duplicate_image_id",
            DatasetError::CorruptIndex(_) => "corrupt_index",
            DatasetError::CorruptShard { .. } => "corrupt_shard",
            DatasetError::ManifestExists(_) => "manifest_exists",
            DatasetError::EmptyManifest => "empty_manifest",
            DatasetError::EmptyCaptionSet(_) => "empty_caption_set",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub global: u64,
    pub per_image: u64,
}

impl Seeds {
    pub fn for_image(global: u64, image_id: &str) -> Self {
        Self {
            global,
            per_image: per_image_seed(global, image_id),
        }
    }
}

/// Everything produced for one accepted image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub image_path: String,
    pub crop_rect: CropRect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<SimilarityTransform>,
    pub source_dataset: SourceDataset,
    /// Raw extraction output, before any label dropping.
    pub attribute_record: AttributeRecord,
    pub derived: DerivedAttributes,
    pub age_phrase: AgePhrase,
    pub bag_of_words: BagOfWords,
    pub caption_set: CaptionSet,
    pub dropped_labels: Vec<Attribute>,
    pub seeds: Seeds,
    pub pipeline_version: String,
    pub phrase_table_version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryLocation {
    pub shard: usize,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub file: String,
    pub entries: usize,
}

/// Contents of `index.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub pipeline_version: String,
    pub global_seed: u64,
    pub shard_size: usize,
    pub profile: Option<DatasetProfile>,
    pub shards: Vec<ShardInfo>,
    pub index: BTreeMap<String, EntryLocation>,
    /// Filter verdict tallies over the whole input; only non-zero reasons.
    pub counts: BTreeMap<FilterReason, u64>,
    pub input_count: u64,
    /// Accepted images that could not be captioned, with the error.
    pub failed: BTreeMap<String, String>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    fn empty(root: &Path, global_seed: u64, shard_size: usize) -> Self {
        Self {
            format_version: MANIFEST_FORMAT_VERSION,
            pipeline_version: env!("CARGO_PKG_VERSION").to_string(),
            global_seed,
            shard_size,
            profile: None,
            shards: Vec::new(),
            index: BTreeMap::new(),
            counts: BTreeMap::new(),
            input_count: 0,
            failed: BTreeMap::new(),
            root: root.to_path_buf(),
        }
    }

    pub fn exists(root: &Path) -> bool {
        root.join(INDEX_FILE).is_file()
    }

    pub fn load(root: &Path) -> Result<Self, DatasetError> {
        let path = root.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| DatasetError::CorruptIndex(format!("{}: {e}", path.display())))?;
        m.root = root.to_path_buf();
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<(), DatasetError> {
        if self.format_version != MANIFEST_FORMAT_VERSION {
            return Err(DatasetError::CorruptIndex(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        let listed: usize = self.shards.iter().map(|s| s.entries).sum();
        if listed != self.index.len() {
            return Err(DatasetError::CorruptIndex(format!(
                "shards list {listed} entries but index has {}",
                self.index.len()
            )));
        }
        for (id, loc) in &self.index {
            let ok = self
                .shards
                .get(loc.shard)
                .is_some_and(|s| loc.line < s.entries);
            if !ok {
                return Err(DatasetError::CorruptIndex(format!(
                    "`{id}` points outside the shard list"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.index.contains_key(image_id)
    }

    pub fn shard_path(&self, shard: usize) -> PathBuf {
        self.root.join(&self.shards[shard].file)
    }

    /// Reads every entry, in shard then line order.
    pub fn read_all(&self) -> Result<Vec<ManifestEntry>, DatasetError> {
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.shards.len() {
            out.extend(read_shard(&self.shard_path(i))?);
        }
        Ok(out)
    }

    fn write_index(&self) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(self).expect("manifest index serializes");
        write_atomic(&self.root.join(INDEX_FILE), text.as_bytes())
    }
}

fn shard_file_name(i: usize) -> String {
    format!("shard-{i:05}.jsonl")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_shard(path: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| DatasetError::CorruptShard {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}

/// Streams entries into shards of at most `shard_size` lines.
pub struct ManifestWriter {
    manifest: DatasetManifest,
    pending: Vec<String>,
    pending_ids: Vec<String>,
}

impl ManifestWriter {
    /// Starts a new manifest in `root`, which must not already hold one.
    pub fn create(root: &Path, global_seed: u64, shard_size: usize) -> Result<Self, DatasetError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        if DatasetManifest::exists(root) {
            return Err(DatasetError::ManifestExists(root.to_path_buf()));
        }
        Ok(Self {
            manifest: DatasetManifest::empty(root, global_seed, shard_size.max(1)),
            pending: Vec::new(),
            pending_ids: Vec::new(),
        })
    }

    /// Reopens an existing manifest, or creates one if `root` has none.
    /// A partially filled last shard is reloaded and will be rewritten as
    /// entries are added, so shard boundaries match an uninterrupted run.
    pub fn resume(root: &Path, global_seed: u64, shard_size: usize) -> Result<Self, DatasetError> {
        if !DatasetManifest::exists(root) {
            return Self::create(root, global_seed, shard_size);
        }
        let mut manifest = DatasetManifest::load(root)?;
        if manifest.global_seed != global_seed {
            return Err(DatasetError::CorruptIndex(format!(
                "manifest was built with seed {}, not {global_seed}",
                manifest.global_seed
            )));
        }
        if manifest.shard_size != shard_size {
            return Err(DatasetError::CorruptIndex(format!(
                "manifest uses shard_size {}, not {shard_size}",
                manifest.shard_size
            )));
        }
        let mut pending = Vec::new();
        let mut pending_ids = Vec::new();
        if let Some(last) = manifest.shards.last() {
            if last.entries < manifest.shard_size {
                let i = manifest.shards.len() - 1;
                let entries = read_shard(&manifest.shard_path(i))?;
                for e in entries {
                    manifest.index.remove(&e.image_id);
                    pending_ids.push(e.image_id.clone());
                    pending.push(serde_json::to_string(&e).expect("entry serializes"));
                }
                manifest.shards.pop();
            }
        }
        let mut w = Self {
            manifest,
            pending: Vec::new(),
            pending_ids: Vec::new(),
        };
        // Re-register reloaded entries so duplicate checks see them.
        for (id, line) in pending_ids.into_iter().zip(pending) {
            w.push_line(id, line)?;
        }
        Ok(w)
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.manifest.contains(image_id) || self.pending_ids.iter().any(|p| p == image_id)
    }

    pub fn set_profile(&mut self, profile: DatasetProfile) {
        self.manifest.profile = Some(profile);
    }

    pub fn set_counts(&mut self, counts: BTreeMap<FilterReason, u64>, input_count: u64) {
        self.manifest.counts = counts;
        self.manifest.input_count = input_count;
    }

    pub fn record_failure(&mut self, image_id: &str, message: String) {
        self.manifest.failed.insert(image_id.to_string(), message);
    }

    pub fn push(&mut self, entry: &ManifestEntry) -> Result<(), DatasetError> {
        if entry.caption_set.captions.is_empty() {
            return Err(DatasetError::EmptyCaptionSet(entry.image_id.clone()));
        }
        let line = serde_json::to_string(entry).expect("entry serializes");
        self.push_line(entry.image_id.clone(), line)
    }

    fn push_line(&mut self, image_id: String, line: String) -> Result<(), DatasetError> {
        if self.contains(&image_id) {
            return Err(DatasetError::DuplicateImageId(image_id));
        }
        self.manifest.failed.remove(&image_id);
        self.pending.push(line);
        self.pending_ids.push(image_id);
        if self.pending.len() >= self.manifest.shard_size {
            self.flush_shard()?;
            self.manifest.write_index()?;
        }
        Ok(())
    }

    fn flush_shard(&mut self) -> Result<(), DatasetError> {
        if self.pending.is_empty() {
            return Ok(());
        }
        let shard = self.manifest.shards.len();
        let file = shard_file_name(shard);
        let mut body = self.pending.join("\n");
        body.push('\n');
        write_atomic(&self.manifest.root.join(&file), body.as_bytes())?;
        for (line, id) in self.pending_ids.drain(..).enumerate() {
            self.manifest.index.insert(id, EntryLocation { shard, line });
        }
        self.manifest.shards.push(ShardInfo {
            file,
            entries: self.pending.len(),
        });
        self.pending.clear();
        Ok(())
    }

    /// Writes any partial shard and the final index.
    pub fn finish(mut self) -> Result<DatasetManifest, DatasetError> {
        self.flush_shard()?;
        self.manifest.write_index()?;
        Ok(self.manifest)
    }
}

/// Writes a complete manifest from an entry stream.
pub fn write_entries<'a, I>(entries: I, root: &Path, shard_size: usize, global_seed: u64) -> Result<DatasetManifest, DatasetError>
where
    I: IntoIterator<Item = &'a ManifestEntry>,
{
    let mut w = ManifestWriter::create(root, global_seed, shard_size)?;
    let mut n = 0u64;
    for e in entries {
        w.push(e)?;
        n += 1;
    }
    w.set_counts(BTreeMap::from([(FilterReason::Ok, n)]), n);
    w.finish()
}

/// Ids not yet present in `manifest`, in input order.
pub fn resume_filter<'m, I>(ids: I, manifest: &'m DatasetManifest) -> impl Iterator<Item = String> + 'm
where
    I: IntoIterator<Item = String>,
    I::IntoIter: 'm,
{
    ids.into_iter().filter(move |id| !manifest.contains(id))
}

/// Uniformly picks one caption from the entry's set.
pub fn sample_caption<'e>(entry: &'e ManifestEntry, rng: &mut impl Rng) -> &'e str {
    entry
        .caption_set
        .captions
        .choose(rng)
        .map(String::as_str)
        .expect("manifest entries always carry at least one caption")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportMode {
    AllCaptions,
    OnePerImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportAllLine {
    pub image_path: String,
    pub captions: Vec<String>,
    pub crop_rect: CropRect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportOneLine {
    pub image_path: String,
    pub caption: String,
    pub crop_rect: CropRect,
}

fn tab_free(s: &str) -> String {
    s.replace('\t', " ")
}

/// Training pairs as JSONL. In `OnePerImage` mode the caption is sampled
/// with a generator derived from the manifest's global seed and the image
/// id, so repeated exports are identical.
pub fn export_training_manifest(
    manifest: &DatasetManifest,
    mode: ExportMode,
    out: &Path,
) -> Result<usize, DatasetError> {
    let mut body = String::new();
    let entries = manifest.read_all()?;
    for e in &entries {
        let image_path = tab_free(&e.image_path);
        let line = match mode {
            ExportMode::AllCaptions => serde_json::to_string(&ExportAllLine {
                image_path,
                captions: e.caption_set.captions.iter().map(|c| tab_free(c)).collect(),
                crop_rect: e.crop_rect,
            }),
            ExportMode::OnePerImage => {
                let mut rng = image_rng(per_image_seed(manifest.global_seed, &e.image_id), STREAM_EXPORT);
                serde_json::to_string(&ExportOneLine {
                    image_path,
                    caption: tab_free(sample_caption(e, &mut rng)),
                    crop_rect: e.crop_rect,
                })
            }
        }
        .expect("export lines serialize");
        body.push_str(&line);
        body.push('\n');
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_atomic(out, body.as_bytes())?;
    Ok(entries.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub counts: BTreeMap<String, u64>,
    pub fractions: BTreeMap<String, f64>,
}

impl Distribution {
    fn from_counts(counts: BTreeMap<String, u64>) -> Self {
        let total: u64 = counts.values().sum();
        let fractions = counts
            .iter()
            .map(|(k, v)| (k.clone(), if total == 0 { 0.0 } else { *v as f64 / total as f64 }))
            .collect();
        Self { counts, fractions }
    }
}

fn tally<I: IntoIterator<Item = String>>(keys: I) -> Distribution {
    let mut counts = BTreeMap::new();
    for k in keys {
        *counts.entry(k).or_insert(0u64) += 1;
    }
    Distribution::from_counts(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub entries: u64,
    pub input_count: u64,
    /// Fraction of entries with each raw attribute flag set.
    pub attribute_marginals: BTreeMap<String, f64>,
    pub gender: Distribution,
    pub ethnicity: Distribution,
    pub age_category: Distribution,
    /// Strongest selected emotion per entry.
    pub emotion: Distribution,
    pub cooccurrence: CooccurrenceReport,
    pub rejections: BTreeMap<FilterReason, u64>,
    pub caption_failures: u64,
    pub dropped_labels: BTreeMap<String, u64>,
    /// Caption word counts in buckets of ten words, keyed by lower bound.
    pub caption_word_histogram: BTreeMap<u32, u64>,
    pub captions_total: u64,
}

pub fn stats_report(
    manifest: &DatasetManifest,
    pairs: &[ConditionalPair],
    age_categories: &AgeCategories,
) -> Result<StatsReport, DatasetError> {
    let entries = manifest.read_all()?;
    stats_from_entries(&entries, manifest, pairs, age_categories)
}

pub fn stats_from_entries(
    entries: &[ManifestEntry],
    manifest: &DatasetManifest,
    pairs: &[ConditionalPair],
    age_categories: &AgeCategories,
) -> Result<StatsReport, DatasetError> {
    if entries.is_empty() {
        return Err(DatasetError::EmptyManifest);
    }
    let n = entries.len() as f64;
    let mut counter = CooccurrenceCounter::default();
    let mut dropped: BTreeMap<String, u64> = BTreeMap::new();
    let mut histogram: BTreeMap<u32, u64> = BTreeMap::new();
    let mut captions_total = 0u64;
    for e in entries {
        counter.add(&e.attribute_record.attributes);
        for d in &e.dropped_labels {
            *dropped.entry(d.id().to_string()).or_default() += 1;
        }
        for c in &e.caption_set.captions {
            let words = c.split_whitespace().count() as u32;
            *histogram.entry(words / 10 * 10).or_default() += 1;
            captions_total += 1;
        }
    }
    let attribute_marginals = Attribute::ALL
        .iter()
        .map(|a| (a.id().to_string(), counter.marginal(*a) as f64 / n))
        .collect();
    let demo = |f: fn(&ManifestEntry) -> String| tally(entries.iter().map(f));
    let rejections = manifest
        .counts
        .iter()
        .filter(|(r, _)| **r != FilterReason::Ok)
        .map(|(r, c)| (*r, *c))
        .collect();
    Ok(StatsReport {
        entries: entries.len() as u64,
        input_count: manifest.input_count,
        attribute_marginals,
        gender: demo(|e| e.attribute_record.demographics.gender.id().to_string()),
        ethnicity: demo(|e| e.attribute_record.demographics.ethnicity.id().to_string()),
        age_category: tally(
            entries
                .iter()
                .map(|e| age_categories.label_for(e.attribute_record.demographics.age_pred).to_string()),
        ),
        emotion: demo(|e| {
            e.derived
                .emotions_selected
                .first()
                .map_or_else(String::new, |x| x.id().to_string())
        }),
        cooccurrence: counter.report(pairs).map_err(|_| DatasetError::EmptyManifest)?,
        rejections,
        caption_failures: manifest.failed.len() as u64,
        dropped_labels: dropped,
        caption_word_histogram: histogram,
        captions_total,
    })
}

impl StatsReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let pct = |f: f64| format!("{:5.1}%", f * 100.0);
        s.push_str(&format!("entries: {} (input records: {})\n", self.entries, self.input_count));
        s.push_str("rejections:\n");
        for (r, c) in &self.rejections {
            s.push_str(&format!("  {}: {c}\n", r.as_str()));
        }
        s.push_str(&format!("caption failures: {}\n", self.caption_failures));
        for (title, d) in [
            ("gender", &self.gender),
            ("ethnicity", &self.ethnicity),
            ("age", &self.age_category),
            ("emotion", &self.emotion),
        ] {
            s.push_str(&format!("{title}:\n"));
            for (k, f) in &d.fractions {
                s.push_str(&format!("  {k:<20} {} ({})\n", pct(*f), d.counts[k]));
            }
        }
        s.push_str("attributes (share of entries):\n");
        let mut marg: Vec<_> = self.attribute_marginals.iter().filter(|(_, f)| **f > 0.0).collect();
        marg.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
        for (k, f) in marg {
            s.push_str(&format!("  {k:<20} {}\n", pct(*f)));
        }
        s.push_str("co-occurrence:\n");
        for line in self.cooccurrence.to_string().lines() {
            s.push_str(&format!("  {line}\n"));
        }
        s.push_str("dropped labels:\n");
        for (k, c) in &self.dropped_labels {
            s.push_str(&format!("  {k}: {c}\n"));
        }
        s.push_str(&format!("caption words ({} captions):\n", self.captions_total));
        for (lo, c) in &self.caption_word_histogram {
            s.push_str(&format!("  {lo:>3}-{:<3} {c}\n", lo + 9));
        }
        s
    }
}

/// Ids of all entries, used to check for duplicates across inputs.
pub fn id_set(manifest: &DatasetManifest) -> HashSet<&str> {
    manifest.index.keys().map(String::as_str).collect()
}
