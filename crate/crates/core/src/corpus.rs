//! Ingestion and label transfer: tweets linking videos inherit the video's
//! (merged) category, retweets and duplicate texts are filtered, and the
//! resulting silver corpus is balanced and split with seeded samplers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use log::warn;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::textproc::{self, NormalizeOptions};

/// Name of a class in a [`ClassScheme`] (fine or coarse).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(String);

impl ClassId {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ClassId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub lang: String,
    #[serde(default)]
    pub timestamp: i64,
    #[serde(default)]
    pub urls: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    #[serde(default)]
    pub title: String,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub text: String,
    pub label: ClassId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<i64>,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, label: impl Into<ClassId>) -> Self {
        Self {
            id: None,
            text: text.into(),
            label: label.into(),
            video_id: None,
            title: None,
            timestamp: None,
        }
    }
}

/// How a raw video category maps into the working class set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawMapping<'a> {
    Class(&'a ClassId),
    Drop,
    Unknown,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemeFile {
    class_list: Vec<ClassId>,
    merge_map: BTreeMap<String, Option<ClassId>>,
    coarse_list: Vec<ClassId>,
    coarse_map: BTreeMap<ClassId, ClassId>,
}

/// Raw category merge map (`null` target = drop) plus the fine and coarse
/// class lists. Class order is fixed by the file and shared by training,
/// prediction and evaluation.
#[derive(Debug, Clone)]
pub struct ClassScheme {
    file: SchemeFile,
    raw_lookup: HashMap<String, Option<usize>>,
    class_index: HashMap<ClassId, usize>,
    coarse_index: Vec<usize>,
}

const DEFAULT_SCHEME: &str = include_str!("../data/scheme.json");

fn raw_key(name: &str) -> String {
    name.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

impl ClassScheme {
    /// The 18 → 14 → 4 category scheme shipped in `data/scheme.json`.
    pub fn default_scheme() -> Self {
        Self::from_json(DEFAULT_SCHEME).expect("bundled scheme is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&io::read_text(path)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: SchemeFile = serde_json::from_str(json).map_err(|source| Error::Serde {
            context: "parsing class scheme".into(),
            source,
        })?;
        Self::build(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.file).expect("scheme serializes")
    }

    fn build(file: SchemeFile) -> Result<Self> {
        let mut class_index = HashMap::new();
        for (i, c) in file.class_list.iter().enumerate() {
            if class_index.insert(c.clone(), i).is_some() {
                return Err(Error::InvalidScheme(format!("duplicate class {c}")));
            }
        }
        if class_index.is_empty() {
            return Err(Error::InvalidScheme("empty class_list".into()));
        }
        let mut raw_lookup = HashMap::new();
        for (raw, target) in &file.merge_map {
            let idx = match target {
                None => None,
                Some(t) => Some(*class_index.get(t).ok_or_else(|| {
                    Error::InvalidScheme(format!("merge target {t} of {raw} not in class_list"))
                })?),
            };
            if raw_lookup.insert(raw_key(raw), idx).is_some() {
                return Err(Error::InvalidScheme(format!(
                    "duplicate raw category {raw}"
                )));
            }
        }
        let coarse_pos: HashMap<&ClassId, usize> = file
            .coarse_list
            .iter()
            .enumerate()
            .map(|(i, c)| (c, i))
            .collect();
        let mut coarse_index = Vec::with_capacity(file.class_list.len());
        for c in &file.class_list {
            let target = file.coarse_map.get(c).ok_or_else(|| {
                Error::InvalidScheme(format!("class {c} missing from coarse_map"))
            })?;
            coarse_index.push(*coarse_pos.get(target).ok_or_else(|| {
                Error::InvalidScheme(format!("coarse target {target} not in coarse_list"))
            })?);
        }
        Ok(Self {
            file,
            raw_lookup,
            class_index,
            coarse_index,
        })
    }

    pub fn class_list(&self) -> &[ClassId] {
        &self.file.class_list
    }

    pub fn coarse_list(&self) -> &[ClassId] {
        &self.file.coarse_list
    }

    pub fn raw_categories(&self) -> impl Iterator<Item = &str> {
        self.file.merge_map.keys().map(String::as_str)
    }

    pub fn class_index(&self, class: &ClassId) -> Option<usize> {
        self.class_index.get(class).copied()
    }

    /// Maps a raw category name. Matching ignores case and whitespace, so
    /// "Howto & Style" resolves like "HowTo&Style".
    pub fn map_raw(&self, raw: &str) -> RawMapping<'_> {
        match self.raw_lookup.get(&raw_key(raw)) {
            Some(Some(i)) => RawMapping::Class(&self.file.class_list[*i]),
            Some(None) => RawMapping::Drop,
            None => RawMapping::Unknown,
        }
    }

    pub fn coarse_of(&self, class: &ClassId) -> Option<&ClassId> {
        self.class_index(class)
            .map(|i| &self.file.coarse_list[self.coarse_index[i]])
    }
}

// ---------------------------------------------------------------------------
// Video-ID extraction

fn is_id_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

fn valid_id(s: &str) -> bool {
    s.len() == 11 && s.chars().all(is_id_char)
}

/// Leading 11-character ID of `s`, provided the ID is not followed by more
/// ID characters.
fn leading_id(s: &str) -> Option<&str> {
    let end = s.find(|c: char| !is_id_char(c)).unwrap_or(s.len());
    valid_id(&s[..end]).then(|| &s[..end])
}

fn host_pattern() -> &'static Regex {
    static HOST: OnceLock<Regex> = OnceLock::new();
    HOST.get_or_init(|| {
        Regex::new(r"(?i)(?:[a-z0-9-]+\.)*(youtube\.com|youtu\.be)/(\S*)").expect("host regex")
    })
}

fn id_from_watch_query(rest: &str) -> Option<&str> {
    let query = rest.split('#').next().unwrap_or("");
    query
        .split('&')
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| *k == "v")
        .map(|(_, v)| v)
        .filter(|v| valid_id(v))
}

fn ids_in(s: &str, out: &mut Vec<String>) {
    for caps in host_pattern().captures_iter(s) {
        let whole = caps.get(0).expect("match");
        if let Some(prev) = s[..whole.start()].chars().next_back() {
            if prev.is_alphanumeric() || matches!(prev, '.' | '-' | '_') {
                continue;
            }
        }
        let host = caps[1].to_ascii_lowercase();
        let path = &caps[2];
        let id = if host == "youtu.be" {
            leading_id(path)
        } else if let Some(rest) = path
            .strip_prefix("watch?")
            .or_else(|| path.strip_prefix("watch/?"))
        {
            id_from_watch_query(rest)
        } else if let Some(rest) = path
            .strip_prefix("v/")
            .or_else(|| path.strip_prefix("embed/"))
        {
            leading_id(rest)
        } else {
            None
        };
        if let Some(id) = id {
            if !out.iter().any(|x| x == id) {
                out.push(id.to_owned());
            }
        }
    }
}

/// Video IDs linked from a tweet, scanning the URL list first and then the
/// inline text. First-occurrence order, no duplicates. Anything that does not
/// parse as a video link is ignored.
pub fn extract_video_ids(text: &str, urls: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for url in urls {
        ids_in(url, &mut out);
    }
    ids_in(text, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Label transfer

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferStats {
    pub tweets: usize,
    pub resolved: usize,
    pub unresolved: usize,
    pub dropped_class: usize,
    pub unknown_category: usize,
    pub emitted: usize,
    pub per_class: BTreeMap<ClassId, usize>,
}

impl TransferStats {
    pub fn merge(&mut self, other: &TransferStats) {
        self.tweets += other.tweets;
        self.resolved += other.resolved;
        self.unresolved += other.unresolved;
        self.dropped_class += other.dropped_class;
        self.unknown_category += other.unknown_category;
        self.emitted += other.emitted;
        for (c, n) in &other.per_class {
            *self.per_class.entry(c.clone()).or_default() += n;
        }
    }
}

/// Streaming label transfer. Feed tweets one at a time with [`push`].
///
/// [`push`]: LabelTransfer::push
pub struct LabelTransfer<'a> {
    videos: &'a HashMap<String, VideoMeta>,
    scheme: &'a ClassScheme,
    stats: TransferStats,
}

impl<'a> LabelTransfer<'a> {
    pub fn new(videos: &'a HashMap<String, VideoMeta>, scheme: &'a ClassScheme) -> Self {
        Self {
            videos,
            scheme,
            stats: TransferStats::default(),
        }
    }

    pub fn push(&mut self, tweet: &TweetRecord) -> Option<LabeledExample> {
        self.stats.tweets += 1;
        let video = extract_video_ids(&tweet.text, &tweet.urls)
            .into_iter()
            .find_map(|id| self.videos.get(&id));
        let Some(video) = video else {
            self.stats.unresolved += 1;
            return None;
        };
        self.stats.resolved += 1;
        let label = match self.scheme.map_raw(&video.category) {
            RawMapping::Class(c) => c.clone(),
            RawMapping::Drop => {
                self.stats.dropped_class += 1;
                return None;
            }
            RawMapping::Unknown => {
                warn!(
                    "video {} has unknown category {:?}; tweet {} skipped",
                    video.video_id, video.category, tweet.id
                );
                self.stats.unknown_category += 1;
                return None;
            }
        };
        self.stats.emitted += 1;
        *self.stats.per_class.entry(label.clone()).or_default() += 1;
        Some(LabeledExample {
            id: Some(tweet.id.clone()),
            text: tweet.text.clone(),
            label,
            video_id: Some(video.video_id.clone()),
            title: (!video.title.is_empty()).then(|| video.title.clone()),
            timestamp: Some(tweet.timestamp),
        })
    }

    pub fn stats(&self) -> &TransferStats {
        &self.stats
    }

    pub fn into_stats(self) -> TransferStats {
        self.stats
    }
}

pub fn transfer_labels<'t>(
    tweets: impl IntoIterator<Item = &'t TweetRecord>,
    videos: &HashMap<String, VideoMeta>,
    scheme: &ClassScheme,
) -> (Vec<LabeledExample>, TransferStats) {
    let mut transfer = LabelTransfer::new(videos, scheme);
    let out = tweets
        .into_iter()
        .filter_map(|t| transfer.push(t))
        .collect();
    (out, transfer.into_stats())
}

// ---------------------------------------------------------------------------
// Retweet and duplicate filtering

pub fn is_retweet(text: &str) -> bool {
    let t = text.trim_start();
    t.get(..4).is_some_and(|p| p.eq_ignore_ascii_case("rt @"))
}

/// Duplicate-detection key: case folded, links removed, whitespace collapsed.
pub fn dedup_key(text: &str) -> String {
    let opts = NormalizeOptions {
        collapse_elongation: false,
        ..NormalizeOptions::default()
    };
    textproc::normalize(text, &opts)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupStats {
    pub input: usize,
    pub retweets: usize,
    pub duplicates: usize,
    pub kept: usize,
}

/// Keeps the first example per [`dedup_key`] and drops retweets.
#[derive(Debug, Default)]
pub struct Deduper {
    seen: HashSet<String>,
    stats: DedupStats,
}

impl Deduper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn admit(&mut self, text: &str) -> bool {
        self.stats.input += 1;
        if is_retweet(text) {
            self.stats.retweets += 1;
            return false;
        }
        if !self.seen.insert(dedup_key(text)) {
            self.stats.duplicates += 1;
            return false;
        }
        self.stats.kept += 1;
        true
    }

    pub fn stats(&self) -> &DedupStats {
        &self.stats
    }

    pub fn into_stats(self) -> DedupStats {
        self.stats
    }
}

pub fn dedupe(
    examples: impl IntoIterator<Item = LabeledExample>,
) -> (Vec<LabeledExample>, DedupStats) {
    let mut deduper = Deduper::new();
    let kept = examples
        .into_iter()
        .filter(|ex| deduper.admit(&ex.text))
        .collect();
    (kept, deduper.into_stats())
}

// ---------------------------------------------------------------------------
// Sampling

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Independent generator per (seed, class, purpose), so one class's draw
/// never depends on another class's size or position.
pub fn class_rng(seed: u64, class: &ClassId, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(class.as_str()) ^ purpose.rotate_left(32));
    rng
}

const BALANCE_STREAM: u64 = 1;
const HOLDOUT_STREAM: u64 = 2;
pub(crate) const FOLD_STREAM: u64 = 3;

/// Indices of `examples` grouped per class of `class_list`. Examples whose
/// label is outside the list are ignored.
pub fn group_by_class(examples: &[LabeledExample], class_list: &[ClassId]) -> Vec<Vec<usize>> {
    let pos: HashMap<&ClassId, usize> =
        class_list.iter().enumerate().map(|(i, c)| (c, i)).collect();
    let mut groups = vec![Vec::new(); class_list.len()];
    for (i, ex) in examples.iter().enumerate() {
        if let Some(&c) = pos.get(&ex.label) {
            groups[c].push(i);
        }
    }
    groups
}

/// Uniformly samples up to `cap` examples per class without replacement.
/// Survivors keep their input order, so a cap no class reaches returns the
/// input unchanged (minus labels outside `class_list`).
pub fn balance_sample(
    examples: &[LabeledExample],
    class_list: &[ClassId],
    cap: usize,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    if cap == 0 {
        return Err(Error::InvalidConfig(
            "per-class cap must be at least 1".into(),
        ));
    }
    let mut keep = vec![false; examples.len()];
    for (class, members) in class_list.iter().zip(group_by_class(examples, class_list)) {
        if members.is_empty() {
            warn!("class {class} has no examples to sample");
            continue;
        }
        let mut rng = class_rng(seed, class, BALANCE_STREAM);
        let take = cap.min(members.len());
        for p in index::sample(&mut rng, members.len(), take) {
            keep[members[p]] = true;
        }
    }
    Ok(examples
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(ex, _)| ex.clone())
        .collect())
}

/// Draws exactly `per_class_test` test examples from every class; the rest
/// becomes training data. Both sides keep input order.
pub fn split_holdout(
    examples: &[LabeledExample],
    class_list: &[ClassId],
    per_class_test: usize,
    seed: u64,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    if per_class_test == 0 {
        return Err(Error::InvalidConfig(
            "per-class test size must be at least 1".into(),
        ));
    }
    let mut is_test = vec![false; examples.len()];
    for (class, members) in class_list.iter().zip(group_by_class(examples, class_list)) {
        if members.len() <= per_class_test {
            return Err(Error::ClassTooSmall {
                class: class.to_string(),
                size: members.len(),
                needed: per_class_test + 1,
            });
        }
        let mut rng = class_rng(seed, class, HOLDOUT_STREAM);
        for p in index::sample(&mut rng, members.len(), per_class_test) {
            is_test[members[p]] = true;
        }
    }
    let known: HashSet<&ClassId> = class_list.iter().collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (ex, t) in examples.iter().zip(is_test) {
        if t {
            test.push(ex.clone());
        } else if known.contains(&ex.label) {
            train.push(ex.clone());
        }
    }
    Ok((train, test))
}

/// Relabels an example with its coarse class. Labels outside the scheme
/// are returned unchanged.
pub fn coarsen(example: &LabeledExample, scheme: &ClassScheme) -> LabeledExample {
    let mut out = example.clone();
    if let Some(c) = scheme.coarse_of(&example.label) {
        out.label = c.clone();
    }
    out
}

// ---------------------------------------------------------------------------
// Labeled corpus files

/// Reads a labeled corpus, either JSON-lines or (for `.tsv` files)
/// `text<TAB>label` rows. Labels outside `class_list` are rejected with
/// their line number.
pub fn read_labeled(path: &Path, class_list: &[ClassId]) -> Result<Vec<LabeledExample>> {
    let examples = if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("tsv"))
    {
        read_tsv_labeled(path)?
    } else {
        io::read_jsonl::<LabeledExample>(path)?
            .into_iter()
            .enumerate()
            .map(|(i, ex)| (i + 1, ex))
            .collect()
    };
    let known: HashSet<&ClassId> = class_list.iter().collect();
    let mut out = Vec::with_capacity(examples.len());
    for (line, ex) in examples {
        if !known.contains(&ex.label) {
            return Err(Error::UnknownLabel {
                label: ex.label.to_string(),
                line,
            });
        }
        out.push(ex);
    }
    Ok(out)
}

/// Parses `text<TAB>label` rows, returning each example with its line number.
pub fn read_tsv_labeled(path: &Path) -> Result<Vec<(usize, LabeledExample)>> {
    let text = io::read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (body, label) = line.rsplit_once('\t').ok_or_else(|| {
            Error::InvalidConfig(format!(
                "{}:{}: expected text<TAB>label",
                path.display(),
                i + 1
            ))
        })?;
        out.push((i + 1, LabeledExample::new(body, label.trim())));
    }
    Ok(out)
}
