//! Document-frequency statistics, information-gain scoring, round-robin
//! feature selection and binary vectorization.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ClassId;
use crate::error::{Error, Result};

/// Per-class document frequencies of one term.
#[derive(Debug, Clone, PartialEq, Eq)]
struct TermRow {
    df: u64,
    by_class: Vec<u64>,
}

/// Class-conditional document-frequency table over a training corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermClassCounts {
    classes: Vec<ClassId>,
    total: u64,
    class_docs: Vec<u64>,
    terms: HashMap<String, TermRow>,
}

impl TermClassCounts {
    pub fn new(classes: Vec<ClassId>) -> Self {
        let k = classes.len();
        Self {
            classes,
            total: 0,
            class_docs: vec![0; k],
            terms: HashMap::new(),
        }
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    /// Number of documents.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn class_docs(&self, class: usize) -> u64 {
        self.class_docs[class]
    }

    pub fn df(&self, term: &str) -> u64 {
        self.terms.get(term).map_or(0, |r| r.df)
    }

    pub fn df_class(&self, term: &str, class: usize) -> u64 {
        self.terms.get(term).map_or(0, |r| r.by_class[class])
    }

    pub fn vocabulary_size(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.keys().map(String::as_str)
    }

    /// Adds one document. Repeated tokens count once.
    pub fn add_document<S: AsRef<str>>(&mut self, tokens: &[S], class: usize) {
        let k = self.classes.len();
        assert!(class < k, "class index {class} out of range");
        self.total += 1;
        self.class_docs[class] += 1;
        let mut distinct: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
        distinct.sort_unstable();
        distinct.dedup();
        for t in distinct {
            let row = self.terms.entry(t.to_owned()).or_insert_with(|| TermRow {
                df: 0,
                by_class: vec![0; k],
            });
            row.df += 1;
            row.by_class[class] += 1;
        }
    }

    /// Adds another shard's counts. Both tables must share the class list.
    pub fn merge(&mut self, other: TermClassCounts) {
        assert_eq!(
            self.classes, other.classes,
            "merging counts over different class lists"
        );
        self.total += other.total;
        for (a, b) in self.class_docs.iter_mut().zip(&other.class_docs) {
            *a += b;
        }
        for (term, row) in other.terms {
            match self.terms.get_mut(&term) {
                Some(mine) => {
                    mine.df += row.df;
                    for (a, b) in mine.by_class.iter_mut().zip(&row.by_class) {
                        *a += b;
                    }
                }
                None => {
                    self.terms.insert(term, row);
                }
            }
        }
    }
}

/// Counts a corpus of (tokens, class index) pairs, sharding across threads.
pub fn count<S>(corpus: &[(S, usize)], classes: &[ClassId]) -> TermClassCounts
where
    S: AsRef<[String]> + Sync,
{
    corpus
        .par_iter()
        .fold(
            || TermClassCounts::new(classes.to_vec()),
            |mut acc, (tokens, class)| {
                acc.add_document(tokens.as_ref(), *class);
                acc
            },
        )
        .reduce(
            || TermClassCounts::new(classes.to_vec()),
            |mut a, b| {
                a.merge(b);
                a
            },
        )
}

fn plogp_ratio(joint: f64, pt: f64, pc: f64) -> f64 {
    if joint <= 0.0 {
        0.0
    } else {
        joint * (joint / (pt * pc)).log2()
    }
}

/// Information gain, in bits, of term presence about membership in one
/// class, from raw document counts: `n` documents, `n_class` in the class,
/// `df` containing the term, `df_class` in the class and containing it.
///
/// Probabilities are plain fractions of `n`; cells with zero joint
/// probability contribute nothing.
pub fn information_gain_from_counts(n: u64, n_class: u64, df: u64, df_class: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    debug_assert!(df_class <= df && df_class <= n_class && df + n_class - df_class <= n);
    let neither = n + df_class - df - n_class;
    let n = n as f64;
    let p_t = df as f64 / n;
    let p_c = n_class as f64 / n;
    let p_tc = df_class as f64 / n;
    let p_t_nc = (df - df_class) as f64 / n;
    let p_nt_c = (n_class - df_class) as f64 / n;
    let p_nt_nc = neither as f64 / n;
    let ig = plogp_ratio(p_tc, p_t, p_c)
        + plogp_ratio(p_t_nc, p_t, 1.0 - p_c)
        + plogp_ratio(p_nt_c, 1.0 - p_t, p_c)
        + plogp_ratio(p_nt_nc, 1.0 - p_t, 1.0 - p_c);
    Ok(ig.max(0.0))
}

pub fn information_gain(counts: &TermClassCounts, term: &str, class: usize) -> Result<f64> {
    information_gain_from_counts(
        counts.total(),
        counts.class_docs(class),
        counts.df(term),
        counts.df_class(term, class),
    )
}

/// Column id within a [`FeatureSpace`].
pub type Column = u32;

/// Sorted, distinct column ids of the features present in a document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SparseBinaryVector(Vec<Column>);

impl SparseBinaryVector {
    pub fn new(mut ids: Vec<Column>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        Self(ids)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn ids(&self) -> &[Column] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Sum of `weights` at the present columns.
    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.0.iter().map(|&j| weights[j as usize]).sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureSpaceFile {
    n_per_class: usize,
    terms: Vec<String>,
    per_class_top: BTreeMap<ClassId, Vec<String>>,
}

/// Selected vocabulary. Columns are assigned in lexicographic term order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureSpaceFile", into = "FeatureSpaceFile")]
pub struct FeatureSpace {
    n_per_class: usize,
    terms: Vec<String>,
    per_class_top: BTreeMap<ClassId, Vec<String>>,
    index: HashMap<String, Column>,
}

impl TryFrom<FeatureSpaceFile> for FeatureSpace {
    type Error = String;

    fn try_from(f: FeatureSpaceFile) -> std::result::Result<Self, String> {
        let mut index = HashMap::with_capacity(f.terms.len());
        for (i, t) in f.terms.iter().enumerate() {
            if index.insert(t.clone(), i as Column).is_some() {
                return Err(format!("duplicate term {t:?} in feature space"));
            }
        }
        for (c, top) in &f.per_class_top {
            if let Some(t) = top.iter().find(|t| !index.contains_key(*t)) {
                return Err(format!("term {t:?} selected for {c} missing from terms"));
            }
        }
        Ok(Self {
            n_per_class: f.n_per_class,
            terms: f.terms,
            per_class_top: f.per_class_top,
            index,
        })
    }
}

impl From<FeatureSpace> for FeatureSpaceFile {
    fn from(s: FeatureSpace) -> Self {
        Self {
            n_per_class: s.n_per_class,
            terms: s.terms,
            per_class_top: s.per_class_top,
        }
    }
}

impl FeatureSpace {
    pub fn n_per_class(&self) -> usize {
        self.n_per_class
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn column(&self, term: &str) -> Option<Column> {
        self.index.get(term).copied()
    }

    pub fn per_class_top(&self) -> &BTreeMap<ClassId, Vec<String>> {
        &self.per_class_top
    }

    pub fn vectorize<S: AsRef<str>>(&self, tokens: &[S]) -> SparseBinaryVector {
        SparseBinaryVector::new(
            tokens
                .iter()
                .filter_map(|t| self.column(t.as_ref()))
                .collect(),
        )
    }
}

pub const DEFAULT_N_PER_CLASS: usize = 10_000;

#[derive(Debug, Clone, Copy)]
struct Scored<'a> {
    term: &'a str,
    ig: f64,
    df: u64,
}

/// Ranking order: higher IG, then higher document frequency, then term.
fn rank(a: &Scored<'_>, b: &Scored<'_>) -> Ordering {
    b.ig.total_cmp(&a.ig)
        .then(b.df.cmp(&a.df))
        .then_with(|| a.term.cmp(b.term))
}

/// Top `n` terms of one class.
pub fn top_terms(counts: &TermClassCounts, class: usize, n: usize) -> Result<Vec<String>> {
    let mut scored = counts
        .terms
        .iter()
        .map(|(term, row)| {
            Ok(Scored {
                term,
                ig: information_gain_from_counts(
                    counts.total,
                    counts.class_docs[class],
                    row.df,
                    row.by_class[class],
                )?,
                df: row.df,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let take = n.min(scored.len());
    if take == 0 {
        return Ok(Vec::new());
    }
    if take < scored.len() {
        scored.select_nth_unstable_by(take - 1, rank);
        scored.truncate(take);
    }
    scored.sort_unstable_by(rank);
    Ok(scored.into_iter().map(|s| s.term.to_owned()).collect())
}

/// Round-robin selection: the top `n_per_class` terms of every class-specific
/// IG ranking, merged.
pub fn select_round_robin(counts: &TermClassCounts, n_per_class: usize) -> Result<FeatureSpace> {
    if n_per_class == 0 {
        return Err(Error::InvalidConfig(
            "n_per_class must be at least 1".into(),
        ));
    }
    if counts.total() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let tops: Vec<Vec<String>> = (0..counts.classes.len())
        .into_par_iter()
        .map(|c| top_terms(counts, c, n_per_class))
        .collect::<Result<_>>()?;
    let union: BTreeSet<&String> = tops.iter().flatten().collect();
    let terms: Vec<String> = union.into_iter().cloned().collect();
    let per_class_top = counts.classes.iter().cloned().zip(tops).collect();
    FeatureSpace::try_from(FeatureSpaceFile {
        n_per_class,
        terms,
        per_class_top,
    })
    .map_err(Error::InvalidConfig)
}
