//! Short-text normalization, tokenization and the two enrichment variants
//! (video-title append and hashtag duplication).

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Deref;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizeOptions {
    pub case_fold: bool,
    pub strip_urls: bool,
    pub collapse_elongation: bool,
    /// Length a run of three or more identical characters is cut down to.
    pub max_run: usize,
    /// Per-character substitutions applied before anything else, for
    /// script-specific folding (letter variants, diacritics, ...).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra_char_map: Option<BTreeMap<char, char>>,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        Self {
            case_fold: true,
            strip_urls: true,
            collapse_elongation: true,
            max_run: 2,
            extra_char_map: None,
        }
    }
}

impl NormalizeOptions {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_run == 0 {
            return Err("normalize.max_run must be at least 1".into());
        }
        Ok(())
    }
}

fn url_pattern() -> &'static Regex {
    static URL: OnceLock<Regex> = OnceLock::new();
    URL.get_or_init(|| {
        Regex::new(
            r"(?i)https?://\S+|www\.\S+|(?:[\w-]+\.)*youtu\.be/\S+|(?:[\w-]+\.)*youtube\.com/\S+",
        )
        .expect("url regex")
    })
}

/// Replaces every hyperlink with a single space.
pub fn strip_urls(text: &str) -> String {
    url_pattern().replace_all(text, " ").into_owned()
}

/// Cuts every run of at least three identical characters (and longer than
/// `max_run`) down to `max_run` copies.
pub fn collapse_runs(text: &str, max_run: usize) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        let mut run = 1;
        while chars.peek() == Some(&c) {
            chars.next();
            run += 1;
        }
        let keep = if run >= 3 && run > max_run {
            max_run
        } else {
            run
        };
        out.extend(std::iter::repeat_n(c, keep));
    }
    out
}

fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Normalizes a post: NFC, character map, URL removal, case folding,
/// elongation collapse, whitespace collapse.
///
/// When URL stripping is on, links are removed a second time after the
/// elongation collapse, since collapsing can turn `htttp://` into a link.
pub fn normalize(text: &str, options: &NormalizeOptions) -> String {
    let mut s: String = text.nfc().collect();
    if let Some(map) = &options.extra_char_map {
        s = s.chars().map(|c| *map.get(&c).unwrap_or(&c)).collect();
    }
    if options.strip_urls {
        s = strip_urls(&s);
    }
    if options.case_fold {
        s = s.to_lowercase();
    }
    if options.collapse_elongation {
        s = collapse_runs(&s, options.max_run.max(1));
        if options.strip_urls {
            s = strip_urls(&s);
        }
    }
    collapse_whitespace(&s)
}

/// Ordered list of non-empty, whitespace-free tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenList(Vec<String>);

impl TokenList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a list from arbitrary strings, dropping empties and anything
    /// containing whitespace.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(
            tokens
                .into_iter()
                .map(Into::into)
                .filter(|t: &String| !t.is_empty() && !t.chars().any(char::is_whitespace))
                .collect(),
        )
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

impl AsRef<[String]> for TokenList {
    fn as_ref(&self) -> &[String] {
        &self.0
    }
}

impl Deref for TokenList {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c,
            '\u{00A1}' | '\u{00A7}' | '\u{00AB}' | '\u{00B6}' | '\u{00B7}' | '\u{00BB}' | '\u{00BF}'
            | '\u{2010}'..='\u{2027}'
            | '\u{2030}'..='\u{205E}'
            | '\u{3001}'..='\u{3003}'
            | '\u{3008}'..='\u{3011}'
            | '\u{FF01}'..='\u{FF0F}')
}

fn trim_token(raw: &str) -> &str {
    let t = raw.trim_end_matches(is_punctuation);
    t.trim_start_matches(|c: char| is_punctuation(c) && c != '#' && c != '@')
}

/// Splits normalized text into tokens, trimming edge punctuation but keeping
/// a leading `#` or `@`.
pub fn tokenize(normalized: &str) -> TokenList {
    TokenList(
        normalized
            .split_whitespace()
            .map(trim_token)
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect(),
    )
}

/// Appends a sigil-free copy of every hashtag, in hashtag order.
pub fn duplicate_hashtags(tokens: TokenList) -> TokenList {
    let mut out = tokens.0;
    let copies: Vec<String> = out
        .iter()
        .filter_map(|t| t.strip_prefix('#').filter(|rest| !rest.is_empty()))
        .map(str::to_owned)
        .collect();
    out.extend(copies);
    TokenList(out)
}

/// Appends the tokens of the linked video's title. Empty or missing titles
/// leave the list untouched.
pub fn enrich_with_title(
    tokens: TokenList,
    title: Option<&str>,
    options: &NormalizeOptions,
) -> TokenList {
    let mut out = tokens.0;
    if let Some(title) = title {
        out.extend(tokenize(&normalize(title, options)).0);
    }
    TokenList(out)
}

/// The four representations: plain bag of words, title enrichment (`v`),
/// hashtag duplication (`h`), and both (`vh`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Base,
    V,
    H,
    Vh,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Base, Variant::V, Variant::H, Variant::Vh];

    pub fn uses_title(self) -> bool {
        matches!(self, Variant::V | Variant::Vh)
    }

    pub fn duplicates_hashtags(self) -> bool {
        matches!(self, Variant::H | Variant::Vh)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::V => "v",
            Variant::H => "h",
            Variant::Vh => "vh",
        }
    }

    /// Tokens for a training example. The title is only used by `v`/`vh`.
    pub fn training_tokens(
        self,
        text: &str,
        title: Option<&str>,
        options: &NormalizeOptions,
    ) -> TokenList {
        let mut tokens = tokenize(&normalize(text, options));
        if self.duplicates_hashtags() {
            tokens = duplicate_hashtags(tokens);
        }
        if self.uses_title() {
            tokens = enrich_with_title(tokens, title, options);
        }
        tokens
    }

    /// Tokens at prediction time. Title enrichment is never applied here:
    /// posts to classify need not link any video.
    pub fn prediction_tokens(self, text: &str, options: &NormalizeOptions) -> TokenList {
        let tokens = tokenize(&normalize(text, options));
        if self.duplicates_hashtags() {
            duplicate_hashtags(tokens)
        } else {
            tokens
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(Variant::Base),
            "v" => Ok(Variant::V),
            "h" => Ok(Variant::H),
            "vh" => Ok(Variant::Vh),
            other => Err(format!(
                "unknown variant {other:?} (expected base, v, h or vh)"
            )),
        }
    }
}
