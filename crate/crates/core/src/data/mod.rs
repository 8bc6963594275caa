//! Target-annotated sentence corpus.
//!
//! The corpus is a sequence of 3-line records:
//!
//! ```text
//! i hate my $T$ look at my last tweet
//! ipod
//! -1
//! ```
//!
//! Line one is the whitespace-tokenised sentence with `$T$` standing for the
//! target, line two is the target string, line three the label (`-1`, `0` or
//! `1`). The first placeholder is the target mention; any further placeholders
//! are expanded to the target words but treated as ordinary context. A
//! placeholder glued to punctuation (`$T$'s`) is split off into its own tokens.

pub mod synthetic;

use std::fmt;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PLACEHOLDER: &str = "$T$";

pub const CLASS_COUNT: usize = 3;

/// Sentiment towards the target. Class indices are negative→0, neutral→1, positive→2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Negative,
    Neutral,
    Positive,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Negative, Polarity::Neutral, Polarity::Positive];

    pub fn class_index(self) -> usize {
        match self {
            Polarity::Negative => 0,
            Polarity::Neutral => 1,
            Polarity::Positive => 2,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Corpus value: -1, 0 or 1.
    pub fn value(self) -> i8 {
        self.class_index() as i8 - 1
    }

    pub fn from_value(v: i64) -> Option<Self> {
        match v {
            -1 => Some(Polarity::Negative),
            0 => Some(Polarity::Neutral),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
            Polarity::Positive => "positive",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One labelled sentence; `target` is a non-empty half-open token range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub tokens: Vec<String>,
    pub target: Range<usize>,
    pub label: Polarity,
}

impl Instance {
    pub fn new(tokens: Vec<String>, target: Range<usize>, label: Polarity) -> Result<Self> {
        if target.start >= target.end || target.end > tokens.len() {
            return Err(Error::validation(format!(
                "target span {target:?} invalid for {} tokens",
                tokens.len()
            )));
        }
        Ok(Instance {
            tokens,
            target,
            label,
        })
    }

    /// Build from a sentence containing [`PLACEHOLDER`] and the target string.
    pub fn from_marked(sentence: &str, target: &str, label: Polarity) -> Result<Self> {
        let target_tokens: Vec<&str> = target.split_whitespace().collect();
        if target_tokens.is_empty() {
            return Err(Error::validation("empty target string"));
        }
        let mut tokens = Vec::new();
        let mut span = None;
        for raw in sentence.split_whitespace() {
            let Some(pos) = raw.find(PLACEHOLDER) else {
                tokens.push(raw.to_string());
                continue;
            };
            // a token may hold several placeholders, e.g. "$T$/$T$"
            let mut rest = raw;
            let mut at = Some(pos);
            while let Some(p) = at {
                if p > 0 {
                    tokens.push(rest[..p].to_string());
                }
                let start = tokens.len();
                tokens.extend(target_tokens.iter().map(|t| t.to_string()));
                if span.is_none() {
                    span = Some(start..tokens.len());
                }
                rest = &rest[p + PLACEHOLDER.len()..];
                at = rest.find(PLACEHOLDER);
            }
            if !rest.is_empty() {
                tokens.push(rest.to_string());
            }
        }
        let span = span.ok_or_else(|| {
            Error::validation(format!("sentence has no {PLACEHOLDER} placeholder"))
        })?;
        Instance::new(tokens, span, label)
    }

    pub fn target_tokens(&self) -> &[String] {
        &self.tokens[self.target.clone()]
    }

    pub fn split(&self) -> SplitInstance<'_> {
        split(self)
    }

    /// Sentence with the target replaced by the placeholder, as stored on disk.
    pub fn marked_sentence(&self) -> String {
        let mut parts: Vec<&str> = self.tokens[..self.target.start]
            .iter()
            .map(String::as_str)
            .collect();
        parts.push(PLACEHOLDER);
        parts.extend(self.tokens[self.target.end..].iter().map(String::as_str));
        parts.join(" ")
    }
}

/// Preceding context, target words, and following context of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitInstance<'a> {
    pub preceding: &'a [String],
    pub target: &'a [String],
    pub following: &'a [String],
    pub label: Polarity,
}

impl SplitInstance<'_> {
    pub fn joined(&self) -> Vec<String> {
        self.preceding
            .iter()
            .chain(self.target)
            .chain(self.following)
            .cloned()
            .collect()
    }
}

pub fn split(instance: &Instance) -> SplitInstance<'_> {
    let Range { start, end } = instance.target;
    SplitInstance {
        preceding: &instance.tokens[..start],
        target: &instance.tokens[start..end],
        following: &instance.tokens[end..],
        label: instance.label,
    }
}

pub fn parse_corpus(path: &Path) -> Result<Vec<Instance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus_str(&text, &path.display().to_string())
}

/// Parse corpus text; `source` names the input in error messages.
pub fn parse_corpus_str(text: &str, source: &str) -> Result<Vec<Instance>> {
    let mut lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    let record_err = |record: usize, message: String| Error::Record {
        path: source.to_string(),
        record,
        message,
    };
    if lines.len() % 3 != 0 {
        return Err(record_err(
            lines.len() / 3 + 1,
            format!("{} lines is not a whole number of 3-line records", lines.len()),
        ));
    }
    lines
        .chunks(3)
        .enumerate()
        .map(|(i, rec)| {
            let record = i + 1;
            let label = rec[2]
                .trim()
                .parse::<i64>()
                .ok()
                .and_then(Polarity::from_value)
                .ok_or_else(|| record_err(record, format!("label {:?} is not -1, 0 or 1", rec[2])))?;
            if !rec[0].contains(PLACEHOLDER) {
                return Err(record_err(record, format!("missing {PLACEHOLDER} placeholder")));
            }
            Instance::from_marked(rec[0], rec[1], label).map_err(|e| record_err(record, e.to_string()))
        })
        .collect()
}

pub fn write_corpus(path: &Path, instances: &[Instance]) -> Result<()> {
    let mut out = Vec::new();
    for inst in instances {
        writeln!(out, "{}", inst.marked_sentence()).expect("vec write");
        writeln!(out, "{}", inst.target_tokens().join(" ")).expect("vec write");
        writeln!(out, "{}", inst.label.value()).expect("vec write");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Fraction of instances per label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub negative: f64,
    pub neutral: f64,
    pub positive: f64,
}

impl ClassDistribution {
    pub fn fraction(&self, p: Polarity) -> f64 {
        match p {
            Polarity::Negative => self.negative,
            Polarity::Neutral => self.neutral,
            Polarity::Positive => self.positive,
        }
    }

    /// Most frequent label; ties go to the lowest class index.
    pub fn majority(&self) -> Polarity {
        let mut best = Polarity::Negative;
        for p in Polarity::ALL {
            if self.fraction(p) > self.fraction(best) {
                best = p;
            }
        }
        best
    }
}

pub fn class_distribution(instances: &[Instance]) -> Result<ClassDistribution> {
    if instances.is_empty() {
        return Err(Error::validation("class distribution of an empty list"));
    }
    let mut counts = [0usize; CLASS_COUNT];
    for inst in instances {
        counts[inst.label.class_index()] += 1;
    }
    let n = instances.len() as f64;
    Ok(ClassDistribution {
        negative: counts[0] as f64 / n,
        neutral: counts[1] as f64 / n,
        positive: counts[2] as f64 / n,
    })
}
