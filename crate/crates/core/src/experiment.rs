//! Data preparation shared by the commands, and the variant × embedding × seed grid runner.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::synthetic::{self, SyntheticConfig};
use crate::data::{parse_corpus, Instance};
use crate::embeddings::{load_pretrained, EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};
use crate::mathcore::{Real, SeededRng};
use crate::models::{EncodedInstance, Model, Variant};
use crate::training::{build_model, train_with_progress, EpochRecord, TrainConfig, TrainLog};

/// Where the word vectors of a run come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbeddingSource {
    /// Pre-trained text file; words it lacks get small random rows.
    File(PathBuf),
    /// Random vectors as drawn by [`synthetic::embeddings`].
    Random { dim: usize },
}

/// Lowercased vocabulary over every token of the given corpora.
pub fn corpus_vocabulary(sets: &[&[Instance]]) -> Vocabulary {
    Vocabulary::from_tokens(
        sets.iter().flat_map(|s| s.iter()).map(|x| x.tokens.as_slice()),
        true,
    )
}

pub fn prepare_embeddings<T: Real>(
    source: &EmbeddingSource,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<EmbeddingTable<T>> {
    match source {
        EmbeddingSource::File(path) => {
            let mut rng = SeededRng::new(seed).fork("oov");
            load_pretrained(path, vocab, &mut rng)
        }
        EmbeddingSource::Random { dim } => {
            if *dim == 0 {
                return Err(Error::validation("embedding dimension must be at least 1"));
            }
            Ok(synthetic::embeddings(vocab, *dim, seed))
        }
    }
}

pub fn encode_all(vocab: &Vocabulary, instances: &[Instance]) -> Vec<EncodedInstance> {
    instances
        .iter()
        .map(|x| EncodedInstance::encode(x, vocab))
        .collect()
}

/// Build vocabulary and embeddings from the corpora, then train a fresh model.
pub fn run_training<T: Real>(
    train_set: &[Instance],
    test_set: &[Instance],
    source: &EmbeddingSource,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model<T>, TrainLog)> {
    config.validate()?;
    let vocab = corpus_vocabulary(&[train_set, test_set]);
    let table = prepare_embeddings(source, &vocab, config.seed)?;
    let train_enc = encode_all(&vocab, train_set);
    let test_enc = encode_all(&vocab, test_set);
    let model = build_model(config, vocab, table)?;
    train_with_progress(model, &train_enc, &test_enc, config, on_epoch)
}

/// Synthetic corpus split into train and test portions, train first.
pub fn synthetic_split(sentences: usize, seed: u64, test_fraction: f64) -> Result<(Vec<Instance>, Vec<Instance>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::validation("test fraction must lie in [0, 1)"));
    }
    let mut all = synthetic::generate(SyntheticConfig { sentences, seed });
    let test_len = (sentences as f64 * test_fraction).round() as usize;
    let test = all.split_off(sentences - test_len);
    if all.is_empty() {
        return Err(Error::validation("synthetic training split is empty"));
    }
    Ok((all, test))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub sentences: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_seed() -> u64 {
    1
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
}

/// One embedding column of the grid: a file, or random vectors of a given dimension.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSpec {
    pub name: Option<String>,
    pub path: Option<PathBuf>,
    pub dim: Option<usize>,
}

impl EmbeddingSpec {
    fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match (&self.path, self.dim) {
            (Some(p), _) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
            (None, Some(d)) => format!("random-{d}"),
            (None, None) => "unnamed".into(),
        }
    }

    fn source(&self, base: &Path) -> Result<EmbeddingSource> {
        match (&self.path, self.dim) {
            (Some(p), _) => Ok(EmbeddingSource::File(base.join(p))),
            (None, Some(dim)) => Ok(EmbeddingSource::Random { dim }),
            (None, None) => Err(Error::validation("embedding entry needs a path or a dim")),
        }
    }
}

/// Grid description, usually read from TOML.
///
/// ```toml
/// variants = ["lstm", "td-lstm", "tc-lstm"]
/// seeds = [1, 2, 3]
///
/// [data.synthetic]
/// sentences = 2000
///
/// [[embeddings]]
/// name = "glove-50"
/// path = "glove.twitter.27B.50d.txt"
///
/// [train]
/// epochs = 5
/// ```
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub data: DataSpec,
    #[serde(default)]
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub embeddings: Vec<EmbeddingSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Shared training settings; `variant` and `seed` are overridden per cell.
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format {
            path: "experiment spec".into(),
            line: e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .unwrap_or(0),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Format { line, message, .. } => Error::Format {
                path: path.display().to_string(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.variants.len() * self.embeddings.len() * self.seeds.len()
    }

    fn load_data(&self, base: &Path) -> Result<(Vec<Instance>, Vec<Instance>)> {
        match (&self.data.synthetic, &self.data.train) {
            (Some(s), None) => synthetic_split(s.sentences, s.seed, s.test_fraction),
            (None, Some(train)) => {
                let train_set = parse_corpus(&base.join(train))?;
                let test_set = match &self.data.test {
                    Some(t) => parse_corpus(&base.join(t))?,
                    None => Vec::new(),
                };
                Ok((train_set, test_set))
            }
            _ => Err(Error::validation(
                "data needs either a train corpus or a synthetic section, not both",
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub variant: Variant,
    pub embedding: String,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub seconds_per_epoch: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub variant: Variant,
    pub embedding: String,
    pub runs: usize,
    pub failures: usize,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub seconds_per_epoch: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub cells: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn run_cell(
    train_set: &[Instance],
    test_set: &[Instance],
    source: Result<EmbeddingSource>,
    config: &TrainConfig,
) -> Result<(Option<f64>, Option<f64>, f64)> {
    let (_, log) = run_training::<f64>(train_set, test_set, &source?, config, |_| {})?;
    let last = log.last().expect("at least one epoch");
    let (acc, f1) = if last.test_accuracy.is_some() {
        (last.test_accuracy, last.test_macro_f1)
    } else {
        (Some(last.train_accuracy), None)
    };
    Ok((acc, f1, log.mean_seconds_per_epoch()))
}

/// Run every cell of the grid in order. A failing cell is recorded and the grid continues.
///
/// Relative paths in `spec` are resolved against `base`.
pub fn run_experiment(
    spec: &ExperimentSpec,
    base: &Path,
    mut on_cell: impl FnMut(&CellResult),
) -> Result<ExperimentReport> {
    if spec.cell_count() == 0 {
        return Err(Error::validation(
            "experiment grid is empty (need at least one variant, embedding and seed)",
        ));
    }
    let (train_set, test_set) = spec.load_data(base)?;
    let mut cells = Vec::with_capacity(spec.cell_count());
    for emb in &spec.embeddings {
        for &variant in &spec.variants {
            for &seed in &spec.seeds {
                let config = TrainConfig {
                    variant,
                    seed,
                    ..spec.train.clone()
                };
                let outcome = run_cell(&train_set, &test_set, emb.source(base), &config);
                let cell = match outcome {
                    Ok((accuracy, macro_f1, secs)) => CellResult {
                        variant,
                        embedding: emb.label(),
                        seed,
                        accuracy,
                        macro_f1,
                        seconds_per_epoch: Some(secs),
                        error: None,
                    },
                    Err(e) => CellResult {
                        variant,
                        embedding: emb.label(),
                        seed,
                        accuracy: None,
                        macro_f1: None,
                        seconds_per_epoch: None,
                        error: Some(e.to_string()),
                    },
                };
                on_cell(&cell);
                cells.push(cell);
            }
        }
    }
    let summary = summarise(spec, &cells);
    Ok(ExperimentReport { cells, summary })
}

fn summarise(spec: &ExperimentSpec, cells: &[CellResult]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for emb in &spec.embeddings {
        let label = emb.label();
        for &variant in &spec.variants {
            let group: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.variant == variant && c.embedding == label)
                .collect();
            let ok = || group.iter().filter(|c| c.error.is_none());
            rows.push(SummaryRow {
                variant,
                embedding: label.clone(),
                runs: group.len(),
                failures: group.iter().filter(|c| c.error.is_some()).count(),
                accuracy: mean(ok().filter_map(|c| c.accuracy)),
                macro_f1: mean(ok().filter_map(|c| c.macro_f1)),
                seconds_per_epoch: mean(ok().filter_map(|c| c.seconds_per_epoch)),
            });
        }
    }
    rows
}

/// Left-aligned first column, right-aligned others, widths fitted to content.
pub fn aligned_table(headers: &[String], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        let mut parts = Vec::with_capacity(cols);
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            parts.push(if i == 0 {
                format!("{cell:<w$}")
            } else {
                format!("{cell:>w$}")
            });
        }
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(headers);
    line(
        &widths
            .iter()
            .map(|&w| "-".repeat(w))
            .collect::<Vec<_>>(),
    );
    for row in rows {
        line(row);
    }
    out
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();

        out.push_str("runs\n");
        let rows: Vec<Vec<String>> = self
            .cells
            .iter()
            .map(|c| {
                vec![
                    c.variant.to_string(),
                    c.embedding.clone(),
                    c.seed.to_string(),
                    fmt_opt(c.accuracy, 4),
                    fmt_opt(c.macro_f1, 4),
                    fmt_opt(c.seconds_per_epoch, 3),
                    c.error.clone().unwrap_or_default(),
                ]
            })
            .collect();
        out.push_str(&aligned_table(
            &s(&["variant", "embedding", "seed", "accuracy", "macro-F1", "s/epoch", "error"]),
            &rows,
        ));

        out.push_str("\nmean over seeds\n");
        let rows: Vec<Vec<String>> = self
            .summary
            .iter()
            .map(|r| {
                vec![
                    r.variant.to_string(),
                    r.embedding.clone(),
                    format!("{}/{}", r.runs - r.failures, r.runs),
                    fmt_opt(r.accuracy, 4),
                    fmt_opt(r.macro_f1, 4),
                    fmt_opt(r.seconds_per_epoch, 3),
                ]
            })
            .collect();
        out.push_str(&aligned_table(
            &s(&["variant", "embedding", "ok", "accuracy", "macro-F1", "s/epoch"]),
            &rows,
        ));

        let mut variants: Vec<Variant> = Vec::new();
        let mut embeddings: Vec<String> = Vec::new();
        let mut by_key: BTreeMap<(String, String), &SummaryRow> = BTreeMap::new();
        for r in &self.summary {
            if !variants.contains(&r.variant) {
                variants.push(r.variant);
            }
            if !embeddings.contains(&r.embedding) {
                embeddings.push(r.embedding.clone());
            }
            by_key.insert((r.variant.to_string(), r.embedding.clone()), r);
        }

        let _ = writeln!(out, "\naccuracy by embedding");
        let mut headers = vec!["embedding".to_string()];
        headers.extend(variants.iter().map(|v| v.to_string()));
        let rows: Vec<Vec<String>> = embeddings
            .iter()
            .map(|e| {
                let mut row = vec![e.clone()];
                row.extend(variants.iter().map(|v| {
                    fmt_opt(by_key[&(v.to_string(), e.clone())].accuracy, 4)
                }));
                row
            })
            .collect();
        out.push_str(&aligned_table(&headers, &rows));

        let _ = writeln!(out, "\nseconds per training epoch");
        let mut headers = vec!["variant".to_string()];
        headers.extend(embeddings.iter().cloned());
        let rows: Vec<Vec<String>> = variants
            .iter()
            .map(|v| {
                let mut row = vec![v.to_string()];
                row.extend(embeddings.iter().map(|e| {
                    fmt_opt(by_key[&(v.to_string(), e.clone())].seconds_per_epoch, 3)
                }));
                row
            })
            .collect();
        out.push_str(&aligned_table(&headers, &rows));
        out
    }
}
