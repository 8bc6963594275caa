//! Vocabulary and pre-trained word vectors.
//!
//! Embedding files are plain text, one `token v1 … vd` line per word (GloVe and
//! SSWE releases both use this layout). A leading `count dim` header line is
//! skipped when present.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mathcore::{Real, SeededRng, Tensor};

/// Token written at index 0 of every vocabulary.
pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Range of the uniform distribution used for words without a pre-trained vector.
pub const OOV_INIT_BOUND: f64 = 0.003;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    lowercase: bool,
}

impl Vocabulary {
    pub fn new(lowercase: bool) -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
            lowercase,
        };
        v.tokens.push(UNKNOWN_TOKEN.to_string());
        v.index.insert(UNKNOWN_TOKEN.to_string(), 0);
        v
    }

    /// Closed vocabulary over every token in `sentences`, in first-seen order.
    pub fn from_tokens<'s, I, S>(sentences: I, lowercase: bool) -> Self
    where
        I: IntoIterator<Item = &'s [S]>,
        S: AsRef<str> + 's,
    {
        let mut v = Vocabulary::new(lowercase);
        for sentence in sentences {
            for tok in sentence {
                v.insert(tok.as_ref());
            }
        }
        v
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn normalize<'t>(&self, token: &'t str) -> std::borrow::Cow<'t, str> {
        if self.lowercase && token.chars().any(char::is_uppercase) {
            std::borrow::Cow::Owned(token.to_lowercase())
        } else {
            std::borrow::Cow::Borrowed(token)
        }
    }

    pub fn insert(&mut self, token: &str) -> usize {
        let key = self.normalize(token).into_owned();
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(key.clone());
        self.index.insert(key, i);
        i
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(self.normalize(token).as_ref()).copied()
    }

    /// Index of `token`, or 0 (the unknown token) when absent.
    pub fn index_of(&self, token: &str) -> usize {
        self.get(token).unwrap_or(0)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Rebuild from an ordered token list whose first entry is [`UNKNOWN_TOKEN`].
    pub fn from_list(tokens: Vec<String>, lowercase: bool) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNKNOWN_TOKEN) {
            return Err(Error::validation(format!(
                "vocabulary must start with {UNKNOWN_TOKEN}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            lowercase,
        })
    }

    /// One token per line, index order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for t in &self.tokens {
            writeln!(w, "{t}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, lowercase: bool) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end_matches('\r');
            if !line.is_empty() {
                tokens.push(line.to_string());
            }
        }
        Self::from_list(tokens, lowercase)
    }
}

/// `|V| × d` matrix, one row per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T: Real = f64> {
    matrix: Tensor<T>,
    pub trainable: bool,
}

impl<T: Real> EmbeddingTable<T> {
    pub fn new(matrix: Tensor<T>, trainable: bool) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(Error::validation("embedding matrix has non-finite values"));
        }
        Ok(EmbeddingTable { matrix, trainable })
    }

    /// Every row drawn from U(-0.003, 0.003).
    pub fn random(vocab_size: usize, dim: usize, rng: &mut SeededRng) -> Self {
        EmbeddingTable {
            matrix: rng.uniform_tensor(vocab_size, dim, OOV_INIT_BOUND),
            trainable: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut Tensor<T> {
        &mut self.matrix
    }

    /// Row `index` as a `d × 1` column.
    pub fn row(&self, index: usize) -> Tensor<T> {
        Tensor::column(self.matrix.row(index))
    }

    pub fn lookup(&self, vocab: &Vocabulary, token: &str) -> Tensor<T> {
        self.row(vocab.index_of(token))
    }

    /// Mean of the looked-up vectors of a (possibly multi-word) target.
    pub fn target_vector<S: AsRef<str>>(&self, vocab: &Vocabulary, target: &[S]) -> Result<Tensor<T>> {
        if target.is_empty() {
            return Err(Error::validation("target has no tokens"));
        }
        let rows: Vec<Tensor<T>> = target
            .iter()
            .map(|t| self.lookup(vocab, t.as_ref()))
            .collect();
        let refs: Vec<&Tensor<T>> = rows.iter().collect();
        Tensor::mean_of(&refs)
    }
}

/// Load vectors for the tokens of `vocab` from a whitespace-separated text file.
///
/// Tokens missing from the file, and the unknown token, get U(-0.003, 0.003)
/// rows drawn from `rng` in index order.
pub fn load_pretrained<T: Real>(
    path: &Path,
    vocab: &Vocabulary,
    rng: &mut SeededRng,
) -> Result<EmbeddingTable<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let display = path.display().to_string();
    let mut dim: Option<usize> = None;
    let mut found: Vec<Option<Vec<T>>> = vec![None; vocab.len()];

    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();

        if line_no == 1
            && values.len() == 1
            && token.parse::<u64>().is_ok()
            && values[0].parse::<u64>().is_ok()
        {
            continue;
        }

        match dim {
            None => {
                if values.is_empty() {
                    return Err(Error::Format {
                        path: display,
                        line: line_no,
                        message: "token without vector values".into(),
                    });
                }
                dim = Some(values.len());
            }
            Some(d) if d != values.len() => {
                return Err(Error::Format {
                    path: display,
                    line: line_no,
                    message: format!("expected {d} values, found {}", values.len()),
                });
            }
            Some(_) => {}
        }

        let Some(idx) = vocab.get(token) else { continue };
        if idx == 0 || found[idx].is_some() {
            continue;
        }
        let mut row = Vec::with_capacity(values.len());
        for v in &values {
            let x: f64 = v.parse().map_err(|_| Error::Format {
                path: display.clone(),
                line: line_no,
                message: format!("not a number: {v:?}"),
            })?;
            if !x.is_finite() {
                return Err(Error::Format {
                    path: display.clone(),
                    line: line_no,
                    message: format!("non-finite value {v:?}"),
                });
            }
            row.push(T::of(x));
        }
        found[idx] = Some(row);
    }

    let dim = dim.ok_or_else(|| Error::Format {
        path: display,
        line: 0,
        message: "file contains no vectors".into(),
    })?;
    let mut matrix = Tensor::zeros(vocab.len(), dim);
    for (idx, row) in found.into_iter().enumerate() {
        match row {
            Some(values) => matrix.row_mut(idx).copy_from_slice(&values),
            None => {
                for v in matrix.row_mut(idx) {
                    *v = T::of(rng.uniform(-OOV_INIT_BOUND, OOV_INIT_BOUND));
                }
            }
        }
    }
    Ok(EmbeddingTable {
        matrix,
        trainable: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn vocab(words: &[&str]) -> Vocabulary {
        let mut v = Vocabulary::new(true);
        for w in words {
            v.insert(w);
        }
        v
    }

    #[test]
    fn copies_known_rows_and_samples_the_rest() {
        let f = write_tmp("good 0.1 0.2\n");
        let v = vocab(&["good"]);
        let t: EmbeddingTable = load_pretrained(f.path(), &v, &mut SeededRng::new(1)).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.lookup(&v, "good").data(), &[0.1, 0.2]);
        assert!(t
            .row(0)
            .data()
            .iter()
            .all(|x| (-0.003..=0.003).contains(x)));
    }

    #[test]
    fn inconsistent_dimension_reports_line() {
        let f = write_tmp("a 0.1 0.2\nb 0.1 0.2 0.3\n");
        let err = load_pretrained::<f64>(f.path(), &vocab(&["a"]), &mut SeededRng::new(1))
            .unwrap_err();
        match err {
            Error::Format { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_line_is_skipped() {
        let f = write_tmp("2 3\nx 1 2 3\ny 4 5 6\n");
        let v = vocab(&["x", "y"]);
        let t: EmbeddingTable = load_pretrained(f.path(), &v, &mut SeededRng::new(1)).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.lookup(&v, "y").data(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_pretrained::<f64>(
            Path::new("/definitely/not/here.txt"),
            &vocab(&[]),
            &mut SeededRng::new(1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn loading_is_deterministic() {
        let f = write_tmp("a 0.5 0.5\n");
        let v = vocab(&["a", "b", "c"]);
        let t1: EmbeddingTable = load_pretrained(f.path(), &v, &mut SeededRng::new(9)).unwrap();
        let t2: EmbeddingTable = load_pretrained(f.path(), &v, &mut SeededRng::new(9)).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn unknown_tokens_map_to_row_zero_and_case_folds() {
        let f = write_tmp("good 1 2\n");
        let v = vocab(&["good"]);
        let t: EmbeddingTable = load_pretrained(f.path(), &v, &mut SeededRng::new(1)).unwrap();
        assert_eq!(t.lookup(&v, "GOOD").data(), &[1.0, 2.0]);
        assert_eq!(t.lookup(&v, "never-seen"), t.row(0));
    }

    #[test]
    fn target_vector_is_mean() {
        let f = write_tmp("harry 1 3\npotter 3 5\n");
        let v = vocab(&["harry", "potter"]);
        let t: EmbeddingTable = load_pretrained(f.path(), &v, &mut SeededRng::new(1)).unwrap();
        assert_eq!(t.target_vector(&v, &["harry", "potter"]).unwrap().data(), &[2.0, 4.0]);
        assert_eq!(t.target_vector(&v, &["potter"]).unwrap().data(), &[3.0, 5.0]);
        assert!(t.target_vector::<&str>(&v, &[]).is_err());
    }

    #[test]
    fn vocabulary_round_trips_through_text() {
        let v = vocab(&["the", "Camera", "is"]);
        let f = tempfile::NamedTempFile::new().unwrap();
        v.save(f.path()).unwrap();
        let back = Vocabulary::load(f.path(), true).unwrap();
        assert_eq!(v, back);
        assert_eq!(back.token(2), Some("camera"));
    }
}
