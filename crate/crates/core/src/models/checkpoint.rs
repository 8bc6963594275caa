//! Binary checkpoint container.
//!
//! All integers are little-endian `u32`; strings are a `u32` byte length
//! followed by UTF-8 bytes.
//!
//! ```text
//! magic        8 bytes  "TDSENTCK"
//! version      u32      CHECKPOINT_VERSION
//! header       string   "key=value" lines: variant, combine, hidden,
//!                       embedding_dim, classes, precision,
//!                       trainable_embeddings, lowercase
//! vocab_count  u32
//! vocab        vocab_count strings, index order
//! tensor_count u32
//! tensors      name string, rows u32, cols u32, rows*cols f64 (LE bits)
//! digest       32 bytes SHA-256 of everything above
//! ```
//!
//! Tensors are the model parameters in canonical order followed by
//! `embedding`. `f32` models are widened to `f64` on save, which is exact,
//! and narrowed back on load.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Combine, Model, ModelParams, ModelShape, Variant, EMBEDDING_PARAM};
use crate::embeddings::{EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};
use crate::mathcore::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TDSENTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const DIGEST_LEN: usize = 32;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn put_tensor<T: Real>(buf: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    put_str(buf, name);
    put_u32(buf, t.rows() as u32);
    put_u32(buf, t.cols() as u32);
    for v in t.data() {
        buf.extend_from_slice(&v.to_f64().expect("real").to_le_bytes());
    }
}

pub fn encode_model<T: Real>(model: &Model<T>) -> Vec<u8> {
    let shape = model.params.shape;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    let header = format!(
        "variant={}\ncombine={}\nhidden={}\nembedding_dim={}\nclasses={}\nprecision={}\ntrainable_embeddings={}\nlowercase={}\n",
        shape.variant,
        shape.combine,
        shape.hidden,
        shape.embedding_dim,
        shape.classes,
        T::NAME,
        model.embeddings.trainable,
        model.vocab.lowercase(),
    );
    put_str(&mut buf, &header);
    put_u32(&mut buf, model.vocab.len() as u32);
    for tok in model.vocab.tokens() {
        put_str(&mut buf, tok);
    }
    let tensors = model.params.named_tensors();
    put_u32(&mut buf, tensors.len() as u32 + 1);
    for (name, t) in &tensors {
        put_tensor(&mut buf, name, t);
    }
    put_tensor(&mut buf, EMBEDDING_PARAM, model.embeddings.matrix());
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

pub fn save_model<T: Real>(path: &Path, model: &Model<T>) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Load("unexpected end of data".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Load("invalid UTF-8".into()))
    }
}

fn header_field<'h>(fields: &HashMap<&str, &'h str>, key: &str) -> Result<&'h str> {
    fields
        .get(key)
        .copied()
        .ok_or_else(|| Error::Load(format!("header lacks {key}")))
}

fn parse_num(fields: &HashMap<&str, &str>, key: &str) -> Result<usize> {
    header_field(fields, key)?
        .parse()
        .map_err(|_| Error::Load(format!("bad {key} in header")))
}

fn parse_bool(fields: &HashMap<&str, &str>, key: &str) -> Result<bool> {
    header_field(fields, key)?
        .parse()
        .map_err(|_| Error::Load(format!("bad {key} in header")))
}

pub fn decode_model<T: Real>(bytes: &[u8]) -> Result<Model<T>> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + DIGEST_LEN {
        return Err(Error::Load("file too short".into()));
    }
    if &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(Error::Load("not a checkpoint (bad magic)".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Load("checksum mismatch (truncated or corrupted)".into()));
    }

    let mut r = Reader {
        buf: body,
        pos: CHECKPOINT_MAGIC.len(),
    };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Load(format!(
            "format version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let header = r.string()?;
    let fields: HashMap<&str, &str> = header
        .lines()
        .filter_map(|l| l.split_once('='))
        .collect();
    let precision = header_field(&fields, "precision")?;
    if precision != T::NAME {
        return Err(Error::Load(format!(
            "checkpoint holds {precision} values, requested {}",
            T::NAME
        )));
    }
    let variant: Variant = header_field(&fields, "variant")?
        .parse()
        .map_err(|_| Error::Load("unknown variant in header".into()))?;
    let combine: Combine = header_field(&fields, "combine")?
        .parse()
        .map_err(|_| Error::Load("unknown combine mode in header".into()))?;
    let shape = ModelShape {
        variant,
        combine,
        hidden: parse_num(&fields, "hidden")?,
        embedding_dim: parse_num(&fields, "embedding_dim")?,
        classes: parse_num(&fields, "classes")?,
    };
    let trainable = parse_bool(&fields, "trainable_embeddings")?;
    let lowercase = parse_bool(&fields, "lowercase")?;

    let vocab_len = r.u32()? as usize;
    let mut tokens = Vec::with_capacity(vocab_len.min(1 << 20));
    for _ in 0..vocab_len {
        tokens.push(r.string()?);
    }
    let vocab = Vocabulary::from_list(tokens, lowercase).map_err(|e| Error::Load(e.to_string()))?;

    let mut params = ModelParams::<T>::zeros(shape).map_err(|e| Error::Load(e.to_string()))?;
    let mut expected: Vec<(String, (usize, usize))> = params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape()))
        .collect();
    expected.push((EMBEDDING_PARAM.to_string(), (vocab_len, shape.embedding_dim)));

    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Load(format!(
            "{variant} needs {} tensors, file has {count}",
            expected.len()
        )));
    }
    let mut embedding = None;
    for (want_name, want_shape) in &expected {
        let name = r.string()?;
        if &name != want_name {
            return Err(Error::Load(format!("expected tensor {want_name}, found {name}")));
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if (rows, cols) != *want_shape {
            return Err(Error::Load(format!(
                "{name}: shape ({rows}, {cols}) but {want_shape:?} expected"
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(T::of(r.f64()?));
        }
        let t = Tensor::from_vec(rows, cols, data)?;
        if name == EMBEDDING_PARAM {
            embedding = Some(t);
        } else {
            *params.get_mut(&name).expect("expected name") = t;
        }
    }
    if r.pos != body.len() {
        return Err(Error::Load("trailing bytes after tensors".into()));
    }
    let table = EmbeddingTable::new(embedding.expect("embedding listed"), trainable)
        .map_err(|e| Error::Load(e.to_string()))?;
    Model::new(params, vocab, table).map_err(|e| Error::Load(e.to_string()))
}

pub fn load_model<T: Real>(path: &Path) -> Result<Model<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::SeededRng;
    use crate::models::init_params;

    fn model(variant: Variant) -> Model {
        let mut vocab = Vocabulary::new(true);
        for w in ["good", "bad", "camera"] {
            vocab.insert(w);
        }
        let shape = ModelShape::new(variant, 3, 2);
        let params = init_params(shape, 5).unwrap();
        let table = EmbeddingTable::random(vocab.len(), 2, &mut SeededRng::new(1));
        Model::new(params, vocab, table).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for v in Variant::ALL {
            let m = model(v);
            let bytes = encode_model(&m);
            let back: Model = decode_model(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(encode_model(&back), bytes);
        }
    }

    #[test]
    fn f32_round_trip() {
        let m = model(Variant::TdLstm);
        let mut p32 = ModelParams::<f32>::zeros(m.params.shape).unwrap();
        for ((_, dst), (_, src)) in p32.named_tensors_mut().into_iter().zip(m.params.named_tensors()) {
            *dst = Tensor::from_vec(src.rows(), src.cols(), src.data().iter().map(|&v| v as f32).collect()).unwrap();
        }
        let emb = m.embeddings.matrix();
        let table = EmbeddingTable::new(
            Tensor::from_vec(emb.rows(), emb.cols(), emb.data().iter().map(|&v| v as f32).collect()).unwrap(),
            true,
        )
        .unwrap();
        let m32 = Model::new(p32, m.vocab.clone(), table).unwrap();
        let back: Model<f32> = decode_model(&encode_model(&m32)).unwrap();
        assert_eq!(back, m32);
        assert!(decode_model::<f64>(&encode_model(&m32)).is_err());
    }

    #[test]
    fn truncated_and_corrupted_files_fail() {
        let bytes = encode_model(&model(Variant::TcLstm));
        assert!(matches!(
            decode_model::<f64>(&bytes[..bytes.len() / 2]),
            Err(Error::Load(_))
        ));
        let mut flipped = bytes.clone();
        flipped[40] ^= 0x10;
        assert!(matches!(decode_model::<f64>(&flipped), Err(Error::Load(_))));
        assert!(matches!(decode_model::<f64>(b"garbage"), Err(Error::Load(_))));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = encode_model(&model(Variant::Lstm));
        bytes[8] = 99;
        let body_len = bytes.len() - DIGEST_LEN;
        let digest = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        let err = decode_model::<f64>(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
