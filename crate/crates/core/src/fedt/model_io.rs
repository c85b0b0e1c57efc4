//! Versioned binary model file.
//!
//! ```text
//! magic        8 bytes "FEDTMODL"
//! version      u16     1
//! body_len     u64     bytes between this field and the trailing crc
//! fingerprint  32 bytes
//! fp_crc       u32     CRC-32 of the fingerprint alone
//! scalar_bits  u8      32 or 64 (width the model was trained in)
//! n_features   u32
//! rounds u32, alpha f64, beta f64, learning_rate f64, max_depth u32,
//! min_child_hessian f64, pos_weight f64 (NaN = derived from data), cutoff f64
//! base_score   f64
//! n_trees      u32
//! per tree: n_nodes u32, per node: tag u8
//!           0 = leaf  { weight f64 }
//!           1 = split { feature u32, threshold f64, left u32, right u32 }
//! crc32        u32     over every preceding byte
//! ```
//!
//! All integers and floats are big-endian; floats are stored as f64 bit
//! patterns, which is lossless for both f32 and f64 models.

use thiserror::Error;

use super::{FedtModel, Hyperparameters, Node, RegressionTree};
use crate::codec::{split_crc, ByteReader, ByteWriter, CodecError};
use crate::features::Fingerprint;
use crate::Scalar;

pub const MODEL_MAGIC: &[u8; 8] = b"FEDTMODL";
pub const MODEL_VERSION: u16 = 1;
const HEADER_LEN: usize = 8 + 2 + 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelIoError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0} (expected {MODEL_VERSION})")]
    UnsupportedVersion(u16),
    #[error("model file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("model fingerprint field is corrupt")]
    FingerprintCorrupt,
    #[error("model file checksum mismatch")]
    Checksum,
    #[error("malformed model file: {0}")]
    Malformed(String),
}

impl From<CodecError> for ModelIoError {
    fn from(e: CodecError) -> Self {
        ModelIoError::Malformed(e.to_string())
    }
}

pub fn save_model<T: Scalar>(model: &FedtModel<T>) -> Vec<u8> {
    let mut body = ByteWriter::new();
    body.bytes(&model.fingerprint.0);
    body.u32(crc32fast::hash(&model.fingerprint.0));
    body.u8((std::mem::size_of::<T>() * 8) as u8);
    body.u32(model.n_features as u32);
    let h = &model.hyper;
    let f = |v: T| v.to_f64_lossless();
    body.u32(h.rounds as u32);
    body.f64(f(h.alpha));
    body.f64(f(h.beta));
    body.f64(f(h.learning_rate));
    body.u32(h.max_depth as u32);
    body.f64(f(h.min_child_hessian));
    body.f64(h.pos_weight.map_or(f64::NAN, f));
    body.f64(f(h.cutoff));
    body.f64(f(model.base_score));
    body.u32(model.trees.len() as u32);
    for tree in &model.trees {
        body.u32(tree.nodes().len() as u32);
        for node in tree.nodes() {
            match *node {
                Node::Leaf { weight } => {
                    body.u8(0);
                    body.f64(f(weight));
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    body.u8(1);
                    body.u32(feature as u32);
                    body.f64(f(threshold));
                    body.u32(left as u32);
                    body.u32(right as u32);
                }
            }
        }
    }
    let body = body.into_inner();
    let mut out = ByteWriter::new();
    out.bytes(MODEL_MAGIC);
    out.u16(MODEL_VERSION);
    out.u64(body.len() as u64);
    out.bytes(&body);
    out.finish_with_crc()
}

pub fn load_model<T: Scalar>(data: &[u8]) -> Result<FedtModel<T>, ModelIoError> {
    let magic_len = MODEL_MAGIC.len().min(data.len());
    if data[..magic_len] != MODEL_MAGIC[..magic_len] {
        return Err(ModelIoError::BadMagic);
    }
    if data.len() < HEADER_LEN {
        return Err(ModelIoError::Truncated {
            expected: HEADER_LEN,
            found: data.len(),
        });
    }
    let mut r = ByteReader::new(&data[8..HEADER_LEN]);
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(ModelIoError::UnsupportedVersion(version));
    }
    let body_len = usize::try_from(r.u64()?).map_err(|_| ModelIoError::Malformed("body length overflow".into()))?;
    let expected = HEADER_LEN
        .checked_add(body_len)
        .and_then(|v| v.checked_add(4))
        .ok_or_else(|| ModelIoError::Malformed("body length overflow".into()))?;
    if data.len() < expected {
        return Err(ModelIoError::Truncated {
            expected,
            found: data.len(),
        });
    }
    if data.len() > expected {
        return Err(ModelIoError::Malformed(format!("{} trailing bytes", data.len() - expected)));
    }
    let body = &data[HEADER_LEN..HEADER_LEN + body_len];
    let mut r = ByteReader::new(body);
    let fingerprint = Fingerprint(r.fixed::<32>()?);
    if r.u32()? != crc32fast::hash(&fingerprint.0) {
        return Err(ModelIoError::FingerprintCorrupt);
    }
    let (_, stored, computed) = split_crc(data).ok_or(ModelIoError::Checksum)?;
    if stored != computed {
        return Err(ModelIoError::Checksum);
    }

    let bits = r.u8()?;
    if bits != 32 && bits != 64 {
        return Err(ModelIoError::Malformed(format!("scalar width {bits}")));
    }
    let c = T::from_f64_lossy;
    let n_features = r.u32()? as usize;
    let rounds = r.u32()? as usize;
    let alpha = c(r.f64()?);
    let beta = c(r.f64()?);
    let learning_rate = c(r.f64()?);
    let max_depth = r.u32()? as usize;
    let min_child_hessian = c(r.f64()?);
    let pos_weight = r.f64()?;
    let cutoff = c(r.f64()?);
    let hyper = Hyperparameters {
        rounds,
        alpha,
        beta,
        learning_rate,
        max_depth,
        min_child_hessian,
        pos_weight: (!pos_weight.is_nan()).then(|| c(pos_weight)),
        cutoff,
    };
    hyper.validate().map_err(|e| ModelIoError::Malformed(e.to_string()))?;
    let base_score = c(r.f64()?);
    let n_trees = r.u32()? as usize;
    if n_trees == 0 {
        return Err(ModelIoError::Malformed("model has no trees".into()));
    }
    let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
    for t in 0..n_trees {
        let n_nodes = r.u32()? as usize;
        let mut nodes = Vec::with_capacity(n_nodes.min(1 << 16));
        for _ in 0..n_nodes {
            nodes.push(match r.u8()? {
                0 => Node::Leaf { weight: c(r.f64()?) },
                1 => {
                    let feature = r.u32()? as usize;
                    if feature >= n_features {
                        return Err(ModelIoError::Malformed(format!(
                            "tree {t} splits on feature {feature} >= {n_features}"
                        )));
                    }
                    Node::Split {
                        feature,
                        threshold: c(r.f64()?),
                        left: r.u32()? as usize,
                        right: r.u32()? as usize,
                    }
                }
                tag => return Err(ModelIoError::Malformed(format!("tree {t}: node tag {tag}"))),
            });
        }
        trees.push(RegressionTree::from_nodes(nodes).map_err(|e| ModelIoError::Malformed(format!("tree {t}: {e}")))?);
    }
    if r.remaining() != 0 {
        return Err(ModelIoError::Malformed("unparsed bytes in body".into()));
    }
    Ok(FedtModel {
        trees,
        hyper,
        base_score,
        n_features,
        fingerprint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedt::{train, TrainingSet};

    fn trained() -> FedtModel<f64> {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, ((i * 13) % 7) as f64]).collect();
        let labels: Vec<bool> = (0..50).map(|i| i > 30 || i % 7 == 0).collect();
        let data = TrainingSet::from_rows(&rows, &labels, Fingerprint([3; 32])).unwrap();
        train(&data, &Hyperparameters { rounds: 8, ..Default::default() }).unwrap()
    }

    #[test]
    fn round_trip() {
        let m = trained();
        let back: FedtModel<f64> = load_model(&save_model(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn round_trip_f32() {
        let rows: Vec<Vec<f32>> = (0..30).map(|i| vec![i as f32 * 0.1]).collect();
        let labels: Vec<bool> = (0..30).map(|i| i > 12).collect();
        let data = TrainingSet::from_rows(&rows, &labels, Fingerprint::default()).unwrap();
        let m = train(&data, &Hyperparameters { rounds: 4, ..Default::default() }).unwrap();
        let back: FedtModel<f32> = load_model(&save_model(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn distinct_errors() {
        let bytes = save_model(&trained());
        assert_eq!(load_model::<f64>(b"GARBAGE!....").unwrap_err(), ModelIoError::BadMagic);

        let mut v = bytes.clone();
        v[9] = 9;
        assert_eq!(load_model::<f64>(&v).unwrap_err(), ModelIoError::UnsupportedVersion(9));

        for cut in [4, 12, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(load_model::<f64>(&bytes[..cut]).unwrap_err(), ModelIoError::Truncated { .. }),
                "cut at {cut}"
            );
        }

        let mut fp = bytes.clone();
        fp[HEADER_LEN + 5] ^= 0x10;
        assert_eq!(load_model::<f64>(&fp).unwrap_err(), ModelIoError::FingerprintCorrupt);

        let mut body = bytes.clone();
        let i = bytes.len() - 20;
        body[i] ^= 0x01;
        assert_eq!(load_model::<f64>(&body).unwrap_err(), ModelIoError::Checksum);
    }
}
