use std::path::Path;

use super::{ModelConfig, ModelError, ParamStore, Result, TempEE};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TMPE";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Magic, version, the configuration as `key = value` text, then each
/// parameter as name, shape and little-endian `f32` values.
pub fn encode_checkpoint(model: &TempEE<f32>) -> Result<Vec<u8>> {
    let too_big =
        |what: &str| ModelError::Contract(format!("{what} does not fit the checkpoint format"));
    let text = model.config().to_text();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let text_len = u32::try_from(text.len()).map_err(|_| too_big("config text"))?;
    out.extend_from_slice(&text_len.to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let count = u32::try_from(model.params().len()).map_err(|_| too_big("parameter count"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in model.params().iter() {
        let name_len = u16::try_from(name.len()).map_err(|_| too_big(name))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.rank()).map_err(|_| too_big(name))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| too_big(name))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let chunk = self
            .pos
            .checked_add(n)
            .and_then(|end| self.bytes.get(self.pos..end))
            .ok_or_else(|| ModelError::Format {
                offset: self.bytes.len() as u64,
                detail: format!("file truncated while reading {what}"),
            })?;
        self.pos += n;
        Ok(chunk)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length N"))
    }

    fn error(at: usize, detail: String) -> ModelError {
        ModelError::Format {
            offset: at as u64,
            detail,
        }
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TempEE<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.array::<4>("magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Reader::error(
            0,
            format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(CHECKPOINT_MAGIC),
                String::from_utf8_lossy(&magic)
            ),
        ));
    }
    let version = u16::from_le_bytes(r.array("version")?);
    if version != CHECKPOINT_VERSION {
        return Err(Reader::error(4, format!("unsupported version {version}")));
    }
    let text_len = u32::from_le_bytes(r.array("config length")?) as usize;
    let text_at = r.pos;
    let text = std::str::from_utf8(r.take(text_len, "config text")?)
        .map_err(|e| Reader::error(text_at, format!("config text is not UTF-8: {e}")))?;
    let config = ModelConfig::from_text(text)
        .map_err(|e| Reader::error(text_at, format!("bad config block: {e}")))?;
    let count = u32::from_le_bytes(r.array("parameter count")?) as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_at = r.pos;
        let name_len = u16::from_le_bytes(r.array("name length")?) as usize;
        let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|e| Reader::error(name_at, format!("parameter name is not UTF-8: {e}")))?
            .to_string();
        if params.get(&name).is_some() {
            return Err(Reader::error(
                name_at,
                format!("duplicate parameter {name}"),
            ));
        }
        let [rank] = r.array::<1>("rank")?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(r.array("extent")?) as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(4).is_some())
            .ok_or_else(|| {
                Reader::error(name_at, format!("shape {shape:?} of {name} overflows"))
            })?;
        let data_at = r.pos;
        let data: Vec<f32> = r
            .take(numel * 4, &name)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::from_vec(&shape, data)
            .map_err(|e| Reader::error(data_at, format!("parameter {name}: {e}")))?;
        params.insert(name, t);
    }
    if r.pos != bytes.len() {
        return Err(Reader::error(
            r.pos,
            format!("{} trailing bytes after parameters", bytes.len() - r.pos),
        ));
    }
    TempEE::from_parts(config, params).map_err(|e| Reader::error(text_at, e.to_string()))
}

pub fn write_checkpoint(path: &Path, model: &TempEE<f32>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<TempEE<f32>> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionConfig;

    fn model() -> TempEE<f32> {
        let cfg = ModelConfig {
            n_in: 2,
            k_out: 3,
            image_edge: 16,
            patch: 4,
            d_model: 4,
            te_blocks: 1,
            se_blocks: 1,
            tsd_blocks: 1,
            attention: AttentionConfig {
                heads: 2,
                g: 2,
                g_prime: 2,
                alpha: 0.7,
                ..AttentionConfig::default()
            },
            ..ModelConfig::default()
        };
        TempEE::new(cfg, 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = encode_checkpoint(&m).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.params().checksum(), m.params().checksum());
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_rejected() {
        let bytes = encode_checkpoint(&model()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(ModelError::Format { offset: 0, .. })
        ));
        for cut in [3, 5, 9, 40, bytes.len() - 1] {
            match decode_checkpoint(&bytes[..cut]) {
                Err(ModelError::Format { offset, .. }) => assert_eq!(offset, cut as u64),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            decode_checkpoint(&long),
            Err(ModelError::Format { .. })
        ));
        let mut nan = bytes;
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&nan),
            Err(ModelError::Format { .. })
        ));
    }
}
