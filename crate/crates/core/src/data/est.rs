use std::path::Path;

use super::{DataError, EchoSequence, Result, ValueSpace};

pub const EST_MAGIC: &[u8; 4] = b"EST1";
pub const EST_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 3 + 1 + 2 + 8;

/// Serializes a sequence: magic, version, frame count, height, width, value
/// space, frame interval, seed, then little-endian `f32` frames.
pub fn encode_est(seq: &EchoSequence) -> Result<Vec<u8>> {
    let dim = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| DataError::Contract(format!("{what} {v} exceeds u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + seq.values().len() * 4);
    out.extend_from_slice(EST_MAGIC);
    out.extend_from_slice(&EST_VERSION.to_le_bytes());
    out.extend_from_slice(&dim(seq.len(), "frame count")?.to_le_bytes());
    out.extend_from_slice(&dim(seq.height(), "height")?.to_le_bytes());
    out.extend_from_slice(&dim(seq.width(), "width")?.to_le_bytes());
    out.push(seq.value_space.code());
    out.extend_from_slice(&seq.dt_minutes.to_le_bytes());
    out.extend_from_slice(&seq.seed.to_le_bytes());
    for v in seq.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| DataError::Format {
                offset: self.bytes.len() as u64,
                detail: format!("file truncated while reading {what}"),
            })?;
        self.pos = end;
        Ok(chunk.try_into().expect("slice of length N"))
    }

    fn error(&self, at: usize, detail: String) -> DataError {
        DataError::Format {
            offset: at as u64,
            detail,
        }
    }
}

pub fn decode_est(bytes: &[u8]) -> Result<EchoSequence> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take::<4>("magic")?;
    if &magic != EST_MAGIC {
        return Err(r.error(
            0,
            format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(EST_MAGIC),
                String::from_utf8_lossy(&magic)
            ),
        ));
    }
    let version = u16::from_le_bytes(r.take("version")?);
    if version != EST_VERSION {
        return Err(r.error(4, format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 3];
    for (i, what) in ["frame count", "height", "width"].into_iter().enumerate() {
        let at = r.pos;
        let v = u32::from_le_bytes(r.take(what)?) as usize;
        if v == 0 {
            return Err(r.error(at, format!("{what} must be positive")));
        }
        dims[i] = v;
    }
    let space_at = r.pos;
    let [code] = r.take::<1>("value space")?;
    let space = ValueSpace::from_code(code)
        .ok_or_else(|| r.error(space_at, format!("unknown value space code {code}")))?;
    let dt = u16::from_le_bytes(r.take("frame interval")?);
    let seed = u64::from_le_bytes(r.take("seed")?);

    let [n, h, w] = dims;
    let count = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| r.error(6, "frame dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    let expected = count.checked_mul(4).unwrap_or(usize::MAX);
    if payload.len() < expected {
        return Err(DataError::Format {
            offset: bytes.len() as u64,
            detail: format!(
                "file truncated: {} payload bytes, header promises {expected}",
                payload.len()
            ),
        });
    }
    if payload.len() > expected {
        return Err(r.error(
            HEADER_LEN + expected,
            format!("{} trailing bytes after frames", payload.len() - expected),
        ));
    }
    let max = space.max();
    let mut values = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !(v.is_finite() && (0.0..=max).contains(&(v as f64))) {
            return Err(r.error(HEADER_LEN + 4 * i, format!("value {v} outside [0, {max}]")));
        }
        values.push(v);
    }
    let mut seq = EchoSequence::new(values, n, h, w, space)?.with_seed(seed);
    seq.dt_minutes = dt;
    Ok(seq)
}

pub fn write_est(path: &Path, seq: &EchoSequence) -> Result<()> {
    std::fs::write(path, encode_est(seq)?)?;
    Ok(())
}

pub fn read_est(path: &Path) -> Result<EchoSequence> {
    decode_est(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, Regime};

    fn sample() -> EchoSequence {
        gen_synthetic(Regime::SparseNonstationary, 3, 2, 32, 36, 99).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let seq = sample();
        let back = decode_est(&encode_est(&seq).unwrap()).unwrap();
        assert_eq!(back.values(), seq.values());
        assert_eq!((back.len(), back.height(), back.width()), (5, 32, 36));
        assert_eq!(
            (back.seed, back.dt_minutes, back.value_space),
            (99, 6, ValueSpace::Dbz)
        );

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.est");
        write_est(&path, &seq).unwrap();
        assert_eq!(read_est(&path).unwrap().values(), seq.values());
    }

    #[test]
    fn truncation_is_rejected() {
        let bytes = encode_est(&sample()).unwrap();
        for cut in [2, 10, HEADER_LEN, bytes.len() - 1] {
            match decode_est(&bytes[..cut]) {
                Err(DataError::Format { offset, .. }) => assert_eq!(offset, cut as u64),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn wrong_magic_names_expected() {
        let mut bytes = encode_est(&sample()).unwrap();
        bytes[3] = b'X';
        let err = decode_est(&bytes).unwrap_err();
        assert!(matches!(err, DataError::Format { offset: 0, .. }));
        assert!(err.to_string().contains("EST1"), "{err}");
        assert!(err.to_string().contains("ESTX"), "{err}");
    }

    #[test]
    fn out_of_range_value_reports_its_offset() {
        let mut bytes = encode_est(&sample()).unwrap();
        let at = HEADER_LEN + 4 * 7;
        bytes[at..at + 4].copy_from_slice(&80f32.to_le_bytes());
        match decode_est(&bytes) {
            Err(DataError::Format { offset, .. }) => assert_eq!(offset, at as u64),
            other => panic!("{other:?}"),
        }
        let mut bytes = encode_est(&sample()).unwrap();
        bytes.push(0);
        assert!(decode_est(&bytes).is_err());
    }
}
