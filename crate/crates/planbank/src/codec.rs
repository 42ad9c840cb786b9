//! Minimal little-endian binary reader/writer used by the versioned on-disk
//! formats (scenario files, memory snapshots, encoder checkpoints). Decode
//! errors always carry the byte offset at which decoding failed.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("truncated input at byte {offset}: needed {needed} more byte(s)")]
    Truncated { offset: usize, needed: usize },
    #[error("unsupported format version {found} at byte {offset} (expected {expected})")]
    Version {
        offset: usize,
        found: u32,
        expected: u32,
    },
    #[error("invalid value at byte {offset}: {what}")]
    Invalid { offset: usize, what: String },
}

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_bool(&mut self, v: bool) {
        self.buf.push(v as u8);
    }

    pub fn put_u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_str(&mut self, s: &str) {
        self.put_u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn put_f64_slice(&mut self, vs: &[f64]) {
        self.put_u32(vs.len() as u32);
        for &v in vs {
            self.put_f64(v);
        }
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.pos + n > self.buf.len() {
            return Err(CodecError::Truncated {
                offset: self.pos,
                needed: self.pos + n - self.buf.len(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn get_u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn get_bool(&mut self) -> Result<bool, CodecError> {
        let offset = self.pos;
        match self.get_u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(CodecError::Invalid {
                offset,
                what: format!("expected bool 0/1, got {v}"),
            }),
        }
    }

    pub fn get_u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn get_u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn get_u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn get_f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn get_str(&mut self) -> Result<String, CodecError> {
        let offset = self.pos;
        let n = self.get_u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| CodecError::Invalid {
            offset,
            what: format!("non-utf8 string: {e}"),
        })
    }

    pub fn get_f64_vec(&mut self) -> Result<Vec<f64>, CodecError> {
        let n = self.get_u32()? as usize;
        let mut out = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            out.push(self.get_f64()?);
        }
        Ok(out)
    }

    /// Reads a leading `u32` version tag and checks it.
    pub fn expect_version(&mut self, expected: u32) -> Result<(), CodecError> {
        let offset = self.pos;
        let found = self.get_u32()?;
        if found != expected {
            return Err(CodecError::Version {
                offset,
                found,
                expected,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_primitives() {
        let mut w = Writer::new();
        w.put_u32(7);
        w.put_f64(-0.125);
        w.put_str("hello");
        w.put_bool(true);
        w.put_f64_slice(&[1.0, 2.5]);
        let bytes = w.into_bytes();
        let mut r = Reader::new(&bytes);
        assert_eq!(r.get_u32().unwrap(), 7);
        assert_eq!(r.get_f64().unwrap(), -0.125);
        assert_eq!(r.get_str().unwrap(), "hello");
        assert!(r.get_bool().unwrap());
        assert_eq!(r.get_f64_vec().unwrap(), vec![1.0, 2.5]);
        assert!(r.is_empty());
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = 3u32.to_le_bytes();
        let mut r = Reader::new(&bytes);
        r.get_u32().unwrap();
        match r.get_f64() {
            Err(CodecError::Truncated { offset, needed }) => {
                assert_eq!(offset, 4);
                assert_eq!(needed, 8);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_reports_found_and_expected() {
        let bytes = 9u32.to_le_bytes();
        let mut r = Reader::new(&bytes);
        match r.expect_version(1) {
            Err(CodecError::Version {
                offset,
                found,
                expected,
            }) => {
                assert_eq!((offset, found, expected), (0, 9, 1));
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }
}
