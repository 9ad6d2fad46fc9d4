//! Shared framing for the little-endian `TXSG` binary files.

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"TXSG";

#[derive(Debug, Error)]
pub enum BinError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {found} (expected {expected})")]
    VersionUnsupported { found: u16, expected: u16 },
    #[error("file truncated at byte {0}")]
    TruncatedFile(usize),
    #[error("{0}")]
    Malformed(String),
}

#[derive(Default)]
pub struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn with_header(version: u16) -> Self {
        let mut w = Self::default();
        w.buf.extend_from_slice(MAGIC);
        w.u16(version);
        w
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
}

pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version.
    pub fn open(data: &'a [u8], version: u16) -> Result<Self, BinError> {
        let mut r = Self { data, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if &magic != MAGIC {
            return Err(BinError::BadMagic(magic));
        }
        let found = r.u16()?;
        if found != version {
            return Err(BinError::VersionUnsupported {
                found,
                expected: version,
            });
        }
        Ok(r)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], BinError> {
        if self.pos + n > self.data.len() {
            return Err(BinError::TruncatedFile(self.data.len()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u16(&mut self) -> Result<u16, BinError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, BinError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>, BinError> {
        let raw = self.take(n.checked_mul(4).ok_or(BinError::TruncatedFile(self.data.len()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn is_at_end(&self) -> bool {
        self.pos == self.data.len()
    }
}
