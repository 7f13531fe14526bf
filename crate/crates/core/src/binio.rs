//! Little-endian framing shared by the dataset and checkpoint formats:
//! magic, version, body, trailing CRC32 over everything before it.

use crate::error::FormatError;

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&version.to_le_bytes());
        Writer { buf }
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, vs: &[f32]) {
        self.buf.reserve(vs.len() * 4);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version and positions the reader after them.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4], version: u32) -> Result<Self, FormatError> {
        let mut r = Reader { bytes, pos: 0 };
        let found: [u8; 4] = r.take(4)?.try_into().unwrap();
        if &found != magic {
            return Err(FormatError::BadMagic { expected: *magic, found });
        }
        let v = r.u32()?;
        if v != version {
            return Err(FormatError::VersionMismatch { expected: version, found: v });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or_else(|| FormatError::Header("length overflow".into()))?;
        if end > self.bytes.len() {
            return Err(FormatError::Truncated { expected: end, found: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Once the header is parsed the body length is known; verifies total size
    /// (body + CRC) and the checksum before any body value is decoded.
    pub fn expect_body(&self, body_bytes: usize) -> Result<(), FormatError> {
        let expected = self
            .pos
            .checked_add(body_bytes)
            .and_then(|v| v.checked_add(4))
            .ok_or_else(|| FormatError::Header("length overflow".into()))?;
        let found = self.bytes.len();
        if found < expected {
            return Err(FormatError::Truncated { expected, found });
        }
        if found > expected {
            return Err(FormatError::TrailingBytes { extra: found - expected });
        }
        let stored = u32::from_le_bytes(self.bytes[found - 4..].try_into().unwrap());
        let computed = crc32fast::hash(&self.bytes[..found - 4]);
        if stored != computed {
            return Err(FormatError::Crc { stored, computed });
        }
        Ok(())
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| FormatError::Header("length overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}
