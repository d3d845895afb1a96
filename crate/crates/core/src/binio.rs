//! Little-endian binary container helpers shared by the `CSID`, `CSIF` and `CSIM`
//! file formats.
//!
//! Every container is `magic (4 bytes) | u32 version | body | u32 CRC32`, where the
//! checksum covers every byte before it. Files are written through a temp file and
//! renamed into place.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic or version: expected {expected} v{expected_version}, found {found:?} v{found_version}")]
    Version {
        expected: &'static str,
        expected_version: u32,
        found: [u8; 4],
        found_version: u32,
    },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("malformed metadata: {0}")]
    Meta(String),
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl FormatError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        FormatError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Append-only byte buffer with typed little-endian writes.
#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn with_header(magic: &[u8; 4], version: u32) -> Self {
        let mut w = ByteWriter::default();
        w.buf.extend_from_slice(magic);
        w.put_u32(version);
        w
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

    pub fn put_f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.put_f64(*v);
        }
    }

    pub fn put_bytes(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Length-prefixed (u64) blob.
    pub fn put_blob(&mut self, bytes: &[u8]) {
        self.put_u64(bytes.len() as u64);
        self.put_bytes(bytes);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Appends the CRC32 trailer and returns the finished file image.
    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.put_u32(crc);
        self.buf
    }
}

/// Cursor over a complete file image.
#[derive(Debug)]
pub struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    /// Checks magic and version. The checksum is verified separately with
    /// [`ByteReader::verify_checksum`] once the caller knows the expected length.
    pub fn open(
        bytes: &'a [u8],
        magic: &'static [u8; 4],
        version: u32,
    ) -> Result<Self, FormatError> {
        let mut r = ByteReader { bytes, pos: 0 };
        let found: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        let found_version = r.u32()?;
        if &found != magic || found_version != version {
            return Err(FormatError::Version {
                expected: std::str::from_utf8(magic).unwrap_or("????"),
                expected_version: version,
                found,
                found_version,
            });
        }
        Ok(r)
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn total_len(&self) -> usize {
        self.bytes.len()
    }

    /// Fails with [`FormatError::Truncated`] unless the image is exactly
    /// `expected_total` bytes long.
    pub fn expect_total_len(&self, expected_total: u64) -> Result<(), FormatError> {
        let actual = self.bytes.len() as u64;
        if actual != expected_total {
            return Err(FormatError::Truncated {
                expected: expected_total,
                actual,
            });
        }
        Ok(())
    }

    pub fn verify_checksum(&self) -> Result<(), FormatError> {
        if self.bytes.len() < 4 {
            return Err(FormatError::Truncated {
                expected: 4,
                actual: self.bytes.len() as u64,
            });
        }
        let split = self.bytes.len() - 4;
        let stored = u32::from_le_bytes(self.bytes[split..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&self.bytes[..split]);
        if stored != computed {
            return Err(FormatError::Checksum { stored, computed });
        }
        Ok(())
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated {
            expected: u64::MAX,
            actual: self.bytes.len() as u64,
        })?;
        if end > self.bytes.len() {
            return Err(FormatError::Truncated {
                expected: end as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let raw = self.take(n.checked_mul(8).ok_or(FormatError::Truncated {
            expected: u64::MAX,
            actual: self.bytes.len() as u64,
        })?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn blob(&mut self) -> Result<&'a [u8], FormatError> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| FormatError::Truncated {
            expected: n,
            actual: self.bytes.len() as u64,
        })?;
        self.take(n)
    }
}

/// Writes `bytes` to `path` via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| FormatError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| FormatError::io(&tmp, e))?;
        f.sync_all().map_err(|e| FormatError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| FormatError::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(|e| FormatError::io(path, e))
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
