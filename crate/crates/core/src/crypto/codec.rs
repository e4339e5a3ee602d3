//! Length-prefixed binary encoding.
//!
//! Every variable-length field is written as a big-endian `u32` length
//! followed by the raw bytes. Fixed-width integers are big-endian. The same
//! encoding doubles as the canonical input for signatures, so two values
//! encode equally iff every field is equal.

use super::CryptoError;

#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts a buffer with a domain-separation tag.
    pub fn tagged(tag: &str) -> Self {
        let mut w = Self::new();
        w.bytes(tag.as_bytes());
        w
    }

    pub fn bytes(&mut self, data: &[u8]) -> &mut Self {
        let len = u32::try_from(data.len()).expect("field longer than 4 GiB");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(data);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct Reader<'a> {
    data: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CryptoError> {
        if self.data.len() < n {
            return Err(CryptoError::Parse(format!("need {n} bytes, {} left", self.data.len())));
        }
        let (head, tail) = self.data.split_at(n);
        self.data = tail;
        Ok(head)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CryptoError> {
        let len = u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as usize;
        self.take(len)
    }

    pub fn u64(&mut self) -> Result<u64, CryptoError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn u8(&mut self) -> Result<u8, CryptoError> {
        Ok(self.take(1)?[0])
    }

    /// Fails unless every byte has been consumed.
    pub fn finish(self) -> Result<(), CryptoError> {
        if self.data.is_empty() {
            Ok(())
        } else {
            Err(CryptoError::Parse(format!("{} trailing bytes", self.data.len())))
        }
    }
}
