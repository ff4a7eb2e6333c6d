//! Length-prefixed, big-endian byte encodings for keys, signatures and
//! ciphertexts.

use crate::crypto_suite::{
    decode_g1, decode_g2, decode_gt, decode_scalar, encode_g1, encode_g2, encode_gt, encode_scalar,
    Gt, Scalar, G1, G2,
};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated input while reading {0}")]
    Truncated(&'static str),
    #[error("bad magic: expected {expected:?}")]
    Magic { expected: &'static str },
    #[error("invalid {0}")]
    Invalid(&'static str),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &str) -> Self {
        let mut w = Self::default();
        w.bytes(magic.as_bytes());
        w
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
        self
    }

    pub fn g1(&mut self, p: &G1) -> &mut Self {
        self.buf.extend_from_slice(&encode_g1(p));
        self
    }

    pub fn g2(&mut self, p: &G2) -> &mut Self {
        self.buf.extend_from_slice(&encode_g2(p));
        self
    }

    pub fn gt(&mut self, x: &Gt) -> &mut Self {
        self.buf.extend_from_slice(&encode_gt(x));
        self
    }

    pub fn scalar(&mut self, s: &Scalar) -> &mut Self {
        self.buf.extend_from_slice(&encode_scalar(s));
        self
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }
}

pub struct Reader<'a> {
    rest: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], magic: &'static str) -> Result<Self, DecodeError> {
        let mut r = Self { rest: bytes };
        let m = r.bytes("magic")?;
        if m != magic.as_bytes() {
            return Err(DecodeError::Magic { expected: magic });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DecodeError> {
        if self.rest.len() < n {
            return Err(DecodeError::Truncated(what));
        }
        let (head, tail) = self.rest.split_at(n);
        self.rest = tail;
        Ok(head)
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8, DecodeError> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self, what: &'static str) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn bytes(&mut self, what: &'static str) -> Result<&'a [u8], DecodeError> {
        let n = self.u32(what)? as usize;
        self.take(n, what)
    }

    pub fn g1(&mut self, what: &'static str) -> Result<G1, DecodeError> {
        decode_g1(self.take(crate::crypto_suite::G1_BYTES, what)?)
            .map_err(|_| DecodeError::Invalid(what))
    }

    pub fn g2(&mut self, what: &'static str) -> Result<G2, DecodeError> {
        decode_g2(self.take(crate::crypto_suite::G2_BYTES, what)?)
            .map_err(|_| DecodeError::Invalid(what))
    }

    pub fn gt(&mut self, what: &'static str) -> Result<Gt, DecodeError> {
        decode_gt(self.take(crate::crypto_suite::GT_BYTES, what)?)
            .map_err(|_| DecodeError::Invalid(what))
    }

    pub fn scalar(&mut self, what: &'static str) -> Result<Scalar, DecodeError> {
        decode_scalar(self.take(crate::crypto_suite::SCALAR_BYTES, what)?)
            .map_err(|_| DecodeError::Invalid(what))
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            Err(DecodeError::Trailing(self.rest.len()))
        }
    }
}
