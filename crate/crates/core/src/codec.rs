//! Canonical binary encoding.
//!
//! Every hashed or signed value goes through this encoding, so it has to be
//! injective and stable across platforms:
//!
//! * byte strings and text: 4-byte big-endian length, then the raw bytes
//! * integers: 8-byte big-endian
//! * optional values: one presence byte (`0` or `1`), then the value
//! * lists: 4-byte big-endian element count, then the elements
//! * structs: their fields in declaration order, with no extra framing
//!
//! Decoding is strict. Any deviation from the canonical form is an error,
//! so `decode(encode(x)) == x` and `encode(decode(b)) == b` for every `b`
//! that decodes.

use thiserror::Error;

/// Upper bound for a single length-prefixed field. Anything larger is
/// rejected before allocation.
pub const MAX_FIELD_LEN: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("unexpected end of input at offset {offset}: needed {needed} more bytes")]
    UnexpectedEnd { offset: usize, needed: usize },
    #[error("field length {len} at offset {offset} exceeds limit")]
    FieldTooLong { offset: usize, len: usize },
    #[error("expected {expected} bytes for {what}, found {found}")]
    WrongLength {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid presence flag {flag:#04x} at offset {offset}")]
    InvalidFlag { offset: usize, flag: u8 },
    #[error("unknown {what} tag {tag:#04x}")]
    UnknownTag { what: &'static str, tag: u8 },
    #[error("invalid utf-8 text at offset {offset}")]
    InvalidText { offset: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("{remaining} trailing bytes after value")]
    TrailingBytes { remaining: usize },
    #[error("bad magic bytes")]
    BadMagic,
}

/// Appends canonical field encodings to a buffer.
#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(cap: usize) -> Self {
        Self {
            buf: Vec::with_capacity(cap),
        }
    }

    pub fn bytes(&mut self, value: &[u8]) -> &mut Self {
        let len = u32::try_from(value.len()).expect("field longer than u32::MAX");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(value);
        self
    }

    pub fn text(&mut self, value: &str) -> &mut Self {
        self.bytes(value.as_bytes())
    }

    pub fn u64(&mut self, value: u64) -> &mut Self {
        self.buf.extend_from_slice(&value.to_be_bytes());
        self
    }

    /// Single raw byte, used for union tags.
    pub fn tag(&mut self, tag: u8) -> &mut Self {
        self.buf.push(tag);
        self
    }

    pub fn count(&mut self, n: usize) -> &mut Self {
        let n = u32::try_from(n).expect("list longer than u32::MAX");
        self.buf.extend_from_slice(&n.to_be_bytes());
        self
    }

    pub fn option<T: Encode>(&mut self, value: Option<&T>) -> &mut Self {
        match value {
            None => self.tag(0),
            Some(v) => {
                self.tag(1);
                v.encode_to(self);
                self
            }
        }
    }

    pub fn list<T: Encode>(&mut self, items: &[T]) -> &mut Self {
        self.count(items.len());
        for item in items {
            item.encode_to(self);
        }
        self
    }

    pub fn value<T: Encode + ?Sized>(&mut self, value: &T) -> &mut Self {
        value.encode_to(self);
        self
    }

    /// Raw bytes with no length prefix. Only for magic numbers and frames.
    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor over canonical bytes.
#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    input: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Self { input, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.input.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::UnexpectedEnd {
                offset: self.pos,
                needed: n - self.remaining(),
            });
        }
        let out = &self.input[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        let raw = self.take(4)?;
        Ok(u32::from_be_bytes(raw.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let offset = self.pos;
        let len = self.u32()? as usize;
        if len > MAX_FIELD_LEN {
            return Err(CodecError::FieldTooLong { offset, len });
        }
        self.take(len)
    }

    pub fn byte_vec(&mut self) -> Result<Vec<u8>, CodecError> {
        self.bytes().map(<[u8]>::to_vec)
    }

    pub fn fixed<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], CodecError> {
        let raw = self.bytes()?;
        raw.try_into().map_err(|_| CodecError::WrongLength {
            what,
            expected: N,
            found: raw.len(),
        })
    }

    pub fn text(&mut self) -> Result<String, CodecError> {
        let offset = self.pos;
        let raw = self.bytes()?;
        std::str::from_utf8(raw)
            .map(str::to_owned)
            .map_err(|_| CodecError::InvalidText { offset })
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        let raw = self.take(8)?;
        Ok(u64::from_be_bytes(raw.try_into().unwrap()))
    }

    pub fn tag(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn count(&mut self) -> Result<usize, CodecError> {
        Ok(self.u32()? as usize)
    }

    pub fn option<T: Decode>(&mut self) -> Result<Option<T>, CodecError> {
        let offset = self.pos;
        match self.tag()? {
            0 => Ok(None),
            1 => T::decode_from(self).map(Some),
            flag => Err(CodecError::InvalidFlag { offset, flag }),
        }
    }

    pub fn list<T: Decode>(&mut self) -> Result<Vec<T>, CodecError> {
        let n = self.count()?;
        // Never trust the count for preallocation.
        let mut out = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            out.push(T::decode_from(self)?);
        }
        Ok(out)
    }

    pub fn value<T: Decode>(&mut self) -> Result<T, CodecError> {
        T::decode_from(self)
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        self.take(n)
    }

    pub fn finish(self) -> Result<(), CodecError> {
        match self.remaining() {
            0 => Ok(()),
            remaining => Err(CodecError::TrailingBytes { remaining }),
        }
    }
}

pub trait Encode {
    fn encode_to(&self, enc: &mut Encoder);

    fn canonical_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_to(&mut enc);
        enc.finish()
    }
}

pub trait Decode: Sized {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError>;

    /// Decodes a complete value; trailing bytes are an error.
    fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(bytes);
        let value = Self::decode_from(&mut dec)?;
        dec.finish()?;
        Ok(value)
    }
}

/// Free-function form of [`Encode::canonical_bytes`].
pub fn canonical_encode<T: Encode + ?Sized>(value: &T) -> Vec<u8> {
    let mut enc = Encoder::new();
    value.encode_to(&mut enc);
    enc.finish()
}

impl Encode for Vec<u8> {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.bytes(self);
    }
}

impl Decode for Vec<u8> {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        dec.byte_vec()
    }
}

impl Encode for [u8] {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.bytes(self);
    }
}

impl Encode for String {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.text(self);
    }
}

impl Encode for str {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.text(self);
    }
}

impl Decode for String {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        dec.text()
    }
}

impl Encode for u64 {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.u64(*self);
    }
}

impl Decode for u64 {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        dec.u64()
    }
}

/// 4-byte big-endian length frame around a body, as used on the wire.
pub fn frame(body: &[u8]) -> Vec<u8> {
    let len = u32::try_from(body.len()).expect("frame longer than u32::MAX");
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(body);
    out
}

/// Inverse of [`frame`]. The whole input must be exactly one frame.
pub fn unframe(input: &[u8]) -> Result<&[u8], CodecError> {
    let mut dec = Decoder::new(input);
    let body = dec.bytes()?;
    dec.finish()?;
    Ok(body)
}
