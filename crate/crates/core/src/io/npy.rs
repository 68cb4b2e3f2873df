//! NPY 1.0 reader and writer for little-endian `f4`, `u2` and `u1` arrays.
//!
//! Headers are emitted exactly as `numpy.save` writes them, so files written
//! here and files written by numpy round-trip to identical bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;
const PREAMBLE: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    U16,
    U8,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::U16 => "<u2",
            Dtype::U8 => "|u1",
        }
    }

    fn parse(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(Dtype::F32),
            "<u2" => Ok(Dtype::U16),
            "|u1" | "<u1" => Ok(Dtype::U8),
            other => Err(Error::NpyDtype(other.to_string())),
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U16 => 2,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NpyHeader {
    pub descr: String,
    pub fortran_order: bool,
    pub shape: Vec<usize>,
}

impl NpyHeader {
    fn dict_literal(&self) -> String {
        let shape = match self.shape.as_slice() {
            [] => "()".to_string(),
            [n] => format!("({n},)"),
            dims => format!(
                "({})",
                dims.iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        };
        let order = if self.fortran_order { "True" } else { "False" };
        format!(
            "{{'descr': '{}', 'fortran_order': {order}, 'shape': {shape}, }}",
            self.descr
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    U16(Vec<u16>),
    U8(Vec<u8>),
}

impl NpyData {
    pub fn dtype(&self) -> Dtype {
        match self {
            NpyData::F32(_) => Dtype::F32,
            NpyData::U16(_) => Dtype::U16,
            NpyData::U8(_) => Dtype::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            NpyData::F32(v) => v.len(),
            NpyData::U16(v) => v.len(),
            NpyData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major array with its shape.
#[derive(Clone, Debug, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn new(shape: Vec<usize>, data: NpyData) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::NpyPayload {
                expected: n * data.dtype().size(),
                found: data.len() * data.dtype().size(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn header(&self) -> NpyHeader {
        NpyHeader {
            descr: self.data.dtype().descr().to_string(),
            fortran_order: false,
            shape: self.shape.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dict = self.header().dict_literal();
        // Pad with spaces so that preamble + header + '\n' is a multiple of 64.
        let unpadded = PREAMBLE + dict.len() + 1;
        let total = unpadded.div_ceil(ALIGN) * ALIGN;
        let header_len = total - PREAMBLE;

        let mut out = Vec::with_capacity(total + self.data.len() * self.data.dtype().size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header_len as u16).to_le_bytes());
        out.extend_from_slice(dict.as_bytes());
        out.resize(total - 1, b' ');
        out.push(b'\n');
        match &self.data {
            NpyData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            NpyData::U16(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            NpyData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, offset) = parse_header(bytes)?;
        if header.fortran_order {
            return Err(Error::NpyFortranOrder);
        }
        let dtype = Dtype::parse(&header.descr)?;
        let n: usize = header.shape.iter().product();
        let payload = &bytes[offset..];
        let expected = n * dtype.size();
        if payload.len() != expected {
            return Err(Error::NpyPayload {
                expected,
                found: payload.len(),
            });
        }
        let data = match dtype {
            Dtype::F32 => NpyData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            Dtype::U16 => NpyData::U16(
                payload
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
            Dtype::U8 => NpyData::U8(payload.to_vec()),
        };
        Ok(Self {
            shape: header.shape,
            data,
        })
    }
}

/// Parses magic, version and header dict; returns the header and the payload offset.
pub fn parse_header(bytes: &[u8]) -> Result<(NpyHeader, usize)> {
    if bytes.len() < PREAMBLE || &bytes[..6] != MAGIC {
        return Err(Error::NpyMagic);
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(Error::NpyVersion(major, minor));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let end = PREAMBLE + header_len;
    if bytes.len() < end {
        return Err(Error::NpyHeader(format!(
            "header length {header_len} runs past end of file ({} bytes)",
            bytes.len()
        )));
    }
    let text = std::str::from_utf8(&bytes[PREAMBLE..end])
        .map_err(|_| Error::NpyHeader("header is not valid ASCII".into()))?;
    Ok((DictParser::new(text).parse()?, end))
}

/// Parser for the restricted Python dict literal used in NPY headers.
struct DictParser<'a> {
    s: &'a [u8],
    pos: usize,
}

enum Value {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

impl<'a> DictParser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            s: text.as_bytes(),
            pos: 0,
        }
    }

    fn err<T>(&self, what: &str) -> Result<T> {
        Err(Error::NpyHeader(format!("{what} at byte {}", self.pos)))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(&format!("expected '{}'", c as char))
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return self.err("expected string"),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos >= self.s.len() {
            return self.err("unterminated string");
        }
        let out = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(out)
    }

    fn integer(&mut self) -> Result<usize> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let digits = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("");
        // Python 2 era writers append an L suffix.
        if self.s.get(self.pos) == Some(&b'L') {
            self.pos += 1;
        }
        match digits.parse() {
            Ok(n) => Ok(n),
            Err(_) => self.err("expected non-negative integer"),
        }
    }

    fn value(&mut self) -> Result<Value> {
        match self.peek() {
            Some(b'\'' | b'"') => Ok(Value::Str(self.string()?)),
            Some(b'(') => {
                self.pos += 1;
                let mut dims = Vec::new();
                loop {
                    if self.peek() == Some(b')') {
                        self.pos += 1;
                        break;
                    }
                    dims.push(self.integer()?);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b')') => {}
                        _ => return self.err("expected ',' or ')' in shape"),
                    }
                }
                Ok(Value::Tuple(dims))
            }
            _ => {
                let rest = &self.s[self.pos..];
                if rest.starts_with(b"True") {
                    self.pos += 4;
                    Ok(Value::Bool(true))
                } else if rest.starts_with(b"False") {
                    self.pos += 5;
                    Ok(Value::Bool(false))
                } else {
                    self.err("unsupported value")
                }
            }
        }
    }

    fn parse(mut self) -> Result<NpyHeader> {
        self.expect(b'{')?;
        let (mut descr, mut order, mut shape) = (None, None, None);
        loop {
            if self.peek() == Some(b'}') {
                self.pos += 1;
                break;
            }
            let key = self.string()?;
            self.expect(b':')?;
            match (key.as_str(), self.value()?) {
                ("descr", Value::Str(s)) => descr = Some(s),
                ("fortran_order", Value::Bool(b)) => order = Some(b),
                ("shape", Value::Tuple(t)) => shape = Some(t),
                (k, _) => return self.err(&format!("unexpected key or value type for '{k}'")),
            }
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {}
                _ => return self.err("expected ',' or '}'"),
            }
        }
        if self.peek().is_some_and(|c| c != b'\n') {
            return self.err("trailing bytes after header dict");
        }
        match (descr, order, shape) {
            (Some(descr), Some(fortran_order), Some(shape)) => Ok(NpyHeader {
                descr,
                fortran_order,
                shape,
            }),
            _ => Err(Error::NpyHeader(
                "missing one of descr/fortran_order/shape".into(),
            )),
        }
    }
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NpyArray> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    NpyArray::from_bytes(&bytes)
}

pub fn write_npy(path: impl AsRef<Path>, array: &NpyArray) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, array.to_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_matches_numpy_layout() {
        let a = NpyArray::new(vec![2, 4, 4], NpyData::F32(vec![0.0; 32])).unwrap();
        let bytes = a.to_bytes();
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((PREAMBLE + header_len) % 64, 0);
        assert_eq!(PREAMBLE + header_len, 128);
        let text = std::str::from_utf8(&bytes[10..10 + header_len]).unwrap();
        assert!(text.starts_with("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 4, 4), }"));
        assert!(text.ends_with(" \n"));
        assert_eq!(bytes.len(), 128 + 32 * 4);
    }

    #[test]
    fn shapes_render_like_python_tuples() {
        let h = |shape: Vec<usize>| NpyHeader {
            descr: "<u2".into(),
            fortran_order: false,
            shape,
        };
        assert!(h(vec![]).dict_literal().contains("'shape': ()"));
        assert!(h(vec![5]).dict_literal().contains("'shape': (5,)"));
        assert!(h(vec![0, 3]).dict_literal().contains("'shape': (0, 3)"));
    }

    #[test]
    fn round_trip_bytes() {
        let a = NpyArray::new(
            vec![2, 4, 4],
            NpyData::F32((0..32).map(|i| i as f32 * -0.5).collect()),
        )
        .unwrap();
        let bytes = a.to_bytes();
        let b = NpyArray::from_bytes(&bytes).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.to_bytes(), bytes);
    }

    fn with_dict(dict: &str) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&[1, 0]);
        let mut text = dict.to_string();
        while !(PREAMBLE + text.len() + 1).is_multiple_of(64) {
            text.push(' ');
        }
        text.push('\n');
        out.extend_from_slice(&(text.len() as u16).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out
    }

    #[test]
    fn rejects_fortran_order() {
        let mut bytes = with_dict("{'descr': '<f4', 'fortran_order': True, 'shape': (2,), }");
        bytes.extend_from_slice(&[0; 8]);
        assert!(matches!(
            NpyArray::from_bytes(&bytes),
            Err(Error::NpyFortranOrder)
        ));
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(
            NpyArray::from_bytes(b"PK\x03\x04 not npy"),
            Err(Error::NpyMagic)
        ));
        let mut v2 = with_dict("{'descr': '<f4', 'fortran_order': False, 'shape': (1,), }");
        v2[6] = 2;
        assert!(matches!(
            NpyArray::from_bytes(&v2),
            Err(Error::NpyVersion(2, 0))
        ));
        let f8 = with_dict("{'descr': '<f8', 'fortran_order': False, 'shape': (1,), }");
        assert!(matches!(NpyArray::from_bytes(&f8), Err(Error::NpyDtype(d)) if d == "<f8"));
        let big = with_dict("{'descr': '>f4', 'fortran_order': False, 'shape': (1,), }");
        assert!(matches!(
            NpyArray::from_bytes(&big),
            Err(Error::NpyDtype(_))
        ));
        let junk = with_dict("{'descr': '<f4', 'shape': [1], }");
        assert!(matches!(
            NpyArray::from_bytes(&junk),
            Err(Error::NpyHeader(_))
        ));
        let short = with_dict("{'descr': '<u2', 'fortran_order': False, 'shape': (3,), }");
        assert!(matches!(
            NpyArray::from_bytes(&short),
            Err(Error::NpyPayload {
                expected: 6,
                found: 0
            })
        ));
    }

    #[test]
    fn accepts_double_quotes_and_key_order() {
        let mut bytes =
            with_dict("{\"shape\": (2, 1), \"fortran_order\": False, \"descr\": \"|u1\"}");
        bytes.extend_from_slice(&[7, 9]);
        let a = NpyArray::from_bytes(&bytes).unwrap();
        assert_eq!(a.shape, vec![2, 1]);
        assert_eq!(a.data, NpyData::U8(vec![7, 9]));
    }
}
