//! Reading and writing the subset of the numpy `.npy` format used for state
//! tensors and operator matrices.
//!
//! Only version 1.0 files with a little-endian `<f4`/`<f8` descriptor in
//! C order are accepted. Everything is written as `<f8` so that a
//! save/load round trip is bit-exact.
//!
//! Format reference: <https://numpy.org/neps/nep-0001-npy-format.html>

use std::fmt;
use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: [u8; 6] = *b"\x93NUMPY";

/// Length of the fixed preamble: magic, two version bytes, u16 header length.
const PREAMBLE_LEN: usize = 10;
const ALIGNMENT: usize = 64;
/// Upper bound on the element count of a single array (2^31 doubles, 16 GiB).
const MAX_ELEMENTS: usize = 1 << 31;

/// The header component a format error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeaderField {
    Magic,
    Version,
    HeaderLength,
    Dict,
    Descr,
    FortranOrder,
    Shape,
    Data,
}

impl fmt::Display for HeaderField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeaderField::Magic => "magic",
            HeaderField::Version => "version",
            HeaderField::HeaderLength => "header length",
            HeaderField::Dict => "header dict",
            HeaderField::Descr => "descr",
            HeaderField::FortranOrder => "fortran_order",
            HeaderField::Shape => "shape",
            HeaderField::Data => "data",
        })
    }
}

#[derive(Debug, Error)]
pub enum NpyError {
    #[error("npy format error in {field}: {detail}")]
    Format { field: HeaderField, detail: String },
    #[error("non-finite value at index {index:?}")]
    NonFinite { index: Vec<usize> },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl NpyError {
    fn format(field: HeaderField, detail: impl Into<String>) -> Self {
        NpyError::Format {
            field,
            detail: detail.into(),
        }
    }

    /// The offending header field, for format errors.
    pub fn field(&self) -> Option<HeaderField> {
        match self {
            NpyError::Format { field, .. } => Some(*field),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F4,
    F8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
        }
    }
}

/// Parsed header dictionary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
}

/// A decoded array: shape plus row-major doubles.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Reads a whole npy stream, validating that every value is finite.
pub fn read_npy<R: Read>(reader: &mut R) -> Result<NpyArray, NpyError> {
    let mut preamble = [0u8; PREAMBLE_LEN];
    read_exact_or(reader, &mut preamble, HeaderField::Magic)?;
    if preamble[..6] != MAGIC {
        return Err(NpyError::format(HeaderField::Magic, "missing \\x93NUMPY prefix"));
    }
    if (preamble[6], preamble[7]) != (1, 0) {
        return Err(NpyError::format(
            HeaderField::Version,
            format!("unsupported version {}.{}, expected 1.0", preamble[6], preamble[7]),
        ));
    }
    let header_len = u16::from_le_bytes([preamble[8], preamble[9]]) as usize;
    let mut header_bytes = vec![0u8; header_len];
    read_exact_or(reader, &mut header_bytes, HeaderField::HeaderLength)?;
    let header = parse_header(&header_bytes)?;

    let count = element_count(&header.shape)?;
    let size = header.dtype.size();
    let mut raw = Vec::new();
    reader
        .take((count * size + 1) as u64)
        .read_to_end(&mut raw)?;
    if raw.len() != count * size {
        return Err(NpyError::format(
            HeaderField::Data,
            format!("expected {} data bytes, found {}", count * size, raw.len()),
        ));
    }
    let data: Vec<f64> = match header.dtype {
        Dtype::F8 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
        Dtype::F4 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect(),
    };
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(NpyError::NonFinite {
            index: unravel(pos, &header.shape),
        });
    }
    Ok(NpyArray {
        shape: header.shape,
        data,
    })
}

/// Convenience wrapper over [`read_npy`] for in-memory buffers.
pub fn parse_npy(bytes: &[u8]) -> Result<NpyArray, NpyError> {
    read_npy(&mut &bytes[..])
}

/// Writes `data` as a version 1.0 `<f8` C-order array.
pub fn write_npy<W: Write>(writer: &mut W, shape: &[usize], data: &[f64]) -> Result<(), NpyError> {
    let count = element_count(shape)?;
    if count != data.len() {
        return Err(NpyError::format(
            HeaderField::Shape,
            format!("shape {shape:?} holds {count} values but {} were given", data.len()),
        ));
    }
    let header = encode_header(shape);
    let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + data.len() * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    writer.write_all(&out)?;
    Ok(())
}

fn encode_header(shape: &[usize]) -> String {
    let dims = match shape {
        [single] => format!("({single},)"),
        _ => format!(
            "({})",
            shape.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': {dims}, }}");
    let unpadded = PREAMBLE_LEN + header.len() + 1;
    let padding = (ALIGNMENT - unpadded % ALIGNMENT) % ALIGNMENT;
    header.extend(std::iter::repeat_n(' ', padding));
    header.push('\n');
    header
}

fn read_exact_or<R: Read>(reader: &mut R, buf: &mut [u8], field: HeaderField) -> Result<(), NpyError> {
    reader.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => NpyError::format(field, "file truncated"),
        _ => NpyError::Io(e),
    })
}

fn element_count(shape: &[usize]) -> Result<usize, NpyError> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= MAX_ELEMENTS)
        .ok_or_else(|| NpyError::format(HeaderField::Shape, format!("shape {shape:?} is too large")))
}

fn unravel(mut pos: usize, shape: &[usize]) -> Vec<usize> {
    let mut index = vec![0; shape.len()];
    for (slot, &dim) in index.iter_mut().zip(shape).rev() {
        *slot = pos % dim;
        pos /= dim;
    }
    index
}

/// Parses the ASCII header dictionary, e.g.
/// `{'descr': '<f8', 'fortran_order': False, 'shape': (2, 3), }`.
pub fn parse_header(bytes: &[u8]) -> Result<Header, NpyError> {
    let text = std::str::from_utf8(bytes)
        .ok()
        .filter(|t| t.is_ascii())
        .ok_or_else(|| NpyError::format(HeaderField::Dict, "header is not ASCII"))?;
    if !text.ends_with('\n') {
        return Err(NpyError::format(HeaderField::Dict, "header is not newline-terminated"));
    }
    let entries = DictParser::new(text.trim_end()).parse()?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    for (key, value) in entries {
        let slot_taken = match key.as_str() {
            "descr" => descr.replace(value).is_some(),
            "fortran_order" => fortran.replace(value).is_some(),
            "shape" => shape.replace(value).is_some(),
            other => {
                return Err(NpyError::format(
                    HeaderField::Dict,
                    format!("unexpected key '{other}'"),
                ))
            }
        };
        if slot_taken {
            return Err(NpyError::format(HeaderField::Dict, format!("duplicate key '{key}'")));
        }
    }

    let dtype = match descr {
        Some(Value::Str(s)) => match s.as_str() {
            "<f8" => Dtype::F8,
            "<f4" => Dtype::F4,
            other => {
                return Err(NpyError::format(
                    HeaderField::Descr,
                    format!("unsupported dtype '{other}', expected '<f4' or '<f8'"),
                ))
            }
        },
        Some(_) => return Err(NpyError::format(HeaderField::Descr, "descr must be a string")),
        None => return Err(NpyError::format(HeaderField::Descr, "missing key 'descr'")),
    };
    match fortran {
        Some(Value::Bool(false)) => {}
        Some(Value::Bool(true)) => {
            return Err(NpyError::format(
                HeaderField::FortranOrder,
                "Fortran-ordered arrays are not supported",
            ))
        }
        Some(_) => {
            return Err(NpyError::format(
                HeaderField::FortranOrder,
                "fortran_order must be True or False",
            ))
        }
        None => {
            return Err(NpyError::format(
                HeaderField::FortranOrder,
                "missing key 'fortran_order'",
            ))
        }
    }
    let shape = match shape {
        Some(Value::Tuple(dims)) => dims,
        Some(_) => return Err(NpyError::format(HeaderField::Shape, "shape must be a tuple")),
        None => return Err(NpyError::format(HeaderField::Shape, "missing key 'shape'")),
    };
    Ok(Header { dtype, shape })
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

struct DictParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> DictParser<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn err(&self, detail: &str) -> NpyError {
        NpyError::format(HeaderField::Dict, format!("{detail} at byte {}", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, byte: u8) -> Result<(), NpyError> {
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", byte as char)))
        }
    }

    fn parse(mut self) -> Result<Vec<(String, Value)>, NpyError> {
        self.expect(b'{')?;
        let mut entries = Vec::new();
        loop {
            if self.peek() == Some(b'}') {
                self.pos += 1;
                break;
            }
            let key = self.string()?;
            self.expect(b':')?;
            let value = self.value()?;
            entries.push((key, value));
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {}
                _ => return Err(self.err("expected ',' or '}'")),
            }
        }
        if self.peek().is_some() {
            return Err(self.err("trailing characters after dict"));
        }
        Ok(entries)
    }

    fn string(&mut self) -> Result<String, NpyError> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(self.err("expected a quoted string")),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos >= self.src.len() {
            return Err(self.err("unterminated string"));
        }
        let s = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(s)
    }

    fn value(&mut self) -> Result<Value, NpyError> {
        match self.peek() {
            Some(b'\'' | b'"') => Ok(Value::Str(self.string()?)),
            Some(b'(') => self.tuple(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                match &self.src[start..self.pos] {
                    b"True" => Ok(Value::Bool(true)),
                    b"False" => Ok(Value::Bool(false)),
                    _ => Err(self.err("unknown identifier")),
                }
            }
            _ => Err(self.err("expected a value")),
        }
    }

    fn tuple(&mut self) -> Result<Value, NpyError> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            match self.peek() {
                Some(b')') => {
                    self.pos += 1;
                    break;
                }
                Some(c) if c.is_ascii_digit() => {
                    let start = self.pos;
                    while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                        self.pos += 1;
                    }
                    let digits = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
                    let dim = digits.parse::<usize>().map_err(|_| {
                        NpyError::format(HeaderField::Shape, format!("dimension {digits} overflows"))
                    })?;
                    dims.push(dim);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b')') => {}
                        _ => return Err(self.err("expected ',' or ')' in shape")),
                    }
                }
                _ => {
                    return Err(NpyError::format(
                        HeaderField::Shape,
                        format!("expected a non-negative integer at byte {}", self.pos),
                    ))
                }
            }
        }
        Ok(Value::Tuple(dims))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file_with_header(dict: &str, payload: &[u8]) -> Vec<u8> {
        let mut header = dict.to_string();
        header.push('\n');
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn header_is_aligned_and_terminated() {
        for shape in [vec![1usize], vec![2, 3], vec![2, 3, 4], vec![100, 1000, 256]] {
            let h = encode_header(&shape);
            assert_eq!((PREAMBLE_LEN + h.len()) % ALIGNMENT, 0);
            assert!(h.ends_with('\n'));
            assert_eq!(parse_header(h.as_bytes()).unwrap().shape, shape);
        }
    }

    #[test]
    fn round_trip_matrix() {
        let mut buf = Vec::new();
        write_npy(&mut buf, &[2, 2], &[1.0, -0.0, 3.5, 1e-300]).unwrap();
        let a = parse_npy(&buf).unwrap();
        assert_eq!(a.shape, vec![2, 2]);
        assert_eq!(a.data[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn f4_is_widened() {
        let payload: Vec<u8> = [1.5f32, -2.25].iter().flat_map(|v| v.to_le_bytes()).collect();
        let bytes = file_with_header("{'descr': '<f4', 'fortran_order': False, 'shape': (2,), }", &payload);
        assert_eq!(parse_npy(&bytes).unwrap().data, vec![1.5, -2.25]);
    }

    #[test]
    fn big_endian_rejected() {
        let bytes = file_with_header("{'descr': '>f8', 'fortran_order': False, 'shape': (1,), }", &[0; 8]);
        assert_eq!(parse_npy(&bytes).unwrap_err().field(), Some(HeaderField::Descr));
    }

    #[test]
    fn fortran_order_rejected() {
        let bytes = file_with_header("{'descr': '<f8', 'fortran_order': True, 'shape': (1,), }", &[0; 8]);
        assert_eq!(parse_npy(&bytes).unwrap_err().field(), Some(HeaderField::FortranOrder));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = file_with_header("{'descr': '<f8', 'fortran_order': False, 'shape': (1,), }", &[0; 8]);
        bytes[6] = 2;
        assert_eq!(parse_npy(&bytes).unwrap_err().field(), Some(HeaderField::Version));
        bytes[1] = b'X';
        assert_eq!(parse_npy(&bytes).unwrap_err().field(), Some(HeaderField::Magic));
    }

    #[test]
    fn truncated_and_oversized_payloads() {
        let short = file_with_header("{'descr': '<f8', 'fortran_order': False, 'shape': (2,), }", &[0; 8]);
        assert_eq!(parse_npy(&short).unwrap_err().field(), Some(HeaderField::Data));
        let long = file_with_header("{'descr': '<f8', 'fortran_order': False, 'shape': (1,), }", &[0; 9]);
        assert_eq!(parse_npy(&long).unwrap_err().field(), Some(HeaderField::Data));
    }

    #[test]
    fn huge_shape_rejected_without_allocating() {
        let bytes = file_with_header(
            "{'descr': '<f8', 'fortran_order': False, 'shape': (99999999999, 99999999999), }",
            &[],
        );
        assert_eq!(parse_npy(&bytes).unwrap_err().field(), Some(HeaderField::Shape));
    }

    #[test]
    fn non_finite_reports_index() {
        let payload: Vec<u8> = [0.0f64, 1.0, f64::INFINITY, 2.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let bytes = file_with_header("{'descr': '<f8', 'fortran_order': False, 'shape': (2, 2), }", &payload);
        match parse_npy(&bytes) {
            Err(NpyError::NonFinite { index }) => assert_eq!(index, vec![1, 0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dict_errors() {
        for dict in [
            "{'descr': '<f8', 'shape': (1,), }",
            "{'descr': '<f8', 'fortran_order': False, 'shape': (1,), 'extra': 1}",
            "{'descr': '<f8', 'fortran_order': False, 'shape': [1], }",
            "{'descr': '<f8' 'fortran_order': False}",
            "not a dict",
        ] {
            let bytes = file_with_header(dict, &[0; 8]);
            assert!(parse_npy(&bytes).is_err(), "accepted {dict}");
        }
    }
}
