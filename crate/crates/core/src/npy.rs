//! Reader and writer for the NPY array format (little-endian float32 and
//! float64, C order).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// A dense array as stored in an NPY file.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_len(&shape, data.len())?;
        Ok(NpyArray {
            shape,
            data: NpyData::F32(data),
        })
    }

    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_len(&shape, data.len())?;
        Ok(NpyArray {
            shape,
            data: NpyData::F64(data),
        })
    }

    pub fn len(&self) -> usize {
        match &self.data {
            NpyData::F32(v) => v.len(),
            NpyData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match &self.data {
            NpyData::F32(v) => v.clone(),
            NpyData::F64(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            NpyData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            NpyData::F64(v) => v.clone(),
        }
    }

    fn descr(&self) -> &'static str {
        match self.data {
            NpyData::F32(_) => "<f4",
            NpyData::F64(_) => "<f8",
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let shape = match self.shape.as_slice() {
            [] => "()".to_owned(),
            [n] => format!("({n},)"),
            dims => format!("({})", dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")),
        };
        let mut header = format!("{{'descr': '{}', 'fortran_order': False, 'shape': {shape}, }}", self.descr());
        // magic + version + u16 length + header + '\n' is padded to 64 bytes
        let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
        header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
        header.push('\n');
        let len = u16::try_from(header.len()).map_err(|_| Error::Npy("header too long for format 1.0".into()))?;

        let mut buf = Vec::with_capacity(unpadded + 64 + self.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&[1, 0]);
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(header.as_bytes());
        match &self.data {
            NpyData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            NpyData::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        }
        w.write_all(&buf).map_err(|e| Error::Npy(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::Npy(e.to_string()))?;
        Self::parse(&bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes).map_err(|e| match e {
            Error::Npy(m) => Error::Npy(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..6] != MAGIC {
            return Err(Error::Npy("missing NPY magic string".into()));
        }
        let (header_len, offset) = match bytes[6] {
            1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
            2 | 3 if bytes.len() >= 12 => (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12),
            v => return Err(Error::Npy(format!("unsupported format version {v}"))),
        };
        let end = offset + header_len;
        let header = bytes
            .get(offset..end)
            .and_then(|h| std::str::from_utf8(h).ok())
            .ok_or_else(|| Error::Npy("truncated or non-text header".into()))?;
        let descr = dict_value(header, "descr")?;
        let fortran = dict_value(header, "fortran_order")?;
        let shape = parse_shape(dict_value(header, "shape")?)?;
        if fortran.trim() != "False" {
            return Err(Error::Npy("Fortran-ordered arrays are not supported".into()));
        }
        let count: usize = shape.iter().product();
        let body = &bytes[end..];
        match descr.trim().trim_matches(['\'', '"']) {
            "<f4" => {
                let data = decode(body, count, |c| f32::from_le_bytes(c.try_into().expect("4 bytes")))?;
                NpyArray::f32(shape, data)
            }
            "<f8" => {
                let data = decode(body, count, |c| f64::from_le_bytes(c.try_into().expect("8 bytes")))?;
                NpyArray::f64(shape, data)
            }
            other => Err(Error::Npy(format!("unsupported dtype {other} (expected <f4 or <f8)"))),
        }
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::DimensionMismatch { expected, got: len });
    }
    Ok(())
}

fn decode<T>(body: &[u8], count: usize, f: impl Fn(&[u8]) -> T) -> Result<Vec<T>> {
    let width = std::mem::size_of::<T>();
    if body.len() != count * width {
        return Err(Error::Npy(format!(
            "data section holds {} bytes, shape needs {}",
            body.len(),
            count * width
        )));
    }
    Ok(body.chunks_exact(width).map(f).collect())
}

/// Raw text of the value for `key` in the header dictionary literal.
fn dict_value<'h>(header: &'h str, key: &str) -> Result<&'h str> {
    let missing = || Error::Npy(format!("header lacks `{key}`"));
    let at = header
        .find(&format!("'{key}'"))
        .or_else(|| header.find(&format!("\"{key}\"")))
        .ok_or_else(missing)?;
    let rest = &header[at + key.len() + 2..];
    let rest = rest.trim_start().strip_prefix(':').ok_or_else(missing)?.trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')').map(|i| i + 1)
    } else {
        rest.find([',', '}'])
    }
    .ok_or_else(missing)?;
    Ok(&rest[..end])
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    let inner = s
        .trim()
        .strip_prefix('(')
        .and_then(|x| x.strip_suffix(')'))
        .ok_or_else(|| Error::Npy(format!("malformed shape {s}")))?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.trim_end_matches('L').parse().map_err(|_| Error::Npy(format!("malformed shape {s}"))))
        .collect()
}
