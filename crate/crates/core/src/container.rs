//! Self-describing tensor container.
//!
//! Layout:
//!
//! ```text
//! IP2T 1\n
//! meta <key> <value...>\n        (any number, value runs to end of line)
//! tensor <name> <d0>x<d1>x...\n  (any number, declared order = data order)
//! data\n
//! <raw little-endian f64 payload, tensors concatenated in declared order>
//! ```
//!
//! Keys and tensor names are whitespace-free; a scalar tensor has shape `1`.
//! Floats in metadata are written with Rust's shortest round-trip formatting.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

const MAGIC: &str = "IP2T 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("Tensor::new", n, data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            shape: vec![m.rows(), m.cols()],
            data: m.as_slice().to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        match self.shape.as_slice() {
            [r, c] => Matrix::from_vec(*r, *c, self.data.clone()),
            other => Err(Error::Format(format!("expected rank-2 tensor, got shape {other:?}"))),
        }
    }
}

/// An ordered collection of metadata and named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    meta: BTreeMap<String, String>,
    tensors: Vec<(String, Tensor)>,
}

fn check_token(s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::InvalidArgument(format!("container key `{s}` must be non-empty and whitespace-free")));
    }
    Ok(())
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) -> Result<()> {
        check_token(key)?;
        let value = value.to_string();
        if value.contains('\n') {
            return Err(Error::InvalidArgument(format!("metadata `{key}` contains a newline")));
        }
        self.meta.insert(key.to_string(), value);
        Ok(())
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn meta_entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.meta.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::Format(format!("missing metadata key `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require_meta(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("metadata `{key}` has unparsable value `{raw}`")))
    }

    pub fn push(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        check_token(name)?;
        if self.tensors.iter().any(|(n, _)| n == name) {
            return Err(Error::InvalidArgument(format!("duplicate tensor `{name}`")));
        }
        self.tensors.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn push_matrix(&mut self, name: &str, m: &Matrix) -> Result<()> {
        self.push(name, Tensor::from_matrix(m))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        self.require(name)?.to_matrix()
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        for (k, v) in &self.meta {
            header.push_str(&format!("meta {k} {v}\n"));
        }
        for (name, t) in &self.tensors {
            let shape: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            let shape = if shape.is_empty() { "1".to_string() } else { shape.join("x") };
            header.push_str(&format!("tensor {name} {shape}\n"));
        }
        header.push_str("data\n");
        let payload: usize = self.tensors.iter().map(|(_, t)| t.data.len() * 8).sum();
        let mut out = Vec::with_capacity(header.len() + payload);
        out.extend_from_slice(header.as_bytes());
        for (_, t) in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut next_line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::Format("truncated header".into()))?;
            let line = std::str::from_utf8(&rest[..end])
                .map_err(|_| Error::Format("header is not UTF-8".into()))?;
            pos += end + 1;
            Ok(line)
        };

        if next_line()? != MAGIC {
            return Err(Error::Format("bad magic line".into()));
        }
        let mut meta = BTreeMap::new();
        let mut decls: Vec<(String, Vec<usize>)> = Vec::new();
        loop {
            let line = next_line()?;
            if line == "data" {
                break;
            }
            let mut parts = line.splitn(3, ' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some("meta"), Some(k), v) => {
                    meta.insert(k.to_string(), v.unwrap_or("").to_string());
                }
                (Some("tensor"), Some(name), Some(shape)) => {
                    let dims = shape
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Error::Format(format!("bad shape `{shape}` for `{name}`")))?;
                    decls.push((name.to_string(), dims));
                }
                _ => return Err(Error::Format(format!("unrecognized header line `{line}`"))),
            }
        }

        let mut tensors = Vec::with_capacity(decls.len());
        for (name, shape) in decls {
            let n: usize = shape.iter().product();
            let nbytes = n * 8;
            if bytes.len() < pos + nbytes {
                return Err(Error::Format(format!("payload truncated in tensor `{name}`")));
            }
            let data = bytes[pos..pos + nbytes]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            pos += nbytes;
            tensors.push((name, Tensor { shape, data }));
        }
        if pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after payload", bytes.len() - pos)));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Writes via a sibling temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_garbage() {
        assert!(Container::from_bytes(b"nope\n").is_err());
        assert!(Container::from_bytes(b"IP2T 1\ntensor a 2\ndata\n\0\0").is_err());
        assert!(Container::from_bytes(b"IP2T 1\nbogus line\ndata\n").is_err());
    }

    #[test]
    fn header_is_plain_text() {
        let mut c = Container::new();
        c.set_meta("dt_ms", 10.0).unwrap();
        c.push("theta", Tensor::vector(vec![1.0, 0.5])).unwrap();
        let bytes = c.to_bytes();
        let text = String::from_utf8_lossy(&bytes[..bytes.len() - 16]);
        assert_eq!(text, "IP2T 1\nmeta dt_ms 10\ntensor theta 2\ndata\n");
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            values in proptest::collection::vec(any::<f64>(), 0..40),
            rows in 1usize..4,
            note in "[a-z ]{0,12}",
        ) {
            let mut c = Container::new();
            c.set_meta("note", &note).unwrap();
            c.set_meta("x", 0.1f64 + 0.2).unwrap();
            let cols = values.len() / rows;
            let m = Matrix::from_vec(rows, cols, values[..rows * cols].to_vec()).unwrap();
            c.push_matrix("m", &m).unwrap();
            c.push("v", Tensor::vector(values.clone())).unwrap();
            let back = Container::from_bytes(&c.to_bytes()).unwrap();
            let bits = |t: &Tensor| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(back.get("v").unwrap()), bits(c.get("v").unwrap()));
            prop_assert_eq!(bits(back.get("m").unwrap()), bits(c.get("m").unwrap()));
            prop_assert_eq!(back.meta("note"), Some(note.as_str()));
            prop_assert_eq!(back.meta_parse::<f64>("x").unwrap(), 0.1f64 + 0.2);
        }
    }
}
