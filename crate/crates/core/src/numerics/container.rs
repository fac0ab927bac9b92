//! Self-describing tensor container shared by checkpoints and dataset splits.
//!
//! Layout: UTF-8 header lines of the form `key=value`, terminated by a line
//! containing only `end`, followed by raw little-endian `f32` payloads.
//!
//! ```text
//! format=casein-container
//! version=1
//! meta.<key>=<value>
//! tensor.<name>=<d0>x<d1>...@<byte offset>+<element count>
//! end
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::{ParamStore, Tensor};

const MAGIC: &str = "format=casein-container";
const VERSION: &str = "version=1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| *k == key) {
            Some(entry) => entry.1 = value,
            None => self.meta.push((key, value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.tensors.push((name.into(), t));
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Meta value that must be present.
    pub fn require(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::Format(format!("container lacks meta key {key}")))
    }

    /// Fails unless `meta.kind` equals `kind`.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        match self.meta("kind") {
            Some(k) if k == kind => Ok(()),
            other => Err(Error::Format(format!("expected a {kind} file, found {other:?}"))),
        }
    }

    /// Appends every parameter of `store` under its own name.
    pub fn push_store(&mut self, store: &ParamStore<f32>) {
        for (name, t) in store.iter() {
            self.push_tensor(name, t.clone());
        }
    }

    /// Fills `store` from tensors with matching names.
    pub fn load_store(&self, store: &mut ParamStore<f32>) -> Result<()> {
        store.load_from(self.tensors.iter().map(|(n, t)| (n.as_str(), t)))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = format!("{MAGIC}\n{VERSION}\n");
        for (k, v) in &self.meta {
            check_token(k, "meta key")?;
            if v.contains('\n') {
                return Err(Error::Format(format!("meta value for {k} contains a newline")));
            }
            header.push_str(&format!("meta.{k}={v}\n"));
        }
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            check_token(name, "tensor name")?;
            let shape = t
                .shape()
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join("x");
            header.push_str(&format!("tensor.{name}={shape}@{offset}+{}\n", t.numel()));
            offset += t.numel() * 4;
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        out.reserve(offset);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut lines = Vec::new();
        loop {
            let Some(nl) = bytes[pos..].iter().position(|b| *b == b'\n') else {
                return Err(Error::Format("container header not terminated".into()));
            };
            let line = std::str::from_utf8(&bytes[pos..pos + nl])
                .map_err(|_| Error::Format("container header is not UTF-8".into()))?;
            pos += nl + 1;
            if line == "end" {
                break;
            }
            lines.push(line.to_string());
        }
        if lines.first().map(String::as_str) != Some(MAGIC) {
            return Err(Error::Format("not a casein container".into()));
        }
        if lines.get(1).map(String::as_str) != Some(VERSION) {
            return Err(Error::Format("unsupported container version".into()));
        }
        let payload = &bytes[pos..];
        let mut c = Container::new();
        for line in &lines[2..] {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("header line without '=': {line}")))?;
            if let Some(k) = key.strip_prefix("meta.") {
                c.meta.push((k.to_string(), value.to_string()));
            } else if let Some(name) = key.strip_prefix("tensor.") {
                c.tensors.push((name.to_string(), parse_tensor(value, payload)?));
            } else {
                return Err(Error::Format(format!("unknown header key {key}")));
            }
        }
        Ok(c)
    }

    /// Writes to a temporary sibling, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.display().to_string()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Container::from_bytes(&bytes)
    }
}

fn check_token(s: &str, what: &str) -> Result<()> {
    if s.is_empty() || s.contains(['=', '\n', ' ']) {
        return Err(Error::Format(format!("invalid {what}: {s:?}")));
    }
    Ok(())
}

fn parse_tensor(spec: &str, payload: &[u8]) -> Result<Tensor<f32>> {
    let bad = || Error::Format(format!("bad tensor spec {spec}"));
    let (shape, rest) = spec.split_once('@').ok_or_else(bad)?;
    let (offset, count) = rest.split_once('+').ok_or_else(bad)?;
    let shape: Vec<usize> = if shape.is_empty() {
        Vec::new()
    } else {
        shape
            .split('x')
            .map(|d| d.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    let offset: usize = offset.parse().map_err(|_| bad())?;
    let count: usize = count.parse().map_err(|_| bad())?;
    let end = offset + count * 4;
    if end > payload.len() {
        return Err(Error::Format(format!("tensor payload out of bounds: {spec}")));
    }
    let data = payload[offset..end]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

/// Atomic write: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
