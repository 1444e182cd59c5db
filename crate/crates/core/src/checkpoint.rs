//! Self-describing checkpoint container.
//!
//! Layout: a UTF-8 header (magic line, `key=value` manifest lines, a line
//! reading `end`), then the tensors in insertion order, each as
//! `u32 name_len | name | u32 ndim | u64 dims… | f64 values…`, little-endian.
//! Full models and standalone adapters share this container.

use std::fmt::Display;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::adapters::{AdapterConfig, AdapterKind};
use crate::encoder::{EncoderConfig, Model, TaskHead};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

const FORMAT_VERSION: &str = "v1";

/// Ordered `key=value` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: IndexMap<String, String>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Newlines in values are flattened to spaces so the file stays line-based.
    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        let key = key.into();
        debug_assert!(!key.contains('=') && !key.contains('\n'), "bad manifest key {key:?}");
        self.entries
            .insert(key, value.to_string().replace(['\n', '\r'], " "));
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("manifest lacks `{key}`")))
    }

    pub fn get_opt(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::Checkpoint(format!("manifest value `{key}={raw}` is malformed")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, other: &Manifest) {
        for (k, v) in other.iter() {
            self.set(k, v);
        }
    }

    pub fn to_text(&self) -> String {
        self.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = Manifest::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: "<manifest>".into(),
                line: i + 1,
                msg: format!("expected key=value, got `{line}`"),
            })?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_artifact(path)?;
        Manifest::from_text(&text)
    }
}

/// Reads a text artifact, mapping "not found" to [`Error::MissingArtifact`].
pub fn read_artifact(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| missing_or_io(path, e))
}

pub(crate) fn missing_or_io(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::MissingArtifact(path.to_path_buf())
    } else {
        Error::Io(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub magic: String,
    pub manifest: Manifest,
    tensors: IndexMap<String, Tensor>,
}

impl Container {
    pub fn new(magic: &str, manifest: Manifest) -> Self {
        Container {
            magic: magic.to_string(),
            manifest,
            tensors: IndexMap::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` missing")))
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "{} {FORMAT_VERSION}\n{}end\n", self.magic, self.manifest.to_text())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            w.write_all(&t.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R, magic: &str) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let expected = format!("{magic} {FORMAT_VERSION}");
        if line.trim_end() != expected {
            return Err(Error::Checkpoint(format!(
                "expected header `{expected}`, found `{}`",
                line.trim_end()
            )));
        }
        let mut header = String::new();
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Checkpoint("header is not terminated by `end`".into()));
            }
            if line.trim_end() == "end" {
                break;
            }
            header.push_str(&line);
        }
        let manifest = Manifest::from_text(&header)?;
        let mut tensors = IndexMap::new();
        let mut word = [0u8; 4];
        loop {
            match r.read_exact(&mut word) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            let name_len = u32::from_le_bytes(word) as usize;
            let mut name = vec![0u8; name_len];
            read_body(&mut r, &mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            read_body(&mut r, &mut word)?;
            let ndim = u32::from_le_bytes(word) as usize;
            let mut shape = Vec::with_capacity(ndim);
            let mut wide = [0u8; 8];
            for _ in 0..ndim {
                read_body(&mut r, &mut wide)?;
                shape.push(u64::from_le_bytes(wide) as usize);
            }
            let n: usize = shape.iter().product();
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                read_body(&mut r, &mut wide)?;
                values.push(f64::from_le_bytes(wide));
            }
            tensors.insert(name, Tensor::new(shape, values)?);
        }
        Ok(Container {
            magic: magic.to_string(),
            manifest,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        // Write then rename, so a crash never leaves a truncated file behind
        // for a resumed run to pick up.
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = std::path::PathBuf::from(tmp);
        self.write_to(std::io::BufWriter::new(std::fs::File::create(&tmp)?))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path, magic: &str) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| missing_or_io(path, e))?;
        Container::read_from(f, magic)
    }
}

fn read_body<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Checkpoint("truncated tensor data".into())
        } else {
            Error::Io(e)
        }
    })
}

const MODEL_MAGIC: &str = "orthoadapt-model";

fn put_adapter(m: &mut Manifest, slot: &str, cfg: Option<AdapterConfig>) {
    match cfg {
        None => m.set(format!("{slot}.present"), false),
        Some(c) => {
            m.set(format!("{slot}.present"), true);
            m.set(format!("{slot}.bottleneck"), c.bottleneck);
            m.set(format!("{slot}.orthogonal"), c.orthogonal);
            m.set(format!("{slot}.residual"), c.residual);
        }
    }
}

fn get_adapter(m: &Manifest, kind: AdapterKind) -> Result<Option<AdapterConfig>> {
    let slot = format!("adapter.{}", kind.slot_name());
    if !m.parse::<bool>(&format!("{slot}.present"))? {
        return Ok(None);
    }
    Ok(Some(AdapterConfig {
        kind,
        bottleneck: m.parse(&format!("{slot}.bottleneck"))?,
        orthogonal: m.parse(&format!("{slot}.orthogonal"))?,
        residual: m.parse(&format!("{slot}.residual"))?,
    }))
}

impl Model {
    /// Architecture keys describing this model; `extra` entries are kept too.
    pub fn manifest(&self) -> Manifest {
        let c = &self.config;
        let mut m = Manifest::new();
        m.set("model.layers", c.layers);
        m.set("model.hidden", c.hidden);
        m.set("model.heads", c.heads);
        m.set("model.ffn", c.ffn);
        m.set("model.vocab_size", c.vocab_size);
        m.set("model.max_len", c.max_len);
        m.set("model.dropout", c.dropout);
        m.set("model.tied_embeddings", c.tied_embeddings);
        m.set("model.adapter_pre_norm", c.adapter_pre_norm);
        m.set("model.ln_eps", c.ln_eps);
        m.set("model.seed", self.seed);
        put_adapter(&mut m, "adapter.lang", self.stack.lang);
        put_adapter(&mut m, "adapter.task", self.stack.task);
        match self.head {
            None => m.set("head.kind", "none"),
            Some(h) => {
                m.set("head.kind", h.kind);
                m.set("head.num_labels", h.num_labels);
            }
        }
        m
    }

    pub fn save(&self, path: &Path, extra: &Manifest) -> Result<()> {
        let mut manifest = extra.clone();
        manifest.extend(&self.manifest());
        let mut c = Container::new(MODEL_MAGIC, manifest);
        for (name, p) in self.params.iter() {
            c.push(name, p.value.clone());
        }
        c.save(path)
    }

    /// Loads a model and the full manifest it was saved with. Every parameter
    /// is checked against the architecture the manifest describes.
    pub fn load(path: &Path) -> Result<(Model, Manifest)> {
        let c = Container::load(path, MODEL_MAGIC)?;
        let m = &c.manifest;
        let config = EncoderConfig {
            layers: m.parse("model.layers")?,
            hidden: m.parse("model.hidden")?,
            heads: m.parse("model.heads")?,
            ffn: m.parse("model.ffn")?,
            vocab_size: m.parse("model.vocab_size")?,
            max_len: m.parse("model.max_len")?,
            dropout: m.parse("model.dropout")?,
            tied_embeddings: m.parse("model.tied_embeddings")?,
            adapter_pre_norm: m.parse("model.adapter_pre_norm")?,
            ln_eps: m.parse("model.ln_eps")?,
        };
        let mut model = Model::new(config, m.parse("model.seed")?)?;
        for kind in [AdapterKind::Language, AdapterKind::Task] {
            if let Some(cfg) = get_adapter(m, kind)? {
                model.add_fresh_adapter(cfg, 0)?;
            }
        }
        let head = match m.get("head.kind")? {
            "none" => None,
            kind => Some(TaskHead {
                kind: kind.parse()?,
                num_labels: m.parse("head.num_labels")?,
            }),
        };
        if let Some(h) = head {
            model.set_head(h.kind, h.num_labels, 0)?;
        }
        if model.params.len() != c.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                model.params.len(),
                c.tensors.len()
            )));
        }
        for (name, t) in c.tensors() {
            let p = model
                .params
                .get_mut(name)
                .map_err(|_| Error::Checkpoint(format!("unexpected tensor `{name}`")))?;
            if p.value.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok((model, c.manifest))
    }
}
