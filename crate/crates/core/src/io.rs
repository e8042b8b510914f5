//! On-disk formats: parameter checkpoints and phantom image files.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGCG";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const PHANTOM_MAGIC: &[u8; 4] = b"PHNT";
const DTYPE_F64: u8 = 1;

/// Section tags distinguishing what a checkpoint holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Section {
    Translation,
    Screening,
}

impl Section {
    pub fn tag(self) -> &'static [u8; 4] {
        match self {
            Section::Translation => b"CGAN",
            Section::Screening => b"LSNT",
        }
    }

    fn from_tag(tag: &[u8]) -> Result<Self> {
        match tag {
            b"CGAN" => Ok(Section::Translation),
            b"LSNT" => Ok(Section::Screening),
            other => Err(Error::Format(format!("unknown checkpoint section {:?}", String::from_utf8_lossy(other)))),
        }
    }
}

/// Named tensors plus a free-form metadata string (the resolved config).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub section: Section,
    pub meta: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(section: Section, meta: impl Into<String>, store: &ParamStore) -> Self {
        let tensors = store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect();
        Self { section, meta: meta.into(), tensors }
    }

    /// Copies every stored tensor into the entry of `store` with the same
    /// name; all entries of `store` must be present with matching shapes.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        let mut src = ParamStore::new();
        for (name, t) in &self.tensors {
            src.add_buffer(name.clone(), t.clone());
        }
        store.load_from(&src)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(self.section.tag());
        put_str(&mut out, &self.meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.push(DTYPE_F64);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let section = Section::from_tag(r.take(4)?)?;
        let meta = r.string()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F64 {
                return Err(Error::Format(format!("tensor {name}: unsupported dtype {dtype}")));
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { section, meta, tensors })
    }

    /// Writes to a sibling temp file first so a failed write never clobbers
    /// an existing checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(format!("invalid utf-8: {e}")))
    }
}

/// One single-channel image as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomFile {
    pub side: usize,
    pub label: u8,
    /// Row-major pixels, already rounded to 32-bit precision.
    pub pixels: Vec<f64>,
}

impl PhantomFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.pixels.len());
        out.extend_from_slice(PHANTOM_MAGIC);
        out.extend_from_slice(&(self.side as u32).to_le_bytes());
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.label as u32).to_le_bytes());
        for &v in &self.pixels {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != PHANTOM_MAGIC {
            return Err(Error::Format("not a phantom image (bad magic)".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
        let (side, channels, label) = (word(4), word(8), word(12));
        if channels != 1 {
            return Err(Error::Format(format!("expected 1 channel, found {channels}")));
        }
        if label > 1 {
            return Err(Error::Format(format!("label {label} is not binary")));
        }
        let body = &bytes[16..];
        if body.len() != 4 * side * side {
            return Err(Error::Format(format!("payload of {} bytes does not match side {side}", body.len())));
        }
        let pixels = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        Ok(Self { side, label: label as u8, pixels })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
