//! Binary formats. Everything is little-endian and starts with a four-byte
//! magic plus a u32 version; loaders reject unknown magics and versions
//! before touching any payload.
//!
//! Grid snapshot ("BRHT"): config as u32 fields, then per group per level
//! the resolution, entry count and f32 entries, then the group MLP layers.
//! Arbitrary tagged sections may follow; checkpoints use them for encoder,
//! decoder, optimizer state and the training config echo. Key-code files
//! ("BKEY") hold one f32 key grid.
//!
//! Writers emit a canonical layout, so load followed by save reproduces a
//! file byte for byte.

use crate::error::{Error, Result};
use crate::grid::{is_direct, GridConfig, HashTableGroup, LevelTable};
use crate::keys::KeyCodeGrid;
use crate::nn::{Conv2d, DenseLayer};
use crate::scalar::Scalar;

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"BRHT";
pub const SNAPSHOT_VERSION: u32 = 1;
pub const KEYCODE_MAGIC: [u8; 4] = *b"BKEY";
pub const KEYCODE_VERSION: u32 = 1;

/// Append-only little-endian byte sink.
#[derive(Default)]
pub struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn put_bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn put_f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn put_f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn put_f32_slice<S: Scalar>(&mut self, vs: &[S]) {
        self.buf.reserve(vs.len() * 4);
        for &v in vs {
            self.put_f32(v.to_f32());
        }
    }
}

/// Bounds-checked little-endian cursor; running past the end is a format
/// error, never a panic.
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format(format!(
                "truncated: wanted {n} bytes, {} left",
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn get_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn get_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn get_f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn get_f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn get_f32_vec<S: Scalar>(&mut self, n: usize) -> Result<Vec<S>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| S::from_f32(f32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }

    /// Sanity bound for counts read from files: anything that implies more
    /// bytes than the file holds is corrupt.
    fn check_count(&self, n: u64, elem_size: usize) -> Result<usize> {
        if n.checked_mul(elem_size as u64).map_or(true, |b| b > self.remaining() as u64) {
            return Err(Error::Format(format!("count {n} exceeds remaining payload")));
        }
        Ok(n as usize)
    }
}

fn expect_magic(r: &mut ByteReader, magic: [u8; 4], version: u32, what: &str) -> Result<()> {
    let got = r.take(4)?;
    if got != magic {
        return Err(Error::Format(format!(
            "{what}: bad magic {:?}, expected {:?}",
            got,
            &magic[..]
        )));
    }
    let v = r.get_u32()?;
    if v != version {
        return Err(Error::Format(format!("{what}: unsupported version {v}, expected {version}")));
    }
    Ok(())
}

pub fn put_grid_config(w: &mut ByteWriter, cfg: &GridConfig) {
    w.put_u32(cfg.n_groups as u32);
    w.put_u32(cfg.key_len as u32);
    w.put_u32(cfg.n_resolutions as u32);
    w.put_u32(cfg.r_min);
    w.put_u32(cfg.r_max);
    w.put_u32(cfg.max_entries as u32);
    w.put_u32(cfg.entry_dim as u32);
    w.put_u32(cfg.out_dim as u32);
    w.put_u32(cfg.hidden_dim as u32);
}

pub fn get_grid_config(r: &mut ByteReader) -> Result<GridConfig> {
    let cfg = GridConfig {
        n_groups: r.get_u32()? as usize,
        key_len: r.get_u32()? as usize,
        n_resolutions: r.get_u32()? as usize,
        r_min: r.get_u32()?,
        r_max: r.get_u32()?,
        max_entries: r.get_u32()? as usize,
        entry_dim: r.get_u32()? as usize,
        out_dim: r.get_u32()? as usize,
        hidden_dim: r.get_u32()? as usize,
    };
    cfg.validate().map_err(|e| Error::Format(format!("stored grid config invalid: {e}")))?;
    Ok(cfg)
}

pub fn put_dense<S: Scalar>(w: &mut ByteWriter, d: &DenseLayer<S>) {
    w.put_u32(d.in_dim as u32);
    w.put_u32(d.out_dim as u32);
    w.put_f32_slice(&d.w);
    w.put_f32_slice(&d.b);
}

pub fn get_dense<S: Scalar>(r: &mut ByteReader) -> Result<DenseLayer<S>> {
    let in_dim = r.get_u32()? as usize;
    let out_dim = r.get_u32()? as usize;
    if in_dim == 0 || out_dim == 0 {
        return Err(Error::Format("dense layer with zero dimension".into()));
    }
    let n = r.check_count(in_dim as u64 * out_dim as u64, 4)?;
    let w = r.get_f32_vec(n)?;
    let b = r.get_f32_vec(out_dim)?;
    Ok(DenseLayer { in_dim, out_dim, w, b })
}

pub fn put_conv<S: Scalar>(w: &mut ByteWriter, c: &Conv2d<S>) {
    w.put_u32(c.in_c as u32);
    w.put_u32(c.out_c as u32);
    w.put_u32(c.stride as u32);
    w.put_f32_slice(&c.w);
    w.put_f32_slice(&c.b);
}

pub fn get_conv<S: Scalar>(r: &mut ByteReader) -> Result<Conv2d<S>> {
    let in_c = r.get_u32()? as usize;
    let out_c = r.get_u32()? as usize;
    let stride = r.get_u32()? as usize;
    if in_c == 0 || out_c == 0 || !(stride == 1 || stride == 2) {
        return Err(Error::Format("conv layer with bad shape".into()));
    }
    let n = r.check_count(out_c as u64 * in_c as u64 * 9, 4)?;
    let w = r.get_f32_vec(n)?;
    let b = r.get_f32_vec(out_c)?;
    Ok(Conv2d { in_c, out_c, stride, w, b })
}

fn put_group<S: Scalar>(w: &mut ByteWriter, g: &HashTableGroup<S>) {
    for level in &g.levels {
        w.put_u32(level.resolution);
        w.put_u64((level.entries.len() / g.cfg.entry_dim) as u64);
        w.put_f32_slice(&level.entries);
    }
    w.put_u32(2); // MLP layer count
    put_dense(w, &g.mlp_hidden);
    put_dense(w, &g.mlp_out);
}

fn get_group<S: Scalar>(r: &mut ByteReader, cfg: &GridConfig) -> Result<HashTableGroup<S>> {
    let dims = cfg.query_dim();
    let mut levels = Vec::with_capacity(cfg.n_resolutions);
    for _ in 0..cfg.n_resolutions {
        let resolution = r.get_u32()?;
        let stored = r.get_u64()?;
        let count = r.check_count(stored, 4 * cfg.entry_dim)?;
        let entries = r.get_f32_vec(count * cfg.entry_dim)?;
        levels.push(LevelTable {
            resolution,
            direct: is_direct(resolution, dims, cfg.max_entries),
            entries,
        });
    }
    let n_layers = r.get_u32()?;
    if n_layers != 2 {
        return Err(Error::Format(format!("group MLP has {n_layers} layers, expected 2")));
    }
    let mlp_hidden = get_dense(r)?;
    let mlp_out = get_dense(r)?;
    Ok(HashTableGroup { cfg: cfg.clone(), levels, mlp_hidden, mlp_out })
}

/// Serialize a full grid (config plus all groups). Sections may be appended
/// after this prefix.
pub fn write_grid_snapshot<S: Scalar>(groups: &[HashTableGroup<S>]) -> Result<ByteWriter> {
    let cfg = &groups
        .first()
        .ok_or_else(|| Error::Config("write_grid_snapshot: no groups".into()))?
        .cfg;
    if groups.len() != cfg.n_groups {
        return Err(Error::Config(format!(
            "write_grid_snapshot: {} groups but config says {}",
            groups.len(),
            cfg.n_groups
        )));
    }
    let mut w = ByteWriter::new();
    w.put_bytes(&SNAPSHOT_MAGIC);
    w.put_u32(SNAPSHOT_VERSION);
    put_grid_config(&mut w, cfg);
    for g in groups {
        put_group(&mut w, g);
    }
    Ok(w)
}

/// Parse the grid prefix of a snapshot; the reader is left at the first
/// section (or end of file).
pub fn read_grid_snapshot<'a, S: Scalar>(
    bytes: &'a [u8],
) -> Result<(Vec<HashTableGroup<S>>, ByteReader<'a>)> {
    let mut r = ByteReader::new(bytes);
    expect_magic(&mut r, SNAPSHOT_MAGIC, SNAPSHOT_VERSION, "grid snapshot")?;
    let cfg = get_grid_config(&mut r)?;
    let groups = (0..cfg.n_groups)
        .map(|_| get_group(&mut r, &cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok((groups, r))
}

/// Append one tagged section: tag, payload length, payload.
pub fn write_section(w: &mut ByteWriter, tag: [u8; 4], payload: &[u8]) {
    w.put_bytes(&tag);
    w.put_u64(payload.len() as u64);
    w.put_bytes(payload);
}

/// Read tagged sections until the reader is exhausted, preserving order.
pub fn read_sections(r: &mut ByteReader) -> Result<Vec<([u8; 4], Vec<u8>)>> {
    let mut out = Vec::new();
    while r.remaining() > 0 {
        let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
        let stored = r.get_u64()?;
        let len = r.check_count(stored, 1)?;
        out.push((tag, r.take(len)?.to_vec()));
    }
    Ok(out)
}

/// Serialize one key-code grid.
pub fn write_keycode_file<S: Scalar>(grid: &KeyCodeGrid<S>) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.put_bytes(&KEYCODE_MAGIC);
    w.put_u32(KEYCODE_VERSION);
    w.put_u32(grid.h as u32);
    w.put_u32(grid.w as u32);
    w.put_u32(grid.c as u32);
    w.put_f32_slice(&grid.data);
    w.buf
}

pub fn read_keycode_file<S: Scalar>(bytes: &[u8]) -> Result<KeyCodeGrid<S>> {
    let mut r = ByteReader::new(bytes);
    expect_magic(&mut r, KEYCODE_MAGIC, KEYCODE_VERSION, "key-code file")?;
    let h = r.get_u32()? as usize;
    let w = r.get_u32()? as usize;
    let c = r.get_u32()? as usize;
    let n = r.check_count(h as u64 * w as u64 * c as u64, 4)?;
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::Format("key-code file with empty shape".into()));
    }
    let data = r.get_f32_vec(n)?;
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
    }
    Ok(KeyCodeGrid { h, w, c, data })
}
