//! Training pairs: HR luma patches and their degraded-then-bicubic inputs, and
//! the patch archive format.
//!
//! ```text
//! "LPCD" | version: u32 | scale: u32 | patch: u32 | count: u64 | count × (label, input)
//! ```
//!
//! Each plane is `patch²` little-endian `f32` in row-major order. The file
//! length must match the header exactly.

use std::fs::{self, File};
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::imageio;
use crate::resample::{self, ResampleSpec};
use crate::tensor::{Shape, Tensor};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"LPCD";
pub const ARCHIVE_VERSION: u32 = 1;
const HEADER_LEN: u64 = 24;
const COUNT_OFFSET: u64 = 16;

/// Patch geometry. `scales[0]` is the primary scale; further entries add
/// pairs degraded at those scales too.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchConfig {
    pub scales: Vec<u32>,
    pub patch: usize,
    pub stride: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            scales: vec![4],
            patch: 96,
            stride: 80,
        }
    }
}

impl PatchConfig {
    pub fn single(scale: u32, patch: usize, stride: usize) -> Self {
        PatchConfig {
            scales: vec![scale],
            patch,
            stride,
        }
    }

    pub fn scale(&self) -> u32 {
        self.scales[0]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.scales.is_empty() {
            return bad("at least one scale is required".into());
        }
        if self.stride == 0 {
            return bad("stride must be >= 1".into());
        }
        if self.patch == 0 || self.patch % 4 != 0 {
            return bad(format!("patch {} must be a positive multiple of 4", self.patch));
        }
        for &s in &self.scales {
            if s == 0 || self.patch % s as usize != 0 {
                return bad(format!("patch {} must be divisible by scale {s}", self.patch));
            }
        }
        Ok(())
    }
}

/// One aligned training pair, both `patch × patch × 1` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub label: Tensor<f32>,
    pub input: Tensor<f32>,
}

/// Random access to training pairs.
pub trait PatchSource: Sync {
    fn len(&self) -> usize;
    fn patch(&self) -> usize;
    fn scale(&self) -> u32;
    fn pair(&self, index: usize) -> Result<Pair>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Pairs held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub scale: u32,
    pub patch: usize,
    pub pairs: Vec<Pair>,
}

impl PatchSource for PatchSet {
    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn patch(&self) -> usize {
        self.patch
    }

    fn scale(&self) -> u32 {
        self.scale
    }

    fn pair(&self, index: usize) -> Result<Pair> {
        self.pairs
            .get(index)
            .cloned()
            .ok_or_else(|| Error::Argument(format!("pair {index} out of range")))
    }
}

/// Top/left coordinates of the full tiles along an axis of length `len`.
pub fn tile_origins(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    if len < patch {
        return Vec::new();
    }
    (0..=(len - patch) / stride).map(|i| i * stride).collect()
}

/// Pairs an image of `rows × cols` yields under `cfg`, without decoding it.
pub fn tile_count(rows: usize, cols: usize, cfg: &PatchConfig) -> usize {
    cfg.scales
        .iter()
        .map(|&s| {
            let s = s as usize;
            let (r, c) = (rows - rows % s, cols - cols % s);
            tile_origins(r, cfg.patch, cfg.stride).len() * tile_origins(c, cfg.patch, cfg.stride).len()
        })
        .sum()
}

/// Training input for one HR luma tile in `[0, 255]`: degrade by `s`, bicubic back up.
pub fn degraded_input(label: &Tensor<f64>, s: u32) -> Result<Tensor<f64>> {
    let lr = resample::degrade(label, s)?;
    resample::resize_bicubic(&lr, &ResampleSpec::upscale(s)?)
}

fn to_unit(t: &Tensor<f64>) -> Tensor<f32> {
    t.map(|v| (v / 255.0).clamp(0.0, 1.0)).cast()
}

/// Tiles one decoded HR image (gray or RGB, `[0, 255]`) into training pairs.
pub fn image_pairs(hr: &Tensor<f64>, cfg: &PatchConfig) -> Result<Vec<Pair>> {
    let y = resample::quantize_u8(&resample::luma(hr)?);
    let mut out = Vec::new();
    for &s in &cfg.scales {
        if y.rows() < s as usize || y.cols() < s as usize {
            continue;
        }
        let y = resample::mod_crop(&y, s as usize)?;
        for &x0 in &tile_origins(y.rows(), cfg.patch, cfg.stride) {
            for &y0 in &tile_origins(y.cols(), cfg.patch, cfg.stride) {
                let label = y.window(x0, y0, cfg.patch, cfg.patch)?;
                let input = degraded_input(&label, s)?;
                out.push(Pair {
                    label: to_unit(&label),
                    input: to_unit(&input),
                });
            }
        }
    }
    Ok(out)
}

/// Reads and tiles one file; unreadable or too-small images give a warning and no pairs.
fn file_pairs(path: &Path, cfg: &PatchConfig) -> Vec<Pair> {
    let result = imageio::read_image(path).and_then(|img| image_pairs(&img.pixels, cfg));
    match result {
        Ok(p) if p.is_empty() => {
            log::warn!("{}: smaller than one {}px patch, skipped", path.display(), cfg.patch);
            p
        }
        Ok(p) => p,
        Err(e) => {
            log::warn!("{}: skipped ({e})", path.display());
            Vec::new()
        }
    }
}

/// Images processed concurrently while streaming to an archive.
const IMAGE_CHUNK: usize = 8;

/// Extracts every pair from the PNGs in `dir` into memory.
pub fn extract_patches(dir: &Path, cfg: &PatchConfig) -> Result<PatchSet> {
    cfg.validate()?;
    let paths = imageio::list_images(dir)?;
    let pairs: Vec<Pair> = paths.par_iter().flat_map_iter(|p| file_pairs(p, cfg)).collect();
    if pairs.is_empty() {
        return Err(Error::Argument(format!(
            "no patches could be extracted from {}",
            dir.display()
        )));
    }
    Ok(PatchSet {
        scale: cfg.scale(),
        patch: cfg.patch,
        pairs,
    })
}

/// Streams pairs extracted from `dir` into an archive at `out`; returns the count.
pub fn prepare_archive(dir: &Path, cfg: &PatchConfig, out: &Path) -> Result<u64> {
    cfg.validate()?;
    let paths = imageio::list_images(dir)?;
    let mut writer = ArchiveWriter::create(out, cfg.scale(), cfg.patch)?;
    for chunk in paths.chunks(IMAGE_CHUNK) {
        let batches: Vec<Vec<Pair>> = chunk.par_iter().map(|p| file_pairs(p, cfg)).collect();
        for pair in batches.iter().flatten() {
            writer.push(pair)?;
        }
    }
    if writer.count() == 0 {
        return Err(Error::Argument(format!(
            "no patches could be extracted from {}",
            dir.display()
        )));
    }
    writer.finish()
}

/// Writes an archive to a temporary sibling and renames it into place on [`finish`](Self::finish).
pub struct ArchiveWriter {
    out: BufWriter<File>,
    tmp: PathBuf,
    path: PathBuf,
    patch: usize,
    count: u64,
    done: bool,
}

impl ArchiveWriter {
    pub fn create(path: &Path, scale: u32, patch: usize) -> Result<Self> {
        let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(format!(".tmp-{}", std::process::id()));
        let tmp = path.with_file_name(name);
        let file = File::create(&tmp).map_err(|e| Error::io(path, e))?;
        let mut this = ArchiveWriter {
            out: BufWriter::new(file),
            tmp,
            path: path.to_path_buf(),
            patch,
            count: 0,
            done: false,
        };
        let mut w = ByteWriter::new();
        w.bytes(ARCHIVE_MAGIC);
        w.u32(ARCHIVE_VERSION);
        w.u32(scale);
        w.u32(patch as u32);
        w.u64(0);
        this.out
            .write_all(&w.into_inner())
            .map_err(|e| Error::io(path, e))?;
        Ok(this)
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, pair: &Pair) -> Result<()> {
        let want = Shape::new(self.patch, self.patch, 1)?;
        if pair.label.shape() != want || pair.input.shape() != want {
            return Err(Error::shape(format!("pair does not match patch size {}", self.patch)));
        }
        let mut w = ByteWriter::new();
        w.f32s(pair.label.data().iter().copied());
        w.f32s(pair.input.data().iter().copied());
        self.out
            .write_all(&w.into_inner())
            .map_err(|e| Error::io(&self.path, e))?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<u64> {
        let path = self.path.clone();
        let io = |e| Error::io(&path, e);
        self.out.flush().map_err(io)?;
        let file = self.out.get_mut();
        file.seek(SeekFrom::Start(COUNT_OFFSET)).map_err(io)?;
        file.write_all(&self.count.to_le_bytes()).map_err(io)?;
        file.sync_all().map_err(io)?;
        fs::rename(&self.tmp, &self.path).map_err(io)?;
        self.done = true;
        Ok(self.count)
    }
}

impl Drop for ArchiveWriter {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_file(&self.tmp);
        }
    }
}

/// Writes an in-memory set as an archive.
pub fn write_archive(set: &PatchSet, path: &Path) -> Result<()> {
    let mut w = ArchiveWriter::create(path, set.scale, set.patch)?;
    for p in &set.pairs {
        w.push(p)?;
    }
    w.finish().map(|_| ())
}

/// A validated archive on disk, read pair by pair.
#[derive(Debug)]
pub struct PatchArchive {
    file: File,
    path: PathBuf,
    scale: u32,
    patch: usize,
    count: u64,
}

impl PatchArchive {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut header = vec![0u8; HEADER_LEN.min(len) as usize];
        file.read_exact_at(&mut header, 0).map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader::new(&header);
        r.expect_magic(ARCHIVE_MAGIC)?;
        r.expect_version(ARCHIVE_VERSION)?;
        let scale = r.u32("scale")?;
        let patch = r.u32("patch")? as usize;
        let count = r.u64("count")?;
        if scale == 0 {
            return Err(Error::format("scale", "must be >= 1"));
        }
        if patch == 0 {
            return Err(Error::format("patch", "must be >= 1"));
        }
        let expected = (patch as u64 * patch as u64 * 8)
            .checked_mul(count)
            .and_then(|p| p.checked_add(HEADER_LEN));
        if expected != Some(len) {
            return Err(Error::format(
                "length",
                format!("file has {len} bytes, header implies {expected:?}"),
            ));
        }
        Ok(PatchArchive {
            file,
            path: path.to_path_buf(),
            scale,
            patch,
            count,
        })
    }

    /// Loads every pair into memory.
    pub fn load(&self) -> Result<PatchSet> {
        let pairs = (0..self.len()).map(|i| self.pair(i)).collect::<Result<_>>()?;
        Ok(PatchSet {
            scale: self.scale,
            patch: self.patch,
            pairs,
        })
    }
}

impl PatchSource for PatchArchive {
    fn len(&self) -> usize {
        self.count as usize
    }

    fn patch(&self) -> usize {
        self.patch
    }

    fn scale(&self) -> u32 {
        self.scale
    }

    fn pair(&self, index: usize) -> Result<Pair> {
        if index as u64 >= self.count {
            return Err(Error::Argument(format!("pair {index} out of range")));
        }
        let plane = self.patch * self.patch;
        let mut buf = vec![0u8; plane * 8];
        let offset = HEADER_LEN + index as u64 * buf.len() as u64;
        self.file
            .read_exact_at(&mut buf, offset)
            .map_err(|e| Error::io(&self.path, e))?;
        let field = format!("pair[{index}]");
        let mut r = ByteReader::new(&buf);
        let shape = Shape::new(self.patch, self.patch, 1)?;
        let plane_at = |r: &mut ByteReader| -> Result<Tensor<f32>> {
            let v = r.f32s(plane, &field)?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::format(field.clone(), "non-finite sample"));
            }
            Tensor::from_vec(shape, v)
        };
        let label = plane_at(&mut r)?;
        let input = plane_at(&mut r)?;
        Ok(Pair { label, input })
    }
}
