//! On-disk formats: 8-bit PNG views, the `MVB-GS v1` scene text format and
//! binary parameter checkpoints.

use crate::error::{CliError, Result};
use mvboost_core::autodiff::Tensor;
use mvboost_core::reconstructor::{LoraConfig, LoraParams, ModelConfig, Projection, ReconstructorParams};
use mvboost_core::{GaussianScene, Image, Splat};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), image.width() as u32, image.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let mut w = enc.write_header().map_err(|e| CliError::data_at(path, e))?;
    w.write_image_data(&bytes).map_err(|e| CliError::data_at(path, e))?;
    w.finish().map_err(|e| CliError::data_at(path, e))
}

/// Reads an 8-bit RGB or RGBA PNG; alpha is dropped.
pub fn read_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| CliError::data_at(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| CliError::data_at(path, e))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(CliError::data_at(path, "expected 8-bit channels"));
    }
    let stride = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(CliError::data_at(path, format!("expected RGB, found {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let data = buf[..w * h * stride].chunks_exact(stride).flat_map(|px| px[..3].iter().map(|&b| b as f64 / 255.0)).collect();
    Image::new(w, h, data).map_err(|e| CliError::data_at(path, e))
}

const SCENE_HEADER: &str = "MVB-GS v1";

/// One splat per line after a `MVB-GS v1 <count>` header. Values use the
/// shortest round-trip decimal form, so a write/read cycle is lossless.
pub fn format_scene(scene: &GaussianScene) -> String {
    let mut out = format!("{SCENE_HEADER} {}\n", scene.len());
    for s in scene.splats() {
        let vals = s.mean.iter().chain(&s.rotation).chain(&s.scale).chain([&s.opacity_logit]).chain(&s.color);
        let line: Vec<String> = vals.map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_scene(text: &str) -> std::result::Result<GaussianScene, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or("empty scene file")?;
    let count: usize = header
        .strip_prefix(SCENE_HEADER)
        .and_then(|rest| rest.trim().parse().ok())
        .ok_or_else(|| format!("bad header `{header}`, expected `{SCENE_HEADER} <count>`"))?;
    let mut splats = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", i + 2))?;
        if v.len() != 14 {
            return Err(format!("line {}: expected 14 values, found {}", i + 2, v.len()));
        }
        splats.push(Splat {
            mean: [v[0], v[1], v[2]],
            rotation: [v[3], v[4], v[5], v[6]],
            scale: [v[7], v[8], v[9]],
            opacity_logit: v[10],
            color: [v[11], v[12], v[13]],
        });
    }
    if splats.len() != count {
        return Err(format!("header announces {count} splats, file holds {}", splats.len()));
    }
    GaussianScene::new(splats).map_err(|e| e.to_string())
}

pub fn write_scene(path: &Path, scene: &GaussianScene) -> Result<()> {
    std::fs::write(path, format_scene(scene)).map_err(|e| CliError::io(path, e))
}

pub fn read_scene(path: &Path) -> Result<GaussianScene> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_scene(&text).map_err(|e| CliError::data_at(path, e))
}

const CKPT_MAGIC: &[u8; 8] = b"MVBCKPT\0";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Base,
    Lora,
}

/// Provenance stored in every checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub seed: u64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseCheckpoint {
    pub meta: CheckpointMeta,
    pub params: ReconstructorParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraCheckpoint {
    pub meta: CheckpointMeta,
    /// Fingerprint of the base weights the adapters were trained against.
    pub base_fingerprint: u64,
    pub lora: LoraParams,
}

struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend(v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend(s.as_bytes());
    }
    fn model(&mut self, m: &ModelConfig) {
        for v in [m.d_model, m.layers, m.heads, m.patch, m.resolution] {
            self.u64(v as u64);
        }
    }
    fn tensors<'a>(&mut self, named: impl ExactSizeIterator<Item = (&'a str, &'a Tensor)>) {
        self.u64(named.len() as u64);
        for (name, t) in named {
            self.str(name);
            self.u64(t.shape().len() as u64);
            t.shape().iter().for_each(|&d| self.u64(d as u64));
            t.data().iter().for_each(|&v| self.f64(v));
        }
    }
}

struct Dec<'a> {
    buf: &'a [u8],
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.buf.len() < n {
            return Err("truncated checkpoint".into());
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }
    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> std::result::Result<usize, String> {
        usize::try_from(self.u64()?).map_err(|_| "size overflows usize".to_string())
    }
    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn str(&mut self) -> std::result::Result<String, String> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid UTF-8 in checkpoint".to_string())
    }
    fn model(&mut self) -> std::result::Result<ModelConfig, String> {
        Ok(ModelConfig { d_model: self.usize()?, layers: self.usize()?, heads: self.usize()?, patch: self.usize()?, resolution: self.usize()? })
    }
    fn tensors(&mut self) -> std::result::Result<Vec<(String, Tensor)>, String> {
        let n = self.usize()?;
        let mut out = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let name = self.str()?;
            let ndim = self.usize()?;
            let shape = (0..ndim).map(|_| self.usize()).collect::<std::result::Result<Vec<_>, _>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("tensor size overflows")?;
            if len > self.buf.len() / 8 {
                return Err("truncated checkpoint".into());
            }
            let data = (0..len).map(|_| self.f64()).collect::<std::result::Result<Vec<_>, _>>()?;
            out.push((name, Tensor::new(shape, data).map_err(|e| e.to_string())?));
        }
        Ok(out)
    }
}

fn header(kind: CheckpointKind, meta: &CheckpointMeta) -> Enc {
    let mut e = Enc(CKPT_MAGIC.to_vec());
    e.0.extend(CKPT_VERSION.to_le_bytes());
    e.u8(kind as u8);
    e.str(&meta.config_hash);
    e.u64(meta.seed);
    e.u64(meta.steps);
    e
}

fn read_header(d: &mut Dec, want: CheckpointKind) -> std::result::Result<CheckpointMeta, String> {
    if d.take(8)? != CKPT_MAGIC {
        return Err("not an mvboost checkpoint".into());
    }
    let version = u32::from_le_bytes(d.take(4)?.try_into().expect("4 bytes"));
    if version != CKPT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let kind = d.u8()?;
    if kind != want as u8 {
        let name = |k: u8| if k == CheckpointKind::Base as u8 { "a base" } else { "an adapter" };
        return Err(format!("expected {} checkpoint, found {}", name(want as u8), name(kind)));
    }
    Ok(CheckpointMeta { config_hash: d.str()?, seed: d.u64()?, steps: d.u64()? })
}

fn finish(mut e: Enc, fingerprint: u64, path: &Path) -> Result<()> {
    e.u64(fingerprint);
    let mut f = BufWriter::new(File::create(path).map_err(|err| CliError::io(path, err))?);
    f.write_all(&e.0).and_then(|_| f.flush()).map_err(|err| CliError::io(path, err))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| CliError::io(path, e))?;
    Ok(buf)
}

fn check_trailer(d: &mut Dec, fingerprint: u64) -> std::result::Result<(), String> {
    if d.u64()? != fingerprint {
        return Err("parameter fingerprint mismatch; the file is corrupt".into());
    }
    if !d.buf.is_empty() {
        return Err("trailing bytes after checkpoint".into());
    }
    Ok(())
}

pub fn save_base(path: &Path, ckpt: &BaseCheckpoint) -> Result<()> {
    let mut e = header(CheckpointKind::Base, &ckpt.meta);
    e.model(ckpt.params.config());
    e.tensors(ckpt.params.named().collect::<Vec<_>>().into_iter());
    finish(e, ckpt.params.fingerprint(), path)
}

pub fn load_base(path: &Path) -> Result<BaseCheckpoint> {
    let buf = read_all(path)?;
    let parse = || -> std::result::Result<BaseCheckpoint, String> {
        let mut d = Dec { buf: &buf };
        let meta = read_header(&mut d, CheckpointKind::Base)?;
        let model = d.model()?;
        let params = ReconstructorParams::from_named(model, d.tensors()?).map_err(|e| e.to_string())?;
        check_trailer(&mut d, params.fingerprint())?;
        Ok(BaseCheckpoint { meta, params })
    };
    parse().map_err(|e| CliError::data_at(path, e))
}

pub fn save_lora(path: &Path, ckpt: &LoraCheckpoint) -> Result<()> {
    let mut e = header(CheckpointKind::Lora, &ckpt.meta);
    e.u64(ckpt.base_fingerprint);
    e.model(ckpt.lora.model());
    let c = ckpt.lora.config();
    e.u64(c.rank as u64);
    e.f64(c.alpha);
    e.u64(c.targets.len() as u64);
    c.targets.iter().for_each(|t| e.str(t.as_str()));
    e.tensors(ckpt.lora.named().collect::<Vec<_>>().into_iter());
    finish(e, ckpt.lora.fingerprint(), path)
}

pub fn load_lora(path: &Path) -> Result<LoraCheckpoint> {
    let buf = read_all(path)?;
    let parse = || -> std::result::Result<LoraCheckpoint, String> {
        let mut d = Dec { buf: &buf };
        let meta = read_header(&mut d, CheckpointKind::Lora)?;
        let base_fingerprint = d.u64()?;
        let model = d.model()?;
        let rank = d.usize()?;
        let alpha = d.f64()?;
        let n = d.usize()?;
        let targets = (0..n)
            .map(|_| d.str().and_then(|s| Projection::parse(&s).ok_or(format!("unknown projection `{s}`"))))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let config = LoraConfig { rank, alpha, targets };
        let lora = LoraParams::from_named(config, model, d.tensors()?).map_err(|e| e.to_string())?;
        check_trailer(&mut d, lora.fingerprint())?;
        Ok(LoraCheckpoint { meta, base_fingerprint, lora })
    };
    parse().map_err(|e| CliError::data_at(path, e))
}
