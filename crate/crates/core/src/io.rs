//! File formats: PFM for radiance, 16-bit PGM/PPM for integer frames and
//! masks, and a line-oriented manifest tying a clip's frame files together.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::modulo::{ClipShape, IntClip, RealClip};

/// Interleaved float image, rows stored top to bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Encodes little-endian PFM (`Pf` for one channel, `PF` for three).
pub fn encode_pfm(img: &PfmImage) -> Result<Vec<u8>> {
    let magic = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::arg(format!("PFM holds 1 or 3 channels, not {c}"))),
    };
    if img.data.len() != img.width * img.height * img.channels {
        return Err(Error::arg("PFM payload does not match dimensions"));
    }
    if img.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("PFM payload must be finite"));
    }
    let mut out = format!("{magic}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width * img.channels;
    for y in (0..img.height).rev() {
        for v in &img.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Header tokenizer shared by the PFM and PNM readers.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn skip_space(&mut self, comments: bool) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if comments && b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self, comments: bool, what: &str) -> Result<(usize, &'a str)> {
        self.skip_space(comments);
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, format!("expected {what}, found end of header")));
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::parse(start, format!("{what} is not text")))?;
        Ok((start, s))
    }

    fn number<T: std::str::FromStr>(&mut self, comments: bool, what: &str) -> Result<T> {
        let (at, s) = self.token(comments, what)?;
        s.parse()
            .map_err(|_| Error::parse(at, format!("invalid {what} {s:?}")))
    }

    /// Consumes the single whitespace byte that ends a header.
    fn end(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(Error::parse(self.pos, "header not terminated by whitespace")),
        }
    }
}

fn check_payload(bytes: &[u8], start: usize, needed: usize) -> Result<()> {
    let have = bytes.len() - start;
    if have < needed {
        return Err(Error::parse(
            bytes.len(),
            format!("payload truncated: {needed} bytes declared, {have} present"),
        ));
    }
    if have > needed {
        return Err(Error::parse(
            start + needed,
            format!("{} unexpected bytes after payload", have - needed),
        ));
    }
    Ok(())
}

/// Decodes PFM; `expect_channels` rejects gray/colour mismatches.
pub fn decode_pfm(bytes: &[u8], expect_channels: Option<usize>) -> Result<PfmImage> {
    let mut h = Header::new(bytes);
    let (at, magic) = h.token(false, "magic")?;
    let channels = match magic {
        "Pf" => 1,
        "PF" => 3,
        m => return Err(Error::parse(at, format!("unknown PFM magic {m:?}"))),
    };
    if let Some(c) = expect_channels {
        if c != channels {
            return Err(Error::data(format!(
                "PFM has {channels} channel(s), consumer expects {c}"
            )));
        }
    }
    let width: usize = h.number(false, "width")?;
    let height: usize = h.number(false, "height")?;
    let (at, scale_s) = h.token(false, "scale")?;
    let scale: f64 = scale_s
        .parse()
        .map_err(|_| Error::parse(at, format!("invalid scale {scale_s:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::parse(at, "scale must be nonzero"));
    }
    let start = h.end()?;
    let row = width
        .checked_mul(channels)
        .ok_or_else(|| Error::parse(0, "dimensions overflow"))?;
    let count = row
        .checked_mul(height)
        .ok_or_else(|| Error::parse(0, "dimensions overflow"))?;
    check_payload(bytes, start, count * 4)?;
    let little = scale < 0.0;
    let mut data = vec![0f32; count];
    for (i, chunk) in bytes[start..].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let file_row = i / row;
        let y = height - 1 - file_row;
        data[y * row + i % row] = v;
    }
    Ok(PfmImage {
        width,
        height,
        channels,
        data,
    })
}

/// Binary 16-bit PNM (`P5` gray, `P6` for three channels), maxval 65535,
/// big-endian samples.
pub fn encode_pgm16(width: usize, height: usize, channels: usize, data: &[u32]) -> Result<Vec<u8>> {
    let magic = match channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::arg(format!("PNM holds 1 or 3 channels, not {c}"))),
    };
    if data.len() != width * height * channels {
        return Err(Error::arg("PNM payload does not match dimensions"));
    }
    let mut out = format!("{magic}\n{width} {height}\n65535\n").into_bytes();
    for (i, &v) in data.iter().enumerate() {
        let v = u16::try_from(v)
            .map_err(|_| Error::data(format!("sample {v} at index {i} exceeds 65535")))?;
        out.extend_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u32,
    pub data: Vec<u32>,
}

pub fn decode_pgm16(bytes: &[u8]) -> Result<PgmImage> {
    let mut h = Header::new(bytes);
    let (at, magic) = h.token(true, "magic")?;
    let channels = match magic {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::parse(at, format!("unsupported PNM magic {m:?}"))),
    };
    let width: usize = h.number(true, "width")?;
    let height: usize = h.number(true, "height")?;
    let maxval: u32 = h.number(true, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(h.pos, format!("maxval {maxval} outside 1..=65535")));
    }
    let start = h.end()?;
    let wide = maxval > 255;
    let count = width * height * channels;
    check_payload(bytes, start, count * if wide { 2 } else { 1 })?;
    let payload = &bytes[start..];
    let data: Vec<u32> = if wide {
        payload
            .chunks_exact(2)
            .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
            .collect()
    } else {
        payload.iter().map(|&b| u32::from(b)).collect()
    };
    if let Some(i) = data.iter().position(|&v| v > maxval) {
        return Err(Error::data(format!(
            "sample {} at index {i} exceeds maxval {maxval}",
            data[i]
        )));
    }
    Ok(PgmImage {
        width,
        height,
        channels,
        maxval,
        data,
    })
}

pub const MANIFEST_NAME: &str = "manifest.txt";
const MANIFEST_MAGIC: &str = "unmod-clip-manifest";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    Pgm16,
    Pfm,
}

impl FrameFormat {
    fn as_str(self) -> &'static str {
        match self {
            FrameFormat::Pgm16 => "pgm16",
            FrameFormat::Pfm => "pfm",
        }
    }

    fn extension(self, channels: usize) -> &'static str {
        match (self, channels) {
            (FrameFormat::Pfm, _) => "pfm",
            (FrameFormat::Pgm16, 3) => "ppm",
            (FrameFormat::Pgm16, _) => "pgm",
        }
    }
}

/// Description of a clip stored as one file per frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipManifest {
    pub version: u32,
    pub kind: String,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub format: FrameFormat,
    /// Declared depth of integer frames.
    pub bit_depth: Option<u32>,
    pub bits_a: Option<u32>,
    pub bits_b: Option<u32>,
    /// Unrecognised keys, preserved in order.
    pub extras: Vec<(String, String)>,
    pub frames: Vec<String>,
}

impl ClipManifest {
    pub fn shape(&self) -> ClipShape {
        ClipShape::new(self.frames.len(), self.height, self.width, self.channels)
    }

    pub fn extra(&self, key: &str) -> Option<&str> {
        self.extras
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MANIFEST_MAGIC} v{}\n", self.version);
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(": ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("kind", self.kind.clone());
        kv("width", self.width.to_string());
        kv("height", self.height.to_string());
        kv("channels", self.channels.to_string());
        kv("frames", self.frames.len().to_string());
        kv("format", self.format.as_str().into());
        if let Some(b) = self.bit_depth {
            kv("bit_depth", b.to_string());
        }
        if let Some(b) = self.bits_a {
            kv("bits_a", b.to_string());
        }
        if let Some(b) = self.bits_b {
            kv("bits_b", b.to_string());
        }
        for (k, v) in &self.extras {
            kv(k, v.clone());
        }
        for f in &self.frames {
            kv("frame", f.clone());
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = Vec::new();
        let mut offset = 0;
        for raw in text.split_inclusive('\n') {
            lines.push((offset, raw.trim_end_matches(['\n', '\r'])));
            offset += raw.len();
        }
        let mut it = lines.into_iter().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = it.next().ok_or_else(|| Error::parse(0, "empty manifest"))?;
        let version = first
            .strip_prefix(MANIFEST_MAGIC)
            .and_then(|r| r.trim().strip_prefix('v'))
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| Error::parse(0, format!("bad manifest header {first:?}")))?;
        if version != MANIFEST_VERSION {
            return Err(Error::parse(0, format!("unsupported manifest version {version}")));
        }
        let mut kind = None;
        let mut width = None;
        let mut height = None;
        let mut channels = None;
        let mut count = None;
        let mut format = None;
        let mut bit_depth = None;
        let mut bits_a = None;
        let mut bits_b = None;
        let mut extras = Vec::new();
        let mut frames = Vec::new();
        for (at, line) in it {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::parse(at, format!("expected `key: value`, found {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let int = |v: &str| -> Result<usize> {
                v.parse()
                    .map_err(|_| Error::parse(at, format!("{k} must be an integer, found {v:?}")))
            };
            let bits = |v: &str| -> Result<u32> {
                v.parse()
                    .map_err(|_| Error::parse(at, format!("{k} must be an integer, found {v:?}")))
            };
            match k {
                "kind" => kind = Some(v.to_string()),
                "width" => width = Some(int(v)?),
                "height" => height = Some(int(v)?),
                "channels" => channels = Some(int(v)?),
                "frames" => count = Some(int(v)?),
                "format" => {
                    format = Some(match v {
                        "pgm16" => FrameFormat::Pgm16,
                        "pfm" => FrameFormat::Pfm,
                        _ => return Err(Error::parse(at, format!("unknown frame format {v:?}"))),
                    })
                }
                "bit_depth" => bit_depth = Some(bits(v)?),
                "bits_a" => bits_a = Some(bits(v)?),
                "bits_b" => bits_b = Some(bits(v)?),
                "frame" => frames.push(v.to_string()),
                _ => extras.push((k.to_string(), v.to_string())),
            }
        }
        let end = text.len();
        let need = |name: &str| Error::parse(end, format!("missing required key `{name}`"));
        let m = ClipManifest {
            version,
            kind: kind.ok_or_else(|| need("kind"))?,
            width: width.ok_or_else(|| need("width"))?,
            height: height.ok_or_else(|| need("height"))?,
            channels: channels.ok_or_else(|| need("channels"))?,
            format: format.ok_or_else(|| need("format"))?,
            bit_depth,
            bits_a,
            bits_b,
            extras,
            frames,
        };
        let declared = count.ok_or_else(|| need("frames"))?;
        if declared != m.frames.len() {
            return Err(Error::Validation(format!(
                "manifest declares {declared} frames but lists {}",
                m.frames.len()
            )));
        }
        m.validate_header()?;
        Ok(m)
    }

    fn validate_header(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("zero-sized frames".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Validation(format!(
                "{} channels; frames hold 1 or 3",
                self.channels
            )));
        }
        if let (Some(a), Some(b)) = (self.bits_a, self.bits_b) {
            if a >= b {
                return Err(Error::Validation(format!(
                    "modulo depth A={a} must be below target depth B={b}"
                )));
            }
        }
        if self.format == FrameFormat::Pgm16 {
            match self.bit_depth {
                Some(1..=16) => {}
                Some(b) => {
                    return Err(Error::Validation(format!(
                        "bit depth {b} does not fit 16-bit frames"
                    )))
                }
                None => return Err(Error::Validation("integer clip without bit_depth".into())),
            }
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(dir: &Path) -> Result<ClipManifest> {
    let path = dir.join(MANIFEST_NAME);
    let bytes = read_file(&path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::parse(e.utf8_error().valid_up_to(), "manifest is not UTF-8"))?;
    ClipManifest::parse(&text)
}

pub fn write_manifest(dir: &Path, manifest: &ClipManifest) -> Result<()> {
    write_file(&dir.join(MANIFEST_NAME), manifest.to_text().as_bytes())
}

/// Checks that every referenced frame exists and matches the declared
/// geometry.
pub fn validate_manifest(dir: &Path, m: &ClipManifest) -> Result<()> {
    for f in &m.frames {
        let path = dir.join(f);
        if !path.is_file() {
            return Err(Error::Validation(format!(
                "frame file {} is missing",
                path.display()
            )));
        }
    }
    match m.format {
        FrameFormat::Pgm16 => read_int_clip(dir).map(drop),
        FrameFormat::Pfm => read_real_clip(dir).map(drop),
    }
}

fn frame_name(t: usize, ext: &str) -> String {
    format!("frame_{t:05}.{ext}")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Header fields attached to a clip written to disk.
#[derive(Debug, Clone, Default)]
pub struct ClipMeta {
    pub kind: String,
    pub bits_a: Option<u32>,
    pub bits_b: Option<u32>,
    pub extras: Vec<(String, String)>,
}

impl ClipMeta {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            ..Self::default()
        }
    }

    pub fn bits(mut self, a: u32, b: u32) -> Self {
        self.bits_a = Some(a);
        self.bits_b = Some(b);
        self
    }

    pub fn extra(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.extras.push((key.into(), value.to_string()));
        self
    }
}

pub fn write_int_clip(dir: &Path, clip: &IntClip, meta: &ClipMeta) -> Result<ClipManifest> {
    let s = clip.shape();
    if clip.bit_depth() > 16 {
        return Err(Error::data(format!(
            "{}-bit clip does not fit 16-bit frames",
            clip.bit_depth()
        )));
    }
    create_dir(dir)?;
    let ext = FrameFormat::Pgm16.extension(s.channels);
    let mut frames = Vec::with_capacity(s.frames);
    for t in 0..s.frames {
        let name = frame_name(t, ext);
        write_file(&dir.join(&name), &encode_pgm16(s.width, s.height, s.channels, clip.frame(t))?)?;
        frames.push(name);
    }
    let m = ClipManifest {
        version: MANIFEST_VERSION,
        kind: meta.kind.clone(),
        width: s.width,
        height: s.height,
        channels: s.channels,
        format: FrameFormat::Pgm16,
        bit_depth: Some(clip.bit_depth()),
        bits_a: meta.bits_a,
        bits_b: meta.bits_b,
        extras: meta.extras.clone(),
        frames,
    };
    m.validate_header()?;
    write_manifest(dir, &m)?;
    Ok(m)
}

pub fn read_int_clip(dir: &Path) -> Result<(IntClip, ClipManifest)> {
    let m = read_manifest(dir)?;
    if m.format != FrameFormat::Pgm16 {
        return Err(Error::Validation(format!(
            "{} holds float frames, integer frames expected",
            dir.display()
        )));
    }
    let mut data = Vec::with_capacity(m.shape().len());
    for f in &m.frames {
        let path = dir.join(f);
        if !path.is_file() {
            return Err(Error::Validation(format!("frame file {} is missing", path.display())));
        }
        let img = decode_pgm16(&read_file(&path)?).map_err(|e| with_path(&path, e))?;
        if (img.width, img.height, img.channels) != (m.width, m.height, m.channels) {
            return Err(Error::Validation(format!(
                "{} is {}x{}x{}, manifest declares {}x{}x{}",
                path.display(),
                img.width,
                img.height,
                img.channels,
                m.width,
                m.height,
                m.channels
            )));
        }
        data.extend(img.data);
    }
    let clip = IntClip::new(m.shape(), m.bit_depth.unwrap_or(16), data)?;
    Ok((clip, m))
}

pub fn write_real_clip(dir: &Path, clip: &RealClip, meta: &ClipMeta) -> Result<ClipManifest> {
    let s = clip.shape();
    create_dir(dir)?;
    let mut frames = Vec::with_capacity(s.frames);
    for t in 0..s.frames {
        let name = frame_name(t, "pfm");
        let img = PfmImage {
            width: s.width,
            height: s.height,
            channels: s.channels,
            data: clip.frame(t).iter().map(|&v| v as f32).collect(),
        };
        write_file(&dir.join(&name), &encode_pfm(&img)?)?;
        frames.push(name);
    }
    let m = ClipManifest {
        version: MANIFEST_VERSION,
        kind: meta.kind.clone(),
        width: s.width,
        height: s.height,
        channels: s.channels,
        format: FrameFormat::Pfm,
        bit_depth: None,
        bits_a: meta.bits_a,
        bits_b: meta.bits_b,
        extras: meta.extras.clone(),
        frames,
    };
    m.validate_header()?;
    write_manifest(dir, &m)?;
    Ok(m)
}

pub fn read_real_clip(dir: &Path) -> Result<(RealClip, ClipManifest)> {
    let m = read_manifest(dir)?;
    if m.format != FrameFormat::Pfm {
        return Err(Error::Validation(format!(
            "{} holds integer frames, float frames expected",
            dir.display()
        )));
    }
    let mut data = Vec::with_capacity(m.shape().len());
    for f in &m.frames {
        let path = dir.join(f);
        if !path.is_file() {
            return Err(Error::Validation(format!("frame file {} is missing", path.display())));
        }
        let img = decode_pfm(&read_file(&path)?, Some(m.channels)).map_err(|e| with_path(&path, e))?;
        if (img.width, img.height) != (m.width, m.height) {
            return Err(Error::Validation(format!(
                "{} is {}x{}, manifest declares {}x{}",
                path.display(),
                img.width,
                img.height,
                m.width,
                m.height
            )));
        }
        data.extend(img.data.into_iter().map(f64::from));
    }
    Ok((RealClip::new(m.shape(), data)?, m))
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { offset, message } => Error::Parse {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        Error::InvalidData(m) => Error::InvalidData(format!("{}: {m}", path.display())),
        other => other,
    }
}

/// Paths of the clip directories inside a dataset directory.
pub fn clip_dirs(root: &Path, video: &str) -> [(PathBuf, &'static str); 4] {
    let base = root.join(video);
    [
        (base.join("gt"), "gt"),
        (base.join("modulo"), "modulo"),
        (base.join("counts"), "counts"),
        (base.join("ldr"), "ldr"),
    ]
}
