use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use unmod_core::datagen::{make_tuple, DatasetTuple, SynthConfig, SyntheticVideo};
use unmod_core::io::{clip_dirs, read_int_clip, write_int_clip, write_real_clip, ClipMeta, MANIFEST_NAME};
use unmod_core::modulo::{FoldCountMap, IntClip};
use unmod_core::{Error, Result};

pub const SYNTH_CONFIG: &str = "synth.toml";
pub const PROVENANCE: &str = "provenance.txt";
pub const RUN_LOG: &str = "run.log";

pub fn video_name(index: usize) -> String {
    format!("video_{index:03}")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// True when `dir` directly holds a clip manifest.
pub fn is_clip_dir(dir: &Path) -> bool {
    dir.join(MANIFEST_NAME).is_file()
}

/// Video subdirectories of a dataset root, sorted by name. A directory that
/// itself contains a `modulo` clip counts as a single video.
pub fn list_videos(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    if is_clip_dir(&root.join("modulo")) || is_clip_dir(&root.join("recon")) {
        let name = root
            .file_name()
            .map_or_else(|| "video".to_string(), |n| n.to_string_lossy().into_owned());
        return Ok(vec![(name, root.to_path_buf())]);
    }
    let entries = fs::read_dir(root).map_err(|e| Error::Io {
        path: root.to_path_buf(),
        source: e,
    })?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::Io {
            path: root.to_path_buf(),
            source: e,
        })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("video_") && entry.path().is_dir() {
            out.push((name, entry.path()));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Validation(format!("{} contains no videos", root.display())));
    }
    Ok(out)
}

pub fn write_video(root: &Path, index: usize, video: &SyntheticVideo, cfg: &SynthConfig) -> Result<()> {
    let name = video_name(index);
    let [gt, modulo, counts, ldr] = clip_dirs(root, &name);
    let t = &video.tuple;
    let meta = |kind: &str| {
        ClipMeta::new(kind)
            .bits(cfg.bits_a, cfg.bits_b)
            .extra("video", &name)
            .extra("seed", cfg.seed)
    };
    write_int_clip(&gt.0, &t.gt, &meta(gt.1))?;
    write_int_clip(&modulo.0, &t.modulo, &meta(modulo.1))?;
    let counts_clip = IntClip::new(t.counts.shape(), cfg.bits_b - cfg.bits_a, t.counts.counts().to_vec())?;
    write_int_clip(&counts.0, &counts_clip, &meta(counts.1))?;
    write_int_clip(&ldr.0, &t.ldr, &meta(ldr.1))?;
    write_real_clip(
        &root.join(&name).join("hdr"),
        &video.hdr,
        &meta("hdr").extra("exposure", format!("{:e}", video.exposure)),
    )?;
    Ok(())
}

/// Loads a video's tuple from its ground truth and checks the stored
/// modulo frames and fold counts against a fresh fold.
pub fn read_tuple(dir: &Path) -> Result<(DatasetTuple, u32)> {
    let (gt, m) = read_int_clip(&dir.join("gt"))?;
    let bits_a = m
        .bits_a
        .ok_or_else(|| Error::Validation(format!("{} does not record the modulo depth", dir.display())))?;
    let tuple = make_tuple(&gt, bits_a)?;
    let (modulo, _) = read_int_clip(&dir.join("modulo"))?;
    if modulo.data() != tuple.modulo.data() {
        return Err(Error::Validation(format!("{}: modulo frames disagree with ground truth", dir.display())));
    }
    let counts = read_counts(dir)?;
    if counts.counts() != tuple.counts.counts() {
        return Err(Error::Validation(format!("{}: fold counts disagree with ground truth", dir.display())));
    }
    tuple.check_consistency()?;
    Ok((tuple, gt.bit_depth()))
}

pub fn read_counts(dir: &Path) -> Result<FoldCountMap> {
    let (c, _) = read_int_clip(&dir.join("counts"))?;
    FoldCountMap::new(c.shape(), c.into_data())
}

/// Ordered `key: value` record of a run's resolved inputs.
#[derive(Debug, Default)]
pub struct Provenance {
    lines: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        let mut p = Self::default();
        p.add("tool", concat!("unmod ", env!("CARGO_PKG_VERSION")));
        p.add("command", command);
        p
    }

    pub fn add(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.lines.push((key.to_string(), value.to_string()));
        self
    }

    pub fn text(&self) -> String {
        let mut s = String::from("unmod-provenance v1\n");
        for (k, v) in &self.lines {
            let _ = writeln!(s, "{k}: {v}");
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_text(&dir.join(PROVENANCE), &self.text())
    }
}
