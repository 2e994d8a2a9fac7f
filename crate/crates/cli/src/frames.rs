//! Frame directories (`%08d.png`, 8-bit RGB) and clip manifests.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use groupsr_core::degrade::{quantize_u8, Compressor};
use groupsr_core::video::VideoSequence;
use groupsr_core::Tensor;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError, CliResult};

pub fn frame_name(i: usize) -> String {
    format!("{i:08}.png")
}

/// Indices of the `%08d.png` files in `dir`; must run 0..n without gaps.
fn frame_count(dir: &Path) -> CliResult<usize> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut found = BTreeSet::new();
    for entry in entries {
        let name = entry.map_err(|e| io_err(dir, e))?.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".png") {
            if stem.len() == 8 && stem.bytes().all(|b| b.is_ascii_digit()) {
                found.insert(stem.parse::<usize>().expect("eight digits"));
            }
        }
    }
    if found.is_empty() {
        return Err(CliError::Data(format!("{}: no %08d.png frames", dir.display())));
    }
    let n = found.len();
    if found.iter().next_back() != Some(&(n - 1)) {
        let missing = (0..n).find(|i| !found.contains(i)).unwrap_or(n);
        return Err(CliError::Data(format!(
            "{}: frames are not contiguous, {} is missing",
            dir.display(),
            frame_name(missing)
        )));
    }
    Ok(n)
}

pub fn read_frame(path: &Path) -> CliResult<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn(3, h, w, |c, y, x| {
        f32::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
    }))
}

pub fn read_frames(dir: &Path, frame_rate: f64) -> CliResult<VideoSequence<f32>> {
    let n = frame_count(dir)?;
    let frames = (0..n)
        .map(|i| read_frame(&dir.join(frame_name(i))))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(VideoSequence::new(frames, frame_rate)?)
}

pub fn to_image(frame: &Tensor<f32>) -> CliResult<RgbImage> {
    if frame.channels() != 3 {
        return Err(CliError::Data(format!("cannot write a {}-channel frame as RGB", frame.channels())));
    }
    let (h, w) = frame.spatial();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb([0, 1, 2].map(|c| quantize_u8(frame.at(c, y as usize, x as usize))))
    }))
}

pub fn write_frames(dir: &Path, frames: &[Tensor<f32>]) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        let path = dir.join(frame_name(i));
        to_image(f)?.save(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

/// SHA-256 over the 8-bit RGB bytes of every frame in order.
pub fn content_hash(frames: &[Tensor<f32>]) -> String {
    let mut h = Sha256::new();
    for f in frames {
        let (c, ht, w) = f.shape();
        h.update([c as u8]);
        h.update((ht as u64).to_le_bytes());
        h.update((w as u64).to_le_bytes());
        let bytes: Vec<u8> = f.data().iter().map(|&v| quantize_u8(v)).collect();
        h.update(&bytes);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub source: PathBuf,
    pub crf: u32,
    pub seed: u64,
    pub compressor: Compressor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub frames_dir: PathBuf,
    pub frame_count: usize,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degrade: Option<Provenance>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipManifest {
    pub clips: Vec<ClipEntry>,
}

impl ClipManifest {
    pub fn read(path: &Path) -> CliResult<(Self, PathBuf)> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let m: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut ids = BTreeSet::new();
        for c in &m.clips {
            if !ids.insert(&c.id) {
                return Err(CliError::Data(format!("duplicate clip id `{}`", c.id)));
            }
            let dir = base.join(&c.frames_dir);
            if !dir.is_dir() {
                return Err(CliError::Data(format!("clip `{}`: {} is not a directory", c.id, dir.display())));
            }
        }
        Ok((m, base))
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| io_err(path, e))
    }
}

/// Loads a manifest clip and checks its recorded frame count.
pub fn load_clip(entry: &ClipEntry, base: &Path, frame_rate: f64) -> CliResult<VideoSequence<f32>> {
    let seq = read_frames(&base.join(&entry.frames_dir), frame_rate)?;
    if seq.len() != entry.frame_count {
        return Err(CliError::Data(format!(
            "clip `{}`: manifest says {} frames, found {}",
            entry.id,
            entry.frame_count,
            seq.len()
        )));
    }
    Ok(seq)
}
