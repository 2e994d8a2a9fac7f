//! Parameter archives.
//!
//! An archive is a directory holding `header.json` and one blob per parameter
//! tensor. Blob file names are the parameter's canonical dotted path plus
//! `.bin` (for example `encoder.blocks.0.conv1.weight.bin`); each blob is the
//! tensor's values as little-endian `f32` in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{Codec, CodecConfig, LATENT_CHANNELS};
use crate::error::{Error, Result};
use crate::nn::Parameterized;
use crate::scalar::Scalar;

pub const ARCHIVE_VERSION: u32 = 1;
pub const HEADER_FILE: &str = "header.json";
pub const CODEC_KIND: &str = "codec";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveHeader {
    pub version: u32,
    /// What the archive holds, e.g. `codec` or `backbone:toy`.
    pub kind: String,
    /// Architecture hyperparameters; must match exactly on load.
    pub architecture: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

pub fn read_header(dir: &Path) -> Result<ArchiveHeader> {
    let path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let header: ArchiveHeader = serde_json::from_str(&text)?;
    if header.version != ARCHIVE_VERSION {
        return Err(Error::Archive(format!(
            "{}: version {} is not supported (expected {ARCHIVE_VERSION})",
            path.display(),
            header.version
        )));
    }
    Ok(header)
}

/// Writes every parameter of `module` plus a header.
pub fn write_archive<T: Scalar, P: Parameterized<T>>(
    dir: &Path,
    kind: &str,
    architecture: &impl Serialize,
    module: &P,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tensors = Vec::new();
    for (name, p) in module.params() {
        let file = format!("{name}.bin");
        let bytes: Vec<u8> = p
            .data
            .iter()
            .flat_map(|v| (v.to_f64_lossy() as f32).to_le_bytes())
            .collect();
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        tensors.push(TensorEntry {
            name,
            shape: p.shape.clone(),
            file,
        });
    }
    let header = ArchiveHeader {
        version: ARCHIVE_VERSION,
        kind: kind.to_string(),
        architecture: serde_json::to_value(architecture)?,
        tensors,
    };
    let path = dir.join(HEADER_FILE);
    fs::write(&path, serde_json::to_string_pretty(&header)?).map_err(io_err(&path))?;
    Ok(())
}

/// Fills `module` from an archive whose kind, architecture and tensor list
/// match `module` exactly.
pub fn read_archive_into<T: Scalar, P: Parameterized<T>>(
    dir: &Path,
    kind: &str,
    architecture: &impl Serialize,
    module: &mut P,
) -> Result<()> {
    let header = read_header(dir)?;
    if header.kind != kind {
        return Err(Error::Archive(format!(
            "{} holds `{}`, expected `{kind}`",
            dir.display(),
            header.kind
        )));
    }
    let expected = serde_json::to_value(architecture)?;
    if header.architecture != expected {
        return Err(Error::Archive(format!(
            "{}: architecture {} does not match {}",
            dir.display(),
            header.architecture,
            expected
        )));
    }
    let names: Vec<(String, Vec<usize>)> = module
        .params()
        .into_iter()
        .map(|(n, p)| (n, p.shape.clone()))
        .collect();
    if names.len() != header.tensors.len() {
        return Err(Error::Archive(format!(
            "{}: {} tensors in archive, module has {}",
            dir.display(),
            header.tensors.len(),
            names.len()
        )));
    }
    for ((name, shape), (entry, dst)) in names.iter().zip(header.tensors.iter().zip(module.params_mut())) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::Archive(format!(
                "tensor `{}` {:?} does not match expected `{name}` {shape:?}",
                entry.name, entry.shape
            )));
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if bytes.len() != dst.data.len() * 4 {
            return Err(Error::Archive(format!(
                "{}: {} bytes, expected {}",
                path.display(),
                bytes.len(),
                dst.data.len() * 4
            )));
        }
        for (v, chunk) in dst.data.iter_mut().zip(bytes.chunks_exact(4)) {
            let x = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            if !x.is_finite() {
                return Err(Error::Archive(format!("{}: non-finite value", path.display())));
            }
            *v = T::of(x as f64);
        }
    }
    Ok(())
}

/// Hex SHA-256 over the header and every blob listed in it.
pub fn archive_checksum(dir: &Path) -> Result<String> {
    let header = read_header(dir)?;
    let mut hasher = Sha256::new();
    let hp = dir.join(HEADER_FILE);
    hasher.update(fs::read(&hp).map_err(io_err(&hp))?);
    for t in &header.tensors {
        let path = dir.join(&t.file);
        hasher.update(t.name.as_bytes());
        hasher.update(fs::read(&path).map_err(io_err(&path))?);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Serialize)]
struct CodecArchitecture<'a> {
    latent_channels: usize,
    #[serde(flatten)]
    config: &'a CodecConfig,
}

pub fn save_codec<T: Scalar>(dir: &Path, codec: &Codec<T>) -> Result<()> {
    let arch = CodecArchitecture {
        latent_channels: LATENT_CHANNELS,
        config: &codec.config,
    };
    write_archive(dir, CODEC_KIND, &arch, codec)
}

/// Loads a codec, taking the architecture from the header.
pub fn load_codec<T: Scalar>(dir: &Path) -> Result<Codec<T>> {
    let header = read_header(dir)?;
    let mut arch = header.architecture.clone();
    let latent = arch
        .as_object_mut()
        .and_then(|o| o.remove("latent_channels"))
        .and_then(|v| v.as_u64());
    if latent != Some(LATENT_CHANNELS as u64) {
        return Err(Error::Archive(format!(
            "{}: latent channel count {latent:?} is not {LATENT_CHANNELS}",
            dir.display()
        )));
    }
    let config: CodecConfig = serde_json::from_value(arch)
        .map_err(|e| Error::Archive(format!("{}: bad codec architecture: {e}", dir.display())))?;
    load_codec_checked(dir, &config)
}

/// Loads a codec and rejects archives built for a different configuration.
pub fn load_codec_checked<T: Scalar>(dir: &Path, config: &CodecConfig) -> Result<Codec<T>> {
    let mut codec = Codec::new(config.clone(), 0)?;
    let arch = CodecArchitecture {
        latent_channels: LATENT_CHANNELS,
        config,
    };
    read_archive_into(dir, CODEC_KIND, &arch, &mut codec)?;
    Ok(codec)
}

/// Path of a blob inside an archive.
pub fn blob_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.bin"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowMethod;

    fn small() -> CodecConfig {
        CodecConfig {
            cleaning_width: 4,
            cleaning_blocks: 1,
            coder_width: 8,
            coder_blocks: 1,
            flow: FlowMethod::Zero,
            ..CodecConfig::default()
        }
    }

    #[test]
    fn codec_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let codec = Codec::<f32>::new(small(), 3).unwrap();
        save_codec(dir.path(), &codec).unwrap();
        assert!(blob_path(dir.path(), "encoder.blocks.0.conv1.weight").exists());
        let back: Codec<f32> = load_codec(dir.path()).unwrap();
        assert_eq!(back, codec);
        let sum1 = archive_checksum(dir.path()).unwrap();
        save_codec(dir.path(), &back).unwrap();
        assert_eq!(sum1, archive_checksum(dir.path()).unwrap());
    }

    #[test]
    fn mismatched_architecture_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_codec(dir.path(), &Codec::<f32>::new(small(), 3).unwrap()).unwrap();
        let other = CodecConfig {
            coder_width: 16,
            ..small()
        };
        assert!(matches!(
            load_codec_checked::<f32>(dir.path(), &other),
            Err(Error::Archive(_))
        ));
        let bad = dir.path().join("decoder.output.bias.bin");
        fs::write(&bad, [0u8; 3]).unwrap();
        assert!(load_codec::<f32>(dir.path()).is_err());
    }

    #[test]
    fn missing_archive_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_codec::<f32>(&dir.path().join("nope")), Err(Error::Io { .. })));
    }
}
