use std::fs;
use std::path::{Path, PathBuf};

use groupsr_core::archive::{archive_checksum, load_codec_checked, save_codec};
use groupsr_core::backbone::{BackboneRegistry, ToyBackbone};
use groupsr_core::bench::{run_latency_grid, speedup_report, BenchScenario};
use groupsr_core::codec::Codec;
use groupsr_core::degrade::{make_lr, mix_dataset, DegradeConfig};
use groupsr_core::metrics::{psnr_y, sequence_metrics};
use groupsr_core::pipeline::roundtrip;
use groupsr_core::synth::{degrade_clips, synth_clip, Sample};
use groupsr_core::train::{pretrain_codec, train_backbone, train_joint, TrainLog, TrainMode};
use groupsr_core::video::{extract_groups, merge_groups, stack, unstack};
use serde::Serialize;

use crate::chart;
use crate::config::PipelineConfig;
use crate::error::{io_err, CliError, CliResult};
use crate::frames::{
    content_hash, load_clip, read_frames, to_image, write_frames, ClipEntry, ClipManifest, Provenance, Role,
};

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| io_err(path, e))
}

fn codec_dir(cfg: &PipelineConfig, flag: Option<&Path>) -> CliResult<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.paths.codec_archive.clone())
        .ok_or_else(|| CliError::Config("no codec archive: pass --codec or set paths.codec_archive".into()))
}

fn load_codec(cfg: &PipelineConfig, flag: Option<&Path>) -> CliResult<Codec<f32>> {
    let dir = codec_dir(cfg, flag)?;
    if !dir.is_dir() {
        return Err(CliError::Data(format!("codec archive {} does not exist", dir.display())));
    }
    Ok(load_codec_checked(&dir, &cfg.codec)?)
}

pub struct SynthArgs {
    pub out: PathBuf,
    pub clips: usize,
    pub frames: usize,
    pub size: usize,
    pub role: Role,
}

/// Procedural high-resolution clips plus their manifest.
pub fn synth(cfg: &PipelineConfig, args: &SynthArgs) -> CliResult<PathBuf> {
    let mut manifest = ClipManifest::default();
    for i in 0..args.clips {
        let id = format!("clip-{i:03}");
        let seq = synth_clip::<f32>(cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64), args.frames, args.size)?;
        write_frames(&args.out.join(&id), seq.frames())?;
        manifest.clips.push(ClipEntry {
            frames_dir: PathBuf::from(&id),
            id,
            frame_count: seq.len(),
            role: args.role,
            sha256: Some(content_hash(seq.frames())),
            degrade: None,
        });
    }
    let path = args.out.join("manifest.json");
    manifest.write(&path)?;
    Ok(path)
}

/// Blur, decimate and compress every clip. `crf` fixes one CRF for all clips;
/// otherwise the dataset mix assigns them.
pub fn degrade(cfg: &PipelineConfig, manifest_path: &Path, out: &Path, crf: Option<u32>) -> CliResult<PathBuf> {
    let (manifest, base) = ClipManifest::read(manifest_path)?;
    let ids: Vec<String> = manifest.clips.iter().map(|c| c.id.clone()).collect();
    let mix = mix_dataset(&ids, cfg.dataset.fraction_compressed, &cfg.dataset.crf_set, cfg.seed)?;
    let mut result = ClipManifest::default();
    for (entry, m) in manifest.clips.iter().zip(mix) {
        let hr = load_clip(entry, &base, cfg.dataset.frame_rate)?;
        let dcfg = DegradeConfig {
            crf: crf.unwrap_or(m.crf),
            ..cfg.degrade.clone()
        };
        let d = make_lr(&hr, &dcfg)?;
        if let Some(w) = &d.warning {
            log::warn!("clip `{}`: {w}", entry.id);
        }
        write_frames(&out.join(&entry.id), d.sequence.frames())?;
        result.clips.push(ClipEntry {
            id: entry.id.clone(),
            frames_dir: PathBuf::from(&entry.id),
            frame_count: d.sequence.len(),
            role: entry.role,
            sha256: Some(content_hash(d.sequence.frames())),
            degrade: Some(Provenance {
                source: base.join(&entry.frames_dir),
                crf: dcfg.crf,
                seed: m.seed,
                compressor: d.compressor_used,
                warning: d.warning,
            }),
        });
    }
    let path = out.join("manifest.json");
    result.write(&path)?;
    Ok(path)
}

/// Training and validation samples from a manifest of high-resolution clips.
fn load_samples(cfg: &PipelineConfig, manifest_path: &Path) -> CliResult<(Vec<Sample<f32>>, Vec<Sample<f32>>)> {
    let (manifest, base) = ClipManifest::read(manifest_path)?;
    let mut clips = Vec::new();
    for entry in &manifest.clips {
        if entry.role != Role::Test {
            clips.push((entry.id.clone(), load_clip(entry, &base, cfg.dataset.frame_rate)?, entry.role));
        }
    }
    let roles: Vec<Role> = clips.iter().map(|c| c.2).collect();
    let samples = degrade_clips(
        clips.into_iter().map(|(id, seq, _)| (id, seq)).collect(),
        &cfg.degrade,
        cfg.dataset.fraction_compressed,
        &cfg.dataset.crf_set,
        cfg.seed,
    )?;
    let (train, val): (Vec<_>, Vec<_>) = samples.into_iter().zip(roles).partition(|(_, r)| *r == Role::Train);
    let train: Vec<Sample<f32>> = train.into_iter().map(|(s, _)| s).collect();
    if train.is_empty() {
        return Err(CliError::Data(format!("{}: no clips with role `train`", manifest_path.display())));
    }
    Ok((train, val.into_iter().map(|(s, _)| s).collect()))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    stage: &'a str,
    steps: usize,
    initial_eval_psnr_y: Option<f64>,
    final_eval_psnr_y: Option<f64>,
    stopped_at: Option<usize>,
    notes: &'a [String],
    outputs: Vec<PathBuf>,
}

fn write_log(out: &Path, log: &TrainLog, steps: usize, outputs: Vec<PathBuf>) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let path = out.join("log.jsonl");
    // resumed runs append to the earlier part of the curve
    let mut text = if log.notes.iter().any(|n| n.starts_with("resumed")) {
        fs::read_to_string(&path).unwrap_or_default()
    } else {
        String::new()
    };
    text.push_str(&log.to_jsonl()?);
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    write_json(
        &out.join("summary.json"),
        &TrainSummary {
            stage: &log.stage,
            steps,
            initial_eval_psnr_y: log.initial_eval_psnr_y,
            final_eval_psnr_y: log.final_eval_psnr_y,
            stopped_at: log.stopped_at,
            notes: &log.notes,
            outputs,
        },
    )
}

/// Stage one. Writes `out/codec` when training completes.
pub fn pretrain(cfg: &PipelineConfig, manifest: &Path, out: &Path) -> CliResult<TrainLog> {
    let (train, val) = load_samples(cfg, manifest)?;
    let mut codec = Codec::<f32>::new(cfg.codec.clone(), cfg.seed)?;
    let log = pretrain_codec(&train, &mut codec, &cfg.train, &val, Some(&out.join("checkpoint")))?;
    let mut outputs = Vec::new();
    if log.stopped_at.is_none() {
        let dir = out.join("codec");
        save_codec(&dir, &codec)?;
        outputs.push(dir);
    }
    write_log(out, &log, cfg.train.total_steps, outputs)?;
    Ok(log)
}

/// Stage two (or joint training, per `train.mode`). Writes `out/backbone`
/// and, when the codec was trained too, `out/codec`.
pub fn train(cfg: &PipelineConfig, manifest: &Path, out: &Path, codec_flag: Option<&Path>) -> CliResult<TrainLog> {
    if cfg.backbone.name != "toy" {
        return Err(CliError::Config(format!(
            "backbone `{}` has no trainable parameters; use `toy`",
            cfg.backbone.name
        )));
    }
    let codec = match cfg.train.mode {
        TrainMode::Joint => None,
        TrainMode::Pretrained | TrainMode::PretrainedJoint => {
            let dir = codec_flag
                .map(Path::to_path_buf)
                .or_else(|| cfg.paths.codec_archive.clone())
                .filter(|d| d.is_dir())
                .ok_or_else(|| {
                    CliError::Data(format!(
                        "mode `{:?}` needs a stage-one codec archive (run `pretrain`, then pass --codec or set paths.codec_archive)",
                        cfg.train.mode
                    ))
                })?;
            Some((load_codec_checked::<f32>(&dir, &cfg.codec)?, archive_checksum(&dir)?, dir))
        }
    };
    let (train, val) = load_samples(cfg, manifest)?;
    let mut toy = ToyBackbone::<f32>::new(cfg.backbone.scale, &cfg.toy, cfg.seed.wrapping_add(1))?;
    let checkpoint = out.join("checkpoint");
    let mut outputs = vec![out.join("backbone")];
    let log = match (cfg.train.mode, codec) {
        (TrainMode::Pretrained, Some((codec, before, dir))) => {
            let log = train_backbone(&train, &codec, &mut toy, &cfg.train, &val, Some(&checkpoint))?;
            if archive_checksum(&dir)? != before {
                return Err(CliError::Runtime("codec archive changed during frozen training".into()));
            }
            log
        }
        (mode, codec) => {
            let mut codec = match codec {
                Some((c, _, _)) => c,
                None => Codec::<f32>::new(cfg.codec.clone(), cfg.seed)?,
            };
            let log = train_joint(&train, &mut codec, &mut toy, &cfg.train, &val, Some(&checkpoint))?;
            if log.stopped_at.is_none() {
                save_codec(&out.join("codec"), &codec)?;
                outputs.push(out.join("codec"));
            }
            log::info!("trained codec and backbone jointly ({mode:?})");
            log
        }
    };
    if log.stopped_at.is_none() {
        toy.save(&out.join("backbone"))?;
    } else {
        outputs.clear();
    }
    write_log(out, &log, cfg.train.total_steps, outputs)?;
    Ok(log)
}

/// Super-resolves a low-resolution frame directory. Returns the number of
/// latent frames.
pub fn infer(cfg: &PipelineConfig, clip: &Path, out: &Path, codec_flag: Option<&Path>, dump_latents: bool) -> CliResult<usize> {
    let lr = read_frames(clip, cfg.dataset.frame_rate)?;
    let codec = load_codec(cfg, codec_flag)?;
    if cfg.backbone.name == "toy" && cfg.backbone.archive.is_none() {
        log::warn!("toy backbone has no archive; using untrained weights");
    }
    let backbone = BackboneRegistry::<f32>::default().build(&cfg.backbone, &cfg.toy, cfg.seed.wrapping_add(1))?;
    let latents = codec.compress(&lr)?;
    let sr = groupsr_core::backbone::super_resolve(&latents, backbone.as_ref(), cfg.backbone.scale)?;
    let frames = codec.decompress(&sr, &latents.plan, &lr, cfg.backbone.scale)?;
    write_frames(out, frames.frames())?;
    if dump_latents {
        let dir = out.join("latents");
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        for (i, l) in latents.latents.iter().enumerate() {
            let path = dir.join(crate::frames::frame_name(i));
            to_image(&l.clamp01())?.save(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        }
    }
    Ok(latents.len())
}

pub fn eval(pred: &Path, gt: &Path, frame_rate: f64) -> CliResult<groupsr_core::metrics::MetricsReport> {
    let p = read_frames(pred, frame_rate)?;
    let g = read_frames(gt, frame_rate)?;
    Ok(sequence_metrics(&p, &g)?)
}

#[derive(Serialize)]
pub struct BenchOutputs {
    pub csv: PathBuf,
    pub report: PathBuf,
    pub charts: Vec<PathBuf>,
}

pub fn bench(scenario: &Path, out: &Path, codec_flag: Option<&Path>, charts: bool) -> CliResult<BenchOutputs> {
    let text = fs::read_to_string(scenario).map_err(|e| CliError::Config(format!("{}: {e}", scenario.display())))?;
    let sc: BenchScenario =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", scenario.display(), e.message())))?;
    sc.validate()?;
    let codec = match codec_flag {
        Some(dir) => load_codec_checked::<f32>(dir, &sc.codec)?,
        None => Codec::<f32>::new(sc.codec.clone(), sc.seed)?,
    };
    let backbone = BackboneRegistry::<f32>::default().build(&sc.backbone, &sc.toy, sc.seed)?;
    let results = run_latency_grid(&sc, &codec, backbone.as_ref(), |cells| {
        for c in cells {
            log::info!(
                "frames={} resolution={} compression={} median_ms={:.2} status={:?}",
                c.frames,
                c.resolution,
                c.compression,
                c.median_ms,
                c.status
            );
        }
    })?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let csv = out.join("latency.csv");
    fs::write(&csv, results.to_csv()).map_err(|e| io_err(&csv, e))?;
    let report = out.join("speedup.json");
    write_json(&report, &speedup_report(&results))?;
    let mut written = Vec::new();
    if charts {
        for &res in &sc.resolutions {
            if let Some(img) = chart::render(&results, res) {
                let path = out.join(format!("latency-{res}.png"));
                img.save(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                written.push(path);
            }
        }
    }
    Ok(BenchOutputs {
        csv,
        report,
        charts: written,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundtripMode {
    /// Grouping and merging only; must reproduce the input exactly.
    Grouping,
    /// Cleaning, encoder, decoder and color correction at scale 1.
    Codec,
}

#[derive(Serialize)]
pub struct RoundtripReport {
    pub mode: RoundtripMode,
    pub frames: usize,
    pub group_count: usize,
    #[serde(serialize_with = "db_list")]
    pub psnr_y: Vec<f64>,
    /// Mean over finite values; `inf` when every frame matched exactly.
    #[serde(serialize_with = "db")]
    pub mean_psnr_y: f64,
    pub max_abs_diff: f64,
}

struct Db(f64);

impl Serialize for Db {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

fn db<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    Db(*v).serialize(s)
}

fn db_list<S: serde::Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| Db(*x)))
}

pub fn roundtrip_cmd(cfg: &PipelineConfig, clip: &Path, mode: RoundtripMode, codec_flag: Option<&Path>) -> CliResult<RoundtripReport> {
    let lr = read_frames(clip, cfg.dataset.frame_rate)?;
    let plan = cfg.codec.plan(lr.len())?;
    let rebuilt = match mode {
        RoundtripMode::Grouping => {
            let groups = extract_groups(&stack(&lr), &plan)?;
            unstack(&merge_groups(&groups, &plan)?, lr.frame_rate())?
        }
        RoundtripMode::Codec => roundtrip(&load_codec(cfg, codec_flag)?, &lr)?,
    };
    let psnr = rebuilt
        .frames()
        .iter()
        .zip(lr.frames())
        .map(|(a, b)| psnr_y(a, b))
        .collect::<groupsr_core::Result<Vec<f64>>>()?;
    let finite: Vec<f64> = psnr.iter().copied().filter(|v| v.is_finite()).collect();
    let mean_psnr_y = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    let max_abs_diff = rebuilt
        .frames()
        .iter()
        .zip(lr.frames())
        .map(|(a, b)| a.max_abs_diff(b))
        .fold(0.0, f64::max);
    Ok(RoundtripReport {
        mode,
        frames: lr.len(),
        group_count: plan.group_count,
        psnr_y: psnr,
        mean_psnr_y,
        max_abs_diff,
    })
}
