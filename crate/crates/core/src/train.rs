//! Optimization: loss, schedule, Adam, and the two training stages.
//!
//! Stage one teaches the codec an identity round trip at input resolution
//! (scale 1, no backbone), supervised by the uncompressed low-resolution clip.
//! Stage two freezes the codec and trains the backbone on its latents against
//! the high-resolution clip. Joint training updates everything at once.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{load_codec_checked, read_archive_into, save_codec, write_archive};
use crate::backbone::ToyBackbone;
use crate::codec::{compress_backward, compress_train, decompress_backward, decompress_train, Codec, LatentSequence};
use crate::error::{Error, Result};
use crate::flow::FlowMethod;
use crate::nn::{Param, Parameterized};
use crate::pipeline::{mean_over_clips, mean_psnr, roundtrip, run_pipeline};
use crate::scalar::Scalar;
use crate::synth::Sample;
use crate::tensor::Tensor;
use crate::video::VideoSequence;

/// Mean of `sqrt((pred - gt)^2 + eps^2)`.
pub fn charbonnier_loss<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, eps: f64) -> Result<f64> {
    pred.ensure_same_shape(gt, "charbonnier")?;
    let e2 = eps * eps;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| {
            let d = (p - g).to_f64_lossy();
            (d * d + e2).sqrt()
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Gradient of `weight * charbonnier_loss(pred, gt, eps)` with respect to `pred`.
pub fn charbonnier_backward<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, eps: f64, weight: f64) -> Tensor<T> {
    let e2 = eps * eps;
    let k = weight / pred.len() as f64;
    let data = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| {
            let d = (p - g).to_f64_lossy();
            T::of(k * d / (d * d + e2).sqrt())
        })
        .collect();
    Tensor::from_vec(pred.channels(), pred.height(), pred.width(), data).expect("same shape as pred")
}

/// `lr0 (1 + cos(pi step / total)) / 2`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> f64 {
    if step >= total_steps {
        return 0.0;
    }
    lr0 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos()) / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// First and second moments for every parameter of one module.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    names: Vec<String>,
    m: Vec<Param<T>>,
    v: Vec<Param<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<P: Parameterized<T>>(module: &P) -> Self {
        let params = module.params();
        Self {
            step: 0,
            names: params.iter().map(|(n, _)| n.clone()).collect(),
            m: params.iter().map(|(_, p)| Param::zeros(&p.shape)).collect(),
            v: params.iter().map(|(_, p)| Param::zeros(&p.shape)).collect(),
        }
    }
}

impl<T: Scalar> Parameterized<T> for AdamState<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let m = self.names.iter().zip(&self.m).map(|(n, p)| (format!("m.{n}"), p));
        let v = self.names.iter().zip(&self.v).map(|(n, p)| (format!("v.{n}"), p));
        m.chain(v).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.m.iter_mut().chain(self.v.iter_mut()).collect()
    }
}

/// One bias-corrected Adam step. Non-finite gradients abort without touching
/// the parameters.
pub fn adam_update<T: Scalar, P: Parameterized<T>>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    let g = grads.params();
    if g.len() != state.m.len() {
        return Err(Error::Training("optimizer state does not match the module".into()));
    }
    for (name, p) in &g {
        if let Some(bad) = p.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient in `{name}` at index {bad}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let step_size = T::of(lr / bc1);
    let bc2_sqrt = T::of(bc2.sqrt());
    let eps = T::of(cfg.eps);
    for (((p, (_, g)), m), v) in params
        .params_mut()
        .into_iter()
        .zip(g)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for (((x, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            *x -= step_size * *mi / (vi.sqrt() / bc2_sqrt + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Stage one, then the backbone on a frozen codec.
    Pretrained,
    /// Codec and backbone from scratch, optimized together.
    Joint,
    /// Stage one, then codec and backbone optimized together.
    PretrainedJoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    /// Square crop side in low-resolution pixels; `None` trains on whole frames.
    pub crop_size: Option<usize>,
    pub seed: u64,
    pub flow_freeze_steps: usize,
    pub charbonnier_eps: f64,
    /// Evaluate every this many steps (0: only before and after training).
    pub eval_every: usize,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
    /// Gaussian and salt-and-pepper noise on stage-one inputs.
    pub noise_augment: bool,
    pub mode: TrainMode,
    /// End this invocation once this many steps are done, leaving a
    /// checkpoint to resume from.
    pub stop_after: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            total_steps: 5000,
            batch_size: 1,
            crop_size: None,
            seed: 0,
            flow_freeze_steps: 5000,
            charbonnier_eps: 1e-3,
            eval_every: 0,
            checkpoint_every: 0,
            noise_augment: true,
            mode: TrainMode::Pretrained,
            stop_after: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::param("lr0 must be positive"));
        }
        if self.total_steps < 1 || self.batch_size < 1 {
            return Err(Error::param("total_steps and batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::param("Adam betas must lie in [0, 1)"));
        }
        if self.crop_size == Some(0) {
            return Err(Error::param("crop size must be positive"));
        }
        if !(self.charbonnier_eps > 0.0) {
            return Err(Error::param("charbonnier eps must be positive"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_psnr_y: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub stage: String,
    pub records: Vec<StepRecord>,
    pub initial_eval_psnr_y: Option<f64>,
    pub final_eval_psnr_y: Option<f64>,
    pub notes: Vec<String>,
    pub archive: Option<PathBuf>,
    /// Set when the run ended early on `stop_after`.
    pub stopped_at: Option<usize>,
}

impl TrainLog {
    /// One JSON object per step.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }
}

/// What the stage-one objective and evaluation compare against.
fn roundtrip_eval<T: Scalar>(codec: &Codec<T>, eval: &[Sample<T>]) -> Result<Option<f64>> {
    if eval.is_empty() {
        return Ok(None);
    }
    let scores = eval
        .iter()
        .map(|s| mean_psnr(&roundtrip(codec, &s.lr)?, &s.lr_clean))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(mean_over_clips(&scores)))
}

fn sr_eval<T: Scalar>(codec: &Codec<T>, backbone: &ToyBackbone<T>, eval: &[Sample<T>]) -> Result<Option<f64>> {
    if eval.is_empty() {
        return Ok(None);
    }
    let scores = eval
        .iter()
        .map(|s| mean_psnr(&run_pipeline(codec, backbone, &s.lr, backbone.scale)?, &s.hr))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(mean_over_clips(&scores)))
}

fn crop_seq<T: Scalar>(seq: &VideoSequence<T>, y: usize, x: usize, size: usize) -> Result<VideoSequence<T>> {
    seq.try_map(|f| Ok(Tensor::from_fn(f.channels(), size, size, |c, yy, xx| f.at(c, y + yy, x + xx))))
}

/// A training example after optional cropping.
struct Example<T> {
    index: usize,
    lr: VideoSequence<T>,
    lr_clean: VideoSequence<T>,
    hr: VideoSequence<T>,
    cropped: bool,
}

fn draw<T: Scalar>(data: &[Sample<T>], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Example<T>> {
    let index = rng.gen_range(0..data.len());
    let s = &data[index];
    let Some(size) = cfg.crop_size else {
        return Ok(Example {
            index,
            lr: s.lr.clone(),
            lr_clean: s.lr_clean.clone(),
            hr: s.hr.clone(),
            cropped: false,
        });
    };
    let (h, w) = (s.lr.height(), s.lr.width());
    if size > h || size > w {
        return Err(Error::param(format!("crop {size} exceeds {h}x{w} input")));
    }
    let scale = s.hr.height() / h;
    let y = rng.gen_range(0..=h - size);
    let x = rng.gen_range(0..=w - size);
    Ok(Example {
        index,
        lr: crop_seq(&s.lr, y, x, size)?,
        lr_clean: crop_seq(&s.lr_clean, y, x, size)?,
        hr: crop_seq(&s.hr, y * scale, x * scale, size * scale)?,
        cropped: true,
    })
}

fn augment<T: Scalar>(seq: &VideoSequence<T>, rng: &mut ChaCha8Rng) -> Result<VideoSequence<T>> {
    if rng.gen_bool(0.5) {
        return Ok(seq.clone());
    }
    let sigma = rng.gen_range(0.0..0.03);
    let salt = if rng.gen_bool(0.5) { 0.004 } else { 0.0 };
    let mut frames = Vec::with_capacity(seq.len());
    for f in seq.frames() {
        let mut out = f.clone();
        for v in out.data_mut() {
            let u: f64 = rng.gen();
            let x = if u < salt / 2.0 {
                0.0
            } else if u < salt {
                1.0
            } else {
                // Box-Muller
                let (a, b): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen());
                v.to_f64_lossy() + sigma * (-2.0 * a.ln()).sqrt() * (std::f64::consts::TAU * b).cos()
            };
            *v = T::of(x.clamp(0.0, 1.0));
        }
        frames.push(out);
    }
    VideoSequence::new(frames, seq.frame_rate())
}

fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (step as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn sequence_loss<T: Scalar>(
    out: &VideoSequence<T>,
    target: &VideoSequence<T>,
    eps: f64,
    weight: f64,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let n = out.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(out.len());
    for (o, t) in out.frames().iter().zip(target.frames()) {
        loss += charbonnier_loss(o, t, eps)? / n;
        grads.push(charbonnier_backward(o, t, eps, weight / n));
    }
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite loss {loss}")));
    }
    Ok((loss, grads))
}

#[derive(Serialize, Deserialize)]
struct CheckpointState {
    stage: String,
    step: usize,
    total_steps: usize,
    seed: u64,
    adam_codec_step: u64,
    adam_backbone_step: u64,
}

const STATE_FILE: &str = "state.json";

/// Files of a training checkpoint directory.
pub struct Checkpoint;

impl Checkpoint {
    pub fn codec_dir(dir: &Path) -> PathBuf {
        dir.join("codec")
    }

    pub fn backbone_dir(dir: &Path) -> PathBuf {
        dir.join("backbone")
    }

    pub fn exists(dir: &Path) -> bool {
        dir.join(STATE_FILE).exists()
    }

    /// Step recorded in the checkpoint at `dir`.
    pub fn step(dir: &Path) -> Result<usize> {
        Ok(read_state(dir)?.step)
    }
}

fn read_state(dir: &Path) -> Result<CheckpointState> {
    let path = dir.join(STATE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

struct Modules<'a, T: Scalar> {
    codec: Option<(&'a mut Codec<T>, AdamState<T>)>,
    backbone: Option<(&'a mut ToyBackbone<T>, AdamState<T>)>,
}

impl<T: Scalar> Modules<'_, T> {
    fn save(&self, dir: &Path, stage: &str, step: usize, cfg: &TrainConfig) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut state = CheckpointState {
            stage: stage.to_string(),
            step,
            total_steps: cfg.total_steps,
            seed: cfg.seed,
            adam_codec_step: 0,
            adam_backbone_step: 0,
        };
        if let Some((c, adam)) = &self.codec {
            save_codec(&Checkpoint::codec_dir(dir), *c)?;
            write_archive(&dir.join("adam-codec"), "adam", &adam.names.len(), adam)?;
            state.adam_codec_step = adam.step;
        }
        if let Some((b, adam)) = &self.backbone {
            b.save(&Checkpoint::backbone_dir(dir))?;
            write_archive(&dir.join("adam-backbone"), "adam", &adam.names.len(), adam)?;
            state.adam_backbone_step = adam.step;
        }
        let path = dir.join(STATE_FILE);
        fs::write(&path, serde_json::to_string_pretty(&state)?).map_err(|e| Error::io(&path, e))
    }

    /// Restores parameters and optimizer moments; returns the step to continue from.
    fn resume(&mut self, dir: &Path, stage: &str, cfg: &TrainConfig) -> Result<usize> {
        if !Checkpoint::exists(dir) {
            return Ok(0);
        }
        let state = read_state(dir)?;
        if state.stage != stage || state.seed != cfg.seed || state.total_steps != cfg.total_steps {
            return Err(Error::Training(format!(
                "checkpoint in {} is for stage `{}` (seed {}, {} steps), not this run",
                dir.display(),
                state.stage,
                state.seed,
                state.total_steps
            )));
        }
        if let Some((c, adam)) = &mut self.codec {
            **c = load_codec_checked(&Checkpoint::codec_dir(dir), &c.config)?;
            let n = adam.names.len();
            read_archive_into(&dir.join("adam-codec"), "adam", &n, adam)?;
            adam.step = state.adam_codec_step;
        }
        if let Some((b, adam)) = &mut self.backbone {
            let loaded = ToyBackbone::load(&Checkpoint::backbone_dir(dir))?;
            if loaded.config() != b.config() || loaded.scale != b.scale {
                return Err(Error::Archive("checkpoint backbone does not match the configured one".into()));
            }
            **b = loaded;
            let n = adam.names.len();
            read_archive_into(&dir.join("adam-backbone"), "adam", &n, adam)?;
            adam.step = state.adam_backbone_step;
        }
        Ok(state.step)
    }
}

fn flow_note(flow: FlowMethod, cfg: &TrainConfig) -> String {
    format!(
        "flow_freeze_steps={} has no effect: flow method {flow:?} has no learnable parameters",
        cfg.flow_freeze_steps
    )
}

/// Shared loop: `step_fn` runs forward/backward for one example, accumulating
/// gradients and returning the loss.
fn run_loop<T: Scalar>(
    stage: &str,
    cfg: &TrainConfig,
    data_len: usize,
    modules: &mut Modules<'_, T>,
    checkpoint: Option<&Path>,
    mut step_fn: impl FnMut(&Modules<'_, T>, &mut Option<Codec<T>>, &mut Option<ToyBackbone<T>>, &mut ChaCha8Rng) -> Result<f64>,
    mut eval_fn: impl FnMut(&Modules<'_, T>) -> Result<Option<f64>>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if data_len == 0 {
        return Err(Error::input("training set is empty"));
    }
    let start = match checkpoint {
        Some(dir) => modules.resume(dir, stage, cfg)?,
        None => 0,
    };
    let mut log = TrainLog {
        stage: stage.to_string(),
        ..TrainLog::default()
    };
    if start > 0 {
        log.notes.push(format!("resumed from step {start}"));
    }
    log.initial_eval_psnr_y = eval_fn(modules)?;
    let clock = Instant::now();
    let adam = cfg.adam();
    for step in start..cfg.total_steps {
        let lr = cosine_lr(step, cfg.total_steps, cfg.lr0);
        let mut rng = step_rng(cfg.seed, step);
        let mut gc = modules.codec.as_ref().map(|(c, _)| c.zeros_like());
        let mut gb = modules.backbone.as_ref().map(|(b, _)| b.zeros_like());
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            loss += step_fn(modules, &mut gc, &mut gb, &mut rng)? / cfg.batch_size as f64;
        }
        if let (Some((c, state)), Some(g)) = (modules.codec.as_mut(), gc.as_ref()) {
            adam_update(*c, g, state, lr, &adam)?;
        }
        if let (Some((b, state)), Some(g)) = (modules.backbone.as_mut(), gb.as_ref()) {
            adam_update(*b, g, state, lr, &adam)?;
        }
        let done = step + 1;
        let eval_psnr_y = if cfg.eval_every > 0 && done % cfg.eval_every == 0 && done < cfg.total_steps {
            eval_fn(modules)?
        } else {
            None
        };
        log.records.push(StepRecord {
            step: done,
            loss,
            lr,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            eval_psnr_y,
        });
        let stop = cfg.stop_after == Some(done) && done < cfg.total_steps;
        if let Some(dir) = checkpoint {
            if stop || (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.total_steps) {
                modules.save(dir, stage, done, cfg)?;
            }
        }
        if stop {
            log.notes.push(format!("stopped after step {done} of {}", cfg.total_steps));
            log.stopped_at = Some(done);
            return Ok(log);
        }
    }
    log.final_eval_psnr_y = eval_fn(modules)?;
    if let Some(last) = log.records.last_mut() {
        last.eval_psnr_y = log.final_eval_psnr_y;
    }
    if let Some(dir) = checkpoint {
        modules.save(dir, stage, cfg.total_steps, cfg)?;
        log.archive = Some(dir.to_path_buf());
    }
    Ok(log)
}

/// Stage one: identity round trip at input resolution against the
/// uncompressed low-resolution clip.
pub fn pretrain_codec<T: Scalar>(
    data: &[Sample<T>],
    codec: &mut Codec<T>,
    cfg: &TrainConfig,
    eval: &[Sample<T>],
    checkpoint: Option<&Path>,
) -> Result<TrainLog> {
    let note = flow_note(codec.config.flow, cfg);
    let adam = AdamState::new(&*codec);
    let mut modules = Modules {
        codec: Some((codec, adam)),
        backbone: None,
    };
    let weight = 1.0 / cfg.batch_size as f64;
    let mut log = run_loop(
        "pretrain",
        cfg,
        data.len(),
        &mut modules,
        checkpoint,
        |m, gc, _, rng| {
            let codec = &*m.codec.as_ref().expect("codec").0;
            let grads = gc.as_mut().expect("codec grads");
            let ex = draw(data, cfg, rng)?;
            let input = if cfg.noise_augment { augment(&ex.lr, rng)? } else { ex.lr };
            let (lat, ctrace) = compress_train(&input, codec)?;
            let (out, dtrace) = decompress_train(&lat.latents, &lat.plan, &input, &codec.decoder, 1)?;
            let (loss, g) = sequence_loss(&out, &ex.lr_clean, cfg.charbonnier_eps, weight)?;
            let gl = decompress_backward(&codec.decoder, &dtrace, &g, Some(&mut grads.decoder))?;
            compress_backward(codec, &ctrace, &gl, Some(&mut grads.cleaning), Some(&mut grads.encoder))?;
            Ok(loss)
        },
        |m| roundtrip_eval(m.codec.as_ref().expect("codec").0, eval),
    )?;
    log.notes.push(note);
    Ok(log)
}

/// Stage two: backbone on a frozen codec. The codec is only borrowed, so its
/// parameters cannot change.
pub fn train_backbone<T: Scalar>(
    data: &[Sample<T>],
    codec: &Codec<T>,
    backbone: &mut ToyBackbone<T>,
    cfg: &TrainConfig,
    eval: &[Sample<T>],
    checkpoint: Option<&Path>,
) -> Result<TrainLog> {
    let scale = backbone.scale;
    let adam = AdamState::new(&*backbone);
    let mut modules = Modules {
        codec: None,
        backbone: Some((backbone, adam)),
    };
    let weight = 1.0 / cfg.batch_size as f64;
    let mut cache: HashMap<usize, LatentSequence<T>> = HashMap::new();
    let mut log = run_loop(
        "train",
        cfg,
        data.len(),
        &mut modules,
        checkpoint,
        |m, _, gb, rng| {
            let model = &*m.backbone.as_ref().expect("backbone").0;
            let grads = gb.as_mut().expect("backbone grads");
            let ex = draw(data, cfg, rng)?;
            let latents = if ex.cropped {
                codec.compress(&ex.lr)?
            } else {
                match cache.get(&ex.index) {
                    Some(l) => l.clone(),
                    None => {
                        let l = codec.compress(&ex.lr)?;
                        cache.insert(ex.index, l.clone());
                        l
                    }
                }
            };
            let mut sr = Vec::with_capacity(latents.len());
            let mut caches = Vec::with_capacity(latents.len());
            for l in &latents.latents {
                let (y, c) = model.forward_train(l)?;
                sr.push(y);
                caches.push(c);
            }
            let (out, dtrace) = decompress_train(&sr, &latents.plan, &ex.lr, &codec.decoder, scale)?;
            let (loss, g) = sequence_loss(&out, &ex.hr, cfg.charbonnier_eps, weight)?;
            let gl = decompress_backward(&codec.decoder, &dtrace, &g, None)?;
            for (c, g) in caches.iter().zip(&gl) {
                model.backward(c, g, Some(grads));
            }
            Ok(loss)
        },
        |m| sr_eval(codec, m.backbone.as_ref().expect("backbone").0, eval),
    )?;
    log.notes.push(flow_note(codec.config.flow, cfg));
    log.notes.push("codec frozen".into());
    Ok(log)
}

/// Codec and backbone optimized together against the high-resolution clip.
pub fn train_joint<T: Scalar>(
    data: &[Sample<T>],
    codec: &mut Codec<T>,
    backbone: &mut ToyBackbone<T>,
    cfg: &TrainConfig,
    eval: &[Sample<T>],
    checkpoint: Option<&Path>,
) -> Result<TrainLog> {
    let scale = backbone.scale;
    let note = flow_note(codec.config.flow, cfg);
    let ca = AdamState::new(&*codec);
    let ba = AdamState::new(&*backbone);
    let mut modules = Modules {
        codec: Some((codec, ca)),
        backbone: Some((backbone, ba)),
    };
    let weight = 1.0 / cfg.batch_size as f64;
    let mut log = run_loop(
        "joint",
        cfg,
        data.len(),
        &mut modules,
        checkpoint,
        |m, gc, gb, rng| {
            let codec = &*m.codec.as_ref().expect("codec").0;
            let model = &*m.backbone.as_ref().expect("backbone").0;
            let (gc, gb) = (gc.as_mut().expect("codec grads"), gb.as_mut().expect("backbone grads"));
            let ex = draw(data, cfg, rng)?;
            let (lat, ctrace) = compress_train(&ex.lr, codec)?;
            let mut sr = Vec::with_capacity(lat.len());
            let mut caches = Vec::with_capacity(lat.len());
            for l in &lat.latents {
                let (y, c) = model.forward_train(l)?;
                sr.push(y);
                caches.push(c);
            }
            let (out, dtrace) = decompress_train(&sr, &lat.plan, &ex.lr, &codec.decoder, scale)?;
            let (loss, g) = sequence_loss(&out, &ex.hr, cfg.charbonnier_eps, weight)?;
            let g_sr = decompress_backward(&codec.decoder, &dtrace, &g, Some(&mut gc.decoder))?;
            let g_lat: Vec<Tensor<T>> = caches
                .iter()
                .zip(&g_sr)
                .map(|(c, g)| model.backward(c, g, Some(gb)))
                .collect();
            compress_backward(codec, &ctrace, &g_lat, Some(&mut gc.cleaning), Some(&mut gc.encoder))?;
            Ok(loss)
        },
        |m| {
            sr_eval(
                m.codec.as_ref().expect("codec").0,
                m.backbone.as_ref().expect("backbone").0,
                eval,
            )
        },
    )?;
    log.notes.push(note);
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::ToyConfig;
    use crate::codec::CodecConfig;
    use crate::synth::{synth_corpus, CorpusSpec};

    #[test]
    fn charbonnier_cases() {
        let a = Tensor::<f64>::filled(3, 2, 2, 0.4);
        assert!((charbonnier_loss(&a, &a, 1e-3).unwrap() - 1e-3).abs() < 1e-15);
        let b = a.map(|v| v + 3e-3);
        assert!((charbonnier_loss(&b, &a, 4e-3).unwrap() - 5e-3).abs() < 1e-12);
        assert!(charbonnier_backward(&a, &a, 1e-3, 1.0).data().iter().all(|&g| g == 0.0));
        assert!(charbonnier_loss(&a, &Tensor::zeros(3, 2, 1), 1e-3).is_err());
    }

    #[test]
    fn charbonnier_gradient() {
        let p = Tensor::<f64>::from_fn(1, 2, 2, |_, y, x| 0.1 * (y * 2 + x) as f64 - 0.13);
        let g = Tensor::<f64>::from_fn(1, 2, 2, |_, y, x| 0.05 * (x as f64) - 0.02 * y as f64);
        let analytic = charbonnier_backward(&p, &g, 1e-3, 1.0);
        for i in 0..4 {
            let h = 1e-7;
            let mut a = p.clone();
            a.data_mut()[i] += h;
            let mut b = p.clone();
            b.data_mut()[i] -= h;
            let n = (charbonnier_loss(&a, &g, 1e-3).unwrap() - charbonnier_loss(&b, &g, 1e-3).unwrap()) / (2.0 * h);
            assert!((n - analytic.data()[i]).abs() / n.abs() < 1e-6);
        }
    }

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0, 100, 1e-4), 1e-4);
        assert_eq!(cosine_lr(100, 100, 1e-4), 0.0);
        assert!((cosine_lr(50, 100, 1e-4) - 5e-5).abs() < 1e-18);
    }

    #[derive(Clone)]
    struct Scalar1(Param<f64>);

    impl Parameterized<f64> for Scalar1 {
        fn params(&self) -> Vec<(String, &Param<f64>)> {
            vec![("x".into(), &self.0)]
        }
        fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
            vec![&mut self.0]
        }
    }

    fn scalar(v: f64) -> Scalar1 {
        Scalar1(Param {
            shape: vec![1],
            data: vec![v],
        })
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let mut x = scalar(1.0);
        let mut s = AdamState::new(&x);
        adam_update(&mut x, &scalar(0.37), &mut s, 0.01, &AdamConfig::default()).unwrap();
        assert!((x.0.data[0] - (1.0 - 0.01)).abs() < 1e-9);

        let mut y = scalar(2.0);
        let mut s = AdamState::new(&y);
        s.m[0].data[0] = 0.5;
        s.v[0].data[0] = 0.25;
        s.step = 3;
        let before = y.0.data[0];
        adam_update(&mut y, &scalar(0.0), &mut s, 0.0, &AdamConfig::default()).unwrap();
        assert_eq!(y.0.data[0], before);
        assert!((s.m[0].data[0] - 0.45).abs() < 1e-12);
        assert!((s.v[0].data[0] - 0.2475).abs() < 1e-12);

        let err = adam_update(&mut y, &scalar(f64::NAN), &mut s, 0.1, &AdamConfig::default());
        assert!(matches!(err, Err(Error::Training(_))));
        assert_eq!(y.0.data[0], before);
    }

    #[test]
    fn adam_minimizes_a_parabola() {
        let mut x = scalar(1.0);
        let mut s = AdamState::new(&x);
        for _ in 0..500 {
            let g = scalar(2.0 * x.0.data[0]);
            adam_update(&mut x, &g, &mut s, 0.05, &AdamConfig::default()).unwrap();
        }
        assert!(x.0.data[0].abs() < 0.1);
    }

    fn tiny_setup() -> (Vec<Sample<f32>>, Codec<f32>) {
        let spec = CorpusSpec {
            clips: 2,
            frames: 4,
            size: 32,
            ..CorpusSpec::default()
        };
        let data = synth_corpus::<f32>(&spec).unwrap();
        let cfg = CodecConfig {
            cleaning_width: 4,
            cleaning_blocks: 1,
            coder_width: 8,
            coder_blocks: 1,
            ..CodecConfig::default()
        };
        (data, Codec::new(cfg, 1).unwrap())
    }

    #[test]
    fn single_step_stays_within_one_adam_step() {
        let (data, mut codec) = tiny_setup();
        let init = codec.clone();
        let cfg = TrainConfig {
            total_steps: 1,
            lr0: 1e-3,
            ..TrainConfig::default()
        };
        let log = pretrain_codec(&data, &mut codec, &cfg, &[], None).unwrap();
        assert_eq!(log.records.len(), 1);
        assert!(log.notes.iter().any(|n| n.contains("flow_freeze_steps")));
        for ((_, a), (_, b)) in codec.params().iter().zip(init.params()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() <= 1e-3 * 1.0001);
            }
        }
        assert_ne!(codec, init);
    }

    #[test]
    fn frozen_stage_keeps_codec_and_is_reproducible() {
        let (data, codec) = tiny_setup();
        let snapshot = codec.clone();
        let cfg = TrainConfig {
            total_steps: 3,
            lr0: 1e-3,
            ..TrainConfig::default()
        };
        let run = || {
            let mut toy = ToyBackbone::<f32>::new(4, &ToyConfig { width: 4, blocks: 1 }, 2).unwrap();
            let log = train_backbone(&data, &codec, &mut toy, &cfg, &data[..1], None).unwrap();
            (toy, log)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a, b);
        assert_eq!(la.losses(), lb.losses());
        assert_eq!(codec, snapshot);
        assert!(la.initial_eval_psnr_y.is_some() && la.final_eval_psnr_y.is_some());
        let line = la.to_jsonl().unwrap();
        assert_eq!(line.lines().count(), 3);
    }

    #[test]
    fn checkpoints_resume_where_they_stopped() {
        let (data, codec0) = tiny_setup();
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            total_steps: 4,
            checkpoint_every: 2,
            lr0: 1e-3,
            ..TrainConfig::default()
        };
        let mut straight = codec0.clone();
        let full = pretrain_codec(&data, &mut straight, &cfg, &[], None).unwrap();

        let mut first = codec0.clone();
        pretrain_codec(&data, &mut first, &cfg, &[], Some(dir.path())).unwrap();
        assert_eq!(read_state(dir.path()).unwrap().step, 4);
        assert_eq!(first, straight);
        let mut again = codec0.clone();
        let resumed = pretrain_codec(&data, &mut again, &cfg, &[], Some(dir.path())).unwrap();
        assert!(resumed.records.is_empty());
        assert_eq!(again, straight);
        assert_eq!(full.records.len(), 4);

        let dir2 = tempfile::tempdir().unwrap();
        let two = TrainConfig {
            total_steps: 4,
            checkpoint_every: 2,
            ..cfg.clone()
        };
        let mut c = codec0.clone();
        let mut modules = Modules {
            codec: Some((&mut c, AdamState::new(&codec0))),
            backbone: None,
        };
        let log = run_loop(
            "pretrain",
            &TrainConfig { total_steps: 2, ..two.clone() },
            1,
            &mut modules,
            None,
            |_, _, _, _| Ok(0.0),
            |_| Ok(None),
        )
        .unwrap();
        assert_eq!(log.records.len(), 2);
        modules.save(dir2.path(), "pretrain", 2, &two).unwrap();
        let mut d = codec0.clone();
        let rest = pretrain_codec(&data, &mut d, &two, &[], Some(dir2.path())).unwrap();
        assert_eq!(rest.records.first().map(|r| r.step), Some(3));
        assert!(rest.notes.iter().any(|n| n.contains("resumed from step 2")));

        let wrong = TrainConfig { seed: 9, ..two };
        let mut e = codec0.clone();
        assert!(pretrain_codec(&data, &mut e, &wrong, &[], Some(dir2.path())).is_err());
    }

    #[test]
    fn stopping_early_then_resuming_matches_one_run() {
        let (data, codec0) = tiny_setup();
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            total_steps: 4,
            lr0: 1e-3,
            ..TrainConfig::default()
        };
        let mut straight = codec0.clone();
        pretrain_codec(&data, &mut straight, &cfg, &[], None).unwrap();

        let mut a = codec0.clone();
        let first = TrainConfig {
            stop_after: Some(2),
            ..cfg.clone()
        };
        let log = pretrain_codec(&data, &mut a, &first, &[], Some(dir.path())).unwrap();
        assert_eq!(log.stopped_at, Some(2));
        assert!(log.final_eval_psnr_y.is_none() && log.archive.is_none());
        let mut b = codec0.clone();
        let rest = pretrain_codec(&data, &mut b, &cfg, &[], Some(dir.path())).unwrap();
        assert_eq!(rest.records.iter().map(|r| r.step).collect::<Vec<_>>(), vec![3, 4]);
        assert_eq!(b, straight);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let (_, mut codec) = tiny_setup();
        assert!(matches!(
            pretrain_codec(&[], &mut codec, &TrainConfig::default(), &[], None),
            Err(Error::Input(_))
        ));
    }
}
