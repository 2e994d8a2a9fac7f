//! Super-resolution backbones.
//!
//! A backbone sees latent frames as an ordinary video: a list of 3-channel
//! frames in, one upscaled frame per input out. No grouping metadata crosses
//! this boundary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{read_archive_into, read_header, write_archive};
use crate::codec::LatentSequence;
use crate::error::{Error, Result};
use crate::nn::{
    bicubic_resize, bicubic_resize_backward, leaky_relu, leaky_relu_backward, pixel_shuffle, pixel_unshuffle, prefixed,
    Conv2d, Param, Parameterized, ResBlock, ResBlockCache,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::video::{check_frame_aligned, plan_groups, FRAME_CHANNELS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub name: String,
    pub scale: usize,
    #[serde(default)]
    pub archive: Option<PathBuf>,
    #[serde(default)]
    pub supports_sequence: bool,
}

impl BackboneSpec {
    pub fn new(name: &str, scale: usize) -> Self {
        Self {
            name: name.to_string(),
            scale,
            archive: None,
            supports_sequence: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale < 1 {
            return Err(Error::param("backbone scale must be at least 1"));
        }
        Ok(())
    }
}

pub trait Backbone<T: Scalar> {
    fn name(&self) -> &str;

    fn scale(&self) -> usize;

    fn upscale_frame(&self, frame: &Tensor<T>) -> Result<Tensor<T>>;

    /// One output per input frame, spatial size multiplied by [`Backbone::scale`].
    fn upscale_sequence(&self, frames: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        frames.iter().map(|f| self.upscale_frame(f)).collect()
    }
}

/// Runs `backbone` over the latent frames, checking the scale the pipeline expects.
pub fn super_resolve<T: Scalar>(
    latents: &LatentSequence<T>,
    backbone: &dyn Backbone<T>,
    expected_scale: usize,
) -> Result<Vec<Tensor<T>>> {
    if backbone.scale() != expected_scale {
        return Err(Error::param(format!(
            "backbone `{}` upscales by {}, pipeline expects {expected_scale}",
            backbone.name(),
            backbone.scale()
        )));
    }
    let out = backbone.upscale_sequence(&latents.latents)?;
    if out.len() != latents.len() {
        return Err(Error::shape(format!(
            "backbone returned {} frames for {} latents",
            out.len(),
            latents.len()
        )));
    }
    Ok(out)
}

/// Frames a backbone processes for an `n`-frame clip once it is grouped.
pub fn backbone_invocation_count(n: usize, group_size: usize, overlap: usize) -> Result<usize> {
    check_frame_aligned(group_size, overlap)?;
    Ok(plan_groups(n * FRAME_CHANNELS, group_size, overlap)?.group_count)
}

fn check_frame<T: Scalar>(frame: &Tensor<T>) -> Result<()> {
    if frame.channels() != FRAME_CHANNELS {
        return Err(Error::shape(format!(
            "backbones take {FRAME_CHANNELS}-channel frames, got {}",
            frame.channels()
        )));
    }
    Ok(())
}

/// Parameter-free bicubic upsampling.
#[derive(Clone, Debug, PartialEq)]
pub struct BicubicBackbone {
    pub scale: usize,
}

impl<T: Scalar> Backbone<T> for BicubicBackbone {
    fn name(&self) -> &str {
        "bicubic"
    }

    fn scale(&self) -> usize {
        self.scale
    }

    fn upscale_frame(&self, frame: &Tensor<T>) -> Result<Tensor<T>> {
        check_frame(frame)?;
        let (h, w) = frame.spatial();
        Ok(bicubic_resize(frame, h * self.scale, w * self.scale))
    }
}

/// Scale-1 pass-through, used for codec pretraining.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IdentityBackbone;

impl<T: Scalar> Backbone<T> for IdentityBackbone {
    fn name(&self) -> &str {
        "identity"
    }

    fn scale(&self) -> usize {
        1
    }

    fn upscale_frame(&self, frame: &Tensor<T>) -> Result<Tensor<T>> {
        check_frame(frame)?;
        Ok(frame.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub width: usize,
    pub blocks: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { width: 64, blocks: 8 }
    }
}

/// Residual network with a sub-pixel upsampler and a bicubic skip. The last
/// convolution starts at zero, so an untrained model is plain bicubic.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyBackbone<T> {
    pub scale: usize,
    pub input: Conv2d<T>,
    pub blocks: Vec<ResBlock<T>>,
    pub upsample: Conv2d<T>,
}

pub struct ToyCache<T> {
    x: Tensor<T>,
    pre: Tensor<T>,
    blocks: Vec<ResBlockCache<T>>,
    hidden: Tensor<T>,
}

pub const TOY_KIND: &str = "backbone:toy";

#[derive(Serialize)]
struct ToyArchitecture<'a> {
    scale: usize,
    #[serde(flatten)]
    config: &'a ToyConfig,
}

impl<T: Scalar> ToyBackbone<T> {
    pub fn new(scale: usize, config: &ToyConfig, seed: u64) -> Result<Self> {
        if scale < 1 || config.width == 0 {
            return Err(Error::param("toy backbone needs scale >= 1 and width >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = FRAME_CHANNELS * scale * scale;
        Ok(Self {
            scale,
            input: Conv2d::new(FRAME_CHANNELS, config.width, 3, 1.0, &mut rng),
            blocks: (0..config.blocks).map(|_| ResBlock::new(config.width, &mut rng)).collect(),
            upsample: Conv2d::zeros(config.width, out, 3),
        })
    }

    pub fn config(&self) -> ToyConfig {
        ToyConfig {
            width: self.input.out_channels,
            blocks: self.blocks.len(),
        }
    }

    fn skip(&self, x: &Tensor<T>) -> Tensor<T> {
        let (h, w) = x.spatial();
        bicubic_resize(x, h * self.scale, w * self.scale)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ToyCache<T>)> {
        check_frame(x)?;
        let pre = self.input.forward(x);
        let mut h = leaky_relu(&pre);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward_train(h);
            caches.push(c);
            h = y;
        }
        let mut y = pixel_shuffle(&self.upsample.forward(&h), self.scale);
        y.add_assign(&self.skip(x));
        Ok((
            y,
            ToyCache {
                x: x.clone(),
                pre,
                blocks: caches,
                hidden: h,
            },
        ))
    }

    pub fn backward(&self, cache: &ToyCache<T>, grad_out: &Tensor<T>, grad: Option<&mut Self>) -> Tensor<T> {
        let (gi, mut gb, gu) = match grad {
            Some(a) => (Some(&mut a.input), Some(&mut a.blocks), Some(&mut a.upsample)),
            None => (None, None, None),
        };
        let g_up = pixel_unshuffle(grad_out, self.scale);
        let mut g = self.upsample.backward(&cache.hidden, &g_up, gu);
        for (i, (b, c)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            g = b.backward(c, &g, gb.as_mut().map(|v| &mut v[i]));
        }
        leaky_relu_backward(&cache.pre, &mut g);
        let mut gx = self.input.backward(&cache.x, &g, gi);
        let (h, w) = cache.x.spatial();
        gx.add_assign(&bicubic_resize_backward(grad_out, h, w));
        gx
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let config = self.config();
        write_archive(
            dir,
            TOY_KIND,
            &ToyArchitecture {
                scale: self.scale,
                config: &config,
            },
            self,
        )
    }

    /// Loads an archive, taking scale and size from its header.
    pub fn load(dir: &Path) -> Result<Self> {
        let header = read_header(dir)?;
        let arch = header.architecture;
        let get = |k: &str| {
            arch.get(k)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| Error::Archive(format!("{}: header lacks `{k}`", dir.display())))
        };
        let config = ToyConfig {
            width: get("width")?,
            blocks: get("blocks")?,
        };
        let scale = get("scale")?;
        let mut model = Self::new(scale, &config, 0)?;
        read_archive_into(dir, TOY_KIND, &ToyArchitecture { scale, config: &config }, &mut model)?;
        Ok(model)
    }
}

impl<T: Scalar> Backbone<T> for ToyBackbone<T> {
    fn name(&self) -> &str {
        "toy"
    }

    fn scale(&self) -> usize {
        self.scale
    }

    fn upscale_frame(&self, frame: &Tensor<T>) -> Result<Tensor<T>> {
        check_frame(frame)?;
        let mut h = leaky_relu(&self.input.forward(frame));
        for b in &self.blocks {
            h = b.forward(&h);
        }
        let mut y = pixel_shuffle(&self.upsample.forward(&h), self.scale);
        y.add_assign(&self.skip(frame));
        Ok(y)
    }
}

impl<T: Scalar> Parameterized<T> for ToyBackbone<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut v = prefixed("input", self.input.params());
        for (i, b) in self.blocks.iter().enumerate() {
            v.extend(prefixed(&format!("blocks.{i}"), b.params()));
        }
        v.extend(prefixed("upsample", self.upsample.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.input.params_mut();
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.upsample.params_mut());
        v
    }
}

type Constructor<T> = fn(&BackboneSpec, &ToyConfig, u64) -> Result<Box<dyn Backbone<T>>>;

/// Name-keyed backbone constructors. Third-party backbones register here.
pub struct BackboneRegistry<T: Scalar> {
    entries: BTreeMap<String, Constructor<T>>,
}

impl<T: Scalar> Default for BackboneRegistry<T> {
    fn default() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register("bicubic", |spec, _, _| Ok(Box::new(BicubicBackbone { scale: spec.scale })));
        r.register("identity", |spec, _, _| {
            if spec.scale != 1 {
                return Err(Error::param("identity backbone has scale 1"));
            }
            Ok(Box::new(IdentityBackbone))
        });
        r.register("toy", |spec, cfg, seed| {
            let model = match &spec.archive {
                Some(dir) => ToyBackbone::<T>::load(dir)?,
                None => ToyBackbone::new(spec.scale, cfg, seed)?,
            };
            if model.scale != spec.scale {
                return Err(Error::param(format!(
                    "toy archive has scale {}, spec asks for {}",
                    model.scale, spec.scale
                )));
            }
            Ok(Box::new(model))
        });
        r
    }
}

impl<T: Scalar> BackboneRegistry<T> {
    pub fn register(&mut self, name: &str, ctor: Constructor<T>) {
        self.entries.insert(name.to_string(), ctor);
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn build(&self, spec: &BackboneSpec, toy: &ToyConfig, seed: u64) -> Result<Box<dyn Backbone<T>>> {
        spec.validate()?;
        let ctor = self.entries.get(&spec.name).ok_or_else(|| {
            Error::param(format!(
                "unknown backbone `{}` (known: {})",
                spec.name,
                self.names().join(", ")
            ))
        })?;
        ctor(spec, toy, seed)
    }
}
