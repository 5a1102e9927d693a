//! Toy encoder–bottleneck–decoder depth network assembled from an
//! architecture string like "EE-E-EE".
//!
//! Dataflow: a k×k linear patch embedding lifts the RGB panorama to C0
//! channels (horizontal wrap padding, vertical clamp); each encoder stage
//! runs one transformer block then halves the resolution with
//! space-to-depth + linear (doubling channels); the decoder mirrors this
//! with nearest-neighbor upsampling fused against the encoder skip at the
//! same level; a linear head plus softplus emits strictly positive depth at
//! the input resolution. Every layer is a plain linear map or an attention
//! block, so the whole forward pass is exactly MAC-countable.

use crate::attention::{
    block_forward, AttentionConfig, AttentionVariant, BlockKind, EgBlock,
};
use crate::data::SceneRecord;
use crate::error::{Error, Result};
use crate::fsio::atomic_write;
use crate::geometry::{build_grid, AngularGrid};
use crate::metrics::{self, Alignment, DepthMetrics};
use crate::rng::Rng;
use crate::tensor::{read_checkpoint, write_checkpoint, Tape, Tensor};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

/// Parsed architecture string: encoder, bottleneck and decoder block letters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub encoder: Vec<BlockKind>,
    pub bottleneck: Vec<BlockKind>,
    pub decoder: Vec<BlockKind>,
}

impl ArchSpec {
    pub fn to_string_form(&self) -> String {
        let seg = |blocks: &[BlockKind]| blocks.iter().map(|b| b.letter()).collect::<String>();
        format!("{}-{}-{}", seg(&self.encoder), seg(&self.bottleneck), seg(&self.decoder))
    }
}

/// Parse "EEEE-E-EEEE"-style strings. Letters are E, H, V; the Panoformer
/// letters M and P are recognized and rejected as out of scope.
pub fn parse_arch(s: &str) -> Result<ArchSpec> {
    let mut segments: Vec<Vec<BlockKind>> = Vec::new();
    let mut current: Vec<BlockKind> = Vec::new();
    let mut segment_start = 0usize;
    for (pos, ch) in s.char_indices() {
        match ch {
            '-' => {
                if current.is_empty() {
                    return Err(Error::Parse {
                        position: segment_start,
                        message: "empty segment in architecture string".into(),
                    });
                }
                segments.push(std::mem::take(&mut current));
                segment_start = pos + 1;
            }
            'E' => current.push(BlockKind::Equirect),
            'H' => current.push(BlockKind::Horizontal),
            'V' => current.push(BlockKind::Vertical),
            'M' | 'P' => {
                return Err(Error::Parse {
                    position: pos,
                    message: format!("letter {ch} out of scope (Panoformer PST)"),
                })
            }
            other => {
                return Err(Error::Parse {
                    position: pos,
                    message: format!("unknown block letter {other:?} (expected E, H or V)"),
                })
            }
        }
    }
    if current.is_empty() {
        return Err(Error::Parse {
            position: segment_start,
            message: "empty segment in architecture string".into(),
        });
    }
    segments.push(current);
    if segments.len() != 3 {
        return Err(Error::Parse {
            position: s.len(),
            message: format!(
                "expected encoder-bottleneck-decoder (3 dash-separated segments), got {}",
                segments.len()
            ),
        });
    }
    let decoder = segments.pop().unwrap();
    let bottleneck = segments.pop().unwrap();
    let encoder = segments.pop().unwrap();
    if encoder.len() != decoder.len() {
        return Err(Error::Parse {
            position: 0,
            message: format!(
                "encoder and decoder lengths must match for skip pairing: {} vs {}",
                encoder.len(),
                decoder.len()
            ),
        });
    }
    Ok(ArchSpec { encoder, bottleneck, decoder })
}

/// Everything needed to build a model deterministically.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub base_channels: usize,
    pub heads: usize,
    pub arch: ArchSpec,
    pub patch_kernel: usize,
    pub seed: u64,
    /// ERPE bias level.
    pub rho: f64,
    /// Which attention variant the network runs (full mechanism by default).
    pub variant: AttentionVariant,
}

impl ModelConfig {
    pub fn new(height: usize, width: usize, base_channels: usize, heads: usize, arch: ArchSpec) -> Self {
        ModelConfig {
            height,
            width,
            base_channels,
            heads,
            arch,
            patch_kernel: 3,
            seed: 0,
            rho: 0.1,
            variant: AttentionVariant::Full,
        }
    }

    /// Channels at pyramid level i (level 0 = input resolution).
    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.arch.encoder.len();
        let div = 1usize << n;
        if self.height == 0 || self.width == 0 || self.height % div != 0 || self.width % div != 0 {
            return Err(Error::Config(format!(
                "{}x{} input not divisible by 2^{n} for {} encoder stages",
                self.height, self.width, n
            )));
        }
        if self.base_channels == 0 || self.heads == 0 || self.base_channels % self.heads != 0 {
            return Err(Error::Config(format!(
                "base channels {} must be a positive multiple of heads {}",
                self.base_channels, self.heads
            )));
        }
        if self.patch_kernel == 0 || self.patch_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "patch kernel must be odd and positive, got {}",
                self.patch_kernel
            )));
        }
        if self.rho <= 0.0 {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        Ok(())
    }

    fn attention_config(&self, level: usize) -> AttentionConfig {
        let c = self.channels_at(level);
        let mut cfg = AttentionConfig::new(self.heads, c / self.heads);
        cfg.rho = self.rho;
        cfg
    }

    /// Plain-text key=value serialization (one key per line).
    pub fn to_key_values(&self) -> String {
        format!(
            "height={}\nwidth={}\nbase_channels={}\nheads={}\narch={}\npatch_kernel={}\nseed={}\nrho={}\nvariant={}\n",
            self.height,
            self.width,
            self.base_channels,
            self.heads,
            self.arch.to_string_form(),
            self.patch_kernel,
            self.seed,
            self.rho,
            variant_name(self.variant)
        )
    }

    pub fn from_key_values(text: &str) -> Result<ModelConfig> {
        let mut height = None;
        let mut width = None;
        let mut base_channels = None;
        let mut heads = None;
        let mut arch = None;
        let mut patch_kernel = 3usize;
        let mut seed = 0u64;
        let mut rho = 0.1f64;
        let mut variant = AttentionVariant::Full;
        let mut offset = 0usize;
        for line in text.lines() {
            let position = offset;
            offset += line.len() + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                position,
                message: format!("expected key=value, got {line:?}"),
            })?;
            let bad = |what: &str| Error::Parse {
                position,
                message: format!("bad {what} value {value:?}"),
            };
            match key.trim() {
                "height" => height = Some(value.parse().map_err(|_| bad("height"))?),
                "width" => width = Some(value.parse().map_err(|_| bad("width"))?),
                "base_channels" => {
                    base_channels = Some(value.parse().map_err(|_| bad("base_channels"))?)
                }
                "heads" => heads = Some(value.parse().map_err(|_| bad("heads"))?),
                "arch" => arch = Some(parse_arch(value.trim())?),
                "patch_kernel" => patch_kernel = value.parse().map_err(|_| bad("patch_kernel"))?,
                "seed" => seed = value.parse().map_err(|_| bad("seed"))?,
                "rho" => rho = value.parse().map_err(|_| bad("rho"))?,
                "variant" => variant = parse_variant(value.trim()).ok_or_else(|| bad("variant"))?,
                other => {
                    return Err(Error::Parse {
                        position,
                        message: format!("unknown config key {other:?}"),
                    })
                }
            }
        }
        let missing = |what: &str| Error::Parse {
            position: text.len(),
            message: format!("missing required key {what}"),
        };
        let cfg = ModelConfig {
            height: height.ok_or_else(|| missing("height"))?,
            width: width.ok_or_else(|| missing("width"))?,
            base_channels: base_channels.ok_or_else(|| missing("base_channels"))?,
            heads: heads.ok_or_else(|| missing("heads"))?,
            arch: arch.ok_or_else(|| missing("arch"))?,
            patch_kernel,
            seed,
            rho,
            variant,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn variant_name(v: AttentionVariant) -> &'static str {
    match v {
        AttentionVariant::Full => "full",
        AttentionVariant::NoErpe => "no-erpe",
        AttentionVariant::NoDas => "no-das",
        AttentionVariant::NoEaar => "no-eaar",
        AttentionVariant::Softmax => "softmax",
    }
}

pub fn parse_variant(s: &str) -> Option<AttentionVariant> {
    match s {
        "full" => Some(AttentionVariant::Full),
        "no-erpe" => Some(AttentionVariant::NoErpe),
        "no-das" => Some(AttentionVariant::NoDas),
        "no-eaar" => Some(AttentionVariant::NoEaar),
        "softmax" => Some(AttentionVariant::Softmax),
        _ => None,
    }
}

/// Weight + bias of one linear layer.
#[derive(Debug, Clone)]
pub struct LinearParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl LinearParams {
    fn init(rng: &mut Rng, d_in: usize, d_out: usize) -> Self {
        let a = (6.0 / (d_in + d_out) as f64).sqrt();
        LinearParams {
            w: Tensor::from_fn(&[d_in, d_out], |_| rng.uniform(-a, a)),
            b: Tensor::zeros(&[d_out]),
        }
    }
}

/// The assembled network. Parameters are plain tensors; each training step
/// attaches them to a fresh tape.
#[derive(Debug, Clone)]
pub struct EgModel {
    pub cfg: ModelConfig,
    patch: LinearParams,
    encoder: Vec<EgBlock>,
    downs: Vec<LinearParams>,
    bottleneck: Vec<EgBlock>,
    fuses: Vec<LinearParams>,
    decoder: Vec<EgBlock>,
    final_ln_gamma: Tensor,
    final_ln_beta: Tensor,
    head: LinearParams,
    grids: Vec<AngularGrid>,
    patch_idx: Arc<Vec<usize>>,
    down_idx: Vec<Arc<Vec<usize>>>,
    up_idx: Vec<Arc<Vec<usize>>>,
}

impl EgModel {
    pub fn new(cfg: ModelConfig) -> Result<EgModel> {
        cfg.validate()?;
        let n = cfg.arch.encoder.len();
        let mut rng = Rng::new(cfg.seed);

        let grids: Vec<AngularGrid> = (0..=n)
            .map(|lvl| build_grid(cfg.height >> lvl, cfg.width >> lvl))
            .collect::<Result<_>>()?;

        let k = cfg.patch_kernel;
        let patch = LinearParams::init(&mut rng, 3 * k * k, cfg.base_channels);
        let encoder: Vec<EgBlock> = cfg
            .arch
            .encoder
            .iter()
            .enumerate()
            .map(|(i, &kind)| EgBlock::init_residual(kind, cfg.channels_at(i), &mut rng))
            .collect();
        let downs: Vec<LinearParams> = (0..n)
            .map(|i| {
                let c = cfg.channels_at(i);
                LinearParams::init(&mut rng, 4 * c, 2 * c)
            })
            .collect();
        let bottleneck: Vec<EgBlock> = cfg
            .arch
            .bottleneck
            .iter()
            .map(|&kind| EgBlock::init_residual(kind, cfg.channels_at(n), &mut rng))
            .collect();
        let fuses: Vec<LinearParams> = (0..n)
            .map(|j| {
                let c = cfg.channels_at(n - 1 - j); // output channels at the skip level
                LinearParams::init(&mut rng, 3 * c, c)
            })
            .collect();
        let decoder: Vec<EgBlock> = cfg
            .arch
            .decoder
            .iter()
            .enumerate()
            .map(|(j, &kind)| EgBlock::init_residual(kind, cfg.channels_at(n - 1 - j), &mut rng))
            .collect();
        let final_ln_gamma = Tensor::ones(&[cfg.base_channels]);
        let final_ln_beta = Tensor::zeros(&[cfg.base_channels]);
        let mut head = LinearParams::init(&mut rng, cfg.base_channels, 1);
        // start the depth head at a plausible room scale: softplus(2) ~ 2.13
        head.b = Tensor::full(&[1], 2.0);

        let patch_idx = Arc::new(patch_indices(cfg.height, cfg.width, k));
        let down_idx = (0..n)
            .map(|i| Arc::new(space_to_depth_indices(cfg.height >> i, cfg.width >> i, cfg.channels_at(i))))
            .collect();
        let up_idx = (0..n)
            .map(|j| {
                let lvl = n - 1 - j; // level being upsampled to
                Arc::new(nearest_up_indices(
                    cfg.height >> (lvl + 1),
                    cfg.width >> (lvl + 1),
                    cfg.channels_at(lvl + 1),
                ))
            })
            .collect();

        Ok(EgModel {
            cfg,
            patch,
            encoder,
            downs,
            bottleneck,
            fuses,
            decoder,
            final_ln_gamma,
            final_ln_beta,
            head,
            grids,
            patch_idx,
            down_idx,
            up_idx,
        })
    }

    /// Named parameters in a fixed, deterministic order.
    pub fn param_entries(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit(|name, t| out.push((name, t.clone())));
        out
    }

    pub fn param_count(&self) -> u64 {
        let mut count = 0u64;
        self.visit(|_, t| count += t.numel() as u64);
        count
    }

    fn visit(&self, mut f: impl FnMut(String, &Tensor)) {
        f("patch.w".into(), &self.patch.w);
        f("patch.b".into(), &self.patch.b);
        let blocks = |prefix: &str, blocks: &[EgBlock], f: &mut dyn FnMut(String, &Tensor)| {
            for (i, b) in blocks.iter().enumerate() {
                for (s, sub) in b.subs.iter().enumerate() {
                    for (name, t) in sub.tensors() {
                        f(format!("{prefix}{i}.sub{s}.{name}"), t);
                    }
                }
            }
        };
        blocks("enc", &self.encoder, &mut f);
        for (i, d) in self.downs.iter().enumerate() {
            f(format!("down{i}.w"), &d.w);
            f(format!("down{i}.b"), &d.b);
        }
        blocks("bot", &self.bottleneck, &mut f);
        for (j, u) in self.fuses.iter().enumerate() {
            f(format!("fuse{j}.w"), &u.w);
            f(format!("fuse{j}.b"), &u.b);
        }
        blocks("dec", &self.decoder, &mut f);
        f("final_ln.gamma".into(), &self.final_ln_gamma);
        f("final_ln.beta".into(), &self.final_ln_beta);
        f("head.w".into(), &self.head.w);
        f("head.b".into(), &self.head.b);
    }

    fn visit_mut(&mut self, mut f: impl FnMut(&mut Tensor)) {
        f(&mut self.patch.w);
        f(&mut self.patch.b);
        for b in &mut self.encoder {
            for sub in &mut b.subs {
                for (_, t) in sub.tensors_mut() {
                    f(t);
                }
            }
        }
        for d in &mut self.downs {
            f(&mut d.w);
            f(&mut d.b);
        }
        for b in &mut self.bottleneck {
            for sub in &mut b.subs {
                for (_, t) in sub.tensors_mut() {
                    f(t);
                }
            }
        }
        for u in &mut self.fuses {
            f(&mut u.w);
            f(&mut u.b);
        }
        for b in &mut self.decoder {
            for sub in &mut b.subs {
                for (_, t) in sub.tensors_mut() {
                    f(t);
                }
            }
        }
        f(&mut self.final_ln_gamma);
        f(&mut self.final_ln_beta);
        f(&mut self.head.w);
        f(&mut self.head.b);
    }

    /// Clone with one scalar of one parameter nudged by `delta`; `index`
    /// follows the [`EgModel::param_entries`] order. Finite-difference
    /// probes are built from this.
    pub fn with_param_perturbed(&self, index: usize, element: usize, delta: f64) -> EgModel {
        let mut copy = self.clone();
        let mut i = 0usize;
        copy.visit_mut(|t| {
            if i == index {
                let mut data = t.data().to_vec();
                data[element] += delta;
                *t = Tensor::from_vec(t.shape(), data).expect("shape unchanged");
            }
            i += 1;
        });
        copy
    }

    /// Deep copy whose parameter tensors are registered on `tape`, plus the
    /// ordered leaf list (same order as [`EgModel::param_entries`]).
    pub fn attach(&self, tape: &Tape) -> (EgModel, Vec<Tensor>) {
        let mut copy = self.clone();
        let mut vars = Vec::new();
        copy.visit_mut(|t| {
            let v = tape.var(t);
            vars.push(v.clone());
            *t = v;
        });
        (copy, vars)
    }

    /// Forward pass on a caller-supplied tape (records only if parameters or
    /// the image are attached; always counts MACs).
    pub fn forward_on(&self, tape: &Tape, image: &Tensor) -> Result<Tensor> {
        if image.shape() != [self.cfg.height, self.cfg.width, 3] {
            return Err(Error::Config(format!(
                "image {:?} does not match configured {}x{}x3",
                image.shape(),
                self.cfg.height,
                self.cfg.width
            )));
        }
        let cfg = &self.cfg;
        let n = cfg.arch.encoder.len();
        let k = cfg.patch_kernel;

        // patch embedding: k×k neighborhood lift
        let neighborhood = tape.gather(
            image,
            &self.patch_idx,
            &[cfg.height * cfg.width, 3 * k * k],
        )?;
        let embedded = tape.linear(&neighborhood, &self.patch.w, &self.patch.b)?;
        let mut z = tape.reshape(&embedded, &[cfg.height, cfg.width, cfg.base_channels])?;

        let mut skips = Vec::with_capacity(n);
        for i in 0..n {
            let acfg = cfg.attention_config(i);
            z = block_forward(tape, &z, &self.encoder[i], &self.grids[i], &acfg, cfg.variant)?;
            skips.push(z.clone());
            z = self.downsample_on(tape, &z, i)?;
        }
        let acfg = cfg.attention_config(n);
        for b in &self.bottleneck {
            z = block_forward(tape, &z, b, &self.grids[n], &acfg, cfg.variant)?;
        }
        for j in 0..n {
            let lvl = n - 1 - j;
            z = self.upsample_fuse_on(tape, &z, &skips[lvl], j)?;
            let acfg = cfg.attention_config(lvl);
            z = block_forward(tape, &z, &self.decoder[j], &self.grids[lvl], &acfg, cfg.variant)?;
        }

        // the residual stream's scale grows with depth (the attention
        // rearrangement feeds part of the input forward twice), so the head
        // reads normalized features
        let flat = tape.reshape(&z, &[cfg.height * cfg.width, cfg.base_channels])?;
        let flat = tape.layer_norm(
            &flat,
            &self.final_ln_gamma,
            &self.final_ln_beta,
            crate::attention::LN_EPS,
        )?;
        let raw = tape.linear(&flat, &self.head.w, &self.head.b)?;
        let positive = tape.softplus(&raw)?;
        tape.reshape(&positive, &[cfg.height, cfg.width, 1])
    }

    /// Forward pass with no recording.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        self.forward_on(&Tape::new(), image)
    }

    /// Space-to-depth 2×2 followed by a 4C→2C linear.
    fn downsample_on(&self, tape: &Tape, z: &Tensor, level: usize) -> Result<Tensor> {
        let (h, w, c) = (z.shape()[0], z.shape()[1], z.shape()[2]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Config(format!("downsample wants even extents, got {h}x{w}")));
        }
        let packed = tape.gather(z, &self.down_idx[level], &[(h / 2) * (w / 2), 4 * c])?;
        let reduced = tape.linear(&packed, &self.downs[level].w, &self.downs[level].b)?;
        tape.reshape(&reduced, &[h / 2, w / 2, 2 * c])
    }

    /// Nearest ×2 upsample, channel-concat with the skip, linear fuse.
    fn upsample_fuse_on(&self, tape: &Tape, z: &Tensor, skip: &Tensor, j: usize) -> Result<Tensor> {
        let (h, w, c) = (z.shape()[0], z.shape()[1], z.shape()[2]);
        let (sh, sw, sc) = (skip.shape()[0], skip.shape()[1], skip.shape()[2]);
        if sh != 2 * h || sw != 2 * w || sc != c / 2 {
            return Err(Error::Config(format!(
                "skip {:?} does not pair with {:?}",
                skip.shape(),
                z.shape()
            )));
        }
        let up = tape.gather(z, &self.up_idx[j], &[sh, sw, c])?;
        let joined = tape.concat(&[&up, skip], 2)?;
        let flat = tape.reshape(&joined, &[sh * sw, c + sc])?;
        let fused = tape.linear(&flat, &self.fuses[j].w, &self.fuses[j].b)?;
        tape.reshape(&fused, &[sh, sw, sc])
    }

    /// Write the EGTN checkpoint and the key=value config sidecar.
    pub fn save(&self, ckpt: &Path) -> Result<()> {
        write_checkpoint(ckpt, &self.param_entries())?;
        let cfg_path = sidecar_path(ckpt);
        atomic_write(&cfg_path, self.cfg.to_key_values().as_bytes())
    }

    /// Rebuild a model from a checkpoint + sidecar written by [`EgModel::save`].
    pub fn load(ckpt: &Path) -> Result<EgModel> {
        let cfg_text = std::fs::read_to_string(sidecar_path(ckpt))?;
        let cfg = ModelConfig::from_key_values(&cfg_text)?;
        let mut model = EgModel::new(cfg)?;
        let entries = read_checkpoint(ckpt)?;
        let expected = model.param_entries();
        if entries.len() != expected.len() {
            return Err(Error::Io(format!(
                "checkpoint has {} tensors, model wants {}",
                entries.len(),
                expected.len()
            )));
        }
        for ((name, tensor), (want_name, want)) in entries.iter().zip(&expected) {
            if name != want_name || tensor.shape() != want.shape() {
                return Err(Error::Io(format!(
                    "checkpoint entry {name} {:?} does not match model parameter {want_name} {:?}",
                    tensor.shape(),
                    want.shape()
                )));
            }
        }
        let mut iter = entries.into_iter();
        model.visit_mut(|t| {
            let (_, loaded) = iter.next().expect("length checked above");
            *t = loaded;
        });
        Ok(model)
    }
}

fn sidecar_path(ckpt: &Path) -> std::path::PathBuf {
    let mut os = ckpt.as_os_str().to_owned();
    os.push(".cfg");
    std::path::PathBuf::from(os)
}

/// Flat gather table for the k×k patch neighborhood of every pixel:
/// horizontal wrap (the panorama seam is connected), vertical clamp
/// (the poles are hard boundaries).
fn patch_indices(h: usize, w: usize, k: usize) -> Vec<usize> {
    let r = (k / 2) as isize;
    let mut idx = Vec::with_capacity(h * w * k * k * 3);
    for v in 0..h as isize {
        for u in 0..w as isize {
            for dv in -r..=r {
                let vv = (v + dv).clamp(0, h as isize - 1) as usize;
                for du in -r..=r {
                    let uu = (u + du).rem_euclid(w as isize) as usize;
                    let base = (vv * w + uu) * 3;
                    idx.extend([base, base + 1, base + 2]);
                }
            }
        }
    }
    idx
}

/// Gather table packing each 2×2 block into 4C channels.
fn space_to_depth_indices(h: usize, w: usize, c: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(h * w * c);
    for v in 0..h / 2 {
        for u in 0..w / 2 {
            for (dv, du) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let base = ((2 * v + dv) * w + (2 * u + du)) * c;
                idx.extend(base..base + c);
            }
        }
    }
    idx
}

/// Gather table for nearest-neighbor 2× upsampling.
fn nearest_up_indices(h: usize, w: usize, c: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(4 * h * w * c);
    for v in 0..2 * h {
        for u in 0..2 * w {
            let base = ((v / 2) * w + (u / 2)) * c;
            idx.extend(base..base + c);
        }
    }
    idx
}

/// Closed-form parameter count from the layer shapes alone (kept separate
/// from the runtime count so the two can cross-check each other).
pub fn analytic_param_count(cfg: &ModelConfig) -> u64 {
    let k = cfg.patch_kernel as u64;
    let c0 = cfg.base_channels as u64;
    let n = cfg.arch.encoder.len();
    let sub = |c: u64| {
        // ln1 + q/k/v/o projections + ln2 + mlp (C→4C→C)
        2 * c + 4 * (c * c + c) + 2 * c + (c * 4 * c + 4 * c) + (4 * c * c + c)
    };
    let block = |kind: BlockKind, c: u64| sub(c) * kind.axes().len() as u64;

    let mut total = 3 * k * k * c0 + c0; // patch embed
    for (i, &kind) in cfg.arch.encoder.iter().enumerate() {
        let c = c0 << i;
        total += block(kind, c);
        total += 4 * c * 2 * c + 2 * c; // downsample
    }
    let cn = c0 << n;
    for &kind in &cfg.arch.bottleneck {
        total += block(kind, cn);
    }
    for (j, &kind) in cfg.arch.decoder.iter().enumerate() {
        let c = c0 << (n - 1 - j);
        total += 3 * c * c + c; // fuse (2C up + C skip → C)
        total += block(kind, c);
    }
    total += 2 * c0; // final norm affine
    total += c0 + 1; // head
    total
}

/// Attention-path MAC count the whole forward pass must hit: the closed
/// formula summed over every MSA pass at its stage resolution.
pub fn expected_attention_macs(cfg: &ModelConfig) -> u64 {
    use crate::attention::flop_formula;
    let n = cfg.arch.encoder.len();
    let per_block = |kind: BlockKind, lvl: usize| -> u64 {
        let (h, w, c) = (cfg.height >> lvl, cfg.width >> lvl, cfg.channels_at(lvl));
        kind.axes().iter().map(|&axis| flop_formula(h, w, c, axis)).sum()
    };
    let mut total = 0;
    for (i, &kind) in cfg.arch.encoder.iter().enumerate() {
        total += per_block(kind, i);
    }
    for &kind in &cfg.arch.bottleneck {
        total += per_block(kind, n);
    }
    for (j, &kind) in cfg.arch.decoder.iter().enumerate() {
        total += per_block(kind, n - 1 - j);
    }
    total
}

/// Masked mean absolute depth error of one prediction.
fn masked_mae(pred: &Tensor, gt: &Tensor) -> f64 {
    let mask = metrics::valid_mask(gt.data());
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..pred.numel() {
        if mask[i] {
            sum += (pred.data()[i] - gt.data()[i]).abs();
            n += 1;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Mean absolute depth error of the model over a set of records.
pub fn dataset_mae(model: &EgModel, records: &[&SceneRecord]) -> Result<f64> {
    let mut total = 0.0;
    for r in records {
        let pred = model.forward(&r.image)?;
        total += masked_mae(&pred, &r.depth);
    }
    Ok(total / records.len() as f64)
}

/// Masked mean-absolute-error training loss of a batch, built on `tape`
/// through `model`'s forward pass (attach the model first for gradients).
pub fn batch_loss(tape: &Tape, model: &EgModel, batch: &[(&Tensor, &Tensor)]) -> Result<Tensor> {
    if batch.is_empty() {
        return Err(Error::Argument("empty training batch".into()));
    }
    let mut loss_acc: Option<Tensor> = None;
    for (image, gt) in batch {
        let pred = model.forward_on(tape, image)?;
        let mask = metrics::valid_mask(gt.data());
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Argument("batch item has no valid pixels".into()));
        }
        let mask_t = Tensor::from_vec(
            gt.shape(),
            mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )?;
        let diff = tape.sub(&pred, gt)?;
        let err = tape.mul(&tape.abs(&diff)?, &mask_t)?;
        let item = tape.scale(&tape.sum_all(&err)?, 1.0 / count as f64)?;
        loss_acc = Some(match loss_acc {
            Some(acc) => tape.add(&acc, &item)?,
            None => item,
        });
    }
    tape.scale(&loss_acc.unwrap(), 1.0 / batch.len() as f64)
}

/// One SGD step on a batch of (image, ground-truth depth) pairs: masked
/// mean-absolute-error loss, optional global-norm gradient clipping.
/// Returns the batch loss.
pub fn train_step(
    model: &mut EgModel,
    batch: &[(&Tensor, &Tensor)],
    lr: f64,
    clip_norm: Option<f64>,
) -> Result<f64> {
    let tape = Tape::new();
    let (traced, vars) = model.attach(&tape);
    let loss = batch_loss(&tape, &traced, batch)?;
    let loss_value = loss.data()[0];
    if !loss_value.is_finite() {
        let mut norms = String::new();
        model.visit(|name, t| {
            let n: f64 = t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            if !n.is_finite() || norms.len() < 256 {
                norms.push_str(&format!("{name}={n:.3e} "));
            }
        });
        return Err(Error::NonFinite(format!(
            "training loss is {loss_value}; parameter norms: {norms}"
        )));
    }

    let grads = tape.backward(&loss)?;
    let grad_list: Vec<Tensor> = vars.iter().map(|v| grads.get_or_zeros(v)).collect();

    let mut scale = 1.0;
    if let Some(limit) = clip_norm {
        let total_sq: f64 = grad_list
            .iter()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum();
        let norm = total_sq.sqrt();
        if norm > limit {
            scale = limit / norm;
        }
    }

    if lr != 0.0 {
        let mut iter = grad_list.iter();
        model.visit_mut(|t| {
            let g = iter.next().expect("one gradient per parameter");
            let updated: Vec<f64> = t
                .data()
                .iter()
                .zip(g.data())
                .map(|(&p, &gv)| p - lr * scale * gv)
                .collect();
            *t = Tensor::from_vec(t.shape(), updated).expect("shape unchanged");
        });
    }
    Ok(loss_value)
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { steps: 1000, lr: 0.1, batch_size: 2, clip_norm: Some(1.0), seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainLogRow {
    pub step: usize,
    pub loss: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub log: Vec<TrainLogRow>,
    /// Whole-train-set MAE before the first step.
    pub initial_train_mae: f64,
    /// Whole-train-set MAE after the last step.
    pub final_train_mae: f64,
}

/// SGD training loop over the train split of `records`. Batches are sampled
/// with a seeded RNG, so the whole run is deterministic.
pub fn train(model: &mut EgModel, records: &[SceneRecord], opts: &TrainOptions) -> Result<TrainSummary> {
    let train_set: Vec<&SceneRecord> =
        records.iter().filter(|r| r.split == crate::data::Split::Train).collect();
    if train_set.is_empty() {
        return Err(Error::Argument("no training records".into()));
    }
    let initial_train_mae = dataset_mae(model, &train_set)?;
    let mut rng = Rng::new(opts.seed).fork(0x7261696e);
    let mut log = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let start = Instant::now();
        let batch: Vec<(&Tensor, &Tensor)> = (0..opts.batch_size.max(1))
            .map(|_| {
                let r = train_set[rng.index(train_set.len())];
                (&r.image, &r.depth)
            })
            .collect();
        let loss = train_step(model, &batch, opts.lr, opts.clip_norm).map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("step {step}: {msg}")),
            other => other,
        })?;
        log.push(TrainLogRow { step, loss, wall_ms: start.elapsed().as_secs_f64() * 1e3 });
    }
    let final_train_mae = dataset_mae(model, &train_set)?;
    Ok(TrainSummary { log, initial_train_mae, final_train_mae })
}

/// Per-image alignment + metrics over the test split (or any record list).
pub fn evaluate(
    model: &EgModel,
    records: &[&SceneRecord],
) -> Result<Vec<(String, Alignment, DepthMetrics)>> {
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        let pred = model.forward(&r.image)?;
        let mask = metrics::valid_mask(r.depth.data());
        let (alignment, m) = metrics::align_and_compute(pred.data(), r.depth.data(), &mask)?;
        rows.push((r.id.clone(), alignment, m));
    }
    Ok(rows)
}

/// Mean test abs_rel of an evaluation report.
pub fn mean_abs_rel(rows: &[(String, Alignment, DepthMetrics)]) -> f64 {
    rows.iter().map(|(_, _, m)| m.abs_rel).sum::<f64>() / rows.len() as f64
}

/// CSV serialization of a training log.
pub fn train_log_csv(log: &[TrainLogRow]) -> String {
    let mut out = String::from("step,loss,wall_ms\n");
    for row in log {
        out.push_str(&format!("{},{},{}\n", row.step, row.loss, row.wall_ms));
    }
    out
}
