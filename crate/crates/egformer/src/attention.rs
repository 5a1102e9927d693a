//! Equirectangular geometry-biased window attention.
//!
//! The mechanism has three parts, all driven by the pixel angle grid rather
//! than by learned embeddings:
//!
//! * **ERPE** — a non-parameterized attention bias equal to the signed chord
//!   distance between window elements on the sphere. Horizontal row windows
//!   get one W×W matrix per row, scaled by sin(phi) of that row; vertical
//!   column windows share a single H×H matrix.
//! * **DAS** — the softmax replacement: each score row is L1-normalized into
//!   [-1, 1], mapped through a chord-distance-squared transform
//!   2·rho_b²·(1 − cos(s·π/2)) (times sin²(phi_b) horizontally), landing in
//!   [0, 1] with the default baseline point (1/√2, 0, π/2).
//! * **EaAR** — each window's attention output is blended with the window
//!   input, weighted by the window's importance M: the mean |score| of the
//!   window relative to the best window of the block, clamped below at 0.5.
//!
//! Stripe width is fixed at 1: a horizontal window is one image row, a
//! vertical window one column.

use crate::error::{Error, Result};
use crate::geometry::AngularGrid;
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor};

/// Layer-norm epsilon used by every block.
pub const LN_EPS: f64 = 1e-5;

/// Window orientation of an MSA pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Row windows of shape 1×W (attention along the azimuth).
    Horizontal,
    /// Column windows of shape 1×H (attention along the polar angle).
    Vertical,
}

/// Which pieces of the mechanism are active. `Full` is the production path;
/// the rest exist for the ablation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionVariant {
    Full,
    /// No position bias; DAS and EaAR stay on.
    NoErpe,
    /// Scores re-weighted by row softmax instead of DAS; ERPE and EaAR stay on.
    NoDas,
    /// No attention rearrangement; window outputs are used directly.
    NoEaar,
    /// Plain softmax window attention: no ERPE, no DAS, no EaAR.
    Softmax,
}

/// Hyperparameters of EH/EV-MSA.
#[derive(Debug, Clone)]
pub struct AttentionConfig {
    /// ERPE bias level.
    pub rho: f64,
    /// DAS baseline point (rho_b, theta_b, phi_b).
    pub rho_b: f64,
    pub theta_b: f64,
    pub phi_b: f64,
    /// Number of heads J.
    pub heads: usize,
    /// Hidden width d_j of each head.
    pub head_dim: usize,
    /// Importance floor for EaAR.
    pub clamp_min: f64,
    /// Guard added to the L1-normalization denominator.
    pub eps_norm: f64,
}

impl AttentionConfig {
    pub fn new(heads: usize, head_dim: usize) -> Self {
        AttentionConfig {
            rho: 0.1,
            rho_b: 1.0 / 2.0f64.sqrt(),
            theta_b: 0.0,
            phi_b: std::f64::consts::FRAC_PI_2,
            heads,
            head_dim,
            clamp_min: 0.5,
            eps_norm: 1e-8,
        }
    }

    /// Channel count C = J · d_j.
    pub fn channels(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho <= 0.0 || self.rho_b <= 0.0 {
            return Err(Error::Config(format!(
                "rho and rho_b must be positive, got {} / {}",
                self.rho, self.rho_b
            )));
        }
        if !(0.0..std::f64::consts::PI).contains(&self.phi_b) || self.phi_b == 0.0 {
            return Err(Error::Config(format!("phi_b must lie in (0, pi), got {}", self.phi_b)));
        }
        if !(0.0..=1.0).contains(&self.clamp_min) {
            return Err(Error::Config(format!("clamp_min must lie in [0,1], got {}", self.clamp_min)));
        }
        if self.heads == 0 || self.head_dim == 0 {
            return Err(Error::Config("heads and head_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Precomputed relative-position bias matrices for one window orientation.
#[derive(Debug, Clone)]
pub struct ErpeBias {
    pub axis: Axis,
    /// Horizontal: one W×W matrix per row window. Vertical: a single H×H
    /// matrix shared by every column window.
    pub matrices: Vec<Tensor>,
}

impl ErpeBias {
    /// Bias matrix for window `i`.
    pub fn window(&self, i: usize) -> &Tensor {
        match self.axis {
            Axis::Horizontal => &self.matrices[i],
            Axis::Vertical => &self.matrices[0],
        }
    }
}

/// Build the ERPE bias from the angle grid.
///
/// Entry (m, n) of the horizontal matrix for row i is
/// sign(theta_m − theta_n) · rho · sqrt(2(1 − cos(theta_m − theta_n))) · sin(phi_i);
/// the vertical matrix replaces theta by phi and drops the sin factor.
/// Angle differences are the raw grid differences (never wrapped), so a
/// seam-straddling pair keeps a tiny magnitude through the cosine while the
/// sign still encodes left/right order. Antisymmetry is exact by
/// construction: the (n, m) entry is the negation of (m, n).
pub fn build_erpe(grid: &AngularGrid, axis: Axis, cfg: &AttentionConfig) -> ErpeBias {
    let chord = |delta: f64| (2.0 * (1.0 - delta.cos())).max(0.0).sqrt();
    match axis {
        Axis::Horizontal => {
            let w = grid.width();
            // separable: matrix_i = sin(phi_i) · base(theta)
            let mut base = vec![0.0; w * w];
            for m in 0..w {
                for n in (m + 1)..w {
                    // theta increases with the column index, so theta_m < theta_n
                    let mag = cfg.rho * chord(grid.theta(m) - grid.theta(n));
                    base[m * w + n] = -mag;
                    base[n * w + m] = mag;
                }
            }
            let matrices = (0..grid.height())
                .map(|i| {
                    let s = grid.phi(i).sin();
                    Tensor::from_vec(&[w, w], base.iter().map(|&b| b * s).collect()).unwrap()
                })
                .collect();
            ErpeBias { axis, matrices }
        }
        Axis::Vertical => {
            let h = grid.height();
            let mut mat = vec![0.0; h * h];
            for m in 0..h {
                for n in (m + 1)..h {
                    let mag = cfg.rho * chord(grid.phi(m) - grid.phi(n));
                    mat[m * h + n] = -mag;
                    mat[n * h + m] = mag;
                }
            }
            ErpeBias { axis, matrices: vec![Tensor::from_vec(&[h, h], mat).unwrap()] }
        }
    }
}

/// Parameters of one MSA sub-block: pre-norm affine, Q/K/V/output
/// projections (each C→C), and the post-norm MLP (C→4C→C, GELU).
#[derive(Debug, Clone)]
pub struct BlockParams {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
}

fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(&[fan_in, fan_out], |_| rng.uniform(-a, a))
}

impl BlockParams {
    pub fn init(c: usize, rng: &mut Rng) -> Self {
        BlockParams {
            ln1_gamma: Tensor::ones(&[c]),
            ln1_beta: Tensor::zeros(&[c]),
            wq: glorot(rng, c, c),
            bq: Tensor::zeros(&[c]),
            wk: glorot(rng, c, c),
            bk: Tensor::zeros(&[c]),
            wv: glorot(rng, c, c),
            bv: Tensor::zeros(&[c]),
            wo: glorot(rng, c, c),
            bo: Tensor::zeros(&[c]),
            ln2_gamma: Tensor::ones(&[c]),
            ln2_beta: Tensor::zeros(&[c]),
            mlp_w1: glorot(rng, c, 4 * c),
            mlp_b1: Tensor::zeros(&[4 * c]),
            mlp_w2: glorot(rng, 4 * c, c),
            mlp_b2: Tensor::zeros(&[c]),
        }
    }

    /// Training init: like [`BlockParams::init`] but the attention output
    /// projection and the MLP contraction start at zero, so each block
    /// begins near the identity and learns its refinement from there.
    pub fn init_residual(c: usize, rng: &mut Rng) -> Self {
        let mut p = Self::init(c, rng);
        p.wo = Tensor::zeros(&[c, c]);
        p.mlp_w2 = Tensor::zeros(&[4 * c, c]);
        p
    }

    /// All projection and MLP weights zero, layer-norm affines zero too.
    pub fn zeros(c: usize) -> Self {
        BlockParams {
            ln1_gamma: Tensor::zeros(&[c]),
            ln1_beta: Tensor::zeros(&[c]),
            wq: Tensor::zeros(&[c, c]),
            bq: Tensor::zeros(&[c]),
            wk: Tensor::zeros(&[c, c]),
            bk: Tensor::zeros(&[c]),
            wv: Tensor::zeros(&[c, c]),
            bv: Tensor::zeros(&[c]),
            wo: Tensor::zeros(&[c, c]),
            bo: Tensor::zeros(&[c]),
            ln2_gamma: Tensor::zeros(&[c]),
            ln2_beta: Tensor::zeros(&[c]),
            mlp_w1: Tensor::zeros(&[c, 4 * c]),
            mlp_b1: Tensor::zeros(&[4 * c]),
            mlp_w2: Tensor::zeros(&[4 * c, c]),
            mlp_b2: Tensor::zeros(&[c]),
        }
    }

    pub fn channels(&self) -> usize {
        self.ln1_gamma.shape()[0]
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("ln1_gamma", &self.ln1_gamma),
            ("ln1_beta", &self.ln1_beta),
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln2_gamma", &self.ln2_gamma),
            ("ln2_beta", &self.ln2_beta),
            ("mlp_w1", &self.mlp_w1),
            ("mlp_b1", &self.mlp_b1),
            ("mlp_w2", &self.mlp_w2),
            ("mlp_b2", &self.mlp_b2),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("ln1_gamma", &mut self.ln1_gamma),
            ("ln1_beta", &mut self.ln1_beta),
            ("wq", &mut self.wq),
            ("bq", &mut self.bq),
            ("wk", &mut self.wk),
            ("bk", &mut self.bk),
            ("wv", &mut self.wv),
            ("bv", &mut self.bv),
            ("wo", &mut self.wo),
            ("bo", &mut self.bo),
            ("ln2_gamma", &mut self.ln2_gamma),
            ("ln2_beta", &mut self.ln2_beta),
            ("mlp_w1", &mut self.mlp_w1),
            ("mlp_b1", &mut self.mlp_b1),
            ("mlp_w2", &mut self.mlp_w2),
            ("mlp_b2", &mut self.mlp_b2),
        ]
    }
}

/// Split a feature map into stripe windows: H row windows [1, W, C] or
/// W column windows [1, H, C]. Concatenating the result back (in order)
/// reproduces the input exactly.
pub fn partition_windows(tape: &Tape, z: &Tensor, axis: Axis) -> Result<Vec<Tensor>> {
    if z.rank() != 3 {
        return Err(Error::Argument(format!("expected [H, W, C], got {:?}", z.shape())));
    }
    let zz = match axis {
        Axis::Horizontal => z.clone(),
        Axis::Vertical => tape.permute(z, &[1, 0, 2])?,
    };
    let nw = zz.shape()[0];
    (0..nw).map(|i| tape.narrow(&zz, 0, i, 1)).collect()
}

/// Inverse of [`partition_windows`].
pub fn merge_windows(tape: &Tape, windows: &[Tensor], axis: Axis) -> Result<Tensor> {
    let refs: Vec<&Tensor> = windows.iter().collect();
    let joined = tape.concat(&refs, 0)?;
    match axis {
        Axis::Horizontal => Ok(joined),
        Axis::Vertical => tape.permute(&joined, &[1, 0, 2]),
    }
}

/// Biased score of one window and one head: Q Kᵀ + E (Kᵀ over the token
/// axis). The same bias matrix is added to every head of the window.
pub fn biased_score(tape: &Tape, q: &Tensor, k: &Tensor, erpe_window: &Tensor) -> Result<Tensor> {
    if q.rank() != 3 || k.shape() != q.shape() {
        return Err(Error::Argument(format!(
            "biased_score wants matching [1, N, d] operands, got {:?} / {:?}",
            q.shape(),
            k.shape()
        )));
    }
    let n = q.shape()[1];
    if erpe_window.shape() != [n, n] {
        return Err(Error::Argument(format!(
            "bias shape {:?} does not match window length {n}",
            erpe_window.shape()
        )));
    }
    let kt = tape.permute(k, &[0, 2, 1])?;
    let s = tape.matmul(q, &kt)?;
    let e = tape.reshape(erpe_window, &[1, n, n])?;
    tape.add(&s, &e)
}

/// Distance-based attention score. Each score row is L1-normalized (with an
/// eps guard so an all-zero row stays zero), scaled by π/2, and mapped
/// through 2·rho_b²·(1 − cos(·)); horizontal windows pick up sin²(phi_b).
/// With the default baseline point the output range is [0, 1] and
/// das(s) == das(−s) since the map is even.
pub fn das(tape: &Tape, score: &Tensor, axis: Axis, cfg: &AttentionConfig) -> Result<Tensor> {
    let normalized = tape.l1_normalize_rows(score, cfg.eps_norm)?;
    let angled = tape.scale(&normalized, std::f64::consts::FRAC_PI_2)?;
    let c = tape.cos(&angled)?;
    let mut factor = 2.0 * cfg.rho_b * cfg.rho_b;
    if axis == Axis::Horizontal {
        factor *= cfg.phi_b.sin().powi(2);
    }
    // factor·(1 − cos)
    tape.affine(&c, -factor, factor)
}

/// Importance level M per window from the biased (pre-DAS) scores: the mean
/// of |score| over all heads and entries, divided by the best window's mean,
/// clamped below. If every window's mean is zero there is nothing to rank
/// and every window gets M = 1.
pub fn window_importance(tape: &Tape, scores: &[&Tensor], cfg: &AttentionConfig) -> Result<Tensor> {
    if scores.is_empty() {
        return Err(Error::Argument("window_importance needs at least one window".into()));
    }
    let means: Vec<Tensor> = scores
        .iter()
        .map(|s| {
            let a = tape.abs(s)?;
            tape.mean_all(&a)
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor> = means.iter().collect();
    let m = tape.concat(&refs, 0)?;
    importance_from_means(tape, &m, cfg)
}

/// Shared tail of the importance computation: means [nw] -> M [nw].
fn importance_from_means(tape: &Tape, means: &Tensor, cfg: &AttentionConfig) -> Result<Tensor> {
    let peak = means.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if peak == 0.0 {
        // all windows scored zero: no information to discriminate
        return Ok(Tensor::ones(means.shape()));
    }
    let mx = tape.max_all(means)?;
    let mx = tape.expand(&mx, means.shape())?;
    let ratio = tape.div(means, &mx)?;
    tape.clamp_min(&ratio, cfg.clamp_min)
}

/// EaAR blend for one window: M·attention + (1 − M)·z, with scalar M.
pub fn eaar_blend(tape: &Tape, attention: &Tensor, z: &Tensor, m: &Tensor) -> Result<Tensor> {
    if attention.shape() != z.shape() {
        return Err(Error::Argument(format!(
            "eaar_blend shape mismatch: {:?} vs {:?}",
            attention.shape(),
            z.shape()
        )));
    }
    if m.numel() != 1 {
        return Err(Error::Argument(format!("importance must be scalar, got {:?}", m.shape())));
    }
    let ones = vec![1usize; attention.rank()];
    let m_full = tape.expand(&tape.reshape(m, &ones)?, attention.shape())?;
    let keep = tape.add_scalar(&tape.neg(&m_full)?, 1.0)?;
    tape.add(&tape.mul(&m_full, attention)?, &tape.mul(&keep, z)?)
}

/// Equirectangular-aware multi-head self-attention over stripe windows,
/// full mechanism (ERPE + DAS + EaAR).
pub fn eg_msa(
    tape: &Tape,
    z: &Tensor,
    axis: Axis,
    grid: &AngularGrid,
    params: &BlockParams,
    cfg: &AttentionConfig,
) -> Result<Tensor> {
    eg_msa_variant(tape, z, axis, grid, params, cfg, AttentionVariant::Full)
}

/// [`eg_msa`] with pieces of the mechanism switched per `variant`.
///
/// Dataflow per window: pre-norm, Q/K/V projections (C→C, split into J
/// heads), biased score, DAS (or softmax for the ablations), score × V,
/// head concat, output projection, then the EaAR blend against the pre-norm
/// window input. All windows run batched; the importance ranking is the one
/// cross-window synchronization point.
pub fn eg_msa_variant(
    tape: &Tape,
    z: &Tensor,
    axis: Axis,
    grid: &AngularGrid,
    params: &BlockParams,
    cfg: &AttentionConfig,
    variant: AttentionVariant,
) -> Result<Tensor> {
    if variant == AttentionVariant::Softmax {
        return crate::oracle::softmax_baseline_msa(tape, z, axis, params, cfg);
    }
    cfg.validate()?;
    if z.rank() != 3 {
        return Err(Error::Config(format!("expected [H, W, C], got {:?}", z.shape())));
    }
    let c = z.shape()[2];
    if c != cfg.channels() || c != params.channels() {
        return Err(Error::Config(format!(
            "channel mismatch: tensor {c}, config {} ({} heads × {}), params {}",
            cfg.channels(),
            cfg.heads,
            cfg.head_dim,
            params.channels()
        )));
    }
    if z.shape()[0] != grid.height() || z.shape()[1] != grid.width() {
        return Err(Error::Config(format!(
            "tensor {:?} does not match grid {}x{}",
            z.shape(),
            grid.height(),
            grid.width()
        )));
    }

    // windows-as-batch layout: [nw, n, C]
    let zz = match axis {
        Axis::Horizontal => z.clone(),
        Axis::Vertical => tape.permute(z, &[1, 0, 2])?,
    };
    let nw = zz.shape()[0];
    let n = zz.shape()[1];
    let (heads, d) = (cfg.heads, cfg.head_dim);

    let macs_before = tape.macs();

    let f = tape.layer_norm(&zz, &params.ln1_gamma, &params.ln1_beta, LN_EPS)?;
    let q = tape.linear(&f, &params.wq, &params.bq)?;
    let k = tape.linear(&f, &params.wk, &params.bk)?;
    let v = tape.linear(&f, &params.wv, &params.bv)?;

    // [nw, n, C] -> [nw·J, n, d]
    let to_heads = |t: &Tensor| -> Result<Tensor> {
        let t4 = tape.reshape(t, &[nw, n, heads, d])?;
        let t4 = tape.permute(&t4, &[0, 2, 1, 3])?;
        tape.reshape(&t4, &[nw * heads, n, d])
    };
    let qh = to_heads(&q)?;
    let vh = to_heads(&v)?;
    // Kᵀ: [nw, n, J, d] -> [nw·J, d, n]
    let k4 = tape.reshape(&k, &[nw, n, heads, d])?;
    let kt = tape.permute(&k4, &[0, 2, 3, 1])?;
    let kt = tape.reshape(&kt, &[nw * heads, d, n])?;

    let mut score = tape.matmul(&qh, &kt)?;
    if variant != AttentionVariant::NoErpe {
        let bias = erpe_batched(tape, grid, axis, cfg, nw, n, heads)?;
        score = tape.add(&score, &bias)?;
    }

    // importance from the biased scores, pooled over heads
    let importance = if variant != AttentionVariant::NoEaar {
        let a = tape.abs(&score)?;
        let a = tape.reshape(&a, &[nw, heads, n, n])?;
        let means = tape.mean_axes(&a, &[1, 2, 3], false)?;
        Some(importance_from_means(tape, &means, cfg)?)
    } else {
        None
    };

    let weights = if variant == AttentionVariant::NoDas {
        crate::oracle::row_softmax(tape, &score)?
    } else {
        das(tape, &score, axis, cfg)?
    };

    let attn = tape.matmul(&weights, &vh)?;
    // [nw·J, n, d] -> [nw, n, C]
    let attn = tape.reshape(&attn, &[nw, heads, n, d])?;
    let attn = tape.permute(&attn, &[0, 2, 1, 3])?;
    let attn = tape.reshape(&attn, &[nw, n, c])?;
    let out = tape.linear(&attn, &params.wo, &params.bo)?;

    tape.add_attention_macs(tape.macs() - macs_before);

    let blended = match importance {
        Some(m) => {
            let m3 = tape.reshape(&m, &[nw, 1, 1])?;
            let m3 = tape.expand(&m3, &[nw, n, c])?;
            let keep = tape.add_scalar(&tape.neg(&m3)?, 1.0)?;
            tape.add(&tape.mul(&m3, &out)?, &tape.mul(&keep, &zz)?)?
        }
        None => out,
    };

    match axis {
        Axis::Horizontal => Ok(blended),
        Axis::Vertical => tape.permute(&blended, &[1, 0, 2]),
    }
}

/// ERPE matrices stacked for the windows-as-batch layout [nw·J, n, n].
fn erpe_batched(
    tape: &Tape,
    grid: &AngularGrid,
    axis: Axis,
    cfg: &AttentionConfig,
    nw: usize,
    n: usize,
    heads: usize,
) -> Result<Tensor> {
    let bias = build_erpe(grid, axis, cfg);
    let stacked = match axis {
        Axis::Horizontal => {
            let mut data = Vec::with_capacity(nw * n * n);
            for m in &bias.matrices {
                data.extend_from_slice(m.data());
            }
            Tensor::from_vec(&[nw, 1, n, n], data)?
        }
        Axis::Vertical => {
            let m = &bias.matrices[0];
            let one = Tensor::from_vec(&[1, 1, n, n], m.data().to_vec())?;
            tape.expand(&one, &[nw, 1, n, n])?
        }
    };
    let full = tape.expand(&stacked, &[nw, heads, n, n])?;
    tape.reshape(&full, &[nw * heads, n, n])
}

/// Block letters of the architecture string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// One horizontal MSA sub-block.
    Horizontal,
    /// One vertical MSA sub-block.
    Vertical,
    /// Vertical sub-block followed by a horizontal one, independent weights.
    Equirect,
}

impl BlockKind {
    pub fn letter(&self) -> char {
        match self {
            BlockKind::Horizontal => 'H',
            BlockKind::Vertical => 'V',
            BlockKind::Equirect => 'E',
        }
    }

    /// MSA axes this block runs, in order.
    pub fn axes(&self) -> &'static [Axis] {
        match self {
            BlockKind::Horizontal => &[Axis::Horizontal],
            BlockKind::Vertical => &[Axis::Vertical],
            BlockKind::Equirect => &[Axis::Vertical, Axis::Horizontal],
        }
    }
}

/// One transformer block: 1 sub-block for H/V kinds, 2 for E.
#[derive(Debug, Clone)]
pub struct EgBlock {
    pub kind: BlockKind,
    pub subs: Vec<BlockParams>,
}

impl EgBlock {
    pub fn init(kind: BlockKind, c: usize, rng: &mut Rng) -> Self {
        let subs = kind.axes().iter().map(|_| BlockParams::init(c, rng)).collect();
        EgBlock { kind, subs }
    }

    /// Training init (see [`BlockParams::init_residual`]).
    pub fn init_residual(kind: BlockKind, c: usize, rng: &mut Rng) -> Self {
        let subs = kind.axes().iter().map(|_| BlockParams::init_residual(c, rng)).collect();
        EgBlock { kind, subs }
    }

    pub fn zeros(kind: BlockKind, c: usize) -> Self {
        let subs = kind.axes().iter().map(|_| BlockParams::zeros(c)).collect();
        EgBlock { kind, subs }
    }
}

/// One MSA sub-block with its residuals:
/// zhat = MSA(z) + z; out = MLP(LN(zhat)) + zhat.
pub fn sub_block_forward(
    tape: &Tape,
    z: &Tensor,
    axis: Axis,
    grid: &AngularGrid,
    params: &BlockParams,
    cfg: &AttentionConfig,
    variant: AttentionVariant,
) -> Result<Tensor> {
    let l = eg_msa_variant(tape, z, axis, grid, params, cfg, variant)?;
    let zhat = tape.add(&l, z)?;
    let ln = tape.layer_norm(&zhat, &params.ln2_gamma, &params.ln2_beta, LN_EPS)?;
    let hidden = tape.gelu(&tape.linear(&ln, &params.mlp_w1, &params.mlp_b1)?)?;
    let mlp = tape.linear(&hidden, &params.mlp_w2, &params.mlp_b2)?;
    tape.add(&mlp, &zhat)
}

/// Run a whole block (H, V, or E) on a feature map.
pub fn block_forward(
    tape: &Tape,
    z: &Tensor,
    block: &EgBlock,
    grid: &AngularGrid,
    cfg: &AttentionConfig,
    variant: AttentionVariant,
) -> Result<Tensor> {
    let axes = block.kind.axes();
    if axes.len() != block.subs.len() {
        return Err(Error::Config(format!(
            "block {:?} wants {} sub-blocks, has {}",
            block.kind,
            axes.len(),
            block.subs.len()
        )));
    }
    let mut cur = z.clone();
    for (axis, params) in axes.iter().zip(&block.subs) {
        cur = sub_block_forward(tape, &cur, *axis, grid, params, cfg, variant)?;
    }
    Ok(cur)
}

/// Multiply-accumulate count of one MSA pass over an H×W×C map:
/// 4HWC² for the projections plus 2·(window length)·HWC for the two window
/// matrix products — 2HW²C horizontally, 2H²WC vertically.
pub fn flop_formula(h: usize, w: usize, c: usize, axis: Axis) -> u64 {
    let (h, w, c) = (h as u64, w as u64, c as u64);
    let proj = 4 * h * w * c * c;
    match axis {
        Axis::Horizontal => proj + 2 * h * w * w * c,
        Axis::Vertical => proj + 2 * h * h * w * c,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64, what: &str) {
        assert!((a - b).abs() <= tol, "{what}: {a} vs {b}");
    }

    fn rand_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| rng.uniform(-1.5, 1.5))
    }

    #[test]
    fn partition_shapes_and_round_trip() {
        let mut rng = Rng::new(1);
        let tape = Tape::new();
        let z = rand_tensor(&mut rng, &[2, 3, 4]);

        let hw = partition_windows(&tape, &z, Axis::Horizontal).unwrap();
        assert_eq!(hw.len(), 2);
        assert_eq!(hw[0].shape(), &[1, 3, 4]);
        for u in 0..3 {
            for c in 0..4 {
                assert_eq!(hw[0].at(&[0, u, c]), z.at(&[0, u, c]));
            }
        }
        let merged = merge_windows(&tape, &hw, Axis::Horizontal).unwrap();
        assert_eq!(merged.data(), z.data());

        let vw = partition_windows(&tape, &z, Axis::Vertical).unwrap();
        assert_eq!(vw.len(), 3);
        assert_eq!(vw[0].shape(), &[1, 2, 4]);
        let merged = merge_windows(&tape, &vw, Axis::Vertical).unwrap();
        assert_eq!(merged.data(), z.data());
    }

    #[test]
    fn erpe_diagonal_zero_antisymmetric_exact() {
        let cfg = AttentionConfig::new(1, 1);
        let grid = build_grid(5, 7).unwrap();
        for axis in [Axis::Horizontal, Axis::Vertical] {
            let bias = build_erpe(&grid, axis, &cfg);
            for mat in &bias.matrices {
                let n = mat.shape()[0];
                for m in 0..n {
                    assert_eq!(mat.at(&[m, m]), 0.0);
                    for p in 0..n {
                        assert_eq!(mat.at(&[m, p]), -mat.at(&[p, m]), "exact antisymmetry");
                    }
                }
            }
        }
    }

    #[test]
    fn erpe_two_column_hand_case() {
        // W = 2: theta = [pi/2, 3pi/2], diff = pi, chord magnitude = 2;
        // at phi = pi/2 and rho = 0.1 the (0,1) entry is -0.2
        let cfg = AttentionConfig::new(1, 1);
        let grid = build_grid(1, 2).unwrap();
        close(grid.phi(0), PI / 2.0, 1e-15, "center row");
        let bias = build_erpe(&grid, Axis::Horizontal, &cfg);
        close(bias.matrices[0].at(&[0, 1]), -0.2, 1e-12, "signed entry");
        close(bias.matrices[0].at(&[1, 0]), 0.2, 1e-12, "mirror");
    }

    #[test]
    fn erpe_horizontal_scales_with_sin_phi() {
        let cfg = AttentionConfig::new(1, 1);
        let grid = build_grid(6, 9).unwrap();
        let bias = build_erpe(&grid, Axis::Horizontal, &cfg);
        // matrix_i / sin(phi_i) identical across rows
        let w = grid.width();
        for i in 1..grid.height() {
            for m in 0..w {
                for n in 0..w {
                    let a = bias.matrices[0].at(&[m, n]) / grid.phi(0).sin();
                    let b = bias.matrices[i].at(&[m, n]) / grid.phi(i).sin();
                    close(a, b, 1e-12, "separability");
                }
            }
        }
    }

    #[test]
    fn erpe_magnitude_is_circulant() {
        let cfg = AttentionConfig::new(1, 1);
        let grid = build_grid(2, 12).unwrap();
        let bias = build_erpe(&grid, Axis::Horizontal, &cfg);
        let w = 12;
        let mat = &bias.matrices[1];
        // |E|[m][n] depends only on (m - n) mod W
        for m in 0..w {
            for n in 0..w {
                let k = (m + w - n) % w;
                let a = mat.at(&[m, n]).abs();
                let b = mat.at(&[k, 0]).abs();
                close(a, b, 1e-12, "circulant magnitude");
            }
        }
    }

    #[test]
    fn erpe_seam_equals_adjacent_at_w360() {
        let cfg = AttentionConfig::new(1, 1);
        let grid = build_grid(1, 360).unwrap();
        let bias = build_erpe(&grid, Axis::Horizontal, &cfg);
        let mat = &bias.matrices[0];
        // both pairs span one column of azimuth; the seam is connected
        let seam = mat.at(&[0, 359]).abs();
        let adjacent = mat.at(&[0, 1]).abs();
        close(seam, adjacent, 1e-12, "seam vs adjacent column");
        assert!(seam > 0.0);
    }

    #[test]
    fn biased_score_examples() {
        let tape = Tape::new();
        let n = 3;
        let d = 2;
        let zero = Tensor::zeros(&[1, n, d]);
        let mut rng = Rng::new(5);
        let erpe = rand_tensor(&mut rng, &[n, n]);
        let s = biased_score(&tape, &zero, &zero, &erpe).unwrap();
        assert_eq!(s.data(), erpe.data());

        // identity-row Q, K and zero bias: the Gram matrix
        let q = Tensor::from_vec(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let e0 = Tensor::zeros(&[2, 2]);
        let s = biased_score(&tape, &q, &q, &e0).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0, 0.0, 1.0]);

        // random case vs loop
        let q = rand_tensor(&mut rng, &[1, n, d]);
        let k = rand_tensor(&mut rng, &[1, n, d]);
        let s = biased_score(&tape, &q, &k, &erpe).unwrap();
        for m in 0..n {
            for p in 0..n {
                let mut acc = erpe.at(&[m, p]);
                for dd in 0..d {
                    acc += q.at(&[0, m, dd]) * k.at(&[0, p, dd]);
                }
                close(s.at(&[0, m, p]), acc, 1e-12, "score vs loop");
            }
        }
    }

    #[test]
    fn das_zero_row_stays_zero() {
        let tape = Tape::new();
        let cfg = AttentionConfig::new(1, 1);
        let s = Tensor::zeros(&[1, 2, 2]);
        let d = das(&tape, &s, Axis::Horizontal, &cfg).unwrap();
        assert_eq!(d.data(), &[0.0; 4]);
    }

    #[test]
    fn das_single_entry_hits_range_maximum() {
        let tape = Tape::new();
        let cfg = AttentionConfig::new(1, 1);
        // one nonzero entry per row normalizes to ~±1 -> das ~ 1
        let s = Tensor::from_vec(&[1, 2, 2], vec![3.0, 0.0, 0.0, -7.0]).unwrap();
        let d = das(&tape, &s, Axis::Vertical, &cfg).unwrap();
        close(d.at(&[0, 0, 0]), 1.0, 1e-6, "max of range");
        close(d.at(&[0, 1, 1]), 1.0, 1e-6, "negative entry too");
        assert_eq!(d.at(&[0, 0, 1]), 0.0);
    }

    #[test]
    fn das_even_symmetry_and_unit_range() {
        let mut rng = Rng::new(6);
        let tape = Tape::new();
        let cfg = AttentionConfig::new(1, 1);
        for axis in [Axis::Horizontal, Axis::Vertical] {
            let s = Tensor::from_fn(&[2, 4, 4], |_| rng.uniform(-50.0, 50.0));
            let neg = tape.neg(&s).unwrap();
            let a = das(&tape, &s, axis, &cfg).unwrap();
            let b = das(&tape, &neg, axis, &cfg).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                close(*x, *y, 1e-12, "das(s) == das(-s)");
                assert!((0.0..=1.0).contains(x), "das out of [0,1]: {x}");
            }
        }
    }

    #[test]
    fn importance_examples() {
        let tape = Tape::new();
        let cfg = AttentionConfig::new(1, 1);

        // single window pins M = 1
        let s = Tensor::from_vec(&[1, 2, 2], vec![0.3, -0.1, 2.0, 0.0]).unwrap();
        let m = window_importance(&tape, &[&s], &cfg).unwrap();
        assert_eq!(m.data(), &[1.0]);

        // means (4, 2, 0.4): ratios (1, 0.5, 0.1) clamp to (1, 0.5, 0.5)
        let w1 = Tensor::full(&[1, 1, 1], 4.0);
        let w2 = Tensor::full(&[1, 1, 1], -2.0);
        let w3 = Tensor::full(&[1, 1, 1], 0.4);
        let m = window_importance(&tape, &[&w1, &w2, &w3], &cfg).unwrap();
        assert_eq!(m.data(), &[1.0, 0.5, 0.5]);

        // uniform scaling leaves M unchanged
        let s1 = Tensor::from_vec(&[1, 2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let s2 = Tensor::from_vec(&[1, 2, 2], vec![0.2, 0.1, -0.4, 1.0]).unwrap();
        let m_base = window_importance(&tape, &[&s1, &s2], &cfg).unwrap();
        let s1x = tape.scale(&s1, 10.0).unwrap();
        let s2x = tape.scale(&s2, 10.0).unwrap();
        let m_scaled = window_importance(&tape, &[&s1x, &s2x], &cfg).unwrap();
        for (a, b) in m_base.data().iter().zip(m_scaled.data()) {
            close(*a, *b, 1e-12, "scale invariance");
        }

        // all-zero scores: nothing to rank, every window gets 1
        let z1 = Tensor::zeros(&[1, 2, 2]);
        let z2 = Tensor::zeros(&[1, 2, 2]);
        let m = window_importance(&tape, &[&z1, &z2], &cfg).unwrap();
        assert_eq!(m.data(), &[1.0, 1.0]);
    }

    #[test]
    fn eaar_blend_examples() {
        let mut rng = Rng::new(7);
        let tape = Tape::new();
        let attn = rand_tensor(&mut rng, &[1, 3, 2]);
        let z = rand_tensor(&mut rng, &[1, 3, 2]);

        let full = eaar_blend(&tape, &attn, &z, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(full.data(), attn.data());

        // m = 0.5 with attention = 2z gives 1.5z
        let twice = tape.scale(&z, 2.0).unwrap();
        let mixed = eaar_blend(&tape, &twice, &z, &Tensor::scalar(0.5)).unwrap();
        for (got, want) in mixed.data().iter().zip(z.data()) {
            close(*got, want * 1.5, 1e-15, "1.5z");
        }

        // definitional identity at arbitrary m
        let m = 0.37;
        let blended = eaar_blend(&tape, &attn, &z, &Tensor::scalar(m)).unwrap();
        for ((b, a), zv) in blended.data().iter().zip(attn.data()).zip(z.data()) {
            close(*b, m * a + (1.0 - m) * zv, 1e-15, "convex combination");
        }
    }

    #[test]
    fn eg_msa_zero_weights_closed_form() {
        // all projections zero: scores are pure ERPE, attention output is
        // zero, so L = (1 - M)·z with M driven only by geometry. Horizontal
        // M peaks at the rows nearest the equator.
        let h = 4;
        let w = 6;
        let cfg = AttentionConfig::new(2, 3);
        let c = cfg.channels();
        let grid = build_grid(h, w).unwrap();
        let params = BlockParams::zeros(c);
        let mut rng = Rng::new(8);
        let z = rand_tensor(&mut rng, &[h, w, c]);

        let tape = Tape::new();
        let l = eg_msa(&tape, &z, Axis::Horizontal, &grid, &params, &cfg).unwrap();

        // expected M_i = clamp(sin(phi_i)/max sin(phi), 0.5)
        let peak = (0..h).map(|i| grid.phi(i).sin()).fold(f64::NEG_INFINITY, f64::max);
        for i in 0..h {
            let m_i = (grid.phi(i).sin() / peak).max(cfg.clamp_min);
            for u in 0..w {
                for ch in 0..c {
                    close(
                        l.at(&[i, u, ch]),
                        (1.0 - m_i) * z.at(&[i, u, ch]),
                        1e-12,
                        "zero-weight closed form",
                    );
                }
            }
        }
        // equator rows carry the largest importance
        let m_top = (grid.phi(0).sin() / peak).max(cfg.clamp_min);
        let m_mid = (grid.phi(h / 2).sin() / peak).max(cfg.clamp_min);
        assert!(m_mid > m_top, "importance should peak at the equator");
    }

    #[test]
    fn eg_msa_single_pixel_closed_form() {
        // degenerate 1x1 window: ERPE = 0, M = 1 (single window), and the
        // score is the lone q·k product, so das = 1 - cos(s/(|s|+eps)·π/2)
        // and L = das·v·Wo + bo exactly
        let cfg = AttentionConfig::new(1, 2);
        let c = 2;
        let grid = build_grid(1, 1).unwrap();
        let mut rng = Rng::new(9);
        let params = BlockParams::init(c, &mut rng);
        let z = rand_tensor(&mut rng, &[1, 1, c]);
        let tape = Tape::new();
        let l = eg_msa(&tape, &z, Axis::Horizontal, &grid, &params, &cfg).unwrap();

        let f = tape
            .layer_norm(&z, &params.ln1_gamma, &params.ln1_beta, LN_EPS)
            .unwrap();
        let proj = |w: &Tensor, b: &Tensor, ch: usize| -> f64 {
            (0..c).map(|ci| f.at(&[0, 0, ci]) * w.at(&[ci, ch])).sum::<f64>() + b.at(&[ch])
        };
        let s: f64 = (0..c)
            .map(|ch| proj(&params.wq, &params.bq, ch) * proj(&params.wk, &params.bk, ch))
            .sum();
        let das_v = 1.0 - (s / (s.abs() + cfg.eps_norm) * std::f64::consts::FRAC_PI_2).cos();
        for ch in 0..c {
            let want = (0..c)
                .map(|ci| das_v * proj(&params.wv, &params.bv, ci) * params.wo.at(&[ci, ch]))
                .sum::<f64>()
                + params.bo.at(&[ch]);
            close(l.at(&[0, 0, ch]), want, 1e-12, "degenerate window closed form");
        }
        // and the scalar oracle agrees
        let slow = crate::oracle::naive_eg_msa(&z, Axis::Horizontal, &grid, &params, &cfg).unwrap();
        for (a, b) in l.data().iter().zip(slow.data()) {
            close(*a, *b, 1e-12, "oracle agreement on 1x1");
        }
    }

    #[test]
    fn eg_msa_preserves_shape() {
        let mut rng = Rng::new(10);
        for (h, w, heads, d) in [(2, 5, 1, 4), (4, 3, 2, 2), (3, 3, 4, 1)] {
            let cfg = AttentionConfig::new(heads, d);
            let c = cfg.channels();
            let grid = build_grid(h, w).unwrap();
            let params = BlockParams::init(c, &mut rng);
            let z = rand_tensor(&mut rng, &[h, w, c]);
            for axis in [Axis::Horizontal, Axis::Vertical] {
                let tape = Tape::new();
                let l = eg_msa(&tape, &z, axis, &grid, &params, &cfg).unwrap();
                assert_eq!(l.shape(), z.shape());
            }
        }
    }

    #[test]
    fn eg_msa_rejects_channel_mismatch() {
        let cfg = AttentionConfig::new(2, 3);
        let grid = build_grid(2, 2).unwrap();
        let params = BlockParams::zeros(4); // wrong: config wants 6
        let z = Tensor::zeros(&[2, 2, 4]);
        let tape = Tape::new();
        assert!(matches!(
            eg_msa(&tape, &z, Axis::Horizontal, &grid, &params, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_weight_blocks_reduce_to_closed_forms() {
        // vertical: all windows share one bias matrix, so M = 1 everywhere
        // and the whole block collapses to the two residual identities
        let mut rng = Rng::new(11);
        let cfg = AttentionConfig::new(2, 2);
        let c = cfg.channels();
        let grid = build_grid(3, 5).unwrap();
        let z = rand_tensor(&mut rng, &[3, 5, c]);

        let vblock = EgBlock::zeros(BlockKind::Vertical, c);
        let tape = Tape::new();
        let out = block_forward(&tape, &z, &vblock, &grid, &cfg, AttentionVariant::Full).unwrap();
        for (o, i) in out.data().iter().zip(z.data()) {
            close(*o, *i, 1e-12, "vertical zero-weight block is identity");
        }

        // horizontal: L = (1-M)z, zhat = (2-M)z, MLP dead -> out = (2-M)z
        let hblock = EgBlock::zeros(BlockKind::Horizontal, c);
        let out = block_forward(&tape, &z, &hblock, &grid, &cfg, AttentionVariant::Full).unwrap();
        let peak = (0..3).map(|i| grid.phi(i).sin()).fold(f64::NEG_INFINITY, f64::max);
        for i in 0..3 {
            let m_i = (grid.phi(i).sin() / peak).max(cfg.clamp_min);
            for u in 0..5 {
                for ch in 0..c {
                    close(
                        out.at(&[i, u, ch]),
                        (2.0 - m_i) * z.at(&[i, u, ch]),
                        1e-12,
                        "horizontal zero-weight closed form",
                    );
                }
            }
        }
    }

    #[test]
    fn equirect_block_composes_vertical_then_horizontal() {
        let mut rng = Rng::new(12);
        let cfg = AttentionConfig::new(2, 2);
        let c = cfg.channels();
        let grid = build_grid(3, 4).unwrap();
        let z = rand_tensor(&mut rng, &[3, 4, c]);
        let e = EgBlock::init(BlockKind::Equirect, c, &mut rng);

        let tape = Tape::new();
        let out_e = block_forward(&tape, &z, &e, &grid, &cfg, AttentionVariant::Full).unwrap();

        let v = EgBlock { kind: BlockKind::Vertical, subs: vec![e.subs[0].clone()] };
        let hb = EgBlock { kind: BlockKind::Horizontal, subs: vec![e.subs[1].clone()] };
        let mid = block_forward(&tape, &z, &v, &grid, &cfg, AttentionVariant::Full).unwrap();
        let out_vh = block_forward(&tape, &mid, &hb, &grid, &cfg, AttentionVariant::Full).unwrap();

        for (a, b) in out_e.data().iter().zip(out_vh.data()) {
            assert_eq!(*a, *b, "E must equal V then H exactly");
        }
    }

    #[test]
    fn flop_formula_hand_case_and_symmetry() {
        assert_eq!(flop_formula(8, 8, 16, Axis::Horizontal), 81_920);
        assert_eq!(
            flop_formula(8, 8, 16, Axis::Horizontal),
            flop_formula(8, 8, 16, Axis::Vertical)
        );
        assert_ne!(
            flop_formula(4, 8, 16, Axis::Horizontal),
            flop_formula(4, 8, 16, Axis::Vertical)
        );
    }

    #[test]
    fn instrumented_macs_match_formula() {
        let mut rng = Rng::new(13);
        for (h, w, heads, d) in [(4, 6, 2, 4), (6, 4, 1, 8), (5, 5, 4, 2)] {
            let cfg = AttentionConfig::new(heads, d);
            let c = cfg.channels();
            let grid = build_grid(h, w).unwrap();
            let params = BlockParams::init(c, &mut rng);
            let z = rand_tensor(&mut rng, &[h, w, c]);
            for axis in [Axis::Horizontal, Axis::Vertical] {
                let tape = Tape::new();
                eg_msa(&tape, &z, axis, &grid, &params, &cfg).unwrap();
                assert_eq!(
                    tape.attention_macs(),
                    flop_formula(h, w, c, axis),
                    "{h}x{w} c={c} {axis:?}"
                );
            }
        }
    }

    #[test]
    fn variants_change_the_output() {
        let mut rng = Rng::new(14);
        let cfg = AttentionConfig::new(2, 2);
        let c = cfg.channels();
        let grid = build_grid(3, 4).unwrap();
        let params = BlockParams::init(c, &mut rng);
        let z = rand_tensor(&mut rng, &[3, 4, c]);
        let tape = Tape::new();
        let full =
            eg_msa_variant(&tape, &z, Axis::Horizontal, &grid, &params, &cfg, AttentionVariant::Full)
                .unwrap();
        for variant in [
            AttentionVariant::NoErpe,
            AttentionVariant::NoDas,
            AttentionVariant::NoEaar,
            AttentionVariant::Softmax,
        ] {
            let out =
                eg_msa_variant(&tape, &z, Axis::Horizontal, &grid, &params, &cfg, variant).unwrap();
            assert_eq!(out.shape(), full.shape());
            let diff = out
                .data()
                .iter()
                .zip(full.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff > 1e-9, "{variant:?} should differ from the full mechanism");
        }
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        // spot check on one small horizontal block; the full parameter sweep
        // lives in the acceptance suite
        let mut rng = Rng::new(15);
        let cfg = AttentionConfig::new(2, 2);
        let c = cfg.channels();
        let grid = build_grid(2, 3).unwrap();
        let params = BlockParams::init(c, &mut rng);
        let z = rand_tensor(&mut rng, &[2, 3, c]);
        let w = rand_tensor(&mut rng, &[2, 3, c]);

        let tape = Tape::new();
        let zv = tape.var(&z);
        let block = EgBlock { kind: BlockKind::Horizontal, subs: vec![params.clone()] };
        let out = block_forward(&tape, &zv, &block, &grid, &cfg, AttentionVariant::Full).unwrap();
        let loss = tape.sum_all(&tape.mul(&out, &w).unwrap()).unwrap();
        let analytic = tape.backward(&loss).unwrap().get_or_zeros(&zv);

        let mut f = |vals: &[f64]| {
            let tp = Tape::new();
            let zt = Tensor::from_vec(&[2, 3, c], vals.to_vec())?;
            let out = block_forward(&tp, &zt, &block, &grid, &cfg, AttentionVariant::Full)?;
            Ok(tp.sum_all(&tp.mul(&out, &w)?)?.data()[0])
        };
        let numeric = crate::oracle::fd_gradient(&mut f, z.data(), 1e-5).unwrap();
        for (a, n) in analytic.data().iter().zip(&numeric) {
            if a.abs() < 1e-8 {
                assert!((a - n).abs() < 1e-7, "block grad {a} vs fd {n}");
            } else {
                let rel = (a - n).abs() / a.abs().max(n.abs());
                assert!(rel < 1e-4, "block grad {a} vs fd {n} (rel {rel})");
            }
        }
    }
}
