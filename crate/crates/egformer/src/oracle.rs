//! Independent references the production attention path is checked against.
//!
//! [`naive_eg_msa`] re-derives the whole mechanism as explicit scalar loops,
//! sharing nothing with the vectorized pipeline except the geometry module
//! (the ERPE magnitudes here come from actual chord distances between
//! spherical points, not from the closed form). A bug has to be made twice,
//! in two very different shapes, to slip through the equivalence tests.
//!
//! This module also owns everything softmax: the differentiable
//! [`row_softmax`] custom op and the [`softmax_baseline_msa`] comparator
//! used by the ablation harness. The production mechanism never touches it.

use crate::attention::{Axis, AttentionConfig, BlockParams, LN_EPS};
use crate::error::{Error, Result};
use crate::geometry::{chord_distance, AngularGrid, SphericalPoint};
use crate::tensor::{Tape, Tensor};

/// Scalar-loop re-implementation of the full EH/EV-MSA contract
/// (ERPE + DAS + EaAR). Values only; no tape, no gradients.
pub fn naive_eg_msa(
    z: &Tensor,
    axis: Axis,
    grid: &AngularGrid,
    params: &BlockParams,
    cfg: &AttentionConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    if z.rank() != 3 {
        return Err(Error::Config(format!("expected [H, W, C], got {:?}", z.shape())));
    }
    let (h, w, c) = (z.shape()[0], z.shape()[1], z.shape()[2]);
    if c != cfg.channels() || c != params.channels() {
        return Err(Error::Config(format!(
            "channel mismatch: tensor {c}, config {}, params {}",
            cfg.channels(),
            params.channels()
        )));
    }
    if h != grid.height() || w != grid.width() {
        return Err(Error::Config(format!(
            "tensor {:?} does not match grid {}x{}",
            z.shape(),
            grid.height(),
            grid.width()
        )));
    }
    let (heads, d) = (cfg.heads, cfg.head_dim);
    let (nw, n) = match axis {
        Axis::Horizontal => (h, w),
        Axis::Vertical => (w, h),
    };

    // flat accessor into z for window i, position p, channel ch
    let zat = |i: usize, p: usize, ch: usize| -> f64 {
        let (row, col) = match axis {
            Axis::Horizontal => (i, p),
            Axis::Vertical => (p, i),
        };
        z.data()[(row * w + col) * c + ch]
    };

    // ERPE entry via the spherical chord route
    let erpe = |i: usize, m: usize, p: usize| -> f64 {
        match axis {
            Axis::Horizontal => {
                let phi = grid.phi(i);
                let a = SphericalPoint::new(1.0, grid.theta(m), phi);
                let b = SphericalPoint::new(1.0, grid.theta(p), phi);
                signum0(grid.theta(m) - grid.theta(p)) * cfg.rho * chord_distance(&a, &b)
            }
            Axis::Vertical => {
                let theta = grid.theta(i);
                let a = SphericalPoint::new(1.0, theta, grid.phi(m));
                let b = SphericalPoint::new(1.0, theta, grid.phi(p));
                signum0(grid.phi(m) - grid.phi(p)) * cfg.rho * chord_distance(&a, &b)
            }
        }
    };

    let mut outs: Vec<Vec<f64>> = Vec::with_capacity(nw); // per window [n*c]
    let mut means: Vec<f64> = Vec::with_capacity(nw);

    for i in 0..nw {
        // layer norm per position
        let mut f = vec![0.0; n * c];
        for p in 0..n {
            let mut mean = 0.0;
            for ch in 0..c {
                mean += zat(i, p, ch);
            }
            mean /= c as f64;
            let mut var = 0.0;
            for ch in 0..c {
                let dv = zat(i, p, ch) - mean;
                var += dv * dv;
            }
            var /= c as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for ch in 0..c {
                f[p * c + ch] = params.ln1_gamma.data()[ch] * (zat(i, p, ch) - mean) * inv
                    + params.ln1_beta.data()[ch];
            }
        }

        // projections
        let project = |wm: &Tensor, bm: &Tensor| -> Vec<f64> {
            let mut y = vec![0.0; n * c];
            for p in 0..n {
                for co in 0..c {
                    let mut acc = bm.data()[co];
                    for ci in 0..c {
                        acc += f[p * c + ci] * wm.data()[ci * c + co];
                    }
                    y[p * c + co] = acc;
                }
            }
            y
        };
        let q = project(&params.wq, &params.bq);
        let k = project(&params.wk, &params.bk);
        let v = project(&params.wv, &params.bv);

        // biased scores per head
        let mut score = vec![0.0; heads * n * n];
        for j in 0..heads {
            for m in 0..n {
                for p in 0..n {
                    let mut acc = 0.0;
                    for dd in 0..d {
                        acc += q[m * c + j * d + dd] * k[p * c + j * d + dd];
                    }
                    score[(j * n + m) * n + p] = acc + erpe(i, m, p);
                }
            }
        }

        means.push(score.iter().map(|s| s.abs()).sum::<f64>() / (heads * n * n) as f64);

        // DAS + attention
        let factor = 2.0
            * cfg.rho_b
            * cfg.rho_b
            * if axis == Axis::Horizontal { cfg.phi_b.sin().powi(2) } else { 1.0 };
        let mut attn = vec![0.0; n * c];
        for j in 0..heads {
            for m in 0..n {
                let row = &score[(j * n + m) * n..][..n];
                let denom: f64 = row.iter().map(|s| s.abs()).sum::<f64>() + cfg.eps_norm;
                for (p, &s) in row.iter().enumerate() {
                    let das =
                        factor * (1.0 - (s / denom * std::f64::consts::FRAC_PI_2).cos());
                    for dd in 0..d {
                        attn[m * c + j * d + dd] += das * v[p * c + j * d + dd];
                    }
                }
            }
        }

        // output projection
        let mut out = vec![0.0; n * c];
        for p in 0..n {
            for co in 0..c {
                let mut acc = params.bo.data()[co];
                for ci in 0..c {
                    acc += attn[p * c + ci] * params.wo.data()[ci * c + co];
                }
                out[p * c + co] = acc;
            }
        }
        outs.push(out);
    }

    // importance + blend
    let peak = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut result = vec![0.0; h * w * c];
    for i in 0..nw {
        let m_i = if peak == 0.0 { 1.0 } else { (means[i] / peak).max(cfg.clamp_min) };
        for p in 0..n {
            let (row, col) = match axis {
                Axis::Horizontal => (i, p),
                Axis::Vertical => (p, i),
            };
            for ch in 0..c {
                result[(row * w + col) * c + ch] =
                    m_i * outs[i][p * c + ch] + (1.0 - m_i) * zat(i, p, ch);
            }
        }
    }
    Tensor::from_vec(&[h, w, c], result)
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Central-difference gradient of a scalar function: (f(x+h·e) − f(x−h·e)) / 2h.
pub fn fd_gradient(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe)?;
        probe[i] = orig - h;
        let fm = f(&probe)?;
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite differences hit a non-finite value at coordinate {i}: {fp} / {fm}"
            )));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Numerically stable softmax along the last axis, differentiable.
pub fn row_softmax(tape: &Tape, t: &Tensor) -> Result<Tensor> {
    let n = *t
        .shape()
        .last()
        .ok_or_else(|| Error::Argument("softmax on 0-rank tensor".into()))?;
    let rows = t.numel() / n;
    let mut y = vec![0.0; t.numel()];
    for r in 0..rows {
        let xin = &t.data()[r * n..][..n];
        let peak = xin.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut mass = 0.0;
        for (o, &xv) in y[r * n..][..n].iter_mut().zip(xin) {
            *o = (xv - peak).exp();
            mass += *o;
        }
        for o in &mut y[r * n..][..n] {
            *o /= mass;
        }
    }
    let out = Tensor::from_vec(t.shape(), y)?;
    let saved = out.clone();
    Ok(tape.record_custom_unary(t, out, move |g| {
        let mut dx = vec![0.0; saved.numel()];
        for r in 0..rows {
            let yv = &saved.data()[r * n..][..n];
            let gv = &g.data()[r * n..][..n];
            let dot: f64 = yv.iter().zip(gv).map(|(&a, &b)| a * b).sum();
            for ((o, &yi), &gi) in dx[r * n..][..n].iter_mut().zip(yv).zip(gv) {
                *o = yi * (gi - dot);
            }
        }
        Tensor::from_vec(saved.shape(), dx).unwrap()
    }))
}

/// Plain softmax window attention over the same stripe windows: score =
/// QKᵀ/√d_j, row softmax, ×V, output projection. No ERPE, no DAS, no EaAR.
/// The ablation harness trains this as its baseline; its positional term is
/// deliberately absent.
pub fn softmax_baseline_msa(
    tape: &Tape,
    z: &Tensor,
    axis: Axis,
    params: &BlockParams,
    cfg: &AttentionConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    if z.rank() != 3 {
        return Err(Error::Config(format!("expected [H, W, C], got {:?}", z.shape())));
    }
    let c = z.shape()[2];
    if c != cfg.channels() || c != params.channels() {
        return Err(Error::Config(format!(
            "channel mismatch: tensor {c}, config {}, params {}",
            cfg.channels(),
            params.channels()
        )));
    }
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

    let to_heads = |t: &Tensor| -> Result<Tensor> {
        let t4 = tape.reshape(t, &[nw, n, heads, d])?;
        let t4 = tape.permute(&t4, &[0, 2, 1, 3])?;
        tape.reshape(&t4, &[nw * heads, n, d])
    };
    let qh = to_heads(&q)?;
    let vh = to_heads(&v)?;
    let k4 = tape.reshape(&k, &[nw, n, heads, d])?;
    let kt = tape.permute(&k4, &[0, 2, 3, 1])?;
    let kt = tape.reshape(&kt, &[nw * heads, d, n])?;

    let score = tape.matmul(&qh, &kt)?;
    let score = tape.scale(&score, 1.0 / (d as f64).sqrt())?;
    let weights = row_softmax(tape, &score)?;

    let attn = tape.matmul(&weights, &vh)?;
    let attn = tape.reshape(&attn, &[nw, heads, n, d])?;
    let attn = tape.permute(&attn, &[0, 2, 1, 3])?;
    let attn = tape.reshape(&attn, &[nw, n, c])?;
    let out = tape.linear(&attn, &params.wo, &params.bo)?;

    tape.add_attention_macs(tape.macs() - macs_before);

    match axis {
        Axis::Horizontal => Ok(out),
        Axis::Vertical => tape.permute(&out, &[1, 0, 2]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;
    use crate::rng::Rng;

    #[test]
    fn fd_gradient_sum_of_squares() {
        let mut f = |x: &[f64]| Ok(x.iter().map(|v| v * v).sum());
        let g = fd_gradient(&mut f, &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8, "{g:?}");
        assert!((g[1] - 4.0).abs() < 1e-8, "{g:?}");
    }

    #[test]
    fn fd_gradient_sin_at_zero() {
        let mut f = |x: &[f64]| Ok(x[0].sin());
        let g = fd_gradient(&mut f, &[0.0], 1e-5).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-10, "{g:?}");
    }

    #[test]
    fn fd_gradient_is_second_order() {
        // halving h should roughly quarter the truncation error
        let cases: Vec<(fn(f64) -> f64, fn(f64) -> f64, f64)> = vec![
            (|x| x.sin(), |x| x.cos(), 0.9),
            (|x| x * x * x, |x| 3.0 * x * x, 1.3),
            (|x| (2.0 * x).cos(), |x| -2.0 * (2.0 * x).sin(), 0.7),
        ];
        for (f, df, x0) in cases {
            let err = |h: f64| {
                let mut fx = |x: &[f64]| Ok(f(x[0]));
                (fd_gradient(&mut fx, &[x0], h).unwrap()[0] - df(x0)).abs()
            };
            let e1 = err(1e-3);
            let e2 = err(5e-4);
            let ratio = e1 / e2;
            assert!(
                (2.5..6.0).contains(&ratio),
                "expected ~4x error reduction, got {ratio} ({e1} -> {e2})"
            );
        }
    }

    #[test]
    fn fd_gradient_rejects_non_finite() {
        let mut f = |x: &[f64]| Ok(1.0 / x[0]);
        // fine away from the pole
        assert!(fd_gradient(&mut f, &[1.0], 1e-5).is_ok());
        let mut g = |_: &[f64]| Ok(f64::NAN);
        assert!(fd_gradient(&mut g, &[1.0], 1e-5).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::new(31);
        let tape = Tape::new();
        let t = Tensor::from_fn(&[4, 6], |_| rng.uniform(-30.0, 30.0));
        let y = row_softmax(&tape, &t).unwrap();
        for r in 0..4 {
            let s: f64 = (0..6).map(|c| y.at(&[r, c])).sum();
            assert!((s - 1.0).abs() < 1e-12, "row {r} sums to {s}");
        }
    }

    #[test]
    fn softmax_uniform_rows_give_uniform_weights() {
        let tape = Tape::new();
        let t = Tensor::full(&[2, 5], 3.7);
        let y = row_softmax(&tape, &t).unwrap();
        for &v in y.data() {
            assert!((v - 0.2).abs() < 1e-15, "{v}");
        }
    }

    #[test]
    fn softmax_gradient_matches_fd() {
        let mut rng = Rng::new(32);
        let x = Tensor::from_fn(&[3, 4], |_| rng.uniform(-2.0, 2.0));
        let w = Tensor::from_fn(&[3, 4], |_| rng.uniform(-1.0, 1.0));
        let tape = Tape::new();
        let xv = tape.var(&x);
        let y = row_softmax(&tape, &xv).unwrap();
        let loss = tape.sum_all(&tape.mul(&y, &w).unwrap()).unwrap();
        let analytic = tape.backward(&loss).unwrap().get_or_zeros(&xv);

        let mut f = |vals: &[f64]| {
            let tp = Tape::new();
            let xt = Tensor::from_vec(&[3, 4], vals.to_vec())?;
            let y = row_softmax(&tp, &xt)?;
            Ok(tp.sum_all(&tp.mul(&y, &w)?)?.data()[0])
        };
        let numeric = fd_gradient(&mut f, x.data(), 1e-6).unwrap();
        for (a, n) in analytic.data().iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-8, "softmax grad {a} vs fd {n}");
        }
    }

    #[test]
    fn baseline_msa_same_shape_as_input() {
        let mut rng = Rng::new(33);
        let cfg = AttentionConfig::new(2, 3);
        let params = BlockParams::init(6, &mut rng);
        let z = Tensor::from_fn(&[4, 5, 6], |_| rng.uniform(-1.0, 1.0));
        let tape = Tape::new();
        for axis in [Axis::Horizontal, Axis::Vertical] {
            let out = softmax_baseline_msa(&tape, &z, axis, &params, &cfg).unwrap();
            assert_eq!(out.shape(), z.shape());
        }
    }

    #[test]
    fn baseline_msa_uniform_qk_averages_values() {
        // zero Q/K weights make every score row uniform, so the attention
        // output (before the output projection) is the mean of the V rows
        let cfg = AttentionConfig::new(1, 2);
        let c = 2;
        let mut params = BlockParams::zeros(c);
        params.ln1_gamma = Tensor::ones(&[c]);
        // V = identity · LN(z); identity output projection
        let mut eye = vec![0.0; c * c];
        for i in 0..c {
            eye[i * c + i] = 1.0;
        }
        params.wv = Tensor::from_vec(&[c, c], eye.clone()).unwrap();
        params.wo = Tensor::from_vec(&[c, c], eye).unwrap();

        let z = Tensor::from_vec(
            &[1, 3, 2],
            vec![1.0, -1.0, 2.0, 0.0, -3.0, 1.0],
        )
        .unwrap();
        let tape = Tape::new();
        let out = softmax_baseline_msa(&tape, &z, Axis::Horizontal, &params, &cfg).unwrap();
        // expected: every row equals the mean of LN(z) rows
        let ln = tape
            .layer_norm(&z, &params.ln1_gamma, &params.ln1_beta, LN_EPS)
            .unwrap();
        for ch in 0..c {
            let mean: f64 = (0..3).map(|p| ln.at(&[0, p, ch])).sum::<f64>() / 3.0;
            for p in 0..3 {
                assert!(
                    (out.at(&[0, p, ch]) - mean).abs() < 1e-12,
                    "uniform attention should average values"
                );
            }
        }
    }

    #[test]
    fn naive_matches_vectorized_on_a_small_case() {
        let mut rng = Rng::new(34);
        let cfg = AttentionConfig::new(2, 2);
        let c = cfg.channels();
        let grid = build_grid(3, 4).unwrap();
        let params = BlockParams::init(c, &mut rng);
        let z = Tensor::from_fn(&[3, 4, c], |_| rng.uniform(-1.0, 1.0));
        for axis in [Axis::Horizontal, Axis::Vertical] {
            let tape = Tape::new();
            let fast = crate::attention::eg_msa(&tape, &z, axis, &grid, &params, &cfg).unwrap();
            let slow = naive_eg_msa(&z, axis, &grid, &params, &cfg).unwrap();
            let max_diff = fast
                .data()
                .iter()
                .zip(slow.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_diff < 1e-12, "axis {axis:?}: max diff {max_diff}");
        }
    }
}
