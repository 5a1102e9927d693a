//! Image-wise affine depth alignment and the standard depth error metrics.
//!
//! Predicted depth is only defined up to scale and shift here, so before
//! measuring errors each prediction is fitted to the ground truth with the
//! closed-form least squares (s, t) minimizing ‖s·D + t − G‖² over valid
//! pixels. Metrics follow the usual depth-estimation definitions; deltas use
//! the symmetric ratio max(d/g, g/d) < 1.25ⁿ.

use crate::error::{Error, Result};

/// Least-squares scale/shift fit of a prediction to ground truth.
#[derive(Debug, Clone, Copy)]
pub struct Alignment {
    pub s: f64,
    pub t: f64,
    /// Set when var(depth) was too small to fit a scale (s forced to 1).
    pub degenerate: bool,
}

/// Error and accuracy numbers for one aligned depth map.
#[derive(Debug, Clone, Copy)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rms_lin: f64,
    pub rms_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub valid_pixels: usize,
}

/// Valid-pixel rule shared by training and evaluation: positive ground
/// truth below 100 scene units.
pub fn valid_mask(gt: &[f64]) -> Vec<bool> {
    gt.iter().map(|&g| g > 0.0 && g < 100.0).collect()
}

/// Fit s, t minimizing Σ (s·d + t − g)² over masked pixels and return the
/// aligned map. Needs at least two valid pixels. When var(d) < 1e-12 the
/// scale is unidentifiable: s = 1, t = mean(g) − mean(d), flagged.
pub fn align(depth: &[f64], gt: &[f64], mask: &[bool]) -> Result<(Alignment, Vec<f64>)> {
    if depth.len() != gt.len() || depth.len() != mask.len() {
        return Err(Error::Argument(format!(
            "align length mismatch: depth {}, gt {}, mask {}",
            depth.len(),
            gt.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count < 2 {
        return Err(Error::Argument(format!("align needs >= 2 valid pixels, got {count}")));
    }
    let n = count as f64;
    let (mut sum_d, mut sum_g) = (0.0, 0.0);
    for i in 0..depth.len() {
        if mask[i] {
            sum_d += depth[i];
            sum_g += gt[i];
        }
    }
    let (mean_d, mean_g) = (sum_d / n, sum_g / n);
    let (mut cov, mut var) = (0.0, 0.0);
    for i in 0..depth.len() {
        if mask[i] {
            let dd = depth[i] - mean_d;
            cov += dd * (gt[i] - mean_g);
            var += dd * dd;
        }
    }
    cov /= n;
    var /= n;

    let alignment = if var < 1e-12 {
        Alignment { s: 1.0, t: mean_g - mean_d, degenerate: true }
    } else {
        let s = cov / var;
        Alignment { s, t: mean_g - s * mean_d, degenerate: false }
    };
    let aligned = depth.iter().map(|&d| alignment.s * d + alignment.t).collect();
    Ok((alignment, aligned))
}

/// Metrics of an aligned prediction against ground truth over the mask.
/// The prediction is clamped below at 1e-6 for the log and ratio terms.
pub fn compute(aligned: &[f64], gt: &[f64], mask: &[bool]) -> Result<DepthMetrics> {
    if aligned.len() != gt.len() || aligned.len() != mask.len() {
        return Err(Error::Argument(format!(
            "compute length mismatch: aligned {}, gt {}, mask {}",
            aligned.len(),
            gt.len(),
            mask.len()
        )));
    }
    let mut n = 0usize;
    let (mut abs_rel, mut sq_rel, mut sq_lin, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let (mut d1, mut d2, mut d3) = (0usize, 0usize, 0usize);
    for i in 0..aligned.len() {
        if !mask[i] {
            continue;
        }
        let g = gt[i];
        if g <= 0.0 {
            return Err(Error::Argument(format!(
                "ground truth must be positive on the mask, got {g} at {i}"
            )));
        }
        n += 1;
        let d = aligned[i];
        let diff = d - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        sq_lin += diff * diff;
        let dc = d.max(1e-6);
        let log_diff = dc.ln() - g.ln();
        sq_log += log_diff * log_diff;
        let ratio = (dc / g).max(g / dc);
        if ratio < 1.25 {
            d1 += 1;
        }
        if ratio < 1.25f64.powi(2) {
            d2 += 1;
        }
        if ratio < 1.25f64.powi(3) {
            d3 += 1;
        }
    }
    if n == 0 {
        return Err(Error::Argument("empty mask".into()));
    }
    let nf = n as f64;
    Ok(DepthMetrics {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rms_lin: (sq_lin / nf).sqrt(),
        rms_log: (sq_log / nf).sqrt(),
        delta1: d1 as f64 / nf,
        delta2: d2 as f64 / nf,
        delta3: d3 as f64 / nf,
        valid_pixels: n,
    })
}

/// Align then compute, the per-image evaluation protocol.
pub fn align_and_compute(depth: &[f64], gt: &[f64], mask: &[bool]) -> Result<(Alignment, DepthMetrics)> {
    let (alignment, aligned) = align(depth, gt, mask)?;
    let metrics = compute(&aligned, gt, mask)?;
    Ok((alignment, metrics))
}

/// CSV evaluation report: one row per image plus a `mean` aggregate row
/// (metrics are averaged over images after per-image alignment).
pub fn report_csv(rows: &[(String, Alignment, DepthMetrics)]) -> String {
    let mut out = String::from(
        "id,s,t,abs_rel,sq_rel,rms_lin,rms_log,delta1,delta2,delta3\n",
    );
    let mut agg = [0.0f64; 7];
    for (id, a, m) in rows {
        out.push_str(&format!(
            "{id},{},{},{},{},{},{},{},{},{}\n",
            a.s, a.t, m.abs_rel, m.sq_rel, m.rms_lin, m.rms_log, m.delta1, m.delta2, m.delta3
        ));
        for (acc, v) in agg.iter_mut().zip([
            m.abs_rel, m.sq_rel, m.rms_lin, m.rms_log, m.delta1, m.delta2, m.delta3,
        ]) {
            *acc += v;
        }
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        out.push_str(&format!(
            "mean,,,{},{},{},{},{},{},{}\n",
            agg[0] / n,
            agg[1] / n,
            agg[2] / n,
            agg[3] / n,
            agg[4] / n,
            agg[5] / n,
            agg[6] / n
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn close(a: f64, b: f64, tol: f64, what: &str) {
        assert!((a - b).abs() <= tol, "{what}: {a} vs {b}");
    }

    fn all(n: usize) -> Vec<bool> {
        vec![true; n]
    }

    #[test]
    fn align_identity() {
        let gt = vec![1.0, 2.0, 3.0, 4.0];
        let (a, aligned) = align(&gt, &gt, &all(4)).unwrap();
        close(a.s, 1.0, 1e-12, "s");
        close(a.t, 0.0, 1e-12, "t");
        assert!(!a.degenerate);
        assert_eq!(aligned, gt);
    }

    #[test]
    fn align_inverts_affine_map() {
        let gt = vec![1.0, 2.0, 5.0, 0.5];
        let depth: Vec<f64> = gt.iter().map(|g| 2.0 * g + 3.0).collect();
        let (a, aligned) = align(&depth, &gt, &all(4)).unwrap();
        close(a.s, 0.5, 1e-12, "s");
        close(a.t, -1.5, 1e-12, "t");
        for (x, g) in aligned.iter().zip(&gt) {
            close(*x, *g, 1e-12, "aligned");
        }
    }

    #[test]
    fn align_matches_normal_equations_oracle() {
        let mut rng = Rng::new(21);
        for _ in 0..50 {
            let n = 40;
            let depth: Vec<f64> = (0..n).map(|_| rng.uniform(0.1, 5.0)).collect();
            let gt: Vec<f64> = (0..n).map(|_| rng.uniform(0.1, 5.0)).collect();
            let (a, aligned) = align(&depth, &gt, &all(n)).unwrap();

            // dense 2x2 normal equations for [d 1][s t]' = g
            let nf = n as f64;
            let sdd: f64 = depth.iter().map(|d| d * d).sum();
            let sd: f64 = depth.iter().sum();
            let sdg: f64 = depth.iter().zip(&gt).map(|(d, g)| d * g).sum();
            let sg: f64 = gt.iter().sum();
            let det = sdd * nf - sd * sd;
            let s = (sdg * nf - sd * sg) / det;
            let t = (sdd * sg - sd * sdg) / det;
            close(a.s, s, 1e-10, "s vs normal equations");
            close(a.t, t, 1e-10, "t vs normal equations");

            // residual orthogonal to (d, 1)
            let r: Vec<f64> = aligned.iter().zip(&gt).map(|(x, g)| x - g).collect();
            let rd: f64 = r.iter().zip(&depth).map(|(r, d)| r * d).sum::<f64>() / nf;
            let r1: f64 = r.iter().sum::<f64>() / nf;
            close(rd, 0.0, 1e-9, "residual ⟂ depth");
            close(r1, 0.0, 1e-9, "residual ⟂ ones");
        }
    }

    #[test]
    fn align_flags_constant_depth() {
        let depth = vec![2.0; 5];
        let gt = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let (a, _) = align(&depth, &gt, &all(5)).unwrap();
        assert!(a.degenerate);
        close(a.s, 1.0, 1e-15, "s");
        close(a.t, 1.0, 1e-12, "t = mean(g) - mean(d)");
    }

    #[test]
    fn align_needs_two_pixels() {
        let mask = vec![true, false, false];
        assert!(align(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &mask).is_err());
    }

    #[test]
    fn metrics_perfect_prediction() {
        let gt = vec![1.0, 2.0, 3.0];
        let m = compute(&gt, &gt, &all(3)).unwrap();
        assert_eq!(m.abs_rel, 0.0);
        assert_eq!(m.sq_rel, 0.0);
        assert_eq!(m.rms_lin, 0.0);
        assert_eq!(m.rms_log, 0.0);
        assert_eq!(m.delta1, 1.0);
        assert_eq!(m.delta2, 1.0);
        assert_eq!(m.delta3, 1.0);
        assert_eq!(m.valid_pixels, 3);
    }

    #[test]
    fn metrics_uniform_overshoot_hand_case() {
        // d = 1.3·g: delta1 = 0 (1.3 > 1.25), delta2 = 1 (1.3 < 1.5625)
        let gt = vec![0.5, 1.0, 2.0, 4.0];
        let d: Vec<f64> = gt.iter().map(|g| 1.3 * g).collect();
        let m = compute(&d, &gt, &all(4)).unwrap();
        close(m.abs_rel, 0.3, 1e-12, "abs_rel");
        assert_eq!(m.delta1, 0.0);
        assert_eq!(m.delta2, 1.0);
        assert_eq!(m.delta3, 1.0);
    }

    #[test]
    fn metrics_match_scalar_loop_oracle() {
        let mut rng = Rng::new(22);
        let n = 64;
        let gt: Vec<f64> = (0..n).map(|_| rng.uniform(0.2, 8.0)).collect();
        let d: Vec<f64> = gt.iter().map(|g| g * rng.uniform(0.5, 2.0)).collect();
        let m = compute(&d, &gt, &all(n)).unwrap();

        let (mut ar, mut sr, mut sl, mut slog) = (0.0, 0.0, 0.0, 0.0);
        let (mut d1, mut d2, mut d3) = (0.0, 0.0, 0.0);
        for i in 0..n {
            ar += (d[i] - gt[i]).abs() / gt[i];
            sr += (d[i] - gt[i]).powi(2) / gt[i];
            sl += (d[i] - gt[i]).powi(2);
            slog += (d[i].ln() - gt[i].ln()).powi(2);
            let r = (d[i] / gt[i]).max(gt[i] / d[i]);
            if r < 1.25 {
                d1 += 1.0;
            }
            if r < 1.5625 {
                d2 += 1.0;
            }
            if r < 1.953125 {
                d3 += 1.0;
            }
        }
        let nf = n as f64;
        close(m.abs_rel, ar / nf, 1e-12, "abs_rel");
        close(m.sq_rel, sr / nf, 1e-12, "sq_rel");
        close(m.rms_lin, (sl / nf).sqrt(), 1e-12, "rms_lin");
        close(m.rms_log, (slog / nf).sqrt(), 1e-12, "rms_log");
        close(m.delta1, d1 / nf, 1e-12, "d1");
        close(m.delta2, d2 / nf, 1e-12, "d2");
        close(m.delta3, d3 / nf, 1e-12, "d3");
    }

    #[test]
    fn alignment_removes_affine_error_exactly() {
        let mut rng = Rng::new(23);
        let gt: Vec<f64> = (0..100).map(|_| rng.uniform(0.5, 6.0)).collect();
        let depth: Vec<f64> = gt.iter().map(|g| 0.65 * g + 1.7).collect();
        let (_, m) = align_and_compute(&depth, &gt, &all(100)).unwrap();
        assert!(m.abs_rel < 1e-9, "abs_rel {}", m.abs_rel);
        assert_eq!(m.delta1, 1.0);
    }

    #[test]
    fn metrics_permutation_invariant_and_deltas_monotone() {
        let mut rng = Rng::new(24);
        let n = 32;
        let gt: Vec<f64> = (0..n).map(|_| rng.uniform(0.2, 8.0)).collect();
        let d: Vec<f64> = gt.iter().map(|g| g * rng.uniform(0.6, 1.8)).collect();
        let m = compute(&d, &gt, &all(n)).unwrap();
        assert!(m.delta1 <= m.delta2 && m.delta2 <= m.delta3);

        let mut perm: Vec<usize> = (0..n).collect();
        // deterministic shuffle
        for i in (1..n).rev() {
            let j = rng.index(i + 1);
            perm.swap(i, j);
        }
        let dp: Vec<f64> = perm.iter().map(|&i| d[i]).collect();
        let gp: Vec<f64> = perm.iter().map(|&i| gt[i]).collect();
        let mp = compute(&dp, &gp, &all(n)).unwrap();
        close(m.abs_rel, mp.abs_rel, 1e-12, "permutation invariance");
        close(m.rms_log, mp.rms_log, 1e-12, "permutation invariance");
    }

    #[test]
    fn empty_mask_is_an_error() {
        let mask = vec![false; 3];
        assert!(compute(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &mask).is_err());
    }

    #[test]
    fn report_has_aggregate_row() {
        let a = Alignment { s: 1.0, t: 0.0, degenerate: false };
        let m = DepthMetrics {
            abs_rel: 0.1,
            sq_rel: 0.2,
            rms_lin: 0.3,
            rms_log: 0.4,
            delta1: 0.5,
            delta2: 0.6,
            delta3: 0.7,
            valid_pixels: 10,
        };
        let csv = report_csv(&[("0001".into(), a, m), ("0002".into(), a, m)]);
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("id,s,t,abs_rel"));
        assert!(lines[3].starts_with("mean,"));
        assert!(lines[3].contains("0.1"));
    }
}
