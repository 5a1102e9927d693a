//! Runtime invariant suites behind the `selfcheck` command.
//!
//! Each suite re-verifies one module's key properties on deterministic
//! inputs and reports the first violated assertion with its values. The
//! heavyweight audits (20-config oracle equivalence, full gradient sweeps,
//! toy training) live in the acceptance test suite; these are the fast
//! always-on checks.

use crate::attention::{
    build_erpe, das, eaar_blend, eg_msa, window_importance, AttentionConfig, Axis, BlockParams,
    ErpeBias,
};
use crate::geometry::{build_grid, cart_to_sph, chord_distance, sph_to_cart, AngularGrid, SphericalPoint};
use crate::metrics;
use crate::oracle::naive_eg_msa;
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    /// Empty when passed; otherwise the first failing assertion with values.
    pub detail: String,
}

pub const SUITES: &[&str] = &["geometry", "erpe", "das", "eaar", "oracle", "metrics", "flops"];

/// Run all suites, or only the named one. Unknown names are an error string.
pub fn run(filter: Option<&str>) -> Result<Vec<SuiteResult>, String> {
    if let Some(name) = filter {
        if !SUITES.contains(&name) {
            return Err(format!("unknown suite {name:?}; available: {}", SUITES.join(", ")));
        }
    }
    let mut results = Vec::new();
    for &name in SUITES {
        if filter.is_some_and(|f| f != name) {
            continue;
        }
        let outcome = match name {
            "geometry" => geometry_suite(),
            "erpe" => erpe_suite(),
            "das" => das_suite(),
            "eaar" => eaar_suite(),
            "oracle" => oracle_suite(),
            "metrics" => metrics_suite(),
            "flops" => flops_suite(),
            _ => unreachable!(),
        };
        results.push(match outcome {
            Ok(()) => SuiteResult { name, passed: true, detail: String::new() },
            Err(detail) => SuiteResult { name, passed: false, detail },
        });
    }
    Ok(results)
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn geometry_suite() -> Result<(), String> {
    use std::f64::consts::PI;
    let mut rng = Rng::new(0xE601);
    for i in 0..1000 {
        let p = SphericalPoint::new(
            rng.uniform(0.01, 10.0),
            rng.uniform(0.0, 2.0 * PI),
            rng.uniform(0.01, PI - 0.01),
        );
        let q = cart_to_sph(sph_to_cart(&p));
        for (a, b, what) in [(p.rho, q.rho, "rho"), (p.theta, q.theta, "theta"), (p.phi, q.phi, "phi")] {
            check((a - b).abs() < 1e-10, || {
                format!("round-trip {what} mismatch on sample {i}: {a} vs {b}")
            })?;
        }
    }
    for i in 0..500 {
        let a = SphericalPoint::new(rng.uniform(0.1, 5.0), rng.uniform(0.0, 2.0 * PI), rng.uniform(0.0, PI));
        let b = SphericalPoint::new(rng.uniform(0.1, 5.0), rng.uniform(0.0, 2.0 * PI), rng.uniform(0.0, PI));
        let c = chord_distance(&a, &b);
        let cosang =
            a.phi.sin() * b.phi.sin() * (a.theta - b.theta).cos() + a.phi.cos() * b.phi.cos();
        let law = a.rho * a.rho + b.rho * b.rho - 2.0 * a.rho * b.rho * cosang;
        check((c * c - law).abs() < 1e-10, || {
            format!("chord/cosine identity violated on sample {i}: {} vs {law}", c * c)
        })?;
    }
    let grid = build_grid(6, 16).map_err(|e| e.to_string())?;
    for v in 0..grid.height() {
        let seam = chord_distance(&grid.point(0, v), &grid.point(grid.width() - 1, v));
        let adjacent = chord_distance(&grid.point(0, v), &grid.point(1, v));
        check((seam - adjacent).abs() < 1e-12, || {
            format!("grid row {v} seam chord {seam} != adjacent chord {adjacent}")
        })?;
    }
    check(build_grid(0, 4).is_err(), || "build_grid(0, 4) should be rejected".into())
}

pub fn erpe_suite() -> Result<(), String> {
    let cfg = AttentionConfig::new(1, 1);
    let grid = build_grid(4, 360).map_err(|e| e.to_string())?;
    let bias = build_erpe(&grid, Axis::Horizontal, &cfg);
    erpe_suite_on(&grid, &cfg, &bias)?;
    // vertical: antisymmetry + zero diagonal on the shared matrix
    let vgrid = build_grid(24, 4).map_err(|e| e.to_string())?;
    let vbias = build_erpe(&vgrid, Axis::Vertical, &cfg);
    let mat = &vbias.matrices[0];
    let n = mat.shape()[0];
    for m in 0..n {
        check(mat.at(&[m, m]) == 0.0, || format!("vertical diagonal ({m},{m}) not zero"))?;
        for p in 0..n {
            check(mat.at(&[m, p]) == -mat.at(&[p, m]), || {
                format!(
                    "vertical antisymmetry broken at ({m},{p}): {} vs {}",
                    mat.at(&[m, p]),
                    mat.at(&[p, m])
                )
            })?;
        }
    }
    Ok(())
}

/// ERPE property battery over a caller-supplied bias — lets a test inject a
/// corrupted bias and watch the suite catch it.
pub fn erpe_suite_on(
    grid: &AngularGrid,
    _cfg: &AttentionConfig,
    bias: &ErpeBias,
) -> Result<(), String> {
    let w = grid.width();
    for (i, mat) in bias.matrices.iter().enumerate() {
        for m in 0..w {
            check(mat.at(&[m, m]) == 0.0, || {
                format!("row {i}: diagonal ({m},{m}) is {}, want exactly 0", mat.at(&[m, m]))
            })?;
            for n in (m + 1)..w {
                let a = mat.at(&[m, n]);
                let b = mat.at(&[n, m]);
                check(a == -b, || {
                    format!("row {i}: antisymmetry broken at ({m},{n}): {a} vs {b}")
                })?;
            }
        }
    }
    // sin(phi) separability
    let base_sin = grid.phi(0).sin();
    for (i, mat) in bias.matrices.iter().enumerate().skip(1) {
        let s = grid.phi(i).sin();
        for m in 0..w {
            for n in 0..w {
                let a = bias.matrices[0].at(&[m, n]) / base_sin;
                let b = mat.at(&[m, n]) / s;
                check((a - b).abs() < 1e-12, || {
                    format!("separability broken at row {i} entry ({m},{n}): {a} vs {b}")
                })?;
            }
        }
    }
    // circulant |E| and seam property
    let mat = &bias.matrices[0];
    for m in 0..w {
        for n in 0..w {
            let k = (m + w - n) % w;
            let a = mat.at(&[m, n]).abs();
            let b = mat.at(&[k, 0]).abs();
            check((a - b).abs() < 1e-12, || {
                format!("|E| not circulant at ({m},{n}): {a} vs {b}")
            })?;
        }
    }
    let seam = mat.at(&[0, w - 1]).abs();
    let adjacent = mat.at(&[0, 1]).abs();
    check((seam - adjacent).abs() < 1e-12, || {
        format!("seam |E| {seam} != adjacent |E| {adjacent} at W={w}")
    })
}

pub fn das_suite() -> Result<(), String> {
    let mut rng = Rng::new(0xDA5);
    let cfg = AttentionConfig::new(1, 1);
    let tape = Tape::new();
    for trial in 0..200 {
        let magnitude = 10f64.powf(rng.uniform(-6.0, 6.0));
        let s = Tensor::from_fn(&[5, 8, 8], |_| rng.uniform(-magnitude, magnitude));
        for axis in [Axis::Horizontal, Axis::Vertical] {
            let d = das(&tape, &s, axis, &cfg).map_err(|e| e.to_string())?;
            for (i, &v) in d.data().iter().enumerate() {
                check((0.0..=1.0).contains(&v), || {
                    format!("das out of [0,1] on trial {trial} ({axis:?}) at {i}: {v}")
                })?;
            }
            let dn = das(&tape, &tape.neg(&s).unwrap(), axis, &cfg).map_err(|e| e.to_string())?;
            for (i, (&a, &b)) in d.data().iter().zip(dn.data()).enumerate() {
                check((a - b).abs() < 1e-12, || {
                    format!("das(s) != das(-s) on trial {trial} at {i}: {a} vs {b}")
                })?;
            }
        }
    }
    let zero = Tensor::zeros(&[1, 3, 3]);
    let d = das(&tape, &zero, Axis::Vertical, &cfg).map_err(|e| e.to_string())?;
    check(d.data().iter().all(|&v| v == 0.0), || "das of all-zero scores must be zero".into())
}

pub fn eaar_suite() -> Result<(), String> {
    let mut rng = Rng::new(0xEAA2);
    let cfg = AttentionConfig::new(1, 1);
    let tape = Tape::new();
    for trial in 0..100 {
        let windows: Vec<Tensor> =
            (0..4).map(|_| Tensor::from_fn(&[1, 4, 4], |_| rng.uniform(-3.0, 3.0))).collect();
        let refs: Vec<&Tensor> = windows.iter().collect();
        let m = window_importance(&tape, &refs, &cfg).map_err(|e| e.to_string())?;
        let mut peak: f64 = 0.0;
        for (i, &v) in m.data().iter().enumerate() {
            check((cfg.clamp_min..=1.0).contains(&v), || {
                format!("trial {trial}: M[{i}] = {v} outside [{}, 1]", cfg.clamp_min)
            })?;
            peak = peak.max(v);
        }
        check(peak == 1.0, || format!("trial {trial}: max M = {peak}, want exactly 1"))?;
        let scaled: Vec<Tensor> = windows.iter().map(|t| tape.scale(t, 10.0).unwrap()).collect();
        let srefs: Vec<&Tensor> = scaled.iter().collect();
        let ms = window_importance(&tape, &srefs, &cfg).map_err(|e| e.to_string())?;
        for (i, (&a, &b)) in m.data().iter().zip(ms.data()).enumerate() {
            check((a - b).abs() < 1e-12, || {
                format!("trial {trial}: M[{i}] not scale invariant: {a} vs {b}")
            })?;
        }
    }
    let single = Tensor::from_fn(&[1, 3, 3], |i| i as f64);
    let m = window_importance(&tape, &[&single], &cfg).map_err(|e| e.to_string())?;
    check(m.data() == [1.0], || format!("single window importance {:?}, want [1]", m.data()))?;
    // blend exactness
    let attn = Tensor::from_fn(&[1, 5, 3], |_| rng.uniform(-2.0, 2.0));
    let z = Tensor::from_fn(&[1, 5, 3], |_| rng.uniform(-2.0, 2.0));
    let mi = 0.731;
    let l = eaar_blend(&tape, &attn, &z, &Tensor::scalar(mi)).map_err(|e| e.to_string())?;
    for i in 0..l.numel() {
        let want = mi * attn.data()[i] + (1.0 - mi) * z.data()[i];
        check((l.data()[i] - want).abs() <= 1e-15, || {
            format!("blend not exact at {i}: {} vs {want}", l.data()[i])
        })?;
    }
    Ok(())
}

pub fn oracle_suite() -> Result<(), String> {
    let mut rng = Rng::new(0x0AC1);
    for trial in 0..4 {
        let heads = [1, 2][trial % 2];
        let d = [2, 3][trial / 2 % 2];
        let cfg = AttentionConfig::new(heads, d);
        let c = cfg.channels();
        let h = 2 + rng.index(4);
        let w = 2 + rng.index(4);
        let grid = build_grid(h, w).map_err(|e| e.to_string())?;
        let mut prng = Rng::new(trial as u64 + 77);
        let params = BlockParams::init(c, &mut prng);
        let z = Tensor::from_fn(&[h, w, c], |_| rng.uniform(-1.0, 1.0));
        for axis in [Axis::Horizontal, Axis::Vertical] {
            let tape = Tape::new();
            let fast = eg_msa(&tape, &z, axis, &grid, &params, &cfg).map_err(|e| e.to_string())?;
            let slow = naive_eg_msa(&z, axis, &grid, &params, &cfg).map_err(|e| e.to_string())?;
            let mut max_diff = 0.0f64;
            for (a, b) in fast.data().iter().zip(slow.data()) {
                max_diff = max_diff.max((a - b).abs());
            }
            check(max_diff < 1e-10, || {
                format!("trial {trial} {axis:?} {h}x{w}xC{c}: oracle disagreement {max_diff}")
            })?;
        }
    }
    Ok(())
}

pub fn metrics_suite() -> Result<(), String> {
    let mut rng = Rng::new(0x3E71);
    let gt: Vec<f64> = (0..200).map(|_| rng.uniform(0.3, 8.0)).collect();
    let depth: Vec<f64> = gt.iter().map(|g| 0.7 * g + 1.1).collect();
    let mask = vec![true; gt.len()];
    let (a, m) = metrics::align_and_compute(&depth, &gt, &mask).map_err(|e| e.to_string())?;
    check(m.abs_rel < 1e-9, || {
        format!("alignment should cancel affine error, abs_rel = {}", m.abs_rel)
    })?;
    check((a.s - 1.0 / 0.7).abs() < 1e-9, || format!("recovered scale {} want {}", a.s, 1.0 / 0.7))?;

    let overshoot: Vec<f64> = gt.iter().map(|g| 1.3 * g).collect();
    let m = metrics::compute(&overshoot, &gt, &mask).map_err(|e| e.to_string())?;
    check(m.delta1 == 0.0, || format!("delta1 of 1.3x overshoot is {}, want 0", m.delta1))?;
    check(m.delta2 == 1.0, || format!("delta2 of 1.3x overshoot is {}, want 1", m.delta2))?;
    check((m.abs_rel - 0.3).abs() < 1e-12, || format!("abs_rel {} want 0.3", m.abs_rel))?;
    check(m.delta1 <= m.delta2 && m.delta2 <= m.delta3, || "delta monotonicity broken".into())
}

pub fn flops_suite() -> Result<(), String> {
    use crate::attention::flop_formula;
    let mut rng = Rng::new(0xF102);
    for (h, w, heads, d) in [(4usize, 6usize, 2usize, 4usize), (6, 4, 1, 8), (8, 8, 2, 8)] {
        let cfg = AttentionConfig::new(heads, d);
        let c = cfg.channels();
        let grid = build_grid(h, w).map_err(|e| e.to_string())?;
        let params = BlockParams::init(c, &mut rng);
        let z = Tensor::from_fn(&[h, w, c], |_| rng.uniform(-1.0, 1.0));
        for axis in [Axis::Horizontal, Axis::Vertical] {
            let tape = Tape::new();
            eg_msa(&tape, &z, axis, &grid, &params, &cfg).map_err(|e| e.to_string())?;
            let counted = tape.attention_macs();
            let formula = flop_formula(h, w, c, axis);
            check(counted == formula, || {
                format!("{h}x{w} C={c} {axis:?}: instrumented {counted} != formula {formula}")
            })?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_on_a_fresh_build() {
        let results = run(None).unwrap();
        assert_eq!(results.len(), SUITES.len());
        for r in &results {
            assert!(r.passed, "suite {} failed: {}", r.name, r.detail);
        }
    }

    #[test]
    fn filter_selects_one_suite() {
        let results = run(Some("das")).unwrap();
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].name, "das");
        assert!(run(Some("nonsense")).is_err());
    }

    #[test]
    fn injected_sign_flip_is_caught() {
        let cfg = AttentionConfig::new(1, 1);
        let grid = build_grid(3, 8).unwrap();
        let good = build_erpe(&grid, Axis::Horizontal, &cfg);
        assert!(erpe_suite_on(&grid, &cfg, &good).is_ok());

        let mut corrupted = good.clone();
        let mut data = corrupted.matrices[1].data().to_vec();
        data[3] = -data[3]; // flip one off-diagonal sign
        corrupted.matrices[1] = Tensor::from_vec(&[8, 8], data).unwrap();
        let err = erpe_suite_on(&grid, &cfg, &corrupted).unwrap_err();
        assert!(err.contains("antisymmetry") || err.contains("separability"), "{err}");
    }
}
