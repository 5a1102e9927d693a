//! Equirectangular coordinate conventions: spherical points, the pixel
//! angle grid, and chord distances on the sphere.
//!
//! A pixel of a 360° panorama is addressed by spherical coordinates
//! (rho, theta, phi): theta is the azimuth mapped to image x, phi the polar
//! angle mapped to image y (row 0 sits near the north pole, phi ≈ 0). All
//! bias terms of the attention mechanism are built from straight-line chord
//! distances between such points, never from great-circle arcs.

use crate::error::{Error, Result};

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// A point in spherical coordinates, stored canonically:
/// theta in [0, 2π), phi in [0, π], rho ≥ 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalPoint {
    pub rho: f64,
    pub theta: f64,
    pub phi: f64,
}

impl SphericalPoint {
    /// Build a point, wrapping `theta` into [0, 2π).
    ///
    /// Panics if `phi` is outside [0, π] or `rho` is negative; those are
    /// programmer errors, not data errors.
    pub fn new(rho: f64, theta: f64, phi: f64) -> Self {
        assert!(rho >= 0.0, "rho must be nonnegative, got {rho}");
        assert!((0.0..=std::f64::consts::PI).contains(&phi), "phi must lie in [0, pi], got {phi}");
        let mut t = theta.rem_euclid(TAU);
        if t >= TAU {
            // rem_euclid can round up to the modulus for tiny negatives
            t = 0.0;
        }
        SphericalPoint { rho, theta: t, phi }
    }
}

/// Spherical → Cartesian:
/// (rho sinφ cosθ, rho sinφ sinθ, rho cosφ).
pub fn sph_to_cart(p: &SphericalPoint) -> [f64; 3] {
    let sp = p.phi.sin();
    [
        p.rho * sp * p.theta.cos(),
        p.rho * sp * p.theta.sin(),
        p.rho * p.phi.cos(),
    ]
}

/// Cartesian → spherical, inverse of [`sph_to_cart`] away from the poles.
pub fn cart_to_sph(c: [f64; 3]) -> SphericalPoint {
    let [x, y, z] = c;
    let rho = (x * x + y * y + z * z).sqrt();
    if rho == 0.0 {
        return SphericalPoint::new(0.0, 0.0, 0.0);
    }
    let theta = y.atan2(x).rem_euclid(TAU);
    let phi = (z / rho).clamp(-1.0, 1.0).acos();
    SphericalPoint::new(rho, theta, phi)
}

/// Straight-line (chord) distance between two spherical points, via the
/// Euclidean norm of their Cartesian difference.
pub fn chord_distance(a: &SphericalPoint, b: &SphericalPoint) -> f64 {
    let ca = sph_to_cart(a);
    let cb = sph_to_cart(b);
    let dx = ca[0] - cb[0];
    let dy = ca[1] - cb[1];
    let dz = ca[2] - cb[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Pixel-center angle assignment for an H×W equirectangular image:
/// theta[u] = (u + 0.5)·2π/W, phi[v] = (v + 0.5)·π/H.
///
/// The half-pixel offset keeps row angles away from the poles and column
/// angles away from the seam, so no pixel is geometrically degenerate.
#[derive(Debug, Clone)]
pub struct AngularGrid {
    height: usize,
    width: usize,
    theta: Vec<f64>,
    phi: Vec<f64>,
}

impl AngularGrid {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Azimuth of column `u`.
    pub fn theta(&self, u: usize) -> f64 {
        self.theta[u]
    }

    /// Polar angle of row `v`.
    pub fn phi(&self, v: usize) -> f64 {
        self.phi[v]
    }

    pub fn thetas(&self) -> &[f64] {
        &self.theta
    }

    pub fn phis(&self) -> &[f64] {
        &self.phi
    }

    /// Spherical point of pixel (u, v) on the unit sphere.
    pub fn point(&self, u: usize, v: usize) -> SphericalPoint {
        SphericalPoint::new(1.0, self.theta[u], self.phi[v])
    }
}

/// Build the pixel-center angle grid for an H×W image.
pub fn build_grid(height: usize, width: usize) -> Result<AngularGrid> {
    if height == 0 || width == 0 {
        return Err(Error::Argument(format!(
            "grid dimensions must be positive, got {height}x{width}"
        )));
    }
    let theta = (0..width).map(|u| (u as f64 + 0.5) * TAU / width as f64).collect();
    let phi = (0..height)
        .map(|v| (v as f64 + 0.5) * std::f64::consts::PI / height as f64)
        .collect();
    Ok(AngularGrid { height, width, theta, phi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use std::f64::consts::PI;

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (diff {})", (a - b).abs());
    }

    #[test]
    fn sph_to_cart_axis_cases() {
        let c = sph_to_cart(&SphericalPoint::new(1.0, 0.0, PI / 2.0));
        assert_close(c[0], 1.0, 1e-15, "x");
        assert_close(c[1], 0.0, 1e-15, "y");
        assert_close(c[2], 0.0, 1e-15, "z");

        let c = sph_to_cart(&SphericalPoint::new(1.0, PI / 2.0, PI / 2.0));
        assert_close(c[0], 0.0, 1e-15, "x");
        assert_close(c[1], 1.0, 1e-15, "y");
        assert_close(c[2], 0.0, 1e-15, "z");
    }

    #[test]
    fn sph_to_cart_pole() {
        // at phi = 0 the azimuth is irrelevant
        let c = sph_to_cart(&SphericalPoint::new(0.5, 1.2345, 0.0));
        assert_close(c[0], 0.0, 1e-15, "x");
        assert_close(c[1], 0.0, 1e-15, "y");
        assert_close(c[2], 0.5, 1e-15, "z");
    }

    #[test]
    fn theta_wraps_into_canonical_range() {
        let p = SphericalPoint::new(1.0, -PI / 2.0, PI / 2.0);
        assert_close(p.theta, 3.0 * PI / 2.0, 1e-12, "theta");
        let q = SphericalPoint::new(1.0, 5.0 * TAU + 0.25, PI / 3.0);
        assert_close(q.theta, 0.25, 1e-9, "theta");
        assert!(q.theta >= 0.0 && q.theta < TAU);
    }

    #[test]
    fn round_trip_1000_random_points() {
        let mut rng = Rng::new(20240408);
        for _ in 0..1000 {
            let p = SphericalPoint::new(
                rng.uniform(0.01, 10.0),
                rng.uniform(0.0, TAU),
                rng.uniform(0.01, PI - 0.01),
            );
            let q = cart_to_sph(sph_to_cart(&p));
            assert_close(p.rho, q.rho, 1e-10, "rho");
            assert_close(p.theta, q.theta, 1e-10, "theta");
            assert_close(p.phi, q.phi, 1e-10, "phi");
        }
    }

    #[test]
    fn chord_identity_cases() {
        let a = SphericalPoint::new(1.3, 0.7, 1.1);
        assert_eq!(chord_distance(&a, &a), 0.0);

        // antipodal on the unit equator: diameter
        let p = SphericalPoint::new(1.0, 0.0, PI / 2.0);
        let q = SphericalPoint::new(1.0, PI, PI / 2.0);
        assert_close(chord_distance(&p, &q), 2.0, 1e-12, "diameter");

        // quarter turn at rho = 0.1: 0.1·sqrt(2)
        let p = SphericalPoint::new(0.1, 0.0, PI / 2.0);
        let q = SphericalPoint::new(0.1, PI / 2.0, PI / 2.0);
        assert_close(chord_distance(&p, &q), 0.1 * 2.0f64.sqrt(), 1e-12, "quarter");
    }

    #[test]
    fn chord_matches_closed_form_at_fixed_phi() {
        // same rho, same phi: chord = rho·sqrt(2(1-cos dtheta))·sin(phi)
        let mut rng = Rng::new(5);
        for _ in 0..200 {
            let rho = rng.uniform(0.1, 4.0);
            let phi = rng.uniform(0.05, PI - 0.05);
            let ta = rng.uniform(0.0, TAU);
            let tb = rng.uniform(0.0, TAU);
            let a = SphericalPoint::new(rho, ta, phi);
            let b = SphericalPoint::new(rho, tb, phi);
            let closed = rho * (2.0 * (1.0 - (ta - tb).cos())).max(0.0).sqrt() * phi.sin();
            assert_close(chord_distance(&a, &b), closed, 1e-12, "closed form");
        }
    }

    #[test]
    fn chord_law_of_cosines() {
        let mut rng = Rng::new(99);
        for _ in 0..500 {
            let a = SphericalPoint::new(
                rng.uniform(0.1, 5.0),
                rng.uniform(0.0, TAU),
                rng.uniform(0.0, PI),
            );
            let b = SphericalPoint::new(
                rng.uniform(0.1, 5.0),
                rng.uniform(0.0, TAU),
                rng.uniform(0.0, PI),
            );
            let c = chord_distance(&a, &b);
            let cosang = a.phi.sin() * b.phi.sin() * (a.theta - b.theta).cos()
                + a.phi.cos() * b.phi.cos();
            let law = a.rho * a.rho + b.rho * b.rho - 2.0 * a.rho * b.rho * cosang;
            assert_close(c * c, law, 1e-10, "law of cosines");
        }
    }

    #[test]
    fn build_grid_examples() {
        let g = build_grid(2, 4).unwrap();
        let expect_theta = [PI / 4.0, 3.0 * PI / 4.0, 5.0 * PI / 4.0, 7.0 * PI / 4.0];
        for (u, e) in expect_theta.iter().enumerate() {
            assert_close(g.theta(u), *e, 1e-15, "theta");
        }
        assert_close(g.phi(0), PI / 4.0, 1e-15, "phi0");
        assert_close(g.phi(1), 3.0 * PI / 4.0, 1e-15, "phi1");

        let g = build_grid(1, 1).unwrap();
        assert_close(g.theta(0), PI, 1e-15, "theta single");
        assert_close(g.phi(0), PI / 2.0, 1e-15, "phi single");

        let g = build_grid(4, 8).unwrap();
        assert_close(g.phi(1), 3.0 * PI / 8.0, 1e-15, "phi[1] of 4x8");
    }

    #[test]
    fn build_grid_rejects_zero_extent() {
        assert!(matches!(build_grid(0, 4), Err(Error::Argument(_))));
        assert!(matches!(build_grid(4, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn grid_angles_strictly_increasing() {
        let g = build_grid(7, 13).unwrap();
        assert!(g.thetas().windows(2).all(|w| w[0] < w[1]));
        assert!(g.phis().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn grid_seam_is_cyclic() {
        // the chord between columns 0 and W-1 spans one column of azimuth,
        // exactly like any adjacent pair: the panorama edges are connected
        let g = build_grid(6, 16).unwrap();
        for v in 0..g.height() {
            let seam = chord_distance(&g.point(0, v), &g.point(g.width() - 1, v));
            let adjacent = chord_distance(&g.point(0, v), &g.point(1, v));
            assert_close(seam, adjacent, 1e-12, "seam vs adjacent");
        }
    }
}
