//! Synthetic equirectangular scenes with analytic ground-truth depth.
//!
//! A scene is a closed axis-aligned room observed from the origin, with a
//! few spheres and boxes floating inside. Every pixel ray (from the angle
//! grid) is intersected analytically, so depth is exact and the renders
//! exercise real equirectangular distortion: straight walls bow into curves,
//! and the image seam is geometrically continuous.

pub mod imgio;

use crate::error::{Error, Result};
use crate::fsio::atomic_write;
use crate::geometry::{build_grid, sph_to_cart, AngularGrid};
use crate::rng::Rng;
use crate::tensor::Tensor;
use std::path::Path;

const AMBIENT: f64 = 0.1;
/// Objects must keep their surface at least this far from the camera.
const MIN_CLEARANCE: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
    pub albedo: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Box3 {
    pub half: [f64; 3],
    pub center: [f64; 3],
    pub albedo: [f64; 3],
}

/// A full scene description, camera at the origin.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub seed: u64,
    /// Half extents of the room box that closes every ray.
    pub room_half: [f64; 3],
    pub room_albedo: [f64; 3],
    /// Brightness factor per wall face (-x, +x, -y, +y, -z, +z), so the
    /// six walls are visually distinguishable like differently papered
    /// walls, floor and ceiling.
    pub room_face_tint: [f64; 6],
    pub spheres: Vec<Sphere>,
    pub boxes: Vec<Box3>,
    /// Unit direction pointing toward the light.
    pub light: [f64; 3],
}

impl SceneSpec {
    /// Deterministic random scene with 1–4 objects.
    pub fn random(seed: u64) -> SceneSpec {
        let mut rng = Rng::new(seed);
        // rooms share their proportions (like floors of one building) and
        // vary in overall size; per-image alignment absorbs scale, so the
        // shared shape is what a depth network can latch onto while objects
        // and appearance still change every scene
        let scale = rng.uniform(0.85, 1.15);
        let room_half = [2.25 * scale, 2.25 * scale, 1.55 * scale];
        let room_albedo = [
            rng.uniform(0.35, 0.9),
            rng.uniform(0.35, 0.9),
            rng.uniform(0.35, 0.9),
        ];
        // indoor prior: the light always comes from above, so shading is a
        // consistent depth cue across scenes
        let light = {
            let z = rng.uniform(0.4, 0.9);
            let azimuth = rng.uniform(0.0, 2.0 * std::f64::consts::PI);
            let r = (1.0 - z * z).sqrt();
            [r * azimuth.cos(), r * azimuth.sin(), z]
        };
        let room_face_tint = [
            rng.uniform(0.45, 1.0),
            rng.uniform(0.45, 1.0),
            rng.uniform(0.45, 1.0),
            rng.uniform(0.45, 1.0),
            rng.uniform(0.45, 1.0),
            rng.uniform(0.45, 1.0),
        ];
        let n_objects = 1 + rng.index(4);
        let mut spheres = Vec::new();
        let mut boxes = Vec::new();
        for _ in 0..n_objects {
            let albedo = [
                rng.uniform(0.2, 1.0),
                rng.uniform(0.2, 1.0),
                rng.uniform(0.2, 1.0),
            ];
            if rng.next_f64() < 0.5 {
                if let Some(s) = place_sphere(&mut rng, &room_half, albedo) {
                    spheres.push(s);
                }
            } else if let Some(b) = place_box(&mut rng, &room_half, albedo) {
                boxes.push(b);
            }
        }
        if spheres.is_empty() && boxes.is_empty() {
            // placement can fail in a cramped room; a sphere opposite the
            // seam always fits
            spheres.push(Sphere {
                center: [room_half[0] * 0.5, 0.0, 0.0],
                radius: 0.2,
                albedo: [0.8, 0.3, 0.3],
            });
        }
        let spec =
            SceneSpec { seed, room_half, room_albedo, room_face_tint, spheres, boxes, light };
        spec.validate().expect("randomly placed scene must satisfy its own invariants");
        spec
    }

    /// Check the placement invariants: positive room, camera clearance.
    pub fn validate(&self) -> Result<()> {
        if self.room_half.iter().any(|&h| h <= 0.0) {
            return Err(Error::Config(format!("room half extents must be positive: {:?}", self.room_half)));
        }
        for s in &self.spheres {
            let dist = norm(&s.center) - s.radius;
            if dist < MIN_CLEARANCE && !(s.center == [0.0; 3] && s.radius >= MIN_CLEARANCE) {
                return Err(Error::Config(format!(
                    "sphere surface too close to the camera: {dist} < {MIN_CLEARANCE}"
                )));
            }
        }
        for b in &self.boxes {
            let mut d2 = 0.0;
            for a in 0..3 {
                let outside = (b.center[a].abs() - b.half[a]).max(0.0);
                d2 += outside * outside;
            }
            if d2.sqrt() < MIN_CLEARANCE {
                return Err(Error::Config(format!(
                    "box surface too close to the camera: {} < {MIN_CLEARANCE}",
                    d2.sqrt()
                )));
            }
        }
        let l = norm(&self.light);
        if (l - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("light direction must be unit length, got {l}")));
        }
        Ok(())
    }

    /// Largest possible depth: the room's full diagonal.
    pub fn diagonal(&self) -> f64 {
        2.0 * norm(&self.room_half)
    }
}

fn place_sphere(rng: &mut Rng, room: &[f64; 3], albedo: [f64; 3]) -> Option<Sphere> {
    for _ in 0..64 {
        let radius = rng.uniform(0.18, 0.32);
        let center = [
            rng.uniform(-room[0] + radius + 0.05, room[0] - radius - 0.05),
            rng.uniform(-room[1] + radius + 0.05, room[1] - radius - 0.05),
            rng.uniform(-room[2] + radius + 0.05, room[2] - radius - 0.05),
        ];
        if norm(&center) - radius >= MIN_CLEARANCE {
            return Some(Sphere { center, radius, albedo });
        }
    }
    None
}

fn place_box(rng: &mut Rng, room: &[f64; 3], albedo: [f64; 3]) -> Option<Box3> {
    for _ in 0..64 {
        let half = [
            rng.uniform(0.12, 0.3),
            rng.uniform(0.12, 0.3),
            rng.uniform(0.12, 0.3),
        ];
        let center = [
            rng.uniform(-room[0] + half[0] + 0.05, room[0] - half[0] - 0.05),
            rng.uniform(-room[1] + half[1] + 0.05, room[1] - half[1] - 0.05),
            rng.uniform(-room[2] + half[2] + 0.05, room[2] - half[2] - 0.05),
        ];
        let mut d2 = 0.0;
        for a in 0..3 {
            let outside = (center[a].abs() - half[a]).max(0.0);
            d2 += outside * outside;
        }
        if d2.sqrt() >= MIN_CLEARANCE {
            return Some(Box3 { half, center, albedo });
        }
    }
    None
}


fn norm(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Unit view ray of pixel (u, v): the grid angles pushed through the
/// spherical→Cartesian conversion at rho = 1.
pub fn ray_for_pixel(grid: &AngularGrid, u: usize, v: usize) -> Result<[f64; 3]> {
    if u >= grid.width() || v >= grid.height() {
        return Err(Error::Argument(format!(
            "pixel ({u}, {v}) outside {}x{} grid",
            grid.height(),
            grid.width()
        )));
    }
    Ok(sph_to_cart(&grid.point(u, v)))
}

struct Hit {
    t: f64,
    normal: [f64; 3],
    albedo: [f64; 3],
}

/// Distance from the origin to the room walls along `d`, with the inward
/// wall normal and the face index (-x, +x, -y, +y, -z, +z). The room closes
/// every ray.
fn room_exit(d: &[f64; 3], half: &[f64; 3]) -> (f64, [f64; 3], usize) {
    let mut t = f64::INFINITY;
    let mut axis = 0;
    for a in 0..3 {
        if d[a] != 0.0 {
            let ta = half[a] / d[a].abs();
            if ta < t {
                t = ta;
                axis = a;
            }
        }
    }
    let mut normal = [0.0; 3];
    normal[axis] = -d[axis].signum();
    let face = axis * 2 + usize::from(d[axis] > 0.0);
    (t, normal, face)
}

/// Nearest positive intersection with a sphere (handles the origin being
/// inside the sphere).
fn sphere_hit(d: &[f64; 3], s: &Sphere) -> Option<f64> {
    // |t·d − c|² = r², unit d, origin ray
    let dc = dot(d, &s.center);
    let c2 = dot(&s.center, &s.center);
    let disc = dc * dc - (c2 - s.radius * s.radius);
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = dc - sq;
    let t1 = dc + sq;
    if t0 > 1e-9 {
        Some(t0)
    } else if t1 > 1e-9 {
        Some(t1)
    } else {
        None
    }
}

/// Nearest positive intersection with an axis-aligned box, with its normal.
fn box_hit(d: &[f64; 3], b: &Box3) -> Option<(f64, [f64; 3])> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut near_axis = 0usize;
    for a in 0..3 {
        let lo = b.center[a] - b.half[a];
        let hi = b.center[a] + b.half[a];
        if d[a] == 0.0 {
            if 0.0 < lo || 0.0 > hi {
                return None;
            }
            continue;
        }
        let mut t0 = lo / d[a];
        let mut t1 = hi / d[a];
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            near_axis = a;
        }
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    let t = if t_near > 1e-9 { t_near } else if t_far > 1e-9 { t_far } else { return None };
    let mut normal = [0.0; 3];
    normal[near_axis] = -d[near_axis].signum();
    Some((t, normal))
}

fn trace(d: &[f64; 3], spec: &SceneSpec) -> Hit {
    let (room_t, room_n, face) = room_exit(d, &spec.room_half);
    let tint = spec.room_face_tint[face];
    let mut best = Hit {
        t: room_t,
        normal: room_n,
        albedo: [
            spec.room_albedo[0] * tint,
            spec.room_albedo[1] * tint,
            spec.room_albedo[2] * tint,
        ],
    };
    for s in &spec.spheres {
        if let Some(t) = sphere_hit(d, s) {
            if t < best.t {
                let p = [t * d[0], t * d[1], t * d[2]];
                let mut n = [
                    (p[0] - s.center[0]) / s.radius,
                    (p[1] - s.center[1]) / s.radius,
                    (p[2] - s.center[2]) / s.radius,
                ];
                if dot(&n, d) > 0.0 {
                    n = [-n[0], -n[1], -n[2]];
                }
                best = Hit { t, normal: n, albedo: s.albedo };
            }
        }
    }
    for b in &spec.boxes {
        if let Some((t, mut n)) = box_hit(d, b) {
            if t < best.t {
                if dot(&n, d) > 0.0 {
                    n = [-n[0], -n[1], -n[2]];
                }
                best = Hit { t, normal: n, albedo: b.albedo };
            }
        }
    }
    best
}

/// Render the scene into a shaded image [H, W, 3] in [0, 1] and an exact
/// depth map [H, W, 1] (Euclidean distance along each pixel ray).
pub fn render(spec: &SceneSpec, height: usize, width: usize) -> Result<(Tensor, Tensor)> {
    spec.validate()?;
    let grid = build_grid(height, width)?;
    let mut image = vec![0.0; height * width * 3];
    let mut depth = vec![0.0; height * width];
    for v in 0..height {
        for u in 0..width {
            let d = ray_for_pixel(&grid, u, v)?;
            let hit = trace(&d, spec);
            let lambert = dot(&hit.normal, &spec.light).max(0.0);
            for ch in 0..3 {
                image[(v * width + u) * 3 + ch] =
                    (hit.albedo[ch] * lambert + AMBIENT).clamp(0.0, 1.0);
            }
            depth[v * width + u] = hit.t;
        }
    }
    Ok((
        Tensor::from_vec(&[height, width, 3], image)?,
        Tensor::from_vec(&[height, width, 1], depth)?,
    ))
}

/// Train/test membership of a dataset record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One dataset entry loaded back from disk.
#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub id: String,
    pub seed: u64,
    pub split: Split,
    pub image: Tensor,
    pub depth: Tensor,
}

/// Generate `total` scenes (80% train / 20% test) under `dir`:
/// scenes/NNNN.ppm + scenes/NNNN.pfm + manifest.csv. `threads` bounds the
/// render workers; output is identical for any worker count.
pub fn gen_dataset(
    dir: &Path,
    total: usize,
    height: usize,
    width: usize,
    seed: u64,
    threads: usize,
) -> Result<()> {
    if total < 2 {
        return Err(Error::Argument("dataset needs at least 2 scenes".into()));
    }
    let n_train = (total * 4).div_ceil(5);
    let base = Rng::new(seed);
    let seeds: Vec<u64> = (0..total).map(|i| base.fork(i as u64).next_u64()).collect();

    let workers = threads.max(1).min(total);
    let mut rendered: Vec<Option<(Tensor, Tensor)>> = vec![None; total];
    if workers == 1 {
        for (i, &s) in seeds.iter().enumerate() {
            rendered[i] = Some(render(&SceneSpec::random(s), height, width)?);
        }
    } else {
        let chunks: Vec<Vec<usize>> =
            (0..workers).map(|w| (w..total).step_by(workers).collect()).collect();
        let results: Vec<Vec<(usize, Result<(Tensor, Tensor)>)>> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunks
                    .iter()
                    .map(|chunk| {
                        let seeds = &seeds;
                        scope.spawn(move || {
                            chunk
                                .iter()
                                .map(|&i| {
                                    (i, render(&SceneSpec::random(seeds[i]), height, width))
                                })
                                .collect()
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("render worker panicked")).collect()
            });
        for chunk in results {
            for (i, r) in chunk {
                rendered[i] = Some(r?);
            }
        }
    }

    let mut manifest = String::from("id,seed,split\n");
    for (i, slot) in rendered.into_iter().enumerate() {
        let (image, depth) = slot.expect("every scene rendered");
        let id = format!("{i:04}");
        imgio::write_ppm(&dir.join("scenes").join(format!("{id}.ppm")), &image)?;
        imgio::write_pfm(&dir.join("scenes").join(format!("{id}.pfm")), &depth)?;
        let split = if i < n_train { Split::Train } else { Split::Test };
        manifest.push_str(&format!("{id},{},{}\n", seeds[i], split.as_str()));
    }
    atomic_write(&dir.join("manifest.csv"), manifest.as_bytes())
}

/// Load a dataset written by [`gen_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Vec<SceneRecord>> {
    let manifest = std::fs::read_to_string(dir.join("manifest.csv"))?;
    let mut records = Vec::new();
    for (ln, line) in manifest.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                position: ln,
                message: format!("manifest line {ln} wants id,seed,split: {line}"),
            });
        }
        let id = fields[0].to_string();
        let seed: u64 = fields[1].parse().map_err(|_| Error::Parse {
            position: ln,
            message: format!("bad seed in manifest line {ln}: {}", fields[1]),
        })?;
        let split = match fields[2] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(Error::Parse {
                    position: ln,
                    message: format!("unknown split {other:?} in manifest line {ln}"),
                })
            }
        };
        let image = imgio::read_ppm(&dir.join("scenes").join(format!("{id}.ppm")))?;
        let depth = imgio::read_pfm(&dir.join("scenes").join(format!("{id}.pfm")))?;
        records.push(SceneRecord { id, seed, split, image, depth });
    }
    Ok(records)
}
