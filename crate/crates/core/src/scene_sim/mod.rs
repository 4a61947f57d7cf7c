//! Synthetic class-labelled scenes, initial-extrinsics perturbation and a
//! class-aware residual oracle standing in for a learned dense matcher.
//!
//! The oracle residual of a point is the displacement from its projection under
//! the current estimate to its projection under the reference extrinsics, plus
//! Gaussian noise whose spread depends on the point's semantic class. Occlusion
//! is not modelled.

mod io;

pub use io::{
    read_class_table, read_correspondences, read_scene_points, write_class_table,
    write_correspondences, write_scene_points, CorrespondenceRecord,
};

use std::collections::HashSet;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, CameraIntrinsics, Pixel, Pose};
use crate::seed;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene spec requests no classes")]
    EmptySpec,
    #[error("invalid class `{name}`: {reason}")]
    InvalidClass { name: String, reason: String },
    #[error("invalid extent for class `{name}`: {reason}")]
    InvalidExtent { name: String, reason: String },
    #[error("duplicate class id {0}")]
    DuplicateClass(u32),
    #[error("point {point_id} references unknown class {class_id}")]
    UnknownClass { point_id: u64, class_id: u32 },
    #[error("duplicate point id {0}")]
    DuplicatePoint(u64),
    #[error("no scene point is visible under both the current and the reference extrinsics")]
    NoVisiblePoints,
    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, SceneError>;

/// Per-class matcher noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticClass {
    pub id: u32,
    pub name: String,
    /// Inlier residual standard deviation per image axis, in pixels.
    pub residual_sigma: f64,
    #[serde(default)]
    pub outlier_rate: f64,
    /// Outlier residual standard deviation; defaults to `residual_sigma`.
    #[serde(default)]
    pub outlier_sigma: Option<f64>,
}

impl SemanticClass {
    pub fn new(id: u32, name: impl Into<String>, residual_sigma: f64) -> Self {
        Self {
            id,
            name: name.into(),
            residual_sigma,
            outlier_rate: 0.0,
            outlier_sigma: None,
        }
    }

    pub fn with_outliers(mut self, rate: f64, sigma: f64) -> Self {
        self.outlier_rate = rate;
        self.outlier_sigma = Some(sigma);
        self
    }

    pub fn outlier_sigma(&self) -> f64 {
        self.outlier_sigma.unwrap_or(self.residual_sigma)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(SceneError::InvalidClass {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if !(self.residual_sigma >= 0.0 && self.residual_sigma.is_finite()) {
            return bad("residual_sigma must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return bad("outlier_rate must lie in [0, 1]");
        }
        if !(self.outlier_sigma() >= self.residual_sigma && self.outlier_sigma().is_finite()) {
            return bad("outlier_sigma must be finite and >= residual_sigma");
        }
        Ok(())
    }
}

/// Region in the LiDAR frame (x forward, y left, z up) from which a class draws its points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Extent {
    /// Uniform in an axis-aligned box.
    Box { min: [f64; 3], max: [f64; 3] },
    /// Uniform on the parallelogram `origin + s·edge_u + t·edge_v`, `s, t ∈ [0, 1]`.
    Plane {
        origin: [f64; 3],
        edge_u: [f64; 3],
        edge_v: [f64; 3],
    },
    /// `count` vertical square columns of side `width` placed inside the box,
    /// spanning its full height (trunks, posts).
    Strips {
        min: [f64; 3],
        max: [f64; 3],
        count: usize,
        width: f64,
    },
    /// `count` balls of `radius` centred inside the box, clipped to it (canopy).
    Blobs {
        min: [f64; 3],
        max: [f64; 3],
        count: usize,
        radius: f64,
    },
}

/// Sampler with per-scene layout (strip and blob centres) already drawn.
enum Layout {
    Box(Vector3<f64>, Vector3<f64>),
    Plane(Vector3<f64>, Vector3<f64>, Vector3<f64>),
    Strips {
        min: Vector3<f64>,
        max: Vector3<f64>,
        centers: Vec<(f64, f64)>,
        half: f64,
    },
    Blobs {
        min: Vector3<f64>,
        max: Vector3<f64>,
        centers: Vec<Vector3<f64>>,
        radius: f64,
    },
}

fn uniform_in<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn box_sample<R: Rng>(rng: &mut R, min: &Vector3<f64>, max: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(
        uniform_in(rng, min.x, max.x),
        uniform_in(rng, min.y, max.y),
        uniform_in(rng, min.z, max.z),
    )
}

fn inside(p: &Vector3<f64>, min: &Vector3<f64>, max: &Vector3<f64>) -> bool {
    (0..3).all(|i| p[i] >= min[i] && p[i] <= max[i])
}

impl Extent {
    fn validate(&self, name: &str) -> Result<()> {
        let bad = |reason: &str| {
            Err(SceneError::InvalidExtent {
                name: name.to_string(),
                reason: reason.to_string(),
            })
        };
        let check_box = |min: &[f64; 3], max: &[f64; 3]| {
            min.iter().chain(max.iter()).all(|x| x.is_finite())
                && min.iter().zip(max).all(|(a, b)| a <= b)
        };
        match self {
            Extent::Box { min, max } => {
                if !check_box(min, max) {
                    return bad("box requires finite min <= max");
                }
            }
            Extent::Plane {
                origin,
                edge_u,
                edge_v,
            } => {
                if !origin.iter().chain(edge_u).chain(edge_v).all(|x| x.is_finite()) {
                    return bad("plane requires finite vectors");
                }
            }
            Extent::Strips {
                min,
                max,
                count,
                width,
            } => {
                if !check_box(min, max) {
                    return bad("strips require finite min <= max");
                }
                if *count == 0 || width.is_nan() || *width < 0.0 {
                    return bad("strips require count >= 1 and width >= 0");
                }
                if max[0] - min[0] < *width || max[1] - min[1] < *width {
                    return bad("strip width exceeds the box footprint");
                }
            }
            Extent::Blobs {
                min,
                max,
                count,
                radius,
            } => {
                if !check_box(min, max) {
                    return bad("blobs require finite min <= max");
                }
                if *count == 0 || !(*radius >= 0.0 && radius.is_finite()) {
                    return bad("blobs require count >= 1 and radius >= 0");
                }
            }
        }
        Ok(())
    }

    fn layout<R: Rng>(&self, rng: &mut R) -> Layout {
        match self {
            Extent::Box { min, max } => Layout::Box(Vector3::from(*min), Vector3::from(*max)),
            Extent::Plane {
                origin,
                edge_u,
                edge_v,
            } => Layout::Plane(
                Vector3::from(*origin),
                Vector3::from(*edge_u),
                Vector3::from(*edge_v),
            ),
            Extent::Strips {
                min,
                max,
                count,
                width,
            } => {
                let half = width / 2.0;
                let centers = (0..*count)
                    .map(|_| {
                        (
                            uniform_in(rng, min[0] + half, max[0] - half),
                            uniform_in(rng, min[1] + half, max[1] - half),
                        )
                    })
                    .collect();
                Layout::Strips {
                    min: Vector3::from(*min),
                    max: Vector3::from(*max),
                    centers,
                    half,
                }
            }
            Extent::Blobs {
                min,
                max,
                count,
                radius,
            } => {
                let (min, max) = (Vector3::from(*min), Vector3::from(*max));
                let centers = (0..*count).map(|_| box_sample(rng, &min, &max)).collect();
                Layout::Blobs {
                    min,
                    max,
                    centers,
                    radius: *radius,
                }
            }
        }
    }
}

impl Layout {
    fn sample<R: Rng>(&self, rng: &mut R) -> Vector3<f64> {
        match self {
            Layout::Box(min, max) => box_sample(rng, min, max),
            Layout::Plane(origin, eu, ev) => {
                let s: f64 = rng.random();
                let t: f64 = rng.random();
                origin + eu * s + ev * t
            }
            Layout::Strips {
                min,
                max,
                centers,
                half,
            } => {
                let (cx, cy) = centers[rng.random_range(0..centers.len())];
                Vector3::new(
                    uniform_in(rng, cx - half, cx + half).clamp(min.x, max.x),
                    uniform_in(rng, cy - half, cy + half).clamp(min.y, max.y),
                    uniform_in(rng, min.z, max.z),
                )
            }
            Layout::Blobs {
                min,
                max,
                centers,
                radius,
            } => {
                let c = centers[rng.random_range(0..centers.len())];
                for _ in 0..64 {
                    let offset = Vector3::new(
                        uniform_in(rng, -radius, *radius),
                        uniform_in(rng, -radius, *radius),
                        uniform_in(rng, -radius, *radius),
                    );
                    let p = c + offset;
                    if offset.norm() <= *radius && inside(&p, min, max) {
                        return p;
                    }
                }
                c
            }
        }
    }
}

/// One class of the scene recipe: noise model, point budget and spatial extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    #[serde(flatten)]
    pub class: SemanticClass,
    pub count: usize,
    pub extent: Extent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub intrinsics: CameraIntrinsics,
    pub reference_extrinsics: Pose,
    pub classes: Vec<ClassSpec>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(SceneError::EmptySpec);
        }
        let mut ids = HashSet::new();
        for c in &self.classes {
            c.class.validate()?;
            c.extent.validate(&c.class.name)?;
            if !ids.insert(c.class.id) {
                return Err(SceneError::DuplicateClass(c.class.id));
            }
        }
        Ok(())
    }

    pub fn class_table(&self) -> Vec<SemanticClass> {
        self.classes.iter().map(|c| c.class.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenePoint {
    pub position: Vector3<f64>,
    pub class_id: u32,
    pub point_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub points: Vec<ScenePoint>,
    pub intrinsics: CameraIntrinsics,
    /// Reference LiDAR-to-camera extrinsics.
    pub reference_extrinsics: Pose,
    pub classes: Vec<SemanticClass>,
}

impl Scene {
    /// Assembles a scene, checking class references and point-id uniqueness.
    pub fn new(
        points: Vec<ScenePoint>,
        intrinsics: CameraIntrinsics,
        reference_extrinsics: Pose,
        classes: Vec<SemanticClass>,
    ) -> Result<Self> {
        let class_ids: HashSet<u32> = classes.iter().map(|c| c.id).collect();
        if class_ids.len() != classes.len() {
            let mut seen = HashSet::new();
            let dup = classes.iter().find(|c| !seen.insert(c.id)).unwrap();
            return Err(SceneError::DuplicateClass(dup.id));
        }
        let mut point_ids = HashSet::with_capacity(points.len());
        for p in &points {
            if !class_ids.contains(&p.class_id) {
                return Err(SceneError::UnknownClass {
                    point_id: p.point_id,
                    class_id: p.class_id,
                });
            }
            if !point_ids.insert(p.point_id) {
                return Err(SceneError::DuplicatePoint(p.point_id));
            }
        }
        Ok(Self {
            points,
            intrinsics,
            reference_extrinsics,
            classes,
        })
    }

    pub fn class(&self, id: u32) -> Option<&SemanticClass> {
        self.classes.iter().find(|c| c.id == id)
    }
}

/// Draws a scene from `spec`. Point ids are assigned sequentially in class order.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = seed::rng(seed);
    let total = spec.classes.iter().map(|c| c.count).sum();
    let mut points = Vec::with_capacity(total);
    for c in &spec.classes {
        let layout = c.extent.layout(&mut rng);
        for _ in 0..c.count {
            points.push(ScenePoint {
                position: layout.sample(&mut rng),
                class_id: c.class.id,
                point_id: points.len() as u64,
            });
        }
    }
    Scene::new(
        points,
        spec.intrinsics,
        spec.reference_extrinsics,
        spec.class_table(),
    )
}

/// Controlled initial-extrinsics error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Meters.
    pub translation_magnitude: f64,
    /// Degrees.
    pub rotation_magnitude: f64,
    #[serde(default)]
    pub seed: u64,
}

fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Offsets `reference` by exactly the requested translation and rotation
/// magnitudes along a seeded random direction and axis.
pub fn perturb_pose(reference: &Pose, spec: &PerturbationSpec) -> Result<Pose> {
    let (t, r) = (spec.translation_magnitude, spec.rotation_magnitude);
    if !(t >= 0.0 && t.is_finite() && (0.0..180.0).contains(&r)) {
        return Err(SceneError::InvalidPerturbation(format!(
            "magnitudes must be >= 0 (rotation < 180 deg), got {t} m, {r} deg"
        )));
    }
    let mut rng = seed::rng(spec.seed);
    let direction = random_unit(&mut rng);
    let axis = random_unit(&mut rng);
    let rot = geometry::se3_exp(&geometry::Twist::new(
        Vector3::zeros(),
        axis * r.to_radians(),
    ));
    Ok(Pose::new(
        rot.rotation() * reference.rotation(),
        reference.translation() + direction * t,
    )
    .expect("product of rotations is a rotation"))
}

/// A projected LiDAR point with its cross-modal residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub point_id: u64,
    pub class_id: u32,
    /// LiDAR-frame position of the source point.
    pub point: Vector3<f64>,
    /// Projection under the current extrinsics.
    pub u: Pixel,
    /// Residual `(Δu, Δv)` in pixels.
    pub f: Vector2<f64>,
    /// Matched location `u + f`.
    pub u_matched: Pixel,
}

impl Correspondence {
    pub fn new(point_id: u64, class_id: u32, point: Vector3<f64>, u: Pixel, f: Vector2<f64>) -> Self {
        Self {
            point_id,
            class_id,
            point,
            u,
            f,
            u_matched: u.offset(&f),
        }
    }
}

/// Read access shared by in-memory correspondences and records parsed from CSV.
pub trait ResidualSample {
    fn class_id(&self) -> u32;
    fn pixel(&self) -> Pixel;
    fn residual(&self) -> Vector2<f64>;
}

impl ResidualSample for Correspondence {
    fn class_id(&self) -> u32 {
        self.class_id
    }
    fn pixel(&self) -> Pixel {
        self.u
    }
    fn residual(&self) -> Vector2<f64> {
        self.f
    }
}

/// `d` such that `from + d == to` in floating point whenever one exists within a few ulps.
fn exact_offset(from: f64, to: f64) -> f64 {
    let d = to - from;
    if from + d == to {
        return d;
    }
    let (mut lo, mut hi) = (d, d);
    for _ in 0..4 {
        lo = lo.next_down();
        hi = hi.next_up();
        if from + lo == to {
            return lo;
        }
        if from + hi == to {
            return hi;
        }
    }
    d
}

/// Class-aware residual oracle.
///
/// Points visible under both `current` and the scene's reference extrinsics
/// yield a correspondence; the rest are omitted.
pub fn oracle_residuals(scene: &Scene, current: &Pose, seed: u64) -> Result<Vec<Correspondence>> {
    let k = &scene.intrinsics;
    let mut rng = seed::rng(seed);
    let mut out = Vec::new();
    for sp in &scene.points {
        let class = scene.class(sp.class_id).ok_or(SceneError::UnknownClass {
            point_id: sp.point_id,
            class_id: sp.class_id,
        })?;
        let Ok(u) = geometry::project(k, &current.transform_point(&sp.position)) else {
            continue;
        };
        let Ok(target) = geometry::project(k, &scene.reference_extrinsics.transform_point(&sp.position))
        else {
            continue;
        };
        if !k.is_visible(&u) || !k.is_visible(&target) {
            continue;
        }
        let is_outlier = class.outlier_rate > 0.0 && rng.random::<f64>() < class.outlier_rate;
        let sigma = if is_outlier {
            class.outlier_sigma()
        } else {
            class.residual_sigma
        };
        let noise = if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("validated sigma");
            Vector2::new(normal.sample(&mut rng), normal.sample(&mut rng))
        } else {
            Vector2::zeros()
        };
        let ideal = Vector2::new(exact_offset(u.u, target.u), exact_offset(u.v, target.v));
        out.push(Correspondence::new(
            sp.point_id,
            sp.class_id,
            sp.position,
            u,
            ideal + noise,
        ));
    }
    if out.is_empty() {
        return Err(SceneError::NoVisiblePoints);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pose_error;
    use nalgebra::Matrix3;

    pub(crate) fn lidar_to_camera() -> Pose {
        let r = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        Pose::new(r, Vector3::new(0.05, -0.1, 0.02)).unwrap()
    }

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn box_class(id: u32, name: &str, sigma: f64, count: usize, min: [f64; 3], max: [f64; 3]) -> ClassSpec {
        ClassSpec {
            class: SemanticClass::new(id, name, sigma),
            count,
            extent: Extent::Box { min, max },
        }
    }

    fn spec(classes: Vec<ClassSpec>) -> SceneSpec {
        SceneSpec {
            intrinsics: intrinsics(),
            reference_extrinsics: lidar_to_camera(),
            classes,
        }
    }

    fn frontal(sigma: f64, count: usize) -> SceneSpec {
        spec(vec![box_class(0, "wall", sigma, count, [8.0, -4.0, -2.0], [20.0, 4.0, 2.0])])
    }

    #[test]
    fn counts_and_bounds() {
        let s = spec(vec![box_class(0, "a", 1.0, 100, [-5.0; 3], [5.0; 3])]);
        let scene = generate_scene(&s, 1).unwrap();
        assert_eq!(scene.points.len(), 100);
        assert!(scene
            .points
            .iter()
            .all(|p| p.position.iter().all(|x| (-5.0..=5.0).contains(x))));
    }

    #[test]
    fn generation_is_deterministic() {
        let s = frontal(1.0, 200);
        assert_eq!(generate_scene(&s, 9).unwrap(), generate_scene(&s, 9).unwrap());
        assert_ne!(generate_scene(&s, 9).unwrap(), generate_scene(&s, 10).unwrap());
    }

    #[test]
    fn per_class_counts() {
        let s = spec(vec![
            box_class(0, "rigid", 0.5, 500, [8.0, -4.0, -2.0], [20.0, 4.0, 0.0]),
            box_class(1, "foliage", 6.0, 2000, [8.0, -4.0, 0.0], [20.0, 4.0, 3.0]),
        ]);
        let scene = generate_scene(&s, 3).unwrap();
        assert_eq!(scene.points.iter().filter(|p| p.class_id == 0).count(), 500);
        assert_eq!(scene.points.iter().filter(|p| p.class_id == 1).count(), 2000);
    }

    #[test]
    fn structured_extents_stay_in_bounds() {
        let min = [6.0, -10.0, -1.5];
        let max = [25.0, 10.0, 4.0];
        let s = spec(vec![
            ClassSpec {
                class: SemanticClass::new(0, "trunk", 0.5),
                count: 800,
                extent: Extent::Strips { min, max, count: 10, width: 0.4 },
            },
            ClassSpec {
                class: SemanticClass::new(1, "canopy", 5.0),
                count: 800,
                extent: Extent::Blobs { min, max, count: 6, radius: 2.5 },
            },
            ClassSpec {
                class: SemanticClass::new(2, "building", 1.0),
                count: 400,
                extent: Extent::Plane {
                    origin: [30.0, -5.0, 0.0],
                    edge_u: [0.0, 10.0, 0.0],
                    edge_v: [0.0, 0.0, 5.0],
                },
            },
        ]);
        let scene = generate_scene(&s, 4).unwrap();
        let (lo, hi) = (Vector3::from(min), Vector3::from(max));
        for p in &scene.points {
            match p.class_id {
                0 | 1 => assert!(inside(&p.position, &lo, &hi), "{:?}", p),
                _ => {
                    assert_eq!(p.position.x, 30.0);
                    assert!((-5.0..=5.0).contains(&p.position.y) && (0.0..=5.0).contains(&p.position.z));
                }
            }
        }
    }

    #[test]
    fn empty_and_invalid_specs() {
        assert!(matches!(generate_scene(&spec(vec![]), 0), Err(SceneError::EmptySpec)));
        let mut bad = frontal(1.0, 10);
        bad.classes[0].class = bad.classes[0].class.clone().with_outliers(0.1, 0.5);
        assert!(matches!(generate_scene(&bad, 0), Err(SceneError::InvalidClass { .. })));
        let mut dup = frontal(1.0, 10);
        dup.classes.push(dup.classes[0].clone());
        assert!(matches!(generate_scene(&dup, 0), Err(SceneError::DuplicateClass(0))));
    }

    #[test]
    fn scene_rejects_unknown_class_and_duplicate_ids() {
        let p = ScenePoint { position: Vector3::zeros(), class_id: 5, point_id: 0 };
        let classes = vec![SemanticClass::new(0, "a", 1.0)];
        let err = Scene::new(vec![p], intrinsics(), Pose::identity(), classes.clone());
        assert!(matches!(err, Err(SceneError::UnknownClass { .. })));
        let q = ScenePoint { class_id: 0, ..p };
        let err = Scene::new(vec![q, q], intrinsics(), Pose::identity(), classes);
        assert!(matches!(err, Err(SceneError::DuplicatePoint(0))));
    }

    #[test]
    fn perturbation_magnitudes_are_exact() {
        let reference = lidar_to_camera();
        let zero = PerturbationSpec { translation_magnitude: 0.0, rotation_magnitude: 0.0, seed: 3 };
        assert_eq!(perturb_pose(&reference, &zero).unwrap(), reference);
        for seed in 0..20 {
            let spec = PerturbationSpec { translation_magnitude: 0.2, rotation_magnitude: 5.0, seed };
            let t0 = perturb_pose(&reference, &spec).unwrap();
            let e = pose_error(&t0, &reference);
            assert!((e.translation - 0.2).abs() < 1e-9, "{e:?}");
            assert!((e.rotation_deg - 5.0).abs() < 1e-9, "{e:?}");
            assert_eq!(t0, perturb_pose(&reference, &spec).unwrap());
        }
    }

    #[test]
    fn aligned_noiseless_oracle_is_zero() {
        let scene = generate_scene(&frontal(0.0, 300), 2).unwrap();
        let corrs = oracle_residuals(&scene, &scene.reference_extrinsics, 5).unwrap();
        assert!(!corrs.is_empty());
        assert!(corrs.iter().all(|c| c.f == Vector2::zeros()));
    }

    #[test]
    fn noiseless_oracle_targets_reference_projection() {
        let scene = generate_scene(&frontal(0.0, 500), 2).unwrap();
        let spec = PerturbationSpec { translation_magnitude: 0.2, rotation_magnitude: 5.0, seed: 11 };
        let t0 = perturb_pose(&scene.reference_extrinsics, &spec).unwrap();
        let corrs = oracle_residuals(&scene, &t0, 5).unwrap();
        for c in &corrs {
            let target = geometry::project(&scene.intrinsics, &scene.reference_extrinsics.transform_point(&c.point)).unwrap();
            assert_eq!(c.u_matched, target);
            assert_eq!(c.u_matched, c.u.offset(&c.f));
        }
    }

    #[test]
    fn oracle_noise_has_configured_spread() {
        let scene = generate_scene(&frontal(2.0, 10_000), 8).unwrap();
        let corrs = oracle_residuals(&scene, &scene.reference_extrinsics, 21).unwrap();
        assert!(corrs.len() > 9_000);
        for axis in 0..2 {
            let n = corrs.len() as f64;
            let mean = corrs.iter().map(|c| c.f[axis]).sum::<f64>() / n;
            let var = corrs.iter().map(|c| (c.f[axis] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let std = var.sqrt();
            assert!((1.9..=2.1).contains(&std), "axis {axis}: std {std}");
        }
    }

    #[test]
    fn oracle_omits_invisible_points() {
        let s = spec(vec![
            box_class(0, "front", 1.0, 50, [8.0, -1.0, -1.0], [10.0, 1.0, 1.0]),
            box_class(1, "behind", 1.0, 50, [-10.0, -1.0, -1.0], [-8.0, 1.0, 1.0]),
        ]);
        let scene = generate_scene(&s, 1).unwrap();
        let corrs = oracle_residuals(&scene, &scene.reference_extrinsics, 0).unwrap();
        assert_eq!(corrs.len(), 50);
        assert!(corrs.iter().all(|c| c.class_id == 0));

        let s = spec(vec![box_class(1, "behind", 1.0, 50, [-10.0, -1.0, -1.0], [-8.0, 1.0, 1.0])]);
        let scene = generate_scene(&s, 1).unwrap();
        assert!(matches!(
            oracle_residuals(&scene, &scene.reference_extrinsics, 0),
            Err(SceneError::NoVisiblePoints)
        ));
    }

    #[test]
    fn class_medians_follow_sigma_order() {
        let sigmas = [4.0, 0.5, 2.0];
        let classes = sigmas
            .iter()
            .enumerate()
            .map(|(i, &s)| box_class(i as u32, "c", s, 6000, [8.0, -4.0, -2.0], [20.0, 4.0, 2.0]))
            .collect();
        let scene = generate_scene(&spec(classes), 12).unwrap();
        let corrs = oracle_residuals(&scene, &scene.reference_extrinsics, 13).unwrap();
        let median = |id: u32| {
            let mut v: Vec<f64> = corrs.iter().filter(|c| c.class_id == id).map(|c| c.f.norm()).collect();
            assert!(v.len() >= 5000);
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        let m: Vec<f64> = (0..3).map(median).collect();
        assert!(m[1] < m[2] && m[2] < m[0], "{m:?}");
    }

    #[test]
    fn exact_offset_round_trips() {
        for (a, b) in [(0.1, 0.3), (1e-3, 637.25), (412.0000001, 3.5), (100.1, 100.3)] {
            assert_eq!(a + exact_offset(a, b), b);
        }
    }
}
