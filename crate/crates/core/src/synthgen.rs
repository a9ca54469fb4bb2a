//! Seeded synthetic forest scenes with per-point ground truth.
//!
//! A scene is a jittered terrain grid carrying trees (trunk + egg-shaped
//! canopy leaning along the tree's heading), raised bushes and boxes with an
//! offset cabin, plus sparse clutter. Every shape is deliberately lopsided so
//! its heading can be recovered from the points.
//!
//! ```
//! use nsm_core::synthgen::{generate_scene, SceneSpec};
//!
//! let spec = SceneSpec { trees: 3, bushes: 1, boxes: 0, extent: [20.0, 20.0], ..SceneSpec::default() };
//! let scene = generate_scene(&spec).unwrap();
//! assert_eq!(scene.objects.len(), 4);
//! assert_eq!(scene.labels.len(), scene.cloud.len());
//! ```

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud, RigidTransform};

const PLACEMENT_ATTEMPTS: usize = 10_000;
const LINKAGE_RADIUS: f64 = 0.2;
const STREAM_PLACEMENT: u64 = 1;
const STREAM_GROUND: u64 = 2;
const STREAM_CLUTTER: u64 = 3;
const STREAM_OBJECTS: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Terrain {
    Flat,
    /// Plane rising by `deg` towards `azimuth_deg`.
    Slope {
        deg: f64,
        #[serde(default)]
        azimuth_deg: f64,
    },
    Undulation {
        amplitude: f64,
        wavelength: f64,
    },
}

impl Terrain {
    pub fn height(&self, x: f64, y: f64) -> f64 {
        match *self {
            Terrain::Flat => 0.0,
            Terrain::Slope { deg, azimuth_deg } => {
                let az = azimuth_deg.to_radians();
                deg.to_radians().tan() * (x * az.cos() + y * az.sin())
            }
            Terrain::Undulation {
                amplitude,
                wavelength,
            } => amplitude * (TAU * x / wavelength).sin() * (TAU * y / wavelength).cos(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    /// Scene size in metres, centred on the origin.
    pub extent: [f64; 2],
    pub terrain: Terrain,
    pub trees: usize,
    pub bushes: usize,
    pub boxes: usize,
    /// Stray points per square metre.
    pub clutter_density: f64,
    /// Terrain grid pitch in metres.
    pub ground_spacing: f64,
    /// Object surface points per square metre.
    pub object_density: f64,
    /// Bounds on points per object.
    pub object_points: [usize; 2],
    /// Gaussian noise on every generated point, metres.
    pub surface_noise: f64,
    /// Smallest gap between object footprints, metres.
    pub min_spacing: f64,
    /// Accept `min_spacing` at or below the clustering linkage radius.
    pub allow_tight_spacing: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            extent: [60.0, 60.0],
            terrain: Terrain::Flat,
            trees: 18,
            bushes: 8,
            boxes: 4,
            clutter_density: 0.02,
            ground_spacing: 0.22,
            object_density: 70.0,
            object_points: [500, 1300],
            surface_noise: 0.01,
            min_spacing: 1.0,
            allow_tight_spacing: false,
        }
    }
}

impl SceneSpec {
    /// The 30-object, 60 m × 60 m forest used by the end-to-end tests.
    pub fn forest(seed: u64) -> Self {
        Self {
            seed,
            terrain: Terrain::Undulation {
                amplitude: 0.4,
                wavelength: 40.0,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(format!("scene spec: {m}")));
        if !self.extent.iter().all(|e| e.is_finite() && *e > 0.0) {
            return bad("extent must be > 0");
        }
        if !(self.ground_spacing > 0.0) || !(self.object_density > 0.0) {
            return bad("ground_spacing and object_density must be > 0");
        }
        if !(self.clutter_density >= 0.0) || !(self.surface_noise >= 0.0) {
            return bad("clutter_density and surface_noise must be >= 0");
        }
        if self.object_points[0] == 0 || self.object_points[0] > self.object_points[1] {
            return bad("object_points must be a non-empty range");
        }
        if !(self.min_spacing > LINKAGE_RADIUS) && !self.allow_tight_spacing {
            return bad("min_spacing must exceed the 0.2 m clustering radius");
        }
        match self.terrain {
            Terrain::Slope { deg, .. } if !(deg.abs() < 60.0) => {
                bad("slope must be under 60 degrees")
            }
            Terrain::Undulation { wavelength, .. } if !(wavelength > 0.0) => {
                bad("wavelength must be > 0")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Tree,
    Bush,
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Ground,
    Clutter,
    Object(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInfo {
    pub id: u32,
    pub kind: ObjectKind,
    /// Terrain point under the object's anchor.
    pub center: [f64; 3],
    pub yaw: f64,
    /// Horizontal bounding radius about `center`.
    pub radius: f64,
    /// Vertical extent of the object above `center`, which may start below
    /// zero on sloped ground.
    pub z_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScene {
    pub cloud: PointCloud,
    pub labels: Vec<Label>,
    /// Canopy and bush points.
    pub foliage: Vec<bool>,
    pub objects: Vec<ObjectInfo>,
    pub surface_noise: f64,
}

impl LabeledScene {
    pub fn object_point_count(&self, id: u32) -> usize {
        self.labels
            .iter()
            .filter(|l| **l == Label::Object(id))
            .count()
    }
}

/// Point-level ground truth written next to a generated cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLabels {
    pub labels: Vec<Label>,
    pub objects: Vec<ObjectInfo>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_direction(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(gaussian(rng), gaussian(rng), gaussian(rng));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Ellipsoid with different semi-axes ahead of and behind its centre along x.
#[derive(Debug, Clone, Copy)]
struct Egg {
    center: Vector3<f64>,
    front: f64,
    back: f64,
    half_width: f64,
    half_height: f64,
}

impl Egg {
    fn area(&self) -> f64 {
        let p = 1.6;
        let a = (self.front + self.back) / 2.0;
        let (b, c) = (self.half_width, self.half_height);
        let m = ((a * b).powf(p) + (a * c).powf(p) + (b * c).powf(p)) / 3.0;
        4.0 * PI * m.powf(1.0 / p)
    }

    fn sample(&self, rng: &mut ChaCha8Rng, interior: bool) -> Vector3<f64> {
        let mut d = unit_direction(rng);
        if interior {
            d *= rng.random::<f64>().cbrt();
        }
        let ax = if d.x >= 0.0 { self.front } else { self.back };
        self.center + Vector3::new(d.x * ax, d.y * self.half_width, d.z * self.half_height)
    }
}

/// Axis-aligned box faces, without the bottom face.
#[derive(Debug, Clone, Copy)]
struct Cuboid {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Cuboid {
    fn faces(&self) -> [f64; 5] {
        let s = self.max - self.min;
        [s.x * s.y, s.x * s.z, s.x * s.z, s.y * s.z, s.y * s.z]
    }

    fn area(&self) -> f64 {
        self.faces().iter().sum()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        let faces = self.faces();
        let mut pick = rng.random::<f64>() * self.area();
        let mut face = 0;
        while face < 4 && pick >= faces[face] {
            pick -= faces[face];
            face += 1;
        }
        let (lo, hi) = (self.min, self.max);
        let mut u = |a: f64, b: f64| a + (b - a) * rng.random::<f64>();
        match face {
            0 => Vector3::new(u(lo.x, hi.x), u(lo.y, hi.y), hi.z),
            1 => Vector3::new(u(lo.x, hi.x), lo.y, u(lo.z, hi.z)),
            2 => Vector3::new(u(lo.x, hi.x), hi.y, u(lo.z, hi.z)),
            3 => Vector3::new(lo.x, u(lo.y, hi.y), u(lo.z, hi.z)),
            _ => Vector3::new(hi.x, u(lo.y, hi.y), u(lo.z, hi.z)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Tree {
        trunk_radius: f64,
        trunk_top: f64,
        canopy: Egg,
    },
    Bush {
        body: Egg,
    },
    Box {
        body: Cuboid,
        cabin: Cuboid,
    },
}

impl Shape {
    fn random(kind: ObjectKind, rng: &mut ChaCha8Rng) -> Shape {
        match kind {
            ObjectKind::Tree => {
                let base = rng.random_range(1.2..2.0);
                let half_height = rng.random_range(0.6..1.2);
                let front = rng.random_range(0.9..1.4);
                Shape::Tree {
                    trunk_radius: rng.random_range(0.1..0.2),
                    trunk_top: base + 0.3 * half_height,
                    canopy: Egg {
                        center: Vector3::new(rng.random_range(0.3..0.5), 0.0, base + half_height),
                        front,
                        back: front * rng.random_range(0.55..0.8),
                        half_width: rng.random_range(0.5..0.9),
                        half_height,
                    },
                }
            }
            ObjectKind::Bush => {
                let half_height = rng.random_range(0.35..0.6);
                let front = rng.random_range(0.7..1.2);
                Shape::Bush {
                    body: Egg {
                        center: Vector3::new(0.0, 0.0, 0.25 + half_height),
                        front,
                        back: front * rng.random_range(0.55..0.8),
                        half_width: rng.random_range(0.4..0.7),
                        half_height,
                    },
                }
            }
            ObjectKind::Box => {
                let l = rng.random_range(1.6..2.6);
                let w = rng.random_range(0.9..1.4);
                let h = rng.random_range(0.6..0.9);
                let clearance = 0.3;
                let lc = l * rng.random_range(0.35..0.5);
                let hc = rng.random_range(0.4..0.6);
                let x0 = -l / 2.0 + 0.1;
                Shape::Box {
                    body: Cuboid {
                        min: Vector3::new(-l / 2.0, -w / 2.0, clearance),
                        max: Vector3::new(l / 2.0, w / 2.0, clearance + h),
                    },
                    cabin: Cuboid {
                        min: Vector3::new(x0, -0.45 * w, clearance + h),
                        max: Vector3::new(x0 + lc, 0.45 * w, clearance + h + hc),
                    },
                }
            }
        }
    }

    fn radius(&self) -> f64 {
        match self {
            Shape::Tree { canopy, .. } => canopy.center.x + canopy.front.max(canopy.half_width),
            Shape::Bush { body } => body.front.max(body.back).max(body.half_width),
            Shape::Box { body, .. } => body.max.xy().norm(),
        }
    }

    fn z_range(&self) -> [f64; 2] {
        match self {
            Shape::Tree { canopy, .. } => [0.0, canopy.center.z + canopy.half_height],
            Shape::Bush { body } => [
                body.center.z - body.half_height,
                body.center.z + body.half_height,
            ],
            Shape::Box { body, cabin } => [body.min.z, cabin.max.z],
        }
    }

    /// Local points (x along the heading, z up from the anchor) with foliage
    /// flags.
    fn sample(
        &self,
        density: f64,
        bounds: [usize; 2],
        rng: &mut ChaCha8Rng,
    ) -> Vec<(Vector3<f64>, bool)> {
        let count = |area: f64| ((area * density).round() as usize).clamp(bounds[0], bounds[1]);
        match self {
            Shape::Tree {
                trunk_radius,
                trunk_top,
                canopy,
            } => {
                let trunk_area = TAU * trunk_radius * trunk_top;
                let n = count(trunk_area + canopy.area());
                let n_trunk =
                    (n as f64 * trunk_area / (trunk_area + canopy.area())).round() as usize;
                let mut out = Vec::with_capacity(n);
                for _ in 0..n_trunk {
                    let a = rng.random::<f64>() * TAU;
                    let z = rng.random::<f64>() * trunk_top;
                    out.push((
                        Vector3::new(trunk_radius * a.cos(), trunk_radius * a.sin(), z),
                        false,
                    ));
                }
                for _ in n_trunk..n {
                    let interior = rng.random::<f64>() < 0.4;
                    out.push((canopy.sample(rng, interior), true));
                }
                out
            }
            Shape::Bush { body } => {
                let n = count(body.area());
                (0..n)
                    .map(|_| {
                        let interior = rng.random::<f64>() < 0.3;
                        (body.sample(rng, interior), true)
                    })
                    .collect()
            }
            Shape::Box { body, cabin } => {
                let (ab, ac) = (body.area(), cabin.area());
                let n = count(ab + ac);
                (0..n)
                    .map(|_| {
                        let p = if rng.random::<f64>() * (ab + ac) < ab {
                            body.sample(rng)
                        } else {
                            cabin.sample(rng)
                        };
                        (p, false)
                    })
                    .collect()
            }
        }
    }
}

/// Kind, shape, footprint centre and yaw of one placed object.
type Placed = (ObjectKind, Shape, [f64; 2], f64);

fn place_objects(spec: &SceneSpec, kinds: &[ObjectKind]) -> Result<Vec<Placed>> {
    let mut rng = rng_for(spec.seed, STREAM_PLACEMENT);
    let mut placed: Vec<Placed> = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let shape = Shape::random(kind, &mut rng);
        let r = shape.radius();
        let half = [spec.extent[0] / 2.0 - r, spec.extent[1] / 2.0 - r];
        if half[0] <= 0.0 || half[1] <= 0.0 {
            return Err(Error::InfeasibleSpacing {
                placed: placed.len(),
                requested: kinds.len(),
            });
        }
        let mut spot = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let c = [
                rng.random_range(-half[0]..half[0]),
                rng.random_range(-half[1]..half[1]),
            ];
            let clear = placed.iter().all(|(_, s, o, _)| {
                let d = ((c[0] - o[0]).powi(2) + (c[1] - o[1]).powi(2)).sqrt();
                d >= r + s.radius() + spec.min_spacing
            });
            if clear {
                spot = Some(c);
                break;
            }
        }
        let Some(c) = spot else {
            return Err(Error::InfeasibleSpacing {
                placed: placed.len(),
                requested: kinds.len(),
            });
        };
        placed.push((kind, shape, c, rng.random::<f64>() * TAU));
    }
    Ok(placed)
}

/// Generates a scene. Identical specs give bit-identical scenes regardless of
/// the thread count.
pub fn generate_scene(spec: &SceneSpec) -> Result<LabeledScene> {
    spec.validate()?;
    let mut kinds: Vec<ObjectKind> = std::iter::repeat_n(ObjectKind::Tree, spec.trees)
        .chain(std::iter::repeat_n(ObjectKind::Bush, spec.bushes))
        .chain(std::iter::repeat_n(ObjectKind::Box, spec.boxes))
        .collect();
    kinds.shuffle(&mut rng_for(spec.seed, STREAM_PLACEMENT + 100));
    let placed = place_objects(spec, &kinds)?;

    let terrain = spec.terrain;
    let noise = spec.surface_noise;
    let jitter = |rng: &mut ChaCha8Rng| {
        if noise > 0.0 {
            gaussian(rng) * noise
        } else {
            0.0
        }
    };

    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut foliage = Vec::new();

    let mut rng = rng_for(spec.seed, STREAM_GROUND);
    let s = spec.ground_spacing;
    let (nx, ny) = (
        (spec.extent[0] / s).floor() as usize,
        (spec.extent[1] / s).floor() as usize,
    );
    for i in 0..nx {
        for j in 0..ny {
            let x = -spec.extent[0] / 2.0 + (i as f64 + 0.5 + rng.random_range(-0.3..0.3)) * s;
            let y = -spec.extent[1] / 2.0 + (j as f64 + 0.5 + rng.random_range(-0.3..0.3)) * s;
            points.push(Point::new(x, y, terrain.height(x, y) + jitter(&mut rng)));
        }
    }
    labels.resize(points.len(), Label::Ground);
    foliage.resize(points.len(), false);

    let generated: Vec<(ObjectInfo, Vec<(Point, bool)>)> = placed
        .par_iter()
        .enumerate()
        .map(|(i, (kind, shape, c, yaw))| {
            let mut rng = rng_for(spec.seed, STREAM_OBJECTS + i as u64);
            let ground = terrain.height(c[0], c[1]);
            // Raised shapes sit above the highest terrain under their footprint.
            let lift = match kind {
                ObjectKind::Tree => 0.0,
                _ => (0..16)
                    .map(|k| {
                        let a = k as f64 * TAU / 16.0;
                        let r = shape.radius();
                        terrain.height(c[0] + r * a.cos(), c[1] + r * a.sin()) - ground
                    })
                    .fold(0.0, f64::max),
            };
            let pose = RigidTransform::from_yaw(*yaw, Vector3::new(c[0], c[1], ground + lift));
            let pts = shape
                .sample(spec.object_density, spec.object_points, &mut rng)
                .into_iter()
                .map(|(p, leafy)| {
                    let w = pose.apply(&Point::from(p));
                    (
                        Point::new(
                            w.x + jitter(&mut rng),
                            w.y + jitter(&mut rng),
                            w.z + jitter(&mut rng),
                        ),
                        leafy,
                    )
                })
                .collect();
            let zr = shape.z_range();
            let info = ObjectInfo {
                id: i as u32,
                kind: *kind,
                center: [c[0], c[1], ground],
                yaw: *yaw,
                radius: shape.radius(),
                z_range: [zr[0] + lift, zr[1] + lift],
            };
            (info, pts)
        })
        .collect();

    let mut objects = Vec::with_capacity(generated.len());
    for (info, pts) in generated {
        for (p, leafy) in pts {
            points.push(p);
            labels.push(Label::Object(info.id));
            foliage.push(leafy);
        }
        objects.push(info);
    }

    let mut rng = rng_for(spec.seed, STREAM_CLUTTER);
    let n_clutter = (spec.clutter_density * spec.extent[0] * spec.extent[1]).round() as usize;
    for _ in 0..n_clutter {
        let x = rng.random_range(-0.5..0.5) * spec.extent[0];
        let y = rng.random_range(-0.5..0.5) * spec.extent[1];
        points.push(Point::new(
            x,
            y,
            terrain.height(x, y) + rng.random_range(0.3..2.0),
        ));
        labels.push(Label::Clutter);
        foliage.push(false);
    }

    Ok(LabeledScene {
        cloud: PointCloud::new(points).with_frame_id(format!("scene_{}", spec.seed)),
        labels,
        foliage,
        objects,
        surface_noise: noise,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perturbation {
    /// Fraction of points kept.
    pub resample_fraction: f64,
    /// Gaussian noise added to every point, metres.
    pub noise_sigma: f64,
    /// Angular wedge removed from each object about its anchor.
    pub occlusion_sector_deg: f64,
    /// Extra Gaussian displacement of foliage points, metres.
    pub canopy_jitter_sigma: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            resample_fraction: 0.8,
            noise_sigma: 0.03,
            occlusion_sector_deg: 90.0,
            canopy_jitter_sigma: 0.05,
        }
    }
}

impl Perturbation {
    pub fn none() -> Self {
        Self {
            resample_fraction: 1.0,
            noise_sigma: 0.0,
            occlusion_sector_deg: 0.0,
            canopy_jitter_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivedSource {
    pub cloud: PointCloud,
    pub labels: Vec<Label>,
    /// Source → target (scene) transform.
    pub gt: RigidTransform,
}

/// A source observation of `scene`: perturbed, then expressed in a frame
/// such that `gt` maps it back onto the scene.
pub fn derive_source(
    scene: &LabeledScene,
    transform: &RigidTransform,
    perturbation: &Perturbation,
    seed: u64,
) -> DerivedSource {
    let mut rng = rng_for(seed, 0);
    let sector = perturbation
        .occlusion_sector_deg
        .to_radians()
        .clamp(0.0, TAU);
    let starts: Vec<f64> = scene
        .objects
        .iter()
        .map(|_| rng.random::<f64>() * TAU)
        .collect();
    let noise = Normal::new(0.0, perturbation.noise_sigma.max(0.0)).expect("finite sigma");
    let leaf = Normal::new(0.0, perturbation.canopy_jitter_sigma.max(0.0)).expect("finite sigma");
    let to_source = transform.inverse();

    let mut points = Vec::with_capacity(scene.cloud.len());
    let mut labels = Vec::with_capacity(scene.cloud.len());
    for (i, p) in scene.cloud.iter().enumerate() {
        let keep = rng.random::<f64>() < perturbation.resample_fraction;
        let mut q = p.coords;
        if perturbation.canopy_jitter_sigma > 0.0 && scene.foliage[i] {
            q += Vector3::new(
                leaf.sample(&mut rng),
                leaf.sample(&mut rng),
                leaf.sample(&mut rng),
            );
        }
        if perturbation.noise_sigma > 0.0 {
            q += Vector3::new(
                noise.sample(&mut rng),
                noise.sample(&mut rng),
                noise.sample(&mut rng),
            );
        }
        if !keep {
            continue;
        }
        if let Label::Object(id) = scene.labels[i] {
            if sector > 0.0 {
                let o = &scene.objects[id as usize];
                let a = (p.y - o.center[1]).atan2(p.x - o.center[0]);
                if (a - starts[id as usize]).rem_euclid(TAU) < sector {
                    continue;
                }
            }
        }
        points.push(to_source.apply(&Point::from(q)));
        labels.push(scene.labels[i]);
    }
    DerivedSource {
        cloud: PointCloud::new(points)
            .with_frame_id(format!("{}_source_{seed}", scene.cloud.frame_id)),
        labels,
        gt: *transform,
    }
}

/// Ground recall and object-point retention of a ground labelling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundScores {
    pub ground_recall: f64,
    pub object_retention: f64,
}

pub fn ground_scores(labels: &[Label], is_ground: &[bool]) -> GroundScores {
    let (mut g, mut g_hit, mut o, mut o_kept) = (0usize, 0usize, 0usize, 0usize);
    for (l, &ground) in labels.iter().zip(is_ground) {
        match l {
            Label::Ground => {
                g += 1;
                g_hit += ground as usize;
            }
            Label::Object(_) => {
                o += 1;
                o_kept += !ground as usize;
            }
            Label::Clutter => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    GroundScores {
        ground_recall: ratio(g_hit, g),
        object_retention: ratio(o_kept, o),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SceneSpec {
        SceneSpec {
            seed,
            extent: [30.0, 30.0],
            trees: 10,
            bushes: 5,
            boxes: 0,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn deterministic_and_counted() {
        let a = generate_scene(&small(4)).unwrap();
        let b = generate_scene(&small(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.objects.len(), 15);
        assert_ne!(generate_scene(&small(5)).unwrap().cloud, a.cloud);
    }

    #[test]
    fn object_sizes_within_bounds() {
        let spec = SceneSpec::forest(1);
        let s = generate_scene(&spec).unwrap();
        for o in &s.objects {
            let n = s.object_point_count(o.id);
            assert!(
                (spec.object_points[0]..=spec.object_points[1]).contains(&n),
                "{n}"
            );
        }
    }

    #[test]
    fn labelled_points_inside_bounds() {
        let s = generate_scene(&SceneSpec::forest(2)).unwrap();
        let slack = 3.0 * s.surface_noise + 1e-9;
        for (p, l) in s.cloud.iter().zip(&s.labels) {
            if let Label::Object(id) = l {
                let o = &s.objects[*id as usize];
                let r = ((p.x - o.center[0]).powi(2) + (p.y - o.center[1]).powi(2)).sqrt();
                assert!(r <= o.radius + slack * 2.0);
                let dz = p.z - o.center[2];
                assert!(dz >= o.z_range[0] - slack && dz <= o.z_range[1] + slack);
            }
        }
    }

    #[test]
    fn infeasible_spacing_is_reported() {
        let spec = SceneSpec {
            extent: [8.0, 8.0],
            trees: 40,
            bushes: 0,
            boxes: 0,
            ..SceneSpec::default()
        };
        assert!(matches!(
            generate_scene(&spec),
            Err(Error::InfeasibleSpacing { .. })
        ));
    }

    #[test]
    fn tight_spacing_needs_opt_in() {
        let mut spec = small(0);
        spec.min_spacing = 0.1;
        assert!(spec.validate().is_err());
        spec.allow_tight_spacing = true;
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn unperturbed_identity_source_is_the_scene() {
        let s = generate_scene(&small(3)).unwrap();
        let d = derive_source(&s, &RigidTransform::identity(), &Perturbation::none(), 9);
        assert_eq!(d.cloud.points, s.cloud.points);
        assert_eq!(d.labels, s.labels);
    }

    #[test]
    fn occlusion_removes_its_share() {
        let s = generate_scene(&small(6)).unwrap();
        let p = Perturbation {
            occlusion_sector_deg: 120.0,
            ..Perturbation::none()
        };
        let d = derive_source(&s, &RigidTransform::identity(), &p, 1);
        let before: usize = s
            .labels
            .iter()
            .filter(|l| matches!(l, Label::Object(_)))
            .count();
        let after: usize = d
            .labels
            .iter()
            .filter(|l| matches!(l, Label::Object(_)))
            .count();
        let kept = after as f64 / before as f64;
        assert!((kept - 2.0 / 3.0).abs() < 0.1, "{kept}");
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = SceneSpec::forest(8);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<SceneSpec>(&text).unwrap(), spec);
        let partial: SceneSpec =
            serde_json::from_str(r#"{"seed": 3, "terrain": {"kind": "slope", "deg": 5}}"#).unwrap();
        assert_eq!(partial.trees, 18);
    }
}
