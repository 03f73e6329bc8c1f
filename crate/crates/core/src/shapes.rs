//! Synthetic point cloud benchmark: twelve surface primitives sampled
//! area-uniformly, with an optional corruption stage (half-space occlusion,
//! uniform outliers, random global scale) that imitates real scans.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoder::{normalize_cloud, PointCloud};
use crate::error::{Error, Result};
use crate::seed::{self, tags, Rng};

pub type Point = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimitiveKind {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Pyramid,
    Ellipsoid,
    Capsule,
    Disk,
    Helix,
    Cross,
    LBracket,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 12] = [
        PrimitiveKind::Sphere,
        PrimitiveKind::Cube,
        PrimitiveKind::Cylinder,
        PrimitiveKind::Cone,
        PrimitiveKind::Torus,
        PrimitiveKind::Pyramid,
        PrimitiveKind::Ellipsoid,
        PrimitiveKind::Capsule,
        PrimitiveKind::Disk,
        PrimitiveKind::Helix,
        PrimitiveKind::Cross,
        PrimitiveKind::LBracket,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Sphere => "sphere",
            PrimitiveKind::Cube => "cube",
            PrimitiveKind::Cylinder => "cylinder",
            PrimitiveKind::Cone => "cone",
            PrimitiveKind::Torus => "torus",
            PrimitiveKind::Pyramid => "pyramid",
            PrimitiveKind::Ellipsoid => "ellipsoid",
            PrimitiveKind::Capsule => "capsule",
            PrimitiveKind::Disk => "disk",
            PrimitiveKind::Helix => "helix",
            PrimitiveKind::Cross => "cross",
            PrimitiveKind::LBracket => "l-bracket",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Parameter(format!("unknown primitive kind '{name}'")))
    }

    /// Names of the shape parameters, in the order `ShapeSpec::params` uses.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            PrimitiveKind::Sphere => &["radius"],
            PrimitiveKind::Cube => &["half_width"],
            PrimitiveKind::Cylinder => &["radius", "half_height"],
            PrimitiveKind::Cone => &["radius", "height"],
            PrimitiveKind::Torus => &["major_radius", "tube_ratio"],
            PrimitiveKind::Pyramid => &["half_base", "height"],
            PrimitiveKind::Ellipsoid => &["ax", "ay", "az"],
            PrimitiveKind::Capsule => &["radius", "half_length"],
            PrimitiveKind::Disk => &["radius"],
            PrimitiveKind::Helix => &["radius", "pitch", "turns", "tube"],
            PrimitiveKind::Cross => &["arm_half_length", "arm_half_width"],
            PrimitiveKind::LBracket => &["leg_length", "thickness", "depth"],
        }
    }

    fn default_ranges(self) -> Vec<Interval> {
        let r = |lo, hi| Interval { lo, hi };
        match self {
            PrimitiveKind::Sphere => vec![r(0.8, 1.2)],
            PrimitiveKind::Cube => vec![r(0.8, 1.2)],
            PrimitiveKind::Cylinder => vec![r(0.4, 0.6), r(0.8, 1.2)],
            PrimitiveKind::Cone => vec![r(0.5, 0.7), r(1.2, 1.8)],
            PrimitiveKind::Torus => vec![r(0.8, 1.0), r(0.25, 0.4)],
            PrimitiveKind::Pyramid => vec![r(0.6, 0.8), r(1.0, 1.4)],
            PrimitiveKind::Ellipsoid => vec![r(1.0, 1.3), r(0.5, 0.7), r(0.3, 0.45)],
            PrimitiveKind::Capsule => vec![r(0.3, 0.4), r(0.6, 0.9)],
            PrimitiveKind::Disk => vec![r(0.9, 1.1)],
            PrimitiveKind::Helix => vec![r(0.6, 0.8), r(0.3, 0.5), r(2.5, 3.5), r(0.06, 0.1)],
            PrimitiveKind::Cross => vec![r(0.8, 1.0), r(0.15, 0.25)],
            PrimitiveKind::LBracket => vec![r(0.8, 1.1), r(0.15, 0.25), r(0.3, 0.5)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..self.hi)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionProfile {
    pub occlusion: f64,
    pub outliers: f64,
    pub scale: Interval,
}

impl CorruptionProfile {
    pub fn none() -> Self {
        CorruptionProfile {
            occlusion: 0.0,
            outliers: 0.0,
            scale: Interval::point(1.0),
        }
    }

    pub fn scan_like() -> Self {
        CorruptionProfile {
            occlusion: 0.3,
            outliers: 0.05,
            scale: Interval { lo: 0.7, hi: 1.3 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("occlusion", self.occlusion), ("outlier", self.outliers)] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Parameter(format!("{name} fraction {f} outside [0, 1)")));
            }
        }
        if !self.scale.is_valid() || self.scale.lo <= 0.0 {
            return Err(Error::Parameter(format!("invalid scale range {:?}", self.scale)));
        }
        Ok(())
    }

    fn is_identity(&self) -> bool {
        self.occlusion == 0.0 && self.outliers == 0.0 && self.scale == Interval::point(1.0)
    }
}

/// Clean CAD-like sampling or the corrupted scan-like regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Clean,
    Corrupted,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Clean => "clean",
            Regime::Corrupted => "corrupted",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "clean" => Ok(Regime::Clean),
            "corrupted" => Ok(Regime::Corrupted),
            other => Err(Error::Parameter(format!("unknown regime '{other}'"))),
        }
    }

    pub fn jitter(self) -> f64 {
        match self {
            Regime::Clean => 0.005,
            Regime::Corrupted => 0.02,
        }
    }

    pub fn profile(self) -> CorruptionProfile {
        match self {
            Regime::Clean => CorruptionProfile::none(),
            Regime::Corrupted => CorruptionProfile::scan_like(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: PrimitiveKind,
    pub params: Vec<Interval>,
    pub jitter_sigma: f64,
    pub corruption: CorruptionProfile,
}

impl ShapeSpec {
    pub fn new(kind: PrimitiveKind) -> Self {
        ShapeSpec {
            kind,
            params: kind.default_ranges(),
            jitter_sigma: 0.0,
            corruption: CorruptionProfile::none(),
        }
    }

    pub fn for_regime(kind: PrimitiveKind, regime: Regime) -> Self {
        ShapeSpec {
            jitter_sigma: regime.jitter(),
            corruption: regime.profile(),
            ..Self::new(kind)
        }
    }

    /// Pins every parameter to a single value.
    pub fn fixed(kind: PrimitiveKind, values: &[f64]) -> Self {
        ShapeSpec {
            params: values.iter().map(|&v| Interval::point(v)).collect(),
            ..Self::new(kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let want = self.kind.param_names().len();
        if self.params.len() != want {
            return Err(Error::Parameter(format!(
                "{} takes {want} parameters, got {}",
                self.kind.name(),
                self.params.len()
            )));
        }
        if let Some(bad) = self.params.iter().find(|i| !i.is_valid() || i.lo <= 0.0) {
            return Err(Error::Parameter(format!("invalid parameter range {bad:?} for {}", self.kind.name())));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::Parameter(format!("jitter sigma {} must be >= 0", self.jitter_sigma)));
        }
        self.corruption.validate()
    }
}

fn unit_vector(rng: &mut Rng) -> Point {
    loop {
        let v: Point = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if n > 1e-9 {
            return v.map(|x| x / n);
        }
    }
}

/// Axis-aligned box `center ± half`.
#[derive(Debug, Clone, Copy)]
struct Box3 {
    center: Point,
    half: Point,
}

impl Box3 {
    fn face_areas(&self) -> [f64; 3] {
        let [hx, hy, hz] = self.half;
        [4.0 * hy * hz, 4.0 * hx * hz, 4.0 * hx * hy]
    }

    fn area(&self) -> f64 {
        2.0 * self.face_areas().iter().sum::<f64>()
    }

    fn sample_surface(&self, rng: &mut Rng) -> Point {
        let areas = self.face_areas();
        let total: f64 = areas.iter().sum();
        let mut pick = rng.gen_range(0.0..total);
        let mut axis = 2;
        for (a, &area) in areas.iter().enumerate() {
            if pick < area {
                axis = a;
                break;
            }
            pick -= area;
        }
        let mut p = [0.0; 3];
        for (a, v) in p.iter_mut().enumerate() {
            *v = if a == axis {
                if rng.gen_bool(0.5) {
                    self.half[a]
                } else {
                    -self.half[a]
                }
            } else {
                rng.gen_range(-self.half[a]..self.half[a])
            };
        }
        [p[0] + self.center[0], p[1] + self.center[1], p[2] + self.center[2]]
    }

    fn strictly_contains(&self, p: &Point) -> bool {
        (0..3).all(|a| (p[a] - self.center[a]).abs() < self.half[a] - 1e-12)
    }
}

/// Surface of a union of boxes: area-weighted box choice, points buried
/// inside another box are rejected.
fn sample_box_union(boxes: &[Box3], rng: &mut Rng) -> Point {
    let total: f64 = boxes.iter().map(|b| b.area()).sum();
    loop {
        let mut pick = rng.gen_range(0.0..total);
        let mut chosen = boxes.len() - 1;
        for (i, b) in boxes.iter().enumerate() {
            if pick < b.area() {
                chosen = i;
                break;
            }
            pick -= b.area();
        }
        let p = boxes[chosen].sample_surface(rng);
        let buried = boxes
            .iter()
            .enumerate()
            .any(|(i, b)| i != chosen && b.strictly_contains(&p));
        if !buried {
            return p;
        }
    }
}

/// Uniform point on triangle `abc`.
fn sample_triangle(a: Point, b: Point, c: Point, rng: &mut Rng) -> Point {
    let (u, v): (f64, f64) = (rng.gen(), rng.gen());
    let su = libm::sqrt(u);
    let (wa, wb, wc) = (1.0 - su, su * (1.0 - v), su * v);
    [0, 1, 2].map(|i| wa * a[i] + wb * b[i] + wc * c[i])
}

fn triangle_area(a: Point, b: Point, c: Point) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let x = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    0.5 * libm::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
}

fn choose_weighted(weights: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut pick = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if pick < *w {
            return i;
        }
        pick -= w;
    }
    weights.len() - 1
}

fn sample_surface(kind: PrimitiveKind, p: &[f64], rng: &mut Rng) -> Point {
    match kind {
        PrimitiveKind::Sphere => unit_vector(rng).map(|v| v * p[0]),
        PrimitiveKind::Cube => Box3 {
            center: [0.0; 3],
            half: [p[0]; 3],
        }
        .sample_surface(rng),
        PrimitiveKind::Cylinder => {
            let (r, h) = (p[0], p[1]);
            let part = choose_weighted(&[2.0 * PI * r * 2.0 * h, PI * r * r, PI * r * r], rng);
            let theta = rng.gen_range(0.0..2.0 * PI);
            let (s, c) = libm::sincos(theta);
            match part {
                0 => [r * c, r * s, rng.gen_range(-h..h)],
                k => {
                    let rho = r * libm::sqrt(rng.gen::<f64>());
                    [rho * c, rho * s, if k == 1 { h } else { -h }]
                }
            }
        }
        PrimitiveKind::Cone => {
            // apex at z = height/2, base at z = -height/2
            let (r, h) = (p[0], p[1]);
            let slant = libm::sqrt(r * r + h * h);
            let part = choose_weighted(&[PI * r * slant, PI * r * r], rng);
            let theta = rng.gen_range(0.0..2.0 * PI);
            let (s, c) = libm::sincos(theta);
            let t = libm::sqrt(rng.gen::<f64>());
            if part == 0 {
                [t * r * c, t * r * s, h / 2.0 - t * h]
            } else {
                [t * r * c, t * r * s, -h / 2.0]
            }
        }
        PrimitiveKind::Torus => {
            let big = p[0];
            let small = p[0] * p[1];
            // area element is proportional to (R + r cos v)
            loop {
                let u = rng.gen_range(0.0..2.0 * PI);
                let v = rng.gen_range(0.0..2.0 * PI);
                let w = (big + small * libm::cos(v)) / (big + small);
                if rng.gen::<f64>() < w {
                    let ring = big + small * libm::cos(v);
                    break [ring * libm::cos(u), ring * libm::sin(u), small * libm::sin(v)];
                }
            }
        }
        PrimitiveKind::Pyramid => {
            let (b, h) = (p[0], p[1]);
            let z0 = -h / 3.0;
            let apex = [0.0, 0.0, z0 + h];
            let corners = [[-b, -b, z0], [b, -b, z0], [b, b, z0], [-b, b, z0]];
            let mut tris: Vec<[Point; 3]> = (0..4).map(|i| [corners[i], corners[(i + 1) % 4], apex]).collect();
            tris.push([corners[0], corners[1], corners[2]]);
            tris.push([corners[0], corners[2], corners[3]]);
            let areas: Vec<f64> = tris.iter().map(|t| triangle_area(t[0], t[1], t[2])).collect();
            let t = tris[choose_weighted(&areas, rng)];
            sample_triangle(t[0], t[1], t[2], rng)
        }
        PrimitiveKind::Ellipsoid => {
            let (a, b, c) = (p[0], p[1], p[2]);
            let gmax = (b * c).max(a * c).max(a * b);
            loop {
                let n = unit_vector(rng);
                let (gx, gy, gz) = (b * c * n[0], a * c * n[1], a * b * n[2]);
                let g = libm::sqrt(gx * gx + gy * gy + gz * gz);
                if rng.gen::<f64>() * gmax < g {
                    break [a * n[0], b * n[1], c * n[2]];
                }
            }
        }
        PrimitiveKind::Capsule => {
            let (r, h) = (p[0], p[1]);
            let part = choose_weighted(&[2.0 * PI * r * 2.0 * h, 4.0 * PI * r * r], rng);
            if part == 0 {
                let theta = rng.gen_range(0.0..2.0 * PI);
                [r * libm::cos(theta), r * libm::sin(theta), rng.gen_range(-h..h)]
            } else {
                let n = unit_vector(rng);
                let shift = if n[2] >= 0.0 { h } else { -h };
                [r * n[0], r * n[1], r * n[2] + shift]
            }
        }
        PrimitiveKind::Disk => {
            let r = p[0] * libm::sqrt(rng.gen::<f64>());
            let theta = rng.gen_range(0.0..2.0 * PI);
            [r * libm::cos(theta), r * libm::sin(theta), 0.0]
        }
        PrimitiveKind::Helix => {
            let (radius, pitch, turns, tube) = (p[0], p[1], p[2], p[3]);
            let t = rng.gen_range(0.0..turns * 2.0 * PI);
            let height = pitch * turns;
            let center = [radius * libm::cos(t), radius * libm::sin(t), pitch * t / (2.0 * PI) - height / 2.0];
            // tube cross-section in the plane spanned by the radial and vertical directions
            let phi = rng.gen_range(0.0..2.0 * PI);
            let radial = [libm::cos(t), libm::sin(t), 0.0];
            let (s, c) = libm::sincos(phi);
            [
                center[0] + tube * c * radial[0],
                center[1] + tube * c * radial[1],
                center[2] + tube * s,
            ]
        }
        PrimitiveKind::Cross => {
            let (len, w) = (p[0], p[1]);
            let boxes = [
                Box3 {
                    center: [0.0; 3],
                    half: [len, w, w],
                },
                Box3 {
                    center: [0.0; 3],
                    half: [w, len, w],
                },
            ];
            sample_box_union(&boxes, rng)
        }
        PrimitiveKind::LBracket => {
            let (leg, t, d) = (p[0], p[1], p[2]);
            let boxes = [
                Box3 {
                    center: [leg / 2.0, t / 2.0, 0.0],
                    half: [leg / 2.0, t / 2.0, d / 2.0],
                },
                Box3 {
                    center: [t / 2.0, leg / 2.0, 0.0],
                    half: [t / 2.0, leg / 2.0, d / 2.0],
                },
            ];
            sample_box_union(&boxes, rng)
        }
    }
}

/// Samples `n_points` on the primitive's surface with per-instance parameter
/// jitter and Gaussian coordinate noise. No corruption is applied here.
pub fn generate_cloud(spec: &ShapeSpec, n_points: usize, rng: &mut Rng) -> Result<PointCloud> {
    spec.validate()?;
    let params: Vec<f64> = spec.params.iter().map(|i| i.sample(rng)).collect();
    let noise = Normal::new(0.0, spec.jitter_sigma).map_err(|e| Error::Parameter(e.to_string()))?;
    let points = (0..n_points)
        .map(|_| {
            let mut p = sample_surface(spec.kind, &params, rng);
            if spec.jitter_sigma > 0.0 {
                p.iter_mut().for_each(|v| *v += noise.sample(rng));
            }
            p
        })
        .collect();
    Ok(PointCloud::new(points, None, spec.kind.name()))
}

/// Round-to-nearest count of `fraction * n`.
pub fn fraction_count(fraction: f64, n: usize) -> usize {
    libm::round(fraction * n as f64) as usize
}

/// Drops the `round(fraction * n)` points lying farthest along `direction`,
/// i.e. the points inside a half-space. Survivors keep their order.
pub fn occlude(points: &[Point], fraction: f64, direction: Point) -> Vec<Point> {
    let drop = fraction_count(fraction, points.len()).min(points.len().saturating_sub(1));
    let proj = |p: &Point| p[0] * direction[0] + p[1] * direction[1] + p[2] * direction[2];
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| proj(&points[j]).total_cmp(&proj(&points[i])).then(i.cmp(&j)));
    let mut keep = vec![true; points.len()];
    order.iter().take(drop).for_each(|&i| keep[i] = false);
    points
        .iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(*p))
        .collect()
}

/// Applies occlusion (then resamples survivors back to the original size),
/// outlier replacement inside the bounding box, and a global scale.
pub fn corrupt_cloud(cloud: &PointCloud, profile: &CorruptionProfile, rng: &mut Rng) -> Result<PointCloud> {
    profile.validate()?;
    let mut out = cloud.clone();
    if profile.is_identity() || cloud.is_empty() {
        return Ok(out);
    }
    let n = cloud.len();
    if profile.occlusion > 0.0 {
        let dir = unit_vector(rng);
        let mut kept = occlude(&cloud.points, profile.occlusion, dir);
        let survivors = kept.len();
        while kept.len() < n {
            let pick = kept[rng.gen_range(0..survivors)];
            kept.push(pick);
        }
        out.points = kept;
    }
    if profile.outliers > 0.0 {
        let count = fraction_count(profile.outliers, n);
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &out.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        for i in index::sample(rng, n, count) {
            out.points[i] = [0, 1, 2].map(|a| if hi[a] > lo[a] { rng.gen_range(lo[a]..hi[a]) } else { lo[a] });
        }
    }
    let s = profile.scale.sample(rng);
    out.points.iter_mut().for_each(|p| p.iter_mut().for_each(|v| *v *= s));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub seed: u64,
    pub regime: Option<Regime>,
    pub n_points: usize,
    pub per_class: usize,
    pub specs: Vec<ShapeSpec>,
    pub class_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub clouds: Vec<PointCloud>,
    pub class_names: Vec<String>,
    pub manifest: Option<GenerationManifest>,
}

pub fn source_id(class_name: &str, index: usize) -> String {
    format!("{class_name}/{index:05}")
}

/// Builds `per_class` clouds for every spec, class-major. Cloud `i` draws from
/// its own seed stream, so the manifest alone reproduces the data.
pub fn generate_dataset(specs: &[ShapeSpec], per_class: usize, n_points: usize, seed: u64) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::Parameter("per_class must be >= 1".into()));
    }
    if specs.is_empty() {
        return Err(Error::Parameter("no shape specs".into()));
    }
    if n_points < crate::encoder::MIN_POINTS {
        return Err(Error::Parameter(format!(
            "n_points must be >= {}, got {n_points}",
            crate::encoder::MIN_POINTS
        )));
    }
    let mut clouds = Vec::with_capacity(specs.len() * per_class);
    for (label, spec) in specs.iter().enumerate() {
        for j in 0..per_class {
            let idx = label * per_class + j;
            let mut rng = seed::rng(seed, tags::GENERATE, idx as u64);
            let raw = generate_cloud(spec, n_points, &mut rng)?;
            let mut c = corrupt_cloud(&raw, &spec.corruption, &mut rng)?;
            c.label = Some(label);
            c.source_id = source_id(spec.kind.name(), idx);
            clouds.push(c);
        }
    }
    Ok(Dataset {
        clouds,
        class_names: specs.iter().map(|s| s.kind.name().to_string()).collect(),
        manifest: Some(GenerationManifest {
            seed,
            regime: None,
            n_points,
            per_class,
            specs: specs.to_vec(),
            class_counts: vec![per_class; specs.len()],
        }),
    })
}

/// The standard benchmark: the first `classes` primitives in one regime.
pub fn generate_benchmark(classes: usize, per_class: usize, n_points: usize, regime: Regime, seed: u64) -> Result<Dataset> {
    if classes < 2 || classes > PrimitiveKind::ALL.len() {
        return Err(Error::Parameter(format!("classes must be in 2..=12, got {classes}")));
    }
    let specs: Vec<ShapeSpec> = PrimitiveKind::ALL[..classes]
        .iter()
        .map(|&k| ShapeSpec::for_regime(k, regime))
        .collect();
    let mut d = generate_dataset(&specs, per_class, n_points, seed)?;
    if let Some(m) = &mut d.manifest {
        m.regime = Some(regime);
    }
    Ok(d)
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn regime(&self) -> Option<Regime> {
        self.manifest.as_ref().and_then(|m| m.regime)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes();
        let mut counts = vec![0usize; c];
        for cl in &self.clouds {
            match cl.label {
                Some(l) if l < c => counts[l] += 1,
                other => {
                    return Err(Error::Validation(format!(
                        "cloud {} has label {other:?} outside 0..{c}",
                        cl.source_id
                    )))
                }
            }
        }
        if let Some(m) = &self.manifest {
            if m.class_counts != counts {
                return Err(Error::Validation(format!(
                    "class counts {counts:?} differ from manifest {:?}",
                    m.class_counts
                )));
            }
        }
        Ok(())
    }

    /// Indices of clouds per class label.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.num_classes()];
        for (i, c) in self.clouds.iter().enumerate() {
            if let Some(l) = c.label {
                if l < by.len() {
                    by[l].push(i);
                }
            }
        }
        by
    }

    /// Keeps only `classes` (global ids), relabelled `0..classes.len()` in the
    /// given order.
    pub fn restrict(&self, classes: &[usize]) -> Result<Dataset> {
        let mut remap = vec![None; self.num_classes()];
        for (new, &old) in classes.iter().enumerate() {
            if old >= remap.len() {
                return Err(Error::Index {
                    index: old,
                    bound: remap.len(),
                });
            }
            remap[old] = Some(new);
        }
        let clouds = self
            .clouds
            .iter()
            .filter_map(|c| {
                let l = remap[c.label?]?;
                let mut c = c.clone();
                c.label = Some(l);
                Some(c)
            })
            .collect();
        Ok(Dataset {
            clouds,
            class_names: classes.iter().map(|&i| self.class_names[i].clone()).collect(),
            manifest: None,
        })
    }

    /// Every cloud centered and scaled to the unit ball.
    pub fn normalized(&self) -> Result<Dataset> {
        let clouds = self
            .clouds
            .iter()
            .map(|c| normalize_cloud(c).map(|n| n.cloud))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            clouds,
            class_names: self.class_names.clone(),
            manifest: self.manifest.clone(),
        })
    }

    pub fn bitwise_eq(&self, other: &Dataset) -> bool {
        self.class_names == other.class_names
            && self.clouds.len() == other.clouds.len()
            && self
                .clouds
                .iter()
                .zip(&other.clouds)
                .all(|(a, b)| a.bitwise_eq(b) && a.source_id == b.source_id)
    }
}
