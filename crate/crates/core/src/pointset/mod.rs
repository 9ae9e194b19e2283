//! Labeled point sets: ingestion, interior/exterior sampling, implicit
//! labels, coordinate normalization and train/test splitting.

mod io;

pub use io::{load_cloud, load_points, read_labeled, write_labeled, PointCloud, PointFormat};

use std::ops::{Add, Mul, Sub};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shrink factor used for interior points of synthetic shapes.
pub const DEFAULT_SHRINK: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { x: a[0], y: a[1], z: a[2] }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Point3) -> Point3 {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn distance(self, o: Point3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Self {
        Self { min, max }
    }

    pub fn cube(half: f64) -> Self {
        Self::new(Point3::new(-half, -half, -half), Point3::new(half, half, half))
    }

    /// Bounding box of a point list, `None` when empty.
    pub fn of_points(points: &[Point3]) -> Option<Self> {
        let first = *points.first()?;
        let mut bb = Aabb::new(first, first);
        for p in &points[1..] {
            bb.min = Point3::new(bb.min.x.min(p.x), bb.min.y.min(p.y), bb.min.z.min(p.z));
            bb.max = Point3::new(bb.max.x.max(p.x), bb.max.y.max(p.y), bb.max.z.max(p.z));
        }
        Some(bb)
    }

    pub fn extent(&self) -> Point3 {
        self.max - self.min
    }

    pub fn center(&self) -> Point3 {
        (self.min + self.max) * 0.5
    }

    pub fn longest_extent(&self) -> f64 {
        let e = self.extent();
        e.x.max(e.y).max(e.z)
    }

    pub fn contains(&self, p: Point3) -> bool {
        p.x >= self.min.x
            && p.y >= self.min.y
            && p.z >= self.min.z
            && p.x <= self.max.x
            && p.y <= self.max.y
            && p.z <= self.max.z
    }

    /// Grows every side by `fraction / 2` of the longest extent, so the
    /// longest axis ends up `1 + fraction` times as long.
    pub fn inflated(&self, fraction: f64) -> Aabb {
        let m = 0.5 * fraction * self.longest_extent();
        let d = Point3::new(m, m, m);
        Aabb::new(self.min - d, self.max + d)
    }
}

/// Affine map `p -> scale * p + offset` applied to raw coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: f64,
    pub offset: Point3,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization { scale: 1.0, offset: Point3::ORIGIN };

    pub fn apply(&self, p: Point3) -> Point3 {
        p * self.scale + self.offset
    }

    pub fn invert(&self, q: Point3) -> Point3 {
        (q - self.offset) * (1.0 / self.scale)
    }

    /// The map equivalent to applying `self` first and then `next`.
    pub fn then(&self, next: &Normalization) -> Normalization {
        Normalization { scale: next.scale * self.scale, offset: next.apply(self.offset) }
    }
}

impl Default for Normalization {
    fn default() -> Self {
        Self::IDENTITY
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Surface,
    Interior,
    Exterior,
}

impl Category {
    /// Implicit label: interior +1, surface 0, exterior -1.
    pub fn label(self) -> i8 {
        match self {
            Category::Surface => 0,
            Category::Interior => 1,
            Category::Exterior => -1,
        }
    }

    pub fn from_label(label: i64) -> Option<Category> {
        match label {
            0 => Some(Category::Surface),
            1 => Some(Category::Interior),
            -1 => Some(Category::Exterior),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub position: Point3,
    pub category: Category,
}

impl LabeledPoint {
    pub fn label(&self) -> i8 {
        self.category.label()
    }
}

/// Ordered labeled points with per-category counts, bounds and the
/// normalization that produced the stored coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    points: Vec<LabeledPoint>,
    n_s: usize,
    n_i: usize,
    n_e: usize,
    bbox: Option<Aabb>,
    normalization: Normalization,
}

impl PointSet {
    pub fn from_points(points: Vec<LabeledPoint>) -> Self {
        Self::with_normalization(points, Normalization::IDENTITY)
    }

    fn with_normalization(points: Vec<LabeledPoint>, normalization: Normalization) -> Self {
        let (mut n_s, mut n_i, mut n_e) = (0, 0, 0);
        for p in &points {
            match p.category {
                Category::Surface => n_s += 1,
                Category::Interior => n_i += 1,
                Category::Exterior => n_e += 1,
            }
        }
        let positions: Vec<Point3> = points.iter().map(|p| p.position).collect();
        let bbox = Aabb::of_points(&positions);
        Self { points, n_s, n_i, n_e, bbox, normalization }
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_surface(&self) -> usize {
        self.n_s
    }

    pub fn n_interior(&self) -> usize {
        self.n_i
    }

    pub fn n_exterior(&self) -> usize {
        self.n_e
    }

    pub fn bbox(&self) -> Option<Aabb> {
        self.bbox
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn positions(&self) -> Vec<Point3> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.points.iter().map(|p| f64::from(p.label())).collect()
    }

    pub fn positions_of(&self, category: Category) -> Vec<Point3> {
        self.points.iter().filter(|p| p.category == category).map(|p| p.position).collect()
    }

    /// Rescales coordinates into `[-1, 1]^3`, composing the map with any
    /// normalization already applied.
    pub fn normalized(&self) -> Result<PointSet> {
        let (_, map) = normalize_unit_cube(&self.positions())?;
        let points = self
            .points
            .iter()
            .map(|p| LabeledPoint { position: map.apply(p.position), category: p.category })
            .collect();
        Ok(Self::with_normalization(points, self.normalization.then(&map)))
    }
}

/// Maps points into `[-1, 1]^3` so the longest bounding-box axis spans the
/// full interval and the aspect ratio is preserved.
pub fn normalize_unit_cube(points: &[Point3]) -> Result<(Vec<Point3>, Normalization)> {
    if let Some(p) = points.iter().find(|p| !p.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite coordinate {p:?}")));
    }
    let bbox = Aabb::of_points(points)
        .ok_or_else(|| Error::DegenerateCloud("no points".into()))?;
    let longest = bbox.longest_extent();
    if longest <= 0.0 {
        return Err(Error::DegenerateCloud("all points coincide".into()));
    }
    let scale = 2.0 / longest;
    let map = Normalization { scale, offset: bbox.center() * -scale };
    Ok((points.iter().map(|&p| map.apply(p)).collect(), map))
}

/// Assigns implicit labels: surface 0, interior +1, exterior -1, in that order.
pub fn label_points(
    surface: &[Point3],
    interior: &[Point3],
    exterior: &[Point3],
) -> Result<PointSet> {
    if surface.is_empty() {
        return Err(Error::EmptySurface);
    }
    let points = [(surface, Category::Surface), (interior, Category::Interior), (exterior, Category::Exterior)]
        .into_iter()
        .flat_map(|(pts, category)| pts.iter().map(move |&position| LabeledPoint { position, category }))
        .collect();
    Ok(PointSet::from_points(points))
}

/// How off-surface samples are derived from surface points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SampleMode {
    /// `c + factor * (p - c)` about the surface centroid `c`. Interior
    /// sampling needs `factor` in (0, 1), exterior sampling `factor > 1`.
    CentroidScale(f64),
    /// Move each chosen point by a fixed distance along its unit normal,
    /// inward for interior samples and outward for exterior ones.
    NormalOffset(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Interior,
    Exterior,
}

pub fn centroid(points: &[Point3]) -> Point3 {
    let sum = points.iter().fold(Point3::ORIGIN, |acc, &p| acc + p);
    sum * (1.0 / points.len() as f64)
}

/// Draws `count` points offset from randomly chosen surface points (chosen
/// uniformly with replacement).
pub fn sample_offset_points(
    surface: &[Point3],
    normals: Option<&[Point3]>,
    count: usize,
    mode: SampleMode,
    side: Side,
    seed: u64,
) -> Result<Vec<Point3>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if surface.is_empty() {
        return Err(Error::EmptySurface);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        SampleMode::CentroidScale(factor) => {
            let ok = match side {
                Side::Interior => factor > 0.0 && factor < 1.0,
                Side::Exterior => factor > 1.0 && factor.is_finite(),
            };
            if !ok {
                return Err(Error::InvalidParameter(format!(
                    "centroid scale factor {factor} invalid for {side:?} sampling"
                )));
            }
            let c = centroid(surface);
            Ok((0..count)
                .map(|_| {
                    let p = surface[rng.random_range(0..surface.len())];
                    c + (p - c) * factor
                })
                .collect())
        }
        SampleMode::NormalOffset(distance) => {
            let normals = normals.ok_or(Error::MissingNormals)?;
            if normals.len() != surface.len() {
                return Err(Error::LengthMismatch { left: surface.len(), right: normals.len() });
            }
            if !(distance > 0.0 && distance.is_finite()) {
                return Err(Error::InvalidParameter(format!("normal offset {distance} must be > 0")));
            }
            let signed = match side {
                Side::Interior => -distance,
                Side::Exterior => distance,
            };
            (0..count)
                .map(|_| {
                    let k = rng.random_range(0..surface.len());
                    let n = normals[k];
                    let len = n.norm();
                    if !(len > 0.0 && len.is_finite()) {
                        return Err(Error::InvalidParameter(format!("zero normal at vertex {k}")));
                    }
                    Ok(surface[k] + n * (signed / len))
                })
                .collect()
        }
    }
}

pub fn sample_interior(
    surface: &[Point3],
    normals: Option<&[Point3]>,
    n_i: usize,
    mode: SampleMode,
    seed: u64,
) -> Result<Vec<Point3>> {
    sample_offset_points(surface, normals, n_i, mode, Side::Interior, seed)
}

pub fn sample_exterior(
    surface: &[Point3],
    normals: Option<&[Point3]>,
    n_e: usize,
    mode: SampleMode,
    seed: u64,
) -> Result<Vec<Point3>> {
    sample_offset_points(surface, normals, n_e, mode, Side::Exterior, seed)
}

/// Stratified split. Each category contributes its proportional share to
/// the test set, rounded by largest remainder so the total is
/// `round(len * test_fraction)`. Both halves keep the original order.
pub fn split_train_test(
    ps: &PointSet,
    test_fraction: f64,
    seed: u64,
) -> Result<(PointSet, PointSet)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidParameter(format!(
            "test fraction {test_fraction} outside [0, 1)"
        )));
    }
    let categories = [Category::Surface, Category::Interior, Category::Exterior];
    let groups: Vec<Vec<usize>> = categories
        .iter()
        .map(|&c| (0..ps.len()).filter(|&i| ps.points[i].category == c).collect())
        .collect();

    let total = (ps.len() as f64 * test_fraction).round() as usize;
    let ideal: Vec<f64> = groups.iter().map(|g| g.len() as f64 * test_fraction).collect();
    let mut quota: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    // Largest fractional part first; ties by category order.
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut remaining = total.saturating_sub(quota.iter().sum());
    for &k in &order {
        if remaining == 0 {
            break;
        }
        if quota[k] < groups[k].len() {
            quota[k] += 1;
            remaining -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; ps.len()];
    for (group, &q) in groups.iter().zip(&quota) {
        let mut shuffled = group.clone();
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[..q] {
            in_test[i] = true;
        }
    }
    let pick = |want: bool| {
        let pts = ps
            .points
            .iter()
            .zip(&in_test)
            .filter(|(_, &t)| t == want)
            .map(|(p, _)| *p)
            .collect();
        PointSet::with_normalization(pts, ps.normalization)
    };
    Ok((pick(false), pick(true)))
}

/// Uniform random samples on a sphere about the origin, with interior
/// points from centroid shrinking.
pub fn synth_sphere(n_s: usize, n_i: usize, radius: f64, seed: u64) -> Result<PointSet> {
    synth_sphere_with_exterior(n_s, n_i, 0, radius, seed)
}

/// As [`synth_sphere`], plus `n_e` exterior points at 1.5x the surface
/// distance from the centroid.
pub fn synth_sphere_with_exterior(
    n_s: usize,
    n_i: usize,
    n_e: usize,
    radius: f64,
    seed: u64,
) -> Result<PointSet> {
    if n_s == 0 {
        return Err(Error::EmptySurface);
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidParameter(format!("radius {radius} must be > 0")));
    }
    let surface = sphere_surface(n_s, radius, seed);
    let interior = sample_interior(
        &surface,
        None,
        n_i,
        SampleMode::CentroidScale(DEFAULT_SHRINK),
        seed.wrapping_add(1),
    )?;
    let exterior = sample_exterior(
        &surface,
        None,
        n_e,
        SampleMode::CentroidScale(1.5),
        seed.wrapping_add(2),
    )?;
    label_points(&surface, &interior, &exterior)
}

fn sphere_surface(n: usize, radius: f64, seed: u64) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v = Point3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let len = v.norm();
        if len < 1e-8 {
            continue;
        }
        out.push(v * (radius / len));
    }
    out
}
