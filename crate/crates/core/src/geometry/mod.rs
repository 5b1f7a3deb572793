//! Analytic signed-distance shapes, triangle meshes and training-point
//! sampling.
//!
//! Signed distances are **positive inside** throughout the crate so that the
//! smooth occupancy `sigmoid(alpha * sdf)` tends to 1 in the interior.

mod mesh;
mod sampling;

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mesh::{closest_brute_force, closest_point_on_triangle, ClosestHit, MeshFeature, MeshShape, TriMesh, TriangleIndex, MIN_TRIANGLE_AREA};
pub use sampling::{sample_training_points, SampleBatch, SamplingParams};

pub type Vec3 = Vector3<f64>;

/// Step used by central-difference gradients.
pub const FD_STEP: f64 = 1e-4;
/// Convergence threshold on `|sdf|` for surface projection.
pub const PROJECTION_TOL: f64 = 1e-6;
pub const PROJECTION_MAX_ITERS: usize = 50;

/// Gradients shorter than this are treated as degenerate.
const DEGENERATE_GRAD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("degenerate normal at ({x}, {y}, {z}): zero SDF gradient", x = .0[0], y = .0[1], z = .0[2])]
    DegenerateNormal(Vec3),
    #[error("surface projection did not converge after {iterations} iterations (|sdf| = {residual:e})")]
    ProjectionFailed { iterations: usize, residual: f64 },
    #[error("sample batch must contain at least one point")]
    EmptyBatch,
    #[error("invalid sampling parameters: {0}")]
    InvalidSampling(String),
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    /// The cube `[-half, half]^3`.
    pub fn cube(half: f64) -> Self {
        Self::new(Vec3::repeat(-half), Vec3::repeat(half))
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb::new(self.min.inf(&other.min), self.max.sup(&other.max))
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] < self.max[i])
    }
}

/// A radial Gaussian bump on a [`BumpSphere`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    /// Unit direction from the sphere center.
    pub direction: Vec3,
    pub amplitude: f64,
    /// Angular standard deviation in radians (small-angle).
    pub width: f64,
}

/// Sphere whose radius varies with direction:
/// `r(u) = radius + sum_i a_i exp(-(1 - u.d_i) / w_i^2)`.
///
/// `1 - u.d` behaves like `theta^2 / 2` near the bump axis, so each bump is a
/// Gaussian in angle with standard deviation `w`, but remains smooth at the
/// antipode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpSphere {
    pub center: Vec3,
    pub radius: f64,
    pub bumps: Vec<Bump>,
}

impl BumpSphere {
    fn radius_and_tangent_grad(&self, u: &Vec3, dist: f64) -> (f64, Vec3) {
        let mut r = self.radius;
        let mut grad = Vec3::zeros();
        for b in &self.bumps {
            let c = u.dot(&b.direction);
            let inv_w2 = 1.0 / (b.width * b.width);
            let g = b.amplitude * (-(1.0 - c) * inv_w2).exp();
            r += g;
            if dist > 0.0 {
                // d/dp of (u . d) = (d - (u . d) u) / |p|
                grad += (b.direction - u * c) * (g * inv_w2 / dist);
            }
        }
        (r, grad)
    }

    /// `f(p) = r(u) - |p - c|` and its gradient.
    fn eval(&self, p: &Vec3) -> (f64, Vec3) {
        let x = p - self.center;
        let dist = x.norm();
        let u = if dist > 0.0 { x / dist } else { Vec3::x() };
        let (r, grad_r) = self.radius_and_tangent_grad(&u, dist);
        let f = r - dist;
        let grad = if dist > 0.0 { grad_r - u } else { Vec3::zeros() };
        (f, grad)
    }

    /// `f / |grad f|` with the gradient taken where the ray through `p` meets
    /// the surface, so the scale does not blow up near the center.
    fn distance(&self, p: &Vec3) -> f64 {
        let x = p - self.center;
        let dist = x.norm();
        let u = if dist > 0.0 { x / dist } else { Vec3::x() };
        let r = self.surface_radius(&u);
        let (_, tangent) = self.radius_and_tangent_grad(&u, r);
        (r - dist) / (1.0 + tangent.norm_squared()).sqrt()
    }

    pub fn surface_radius(&self, u: &Vec3) -> f64 {
        self.radius_and_tangent_grad(u, 0.0).0
    }

    /// Sphere with the same center and mean radius, estimated over a fixed
    /// Fibonacci lattice of directions.
    pub fn best_fit_sphere(&self) -> Shape {
        let n = 4096;
        let mean = fibonacci_directions(n)
            .map(|u| self.surface_radius(&u))
            .sum::<f64>()
            / n as f64;
        Shape::Sphere {
            center: self.center,
            radius: mean,
        }
    }
}

fn fibonacci_directions(n: usize) -> impl Iterator<Item = Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n).map(move |i| {
        let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - y * y).sqrt();
        let t = golden * i as f64;
        Vec3::new(r * t.cos(), y, r * t.sin())
    })
}

/// Scene element with a positive-inside signed distance.
#[derive(Debug, Clone)]
pub enum Shape {
    Sphere {
        center: Vec3,
        radius: f64,
    },
    /// Ring in the xy-plane around the z axis.
    Torus {
        center: Vec3,
        major_radius: f64,
        minor_radius: f64,
    },
    Box {
        center: Vec3,
        half_extents: Vec3,
    },
    Capsule {
        a: Vec3,
        b: Vec3,
        radius: f64,
    },
    Union(Vec<Shape>),
    BumpSphere(BumpSphere),
    Mesh(Arc<MeshShape>),
}

impl Shape {
    pub fn sphere(center: Vec3, radius: f64) -> Result<Shape, GeometryError> {
        Shape::Sphere { center, radius }.validated()
    }

    pub fn torus(center: Vec3, major_radius: f64, minor_radius: f64) -> Result<Shape, GeometryError> {
        Shape::Torus {
            center,
            major_radius,
            minor_radius,
        }
        .validated()
    }

    pub fn cuboid(center: Vec3, half_extents: Vec3) -> Result<Shape, GeometryError> {
        Shape::Box {
            center,
            half_extents,
        }
        .validated()
    }

    pub fn capsule(a: Vec3, b: Vec3, radius: f64) -> Result<Shape, GeometryError> {
        Shape::Capsule { a, b, radius }.validated()
    }

    pub fn union(members: Vec<Shape>) -> Result<Shape, GeometryError> {
        Shape::Union(members).validated()
    }

    pub fn bump_sphere(center: Vec3, radius: f64, bumps: Vec<Bump>) -> Result<Shape, GeometryError> {
        Shape::BumpSphere(BumpSphere {
            center,
            radius,
            bumps,
        })
        .validated()
    }

    pub fn mesh(mesh: TriMesh) -> Result<Shape, GeometryError> {
        Ok(Shape::Mesh(Arc::new(MeshShape::new(mesh)?)))
    }

    fn validated(self) -> Result<Shape, GeometryError> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidShape(m));
        let finite = |v: &Vec3| v.iter().all(|c| c.is_finite());
        match self {
            Shape::Sphere { center, radius } => {
                if !finite(center) || !(*radius > 0.0) {
                    return bad(format!("sphere radius must be > 0, got {radius}"));
                }
            }
            Shape::Torus {
                center,
                major_radius,
                minor_radius,
            } => {
                if !finite(center) || !(*major_radius > 0.0) || !(*minor_radius > 0.0) {
                    return bad("torus radii must be > 0".into());
                }
            }
            Shape::Box {
                center,
                half_extents,
            } => {
                if !finite(center) || !half_extents.iter().all(|h| *h > 0.0 && h.is_finite()) {
                    return bad("box half extents must be > 0".into());
                }
            }
            Shape::Capsule { a, b, radius } => {
                if !finite(a) || !finite(b) || !(*radius > 0.0) {
                    return bad(format!("capsule radius must be > 0, got {radius}"));
                }
            }
            Shape::Union(members) => {
                if members.is_empty() {
                    return bad("union must have at least one member".into());
                }
                for m in members {
                    m.validate()?;
                }
            }
            Shape::BumpSphere(bs) => {
                if !finite(&bs.center) || !(bs.radius > 0.0) {
                    return bad(format!("bump sphere radius must be > 0, got {}", bs.radius));
                }
                for b in &bs.bumps {
                    if !(b.amplitude > 0.0) || !(b.amplitude < bs.radius) {
                        return bad(format!(
                            "bump amplitude must be in (0, radius), got {}",
                            b.amplitude
                        ));
                    }
                    if !(b.width > 0.0) {
                        return bad(format!("bump width must be > 0, got {}", b.width));
                    }
                    if (b.direction.norm() - 1.0).abs() > 1e-6 {
                        return bad("bump direction must be a unit vector".into());
                    }
                }
            }
            Shape::Mesh(_) => {}
        }
        Ok(())
    }

    /// Signed distance, positive inside.
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match self {
            Shape::Sphere { center, radius } => radius - (p - center).norm(),
            Shape::Torus {
                center,
                major_radius,
                minor_radius,
            } => {
                let x = p - center;
                let ring = x.xy().norm() - major_radius;
                minor_radius - (ring * ring + x.z * x.z).sqrt()
            }
            Shape::Box {
                center,
                half_extents,
            } => {
                let q = (p - center).abs() - half_extents;
                let outside = q.sup(&Vec3::zeros()).norm();
                let inside = q.max().min(0.0);
                -(outside + inside)
            }
            Shape::Capsule { a, b, radius } => radius - (p - closest_on_segment(p, a, b)).norm(),
            Shape::Union(members) => members
                .iter()
                .map(|m| m.sdf(p))
                .fold(f64::NEG_INFINITY, f64::max),
            Shape::BumpSphere(bs) => bs.distance(p),
            Shape::Mesh(m) => m.signed_distance(p),
        }
    }

    /// Analytic gradient of the positive-inside SDF, when the shape has one.
    pub fn analytic_gradient(&self, p: &Vec3) -> Option<Vec3> {
        let radial = |x: Vec3| {
            let n = x.norm();
            if n > 0.0 {
                -x / n
            } else {
                Vec3::zeros()
            }
        };
        match self {
            Shape::Sphere { center, .. } => Some(radial(p - center)),
            Shape::Torus {
                center,
                major_radius,
                ..
            } => {
                let x = p - center;
                let rho = x.xy().norm();
                let ring = rho - major_radius;
                let q = (ring * ring + x.z * x.z).sqrt();
                if q == 0.0 {
                    return Some(Vec3::zeros());
                }
                let radial_xy = if rho > 0.0 {
                    Vec3::new(x.x / rho, x.y / rho, 0.0)
                } else {
                    Vec3::zeros()
                };
                Some(-(radial_xy * (ring / q) + Vec3::z() * (x.z / q)))
            }
            Shape::Box {
                center,
                half_extents,
            } => {
                let x = p - center;
                let q = x.abs() - half_extents;
                let sign = x.map(|c| if c > 0.0 { 1.0 } else if c < 0.0 { -1.0 } else { 0.0 });
                if q.iter().any(|c| *c > 0.0) {
                    let pos = q.sup(&Vec3::zeros());
                    Some(-sign.component_mul(&pos) / pos.norm())
                } else {
                    let axis = q.imax();
                    let mut g = Vec3::zeros();
                    g[axis] = -sign[axis];
                    Some(g)
                }
            }
            Shape::Capsule { a, b, .. } => Some(radial(p - closest_on_segment(p, a, b))),
            Shape::Union(members) => {
                let best = members
                    .iter()
                    .max_by(|x, y| x.sdf(p).total_cmp(&y.sdf(p)))
                    .expect("union is non-empty");
                best.analytic_gradient(p)
                    .or_else(|| Some(best.fd_gradient(p, FD_STEP)))
            }
            // At the zero level set this equals the gradient of f / |grad f|.
            Shape::BumpSphere(bs) => {
                let (_, g) = bs.eval(p);
                let n = g.norm();
                Some(if n > DEGENERATE_GRAD { g / n } else { Vec3::zeros() })
            }
            Shape::Mesh(_) => None,
        }
    }

    /// Central-difference gradient of the SDF.
    pub fn fd_gradient(&self, p: &Vec3, h: f64) -> Vec3 {
        let mut g = Vec3::zeros();
        for i in 0..3 {
            let mut e = Vec3::zeros();
            e[i] = h;
            g[i] = (self.sdf(&(p + e)) - self.sdf(&(p - e))) / (2.0 * h);
        }
        g
    }

    pub fn gradient(&self, p: &Vec3) -> Vec3 {
        self.analytic_gradient(p)
            .unwrap_or_else(|| self.fd_gradient(p, FD_STEP))
    }

    /// Outward unit normal: the normalized negative SDF gradient.
    pub fn surface_normal(&self, p: &Vec3) -> Result<Vec3, GeometryError> {
        let g = self.gradient(p);
        let n = g.norm();
        if n > DEGENERATE_GRAD && n.is_finite() {
            Ok(-g / n)
        } else {
            Err(GeometryError::DegenerateNormal(*p))
        }
    }

    /// [`Shape::surface_normal`], substituting +x where the gradient vanishes.
    pub fn normal_or_axis(&self, p: &Vec3) -> Vec3 {
        self.surface_normal(p).unwrap_or_else(|_| Vec3::x())
    }

    /// Projects `p` onto the zero level set by repeated steps
    /// `q <- q + sdf(q) * n(q)` along the outward normal.
    pub fn nearest_surface_point(&self, p: &Vec3) -> Result<Vec3, GeometryError> {
        let mut q = *p;
        let mut d = self.sdf(&q);
        for _ in 0..PROJECTION_MAX_ITERS {
            if d.abs() < PROJECTION_TOL {
                return Ok(q);
            }
            q += self.normal_or_axis(&q) * d;
            d = self.sdf(&q);
        }
        if d.abs() < PROJECTION_TOL {
            Ok(q)
        } else {
            Err(GeometryError::ProjectionFailed {
                iterations: PROJECTION_MAX_ITERS,
                residual: d.abs(),
            })
        }
    }

    /// Conservative bounding box.
    pub fn bounds(&self) -> Aabb {
        match self {
            Shape::Sphere { center, radius } => Aabb::new(center.add_scalar(-radius), center.add_scalar(*radius)),
            Shape::Torus {
                center,
                major_radius,
                minor_radius,
            } => {
                let e = Vec3::new(major_radius + minor_radius, major_radius + minor_radius, *minor_radius);
                Aabb::new(center - e, center + e)
            }
            Shape::Box {
                center,
                half_extents,
            } => Aabb::new(center - half_extents, center + half_extents),
            Shape::Capsule { a, b, radius } => {
                Aabb::new(a.inf(b).add_scalar(-radius), a.sup(b).add_scalar(*radius))
            }
            Shape::Union(members) => members
                .iter()
                .map(|m| m.bounds())
                .reduce(|x, y| x.union(&y))
                .expect("union is non-empty"),
            Shape::BumpSphere(bs) => {
                let r = bs.radius + bs.bumps.iter().map(|b| b.amplitude).sum::<f64>();
                Aabb::new(bs.center.add_scalar(-r), bs.center.add_scalar(r))
            }
            Shape::Mesh(m) => m.mesh().bounds(),
        }
    }

    /// Surface area; for bump spheres this is the base sphere's area.
    pub fn area(&self) -> f64 {
        match self {
            Shape::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Shape::Torus {
                major_radius,
                minor_radius,
                ..
            } => 4.0 * PI * PI * major_radius * minor_radius,
            Shape::Box { half_extents: h, .. } => 8.0 * (h.x * h.y + h.y * h.z + h.x * h.z),
            Shape::Capsule { a, b, radius } => 2.0 * PI * radius * (b - a).norm() + 4.0 * PI * radius * radius,
            Shape::Union(members) => members.iter().map(|m| m.area()).sum(),
            Shape::BumpSphere(bs) => 4.0 * PI * bs.radius * bs.radius,
            Shape::Mesh(m) => m.mesh().area(),
        }
    }

    /// Draws one point on the surface. Parametric for primitives (area-uniform
    /// except for bump spheres, which are direction-uniform); rejection for
    /// union members buried inside other members.
    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        match self {
            Shape::Sphere { center, radius } => center + random_direction(rng) * *radius,
            Shape::Torus {
                center,
                major_radius: big,
                minor_radius: small,
            } => loop {
                let theta = rng.random_range(0.0..2.0 * PI);
                let phi = rng.random_range(0.0..2.0 * PI);
                let w = (big + small * phi.cos()) / (big + small);
                if rng.random::<f64>() <= w {
                    let ring = big + small * phi.cos();
                    break center + Vec3::new(ring * theta.cos(), ring * theta.sin(), small * phi.sin());
                }
            },
            Shape::Box {
                center,
                half_extents: h,
            } => {
                let areas = [h.y * h.z, h.x * h.z, h.x * h.y];
                let total: f64 = areas.iter().sum();
                let mut t = rng.random::<f64>() * total;
                let mut axis = 2;
                for (i, a) in areas.iter().enumerate() {
                    if t < *a {
                        axis = i;
                        break;
                    }
                    t -= a;
                }
                let mut local = Vec3::new(
                    rng.random_range(-h.x..h.x),
                    rng.random_range(-h.y..h.y),
                    rng.random_range(-h.z..h.z),
                );
                local[axis] = if rng.random::<bool>() { h[axis] } else { -h[axis] };
                center + local
            }
            Shape::Capsule { a, b, radius } => {
                let axis = b - a;
                let len = axis.norm();
                let cyl = 2.0 * PI * radius * len;
                let caps = 4.0 * PI * radius * radius;
                if len > 0.0 && rng.random::<f64>() * (cyl + caps) < cyl {
                    let dir = axis / len;
                    let (e1, e2) = orthonormal_basis(&dir);
                    let t = rng.random::<f64>();
                    let ang = rng.random_range(0.0..2.0 * PI);
                    a + axis * t + (e1 * ang.cos() + e2 * ang.sin()) * *radius
                } else {
                    let u = random_direction(rng);
                    let base = if u.dot(&axis) >= 0.0 { b } else { a };
                    base + u * *radius
                }
            }
            Shape::Union(members) => {
                let total: f64 = members.iter().map(|m| m.area()).sum();
                let mut last = Vec3::zeros();
                for _ in 0..1000 {
                    let mut t = rng.random::<f64>() * total;
                    let mut pick = &members[members.len() - 1];
                    for m in members {
                        let a = m.area();
                        if t < a {
                            pick = m;
                            break;
                        }
                        t -= a;
                    }
                    last = pick.sample_surface(rng);
                    if self.sdf(&last) <= 1e-9 {
                        return last;
                    }
                }
                last
            }
            Shape::BumpSphere(bs) => {
                let u = random_direction(rng);
                bs.center + u * bs.surface_radius(&u)
            }
            Shape::Mesh(m) => m.mesh().sample_point(rng).0,
        }
    }
}

pub fn random_direction<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

pub(crate) fn orthonormal_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

fn closest_on_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> Vec3 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    a + ab * t
}
