//! Fluxing indices by pathline crossing counts, and topological degrees of
//! the generating cycle by ray casting.

use std::collections::BTreeMap;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cycle::{jacobian_fd, tessellate, CompositeMap, GeneratingCycleMesh, Tessellation};
use crate::fields::{oriented_normal, MovingSurface, ScalarField, VelocityField};
use crate::ode::Integrator;
use crate::{pairwise_sum, Error, Point, Result};

/// Relative grazing tolerance, scaled by the bounding-box diagonal.
pub const GRAZING_TOLERANCE: f64 = 1e-9;
/// Relative tangency tolerance for |v_× · n|, scaled by the velocity magnitude.
pub const TANGENCY_TOLERANCE: f64 = 1e-8;

/// Uniform 2D bucket grid over projected triangles, stored as CSR lists.
struct RayFrame {
    dir: Point,
    e1: Point,
    e2: Point,
    origin: [f64; 2],
    cell: [f64; 2],
    dims: [usize; 2],
    offsets: Vec<u32>,
    items: Vec<u32>,
}

impl RayFrame {
    fn new(dir: Point, tess: &Tessellation, pad: f64) -> Self {
        let dir = dir.normalize();
        let axis = if dir.x.abs() < 0.6 {
            Point::x()
        } else if dir.y.abs() < 0.6 {
            Point::y()
        } else {
            Point::z()
        };
        let e1 = dir.cross(&axis).normalize();
        let e2 = dir.cross(&e1);
        let proj: Vec<[f64; 2]> = tess.vertices.iter().map(|v| [v.dot(&e1), v.dot(&e2)]).collect();
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &proj {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let side = ((tess.triangles.len() as f64).sqrt().ceil() as usize).max(1);
        let dims = [side, side];
        let cell = [
            ((hi[0] - lo[0]) / side as f64).max(f64::MIN_POSITIVE),
            ((hi[1] - lo[1]) / side as f64).max(f64::MIN_POSITIVE),
        ];
        let mut frame = RayFrame {
            dir,
            e1,
            e2,
            origin: lo,
            cell,
            dims,
            offsets: vec![0; side * side + 1],
            items: Vec::new(),
        };
        let ranges: Vec<[usize; 4]> = tess
            .triangles
            .iter()
            .map(|tri| {
                let mut a = [f64::INFINITY; 2];
                let mut b = [f64::NEG_INFINITY; 2];
                for &v in tri {
                    for k in 0..2 {
                        a[k] = a[k].min(proj[v][k] - pad);
                        b[k] = b[k].max(proj[v][k] + pad);
                    }
                }
                let (i0, j0) = frame.cell_of(a);
                let (i1, j1) = frame.cell_of(b);
                [i0, i1, j0, j1]
            })
            .collect();
        for r in &ranges {
            for i in r[0]..=r[1] {
                for j in r[2]..=r[3] {
                    frame.offsets[i * side + j + 1] += 1;
                }
            }
        }
        for c in 0..side * side {
            frame.offsets[c + 1] += frame.offsets[c];
        }
        let mut fill = frame.offsets.clone();
        frame.items = vec![0; *frame.offsets.last().unwrap() as usize];
        for (t, r) in ranges.iter().enumerate() {
            for i in r[0]..=r[1] {
                for j in r[2]..=r[3] {
                    let slot = &mut fill[i * side + j];
                    frame.items[*slot as usize] = t as u32;
                    *slot += 1;
                }
            }
        }
        frame
    }

    fn cell_of(&self, q: [f64; 2]) -> (usize, usize) {
        let clamp = |x: f64, n: usize| (x.floor().max(0.0) as usize).min(n - 1);
        (
            clamp((q[0] - self.origin[0]) / self.cell[0], self.dims[0]),
            clamp((q[1] - self.origin[1]) / self.cell[1], self.dims[1]),
        )
    }

    fn contains(&self, q: [f64; 2]) -> bool {
        (0..2).all(|k| q[k] >= self.origin[k] && q[k] <= self.origin[k] + self.cell[k] * self.dims[k] as f64)
    }

    /// Signed exit count along the ray, or `None` if the ray grazes.
    fn cast(&self, tess: &Tessellation, p: &Point, tol: f64) -> Option<i32> {
        let q = [p.dot(&self.e1), p.dot(&self.e2)];
        if !self.contains(q) {
            return Some(0);
        }
        let depth = p.dot(&self.dir);
        let (i, j) = self.cell_of(q);
        let c = i * self.dims[1] + j;
        let mut count = 0;
        for &t in &self.items[self.offsets[c] as usize..self.offsets[c + 1] as usize] {
            let tri = tess.triangles[t as usize];
            let v = tri.map(|k| tess.vertices[k]);
            let a = v.map(|x| [x.dot(&self.e1) - q[0], x.dot(&self.e2) - q[1]]);
            let cross = |s: [f64; 2], t: [f64; 2]| s[0] * t[1] - s[1] * t[0];
            // w[k] is twice the signed area of (q, a_k, a_{k+1}).
            let w = [cross(a[0], a[1]), cross(a[1], a[2]), cross(a[2], a[0])];
            let area = w[0] + w[1] + w[2];
            let near_edge = (0..3).any(|k| segment_distance(a[k], a[(k + 1) % 3]) < tol);
            let inside = (w.iter().all(|&x| x >= 0.0) || w.iter().all(|&x| x <= 0.0)) && area != 0.0;
            if !inside && !near_edge {
                continue;
            }
            let hit_depth = (w[1] * v[0].dot(&self.dir) + w[2] * v[1].dot(&self.dir) + w[0] * v[2].dot(&self.dir)) / area;
            if near_edge {
                // Edges behind the point cannot affect the count.
                let behind = v.iter().all(|x| x.dot(&self.dir) < depth - tol);
                if behind {
                    continue;
                }
                return None;
            }
            if (hit_depth - depth).abs() < tol {
                return None;
            }
            if hit_depth > depth {
                count += if area > 0.0 { 1 } else { -1 };
            }
        }
        Some(count)
    }
}

/// Distance from the origin to the segment [a, b] in the plane.
fn segment_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let s = if len2 > 0.0 {
        (-(a[0] * d[0] + a[1] * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a[0] + s * d[0]).hypot(a[1] + s * d[1])
}

/// Degree of χ at query points, computed on an outward-oriented
/// tessellation of the generating cycle by majority vote over rays.
pub struct DegreeClassifier {
    tess: Tessellation,
    frames: Vec<RayFrame>,
    tol: f64,
    lo: Point,
    hi: Point,
}

impl DegreeClassifier {
    /// Default tessellation resolution per patch edge for a mesh.
    pub fn default_resolution(mesh: &GeneratingCycleMesh) -> usize {
        (4 * mesh.meta.n.max(mesh.meta.m)).clamp(16, 512)
    }

    pub fn new(mesh: &GeneratingCycleMesh, resolution: usize, rays: usize, seed: u64) -> Result<Self> {
        if rays == 0 {
            return Err(Error::argument("at least one ray is required"));
        }
        let tess = tessellate(mesh, resolution)?;
        let mut lo = Point::repeat(f64::INFINITY);
        let mut hi = Point::repeat(f64::NEG_INFINITY);
        for v in &tess.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let tol = GRAZING_TOLERANCE * (hi - lo).norm().max(f64::MIN_POSITIVE);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dirs: Vec<Point> = (0..rays).map(|_| random_unit(&mut rng)).collect();
        let frames = dirs.into_par_iter().map(|d| RayFrame::new(d, &tess, tol)).collect();
        Ok(Self { tess, frames, tol, lo, hi })
    }

    /// Axis-aligned bounding box of the tessellated cycle.
    pub fn bounding_box(&self) -> (Point, Point) {
        (self.lo, self.hi)
    }

    pub fn rays(&self) -> usize {
        self.frames.len()
    }

    pub fn tessellation(&self) -> &Tessellation {
        &self.tess
    }

    /// deg(χ, B³, p), or a degeneracy error when no count wins a majority.
    pub fn degree(&self, p: &Point) -> Result<i32> {
        let need = self.frames.len() / 2 + 1;
        let mut votes: Vec<(i32, usize)> = Vec::new();
        for frame in &self.frames {
            if let Some(c) = frame.cast(&self.tess, p, self.tol) {
                match votes.iter_mut().find(|(v, _)| *v == c) {
                    Some((_, n)) => *n += 1,
                    None => votes.push((c, 1)),
                }
                if let Some(&(v, _)) = votes.iter().find(|(_, n)| *n >= need) {
                    return Ok(v);
                }
            }
        }
        Err(Error::Degenerate {
            point: [p.x, p.y, p.z],
            rays: self.frames.len(),
        })
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Point {
    loop {
        let p = Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = p.norm();
        if n > 0.1 && n <= 1.0 {
            return p / n;
        }
    }
}

/// One-off degree query; builds a classifier at the default resolution.
pub fn degree_of_point(mesh: &GeneratingCycleMesh, p: &Point, rays: usize) -> Result<i32> {
    DegreeClassifier::new(mesh, DegreeClassifier::default_resolution(mesh), rays, 0x5eed)?.degree(p)
}

/// Monte Carlo estimate of Σ_n n ∫_{Dⁿ} f(x, t0) dx.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct DonatingRegionEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Estimated volume of each donating region Dⁿ, n ≠ 0.
    pub volumes: BTreeMap<i32, f64>,
    pub samples: usize,
    /// Samples redrawn because their degree was degenerate.
    pub redrawn: usize,
}

/// Stratified sampling of the classifier's bounding box: K³ equal strata
/// with `samples / K³ ≥ 4` uniform points each.
pub fn donating_region_integral(
    classifier: &DegreeClassifier,
    f: &ScalarField,
    t0: f64,
    samples: usize,
    seed: u64,
) -> Result<DonatingRegionEstimate> {
    if samples < 4 {
        return Err(Error::argument(format!("need at least 4 samples, got {samples}")));
    }
    let k = ((samples as f64 / 4.0).cbrt().floor() as usize).max(1);
    let strata = k * k * k;
    let per = samples / strata;
    let (lo, hi) = classifier.bounding_box();
    let pad = 1e-6 * (hi - lo).norm();
    let (lo, hi) = (lo - Point::repeat(pad), hi + Point::repeat(pad));
    let ext = hi - lo;
    let volume = ext.x * ext.y * ext.z;

    struct Stratum {
        mean: f64,
        var_of_mean: f64,
        counts: BTreeMap<i32, usize>,
        redrawn: usize,
    }
    let results: Vec<Stratum> = (0..strata)
        .into_par_iter()
        .map(|s| -> Result<Stratum> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let idx = [s / (k * k), (s / k) % k, s % k];
            let mut vals = Vec::with_capacity(per);
            let mut counts = BTreeMap::new();
            let mut redrawn = 0;
            while vals.len() < per {
                let x = Point::from_fn(|c, _| lo[c] + ext[c] * (idx[c] as f64 + rng.gen::<f64>()) / k as f64);
                match classifier.degree(&x) {
                    Ok(d) => {
                        vals.push(if d == 0 { 0.0 } else { d as f64 * f.eval(&x, t0) });
                        if d != 0 {
                            *counts.entry(d).or_insert(0) += 1;
                        }
                    }
                    Err(Error::Degenerate { .. }) if redrawn < 100 * per => redrawn += 1,
                    Err(e) => return Err(e),
                }
            }
            let n = vals.len() as f64;
            let mean = pairwise_sum(&vals) / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            Ok(Stratum {
                mean,
                var_of_mean: var / n,
                counts,
                redrawn,
            })
        })
        .collect::<Result<_>>()?;

    let w = volume / strata as f64;
    let value = w * pairwise_sum(&results.iter().map(|r| r.mean).collect::<Vec<_>>());
    let std_error = w * results.iter().map(|r| r.var_of_mean).sum::<f64>().sqrt();
    let mut volumes = BTreeMap::new();
    for r in &results {
        for (&d, &c) in &r.counts {
            *volumes.entry(d).or_insert(0.0) += w * c as f64 / per as f64;
        }
    }
    Ok(DonatingRegionEstimate {
        value,
        std_error,
        volumes,
        samples: strata * per,
        redrawn: results.iter().map(|r| r.redrawn).sum(),
    })
}

/// A pathline crossing of the moving surface.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct CrossingRecord {
    /// Normalized crossing time (t − t0)/k.
    pub tau: f64,
    pub time: f64,
    pub point: [f64; 3],
    pub sign: i32,
    pub u: f64,
    pub v: f64,
    /// v_× · n at the crossing.
    pub normal_velocity: f64,
    /// (u, v) lies within 1e-6 of the patch boundary.
    pub near_boundary: bool,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct FluxingIndex {
    pub index: i32,
    pub crossings: Vec<CrossingRecord>,
}

struct Tracker<'a> {
    s: &'a MovingSurface,
}

impl Tracker<'_> {
    /// Gauss-Newton foot point of `p` on the unclamped surface S(·,·,t).
    fn project(&self, p: &Point, t: f64, guess: (f64, f64)) -> Option<(f64, f64)> {
        let (mut a, mut b) = guess;
        for _ in 0..50 {
            let r = p - self.s.eval(a, b, t);
            let (su, sv) = (self.s.partial_u(a, b, t), self.s.partial_v(a, b, t));
            let (g11, g12, g22) = (su.dot(&su), su.dot(&sv), sv.dot(&sv));
            let det = g11 * g22 - g12 * g12;
            if !(det > 1e-300) {
                return None;
            }
            let (r1, r2) = (su.dot(&r), sv.dot(&r));
            let da = (g22 * r1 - g12 * r2) / det;
            let db = (g11 * r2 - g12 * r1) / det;
            a += da;
            b += db;
            if !(a.is_finite() && b.is_finite()) || a.abs() > 1e3 || b.abs() > 1e3 {
                return None;
            }
            if da.abs().max(db.abs()) < 1e-14 {
                break;
            }
        }
        Some((a, b))
    }

    fn coarse_guess(&self, p: &Point, t: f64) -> (f64, f64) {
        let mut best = (0.5, 0.5, f64::INFINITY);
        for i in 0..=20 {
            for j in 0..=20 {
                let (a, b) = (-0.5 + i as f64 / 10.0, -0.5 + j as f64 / 10.0);
                let d = (p - self.s.eval(a, b, t)).norm_squared();
                if d < best.2 {
                    best = (a, b, d);
                }
            }
        }
        (best.0, best.1)
    }

    /// Signed distance along the outward normal and the foot point.
    fn signed_distance(&self, p: &Point, t: f64, guess: Option<(f64, f64)>) -> Option<(f64, (f64, f64))> {
        let foot = guess
            .and_then(|g| self.project(p, t, g))
            .or_else(|| self.project(p, t, self.coarse_guess(p, t)))?;
        let n = oriented_normal(&self.s.partial_u(foot.0, foot.1, t), &self.s.partial_v(foot.0, foot.1, t))?;
        Some(((p - self.s.eval(foot.0, foot.1, t)).dot(&n), foot))
    }
}

/// Counts signed crossings of the pathline from `p` with S(t), t ∈ [t0, t0+k].
///
/// The pathline is sampled with the 6th-order integrator at `1/sampling`,
/// sign changes of the signed distance are refined by bisection, and the
/// crossing is polished by Newton on P(t) − S(u, v, t) = 0.
pub fn fluxing_index_oracle(
    u: &VelocityField,
    s: &MovingSurface,
    t0: f64,
    k: f64,
    p: &Point,
    sampling: f64,
) -> Result<FluxingIndex> {
    if !(k > 0.0 && sampling > 0.0) {
        return Err(Error::argument("interval length and sampling must be positive"));
    }
    let integ = Integrator::Verner6;
    let steps = (k * sampling).ceil() as usize;
    let dt = k / steps as f64;
    let tr = Tracker { s };
    let mut path = Vec::with_capacity(steps + 1);
    path.push(*p);
    for i in 0..steps {
        let next = integ.step(u, &path[i], t0 + i as f64 * dt, dt)?;
        path.push(next);
    }
    let time = |i: usize| t0 + i as f64 * dt;
    let scale_len = 1.0 + p.norm();

    let mut dist = Vec::with_capacity(steps + 1);
    let mut guess = None;
    for (i, q) in path.iter().enumerate() {
        let sd = tr.signed_distance(q, time(i), guess);
        guess = sd.map(|x| x.1);
        dist.push(sd);
    }

    let mut crossings = Vec::new();
    for i in 0..steps {
        let (Some((d0, f0)), Some((d1, _))) = (dist[i], dist[i + 1]) else {
            continue;
        };
        if d0 == 0.0 && i == 0 {
            return Err(Error::argument("seed point lies on the initial surface"));
        }
        if d0 * d1 > 0.0 || (d0 == 0.0 && i > 0) {
            continue;
        }
        // Bisection on [t_i, t_{i+1}] with a single sub-step from the sample.
        let at = |t: f64| integ.step(u, &path[i], time(i), t - time(i));
        let (mut lo, mut hi, mut dlo) = (time(i), time(i + 1), d0);
        let mut foot = f0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let q = if mid == time(i) { path[i] } else { at(mid)? };
            let Some((dm, fm)) = tr.signed_distance(&q, mid, Some(foot)) else {
                return Err(Error::UnresolvedCrossing { tau: (mid - t0) / k });
            };
            foot = fm;
            if dm == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if dm * dlo > 0.0 {
                lo = mid;
                dlo = dm;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 * k {
                break;
            }
        }
        let mut t = 0.5 * (lo + hi);
        let (mut a, mut b) = foot;
        for _ in 0..20 {
            let q = at(t)?;
            let r = q - s.eval(a, b, t);
            let jac = Matrix3::from_columns(&[-s.partial_u(a, b, t), -s.partial_v(a, b, t), u.eval(&q, t) - s.partial_t(a, b, t)]);
            let Some(step) = jac.lu().solve(&(-r)) else {
                return Err(Error::Tangency { tau: (t - t0) / k });
            };
            a += step.x;
            b += step.y;
            t += step.z;
            if step.norm() < 1e-14 * scale_len {
                break;
            }
        }
        if !(t >= time(i) - 1e-9 * dt && t <= time(i + 1) + 1e-9 * dt) {
            return Err(Error::UnresolvedCrossing { tau: (t - t0) / k });
        }
        if !(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0) {
            continue;
        }
        let q = at(t)?;
        let (su, sv) = (s.partial_u(a, b, t), s.partial_v(a, b, t));
        let n = oriented_normal(&su, &sv).ok_or(Error::SingularPoint { u: a, v: b, t })?;
        let vel = u.eval(&q, t);
        let st = s.partial_t(a, b, t);
        let vn = (vel - st).dot(&n);
        let scale = vel.norm() + st.norm();
        if vn.abs() < TANGENCY_TOLERANCE * scale {
            return Err(Error::Tangency { tau: (t - t0) / k });
        }
        let edge = a.min(b).min(1.0 - a).min(1.0 - b);
        crossings.push(CrossingRecord {
            tau: (t - t0) / k,
            time: t,
            point: [q.x, q.y, q.z],
            sign: if vn > 0.0 { 1 } else { -1 },
            u: a,
            v: b,
            normal_velocity: vn,
            near_boundary: edge < 1e-6,
        });
    }
    if let Some((d, f)) = dist[steps] {
        if d.abs() < 1e-12 * scale_len && f.0 > 0.0 && f.0 < 1.0 && f.1 > 0.0 && f.1 < 1.0 {
            return Err(Error::argument("pathline ends on the final surface"));
        }
    }
    Ok(FluxingIndex {
        index: crossings.iter().map(|c| c.sign).sum(),
        crossings,
    })
}

/// Both sides of sgn(v_× · n) = sgn(det dφ · det dχ) at one crossing.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SignRelation {
    pub crossing_sign: i32,
    pub det_flow: f64,
    pub det_chi: f64,
    pub holds: bool,
}

/// Evaluates the sign relation at a crossing of the pathline from `p`.
/// Jacobians are 4th-order finite differences of fixed-step flow maps.
pub fn sign_relation(
    u: &VelocityField,
    s: &MovingSurface,
    t0: f64,
    k: f64,
    p: &Point,
    crossing: &CrossingRecord,
    steps: usize,
) -> Result<SignRelation> {
    let integ = Integrator::Verner6;
    let flow = |x: &Point| integ.advect(u, x, t0, crossing.time, steps);
    let det_flow = jacobian_fd(flow, p, 1e-4)?.determinant();
    let chi = CompositeMap {
        velocity: u,
        surface: s,
        t0,
        k,
        integrator: integ,
        steps,
    };
    let det_chi = chi.jacobian(&Point::new(crossing.u, crossing.v, crossing.tau), 1e-4)?.determinant();
    let rhs = (det_flow * det_chi).signum() as i32;
    Ok(SignRelation {
        crossing_sign: crossing.sign,
        det_flow,
        det_chi,
        holds: rhs == crossing.sign && det_chi != 0.0,
    })
}
