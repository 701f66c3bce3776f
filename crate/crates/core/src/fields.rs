//! Velocity fields, conserved scalars, moving surfaces and the preset test
//! problems.
//!
//! All three field types wrap shareable closures. Analytic derivatives are
//! optional; when absent, 4th-order central differences with step
//! `1e-5 * (1 + |coordinate|)` are used.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use nalgebra::Matrix3;

use crate::quad::gauss_legendre;
use crate::{Error, Point, Result};

type VectorFn = dyn Fn(&Point, f64) -> Point + Send + Sync;
type DivergenceFn = dyn Fn(&Point, f64) -> f64 + Send + Sync;
type JacobianFn = dyn Fn(&Point, f64) -> Matrix3<f64> + Send + Sync;
type ScalarFn = dyn Fn(&Point, f64) -> f64 + Send + Sync;
type AntiderivativeFn = dyn Fn(&Point, f64, f64) -> f64 + Send + Sync;
type SurfaceFn = dyn Fn(f64, f64, f64) -> Point + Send + Sync;

/// Finite-difference step for a coordinate of magnitude `|x|`.
pub fn fd_step(x: f64) -> f64 {
    1e-5 * (1.0 + x.abs())
}

/// 4th-order central difference of `g` at `x`.
pub fn central_diff4<T, G>(g: G, x: f64) -> T
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
    G: Fn(f64) -> T,
{
    let h = fd_step(x);
    let d = (g(x - 2.0 * h) - g(x + 2.0 * h)) * (1.0 / 12.0)
        + (g(x + h) - g(x - h)) * (8.0 / 12.0);
    d * (1.0 / h)
}

/// A time-dependent velocity field u(x, t) on R³.
#[derive(Clone)]
pub struct VelocityField {
    eval: Arc<VectorFn>,
    divergence: Option<Arc<DivergenceFn>>,
    jacobian: Option<Arc<JacobianFn>>,
}

impl VelocityField {
    pub fn new(eval: impl Fn(&Point, f64) -> Point + Send + Sync + 'static) -> Self {
        Self {
            eval: Arc::new(eval),
            divergence: None,
            jacobian: None,
        }
    }

    pub fn with_divergence(mut self, div: impl Fn(&Point, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.divergence = Some(Arc::new(div));
        self
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&Point, f64) -> Matrix3<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    #[inline]
    pub fn eval(&self, x: &Point, t: f64) -> Point {
        (self.eval)(x, t)
    }

    pub fn has_analytic_divergence(&self) -> bool {
        self.divergence.is_some()
    }

    /// Analytic divergence when available, finite differences otherwise.
    pub fn divergence(&self, x: &Point, t: f64) -> f64 {
        match &self.divergence {
            Some(div) => div(x, t),
            None => self.divergence_fd(x, t),
        }
    }

    pub fn divergence_fd(&self, x: &Point, t: f64) -> f64 {
        (0..3)
            .map(|i| {
                central_diff4(
                    |s| {
                        let mut y = *x;
                        y[i] = s;
                        self.eval(&y, t)[i]
                    },
                    x[i],
                )
            })
            .sum()
    }

    /// Spatial Jacobian, column j holding ∂u/∂x_j.
    pub fn jacobian(&self, x: &Point, t: f64) -> Matrix3<f64> {
        if let Some(jac) = &self.jacobian {
            return jac(x, t);
        }
        let mut m = Matrix3::zeros();
        for j in 0..3 {
            let col = central_diff4(
                |s| {
                    let mut y = *x;
                    y[j] = s;
                    self.eval(&y, t)
                },
                x[j],
            );
            m.set_column(j, &col);
        }
        m
    }
}

impl fmt::Debug for VelocityField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VelocityField")
            .field("analytic_divergence", &self.divergence.is_some())
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

/// A conserved scalar f(x, t) together with its x-anti-derivative
/// F(x, y, z) = ∫_ξ^x f(s, y, z, t) ds.
#[derive(Clone)]
pub struct ScalarField {
    eval: Arc<ScalarFn>,
    antiderivative: Option<Arc<AntiderivativeFn>>,
}

impl ScalarField {
    pub fn new(eval: impl Fn(&Point, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            eval: Arc::new(eval),
            antiderivative: None,
        }
    }

    /// Attach an analytic anti-derivative `(x, t, xi) -> ∫_xi^x f ds`.
    pub fn with_antiderivative(
        mut self,
        anti: impl Fn(&Point, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.antiderivative = Some(Arc::new(anti));
        self
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_, _| c).with_antiderivative(move |x, _, xi| c * (x[0] - xi))
    }

    #[inline]
    pub fn eval(&self, x: &Point, t: f64) -> f64 {
        (self.eval)(x, t)
    }

    pub fn antiderivative_x(&self, x: &Point, t: f64, xi: f64) -> f64 {
        match &self.antiderivative {
            Some(anti) => anti(x, t, xi),
            None => self.antiderivative_quadrature(x, t, xi),
        }
    }

    /// Adaptive Gauss-Legendre evaluation of ∫_xi^x f(s, y, z, t) ds.
    pub fn antiderivative_quadrature(&self, x: &Point, t: f64, xi: f64) -> f64 {
        let rule = gauss_legendre(10).expect("10-point rule");
        let g = |s: f64| self.eval(&Point::new(s, x[1], x[2]), t);
        let panel = |a: f64, b: f64| -> f64 {
            let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
            r * rule
                .nodes
                .iter()
                .zip(&rule.weights)
                .map(|(&l, &w)| w * g(c + r * l))
                .sum::<f64>()
        };
        fn refine(panel: &dyn Fn(f64, f64) -> f64, a: f64, b: f64, whole: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (left, right) = (panel(a, m), panel(m, b));
            let split = left + right;
            if depth == 0 || (split - whole).abs() <= 1e-14 * (1.0 + split.abs()) {
                split
            } else {
                refine(panel, a, m, left, depth - 1) + refine(panel, m, b, right, depth - 1)
            }
        }
        refine(&panel, xi, x[0], panel(xi, x[0]), 30)
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("analytic_antiderivative", &self.antiderivative.is_some())
            .finish()
    }
}

/// A moving surface S(u, v, t), (u, v) ∈ [0,1]².
#[derive(Clone)]
pub struct MovingSurface {
    eval: Arc<SurfaceFn>,
    du: Option<Arc<SurfaceFn>>,
    dv: Option<Arc<SurfaceFn>>,
    dt: Option<Arc<SurfaceFn>>,
}

impl MovingSurface {
    pub fn new(eval: impl Fn(f64, f64, f64) -> Point + Send + Sync + 'static) -> Self {
        Self {
            eval: Arc::new(eval),
            du: None,
            dv: None,
            dt: None,
        }
    }

    /// Attach analytic partials ∂u S, ∂v S and ∂t S.
    pub fn with_partials(
        mut self,
        du: impl Fn(f64, f64, f64) -> Point + Send + Sync + 'static,
        dv: impl Fn(f64, f64, f64) -> Point + Send + Sync + 'static,
        dt: impl Fn(f64, f64, f64) -> Point + Send + Sync + 'static,
    ) -> Self {
        self.du = Some(Arc::new(du));
        self.dv = Some(Arc::new(dv));
        self.dt = Some(Arc::new(dt));
        self
    }

    #[inline]
    pub fn eval(&self, u: f64, v: f64, t: f64) -> Point {
        (self.eval)(u, v, t)
    }

    pub fn partial_u(&self, u: f64, v: f64, t: f64) -> Point {
        match &self.du {
            Some(d) => d(u, v, t),
            None => self.partial_u_fd(u, v, t),
        }
    }

    pub fn partial_v(&self, u: f64, v: f64, t: f64) -> Point {
        match &self.dv {
            Some(d) => d(u, v, t),
            None => self.partial_v_fd(u, v, t),
        }
    }

    /// The surface velocity ∂t S.
    pub fn partial_t(&self, u: f64, v: f64, t: f64) -> Point {
        match &self.dt {
            Some(d) => d(u, v, t),
            None => self.partial_t_fd(u, v, t),
        }
    }

    pub fn partial_u_fd(&self, u: f64, v: f64, t: f64) -> Point {
        central_diff4(|s| self.eval(s, v, t), u)
    }

    pub fn partial_v_fd(&self, u: f64, v: f64, t: f64) -> Point {
        central_diff4(|s| self.eval(u, s, t), v)
    }

    pub fn partial_t_fd(&self, u: f64, v: f64, t: f64) -> Point {
        central_diff4(|s| self.eval(u, v, s), t)
    }

    /// Whether the surface is independent of time (∂t S ≡ 0 on a probe set).
    pub fn is_static(&self, t0: f64, te: f64) -> bool {
        let probes = [0.1, 0.37, 0.5, 0.83];
        probes.iter().all(|&u| {
            probes.iter().all(|&v| {
                (self.eval(u, v, t0) - self.eval(u, v, te)).norm() == 0.0
                    && (self.eval(u, v, t0) - self.eval(u, v, 0.5 * (t0 + te))).norm() == 0.0
            })
        })
    }
}

impl fmt::Debug for MovingSurface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MovingSurface")
            .field("analytic_partials", &self.du.is_some())
            .finish()
    }
}

/// Unit normal n = −(∂u S × ∂v S)/|∂u S × ∂v S|, so that
/// det[∂u S, ∂v S, n] < 0.
pub fn surface_normal(s: &MovingSurface, u: f64, v: f64, t: f64) -> Result<Point> {
    oriented_normal(&s.partial_u(u, v, t), &s.partial_v(u, v, t)).ok_or(Error::SingularPoint { u, v, t })
}

/// The normal −(a × b)/|a × b| of a tangent pair, or `None` when the pair is
/// rank deficient.
pub fn oriented_normal(su: &Point, sv: &Point) -> Option<Point> {
    let c = su.cross(sv);
    let norm = c.norm();
    let scale = su.norm() * sv.norm();
    if !(norm > 1e-12 * scale) || norm == 0.0 {
        return None;
    }
    Some(-c / norm)
}

/// A named test problem: velocity, conserved scalar, moving surface and time
/// interval.
#[derive(Clone, Debug)]
pub struct PresetCase {
    pub name: String,
    pub velocity: VelocityField,
    pub scalar: ScalarField,
    pub surface: MovingSurface,
    pub t0: f64,
    pub te: f64,
}

impl PresetCase {
    /// The same problem viewed in a frame rotated by `r` (orthogonal).
    /// Fluxes of rotation-invariant scalars are unchanged.
    pub fn rotated(&self, r: Matrix3<f64>) -> PresetCase {
        let rt = r.transpose();
        let (u, f, s) = (self.velocity.clone(), self.scalar.clone(), self.surface.clone());
        let (du, dv, dt) = (self.surface.clone(), self.surface.clone(), self.surface.clone());
        let mut velocity = VelocityField::new(move |x, t| r * u.eval(&(rt * x), t));
        if self.velocity.has_analytic_divergence() {
            let u = self.velocity.clone();
            velocity = velocity.with_divergence(move |x, t| u.divergence(&(rt * x), t));
        }
        if self.velocity.jacobian.is_some() {
            let u = self.velocity.clone();
            velocity = velocity.with_jacobian(move |x, t| r * u.jacobian(&(rt * x), t) * rt);
        }
        PresetCase {
            name: format!("{} (rotated)", self.name),
            velocity,
            scalar: ScalarField::new(move |x, t| f.eval(&(rt * x), t)),
            surface: MovingSurface::new(move |a, b, t| r * s.eval(a, b, t)).with_partials(
                move |a, b, t| r * du.partial_u(a, b, t),
                move |a, b, t| r * dv.partial_v(a, b, t),
                move |a, b, t| r * dt.partial_t(a, b, t),
            ),
            t0: self.t0,
            te: self.te,
        }
    }
}

/// Stable identifiers of the built-in test problems.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    LevequeStatic,
    LevequeMoving,
    CompressibleStatic,
    CompressibleMoving1,
    CompressibleMoving2,
    TranslateDemo,
    ZeroFlow,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::LevequeStatic,
        Preset::LevequeMoving,
        Preset::CompressibleStatic,
        Preset::CompressibleMoving1,
        Preset::CompressibleMoving2,
        Preset::TranslateDemo,
        Preset::ZeroFlow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::LevequeStatic => "leveque-static",
            Preset::LevequeMoving => "leveque-moving",
            Preset::CompressibleStatic => "compressible-static",
            Preset::CompressibleMoving1 => "compressible-moving-1",
            Preset::CompressibleMoving2 => "compressible-moving-2",
            Preset::TranslateDemo => "translate-demo",
            Preset::ZeroFlow => "zero-flow",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Preset::LevequeStatic => "LeVeque deformation flow (T=3), planar square z=1/4, [0, 3/2]",
            Preset::LevequeMoving => "LeVeque deformation flow (T=3), deforming paraboloid patch, [0, 1]",
            Preset::CompressibleStatic => "rotation-strain flow (div u = 3), square z=1/4 on [-1,1]^2, [0, 1]",
            Preset::CompressibleMoving1 => "rotation-strain flow, deforming paraboloid patch, [0, 1]",
            Preset::CompressibleMoving2 => "rotation-strain flow, deforming paraboloid patch, [0, 2]",
            Preset::TranslateDemo => "u = (0,0,-1), square translating in -x, f = 1, [0, 1]",
            Preset::ZeroFlow => "u = 0, static unit square z=1/2, f = 1, [0, 1]",
        }
    }

    pub fn from_name(name: &str) -> Result<Preset> {
        Preset::ALL
            .iter()
            .copied()
            .find(|p| p.name() == name)
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::argument(format!("unknown preset '{name}'; available: {}", names.join(", ")))
            })
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Overrides applied on top of a preset's defaults.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PresetOptions {
    /// Period T of the LeVeque flow's cos(πt/T) factor.
    pub period: Option<f64>,
    /// Time interval [t0, te].
    pub interval: Option<(f64, f64)>,
    /// Replace the preset scalar with f ≡ 1.
    pub unit_scalar: bool,
}

pub fn make_preset(name: &str) -> Result<PresetCase> {
    make_preset_with(name, &PresetOptions::default())
}

pub fn make_preset_with(name: &str, opts: &PresetOptions) -> Result<PresetCase> {
    let preset = Preset::from_name(name)?;
    let period = opts.period.unwrap_or(3.0);
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::argument(format!("period must be positive, got {period}")));
    }
    let (velocity, scalar, surface, (t0, te)) = match preset {
        Preset::LevequeStatic => (leveque_velocity(period), leveque_scalar(), static_square_quarter(), (0.0, 1.5)),
        Preset::LevequeMoving => (leveque_velocity(period), leveque_scalar(), paraboloid_centered(), (0.0, 1.0)),
        Preset::CompressibleStatic => (rotation_strain_velocity(), rotation_strain_scalar(), static_square_wide(), (0.0, 1.0)),
        Preset::CompressibleMoving1 => (rotation_strain_velocity(), rotation_strain_scalar(), paraboloid_corner(), (0.0, 1.0)),
        Preset::CompressibleMoving2 => (rotation_strain_velocity(), rotation_strain_scalar(), paraboloid_corner(), (0.0, 2.0)),
        Preset::TranslateDemo => (
            VelocityField::new(|_, _| Point::new(0.0, 0.0, -1.0))
                .with_divergence(|_, _| 0.0)
                .with_jacobian(|_, _| Matrix3::zeros()),
            ScalarField::constant(1.0),
            MovingSurface::new(|u, v, t| Point::new(u - t, v, 0.0)).with_partials(
                |_, _, _| Point::new(1.0, 0.0, 0.0),
                |_, _, _| Point::new(0.0, 1.0, 0.0),
                |_, _, _| Point::new(-1.0, 0.0, 0.0),
            ),
            (0.0, 1.0),
        ),
        Preset::ZeroFlow => (
            VelocityField::new(|_, _| Point::zeros())
                .with_divergence(|_, _| 0.0)
                .with_jacobian(|_, _| Matrix3::zeros()),
            ScalarField::constant(1.0),
            MovingSurface::new(|u, v, _| Point::new(u, v, 0.5)).with_partials(
                |_, _, _| Point::new(1.0, 0.0, 0.0),
                |_, _, _| Point::new(0.0, 1.0, 0.0),
                |_, _, _| Point::zeros(),
            ),
            (0.0, 1.0),
        ),
    };
    let (t0, te) = opts.interval.unwrap_or((t0, te));
    if !(te > t0) || !t0.is_finite() || !te.is_finite() {
        return Err(Error::argument(format!("interval must satisfy te > t0, got [{t0}, {te}]")));
    }
    let scalar = if opts.unit_scalar { ScalarField::constant(1.0) } else { scalar };
    Ok(PresetCase {
        name: preset.name().to_string(),
        velocity,
        scalar,
        surface,
        t0,
        te,
    })
}

fn leveque_velocity(period: f64) -> VelocityField {
    VelocityField::new(move |p, t| {
        let (sx, sy, sz) = ((PI * p.x).sin(), (PI * p.y).sin(), (PI * p.z).sin());
        let (s2x, s2y, s2z) = ((2.0 * PI * p.x).sin(), (2.0 * PI * p.y).sin(), (2.0 * PI * p.z).sin());
        let c = (PI * t / period).cos();
        Point::new(
            2.0 * c * sx * sx * s2y * s2z,
            -c * s2x * sy * sy * s2z,
            -c * s2x * s2y * sz * sz,
        )
    })
    .with_divergence(|_, _| 0.0)
}

fn leveque_scalar() -> ScalarField {
    ScalarField::new(|p, _| (PI * p.x).sin() * (PI * p.y).sin() * (PI * p.z).sin()).with_antiderivative(
        |p, _, xi| ((PI * xi).cos() - (PI * p.x).cos()) / PI * (PI * p.y).sin() * (PI * p.z).sin(),
    )
}

fn rotation_strain_velocity() -> VelocityField {
    let tau = 2.0 * PI;
    VelocityField::new(move |p, _| {
        Point::new(
            p.x + tau * (p.y + p.z),
            -tau * (p.x + p.z) + p.y,
            p.z + tau * (p.y - p.x),
        )
    })
    .with_divergence(|_, _| 3.0)
    .with_jacobian(move |_, _| Matrix3::new(1.0, tau, tau, -tau, 1.0, -tau, -tau, tau, 1.0))
}

fn rotation_strain_scalar() -> ScalarField {
    ScalarField::new(|p, t| p.norm_squared() * (-5.0 * t).exp()).with_antiderivative(|p, t, xi| {
        ((p.x.powi(3) - xi.powi(3)) / 3.0 + (p.y * p.y + p.z * p.z) * (p.x - xi)) * (-5.0 * t).exp()
    })
}

fn static_square_quarter() -> MovingSurface {
    MovingSurface::new(|u, v, _| Point::new(0.5 * u, 0.5 * v, 0.25)).with_partials(
        |_, _, _| Point::new(0.5, 0.0, 0.0),
        |_, _, _| Point::new(0.0, 0.5, 0.0),
        |_, _, _| Point::zeros(),
    )
}

fn static_square_wide() -> MovingSurface {
    MovingSurface::new(|u, v, _| Point::new(2.0 * u - 1.0, 2.0 * v - 1.0, 0.25)).with_partials(
        |_, _, _| Point::new(2.0, 0.0, 0.0),
        |_, _, _| Point::new(0.0, 2.0, 0.0),
        |_, _, _| Point::zeros(),
    )
}

/// The deforming patch over (−1,1)², stored in its (0,1)² form via
/// u ↦ 2u − 1, v ↦ 2v − 1.
fn paraboloid_centered() -> MovingSurface {
    MovingSurface::new(|u, v, t| {
        let (a, b, s) = (2.0 * u - 1.0, 2.0 * v - 1.0, (0.5 * PI * t).sin());
        Point::new(a * s, b * s, t * t / 72.0 * (9.0 * a * a + 4.0 * b * b))
    })
    .with_partials(
        |u, _, t| Point::new(2.0 * (0.5 * PI * t).sin(), 0.0, 0.5 * t * t * (2.0 * u - 1.0)),
        |_, v, t| Point::new(0.0, 2.0 * (0.5 * PI * t).sin(), 2.0 * t * t * (2.0 * v - 1.0) / 9.0),
        |u, v, t| {
            let (a, b, c) = (2.0 * u - 1.0, 2.0 * v - 1.0, 0.5 * PI * (0.5 * PI * t).cos());
            Point::new(a * c, b * c, t / 36.0 * (9.0 * a * a + 4.0 * b * b))
        },
    )
}

fn paraboloid_corner() -> MovingSurface {
    MovingSurface::new(|u, v, t| {
        let s = (0.5 * PI * t).sin();
        Point::new(u * s, v * s, t * t / 72.0 * (9.0 * u * u + 4.0 * v * v))
    })
    .with_partials(
        |u, _, t| Point::new((0.5 * PI * t).sin(), 0.0, 0.25 * t * t * u),
        |_, v, t| Point::new(0.0, (0.5 * PI * t).sin(), t * t * v / 9.0),
        |u, v, t| {
            let c = 0.5 * PI * (0.5 * PI * t).cos();
            Point::new(u * c, v * c, t / 36.0 * (9.0 * u * u + 4.0 * v * v))
        },
    )
}

/// ∂t f + ∇·(u f) by 4th-order central differences.
pub fn conservation_residual(case: &PresetCase, x: &Point, t: f64) -> f64 {
    let f = &case.scalar;
    let u = &case.velocity;
    let dfdt = central_diff4(|s| f.eval(x, s), t);
    let div: f64 = (0..3)
        .map(|i| {
            central_diff4(
                |s| {
                    let mut y = *x;
                    y[i] = s;
                    u.eval(&y, t)[i] * f.eval(&y, t)
                },
                x[i],
            )
        })
        .sum();
    dfdt + div
}
