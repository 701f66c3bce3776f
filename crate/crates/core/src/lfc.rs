//! The LFC3D flux driver, the Eulerian reference flux, convergence tables
//! and numerical checks of the flux, divergence and transport identities.

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::Serialize;

use crate::cycle::{build_generating_cycle, jacobian_fd, CompositeMap, GeneratingCycleMesh};
use crate::degree::{donating_region_integral, DegreeClassifier, DonatingRegionEstimate};
use crate::fields::{central_diff4, MovingSurface, PresetCase, ScalarField, VelocityField};
use crate::ode::Integrator;
use crate::quad::{gauss_legendre, surface_flux_quadrature, FluxCubatureSpec, GaussRule, InnerRule};
use crate::{pairwise_sum, Error, Point, Result};

/// Discretization of one LFC3D run: h = 1/n_node_s, Δt = (te − t0)/n_node_t.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LfcParams {
    pub kappa: usize,
    pub n_node_s: usize,
    pub n_node_t: usize,
    pub xi: f64,
}

impl LfcParams {
    /// Equal space and time node counts, ξ = 0.
    pub fn new(kappa: usize, nodes: usize) -> Self {
        Self {
            kappa,
            n_node_s: nodes,
            n_node_t: nodes,
            xi: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FluxResult {
    /// I₁ − I₂ + I₃ + I₄ + I₅ + I₆.
    pub value: f64,
    /// Unsigned patch integrals I₁ … I₆.
    pub per_patch: [f64; 6],
    pub kappa: usize,
    pub h: f64,
    pub dt: f64,
    pub xi: f64,
}

/// Applies the patch signs to the patch integrals.
pub fn assemble(per_patch: &[f64; 6], signs: &[f64; 6]) -> f64 {
    per_patch.iter().zip(signs).map(|(i, s)| i * s).sum()
}

/// I_q(P̃ᵢ, f(·, t0)) for every patch with q = κ.
pub fn cycle_patch_integrals(mesh: &GeneratingCycleMesh, f: &ScalarField, xi: f64) -> Result<[f64; 6]> {
    let kappa = mesh.meta.kappa;
    let spec = FluxCubatureSpec::minimal(kappa, kappa)
        .with_xi(xi)
        .with_inner(InnerRule::Antiderivative);
    let mut out = [0.0; 6];
    for (o, patch) in out.iter_mut().zip(&mesh.patches) {
        *o = surface_flux_quadrature(patch, f, mesh.meta.t0, &spec)?;
    }
    Ok(out)
}

/// Flux of f through the moving surface over [t0, te] from the generating
/// cycle at t0.
pub fn lfc3d_flux(
    f: &ScalarField,
    u: &VelocityField,
    s: &MovingSurface,
    t0: f64,
    te: f64,
    params: &LfcParams,
) -> Result<FluxResult> {
    if params.n_node_s == 0 || params.n_node_t == 0 {
        return Err(Error::argument("node counts must be positive"));
    }
    if !(te > t0) {
        return Err(Error::argument(format!("interval must satisfy te > t0, got [{t0}, {te}]")));
    }
    let h = 1.0 / params.n_node_s as f64;
    let dt = (te - t0) / params.n_node_t as f64;
    let mesh = build_generating_cycle(u, s, t0, te, h, dt, params.kappa)?;
    let per_patch = cycle_patch_integrals(&mesh, f, params.xi)?;
    Ok(FluxResult {
        value: assemble(&per_patch, &mesh.signs),
        per_patch,
        kappa: params.kappa,
        h,
        dt: mesh.meta.dt,
        xi: params.xi,
    })
}

pub fn lfc3d_flux_case(case: &PresetCase, params: &LfcParams) -> Result<FluxResult> {
    lfc3d_flux(&case.scalar, &case.velocity, &case.surface, case.t0, case.te, params)
}

/// ∫_{t0}^{te} ∫_S f (u − ∂t S) · n dA dt by tensor Gauss-Legendre in
/// (u, v, t), with n = −(S_u × S_v)/|S_u × S_v| and dA = |S_u × S_v| du dv.
pub fn eulerian_flux_oracle(
    f: &ScalarField,
    u: &VelocityField,
    s: &MovingSurface,
    t0: f64,
    te: f64,
    n_space: usize,
    n_time: usize,
) -> Result<f64> {
    let rs = gauss_legendre(n_space)?;
    let rt = gauss_legendre(n_time)?;
    let half_t = 0.5 * (te - t0);
    let per_time: Vec<f64> = (0..n_time)
        .into_par_iter()
        .map(|k| {
            let t = t0 + half_t * (rt.nodes[k] + 1.0);
            let mut acc = Vec::with_capacity(n_space);
            for (&a, &wa) in rs.nodes.iter().zip(&rs.weights) {
                let a = 0.5 * (a + 1.0);
                let row: f64 = rs
                    .nodes
                    .iter()
                    .zip(&rs.weights)
                    .map(|(&b, &wb)| {
                        let b = 0.5 * (b + 1.0);
                        let x = s.eval(a, b, t);
                        let c = s.partial_u(a, b, t).cross(&s.partial_v(a, b, t));
                        -wb * f.eval(&x, t) * (u.eval(&x, t) - s.partial_t(a, b, t)).dot(&c)
                    })
                    .sum();
                acc.push(wa * row);
            }
            rt.weights[k] * pairwise_sum(&acc)
        })
        .collect();
    Ok(0.25 * half_t * pairwise_sum(&per_time))
}

/// Oracle resolutions compared by the reference gate, and its tolerance.
pub const REFERENCE_RESOLUTIONS: (usize, usize) = (64, 96);
pub const REFERENCE_GATE: f64 = 1e-11;

/// I_E for a preset after the self-convergence gate: the oracle at the two
/// reference resolutions must agree to `REFERENCE_GATE` relative.
pub fn reference_flux(case: &PresetCase) -> Result<f64> {
    let (lo, hi) = REFERENCE_RESOLUTIONS;
    let oracle = |n| eulerian_flux_oracle(&case.scalar, &case.velocity, &case.surface, case.t0, case.te, n, n);
    let (coarse, fine) = (oracle(lo)?, oracle(hi)?);
    let gap = (coarse - fine).abs() / fine.abs().max(f64::MIN_POSITIVE);
    if (coarse - fine).abs() > REFERENCE_GATE * fine.abs() {
        return Err(Error::ReferenceQuality {
            coarse,
            fine,
            gap,
            tolerance: REFERENCE_GATE,
        });
    }
    Ok(fine)
}

/// References with smaller magnitude are treated as zero flux.
pub const ZERO_FLUX: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub kappa: usize,
    pub h: f64,
    pub value: f64,
    /// |I − I_E| / |I_E|, or the absolute error when I_E is zero.
    #[serde(rename = "E")]
    pub error: f64,
    /// log2(E(2h)/E(h)); NaN on the coarsest row and for zero references.
    pub rate: f64,
    /// The reference is zero, so errors are absolute and rates undefined.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub case: String,
    pub reference: f64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn rows_for(&self, kappa: usize) -> impl Iterator<Item = &ConvergenceRow> {
        self.rows.iter().filter(move |r| r.kappa == kappa)
    }

    /// Rate at the finest grid pair for `kappa`.
    pub fn finest_rate(&self, kappa: usize) -> Option<f64> {
        self.rows_for(kappa).last().map(|r| r.rate)
    }
}

/// E_κ(h) and O_κ(h) for each κ over a halving sequence of node counts,
/// with nNodeT = nNodeS.
pub fn convergence_study(case: &PresetCase, kappas: &[usize], nodes: &[usize]) -> Result<ConvergenceTable> {
    for w in nodes.windows(2) {
        if w[1] != 2 * w[0] {
            return Err(Error::argument(format!("node counts must double at each level, got {nodes:?}")));
        }
    }
    let reference = reference_flux(case)?;
    let flagged = reference.abs() < ZERO_FLUX;
    let mut rows = Vec::new();
    for &kappa in kappas {
        let mut prev: Option<f64> = None;
        for &n in nodes {
            let value = lfc3d_flux_case(case, &LfcParams::new(kappa, n))?.value;
            let error = if flagged {
                (value - reference).abs()
            } else {
                (value - reference).abs() / reference.abs()
            };
            let rate = match prev {
                Some(e) if !flagged => (e / error).log2(),
                _ => f64::NAN,
            };
            rows.push(ConvergenceRow {
                kappa,
                h: 1.0 / n as f64,
                value,
                error,
                rate,
                flagged,
            });
            prev = Some(error);
        }
    }
    Ok(ConvergenceTable {
        case: case.name.clone(),
        reference,
        rows,
    })
}

fn cube_rule(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let GaussRule { nodes, weights } = gauss_legendre(n)?;
    Ok((
        nodes.iter().map(|&l| 0.5 * (l + 1.0)).collect(),
        weights.iter().map(|&w| 0.5 * w).collect(),
    ))
}

/// Tensor Gauss integral of `g` over [0,1]³.
fn integrate_cube(n: usize, g: impl Fn(&Point) -> Result<f64> + Sync) -> Result<f64> {
    let (x, w) = cube_rule(n)?;
    let planes: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut acc = Vec::with_capacity(n * n);
            for j in 0..n {
                for k in 0..n {
                    acc.push(w[i] * w[j] * w[k] * g(&Point::new(x[i], x[j], x[k]))?);
                }
            }
            Ok(pairwise_sum(&acc))
        })
        .collect::<Result<_>>()?;
    Ok(pairwise_sum(&planes))
}

/// Tensor Gauss integral of `g` over [0,1]².
fn integrate_square(n: usize, g: impl Fn(f64, f64) -> Result<f64> + Sync) -> Result<f64> {
    let (x, w) = cube_rule(n)?;
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let vals = (0..n).map(|j| Ok(w[i] * w[j] * g(x[i], x[j])?)).collect::<Result<Vec<_>>>()?;
            Ok(pairwise_sum(&vals))
        })
        .collect::<Result<_>>()?;
    Ok(pairwise_sum(&rows))
}

/// Relative difference |a − b| / |b|, absolute when b is zero.
pub fn relative_difference(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        (a - b).abs()
    } else {
        (a - b).abs() / b.abs()
    }
}

/// Both sides of the divergence theorem for F = (x, 0, 0) on the cycle.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivergenceCheck {
    /// Patch quadrature of ∮ x dy∧dz over the spline cycle.
    pub boundary: f64,
    /// ∫_{B³} J_χ by tensor Gauss with finite-difference Jacobians.
    pub volume: f64,
    pub relative_difference: f64,
}

/// FD step for Jacobians of composite maps.
const MAP_FD_STEP: f64 = 1e-3;

pub fn divergence_check(case: &PresetCase, params: &LfcParams, volume_points: usize) -> Result<DivergenceCheck> {
    let h = 1.0 / params.n_node_s as f64;
    let dt = (case.te - case.t0) / params.n_node_t as f64;
    let mesh = build_generating_cycle(&case.velocity, &case.surface, case.t0, case.te, h, dt, params.kappa)?;
    let boundary = assemble(&cycle_patch_integrals(&mesh, &ScalarField::constant(1.0), 0.0)?, &mesh.signs);
    let chi = CompositeMap {
        velocity: &case.velocity,
        surface: &case.surface,
        t0: case.t0,
        k: case.te - case.t0,
        integrator: Integrator::Verner6,
        steps: params.n_node_t,
    };
    let volume = integrate_cube(volume_points, |z| Ok(chi.jacobian(z, MAP_FD_STEP)?.determinant()))?;
    Ok(DivergenceCheck {
        boundary,
        volume,
        relative_difference: relative_difference(boundary, volume),
    })
}

/// Both sides of the transport identity for the moving cycle
/// φ(·; t) = χ over [t0, t].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransportCheck {
    pub time: f64,
    /// Central difference of ∫_{B³} f(φ, t) J_φ dx.
    pub lhs: f64,
    /// ∫ ∂t f(φ, t) J_φ dx plus the boundary flux of f ∂tφ.
    pub rhs: f64,
    pub relative_difference: f64,
}

pub struct TransportOptions {
    pub time: f64,
    /// Step of the central difference in t on the left-hand side.
    pub delta: f64,
    pub volume_points: usize,
    pub face_points: usize,
    /// Fixed step count of the composite map.
    pub steps: usize,
}

impl Default for TransportOptions {
    fn default() -> Self {
        Self {
            time: 0.5,
            delta: 1e-4,
            volume_points: 24,
            face_points: 32,
            steps: 32,
        }
    }
}

pub fn transport_check(case: &PresetCase, opts: &TransportOptions) -> Result<TransportCheck> {
    let t0 = case.t0;
    if !(opts.time > t0 + 2.0 * opts.delta) {
        return Err(Error::argument("transport check time must lie after t0 by more than 2 delta"));
    }
    let f = &case.scalar;
    let phi = |t: f64| CompositeMap {
        velocity: &case.velocity,
        surface: &case.surface,
        t0,
        k: t - t0,
        integrator: Integrator::Verner6,
        steps: opts.steps,
    };
    let content = |t: f64| -> Result<f64> {
        let map = phi(t);
        integrate_cube(opts.volume_points, |x| {
            Ok(f.eval(&map.eval_at(x)?, t) * map.jacobian(x, MAP_FD_STEP)?.determinant())
        })
    };
    let lhs = (content(opts.time + opts.delta)? - content(opts.time - opts.delta)?) / (2.0 * opts.delta);

    let t = opts.time;
    let map = phi(t);
    let interior = integrate_cube(opts.volume_points, |x| {
        let p = map.eval_at(x)?;
        let dfdt = central_diff4(|s| f.eval(&p, s), t);
        Ok(dfdt * map.jacobian(x, MAP_FD_STEP)?.determinant())
    })?;
    let eta = MAP_FD_STEP;
    let velocity = |x: &Point| -> Result<Point> {
        let at = |s: f64| phi(t + s).eval_at(x);
        Ok(((at(-2.0 * eta)? - at(2.0 * eta)?) + (at(eta)? - at(-eta)?) * 8.0) / (12.0 * eta))
    };
    let mut boundary = 0.0;
    for slot in 0..3 {
        for (side, sign) in [(1.0, 1.0), (0.0, -1.0)] {
            let face = integrate_square(opts.face_points, |a, b| {
                let mut x = Point::zeros();
                let others: Vec<usize> = (0..3).filter(|&i| i != slot).collect();
                x[slot] = side;
                x[others[0]] = a;
                x[others[1]] = b;
                let mut jac: Matrix3<f64> = jacobian_fd(|y| map.eval_at(y), &x, MAP_FD_STEP)?;
                let g = f.eval(&map.eval_at(&x)?, t) * velocity(&x)?;
                jac.set_column(slot, &g);
                Ok(jac.determinant())
            })?;
            boundary += sign * face;
        }
    }
    let rhs = interior + boundary;
    Ok(TransportCheck {
        time: t,
        lhs,
        rhs,
        relative_difference: relative_difference(lhs, rhs),
    })
}

/// One pairwise comparison of an identity check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityComparison {
    pub name: String,
    pub left: f64,
    pub right: f64,
    pub difference: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityReport {
    pub case: String,
    pub params: LfcParams,
    pub oracle: f64,
    pub lfc: FluxResult,
    pub donating: DonatingRegionEstimate,
    pub divergence: Option<DivergenceCheck>,
    pub transport: Option<TransportCheck>,
    pub comparisons: Vec<IdentityComparison>,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.comparisons.iter().all(|c| c.passed)
    }

    /// The report, or an identity-violation error naming the failing pairs.
    pub fn into_result(self) -> Result<Self> {
        let failed: Vec<String> = self
            .comparisons
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {} vs {} (difference {:e} > {:e})", c.name, c.left, c.right, c.difference, c.tolerance))
            .collect();
        if failed.is_empty() {
            Ok(self)
        } else {
            Err(Error::IdentityViolation(failed.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub params: LfcParams,
    pub mc_samples: usize,
    pub seed: u64,
    pub rays: usize,
    /// Tessellation resolution per patch edge; `None` picks a default.
    pub resolution: Option<usize>,
    /// Relative tolerance between the oracle and the cycle integral.
    pub flux_tolerance: f64,
    /// Allowed Monte Carlo deviation in standard errors.
    pub sigmas: f64,
    /// Gauss points per direction for the divergence check, if run.
    pub divergence_points: Option<usize>,
    pub divergence_tolerance: f64,
    /// Time of the transport check, if run.
    pub transport_time: Option<f64>,
    pub transport_tolerance: f64,
}

impl VerifyOptions {
    pub fn new(kappa: usize, nodes: usize) -> Self {
        Self {
            params: LfcParams::new(kappa, nodes),
            mc_samples: 100_000,
            seed: 0,
            rays: 5,
            resolution: None,
            flux_tolerance: 1e-4,
            sigmas: 3.0,
            divergence_points: None,
            divergence_tolerance: 1e-6,
            transport_time: None,
            transport_tolerance: 1e-5,
        }
    }
}

/// Oracle vs cycle integral vs donating-region Monte Carlo, plus the
/// optional divergence and transport checks.
pub fn verify_identities(case: &PresetCase, opts: &VerifyOptions) -> Result<IdentityReport> {
    let p = &opts.params;
    let oracle = reference_flux(case)?;
    let h = 1.0 / p.n_node_s as f64;
    let dt = (case.te - case.t0) / p.n_node_t as f64;
    let mesh = build_generating_cycle(&case.velocity, &case.surface, case.t0, case.te, h, dt, p.kappa)?;
    let per_patch = cycle_patch_integrals(&mesh, &case.scalar, p.xi)?;
    let lfc = FluxResult {
        value: assemble(&per_patch, &mesh.signs),
        per_patch,
        kappa: p.kappa,
        h,
        dt: mesh.meta.dt,
        xi: p.xi,
    };
    let resolution = opts.resolution.unwrap_or_else(|| DegreeClassifier::default_resolution(&mesh));
    let classifier = DegreeClassifier::new(&mesh, resolution, opts.rays, opts.seed)?;
    let donating = donating_region_integral(&classifier, &case.scalar, case.t0, opts.mc_samples, opts.seed)?;
    drop(classifier);

    let mut comparisons = vec![
        comparison("oracle vs cycle integral", oracle, lfc.value, opts.flux_tolerance, true),
        {
            let tol = opts.sigmas * donating.std_error + 1e-12 * (1.0 + lfc.value.abs());
            comparison("cycle integral vs donating regions", lfc.value, donating.value, tol, false)
        },
    ];
    let divergence = match opts.divergence_points {
        Some(n) => {
            let d = divergence_check(case, p, n)?;
            comparisons.push(comparison("divergence theorem", d.boundary, d.volume, opts.divergence_tolerance, true));
            Some(d)
        }
        None => None,
    };
    let transport = match opts.transport_time {
        Some(time) => {
            let t = transport_check(case, &TransportOptions { time, ..Default::default() })?;
            comparisons.push(comparison("transport theorem", t.lhs, t.rhs, opts.transport_tolerance, true));
            Some(t)
        }
        None => None,
    };
    Ok(IdentityReport {
        case: case.name.clone(),
        params: p.clone(),
        oracle,
        lfc,
        donating,
        divergence,
        transport,
        comparisons,
    })
}

fn comparison(name: &str, left: f64, right: f64, tolerance: f64, relative: bool) -> IdentityComparison {
    let difference = if relative {
        relative_difference(left, right)
    } else {
        (left - right).abs()
    };
    IdentityComparison {
        name: name.to_string(),
        left,
        right,
        difference,
        tolerance,
        passed: difference <= tolerance,
    }
}
