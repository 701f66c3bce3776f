//! Generating cycle of a moving surface: six spline patches approximating
//! χ(∂B³), plus tessellation and mesh export.
//!
//! Patch layout, with (a, b) the spline parameters:
//!
//! | patch | knot (i, j)                                  | sign |
//! |-------|----------------------------------------------|------|
//! | P1    | S(u_i, v_j, t0)                              | +1   |
//! | P2    | backward flow of S(u_i, v_j, te) to t0        | −1   |
//! | P3    | backward flow of S(0, v_i, t_j) to t0         | +1   |
//! | P4    | backward flow of S(u_i, 1, t_j) to t0         | +1   |
//! | P5    | backward flow of S(1, v_{N−i}, t_j) to t0     | +1   |
//! | P6    | backward flow of S(u_{N−i}, 0, t_j) to t0     | +1   |
//!
//! A patch's outward normal is `−sign · (P_a × P_b)` normalized.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::fields::{MovingSurface, VelocityField};
use crate::ode::{step_count, Integrator};
use crate::spline::{fit_tensor_spline, KnotGrid, TensorSpline};
use crate::{Error, Point, Result};

pub const PATCH_SIGNS: [f64; 6] = [1.0, -1.0, 1.0, 1.0, 1.0, 1.0];
pub const PATCH_NAMES: [&str; 6] = ["P1", "P2", "P3", "P4", "P5", "P6"];

#[derive(Clone, Debug, PartialEq)]
pub struct CycleMeta {
    pub t0: f64,
    pub te: f64,
    pub h: f64,
    /// Time step actually used, (te − t0)/M.
    pub dt: f64,
    pub kappa: usize,
    pub n: usize,
    pub m: usize,
}

#[derive(Clone, Debug)]
pub struct GeneratingCycleMesh {
    pub patches: Vec<TensorSpline>,
    pub signs: [f64; 6],
    pub grids: Vec<KnotGrid>,
    pub meta: CycleMeta,
}

/// Builds the six knot grids and fits order-κ splines through them.
pub fn build_generating_cycle(
    u: &VelocityField,
    s: &MovingSurface,
    t0: f64,
    te: f64,
    h: f64,
    dt: f64,
    kappa: usize,
) -> Result<GeneratingCycleMesh> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::argument(format!("spatial step h must lie in (0, 1], got {h}")));
    }
    if !(te - t0).is_finite() || te == t0 || (te - t0) * dt <= 0.0 {
        return Err(Error::argument(format!(
            "time step {dt} must be nonzero with the sign of te - t0 = {}",
            te - t0
        )));
    }
    let integ = Integrator::from_order(kappa)?;
    let n = step_count(1.0, h);
    let m = step_count(te - t0, dt);
    let grids = knot_grids(u, s, t0, te, n, m, integ)?;
    let patches = grids
        .iter()
        .map(|g| fit_tensor_spline(g, kappa))
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratingCycleMesh {
        patches,
        signs: PATCH_SIGNS,
        grids,
        meta: CycleMeta {
            t0,
            te,
            h,
            dt: (te - t0) / m as f64,
            kappa,
            n,
            m,
        },
    })
}

fn knot_grids(
    u: &VelocityField,
    s: &MovingSurface,
    t0: f64,
    te: f64,
    n: usize,
    m: usize,
    integ: Integrator,
) -> Result<Vec<KnotGrid>> {
    let param = |i: usize| i as f64 / n as f64;
    // Seed time of streak row j; the last row uses te exactly so it matches P2.
    let seed_time = |j: usize| if j == m { te } else { t0 + (te - t0) * j as f64 / m as f64 };
    let back = |p: Point, j: usize| -> Result<Point> {
        if j == 0 {
            Ok(p)
        } else {
            integ.advect(u, &p, seed_time(j), t0, j)
        }
    };

    let p1 = KnotGrid::sample(n, n, |a, b| s.eval(a, b, t0));
    let cap: Vec<Point> = (0..(n + 1) * (n + 1))
        .into_par_iter()
        .map(|k| back(s.eval(param(k / (n + 1)), param(k % (n + 1)), te), m))
        .collect::<Result<_>>()?;
    let p2 = KnotGrid::new(n, n, cap)?;

    let seeds: [&(dyn Fn(usize, f64) -> Point + Sync); 4] = [
        &|i, t| s.eval(0.0, param(i), t),
        &|i, t| s.eval(param(i), 1.0, t),
        &|i, t| s.eval(1.0, param(n - i), t),
        &|i, t| s.eval(param(n - i), 0.0, t),
    ];
    let mut grids = vec![p1, p2];
    for seed in seeds {
        let pts: Vec<Point> = (0..(n + 1) * (m + 1))
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k / (m + 1), k % (m + 1));
                back(seed(i, seed_time(j)), j)
            })
            .collect::<Result<_>>()?;
        grids.push(KnotGrid::new(n, m, pts)?);
    }
    Ok(grids)
}

/// χ(z1, z2, τ): the surface point S(z1, z2, t0 + τk) mapped back to t0 with
/// a fixed number of steps, so the map is smooth in τ.
#[derive(Clone, Debug)]
pub struct CompositeMap<'a> {
    pub velocity: &'a VelocityField,
    pub surface: &'a MovingSurface,
    pub t0: f64,
    pub k: f64,
    pub integrator: Integrator,
    pub steps: usize,
}

impl CompositeMap<'_> {
    pub fn eval(&self, z1: f64, z2: f64, tau: f64) -> Result<Point> {
        let t = self.t0 + tau * self.k;
        let p = self.surface.eval(z1, z2, t);
        if tau == 0.0 {
            return Ok(p);
        }
        self.integrator.advect(self.velocity, &p, t, self.t0, self.steps)
    }

    pub fn eval_at(&self, z: &Point) -> Result<Point> {
        self.eval(z[0], z[1], z[2])
    }

    /// Columns ∂χ/∂z1, ∂χ/∂z2, ∂χ/∂τ by 4th-order central differences.
    pub fn jacobian(&self, z: &Point, step: f64) -> Result<Matrix3<f64>> {
        jacobian_fd(|p| self.eval_at(p), z, step)
    }
}

/// 4th-order central-difference Jacobian of `map` at `x`, columns ∂map/∂x_j.
pub fn jacobian_fd(map: impl Fn(&Point) -> Result<Point>, x: &Point, step: f64) -> Result<Matrix3<f64>> {
    let mut jac = Matrix3::zeros();
    for j in 0..3 {
        let at = |s: f64| {
            let mut y = *x;
            y[j] += s;
            map(&y)
        };
        let col = ((at(-2.0 * step)? - at(2.0 * step)?) + (at(step)? - at(-step)?) * 8.0) / (12.0 * step);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Triangulated cycle with outward-facing winding.
#[derive(Clone, Debug)]
pub struct Tessellation {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    /// Patch index (0..6) of each triangle.
    pub patch: Vec<u8>,
    pub resolution: usize,
}

/// Samples every patch on an (r+1) × (r+1) parameter grid. Vertices are
/// not shared between patches.
pub fn tessellate(mesh: &GeneratingCycleMesh, resolution: usize) -> Result<Tessellation> {
    if resolution < 2 {
        return Err(Error::argument(format!("resolution must be at least 2, got {resolution}")));
    }
    let r = resolution;
    let side = r + 1;
    let mut vertices = Vec::with_capacity(6 * side * side);
    let mut triangles = Vec::with_capacity(12 * r * r);
    let mut patch = Vec::with_capacity(12 * r * r);
    for (pi, (spline, &sign)) in mesh.patches.iter().zip(&mesh.signs).enumerate() {
        let base = vertices.len();
        let pts: Vec<Point> = (0..side * side)
            .into_par_iter()
            .map(|k| spline.value((k / side) as f64 / r as f64, (k % side) as f64 / r as f64))
            .collect::<Result<_>>()?;
        vertices.extend(pts);
        let id = |i: usize, j: usize| base + i * side + j;
        for i in 0..r {
            for j in 0..r {
                // (a, b)-counterclockwise triangles have normal along P_a × P_b.
                let ccw = [[id(i, j), id(i + 1, j), id(i + 1, j + 1)], [id(i, j), id(i + 1, j + 1), id(i, j + 1)]];
                for [a, b, c] in ccw {
                    triangles.push(if sign > 0.0 { [a, c, b] } else { [a, b, c] });
                    patch.push(pi as u8);
                }
            }
        }
    }
    Ok(Tessellation {
        vertices,
        triangles,
        patch,
        resolution,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    /// Legacy ASCII VTK POLYDATA with one quad per parameter cell.
    Vtk,
    /// Wavefront OBJ, triangulated, one group per patch.
    Obj,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vtk" | "vtk-legacy-ascii" => Ok(ExportFormat::Vtk),
            "obj" => Ok(ExportFormat::Obj),
            other => Err(Error::argument(format!("unsupported export format {other:?}; use vtk or obj"))),
        }
    }
}

/// Writes the tessellated cycle as VTK or OBJ text.
pub fn export_cycle_mesh(mesh: &GeneratingCycleMesh, format: ExportFormat, resolution: usize) -> Result<String> {
    let tess = tessellate(mesh, resolution)?;
    let r = resolution;
    let side = r + 1;
    let mut out = String::new();
    match format {
        ExportFormat::Obj => {
            let _ = writeln!(out, "# generating cycle, {} vertices", tess.vertices.len());
            for p in &tess.vertices {
                let _ = writeln!(out, "v {:.17e} {:.17e} {:.17e}", p.x, p.y, p.z);
            }
            for (pi, name) in PATCH_NAMES.iter().enumerate() {
                let _ = writeln!(out, "g {name}");
                for (tri, _) in tess.triangles.iter().zip(&tess.patch).filter(|(_, &p)| p as usize == pi) {
                    let _ = writeln!(out, "f {} {} {}", tri[0] + 1, tri[1] + 1, tri[2] + 1);
                }
            }
        }
        ExportFormat::Vtk => {
            let _ = writeln!(out, "# vtk DataFile Version 3.0");
            let _ = writeln!(out, "generating cycle");
            let _ = writeln!(out, "ASCII");
            let _ = writeln!(out, "DATASET POLYDATA");
            let _ = writeln!(out, "POINTS {} double", tess.vertices.len());
            for p in &tess.vertices {
                let _ = writeln!(out, "{:.17e} {:.17e} {:.17e}", p.x, p.y, p.z);
            }
            let cells = 6 * r * r;
            let _ = writeln!(out, "POLYGONS {cells} {}", cells * 5);
            for (pi, &sign) in mesh.signs.iter().enumerate() {
                let base = pi * side * side;
                let id = |i: usize, j: usize| base + i * side + j;
                for i in 0..r {
                    for j in 0..r {
                        let q = [id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)];
                        if sign > 0.0 {
                            let _ = writeln!(out, "4 {} {} {} {}", q[0], q[3], q[2], q[1]);
                        } else {
                            let _ = writeln!(out, "4 {} {} {} {}", q[0], q[1], q[2], q[3]);
                        }
                    }
                }
            }
            let _ = writeln!(out, "CELL_DATA {cells}");
            let _ = writeln!(out, "SCALARS patch int 1");
            let _ = writeln!(out, "LOOKUP_TABLE default");
            for pi in 1..=6 {
                for _ in 0..r * r {
                    let _ = writeln!(out, "{pi}");
                }
            }
        }
    }
    Ok(out)
}
