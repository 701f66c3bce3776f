//! Fixed-step explicit Runge-Kutta integrators and the flow map.

use rayon::prelude::*;

use crate::fields::VelocityField;
use crate::{Error, Point, Result};

/// Butcher tableau of an explicit scheme; `a[i]` holds the i-th row below the
/// diagonal.
#[derive(Debug)]
pub struct Tableau {
    pub a: &'static [&'static [f64]],
    pub b: &'static [f64],
    pub c: &'static [f64],
}

/// Explicit midpoint rule.
static MODIFIED_EULER: Tableau = Tableau {
    a: &[&[], &[0.5]],
    b: &[0.0, 1.0],
    c: &[0.0, 0.5],
};

static CLASSIC_RK4: Tableau = Tableau {
    a: &[&[], &[0.5], &[0.0, 0.5], &[0.0, 0.0, 1.0]],
    b: &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
    c: &[0.0, 0.5, 0.5, 1.0],
};

/// Verner's 8-stage 6(5) pair; only the 6th-order weights are used.
static VERNER6: Tableau = Tableau {
    a: &[
        &[],
        &[1.0 / 6.0],
        &[4.0 / 75.0, 16.0 / 75.0],
        &[5.0 / 6.0, -8.0 / 3.0, 5.0 / 2.0],
        &[-165.0 / 64.0, 55.0 / 6.0, -425.0 / 64.0, 85.0 / 96.0],
        &[12.0 / 5.0, -8.0, 4015.0 / 612.0, -11.0 / 36.0, 88.0 / 255.0],
        &[-8263.0 / 15000.0, 124.0 / 75.0, -643.0 / 680.0, -81.0 / 250.0, 2484.0 / 10625.0, 0.0],
        &[
            3501.0 / 1720.0,
            -300.0 / 43.0,
            297275.0 / 52632.0,
            -319.0 / 2322.0,
            24068.0 / 84065.0,
            0.0,
            3850.0 / 26703.0,
        ],
    ],
    b: &[
        3.0 / 40.0,
        0.0,
        875.0 / 2244.0,
        23.0 / 72.0,
        264.0 / 1955.0,
        0.0,
        125.0 / 11592.0,
        43.0 / 616.0,
    ],
    c: &[0.0, 1.0 / 6.0, 4.0 / 15.0, 2.0 / 3.0, 5.0 / 6.0, 1.0, 1.0 / 15.0, 1.0],
};

const MAX_STAGES: usize = 8;

/// Point sets above this size are integrated in parallel.
const PAR_THRESHOLD: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Integrator {
    /// 2nd order, explicit midpoint.
    ModifiedEuler,
    /// 4th order.
    ClassicRk4,
    /// 6th order.
    Verner6,
}

impl Integrator {
    pub fn from_order(order: usize) -> Result<Self> {
        match order {
            2 => Ok(Integrator::ModifiedEuler),
            4 => Ok(Integrator::ClassicRk4),
            6 => Ok(Integrator::Verner6),
            _ => Err(Error::argument(format!("integrator order must be 2, 4 or 6, got {order}"))),
        }
    }

    pub fn order(self) -> usize {
        match self {
            Integrator::ModifiedEuler => 2,
            Integrator::ClassicRk4 => 4,
            Integrator::Verner6 => 6,
        }
    }

    pub fn tableau(self) -> &'static Tableau {
        match self {
            Integrator::ModifiedEuler => &MODIFIED_EULER,
            Integrator::ClassicRk4 => &CLASSIC_RK4,
            Integrator::Verner6 => &VERNER6,
        }
    }

    /// One RK step of a single point.
    pub fn step(self, u: &VelocityField, p: &Point, t: f64, dt: f64) -> Result<Point> {
        let tab = self.tableau();
        let mut k = [Point::zeros(); MAX_STAGES];
        for (i, (row, &ci)) in tab.a.iter().zip(tab.c).enumerate() {
            let mut y = *p;
            for (kj, &aij) in k.iter().zip(row.iter()) {
                if aij != 0.0 {
                    y += kj * (dt * aij);
                }
            }
            let ts = t + ci * dt;
            let vel = u.eval(&y, ts);
            if !(vel.x.is_finite() && vel.y.is_finite() && vel.z.is_finite()) {
                return Err(Error::Evaluation {
                    point: [y.x, y.y, y.z],
                    time: ts,
                });
            }
            k[i] = vel;
        }
        let mut out = *p;
        for (ki, &bi) in k.iter().zip(tab.b) {
            if bi != 0.0 {
                out += ki * (dt * bi);
            }
        }
        Ok(out)
    }

    /// Advance one point by `steps` equal steps from `t_start` to `t_end`.
    pub fn advect(self, u: &VelocityField, p: &Point, t_start: f64, t_end: f64, steps: usize) -> Result<Point> {
        if steps == 0 || t_end == t_start {
            return Ok(*p);
        }
        let dt = (t_end - t_start) / steps as f64;
        let mut q = *p;
        for j in 0..steps {
            q = self.step(u, &q, t_start + j as f64 * dt, dt)?;
        }
        Ok(q)
    }
}

/// One RK step applied to every point of `pts`; order is preserved.
pub fn rk_step(integrator: Integrator, u: &VelocityField, pts: &[Point], t: f64, dt: f64) -> Result<Vec<Point>> {
    if dt == 0.0 || !dt.is_finite() {
        return Err(Error::argument(format!("time step must be nonzero and finite, got {dt}")));
    }
    map_points(pts, |p| integrator.step(u, p, t, dt))
}

/// Number of steps covering `span` with steps no longer than `|dt|`.
pub fn step_count(span: f64, dt: f64) -> usize {
    let ratio = (span / dt).abs();
    // Absorb rounding so that span = m * dt exactly yields m, not m + 1.
    ((ratio * (1.0 - 1e-12)).ceil() as usize).max(1)
}

/// Approximates φ_{t0}^{te−t0} on every point with `m = ceil((te−t0)/dt)`
/// equal steps of size `(te−t0)/m`.
///
/// `dt_tentative` must carry the sign of `te − t0` (negative for backward
/// maps). A zero-length interval returns the points unchanged.
pub fn flow_map(
    u: &VelocityField,
    pts: &[Point],
    t0: f64,
    te: f64,
    integrator: Integrator,
    dt_tentative: f64,
) -> Result<Vec<Point>> {
    if dt_tentative == 0.0 || !dt_tentative.is_finite() {
        return Err(Error::argument(format!("tentative step must be nonzero and finite, got {dt_tentative}")));
    }
    if te == t0 {
        return Ok(pts.to_vec());
    }
    if (te - t0) * dt_tentative <= 0.0 {
        return Err(Error::argument(format!(
            "tentative step {dt_tentative} has the wrong sign for the interval {t0} -> {te}"
        )));
    }
    let m = step_count(te - t0, dt_tentative);
    flow_map_steps(u, pts, t0, te, integrator, m)
}

/// Flow map with a fixed step count. Smooth in `t0`/`te`, which finite
/// differences across time need.
pub fn flow_map_steps(
    u: &VelocityField,
    pts: &[Point],
    t0: f64,
    te: f64,
    integrator: Integrator,
    steps: usize,
) -> Result<Vec<Point>> {
    map_points(pts, |p| integrator.advect(u, p, t0, te, steps))
}

fn map_points<F>(pts: &[Point], f: F) -> Result<Vec<Point>>
where
    F: Fn(&Point) -> Result<Point> + Sync + Send,
{
    if pts.len() >= PAR_THRESHOLD {
        pts.par_iter().map(&f).collect()
    } else {
        pts.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::make_preset;

    fn all() -> [Integrator; 3] {
        [Integrator::ModifiedEuler, Integrator::ClassicRk4, Integrator::Verner6]
    }

    #[test]
    fn tableau_rows_sum_to_nodes() {
        for integ in all() {
            let tab = integ.tableau();
            assert_eq!(tab.a.len(), tab.c.len());
            for (row, &c) in tab.a.iter().zip(tab.c) {
                let s: f64 = row.iter().sum();
                assert!((s - c).abs() < 1e-14, "{integ:?}: {s} vs {c}");
            }
            let bs: f64 = tab.b.iter().sum();
            assert!((bs - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn quadrature_order_conditions() {
        // Σ b_i c_i^(k-1) = 1/k for k up to the order.
        for integ in all() {
            let tab = integ.tableau();
            for k in 1..=integ.order() {
                let s: f64 = tab.b.iter().zip(tab.c).map(|(b, c)| b * c.powi(k as i32 - 1)).sum();
                assert!((s - 1.0 / k as f64).abs() < 1e-14, "{integ:?} k={k}");
            }
        }
    }

    #[test]
    fn zero_field_fixes_points() {
        let u = VelocityField::new(|_, _| Point::zeros());
        let pts = vec![Point::new(0.1, 0.2, 0.3), Point::new(-1.0, 5.0, 2.0)];
        for integ in all() {
            assert_eq!(rk_step(integ, &u, &pts, 0.0, 0.1).unwrap(), pts);
            assert_eq!(flow_map(&u, &pts, 0.3, 2.0, integ, 0.07).unwrap(), pts);
        }
    }

    #[test]
    fn constant_field_backward_step_is_exact() {
        let u = VelocityField::new(|_, _| Point::new(0.0, 0.0, -1.0));
        let pts = [Point::new(0.3, 0.7, 0.0)];
        for integ in all() {
            let out = rk_step(integ, &u, &pts, 0.0, -0.25).unwrap();
            assert!((out[0] - Point::new(0.3, 0.7, 0.25)).norm() < 1e-15);
        }
    }

    #[test]
    fn linear_field_step_matches_exponential() {
        let u = VelocityField::new(|x, _| *x);
        let out = rk_step(Integrator::ClassicRk4, &u, &[Point::new(1.0, 1.0, 1.0)], 0.0, 0.1).unwrap();
        let exact = 0.1f64.exp();
        // RK4 reproduces the Taylor series through h^4; the remainder is
        // Σ_{k≥5} h^k / k! < 1.0e-7 for h = 0.1.
        let bound: f64 = (5..20).map(|k| 0.1f64.powi(k) / (1..=k).map(f64::from).product::<f64>()).sum();
        for i in 0..3 {
            assert!((out[0][i] - exact).abs() <= bound * 1.0001);
        }
    }

    #[test]
    fn translate_demo_composite_map() {
        // χ(z1, z2, τ) = φ_τ^{-τ}(z1 − τ, z2, 0) = (z1 − τ, z2, τ).
        let case = make_preset("translate-demo").unwrap();
        let (z1, z2, tau) = (0.4, 0.9, 0.6);
        let seed = case.surface.eval(z1, z2, tau);
        let out = flow_map(&case.velocity, &[seed], tau, 0.0, Integrator::Verner6, -0.1).unwrap();
        assert!((out[0] - Point::new(z1 - tau, z2, tau)).norm() < 1e-14);
    }

    #[test]
    fn bad_steps_are_rejected() {
        let u = VelocityField::new(|_, _| Point::zeros());
        let p = [Point::zeros()];
        assert!(flow_map(&u, &p, 0.0, 1.0, Integrator::Verner6, 0.0).is_err());
        assert!(flow_map(&u, &p, 0.0, 1.0, Integrator::Verner6, -0.1).is_err());
        assert!(flow_map(&u, &p, 1.0, 0.0, Integrator::Verner6, 0.1).is_err());
        assert!(rk_step(Integrator::Verner6, &u, &p, 0.0, 0.0).is_err());
        assert!(Integrator::from_order(3).is_err());
    }

    #[test]
    fn non_finite_velocity_is_reported() {
        let u = VelocityField::new(|x, _| if x.z > 0.5 { Point::new(f64::NAN, 0.0, 0.0) } else { Point::new(0.0, 0.0, 1.0) });
        let err = flow_map(&u, &[Point::zeros()], 0.0, 1.0, Integrator::ClassicRk4, 0.1).unwrap_err();
        assert!(matches!(err, Error::Evaluation { .. }));
    }

    #[test]
    fn step_count_covers_interval_exactly() {
        assert_eq!(step_count(1.5, 1.5 / 128.0), 128);
        assert_eq!(step_count(-1.0, -0.3), 4);
        assert_eq!(step_count(1.0, 2.0), 1);
        assert_eq!(step_count(0.7, 0.1), 7);
    }

    #[test]
    fn self_convergence_rates_on_leveque_flow() {
        let case = make_preset("leveque-static").unwrap();
        let p = [Point::new(0.3, 0.2, 0.25)];
        for integ in all() {
            let dt0 = 1.5 / 128.0;
            let reference = flow_map(&case.velocity, &p, 0.0, 1.5, integ, dt0 / 64.0).unwrap()[0];
            let err = |dt: f64| (flow_map(&case.velocity, &p, 0.0, 1.5, integ, dt).unwrap()[0] - reference).norm();
            let ratio = err(dt0) / err(dt0 / 2.0);
            let expected = 2f64.powi(integ.order() as i32);
            assert!(
                (ratio / expected - 1.0).abs() < 0.2,
                "{integ:?}: ratio {ratio}, expected {expected}"
            );
        }
    }
}
