//! Vector-valued tensor-product interpolating splines of order κ ∈ {2, 4, 6}
//! (degree κ − 1) on uniform knots over [0,1]².
//!
//! Cubic and quintic fits use not-a-knot end conditions: the B-spline knot
//! vector drops the (κ−2)/2 interior data sites next to each end, which makes
//! the collocation system square. Each 1D fit is a banded solve; the 2D fit
//! runs the 1D fit along u for every row and then along v for every
//! coefficient, which equals the tensor-product interpolant. The result is
//! stored per piece in a local power basis σ ∈ [0,1].

use rayon::prelude::*;

use crate::{Error, Point, Result};

/// Grid of (nu+1) × (nv+1) data points, `point(i, j)` sitting at
/// (u, v) = (i/nu, j/nv).
#[derive(Clone, Debug, PartialEq)]
pub struct KnotGrid {
    pub nu: usize,
    pub nv: usize,
    pub points: Vec<Point>,
}

impl KnotGrid {
    pub fn new(nu: usize, nv: usize, points: Vec<Point>) -> Result<Self> {
        if points.len() != (nu + 1) * (nv + 1) {
            return Err(Error::argument(format!(
                "knot grid of {} x {} needs {} points, got {}",
                nu + 1,
                nv + 1,
                (nu + 1) * (nv + 1),
                points.len()
            )));
        }
        Ok(Self { nu, nv, points })
    }

    /// Grid sampled from `g(u, v)`.
    pub fn sample(nu: usize, nv: usize, g: impl Fn(f64, f64) -> Point) -> Self {
        let mut points = Vec::with_capacity((nu + 1) * (nv + 1));
        for i in 0..=nu {
            for j in 0..=nv {
                points.push(g(i as f64 / nu as f64, j as f64 / nv as f64));
            }
        }
        Self { nu, nv, points }
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> Point {
        self.points[i * (self.nv + 1) + j]
    }
}

/// Order κ of a spline (degree κ − 1).
fn check_order(order: usize) -> Result<()> {
    match order {
        2 | 4 | 6 => Ok(()),
        _ => Err(Error::argument(format!("spline order must be 2, 4 or 6, got {order}"))),
    }
}

/// Banded LU without pivoting. Spline collocation matrices are totally
/// positive, so elimination without pivoting is stable for them.
struct BandedLu {
    n: usize,
    band: usize,
    a: Vec<f64>,
}

impl BandedLu {
    fn width(&self) -> usize {
        2 * self.band + 1
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width() + (j + self.band - i)
    }

    fn factor(n: usize, band: usize, entries: impl Fn(usize, usize) -> f64) -> Self {
        let mut lu = BandedLu {
            n,
            band,
            a: vec![0.0; n * (2 * band + 1)],
        };
        for i in 0..n {
            for j in i.saturating_sub(band)..(i + band + 1).min(n) {
                let k = lu.idx(i, j);
                lu.a[k] = entries(i, j);
            }
        }
        for k in 0..n {
            let pivot = lu.a[lu.idx(k, k)];
            for i in k + 1..(k + band + 1).min(n) {
                let lik = lu.a[lu.idx(i, k)] / pivot;
                let ik = lu.idx(i, k);
                lu.a[ik] = lik;
                for j in k + 1..(k + band + 1).min(n) {
                    let (ij, kj) = (lu.idx(i, j), lu.idx(k, j));
                    lu.a[ij] -= lik * lu.a[kj];
                }
            }
        }
        lu
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for j in i.saturating_sub(self.band)..i {
                s -= self.a[self.idx(i, j)] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..(i + self.band + 1).min(n) {
                s -= self.a[self.idx(i, j)] * b[j];
            }
            b[i] = s / self.a[self.idx(i, i)];
        }
    }
}

fn find_span(knots: &[f64], n_coef: usize, degree: usize, x: f64) -> usize {
    if x >= knots[n_coef] {
        return n_coef - 1;
    }
    let mut lo = degree;
    let mut hi = n_coef;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if x < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Values and derivatives (up to `nd`) of the `degree + 1` nonzero B-splines
/// on `span` at `x`: `ders[k][j]` is the k-th derivative of N_{span−degree+j}.
fn basis_derivatives(knots: &[f64], span: usize, x: f64, degree: usize, nd: usize) -> Vec<Vec<f64>> {
    let p = degree;
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = vec![vec![0.0; p + 1]; nd + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let mut a = [vec![0.0; p + 1], vec![0.0; p + 1]];
    for r in 0..=p {
        let (mut s1, mut s2) = (0, 1);
        a[0][0] = 1.0;
        for k in 1..=nd.min(p) {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p - k;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
            for j in j1..=j2 {
                let c = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][c];
                d += a[s2][j] * ndu[c][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = p as f64;
    for k in 1..=nd.min(p) {
        for v in ders[k].iter_mut() {
            *v *= factor;
        }
        factor *= (p - k) as f64;
    }
    ders
}

/// Interpolating 1D spline operator on n uniform intervals: data values at
/// i/n, i = 0..=n, to per-interval power-basis coefficients in σ ∈ [0,1].
struct Fit1d {
    n: usize,
    degree: usize,
    lu: BandedLu,
    /// Per interval: first nonzero basis index and the table
    /// `h^p / p! · N^{(p)}_{first+j}(x_l)` stored as `[p * (degree+1) + j]`.
    taylor: Vec<(usize, Vec<f64>)>,
}

impl Fit1d {
    fn new(n: usize, degree: usize) -> Self {
        let n_coef = n + 1;
        let h = 1.0 / n as f64;
        let site = |i: usize| i as f64 / n as f64;
        let half = degree.div_ceil(2);
        let mut knots = vec![0.0; degree + 1];
        knots.extend((half..=n - half).filter(|&i| i > 0 && i < n).map(site));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        debug_assert_eq!(knots.len(), n_coef + degree + 1);

        let rows: Vec<(usize, Vec<f64>)> = (0..=n)
            .map(|i| {
                let span = find_span(&knots, n_coef, degree, site(i));
                (span - degree, basis_derivatives(&knots, span, site(i), degree, 0).swap_remove(0))
            })
            .collect();
        let lu = BandedLu::factor(n_coef, degree, |i, j| {
            let (first, ref vals) = rows[i];
            if j >= first && j <= first + degree {
                vals[j - first]
            } else {
                0.0
            }
        });

        let taylor = (0..n)
            .map(|l| {
                let x = site(l);
                let span = find_span(&knots, n_coef, degree, x);
                let ders = basis_derivatives(&knots, span, x, degree, degree);
                let mut table = vec![0.0; (degree + 1) * (degree + 1)];
                let mut scale = 1.0;
                for (p, row) in ders.iter().enumerate() {
                    if p > 0 {
                        scale *= h / p as f64;
                    }
                    for (j, &d) in row.iter().enumerate() {
                        table[p * (degree + 1) + j] = scale * d;
                    }
                }
                (span - degree, table)
            })
            .collect();
        Fit1d { n, degree, lu, taylor }
    }

    /// Writes `n * (degree+1)` coefficients into `out`.
    fn fit(&self, values: &mut [f64], out: &mut [f64]) {
        let k = self.degree + 1;
        self.lu.solve_in_place(values);
        for (l, (first, table)) in self.taylor.iter().enumerate() {
            for p in 0..k {
                out[l * k + p] = (0..k).map(|j| table[p * k + j] * values[first + j]).sum();
            }
        }
    }
}

/// Tensor-product interpolating spline R² ⊃ [0,1]² → R³.
#[derive(Clone, Debug)]
pub struct TensorSpline {
    order: usize,
    nu: usize,
    nv: usize,
    /// Per piece (l1, l2): 3 components × κ × κ coefficients of σ^p ρ^q.
    coeffs: Vec<f64>,
}

/// Power-basis values at a fixed set of local nodes σ_j ∈ [0,1].
#[derive(Clone, Debug)]
pub struct NodeBasis {
    pub order: usize,
    pub nodes: Vec<f64>,
    pow: Vec<f64>,
    dpow: Vec<f64>,
}

impl NodeBasis {
    pub fn new(order: usize, nodes: &[f64]) -> Self {
        let mut pow = Vec::with_capacity(nodes.len() * order);
        let mut dpow = Vec::with_capacity(nodes.len() * order);
        for &s in nodes {
            for p in 0..order {
                pow.push(s.powi(p as i32));
                dpow.push(if p == 0 { 0.0 } else { p as f64 * s.powi(p as i32 - 1) });
            }
        }
        Self {
            order,
            nodes: nodes.to_vec(),
            pow,
            dpow,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Samples of one spline piece at tensor nodes, indexed `j * nv_nodes + k`.
/// Derivatives are with respect to the global parameters (u, v).
#[derive(Clone, Debug, Default)]
pub struct PieceSamples {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub y_u: Vec<f64>,
    pub y_v: Vec<f64>,
    pub z_u: Vec<f64>,
    pub z_v: Vec<f64>,
}

/// Fits the order-κ interpolating spline through a knot grid.
pub fn fit_tensor_spline(grid: &KnotGrid, order: usize) -> Result<TensorSpline> {
    check_order(order)?;
    let needed = order - 1;
    let got = grid.nu.min(grid.nv);
    if got < needed.max(1) {
        return Err(Error::InsufficientData { order, needed: needed.max(1), got });
    }
    if grid.points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite())) {
        return Err(Error::argument("knot grid contains non-finite points"));
    }
    let (nu, nv, k) = (grid.nu, grid.nv, order);
    let degree = order - 1;
    let fit_u = Fit1d::new(nu, degree);
    let fit_v = Fit1d::new(nv, degree);

    // Along u for every (row j, component c): a[(j * 3 + c) * nu * k + l1 * k + p].
    let row_len = nu * k;
    let mut a = vec![0.0; (nv + 1) * 3 * row_len];
    a.par_chunks_mut(row_len).enumerate().for_each(|(jc, out)| {
        let (j, c) = (jc / 3, jc % 3);
        let mut vals: Vec<f64> = (0..=nu).map(|i| grid.point(i, j)[c]).collect();
        fit_u.fit(&mut vals, out);
    });

    // Along v for every (l1, c, p).
    let piece_len = 3 * k * k;
    let mut coeffs = vec![0.0; nu * nv * piece_len];
    coeffs
        .par_chunks_mut(nv * piece_len)
        .enumerate()
        .for_each(|(l1, column)| {
            let mut vals = vec![0.0; nv + 1];
            let mut out = vec![0.0; nv * k];
            for c in 0..3 {
                for p in 0..k {
                    for (j, v) in vals.iter_mut().enumerate() {
                        *v = a[(j * 3 + c) * row_len + l1 * k + p];
                    }
                    fit_v.fit(&mut vals, &mut out);
                    for l2 in 0..nv {
                        for q in 0..k {
                            column[l2 * piece_len + c * k * k + p * k + q] = out[l2 * k + q];
                        }
                    }
                }
            }
        });
    debug_assert_eq!(fit_u.n, nu);
    Ok(TensorSpline { order, nu, nv, coeffs })
}

impl TensorSpline {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of polynomial pieces along u and v.
    pub fn pieces(&self) -> (usize, usize) {
        (self.nu, self.nv)
    }

    #[inline]
    fn piece(&self, l1: usize, l2: usize) -> &[f64] {
        let len = 3 * self.order * self.order;
        let start = (l1 * self.nv + l2) * len;
        &self.coeffs[start..start + len]
    }

    fn locate(n: usize, u: f64) -> (usize, f64) {
        let s = u * n as f64;
        let l = (s.floor().max(0.0) as usize).min(n - 1);
        (l, s - l as f64)
    }

    fn check_domain(u: f64, v: f64) -> Result<(f64, f64)> {
        const SLACK: f64 = 1e-12;
        let range = -SLACK..=1.0 + SLACK;
        if !(range.contains(&u) && range.contains(&v)) {
            return Err(Error::Domain { u, v });
        }
        Ok((u.clamp(0.0, 1.0), v.clamp(0.0, 1.0)))
    }

    /// Value (`deriv = (0, 0)`), ∂u (`(1, 0)`), ∂v (`(0, 1)`) or the mixed
    /// partial (`(1, 1)`) at (u, v).
    pub fn eval(&self, u: f64, v: f64, deriv: (usize, usize)) -> Result<Point> {
        if deriv.0 > 1 || deriv.1 > 1 {
            return Err(Error::argument("only first partials are supported"));
        }
        let (u, v) = Self::check_domain(u, v)?;
        let k = self.order;
        let (l1, s) = Self::locate(self.nu, u);
        let (l2, r) = Self::locate(self.nv, v);
        let basis = |x: f64, d: usize, scale: f64| -> Vec<f64> {
            (0..k)
                .map(|p| match d {
                    0 => x.powi(p as i32),
                    _ if p == 0 => 0.0,
                    _ => scale * p as f64 * x.powi(p as i32 - 1),
                })
                .collect()
        };
        let bu = basis(s, deriv.0, self.nu as f64);
        let bv = basis(r, deriv.1, self.nv as f64);
        let c = self.piece(l1, l2);
        let mut out = Point::zeros();
        for comp in 0..3 {
            let cc = &c[comp * k * k..(comp + 1) * k * k];
            let mut acc = 0.0;
            for p in 0..k {
                let row: f64 = (0..k).map(|q| cc[p * k + q] * bv[q]).sum();
                acc += bu[p] * row;
            }
            out[comp] = acc;
        }
        Ok(out)
    }

    pub fn value(&self, u: f64, v: f64) -> Result<Point> {
        self.eval(u, v, (0, 0))
    }

    /// Signed ∂(y,z)/∂(u,v) = y_u z_v − y_v z_u.
    pub fn jacobian_yz(&self, u: f64, v: f64) -> Result<f64> {
        let du = self.eval(u, v, (1, 0))?;
        let dv = self.eval(u, v, (0, 1))?;
        Ok(du.y * dv.z - dv.y * du.z)
    }

    /// Evaluates piece (l1, l2) at the tensor product of local nodes.
    pub fn eval_piece(&self, l1: usize, l2: usize, bu: &NodeBasis, bv: &NodeBasis, out: &mut PieceSamples) {
        let k = self.order;
        debug_assert!(bu.order == k && bv.order == k);
        let (m, h) = (bu.len(), bv.len());
        let c = self.piece(l1, l2);
        let (su, sv) = (self.nu as f64, self.nv as f64);
        for buf in [
            &mut out.x,
            &mut out.y,
            &mut out.z,
            &mut out.y_u,
            &mut out.y_v,
            &mut out.z_u,
            &mut out.z_v,
        ] {
            buf.clear();
            buf.resize(m * h, 0.0);
        }
        let mut t = vec![0.0; k * h];
        let mut td = vec![0.0; k * h];
        for comp in 0..3 {
            let cc = &c[comp * k * k..(comp + 1) * k * k];
            // t[p][kk] = Σ_q C[p][q] ρ_kk^q, td with the ρ-derivative.
            for p in 0..k {
                for kk in 0..h {
                    let (mut a, mut b) = (0.0, 0.0);
                    for q in 0..k {
                        a += cc[p * k + q] * bv.pow[kk * k + q];
                        b += cc[p * k + q] * bv.dpow[kk * k + q];
                    }
                    t[p * h + kk] = a;
                    td[p * h + kk] = b;
                }
            }
            let (val, d_u, d_v) = match comp {
                0 => (&mut out.x, None, None),
                1 => (&mut out.y, Some(&mut out.y_u), Some(&mut out.y_v)),
                _ => (&mut out.z, Some(&mut out.z_u), Some(&mut out.z_v)),
            };
            for j in 0..m {
                let pu = &bu.pow[j * k..(j + 1) * k];
                for kk in 0..h {
                    val[j * h + kk] = (0..k).map(|p| pu[p] * t[p * h + kk]).sum();
                }
            }
            if let (Some(d_u), Some(d_v)) = (d_u, d_v) {
                for j in 0..m {
                    let pu = &bu.pow[j * k..(j + 1) * k];
                    let dpu = &bu.dpow[j * k..(j + 1) * k];
                    for kk in 0..h {
                        let (mut a, mut b) = (0.0, 0.0);
                        for p in 0..k {
                            a += dpu[p] * t[p * h + kk];
                            b += pu[p] * td[p * h + kk];
                        }
                        d_u[j * h + kk] = su * a;
                        d_v[j * h + kk] = sv * b;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_err(s: &TensorSpline, g: impl Fn(f64, f64) -> Point, samples: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..=samples {
            for b in 0..=samples {
                let (u, v) = (a as f64 / samples as f64, b as f64 / samples as f64);
                worst = worst.max((s.value(u, v).unwrap() - g(u, v)).norm());
            }
        }
        worst
    }

    #[test]
    fn bilinear_reproduces_bilinear() {
        let g = |u: f64, v: f64| Point::new(u, v, u * v);
        let s = fit_tensor_spline(&KnotGrid::sample(4, 4, g), 2).unwrap();
        assert!((s.value(0.3, 0.6).unwrap() - Point::new(0.3, 0.6, 0.18)).norm() < 1e-15);
        assert!((s.eval(0.5, 0.5, (1, 0)).unwrap() - Point::new(1.0, 0.0, 0.5)).norm() < 1e-14);
        assert!((s.eval(0.5, 0.5, (0, 1)).unwrap() - Point::new(0.0, 1.0, 0.5)).norm() < 1e-14);
    }

    #[test]
    fn bicubic_reproduces_cubics() {
        let g = |u: f64, v: f64| Point::new(u.powi(3), v.powi(3), u * v);
        let s = fit_tensor_spline(&KnotGrid::sample(8, 8, g), 4).unwrap();
        assert!((s.value(0.37, 0.81).unwrap() - g(0.37, 0.81)).norm() < 1e-13);
    }

    #[test]
    fn minimal_grids_are_single_polynomials() {
        for order in [2, 4, 6] {
            let d = order as i32 - 1;
            let g = move |u: f64, v: f64| Point::new(u.powi(d) * v, (u - v).powi(d), 1.0 + v.powi(d));
            let grid = KnotGrid::sample(order - 1, order - 1, g);
            let s = fit_tensor_spline(&grid, order).unwrap();
            assert!(max_err(&s, g, 13) < 1e-12, "order {order}");
        }
    }

    #[test]
    fn rectangular_grids_work() {
        let g = |u: f64, v: f64| Point::new(u * u * u, v * v * u, (u + v).powi(2));
        let s = fit_tensor_spline(&KnotGrid::sample(5, 11, g), 4).unwrap();
        assert!(max_err(&s, g, 17) < 1e-12);
    }

    #[test]
    fn insufficient_data_is_rejected() {
        let g = |u: f64, v: f64| Point::new(u, v, 0.0);
        assert!(matches!(
            fit_tensor_spline(&KnotGrid::sample(4, 4, g), 6),
            Err(Error::InsufficientData { .. })
        ));
        assert!(fit_tensor_spline(&KnotGrid::sample(5, 2, g), 4).is_err());
        assert!(fit_tensor_spline(&KnotGrid::sample(5, 5, g), 3).is_err());
    }

    #[test]
    fn out_of_domain_is_rejected() {
        let g = |u: f64, v: f64| Point::new(u, v, 0.0);
        let s = fit_tensor_spline(&KnotGrid::sample(4, 4, g), 2).unwrap();
        assert!(matches!(s.value(1.2, 0.5), Err(Error::Domain { .. })));
        assert!(s.value(-0.01, 0.5).is_err());
        assert!(s.value(1.0, 0.0).is_ok());
    }

    #[test]
    fn jacobian_yz_examples() {
        let cases: [(fn(f64, f64) -> Point, f64); 3] = [
            (|u, v| Point::new(0.7, u, v), 1.0),
            (|u, v| Point::new(u, v, 0.7), 0.0),
            (|u, v| Point::new(u, v * v, v + u), -1.0),
        ];
        for (g, expected) in cases {
            let s = fit_tensor_spline(&KnotGrid::sample(6, 6, g), 4).unwrap();
            assert!((s.jacobian_yz(0.5, 0.5).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn partials_match_finite_differences() {
        let g = |u: f64, v: f64| Point::new((3.0 * u).sin() * v, (u * v).exp(), u.cos() + v * v * v);
        for order in [4, 6] {
            let s = fit_tensor_spline(&KnotGrid::sample(10, 10, g), order).unwrap();
            let (u, v, h) = (0.3, 0.7, 1e-6);
            let fd_u = (s.value(u + h, v).unwrap() - s.value(u - h, v).unwrap()) / (2.0 * h);
            let fd_v = (s.value(u, v + h).unwrap() - s.value(u, v - h).unwrap()) / (2.0 * h);
            assert!((s.eval(u, v, (1, 0)).unwrap() - fd_u).norm() < 1e-8);
            assert!((s.eval(u, v, (0, 1)).unwrap() - fd_v).norm() < 1e-8);
        }
    }

    #[test]
    fn partials_are_continuous_across_knots_for_smooth_orders() {
        let g = |u: f64, v: f64| Point::new((2.0 * u).sin(), (v * u).cos(), u * u * v);
        for order in [4, 6] {
            let s = fit_tensor_spline(&KnotGrid::sample(8, 8, g), order).unwrap();
            let knot = 3.0 / 8.0;
            let left = s.eval(knot - 1e-13, 0.4, (1, 0)).unwrap();
            let right = s.eval(knot + 1e-13, 0.4, (1, 0)).unwrap();
            assert!((left - right).norm() < 1e-9, "order {order}");
        }
    }

    #[test]
    fn piece_batch_evaluation_matches_pointwise() {
        let g = |u: f64, v: f64| Point::new((2.0 * u).sin() + v, (v * u).cos(), u * u * v - v);
        let s = fit_tensor_spline(&KnotGrid::sample(6, 5, g), 6).unwrap();
        let nodes = [0.1, 0.45, 0.9];
        let basis = NodeBasis::new(6, &nodes);
        let mut out = PieceSamples::default();
        s.eval_piece(2, 3, &basis, &basis, &mut out);
        for (j, &a) in nodes.iter().enumerate() {
            for (k, &b) in nodes.iter().enumerate() {
                let (u, v) = ((2.0 + a) / 6.0, (3.0 + b) / 5.0);
                let p = s.value(u, v).unwrap();
                let du = s.eval(u, v, (1, 0)).unwrap();
                let dv = s.eval(u, v, (0, 1)).unwrap();
                let i = j * 3 + k;
                assert!((out.x[i] - p.x).abs() < 1e-13);
                assert!((out.y[i] - p.y).abs() < 1e-13);
                assert!((out.z[i] - p.z).abs() < 1e-13);
                assert!((out.y_u[i] - du.y).abs() < 1e-12);
                assert!((out.z_v[i] - dv.z).abs() < 1e-12);
                assert!((out.y_v[i] - dv.y).abs() < 1e-12);
                assert!((out.z_u[i] - du.z).abs() < 1e-12);
            }
        }
    }

    fn graph_error(n: usize, order: usize) -> f64 {
        use std::f64::consts::PI;
        let g = |u: f64, v: f64| Point::new(u, v, (PI * u).sin() * (PI * v).cos());
        let s = fit_tensor_spline(&KnotGrid::sample(n, n, g), order).unwrap();
        max_err(&s, g, 97)
    }

    #[test]
    fn cubic_error_ratio_under_refinement() {
        let ratio = graph_error(16, 4) / graph_error(32, 4);
        assert!((ratio / 16.0 - 1.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn convergence_rates_match_order() {
        for order in [2, 4, 6] {
            let (e1, e2) = (graph_error(16, order), graph_error(32, order));
            let rate = (e1 / e2).log2();
            assert!(rate >= order as f64 - 0.3, "order {order}: rate {rate}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn reproduces_random_polynomials(
            order_idx in 0usize..3,
            n_extra in 0usize..6,
            coeffs in prop::collection::vec(-2.0f64..2.0, 3 * 36),
        ) {
            let order = [2, 4, 6][order_idx];
            let d = order - 1;
            let n = d.max(1) + n_extra;
            let g = |u: f64, v: f64| {
                let mut out = Point::zeros();
                for c in 0..3 {
                    for p in 0..=d {
                        for q in 0..=d {
                            out[c] += coeffs[c * 36 + p * 6 + q] * u.powi(p as i32) * v.powi(q as i32);
                        }
                    }
                }
                out
            };
            let s = fit_tensor_spline(&KnotGrid::sample(n, n + 1, g), order).unwrap();
            prop_assert!(max_err(&s, g, 11) < 1e-10);
            // Interpolation at every knot.
            for i in 0..=n {
                for j in 0..=n + 1 {
                    let (u, v) = (i as f64 / n as f64, j as f64 / (n + 1) as f64);
                    let p = g(u, v);
                    prop_assert!((s.value(u, v).unwrap() - p).norm() <= 1e-12 * p.norm().max(1.0));
                }
            }
        }
    }
}
