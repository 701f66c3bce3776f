//! Gauss-Legendre rules and the anti-derivative cubature for ∫_S F dy∧dz
//! over spline patches.

use rayon::prelude::*;

use crate::fields::ScalarField;
use crate::spline::{NodeBasis, PieceSamples, TensorSpline};
use crate::{pairwise_sum, Error, Point, Result};

/// p-point Gauss-Legendre rule on [−1, 1], nodes ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Applies the rule to `g` on [a, b].
    pub fn integrate(&self, a: f64, b: f64, g: impl Fn(f64) -> f64) -> f64 {
        let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
        r * self.nodes.iter().zip(&self.weights).map(|(&l, &w)| w * g(c + r * l)).sum::<f64>()
    }
}

/// Legendre P_p and its derivative at x.
fn legendre(p: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=p {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if p == 0 {
        return (1.0, 0.0);
    }
    let dp = p as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Newton iteration on the Legendre roots from Chebyshev-like initial guesses.
pub fn gauss_legendre(p: usize) -> Result<GaussRule> {
    if p == 0 {
        return Err(Error::argument("Gauss-Legendre rule needs at least one node"));
    }
    let mut nodes = vec![0.0; p];
    let mut weights = vec![0.0; p];
    let pf = p as f64;
    for i in 0..p.div_ceil(2) {
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (pf + 0.5)).cos();
        for _ in 0..100 {
            let (val, der) = legendre(p, x);
            let dx = val / der;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, der) = legendre(p, x);
        let w = 2.0 / ((1.0 - x * x) * der * der);
        nodes[i] = x;
        nodes[p - 1 - i] = -x;
        weights[i] = w;
        weights[p - 1 - i] = w;
    }
    if p % 2 == 1 {
        nodes[p / 2] = 0.0;
    }
    Ok(GaussRule { nodes, weights })
}

/// How F(x, y, z) = ∫_ξ^x f ds is obtained at each surface node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InnerRule {
    /// n-point Gauss-Legendre over [ξ, x]; exact for polynomial f.
    #[default]
    Gauss,
    /// `ScalarField::antiderivative_x`: analytic, else adaptive.
    Antiderivative,
}

/// Node counts for the cubature: n for the inner anti-derivative rule,
/// m × h per spline piece.
#[derive(Clone, Debug, PartialEq)]
pub struct FluxCubatureSpec {
    /// Total degree the rule must integrate exactly.
    pub q: usize,
    pub kappa: usize,
    pub n: usize,
    pub m: usize,
    pub h: usize,
    pub xi: f64,
    pub inner: InnerRule,
    /// Reject node counts below the exactness thresholds.
    pub enforce_exactness: bool,
}

impl FluxCubatureSpec {
    /// Smallest counts that are exact for degree-q polynomials on order-κ
    /// patches: n = ⌈(q+1)/2⌉, m = h = ⌈(q+3)(κ−1)/2⌉.
    pub fn minimal(q: usize, kappa: usize) -> Self {
        let (n, mh) = Self::thresholds(q, kappa);
        Self {
            q,
            kappa,
            n,
            m: mh,
            h: mh,
            xi: 0.0,
            inner: InnerRule::Gauss,
            enforce_exactness: true,
        }
    }

    pub fn thresholds(q: usize, kappa: usize) -> (usize, usize) {
        ((q + 2) / 2, ((q + 3) * kappa.saturating_sub(1)).div_ceil(2).max(1))
    }

    pub fn with_xi(mut self, xi: f64) -> Self {
        self.xi = xi;
        self
    }

    pub fn with_inner(mut self, inner: InnerRule) -> Self {
        self.inner = inner;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.h == 0 {
            return Err(Error::Configuration("node counts must be positive".into()));
        }
        if !self.xi.is_finite() {
            return Err(Error::Configuration(format!("reference point xi = {} is not finite", self.xi)));
        }
        if self.enforce_exactness {
            let (n, mh) = Self::thresholds(self.q, self.kappa);
            if self.n < n || self.m < mh || self.h < mh {
                return Err(Error::Configuration(format!(
                    "exactness for q = {} and kappa = {} needs n >= {n} and m, h >= {mh}; got n = {}, m = {}, h = {}",
                    self.q, self.kappa, self.n, self.m, self.h
                )));
            }
        }
        Ok(())
    }
}

/// I_q(S, f) = −Σ ω ω ω (Δu/2)(Δv/2) ((x−ξ)/2) ∂(y,z)/∂(u,v) f(s, y, z, t),
/// summed over the spline pieces; approximates ∫_S F dy∧dz with F the
/// x-anti-derivative of f from ξ.
///
/// The determinant enters signed: the minus sign and the sign of
/// ∂(y,z)/∂(u,v) together give the pullback of dy∧dz under the outward
/// normal −(S_u × S_v). Reversed patches are handled by the caller.
pub fn surface_flux_quadrature(
    spline: &TensorSpline,
    f: &ScalarField,
    t: f64,
    spec: &FluxCubatureSpec,
) -> Result<f64> {
    spec.validate()?;
    if spec.kappa != spline.order() {
        return Err(Error::Configuration(format!(
            "spec is for order {} but the spline has order {}",
            spec.kappa,
            spline.order()
        )));
    }
    let inner = gauss_legendre(spec.n)?;
    let ru = gauss_legendre(spec.m)?;
    let rv = gauss_legendre(spec.h)?;
    let to_unit = |r: &GaussRule| r.nodes.iter().map(|&l| 0.5 * (l + 1.0)).collect::<Vec<_>>();
    let bu = NodeBasis::new(spline.order(), &to_unit(&ru));
    let bv = NodeBasis::new(spline.order(), &to_unit(&rv));
    let (nu, nv) = spline.pieces();
    let scale = 0.25 / (nu as f64 * nv as f64);
    let xi = spec.xi;

    let pieces: Vec<f64> = (0..nu * nv)
        .into_par_iter()
        .map_init(PieceSamples::default, |samples, idx| {
            let (l1, l2) = (idx / nv, idx % nv);
            spline.eval_piece(l1, l2, &bu, &bv, samples);
            let mut acc = 0.0;
            for (j, &wj) in ru.weights.iter().enumerate() {
                let mut row = 0.0;
                for (k, &wk) in rv.weights.iter().enumerate() {
                    let i = j * rv.len() + k;
                    let det = samples.y_u[i] * samples.z_v[i] - samples.y_v[i] * samples.z_u[i];
                    if det == 0.0 {
                        continue;
                    }
                    let (x, y, z) = (samples.x[i], samples.y[i], samples.z[i]);
                    let big_f = match spec.inner {
                        InnerRule::Gauss => {
                            let half = 0.5 * (x - xi);
                            let mid = 0.5 * (x + xi);
                            half * inner
                                .nodes
                                .iter()
                                .zip(&inner.weights)
                                .map(|(&l, &w)| w * f.eval(&Point::new(half * l + mid, y, z), t))
                                .sum::<f64>()
                        }
                        InnerRule::Antiderivative => f.antiderivative_x(&Point::new(x, y, z), t, xi),
                    };
                    row += wk * det * big_f;
                }
                acc += wj * row;
            }
            -scale * acc
        })
        .collect();
    Ok(pairwise_sum(&pieces))
}
