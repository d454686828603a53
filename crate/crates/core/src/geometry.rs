//! Sparsity geometries: norms, distance-generating functions, prox over a
//! norm ball and sparsification.
//!
//! Vanilla and group geometries act on the rows of the parameter (a vanilla
//! parameter is a `d x 1` column, so its rows are single coordinates). The
//! low-rank geometry acts on singular values. Every distance-generating
//! function has the form `C * ||m(phi)||_e^2` where `m` are the row norms or
//! singular values, which lets one code path serve all three.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::Param;

const BISECTION_ITERS: usize = 200;
const BISECTION_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Geometry {
    /// Plain sparsity in `R^d` (l1 norm).
    Vanilla { d: usize },
    /// Row-sparsity of a `rows x cols` parameter (l1 of row l2 norms).
    Group { rows: usize, cols: usize },
    /// Low rank `p x q` matrices with `p >= q` (nuclear norm).
    LowRank { p: usize, q: usize },
}

/// Constants of `omega(phi) = c * ||m(phi)||_exponent^2`, which is 1-strongly
/// convex for the geometry's norm and bounded by `nu * ||phi||^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DgfConstants {
    pub c: f64,
    pub exponent: f64,
    pub nu: f64,
}

/// `{theta : ||theta - center|| <= radius}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BallConstraint {
    pub center: Param,
    pub radius: f64,
}

impl BallConstraint {
    pub fn new(center: Param, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid(format!("ball radius must be positive (got {radius})")));
        }
        Ok(Self { center, radius })
    }
}

impl Geometry {
    pub fn vanilla(d: usize) -> Result<Self> {
        let g = Geometry::Vanilla { d };
        g.validate()?;
        Ok(g)
    }

    pub fn group(rows: usize, cols: usize) -> Result<Self> {
        let g = Geometry::Group { rows, cols };
        g.validate()?;
        Ok(g)
    }

    pub fn low_rank(p: usize, q: usize) -> Result<Self> {
        let g = Geometry::LowRank { p, q };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Geometry::Vanilla { d } if d < 3 => Err(invalid(format!("vanilla geometry needs d >= 3 (got {d})"))),
            Geometry::Group { rows, cols } if rows < 3 || cols < 1 => {
                Err(invalid(format!("group geometry needs at least 3 groups of size >= 1 (got {rows} x {cols})")))
            }
            Geometry::LowRank { p, q } if q < 2 || p < q => {
                Err(invalid(format!("low-rank geometry needs p >= q >= 2 (got {p} x {q})")))
            }
            _ => Ok(()),
        }
    }

    /// Parameter shape `(rows, cols)`.
    pub fn shape(&self) -> (usize, usize) {
        match *self {
            Geometry::Vanilla { d } => (d, 1),
            Geometry::Group { rows, cols } => (rows, cols),
            Geometry::LowRank { p, q } => (p, q),
        }
    }

    /// Largest meaningful sparsity level: coordinates, groups or rank.
    pub fn capacity(&self) -> usize {
        match *self {
            Geometry::Vanilla { d } => d,
            Geometry::Group { rows, .. } => rows,
            Geometry::LowRank { q, .. } => q,
        }
    }

    pub fn constants(&self) -> DgfConstants {
        match *self {
            Geometry::Vanilla { d: rows } | Geometry::Group { rows, .. } => {
                let d = rows as f64;
                let log_d = d.ln();
                let p = 1.0 + 1.0 / log_d;
                let c = 0.5 * std::f64::consts::E * log_d * d.powf((p - 1.0) * (2.0 - p) / p);
                DgfConstants { c, exponent: p, nu: 0.5 * std::f64::consts::E.powi(2) * log_d }
            }
            Geometry::LowRank { q, .. } => {
                let log_2q = (2.0 * q as f64).ln();
                let r = 1.0 / (12.0 * log_2q);
                let c = 2.0 * std::f64::consts::E * log_2q;
                DgfConstants { c, exponent: 1.0 + r, nu: c }
            }
        }
    }

    fn check_shape(&self, theta: &Param) -> Result<()> {
        let (r, c) = self.shape();
        if theta.shape() != (r, c) {
            return Err(Error::DimensionMismatch { expected: r * c, got: theta.len() });
        }
        Ok(())
    }

    /// Checks the shape and finiteness of a parameter.
    pub fn check_param(&self, theta: &Param) -> Result<()> {
        self.check_shape(theta)?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("parameter has non-finite entries".into()));
        }
        Ok(())
    }

    /// Row norms (vanilla, group) or singular values (low rank).
    pub fn magnitudes(&self, theta: &Param) -> Result<Vec<f64>> {
        self.check_shape(theta)?;
        Ok(match self {
            Geometry::Vanilla { .. } | Geometry::Group { .. } => row_norms(theta),
            Geometry::LowRank { .. } => singular_values(theta)?,
        })
    }

    pub fn norm(&self, theta: &Param) -> Result<f64> {
        Ok(self.magnitudes(theta)?.iter().sum())
    }

    pub fn dual_norm(&self, v: &Param) -> Result<f64> {
        Ok(self.magnitudes(v)?.into_iter().fold(0.0, f64::max))
    }

    /// Value and gradient of the distance-generating function.
    pub fn dgf_value_grad(&self, phi: &Param) -> Result<(f64, Param)> {
        self.check_shape(phi)?;
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(invalid("distance-generating function needs a finite argument"));
        }
        let DgfConstants { c, exponent, .. } = self.constants();
        match self {
            Geometry::Vanilla { .. } | Geometry::Group { .. } => {
                let m = row_norms(phi);
                let h = lp_norm(&m, exponent);
                let mut grad = Param::zeros(phi.nrows(), phi.ncols());
                if h > 0.0 {
                    for (i, &mi) in m.iter().enumerate() {
                        if mi > 0.0 {
                            let factor = 2.0 * c * h * (mi / h).powf(exponent - 1.0) / mi;
                            grad.row_mut(i).copy_from(&(phi.row(i) * factor));
                        }
                    }
                }
                Ok((c * h * h, grad))
            }
            Geometry::LowRank { .. } => {
                let mut svd = thin_svd(phi)?;
                // The gradient weight (s / h)^r is far from 0 even at rounding-level
                // singular values, whose singular vectors are arbitrary.
                let top = svd.singular_values.max();
                let cutoff = top * f64::EPSILON * phi.nrows().max(phi.ncols()) as f64;
                svd.singular_values.apply(|s| if *s <= cutoff { *s = 0.0 });
                let h = lp_norm(svd.singular_values.as_slice(), exponent);
                if h == 0.0 {
                    return Ok((0.0, Param::zeros(phi.nrows(), phi.ncols())));
                }
                let scaled = svd.singular_values.map(|s| if s > 0.0 { 2.0 * c * h * (s / h).powf(exponent - 1.0) } else { 0.0 });
                Ok((c * h * h, compose(&svd, &scaled)))
            }
        }
    }

    /// `argmin_{theta in ball} <w, theta> + omega(theta - center)`.
    pub fn prox_ball(&self, w: &Param, ball: &BallConstraint) -> Result<Param> {
        self.check_shape(w)?;
        self.check_shape(&ball.center)?;
        if !(ball.radius > 0.0 && ball.radius.is_finite()) {
            return Err(invalid(format!("ball radius must be positive (got {})", ball.radius)));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("prox input has non-finite entries".into()));
        }
        let phi = self.prox_shifted(w, ball.radius)?;
        let theta = &ball.center + phi;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("prox output has non-finite entries".into()));
        }
        Ok(theta)
    }

    /// Prox around the origin: `argmin_{||phi|| <= radius} <w, phi> + omega(phi)`.
    fn prox_shifted(&self, w: &Param, radius: f64) -> Result<Param> {
        let DgfConstants { c, exponent, .. } = self.constants();
        match self {
            Geometry::Vanilla { .. } | Geometry::Group { .. } => {
                let m = row_norms(w);
                let t = solve_magnitudes(&m, c, exponent, radius)?;
                let mut phi = Param::zeros(w.nrows(), w.ncols());
                for (i, (&ti, &mi)) in t.iter().zip(&m).enumerate() {
                    if ti > 0.0 {
                        phi.row_mut(i).copy_from(&(w.row(i) * (-ti / mi)));
                    }
                }
                Ok(phi)
            }
            Geometry::LowRank { .. } => {
                let svd = thin_svd(w)?;
                let t = solve_magnitudes(svd.singular_values.as_slice(), c, exponent, radius)?;
                Ok(-compose(&svd, &DVector::from_vec(t)))
            }
        }
    }

    /// Keeps the `s_bar` largest rows (or singular values); ties go to the
    /// lowest index.
    pub fn sparsify(&self, theta: &Param, s_bar: usize) -> Result<Param> {
        self.check_shape(theta)?;
        if s_bar < 1 || s_bar > self.capacity() {
            return Err(invalid(format!("sparsity level {s_bar} is not in 1..={}", self.capacity())));
        }
        match self {
            Geometry::Vanilla { .. } | Geometry::Group { .. } => {
                let m = row_norms(theta);
                let mut out = Param::zeros(theta.nrows(), theta.ncols());
                for i in top_indices(&m, s_bar) {
                    out.row_mut(i).copy_from(&theta.row(i));
                }
                Ok(out)
            }
            Geometry::LowRank { .. } => {
                let svd = thin_svd(theta)?;
                let keep = top_indices(svd.singular_values.as_slice(), s_bar);
                let mut kept = DVector::zeros(svd.singular_values.len());
                for i in keep {
                    kept[i] = svd.singular_values[i];
                }
                Ok(compose(&svd, &kept))
            }
        }
    }

    /// Number of nonzero rows, or numerical rank (singular values above
    /// `1e-10` times the largest).
    pub fn sparsity(&self, theta: &Param) -> Result<usize> {
        let m = self.magnitudes(theta)?;
        Ok(match self {
            Geometry::LowRank { .. } => {
                let top = m.iter().cloned().fold(0.0, f64::max);
                m.iter().filter(|&&s| s > 1e-10 * top).count()
            }
            _ => m.iter().filter(|&&s| s > 0.0).count(),
        })
    }

    /// Euclidean projection onto `{||phi|| <= radius}`.
    pub fn project_ball(&self, phi: &Param, radius: f64) -> Result<Param> {
        self.check_shape(phi)?;
        match self {
            Geometry::Vanilla { .. } | Geometry::Group { .. } => {
                let m = row_norms(phi);
                let t = project_simplex_ball(&m, radius);
                let mut out = Param::zeros(phi.nrows(), phi.ncols());
                for (i, (&ti, &mi)) in t.iter().zip(&m).enumerate() {
                    if ti > 0.0 {
                        out.row_mut(i).copy_from(&(phi.row(i) * (ti / mi)));
                    }
                }
                Ok(out)
            }
            Geometry::LowRank { .. } => {
                let svd = thin_svd(phi)?;
                let t = project_simplex_ball(svd.singular_values.as_slice(), radius);
                Ok(compose(&svd, &DVector::from_vec(t)))
            }
        }
    }

    /// Projected-gradient residual `||phi - P(phi - grad)||_F` of the prox
    /// objective at `theta`; zero exactly at the prox solution.
    pub fn prox_kkt_residual(&self, w: &Param, ball: &BallConstraint, theta: &Param) -> Result<f64> {
        let phi = theta - &ball.center;
        let (_, grad) = self.dgf_value_grad(&phi)?;
        let step = &phi - (w + grad);
        Ok((&phi - self.project_ball(&step, ball.radius)?).norm())
    }
}

fn row_norms(theta: &Param) -> Vec<f64> {
    theta
        .row_iter()
        .map(|r| {
            let naive = r.norm();
            if naive.is_finite() {
                return naive;
            }
            // Rescale rows whose squares overflow.
            let top = r.amax();
            if !top.is_finite() || top == 0.0 {
                return naive;
            }
            top * (r / top).norm()
        })
        .collect()
}

/// Thin SVD `U diag(s) V^T` with `U: p x q`, `V^T: q x q`.
pub(crate) struct Svd {
    u: DMatrix<f64>,
    pub(crate) singular_values: DVector<f64>,
    v_t: DMatrix<f64>,
}

pub(crate) fn thin_svd(m: &Param) -> Result<Svd> {
    let (p, q) = m.shape();
    let view = faer::MatRef::from_column_major_slice(m.as_slice(), p, q);
    let svd = view
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("singular value decomposition failed: {e:?}")))?;
    let k = p.min(q);
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    Ok(Svd {
        u: DMatrix::from_fn(p, k, |i, j| u[(i, j)]),
        singular_values: DVector::from_fn(k, |i, _| s[i]),
        v_t: DMatrix::from_fn(k, q, |i, j| v[(j, i)]),
    })
}

fn singular_values(m: &Param) -> Result<Vec<f64>> {
    Ok(thin_svd(m)?.singular_values.as_slice().to_vec())
}

/// `U diag(values) V^T` with the singular vectors of `svd`.
fn compose(svd: &Svd, values: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = svd.u.clone();
    for (mut col, s) in scaled.column_iter_mut().zip(values.iter()) {
        col *= *s;
    }
    scaled * &svd.v_t
}

/// `||m||_e` for nonnegative `m`, normalized by the largest entry.
fn lp_norm(m: &[f64], e: f64) -> f64 {
    let top = m.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0.0;
    }
    top * m.iter().map(|&x| (x / top).powf(e)).sum::<f64>().powf(1.0 / e)
}

/// Magnitudes minimizing `-<a, t> + c ||t||_e^2` over `t >= 0` with
/// `a = (m - lambda)_+`: `t_i = (M / 2c) s_i^(e*-1) ||s||_e*^(2-e*)` where
/// `s = a / M`, `M = max a` and `e*` is the conjugate exponent.
fn magnitudes_at(m: &[f64], lambda: f64, c: f64, e: f64, out: &mut [f64]) -> f64 {
    let conj = e / (e - 1.0);
    let top = m.iter().map(|&x| x - lambda).fold(0.0, f64::max);
    if top <= 0.0 {
        out.fill(0.0);
        return 0.0;
    }
    let mut norm_pow = 0.0;
    for (o, &x) in out.iter_mut().zip(m) {
        let s = (x - lambda).max(0.0) / top;
        *o = s;
        norm_pow += s.powf(conj);
    }
    let scale = top / (2.0 * c) * norm_pow.powf((2.0 - conj) / conj);
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = scale * o.powf(conj - 1.0);
        total += *o;
    }
    total
}

/// Smallest threshold whose magnitudes fit in the radius, by bisection.
fn solve_magnitudes(m: &[f64], c: f64, e: f64, radius: f64) -> Result<Vec<f64>> {
    let mut t = vec![0.0; m.len()];
    if magnitudes_at(m, 0.0, c, e, &mut t) <= radius {
        return Ok(t);
    }
    let top = m.iter().cloned().fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0, top);
    for _ in 0..BISECTION_ITERS {
        if hi - lo <= BISECTION_TOL * top {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if magnitudes_at(m, mid, c, e, &mut t) <= radius {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if hi - lo > BISECTION_TOL * top {
        return Err(Error::Numerical(format!(
            "prox threshold search did not converge: bracket [{lo}, {hi}], largest magnitude {top}, radius {radius}"
        )));
    }
    magnitudes_at(m, hi, c, e, &mut t);
    Ok(t)
}

/// Euclidean projection of a nonnegative vector onto `{t >= 0, sum t <= radius}`.
fn project_simplex_ball(m: &[f64], radius: f64) -> Vec<f64> {
    if m.iter().sum::<f64>() <= radius {
        return m.to_vec();
    }
    let mut sorted = m.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - radius) / (k + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        }
    }
    m.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Indices of the `k` largest values; ties go to the lowest index.
fn top_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}
