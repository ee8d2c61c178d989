//! Canonical hypersurfaces in the model spaces.
//!
//! For each family the hypersurface `S` is the zero set of the last ambient
//! coordinate (intersected with the upper sheet `x_{2n+1} > 0` on anti-de
//! Sitter): the plane `R^2n` in the Heisenberg group, the equatorial sphere
//! `S^2n`, and the hyperboloid sheet. The module provides the characteristic
//! set test, the induced quasi-contact structure `W = D ∩ TS`, sub-Riemannian
//! and `eps`-Riemannian unit normals, deterministic orthonormal frames of `W`
//! (plus locally smooth frames seeded from a base point, for anything that
//! differentiates frame fields), the spherical chart with the induced volume
//! density, and the radial field spanning `ker d zeta | W`.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::calculus::{OneForm, Point, ScalarField, Tangent, VectorField};
use crate::error::{Error, Result};
use crate::linalg;
use crate::models::{factorial, ModelFamily, ModelSpace};

/// Default tolerance on the characteristic witness: a point counts as
/// characteristic when `sum_i (X_i u)^2 <= char_tolerance^2`.
pub const DEFAULT_CHAR_TOLERANCE: f64 = 1e-5;

/// Membership tolerance for "on the hypersurface" checks.
pub const SURFACE_TOL: f64 = 1e-9;

/// A point of the spherical chart `(r, phi_1, ..., phi_{2n-1})` with
/// `phi_1, ..., phi_{2n-2}` polar in `[0, pi]` and the last angle azimuthal
/// in `[0, 2 pi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartPoint {
    pub r: f64,
    pub phi: Vec<f64>,
}

impl ChartPoint {
    pub fn new(r: f64, phi: Vec<f64>) -> Self {
        ChartPoint { r, phi }
    }

    /// View as a flat coordinate vector `(r, phi...)`.
    pub fn as_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(1 + self.phi.len());
        v[0] = self.r;
        for (i, &a) in self.phi.iter().enumerate() {
            v[i + 1] = a;
        }
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        ChartPoint {
            r: v[0],
            phi: v.iter().skip(1).copied().collect(),
        }
    }

    pub fn shifted(&self, coord: usize, t: f64) -> Self {
        let mut out = self.clone();
        if coord == 0 {
            out.r += t;
        } else {
            out.phi[coord - 1] += t;
        }
        out
    }
}

/// Result of the characteristic-point test: the flag together with the
/// witness value `sum_i (X_i u)^2`.
#[derive(Clone, Copy, Debug)]
pub struct CharacteristicWitness {
    pub characteristic: bool,
    pub witness: f64,
}

/// Outcome of the quasi-contact rank check of `d zeta` restricted to `W`.
#[derive(Clone, Debug)]
pub struct QuasiContactReport {
    /// Numerical rank of the pairing matrix `d zeta(Y_i, Y_j)`.
    pub rank: usize,
    /// Unit vector spanning the kernel line of `d zeta | W`.
    pub kernel: Tangent,
    /// Singular values of the pairing matrix, descending.
    pub singular_values: Vec<f64>,
}

/// The spherical chart on `S` minus its characteristic set.
#[derive(Clone)]
pub struct SphericalChart {
    space: ModelSpace,
}

impl SphericalChart {
    fn new(space: ModelSpace) -> Self {
        SphericalChart { space }
    }

    pub fn space(&self) -> &ModelSpace {
        &self.space
    }

    /// Number of angular coordinates, `2n - 1`.
    pub fn angle_count(&self) -> usize {
        2 * self.space.n() - 1
    }

    /// Total chart dimension, `2n`.
    pub fn dim(&self) -> usize {
        2 * self.space.n()
    }

    /// The radial interval `I`.
    pub fn interval(&self) -> (f64, f64) {
        self.space.radial_interval()
    }

    /// True when the chart point sits inside the domain with the given margin
    /// from the radial endpoints and from the polar-angle singularities.
    pub fn in_domain(&self, c: &ChartPoint, margin: f64) -> bool {
        let (lo, hi) = self.interval();
        if !(c.r > lo + margin) || !(c.r < hi - margin) {
            return false;
        }
        let n = self.space.n();
        c.phi.len() == 2 * n - 1
            && c.phi[..2 * n - 2]
                .iter()
                .all(|&a| a > margin && a < std::f64::consts::PI - margin)
    }

    /// Radial scale of the angular embedding and its derivative:
    /// `(r, 1)`, `(sin kr, k cos kr)` or `(sinh kr, k cosh kr)`.
    fn radial_scale(&self, r: f64) -> (f64, f64) {
        match self.space.family() {
            ModelFamily::Heisenberg => (r, 1.0),
            ModelFamily::Sphere => {
                let k = self.space.k_value();
                ((k * r).sin(), k * (k * r).cos())
            }
            ModelFamily::AntiDeSitter => {
                let k = self.space.k_value();
                ((k * r).sinh(), k * (k * r).cosh())
            }
        }
    }

    /// Height coordinate and derivative for the quadric families:
    /// `(cos kr, -k sin kr)` or `(cosh kr, k sinh kr)`.
    fn height(&self, r: f64) -> (f64, f64) {
        match self.space.family() {
            ModelFamily::Heisenberg => (0.0, 0.0),
            ModelFamily::Sphere => {
                let k = self.space.k_value();
                ((k * r).cos(), -k * (k * r).sin())
            }
            ModelFamily::AntiDeSitter => {
                let k = self.space.k_value();
                ((k * r).cosh(), k * (k * r).sinh())
            }
        }
    }

    /// Unit direction on `S^{2n-1}` parametrized by the angles.
    fn unit_direction(&self, phi: &[f64]) -> DVector<f64> {
        let m = phi.len() + 1; // 2n
        let mut s = DVector::zeros(m);
        let mut prefix = 1.0;
        for i in 0..m - 1 {
            s[i] = phi[i].cos() * prefix;
            prefix *= phi[i].sin();
        }
        s[m - 1] = prefix;
        s
    }

    /// Partials of the unit direction with respect to the angles, as a
    /// `2n x (2n-1)` matrix.
    fn unit_direction_jacobian(&self, phi: &[f64]) -> DMatrix<f64> {
        let m = phi.len() + 1;
        let mut jac = DMatrix::zeros(m, m - 1);
        for i in 0..m {
            // s_i = c_i * prod_{l < m_i} sin(phi_l), c_i = cos(phi_i) or 1 on the last row
            let (m_i, has_cos) = if i < m - 1 { (i, true) } else { (m - 1, false) };
            for j in 0..m - 1 {
                if j > m_i || (j == m_i && !has_cos) {
                    continue;
                }
                let mut v = if has_cos {
                    if j == i {
                        -phi[i].sin()
                    } else {
                        phi[i].cos()
                    }
                } else {
                    1.0
                };
                for l in 0..m_i {
                    v *= if l == j { phi[l].cos() } else { phi[l].sin() };
                }
                jac[(i, j)] = v;
            }
        }
        jac
    }

    /// Chart-to-ambient map.
    pub fn to_ambient(&self, c: &ChartPoint) -> Point {
        let d = self.space.ambient_dim();
        let n = self.space.n();
        assert_eq!(c.phi.len(), 2 * n - 1, "chart point has wrong angle count");
        let (a, _) = self.radial_scale(c.r);
        let s = self.unit_direction(&c.phi);
        let mut coords = DVector::zeros(d);
        for i in 0..2 * n {
            coords[i] = a * s[i];
        }
        if self.space.family() != ModelFamily::Heisenberg {
            coords[2 * n] = self.height(c.r).0;
        }
        Point::from_vector(coords)
    }

    /// Ambient-to-chart map; fails near the characteristic set.
    pub fn from_ambient(&self, p: &Point) -> Result<ChartPoint> {
        let n = self.space.n();
        let planar = DVector::from_fn(2 * n, |i, _| p.coord(i));
        let planar_norm = planar.norm();
        if planar_norm < 1e-13 {
            return Err(Error::domain(
                "ambient point is at (or numerically at) the characteristic set",
            ));
        }
        let r = match self.space.family() {
            ModelFamily::Heisenberg => planar_norm,
            ModelFamily::Sphere => {
                let c = p.coord(2 * n).clamp(-1.0, 1.0);
                c.acos() / self.space.k_value()
            }
            ModelFamily::AntiDeSitter => {
                let c = p.coord(2 * n).max(1.0);
                c.acosh() / self.space.k_value()
            }
        };
        let unit = planar / planar_norm;
        let mut phi = vec![0.0; 2 * n - 1];
        for (j, slot) in phi.iter_mut().enumerate().take(2 * n - 2) {
            let tail: f64 = unit.iter().skip(j + 1).map(|x| x * x).sum::<f64>().sqrt();
            *slot = tail.atan2(unit[j]);
        }
        let mut az = unit[2 * n - 1].atan2(unit[2 * n - 2]);
        if az < 0.0 {
            az += std::f64::consts::TAU;
        }
        phi[2 * n - 2] = az;
        Ok(ChartPoint::new(r, phi))
    }

    /// Jacobian of the chart map as a `d x 2n` matrix of ambient partials
    /// (the trailing defining-coordinate row is identically zero).
    pub fn jacobian(&self, c: &ChartPoint) -> DMatrix<f64> {
        let d = self.space.ambient_dim();
        let n = self.space.n();
        let (a, da) = self.radial_scale(c.r);
        let s = self.unit_direction(&c.phi);
        let ds = self.unit_direction_jacobian(&c.phi);
        let mut jac = DMatrix::zeros(d, 2 * n);
        for i in 0..2 * n {
            jac[(i, 0)] = da * s[i];
            for j in 0..2 * n - 1 {
                jac[(i, j + 1)] = a * ds[(i, j)];
            }
        }
        if self.space.family() != ModelFamily::Heisenberg {
            jac[(2 * n, 0)] = self.height(c.r).1;
        }
        jac
    }

    /// Volume scale of the chart: `det J_2n` on Heisenberg, and the
    /// Euler-contracted quadric analogue `k a(r)^{2n-1} * (angular product)`
    /// on the sphere and anti-de Sitter space.
    pub fn jac_det(&self, c: &ChartPoint) -> f64 {
        let n = self.space.n();
        let (a, _) = self.radial_scale(c.r);
        let radial = match self.space.family() {
            ModelFamily::Heisenberg => a.powi(2 * n as i32 - 1),
            _ => self.space.k_value() * a.powi(2 * n as i32 - 1),
        };
        radial * self.angular_product(&c.phi)
    }

    fn angular_product(&self, phi: &[f64]) -> f64 {
        let n = self.space.n();
        let mut prod = 1.0;
        for (j, a) in phi.iter().enumerate().take(2 * n - 2) {
            prod *= a.sin().powi(2 * n as i32 - j as i32 - 2);
        }
        prod
    }

    /// Density of the induced volume `mu` in the chart,
    /// `rho = (n!/2) h_k(r)^{2n} prod_i sin(phi_i)^{2n-i-1}`.
    pub fn mu_density(&self, c: &ChartPoint) -> Result<f64> {
        let (lo, hi) = self.interval();
        if !(c.r > lo && c.r < hi) {
            return Err(Error::domain(format!(
                "chart radius {} outside the interval ({lo}, {hi})",
                c.r
            )));
        }
        let n = self.space.n();
        if c.phi[..2 * n - 2].iter().any(|&a| a.sin() <= 0.0) {
            return Err(Error::domain("chart point on a polar-angle singularity"));
        }
        let h = self.space.h_k(c.r)?;
        Ok(factorial(n) / 2.0 * h.powi(2 * n as i32) * self.angular_product(&c.phi))
    }

    /// The coordinate frame `(∂_r, ∂_phi_1, ...)` as ambient tangents.
    pub fn frame(&self, c: &ChartPoint) -> Vec<Tangent> {
        let p = self.to_ambient(c);
        let jac = self.jacobian(c);
        (0..self.dim())
            .map(|j| Tangent::new(p.clone(), jac.column(j).into_owned()))
            .collect()
    }

    /// Chart components of an ambient tangent vector at the chart point:
    /// the (least-squares) solution of `J c = v`.
    pub fn pullback(&self, c: &ChartPoint, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.pullback_with_jacobian(&self.jacobian(c), v)
    }

    pub fn pullback_with_jacobian(
        &self,
        jac: &DMatrix<f64>,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let dim = self.dim();
        let rows = jac.nrows();
        let top = jac.rows(0, rows - 1); // trailing defining-coordinate row is zero
        let rhs = v.rows(0, rows - 1).into_owned();
        let normal = top.transpose() * top;
        let proj = top.transpose() * rhs;
        let chol = Cholesky::new(normal)
            .ok_or_else(|| Error::numerical("chart Jacobian is singular at the requested point"))?;
        let sol = chol.solve(&proj);
        debug_assert_eq!(sol.len(), dim);
        Ok(sol)
    }
}

type FramePieces = Vec<DVector<f64>>;

struct SeededFrameInner {
    surface: ModelHypersurface,
    base_frame: FramePieces,
}

/// A locally smooth orthonormal frame of `W`, seeded from the deterministic
/// frame at a base point: at nearby points the base vectors are projected
/// onto `W` and re-orthonormalized in fixed order, which varies smoothly and
/// reproduces the base frame exactly at the base point.
#[derive(Clone)]
pub struct SeededFrame {
    inner: Arc<SeededFrameInner>,
}

impl SeededFrame {
    pub fn rank(&self) -> usize {
        self.inner.base_frame.len()
    }

    /// Frame vectors at `x` (ambient components).
    pub fn eval(&self, x: &Point) -> Result<FramePieces> {
        let hs = &self.inner.surface;
        let rows = linalg::orthonormal_rows(&hs.w_constraints(x));
        let projected: FramePieces = self
            .inner
            .base_frame
            .iter()
            .map(|v| linalg::project_to_kernel(v, &rows))
            .collect();
        let metric = |a: &DVector<f64>, b: &DVector<f64>| hs.space.fibre_metric(x, a, b);
        linalg::gram_schmidt_fixed_order(&projected, &metric)
    }

    /// The `i`-th frame vector as a vector field (FD Jacobians).
    pub fn field(&self, i: usize) -> VectorField {
        let this = self.clone();
        VectorField::new(move |x: &Point| {
            this.eval(x).expect("seeded frame evaluation")[i].clone()
        })
    }
}

/// A canonical model hypersurface `S = {u = 0}` in a model space.
#[derive(Clone)]
pub struct ModelHypersurface {
    space: ModelSpace,
    char_tolerance: f64,
    /// Orientation sign of the generic normal formula, resolved once at
    /// construction by requiring `i_N Omega > 0` on the chart frame.
    flip_normal: bool,
}

impl ModelHypersurface {
    pub fn new(space: ModelSpace) -> Result<Self> {
        Self::with_char_tolerance(space, DEFAULT_CHAR_TOLERANCE)
    }

    pub fn with_char_tolerance(space: ModelSpace, char_tolerance: f64) -> Result<Self> {
        if !(char_tolerance > 0.0) {
            return Err(Error::argument("characteristic tolerance must be positive"));
        }
        let mut hs = ModelHypersurface {
            space,
            char_tolerance,
            flip_normal: false,
        };
        hs.flip_normal = hs.resolve_orientation()?;
        Ok(hs)
    }

    /// Orientation of the generic normal: evaluate `Omega(N0, chart frame)`
    /// at a reference chart point and flip when negative.
    fn resolve_orientation(&self) -> Result<bool> {
        let chart = self.chart();
        let (lo, hi) = chart.interval();
        let r_ref = if hi.is_finite() { 0.5 * (lo + hi) } else { 1.0 };
        let n = self.space.n();
        let mut phi = vec![std::f64::consts::FRAC_PI_2; 2 * n - 1];
        phi[2 * n - 2] = std::f64::consts::FRAC_PI_4;
        let c = ChartPoint::new(r_ref, phi);
        let p = chart.to_ambient(&c);
        let unsigned = self.unsigned_normal(&p)?;
        let volume = self.space.ambient_volume();
        let jac = chart.jacobian(&c);
        let mut comps: Vec<DVector<f64>> = vec![unsigned];
        for j in 0..chart.dim() {
            comps.push(jac.column(j).into_owned());
        }
        let refs: Vec<&DVector<f64>> = comps.iter().collect();
        let value = volume.eval_raw(&p, &refs);
        if value == 0.0 {
            return Err(Error::numerical(
                "could not resolve the normal orientation at the reference point",
            ));
        }
        Ok(value < 0.0)
    }

    pub fn space(&self) -> &ModelSpace {
        &self.space
    }

    pub fn char_tolerance(&self) -> f64 {
        self.char_tolerance
    }

    /// Index of the defining coordinate (the last ambient coordinate).
    pub fn u_index(&self) -> usize {
        self.space.ambient_dim() - 1
    }

    /// The defining function `u` with its constant analytic gradient.
    pub fn defining_function(&self) -> ScalarField {
        let d = self.space.ambient_dim();
        ScalarField::coordinate(d, d - 1)
    }

    /// The quasi-contact form `zeta` on `S` is the restriction of the contact
    /// form; on tangent vectors of `S` the ambient coefficient formula already
    /// is that restriction.
    pub fn quasi_contact_form(&self) -> OneForm {
        self.space.contact_form()
    }

    /// Residual of hypersurface membership: `|u|`, the quadric residual, and
    /// the sheet constraint for anti-de Sitter.
    pub fn surface_residual(&self, p: &Point) -> f64 {
        let mut res = p.coord(self.u_index()).abs();
        res = res.max(self.space.manifold_residual(p).abs());
        if self.space.family() == ModelFamily::AntiDeSitter
            && p.coord(self.space.ambient_dim() - 2) <= 0.0
        {
            res = f64::INFINITY; // wrong sheet
        }
        res
    }

    pub fn on_surface(&self, p: &Point) -> bool {
        p.dim() == self.space.ambient_dim() && self.surface_residual(p) <= SURFACE_TOL
    }

    fn require_on_surface(&self, p: &Point) -> Result<()> {
        if !self.on_surface(p) {
            return Err(Error::domain(format!(
                "point is not on the hypersurface (residual {:e})",
                self.surface_residual(p)
            )));
        }
        Ok(())
    }

    /// Characteristic witness `sum_i (X_i u)^2` over an orthonormal
    /// distribution frame. On Heisenberg the closed frame makes this exactly
    /// `(1/4) sum_i x_i^2`.
    pub fn characteristic_witness(&self, p: &Point) -> Result<f64> {
        self.require_on_surface(p)?;
        let u_idx = self.u_index();
        match self.space.family() {
            ModelFamily::Heisenberg => {
                let fields = self.space.heisenberg_frame()?;
                Ok(fields
                    .iter()
                    .map(|x| {
                        let v = x.components(p)[u_idx];
                        v * v
                    })
                    .sum())
            }
            _ => {
                let frame = self.space.distribution_frame(p)?;
                Ok(frame
                    .iter()
                    .map(|x| {
                        let v = x.components()[u_idx];
                        v * v
                    })
                    .sum())
            }
        }
    }

    /// Characteristic-point test with witness.
    pub fn is_characteristic(&self, p: &Point) -> Result<CharacteristicWitness> {
        let witness = self.characteristic_witness(p)?;
        Ok(CharacteristicWitness {
            characteristic: witness <= self.char_tolerance * self.char_tolerance,
            witness,
        })
    }

    fn require_non_characteristic(&self, p: &Point) -> Result<f64> {
        let w = self.is_characteristic(p)?;
        if w.characteristic {
            return Err(Error::characteristic(format!(
                "construction is singular at characteristic points (witness {:e})",
                w.witness
            )));
        }
        Ok(w.witness)
    }

    /// Constraint rows cutting out `W(p) = D(p) ∩ T_p S`.
    pub(crate) fn w_constraints(&self, p: &Point) -> Vec<DVector<f64>> {
        let d = self.space.ambient_dim();
        let mut rows = self.space.distribution_constraints(p);
        let mut du = DVector::zeros(d);
        du[d - 1] = 1.0;
        rows.push(du);
        rows
    }

    /// The `g`-dual of `du` restricted to the distribution,
    /// `sum_i (X_i u) X_i`, normalized; sign not yet resolved.
    fn unsigned_normal(&self, p: &Point) -> Result<DVector<f64>> {
        let witness = self.require_non_characteristic(p)?;
        let u_idx = self.u_index();
        let frame = self.space.distribution_frame(p)?;
        let d = self.space.ambient_dim();
        let mut v = DVector::zeros(d);
        for x in &frame {
            let coeff = x.components()[u_idx];
            v += x.components() * coeff;
        }
        Ok(v / witness.sqrt())
    }

    /// The sub-Riemannian unit normal via the generic frame formula
    /// `N = ± sum_i (X_i u) X_i / sqrt(sum_i (X_i u)^2)`, oriented so that
    /// `i_N Omega` is positive on the chart frame.
    pub fn sub_riemannian_normal(&self, p: &Point) -> Result<Tangent> {
        let mut v = self.unsigned_normal(p)?;
        if self.flip_normal {
            v = -v;
        }
        Ok(Tangent::new(p.clone(), v))
    }

    /// The closed-form sub-Riemannian normal of the model families.
    pub fn sub_riemannian_normal_closed(&self, p: &Point) -> Result<Tangent> {
        self.require_non_characteristic(p)?;
        let d = self.space.ambient_dim();
        let n = self.space.n();
        let planar_norm_sq: f64 = (0..2 * n).map(|i| p.coord(i) * p.coord(i)).sum();
        let planar_norm = planar_norm_sq.sqrt();
        let mut v = DVector::zeros(d);
        match self.space.family() {
            ModelFamily::Heisenberg => {
                for b in 0..n {
                    v[2 * b] = p.coord(2 * b + 1) / planar_norm;
                    v[2 * b + 1] = -p.coord(2 * b) / planar_norm;
                }
                v[2 * n] = -planar_norm / 2.0;
            }
            _ => {
                let k = self.space.k_value();
                let height = p.coord(2 * n);
                for b in 0..n {
                    v[2 * b] = k / planar_norm * p.coord(2 * b + 1) * height;
                    v[2 * b + 1] = -k / planar_norm * p.coord(2 * b) * height;
                }
                v[2 * n + 1] = k * planar_norm;
            }
        }
        Ok(Tangent::new(p.clone(), v))
    }

    /// The unit normal of the Riemannian approximation,
    /// `N_eps = ± (sum_i (X_i u) X_i + eps^2 (X0 u) X0) / sqrt(sum (X_i u)^2 + eps^2 (X0 u)^2)`.
    /// Well-defined on all of `S`, characteristic points included.
    pub fn riemannian_normal(&self, p: &Point, eps: f64) -> Result<Tangent> {
        self.require_on_surface(p)?;
        if !(eps > 0.0) {
            return Err(Error::argument("eps must be positive"));
        }
        let u_idx = self.u_index();
        let frame = self.space.distribution_frame(p)?;
        let d = self.space.ambient_dim();
        let mut v = DVector::zeros(d);
        let mut witness = 0.0;
        for x in &frame {
            let coeff = x.components()[u_idx];
            witness += coeff * coeff;
            v += x.components() * coeff;
        }
        let reeb = self.space.reeb_field().components(p);
        let reeb_u = reeb[u_idx];
        v += reeb * (eps * eps * reeb_u);
        let norm = (witness + eps * eps * reeb_u * reeb_u).sqrt();
        if !(norm > 0.0) {
            return Err(Error::numerical("degenerate eps-normal"));
        }
        let mut v = v / norm;
        if self.flip_normal {
            v = -v;
        }
        Ok(Tangent::new(p.clone(), v))
    }

    /// Deterministic `g`-orthonormal frame of `W(p)` by pivoted Gram-Schmidt
    /// from the projected ambient basis. Repeated calls agree bitwise.
    pub fn horizontal_frame(&self, p: &Point) -> Result<Vec<Tangent>> {
        self.require_non_characteristic(p)?;
        self.horizontal_frame_unchecked(p)
    }

    pub(crate) fn horizontal_frame_unchecked(&self, p: &Point) -> Result<Vec<Tangent>> {
        let d = self.space.ambient_dim();
        let rows = linalg::orthonormal_rows(&self.w_constraints(p));
        let mut candidates = Vec::with_capacity(d);
        for j in 0..d {
            let mut e = DVector::zeros(d);
            e[j] = 1.0;
            candidates.push(linalg::project_to_kernel(&e, &rows));
        }
        let metric = |v: &DVector<f64>, w: &DVector<f64>| self.space.fibre_metric(p, v, w);
        let frame = linalg::gram_schmidt_pivoted(&candidates, &metric, 2 * self.space.n() - 1)?;
        Ok(frame
            .into_iter()
            .map(|v| Tangent::new(p.clone(), v))
            .collect())
    }

    /// A locally smooth frame of `W` seeded from the deterministic frame at `p`.
    pub fn seeded_frame(&self, p: &Point) -> Result<SeededFrame> {
        let base = self.horizontal_frame(p)?;
        Ok(SeededFrame {
            inner: Arc::new(SeededFrameInner {
                surface: self.clone(),
                base_frame: base.into_iter().map(Tangent::into_components).collect(),
            }),
        })
    }

    /// Rank and kernel line of `d zeta` restricted to `W` at `p`. Needs
    /// `n >= 2`; for `n = 1` the restricted form vanishes identically on the
    /// line field `W` and the check is meaningless.
    pub fn quasi_contact_check(&self, p: &Point) -> Result<QuasiContactReport> {
        if self.space.n() < 2 {
            return Err(Error::unsupported(
                "the quasi-contact rank check needs n >= 2 (W is a line field for n = 1)",
            ));
        }
        let frame = self.horizontal_frame(p)?;
        let m = frame.len();
        let pairing = DMatrix::from_fn(m, m, |i, j| {
            self.space
                .d_omega_eval(frame[i].components(), frame[j].components())
        });
        let svd = pairing.clone().svd(true, true);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .unwrap()
        });
        let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
        let rank = singular_values.iter().filter(|&&s| s > 1e-8).count();
        let v_t = svd
            .v_t
            .as_ref()
            .ok_or_else(|| Error::numerical("SVD failed"))?;
        let min_idx = *order.last().expect("nonempty frame");
        let coeffs = v_t.row(min_idx);
        let d = self.space.ambient_dim();
        let mut kernel = DVector::zeros(d);
        for (i, y) in frame.iter().enumerate() {
            kernel += y.components() * coeffs[i];
        }
        let norm = kernel.norm();
        if norm < 1e-13 {
            return Err(Error::numerical("degenerate kernel vector"));
        }
        Ok(QuasiContactReport {
            rank,
            kernel: Tangent::new(p.clone(), kernel / norm),
            singular_values,
        })
    }

    /// The unit radial field `R` spanning the characteristic foliation
    /// `ker d zeta | W`.
    pub fn radial_field(&self) -> VectorField {
        let d = self.space.ambient_dim();
        let n = self.space.n();
        match self.space.family() {
            ModelFamily::Heisenberg => VectorField::with_jacobian(
                move |p: &Point| {
                    let r = planar_norm(p, 2 * n);
                    let mut v = DVector::zeros(d);
                    for i in 0..2 * n {
                        v[i] = p.coord(i) / r;
                    }
                    v
                },
                move |p: &Point| {
                    let r = planar_norm(p, 2 * n);
                    let mut jac = DMatrix::zeros(d, d);
                    for i in 0..2 * n {
                        for j in 0..2 * n {
                            let delta = if i == j { 1.0 } else { 0.0 };
                            jac[(i, j)] = delta / r - p.coord(i) * p.coord(j) / (r * r * r);
                        }
                    }
                    jac
                },
            ),
            family => {
                let k = self.space.k_value();
                let sign = if family == ModelFamily::Sphere { -1.0 } else { 1.0 };
                VectorField::new(move |p: &Point| {
                    let s = planar_norm(p, 2 * n);
                    let height = p.coord(2 * n);
                    let mut v = DVector::zeros(d);
                    for i in 0..2 * n {
                        v[i] = k * p.coord(i) * height / s;
                    }
                    v[2 * n] = sign * k * s;
                    v
                })
            }
        }
    }

    /// Radial coordinate of an on-surface point.
    pub fn radius(&self, p: &Point) -> f64 {
        let n = self.space.n();
        match self.space.family() {
            ModelFamily::Heisenberg => planar_norm(p, 2 * n),
            ModelFamily::Sphere => p.coord(2 * n).clamp(-1.0, 1.0).acos() / self.space.k_value(),
            ModelFamily::AntiDeSitter => p.coord(2 * n).max(1.0).acosh() / self.space.k_value(),
        }
    }

    /// The spherical chart of `S` minus the characteristic set.
    pub fn chart(&self) -> SphericalChart {
        SphericalChart::new(self.space.clone())
    }

    /// Induced volume density in the chart, from the closed-form warping
    /// expression.
    pub fn volume_density(&self, c: &ChartPoint) -> Result<f64> {
        self.chart().mu_density(c)
    }

    /// Induced volume density by direct contraction, `Omega(N, ∂_r, ∂_phi...)`.
    pub fn volume_density_contraction(&self, c: &ChartPoint) -> Result<f64> {
        let chart = self.chart();
        let p = chart.to_ambient(c);
        let normal = self.sub_riemannian_normal(&p)?;
        let jac = chart.jacobian(c);
        let volume = self.space.ambient_volume();
        let mut comps: Vec<DVector<f64>> = vec![normal.into_components()];
        for j in 0..chart.dim() {
            comps.push(jac.column(j).into_owned());
        }
        let refs: Vec<&DVector<f64>> = comps.iter().collect();
        Ok(volume.eval_raw(&p, &refs))
    }

    /// Density of the approximating volume `mu_eps = i_{N_eps} Omega_eps` in
    /// the chart.
    pub fn volume_density_eps(&self, c: &ChartPoint, eps: f64) -> Result<f64> {
        let chart = self.chart();
        let p = chart.to_ambient(c);
        let normal = self.riemannian_normal(&p, eps)?;
        let jac = chart.jacobian(c);
        let volume = self.space.ambient_volume_eps(eps);
        let mut comps: Vec<DVector<f64>> = vec![normal.into_components()];
        for j in 0..chart.dim() {
            comps.push(jac.column(j).into_owned());
        }
        let refs: Vec<&DVector<f64>> = comps.iter().collect();
        Ok(volume.eval_raw(&p, &refs))
    }

    /// Cartesian density of `mu` on the Heisenberg hypersurface,
    /// `(n!/2) sqrt(sum x_i^2)` against the coordinate volume of `R^2n`.
    pub fn cartesian_volume_density(&self, p: &Point) -> Result<f64> {
        if self.space.family() != ModelFamily::Heisenberg {
            return Err(Error::unsupported(
                "the Cartesian density form is specific to the Heisenberg hypersurface",
            ));
        }
        self.require_on_surface(p)?;
        Ok(factorial(self.space.n()) / 2.0 * planar_norm(p, 2 * self.space.n()))
    }

    /// The tangential projection `Z = X0 - (X0 u / N u) N` of the Reeb field.
    pub fn reeb_projection(&self) -> VectorField {
        let hs = self.clone();
        let reeb = self.space.reeb_field();
        let u_idx = self.u_index();
        VectorField::new(move |p: &Point| {
            let x0 = reeb.components(p);
            let normal = hs
                .sub_riemannian_normal_closed(p)
                .expect("Z is defined away from characteristic points")
                .into_components();
            let ratio = x0[u_idx] / normal[u_idx];
            x0 - normal * ratio
        })
    }

    /// `g_eps(Z, Z) = 1/eps^2 + (X0 u)^2 / (N u)^2`.
    pub fn z_gram_eps(&self, p: &Point, eps: f64) -> Result<f64> {
        let u_idx = self.u_index();
        let x0u = self.space.reeb_field().components(p)[u_idx];
        let nu = self.sub_riemannian_normal_closed(p)?.components()[u_idx];
        Ok(1.0 / (eps * eps) + (x0u / nu) * (x0u / nu))
    }

    /// The explicit orthonormal frame `U_1, U_2, U_3` of `W` plus the
    /// transverse field `U_4` on the Heisenberg `n = 2` hypersurface.
    pub fn h2_frame(&self) -> Result<[VectorField; 4]> {
        if self.space.family() != ModelFamily::Heisenberg || self.space.n() != 2 {
            return Err(Error::unsupported(
                "the explicit U-frame lives on the Heisenberg n = 2 hypersurface",
            ));
        }
        // Row-major 4x4 blocks acting on (x1, y1, x2, y2); ambient dim is 5.
        let mats = [
            [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ],
            [
                [0.0, 0.0, 0.0, 1.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, -1.0, 0.0, 0.0],
                [-1.0, 0.0, 0.0, 0.0],
            ],
            [
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, -1.0],
                [-1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
            ],
            [
                [0.0, 1.0, 0.0, 0.0],
                [-1.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
                [0.0, 0.0, -1.0, 0.0],
            ],
        ];
        Ok(mats.map(|rows| {
            let a = DMatrix::from_fn(5, 5, |i, j| if i < 4 && j < 4 { rows[i][j] } else { 0.0 });
            let a_jac = a.clone();
            VectorField::with_jacobian(
                move |p: &Point| {
                    let r = planar_norm(p, 4);
                    (&a * p.coords()) / r
                },
                move |p: &Point| {
                    let r = planar_norm(p, 4);
                    let ax = &a_jac * p.coords();
                    let mut jac = &a_jac / r;
                    for i in 0..5 {
                        for j in 0..4 {
                            jac[(i, j)] -= ax[i] * p.coord(j) / (r * r * r);
                        }
                    }
                    jac
                },
            )
        }))
    }

    /// Rank of `span{Y_i} ∪ span{[Y_i, Y_j]}` at `p` over the seeded frame;
    /// bracket generation means full tangent rank `2n`.
    pub fn bracket_generation_rank(&self, p: &Point) -> Result<usize> {
        let seeded = self.seeded_frame(p)?;
        let m = seeded.rank();
        let fields: Vec<VectorField> = (0..m).map(|i| seeded.field(i)).collect();
        let d = self.space.ambient_dim();
        let mut columns: Vec<DVector<f64>> = seeded.eval(p)?;
        for i in 0..m {
            for j in i + 1..m {
                let bracket = crate::calculus::lie_bracket(&fields[i], &fields[j], p)?;
                columns.push(bracket.into_components());
            }
        }
        let mat = DMatrix::from_fn(d, columns.len(), |i, j| columns[j][i]);
        Ok(linalg::rank_with_threshold(&mat, 1e-8))
    }
}

fn planar_norm(p: &Point, count: usize) -> f64 {
    (0..count)
        .map(|i| p.coord(i) * p.coord(i))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn surfaces_n2() -> Vec<ModelHypersurface> {
        vec![
            ModelHypersurface::new(ModelSpace::heisenberg(2).unwrap()).unwrap(),
            ModelHypersurface::new(ModelSpace::sphere(2, 1.0).unwrap()).unwrap(),
            ModelHypersurface::new(ModelSpace::anti_de_sitter(2, 0.5).unwrap()).unwrap(),
        ]
    }

    fn sample_chart_point(hs: &ModelHypersurface, rng: &mut ChaCha8Rng) -> ChartPoint {
        let chart = hs.chart();
        let (lo, hi) = chart.interval();
        let hi = if hi.is_finite() { hi } else { 3.0 };
        let r = rng.gen_range((lo + 0.25)..(hi - 0.25));
        let n = hs.space().n();
        let mut phi = Vec::with_capacity(2 * n - 1);
        for _ in 0..2 * n - 2 {
            phi.push(rng.gen_range(0.3..(std::f64::consts::PI - 0.3)));
        }
        phi.push(rng.gen_range(0.0..std::f64::consts::TAU));
        ChartPoint::new(r, phi)
    }

    #[test]
    fn chart_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for hs in surfaces_n2() {
            let chart = hs.chart();
            for _ in 0..200 {
                let c = sample_chart_point(&hs, &mut rng);
                let p = chart.to_ambient(&c);
                assert!(hs.on_surface(&p), "chart image off the surface");
                let back = chart.from_ambient(&p).unwrap();
                assert!((back.r - c.r).abs() < 1e-10);
                for (a, b) in back.phi.iter().zip(&c.phi) {
                    assert!((a - b).abs() < 1e-10, "angle mismatch {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn chart_jacobian_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for hs in surfaces_n2() {
            let chart = hs.chart();
            let c = sample_chart_point(&hs, &mut rng);
            let jac = chart.jacobian(&c);
            let h = 1e-5;
            for j in 0..chart.dim() {
                let plus = chart.to_ambient(&c.shifted(j, h));
                let minus = chart.to_ambient(&c.shifted(j, -h));
                let fd = (plus.coords() - minus.coords()) / (2.0 * h);
                assert!(
                    (jac.column(j) - &fd).norm() < 1e-8,
                    "family {:?}, column {j}",
                    hs.space().family()
                );
            }
        }
    }

    #[test]
    fn heisenberg_jac_det_is_determinant() {
        let hs = ModelHypersurface::new(ModelSpace::heisenberg(2).unwrap()).unwrap();
        let chart = hs.chart();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let c = sample_chart_point(&hs, &mut rng);
            let jac = chart.jacobian(&c);
            let block = jac.rows(0, 4).into_owned();
            let det = block.determinant();
            assert!((det - chart.jac_det(&c)).abs() < 1e-10 * (1.0 + det.abs()));
        }
    }

    #[test]
    fn characteristic_points_are_detected() {
        // Heisenberg: only the origin. Sphere: the two poles. AdS: the apex.
        let heis = ModelHypersurface::new(ModelSpace::heisenberg(1).unwrap()).unwrap();
        let w = heis
            .is_characteristic(&Point::new(vec![0.0, 0.0, 0.0]))
            .unwrap();
        assert!(w.characteristic);
        let w = heis
            .is_characteristic(&Point::new(vec![1.0, 0.0, 0.0]))
            .unwrap();
        assert!(!w.characteristic);
        assert!((w.witness - 0.25).abs() < 1e-15); // exactly |x|^2 / 4

        let sph = ModelHypersurface::new(ModelSpace::sphere(1, 1.0).unwrap()).unwrap();
        for pole in [1.0, -1.0] {
            let w = sph
                .is_characteristic(&Point::new(vec![0.0, 0.0, pole, 0.0]))
                .unwrap();
            assert!(w.characteristic, "pole {pole} must be characteristic");
        }
        let w = sph
            .is_characteristic(&Point::new(vec![1.0, 0.0, 0.0, 0.0]))
            .unwrap();
        assert!(!w.characteristic);

        let ads = ModelHypersurface::new(ModelSpace::anti_de_sitter(1, 1.0).unwrap()).unwrap();
        let w = ads
            .is_characteristic(&Point::new(vec![0.0, 0.0, 1.0, 0.0]))
            .unwrap();
        assert!(w.characteristic);
    }

    #[test]
    fn h2_witness_value_off_characteristic() {
        let hs = ModelHypersurface::new(ModelSpace::heisenberg(2).unwrap()).unwrap();
        let p = Point::new(vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let w = hs.is_characteristic(&p).unwrap();
        assert!(!w.characteristic);
        assert!((w.witness - 0.25).abs() < 1e-15);
    }

    #[test]
    fn off_surface_point_is_a_domain_error() {
        let hs = ModelHypersurface::new(ModelSpace::heisenberg(1).unwrap()).unwrap();
        let bad = Point::new(vec![1.0, 0.0, 0.5]);
        assert!(matches!(hs.is_characteristic(&bad), Err(Error::Domain(_))));
    }

    #[test]
    fn h2_normal_matches_hand_value() {
        let hs = ModelHypersurface::new(ModelSpace::heisenberg(2).unwrap()).unwrap();
        let p = Point::new(vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let n = hs.sub_riemannian_normal(&p).unwrap();
        let expected = DVector::from_vec(vec![0.0, -1.0, 0.0, 0.0, -0.5]);
        assert!(
            (n.components() - &expected).norm() < 1e-12,
            "got {:?}",
            n.components()
        );
    }

    #[test]
    fn normal_defining_properties_all_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for hs in surfaces_n2() {
            let omega = hs.space().contact_form();
            let chart = hs.chart();
            for _ in 0..100 {
                let c = sample_chart_point(&hs, &mut rng);
                let p = chart.to_ambient(&c);
                let n = hs.sub_riemannian_normal(&p).unwrap();
                let closed = hs.sub_riemannian_normal_closed(&p).unwrap();
                assert!(
                    (n.components() - closed.components()).norm() < 1e-9,
                    "closed vs generic normal disagree for {:?}",
                    hs.space().family()
                );
                assert!(omega.apply(&p, n.components()).abs() < 1e-9);
                let g_nn = hs.space().fibre_metric(&p, n.components(), n.components());
                assert!((g_nn - 1.0).abs() < 1e-9);
                for y in hs.horizontal_frame(&p).unwrap() {
                    let g_ny = hs.space().fibre_metric(&p, n.components(), y.components());
                    assert!(g_ny.abs() < 1e-9);
                }
                // mu positivity on the chart frame
                let rho = hs.volume_density_contraction(&c).unwrap();
                assert!(rho > 0.0, "mu not positive on the chart frame");
            }
        }
    }

    #[test]
    fn eps_normal_converges_quadratically() {
        // The quadratic regime needs eps well below the distance to the
        // characteristic set, so the grid keeps r away from the margin.
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for hs in surfaces_n2() {
            let chart = hs.chart();
            let eps_schedule = [0.2, 0.1, 0.05, 0.025];
            let mut sup = [0.0f64; 4];
            for _ in 0..50 {
                let mut c = sample_chart_point(&hs, &mut rng);
                let (lo, hi) = chart.interval();
                let hi = if hi.is_finite() { hi } else { 3.0 };
                c.r = 0.6 + (c.r - lo - 0.25) / (hi - lo - 0.5) * (hi - lo - 1.2);
                let p = chart.to_ambient(&c);
                let n = hs.sub_riemannian_normal(&p).unwrap();
                for (s, &eps) in sup.iter_mut().zip(&eps_schedule) {
                    let ne = hs.riemannian_normal(&p, eps).unwrap();
                    *s = s.max((ne.components() - n.components()).norm());
                }
            }
            let order = fitted_order(&eps_schedule, &sup);
            assert!(order >= 1.8, "{:?}: fitted order {order}", hs.space().family());
        }
    }

    #[test]
    fn eps_normal_at_characteristic_point_is_reeb_direction() {
        let hs = ModelHypersurface::new(ModelSpace::heisenberg(1).unwrap()).unwrap();
        let origin = Point::new(vec![0.0, 0.0, 0.0]);
        let eps = 0.3;
        let ne = hs.riemannian_normal(&origin, eps).unwrap();
        let x0 = hs.space().reeb_field().components(&origin);
        let aligned = (ne.components() - &x0 * eps)
            .norm()
            .min((ne.components() + &x0 * eps).norm());
        assert!(aligned < 1e-12, "N_eps at the origin is +/- eps X0");
    }

    #[test]
    fn eps_normal_flat_case_matches_gram_schmidt_oracle() {
        // eps = 1 on the Heisenberg n = 1 hypersurface: orthogonalize the
        // ambient normal against T_pS under g_1 and compare.
        let hs = ModelHypersurface::new(ModelSpace::heisenberg(1).unwrap()).unwrap();
        let p = Point::new(vec![0.8, -0.3, 0.0]);
        let eps = 1.0;
        let ne = hs.riemannian_normal(&p, eps).unwrap();

        // Gram pairing of g_eps = g + eps^-2 omega ⊗ omega on ambient vectors,
        // via the splitting v = v_D + omega(v) X0.
        let omega = hs.space().contact_form();
        let x0 = hs.space().reeb_field().components(&p);
        let g_eps = |v: &DVector<f64>, w: &DVector<f64>| {
            let ov = omega.apply(&p, v);
            let ow = omega.apply(&p, w);
            let vd = v - &x0 * ov;
            let wd = w - &x0 * ow;
            hs.space().fibre_metric(&p, &vd, &wd) + ov * ow / (eps * eps)
        };
        // tangent basis of S = {x3 = 0}
        let t1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let t2 = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        // seek w = e3 - a t1 - b t2 with g_eps(w, t_i) = 0
        let gram = nalgebra::Matrix2::new(
            g_eps(&t1, &t1),
            g_eps(&t2, &t1),
            g_eps(&t1, &t2),
            g_eps(&t2, &t2),
        );
        let e3 = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let rhs = nalgebra::Vector2::new(g_eps(&e3, &t1), g_eps(&e3, &t2));
        let ab = gram.lu().solve(&rhs).unwrap();
        let mut w = e3 - &t1 * ab[0] - &t2 * ab[1];
        w /= g_eps(&w, &w).sqrt();
        let diff = (ne.components() - &w)
            .norm()
            .min((ne.components() + &w).norm());
        assert!(diff < 1e-9, "oracle mismatch {diff}");
    }

    #[test]
    fn horizontal_frame_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for hs in surfaces_n2() {
            let omega = hs.space().contact_form();
            let chart = hs.chart();
            for _ in 0..50 {
                let c = sample_chart_point(&hs, &mut rng);
                let p = chart.to_ambient(&c);
                let frame = hs.horizontal_frame(&p).unwrap();
                assert_eq!(frame.len(), 2 * hs.space().n() - 1);
                for (i, yi) in frame.iter().enumerate() {
                    assert!(omega.apply(&p, yi.components()).abs() < 1e-10);
                    assert!(yi.components()[hs.u_index()].abs() < 1e-10);
                    for (j, yj) in frame.iter().enumerate() {
                        let g = hs
                            .space()
                            .fibre_metric(&p, yi.components(), yj.components());
                        let expect = if i == j { 1.0 } else { 0.0 };
                        assert!((g - expect).abs() < 1e-10);
                    }
                }
            }
            // bitwise determinism
            let c = sample_chart_point(&hs, &mut rng);
            let p = chart.to_ambient(&c);
            let f1 = hs.horizontal_frame(&p).unwrap();
            let f2 = hs.horizontal_frame(&p).unwrap();
            for (a, b) in f1.iter().zip(&f2) {
                assert_eq!(a.components(), b.components());
            }
        }
    }

    #[test]
    fn h2_frame_spans_horizontal_frame() {
        let hs = ModelHypersurface::new(ModelSpace::heisenberg(2).unwrap()).unwrap();
        let [u1, u2, u3, _u4] = hs.h2_frame().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let chart = hs.chart();
        for _ in 0..50 {
            let c = sample_chart_point(&hs, &mut rng);
            let p = chart.to_ambient(&c);
            // project each Y onto span{U1,U2,U3}; residual must vanish
            let us = [u1.components(&p), u2.components(&p), u3.components(&p)];
            for y in hs.horizontal_frame(&p).unwrap() {
                let mut residual = y.components().clone();
                for u in &us {
                    let c = residual.dot(u) / u.dot(u);
                    residual -= u * c;
                }
                assert!(residual.norm() < 1e-9);
            }
        }
    }

    #[test]
    fn h2_structure_constants() {
        let hs = ModelHypersurface::new(ModelSpace::heisenberg(2).unwrap()).unwrap();
        let [u1, u2, u3, u4] = hs.h2_frame().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let chart = hs.chart();
        for _ in 0..20 {
            let c = sample_chart_point(&hs, &mut rng);
            let p = chart.to_ambient(&c);
            let r = hs.radius(&p);
            // d zeta pairings
            let dz12 = hs
                .space()
                .d_omega_eval(&u1.components(&p), &u2.components(&p));
            let dz13 = hs
                .space()
                .d_omega_eval(&u1.components(&p), &u3.components(&p));
            let dz23 = hs
                .space()
                .d_omega_eval(&u2.components(&p), &u3.components(&p));
            assert!(dz12.abs() < 1e-12 && dz13.abs() < 1e-12);
            assert!((dz23 + 1.0).abs() < 1e-12, "d zeta(U2, U3) = {dz23}");
            // bracket identity [U2, U3] = -2 U4 / r with analytic Jacobians
            let bracket = crate::calculus::lie_bracket(&u2, &u3, &p).unwrap();
            let expected = u4.components(&p) * (-2.0 / r);
            assert!(
                (bracket.components() - &expected).norm() < 1e-12,
                "bracket residual {}",
                (bracket.components() - &expected).norm()
            );
        }
    }

    #[test]
    fn quasi_contact_rank_and_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for hs in surfaces_n2() {
            let radial = hs.radial_field();
            let chart = hs.chart();
            for _ in 0..50 {
                let c = sample_chart_point(&hs, &mut rng);
                let p = chart.to_ambient(&c);
                let report = hs.quasi_contact_check(&p).unwrap();
                assert_eq!(
                    report.rank,
                    2 * hs.space().n() - 2,
                    "{:?}",
                    hs.space().family()
                );
                let r = radial.components(&p).normalize();
                let k = report.kernel.components();
                let angle = k.dot(&r).abs().min(1.0).acos();
                assert!(
                    angle < 1e-6,
                    "kernel not radial for {:?} (angle {angle})",
                    hs.space().family()
                );
            }
        }
    }

    #[test]
    fn quasi_contact_needs_n_at_least_two() {
        let hs = ModelHypersurface::new(ModelSpace::heisenberg(1).unwrap()).unwrap();
        let p = Point::new(vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            hs.quasi_contact_check(&p),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn radial_field_is_unit_and_horizontal() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for hs in surfaces_n2() {
            let radial = hs.radial_field();
            let omega = hs.space().contact_form();
            let chart = hs.chart();
            for _ in 0..50 {
                let c = sample_chart_point(&hs, &mut rng);
                let p = chart.to_ambient(&c);
                let r = radial.components(&p);
                assert!((hs.space().fibre_metric(&p, &r, &r) - 1.0).abs() < 1e-10);
                assert!(omega.apply(&p, &r).abs() < 1e-10);
                assert!(r[hs.u_index()].abs() < 1e-12);
                // R is the first chart frame vector
                let dr = chart.frame(&c)[0].components().clone();
                assert!((r - dr).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn volume_density_closed_form_vs_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for hs in surfaces_n2() {
            for _ in 0..50 {
                let c = sample_chart_point(&hs, &mut rng);
                let a = hs.volume_density(&c).unwrap();
                let b = hs.volume_density_contraction(&c).unwrap();
                assert!(
                    (a - b).abs() <= 1e-8 * a.abs().max(1.0),
                    "{:?}: closed {a} vs contraction {b}",
                    hs.space().family()
                );
            }
        }
    }

    #[test]
    fn h1_volume_density_is_half_r_squared() {
        let hs = ModelHypersurface::new(ModelSpace::heisenberg(1).unwrap()).unwrap();
        let c = ChartPoint::new(2.0, vec![0.7]);
        assert_eq!(hs.volume_density(&c).unwrap(), 2.0);
        let contraction = hs.volume_density_contraction(&c).unwrap();
        assert!((contraction - 2.0).abs() < 1e-12);
    }

    #[test]
    fn h2_cartesian_density() {
        let hs = ModelHypersurface::new(ModelSpace::heisenberg(2).unwrap()).unwrap();
        let p = Point::new(vec![2.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((hs.cartesian_volume_density(&p).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn eps_volume_density_converges_to_mu() {
        // eps * n! * (density of mu_eps) -> density of mu.
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for hs in surfaces_n2() {
            let nf = factorial(hs.space().n());
            for _ in 0..10 {
                let c = sample_chart_point(&hs, &mut rng);
                let rho = hs.volume_density(&c).unwrap();
                let mut prev = f64::INFINITY;
                for eps in [0.2, 0.1, 0.05] {
                    let rho_eps = hs.volume_density_eps(&c, eps).unwrap();
                    let gap = (eps * nf * rho_eps - rho).abs();
                    assert!(gap < prev, "eps-volume not monotone at eps {eps}");
                    prev = gap;
                }
            }
        }
    }

    #[test]
    fn seeded_frame_is_smooth_and_matches_base() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for hs in surfaces_n2() {
            let chart = hs.chart();
            let c = sample_chart_point(&hs, &mut rng);
            let p = chart.to_ambient(&c);
            let base = hs.horizontal_frame(&p).unwrap();
            let seeded = hs.seeded_frame(&p).unwrap();
            let at_base = seeded.eval(&p).unwrap();
            for (a, b) in at_base.iter().zip(&base) {
                assert!((a - b.components()).norm() < 1e-12);
            }
            // nearby evaluation stays orthonormal and close to the base frame
            let q = Point::from_vector(
                p.coords() + DVector::from_fn(p.dim(), |_, _| 1e-3 * (rng.gen::<f64>() - 0.5)),
            );
            let near = seeded.eval(&q).unwrap();
            for (i, vi) in near.iter().enumerate() {
                assert!((vi - &at_base[i]).norm() < 1e-2);
                for (j, vj) in near.iter().enumerate() {
                    let g = hs.space().fibre_metric(&q, vi, vj);
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((g - expect).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn bracket_generation_full_rank_n2() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for hs in surfaces_n2() {
            for _ in 0..5 {
                let c = sample_chart_point(&hs, &mut rng);
                let p = hs.chart().to_ambient(&c);
                let rank = hs.bracket_generation_rank(&p).unwrap();
                assert_eq!(rank, 4, "family {:?}", hs.space().family());
            }
        }
    }

    #[test]
    fn characteristic_point_errors_for_singular_constructions() {
        let hs = ModelHypersurface::new(ModelSpace::heisenberg(2).unwrap()).unwrap();
        let origin = Point::new(vec![0.0; 5]);
        assert!(matches!(
            hs.sub_riemannian_normal(&origin),
            Err(Error::Characteristic(_))
        ));
        assert!(matches!(
            hs.horizontal_frame(&origin),
            Err(Error::Characteristic(_))
        ));
    }

    #[test]
    fn h_k_values() {
        let sphere = ModelSpace::sphere(1, 2.0).unwrap();
        assert!((sphere.h_k(std::f64::consts::FRAC_PI_4).unwrap() - 0.5).abs() < 1e-15);
        let heis = ModelSpace::heisenberg(1).unwrap();
        assert_eq!(heis.h_k(3.0).unwrap(), 3.0);
        let ads = ModelSpace::anti_de_sitter(1, 1e-4).unwrap();
        let r = 1.7;
        assert!((ads.h_k(r).unwrap() - r).abs() < 1e-7 * r);
        // outside the interval
        assert!(sphere.h_k(2.0).is_err());
    }

    fn fitted_order(eps: &[f64], err: &[f64]) -> f64 {
        let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
        let ys: Vec<f64> = err.iter().map(|e| e.ln()).collect();
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    }
}
