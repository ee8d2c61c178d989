//! The intrinsic sub-Laplacian and its Riemannian approximations.
//!
//! `Delta f = div_mu(grad_S f)` is computed along two independent routes:
//!
//! * `DivGrad` — the primary, frame-free route: the horizontal gradient is a
//!   globally smooth field whose pointwise value never depends on the frame
//!   used to assemble it, so its chart components can be differentiated
//!   directly against the volume density;
//! * `FrameFormula` — `sum_i (Y_i^2 + (div_mu Y_i) Y_i)`, evaluated with a
//!   locally smooth frame seeded at the evaluation point (pointwise pivoted
//!   frames need not vary smoothly, so the seed is reused across the whole
//!   finite-difference stencil);
//! * `ClosedForm` — the explicit expression on the Heisenberg `n = 2`
//!   hypersurface, `U_1^2 + U_2^2 + U_3^2 + (4/r) U_1`.
//!
//! The Laplace–Beltrami operator of the approximating metric
//! `g + eps^(-2) theta0 ⊗ theta0` follows the same two routes with the
//! `eps`-volume and the rescaled Reeb projection `Z_eps`, and
//! [`convergence_study`] measures `sup |Delta_eps f - Delta f|` along a
//! decreasing `eps` schedule.

use serde::Serialize;

use crate::calculus::{fd, Point, ScalarField, Tangent, VectorField};
use crate::error::{Error, Result};
use crate::hypersurface::{ChartPoint, ModelHypersurface};
use crate::models::ModelFamily;

/// Computation route selector for [`sublaplacian`] and [`laplace_beltrami_eps`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DivGrad,
    FrameFormula,
    ClosedForm,
}

/// Finite-difference steps: `outer` for divergences in the chart, `inner`
/// for directional derivatives of scalar fields.
#[derive(Clone, Copy, Debug)]
pub struct FdParams {
    pub outer: f64,
    pub inner: f64,
}

impl Default for FdParams {
    fn default() -> Self {
        FdParams {
            outer: fd::DEFAULT_STEP,
            inner: fd::DEFAULT_STEP,
        }
    }
}

/// Value of an operator application together with its provenance.
#[derive(Clone, Debug)]
pub struct OperatorResult {
    pub value: f64,
    pub method: Method,
    pub chart: ChartPoint,
    pub ambient: Point,
    pub params: FdParams,
}

/// Outcome of a Riemannian-approximation convergence run for one function.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub function_id: String,
    pub grid_descriptor: String,
    pub eps_schedule: Vec<f64>,
    /// `sup` over the grid of `|Delta_eps f - Delta f|`, one entry per eps.
    pub sup_errors: Vec<f64>,
    /// Log-log slope of `sup_errors` against `eps_schedule`.
    pub fitted_order: f64,
    pub strictly_decreasing: bool,
    /// Chart coordinates of the grid, row per point.
    pub grid: Vec<Vec<f64>>,
    /// `Delta f` per grid point.
    pub delta_f: Vec<f64>,
    /// `Delta_eps f` per eps (outer) and grid point (inner).
    pub delta_eps_f: Vec<Vec<f64>>,
}

impl ConvergenceReport {
    pub fn passes(&self, min_order: f64) -> bool {
        self.strictly_decreasing && self.fitted_order >= min_order
    }
}

/// Least-squares slope of `ln(err)` against `ln(eps)`.
pub fn fitted_order(eps: &[f64], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.max(1e-300).ln()).collect();
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// The horizontal gradient `grad_S f` at `p`: the unique `W`-vector with
/// `g(grad_S f, Y) = df(Y)` for all `Y` in `W`. Assembled as
/// `sum_i (Y_i f) Y_i` over the deterministic frame; the value is
/// frame-independent.
pub fn horizontal_gradient(hs: &ModelHypersurface, f: &ScalarField, p: &Point) -> Result<Tangent> {
    let frame = hs.horizontal_frame(p)?;
    let grad = f.gradient(p);
    let mut out = nalgebra::DVector::zeros(p.dim());
    for y in &frame {
        let coeff = grad.dot(y.components());
        out += y.components() * coeff;
    }
    Ok(Tangent::new(p.clone(), out))
}

/// Gradient of `f` on `S` for the approximating metric:
/// `grad_S f + (Zf / g_eps(Z,Z)) Z`.
pub fn horizontal_gradient_eps(
    hs: &ModelHypersurface,
    f: &ScalarField,
    p: &Point,
    eps: f64,
) -> Result<Tangent> {
    let horizontal = horizontal_gradient(hs, f, p)?;
    let z = hs.reeb_projection().components(p);
    let zf = f.gradient(p).dot(&z);
    let gram = hs.z_gram_eps(p, eps)?;
    Ok(Tangent::new(
        p.clone(),
        horizontal.into_components() + z * (zf / gram),
    ))
}

/// Divergence of a vector field on `S` with respect to the induced volume,
/// `div_mu V = (1/rho) sum_j d/dc_j (rho V^j)` in chart coordinates, with
/// Richardson-extrapolated central differences.
pub fn divergence_mu(hs: &ModelHypersurface, v: &VectorField, c: &ChartPoint) -> Result<f64> {
    divergence_with_density(hs, v, c, &|c| hs.volume_density(c), FdParams::default())
}

pub fn divergence_mu_with_params(
    hs: &ModelHypersurface,
    v: &VectorField,
    c: &ChartPoint,
    params: FdParams,
) -> Result<f64> {
    divergence_with_density(hs, v, c, &|c| hs.volume_density(c), params)
}

/// Divergence against the `eps`-approximation volume `mu_eps`.
pub fn divergence_mu_eps(
    hs: &ModelHypersurface,
    v: &VectorField,
    c: &ChartPoint,
    eps: f64,
) -> Result<f64> {
    divergence_with_density(
        hs,
        v,
        c,
        &|c| hs.volume_density_eps(c, eps),
        FdParams::default(),
    )
}

fn divergence_with_density(
    hs: &ModelHypersurface,
    v: &VectorField,
    c: &ChartPoint,
    density: &dyn Fn(&ChartPoint) -> Result<f64>,
    params: FdParams,
) -> Result<f64> {
    let chart = hs.chart();
    let dim = chart.dim();
    let rho0 = density(c)?;
    if rho0 == 0.0 {
        return Err(Error::domain("vanishing volume density at the chart point"));
    }
    // rho * V^j as a function of the chart coordinates; errors inside the
    // stencil surface as NaN and are rejected afterwards.
    let component = |c: &ChartPoint, j: usize| -> f64 {
        let rho = match density(c) {
            Ok(r) => r,
            Err(_) => return f64::NAN,
        };
        let p = chart.to_ambient(c);
        let ambient = v.components(&p);
        match chart.pullback(c, &ambient) {
            Ok(chart_comps) => rho * chart_comps[j],
            Err(_) => f64::NAN,
        }
    };
    let mut sum = 0.0;
    for j in 0..dim {
        sum += fd::richardson(|t| component(&c.shifted(j, t), j), 0.0, params.outer);
    }
    if !sum.is_finite() {
        return Err(Error::domain(
            "divergence stencil left the chart domain".to_string(),
        ));
    }
    Ok(sum / rho0)
}

/// Closed-form radial divergence `div_mu R`: `2n/r`, `2nk cot(kr)` or
/// `2nk coth(kr)`.
pub fn radial_divergence(hs: &ModelHypersurface, r: f64) -> f64 {
    let n = hs.space().n() as f64;
    match hs.space().family() {
        ModelFamily::Heisenberg => 2.0 * n / r,
        ModelFamily::Sphere => {
            let k = hs.space().k().expect("sphere has k");
            2.0 * n * k * (k * r).cos() / (k * r).sin()
        }
        ModelFamily::AntiDeSitter => {
            let k = hs.space().k().expect("anti-de Sitter has k");
            2.0 * n * k * (k * r).cosh() / (k * r).sinh()
        }
    }
}

/// Apply the intrinsic sub-Laplacian to `f` at a chart point.
pub fn sublaplacian(
    hs: &ModelHypersurface,
    f: &ScalarField,
    c: &ChartPoint,
    method: Method,
) -> Result<OperatorResult> {
    sublaplacian_with_params(hs, f, c, method, FdParams::default())
}

pub fn sublaplacian_with_params(
    hs: &ModelHypersurface,
    f: &ScalarField,
    c: &ChartPoint,
    method: Method,
    params: FdParams,
) -> Result<OperatorResult> {
    let chart = hs.chart();
    let p = chart.to_ambient(c);
    hs.is_characteristic(&p).and_then(|w| {
        if w.characteristic {
            Err(Error::characteristic(
                "sub-Laplacian is undefined at characteristic points",
            ))
        } else {
            Ok(())
        }
    })?;
    let value = match method {
        Method::DivGrad => {
            let hs_inner = hs.clone();
            let f_inner = f.clone();
            let grad_field = VectorField::new(move |x: &Point| {
                horizontal_gradient(&hs_inner, &f_inner, x)
                    .map(Tangent::into_components)
                    .unwrap_or_else(|_| nalgebra::DVector::from_element(x.dim(), f64::NAN))
            });
            divergence_with_density(hs, &grad_field, c, &|c| hs.volume_density(c), params)?
        }
        Method::FrameFormula => {
            let seeded = hs.seeded_frame(&p)?;
            let mut total = 0.0;
            for i in 0..seeded.rank() {
                let field = seeded.field(i);
                let first = f.gradient(&p).dot(&field.components(&p));
                let second = second_derivative_along(f, &field, &p, params.inner);
                let div =
                    divergence_with_density(hs, &field, c, &|c| hs.volume_density(c), params)?;
                total += second + div * first;
            }
            total
        }
        Method::ClosedForm => {
            let [u1, u2, u3, _] = hs.h2_frame().map_err(|_| {
                Error::unsupported(
                    "the closed-form route exists on the Heisenberg n = 2 hypersurface only",
                )
            })?;
            let r = hs.radius(&p);
            let mut total = 4.0 / r * f.gradient(&p).dot(&u1.components(&p));
            for u in [&u1, &u2, &u3] {
                total += second_derivative_along(f, u, &p, params.inner);
            }
            total
        }
    };
    Ok(OperatorResult {
        value,
        method,
        chart: c.clone(),
        ambient: p,
        params,
    })
}

/// `V(Vf)(p)` for a varying field: outer Richardson derivative along the
/// frozen direction `V(p)` of `x -> df_x(V(x))`.
fn second_derivative_along(f: &ScalarField, v: &VectorField, p: &Point, h: f64) -> f64 {
    let dir = v.components(p);
    fd::richardson(
        |t| {
            let x = p.shifted(&dir, t);
            f.gradient(&x).dot(&v.components(&x))
        },
        0.0,
        h,
    )
}

/// Apply the Laplace–Beltrami operator of the `eps`-approximating metric.
pub fn laplace_beltrami_eps(
    hs: &ModelHypersurface,
    f: &ScalarField,
    c: &ChartPoint,
    eps: f64,
    method: Method,
) -> Result<f64> {
    laplace_beltrami_eps_with_params(hs, f, c, eps, method, FdParams::default())
}

pub fn laplace_beltrami_eps_with_params(
    hs: &ModelHypersurface,
    f: &ScalarField,
    c: &ChartPoint,
    eps: f64,
    method: Method,
    params: FdParams,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::argument("eps must be positive"));
    }
    let chart = hs.chart();
    let p = chart.to_ambient(c);
    match method {
        Method::DivGrad => {
            let hs_inner = hs.clone();
            let f_inner = f.clone();
            let grad_field = VectorField::new(move |x: &Point| {
                horizontal_gradient_eps(&hs_inner, &f_inner, x, eps)
                    .map(Tangent::into_components)
                    .unwrap_or_else(|_| nalgebra::DVector::from_element(x.dim(), f64::NAN))
            });
            divergence_with_density(hs, &grad_field, c, &|c| hs.volume_density_eps(c, eps), params)
        }
        Method::FrameFormula => {
            let seeded = hs.seeded_frame(&p)?;
            let mut total = 0.0;
            for i in 0..seeded.rank() {
                let field = seeded.field(i);
                let first = f.gradient(&p).dot(&field.components(&p));
                let second = second_derivative_along(f, &field, &p, params.inner);
                let div = divergence_with_density(
                    hs,
                    &field,
                    c,
                    &|c| hs.volume_density_eps(c, eps),
                    params,
                )?;
                total += second + div * first;
            }
            // transverse contribution of the normalized Reeb projection
            let hs_inner = hs.clone();
            let z_field = hs.reeb_projection();
            let z_eps = VectorField::new(move |x: &Point| {
                let gram = hs_inner
                    .z_gram_eps(x, eps)
                    .expect("Z_eps away from characteristic points");
                z_field.components(x) / gram.sqrt()
            });
            let z_first = f.gradient(&p).dot(&z_eps.components(&p));
            let z_second = second_derivative_along(f, &z_eps, &p, params.inner);
            let z_div = divergence_with_density(
                hs,
                &z_eps,
                c,
                &|c| hs.volume_density_eps(c, eps),
                params,
            )?;
            Ok(total + z_second + z_div * z_first)
        }
        Method::ClosedForm => Err(Error::unsupported(
            "no closed form for the approximating Laplace-Beltrami operators",
        )),
    }
}

/// Run the approximation study: `sup` over the grid of
/// `|Delta_eps f - Delta f|` for every `eps` in the (strictly decreasing)
/// schedule, plus the fitted log-log order.
pub fn convergence_study(
    hs: &ModelHypersurface,
    function_id: &str,
    f: &ScalarField,
    grid: &[ChartPoint],
    eps_schedule: &[f64],
) -> Result<ConvergenceReport> {
    convergence_study_with_margin(hs, function_id, f, grid, eps_schedule, 0.2)
}

pub fn convergence_study_with_margin(
    hs: &ModelHypersurface,
    function_id: &str,
    f: &ScalarField,
    grid: &[ChartPoint],
    eps_schedule: &[f64],
    margin: f64,
) -> Result<ConvergenceReport> {
    if grid.is_empty() {
        return Err(Error::argument("empty grid"));
    }
    if eps_schedule.len() < 2 {
        return Err(Error::argument("the eps schedule needs at least two entries"));
    }
    if eps_schedule.windows(2).any(|w| w[1] >= w[0]) || eps_schedule.iter().any(|&e| e <= 0.0) {
        return Err(Error::argument(
            "the eps schedule must be positive and strictly decreasing",
        ));
    }
    let chart = hs.chart();
    let (lo, hi) = chart.interval();
    for c in grid {
        let ok = c.r >= lo + margin && (!hi.is_finite() || c.r <= hi - margin);
        if !ok {
            return Err(Error::argument(format!(
                "grid point at r = {} violates the characteristic-set margin {margin}",
                c.r
            )));
        }
    }
    let delta_f: Vec<f64> = grid
        .iter()
        .map(|c| sublaplacian(hs, f, c, Method::DivGrad).map(|r| r.value))
        .collect::<Result<_>>()?;
    let mut sup_errors = Vec::with_capacity(eps_schedule.len());
    let mut delta_eps_f = Vec::with_capacity(eps_schedule.len());
    for &eps in eps_schedule {
        let values: Vec<f64> = grid
            .iter()
            .map(|c| laplace_beltrami_eps(hs, f, c, eps, Method::DivGrad))
            .collect::<Result<_>>()?;
        let sup = values
            .iter()
            .zip(&delta_f)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        sup_errors.push(sup);
        delta_eps_f.push(values);
    }
    let strictly_decreasing = sup_errors.windows(2).all(|w| w[1] < w[0]);
    let order = fitted_order(eps_schedule, &sup_errors);
    Ok(ConvergenceReport {
        function_id: function_id.to_string(),
        grid_descriptor: format!(
            "{} chart points, r in [{:.3}, {:.3}], margin {margin}",
            grid.len(),
            grid.iter().map(|c| c.r).fold(f64::INFINITY, f64::min),
            grid.iter().map(|c| c.r).fold(0.0f64, f64::max),
        ),
        eps_schedule: eps_schedule.to_vec(),
        sup_errors,
        fitted_order: order,
        strictly_decreasing,
        grid: grid
            .iter()
            .map(|c| c.as_vector().iter().copied().collect())
            .collect(),
        delta_f,
        delta_eps_f,
    })
}

/// Ambient extension of the radial coordinate together with its gradient.
fn radius_field_parts(
    hs: &ModelHypersurface,
) -> (
    impl Fn(&Point) -> f64 + Clone + Send + Sync + 'static,
    impl Fn(&Point) -> nalgebra::DVector<f64> + Clone + Send + Sync + 'static,
) {
    let family = hs.space().family();
    let n = hs.space().n();
    let k = hs.space().k().unwrap_or(1.0);
    let dim = hs.space().ambient_dim();
    let value = move |p: &Point| -> f64 {
        match family {
            ModelFamily::Heisenberg => (0..2 * n)
                .map(|i| p.coord(i) * p.coord(i))
                .sum::<f64>()
                .sqrt(),
            ModelFamily::Sphere => p.coord(2 * n).clamp(-1.0, 1.0).acos() / k,
            ModelFamily::AntiDeSitter => p.coord(2 * n).max(1.0).acosh() / k,
        }
    };
    let gradient = move |p: &Point| -> nalgebra::DVector<f64> {
        let mut g = nalgebra::DVector::zeros(dim);
        match family {
            ModelFamily::Heisenberg => {
                let r = (0..2 * n)
                    .map(|i| p.coord(i) * p.coord(i))
                    .sum::<f64>()
                    .sqrt();
                for i in 0..2 * n {
                    g[i] = p.coord(i) / r;
                }
            }
            ModelFamily::Sphere => {
                let c = p.coord(2 * n).clamp(-1.0, 1.0);
                g[2 * n] = -1.0 / (k * (1.0 - c * c).sqrt());
            }
            ModelFamily::AntiDeSitter => {
                let c = p.coord(2 * n).max(1.0);
                g[2 * n] = 1.0 / (k * (c * c - 1.0).sqrt());
            }
        }
        g
    };
    (value, gradient)
}

/// Scalar field `x -> profile(r(x))` with analytic gradient.
pub fn radial_scalar_field(
    hs: &ModelHypersurface,
    profile: impl Fn(f64) -> f64 + Clone + Send + Sync + 'static,
    d_profile: impl Fn(f64) -> f64 + Clone + Send + Sync + 'static,
) -> ScalarField {
    let (r_of, grad_r) = radius_field_parts(hs);
    let r2 = r_of.clone();
    ScalarField::with_gradient(
        move |p| profile(r_of(p)),
        move |p| grad_r(p) * d_profile(r2(p)),
    )
}

/// Smooth window supported on `[a, b]`: `exp(-1/(1-t^2))` in the rescaled
/// coordinate `t = (2r - a - b)/(b - a)`, and its derivative.
pub fn bump_window(a: f64, b: f64) -> (impl Fn(f64) -> f64 + Clone, impl Fn(f64) -> f64 + Clone) {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let w = move |r: f64| -> f64 {
        let t = (r - mid) / half;
        if t.abs() >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - t * t)).exp()
        }
    };
    let dw = move |r: f64| -> f64 {
        let t = (r - mid) / half;
        if t.abs() >= 1.0 {
            0.0
        } else {
            let one_minus = 1.0 - t * t;
            (-1.0 / one_minus).exp() * (-2.0 * t / (one_minus * one_minus)) / half
        }
    };
    (w, dw)
}

/// Radial support window for compactly supported test functions:
/// `[0.3, 3]`, clipped to `[0.3, pi/k - 0.3]` on the sphere.
pub fn support_window(hs: &ModelHypersurface) -> (f64, f64) {
    let (_, hi) = hs.space().radial_interval();
    let upper = if hi.is_finite() { hi - 0.3 } else { 3.0 };
    (0.3, upper)
}

/// The bump test-function family: a radial bump, a coordinate-weighted bump
/// and a quadratic-weighted bump, all compactly supported away from the
/// characteristic set and carrying analytic gradients.
pub fn test_functions(hs: &ModelHypersurface) -> Vec<(String, ScalarField)> {
    let (a, b) = support_window(hs);
    let (w, dw) = bump_window(a, b);
    let (r_of, grad_r) = radius_field_parts(hs);

    let mut out = Vec::new();

    {
        let (w1, r1) = (w.clone(), r_of.clone());
        let (dw1, r2, g1) = (dw.clone(), r_of.clone(), grad_r.clone());
        out.push((
            "radial-bump".to_string(),
            ScalarField::with_gradient(move |p| w1(r1(p)), move |p| g1(p) * dw1(r2(p)))
                .with_support(a, b),
        ));
    }
    {
        let (w1, r1) = (w.clone(), r_of.clone());
        let (w2, dw2, r2, g2) = (w.clone(), dw.clone(), r_of.clone(), grad_r.clone());
        out.push((
            "x1-bump".to_string(),
            ScalarField::with_gradient(
                move |p| p.coord(0) * w1(r1(p)),
                move |p| {
                    let r = r2(p);
                    let mut g = g2(p) * (p.coord(0) * dw2(r));
                    g[0] += w2(r);
                    g
                },
            )
            .with_support(a, b),
        ));
    }
    {
        let (w_val, r_val) = (w.clone(), r_of.clone());
        let r2 = r_of.clone();
        out.push((
            "x1sq-x2sq-bump".to_string(),
            ScalarField::with_gradient(
                move |p| (p.coord(0) * p.coord(0) - p.coord(1) * p.coord(1)) * w_val(r_val(p)),
                move |p| {
                    let q = p.coord(0) * p.coord(0) - p.coord(1) * p.coord(1);
                    let r = r2(p);
                    let mut g = grad_r(p) * (q * dw(r));
                    g[0] += 2.0 * p.coord(0) * w(r);
                    g[1] -= 2.0 * p.coord(1) * w(r);
                    g
                },
            )
            .with_support(a, b),
        ));
    }
    out
}
