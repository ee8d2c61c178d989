//! Point-wise exterior calculus in low ambient dimension.
//!
//! Forms and fields are represented extensionally, as evaluators attached to
//! ambient coordinates: only values at points are ever needed, and with
//! ambient dimension at most eight the alternating permutation sums behind
//! wedge products stay cheap. Analytic derivatives can be attached to scalar
//! and vector fields; where they are missing, central finite differences with
//! one level of Richardson extrapolation are used instead.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Finite-difference helpers: central differences with one Richardson level.
pub mod fd {
    /// Base step for finite differences on unit-scale coordinates.
    pub const DEFAULT_STEP: f64 = 1e-4;

    /// Plain central difference `(f(t+h) - f(t-h)) / 2h`.
    pub fn central(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
        (f(t + h) - f(t - h)) / (2.0 * h)
    }

    /// Central difference with one Richardson level, error `O(h^4)`.
    pub fn richardson(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
        let coarse = central(&f, t, h);
        let fine = central(&f, t, 0.5 * h);
        (4.0 * fine - coarse) / 3.0
    }
}

/// A point of an ambient model space, stored in ambient coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    coords: DVector<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point {
            coords: DVector::from_vec(coords),
        }
    }

    pub fn from_vector(coords: DVector<f64>) -> Self {
        Point { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.coords[i]
    }

    /// Point shifted by `t` times the direction `dir`.
    pub fn shifted(&self, dir: &DVector<f64>, t: f64) -> Point {
        Point {
            coords: &self.coords + dir * t,
        }
    }

    /// Point with a single coordinate shifted by `t`.
    pub fn shifted_coord(&self, index: usize, t: f64) -> Point {
        let mut coords = self.coords.clone();
        coords[index] += t;
        Point { coords }
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|x| x.is_finite())
    }
}

/// A tangent vector anchored at a base point.
#[derive(Clone, Debug)]
pub struct Tangent {
    base: Point,
    components: DVector<f64>,
}

impl Tangent {
    pub fn new(base: Point, components: DVector<f64>) -> Self {
        assert_eq!(
            base.dim(),
            components.len(),
            "tangent components must match the ambient dimension"
        );
        Tangent { base, components }
    }

    pub fn base(&self) -> &Point {
        &self.base
    }

    pub fn components(&self) -> &DVector<f64> {
        &self.components
    }

    pub fn into_components(self) -> DVector<f64> {
        self.components
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }
}

type ScalarEval = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
type GradientEval = Arc<dyn Fn(&Point) -> DVector<f64> + Send + Sync>;
type JacobianEval = Arc<dyn Fn(&Point) -> DMatrix<f64> + Send + Sync>;
type FormEval = Arc<dyn Fn(&Point, &[&DVector<f64>]) -> f64 + Send + Sync>;

/// A scalar function of ambient coordinates, with an optional analytic
/// gradient and an optional radial support window for compactly supported
/// test functions.
#[derive(Clone)]
pub struct ScalarField {
    eval: ScalarEval,
    gradient: Option<GradientEval>,
    support: Option<(f64, f64)>,
}

impl ScalarField {
    pub fn new(eval: impl Fn(&Point) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField {
            eval: Arc::new(eval),
            gradient: None,
            support: None,
        }
    }

    pub fn with_gradient(
        eval: impl Fn(&Point) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&Point) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        ScalarField {
            eval: Arc::new(eval),
            gradient: Some(Arc::new(gradient)),
            support: None,
        }
    }

    /// Attach a radial support window `[lo, hi]` (support descriptor only).
    pub fn with_support(mut self, lo: f64, hi: f64) -> Self {
        self.support = Some((lo, hi));
        self
    }

    /// The `j`-th ambient coordinate function.
    pub fn coordinate(dim: usize, j: usize) -> Self {
        assert!(j < dim);
        ScalarField::with_gradient(
            move |p| p.coord(j),
            move |_| {
                let mut g = DVector::zeros(dim);
                g[j] = 1.0;
                g
            },
        )
    }

    pub fn constant(value: f64, dim: usize) -> Self {
        ScalarField::with_gradient(move |_| value, move |_| DVector::zeros(dim))
    }

    pub fn eval(&self, p: &Point) -> f64 {
        (self.eval)(p)
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        self.support
    }

    /// Gradient of the field: analytic when available, otherwise coordinate-wise
    /// Richardson-extrapolated central differences with the default step.
    pub fn gradient(&self, p: &Point) -> DVector<f64> {
        match &self.gradient {
            Some(g) => g(p),
            None => self.fd_gradient(p, fd::DEFAULT_STEP),
        }
    }

    pub fn fd_gradient(&self, p: &Point, h: f64) -> DVector<f64> {
        DVector::from_fn(p.dim(), |j, _| {
            fd::richardson(|t| (self.eval)(&p.shifted_coord(j, t)), 0.0, h)
        })
    }

    /// Differential applied to a tangent vector.
    pub fn differential(&self, p: &Point, v: &DVector<f64>) -> f64 {
        self.gradient(p).dot(v)
    }
}

/// A vector field given by ambient component functions, with an optional
/// analytic Jacobian of the components.
#[derive(Clone)]
pub struct VectorField {
    eval: GradientEval,
    jacobian: Option<JacobianEval>,
}

impl VectorField {
    pub fn new(eval: impl Fn(&Point) -> DVector<f64> + Send + Sync + 'static) -> Self {
        VectorField {
            eval: Arc::new(eval),
            jacobian: None,
        }
    }

    pub fn with_jacobian(
        eval: impl Fn(&Point) -> DVector<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&Point) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        VectorField {
            eval: Arc::new(eval),
            jacobian: Some(Arc::new(jacobian)),
        }
    }

    /// The constant coordinate field `∂/∂x_j`.
    pub fn coordinate_axis(dim: usize, j: usize) -> Self {
        assert!(j < dim);
        VectorField::with_jacobian(
            move |_| {
                let mut v = DVector::zeros(dim);
                v[j] = 1.0;
                v
            },
            move |_| DMatrix::zeros(dim, dim),
        )
    }

    pub fn constant(components: DVector<f64>) -> Self {
        let dim = components.len();
        VectorField::with_jacobian(move |_| components.clone(), move |_| DMatrix::zeros(dim, dim))
    }

    pub fn components(&self, p: &Point) -> DVector<f64> {
        (self.eval)(p)
    }

    pub fn at(&self, p: &Point) -> Tangent {
        Tangent::new(p.clone(), self.components(p))
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    /// Jacobian of the components: analytic when available, otherwise FD.
    pub fn jacobian(&self, p: &Point) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(p),
            None => self.fd_jacobian(p, fd::DEFAULT_STEP),
        }
    }

    pub fn fd_jacobian(&self, p: &Point, h: f64) -> DMatrix<f64> {
        let dim = p.dim();
        let mut jac = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            let col = DVector::from_fn(dim, |i, _| {
                fd::richardson(|t| (self.eval)(&p.shifted_coord(j, t))[i], 0.0, h)
            });
            jac.set_column(j, &col);
        }
        jac
    }

    /// Derivative of a scalar function along the field, `(Vf)(p) = df_p(V(p))`.
    pub fn apply_to(&self, f: &ScalarField, p: &Point) -> f64 {
        f.differential(p, &self.components(p))
    }
}

/// A one-form written in coordinates, `omega = sum_i a_i(x) dx_i`, carried by
/// its coefficient functions so that the exterior derivative can use analytic
/// coefficient partials.
#[derive(Clone)]
pub struct OneForm {
    coeffs: GradientEval,
    coeff_jacobian: Option<JacobianEval>,
}

impl OneForm {
    pub fn new(coeffs: impl Fn(&Point) -> DVector<f64> + Send + Sync + 'static) -> Self {
        OneForm {
            coeffs: Arc::new(coeffs),
            coeff_jacobian: None,
        }
    }

    pub fn with_jacobian(
        coeffs: impl Fn(&Point) -> DVector<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&Point) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        OneForm {
            coeffs: Arc::new(coeffs),
            coeff_jacobian: Some(Arc::new(jacobian)),
        }
    }

    /// The coordinate one-form `dx_j`.
    pub fn coordinate(dim: usize, j: usize) -> Self {
        assert!(j < dim);
        OneForm::with_jacobian(
            move |_| {
                let mut a = DVector::zeros(dim);
                a[j] = 1.0;
                a
            },
            move |_| DMatrix::zeros(dim, dim),
        )
    }

    pub fn coefficients(&self, p: &Point) -> DVector<f64> {
        (self.coeffs)(p)
    }

    /// Jacobian `(d a_i / d x_j)_{ij}` of the coefficients.
    pub fn coefficient_jacobian(&self, p: &Point) -> DMatrix<f64> {
        match &self.coeff_jacobian {
            Some(j) => j(p),
            None => {
                let dim = p.dim();
                let mut jac = DMatrix::zeros(dim, dim);
                for j in 0..dim {
                    let col = DVector::from_fn(dim, |i, _| {
                        fd::richardson(|t| (self.coeffs)(&p.shifted_coord(j, t))[i], 0.0, h_default())
                    });
                    jac.set_column(j, &col);
                }
                jac
            }
        }
    }

    pub fn apply(&self, p: &Point, v: &DVector<f64>) -> f64 {
        self.coefficients(p).dot(v)
    }

    pub fn eval(&self, v: &Tangent) -> f64 {
        self.apply(v.base(), v.components())
    }

    /// View as a general degree-one [`Form`].
    pub fn as_form(&self) -> Form {
        let coeffs = self.coeffs.clone();
        Form::new(1, move |p, vs| coeffs(p).dot(vs[0]))
    }

    /// Exterior derivative as a degree-two form,
    /// `d omega (v, w) = <J_a v, w> - <J_a w, v>` for the coefficient Jacobian `J_a`.
    ///
    /// The identity `d omega(X, Y) = X(omega(Y)) - Y(omega(X)) - omega([X, Y])`
    /// holds for the result; it is exercised in the tests.
    pub fn exterior_derivative(&self) -> Form {
        let this = self.clone();
        Form::new(2, move |p, vs| {
            let jac = this.coefficient_jacobian(p);
            (&jac * vs[0]).dot(vs[1]) - (&jac * vs[1]).dot(vs[0])
        })
    }
}

fn h_default() -> f64 {
    fd::DEFAULT_STEP
}

/// An alternating form of degree `p >= 1`, represented extensionally.
#[derive(Clone)]
pub struct Form {
    degree: usize,
    eval: FormEval,
}

impl Form {
    pub fn new(
        degree: usize,
        eval: impl Fn(&Point, &[&DVector<f64>]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        assert!(degree >= 1, "forms of degree zero are scalar fields");
        Form {
            degree,
            eval: Arc::new(eval),
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Evaluate on tangent vectors, checking the argument count and that all
    /// vectors share the base point `p`.
    pub fn eval(&self, p: &Point, vectors: &[Tangent]) -> Result<f64> {
        if vectors.len() != self.degree {
            return Err(Error::argument(format!(
                "form of degree {} applied to {} vectors",
                self.degree,
                vectors.len()
            )));
        }
        for v in vectors {
            if v.base() != p {
                return Err(Error::argument(
                    "form arguments must be based at the evaluation point".to_string(),
                ));
            }
        }
        let comps: Vec<&DVector<f64>> = vectors.iter().map(|v| v.components()).collect();
        Ok((self.eval)(p, &comps))
    }

    /// Evaluate on raw component vectors at `p`.
    pub fn eval_components(&self, p: &Point, vectors: &[&DVector<f64>]) -> Result<f64> {
        if vectors.len() != self.degree {
            return Err(Error::argument(format!(
                "form of degree {} applied to {} vectors",
                self.degree,
                vectors.len()
            )));
        }
        Ok((self.eval)(p, vectors))
    }

    pub(crate) fn eval_raw(&self, p: &Point, vectors: &[&DVector<f64>]) -> f64 {
        (self.eval)(p, vectors)
    }
}

/// Visit every permutation of `0..n` together with its sign, via Heap's
/// algorithm (one transposition per step).
pub(crate) fn for_each_permutation(n: usize, mut visit: impl FnMut(&[usize], f64)) {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut counters = vec![0usize; n];
    let mut sign = 1.0;
    visit(&perm, sign);
    let mut i = 0;
    while i < n {
        if counters[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(counters[i], i);
            }
            sign = -sign;
            visit(&perm, sign);
            counters[i] += 1;
            i = 0;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Evaluate the wedge product of `forms` on `vectors` at `p` through the
/// alternating permutation sum
/// `(1 / prod_i p_i!) * sum_sigma sgn(sigma) prod_i form_i(v_sigma(block_i))`.
///
/// For a product of one-forms this reduces to the determinant of the pairing
/// matrix.
pub fn wedge_eval(forms: &[&Form], p: &Point, vectors: &[Tangent]) -> Result<f64> {
    let total: usize = forms.iter().map(|f| f.degree()).sum();
    if total != vectors.len() {
        return Err(Error::argument(format!(
            "wedge of total degree {} applied to {} vectors",
            total,
            vectors.len()
        )));
    }
    for v in vectors {
        if v.base() != p {
            return Err(Error::argument(
                "wedge arguments must be based at the evaluation point".to_string(),
            ));
        }
    }
    let comps: Vec<&DVector<f64>> = vectors.iter().map(|v| v.components()).collect();
    Ok(wedge_eval_components(forms, p, &comps))
}

pub(crate) fn wedge_eval_components(forms: &[&Form], p: &Point, comps: &[&DVector<f64>]) -> f64 {
    // All one-forms: the determinant of the pairing matrix, evaluated directly.
    if forms.iter().all(|f| f.degree() == 1) {
        let m = forms.len();
        let mat = DMatrix::from_fn(m, m, |i, j| forms[i].eval_raw(p, &[comps[j]]));
        return mat.determinant();
    }

    let total = comps.len();
    let mut sum = 0.0;
    let mut block: Vec<&DVector<f64>> = Vec::with_capacity(total);
    for_each_permutation(total, |perm, sign| {
        let mut product = sign;
        let mut offset = 0;
        for form in forms {
            let deg = form.degree();
            block.clear();
            for &idx in &perm[offset..offset + deg] {
                block.push(comps[idx]);
            }
            product *= form.eval_raw(p, &block);
            if product == 0.0 {
                break;
            }
            offset += deg;
        }
        sum += product;
    });
    let normalizer: f64 = forms.iter().map(|f| factorial(f.degree())).product();
    sum / normalizer
}

/// Interior product `(i_V omega)(v_1, ..., v_{p-1}) = omega(V(p), v_1, ...)`.
pub fn interior_product(
    form: &Form,
    field: &VectorField,
    p: &Point,
    vectors: &[Tangent],
) -> Result<f64> {
    if form.degree() < 1 {
        return Err(Error::argument("interior product needs degree >= 1".to_string()));
    }
    if vectors.len() + 1 != form.degree() {
        return Err(Error::argument(format!(
            "interior product of a degree-{} form needs {} trailing vectors, got {}",
            form.degree(),
            form.degree() - 1,
            vectors.len()
        )));
    }
    for v in vectors {
        if v.base() != p {
            return Err(Error::argument(
                "interior product arguments must be based at the evaluation point".to_string(),
            ));
        }
    }
    let head = field.components(p);
    let mut comps: Vec<&DVector<f64>> = Vec::with_capacity(form.degree());
    comps.push(&head);
    comps.extend(vectors.iter().map(|v| v.components()));
    Ok(form.eval_raw(p, &comps))
}

/// Lie bracket `[X, Y](p) = J_Y(p) X(p) - J_X(p) Y(p)`.
pub fn lie_bracket(x: &VectorField, y: &VectorField, p: &Point) -> Result<Tangent> {
    if !p.is_finite() {
        return Err(Error::domain("lie bracket at a non-finite point".to_string()));
    }
    let xv = x.components(p);
    let yv = y.components(p);
    if !xv.iter().all(|c| c.is_finite()) || !yv.iter().all(|c| c.is_finite()) {
        return Err(Error::domain(
            "vector field not defined at the requested point".to_string(),
        ));
    }
    let bracket = y.jacobian(p) * &xv - x.jacobian(p) * &yv;
    Ok(Tangent::new(p.clone(), bracket))
}

/// First or second derivative of `f` along `v`.
///
/// Order one is a Richardson-extrapolated central difference of `f` along the
/// frozen direction `v(p)`; order two applies the field twice, `V(Vf)`, with
/// the inner derivative taken analytically whenever `f` carries a gradient.
pub fn directional_derivative(
    f: &ScalarField,
    v: &VectorField,
    p: &Point,
    order: u32,
) -> Result<f64> {
    directional_derivative_with_step(f, v, p, order, fd::DEFAULT_STEP)
}

pub fn directional_derivative_with_step(
    f: &ScalarField,
    v: &VectorField,
    p: &Point,
    order: u32,
    h: f64,
) -> Result<f64> {
    if h <= 0.0 {
        return Err(Error::argument("finite-difference step must be positive".to_string()));
    }
    let dir = v.components(p);
    match order {
        1 => Ok(fd::richardson(|t| f.eval(&p.shifted(&dir, t)), 0.0, h)),
        2 => {
            let inner = |x: &Point| -> f64 {
                if f.has_analytic_gradient() {
                    f.differential(x, &v.components(x))
                } else {
                    let d = v.components(x);
                    fd::richardson(|t| f.eval(&x.shifted(&d, t)), 0.0, h)
                }
            };
            Ok(fd::richardson(|t| inner(&p.shifted(&dir, t)), 0.0, h))
        }
        _ => Err(Error::argument(format!("derivative order must be 1 or 2, got {order}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn pt(coords: &[f64]) -> Point {
        Point::new(coords.to_vec())
    }

    fn axis(p: &Point, j: usize) -> Tangent {
        let mut v = DVector::zeros(p.dim());
        v[j] = 1.0;
        Tangent::new(p.clone(), v)
    }

    #[test]
    fn wedge_of_coordinate_one_forms_is_coordinate_duality() {
        let p = pt(&[0.3, -0.7]);
        let dx = OneForm::coordinate(2, 0).as_form();
        let dy = OneForm::coordinate(2, 1).as_form();
        let ex = axis(&p, 0);
        let ey = axis(&p, 1);
        let v = wedge_eval(&[&dx, &dy], &p, &[ex.clone(), ey.clone()]).unwrap();
        assert_eq!(v, 1.0);
        // antisymmetry
        let w = wedge_eval(&[&dx, &dy], &p, &[ey, ex]).unwrap();
        assert_eq!(w, -1.0);
    }

    #[test]
    fn wedge_degree_mismatch_is_an_argument_error() {
        let p = pt(&[0.0, 0.0]);
        let dx = OneForm::coordinate(2, 0).as_form();
        let e = wedge_eval(&[&dx], &p, &[axis(&p, 0), axis(&p, 1)]);
        assert!(matches!(e, Err(Error::Argument(_))));
    }

    #[test]
    fn wedge_of_one_forms_matches_pairing_determinant() {
        // Random coefficient one-forms against the explicit permutation sum.
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let dim = 4;
            let p = pt(&[rng.gen::<f64>(), rng.gen(), rng.gen(), rng.gen()]);
            let coeffs: Vec<DVector<f64>> = (0..3)
                .map(|_| DVector::from_fn(dim, |_, _| rng.gen::<f64>() - 0.5))
                .collect();
            let forms: Vec<Form> = coeffs
                .iter()
                .map(|c| {
                    let c = c.clone();
                    Form::new(1, move |_, vs| c.dot(vs[0]))
                })
                .collect();
            let refs: Vec<&Form> = forms.iter().collect();
            let vectors: Vec<Tangent> = (0..3)
                .map(|_| {
                    Tangent::new(p.clone(), DVector::from_fn(dim, |_, _| rng.gen::<f64>() - 0.5))
                })
                .collect();
            let via_det = wedge_eval(&refs, &p, &vectors).unwrap();
            // permutation-sum route
            let comps: Vec<&DVector<f64>> = vectors.iter().map(|v| v.components()).collect();
            let mut by_hand = 0.0;
            for_each_permutation(3, |perm, sign| {
                by_hand += sign
                    * coeffs[0].dot(comps[perm[0]])
                    * coeffs[1].dot(comps[perm[1]])
                    * coeffs[2].dot(comps[perm[2]]);
            });
            assert!((via_det - by_hand).abs() <= 1e-12 * (1.0 + by_hand.abs()));
        }
    }

    #[test]
    fn interior_product_of_coordinate_form() {
        let p = pt(&[1.0, 2.0]);
        let dx = OneForm::coordinate(2, 0).as_form();
        let v = VectorField::coordinate_axis(2, 0);
        let val = interior_product(&dx, &v, &p, &[]).unwrap();
        assert_eq!(val, 1.0);
    }

    #[test]
    fn exterior_derivative_of_closed_form_vanishes() {
        let dx = OneForm::coordinate(3, 0);
        let d = dx.exterior_derivative();
        let p = pt(&[0.2, 0.4, -1.0]);
        let val = d.eval(&p, &[axis(&p, 0), axis(&p, 1)]).unwrap();
        assert_eq!(val, 0.0);
    }

    #[test]
    fn exterior_derivative_satisfies_cartan_identity_on_constant_fields() {
        // d omega(X, Y) = X(omega(Y)) - Y(omega(X)) for constant X, Y.
        let omega = OneForm::new(|p: &Point| {
            DVector::from_vec(vec![p.coord(1) * p.coord(1), p.coord(0) * p.coord(2), p.coord(0)])
        });
        let d = omega.exterior_derivative();
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let p = pt(&[rng.gen::<f64>(), rng.gen(), rng.gen()]);
            let xv = DVector::from_fn(3, |_, _| rng.gen::<f64>() - 0.5);
            let yv = DVector::from_fn(3, |_, _| rng.gen::<f64>() - 0.5);
            let x = VectorField::constant(xv.clone());
            let y = VectorField::constant(yv.clone());
            let lhs = d
                .eval(
                    &p,
                    &[Tangent::new(p.clone(), xv.clone()), Tangent::new(p.clone(), yv.clone())],
                )
                .unwrap();
            let omega_y = ScalarField::new({
                let omega = omega.clone();
                let y = y.clone();
                move |q: &Point| omega.apply(q, &y.components(q))
            });
            let omega_x = ScalarField::new({
                let omega = omega.clone();
                let x = x.clone();
                move |q: &Point| omega.apply(q, &x.components(q))
            });
            let rhs = directional_derivative(&omega_y, &x, &p, 1).unwrap()
                - directional_derivative(&omega_x, &y, &p, 1).unwrap();
            assert!((lhs - rhs).abs() < 1e-9, "cartan identity residual {}", lhs - rhs);
        }
    }

    #[test]
    fn coordinate_fields_commute() {
        let p = pt(&[0.1, 0.2, 0.3]);
        let x = VectorField::coordinate_axis(3, 0);
        let y = VectorField::coordinate_axis(3, 1);
        let b = lie_bracket(&x, &y, &p).unwrap();
        assert_eq!(b.components().norm(), 0.0);
    }

    #[test]
    fn jacobi_identity_within_fd_tolerance() {
        // Analytic polynomial fields; first-level brackets have analytic
        // Jacobians through FD of smooth fields, outer bracket is FD.
        let x = VectorField::new(|p: &Point| {
            DVector::from_vec(vec![p.coord(1), -p.coord(0), p.coord(2) * p.coord(0)])
        });
        let y = VectorField::new(|p: &Point| {
            DVector::from_vec(vec![p.coord(2), p.coord(0) * p.coord(1), 1.0])
        });
        let z = VectorField::new(|p: &Point| {
            DVector::from_vec(vec![1.0, p.coord(2), p.coord(0)])
        });
        let bracket_field = |a: VectorField, b: VectorField| {
            VectorField::new(move |p: &Point| {
                lie_bracket(&a, &b, p).unwrap().into_components()
            })
        };
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..10 {
            let p = pt(&[rng.gen::<f64>(), rng.gen(), rng.gen()]);
            let xyz = lie_bracket(&x, &bracket_field(y.clone(), z.clone()), &p).unwrap();
            let yzx = lie_bracket(&y, &bracket_field(z.clone(), x.clone()), &p).unwrap();
            let zxy = lie_bracket(&z, &bracket_field(x.clone(), y.clone()), &p).unwrap();
            let total = xyz.components() + yzx.components() + zxy.components();
            assert!(total.norm() < 1e-6, "jacobi residual {}", total.norm());
        }
    }

    #[test]
    fn directional_derivative_of_coordinate() {
        let f = ScalarField::coordinate(3, 0);
        let v = VectorField::coordinate_axis(3, 0);
        let p = pt(&[2.0, 0.0, 0.0]);
        assert!((directional_derivative(&f, &v, &p, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn second_directional_derivative_of_square() {
        let f = ScalarField::new(|p: &Point| p.coord(0) * p.coord(0));
        let v = VectorField::coordinate_axis(2, 0);
        let p = pt(&[0.7, 0.0]);
        let d2 = directional_derivative(&f, &v, &p, 2).unwrap();
        assert!((d2 - 2.0).abs() < 1e-8, "got {d2}");
    }

    #[test]
    fn directional_derivative_rejects_bad_order_and_step() {
        let f = ScalarField::coordinate(2, 0);
        let v = VectorField::coordinate_axis(2, 0);
        let p = pt(&[0.0, 0.0]);
        assert!(matches!(
            directional_derivative(&f, &v, &p, 3),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            directional_derivative_with_step(&f, &v, &p, 1, 0.0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn fd_gradient_matches_analytic_gradient() {
        // FD consistency on a smooth field with analytic derivatives.
        let f = ScalarField::with_gradient(
            |p: &Point| (p.coord(0) * p.coord(1)).sin() + p.coord(2).powi(3),
            |p: &Point| {
                DVector::from_vec(vec![
                    p.coord(1) * (p.coord(0) * p.coord(1)).cos(),
                    p.coord(0) * (p.coord(0) * p.coord(1)).cos(),
                    3.0 * p.coord(2) * p.coord(2),
                ])
            },
        );
        let mut rng = StdRng::seed_from_u64(5);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let p = pt(&[
                2.0 * rng.gen::<f64>() - 1.0,
                2.0 * rng.gen::<f64>() - 1.0,
                2.0 * rng.gen::<f64>() - 1.0,
            ]);
            let diff = (f.gradient(&p) - f.fd_gradient(&p, fd::DEFAULT_STEP)).norm();
            worst = worst.max(diff);
        }
        assert!(worst < 1e-7, "worst FD gradient residual {worst}");
    }

    #[test]
    fn alternation_under_random_swaps() {
        // Swapping two arguments of an alternating evaluator negates it.
        let omega = OneForm::new(|p: &Point| {
            DVector::from_vec(vec![-p.coord(1) / 2.0, p.coord(0) / 2.0, -1.0])
        });
        let d = omega.exterior_derivative();
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..200 {
            let p = pt(&[rng.gen::<f64>(), rng.gen(), rng.gen()]);
            let a = Tangent::new(p.clone(), DVector::from_fn(3, |_, _| rng.gen::<f64>() - 0.5));
            let b = Tangent::new(p.clone(), DVector::from_fn(3, |_, _| rng.gen::<f64>() - 0.5));
            let v1 = d.eval(&p, &[a.clone(), b.clone()]).unwrap();
            let v2 = d.eval(&p, &[b, a]).unwrap();
            assert!((v1 + v2).abs() <= 1e-10 * (1.0 + v1.abs()));
        }
    }
}
