//! Discretized integral update, its time derivative, lambda-sensitivities and a general
//! differentiation-under-the-integral utility.
//!
//! All past-history sums are left-Riemann sums over stored contributions, evaluated in
//! the order given (callers pass entries in time order, which fixes the rounding).

use crate::buffer::BufferEntry;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::model::ParamVector;

/// A stored `(tau, g(tau))` pair taking part in a history integral.
pub trait Contribution {
    fn tau(&self) -> f64;
    fn direction(&self) -> &[f64];
}

impl Contribution for BufferEntry {
    fn tau(&self) -> f64 {
        self.tau
    }
    fn direction(&self) -> &[f64] {
        &self.grad
    }
}

impl Contribution for (f64, Vec<f64>) {
    fn tau(&self) -> f64 {
        self.0
    }
    fn direction(&self) -> &[f64] {
        &self.1
    }
}

impl<C: Contribution + ?Sized> Contribution for &C {
    fn tau(&self) -> f64 {
        (**self).tau()
    }
    fn direction(&self) -> &[f64] {
        (**self).direction()
    }
}

fn weighted_sum<I, C>(
    dim: usize,
    entries: I,
    t: f64,
    dt: f64,
    weight: impl Fn(f64, f64) -> Result<f64>,
) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = C>,
    C: Contribution,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mut acc = vec![0.0; dim];
    for e in entries {
        let tau = e.tau();
        if tau > t {
            return Err(Error::Domain(format!("entry at tau={tau} lies after t={t}")));
        }
        let g = e.direction();
        if g.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: g.len(),
            });
        }
        let w = weight(t, tau)? * dt;
        for (a, gi) in acc.iter_mut().zip(g) {
            *a += w * gi;
        }
    }
    Ok(acc)
}

/// `theta0 + Σ_i K(t, tau_i) g_i dt`.
pub fn accumulate<I, C>(
    theta0: &[f64],
    entries: I,
    kernel: &KernelSpec,
    t: f64,
    dt: f64,
) -> Result<ParamVector>
where
    I: IntoIterator<Item = C>,
    C: Contribution,
{
    let sum = weighted_sum(theta0.len(), entries, t, dt, |t, tau| kernel.eval(t, tau))?;
    Ok(theta0.iter().zip(sum).map(|(a, b)| a + b).collect::<Vec<_>>().into())
}

/// Right-hand side `dtheta/dt = Σ_i ∂K/∂t(t, tau_i) g_i dt + K(t, t) g_current(theta)`.
///
/// `current` maps the present parameters to the stored-direction of the sample being
/// absorbed; pass `None` when no sample is active.
pub fn ode_rhs<I, C, F>(
    t: f64,
    theta: &[f64],
    entries: I,
    kernel: &KernelSpec,
    dt: f64,
    current: Option<F>,
) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = C>,
    C: Contribution,
    F: FnOnce(&[f64]) -> Result<Vec<f64>>,
{
    let mut rhs = weighted_sum(theta.len(), entries, t, dt, |t, tau| kernel.d_dt(t, tau))?;
    if let Some(current) = current {
        let g = current(theta)?;
        if g.len() != theta.len() {
            return Err(Error::DimensionMismatch {
                expected: theta.len(),
                got: g.len(),
            });
        }
        let k = kernel.eval(t, t)?;
        for (r, gi) in rhs.iter_mut().zip(&g) {
            *r += k * gi;
        }
    }
    Ok(rhs)
}

/// `d theta(t) / d lambda = Σ_i ∂K/∂lambda(t, tau_i) g_i dt` with the gradient path frozen.
pub fn sensitivity_lambda<I, C>(
    dim: usize,
    entries: I,
    kernel: &KernelSpec,
    t: f64,
    dt: f64,
) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = C>,
    C: Contribution,
{
    weighted_sum(dim, entries, t, dt, |t, tau| kernel.d_dlambda(t, tau))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadratureRule {
    LeftRiemann,
    Trapezoid,
}

/// Strictly increasing abscissae plus the rule used to integrate over them.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureGrid {
    points: Vec<f64>,
    rule: QuadratureRule,
}

impl QuadratureGrid {
    pub fn new(points: Vec<f64>, rule: QuadratureRule) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("quadrature grid needs at least one point".into()));
        }
        if points.iter().any(|p| !p.is_finite()) || points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "quadrature grid must be finite and strictly increasing".into(),
            ));
        }
        Ok(QuadratureGrid { points, rule })
    }

    /// `n` equally spaced points on `[a, b]` (endpoints included).
    pub fn uniform(a: f64, b: f64, n: usize, rule: QuadratureRule) -> Result<Self> {
        if n == 1 || a == b {
            return Self::new(vec![a], rule);
        }
        if n == 0 || !(b > a) {
            return Err(Error::InvalidArgument(format!(
                "uniform grid needs n >= 1 and a < b, got n={n}, [{a}, {b}]"
            )));
        }
        let h = (b - a) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| a + i as f64 * h).collect();
        points[n - 1] = b;
        Self::new(points, rule)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn rule(&self) -> QuadratureRule {
        self.rule
    }

    /// Integral of `f` over `[a, b]`, using the grid points inside the interval plus the
    /// two endpoints. The grid must cover `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
        let first = self.points[0];
        let last = self.points[self.points.len() - 1];
        let tol = 1e-12 * (1.0 + a.abs().max(b.abs()));
        if b < a || first > a + tol || last < b - tol {
            return Err(Error::InvalidArgument(format!(
                "grid [{first}, {last}] does not cover [{a}, {b}]"
            )));
        }
        let mut xs = Vec::with_capacity(self.points.len() + 2);
        xs.push(a);
        xs.extend(self.points.iter().copied().filter(|&p| p > a + tol && p < b - tol));
        if b > a {
            xs.push(b);
        }
        let mut total = 0.0;
        let mut f_prev = f(xs[0]);
        for w in xs.windows(2) {
            let f_next = f(w[1]);
            let h = w[1] - w[0];
            total += match self.rule {
                QuadratureRule::LeftRiemann => f_prev * h,
                QuadratureRule::Trapezoid => 0.5 * (f_prev + f_next) * h,
            };
            f_prev = f_next;
        }
        Ok(total)
    }
}

type Scalar2 = Box<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type Scalar1 = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// `d/dlambda ∫_{a(lambda)}^{b(lambda)} f(x, lambda) dx`, described by its pieces.
pub struct LeibnizProblem {
    pub integrand: Scalar2,
    pub integrand_dlambda: Scalar2,
    pub lower: Scalar1,
    pub upper: Scalar1,
    pub lower_dlambda: Scalar1,
    pub upper_dlambda: Scalar1,
}

impl LeibnizProblem {
    /// Fixed limits `[a, b]`.
    pub fn fixed_limits(
        a: f64,
        b: f64,
        integrand: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        integrand_dlambda: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        LeibnizProblem {
            integrand: Box::new(integrand),
            integrand_dlambda: Box::new(integrand_dlambda),
            lower: Box::new(move |_| a),
            upper: Box::new(move |_| b),
            lower_dlambda: Box::new(|_| 0.0),
            upper_dlambda: Box::new(|_| 0.0),
        }
    }

    /// `∫ f(x, lambda) dx` over the current limits, with the same quadrature.
    pub fn integral(&self, lambda: f64, grid: &QuadratureGrid) -> Result<f64> {
        let (a, b) = ((self.lower)(lambda), (self.upper)(lambda));
        grid.integrate(a, b, |x| (self.integrand)(x, lambda))
    }
}

/// `f(b, λ) b'(λ) − f(a, λ) a'(λ) + ∫_a^b ∂f/∂λ dx`.
pub fn leibniz_derivative(problem: &LeibnizProblem, lambda: f64, grid: &QuadratureGrid) -> Result<f64> {
    let a = (problem.lower)(lambda);
    let b = (problem.upper)(lambda);
    if b < a {
        return Err(Error::Domain(format!("upper limit {b} below lower limit {a}")));
    }
    let boundary = (problem.integrand)(b, lambda) * (problem.upper_dlambda)(lambda)
        - (problem.integrand)(a, lambda) * (problem.lower_dlambda)(lambda);
    let interior = grid.integrate(a, b, |x| (problem.integrand_dlambda)(x, lambda))?;
    Ok(boundary + interior)
}

/// Upper limit at which `exp(-lambda * x)` drops below 1e-12, rounded up.
pub fn feynman_truncation(lambda: f64) -> f64 {
    (1e12f64.ln() / lambda) * 1.0001
}

/// Trapezoid estimates of `I(λ) = ∫_0^∞ e^{-λx} sin x dx` and
/// `dI/dλ = -∫_0^∞ x e^{-λx} sin x dx`, truncated at `x_max`.
pub fn feynman_example(lambda: f64, x_max: f64, n_points: usize) -> Result<(f64, f64)> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if n_points < 2 {
        return Err(Error::InvalidArgument("need at least two quadrature points".into()));
    }
    if !((-lambda * x_max).exp() < 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "x_max={x_max} too small for lambda={lambda}: exp(-lambda*x_max) must be < 1e-12"
        )));
    }
    let grid = QuadratureGrid::uniform(0.0, x_max, n_points, QuadratureRule::Trapezoid)?;
    let integral = grid.integrate(0.0, x_max, |x| (-lambda * x).exp() * x.sin())?;
    let derivative = grid.integrate(0.0, x_max, |x| -x * (-lambda * x).exp() * x.sin())?;
    Ok((integral, derivative))
}
