//! Smooth spatial fields, compactly supported test functions, pairings by
//! quadrature, and mollification.
//!
//! Generalized functions never appear as first-class values: everything is
//! manipulated through pairings (v, phi) against smooth compactly supported
//! test functions, evaluated with tensor-product Gauss-Legendre rules on the
//! support box. Shifted pairings (v, phi(. - x)) are integrated in the frame
//! of phi, so one set of quadrature nodes serves every shift.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Where a field may be nonzero.
#[derive(Debug, Clone)]
pub enum Support {
    All,
    Ball { center: Vec<f64>, radius: f64 },
}

type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>;
type HessFn = Arc<dyn Fn(usize, usize, &[f64]) -> f64 + Send + Sync>;

/// An evaluable function of x with analytic partial derivatives up to a
/// declared order. Evaluation is pure; fields are cheap to clone.
#[derive(Clone)]
pub struct SpatialField {
    dim: usize,
    order: usize,
    support: Support,
    value: ValueFn,
    grad: Option<GradFn>,
    hess: Option<HessFn>,
}

impl std::fmt::Debug for SpatialField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpatialField")
            .field("dim", &self.dim)
            .field("order", &self.order)
            .finish()
    }
}

impl SpatialField {
    pub fn new(dim: usize, value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        SpatialField {
            dim,
            order: 0,
            support: Support::All,
            value: Arc::new(value),
            grad: None,
            hess: None,
        }
    }

    pub fn with_gradient(
        mut self,
        grad: impl Fn(usize, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.grad = Some(Arc::new(grad));
        self.order = self.order.max(1);
        self
    }

    pub fn with_hessian(
        mut self,
        hess: impl Fn(usize, usize, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.hess = Some(Arc::new(hess));
        self.order = self.order.max(2);
        self
    }

    pub fn with_support(mut self, support: Support) -> Self {
        self.support = support;
        self
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        SpatialField::new(dim, move |_| c)
            .with_gradient(|_, _| 0.0)
            .with_hessian(|_, _, _| 0.0)
    }

    pub fn zero(dim: usize) -> Self {
        Self::constant(dim, 0.0)
    }

    /// alpha * f + beta * g, with derivatives where both operands have them.
    pub fn linear_combination(alpha: f64, f: &SpatialField, beta: f64, g: &SpatialField) -> Self {
        assert_eq!(f.dim, g.dim, "dimension mismatch in linear combination");
        let (fv, gv) = (f.value.clone(), g.value.clone());
        let mut out = SpatialField::new(f.dim, move |x| alpha * fv(x) + beta * gv(x));
        if let (Some(fg), Some(gg)) = (f.grad.clone(), g.grad.clone()) {
            out = out.with_gradient(move |i, x| alpha * fg(i, x) + beta * gg(i, x));
        }
        if let (Some(fh), Some(gh)) = (f.hess.clone(), g.hess.clone()) {
            out = out.with_hessian(move |i, j, x| alpha * fh(i, j, x) + beta * gh(i, j, x));
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        (self.value)(x)
    }

    pub fn d1(&self, i: usize, x: &[f64]) -> Result<f64> {
        match &self.grad {
            Some(g) => Ok(g(i, x)),
            None => Err(Error::Capability(
                "field does not carry first derivatives".into(),
            )),
        }
    }

    pub fn d2(&self, i: usize, j: usize, x: &[f64]) -> Result<f64> {
        match &self.hess {
            Some(h) => Ok(h(i, j, x)),
            None => Err(Error::Capability(
                "field does not carry second derivatives".into(),
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// The classical radial bump profile e^{-1/(1-q)}, q = |u|^2.
// ---------------------------------------------------------------------------

// Below this distance from the support boundary the profile has decayed
// past 1e-400; evaluating the rational prefactors there would overflow.
const Q_GUARD: f64 = 1e-12;

#[inline]
fn profile(q: f64) -> f64 {
    let s = 1.0 - q;
    if s <= Q_GUARD {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}

/// dE/dq for E(q) = e^{-1/(1-q)}.
#[inline]
fn profile_d1(q: f64) -> f64 {
    let s = 1.0 - q;
    if s <= Q_GUARD {
        0.0
    } else {
        -(-1.0 / s).exp() / (s * s)
    }
}

#[inline]
fn profile_d2(q: f64) -> f64 {
    let s = 1.0 - q;
    if s <= Q_GUARD {
        0.0
    } else {
        (-1.0 / s).exp() * (1.0 / (s * s * s * s) - 2.0 / (s * s * s))
    }
}

/// A compactly supported smooth bump: amplitude * e^{-1/(1 - |(x-c)/r|^2)}
/// inside the ball B_r(c), identically zero outside.
#[derive(Debug, Clone)]
pub struct TestFunction {
    center: Vec<f64>,
    radius: f64,
    amplitude: f64,
}

impl TestFunction {
    pub fn bump(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::InvalidArgument("test function needs dim >= 1".into()));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "test function radius must be positive, got {radius}"
            )));
        }
        Ok(TestFunction {
            center,
            radius,
            amplitude: 1.0,
        })
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    #[inline]
    fn local_q(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut q = 0.0;
        let mut u = Vec::with_capacity(self.center.len());
        for (xi, ci) in x.iter().zip(self.center.iter()) {
            let ui = (xi - ci) / self.radius;
            q += ui * ui;
            u.push(ui);
        }
        (q, u)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let (q, _) = self.local_q(x);
        self.amplitude * profile(q)
    }

    pub fn d1(&self, i: usize, x: &[f64]) -> f64 {
        let (q, u) = self.local_q(x);
        self.amplitude * profile_d1(q) * 2.0 * u[i] / self.radius
    }

    pub fn d2(&self, i: usize, j: usize, x: &[f64]) -> f64 {
        let (q, u) = self.local_q(x);
        let r = self.radius;
        let mut out = profile_d2(q) * 4.0 * u[i] * u[j] / (r * r);
        if i == j {
            out += profile_d1(q) * 2.0 / (r * r);
        }
        self.amplitude * out
    }

    pub fn as_field(&self) -> SpatialField {
        let (a, b, c) = (self.clone(), self.clone(), self.clone());
        SpatialField::new(self.dim(), move |x| a.value(x))
            .with_gradient(move |i, x| b.d1(i, x))
            .with_hessian(move |i, j, x| c.d2(i, j, x))
            .with_support(Support::Ball {
                center: self.center.clone(),
                radius: self.radius,
            })
    }
}

/// A bump centered at the origin, rescaled to unit integral: nonnegative,
/// radially symmetric, support in the ball of radius gamma.
#[derive(Debug, Clone)]
pub struct MollifierKernel {
    bump: TestFunction,
}

// Quadrature resolution used to normalize kernels and to evaluate
// convolutions; generous for C-infinity integrands.
const KERNEL_QUAD_POINTS: usize = 96;

impl MollifierKernel {
    pub fn new(dim: usize, gamma: f64) -> Result<Self> {
        let raw = TestFunction::bump(vec![0.0; dim], gamma)?;
        let rule = QuadratureRule::for_ball(&vec![0.0; dim], gamma, KERNEL_QUAD_POINTS)?;
        let mass = rule.integrate(|x| raw.value(x));
        if !(mass > 0.0) {
            return Err(Error::Numeric("kernel has nonpositive mass".into()));
        }
        Ok(MollifierKernel {
            bump: raw.with_amplitude(1.0 / mass),
        })
    }

    pub fn dim(&self) -> usize {
        self.bump.dim()
    }

    pub fn gamma(&self) -> f64 {
        self.bump.radius()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.bump.value(x)
    }

    pub fn d1(&self, i: usize, x: &[f64]) -> f64 {
        self.bump.d1(i, x)
    }

    pub fn d2(&self, i: usize, j: usize, x: &[f64]) -> f64 {
        self.bump.d2(i, j, x)
    }

    pub fn as_test_function(&self) -> &TestFunction {
        &self.bump
    }

    /// Same profile on a different support radius, re-normalized.
    pub fn rescaled(&self, gamma: f64) -> Result<Self> {
        MollifierKernel::new(self.dim(), gamma)
    }

    /// Second moment along one axis, int y_i^2 zeta(y) dy (any axis, by
    /// radial symmetry).
    pub fn second_moment(&self) -> Result<f64> {
        let rule = QuadratureRule::for_ball(
            &vec![0.0; self.dim()],
            self.gamma(),
            KERNEL_QUAD_POINTS,
        )?;
        Ok(rule.integrate(|y| y[0] * y[0] * self.value(y)))
    }
}

// ---------------------------------------------------------------------------
// Tensor-product Gauss-Legendre quadrature.
// ---------------------------------------------------------------------------

/// Legendre P_m and its derivative at x, by the three-term recurrence.
fn legendre_eval(m: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 1..m {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
    }
    let dp = m as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
fn legendre_rule(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    if m == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_eval(m, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_eval(m, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

/// Tensor-product Gauss-Legendre rule on an axis-aligned box.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    lo: Vec<f64>,
    hi: Vec<f64>,
    per_axis: usize,
    /// Flattened node coordinates, count * dim.
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn gauss_legendre(lo: Vec<f64>, hi: Vec<f64>, per_axis: usize) -> Result<Self> {
        let dim = lo.len();
        if dim == 0 || dim != hi.len() {
            return Err(Error::InvalidArgument("quadrature box dims mismatch".into()));
        }
        if per_axis == 0 {
            return Err(Error::InvalidArgument(
                "quadrature needs at least one node per axis".into(),
            ));
        }
        for a in 0..dim {
            if !(lo[a] < hi[a]) {
                return Err(Error::InvalidArgument(format!(
                    "degenerate quadrature box on axis {a}: [{}, {}]",
                    lo[a], hi[a]
                )));
            }
        }
        let (ref_nodes, ref_weights) = legendre_rule(per_axis);
        let count = per_axis.pow(dim as u32);
        let mut nodes = Vec::with_capacity(count * dim);
        let mut weights = Vec::with_capacity(count);
        let mut idx = vec![0usize; dim];
        for _ in 0..count {
            let mut w = 1.0;
            for a in 0..dim {
                let half = 0.5 * (hi[a] - lo[a]);
                let mid = 0.5 * (hi[a] + lo[a]);
                nodes.push(mid + half * ref_nodes[idx[a]]);
                w *= half * ref_weights[idx[a]];
            }
            weights.push(w);
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < per_axis {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(QuadratureRule {
            lo,
            hi,
            per_axis,
            nodes,
            weights,
        })
    }

    /// Rule on the bounding box of a ball.
    pub fn for_ball(center: &[f64], radius: f64, per_axis: usize) -> Result<Self> {
        let lo = center.iter().map(|c| c - radius).collect();
        let hi = center.iter().map(|c| c + radius).collect();
        QuadratureRule::gauss_legendre(lo, hi, per_axis)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    pub fn node(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.nodes[j * d..(j + 1) * d]
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.len() {
            acc += self.weights[j] * f(self.node(j));
        }
        acc
    }

    /// Same box with `factor` times as many nodes per axis.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        QuadratureRule::gauss_legendre(self.lo.clone(), self.hi.clone(), self.per_axis * factor)
    }

    fn contains_ball(&self, center: &[f64], radius: f64) -> bool {
        let tol = 1e-9;
        center.iter().enumerate().all(|(a, c)| {
            let span = self.hi[a] - self.lo[a];
            c - radius >= self.lo[a] - tol * span && c + radius <= self.hi[a] + tol * span
        })
    }
}

// ---------------------------------------------------------------------------
// Pairings.
// ---------------------------------------------------------------------------

pub(crate) fn check_support(phi: &TestFunction, q: &QuadratureRule) -> Result<()> {
    if phi.dim() != q.dim() {
        return Err(Error::InvalidArgument(format!(
            "test function dim {} vs quadrature dim {}",
            phi.dim(),
            q.dim()
        )));
    }
    if !q.contains_ball(phi.center(), phi.radius()) {
        return Err(Error::Domain(
            "test function support escapes the quadrature box".into(),
        ));
    }
    Ok(())
}

/// The pairing (v, phi) = int v(x) phi(x) dx by quadrature over the box.
pub fn pair(v: &SpatialField, phi: &TestFunction, q: &QuadratureRule) -> Result<f64> {
    check_support(phi, q)?;
    let mut acc = 0.0;
    for j in 0..q.len() {
        let x = q.node(j);
        let vx = v.value(x);
        if !vx.is_finite() {
            return Err(Error::Numeric(format!("field value {vx} at {x:?}")));
        }
        acc += q.weight(j) * vx * phi.value(x);
    }
    Ok(acc)
}

/// The shifted pairing (v, phi(. - x)) = int v(z + x) phi(z) dz, integrated
/// in the frame of phi so the same nodes serve every shift. Its derivative
/// in x equals minus the pairing against the shifted derivative of phi,
/// with sign (-1)^n for order n.
pub fn shifted_pair(v: &SpatialField, phi: &TestFunction, x: &[f64], q: &QuadratureRule) -> Result<f64> {
    check_support(phi, q)?;
    if x.len() != phi.dim() {
        return Err(Error::InvalidArgument(format!(
            "shift dim {} vs field dim {}",
            x.len(),
            phi.dim()
        )));
    }
    let d = q.dim();
    let mut y = vec![0.0; d];
    let mut acc = 0.0;
    for j in 0..q.len() {
        let z = q.node(j);
        for a in 0..d {
            y[a] = z[a] + x[a];
        }
        let vy = v.value(&y);
        if !vy.is_finite() {
            return Err(Error::Numeric(format!("field value {vy} at {y:?}")));
        }
        acc += q.weight(j) * vy * phi.value(z);
    }
    Ok(acc)
}

/// Convolution with the scaled kernel: x -> int v(x - eps z) zeta(z) dz.
/// Derivatives are taken under the integral, so they are available exactly
/// when v carries them.
pub fn mollify(v: &SpatialField, kernel: &MollifierKernel, eps: f64) -> Result<SpatialField> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "mollification width must be positive, got {eps}"
        )));
    }
    if v.dim() != kernel.dim() {
        return Err(Error::InvalidArgument(
            "field and kernel dimension mismatch".into(),
        ));
    }
    let d = v.dim();
    let rule = QuadratureRule::for_ball(&vec![0.0; d], kernel.gamma(), KERNEL_QUAD_POINTS)?;
    // Kernel values at the nodes are shift-independent; cache them once.
    let mut kernel_w = Vec::with_capacity(rule.len());
    for j in 0..rule.len() {
        kernel_w.push(rule.weight(j) * kernel.value(rule.node(j)));
    }
    let kernel_w = Arc::new(kernel_w);
    let rule = Arc::new(rule);

    let conv = |point_eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>| {
        let rule = rule.clone();
        let kernel_w = kernel_w.clone();
        move |x: &[f64]| {
            let mut y = vec![0.0; d];
            let mut acc = 0.0;
            for j in 0..rule.len() {
                let z = rule.node(j);
                for a in 0..d {
                    y[a] = x[a] - eps * z[a];
                }
                acc += kernel_w[j] * point_eval(&y);
            }
            acc
        }
    };

    let base: ValueFn = v.value.clone();
    let mut out = SpatialField::new(d, conv(base));
    if let Some(g) = v.grad.clone() {
        let rule_g = rule.clone();
        let kw = kernel_w.clone();
        out = out.with_gradient(move |i, x| {
            let mut y = vec![0.0; d];
            let mut acc = 0.0;
            for j in 0..rule_g.len() {
                let z = rule_g.node(j);
                for a in 0..d {
                    y[a] = x[a] - eps * z[a];
                }
                acc += kw[j] * g(i, &y);
            }
            acc
        });
    }
    if let Some(h) = v.hess.clone() {
        let rule_h = rule.clone();
        let kw = kernel_w.clone();
        out = out.with_hessian(move |i, jn, x| {
            let mut y = vec![0.0; d];
            let mut acc = 0.0;
            for j in 0..rule_h.len() {
                let z = rule_h.node(j);
                for a in 0..d {
                    y[a] = x[a] - eps * z[a];
                }
                acc += kw[j] * h(i, jn, &y);
            }
            acc
        });
    }
    let support = match v.support() {
        Support::All => Support::All,
        Support::Ball { center, radius } => Support::Ball {
            center: center.clone(),
            radius: radius + eps * kernel.gamma(),
        },
    };
    Ok(out.with_support(support))
}

// ---------------------------------------------------------------------------
// Class-membership diagnostic.
// ---------------------------------------------------------------------------

/// Uniform lattice on the centered ball of radius R (tensor lattice on the
/// box, filtered to the ball for d >= 2).
pub fn ball_lattice(dim: usize, radius: f64, per_axis: usize) -> Vec<Vec<f64>> {
    assert!(per_axis >= 2);
    let mut pts = Vec::new();
    let mut idx = vec![0usize; dim];
    let count = per_axis.pow(dim as u32);
    for _ in 0..count {
        let p: Vec<f64> = idx
            .iter()
            .map(|&i| -radius + 2.0 * radius * i as f64 / (per_axis - 1) as f64)
            .collect();
        let norm_sq: f64 = p.iter().map(|c| c * c).sum();
        if norm_sq <= radius * radius * (1.0 + 1e-12) {
            pts.push(p);
        }
        for a in (0..dim).rev() {
            idx[a] += 1;
            if idx[a] < per_axis {
                break;
            }
            idx[a] = 0;
        }
    }
    pts
}

/// Grid approximation of the membership quantity
/// int_0^T sup_{|x| <= R} |(u_t, phi(. - x))|^p dt:
/// left-point time sum of the lattice sup of |pairing|^p.
///
/// `pairings[i][j]` holds (u_{t_i}, phi(. - x_j)) for time node i and
/// lattice point j.
pub fn class_membership_diagnostic(pairings: &[Vec<f64>], dt: f64, p: u32) -> Result<f64> {
    if p != 1 && p != 2 {
        return Err(Error::Capability(format!(
            "membership diagnostic supports p = 1 or 2, got {p}"
        )));
    }
    let mut acc = 0.0;
    for row in pairings {
        let mut sup = 0.0f64;
        for &v in row {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite pairing value {v}")));
            }
            sup = sup.max(v.abs());
        }
        acc += dt * if p == 1 { sup } else { sup * sup };
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Finite-difference oracle for declared derivatives.
// ---------------------------------------------------------------------------

/// Check the declared analytic derivatives of a field against central
/// finite differences at the given points: the FD error must shrink at
/// second order when h halves (ratio near 4), unless the derivative is
/// exact to rounding at both step sizes.
pub fn check_derivatives(field: &SpatialField, points: &[Vec<f64>], h: f64) -> Result<()> {
    let d = field.dim();
    let scale_tol = |v: f64| 1e-7 * (1.0 + v.abs());
    for x in points {
        if field.order() >= 1 {
            for i in 0..d {
                let exact = field.d1(i, x)?;
                let e1 = (fd1(field, i, x, h) - exact).abs();
                let e2 = (fd1(field, i, x, h / 2.0) - exact).abs();
                if e1 <= scale_tol(exact) && e2 <= scale_tol(exact) {
                    continue; // exact to rounding at both steps
                }
                if e2 > e1 / 2.5 {
                    return Err(Error::Numeric(format!(
                        "first derivative {i} fails FD oracle at {x:?}: errors {e1}, {e2}"
                    )));
                }
            }
        }
        if field.order() >= 2 {
            for i in 0..d {
                for j in 0..d {
                    let exact = field.d2(i, j, x)?;
                    let e1 = (fd2(field, i, j, x, h) - exact).abs();
                    let e2 = (fd2(field, i, j, x, h / 2.0) - exact).abs();
                    if e1 <= scale_tol(exact) && e2 <= scale_tol(exact) {
                        continue;
                    }
                    if e2 > e1 / 2.5 {
                        return Err(Error::Numeric(format!(
                            "second derivative ({i},{j}) fails FD oracle at {x:?}: errors {e1}, {e2}"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

fn fd1(field: &SpatialField, i: usize, x: &[f64], h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (field.value(&xp) - field.value(&xm)) / (2.0 * h)
}

fn fd2(field: &SpatialField, i: usize, j: usize, x: &[f64], h: f64) -> f64 {
    if i == j {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        (field.value(&xp) - 2.0 * field.value(x) + field.value(&xm)) / (h * h)
    } else {
        let mut xpp = x.to_vec();
        let mut xpm = x.to_vec();
        let mut xmp = x.to_vec();
        let mut xmm = x.to_vec();
        xpp[i] += h;
        xpp[j] += h;
        xpm[i] += h;
        xpm[j] -= h;
        xmp[i] -= h;
        xmp[j] += h;
        xmm[i] -= h;
        xmm[j] -= h;
        (field.value(&xpp) - field.value(&xpm) - field.value(&xmp) + field.value(&xmm))
            / (4.0 * h * h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_bump() -> TestFunction {
        TestFunction::bump(vec![0.0], 1.0).unwrap()
    }

    #[test]
    fn gauss_legendre_is_exact_on_polynomials() {
        // m nodes integrate polynomials up to degree 2m - 1.
        let q = QuadratureRule::gauss_legendre(vec![0.0], vec![2.0], 4).unwrap();
        let got = q.integrate(|x| x[0].powi(7));
        let want = 2.0f64.powi(8) / 8.0;
        assert!((got - want).abs() <= 1e-12 * want.abs(), "{got} vs {want}");
    }

    #[test]
    fn node_doubling_is_stable_on_smooth_integrands() {
        let q = QuadratureRule::gauss_legendre(vec![-1.0], vec![1.0], 32).unwrap();
        let fine = q.refined(2).unwrap();
        let a = q.integrate(|x| (-x[0] * x[0]).exp());
        let b = fine.integrate(|x| (-x[0] * x[0]).exp());
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn gauss_legendre_2d_separates() {
        let q = QuadratureRule::gauss_legendre(vec![0.0, 0.0], vec![1.0, 2.0], 8).unwrap();
        let got = q.integrate(|x| x[0] * x[1]);
        assert!((got - 0.5 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn pair_constant_against_unit_mass() {
        let kernel = MollifierKernel::new(1, 1.0).unwrap();
        let q = QuadratureRule::for_ball(&[0.0], 1.0, 64).unwrap();
        let v = SpatialField::constant(1, 3.25);
        let got = pair(&v, kernel.as_test_function(), &q).unwrap();
        assert!((got - 3.25).abs() < 1e-8, "{got}");
    }

    #[test]
    fn pair_odd_field_even_bump_vanishes() {
        let q = QuadratureRule::for_ball(&[0.0], 1.0, 64).unwrap();
        let v = SpatialField::new(1, |x| x[0]);
        let got = pair(&v, &unit_bump(), &q).unwrap();
        assert!(got.abs() < 1e-14, "{got}");
    }

    #[test]
    fn pair_matches_finer_reference() {
        let q = QuadratureRule::for_ball(&[0.0], 1.0, 64).unwrap();
        let reference = q.refined(10).unwrap();
        let v = SpatialField::new(1, |x| (-x[0] * x[0]).exp());
        let phi = unit_bump();
        let got = pair(&v, &phi, &q).unwrap();
        let want = pair(&v, &phi, &reference).unwrap();
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }

    #[test]
    fn pair_rejects_escaping_support() {
        let q = QuadratureRule::gauss_legendre(vec![-0.5], vec![0.5], 16).unwrap();
        let v = SpatialField::constant(1, 1.0);
        assert!(matches!(
            pair(&v, &unit_bump(), &q),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn pair_rejects_non_finite_values() {
        let q = QuadratureRule::for_ball(&[0.0], 1.0, 8).unwrap();
        let v = SpatialField::new(1, |_| f64::NAN);
        assert!(matches!(
            pair(&v, &unit_bump(), &q),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn pair_is_linear_in_the_field() {
        let q = QuadratureRule::for_ball(&[0.0], 1.0, 64).unwrap();
        let phi = unit_bump();
        let u = SpatialField::new(1, |x| x[0] * x[0]);
        let v = SpatialField::new(1, |x| (1.3 * x[0]).sin());
        let combo = SpatialField::linear_combination(2.5, &u, -0.75, &v);
        let got = pair(&combo, &phi, &q).unwrap();
        let want = 2.5 * pair(&u, &phi, &q).unwrap() - 0.75 * pair(&v, &phi, &q).unwrap();
        assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn shifted_pair_of_constant_is_shift_invariant() {
        let q = QuadratureRule::for_ball(&[0.0], 1.0, 64).unwrap();
        let phi = unit_bump();
        let v = SpatialField::constant(1, 1.0);
        let base = pair(&v, &phi, &q).unwrap();
        for x in [-2.0, -0.3, 0.9, 4.7] {
            let got = shifted_pair(&v, &phi, &[x], &q).unwrap();
            assert!((got - base).abs() < 1e-14);
        }
    }

    #[test]
    fn shifted_pair_at_zero_equals_pair() {
        let q = QuadratureRule::for_ball(&[0.0], 1.0, 64).unwrap();
        let phi = unit_bump();
        let v = SpatialField::new(1, |x| (x[0] + 0.2).cos());
        let a = pair(&v, &phi, &q).unwrap();
        let b = shifted_pair(&v, &phi, &[0.0], &q).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shift_derivative_transfers_to_the_test_function() {
        // d/dx (v, phi(. - x)) = -(v, (D phi)(. - x)); central differences
        // of the left side converge at second order to the right side.
        let q = QuadratureRule::for_ball(&[0.0], 1.0, 64).unwrap();
        let phi = unit_bump();
        let v = SpatialField::new(1, |x| (-0.5 * x[0] * x[0]).exp());
        let x = [0.37];
        let dphi = |z: &[f64]| phi.d1(0, z);
        let analytic = -q.integrate(|z| {
            let y = [z[0] + x[0]];
            v.value(&y) * dphi(z)
        });
        let fd = |h: f64| {
            let p = shifted_pair(&v, &phi, &[x[0] + h], &q).unwrap();
            let m = shifted_pair(&v, &phi, &[x[0] - h], &q).unwrap();
            (p - m) / (2.0 * h)
        };
        let e1 = (fd(0.02) - analytic).abs();
        let e2 = (fd(0.01) - analytic).abs();
        let ratio = e1 / e2;
        assert!(
            (3.0..5.0).contains(&ratio),
            "FD ratio {ratio} (errors {e1}, {e2})"
        );
    }

    #[test]
    fn mollify_preserves_constants() {
        let kernel = MollifierKernel::new(1, 1.0).unwrap();
        let v = SpatialField::constant(1, 4.0);
        for eps in [0.5, 0.25, 0.125] {
            let m = mollify(&v, &kernel, eps).unwrap();
            assert!((m.value(&[0.7]) - 4.0).abs() < 1e-10);
        }
    }

    #[test]
    fn mollify_preserves_linear_fields() {
        // Radial symmetry kills the first moment of the kernel.
        let kernel = MollifierKernel::new(1, 1.0).unwrap();
        let v = SpatialField::new(1, |x| x[0]);
        let m = mollify(&v, &kernel, 0.25).unwrap();
        for x in [-1.0, 0.0, 0.6] {
            assert!((m.value(&[x]) - x).abs() < 1e-12, "at {x}");
        }
    }

    #[test]
    fn mollify_shifts_quadratics_by_second_moment() {
        let kernel = MollifierKernel::new(1, 1.0).unwrap();
        let m2 = kernel.second_moment().unwrap();
        let v = SpatialField::new(1, |x| x[0] * x[0]);
        for eps in [0.5, 0.25] {
            let m = mollify(&v, &kernel, eps).unwrap();
            for x in [-0.4, 0.0, 1.1] {
                let want = x * x + eps * eps * m2;
                assert!(
                    (m.value(&[x]) - want).abs() < 1e-10,
                    "eps {eps} at {x}: {} vs {want}",
                    m.value(&[x])
                );
            }
        }
    }

    #[test]
    fn mollify_rejects_nonpositive_width() {
        let kernel = MollifierKernel::new(1, 1.0).unwrap();
        let v = SpatialField::constant(1, 1.0);
        assert!(mollify(&v, &kernel, 0.0).is_err());
        assert!(mollify(&v, &kernel, -0.1).is_err());
    }

    #[test]
    fn mollify_converges_pointwise_as_eps_shrinks() {
        let kernel = MollifierKernel::new(1, 1.0).unwrap();
        let v = SpatialField::new(1, |x| (-x[0] * x[0]).exp());
        let x = [0.3];
        let mut last = f64::INFINITY;
        for j in 2..=6 {
            let eps = 0.5f64.powi(j);
            let m = mollify(&v, &kernel, eps).unwrap();
            let err = (m.value(&x) - v.value(&x)).abs();
            assert!(err < last, "error not decreasing at eps = {eps}: {err}");
            last = err;
        }
    }

    #[test]
    fn kernel_has_unit_integral_and_symmetry() {
        for gamma in [1.0, 0.3, 0.05] {
            let kernel = MollifierKernel::new(1, gamma).unwrap();
            let q = QuadratureRule::for_ball(&[0.0], gamma, 128).unwrap();
            let mass = q.integrate(|x| kernel.value(x));
            assert!((mass - 1.0).abs() < 1e-8, "gamma {gamma}: mass {mass}");
            for x in [0.2 * gamma, 0.7 * gamma] {
                assert_eq!(kernel.value(&[x]), kernel.value(&[-x]));
                assert!(kernel.value(&[x]) >= 0.0);
            }
            assert_eq!(kernel.value(&[gamma * 1.01]), 0.0);
        }
    }

    #[test]
    fn kernel_rescaling_preserves_invariants() {
        let kernel = MollifierKernel::new(1, 1.0).unwrap().rescaled(0.4).unwrap();
        let q = QuadratureRule::for_ball(&[0.0], 0.4, 128).unwrap();
        let mass = q.integrate(|x| kernel.value(x));
        assert!((mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn bump_derivatives_pass_fd_oracle() {
        let phi = TestFunction::bump(vec![0.1], 0.9).unwrap();
        let pts = vec![vec![0.0], vec![0.3], vec![-0.5], vec![0.95]];
        check_derivatives(&phi.as_field(), &pts, 1e-3).unwrap();
        let phi2 = TestFunction::bump(vec![0.0, -0.2], 1.1).unwrap();
        let pts2 = vec![vec![0.1, 0.2], vec![-0.4, 0.3]];
        check_derivatives(&phi2.as_field(), &pts2, 1e-3).unwrap();
    }

    #[test]
    fn bump_vanishes_outside_support() {
        let phi = TestFunction::bump(vec![0.5], 0.25).unwrap();
        for x in [0.76, 1.0, -3.0] {
            assert_eq!(phi.value(&[x]), 0.0);
            assert_eq!(phi.d1(0, &[x]), 0.0);
            assert_eq!(phi.d2(0, 0, &[x]), 0.0);
        }
        // No overflow or NaN just inside the boundary.
        let eps_in = 0.5 + 0.25 * (1.0 - 1e-14);
        assert!(phi.value(&[eps_in]).is_finite());
        assert!(phi.d2(0, 0, &[eps_in]).is_finite());
    }

    #[test]
    fn two_dimensional_pairings_and_mollification() {
        let phi = TestFunction::bump(vec![0.0, 0.0], 1.0).unwrap();
        let q = QuadratureRule::for_ball(&[0.0, 0.0], 1.0, 24).unwrap();
        // Unit mass of the 2-d kernel, checked against a rule finer than
        // the one used for normalization.
        let kernel = MollifierKernel::new(2, 1.0).unwrap();
        let qk = QuadratureRule::for_ball(&[0.0, 0.0], 1.0, 144).unwrap();
        let mass = qk.integrate(|x| kernel.value(x));
        assert!((mass - 1.0).abs() < 1e-8, "2-d kernel mass {mass}");
        // Odd-in-x1 field against the radially symmetric bump.
        let v = SpatialField::new(2, |x| x[0] * (1.0 + x[1] * x[1]));
        assert!(pair(&v, &phi, &q).unwrap().abs() < 1e-13);
        // Shifted pairing of a constant is shift-invariant in 2 d too.
        let c = SpatialField::constant(2, 2.0);
        let base = pair(&c, &phi, &q).unwrap();
        let moved = shifted_pair(&c, &phi, &[0.7, -1.3], &q).unwrap();
        assert!((moved - base).abs() < 1e-13);
        // Radial symmetry kills first moments: linear fields survive
        // 2-d mollification unchanged.
        let lin = SpatialField::new(2, |x| 3.0 * x[0] - x[1]);
        let m = mollify(&lin, &kernel, 0.25).unwrap();
        for p in [[0.0, 0.0], [0.4, -0.2]] {
            assert!((m.value(&p) - lin.value(&p)).abs() < 1e-10);
        }
    }

    #[test]
    fn membership_diagnostic_zero_field() {
        let pairings = vec![vec![0.0; 5]; 8];
        assert_eq!(class_membership_diagnostic(&pairings, 0.125, 1).unwrap(), 0.0);
    }

    #[test]
    fn membership_diagnostic_matches_brute_force() {
        // u_t(y) = y * w_t in d = 1: (u_t, phi(. - x)) = w_t (M1 + x M0).
        // Diagnostic computed through the API must match an independent
        // double loop over (time, lattice).
        let q = QuadratureRule::for_ball(&[0.0], 1.0, 64).unwrap();
        let phi = unit_bump();
        let n = 32;
        let dt = 1.0 / n as f64;
        let lattice = ball_lattice(1, 2.0, 9);
        // A frozen path of "w" values standing in for a Wiener path.
        let w: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut pairings = Vec::with_capacity(n);
        for i in 0..n {
            let wi = w[i];
            let u = SpatialField::new(1, move |y| y[0] * wi);
            let row: Vec<f64> = lattice
                .iter()
                .map(|x| shifted_pair(&u, &phi, x, &q).unwrap())
                .collect();
            pairings.push(row);
        }
        let got = class_membership_diagnostic(&pairings, dt, 2).unwrap();

        // Brute force with explicit quadrature sums.
        let mut want = 0.0;
        for i in 0..n {
            let mut sup: f64 = 0.0;
            for x in &lattice {
                let mut p = 0.0;
                for j in 0..q.len() {
                    let z = q.node(j);
                    p += q.weight(j) * (z[0] + x[0]) * w[i] * phi.value(z);
                }
                sup = sup.max(p.abs());
            }
            want += dt * sup * sup;
        }
        assert!((got - want).abs() <= 1e-12 * (1.0 + want));
    }

    #[test]
    fn membership_diagnostic_power_monotone_below_one() {
        let pairings = vec![vec![0.3, 0.9, 0.1], vec![0.5, 0.2, 0.8]];
        let p1 = class_membership_diagnostic(&pairings, 0.5, 1).unwrap();
        let p2 = class_membership_diagnostic(&pairings, 0.5, 2).unwrap();
        assert!(p2 <= p1);
    }

    #[test]
    fn membership_diagnostic_rejects_other_exponents() {
        let pairings = vec![vec![0.0]];
        assert!(matches!(
            class_membership_diagnostic(&pairings, 0.1, 3),
            Err(Error::Capability(_))
        ));
    }
}
