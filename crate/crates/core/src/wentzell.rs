//! Both sides of the Ito-Wentzell identities along shared noise.
//!
//! The real-valued engine composes a random field F with the driving path
//! and accumulates the correction terms at the path position. The weak
//! engine works purely through pairings: spatial derivatives of the
//! composed field v_t = u_t(. + x_t) are moved onto the test function, so
//! only pairings of u and g against phi and its derivatives are ever
//! evaluated. Every identity compares a left side and a right side built
//! from the identical driver bank; residuals of an exact continuous-time
//! identity then shrink at the strong order 1/2 of the left-point scheme.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::driving::{
    apply_l, apply_lambda, simulate_driving, stopping_index, trace, DrivingCoefficients,
    DrivingPath, StoppingRule,
};
use crate::error::{Error, Result};
use crate::fields::{
    check_support, mollify, pair, MollifierKernel, QuadratureRule, SpatialField, TestFunction,
};
use crate::noise::{derive_seed, TimeGrid, WienerBank};

/// How many drivers past the bank's truncation enter tail diagnostics.
pub const TAIL_WINDOW: usize = 16;

/// Read access to one grid node of a bank: the inputs a closed-form
/// scenario field needs to materialize itself at that node.
#[derive(Clone, Copy)]
pub struct PathCtx<'a> {
    pub bank: &'a WienerBank,
    pub node: usize,
}

impl<'a> PathCtx<'a> {
    pub fn new(bank: &'a WienerBank, node: usize) -> Self {
        PathCtx { bank, node }
    }

    pub fn t(&self) -> f64 {
        self.bank.grid().node_time(self.node)
    }

    /// Driver path value W^k(t_node).
    pub fn w(&self, k: usize) -> f64 {
        self.bank.path_value(k, self.node)
    }

    pub fn grid(&self) -> TimeGrid {
        self.bank.grid()
    }
}

type FieldAt = Arc<dyn Fn(&PathCtx) -> SpatialField + Send + Sync>;
type FieldAtK = Arc<dyn Fn(&PathCtx, usize) -> SpatialField + Send + Sync>;

/// The weak-form data (u, f, g; b, sigma): a field u evolving as
/// du = f dt + g^k dW^k against the drivers of the bank, together with
/// the driving coefficients. g is defined for every driver index so that
/// truncation tails can be measured past the bank's driver count.
#[derive(Clone)]
pub struct WeakData {
    pub dim: usize,
    pub u_at: FieldAt,
    pub f_at: FieldAt,
    pub g_at: FieldAtK,
    pub coeffs: DrivingCoefficients,
    /// Number of drivers with a nonzero diffusion field, when finite.
    /// None means the family extends past any truncation (tails are then
    /// measured over the full window).
    pub g_support: Option<usize>,
}

impl WeakData {
    pub fn new(
        dim: usize,
        u_at: impl Fn(&PathCtx) -> SpatialField + Send + Sync + 'static,
        f_at: impl Fn(&PathCtx) -> SpatialField + Send + Sync + 'static,
        g_at: impl Fn(&PathCtx, usize) -> SpatialField + Send + Sync + 'static,
        coeffs: DrivingCoefficients,
    ) -> Self {
        WeakData {
            dim,
            u_at: Arc::new(u_at),
            f_at: Arc::new(f_at),
            g_at: Arc::new(g_at),
            coeffs,
            g_support: None,
        }
    }

    pub fn with_g_support(mut self, drivers: usize) -> Self {
        self.g_support = Some(drivers);
        self
    }

    fn tail_range(&self, drivers: usize) -> std::ops::Range<usize> {
        let upper = match self.g_support {
            Some(s) => s.min(drivers + TAIL_WINDOW),
            None => drivers + TAIL_WINDOW,
        };
        drivers..upper.max(drivers)
    }
}

/// The real-valued data (F, G, H): a field F evolving pointwise as
/// dF(x) = G(x) dt + H^k(x) dW^k. For manufactured scenarios this is the
/// weak data itself, read as ordinary functions.
#[derive(Clone)]
pub struct RealForm {
    pub dim: usize,
    pub value_at: FieldAt,
    pub drift_at: FieldAt,
    pub diffusion_at: FieldAtK,
}

impl RealForm {
    pub fn new(
        dim: usize,
        value_at: impl Fn(&PathCtx) -> SpatialField + Send + Sync + 'static,
        drift_at: impl Fn(&PathCtx) -> SpatialField + Send + Sync + 'static,
        diffusion_at: impl Fn(&PathCtx, usize) -> SpatialField + Send + Sync + 'static,
    ) -> Self {
        RealForm {
            dim,
            value_at: Arc::new(value_at),
            drift_at: Arc::new(drift_at),
            diffusion_at: Arc::new(diffusion_at),
        }
    }

    pub fn from_weak(data: &WeakData) -> Self {
        RealForm {
            dim: data.dim,
            value_at: data.u_at.clone(),
            drift_at: data.f_at.clone(),
            diffusion_at: data.g_at.clone(),
        }
    }
}

/// Residual of one identity on one path: sup over grid nodes and the
/// terminal-node value.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResidualSample {
    pub sup: f64,
    pub terminal: f64,
}

fn residual_of(lhs: &[f64], rhs: &[f64]) -> Result<ResidualSample> {
    let mut sup = 0.0f64;
    for (l, r) in lhs.iter().zip(rhs.iter()) {
        let diff = (l - r).abs();
        if !diff.is_finite() {
            return Err(Error::Numeric("non-finite identity residual".into()));
        }
        sup = sup.max(diff);
    }
    Ok(ResidualSample {
        sup,
        terminal: (lhs[lhs.len() - 1] - rhs[rhs.len() - 1]).abs(),
    })
}

// ---------------------------------------------------------------------------
// Weak evolution of the pairing (u_{t /\ tau}, phi).
// ---------------------------------------------------------------------------

/// The accumulated right side of the weak equation for a fixed phi, plus
/// the l2 truncation-tail diagnostic.
#[derive(Debug, Clone)]
pub struct WeakEvolution {
    /// Pairing path at every grid node, frozen at the stopping index.
    pub pairings: Vec<f64>,
    /// Driver count actually summed (the bank's).
    pub truncation: usize,
    /// sum_{k > K} sum_i (g^k, phi)^2 dt over the tail window.
    pub tail_diagnostic: f64,
    pub tail_ok: bool,
    pub stop_index: usize,
}

/// Accumulate (u_0, phi) + sum_i (f, phi) dt + sum_{k,i} (g^k, phi) dW^k_i,
/// frozen at the stopping index. The tail diagnostic is reported, not
/// fatal.
pub fn evolve_weak(
    data: &WeakData,
    phi: &TestFunction,
    bank: &WienerBank,
    rule: &StoppingRule,
    q: &QuadratureRule,
    tail_threshold: f64,
) -> Result<WeakEvolution> {
    check_support(phi, q)?;
    let grid = bank.grid();
    let n = grid.steps();
    let dt = grid.dt();
    let drivers = bank.drivers();
    let path = simulate_driving(&data.coeffs, bank)?;
    let stop = stopping_index(&path, rule);

    let ctx0 = PathCtx::new(bank, 0);
    let u0 = (data.u_at)(&ctx0);
    let mut acc = pair(&u0, phi, q)?;
    let mut pairings = Vec::with_capacity(n + 1);
    pairings.push(acc);
    let mut tail = 0.0;
    for i in 0..n {
        if i < stop {
            let ctx = PathCtx::new(bank, i);
            let f_i = (data.f_at)(&ctx);
            let mut step = pair(&f_i, phi, q)? * dt;
            for k in 0..drivers {
                let g_k = (data.g_at)(&ctx, k);
                step += pair(&g_k, phi, q)? * bank.increment(k, i);
            }
            for k in data.tail_range(drivers) {
                let g_k = (data.g_at)(&ctx, k);
                let p = pair(&g_k, phi, q)?;
                tail += p * p * dt;
            }
            acc += step;
        }
        pairings.push(acc);
    }
    if !acc.is_finite() || !tail.is_finite() {
        return Err(Error::Numeric("weak evolution produced non-finite values".into()));
    }
    Ok(WeakEvolution {
        pairings,
        truncation: drivers,
        tail_diagnostic: tail,
        tail_ok: tail < tail_threshold,
        stop_index: stop,
    })
}

/// Direct pairings (u_{t_i /\ tau}, phi) at every node, for consistency
/// checks against the accumulated evolution.
pub fn direct_pairings(
    data: &WeakData,
    phi: &TestFunction,
    bank: &WienerBank,
    rule: &StoppingRule,
    q: &QuadratureRule,
) -> Result<Vec<f64>> {
    check_support(phi, q)?;
    let n = bank.grid().steps();
    let path = simulate_driving(&data.coeffs, bank)?;
    let stop = stopping_index(&path, rule);
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let eff = i.min(stop);
        let ctx = PathCtx::new(bank, eff);
        let u_i = (data.u_at)(&ctx);
        out.push(pair(&u_i, phi, q)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Real-valued identity along the driving path.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RealIwReport {
    pub residual: ResidualSample,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub stop_index: usize,
}

/// LHS: F(t_i /\ tau, x(t_i /\ tau)). RHS: F(0, 0) plus left-point sums of
/// G + L F + sum_k Lambda^k H^k in time and of H^k + Lambda^k F against the
/// driver increments, frozen at the stopping index.
pub fn real_iw_both_sides(
    form: &RealForm,
    coeffs: &DrivingCoefficients,
    path: &DrivingPath,
    bank: &WienerBank,
    rule: &StoppingRule,
) -> Result<RealIwReport> {
    let grid = bank.grid();
    let n = grid.steps();
    let dt = grid.dt();
    let drivers = bank.drivers();
    if coeffs.drivers() != drivers {
        return Err(Error::InvalidArgument(format!(
            "coefficients expect {} drivers, bank has {}",
            coeffs.drivers(),
            drivers
        )));
    }
    let stop = stopping_index(path, rule);

    let mut lhs = Vec::with_capacity(n + 1);
    let mut rhs = Vec::with_capacity(n + 1);
    let ctx0 = PathCtx::new(bank, 0);
    let f0 = (form.value_at)(&ctx0);
    let start = f0.value(path.node(0));
    lhs.push(start);
    rhs.push(start);
    let mut acc = start;
    let mut frozen_lhs = start;
    for i in 0..n {
        if i < stop {
            let t = grid.node_time(i);
            let ctx = PathCtx::new(bank, i);
            let x_i = path.node(i);
            let sigma = coeffs.sigma_at(t);
            let a = coeffs.diffusion_at(t);
            let b = coeffs.drift_at(t);
            let f_i = (form.value_at)(&ctx);
            let g_i = (form.drift_at)(&ctx);

            let mut drift = g_i.value(x_i) + apply_l(&f_i, &a, &b, x_i)?;
            let lambda_f = apply_lambda(&f_i, &sigma, x_i)?;
            let mut stochastic = 0.0;
            for k in 0..drivers {
                let h_k = (form.diffusion_at)(&ctx, k);
                let column_active = (0..form.dim).any(|p| sigma[p][k] != 0.0);
                if column_active {
                    // Lambda^k H^k needs the gradient of this driver's H.
                    let mut lam_h = 0.0;
                    for p in 0..form.dim {
                        if sigma[p][k] != 0.0 {
                            lam_h += sigma[p][k] * h_k.d1(p, x_i)?;
                        }
                    }
                    drift += lam_h;
                }
                stochastic += (h_k.value(x_i) + lambda_f[k]) * bank.increment(k, i);
            }
            acc += drift * dt + stochastic;
        }
        rhs.push(acc);
        let eff = (i + 1).min(stop);
        if i + 1 <= stop {
            let ctx = PathCtx::new(bank, eff);
            let f_next = (form.value_at)(&ctx);
            frozen_lhs = f_next.value(path.node(eff));
        }
        lhs.push(frozen_lhs);
    }
    let residual = residual_of(&lhs, &rhs)?;
    Ok(RealIwReport {
        residual,
        lhs,
        rhs,
        stop_index: stop,
    })
}

// ---------------------------------------------------------------------------
// Weak identity for v_t(x) = u_t(x + x_t), tested against phi.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct WeakIwReport {
    pub residual: ResidualSample,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub tail_diagnostic: f64,
    pub stop_index: usize,
}

/// LHS: (v_{t /\ tau}, phi) computed as the shifted pairing of the
/// closed-form u by the path position. RHS: (u_0, phi) plus left-point
/// sums of the drift bracket
///
/// ```text
/// (f(. + x_s), phi) + a^{pq} (u, D_pq phi(. - x_s))
///     - b^p (u, D_p phi(. - x_s)) - sigma^{pk} (g^k, D_p phi(. - x_s))
/// ```
///
/// and stochastic sums of (g^k(. + x_s), phi) - sigma^{pk} (u, D_p phi).
/// All derivative transfers carry the sign (-1)^n of moving n derivatives
/// onto phi.
pub fn weak_iw_both_sides(
    data: &WeakData,
    phi: &TestFunction,
    bank: &WienerBank,
    rule: &StoppingRule,
    q: &QuadratureRule,
) -> Result<WeakIwReport> {
    check_support(phi, q)?;
    let d = data.dim;
    if phi.dim() != d {
        return Err(Error::InvalidArgument(format!(
            "test function dim {} vs data dim {d}",
            phi.dim()
        )));
    }
    let grid = bank.grid();
    let n = grid.steps();
    let dt = grid.dt();
    let drivers = bank.drivers();
    let path = simulate_driving(&data.coeffs, bank)?;
    let stop = stopping_index(&path, rule);

    // Weighted tables of phi and its derivatives at the quadrature nodes.
    let nq = q.len();
    let mut wphi = vec![0.0; nq];
    let mut wd1 = vec![vec![0.0; nq]; d];
    let mut wd2 = vec![vec![vec![0.0; nq]; d]; d];
    for j in 0..nq {
        let z = q.node(j);
        let w = q.weight(j);
        wphi[j] = w * phi.value(z);
        for p in 0..d {
            wd1[p][j] = w * phi.d1(p, z);
            for r in 0..d {
                wd2[p][r][j] = w * phi.d2(p, r, z);
            }
        }
    }

    let mut ubuf = vec![0.0; nq];
    let mut gbuf = vec![0.0; nq];
    let mut fbuf = vec![0.0; nq];
    let mut y = vec![0.0; d];

    let mut lhs = Vec::with_capacity(n + 1);
    let mut rhs = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    let mut frozen_lhs = 0.0;
    let mut tail = 0.0;
    for i in 0..=n {
        let eff = i.min(stop);
        let live = i <= stop;
        let ctx = PathCtx::new(bank, eff);
        let x_eff = path.node(eff);
        if live {
            // (u_{t_i}, phi(. - x_i)) in the frame of phi.
            let u_i = (data.u_at)(&ctx);
            let mut l = 0.0;
            for j in 0..nq {
                let z = q.node(j);
                for p in 0..d {
                    y[p] = z[p] + x_eff[p];
                }
                ubuf[j] = u_i.value(&y);
                l += ubuf[j] * wphi[j];
            }
            if !l.is_finite() {
                return Err(Error::Numeric(format!("non-finite pairing at node {i}")));
            }
            frozen_lhs = l;
        }
        lhs.push(frozen_lhs);
        if i == 0 {
            acc = frozen_lhs; // x_0 = 0: (u_0, phi)
            rhs.push(acc);
            // the initial pairing is the anchor; accumulation starts here
        }
        if i == n {
            break;
        }
        if i < stop {
            let t = grid.node_time(i);
            let sigma = data.coeffs.sigma_at(t);
            let a = data.coeffs.diffusion_at(t);
            let b = data.coeffs.drift_at(t);
            let x_i = path.node(i);

            // Pairings of u against derivative tables (ubuf already holds
            // u at the shifted nodes for this live index).
            let mut pair_u_d1 = vec![0.0; d];
            for p in 0..d {
                let mut s = 0.0;
                for j in 0..nq {
                    s += ubuf[j] * wd1[p][j];
                }
                pair_u_d1[p] = s;
            }
            let mut drift = 0.0;
            for p in 0..d {
                for r in 0..d {
                    if a[p][r] != 0.0 {
                        let mut s = 0.0;
                        for j in 0..nq {
                            s += ubuf[j] * wd2[p][r][j];
                        }
                        drift += a[p][r] * s;
                    }
                }
                drift -= b[p] * pair_u_d1[p];
            }

            // Drift field f.
            let f_i = (data.f_at)(&ctx);
            let mut pair_f = 0.0;
            for j in 0..nq {
                let z = q.node(j);
                for p in 0..d {
                    y[p] = z[p] + x_i[p];
                }
                fbuf[j] = f_i.value(&y);
                pair_f += fbuf[j] * wphi[j];
            }
            drift += pair_f;

            // Driver terms.
            let mut stochastic = 0.0;
            for k in 0..drivers {
                let g_k = (data.g_at)(&ctx, k);
                let mut pair_g = 0.0;
                for j in 0..nq {
                    let z = q.node(j);
                    for p in 0..d {
                        y[p] = z[p] + x_i[p];
                    }
                    gbuf[j] = g_k.value(&y);
                    pair_g += gbuf[j] * wphi[j];
                }
                for p in 0..d {
                    if sigma[p][k] != 0.0 {
                        let mut pair_g_dp = 0.0;
                        for j in 0..nq {
                            pair_g_dp += gbuf[j] * wd1[p][j];
                        }
                        // cross term (D_p g^k(. + x), sigma^{pk}) moved
                        // onto phi: one derivative, sign -1.
                        drift -= sigma[p][k] * pair_g_dp;
                    }
                }
                let mut stoch_k = pair_g;
                for p in 0..d {
                    stoch_k -= sigma[p][k] * pair_u_d1[p];
                }
                stochastic += stoch_k * bank.increment(k, i);
            }

            // Truncation tail of the weak stochastic sum.
            for k in data.tail_range(drivers) {
                let g_k = (data.g_at)(&ctx, k);
                let mut pair_g = 0.0;
                for j in 0..nq {
                    let z = q.node(j);
                    for p in 0..d {
                        y[p] = z[p] + x_i[p];
                    }
                    pair_g += g_k.value(&y) * wphi[j];
                }
                tail += pair_g * pair_g * dt;
            }

            acc += drift * dt + stochastic;
        }
        if !acc.is_finite() {
            return Err(Error::Numeric(format!("non-finite accumulation at node {i}")));
        }
        rhs.push(acc);
    }
    let residual = residual_of(&lhs, &rhs)?;
    Ok(WeakIwReport {
        residual,
        lhs,
        rhs,
        tail_diagnostic: tail,
        stop_index: stop,
    })
}

// ---------------------------------------------------------------------------
// Mollified pathway.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MollifiedEntry {
    pub eps: f64,
    pub residual: ResidualSample,
    /// sup over the grid of |LHS_eps - LHS_base|.
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct MollifiedReport {
    pub base_residual: ResidualSample,
    pub entries: Vec<MollifiedEntry>,
    pub product_rule: ResidualSample,
}

fn mollified_form(form: &RealForm, kernel: &MollifierKernel, eps: f64) -> RealForm {
    let (k1, k2, k3) = (kernel.clone(), kernel.clone(), kernel.clone());
    let (v, g, h) = (
        form.value_at.clone(),
        form.drift_at.clone(),
        form.diffusion_at.clone(),
    );
    RealForm {
        dim: form.dim,
        value_at: Arc::new(move |ctx| {
            mollify(&v(ctx), &k1, eps).expect("mollification width validated")
        }),
        drift_at: Arc::new(move |ctx| {
            mollify(&g(ctx), &k2, eps).expect("mollification width validated")
        }),
        diffusion_at: Arc::new(move |ctx, k| {
            mollify(&h(ctx, k), &k3, eps).expect("mollification width validated")
        }),
    }
}

/// Run the real-valued identity on mollified data for each width in the
/// decreasing sequence, and report (a) per-width residuals, (b) the sup
/// gap between the mollified and unmollified left sides, which must
/// shrink with the width, and (c) the product-rule identity for
/// F_t(x) zeta(x - x_t) at the probe point.
pub fn mollified_pathway(
    form: &RealForm,
    coeffs: &DrivingCoefficients,
    kernel: &MollifierKernel,
    widths: &[f64],
    probe: &[f64],
    bank: &WienerBank,
    rule: &StoppingRule,
) -> Result<MollifiedReport> {
    if widths.is_empty() {
        return Err(Error::InvalidArgument("empty width sequence".into()));
    }
    if widths.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "mollification widths must decrease".into(),
        ));
    }
    if widths.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidArgument(
            "mollification widths must be positive".into(),
        ));
    }
    let path = simulate_driving(coeffs, bank)?;
    let base = real_iw_both_sides(form, coeffs, &path, bank, rule)?;
    let mut entries = Vec::with_capacity(widths.len());
    for &eps in widths {
        let mf = mollified_form(form, kernel, eps);
        let report = real_iw_both_sides(&mf, coeffs, &path, bank, rule)?;
        let gap = report
            .lhs
            .iter()
            .zip(base.lhs.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        entries.push(MollifiedEntry {
            eps,
            residual: report.residual,
            gap,
        });
    }
    let product_rule = product_rule_check(form, coeffs, kernel, probe, bank, rule)?;
    Ok(MollifiedReport {
        base_residual: base.residual,
        entries,
        product_rule,
    })
}

/// Ito product identity for Y_t = F_t(x) zeta(x - x_t) at a fixed x:
///
/// ```text
/// dY = [zeta G + F (a^{pq} D_pq zeta - b^p D_p zeta) - H^k Lambda^k zeta] dt
///    + [zeta H^k - F Lambda^k zeta] dW^k
/// ```
///
/// with every zeta factor evaluated at x - x_s. Both sides agree to the
/// scheme's order.
pub fn product_rule_check(
    form: &RealForm,
    coeffs: &DrivingCoefficients,
    kernel: &MollifierKernel,
    x: &[f64],
    bank: &WienerBank,
    rule: &StoppingRule,
) -> Result<ResidualSample> {
    let d = form.dim;
    let grid = bank.grid();
    let n = grid.steps();
    let dt = grid.dt();
    let drivers = bank.drivers();
    let path = simulate_driving(coeffs, bank)?;
    let stop = stopping_index(&path, rule);

    let zeta_at = |x_s: &[f64]| -> Vec<f64> {
        (0..d).map(|p| x[p] - x_s[p]).collect()
    };

    let ctx0 = PathCtx::new(bank, 0);
    let f0 = (form.value_at)(&ctx0).value(x) * kernel.value(&zeta_at(path.node(0)));
    let mut lhs = Vec::with_capacity(n + 1);
    let mut rhs = Vec::with_capacity(n + 1);
    lhs.push(0.0);
    rhs.push(0.0);
    let mut acc = 0.0;
    let mut frozen = 0.0;
    for i in 0..n {
        if i < stop {
            let t = grid.node_time(i);
            let ctx = PathCtx::new(bank, i);
            let sigma = coeffs.sigma_at(t);
            let a = coeffs.diffusion_at(t);
            let b = coeffs.drift_at(t);
            let arg = zeta_at(path.node(i));
            let f_val = (form.value_at)(&ctx).value(x);
            let g_val = (form.drift_at)(&ctx).value(x);
            let zeta = kernel.value(&arg);

            // a^{pq} D_pq zeta - b^p D_p zeta at x - x_s.
            let mut zeta_gen = 0.0;
            for p in 0..d {
                for r in 0..d {
                    if a[p][r] != 0.0 {
                        zeta_gen += a[p][r] * kernel.d2(p, r, &arg);
                    }
                }
                zeta_gen -= b[p] * kernel.d1(p, &arg);
            }
            // Lambda^k zeta components.
            let mut lam_zeta = vec![0.0; drivers];
            for k in 0..drivers {
                for p in 0..d {
                    lam_zeta[k] += sigma[p][k] * kernel.d1(p, &arg);
                }
            }
            let mut drift = zeta * g_val + f_val * zeta_gen;
            let mut stochastic = 0.0;
            for k in 0..drivers {
                let h_val = (form.diffusion_at)(&ctx, k).value(x);
                drift -= h_val * lam_zeta[k];
                stochastic += (zeta * h_val - f_val * lam_zeta[k]) * bank.increment(k, i);
            }
            acc += drift * dt + stochastic;
        }
        rhs.push(acc);
        let eff = (i + 1).min(stop);
        if i + 1 <= stop {
            let ctx = PathCtx::new(bank, eff);
            frozen = (form.value_at)(&ctx).value(x) * kernel.value(&zeta_at(path.node(eff))) - f0;
        }
        lhs.push(frozen);
    }
    residual_of(&lhs, &rhs)
}

// ---------------------------------------------------------------------------
// l2-tail diagnostic.
// ---------------------------------------------------------------------------

/// Max over the sample (node, point) pairs of the l2 tail
/// sum_{k >= n} |Lambda^k F|^2, one value per requested n.
pub fn dini_tail_profile(
    form: &RealForm,
    coeffs: &DrivingCoefficients,
    bank: &WienerBank,
    nodes: &[usize],
    points: &[Vec<f64>],
    n_values: &[usize],
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n_values.len());
    for &n0 in n_values {
        let mut worst = 0.0f64;
        for &i in nodes {
            let t = bank.grid().node_time(i);
            let sigma = coeffs.sigma_at(t);
            let ctx = PathCtx::new(bank, i);
            let f_i = (form.value_at)(&ctx);
            for x in points {
                let lambda = apply_lambda(&f_i, &sigma, x)?;
                let tail: f64 = lambda.iter().skip(n0).map(|l| l * l).sum();
                worst = worst.max(tail);
            }
        }
        out.push(worst);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Hypothesis diagnostics.
// ---------------------------------------------------------------------------

/// Grid values of the integrability quantities behind the real-valued
/// identity: the eta-weighted norms (a fixed lattice covering the moving
/// ball) and the time sum of moving-ball sups.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    /// sum_i dt sum_j w_j eta_i(x_j) |F_i(x_j)| (|b_i| + tr a_i).
    pub eta_drift: f64,
    /// sum_j w_j sqrt( sum_i dt eta_i(x_j) F_i(x_j)^2 tr a_i ).
    pub eta_quadratic: f64,
    /// sum_i dt sup_{|x - x_i| <= gamma} (|G| + |LF| + |Lambda F|^2
    ///   + |H|^2 + sum_k |Lambda^k H^k|).
    pub moving_sup: f64,
}

pub fn hypothesis_diagnostics(
    form: &RealForm,
    coeffs: &DrivingCoefficients,
    bank: &WienerBank,
    rule: &StoppingRule,
    gamma: f64,
) -> Result<HypothesisReport> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument("gamma must be positive".into()));
    }
    let d = form.dim;
    let grid = bank.grid();
    let n = grid.steps();
    let dt = grid.dt();
    let drivers = bank.drivers();
    let path = simulate_driving(coeffs, bank)?;
    let stop = stopping_index(&path, rule);

    // Fixed lattice covering the range of the path enlarged by gamma.
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for i in 0..=n {
        for p in 0..d {
            lo[p] = lo[p].min(path.node(i)[p]);
            hi[p] = hi[p].max(path.node(i)[p]);
        }
    }
    for p in 0..d {
        lo[p] -= gamma * 1.05;
        hi[p] += gamma * 1.05;
    }
    let per_axis = 21usize;
    let count = per_axis.pow(d as u32);
    let mut lattice = Vec::with_capacity(count);
    let mut lattice_w = Vec::with_capacity(count);
    let mut idx = vec![0usize; d];
    for _ in 0..count {
        let mut pnt = Vec::with_capacity(d);
        let mut w = 1.0;
        for p in 0..d {
            let h = (hi[p] - lo[p]) / (per_axis - 1) as f64;
            pnt.push(lo[p] + h * idx[p] as f64);
            let edge = idx[p] == 0 || idx[p] == per_axis - 1;
            w *= h * if edge { 0.5 } else { 1.0 };
        }
        lattice.push(pnt);
        lattice_w.push(w);
        for p in (0..d).rev() {
            idx[p] += 1;
            if idx[p] < per_axis {
                break;
            }
            idx[p] = 0;
        }
    }

    // Ball offsets for the moving sup.
    let ball_per_axis = 9usize;
    let ball_count = ball_per_axis.pow(d as u32);
    let mut offsets = Vec::with_capacity(ball_count);
    let mut bidx = vec![0usize; d];
    for _ in 0..ball_count {
        let off: Vec<f64> = bidx
            .iter()
            .map(|&i| -gamma + 2.0 * gamma * i as f64 / (ball_per_axis - 1) as f64)
            .collect();
        let norm: f64 = off.iter().map(|o| o * o).sum::<f64>();
        if norm.sqrt() <= gamma * (1.0 + 1e-12) {
            offsets.push(off);
        }
        for p in (0..d).rev() {
            bidx[p] += 1;
            if bidx[p] < ball_per_axis {
                break;
            }
            bidx[p] = 0;
        }
    }

    let mut eta_drift = 0.0;
    let mut eta_quad_inner = vec![0.0; lattice.len()];
    let mut moving_sup = 0.0;
    let mut probe = vec![0.0; d];
    for i in 0..n.min(stop) {
        let t = grid.node_time(i);
        let ctx = PathCtx::new(bank, i);
        let sigma = coeffs.sigma_at(t);
        let a = coeffs.diffusion_at(t);
        let b = coeffs.drift_at(t);
        let tr_a = trace(&a);
        let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let x_i = path.node(i);
        let f_i = (form.value_at)(&ctx);
        let g_i = (form.drift_at)(&ctx);

        // eta-weighted fixed-lattice integrals.
        for (j, pnt) in lattice.iter().enumerate() {
            let dist_sq: f64 = pnt
                .iter()
                .zip(x_i.iter())
                .map(|(p, c)| (p - c) * (p - c))
                .sum();
            if dist_sq.sqrt() <= gamma {
                let fv = f_i.value(pnt);
                eta_drift += dt * lattice_w[j] * fv.abs() * (b_norm + tr_a);
                eta_quad_inner[j] += dt * fv * fv * tr_a;
            }
        }

        // Moving-ball sup of the operator quantities.
        let mut sup = 0.0f64;
        for off in &offsets {
            for p in 0..d {
                probe[p] = x_i[p] + off[p];
            }
            let mut v = g_i.value(&probe).abs();
            v += apply_l(&f_i, &a, &b, &probe)?.abs();
            let lambda_f = apply_lambda(&f_i, &sigma, &probe)?;
            v += lambda_f.iter().map(|l| l * l).sum::<f64>();
            let mut h_sq = 0.0;
            let mut lam_h = 0.0;
            for k in 0..drivers {
                let h_k = (form.diffusion_at)(&ctx, k);
                let hv = h_k.value(&probe);
                h_sq += hv * hv;
                let column_active = (0..d).any(|p| sigma[p][k] != 0.0);
                if column_active {
                    let mut s = 0.0;
                    for p in 0..d {
                        if sigma[p][k] != 0.0 {
                            s += sigma[p][k] * h_k.d1(p, &probe)?;
                        }
                    }
                    lam_h += s.abs();
                }
            }
            v += h_sq + lam_h;
            sup = sup.max(v);
        }
        moving_sup += dt * sup;
    }
    let eta_quadratic: f64 = lattice_w
        .iter()
        .zip(eta_quad_inner.iter())
        .map(|(w, inner)| w * inner.sqrt())
        .sum();
    if !eta_drift.is_finite() || !eta_quadratic.is_finite() || !moving_sup.is_finite() {
        return Err(Error::Numeric(
            "hypothesis diagnostic produced non-finite values".into(),
        ));
    }
    Ok(HypothesisReport {
        eta_drift,
        eta_quadratic,
        moving_sup,
    })
}

// ---------------------------------------------------------------------------
// Residual curves across nested refinement levels.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct LevelStat {
    pub level: u32,
    pub dt: f64,
    /// RMS over replicates of the per-path sup residual.
    pub rms_sup: f64,
    /// RMS over replicates of the terminal-node residual.
    pub rms_terminal: f64,
}

/// Per-level residual norms of one identity, with the same driver noise
/// refined by Brownian bridge across levels.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualCurve {
    pub levels: Vec<LevelStat>,
    pub replicates: usize,
    pub seed: u64,
}

impl ResidualCurve {
    pub fn rate_points(&self) -> Vec<(f64, f64)> {
        self.levels.iter().map(|l| (l.dt, l.rms_sup)).collect()
    }
}

/// Evaluate an identity on nested banks from `base_level` upward,
/// replicate by replicate (in parallel; seeding is keyed, so scheduling
/// cannot change the output), and aggregate RMS residuals per level.
pub fn residual_curve(
    seed: u64,
    replicates: usize,
    drivers: usize,
    horizon: f64,
    base_level: u32,
    level_count: u32,
    eval: impl Fn(&WienerBank) -> Result<ResidualSample> + Sync,
) -> Result<ResidualCurve> {
    if replicates == 0 || level_count == 0 {
        return Err(Error::InvalidArgument(
            "need at least one replicate and one level".into(),
        ));
    }
    let base = TimeGrid::dyadic(horizon, base_level)?;
    // Validate the finest level up front.
    TimeGrid::dyadic(horizon, base_level + level_count - 1)?;
    let per_rep: Vec<Vec<ResidualSample>> = (0..replicates)
        .into_par_iter()
        .map(|r| -> Result<Vec<ResidualSample>> {
            let mut bank = WienerBank::generate(derive_seed(seed, r as u64), drivers, base)?;
            let mut samples = Vec::with_capacity(level_count as usize);
            for l in 0..level_count {
                samples.push(eval(&bank)?);
                if l + 1 < level_count {
                    bank = bank.refine()?;
                }
            }
            Ok(samples)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut levels = Vec::with_capacity(level_count as usize);
    for l in 0..level_count as usize {
        let mut sup_sq = 0.0;
        let mut term_sq = 0.0;
        for rep in &per_rep {
            sup_sq += rep[l].sup * rep[l].sup;
            term_sq += rep[l].terminal * rep[l].terminal;
        }
        let level = base_level + l as u32;
        levels.push(LevelStat {
            level,
            dt: horizon / (1u64 << level) as f64,
            rms_sup: (sup_sq / replicates as f64).sqrt(),
            rms_terminal: (term_sq / replicates as f64).sqrt(),
        });
    }
    Ok(ResidualCurve {
        levels,
        replicates,
        seed,
    })
}
