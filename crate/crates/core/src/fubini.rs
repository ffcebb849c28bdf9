//! The stochastic Fubini interchange and the supporting martingale-field
//! estimates.
//!
//! A martingale field m(t, x) is sampled on a finite spatial lattice as the
//! left-point stochastic sum of its integrand family against a driver bank.
//! Because the spatial integral over the domain uses the same lattice as the
//! field sample, the interchange of the lattice integral with the stochastic
//! sum is an identity of finite sums: any discrepancy between the two sides
//! is pure floating-point noise, which is exactly what the check asserts.

use crate::error::{Error, Result};
use crate::noise::{derive_seed, TimeGrid, WienerBank};
use crate::stats::{mc_estimate, McEstimate};

/// Uniform spatial lattice on an axis-aligned box with tensor-product
/// trapezoid weights. Uniform spacing is what makes dyadic pair
/// separations available for the Holder check.
#[derive(Debug, Clone)]
pub struct SpatialLattice {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    dim: usize,
    per_axis: usize,
    spacing: Vec<f64>,
}

impl SpatialLattice {
    pub fn uniform(lo: &[f64], hi: &[f64], per_axis: usize) -> Result<Self> {
        let dim = lo.len();
        if dim == 0 || dim != hi.len() {
            return Err(Error::InvalidArgument("lattice box dims mismatch".into()));
        }
        if per_axis < 2 {
            return Err(Error::InvalidArgument(
                "lattice needs at least 2 points per axis".into(),
            ));
        }
        for a in 0..dim {
            if !(lo[a] < hi[a]) {
                return Err(Error::InvalidArgument(format!(
                    "degenerate lattice box on axis {a}"
                )));
            }
        }
        let spacing: Vec<f64> = (0..dim)
            .map(|a| (hi[a] - lo[a]) / (per_axis - 1) as f64)
            .collect();
        let count = per_axis.pow(dim as u32);
        let mut points = Vec::with_capacity(count);
        let mut weights = Vec::with_capacity(count);
        let mut idx = vec![0usize; dim];
        for _ in 0..count {
            let mut p = Vec::with_capacity(dim);
            let mut w = 1.0;
            for a in 0..dim {
                p.push(lo[a] + spacing[a] * idx[a] as f64);
                let edge = idx[a] == 0 || idx[a] == per_axis - 1;
                w *= spacing[a] * if edge { 0.5 } else { 1.0 };
            }
            points.push(p);
            weights.push(w);
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < per_axis {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(SpatialLattice {
            points,
            weights,
            dim,
            per_axis,
            spacing,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j]
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(self.weights.iter())
            .map(|(p, w)| w * f(p))
            .sum()
    }
}

/// Both sides of the discrete interchange, node by node, on one bank.
#[derive(Debug, Clone)]
pub struct FubiniReport {
    /// Lattice integral of the accumulated field, per grid node.
    pub lhs: Vec<f64>,
    /// Stochastic sum of the lattice integrals, per grid node.
    pub rhs: Vec<f64>,
    pub max_abs_discrepancy: f64,
    /// max |lhs - rhs| / (1 + |lhs|) over the grid.
    pub max_rel_discrepancy: f64,
}

/// Evaluate both sides of the interchange for the field
/// F_t(x) = int_0^t G ds + sum_k int_0^t H^k dW^k on the lattice.
///
/// Left side: lattice integral of F at each node. Right side: time and
/// stochastic sums of the lattice integrals of G and H^k. Both use the
/// identical bank and the identical lattice weights.
pub fn fubini_both_sides(
    g_family: impl Fn(usize, f64, &[f64]) -> f64,
    h_family: impl Fn(usize, usize, f64, &[f64]) -> f64,
    drivers: usize,
    domain: &SpatialLattice,
    bank: &WienerBank,
) -> Result<FubiniReport> {
    if drivers > bank.drivers() {
        return Err(Error::InvalidArgument(format!(
            "family has {drivers} drivers, bank only {}",
            bank.drivers()
        )));
    }
    let grid = bank.grid();
    let n = grid.steps();
    let dt = grid.dt();
    let jn = domain.len();
    let mut field = vec![0.0; jn];
    let mut lhs = Vec::with_capacity(n + 1);
    let mut rhs = Vec::with_capacity(n + 1);
    lhs.push(0.0);
    rhs.push(0.0);
    let mut rhs_acc = 0.0;
    for i in 0..n {
        let t = grid.node_time(i);
        let mut gbar = 0.0;
        let mut incr_bar = 0.0;
        for j in 0..jn {
            let x = domain.point(j);
            let w = domain.weight(j);
            let g = g_family(i, t, x);
            if !g.is_finite() {
                return Err(Error::Numeric(format!("drift integrand {g} at node {i}")));
            }
            let mut hsum = 0.0;
            for k in 0..drivers {
                let h = h_family(k, i, t, x);
                if !h.is_finite() {
                    return Err(Error::Numeric(format!(
                        "diffusion integrand {h} at node {i}, driver {k}"
                    )));
                }
                hsum += h * bank.increment(k, i);
            }
            field[j] += g * dt + hsum;
            gbar += w * g;
            incr_bar += w * hsum;
        }
        rhs_acc += gbar * dt + incr_bar;
        rhs.push(rhs_acc);
        let mut l = 0.0;
        for j in 0..jn {
            l += domain.weight(j) * field[j];
        }
        lhs.push(l);
    }
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    for i in 0..=n {
        let diff = (lhs[i] - rhs[i]).abs();
        max_abs = max_abs.max(diff);
        max_rel = max_rel.max(diff / (1.0 + lhs[i].abs()));
    }
    Ok(FubiniReport {
        lhs,
        rhs,
        max_abs_discrepancy: max_abs,
        max_rel_discrepancy: max_rel,
    })
}

/// Worst relative discrepancy of the interchange over replicate banks.
pub fn fubini_discrepancy_over_replicates(
    g_family: impl Fn(usize, f64, &[f64]) -> f64,
    h_family: impl Fn(usize, usize, f64, &[f64]) -> f64,
    drivers: usize,
    domain: &SpatialLattice,
    grid: TimeGrid,
    seed: u64,
    replicates: usize,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for r in 0..replicates {
        let bank = WienerBank::generate(derive_seed(seed, r as u64), drivers, grid)?;
        let report = fubini_both_sides(&g_family, &h_family, drivers, domain, &bank)?;
        worst = worst.max(report.max_rel_discrepancy);
    }
    Ok(worst)
}

/// A martingale field sampled on (time grid) x (spatial lattice):
/// m(t_i, x_j) is the exact left-point stochastic sum of the integrand
/// family, and A(t_i, x_j) its quadratic-variation compensator.
#[derive(Debug, Clone)]
pub struct MartingaleFieldSample {
    pub lattice: SpatialLattice,
    pub grid: TimeGrid,
    /// values[i][j] = m(t_i, x_j); values[0] is identically zero.
    pub values: Vec<Vec<f64>>,
    /// compensator[i][j] = sum_k sum_{i' < i} f^k(t_{i'}, x_j)^2 dt.
    pub compensator: Vec<Vec<f64>>,
}

pub fn sample_martingale_field(
    f_family: impl Fn(usize, usize, f64, &[f64]) -> f64,
    drivers: usize,
    lattice: &SpatialLattice,
    bank: &WienerBank,
) -> Result<MartingaleFieldSample> {
    if drivers > bank.drivers() {
        return Err(Error::InvalidArgument(format!(
            "family has {drivers} drivers, bank only {}",
            bank.drivers()
        )));
    }
    let grid = bank.grid();
    let n = grid.steps();
    let dt = grid.dt();
    let jn = lattice.len();
    let mut values = Vec::with_capacity(n + 1);
    let mut compensator = Vec::with_capacity(n + 1);
    values.push(vec![0.0; jn]);
    compensator.push(vec![0.0; jn]);
    for i in 0..n {
        let t = grid.node_time(i);
        let mut row = values[i].clone();
        let mut comp = compensator[i].clone();
        for j in 0..jn {
            let x = lattice.point(j);
            for k in 0..drivers {
                let f = f_family(k, i, t, x);
                if !f.is_finite() {
                    return Err(Error::Numeric(format!(
                        "integrand {f} at node {i}, driver {k}"
                    )));
                }
                row[j] += f * bank.increment(k, i);
                comp[j] += f * f * dt;
            }
        }
        values.push(row);
        compensator.push(comp);
    }
    Ok(MartingaleFieldSample {
        lattice: lattice.clone(),
        grid,
        values,
        compensator,
    })
}

impl MartingaleFieldSample {
    /// The compensator is nondecreasing in t at every lattice point.
    pub fn compensator_is_monotone(&self) -> bool {
        for j in 0..self.lattice.len() {
            for i in 1..self.compensator.len() {
                if self.compensator[i][j] < self.compensator[i - 1][j] {
                    return false;
                }
            }
        }
        true
    }
}

/// Result of the p = 2 moment bound check: the empirical mean of
/// int sup_t m^2 dx (plus two standard errors) against four times the
/// expected terminal compensator integral — Doob's L^2 constant.
#[derive(Debug, Clone)]
pub struct SupBoundReport {
    pub estimate: McEstimate,
    pub bound: f64,
    pub pass: bool,
    pub replicates: usize,
}

/// Verify E int_Gamma sup_{t <= T} m(t,x)^2 dx <= 4 E int_Gamma A_T(x) dx
/// over replicate banks, for a deterministic integrand family.
///
/// Only p = 2 is supported: it is the one exponent with a certified
/// explicit constant; a bound with an unspecified constant is not
/// falsifiable.
pub fn sup_integral_bound_check(
    f_family: impl Fn(usize, usize, f64, &[f64]) -> f64,
    drivers: usize,
    lattice: &SpatialLattice,
    grid: TimeGrid,
    p: u32,
    seed: u64,
    replicates: usize,
) -> Result<SupBoundReport> {
    if p != 2 {
        return Err(Error::Capability(format!(
            "sup-integral bound check only supports p = 2 (Doob), got {p}"
        )));
    }
    if replicates < 2 {
        return Err(Error::InvalidArgument(
            "bound check needs at least 2 replicates".into(),
        ));
    }
    let n = grid.steps();
    let dt = grid.dt();
    let jn = lattice.len();

    // Deterministic right-hand side: 4 * int_Gamma A_T(x) dx.
    let mut bound = 0.0;
    for j in 0..jn {
        let x = lattice.point(j);
        let mut a_t = 0.0;
        for i in 0..n {
            let t = grid.node_time(i);
            for k in 0..drivers {
                let f = f_family(k, i, t, x);
                a_t += f * f * dt;
            }
        }
        bound += lattice.weight(j) * a_t;
    }
    bound *= 4.0;

    let mut samples = Vec::with_capacity(replicates);
    for r in 0..replicates {
        let bank = WienerBank::generate(derive_seed(seed, r as u64), drivers, grid)?;
        // Running per-point sup of |m| without materializing the field.
        let mut m = vec![0.0; jn];
        let mut sup = vec![0.0f64; jn];
        for i in 0..n {
            let t = grid.node_time(i);
            for j in 0..jn {
                let x = lattice.point(j);
                for k in 0..drivers {
                    m[j] += f_family(k, i, t, x) * bank.increment(k, i);
                }
                sup[j] = sup[j].max(m[j].abs());
            }
        }
        let mut s = 0.0;
        for j in 0..jn {
            s += lattice.weight(j) * sup[j] * sup[j];
        }
        samples.push(s);
    }
    let estimate = mc_estimate(&samples)?;
    let pass = estimate.mean + 2.0 * estimate.stderr() <= bound;
    Ok(SupBoundReport {
        estimate,
        bound,
        pass,
        replicates,
    })
}

/// Holder-regularity estimate of a sampled martingale field.
#[derive(Debug, Clone)]
pub struct HolderReport {
    /// Fitted exponent; NaN when every increment vanishes.
    pub lambda_hat: f64,
    /// Max increment ratio sup_t |dm| / sep^lambda at the finest scale.
    pub nu_hat: f64,
    /// Target exponent lambda = n - d/p.
    pub lambda_target: f64,
    /// (separation, sup increment) per dyadic scale.
    pub scales: Vec<(f64, f64)>,
    pub vacuous: bool,
    pub pass: bool,
}

/// Estimate the Holder exponent of x -> m(t, x), uniformly in t, from
/// lattice increments over dyadic separation scales. The target exponent
/// is lambda = n - d/p; the check passes when the fitted slope reaches it
/// up to the margin.
pub fn holder_field_check(
    field: &MartingaleFieldSample,
    n_deriv: usize,
    p: usize,
    margin: f64,
) -> Result<HolderReport> {
    let d = field.lattice.dim();
    if d != 1 {
        return Err(Error::InvalidArgument(
            "Holder check expects a one-dimensional lattice".into(),
        ));
    }
    if p == 0 {
        return Err(Error::InvalidArgument("p must be positive".into()));
    }
    let lambda_target = n_deriv as f64 - d as f64 / p as f64;
    if !(lambda_target > 0.0 && lambda_target <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target exponent {lambda_target} outside (0, 1]"
        )));
    }
    let jn = field.lattice.len();
    if jn < 17 {
        return Err(Error::InvalidArgument(
            "lattice too coarse: need at least 17 points for 3 dyadic scales".into(),
        ));
    }
    let h = field.lattice.spacing(0);
    // Separations are capped at a quarter of the domain span: the exponent
    // is a local-regularity quantity and increments across the whole
    // domain saturate, which would bias the fitted slope downward.
    let s_max = (jn - 1) / 4;
    let mut scales = Vec::new();
    let mut s = 1usize;
    while s <= s_max {
        let mut sup = 0.0f64;
        for j in 0..jn - s {
            for row in &field.values {
                sup = sup.max((row[j + s] - row[j]).abs());
            }
        }
        scales.push((s as f64 * h, sup));
        s *= 2;
    }
    if scales.len() < 3 {
        return Err(Error::InvalidArgument(
            "fewer than 3 dyadic separation scales available".into(),
        ));
    }
    let finest = scales[0];
    if scales.iter().all(|&(_, sup)| sup == 0.0) {
        return Ok(HolderReport {
            lambda_hat: f64::NAN,
            nu_hat: 0.0,
            lambda_target,
            scales,
            vacuous: true,
            pass: true,
        });
    }
    // OLS of log sup-increment against log separation.
    let pts: Vec<(f64, f64)> = scales
        .iter()
        .filter(|&&(_, sup)| sup > 0.0)
        .map(|&(sep, sup)| (sep.ln(), sup.ln()))
        .collect();
    let n = pts.len() as f64;
    let sum_x: f64 = pts.iter().map(|p| p.0).sum();
    let sum_y: f64 = pts.iter().map(|p| p.1).sum();
    let sum_xx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sum_xy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sum_xx - sum_x * sum_x;
    let lambda_hat = (n * sum_xy - sum_x * sum_y) / denom;
    let nu_hat = finest.1 / finest.0.powf(lambda_target);
    Ok(HolderReport {
        lambda_hat,
        nu_hat,
        lambda_target,
        scales,
        vacuous: false,
        pass: lambda_hat >= lambda_target - margin,
    })
}

/// Both sides of the Minkowski-type inequality used to control the
/// interchange: the l2(time, drivers) norm of the lattice integrals is at
/// most the lattice integral of the pointwise l2 norms.
pub fn minkowski_sides(
    h_family: impl Fn(usize, usize, f64, &[f64]) -> f64,
    drivers: usize,
    lattice: &SpatialLattice,
    grid: TimeGrid,
) -> (f64, f64) {
    let n = grid.steps();
    let dt = grid.dt();
    let mut lhs_sq = 0.0;
    for k in 0..drivers {
        for i in 0..n {
            let t = grid.node_time(i);
            let bar = lattice.integrate(|x| h_family(k, i, t, x));
            lhs_sq += bar * bar * dt;
        }
    }
    let rhs = lattice.integrate(|x| {
        let mut sq = 0.0;
        for k in 0..drivers {
            for i in 0..n {
                let t = grid.node_time(i);
                let h = h_family(k, i, t, x);
                sq += h * h * dt;
            }
        }
        sq.sqrt()
    });
    (lhs_sq.sqrt(), rhs)
}
