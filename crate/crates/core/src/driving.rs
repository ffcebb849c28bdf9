//! The driving Ito process x_t, its diffusion matrix, and the operators
//! L v = a^{ij} D_ij v + b^i D_i v and Lambda^k v = sigma^{ik} D_i v.
//!
//! All time integrands are evaluated at the left endpoint (Ito convention),
//! so paths are left-point Euler and exact whenever the coefficients are
//! constant in time.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::SpatialField;
use crate::noise::{TimeGrid, WienerBank};

type DriftFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;
type SigmaFn = Arc<dyn Fn(f64) -> Vec<Vec<f64>> + Send + Sync>;

/// Time-indexed drift b(t) in R^d and diffusion rows sigma(t), a d x K
/// matrix stored row-major (row i is sigma^{i.}).
#[derive(Clone)]
pub struct DrivingCoefficients {
    dim: usize,
    drivers: usize,
    drift: DriftFn,
    sigma: SigmaFn,
}

impl std::fmt::Debug for DrivingCoefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DrivingCoefficients")
            .field("dim", &self.dim)
            .field("drivers", &self.drivers)
            .finish()
    }
}

impl DrivingCoefficients {
    pub fn constant(b: Vec<f64>, sigma: Vec<Vec<f64>>) -> Result<Self> {
        let dim = b.len();
        if dim == 0 || sigma.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "drift has dim {dim} but sigma has {} rows",
                sigma.len()
            )));
        }
        let drivers = sigma[0].len();
        if drivers == 0 || sigma.iter().any(|row| row.len() != drivers) {
            return Err(Error::InvalidArgument("ragged sigma matrix".into()));
        }
        if b.iter().any(|v| !v.is_finite())
            || sigma.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument("non-finite coefficient".into()));
        }
        Ok(DrivingCoefficients {
            dim,
            drivers,
            drift: Arc::new(move |_| b.clone()),
            sigma: Arc::new(move |_| sigma.clone()),
        })
    }

    pub fn time_varying(
        dim: usize,
        drivers: usize,
        drift: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
        sigma: impl Fn(f64) -> Vec<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        DrivingCoefficients {
            dim,
            drivers,
            drift: Arc::new(drift),
            sigma: Arc::new(sigma),
        }
    }

    pub fn zero(dim: usize, drivers: usize) -> Self {
        DrivingCoefficients {
            dim,
            drivers,
            drift: Arc::new(move |_| vec![0.0; dim]),
            sigma: Arc::new(move |_| vec![vec![0.0; drivers]; dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drivers(&self) -> usize {
        self.drivers
    }

    pub fn drift_at(&self, t: f64) -> Vec<f64> {
        (self.drift)(t)
    }

    pub fn sigma_at(&self, t: f64) -> Vec<Vec<f64>> {
        (self.sigma)(t)
    }

    pub fn diffusion_at(&self, t: f64) -> Vec<Vec<f64>> {
        diffusion_matrix(&self.sigma_at(t))
    }

    /// Grid sum of |b_t| + tr a_t over [0, T]: finite iff the coefficients
    /// satisfy the integrability hypothesis at grid resolution.
    pub fn integrability_proxy(&self, grid: TimeGrid) -> f64 {
        let dt = grid.dt();
        let mut acc = 0.0;
        for i in 0..grid.steps() {
            let t = grid.node_time(i);
            let b = self.drift_at(t);
            let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            let a = self.diffusion_at(t);
            acc += dt * (b_norm + trace(&a));
        }
        acc
    }
}

/// a^{ij} = (1/2) sum_k sigma^{ik} sigma^{jk}: symmetric positive
/// semidefinite by construction.
pub fn diffusion_matrix(sigma: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = sigma.len();
    let mut a = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let mut s = 0.0;
            for k in 0..sigma[i].len() {
                s += sigma[i][k] * sigma[j][k];
            }
            a[i][j] = 0.5 * s;
            a[j][i] = a[i][j];
        }
    }
    a
}

pub fn trace(a: &[Vec<f64>]) -> f64 {
    (0..a.len()).map(|i| a[i][i]).sum()
}

fn matrix_is_zero(a: &[Vec<f64>]) -> bool {
    a.iter().flatten().all(|&v| v == 0.0)
}

/// Left-point Euler path of the driving process, one value per grid node,
/// starting at the origin.
#[derive(Debug, Clone)]
pub struct DrivingPath {
    grid: TimeGrid,
    /// values[i] is x(t_i) in R^d.
    values: Vec<Vec<f64>>,
}

impl DrivingPath {
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// x(t_{i+1}) = x(t_i) + b(t_i) dt + sum_k sigma^{.k}(t_i) dW^k_i.
pub fn simulate_driving(coeffs: &DrivingCoefficients, bank: &WienerBank) -> Result<DrivingPath> {
    if coeffs.drivers() != bank.drivers() {
        return Err(Error::InvalidArgument(format!(
            "coefficients expect {} drivers, bank has {}",
            coeffs.drivers(),
            bank.drivers()
        )));
    }
    let grid = bank.grid();
    let d = coeffs.dim();
    let dt = grid.dt();
    let mut values = Vec::with_capacity(grid.steps() + 1);
    values.push(vec![0.0; d]);
    for i in 0..grid.steps() {
        let t = grid.node_time(i);
        let b = coeffs.drift_at(t);
        let sigma = coeffs.sigma_at(t);
        let prev = &values[i];
        let mut next = Vec::with_capacity(d);
        for p in 0..d {
            let mut diff = 0.0;
            for k in 0..coeffs.drivers() {
                diff += sigma[p][k] * bank.increment(k, i);
            }
            next.push(prev[p] + (b[p] * dt + diff));
        }
        values.push(next);
    }
    Ok(DrivingPath { grid, values })
}

/// When to freeze the identities: at the horizon, or at the first grid
/// node where |x| leaves the ball of the given radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StoppingRule {
    Horizon,
    FirstExit { radius: f64 },
}

/// Grid index of the stopping time: N for the deterministic horizon, or
/// the smallest i with |x(t_i)| >= R (N if the path never exits).
pub fn stopping_index(path: &DrivingPath, rule: &StoppingRule) -> usize {
    let n = path.len() - 1;
    match rule {
        StoppingRule::Horizon => n,
        StoppingRule::FirstExit { radius } => {
            for i in 0..=n {
                let norm_sq: f64 = path.node(i).iter().map(|v| v * v).sum();
                if norm_sq.sqrt() >= *radius {
                    return i;
                }
            }
            n
        }
    }
}

/// L v (x) = a^{ij} D_ij v(x) + b^i D_i v(x), summation over repeated
/// indices. When a vanishes identically the second derivatives of v are
/// never requested.
pub fn apply_l(v: &SpatialField, a: &[Vec<f64>], b: &[f64], x: &[f64]) -> Result<f64> {
    let d = v.dim();
    let mut acc = 0.0;
    if !matrix_is_zero(a) {
        for i in 0..d {
            for j in 0..d {
                if a[i][j] != 0.0 {
                    acc += a[i][j] * v.d2(i, j, x)?;
                }
            }
        }
    }
    for (i, &bi) in b.iter().enumerate() {
        if bi != 0.0 {
            acc += bi * v.d1(i, x)?;
        }
    }
    Ok(acc)
}

/// Lambda v (x) as an l2 vector: component k is sigma^{ik} D_i v(x).
pub fn apply_lambda(v: &SpatialField, sigma: &[Vec<f64>], x: &[f64]) -> Result<Vec<f64>> {
    let d = v.dim();
    let drivers = sigma[0].len();
    let mut grad = Vec::with_capacity(d);
    for i in 0..d {
        grad.push(v.d1(i, x)?);
    }
    let mut out = Vec::with_capacity(drivers);
    for k in 0..drivers {
        let mut s = 0.0;
        for i in 0..d {
            s += sigma[i][k] * grad[i];
        }
        out.push(s);
    }
    Ok(out)
}

/// Squared l2 norm |Lambda v|^2; equals 2 (Dv)^T a (Dv).
pub fn lambda_norm_sq(v: &SpatialField, sigma: &[Vec<f64>], x: &[f64]) -> Result<f64> {
    if matrix_is_zero(sigma) {
        return Ok(0.0);
    }
    let lambda = apply_lambda(v, sigma, x)?;
    Ok(lambda.iter().map(|l| l * l).sum())
}
