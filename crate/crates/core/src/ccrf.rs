//! Continuous CRF over superpixels.
//!
//! The region graph Laplacian `Φ = D − W` plus `λI` gives a sparse, symmetric,
//! strictly diagonally dominant matrix `A`. The MAP scores are `Z_c = A⁻¹ Z_s`
//! column by column, found with Gauss-Seidel. Backward:
//!
//! * `dL/dZ_s = A⁻¹ dL/dZ_c` (A is symmetric, so the same solver applies),
//! * `dL/dΦ = −dL/dZ_s ⊗ Z_c`, materialized on the diagonal and edge support only,
//! * `dL/dW_pq = dΦ_pp + dΦ_qq − dΦ_pq − dΦ_qp`, one parameter per undirected edge.
//!
//! Note the unary weight: the MAP of the `λ`-weighted energy would be `λ A⁻¹ Z_s`;
//! this layer computes `A⁻¹ Z_s`, which differs only by a constant factor.

use crate::error::{ensure, Error, Result};
use crate::sppool::{RegionAffinity, RegionFeatures};

pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Relative residual `‖b − Ax‖₂ / max(‖b‖₂, ε)` at which to stop.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 500,
        }
    }
}

/// `A = D − W + λI` in row-adjacency form.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfSystem {
    lambda: f64,
    diag: Vec<f64>,
    /// Off-diagonal entries `(column, A_pc)` per row, columns ascending.
    rows: Vec<Vec<(usize, f64)>>,
    pairs: Vec<(usize, usize)>,
    pub solver: SolverConfig,
}

pub fn assemble_system(w: &RegionAffinity, lambda: f64) -> Result<CrfSystem> {
    ensure(lambda.is_finite() && lambda > 0.0, || {
        format!("lambda must be positive, got {lambda}")
    })?;
    let n = w.regions();
    let mut diag = vec![lambda; n];
    let mut rows = vec![Vec::new(); n];
    for (&(p, q), &wpq) in w.pairs().iter().zip(w.weights()) {
        ensure(wpq.is_finite() && wpq >= 0.0, || {
            format!("affinity W_{p}{q} = {wpq} is negative or not finite")
        })?;
        diag[p] += wpq;
        diag[q] += wpq;
        rows[p].push((q, -wpq));
        rows[q].push((p, -wpq));
    }
    for r in &mut rows {
        r.sort_by_key(|e| e.0);
    }
    Ok(CrfSystem {
        lambda,
        diag,
        rows,
        pairs: w.pairs().to_vec(),
        solver: SolverConfig::default(),
    })
}

impl CrfSystem {
    pub fn with_solver(mut self, solver: SolverConfig) -> Self {
        self.solver = solver;
        self
    }

    pub fn size(&self) -> usize {
        self.diag.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Off-diagonal entries of row `p`.
    pub fn row(&self, p: usize) -> &[(usize, f64)] {
        &self.rows[p]
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.size())
            .map(|p| self.diag[p] * x[p] + self.rows[p].iter().map(|&(q, a)| a * x[q]).sum::<f64>())
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.size();
        let mut m = vec![vec![0.0; n]; n];
        for p in 0..n {
            m[p][p] = self.diag[p];
            for &(q, a) in &self.rows[p] {
                m[p][q] = a;
            }
        }
        m
    }

    pub fn is_strictly_diagonally_dominant(&self) -> bool {
        (0..self.size()).all(|p| self.diag[p] > self.rows[p].iter().map(|e| e.1.abs()).sum::<f64>())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    /// Final relative residual.
    pub residual: f64,
    pub iterations: usize,
    /// Relative residual before the first sweep and after every sweep.
    pub history: Vec<f64>,
    pub status: SolveStatus,
}

impl Solution {
    pub fn into_result(self, channel: usize) -> Result<Solution> {
        match self.status {
            SolveStatus::Converged => Ok(self),
            SolveStatus::MaxIterations => Err(Error::NotConverged {
                channel,
                iterations: self.iterations,
                residual: self.residual,
            }),
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn relative_residual(system: &CrfSystem, b: &[f64], x: &[f64], b_norm: f64) -> f64 {
    let ax = system.mul_vec(x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let rn = norm(&r);
    if rn == 0.0 {
        0.0
    } else {
        rn / b_norm.max(f64::MIN_POSITIVE)
    }
}

/// Forward Gauss-Seidel sweeps in ascending node order, starting from `x0`.
pub fn gauss_seidel_solve(system: &CrfSystem, b: &[f64], x0: &[f64]) -> Result<Solution> {
    let n = system.size();
    ensure(b.len() == n && x0.len() == n, || {
        format!("system is {n}x{n} but b has {} and x0 has {} entries", b.len(), x0.len())
    })?;
    let cfg = system.solver;
    let b_norm = norm(b);
    let mut x = x0.to_vec();
    let mut residual = relative_residual(system, b, &x, b_norm);
    let mut history = vec![residual];
    let mut iterations = 0;
    while residual > cfg.tolerance && iterations < cfg.max_iterations {
        for p in 0..n {
            let off: f64 = system.rows[p].iter().map(|&(q, a)| a * x[q]).sum();
            x[p] = (b[p] - off) / system.diag[p];
        }
        iterations += 1;
        residual = relative_residual(system, b, &x, b_norm);
        history.push(residual);
    }
    let status = if residual <= cfg.tolerance {
        SolveStatus::Converged
    } else {
        SolveStatus::MaxIterations
    };
    Ok(Solution {
        x,
        residual,
        iterations,
        history,
        status,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfOutput {
    pub zc: RegionFeatures,
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
}

fn solve_columns(system: &CrfSystem, rhs: &RegionFeatures) -> Result<CrfOutput> {
    ensure(rhs.regions() == system.size(), || {
        format!("{} regions but the system is {}x{}", rhs.regions(), system.size(), system.size())
    })?;
    let mut zc = RegionFeatures::zeros(rhs.regions(), rhs.channels());
    let mut residuals = Vec::with_capacity(rhs.channels());
    let mut iterations = Vec::with_capacity(rhs.channels());
    for c in 0..rhs.channels() {
        let b = rhs.column(c);
        let sol = gauss_seidel_solve(system, &b, &b)?.into_result(c)?;
        zc.set_column(c, &sol.x);
        residuals.push(sol.residual);
        iterations.push(sol.iterations);
    }
    Ok(CrfOutput {
        zc,
        residuals,
        iterations,
    })
}

/// `Z_c[:, c] = A⁻¹ Z_s[:, c]`, warm-started from `Z_s`.
pub fn ccrf_forward(zs: &RegionFeatures, system: &CrfSystem) -> Result<CrfOutput> {
    solve_columns(system, zs)
}

/// `½ Z_cᵀ A Z_c − Z_cᵀ Z_s + ½ Z_sᵀ Z_s`, summed over channels.
pub fn energy(zc: &RegionFeatures, zs: &RegionFeatures, system: &CrfSystem) -> f64 {
    (0..zc.channels())
        .map(|c| {
            let x = zc.column(c);
            let s = zs.column(c);
            let ax = system.mul_vec(&x);
            let quad: f64 = x.iter().zip(&ax).map(|(a, b)| a * b).sum();
            let lin: f64 = x.iter().zip(&s).map(|(a, b)| a * b).sum();
            let ss: f64 = s.iter().map(|v| v * v).sum();
            0.5 * quad - lin + 0.5 * ss
        })
        .sum()
}

/// `dL/dZ_s = A⁻¹ dL/dZ_c`.
pub fn ccrf_backward_zs(grad_zc: &RegionFeatures, system: &CrfSystem) -> Result<RegionFeatures> {
    Ok(solve_columns(system, grad_zc)?.zc)
}

/// `dL/dΦ` restricted to the diagonal and the edge support.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiGradient {
    pub diag: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
    /// `(dL/dΦ_pq, dL/dΦ_qp)` per edge.
    pub off: Vec<(f64, f64)>,
}

impl PhiGradient {
    pub fn negate(&mut self) {
        self.diag.iter_mut().for_each(|v| *v = -*v);
        self.off.iter_mut().for_each(|(a, b)| {
            *a = -*a;
            *b = -*b;
        });
    }
}

/// `dL/dΦ_pq = −Σ_c dL/dZ_s(p, c) · Z_c(q, c)` on the support of `system`.
pub fn ccrf_backward_phi(grad_zs: &RegionFeatures, zc: &RegionFeatures, system: &CrfSystem) -> Result<PhiGradient> {
    ensure(
        grad_zs.regions() == system.size()
            && zc.regions() == system.size()
            && grad_zs.channels() == zc.channels(),
        || "dL/dZ_s, Z_c and the system disagree in shape".into(),
    )?;
    let outer = |p: usize, q: usize| -> f64 {
        -(0..zc.channels()).map(|c| grad_zs.get(p, c) * zc.get(q, c)).sum::<f64>()
    };
    Ok(PhiGradient {
        diag: (0..system.size()).map(|p| outer(p, p)).collect(),
        pairs: system.pairs.clone(),
        off: system.pairs.iter().map(|&(p, q)| (outer(p, q), outer(q, p))).collect(),
    })
}

/// `dL/dW_pq = dΦ_pp + dΦ_qq − dΦ_pq − dΦ_qp`.
pub fn ccrf_backward_w(grad_phi: &PhiGradient, regions: usize) -> Result<RegionAffinity> {
    let triples: Vec<(usize, usize, f64)> = grad_phi
        .pairs
        .iter()
        .zip(&grad_phi.off)
        .map(|(&(p, q), &(gpq, gqp))| (p, q, grad_phi.diag[p] + grad_phi.diag[q] - gpq - gqp))
        .collect();
    RegionAffinity::from_triples(regions, &triples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> CrfSystem {
        let w = RegionAffinity::from_triples(2, &[(0, 1, 1.0)]).unwrap();
        assemble_system(&w, 1.0).unwrap()
    }

    fn col(v: &[f64]) -> RegionFeatures {
        RegionFeatures::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn empty_graph_is_identity() {
        let w = RegionAffinity::from_triples(3, &[]).unwrap();
        let a = assemble_system(&w, 1.0).unwrap();
        assert_eq!(a.to_dense(), vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
    }

    #[test]
    fn two_node_assembly() {
        assert_eq!(two_node().to_dense(), vec![vec![2.0, -1.0], vec![-1.0, 2.0]]);
    }

    #[test]
    fn row_sums_equal_lambda() {
        let w = RegionAffinity::from_triples(4, &[(0, 1, 0.3), (1, 2, 2.0), (0, 3, 0.7), (2, 3, 1.1)]).unwrap();
        let a = assemble_system(&w, 0.25).unwrap();
        for row in a.to_dense() {
            assert!((row.iter().sum::<f64>() - 0.25).abs() < 1e-12);
        }
        assert!(a.is_strictly_diagonally_dominant());
    }

    #[test]
    fn rejects_bad_lambda_and_negative_weights() {
        let w = RegionAffinity::from_triples(2, &[(0, 1, 1.0)]).unwrap();
        assert!(matches!(assemble_system(&w, 0.0), Err(Error::InvalidArgument(_))));
        assert!(assemble_system(&w, -1.0).is_err());
        let neg = RegionAffinity::from_triples(2, &[(0, 1, -0.1)]).unwrap();
        assert!(matches!(assemble_system(&neg, 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn identity_system_solves_in_one_sweep() {
        let w = RegionAffinity::from_triples(3, &[]).unwrap();
        let a = assemble_system(&w, 1.0).unwrap();
        let s = gauss_seidel_solve(&a, &[1.5, -2.0, 0.25], &[0.0; 3]).unwrap();
        assert_eq!(s.x, vec![1.5, -2.0, 0.25]);
        assert_eq!(s.iterations, 1);
        assert_eq!(s.status, SolveStatus::Converged);
    }

    #[test]
    fn two_node_solve() {
        let s = gauss_seidel_solve(&two_node(), &[3.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-7 && (s.x[1] - 1.0).abs() < 1e-7);
        assert!(s.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn non_convergence_is_reported() {
        let a = two_node().with_solver(SolverConfig {
            tolerance: 1e-12,
            max_iterations: 2,
        });
        let s = gauss_seidel_solve(&a, &[3.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(s.status, SolveStatus::MaxIterations);
        let err = ccrf_forward(&col(&[3.0, 0.0]), &a).unwrap_err();
        assert!(matches!(err, Error::NotConverged { channel: 0, iterations: 2, .. }));
    }

    #[test]
    fn forward_examples() {
        let w = RegionAffinity::from_triples(3, &[]).unwrap();
        let id = assemble_system(&w, 1.0).unwrap();
        let zs = RegionFeatures::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(ccrf_forward(&zs, &id).unwrap().zc, zs);

        let out = ccrf_forward(&col(&[3.0, 0.0]), &two_node()).unwrap();
        assert!((out.zc.get(0, 0) - 2.0).abs() < 1e-7);
        assert!((out.zc.get(1, 0) - 1.0).abs() < 1e-7);

        let w = RegionAffinity::from_triples(3, &[(0, 1, 5.0), (1, 2, 0.1)]).unwrap();
        let a = assemble_system(&w, 1.0).unwrap();
        let flat = col(&[0.7, 0.7, 0.7]);
        let out = ccrf_forward(&flat, &a).unwrap();
        assert!(out.zc.as_slice().iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn energy_examples() {
        let w = RegionAffinity::from_triples(2, &[]).unwrap();
        let id = assemble_system(&w, 1.0).unwrap();
        let z = col(&[0.3, -1.2]);
        assert!(energy(&z, &z, &id).abs() < 1e-15);
        let e = energy(&col(&[2.0, 1.0]), &col(&[3.0, 0.0]), &two_node());
        assert!((e - 1.5).abs() < 1e-12);
    }

    #[test]
    fn backward_examples() {
        let a = two_node().with_solver(SolverConfig {
            tolerance: 1e-15,
            max_iterations: 500,
        });
        let dzs = ccrf_backward_zs(&col(&[1.0, 0.0]), &a).unwrap();
        assert!((dzs.get(0, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((dzs.get(1, 0) - 1.0 / 3.0).abs() < 1e-12);

        let dphi = ccrf_backward_phi(&dzs, &col(&[2.0, 1.0]), &a).unwrap();
        assert!((dphi.diag[0] + 4.0 / 3.0).abs() < 1e-12);
        assert!((dphi.diag[1] + 1.0 / 3.0).abs() < 1e-12);
        assert!((dphi.off[0].0 + 2.0 / 3.0).abs() < 1e-12);
        assert!((dphi.off[0].1 + 2.0 / 3.0).abs() < 1e-12);

        let dw = ccrf_backward_w(&dphi, 2).unwrap();
        assert!((dw.get(0, 1).unwrap() + 1.0 / 3.0).abs() < 1e-12);

        let zero = ccrf_backward_phi(&col(&[0.0, 0.0]), &col(&[2.0, 1.0]), &a).unwrap();
        assert!(zero.diag.iter().all(|&v| v == 0.0));
        assert_eq!(ccrf_backward_w(&zero, 2).unwrap().weights(), &[0.0]);
    }
}
