//! Per-block transmit-covariance optimization.
//!
//! Given the predicted state for the next block and the current Bayesian
//! information matrix, the optimizer picks per-(BS, subcarrier) transmit
//! covariances minimizing a weighted sum of the bound's diagonal entries:
//!
//! ```text
//! min  sum_a w_a alpha_a
//! s.t. [[J_B(R), e_a], [e_a^T, alpha_a]] >= 0   for every weighted index a
//!      sum_m tr(R_{k,m}) <= P_k                 per BS
//!      R_{k,m} >= 0
//! ```
//!
//! The Schur-complement blocks encode `alpha_a >= [J_B(R)^{-1}]_{aa}`, and
//! `J_B` is an affine function of the covariances, so the problem is a
//! semidefinite program. It is solved by a log-det barrier interior-point
//! method written for this problem's structure: the LMI blocks share the
//! same top-left matrix, so each barrier term factors into `log det J` plus
//! the log of a scalar Schur slack, and all derivatives reduce to small
//! dense products.
//!
//! The optimal covariance of each BS lies in the span of the predicted
//! steering vectors and their angle derivatives; by default the solver
//! works directly in that subspace (2Q complex dimensions instead of N_T),
//! with the full Hermitian cone retained as a configuration choice and as a
//! cross-check.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fim::{compute_echo_kernels, BeamEntry, BeamPlan, EchoKernels};
use crate::linalg;
use crate::motion::MotionModel;
use crate::pcrb::{prior_info, Bim};
use crate::scenario::{
    measurement_jacobian, GlobalState, OptimizationSpace, PowerMode, Scenario,
};

/// One matrix variable: the covariance of a (BS, subcarrier) pair, expressed
/// in a Hermitian coordinate basis (full space or steering subspace).
struct VarBlock {
    bs: usize,
    /// Index into the BS's subcarrier list.
    sub_index: usize,
    /// Matrix dimension of the variable (N_T, or the subspace rank).
    p: usize,
    /// Hermitian basis elements, p x p, one per real coordinate.
    basis: Vec<DMatrix<Complex64>>,
    /// Per-BS measurement FIM image of each basis element (5Q x 5Q).
    phi: Vec<DMatrix<f64>>,
    /// Trace of each basis element (power is linear with these weights).
    basis_trace: Vec<f64>,
    /// Orthonormal expansion to the full space (None in full mode).
    expand: Option<DMatrix<Complex64>>,
    /// Offset of this block's coordinates in the stacked variable vector.
    offset: usize,
}

struct PowerConstraint {
    limit: f64,
    blocks: Vec<usize>,
}

/// The assembled optimization problem for one sensing block.
pub struct SdpProblem {
    /// Beam-independent information: the motion prior at the prediction.
    base_info: DMatrix<f64>,
    /// Per-BS row blocks of the measurement Jacobian at the prediction.
    h_blocks: Vec<DMatrix<f64>>,
    /// Unreduced per-BS kernels, kept for evaluating full-space covariances.
    full_kernels: Vec<EchoKernels>,
    blocks: Vec<VarBlock>,
    power: Vec<PowerConstraint>,
    /// Weighted state indices (w_a > 0) and their weights.
    weighted: Vec<(usize, f64)>,
    state_dim: usize,
    num_vars: usize,
    space: OptimizationSpace,
}

/// Hermitian coordinate basis of dimension p: diagonal units first, then
/// (real, imaginary) pairs for each off-diagonal position.
fn hermitian_basis(p: usize) -> Vec<DMatrix<Complex64>> {
    let mut basis = Vec::with_capacity(p * p);
    for i in 0..p {
        let mut e = DMatrix::zeros(p, p);
        e[(i, i)] = Complex64::new(1.0, 0.0);
        basis.push(e);
    }
    for i in 0..p {
        for j in (i + 1)..p {
            let mut re = DMatrix::zeros(p, p);
            re[(i, j)] = Complex64::new(1.0, 0.0);
            re[(j, i)] = Complex64::new(1.0, 0.0);
            basis.push(re);
            let mut im = DMatrix::zeros(p, p);
            im[(i, j)] = Complex64::new(0.0, 1.0);
            im[(j, i)] = Complex64::new(0.0, -1.0);
            basis.push(im);
        }
    }
    basis
}

/// Coordinates of a Hermitian matrix in [`hermitian_basis`] order.
fn hermitian_coords(m: &DMatrix<Complex64>) -> Vec<f64> {
    let p = m.nrows();
    let mut x = Vec::with_capacity(p * p);
    for i in 0..p {
        x.push(m[(i, i)].re);
    }
    for i in 0..p {
        for j in (i + 1)..p {
            x.push(m[(i, j)].re);
            x.push(m[(i, j)].im);
        }
    }
    x
}

/// Orthonormal basis of the span of the predicted steering vectors and
/// their derivatives for one BS.
pub fn steering_span_basis(
    bs: &crate::scenario::BsConfig,
    aods: &[f64],
    wavelength: f64,
) -> DMatrix<Complex64> {
    let mut cols = Vec::with_capacity(2 * aods.len());
    for &phi in aods {
        cols.push(bs.tx_steering(phi, wavelength));
    }
    for &phi in aods {
        cols.push(bs.tx_steering_deriv(phi, wavelength));
    }
    let stacked = DMatrix::from_columns(&cols);
    let svd = stacked.svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * smax)
        .count()
        .max(1);
    u.columns(0, rank).into_owned()
}

/// Builds the per-block problem from the predicted state and previous BIM.
///
/// The linear map from covariances to the information matrix is realized by
/// evaluating the echo kernels on every Hermitian basis element, either of
/// the full N_T x N_T space or of the steering subspace.
pub fn build_problem(
    predicted: &GlobalState,
    scenario: &Scenario,
    model: &MotionModel,
    prev_bim: &Bim,
    weights: &[f64],
) -> Result<SdpProblem> {
    let layout = scenario.layout();
    if weights.len() != layout.kinematic_dim() {
        return Err(Error::Dimension {
            what: "weights",
            expected: layout.kinematic_dim(),
            got: weights.len(),
        });
    }
    let base_info = prior_info(prev_bim, model)?.into_matrix();
    let h = measurement_jacobian(predicted, scenario)?;
    let per_bs_rows = scenario.meas_layout().per_bs_dim();
    let h_blocks: Vec<DMatrix<f64>> = (0..scenario.num_bs())
        .map(|k| h.rows(k * per_bs_rows, per_bs_rows).into_owned())
        .collect();
    let links = crate::scenario::links_for_state(predicted, scenario)?;
    let lambda = scenario.radio.wavelength();

    let mut blocks = Vec::new();
    let mut power = Vec::new();
    let mut full_kernels = Vec::new();
    let mut offset = 0;
    for (k, bs) in scenario.bss.iter().enumerate() {
        let kernels = compute_echo_kernels(bs, &links[k], &scenario.radio);
        let (p, expand, projected) = match scenario.beamform.space {
            OptimizationSpace::Full => (bs.num_tx, None, None),
            OptimizationSpace::Reduced => {
                let aods: Vec<f64> = links[k].iter().map(|l| l.aod).collect();
                let u = steering_span_basis(bs, &aods, lambda);
                let proj = kernels.projected(&u);
                (u.ncols(), Some(u), Some(proj))
            }
        };
        let eval_kernels = projected.as_ref().unwrap_or(&kernels);
        let basis = hermitian_basis(p);
        let mut bs_block_ids = Vec::new();
        for (j, _) in bs.subcarriers.iter().enumerate() {
            let phi: Vec<DMatrix<f64>> = basis
                .iter()
                .map(|e| eval_kernels.fim_of_covariance(j, e))
                .collect();
            let basis_trace = basis.iter().map(|e| e.trace().re).collect();
            bs_block_ids.push(blocks.len());
            blocks.push(VarBlock {
                bs: k,
                sub_index: j,
                p,
                basis: basis.clone(),
                phi,
                basis_trace,
                expand: expand.clone(),
                offset,
            });
            offset += p * p;
        }
        match scenario.beamform.power_mode {
            PowerMode::Budget => power.push(PowerConstraint {
                limit: bs.tx_power,
                blocks: bs_block_ids,
            }),
            PowerMode::PerSubcarrier => {
                let share = bs.tx_power / bs.subcarriers.len() as f64;
                for id in bs_block_ids {
                    power.push(PowerConstraint {
                        limit: share,
                        blocks: vec![id],
                    });
                }
            }
        }
        full_kernels.push(kernels);
    }

    let weighted = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(a, &w)| (a, w))
        .collect();
    Ok(SdpProblem {
        base_info,
        h_blocks,
        full_kernels,
        blocks,
        power,
        weighted,
        state_dim: layout.dim(),
        num_vars: offset,
        space: scenario.beamform.space,
    })
}

impl SdpProblem {
    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn space(&self) -> OptimizationSpace {
        self.space
    }

    /// Coordinates of per-block Hermitian matrices (in each block's own
    /// space) as a stacked variable vector.
    pub fn coords_of(&self, per_block: &[DMatrix<Complex64>]) -> DVector<f64> {
        assert_eq!(per_block.len(), self.blocks.len());
        let mut x = DVector::zeros(self.num_vars);
        for (b, m) in self.blocks.iter().zip(per_block) {
            for (i, v) in hermitian_coords(m).into_iter().enumerate() {
                x[b.offset + i] = v;
            }
        }
        x
    }

    /// Per-BS measurement FIMs implied by the stacked coordinates.
    fn per_bs_fim(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let rows = self.h_blocks[0].nrows();
        let mut fims = vec![DMatrix::zeros(rows, rows); self.h_blocks.len()];
        for b in &self.blocks {
            for i in 0..b.p * b.p {
                let c = x[b.offset + i];
                if c != 0.0 {
                    fims[b.bs] += &b.phi[i] * c;
                }
            }
        }
        fims
    }

    /// The information matrix J_B(x) = prior + sum_k H_k^T FIM_k(x) H_k.
    pub fn info_matrix_of(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = self.base_info.clone();
        for (k, fim) in self.per_bs_fim(x).iter().enumerate() {
            j += self.h_blocks[k].transpose() * fim * &self.h_blocks[k];
        }
        linalg::symmetrize(&j)
    }

    /// The true objective tr{diag(w) J_B^{-1}} for full-space covariances
    /// (indexed like a beam plan). Used to compare solver output against
    /// baselines on the same footing.
    pub fn objective_of_covariances(
        &self,
        covariances: &[Vec<DMatrix<Complex64>>],
    ) -> Result<f64> {
        let rows = self.h_blocks[0].nrows();
        let mut j = self.base_info.clone();
        for (k, kernels) in self.full_kernels.iter().enumerate() {
            let mut fim = DMatrix::zeros(rows, rows);
            for (jdx, r) in covariances[k].iter().enumerate() {
                fim += kernels.fim_of_covariance(jdx, r);
            }
            j += self.h_blocks[k].transpose() * fim * &self.h_blocks[k];
        }
        let inv = linalg::spd_inverse(&j, "objective information matrix")?;
        Ok(self.weighted.iter().map(|&(a, w)| w * inv[(a, a)]).sum())
    }

    /// Reconstructs full-space covariances from the stacked coordinates.
    fn covariances_of(&self, x: &DVector<f64>) -> Vec<Vec<DMatrix<Complex64>>> {
        let mut out: Vec<Vec<DMatrix<Complex64>>> =
            self.h_blocks.iter().map(|_| Vec::new()).collect();
        for b in &self.blocks {
            let mut s = DMatrix::zeros(b.p, b.p);
            for (i, e) in b.basis.iter().enumerate() {
                s += e * Complex64::from(x[b.offset + i]);
            }
            let full = match &b.expand {
                Some(u) => u * s * u.adjoint(),
                None => s,
            };
            debug_assert_eq!(out[b.bs].len(), b.sub_index);
            out[b.bs].push(full);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Terminate when the barrier gap estimate drops below this fraction of
    /// the objective.
    pub gap_tol: f64,
    /// Barrier parameter growth per outer iteration.
    pub barrier_growth: f64,
    pub max_outer: usize,
    /// Newton decrement threshold (lambda^2 / 2) for centering.
    pub center_tol: f64,
    pub max_newton: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            gap_tol: 1e-6,
            barrier_growth: 5.0,
            max_outer: 200,
            center_tol: 1e-9,
            max_newton: 40,
        }
    }
}

impl SolveOptions {
    pub fn for_scenario(scenario: &Scenario) -> Self {
        SolveOptions {
            gap_tol: scenario.beamform.gap_tol,
            ..SolveOptions::default()
        }
    }
}

/// Per-outer-iteration progress record.
#[derive(Debug, Clone)]
pub struct OuterRecord {
    pub barrier: f64,
    pub objective: f64,
    pub gap: f64,
    /// Smallest slack across the scalar cones at the end of the iteration.
    pub min_slack: f64,
}

#[derive(Debug, Clone)]
pub struct KktResiduals {
    /// Worst power overshoot relative to the budget (negative means slack).
    pub power_excess_rel: f64,
    /// Smallest LMI block eigenvalue relative to its trace.
    pub lmi_min_eig_rel: f64,
    /// Smallest covariance eigenvalue relative to its trace.
    pub cov_min_eig_rel: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    /// Full-space covariances per BS, aligned with its subcarrier list.
    pub covariances: Vec<Vec<DMatrix<Complex64>>>,
    /// (state index, alpha) pairs for the weighted indices.
    pub alphas: Vec<(usize, f64)>,
    /// sum_a w_a alpha_a at the solution.
    pub objective: f64,
    pub outer_iterations: usize,
    pub newton_iterations: usize,
    pub residuals: KktResiduals,
    pub trace: Vec<OuterRecord>,
}

/// Factorizations and slacks at a strictly feasible point.
struct EvalPoint {
    j_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// Schur slacks s_a = alpha_a - [J^{-1}]_{aa}.
    schur_slacks: Vec<f64>,
    power_slacks: Vec<f64>,
    cone_chols: Vec<nalgebra::Cholesky<Complex64, nalgebra::Dyn>>,
    barrier_value: f64,
}

struct Workspace<'p> {
    problem: &'p SdpProblem,
    /// Barrier degree: (d+1) per LMI + 1 per power constraint + p per cone.
    nu: f64,
}

impl<'p> Workspace<'p> {
    fn new(problem: &'p SdpProblem) -> Self {
        let d = problem.state_dim;
        let nu = problem.weighted.len() as f64 * (d as f64 + 1.0)
            + problem.power.len() as f64
            + problem.blocks.iter().map(|b| b.p as f64).sum::<f64>();
        Workspace { problem, nu }
    }

    fn objective(&self, alphas: &[f64]) -> f64 {
        self.problem
            .weighted
            .iter()
            .zip(alphas)
            .map(|(&(_, w), &a)| w * a)
            .sum()
    }

    /// Evaluates the barrier at (x, alphas); None when not strictly feasible.
    fn eval(&self, t: f64, x: &DVector<f64>, alphas: &[f64]) -> Option<EvalPoint> {
        let p = self.problem;
        let j = p.info_matrix_of(x);
        let j_chol = j.clone().cholesky()?;
        let mut ln_det_j = 0.0;
        for i in 0..j.nrows() {
            let l = j_chol.l_dirty()[(i, i)];
            if !(l > 0.0) {
                return None;
            }
            ln_det_j += l.ln();
        }
        ln_det_j *= 2.0;

        let mut barrier = t * self.objective(alphas);
        barrier -= p.weighted.len() as f64 * ln_det_j;
        let mut schur_slacks = Vec::with_capacity(p.weighted.len());
        for (idx, &(a, _)) in p.weighted.iter().enumerate() {
            let mut e = DVector::zeros(p.state_dim);
            e[a] = 1.0;
            let z = j_chol.solve(&e);
            let s = alphas[idx] - z[a];
            if !(s > 0.0) {
                return None;
            }
            barrier -= s.ln();
            schur_slacks.push(s);
        }

        let mut power_slacks = Vec::with_capacity(p.power.len());
        for pc in &p.power {
            let mut used = 0.0;
            for &bi in &pc.blocks {
                let b = &p.blocks[bi];
                for i in 0..b.p * b.p {
                    used += b.basis_trace[i] * x[b.offset + i];
                }
            }
            let slack = pc.limit - used;
            if !(slack > 0.0) {
                return None;
            }
            barrier -= slack.ln();
            power_slacks.push(slack);
        }

        let mut cone_chols = Vec::with_capacity(p.blocks.len());
        for b in &p.blocks {
            let mut s = DMatrix::zeros(b.p, b.p);
            for (i, e) in b.basis.iter().enumerate() {
                s += e * Complex64::from(x[b.offset + i]);
            }
            let chol = s.cholesky()?;
            for i in 0..b.p {
                let l = chol.l_dirty()[(i, i)].re;
                if !(l > 0.0) {
                    return None;
                }
                barrier -= 2.0 * l.ln();
            }
            cone_chols.push(chol);
        }

        Some(EvalPoint {
            j_chol,
            schur_slacks,
            power_slacks,
            cone_chols,
            barrier_value: barrier,
        })
    }
}

/// Solves the problem with a log-det barrier interior-point method.
///
/// Starts from the isotropic direction at half power with the Schur
/// auxiliaries at twice their tight values, then follows the central path,
/// multiplying the barrier parameter by `barrier_growth` per outer
/// iteration until the gap estimate `nu / t` falls below `gap_tol` times
/// the objective.
pub fn solve(problem: &SdpProblem, options: &SolveOptions) -> Result<SdpSolution> {
    let ws = Workspace::new(problem);
    let n_alpha = problem.weighted.len();

    // Isotropic interior start: half the budget, spread evenly.
    let mut x = DVector::zeros(problem.num_vars);
    for pc in &problem.power {
        let share = 0.5 * pc.limit / pc.blocks.len() as f64;
        for &bi in &pc.blocks {
            let b = &problem.blocks[bi];
            for i in 0..b.p {
                x[b.offset + i] = share / b.p as f64;
            }
        }
    }
    let j0 = problem.info_matrix_of(&x);
    // A singular information matrix means some state direction is
    // unobservable even with power everywhere: the LMI set has no interior.
    let ev = linalg::sym_eigenvalues(&j0);
    if ev[0] <= 1e-12 * j0.trace() {
        return Err(Error::NoConvergence(format!(
            "information matrix singular at the isotropic start (min eig {:.3e}); \
             the scenario leaves a state direction unobservable",
            ev[0]
        )));
    }
    let j0_inv = linalg::spd_inverse(&j0, "initial information matrix")?;
    let mut alphas: Vec<f64> = problem
        .weighted
        .iter()
        .map(|&(a, _)| 2.0 * j0_inv[(a, a)])
        .collect();

    if n_alpha == 0 {
        // Nothing to optimize: any feasible point is optimal.
        let covariances = hermitian_clean(problem.covariances_of(&x));
        let residuals = residuals_at(problem, &covariances, &[], 0.0);
        return Ok(SdpSolution {
            covariances,
            alphas: Vec::new(),
            objective: 0.0,
            outer_iterations: 0,
            newton_iterations: 0,
            residuals,
            trace: Vec::new(),
        });
    }

    let obj0 = ws.objective(&alphas);
    let mut t = (ws.nu / obj0.max(1e-12)).max(1.0);
    let mut newton_total = 0;
    let mut trace = Vec::new();
    let mut converged = false;

    for _outer in 0..options.max_outer {
        newton_total += center(&ws, t, &mut x, &mut alphas, options)?;
        let objective = ws.objective(&alphas);
        let gap = ws.nu / t;
        let point = ws
            .eval(t, &x, &alphas)
            .ok_or_else(|| Error::NoConvergence("lost feasibility after centering".into()))?;
        let min_slack = point
            .schur_slacks
            .iter()
            .chain(point.power_slacks.iter())
            .cloned()
            .fold(f64::INFINITY, f64::min);
        trace.push(OuterRecord {
            barrier: t,
            objective,
            gap,
            min_slack,
        });
        if gap < options.gap_tol * objective.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        t *= options.barrier_growth;
    }
    if !converged {
        return Err(Error::NoConvergence(format!(
            "barrier did not reach gap tolerance after {} outer iterations (gap {:.3e})",
            trace.len(),
            trace.last().map(|r| r.gap).unwrap_or(f64::NAN)
        )));
    }

    let objective = ws.objective(&alphas);
    let alphas_out: Vec<(usize, f64)> = problem
        .weighted
        .iter()
        .zip(&alphas)
        .map(|(&(a, _), &v)| (a, v))
        .collect();
    let covariances = hermitian_clean(problem.covariances_of(&x));
    let residuals = residuals_at(problem, &covariances, &alphas, ws.nu / t);
    Ok(SdpSolution {
        covariances,
        alphas: alphas_out,
        objective,
        outer_iterations: trace.len(),
        newton_iterations: newton_total,
        residuals,
        trace,
    })
}

fn hermitian_clean(mut covs: Vec<Vec<DMatrix<Complex64>>>) -> Vec<Vec<DMatrix<Complex64>>> {
    for per_bs in &mut covs {
        for r in per_bs.iter_mut() {
            let cleaned = (r.clone() + r.adjoint()) * Complex64::from(0.5);
            *r = cleaned;
        }
    }
    covs
}

/// Newton-centers the barrier at fixed t. Returns the Newton step count.
fn center(
    ws: &Workspace,
    t: f64,
    x: &mut DVector<f64>,
    alphas: &mut Vec<f64>,
    options: &SolveOptions,
) -> Result<usize> {
    let p = ws.problem;
    let nv = p.num_vars;
    let n_alpha = p.weighted.len();
    let n_total = nv + n_alpha;
    let num_bs = p.h_blocks.len();

    let mut steps = 0;
    for _ in 0..options.max_newton {
        let point = ws
            .eval(t, x, alphas)
            .ok_or_else(|| Error::NoConvergence("iterate left the interior".into()))?;
        let j_inv = point.j_chol.inverse();

        let mut grad = DVector::zeros(n_total);
        let mut hess = DMatrix::zeros(n_total, n_total);
        for (idx, &(a, w)) in p.weighted.iter().enumerate() {
            // V_a = J^{-1} + z z^T / s with z = J^{-1} e_a; all the LMI
            // derivatives reduce to projections of V_a through the per-BS
            // Jacobian blocks.
            let z = j_inv.column(a).into_owned();
            let s = point.schur_slacks[idx];
            let v = &j_inv + &z * z.transpose() / s;
            let c: Vec<Vec<DMatrix<f64>>> = (0..num_bs)
                .map(|k| {
                    let hv = &p.h_blocks[k] * &v;
                    (0..num_bs)
                        .map(|l| &hv * p.h_blocks[l].transpose())
                        .collect()
                })
                .collect();
            let hz: Vec<DVector<f64>> = (0..num_bs).map(|k| &p.h_blocks[k] * &z).collect();

            grad[nv + idx] += t * w - 1.0 / s;
            hess[(nv + idx, nv + idx)] += 1.0 / (s * s);

            for (bi, b) in p.blocks.iter().enumerate() {
                let nvar = b.p * b.p;
                for i in 0..nvar {
                    let gi = b.offset + i;
                    grad[gi] -= frob_sym(&c[b.bs][b.bs], &b.phi[i]);
                    let quad = (hz[b.bs].transpose() * &b.phi[i] * &hz[b.bs])[(0, 0)];
                    let cross = quad / (s * s);
                    hess[(gi, nv + idx)] += cross;
                    hess[(nv + idx, gi)] += cross;

                    for l in 0..num_bs {
                        let w_mat = &c[l][b.bs] * &b.phi[i] * &c[b.bs][l];
                        for (bj, b2) in p.blocks.iter().enumerate() {
                            if b2.bs != l || bj < bi {
                                continue;
                            }
                            let jstart = if bj == bi { i } else { 0 };
                            for jj in jstart..b2.p * b2.p {
                                let gj = b2.offset + jj;
                                let v2 = frob_sym(&w_mat, &b2.phi[jj]);
                                hess[(gi, gj)] += v2;
                                if gi != gj {
                                    hess[(gj, gi)] += v2;
                                }
                            }
                        }
                    }
                }
            }
        }

        // Power barrier terms.
        for (pi, pc) in p.power.iter().enumerate() {
            let slack = point.power_slacks[pi];
            for &bi in &pc.blocks {
                let b = &p.blocks[bi];
                for i in 0..b.p * b.p {
                    let ti = b.basis_trace[i];
                    if ti == 0.0 {
                        continue;
                    }
                    grad[b.offset + i] += ti / slack;
                    for &bj in &pc.blocks {
                        let b2 = &p.blocks[bj];
                        for jj in 0..b2.p * b2.p {
                            let tj = b2.basis_trace[jj];
                            if tj != 0.0 {
                                hess[(b.offset + i, b2.offset + jj)] +=
                                    ti * tj / (slack * slack);
                            }
                        }
                    }
                }
            }
        }

        // Covariance cone barrier terms.
        for (bi, b) in p.blocks.iter().enumerate() {
            let s_inv = point.cone_chols[bi].inverse();
            let nvar = b.p * b.p;
            let m: Vec<DMatrix<Complex64>> =
                (0..nvar).map(|i| &s_inv * &b.basis[i] * &s_inv).collect();
            for i in 0..nvar {
                grad[b.offset + i] -= trace_herm(&s_inv, &b.basis[i]);
                for jj in i..nvar {
                    let v = trace_herm(&m[i], &b.basis[jj]);
                    hess[(b.offset + i, b.offset + jj)] += v;
                    if i != jj {
                        hess[(b.offset + jj, b.offset + i)] += v;
                    }
                }
            }
        }

        let dir = linalg::spd_solve(&hess, &DMatrix::from_column_slice(n_total, 1, grad.as_slice()), "barrier Hessian")?;
        let dir = -dir.column(0).into_owned();
        let decrement = -grad.dot(&dir);
        steps += 1;
        if decrement / 2.0 <= options.center_tol {
            break;
        }

        // Backtracking line search with strict-feasibility filtering.
        let dx = dir.rows(0, nv).into_owned();
        let dalpha = dir.rows(nv, n_alpha).into_owned();
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let x_new = &*x + &dx * step;
            let a_new: Vec<f64> = alphas
                .iter()
                .zip(dalpha.iter())
                .map(|(&a, &da)| a + da * step)
                .collect();
            if let Some(eval) = ws.eval(t, &x_new, &a_new) {
                if eval.barrier_value <= point.barrier_value - 0.25 * step * decrement {
                    *x = x_new;
                    *alphas = a_new;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            // Centered to numerical precision; progress stalls here.
            break;
        }
    }
    Ok(steps)
}

/// tr(A B) for symmetric real matrices.
fn frob_sym(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Re tr(A B) for Hermitian A, B.
fn trace_herm(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

fn residuals_at(
    problem: &SdpProblem,
    covariances: &[Vec<DMatrix<Complex64>>],
    alphas: &[f64],
    gap: f64,
) -> KktResiduals {
    let mut power_excess_rel: f64 = f64::NEG_INFINITY;
    for (k, per_bs) in covariances.iter().enumerate() {
        let used: f64 = per_bs.iter().map(|r| r.trace().re).sum();
        let limit: f64 = problem
            .power
            .iter()
            .filter(|pc| pc.blocks.iter().any(|&bi| problem.blocks[bi].bs == k))
            .map(|pc| pc.limit)
            .sum();
        power_excess_rel = power_excess_rel.max((used - limit) / limit);
    }
    let mut cov_min_eig_rel = f64::INFINITY;
    for per_bs in covariances {
        for r in per_bs {
            let eigs = r.clone().symmetric_eigen().eigenvalues;
            let tr = r.trace().re.max(f64::MIN_POSITIVE);
            let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
            cov_min_eig_rel = cov_min_eig_rel.min(min / tr);
        }
    }
    // LMI blocks at the returned covariances.
    let per_block: Vec<DMatrix<Complex64>> = problem
        .blocks
        .iter()
        .map(|b| {
            let full = &covariances[b.bs][b.sub_index];
            match &b.expand {
                Some(u) => u.adjoint() * full * u,
                None => full.clone(),
            }
        })
        .collect();
    let x = problem.coords_of(&per_block);
    let j = problem.info_matrix_of(&x);
    let mut lmi_min_eig_rel = f64::INFINITY;
    for (idx, &(a, _)) in problem.weighted.iter().enumerate() {
        let d = problem.state_dim;
        let mut m = DMatrix::zeros(d + 1, d + 1);
        m.view_mut((0, 0), (d, d)).copy_from(&j);
        m[(a, d)] = 1.0;
        m[(d, a)] = 1.0;
        m[(d, d)] = alphas[idx];
        let ev = linalg::sym_eigenvalues(&m);
        lmi_min_eig_rel = lmi_min_eig_rel.min(ev[0] / m.trace());
    }
    KktResiduals {
        power_excess_rel,
        lmi_min_eig_rel,
        cov_min_eig_rel,
        gap,
    }
}

// ---------------------------------------------------------------------------
// Span verification, beam extraction, beampatterns
// ---------------------------------------------------------------------------

/// Per-(BS, subcarrier) span residual `||(I-P) R (I-P)||_F / tr(R)` against
/// the predicted steering-plus-derivative subspace.
pub fn verify_span(
    solution: &SdpSolution,
    scenario: &Scenario,
    predicted_aods: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let lambda = scenario.radio.wavelength();
    scenario
        .bss
        .iter()
        .enumerate()
        .map(|(k, bs)| {
            let u = steering_span_basis(bs, &predicted_aods[k], lambda);
            let proj = &u * u.adjoint();
            let eye = DMatrix::<Complex64>::identity(bs.num_tx, bs.num_tx);
            let perp = &eye - &proj;
            solution.covariances[k]
                .iter()
                .map(|r| {
                    let outside = &perp * r * &perp;
                    outside.norm() / r.trace().re.max(f64::MIN_POSITIVE)
                })
                .collect()
        })
        .collect()
}

/// Eigen-truncates each covariance into beam columns: eigenpairs within
/// `threshold` of the dominant eigenvalue are kept as columns scaled by the
/// root eigenvalue, renormalized to preserve the transmitted power. The
/// plan's covariance is the reconstruction `B B^H` (what the beams actually
/// transmit).
pub fn extract_beamformers(
    solution: &SdpSolution,
    scenario: &Scenario,
    threshold: f64,
) -> BeamPlan {
    let per_bs = scenario
        .bss
        .iter()
        .enumerate()
        .map(|(k, bs)| {
            bs.subcarriers
                .iter()
                .enumerate()
                .map(|(j, &m)| {
                    let r = &solution.covariances[k][j];
                    let eig = r.clone().symmetric_eigen();
                    let lam_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
                    let mut cols = Vec::new();
                    let mut kept_mass = 0.0;
                    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
                        if lam >= threshold * lam_max && lam > 0.0 {
                            cols.push((lam, eig.eigenvectors.column(i).into_owned()));
                            kept_mass += lam;
                        }
                    }
                    cols.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite eigenvalues"));
                    let total = r.trace().re;
                    let renorm = if kept_mass > 0.0 {
                        (total / kept_mass).sqrt()
                    } else {
                        0.0
                    };
                    let beams: Vec<_> = cols
                        .iter()
                        .map(|(lam, v)| v * Complex64::from(lam.sqrt() * renorm))
                        .collect();
                    let beams = if beams.is_empty() {
                        DMatrix::zeros(bs.num_tx, 0)
                    } else {
                        DMatrix::from_columns(&beams)
                    };
                    BeamEntry {
                        subcarrier: m,
                        covariance: &beams * beams.adjoint(),
                        beams,
                    }
                })
                .collect()
        })
        .collect();
    BeamPlan {
        per_bs,
        rank_threshold: threshold,
    }
}

/// Transmit gain a_t(phi)^H R a_t(phi) of one BS over an angle grid, using
/// the beam at the BS's first allocated subcarrier.
pub fn beampattern(
    plan: &BeamPlan,
    bs_index: usize,
    angles: &[f64],
    scenario: &Scenario,
) -> Vec<f64> {
    let bs = &scenario.bss[bs_index];
    let lambda = scenario.radio.wavelength();
    let r = &plan.per_bs[bs_index][0].covariance;
    angles
        .iter()
        .map(|&phi| {
            let a = bs.tx_steering(phi, lambda);
            (a.adjoint() * r * &a)[(0, 0)].re.max(0.0)
        })
        .collect()
}
