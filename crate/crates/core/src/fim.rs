//! Fisher information of the echo signals and the per-block measurement
//! covariance derived from it.
//!
//! For one BS the observables are the 5Q stacked link parameters
//! [aoa; delay; doppler; Re xi; Im xi]. Writing the noiseless echo at symbol
//! i and subcarrier m as a sum of per-target dyads
//! `M_q(i, m) = xi_q e^{j 2 pi f_q i T0} e^{j 2 pi m df tau_q} a_r a_t^H`,
//! the information about a pair of observables (a, b) under unit-power
//! symbols is
//!
//! ```text
//! J_ab = (2 / sigma_z^2) sum_{i, m} Re tr{ (dM/du_a)^H (dM/du_b) R_{B,m} }
//! ```
//!
//! [`fim_general`] evaluates that sum directly, symbol by symbol; it is the
//! reference route and also yields, per subcarrier, the i-summed kernel
//! matrices `K_ab = sum_i (dM_a)^H (dM_b)` that make the information an
//! explicit linear function of the transmit covariance (the property the
//! beam optimizer builds on). [`fim_closed_xi_xi`] and
//! [`fim_closed_aoa_delay`] are independent factorized evaluations of the
//! two written-out sub-blocks, used to cross-check the general route.
//!
//! Information across the subcarriers of one BS is additive; echoes of
//! distinct BSs are independent, so the global matrix is block-diagonal
//! over BSs.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::scenario::{BsConfig, LinkParams, RadioConfig, Scenario};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Which vector space a symmetric information matrix lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixSpace {
    /// 5Q observables of a single BS.
    PerBs,
    /// 5KQ stacked observables of all BSs.
    Measurement,
    /// 4Q + 2KQ state entries.
    State,
}

/// A real symmetric PSD matrix: measurement FIM, its inverse, or a Bayesian
/// information matrix.
#[derive(Debug, Clone)]
pub struct InfoMatrix {
    entries: DMatrix<f64>,
    space: MatrixSpace,
    truncated: bool,
}

impl InfoMatrix {
    pub fn new(entries: DMatrix<f64>, space: MatrixSpace) -> Self {
        InfoMatrix {
            entries: linalg::symmetrize(&entries),
            space,
            truncated: false,
        }
    }

    pub fn with_truncation(entries: DMatrix<f64>, space: MatrixSpace, truncated: bool) -> Self {
        InfoMatrix {
            entries: linalg::symmetrize(&entries),
            space,
            truncated,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn space(&self) -> MatrixSpace {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// True when a pseudo-inverse dropped at least one eigen-direction
    /// somewhere on the way to this matrix.
    pub fn truncated(&self) -> bool {
        self.truncated
    }
}

// ---------------------------------------------------------------------------
// Beam plans
// ---------------------------------------------------------------------------

/// Transmit covariance and extracted beamformer columns for one subcarrier.
#[derive(Debug, Clone)]
pub struct BeamEntry {
    pub subcarrier: usize,
    /// N_T x N_T Hermitian PSD covariance of the emitted signal.
    pub covariance: DMatrix<Complex64>,
    /// N_T x L beamformer columns with `beams * beams^H = covariance`.
    pub beams: DMatrix<Complex64>,
}

/// Per-(BS, subcarrier) transmit covariances plus their beamformers.
#[derive(Debug, Clone)]
pub struct BeamPlan {
    /// Indexed `[bs][j]`, aligned with `BsConfig::subcarriers`.
    pub per_bs: Vec<Vec<BeamEntry>>,
    pub rank_threshold: f64,
}

impl BeamPlan {
    /// Equal power in every direction: R = P / (|M_k| N_T) I per subcarrier.
    pub fn isotropic(scenario: &Scenario) -> BeamPlan {
        let per_bs = scenario
            .bss
            .iter()
            .map(|bs| {
                let scale = bs.tx_power / (bs.subcarriers.len() as f64 * bs.num_tx as f64);
                bs.subcarriers
                    .iter()
                    .map(|&m| {
                        let cov = DMatrix::identity(bs.num_tx, bs.num_tx) * Complex64::from(scale);
                        BeamEntry {
                            subcarrier: m,
                            beams: DMatrix::identity(bs.num_tx, bs.num_tx)
                                * Complex64::from(scale.sqrt()),
                            covariance: cov,
                        }
                    })
                    .collect()
            })
            .collect();
        BeamPlan {
            per_bs,
            rank_threshold: 1e-3,
        }
    }

    /// One beam per BS steered at the given departure angle (full power).
    pub fn focused(scenario: &Scenario, aods: &[f64]) -> BeamPlan {
        let lambda = scenario.radio.wavelength();
        let per_bs = scenario
            .bss
            .iter()
            .zip(aods)
            .map(|(bs, &phi)| {
                let a = bs.tx_steering(phi, lambda);
                let scale = bs.tx_power / (bs.subcarriers.len() as f64 * bs.num_tx as f64);
                let beam = &a * Complex64::from(scale.sqrt());
                bs.subcarriers
                    .iter()
                    .map(|&m| BeamEntry {
                        subcarrier: m,
                        covariance: &beam * beam.adjoint(),
                        beams: DMatrix::from_columns(&[beam.clone()]),
                    })
                    .collect()
            })
            .collect();
        BeamPlan {
            per_bs,
            rank_threshold: 1e-3,
        }
    }

    pub fn covariances(&self, k: usize) -> Vec<DMatrix<Complex64>> {
        self.per_bs[k].iter().map(|e| e.covariance.clone()).collect()
    }

    pub fn total_power(&self, k: usize) -> f64 {
        self.per_bs[k]
            .iter()
            .map(|e| e.covariance.trace().re)
            .sum()
    }

    /// Checks the type invariants: Hermitian PSD covariances, per-BS power
    /// within budget, and beams reconstructing their covariance.
    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        for (k, entries) in self.per_bs.iter().enumerate() {
            let bs = &scenario.bss[k];
            let mut power = 0.0;
            for e in entries {
                let r = &e.covariance;
                let herm_err = (r - r.adjoint()).norm() / r.norm().max(f64::MIN_POSITIVE);
                if herm_err > 1e-12 {
                    return Err(Error::NotPsd {
                        what: "beam covariance (asymmetric)",
                        min_eig: herm_err,
                    });
                }
                let eigs = r.clone().symmetric_eigen().eigenvalues;
                let tr = r.trace().re.max(f64::MIN_POSITIVE);
                let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
                if min_eig < -1e-10 * tr {
                    return Err(Error::NotPsd {
                        what: "beam covariance",
                        min_eig,
                    });
                }
                let recon = &e.beams * e.beams.adjoint();
                let rel = (r - &recon).norm() / r.norm().max(f64::MIN_POSITIVE);
                if rel > 1e-8 {
                    return Err(Error::NoConvergence(format!(
                        "beams do not reconstruct covariance (rel {rel:.2e})"
                    )));
                }
                power += r.trace().re;
            }
            if power > bs.tx_power * (1.0 + 1e-9) {
                return Err(Error::NoConvergence(format!(
                    "BS {k} power {power} exceeds budget {}",
                    bs.tx_power
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Derivative dyads and kernels
// ---------------------------------------------------------------------------

/// Per-target dyads of the echo model that do not depend on symbol or
/// subcarrier index.
pub(crate) struct LinkDyads {
    /// a_r(aoa) a_t(aod)^H
    base: DMatrix<Complex64>,
    /// d a_r / d aoa * a_t^H
    d_rx: DMatrix<Complex64>,
    /// a_r * (d a_t / d aod)^H — the aod follows the aoa one-for-one.
    d_tx: DMatrix<Complex64>,
}

pub(crate) fn link_dyads(bs: &BsConfig, links: &[LinkParams], radio: &RadioConfig) -> Vec<LinkDyads> {
    let lambda = radio.wavelength();
    links
        .iter()
        .map(|l| {
            let ar = bs.rx_steering(l.aoa, lambda);
            let at = bs.tx_steering(l.aod, lambda);
            let dar = bs.rx_steering_deriv(l.aoa, lambda);
            let dat = bs.tx_steering_deriv(l.aod, lambda);
            LinkDyads {
                base: &ar * at.adjoint(),
                d_rx: &dar * at.adjoint(),
                d_tx: &ar * dat.adjoint(),
            }
        })
        .collect()
}

/// The 5Q derivative matrices dM/du_a at symbol i, subcarrier m, in
/// observable block order [aoa; delay; doppler; Re xi; Im xi].
pub(crate) fn deriv_matrices(
    dyads: &[LinkDyads],
    links: &[LinkParams],
    radio: &RadioConfig,
    symbol: usize,
    subcarrier: usize,
) -> Vec<DMatrix<Complex64>> {
    let nq = links.len();
    let mut out = Vec::with_capacity(5 * nq);
    let phasor = |l: &LinkParams| {
        Complex64::from_polar(
            1.0,
            TWO_PI
                * (l.doppler * symbol as f64 * radio.symbol_interval
                    + subcarrier as f64 * radio.subcarrier_spacing * l.delay),
        )
    };
    // aoa: both receive- and transmit-side steering derivatives appear.
    for (q, l) in links.iter().enumerate() {
        out.push((&dyads[q].d_rx + &dyads[q].d_tx) * (l.coeff * phasor(l)));
    }
    for (q, l) in links.iter().enumerate() {
        let factor = Complex64::new(0.0, TWO_PI * subcarrier as f64 * radio.subcarrier_spacing);
        out.push(&dyads[q].base * (l.coeff * phasor(l) * factor));
    }
    for (q, l) in links.iter().enumerate() {
        let factor = Complex64::new(0.0, TWO_PI * symbol as f64 * radio.symbol_interval);
        out.push(&dyads[q].base * (l.coeff * phasor(l) * factor));
    }
    for (q, l) in links.iter().enumerate() {
        out.push(&dyads[q].base * phasor(l));
    }
    for (q, l) in links.iter().enumerate() {
        out.push(&dyads[q].base * (phasor(l) * Complex64::i()));
    }
    out
}

/// Symbol-summed information kernels of one BS: for each allocated
/// subcarrier, the matrices `K_ab = sum_i (dM_a)^H (dM_b)` so that
/// `J_ab = (2/sigma^2) Re tr{K_ab R_B}` for any transmit covariance.
pub struct EchoKernels {
    dim: usize,
    /// `kernels[j]` holds the dim*dim kernel matrices of subcarrier j,
    /// row-major over (a, b).
    kernels: Vec<Vec<DMatrix<Complex64>>>,
    noise_power: f64,
}

/// Direct evaluation of the symbol/subcarrier sums for one BS.
pub fn compute_echo_kernels(
    bs: &BsConfig,
    links: &[LinkParams],
    radio: &RadioConfig,
) -> EchoKernels {
    let dim = 5 * links.len();
    let dyads = link_dyads(bs, links, radio);
    let one = Complex64::from(1.0);
    let mut kernels = Vec::with_capacity(bs.subcarriers.len());
    for &m in &bs.subcarriers {
        let mut per_pair = vec![DMatrix::<Complex64>::zeros(bs.num_tx, bs.num_tx); dim * dim];
        for i in 0..radio.num_symbols_per_block {
            let dms = deriv_matrices(&dyads, links, radio, i, m);
            let adjoints: Vec<_> = dms.iter().map(|d| d.adjoint()).collect();
            for a in 0..dim {
                for b in a..dim {
                    per_pair[a * dim + b].gemm(one, &adjoints[a], &dms[b], one);
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                per_pair[a * dim + b] = per_pair[b * dim + a].adjoint();
            }
        }
        kernels.push(per_pair);
    }
    EchoKernels {
        dim,
        kernels,
        noise_power: radio.noise_power,
    }
}

fn trace_product(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> Complex64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for p in 0..n {
        for q in 0..n {
            acc += a[(p, q)] * b[(q, p)];
        }
    }
    acc
}

impl EchoKernels {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_subcarriers(&self) -> usize {
        self.kernels.len()
    }

    /// FIM contribution of subcarrier j under transmit covariance `r`.
    pub fn fim_of_covariance(&self, j: usize, r: &DMatrix<Complex64>) -> DMatrix<f64> {
        let scale = 2.0 / self.noise_power;
        DMatrix::from_fn(self.dim, self.dim, |a, b| {
            scale * trace_product(&self.kernels[j][a * self.dim + b], r).re
        })
    }

    /// Kernels re-expressed on a reduced column space: K -> basis^H K basis.
    pub fn projected(&self, basis: &DMatrix<Complex64>) -> EchoKernels {
        let kernels = self
            .kernels
            .iter()
            .map(|per_pair| {
                per_pair
                    .iter()
                    .map(|k| basis.adjoint() * k * basis)
                    .collect()
            })
            .collect();
        EchoKernels {
            dim: self.dim,
            kernels,
            noise_power: self.noise_power,
        }
    }
}

// ---------------------------------------------------------------------------
// General and closed-form FIM evaluation
// ---------------------------------------------------------------------------

/// The 5Q x 5Q measurement FIM of one BS under the given per-subcarrier
/// transmit covariances (aligned with `bs.subcarriers`), evaluated by the
/// direct symbol-by-symbol sum.
pub fn fim_general(
    bs: &BsConfig,
    links: &[LinkParams],
    covariances: &[DMatrix<Complex64>],
    radio: &RadioConfig,
) -> InfoMatrix {
    assert_eq!(covariances.len(), bs.subcarriers.len());
    let kernels = compute_echo_kernels(bs, links, radio);
    fim_from_kernels(&kernels, covariances)
}

/// Sums per-subcarrier kernel contributions into the per-BS FIM.
pub fn fim_from_kernels(kernels: &EchoKernels, covariances: &[DMatrix<Complex64>]) -> InfoMatrix {
    assert_eq!(covariances.len(), kernels.num_subcarriers());
    let mut total = DMatrix::zeros(kernels.dim(), kernels.dim());
    for (j, r) in covariances.iter().enumerate() {
        total += kernels.fim_of_covariance(j, r);
    }
    InfoMatrix::new(total, MatrixSpace::PerBs)
}

/// Doppler-difference correlation over one block of symbols.
fn symbol_sum(delta_doppler: f64, radio: &RadioConfig) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..radio.num_symbols_per_block {
        acc += Complex64::from_polar(1.0, TWO_PI * delta_doppler * i as f64 * radio.symbol_interval);
    }
    acc
}

/// Closed form of the Re(xi)-Re(xi) sub-block: the receive-array correlation
/// and the time-frequency phasor sums factor out of the symbol loop, leaving
/// one transmit quadratic form per subcarrier.
pub fn fim_closed_xi_xi(
    bs: &BsConfig,
    links: &[LinkParams],
    covariances: &[DMatrix<Complex64>],
    radio: &RadioConfig,
) -> DMatrix<f64> {
    let nq = links.len();
    let lambda = radio.wavelength();
    let ar: Vec<_> = links.iter().map(|l| bs.rx_steering(l.aoa, lambda)).collect();
    let at: Vec<_> = links.iter().map(|l| bs.tx_steering(l.aod, lambda)).collect();
    DMatrix::from_fn(nq, nq, |q0, q1| {
        let time = symbol_sum(links[q1].doppler - links[q0].doppler, radio);
        let rx_corr = ar[q0].dotc(&ar[q1]);
        let mut freq = Complex64::new(0.0, 0.0);
        for (j, &m) in bs.subcarriers.iter().enumerate() {
            let phase = TWO_PI
                * m as f64
                * radio.subcarrier_spacing
                * (links[q1].delay - links[q0].delay);
            let tx_form = (at[q1].adjoint() * &covariances[j] * &at[q0])[(0, 0)];
            freq += Complex64::from_polar(1.0, phase) * tx_form;
        }
        2.0 / radio.noise_power * (rx_corr * time * freq).re
    })
}

/// Closed form of the aoa-delay sub-block, carrying both the transmit
/// steering derivative term and the receive one, weighted by the subcarrier
/// index from the delay derivative.
pub fn fim_closed_aoa_delay(
    bs: &BsConfig,
    links: &[LinkParams],
    covariances: &[DMatrix<Complex64>],
    radio: &RadioConfig,
) -> DMatrix<f64> {
    let nq = links.len();
    let lambda = radio.wavelength();
    let ar: Vec<_> = links.iter().map(|l| bs.rx_steering(l.aoa, lambda)).collect();
    let at: Vec<_> = links.iter().map(|l| bs.tx_steering(l.aod, lambda)).collect();
    let dar: Vec<_> = links
        .iter()
        .map(|l| bs.rx_steering_deriv(l.aoa, lambda))
        .collect();
    let dat: Vec<_> = links
        .iter()
        .map(|l| bs.tx_steering_deriv(l.aod, lambda))
        .collect();
    DMatrix::from_fn(nq, nq, |q0, q1| {
        let time = symbol_sum(links[q1].doppler - links[q0].doppler, radio);
        let xi_w = links[q0].coeff.conj() * links[q1].coeff;
        let drx_corr = dar[q0].dotc(&ar[q1]);
        let rx_corr = ar[q0].dotc(&ar[q1]);
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, &m) in bs.subcarriers.iter().enumerate() {
            let phase = TWO_PI
                * m as f64
                * radio.subcarrier_spacing
                * (links[q1].delay - links[q0].delay);
            let rot = Complex64::from_polar(m as f64, phase);
            let tx_base = (at[q1].adjoint() * &covariances[j] * &at[q0])[(0, 0)];
            let tx_deriv = (at[q1].adjoint() * &covariances[j] * &dat[q0])[(0, 0)];
            acc += rot * (drx_corr * tx_base + rx_corr * tx_deriv);
        }
        -2.0 / radio.noise_power * TWO_PI * radio.subcarrier_spacing * (xi_w * time * acc).im
    })
}

// ---------------------------------------------------------------------------
// Global assembly
// ---------------------------------------------------------------------------

/// Stacks per-BS FIMs into the block-diagonal measurement FIM and computes
/// the measurement covariance as its block-wise (pseudo-)inverse.
///
/// Cross-BS blocks are exactly zero. A singular per-BS block is
/// pseudo-inverted with a relative eigenvalue cutoff of 1e-10 (applied after
/// Jacobi equilibration, so mixed units do not masquerade as singularity)
/// and the result is flagged instead of failing.
pub fn assemble_ru(per_bs: &[InfoMatrix]) -> Result<(InfoMatrix, InfoMatrix)> {
    let mut any_truncated = false;
    let mut fims = Vec::with_capacity(per_bs.len());
    let mut invs = Vec::with_capacity(per_bs.len());
    for info in per_bs {
        if info.space() != MatrixSpace::PerBs {
            return Err(Error::Dimension {
                what: "assemble_ru input space",
                expected: 0,
                got: info.dim(),
            });
        }
        let inv = linalg::sym_pseudo_inverse(info.matrix(), 1e-10);
        any_truncated |= inv.truncated;
        fims.push(info.matrix().clone());
        invs.push(inv.inverse);
    }
    let fim = InfoMatrix::with_truncation(
        linalg::block_diag(&fims),
        MatrixSpace::Measurement,
        any_truncated,
    );
    let ru = InfoMatrix::with_truncation(
        linalg::block_diag(&invs),
        MatrixSpace::Measurement,
        any_truncated,
    );
    Ok((fim, ru))
}

/// Convenience pipeline: per-BS kernels at the given links, combined with a
/// beam plan into the global measurement FIM and covariance.
pub fn measurement_information(
    links: &[Vec<LinkParams>],
    plan: &BeamPlan,
    scenario: &Scenario,
) -> Result<(InfoMatrix, InfoMatrix)> {
    let per_bs: Vec<InfoMatrix> = scenario
        .bss
        .iter()
        .enumerate()
        .map(|(k, bs)| fim_general(bs, &links[k], &plan.covariances(k), &scenario.radio))
        .collect();
    assemble_ru(&per_bs)
}
