//! End-to-end simulation: ground-truth propagation, measurement synthesis at
//! the bound, the two-phase per-block loop (track, then optimize the next
//! block's beams), Monte-Carlo campaigns, and the CSV output formats.
//!
//! Measurements are sampled directly at the bound: the estimator stage is
//! assumed unbiased and efficient, so the per-block estimates are the true
//! observables plus noise with the measurement-CRB covariance. Raw echo
//! synthesis exists for validating the information computation, not as a
//! measurement path.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::Write as _;
use std::path::Path;

use crate::beamform::{beampattern, build_problem, extract_beamformers, solve, SolveOptions};
use crate::error::{Error, Result};
use crate::fim::{measurement_information, BeamPlan, InfoMatrix};
use crate::linalg;
use crate::motion::{propagate, MotionModel};
use crate::nkf::{run_block, TrackState};
use crate::pcrb::{accuracy, bim_step, Bim};
use crate::scenario::{
    links_for_state, measurement_jacobian, measurement_map, GlobalState, Scenario,
};

/// Which beams the per-block loop uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SensingMode {
    /// Bound-minimizing covariances from the per-block solver.
    #[value(name = "optimized")]
    Optimized,
    /// Equal power in all directions at every BS.
    #[value(name = "isotropic")]
    Isotropic,
    /// Every BS steers its whole budget at target 0's predicted bearing.
    #[value(name = "single-target-focus")]
    SingleTargetFocus,
}

impl std::fmt::Display for SensingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            SensingMode::Optimized => "optimized",
            SensingMode::Isotropic => "isotropic",
            SensingMode::SingleTargetFocus => "single-target-focus",
        };
        f.write_str(name)
    }
}

/// Extraction threshold used when turning solved covariances into beams.
pub const BEAM_RANK_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct SolverStats {
    pub outer_iterations: usize,
    pub newton_iterations: usize,
    /// Solver objective (weighted sum of Schur auxiliaries) at the solution.
    pub objective: f64,
    pub gap: f64,
    /// Feasibility residuals of the returned covariances.
    pub residuals: crate::beamform::KktResiduals,
    /// True objective of the isotropic full-power baseline on the same
    /// problem, for dominance checks.
    pub iso_objective: f64,
}

/// Everything recorded about one sensing block of one run.
#[derive(Debug, Clone)]
pub struct BlockRecord {
    pub block: usize,
    pub truth: GlobalState,
    pub prediction: GlobalState,
    pub posterior: GlobalState,
    /// Per-target (position, velocity) accuracy bounds from the recursion.
    pub bound: Vec<(f64, f64)>,
    /// Per-target (position, velocity) absolute errors of the posterior.
    pub errors: Vec<(f64, f64)>,
    /// The plan that was transmitted during this block.
    pub plan: BeamPlan,
    pub solver: Option<SolverStats>,
}

impl BlockRecord {
    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        self.plan.validate(scenario)?;
        for &(dx, dv) in &self.bound {
            if !(dx.is_finite() && dx > 0.0 && dv.is_finite() && dv > 0.0) {
                return Err(Error::NoConvergence(format!(
                    "non-finite bound at block {}",
                    self.block
                )));
            }
        }
        Ok(())
    }
}

/// Aggregates over a Monte-Carlo campaign, indexed [block][target].
#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub trials: usize,
    pub seed: u64,
    pub rmse_pos: Vec<Vec<f64>>,
    pub rmse_vel: Vec<Vec<f64>>,
    pub bound_pos: Vec<Vec<f64>>,
    pub bound_vel: Vec<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// Measurement and echo synthesis
// ---------------------------------------------------------------------------

/// Measurement synthesis at the bound: h(state) plus noise drawn through a
/// symmetric factor of the covariance.
pub fn synthesize_measurement<R: Rng>(
    state: &GlobalState,
    meas_cov: &DMatrix<f64>,
    scenario: &Scenario,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let mean = measurement_map(state, scenario)?;
    let factor = linalg::psd_factor(meas_cov, "measurement covariance")?;
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(mean + factor * z)
}

/// Frequency-domain echo samples of one BS: `samples[i]` holds the received
/// N_R vector per allocated subcarrier as columns.
#[derive(Debug, Clone)]
pub struct BsEcho {
    pub bs: usize,
    pub subcarriers: Vec<usize>,
    pub samples: Vec<DMatrix<Complex64>>,
}

/// Raw echo synthesis over one sensing block: per-target dyads with random
/// unit-power symbols and complex Gaussian receiver noise.
pub fn synthesize_echo<R: Rng>(
    state: &GlobalState,
    plan: &BeamPlan,
    scenario: &Scenario,
    rng: &mut R,
) -> Result<Vec<BsEcho>> {
    let links = links_for_state(state, scenario)?;
    let lambda = scenario.radio.wavelength();
    let noise_std = (scenario.radio.noise_power / 2.0).sqrt();
    let mut out = Vec::with_capacity(scenario.num_bs());
    for (k, bs) in scenario.bss.iter().enumerate() {
        let dyads: Vec<(DVector<Complex64>, DVector<Complex64>)> = links[k]
            .iter()
            .map(|l| (bs.rx_steering(l.aoa, lambda), bs.tx_steering(l.aod, lambda)))
            .collect();
        let mut samples = Vec::with_capacity(scenario.radio.num_symbols_per_block);
        for i in 0..scenario.radio.num_symbols_per_block {
            let mut per_sub = DMatrix::zeros(bs.num_rx, bs.subcarriers.len());
            for (j, entry) in plan.per_bs[k].iter().enumerate() {
                let m = entry.subcarrier;
                let n_beams = entry.beams.ncols();
                let symbols = DVector::from_fn(n_beams, |_, _| {
                    Complex64::new(
                        rng.sample::<f64, _>(StandardNormal) / 2.0_f64.sqrt(),
                        rng.sample::<f64, _>(StandardNormal) / 2.0_f64.sqrt(),
                    )
                });
                let precoded = &entry.beams * symbols;
                let mut acc = DVector::zeros(bs.num_rx);
                for (q, l) in links[k].iter().enumerate() {
                    let phase = 2.0
                        * std::f64::consts::PI
                        * (l.doppler * i as f64 * scenario.radio.symbol_interval
                            + m as f64 * scenario.radio.subcarrier_spacing * l.delay);
                    let gain =
                        l.coeff * Complex64::from_polar(1.0, phase) * dyads[q].1.dotc(&precoded);
                    acc += &dyads[q].0 * gain;
                }
                for r in 0..bs.num_rx {
                    acc[r] += Complex64::new(
                        noise_std * rng.sample::<f64, _>(StandardNormal),
                        noise_std * rng.sample::<f64, _>(StandardNormal),
                    );
                }
                per_sub.set_column(j, &acc);
            }
            samples.push(per_sub);
        }
        out.push(BsEcho {
            bs: k,
            subcarriers: bs.subcarriers.clone(),
            samples,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Per-block loop
// ---------------------------------------------------------------------------

fn focused_plan(scenario: &Scenario, predicted: &GlobalState) -> Result<BeamPlan> {
    let links = links_for_state(predicted, scenario)?;
    let aods: Vec<f64> = links.iter().map(|row| row[0].aod).collect();
    Ok(BeamPlan::focused(scenario, &aods))
}

/// Beams for the next block given its predicted state and the current BIM.
fn next_plan(
    mode: SensingMode,
    predicted: &GlobalState,
    scenario: &Scenario,
    model: &MotionModel,
    bim: &Bim,
    current: &BeamPlan,
) -> Result<(BeamPlan, Option<SolverStats>)> {
    match mode {
        SensingMode::Isotropic => Ok((current.clone(), None)),
        SensingMode::SingleTargetFocus => Ok((focused_plan(scenario, predicted)?, None)),
        SensingMode::Optimized => {
            let problem = build_problem(predicted, scenario, model, bim, &scenario.sim.weights)?;
            let solution = solve(&problem, &SolveOptions::for_scenario(scenario))?;
            let iso = BeamPlan::isotropic(scenario);
            let iso_covs: Vec<Vec<_>> = (0..scenario.num_bs()).map(|k| iso.covariances(k)).collect();
            let stats = SolverStats {
                outer_iterations: solution.outer_iterations,
                newton_iterations: solution.newton_iterations,
                objective: solution.objective,
                gap: solution.residuals.gap,
                residuals: solution.residuals.clone(),
                iso_objective: problem.objective_of_covariances(&iso_covs)?,
            };
            let plan = extract_beamformers(&solution, scenario, BEAM_RANK_THRESHOLD);
            Ok((plan, Some(stats)))
        }
    }
}

/// One full adaptive run: the filter tracks its own predictions and the
/// optimizer (in `optimized` mode) works from the filter's next-block
/// prediction, exactly as a live system would.
pub fn run_scenario(scenario: &Scenario, mode: SensingMode, seed: u64) -> Result<Vec<BlockRecord>> {
    let model = MotionModel::for_scenario(scenario)?;
    let layout = scenario.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = scenario.initial_state();
    let mut track = TrackState::initialize(&truth, &mut rng);
    let mut plan = BeamPlan::isotropic(scenario);
    let mut bim: Option<Bim> = None;
    let mut pending_stats: Option<SolverStats> = None;
    let mut records = Vec::with_capacity(scenario.sim.num_blocks);

    for block in 0..scenario.sim.num_blocks {
        let wrap = |e: Error| e.at_block(block);
        let links = links_for_state(&truth, scenario).map_err(wrap)?;
        let (fim, ru) = measurement_information(&links, &plan, scenario).map_err(wrap)?;
        let measured =
            synthesize_measurement(&truth, ru.matrix(), scenario, &mut rng).map_err(wrap)?;
        let prediction = track.clone();
        let (posterior, next_track) =
            run_block(&track, &measured, ru.matrix(), scenario, &model).map_err(wrap)?;

        // Bound recursion along the true trajectory under the transmitted plan.
        let h_true = measurement_jacobian(&truth, scenario).map_err(wrap)?;
        let next_bim = match &bim {
            None => Bim::initial(&h_true, &fim).map_err(wrap)?,
            Some(prev) => bim_step(prev, &model, &h_true, &fim).map_err(wrap)?,
        };
        let bound: Vec<(f64, f64)> = (0..scenario.num_targets())
            .map(|q| accuracy(&next_bim, q, layout))
            .collect::<Result<_>>()
            .map_err(wrap)?;
        let errors = (0..scenario.num_targets())
            .map(|q| {
                let dp = [
                    posterior.estimate.position(q)[0] - truth.position(q)[0],
                    posterior.estimate.position(q)[1] - truth.position(q)[1],
                ];
                let dv = [
                    posterior.estimate.velocity(q)[0] - truth.velocity(q)[0],
                    posterior.estimate.velocity(q)[1] - truth.velocity(q)[1],
                ];
                (
                    (dp[0] * dp[0] + dp[1] * dp[1]).sqrt(),
                    (dv[0] * dv[0] + dv[1] * dv[1]).sqrt(),
                )
            })
            .collect();

        records.push(BlockRecord {
            block,
            truth: truth.clone(),
            prediction: prediction.estimate.clone(),
            posterior: posterior.estimate.clone(),
            bound,
            errors,
            plan: plan.clone(),
            solver: pending_stats.take(),
        });

        // Phase two: beams for block n+1 from the filter's prediction.
        if block + 1 < scenario.sim.num_blocks {
            let (new_plan, stats) = next_plan(
                mode,
                &next_track.estimate,
                scenario,
                &model,
                &next_bim,
                &plan,
            )
            .map_err(wrap)?;
            plan = new_plan;
            pending_stats = stats;
        }

        track = next_track;
        truth = if scenario.sim.ground_truth_noise {
            propagate(&truth, &model, Some(&mut rng)).map_err(wrap)?
        } else {
            propagate::<ChaCha8Rng>(&truth, &model, None).map_err(wrap)?
        };
        bim = Some(next_bim);
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Genie pass and Monte-Carlo campaigns
// ---------------------------------------------------------------------------

/// Deterministic reference pass along the noise-free trajectory: the bound
/// recursion plus the per-block plans that a perfectly informed system would
/// transmit. Shared by all trials of a campaign so that the error statistics
/// and the bound are computed under identical beams.
pub struct GeniePass {
    /// Noise-free truth at blocks 0..=N.
    pub truths: Vec<GlobalState>,
    pub plans: Vec<BeamPlan>,
    pub meas_covs: Vec<DMatrix<f64>>,
    pub meas_infos: Vec<InfoMatrix>,
    pub bims: Vec<Bim>,
    /// [block][target] (position, velocity) bounds.
    pub bounds: Vec<Vec<(f64, f64)>>,
    pub solver: Vec<Option<SolverStats>>,
}

pub fn genie_pass(scenario: &Scenario, mode: SensingMode) -> Result<GeniePass> {
    let model = MotionModel::for_scenario(scenario)?;
    let layout = scenario.layout();
    let blocks = scenario.sim.num_blocks;

    let mut truths = Vec::with_capacity(blocks + 1);
    truths.push(scenario.initial_state());
    for _ in 0..blocks {
        truths.push(propagate::<ChaCha8Rng>(truths.last().unwrap(), &model, None)?);
    }

    let mut plans = Vec::with_capacity(blocks);
    let mut meas_covs = Vec::with_capacity(blocks);
    let mut meas_infos = Vec::with_capacity(blocks);
    let mut bims: Vec<Bim> = Vec::with_capacity(blocks);
    let mut bounds = Vec::with_capacity(blocks);
    let mut solver = Vec::with_capacity(blocks);

    let mut plan = BeamPlan::isotropic(scenario);
    let mut pending_stats: Option<SolverStats> = None;
    for block in 0..blocks {
        let wrap = |e: Error| e.at_block(block);
        let links = links_for_state(&truths[block], scenario).map_err(wrap)?;
        let (fim, ru) = measurement_information(&links, &plan, scenario).map_err(wrap)?;
        let h = measurement_jacobian(&truths[block], scenario).map_err(wrap)?;
        let bim = match bims.last() {
            None => Bim::initial(&h, &fim).map_err(wrap)?,
            Some(prev) => bim_step(prev, &model, &h, &fim).map_err(wrap)?,
        };
        let per_target: Vec<(f64, f64)> = (0..scenario.num_targets())
            .map(|q| accuracy(&bim, q, layout))
            .collect::<Result<_>>()
            .map_err(wrap)?;

        plans.push(plan.clone());
        meas_covs.push(ru.matrix().clone());
        meas_infos.push(fim);
        bounds.push(per_target);
        solver.push(pending_stats.take());

        if block + 1 < blocks {
            let (new_plan, stats) =
                next_plan(mode, &truths[block + 1], scenario, &model, &bim, &plan)
                    .map_err(wrap)?;
            plan = new_plan;
            pending_stats = stats;
        }
        bims.push(bim);
    }
    Ok(GeniePass {
        truths,
        plans,
        meas_covs,
        meas_infos,
        bims,
        bounds,
        solver,
    })
}

/// Monte-Carlo campaign under genie beams: every trial draws its own
/// process-noise trajectory and measurement noise, while the plans and
/// measurement covariances come from the shared noise-free pass. RMSE is
/// aggregated per block per target and paired with the bound.
pub fn monte_carlo(
    scenario: &Scenario,
    mode: SensingMode,
    trials: usize,
    seed: u64,
) -> Result<CampaignResult> {
    if trials == 0 {
        return Err(Error::config("trials", "must be >= 1"));
    }
    let genie = genie_pass(scenario, mode)?;
    let model = MotionModel::for_scenario(scenario)?;
    let blocks = scenario.sim.num_blocks;
    let nq = scenario.num_targets();

    let factors: Vec<DMatrix<f64>> = genie
        .meas_covs
        .iter()
        .map(|c| linalg::psd_factor(c, "measurement covariance"))
        .collect::<Result<_>>()?;

    let mut sq_pos = vec![vec![0.0; nq]; blocks];
    let mut sq_vel = vec![vec![0.0; nq]; blocks];
    for trial in 0..trials {
        // Independent stream per trial from the campaign seed.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64 + 1);
        let mut truth = scenario.initial_state();
        let mut track = TrackState::initialize(&truth, &mut rng);
        for block in 0..blocks {
            let wrap = |e: Error| e.at_block(block);
            let mean = measurement_map(&truth, scenario).map_err(wrap)?;
            let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let measured = mean + &factors[block] * z;
            let (posterior, next_track) = run_block(
                &track,
                &measured,
                &genie.meas_covs[block],
                scenario,
                &model,
            )
            .map_err(wrap)?;
            for q in 0..nq {
                let dp = [
                    posterior.estimate.position(q)[0] - truth.position(q)[0],
                    posterior.estimate.position(q)[1] - truth.position(q)[1],
                ];
                let dv = [
                    posterior.estimate.velocity(q)[0] - truth.velocity(q)[0],
                    posterior.estimate.velocity(q)[1] - truth.velocity(q)[1],
                ];
                sq_pos[block][q] += dp[0] * dp[0] + dp[1] * dp[1];
                sq_vel[block][q] += dv[0] * dv[0] + dv[1] * dv[1];
            }
            track = next_track;
            // Trials sample the motion model, so the prior information the
            // bound accounts for is statistically real.
            truth = propagate(&truth, &model, Some(&mut rng)).map_err(wrap)?;
        }
    }

    let rmse_pos = sq_pos
        .iter()
        .map(|row| row.iter().map(|&s| (s / trials as f64).sqrt()).collect())
        .collect();
    let rmse_vel = sq_vel
        .iter()
        .map(|row| row.iter().map(|&s| (s / trials as f64).sqrt()).collect())
        .collect();
    let bound_pos = genie
        .bounds
        .iter()
        .map(|row| row.iter().map(|&(p, _)| p).collect())
        .collect();
    let bound_vel = genie
        .bounds
        .iter()
        .map(|row| row.iter().map(|&(_, v)| v).collect())
        .collect();
    Ok(CampaignResult {
        trials,
        seed,
        rmse_pos,
        rmse_vel,
        bound_pos,
        bound_vel,
    })
}

// ---------------------------------------------------------------------------
// CSV and manifest output
// ---------------------------------------------------------------------------

/// FNV-1a hash of the scenario file contents, for the run manifest.
pub fn config_hash(text: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn fmt_f(v: f64) -> String {
    // Shortest representation that round-trips exactly.
    format!("{v}")
}

/// One row per block; per-target column groups for truth, estimate, bound,
/// and error values.
pub fn write_blocks_csv(path: &Path, records: &[BlockRecord], scenario: &Scenario) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let mut header = vec!["block".to_string()];
    for q in 0..scenario.num_targets() {
        for col in [
            "truth_x", "truth_y", "truth_vx", "truth_vy", "est_x", "est_y", "est_vx", "est_vy",
            "bound_pos", "bound_vel", "err_pos", "err_vel",
        ] {
            header.push(format!("{col}_t{q}"));
        }
    }
    writeln!(f, "{}", header.join(","))?;
    for r in records {
        let mut row = vec![r.block.to_string()];
        for q in 0..scenario.num_targets() {
            let t = r.truth.position(q);
            let tv = r.truth.velocity(q);
            let e = r.posterior.position(q);
            let ev = r.posterior.velocity(q);
            for v in [
                t[0], t[1], tv[0], tv[1], e[0], e[1], ev[0], ev[1], r.bound[q].0, r.bound[q].1,
                r.errors[q].0, r.errors[q].1,
            ] {
                row.push(fmt_f(v));
            }
        }
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

/// One row per block; per-target RMSE and bound columns.
pub fn write_rmse_csv(path: &Path, result: &CampaignResult) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let nq = result.rmse_pos.first().map_or(0, |r| r.len());
    let mut header = vec!["block".to_string()];
    for q in 0..nq {
        for col in ["rmse_pos", "rmse_vel", "bound_pos", "bound_vel"] {
            header.push(format!("{col}_t{q}"));
        }
    }
    writeln!(f, "{}", header.join(","))?;
    for block in 0..result.rmse_pos.len() {
        let mut row = vec![block.to_string()];
        for q in 0..nq {
            for v in [
                result.rmse_pos[block][q],
                result.rmse_vel[block][q],
                result.bound_pos[block][q],
                result.bound_vel[block][q],
            ] {
                row.push(fmt_f(v));
            }
        }
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

/// Angle sweep of one BS's transmit gain: degrees and dB columns.
pub fn write_beampattern_csv(
    path: &Path,
    plan: &BeamPlan,
    bs_index: usize,
    angles_deg: &[f64],
    scenario: &Scenario,
) -> Result<()> {
    let angles_rad: Vec<f64> = angles_deg.iter().map(|a| a.to_radians()).collect();
    let gains = beampattern(plan, bs_index, &angles_rad, scenario);
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "angle_deg,gain_db")?;
    for (a, g) in angles_deg.iter().zip(&gains) {
        let db = 10.0 * g.max(1e-300).log10();
        writeln!(f, "{},{}", fmt_f(*a), fmt_f(db))?;
    }
    Ok(())
}

pub struct ManifestInfo<'a> {
    pub scenario_path: &'a str,
    pub scenario_text: &'a str,
    pub mode: SensingMode,
    pub trials: usize,
    pub seed: u64,
}

pub fn write_manifest(path: &Path, info: &ManifestInfo, scenario: &Scenario) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "scenario = {}", info.scenario_path)?;
    writeln!(f, "config_hash = {:016x}", config_hash(info.scenario_text))?;
    writeln!(f, "mode = {}", info.mode)?;
    writeln!(f, "trials = {}", info.trials)?;
    writeln!(f, "seed = {}", info.seed)?;
    writeln!(f, "num_blocks = {}", scenario.sim.num_blocks)?;
    writeln!(f, "sdp_gap_tol = {}", scenario.beamform.gap_tol)?;
    writeln!(f, "beam_rank_threshold = {}", BEAM_RANK_THRESHOLD)?;
    Ok(())
}

/// Re-parses a blocks.csv file into its float cells (used by the round-trip
/// checks; the first column is the block index).
pub fn parse_blocks_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').skip(1).map(str::parse::<f64>).collect();
        rows.push(row.map_err(|e| Error::config("blocks.csv", e.to_string()))?);
    }
    Ok(rows)
}
