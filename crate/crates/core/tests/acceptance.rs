//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its runtime. Run with `cargo test --test acceptance`
//! (add `-- --nocapture` to see the lines).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::time::Instant;

use nettrack::beamform::{
    build_problem, extract_beamformers, solve, verify_span, SolveOptions,
};
use nettrack::fim::{
    assemble_ru, compute_echo_kernels, fim_closed_aoa_delay, fim_closed_xi_xi, fim_from_kernels,
    fim_general, BeamPlan,
};
use nettrack::harness::{genie_pass, monte_carlo, SensingMode};
use nettrack::linalg;
use nettrack::motion::{propagate, MotionModel};
use nettrack::pcrb::{data_info, Bim};
use nettrack::scenario::{
    links_for_state, measurement_jacobian, measurement_map, BsConfig, GlobalState, LinkParams,
    OptimizationSpace, RadioConfig, Scenario,
};

fn table1() -> Scenario {
    Scenario::from_path(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/scenarios/table1.scenario"
    ))
    .expect("bundled scenario parses")
}

fn random_psd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(n, n, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    &g * g.adjoint()
}

fn pass(criterion: usize, what: &str, t0: Instant) {
    println!(
        "ACCEPTANCE {:02} PASS ({:6.1}s): {}",
        criterion,
        t0.elapsed().as_secs_f64(),
        what
    );
}

// -------------------------------------------------------------------------
// 1. Closed-form information sub-blocks match the direct route.
// -------------------------------------------------------------------------
#[test]
fn acceptance_01_fim_closed_forms_match_oracle() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    let check = |bs: &BsConfig, links: &[LinkParams], covs: &[DMatrix<Complex64>], radio: &RadioConfig| {
        let q = links.len();
        let general = fim_general(bs, links, covs, radio);
        let xi = fim_closed_xi_xi(bs, links, covs, radio);
        let ad = fim_closed_aoa_delay(bs, links, covs, radio);
        let xi_blk = general.matrix().view((3 * q, 3 * q), (q, q)).into_owned();
        let ad_blk = general.matrix().view((0, q), (q, q)).into_owned();
        let rel_xi = (&xi_blk - &xi).amax() / xi.amax();
        let rel_ad = (&ad_blk - &ad).amax() / ad.amax();
        assert!(rel_xi < 1e-8, "xi-xi mismatch {rel_xi:.3e}");
        assert!(rel_ad < 1e-8, "aoa-delay mismatch {rel_ad:.3e}");
    };

    // 20 random geometries.
    for _ in 0..20 {
        let radio = RadioConfig {
            carrier_frequency: 3.0e9,
            subcarrier_spacing: 480.0e3,
            symbol_interval: 1.0e-4,
            num_subcarriers: 6,
            num_symbols_per_block: 20,
            noise_power: 0.37,
            block_interval: 1.0,
        };
        let mut subs: Vec<usize> = (0..6).collect();
        for i in (1..subs.len()).rev() {
            subs.swap(i, rng.random_range(0..=i));
        }
        let mut subs: Vec<usize> = subs.into_iter().take(3).collect();
        subs.sort_unstable();
        let bs = BsConfig {
            position: [0.0, 0.0],
            rx_incline: 0.0,
            tx_incline: 0.0,
            num_tx: 4,
            num_rx: 4,
            antenna_spacing: radio.wavelength() / 2.0,
            tx_power: 5.0,
            antenna_gain: 1.0,
            subcarriers: subs.clone(),
        };
        let links: Vec<LinkParams> = (0..2)
            .map(|_| {
                let aoa = rng.random_range(-1.2..1.2);
                LinkParams {
                    aoa,
                    aod: aoa,
                    delay: rng.random_range(1.0e-7..8.0e-7),
                    doppler: rng.random_range(-200.0..200.0),
                    range: 50.0,
                    coeff: Complex64::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ),
                }
            })
            .collect();
        let covs: Vec<DMatrix<Complex64>> =
            subs.iter().map(|_| random_psd(4, &mut rng)).collect();
        check(&bs, &links, &covs, &radio);
    }

    // The bundled scenario with per-subcarrier random covariances.
    let scn = table1();
    let links = links_for_state(&scn.initial_state(), &scn).unwrap();
    for (k, bs) in scn.bss.iter().enumerate() {
        let covs: Vec<DMatrix<Complex64>> = bs
            .subcarriers
            .iter()
            .map(|_| random_psd(bs.num_tx, &mut rng))
            .collect();
        check(bs, &links[k], &covs, &scn.radio);
    }

    assert!(t0.elapsed().as_secs_f64() < 10.0, "criterion 1 over budget");
    pass(1, "closed-form information blocks match the direct route (rel < 1e-8)", t0);
}

// -------------------------------------------------------------------------
// 2. Analytic Jacobian vs central finite differences.
// -------------------------------------------------------------------------
fn jacobian_fd(state: &GlobalState, scenario: &Scenario) -> (DMatrix<f64>, Vec<f64>) {
    let n = state.dim();
    let rows = scenario.meas_layout().dim();
    let mut jac = DMatrix::zeros(rows, n);
    let mut steps = Vec::with_capacity(n);
    for j in 0..n {
        let v = state.as_vector()[j];
        let h = (1e-8 * v.abs()).max(1e-6);
        steps.push(h);
        let mut plus = state.as_vector().clone();
        let mut minus = plus.clone();
        plus[j] += h;
        minus[j] -= h;
        let up = measurement_map(
            &GlobalState::from_vector(plus, scenario.num_bs(), scenario.num_targets()).unwrap(),
            scenario,
        )
        .unwrap();
        let um = measurement_map(
            &GlobalState::from_vector(minus, scenario.num_bs(), scenario.num_targets()).unwrap(),
            scenario,
        )
        .unwrap();
        jac.set_column(j, &((up - um) / (2.0 * h)));
    }
    (jac, steps)
}

/// Worst relative deviation between an analytic Jacobian and its
/// finite-difference estimate, with the comparison floored at the point
/// where cancellation noise of the differences (eps |f_i| / h_j) makes a
/// 1e-5 relative test vacuous.
fn max_rel_error(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    f_scales: &DVector<f64>,
    steps: &[f64],
) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let fd_noise = 2.2e-16 * f_scales[i] / steps[j];
            let denom = a[(i, j)].abs().max(b[(i, j)].abs()).max(1e6 * fd_noise);
            worst = worst.max((a[(i, j)] - b[(i, j)]).abs() / denom);
        }
    }
    worst
}

#[test]
fn acceptance_02_jacobian_matches_finite_differences() {
    let t0 = Instant::now();
    let scn = table1();
    let base = scn.initial_state();
    let layout = scn.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..20 {
        let mut v = base.as_vector().clone();
        for q in 0..scn.num_targets() {
            v[layout.pos_x(q)] += rng.random_range(-20.0..20.0);
            v[layout.pos_y(q)] += rng.random_range(-20.0..20.0);
            v[layout.vel_x(q)] += rng.random_range(-3.0..3.0);
            v[layout.vel_y(q)] += rng.random_range(-3.0..3.0);
            for k in 0..scn.num_bs() {
                v[layout.ercs_re(k, q)] += rng.random_range(-0.3..0.3);
                v[layout.ercs_im(k, q)] += rng.random_range(-0.3..0.3);
            }
        }
        let state = GlobalState::from_vector(v, scn.num_bs(), scn.num_targets()).unwrap();
        let analytic = measurement_jacobian(&state, &scn).unwrap();
        let (fd, steps) = jacobian_fd(&state, &scn);
        let f_scales = measurement_map(&state, &scn).unwrap().abs();
        let err = max_rel_error(&analytic, &fd, &f_scales, &steps);
        assert!(err < 1e-5, "Jacobian mismatch {err:.3e}");
    }
    assert!(t0.elapsed().as_secs_f64() < 5.0, "criterion 2 over budget");
    pass(2, "analytic Jacobian matches finite differences on 20 random states (rel < 1e-5)", t0);
}

// -------------------------------------------------------------------------
// 3. Data information is linear in the transmit covariances.
// -------------------------------------------------------------------------
#[test]
fn acceptance_03_data_information_linearity() {
    let t0 = Instant::now();
    let scn = table1();
    let state = scn.initial_state();
    let links = links_for_state(&state, &scn).unwrap();
    let h = measurement_jacobian(&state, &scn).unwrap();
    let kernels: Vec<_> = scn
        .bss
        .iter()
        .enumerate()
        .map(|(k, bs)| compute_echo_kernels(bs, &links[k], &scn.radio))
        .collect();

    let jd_of = |plans: &[Vec<DMatrix<Complex64>>]| -> DMatrix<f64> {
        let per_bs: Vec<_> = kernels
            .iter()
            .zip(plans)
            .map(|(kern, covs)| fim_from_kernels(kern, covs))
            .collect();
        let (fim, _) = assemble_ru(&per_bs).unwrap();
        data_info(&h, &fim).unwrap().matrix().clone()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for _ in 0..50 {
        let plan_a: Vec<Vec<DMatrix<Complex64>>> = scn
            .bss
            .iter()
            .map(|bs| bs.subcarriers.iter().map(|_| random_psd(bs.num_tx, &mut rng)).collect())
            .collect();
        let plan_b: Vec<Vec<DMatrix<Complex64>>> = scn
            .bss
            .iter()
            .map(|bs| bs.subcarriers.iter().map(|_| random_psd(bs.num_tx, &mut rng)).collect())
            .collect();
        let (alpha, beta) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
        let mixed: Vec<Vec<DMatrix<Complex64>>> = plan_a
            .iter()
            .zip(&plan_b)
            .map(|(ra, rb)| {
                ra.iter()
                    .zip(rb)
                    .map(|(a, b)| a * Complex64::from(alpha) + b * Complex64::from(beta))
                    .collect()
            })
            .collect();
        let lhs = jd_of(&mixed);
        let rhs = jd_of(&plan_a) * alpha + jd_of(&plan_b) * beta;
        let rel = (&lhs - &rhs).amax() / rhs.amax();
        assert!(rel < 1e-9, "linearity violated: {rel:.3e}");
    }
    assert!(t0.elapsed().as_secs_f64() < 10.0, "criterion 3 over budget");
    pass(3, "data information linear over 50 random PSD pairs (rel < 1e-9)", t0);
}

// -------------------------------------------------------------------------
// 4. Collinear dual-BS geometry is singular; 5 degrees off is not.
// -------------------------------------------------------------------------
fn dual_bs_scenario(off_line_angle: f64) -> Scenario {
    let mut scn = table1();
    scn.bss.truncate(2);
    scn.bss[0].position = [-50.0, 0.0];
    scn.bss[1].position = [50.0, 0.0];
    scn.bss[0].subcarriers = vec![0, 2, 4, 6];
    scn.bss[1].subcarriers = vec![1, 3, 5, 7];
    let r = 20.0;
    scn.targets.truncate(1);
    scn.targets[0].position = [r * off_line_angle.cos(), r * off_line_angle.sin()];
    scn.targets[0].velocity = [1.5, 0.8];
    scn.sim.weights = vec![1.0; 4];
    scn.validate().unwrap();
    scn
}

fn data_info_singular_ratio(scn: &Scenario) -> f64 {
    let state = scn.initial_state();
    let links = links_for_state(&state, scn).unwrap();
    let plan = BeamPlan::isotropic(scn);
    let per_bs: Vec<_> = scn
        .bss
        .iter()
        .enumerate()
        .map(|(k, bs)| fim_general(bs, &links[k], &plan.covariances(k), &scn.radio))
        .collect();
    let (fim, _) = assemble_ru(&per_bs).unwrap();
    let h = measurement_jacobian(&state, scn).unwrap();
    let jd = data_info(&h, &fim).unwrap();
    let sv = jd.matrix().clone().svd(false, false).singular_values;
    sv[sv.len() - 1] / sv[0]
}

#[test]
fn acceptance_04_collinearity_singularity() {
    let t0 = Instant::now();
    let on_line = data_info_singular_ratio(&dual_bs_scenario(0.0));
    assert!(on_line < 1e-10, "on-line ratio {on_line:.3e} not singular");
    let off_line = data_info_singular_ratio(&dual_bs_scenario(5.0_f64.to_radians()));
    assert!(off_line > 1e-8, "off-line ratio {off_line:.3e} too singular");
    assert!(t0.elapsed().as_secs_f64() < 5.0, "criterion 4 over budget");
    pass(4, "dual-BS collinear geometry singular, 5 degrees off regular", t0);
}

// -------------------------------------------------------------------------
// 5. Optimal covariances live in the steering span; reduced solve matches.
// -------------------------------------------------------------------------
/// Block-1 optimization context on the bundled scenario: the block-0 BIM
/// under isotropic beams plus the noise-free predicted state.
fn block1_context(scn: &Scenario) -> (MotionModel, Bim, GlobalState) {
    let model = MotionModel::for_scenario(scn).unwrap();
    let truth0 = scn.initial_state();
    let links = links_for_state(&truth0, scn).unwrap();
    let plan = BeamPlan::isotropic(scn);
    let per_bs: Vec<_> = scn
        .bss
        .iter()
        .enumerate()
        .map(|(k, bs)| fim_general(bs, &links[k], &plan.covariances(k), &scn.radio))
        .collect();
    let (fim, _) = assemble_ru(&per_bs).unwrap();
    let h = measurement_jacobian(&truth0, scn).unwrap();
    let bim = Bim::initial(&h, &fim).unwrap();
    let predicted = propagate::<ChaCha8Rng>(&truth0, &model, None).unwrap();
    (model, bim, predicted)
}

#[test]
fn acceptance_05_optimal_span_and_reduced_equivalence() {
    let t0 = Instant::now();
    let mut scn_full = table1();
    scn_full.beamform.space = OptimizationSpace::Full;
    let (model, bim, predicted) = block1_context(&scn_full);
    let problem_full =
        build_problem(&predicted, &scn_full, &model, &bim, &scn_full.sim.weights).unwrap();
    let sol_full = solve(&problem_full, &SolveOptions::default()).unwrap();

    let links = links_for_state(&predicted, &scn_full).unwrap();
    let aods: Vec<Vec<f64>> = links
        .iter()
        .map(|row| row.iter().map(|l| l.aod).collect())
        .collect();
    let residuals = verify_span(&sol_full, &scn_full, &aods);
    for (k, per_bs) in residuals.iter().enumerate() {
        for (j, &r) in per_bs.iter().enumerate() {
            assert!(r < 1e-4, "span residual {r:.3e} at BS {k} subcarrier slot {j}");
        }
    }

    let mut scn_red = scn_full.clone();
    scn_red.beamform.space = OptimizationSpace::Reduced;
    let problem_red =
        build_problem(&predicted, &scn_red, &model, &bim, &scn_red.sim.weights).unwrap();
    let sol_red = solve(&problem_red, &SolveOptions::default()).unwrap();
    let obj_full = problem_full
        .objective_of_covariances(&sol_full.covariances)
        .unwrap();
    let obj_red = problem_full
        .objective_of_covariances(&sol_red.covariances)
        .unwrap();
    let rel = (obj_full - obj_red).abs() / obj_full;
    assert!(rel < 1e-4, "reduced/full objective mismatch {rel:.3e}");

    assert!(t0.elapsed().as_secs_f64() < 120.0, "criterion 5 over budget");
    pass(5, "full-space solution in steering span (< 1e-4); reduced solve matches objective", t0);
}

// -------------------------------------------------------------------------
// 6. Solver soundness across the full optimized run.
// -------------------------------------------------------------------------
#[test]
fn acceptance_06_solver_soundness_full_run() {
    let t0 = Instant::now();
    let scn = table1();
    let pass_data = genie_pass(&scn, SensingMode::Optimized).unwrap();
    let mut solved = 0;
    for (block, stats) in pass_data.solver.iter().enumerate() {
        let Some(stats) = stats else { continue };
        solved += 1;
        let r = &stats.residuals;
        assert!(
            r.power_excess_rel <= 1e-6,
            "block {block}: power excess {:.3e}",
            r.power_excess_rel
        );
        assert!(
            r.lmi_min_eig_rel >= -1e-8,
            "block {block}: LMI min eig {:.3e}",
            r.lmi_min_eig_rel
        );
        assert!(
            r.cov_min_eig_rel >= -1e-8,
            "block {block}: covariance min eig {:.3e}",
            r.cov_min_eig_rel
        );
        assert!(
            stats.objective <= stats.iso_objective,
            "block {block}: objective {} above isotropic {}",
            stats.objective,
            stats.iso_objective
        );
    }
    assert_eq!(solved, scn.sim.num_blocks - 1, "every block after 0 solved");
    // Transmitted plans also respect the budgets after beam extraction, and
    // every optimized plan stays in the predicted steering span.
    let lambda = scn.radio.wavelength();
    for (block, plan) in pass_data.plans.iter().enumerate() {
        plan.validate(&scn)
            .unwrap_or_else(|e| panic!("plan invalid at block {block}: {e}"));
        if block == 0 {
            continue; // the initial isotropic plan is not span-constrained
        }
        let links = links_for_state(&pass_data.truths[block], &scn).unwrap();
        for (k, bs) in scn.bss.iter().enumerate() {
            let aods: Vec<f64> = links[k].iter().map(|l| l.aod).collect();
            let u = nettrack::beamform::steering_span_basis(bs, &aods, lambda);
            let proj = &u * u.adjoint();
            let eye = DMatrix::<Complex64>::identity(bs.num_tx, bs.num_tx);
            let perp = &eye - proj;
            for entry in &plan.per_bs[k] {
                let outside = &perp * &entry.covariance * &perp;
                let resid = outside.norm() / entry.covariance.trace().re;
                assert!(
                    resid < 1e-4,
                    "span residual {resid:.3e} at block {block} BS {k}"
                );
            }
        }
    }
    assert!(t0.elapsed().as_secs_f64() < 300.0, "criterion 6 over budget");
    pass(6, "40-block optimized run: feasible, PSD, in-span, never worse than isotropic", t0);
}

// -------------------------------------------------------------------------
// 7. Tracking error statistics follow the bound.
// -------------------------------------------------------------------------
#[test]
fn acceptance_07_rmse_tracks_bound() {
    let t0 = Instant::now();
    let scn = table1();
    let result = monte_carlo(&scn, SensingMode::Optimized, 200, 424242).unwrap();
    for block in 10..scn.sim.num_blocks {
        for q in 0..scn.num_targets() {
            let ratio = result.rmse_pos[block][q] / result.bound_pos[block][q];
            assert!(
                (0.8..=1.25).contains(&ratio),
                "position ratio {ratio:.3} out of band at block {block} target {q}"
            );
        }
    }
    for block in 20..scn.sim.num_blocks {
        for q in 0..scn.num_targets() {
            let ratio = result.rmse_vel[block][q] / result.bound_vel[block][q];
            assert!(
                (0.8..=1.4).contains(&ratio),
                "velocity ratio {ratio:.3} out of band at block {block} target {q}"
            );
        }
    }
    assert!(t0.elapsed().as_secs_f64() < 600.0, "criterion 7 over budget");
    pass(7, "200-trial RMSE within [0.8,1.25]x position and [0.8,1.4]x velocity bounds", t0);
}

// -------------------------------------------------------------------------
// 8. Tracking beats the non-tracking bound at every block.
// -------------------------------------------------------------------------
#[test]
fn acceptance_08_tracking_beats_non_tracking() {
    let t0 = Instant::now();
    let scn = table1();
    let pass_data = genie_pass(&scn, SensingMode::Isotropic).unwrap();
    let layout = scn.layout();
    for block in 2..scn.sim.num_blocks {
        let h = measurement_jacobian(&pass_data.truths[block], &scn).unwrap();
        let jd = data_info(&h, &pass_data.meas_infos[block]).unwrap();
        let jd_inv = linalg::sym_pseudo_inverse(jd.matrix(), 1e-10).inverse;
        let jb_inv = linalg::spd_inverse(pass_data.bims[block].info.matrix(), "bim").unwrap();
        for q in 0..scn.num_targets() {
            for idx in [layout.pos_x(q), layout.pos_y(q)] {
                assert!(
                    jb_inv[(idx, idx)] < jd_inv[(idx, idx)],
                    "block {block} target {q}: tracking bound {} not below {}",
                    jb_inv[(idx, idx)],
                    jd_inv[(idx, idx)]
                );
            }
        }
    }
    assert!(t0.elapsed().as_secs_f64() < 60.0, "criterion 8 over budget");
    pass(8, "recursion bound strictly below the data-only bound on all position diagonals", t0);
}

// -------------------------------------------------------------------------
// 9. Mode ordering and the two-target loss factor.
// -------------------------------------------------------------------------
#[test]
fn acceptance_09_mode_ordering_and_loss_factor() {
    let t0 = Instant::now();
    let scn = table1();
    let avg_pos = |mode: SensingMode| -> (f64, f64) {
        let p = genie_pass(&scn, mode).unwrap();
        let n = p.bounds.len() as f64;
        (
            p.bounds.iter().map(|b| b[0].0).sum::<f64>() / n,
            p.bounds.iter().map(|b| b[1].0).sum::<f64>() / n,
        )
    };
    let opt = avg_pos(SensingMode::Optimized);
    let iso = avg_pos(SensingMode::Isotropic);
    let foc = avg_pos(SensingMode::SingleTargetFocus);

    assert!(foc.0 < opt.0, "focus {} not below optimized {} on target 0", foc.0, opt.0);
    assert!(opt.0 < iso.0, "optimized {} not below isotropic {} on target 0", opt.0, iso.0);
    assert!(
        opt.1 * 2.0 < foc.1,
        "optimized {} not far below focus {} on target 1",
        opt.1,
        foc.1
    );
    let loss = opt.0 / foc.0;
    assert!(
        (1.0..=1.5).contains(&loss),
        "loss factor {loss:.3} outside [1.0, 1.5]"
    );
    pass(9, "focus < optimized < isotropic on target 0; loss factor in bracket", t0);
}

// -------------------------------------------------------------------------
// 10. Steady-state bound is monotone in the process-noise power.
// -------------------------------------------------------------------------
#[test]
fn acceptance_10_bound_monotone_in_process_noise() {
    let t0 = Instant::now();
    let mus = [1e-3, 1e-2, 1e-1, 1.0];
    let handles: Vec<_> = mus
        .iter()
        .map(|&mu| {
            let mut scn = table1();
            scn.sim.process_noise = mu;
            std::thread::spawn(move || {
                let p = genie_pass(&scn, SensingMode::Optimized).unwrap();
                *p.bounds.last().unwrap().first().unwrap()
            })
        })
        .collect();
    let finals: Vec<(f64, f64)> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    for w in finals.windows(2) {
        assert!(
            w[1].0 >= w[0].0,
            "final position bound decreased: {} -> {}",
            w[0].0,
            w[1].0
        );
        assert!(
            w[1].1 >= w[0].1,
            "final velocity bound decreased: {} -> {}",
            w[0].1,
            w[1].1
        );
    }
    assert!(t0.elapsed().as_secs_f64() < 300.0, "criterion 10 over budget");
    pass(10, "final-block bounds nondecreasing over mu in {1e-3..1}", t0);
}

// -------------------------------------------------------------------------
// 11. Beam association: near-target lobes early, shared lobes mid-run.
// -------------------------------------------------------------------------
/// Gain of one BS on a 1-degree grid spanning the two target bearings
/// (plus margin), dodging the linear array's front-back ambiguity.
fn windowed_pattern(
    plan: &BeamPlan,
    k: usize,
    aods_deg: (f64, f64),
    scn: &Scenario,
) -> (Vec<f64>, Vec<f64>) {
    let lo = aods_deg.0.min(aods_deg.1) - 20.0;
    let hi = aods_deg.0.max(aods_deg.1) + 20.0;
    let n = (hi - lo).round() as usize + 1;
    let angles_deg: Vec<f64> = (0..n).map(|i| lo + i as f64).collect();
    let angles_rad: Vec<f64> = angles_deg.iter().map(|a| a.to_radians()).collect();
    let gains = nettrack::beamform::beampattern(plan, k, &angles_rad, scn);
    (angles_deg, gains)
}

fn gain_at(plan: &BeamPlan, k: usize, angle_deg: f64, scn: &Scenario) -> f64 {
    nettrack::beamform::beampattern(plan, k, &[angle_deg.to_radians()], scn)[0]
}

#[test]
fn acceptance_11_beam_association_behavior() {
    let t0 = Instant::now();
    let mut scn = table1();
    scn.sim.num_blocks = 21; // needs blocks 1 and 20 only
    let pass_data = genie_pass(&scn, SensingMode::Optimized).unwrap();

    let aods_at = |block: usize| -> Vec<(f64, f64)> {
        let links = links_for_state(&pass_data.truths[block], &scn).unwrap();
        links
            .iter()
            .map(|row| (row[0].aod.to_degrees(), row[1].aod.to_degrees()))
            .collect()
    };

    // Block 1: the BS near target 0 single-lobes it and suppresses target 1.
    let near_bs = 2;
    let aods1 = aods_at(1);
    let (angles, gains) = windowed_pattern(&pass_data.plans[1], near_bs, aods1[near_bs], &scn);
    let (imax, &gmax) = gains
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let argmax = angles[imax];
    assert!(
        (argmax - aods1[near_bs].0).abs() <= 5.0,
        "block-1 argmax {argmax:.1} deg not within 5 deg of {:.1}",
        aods1[near_bs].0
    );
    let g_far = gain_at(&pass_data.plans[1], near_bs, aods1[near_bs].1, &scn);
    let suppression_db = 10.0 * (gmax / g_far.max(1e-300)).log10();
    assert!(
        suppression_db >= 6.0,
        "far-target suppression only {suppression_db:.1} dB"
    );

    // Block 20: every BS illuminates both targets within 3 dB.
    let aods20 = aods_at(20);
    for k in 0..scn.num_bs() {
        let g0 = gain_at(&pass_data.plans[20], k, aods20[k].0, &scn);
        let g1 = gain_at(&pass_data.plans[20], k, aods20[k].1, &scn);
        let gap_db = (10.0 * (g0 / g1).log10()).abs();
        assert!(gap_db <= 3.0, "BS {k} gain gap {gap_db:.2} dB at block 20");
    }
    pass(11, "near-BS single lobe with >= 6 dB suppression at block 1; <= 3 dB gaps at block 20", t0);
}

// -------------------------------------------------------------------------
// 12. Velocity-vs-position weighting flips the beam association.
// -------------------------------------------------------------------------
#[test]
fn acceptance_12_weight_sweep_flips_argmax() {
    let t0 = Instant::now();
    let argmax_for_ratio = |ratio: f64| -> Vec<f64> {
        let mut scn = table1();
        let q2 = 2 * scn.num_targets();
        let mut w = vec![1.0; q2];
        w.extend(vec![ratio; q2]);
        scn.sim.weights = w;
        let (model, bim, predicted) = block1_context(&scn);
        let problem = build_problem(&predicted, &scn, &model, &bim, &scn.sim.weights).unwrap();
        let sol = solve(&problem, &SolveOptions::default()).unwrap();
        let plan = extract_beamformers(&sol, &scn, 1e-3);
        let links = links_for_state(&predicted, &scn).unwrap();
        [2usize, 3]
            .iter()
            .map(|&k| {
                let aods = (links[k][0].aod.to_degrees(), links[k][1].aod.to_degrees());
                let (angles, gains) = windowed_pattern(&plan, k, aods, &scn);
                let (imax, _) = gains
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap();
                angles[imax]
            })
            .collect()
    };

    let position_weighted = argmax_for_ratio(1e-3);
    let velocity_weighted = argmax_for_ratio(1e3);

    let scn = table1();
    let (_, _, predicted) = block1_context(&scn);
    let links = links_for_state(&predicted, &scn).unwrap();
    // A linear array cannot tell a bearing from its mirror image, so compare
    // in sine space.
    let closeness = |argmax_deg: f64, aod_rad: f64| -> f64 {
        (argmax_deg.to_radians().sin() - aod_rad.sin()).abs()
    };
    for (slot, &k) in [2usize, 3].iter().enumerate() {
        let (a0, a1) = (links[k][0].aod, links[k][1].aod);
        // BS index 2 sits near target 0, BS index 3 near target 1.
        let (near, far) = if k == 2 { (a0, a1) } else { (a1, a0) };
        let pw = position_weighted[slot];
        let vw = velocity_weighted[slot];
        assert!(
            closeness(pw, near) < closeness(pw, far),
            "BS {k}: position-weighted argmax {pw:.1} not at its near target"
        );
        assert!(
            closeness(vw, far) < closeness(vw, near),
            "BS {k}: velocity-weighted argmax {vw:.1} did not flip to the far target"
        );
    }
    pass(12, "weight sweep flips the corner BSs' beam association between targets", t0);
}
