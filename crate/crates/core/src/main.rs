//! Command-line front end: simulation runs, bound curves, beampattern dumps,
//! and information-matrix validation tables.

use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use nettrack::error::Error;
use nettrack::fim;
use nettrack::harness::{self, ManifestInfo, SensingMode};
use nettrack::scenario::{links_for_state, Scenario};

#[derive(Parser)]
#[command(
    name = "nettrack",
    version,
    about = "Networked multi-BS target tracking simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the tracking loop and write per-block records (or campaign RMSE).
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = SensingMode::Optimized)]
        mode: SensingMode,
        /// 1 = single adaptive run (blocks.csv); >1 = Monte-Carlo campaign
        /// under shared reference beams (rmse.csv).
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        output_dir: PathBuf,
    },
    /// Dump transmit beampatterns of every BS at selected blocks.
    Beampattern {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated block indices.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        blocks: Vec<usize>,
        /// Angle grid resolution in degrees.
        #[arg(long, default_value_t = 1.0)]
        resolution: f64,
        #[arg(long, value_enum, default_value_t = SensingMode::Optimized)]
        mode: SensingMode,
        #[arg(long, default_value = "out")]
        output_dir: PathBuf,
    },
    /// Write the per-block accuracy bounds along the reference trajectory.
    Pcrb {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = SensingMode::Optimized)]
        mode: SensingMode,
        #[arg(long, default_value = "out")]
        output_dir: PathBuf,
    },
    /// Compare the factored information sub-blocks against the direct route.
    ValidateFim {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        output_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn load(path: &Path) -> Result<(Scenario, String), Error> {
    let text = std::fs::read_to_string(path)?;
    let scenario = Scenario::from_toml(&text)?;
    Ok((scenario, text))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate {
            scenario,
            mode,
            trials,
            seed,
            output_dir,
        } => {
            let (scn, text) = load(&scenario)?;
            std::fs::create_dir_all(&output_dir)?;
            if trials <= 1 {
                let records = harness::run_scenario(&scn, mode, seed)?;
                harness::write_blocks_csv(&output_dir.join("blocks.csv"), &records, &scn)?;
            } else {
                let result = harness::monte_carlo(&scn, mode, trials, seed)?;
                harness::write_rmse_csv(&output_dir.join("rmse.csv"), &result)?;
            }
            harness::write_manifest(
                &output_dir.join("manifest.txt"),
                &ManifestInfo {
                    scenario_path: &scenario.display().to_string(),
                    scenario_text: &text,
                    mode,
                    trials,
                    seed,
                },
                &scn,
            )?;
            Ok(())
        }
        Command::Beampattern {
            scenario,
            blocks,
            resolution,
            mode,
            output_dir,
        } => {
            let (scn, _) = load(&scenario)?;
            if !(resolution > 0.0) {
                return Err(Error::config("resolution", "must be positive"));
            }
            std::fs::create_dir_all(&output_dir)?;
            let pass = harness::genie_pass(&scn, mode)?;
            let steps = (360.0 / resolution).round() as usize;
            let angles: Vec<f64> = (0..=steps)
                .map(|i| -180.0 + i as f64 * resolution)
                .collect();
            for &block in &blocks {
                if block >= scn.sim.num_blocks {
                    return Err(Error::config(
                        "blocks",
                        format!("block {block} out of range 0..{}", scn.sim.num_blocks),
                    ));
                }
                for k in 0..scn.num_bs() {
                    let path = output_dir.join(format!("beampattern_k{k}_n{block}.csv"));
                    harness::write_beampattern_csv(&path, &pass.plans[block], k, &angles, &scn)?;
                }
            }
            Ok(())
        }
        Command::Pcrb {
            scenario,
            mode,
            output_dir,
        } => {
            let (scn, _) = load(&scenario)?;
            std::fs::create_dir_all(&output_dir)?;
            let pass = harness::genie_pass(&scn, mode)?;
            use std::io::Write;
            let mut f = std::fs::File::create(output_dir.join("pcrb.csv"))?;
            let mut header = vec!["block".to_string()];
            for q in 0..scn.num_targets() {
                header.push(format!("bound_pos_t{q}"));
                header.push(format!("bound_vel_t{q}"));
            }
            writeln!(f, "{}", header.join(","))?;
            for (block, per_target) in pass.bounds.iter().enumerate() {
                let mut row = vec![block.to_string()];
                for &(dx, dv) in per_target {
                    row.push(format!("{dx}"));
                    row.push(format!("{dv}"));
                }
                writeln!(f, "{}", row.join(","))?;
            }
            Ok(())
        }
        Command::ValidateFim {
            scenario,
            output_dir,
        } => {
            let (scn, _) = load(&scenario)?;
            std::fs::create_dir_all(&output_dir)?;
            validate_fim(&scn, &output_dir)
        }
    }
}

/// Closed-form vs direct-route error table over the scenario's BSs, under
/// the isotropic plan at block 0.
fn validate_fim(scn: &Scenario, output_dir: &Path) -> Result<(), Error> {
    use std::io::Write;
    let state = scn.initial_state();
    let links = links_for_state(&state, scn)?;
    let plan = fim::BeamPlan::isotropic(scn);
    let mut f = std::fs::File::create(output_dir.join("fim_validation.csv"))?;
    writeln!(f, "bs,submatrix,max_rel_error")?;
    let nq = scn.num_targets();
    for (k, bs) in scn.bss.iter().enumerate() {
        let covs = plan.covariances(k);
        let general = fim::fim_general(bs, &links[k], &covs, &scn.radio);
        let xi = fim::fim_closed_xi_xi(bs, &links[k], &covs, &scn.radio);
        let ad = fim::fim_closed_aoa_delay(bs, &links[k], &covs, &scn.radio);
        let xi_blk = general
            .matrix()
            .view((3 * nq, 3 * nq), (nq, nq))
            .into_owned();
        let ad_blk = general.matrix().view((0, nq), (nq, nq)).into_owned();
        let rel_xi = (&xi_blk - &xi).amax() / xi.amax().max(f64::MIN_POSITIVE);
        let rel_ad = (&ad_blk - &ad).amax() / ad.amax().max(f64::MIN_POSITIVE);
        writeln!(f, "{k},xi_xi,{rel_xi}")?;
        writeln!(f, "{k},aoa_delay,{rel_ad}")?;
    }
    Ok(())
}
