//! Static scenario description and the geometric measurement model.
//!
//! A scenario is a set of base stations with uniform linear transmit/receive
//! arrays, a set of point targets, and the OFDM radio constants. Each
//! (BS, target) pair induces a link described by five observables: angle of
//! arrival, round-trip delay, Doppler shift, and the real/imaginary parts of
//! the complex link coefficient. The nonlinear map from the stacked target
//! state to the stacked observable vector, together with its analytic
//! Jacobian, lives here.
//!
//! Angle convention: bearings are measured from the +y axis toward +x (the
//! two-argument arctangent of (dx, dy)), stored unwrapped in radians. Arrays
//! are half-wavelength ULAs unless the scenario file overrides the spacing.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Deserialize;
use std::path::Path;

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

// ---------------------------------------------------------------------------
// Configuration types
// ---------------------------------------------------------------------------

/// OFDM radio constants shared by all BSs.
#[derive(Debug, Clone)]
pub struct RadioConfig {
    /// Carrier frequency f_c in Hz.
    pub carrier_frequency: f64,
    /// Subcarrier spacing in Hz.
    pub subcarrier_spacing: f64,
    /// OFDM symbol interval T0 in seconds.
    pub symbol_interval: f64,
    /// Total number of subcarriers M.
    pub num_subcarriers: usize,
    /// OFDM symbols per sensing block I.
    pub num_symbols_per_block: usize,
    /// Receiver noise power in watts.
    pub noise_power: f64,
    /// Sensing block interval in seconds.
    pub block_interval: f64,
}

impl RadioConfig {
    /// Wavelength, derived as c / f_c.
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }
}

/// One base station: position, array geometry, power, and subcarrier set.
#[derive(Debug, Clone)]
pub struct BsConfig {
    pub position: [f64; 2],
    /// Receive array incline in radians.
    pub rx_incline: f64,
    /// Transmit array incline in radians.
    pub tx_incline: f64,
    pub num_tx: usize,
    pub num_rx: usize,
    /// Antenna element spacing in meters.
    pub antenna_spacing: f64,
    /// Transmit power budget in watts.
    pub tx_power: f64,
    /// Linear antenna gain.
    pub antenna_gain: f64,
    /// Subcarrier indices allocated to this BS, ascending.
    pub subcarriers: Vec<usize>,
}

impl BsConfig {
    fn phase_step(&self, wavelength: f64, angle: f64) -> f64 {
        2.0 * std::f64::consts::PI / wavelength * self.antenna_spacing * angle.sin()
    }

    /// Receive steering vector a_r(theta), length `num_rx`.
    pub fn rx_steering(&self, theta: f64, wavelength: f64) -> DVector<Complex64> {
        let step = self.phase_step(wavelength, theta);
        DVector::from_fn(self.num_rx, |n, _| Complex64::from_polar(1.0, step * n as f64))
    }

    /// Transmit steering vector a_t(phi), length `num_tx`.
    pub fn tx_steering(&self, phi: f64, wavelength: f64) -> DVector<Complex64> {
        let step = self.phase_step(wavelength, phi);
        DVector::from_fn(self.num_tx, |n, _| Complex64::from_polar(1.0, step * n as f64))
    }

    /// d a_r / d theta.
    pub fn rx_steering_deriv(&self, theta: f64, wavelength: f64) -> DVector<Complex64> {
        let a = self.rx_steering(theta, wavelength);
        let scale = 2.0 * std::f64::consts::PI / wavelength * self.antenna_spacing * theta.cos();
        DVector::from_fn(self.num_rx, |n, _| {
            Complex64::new(0.0, scale * n as f64) * a[n]
        })
    }

    /// d a_t / d phi.
    pub fn tx_steering_deriv(&self, phi: f64, wavelength: f64) -> DVector<Complex64> {
        let a = self.tx_steering(phi, wavelength);
        let scale = 2.0 * std::f64::consts::PI / wavelength * self.antenna_spacing * phi.cos();
        DVector::from_fn(self.num_tx, |n, _| {
            Complex64::new(0.0, scale * n as f64) * a[n]
        })
    }

    /// Amplitude factor sqrt(P G^2 lambda^2 / (4 pi)^3) of the link coefficient.
    pub fn link_amplitude(&self, wavelength: f64) -> f64 {
        let four_pi = 4.0 * std::f64::consts::PI;
        (self.tx_power * self.antenna_gain.powi(2) * wavelength.powi(2) / four_pi.powi(3)).sqrt()
    }
}

/// One target: initial kinematics and complex equivalent RCS amplitude.
#[derive(Debug, Clone)]
pub struct TargetConfig {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    /// Initial equivalent RCS, identical toward every BS at block 0.
    pub rcs: Complex64,
}

/// Simulation-level knobs from the scenario file.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub num_blocks: usize,
    /// Process-noise power mu of the constant-velocity model.
    pub process_noise: f64,
    /// Per-block variance of the equivalent-RCS random walk.
    pub ercs_process_noise: f64,
    /// Weights over the 4Q kinematic state entries used by the beam optimizer.
    pub weights: Vec<f64>,
    /// Whether ground-truth trajectories are propagated with process noise.
    pub ground_truth_noise: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizationSpace {
    /// Optimize over the steering + derivative subspace per BS (2Q x 2Q).
    Reduced,
    /// Optimize over the full N_T x N_T Hermitian cone.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerMode {
    /// One total budget per BS: sum over subcarriers of tr(R) <= P_k.
    Budget,
    /// Equal share per subcarrier: tr(R) <= P_k / |M_k| for each subcarrier.
    PerSubcarrier,
}

#[derive(Debug, Clone)]
pub struct BeamformConfig {
    pub space: OptimizationSpace,
    pub power_mode: PowerMode,
    /// Relative duality-gap termination threshold of the SDP solver.
    pub gap_tol: f64,
}

impl Default for BeamformConfig {
    fn default() -> Self {
        BeamformConfig {
            space: OptimizationSpace::Reduced,
            power_mode: PowerMode::Budget,
            gap_tol: 1e-6,
        }
    }
}

/// The full static scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub radio: RadioConfig,
    pub bss: Vec<BsConfig>,
    pub targets: Vec<TargetConfig>,
    pub sim: SimConfig,
    pub beamform: BeamformConfig,
}

// ---------------------------------------------------------------------------
// Scenario file parsing
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    radio: RawRadio,
    simulation: RawSim,
    #[serde(rename = "bs")]
    bss: Vec<RawBs>,
    #[serde(rename = "target")]
    targets: Vec<RawTarget>,
    #[serde(default)]
    beamform: RawBeamform,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRadio {
    carrier_frequency: f64,
    subcarrier_spacing: f64,
    symbol_interval: f64,
    num_subcarriers: usize,
    num_symbols_per_block: usize,
    noise_power: f64,
    block_interval: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    num_blocks: usize,
    process_noise: f64,
    ercs_process_noise: f64,
    weights: Vec<f64>,
    #[serde(default)]
    ground_truth_noise: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBs {
    position: [f64; 2],
    #[serde(default)]
    rx_incline: f64,
    #[serde(default)]
    tx_incline: f64,
    num_tx: usize,
    num_rx: usize,
    /// Defaults to half a wavelength when omitted.
    antenna_spacing: Option<f64>,
    tx_power: f64,
    #[serde(default = "one")]
    antenna_gain: f64,
    /// Defaults to the interleaved allocation m = j*K + k when omitted.
    subcarriers: Option<Vec<usize>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    position: [f64; 2],
    velocity: [f64; 2],
    /// Complex equivalent RCS as [re, im].
    rcs: [f64; 2],
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawBeamform {
    space: Option<OptimizationSpace>,
    power_mode: Option<PowerMode>,
    gap_tol: Option<f64>,
}

impl Scenario {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Scenario> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Scenario::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Scenario> {
        let raw: RawScenario =
            toml::from_str(text).map_err(|e| Error::config("<parse>", e.to_string()))?;
        let mut scenario = Scenario {
            radio: RadioConfig {
                carrier_frequency: raw.radio.carrier_frequency,
                subcarrier_spacing: raw.radio.subcarrier_spacing,
                symbol_interval: raw.radio.symbol_interval,
                num_subcarriers: raw.radio.num_subcarriers,
                num_symbols_per_block: raw.radio.num_symbols_per_block,
                noise_power: raw.radio.noise_power,
                block_interval: raw.radio.block_interval,
            },
            bss: Vec::new(),
            targets: raw
                .targets
                .iter()
                .map(|t| TargetConfig {
                    position: t.position,
                    velocity: t.velocity,
                    rcs: Complex64::new(t.rcs[0], t.rcs[1]),
                })
                .collect(),
            sim: SimConfig {
                num_blocks: raw.simulation.num_blocks,
                process_noise: raw.simulation.process_noise,
                ercs_process_noise: raw.simulation.ercs_process_noise,
                weights: raw.simulation.weights.clone(),
                ground_truth_noise: raw.simulation.ground_truth_noise,
            },
            beamform: BeamformConfig {
                space: raw.beamform.space.unwrap_or(OptimizationSpace::Reduced),
                power_mode: raw.beamform.power_mode.unwrap_or(PowerMode::Budget),
                gap_tol: raw.beamform.gap_tol.unwrap_or(1e-6),
            },
        };
        let half_wavelength = scenario.radio.wavelength() / 2.0;
        let num_bs = raw.bss.len();
        for (k, b) in raw.bss.iter().enumerate() {
            let subcarriers = match &b.subcarriers {
                Some(s) => s.clone(),
                None => interleaved_allocation(scenario.radio.num_subcarriers, num_bs, k),
            };
            scenario.bss.push(BsConfig {
                position: b.position,
                rx_incline: b.rx_incline,
                tx_incline: b.tx_incline,
                num_tx: b.num_tx,
                num_rx: b.num_rx,
                antenna_spacing: b.antenna_spacing.unwrap_or(half_wavelength),
                tx_power: b.tx_power,
                antenna_gain: b.antenna_gain,
                subcarriers,
            });
        }
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.radio;
        for (v, path) in [
            (r.carrier_frequency, "radio.carrier_frequency"),
            (r.subcarrier_spacing, "radio.subcarrier_spacing"),
            (r.symbol_interval, "radio.symbol_interval"),
            (r.noise_power, "radio.noise_power"),
            (r.block_interval, "radio.block_interval"),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(path, "must be positive"));
            }
        }
        if r.num_subcarriers == 0 || r.num_symbols_per_block == 0 {
            return Err(Error::config("radio", "subcarrier/symbol counts must be positive"));
        }
        let rel = (self.radio.wavelength() * r.carrier_frequency - SPEED_OF_LIGHT).abs()
            / SPEED_OF_LIGHT;
        debug_assert!(rel < 1e-9);
        if self.bss.is_empty() {
            return Err(Error::config("bs", "at least one BS required"));
        }
        if self.targets.is_empty() {
            return Err(Error::config("target", "at least one target required"));
        }
        let mut seen = vec![false; r.num_subcarriers];
        for (k, b) in self.bss.iter().enumerate() {
            if b.num_tx == 0 || b.num_rx == 0 {
                return Err(Error::config(format!("bs[{k}]"), "antenna counts must be >= 1"));
            }
            if !(b.tx_power > 0.0) {
                return Err(Error::config(format!("bs[{k}].tx_power"), "must be positive"));
            }
            if !(b.antenna_spacing > 0.0) {
                return Err(Error::config(
                    format!("bs[{k}].antenna_spacing"),
                    "must be positive",
                ));
            }
            if b.subcarriers.is_empty() {
                return Err(Error::config(format!("bs[{k}].subcarriers"), "must be nonempty"));
            }
            for &m in &b.subcarriers {
                if m >= r.num_subcarriers {
                    return Err(Error::config(
                        format!("bs[{k}].subcarriers"),
                        format!("index {m} out of range 0..{}", r.num_subcarriers),
                    ));
                }
                if seen[m] {
                    return Err(Error::config(
                        format!("bs[{k}].subcarriers"),
                        format!("subcarrier {m} allocated twice"),
                    ));
                }
                seen[m] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::config(
                "bs",
                "subcarrier sets must cover all subcarriers",
            ));
        }
        if self.sim.num_blocks == 0 {
            return Err(Error::config("simulation.num_blocks", "must be >= 1"));
        }
        if self.sim.process_noise < 0.0 || self.sim.ercs_process_noise < 0.0 {
            return Err(Error::config("simulation", "process noise must be >= 0"));
        }
        if self.sim.weights.len() != 4 * self.num_targets() {
            return Err(Error::config(
                "simulation.weights",
                format!("expected {} entries", 4 * self.num_targets()),
            ));
        }
        if self.sim.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::config("simulation.weights", "must be nonnegative"));
        }
        if !(self.beamform.gap_tol > 0.0) {
            return Err(Error::config("beamform.gap_tol", "must be positive"));
        }
        Ok(())
    }

    pub fn num_bs(&self) -> usize {
        self.bss.len()
    }

    pub fn num_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout {
            num_targets: self.num_targets(),
            num_bs: self.num_bs(),
        }
    }

    pub fn meas_layout(&self) -> MeasLayout {
        MeasLayout {
            num_targets: self.num_targets(),
            num_bs: self.num_bs(),
        }
    }

    /// Stacked state at block 0, from the per-target configuration.
    pub fn initial_state(&self) -> GlobalState {
        let layout = self.layout();
        let mut data = DVector::zeros(layout.dim());
        for (q, t) in self.targets.iter().enumerate() {
            data[layout.pos_x(q)] = t.position[0];
            data[layout.pos_y(q)] = t.position[1];
            data[layout.vel_x(q)] = t.velocity[0];
            data[layout.vel_y(q)] = t.velocity[1];
            for k in 0..self.num_bs() {
                data[layout.ercs_re(k, q)] = t.rcs.re;
                data[layout.ercs_im(k, q)] = t.rcs.im;
            }
        }
        GlobalState {
            data,
            num_bs: self.num_bs(),
            num_targets: self.num_targets(),
        }
    }
}

/// Interleaved subcarrier allocation: BS k gets indices {k, k+K, k+2K, ...}.
pub fn interleaved_allocation(num_subcarriers: usize, num_bs: usize, k: usize) -> Vec<usize> {
    (0..)
        .map(|j| j * num_bs + k)
        .take_while(|&m| m < num_subcarriers)
        .collect()
}

// ---------------------------------------------------------------------------
// State and measurement layouts
// ---------------------------------------------------------------------------

/// Index arithmetic for the stacked state [x_x; x_y; v_x; v_y; ercs].
///
/// The equivalent-RCS tail is grouped per BS, real parts before imaginary:
/// for BS k the slice is [Re s_{k,0..Q-1}, Im s_{k,0..Q-1}].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub num_targets: usize,
    pub num_bs: usize,
}

impl StateLayout {
    pub fn dim(&self) -> usize {
        4 * self.num_targets + 2 * self.num_bs * self.num_targets
    }

    pub fn kinematic_dim(&self) -> usize {
        4 * self.num_targets
    }

    pub fn pos_x(&self, q: usize) -> usize {
        q
    }

    pub fn pos_y(&self, q: usize) -> usize {
        self.num_targets + q
    }

    pub fn vel_x(&self, q: usize) -> usize {
        2 * self.num_targets + q
    }

    pub fn vel_y(&self, q: usize) -> usize {
        3 * self.num_targets + q
    }

    pub fn ercs_re(&self, k: usize, q: usize) -> usize {
        4 * self.num_targets + 2 * self.num_targets * k + q
    }

    pub fn ercs_im(&self, k: usize, q: usize) -> usize {
        4 * self.num_targets + 2 * self.num_targets * k + self.num_targets + q
    }
}

/// The five per-link observables, in measurement-vector block order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasKind {
    Aoa,
    Delay,
    Doppler,
    XiRe,
    XiIm,
}

impl MeasKind {
    pub const ALL: [MeasKind; 5] = [
        MeasKind::Aoa,
        MeasKind::Delay,
        MeasKind::Doppler,
        MeasKind::XiRe,
        MeasKind::XiIm,
    ];

    fn offset(self) -> usize {
        match self {
            MeasKind::Aoa => 0,
            MeasKind::Delay => 1,
            MeasKind::Doppler => 2,
            MeasKind::XiRe => 3,
            MeasKind::XiIm => 4,
        }
    }
}

/// Index arithmetic for the stacked observable vector: per-BS blocks of
/// [aoa(Q); delay(Q); doppler(Q); Re xi(Q); Im xi(Q)], BSs in index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasLayout {
    pub num_targets: usize,
    pub num_bs: usize,
}

impl MeasLayout {
    pub fn dim(&self) -> usize {
        5 * self.num_bs * self.num_targets
    }

    pub fn per_bs_dim(&self) -> usize {
        5 * self.num_targets
    }

    pub fn index(&self, k: usize, kind: MeasKind, q: usize) -> usize {
        k * self.per_bs_dim() + kind.offset() * self.num_targets + q
    }

    pub fn unindex(&self, flat: usize) -> (usize, MeasKind, usize) {
        let per = self.per_bs_dim();
        let k = flat / per;
        let rem = flat % per;
        let kind = MeasKind::ALL[rem / self.num_targets];
        let q = rem % self.num_targets;
        (k, kind, q)
    }
}

// ---------------------------------------------------------------------------
// State vector
// ---------------------------------------------------------------------------

/// The stacked state of all targets: positions, velocities, and per-(BS,
/// target) complex equivalent RCS.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    data: DVector<f64>,
    num_bs: usize,
    num_targets: usize,
}

impl GlobalState {
    pub fn from_vector(data: DVector<f64>, num_bs: usize, num_targets: usize) -> Result<Self> {
        let expected = 4 * num_targets + 2 * num_bs * num_targets;
        if data.len() != expected {
            return Err(Error::Dimension {
                what: "GlobalState",
                expected,
                got: data.len(),
            });
        }
        Ok(GlobalState {
            data,
            num_bs,
            num_targets,
        })
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout {
            num_targets: self.num_targets,
            num_bs: self.num_bs,
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.data
    }

    pub fn position(&self, q: usize) -> [f64; 2] {
        let l = self.layout();
        [self.data[l.pos_x(q)], self.data[l.pos_y(q)]]
    }

    pub fn velocity(&self, q: usize) -> [f64; 2] {
        let l = self.layout();
        [self.data[l.vel_x(q)], self.data[l.vel_y(q)]]
    }

    pub fn ercs(&self, k: usize, q: usize) -> Complex64 {
        let l = self.layout();
        Complex64::new(self.data[l.ercs_re(k, q)], self.data[l.ercs_im(k, q)])
    }
}

// ---------------------------------------------------------------------------
// Link observables
// ---------------------------------------------------------------------------

/// Derived observables of one (BS, target) link.
#[derive(Debug, Clone, Copy)]
pub struct LinkParams {
    /// Angle of arrival in radians.
    pub aoa: f64,
    /// Angle of departure in radians; aod = aoa - rx_incline + tx_incline.
    pub aod: f64,
    /// Round-trip delay in seconds; delay = 2 range / c.
    pub delay: f64,
    /// Doppler shift in Hz.
    pub doppler: f64,
    /// BS-target range in meters.
    pub range: f64,
    /// Complex link coefficient (attenuation times equivalent RCS).
    pub coeff: Complex64,
}

/// Geometry of one link: AOA, AOD, delay, Doppler and range, without the
/// link coefficient.
pub fn link_geometry(
    bs: &BsConfig,
    target_pos: [f64; 2],
    target_vel: [f64; 2],
    radio: &RadioConfig,
) -> Result<LinkParams> {
    let dx = target_pos[0] - bs.position[0];
    let dy = target_pos[1] - bs.position[1];
    let range = (dx * dx + dy * dy).sqrt();
    if range <= 0.0 {
        return Err(Error::DegenerateLink { bs: 0, target: 0 });
    }
    let aoa = f64::atan2(dx, dy) + bs.rx_incline;
    let aod = aoa - bs.rx_incline + bs.tx_incline;
    let delay = 2.0 * range / SPEED_OF_LIGHT;
    let radial = target_vel[0] * (-dx) + target_vel[1] * (-dy);
    let doppler = 2.0 * radial / (radio.wavelength() * range);
    Ok(LinkParams {
        aoa,
        aod,
        delay,
        doppler,
        range,
        coeff: Complex64::new(0.0, 0.0),
    })
}

/// Complex link coefficient: ercs / range^2 scaled by the radar-equation
/// amplitude of the BS.
pub fn link_coefficient(
    bs: &BsConfig,
    range: f64,
    ercs: Complex64,
    radio: &RadioConfig,
) -> Result<Complex64> {
    if range <= 0.0 {
        return Err(Error::DegenerateLink { bs: 0, target: 0 });
    }
    Ok(ercs / (range * range) * bs.link_amplitude(radio.wavelength()))
}

/// All K*Q links implied by a state, indexed [bs][target].
pub fn links_for_state(state: &GlobalState, scenario: &Scenario) -> Result<Vec<Vec<LinkParams>>> {
    let mut out = Vec::with_capacity(scenario.num_bs());
    for (k, bs) in scenario.bss.iter().enumerate() {
        let mut row = Vec::with_capacity(scenario.num_targets());
        for q in 0..scenario.num_targets() {
            let mut link = link_geometry(bs, state.position(q), state.velocity(q), &scenario.radio)
                .map_err(|_| Error::DegenerateLink { bs: k, target: q })?;
            link.coeff = link_coefficient(bs, link.range, state.ercs(k, q), &scenario.radio)
                .map_err(|_| Error::DegenerateLink { bs: k, target: q })?;
            row.push(link);
        }
        out.push(row);
    }
    Ok(out)
}

/// The nonlinear measurement map h: state -> stacked observable vector.
pub fn measurement_map(state: &GlobalState, scenario: &Scenario) -> Result<DVector<f64>> {
    let links = links_for_state(state, scenario)?;
    let layout = scenario.meas_layout();
    let mut u = DVector::zeros(layout.dim());
    for k in 0..scenario.num_bs() {
        for q in 0..scenario.num_targets() {
            let link = &links[k][q];
            u[layout.index(k, MeasKind::Aoa, q)] = link.aoa;
            u[layout.index(k, MeasKind::Delay, q)] = link.delay;
            u[layout.index(k, MeasKind::Doppler, q)] = link.doppler;
            u[layout.index(k, MeasKind::XiRe, q)] = link.coeff.re;
            u[layout.index(k, MeasKind::XiIm, q)] = link.coeff.im;
        }
    }
    Ok(u)
}

/// Analytic Jacobian of [`measurement_map`] with respect to the state.
pub fn measurement_jacobian(state: &GlobalState, scenario: &Scenario) -> Result<DMatrix<f64>> {
    let sl = state.layout();
    let ml = scenario.meas_layout();
    let lambda = scenario.radio.wavelength();
    let mut jac = DMatrix::zeros(ml.dim(), sl.dim());
    for (k, bs) in scenario.bss.iter().enumerate() {
        let amp = bs.link_amplitude(lambda);
        for q in 0..scenario.num_targets() {
            let [px, py] = bs.position;
            let [x, y] = state.position(q);
            let [vx, vy] = state.velocity(q);
            let dx = x - px;
            let dy = y - py;
            let r2 = dx * dx + dy * dy;
            let range = r2.sqrt();
            if range <= 0.0 {
                return Err(Error::DegenerateLink { bs: k, target: q });
            }
            let ercs = state.ercs(k, q);

            // aoa = atan2(dx, dy) + incline
            let row = ml.index(k, MeasKind::Aoa, q);
            jac[(row, sl.pos_x(q))] = dy / r2;
            jac[(row, sl.pos_y(q))] = -dx / r2;

            // delay = 2 range / c
            let row = ml.index(k, MeasKind::Delay, q);
            jac[(row, sl.pos_x(q))] = 2.0 / SPEED_OF_LIGHT * dx / range;
            jac[(row, sl.pos_y(q))] = 2.0 / SPEED_OF_LIGHT * dy / range;

            // doppler = 2 (v . (p - x)) / (lambda range)
            let row = ml.index(k, MeasKind::Doppler, q);
            let radial = -(vx * dx + vy * dy);
            jac[(row, sl.pos_x(q))] = 2.0 / lambda * (-vx / range - radial * dx / (r2 * range));
            jac[(row, sl.pos_y(q))] = 2.0 / lambda * (-vy / range - radial * dy / (r2 * range));
            jac[(row, sl.vel_x(q))] = -2.0 * dx / (lambda * range);
            jac[(row, sl.vel_y(q))] = -2.0 * dy / (lambda * range);

            // xi = ercs * amp / range^2; the position dependence is the
            // inverse-square attenuation.
            let attn = amp / r2;
            let datt = -2.0 * amp / (r2 * r2);
            let row_re = ml.index(k, MeasKind::XiRe, q);
            let row_im = ml.index(k, MeasKind::XiIm, q);
            jac[(row_re, sl.pos_x(q))] = ercs.re * datt * dx;
            jac[(row_re, sl.pos_y(q))] = ercs.re * datt * dy;
            jac[(row_im, sl.pos_x(q))] = ercs.im * datt * dx;
            jac[(row_im, sl.pos_y(q))] = ercs.im * datt * dy;
            jac[(row_re, sl.ercs_re(k, q))] = attn;
            jac[(row_im, sl.ercs_im(k, q))] = attn;
        }
    }
    Ok(jac)
}
