//! System configuration, random network draws and the per-trial covariance
//! model.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tolerances;
use crate::waveforms::{
    effective_signature, make_code, PathComponent, Pulse, PulseSpec, SignatureSet, SpreadingCode,
};

/// Relative diagonal loading applied to the noise covariance.
pub const NOISE_REGULARIZATION: f64 = 1e-12;

/// Every physical and algorithmic constant of a run.
///
/// Defaults reproduce the reference setup: `N = 7`, `B = 120`, two samples
/// per chip, `N0 = 1e-9`, a 25 dB power cap, users between 10 m and 500 m and
/// a three-path profile weighted `0.5 / 0.3 / 0.2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Processing gain `N` (chips per bit).
    pub processing_gain: usize,
    /// Packet length `B` in bits.
    pub packet_length: usize,
    /// Samples per chip at the front end.
    pub oversampling: usize,
    pub rolloff: f64,
    pub chip_interval: f64,
    /// One-sided noise level `N0`; the sampled noise has variance `N0 / 2`.
    pub noise_psd: f64,
    /// Per-user power cap, linear units (`10^2.5` is 25 dB re. unit power).
    pub max_power: f64,
    pub dist_min: f64,
    pub dist_max: f64,
    pub path_weights: [f64; 3],
    /// `R L / B` factor multiplying every reported utility.
    pub utility_scale: f64,
    pub fine_grid_per_chip: usize,
    pub solver: Tolerances,
    /// Sweep stops once every relative power change is below this.
    pub power_rel_tol: f64,
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            processing_gain: 7,
            packet_length: 120,
            oversampling: 2,
            rolloff: 0.22,
            chip_interval: 1.0,
            noise_psd: 1e-9,
            max_power: 10f64.powf(2.5),
            dist_min: 10.0,
            dist_max: 500.0,
            path_weights: [0.5, 0.3, 0.2],
            utility_scale: 1.0,
            fine_grid_per_chip: 64,
            solver: Tolerances::default(),
            power_rel_tol: 1e-6,
            max_sweeps: 500,
            seed: 1,
        }
    }
}

impl SystemConfig {
    pub fn bit_interval(&self) -> f64 {
        self.processing_gain as f64 * self.chip_interval
    }

    /// Length `2 Mos N` of every observation vector.
    pub fn observation_dim(&self) -> usize {
        2 * self.oversampling * self.processing_gain
    }

    pub fn pulse_spec(&self) -> PulseSpec {
        PulseSpec {
            rolloff: self.rolloff,
            chip_interval: self.chip_interval,
            fine_grid_per_chip: self.fine_grid_per_chip,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.processing_gain < 1 {
            return bad("processing_gain must be >= 1");
        }
        if self.packet_length < 2 {
            return bad("packet_length must be >= 2");
        }
        if self.oversampling < 1 {
            return bad("oversampling must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return bad("rolloff must lie in [0, 1]");
        }
        if !(self.chip_interval > 0.0) || !(self.noise_psd > 0.0) || !(self.max_power > 0.0) {
            return bad("chip_interval, noise_psd and max_power must be positive");
        }
        if !(self.dist_min > 0.0 && self.dist_min <= self.dist_max) {
            return bad("need 0 < dist_min <= dist_max");
        }
        let w = self.path_weights;
        if w.iter().any(|&x| !(x > 0.0)) || w[0] < w[1] || w[1] < w[2] {
            return bad("path_weights must be positive and non-increasing");
        }
        if !(self.utility_scale > 0.0) {
            return bad("utility_scale must be positive");
        }
        if self.fine_grid_per_chip < 2 {
            return bad("fine_grid_per_chip must be >= 2");
        }
        if !(self.power_rel_tol > 0.0) || self.max_sweeps == 0 {
            return bad("power_rel_tol and max_sweeps must be positive");
        }
        self.solver.validate()
    }

    /// Sets a field from its textual `key = value` form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidConfig(format!("cannot parse {key} = {v:?}")))
        }
        let v = value.trim();
        match key.trim() {
            "processing_gain" | "N" => self.processing_gain = num(key, v)?,
            "packet_length" | "B" => self.packet_length = num(key, v)?,
            "oversampling" | "Mos" => self.oversampling = num(key, v)?,
            "rolloff" => self.rolloff = num(key, v)?,
            "chip_interval" | "Tc" => self.chip_interval = num(key, v)?,
            "noise_psd" | "N0" => self.noise_psd = num(key, v)?,
            "max_power" | "Pmax" => self.max_power = num(key, v)?,
            "max_power_db" => self.max_power = 10f64.powf(num::<f64>(key, v)? / 10.0),
            "dist_min" => self.dist_min = num(key, v)?,
            "dist_max" => self.dist_max = num(key, v)?,
            "path_weights" => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_>>()?;
                self.path_weights = parts.try_into().map_err(|_| {
                    Error::InvalidConfig("path_weights needs exactly three values".into())
                })?;
            }
            "utility_scale" => self.utility_scale = num(key, v)?,
            "fine_grid_per_chip" => self.fine_grid_per_chip = num(key, v)?,
            "root_abs" => self.solver.root_abs = num(key, v)?,
            "residual_abs" => self.solver.residual_abs = num(key, v)?,
            "max_iter" => self.solver.max_iter = num(key, v)?,
            "power_rel_tol" => self.power_rel_tol = num(key, v)?,
            "max_sweeps" => self.max_sweeps = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            other => return Err(Error::InvalidConfig(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// All fields as `key = value` lines, in a fixed order.
    pub fn to_key_values(&self) -> Vec<(&'static str, String)> {
        let w = self.path_weights;
        vec![
            ("processing_gain", self.processing_gain.to_string()),
            ("packet_length", self.packet_length.to_string()),
            ("oversampling", self.oversampling.to_string()),
            ("rolloff", format!("{:?}", self.rolloff)),
            ("chip_interval", format!("{:?}", self.chip_interval)),
            ("noise_psd", format!("{:?}", self.noise_psd)),
            ("max_power", format!("{:?}", self.max_power)),
            ("dist_min", format!("{:?}", self.dist_min)),
            ("dist_max", format!("{:?}", self.dist_max)),
            ("path_weights", format!("{:?},{:?},{:?}", w[0], w[1], w[2])),
            ("utility_scale", format!("{:?}", self.utility_scale)),
            ("fine_grid_per_chip", self.fine_grid_per_chip.to_string()),
            ("root_abs", format!("{:?}", self.solver.root_abs)),
            ("residual_abs", format!("{:?}", self.solver.residual_abs)),
            ("max_iter", self.solver.max_iter.to_string()),
            ("power_rel_tol", format!("{:?}", self.power_rel_tol)),
            ("max_sweeps", self.max_sweeps.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

/// Geometry, channel and code of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDraw {
    pub distance: f64,
    pub paths: [PathComponent; 3],
    pub code: SpreadingCode,
}

/// One random network realization.
#[derive(Debug, Clone, PartialEq)]
pub struct UserScenario {
    pub users: Vec<UserDraw>,
}

impl UserScenario {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Rayleigh variate with the given mean (scale `mean * sqrt(2 / pi)`).
pub fn rayleigh<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    let sigma = mean * (2.0 / std::f64::consts::PI).sqrt();
    let u: f64 = rng.random();
    sigma * (-2.0 * (-u).ln_1p()).sqrt()
}

/// Independent random stream for `(seed, users, trial, attempt)`.
pub fn trial_rng(seed: u64, users: usize, trial: u64, attempt: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((users as u64) << 48) ^ ((attempt as u64) << 40) ^ trial);
    rng
}

/// Draws a scenario for `users` users; a pure function of
/// `(config.seed, users, trial)`.
pub fn draw_scenario(config: &SystemConfig, users: usize, trial: u64) -> UserScenario {
    draw_scenario_attempt(config, users, trial, 0)
}

/// As [`draw_scenario`], on the redraw substream `attempt`.
pub fn draw_scenario_attempt(
    config: &SystemConfig,
    users: usize,
    trial: u64,
    attempt: u32,
) -> UserScenario {
    assert!(users >= 1, "need at least one user");
    let mut rng = trial_rng(config.seed, users, trial, attempt);
    let tb = config.bit_interval();
    let code_seed: u64 = rng.random();
    let users = (0..users)
        .map(|k| {
            let distance = rng.random_range(config.dist_min..=config.dist_max);
            let paths = config.path_weights.map(|w| {
                let delay = rng.random_range(0.0..tb);
                let gain = rayleigh(&mut rng, w / (distance * distance));
                PathComponent { gain, delay }
            });
            UserDraw {
                distance,
                paths,
                code: make_code(code_seed, k, config.processing_gain),
            }
        })
        .collect();
    UserScenario { users }
}

/// Sampled front-end noise: Toeplitz covariance `(N0/2) rho((m - n) Tc / Mos)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// First column of the unregularized Toeplitz covariance.
    generator: Vec<f64>,
    /// Covariance used by every formula and by the frame simulator,
    /// diagonally loaded by `NOISE_REGULARIZATION * N0 / 2`.
    covariance: DMatrix<f64>,
    loading: f64,
}

impl NoiseModel {
    /// Uncorrelated noise with the given per-sample variance.
    pub fn white(dim: usize, variance: f64) -> Self {
        let mut generator = vec![0.0; dim];
        generator[0] = variance;
        Self {
            generator,
            covariance: DMatrix::identity(dim, dim) * variance,
            loading: 0.0,
        }
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn generator(&self) -> &[f64] {
        &self.generator
    }

    /// Diagonal loading added to the Toeplitz matrix.
    pub fn loading(&self) -> f64 {
        self.loading
    }

    pub fn raw_covariance(&self) -> DMatrix<f64> {
        let n = self.generator.len();
        DMatrix::from_fn(n, n, |i, j| self.generator[i.abs_diff(j)])
    }

    pub fn dim(&self) -> usize {
        self.generator.len()
    }
}

pub fn noise_covariance(config: &SystemConfig, pulse: &Pulse) -> NoiseModel {
    let dim = config.observation_dim();
    let dt = config.chip_interval / config.oversampling as f64;
    let half = config.noise_psd / 2.0;
    let generator: Vec<f64> = (0..dim)
        .map(|m| half * pulse.autocorrelation(m as f64 * dt))
        .collect();
    let loading = NOISE_REGULARIZATION * half;
    let covariance =
        DMatrix::from_fn(dim, dim, |i, j| generator[i.abs_diff(j)]) + DMatrix::identity(dim, dim) * loading;
    NoiseModel {
        generator,
        covariance,
        loading,
    }
}

/// `sum_i h_{k,i} h_{k,i}^T` for one user.
pub fn user_outer_sum(sigs: &SignatureSet, k: usize) -> DMatrix<f64> {
    let dim = sigs.dim();
    let mut m = DMatrix::zeros(dim, dim);
    for h in sigs.user(k).windows() {
        m.ger(1.0, h, h, 1.0);
    }
    m
}

/// Covariance of the observation vector for the given transmit powers.
pub fn data_covariance(sigs: &SignatureSet, powers: &[f64], noise: &NoiseModel) -> DMatrix<f64> {
    assert_eq!(powers.len(), sigs.len(), "one power per user");
    let mut m = noise.covariance.clone();
    for (user, &p) in sigs.users().iter().zip(powers) {
        if p != 0.0 {
            for h in user.windows() {
                m.ger(p, h, h, 1.0);
            }
        }
    }
    m
}

/// Everything derived from a configuration that does not depend on the
/// random draw: the tabulated pulse and the noise covariance.
#[derive(Debug, Clone)]
pub struct SystemModel {
    config: SystemConfig,
    pulse: Pulse,
    noise: NoiseModel,
}

impl SystemModel {
    pub fn new(config: SystemConfig) -> Result<Self> {
        config.validate()?;
        let pulse = Pulse::new(config.pulse_spec())?;
        let noise = noise_covariance(&config, &pulse);
        Ok(Self {
            config,
            pulse,
            noise,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn pulse(&self) -> &Pulse {
        &self.pulse
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// Samples every user's effective signature and fixes the SIC order.
    pub fn build_signatures(&self, scenario: &UserScenario) -> Result<SignatureSet> {
        let users = scenario
            .users
            .iter()
            .enumerate()
            .map(|(k, u)| {
                let sig = effective_signature(&u.code, &u.paths, &self.pulse, self.config.oversampling)?;
                if sig.main().norm() == 0.0 {
                    return Err(Error::ZeroSignature { user: k });
                }
                Ok(sig)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SignatureSet::new(users))
    }
}

/// Observation vector of a single frame, given each user's four symbols
/// `b(p-2), b(p-1), b(p), b(p+1)`.
pub fn observation(sigs: &SignatureSet, powers: &[f64], symbols: &[[f64; 4]], noise: &DVector<f64>) -> DVector<f64> {
    let mut y = noise.clone();
    for ((user, &p), b) in sigs.users().iter().zip(powers).zip(symbols) {
        let amp = p.sqrt();
        for (h, &s) in user.windows().iter().zip(b) {
            y.axpy(amp * s, h, 1.0);
        }
    }
    y
}
