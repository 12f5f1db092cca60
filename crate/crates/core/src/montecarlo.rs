//! Trial orchestration: paired sweeps over random networks, and a frame
//! simulator for checking the analytic SINR and covariance formulas.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::games::{run_game, EquilibriumResult, GameKind};
use crate::numerics::spd_factor;
use crate::scenario::{draw_scenario_attempt, NoiseModel, SystemConfig, SystemModel};
use crate::waveforms::SignatureSet;

/// Scenario redraws allowed per trial before giving up.
pub const MAX_REDRAWS: u32 = 100;

/// Simulated observation windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    /// One observation per column.
    pub y: DMatrix<f64>,
    /// `symbols[f * users + k]` are user `k`'s symbols `p-2 ..= p+1` in frame `f`.
    pub symbols: Vec<[f64; 4]>,
    pub users: usize,
}

impl Frames {
    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.y.ncols() == 0
    }

    pub fn symbols(&self, frame: usize, user: usize) -> &[f64; 4] {
        &self.symbols[frame * self.users + user]
    }
}

/// Draws `frames` independent observation windows with i.i.d. antipodal
/// symbols and Gaussian noise of the model covariance.
pub fn simulate_frames<R: Rng + ?Sized>(
    sigs: &SignatureSet,
    powers: &[f64],
    noise: &NoiseModel,
    frames: usize,
    rng: &mut R,
) -> Result<Frames> {
    assert_eq!(powers.len(), sigs.len(), "one power per user");
    let chol = spd_factor(noise.covariance())?;
    let l = chol.l();
    let dim = sigs.dim();
    let users = sigs.len();
    let amps: Vec<f64> = powers.iter().map(|p| p.sqrt()).collect();
    let mut y = DMatrix::zeros(dim, frames);
    let mut symbols = Vec::with_capacity(frames * users);
    let mut z = DVector::zeros(dim);
    for f in 0..frames {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let mut col = &l * &z;
        for (k, user) in sigs.users().iter().enumerate() {
            let b = [0; 4].map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 });
            for (h, &s) in user.windows().iter().zip(&b) {
                col.axpy(amps[k] * s, h, 1.0);
            }
            symbols.push(b);
        }
        y.set_column(f, &col);
    }
    Ok(Frames { y, symbols, users })
}

/// Empirical SINR of `d^T y` for user `k`: the known signal power over the
/// sample mean square of everything else.
pub fn empirical_sinr(
    frames: &Frames,
    d: &DVector<f64>,
    k: usize,
    sigs: &SignatureSet,
    powers: &[f64],
) -> f64 {
    empirical(frames, d, k, sigs, powers, false)
}

/// As [`empirical_sinr`], after subtracting the `p-2 ..= p` contributions of
/// users detected before `k` with their true symbols.
pub fn empirical_sinr_sic(
    frames: &Frames,
    d: &DVector<f64>,
    k: usize,
    sigs: &SignatureSet,
    powers: &[f64],
) -> f64 {
    empirical(frames, d, k, sigs, powers, true)
}

fn empirical(
    frames: &Frames,
    d: &DVector<f64>,
    k: usize,
    sigs: &SignatureSet,
    powers: &[f64],
    cancel: bool,
) -> f64 {
    let amp = powers[k].sqrt() * d.dot(sigs.user(k).main());
    // Per-user projections of each window onto d.
    let proj: Vec<[f64; 4]> = sigs
        .users()
        .iter()
        .map(|u| [0, 1, 2, 3].map(|i| d.dot(&u.windows()[i])))
        .collect();
    let earlier: Vec<usize> = if cancel {
        (0..sigs.len()).filter(|&j| sigs.detected_before(j, k)).collect()
    } else {
        Vec::new()
    };
    let stats = d.transpose() * &frames.y;
    let mut acc = 0.0;
    for f in 0..frames.len() {
        let mut z = stats[f] - amp * frames.symbols(f, k)[2];
        for &j in &earlier {
            let b = frames.symbols(f, j);
            let a = powers[j].sqrt();
            z -= a * (b[0] * proj[j][0] + b[1] * proj[j][1] + b[2] * proj[j][2]);
        }
        acc += z * z;
    }
    amp * amp / (acc / frames.len() as f64)
}

/// Sample second-moment matrix of zero-mean columns and the standard error
/// of each entry.
pub fn sample_covariance(y: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = y.ncols() as f64;
    let dim = y.nrows();
    let mean = y * y.transpose() / n;
    let sq = y.component_mul(y);
    let mean_sq = &sq * sq.transpose() / n;
    let se = DMatrix::from_fn(dim, dim, |i, j| {
        ((mean_sq[(i, j)] - mean[(i, j)].powi(2)).max(0.0) / n).sqrt()
    });
    (mean, se)
}

/// A paired Monte Carlo sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub config: SystemConfig,
    pub kinds: Vec<GameKind>,
    pub user_counts: Vec<usize>,
    pub trials: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        if self.kinds.is_empty() || self.user_counts.is_empty() {
            return Err(Error::InvalidConfig("need at least one game and one K".into()));
        }
        if self.user_counts.contains(&0) {
            return Err(Error::InvalidConfig("K values must be >= 1".into()));
        }
        Ok(())
    }
}

/// Statistics of one game at one population size.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub kind: GameKind,
    pub users: usize,
    pub mean_utility: f64,
    pub mean_power: f64,
    /// `10 log10(mean_power)`, powers relative to one unit.
    pub mean_power_db: f64,
    pub frac_at_max: f64,
    pub nonconverged: usize,
    /// Converged trials entering the means.
    pub trials_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepSummary {
    pub fn row(&self, kind: GameKind, users: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.kind == kind && r.users == users)
    }
}

/// Every requested game on one scenario.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub users: usize,
    pub trial: u64,
    /// Redraws needed to avoid a degenerate signature.
    pub redraws: u32,
    pub results: Vec<EquilibriumResult>,
}

/// Signatures of trial `trial`, redrawing on a degenerate user.
pub fn trial_signatures(model: &SystemModel, users: usize, trial: u64) -> Result<(SignatureSet, u32)> {
    for attempt in 0..=MAX_REDRAWS {
        let scenario = draw_scenario_attempt(model.config(), users, trial, attempt);
        match model.build_signatures(&scenario) {
            Ok(sigs) => return Ok((sigs, attempt)),
            Err(Error::ZeroSignature { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::RedrawLimit {
        attempts: MAX_REDRAWS as usize,
    })
}

/// Runs every game in `kinds` on the same scenario.
pub fn run_trial(model: &SystemModel, kinds: &[GameKind], users: usize, trial: u64) -> Result<TrialOutcome> {
    let (sigs, redraws) = trial_signatures(model, users, trial)?;
    let results = kinds
        .iter()
        .map(|&kind| run_game(kind, model, &sigs))
        .collect::<Result<_>>()?;
    Ok(TrialOutcome {
        users,
        trial,
        redraws,
        results,
    })
}

/// Runs the sweep on `workers` threads. The reduction walks trials in
/// `(K, trial, user)` order, so the summary does not depend on `workers`.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<SweepSummary> {
    spec.validate()?;
    let model = SystemModel::new(spec.config.clone())?;
    let jobs: Vec<(usize, u64)> = spec
        .user_counts
        .iter()
        .flat_map(|&k| (0..spec.trials as u64).map(move |t| (k, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let outcomes: Vec<TrialOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|&(k, t)| run_trial(&model, &spec.kinds, k, t))
            .collect::<Result<_>>()
    })?;
    Ok(summarize(spec, &outcomes))
}

/// Pools per-user statistics of converged runs. `outcomes` must be in
/// `(K, trial)` order.
pub fn summarize(spec: &SweepSpec, outcomes: &[TrialOutcome]) -> SweepSummary {
    let mut rows = Vec::new();
    for &users in &spec.user_counts {
        for (g, &kind) in spec.kinds.iter().enumerate() {
            let (mut u_sum, mut p_sum, mut at_max, mut pooled) = (0.0, 0.0, 0usize, 0usize);
            let (mut used, mut nonconverged) = (0, 0);
            for o in outcomes.iter().filter(|o| o.users == users) {
                let r = &o.results[g];
                if !r.converged {
                    nonconverged += 1;
                    continue;
                }
                used += 1;
                for k in 0..users {
                    u_sum += r.utilities[k];
                    p_sum += r.powers[k];
                    at_max += r.at_max[k] as usize;
                }
                pooled += users;
            }
            let n = pooled as f64;
            let mean_power = p_sum / n;
            rows.push(SweepRow {
                kind,
                users,
                mean_utility: u_sum / n,
                mean_power,
                mean_power_db: 10.0 * mean_power.log10(),
                frac_at_max: at_max as f64 / n,
                nonconverged,
                trials_used: used,
            });
        }
    }
    SweepSummary {
        seed: spec.config.seed,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::receivers::{build_filter, matched_filter, sinr_linear, sinr_sic, FilterKind};
    use crate::scenario::{data_covariance, draw_scenario};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> SystemModel {
        SystemModel::new(SystemConfig::default()).unwrap()
    }

    #[test]
    fn frames_are_deterministic() {
        let m = model();
        let sigs = m.build_signatures(&draw_scenario(m.config(), 2, 0)).unwrap();
        let powers = [1.0, 2.0];
        let a = simulate_frames(&sigs, &powers, m.noise(), 50, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = simulate_frames(&sigs, &powers, m.noise(), 50, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        assert!(a.symbols.iter().flatten().all(|&s| s == 1.0 || s == -1.0));
    }

    #[test]
    fn zero_powers_give_noise_covariance() {
        let m = model();
        let sigs = m.build_signatures(&draw_scenario(m.config(), 2, 1)).unwrap();
        let frames = simulate_frames(&sigs, &[0.0, 0.0], m.noise(), 20_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (c, se) = sample_covariance(&frames.y);
        let model_cov = m.noise().covariance();
        let mut worst: f64 = 0.0;
        for i in 0..28 {
            for j in 0..28 {
                worst = worst.max((c[(i, j)] - model_cov[(i, j)]).abs() / se[(i, j)]);
            }
        }
        assert!(worst < 5.0, "worst deviation {worst} standard errors");
    }

    #[test]
    fn data_covariance_matches_samples() {
        let m = model();
        let sigs = m.build_signatures(&draw_scenario(m.config(), 3, 2)).unwrap();
        let powers = [10.0, 50.0, 200.0];
        let frames = simulate_frames(&sigs, &powers, m.noise(), 20_000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let (c, se) = sample_covariance(&frames.y);
        let model_cov = data_covariance(&sigs, &powers, m.noise());
        for i in 0..28 {
            for j in 0..28 {
                assert!((c[(i, j)] - model_cov[(i, j)]).abs() <= 5.0 * se[(i, j)]);
            }
        }
    }

    #[test]
    fn empirical_sinr_tracks_formulas() {
        let m = model();
        let sigs = m.build_signatures(&draw_scenario(m.config(), 3, 4)).unwrap();
        let powers = [30.0, 100.0, 300.0];
        let frames = simulate_frames(&sigs, &powers, m.noise(), 20_000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for k in 0..3 {
            let d = matched_filter(k, &sigs).unwrap();
            let exact = sinr_linear(d.full(), k, &sigs, &powers, m.noise()).unwrap().sinr;
            let emp = empirical_sinr(&frames, d.full(), k, &sigs, &powers);
            assert!((emp / exact - 1.0).abs() < 0.05, "user {k}: {emp} vs {exact}");
            let d = build_filter(FilterKind::SicMmse, k, &sigs, &powers, m.noise()).unwrap();
            let exact = sinr_sic(d.full(), k, &sigs, &powers, m.noise()).unwrap().sinr;
            let emp = empirical_sinr_sic(&frames, d.full(), k, &sigs, &powers);
            assert!((emp / exact - 1.0).abs() < 0.05, "sic user {k}: {emp} vs {exact}");
        }
    }

    fn small_spec(trials: usize) -> SweepSpec {
        SweepSpec {
            config: SystemConfig::default(),
            kinds: vec![GameKind::Mf, GameKind::SicMmse],
            user_counts: vec![1, 3],
            trials,
        }
    }

    #[test]
    fn single_trial_summary_is_the_equilibrium() {
        let spec = small_spec(1);
        let s = run_sweep(&spec, 1).unwrap();
        let m = model();
        let o = run_trial(&m, &spec.kinds, 3, 0).unwrap();
        let r = &o.results[1];
        let row = s.row(GameKind::SicMmse, 3).unwrap();
        if r.converged {
            assert_eq!(row.trials_used, 1);
            let mean_u: f64 = r.utilities.iter().sum::<f64>() / 3.0;
            assert!((row.mean_utility - mean_u).abs() <= 1e-15 * mean_u);
            let frac = r.at_max.iter().filter(|&&b| b).count() as f64 / 3.0;
            assert_eq!(row.frac_at_max, frac);
        } else {
            assert_eq!(row.nonconverged, 1);
        }
    }

    #[test]
    fn sweep_is_worker_count_independent() {
        let spec = small_spec(6);
        let a = run_sweep(&spec, 1).unwrap();
        let b = run_sweep(&spec, 3).unwrap();
        assert_eq!(a, b);
        for r in &a.rows {
            assert!((0.0..=1.0).contains(&r.frac_at_max));
            assert_eq!(r.trials_used + r.nonconverged, 6);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = small_spec(0);
        assert!(run_sweep(&spec, 1).is_err());
        spec.trials = 1;
        spec.user_counts = vec![0];
        assert!(run_sweep(&spec, 1).is_err());
    }
}
