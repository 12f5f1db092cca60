//! Utility model and Nash equilibria of the five power-control games.
//!
//! Every user maximizes `u_k = scale * f(gamma_k) / p_k`, where
//! `f(g) = (1 - exp(-g/2))^B` is the efficiency function, by choosing its
//! transmit power in `(0, Pmax]` and, depending on the game, its receive
//! filter. Equilibria are reached by Gauss–Seidel best-response sweeps.
//!
//! | game                  | receiver                         | best response            |
//! |-----------------------|----------------------------------|--------------------------|
//! | `Mf`                  | matched filter                   | per-user target SINR     |
//! | `LinearConstrained`   | ISI-orthogonal linear            | common target SINR       |
//! | `LinearMmse`          | unconstrained MMSE               | 1-D utility maximization |
//! | `SicConstrained`      | ISI-orthogonal after cancellation| common target SINR       |
//! | `SicMmse`             | MMSE after cancellation          | 1-D utility maximization |

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::numerics::{bisect_root, maximize_1d, spd_factor, ScalarBracket, Tolerances};
use crate::receivers::{
    build_filter, filter_sinr, isi_nuller_basis, matched_filter_terms, FilterKind, ReceiveFilter,
};
use crate::scenario::SystemModel;
use crate::waveforms::SignatureSet;

/// Lowest power searched by the unconstrained best responses, relative to
/// the cap.
pub const MIN_POWER_FRACTION: f64 = 1e-9;

/// Starting power of every user, relative to the cap.
pub const INITIAL_POWER_FRACTION: f64 = 1e-3;

/// `f(g) = (1 - exp(-g/2))^B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyFunction {
    packet_length: usize,
}

impl EfficiencyFunction {
    pub fn new(packet_length: usize) -> Result<Self> {
        if packet_length < 2 {
            return Err(Error::InvalidConfig(format!(
                "packet length must be >= 2, got {packet_length}"
            )));
        }
        Ok(Self { packet_length })
    }

    pub fn packet_length(&self) -> usize {
        self.packet_length
    }

    fn b(&self) -> f64 {
        self.packet_length as f64
    }

    pub fn value(&self, sinr: f64) -> f64 {
        (-(-sinr / 2.0).exp_m1()).powf(self.b())
    }

    /// `ln f`, finite for every positive SINR.
    pub fn ln_value(&self, sinr: f64) -> f64 {
        self.b() * (-(-sinr / 2.0).exp_m1()).ln()
    }

    pub fn derivative(&self, sinr: f64) -> f64 {
        let b = self.b();
        let e = (-sinr / 2.0).exp();
        0.5 * b * (-(-sinr / 2.0).exp_m1()).powf(b - 1.0) * e
    }
}

/// Probability that a `B`-bit BPSK packet is received without error,
/// `(1 - Q(sqrt(2 g)))^B`.
pub fn packet_success(sinr: f64, packet_length: usize) -> f64 {
    // 1 - Q(x) = erfc(-x / sqrt 2) / 2
    let x = (2.0 * sinr).sqrt();
    (0.5 * erfc(-x / std::f64::consts::SQRT_2)).powi(packet_length as i32)
}

/// Residual of the target equation `(B/2) g (1 - r g) = exp(g/2) - 1`.
fn target_residual(b: f64, ratio: f64, g: f64) -> f64 {
    0.5 * b * g * (1.0 - ratio * g) - (g / 2.0).exp_m1()
}

const COMMON_BRACKET: (f64, f64) = (1e-6, 200.0);

/// Targets are solved to full double precision.
const TARGET_TOLERANCES: Tolerances = Tolerances {
    root_abs: 1e-14,
    residual_abs: 1e-14,
    max_iter: 200,
};

/// The SINR solving `f(g) = g f'(g)`, shared by every user when the
/// receiver removes its own intersymbol interference.
pub fn common_target_sinr(f: &EfficiencyFunction) -> Result<f64> {
    let bracket = ScalarBracket::new(COMMON_BRACKET.0, COMMON_BRACKET.1)?;
    bisect_root(|g| target_residual(f.b(), 0.0, g), bracket, TARGET_TOLERANCES)
}

/// Matched-filter target SINR of a user with `a = |h0|^4` and
/// `b = sum_{j != 0} (h0^T h_j)^2`, root of
/// `(B / 2a) g (a - b g) = exp(g/2) - 1` inside `(0, a/b)`.
pub fn mf_target_sinr(a: f64, b: f64, f: &EfficiencyFunction) -> Result<f64> {
    if !(a > 0.0) || !(b >= 0.0) {
        return Err(Error::InvalidConfig(format!("need a > 0 and b >= 0, got {a}, {b}")));
    }
    if b == 0.0 {
        return common_target_sinr(f);
    }
    let ratio = b / a;
    let hi = (1.0 / ratio).min(COMMON_BRACKET.1);
    let lo = if hi > 1e-3 { COMMON_BRACKET.0 } else { hi * 1e-3 };
    bisect_root(
        |g| target_residual(f.b(), ratio, g),
        ScalarBracket::new(lo, hi)?,
        TARGET_TOLERANCES,
    )
}

/// The five games.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GameKind {
    Mf,
    LinearConstrained,
    LinearMmse,
    SicConstrained,
    SicMmse,
}

impl GameKind {
    pub const ALL: [GameKind; 5] = [
        GameKind::Mf,
        GameKind::LinearConstrained,
        GameKind::LinearMmse,
        GameKind::SicConstrained,
        GameKind::SicMmse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GameKind::Mf => "mf",
            GameKind::LinearConstrained => "linear-constrained",
            GameKind::LinearMmse => "linear-mmse",
            GameKind::SicConstrained => "sic-constrained",
            GameKind::SicMmse => "sic-mmse",
        }
    }

    pub fn filter_kind(self) -> FilterKind {
        match self {
            GameKind::Mf => FilterKind::MatchedFilter,
            GameKind::LinearConstrained => FilterKind::ConstrainedLinear,
            GameKind::LinearMmse => FilterKind::LinearMmse,
            GameKind::SicConstrained => FilterKind::ConstrainedSic,
            GameKind::SicMmse => FilterKind::SicMmse,
        }
    }

    pub fn uses_cancellation(self) -> bool {
        self.filter_kind().uses_cancellation()
    }
}

impl fmt::Display for GameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GameKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GameKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown game {s:?}")))
    }
}

/// Converged (or last) state of one game on one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub kind: GameKind,
    pub powers: Vec<f64>,
    pub filters: Vec<ReceiveFilter>,
    pub sinrs: Vec<f64>,
    /// `utility_scale * f(sinr) / power`.
    pub utilities: Vec<f64>,
    pub at_max: Vec<bool>,
    /// Sweeps performed.
    pub iterations: usize,
    pub converged: bool,
    /// Target SINR of each user, for the games that have one.
    pub targets: Vec<Option<f64>>,
    /// `f(g) - f'(g) g'(p) p` at the returned power, unconstrained games only.
    pub stationarity: Vec<Option<f64>>,
    /// Largest relative power change of every sweep.
    pub sweep_changes: Vec<f64>,
    /// Whether the last ten sweep changes are non-increasing.
    pub tail_monotone: bool,
}

/// SINR of an MMSE-type receiver as a function of own power,
/// `g(p) = p h0^T (Q + p H H^T)^{-1} h0`, reduced through the eigenvalues of
/// the 3x3 matrix `H^T Q^{-1} H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmseSinrCurve {
    c: f64,
    lambda: [f64; 3],
    w2: [f64; 3],
}

impl MmseSinrCurve {
    /// `q` is the covariance of noise plus every other user's contribution
    /// as seen by user `k`'s receiver.
    pub fn new(q: &DMatrix<f64>, h0: &DVector<f64>, isi: [&DVector<f64>; 3]) -> Result<Self> {
        let chol = spd_factor(q)?;
        let qh0 = chol.solve(h0);
        let qh: Vec<DVector<f64>> = isi.iter().map(|h| chol.solve(*h)).collect();
        let s = DMatrix::from_fn(3, 3, |i, j| isi[i].dot(&qh[j]));
        let s = (&s + s.transpose()) * 0.5;
        let v = DVector::from_fn(3, |i, _| isi[i].dot(&qh0));
        let eig = SymmetricEigen::new(s);
        let w = eig.eigenvectors.transpose() * v;
        Ok(Self {
            c: h0.dot(&qh0),
            lambda: [0, 1, 2].map(|i| eig.eigenvalues[i].max(0.0)),
            w2: [0, 1, 2].map(|i| w[i] * w[i]),
        })
    }

    pub fn sinr(&self, p: f64) -> f64 {
        let corr: f64 = (0..3).map(|i| self.w2[i] / (1.0 + p * self.lambda[i])).sum();
        (p * (self.c - p * corr)).max(0.0)
    }

    pub fn derivative(&self, p: f64) -> f64 {
        let corr: f64 = (0..3)
            .map(|i| {
                let d = 1.0 + p * self.lambda[i];
                self.w2[i] * p * (2.0 + p * self.lambda[i]) / (d * d)
            })
            .sum();
        self.c - corr
    }
}

/// Outcome of one best-response step.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub power: f64,
    pub at_max: bool,
    pub target: Option<f64>,
    pub stationarity: Option<f64>,
}

/// Mutable game state: scenario plus the current power profile, with the
/// per-user quantities that do not change across sweeps precomputed.
pub struct GameState<'a> {
    kind: GameKind,
    model: &'a SystemModel,
    sigs: &'a SignatureSet,
    f: EfficiencyFunction,
    common_target: f64,
    powers: Vec<f64>,
    /// Sum of all four window outer products, per user.
    outer_all: Vec<DMatrix<f64>>,
    /// Outer product of the `p+1` window, per user.
    outer_tail: Vec<DMatrix<f64>>,
    bases: Vec<Option<DMatrix<f64>>>,
    mf_targets: Vec<Option<f64>>,
}

impl<'a> GameState<'a> {
    pub fn new(kind: GameKind, model: &'a SystemModel, sigs: &'a SignatureSet) -> Result<Self> {
        let cfg = model.config();
        let f = EfficiencyFunction::new(cfg.packet_length)?;
        let common_target = common_target_sinr(&f)?;
        let k_users = sigs.len();
        for k in 0..k_users {
            if sigs.norms()[k] == 0.0 {
                return Err(Error::ZeroSignature { user: k });
            }
        }
        let dim = sigs.dim();
        let outer = |hs: &[&DVector<f64>]| {
            let mut m = DMatrix::zeros(dim, dim);
            for h in hs {
                m.ger(1.0, *h, *h, 1.0);
            }
            m
        };
        let outer_all = (0..k_users)
            .map(|k| outer(&sigs.user(k).windows().iter().collect::<Vec<_>>()))
            .collect();
        let outer_tail = if kind.uses_cancellation() {
            (0..k_users).map(|k| outer(&[sigs.user(k).window(1)])).collect()
        } else {
            Vec::new()
        };
        let bases = (0..k_users)
            .map(|k| kind.filter_kind().is_constrained().then(|| isi_nuller_basis(k, sigs)))
            .collect();
        let mf_targets = if kind == GameKind::Mf {
            let powers = vec![0.0; k_users];
            (0..k_users)
                .map(|k| {
                    let t = matched_filter_terms(k, sigs, &powers, model.noise());
                    mf_target_sinr(t.a, t.b, &f).map(Some)
                })
                .collect::<Result<_>>()?
        } else {
            vec![None; k_users]
        };
        Ok(Self {
            kind,
            model,
            sigs,
            f,
            common_target,
            powers: vec![cfg.max_power * INITIAL_POWER_FRACTION; k_users],
            outer_all,
            outer_tail,
            bases,
            mf_targets,
        })
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn set_powers(&mut self, powers: &[f64]) {
        assert_eq!(powers.len(), self.powers.len());
        self.powers.copy_from_slice(powers);
    }

    /// User order of one sweep.
    pub fn update_order(&self) -> Vec<usize> {
        if self.kind.uses_cancellation() {
            self.sigs.sic_order().to_vec()
        } else {
            (0..self.sigs.len()).collect()
        }
    }

    /// Noise plus every other user's contribution to the covariance that
    /// user `k`'s receiver is optimized against.
    pub fn interference_covariance(&self, k: usize) -> DMatrix<f64> {
        let mut q = self.model.noise().covariance().clone();
        for i in 0..self.sigs.len() {
            if i == k || self.powers[i] == 0.0 {
                continue;
            }
            let p = self.powers[i];
            if self.kind.uses_cancellation() && self.sigs.detected_before(i, k) {
                q += &self.outer_tail[i] * p;
            } else {
                q += &self.outer_all[i] * p;
            }
        }
        q
    }

    /// Best power of user `k` against the current powers of the others.
    pub fn best_power(&self, k: usize) -> Result<BestResponse> {
        let pmax = self.model.config().max_power;
        let capped = |p: f64| if p >= pmax || !p.is_finite() { (pmax, true) } else { (p, false) };
        match self.kind {
            GameKind::Mf => {
                let t = matched_filter_terms(k, self.sigs, &self.powers, self.model.noise());
                let target = self.mf_targets[k].expect("mf targets precomputed");
                let margin = t.a - t.b * target;
                let (power, at_max) = if margin > 0.0 {
                    capped(target * t.c / margin)
                } else {
                    (pmax, true)
                };
                Ok(BestResponse {
                    power,
                    at_max,
                    target: Some(target),
                    stationarity: None,
                })
            }
            GameKind::LinearConstrained | GameKind::SicConstrained => {
                let gain = self.constrained_gain(k)?;
                let (power, at_max) = capped(self.common_target / gain);
                Ok(BestResponse {
                    power,
                    at_max,
                    target: Some(self.common_target),
                    stationarity: None,
                })
            }
            GameKind::LinearMmse | GameKind::SicMmse => {
                let curve = self.mmse_curve(k)?;
                let lo = (pmax * MIN_POWER_FRACTION).ln();
                let hi = pmax.ln();
                let objective = |x: f64| self.f.ln_value(curve.sinr(x.exp())) - x;
                let best = maximize_1d(objective, lo, hi, self.model.config().solver)?;
                let current = self.powers[k].clamp(pmax * MIN_POWER_FRACTION, pmax);
                let (mut power, mut at_max) = if best.argmax >= hi {
                    (pmax, true)
                } else {
                    (best.argmax.exp(), false)
                };
                if objective(current.ln()) > best.value {
                    power = current;
                    at_max = current == pmax;
                }
                let g = curve.sinr(power);
                let stationarity =
                    self.f.value(g) - self.f.derivative(g) * curve.derivative(power) * power;
                Ok(BestResponse {
                    power,
                    at_max,
                    target: None,
                    stationarity: Some(stationarity),
                })
            }
        }
    }

    /// SINR per unit own power of the optimal constrained filter.
    fn constrained_gain(&self, k: usize) -> Result<f64> {
        let basis = self.bases[k].as_ref().expect("constrained games carry bases");
        let q = self.interference_covariance(k);
        let reduced = basis.transpose() * &q * basis;
        let rhs = basis.transpose() * self.sigs.user(k).main();
        let x = spd_factor(&reduced)?.solve(&rhs);
        Ok(rhs.dot(&x))
    }

    pub fn mmse_curve(&self, k: usize) -> Result<MmseSinrCurve> {
        let q = self.interference_covariance(k);
        let u = self.sigs.user(k);
        MmseSinrCurve::new(&q, u.main(), u.isi())
    }

    /// Best power together with the receive filter it is paired with.
    pub fn best_response(&self, k: usize) -> Result<(BestResponse, ReceiveFilter)> {
        let br = self.best_power(k)?;
        let mut powers = self.powers.clone();
        powers[k] = br.power;
        let filter = build_filter(self.kind.filter_kind(), k, self.sigs, &powers, self.model.noise())?;
        Ok((br, filter))
    }

    /// Utility of user `k` at the current powers, with its optimal filter.
    pub fn utility(&self, k: usize) -> Result<f64> {
        utility_at(self.kind, self.model, self.sigs, &self.powers, k)
    }
}

/// Utility of user `k` for the given power profile, the receive filter being
/// re-optimized for that profile.
pub fn utility_at(
    kind: GameKind,
    model: &SystemModel,
    sigs: &SignatureSet,
    powers: &[f64],
    k: usize,
) -> Result<f64> {
    if !(powers[k] > 0.0) {
        return Err(Error::ZeroPower { user: k });
    }
    let f = EfficiencyFunction::new(model.config().packet_length)?;
    let filter = build_filter(kind.filter_kind(), k, sigs, powers, model.noise())?;
    let sinr = filter_sinr(&filter, k, sigs, powers, model.noise())?.sinr;
    utility(&f, model.config().utility_scale, sinr, powers[k])
}

/// `scale * f(sinr) / power`.
pub fn utility(f: &EfficiencyFunction, scale: f64, sinr: f64, power: f64) -> Result<f64> {
    if !(power > 0.0) {
        return Err(Error::ZeroPower { user: usize::MAX });
    }
    Ok(scale * f.value(sinr) / power)
}

/// Runs Gauss–Seidel best-response sweeps from `Pmax * 1e-3` until every
/// relative power change in a sweep is at most `power_rel_tol`.
pub fn run_game(kind: GameKind, model: &SystemModel, sigs: &SignatureSet) -> Result<EquilibriumResult> {
    let cfg = model.config();
    let mut state = GameState::new(kind, model, sigs)?;
    let order = state.update_order();
    let k_users = sigs.len();
    let mut last: Vec<Option<BestResponse>> = vec![None; k_users];
    let mut sweep_changes = Vec::new();
    let mut converged = false;

    while sweep_changes.len() < cfg.max_sweeps {
        let mut change: f64 = 0.0;
        for &k in &order {
            let br = state.best_power(k)?;
            let old = state.powers[k];
            change = change.max((br.power - old).abs() / old);
            state.powers[k] = br.power;
            last[k] = Some(br);
        }
        sweep_changes.push(change);
        if change <= cfg.power_rel_tol {
            converged = true;
            break;
        }
    }

    let tail = &sweep_changes[sweep_changes.len().saturating_sub(10)..];
    let tail_monotone = tail.windows(2).all(|w| w[1] <= w[0]);

    let f = EfficiencyFunction::new(cfg.packet_length)?;
    let powers = state.powers.clone();
    let mut filters = Vec::with_capacity(k_users);
    let mut sinrs = Vec::with_capacity(k_users);
    let mut utilities = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let filter = build_filter(kind.filter_kind(), k, sigs, &powers, model.noise())?;
        let sinr = filter_sinr(&filter, k, sigs, &powers, model.noise())?.sinr;
        utilities.push(utility(&f, cfg.utility_scale, sinr, powers[k])?);
        sinrs.push(sinr);
        filters.push(filter);
    }
    let last: Vec<BestResponse> = last.into_iter().map(|b| b.expect("every user updated")).collect();
    Ok(EquilibriumResult {
        kind,
        at_max: powers.iter().map(|&p| p == cfg.max_power).collect(),
        powers,
        filters,
        sinrs,
        utilities,
        iterations: sweep_changes.len(),
        converged: converged && tail_monotone,
        targets: last.iter().map(|b| b.target).collect(),
        stationarity: last.iter().map(|b| b.stationarity).collect(),
        sweep_changes,
        tail_monotone,
    })
}

/// Largest relative utility gain user `k` can obtain by deviating
/// unilaterally to any power in `grid`, its filter re-optimized per kind.
pub fn deviation_gain(
    result: &EquilibriumResult,
    model: &SystemModel,
    sigs: &SignatureSet,
    k: usize,
    grid: &[f64],
) -> Result<f64> {
    let base = utility_at(result.kind, model, sigs, &result.powers, k)?;
    let mut powers = result.powers.clone();
    let mut worst = f64::NEG_INFINITY;
    for &p in grid {
        powers[k] = p;
        let u = utility_at(result.kind, model, sigs, &powers, k)?;
        worst = worst.max((u - base) / base);
    }
    Ok(worst)
}

/// `count` log-spaced powers between `lo` and `hi`, both included.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| {
            if i + 1 == count {
                hi
            } else {
                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}
