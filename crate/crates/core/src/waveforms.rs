//! Chip pulse, its autocorrelation, spreading codes and the sampled effective
//! signatures seen by the receiver.
//!
//! The transmit chip pulse is a square-root raised cosine truncated to
//! `[0, 4 Tc]` and peaked at `2 Tc`. After the front-end matched filter every
//! chip shows up as the pulse autocorrelation `rho`, supported on
//! `[-4 Tc, 4 Tc]`. A user's effective signature is
//!
//! ```text
//! h(t) = sum_l gain_l * sum_n code_n * rho(t - delay_l - n Tc)
//! ```
//!
//! and the receiver observes it through four windows of `2 * Mos * N` samples,
//! one per symbol overlapping the observation interval.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Pulse support, in chips.
pub const SUPPORT_CHIPS: usize = 4;

/// Symbol offsets of the four observation windows, in storage order.
pub const WINDOW_OFFSETS: [isize; 4] = [-2, -1, 0, 1];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSpec {
    /// Roll-off factor in `[0, 1]`.
    pub rolloff: f64,
    pub chip_interval: f64,
    /// Tabulation density for the autocorrelation.
    pub fine_grid_per_chip: usize,
}

impl Default for PulseSpec {
    fn default() -> Self {
        Self {
            rolloff: 0.22,
            chip_interval: 1.0,
            fine_grid_per_chip: 64,
        }
    }
}

/// Square-root raised cosine with unit chip interval, centred at zero and
/// without normalization or truncation.
fn srrc_centered(rolloff: f64, x: f64) -> f64 {
    use std::f64::consts::PI;
    let x = x.abs();
    let beta = rolloff;
    if x < 1e-9 {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    if beta > 0.0 && (x - 1.0 / (4.0 * beta)).abs() < 1e-9 {
        let arg = PI / (4.0 * beta);
        return beta / 2f64.sqrt()
            * ((1.0 + 2.0 / PI) * arg.sin() + (1.0 - 2.0 / PI) * arg.cos());
    }
    let num = (PI * x * (1.0 - beta)).sin() + 4.0 * beta * x * (PI * x * (1.0 + beta)).cos();
    let den = PI * x * (1.0 - (4.0 * beta * x).powi(2));
    num / den
}

/// Tabulated truncated pulse and its autocorrelation.
///
/// Built once per configuration and shared read-only afterwards.
#[derive(Debug, Clone)]
pub struct Pulse {
    spec: PulseSpec,
    scale: f64,
    step: f64,
    /// `rho(j * step)` for `j = 0 ..= 4 * fine_grid_per_chip`.
    autocorr: Vec<f64>,
}

impl Pulse {
    pub fn new(spec: PulseSpec) -> Result<Self> {
        if !(0.0..=1.0).contains(&spec.rolloff) {
            return Err(Error::InvalidConfig(format!(
                "rolloff {} outside [0, 1]",
                spec.rolloff
            )));
        }
        if !(spec.chip_interval > 0.0) || spec.fine_grid_per_chip < 2 {
            return Err(Error::InvalidConfig(
                "pulse needs a positive chip interval and >= 2 grid points per chip".into(),
            ));
        }
        let g = spec.fine_grid_per_chip;
        let n = SUPPORT_CHIPS * g;
        let step = spec.chip_interval / g as f64;
        let raw: Vec<f64> = (0..=n)
            .map(|i| srrc_centered(spec.rolloff, i as f64 / g as f64 - 2.0))
            .collect();

        // Trapezoidal correlation over the overlap [j, n] of the two copies.
        let corr = |j: usize| -> f64 {
            let mut acc = 0.0;
            for i in j..=n {
                let w = if i == j || i == n { 0.5 } else { 1.0 };
                acc += w * raw[i] * raw[i - j];
            }
            acc * step
        };
        let energy = corr(0);
        let autocorr: Vec<f64> = (0..=n)
            .map(|j| if j == n { 0.0 } else { corr(j) / energy })
            .collect();
        Ok(Self {
            spec,
            scale: 1.0 / energy.sqrt(),
            step,
            autocorr,
        })
    }

    pub fn spec(&self) -> &PulseSpec {
        &self.spec
    }

    /// Unit-energy truncated pulse; zero outside `[0, 4 Tc]`.
    pub fn srrc(&self, t: f64) -> f64 {
        let tc = self.spec.chip_interval;
        if !(0.0..=SUPPORT_CHIPS as f64 * tc).contains(&t) {
            return 0.0;
        }
        self.scale * srrc_centered(self.spec.rolloff, t / tc - 2.0) / tc.sqrt()
    }

    /// Autocorrelation `rho(tau)`, linearly interpolated between grid points.
    pub fn autocorrelation(&self, tau: f64) -> f64 {
        let u = tau.abs() / self.step;
        let last = self.autocorr.len() - 1;
        if u >= last as f64 {
            return 0.0;
        }
        let j = u.floor() as usize;
        let frac = u - j as f64;
        self.autocorr[j] + frac * (self.autocorr[j + 1] - self.autocorr[j])
    }

    /// `(tau, rho(tau))` on the tabulation grid, `tau` in `[-4 Tc, 4 Tc]`.
    pub fn autocorrelation_table(&self) -> Vec<(f64, f64)> {
        let n = self.autocorr.len() as isize - 1;
        (-n..=n)
            .map(|j| (j as f64 * self.step, self.autocorr[j.unsigned_abs()]))
            .collect()
    }
}

/// Antipodal spreading sequence with entries `+-1/sqrt(N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadingCode {
    chips: Vec<f64>,
}

impl SpreadingCode {
    pub fn from_signs(signs: &[i8]) -> Self {
        let amp = 1.0 / (signs.len() as f64).sqrt();
        Self {
            chips: signs.iter().map(|&s| if s < 0 { -amp } else { amp }).collect(),
        }
    }

    pub fn chips(&self) -> &[f64] {
        &self.chips
    }

    pub fn len(&self) -> usize {
        self.chips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chips.is_empty()
    }
}

/// Random code for `user`, a pure function of `(seed, user)`.
pub fn make_code(seed: u64, user: usize, n: usize) -> SpreadingCode {
    assert!(n >= 1, "processing gain must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user as u64);
    let signs: Vec<i8> = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
    SpreadingCode::from_signs(&signs)
}

/// One resolvable multipath component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathComponent {
    pub gain: f64,
    pub delay: f64,
}

/// Continuous-time effective signature of one user.
#[derive(Debug, Clone, Copy)]
pub struct EffectiveSignature<'a> {
    pub code: &'a SpreadingCode,
    pub paths: &'a [PathComponent],
    pub pulse: &'a Pulse,
}

impl EffectiveSignature<'_> {
    pub fn value(&self, t: f64) -> f64 {
        let tc = self.pulse.spec.chip_interval;
        self.paths
            .iter()
            .map(|p| {
                p.gain
                    * self
                        .code
                        .chips
                        .iter()
                        .enumerate()
                        .map(|(n, c)| c * self.pulse.autocorrelation(t - p.delay - n as f64 * tc))
                        .sum::<f64>()
            })
            .sum()
    }
}

/// The four sampled windows `h_{k,i}` of one user, `i = -2, -1, 0, +1`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSignature {
    windows: [DVector<f64>; 4],
}

impl UserSignature {
    pub fn new(windows: [DVector<f64>; 4]) -> Self {
        let dim = windows[0].len();
        assert!(windows.iter().all(|w| w.len() == dim), "window length mismatch");
        Self { windows }
    }

    /// Window for symbol offset `i` in `{-2, -1, 0, 1}`.
    pub fn window(&self, i: isize) -> &DVector<f64> {
        &self.windows[(i + 2) as usize]
    }

    pub fn windows(&self) -> &[DVector<f64>; 4] {
        &self.windows
    }

    /// `h_{k,0}`.
    pub fn main(&self) -> &DVector<f64> {
        &self.windows[2]
    }

    /// Own intersymbol-interference windows `h_{k,-2}, h_{k,-1}, h_{k,+1}`.
    pub fn isi(&self) -> [&DVector<f64>; 3] {
        [&self.windows[0], &self.windows[1], &self.windows[3]]
    }

    pub fn dim(&self) -> usize {
        self.windows[0].len()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            windows: self.windows.clone().map(|w| w * c),
        }
    }
}

/// Samples the effective signature on the observation grid
/// `t_m = m Tc / Mos`, `m = 0 .. 2 Mos N`, shifted by `-i Tb` for window `i`.
pub fn effective_signature(
    code: &SpreadingCode,
    paths: &[PathComponent],
    pulse: &Pulse,
    oversampling: usize,
) -> Result<UserSignature> {
    let tc = pulse.spec.chip_interval;
    let tb = code.len() as f64 * tc;
    for p in paths {
        if !(0.0..tb).contains(&p.delay) {
            return Err(Error::DelayOutOfRange {
                delay: p.delay,
                bit_interval: tb,
            });
        }
    }
    let sig = EffectiveSignature { code, paths, pulse };
    let dim = 2 * oversampling * code.len();
    let dt = tc / oversampling as f64;
    let windows = WINDOW_OFFSETS
        .map(|i| DVector::from_fn(dim, |m, _| sig.value(m as f64 * dt - i as f64 * tb)));
    Ok(UserSignature::new(windows))
}

/// Detection order for interference cancellation: decreasing `|h_{k,0}|`,
/// ties kept in index order.
pub fn sort_for_sic(norms: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..norms.len()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    order
}

/// Signatures of all active users plus their cancellation order.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureSet {
    users: Vec<UserSignature>,
    norms: Vec<f64>,
    sic_order: Vec<usize>,
    /// Position of each user inside `sic_order`.
    sic_rank: Vec<usize>,
}

impl SignatureSet {
    pub fn new(users: Vec<UserSignature>) -> Self {
        assert!(!users.is_empty(), "at least one user required");
        let dim = users[0].dim();
        assert!(users.iter().all(|u| u.dim() == dim), "signature length mismatch");
        let norms: Vec<f64> = users.iter().map(|u| u.main().norm()).collect();
        let sic_order = sort_for_sic(&norms);
        let mut sic_rank = vec![0; users.len()];
        for (pos, &k) in sic_order.iter().enumerate() {
            sic_rank[k] = pos;
        }
        Self {
            users,
            norms,
            sic_order,
            sic_rank,
        }
    }

    pub fn user(&self, k: usize) -> &UserSignature {
        &self.users[k]
    }

    pub fn users(&self) -> &[UserSignature] {
        &self.users
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.users[0].dim()
    }

    /// `|h_{k,0}|` per user.
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn sic_order(&self) -> &[usize] {
        &self.sic_order
    }

    /// Zero-based detection position of user `k`.
    pub fn sic_rank(&self, k: usize) -> usize {
        self.sic_rank[k]
    }

    /// True when `j` is detected (and cancelled) before `k`.
    pub fn detected_before(&self, j: usize, k: usize) -> bool {
        self.sic_rank[j] < self.sic_rank[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pulse() -> Pulse {
        Pulse::new(PulseSpec::default()).unwrap()
    }

    #[test]
    fn srrc_vanishes_outside_support() {
        let p = pulse();
        assert_eq!(p.srrc(-1.0), 0.0);
        assert_eq!(p.srrc(5.0), 0.0);
        assert_eq!(p.srrc(4.0 + 1e-12), 0.0);
    }

    #[test]
    fn srrc_peaks_at_two_chips() {
        let p = pulse();
        let (arg, _) = (0..=4000)
            .map(|i| i as f64 * 1e-3)
            .map(|t| (t, p.srrc(t)))
            .fold((0.0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
        assert!((arg - 2.0).abs() < 1e-12);
    }

    #[test]
    fn srrc_is_even_about_peak() {
        let p = pulse();
        for i in 1..200 {
            let d = i as f64 * 0.00997;
            let (a, b) = (p.srrc(2.0 + d), p.srrc(2.0 - d));
            assert!((a - b).abs() <= 1e-13, "{d}: {a} vs {b}");
        }
    }

    #[test]
    fn srrc_singular_points_are_continuous() {
        // |x| = 1/(4 beta) for beta = 0.25 sits at one chip from the peak.
        let p = Pulse::new(PulseSpec {
            rolloff: 0.25,
            ..PulseSpec::default()
        })
        .unwrap();
        let at = p.srrc(3.0);
        assert!((at - p.srrc(3.0 + 1e-6)).abs() < 1e-5);
        assert!((at - p.srrc(3.0 - 1e-6)).abs() < 1e-5);
        assert!((p.srrc(2.0) - p.srrc(2.0 + 1e-7)).abs() < 1e-6);
    }

    #[test]
    fn zero_rolloff_is_sinc() {
        let p = Pulse::new(PulseSpec {
            rolloff: 0.0,
            ..PulseSpec::default()
        })
        .unwrap();
        assert!(p.srrc(3.0).abs() < 1e-12);
        assert!(p.srrc(1.0).abs() < 1e-12);
    }

    #[test]
    fn autocorrelation_normalized_even_and_supported() {
        let p = pulse();
        assert_eq!(p.autocorrelation(0.0), 1.0);
        for (tau, r) in p.autocorrelation_table() {
            assert_eq!(p.autocorrelation(-tau), r);
        }
        assert_eq!(p.autocorrelation(4.0), 0.0);
        assert_eq!(p.autocorrelation(-4.5), 0.0);
    }

    #[test]
    fn autocorrelation_nearly_nyquist() {
        // Independent oracle: composite Simpson on a 100x finer grid.
        let p = pulse();
        let m = 6400;
        let h = 4.0 / m as f64;
        let simpson = |tau: f64| {
            let f = |t: f64| p.srrc(t) * p.srrc(t - tau);
            let (a, b) = (tau, 4.0);
            let n = ((b - a) / h).round() as usize & !1;
            let hh = (b - a) / n as f64;
            let mut s = f(a) + f(b);
            for i in 1..n {
                s += f(a + i as f64 * hh) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * hh / 3.0
        };
        let e = simpson(0.0);
        // Trapezoid on 64 points per chip versus Simpson on 6400 total.
        assert!((e - 1.0).abs() < 1e-5, "energy {e}");
        // Truncation to four chips leaves rho(2) near -0.103; the odd lags
        // stay close to zero.
        for k in 1..=3 {
            let r = p.autocorrelation(k as f64);
            let bound = if k == 2 { 0.11 } else { 0.05 };
            assert!(r.abs() <= bound, "rho({k}) = {r}");
            assert!((r - simpson(k as f64)).abs() < 1e-4);
        }
    }

    #[test]
    fn codes_are_antipodal_unit_norm_and_deterministic() {
        let c = make_code(42, 3, 7);
        let amp = 1.0 / 7f64.sqrt();
        assert!(c.chips().iter().all(|&x| x == amp || x == -amp));
        let norm: f64 = c.chips().iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-15);
        assert_eq!(c, make_code(42, 3, 7));
        assert_ne!(make_code(42, 3, 64), make_code(42, 4, 64));
    }

    fn unit_code() -> SpreadingCode {
        SpreadingCode::from_signs(&[1, -1, 1, 1, -1, -1, 1])
    }

    #[test]
    fn identity_channel_reproduces_spreading_waveform() {
        let p = pulse();
        let code = unit_code();
        let paths = [PathComponent { gain: 1.0, delay: 0.0 }];
        let sig = effective_signature(&code, &paths, &p, 2).unwrap();
        assert_eq!(sig.dim(), 28);
        for m in 0..28 {
            let t = m as f64 * 0.5;
            let s: f64 = code
                .chips()
                .iter()
                .enumerate()
                .map(|(n, c)| c * p.autocorrelation(t - n as f64))
                .sum();
            assert_eq!(sig.main()[m], s);
        }
        assert!(sig.window(-2).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn signature_is_linear_in_gains() {
        let p = pulse();
        let code = unit_code();
        let paths = [
            PathComponent { gain: 0.7, delay: 1.3 },
            PathComponent { gain: 0.2, delay: 5.9 },
        ];
        let doubled: Vec<_> = paths
            .iter()
            .map(|q| PathComponent { gain: 2.0 * q.gain, ..*q })
            .collect();
        let a = effective_signature(&code, &paths, &p, 2).unwrap();
        let b = effective_signature(&code, &doubled, &p, 2).unwrap();
        for i in WINDOW_OFFSETS {
            assert!((b.window(i) - 2.0 * a.window(i)).amax() < 1e-15);
        }
    }

    #[test]
    fn delays_must_lie_in_bit_interval() {
        let p = pulse();
        let code = unit_code();
        let bad = [PathComponent { gain: 1.0, delay: 7.0 }];
        assert!(matches!(
            effective_signature(&code, &bad, &p, 2),
            Err(Error::DelayOutOfRange { .. })
        ));
        let neg = [PathComponent { gain: 1.0, delay: -0.1 }];
        assert!(effective_signature(&code, &neg, &p, 2).is_err());
    }

    #[test]
    fn samples_outside_analytic_support_are_zero() {
        let p = pulse();
        let code = unit_code();
        let paths = [
            PathComponent { gain: 0.5, delay: 0.4 },
            PathComponent { gain: 0.3, delay: 3.1 },
            PathComponent { gain: 0.2, delay: 6.2 },
        ];
        let sig = effective_signature(&code, &paths, &p, 2).unwrap();
        let (first, last) = (0.4 - 4.0, 6.2 + 6.0 + 4.0);
        for i in WINDOW_OFFSETS {
            for m in 0..28 {
                let t = m as f64 * 0.5 - i as f64 * 7.0;
                if t <= first || t >= last {
                    assert_eq!(sig.window(i)[m], 0.0, "window {i} sample {m}");
                }
            }
        }
    }

    #[test]
    fn shifted_delays_match_direct_evaluation() {
        let p = pulse();
        let code = unit_code();
        let delta = 0.173;
        let paths = [
            PathComponent { gain: 0.5, delay: 0.4 + delta },
            PathComponent { gain: 0.3, delay: 3.1 + delta },
        ];
        let base = [
            PathComponent { gain: 0.5, delay: 0.4 },
            PathComponent { gain: 0.3, delay: 3.1 },
        ];
        let sig = effective_signature(&code, &paths, &p, 2).unwrap();
        let direct = EffectiveSignature {
            code: &code,
            paths: &base,
            pulse: &p,
        };
        for i in WINDOW_OFFSETS {
            for m in 0..28 {
                let t = m as f64 * 0.5 - i as f64 * 7.0;
                assert!((sig.window(i)[m] - direct.value(t - delta)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn main_window_carries_most_energy_for_aligned_user() {
        let p = pulse();
        let code = unit_code();
        let paths = [PathComponent { gain: 1.0, delay: 0.0 }];
        let sig = effective_signature(&code, &paths, &p, 2).unwrap();
        let direct = EffectiveSignature {
            code: &code,
            paths: &paths,
            pulse: &p,
        };
        // Sampled energy over the full support [-4, 10].
        let full: f64 = (-8..20).map(|m| direct.value(m as f64 * 0.5).powi(2)).sum();
        let main = sig.main().norm_squared();
        assert!(main >= 0.9 * full, "{main} vs {full}");
        // Overlapping windows see every support sample twice, except the
        // precursor of the symbol two ahead, which no window covers.
        let total: f64 = sig.windows().iter().map(|w| w.norm_squared()).sum();
        let precursor: f64 = (-8..0).map(|m| direct.value(m as f64 * 0.5).powi(2)).sum();
        assert!((total - (2.0 * full - precursor)).abs() < 1e-12 * total);
    }

    #[test]
    fn sic_order_sorts_norms() {
        assert_eq!(sort_for_sic(&[1.0, 3.0, 2.0]), vec![1, 2, 0]);
        assert_eq!(sort_for_sic(&[2.0, 2.0, 2.0]), vec![0, 1, 2]);
    }
}
