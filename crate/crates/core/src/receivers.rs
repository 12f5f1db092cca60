//! Receive filters and the SINR of their decision statistics.
//!
//! Five filter families are covered: the plain matched filter, the
//! ISI-orthogonal (constrained) linear filter, the unconstrained MMSE filter,
//! and the constrained and unconstrained filters that operate after
//! successive cancellation of previously detected users. Cancellation always
//! assumes past decisions are correct.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{orth_complement_basis, spd_factor, spd_solve};
use crate::scenario::{data_covariance, NoiseModel};
use crate::waveforms::{SignatureSet, WINDOW_OFFSETS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    MatchedFilter,
    ConstrainedLinear,
    LinearMmse,
    ConstrainedSic,
    SicMmse,
}

impl FilterKind {
    pub fn is_constrained(self) -> bool {
        matches!(self, Self::ConstrainedLinear | Self::ConstrainedSic)
    }

    pub fn uses_cancellation(self) -> bool {
        matches!(self, Self::ConstrainedSic | Self::SicMmse)
    }
}

/// A receive filter, stored with unit norm.
///
/// For the constrained kinds `reduced` holds the coordinates `x` in the ISI
/// nulling basis `O`, with `full = O x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiveFilter {
    kind: FilterKind,
    full: DVector<f64>,
    reduced: Option<DVector<f64>>,
}

impl ReceiveFilter {
    pub fn new(kind: FilterKind, full: DVector<f64>, reduced: Option<DVector<f64>>) -> Result<Self> {
        let n = full.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroFilter);
        }
        Ok(Self {
            kind,
            full: full / n,
            reduced: reduced.map(|x| x / n),
        })
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn full(&self) -> &DVector<f64> {
        &self.full
    }

    pub fn reduced(&self) -> Option<&DVector<f64>> {
        self.reduced.as_ref()
    }
}

/// Terms of a decision-statistic SINR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinrBreakdown {
    pub signal: f64,
    pub noise: f64,
    /// Other users' contributions.
    pub mai: f64,
    /// The user's own adjacent symbols.
    pub self_isi: f64,
    pub sinr: f64,
}

impl SinrBreakdown {
    fn from_terms(signal: f64, noise: f64, mai: f64, self_isi: f64) -> Self {
        Self {
            signal,
            noise,
            mai,
            self_isi,
            sinr: signal / (noise + mai + self_isi),
        }
    }

    pub fn interference(&self) -> f64 {
        self.noise + self.mai + self.self_isi
    }
}

fn check_filter(d: &DVector<f64>) -> Result<()> {
    if d.iter().all(|&x| x == 0.0) {
        Err(Error::ZeroFilter)
    } else {
        Ok(())
    }
}

fn quad(d: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (m * d).dot(d)
}

/// SINR of `d^T y` for user `k` with a linear receiver.
pub fn sinr_linear(
    d: &DVector<f64>,
    k: usize,
    sigs: &SignatureSet,
    powers: &[f64],
    noise: &NoiseModel,
) -> Result<SinrBreakdown> {
    check_filter(d)?;
    let own = sigs.user(k);
    let signal = powers[k] * d.dot(own.main()).powi(2);
    let noise_term = quad(d, noise.covariance());
    let self_isi: f64 = own.isi().iter().map(|h| powers[k] * d.dot(h).powi(2)).sum();
    let mai: f64 = (0..sigs.len())
        .filter(|&i| i != k)
        .map(|i| {
            let w: f64 = sigs.user(i).windows().iter().map(|h| d.dot(h).powi(2)).sum();
            powers[i] * w
        })
        .sum();
    Ok(SinrBreakdown::from_terms(signal, noise_term, mai, self_isi))
}

/// SINR of user `k` after genie-aided cancellation of every user detected
/// before it (their symbols `p-2 .. p`; the `p+1` tail remains).
pub fn sinr_sic(
    d: &DVector<f64>,
    k: usize,
    sigs: &SignatureSet,
    powers: &[f64],
    noise: &NoiseModel,
) -> Result<SinrBreakdown> {
    check_filter(d)?;
    let own = sigs.user(k);
    let signal = powers[k] * d.dot(own.main()).powi(2);
    let noise_term = quad(d, noise.covariance());
    let self_isi: f64 = own.isi().iter().map(|h| powers[k] * d.dot(h).powi(2)).sum();
    let mai: f64 = (0..sigs.len())
        .filter(|&j| j != k)
        .map(|j| {
            let u = sigs.user(j);
            let w: f64 = if sigs.detected_before(j, k) {
                d.dot(u.window(1)).powi(2)
            } else {
                u.windows().iter().map(|h| d.dot(h).powi(2)).sum()
            };
            powers[j] * w
        })
        .sum();
    Ok(SinrBreakdown::from_terms(signal, noise_term, mai, self_isi))
}

pub fn matched_filter(k: usize, sigs: &SignatureSet) -> Result<ReceiveFilter> {
    let h = sigs.user(k).main();
    if h.norm() == 0.0 {
        return Err(Error::ZeroSignature { user: k });
    }
    ReceiveFilter::new(FilterKind::MatchedFilter, h.clone(), None)
}

/// Scalars describing the matched-filter SINR as a function of own power,
/// `gamma(p) = p a / (c + p b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedFilterTerms {
    /// `|h_{k,0}|^4`.
    pub a: f64,
    /// `sum_{j != 0} (h_{k,0}^T h_{k,j})^2`.
    pub b: f64,
    /// Noise plus other-user interference at the matched-filter output.
    pub c: f64,
}

impl MatchedFilterTerms {
    pub fn sinr(&self, p: f64) -> f64 {
        p * self.a / (self.c + p * self.b)
    }
}

pub fn matched_filter_terms(
    k: usize,
    sigs: &SignatureSet,
    powers: &[f64],
    noise: &NoiseModel,
) -> MatchedFilterTerms {
    let own = sigs.user(k);
    let h = own.main();
    let a = h.norm_squared().powi(2);
    let b = own.isi().iter().map(|g| h.dot(g).powi(2)).sum();
    let mai: f64 = (0..sigs.len())
        .filter(|&i| i != k)
        .map(|i| powers[i] * sigs.user(i).windows().iter().map(|g| h.dot(g).powi(2)).sum::<f64>())
        .sum();
    MatchedFilterTerms {
        a,
        b,
        c: quad(h, noise.covariance()) + mai,
    }
}

/// Orthonormal basis `O_k` of the complement of user `k`'s ISI windows.
pub fn isi_nuller_basis(k: usize, sigs: &SignatureSet) -> DMatrix<f64> {
    let isi: Vec<DVector<f64>> = sigs.user(k).isi().iter().map(|h| (*h).clone()).collect();
    orth_complement_basis(&isi, sigs.dim())
}

/// `x = (O^T R O)^{-1} O^T h_{k,0}`, returned as a filter `O x`.
pub fn constrained_filter_with(
    kind: FilterKind,
    k: usize,
    sigs: &SignatureSet,
    basis: &DMatrix<f64>,
    covariance: &DMatrix<f64>,
) -> Result<ReceiveFilter> {
    let reduced_cov = basis.transpose() * covariance * basis;
    let rhs = basis.transpose() * sigs.user(k).main();
    let x = spd_solve(&reduced_cov, &rhs)?;
    let full = basis * &x;
    ReceiveFilter::new(kind, full, Some(x))
}

pub fn constrained_mmse_filter(
    k: usize,
    sigs: &SignatureSet,
    powers: &[f64],
    noise: &NoiseModel,
) -> Result<ReceiveFilter> {
    let cov = data_covariance(sigs, powers, noise);
    let basis = isi_nuller_basis(k, sigs);
    constrained_filter_with(FilterKind::ConstrainedLinear, k, sigs, &basis, &cov)
}

pub fn mmse_filter(
    k: usize,
    sigs: &SignatureSet,
    powers: &[f64],
    noise: &NoiseModel,
) -> Result<ReceiveFilter> {
    let cov = data_covariance(sigs, powers, noise);
    let d = spd_solve(&cov, sigs.user(k).main())?;
    ReceiveFilter::new(FilterKind::LinearMmse, d, None)
}

/// Closed-form MMSE SINR `p s / (1 - p s)` with `s = h^T M_yy^{-1} h`.
pub fn mmse_sinr_closed_form(
    k: usize,
    sigs: &SignatureSet,
    powers: &[f64],
    noise: &NoiseModel,
) -> Result<f64> {
    let cov = data_covariance(sigs, powers, noise);
    closed_form(&cov, sigs.user(k).main(), powers[k])
}

fn closed_form(cov: &DMatrix<f64>, h: &DVector<f64>, p: f64) -> Result<f64> {
    let s = h.dot(&spd_factor(cov)?.solve(h));
    Ok(p * s * s / (s - p * s * s))
}

/// `M_k`: noise plus the `p+1` tail of every user plus the `p-2 .. p`
/// windows of users not yet cancelled when `k` is detected (including `k`).
pub fn sic_interference_matrix(
    k: usize,
    sigs: &SignatureSet,
    powers: &[f64],
    noise: &NoiseModel,
) -> DMatrix<f64> {
    let mut m = noise.covariance().clone();
    for i in 0..sigs.len() {
        let u = sigs.user(i);
        let p = powers[i];
        m.ger(p, u.window(1), u.window(1), 1.0);
        if !sigs.detected_before(i, k) {
            for j in [-2, -1, 0] {
                m.ger(p, u.window(j), u.window(j), 1.0);
            }
        }
    }
    m
}

pub fn constrained_sic_filter(
    k: usize,
    sigs: &SignatureSet,
    powers: &[f64],
    noise: &NoiseModel,
) -> Result<ReceiveFilter> {
    let cov = sic_interference_matrix(k, sigs, powers, noise);
    let basis = isi_nuller_basis(k, sigs);
    constrained_filter_with(FilterKind::ConstrainedSic, k, sigs, &basis, &cov)
}

pub fn sic_mmse_filter(
    k: usize,
    sigs: &SignatureSet,
    powers: &[f64],
    noise: &NoiseModel,
) -> Result<ReceiveFilter> {
    let cov = sic_interference_matrix(k, sigs, powers, noise);
    let d = spd_solve(&cov, sigs.user(k).main())?;
    ReceiveFilter::new(FilterKind::SicMmse, d, None)
}

/// Closed form of the SIC-MMSE SINR, as [`mmse_sinr_closed_form`] with `M_k`.
pub fn sic_mmse_sinr_closed_form(
    k: usize,
    sigs: &SignatureSet,
    powers: &[f64],
    noise: &NoiseModel,
) -> Result<f64> {
    let cov = sic_interference_matrix(k, sigs, powers, noise);
    closed_form(&cov, sigs.user(k).main(), powers[k])
}

/// Builds the optimal filter of `kind` for user `k` at the given powers.
pub fn build_filter(
    kind: FilterKind,
    k: usize,
    sigs: &SignatureSet,
    powers: &[f64],
    noise: &NoiseModel,
) -> Result<ReceiveFilter> {
    match kind {
        FilterKind::MatchedFilter => matched_filter(k, sigs),
        FilterKind::ConstrainedLinear => constrained_mmse_filter(k, sigs, powers, noise),
        FilterKind::LinearMmse => mmse_filter(k, sigs, powers, noise),
        FilterKind::ConstrainedSic => constrained_sic_filter(k, sigs, powers, noise),
        FilterKind::SicMmse => sic_mmse_filter(k, sigs, powers, noise),
    }
}

/// SINR of `filter` under the detection rule its kind implies.
pub fn filter_sinr(
    filter: &ReceiveFilter,
    k: usize,
    sigs: &SignatureSet,
    powers: &[f64],
    noise: &NoiseModel,
) -> Result<SinrBreakdown> {
    if filter.kind().uses_cancellation() {
        sinr_sic(filter.full(), k, sigs, powers, noise)
    } else {
        sinr_linear(filter.full(), k, sigs, powers, noise)
    }
}

/// Largest `|d^T h_{k,i}|` over the ISI windows, relative to `|d| |h_{k,i}|`.
pub fn isi_leakage(d: &DVector<f64>, k: usize, sigs: &SignatureSet) -> f64 {
    WINDOW_OFFSETS
        .iter()
        .filter(|&&i| i != 0)
        .map(|&i| {
            let h = sigs.user(k).window(i);
            let scale = d.norm() * h.norm();
            if scale == 0.0 {
                0.0
            } else {
                d.dot(h).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}
