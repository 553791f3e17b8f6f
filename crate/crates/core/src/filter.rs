//! Filter functions of pulse sequences and the linear map from spectral
//! density samples to decay rates.
//!
//! Fourier convention: `F(w) = (2 pi)^(-1/2) * int f(t) exp(-i w t) dt`, with the
//! decay argument `chi = sqrt(pi/2) * int S(w) |F(w)|^2 dw` over the whole real
//! line. In the many-cycle limit this collapses onto the harmonics of the
//! modulation period `P`, `R = sum_k A_k^2 S(k w0)` with `w0 = 2 pi / P` and
//! `A_k^2 = sqrt(2 pi) |c_k|^2`, where `c_k` are the complex Fourier-series
//! coefficients of `f`. That scale is what makes the flat-spectrum rate come
//! out independent of the pulse spacing.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sequence::{Jump, PulseSequence};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
pub(crate) const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Fourier transform of the modulation over a single cycle.
pub fn cycle_transform(seq: &PulseSequence, omega: f64) -> Complex64 {
    seq.segments()
        .iter()
        .map(|s| {
            let len = s.len();
            let mid = 0.5 * (s.start + s.end);
            Complex64::from_polar(s.sign * len * sinc(0.5 * omega * len), -omega * mid)
        })
        .sum::<Complex64>()
        * INV_SQRT_2PI
}

/// Segment table of one cycle for repeated filter evaluation.
#[derive(Debug, Clone)]
pub(crate) struct FilterKernel {
    // (sign * length, half length, midpoint)
    segs: Vec<(f64, f64, f64)>,
    cycle_length: f64,
    phase: f64,
}

impl FilterKernel {
    pub(crate) fn new(seq: &PulseSequence) -> Self {
        let segs = seq
            .segments()
            .iter()
            .map(|s| (s.sign * s.len(), 0.5 * s.len(), 0.5 * (s.start + s.end)))
            .collect();
        FilterKernel {
            segs,
            cycle_length: seq.cycle_length(),
            phase: cycle_phase(seq),
        }
    }

    pub(crate) fn cycle_length(&self) -> f64 {
        self.cycle_length
    }

    pub(crate) fn phase(&self) -> f64 {
        self.phase
    }

    pub(crate) fn single_sq(&self, omega: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for &(a, h, mid) in &self.segs {
            let amp = a * sinc(omega * h);
            let (s, c) = (omega * mid).sin_cos();
            re += amp * c;
            im -= amp * s;
        }
        (re * re + im * im) * INV_SQRT_2PI * INV_SQRT_2PI
    }

    pub(crate) fn sq(&self, omega: f64, cycles: usize) -> f64 {
        let single = self.single_sq(omega);
        if cycles == 1 {
            single
        } else {
            single * dirichlet_sq(0.5 * (omega * self.cycle_length + self.phase), cycles)
        }
    }
}

/// `|sum_{m<M} exp(-i m theta)|^2`, evaluated from `half = theta / 2`.
pub(crate) fn dirichlet_sq(half: f64, cycles: usize) -> f64 {
    let reduced = half - PI * (half / PI).round();
    let m = cycles as f64;
    if reduced == 0.0 {
        return m * m;
    }
    let num = (m * reduced).sin();
    let den = reduced.sin();
    (num * num) / (den * den)
}

/// Phase offset of the cycle-to-cycle ratio: 0 for even pulse counts, pi for odd.
pub(crate) fn cycle_phase(seq: &PulseSequence) -> f64 {
    if seq.pulse_count() % 2 == 0 {
        0.0
    } else {
        PI
    }
}

/// `|F_N(omega, M tau_c)|^2` in s^2.
pub fn filter_function_sq(seq: &PulseSequence, omega: f64, cycles: usize) -> Result<f64> {
    if cycles == 0 {
        return Err(invalid("cycle count must be at least 1"));
    }
    if !omega.is_finite() {
        return Err(invalid(format!("omega must be finite, got {omega}")));
    }
    Ok(filter_sq_unchecked(seq, omega, cycles))
}

pub(crate) fn filter_sq_unchecked(seq: &PulseSequence, omega: f64, cycles: usize) -> f64 {
    let single = cycle_transform(seq, omega).norm_sqr();
    if cycles == 1 {
        return single;
    }
    let half = 0.5 * (omega * seq.cycle_length() + cycle_phase(seq));
    single * dirichlet_sq(half, cycles)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Absolute rate weights, `A_k^2 = sqrt(2 pi) |c_k|^2`.
    ParsevalInternal,
    /// Divided by `A_1^2`.
    A1Normalized,
}

/// Harmonic weights `A_k^2` of a periodic modulation at `k * base_frequency`.
#[derive(Debug, Clone)]
pub struct HarmonicWeights {
    base_frequency: f64,
    normalization: Normalization,
    weights: Vec<f64>,
    // jumps over the full period together with the sub-period divisor
    jumps: Vec<Jump>,
    period: f64,
    divisor: usize,
    a1_sq: f64,
    label: String,
}

impl HarmonicWeights {
    pub fn base_frequency(&self) -> f64 {
        self.base_frequency
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn k_max(&self) -> usize {
        self.weights.len()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Tabulated weights for k = 1..=k_max in the current normalization.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Absolute `A_1^2`.
    pub fn a1_sq(&self) -> f64 {
        self.a1_sq
    }

    /// Complex Fourier coefficient of the modulation at harmonic `k`.
    fn coefficient(&self, k: usize) -> Complex64 {
        let kk = (k * self.divisor) as f64;
        let sum: Complex64 = self
            .jumps
            .iter()
            .map(|j| Complex64::from_polar(j.size, -2.0 * PI * kk * j.time / self.period))
            .sum();
        sum / Complex64::new(0.0, 2.0 * PI * kk)
    }

    /// Absolute `A_k^2` for any `k >= 1`.
    pub fn absolute(&self, k: usize) -> f64 {
        SQRT_2PI * self.coefficient(k).norm_sqr()
    }

    /// `A_k^2 / A_1^2`.
    pub fn relative(&self, k: usize) -> f64 {
        self.absolute(k) / self.a1_sq
    }

    /// `A_k^2` in this set's normalization, computed past `k_max` on demand.
    pub fn get(&self, k: usize) -> f64 {
        match self.weights.get(k.wrapping_sub(1)) {
            Some(&w) => w,
            None => match self.normalization {
                Normalization::ParsevalInternal => self.absolute(k),
                Normalization::A1Normalized => self.relative(k),
            },
        }
    }

    /// Share `2 |c_k|^2` of the mean-square modulation carried by harmonic
    /// pair `+-k`. Sums to one over all k for a balanced sequence.
    pub fn fold_weight(&self, k: usize) -> f64 {
        2.0 * self.coefficient(k).norm_sqr()
    }

    /// Upper bound `B` with `A_k^2 / A_1^2 <= B / k^2` for every k.
    fn relative_bound(&self) -> f64 {
        let total: f64 = self.jumps.iter().map(|j| j.size.abs()).sum();
        let c = total / (2.0 * PI * self.divisor as f64);
        SQRT_2PI * c * c / self.a1_sq
    }

    pub fn to_normalization(&self, normalization: Normalization) -> HarmonicWeights {
        let mut out = self.clone();
        out.normalization = normalization;
        out.weights = (1..=self.weights.len())
            .map(|k| match normalization {
                Normalization::ParsevalInternal => self.absolute(k),
                Normalization::A1Normalized => self.relative(k),
            })
            .collect();
        out
    }
}

/// Harmonic weights of `seq` for k = 1..=k_max, in absolute normalization.
///
/// The base frequency is that of the shortest period of the modulation; for
/// odd pulse counts the period is two cycles.
pub fn harmonic_weights(seq: &PulseSequence, k_max: usize) -> Result<HarmonicWeights> {
    if k_max < 1 {
        return Err(invalid("k_max must be at least 1"));
    }
    let divisor = seq.period_divisor();
    let period = seq.period();
    let mut hw = HarmonicWeights {
        base_frequency: 2.0 * PI * divisor as f64 / period,
        normalization: Normalization::ParsevalInternal,
        weights: Vec::new(),
        jumps: seq.period_jumps(),
        period,
        divisor,
        a1_sq: 1.0,
        label: seq.label().to_string(),
    };
    let a1 = hw.absolute(1);
    if a1 <= 0.0 {
        return Err(invalid(format!(
            "sequence '{}' has no weight on its first harmonic",
            seq.label()
        )));
    }
    hw.a1_sq = a1;
    hw.weights = (1..=k_max).map(|k| hw.absolute(k)).collect();
    Ok(hw)
}

/// `Lambda_alpha = sum_k (A_k^2 / A_1^2) / k^alpha`, summed until the
/// integral-test bound on the remainder is below 1e-9 of the partial sum.
pub fn lambda_alpha(weights: &HarmonicWeights, alpha: f64) -> Result<f64> {
    if alpha.is_nan() || alpha <= 1.0 {
        return Err(Error::Divergence(format!(
            "Lambda_alpha needs alpha > 1, got {alpha}"
        )));
    }
    let bound = weights.relative_bound();
    let mut sum = 0.0;
    for k in 1..=50_000_000usize {
        let kf = k as f64;
        sum += weights.relative(k) * kf.powf(-alpha);
        let remainder = bound * kf.powf(-(1.0 + alpha)) / (1.0 + alpha);
        if remainder < 1e-9 * sum {
            return Ok(sum);
        }
    }
    Err(Error::NumericalFailure(format!(
        "Lambda_alpha did not converge for alpha = {alpha}"
    )))
}

/// Upper-triangular map `R_n = sum_j U_nj S_j` between measurement n
/// (spacing `tau_max / n`) and spectral sample `S_j = S(j * omega_min)`.
#[derive(Debug, Clone)]
pub struct SensitivityMatrix {
    m: usize,
    omega_min: f64,
    entries: Vec<f64>,
    family: String,
}

pub fn sensitivity_matrix(weights: &HarmonicWeights, m: usize) -> Result<SensitivityMatrix> {
    if m < 1 {
        return Err(invalid("matrix dimension must be at least 1"));
    }
    let mut entries = vec![0.0; m * m];
    for n in 1..=m {
        for k in 1..=m / n {
            entries[(n - 1) * m + (n * k - 1)] = weights.absolute(k);
        }
    }
    Ok(SensitivityMatrix {
        m,
        omega_min: weights.base_frequency(),
        entries,
        family: weights.label().to_string(),
    })
}

impl SensitivityMatrix {
    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn omega_min(&self) -> f64 {
        self.omega_min
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    /// Entry `U_nj`, 1-based.
    pub fn get(&self, n: usize, j: usize) -> f64 {
        self.entries[(n - 1) * self.m + (j - 1)]
    }

    pub fn diagonal(&self) -> f64 {
        self.entries[0]
    }

    /// `U * s`.
    pub fn apply(&self, s: &[f64]) -> Vec<f64> {
        (1..=self.m)
            .map(|n| (n..=self.m).map(|j| self.get(n, j) * s[j - 1]).sum())
            .collect()
    }

    /// Back-substitution solve of `U x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let active = vec![true; self.m];
        self.solve_active(&active, rhs)
            .map(|x| x.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
    }

    /// Solve restricted to the rows and columns flagged in `active`. Inactive
    /// entries of `rhs` are ignored and come back as `None`.
    pub fn solve_active(&self, active: &[bool], rhs: &[f64]) -> Result<Vec<Option<f64>>> {
        if active.len() != self.m || rhs.len() != self.m {
            return Err(invalid(format!(
                "dimension mismatch: matrix is {0}x{0}, got {1} flags and {2} values",
                self.m,
                active.len(),
                rhs.len()
            )));
        }
        let mut x = vec![None; self.m];
        for n in (1..=self.m).rev() {
            if !active[n - 1] {
                continue;
            }
            let diag = self.get(n, n);
            if diag == 0.0 {
                return Err(Error::NumericalFailure(format!("zero diagonal at row {n}")));
            }
            let mut acc = rhs[n - 1];
            for j in n + 1..=self.m {
                if let Some(v) = x[j - 1] {
                    acc -= self.get(n, j) * v;
                }
            }
            x[n - 1] = Some(acc / diag);
        }
        Ok(x)
    }

    /// Rows of the inverse of the active sub-matrix, `inv[j][n] = (U^-1)_jn`,
    /// with zeros in inactive positions.
    pub fn inverse_active(&self, active: &[bool]) -> Result<Vec<Vec<f64>>> {
        let mut inv = vec![vec![0.0; self.m]; self.m];
        for col in 0..self.m {
            if !active[col] {
                continue;
            }
            let mut e = vec![0.0; self.m];
            e[col] = 1.0;
            let x = self.solve_active(active, &e)?;
            for (row, v) in x.into_iter().enumerate() {
                inv[row][col] = v.unwrap_or(0.0);
            }
        }
        Ok(inv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cpmg(tau: f64) -> PulseSequence {
        PulseSequence::cpmg(tau).unwrap()
    }

    /// Romberg integration of the Fourier integral, segment by segment, from
    /// the modulation function itself.
    fn quadrature_transform(seq: &PulseSequence, omega: f64, cycles: usize) -> Complex64 {
        let mut edges = vec![0.0];
        for c in 0..cycles {
            for &t in seq.pulse_times() {
                edges.push(c as f64 * seq.cycle_length() + t);
            }
            edges.push((c + 1) as f64 * seq.cycle_length());
        }
        let mut total = Complex64::new(0.0, 0.0);
        for w in edges.windows(2) {
            let (a, b) = (w[0], w[1]);
            let sign = seq.modulation(0.5 * (a + b), cycles).unwrap();
            let f = |t: f64| Complex64::from_polar(sign, -omega * t);
            let mut prev = [Complex64::new(0.0, 0.0); 12];
            let mut row = [Complex64::new(0.0, 0.0); 12];
            for level in 0..12 {
                let n = 1usize << level;
                let h = (b - a) / n as f64;
                let mut s = 0.5 * (f(a) + f(b));
                for i in 1..n {
                    s += f(a + i as f64 * h);
                }
                row[0] = s * h;
                let mut pow = 1.0;
                for k in 1..=level {
                    pow *= 4.0;
                    row[k] = row[k - 1] + (row[k - 1] - prev[k - 1]) / (pow - 1.0);
                }
                prev = row;
            }
            total += row[11];
        }
        total * INV_SQRT_2PI
    }

    #[test]
    fn kernel_agrees_with_direct_form() {
        let seq = PulseSequence::udd(5, 3e-4).unwrap();
        let k = FilterKernel::new(&seq);
        for w in [0.0, 1.0, 3e3, 4.4e4, 1e6] {
            for m in [1, 2, 7] {
                let a = filter_sq_unchecked(&seq, w, m);
                assert!((k.sq(w, m) - a).abs() <= 1e-12 * a.max(1e-30));
            }
        }
    }

    #[test]
    fn filter_matches_quadrature_oracle() {
        let s = cpmg(1.0);
        let w0 = PI;
        let exact = quadrature_transform(&s, w0, 1).norm_sqr();
        let got = filter_function_sq(&s, w0, 1).unwrap();
        assert!(((got - exact) / exact).abs() < 1e-10, "{got} vs {exact}");

        let odd = PulseSequence::new("odd", 1.3, vec![0.2, 0.5, 1.1]).unwrap();
        for &(w, m) in &[(0.7, 3usize), (4.1, 2), (13.0, 5), (1e-3, 4)] {
            let exact = quadrature_transform(&odd, w, m).norm_sqr();
            let got = filter_function_sq(&odd, w, m).unwrap();
            assert!(((got - exact) / exact).abs() < 1e-9, "w={w} m={m}: {got} vs {exact}");
        }
    }

    #[test]
    fn balanced_cpmg_vanishes_at_zero() {
        let s = cpmg(1e-4);
        for m in [1, 7, 100] {
            assert!(filter_function_sq(&s, 0.0, m).unwrap() < 1e-36);
            assert!(filter_function_sq(&s, 1e-9, m).unwrap() < 1e-30);
        }
    }

    #[test]
    fn continuous_through_zero() {
        let s = PulseSequence::new("x", 1.0, vec![0.3]).unwrap();
        let at0 = filter_function_sq(&s, 0.0, 3).unwrap();
        let near = filter_function_sq(&s, 1e-7, 3).unwrap();
        // single-cycle mean 0.3 - 0.7 = -0.4 and cycles alternate sign: -0.4, 0.4, -0.4
        assert!((at0 - 0.16 / (2.0 * PI)).abs() < 1e-15);
        assert!((near - at0).abs() < 1e-12);
    }

    #[test]
    fn cpmg_harmonic_ratios() {
        let hw = harmonic_weights(&cpmg(1e-4), 99).unwrap();
        assert!((hw.base_frequency() - PI / 1e-4).abs() < 1e-6);
        let a1 = hw.get(1);
        assert!((a1 - SQRT_2PI * 4.0 / (PI * PI)).abs() < 1e-14);
        for k in 2..=99 {
            let r = hw.get(k) / a1;
            if k % 2 == 0 {
                assert!(r < 1e-28, "k={k} r={r}");
            } else {
                assert!((r - 1.0 / (k * k) as f64).abs() < 1e-12, "k={k}");
            }
        }
    }

    #[test]
    fn fold_weights_match_square_wave_series() {
        let s = cpmg(1.0);
        let hw = harmonic_weights(&s, 1).unwrap();
        assert!((hw.fold_weight(1) - 8.0 / (PI * PI)).abs() < 1e-14);
        // brute-force Fourier coefficient of the sampled square wave
        let n = 200_000;
        let (mut re, mut im) = (0.0, 0.0);
        for i in 0..n {
            let t = (i as f64 + 0.5) * 2.0 / n as f64;
            let f = s.modulation(t, 1).unwrap();
            re += f * (PI * t).cos();
            im -= f * (PI * t).sin();
        }
        let c1 = (re * re + im * im) / (n as f64 * n as f64);
        assert!((2.0 * c1 - hw.fold_weight(1)).abs() < 1e-8);

        let k_max = 2001;
        let total: f64 = (1..=k_max).map(|k| hw.fold_weight(k)).sum();
        assert!(total <= 1.0 + 1e-12);
        assert!(1.0 - total < 1.0 / k_max as f64);
    }

    #[test]
    fn parseval_for_irregular_sequence() {
        for n in [3, 4] {
        let s = PulseSequence::udd(n, 1.0).unwrap();
        let hw = harmonic_weights(&s, 1).unwrap();
        // mean of f over the period, squared, is the c_0 share
        let mean = s.modulation_integral() / s.cycle_length();
        let k_max = 20_000;
        let total: f64 = (1..=k_max).map(|k| hw.fold_weight(k)).sum();
        let expect = if s.pulse_count() % 2 == 1 { 1.0 } else { 1.0 - mean * mean };
        // |c_k| <= sum|jumps| / (2 pi k) bounds the truncated remainder
        let jumps = 2.0 * s.period_jumps().len() as f64;
        let bound = 2.0 * (jumps / (2.0 * PI)).powi(2) / k_max as f64;
        assert!(total <= expect + 1e-12);
        assert!(expect - total < bound, "{total} vs {expect}");
        }
    }

    #[test]
    fn kdd_weights_equal_cpmg() {
        let tau = 3e-5;
        let k = harmonic_weights(&PulseSequence::kdd(tau).unwrap(), 9).unwrap();
        let c = harmonic_weights(&cpmg(tau), 9).unwrap();
        assert!((k.base_frequency() - c.base_frequency()).abs() < 1e-6);
        for i in 1..=9 {
            assert!((k.get(i) - c.get(i)).abs() < 1e-13);
        }
    }

    #[test]
    fn scale_covariance() {
        let s = PulseSequence::new("x", 1.0, vec![0.1, 0.45, 0.8, 0.9]).unwrap();
        let a = harmonic_weights(&s, 12).unwrap();
        let b = harmonic_weights(&s.scaled(3.7).unwrap(), 12).unwrap();
        assert!((a.base_frequency() / b.base_frequency() - 3.7).abs() < 1e-12);
        for k in 1..=12 {
            assert!((a.relative(k) - b.relative(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_comb_convergence() {
        let tau = 1.0;
        let s = cpmg(tau);
        let hw = harmonic_weights(&s, 5).unwrap();
        let w0 = hw.base_frequency();
        let tc = s.cycle_length();
        let mut last_off = f64::INFINITY;
        for m in [1usize, 10, 100, 1000] {
            let t = m as f64 * tc;
            // lobe-integrated weight around each odd harmonic -> |c_k|^2
            for k in [1usize, 3] {
                let a = (k as f64 - 0.5) * w0;
                let b = (k as f64 + 0.5) * w0;
                let panels = 64 * m;
                let h = (b - a) / panels as f64;
                let mut v = 0.0;
                for p in 0..panels {
                    let lo = a + p as f64 * h;
                    v += crate::quad::gl16()
                        .integrate(lo, lo + h, |w| filter_function_sq(&s, w, m).unwrap());
                }
                let weight = v / t;
                let target = hw.get(k) / SQRT_2PI;
                if m >= 100 {
                    assert!((weight / target - 1.0).abs() < 0.02, "m={m} k={k}");
                }
            }
            let w = 1.37 * w0;
            let off = filter_function_sq(&s, w, m).unwrap() / t;
            let envelope = cycle_transform(&s, w).norm_sqr()
                / ((0.5 * w * tc).sin().powi(2) * t);
            assert!(off <= envelope * (1.0 + 1e-12));
            last_off = envelope;
        }
        assert!(last_off < 1e-3);
    }

    #[test]
    fn lambda_examples() {
        let hw = harmonic_weights(&cpmg(1.0), 10).unwrap();
        let l = lambda_alpha(&hw, 3.59).unwrap();
        // brute-force odd-k sum
        let brute: f64 = (0..200_000)
            .map(|i| (2 * i + 1) as f64)
            .map(|k| k.powf(-2.0 - 3.59))
            .sum();
        assert!((l - brute).abs() < 1e-9);
        assert!((1.0015..=1.0030).contains(&l), "{l}");
        assert!((l - 1.0 - 2e-3).abs() < 5e-4);
        assert!((lambda_alpha(&hw, 60.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((lambda_alpha(&hw, f64::INFINITY).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(lambda_alpha(&hw, 1.0), Err(Error::Divergence(_))));
        assert!(lambda_alpha(&hw, 0.5).is_err());
    }

    #[test]
    fn harmonic_weights_rejects_zero_k() {
        assert!(harmonic_weights(&cpmg(1.0), 0).is_err());
    }

    #[test]
    fn sensitivity_pattern_m4() {
        let hw = harmonic_weights(&cpmg(1.0), 10).unwrap();
        let u = sensitivity_matrix(&hw, 4).unwrap();
        let a1 = hw.a1_sq();
        let mut nonzero = vec![];
        for n in 1..=4 {
            for j in 1..=4 {
                // brute force: sum over k of A_k^2 delta_{j, nk}
                let expect: f64 = (1..=4).filter(|k| n * k == j).map(|k| hw.get(k)).sum();
                assert!((u.get(n, j) - expect).abs() < 1e-15);
                if u.get(n, j).abs() > 1e-20 {
                    nonzero.push((n, j));
                }
            }
        }
        assert_eq!(nonzero, vec![(1, 1), (1, 3), (2, 2), (3, 3), (4, 4)]);
        assert!((u.get(1, 3) - a1 / 9.0).abs() < 1e-15);

        let one = sensitivity_matrix(&hw, 1).unwrap();
        assert_eq!(one.get(1, 1), a1);
    }

    #[test]
    fn back_substitution_roundtrip() {
        let hw = harmonic_weights(&cpmg(1.0), 10).unwrap();
        for m in [1, 2, 7, 40, 97] {
            let u = sensitivity_matrix(&hw, m).unwrap();
            let r: Vec<f64> = (1..=m).map(|n| 1.0 + (n as f64).sin().abs() * 3.0).collect();
            let s = u.solve(&r).unwrap();
            let back = u.apply(&s);
            for (a, b) in back.iter().zip(&r) {
                assert!(((a - b) / b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_is_inverse() {
        let hw = harmonic_weights(&cpmg(1.0), 10).unwrap();
        let u = sensitivity_matrix(&hw, 12).unwrap();
        let active = vec![true; 12];
        let inv = u.inverse_active(&active).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                let v: f64 = (0..12).map(|k| inv[i][k] * u.get(k + 1, j + 1)).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-12);
            }
        }
    }
}
