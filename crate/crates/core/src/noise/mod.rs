//! Spectral-density models of the dephasing field and Gaussian noise synthesis.
//!
//! `S(w)` is the Fourier transform of the coupling-weighted autocorrelation
//! `G(tau) = b^2 <E(t) E(t + tau)>` under the symmetric convention
//! `S(w) = (2 pi)^(-1/2) int G(tau) exp(-i w tau) dtau`, so for example an
//! exponential correlation `b^2 exp(-|tau| / tau_B)` has
//! `S(w) = b^2 sqrt(2/pi) tau_B / (1 + w^2 tau_B^2)`. Units: rad^2/s^2 per rad/s.

mod synth;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quad::gl16;

pub use synth::{periodogram, synthesize, NoiseTrajectory, Synthesizer};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Extrapolation above the last tabulated frequency.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum TailRule {
    /// Queries above the grid are an error.
    #[default]
    None,
    Zero,
    Constant,
    /// `S(w) = S_last * (w_last / w)^exponent`.
    PowerLaw { exponent: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralModel {
    /// Flat `S(w) = s0`.
    White { s0: f64 },
    /// Exponential correlation `b2 * exp(-|tau| / tau_b)`.
    Lorentzian { b2: f64, tau_b: f64 },
    /// Gaussian correlation `b2 * exp(-tau^2 / (2 tau_b^2))`.
    Gaussian { b2: f64, tau_b: f64 },
    /// `s_ref * ((omega_ref^2 + cutoff^2) / (w^2 + cutoff^2))^(exponent / 2)`:
    /// a power law above `cutoff`, flat below it.
    PowerLaw {
        s_ref: f64,
        omega_ref: f64,
        exponent: f64,
        cutoff: f64,
    },
    /// `base` plus a Lorentzian line translated to `+-omega`, i.e. the
    /// spectrum of `b2 * exp(-width |tau|) * cos(omega tau)`.
    Modulated {
        base: Box<SpectralModel>,
        b2: f64,
        omega: f64,
        width: f64,
    },
    /// Interpolated table on a strictly increasing grid of `w >= 0`. Log-linear
    /// between points, flat below the first point, `tail` above the last.
    Tabulated {
        omega: Vec<f64>,
        s: Vec<f64>,
        #[serde(default)]
        tail: TailRule,
    },
}

/// Region where a model varies quickly: around `center`, on scale `width`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub center: f64,
    pub width: f64,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be non-negative and finite, got {v}")))
    }
}

impl SpectralModel {
    pub fn white(s0: f64) -> Result<Self> {
        let m = SpectralModel::White { s0 };
        m.validate()?;
        Ok(m)
    }

    pub fn lorentzian(b2: f64, tau_b: f64) -> Result<Self> {
        let m = SpectralModel::Lorentzian { b2, tau_b };
        m.validate()?;
        Ok(m)
    }

    pub fn gaussian(b2: f64, tau_b: f64) -> Result<Self> {
        let m = SpectralModel::Gaussian { b2, tau_b };
        m.validate()?;
        Ok(m)
    }

    pub fn power_law(s_ref: f64, omega_ref: f64, exponent: f64, cutoff: f64) -> Result<Self> {
        let m = SpectralModel::PowerLaw {
            s_ref,
            omega_ref,
            exponent,
            cutoff,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn modulated(base: SpectralModel, b2: f64, omega: f64, width: f64) -> Result<Self> {
        let m = SpectralModel::Modulated {
            base: Box::new(base),
            b2,
            omega,
            width,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn tabulated(omega: Vec<f64>, s: Vec<f64>, tail: TailRule) -> Result<Self> {
        let m = SpectralModel::Tabulated { omega, s, tail };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SpectralModel::White { s0 } => non_negative("s0", *s0),
            SpectralModel::Lorentzian { b2, tau_b } | SpectralModel::Gaussian { b2, tau_b } => {
                non_negative("b2", *b2)?;
                positive("tau_b", *tau_b)
            }
            SpectralModel::PowerLaw {
                s_ref,
                omega_ref,
                exponent,
                cutoff,
            } => {
                non_negative("s_ref", *s_ref)?;
                positive("omega_ref", *omega_ref)?;
                positive("exponent", *exponent)?;
                positive("cutoff", *cutoff)
            }
            SpectralModel::Modulated {
                base,
                b2,
                omega,
                width,
            } => {
                base.validate()?;
                non_negative("b2", *b2)?;
                non_negative("omega", *omega)?;
                positive("width", *width)
            }
            SpectralModel::Tabulated { omega, s, tail } => {
                if omega.len() != s.len() || omega.len() < 2 {
                    return Err(invalid(format!(
                        "tabulated model needs matching omega/S columns with at least 2 rows, got {} and {}",
                        omega.len(),
                        s.len()
                    )));
                }
                non_negative("omega[0]", omega[0])?;
                for (i, w) in omega.windows(2).enumerate() {
                    if !(w[1] > w[0]) || !w[1].is_finite() {
                        return Err(invalid(format!(
                            "tabulated omega grid not strictly increasing at row {}",
                            i + 1
                        )));
                    }
                }
                for (i, &v) in s.iter().enumerate() {
                    non_negative(&format!("S[{i}]"), v)?;
                }
                if let TailRule::PowerLaw { exponent } = tail {
                    positive("tail exponent", *exponent)?;
                }
                Ok(())
            }
        }
    }

    /// `S(omega)`; even in omega.
    pub fn psd(&self, omega: f64) -> Result<f64> {
        let v = self.eval(omega);
        if v.is_nan() {
            Err(Error::OutOfDomain(format!(
                "omega = {omega} rad/s is beyond the tabulated grid and no tail rule is set"
            )))
        } else {
            Ok(v)
        }
    }

    /// Like [`psd`](Self::psd) but NaN where undefined.
    pub(crate) fn eval(&self, omega: f64) -> f64 {
        let w = omega.abs();
        match self {
            SpectralModel::White { s0 } => *s0,
            SpectralModel::Lorentzian { b2, tau_b } => {
                let x = w * tau_b;
                b2 * SQRT_2_OVER_PI * tau_b / (1.0 + x * x)
            }
            SpectralModel::Gaussian { b2, tau_b } => {
                let x = w * tau_b;
                b2 * tau_b * (-0.5 * x * x).exp()
            }
            SpectralModel::PowerLaw {
                s_ref,
                omega_ref,
                exponent,
                cutoff,
            } => {
                let c2 = cutoff * cutoff;
                s_ref * ((omega_ref * omega_ref + c2) / (w * w + c2)).powf(0.5 * exponent)
            }
            SpectralModel::Modulated {
                base,
                b2,
                omega: center,
                width,
            } => {
                let tp = 1.0 / width;
                let l = |d: f64| 1.0 / (1.0 + d * d * tp * tp);
                base.eval(w) + 0.5 * b2 * SQRT_2_OVER_PI * tp * (l(w - center) + l(w + center))
            }
            SpectralModel::Tabulated { omega, s, tail } => tabulated_eval(omega, s, *tail, w),
        }
    }

    /// Coupling-weighted autocorrelation `G(lag) = b^2 g(lag)`; `G(0)` is the
    /// total noise power. White noise returns infinity at zero lag.
    pub fn autocorrelation(&self, lag: f64) -> Result<f64> {
        let t = lag.abs();
        match self {
            SpectralModel::White { s0 } => Ok(if t == 0.0 && *s0 > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }),
            SpectralModel::Lorentzian { b2, tau_b } => Ok(b2 * (-t / tau_b).exp()),
            SpectralModel::Gaussian { b2, tau_b } => {
                let x = t / tau_b;
                Ok(b2 * (-0.5 * x * x).exp())
            }
            SpectralModel::Modulated {
                base,
                b2,
                omega,
                width,
            } => Ok(base.autocorrelation(t)? + b2 * (-width * t).exp() * (omega * t).cos()),
            SpectralModel::PowerLaw { .. } | SpectralModel::Tabulated { .. } => {
                self.autocorrelation_numeric(t)
            }
        }
    }

    /// `G(lag) = sqrt(2/pi) int_0^inf S(w) cos(w lag) dw` by quadrature.
    pub fn autocorrelation_numeric(&self, lag: f64) -> Result<f64> {
        let t = lag.abs();
        if let SpectralModel::White { .. } = self {
            return self.autocorrelation(t);
        }
        if let SpectralModel::PowerLaw { exponent, .. } = self {
            if *exponent <= 1.0 {
                return Err(Error::Divergence(format!(
                    "power law with exponent {exponent} <= 1 has infinite total power"
                )));
            }
        }
        if let SpectralModel::Tabulated { tail, .. } = self {
            match tail {
                TailRule::None | TailRule::Constant => {
                    return Err(Error::OutOfDomain(
                        "autocorrelation of a tabulated model needs a decaying tail rule".into(),
                    ))
                }
                TailRule::PowerLaw { exponent } if *exponent <= 1.0 => {
                    return Err(Error::Divergence("tabulated tail exponent must exceed 1".into()))
                }
                _ => {}
            }
        }

        let (scale, reach) = self.scales();
        let mut panel = scale / 4.0;
        if t > 0.0 {
            panel = panel.min(PI / t);
        }
        let f = |w: f64| self.eval(w) * (w * t).cos();
        let mut lo = 0.0;
        let mut acc = 0.0;
        let mut count = 0usize;
        loop {
            let step = if lo > reach {
                // smooth tail: widen up to one cosine half-period
                let cap = if t > 0.0 { PI / t } else { f64::INFINITY };
                panel.max(cap.min(0.25 * lo))
            } else {
                panel
            };
            let mut hi = lo + step;
            for b in self.breakpoints() {
                if b > lo && b < hi {
                    hi = b;
                }
            }
            acc += gl16().integrate(lo, hi, f);
            lo = hi;
            count += 1;
            if lo > reach {
                let remaining = tail_integral(self, lo);
                if t == 0.0 {
                    acc += remaining;
                    break;
                }
                // oscillatory remainder is bounded by S(w_hi) / lag
                if self.eval(lo) / t < 1e-10 * acc.abs().max(f64::MIN_POSITIVE)
                    || remaining < 1e-12 * acc.abs()
                {
                    break;
                }
            }
            if count > 20_000_000 {
                return Err(Error::NumericalFailure(format!(
                    "autocorrelation quadrature at lag {t} did not converge (reached {lo:e} rad/s)"
                )));
            }
        }
        Ok(SQRT_2_OVER_PI * acc)
    }

    /// Narrow features a quadrature over this model must resolve.
    pub fn features(&self) -> Vec<Feature> {
        match self {
            SpectralModel::White { .. } => vec![],
            SpectralModel::Lorentzian { tau_b, .. } | SpectralModel::Gaussian { tau_b, .. } => {
                vec![Feature {
                    center: 0.0,
                    width: 1.0 / tau_b,
                }]
            }
            SpectralModel::PowerLaw { cutoff, .. } => vec![Feature {
                center: 0.0,
                width: *cutoff,
            }],
            SpectralModel::Modulated {
                base, omega, width, ..
            } => {
                let mut f = base.features();
                f.push(Feature {
                    center: *omega,
                    width: *width,
                });
                f
            }
            // resolved through its breakpoints instead
            SpectralModel::Tabulated { .. } => vec![],
        }
    }

    /// Points where the model is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            SpectralModel::Tabulated { omega, .. } => omega.clone(),
            SpectralModel::Modulated { base, .. } => base.breakpoints(),
            _ => vec![],
        }
    }

    /// Characteristic frequency of the model: the highest half-power point or
    /// line edge. `None` for white noise, which has no band edge.
    pub fn bandwidth(&self) -> Option<f64> {
        match self {
            SpectralModel::White { .. } => None,
            SpectralModel::Lorentzian { tau_b, .. } => Some(1.0 / tau_b),
            // exp(-x^2/2) = 1/2
            SpectralModel::Gaussian { tau_b, .. } => Some((2.0 * 2f64.ln()).sqrt() / tau_b),
            SpectralModel::PowerLaw {
                exponent, cutoff, ..
            } => Some(cutoff * (2f64.powf(2.0 / exponent) - 1.0).sqrt()),
            SpectralModel::Modulated {
                base, omega, width, ..
            } => Some(base.bandwidth().unwrap_or(0.0).max(omega + width)),
            SpectralModel::Tabulated { omega, s, .. } => {
                let peak = s.iter().cloned().fold(0.0, f64::max);
                omega
                    .iter()
                    .zip(s)
                    .filter(|(_, &v)| v >= 0.5 * peak)
                    .map(|(&w, _)| w)
                    .fold(None, |acc: Option<f64>, w| Some(acc.map_or(w, |a| a.max(w))))
            }
        }
    }

    /// Correlation time used for fit windows: the slowest decay time of the
    /// autocorrelation, if the model has one.
    pub fn correlation_time(&self) -> Option<f64> {
        match self {
            SpectralModel::White { .. } => None,
            SpectralModel::Lorentzian { tau_b, .. } | SpectralModel::Gaussian { tau_b, .. } => {
                Some(*tau_b)
            }
            SpectralModel::PowerLaw { cutoff, .. } => Some(1.0 / cutoff),
            SpectralModel::Modulated { base, width, .. } => {
                Some(base.correlation_time().unwrap_or(0.0).max(1.0 / width))
            }
            SpectralModel::Tabulated { .. } => self.bandwidth().map(|b| 1.0 / b.max(f64::MIN_POSITIVE)),
        }
    }

    /// Whether the model is defined for every frequency.
    pub fn is_total(&self) -> bool {
        match self {
            SpectralModel::Tabulated { tail, .. } => *tail != TailRule::None,
            SpectralModel::Modulated { base, .. } => base.is_total(),
            _ => true,
        }
    }

    /// Smallest feature width and the frequency beyond which the model is a
    /// smooth monotone tail.
    pub(crate) fn scales(&self) -> (f64, f64) {
        let feats = self.features();
        let bps = self.breakpoints();
        let step = bps.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let width = feats
            .iter()
            .map(|f| f.width)
            .fold(step, f64::min);
        let reach = feats
            .iter()
            .map(|f| f.center + 50.0 * f.width)
            .fold(0.0, f64::max)
            .max(bps.last().copied().unwrap_or(0.0));
        let width = if width.is_finite() { width } else { 1.0 };
        (width, reach)
    }
}

/// `int_lo^inf S(w) dw` via `w = lo / u`.
pub(crate) fn tail_integral(model: &SpectralModel, lo: f64) -> f64 {
    if lo <= 0.0 {
        return f64::INFINITY;
    }
    // split [0, 1] geometrically toward u = 0
    let mut acc = 0.0;
    let mut b = 1.0;
    for _ in 0..60 {
        let a = 0.5 * b;
        acc += gl16().integrate(a, b, |u| model.eval(lo / u) * lo / (u * u));
        b = a;
    }
    acc
}

fn tabulated_eval(omega: &[f64], s: &[f64], tail: TailRule, w: f64) -> f64 {
    let last = omega.len() - 1;
    if w <= omega[0] {
        return s[0];
    }
    if w > omega[last] {
        return match tail {
            TailRule::None => f64::NAN,
            TailRule::Zero => 0.0,
            TailRule::Constant => s[last],
            TailRule::PowerLaw { exponent } => s[last] * (omega[last] / w).powf(exponent),
        };
    }
    let i = omega.partition_point(|&x| x < w) - 1;
    let (w0, w1) = (omega[i], omega[i + 1]);
    let (s0, s1) = (s[i], s[i + 1]);
    let x = (w - w0) / (w1 - w0);
    if s0 > 0.0 && s1 > 0.0 {
        (s0.ln() + x * (s1.ln() - s0.ln())).exp()
    } else {
        s0 + x * (s1 - s0)
    }
}
