//! From decay curves to rates, and from rates back to the spectral density.
//!
//! Measurement `n` of a suite uses pulse spacing `tau_max / n` and probes the
//! spectrum at the harmonics `n k omega_min`, so the rates are
//! `R_n = sum_j U_nj S_j` plus whatever lies beyond `m omega_min`. The naive
//! inversion ignores that remainder; the corrected one models it with a
//! power law fitted to the high-`n` rates.

mod fit;
mod invert;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::filter::HarmonicWeights;
use crate::noise::SpectralModel;

pub use fit::{
    fit_rate, fit_tail, rates_from_curves, subtract_baseline, Baseline, RateFit, TailFit,
    TAIL_R2_THRESHOLD,
};
pub use invert::{first_harmonic, invert_corrected, invert_corrected_fitted, invert_naive};

/// One decay rate with its standard error, in 1/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    pub sigma: f64,
    /// Fit quality of the decay curve the rate came from, if known.
    pub r_squared: Option<f64>,
}

/// Rates `R_1..R_m` of a suite; missing entries are holes.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSet {
    tau_max: f64,
    rates: Vec<Option<Rate>>,
    pub notes: Vec<String>,
}

impl RateSet {
    pub fn new(tau_max: f64, rates: Vec<Option<Rate>>) -> Result<Self> {
        if !(tau_max > 0.0 && tau_max.is_finite()) {
            return Err(invalid(format!("tau_max must be positive, got {tau_max}")));
        }
        if rates.is_empty() {
            return Err(invalid("a rate set needs at least one entry"));
        }
        for (i, r) in rates.iter().enumerate() {
            if let Some(r) = r {
                if !(r.value > 0.0 && r.value.is_finite()) {
                    return Err(invalid(format!("R_{} = {} must be positive", i + 1, r.value)));
                }
                if !(r.sigma >= 0.0 && r.sigma.is_finite()) {
                    return Err(invalid(format!(
                        "sigma of R_{} = {} must be non-negative",
                        i + 1,
                        r.sigma
                    )));
                }
            }
        }
        Ok(RateSet {
            tau_max,
            rates,
            notes: Vec::new(),
        })
    }

    /// Complete set from values and uncertainties.
    pub fn from_values(tau_max: f64, values: &[f64], sigmas: &[f64]) -> Result<Self> {
        if values.len() != sigmas.len() {
            return Err(invalid("rates and uncertainties differ in length"));
        }
        RateSet::new(
            tau_max,
            values
                .iter()
                .zip(sigmas)
                .map(|(&value, &sigma)| {
                    Some(Rate {
                        value,
                        sigma,
                        r_squared: None,
                    })
                })
                .collect(),
        )
    }

    pub fn m(&self) -> usize {
        self.rates.len()
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    pub fn omega_min(&self) -> f64 {
        PI / self.tau_max
    }

    /// Pulse spacing of measurement `n`.
    pub fn tau(&self, n: usize) -> f64 {
        self.tau_max / n as f64
    }

    /// Rate `n`, 1-based.
    pub fn get(&self, n: usize) -> Option<&Rate> {
        self.rates.get(n - 1).and_then(Option::as_ref)
    }

    pub fn rates(&self) -> &[Option<Rate>] {
        &self.rates
    }

    pub fn holes(&self) -> Vec<usize> {
        (1..=self.m()).filter(|&n| self.get(n).is_none()).collect()
    }

    pub(crate) fn active(&self) -> Vec<bool> {
        self.rates.iter().map(Option::is_some).collect()
    }

    pub(crate) fn values_or_zero(&self) -> Vec<f64> {
        self.rates
            .iter()
            .map(|r| r.map_or(0.0, |r| r.value))
            .collect()
    }

    /// Copy with every uncertainty multiplied by `factor`.
    pub fn scale_sigma(&self, factor: f64) -> RateSet {
        let mut out = self.clone();
        for r in out.rates.iter_mut().flatten() {
            r.sigma *= factor;
        }
        out
    }
}

/// Rates in the many-cycle limit, `R_n = sum_{k <= k_max} A_k^2 S(n k omega_min)`,
/// with `omega_min` the base frequency of `weights`. Uncertainties are zero.
pub fn forward_rates(
    model: &SpectralModel,
    weights: &HarmonicWeights,
    m: usize,
    k_max: usize,
) -> Result<RateSet> {
    if m == 0 || k_max == 0 {
        return Err(invalid("forward rates need m >= 1 and k_max >= 1"));
    }
    let w0 = weights.base_frequency();
    let a: Vec<f64> = (1..=k_max).map(|k| weights.absolute(k)).collect();
    let mut values = Vec::with_capacity(m);
    for n in 1..=m {
        let mut r = 0.0;
        for (k, &ak) in a.iter().enumerate() {
            if ak > 0.0 {
                r += ak * model.psd((n * (k + 1)) as f64 * w0)?;
            }
        }
        values.push(r);
    }
    RateSet::from_values(PI / w0, &values, &vec![0.0; m])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Naive,
    FirstHarmonic,
    Corrected,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::FirstHarmonic => "first-harmonic",
            Method::Corrected => "corrected",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Method::Naive),
            "first-harmonic" | "first_harmonic" => Ok(Method::FirstHarmonic),
            "corrected" => Ok(Method::Corrected),
            _ => Err(invalid(format!(
                "unknown method '{s}' (expected naive, first-harmonic or corrected)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralValue {
    pub value: f64,
    pub sigma: f64,
}

/// `S(j omega_min)` for `j = 1..m`; entries without a rate are holes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEstimate {
    pub omega_min: f64,
    pub method: Method,
    pub values: Vec<Option<SpectralValue>>,
    pub tail: Option<TailFit>,
    pub notes: Vec<String>,
}

impl SpectrumEstimate {
    pub fn m(&self) -> usize {
        self.values.len()
    }

    pub fn omega(&self, j: usize) -> f64 {
        j as f64 * self.omega_min
    }

    /// Value at `j`, 1-based.
    pub fn get(&self, j: usize) -> Option<&SpectralValue> {
        self.values.get(j - 1).and_then(Option::as_ref)
    }
}
