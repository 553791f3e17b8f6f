use super::{fit_tail, Method, RateSet, SpectralValue, SpectrumEstimate, TailFit};
use crate::error::{Error, Result};
use crate::filter::{HarmonicWeights, SensitivityMatrix};

fn check_grid(rates: &RateSet, u: &SensitivityMatrix) -> Result<()> {
    if rates.m() != u.dim() {
        return Err(Error::GridMismatch(format!(
            "{} rates but the sensitivity matrix is {}x{}",
            rates.m(),
            u.dim(),
            u.dim()
        )));
    }
    let (a, b) = (rates.omega_min(), u.omega_min());
    if (a - b).abs() > 1e-9 * a.abs().max(b.abs()) {
        return Err(Error::GridMismatch(format!(
            "rates probe omega_min = {a:e} rad/s but the matrix was built for {b:e} rad/s"
        )));
    }
    Ok(())
}

fn hole_notes(rates: &RateSet) -> Vec<String> {
    let mut notes = rates.notes.clone();
    let holes = rates.holes();
    if !holes.is_empty() {
        notes.push(format!(
            "rates missing at n = {holes:?}; the matching rows and columns were dropped"
        ));
    }
    notes
}

/// Solves `U S = R` on the active rows, propagating `sigma` through `U^-1`.
fn solve_with_sigma(rates: &RateSet, u: &SensitivityMatrix, rhs: &[f64]) -> Result<Vec<Option<SpectralValue>>> {
    let active = rates.active();
    let values = u.solve_active(&active, rhs)?;
    let inv = u.inverse_active(&active)?;
    Ok(values
        .into_iter()
        .enumerate()
        .map(|(j, v)| {
            v.map(|value| {
                let var: f64 = (1..=rates.m())
                    .filter_map(|n| rates.get(n).map(|r| (inv[j][n - 1] * r.sigma).powi(2)))
                    .sum();
                SpectralValue {
                    value,
                    sigma: var.sqrt(),
                }
            })
        })
        .collect())
}

/// Back-substitution of `U S = R`, ignoring the spectrum above `m omega_min`.
pub fn invert_naive(rates: &RateSet, u: &SensitivityMatrix) -> Result<SpectrumEstimate> {
    check_grid(rates, u)?;
    let values = solve_with_sigma(rates, u, &rates.values_or_zero())?;
    Ok(SpectrumEstimate {
        omega_min: u.omega_min(),
        method: Method::Naive,
        values,
        tail: None,
        notes: hole_notes(rates),
    })
}

/// `S(n omega_min) = R_n / A_1^2`, keeping only the first harmonic.
pub fn first_harmonic(rates: &RateSet, u: &SensitivityMatrix) -> Result<SpectrumEstimate> {
    check_grid(rates, u)?;
    let a1 = u.diagonal();
    let values = rates
        .rates()
        .iter()
        .map(|r| {
            r.map(|r| SpectralValue {
                value: r.value / a1,
                sigma: r.sigma / a1,
            })
        })
        .collect();
    Ok(SpectrumEstimate {
        omega_min: u.omega_min(),
        method: Method::FirstHarmonic,
        values,
        tail: None,
        notes: hole_notes(rates),
    })
}

/// Right-hand side with the modelled contribution of every frequency outside
/// the active grid removed. Dropped columns are also covered by the tail model.
fn corrected_rhs(rates: &RateSet, u: &SensitivityMatrix, tail: &TailFit) -> Vec<f64> {
    let m = rates.m();
    let active = rates.active();
    (1..=m)
        .map(|n| {
            let Some(r) = rates.get(n) else { return 0.0 };
            let inside: f64 = (n..=m)
                .filter(|&j| active[j - 1])
                .map(|j| u.get(n, j) * tail.spectrum(j))
                .sum();
            r.value - (tail.rate(n) - inside)
        })
        .collect()
}

/// Inversion with a given tail model. Uncertainties propagate the rate
/// errors only; the tail parameters are treated as exact.
pub fn invert_corrected(rates: &RateSet, u: &SensitivityMatrix, tail: &TailFit) -> Result<SpectrumEstimate> {
    check_grid(rates, u)?;
    let rhs = corrected_rhs(rates, u, tail);
    let values = solve_with_sigma(rates, u, &rhs)?;
    Ok(SpectrumEstimate {
        omega_min: u.omega_min(),
        method: Method::Corrected,
        values,
        tail: Some(tail.clone()),
        notes: hole_notes(rates),
    })
}

fn corrected_values(
    rates: &RateSet,
    u: &SensitivityMatrix,
    weights: &HarmonicWeights,
    window: (usize, usize),
) -> Result<(Vec<Option<f64>>, TailFit)> {
    let tail = fit_tail(rates, weights, window)?;
    let rhs = corrected_rhs(rates, u, &tail);
    Ok((u.solve_active(&rates.active(), &rhs)?, tail))
}

/// Fits the tail on `window` from the same rates and inverts. The
/// uncertainties come from the finite-difference Jacobian of the whole
/// estimator, tail fit included.
pub fn invert_corrected_fitted(
    rates: &RateSet,
    u: &SensitivityMatrix,
    weights: &HarmonicWeights,
    window: (usize, usize),
) -> Result<SpectrumEstimate> {
    check_grid(rates, u)?;
    let (base, tail) = corrected_values(rates, u, weights, window)?;
    let m = rates.m();
    let mut var = vec![0.0; m];
    for n in 1..=m {
        let Some(r) = rates.get(n) else { continue };
        if r.sigma == 0.0 {
            continue;
        }
        let h = 1e-6 * r.value;
        let mut column = vec![None; 2];
        for (slot, sign) in [(0, 1.0), (1, -1.0)] {
            let mut bumped: Vec<_> = rates.rates().to_vec();
            bumped[n - 1].as_mut().unwrap().value = r.value + sign * h;
            let set = RateSet::new(rates.tau_max(), bumped)?;
            column[slot] = Some(corrected_values(&set, u, weights, window)?.0);
        }
        let (plus, minus) = (column[0].take().unwrap(), column[1].take().unwrap());
        for j in 0..m {
            if let (Some(p), Some(q)) = (plus[j], minus[j]) {
                var[j] += ((p - q) / (2.0 * h) * r.sigma).powi(2);
            }
        }
    }
    let values = base
        .into_iter()
        .zip(var)
        .map(|(v, var)| {
            v.map(|value| SpectralValue {
                value,
                sigma: var.sqrt(),
            })
        })
        .collect();
    Ok(SpectrumEstimate {
        omega_min: u.omega_min(),
        method: Method::Corrected,
        values,
        tail: Some(tail),
        notes: hole_notes(rates),
    })
}
