use serde::Serialize;

use super::{Rate, RateSet};
use crate::error::{invalid, Error, Result};
use crate::filter::{lambda_alpha, HarmonicWeights};
use crate::simulate::{DecayCurve, Engine};

/// Minimum coefficient of determination for the log-log tail fit.
pub const TAIL_R2_THRESHOLD: f64 = 0.98;

/// Points below this coherence carry too little signal to fit.
const SIGNAL_FLOOR: f64 = 0.05;

/// Straight-line weighted least squares `y = a + b x`.
struct Line {
    a: f64,
    b: f64,
    var_b: f64,
    r_squared: f64,
    chi2: f64,
}

fn fit_line(x: &[f64], y: &[f64], w: &[f64]) -> Line {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * dy;
        syy += w[i] * dy * dy;
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let chi2: f64 = (0..x.len())
        .map(|i| w[i] * (y[i] - a - b * x[i]).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - chi2 / syy } else { 1.0 };
    Line {
        a,
        b,
        var_b: 1.0 / sxx,
        r_squared,
        chi2,
    }
}

/// Rate fit for Monte Carlo curves, whose points all average the same
/// trajectories. With independent phase increments the errors of
/// `ln(signal)` form a random walk, `Cov(y_i, y_j) = v_min(i,j)`, so the fit
/// runs on increments with variances `v_k - v_(k-1)`. The variances follow
/// `(1 - s^2)^2 / (2 N s^2)` on the first-pass line, with `1/N` from the
/// quoted standard errors.
fn shared_trials_fit(t: &[f64], y: &[f64], s: &[f64], sigma: &[f64], first: &Line) -> (f64, f64) {
    let inv_n = s
        .iter()
        .zip(sigma)
        .map(|(s, e)| 2.0 * e * e / (1.0 - s * s).powi(2))
        .sum::<f64>()
        / s.len() as f64;
    let v: Vec<f64> = t
        .iter()
        .map(|&t| {
            let m = (first.a + first.b * t).exp().min(1.0 - 1e-9);
            inv_n * (1.0 - m * m).powi(2) / (2.0 * m * m)
        })
        .collect();
    let (mut sxx, mut sxy) = (0.0, 0.0);
    let mut inc = Vec::with_capacity(t.len() - 1);
    for k in 1..t.len() {
        let d = v[k] - v[k - 1];
        let (dt, dy) = (t[k] - t[k - 1], y[k] - y[k - 1]);
        sxx += dt * dt / d;
        sxy += dt * dy / d;
        inc.push((dt, dy, d));
    }
    let b = sxy / sxx;
    let chi2: f64 = inc.iter().map(|(dt, dy, d)| (dy - b * dt).powi(2) / d).sum();
    let red = if inc.len() > 1 { chi2 / (inc.len() - 1) as f64 } else { 1.0 };
    (-b, (red.max(1.0) / sxx).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub rate: f64,
    pub sigma: f64,
    pub r_squared: f64,
    pub points: usize,
    pub t_first: f64,
    pub t_last: f64,
    pub warnings: Vec<String>,
}

/// Exponential decay rate from the long-time part of a curve: weighted least
/// squares of `ln(signal)` against `t` over points with `t > 3 tau_b_hint`,
/// signal at least 0.05 and above three standard errors.
pub fn fit_rate(curve: &DecayCurve, tau_b_hint: f64) -> Result<RateFit> {
    if !(tau_b_hint >= 0.0) {
        return Err(invalid(format!("tau_B hint must be non-negative, got {tau_b_hint}")));
    }
    let n = curve.len();
    if curve.signal.len() != n || curve.sigma.len() != n {
        return Err(invalid("decay curve columns differ in length"));
    }
    let keep: Vec<usize> = (0..n)
        .filter(|&i| {
            let (t, s, e) = (curve.times[i], curve.signal[i], curve.sigma[i]);
            t > 3.0 * tau_b_hint && t > 0.0 && s >= SIGNAL_FLOOR && s > 3.0 * e
        })
        .collect();
    if keep.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} admissible point(s) after t > {:e} s and signal >= {SIGNAL_FLOOR}; need 4",
            keep.len(),
            3.0 * tau_b_hint
        )));
    }
    let weighted = keep.iter().all(|&i| curve.sigma[i] > 0.0);
    let x: Vec<f64> = keep.iter().map(|&i| curve.times[i]).collect();
    let y: Vec<f64> = keep.iter().map(|&i| curve.signal[i].ln()).collect();
    let w: Vec<f64> = keep
        .iter()
        .map(|&i| {
            if weighted {
                (curve.signal[i] / curve.sigma[i]).powi(2)
            } else {
                1.0
            }
        })
        .collect();
    let line = fit_line(&x, &y, &w);
    let dof = (keep.len() - 2) as f64;
    let red = line.chi2 / dof;
    let scale = if weighted { red.max(1.0) } else { red };
    let (rate, sigma) = match curve.engine {
        Engine::MonteCarlo if weighted && line.b < 0.0 => {
            let s: Vec<f64> = keep.iter().map(|&i| curve.signal[i]).collect();
            let e: Vec<f64> = keep.iter().map(|&i| curve.sigma[i]).collect();
            shared_trials_fit(&x, &y, &s, &e, &line)
        }
        _ => (-line.b, (line.var_b * scale).sqrt()),
    };
    let mut warnings = Vec::new();
    for pair in keep.windows(2) {
        let (i, j) = (pair[0], pair[1]);
        let noise = 3.0 * (curve.sigma[i].powi(2) + curve.sigma[j].powi(2)).sqrt();
        if curve.signal[j] > curve.signal[i] + noise + 1e-12 {
            warnings.push(format!(
                "signal rises from {:.4} to {:.4} between t = {:e} s and {:e} s",
                curve.signal[i], curve.signal[j], curve.times[i], curve.times[j]
            ));
        }
    }
    Ok(RateFit {
        rate,
        sigma,
        r_squared: line.r_squared,
        points: keep.len(),
        t_first: x[0],
        t_last: x[x.len() - 1],
        warnings,
    })
}

/// Rates of a suite whose `n`-th curve has spacing `tau_max / n`. Curves that
/// cannot be fitted become holes, with the reason in the notes.
pub fn rates_from_curves(curves: &[DecayCurve], tau_max: f64, tau_b_hint: f64) -> Result<RateSet> {
    let mut rates = Vec::with_capacity(curves.len());
    let mut notes = Vec::new();
    for (i, c) in curves.iter().enumerate() {
        let n = i + 1;
        let expected = tau_max / n as f64;
        if (c.tau - expected).abs() > 1e-9 * expected {
            return Err(Error::GridMismatch(format!(
                "curve {n} has spacing {:e} s, expected tau_max / {n} = {expected:e} s",
                c.tau
            )));
        }
        match fit_rate(c, tau_b_hint) {
            Ok(f) if f.rate > 0.0 => {
                for w in &f.warnings {
                    notes.push(format!("n = {n}: {w}"));
                }
                rates.push(Some(Rate {
                    value: f.rate,
                    sigma: f.sigma,
                    r_squared: Some(f.r_squared),
                }));
            }
            Ok(f) => {
                notes.push(format!("n = {n}: fitted rate {:e} is not positive, row dropped", f.rate));
                rates.push(None);
            }
            Err(e) => {
                notes.push(format!("n = {n}: {e}, row dropped"));
                rates.push(None);
            }
        }
    }
    let mut set = RateSet::new(tau_max, rates)?;
    set.notes = notes;
    Ok(set)
}

/// Power-law tail `S(j omega_min) = c * j^-alpha` fitted to the rates
/// `R_n = A_1^2 Lambda_alpha c n^-alpha` on `n_lo..=n_hi`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailFit {
    pub c: f64,
    pub alpha: f64,
    pub sigma_alpha: f64,
    pub lambda: f64,
    pub a1_sq: f64,
    pub n_lo: usize,
    pub n_hi: usize,
    pub r_squared: f64,
}

impl TailFit {
    /// Model rate of measurement `n`.
    pub fn rate(&self, n: usize) -> f64 {
        self.a1_sq * self.lambda * self.c * (n as f64).powf(-self.alpha)
    }

    /// Model spectral value at `j omega_min`.
    pub fn spectrum(&self, j: usize) -> f64 {
        self.c * (j as f64).powf(-self.alpha)
    }
}

fn check_window(rates: &RateSet, window: (usize, usize)) -> Result<Vec<usize>> {
    let (lo, hi) = window;
    if lo < 1 || hi > rates.m() || lo > hi {
        return Err(invalid(format!(
            "window [{lo}, {hi}] must lie within 1..={}",
            rates.m()
        )));
    }
    let ns: Vec<usize> = (lo..=hi).filter(|&n| rates.get(n).is_some()).collect();
    if ns.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "window [{lo}, {hi}] holds {} rate(s); need 4",
            ns.len()
        )));
    }
    Ok(ns)
}

pub fn fit_tail(rates: &RateSet, weights: &HarmonicWeights, window: (usize, usize)) -> Result<TailFit> {
    let ns = check_window(rates, window)?;
    let weighted = ns.iter().all(|&n| rates.get(n).unwrap().sigma > 0.0);
    let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = ns.iter().map(|&n| rates.get(n).unwrap().value.ln()).collect();
    let w: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let r = rates.get(n).unwrap();
            if weighted {
                (r.value / r.sigma).powi(2)
            } else {
                1.0
            }
        })
        .collect();
    let line = fit_line(&x, &y, &w);
    if line.r_squared < TAIL_R2_THRESHOLD {
        return Err(Error::TailModelRejected {
            r_squared: line.r_squared,
            threshold: TAIL_R2_THRESHOLD,
        });
    }
    let alpha = -line.b;
    let lambda = lambda_alpha(weights, alpha)?;
    let a1_sq = weights.a1_sq();
    let red = line.chi2 / (ns.len() - 2) as f64;
    let scale = if weighted { red.max(1.0) } else { red };
    Ok(TailFit {
        c: line.a.exp() / (a1_sq * lambda),
        alpha,
        sigma_alpha: (line.var_b * scale).sqrt(),
        lambda,
        a1_sq,
        n_lo: window.0,
        n_hi: window.1,
        r_squared: line.r_squared,
    })
}

/// Constant offset `R_base` shared by all rates, from `R = R_base + C' tau^alpha'`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Baseline {
    pub r_base: f64,
    pub sigma: f64,
    /// `C'` for `tau` in seconds.
    pub c_prime: f64,
    pub alpha_prime: f64,
    pub n_lo: usize,
    pub n_hi: usize,
    pub warning: Option<String>,
}

/// For fixed exponent: weighted linear fit of `(R_base, C')`, returning the
/// parameters and the weighted residual sum.
fn linear_at(u: &[f64], r: &[f64], w: &[f64], alpha: f64) -> (f64, f64, f64) {
    let p: Vec<f64> = u.iter().map(|u| u.powf(alpha)).collect();
    let (mut s1, mut sp, mut spp, mut sr, mut spr) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..u.len() {
        s1 += w[i];
        sp += w[i] * p[i];
        spp += w[i] * p[i] * p[i];
        sr += w[i] * r[i];
        spr += w[i] * p[i] * r[i];
    }
    let det = s1 * spp - sp * sp;
    let base = (spp * sr - sp * spr) / det;
    let c = (s1 * spr - sp * sr) / det;
    let chi2 = (0..u.len())
        .map(|i| w[i] * (r[i] - base - c * p[i]).powi(2))
        .sum();
    (base, c, chi2)
}

fn invert3(m: [[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            *v = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    Some(inv)
}

/// Fits `R_n = R_base + C' tau_n^alpha'` on the window and subtracts `R_base`
/// from every rate. When the offset is indistinguishable from zero the rates
/// are returned unchanged with a warning.
pub fn subtract_baseline(rates: &RateSet, window: (usize, usize)) -> Result<(RateSet, Baseline)> {
    let ns = check_window(rates, window)?;
    let tau: Vec<f64> = ns.iter().map(|&n| rates.tau(n)).collect();
    // scaled spacing keeps the normal equations conditioned
    let tau_ref = (tau.iter().map(|t| t.ln()).sum::<f64>() / tau.len() as f64).exp();
    let u: Vec<f64> = tau.iter().map(|t| t / tau_ref).collect();
    let r: Vec<f64> = ns.iter().map(|&n| rates.get(n).unwrap().value).collect();
    let weighted = ns.iter().all(|&n| rates.get(n).unwrap().sigma > 0.0);
    let w: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let rate = rates.get(n).unwrap();
            if weighted {
                rate.sigma.powi(-2)
            } else {
                rate.value.powi(-2)
            }
        })
        .collect();

    let cost = |a: f64| linear_at(&u, &r, &w, a).2;
    let (mut best, mut best_cost) = (0.25, f64::INFINITY);
    let mut a = 0.25;
    while a <= 12.0 + 1e-9 {
        let c = cost(a);
        if c < best_cost {
            best = a;
            best_cost = c;
        }
        a += 0.05;
    }
    // golden-section refinement inside the bracketing grid cells
    let (mut lo, mut hi) = ((best - 0.05).max(0.05), best + 0.05);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (cost(x1), cost(x2));
    while hi - lo > 1e-10 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = cost(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = cost(x2);
        }
    }
    let alpha = 0.5 * (lo + hi);
    let (base, c, chi2) = linear_at(&u, &r, &w, alpha);

    // covariance of (R_base, C', alpha') from the Jacobian at the optimum
    let mut jtj = [[0.0; 3]; 3];
    for i in 0..u.len() {
        let p = u[i].powf(alpha);
        let row = [1.0, p, c * p * u[i].ln()];
        for a in 0..3 {
            for b in 0..3 {
                jtj[a][b] += w[i] * row[a] * row[b];
            }
        }
    }
    let dof = ns.len().saturating_sub(3).max(1) as f64;
    let red = chi2 / dof;
    let scale = if weighted { red.max(1.0) } else { red };
    let sigma = invert3(jtj)
        .map(|inv| (inv[0][0] * scale).sqrt())
        .unwrap_or(f64::INFINITY);

    let max_r = r.iter().cloned().fold(0.0, f64::max);
    let mut baseline = Baseline {
        r_base: base,
        sigma,
        c_prime: c * tau_ref.powf(-alpha),
        alpha_prime: alpha,
        n_lo: window.0,
        n_hi: window.1,
        warning: None,
    };
    if base.abs() <= 2.0 * sigma + 1e-9 * max_r {
        baseline.warning = Some(format!(
            "baseline {base:e} +- {sigma:e} 1/s is consistent with zero; rates left unchanged"
        ));
        baseline.r_base = 0.0;
        let mut out = rates.clone();
        out.notes.push(baseline.warning.clone().unwrap());
        return Ok((out, baseline));
    }

    let mut notes = rates.notes.clone();
    let shifted: Vec<Option<Rate>> = (1..=rates.m())
        .map(|n| {
            let r = rates.get(n)?;
            let value = r.value - base;
            if value <= 0.0 {
                notes.push(format!(
                    "n = {n}: rate {:e} does not exceed the baseline, row dropped",
                    r.value
                ));
                return None;
            }
            Some(Rate {
                value,
                sigma: (r.sigma * r.sigma + sigma * sigma).sqrt(),
                r_squared: r.r_squared,
            })
        })
        .collect();
    notes.push(format!(
        "baseline {base:e} +- {sigma:e} 1/s subtracted (alpha' = {alpha:.4})"
    ));
    let mut out = RateSet::new(rates.tau_max(), shifted)?;
    out.notes = notes;
    Ok((out, baseline))
}
