//! Decay of the probe coherence under a pulse sequence.
//!
//! The coherence after `M` cycles is `exp(-chi)` with
//! `chi = 1/2 <phi^2> = sqrt(pi/2) int S(w) |F(w, M tau_c)|^2 dw`. The analytic
//! engine evaluates that integral; the Monte Carlo engine integrates sampled
//! noise trajectories directly and averages `cos(phi)`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::filter::{harmonic_weights, FilterKernel, SQRT_2PI};
use crate::noise::{Feature, SpectralModel, Synthesizer};
use crate::quad::gl16;
use crate::sequence::PulseSequence;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    #[default]
    Analytic,
    MonteCarlo,
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Engine::Analytic => "analytic",
            Engine::MonteCarlo => "monte_carlo",
        })
    }
}

/// Coherence sampled at whole numbers of cycles. The first point is `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    pub times: Vec<f64>,
    pub cycles: Vec<usize>,
    pub signal: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Mean pulse spacing `tau_c / N`.
    pub tau: f64,
    pub engine: Engine,
}

impl DecayCurve {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Mean pulse spacing of a sequence.
pub fn pulse_spacing(seq: &PulseSequence) -> f64 {
    seq.cycle_length() / seq.pulse_count().max(1) as f64
}

fn check_cycles(cycles: &[usize]) -> Result<()> {
    if cycles.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("cycle counts must be strictly increasing"));
    }
    Ok(())
}

// ---------------------------------------------------------------- analytic

const REL_TOL: f64 = 1e-7;

/// `int_0^1 S(w_hi / u) du = w_hi * int_{w_hi}^inf S(w) / w^2 dw`.
fn inverse_tail(model: &SpectralModel, w_hi: f64) -> f64 {
    let mut acc = 0.0;
    let mut b = 1.0;
    for _ in 0..80 {
        let a = 0.5 * b;
        acc += gl16().integrate(a, b, |u| model.eval(w_hi / u));
        b = a;
    }
    acc
}

/// `chi = 1/2 <phi^2>` after `cycles` repetitions of `seq`.
pub fn analytic_chi(model: &SpectralModel, seq: &PulseSequence, cycles: usize) -> Result<f64> {
    overlap(model, seq, cycles, true).map(|v| (SQRT_2PI * v).max(0.0))
}

/// Integrand and mesh for `int_0^inf S |F_M|^2 dw`.
struct Overlap<'a> {
    model: &'a SpectralModel,
    kernel: FilterKernel,
    cycles: usize,
    tc: f64,
    phase: f64,
    features: Vec<Feature>,
    breaks: Vec<f64>,
    /// Lobes kept exact on each side of a harmonic peak in the fast path.
    core: i64,
}

impl Overlap<'_> {
    fn integrand(&self, w: f64) -> f64 {
        self.model.eval(w) * self.kernel.sq(w, self.cycles)
    }

    /// `w` at offset `x` from the `k`-th harmonic peak, `x` in `[-pi/2, pi/2]`.
    fn omega(&self, k: i64, x: f64) -> f64 {
        (2.0 * (x + PI * k as f64) - self.phase) / self.tc
    }

    /// Cuts from `a` to `b`, graded toward every feature and through breakpoints.
    fn cuts(&self, a: f64, b: f64) -> Vec<f64> {
        let mut cuts = vec![a];
        let mut x = a;
        while x < b {
            let mut step = b - x;
            for f in &self.features {
                let d = (x - f.center).abs();
                step = step.min(0.25 * (f.width + d));
                if x < f.center && f.center < b {
                    step = step.min(f.center - x);
                }
            }
            x = if b - (x + step) < 1e-12 * (b - a) { b } else { x + step };
            cuts.push(x);
        }
        let lo = self.breaks.partition_point(|&x| x <= a);
        let hi = self.breaks.partition_point(|&x| x < b);
        if lo < hi {
            cuts.extend_from_slice(&self.breaks[lo..hi]);
            cuts.sort_by(f64::total_cmp);
        }
        cuts
    }

    fn piece(&self, a: f64, b: f64, f: impl Fn(f64) -> f64 + Copy) -> f64 {
        self.cuts(a, b)
            .windows(2)
            .map(|c| gl16().integrate(c[0], c[1], f))
            .sum()
    }

    /// Whether the smooth factor `S |F_1|^2` varies slowly on the lobe scale
    /// across `[a, b]`.
    fn smooth(&self, a: f64, b: f64) -> bool {
        let lobe = 2.0 * PI / (self.cycles as f64 * self.tc);
        let lo = self.breaks.partition_point(|&x| x < a);
        if lo < self.breaks.len() && self.breaks[lo] <= b {
            return false;
        }
        self.features.iter().all(|f| {
            let d = if f.center < a {
                a - f.center
            } else if f.center > b {
                f.center - b
            } else {
                0.0
            };
            f.width >= 40.0 * lobe || d >= 30.0 * f.width
        })
    }

    /// Integral over the `k`-th harmonic period, clipped to `w >= 0`;
    /// also returns the number of lobes integrated one by one.
    fn period(&self, k: i64, fast: bool) -> (f64, u64) {
        let m = self.cycles as i64;
        let half = PI / 2.0;
        let a = self.omega(k, -half);
        let b = self.omega(k, half);
        let clipped = a < 0.0;
        if fast && !clipped && 4 * self.core < m && self.smooth(a, b) {
            return (self.period_fast(k), 2 * self.core as u64);
        }
        // lobe edges at x = q pi / M
        let mut edges = vec![-half];
        let q0 = -(m / 2);
        for q in q0..=m / 2 {
            let x = PI * q as f64 / m as f64;
            if x > -half && x < half {
                edges.push(x);
            }
        }
        edges.push(half);
        let mut acc = 0.0;
        let mut lobes = 0;
        for e in edges.windows(2) {
            let (lo, hi) = (self.omega(k, e[0]), self.omega(k, e[1]));
            if hi <= 0.0 {
                continue;
            }
            acc += self.piece(lo.max(0.0), hi, |w| self.integrand(w));
            lobes += 1;
        }
        (acc, lobes)
    }

    /// Exact lobes near the peak; in the wings `sin^2(M x)` is replaced by its
    /// mean plus the leading end correction from integrating by parts.
    fn period_fast(&self, k: i64) -> f64 {
        let m = self.cycles as f64;
        let half = PI / 2.0;
        let xa = self.core as f64 * PI / m;
        let mut acc = 0.0;
        for q in -self.core..self.core {
            let lo = self.omega(k, PI * q as f64 / m);
            let hi = self.omega(k, PI * (q + 1) as f64 / m);
            acc += self.piece(lo, hi, |w| self.integrand(w));
        }
        // h(x) = S |F_1|^2 / sin^2 x on the period's x axis
        let h = |x: f64| {
            let w = self.omega(k, x);
            let s = x.sin();
            self.model.eval(w) * self.kernel.single_sq(w) / (s * s)
        };
        let dh = |x: f64| {
            let d = 1e-4 * x.abs();
            (h(x + d) - h(x - d)) / (2.0 * d)
        };
        let end_sign = if self.cycles % 2 == 0 { 1.0 } else { -1.0 };
        let x_to_cut = |x: f64| self.omega(k, x);
        for side in [-1.0, 1.0] {
            // geometric in |x| from the core edge to the period edge
            let mut xs = vec![xa];
            while xs.last().unwrap() * 2.0 < half {
                let next = xs.last().unwrap() * 2.0;
                xs.push(next);
            }
            xs.push(half);
            for p in xs.windows(2) {
                let (lo, hi) = if side > 0.0 {
                    (x_to_cut(p[0]), x_to_cut(p[1]))
                } else {
                    (x_to_cut(-p[1]), x_to_cut(-p[0]))
                };
                acc += 0.5
                    * self.piece(lo, hi, |w| {
                        let x = 0.5 * (w * self.tc + self.phase) - PI * k as f64;
                        let s = x.sin();
                        self.model.eval(w) * self.kernel.single_sq(w) / (s * s)
                    });
            }
            // int h cos(2 M x) dx over the wing, in x units
            let (xl, xr, sl, sr) = if side > 0.0 {
                (xa, half, 1.0, end_sign)
            } else {
                (-half, -xa, end_sign, 1.0)
            };
            let c = (dh(xr) * sr - dh(xl) * sl) / (4.0 * m * m);
            acc -= c / self.tc;
        }
        acc
    }
}

/// `int_0^inf S(w) |F(w, M tau_c)|^2 dw`.
fn overlap(model: &SpectralModel, seq: &PulseSequence, cycles: usize, fast: bool) -> Result<f64> {
    model.validate()?;
    if cycles == 0 {
        return Err(invalid("cycle count must be at least 1"));
    }
    if !model.is_total() {
        return Err(Error::OutOfDomain(
            "the overlap integral needs S at all frequencies; give the tabulated model a tail rule"
                .into(),
        ));
    }
    let kernel = FilterKernel::new(seq);
    let tc = kernel.cycle_length();
    let phase = kernel.phase();
    // enough core lobes that the dropped wing terms stay below ~1e-9
    let core = ((1e9 * cycles as f64).powf(1.0 / 6.0) / PI).ceil() as i64;
    let ov = Overlap {
        model,
        kernel,
        cycles,
        tc,
        phase,
        features: model.features(),
        breaks: model.breakpoints(),
        core,
    };
    let (_, reach) = model.scales();
    // asymptotic |F|^2 ~ sum of squared jumps / (2 pi w^2)
    let jump_sq = (4 * seq.pulse_count() * cycles + 2) as f64;
    let w0 = 2.0 * PI / tc;
    let settle = reach.max(40.0 * 2.0 * PI / seq.min_segment());

    // first period reaching above w = 0
    let mut k = ((phase - PI) / (2.0 * PI)).floor() as i64 + 1;
    let mut total = 0.0;
    let mut batch = 4i64;
    let max_lobes: u64 = 400_000_000;
    let mut lobes_done: u64 = 0;
    loop {
        let parts: Vec<(f64, u64)> = (k..k + batch)
            .into_par_iter()
            .map(|p| ov.period(p, fast))
            .collect();
        for (v, l) in &parts {
            total += v;
            lobes_done += l;
        }
        k += batch;
        let hi = ov.omega(k - 1, PI / 2.0);

        if hi > settle {
            let tail = jump_sq / (2.0 * PI) * inverse_tail(model, hi) / hi;
            let scale = total.abs().max(f64::MIN_POSITIVE);
            // the averaged tail is accurate to about w0 / w_hi of itself
            if (tail < 1e-3 * scale && tail * w0 / hi < REL_TOL * scale) || tail < 1e-12 * scale
            {
                total += tail;
                break;
            }
            if total == 0.0 && tail == 0.0 {
                break;
            }
        }
        if lobes_done > max_lobes {
            return Err(Error::NumericalFailure(format!(
                "overlap integral did not converge: {lobes_done} lobes up to {hi:e} rad/s, \
                 partial value {total:e} (M = {cycles}, tau_c = {tc:e} s)"
            )));
        }
        batch = (batch * 2).min(256);
    }
    if !total.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "overlap integral is not finite (M = {cycles}, tau_c = {tc:e} s)"
        )));
    }
    Ok(total)
}

/// Analytic curve at the given cycle counts (a `t = 0` point is prepended).
pub fn analytic_curve(
    model: &SpectralModel,
    seq: &PulseSequence,
    cycles: &[usize],
) -> Result<DecayCurve> {
    check_cycles(cycles)?;
    let mut curve = DecayCurve {
        times: vec![0.0],
        cycles: vec![0],
        signal: vec![1.0],
        sigma: vec![0.0],
        tau: pulse_spacing(seq),
        engine: Engine::Analytic,
    };
    for &c in cycles.iter().filter(|&&c| c > 0) {
        let chi = analytic_chi(model, seq, c)?;
        curve.times.push(c as f64 * seq.cycle_length());
        curve.cycles.push(c);
        curve.signal.push((-chi).exp());
        curve.sigma.push(0.0);
    }
    Ok(curve)
}

// ------------------------------------------------------------- Monte Carlo

/// Default trajectory step: 20 steps per shortest segment, finer if the
/// noise bandwidth needs it.
pub fn default_dt(model: &SpectralModel, seq: &PulseSequence) -> f64 {
    let seg = seq.min_segment() / 20.0;
    match model.bandwidth() {
        Some(w) if w > 0.0 => seg.min(PI / (10.0 * w)),
        _ => seg,
    }
}

/// Where each sign segment starts and ends on the sample grid.
struct PhasePlan {
    // (sample index, offset within step) for each boundary
    marks: Vec<(usize, f64)>,
    signs: Vec<f64>,
    // number of segments completed at each checkpoint
    checkpoints: Vec<usize>,
    dt: f64,
}

impl PhasePlan {
    fn new(seq: &PulseSequence, cycles: &[usize], dt: f64, samples: usize) -> Self {
        let tc = seq.cycle_length();
        let segs = seq.segments();
        let parity = seq.cycle_parity();
        let total = *cycles.last().unwrap_or(&0);
        let mut marks = vec![(0, 0.0)];
        let mut signs = Vec::new();
        let mut checkpoints = Vec::new();
        let mut next = cycles.iter().peekable();
        let mut p = 1.0;
        let locate = |t: f64| {
            let i = ((t / dt).floor() as usize).min(samples - 2);
            (i, t - i as f64 * dt)
        };
        for c in 0..total {
            let offset = c as f64 * tc;
            for s in &segs {
                marks.push(locate(offset + s.end));
                signs.push(p * s.sign);
            }
            p *= parity;
            while next.peek().is_some_and(|&&m| m == c + 1) {
                checkpoints.push(signs.len());
                next.next();
            }
        }
        PhasePlan {
            marks,
            signs,
            checkpoints,
            dt,
        }
    }

    /// Accumulated phase at every checkpoint for one trajectory.
    fn phases(&self, e: &[f64], cum: &mut Vec<f64>, out: &mut Vec<f64>) {
        let dt = self.dt;
        cum.clear();
        cum.push(0.0);
        let mut acc = 0.0;
        for w in e.windows(2) {
            acc += 0.5 * dt * (w[0] + w[1]);
            cum.push(acc);
        }
        let prefix = |&(i, d): &(usize, f64)| -> f64 {
            cum[i] + e[i] * d + (e[i + 1] - e[i]) * d * d / (2.0 * dt)
        };
        out.clear();
        let mut phi = 0.0;
        let mut prev = prefix(&self.marks[0]);
        let mut seg = 0;
        for &cp in &self.checkpoints {
            while seg < cp {
                let here = prefix(&self.marks[seg + 1]);
                phi += self.signs[seg] * (here - prev);
                prev = here;
                seg += 1;
            }
            out.push(phi);
        }
    }
}

/// Accumulated phase per trial (outer) and checkpoint (inner).
pub fn monte_carlo_phases(
    model: &SpectralModel,
    seq: &PulseSequence,
    cycles: &[usize],
    trials: usize,
    seed: u64,
    dt: Option<f64>,
) -> Result<Vec<Vec<f64>>> {
    check_cycles(cycles)?;
    if cycles.first() == Some(&0) {
        return Err(invalid("Monte Carlo checkpoints must be at least one cycle"));
    }
    let max_dt = seq.min_segment() / 20.0;
    let dt = match dt {
        Some(d) if !(d > 0.0 && d.is_finite()) => {
            return Err(invalid(format!("dt must be positive, got {d}")))
        }
        Some(d) if d > max_dt * (1.0 + 1e-12) => {
            return Err(invalid(format!(
                "dt = {d:e} s is coarser than 1/20 of the shortest segment ({max_dt:e} s)"
            )))
        }
        Some(d) => d,
        None => default_dt(model, seq),
    };
    let Some(&last) = cycles.last() else {
        return Ok(vec![Vec::new(); trials]);
    };
    let duration = (last as f64 * seq.cycle_length()).max(100.0 * dt);
    let synth = Synthesizer::new(model, dt, duration, seed)?;
    let plan = PhasePlan::new(seq, cycles, dt, synth.len());
    Ok((0..trials as u64)
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new(), Vec::new()),
            |(buf, e, cum), trial| {
                synth.fill(trial, buf, e);
                let mut out = Vec::with_capacity(cycles.len());
                plan.phases(e, cum, &mut out);
                out
            },
        )
        .collect())
}

/// Trajectory-averaged coherence `<cos phi>` with its standard error.
pub fn monte_carlo_curve(
    model: &SpectralModel,
    seq: &PulseSequence,
    cycles: &[usize],
    trials: usize,
    seed: u64,
) -> Result<DecayCurve> {
    monte_carlo_curve_with_dt(model, seq, cycles, trials, seed, None)
}

pub fn monte_carlo_curve_with_dt(
    model: &SpectralModel,
    seq: &PulseSequence,
    cycles: &[usize],
    trials: usize,
    seed: u64,
    dt: Option<f64>,
) -> Result<DecayCurve> {
    if trials < 100 {
        return Err(invalid(format!("need at least 100 trials, got {trials}")));
    }
    let positive: Vec<usize> = cycles.iter().copied().filter(|&c| c > 0).collect();
    let phases = monte_carlo_phases(model, seq, &positive, trials, seed, dt)?;
    let mut curve = DecayCurve {
        times: vec![0.0],
        cycles: vec![0],
        signal: vec![1.0],
        sigma: vec![0.0],
        tau: pulse_spacing(seq),
        engine: Engine::MonteCarlo,
    };
    let n = trials as f64;
    for (j, &c) in positive.iter().enumerate() {
        let (mut s1, mut s2) = (0.0, 0.0);
        for p in &phases {
            let v = p[j].cos();
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / n;
        let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
        curve.times.push(c as f64 * seq.cycle_length());
        curve.cycles.push(c);
        curve.signal.push(mean);
        curve.sigma.push((var / n).sqrt());
    }
    Ok(curve)
}

// ------------------------------------------------------------------ suites

/// How many cycles to sample per curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    /// Evenly spaced points up to the end time.
    pub points: usize,
    /// Decay depth `chi` the last point should reach.
    pub target_chi: f64,
    /// The curve also extends to this many correlation times.
    pub settle: f64,
    pub max_cycles: usize,
    pub max_duration: Option<f64>,
    /// Add points at 1, 2, 4, ... cycles before the even grid starts.
    pub short_time: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            points: 16,
            target_chi: 1.5,
            settle: 10.0,
            max_cycles: 100_000,
            max_duration: None,
            short_time: true,
        }
    }
}

/// Rate from the harmonic sum, for planning only.
fn rough_rate(model: &SpectralModel, seq: &PulseSequence) -> Result<f64> {
    let hw = harmonic_weights(seq, 256)?;
    let w0 = hw.base_frequency();
    let mut r = 0.0;
    for k in 1..=hw.k_max() {
        let a = hw.absolute(k);
        if a > 0.0 {
            r += a * model.psd(k as f64 * w0)?;
        }
    }
    Ok(r)
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.points == 0 || self.max_cycles == 0 {
            return Err(invalid("schedule needs at least one point and one cycle"));
        }
        if !(self.target_chi > 0.0) || !(self.settle >= 0.0) {
            return Err(invalid("schedule target_chi must be positive and settle non-negative"));
        }
        if let Some(d) = self.max_duration {
            if !(d > 0.0) {
                return Err(invalid("schedule max_duration must be positive"));
            }
        }
        Ok(())
    }

    /// Cycle counts for `seq` under `model`, strictly increasing from 1.
    pub fn cycles(&self, model: &SpectralModel, seq: &PulseSequence) -> Result<Vec<usize>> {
        self.validate()?;
        let tc = seq.cycle_length();
        let rate = rough_rate(model, seq)?;
        let mut t_end = tc;
        if rate > 0.0 {
            t_end = t_end.max(self.target_chi / rate);
        }
        if let Some(tb) = model.correlation_time() {
            t_end = t_end.max(self.settle * tb);
        }
        if let Some(d) = self.max_duration {
            t_end = t_end.min(d);
        }
        let m_end = ((t_end / tc).ceil() as usize).clamp(1, self.max_cycles);
        let mut out: Vec<usize> = (1..=self.points)
            .map(|i| ((i * m_end) as f64 / self.points as f64).round() as usize)
            .filter(|&c| c > 0)
            .collect();
        if self.short_time {
            let first = out[0];
            let mut c = 1;
            while c < first {
                out.push(c);
                c *= 2;
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SequenceFamily {
    #[default]
    Cpmg,
    Kdd,
    /// A template cycle, rescaled so its mean pulse spacing is `tau`.
    Custom { sequence: PulseSequence },
}

impl SequenceFamily {
    pub fn at(&self, tau: f64) -> Result<PulseSequence> {
        match self {
            SequenceFamily::Cpmg => PulseSequence::cpmg(tau),
            SequenceFamily::Kdd => PulseSequence::kdd(tau),
            SequenceFamily::Custom { sequence } => {
                if sequence.pulse_count() == 0 {
                    return Err(invalid("custom suite sequence needs at least one pulse"));
                }
                sequence.scaled(tau / pulse_spacing(sequence))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub family: SequenceFamily,
    pub schedule: Schedule,
    pub trials: usize,
    pub seed: u64,
    pub dt: Option<f64>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            family: SequenceFamily::Cpmg,
            schedule: Schedule::default(),
            trials: 2000,
            seed: 0,
            dt: None,
        }
    }
}

/// Seed of the `n`-th curve in a Monte Carlo suite.
pub fn curve_seed(seed: u64, n: usize) -> u64 {
    seed.wrapping_add(n as u64 - 1)
}

/// Curves for `tau_n = tau_max / n`, `n = 1..=m`.
pub fn run_suite(
    model: &SpectralModel,
    tau_max: f64,
    m: usize,
    engine: Engine,
    opts: &SuiteOptions,
) -> Result<Vec<DecayCurve>> {
    if m == 0 {
        return Err(invalid("suite size m must be at least 1"));
    }
    if !(tau_max > 0.0 && tau_max.is_finite()) {
        return Err(invalid(format!("tau_max must be positive, got {tau_max}")));
    }
    model.validate()?;
    opts.schedule.validate()?;
    (1..=m)
        .map(|n| {
            let seq = opts.family.at(tau_max / n as f64)?;
            let cycles = opts.schedule.cycles(model, &seq)?;
            match engine {
                Engine::Analytic => analytic_curve(model, &seq, &cycles),
                Engine::MonteCarlo => monte_carlo_curve_with_dt(
                    model,
                    &seq,
                    &cycles,
                    opts.trials,
                    curve_seed(opts.seed, n),
                    opts.dt,
                ),
            }
        })
        .collect()
}
