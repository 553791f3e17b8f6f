//! Dynamical-decoupling pulse sequences.
//!
//! A sequence is a set of instantaneous pi pulses inside one cycle of length
//! `tau_c`, repeated `M` times. Each pulse flips the sign of the
//! system-environment coupling, so the sequence is fully described by the
//! piecewise-constant modulation function `f(t)` in `{+1, -1}` with `f(0) = +1`.
//! Intervals are half-open `[t_i, t_{i+1})`: the modulation is right-continuous.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A constant-sign stretch of the modulation function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub sign: f64,
}

impl Segment {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

/// A sign jump of the modulation function: `size = f(t+) - f(t-)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSequence", into = "RawSequence")]
pub struct PulseSequence {
    label: String,
    cycle_length: f64,
    pulse_times: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSequence {
    label: String,
    tau_c: f64,
    pulse_times: Vec<f64>,
}

impl TryFrom<RawSequence> for PulseSequence {
    type Error = Error;

    fn try_from(raw: RawSequence) -> Result<Self> {
        PulseSequence::new(raw.label, raw.tau_c, raw.pulse_times)
    }
}

impl From<PulseSequence> for RawSequence {
    fn from(s: PulseSequence) -> Self {
        RawSequence {
            label: s.label,
            tau_c: s.cycle_length,
            pulse_times: s.pulse_times,
        }
    }
}

impl PulseSequence {
    /// Arbitrary pulse timings. Times must be strictly increasing and lie
    /// strictly inside `(0, cycle_length)`.
    pub fn new(label: impl Into<String>, cycle_length: f64, pulse_times: Vec<f64>) -> Result<Self> {
        if !(cycle_length.is_finite() && cycle_length > 0.0) {
            return Err(invalid(format!("cycle length must be positive, got {cycle_length}")));
        }
        if pulse_times.is_empty() {
            return Err(invalid("a sequence needs at least one pulse"));
        }
        let mut prev = 0.0;
        for (i, &t) in pulse_times.iter().enumerate() {
            if !t.is_finite() || t <= prev || t >= cycle_length {
                return Err(invalid(format!(
                    "pulse {i} at {t} s violates 0 < t_1 < ... < t_N < tau_c = {cycle_length} s"
                )));
            }
            prev = t;
        }
        Ok(PulseSequence {
            label: label.into(),
            cycle_length,
            pulse_times,
        })
    }

    /// CPMG with pulse spacing `tau`: delays tau/2, tau, tau/2.
    pub fn cpmg(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(invalid(format!("CPMG spacing must be positive, got {tau}")));
        }
        PulseSequence::new("CPMG", 2.0 * tau, vec![0.5 * tau, 1.5 * tau])
    }

    /// Ideal-pulse KDD: 20 equidistant pulses with spacing `tau`. The phase
    /// cycling only matters for pulse errors, so the timing equals five CPMG
    /// cycles back to back.
    pub fn kdd(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(invalid(format!("KDD spacing must be positive, got {tau}")));
        }
        let times = (0..20).map(|i| (i as f64 + 0.5) * tau).collect();
        PulseSequence::new("KDD", 20.0 * tau, times)
    }

    /// Uhrig DD with `n` pulses at `tau_c * sin^2(j pi / (2n + 2))`.
    pub fn udd(n: usize, cycle_length: f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("UDD needs at least one pulse"));
        }
        let times = (1..=n)
            .map(|j| {
                let x = (j as f64 * std::f64::consts::PI / (2 * n + 2) as f64).sin();
                cycle_length * x * x
            })
            .collect();
        PulseSequence::new(format!("UDD{n}"), cycle_length, times)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn cycle_length(&self) -> f64 {
        self.cycle_length
    }

    pub fn pulse_times(&self) -> &[f64] {
        &self.pulse_times
    }

    pub fn pulse_count(&self) -> usize {
        self.pulse_times.len()
    }

    /// Sign with which cycle `c + 1` starts relative to cycle `c`.
    pub fn cycle_parity(&self) -> f64 {
        if self.pulse_count() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Period of the repeated modulation: `tau_c` for an even pulse count,
    /// `2 tau_c` for an odd one.
    pub fn period(&self) -> f64 {
        if self.pulse_count() % 2 == 0 {
            self.cycle_length
        } else {
            2.0 * self.cycle_length
        }
    }

    /// Segments of the first cycle (which starts with sign +1).
    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::with_capacity(self.pulse_count() + 1);
        let mut start = 0.0;
        let mut sign = 1.0;
        for &t in &self.pulse_times {
            out.push(Segment { start, end: t, sign });
            start = t;
            sign = -sign;
        }
        out.push(Segment {
            start,
            end: self.cycle_length,
            sign,
        });
        out
    }

    pub fn min_segment(&self) -> f64 {
        self.segments()
            .iter()
            .map(Segment::len)
            .fold(f64::INFINITY, f64::min)
    }

    /// Integral of the modulation over one cycle. Zero means a static
    /// coupling is fully refocused; values within floating-point rounding of
    /// the pulse times are reported as exactly zero.
    pub fn modulation_integral(&self) -> f64 {
        let v: f64 = self.segments().iter().map(|s| s.sign * s.len()).sum();
        let rounding = 8.0 * f64::EPSILON * self.cycle_length * (self.pulse_count() + 1) as f64;
        if v.abs() <= rounding {
            0.0
        } else {
            v
        }
    }

    /// Sign jumps inside one full period (`period()`), excluding the ends.
    pub fn period_jumps(&self) -> Vec<Jump> {
        let reps = if self.pulse_count() % 2 == 0 { 1 } else { 2 };
        let mut out = Vec::with_capacity(reps * self.pulse_count());
        let mut sign = 1.0;
        for r in 0..reps {
            let offset = r as f64 * self.cycle_length;
            for &t in &self.pulse_times {
                out.push(Jump {
                    time: offset + t,
                    size: -2.0 * sign,
                });
                sign = -sign;
            }
        }
        out
    }

    /// Smallest sub-period of the modulation, as a divisor `q` of `period()`.
    /// KDD, for example, repeats every two pulse spacings and returns 10.
    pub fn period_divisor(&self) -> usize {
        let jumps = self.period_jumps();
        let p = self.period();
        let tol = 1e-9 * p;
        let count = jumps.len();
        (1..=count)
            .rev()
            .filter(|q| count % q == 0)
            .find(|&q| {
                let shift = p / q as f64;
                jumps.iter().all(|j| {
                    let target = (j.time + shift) % p;
                    jumps.iter().any(|k| {
                        let d = (k.time - target).abs();
                        (d < tol || (p - d) < tol) && k.size == j.size
                    })
                })
            })
            .unwrap_or(1)
    }

    /// Time-scaled copy: every time multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(invalid(format!("scale factor must be positive, got {factor}")));
        }
        PulseSequence::new(
            self.label.clone(),
            self.cycle_length * factor,
            self.pulse_times.iter().map(|t| t * factor).collect(),
        )
    }

    /// Modulation `f(t)` over `cycles` repetitions, for `0 <= t < cycles * tau_c`.
    pub fn modulation(&self, t: f64, cycles: usize) -> Result<f64> {
        let total = cycles as f64 * self.cycle_length;
        if cycles == 0 || !(0.0..total).contains(&t) {
            return Err(Error::OutOfDomain(format!(
                "t = {t} s outside [0, {total}) for {cycles} cycle(s)"
            )));
        }
        let cycle = ((t / self.cycle_length).floor() as usize).min(cycles - 1);
        let local = t - cycle as f64 * self.cycle_length;
        let flips = cycle * self.pulse_count()
            + self.pulse_times.partition_point(|&p| p <= local);
        Ok(if flips % 2 == 0 { 1.0 } else { -1.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cpmg_layout() {
        let s = PulseSequence::cpmg(100e-6).unwrap();
        assert!((s.pulse_times()[0] - 50e-6).abs() < 1e-18);
        assert!((s.pulse_times()[1] - 150e-6).abs() < 1e-18);
        assert!((s.cycle_length() - 200e-6).abs() < 1e-18);
        assert_eq!(s.modulation_integral(), 0.0);

        let s = PulseSequence::cpmg(1.0).unwrap();
        assert_eq!(s.pulse_times(), &[0.5, 1.5]);
        assert_eq!(s.cycle_length(), 2.0);
    }

    #[test]
    fn cpmg_rejects_bad_tau() {
        assert!(matches!(PulseSequence::cpmg(0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(PulseSequence::cpmg(-1.0), Err(Error::InvalidArgument(_))));
        assert!(PulseSequence::cpmg(f64::NAN).is_err());
    }

    #[test]
    fn constructor_invariants() {
        assert!(PulseSequence::new("x", 1.0, vec![]).is_err());
        assert!(PulseSequence::new("x", 1.0, vec![0.0, 0.5]).is_err());
        assert!(PulseSequence::new("x", 1.0, vec![0.5, 0.5]).is_err());
        assert!(PulseSequence::new("x", 1.0, vec![0.6, 0.5]).is_err());
        assert!(PulseSequence::new("x", 1.0, vec![0.5, 1.0]).is_err());
        assert!(PulseSequence::new("x", 0.0, vec![0.5]).is_err());
        assert!(PulseSequence::new("x", 1.0, vec![0.2, 0.7]).is_ok());
    }

    #[test]
    fn modulation_examples() {
        let tau = 1e-4;
        let s = PulseSequence::cpmg(tau).unwrap();
        assert_eq!(s.modulation(0.0, 1).unwrap(), 1.0);
        assert_eq!(s.modulation(tau, 1).unwrap(), -1.0);
        assert_eq!(s.modulation(2.0 * tau * (1.0 - 1e-9), 1).unwrap(), 1.0);
        // right-continuous at the flip
        assert_eq!(s.modulation(0.5 * tau, 1).unwrap(), -1.0);
        assert!(matches!(s.modulation(2.0 * tau, 1), Err(Error::OutOfDomain(_))));
        assert!(s.modulation(-1e-9, 1).is_err());
        assert!(s.modulation(0.0, 0).is_err());
    }

    #[test]
    fn modulation_matches_brute_force_flip_count() {
        let s = PulseSequence::new("odd", 1.0, vec![0.13, 0.4, 0.77]).unwrap();
        let cycles = 3;
        let all: Vec<f64> = (0..cycles)
            .flat_map(|c| s.pulse_times().iter().map(move |t| t + c as f64))
            .collect();
        for i in 0..3000 {
            let t = (i as f64 + 0.37) * 1e-3;
            let flips = all.iter().filter(|&&p| p <= t).count();
            let expect = if flips % 2 == 0 { 1.0 } else { -1.0 };
            assert_eq!(s.modulation(t, cycles).unwrap(), expect, "t = {t}");
        }
    }

    #[test]
    fn periodicity_even_and_odd() {
        let even = PulseSequence::cpmg(1.0).unwrap();
        let odd = PulseSequence::new("odd", 1.0, vec![0.3]).unwrap();
        for i in 0..400 {
            let t = i as f64 * 0.005 + 0.0013;
            assert_eq!(
                even.modulation(t, 4).unwrap(),
                even.modulation(t + 2.0, 4).unwrap()
            );
            assert_eq!(
                odd.modulation(t, 4).unwrap(),
                -odd.modulation(t + 1.0, 4).unwrap()
            );
            assert_eq!(
                odd.modulation(t, 4).unwrap(),
                odd.modulation(t + 2.0, 4).unwrap()
            );
        }
        assert_eq!(even.period(), 2.0);
        assert_eq!(odd.period(), 2.0);
    }

    #[test]
    fn kdd_has_cpmg_sub_period() {
        let k = PulseSequence::kdd(1.0).unwrap();
        assert_eq!(k.period_divisor(), 10);
        assert_eq!(PulseSequence::cpmg(1.0).unwrap().period_divisor(), 1);
        assert_eq!(k.modulation_integral(), 0.0);
    }

    #[test]
    fn udd_times_are_valid() {
        let u = PulseSequence::udd(5, 1.0).unwrap();
        assert_eq!(u.pulse_count(), 5);
        assert!((u.pulse_times()[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn serde_roundtrip_validates() {
        let s = PulseSequence::cpmg(2e-3).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("tau_c"));
        let back: PulseSequence = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let bad = r#"{"label":"x","tau_c":1.0,"pulse_times":[0.5,0.2]}"#;
        assert!(serde_json::from_str::<PulseSequence>(bad).is_err());
    }
}
