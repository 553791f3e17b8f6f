//! Spectral synthesis of stationary Gaussian noise.
//!
//! Each trajectory draws independent complex Gaussian amplitudes on an FFT grid
//! of length `L >= 2n` with `E|X_k|^2 = S(w_k) dw / sqrt(2 pi)`, inverse
//! transforms, and keeps the first `n` samples so the circular wrap-around never
//! shows up inside the trajectory.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::SpectralModel;
use crate::error::{invalid, Error, Result};

/// One sampled realisation of the field, in rad/s.
#[derive(Debug, Clone)]
pub struct NoiseTrajectory {
    pub dt: f64,
    pub seed: u64,
    pub stream: u64,
    pub samples: Vec<f64>,
}

impl NoiseTrajectory {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |i| i as f64 * self.dt)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut go = || -> std::io::Result<()> {
            writeln!(w, "# schema: ddspec/noise-trajectory/v1")?;
            writeln!(w, "# seed: {} stream: {}", self.seed, self.stream)?;
            writeln!(w, "time_s,E_rad_per_s")?;
            for (t, x) in self.times().zip(&self.samples) {
                writeln!(w, "{t:e},{x:e}")?;
            }
            w.flush()
        };
        go().map_err(|e| Error::io(path, e))
    }
}

/// Precomputed synthesis plan for one model, sample interval and length.
pub struct Synthesizer {
    dt: f64,
    n: usize,
    len: usize,
    seed: u64,
    /// Standard deviation of `|X_k|` for `k = 0..=len/2`.
    sigma: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Synthesizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Synthesizer")
            .field("dt", &self.dt)
            .field("n", &self.n)
            .field("len", &self.len)
            .field("seed", &self.seed)
            .finish()
    }
}

/// Largest sample interval that resolves `model`.
pub(crate) fn dt_limit(model: &SpectralModel) -> f64 {
    match model.bandwidth() {
        Some(w) if w > 0.0 => PI / (10.0 * w),
        _ => f64::INFINITY,
    }
}

impl Synthesizer {
    pub fn new(model: &SpectralModel, dt: f64, duration: f64, seed: u64) -> Result<Self> {
        model.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {dt}")));
        }
        if !(duration >= 100.0 * dt) || !duration.is_finite() {
            return Err(invalid(format!(
                "duration {duration:e} s must cover at least 100 samples of {dt:e} s"
            )));
        }
        let limit = dt_limit(model);
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::Aliasing {
                dt,
                omega_max: model.bandwidth().unwrap_or(0.0),
                limit,
            });
        }
        let n = (duration / dt).ceil() as usize + 1;
        let len = (2 * n).next_power_of_two();
        let dw = 2.0 * PI / (len as f64 * dt);
        let norm = dw / (2.0 * PI).sqrt();
        let sigma = (0..=len / 2)
            .map(|k| model.psd(k as f64 * dw).map(|s| (s * norm).sqrt()))
            .collect::<Result<Vec<_>>>()?;
        let fft = FftPlanner::new().plan_fft_inverse(len);
        Ok(Synthesizer {
            dt,
            n,
            len,
            seed,
            sigma,
            fft,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Trajectory number `stream`; same `(seed, stream)` gives identical samples.
    pub fn trajectory(&self, stream: u64) -> NoiseTrajectory {
        let mut buf = Vec::new();
        let mut samples = Vec::new();
        self.fill(stream, &mut buf, &mut samples);
        NoiseTrajectory {
            dt: self.dt,
            seed: self.seed,
            stream,
            samples,
        }
    }

    /// Allocation-reusing form of [`trajectory`](Self::trajectory).
    pub fn fill(&self, stream: u64, buf: &mut Vec<Complex64>, out: &mut Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let len = self.len;
        let half = len / 2;
        buf.clear();
        buf.resize(len, Complex64::new(0.0, 0.0));
        let mut normal = || -> f64 { rng.sample(StandardNormal) };
        buf[0] = Complex64::new(self.sigma[0] * normal(), 0.0);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for k in 1..half {
            let s = self.sigma[k] * r;
            let z = Complex64::new(s * normal(), s * normal());
            buf[k] = z;
            buf[len - k] = z.conj();
        }
        buf[half] = Complex64::new(self.sigma[half] * normal(), 0.0);
        self.fft.process(buf);
        out.clear();
        out.extend(buf[..self.n].iter().map(|c| c.re));
    }
}

/// One trajectory of `duration` seconds, stream 0 of `seed`.
pub fn synthesize(model: &SpectralModel, dt: f64, duration: f64, seed: u64) -> Result<NoiseTrajectory> {
    Ok(Synthesizer::new(model, dt, duration, seed)?.trajectory(0))
}

/// One-sided periodogram `(w_k, S_est(w_k))` for `k = 0..=n/2`, normalised so
/// that its expectation is `S` in the same convention as the models.
pub fn periodogram(samples: &[f64], dt: f64) -> Vec<(f64, f64)> {
    let n = samples.len();
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let dw = 2.0 * PI / (n as f64 * dt);
    let scale = dt / (n as f64 * (2.0 * PI).sqrt());
    (0..=n / 2)
        .map(|k| (k as f64 * dw, buf[k].norm_sqr() * scale))
        .collect()
}
