use std::f64::consts::PI;

use ddspec::filter::harmonic_weights;
use ddspec::noise::{SpectralModel, TailRule};
use ddspec::sequence::PulseSequence;
use ddspec::simulate::{
    analytic_chi, analytic_curve, monte_carlo_curve, monte_carlo_curve_with_dt,
    monte_carlo_phases, run_suite, Engine, Schedule, SuiteOptions,
};
use ddspec::Error;

/// `1/2 int int f f b^2 exp(-|t - t'| / tau_b)` summed segment by segment.
fn time_domain_chi(b2: f64, tau_b: f64, seq: &PulseSequence, cycles: usize) -> f64 {
    let mut segs = Vec::new();
    let mut sign = 1.0;
    for c in 0..cycles {
        let off = c as f64 * seq.cycle_length();
        let mut start = 0.0;
        for &p in seq.pulse_times() {
            segs.push((off + start, off + p, sign));
            sign = -sign;
            start = p;
        }
        segs.push((off + start, off + seq.cycle_length(), sign));
    }
    let t = tau_b;
    let mut chi = 0.0;
    for (i, &(a, b, s)) in segs.iter().enumerate() {
        let l = b - a;
        chi += s * s * b2 * t * (l + t * (-l / t).exp_m1());
        for &(c, d, r) in &segs[i + 1..] {
            let m = d - c;
            chi += s * r * b2 * t * t * (-l / t).exp_m1() * (-m / t).exp_m1() * (-(c - b) / t).exp();
        }
    }
    chi
}

#[test]
fn lorentzian_chi_matches_time_domain_oracle() {
    let (b2, tb) = (1e8, 1e-4);
    let model = SpectralModel::lorentzian(b2, tb).unwrap();
    for (seq, cycles) in [
        (PulseSequence::cpmg(1e-4).unwrap(), 1),
        (PulseSequence::cpmg(1e-4).unwrap(), 10),
        (PulseSequence::cpmg(3e-5).unwrap(), 37),
        (PulseSequence::udd(3, 4e-4).unwrap(), 6),
        (PulseSequence::kdd(2e-5).unwrap(), 3),
    ] {
        let a = analytic_chi(&model, &seq, cycles).unwrap();
        let o = time_domain_chi(b2, tb, &seq, cycles);
        assert!((a / o - 1.0).abs() < 1e-6, "{} M={cycles}: {a} vs {o}", seq.label());
    }
}

#[test]
fn modulated_chi_matches_time_domain_oracle() {
    // b2 exp(-g|t|) cos(W t) is the real part of an exponential with complex rate
    let (b2, g, w) = (5e7, 4e3, 3e4);
    let base = SpectralModel::lorentzian(0.0, 1e-4).unwrap();
    let model = SpectralModel::modulated(base, b2, w, g).unwrap();
    let seq = PulseSequence::cpmg(8e-5).unwrap();
    let cycles = 7;
    // brute-force double sum on a fine grid, exact within each cell for the kernel
    let total = cycles as f64 * seq.cycle_length();
    let n = 4000;
    let h = total / n as f64;
    let f: Vec<f64> = (0..n)
        .map(|i| seq.modulation((i as f64 + 0.5) * h, cycles).unwrap())
        .collect();
    // average of the kernel over a pair of cells, by 4-point Gauss in each
    let gx = [-0.861_136_311_594_053, -0.339_981_043_584_856, 0.339_981_043_584_856, 0.861_136_311_594_053];
    let gw = [0.347_854_845_137_454, 0.652_145_154_862_546, 0.652_145_154_862_546, 0.347_854_845_137_454];
    let kern = |x: f64| b2 * (-g * x.abs()).exp() * (w * x).cos();
    let cell = |lag: usize| -> f64 {
        let mut acc = 0.0;
        for (xi, wi) in gx.iter().zip(&gw) {
            for (xj, wj) in gx.iter().zip(&gw) {
                let d = lag as f64 * h + 0.5 * h * (xi - xj);
                acc += wi * wj * kern(d) / 4.0;
            }
        }
        acc * h * h
    };
    let cells: Vec<f64> = (0..n).map(cell).collect();
    let mut chi = 0.0;
    for i in 0..n {
        chi += 0.5 * f[i] * f[i] * cells[0];
        for j in i + 1..n {
            chi += f[i] * f[j] * cells[j - i];
        }
    }
    let a = analytic_chi(&model, &seq, cycles).unwrap();
    // cells straddling a pulse carry the midpoint sign, an O(h) error per jump
    assert!((a / chi - 1.0).abs() < 2e-3, "{a} vs {chi}");
}

#[test]
fn white_noise_rate_independent_of_spacing() {
    let model = SpectralModel::white(3.0).unwrap();
    let rates: Vec<f64> = [50e-6, 100e-6, 200e-6]
        .iter()
        .map(|&tau| {
            let seq = PulseSequence::cpmg(tau).unwrap();
            analytic_chi(&model, &seq, 8).unwrap() / (8.0 * seq.cycle_length())
        })
        .collect();
    for r in &rates {
        assert!((r / rates[0] - 1.0).abs() < 1e-2);
    }
}

#[test]
fn static_noise_is_refocused() {
    // correlation time of seconds against a 200 us cycle
    let (b2, tb, tau) = (1e6, 10.0, 1e-4);
    let model = SpectralModel::lorentzian(b2, tb).unwrap();
    let seq = PulseSequence::cpmg(tau).unwrap();
    let t = 4.0 * seq.cycle_length();
    let chi = analytic_chi(&model, &seq, 4).unwrap();
    let free = 0.5 * b2 * t * t;
    assert!(chi < 1e-4 * free, "{chi} vs free {free}");
    // only the linear cusp of the correlation survives: b2 * pulses * tau^3 / (12 tau_B)
    let cusp = b2 * 8.0 * tau.powi(3) / (12.0 * tb);
    assert!((chi / cusp - 1.0).abs() < 1e-3, "{chi} vs {cusp}");
    let o = time_domain_chi(b2, tb, &seq, 4);
    assert!((chi / o - 1.0).abs() < 1e-4, "{chi} vs {o}");
}

#[test]
fn many_cycles_approach_harmonic_sum() {
    let model = SpectralModel::lorentzian(1e8, 1e-4).unwrap();
    let seq = PulseSequence::cpmg(1e-4).unwrap();
    let m = 1000;
    let rate = analytic_chi(&model, &seq, m).unwrap() / (m as f64 * seq.cycle_length());
    let hw = harmonic_weights(&seq, 10_000).unwrap();
    let sum: f64 = (1..=10_000)
        .map(|k| hw.absolute(k) * model.psd(k as f64 * hw.base_frequency()).unwrap())
        .sum();
    assert!((rate / sum - 1.0).abs() < 1e-2, "{rate} vs {sum}");
}

#[test]
fn analytic_decay_is_monotone_and_exponential() {
    let tb = 1e-4;
    let model = SpectralModel::lorentzian(2e8, tb).unwrap();
    let seq = PulseSequence::cpmg(5e-5).unwrap();
    let cycles: Vec<usize> = (1..=60).collect();
    let c = analytic_curve(&model, &seq, &cycles).unwrap();
    assert_eq!(c.signal[0], 1.0);
    assert!(c.signal.windows(2).all(|w| w[1] <= w[0]));
    let pts: Vec<(f64, f64)> = c
        .times
        .iter()
        .zip(&c.signal)
        .filter(|(&t, _)| t > 3.0 * tb)
        .map(|(&t, &s)| (t, s.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    assert!(r2 > 0.999, "R^2 = {r2}");
}

fn engine_agreement(model: &SpectralModel, seq: &PulseSequence, trials: usize, seed: u64) {
    let cycles = Schedule::default().cycles(model, seq).unwrap();
    let a = analytic_curve(model, seq, &cycles).unwrap();
    let m = monte_carlo_curve(model, seq, &cycles, trials, seed).unwrap();
    assert_eq!(a.times, m.times);
    for i in 1..a.len() {
        let d = (a.signal[i] - m.signal[i]).abs();
        assert!(
            d <= 3.0 * m.sigma[i],
            "{model:?} t = {:e}: analytic {} vs MC {} +- {}",
            a.times[i],
            a.signal[i],
            m.signal[i],
            m.sigma[i]
        );
    }
}

#[test]
fn engines_agree_across_model_kinds() {
    let seq = PulseSequence::cpmg(1e-4).unwrap();
    let lor = SpectralModel::lorentzian(1e8, 1e-4).unwrap();
    engine_agreement(&lor, &seq, 1000, 1);
    engine_agreement(&SpectralModel::gaussian(1e8, 1e-4).unwrap(), &seq, 1000, 2);
    engine_agreement(&SpectralModel::white(800.0).unwrap(), &seq, 1000, 3);
    engine_agreement(
        &SpectralModel::power_law(1e3, 2e4, 2.5, 5e3).unwrap(),
        &seq,
        1000,
        4,
    );
    engine_agreement(
        &SpectralModel::modulated(lor.clone(), 5e7, 3.1e4, 3e3).unwrap(),
        &seq,
        1000,
        5,
    );
    let tab = SpectralModel::tabulated(
        vec![0.0, 1e4, 3e4, 1e5],
        vec![8e3, 4e3, 1e3, 50.0],
        TailRule::PowerLaw { exponent: 2.0 },
    )
    .unwrap();
    engine_agreement(&tab, &seq, 1000, 6);
}

#[test]
fn gaussian_phase_identity() {
    let model = SpectralModel::lorentzian(1e8, 1e-4).unwrap();
    let seq = PulseSequence::cpmg(1e-4).unwrap();
    let cycles = [3, 8];
    let trials = 4000;
    let phases = monte_carlo_phases(&model, &seq, &cycles, trials, 77, None).unwrap();
    for j in 0..cycles.len() {
        let var = phases.iter().map(|p| p[j] * p[j]).sum::<f64>() / trials as f64;
        let mean_cos = phases.iter().map(|p| p[j].cos()).sum::<f64>() / trials as f64;
        let sd = (phases.iter().map(|p| p[j].cos().powi(2)).sum::<f64>() / trials as f64
            - mean_cos * mean_cos)
            .sqrt();
        let expected = (-0.5 * var).exp();
        assert!((mean_cos - expected).abs() < 4.0 * sd / (trials as f64).sqrt());
    }
}

#[test]
fn zero_noise_keeps_full_coherence() {
    let model = SpectralModel::lorentzian(0.0, 1e-4).unwrap();
    let seq = PulseSequence::cpmg(1e-4).unwrap();
    let c = monte_carlo_curve(&model, &seq, &[1, 2, 5], 100, 0).unwrap();
    assert!(c.signal.iter().all(|&s| s == 1.0));
    assert!(c.sigma.iter().all(|&s| s == 0.0));
}

#[test]
fn monte_carlo_is_deterministic_and_validates() {
    let model = SpectralModel::lorentzian(1e8, 1e-4).unwrap();
    let seq = PulseSequence::cpmg(1e-4).unwrap();
    let a = monte_carlo_curve(&model, &seq, &[2, 4], 200, 9).unwrap();
    let b = monte_carlo_curve(&model, &seq, &[2, 4], 200, 9).unwrap();
    assert_eq!(a, b);
    assert!(monte_carlo_curve(&model, &seq, &[2, 4], 50, 9).is_err());
    assert!(monte_carlo_curve_with_dt(&model, &seq, &[2], 200, 9, Some(1e-5)).is_err());
    // fine enough for the segments but too coarse for a fast bath
    let fast = SpectralModel::lorentzian(1e8, 1e-7).unwrap();
    assert!(matches!(
        monte_carlo_curve_with_dt(&fast, &seq, &[2], 200, 9, Some(2e-6)),
        Err(Error::Aliasing { .. })
    ));
}

#[test]
fn suite_geometry() {
    let model = SpectralModel::lorentzian(1e7, 1e-4).unwrap();
    let opts = SuiteOptions {
        schedule: Schedule {
            points: 4,
            ..Schedule::default()
        },
        ..SuiteOptions::default()
    };
    let suite = run_suite(&model, 2e-3, 40, Engine::Analytic, &opts).unwrap();
    assert_eq!(suite.len(), 40);
    assert!((suite[0].tau - 2e-3).abs() < 1e-15);
    assert!((suite[39].tau - 5e-5).abs() < 1e-15);
    let w_min = PI / suite[0].tau;
    assert!((w_min - 1570.796).abs() < 1e-3);

    let one = run_suite(&model, 2e-3, 1, Engine::Analytic, &opts).unwrap();
    let seq = PulseSequence::cpmg(2e-3).unwrap();
    let direct = analytic_curve(&model, &seq, &opts.schedule.cycles(&model, &seq).unwrap()).unwrap();
    assert_eq!(one, vec![direct]);
}
