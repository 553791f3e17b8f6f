use std::f64::consts::PI;

use ddspec::noise::{periodogram, SpectralModel, Synthesizer, TailRule};
use proptest::prelude::*;

const TAU_B: f64 = 1e-4;

fn lorentzian() -> SpectralModel {
    SpectralModel::lorentzian(4e8, TAU_B).unwrap()
}

#[test]
fn averaged_periodogram_recovers_spectrum() {
    let m = lorentzian();
    let dt = 1e-6;
    let syn = Synthesizer::new(&m, dt, 4e-2, 11).unwrap();
    let trials = 200;
    let mut avg: Vec<(f64, f64)> = Vec::new();
    for i in 0..trials {
        let p = periodogram(&syn.trajectory(i).samples, dt);
        if avg.is_empty() {
            avg = p.iter().map(|&(w, _)| (w, 0.0)).collect();
        }
        for (a, (_, s)) in avg.iter_mut().zip(p) {
            a.1 += s / trials as f64;
        }
    }
    // groups of 32 bins from a few bins above zero up to 10 / tau_B
    let group = 32;
    let mut checked = 0;
    for chunk in avg[4..].chunks(group) {
        if chunk.len() < group || chunk[group - 1].0 > 10.0 / TAU_B {
            break;
        }
        let est = chunk.iter().map(|c| c.1).sum::<f64>() / group as f64;
        let truth = chunk.iter().map(|c| m.psd(c.0).unwrap()).sum::<f64>() / group as f64;
        assert!(
            (est / truth - 1.0).abs() < 0.05,
            "w = {:e}: {est:e} vs {truth:e}",
            chunk[0].0
        );
        checked += 1;
    }
    assert!(checked > 10);
}

#[test]
fn samples_are_gaussian_with_model_variance() {
    let m = lorentzian();
    let var = m.autocorrelation(0.0).unwrap();
    let dt = 2e-6;
    let syn = Synthesizer::new(&m, dt, 0.2, 5).unwrap();
    // samples 10 tau_B apart are effectively independent
    let stride = (10.0 * TAU_B / dt) as usize;
    let mut z = Vec::new();
    for i in 0..8 {
        let x = syn.trajectory(i).samples;
        z.extend(x.iter().step_by(stride).map(|v| v / var.sqrt()));
    }
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let m2 = z.iter().map(|v| v * v).sum::<f64>() / n;
    let skew = z.iter().map(|v| v.powi(3)).sum::<f64>() / n;
    let kurt = z.iter().map(|v| v.powi(4)).sum::<f64>() / n;
    assert!(n > 1000.0);
    assert!(mean.abs() < 4.0 / n.sqrt(), "mean {mean}");
    assert!((m2 - 1.0).abs() < 4.0 * (2.0 / n).sqrt(), "variance ratio {m2}");
    assert!(skew.abs() < 4.0 * (15.0 / n).sqrt(), "skew {skew}");
    assert!((kurt - 3.0).abs() < 4.0 * (96.0 / n).sqrt(), "kurtosis {kurt}");
    let within = |k: f64| z.iter().filter(|v| v.abs() < k).count() as f64 / n;
    assert!((within(1.0) - 0.682_689).abs() < 4.0 * (0.22 / n).sqrt());
    assert!((within(2.0) - 0.954_500).abs() < 4.0 * (0.05 / n).sqrt());
}

#[test]
fn fitted_correlation_time_matches_model() {
    let m = lorentzian();
    let dt = 2e-6;
    let syn = Synthesizer::new(&m, dt, 0.1, 21).unwrap();
    let lags: Vec<usize> = (5..=100).step_by(5).collect(); // 0.1 .. 2 tau_B
    let mut acf = vec![0.0; lags.len()];
    let trials = 20;
    for i in 0..trials {
        let x = syn.trajectory(i).samples;
        for (a, &l) in acf.iter_mut().zip(&lags) {
            let s: f64 = x.iter().zip(&x[l..]).map(|(p, q)| p * q).sum();
            *a += s / (x.len() - l) as f64 / trials as f64;
        }
    }
    // least-squares slope of ln G against lag
    let pts: Vec<(f64, f64)> = lags
        .iter()
        .zip(&acf)
        .map(|(&l, &g)| (l as f64 * dt, g.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let tau = -sxx / sxy;
    assert!((tau / TAU_B - 1.0).abs() < 0.05, "tau_B fit {tau:e}");
}

#[test]
fn autocorrelation_matches_model_at_several_lags() {
    let m = SpectralModel::gaussian(1e8, TAU_B).unwrap();
    let dt = 2e-6;
    let syn = Synthesizer::new(&m, dt, 0.1, 8).unwrap();
    let g0 = m.autocorrelation(0.0).unwrap();
    for lag in [0usize, 25, 50, 100] {
        let mut acc = 0.0;
        let trials = 10;
        for i in 0..trials {
            let x = syn.trajectory(i).samples;
            let s: f64 = x.iter().zip(&x[lag..]).map(|(p, q)| p * q).sum();
            acc += s / (x.len() - lag) as f64 / trials as f64;
        }
        let exact = m.autocorrelation(lag as f64 * dt).unwrap();
        // roughly 5000 correlation times of data: a few percent of G(0)
        assert!((acc - exact).abs() < 0.03 * g0, "lag {lag}: {acc} vs {exact}");
    }
}

#[test]
fn white_noise_discrete_variance_scales_inversely_with_dt() {
    let m = SpectralModel::white(0.5).unwrap();
    for dt in [1e-6, 4e-6] {
        let x = Synthesizer::new(&m, dt, 20000.0 * dt, 1).unwrap().trajectory(0).samples;
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let expected = (2.0 * PI).sqrt() * 0.5 / dt;
        assert!((var / expected - 1.0).abs() < 0.04);
    }
}

fn arb_model() -> impl Strategy<Value = SpectralModel> {
    prop_oneof![
        (1e-3f64..1e3).prop_map(|s| SpectralModel::white(s).unwrap()),
        (1e2f64..1e9, 1e-6f64..1e-2).prop_map(|(b, t)| SpectralModel::lorentzian(b, t).unwrap()),
        (1e2f64..1e9, 1e-6f64..1e-2).prop_map(|(b, t)| SpectralModel::gaussian(b, t).unwrap()),
        (1e-3f64..1e3, 1e2f64..1e5, 0.5f64..5.0, 1.0f64..1e3)
            .prop_map(|(s, w, a, c)| SpectralModel::power_law(s, w, a, c).unwrap()),
        (1e2f64..1e9, 1e-6f64..1e-2, 1e3f64..1e6, 1e2f64..1e4).prop_map(|(b, t, w, g)| {
            SpectralModel::modulated(SpectralModel::lorentzian(b, t).unwrap(), b, w, g).unwrap()
        }),
        (1e-3f64..1e3, 1e-3f64..1e3).prop_map(|(a, b)| {
            SpectralModel::tabulated(vec![0.0, 1e3, 1e4], vec![a, b, a], TailRule::Constant)
                .unwrap()
        }),
    ]
}

proptest! {
    #[test]
    fn psd_even_and_non_negative(m in arb_model(), u in -1.0f64..1.0) {
        let reach = 1e3 * m.bandwidth().unwrap_or(1e4);
        let w = u * reach;
        let a = m.psd(w).unwrap();
        prop_assert!(a >= 0.0 && a.is_finite());
        prop_assert_eq!(a, m.psd(-w).unwrap());
    }
}
