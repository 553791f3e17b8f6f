use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::config::{default_window, load_config, load_truth, RunConfig};
use crate::error::{invalid, Error, Result};
use crate::filter::{harmonic_weights, sensitivity_matrix, HarmonicWeights};
use crate::io::{self, write_text};
use crate::simulate::{run_suite, SequenceFamily};
use crate::spectro::{
    first_harmonic, invert_corrected_fitted, invert_naive, rates_from_curves, subtract_baseline,
    Baseline, Method, RateSet, SpectrumEstimate,
};

pub const SUITE_MANIFEST: &str = "manifest.json";
const VERSION: &str = env!("CARGO_PKG_VERSION");

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn curve_file(n: usize, m: usize) -> String {
    let width = m.to_string().len();
    format!("curve_{n:0width$}.csv")
}

/// Runs the suite of `config` and writes one CSV per curve plus
/// `manifest.json` into `out`. Returns the files written.
pub fn simulate(config: &RunConfig, out: &Path, plot: bool) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let curves = run_suite(
        &config.model,
        config.tau_max,
        config.m,
        config.engine,
        &config.suite_options(),
    )?;
    let mut written = Vec::new();
    let mut entries = Vec::new();
    for (i, c) in curves.iter().enumerate() {
        let n = i + 1;
        let name = curve_file(n, config.m);
        let path = out.join(&name);
        write_text(&path, &io::decay_curve_csv(c))?;
        written.push(path);
        let mut e = json!({
            "n": n,
            "file": name,
            "tau_s": c.tau,
            "points": c.len(),
        });
        if config.engine == crate::simulate::Engine::MonteCarlo {
            e["seed"] = json!(crate::simulate::curve_seed(config.seed, n));
            e["trials"] = json!(config.trials);
        }
        entries.push(e);
    }
    let mut recorded = config.clone();
    recorded.output = None;
    let manifest = json!({
        "schema": "ddspec/suite-manifest/v1",
        "version": VERSION,
        "command": "simulate",
        "config": recorded,
        "curves": entries,
    });
    let path = out.join(SUITE_MANIFEST);
    write_text(&path, &to_json(&manifest)?)?;
    written.push(path);
    if plot {
        let mut gp = String::from("set logscale y\nset xlabel 'time (s)'\nset ylabel 'coherence'\nset datafile separator ','\nplot \\\n");
        for n in 1..=config.m {
            let sep = if n < config.m { ", \\" } else { "" };
            let _ = writeln!(
                gp,
                "  '{}' every ::1 using 1:2:3 with yerrorlines title 'n = {n}'{sep}",
                curve_file(n, config.m)
            );
        }
        let path = out.join("curves.gp");
        write_text(&path, &gp)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone)]
pub struct InvertOptions {
    pub method: Option<Method>,
    pub tail_window: Option<[usize; 2]>,
    /// `Some(None)` fits the baseline on the default window.
    pub baseline: Option<Option<[usize; 2]>>,
    pub tau_b_hint: Option<f64>,
    /// Sequence family for a bare rate table.
    pub family: SequenceFamily,
    pub hz: bool,
    pub plot: bool,
}

impl Default for InvertOptions {
    fn default() -> Self {
        InvertOptions {
            method: None,
            tail_window: None,
            baseline: None,
            tau_b_hint: None,
            family: SequenceFamily::Cpmg,
            hz: false,
            plot: false,
        }
    }
}

fn family_name(f: &SequenceFamily) -> &'static str {
    match f {
        SequenceFamily::Cpmg => "cpmg",
        SequenceFamily::Kdd => "kdd",
        SequenceFamily::Custom { .. } => "custom",
    }
}

/// What `invert` read: rates plus defaults taken from a suite manifest.
struct Input {
    rates: RateSet,
    family: SequenceFamily,
    config: Option<RunConfig>,
    tau_b_hint: Option<f64>,
}

fn read_suite(dir: &Path, opts: &InvertOptions) -> Result<Input> {
    let manifest = dir.join(SUITE_MANIFEST);
    let config = load_config(&manifest)?;
    let hint = opts.tau_b_hint.unwrap_or_else(|| config.tau_b_hint());
    let curves = (1..=config.m)
        .map(|n| {
            io::read_decay_curve(
                &dir.join(curve_file(n, config.m)),
                config.tau_max / n as f64,
                config.engine,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let rates = rates_from_curves(&curves, config.tau_max, hint)?;
    Ok(Input {
        rates,
        family: config.sequence.clone(),
        config: Some(config),
        tau_b_hint: Some(hint),
    })
}

pub struct InvertOutput {
    pub estimate: SpectrumEstimate,
    pub rates: RateSet,
    pub baseline: Option<Baseline>,
    pub files: Vec<PathBuf>,
}

/// `path` as seen from `dir`, so manifests do not depend on where a run lives.
fn relative_to(path: &Path, dir: &Path) -> String {
    let canon = |p: &Path| p.canonicalize().unwrap_or_else(|_| p.to_path_buf());
    let (p, d) = (canon(path), canon(dir));
    if p == d {
        return ".".into();
    }
    match p.strip_prefix(&d) {
        Ok(rel) => rel.display().to_string(),
        Err(_) => path.display().to_string(),
    }
}

/// Inverts a suite directory (curves are fitted first) or a rate table.
pub fn invert(input: &Path, out: &Path, opts: &InvertOptions) -> Result<InvertOutput> {
    let src = if input.is_dir() {
        read_suite(input, opts)?
    } else {
        Input {
            rates: io::read_rates(input)?,
            family: opts.family.clone(),
            config: None,
            tau_b_hint: None,
        }
    };
    let m = src.rates.m();
    let fit = src.config.as_ref().map(|c| c.fit.clone()).unwrap_or_default();
    let method = opts.method.unwrap_or(fit.method);
    let window = opts
        .tail_window
        .or(src.config.as_ref().and_then(|c| c.fit.tail_window))
        .unwrap_or_else(|| default_window(m));
    let baseline_window = match opts.baseline {
        Some(w) => Some(w.unwrap_or([1, m])),
        None if fit.baseline => Some(fit.baseline_window.unwrap_or([1, m])),
        None => None,
    };
    if matches!(src.family, SequenceFamily::Custom { .. }) {
        return Err(invalid(
            "inversion assumes the CPMG harmonic comb; custom sequences are not supported",
        ));
    }
    let seq = src.family.at(src.rates.tau_max())?;
    let hw: HarmonicWeights = harmonic_weights(&seq, m)?;
    let u = sensitivity_matrix(&hw, m)?;

    let mut files = Vec::new();
    let rates_path = out.join("rates.csv");
    if input.is_dir() {
        write_text(&rates_path, &io::rates_csv(&src.rates))?;
        files.push(rates_path.clone());
    }
    let (rates, baseline) = match baseline_window {
        Some(w) => {
            let (r, b) = subtract_baseline(&src.rates, (w[0], w[1]))?;
            (r, Some(b))
        }
        None => (src.rates.clone(), None),
    };
    let estimate = match method {
        Method::Naive => invert_naive(&rates, &u)?,
        Method::FirstHarmonic => first_harmonic(&rates, &u)?,
        Method::Corrected => invert_corrected_fitted(&rates, &u, &hw, (window[0], window[1]))
            .map_err(|e| match e {
                Error::TailModelRejected { .. } | Error::InsufficientData(_) => Error::Config(format!(
                    "{e} on tail window [{}, {}]; choose another window with --tail-window LO:HI",
                    window[0], window[1]
                )),
                e => e,
            })?,
    };
    let name = format!("spectrum-{method}.csv");
    let spec_path = out.join(&name);
    write_text(&spec_path, &io::spectrum_csv(&estimate, opts.hz))?;
    files.push(spec_path);

    let manifest = json!({
        "schema": "ddspec/invert-manifest/v1",
        "version": VERSION,
        "command": "invert",
        "input": relative_to(input, out),
        "family": family_name(&src.family),
        "method": method,
        "m": m,
        "tau_max_s": rates.tau_max(),
        "omega_min_rad_per_s": estimate.omega_min,
        "tau_b_hint_s": src.tau_b_hint,
        "tail_window": if method == Method::Corrected { Some(window) } else { None },
        "tail": estimate.tail,
        "baseline": baseline,
        "frequency_unit": if opts.hz { "Hz" } else { "rad/s" },
        "rates_file": if input.is_dir() { Some("rates.csv") } else { None },
        "spectrum_file": name,
        "notes": estimate.notes,
        "config": src.config.map(|mut c| { c.output = None; c }),
    });
    let man_path = out.join(format!("invert-{method}.json"));
    write_text(&man_path, &to_json(&manifest)?)?;
    files.push(man_path);

    if opts.plot {
        let col = if opts.hz { "f (Hz)" } else { "omega (rad/s)" };
        let gp = format!(
            "set logscale xy\nset xlabel '{col}'\nset ylabel 'S'\nset datafile separator ','\n\
             plot '{name}' every ::1 using 2:3:4 with yerrorbars title '{method}'\n"
        );
        let p = out.join(format!("spectrum-{method}.gp"));
        write_text(&p, &gp)?;
        files.push(p);
    }
    Ok(InvertOutput {
        estimate,
        rates,
        baseline,
        files,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub j: usize,
    pub omega_rad_per_s: f64,
    pub estimate: Option<f64>,
    pub sigma: Option<f64>,
    pub truth: f64,
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub schema: &'static str,
    pub version: &'static str,
    pub method: Method,
    pub compared: usize,
    pub holes: Vec<usize>,
    pub max_abs_relative_error: f64,
    pub mean_abs_relative_error: f64,
    pub rms_relative_error: f64,
    /// `sum ((S - truth) / sigma)^2 / count` over points with `sigma > 0`.
    pub reduced_chi2: Option<f64>,
    pub rows: Vec<CompareRow>,
}

/// Per-point relative error of an estimate against a model. A `tau_max`
/// recorded with the model must match the estimate grid.
pub fn compare(estimate: &Path, truth: &Path, out: Option<&Path>) -> Result<CompareReport> {
    let est = io::read_spectrum(estimate)?;
    let (model, tau_max) = load_truth(truth)?;
    if let Some(t) = tau_max {
        let w = std::f64::consts::PI / t;
        if (w - est.omega_min).abs() > 1e-6 * w {
            return Err(Error::GridMismatch(format!(
                "estimate omega_min = {:e} rad/s but the reference suite has {w:e} rad/s",
                est.omega_min
            )));
        }
    }
    let mut rows = Vec::new();
    let mut chi2 = 0.0;
    let mut chi_n = 0usize;
    for j in 1..=est.m() {
        let w = est.omega(j);
        let truth = model.psd(w)?;
        let v = est.get(j);
        if let Some(v) = v {
            if v.sigma > 0.0 {
                chi2 += ((v.value - truth) / v.sigma).powi(2);
                chi_n += 1;
            }
        }
        rows.push(CompareRow {
            j,
            omega_rad_per_s: w,
            estimate: v.map(|v| v.value),
            sigma: v.map(|v| v.sigma),
            truth,
            relative_error: v.map(|v| v.value / truth - 1.0),
        });
    }
    let errs: Vec<f64> = rows.iter().filter_map(|r| r.relative_error).collect();
    if errs.is_empty() {
        return Err(Error::InsufficientData("estimate has no values".into()));
    }
    let k = errs.len() as f64;
    let report = CompareReport {
        schema: "ddspec/comparison/v1",
        version: VERSION,
        method: est.method,
        compared: errs.len(),
        holes: rows.iter().filter(|r| r.estimate.is_none()).map(|r| r.j).collect(),
        max_abs_relative_error: errs.iter().fold(0.0, |a, e| a.max(e.abs())),
        mean_abs_relative_error: errs.iter().map(|e| e.abs()).sum::<f64>() / k,
        rms_relative_error: (errs.iter().map(|e| e * e).sum::<f64>() / k).sqrt(),
        reduced_chi2: (chi_n > 0).then(|| chi2 / chi_n as f64),
        rows,
    };
    if let Some(out) = out {
        write_text(&out.join("comparison.json"), &to_json(&report)?)?;
        let mut csv = io::schema_line(io::COMPARISON);
        csv.push_str("\nj,omega_rad_per_s,S,sigma_S,S_true,relative_error\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:e}"));
        for r in &report.rows {
            let _ = writeln!(
                csv,
                "{},{:e},{},{},{:e},{}",
                r.j,
                r.omega_rad_per_s,
                opt(r.estimate),
                opt(r.sigma),
                r.truth,
                opt(r.relative_error)
            );
        }
        write_text(&out.join("comparison.csv"), &csv)?;
    }
    Ok(report)
}

pub fn summary(report: &CompareReport) -> String {
    let mut s = format!(
        "{} estimate, {} point(s) compared: max |rel err| {:.3e}, mean {:.3e}, rms {:.3e}",
        report.method,
        report.compared,
        report.max_abs_relative_error,
        report.mean_abs_relative_error,
        report.rms_relative_error
    );
    if let Some(c) = report.reduced_chi2 {
        let _ = write!(s, ", chi2/point {c:.3}");
    }
    if !report.holes.is_empty() {
        let _ = write!(s, ", holes at j = {:?}", report.holes);
    }
    s
}

/// Harmonic weights of `family` at spacing `tau`, and optionally the
/// `matrix x matrix` sensitivity matrix.
pub fn weights(
    family: &SequenceFamily,
    tau: f64,
    k_max: usize,
    matrix: Option<usize>,
    hz: bool,
) -> Result<(String, Option<String>)> {
    let seq = family.at(tau)?;
    let hw = harmonic_weights(&seq, k_max)?;
    let u = matrix
        .map(|m| sensitivity_matrix(&hw, m).map(|u| io::matrix_csv(&u)))
        .transpose()?;
    Ok((io::weights_csv(&hw, hz), u))
}
