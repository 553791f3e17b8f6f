//! CSV artifacts. Every file starts with `# schema: ddspec/<name>/v1`; further
//! `#` lines are comments. Columns are documented in `docs/schemas.md`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result, SchemaViolation};
use crate::filter::{HarmonicWeights, SensitivityMatrix};
use crate::simulate::{DecayCurve, Engine};
use crate::spectro::{Method, Rate, RateSet, SpectralValue, SpectrumEstimate};

pub const DECAY_CURVE: &str = "decay-curve";
pub const RATES: &str = "rates";
pub const SPECTRUM: &str = "spectrum";
pub const WEIGHTS: &str = "weights";
pub const MATRIX: &str = "matrix";
pub const TABULATED: &str = "tabulated-spectrum";
pub const COMPARISON: &str = "comparison";

pub fn schema_line(name: &str) -> String {
    format!("# schema: ddspec/{name}/v1")
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:e}"))
}

pub fn decay_curve_csv(curve: &DecayCurve) -> String {
    let mut s = schema_line(DECAY_CURVE);
    let _ = writeln!(s, "\n# engine: {} tau_s: {:e}", curve.engine, curve.tau);
    s.push_str("time_s,signal,sigma,cycles\n");
    for i in 0..curve.len() {
        let _ = writeln!(
            s,
            "{:e},{:e},{:e},{}",
            curve.times[i], curve.signal[i], curve.sigma[i], curve.cycles[i]
        );
    }
    s
}

pub fn rates_csv(rates: &RateSet) -> String {
    let mut s = schema_line(RATES);
    s.push_str("\nn,tau_s,R_per_s,sigma_R,r_squared\n");
    for n in 1..=rates.m() {
        let r = rates.get(n);
        let _ = writeln!(
            s,
            "{n},{:e},{},{},{}",
            rates.tau(n),
            opt(r.map(|r| r.value)),
            opt(r.map(|r| r.sigma)),
            opt(r.and_then(|r| r.r_squared))
        );
    }
    s
}

/// Spectrum table; with `hz` the frequency column is `f_hz` instead of
/// angular frequency.
pub fn spectrum_csv(est: &SpectrumEstimate, hz: bool) -> String {
    let mut s = schema_line(SPECTRUM);
    s.push_str(if hz {
        "\nj,f_hz,S,sigma_S,method\n"
    } else {
        "\nj,omega_rad_per_s,S,sigma_S,method\n"
    });
    for j in 1..=est.m() {
        let w = est.omega(j);
        let f = if hz { w / (2.0 * std::f64::consts::PI) } else { w };
        let v = est.get(j);
        let _ = writeln!(
            s,
            "{j},{f:e},{},{},{}",
            opt(v.map(|v| v.value)),
            opt(v.map(|v| v.sigma)),
            est.method
        );
    }
    s
}

pub fn weights_csv(hw: &HarmonicWeights, hz: bool) -> String {
    let mut s = schema_line(WEIGHTS);
    let _ = writeln!(s, "\n# sequence: {}", hw.label());
    s.push_str(if hz {
        "k,f_hz,A_k2,A_k2_over_A_1_2\n"
    } else {
        "k,omega_rad_per_s,A_k2,A_k2_over_A_1_2\n"
    });
    for k in 1..=hw.k_max() {
        let w = k as f64 * hw.base_frequency();
        let f = if hz { w / (2.0 * std::f64::consts::PI) } else { w };
        let _ = writeln!(s, "{k},{f:e},{:e},{:e}", hw.absolute(k), hw.relative(k));
    }
    s
}

/// Non-zero entries of the sensitivity matrix.
pub fn matrix_csv(u: &SensitivityMatrix) -> String {
    let mut s = schema_line(MATRIX);
    let _ = writeln!(s, "\n# omega_min_rad_per_s: {:e}", u.omega_min());
    s.push_str("n,j,U_nj\n");
    for n in 1..=u.dim() {
        for j in n..=u.dim() {
            let v = u.get(n, j);
            if v != 0.0 {
                let _ = writeln!(s, "{n},{j},{v:e}");
            }
        }
    }
    s
}

/// A parsed table: header names and rows with their line numbers.
struct Table {
    header: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn column(&self, names: &[&str]) -> Option<usize> {
        self.header.iter().position(|h| names.contains(&h.as_str()))
    }
}

/// Reads the table and resolves the required columns. Malformed records are
/// returned as violations alongside the rows that parsed.
fn read_table(
    path: &Path,
    schema: &str,
    required: &[&[&str]],
) -> Result<(Table, Vec<usize>, Vec<SchemaViolation>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let schema_error = |line, message: String| Error::Schema {
        path: path.to_path_buf(),
        violations: vec![SchemaViolation { line, message }],
    };
    let first = text.lines().next().unwrap_or("").trim();
    if first != schema_line(schema) {
        return Err(schema_error(
            1,
            format!("expected header '{}', found '{first}'", schema_line(schema)),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| schema_error(2, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let header_line = reader.position().line();
    let mut table = Table {
        header,
        rows: Vec::new(),
    };
    let mut cols = Vec::new();
    let mut missing = Vec::new();
    for names in required {
        match table.column(names) {
            Some(c) => cols.push(c),
            None => missing.push(SchemaViolation {
                line: header_line,
                message: format!("missing column '{}'", names.join("' or '")),
            }),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            violations: missing,
        });
    }
    let mut violations = Vec::new();
    for rec in reader.records() {
        match rec {
            Ok(r) => {
                let line = r.position().map_or(0, |p| p.line());
                if r.len() != table.header.len() {
                    violations.push(SchemaViolation {
                        line,
                        message: format!(
                            "expected {} fields, found {}",
                            table.header.len(),
                            r.len()
                        ),
                    });
                    continue;
                }
                table.rows.push((line, r.iter().map(str::to_string).collect()));
            }
            Err(e) => violations.push(SchemaViolation {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            }),
        }
    }
    Ok((table, cols, violations))
}

/// Field parser that records violations instead of failing on the first.
struct Fields<'a> {
    header: &'a [String],
    violations: Vec<SchemaViolation>,
}

impl Fields<'_> {
    fn num(&mut self, line: u64, row: &[String], col: usize) -> Option<f64> {
        match row[col].parse::<f64>() {
            Ok(v) if v.is_finite() => Some(v),
            _ => {
                self.violations.push(SchemaViolation {
                    line,
                    message: format!("{} = '{}' is not a finite number", self.header[col], row[col]),
                });
                None
            }
        }
    }

    fn opt_num(&mut self, line: u64, row: &[String], col: usize) -> Option<Option<f64>> {
        if row[col].is_empty() {
            Some(None)
        } else {
            self.num(line, row, col).map(Some)
        }
    }

    fn index(&mut self, line: u64, row: &[String], col: usize) -> Option<usize> {
        match row[col].parse::<usize>() {
            Ok(v) if v >= 1 => Some(v),
            _ => {
                self.violations.push(SchemaViolation {
                    line,
                    message: format!(
                        "{} = '{}' is not a positive integer",
                        self.header[col], row[col]
                    ),
                });
                None
            }
        }
    }

    fn fail(&mut self, line: u64, message: String) {
        self.violations.push(SchemaViolation { line, message });
    }

    fn finish(self, path: &Path) -> Result<()> {
        if self.violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Schema {
                path: path.to_path_buf(),
                violations: self.violations,
            })
        }
    }
}

pub fn read_decay_curve(path: &Path, tau: f64, engine: Engine) -> Result<DecayCurve> {
    let (table, c, early) = read_table(
        path,
        DECAY_CURVE,
        &[&["time_s"], &["signal"], &["sigma"], &["cycles"]],
    )?;
    let mut f = Fields {
        header: &table.header,
        violations: early,
    };
    let mut curve = DecayCurve {
        times: Vec::new(),
        cycles: Vec::new(),
        signal: Vec::new(),
        sigma: Vec::new(),
        tau,
        engine,
    };
    for (line, row) in &table.rows {
        let t = f.num(*line, row, c[0]);
        let s = f.num(*line, row, c[1]);
        let e = f.num(*line, row, c[2]);
        let m = row[c[3]].parse::<usize>().ok();
        if m.is_none() {
            f.fail(*line, format!("cycles = '{}' is not an integer", row[c[3]]));
        }
        if let Some(e) = e {
            if e < 0.0 {
                f.fail(*line, format!("sigma = {e} is negative"));
            }
        }
        if let (Some(t), Some(s), Some(e), Some(m)) = (t, s, e, m) {
            if curve.times.last().is_some_and(|&p| t <= p) {
                f.fail(*line, format!("time_s = {t} does not increase"));
            }
            curve.times.push(t);
            curve.signal.push(s);
            curve.sigma.push(e);
            curve.cycles.push(m);
        }
    }
    f.finish(path)?;
    Ok(curve)
}

/// Rate table. Rows may be missing or have an empty `R_per_s`; those `n`
/// become holes. All rows must share one `tau_max = n * tau_s`.
pub fn read_rates(path: &Path) -> Result<RateSet> {
    let (table, c, early) = read_table(
        path,
        RATES,
        &[&["n"], &["tau_s"], &["R_per_s"], &["sigma_R"], &["r_squared"]],
    )?;
    let mut f = Fields {
        header: &table.header,
        violations: early,
    };
    let mut entries: Vec<(usize, Option<Rate>)> = Vec::new();
    let mut tau_max: Option<(f64, u64)> = None;
    for (line, row) in &table.rows {
        let line = *line;
        let n = f.index(line, row, c[0]);
        let tau = f.num(line, row, c[1]);
        let value = f.opt_num(line, row, c[2]);
        let sigma = f.opt_num(line, row, c[3]);
        let r2 = f.opt_num(line, row, c[4]);
        let (Some(n), Some(tau), Some(value), Some(sigma), Some(r2)) = (n, tau, value, sigma, r2)
        else {
            continue;
        };
        if !(tau > 0.0) {
            f.fail(line, format!("tau_s = {tau} must be positive"));
            continue;
        }
        let tm = n as f64 * tau;
        match tau_max {
            None => tau_max = Some((tm, line)),
            Some((t0, l0)) if (tm - t0).abs() > 1e-6 * t0 => f.fail(
                line,
                format!(
                    "n * tau_s = {tm:e} s differs from tau_max = {t0:e} s set on line {l0}"
                ),
            ),
            _ => {}
        }
        if entries.iter().any(|(m, _)| *m == n) {
            f.fail(line, format!("n = {n} appears twice"));
            continue;
        }
        let rate = match value {
            None => None,
            Some(v) if v > 0.0 => {
                let s = sigma.unwrap_or(0.0);
                if s < 0.0 {
                    f.fail(line, format!("sigma_R = {s} is negative"));
                }
                Some(Rate {
                    value: v,
                    sigma: s.max(0.0),
                    r_squared: r2,
                })
            }
            Some(v) => {
                f.fail(line, format!("R_per_s = {v} must be positive (leave empty for a hole)"));
                None
            }
        };
        entries.push((n, rate));
    }
    if table.rows.is_empty() && f.violations.is_empty() {
        f.fail(2, "no data rows".into());
    }
    f.finish(path)?;
    let (tau_max, _) = tau_max.expect("rows were validated");
    let m = entries.iter().map(|e| e.0).max().unwrap_or(0);
    let mut rates = vec![None; m];
    for (n, r) in entries {
        rates[n - 1] = r;
    }
    RateSet::new(tau_max, rates)
}

/// Spectrum table, either frequency column accepted.
pub fn read_spectrum(path: &Path) -> Result<SpectrumEstimate> {
    let (table, c, early) = read_table(
        path,
        SPECTRUM,
        &[&["j"], &["omega_rad_per_s", "f_hz"], &["S"], &["sigma_S"], &["method"]],
    )?;
    let hz = table.header[c[1]] == "f_hz";
    let mut f = Fields {
        header: &table.header,
        violations: early,
    };
    let mut entries: Vec<(usize, f64, Option<SpectralValue>)> = Vec::new();
    let mut method = None;
    for (line, row) in &table.rows {
        let line = *line;
        let j = f.index(line, row, c[0]);
        let w = f.num(line, row, c[1]);
        let s = f.opt_num(line, row, c[2]);
        let e = f.opt_num(line, row, c[3]);
        match row[c[4]].parse::<Method>() {
            Ok(m) if method.is_none() || method == Some(m) => method = Some(m),
            Ok(m) => f.fail(line, format!("method '{m}' differs from earlier rows")),
            Err(e) => f.fail(line, e.to_string()),
        }
        if let (Some(j), Some(w), Some(s), Some(e)) = (j, w, s, e) {
            let w = if hz { w * 2.0 * std::f64::consts::PI } else { w };
            let v = s.map(|value| SpectralValue {
                value,
                sigma: e.unwrap_or(0.0),
            });
            if entries.iter().any(|x| x.0 == j) {
                f.fail(line, format!("j = {j} appears twice"));
            } else {
                entries.push((j, w, v));
            }
        }
    }
    if table.rows.is_empty() && f.violations.is_empty() {
        f.fail(2, "no data rows".into());
    }
    f.finish(path)?;
    entries.sort_by_key(|e| e.0);
    let omega_min = entries[0].1 / entries[0].0 as f64;
    let mut f = Fields {
        header: &table.header,
        violations: Vec::new(),
    };
    for (j, w, _) in &entries {
        let expect = *j as f64 * omega_min;
        if (w - expect).abs() > 1e-6 * expect {
            f.fail(0, format!("row j = {j} sits at {w:e} rad/s, off the grid j * {omega_min:e}"));
        }
    }
    f.finish(path)?;
    let m = entries.last().unwrap().0;
    let mut values = vec![None; m];
    for (j, _, v) in entries {
        values[j - 1] = v;
    }
    Ok(SpectrumEstimate {
        omega_min,
        method: method.unwrap(),
        values,
        tail: None,
        notes: Vec::new(),
    })
}

/// `(omega, S)` samples for a tabulated model.
pub fn read_tabulated(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let (table, c, early) = read_table(path, TABULATED, &[&["omega_rad_per_s"], &["S"]])?;
    let mut f = Fields {
        header: &table.header,
        violations: early,
    };
    let (mut w, mut s) = (Vec::new(), Vec::new());
    for (line, row) in &table.rows {
        if let (Some(a), Some(b)) = (f.num(*line, row, c[0]), f.num(*line, row, c[1])) {
            w.push(a);
            s.push(b);
        }
    }
    f.finish(path)?;
    Ok((w, s))
}
