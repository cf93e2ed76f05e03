//! Moment time series and their artifacts: CSV emission and parsing,
//! log-log power-law fitting, and prediction-versus-measurement reports.

use crate::asymptotics::{Prediction, PredictionRegime};
use crate::dsmc::MomentSummary;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need {needed} usable points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("power-law fitting needs positive times and values")]
    NonPositiveValues,
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("prediction carries no power law here ({0}); nothing to compare")]
    RegimeMismatch(String),
    #[error("malformed series: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Provenance carried with every series so artifacts are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub replicas: usize,
}

/// Moment rows ordered by strictly increasing time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub rows: Vec<MomentSummary>,
    pub metadata: SeriesMetadata,
}

const HEADER: &str = "t,tau,beta,T,mean_x,mean_y,mean_z,p_xy,p_xz,p_yz,c4,collisions";

/// Column names accepted by `fit_power_law`.
pub const COLUMNS: &[&str] =
    &["t", "tau", "beta", "T", "mean_x", "mean_y", "mean_z", "p_xy", "p_xz", "p_yz", "c4",
        "collisions", "norm_1_2", "mass"];

fn column_value(row: &MomentSummary, name: &str) -> Option<f64> {
    Some(match name {
        "t" => row.t,
        "tau" => row.tau,
        "beta" => row.beta,
        // Temperature convention: T = 1/beta, so <|w|^2> = (3/2) T.
        "T" | "temperature" => 1.0 / row.beta,
        "mean_x" => row.mean[0],
        "mean_y" => row.mean[1],
        "mean_z" => row.mean[2],
        "p_xy" => row.pressure_offdiag[0],
        "p_xz" => row.pressure_offdiag[1],
        "p_yz" => row.pressure_offdiag[2],
        "c4" | "fourth_cumulant" => row.fourth_cumulant,
        "collisions" => row.collisions as f64,
        "norm_1_2" => row.norm_1_2,
        "mass" => row.mass,
        _ => return None,
    })
}

impl TimeSeries {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.rows.is_empty() {
            return Err(AnalysisError::Malformed("no rows".into()));
        }
        for pair in self.rows.windows(2) {
            if !(pair[1].t > pair[0].t) {
                return Err(AnalysisError::Malformed(format!(
                    "t must increase strictly, got {} then {}",
                    pair[0].t, pair[1].t
                )));
            }
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, AnalysisError> {
        if column_value(&self.rows[0], name).is_none() {
            return Err(AnalysisError::UnknownColumn(name.into()));
        }
        Ok(self.rows.iter().map(|r| column_value(r, name).unwrap()).collect())
    }

    /// Write the series in the fixed 12-column CSV contract. Floats use 17
    /// significant digits, so parsing them back is exact.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), AnalysisError> {
        self.validate()?;
        writeln!(
            out,
            "# config_hash={} seed={} replicas={}",
            self.metadata.config_hash, self.metadata.seed, self.metadata.replicas
        )?;
        writeln!(out, "{HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.t,
                r.tau,
                r.beta,
                1.0 / r.beta,
                r.mean[0],
                r.mean[1],
                r.mean[2],
                r.pressure_offdiag[0],
                r.pressure_offdiag[1],
                r.pressure_offdiag[2],
                r.fourth_cumulant,
                r.collisions
            )?;
        }
        Ok(())
    }

    pub fn write_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<(), AnalysisError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Parse a series written by `write_csv`. The ensemble mass is the
    /// conserved 1 and the weighted norm is reconstructed from beta.
    pub fn read_csv<R: Read>(input: R) -> Result<TimeSeries, AnalysisError> {
        let reader = BufReader::new(input);
        let mut metadata =
            SeriesMetadata { config_hash: String::new(), seed: 0, replicas: 1 };
        let mut rows = Vec::new();
        let mut saw_header = false;
        for (k, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for token in rest.split_whitespace() {
                    match token.split_once('=') {
                        Some(("config_hash", v)) => metadata.config_hash = v.to_string(),
                        Some(("seed", v)) => {
                            metadata.seed = v
                                .parse()
                                .map_err(|_| AnalysisError::Malformed(format!("bad seed {v:?}")))?
                        }
                        Some(("replicas", v)) => {
                            metadata.replicas = v.parse().map_err(|_| {
                                AnalysisError::Malformed(format!("bad replicas {v:?}"))
                            })?
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if !saw_header {
                if line != HEADER {
                    return Err(AnalysisError::Malformed(format!(
                        "line {}: expected header {HEADER:?}",
                        k + 1
                    )));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 12 {
                return Err(AnalysisError::Malformed(format!(
                    "line {}: expected 12 fields, got {}",
                    k + 1,
                    fields.len()
                )));
            }
            let num = |i: usize| -> Result<f64, AnalysisError> {
                fields[i].parse().map_err(|_| {
                    AnalysisError::Malformed(format!("line {}: bad number {:?}", k + 1, fields[i]))
                })
            };
            let beta = num(2)?;
            rows.push(MomentSummary {
                t: num(0)?,
                tau: num(1)?,
                beta,
                mass: 1.0,
                mean: [num(4)?, num(5)?, num(6)?],
                pressure_offdiag: [num(7)?, num(8)?, num(9)?],
                fourth_cumulant: num(10)?,
                norm_1_2: 1.0 + 1.5 / beta,
                collisions: fields[11].parse().map_err(|_| {
                    AnalysisError::Malformed(format!(
                        "line {}: bad collision count {:?}",
                        k + 1,
                        fields[11]
                    ))
                })?,
            });
        }
        if !saw_header {
            return Err(AnalysisError::Malformed("missing header".into()));
        }
        let series = TimeSeries { rows, metadata };
        series.validate()?;
        Ok(series)
    }

    pub fn read_csv_path<P: AsRef<Path>>(path: P) -> Result<TimeSeries, AnalysisError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Least-squares power law y = amplitude * t^slope over a time window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub stderr: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    /// Fitted value of y at t = 1; under t -> c*t it maps to
    /// amplitude * c^{-slope}.
    pub amplitude: f64,
}

const MIN_POINTS: usize = 20;

/// Ordinary least squares of log(column) against log(t). The default window
/// is the last full decade of the series, where the long-time laws apply.
pub fn fit_power_law(
    series: &TimeSeries,
    column: &str,
    window: Option<(f64, f64)>,
) -> Result<FitResult, AnalysisError> {
    series.validate()?;
    let ys = series.column(column)?;
    let t_last = series.rows.last().unwrap().t;
    let (lo, hi) = match window {
        Some((lo, hi)) if lo < hi => (lo, hi),
        Some((lo, hi)) => {
            return Err(AnalysisError::Malformed(format!("empty window ({lo}, {hi})")))
        }
        None => {
            if !(t_last > 0.0) {
                return Err(AnalysisError::NonPositiveValues);
            }
            (t_last / 10.0, t_last)
        }
    };
    let t_first = series.rows.first().unwrap().t;
    let window = (lo.max(t_first), hi.min(t_last));

    let mut xs = Vec::new();
    let mut zs = Vec::new();
    for (row, &y) in series.rows.iter().zip(&ys) {
        if row.t < window.0 || row.t > window.1 {
            continue;
        }
        if !(row.t > 0.0) || !(y > 0.0) {
            return Err(AnalysisError::NonPositiveValues);
        }
        xs.push(row.t.ln());
        zs.push(y.ln());
    }
    let n = xs.len();
    if n < MIN_POINTS {
        return Err(AnalysisError::InsufficientData { needed: MIN_POINTS, got: n });
    }

    let nf = n as f64;
    let x_bar = xs.iter().sum::<f64>() / nf;
    let z_bar = zs.iter().sum::<f64>() / nf;
    let mut s_xx = 0.0;
    let mut s_xz = 0.0;
    for (x, z) in xs.iter().zip(&zs) {
        s_xx += (x - x_bar) * (x - x_bar);
        s_xz += (x - x_bar) * (z - z_bar);
    }
    if s_xx == 0.0 {
        return Err(AnalysisError::Malformed("window collapses to one time".into()));
    }
    let slope = s_xz / s_xx;
    let intercept = z_bar - slope * x_bar;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (x, z) in xs.iter().zip(&zs) {
        let r = z - (intercept + slope * x);
        ss_res += r * r;
        ss_tot += (z - z_bar) * (z - z_bar);
    }
    let stderr = if n > 2 { (ss_res / ((nf - 2.0) * s_xx)).sqrt() } else { 0.0 };
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(FitResult { slope, stderr, window, r_squared, amplitude: intercept.exp() })
}

/// Verdict of checking a fitted exponent against a predicted law.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub prediction: Prediction,
    pub fit: FitResult,
    pub tolerance: f64,
    pub pass: bool,
    /// fitted amplitude / predicted prefactor, when the law has one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prefactor_ratio: Option<f64>,
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Check |fit.slope - predicted exponent| <= tolerance (default
/// max(0.1*|exponent|, 0.1), sized for desk-scale Monte Carlo noise).
pub fn compare(
    prediction: &Prediction,
    fit: &FitResult,
    tolerance: Option<f64>,
) -> Result<ComparisonReport, AnalysisError> {
    if let PredictionRegime::OutOfScope { label } = &prediction.regime {
        return Err(AnalysisError::RegimeMismatch(format!("{label:?}")));
    }
    let exponent = prediction.beta_exponent.ok_or_else(|| {
        AnalysisError::Malformed("prediction regime has no exponent".into())
    })?;
    let tolerance = tolerance.unwrap_or_else(|| (0.1 * exponent.abs()).max(0.1));
    let pass = (fit.slope - exponent).abs() <= tolerance;
    let prefactor_ratio = prediction.prefactor.map(|c| fit.amplitude / c);
    Ok(ComparisonReport {
        prediction: prediction.clone(),
        fit: fit.clone(),
        tolerance,
        pass,
        prefactor_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::predict;
    use crate::flow::{FlowCase, FlowClass};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn series_from(ts: &[f64], f: impl Fn(f64) -> f64) -> TimeSeries {
        let rows = ts
            .iter()
            .map(|&t| MomentSummary {
                tau: t,
                t,
                mass: 1.0,
                mean: [0.0; 3],
                beta: f(t),
                pressure_offdiag: [0.0; 3],
                fourth_cumulant: 0.0,
                norm_1_2: 1.0 + 1.5 / f(t),
                collisions: 0,
            })
            .collect();
        TimeSeries {
            rows,
            metadata: SeriesMetadata { config_hash: "test".into(), seed: 0, replicas: 1 },
        }
    }

    fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn exact_power_law_is_recovered_to_machine_precision() {
        let series = series_from(&log_grid(1.0, 100.0, 40), |t| 3.0 * t * t);
        let fit = fit_power_law(&series, "beta", Some((1.0, 100.0))).unwrap();
        assert_relative_eq!(fit.slope, 2.0, max_relative = 1e-12);
        assert!(fit.stderr < 1e-10);
        assert_relative_eq!(fit.amplitude, 3.0, max_relative = 1e-10);
        assert!(fit.r_squared > 1.0 - 1e-12);
    }

    #[test]
    fn noisy_two_thirds_law_lands_in_the_expected_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ts = log_grid(10.0, 100.0, 100);
        let noisy: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let eps: f64 = StandardNormal.sample(&mut rng);
                t.powf(2.0 / 3.0) * (1.0 + 0.01 * eps)
            })
            .collect();
        let mut series = series_from(&ts, |_| 1.0);
        for (row, y) in series.rows.iter_mut().zip(&noisy) {
            row.beta = *y;
        }
        let fit = fit_power_law(&series, "beta", None).unwrap();
        assert!(fit.slope > 0.63 && fit.slope < 0.70, "slope {}", fit.slope);
        assert!(fit.stderr > 0.0);
    }

    #[test]
    fn constant_column_has_slope_zero() {
        let series = series_from(&log_grid(1.0, 100.0, 41), |_| 0.7);
        let fit = fit_power_law(&series, "beta", None).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_relative_eq!(fit.amplitude, 0.7, max_relative = 1e-12);
    }

    #[test]
    fn default_window_is_the_last_decade() {
        let series = series_from(&log_grid(1.0, 1000.0, 90), |t| t);
        let fit = fit_power_law(&series, "beta", None).unwrap();
        assert_relative_eq!(fit.window.0, 100.0, max_relative = 1e-12);
        assert_relative_eq!(fit.window.1, 1000.0, max_relative = 1e-12);
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let short = series_from(&log_grid(1.0, 10.0, 10), |t| t);
        assert!(matches!(
            fit_power_law(&short, "beta", None),
            Err(AnalysisError::InsufficientData { needed: 20, got: 10 })
        ));
        let negative = series_from(&log_grid(1.0, 10.0, 30), |t| t - 5.0);
        assert!(matches!(
            fit_power_law(&negative, "beta", None),
            Err(AnalysisError::NonPositiveValues)
        ));
        let series = series_from(&log_grid(1.0, 10.0, 30), |t| t);
        assert!(matches!(
            fit_power_law(&series, "entropy", None),
            Err(AnalysisError::UnknownColumn(_))
        ));
    }

    #[test]
    fn slope_is_invariant_under_time_rescaling() {
        let ts = log_grid(1.0, 100.0, 50);
        let series = series_from(&ts, |t| 2.0 * t.powf(-1.5));
        let scaled: Vec<f64> = ts.iter().map(|t| 2.0 * t).collect();
        let series_scaled = series_from(&scaled, |t| 2.0 * (t / 2.0).powf(-1.5));
        let a = fit_power_law(&series, "beta", Some((1.0, 100.0))).unwrap();
        let b = fit_power_law(&series_scaled, "beta", Some((2.0, 200.0))).unwrap();
        assert_relative_eq!(a.slope, b.slope, max_relative = 1e-10);
        assert_relative_eq!(b.amplitude, a.amplitude * 2f64.powf(-a.slope), max_relative = 1e-10);
    }

    #[test]
    fn comparison_matches_the_contract() {
        let case = FlowCase::canonical(FlowClass::SimpleShear { k: 1.0 });
        let prediction = predict(&case, 1.0, Some(0.75));
        let fit = FitResult {
            slope: -1.95,
            stderr: 0.03,
            window: (10.0, 100.0),
            r_squared: 0.999,
            amplitude: 1.1,
        };
        let report = compare(&prediction, &fit, Some(0.2)).unwrap();
        assert!(report.pass);
        assert_relative_eq!(report.prefactor_ratio.unwrap(), 1.1, max_relative = 1e-12);
        let json = report.to_json();
        assert!(json.contains("\"pass\": true"));
        assert!(json.contains("\"prefactor_ratio\""));

        let fit_bad = FitResult { slope: 0.2, ..fit.clone() };
        let planar = predict(&FlowCase::canonical(FlowClass::PlanarShear { k: 0.0 }), -1.0, None);
        let report = compare(&planar, &fit_bad, Some(0.2)).unwrap();
        assert!(!report.pass);
        assert!(report.prefactor_ratio.is_none());

        let frozen = predict(&FlowCase::canonical(FlowClass::CylindricalDilatation), -1.0, None);
        assert!(matches!(
            compare(&frozen, &fit, None),
            Err(AnalysisError::RegimeMismatch(_))
        ));
    }

    #[test]
    fn default_tolerance_scales_with_the_exponent() {
        let case = FlowCase::canonical(FlowClass::SimpleShear { k: 1.0 });
        let prediction = predict(&case, 0.5, None); // exponent -4
        let fit = FitResult {
            slope: -4.35,
            stderr: 0.01,
            window: (1.0, 10.0),
            r_squared: 1.0,
            amplitude: 1.0,
        };
        let report = compare(&prediction, &fit, None).unwrap();
        assert_relative_eq!(report.tolerance, 0.4);
        assert!(report.pass);
    }

    #[test]
    fn csv_roundtrip_is_byte_stable() {
        let mut series = series_from(&log_grid(0.5, 50.0, 25), |t| 1.0 / (1.0 + t));
        for (k, row) in series.rows.iter_mut().enumerate() {
            row.tau = (1.0 + row.t).ln();
            row.mean = [1e-17 * k as f64, -2e-18, 3.5e-16];
            row.pressure_offdiag = [0.01 * k as f64, -0.02, 1e-5];
            row.fourth_cumulant = -0.01 + 0.001 * k as f64;
            row.collisions = 17 * k as u64;
        }
        series.metadata =
            SeriesMetadata { config_hash: "abcd1234".into(), seed: 99, replicas: 4 };

        let mut bytes = Vec::new();
        series.write_csv(&mut bytes).unwrap();
        let parsed = TimeSeries::read_csv(bytes.as_slice()).unwrap();
        assert_eq!(parsed.metadata, series.metadata);
        for (a, b) in parsed.rows.iter().zip(&series.rows) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.tau, b.tau);
            assert_eq!(a.beta, b.beta);
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.pressure_offdiag, b.pressure_offdiag);
            assert_eq!(a.fourth_cumulant, b.fourth_cumulant);
            assert_eq!(a.collisions, b.collisions);
        }
        let mut again = Vec::new();
        parsed.write_csv(&mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn csv_parser_rejects_corrupt_input() {
        let bad_header = "time,stuff\n1,2\n";
        assert!(matches!(
            TimeSeries::read_csv(bad_header.as_bytes()),
            Err(AnalysisError::Malformed(_))
        ));
        let missing_field = format!("{HEADER}\n1.0,1.0,1.0\n");
        assert!(matches!(
            TimeSeries::read_csv(missing_field.as_bytes()),
            Err(AnalysisError::Malformed(_))
        ));
        let not_increasing = {
            let series = series_from(&[1.0, 2.0], |_| 1.0);
            let mut bytes = Vec::new();
            series.write_csv(&mut bytes).unwrap();
            let text = String::from_utf8(bytes).unwrap();
            let mut lines: Vec<&str> = text.lines().collect();
            let dup = lines[2];
            lines.push(dup);
            lines.join("\n")
        };
        assert!(matches!(
            TimeSeries::read_csv(not_increasing.as_bytes()),
            Err(AnalysisError::Malformed(_))
        ));
    }
}
