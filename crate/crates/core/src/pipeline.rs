//! End-to-end pipeline: ingest a price CSV, transform to log relative
//! price, fit the model by quasi-maximum likelihood, filter, compute the
//! per-step geometry, aggregate by calendar year and emit machine-readable
//! results plus plot-ready per-year data files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry;
use crate::npf::{self, ModelParams, ObservationSeries, StateEstimate};
use crate::qmle::{self, FitOptions, FitReport};
use crate::yearstats::{self, FeatureVector, YearSummary};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "OSCGEO_OUT_DIR";

/// Full pipeline configuration. Flags and config-file fields map onto
/// this structure one to one; unset fields take the defaults below.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub input: String,
    pub out_dir: String,
    /// Time step between consecutive rows; calendar gaps are ignored.
    pub dt: f64,
    /// Fraction of the filtered steps discarded from the front.
    pub burn_in_fraction: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub multi_start: usize,
    pub init_sigma1: f64,
    pub init_sigma2: f64,
    pub init_sigma_eps: f64,
    pub init_theta0: f64,
    pub init_theta1: f64,
    pub init_theta2: f64,
    pub init_theta3: f64,
    /// Fixed geodesic tolerance; when unset the tolerance is
    /// `geodesic_median_fraction` times the median covariant-derivative
    /// norm of the emitted series.
    pub geodesic_tol: Option<f64>,
    pub geodesic_median_fraction: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: String::new(),
            out_dir: "out".to_string(),
            dt: 1.0,
            burn_in_fraction: 0.04,
            max_iter: 2000,
            tol: 1e-6,
            multi_start: 1,
            init_sigma1: 0.1,
            init_sigma2: 0.1,
            init_sigma_eps: 0.01,
            init_theta0: 0.01,
            init_theta1: 0.01,
            init_theta2: 0.01,
            init_theta3: 0.01,
            geodesic_tol: None,
            geodesic_median_fraction: 0.01,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn init_params(&self) -> ModelParams {
        ModelParams::new(
            self.init_sigma1,
            self.init_sigma2,
            self.init_sigma_eps,
            self.init_theta0,
            self.init_theta1,
            self.init_theta2,
            self.init_theta3,
        )
    }

    /// Output directory after applying the environment override.
    pub fn effective_out_dir(&self) -> PathBuf {
        match std::env::var(OUT_DIR_ENV) {
            Ok(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => PathBuf::from(&self.out_dir),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.is_empty() {
            return Err(Error::invalid("input path must not be empty"));
        }
        if self.out_dir.is_empty() {
            return Err(Error::invalid("output directory must not be empty"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::invalid(format!(
                "burn_in_fraction must lie in [0, 1), got {}",
                self.burn_in_fraction
            )));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid("tol must be nonnegative"));
        }
        if let Some(t) = self.geodesic_tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid(format!("geodesic_tol must be positive, got {t}")));
            }
        }
        if !(self.geodesic_median_fraction > 0.0 && self.geodesic_median_fraction.is_finite()) {
            return Err(Error::invalid("geodesic_median_fraction must be positive"));
        }
        self.init_params().validate()?;
        Ok(())
    }

    /// Read a JSON config file; missing fields take defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::data(None, format!("config file {}: {e}", path.display())))
    }
}

/// One parsed calendar date label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Date {
    pub year: i32,
    pub month: u32,
    pub day: u32,
}

impl std::fmt::Display for Date {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:04}-{:02}-{:02}", self.year, self.month, self.day)
    }
}

fn parse_date(text: &str, row: usize) -> Result<Date> {
    let parts: Vec<&str> = text.split('-').collect();
    let bad = || Error::data(Some(row), format!("malformed date {text:?}, expected YYYY-MM-DD"));
    if parts.len() != 3 || parts[0].len() != 4 || parts[1].len() != 2 || parts[2].len() != 2 {
        return Err(bad());
    }
    let year: i32 = parts[0].parse().map_err(|_| bad())?;
    let month: u32 = parts[1].parse().map_err(|_| bad())?;
    let day: u32 = parts[2].parse().map_err(|_| bad())?;
    if !(1..=12).contains(&month) || day == 0 || day > crate::simulate::days_in_month(year, month) {
        return Err(bad());
    }
    Ok(Date { year, month, day })
}

/// Ingested series: log relative prices plus the per-row dates.
#[derive(Debug, Clone)]
pub struct IngestedSeries {
    pub series: ObservationSeries,
    pub dates: Vec<Date>,
}

/// Minimum number of data rows accepted by the pipeline.
pub const MIN_ROWS: usize = 50;

/// Read a `date,price` CSV and transform prices to log relative price
/// z_k = log(P_k / P_0). Dates must be strictly increasing ISO-8601 days;
/// prices must be positive. Row numbers in errors are physical line
/// numbers, the header being line 1.
pub fn ingest_csv(path: &Path, dt: f64) -> Result<IngestedSeries> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::data(None, format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();

    let header = match lines.next() {
        Some((_, h)) => h.trim_start_matches('\u{feff}').trim(),
        None => return Err(Error::data(Some(1), "empty file")),
    };
    if header != "date,price" {
        return Err(Error::data(
            Some(1),
            format!("expected header 'date,price', got {header:?}"),
        ));
    }

    let mut dates: Vec<Date> = Vec::new();
    let mut prices: Vec<f64> = Vec::new();
    for (i, line) in lines {
        let row = i + 1; // physical line number
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (date_text, price_text) = match (fields.next(), fields.next(), fields.next()) {
            (Some(d), Some(p), None) => (d.trim(), p.trim()),
            _ => {
                return Err(Error::data(
                    Some(row),
                    format!("expected two comma-separated fields, got {line:?}"),
                ))
            }
        };
        let date = parse_date(date_text, row)?;
        if let Some(prev) = dates.last() {
            if *prev >= date {
                return Err(Error::data(
                    Some(row),
                    format!("dates must be strictly increasing ({prev} then {date})"),
                ));
            }
        }
        let price: f64 = price_text
            .parse()
            .map_err(|_| Error::data(Some(row), format!("unparseable price {price_text:?}")))?;
        if !(price > 0.0 && price.is_finite()) {
            return Err(Error::data(Some(row), format!("nonpositive price {price}")));
        }
        dates.push(date);
        prices.push(price);
    }

    if prices.len() < MIN_ROWS {
        return Err(Error::TooShort {
            rows: prices.len(),
            min: MIN_ROWS,
        });
    }

    let p0 = prices[0];
    let values: Vec<f64> = prices.iter().map(|p| (p / p0).ln()).collect();
    let labels: Vec<String> = dates.iter().map(|d| d.to_string()).collect();
    let series = ObservationSeries::new(values, dt, Some(labels))?;
    Ok(IngestedSeries { series, dates })
}

/// One emitted geometry row.
#[derive(Debug, Clone)]
pub struct GeometryRow {
    pub date: Date,
    pub p: f64,
    pub xi: [f64; 8],
    pub norm_v: f64,
    pub norm_nabla_v: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub geodesic: bool,
}

/// Everything the pipeline computed, as returned to callers.
#[derive(Debug)]
pub struct PipelineOutput {
    pub fit: FitReport,
    pub rows: Vec<GeometryRow>,
    pub geodesic_tol: f64,
    pub years: Vec<YearSummary>,
    pub anova_v: yearstats::AnovaGrouping,
    pub anova_dv: yearstats::AnovaGrouping,
    pub pca: yearstats::PcaResult,
    pub hotelling: Vec<(String, f64, bool)>,
    pub written: Vec<PathBuf>,
}

/// Format with six significant digits, C `%g` style: fixed notation in a
/// moderate exponent range, scientific otherwise, trailing zeros removed.
pub fn fmt_g6(x: f64) -> String {
    fmt_g(x, 6)
}

pub fn fmt_g(x: f64, sig: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if exp < -4 || exp >= sig as i32 {
        let s = format!("{:.*e}", sig - 1, x);
        // trim trailing zeros in the mantissa: 1.230000e-5 -> 1.23e-5
        if let Some(epos) = s.find('e') {
            let (mant, exp_part) = s.split_at(epos);
            let mant = mant.trim_end_matches('0').trim_end_matches('.');
            return format!("{mant}{exp_part}");
        }
        s
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => fmt_g6(x),
        None => "NA".to_string(),
    }
}

#[derive(Serialize)]
struct ParamsFile {
    sigma1: f64,
    sigma2: f64,
    sigma_eps: f64,
    theta0: f64,
    theta1: f64,
    theta2: f64,
    theta3: f64,
    log_likelihood: f64,
    converged: bool,
    iterations: usize,
}

#[derive(Serialize)]
struct AnovaFile {
    norm_v: AnovaSection,
    norm_nabla_v: AnovaSection,
}

#[derive(Serialize)]
struct AnovaSection {
    f_statistic: f64,
    p_value: f64,
    groups: Vec<Vec<String>>,
}

struct OutputWriter {
    written: Vec<PathBuf>,
}

impl OutputWriter {
    fn write(&mut self, path: &Path, contents: &str) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut file = fs::File::create(path)?;
        file.write_all(contents.as_bytes())?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    fn cleanup(&self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
    }
}

/// Run the full pipeline and write every artifact into the output
/// directory. Nothing is written until the whole computation has
/// succeeded; a failed write removes the files already emitted.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let out_dir = PathBuf::from(&config.out_dir);

    // 1. ingest
    let ingested = ingest_csv(Path::new(&config.input), config.dt)?;
    let series = &ingested.series;
    let n = series.len();

    // 2. fit
    let init = config.init_params();
    let init_state = StateEstimate::initial(series.values()[0], init.sigma_eps);
    let fit_opts = FitOptions {
        max_iter: config.max_iter,
        tol: config.tol,
        multi_start: config.multi_start,
        seed: config.seed,
        init_state: Some(init_state.clone()),
        ..FitOptions::default()
    };
    let fit = qmle::fit(series, &init, &fit_opts)?;

    // 3. filter at the fitted parameters
    let run = npf::run_filter(series, &fit.params, &init_state)?;

    // 4. geometry per filtered step (excluding the initial guess), then
    //    burn-in discard
    let steps = n - 1;
    let burn = ((steps as f64) * config.burn_in_fraction).floor() as usize;
    let kept = &run.filtered[1 + burn..];

    let mut norms_dv: Vec<f64> = Vec::with_capacity(kept.len());
    for state in kept {
        let s = geometry::DriftState::from_state(state)?;
        let (_, nabla) = geometry::covariant_derivative(&s);
        norms_dv.push(nabla.norm());
    }
    let geodesic_tol = match config.geodesic_tol {
        Some(t) => t,
        None => geometry::median_fraction_tol(&norms_dv, config.geodesic_median_fraction)?,
    };

    let mut rows: Vec<GeometryRow> = Vec::with_capacity(kept.len());
    for state in kept {
        let sample = geometry::geometry_sample(state, geodesic_tol)?;
        let k = state.time_index;
        let mut xi = [0.0f64; 8];
        for (i, slot) in xi.iter_mut().enumerate() {
            *slot = state.xi[i];
        }
        rows.push(GeometryRow {
            date: ingested.dates[k],
            p: series.values()[k],
            xi,
            norm_v: sample.norm_v,
            norm_nabla_v: sample.norm_nabla_v,
            beta1: sample.beta[0],
            beta2: sample.beta[1],
            geodesic: sample.geodesic,
        });
    }

    // 5. per-year statistics on the emitted rows
    let mut by_year: BTreeMap<i32, Vec<&GeometryRow>> = BTreeMap::new();
    for row in &rows {
        by_year.entry(row.date.year).or_default().push(row);
    }
    // years with a single sample cannot be summarized
    by_year.retain(|_, v| v.len() >= 2);
    if by_year.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 years with 2+ samples each, got {}",
            by_year.len()
        )));
    }

    let mut years: Vec<YearSummary> = Vec::new();
    let mut per_year_v: Vec<(String, Vec<f64>)> = Vec::new();
    let mut per_year_dv: Vec<(String, Vec<f64>)> = Vec::new();
    for (year, rows) in &by_year {
        let label = year.to_string();
        let samples: Vec<(f64, f64, f64)> =
            rows.iter().map(|r| (r.p, r.norm_v, r.norm_nabla_v)).collect();
        years.push(yearstats::summarize_year(&samples, &label)?);
        per_year_v.push((label.clone(), samples.iter().map(|s| s.1).collect()));
        per_year_dv.push((label, samples.iter().map(|s| s.2).collect()));
    }

    let anova_v = yearstats::anova_grouping(&per_year_v)?;
    let anova_dv = yearstats::anova_grouping(&per_year_dv)?;
    let features: Vec<FeatureVector> = years.iter().map(|y| y.feature_vector()).collect();
    let pca = yearstats::pca_features(&features)?;
    let hotelling = yearstats::hotelling_t2(&features)?;

    // 6. emit artifacts
    let mut writer = OutputWriter { written: Vec::new() };
    let result = write_outputs(
        &mut writer,
        &out_dir,
        &fit,
        &rows,
        &years,
        &anova_v,
        &anova_dv,
        &pca,
        &hotelling,
    );
    if let Err(e) = result {
        writer.cleanup();
        return Err(e);
    }

    Ok(PipelineOutput {
        fit,
        rows,
        geodesic_tol,
        years,
        anova_v,
        anova_dv,
        pca,
        hotelling,
        written: writer.written,
    })
}

#[allow(clippy::too_many_arguments)]
fn write_outputs(
    writer: &mut OutputWriter,
    out_dir: &Path,
    fit: &FitReport,
    rows: &[GeometryRow],
    years: &[YearSummary],
    anova_v: &yearstats::AnovaGrouping,
    anova_dv: &yearstats::AnovaGrouping,
    pca: &yearstats::PcaResult,
    hotelling: &[(String, f64, bool)],
) -> Result<()> {
    // params.json carries full precision
    let params_file = ParamsFile {
        sigma1: fit.params.sigma1,
        sigma2: fit.params.sigma2,
        sigma_eps: fit.params.sigma_eps,
        theta0: fit.params.theta0,
        theta1: fit.params.theta1,
        theta2: fit.params.theta2,
        theta3: fit.params.theta3,
        log_likelihood: fit.log_likelihood,
        converged: fit.converged,
        iterations: fit.iterations,
    };
    let params_json = serde_json::to_string_pretty(&params_file)
        .map_err(|e| Error::data(None, format!("serialize params: {e}")))?;
    writer.write(&out_dir.join("params.json"), &(params_json + "\n"))?;

    // geometry.csv
    let mut geo = String::from(
        "date,p,xi1,xi2,xi3,xi4,xi5,xi6,xi7,xi8,norm_v,norm_nabla_v,beta1,beta2,geodesic\n",
    );
    for r in rows {
        let xi: Vec<String> = r.xi.iter().map(|v| fmt_g6(*v)).collect();
        geo.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.date,
            fmt_g6(r.p),
            xi.join(","),
            fmt_g6(r.norm_v),
            fmt_g6(r.norm_nabla_v),
            fmt_g6(r.beta1),
            fmt_g6(r.beta2),
            r.geodesic
        ));
    }
    writer.write(&out_dir.join("geometry.csv"), &geo)?;

    // years.csv
    let mut yrs = String::from(
        "year,n,mean_p,sd_p,mean_v,sd_v,mean_dv,sd_dv,rho_p_v,rho_p_dv,rho_v_dv\n",
    );
    for y in years {
        yrs.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            y.year,
            y.n,
            fmt_g6(y.mean_p),
            fmt_g6(y.sd_p),
            fmt_g6(y.mean_v),
            fmt_g6(y.sd_v),
            fmt_g6(y.mean_dv),
            fmt_g6(y.sd_dv),
            fmt_opt(y.rho_p_v),
            fmt_opt(y.rho_p_dv),
            fmt_opt(y.rho_v_dv),
        ));
    }
    writer.write(&out_dir.join("years.csv"), &yrs)?;

    // pca.csv: loadings (one row per feature), explained, scores
    let mut pca_text = String::from("kind,label,c1,c2,c3,c4\n");
    for (i, name) in yearstats::FEATURE_NAMES.iter().enumerate() {
        pca_text.push_str(&format!(
            "loading,{},{},{},{},{}\n",
            name,
            fmt_g6(pca.loadings[(i, 0)]),
            fmt_g6(pca.loadings[(i, 1)]),
            fmt_g6(pca.loadings[(i, 2)]),
            fmt_g6(pca.loadings[(i, 3)]),
        ));
    }
    pca_text.push_str(&format!(
        "explained,variance,{},{},{},{}\n",
        fmt_g6(pca.explained[0]),
        fmt_g6(pca.explained[1]),
        fmt_g6(pca.explained[2]),
        fmt_g6(pca.explained[3]),
    ));
    for (year, s) in &pca.scores {
        pca_text.push_str(&format!(
            "score,{},{},{},{},{}\n",
            year,
            fmt_g6(s[0]),
            fmt_g6(s[1]),
            fmt_g6(s[2]),
            fmt_g6(s[3]),
        ));
    }
    writer.write(&out_dir.join("pca.csv"), &pca_text)?;

    // hotelling.csv
    let mut hot = String::from("year,t2,significant\n");
    for (year, t2, sig) in hotelling {
        hot.push_str(&format!("{},{},{}\n", year, fmt_g6(*t2), sig));
    }
    writer.write(&out_dir.join("hotelling.csv"), &hot)?;

    // anova.json
    let anova_file = AnovaFile {
        norm_v: AnovaSection {
            f_statistic: anova_v.f_statistic,
            p_value: anova_v.p_value,
            groups: anova_v.groups.clone(),
        },
        norm_nabla_v: AnovaSection {
            f_statistic: anova_dv.f_statistic,
            p_value: anova_dv.p_value,
            groups: anova_dv.groups.clone(),
        },
    };
    let anova_json = serde_json::to_string_pretty(&anova_file)
        .map_err(|e| Error::data(None, format!("serialize anova: {e}")))?;
    writer.write(&out_dir.join("anova.json"), &(anova_json + "\n"))?;

    // plots/<year>.csv: day index within the year and the three series
    let mut by_year: BTreeMap<i32, Vec<&GeometryRow>> = BTreeMap::new();
    for row in rows {
        by_year.entry(row.date.year).or_default().push(row);
    }
    for (year, rows) in &by_year {
        let mut text = String::from("day,p,norm_v,norm_nabla_v\n");
        for (day, r) in rows.iter().enumerate() {
            text.push_str(&format!(
                "{},{},{},{}\n",
                day + 1,
                fmt_g6(r.p),
                fmt_g6(r.norm_v),
                fmt_g6(r.norm_nabla_v)
            ));
        }
        writer.write(&out_dir.join("plots").join(format!("{year}.csv")), &text)?;
    }

    Ok(())
}

/// Run the verification battery and write a machine-readable report to
/// `<out_dir>/selfcheck.json`. Returns the report path and whether every
/// check passed.
pub fn emit_selfcheck(config: &PipelineConfig) -> Result<(PathBuf, bool)> {
    use crate::selfcheck::{self, BatteryConfig};

    let out_dir = PathBuf::from(&config.out_dir);
    fs::create_dir_all(&out_dir)?;
    let battery = BatteryConfig {
        scratch_dir: out_dir.join("selfcheck_scratch"),
        geodesic_tol: config.geodesic_tol,
        ..BatteryConfig::new(out_dir.clone())
    };
    let results = selfcheck::run_battery(&battery);
    let all_passed = results.iter().all(|r| r.passed);

    let checks: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            let measured: serde_json::Map<String, serde_json::Value> = r
                .measured
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::json!(v)))
                .collect();
            serde_json::json!({
                "name": r.name,
                "passed": r.passed,
                "details": r.details,
                "measured": measured,
                "millis": r.millis as u64,
            })
        })
        .collect();
    let report = serde_json::json!({
        "all_passed": all_passed,
        "checks": checks,
    });
    let path = out_dir.join("selfcheck.json");
    fs::write(&path, serde_json::to_string_pretty(&report).expect("report is serializable") + "\n")?;
    Ok((path, all_passed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp_csv(rows: &[(&str, f64)]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "date,price").unwrap();
        for (d, p) in rows {
            writeln!(f, "{d},{p}").unwrap();
        }
        f
    }

    fn sequential_rows(n: usize) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        let (mut y, mut m, mut d) = (1990, 1, 1);
        for k in 0..n {
            out.push((format!("{y:04}-{m:02}-{d:02}"), 100.0 + k as f64));
            let next = crate::simulate::next_day(y, m, d);
            y = next.0;
            m = next.1;
            d = next.2;
        }
        out
    }

    #[test]
    fn ingest_log_relative_price() {
        let rows = sequential_rows(60);
        let refs: Vec<(&str, f64)> = rows.iter().map(|(d, p)| (d.as_str(), *p)).collect();
        let f = write_temp_csv(&refs);
        let ingested = ingest_csv(f.path(), 1.0).unwrap();
        assert_eq!(ingested.series.len(), 60);
        assert_eq!(ingested.series.values()[0], 0.0);
        let expect = (101.0f64 / 100.0).ln();
        assert!((ingested.series.values()[1] - expect).abs() < 1e-15);
        assert_eq!(ingested.dates[0].year, 1990);
    }

    #[test]
    fn ingest_price_doubling_gives_log_two() {
        let mut rows = sequential_rows(60);
        rows[0].1 = 100.0;
        rows[1].1 = 200.0;
        let refs: Vec<(&str, f64)> = rows.iter().map(|(d, p)| (d.as_str(), *p)).collect();
        let f = write_temp_csv(&refs);
        let ingested = ingest_csv(f.path(), 1.0).unwrap();
        assert_eq!(ingested.series.values()[0], 0.0);
        assert!((ingested.series.values()[1] - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ingest_rejects_nonpositive_price_with_row() {
        let mut rows = sequential_rows(60);
        rows[5].1 = -1.0; // physical line 7
        let refs: Vec<(&str, f64)> = rows.iter().map(|(d, p)| (d.as_str(), *p)).collect();
        let f = write_temp_csv(&refs);
        match ingest_csv(f.path(), 1.0) {
            Err(Error::Data { row: Some(7), .. }) => {}
            other => panic!("expected data error at row 7, got {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_unparseable_row() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "date,price").unwrap();
        for (d, p) in sequential_rows(55) {
            writeln!(f, "{d},{p}").unwrap();
        }
        writeln!(f, "2199-01-01,not_a_number").unwrap();
        match ingest_csv(f.path(), 1.0) {
            Err(Error::Data { row: Some(57), message }) => {
                assert!(message.contains("unparseable"), "{message}");
            }
            other => panic!("expected data error at row 57, got {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_short_file() {
        let rows = sequential_rows(10);
        let refs: Vec<(&str, f64)> = rows.iter().map(|(d, p)| (d.as_str(), *p)).collect();
        let f = write_temp_csv(&refs);
        assert!(matches!(
            ingest_csv(f.path(), 1.0),
            Err(Error::TooShort { rows: 10, .. })
        ));
    }

    #[test]
    fn ingest_rejects_nonincreasing_dates() {
        let mut rows = sequential_rows(60);
        rows[10] = (rows[9].0.clone(), 100.0);
        let refs: Vec<(&str, f64)> = rows.iter().map(|(d, p)| (d.as_str(), *p)).collect();
        let f = write_temp_csv(&refs);
        assert!(matches!(
            ingest_csv(f.path(), 1.0),
            Err(Error::Data { row: Some(12), .. })
        ));
    }

    #[test]
    fn ingest_rejects_bad_header() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "time,value").unwrap();
        assert!(matches!(
            ingest_csv(f.path(), 1.0),
            Err(Error::Data { row: Some(1), .. })
        ));
    }

    #[test]
    fn date_parsing() {
        assert!(parse_date("2020-02-29", 1).is_ok());
        assert!(parse_date("2021-02-29", 1).is_err());
        assert!(parse_date("2021-13-01", 1).is_err());
        assert!(parse_date("2021-00-01", 1).is_err());
        assert!(parse_date("21-01-01", 1).is_err());
        assert!(parse_date("2021/01/01", 1).is_err());
    }

    #[test]
    fn g6_formatting() {
        assert_eq!(fmt_g6(0.0), "0");
        assert_eq!(fmt_g6(1.0), "1");
        assert_eq!(fmt_g6(-1.5), "-1.5");
        assert_eq!(fmt_g6(0.156034), "0.156034");
        assert_eq!(fmt_g6(123456.0), "123456");
        assert_eq!(fmt_g6(1234567.0), "1.23457e6");
        assert_eq!(fmt_g6(0.000012345), "1.2345e-5");
        assert_eq!(fmt_g6(0.0001), "0.0001");
        assert_eq!(fmt_g6(std::f64::consts::PI), "3.14159");
    }

    #[test]
    fn config_defaults_and_validation() {
        let mut c = PipelineConfig::default();
        assert_eq!(c.dt, 1.0);
        assert_eq!(c.burn_in_fraction, 0.04);
        assert!(c.validate().is_err()); // empty input
        c.input = "data.csv".to_string();
        assert!(c.validate().is_ok());
        c.burn_in_fraction = 1.0;
        assert!(c.validate().is_err());
        c.burn_in_fraction = 0.0;
        c.geodesic_tol = Some(0.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_file_roundtrip() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(br#"{"input": "x.csv", "dt": 0.5}"#).unwrap();
        let c = PipelineConfig::from_file(f.path()).unwrap();
        assert_eq!(c.input, "x.csv");
        assert_eq!(c.dt, 0.5);
        assert_eq!(c.max_iter, 2000); // default preserved
    }
}
