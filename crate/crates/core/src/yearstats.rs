//! Year-level statistics: per-year summaries of the log relative price and
//! the two geometric norms, ANOVA with top-down mean grouping, PCA of the
//! four-feature year vectors and Hotelling t-squared outlier flags.

use nalgebra::{Matrix4, Vector4};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};

/// Chi-squared 95% quantile with 4 degrees of freedom, the significance
/// threshold used for the Hotelling statistic.
pub const HOTELLING_THRESHOLD: f64 = 9.49;

pub const FEATURE_NAMES: [&str; 4] = ["mean_v", "sd_v", "mean_dv", "sd_dv"];

/// Per-year sample summary of (p, |V|, |nabla V|) triples. Correlations
/// are `None` when either marginal standard deviation vanishes.
#[derive(Debug, Clone, PartialEq)]
pub struct YearSummary {
    pub year: String,
    pub n: usize,
    pub mean_p: f64,
    pub sd_p: f64,
    pub mean_v: f64,
    pub sd_v: f64,
    pub mean_dv: f64,
    pub sd_dv: f64,
    pub rho_p_v: Option<f64>,
    pub rho_p_dv: Option<f64>,
    pub rho_v_dv: Option<f64>,
}

/// The four features that characterize a year: means and standard
/// deviations of the two norms.
#[derive(Debug, Clone)]
pub struct FeatureVector {
    pub year: String,
    pub features: [f64; 4],
}

impl YearSummary {
    pub fn feature_vector(&self) -> FeatureVector {
        FeatureVector {
            year: self.year.clone(),
            features: [self.mean_v, self.sd_v, self.mean_dv, self.sd_dv],
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the n-1 denominator.
fn variance(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

fn pearson(xs: &[f64], ys: &[f64], mx: f64, my: f64, sx: f64, sy: f64) -> Option<f64> {
    if sx == 0.0 || sy == 0.0 {
        return None;
    }
    let cov = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (xs.len() - 1) as f64;
    Some((cov / (sx * sy)).clamp(-1.0, 1.0))
}

/// Summarize one year of (p, |V|, |nabla V|) samples.
pub fn summarize_year(samples: &[(f64, f64, f64)], year: &str) -> Result<YearSummary> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!(
            "year {year} has {} samples, need at least 2",
            samples.len()
        )));
    }
    if samples
        .iter()
        .any(|(a, b, c)| !(a.is_finite() && b.is_finite() && c.is_finite()))
    {
        return Err(Error::invalid(format!("year {year} has non-finite samples")));
    }
    let p: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let v: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let dv: Vec<f64> = samples.iter().map(|s| s.2).collect();
    let (mp, mv, mdv) = (mean(&p), mean(&v), mean(&dv));
    let (sp, sv, sdv) = (
        variance(&p, mp).sqrt(),
        variance(&v, mv).sqrt(),
        variance(&dv, mdv).sqrt(),
    );
    Ok(YearSummary {
        year: year.to_string(),
        n: samples.len(),
        mean_p: mp,
        sd_p: sp,
        mean_v: mv,
        sd_v: sv,
        mean_dv: mdv,
        sd_dv: sdv,
        rho_p_v: pearson(&p, &v, mp, mv, sp, sv),
        rho_p_dv: pearson(&p, &dv, mp, mdv, sp, sdv),
        rho_v_dv: pearson(&v, &dv, mv, mdv, sv, sdv),
    })
}

/// Result of the one-way ANOVA plus the iterative top-down grouping.
#[derive(Debug, Clone)]
pub struct AnovaGrouping {
    pub f_statistic: f64,
    pub p_value: f64,
    /// Partition of the years, ordered by descending group mean.
    pub groups: Vec<Vec<String>>,
}

/// Welch two-sample t-test p-value (two-sided).
fn welch_p_value(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (variance(a, ma), variance(b, mb));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        return if ma == mb { 1.0 } else { 0.0 };
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2
        / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
    if !df.is_finite() || df <= 0.0 {
        return if ma == mb { 1.0 } else { 0.0 };
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
    2.0 * (1.0 - dist.cdf(t.abs()))
}

/// One-way ANOVA over the per-year value sequences, then iterative
/// grouping: the year with the highest mean plus every year not
/// significantly different from it (pairwise Welch test at 5%) form a
/// group; remove and repeat.
pub fn anova_grouping(per_year: &[(String, Vec<f64>)]) -> Result<AnovaGrouping> {
    if per_year.len() < 2 {
        return Err(Error::invalid("ANOVA needs at least 2 years"));
    }
    for (year, vals) in per_year {
        if vals.len() < 2 {
            return Err(Error::invalid(format!(
                "year {year} has {} values, need at least 2",
                vals.len()
            )));
        }
    }

    let k = per_year.len() as f64;
    let total_n: usize = per_year.iter().map(|(_, v)| v.len()).sum();
    let grand_mean = per_year
        .iter()
        .flat_map(|(_, v)| v.iter())
        .sum::<f64>()
        / total_n as f64;

    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for (_, vals) in per_year {
        let m = mean(vals);
        ss_between += vals.len() as f64 * (m - grand_mean) * (m - grand_mean);
        ss_within += vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    }

    if ss_between == 0.0 && ss_within == 0.0 {
        return Err(Error::Degenerate(
            "all values identical across all years".to_string(),
        ));
    }

    let df_between = k - 1.0;
    let df_within = (total_n as f64) - k;
    let ms_between = ss_between / df_between;
    let ms_within = ss_within / df_within;
    let (f_statistic, p_value) = if ms_within == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = ms_between / ms_within;
        let dist = FisherSnedecor::new(df_between, df_within)
            .map_err(|e| Error::Degenerate(format!("F distribution: {e}")))?;
        (f, 1.0 - dist.cdf(f))
    };

    // top-down grouping at the 5% level
    let mut remaining: Vec<usize> = (0..per_year.len()).collect();
    remaining.sort_by(|&a, &b| {
        mean(&per_year[b].1)
            .partial_cmp(&mean(&per_year[a].1))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut groups = Vec::new();
    while !remaining.is_empty() {
        let top = remaining[0];
        let mut group = vec![top];
        let mut rest = Vec::new();
        for &i in remaining.iter().skip(1) {
            let p = welch_p_value(&per_year[top].1, &per_year[i].1);
            if p >= 0.05 {
                group.push(i);
            } else {
                rest.push(i);
            }
        }
        groups.push(group.iter().map(|&i| per_year[i].0.clone()).collect());
        remaining = rest;
    }

    Ok(AnovaGrouping {
        f_statistic,
        p_value,
        groups,
    })
}

/// Principal components of the standardized feature matrix.
#[derive(Debug, Clone)]
pub struct PcaResult {
    /// Columns are component loadings; the largest-magnitude entry of
    /// each column is positive.
    pub loadings: Matrix4<f64>,
    /// Fractions of variance, nonincreasing, summing to 1.
    pub explained: [f64; 4],
    /// Per-year component scores in input order.
    pub scores: Vec<(String, [f64; 4])>,
}

/// PCA on the correlation matrix of the four year features (columns are
/// z-scored before the eigendecomposition).
pub fn pca_features(features: &[FeatureVector]) -> Result<PcaResult> {
    let n = features.len();
    if n < 5 {
        return Err(Error::invalid(format!(
            "PCA needs at least 5 years, got {n}"
        )));
    }
    if features
        .iter()
        .any(|f| f.features.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::invalid("feature vectors must be finite"));
    }

    let mut means = [0.0f64; 4];
    let mut sds = [0.0f64; 4];
    for j in 0..4 {
        let col: Vec<f64> = features.iter().map(|f| f.features[j]).collect();
        means[j] = mean(&col);
        sds[j] = variance(&col, means[j]).sqrt();
        if sds[j] == 0.0 {
            return Err(Error::Degenerate(format!(
                "feature column {} has zero variance",
                FEATURE_NAMES[j]
            )));
        }
    }

    // standardized data and its correlation matrix
    let z: Vec<[f64; 4]> = features
        .iter()
        .map(|f| {
            let mut row = [0.0f64; 4];
            for j in 0..4 {
                row[j] = (f.features[j] - means[j]) / sds[j];
            }
            row
        })
        .collect();
    let mut corr = Matrix4::<f64>::zeros();
    for row in &z {
        for a in 0..4 {
            for b in 0..4 {
                corr[(a, b)] += row[a] * row[b];
            }
        }
    }
    corr /= (n - 1) as f64;

    let eig = corr.symmetric_eigen();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let total: f64 = eig.eigenvalues.iter().sum();
    let mut explained = [0.0f64; 4];
    let mut loadings = Matrix4::<f64>::zeros();
    for (slot, &src) in order.iter().enumerate() {
        explained[slot] = (eig.eigenvalues[src] / total).max(0.0);
        let mut col = eig.eigenvectors.column(src).into_owned();
        // sign convention: largest-magnitude entry positive
        let mut dominant = 0;
        for i in 1..4 {
            if col[i].abs() > col[dominant].abs() {
                dominant = i;
            }
        }
        if col[dominant] < 0.0 {
            col = -col;
        }
        loadings.set_column(slot, &col);
    }

    let scores = features
        .iter()
        .zip(&z)
        .map(|(f, row)| {
            let zr = Vector4::new(row[0], row[1], row[2], row[3]);
            let s = loadings.transpose() * zr;
            (f.year.clone(), [s[0], s[1], s[2], s[3]])
        })
        .collect();

    Ok(PcaResult {
        loadings,
        explained,
        scores,
    })
}

/// Hotelling t-squared of each year against the pooled mean and sample
/// covariance, flagged significant above the chi-squared 95% threshold.
pub fn hotelling_t2(features: &[FeatureVector]) -> Result<Vec<(String, f64, bool)>> {
    let n = features.len();
    if n < 6 {
        return Err(Error::invalid(format!(
            "Hotelling t2 needs at least 6 years, got {n}"
        )));
    }
    if features
        .iter()
        .any(|f| f.features.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::invalid("feature vectors must be finite"));
    }

    let mut mu = Vector4::<f64>::zeros();
    for f in features {
        mu += Vector4::from_row_slice(&f.features);
    }
    mu /= n as f64;

    let mut cov = Matrix4::<f64>::zeros();
    for f in features {
        let d = Vector4::from_row_slice(&f.features) - mu;
        cov += d * d.transpose();
    }
    cov /= (n - 1) as f64;

    let chol = cov.cholesky().ok_or_else(|| {
        Error::Degenerate("feature covariance matrix is singular".to_string())
    })?;

    Ok(features
        .iter()
        .map(|f| {
            let d = Vector4::from_row_slice(&f.features) - mu;
            let solved = chol.solve(&d);
            let t2 = d.dot(&solved).max(0.0);
            (f.year.clone(), t2, t2 > HOTELLING_THRESHOLD)
        })
        .collect())
}
