//! Reading rate tables, the log10 transform, zero/missing handling, and
//! per-curve penalized smoothing.
//!
//! Two on-disk layouts are supported, one file per state in both cases:
//!
//! * `hmd_1x1` - whitespace-delimited life-table text with columns
//!   `Year Age Female Male Total`; header lines are skipped, "." marks a
//!   missing rate, and an age token like `110+` denotes the open age group.
//! * `csv_long` - header `state,gender,year,age,rate`, UTF-8, "." decimal
//!   separator, missing rate as an empty field.
//!
//! Ages at or above the configured truncation age are pooled into the final
//! age group (mean of the available rates) before any transform.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array4;
use rayon::prelude::*;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fda::{AgeGrid, Curve, CurvePanel};

/// Input file layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Hmd1x1,
    CsvLong,
}

/// How the `rate` column is mapped onto the modeling scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueTransform {
    /// Rates: apply the zero policy, then log10. The default for real data.
    Log10,
    /// Values are already on the modeling scale; stored verbatim. This is the
    /// mode used when re-loading files written by [`export_panel`], which
    /// makes the export/load round trip bit-exact.
    None,
}

/// What to do with an observed rate of exactly zero (log10 is undefined).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZeroRatePolicy {
    FloorAt(f64),
    TreatAsMissing,
}

/// What to do with missing entries after the transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingPolicy {
    /// Linear interpolation in (age, log-rate); nearest value at the ends.
    InterpolateLogLinear,
    Fail,
}

/// Roughness penalty weight for the smoother.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    Fixed(f64),
    /// Generalized cross-validation over a fixed log-spaced grid
    /// (10^-2 .. 10^4, half-decade steps), chosen per curve.
    Gcv,
}

/// Per-curve smoothing configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    pub enabled: bool,
    pub lambda: LambdaChoice,
    pub zero_rate_policy: ZeroRatePolicy,
    pub missing_policy: MissingPolicy,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            enabled: true,
            lambda: LambdaChoice::Gcv,
            zero_rate_policy: ZeroRatePolicy::FloorAt(1e-6),
            missing_policy: MissingPolicy::InterpolateLogLinear,
        }
    }
}

/// Loader configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestConfig {
    /// Final (open) age group; ages >= this are pooled into it.
    pub truncation_age: f64,
    pub transform: ValueTransform,
    pub smoothing: SmoothingConfig,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            truncation_age: 100.0,
            transform: ValueTransform::Log10,
            smoothing: SmoothingConfig::default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Whittaker-type smoother: min ||y - f||^2 + lambda * ||D2 f||^2
// ---------------------------------------------------------------------------

/// Precomputed solve for one (grid length, lambda) pair. The smoother matrix
/// S = (I + lambda D'D)^-1 depends only on the grid size, so it is factored
/// once and reused across curves.
pub struct Smoother {
    chol: Cholesky<f64, nalgebra::Dyn>,
    trace_s: f64,
    p: usize,
}

impl Smoother {
    pub fn new(p: usize, lambda: f64) -> Result<Self> {
        if p < 4 {
            return Err(Error::TooFewPoints { need: 4, got: p });
        }
        if lambda < 0.0 {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        let mut a = DMatrix::<f64>::identity(p, p);
        // A = I + lambda * D2' D2 with D2 the (p-2) x p second-difference map.
        for r in 0..p - 2 {
            let idx = [r, r + 1, r + 2];
            let coef = [1.0, -2.0, 1.0];
            for (i, ci) in idx.iter().zip(coef) {
                for (j, cj) in idx.iter().zip(coef) {
                    a[(*i, *j)] += lambda * ci * cj;
                }
            }
        }
        let chol = Cholesky::new(a).ok_or_else(|| {
            Error::InvalidConfig("smoother system not positive definite".into())
        })?;
        let trace_s = chol.inverse().trace();
        Ok(Smoother { chol, trace_s, p })
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let y = DVector::from_column_slice(values);
        let f = self.chol.solve(&y);
        f.as_slice().to_vec()
    }

    /// Generalized cross-validation score for this lambda on one curve.
    pub fn gcv(&self, values: &[f64]) -> f64 {
        let fitted = self.apply(values);
        let rss: f64 = values
            .iter()
            .zip(&fitted)
            .map(|(y, f)| (y - f) * (y - f))
            .sum();
        let n = self.p as f64;
        let denom = n - self.trace_s;
        if denom <= 0.0 {
            f64::INFINITY
        } else {
            n * rss / (denom * denom)
        }
    }
}

const GCV_EXPONENTS: [f64; 13] = [
    -2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0,
];

/// Smooth one curve with the second-difference penalty. `lambda = 0` returns
/// the input unchanged; GCV picks lambda per curve from the fixed grid.
pub fn smooth_curve(raw: &Curve, config: &SmoothingConfig) -> Result<Curve> {
    let p = raw.len();
    if p < 4 {
        return Err(Error::TooFewPoints { need: 4, got: p });
    }
    if !config.enabled {
        return Ok(raw.clone());
    }
    let values = match config.lambda {
        LambdaChoice::Fixed(l) if l == 0.0 => raw.values().to_vec(),
        LambdaChoice::Fixed(l) => Smoother::new(p, l)?.apply(raw.values()),
        LambdaChoice::Gcv => {
            let mut best = (f64::INFINITY, raw.values().to_vec());
            for e in GCV_EXPONENTS {
                let s = Smoother::new(p, 10f64.powf(e))?;
                let score = s.gcv(raw.values());
                if score < best.0 {
                    best = (score, s.apply(raw.values()));
                }
            }
            best.1
        }
    };
    Curve::new(raw.grid().clone(), values)
}

// ---------------------------------------------------------------------------
// Raw tables
// ---------------------------------------------------------------------------

/// One state's parsed rate rows for a single year.
#[derive(Debug, Clone, Default)]
pub struct YearRows {
    /// age -> (female rate, male rate); `None` marks a missing entry.
    pub rows: BTreeMap<u64, (Option<f64>, Option<f64>)>,
}

/// All parsed rows for one state file, keyed by year.
#[derive(Debug, Clone)]
pub struct RawRateTable {
    pub state: String,
    pub years: BTreeMap<i32, YearRows>,
    pub source_path: PathBuf,
}

fn age_key(age: f64) -> Result<u64> {
    if !(age.is_finite() && age >= 0.0) {
        return Err(Error::Schema(format!("unsupported age {age}")));
    }
    Ok(age.to_bits())
}

fn age_from_key(key: u64) -> f64 {
    f64::from_bits(key)
}

fn parse_rate_token(tok: &str) -> std::result::Result<Option<f64>, String> {
    if tok == "." || tok.is_empty() {
        return Ok(None);
    }
    tok.parse::<f64>()
        .map(Some)
        .map_err(|e| format!("bad rate `{tok}`: {e}"))
}

fn parse_hmd_file(path: &Path) -> Result<RawRateTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let state = path
        .file_name()
        .and_then(|s| s.to_str())
        .map(|s| s.split('.').next().unwrap_or(s).to_string())
        .unwrap_or_else(|| "unknown".to_string());
    let mut years: BTreeMap<i32, YearRows> = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 4 {
            continue;
        }
        let year: i32 = match toks[0].parse() {
            Ok(y) => y,
            Err(_) => continue, // header or title line
        };
        let age_tok = toks[1].trim_end_matches('+');
        let age: f64 = age_tok.parse().map_err(|_| Error::Parse {
            file: path.display().to_string(),
            line: lineno + 1,
            message: format!("bad age token `{}`", toks[1]),
        })?;
        let female = parse_rate_token(toks[2]).map_err(|message| Error::Parse {
            file: path.display().to_string(),
            line: lineno + 1,
            message,
        })?;
        let male = parse_rate_token(toks[3]).map_err(|message| Error::Parse {
            file: path.display().to_string(),
            line: lineno + 1,
            message,
        })?;
        years
            .entry(year)
            .or_default()
            .rows
            .insert(age_key(age)?, (female, male));
    }
    Ok(RawRateTable {
        state,
        years,
        source_path: path.to_path_buf(),
    })
}

fn parse_csv_long_file(path: &Path) -> Result<Vec<RawRateTable>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: 1,
            message: e.to_string(),
        })?;
    {
        let headers = reader.headers().map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: 1,
            message: e.to_string(),
        })?;
        let expected = ["state", "gender", "year", "age", "rate"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Schema(format!(
                "{}: expected header state,gender,year,age,rate, got {:?}",
                path.display(),
                headers
            )));
        }
    }
    let mut tables: BTreeMap<String, RawRateTable> = BTreeMap::new();
    for (idx, record) in reader.records().enumerate() {
        let lineno = idx + 2;
        let perr = |message: String| Error::Parse {
            file: path.display().to_string(),
            line: lineno,
            message,
        };
        let record = record.map_err(|e| perr(e.to_string()))?;
        if record.len() != 5 {
            return Err(perr(format!("expected 5 fields, got {}", record.len())));
        }
        let state = record[0].to_string();
        let gender = &record[1];
        let year: i32 = record[2]
            .parse()
            .map_err(|e| perr(format!("bad year `{}`: {e}", &record[2])))?;
        let age: f64 = record[3]
            .parse()
            .map_err(|e| perr(format!("bad age `{}`: {e}", &record[3])))?;
        let rate = parse_rate_token(&record[4]).map_err(perr)?;
        let table = tables.entry(state.clone()).or_insert_with(|| RawRateTable {
            state,
            years: BTreeMap::new(),
            source_path: path.to_path_buf(),
        });
        let cell = table
            .years
            .entry(year)
            .or_default()
            .rows
            .entry(age_key(age)?)
            .or_insert((None, None));
        match gender {
            "F" => cell.0 = rate,
            "M" => cell.1 = rate,
            other => return Err(perr(format!("unknown gender `{other}` (want F or M)"))),
        }
    }
    Ok(tables.into_values().collect())
}

/// Pool ages >= truncation into the truncation-age group (mean of the
/// available rates) and drop higher ages.
fn truncate_ages(table: &mut RawRateTable, truncation_age: f64) -> Result<()> {
    let cut = age_key(truncation_age)?;
    for rows in table.years.values_mut() {
        let tail: Vec<u64> = rows.rows.range(cut..).map(|(k, _)| *k).collect();
        if tail.is_empty() {
            continue;
        }
        let mut f_acc = (0.0, 0usize);
        let mut m_acc = (0.0, 0usize);
        for k in &tail {
            let (f, m) = rows.rows.remove(k).unwrap();
            if let Some(v) = f {
                f_acc = (f_acc.0 + v, f_acc.1 + 1);
            }
            if let Some(v) = m {
                m_acc = (m_acc.0 + v, m_acc.1 + 1);
            }
        }
        let f = (f_acc.1 > 0).then(|| f_acc.0 / f_acc.1 as f64);
        let m = (m_acc.1 > 0).then(|| m_acc.0 / m_acc.1 as f64);
        rows.rows.insert(cut, (f, m));
    }
    Ok(())
}

fn transform_series(
    ages: &[f64],
    raw: Vec<Option<f64>>,
    config: &IngestConfig,
    context: &str,
) -> Result<Vec<f64>> {
    let mut vals: Vec<Option<f64>> = match config.transform {
        ValueTransform::None => raw,
        ValueTransform::Log10 => raw
            .into_iter()
            .map(|r| match r {
                None => None,
                Some(v) if v == 0.0 => match config.smoothing.zero_rate_policy {
                    ZeroRatePolicy::FloorAt(eps) => Some(eps.log10()),
                    ZeroRatePolicy::TreatAsMissing => None,
                },
                Some(v) => Some(v.log10()),
            })
            .collect(),
    };

    if vals.iter().all(|v| v.is_none()) {
        return Err(Error::Schema(format!("{context}: no observed values")));
    }
    if vals.iter().any(|v| v.is_none()) {
        match config.smoothing.missing_policy {
            MissingPolicy::Fail => {
                let i = vals.iter().position(|v| v.is_none()).unwrap();
                return Err(Error::MissingValue {
                    age: ages[i],
                    context: context.to_string(),
                });
            }
            MissingPolicy::InterpolateLogLinear => interpolate_missing(ages, &mut vals),
        }
    }
    Ok(vals.into_iter().map(|v| v.unwrap()).collect())
}

/// Fill gaps linearly in (age, value); constant extension at the ends.
fn interpolate_missing(ages: &[f64], vals: &mut [Option<f64>]) {
    let known: Vec<usize> = (0..vals.len()).filter(|i| vals[*i].is_some()).collect();
    for i in 0..vals.len() {
        if vals[i].is_some() {
            continue;
        }
        let lo = known.iter().rev().find(|&&k| k < i).copied();
        let hi = known.iter().find(|&&k| k > i).copied();
        vals[i] = Some(match (lo, hi) {
            (Some(a), Some(b)) => {
                let (va, vb) = (vals[a].unwrap(), vals[b].unwrap());
                va + (ages[i] - ages[a]) / (ages[b] - ages[a]) * (vb - va)
            }
            (Some(a), None) => vals[a].unwrap(),
            (None, Some(b)) => vals[b].unwrap(),
            (None, None) => unreachable!("checked above"),
        });
    }
}

/// Load a directory of per-state files into a panel with genders {F, M}.
pub fn load_panel(dir: &Path, schema: Schema, config: &IngestConfig) -> Result<CurvePanel> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .filter(|p| match schema {
            Schema::CsvLong => p.extension().is_some_and(|x| x == "csv"),
            Schema::Hmd1x1 => true,
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Schema(format!(
            "no input files found in {}",
            dir.display()
        )));
    }

    let mut tables: Vec<RawRateTable> = paths
        .par_iter()
        .map(|p| match schema {
            Schema::Hmd1x1 => parse_hmd_file(p).map(|t| vec![t]),
            Schema::CsvLong => parse_csv_long_file(p),
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    tables.sort_by(|a, b| a.state.cmp(&b.state));
    for t in &mut tables {
        truncate_ages(t, config.truncation_age)?;
    }

    // All states must share one year range and one age set.
    let years: Vec<i32> = tables[0].years.keys().copied().collect();
    if years.is_empty() {
        return Err(Error::Schema(format!(
            "{}: no data rows",
            tables[0].source_path.display()
        )));
    }
    let age_keys: Vec<u64> = tables[0]
        .years
        .values()
        .next()
        .map(|r| r.rows.keys().copied().collect())
        .unwrap_or_default();
    for t in &tables {
        let t_years: Vec<i32> = t.years.keys().copied().collect();
        if t_years != years {
            return Err(Error::Schema(format!(
                "{}: year range differs from {}",
                t.source_path.display(),
                tables[0].source_path.display()
            )));
        }
        for (year, rows) in &t.years {
            let keys: Vec<u64> = rows.rows.keys().copied().collect();
            if keys != age_keys {
                return Err(Error::Schema(format!(
                    "{}: age range for year {year} differs",
                    t.source_path.display()
                )));
            }
        }
    }

    let ages: Vec<f64> = age_keys.iter().map(|k| age_from_key(*k)).collect();
    let grid = AgeGrid::new(ages.clone())?;
    let states: Vec<String> = tables.iter().map(|t| t.state.clone()).collect();
    let genders = vec!["F".to_string(), "M".to_string()];
    let (ns, nt, np) = (states.len(), years.len(), ages.len());

    // Transform and (optionally) smooth every (state, gender, year) curve.
    struct WorkItem {
        s: usize,
        g: usize,
        t: usize,
        raw: Vec<Option<f64>>,
        context: String,
    }
    let mut items = Vec::with_capacity(ns * 2 * nt);
    for (s, table) in tables.iter().enumerate() {
        for (t, (year, rows)) in table.years.iter().enumerate() {
            for (g, gname) in ["F", "M"].iter().enumerate() {
                let raw: Vec<Option<f64>> = rows
                    .rows
                    .values()
                    .map(|(f, m)| if g == 0 { *f } else { *m })
                    .collect();
                items.push(WorkItem {
                    s,
                    g,
                    t,
                    raw,
                    context: format!("{} {gname} {year}", table.state),
                });
            }
        }
    }
    let curves: Vec<((usize, usize, usize), Vec<f64>)> = items
        .into_par_iter()
        .map(|item| {
            let vals = transform_series(&ages, item.raw, config, &item.context)?;
            let vals = if config.smoothing.enabled {
                let curve = Curve::new(grid.clone(), vals)?;
                smooth_curve(&curve, &config.smoothing)?.values().to_vec()
            } else {
                vals
            };
            Ok(((item.s, item.g, item.t), vals))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut data = Array4::<f64>::zeros((ns, 2, nt, np));
    for ((s, g, t), vals) in curves {
        for (i, v) in vals.into_iter().enumerate() {
            data[[s, g, t, i]] = v;
        }
    }

    CurvePanel::new(grid, states, genders, years, data)
}

/// Write a panel as one `csv_long` file per state under `dir`, with
/// deterministic (state, gender, year, age) row order. Values are written
/// with shortest-round-trip formatting, so re-loading with
/// [`ValueTransform::None`] reproduces the panel bit-exactly.
pub fn export_panel(panel: &CurvePanel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for (s, state) in panel.states().iter().enumerate() {
        let path = dir.join(format!("{state}.csv"));
        let file =
            std::fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "state,gender,year,age,rate")
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        write_state_rows(panel, s, &mut w, &path)?;
    }
    Ok(())
}

/// Write the whole panel into a single `csv_long` file.
pub fn export_panel_to(panel: &CurvePanel, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "state,gender,year,age,rate")
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    for s in 0..panel.states().len() {
        write_state_rows(panel, s, &mut w, path)?;
    }
    Ok(())
}

fn write_state_rows(panel: &CurvePanel, s: usize, w: &mut impl Write, path: &Path) -> Result<()> {
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let state = &panel.states()[s];
    let ages = panel.grid().points();
    for (g, gender) in panel.genders().iter().enumerate() {
        for (t, year) in panel.years().iter().enumerate() {
            let row = panel.values_at(s, g, t);
            for (i, age) in ages.iter().enumerate() {
                writeln!(w, "{state},{gender},{year},{age},{}", row[i]).map_err(io_err)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fda::AgeGrid;

    fn mkgrid(n: usize) -> Arc<AgeGrid> {
        AgeGrid::uniform(0.0, (n - 1) as f64, n).unwrap()
    }

    fn cfg_plain() -> SmoothingConfig {
        SmoothingConfig {
            enabled: true,
            lambda: LambdaChoice::Fixed(0.0),
            zero_rate_policy: ZeroRatePolicy::FloorAt(1e-6),
            missing_policy: MissingPolicy::InterpolateLogLinear,
        }
    }

    #[test]
    fn lambda_zero_is_identity() {
        let g = mkgrid(8);
        let c = Curve::new(g, vec![1.0, 4.0, 2.0, 8.0, -1.0, 0.0, 3.0, 2.5]).unwrap();
        let out = smooth_curve(&c, &cfg_plain()).unwrap();
        assert_eq!(out.values(), c.values());
    }

    #[test]
    fn straight_line_is_fixed_point() {
        let g = mkgrid(10);
        let line: Vec<f64> = g.points().iter().map(|u| 2.0 * u - 3.0).collect();
        let c = Curve::new(g, line.clone()).unwrap();
        for lam in [0.0, 1.0, 100.0, 1e8] {
            let mut cfg = cfg_plain();
            cfg.lambda = LambdaChoice::Fixed(lam);
            let out = smooth_curve(&c, &cfg).unwrap();
            for (a, b) in out.values().iter().zip(&line) {
                assert!((a - b).abs() < 1e-10, "lambda={lam}");
            }
        }
    }

    #[test]
    fn huge_lambda_approaches_ols_line() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let g = mkgrid(20);
        let vals: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = Curve::new(g.clone(), vals.clone()).unwrap();
        let mut cfg = cfg_plain();
        cfg.lambda = LambdaChoice::Fixed(1e12);
        let out = smooth_curve(&c, &cfg).unwrap();
        // closed-form simple linear regression on (u, y)
        let n = 20.0;
        let xs = g.points();
        let xbar: f64 = xs.iter().sum::<f64>() / n;
        let ybar: f64 = vals.iter().sum::<f64>() / n;
        let sxy: f64 = xs
            .iter()
            .zip(&vals)
            .map(|(x, y)| (x - xbar) * (y - ybar))
            .sum();
        let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
        let slope = sxy / sxx;
        for (x, got) in xs.iter().zip(out.values()) {
            let want = ybar + slope * (x - xbar);
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn smoother_is_linear_and_mean_preserving() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let g = mkgrid(15);
        let f: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = Smoother::new(15, 3.7).unwrap();
        let combo: Vec<f64> = f.iter().zip(&h).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let lhs = s.apply(&combo);
        let sf = s.apply(&f);
        let sh = s.apply(&h);
        for i in 0..15 {
            assert!((lhs[i] - (2.0 * sf[i] - 0.5 * sh[i])).abs() < 1e-10);
        }
        let mean_in: f64 = f.iter().sum::<f64>() / 15.0;
        let mean_out: f64 = sf.iter().sum::<f64>() / 15.0;
        assert!((mean_in - mean_out).abs() < 1e-10);
    }

    #[test]
    fn too_few_points_rejected() {
        let g = AgeGrid::uniform(0.0, 2.0, 3).unwrap();
        let c = Curve::new(g, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            smooth_curve(&c, &cfg_plain()),
            Err(Error::TooFewPoints { .. })
        ));
    }

    fn write(path: &Path, content: &str) {
        std::fs::write(path, content).unwrap();
    }

    fn no_smooth_config() -> IngestConfig {
        IngestConfig {
            truncation_age: 100.0,
            transform: ValueTransform::Log10,
            smoothing: SmoothingConfig {
                enabled: false,
                ..SmoothingConfig::default()
            },
        }
    }

    #[test]
    fn constant_hmd_table_loads_to_log10() {
        let dir = tempfile::tempdir().unwrap();
        for state in ["Alpha", "Beta"] {
            let mut body = String::from("Year  Age  Female  Male  Total\n");
            for year in 2000..2003 {
                for age in 0..=100 {
                    body.push_str(&format!("{year}  {age}  0.01  0.01  0.01\n"));
                }
            }
            write(&dir.path().join(format!("{state}.Mx_1x1.txt")), &body);
        }
        let panel = load_panel(dir.path(), Schema::Hmd1x1, &no_smooth_config()).unwrap();
        assert_eq!(panel.states(), &["Alpha".to_string(), "Beta".to_string()]);
        assert_eq!(panel.years(), &[2000, 2001, 2002]);
        assert_eq!(panel.grid().len(), 101);
        assert!(panel.data().iter().all(|v| (v + 2.0).abs() < 1e-12));
    }

    #[test]
    fn open_age_group_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("Year Age Female Male Total\n");
        for age in 0..=109 {
            body.push_str(&format!("2000 {age} 0.01 0.01 0.01\n"));
        }
        // open group has a different rate; pooled group = mean of 100..=110
        body.push_str("2000 110+ 0.04 0.04 0.04\n");
        write(&dir.path().join("Solo.txt"), &body);
        let panel = load_panel(dir.path(), Schema::Hmd1x1, &no_smooth_config()).unwrap();
        assert_eq!(panel.grid().len(), 101);
        let last = panel.grid().points()[100];
        assert_eq!(last, 100.0);
        // ages 100..109 at 0.01 plus 110+ at 0.04 -> mean = (10*0.01+0.04)/11
        let want = ((10.0 * 0.01 + 0.04) / 11.0f64).log10();
        let got = panel.values_at(0, 0, 0)[100];
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn missing_interpolates_midpoint_in_log_scale() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("Year Age Female Male Total\n");
        for age in 0..=100 {
            let f = if age == 50 {
                ".".to_string()
            } else if age == 49 {
                "0.001".to_string()
            } else if age == 51 {
                "0.1".to_string()
            } else {
                "0.01".to_string()
            };
            body.push_str(&format!("2000 {age} {f} 0.01 0.01\n"));
        }
        write(&dir.path().join("Solo.txt"), &body);
        let panel = load_panel(dir.path(), Schema::Hmd1x1, &no_smooth_config()).unwrap();
        let got = panel.values_at(0, 0, 0)[50];
        let want = (0.001f64.log10() + 0.1f64.log10()) / 2.0;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn missing_policy_fail_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("Year Age Female Male Total\n");
        for age in 0..=10 {
            let f = if age == 5 { "." } else { "0.01" };
            body.push_str(&format!("2000 {age} {f} 0.01 0.01\n"));
        }
        write(&dir.path().join("Solo.txt"), &body);
        let mut cfg = no_smooth_config();
        cfg.truncation_age = 10.0;
        cfg.smoothing.missing_policy = MissingPolicy::Fail;
        assert!(matches!(
            load_panel(dir.path(), Schema::Hmd1x1, &cfg),
            Err(Error::MissingValue { .. })
        ));
    }

    #[test]
    fn inconsistent_year_ranges_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(
            &dir.path().join("A.txt"),
            "Year Age Female Male\n2000 0 0.1 0.1\n2000 1 0.1 0.1\n",
        );
        write(
            &dir.path().join("B.txt"),
            "Year Age Female Male\n2001 0 0.1 0.1\n2001 1 0.1 0.1\n",
        );
        assert!(matches!(
            load_panel(dir.path(), Schema::Hmd1x1, &no_smooth_config()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn bad_row_reports_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        write(
            &dir.path().join("A.txt"),
            "Year Age Female Male\n2000 0 0.1 0.1\n2000 oops 0.1 0.1\n",
        );
        match load_panel(dir.path(), Schema::Hmd1x1, &no_smooth_config()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn export_load_round_trip_is_bit_exact() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let grid = AgeGrid::uniform(0.0, 4.0, 5).unwrap();
        let data = Array4::from_shape_fn((2, 2, 3, 5), |_| rng.random_range(-5.0..1.0));
        let panel = CurvePanel::new(
            grid,
            vec!["Aa".into(), "Bb".into()],
            vec!["F".into(), "M".into()],
            vec![1990, 1991, 1992],
            data,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_panel(&panel, dir.path()).unwrap();
        let cfg = IngestConfig {
            truncation_age: f64::INFINITY,
            transform: ValueTransform::None,
            smoothing: SmoothingConfig {
                enabled: false,
                ..SmoothingConfig::default()
            },
        };
        let back = load_panel(dir.path(), Schema::CsvLong, &cfg).unwrap();
        assert_eq!(back.states(), panel.states());
        assert_eq!(back.years(), panel.years());
        assert_eq!(back.grid().points(), panel.grid().points());
        assert_eq!(back.max_abs_diff(&panel).unwrap(), 0.0);

        // determinism: two exports are byte-identical
        let dir2 = tempfile::tempdir().unwrap();
        export_panel(&panel, dir2.path()).unwrap();
        for state in ["Aa", "Bb"] {
            let a = std::fs::read(dir.path().join(format!("{state}.csv"))).unwrap();
            let b = std::fs::read(dir2.path().join(format!("{state}.csv"))).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_rate_floor_policy() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("Year Age Female Male Total\n");
        for age in 0..=10 {
            let f = if age == 3 { "0" } else { "0.01" };
            body.push_str(&format!("2000 {age} {f} 0.01 0.01\n"));
        }
        write(&dir.path().join("A.txt"), &body);
        let mut cfg = no_smooth_config();
        cfg.truncation_age = 10.0;
        let panel = load_panel(dir.path(), Schema::Hmd1x1, &cfg).unwrap();
        assert!((panel.values_at(0, 0, 0)[3] - (-6.0)).abs() < 1e-12);
    }
}
