//! Lag autocovariance surfaces and the kernel-sandwich long-run covariance
//! estimator for a functional time series.
//!
//! For curves X_1..X_T with pointwise sample mean Xbar, the lag-l surface is
//!
//! ```text
//! gamma_l(u,v) = (1/T) * sum_{t=1..T-l} [X_t(u)-Xbar(u)] [X_{t+l}(v)-Xbar(v)]   (l >= 0)
//! gamma_{-l}(u,v) = gamma_l(v,u)
//! ```
//!
//! and the long-run estimate is the weighted lag sum
//! `sum_{|l| <= L} W(l/b) * gamma_l(u,v)` with a symmetric bounded-support
//! weight `W`, bandwidth `b`, and cutoff `L = min(T-1, ceil(b))`, followed by
//! exact symmetrization.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::fda::{Curve, CurvePanel};

/// Symmetric bounded-support weight family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    /// W(x) = max(0, 1-|x|). Guarantees a positive semidefinite estimate.
    Bartlett,
    /// W(x) = 1 on |x| <= 1/2, then 2(1-|x|) down to 0 at |x| = 1.
    FlatTop,
    /// W(x) = 1 on |x| <= 1. With b >= T this reproduces the plain
    /// truncated lag sum.
    Rectangular,
}

impl KernelFamily {
    pub fn weight(self, x: f64) -> f64 {
        let a = x.abs();
        match self {
            KernelFamily::Bartlett => (1.0 - a).max(0.0),
            KernelFamily::FlatTop => {
                if a <= 0.5 {
                    1.0
                } else if a <= 1.0 {
                    2.0 * (1.0 - a)
                } else {
                    0.0
                }
            }
            KernelFamily::Rectangular => {
                if a <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Support cutoff c: weight vanishes for |x| > c.
    pub fn cutoff(self) -> f64 {
        1.0
    }
}

/// Bandwidth policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// b = T^(1/5).
    RuleOfThumb,
}

/// Kernel family plus bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: Bandwidth,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            family: KernelFamily::Bartlett,
            bandwidth: Bandwidth::RuleOfThumb,
        }
    }
}

impl KernelSpec {
    pub fn resolve_bandwidth(&self, t: usize) -> Result<f64> {
        match self.bandwidth {
            Bandwidth::Fixed(b) => {
                if b <= 0.0 {
                    Err(Error::InvalidConfig("bandwidth must be > 0".into()))
                } else {
                    Ok(b)
                }
            }
            Bandwidth::RuleOfThumb => rule_of_thumb_bandwidth(t, self.family),
        }
    }
}

/// Fixed-rate bandwidth rule b = T^(1/5).
pub fn rule_of_thumb_bandwidth(t: usize, _family: KernelFamily) -> Result<f64> {
    if t < 4 {
        return Err(Error::SeriesTooShort {
            len: t,
            need: 4,
            context: "bandwidth rule".into(),
        });
    }
    Ok((t as f64).powf(0.2))
}

/// One lag's autocovariance surface.
#[derive(Debug, Clone)]
pub struct LagAutocovariance {
    pub lag: i64,
    pub surface: Array2<f64>,
}

/// Weighted lag-sum estimate of the long-run covariance surface.
#[derive(Debug, Clone)]
pub struct LongRunCovariance {
    pub surface: Array2<f64>,
    pub kernel: KernelSpec,
    pub bandwidth: f64,
    pub lags_used: usize,
}

fn centered(series: &[Curve]) -> (Vec<Vec<f64>>, usize) {
    let t_len = series.len();
    let p = series[0].len();
    let mut mean = vec![0.0; p];
    for c in series {
        for (m, v) in mean.iter_mut().zip(c.values()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= t_len as f64;
    }
    let dev: Vec<Vec<f64>> = series
        .iter()
        .map(|c| c.values().iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    (dev, p)
}

fn lag_surface_nonneg(dev: &[Vec<f64>], p: usize, l: usize) -> Array2<f64> {
    let t_len = dev.len();
    let mut out = Array2::<f64>::zeros((p, p));
    for t in 0..t_len - l {
        let a = &dev[t];
        let b = &dev[t + l];
        for i in 0..p {
            let ai = a[i];
            if ai == 0.0 {
                continue;
            }
            let row = out.row_mut(i);
            let row = row.into_slice().expect("contiguous row");
            for (o, bv) in row.iter_mut().zip(b) {
                *o += ai * bv;
            }
        }
    }
    out.mapv_inplace(|v| v / t_len as f64);
    out
}

/// Empirical lag-l autocovariance surface; negative lags are the transpose of
/// the corresponding positive lag.
pub fn lag_autocov(series: &[Curve], lag: i64) -> Result<LagAutocovariance> {
    if series.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let t_len = series.len();
    if lag.unsigned_abs() as usize >= t_len {
        return Err(Error::LagOutOfRange {
            lag,
            len: t_len,
        });
    }
    for c in &series[1..] {
        if !c.grid().same_as(series[0].grid()) {
            return Err(Error::GridMismatch {
                left: series[0].len(),
                right: c.len(),
            });
        }
    }
    let (dev, p) = centered(series);
    let surface = lag_surface_nonneg(&dev, p, lag.unsigned_abs() as usize);
    let surface = if lag < 0 { surface.t().to_owned() } else { surface };
    Ok(LagAutocovariance { lag, surface })
}

/// Kernel-sandwich long-run covariance estimate.
///
/// Lags are accumulated in a fixed order (ascending |l|, negative before
/// positive) so results are bit-reproducible, then the matrix is symmetrized
/// as (M + M')/2.
pub fn long_run_cov(series: &[Curve], kernel: &KernelSpec) -> Result<LongRunCovariance> {
    let t_len = series.len();
    if t_len < 4 {
        return Err(Error::SeriesTooShort {
            len: t_len,
            need: 4,
            context: "long-run covariance".into(),
        });
    }
    for c in &series[1..] {
        if !c.grid().same_as(series[0].grid()) {
            return Err(Error::GridMismatch {
                left: series[0].len(),
                right: c.len(),
            });
        }
    }
    let b = kernel.resolve_bandwidth(t_len)?;
    let cutoff_lag = (kernel.family.cutoff() * b).ceil() as usize;
    let lags_used = cutoff_lag.min(t_len - 1);

    let (dev, p) = centered(series);
    let mut acc = lag_surface_nonneg(&dev, p, 0); // W(0) = 1
    for l in 1..=lags_used {
        let w = kernel.family.weight(l as f64 / b);
        if w == 0.0 {
            continue;
        }
        let pos = lag_surface_nonneg(&dev, p, l);
        let neg = pos.t();
        // negative lag first, then positive
        acc.zip_mut_with(&neg, |a, v| *a += w * v);
        acc.zip_mut_with(&pos, |a, v| *a += w * v);
    }
    let sym = (&acc + &acc.t()) / 2.0;
    Ok(LongRunCovariance {
        surface: sym,
        kernel: *kernel,
        bandwidth: b,
        lags_used,
    })
}

/// Write a surface as a dense CSV matrix with grid headers: first row is
/// `age` followed by the grid points; each data row starts with its age.
pub fn export_surface(
    surface: &Array2<f64>,
    grid_points: &[f64],
    path: &std::path::Path,
) -> Result<()> {
    use std::io::Write;
    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    write!(w, "age").map_err(io_err)?;
    for a in grid_points {
        write!(w, ",{a}").map_err(io_err)?;
    }
    writeln!(w).map_err(io_err)?;
    for (i, a) in grid_points.iter().enumerate() {
        write!(w, "{a}").map_err(io_err)?;
        for j in 0..grid_points.len() {
            write!(w, ",{}", surface[[i, j]]).map_err(io_err)?;
        }
        writeln!(w).map_err(io_err)?;
    }
    Ok(())
}

/// Convenience: per-(state, gender) long-run surfaces for a panel's series.
pub fn panel_long_run_cov(
    panel: &CurvePanel,
    kernel: &KernelSpec,
) -> Result<Vec<((usize, usize), LongRunCovariance)>> {
    let (ns, ng, _, _) = panel.dim();
    let mut out = Vec::with_capacity(ns * ng);
    for s in 0..ns {
        for g in 0..ng {
            out.push(((s, g), long_run_cov(&panel.series(s, g), kernel)?));
        }
    }
    Ok(out)
}
