//! Two-way additive decomposition of a curve panel into grand, row (state),
//! and column (gender) effect curves plus residuals.
//!
//! Two fitting rules are provided: iterative pointwise median polish (robust)
//! and a single-pass decomposition by means. Years are treated as replicates:
//! a row or column sweep takes the pointwise median (or mean) over every
//! curve in that block, all years included.
//!
//! Both decompositions satisfy the reconstruction identity
//! `input = grand + row_effect + col_effect + residual` at every grid point
//! by construction, converged or not.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Array4};

use crate::error::{Error, Result};
use crate::fda::{Curve, CurvePanel};
use crate::fda::median_of;

/// Which fitting rule produced a [`PolishDecomposition`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecompositionMethod {
    MedianPolish,
    Means,
}

/// Result of a two-way functional decomposition.
#[derive(Debug, Clone)]
pub struct PolishDecomposition {
    pub grand: Curve,
    pub row_effects: Vec<Curve>,
    pub col_effects: Vec<Curve>,
    pub residuals: CurvePanel,
    pub method: DecompositionMethod,
    pub iterations: usize,
    pub converged: bool,
}

impl PolishDecomposition {
    /// Rebuild `grand + row + col + residual` and return the panel.
    pub fn reconstruct(&self) -> Result<CurvePanel> {
        self.apply_effects(&self.residuals)
    }

    /// Add the deterministic effects back onto a panel of residual-scale
    /// curves sharing this decomposition's state/gender labels.
    pub fn apply_effects(&self, residual_forecast: &CurvePanel) -> Result<CurvePanel> {
        if residual_forecast.states() != self.residuals.states()
            || residual_forecast.genders() != self.residuals.genders()
        {
            return Err(Error::LabelMismatch(
                "forecast panel labels differ from the decomposition's".into(),
            ));
        }
        if !residual_forecast.grid().same_as(self.residuals.grid()) {
            return Err(Error::GridMismatch {
                left: residual_forecast.grid().len(),
                right: self.residuals.grid().len(),
            });
        }
        let (ns, ng, nt, np) = residual_forecast.dim();
        let mut data = residual_forecast.data().to_owned();
        for s in 0..ns {
            for g in 0..ng {
                for t in 0..nt {
                    for i in 0..np {
                        data[[s, g, t, i]] += self.grand.values()[i]
                            + self.row_effects[s].values()[i]
                            + self.col_effects[g].values()[i];
                    }
                }
            }
        }
        residual_forecast.with_data(data)
    }

    /// Max absolute violation of `input = grand + row + col + residual`.
    pub fn reconstruction_error(&self, input: &CurvePanel) -> Result<f64> {
        self.reconstruct()?.max_abs_diff(input)
    }

    /// Write grand.csv, row_effects.csv, col_effects.csv, residuals.csv
    /// under `dir` with deterministic row order.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let ages = self.residuals.grid().points();

        let grand_path = dir.join("grand.csv");
        let mut f = create(&grand_path)?;
        wline(&mut f, &grand_path, "age,value")?;
        for (a, v) in ages.iter().zip(self.grand.values()) {
            wline(&mut f, &grand_path, &format!("{a},{v}"))?;
        }

        let row_path = dir.join("row_effects.csv");
        let mut f = create(&row_path)?;
        wline(&mut f, &row_path, "state,age,value")?;
        for (s, curve) in self.residuals.states().iter().zip(&self.row_effects) {
            for (a, v) in ages.iter().zip(curve.values()) {
                wline(&mut f, &row_path, &format!("{s},{a},{v}"))?;
            }
        }

        let col_path = dir.join("col_effects.csv");
        let mut f = create(&col_path)?;
        wline(&mut f, &col_path, "gender,age,value")?;
        for (g, curve) in self.residuals.genders().iter().zip(&self.col_effects) {
            for (a, v) in ages.iter().zip(curve.values()) {
                wline(&mut f, &col_path, &format!("{g},{a},{v}"))?;
            }
        }

        crate::ingest::export_panel_to(&self.residuals, &dir.join("residuals.csv"))?;
        Ok(())
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn wline(f: &mut impl Write, path: &Path, line: &str) -> Result<()> {
    writeln!(f, "{line}").map_err(|e| Error::io(path.display().to_string(), e))
}

/// Default sweep-adjustment tolerance for [`median_polish`].
pub const DEFAULT_POLISH_TOL: f64 = 1e-8;
/// Default iteration cap for [`median_polish`].
pub const DEFAULT_POLISH_MAX_ITER: usize = 50;

fn check_design(panel: &CurvePanel) -> Result<(usize, usize, usize, usize)> {
    let (ns, ng, nt, np) = panel.dim();
    if ns < 2 || ng < 2 {
        return Err(Error::DegenerateDesign { rows: ns, cols: ng });
    }
    debug_assert!(nt >= 1);
    Ok((ns, ng, nt, np))
}

/// Iterative two-way functional median polish.
///
/// Sweep order per iteration (rows = states, columns = genders):
/// 1. subtract the pointwise median over each row block (all genders and
///    years) from the residuals and add it to the row effect;
/// 2. move the pointwise median of the column effects into the grand effect;
/// 3. subtract the pointwise median over each column block from the
///    residuals and add it to the column effect;
/// 4. move the pointwise median of the row effects into the grand effect.
///
/// Stops when the largest absolute adjustment over all grid points in an
/// iteration drops below `tol`, or after `max_iter` iterations. Median
/// polish may cycle; non-convergence is reported, not an error.
pub fn median_polish(panel: &CurvePanel, max_iter: usize, tol: f64) -> Result<PolishDecomposition> {
    if tol <= 0.0 {
        return Err(Error::InvalidConfig("polish tol must be > 0".into()));
    }
    let (ns, ng, nt, np) = check_design(panel)?;
    let mut z: Array4<f64> = panel.data().to_owned();
    let mut grand = Array1::<f64>::zeros(np);
    let mut rows = Array2::<f64>::zeros((ns, np));
    let mut cols = Array2::<f64>::zeros((ng, np));

    let mut row_buf = vec![0.0; ng * nt];
    let mut col_buf = vec![0.0; ns * nt];
    let mut eff_buf = vec![0.0; ns.max(ng)];

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut max_adj: f64 = 0.0;

        // 1. row sweep over (gender, year) blocks
        for s in 0..ns {
            for i in 0..np {
                let mut k = 0;
                for g in 0..ng {
                    for t in 0..nt {
                        row_buf[k] = z[[s, g, t, i]];
                        k += 1;
                    }
                }
                let m = median_of(&mut row_buf);
                max_adj = max_adj.max(m.abs());
                for g in 0..ng {
                    for t in 0..nt {
                        z[[s, g, t, i]] -= m;
                    }
                }
                rows[[s, i]] += m;
            }
        }

        // 2. recenter column effects
        for i in 0..np {
            let buf = &mut eff_buf[..ng];
            for g in 0..ng {
                buf[g] = cols[[g, i]];
            }
            let m = median_of(buf);
            max_adj = max_adj.max(m.abs());
            for g in 0..ng {
                cols[[g, i]] -= m;
            }
            grand[i] += m;
        }

        // 3. column sweep over (state, year) blocks
        for g in 0..ng {
            for i in 0..np {
                let mut k = 0;
                for s in 0..ns {
                    for t in 0..nt {
                        col_buf[k] = z[[s, g, t, i]];
                        k += 1;
                    }
                }
                let m = median_of(&mut col_buf);
                max_adj = max_adj.max(m.abs());
                for s in 0..ns {
                    for t in 0..nt {
                        z[[s, g, t, i]] -= m;
                    }
                }
                cols[[g, i]] += m;
            }
        }

        // 4. recenter row effects
        for i in 0..np {
            let buf = &mut eff_buf[..ns];
            for s in 0..ns {
                buf[s] = rows[[s, i]];
            }
            let m = median_of(buf);
            max_adj = max_adj.max(m.abs());
            for s in 0..ns {
                rows[[s, i]] -= m;
            }
            grand[i] += m;
        }

        #[cfg(debug_assertions)]
        {
            let err = reconstruction_residual(panel, &grand, &rows, &cols, &z);
            debug_assert!(err < 1e-9, "reconstruction drifted to {err}");
        }

        if max_adj < tol {
            converged = true;
            break;
        }
    }

    assemble(
        panel,
        grand,
        rows,
        cols,
        z,
        DecompositionMethod::MedianPolish,
        iterations,
        converged,
    )
}

/// Single-pass two-way decomposition by means (the non-robust benchmark).
///
/// Grand = overall pointwise mean, row effect = row-block mean minus grand,
/// column effect = column-block mean minus grand; effects average to zero
/// pointwise by construction.
pub fn mean_anova(panel: &CurvePanel) -> Result<PolishDecomposition> {
    let (ns, ng, nt, np) = check_design(panel)?;
    let data = panel.data();
    let mut grand = Array1::<f64>::zeros(np);
    let mut rows = Array2::<f64>::zeros((ns, np));
    let mut cols = Array2::<f64>::zeros((ng, np));

    for s in 0..ns {
        for g in 0..ng {
            for t in 0..nt {
                for i in 0..np {
                    let v = data[[s, g, t, i]];
                    grand[i] += v;
                    rows[[s, i]] += v;
                    cols[[g, i]] += v;
                }
            }
        }
    }
    let cells = (ns * ng * nt) as f64;
    for i in 0..np {
        grand[i] /= cells;
    }
    for s in 0..ns {
        for i in 0..np {
            rows[[s, i]] = rows[[s, i]] / (ng * nt) as f64 - grand[i];
        }
    }
    for g in 0..ng {
        for i in 0..np {
            cols[[g, i]] = cols[[g, i]] / (ns * nt) as f64 - grand[i];
        }
    }

    let mut z = data.to_owned();
    for s in 0..ns {
        for g in 0..ng {
            for t in 0..nt {
                for i in 0..np {
                    z[[s, g, t, i]] -= grand[i] + rows[[s, i]] + cols[[g, i]];
                }
            }
        }
    }

    assemble(
        panel,
        grand,
        rows,
        cols,
        z,
        DecompositionMethod::Means,
        1,
        true,
    )
}

/// Decomposition with zero effects: residuals are the input itself. Used by
/// the independent (no pooling) forecasting route.
pub fn identity_decomposition(panel: &CurvePanel) -> Result<PolishDecomposition> {
    let (ns, ng, _, np) = panel.dim();
    assemble(
        panel,
        Array1::zeros(np),
        Array2::zeros((ns, np)),
        Array2::zeros((ng, np)),
        panel.data().to_owned(),
        DecompositionMethod::Means,
        0,
        true,
    )
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    panel: &CurvePanel,
    grand: Array1<f64>,
    rows: Array2<f64>,
    cols: Array2<f64>,
    z: Array4<f64>,
    method: DecompositionMethod,
    iterations: usize,
    converged: bool,
) -> Result<PolishDecomposition> {
    let grid = panel.grid().clone();
    let grand = Curve::new(grid.clone(), grand.to_vec())?;
    let row_effects = rows
        .rows()
        .into_iter()
        .map(|r| Curve::new(grid.clone(), r.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let col_effects = cols
        .rows()
        .into_iter()
        .map(|r| Curve::new(grid.clone(), r.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(PolishDecomposition {
        grand,
        row_effects,
        col_effects,
        residuals: panel.with_data(z)?,
        method,
        iterations,
        converged,
    })
}

#[cfg(debug_assertions)]
fn reconstruction_residual(
    panel: &CurvePanel,
    grand: &Array1<f64>,
    rows: &Array2<f64>,
    cols: &Array2<f64>,
    z: &Array4<f64>,
) -> f64 {
    let data = panel.data();
    let (ns, ng, nt, np) = panel.dim();
    let mut worst: f64 = 0.0;
    for s in 0..ns {
        for g in 0..ng {
            for t in 0..nt {
                for i in 0..np {
                    let rebuilt = grand[i] + rows[[s, i]] + cols[[g, i]] + z[[s, g, t, i]];
                    worst = worst.max((rebuilt - data[[s, g, t, i]]).abs());
                }
            }
        }
    }
    worst
}
