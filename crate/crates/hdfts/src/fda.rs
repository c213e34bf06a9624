//! Grids, curves, and panels of curves, plus the pointwise statistics the
//! decompositions are built from.
//!
//! A [`Curve`] is a function sampled on an [`AgeGrid`]; the grid carries
//! trapezoidal quadrature weights so that inner products approximate the
//! continuous L2 inner product on the grid's support. A [`CurvePanel`] holds
//! the full state x gender x year collection of curves on one shared grid.
//!
//! All types are immutable after construction; operations return new values.

use std::sync::Arc;

use ndarray::{Array4, ArrayView1, ArrayView4};

use crate::error::{Error, Result};

/// Discretization of the functional support: strictly increasing abscissae
/// with trapezoidal quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeGrid {
    points: Vec<f64>,
    quad_weights: Vec<f64>,
}

impl AgeGrid {
    /// Build a grid from strictly increasing points (at least two).
    pub fn new(points: Vec<f64>) -> Result<Arc<Self>> {
        if points.len() < 2 {
            return Err(Error::TooFewPoints {
                need: 2,
                got: points.len(),
            });
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidGrid("non-finite grid point".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(
                "grid points must be strictly increasing".into(),
            ));
        }
        let p = points.len();
        let mut w = vec![0.0; p];
        w[0] = (points[1] - points[0]) / 2.0;
        w[p - 1] = (points[p - 1] - points[p - 2]) / 2.0;
        for i in 1..p - 1 {
            w[i] = (points[i + 1] - points[i - 1]) / 2.0;
        }
        Ok(Arc::new(AgeGrid {
            points,
            quad_weights: w,
        }))
    }

    /// Equispaced grid with `n` points on `[start, end]`.
    pub fn uniform(start: f64, end: f64, n: usize) -> Result<Arc<Self>> {
        if n < 2 {
            return Err(Error::TooFewPoints { need: 2, got: n });
        }
        let step = (end - start) / (n - 1) as f64;
        AgeGrid::new((0..n).map(|i| start + step * i as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.quad_weights
    }

    /// Two grids are interchangeable when their points agree exactly.
    pub fn same_as(&self, other: &AgeGrid) -> bool {
        std::ptr::eq(self, other) || self.points == other.points
    }
}

fn check_same_grid(a: &AgeGrid, b: &AgeGrid) -> Result<()> {
    if a.same_as(b) {
        Ok(())
    } else {
        Err(Error::GridMismatch {
            left: a.len(),
            right: b.len(),
        })
    }
}

/// A single function sampled on an [`AgeGrid`]. Values are finite by
/// construction.
#[derive(Debug, Clone)]
pub struct Curve {
    grid: Arc<AgeGrid>,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(grid: Arc<AgeGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "curve has {} values on a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel("non-finite curve value".into()));
        }
        Ok(Curve { grid, values })
    }

    /// Constant curve.
    pub fn constant(grid: Arc<AgeGrid>, c: f64) -> Result<Self> {
        let p = grid.len();
        Curve::new(grid, vec![c; p])
    }

    pub fn zero(grid: Arc<AgeGrid>) -> Self {
        let p = grid.len();
        Curve {
            grid,
            values: vec![0.0; p],
        }
    }

    pub fn grid(&self) -> &Arc<AgeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Pointwise sum; grids must match.
    pub fn add(&self, other: &Curve) -> Result<Curve> {
        check_same_grid(&self.grid, &other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Curve {
            grid: self.grid.clone(),
            values,
        })
    }

    /// Pointwise difference; grids must match.
    pub fn sub(&self, other: &Curve) -> Result<Curve> {
        check_same_grid(&self.grid, &other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Curve {
            grid: self.grid.clone(),
            values,
        })
    }

    pub fn scale(&self, c: f64) -> Curve {
        Curve {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn shift(&self, c: f64) -> Curve {
        Curve {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }

    /// Max absolute value over the grid.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Quadrature inner product of two curves on a shared grid.
pub fn inner_product(f: &Curve, g: &Curve) -> Result<f64> {
    check_same_grid(&f.grid, &g.grid)?;
    let w = f.grid.weights();
    Ok(f.values
        .iter()
        .zip(&g.values)
        .zip(w)
        .map(|((a, b), wi)| a * b * wi)
        .sum())
}

/// Standard sample median of a slice (midpoint of the central pair for even
/// counts). The slice is copied; NaNs are excluded by curve construction.
pub(crate) fn median_of(values: &mut [f64]) -> f64 {
    let n = values.len();
    debug_assert!(n > 0);
    let mid = n / 2;
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    if n % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    }
}

/// Pointwise median across a nonempty collection of curves on one grid.
pub fn pointwise_median(curves: &[Curve]) -> Result<Curve> {
    let first = curves.first().ok_or(Error::EmptyCollection)?;
    for c in &curves[1..] {
        check_same_grid(&first.grid, &c.grid)?;
    }
    let p = first.len();
    let mut buf = vec![0.0; curves.len()];
    let mut out = vec![0.0; p];
    for (i, o) in out.iter_mut().enumerate() {
        for (c, b) in curves.iter().zip(buf.iter_mut()) {
            *b = c.values[i];
        }
        *o = median_of(&mut buf);
    }
    Ok(Curve {
        grid: first.grid.clone(),
        values: out,
    })
}

/// Pointwise arithmetic mean across a nonempty collection of curves.
pub fn pointwise_mean(curves: &[Curve]) -> Result<Curve> {
    let first = curves.first().ok_or(Error::EmptyCollection)?;
    for c in &curves[1..] {
        check_same_grid(&first.grid, &c.grid)?;
    }
    let p = first.len();
    let n = curves.len() as f64;
    let mut out = vec![0.0; p];
    for c in curves {
        for (o, v) in out.iter_mut().zip(&c.values) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= n;
    }
    Ok(Curve {
        grid: first.grid.clone(),
        values: out,
    })
}

/// A state x gender x year panel of curves on one shared grid.
///
/// Layout: `data[s, g, t, i]` is the value for state `s`, gender `g`,
/// year index `t` at grid point `i`.
#[derive(Debug, Clone)]
pub struct CurvePanel {
    grid: Arc<AgeGrid>,
    states: Vec<String>,
    genders: Vec<String>,
    years: Vec<i32>,
    data: Array4<f64>,
}

impl CurvePanel {
    pub fn new(
        grid: Arc<AgeGrid>,
        states: Vec<String>,
        genders: Vec<String>,
        years: Vec<i32>,
        data: Array4<f64>,
    ) -> Result<Self> {
        let (s, g, t, p) = data.dim();
        if s != states.len() || g != genders.len() || t != years.len() || p != grid.len() {
            return Err(Error::InvalidPanel(format!(
                "label counts ({},{},{},{}) do not match data extents ({},{},{},{})",
                states.len(),
                genders.len(),
                years.len(),
                grid.len(),
                s,
                g,
                t,
                p
            )));
        }
        if years.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPanel("years must be strictly increasing".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel("non-finite panel value".into()));
        }
        Ok(CurvePanel {
            grid,
            states,
            genders,
            years,
            data,
        })
    }

    pub fn grid(&self) -> &Arc<AgeGrid> {
        &self.grid
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn genders(&self) -> &[String] {
        &self.genders
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    /// (S, G, T, p).
    pub fn dim(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> ArrayView4<'_, f64> {
        self.data.view()
    }

    pub(crate) fn data_array(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn values_at(&self, state: usize, gender: usize, year: usize) -> ArrayView1<'_, f64> {
        self.data.slice(ndarray::s![state, gender, year, ..])
    }

    /// Copy out the curve for one (state, gender, year) cell.
    pub fn curve(&self, state: usize, gender: usize, year: usize) -> Curve {
        Curve {
            grid: self.grid.clone(),
            values: self.values_at(state, gender, year).to_vec(),
        }
    }

    /// Copy out the year-ordered series of curves for one (state, gender).
    pub fn series(&self, state: usize, gender: usize) -> Vec<Curve> {
        (0..self.years.len())
            .map(|t| self.curve(state, gender, t))
            .collect()
    }

    /// Same labels and grid, different data.
    pub fn with_data(&self, data: Array4<f64>) -> Result<CurvePanel> {
        CurvePanel::new(
            self.grid.clone(),
            self.states.clone(),
            self.genders.clone(),
            self.years.clone(),
            data,
        )
    }

    /// Same labels/grid but a different year axis (used by forecasts).
    pub fn with_years_and_data(&self, years: Vec<i32>, data: Array4<f64>) -> Result<CurvePanel> {
        CurvePanel::new(
            self.grid.clone(),
            self.states.clone(),
            self.genders.clone(),
            years,
            data,
        )
    }

    /// Pointwise maximum absolute difference between two panels.
    pub fn max_abs_diff(&self, other: &CurvePanel) -> Result<f64> {
        if self.data.dim() != other.data.dim() {
            return Err(Error::DimensionMismatch(format!(
                "panel dims {:?} vs {:?}",
                self.data.dim(),
                other.data.dim()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Restrict the panel to a contiguous range of year indices.
    pub fn year_slice(&self, start: usize, end: usize) -> Result<CurvePanel> {
        if start >= end || end > self.years.len() {
            return Err(Error::DimensionMismatch(format!(
                "year slice {}..{} out of range 0..{}",
                start,
                end,
                self.years.len()
            )));
        }
        let data = self
            .data
            .slice(ndarray::s![.., .., start..end, ..])
            .to_owned();
        CurvePanel::new(
            self.grid.clone(),
            self.states.clone(),
            self.genders.clone(),
            self.years[start..end].to_vec(),
            data,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> Arc<AgeGrid> {
        AgeGrid::uniform(0.0, (n - 1) as f64, n).unwrap()
    }

    #[test]
    fn trapezoid_weights_sum_to_span() {
        let g = AgeGrid::new(vec![0.0, 0.5, 2.0, 3.0]).unwrap();
        let total: f64 = g.weights().iter().sum();
        assert!((total - 3.0).abs() < 1e-12);
        assert!(g.weights().iter().all(|w| *w > 0.0));
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(AgeGrid::new(vec![0.0]).is_err());
        assert!(AgeGrid::new(vec![0.0, 0.0]).is_err());
        assert!(AgeGrid::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn inner_product_of_constants() {
        let g = AgeGrid::uniform(0.0, 100.0, 101).unwrap();
        let one = Curve::constant(g.clone(), 1.0).unwrap();
        let neg = Curve::constant(g.clone(), -1.0).unwrap();
        assert!((inner_product(&one, &one).unwrap() - 100.0).abs() < 1e-12);
        assert!((inner_product(&one, &neg).unwrap() + 100.0).abs() < 1e-12);
    }

    #[test]
    fn inner_product_linear_function() {
        // Trapezoid integrates u exactly; integral of u over [0,1] is 1/2.
        let g = AgeGrid::uniform(0.0, 1.0, 1001).unwrap();
        let f = Curve::new(g.clone(), g.points().to_vec()).unwrap();
        let one = Curve::constant(g.clone(), 1.0).unwrap();
        assert!((inner_product(&f, &one).unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn inner_product_grid_mismatch() {
        let f = Curve::constant(grid(5), 1.0).unwrap();
        let h = Curve::constant(grid(6), 1.0).unwrap();
        assert!(matches!(
            inner_product(&f, &h),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn median_robust_to_outlier() {
        let g = grid(4);
        let curves = vec![
            Curve::constant(g.clone(), 1.0).unwrap(),
            Curve::constant(g.clone(), 2.0).unwrap(),
            Curve::constant(g.clone(), 100.0).unwrap(),
        ];
        let m = pointwise_median(&curves).unwrap();
        assert!(m.values().iter().all(|v| *v == 2.0));
    }

    #[test]
    fn median_of_two_is_midpoint() {
        let g = grid(3);
        let a = Curve::new(g.clone(), vec![0.0, 2.0, 4.0]).unwrap();
        let b = Curve::new(g.clone(), vec![1.0, 3.0, 9.0]).unwrap();
        let m = pointwise_median(&[a, b]).unwrap();
        assert_eq!(m.values(), &[0.5, 2.5, 6.5]);
    }

    #[test]
    fn median_matches_sort_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let g = grid(11);
        let curves: Vec<Curve> = (0..5)
            .map(|_| {
                Curve::new(
                    g.clone(),
                    (0..11).map(|_| rng.random_range(-5.0..5.0)).collect(),
                )
                .unwrap()
            })
            .collect();
        let m = pointwise_median(&curves).unwrap();
        for i in 0..11 {
            let mut col: Vec<f64> = curves.iter().map(|c| c.values()[i]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(m.values()[i], col[2]);
        }
    }

    #[test]
    fn mean_examples() {
        let g = grid(4);
        let c = Curve::new(g.clone(), vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let single = pointwise_mean(std::slice::from_ref(&c)).unwrap();
        assert_eq!(single.values(), c.values());
        let m = pointwise_mean(&[c.clone(), c.scale(-1.0)]).unwrap();
        assert!(m.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mean_matches_summation_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let g = grid(9);
        let curves: Vec<Curve> = (0..7)
            .map(|_| {
                Curve::new(
                    g.clone(),
                    (0..9).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
                .unwrap()
            })
            .collect();
        let m = pointwise_mean(&curves).unwrap();
        for i in 0..9 {
            let s: f64 = curves.iter().map(|c| c.values()[i]).sum();
            assert!((m.values()[i] - s / 7.0).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_collection_errors() {
        assert!(matches!(pointwise_median(&[]), Err(Error::EmptyCollection)));
        assert!(matches!(pointwise_mean(&[]), Err(Error::EmptyCollection)));
    }

    #[test]
    fn inner_product_positive_definite_on_grid() {
        let g = grid(6);
        let z = Curve::zero(g.clone());
        assert_eq!(inner_product(&z, &z).unwrap(), 0.0);
        let f = Curve::new(g.clone(), vec![0.0, 0.0, 1e-8, 0.0, 0.0, 0.0]).unwrap();
        assert!(inner_product(&f, &f).unwrap() > 0.0);
    }

    proptest! {
        #[test]
        fn median_translation_equivariant(
            vals in proptest::collection::vec(
                proptest::collection::vec(-100.0f64..100.0, 5), 1..8),
            c in -50.0f64..50.0,
        ) {
            let g = grid(5);
            let curves: Vec<Curve> = vals
                .iter()
                .map(|v| Curve::new(g.clone(), v.clone()).unwrap())
                .collect();
            let shifted: Vec<Curve> = curves.iter().map(|cv| cv.shift(c)).collect();
            let m0 = pointwise_median(&curves).unwrap();
            let m1 = pointwise_median(&shifted).unwrap();
            for i in 0..5 {
                prop_assert!((m1.values()[i] - (m0.values()[i] + c)).abs() < 1e-9);
            }
        }

        #[test]
        fn median_breakdown_max_replacement(
            vals in proptest::collection::vec(
                proptest::collection::vec(-10.0f64..10.0, 4), 3..=7)
                .prop_filter("odd count", |v| v.len() % 2 == 1),
            bump in 0.1f64..1e6,
        ) {
            let g = grid(4);
            let curves: Vec<Curve> = vals
                .iter()
                .map(|v| Curve::new(g.clone(), v.clone()).unwrap())
                .collect();
            let m0 = pointwise_median(&curves).unwrap();
            // Replace the pointwise-largest curve values by something even larger.
            let mut vals2 = vals.clone();
            for i in 0..4 {
                let (argmax, _) = vals
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (j, v[i]))
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .unwrap();
                vals2[argmax][i] += bump;
            }
            let curves2: Vec<Curve> = vals2
                .iter()
                .map(|v| Curve::new(g.clone(), v.clone()).unwrap())
                .collect();
            let m1 = pointwise_median(&curves2).unwrap();
            for i in 0..4 {
                prop_assert_eq!(m0.values()[i], m1.values()[i]);
            }
        }
    }
}
