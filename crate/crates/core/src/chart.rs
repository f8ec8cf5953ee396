//! Coordinate patches with rectangular sample grids, sampled fields and
//! numerical differentiation.
//!
//! Fields keep their defining evaluators, so derivatives are taken by central
//! differences with off-grid re-evaluation at `x +- h e_mu` rather than by
//! grid stencils. Derived fields (products, inverses, contractions) compose
//! evaluators, which keeps every finite difference a first-level difference
//! of an analytically evaluatable quantity. Fields built from raw samples
//! fall back to grid-stencil differences with one-sided boundaries.

use crate::clifford::{covering_map, GammaRep, SpinElement};
use crate::fieldlang::{eval as eval_expr, FieldDef};
use nalgebra::DMatrix;
use num_complex::Complex;
use std::sync::Arc;
use thiserror::Error;

pub type RMatrix = DMatrix<f64>;
pub type CMatrix = DMatrix<Complex<f64>>;

/// Determinants below this are treated as singular.
pub const SINGULAR_DET_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ChartError {
    #[error("chart needs at least one coordinate")]
    Empty,
    #[error("coordinate lists disagree in length")]
    LengthMismatch,
    #[error("axis {axis} has empty range [{lo}, {hi}]")]
    BadRange { axis: usize, lo: f64, hi: f64 },
    #[error("axis {axis} needs at least 2 samples, got {got}")]
    TooFewSamples { axis: usize, got: usize },
    #[error("finite-difference step {step:.3e} on axis {axis} underflows (needs >= {min:.3e})")]
    StepUnderflow { axis: usize, step: f64, min: f64 },
    #[error("duplicate coordinate name `{0}`")]
    DuplicateCoord(String),
}

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("{context}: non-finite value in component {component} at point ({point})")]
    NonFinite {
        context: String,
        component: usize,
        point: String,
    },
    #[error("{what} singular at point ({point}): |det| = {det:.3e}")]
    Singular {
        what: String,
        point: String,
        det: f64,
    },
    #[error("metric at point ({point}) has eigenvalue signs ({found_plus}, {found_minus}), scenario signature is ({plus}, {minus})")]
    SignatureMismatch {
        point: String,
        plus: usize,
        minus: usize,
        found_plus: usize,
        found_minus: usize,
    },
    #[error("metric not symmetric at point ({point}): defect {defect:.3e}")]
    NotSymmetric { point: String, defect: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Chart(#[from] ChartError),
}

/// A coordinate patch: a rectangular tensor-product grid over per-axis ranges
/// plus per-axis finite-difference steps for off-grid probing.
#[derive(Debug, Clone)]
pub struct Chart {
    coords: Vec<String>,
    ranges: Vec<(f64, f64)>,
    samples: Vec<usize>,
    fd_step: Vec<f64>,
}

/// Default relative finite-difference step: h = 1e-5 x axis range.
pub const DEFAULT_FD_REL: f64 = 1e-5;
/// Default samples per axis.
pub const DEFAULT_SAMPLES: usize = 8;

impl Chart {
    /// Builds a chart with absolute per-axis finite-difference steps.
    pub fn new(
        coords: Vec<String>,
        ranges: Vec<(f64, f64)>,
        samples: Vec<usize>,
        fd_step: Vec<f64>,
    ) -> Result<Arc<Chart>, ChartError> {
        let m = coords.len();
        if m == 0 {
            return Err(ChartError::Empty);
        }
        if ranges.len() != m || samples.len() != m || fd_step.len() != m {
            return Err(ChartError::LengthMismatch);
        }
        for (i, c) in coords.iter().enumerate() {
            if coords[..i].contains(c) {
                return Err(ChartError::DuplicateCoord(c.clone()));
            }
        }
        for (axis, &(lo, hi)) in ranges.iter().enumerate() {
            if lo >= hi || !lo.is_finite() || !hi.is_finite() {
                return Err(ChartError::BadRange { axis, lo, hi });
            }
            if samples[axis] < 2 {
                return Err(ChartError::TooFewSamples {
                    axis,
                    got: samples[axis],
                });
            }
            let min = 1e-12 * (hi - lo);
            if fd_step[axis] < min {
                return Err(ChartError::StepUnderflow {
                    axis,
                    step: fd_step[axis],
                    min,
                });
            }
        }
        Ok(Arc::new(Chart {
            coords,
            ranges,
            samples,
            fd_step,
        }))
    }

    /// Builds a chart with a scalar relative finite-difference step.
    pub fn with_relative_step(
        coords: Vec<String>,
        ranges: Vec<(f64, f64)>,
        samples: Vec<usize>,
        fd_rel: f64,
    ) -> Result<Arc<Chart>, ChartError> {
        let steps = ranges.iter().map(|(lo, hi)| fd_rel * (hi - lo)).collect();
        Chart::new(coords, ranges, samples, steps)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn samples(&self) -> &[usize] {
        &self.samples
    }

    pub fn fd_step(&self, axis: usize) -> f64 {
        self.fd_step[axis]
    }

    pub fn grid_len(&self) -> usize {
        self.samples.iter().product()
    }

    /// Grid spacing along an axis.
    pub fn grid_spacing(&self, axis: usize) -> f64 {
        let (lo, hi) = self.ranges[axis];
        (hi - lo) / (self.samples[axis] - 1) as f64
    }

    /// Decodes a flat grid index (row-major, last axis fastest) into a
    /// multi-index.
    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.dim()];
        let mut rest = flat;
        for axis in (0..self.dim()).rev() {
            idx[axis] = rest % self.samples[axis];
            rest /= self.samples[axis];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for (axis, &i) in idx.iter().enumerate() {
            flat = flat * self.samples[axis] + i;
        }
        flat
    }

    /// Coordinates of the grid point with the given flat index.
    pub fn point(&self, flat: usize) -> Vec<f64> {
        let idx = self.multi_index(flat);
        idx.iter()
            .enumerate()
            .map(|(axis, &i)| {
                let (lo, _) = self.ranges[axis];
                lo + i as f64 * self.grid_spacing(axis)
            })
            .collect()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.ranges.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    pub fn format_point(&self, x: &[f64]) -> String {
        x.iter()
            .zip(&self.coords)
            .map(|(v, c)| format!("{c}={v}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

type Evaluator = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
enum Backing {
    Analytic(Evaluator),
    SamplesOnly,
}

/// A field on a chart: a dense row-major array of component values at all
/// grid points, usually together with the evaluator that produced them.
#[derive(Clone)]
pub struct Field {
    chart: Arc<Chart>,
    shape: Vec<usize>,
    backing: Backing,
    samples: Arc<Vec<f64>>,
}

impl std::fmt::Debug for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Field")
            .field("shape", &self.shape)
            .field("grid_len", &self.chart.grid_len())
            .finish()
    }
}

impl Field {
    /// Samples an evaluator on the whole grid; any non-finite value is an
    /// error naming the offending point and component.
    pub fn from_eval<F>(
        chart: &Arc<Chart>,
        shape: Vec<usize>,
        context: &str,
        f: F,
    ) -> Result<Field, FieldError>
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        let comp_len: usize = shape.iter().product();
        let grid_len = chart.grid_len();
        let mut samples = Vec::with_capacity(grid_len * comp_len);
        for flat in 0..grid_len {
            let x = chart.point(flat);
            let vals = f(&x);
            debug_assert_eq!(vals.len(), comp_len);
            for (c, v) in vals.iter().enumerate() {
                if !v.is_finite() {
                    return Err(FieldError::NonFinite {
                        context: context.to_string(),
                        component: c,
                        point: chart.format_point(&x),
                    });
                }
            }
            samples.extend_from_slice(&vals);
        }
        Ok(Field {
            chart: chart.clone(),
            shape,
            backing: Backing::Analytic(Arc::new(f)),
            samples: Arc::new(samples),
        })
    }

    /// Samples a FieldDef on the chart; the defining expressions are retained
    /// for off-grid evaluation.
    pub fn from_def(chart: &Arc<Chart>, def: &FieldDef, context: &str) -> Result<Field, FieldError> {
        if def.coords != chart.coords() {
            return Err(FieldError::Shape(format!(
                "field coordinates {:?} do not match chart coordinates {:?}",
                def.coords,
                chart.coords()
            )));
        }
        let exprs = def.exprs.clone();
        let shape = def.shape.clone();
        Field::from_eval(chart, shape, context, move |x| {
            exprs.iter().map(|e| eval_expr(e, x)).collect()
        })
    }

    /// Wraps raw per-point samples with no evaluator; derivatives of such a
    /// field use grid stencils.
    pub fn from_samples(
        chart: &Arc<Chart>,
        shape: Vec<usize>,
        samples: Vec<f64>,
    ) -> Result<Field, FieldError> {
        let comp_len: usize = shape.iter().product();
        if samples.len() != chart.grid_len() * comp_len {
            return Err(FieldError::Shape(format!(
                "expected {} values, got {}",
                chart.grid_len() * comp_len,
                samples.len()
            )));
        }
        Ok(Field {
            chart: chart.clone(),
            shape,
            backing: Backing::SamplesOnly,
            samples: Arc::new(samples),
        })
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn comp_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self.backing, Backing::Analytic(_))
    }

    /// Evaluates the field at an arbitrary point. Only valid for fields that
    /// kept their evaluator.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match &self.backing {
            Backing::Analytic(f) => f(x),
            Backing::SamplesOnly => {
                panic!("off-grid evaluation of a sample-backed field")
            }
        }
    }

    pub fn evaluator(&self) -> Evaluator {
        match &self.backing {
            Backing::Analytic(f) => f.clone(),
            Backing::SamplesOnly => panic!("sample-backed field has no evaluator"),
        }
    }

    /// Component slice at a grid point.
    pub fn at(&self, flat: usize) -> &[f64] {
        let c = self.comp_len();
        &self.samples[flat * c..(flat + 1) * c]
    }

    pub fn raw_samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Largest absolute difference against another field of the same shape.
    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in comparison");
        self.samples
            .iter()
            .zip(other.samples.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Evaluates a `[rows, cols]`-shaped field into a matrix.
    pub fn eval_mat(&self, x: &[f64]) -> RMatrix {
        debug_assert_eq!(self.shape.len(), 2);
        let (r, c) = (self.shape[0], self.shape[1]);
        let vals = self.eval(x);
        RMatrix::from_fn(r, c, |i, j| vals[i * c + j])
    }

    /// Matrix view of a `[rows, cols]`-shaped field at a grid point.
    pub fn mat_at(&self, flat: usize) -> RMatrix {
        debug_assert_eq!(self.shape.len(), 2);
        let (r, c) = (self.shape[0], self.shape[1]);
        let vals = self.at(flat);
        RMatrix::from_fn(r, c, |i, j| vals[i * c + j])
    }

    /// Central finite difference along one axis. Analytic fields re-evaluate
    /// off-grid with the chart's fd step; sample-backed fields use grid
    /// stencils (second order, one-sided at the boundaries).
    pub fn partial(&self, axis: usize) -> Result<Field, FieldError> {
        let m = self.chart.dim();
        assert!(axis < m, "axis out of range");
        let (lo, hi) = self.chart.ranges()[axis];
        let h = self.chart.fd_step(axis);
        let min = 1e-12 * (hi - lo);
        if h < min {
            return Err(ChartError::StepUnderflow { axis, step: h, min }.into());
        }
        match &self.backing {
            Backing::Analytic(f) => {
                let f = f.clone();
                Field::from_eval(
                    &self.chart,
                    self.shape.clone(),
                    "partial derivative",
                    move |x| {
                        let mut xp = x.to_vec();
                        let mut xm = x.to_vec();
                        xp[axis] += h;
                        xm[axis] -= h;
                        let vp = f(&xp);
                        let vm = f(&xm);
                        vp.iter()
                            .zip(vm.iter())
                            .map(|(p, q)| (p - q) / (2.0 * h))
                            .collect()
                    },
                )
            }
            Backing::SamplesOnly => self.stencil_partial(axis),
        }
    }

    fn stencil_partial(&self, axis: usize) -> Result<Field, FieldError> {
        let chart = &self.chart;
        let n = chart.samples()[axis];
        let dh = chart.grid_spacing(axis);
        let comp = self.comp_len();
        let mut out = vec![0.0; chart.grid_len() * comp];
        for flat in 0..chart.grid_len() {
            let mut idx = chart.multi_index(flat);
            let i = idx[axis];
            for c in 0..comp {
                let v = |j: usize, idx: &mut Vec<usize>| {
                    idx[axis] = j;
                    let f = chart.flat_index(idx);
                    self.samples[f * comp + c]
                };
                let d = if i == 0 {
                    if n >= 3 {
                        (-3.0 * v(0, &mut idx) + 4.0 * v(1, &mut idx) - v(2, &mut idx))
                            / (2.0 * dh)
                    } else {
                        (v(1, &mut idx) - v(0, &mut idx)) / dh
                    }
                } else if i == n - 1 {
                    if n >= 3 {
                        (3.0 * v(n - 1, &mut idx) - 4.0 * v(n - 2, &mut idx) + v(n - 3, &mut idx))
                            / (2.0 * dh)
                    } else {
                        (v(n - 1, &mut idx) - v(n - 2, &mut idx)) / dh
                    }
                } else {
                    (v(i + 1, &mut idx) - v(i - 1, &mut idx)) / (2.0 * dh)
                };
                idx[axis] = i;
                out[flat * comp + c] = d;
            }
        }
        Field::from_samples(chart, self.shape.clone(), out)
    }

    /// All partial derivatives at once: shape grows by a trailing axis index,
    /// `out[components.., mu]`.
    pub fn partial_all(&self) -> Result<Field, FieldError> {
        let m = self.chart.dim();
        match &self.backing {
            Backing::Analytic(f) => {
                let f = f.clone();
                let steps: Vec<f64> = (0..m).map(|a| self.chart.fd_step(a)).collect();
                let comp = self.comp_len();
                let mut shape = self.shape.clone();
                shape.push(m);
                Field::from_eval(&self.chart, shape, "partial derivatives", move |x| {
                    let mut out = vec![0.0; comp * m];
                    for (axis, h) in steps.iter().enumerate() {
                        let mut xp = x.to_vec();
                        let mut xm = x.to_vec();
                        xp[axis] += h;
                        xm[axis] -= h;
                        let vp = f(&xp);
                        let vm = f(&xm);
                        for c in 0..comp {
                            out[c * m + axis] = (vp[c] - vm[c]) / (2.0 * h);
                        }
                    }
                    out
                })
            }
            Backing::SamplesOnly => {
                // Assemble from per-axis stencil derivatives.
                let comp = self.comp_len();
                let parts: Vec<Field> = (0..m)
                    .map(|a| self.stencil_partial(a))
                    .collect::<Result<_, _>>()?;
                let mut shape = self.shape.clone();
                shape.push(m);
                let mut out = vec![0.0; self.chart.grid_len() * comp * m];
                for flat in 0..self.chart.grid_len() {
                    for c in 0..comp {
                        for (a, p) in parts.iter().enumerate() {
                            out[(flat * comp + c) * m + a] = p.at(flat)[c];
                        }
                    }
                }
                Field::from_samples(&self.chart, shape, out)
            }
        }
    }
}

/// Flat index into an `[m, m]`-shaped component block.
#[inline]
pub fn idx2(m: usize, i: usize, j: usize) -> usize {
    i * m + j
}

/// Flat index into an `[m, m, m]`-shaped component block.
#[inline]
pub fn idx3(m: usize, i: usize, j: usize, k: usize) -> usize {
    (i * m + j) * m + k
}

/// Pointwise inverse; a singular input yields a NaN-filled matrix so that
/// sampling flags the point instead of silently propagating garbage.
pub fn inverse_or_nan(m: &RMatrix) -> RMatrix {
    let det = m.determinant();
    if det.abs() <= SINGULAR_DET_TOL {
        return RMatrix::from_element(m.nrows(), m.ncols(), f64::NAN);
    }
    m.clone()
        .try_inverse()
        .unwrap_or_else(|| RMatrix::from_element(m.nrows(), m.ncols(), f64::NAN))
}

/// The frame field e^mu_a on a chart; component layout `[mu][a]` so that the
/// a-th frame vector is the a-th column. The coframe e^a_mu (the pointwise
/// matrix inverse, layout `[a][mu]`) is cached at construction.
#[derive(Debug, Clone)]
pub struct FrameField {
    field: Field,
    coframe: Field,
}

impl FrameField {
    pub fn new(field: Field) -> Result<FrameField, FieldError> {
        let m = field.chart().dim();
        if field.shape() != [m, m] {
            return Err(FieldError::Shape(format!(
                "frame must be [{m}, {m}], got {:?}",
                field.shape()
            )));
        }
        // Invertibility at every sample, reported with the point.
        for flat in 0..field.chart().grid_len() {
            let det = field.mat_at(flat).determinant();
            if !det.is_finite() || det.abs() <= SINGULAR_DET_TOL {
                let x = field.chart().point(flat);
                return Err(FieldError::Singular {
                    what: "frame".into(),
                    point: field.chart().format_point(&x),
                    det: det.abs(),
                });
            }
        }
        let inner = field.clone();
        let coframe = Field::from_eval(
            field.chart(),
            vec![m, m],
            "coframe",
            move |x| {
                let e = inner.eval_mat(x);
                let c = inverse_or_nan(&e);
                c.row_iter()
                    .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
                    .collect()
            },
        )?;
        Ok(FrameField { field, coframe })
    }

    pub fn from_def(chart: &Arc<Chart>, def: &FieldDef) -> Result<FrameField, FieldError> {
        FrameField::new(Field::from_def(chart, def, "frame")?)
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn coframe(&self) -> &Field {
        &self.coframe
    }

    pub fn chart(&self) -> &Arc<Chart> {
        self.field.chart()
    }

    /// e^mu_a at a point.
    pub fn frame_at(&self, x: &[f64]) -> RMatrix {
        self.field.eval_mat(x)
    }

    /// e^a_mu at a point.
    pub fn coframe_at(&self, x: &[f64]) -> RMatrix {
        self.coframe.eval_mat(x)
    }

    /// max over samples of |e^a_mu e^mu_b - delta^a_b|.
    pub fn duality_defect(&self) -> f64 {
        let m = self.chart().dim();
        let id = RMatrix::identity(m, m);
        let mut worst: f64 = 0.0;
        for flat in 0..self.chart().grid_len() {
            let prod = self.coframe.mat_at(flat) * self.field.mat_at(flat);
            worst = worst.max((prod - &id).iter().map(|v| v.abs()).fold(0.0, f64::max));
        }
        worst
    }
}

/// The induced metric g_{mu nu} and its cached pointwise inverse.
#[derive(Debug, Clone)]
pub struct MetricField {
    field: Field,
    inverse: Field,
}

impl MetricField {
    pub fn new(field: Field) -> Result<MetricField, FieldError> {
        let m = field.chart().dim();
        if field.shape() != [m, m] {
            return Err(FieldError::Shape(format!(
                "metric must be [{m}, {m}], got {:?}",
                field.shape()
            )));
        }
        for flat in 0..field.chart().grid_len() {
            let g = field.mat_at(flat);
            let sym = (&g - g.transpose())
                .iter()
                .map(|v| v.abs())
                .fold(0.0, f64::max);
            if sym > 1e-10 {
                let x = field.chart().point(flat);
                return Err(FieldError::NotSymmetric {
                    point: field.chart().format_point(&x),
                    defect: sym,
                });
            }
            let det = g.determinant();
            if !det.is_finite() || det.abs() <= SINGULAR_DET_TOL {
                let x = field.chart().point(flat);
                return Err(FieldError::Singular {
                    what: "metric".into(),
                    point: field.chart().format_point(&x),
                    det: det.abs(),
                });
            }
        }
        let inner = field.clone();
        let inverse = Field::from_eval(field.chart(), vec![m, m], "inverse metric", move |x| {
            let g = inner.eval_mat(x);
            let gi = inverse_or_nan(&g);
            gi.row_iter()
                .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
                .collect()
        })?;
        Ok(MetricField { field, inverse })
    }

    pub fn from_def(chart: &Arc<Chart>, def: &FieldDef) -> Result<MetricField, FieldError> {
        MetricField::new(Field::from_def(chart, def, "metric")?)
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn inverse_field(&self) -> &Field {
        &self.inverse
    }

    pub fn chart(&self) -> &Arc<Chart> {
        self.field.chart()
    }

    pub fn at(&self, x: &[f64]) -> RMatrix {
        self.field.eval_mat(x)
    }

    pub fn inverse_at(&self, x: &[f64]) -> RMatrix {
        self.inverse.eval_mat(x)
    }

    /// Checks that the eigenvalue sign pattern matches (plus, minus) at every
    /// sample.
    pub fn validate_signature(&self, plus: usize, minus: usize) -> Result<(), FieldError> {
        for flat in 0..self.chart().grid_len() {
            let g = self.field.mat_at(flat);
            let sym = (g.clone() + g.transpose()) * 0.5;
            let eig = sym.symmetric_eigen();
            let scale = eig
                .eigenvalues
                .iter()
                .map(|v| v.abs())
                .fold(0.0, f64::max)
                .max(1.0);
            let mut p = 0;
            let mut n = 0;
            for v in eig.eigenvalues.iter() {
                if *v > 1e-12 * scale {
                    p += 1;
                } else if *v < -1e-12 * scale {
                    n += 1;
                }
            }
            if p != plus || n != minus {
                let x = self.chart().point(flat);
                return Err(FieldError::SignatureMismatch {
                    point: self.chart().format_point(&x),
                    plus,
                    minus,
                    found_plus: p,
                    found_minus: n,
                });
            }
        }
        Ok(())
    }
}

/// A pointwise-invertible spin-frame transformation phi^mu_nu, layout
/// `[mu][nu]`; the inverse is cached at construction.
#[derive(Debug, Clone)]
pub struct TransformField {
    field: Field,
    inverse: Field,
}

impl TransformField {
    pub fn new(field: Field) -> Result<TransformField, FieldError> {
        let m = field.chart().dim();
        if field.shape() != [m, m] {
            return Err(FieldError::Shape(format!(
                "transformation must be [{m}, {m}], got {:?}",
                field.shape()
            )));
        }
        for flat in 0..field.chart().grid_len() {
            let det = field.mat_at(flat).determinant();
            if !det.is_finite() || det.abs() <= SINGULAR_DET_TOL {
                let x = field.chart().point(flat);
                return Err(FieldError::Singular {
                    what: "transformation".into(),
                    point: field.chart().format_point(&x),
                    det: det.abs(),
                });
            }
        }
        let inner = field.clone();
        let inverse = Field::from_eval(
            field.chart(),
            vec![m, m],
            "inverse transformation",
            move |x| {
                let p = inner.eval_mat(x);
                let pi = inverse_or_nan(&p);
                pi.row_iter()
                    .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
                    .collect()
            },
        )?;
        Ok(TransformField { field, inverse })
    }

    pub fn from_def(chart: &Arc<Chart>, def: &FieldDef) -> Result<TransformField, FieldError> {
        TransformField::new(Field::from_def(chart, def, "transformation")?)
    }

    pub fn identity(chart: &Arc<Chart>) -> TransformField {
        let m = chart.dim();
        let f = Field::from_eval(chart, vec![m, m], "identity transformation", move |_| {
            let mut v = vec![0.0; m * m];
            for i in 0..m {
                v[idx2(m, i, i)] = 1.0;
            }
            v
        })
        .expect("identity is finite");
        TransformField::new(f).expect("identity is invertible")
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    /// The cached inverse phi-bar.
    pub fn inverse_field(&self) -> &Field {
        &self.inverse
    }

    pub fn chart(&self) -> &Arc<Chart> {
        self.field.chart()
    }

    pub fn at(&self, x: &[f64]) -> RMatrix {
        self.field.eval_mat(x)
    }

    pub fn inverse_at(&self, x: &[f64]) -> RMatrix {
        self.inverse.eval_mat(x)
    }

    /// Pointwise composition (self after other).
    pub fn compose(&self, other: &TransformField) -> Result<TransformField, FieldError> {
        let a = self.field.clone();
        let b = other.field.clone();
        let m = self.chart().dim();
        let f = Field::from_eval(self.chart(), vec![m, m], "composed transformation", move |x| {
            let p = a.eval_mat(x) * b.eval_mat(x);
            p.row_iter()
                .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
                .collect()
        })?;
        TransformField::new(f)
    }
}

/// g_{mu nu} = e^a_mu eta_{ab} e^b_nu: the metric for which the frame is
/// orthonormal.
pub fn induce_metric(e: &FrameField, eta: &RMatrix) -> Result<MetricField, FieldError> {
    let m = e.chart().dim();
    let coframe = e.coframe().clone();
    let eta = eta.clone();
    let f = Field::from_eval(e.chart(), vec![m, m], "induced metric", move |x| {
        let c = coframe.eval_mat(x);
        let g = c.transpose() * &eta * &c;
        g.row_iter()
            .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
            .collect()
    })?;
    MetricField::new(f)
}

/// The transformed spin frame e-tilde^mu_a = phi^mu_nu e^nu_a.
pub fn transform_frame(e: &FrameField, phi: &TransformField) -> Result<FrameField, FieldError> {
    let m = e.chart().dim();
    let ef = e.field().clone();
    let pf = phi.field().clone();
    let f = Field::from_eval(e.chart(), vec![m, m], "transformed frame", move |x| {
        let out = pf.eval_mat(x) * ef.eval_mat(x);
        out.row_iter()
            .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
            .collect()
    })?;
    FrameField::new(f)
}

/// A field of spin-group elements, stored as re/im pairs of a k x k matrix.
#[derive(Debug, Clone)]
pub struct SpinElementField {
    field: Field,
    k: usize,
}

impl SpinElementField {
    /// S(x) = spin_exp(theta(x)) for an antisymmetric parameter field. The
    /// input is antisymmetrized pointwise.
    pub fn from_theta_field(theta: &Field, rep: &GammaRep) -> Result<SpinElementField, FieldError> {
        let m = rep.signature.dim();
        if theta.shape() != [m, m] {
            return Err(FieldError::Shape(format!(
                "theta must be [{m}, {m}], got {:?}",
                theta.shape()
            )));
        }
        let k = rep.k;
        let rep = rep.clone();
        let tf = theta.clone();
        let field = Field::from_eval(
            theta.chart(),
            vec![k, k, 2],
            "spin element field",
            move |x| {
                let t = tf.eval_mat(x);
                let anti = (&t - t.transpose()) * 0.5;
                match crate::clifford::spin_exp(&rep, &anti) {
                    Ok(s) => flatten_cmatrix(s.matrix()),
                    Err(_) => vec![f64::NAN; k * k * 2],
                }
            },
        )?;
        Ok(SpinElementField { field, k })
    }

    pub fn identity(chart: &Arc<Chart>, k: usize) -> SpinElementField {
        let field = Field::from_eval(chart, vec![k, k, 2], "identity spin field", move |_| {
            let mut v = vec![0.0; k * k * 2];
            for i in 0..k {
                v[(i * k + i) * 2] = 1.0;
            }
            v
        })
        .expect("identity is finite");
        SpinElementField { field, k }
    }

    pub fn negate(&self) -> SpinElementField {
        let inner = self.field.clone();
        let k = self.k;
        let field = Field::from_eval(
            self.field.chart(),
            vec![k, k, 2],
            "negated spin field",
            move |x| inner.eval(x).iter().map(|v| -v).collect(),
        )
        .expect("negation stays finite");
        SpinElementField { field, k }
    }

    /// Pointwise inverse field S^{-1}(x).
    pub fn inverse(&self) -> Result<SpinElementField, FieldError> {
        let inner = self.field.clone();
        let k = self.k;
        let field = Field::from_eval(
            self.field.chart(),
            vec![k, k, 2],
            "inverse spin field",
            move |x| {
                let s = unflatten_cmatrix(k, &inner.eval(x));
                match s.try_inverse() {
                    Some(si) => flatten_cmatrix(&si),
                    None => vec![f64::NAN; k * k * 2],
                }
            },
        )?;
        Ok(SpinElementField { field, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn chart(&self) -> &Arc<Chart> {
        self.field.chart()
    }

    pub fn element_at(&self, x: &[f64]) -> SpinElement {
        SpinElement::from_matrix(unflatten_cmatrix(self.k, &self.field.eval(x)))
    }
}

pub fn flatten_cmatrix(m: &CMatrix) -> Vec<f64> {
    let (r, c) = (m.nrows(), m.ncols());
    let mut out = Vec::with_capacity(r * c * 2);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)].re);
            out.push(m[(i, j)].im);
        }
    }
    out
}

pub fn unflatten_cmatrix(k: usize, vals: &[f64]) -> CMatrix {
    CMatrix::from_fn(k, k, |i, j| {
        let base = (i * k + j) * 2;
        Complex::new(vals[base], vals[base + 1])
    })
}

/// Change of trivialization e'^mu_a = e^mu_b L^b_a with L = covering(S(x)).
/// By construction this leaves the induced metric unchanged.
pub fn change_trivialization(
    e: &FrameField,
    s: &SpinElementField,
    rep: &GammaRep,
) -> Result<FrameField, FieldError> {
    let m = e.chart().dim();
    let ef = e.field().clone();
    let sf = s.clone();
    let rep = rep.clone();
    let f = Field::from_eval(e.chart(), vec![m, m], "retrivialized frame", move |x| {
        let s_el = sf.element_at(x);
        match covering_map(&rep, &s_el) {
            Ok(l) => {
                let out = ef.eval_mat(x) * l;
                out.row_iter()
                    .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
                    .collect()
            }
            Err(_) => vec![f64::NAN; m * m],
        }
    })?;
    FrameField::new(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clifford::{build_eta, build_gamma, Signature};
    use crate::fieldlang::FieldDef;

    pub fn chart2(coords: [&str; 2], ranges: [(f64, f64); 2], n: usize) -> Arc<Chart> {
        Chart::with_relative_step(
            coords.iter().map(|s| s.to_string()).collect(),
            ranges.to_vec(),
            vec![n, n],
            DEFAULT_FD_REL,
        )
        .unwrap()
    }

    fn def2(coords: [&str; 2], entries: [[&str; 2]; 2]) -> FieldDef {
        let names: Vec<String> = coords.iter().map(|s| s.to_string()).collect();
        let flat: Vec<&str> = entries.iter().flatten().copied().collect();
        FieldDef::parse_all(names, vec![2, 2], &flat).unwrap()
    }

    pub fn polar_chart() -> Arc<Chart> {
        chart2(["r", "th"], [(1.0, 2.0), (0.2, 1.3)], 8)
    }

    pub fn polar_frame(chart: &Arc<Chart>) -> FrameField {
        FrameField::from_def(chart, &def2(["r", "th"], [["1", "0"], ["0", "1/r"]])).unwrap()
    }

    #[test]
    fn sampling_constant_and_linear_fields() {
        let chart = Chart::with_relative_step(
            vec!["r".into()],
            vec![(1.0, 2.0)],
            vec![3],
            DEFAULT_FD_REL,
        )
        .unwrap();
        let ones = Field::from_def(
            &chart,
            &FieldDef::parse_all(vec!["r".into()], vec![], &["1"]).unwrap(),
            "ones",
        )
        .unwrap();
        assert!(ones.raw_samples().iter().all(|v| *v == 1.0));

        let lin = Field::from_def(
            &chart,
            &FieldDef::parse_all(vec!["r".into()], vec![], &["r"]).unwrap(),
            "linear",
        )
        .unwrap();
        assert_eq!(lin.raw_samples(), &[1.0, 1.5, 2.0]);
    }

    #[test]
    fn sampling_rejects_non_finite_values_with_point() {
        let chart = Chart::with_relative_step(
            vec!["r".into()],
            vec![(-1.0, 1.0)],
            vec![3],
            DEFAULT_FD_REL,
        )
        .unwrap();
        let def = FieldDef::parse_all(vec!["r".into()], vec![], &["1/r"]).unwrap();
        let err = Field::from_def(&chart, &def, "reciprocal").unwrap_err();
        match err {
            FieldError::NonFinite { point, .. } => assert!(point.contains("r=0"), "{point}"),
            other => panic!("expected NonFinite, got {other}"),
        }
    }

    #[test]
    fn off_grid_partial_matches_analytic_derivatives() {
        let chart = polar_chart();
        let sq = Field::from_def(
            &chart,
            &FieldDef::parse_all(
                vec!["r".into(), "th".into()],
                vec![],
                &["r^2"],
            )
            .unwrap(),
            "square",
        )
        .unwrap();
        let d = sq.partial(0).unwrap();
        let v = d.eval(&[1.5, 0.5])[0];
        assert!((v - 3.0).abs() < 1e-9, "{v}");

        let c = Field::from_def(
            &chart,
            &FieldDef::parse_all(vec!["r".into(), "th".into()], vec![], &["3.5"]).unwrap(),
            "const",
        )
        .unwrap();
        assert!(c.partial(0).unwrap().max_abs() < 1e-10);
        assert!(c.partial(1).unwrap().max_abs() < 1e-10);

        let cos2 = Field::from_def(
            &chart,
            &FieldDef::parse_all(vec!["r".into(), "th".into()], vec![], &["cos(2*th)"]).unwrap(),
            "cos2",
        )
        .unwrap();
        let v = cos2.partial(1).unwrap().eval(&[1.5, 0.3])[0];
        assert!((v + 2.0 * (0.6f64).sin()).abs() < 1e-9, "{v}");
    }

    #[test]
    fn stencil_partial_for_sample_backed_fields() {
        let chart = Chart::with_relative_step(
            vec!["x".into()],
            vec![(0.0, 1.0)],
            vec![41],
            DEFAULT_FD_REL,
        )
        .unwrap();
        let vals: Vec<f64> = (0..41).map(|i| {
            let x = i as f64 / 40.0;
            x * x
        })
        .collect();
        let f = Field::from_samples(&chart, vec![], vals).unwrap();
        assert!(!f.is_analytic());
        let d = f.partial(0).unwrap();
        // Interior point x = 0.5: derivative 1.0; grid is uniform so the
        // central stencil is exact for a quadratic.
        let mid = d.at(20)[0];
        assert!((mid - 1.0).abs() < 1e-12, "{mid}");
        // One-sided boundary (second order, also exact for quadratics).
        let left = d.at(0)[0];
        assert!(left.abs() < 1e-12, "{left}");
        let right = d.at(40)[0];
        assert!((right - 2.0).abs() < 1e-12, "{right}");
    }

    #[test]
    fn step_underflow_is_rejected() {
        let err = Chart::new(
            vec!["x".into()],
            vec![(0.0, 1.0)],
            vec![4],
            vec![1e-14],
        )
        .unwrap_err();
        assert!(matches!(err, ChartError::StepUnderflow { .. }));
    }

    #[test]
    fn identity_frame_induces_eta() {
        let chart = chart2(["x", "y"], [(0.0, 1.0), (0.0, 1.0)], 4);
        let e = FrameField::from_def(&chart, &def2(["x", "y"], [["1", "0"], ["0", "1"]])).unwrap();
        let eta = build_eta(Signature::new(2, 0).unwrap());
        let g = induce_metric(&e, &eta).unwrap();
        for flat in 0..chart.grid_len() {
            let gm = g.field().mat_at(flat);
            assert!((gm - RMatrix::identity(2, 2)).amax() < 1e-15);
        }
        g.validate_signature(2, 0).unwrap();
    }

    #[test]
    fn polar_frame_induces_polar_metric() {
        let chart = polar_chart();
        let e = polar_frame(&chart);
        let eta = build_eta(Signature::new(2, 0).unwrap());
        let g = induce_metric(&e, &eta).unwrap();
        // Direct-arithmetic oracle at a handful of points: the coframe of
        // (d_r, (1/r) d_th) is (dr, r dth) so g = diag(1, r^2).
        for flat in [0, 7, 21, 42, 63] {
            let x = chart.point(flat);
            let r = x[0];
            let gm = g.field().mat_at(flat);
            assert!((gm[(0, 0)] - 1.0).abs() < 1e-12);
            assert!((gm[(1, 1)] - r * r).abs() < 1e-12);
            assert!(gm[(0, 1)].abs() < 1e-12);
        }
        assert!(e.duality_defect() < 1e-12);
        g.validate_signature(2, 0).unwrap();
    }

    #[test]
    fn spherical_frame_induces_g1() {
        // Legs ordered so the -1 slot of eta = diag(1, 1, -1) lands on d_r:
        // e_1 = (1/r) d_th, e_2 = (1/(r sin th)) d_phi, e_3 = d_r.
        let chart = Chart::with_relative_step(
            vec!["r".into(), "th".into(), "ph".into()],
            vec![(1.0, 2.0), (0.3, 1.2), (0.1, 1.0)],
            vec![5, 5, 5],
            DEFAULT_FD_REL,
        )
        .unwrap();
        let names: Vec<String> = vec!["r".into(), "th".into(), "ph".into()];
        let def = FieldDef::parse_all(
            names,
            vec![3, 3],
            &[
                "0", "0", "1", //
                "1/r", "0", "0", //
                "0", "1/(r*sin(th))", "0",
            ],
        )
        .unwrap();
        let e = FrameField::from_def(&chart, &def).unwrap();
        let eta = build_eta(Signature::new(2, 1).unwrap());
        let g = induce_metric(&e, &eta).unwrap();
        for flat in 0..chart.grid_len() {
            let x = chart.point(flat);
            let (r, th) = (x[0], x[1]);
            let gm = g.field().mat_at(flat);
            assert!((gm[(0, 0)] + 1.0).abs() < 1e-12, "g_rr at {x:?}");
            assert!((gm[(1, 1)] - r * r).abs() < 1e-12, "g_thth at {x:?}");
            assert!(
                (gm[(2, 2)] - r * r * th.sin() * th.sin()).abs() < 1e-12,
                "g_phph at {x:?}"
            );
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                assert!(gm[(i, j)].abs() < 1e-12);
            }
        }
        g.validate_signature(2, 1).unwrap();
    }

    #[test]
    fn signature_validation_catches_mismatch() {
        let chart = chart2(["x", "y"], [(0.0, 1.0), (0.0, 1.0)], 4);
        let e = FrameField::from_def(&chart, &def2(["x", "y"], [["1", "0"], ["0", "1"]])).unwrap();
        let eta = build_eta(Signature::new(1, 1).unwrap());
        let g = induce_metric(&e, &eta).unwrap();
        assert!(matches!(
            g.validate_signature(2, 0),
            Err(FieldError::SignatureMismatch { .. })
        ));
    }

    #[test]
    fn transform_identity_and_scaling() {
        let chart = chart2(["x", "y"], [(0.0, 1.0), (0.0, 1.0)], 4);
        let e = FrameField::from_def(&chart, &def2(["x", "y"], [["1", "0"], ["0", "1"]])).unwrap();
        let eta = build_eta(Signature::new(2, 0).unwrap());

        let id = TransformField::identity(&chart);
        let same = transform_frame(&e, &id).unwrap();
        assert!(same.field().max_abs_diff(e.field()) < 1e-15);

        let two = TransformField::from_def(&chart, &def2(["x", "y"], [["2", "0"], ["0", "2"]]))
            .unwrap();
        let scaled = transform_frame(&e, &two).unwrap();
        let g = induce_metric(&scaled, &eta).unwrap();
        for flat in 0..chart.grid_len() {
            let gm = g.field().mat_at(flat);
            assert!((gm - RMatrix::identity(2, 2) * 0.25).amax() < 1e-14);
        }
    }

    #[test]
    fn non_orthogonal_transform_changes_the_metric() {
        let chart = polar_chart();
        let e = polar_frame(&chart);
        let eta = build_eta(Signature::new(2, 0).unwrap());
        let g = induce_metric(&e, &eta).unwrap();
        let phi =
            TransformField::from_def(&chart, &def2(["r", "th"], [["1", "0"], ["0", "r"]])).unwrap();
        let g2 = induce_metric(&transform_frame(&e, &phi).unwrap(), &eta).unwrap();
        let diff = g.field().max_abs_diff(g2.field());
        assert!(diff > 1e-2, "a non-eta-orthogonal phi must move the metric");
    }

    #[test]
    fn pushforward_reproduces_g2_components() {
        // Identity (2,1) frame on a spherical chart, pushed forward by the
        // inverse Jacobian of (x, y, z) = spherical map: the induced metric
        // is flat dx^2 + dy^2 - dz^2 written in spherical coordinates.
        let chart = Chart::with_relative_step(
            vec!["r".into(), "th".into(), "ph".into()],
            vec![(1.0, 2.0), (0.3, 1.2), (0.1, 1.0)],
            vec![4, 4, 4],
            DEFAULT_FD_REL,
        )
        .unwrap();
        let names: Vec<String> = vec!["r".into(), "th".into(), "ph".into()];
        let id = FieldDef::parse_all(
            names.clone(),
            vec![3, 3],
            &["1", "0", "0", "0", "1", "0", "0", "0", "1"],
        )
        .unwrap();
        let e = FrameField::from_def(&chart, &id).unwrap();
        let phi_def = FieldDef::parse_all(
            names,
            vec![3, 3],
            &[
                "sin(th)*cos(ph)", "sin(th)*sin(ph)", "cos(th)", //
                "cos(th)*cos(ph)/r", "cos(th)*sin(ph)/r", "-sin(th)/r", //
                "-sin(ph)/(r*sin(th))", "cos(ph)/(r*sin(th))", "0",
            ],
        )
        .unwrap();
        let phi = TransformField::from_def(&chart, &phi_def).unwrap();
        let eta = build_eta(Signature::new(2, 1).unwrap());
        let g = induce_metric(&transform_frame(&e, &phi).unwrap(), &eta).unwrap();
        for flat in 0..chart.grid_len() {
            let x = chart.point(flat);
            let (r, th) = (x[0], x[1]);
            let gm = g.field().mat_at(flat);
            let c2 = (2.0 * th).cos();
            let s2 = (2.0 * th).sin();
            assert!((gm[(0, 0)] + c2).abs() < 1e-10, "g_rr at {x:?}");
            assert!((gm[(1, 1)] - r * r * c2).abs() < 1e-10, "g_thth at {x:?}");
            assert!(
                (gm[(2, 2)] - r * r * th.sin().powi(2)).abs() < 1e-10,
                "g_phph at {x:?}"
            );
            assert!((gm[(0, 1)] - r * s2).abs() < 1e-10, "g_rth at {x:?}");
            assert!(gm[(0, 2)].abs() < 1e-10);
            assert!(gm[(1, 2)].abs() < 1e-10);
        }
    }

    #[test]
    fn vertical_change_of_trivialization_preserves_the_metric() {
        let sig = Signature::new(2, 0).unwrap();
        let rep = build_gamma(sig).unwrap();
        let eta = build_eta(sig);
        let chart = polar_chart();
        let e = polar_frame(&chart);
        let g = induce_metric(&e, &eta).unwrap();

        // Identity and its negation act trivially.
        let id = SpinElementField::identity(&chart, rep.k);
        let e_id = change_trivialization(&e, &id, &rep).unwrap();
        assert!(e_id.field().max_abs_diff(e.field()) < 1e-14);
        let e_neg = change_trivialization(&e, &id.negate(), &rep).unwrap();
        assert!(e_neg.field().max_abs_diff(e.field()) < 1e-12);

        // A coordinate-dependent spin element field moves the frame but not
        // the induced metric.
        let theta = Field::from_def(
            &chart,
            &FieldDef::parse_all(
                vec!["r".into(), "th".into()],
                vec![2, 2],
                &["0", "0.7*sin(r)+0.3*th", "-(0.7*sin(r)+0.3*th)", "0"],
            )
            .unwrap(),
            "theta",
        )
        .unwrap();
        let s = SpinElementField::from_theta_field(&theta, &rep).unwrap();
        let e_s = change_trivialization(&e, &s, &rep).unwrap();
        assert!(
            e_s.field().max_abs_diff(e.field()) > 1e-2,
            "the frame itself must move"
        );
        let g_s = induce_metric(&e_s, &eta).unwrap();
        let defect = g.field().max_abs_diff(g_s.field());
        assert!(defect < 1e-10, "metric moved by {defect:.3e}");
    }

    #[test]
    fn singular_frame_is_rejected_with_point() {
        let chart = chart2(["r", "th"], [(-1.0, 1.0), (0.2, 1.3)], 5);
        let def = def2(["r", "th"], [["r", "0"], ["0", "1"]]);
        let err = FrameField::from_def(&chart, &def).unwrap_err();
        match err {
            FieldError::Singular { what, point, .. } => {
                assert_eq!(what, "frame");
                assert!(point.contains("r=0"), "{point}");
            }
            other => panic!("expected Singular, got {other}"),
        }
    }
}
