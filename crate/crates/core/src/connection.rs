//! Linear connections on a chart: Levi-Civita construction, conversion to
//! spin-connection coefficients, the projectability test, and the
//! torsion/contorsion correspondence.
//!
//! Index conventions: a linear connection is stored as `omega[alpha][beta][mu]`
//! with the derivative direction last, so the covariant derivative of a
//! vector is `D_mu v^alpha = d_mu v^alpha + omega^alpha_{lambda mu} v^lambda`.

use crate::chart::{idx2, idx3, Field, FieldError, FrameField, MetricField, RMatrix};
use std::sync::Arc;

/// Coefficients omega^alpha_{beta mu} of a linear connection.
#[derive(Debug, Clone)]
pub struct LinearConnection {
    field: Field,
}

impl LinearConnection {
    pub fn new(field: Field) -> Result<LinearConnection, FieldError> {
        let m = field.chart().dim();
        if field.shape() != [m, m, m] {
            return Err(FieldError::Shape(format!(
                "connection must be [{m}, {m}, {m}], got {:?}",
                field.shape()
            )));
        }
        Ok(LinearConnection { field })
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn chart(&self) -> &Arc<crate::chart::Chart> {
        self.field.chart()
    }
}

/// Coefficients omega^{ab}_mu with both frame indices up. Antisymmetry in
/// (a, b) is the projectability test, not an invariant.
#[derive(Debug, Clone)]
pub struct SpinConnectionCoeffs {
    field: Field,
}

impl SpinConnectionCoeffs {
    pub fn new(field: Field) -> Result<SpinConnectionCoeffs, FieldError> {
        let m = field.chart().dim();
        if field.shape() != [m, m, m] {
            return Err(FieldError::Shape(format!(
                "spin coefficients must be [{m}, {m}, {m}], got {:?}",
                field.shape()
            )));
        }
        Ok(SpinConnectionCoeffs { field })
    }

    pub fn field(&self) -> &Field {
        &self.field
    }
}

/// Torsion T^lambda_{beta mu}, antisymmetric in the lower pair by storage.
#[derive(Debug, Clone)]
pub struct TorsionField {
    field: Field,
}

impl TorsionField {
    /// Validates exact antisymmetry in the lower index pair.
    pub fn new(field: Field) -> Result<TorsionField, FieldError> {
        let m = field.chart().dim();
        if field.shape() != [m, m, m] {
            return Err(FieldError::Shape(format!(
                "torsion must be [{m}, {m}, {m}], got {:?}",
                field.shape()
            )));
        }
        let defect = lower_pair_symmetry_defect(&field);
        if defect > 1e-12 {
            return Err(FieldError::Shape(format!(
                "torsion not antisymmetric in its lower indices (defect {defect:.3e})"
            )));
        }
        Ok(TorsionField { field })
    }

    /// Antisymmetrizes a raw field over the lower index pair and stores the
    /// result; returns the symmetric-part defect that was removed.
    pub fn antisymmetrize(field: Field) -> Result<(TorsionField, f64), FieldError> {
        let m = field.chart().dim();
        if field.shape() != [m, m, m] {
            return Err(FieldError::Shape(format!(
                "torsion must be [{m}, {m}, {m}], got {:?}",
                field.shape()
            )));
        }
        let defect = lower_pair_symmetry_defect(&field);
        let inner = field.clone();
        let anti = Field::from_eval(field.chart(), vec![m, m, m], "torsion", move |x| {
            let v = inner.eval(x);
            let mut out = vec![0.0; m * m * m];
            for l in 0..m {
                for b in 0..m {
                    for u in 0..m {
                        out[idx3(m, l, b, u)] =
                            0.5 * (v[idx3(m, l, b, u)] - v[idx3(m, l, u, b)]);
                    }
                }
            }
            out
        })?;
        Ok((TorsionField { field: anti }, defect))
    }

    pub fn field(&self) -> &Field {
        &self.field
    }
}

/// Contorsion K_{gamma beta mu}, all indices coordinate indices, first index
/// lowered; K_{(gamma beta) mu} = 0 exactly at storage.
#[derive(Debug, Clone)]
pub struct ContorsionField {
    field: Field,
}

impl ContorsionField {
    /// Validates exact antisymmetry in the first index pair.
    pub fn new(field: Field) -> Result<ContorsionField, FieldError> {
        let m = field.chart().dim();
        if field.shape() != [m, m, m] {
            return Err(FieldError::Shape(format!(
                "contorsion must be [{m}, {m}, {m}], got {:?}",
                field.shape()
            )));
        }
        let defect = first_pair_symmetry_defect(&field);
        if defect > 1e-12 {
            return Err(FieldError::Shape(format!(
                "contorsion not antisymmetric in its first indices (defect {defect:.3e})"
            )));
        }
        Ok(ContorsionField { field })
    }

    /// Antisymmetrizes a raw field over the first index pair; returns the
    /// removed symmetric-part defect alongside.
    pub fn antisymmetrize(field: Field) -> Result<(ContorsionField, f64), FieldError> {
        let m = field.chart().dim();
        if field.shape() != [m, m, m] {
            return Err(FieldError::Shape(format!(
                "contorsion must be [{m}, {m}, {m}], got {:?}",
                field.shape()
            )));
        }
        let defect = first_pair_symmetry_defect(&field);
        let inner = field.clone();
        let anti = Field::from_eval(field.chart(), vec![m, m, m], "contorsion", move |x| {
            let v = inner.eval(x);
            let mut out = vec![0.0; m * m * m];
            for g in 0..m {
                for b in 0..m {
                    for u in 0..m {
                        out[idx3(m, g, b, u)] =
                            0.5 * (v[idx3(m, g, b, u)] - v[idx3(m, b, g, u)]);
                    }
                }
            }
            out
        })?;
        Ok((ContorsionField { field: anti }, defect))
    }

    /// The zero contorsion.
    pub fn zero(chart: &Arc<crate::chart::Chart>) -> ContorsionField {
        let m = chart.dim();
        let field = Field::from_eval(chart, vec![m, m, m], "zero contorsion", move |_| {
            vec![0.0; m * m * m]
        })
        .expect("zero is finite");
        ContorsionField { field }
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    /// max over samples of |K_{(gamma beta) mu}|.
    pub fn antisymmetry_defect(&self) -> f64 {
        first_pair_symmetry_defect(&self.field)
    }
}

fn lower_pair_symmetry_defect(field: &Field) -> f64 {
    let m = field.chart().dim();
    let mut worst: f64 = 0.0;
    for flat in 0..field.chart().grid_len() {
        let v = field.at(flat);
        for l in 0..m {
            for b in 0..m {
                for u in 0..m {
                    worst = worst
                        .max(0.5 * (v[idx3(m, l, b, u)] + v[idx3(m, l, u, b)]).abs());
                }
            }
        }
    }
    worst
}

fn first_pair_symmetry_defect(field: &Field) -> f64 {
    let m = field.chart().dim();
    let mut worst: f64 = 0.0;
    for flat in 0..field.chart().grid_len() {
        let v = field.at(flat);
        for g in 0..m {
            for b in 0..m {
                for u in 0..m {
                    worst = worst
                        .max(0.5 * (v[idx3(m, g, b, u)] + v[idx3(m, b, g, u)]).abs());
                }
            }
        }
    }
    worst
}

/// Christoffel symbols of the second kind from the metric and its finite
/// -difference derivatives; symmetric in the lower pair by construction.
pub fn levi_civita(g: &MetricField) -> Result<LinearConnection, FieldError> {
    let m = g.chart().dim();
    let ginv = g.inverse_field().clone();
    let dg = g.field().partial_all()?;
    let field = Field::from_eval(g.chart(), vec![m, m, m], "christoffel symbols", move |x| {
        let gi = ginv.eval(x);
        let d = dg.eval(x);
        let mut out = vec![0.0; m * m * m];
        for a in 0..m {
            for b in 0..m {
                for u in 0..m {
                    let mut sum = 0.0;
                    for l in 0..m {
                        // d index layout: d[(lambda, nu, mu)] = d_mu g_{lambda nu}
                        let t = d[idx3(m, l, u, b)] + d[idx3(m, l, b, u)] - d[idx3(m, b, u, l)];
                        sum += gi[idx2(m, a, l)] * t;
                    }
                    out[idx3(m, a, b, u)] = 0.5 * sum;
                }
            }
        }
        out
    })?;
    LinearConnection::new(field)
}

/// omega^b_{c mu} = e^b_alpha (omega^alpha_{beta mu} e^beta_c + d_mu e^alpha_c),
/// returned with the second frame index raised by eta:
/// omega^{ab}_mu = omega^a_{c mu} eta^{cb}.
pub fn spin_coeffs(
    omega: &LinearConnection,
    e: &FrameField,
    eta: &RMatrix,
) -> Result<SpinConnectionCoeffs, FieldError> {
    let m = e.chart().dim();
    let w = omega.field().clone();
    let ef = e.field().clone();
    let cf = e.coframe().clone();
    let de = e.field().partial_all()?;
    let eta = eta.clone();
    let field = Field::from_eval(e.chart(), vec![m, m, m], "spin coefficients", move |x| {
        let wv = w.eval(x);
        let ev = ef.eval(x);
        let cv = cf.eval(x);
        let dv = de.eval(x);
        let mut out = vec![0.0; m * m * m];
        for a in 0..m {
            for c in 0..m {
                for u in 0..m {
                    let mut sum = 0.0;
                    for al in 0..m {
                        let mut inner = dv[idx3(m, al, c, u)];
                        for be in 0..m {
                            inner += wv[idx3(m, al, be, u)] * ev[idx2(m, be, c)];
                        }
                        sum += cv[idx2(m, a, al)] * inner;
                    }
                    out[idx3(m, a, c, u)] = sum;
                }
            }
        }
        // Raise the second frame index: omega^{ab}_mu = omega^a_{c mu} eta^{cb}.
        let mut raised = vec![0.0; m * m * m];
        for a in 0..m {
            for b in 0..m {
                for u in 0..m {
                    raised[idx3(m, a, b, u)] = out[idx3(m, a, b, u)] * eta[(b, b)];
                }
            }
        }
        raised
    })?;
    SpinConnectionCoeffs::new(field)
}

/// The symmetric part omega^{(ab)}_mu and its max-abs over the grid: zero
/// exactly when the underlying connection is tangent to the orthonormal
/// subbundle of the frame.
pub fn projectability_defect(sc: &SpinConnectionCoeffs) -> (Field, f64) {
    let m = sc.field().chart().dim();
    let inner = sc.field().clone();
    let sym = Field::from_eval(
        sc.field().chart(),
        vec![m, m, m],
        "projectability defect",
        move |x| {
            let v = inner.eval(x);
            let mut out = vec![0.0; m * m * m];
            for a in 0..m {
                for b in 0..m {
                    for u in 0..m {
                        out[idx3(m, a, b, u)] =
                            0.5 * (v[idx3(m, a, b, u)] + v[idx3(m, b, a, u)]);
                    }
                }
            }
            out
        },
    )
    .expect("symmetric part of a finite field is finite");
    let max = sym.max_abs();
    (sym, max)
}

/// T^lambda_{beta mu} = omega^lambda_{beta mu} - omega^lambda_{mu beta}.
pub fn torsion(omega: &LinearConnection) -> TorsionField {
    let m = omega.chart().dim();
    let w = omega.field().clone();
    let field = Field::from_eval(omega.chart(), vec![m, m, m], "torsion", move |x| {
        let v = w.eval(x);
        let mut out = vec![0.0; m * m * m];
        for l in 0..m {
            for b in 0..m {
                for u in 0..m {
                    out[idx3(m, l, b, u)] = v[idx3(m, l, b, u)] - v[idx3(m, l, u, b)];
                }
            }
        }
        out
    })
    .expect("antisymmetrization of a finite field is finite");
    TorsionField { field }
}

/// K_{gamma beta mu} = 1/2 (g_{beta lambda} T^lambda_{mu gamma}
///                        + g_{mu lambda} T^lambda_{beta gamma}
///                        + g_{gamma lambda} T^lambda_{beta mu}).
pub fn contorsion_from_torsion(
    g: &MetricField,
    t: &TorsionField,
) -> Result<ContorsionField, FieldError> {
    let m = g.chart().dim();
    let gf = g.field().clone();
    let tf = t.field().clone();
    let field = Field::from_eval(g.chart(), vec![m, m, m], "contorsion", move |x| {
        let gv = gf.eval(x);
        let tv = tf.eval(x);
        let mut out = vec![0.0; m * m * m];
        for ga in 0..m {
            for be in 0..m {
                for mu in 0..m {
                    let mut sum = 0.0;
                    for l in 0..m {
                        sum += gv[idx2(m, be, l)] * tv[idx3(m, l, mu, ga)]
                            + gv[idx2(m, mu, l)] * tv[idx3(m, l, be, ga)]
                            + gv[idx2(m, ga, l)] * tv[idx3(m, l, be, mu)];
                    }
                    out[idx3(m, ga, be, mu)] = 0.5 * sum;
                }
            }
        }
        out
    })?;
    let (k, defect) = ContorsionField::antisymmetrize(field)?;
    debug_assert!(defect < 1e-12, "formula should be antisymmetric: {defect:e}");
    Ok(k)
}

/// omega^alpha_{beta mu} = {g}^alpha_{beta mu} + g^{alpha gamma} K_{gamma beta mu}.
pub fn connection_from_contorsion(
    g: &MetricField,
    k: &ContorsionField,
) -> Result<LinearConnection, FieldError> {
    let lc = levi_civita(g)?;
    add_contorsion(&lc, g, k)
}

/// omega + g^{-1} K for an arbitrary base connection; projectable inputs stay
/// projectable for any valid contorsion.
pub fn add_contorsion(
    omega: &LinearConnection,
    g: &MetricField,
    k: &ContorsionField,
) -> Result<LinearConnection, FieldError> {
    let m = g.chart().dim();
    let w = omega.field().clone();
    let ginv = g.inverse_field().clone();
    let kf = k.field().clone();
    let field = Field::from_eval(g.chart(), vec![m, m, m], "connection", move |x| {
        let wv = w.eval(x);
        let gi = ginv.eval(x);
        let kv = kf.eval(x);
        let mut out = vec![0.0; m * m * m];
        for a in 0..m {
            for b in 0..m {
                for u in 0..m {
                    let mut sum = 0.0;
                    for ga in 0..m {
                        sum += gi[idx2(m, a, ga)] * kv[idx3(m, ga, b, u)];
                    }
                    out[idx3(m, a, b, u)] = wv[idx3(m, a, b, u)] + sum;
                }
            }
        }
        out
    })?;
    LinearConnection::new(field)
}

/// The unique projectable connection with prescribed torsion:
/// omega = {g} + 1/2 g^{alpha gamma}(I_{beta mu gamma} + I_{mu beta gamma} + I_{gamma beta mu}).
pub fn connection_from_torsion_tensor(
    g: &MetricField,
    i: &TorsionField,
) -> Result<LinearConnection, FieldError> {
    let k = contorsion_from_torsion(g, i)?;
    connection_from_contorsion(g, &k)
}

/// Index variance of a tensor slot, for the covariant-derivative kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variance {
    Up,
    Down,
}

/// Covariant derivative of a tensor field whose slots all have dimension m.
/// The output gains a trailing derivative index:
/// `out[components.., mu] = d_mu T + sum_up omega^i_{lambda mu} T(..lambda..)
///                                  - sum_down omega^lambda_{j mu} T(..lambda..)`.
pub fn covariant_derivative(
    tensor: &Field,
    variance: &[Variance],
    omega: &LinearConnection,
) -> Result<Field, FieldError> {
    let m = tensor.chart().dim();
    if tensor.shape() != vec![m; variance.len()] {
        return Err(FieldError::Shape(format!(
            "tensor shape {:?} does not match variance rank {}",
            tensor.shape(),
            variance.len()
        )));
    }
    let rank = variance.len();
    let comp = tensor.comp_len();
    let tf = tensor.clone();
    let dt = tensor.partial_all()?;
    let w = omega.field().clone();
    let variance = variance.to_vec();
    let mut shape = tensor.shape().to_vec();
    shape.push(m);
    Field::from_eval(tensor.chart(), shape, "covariant derivative", move |x| {
        let tv = tf.eval(x);
        let dv = dt.eval(x);
        let wv = w.eval(x);
        let mut out = vec![0.0; comp * m];
        let mut idx = vec![0usize; rank];
        for c in 0..comp {
            // Decode the component multi-index (row-major).
            let mut rest = c;
            for s in (0..rank).rev() {
                idx[s] = rest % m;
                rest /= m;
            }
            for mu in 0..m {
                let mut val = dv[c * m + mu];
                for s in 0..rank {
                    let orig = idx[s];
                    // Stride of slot s in the flat component index.
                    let stride = m.pow((rank - 1 - s) as u32);
                    for l in 0..m {
                        let swapped = c - orig * stride + l * stride;
                        match variance[s] {
                            Variance::Up => {
                                val += wv[idx3(m, orig, l, mu)] * tv[swapped];
                            }
                            Variance::Down => {
                                val -= wv[idx3(m, l, orig, mu)] * tv[swapped];
                            }
                        }
                    }
                }
                out[c * m + mu] = val;
            }
        }
        out
    })
}

/// max over samples and indices of the metric-compatibility residual
/// D_mu g_{alpha beta}; an equivalent restatement of omega^{(ab)}_mu = 0.
pub fn metric_compatibility_defect(
    omega: &LinearConnection,
    g: &MetricField,
) -> Result<f64, FieldError> {
    let nabla_g = covariant_derivative(g.field(), &[Variance::Down, Variance::Down], omega)?;
    Ok(nabla_g.max_abs())
}
