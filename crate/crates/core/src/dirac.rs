//! The Dirac residual i e^mu_a gamma^a D-hat_mu psi + mass psi on a chart,
//! its contorsion split, and its covariance under spin transformations and
//! spin-frame transformations.
//!
//! The spinor covariant derivative is fixed as
//! `D-hat_mu psi = d_mu psi + (1/4) omega^{ab}_mu gamma_a gamma_b psi`;
//! for projectable coefficients (antisymmetric in ab) the quadratic gamma
//! term equals (1/8) omega^{ab}_mu [gamma_a, gamma_b]. The contorsion split
//! check below closes algebraically under this convention.

use crate::chart::{
    change_trivialization, idx2, idx3, unflatten_cmatrix, CMatrix, Chart, Field, FieldError,
    FrameField, MetricField, RMatrix, SpinElementField, TransformField,
};
use crate::clifford::{GammaRep, SpinElement};
use crate::connection::{
    connection_from_contorsion, levi_civita, spin_coeffs, ContorsionField, SpinConnectionCoeffs,
};
use crate::fieldlang::Expr;
use crate::transform::pullback_equality_check;
use num_complex::Complex;
use std::sync::Arc;
use thiserror::Error;

/// The Dirac operator's convention string, recorded in reports.
pub const SPINOR_DERIVATIVE_CONVENTION: &str =
    "D_mu psi = d_mu psi + (1/4) omega^{ab}_mu gamma_a gamma_b psi";

#[derive(Debug, Error)]
pub enum DiracError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Clifford(#[from] crate::clifford::CliffordError),
    #[error("momentum {momentum:?} is off shell for mass {mass}: smallest singular value {sigma_min:.3e}")]
    OffShell {
        momentum: Vec<f64>,
        mass: f64,
        sigma_min: f64,
    },
}

/// A spinor field: k complex components per point, stored as (re, im) pairs.
#[derive(Debug, Clone)]
pub struct SpinorField {
    field: Field,
    k: usize,
}

impl SpinorField {
    pub fn from_field(field: Field) -> Result<SpinorField, FieldError> {
        let shape = field.shape().to_vec();
        if shape.len() != 2 || shape[1] != 2 {
            return Err(FieldError::Shape(format!(
                "spinor must be [k, 2], got {shape:?}"
            )));
        }
        let k = shape[0];
        Ok(SpinorField { field, k })
    }

    /// Builds a spinor from k (re, im) expression pairs.
    pub fn from_exprs(
        chart: &Arc<Chart>,
        pairs: &[(Expr, Expr)],
    ) -> Result<SpinorField, FieldError> {
        let k = pairs.len();
        let pairs = pairs.to_vec();
        let field = Field::from_eval(chart, vec![k, 2], "spinor", move |x| {
            let mut out = Vec::with_capacity(2 * k);
            for (re, im) in &pairs {
                out.push(crate::fieldlang::eval(re, x));
                out.push(crate::fieldlang::eval(im, x));
            }
            out
        })?;
        Ok(SpinorField { field, k })
    }

    pub fn zero(chart: &Arc<Chart>, k: usize) -> SpinorField {
        let field = Field::from_eval(chart, vec![k, 2], "zero spinor", move |_| vec![0.0; 2 * k])
            .expect("zero is finite");
        SpinorField { field, k }
    }

    /// Constant-amplitude plane wave u exp(i p.x).
    pub fn plane_wave(
        chart: &Arc<Chart>,
        amplitude: Vec<Complex<f64>>,
        momentum: Vec<f64>,
    ) -> SpinorField {
        let k = amplitude.len();
        let field = Field::from_eval(chart, vec![k, 2], "plane wave", move |x| {
            let phase: f64 = momentum.iter().zip(x.iter()).map(|(p, q)| p * q).sum();
            let w = Complex::new(0.0, phase).exp();
            let mut out = Vec::with_capacity(2 * k);
            for u in &amplitude {
                let v = u * w;
                out.push(v.re);
                out.push(v.im);
            }
            out
        })
        .expect("plane waves are finite");
        SpinorField { field, k }
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

    pub fn eval_c(&self, x: &[f64]) -> Vec<Complex<f64>> {
        complex_from_pairs(&self.field.eval(x))
    }

    pub fn at_c(&self, flat: usize) -> Vec<Complex<f64>> {
        complex_from_pairs(self.field.at(flat))
    }

    /// psi'(x) = S(x) psi(x).
    pub fn apply_spin_field(&self, s: &SpinElementField) -> Result<SpinorField, FieldError> {
        let k = self.k;
        let inner = self.field.clone();
        let sf = s.field().clone();
        let field = Field::from_eval(self.chart(), vec![k, 2], "rotated spinor", move |x| {
            let psi = complex_from_pairs(&inner.eval(x));
            let sm = unflatten_cmatrix(k, &sf.eval(x));
            let mut out = Vec::with_capacity(2 * k);
            for i in 0..k {
                let mut acc = Complex::new(0.0, 0.0);
                for j in 0..k {
                    acc += sm[(i, j)] * psi[j];
                }
                out.push(acc.re);
                out.push(acc.im);
            }
            out
        })?;
        Ok(SpinorField { field, k })
    }
}

pub fn complex_from_pairs(vals: &[f64]) -> Vec<Complex<f64>> {
    vals.chunks_exact(2).map(|c| Complex::new(c[0], c[1])).collect()
}

/// Mass and representation entering the Dirac residual.
#[derive(Debug, Clone)]
pub struct DiracParams {
    pub mass: f64,
    pub rep: GammaRep,
}

fn gamma_pair_products(rep: &GammaRep) -> Vec<CMatrix> {
    let m = rep.signature.dim();
    let mut out = Vec::with_capacity(m * m);
    for a in 0..m {
        let ga = rep.gamma_lower(a);
        for b in 0..m {
            out.push(&ga * rep.gamma_lower(b));
        }
    }
    out
}

/// D-hat_mu psi as a per-axis complex field of shape [m, k, 2].
pub fn spinor_cov_deriv(
    psi: &SpinorField,
    sc: &SpinConnectionCoeffs,
    rep: &GammaRep,
) -> Result<Field, FieldError> {
    let m = rep.signature.dim();
    let k = psi.k();
    let dpsi = psi.field().partial_all()?; // [k, 2, m]
    let psif = psi.field().clone();
    let scf = sc.field().clone();
    let pairs = gamma_pair_products(rep);
    Field::from_eval(psi.chart(), vec![m, k, 2], "spinor covariant derivative", move |x| {
        let dv = dpsi.eval(x);
        let psi_v = complex_from_pairs(&psif.eval(x));
        let scv = scf.eval(x);
        let mut out = vec![0.0; m * k * 2];
        for mu in 0..m {
            // Omega_mu = (1/4) omega^{ab}_mu gamma_a gamma_b applied to psi.
            let mut val = vec![Complex::new(0.0, 0.0); k];
            for j in 0..k {
                // derivative part: dv[(j*2 + c)*m + mu]
                val[j] = Complex::new(dv[(j * 2) * m + mu], dv[(j * 2 + 1) * m + mu]);
            }
            for a in 0..m {
                for b in 0..m {
                    let w = 0.25 * scv[idx3(m, a, b, mu)];
                    if w != 0.0 {
                        let gg = &pairs[a * m + b];
                        for i in 0..k {
                            let mut acc = Complex::new(0.0, 0.0);
                            for j in 0..k {
                                acc += gg[(i, j)] * psi_v[j];
                            }
                            val[i] += w * acc;
                        }
                    }
                }
            }
            for (j, v) in val.iter().enumerate() {
                out[(mu * k + j) * 2] = v.re;
                out[(mu * k + j) * 2 + 1] = v.im;
            }
        }
        out
    })
}

/// The pointwise residual R = i e^mu_a gamma^a D-hat_mu psi + mass psi;
/// a spinor solves the Dirac equation where the residual vanishes.
pub fn dirac_residual(
    e: &FrameField,
    sc: &SpinConnectionCoeffs,
    psi: &SpinorField,
    params: &DiracParams,
) -> Result<Field, FieldError> {
    let m = params.rep.signature.dim();
    let k = psi.k();
    let covd = spinor_cov_deriv(psi, sc, &params.rep)?;
    let ef = e.field().clone();
    let psif = psi.field().clone();
    let gammas: Vec<CMatrix> = params.rep.gammas().to_vec();
    let mass = params.mass;
    Field::from_eval(psi.chart(), vec![k, 2], "dirac residual", move |x| {
        let dv = covd.eval(x);
        let ev = ef.eval(x);
        let psi_v = complex_from_pairs(&psif.eval(x));
        let mut r = vec![Complex::new(0.0, 0.0); k];
        for mu in 0..m {
            let d_mu: Vec<Complex<f64>> = (0..k)
                .map(|j| Complex::new(dv[(mu * k + j) * 2], dv[(mu * k + j) * 2 + 1]))
                .collect();
            for a in 0..m {
                let coef = ev[idx2(m, mu, a)];
                if coef != 0.0 {
                    let g = &gammas[a];
                    for i in 0..k {
                        let mut acc = Complex::new(0.0, 0.0);
                        for j in 0..k {
                            acc += g[(i, j)] * d_mu[j];
                        }
                        r[i] += coef * acc;
                    }
                }
            }
        }
        let mut out = Vec::with_capacity(2 * k);
        for i in 0..k {
            let v = Complex::new(0.0, 1.0) * r[i] + mass * psi_v[i];
            out.push(v.re);
            out.push(v.im);
        }
        out
    })
}

/// Frame-index contorsion K^{ab}_mu = eta^{ac} eta^{bd} e^gamma_c e^beta_d K_{gamma beta mu}.
fn frame_contorsion(
    e: &FrameField,
    k_field: &ContorsionField,
    eta: &RMatrix,
) -> Result<Field, FieldError> {
    let m = e.chart().dim();
    let ef = e.field().clone();
    let kf = k_field.field().clone();
    let eta = eta.clone();
    Field::from_eval(e.chart(), vec![m, m, m], "frame contorsion", move |x| {
        let ev = ef.eval(x);
        let kv = kf.eval(x);
        let mut out = vec![0.0; m * m * m];
        for a in 0..m {
            for b in 0..m {
                for mu in 0..m {
                    let mut sum = 0.0;
                    for ga in 0..m {
                        for be in 0..m {
                            sum += ev[idx2(m, ga, a)] * ev[idx2(m, be, b)] * kv[idx3(m, ga, be, mu)];
                        }
                    }
                    out[idx3(m, a, b, mu)] = eta[(a, a)] * eta[(b, b)] * sum;
                }
            }
        }
        out
    })
}

/// Verifies the contorsion split of the Dirac residual: the residual built
/// from {g} + gK minus the Levi-Civita residual equals the algebraic term
/// i e^mu_a gamma^a (1/4) K^{bc}_mu gamma_b gamma_c psi. Returns the max-abs
/// difference, which carries no finite-difference error.
pub fn contorsion_split_check(
    e: &FrameField,
    g: &MetricField,
    k_field: &ContorsionField,
    psi: &SpinorField,
    params: &DiracParams,
) -> Result<f64, DiracError> {
    let m = params.rep.signature.dim();
    let k = psi.k();
    let eta = params.rep.eta().clone();
    let omega_total = connection_from_contorsion(g, k_field)?;
    let sc_total = spin_coeffs(&omega_total, e, &eta)?;
    let sc_lc = spin_coeffs(&levi_civita(g)?, e, &eta)?;
    let r_total = dirac_residual(e, &sc_total, psi, params)?;
    let r_lc = dirac_residual(e, &sc_lc, psi, params)?;

    let kf = frame_contorsion(e, k_field, &eta)?;
    let ef = e.field().clone();
    let psif = psi.field().clone();
    let gammas: Vec<CMatrix> = params.rep.gammas().to_vec();
    let pairs = gamma_pair_products(&params.rep);
    let direct = Field::from_eval(psi.chart(), vec![k, 2], "contorsion split term", move |x| {
        let kv = kf.eval(x);
        let ev = ef.eval(x);
        let psi_v = complex_from_pairs(&psif.eval(x));
        let mut r = vec![Complex::new(0.0, 0.0); k];
        for mu in 0..m {
            // (1/4) K^{bc}_mu gamma_b gamma_c psi
            let mut corr = vec![Complex::new(0.0, 0.0); k];
            for b in 0..m {
                for c in 0..m {
                    let w = 0.25 * kv[idx3(m, b, c, mu)];
                    if w != 0.0 {
                        let gg = &pairs[b * m + c];
                        for i in 0..k {
                            let mut acc = Complex::new(0.0, 0.0);
                            for j in 0..k {
                                acc += gg[(i, j)] * psi_v[j];
                            }
                            corr[i] += w * acc;
                        }
                    }
                }
            }
            for a in 0..m {
                let coef = ev[idx2(m, mu, a)];
                if coef != 0.0 {
                    let gm = &gammas[a];
                    for i in 0..k {
                        let mut acc = Complex::new(0.0, 0.0);
                        for j in 0..k {
                            acc += gm[(i, j)] * corr[j];
                        }
                        r[i] += coef * acc;
                    }
                }
            }
        }
        let mut out = Vec::with_capacity(2 * k);
        for v in &r {
            let w = Complex::new(0.0, 1.0) * v;
            out.push(w.re);
            out.push(w.im);
        }
        out
    })?;

    let mut worst: f64 = 0.0;
    for flat in 0..psi.chart().grid_len() {
        let a = r_total.at(flat);
        let b = r_lc.at(flat);
        let d = direct.at(flat);
        for i in 0..2 * k {
            worst = worst.max((a[i] - b[i] - d[i]).abs());
        }
    }
    Ok(worst)
}

/// Transforms spin-connection coefficients under a pointwise spin element
/// field: omega'^{ab}_mu = (L omega_mu L^T)^{ab} - lambda^{ab}_mu where L is
/// the covering image of S and lambda is extracted from (d_mu S) S^{-1}.
fn transformed_spin_coeffs(
    sc: &SpinConnectionCoeffs,
    s: &SpinElementField,
    rep: &GammaRep,
) -> Result<SpinConnectionCoeffs, FieldError> {
    let m = rep.signature.dim();
    let k = rep.k;
    let scf = sc.field().clone();
    let sf = s.field().clone();
    let ds = s.field().partial_all()?; // [k, k, 2, m]
    let rep2 = rep.clone();
    let eta = rep.eta().clone();
    let mut sigmas = Vec::with_capacity(m * m);
    for c in 0..m {
        for d in 0..m {
            sigmas.push(rep.sigma_lower(c, d));
        }
    }
    let field = Field::from_eval(sc.field().chart(), vec![m, m, m], "transformed spin coefficients", move |x| {
        let scv = scf.eval(x);
        let s_mat = unflatten_cmatrix(k, &sf.eval(x));
        let s_inv = match s_mat.clone().try_inverse() {
            Some(si) => si,
            None => return vec![f64::NAN; m * m * m],
        };
        let l = match crate::clifford::covering_map(&rep2, &SpinElement::from_matrix(s_mat)) {
            Ok(l) => l,
            Err(_) => return vec![f64::NAN; m * m * m],
        };
        let dv = ds.eval(x);
        let kf = k as f64;
        let mut out = vec![0.0; m * m * m];
        for mu in 0..m {
            // X = (d_mu S) S^{-1}, an element of the spin algebra.
            let dmat = CMatrix::from_fn(k, k, |i, j| {
                let base = ((i * k + j) * 2) * m + mu;
                Complex::new(dv[base], dv[base + m])
            });
            let xmat = &dmat * &s_inv;
            // lambda_{cd} = -(4/k) Re tr(X sigma_{cd}), then raise with eta.
            let mut lambda = RMatrix::zeros(m, m);
            for c in 0..m {
                for d in 0..m {
                    let tr: Complex<f64> = (&xmat * &sigmas[c * m + d]).trace();
                    lambda[(c, d)] = -(4.0 / kf) * tr.re * eta[(c, c)] * eta[(d, d)];
                }
            }
            for a in 0..m {
                for b in 0..m {
                    let mut conj = 0.0;
                    for c in 0..m {
                        for d in 0..m {
                            conj += l[(a, c)] * scv[idx3(m, c, d, mu)] * l[(b, d)];
                        }
                    }
                    out[idx3(m, a, b, mu)] = conj - lambda[(a, b)];
                }
            }
        }
        out
    })?;
    SpinConnectionCoeffs::new(field)
}

/// Checks covariance of the Dirac residual under a pointwise spin
/// transformation: with psi' = S psi, e' = e . L(S^{-1}) and transformed
/// coefficients, the primed residual equals S applied to the original one.
/// Returns the max-abs difference.
pub fn covariance_check(
    e: &FrameField,
    sc: &SpinConnectionCoeffs,
    psi: &SpinorField,
    params: &DiracParams,
    s: &SpinElementField,
) -> Result<f64, DiracError> {
    let k = psi.k();
    let rep = &params.rep;
    let psi_prime = psi.apply_spin_field(s)?;
    let s_inv = s.inverse()?;
    let e_prime = change_trivialization(e, &s_inv, rep)?;
    let sc_prime = transformed_spin_coeffs(sc, s, rep)?;
    let r = dirac_residual(e, sc, psi, params)?;
    let r_prime = dirac_residual(&e_prime, &sc_prime, &psi_prime, params)?;

    let mut worst: f64 = 0.0;
    for flat in 0..psi.chart().grid_len() {
        let s_mat = unflatten_cmatrix(k, s.field().at(flat));
        let rv = complex_from_pairs(r.at(flat));
        let rpv = complex_from_pairs(r_prime.at(flat));
        for i in 0..k {
            let mut rotated = Complex::new(0.0, 0.0);
            for j in 0..k {
                rotated += s_mat[(i, j)] * rv[j];
            }
            worst = worst.max((rpv[i] - rotated).norm());
        }
    }
    Ok(worst)
}

/// Outcome of the frame-transformation Dirac check.
#[derive(Debug, Clone, Copy)]
pub struct FrameTransformDirac {
    /// max-abs difference of the spin coefficients computed through the two
    /// frames; the headline defect.
    pub coeff_defect: f64,
    /// max-abs difference between the residual built from (e-tilde, sc-tilde)
    /// and the one built from (e-tilde, sc): with equal coefficients the two
    /// residuals differ only by the frame contraction, so this vanishes with
    /// the coefficient defect.
    pub residual_defect: f64,
}

impl FrameTransformDirac {
    pub fn defect(&self) -> f64 {
        self.coeff_defect.max(self.residual_defect)
    }
}

/// Verifies that a spin-frame transformation maps the Dirac residual built
/// from (e, {g}+gK) into the one built from (e-tilde, {g-tilde}+g-tilde K-tilde)
/// with identical spin coefficients.
pub fn frame_transform_dirac_check(
    e: &FrameField,
    k_field: &ContorsionField,
    phi: &TransformField,
    psi: &SpinorField,
    params: &DiracParams,
) -> Result<FrameTransformDirac, DiracError> {
    let eta = params.rep.eta().clone();
    let pullback = pullback_equality_check(e, k_field, phi, &eta)?;
    let e_tilde = crate::chart::transform_frame(e, phi)?;
    let r_tilde = dirac_residual(&e_tilde, &pullback.sc_tilde, psi, params)?;
    let r_swap = dirac_residual(&e_tilde, &pullback.sc, psi, params)?;
    Ok(FrameTransformDirac {
        coeff_defect: pullback.defect,
        residual_defect: r_tilde.max_abs_diff(&r_swap),
    })
}

/// Solves (mass I - p_a gamma^a) u = 0 numerically by smallest-singular-value
/// extraction; errors out when the momentum is off shell
/// (eta^{ab} p_a p_b != mass^2).
pub fn plane_wave_amplitude(
    rep: &GammaRep,
    mass: f64,
    momentum: &[f64],
) -> Result<Vec<Complex<f64>>, DiracError> {
    let (u, sigma) = plane_wave_amplitude_relaxed(rep, momentum, mass);
    if sigma > 1e-8 {
        return Err(DiracError::OffShell {
            momentum: momentum.to_vec(),
            mass,
            sigma_min: sigma,
        });
    }
    Ok(u)
}

/// Best-effort amplitude extraction together with the smallest singular
/// value of (mass I - p_a gamma^a), which bounds the achievable residual.
pub fn plane_wave_amplitude_relaxed(
    rep: &GammaRep,
    momentum: &[f64],
    mass: f64,
) -> (Vec<Complex<f64>>, f64) {
    let m = rep.signature.dim();
    let k = rep.k;
    let mut mat = CMatrix::identity(k, k).map(|c| c * Complex::new(mass, 0.0));
    for (a, p) in momentum.iter().enumerate().take(m) {
        mat -= rep.gamma(a).map(|c| c * Complex::new(*p, 0.0));
    }
    let svd = mat.svd(true, true);
    let (mut best, mut sigma) = (0usize, f64::INFINITY);
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s < sigma {
            sigma = *s;
            best = i;
        }
    }
    let v_t = svd.v_t.expect("svd requested with vectors");
    let u: Vec<Complex<f64>> = (0..k).map(|j| v_t[(best, j)].conj()).collect();
    (u, sigma)
}

/// Flat chart with identity frame for plane-wave scenarios.
pub fn flat_chart_and_frame(
    m: usize,
    samples: usize,
) -> Result<(Arc<Chart>, FrameField), FieldError> {
    let coords: Vec<String> = (0..m).map(|i| format!("x{}", i + 1)).collect();
    let ranges = vec![(0.0, 1.0); m];
    let chart = Chart::with_relative_step(coords, ranges, vec![samples; m], crate::chart::DEFAULT_FD_REL)?;
    let frame = Field::from_eval(&chart, vec![m, m], "identity frame", move |_| {
        let mut v = vec![0.0; m * m];
        for i in 0..m {
            v[idx2(m, i, i)] = 1.0;
        }
        v
    })?;
    Ok((chart.clone(), FrameField::new(frame)?))
}

/// Zero spin-connection coefficients.
pub fn zero_spin_coeffs(chart: &Arc<Chart>) -> SpinConnectionCoeffs {
    let m = chart.dim();
    let field = Field::from_eval(chart, vec![m, m, m], "zero spin coefficients", move |_| {
        vec![0.0; m * m * m]
    })
    .expect("zero is finite");
    SpinConnectionCoeffs::new(field).expect("shape is correct")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::{induce_metric, DEFAULT_FD_REL};
    use crate::clifford::{build_gamma, Signature};
    use crate::fieldlang::FieldDef;
    use crate::randfields;

    fn params(plus: usize, minus: usize, mass: f64) -> DiracParams {
        DiracParams {
            mass,
            rep: build_gamma(Signature::new(plus, minus).unwrap()).unwrap(),
        }
    }

    fn polar_setup() -> (Arc<Chart>, FrameField, MetricField, DiracParams) {
        let chart = Chart::with_relative_step(
            vec!["r".into(), "th".into()],
            vec![(1.0, 2.0), (0.2, 1.3)],
            vec![8, 8],
            DEFAULT_FD_REL,
        )
        .unwrap();
        let def = FieldDef::parse_all(chart.coords().to_vec(), vec![2, 2], &["1", "0", "0", "1/r"])
            .unwrap();
        let e = FrameField::from_def(&chart, &def).unwrap();
        let p = params(2, 0, 1.0);
        let g = induce_metric(&e, p.rep.eta()).unwrap();
        (chart, e, g, p)
    }

    fn random_spinor(chart: &Arc<Chart>, k: usize, seed: u64) -> SpinorField {
        let mut rng = randfields::rng_for(seed, "spinor", 0);
        let pairs = randfields::spinor_exprs(&mut rng, chart.dim(), k);
        SpinorField::from_exprs(chart, &pairs).unwrap()
    }

    #[test]
    fn cov_deriv_reduces_to_plain_derivative_without_connection() {
        let (chart, e, _, p) = polar_setup();
        let _ = e;
        let psi = random_spinor(&chart, p.rep.k, 3);
        let sc = zero_spin_coeffs(&chart);
        let covd = spinor_cov_deriv(&psi, &sc, &p.rep).unwrap();
        let dpsi = psi.field().partial_all().unwrap();
        // Same numbers, different layout: covd[mu][j][c] vs dpsi[j][c][mu].
        let m = chart.dim();
        let k = p.rep.k;
        for flat in [0, 17, 63] {
            let a = covd.at(flat);
            let b = dpsi.at(flat);
            for mu in 0..m {
                for j in 0..k {
                    for c in 0..2 {
                        let lhs = a[(mu * k + j) * 2 + c];
                        let rhs = b[(j * 2 + c) * m + mu];
                        assert!((lhs - rhs).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_spinor_has_zero_derivative_and_exact_connection_term() {
        let (chart, _, g, p) = polar_setup();
        let k = p.rep.k;
        let u = vec![
            Complex::new(0.3, -0.2),
            Complex::new(1.1, 0.4),
        ];
        let uu = u.clone();
        let psi = SpinorField::from_field(
            Field::from_eval(&chart, vec![k, 2], "const spinor", move |_| {
                uu.iter().flat_map(|c| [c.re, c.im]).collect()
            })
            .unwrap(),
        )
        .unwrap();

        let sc0 = zero_spin_coeffs(&chart);
        let covd = spinor_cov_deriv(&psi, &sc0, &p.rep).unwrap();
        assert!(covd.max_abs() < 1e-10);

        // Nonzero coefficients: the finite difference of a constant is zero
        // bit for bit, so the connection term is reproduced exactly.
        let def = FieldDef::parse_all(chart.coords().to_vec(), vec![2, 2], &["1", "0", "0", "1/r"])
            .unwrap();
        let e = FrameField::from_def(&chart, &def).unwrap();
        let sc = spin_coeffs(&levi_civita(&g).unwrap(), &e, p.rep.eta()).unwrap();
        let covd = spinor_cov_deriv(&psi, &sc, &p.rep).unwrap();
        let m = chart.dim();
        for flat in [5, 40] {
            let scv = sc.field().at(flat);
            let got = covd.at(flat);
            for mu in 0..m {
                let mut expect = vec![Complex::new(0.0, 0.0); k];
                for a in 0..m {
                    for b in 0..m {
                        let w = 0.25 * scv[idx3(m, a, b, mu)];
                        if w != 0.0 {
                            let gg = p.rep.gamma_lower(a) * p.rep.gamma_lower(b);
                            for i in 0..k {
                                for j in 0..k {
                                    expect[i] += w * gg[(i, j)] * u[j];
                                }
                            }
                        }
                    }
                }
                for i in 0..k {
                    let gv = Complex::new(got[(mu * k + i) * 2], got[(mu * k + i) * 2 + 1]);
                    assert!((gv - expect[i]).norm() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn zero_spinor_and_massless_constant_have_zero_residual() {
        let (chart, e, _, p) = polar_setup();
        let sc = zero_spin_coeffs(&chart);
        let zero = SpinorField::zero(&chart, p.rep.k);
        let r = dirac_residual(&e, &sc, &zero, &p).unwrap();
        assert_eq!(r.max_abs(), 0.0);

        let p0 = params(2, 0, 0.0);
        let k = p0.rep.k;
        let psi = SpinorField::from_field(
            Field::from_eval(&chart, vec![k, 2], "const", move |_| {
                let mut v = vec![0.0; 2 * k];
                v[0] = 1.0;
                v
            })
            .unwrap(),
        )
        .unwrap();
        let r = dirac_residual(&e, &sc, &psi, &p0).unwrap();
        assert!(r.max_abs() < 1e-12);
    }

    #[test]
    fn plane_waves_solve_the_flat_dirac_equation() {
        // (2,0): p = (1, 0); (1,1): p = (1.25, 0.75); both on shell for mass 1.
        for (plus, minus, momentum) in [
            (2usize, 0usize, vec![1.0, 0.0]),
            (1, 1, vec![1.25, 0.75]),
        ] {
            let p = params(plus, minus, 1.0);
            let m = plus + minus;
            let (chart, e) = flat_chart_and_frame(m, 6).unwrap();
            let u = plane_wave_amplitude(&p.rep, p.mass, &momentum).unwrap();
            let psi = SpinorField::plane_wave(&chart, u, momentum.clone());
            let sc = zero_spin_coeffs(&chart);
            let r = dirac_residual(&e, &sc, &psi, &p).unwrap();
            let worst = r.max_abs();
            assert!(
                worst < 1e-6,
                "({plus},{minus}) plane-wave residual {worst:.3e}"
            );
        }
    }

    #[test]
    fn off_shell_momentum_is_rejected() {
        let p = params(2, 0, 1.0);
        let err = plane_wave_amplitude(&p.rep, p.mass, &[1.0, 0.5]).unwrap_err();
        assert!(matches!(err, DiracError::OffShell { .. }));
    }

    #[test]
    fn residual_grows_quadratically_under_orthogonal_momentum_perturbation() {
        let p = params(2, 0, 1.0);
        let (chart, e) = flat_chart_and_frame(2, 5).unwrap();
        let sc = zero_spin_coeffs(&chart);
        let mut norms = Vec::new();
        for delta in [1e-2, 2e-2] {
            let momentum = vec![1.0, delta];
            let (u, _) = plane_wave_amplitude_relaxed(&p.rep, &momentum, p.mass);
            let psi = SpinorField::plane_wave(&chart, u, momentum);
            let r = dirac_residual(&e, &sc, &psi, &p).unwrap();
            norms.push(r.max_abs());
        }
        let ratio = norms[1] / norms[0];
        assert!(
            (3.0..5.5).contains(&ratio),
            "expected quadratic degradation, got ratio {ratio} from {norms:?}"
        );
    }

    #[test]
    fn residual_is_complex_linear_in_the_spinor() {
        let (chart, e, _, p) = polar_setup();
        let k = p.rep.k;
        let sc = zero_spin_coeffs(&chart);
        let psi1 = random_spinor(&chart, k, 101);
        let psi2 = random_spinor(&chart, k, 202);
        let alpha = Complex::new(2.0, -1.0);
        let beta = Complex::new(-0.5, 0.25);
        let f1 = psi1.field().clone();
        let f2 = psi2.field().clone();
        let combo = SpinorField::from_field(
            Field::from_eval(&chart, vec![k, 2], "combo", move |x| {
                let a = complex_from_pairs(&f1.eval(x));
                let b = complex_from_pairs(&f2.eval(x));
                (0..k)
                    .flat_map(|i| {
                        let v = alpha * a[i] + beta * b[i];
                        [v.re, v.im]
                    })
                    .collect()
            })
            .unwrap(),
        )
        .unwrap();
        let r1 = dirac_residual(&e, &sc, &psi1, &p).unwrap();
        let r2 = dirac_residual(&e, &sc, &combo, &p).unwrap();
        let rc = dirac_residual(&e, &sc, &psi2, &p).unwrap();
        let mut worst: f64 = 0.0;
        for flat in 0..chart.grid_len() {
            let a = complex_from_pairs(r1.at(flat));
            let b = complex_from_pairs(rc.at(flat));
            let c = complex_from_pairs(r2.at(flat));
            for i in 0..k {
                worst = worst.max((c[i] - (alpha * a[i] + beta * b[i])).norm());
            }
        }
        assert!(worst < 1e-9, "linearity defect {worst:.3e}");
    }

    #[test]
    fn contorsion_split_closes_algebraically() {
        let (chart, e, g, p) = polar_setup();
        let psi = random_spinor(&chart, p.rep.k, 7);

        let zero = ContorsionField::zero(&chart);
        let d0 = contorsion_split_check(&e, &g, &zero, &psi, &p).unwrap();
        assert!(d0 < 1e-14, "zero contorsion split {d0:.3e}");

        let mut rng = randfields::rng_for(9, "split", 0);
        let k_field = randfields::contorsion(&mut rng, &chart, 0.8);
        let d = contorsion_split_check(&e, &g, &k_field, &psi, &p).unwrap();
        assert!(d < 1e-8, "split defect {d:.3e}");
    }

    #[test]
    fn split_term_scales_linearly_in_the_contorsion() {
        let (chart, e, g, p) = polar_setup();
        let psi = random_spinor(&chart, p.rep.k, 8);
        let mut rng = randfields::rng_for(10, "split-scale", 0);
        let k1 = randfields::contorsion(&mut rng, &chart, 0.5);
        // Doubled contorsion via a scaled evaluator.
        let inner = k1.field().clone();
        let m = chart.dim();
        let doubled = Field::from_eval(&chart, vec![m, m, m], "2K", move |x| {
            inner.eval(x).iter().map(|v| 2.0 * v).collect()
        })
        .unwrap();
        let k2 = ContorsionField::new(doubled).unwrap();

        let eta = p.rep.eta().clone();
        let r_lc = dirac_residual(&e, &spin_coeffs(&levi_civita(&g).unwrap(), &e, &eta).unwrap(), &psi, &p).unwrap();
        let r1 = dirac_residual(
            &e,
            &spin_coeffs(&connection_from_contorsion(&g, &k1).unwrap(), &e, &eta).unwrap(),
            &psi,
            &p,
        )
        .unwrap();
        let r2 = dirac_residual(
            &e,
            &spin_coeffs(&connection_from_contorsion(&g, &k2).unwrap(), &e, &eta).unwrap(),
            &psi,
            &p,
        )
        .unwrap();
        let mut worst: f64 = 0.0;
        for flat in 0..chart.grid_len() {
            let lc = r_lc.at(flat);
            let a = r1.at(flat);
            let b = r2.at(flat);
            for i in 0..a.len() {
                worst = worst.max(((b[i] - lc[i]) - 2.0 * (a[i] - lc[i])).abs());
            }
        }
        assert!(worst < 1e-9, "linearity in K defect {worst:.3e}");
    }

    #[test]
    fn covariance_under_identity_and_constant_spin_elements() {
        let (chart, e, g, p) = polar_setup();
        let eta = p.rep.eta().clone();
        let psi = random_spinor(&chart, p.rep.k, 11);
        let sc = spin_coeffs(&levi_civita(&g).unwrap(), &e, &eta).unwrap();

        let id = SpinElementField::identity(&chart, p.rep.k);
        let d = covariance_check(&e, &sc, &psi, &p, &id).unwrap();
        assert!(d < 1e-12, "identity covariance defect {d:.3e}");

        // Constant spin element: no derivative term, purely algebraic.
        let m = chart.dim();
        let theta = Field::from_eval(&chart, vec![m, m], "const theta", move |_| {
            vec![0.0, 0.8, -0.8, 0.0]
        })
        .unwrap();
        let s = SpinElementField::from_theta_field(&theta, &p.rep).unwrap();
        let d = covariance_check(&e, &sc, &psi, &p, &s).unwrap();
        assert!(d < 1e-8, "constant covariance defect {d:.3e}");
    }

    #[test]
    fn covariance_under_coordinate_dependent_spin_elements() {
        let (chart, e, g, p) = polar_setup();
        let eta = p.rep.eta().clone();
        let psi = random_spinor(&chart, p.rep.k, 12);
        let sc = spin_coeffs(&levi_civita(&g).unwrap(), &e, &eta).unwrap();
        let mut rng = randfields::rng_for(13, "covariance", 0);
        let theta = randfields::theta_field(&mut rng, &chart, chart.dim(), 0.7);
        let s = SpinElementField::from_theta_field(&theta, &p.rep).unwrap();
        let d = covariance_check(&e, &sc, &psi, &p, &s).unwrap();
        assert!(d < 1e-6, "covariance defect {d:.3e}");
    }

    #[test]
    fn frame_transformation_preserves_the_dirac_form() {
        let (chart, e, _, p) = polar_setup();
        let psi = random_spinor(&chart, p.rep.k, 14);

        let id = TransformField::identity(&chart);
        let zero = ContorsionField::zero(&chart);
        let r = frame_transform_dirac_check(&e, &zero, &id, &psi, &p).unwrap();
        assert!(r.defect() < 1e-9, "identity defect {:?}", r);

        let mut rng = randfields::rng_for(15, "frame-dirac", 0);
        let phi = randfields::transform(&mut rng, &chart);
        let k_field = randfields::contorsion(&mut rng, &chart, 0.8);
        let r = frame_transform_dirac_check(&e, &k_field, &phi, &psi, &p).unwrap();
        assert!(r.coeff_defect < 1e-6, "coeff defect {:.3e}", r.coeff_defect);
        assert!(
            r.residual_defect < 1e-6,
            "residual defect {:.3e}",
            r.residual_defect
        );
    }
}
