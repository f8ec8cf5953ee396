//! Transport of connections under spin-frame transformations: the pushed
//! connection, the h- and k-tensors measuring how Levi-Civita lifts and
//! generic lifts move, the transported contorsion and torsion, and the
//! pullback-coefficient equality that ties both spin frames to one and the
//! same connection on the spin bundle.

use crate::chart::{idx2, idx3, Field, FieldError, FrameField, MetricField, RMatrix, TransformField};
use crate::connection::{
    connection_from_contorsion, covariant_derivative, levi_civita, projectability_defect,
    spin_coeffs, torsion, ContorsionField, LinearConnection, SpinConnectionCoeffs, TorsionField,
    Variance,
};

/// omega-tilde^alpha_{beta mu} = phi^alpha_gamma (omega^gamma_{delta mu}
/// phibar^delta_beta + d_mu phibar^gamma_beta): the coefficients of the
/// connection pushed forward along the vertical automorphism.
pub fn transport_connection(
    omega: &LinearConnection,
    phi: &TransformField,
) -> Result<LinearConnection, FieldError> {
    let m = phi.chart().dim();
    let w = omega.field().clone();
    let p = phi.field().clone();
    let pinv = phi.inverse_field().clone();
    let dpinv = phi.inverse_field().partial_all()?;
    let field = Field::from_eval(phi.chart(), vec![m, m, m], "transported connection", move |x| {
        let wv = w.eval(x);
        let pv = p.eval(x);
        let iv = pinv.eval(x);
        let dv = dpinv.eval(x);
        let mut out = vec![0.0; m * m * m];
        for a in 0..m {
            for b in 0..m {
                for u in 0..m {
                    let mut sum = 0.0;
                    for ga in 0..m {
                        let mut inner = dv[idx3(m, ga, b, u)];
                        for de in 0..m {
                            inner += wv[idx3(m, ga, de, u)] * iv[idx2(m, de, b)];
                        }
                        sum += pv[idx2(m, a, ga)] * inner;
                    }
                    out[idx3(m, a, b, u)] = sum;
                }
            }
        }
        out
    })?;
    LinearConnection::new(field)
}

/// g-tilde_{mu nu} = phibar^rho_mu g_{rho sigma} phibar^sigma_nu: the metric
/// induced by the transformed frame.
pub fn transformed_metric(
    g: &MetricField,
    phi: &TransformField,
) -> Result<MetricField, FieldError> {
    let m = phi.chart().dim();
    let gf = g.field().clone();
    let pinv = phi.inverse_field().clone();
    let field = Field::from_eval(phi.chart(), vec![m, m], "transformed metric", move |x| {
        let gm = gf.eval_mat(x);
        let pb = pinv.eval_mat(x);
        let gt = pb.transpose() * gm * pb;
        gt.row_iter()
            .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
            .collect()
    })?;
    MetricField::new(field)
}

/// Covariant derivative of phibar with respect to a connection, laid out as
/// `D[gamma][beta][mu] = D_mu phibar^gamma_beta`.
fn phibar_cov_deriv(
    phi: &TransformField,
    omega: &LinearConnection,
) -> Result<Field, FieldError> {
    covariant_derivative(phi.inverse_field(), &[Variance::Up, Variance::Down], omega)
}

/// The h-tensor: the closed form for {g-tilde} - {g} in terms of phi and
/// Levi-Civita covariant derivatives of phibar. Symmetric in its lower pair.
pub fn h_tensor(g: &MetricField, phi: &TransformField) -> Result<Field, FieldError> {
    let m = phi.chart().dim();
    let lc = levi_civita(g)?;
    let d = phibar_cov_deriv(phi, &lc)?;
    let p = phi.field().clone();
    let pinv = phi.inverse_field().clone();
    let gf = g.field().clone();
    let ginv = g.inverse_field().clone();
    Field::from_eval(phi.chart(), vec![m, m, m], "h tensor", move |x| {
        let dv = d.eval(x);
        let pv = p.eval_mat(x);
        let ib = pinv.eval_mat(x);
        let gm = gf.eval_mat(x);
        let gi = ginv.eval_mat(x);
        // q^{alpha lambda} = phi^alpha_gamma g^{gamma delta} phi^lambda_delta
        // is the inverse transformed metric.
        let q = &pv * gi * pv.transpose();
        // b[sigma][beta] = g_{rho sigma} phibar^rho_beta.
        let b = gm.transpose() * &ib;
        let mut out = vec![0.0; m * m * m];
        for al in 0..m {
            for be in 0..m {
                for mu in 0..m {
                    let mut t1 = 0.0;
                    for ga in 0..m {
                        t1 += pv[(al, ga)]
                            * 0.5
                            * (dv[idx3(m, ga, mu, be)] + dv[idx3(m, ga, be, mu)]);
                    }
                    let mut t2 = 0.0;
                    let mut t3 = 0.0;
                    for la in 0..m {
                        let mut s2 = 0.0;
                        let mut s3 = 0.0;
                        for si in 0..m {
                            s2 += b[(si, be)] * dv[idx3(m, si, la, mu)]
                                + b[(si, mu)] * dv[idx3(m, si, la, be)];
                            s3 += b[(si, mu)] * dv[idx3(m, si, be, la)]
                                + b[(si, be)] * dv[idx3(m, si, mu, la)];
                        }
                        t2 += q[(al, la)] * 0.5 * s2;
                        t3 -= q[(al, la)] * 0.5 * s3;
                    }
                    out[idx3(m, al, be, mu)] = t1 + t2 + t3;
                }
            }
        }
        out
    })
}

/// Independent oracle for the h-tensor: both Christoffel computations run
/// separately and are subtracted pointwise.
pub fn christoffel_difference(
    g: &MetricField,
    phi: &TransformField,
) -> Result<Field, FieldError> {
    let m = phi.chart().dim();
    let gt = transformed_metric(g, phi)?;
    let lc = levi_civita(g)?;
    let lct = levi_civita(&gt)?;
    let a = lct.field().clone();
    let b = lc.field().clone();
    Field::from_eval(phi.chart(), vec![m, m, m], "christoffel difference", move |x| {
        let av = a.eval(x);
        let bv = b.eval(x);
        av.iter().zip(bv.iter()).map(|(x, y)| x - y).collect()
    })
}

/// The k-tensor k^alpha_{beta mu} = phi^alpha_gamma D^omega_mu phibar^gamma_beta.
pub fn k_tensor(
    omega: &LinearConnection,
    phi: &TransformField,
) -> Result<Field, FieldError> {
    let m = phi.chart().dim();
    let d = phibar_cov_deriv(phi, omega)?;
    let p = phi.field().clone();
    Field::from_eval(phi.chart(), vec![m, m, m], "k tensor", move |x| {
        let dv = d.eval(x);
        let pv = p.eval_mat(x);
        let mut out = vec![0.0; m * m * m];
        for al in 0..m {
            for be in 0..m {
                for mu in 0..m {
                    let mut sum = 0.0;
                    for ga in 0..m {
                        sum += pv[(al, ga)] * dv[idx3(m, ga, be, mu)];
                    }
                    out[idx3(m, al, be, mu)] = sum;
                }
            }
        }
        out
    })
}

/// Independent oracle for the k-tensor: the transported connection minus the
/// original one.
pub fn omega_difference(
    omega: &LinearConnection,
    phi: &TransformField,
) -> Result<Field, FieldError> {
    let m = phi.chart().dim();
    let wt = transport_connection(omega, phi)?;
    let a = wt.field().clone();
    let b = omega.field().clone();
    Field::from_eval(phi.chart(), vec![m, m, m], "omega difference", move |x| {
        let av = a.eval(x);
        let bv = b.eval(x);
        av.iter().zip(bv.iter()).map(|(x, y)| x - y).collect()
    })
}

/// The transported contorsion
/// K-tilde_{rho beta mu} = g_{alpha gamma} phibar^alpha_rho D_{[mu} phibar^gamma_{beta]}
///                       - g_{alpha gamma} phibar^alpha_{(beta} D_{mu)} phibar^gamma_rho
///                       + g_{alpha gamma} D_rho phibar^alpha_{(beta} phibar^gamma_{mu)}
///                       + phibar^sigma_rho K_{sigma eta mu} phibar^eta_beta,
/// with D the Levi-Civita covariant derivative of g. Returns the stored
/// (exactly antisymmetrized) field together with the raw antisymmetry defect.
pub fn transported_contorsion(
    k: &ContorsionField,
    g: &MetricField,
    phi: &TransformField,
) -> Result<(ContorsionField, f64), FieldError> {
    let m = phi.chart().dim();
    let lc = levi_civita(g)?;
    let d = phibar_cov_deriv(phi, &lc)?;
    let pinv = phi.inverse_field().clone();
    let gf = g.field().clone();
    let kf = k.field().clone();
    let raw = Field::from_eval(phi.chart(), vec![m, m, m], "transported contorsion", move |x| {
        let dv = d.eval(x);
        let ib = pinv.eval_mat(x);
        let gm = gf.eval_mat(x);
        let kv = kf.eval(x);
        // gp[gamma][rho] = g_{alpha gamma} phibar^alpha_rho.
        let gp = gm.transpose() * &ib;
        let mut out = vec![0.0; m * m * m];
        for rho in 0..m {
            for be in 0..m {
                for mu in 0..m {
                    let mut t = 0.0;
                    for ga in 0..m {
                        // antisymmetrized derivative slot [mu beta]
                        t += gp[(ga, rho)]
                            * 0.5
                            * (dv[idx3(m, ga, be, mu)] - dv[idx3(m, ga, mu, be)]);
                        // symmetrized pair (beta mu) against derivative of phibar^._rho
                        t -= 0.5
                            * (gp[(ga, be)] * dv[idx3(m, ga, rho, mu)]
                                + gp[(ga, mu)] * dv[idx3(m, ga, rho, be)]);
                        // derivative in the rho slot, symmetrized pair (beta mu)
                        t += 0.5
                            * (dv[idx3(m, ga, be, rho)] * gp[(ga, mu)]
                                + dv[idx3(m, ga, mu, rho)] * gp[(ga, be)]);
                    }
                    let mut t4 = 0.0;
                    for si in 0..m {
                        for et in 0..m {
                            t4 += ib[(si, rho)] * kv[idx3(m, si, et, mu)] * ib[(et, be)];
                        }
                    }
                    out[idx3(m, rho, be, mu)] = t + t4;
                }
            }
        }
        out
    })?;
    ContorsionField::antisymmetrize(raw)
}

/// The transported torsion
/// T-tilde^lambda_{beta mu} = 2 phi^lambda_gamma D_{[mu} phibar^gamma_{beta]}
///                          + 2 phi^lambda_gamma g^{gamma sigma} K_{sigma eta [mu} phibar^eta_{beta]}.
pub fn transported_torsion(
    k: &ContorsionField,
    g: &MetricField,
    phi: &TransformField,
) -> Result<TorsionField, FieldError> {
    let m = phi.chart().dim();
    let lc = levi_civita(g)?;
    let d = phibar_cov_deriv(phi, &lc)?;
    let p = phi.field().clone();
    let pinv = phi.inverse_field().clone();
    let ginv = g.inverse_field().clone();
    let kf = k.field().clone();
    let raw = Field::from_eval(phi.chart(), vec![m, m, m], "transported torsion", move |x| {
        let dv = d.eval(x);
        let pv = p.eval_mat(x);
        let ib = pinv.eval_mat(x);
        let gi = ginv.eval_mat(x);
        let kv = kf.eval(x);
        // pg[lambda][sigma] = phi^lambda_gamma g^{gamma sigma}.
        let pg = &pv * gi;
        let mut out = vec![0.0; m * m * m];
        for la in 0..m {
            for be in 0..m {
                for mu in 0..m {
                    let mut t1 = 0.0;
                    for ga in 0..m {
                        t1 += pv[(la, ga)] * (dv[idx3(m, ga, be, mu)] - dv[idx3(m, ga, mu, be)]);
                    }
                    let mut t2 = 0.0;
                    for si in 0..m {
                        for et in 0..m {
                            t2 += pg[(la, si)]
                                * (kv[idx3(m, si, et, mu)] * ib[(et, be)]
                                    - kv[idx3(m, si, et, be)] * ib[(et, mu)]);
                        }
                    }
                    out[idx3(m, la, be, mu)] = t1 + t2;
                }
            }
        }
        out
    })?;
    Ok(TorsionField::antisymmetrize(raw)?.0)
}

/// max-abs of g-tilde^{rho gamma} K-tilde_{gamma beta mu}
///           - (g^{rho gamma} K_{gamma beta mu} + k^rho_{beta mu} - h^rho_{beta mu}),
/// i.e. the coefficient form of the transported-contorsion theorem with
/// omega = {g} + gK.
pub fn ktilde_consistency_defect(
    k: &ContorsionField,
    ktilde: &Field,
    g: &MetricField,
    gtilde: &MetricField,
    phi: &TransformField,
) -> Result<f64, FieldError> {
    let m = phi.chart().dim();
    let omega = connection_from_contorsion(g, k)?;
    let kt = k_tensor(&omega, phi)?;
    let ht = h_tensor(g, phi)?;
    let gti = gtilde.inverse_field().clone();
    let gi = g.inverse_field().clone();
    let ktf = ktilde.clone();
    let kf = k.field().clone();
    let diff = Field::from_eval(phi.chart(), vec![m, m, m], "ktilde consistency", move |x| {
        let gtiv = gti.eval(x);
        let giv = gi.eval(x);
        let ktv = ktf.eval(x);
        let kv = kf.eval(x);
        let kkv = kt.eval(x);
        let hhv = ht.eval(x);
        let mut out = vec![0.0; m * m * m];
        for rho in 0..m {
            for be in 0..m {
                for mu in 0..m {
                    let mut lhs = 0.0;
                    let mut raised_k = 0.0;
                    for ga in 0..m {
                        lhs += gtiv[idx2(m, rho, ga)] * ktv[idx3(m, ga, be, mu)];
                        raised_k += giv[idx2(m, rho, ga)] * kv[idx3(m, ga, be, mu)];
                    }
                    let rhs = raised_k + kkv[idx3(m, rho, be, mu)] - hhv[idx3(m, rho, be, mu)];
                    out[idx3(m, rho, be, mu)] = lhs - rhs;
                }
            }
        }
        out
    })?;
    Ok(diff.max_abs())
}

/// One defect entry of a transport report.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct TransportCheck {
    pub defect: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl TransportCheck {
    fn new(defect: f64, tolerance: f64) -> TransportCheck {
        TransportCheck {
            defect,
            tolerance,
            pass: defect < tolerance,
        }
    }
}

/// Per-identity max-abs defects for one (frame, contorsion, transformation)
/// scenario.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TransportReport {
    pub h_defect: TransportCheck,
    pub k_defect: TransportCheck,
    pub ktilde_antisymmetry: TransportCheck,
    pub ktilde_consistency: TransportCheck,
    pub transported_projectability: TransportCheck,
    pub ttilde_consistency: TransportCheck,
    pub pullback_equality: TransportCheck,
}

impl TransportReport {
    pub fn pass(&self) -> bool {
        self.h_defect.pass
            && self.k_defect.pass
            && self.ktilde_antisymmetry.pass
            && self.ktilde_consistency.pass
            && self.transported_projectability.pass
            && self.ttilde_consistency.pass
            && self.pullback_equality.pass
    }
}

/// Tolerances used by `transport_report`, from the scenario's ladder.
#[derive(Debug, Clone, Copy)]
pub struct TransportTolerances {
    pub h: f64,
    pub k: f64,
    pub ktilde_antisymmetry: f64,
    pub ktilde: f64,
    pub ttilde: f64,
    pub pullback: f64,
}

/// Outcome of the pullback-coefficient equality check: the spin coefficients
/// computed from (e, g, K) and from (e-tilde, g-tilde, K-tilde).
pub struct PullbackEquality {
    pub sc: SpinConnectionCoeffs,
    pub sc_tilde: SpinConnectionCoeffs,
    pub defect: f64,
}

/// Computes omega^{ab}_mu two ways: through the original frame with
/// omega = {g} + gK, and through the transformed frame with
/// omega-tilde = {g-tilde} + g-tilde K-tilde. The two coefficient fields
/// agree because both describe the same connection on the spin bundle.
pub fn pullback_equality_check(
    e: &FrameField,
    k: &ContorsionField,
    phi: &TransformField,
    eta: &RMatrix,
) -> Result<PullbackEquality, FieldError> {
    let g = crate::chart::induce_metric(e, eta)?;
    let omega = connection_from_contorsion(&g, k)?;
    let sc = spin_coeffs(&omega, e, eta)?;

    let e_tilde = crate::chart::transform_frame(e, phi)?;
    let g_tilde = crate::chart::induce_metric(&e_tilde, eta)?;
    let (k_tilde, _) = transported_contorsion(k, &g, phi)?;
    let omega_tilde = connection_from_contorsion(&g_tilde, &k_tilde)?;
    let sc_tilde = spin_coeffs(&omega_tilde, &e_tilde, eta)?;

    let defect = sc.field().max_abs_diff(sc_tilde.field());
    Ok(PullbackEquality {
        sc,
        sc_tilde,
        defect,
    })
}

/// Runs every transport identity for one scenario and aggregates the defects.
pub fn transport_report(
    e: &FrameField,
    k: &ContorsionField,
    phi: &TransformField,
    eta: &RMatrix,
    tol: &TransportTolerances,
) -> Result<TransportReport, FieldError> {
    let g = crate::chart::induce_metric(e, eta)?;
    let omega = connection_from_contorsion(&g, k)?;

    // Lemma h: closed form vs independent Christoffel difference.
    let h = h_tensor(&g, phi)?;
    let h_oracle = christoffel_difference(&g, phi)?;
    let h_defect = h.max_abs_diff(&h_oracle);

    // Lemma k: closed form vs transported-minus-original coefficients.
    let kt = k_tensor(&omega, phi)?;
    let k_oracle = omega_difference(&omega, phi)?;
    let k_defect = kt.max_abs_diff(&k_oracle);

    // Transported contorsion: antisymmetry and the K + k - h consistency.
    let (k_tilde, ktilde_antisym) = transported_contorsion(k, &g, phi)?;
    let g_tilde = transformed_metric(&g, phi)?;
    let ktilde_defect = ktilde_consistency_defect(k, k_tilde.field(), &g, &g_tilde, phi)?;

    // The transported connection projects on the transformed frame.
    let e_tilde = crate::chart::transform_frame(e, phi)?;
    let omega_t = transport_connection(&omega, phi)?;
    let sc_t = spin_coeffs(&omega_t, &e_tilde, eta)?;
    let (_, proj_defect) = projectability_defect(&sc_t);

    // Transported torsion vs the torsion of {g-tilde} + g-tilde K-tilde, and
    // the torsionless special case against an independent route.
    let t_tilde = transported_torsion(k, &g, phi)?;
    let omega_tilde = connection_from_contorsion(&g_tilde, &k_tilde)?;
    let t_of_omega = torsion(&omega_tilde);
    let mut ttilde_defect = t_tilde.field().max_abs_diff(t_of_omega.field());
    let zero_k = ContorsionField::zero(phi.chart());
    let t0 = transported_torsion(&zero_k, &g, phi)?;
    let lc = levi_civita(&g)?;
    let t0_oracle = torsion(&transport_connection(&lc, phi)?);
    ttilde_defect = ttilde_defect.max(t0.field().max_abs_diff(t0_oracle.field()));

    let pullback = pullback_equality_check(e, k, phi, eta)?;

    Ok(TransportReport {
        h_defect: TransportCheck::new(h_defect, tol.h),
        k_defect: TransportCheck::new(k_defect, tol.k),
        ktilde_antisymmetry: TransportCheck::new(ktilde_antisym, tol.ktilde_antisymmetry),
        ktilde_consistency: TransportCheck::new(ktilde_defect, tol.ktilde),
        transported_projectability: TransportCheck::new(proj_defect, tol.ktilde),
        ttilde_consistency: TransportCheck::new(ttilde_defect, tol.ttilde),
        pullback_equality: TransportCheck::new(pullback.defect, tol.pullback),
    })
}
