//! Check orchestration: runs the named identity checks on a loaded scenario
//! and assembles a machine-readable report. Checks never abort the run; a
//! failing computation is recorded on its row.

use crate::chart::{change_trivialization, idx3, induce_metric, Field, SpinElementField};
use crate::connection::{
    connection_from_contorsion, contorsion_from_torsion, levi_civita, projectability_defect,
    spin_coeffs, torsion as torsion_of, ContorsionField, TorsionField,
};
use crate::dirac::{
    contorsion_split_check, covariance_check, frame_transform_dirac_check, DiracParams,
    SpinorField, SPINOR_DERIVATIVE_CONVENTION,
};
use crate::randfields;
use crate::report::{CheckResult, Report, Tolerances};
use crate::scenario::Scenario;
use crate::transform::{
    christoffel_difference, h_tensor, k_tensor, ktilde_consistency_defect, omega_difference,
    pullback_equality_check, transformed_metric, transport_connection, transported_contorsion,
    transported_torsion,
};

/// The fixed check list, in report order.
pub const CHECK_NAMES: [&str; 13] = [
    "metric-induce",
    "lc-projectable",
    "contorsion-antisym",
    "torsion-roundtrip",
    "h-lemma",
    "k-lemma",
    "ktilde-theorem",
    "ttilde-corollary",
    "pullback-equality",
    "dirac-split",
    "dirac-covariance",
    "frame-transform-dirac",
    "metric-invariance-vertical",
];

/// Parses `all` or a comma-separated list of check names.
pub fn parse_check_set(spec: &str) -> Result<Vec<String>, String> {
    if spec.trim() == "all" {
        return Ok(CHECK_NAMES.iter().map(|s| s.to_string()).collect());
    }
    let mut out = Vec::new();
    for raw in spec.split(',') {
        let name = raw.trim();
        if name.is_empty() {
            continue;
        }
        if !CHECK_NAMES.contains(&name) {
            return Err(format!(
                "unknown check `{name}` (known: {})",
                CHECK_NAMES.join(", ")
            ));
        }
        if !out.iter().any(|n| n == name) {
            out.push(name.to_string());
        }
    }
    if out.is_empty() {
        return Err("empty check set".to_string());
    }
    Ok(out)
}

/// Deliberate corruption of one transported-contorsion component, used to
/// demonstrate that the ktilde-theorem check detects coefficient-level
/// faults of matching size.
#[derive(Debug, Clone, Copy)]
pub struct KtildeFault {
    pub component: (usize, usize, usize),
    pub epsilon: f64,
}

/// Number of seeded random draws used by the multi-draw checks.
const DRAWS: u64 = 5;

pub fn run_checks(scenario: &Scenario, which: &[String]) -> Report {
    run_checks_with(scenario, which, None)
}

pub fn run_checks_with(
    scenario: &Scenario,
    which: &[String],
    fault: Option<KtildeFault>,
) -> Report {
    let tols = scenario.tolerances;
    let mut checks = Vec::new();
    for name in CHECK_NAMES {
        if !which.iter().any(|w| w == name) {
            continue;
        }
        checks.push(run_one(scenario, name, &tols, fault));
    }
    let overall_pass = checks.iter().all(|c| c.pass);
    Report {
        version: env!("CARGO_PKG_VERSION").to_string(),
        scenario: scenario.name.clone(),
        scenario_digest: scenario.digest.clone(),
        seed: scenario.seed,
        spinor_derivative_convention: SPINOR_DERIVATIVE_CONVENTION.to_string(),
        checks,
        overall_pass,
    }
}

fn run_one(
    s: &Scenario,
    name: &str,
    tols: &Tolerances,
    fault: Option<KtildeFault>,
) -> CheckResult {
    let (tolerance, outcome) = match name {
        "metric-induce" => (tols.exact, check_metric_induce(s)),
        "lc-projectable" => (tols.fd1, check_lc_projectable(s)),
        "contorsion-antisym" => (tols.exact, check_contorsion_antisym(s)),
        "torsion-roundtrip" => (tols.fd1, check_torsion_roundtrip(s)),
        "h-lemma" => (tols.fd2, check_h_lemma(s)),
        "k-lemma" => (tols.fd1, check_k_lemma(s)),
        "ktilde-theorem" => (tols.fd2, check_ktilde_theorem(s, fault)),
        "ttilde-corollary" => (tols.fd2, check_ttilde_corollary(s)),
        "pullback-equality" => (tols.fd2, check_pullback_equality(s)),
        "dirac-split" => (tols.fd1, check_dirac_split(s)),
        "dirac-covariance" => (tols.fd2, check_dirac_covariance(s)),
        "frame-transform-dirac" => (tols.fd2, check_frame_transform_dirac(s)),
        "metric-invariance-vertical" => (tols.fd1, check_metric_invariance(s)),
        other => (f64::NAN, Err(format!("unknown check `{other}`"))),
    };
    match outcome {
        Ok(defect) => CheckResult::measured(name, defect, tolerance),
        Err(e) => CheckResult::failed(name, tolerance, e),
    }
}

type CheckOutcome = Result<f64, String>;

fn err_str<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// The transformation used by the transport checks: the scenario's when
/// present, a seeded random one otherwise.
fn effective_transform(s: &Scenario, tag: &str, index: u64) -> crate::chart::TransformField {
    match &s.transform {
        Some(t) => t.clone(),
        None => {
            let mut rng = randfields::rng_for(s.seed, tag, index);
            randfields::transform(&mut rng, &s.chart)
        }
    }
}

/// The contorsion used by the checks: the scenario's contorsion, its torsion
/// converted, or a seeded random contorsion.
fn effective_contorsion(s: &Scenario, tag: &str, index: u64) -> Result<ContorsionField, String> {
    if let Some(k) = &s.contorsion {
        return Ok(k.clone());
    }
    if let Some(t) = &s.torsion {
        return contorsion_from_torsion(&s.metric, t).map_err(err_str);
    }
    let mut rng = randfields::rng_for(s.seed, tag, index);
    Ok(randfields::contorsion(&mut rng, &s.chart, 0.8))
}

fn effective_spinor(s: &Scenario, tag: &str) -> SpinorField {
    match &s.spinor {
        Some(p) => p.clone(),
        None => {
            let mut rng = randfields::rng_for(s.seed, tag, 0);
            let pairs = randfields::spinor_exprs(&mut rng, s.chart.dim(), s.rep.k);
            SpinorField::from_exprs(&s.chart, &pairs).expect("bounded spinor expressions")
        }
    }
}

/// Per-grid-point Euclidean norms of the Dirac residual built from the
/// scenario's effective connection and spinor, for CSV dumps: one row of
/// (coordinates, norm) per grid point.
pub fn residual_norms(s: &Scenario) -> Result<Vec<(Vec<f64>, f64)>, String> {
    let k_field = effective_contorsion(s, "residual", 0)?;
    let psi = effective_spinor(s, "residual");
    let omega = connection_from_contorsion(&s.metric, &k_field).map_err(err_str)?;
    let sc = spin_coeffs(&omega, &s.frame, &s.eta).map_err(err_str)?;
    let params = DiracParams {
        mass: s.mass,
        rep: s.rep.clone(),
    };
    let residual =
        crate::dirac::dirac_residual(&s.frame, &sc, &psi, &params).map_err(err_str)?;
    let mut out = Vec::with_capacity(s.chart.grid_len());
    for flat in 0..s.chart.grid_len() {
        let vals = residual.at(flat);
        let norm = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.push((s.chart.point(flat), norm));
    }
    Ok(out)
}

fn check_metric_induce(s: &Scenario) -> CheckOutcome {
    let duality = s.frame.duality_defect();
    let mut sym: f64 = 0.0;
    let m = s.chart.dim();
    for flat in 0..s.chart.grid_len() {
        let g = s.metric.field().at(flat);
        for i in 0..m {
            for j in 0..m {
                sym = sym.max((g[i * m + j] - g[j * m + i]).abs());
            }
        }
    }
    s.metric
        .validate_signature(s.signature.plus, s.signature.minus)
        .map_err(err_str)?;
    Ok(duality.max(sym))
}

fn check_lc_projectable(s: &Scenario) -> CheckOutcome {
    let lc = levi_civita(&s.metric).map_err(err_str)?;
    let sc = spin_coeffs(&lc, &s.frame, &s.eta).map_err(err_str)?;
    let (_, mut worst) = projectability_defect(&sc);
    // The contorsion-shifted connection projects for any valid contorsion.
    for i in 0..DRAWS {
        let mut rng = randfields::rng_for(s.seed, "lc-projectable", i);
        let k = randfields::contorsion(&mut rng, &s.chart, 0.8);
        let omega = connection_from_contorsion(&s.metric, &k).map_err(err_str)?;
        let sck = spin_coeffs(&omega, &s.frame, &s.eta).map_err(err_str)?;
        let (_, d) = projectability_defect(&sck);
        worst = worst.max(d);
    }
    Ok(worst)
}

fn check_contorsion_antisym(s: &Scenario) -> CheckOutcome {
    let mut worst = effective_contorsion(s, "contorsion-antisym", 0)?.antisymmetry_defect();
    for i in 0..DRAWS {
        let mut rng = randfields::rng_for(s.seed, "contorsion-antisym", i + 1);
        worst = worst.max(randfields::contorsion(&mut rng, &s.chart, 0.8).antisymmetry_defect());
    }
    Ok(worst)
}

fn check_torsion_roundtrip(s: &Scenario) -> CheckOutcome {
    let k = effective_contorsion(s, "torsion-roundtrip", 0)?;
    let omega = connection_from_contorsion(&s.metric, &k).map_err(err_str)?;
    let t = torsion_of(&omega);
    let k_back = contorsion_from_torsion(&s.metric, &t).map_err(err_str)?;
    let mut worst = k.field().max_abs_diff(k_back.field());

    let i_tensor: TorsionField = match &s.torsion {
        Some(t) => t.clone(),
        None => {
            let mut rng = randfields::rng_for(s.seed, "torsion-roundtrip", 1);
            randfields::torsion(&mut rng, &s.chart, 0.8)
        }
    };
    let omega_i =
        crate::connection::connection_from_torsion_tensor(&s.metric, &i_tensor).map_err(err_str)?;
    let t_back = torsion_of(&omega_i);
    worst = worst.max(i_tensor.field().max_abs_diff(t_back.field()));
    Ok(worst)
}

fn check_h_lemma(s: &Scenario) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        let phi = effective_transform(s, "h-lemma", i);
        let h = h_tensor(&s.metric, &phi).map_err(err_str)?;
        let oracle = christoffel_difference(&s.metric, &phi).map_err(err_str)?;
        worst = worst.max(h.max_abs_diff(&oracle));
        if s.transform.is_some() {
            break;
        }
    }
    Ok(worst)
}

fn check_k_lemma(s: &Scenario) -> CheckOutcome {
    let k = effective_contorsion(s, "k-lemma", 0)?;
    let omega = connection_from_contorsion(&s.metric, &k).map_err(err_str)?;
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        let phi = effective_transform(s, "k-lemma", i);
        let kt = k_tensor(&omega, &phi).map_err(err_str)?;
        let oracle = omega_difference(&omega, &phi).map_err(err_str)?;
        worst = worst.max(kt.max_abs_diff(&oracle));
        if s.transform.is_some() {
            break;
        }
    }
    Ok(worst)
}

fn check_ktilde_theorem(s: &Scenario, fault: Option<KtildeFault>) -> CheckOutcome {
    let k = effective_contorsion(s, "ktilde-theorem", 0)?;
    let phi = effective_transform(s, "ktilde-theorem", 0);
    let (k_tilde, antisym) = transported_contorsion(&k, &s.metric, &phi).map_err(err_str)?;
    let g_tilde = transformed_metric(&s.metric, &phi).map_err(err_str)?;

    // Optional fault injection: perturb a single component of the computed
    // transported contorsion before the consistency comparison.
    let m = s.chart.dim();
    let (ktilde_field, antisym) = match fault {
        None => (k_tilde.field().clone(), antisym),
        Some(f) => {
            let inner = k_tilde.field().clone();
            let slot = idx3(m, f.component.0, f.component.1, f.component.2);
            let eps = f.epsilon;
            let corrupted = Field::from_eval(
                &s.chart,
                vec![m, m, m],
                "corrupted transported contorsion",
                move |x| {
                    let mut v = inner.eval(x);
                    v[slot] += eps;
                    v
                },
            )
            .map_err(err_str)?;
            // The corruption also breaks antisymmetry by eps/2.
            (corrupted, antisym.max(eps.abs() * 0.5))
        }
    };

    let consistency = ktilde_consistency_defect(&k, &ktilde_field, &s.metric, &g_tilde, &phi)
        .map_err(err_str)?;

    // The transported connection projects on the transformed frame.
    let omega = connection_from_contorsion(&s.metric, &k).map_err(err_str)?;
    let e_tilde = crate::chart::transform_frame(&s.frame, &phi).map_err(err_str)?;
    let sc = spin_coeffs(
        &transport_connection(&omega, &phi).map_err(err_str)?,
        &e_tilde,
        &s.eta,
    )
    .map_err(err_str)?;
    let (_, proj) = projectability_defect(&sc);

    Ok(consistency.max(antisym).max(proj))
}

fn check_ttilde_corollary(s: &Scenario) -> CheckOutcome {
    let k = effective_contorsion(s, "ktilde-theorem", 0)?;
    let phi = effective_transform(s, "ktilde-theorem", 0);
    let t_tilde = transported_torsion(&k, &s.metric, &phi).map_err(err_str)?;
    let (k_tilde, _) = transported_contorsion(&k, &s.metric, &phi).map_err(err_str)?;
    let g_tilde = transformed_metric(&s.metric, &phi).map_err(err_str)?;
    let omega_tilde = connection_from_contorsion(&g_tilde, &k_tilde).map_err(err_str)?;
    let mut worst = t_tilde.field().max_abs_diff(torsion_of(&omega_tilde).field());

    // Torsionless special case: the closed form for K = 0 equals the torsion
    // of the transported Levi-Civita connection.
    let zero = ContorsionField::zero(&s.chart);
    let t0 = transported_torsion(&zero, &s.metric, &phi).map_err(err_str)?;
    let lc = levi_civita(&s.metric).map_err(err_str)?;
    let oracle = torsion_of(&transport_connection(&lc, &phi).map_err(err_str)?);
    worst = worst.max(t0.field().max_abs_diff(oracle.field()));
    Ok(worst)
}

fn check_pullback_equality(s: &Scenario) -> CheckOutcome {
    let k = effective_contorsion(s, "pullback-equality", 0)?;
    let phi = effective_transform(s, "pullback-equality", 0);
    let r = pullback_equality_check(&s.frame, &k, &phi, &s.eta).map_err(err_str)?;
    Ok(r.defect)
}

fn check_dirac_split(s: &Scenario) -> CheckOutcome {
    let k = effective_contorsion(s, "dirac-split", 0)?;
    let psi = effective_spinor(s, "dirac-split");
    let params = DiracParams {
        mass: s.mass,
        rep: s.rep.clone(),
    };
    contorsion_split_check(&s.frame, &s.metric, &k, &psi, &params).map_err(err_str)
}

fn check_dirac_covariance(s: &Scenario) -> CheckOutcome {
    let k = effective_contorsion(s, "dirac-covariance", 0)?;
    let psi = effective_spinor(s, "dirac-covariance");
    let params = DiracParams {
        mass: s.mass,
        rep: s.rep.clone(),
    };
    let omega = connection_from_contorsion(&s.metric, &k).map_err(err_str)?;
    let sc = spin_coeffs(&omega, &s.frame, &s.eta).map_err(err_str)?;
    let mut worst: f64 = 0.0;
    for i in 0..DRAWS {
        let mut rng = randfields::rng_for(s.seed, "dirac-covariance", i);
        let theta = randfields::theta_field(&mut rng, &s.chart, s.chart.dim(), 0.6);
        let sf = SpinElementField::from_theta_field(&theta, &s.rep).map_err(err_str)?;
        let d = covariance_check(&s.frame, &sc, &psi, &params, &sf).map_err(err_str)?;
        worst = worst.max(d);
    }
    Ok(worst)
}

fn check_frame_transform_dirac(s: &Scenario) -> CheckOutcome {
    let k = effective_contorsion(s, "frame-transform-dirac", 0)?;
    let phi = effective_transform(s, "frame-transform-dirac", 0);
    let psi = effective_spinor(s, "frame-transform-dirac");
    let params = DiracParams {
        mass: s.mass,
        rep: s.rep.clone(),
    };
    let r = frame_transform_dirac_check(&s.frame, &k, &phi, &psi, &params).map_err(err_str)?;
    Ok(r.defect())
}

fn check_metric_invariance(s: &Scenario) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for i in 0..DRAWS {
        let mut rng = randfields::rng_for(s.seed, "metric-invariance-vertical", i);
        let theta = randfields::theta_field(&mut rng, &s.chart, s.chart.dim(), 0.7);
        let sf = SpinElementField::from_theta_field(&theta, &s.rep).map_err(err_str)?;
        let e2 = change_trivialization(&s.frame, &sf, &s.rep).map_err(err_str)?;
        let g2 = induce_metric(&e2, &s.eta).map_err(err_str)?;
        worst = worst.max(s.metric.field().max_abs_diff(g2.field()));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::load_scenario_str;

    const FLAT: &str = r#"{
        "schema": 1,
        "signature": { "plus": 2, "minus": 0 },
        "chart": {
            "coords": ["x", "y"],
            "ranges": [[0.0, 1.0], [0.0, 1.0]],
            "samples": 5
        },
        "frame": [["1", "0"], ["0", "1"]],
        "mass": 1.0,
        "seed": 42
    }"#;

    const POLAR: &str = r#"{
        "schema": 1,
        "signature": { "plus": 2, "minus": 0 },
        "chart": {
            "coords": ["r", "th"],
            "ranges": [[1.0, 2.0], [0.2, 1.3]],
            "samples": 6
        },
        "frame": [["1", "0"], ["0", "1/r"]],
        "mass": 1.0,
        "seed": 42
    }"#;

    fn all_checks() -> Vec<String> {
        CHECK_NAMES.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parse_check_sets() {
        assert_eq!(parse_check_set("all").unwrap().len(), 13);
        assert_eq!(
            parse_check_set("h-lemma, k-lemma").unwrap(),
            vec!["h-lemma".to_string(), "k-lemma".to_string()]
        );
        assert!(parse_check_set("nope").is_err());
        assert!(parse_check_set("").is_err());
    }

    #[test]
    fn flat_scenario_passes_all_checks() {
        let s = load_scenario_str("flat", FLAT).unwrap();
        let report = run_checks(&s, &all_checks());
        assert!(report.overall_pass, "{}", report.to_pretty());
        assert_eq!(report.checks.len(), 13);
    }

    #[test]
    fn polar_scenario_with_seeded_fields_passes() {
        let s = load_scenario_str("polar", POLAR).unwrap();
        let report = run_checks(&s, &all_checks());
        assert!(report.overall_pass, "{}", report.to_pretty());
    }

    #[test]
    fn reports_are_byte_stable_for_fixed_seed() {
        let s = load_scenario_str("polar", POLAR).unwrap();
        let a = run_checks(&s, &all_checks()).to_json();
        let s2 = load_scenario_str("polar", POLAR).unwrap();
        let b = run_checks(&s2, &all_checks()).to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn fault_injection_is_detected_by_the_ktilde_check() {
        let s = load_scenario_str("polar", POLAR).unwrap();
        let which = vec!["ktilde-theorem".to_string()];
        let clean = run_checks(&s, &which);
        assert!(clean.overall_pass);
        let fault = KtildeFault {
            component: (0, 1, 1),
            epsilon: 1e-3,
        };
        let report = run_checks_with(&s, &which, Some(fault));
        let row = &report.checks[0];
        assert!(!row.pass, "corruption must fail the check");
        let defect = row.defect.unwrap();
        assert!(
            (defect / 1e-3) > 1.0 / 3.0 && (defect / 1e-3) < 3.0,
            "defect {defect:.3e} should sit within a factor 3 of the fault"
        );
    }

    #[test]
    fn check_subset_runs_only_requested_rows() {
        let s = load_scenario_str("flat", FLAT).unwrap();
        let which = parse_check_set("metric-induce,dirac-split").unwrap();
        let report = run_checks(&s, &which);
        assert_eq!(report.checks.len(), 2);
        assert_eq!(report.checks[0].name, "metric-induce");
        assert_eq!(report.checks[1].name, "dirac-split");
    }
}
