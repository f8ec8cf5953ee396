//! Signature matrices, gamma-matrix representations of Cl(r, s), spin-group
//! elements and the two-to-one covering map onto the orthogonal group.
//!
//! The representation is the iterated tensor-product (Brauer-Weyl) one: build
//! the Euclidean generators from Pauli blocks, then multiply each generator
//! along a `-1` direction of the signature by the imaginary unit. The
//! convention for the signature matrix is `+1` block first, then `-1`.

use nalgebra::DMatrix;
use num_complex::Complex;
use thiserror::Error;

pub type CMatrix = DMatrix<Complex<f64>>;
pub type RMatrix = DMatrix<f64>;

/// Largest chart dimension we build a representation for; at m = 12 the
/// representation dimension k = 2^6 = 64 already saturates what the numerical
/// checks are meant for.
pub const MAX_DIM: usize = 12;

/// Tolerance below which the imaginary parts of an extracted orthogonal
/// matrix are considered numerical noise.
const COVERING_IMAG_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum CliffordError {
    #[error("signature must have m = plus + minus >= 1")]
    EmptySignature,
    #[error("chart dimension {0} exceeds the supported maximum {MAX_DIM}")]
    DimensionTooLarge(usize),
    #[error("theta must be antisymmetric (max |theta + theta^T| = {0:.3e})")]
    NotAntisymmetric(f64),
    #[error("theta must be {expected}x{expected}, got {rows}x{cols}")]
    BadThetaShape {
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("spin element is singular")]
    SingularElement,
    #[error("matrix is not in the spin group (max imaginary residue {0:.3e} in covering image)")]
    NotSpinGroup(f64),
}

/// Counts of +1 and -1 entries of the canonical signature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Signature {
    pub plus: usize,
    pub minus: usize,
}

impl Signature {
    pub fn new(plus: usize, minus: usize) -> Result<Self, CliffordError> {
        if plus + minus == 0 {
            return Err(CliffordError::EmptySignature);
        }
        Ok(Signature { plus, minus })
    }

    /// Chart dimension m = plus + minus.
    pub fn dim(&self) -> usize {
        self.plus + self.minus
    }

    /// Representation dimension k = 2^floor(m/2).
    pub fn rep_dim(&self) -> usize {
        1 << (self.dim() / 2)
    }
}

/// The canonical signature matrix: first `plus` diagonal entries +1, then
/// `minus` entries -1. Flipping the order only relabels frame indices.
pub fn build_eta(sig: Signature) -> RMatrix {
    let m = sig.dim();
    RMatrix::from_fn(m, m, |i, j| {
        if i != j {
            0.0
        } else if i < sig.plus {
            1.0
        } else {
            -1.0
        }
    })
}

/// A concrete gamma-matrix representation of Cl(r, s):
/// `gamma[a] * gamma[b] + gamma[b] * gamma[a] = 2 eta^{ab} I`.
#[derive(Debug, Clone)]
pub struct GammaRep {
    pub signature: Signature,
    /// Representation dimension.
    pub k: usize,
    gammas: Vec<CMatrix>,
    eta: RMatrix,
}

fn pauli() -> [CMatrix; 3] {
    let z = Complex::new(0.0, 0.0);
    let one = Complex::new(1.0, 0.0);
    let i = Complex::new(0.0, 1.0);
    [
        CMatrix::from_row_slice(2, 2, &[z, one, one, z]),
        CMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        CMatrix::from_row_slice(2, 2, &[one, z, z, -one]),
    ]
}

fn kron_chain(factors: &[&CMatrix]) -> CMatrix {
    let mut acc = CMatrix::identity(1, 1);
    for f in factors {
        acc = acc.kronecker(f);
    }
    acc
}

/// Euclidean generators: m Hermitian k x k matrices squaring to +I and
/// pairwise anticommuting, k = 2^floor(m/2).
fn euclidean_gammas(m: usize) -> Vec<CMatrix> {
    let [s1, s2, s3] = pauli();
    let id = CMatrix::identity(2, 2);
    let n = m / 2;
    let mut out = Vec::with_capacity(m);
    for j in 0..n {
        for s in [&s1, &s2] {
            let factors: Vec<&CMatrix> = (0..n)
                .map(|p| {
                    if p < j {
                        &s3
                    } else if p == j {
                        s
                    } else {
                        &id
                    }
                })
                .collect();
            out.push(kron_chain(&factors));
        }
    }
    if m % 2 == 1 {
        let factors: Vec<&CMatrix> = (0..n).map(|_| &s3).collect();
        out.push(kron_chain(&factors));
    }
    out
}

/// Builds the gamma representation for a signature. Deterministic: the same
/// signature yields bitwise-identical matrices.
pub fn build_gamma(sig: Signature) -> Result<GammaRep, CliffordError> {
    let m = sig.dim();
    if m == 0 {
        return Err(CliffordError::EmptySignature);
    }
    if m > MAX_DIM {
        return Err(CliffordError::DimensionTooLarge(m));
    }
    let mut gammas = euclidean_gammas(m);
    let i = Complex::new(0.0, 1.0);
    for g in gammas.iter_mut().skip(sig.plus) {
        *g *= i;
    }
    let rep = GammaRep {
        signature: sig,
        k: sig.rep_dim(),
        gammas,
        eta: build_eta(sig),
    };
    // Construction invariants; both are exact for the tensor-product build.
    let defect = rep.clifford_defect();
    assert!(
        defect < 1e-13,
        "clifford relation violated by construction: defect {defect:.3e}"
    );
    let tr_defect = rep.trace_orthogonality_defect();
    assert!(
        tr_defect < 1e-13,
        "trace orthogonality violated by construction: defect {tr_defect:.3e}"
    );
    Ok(rep)
}

impl GammaRep {
    pub fn gamma(&self, a: usize) -> &CMatrix {
        &self.gammas[a]
    }

    pub fn gammas(&self) -> &[CMatrix] {
        &self.gammas
    }

    pub fn eta(&self) -> &RMatrix {
        &self.eta
    }

    /// Diagonal entry eta_aa (= eta^aa).
    pub fn eta_diag(&self, a: usize) -> f64 {
        self.eta[(a, a)]
    }

    /// Lowered generator gamma_a = eta_ab gamma^b.
    pub fn gamma_lower(&self, a: usize) -> CMatrix {
        self.gammas[a].map(|c| c * Complex::new(self.eta_diag(a), 0.0))
    }

    /// max over a, b of the sup-norm of gamma^a gamma^b + gamma^b gamma^a - 2 eta^{ab} I.
    pub fn clifford_defect(&self) -> f64 {
        let m = self.signature.dim();
        let id = CMatrix::identity(self.k, self.k);
        let mut worst: f64 = 0.0;
        for a in 0..m {
            for b in 0..m {
                let anti = &self.gammas[a] * &self.gammas[b] + &self.gammas[b] * &self.gammas[a];
                let target = id.map(|c| c * Complex::new(2.0 * self.eta[(a, b)], 0.0));
                let d = (anti - target)
                    .iter()
                    .map(|c| c.norm())
                    .fold(0.0, f64::max);
                worst = worst.max(d);
            }
        }
        worst
    }

    /// max over a, b of |tr(gamma^a gamma^b) - k eta^{ab}|.
    pub fn trace_orthogonality_defect(&self) -> f64 {
        let m = self.signature.dim();
        let mut worst: f64 = 0.0;
        for a in 0..m {
            for b in 0..m {
                let tr: Complex<f64> = (&self.gammas[a] * &self.gammas[b]).trace();
                let target = Complex::new(self.k as f64 * self.eta[(a, b)], 0.0);
                worst = worst.max((tr - target).norm());
            }
        }
        worst
    }

    /// Vertical generator sigma^{ab} = (1/4)[gamma^a, gamma^b].
    pub fn sigma(&self, a: usize, b: usize) -> CMatrix {
        let c = &self.gammas[a] * &self.gammas[b] - &self.gammas[b] * &self.gammas[a];
        c.map(|x| x * Complex::new(0.25, 0.0))
    }

    /// Lowered generator sigma_{ab} = (1/4)[gamma_a, gamma_b].
    pub fn sigma_lower(&self, a: usize, b: usize) -> CMatrix {
        self.sigma(a, b)
            .map(|x| x * Complex::new(self.eta_diag(a) * self.eta_diag(b), 0.0))
    }
}

/// An element of the spin group in the chosen representation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinElement {
    matrix: CMatrix,
}

impl SpinElement {
    pub fn identity(k: usize) -> Self {
        SpinElement {
            matrix: CMatrix::identity(k, k),
        }
    }

    /// Wraps a raw matrix without checking group membership; `covering_map`
    /// rejects matrices outside the spin group.
    pub fn from_matrix(matrix: CMatrix) -> Self {
        SpinElement { matrix }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn negate(&self) -> Self {
        SpinElement {
            matrix: self.matrix.map(|c| -c),
        }
    }

    pub fn compose(&self, other: &SpinElement) -> Self {
        SpinElement {
            matrix: &self.matrix * &other.matrix,
        }
    }

    pub fn inverse(&self) -> Result<Self, CliffordError> {
        self.matrix
            .clone()
            .try_inverse()
            .map(|m| SpinElement { matrix: m })
            .ok_or(CliffordError::SingularElement)
    }
}

fn sup_norm(m: &CMatrix) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Dense matrix exponential by scaling and squaring with a truncated series.
pub fn matrix_exp(x: &CMatrix) -> CMatrix {
    let norm = sup_norm(x);
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = x.map(|c| c / Complex::new(2f64.powi(s as i32), 0.0));
    let k = x.nrows();
    let mut sum = CMatrix::identity(k, k);
    let mut term = CMatrix::identity(k, k);
    for j in 1..=40 {
        term = (&term * &scaled).map(|c| c / Complex::new(j as f64, 0.0));
        sum += &term;
        if sup_norm(&term) < 1e-20 {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// S = exp((1/2) theta_ab sigma^{ab}) for an antisymmetric real parameter
/// matrix theta.
pub fn spin_exp(rep: &GammaRep, theta: &RMatrix) -> Result<SpinElement, CliffordError> {
    let m = rep.signature.dim();
    if theta.nrows() != m || theta.ncols() != m {
        return Err(CliffordError::BadThetaShape {
            expected: m,
            rows: theta.nrows(),
            cols: theta.ncols(),
        });
    }
    let asym = (theta + theta.transpose())
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if asym > 1e-12 {
        return Err(CliffordError::NotAntisymmetric(asym));
    }
    let mut x = CMatrix::zeros(rep.k, rep.k);
    for a in 0..m {
        for b in 0..m {
            let c = theta[(a, b)];
            if c != 0.0 {
                x += rep.sigma(a, b).map(|v| v * Complex::new(0.5 * c, 0.0));
            }
        }
    }
    Ok(SpinElement {
        matrix: matrix_exp(&x),
    })
}

/// Extracts the orthogonal matrix L with S^{-1} gamma^a S = L^a_c gamma^c via
/// trace orthogonality, L^a_c = (1/k) eta_{cb} tr(gamma^b S^{-1} gamma^a S).
///
/// Fails if the extracted matrix has imaginary parts above tolerance, which
/// signals that S is not in the spin group.
pub fn covering_map(rep: &GammaRep, s: &SpinElement) -> Result<RMatrix, CliffordError> {
    let m = rep.signature.dim();
    let s_inv = s.inverse()?;
    let kf = rep.k as f64;
    let mut l = RMatrix::zeros(m, m);
    let mut max_imag: f64 = 0.0;
    for a in 0..m {
        let conj = s_inv.matrix() * &rep.gammas[a] * s.matrix();
        for c in 0..m {
            let tr: Complex<f64> = (&rep.gammas[c] * &conj).trace();
            let entry = tr * Complex::new(rep.eta_diag(c) / kf, 0.0);
            max_imag = max_imag.max(entry.im.abs());
            l[(a, c)] = entry.re;
        }
    }
    if max_imag > COVERING_IMAG_TOL {
        return Err(CliffordError::NotSpinGroup(max_imag));
    }
    Ok(l)
}

/// ||L^T eta L - eta||_inf, zero for elements of O(r, s).
pub fn eta_orthogonality_defect(eta: &RMatrix, l: &RMatrix) -> f64 {
    (l.transpose() * eta * l - eta)
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
}
