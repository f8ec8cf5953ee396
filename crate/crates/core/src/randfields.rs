//! Seeded random smooth fields for the randomized identity checks: low-order
//! polynomial/trig expressions with coefficients in [-1, 1] (scaled), built
//! deterministically from a ChaCha stream so reports are reproducible.

use crate::chart::{Chart, Field, FieldError, TransformField};
use crate::connection::{ContorsionField, TorsionField};
use crate::fieldlang::{BinOp, Expr, FieldDef, Func};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Derives an independent, purpose-tagged stream from a base seed, so that
/// adding or reordering checks does not shift the fields other checks see.
pub fn rng_for(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// c0 + sum_i (c_i sin x_i or c_i cos x_i) + one cross term: smooth, with
/// derivatives bounded by the coefficient amplitude.
pub fn smooth_scalar(rng: &mut ChaCha8Rng, n_coords: usize, amp: f64) -> Expr {
    let mut e = Expr::Num(rng.gen_range(-amp..amp));
    for i in 0..n_coords {
        let c = rng.gen_range(-amp..amp);
        let trig = if rng.gen_bool(0.5) { Func::Sin } else { Func::Cos };
        let term = Expr::Bin(
            BinOp::Mul,
            Box::new(Expr::Num(c)),
            Box::new(Expr::Call(trig, vec![Expr::Coord(i)])),
        );
        e = Expr::Bin(BinOp::Add, Box::new(e), Box::new(term));
    }
    if n_coords >= 2 {
        let i = rng.gen_range(0..n_coords);
        let mut j = rng.gen_range(0..n_coords);
        if j == i {
            j = (j + 1) % n_coords;
        }
        let c = rng.gen_range(-amp..amp);
        let cross = Expr::Bin(
            BinOp::Mul,
            Box::new(Expr::Num(c)),
            Box::new(Expr::Bin(
                BinOp::Mul,
                Box::new(Expr::Call(Func::Sin, vec![Expr::Coord(i)])),
                Box::new(Expr::Call(Func::Cos, vec![Expr::Coord(j)])),
            )),
        );
        e = Expr::Bin(BinOp::Add, Box::new(e), Box::new(cross));
    }
    e
}

fn smooth_field(
    rng: &mut ChaCha8Rng,
    chart: &Arc<Chart>,
    shape: Vec<usize>,
    amp: f64,
    context: &str,
) -> Result<Field, FieldError> {
    let n: usize = shape.iter().product();
    let exprs: Vec<Expr> = (0..n)
        .map(|_| smooth_scalar(rng, chart.dim(), amp))
        .collect();
    let def = FieldDef::new(chart.coords().to_vec(), shape, exprs);
    Field::from_def(chart, &def, context)
}

/// A random valid contorsion field (antisymmetrized in its first index pair).
pub fn contorsion(rng: &mut ChaCha8Rng, chart: &Arc<Chart>, amp: f64) -> ContorsionField {
    let m = chart.dim();
    let raw = smooth_field(rng, chart, vec![m, m, m], amp, "random contorsion")
        .expect("bounded trig fields are finite");
    ContorsionField::antisymmetrize(raw)
        .expect("shape is correct")
        .0
}

/// A random torsion tensor (antisymmetrized in its lower index pair).
pub fn torsion(rng: &mut ChaCha8Rng, chart: &Arc<Chart>, amp: f64) -> TorsionField {
    let m = chart.dim();
    let raw = smooth_field(rng, chart, vec![m, m, m], amp, "random torsion")
        .expect("bounded trig fields are finite");
    TorsionField::antisymmetrize(raw).expect("shape is correct").0
}

/// A random pointwise-invertible spin-frame transformation, built as the
/// identity plus a smooth perturbation and redrawn until the determinant is
/// safely bounded away from zero on the grid.
pub fn transform(rng: &mut ChaCha8Rng, chart: &Arc<Chart>) -> TransformField {
    let m = chart.dim();
    let amp = 0.4 / m as f64;
    loop {
        let mut exprs = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                let mut e = smooth_scalar(rng, chart.dim(), amp);
                if i == j {
                    e = Expr::Bin(BinOp::Add, Box::new(Expr::Num(1.0)), Box::new(e));
                }
                exprs.push(e);
            }
        }
        let def = FieldDef::new(chart.coords().to_vec(), vec![m, m], exprs);
        let field = Field::from_def(chart, &def, "random transformation")
            .expect("bounded trig fields are finite");
        let min_det = (0..chart.grid_len())
            .map(|flat| field.mat_at(flat).determinant().abs())
            .fold(f64::INFINITY, f64::min);
        if min_det > 0.05 {
            if let Ok(phi) = TransformField::new(field) {
                return phi;
            }
        }
    }
}

/// A random antisymmetric spin-parameter field theta_ab(x).
pub fn theta_field(rng: &mut ChaCha8Rng, chart: &Arc<Chart>, m: usize, amp: f64) -> Field {
    let zero = Expr::Num(0.0);
    let mut exprs = vec![zero; m * m];
    for a in 0..m {
        for b in (a + 1)..m {
            let e = smooth_scalar(rng, chart.dim(), amp);
            exprs[a * m + b] = e.clone();
            exprs[b * m + a] = Expr::Neg(Box::new(e));
        }
    }
    let def = FieldDef::new(chart.coords().to_vec(), vec![m, m], exprs);
    Field::from_def(chart, &def, "random theta").expect("bounded trig fields are finite")
}

/// Random spinor component expressions: k (re, im) pairs with an offset on
/// the real parts so the field is not accidentally near zero.
pub fn spinor_exprs(rng: &mut ChaCha8Rng, n_coords: usize, k: usize) -> Vec<(Expr, Expr)> {
    (0..k)
        .map(|_| {
            let re = Expr::Bin(
                BinOp::Add,
                Box::new(Expr::Num(0.5)),
                Box::new(smooth_scalar(rng, n_coords, 0.8)),
            );
            let im = smooth_scalar(rng, n_coords, 0.8);
            (re, im)
        })
        .collect()
}
