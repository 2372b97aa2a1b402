use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Solution of a dense system with its 1-norm condition estimate.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    pub x: DVector<f64>,
    pub condition: f64,
    pub relative_residual: f64,
}

pub const MAX_CONDITION: f64 = 1e12;

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// LU solve with one step of iterative refinement and an exact 1-norm
/// condition number (through the explicit inverse; systems here are ≤ a few
/// thousand unknowns).
pub fn solve_dense(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DenseSolution> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::domain(format!(
            "solve_dense: shape mismatch {}x{} vs {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let lu = a.clone().lu();
    let inverse = lu
        .try_inverse()
        .ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    let condition = norm1(a) * norm1(&inverse);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::IllConditioned { condition });
    }
    let mut x = lu
        .solve(b)
        .ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    let r = b - a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    let bn = inf_norm(b);
    let relative_residual = if bn > 0.0 {
        inf_norm(&(b - a * &x)) / bn
    } else {
        inf_norm(&(a * &x))
    };
    Ok(DenseSolution {
        x,
        condition,
        relative_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_diagonal() {
        let b = DVector::from_vec(vec![1.0, -2.0, 3.5]);
        let s = solve_dense(&DMatrix::identity(3, 3), &b).unwrap();
        assert_eq!(s.x, b);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let s = solve_dense(&a, &DVector::from_vec(vec![2.0, 8.0])).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-15 && (s.x[1] - 2.0).abs() < 1e-15);
        assert!((s.condition - 2.0).abs() < 1e-12);
    }

    #[test]
    fn random_spd_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 50;
        let g = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        let a = &g * g.transpose() + DMatrix::identity(n, n) * 0.5;
        let b = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let s = solve_dense(&a, &b).unwrap();
        assert!(s.relative_residual <= 1e-10);
        let direct = inf_norm(&(&b - &a * &s.x)) / inf_norm(&b);
        assert!(direct <= 1e-10);
    }

    #[test]
    fn singular_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let err = solve_dense(&a, &DVector::from_vec(vec![1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::IllConditioned { .. }));
    }
}
