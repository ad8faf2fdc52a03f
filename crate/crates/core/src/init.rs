//! Seeded parameter initializers.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SeededRng;

/// Random (semi-)orthogonal matrix.
///
/// Draws a `max(rows, cols) × min(rows, cols)` standard normal matrix in
/// row-major order, takes its thin QR factorization and flips column signs
/// so that `diag(R) > 0`. The result is transposed when `rows < cols`, so
/// the Gram matrix over the smaller dimension is the identity.
pub fn init_orthogonal(rows: usize, cols: usize, seed: u64) -> Matrix {
    assert!(rows >= 1 && cols >= 1, "orthogonal init needs a non-empty shape");
    let tall = rows.max(cols);
    let narrow = rows.min(cols);
    let mut rng = SeededRng::new(seed);
    let draws: Vec<f64> = (0..tall * narrow).map(|_| rng.normal()).collect();
    let g = DMatrix::from_row_slice(tall, narrow, &draws);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..narrow {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if rows >= cols {
        Matrix::from_fn(rows, cols, |i, j| q[(i, j)])
    } else {
        Matrix::from_fn(rows, cols, |i, j| q[(j, i)])
    }
}

/// Entries uniform in `[-bound, bound]`.
pub fn init_uniform(rows: usize, cols: usize, bound: f64, seed: u64) -> Result<Matrix> {
    if !(bound > 0.0) {
        return Err(Error::invalid(format!("uniform bound must be positive, got {bound}")));
    }
    let mut rng = SeededRng::new(seed);
    Ok(Matrix::from_fn(rows, cols, |_, _| rng.uniform_range(-bound, bound)))
}

/// Glorot/Xavier uniform: bound `sqrt(6 / (rows + cols))`.
pub fn init_xavier(rows: usize, cols: usize, seed: u64) -> Matrix {
    let bound = xavier_bound(rows, cols);
    init_uniform(rows, cols, bound, seed).expect("xavier bound is positive")
}

pub fn xavier_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram_error(m: &Matrix) -> f64 {
        let g = if m.rows() >= m.cols() {
            m.transpose().matmul(m).unwrap()
        } else {
            m.matmul(&m.transpose()).unwrap()
        };
        g.sub(&Matrix::identity(g.rows())).unwrap().max_abs()
    }

    #[test]
    fn square_is_orthogonal() {
        assert!(gram_error(&init_orthogonal(4, 4, 3)) < 1e-10);
    }

    #[test]
    fn tall_and_wide_are_semi_orthogonal() {
        assert!(gram_error(&init_orthogonal(8, 4, 5)) < 1e-10);
        assert!(gram_error(&init_orthogonal(3, 7, 5)) < 1e-10);
        assert!(gram_error(&init_orthogonal(1, 1, 5)) < 1e-10);
    }

    #[test]
    fn large_square_is_orthogonal() {
        assert!(gram_error(&init_orthogonal(1024, 1024, 11)) < 1e-10);
        assert!(gram_error(&init_orthogonal(1024, 16, 11)) < 1e-10);
    }

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(init_orthogonal(5, 3, 9), init_orthogonal(5, 3, 9));
        assert_ne!(init_orthogonal(5, 3, 9), init_orthogonal(5, 3, 10));
        assert_eq!(init_uniform(2, 2, 0.01, 1).unwrap(), init_uniform(2, 2, 0.01, 1).unwrap());
        assert_eq!(init_xavier(3, 3, 1), init_xavier(3, 3, 1));
    }

    #[test]
    fn uniform_and_xavier_bounds() {
        assert!(init_uniform(2, 2, 0.01, 4).unwrap().max_abs() <= 0.01);
        assert!(init_xavier(3, 3, 4).max_abs() <= 1.0);
        assert!(init_uniform(2, 2, 0.0, 4).is_err());
    }
}
