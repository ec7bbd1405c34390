//! Cyclic Jacobi eigenvalue solver for small dense symmetric matrices.

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MAX_SWEEPS: usize = 100;
/// Convergence threshold on the off-diagonal Frobenius norm, relative to
/// `max(1, ||A||_F)`.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;

fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[[i, j]] * a[[i, j]];
            }
        }
    }
    s.sqrt()
}

/// All eigenvalues of the symmetric matrix `a`, ascending. Only the upper
/// triangle is trusted; the lower triangle is mirrored from it.
pub fn symmetric_eigenvalues(a: &Array2<f64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut m = a.clone();
    for i in 0..n {
        for j in 0..i {
            m[[i, j]] = m[[j, i]];
        }
    }
    let scale = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let tol = OFF_DIAGONAL_TOL * scale;

    let mut off = off_diagonal_norm(&m);
    let mut sweeps = 0;
    while off > tol {
        if sweeps == MAX_SWEEPS {
            return Err(Error::EigenNonConvergence {
                sweeps: MAX_SWEEPS,
                off_norm: off,
            });
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                // tan of the rotation angle, smaller root for stability
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = m[[k, p]];
                    let akq = m[[k, q]];
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    m[[k, p]] = new_kp;
                    m[[p, k]] = new_kp;
                    m[[k, q]] = new_kq;
                    m[[q, k]] = new_kq;
                }
                m[[p, p]] = app - t * apq;
                m[[q, q]] = aqq + t * apq;
                m[[p, q]] = 0.0;
                m[[q, p]] = 0.0;
            }
        }
        sweeps += 1;
        off = off_diagonal_norm(&m);
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}
