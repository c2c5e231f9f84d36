//! Entropic relaxation of embedding-shaped programs: minimize
//! c'u + eps * sum(u log u - u) subject to A u = b, u >= 0, solved by cyclic
//! Newton ascent on the smooth dual (a generalization of Sinkhorn scaling).

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpSolution, LpStatus, RowSense, Sense};

const EXP_CAP: f64 = 500.0;

pub fn solve_entropic(
    prog: &LinearProgram,
    eps: f64,
    max_iter: usize,
    tol: f64,
) -> Result<LpSolution> {
    if !prog.is_embedding_shaped()
        || prog.sense != Sense::Min
        || prog.row_sense.iter().any(|s| *s != RowSense::Eq)
        || prog.lower_bounds.iter().any(|&l| l != 0.0)
    {
        return Err(Error::NotEmbeddingShaped);
    }
    prog.validate()?;
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be > 0, got {eps}")));
    }

    let m = prog.n_rows();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for &(r, j, a) in &prog.triplets {
        rows[r as usize].push((j as usize, a));
    }

    // score_j = (A'y - c)_j; u_j = exp(score_j / eps)
    let mut y = vec![0.0; m];
    let mut score: Vec<f64> = prog.objective.iter().map(|c| -c).collect();
    let mut u: Vec<f64> = score
        .iter()
        .map(|s| ((s / eps).min(EXP_CAP)).exp())
        .collect();

    let mut residual = f64::INFINITY;
    for _sweep in 0..max_iter {
        for i in 0..m {
            if rows[i].is_empty() {
                continue;
            }
            // Newton steps on the row coordinate of the dual.
            let mut delta = 0.0;
            for _ in 0..8 {
                let mut s = 0.0;
                let mut hess = 0.0;
                for &(j, a) in &rows[i] {
                    let uj = (((score[j] + a * delta) / eps).min(EXP_CAP)).exp();
                    s += a * uj;
                    hess += a * a * uj / eps;
                }
                let g = prog.rhs[i] - s;
                if g.abs() <= 0.05 * tol * (1.0 + prog.rhs[i].abs()) {
                    break;
                }
                let step = if hess > 1e-300 {
                    (g / hess).clamp(-50.0 * eps, 50.0 * eps)
                } else if g > 0.0 {
                    50.0 * eps
                } else {
                    -50.0 * eps
                };
                delta += step;
            }
            if delta != 0.0 {
                y[i] += delta;
                for &(j, a) in &rows[i] {
                    score[j] += a * delta;
                    u[j] = ((score[j] / eps).min(EXP_CAP)).exp();
                }
            }
        }
        residual = 0.0;
        let mut act = vec![0.0; m];
        for &(r, j, a) in &prog.triplets {
            act[r as usize] += a * u[j as usize];
        }
        for i in 0..m {
            residual = residual.max((act[i] - prog.rhs[i]).abs());
        }
        if residual <= tol {
            let objective: f64 = prog.objective.iter().zip(&u).map(|(c, v)| c * v).sum();
            return Ok(LpSolution {
                status: LpStatus::Optimal,
                primal: u,
                duals: y,
                objective,
                farkas: None,
            });
        }
        if !residual.is_finite() {
            break;
        }
    }
    let objective: f64 = prog.objective.iter().zip(&u).map(|(c, v)| c * v).sum();
    let _ = residual;
    Ok(LpSolution {
        status: LpStatus::MaxIterReached,
        primal: u,
        duals: y,
        objective,
        farkas: None,
    })
}
