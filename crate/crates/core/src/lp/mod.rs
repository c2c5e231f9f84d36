mod entropic;
mod simplex;

pub use entropic::solve_entropic;
pub use simplex::solve_exact;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowSense {
    Eq,
    Le,
    Ge,
}

pub const DEFAULT_NONZERO_CAP: usize = 200_000;

/// Sparse LP: optimize c'x subject to row constraints and x >= lower_bounds.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    pub n_vars: usize,
    pub objective: Vec<f64>,
    pub sense: Sense,
    pub row_sense: Vec<RowSense>,
    pub rhs: Vec<f64>,
    /// (row, col, coefficient)
    pub triplets: Vec<(u32, u32, f64)>,
    pub lower_bounds: Vec<f64>,
    pub nonzero_cap: usize,
    /// Set only by the embedding builder; gates the entropic solver.
    pub(crate) embedding_shaped: bool,
}

impl LinearProgram {
    pub fn new(n_vars: usize, sense: Sense) -> LinearProgram {
        LinearProgram {
            n_vars,
            objective: vec![0.0; n_vars],
            sense,
            row_sense: Vec::new(),
            rhs: Vec::new(),
            triplets: Vec::new(),
            lower_bounds: vec![0.0; n_vars],
            nonzero_cap: DEFAULT_NONZERO_CAP,
            embedding_shaped: false,
        }
    }

    pub fn add_row(&mut self, sense: RowSense, rhs: f64, cols: &[(usize, f64)]) -> usize {
        let r = self.rhs.len();
        self.row_sense.push(sense);
        self.rhs.push(rhs);
        for &(j, a) in cols {
            debug_assert!(j < self.n_vars);
            if a != 0.0 {
                self.triplets.push((r as u32, j as u32, a));
            }
        }
        r
    }

    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_embedding_shaped(&self) -> bool {
        self.embedding_shaped
    }

    pub(crate) fn mark_embedding_shaped(&mut self) {
        self.embedding_shaped = true;
    }

    pub fn validate(&self) -> Result<()> {
        if self.triplets.len() > self.nonzero_cap {
            return Err(Error::SizeCapExceeded {
                nonzeros: self.triplets.len(),
                cap: self.nonzero_cap,
            });
        }
        for &(r, j, a) in &self.triplets {
            if r as usize >= self.n_rows() || j as usize >= self.n_vars || !a.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "bad triplet ({r}, {j}, {a})"
                )));
            }
        }
        if self.objective.len() != self.n_vars || self.lower_bounds.len() != self.n_vars {
            return Err(Error::InvalidInput(
                "objective/bounds length mismatch".into(),
            ));
        }
        if self
            .rhs
            .iter()
            .chain(self.objective.iter())
            .chain(self.lower_bounds.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput("non-finite coefficient".into()));
        }
        Ok(())
    }

    /// Debug dump in a sparse-triplet text format.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        writeln!(s, "vars {} rows {} sense {:?}", self.n_vars, self.n_rows(), self.sense).unwrap();
        for (j, c) in self.objective.iter().enumerate() {
            if *c != 0.0 {
                writeln!(s, "obj {j} {c:.17e}").unwrap();
            }
        }
        for (i, (rs, b)) in self.row_sense.iter().zip(&self.rhs).enumerate() {
            writeln!(s, "row {i} {rs:?} {b:.17e}").unwrap();
        }
        for (r, j, a) in &self.triplets {
            writeln!(s, "a {r} {j} {a:.17e}").unwrap();
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterReached,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    /// Row duals. Sign convention: for Min, Le rows have y <= 0 and Ge rows y >= 0;
    /// for Max all signs are flipped.
    pub duals: Vec<f64>,
    pub objective: f64,
    /// Farkas row multipliers, present iff Infeasible.
    pub farkas: Option<Vec<f64>>,
}

/// Row activities A x.
pub fn row_activity(prog: &LinearProgram, x: &[f64]) -> Vec<f64> {
    let mut act = vec![0.0; prog.n_rows()];
    for &(r, j, a) in &prog.triplets {
        act[r as usize] += a * x[j as usize];
    }
    act
}

/// Worst primal constraint/bound violation of x.
pub fn primal_residual(prog: &LinearProgram, x: &[f64]) -> f64 {
    let act = row_activity(prog, x);
    let mut worst: f64 = 0.0;
    for i in 0..prog.n_rows() {
        let v = match prog.row_sense[i] {
            RowSense::Eq => (act[i] - prog.rhs[i]).abs(),
            RowSense::Le => (act[i] - prog.rhs[i]).max(0.0),
            RowSense::Ge => (prog.rhs[i] - act[i]).max(0.0),
        };
        worst = worst.max(v);
    }
    for j in 0..prog.n_vars {
        worst = worst.max(prog.lower_bounds[j] - x[j]);
    }
    worst
}

/// Reduced costs c - A'y.
pub fn reduced_costs(prog: &LinearProgram, y: &[f64]) -> Vec<f64> {
    let mut r = prog.objective.clone();
    for &(i, j, a) in &prog.triplets {
        r[j as usize] -= a * y[i as usize];
    }
    r
}

/// Independent check of an infeasibility certificate: sense-adjusted y with
/// y'A <= 0 componentwise and y'b > y'A·lb.
pub fn verify_farkas(prog: &LinearProgram, y: &[f64]) -> bool {
    if y.len() != prog.n_rows() {
        return false;
    }
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale <= 0.0 || !scale.is_finite() {
        return false;
    }
    let tol = 1e-9 * scale;
    for i in 0..prog.n_rows() {
        match prog.row_sense[i] {
            RowSense::Le if y[i] > tol => return false,
            RowSense::Ge if y[i] < -tol => return false,
            _ => {}
        }
    }
    let mut yta = vec![0.0; prog.n_vars];
    for &(i, j, a) in &prog.triplets {
        yta[j as usize] += a * y[i as usize];
    }
    let mut gap: f64 = 0.0;
    for (j, v) in yta.iter().enumerate() {
        if *v > tol {
            return false;
        }
        gap -= v * prog.lower_bounds[j];
    }
    for i in 0..prog.n_rows() {
        gap += y[i] * prog.rhs[i];
    }
    gap > 1e-10 * scale
}
