//! Two-phase revised simplex with a dense-LU basis, product-form updates,
//! lowest-index tie-breaking, and Farkas certificates from phase 1.

use crate::error::{Error, Result};
use crate::lp::{
    primal_residual, reduced_costs, verify_farkas, LinearProgram, LpSolution, LpStatus, RowSense,
    Sense,
};

const TOL_DUAL: f64 = 1e-10;
const TOL_PIVOT: f64 = 1e-9;
const TOL_ZERO: f64 = 1e-13;
const REFACTOR_EVERY: usize = 60;
const STALL_WINDOW: usize = 60;

pub fn solve_exact(prog: &LinearProgram) -> Result<LpSolution> {
    prog.validate()?;

    // Presolve: empty rows are dropped or certify infeasibility outright.
    let mut kept_rows = Vec::new();
    {
        let mut has_entry = vec![false; prog.n_rows()];
        let mut shift = vec![0.0; prog.n_rows()]; // A·lb contribution per row
        for &(r, j, a) in &prog.triplets {
            has_entry[r as usize] = true;
            shift[r as usize] += a * prog.lower_bounds[j as usize];
        }
        for i in 0..prog.n_rows() {
            if has_entry[i] {
                kept_rows.push(i);
                continue;
            }
            let b = prog.rhs[i];
            let bad = match prog.row_sense[i] {
                RowSense::Eq => b.abs() > 1e-12,
                RowSense::Le => b < -1e-12,
                RowSense::Ge => b > 1e-12,
            };
            if bad {
                let mut y = vec![0.0; prog.n_rows()];
                y[i] = match prog.row_sense[i] {
                    RowSense::Le => -1.0,
                    _ => b.signum(),
                };
                debug_assert!(verify_farkas(prog, &y));
                return Ok(LpSolution {
                    status: LpStatus::Infeasible,
                    primal: vec![0.0; prog.n_vars],
                    duals: vec![0.0; prog.n_rows()],
                    objective: f64::NAN,
                    farkas: Some(y),
                });
            }
        }
    }

    // One retry with aggressive refactorization before giving up.
    let stats = std::env::var_os("SKEMBED_LP_STATS").is_some();
    let first = match solve_inner(prog, &kept_rows, REFACTOR_EVERY) {
        Ok(sol) => match check(prog, &sol) {
            Ok(()) => return Ok(sol),
            Err(e) => e,
        },
        Err(e) => e,
    };
    if stats {
        eprintln!("lp-stats: first attempt failed ({first}), retrying");
    }
    let sol = solve_inner(prog, &kept_rows, 10)?;
    check(prog, &sol).map_err(|_| first)?;
    Ok(sol)
}

fn check(prog: &LinearProgram, sol: &LpSolution) -> Result<()> {
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            let y = sol.farkas.as_ref().ok_or_else(|| {
                Error::NumericalBreakdown("infeasible without certificate".into())
            })?;
            if !verify_farkas(prog, y) {
                return Err(Error::NumericalBreakdown(
                    "Farkas certificate failed verification".into(),
                ));
            }
            return Ok(());
        }
        _ => return Ok(()),
    }
    let bscale = 1.0 + prog.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if primal_residual(prog, &sol.primal) > 1e-9 * bscale {
        return Err(Error::NumericalBreakdown("primal residual too large".into()));
    }
    let r = reduced_costs(prog, &sol.duals);
    let cscale = 1.0 + prog.objective.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut dual_obj = 0.0;
    for i in 0..prog.n_rows() {
        dual_obj += sol.duals[i] * prog.rhs[i];
    }
    for j in 0..prog.n_vars {
        let ok = match prog.sense {
            Sense::Min => r[j] >= -1e-9 * cscale,
            Sense::Max => r[j] <= 1e-9 * cscale,
        };
        if !ok {
            return Err(Error::NumericalBreakdown("dual residual too large".into()));
        }
        dual_obj += r[j] * prog.lower_bounds[j];
        if ((sol.primal[j] - prog.lower_bounds[j]) * r[j]).abs() > 1e-8 * cscale * bscale {
            return Err(Error::NumericalBreakdown(
                "complementary slackness violated".into(),
            ));
        }
    }
    if (sol.objective - dual_obj).abs() > 1e-8 * (1.0 + sol.objective.abs()) {
        return Err(Error::NumericalBreakdown("duality gap too large".into()));
    }
    Ok(())
}

/// Standardized equality form over kept rows: min c'x, A x = b, x >= 0,
/// after the lower-bound shift, slack insertion, and b >= 0 row scaling.
struct Standard {
    m: usize,
    n_structural: usize,
    n_cols: usize, // structural + slack
    cols: Vec<Vec<(usize, f64)>>,
    cost: Vec<f64>,
    b: Vec<f64>,
    row_sign: Vec<f64>,
}

fn standardize(prog: &LinearProgram, kept_rows: &[usize]) -> Standard {
    let m = kept_rows.len();
    let mut row_pos = vec![usize::MAX; prog.n_rows()];
    for (p, &i) in kept_rows.iter().enumerate() {
        row_pos[i] = p;
    }

    let flip = match prog.sense {
        Sense::Min => 1.0,
        Sense::Max => -1.0,
    };
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); prog.n_vars];
    let mut b: Vec<f64> = kept_rows.iter().map(|&i| prog.rhs[i]).collect();
    for &(r, j, a) in &prog.triplets {
        let p = row_pos[r as usize];
        if p != usize::MAX {
            cols[j as usize].push((p, a));
            b[p] -= a * prog.lower_bounds[j as usize];
        }
    }
    for c in &mut cols {
        c.sort_unstable_by_key(|e| e.0);
        // merge duplicate (row, col) triplets
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(c.len());
        for &(p, a) in c.iter() {
            match merged.last_mut() {
                Some(last) if last.0 == p => last.1 += a,
                _ => merged.push((p, a)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        *c = merged;
    }
    let mut cost: Vec<f64> = prog.objective.iter().map(|c| c * flip).collect();

    // slack columns
    for (p, &i) in kept_rows.iter().enumerate() {
        match prog.row_sense[i] {
            RowSense::Eq => {}
            RowSense::Le => {
                cols.push(vec![(p, 1.0)]);
                cost.push(0.0);
            }
            RowSense::Ge => {
                cols.push(vec![(p, -1.0)]);
                cost.push(0.0);
            }
        }
    }

    // scale rows so b >= 0
    let mut row_sign = vec![1.0; m];
    for p in 0..m {
        if b[p] < 0.0 {
            b[p] = -b[p];
            row_sign[p] = -1.0;
        }
    }
    for c in &mut cols {
        for e in c.iter_mut() {
            e.1 *= row_sign[e.0];
        }
    }

    let n_cols = cols.len();
    Standard {
        m,
        n_structural: prog.n_vars,
        n_cols,
        cols,
        cost,
        b,
        row_sign,
    }
}

/// Column-major dense LU with partial pivoting. One factorization serves both
/// B x = b and B' y = c solves via unit-stride column sweeps.
struct DenseLu {
    m: usize,
    a: Vec<f64>, // packed L (unit diagonal) and U, column-major
    piv: Vec<usize>,
    min_diag: f64,
}

impl DenseLu {
    fn factor(mut a: Vec<f64>, m: usize) -> DenseLu {
        let mut piv = vec![0usize; m];
        let mut min_diag = f64::INFINITY;
        for k in 0..m {
            let col = &a[k * m..(k + 1) * m];
            let mut p = k;
            let mut best = col[k].abs();
            for (i, v) in col.iter().enumerate().skip(k + 1) {
                if v.abs() > best {
                    best = v.abs();
                    p = i;
                }
            }
            piv[k] = p;
            if p != k {
                for j in 0..m {
                    a.swap(j * m + k, j * m + p);
                }
            }
            let d = a[k * m + k];
            min_diag = min_diag.min(d.abs());
            if d.abs() <= TOL_ZERO {
                continue;
            }
            let inv = 1.0 / d;
            for i in k + 1..m {
                a[k * m + i] *= inv;
            }
            let (head, tail) = a.split_at_mut((k + 1) * m);
            let lcol = &head[k * m + k + 1..(k + 1) * m];
            for cj in tail.chunks_exact_mut(m) {
                let f = cj[k];
                if f != 0.0 {
                    for (i, l) in lcol.iter().enumerate() {
                        cj[k + 1 + i] -= f * l;
                    }
                }
            }
        }
        DenseLu {
            m,
            a,
            piv,
            min_diag,
        }
    }

    /// In-place solve of B x = b.
    fn solve(&self, b: &mut [f64]) {
        let m = self.m;
        for k in 0..m {
            b.swap(k, self.piv[k]);
        }
        for k in 0..m {
            let xk = b[k];
            if xk != 0.0 {
                let col = &self.a[k * m..(k + 1) * m];
                for i in k + 1..m {
                    b[i] -= col[i] * xk;
                }
            }
        }
        for k in (0..m).rev() {
            let col = &self.a[k * m..(k + 1) * m];
            b[k] /= col[k];
            let xk = b[k];
            if xk != 0.0 {
                for i in 0..k {
                    b[i] -= col[i] * xk;
                }
            }
        }
    }

    /// In-place solve of B' y = c (transpose system).
    fn solve_t(&self, c: &mut [f64]) {
        let m = self.m;
        for k in 0..m {
            let col = &self.a[k * m..(k + 1) * m];
            let mut s = c[k];
            for j in 0..k {
                s -= col[j] * c[j];
            }
            c[k] = s / col[k];
        }
        for k in (0..m).rev() {
            let col = &self.a[k * m..(k + 1) * m];
            let mut s = c[k];
            for j in k + 1..m {
                s -= col[j] * c[j];
            }
            c[k] = s;
        }
        for k in (0..m).rev() {
            c.swap(k, self.piv[k]);
        }
    }
}

struct Basis {
    lu: DenseLu,
    etas: Vec<(usize, Vec<f64>)>,
}

impl Basis {
    fn factor(st: &Standard, basis: &[usize], artificial_base: usize) -> Result<Basis> {
        let m = st.m;
        let mut a = vec![0.0; m * m];
        for (p, &j) in basis.iter().enumerate() {
            if j >= artificial_base {
                a[p * m + (j - artificial_base)] = 1.0;
            } else {
                for &(r, v) in &st.cols[j] {
                    a[p * m + r] = v;
                }
            }
        }
        let lu = DenseLu::factor(a, m);
        if !(lu.min_diag > TOL_ZERO) {
            return Err(Error::NumericalBreakdown("singular basis matrix".into()));
        }
        Ok(Basis {
            lu,
            etas: Vec::new(),
        })
    }

    fn ftran(&self, v: &[f64]) -> Vec<f64> {
        let mut x = v.to_vec();
        self.lu.solve(&mut x);
        for (r, d) in &self.etas {
            let t = x[*r] / d[*r];
            for (i, di) in d.iter().enumerate() {
                x[i] -= t * di;
            }
            x[*r] = t;
        }
        x
    }

    fn btran(&self, v: &[f64]) -> Vec<f64> {
        let mut w = v.to_vec();
        for (r, d) in self.etas.iter().rev() {
            let mut s = 0.0;
            for (i, di) in d.iter().enumerate() {
                if i != *r {
                    s += di * w[i];
                }
            }
            w[*r] = (w[*r] - s) / d[*r];
        }
        self.lu.solve_t(&mut w);
        w
    }
}

enum LoopEnd {
    Optimal,
    Unbounded,
}

struct Engine<'a> {
    st: &'a Standard,
    artificial_base: usize,
    basis: Vec<usize>,
    in_basis: Vec<bool>, // length n_cols + m (artificials at the end)
    b: Vec<f64>,         // active right-hand side (perturbed during phase 1)
    xb: Vec<f64>,
    fac: Basis,
    refactor_every: usize,
    bscale: f64,
    /// Columns whose fresh-factorization pivots were all noise-level; skipped
    /// until the next refactorization.
    banned: Vec<bool>,
}

const PIVOT_MIN: f64 = 1e-7;

impl<'a> Engine<'a> {
    fn col(&self, j: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.st.m];
        if j >= self.artificial_base {
            v[j - self.artificial_base] = 1.0;
        } else {
            for &(r, a) in &self.st.cols[j] {
                v[r] = a;
            }
        }
        v
    }

    fn refactor(&mut self) -> Result<()> {
        match Basis::factor(self.st, &self.basis, self.artificial_base) {
            Ok(f) => self.fac = f,
            Err(_) => self.repair()?,
        }
        self.xb = self.fac.ftran(&self.b);
        self.banned.iter_mut().for_each(|b| *b = false);
        Ok(())
    }

    /// Recover from a numerically singular basis: find the dependent basic
    /// columns by column-ordered elimination with row pivoting, swap each for
    /// the artificial of an uncovered row, and refactorize.
    fn repair(&mut self) -> Result<()> {
        let m = self.st.m;
        // column-major dense copy of the basis matrix
        let mut a = vec![0.0; m * m];
        let mut scale = 0.0f64;
        for (p, &j) in self.basis.iter().enumerate() {
            for (r, v) in self.col(j).into_iter().enumerate() {
                a[p * m + r] = v;
                scale = scale.max(v.abs());
            }
        }
        let eps = 1e-9 * (1.0 + scale);
        let mut row_used = vec![false; m];
        let mut dependent = Vec::new();
        for p in 0..m {
            let mut piv = 0.0f64;
            let mut piv_row = usize::MAX;
            for r in 0..m {
                if !row_used[r] && a[p * m + r].abs() > piv {
                    piv = a[p * m + r].abs();
                    piv_row = r;
                }
            }
            if piv <= eps {
                dependent.push(p);
                continue;
            }
            row_used[piv_row] = true;
            let d = a[p * m + piv_row];
            for q in p + 1..m {
                let f = a[q * m + piv_row] / d;
                if f != 0.0 {
                    for r in 0..m {
                        a[q * m + r] -= f * a[p * m + r];
                    }
                }
            }
        }
        if dependent.is_empty() {
            return Err(Error::NumericalBreakdown("singular basis matrix".into()));
        }
        if std::env::var_os("SKEMBED_LP_STATS").is_some() {
            eprintln!("lp-stats: basis repair, {} columns replaced", dependent.len());
        }
        let mut free_rows = (0..m).filter(|&r| !row_used[r]);
        for p in dependent {
            let r = free_rows
                .by_ref()
                .find(|&r| !self.in_basis[self.artificial_base + r])
                .ok_or_else(|| Error::NumericalBreakdown("basis repair failed".into()))?;
            self.in_basis[self.basis[p]] = false;
            self.in_basis[self.artificial_base + r] = true;
            self.basis[p] = self.artificial_base + r;
        }
        self.fac = Basis::factor(self.st, &self.basis, self.artificial_base)?;
        Ok(())
    }

    /// Pivot artificials back in to absorb negative basic values left by a
    /// perturbed warm start; the primal loop never repairs rows it cannot
    /// reach with a positive pivot.
    fn restore_feasibility(&mut self) -> Result<()> {
        let tol = 1e-9 * (1.0 + self.bscale);
        for _ in 0..2 * self.st.m {
            let mut p_bad = None;
            let mut worst = -tol;
            for p in 0..self.st.m {
                if self.xb[p] < worst {
                    worst = self.xb[p];
                    p_bad = Some(p);
                }
            }
            let Some(p) = p_bad else { return Ok(()) };
            let mut e = vec![0.0; self.st.m];
            e[p] = 1.0;
            let rho = self.fac.btran(&e);
            let mut q = None;
            let mut best = -PIVOT_MIN;
            for r in 0..self.st.m {
                let j = self.artificial_base + r;
                if !self.in_basis[j] && rho[r] < best {
                    best = rho[r];
                    q = Some(j);
                }
            }
            let Some(q) = q else {
                return Err(Error::NumericalBreakdown(
                    "feasibility restoration failed".into(),
                ));
            };
            let w = self.fac.ftran(&self.col(q));
            let theta = self.xb[p] / w[p];
            for i in 0..self.st.m {
                self.xb[i] -= theta * w[i];
            }
            self.xb[p] = theta;
            self.in_basis[self.basis[p]] = false;
            self.in_basis[q] = true;
            self.basis[p] = q;
            self.fac.etas.push((p, w));
            if self.fac.etas.len() >= self.refactor_every {
                self.refactor()?;
            }
        }
        Err(Error::NumericalBreakdown(
            "feasibility restoration failed".into(),
        ))
    }

    /// Price all allowed nonbasic columns; returns the entering column or None.
    fn price(&self, cost: &[f64], y: &[f64], bland: bool, allow_artificial: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        let total = self.artificial_base + self.st.m;
        for j in 0..total {
            if self.in_basis[j] || self.banned[j] {
                continue;
            }
            if j >= self.artificial_base && !allow_artificial {
                continue;
            }
            let cj = if j >= self.artificial_base {
                cost.get(self.st.n_cols + (j - self.artificial_base)).copied().unwrap_or(f64::INFINITY)
            } else {
                cost[j]
            };
            if !cj.is_finite() {
                continue;
            }
            let mut r = cj;
            if j >= self.artificial_base {
                r -= y[j - self.artificial_base];
            } else {
                for &(row, a) in &self.st.cols[j] {
                    r -= a * y[row];
                }
            }
            if r < -TOL_DUAL {
                if bland {
                    return Some(j);
                }
                match best {
                    Some((_, rb)) if r >= rb - 1e-12 => {}
                    _ => best = Some((j, r)),
                }
            }
        }
        best.map(|(j, _)| j)
    }

    /// Harris two-pass ratio test: bound the step with basic values relaxed
    /// by the feasibility tolerance, then take the largest admissible pivot
    /// (lowest basis index under Bland). The relaxation keeps noise-level
    /// basic values from forcing noise-level pivots.
    fn ratio_test(&self, w: &[f64], bland: bool) -> Option<usize> {
        let delta = 1e-9 * (1.0 + self.bscale);
        let mut theta_max = f64::INFINITY;
        for p in 0..self.st.m {
            if w[p] > TOL_PIVOT {
                theta_max = theta_max.min((self.xb[p].max(0.0) + delta) / w[p]);
            }
        }
        if !theta_max.is_finite() {
            return None;
        }
        let mut leave: Option<usize> = None;
        for p in 0..self.st.m {
            if w[p] > TOL_PIVOT && self.xb[p].max(0.0) / w[p] <= theta_max {
                let better = match leave {
                    None => true,
                    Some(cur) => {
                        if bland {
                            self.basis[p] < self.basis[cur]
                        } else {
                            w[p] > w[cur]
                        }
                    }
                };
                if better {
                    leave = Some(p);
                }
            }
        }
        leave
    }

    fn run(&mut self, cost: &[f64], allow_artificial: bool) -> Result<LoopEnd> {
        let max_iter = 200 * (self.st.m + self.st.n_cols) + 20_000;
        let stats = std::env::var_os("SKEMBED_LP_STATS").is_some();
        let t0 = std::time::Instant::now();
        let mut stalled = 0usize;
        let mut n_bland = 0usize;
        let mut n_degen = 0usize;
        let mut n_refactor = 0usize;
        let mut n_banned = 0usize;
        let mut t_refactor = std::time::Duration::ZERO;
        let mut t_btran = std::time::Duration::ZERO;
        let mut t_price = std::time::Duration::ZERO;
        let mut t_ftran = std::time::Duration::ZERO;
        for _iter in 0..max_iter {
            if stats && _iter % 500 == 0 && _iter > 0 {
                eprintln!(
                    "lp-stats: iter {_iter} t {:?} refactor {n_refactor} ({t_refactor:?}) btran {t_btran:?} price {t_price:?} ftran {t_ftran:?} banned {n_banned} bland {n_bland} degen {n_degen} stalled {stalled}",
                    t0.elapsed()
                );
            }
            if self.fac.etas.len() >= self.refactor_every {
                let t = std::time::Instant::now();
                self.refactor()?;
                t_refactor += t.elapsed();
                n_refactor += 1;
            }
            let mut cb = vec![0.0; self.st.m];
            for (p, &j) in self.basis.iter().enumerate() {
                cb[p] = if j >= self.artificial_base {
                    cost.get(self.st.n_cols + (j - self.artificial_base)).copied().unwrap_or(0.0)
                } else {
                    cost[j]
                };
            }
            let t = std::time::Instant::now();
            let y = self.fac.btran(&cb);
            t_btran += t.elapsed();
            let bland = stalled > STALL_WINDOW;
            if bland {
                n_bland += 1;
            }
            let t = std::time::Instant::now();
            let q_opt = self.price(cost, &y, bland, allow_artificial);
            t_price += t.elapsed();
            let Some(q) = q_opt else {
                return Ok(LoopEnd::Optimal);
            };
            let t = std::time::Instant::now();
            let w = self.fac.ftran(&self.col(q));
            t_ftran += t.elapsed();
            let p = match self.ratio_test(&w, bland) {
                Some(p) => p,
                None => {
                    if !self.fac.etas.is_empty() {
                        // Don't trust an unbounded ray from a stale factorization.
                        self.refactor()?;
                        continue;
                    }
                    return Ok(LoopEnd::Unbounded);
                }
            };
            if w[p].abs() < PIVOT_MIN {
                // Tiny pivots are how bases go singular. Off stale factors,
                // redo the iteration fresh; off fresh factors the column is
                // numerically dependent on the basis, so set it aside.
                if !self.fac.etas.is_empty() {
                    self.refactor()?;
                    n_refactor += 1;
                } else {
                    self.banned[q] = true;
                    n_banned += 1;
                }
                continue;
            }
            let theta = self.xb[p].max(0.0) / w[p];
            // Steps at the scale of the Harris relaxation are degenerate in
            // substance; only genuine progress resets the Bland fallback.
            if theta <= 1e-8 * (1.0 + self.bscale) {
                stalled += 1;
                n_degen += 1;
            } else {
                stalled = 0;
            }
            for i in 0..self.st.m {
                self.xb[i] -= theta * w[i];
            }
            self.xb[p] = theta;
            self.in_basis[self.basis[p]] = false;
            self.in_basis[q] = true;
            self.basis[p] = q;
            self.fac.etas.push((p, w));
        }
        Err(Error::NumericalBreakdown(
            "simplex iteration cap exceeded".into(),
        ))
    }
}

fn solve_inner(prog: &LinearProgram, kept_rows: &[usize], refactor_every: usize) -> Result<LpSolution> {
    let st = standardize(prog, kept_rows);
    let m = st.m;
    if m == 0 {
        // No constraints: optimum sits at the lower bounds unless some cost
        // coefficient points the sense toward infinity.
        let flip = if prog.sense == Sense::Max { -1.0 } else { 1.0 };
        if prog.objective.iter().any(|&c| c * flip < -TOL_DUAL) {
            return Ok(LpSolution {
                status: LpStatus::Unbounded,
                primal: vec![0.0; prog.n_vars],
                duals: vec![0.0; prog.n_rows()],
                objective: f64::NAN,
                farkas: None,
            });
        }
        let obj: f64 = prog
            .objective
            .iter()
            .zip(&prog.lower_bounds)
            .map(|(c, l)| c * l)
            .sum();
        return Ok(LpSolution {
            status: LpStatus::Optimal,
            primal: prog.lower_bounds.clone(),
            duals: vec![0.0; prog.n_rows()],
            objective: obj,
            farkas: None,
        });
    }

    let artificial_base = st.n_cols;
    // Phase 1 runs on a slightly perturbed right-hand side: distinct positive
    // offsets make every vertex nondegenerate, so the walk to a near-optimal
    // basis is short. An exact cleanup pass follows.
    let phi = 0.618_033_988_749_894_9_f64;
    let b_scale_raw = st.b.iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
    let b_pert: Vec<f64> = st
        .b
        .iter()
        .enumerate()
        .map(|(p, v)| v + 1e-6 * (1.0 + b_scale_raw) * (0.7 + ((p as f64) * phi).fract()))
        .collect();
    let mut eng = Engine {
        st: &st,
        artificial_base,
        basis: (0..m).map(|p| artificial_base + p).collect(),
        in_basis: {
            let mut v = vec![false; st.n_cols + m];
            for p in 0..m {
                v[st.n_cols + p] = true;
            }
            v
        },
        b: b_pert.clone(),
        xb: b_pert,
        fac: Basis::factor(&st, &(0..m).map(|p| artificial_base + p).collect::<Vec<_>>(), artificial_base)?,
        refactor_every,
        bscale: st.b.iter().fold(0.0f64, |mx, v| mx.max(v.abs())),
        banned: vec![false; st.n_cols + m],
    };

    // Phase 1: minimize the artificial mass.
    let stats = std::env::var_os("SKEMBED_LP_STATS").is_some();
    if stats {
        eprintln!("lp-stats: phase 1 start, m {} cols {}", m, st.n_cols);
    }
    // Slightly distinct artificial costs break the extreme dual degeneracy of
    // highly structured instances; any exact-feasibility conclusion is
    // unaffected because all weights stay within 1e-7 of one.
    let mut cost1 = vec![0.0; st.n_cols + m];
    for (p, c) in cost1.iter_mut().skip(st.n_cols).enumerate() {
        let phi = 0.618_033_988_749_894_9_f64;
        *c = 1.0 + 1e-7 * ((p as f64) * phi).fract();
    }
    let bscale = 1.0 + st.b.iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
    // Perturbed pass: lands on (or near) an optimal basis quickly.
    match eng.run(&cost1, false)? {
        LoopEnd::Optimal => {}
        LoopEnd::Unbounded => {
            return Err(Error::NumericalBreakdown(
                "phase-1 objective unbounded".into(),
            ))
        }
    }
    if stats {
        eprintln!("lp-stats: perturbed phase 1 done");
    }
    // Exact cleanup from the warm basis. A basis repair can put an artificial
    // back in with positive value, so rerun until the mass is converged.
    eng.b = st.b.clone();
    eng.refactor()?;
    eng.restore_feasibility()?;
    let mut phase1_obj = 0.0;
    for _round in 0..4 {
        match eng.run(&cost1, false)? {
            LoopEnd::Optimal => {}
            LoopEnd::Unbounded => {
                return Err(Error::NumericalBreakdown(
                    "phase-1 objective unbounded".into(),
                ))
            }
        }
        eng.refactor()?;
        eng.restore_feasibility()?;
        phase1_obj = eng
            .basis
            .iter()
            .zip(&eng.xb)
            .filter(|(j, _)| **j >= artificial_base)
            .map(|(_, x)| x.max(0.0))
            .sum();
        // Optimal-and-fresh means the mass is final either way.
        if eng.fac.etas.is_empty() && eng.price(&cost1, &eng.fac.btran(&{
            let mut cb = vec![0.0; m];
            for (p, &j) in eng.basis.iter().enumerate() {
                cb[p] = if j >= artificial_base {
                    cost1[st.n_cols + (j - artificial_base)]
                } else {
                    cost1[j]
                };
            }
            cb
        }), false, false).is_none() {
            break;
        }
    }
    if phase1_obj > 1e-8 * bscale {
        // Infeasible; phase-1 duals are the Farkas certificate.
        let mut cb = vec![0.0; m];
        for (p, &j) in eng.basis.iter().enumerate() {
            if j >= artificial_base {
                cb[p] = 1.0;
            }
        }
        let yk = eng.fac.btran(&cb);
        let mut y = vec![0.0; prog.n_rows()];
        for (p, &i) in kept_rows.iter().enumerate() {
            y[i] = yk[p] * st.row_sign[p];
        }
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            primal: vec![0.0; prog.n_vars],
            duals: vec![0.0; prog.n_rows()],
            objective: f64::NAN,
            farkas: Some(y),
        });
    }

    if stats {
        eprintln!("lp-stats: phase 1 done, artificial mass {phase1_obj:.3e}");
    }
    // Drive basic artificials out where possible.
    for p in 0..m {
        if eng.basis[p] < artificial_base {
            continue;
        }
        let mut e = vec![0.0; m];
        e[p] = 1.0;
        let rho = eng.fac.btran(&e);
        let mut found = None;
        for j in 0..st.n_cols {
            if eng.in_basis[j] {
                continue;
            }
            let mut v = 0.0;
            for &(r, a) in &st.cols[j] {
                v += a * rho[r];
            }
            if v.abs() > 1e-7 {
                found = Some(j);
                break;
            }
        }
        if let Some(j) = found {
            let w = eng.fac.ftran(&eng.col(j));
            eng.in_basis[eng.basis[p]] = false;
            eng.in_basis[j] = true;
            eng.basis[p] = j;
            eng.xb[p] = 0.0;
            eng.fac.etas.push((p, w));
            if eng.fac.etas.len() >= eng.refactor_every {
                eng.refactor()?;
            }
        }
        // Otherwise the row is redundant; the artificial stays basic at 0.
    }

    if stats {
        eprintln!("lp-stats: drive-out done, phase 2 start");
    }
    // Phase 2.
    let mut cost2 = st.cost.clone();
    cost2.extend(std::iter::repeat(0.0).take(m)); // basic-artificial cost 0, entry forbidden
    let end = eng.run(&cost2, false)?;
    eng.refactor()?;
    for (p, &j) in eng.basis.iter().enumerate() {
        if j >= artificial_base && eng.xb[p] > 1e-7 * bscale {
            return Err(Error::NumericalBreakdown(
                "artificial stuck in phase-2 basis".into(),
            ));
        }
    }

    let flip = if prog.sense == Sense::Max { -1.0 } else { 1.0 };
    match end {
        LoopEnd::Unbounded => Ok(LpSolution {
            status: LpStatus::Unbounded,
            primal: vec![0.0; prog.n_vars],
            duals: vec![0.0; prog.n_rows()],
            objective: f64::NAN,
            farkas: None,
        }),
        LoopEnd::Optimal => {
            let mut x = prog.lower_bounds.clone();
            for (p, &j) in eng.basis.iter().enumerate() {
                if j < st.n_structural {
                    x[j] += eng.xb[p].max(0.0);
                }
            }
            let mut cb = vec![0.0; m];
            for (p, &j) in eng.basis.iter().enumerate() {
                if j < st.n_cols {
                    cb[p] = cost2[j];
                }
            }
            let yk = eng.fac.btran(&cb);
            let mut y = vec![0.0; prog.n_rows()];
            for (p, &i) in kept_rows.iter().enumerate() {
                y[i] = yk[p] * st.row_sign[p] * flip;
            }
            let objective: f64 = prog
                .objective
                .iter()
                .zip(&x)
                .map(|(c, v)| c * v)
                .sum();
            Ok(LpSolution {
                status: LpStatus::Optimal,
                primal: x,
                duals: y,
                objective,
                farkas: None,
            })
        }
    }
}
