use crate::envelope::GridFunction;
use crate::error::{Error, Result};
use crate::lattice::{cost, point_group, GroupElement, LatticeSpec, Node, WalkKernel};
use crate::lp::{self, LinearProgram, LpSolution, LpStatus, RowSense, Sense};
use crate::measures::DiscreteMeasure;

#[derive(Clone, Debug)]
pub struct EmbeddingProblem {
    pub mu: DiscreteMeasure,
    pub nu: DiscreteMeasure,
    pub alpha: f64,
    pub sense: Sense,
    pub allow_boundary_target: bool,
    pub symmetry_reduction: bool,
}

/// One solved start of the LP: a point-group orbit representative when the
/// build is symmetry-reduced, otherwise a single start.
#[derive(Clone, Debug)]
pub(crate) struct StartBlock {
    pub start: usize,
    pub mu_mass: f64,
    pub orbit_size: usize,
    pub var_m0: usize,
    pub var_s0: usize,
    pub row_bal0: usize,
}

#[derive(Clone, Debug)]
pub struct BuiltProblem {
    pub problem: EmbeddingProblem,
    pub lp: LinearProgram,
    pub(crate) blocks: Vec<StartBlock>,
    pub(crate) interior_ids: Vec<usize>,
    /// Marginal row index for each node (orbit-shared under reduction).
    pub(crate) marg_rows: Vec<usize>,
    /// Group elements used for orbit replication (identity only when full).
    pub(crate) group: Vec<GroupElement>,
}

#[derive(Clone, Debug)]
pub struct StoppingSolution {
    pub status: LpStatus,
    pub sense: Sense,
    pub alpha: f64,
    pub objective: f64,
    pub e_tau: f64,
    pub mu: DiscreteMeasure,
    pub nu: DiscreteMeasure,
    /// Node indices of all starts (mu support), sorted.
    pub starts: Vec<usize>,
    /// Per start: expected continue-visits per node (zero off the interior).
    pub occupation: Vec<Vec<f64>>,
    /// Per start: stop probability per node; totals 1.
    pub stop: Vec<Vec<f64>>,
    /// Dual potential on nodes (of the internal min formulation).
    pub beta: GridFunction,
    /// Per start value function from the balance duals.
    pub value: Vec<GridFunction>,
    pub lp_gap: f64,
}

impl StoppingSolution {
    pub fn start_pos(&self, node: usize) -> Option<usize> {
        self.starts.binary_search(&node).ok()
    }

    pub fn stop_measure(&self, spec: &LatticeSpec, start_pos: usize) -> DiscreteMeasure {
        DiscreteMeasure::from_atoms(
            self.stop[start_pos]
                .iter()
                .enumerate()
                .filter(|(_, &m)| m > 0.0)
                .map(|(i, &m)| (spec.nodes[i], m)),
        )
        .unwrap()
    }

    /// Mixture of the per-start stop measures weighted by mu: the achieved target.
    pub fn target_measure(&self, spec: &LatticeSpec) -> DiscreteMeasure {
        let mut out = DiscreteMeasure::new();
        for (p, &x) in self.starts.iter().enumerate() {
            let w = self.mu.mass(&spec.nodes[x]);
            for (i, &m) in self.stop[p].iter().enumerate() {
                if m > 0.0 {
                    out.add(spec.nodes[i], w * m).unwrap();
                }
            }
        }
        out
    }

    /// Coupling mass pi(x, z) = mu(x) * s_x(z).
    pub fn coupling(&self, spec: &LatticeSpec, start_pos: usize, node: usize) -> f64 {
        self.mu.mass(&spec.nodes[self.starts[start_pos]]) * self.stop[start_pos][node]
    }
}

fn validate(
    spec: &LatticeSpec,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    allow_boundary_target: bool,
) -> Result<()> {
    for (z, _) in mu.iter().chain(nu.iter()) {
        if spec.node_index(z).is_none() {
            return Err(Error::SupportOffLattice(z.coords(spec.d).to_vec()));
        }
    }
    if !mu.is_probability() {
        return Err(Error::NonProbability(mu.total()));
    }
    if !nu.is_probability() {
        return Err(Error::NonProbability(nu.total()));
    }
    if !allow_boundary_target {
        for (z, _) in nu.iter() {
            let i = spec.node_index(z).unwrap();
            if !spec.interior[i] {
                return Err(Error::InvalidInput(format!(
                    "target charges boundary node {:?}; pass allow_boundary_target to permit",
                    z.coords(spec.d)
                )));
            }
        }
    }
    Ok(())
}

/// Group starts into point-group orbits; mu must be invariant for reduction.
fn orbits(
    spec: &LatticeSpec,
    mu: &DiscreteMeasure,
    group: &[GroupElement],
) -> Result<Vec<(Node, usize)>> {
    let mut reps: Vec<(Node, usize)> = Vec::new();
    let mut seen: std::collections::BTreeSet<Node> = std::collections::BTreeSet::new();
    for (z, &m) in mu.iter() {
        if seen.contains(z) {
            continue;
        }
        let mut orbit: Vec<Node> = group.iter().map(|g| g.apply(z)).collect();
        orbit.sort();
        orbit.dedup();
        for w in &orbit {
            if (mu.mass(w) - m).abs() > 1e-12 {
                return Err(Error::InvalidInput(
                    "symmetry reduction requires a point-group-invariant source".into(),
                ));
            }
            if spec.node_index(w).is_none() {
                return Err(Error::SupportOffLattice(w.coords(spec.d).to_vec()));
            }
            seen.insert(*w);
        }
        reps.push((orbit[0], orbit.len()));
    }
    Ok(reps)
}

pub fn build_problem(
    spec: &LatticeSpec,
    kernel: &WalkKernel,
    problem: EmbeddingProblem,
) -> Result<BuiltProblem> {
    validate(spec, &problem.mu, &problem.nu, problem.allow_boundary_target)?;
    if !(problem.alpha > 0.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must be > 0, got {}",
            problem.alpha
        )));
    }
    let n = spec.n_nodes();
    let interior_ids: Vec<usize> = (0..n).filter(|&i| spec.interior[i]).collect();
    let mut interior_pos = vec![None; n];
    for (k, &i) in interior_ids.iter().enumerate() {
        interior_pos[i] = Some(k);
    }
    let n_int = interior_ids.len();

    let group = if problem.symmetry_reduction {
        point_group(spec.d)?
    } else {
        vec![GroupElement {
            perm: [0, 1, 2],
            sign: [1, 1, 1],
        }]
    };

    let reps: Vec<(Node, usize)> = if problem.symmetry_reduction {
        // Reduction also relies on an invariant target.
        let sym_nu = crate::measures::symmetrize(&problem.nu, spec)?;
        for (z, &m) in problem.nu.iter() {
            if (sym_nu.mass(z) - m).abs() > 1e-12 {
                return Err(Error::InvalidInput(
                    "symmetry reduction requires a point-group-invariant target".into(),
                ));
            }
        }
        orbits(spec, &problem.mu, &group)?
    } else {
        problem.mu.iter().map(|(z, _)| (*z, 1usize)).collect()
    };

    let block_vars = n_int + n;
    let mut prog = LinearProgram::new(reps.len() * block_vars, Sense::Min);
    let cost_sign = match problem.sense {
        Sense::Min => 1.0,
        Sense::Max => -1.0,
    };

    let mut blocks = Vec::with_capacity(reps.len());
    for (b, (x0, k)) in reps.iter().enumerate() {
        let xi = spec.node_index(x0).unwrap();
        let mu_mass = problem.mu.mass(x0);
        let var_m0 = b * block_vars;
        let var_s0 = var_m0 + n_int;
        let row_bal0 = prog.n_rows();
        // Balance at every node z:
        //   m(z) + s(z) - sum_w P(w, z) m(w) = delta_x0(z)
        for z in 0..n {
            let mut cols: Vec<(usize, f64)> = Vec::new();
            if let Some(p) = interior_pos[z] {
                cols.push((var_m0 + p, 1.0));
            }
            cols.push((var_s0 + z, 1.0));
            let pstep = kernel.step_prob();
            for &w in &spec.neighbors[z] {
                if let Some(p) = interior_pos[w] {
                    cols.push((var_m0 + p, -pstep));
                }
            }
            let rhs = if z == xi { 1.0 } else { 0.0 };
            prog.add_row(RowSense::Eq, rhs, &cols);
        }
        for (z, zn) in spec.nodes.iter().enumerate() {
            prog.objective[var_s0 + z] =
                cost_sign * (*k as f64) * mu_mass * cost(x0, zn, spec.h, problem.alpha);
        }
        blocks.push(StartBlock {
            start: xi,
            mu_mass,
            orbit_size: *k,
            var_m0,
            var_s0,
            row_bal0,
        });
    }

    // Marginal rows: the mu-mixture of (replicated) stop measures equals nu.
    // Under reduction the rows for nodes of one orbit coincide (invariant nu,
    // group-averaged coefficients), so a single row serves the whole orbit.
    let gsize = group.len() as f64;
    let mut marg_rows = vec![usize::MAX; n];
    for z in 0..n {
        if marg_rows[z] != usize::MAX {
            continue;
        }
        let mut cols: Vec<(usize, f64)> = Vec::new();
        for block in &blocks {
            if problem.symmetry_reduction {
                // sum over orbit images of s maps through the group average
                let mut coeff = std::collections::HashMap::new();
                for g in &group {
                    let w = g.apply(&spec.nodes[z]);
                    if let Some(wi) = spec.node_index(&w) {
                        *coeff.entry(wi).or_insert(0.0) += 1.0;
                    }
                }
                let scale = block.mu_mass * block.orbit_size as f64 / gsize;
                let mut entries: Vec<(usize, f64)> = coeff
                    .into_iter()
                    .map(|(wi, c)| (block.var_s0 + wi, scale * c))
                    .collect();
                entries.sort_unstable_by_key(|e| e.0);
                cols.extend(entries);
            } else {
                cols.push((block.var_s0 + z, block.mu_mass));
            }
        }
        let row = prog.add_row(RowSense::Eq, problem.nu.mass(&spec.nodes[z]), &cols);
        if problem.symmetry_reduction {
            for g in &group {
                if let Some(zi) = spec.node_index(&g.apply(&spec.nodes[z])) {
                    marg_rows[zi] = row;
                }
            }
        } else {
            marg_rows[z] = row;
        }
    }
    prog.mark_embedding_shaped();

    Ok(BuiltProblem {
        problem,
        lp: prog,
        blocks,
        interior_ids,
        marg_rows,
        group,
    })
}

#[derive(Clone, Copy, Debug)]
pub enum Method {
    Exact,
    Entropic {
        eps: f64,
        max_iter: usize,
        tol: f64,
    },
}

pub fn solve(
    spec: &LatticeSpec,
    kernel: &WalkKernel,
    built: &BuiltProblem,
    method: Method,
) -> Result<StoppingSolution> {
    let _ = kernel;
    let sol = match method {
        Method::Exact => lp::solve_exact(&built.lp)?,
        Method::Entropic { eps, max_iter, tol } => {
            lp::solve_entropic(&built.lp, eps, max_iter, tol)?
        }
    };
    match sol.status {
        LpStatus::Optimal | LpStatus::MaxIterReached => extract(spec, built, &sol),
        LpStatus::Infeasible => Err(Error::InfeasibleEmbedding),
        LpStatus::Unbounded => Err(Error::NumericalBreakdown(
            "embedding LP reported unbounded".into(),
        )),
    }
}

fn extract(spec: &LatticeSpec, built: &BuiltProblem, sol: &LpSolution) -> Result<StoppingSolution> {
    let n = spec.n_nodes();
    let prob = &built.problem;
    let mut starts: Vec<usize> = prob
        .mu
        .iter()
        .map(|(z, _)| spec.node_index(z).unwrap())
        .collect();
    starts.sort_unstable();

    let mut occupation = vec![vec![0.0; n]; starts.len()];
    let mut stop = vec![vec![0.0; n]; starts.len()];
    let mut value = vec![GridFunction::constant(spec, 0.0); starts.len()];
    let gsize = built.group.len() as f64;

    for block in &built.blocks {
        // Dense per-node views of the block solution.
        let mut m_blk = vec![0.0; n];
        for (p, &i) in built.interior_ids.iter().enumerate() {
            m_blk[i] = sol.primal[block.var_m0 + p].max(0.0);
        }
        let mut s_blk = vec![0.0; n];
        for z in 0..n {
            s_blk[z] = sol.primal[block.var_s0 + z].max(0.0);
        }
        let j_scale = -1.0 / (block.orbit_size as f64 * block.mu_mass);
        let j_blk: Vec<f64> = (0..n)
            .map(|z| j_scale * sol.duals[block.row_bal0 + z])
            .collect();

        // Replicate over the group with stabilizer averaging; the identity
        // group makes this a plain copy.
        let x0 = spec.nodes[block.start];
        let mut mult = vec![0usize; starts.len()];
        let mut acc_m = vec![vec![0.0; n]; starts.len()];
        let mut acc_s = vec![vec![0.0; n]; starts.len()];
        let mut acc_j = vec![vec![0.0; n]; starts.len()];
        for g in &built.group {
            let gx = g.apply(&x0);
            let xi = spec
                .node_index(&gx)
                .ok_or_else(|| Error::SupportOffLattice(gx.coords(spec.d).to_vec()))?;
            let p = starts.binary_search(&xi).map_err(|_| {
                Error::NumericalBreakdown("orbit image missing from start set".into())
            })?;
            mult[p] += 1;
            for z in 0..n {
                let gz = g.apply(&spec.nodes[z]);
                if let Some(zi) = spec.node_index(&gz) {
                    acc_m[p][zi] += m_blk[z];
                    acc_s[p][zi] += s_blk[z];
                    acc_j[p][zi] += j_blk[z];
                }
            }
        }
        for p in 0..starts.len() {
            if mult[p] == 0 {
                continue;
            }
            let w = 1.0 / mult[p] as f64;
            for z in 0..n {
                occupation[p][z] += w * acc_m[p][z];
                stop[p][z] += w * acc_s[p][z];
                value[p].values[z] += w * acc_j[p][z];
            }
        }
        let _ = gsize;
    }

    // beta: marginal duals. An orbit-shared row stands for every node of its
    // orbit at once, so the per-node potential is the row dual divided by the
    // orbit size (the row count is 1 without reduction).
    let mut row_nodes = vec![0usize; sol.duals.len()];
    for z in 0..n {
        row_nodes[built.marg_rows[z]] += 1;
    }
    let mut beta = GridFunction::constant(spec, 0.0);
    for z in 0..n {
        let r = built.marg_rows[z];
        beta.values[z] = sol.duals[r] / row_nodes[r] as f64;
    }

    let mut objective = 0.0;
    let mut e_tau = 0.0;
    for (p, &xi) in starts.iter().enumerate() {
        let w = prob.mu.mass(&spec.nodes[xi]);
        let xn = spec.nodes[xi];
        for z in 0..n {
            objective += w * stop[p][z] * cost(&xn, &spec.nodes[z], spec.h, prob.alpha);
            e_tau += w * occupation[p][z];
        }
    }

    // Gap against the dual value of the internal min formulation.
    let cost_sign = match prob.sense {
        Sense::Min => 1.0,
        Sense::Max => -1.0,
    };
    let mut dual_val = 0.0;
    for z in 0..n {
        dual_val += beta.values[z] * prob.nu.mass(&spec.nodes[z]);
    }
    for (p, &xi) in starts.iter().enumerate() {
        dual_val -= prob.mu.mass(&spec.nodes[xi]) * value[p].values[xi];
    }
    let lp_gap = (cost_sign * objective - dual_val).abs();

    Ok(StoppingSolution {
        status: sol.status,
        sense: prob.sense,
        alpha: prob.alpha,
        objective,
        e_tau,
        mu: prob.mu.clone(),
        nu: prob.nu.clone(),
        starts,
        occupation,
        stop,
        beta,
        value,
        lp_gap,
    })
}

#[derive(Clone, Debug)]
pub enum Feasibility {
    Feasible,
    /// Farkas multipliers over the rows of the full (unreduced) build.
    Infeasible(Vec<f64>),
}

pub fn is_group_invariant(spec: &LatticeSpec, m: &DiscreteMeasure) -> bool {
    match crate::measures::symmetrize(m, spec) {
        Ok(sym) => m
            .iter()
            .all(|(z, &mass)| (sym.mass(z) - mass).abs() <= 1e-12)
            && sym.iter().all(|(z, &mass)| (m.mass(z) - mass).abs() <= 1e-12),
        Err(_) => false,
    }
}

pub fn feasibility(
    spec: &LatticeSpec,
    kernel: &WalkKernel,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<(Feasibility, BuiltProblem)> {
    // Invariant instances go through the symmetry-reduced build, which keeps
    // the dense basis factorization small; the reduction is exact for them.
    let reduce = is_group_invariant(spec, mu) && is_group_invariant(spec, nu);
    let built = build_problem(
        spec,
        kernel,
        EmbeddingProblem {
            mu: mu.clone(),
            nu: nu.clone(),
            alpha: 1.0,
            sense: Sense::Min,
            allow_boundary_target: true,
            symmetry_reduction: reduce,
        },
    )?;
    let mut prog = built.lp.clone();
    prog.objective.iter_mut().for_each(|c| *c = 0.0);
    let sol = lp::solve_exact(&prog)?;
    let f = match sol.status {
        LpStatus::Optimal => Feasibility::Feasible,
        LpStatus::Infeasible => {
            let y = sol
                .farkas
                .ok_or_else(|| Error::NumericalBreakdown("missing certificate".into()))?;
            if !lp::verify_farkas(&prog, &y) {
                return Err(Error::NumericalBreakdown(
                    "certificate failed re-verification".into(),
                ));
            }
            Feasibility::Infeasible(y)
        }
        s => {
            return Err(Error::NumericalBreakdown(format!(
                "feasibility LP returned {s:?}"
            )))
        }
    };
    Ok((f, built))
}

#[derive(Clone, Debug)]
pub struct DualityReport {
    pub gap: f64,
    pub worst_majorant: f64,
    pub worst_superharmonic: f64,
    pub majorant_violations: usize,
    pub superharmonic_violations: usize,
    pub sense: Sense,
    /// For Max problems the dual pair certifies the negated (min) objective.
    pub negated_dual: bool,
}

/// Check the dual potentials of a solved problem: majorant property,
/// superharmonicity of the value functions, and the duality gap.
pub fn verify_dual(
    spec: &LatticeSpec,
    kernel: &WalkKernel,
    solution: &StoppingSolution,
    tol: f64,
) -> Result<DualityReport> {
    if solution.status != LpStatus::Optimal {
        return Err(Error::NotOptimal(format!("{:?}", solution.status)));
    }
    let cost_sign = match solution.sense {
        Sense::Min => 1.0,
        Sense::Max => -1.0,
    };
    let n = spec.n_nodes();
    let mut worst_majorant = 0.0f64;
    let mut worst_super = 0.0f64;
    let mut majorant_violations = 0usize;
    let mut superharmonic_violations = 0usize;
    let pstep = kernel.step_prob();
    for (p, &xi) in solution.starts.iter().enumerate() {
        let xn = spec.nodes[xi];
        let j = &solution.value[p];
        for z in 0..n {
            let reward = solution.beta.values[z]
                - cost_sign * cost(&xn, &spec.nodes[z], spec.h, solution.alpha);
            let res = reward - j.values[z];
            if res > worst_majorant {
                worst_majorant = res;
            }
            if res > tol {
                majorant_violations += 1;
            }
            if spec.interior[z] {
                let avg: f64 = spec.neighbors[z].iter().map(|&w| j.values[w]).sum::<f64>() * pstep;
                let res = avg - j.values[z];
                if res > worst_super {
                    worst_super = res;
                }
                if res > tol {
                    superharmonic_violations += 1;
                }
            }
        }
    }
    Ok(DualityReport {
        gap: solution.lp_gap,
        worst_majorant,
        worst_superharmonic: worst_super,
        majorant_violations,
        superharmonic_violations,
        sense: solution.sense,
        negated_dual: solution.sense == Sense::Max,
    })
}
