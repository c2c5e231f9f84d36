use crate::error::{Error, Result};
use crate::lattice::{cost, LatticeSpec, WalkKernel};
use crate::lp::{self, LinearProgram, LpStatus, RowSense, Sense};

/// Real value per lattice node, indexed like `spec.nodes`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn constant(spec: &LatticeSpec, c: f64) -> GridFunction {
        GridFunction {
            values: vec![c; spec.n_nodes()],
        }
    }

    pub fn from_fn(spec: &LatticeSpec, f: impl Fn(&crate::lattice::Node) -> f64) -> GridFunction {
        GridFunction {
            values: spec.nodes.iter().map(f).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Mean of f over the lattice shell at distance r from x, after checking that
/// the closed ball x + rB stays inside the continuum domain.
pub fn sphere_average(spec: &LatticeSpec, f: &GridFunction, x: usize, r: f64) -> Result<f64> {
    if r == 0.0 {
        return Ok(f.values[x]);
    }
    let xn = &spec.nodes[x];
    let rx = xn.norm() * spec.h;
    let escapes = rx + r > spec.r_outer + 1e-12
        || (spec.r_inner > 0.0 && rx - r < spec.r_inner - 1e-12);
    if escapes {
        return Err(Error::BallEscapesDomain {
            x: xn.coords(spec.d).to_vec(),
            r,
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, z) in spec.nodes.iter().enumerate() {
        let dist = cost(xn, z, spec.h, 1.0);
        if (dist - r).abs() <= spec.shell_tol {
            sum += f.values[i];
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyShell {
            x: xn.coords(spec.d).to_vec(),
            r,
        });
    }
    Ok(sum / count as f64)
}

/// Admissible averaging radii around node x: distinct node distances (merged
/// within shell_tol) whose ball stays inside the domain; always includes 0.
pub fn admissible_radii(spec: &LatticeSpec, x: usize) -> Vec<f64> {
    let xn = &spec.nodes[x];
    let rx = xn.norm() * spec.h;
    let mut ds: Vec<f64> = spec
        .nodes
        .iter()
        .map(|z| cost(xn, z, spec.h, 1.0))
        .filter(|&r| {
            r > 0.0
                && rx + r <= spec.r_outer + 1e-12
                && (spec.r_inner <= 0.0 || rx - r >= spec.r_inner - 1e-12)
        })
        .collect();
    ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = vec![0.0];
    for r in ds {
        if r - out.last().unwrap() > spec.shell_tol {
            out.push(r);
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub struct EnvelopeRun {
    pub iters: usize,
    pub max_delta: f64,
    pub converged: bool,
}

/// Shell-average envelope iteration: f_n(x) = min over admissible r of the
/// sphere average of f_{n-1}; Jacobi sweeps until the update is below tol.
pub fn envelope_iterate(
    spec: &LatticeSpec,
    f: &GridFunction,
    max_iter: usize,
    tol: f64,
) -> (GridFunction, EnvelopeRun) {
    // Precompute shell memberships around every node.
    let mut groups: Vec<Vec<Vec<usize>>> = Vec::with_capacity(spec.n_nodes());
    for x in 0..spec.n_nodes() {
        let radii = admissible_radii(spec, x);
        let xn = &spec.nodes[x];
        let mut gs: Vec<Vec<usize>> = vec![Vec::new(); radii.len()];
        for (i, z) in spec.nodes.iter().enumerate() {
            let dist = cost(xn, z, spec.h, 1.0);
            for (k, &r) in radii.iter().enumerate() {
                if (dist - r).abs() <= spec.shell_tol {
                    gs[k].push(i);
                }
            }
        }
        gs.retain(|g| !g.is_empty());
        groups.push(gs);
    }

    let mut g = f.clone();
    let mut run = EnvelopeRun {
        iters: 0,
        max_delta: f64::INFINITY,
        converged: false,
    };
    for it in 0..max_iter {
        let mut next = g.values.clone();
        for x in 0..spec.n_nodes() {
            let mut best = g.values[x];
            for members in &groups[x] {
                let avg: f64 =
                    members.iter().map(|&i| g.values[i]).sum::<f64>() / members.len() as f64;
                if avg < best {
                    best = avg;
                }
            }
            next[x] = best;
        }
        let delta = g.max_abs_diff(&GridFunction { values: next.clone() });
        g.values = next;
        run.iters = it + 1;
        run.max_delta = delta;
        if delta <= tol {
            run.converged = true;
            break;
        }
    }
    (g, run)
}

/// Canonical discrete envelope: largest g <= f with g <= Pg at interior nodes,
/// by the monotone fixed-point iteration g <- min(f, Pg).
pub fn envelope_onestep(
    spec: &LatticeSpec,
    kernel: &WalkKernel,
    f: &GridFunction,
    max_iter: usize,
    tol: f64,
) -> (GridFunction, EnvelopeRun) {
    let p = kernel.step_prob();
    let mut g = f.clone();
    let mut run = EnvelopeRun {
        iters: 0,
        max_delta: f64::INFINITY,
        converged: false,
    };
    for it in 0..max_iter {
        let mut next = g.values.clone();
        for x in 0..spec.n_nodes() {
            if spec.interior[x] {
                let avg: f64 = spec.neighbors[x].iter().map(|&w| g.values[w]).sum::<f64>() * p;
                next[x] = f.values[x].min(avg);
            }
        }
        let delta = g
            .values
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        g.values = next;
        run.iters = it + 1;
        run.max_delta = delta;
        if delta <= tol {
            run.converged = true;
            break;
        }
    }
    (g, run)
}

/// LP formulation of the one-step envelope for cross-checking on small grids:
/// maximize the sum of g subject to g <= f and interior g <= Pg.
pub fn envelope_onestep_lp(
    spec: &LatticeSpec,
    kernel: &WalkKernel,
    f: &GridFunction,
) -> Result<GridFunction> {
    let n = spec.n_nodes();
    let low = f.values.iter().fold(f64::INFINITY, |m, v| m.min(*v)) - 1.0;
    let mut prog = LinearProgram::new(n, Sense::Max);
    // Free variables shifted: lower bound well below min f never binds.
    prog.lower_bounds = vec![low; n];
    for x in 0..n {
        prog.objective[x] = 1.0;
        prog.add_row(RowSense::Le, f.values[x], &[(x, 1.0)]);
    }
    let p = kernel.step_prob();
    for x in 0..n {
        if spec.interior[x] {
            let mut cols: Vec<(usize, f64)> =
                spec.neighbors[x].iter().map(|&w| (w, -p)).collect();
            cols.push((x, 1.0));
            prog.add_row(RowSense::Le, 0.0, &cols);
        }
    }
    let sol = lp::solve_exact(&prog)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::NumericalBreakdown(format!(
            "envelope LP returned {:?}",
            sol.status
        )));
    }
    Ok(GridFunction { values: sol.primal })
}

/// Smallest one-step superharmonic majorant of the reward beta(z) - |x-z|^alpha
/// (cost term dropped when alpha is None), via the envelope of the negation.
pub fn value_function(
    spec: &LatticeSpec,
    kernel: &WalkKernel,
    beta: &GridFunction,
    x: usize,
    alpha: Option<f64>,
) -> GridFunction {
    let xn = spec.nodes[x];
    let reward = GridFunction {
        values: spec
            .nodes
            .iter()
            .enumerate()
            .map(|(i, z)| {
                beta.values[i]
                    - match alpha {
                        Some(a) => cost(&xn, z, spec.h, a),
                        None => 0.0,
                    }
            })
            .collect(),
    };
    let neg = GridFunction {
        values: reward.values.iter().map(|v| -v).collect(),
    };
    let (env, _run) = envelope_onestep(spec, kernel, &neg, 10 * spec.n_nodes().max(100), 1e-12);
    GridFunction {
        values: env.values.iter().map(|v| -v).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_lattice;

    fn setup() -> (LatticeSpec, WalkKernel) {
        let spec = build_lattice(2, 1.0, 3.0, 0.5).unwrap();
        let kernel = WalkKernel::new(&spec);
        (spec, kernel)
    }

    fn sq(spec: &LatticeSpec) -> GridFunction {
        GridFunction::from_fn(spec, |z| (z.norm() * spec.h).powi(2))
    }

    #[test]
    fn subharmonic_functions_are_fixed_points() {
        let (spec, kernel) = setup();
        let f = sq(&spec);
        let (g, run) = envelope_onestep(&spec, &kernel, &f, 1000, 1e-12);
        assert!(run.converged);
        assert!(g.max_abs_diff(&f) < 1e-12);
        let (g2, _) = envelope_iterate(&spec, &f, 1000, 1e-12);
        assert!(g2.max_abs_diff(&f) < 1e-12);
    }

    #[test]
    fn envelope_is_dominated_subharmonic_and_idempotent() {
        let (spec, kernel) = setup();
        let f = GridFunction {
            values: sq(&spec).values.iter().map(|v| -v).collect(),
        };
        let (g, run) = envelope_onestep(&spec, &kernel, &f, 10_000, 1e-13);
        assert!(run.converged);
        let p = kernel.step_prob();
        for x in 0..spec.n_nodes() {
            assert!(g.values[x] <= f.values[x] + 1e-12);
            if spec.interior[x] {
                let avg: f64 = spec.neighbors[x].iter().map(|&w| g.values[w]).sum::<f64>() * p;
                assert!(g.values[x] <= avg + 1e-9);
            }
        }
        let (gg, _) = envelope_onestep(&spec, &kernel, &g, 10_000, 1e-13);
        assert!(gg.max_abs_diff(&g) < 1e-9);
    }

    #[test]
    fn iterates_decrease_and_preserve_order() {
        let (spec, kernel) = setup();
        let f = GridFunction {
            values: sq(&spec).values.iter().map(|v| -v).collect(),
        };
        let (one, _) = envelope_onestep(&spec, &kernel, &f, 1, f64::NEG_INFINITY);
        for x in 0..spec.n_nodes() {
            assert!(one.values[x] <= f.values[x]);
        }
        let fp = GridFunction {
            values: f.values.iter().map(|v| v + 1.0).collect(),
        };
        let (ga, _) = envelope_onestep(&spec, &kernel, &f, 1000, 1e-12);
        let (gb, _) = envelope_onestep(&spec, &kernel, &fp, 1000, 1e-12);
        for x in 0..spec.n_nodes() {
            assert!(ga.values[x] <= gb.values[x] + 1e-12);
        }
    }

    #[test]
    fn lp_oracle_matches_fixed_point() {
        let (spec, kernel) = setup();
        let f = GridFunction::from_fn(&spec, |z| {
            -(z.norm() * spec.h) + (z.0[0] as f64) * 0.3
        });
        let (g, _) = envelope_onestep(&spec, &kernel, &f, 100_000, 1e-13);
        let lp = envelope_onestep_lp(&spec, &kernel, &f).unwrap();
        assert!(g.max_abs_diff(&lp) < 1e-8);
    }

    #[test]
    fn zero_reward_value_is_zero_at_start() {
        let (spec, kernel) = setup();
        let beta = GridFunction::constant(&spec, 0.0);
        let x = spec.origin().unwrap();
        let j = value_function(&spec, &kernel, &beta, x, Some(1.0));
        assert!(j.values[x].abs() < 1e-12);
        for v in &j.values {
            assert!(*v <= 1e-12);
        }
    }

    #[test]
    fn sphere_average_edge_cases() {
        let spec = build_lattice(2, 1.0, 3.0, 1e-9).unwrap();
        let f = sq(&spec);
        let x = spec.origin().unwrap();
        assert_eq!(sphere_average(&spec, &f, x, 0.0).unwrap(), f.values[x]);
        assert!((sphere_average(&spec, &f, x, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            sphere_average(&spec, &f, x, 10.0),
            Err(Error::BallEscapesDomain { .. })
        ));
        let radii = admissible_radii(&spec, x);
        assert_eq!(radii[0], 0.0);
        assert!(radii.windows(2).all(|w| w[0] < w[1]));
    }
}
