//! Stop/continue supports of a solved embedding, spherical-cap structure
//! checks, randomization accounting, and replayable stop policies.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lattice::{cos_angle, LatticeSpec, WalkKernel};
use crate::lp::{LpStatus, Sense};
use crate::measures::common_mass;
use crate::embed::StoppingSolution;

pub const DEFAULT_MASS_TOL: f64 = 1e-9;

/// Per-node stop probabilities per start; boundary nodes are forced to 1.
#[derive(Clone, Debug)]
pub struct BarrierPolicy {
    /// Node indices, aligned with the solution's starts.
    pub starts: Vec<usize>,
    pub rho: Vec<Vec<f64>>,
}

fn require_optimal(solution: &StoppingSolution) -> Result<()> {
    if solution.status != LpStatus::Optimal {
        return Err(Error::NotOptimal(format!("{:?}", solution.status)));
    }
    Ok(())
}

/// Stop support {s > tol} and pass-through support {interior with m > tol}
/// for every start.
pub fn extract_supports(
    spec: &LatticeSpec,
    solution: &StoppingSolution,
    mass_tol: f64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    require_optimal(solution)?;
    let mut out = Vec::with_capacity(solution.starts.len());
    for p in 0..solution.starts.len() {
        let stop: Vec<usize> = (0..spec.n_nodes())
            .filter(|&z| solution.stop[p][z] > mass_tol)
            .collect();
        let pass: Vec<usize> = (0..spec.n_nodes())
            .filter(|&z| spec.interior[z] && solution.occupation[p][z] > mass_tol)
            .collect();
        out.push((stop, pass));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    MinAlphaLt2,
    MaxAlphaGt2,
    MinAlphaGt2,
    MaxAlphaLt2,
}

impl Regime {
    /// Caps point toward the start in the first two regimes, away otherwise.
    pub fn cap_toward_start(&self) -> bool {
        matches!(self, Regime::MinAlphaLt2 | Regime::MaxAlphaGt2)
    }

    pub fn of(sense: Sense, alpha: f64) -> Option<Regime> {
        if alpha == 2.0 {
            return None;
        }
        Some(match (sense, alpha < 2.0) {
            (Sense::Min, true) => Regime::MinAlphaLt2,
            (Sense::Max, false) => Regime::MaxAlphaGt2,
            (Sense::Min, false) => Regime::MinAlphaGt2,
            (Sense::Max, true) => Regime::MaxAlphaLt2,
        })
    }
}

#[derive(Clone, Debug)]
pub struct CapRow {
    pub start: usize,
    pub shell_radius: f64,
    pub stop_min_cos: f64,
    pub stop_max_cos: f64,
    pub pass_min_cos: f64,
    pub pass_max_cos: f64,
    pub violation: bool,
    pub parallel_excluded: usize,
}

#[derive(Clone, Debug)]
pub struct CapReport {
    pub rows: Vec<CapRow>,
    pub violations: usize,
    /// d = 2 runs are advisory only (partial stops at parallel points).
    pub advisory: bool,
}

/// Check that on each shell the stop and pass supports separate by the
/// cosine of the angle to the start, in the direction the regime dictates.
pub fn verify_cap_structure(
    spec: &LatticeSpec,
    solution: &StoppingSolution,
    regime: Regime,
    angular_tol: Option<f64>,
    mass_tol: f64,
) -> Result<CapReport> {
    let supports = extract_supports(spec, solution, mass_tol)?;
    let toward = regime.cap_toward_start();
    let mut rows = Vec::new();
    let mut violations = 0usize;
    for (p, &xi) in solution.starts.iter().enumerate() {
        let x = spec.nodes[xi];
        if x.is_zero() {
            return Err(Error::ZeroStart);
        }
        let (stop, pass) = &supports[p];
        for (si, shell) in spec.shells.iter().enumerate() {
            if shell.radius <= 0.0 {
                continue;
            }
            let tol = angular_tol.unwrap_or(spec.h / shell.radius);
            let mut parallel_excluded = 0usize;
            let mut cosines = |set: &[usize]| -> (f64, f64) {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for &z in set {
                    if spec.shell_of[z] != si {
                        continue;
                    }
                    let c = cos_angle(&x, &spec.nodes[z]).unwrap();
                    if c.abs() > 1.0 - 1e-12 {
                        parallel_excluded += 1;
                        if spec.d == 3 {
                            continue;
                        }
                    }
                    lo = lo.min(c);
                    hi = hi.max(c);
                }
                (lo, hi)
            };
            let (stop_min, stop_max) = cosines(stop);
            let (pass_min, pass_max) = cosines(pass);
            if !stop_min.is_finite() || !pass_min.is_finite() {
                continue;
            }
            let violation = if toward {
                pass_max > stop_min + tol
            } else {
                pass_min < stop_max - tol
            };
            if violation {
                violations += 1;
            }
            rows.push(CapRow {
                start: xi,
                shell_radius: shell.radius,
                stop_min_cos: stop_min,
                stop_max_cos: stop_max,
                pass_min_cos: pass_min,
                pass_max_cos: pass_max,
                violation,
                parallel_excluded,
            });
        }
    }
    Ok(CapReport {
        rows,
        violations,
        advisory: spec.d == 2,
    })
}

/// Same-shell (pass, stop) node pairs violating the regime's cap inequality.
pub fn forbidden_pairs(
    spec: &LatticeSpec,
    solution: &StoppingSolution,
    start_pos: usize,
    regime: Regime,
    angular_tol: Option<f64>,
    mass_tol: f64,
) -> Result<Vec<(usize, usize)>> {
    let supports = extract_supports(spec, solution, mass_tol)?;
    let xi = solution.starts[start_pos];
    let x = spec.nodes[xi];
    if x.is_zero() {
        return Err(Error::ZeroStart);
    }
    let toward = regime.cap_toward_start();
    let (stop, pass) = &supports[start_pos];
    let mut out = Vec::new();
    for &zp in pass {
        let cp = cos_angle(&x, &spec.nodes[zp]).unwrap();
        if spec.d == 3 && cp.abs() > 1.0 - 1e-12 {
            continue;
        }
        let shell = spec.shell_of[zp];
        let r = spec.shells[shell].radius;
        if r <= 0.0 {
            continue;
        }
        let tol = angular_tol.unwrap_or(spec.h / r);
        for &zs in stop {
            if spec.shell_of[zs] != shell {
                continue;
            }
            let cs = cos_angle(&x, &spec.nodes[zs]).unwrap();
            if spec.d == 3 && cs.abs() > 1.0 - 1e-12 {
                continue;
            }
            let bad = if toward { cp > cs + tol } else { cp < cs - tol };
            if bad {
                out.push((zp, zs));
            }
        }
    }
    Ok(out)
}

/// Build the stop-probability policy rho = s / (s + m) from a solution.
pub fn build_policy(spec: &LatticeSpec, solution: &StoppingSolution) -> Result<BarrierPolicy> {
    require_optimal(solution)?;
    let n = spec.n_nodes();
    let mut rho = Vec::with_capacity(solution.starts.len());
    for p in 0..solution.starts.len() {
        let mut r = vec![0.0; n];
        for z in 0..n {
            let s = solution.stop[p][z].max(0.0);
            let m = solution.occupation[p][z].max(0.0);
            r[z] = if !spec.interior[z] {
                1.0
            } else if s + m <= 0.0 {
                // Unreachable node: stopping immediately is the safe default.
                1.0
            } else {
                (s / (s + m)).clamp(0.0, 1.0)
            };
        }
        rho.push(r);
    }
    Ok(BarrierPolicy {
        starts: solution.starts.clone(),
        rho,
    })
}

/// Exact stop law of a policy from one start, by solving the absorbed-chain
/// arrival equations.
pub fn replay(
    spec: &LatticeSpec,
    kernel: &WalkKernel,
    policy: &BarrierPolicy,
    start_pos: usize,
) -> Result<Vec<f64>> {
    let n = spec.n_nodes();
    let interior_ids: Vec<usize> = (0..n).filter(|&i| spec.interior[i]).collect();
    let mut pos = vec![None; n];
    for (k, &i) in interior_ids.iter().enumerate() {
        pos[i] = Some(k);
    }
    let m = interior_ids.len();
    let rho = &policy.rho[start_pos];
    let p = kernel.step_prob();
    // arrivals a(z) = delta_start(z) + sum_w P(w, z) (1 - rho(w)) a(w)
    let mut mat = DMatrix::<f64>::identity(m, m);
    for (k, &w) in interior_ids.iter().enumerate() {
        let cont = 1.0 - rho[w];
        if cont <= 0.0 {
            continue;
        }
        for &z in &spec.neighbors[w] {
            if let Some(kz) = pos[z] {
                mat[(kz, k)] -= p * cont;
            }
        }
    }
    let start = policy.starts[start_pos];
    let mut rhs = nalgebra::DVector::zeros(m);
    if let Some(k) = pos[start] {
        rhs[k] = 1.0;
    }
    let lu = mat.lu();
    if !lu.solve_mut(&mut rhs) {
        return Err(Error::SingularSystem("policy replay system".into()));
    }
    let mut stop = vec![0.0; n];
    for (k, &i) in interior_ids.iter().enumerate() {
        stop[i] = rho[i] * rhs[k].max(0.0);
    }
    // Boundary arrivals stop with probability 1.
    for (k, &w) in interior_ids.iter().enumerate() {
        let cont = (1.0 - rho[w]) * rhs[k].max(0.0);
        if cont <= 0.0 {
            continue;
        }
        for &z in &spec.neighbors[w] {
            if !spec.interior[z] {
                stop[z] += p * cont;
            }
        }
    }
    if !spec.interior[start] {
        stop[start] += 1.0;
    }
    Ok(stop)
}

/// Worst atom-wise deviation between the policy replay and the LP stop
/// measures, across starts.
pub fn replay_error(
    spec: &LatticeSpec,
    kernel: &WalkKernel,
    policy: &BarrierPolicy,
    solution: &StoppingSolution,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for p in 0..policy.starts.len() {
        let replayed = replay(spec, kernel, policy, p)?;
        for z in 0..spec.n_nodes() {
            worst = worst.max((replayed[z] - solution.stop[p][z]).abs());
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct RandomizationProfile {
    /// Per start: stop-mass fraction at nodes with rho strictly inside (0, 1).
    pub per_start: Vec<f64>,
    /// Per start, per shell: (shell radius, randomized stop-mass fraction).
    pub per_shell: Vec<Vec<(f64, f64)>>,
    /// mu-weighted aggregate fraction.
    pub aggregate: f64,
}

pub fn randomization_profile(
    spec: &LatticeSpec,
    solution: &StoppingSolution,
    policy: &BarrierPolicy,
) -> RandomizationProfile {
    let mut per_start = Vec::new();
    let mut per_shell = Vec::new();
    let mut agg = 0.0;
    let mut agg_w = 0.0;
    for p in 0..policy.starts.len() {
        let mut frac = 0.0;
        let mut total = 0.0;
        let mut shells = vec![(0.0, 0.0); spec.shells.len()];
        for (si, sh) in spec.shells.iter().enumerate() {
            shells[si].0 = sh.radius;
        }
        for z in 0..spec.n_nodes() {
            let s = solution.stop[p][z];
            if s <= 0.0 {
                continue;
            }
            total += s;
            let r = policy.rho[p][z];
            if r > 0.0 && r < 1.0 - 1e-9 {
                frac += s;
                shells[spec.shell_of[z]].1 += s;
            }
        }
        if total > 0.0 {
            frac /= total;
            for e in &mut shells {
                e.1 /= total;
            }
        }
        let w = solution.mu.mass(&spec.nodes[policy.starts[p]]);
        agg += w * frac;
        agg_w += w;
        per_start.push(frac);
        per_shell.push(shells);
    }
    RandomizationProfile {
        per_start,
        per_shell,
        aggregate: if agg_w > 0.0 { agg / agg_w } else { 0.0 },
    }
}

/// The diagonal of the coupling must carry the common mass of mu and nu.
pub fn common_mass_check(
    spec: &LatticeSpec,
    solution: &StoppingSolution,
) -> Result<(bool, f64)> {
    require_optimal(solution)?;
    if solution.sense != Sense::Min || solution.alpha > 1.0 {
        return Err(Error::WrongRegime {
            alpha: solution.alpha,
            sense: format!("{:?}", solution.sense),
        });
    }
    let overlap = common_mass(&solution.mu, &solution.nu);
    let mut worst = 0.0f64;
    for (z, &want) in overlap.iter() {
        let zi = spec.node_index(z).unwrap();
        let have = match solution.start_pos(zi) {
            Some(p) => solution.coupling(spec, p, zi),
            None => 0.0,
        };
        worst = worst.min(have - want);
    }
    Ok((worst >= -1e-8, worst))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{build_problem, solve, EmbeddingProblem, Method, StoppingSolution};
    use crate::lattice::{build_lattice, Node, WalkKernel};
    use crate::measures::DiscreteMeasure;

    fn solve_instance(
        spec: &crate::lattice::LatticeSpec,
        mu: DiscreteMeasure,
        nu: DiscreteMeasure,
        alpha: f64,
        sense: Sense,
        allow_boundary_target: bool,
    ) -> StoppingSolution {
        let kernel = WalkKernel::new(spec);
        let built = build_problem(
            spec,
            &kernel,
            EmbeddingProblem {
                mu,
                nu,
                alpha,
                sense,
                allow_boundary_target,
                symmetry_reduction: false,
            },
        )
        .unwrap();
        solve(spec, &kernel, &built, Method::Exact).unwrap()
    }

    fn trivial(alpha: f64) -> (crate::lattice::LatticeSpec, StoppingSolution) {
        let spec = build_lattice(2, 1.0, 3.0, 0.5).unwrap();
        let mu = DiscreteMeasure::dirac(Node([0, 0, 0]));
        let nu = DiscreteMeasure::from_atoms(
            [
                (Node([1, 0, 0]), 0.25),
                (Node([-1, 0, 0]), 0.25),
                (Node([0, 1, 0]), 0.25),
                (Node([0, -1, 0]), 0.25),
            ]
            .into_iter(),
        )
        .unwrap();
        let sol = solve_instance(&spec, mu, nu, alpha, Sense::Min, false);
        (spec, sol)
    }

    #[test]
    fn trivial_policy_and_replay() {
        let (spec, sol) = trivial(1.0);
        let kernel = WalkKernel::new(&spec);
        let policy = build_policy(&spec, &sol).unwrap();
        let origin = spec.origin().unwrap();
        assert!(policy.rho[0][origin].abs() <= 1e-9);
        let nb = spec.node_index(&Node([1, 0, 0])).unwrap();
        assert!((policy.rho[0][nb] - 1.0).abs() <= 1e-9);
        assert!(replay_error(&spec, &kernel, &policy, &sol).unwrap() <= 1e-9);
        let prof = randomization_profile(&spec, &sol, &policy);
        assert!(prof.aggregate.abs() <= 1e-9);
    }

    #[test]
    fn supports_split_stop_and_pass() {
        let (spec, sol) = trivial(1.0);
        let supports = extract_supports(&spec, &sol, DEFAULT_MASS_TOL).unwrap();
        let origin = spec.origin().unwrap();
        let (stop, pass) = &supports[0];
        assert_eq!(stop.len(), 4);
        assert!(!stop.contains(&origin));
        assert_eq!(pass, &vec![origin]);
    }

    #[test]
    fn common_mass_needs_min_and_small_alpha() {
        let (spec, sol) = trivial(3.0);
        assert!(matches!(
            common_mass_check(&spec, &sol),
            Err(Error::WrongRegime { .. })
        ));
    }

    #[test]
    fn common_mass_stays_put_on_overlap() {
        let inst = crate::presets::overlap_pair(2, 1.0, 3.0, Node([1, 1, 0]), 0.75).unwrap();
        let sol = solve_instance(&inst.spec, inst.mu, inst.nu, inst.alpha, inst.sense, true);
        let (ok, worst) = common_mass_check(&inst.spec, &sol).unwrap();
        assert!(ok, "diagonal deficit {worst}");
    }

    #[test]
    fn cap_check_rejects_zero_start() {
        let (spec, sol) = trivial(1.0);
        assert!(matches!(
            verify_cap_structure(&spec, &sol, Regime::MinAlphaLt2, None, DEFAULT_MASS_TOL),
            Err(Error::ZeroStart)
        ));
    }
}
