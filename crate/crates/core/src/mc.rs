//! Monte Carlo replay of a stop policy with deterministic per-path RNG
//! streams and statistical comparison against the LP solution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::barrier::BarrierPolicy;
use crate::error::{Error, Result};
use crate::lattice::{LatticeSpec, Node, WalkKernel};
use crate::measures::{wasserstein1, DiscreteMeasure};

#[derive(Clone, Debug)]
pub enum StartMode {
    FromMu(DiscreteMeasure),
    Fixed(Node),
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub n_paths: u64,
    pub seed: u64,
    pub max_steps: u64,
    pub start: StartMode,
}

impl SimConfig {
    /// Default step cap from diffusive scaling of the domain diameter.
    pub fn default_max_steps(spec: &LatticeSpec) -> u64 {
        (100.0 * (spec.r_outer / spec.h).powi(2)).ceil() as u64
    }
}

#[derive(Clone, Debug)]
pub struct SimReport {
    pub terminal: DiscreteMeasure,
    pub counts: Vec<u64>,
    pub n_paths: u64,
    pub n_completed: u64,
    pub capped: u64,
    pub capped_flag: bool,
    pub mean_steps: f64,
    /// Standard error of the mean step count.
    pub steps_sem: f64,
    /// (shell radius, terminal mass) histogram.
    pub per_shell: Vec<(f64, f64)>,
}

struct PathAccum {
    counts: Vec<u64>,
    steps: u128,
    steps_sq: u128,
    capped: u64,
}

impl PathAccum {
    fn new(n: usize) -> Self {
        PathAccum {
            counts: vec![0; n],
            steps: 0,
            steps_sq: 0,
            capped: 0,
        }
    }
    fn merge(mut self, other: PathAccum) -> PathAccum {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self.steps += other.steps;
        self.steps_sq += other.steps_sq;
        self.capped += other.capped;
        self
    }
}

pub fn simulate(
    spec: &LatticeSpec,
    kernel: &WalkKernel,
    policy: &BarrierPolicy,
    config: &SimConfig,
) -> Result<SimReport> {
    if config.n_paths == 0 {
        return Err(Error::InvalidInput("n_paths must be >= 1".into()));
    }
    let n = spec.n_nodes();
    // Start CDF over node indices, each mapped to its policy row.
    let mut cdf: Vec<(f64, usize, usize)> = Vec::new();
    match &config.start {
        StartMode::Fixed(z) => {
            let zi = spec
                .node_index(z)
                .ok_or_else(|| Error::SupportOffLattice(z.coords(spec.d).to_vec()))?;
            let p = policy
                .starts
                .binary_search(&zi)
                .map_err(|_| Error::PolicyGap(z.coords(spec.d).to_vec()))?;
            cdf.push((1.0, zi, p));
        }
        StartMode::FromMu(mu) => {
            let total = mu.total();
            let mut acc = 0.0;
            for (z, &m) in mu.iter() {
                let zi = spec
                    .node_index(z)
                    .ok_or_else(|| Error::SupportOffLattice(z.coords(spec.d).to_vec()))?;
                let p = policy
                    .starts
                    .binary_search(&zi)
                    .map_err(|_| Error::PolicyGap(z.coords(spec.d).to_vec()))?;
                acc += m / total;
                cdf.push((acc, zi, p));
            }
        }
    }
    let n_dirs = 2 * spec.d;
    let step_prob = kernel.step_prob();
    debug_assert!((step_prob * n_dirs as f64 - 1.0).abs() < 1e-12);

    let run_path = |path_id: u64| -> (usize, u64, bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(path_id);
        let u: f64 = rng.gen();
        let &(_, start, p) = cdf
            .iter()
            .find(|&&(c, _, _)| u < c)
            .unwrap_or_else(|| cdf.last().unwrap());
        let rho = &policy.rho[p];
        let mut cur = start;
        let mut steps = 0u64;
        loop {
            if !spec.interior[cur] {
                return (cur, steps, false);
            }
            let r = rho[cur];
            if r >= 1.0 || (r > 0.0 && rng.gen::<f64>() < r) {
                return (cur, steps, false);
            }
            if steps >= config.max_steps {
                return (cur, steps, true);
            }
            let dir = rng.gen_range(0..n_dirs);
            cur = spec.neighbors[cur][dir];
            steps += 1;
        }
    };

    let acc = (0..config.n_paths)
        .into_par_iter()
        .fold(
            || PathAccum::new(n),
            |mut a, path_id| {
                let (z, steps, capped) = run_path(path_id);
                if capped {
                    a.capped += 1;
                } else {
                    a.counts[z] += 1;
                    a.steps += steps as u128;
                    a.steps_sq += (steps as u128) * (steps as u128);
                }
                a
            },
        )
        .reduce(|| PathAccum::new(n), PathAccum::merge);

    let n_completed = config.n_paths - acc.capped;
    if n_completed == 0 {
        return Err(Error::InvalidInput("all paths hit the step cap".into()));
    }
    let nc = n_completed as f64;
    let mean_steps = acc.steps as f64 / nc;
    let var = (acc.steps_sq as f64 / nc - mean_steps * mean_steps).max(0.0);
    let steps_sem = (var / nc).sqrt();
    let mut terminal = DiscreteMeasure::new();
    let mut per_shell = vec![0.0; spec.shells.len()];
    for (z, &c) in acc.counts.iter().enumerate() {
        if c > 0 {
            let w = c as f64 / nc;
            terminal.add(spec.nodes[z], w)?;
            per_shell[spec.shell_of[z]] += w;
        }
    }
    Ok(SimReport {
        terminal,
        counts: acc.counts,
        n_paths: config.n_paths,
        n_completed,
        capped: acc.capped,
        capped_flag: acc.capped as f64 > 0.001 * config.n_paths as f64,
        mean_steps,
        steps_sem,
        per_shell: spec
            .shells
            .iter()
            .map(|s| s.radius)
            .zip(per_shell)
            .collect(),
    })
}

#[derive(Clone, Debug)]
pub struct CompareOutcome {
    pub pass: bool,
    pub distance: f64,
    pub bound: f64,
}

/// Pass iff W1(empirical, target) is below a 3-sigma multinomial envelope.
pub fn compare(report: &SimReport, target: &DiscreteMeasure, h: f64) -> Result<CompareOutcome> {
    if (report.terminal.total() - target.total()).abs() > 1e-9 {
        return Err(Error::MassMismatch(report.terminal.total(), target.total()));
    }
    let distance = wasserstein1(&report.terminal, target, h)?;
    let support: Vec<&Node> = report
        .terminal
        .iter()
        .map(|(z, _)| z)
        .chain(target.iter().map(|(z, _)| z))
        .collect();
    let mut diam = 0.0f64;
    for (i, a) in support.iter().enumerate() {
        for b in &support[i + 1..] {
            let d2: f64 = (0..3).map(|k| ((a.0[k] - b.0[k]) as f64).powi(2)).sum();
            diam = diam.max(h * d2.sqrt());
        }
    }
    let n = report.n_completed as f64;
    let mut s_sum = 0.0;
    let mut s_sq = 0.0;
    for (_, &p) in target.iter() {
        let s = (p * (1.0 - p) / n).sqrt();
        s_sum += s;
        s_sq += s * s;
    }
    // W1 <= diam/2 * sum |p_hat - p|; mean + 3 sigma of the deviation sum.
    let bound = diam * (0.5 * s_sum + 1.5 * s_sq.sqrt());
    Ok(CompareOutcome {
        pass: distance <= bound,
        distance,
        bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{build_policy, BarrierPolicy};
    use crate::embed::{build_problem, solve, EmbeddingProblem, Method};
    use crate::lattice::build_lattice;

    fn trivial() -> (LatticeSpec, DiscreteMeasure, BarrierPolicy) {
        let spec = build_lattice(2, 1.0, 3.0, 0.5).unwrap();
        let kernel = WalkKernel::new(&spec);
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
        let built = build_problem(
            &spec,
            &kernel,
            EmbeddingProblem {
                mu: mu.clone(),
                nu: nu.clone(),
                alpha: 1.0,
                sense: crate::lp::Sense::Min,
                allow_boundary_target: false,
                symmetry_reduction: false,
            },
        )
        .unwrap();
        let sol = solve(&spec, &kernel, &built, Method::Exact).unwrap();
        let policy = build_policy(&spec, &sol).unwrap();
        (spec, nu, policy)
    }

    #[test]
    fn one_step_stop_law_within_envelope() {
        let (spec, nu, policy) = trivial();
        let kernel = WalkKernel::new(&spec);
        let config = SimConfig {
            n_paths: 20_000,
            seed: 11,
            max_steps: SimConfig::default_max_steps(&spec),
            start: StartMode::Fixed(Node([0, 0, 0])),
        };
        let report = simulate(&spec, &kernel, &policy, &config).unwrap();
        assert_eq!(report.capped, 0);
        assert_eq!(report.mean_steps, 1.0);
        assert_eq!(report.steps_sem, 0.0);
        let out = compare(&report, &nu, spec.h).unwrap();
        assert!(out.pass, "W1 {} > bound {}", out.distance, out.bound);
    }

    #[test]
    fn immediate_stop_policy() {
        let (spec, _, mut policy) = trivial();
        let kernel = WalkKernel::new(&spec);
        for r in &mut policy.rho {
            for v in r.iter_mut() {
                *v = 1.0;
            }
        }
        let config = SimConfig {
            n_paths: 1000,
            seed: 3,
            max_steps: 100,
            start: StartMode::Fixed(Node([0, 0, 0])),
        };
        let report = simulate(&spec, &kernel, &policy, &config).unwrap();
        assert_eq!(report.mean_steps, 0.0);
        assert_eq!(report.terminal.mass(&Node([0, 0, 0])), 1.0);
    }

    #[test]
    fn reports_identical_across_thread_counts() {
        let (spec, _, policy) = trivial();
        let kernel = WalkKernel::new(&spec);
        let config = SimConfig {
            n_paths: 10_000,
            seed: 42,
            max_steps: 1000,
            start: StartMode::Fixed(Node([0, 0, 0])),
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| simulate(&spec, &kernel, &policy, &config).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.mean_steps.to_bits(), b.mean_steps.to_bits());
        assert_eq!(a.capped, b.capped);
    }

    #[test]
    fn start_outside_policy_is_a_gap() {
        let (spec, _, policy) = trivial();
        let kernel = WalkKernel::new(&spec);
        let config = SimConfig {
            n_paths: 10,
            seed: 0,
            max_steps: 100,
            start: StartMode::Fixed(Node([1, 1, 0])),
        };
        assert!(matches!(
            simulate(&spec, &kernel, &policy, &config),
            Err(Error::PolicyGap(_))
        ));
    }

    #[test]
    fn shifted_target_fails_compare() {
        let (spec, nu, policy) = trivial();
        let kernel = WalkKernel::new(&spec);
        let config = SimConfig {
            n_paths: 100_000,
            seed: 5,
            max_steps: 100,
            start: StartMode::Fixed(Node([0, 0, 0])),
        };
        let report = simulate(&spec, &kernel, &policy, &config).unwrap();
        let shifted = DiscreteMeasure::from_atoms(
            nu.iter()
                .map(|(z, &m)| (Node([z.0[0] + 1, z.0[1], 0]), m)),
        )
        .unwrap();
        let out = compare(&report, &shifted, spec.h).unwrap();
        assert!(!out.pass);
    }
}
