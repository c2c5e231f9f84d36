use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use skembed_core::barrier::{
    build_policy, common_mass_check, randomization_profile, Regime, DEFAULT_MASS_TOL,
};
use skembed_core::embed::{
    build_problem, feasibility, solve, verify_dual, EmbeddingProblem, Feasibility, Method,
    StoppingSolution,
};
use skembed_core::envelope::{envelope_onestep, envelope_onestep_lp, value_function, GridFunction};
use skembed_core::gain::{self, ScanVerdict};
use skembed_core::lattice::{build_lattice, LatticeSpec, Node, WalkKernel};
use skembed_core::lp::Sense;
use skembed_core::mc;
use skembed_core::measures::{modulus_pushforward, DiscreteMeasure};
use skembed_core::order;
use skembed_core::presets;

const GAP_TOL: f64 = 1e-8;
const WITNESS_RESIDUAL_TOL: f64 = 1e-9;
const WITNESS_GAP_MIN: f64 = 1e-10;
const ATTAIN_TOL: f64 = 1e-10;
const BRIDGE_TOL: f64 = 1e-8;
const FD_ORDER_MIN: f64 = 1.9;
const FD_ABS_TOL: f64 = 1e-6;

fn criterion(tag: &str, body: impl FnOnce() -> String) {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(detail) => println!("{tag}: pass  [{detail}]"),
        Err(e) => {
            println!("{tag}: FAIL");
            resume_unwind(e);
        }
    }
}

fn solve_pair(
    spec: &LatticeSpec,
    kernel: &WalkKernel,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    alpha: f64,
    sense: Sense,
) -> StoppingSolution {
    let reduce = skembed_core::embed::is_group_invariant(spec, mu)
        && skembed_core::embed::is_group_invariant(spec, nu);
    let built = build_problem(
        spec,
        kernel,
        EmbeddingProblem {
            mu: mu.clone(),
            nu: nu.clone(),
            alpha,
            sense,
            allow_boundary_target: true,
            symmetry_reduction: reduce,
        },
    )
    .unwrap();
    solve(spec, kernel, &built, Method::Exact).unwrap()
}

#[test]
fn c01_duality() {
    criterion("criterion 01 duality", || {
        let cases_d2 = [
            (1.0, 2.0, 1.0, Sense::Min),
            (1.0, 3.0, 1.0, Sense::Max),
            (1.5, 3.0, 0.5, Sense::Min),
            (2.0, 3.5, 3.0, Sense::Max),
            (1.0, 2.5, 2.0, Sense::Min),
        ];
        let cases_d3 = [
            (1.0, 2.0, 1.0, Sense::Min),
            (1.0, 3.0, 3.0, Sense::Max),
            (2.0, 3.5, 0.5, Sense::Min),
            (1.0, 3.5, 1.0, Sense::Max),
            (2.0, 4.0, 2.0, Sense::Min),
        ];
        let mut worst_gap = 0.0f64;
        let mut run = |d: usize, h: f64, r_outer: f64, cases: &[(f64, f64, f64, Sense)]| {
            for &(r_mu, r_nu, alpha, sense) in cases {
                let inst = presets::uniform_shell(d, h, r_outer, r_mu, r_nu, alpha, sense).unwrap();
                let kernel = WalkKernel::new(&inst.spec);
                let sol = solve_pair(&inst.spec, &kernel, &inst.mu, &inst.nu, alpha, sense);
                let report = verify_dual(&inst.spec, &kernel, &sol, GAP_TOL).unwrap();
                assert!(
                    report.gap <= GAP_TOL,
                    "{}: gap {} exceeds {GAP_TOL}",
                    inst.name,
                    report.gap
                );
                assert_eq!(report.majorant_violations, 0, "{}", inst.name);
                assert_eq!(report.superharmonic_violations, 0, "{}", inst.name);
                worst_gap = worst_gap.max(report.gap);
            }
        };
        run(2, 0.5, 4.0, &cases_d2);
        run(3, 1.0, 5.0, &cases_d3);
        format!("10 instances, worst gap {worst_gap:.2e}")
    });
}

fn random_measure(spec: &LatticeSpec, rng: &mut StdRng) -> DiscreteMeasure {
    let interior: Vec<usize> = (0..spec.n_nodes()).filter(|&i| spec.interior[i]).collect();
    let n_atoms = rng.gen_range(1..=3usize);
    let mut m = DiscreteMeasure::new();
    for _ in 0..n_atoms {
        let i = interior[rng.gen_range(0..interior.len())];
        m.add(spec.nodes[i], rng.gen_range(0.05..1.0)).unwrap();
    }
    m.normalized().unwrap()
}

#[test]
fn c02_order_equivalence() {
    criterion("criterion 02 order equivalence", || {
        let mut in_order = 0usize;
        let mut not_in_order = 0usize;
        for (d, r_outer) in [(2usize, 3.0f64), (3, 3.0)] {
            let spec = build_lattice(d, 1.0, r_outer, 0.5).unwrap();
            let kernel = WalkKernel::new(&spec);
            let mut rng = StdRng::seed_from_u64(20_260_825 + d as u64);
            for _ in 0..50 {
                let mu = random_measure(&spec, &mut rng);
                let nu = random_measure(&spec, &mut rng);
                let a = order::check_order_lp(&spec, &kernel, &mu, &nu).unwrap();
                let b = order::check_order_potential(&spec, &kernel, &mu, &nu).unwrap();
                assert_eq!(a.in_order, b.in_order, "checkers disagree in d={d}");
                for v in [&a, &b] {
                    if v.in_order {
                        continue;
                    }
                    let w = v.witness.as_ref().expect("missing witness");
                    let (residual, gap) = order::witness_residuals(&spec, &kernel, &mu, &nu, w);
                    assert!(residual <= WITNESS_RESIDUAL_TOL, "residual {residual}");
                    assert!(gap > WITNESS_GAP_MIN, "gap {gap}");
                }
                if a.in_order {
                    in_order += 1;
                } else {
                    not_in_order += 1;
                }
            }
        }
        format!("100 pairs agree, {in_order} in order / {not_in_order} with verified witnesses")
    });
}

#[test]
fn c03_annulus_example() {
    criterion("criterion 03 annulus example", || {
        let (u, v) = presets::annulus_pair(0.5).unwrap();
        let ku = WalkKernel::new(&u.spec);
        let (fu, _) = feasibility(&u.spec, &ku, &u.mu, &u.nu).unwrap();
        assert!(
            matches!(fu, Feasibility::Infeasible(_)),
            "annulus domain should be infeasible"
        );
        let kv = WalkKernel::new(&v.spec);
        let (fv, _) = feasibility(&v.spec, &kv, &v.mu, &v.nu).unwrap();
        assert!(
            matches!(fv, Feasibility::Feasible),
            "ball domain should be feasible"
        );
        "annulus infeasible with certificate, ball feasible".into()
    });
}

#[test]
fn c04_cap_structure() {
    criterion("criterion 04 cap structure", || {
        let spec = build_lattice(3, 1.0, 5.0, 1e-9).unwrap();
        let kernel = WalkKernel::new(&spec);
        let mu = presets::sphere_law(&spec, &kernel, 1.0).unwrap();
        let inner = presets::sphere_law(&spec, &kernel, 2.0).unwrap();
        let outer = presets::sphere_law(&spec, &kernel, 3.5).unwrap();
        let nu = DiscreteMeasure::mix(&[(0.5, &inner), (0.5, &outer)]);
        let mut negative_control_violations = 0usize;
        let mut checked = 0usize;
        for alpha in [0.5, 1.0, 3.0] {
            for sense in [Sense::Min, Sense::Max] {
                let sol = solve_pair(&spec, &kernel, &mu, &nu, alpha, sense);
                let regime = Regime::of(sense, alpha).unwrap();
                let report =
                    skembed_core::barrier::verify_cap_structure(
                        &spec, &sol, regime, None, DEFAULT_MASS_TOL,
                    )
                    .unwrap();
                assert_eq!(
                    report.violations, 0,
                    "alpha {alpha} {sense:?}: {} cap violations",
                    report.violations
                );
                checked += report.rows.len();
                if alpha == 1.0 && sense == Sense::Min {
                    // Mirrored regime on the same solution must light up.
                    let wrong = Regime::MinAlphaGt2;
                    let bad = skembed_core::barrier::verify_cap_structure(
                        &spec, &sol, wrong, None, DEFAULT_MASS_TOL,
                    )
                    .unwrap();
                    negative_control_violations = bad.violations;
                }
            }
        }
        assert!(
            negative_control_violations > 0,
            "wrong-regime control reported no violations"
        );
        format!(
            "6 instances / {checked} cap rows clean, wrong-regime control flags {negative_control_violations}"
        )
    });
}

#[test]
fn c05_common_mass() {
    criterion("criterion 05 common mass", || {
        let cases: [(usize, &[i32], f64); 5] = [
            (2, &[1, 1], 0.75),
            (2, &[1, 1], 1.0),
            (2, &[2, 0], 0.75),
            (2, &[2, 0], 1.0),
            (3, &[1, 1, 0], 0.75),
        ];
        let mut worst = 0.0f64;
        for (d, atom, alpha) in cases {
            let inst =
                presets::overlap_pair(d, 1.0, 3.0, Node::from_slice(atom), alpha).unwrap();
            let kernel = WalkKernel::new(&inst.spec);
            let sol = solve_pair(&inst.spec, &kernel, &inst.mu, &inst.nu, alpha, Sense::Min);
            let (ok, deficit) = common_mass_check(&inst.spec, &sol).unwrap();
            assert!(ok, "{}: diagonal deficit {deficit}", inst.name);
            worst = worst.min(deficit);
        }
        format!("5 instances, worst diagonal deficit {worst:.2e}")
    });
}

fn two_band_profile(
    spec: &LatticeSpec,
    kernel: &WalkKernel,
    y: &Node,
) -> skembed_core::RadialProfile {
    let a = presets::exit_law(spec, kernel, *y, 2.0).unwrap();
    let b = presets::exit_law(spec, kernel, *y, 3.0).unwrap();
    let psi = DiscreteMeasure::mix(&[(0.5, &a), (0.5, &b)]);
    modulus_pushforward(&psi, spec).unwrap()
}

#[test]
fn c06_gain_monotonicity() {
    criterion("criterion 06 gain monotonicity", || {
        let mut n_rows = 0usize;
        for (d, h, r_outer, y, r_x) in [
            (2usize, 0.5, 4.0, Node::from_slice(&[2, 0]), 5f64.sqrt() * 0.5),
            (3, 1.0, 5.0, Node::from_slice(&[1, 0, 0]), 3.0),
        ] {
            let spec = build_lattice(d, h, r_outer, 1e-9).unwrap();
            let kernel = WalkKernel::new(&spec);
            let profile = two_band_profile(&spec, &kernel, &y);
            for (alpha, want) in [
                (1.0, ScanVerdict::StrictlyDecreasing),
                (3.0, ScanVerdict::StrictlyIncreasing),
                (2.0, ScanVerdict::Constant),
            ] {
                let table =
                    gain::monotonicity_scan(&spec, &kernel, r_x, &y, &profile, alpha).unwrap();
                assert_eq!(table.verdict, want, "d={d} alpha={alpha}");
                n_rows += table.rows.len();
            }
            // Attaining laws reproduce the bounds.
            let x = table_probe(&spec, &y, r_x);
            let b = gain::gain_bounds(&spec, &kernel, &x, &y, &profile, 1.0).unwrap();
            let lo = gain::gain(&spec, &x, &b.sigma_lower, 1.0).unwrap();
            let hi = gain::gain(&spec, &x, &b.sigma_upper, 1.0).unwrap();
            assert!(
                (lo - b.lower).abs() <= ATTAIN_TOL * (1.0 + b.lower.abs()),
                "lower bound not attained: {lo} vs {}",
                b.lower
            );
            assert!(
                (hi - b.upper).abs() <= ATTAIN_TOL * (1.0 + b.upper.abs()),
                "upper bound not attained: {hi} vs {}",
                b.upper
            );
        }
        format!("6 scans / {n_rows} rows, both attainments within {ATTAIN_TOL:.0e}")
    });
}

fn table_probe(spec: &LatticeSpec, y: &Node, r_x: f64) -> Node {
    // Farthest scan node from y on the r_x shell.
    let si = spec
        .shells
        .iter()
        .position(|s| (s.radius - r_x).abs() <= 1e-9)
        .unwrap();
    let mut best = (f64::NEG_INFINITY, spec.nodes[0]);
    for z in 0..spec.n_nodes() {
        if spec.shell_of[z] != si || spec.nodes[z].is_zero() {
            continue;
        }
        let dist = skembed_core::lattice::cost(&spec.nodes[z], y, spec.h, 1.0);
        if dist > best.0 {
            best = (dist, spec.nodes[z]);
        }
    }
    best.1
}

fn fd_laplacian(z: &[f64], alpha: f64, step: f64) -> f64 {
    let mut acc = 0.0;
    let center = gain::h_field(z, alpha).unwrap();
    for k in 0..z.len() {
        let mut plus = z.to_vec();
        plus[k] += step;
        let mut minus = z.to_vec();
        minus[k] -= step;
        acc += gain::h_field(&plus, alpha).unwrap() + gain::h_field(&minus, alpha).unwrap()
            - 2.0 * center;
    }
    acc / (step * step)
}

#[test]
fn c07_laplacian_sign_structure() {
    criterion("criterion 07 laplacian sign structure", || {
        let points = [
            [0.3, -0.4, -1.1],
            [-0.8, 0.5, -0.9],
            [1.2, 0.7, -1.5],
        ];
        let mut worst_order = f64::INFINITY;
        for alpha in [0.5, 1.0, 1.5, 2.5, 3.0, 3.5] {
            for z in &points {
                let exact = gain::laplacian_h(z, alpha).unwrap();
                let e2 = (fd_laplacian(z, alpha, 1e-2) - exact).abs();
                let e3 = (fd_laplacian(z, alpha, 1e-3) - exact).abs();
                let e4 = (fd_laplacian(z, alpha, 1e-4) - exact).abs();
                let order = (e2 / e3).log10();
                assert!(
                    order >= FD_ORDER_MIN,
                    "alpha {alpha} at {z:?}: observed order {order}"
                );
                assert!(
                    e4 <= FD_ABS_TOL * (1.0 + exact.abs()),
                    "alpha {alpha} at {z:?}: fd error {e4}"
                );
                worst_order = worst_order.min(order);
            }
        }
        // Sign on the lower half-space at sampled points.
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let z = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..-0.1),
            ];
            for alpha in [0.5, 1.0, 1.5] {
                assert!(gain::laplacian_h(&z, alpha).unwrap() < 0.0, "alpha {alpha} {z:?}");
            }
            for alpha in [2.5, 3.0, 3.5] {
                assert!(gain::laplacian_h(&z, alpha).unwrap() > 0.0, "alpha {alpha} {z:?}");
            }
        }
        format!("worst observed order {worst_order:.2}, signs hold at 100 points")
    });
}

#[test]
fn c08_envelope_and_value_bridge() {
    criterion("criterion 08 envelope and value bridge", || {
        let spec = build_lattice(2, 1.0, 3.0, 0.5).unwrap();
        let kernel = WalkKernel::new(&spec);
        assert!(spec.n_nodes() <= 200);
        let f = GridFunction::from_fn(&spec, |z| {
            ((z.0[0] * 13 + z.0[1] * 7) % 5) as f64 - 0.3 * z.norm()
        });
        // Monotone decrease of the fixed-point sweeps, exactly.
        let p = kernel.step_prob();
        let mut g = f.clone();
        loop {
            let mut next = g.values.clone();
            for x in 0..spec.n_nodes() {
                if spec.interior[x] {
                    let avg: f64 =
                        spec.neighbors[x].iter().map(|&w| g.values[w]).sum::<f64>() * p;
                    next[x] = f.values[x].min(avg);
                }
            }
            for (a, b) in g.values.iter().zip(&next) {
                assert!(b <= a, "sweep increased a value");
            }
            let delta = g.max_abs_diff(&GridFunction { values: next.clone() });
            g.values = next;
            if delta <= 1e-13 {
                break;
            }
        }
        // Limit: dominated, one-step subharmonic, idempotent, matches the LP oracle.
        for x in 0..spec.n_nodes() {
            assert!(g.values[x] <= f.values[x] + 1e-12);
            if spec.interior[x] {
                let avg: f64 = spec.neighbors[x].iter().map(|&w| g.values[w]).sum::<f64>() * p;
                assert!(g.values[x] <= avg + 1e-12, "not subharmonic at {x}");
            }
        }
        let (gg, _) = envelope_onestep(&spec, &kernel, &g, 100_000, 1e-13);
        assert!(gg.max_abs_diff(&g) <= 1e-12, "not idempotent");
        let oracle = envelope_onestep_lp(&spec, &kernel, &f).unwrap();
        let lp_diff = oracle.max_abs_diff(&g);
        assert!(lp_diff <= BRIDGE_TOL, "LP oracle differs by {lp_diff}");
        // Dual bridge: the superharmonic value of the solved dual reward
        // reproduces the per-start dual values.
        let inst = presets::uniform_shell(2, 1.0, 3.0, 1.0, 2.0, 1.0, Sense::Min).unwrap();
        let sol = solve_pair(&inst.spec, &kernel, &inst.mu, &inst.nu, 1.0, Sense::Min);
        let mut worst_bridge = 0.0f64;
        for (p, &xi) in sol.starts.iter().enumerate() {
            let vf = value_function(&inst.spec, &kernel, &sol.beta, xi, Some(1.0));
            let diff = (vf.values[xi] - sol.value[p].values[xi]).abs();
            worst_bridge = worst_bridge.max(diff);
        }
        assert!(worst_bridge <= BRIDGE_TOL, "bridge gap {worst_bridge}");
        format!("LP oracle diff {lp_diff:.2e}, dual bridge gap {worst_bridge:.2e}")
    });
}

#[test]
fn c09_monte_carlo_replay() {
    criterion("criterion 09 monte carlo replay", || {
        let instances = [
            presets::uniform_shell(2, 1.0, 3.0, 1.0, 2.0, 1.0, Sense::Min).unwrap(),
            presets::two_shell(2, 1.0, 4.0, 0.5, 1.0, 2.0, 3.0, 1.0, Sense::Min).unwrap(),
            presets::uniform_shell(3, 1.0, 3.0, 1.0, 2.0, 1.0, Sense::Min).unwrap(),
        ];
        let mut details = Vec::new();
        for (k, inst) in instances.iter().enumerate() {
            let kernel = WalkKernel::new(&inst.spec);
            let sol = solve_pair(&inst.spec, &kernel, &inst.mu, &inst.nu, inst.alpha, inst.sense);
            let policy = build_policy(&inst.spec, &sol).unwrap();
            let config = mc::SimConfig {
                n_paths: 100_000,
                seed: 20_260_825,
                max_steps: mc::SimConfig::default_max_steps(&inst.spec),
                start: mc::StartMode::FromMu(inst.mu.clone()),
            };
            let report = mc::simulate(&inst.spec, &kernel, &policy, &config).unwrap();
            let target = sol.target_measure(&inst.spec);
            let outcome = mc::compare(&report, &target, inst.spec.h).unwrap();
            assert!(
                outcome.pass,
                "{}: W1 {} exceeds envelope {}",
                inst.name, outcome.distance, outcome.bound
            );
            let step_gap = (report.mean_steps - sol.e_tau).abs();
            assert!(
                step_gap <= 3.0 * report.steps_sem,
                "{}: mean steps off by {step_gap} (3 sigma = {})",
                inst.name,
                3.0 * report.steps_sem
            );
            if k == 0 {
                let run_in = |threads: usize| {
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(threads)
                        .build()
                        .unwrap()
                        .install(|| mc::simulate(&inst.spec, &kernel, &policy, &config).unwrap())
                };
                let one = run_in(1);
                let four = run_in(4);
                assert_eq!(one.counts, four.counts, "counts differ across thread counts");
                assert_eq!(
                    one.mean_steps.to_bits(),
                    four.mean_steps.to_bits(),
                    "mean steps differ across thread counts"
                );
            }
            details.push(format!("W1 {:.1e}<{:.1e}", outcome.distance, outcome.bound));
        }
        format!(
            "3 instances ({}), thread-count invariance exact",
            details.join(", ")
        )
    });
}

#[test]
fn c10_randomization_trend() {
    criterion("criterion 10 randomization trend", || {
        let fraction = |h: f64| {
            let spec = build_lattice(3, h, 3.0, h / 2.0).unwrap();
            let kernel = WalkKernel::new(&spec);
            let mu = presets::sphere_law(&spec, &kernel, 1.0).unwrap();
            let inner = presets::sphere_law(&spec, &kernel, 1.4).unwrap();
            let outer = presets::sphere_law(&spec, &kernel, 2.0).unwrap();
            let nu = DiscreteMeasure::mix(&[(0.5, &inner), (0.5, &outer)]);
            let sol = solve_pair(&spec, &kernel, &mu, &nu, 1.0, Sense::Min);
            let policy = build_policy(&spec, &sol).unwrap();
            randomization_profile(&spec, &sol, &policy).aggregate
        };
        let coarse = fraction(1.0);
        let fine = fraction(0.5);
        assert!(
            fine <= coarse + 1e-12,
            "randomized fraction grew under refinement: {coarse} -> {fine}"
        );
        format!("randomized stop-mass fraction {coarse:.3} (h=1) -> {fine:.3} (h=0.5)")
    });
}
