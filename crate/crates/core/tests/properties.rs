use proptest::prelude::*;

use skembed_core::embed;
use skembed_core::envelope::{envelope_onestep, GridFunction};
use skembed_core::lattice::{build_lattice, LatticeSpec, WalkKernel};
use skembed_core::lp::{solve_exact, LinearProgram, LpStatus, RowSense, Sense};
use skembed_core::measures::{
    common_mass, modulus_pushforward, symmetrize, wasserstein1, DiscreteMeasure,
};
use skembed_core::order;

fn spec2() -> LatticeSpec {
    build_lattice(2, 1.0, 3.0, 0.5).unwrap()
}

fn measure_on(spec: &LatticeSpec, picks: &[(usize, f64)], interior_only: bool) -> DiscreteMeasure {
    let mut m = DiscreteMeasure::new();
    for &(i, w) in picks {
        let idx = i % spec.n_nodes();
        if interior_only && !spec.interior[idx] {
            continue;
        }
        m.add(spec.nodes[idx], w).unwrap();
    }
    if m.is_empty() {
        m.add(spec.nodes[if interior_only { spec.origin().unwrap() } else { 0 }], 1.0)
            .unwrap();
    }
    m.normalized().unwrap()
}

fn picks(max_atoms: usize) -> impl Strategy<Value = Vec<(usize, f64)>> {
    prop::collection::vec((0usize..64, 0.05f64..1.0), 1..=max_atoms)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn symmetrization_idempotent_and_profile_preserving(p in picks(5)) {
        let spec = spec2();
        let m = measure_on(&spec, &p, false);
        let s = symmetrize(&m, &spec).unwrap();
        let ss = symmetrize(&s, &spec).unwrap();
        for (z, &mass) in ss.iter() {
            prop_assert!((mass - s.mass(z)).abs() < 1e-12);
        }
        let pm = modulus_pushforward(&m, &spec).unwrap();
        let ps = modulus_pushforward(&s, &spec).unwrap();
        prop_assert!(pm.max_diff(&ps) < 1e-12);
        prop_assert!((s.total() - m.total()).abs() < 1e-12);
    }

    #[test]
    fn common_mass_bounded_by_both(p in picks(5), q in picks(5)) {
        let spec = spec2();
        let a = measure_on(&spec, &p, false);
        let b = measure_on(&spec, &q, false);
        let c = common_mass(&a, &b);
        for (z, &mass) in c.iter() {
            prop_assert!(mass <= a.mass(z) + 1e-15);
            prop_assert!(mass <= b.mass(z) + 1e-15);
        }
    }

    #[test]
    fn transport_distance_is_a_metric(p in picks(4), q in picks(4), r in picks(4)) {
        let spec = spec2();
        let a = measure_on(&spec, &p, false);
        let b = measure_on(&spec, &q, false);
        let c = measure_on(&spec, &r, false);
        let ab = wasserstein1(&a, &b, spec.h).unwrap();
        let ba = wasserstein1(&b, &a, spec.h).unwrap();
        let bc = wasserstein1(&b, &c, spec.h).unwrap();
        let ac = wasserstein1(&a, &c, spec.h).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert!(wasserstein1(&a, &a, spec.h).unwrap() < 1e-9);
    }

    #[test]
    fn lp_scaling_and_slackness(
        costs in prop::collection::vec(0.1f64..5.0, 6),
        supply in prop::collection::vec(0.1f64..2.0, 2),
        k in 0.1f64..10.0,
    ) {
        // 2x3 transport problem: supplies to three sinks with fixed demands.
        let total: f64 = supply.iter().sum();
        let demand = [total * 0.5, total * 0.3, total * 0.2];
        let build = |scale: f64| {
            let mut prog = LinearProgram::new(6, Sense::Min);
            for j in 0..6 {
                prog.objective[j] = costs[j] * scale;
            }
            for i in 0..2 {
                let cols: Vec<(usize, f64)> = (0..3).map(|j| (3 * i + j, 1.0)).collect();
                prog.add_row(RowSense::Eq, supply[i], &cols);
            }
            for j in 0..3 {
                let cols: Vec<(usize, f64)> = (0..2).map(|i| (3 * i + j, 1.0)).collect();
                prog.add_row(RowSense::Eq, demand[j], &cols);
            }
            prog
        };
        let base = solve_exact(&build(1.0)).unwrap();
        let scaled = solve_exact(&build(k)).unwrap();
        prop_assert_eq!(base.status, LpStatus::Optimal);
        prop_assert_eq!(scaled.status, LpStatus::Optimal);
        prop_assert!((scaled.objective - k * base.objective).abs() < 1e-7 * (1.0 + k * base.objective.abs()));
        // a base optimal support stays optimal: re-evaluate under scaled costs
        let val: f64 = base.primal.iter().zip(&costs).map(|(x, c)| x * c * k).sum();
        prop_assert!((val - scaled.objective).abs() < 1e-7 * (1.0 + scaled.objective.abs()));
        // complementary slackness via reduced costs
        let r = skembed_core::lp::reduced_costs(&build(1.0), &base.duals);
        for j in 0..6 {
            prop_assert!((base.primal[j] * r[j]).abs() < 1e-8 * (1.0 + costs[j]));
        }
    }

    #[test]
    fn order_routes_agree_with_sound_witnesses(p in picks(3), q in picks(3)) {
        let spec = spec2();
        let kernel = WalkKernel::new(&spec);
        let mu = measure_on(&spec, &p, true);
        let nu = measure_on(&spec, &q, true);
        let a = order::check_order_lp(&spec, &kernel, &mu, &nu).unwrap();
        let b = order::check_order_potential(&spec, &kernel, &mu, &nu).unwrap();
        prop_assert_eq!(a.in_order, b.in_order);
        for v in [&a, &b] {
            if !v.in_order {
                let w = v.witness.as_ref().unwrap();
                let (residual, gap) = order::witness_residuals(&spec, &kernel, &mu, &nu, w);
                prop_assert!(residual <= 1e-9);
                prop_assert!(gap > 1e-10);
            }
        }
        // feasibility must match the order verdict
        let (feas, _) = embed::feasibility(&spec, &kernel, &mu, &nu).unwrap();
        let feasible = matches!(feas, embed::Feasibility::Feasible);
        prop_assert_eq!(feasible, a.in_order);
    }

    #[test]
    fn envelope_monotone_order_preserving_idempotent(
        vals in prop::collection::vec(-3.0f64..3.0, 64),
        bump in 0.0f64..2.0,
    ) {
        let spec = spec2();
        let kernel = WalkKernel::new(&spec);
        let f = GridFunction {
            values: (0..spec.n_nodes()).map(|i| vals[i % vals.len()]).collect(),
        };
        let (g, run) = envelope_onestep(&spec, &kernel, &f, 100_000, 1e-13);
        prop_assert!(run.converged);
        for x in 0..spec.n_nodes() {
            prop_assert!(g.values[x] <= f.values[x] + 1e-12);
        }
        let (gg, _) = envelope_onestep(&spec, &kernel, &g, 100_000, 1e-13);
        prop_assert!(gg.max_abs_diff(&g) < 1e-9);
        let fp = GridFunction {
            values: f.values.iter().map(|v| v + bump).collect(),
        };
        let (gp, _) = envelope_onestep(&spec, &kernel, &fp, 100_000, 1e-13);
        for x in 0..spec.n_nodes() {
            prop_assert!(g.values[x] <= gp.values[x] + 1e-12);
        }
    }
}
