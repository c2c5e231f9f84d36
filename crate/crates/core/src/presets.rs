//! Instance generators. Sphere measures are discretized as exit laws of the
//! walk (discrete harmonic measure), which keeps generated pairs in discrete
//! subharmonic order by construction.

use crate::chain::KilledChain;
use crate::error::{Error, Result};
use crate::lattice::{build_annulus, build_lattice, LatticeSpec, Node, WalkKernel};
use crate::measures::DiscreteMeasure;

/// Law of the walk started at `from`, stopped on first reaching a node of
/// physical norm >= r (or the domain boundary).
pub fn exit_law(spec: &LatticeSpec, kernel: &WalkKernel, from: Node, r: f64) -> Result<DiscreteMeasure> {
    let fi = spec
        .node_index(&from)
        .ok_or_else(|| Error::SupportOffLattice(from.coords(spec.d).to_vec()))?;
    let active: Vec<bool> = (0..spec.n_nodes())
        .map(|i| spec.interior[i] && spec.radius_of(i) < r - 1e-9)
        .collect();
    if !active[fi] {
        return Ok(DiscreteMeasure::dirac(from));
    }
    let chain = KilledChain::new(spec, kernel, &active)?;
    let mut rhs = vec![0.0; chain.ids.len()];
    rhs[chain.pos[fi].unwrap()] = 1.0;
    // occupation a = (I - P')^{-1} delta_from over the continue set
    let occ = chain.solve_transpose(&rhs);
    let p = kernel.step_prob();
    let mut out = DiscreteMeasure::new();
    for (k, &i) in chain.ids.iter().enumerate() {
        if occ[k] <= 0.0 {
            continue;
        }
        for &w in &spec.neighbors[i] {
            if !active[w] {
                out.add(spec.nodes[w], p * occ[k])?;
            }
        }
    }
    Ok(out.pruned(1e-15).normalized()?)
}

/// Exit law from the origin.
pub fn sphere_law(spec: &LatticeSpec, kernel: &WalkKernel, r: f64) -> Result<DiscreteMeasure> {
    exit_law(spec, kernel, Node([0, 0, 0]), r)
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub name: String,
    pub spec: LatticeSpec,
    pub mu: DiscreteMeasure,
    pub nu: DiscreteMeasure,
    pub alpha: f64,
    pub sense: crate::lp::Sense,
}

/// mu and nu are exit laws at two radii from the origin.
pub fn uniform_shell(
    d: usize,
    h: f64,
    r_outer: f64,
    r_mu: f64,
    r_nu: f64,
    alpha: f64,
    sense: crate::lp::Sense,
) -> Result<Instance> {
    let spec = build_lattice(d, h, r_outer, h / 2.0)?;
    let kernel = WalkKernel::new(&spec);
    let mu = sphere_law(&spec, &kernel, r_mu)?;
    let nu = sphere_law(&spec, &kernel, r_nu)?;
    Ok(Instance {
        name: format!("uniform-shell-d{d}-{r_mu}-{r_nu}"),
        spec,
        mu,
        nu,
        alpha,
        sense,
    })
}

/// The annulus pair: the same shell measures are infeasible on the annulus
/// domain and feasible on the ball.
pub fn annulus_pair(h: f64) -> Result<(Instance, Instance)> {
    let ball = build_lattice(2, h, 4.0, h / 2.0)?;
    let kernel = WalkKernel::new(&ball);
    let mu = sphere_law(&ball, &kernel, 2.0)?;
    let nu = sphere_law(&ball, &kernel, 3.0)?;
    let annulus = build_annulus(2, h, 4.0, 1.0, h / 2.0)?;
    for (z, _) in mu.iter().chain(nu.iter()) {
        if annulus.node_index(z).is_none() {
            return Err(Error::SupportOffLattice(z.coords(2).to_vec()));
        }
    }
    Ok((
        Instance {
            name: "annulus-pair-U".into(),
            spec: annulus,
            mu: mu.clone(),
            nu: nu.clone(),
            alpha: 1.0,
            sense: crate::lp::Sense::Min,
        },
        Instance {
            name: "annulus-pair-V".into(),
            spec: ball,
            mu,
            nu,
            alpha: 1.0,
            sense: crate::lp::Sense::Min,
        },
    ))
}

/// nu is a two-radius mixture of exit laws.
pub fn two_shell(
    d: usize,
    h: f64,
    r_outer: f64,
    shell_tol: f64,
    r_mu: f64,
    r_nu1: f64,
    r_nu2: f64,
    alpha: f64,
    sense: crate::lp::Sense,
) -> Result<Instance> {
    let spec = build_annulus(d, h, r_outer, 0.0, shell_tol)?;
    let kernel = WalkKernel::new(&spec);
    let mu = sphere_law(&spec, &kernel, r_mu)?;
    let nu1 = sphere_law(&spec, &kernel, r_nu1)?;
    let nu2 = sphere_law(&spec, &kernel, r_nu2)?;
    let nu = DiscreteMeasure::mix(&[(0.5, &nu1), (0.5, &nu2)]);
    Ok(Instance {
        name: format!("two-shell-d{d}-{r_mu}-{r_nu1}-{r_nu2}"),
        spec,
        mu,
        nu,
        alpha,
        sense,
    })
}

/// Overlap pair for the common-mass test: both measures share an off-center atom.
pub fn overlap_pair(
    d: usize,
    h: f64,
    r_outer: f64,
    a: Node,
    alpha: f64,
) -> Result<Instance> {
    let spec = build_lattice(d, h, r_outer, h / 2.0)?;
    let kernel = WalkKernel::new(&spec);
    let inner = sphere_law(&spec, &kernel, 1.2)?;
    let outer = sphere_law(&spec, &kernel, 2.2)?;
    let atom = DiscreteMeasure::dirac(a);
    if spec.node_index(&a).is_none() {
        return Err(Error::SupportOffLattice(a.coords(d).to_vec()));
    }
    let mu = DiscreteMeasure::mix(&[(0.5, &atom), (0.5, &inner)]);
    let nu = DiscreteMeasure::mix(&[(0.5, &atom), (0.5, &outer)]);
    Ok(Instance {
        name: format!(
            "overlap-pair-d{d}-{}",
            a.coords(d)
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join("_")
        ),
        spec,
        mu,
        nu,
        alpha,
        sense: crate::lp::Sense::Min,
    })
}
