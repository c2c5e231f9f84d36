use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::lattice::{cost, point_group, LatticeSpec, Node};
use crate::lp::{self, LinearProgram, LpStatus, RowSense, Sense};

/// Sparse nonnegative measure on lattice nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    atoms: BTreeMap<Node, f64>,
    total: f64,
}

impl DiscreteMeasure {
    pub fn new() -> DiscreteMeasure {
        DiscreteMeasure {
            atoms: BTreeMap::new(),
            total: 0.0,
        }
    }

    pub fn from_atoms(atoms: impl IntoIterator<Item = (Node, f64)>) -> Result<DiscreteMeasure> {
        let mut m = DiscreteMeasure::new();
        for (z, mass) in atoms {
            m.add(z, mass)?;
        }
        Ok(m)
    }

    pub fn dirac(z: Node) -> DiscreteMeasure {
        DiscreteMeasure::from_atoms([(z, 1.0)]).unwrap()
    }

    pub fn add(&mut self, z: Node, mass: f64) -> Result<()> {
        if !(mass >= 0.0) || !mass.is_finite() {
            return Err(Error::InvalidInput(format!(
                "atom mass must be finite and >= 0, got {mass}"
            )));
        }
        if mass > 0.0 {
            *self.atoms.entry(z).or_insert(0.0) += mass;
            self.total += mass;
        }
        Ok(())
    }

    pub fn mass(&self, z: &Node) -> f64 {
        self.atoms.get(z).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn is_probability(&self) -> bool {
        (self.total - 1.0).abs() <= 1e-12
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Node, &f64)> {
        self.atoms.iter()
    }

    pub fn scale(&self, k: f64) -> DiscreteMeasure {
        DiscreteMeasure {
            atoms: self.atoms.iter().map(|(z, m)| (*z, m * k)).collect(),
            total: self.total * k,
        }
    }

    pub fn normalized(&self) -> Result<DiscreteMeasure> {
        if self.total <= 0.0 {
            return Err(Error::EmptyMeasure);
        }
        Ok(self.scale(1.0 / self.total))
    }

    pub fn mix(parts: &[(f64, &DiscreteMeasure)]) -> DiscreteMeasure {
        let mut out = DiscreteMeasure::new();
        for (w, m) in parts {
            for (z, mass) in m.iter() {
                out.add(*z, w * mass).unwrap();
            }
        }
        out
    }

    /// Drop atoms below `tol` (round-off residue from linear solves).
    pub fn pruned(&self, tol: f64) -> DiscreteMeasure {
        DiscreteMeasure::from_atoms(
            self.atoms
                .iter()
                .filter(|(_, &m)| m > tol)
                .map(|(z, &m)| (*z, m)),
        )
        .unwrap()
    }

    pub fn supported_on(&self, spec: &LatticeSpec) -> bool {
        self.atoms.keys().all(|z| spec.node_index(z).is_some())
    }
}

impl Default for DiscreteMeasure {
    fn default() -> Self {
        DiscreteMeasure::new()
    }
}

/// Pushforward of a measure under the modulus map, bucketed by shell.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialProfile {
    /// (shell representative radius, mass), sorted by radius; only nonzero buckets.
    pub buckets: Vec<(f64, f64)>,
}

impl RadialProfile {
    pub fn total(&self) -> f64 {
        self.buckets.iter().map(|(_, m)| m).sum()
    }

    pub fn max_diff(&self, other: &RadialProfile) -> f64 {
        let mut radii: Vec<f64> = self
            .buckets
            .iter()
            .chain(other.buckets.iter())
            .map(|(r, _)| *r)
            .collect();
        radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
        radii.dedup();
        let at = |p: &RadialProfile, r: f64| {
            p.buckets
                .iter()
                .find(|(br, _)| (br - r).abs() < 1e-12)
                .map(|(_, m)| *m)
                .unwrap_or(0.0)
        };
        radii
            .iter()
            .map(|&r| (at(self, r) - at(other, r)).abs())
            .fold(0.0, f64::max)
    }
}

pub fn modulus_pushforward(mu: &DiscreteMeasure, spec: &LatticeSpec) -> Result<RadialProfile> {
    let mut by_shell = vec![0.0f64; spec.shells.len()];
    for (z, &m) in mu.iter() {
        let i = spec
            .node_index(z)
            .ok_or_else(|| Error::UnsupportedAtom(z.coords(spec.d).to_vec()))?;
        by_shell[spec.shell_of[i]] += m;
    }
    Ok(RadialProfile {
        buckets: spec
            .shells
            .iter()
            .zip(by_shell)
            .filter(|(_, m)| *m > 0.0)
            .map(|(s, m)| (s.radius, m))
            .collect(),
    })
}

pub fn r_equivalent(
    phi: &DiscreteMeasure,
    psi: &DiscreteMeasure,
    spec: &LatticeSpec,
    tol: f64,
) -> Result<bool> {
    let a = modulus_pushforward(phi, spec)?;
    let b = modulus_pushforward(psi, spec)?;
    Ok(a.max_diff(&b) <= tol)
}

/// Average of the point-group images of mu.
pub fn symmetrize(mu: &DiscreteMeasure, spec: &LatticeSpec) -> Result<DiscreteMeasure> {
    let group = point_group(spec.d)?;
    let w = 1.0 / group.len() as f64;
    let mut out = DiscreteMeasure::new();
    for (z, &m) in mu.iter() {
        if spec.node_index(z).is_none() {
            return Err(Error::UnsupportedAtom(z.coords(spec.d).to_vec()));
        }
        for g in &group {
            out.add(g.apply(z), w * m)?;
        }
    }
    Ok(out)
}

/// Atom-wise minimum.
pub fn common_mass(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> DiscreteMeasure {
    let mut out = DiscreteMeasure::new();
    for (z, &m) in mu.iter() {
        let c = m.min(nu.mass(z));
        out.add(*z, c).unwrap();
    }
    out
}

/// Integral of |x - z|^alpha dmu(z) in physical units.
pub fn power_moment(mu: &DiscreteMeasure, x: &Node, h: f64, alpha: f64) -> f64 {
    mu.iter().map(|(z, &m)| m * cost(x, z, h, alpha)).sum()
}

/// Exact 1-Wasserstein distance (physical units) via a transport LP on the support product.
pub fn wasserstein1(mu: &DiscreteMeasure, nu: &DiscreteMeasure, h: f64) -> Result<f64> {
    if (mu.total() - nu.total()).abs() > 1e-9 {
        return Err(Error::MassMismatch(mu.total(), nu.total()));
    }
    let mus: Vec<(&Node, f64)> = mu.iter().map(|(z, &m)| (z, m)).collect();
    let nus: Vec<(&Node, f64)> = nu.iter().map(|(z, &m)| (z, m)).collect();
    if mus.is_empty() {
        return Ok(0.0);
    }
    let n_vars = mus.len() * nus.len();
    let mut prog = LinearProgram::new(n_vars, Sense::Min);
    for (i, (zi, mi)) in mus.iter().enumerate() {
        for (j, (zj, _)) in nus.iter().enumerate() {
            prog.objective[i * nus.len() + j] = cost(zi, zj, h, 1.0);
        }
        let cols: Vec<(usize, f64)> = (0..nus.len()).map(|j| (i * nus.len() + j, 1.0)).collect();
        prog.add_row(RowSense::Eq, *mi, &cols);
    }
    for (j, (_, mj)) in nus.iter().enumerate() {
        let cols: Vec<(usize, f64)> = (0..mus.len()).map(|i| (i * nus.len() + j, 1.0)).collect();
        prog.add_row(RowSense::Eq, *mj, &cols);
    }
    let sol = lp::solve_exact(&prog)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective),
        s => Err(Error::NumericalBreakdown(format!(
            "transport LP returned {s:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, WalkKernel};
    use crate::presets::exit_law;

    #[test]
    fn arithmetic_and_normalization() {
        let mut m = DiscreteMeasure::dirac(Node([1, 0, 0]));
        m.add(Node([0, 1, 0]), 3.0).unwrap();
        assert_eq!(m.total(), 4.0);
        assert!(!m.is_probability());
        let p = m.normalized().unwrap();
        assert!(p.is_probability());
        assert!((p.mass(&Node([0, 1, 0])) - 0.75).abs() < 1e-15);
        let mixed = DiscreteMeasure::mix(&[(0.5, &p), (0.5, &p)]);
        assert!((mixed.total() - 1.0).abs() < 1e-15);
        assert!(m.pruned(2.0).len() == 1);
        assert!(DiscreteMeasure::new().normalized().is_err());
    }

    #[test]
    fn negative_mass_rejected() {
        let mut m = DiscreteMeasure::new();
        assert!(m.add(Node([0, 0, 0]), -0.1).is_err());
    }

    #[test]
    fn symmetrization_fixes_profile_and_is_idempotent() {
        let spec = build_lattice(2, 1.0, 3.0, 0.5).unwrap();
        let m = DiscreteMeasure::from_atoms(
            [(Node([2, 0, 0]), 0.7), (Node([1, 1, 0]), 0.3)].into_iter(),
        )
        .unwrap();
        let s = symmetrize(&m, &spec).unwrap();
        assert!((s.total() - 1.0).abs() < 1e-12);
        let p1 = modulus_pushforward(&m, &spec).unwrap();
        let p2 = modulus_pushforward(&s, &spec).unwrap();
        assert!(p1.max_diff(&p2) < 1e-12);
        let ss = symmetrize(&s, &spec).unwrap();
        for (z, &mass) in ss.iter() {
            assert!((mass - s.mass(z)).abs() < 1e-12);
        }
        assert!(r_equivalent(&m, &s, &spec, 1e-12).unwrap());
    }

    #[test]
    fn common_mass_is_a_lower_envelope() {
        let a = DiscreteMeasure::from_atoms(
            [(Node([0, 0, 0]), 0.5), (Node([1, 0, 0]), 0.5)].into_iter(),
        )
        .unwrap();
        let b = DiscreteMeasure::from_atoms(
            [(Node([0, 0, 0]), 0.2), (Node([0, 1, 0]), 0.8)].into_iter(),
        )
        .unwrap();
        let c = common_mass(&a, &b);
        assert_eq!(c.len(), 1);
        assert!((c.mass(&Node([0, 0, 0])) - 0.2).abs() < 1e-15);
        for (z, &mass) in c.iter() {
            assert!(mass <= a.mass(z) + 1e-15 && mass <= b.mass(z) + 1e-15);
        }
    }

    #[test]
    fn transport_distance_basics() {
        let h = 0.5;
        let a = DiscreteMeasure::dirac(Node([0, 0, 0]));
        let b = DiscreteMeasure::dirac(Node([2, 0, 0]));
        assert!((wasserstein1(&a, &b, h).unwrap() - 1.0).abs() < 1e-10);
        assert!(wasserstein1(&a, &a, h).unwrap() < 1e-12);
        let c = DiscreteMeasure::dirac(Node([0, 2, 0]));
        let ab = wasserstein1(&a, &b, h).unwrap();
        let bc = wasserstein1(&b, &c, h).unwrap();
        let ac = wasserstein1(&a, &c, h).unwrap();
        assert!(ac <= ab + bc + 1e-10);
        assert!(wasserstein1(&a, &a.scale(0.5), h).is_err());
    }

    #[test]
    fn exit_law_moments() {
        let spec = build_lattice(2, 1.0, 4.0, 0.5).unwrap();
        let kernel = WalkKernel::new(&spec);
        let nu = exit_law(&spec, &kernel, Node([0, 0, 0]), 1.0).unwrap();
        // one-step exit: quarter mass per unit neighbor
        assert_eq!(nu.len(), 4);
        assert!((nu.mass(&Node([0, 1, 0])) - 0.25).abs() < 1e-12);
        assert!((power_moment(&nu, &Node([0, 0, 0]), 1.0, 2.0) - 1.0).abs() < 1e-12);
    }
}
