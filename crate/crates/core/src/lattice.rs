use std::collections::HashMap;

use crate::error::{Error, Result};

/// Integer lattice coordinates. The third component is always 0 in d=2.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Node(pub [i32; 3]);

impl Node {
    pub fn from_slice(z: &[i32]) -> Node {
        let mut c = [0i32; 3];
        c[..z.len()].copy_from_slice(z);
        Node(c)
    }

    pub fn coords(&self, d: usize) -> &[i32] {
        &self.0[..d]
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0, 0, 0]
    }

    /// Euclidean norm in lattice units (multiply by h for physical length).
    pub fn norm(&self) -> f64 {
        let s: i64 = self.0.iter().map(|&c| (c as i64) * (c as i64)).sum();
        (s as f64).sqrt()
    }

    pub fn dot(&self, other: &Node) -> i64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(&a, &b)| a as i64 * b as i64)
            .sum()
    }
}

/// Physical distance between two nodes at spacing h, raised to alpha.
pub fn cost(x: &Node, z: &Node, h: f64, alpha: f64) -> f64 {
    let s: i64 = x
        .0
        .iter()
        .zip(z.0.iter())
        .map(|(&a, &b)| {
            let dlt = (a - b) as i64;
            dlt * dlt
        })
        .sum();
    if s == 0 {
        return 0.0;
    }
    (h * (s as f64).sqrt()).powf(alpha)
}

/// cos of the angle between two nonzero nodes.
pub fn cos_angle(x: &Node, z: &Node) -> Result<f64> {
    if x.is_zero() {
        return Err(Error::ZeroVector("first argument of cos_angle"));
    }
    if z.is_zero() {
        return Err(Error::ZeroVector("second argument of cos_angle"));
    }
    let c = x.dot(z) as f64 / (x.norm() * z.norm());
    Ok(c.clamp(-1.0, 1.0))
}

/// Signed coordinate permutation: z -> (sign[i] * z[perm[i]]).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupElement {
    pub perm: [usize; 3],
    pub sign: [i32; 3],
}

impl GroupElement {
    pub fn apply(&self, z: &Node) -> Node {
        let mut out = [0i32; 3];
        for i in 0..3 {
            out[i] = self.sign[i] * z.0[self.perm[i]];
        }
        Node(out)
    }

    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        // (self ∘ other)(z) = self(other(z))
        let mut perm = [0usize; 3];
        let mut sign = [0i32; 3];
        for i in 0..3 {
            perm[i] = other.perm[self.perm[i]];
            sign[i] = self.sign[i] * other.sign[self.perm[i]];
        }
        GroupElement { perm, sign }
    }
}

/// All signed coordinate permutations fixing unused axes: 8 elements for d=2, 48 for d=3.
pub fn point_group(d: usize) -> Result<Vec<GroupElement>> {
    if d != 2 && d != 3 {
        return Err(Error::InvalidDimension(d));
    }
    let perms: Vec<Vec<usize>> = match d {
        2 => vec![vec![0, 1], vec![1, 0]],
        _ => vec![
            vec![0, 1, 2],
            vec![0, 2, 1],
            vec![1, 0, 2],
            vec![1, 2, 0],
            vec![2, 0, 1],
            vec![2, 1, 0],
        ],
    };
    let mut out = Vec::new();
    for p in &perms {
        for mask in 0..(1u32 << d) {
            let mut perm = [0, 1, 2];
            let mut sign = [1, 1, 1];
            for i in 0..d {
                perm[i] = p[i];
                sign[i] = if mask & (1 << i) != 0 { -1 } else { 1 };
            }
            out.push(GroupElement { perm, sign });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Shell {
    /// Representative radius in physical units.
    pub radius: f64,
    pub members: Vec<usize>,
}

/// The discretized domain: node set, interior/boundary split, neighbor lists, shells.
#[derive(Clone, Debug)]
pub struct LatticeSpec {
    pub d: usize,
    pub h: f64,
    pub r_outer: f64,
    /// Inner exclusion radius for annulus domains; 0 for a ball.
    pub r_inner: f64,
    pub shell_tol: f64,
    pub nodes: Vec<Node>,
    index: HashMap<Node, usize>,
    pub interior: Vec<bool>,
    /// In-set nearest neighbors of each node.
    pub neighbors: Vec<Vec<usize>>,
    pub shells: Vec<Shell>,
    pub shell_of: Vec<usize>,
}

impl LatticeSpec {
    pub fn node_index(&self, z: &Node) -> Option<usize> {
        self.index.get(z).copied()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Physical norm of node i.
    pub fn radius_of(&self, i: usize) -> f64 {
        self.nodes[i].norm() * self.h
    }

    pub fn origin(&self) -> Option<usize> {
        self.node_index(&Node([0, 0, 0]))
    }
}

pub fn build_lattice(d: usize, h: f64, r_outer: f64, shell_tol: f64) -> Result<LatticeSpec> {
    build_annulus(d, h, r_outer, 0.0, shell_tol)
}

/// Ball domain when r_inner <= 0, annulus (nodes with r_inner < |z| <= r_outer) otherwise.
pub fn build_annulus(
    d: usize,
    h: f64,
    r_outer: f64,
    r_inner: f64,
    shell_tol: f64,
) -> Result<LatticeSpec> {
    if d != 2 && d != 3 {
        return Err(Error::InvalidDimension(d));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::DegenerateDomain(format!("spacing h = {h}")));
    }
    if !(r_outer >= 3.0 * h) {
        return Err(Error::DegenerateDomain(format!(
            "R_O = {r_outer} below 3h = {}",
            3.0 * h
        )));
    }
    if shell_tol < 0.0 {
        return Err(Error::DegenerateDomain(format!("shell_tol = {shell_tol}")));
    }

    let k = (r_outer / h + 1.0) as i32;
    let keep = |z: &Node| -> bool {
        let r = z.norm() * h;
        r <= r_outer + 1e-12 && (r_inner <= 0.0 || r > r_inner + 1e-12)
    };

    let mut nodes = Vec::new();
    let zrange = if d == 3 { -k..=k } else { 0..=0 };
    for x in -k..=k {
        for y in -k..=k {
            for z in zrange.clone() {
                let n = Node([x, y, z]);
                if keep(&n) {
                    nodes.push(n);
                }
            }
        }
    }
    nodes.sort();

    let index: HashMap<Node, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let mut neighbors = Vec::with_capacity(nodes.len());
    let mut interior = Vec::with_capacity(nodes.len());
    for n in &nodes {
        let mut nbrs = Vec::with_capacity(2 * d);
        for axis in 0..d {
            for step in [-1i32, 1] {
                let mut c = n.0;
                c[axis] += step;
                if let Some(&j) = index.get(&Node(c)) {
                    nbrs.push(j);
                }
            }
        }
        interior.push(nbrs.len() == 2 * d);
        neighbors.push(nbrs);
    }

    // Shells: sorted distinct physical norms, chain-merged within shell_tol.
    let mut radii: Vec<(f64, usize)> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.norm() * h, i))
        .collect();
    radii.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let mut shells: Vec<Shell> = Vec::new();
    let mut shell_of = vec![0usize; nodes.len()];
    for (r, i) in radii {
        let last = shells.len().wrapping_sub(1);
        match shells.last_mut() {
            Some(s) if r - s.radius <= shell_tol => {
                shell_of[i] = last;
                s.members.push(i);
            }
            _ => {
                shell_of[i] = shells.len();
                shells.push(Shell {
                    radius: r,
                    members: vec![i],
                });
            }
        }
    }
    for s in &mut shells {
        s.members.sort_unstable();
    }

    if shells.len() < 2 {
        return Err(Error::DegenerateDomain(format!(
            "only {} shell(s) in the node set",
            shells.len()
        )));
    }

    Ok(LatticeSpec {
        d,
        h,
        r_outer,
        r_inner,
        shell_tol,
        nodes,
        index,
        interior,
        neighbors,
        shells,
        shell_of,
    })
}

/// Simple symmetric nearest-neighbor walk, absorbing at the boundary.
#[derive(Clone, Copy, Debug)]
pub struct WalkKernel {
    pub d: usize,
}

impl WalkKernel {
    pub fn new(spec: &LatticeSpec) -> WalkKernel {
        WalkKernel { d: spec.d }
    }

    pub fn step_prob(&self) -> f64 {
        1.0 / (2.0 * self.d as f64)
    }

    /// Outgoing transitions from node i: empty for boundary (absorbing) nodes.
    pub fn row<'a>(
        &self,
        spec: &'a LatticeSpec,
        i: usize,
    ) -> impl Iterator<Item = (usize, f64)> + 'a {
        let p = self.step_prob();
        let targets: &[usize] = if spec.interior[i] {
            &spec.neighbors[i]
        } else {
            &[]
        };
        targets.iter().map(move |&j| (j, p))
    }
}
