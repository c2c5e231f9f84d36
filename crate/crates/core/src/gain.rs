//! Transport gain of a stop law over the direct move to its barycenter,
//! exact bounds over all laws with a prescribed radial profile, and the
//! continuum fields governing its monotonicity.

use crate::error::{Error, Result};
use crate::lattice::{cos_angle, LatticeSpec, Node, WalkKernel};
use crate::lp::{solve_exact, LinearProgram, LpStatus, RowSense, Sense};
use crate::measures::{power_moment, DiscreteMeasure, RadialProfile};

/// Cost of embedding psi from x minus the cost of the direct move from x to
/// the barycenter of psi.
pub fn gain(spec: &LatticeSpec, x: &Node, psi: &DiscreteMeasure, alpha: f64) -> Result<f64> {
    if psi.total() <= 0.0 {
        return Err(Error::EmptyMeasure);
    }
    let total = psi.total();
    let mut bary = [0.0f64; 3];
    for (z, &m) in psi.iter() {
        for k in 0..3 {
            bary[k] += m * z.0[k] as f64;
        }
    }
    let mut dist2 = 0.0;
    for k in 0..3 {
        dist2 += (x.0[k] as f64 - bary[k] / total).powi(2);
    }
    let direct = total * (spec.h * dist2.sqrt()).powf(alpha);
    Ok(power_moment(psi, x, spec.h, alpha) - direct)
}

#[derive(Clone, Debug)]
pub struct GainBounds {
    pub lower: f64,
    pub upper: f64,
    pub sigma_lower: DiscreteMeasure,
    pub sigma_upper: DiscreteMeasure,
}

fn profile_by_shell(spec: &LatticeSpec, profile: &RadialProfile) -> Result<Vec<f64>> {
    if profile.buckets.is_empty() {
        return Err(Error::EmptyProfile);
    }
    let mut masses = vec![0.0f64; spec.shells.len()];
    for &(r, m) in &profile.buckets {
        let i = spec
            .shells
            .iter()
            .position(|s| (s.radius - r).abs() <= spec.shell_tol.max(1e-9))
            .ok_or_else(|| {
                Error::InvalidInput(format!("profile radius {r} matches no lattice shell"))
            })?;
        masses[i] += m;
    }
    Ok(masses)
}

fn shell_constrained_cost(
    spec: &LatticeSpec,
    kernel: &WalkKernel,
    x: &Node,
    y: &Node,
    masses: &[f64],
    alpha: f64,
    sense: Sense,
) -> Result<(f64, DiscreteMeasure)> {
    let n = spec.n_nodes();
    let interior: Vec<usize> = (0..n).filter(|&i| spec.interior[i]).collect();
    let mut pos = vec![None; n];
    for (k, &i) in interior.iter().enumerate() {
        pos[i] = Some(k);
    }
    let n_m = interior.len();
    let yi = spec
        .node_index(y)
        .ok_or_else(|| Error::SupportOffLattice(y.coords(spec.d).to_vec()))?;

    let mut prog = LinearProgram::new(n_m + n, sense);
    for z in 0..n {
        prog.objective[n_m + z] = crate::lattice::cost(x, &spec.nodes[z], spec.h, alpha);
    }
    let p = kernel.step_prob();
    // Visit balance: m(z) + s(z) - sum_w P(w, z) m(w) = delta_y(z).
    for z in 0..n {
        let mut coeffs: Vec<(usize, f64)> = Vec::new();
        if let Some(k) = pos[z] {
            coeffs.push((k, 1.0));
        }
        coeffs.push((n_m + z, 1.0));
        for &w in &spec.neighbors[z] {
            if let Some(k) = pos[w] {
                coeffs.push((k, -p));
            }
        }
        let rhs = if z == yi { 1.0 } else { 0.0 };
        prog.add_row(RowSense::Eq, rhs, &coeffs);
    }
    for (si, &mass) in masses.iter().enumerate() {
        let coeffs: Vec<(usize, f64)> = (0..n)
            .filter(|&z| spec.shell_of[z] == si)
            .map(|z| (n_m + z, 1.0))
            .collect();
        prog.add_row(RowSense::Eq, mass, &coeffs);
    }
    prog.validate()?;
    let sol = solve_exact(&prog)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::ProfileUnreachable),
        other => return Err(Error::NotOptimal(format!("{other:?}"))),
    }
    let mut sigma = DiscreteMeasure::new();
    for z in 0..n {
        let m = sol.primal[n_m + z];
        if m > 1e-13 {
            sigma.add(spec.nodes[z], m)?;
        }
    }
    let attained = power_moment(&sigma, x, spec.h, alpha);
    if (attained - sol.objective).abs() > 1e-10 * (1.0 + sol.objective.abs()) {
        return Err(Error::NumericalBreakdown(format!(
            "shell-profile optimum not attained by extracted law ({attained} vs {})",
            sol.objective
        )));
    }
    Ok((sol.objective, sigma))
}

/// Range of the gain over all stop laws from y realizing the given radial
/// profile, with attaining laws.
pub fn gain_bounds(
    spec: &LatticeSpec,
    kernel: &WalkKernel,
    x: &Node,
    y: &Node,
    profile: &RadialProfile,
    alpha: f64,
) -> Result<GainBounds> {
    if x.is_zero() {
        return Err(Error::ZeroStart);
    }
    let masses = profile_by_shell(spec, profile)?;
    let (lo_cost, sigma_lower) =
        shell_constrained_cost(spec, kernel, x, y, &masses, alpha, Sense::Min)?;
    let (hi_cost, sigma_upper) =
        shell_constrained_cost(spec, kernel, x, y, &masses, alpha, Sense::Max)?;
    let direct = crate::lattice::cost(x, y, spec.h, alpha);
    Ok(GainBounds {
        lower: lo_cost - direct,
        upper: hi_cost - direct,
        sigma_lower,
        sigma_upper,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanVerdict {
    StrictlyDecreasing,
    StrictlyIncreasing,
    Constant,
    Inconclusive,
}

#[derive(Clone, Debug)]
pub struct ScanRow {
    pub x: Node,
    pub dist_to_y: f64,
    pub cos_to_y: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug)]
pub struct ScanTable {
    pub rows: Vec<ScanRow>,
    pub verdict: ScanVerdict,
}

/// Evaluate gain bounds at lattice nodes on the shell of radius r_x, ordered
/// by distance to y, and classify the trend. Nodes at coinciding distances
/// are deduplicated.
pub fn monotonicity_scan(
    spec: &LatticeSpec,
    kernel: &WalkKernel,
    r_x: f64,
    y: &Node,
    profile: &RadialProfile,
    alpha: f64,
) -> Result<ScanTable> {
    let si = spec
        .shells
        .iter()
        .position(|s| (s.radius - r_x).abs() <= spec.shell_tol.max(1e-9))
        .ok_or_else(|| Error::InvalidInput(format!("no lattice shell at radius {r_x}")))?;
    let mut samples: Vec<(f64, Node)> = Vec::new();
    for z in 0..spec.n_nodes() {
        if spec.shell_of[z] != si {
            continue;
        }
        let node = spec.nodes[z];
        if node.is_zero() {
            continue;
        }
        let mut d2 = 0.0;
        for k in 0..3 {
            d2 += ((node.0[k] - y.0[k]) as f64).powi(2);
        }
        let dist = spec.h * d2.sqrt();
        if samples.iter().any(|(d, _)| (d - dist).abs() <= 1e-9) {
            continue;
        }
        samples.push((dist, node));
    }
    samples.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut rows = Vec::with_capacity(samples.len());
    for (dist, node) in samples {
        let b = gain_bounds(spec, kernel, &node, y, profile, alpha)?;
        let cos = if y.is_zero() {
            0.0
        } else {
            cos_angle(&node, y)?
        };
        rows.push(ScanRow {
            x: node,
            dist_to_y: dist,
            cos_to_y: cos,
            lower: b.lower,
            upper: b.upper,
        });
    }
    let verdict = classify(&rows);
    Ok(ScanTable { rows, verdict })
}

fn classify(rows: &[ScanRow]) -> ScanVerdict {
    if rows.len() < 2 {
        return ScanVerdict::Inconclusive;
    }
    let tol = 1e-9;
    let trend = |vals: Vec<f64>| -> ScanVerdict {
        let diffs: Vec<f64> = vals.windows(2).map(|w| w[1] - w[0]).collect();
        if diffs.iter().all(|&d| d < -tol) {
            ScanVerdict::StrictlyDecreasing
        } else if diffs.iter().all(|&d| d > tol) {
            ScanVerdict::StrictlyIncreasing
        } else if diffs.iter().all(|&d| d.abs() <= tol) {
            ScanVerdict::Constant
        } else {
            ScanVerdict::Inconclusive
        }
    };
    let a = trend(rows.iter().map(|r| r.lower).collect());
    let b = trend(rows.iter().map(|r| r.upper).collect());
    if a == b {
        a
    } else {
        ScanVerdict::Inconclusive
    }
}

/// Directional component of the gain's continuum driver: -alpha |z|^(a-2) z_d.
pub fn h_field(z: &[f64], alpha: f64) -> Result<f64> {
    let r2: f64 = z.iter().map(|v| v * v).sum();
    if r2 <= 0.0 {
        return Err(Error::ZeroVector("h_field at the origin"));
    }
    let r = r2.sqrt();
    Ok(-alpha * r.powf(alpha - 2.0) * z[z.len() - 1])
}

/// Laplacian of h_field: -alpha (alpha - 2) (alpha + d - 2) |z|^(a-4) z_d.
pub fn laplacian_h(z: &[f64], alpha: f64) -> Result<f64> {
    let d = z.len();
    let r2: f64 = z.iter().map(|v| v * v).sum();
    if r2 <= 0.0 {
        return Err(Error::ZeroVector("laplacian_h at the origin"));
    }
    let r = r2.sqrt();
    Ok(-alpha * (alpha - 2.0) * (alpha + d as f64 - 2.0) * r.powf(alpha - 4.0) * z[d - 1])
}
