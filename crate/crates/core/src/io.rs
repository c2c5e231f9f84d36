//! Instance and report serialization: strict JSON schema for problem
//! instances, summary JSON, and CSV emitters at 12 significant digits.

use serde::{Deserialize, Serialize};

use crate::barrier::CapReport;
use crate::envelope::GridFunction;
use crate::error::{Error, Result};
use crate::gain::ScanTable;
use crate::lattice::{build_annulus, LatticeSpec, Node};
use crate::lp::{LpStatus, Sense};
use crate::measures::DiscreteMeasure;
use crate::embed::StoppingSolution;

/// 12 significant digits.
pub fn fmt(v: f64) -> String {
    format!("{v:.11e}")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeJson {
    pub d: usize,
    pub h: f64,
    #[serde(rename = "R_O")]
    pub r_outer: f64,
    #[serde(rename = "R_in", default)]
    pub r_inner: f64,
    #[serde(default)]
    pub shell_tol: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomJson {
    pub z: Vec<i32>,
    pub m: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceJson {
    pub lattice: LatticeJson,
    pub mu: Vec<AtomJson>,
    pub nu: Vec<AtomJson>,
    pub alpha: f64,
    pub sense: String,
}

fn atoms_to_measure(atoms: &[AtomJson], d: usize) -> Result<DiscreteMeasure> {
    let mut out = DiscreteMeasure::new();
    for a in atoms {
        if a.z.len() != d {
            return Err(Error::InvalidInput(format!(
                "atom {:?} has {} coordinates, lattice is {d}-dimensional",
                a.z,
                a.z.len()
            )));
        }
        out.add(Node::from_slice(&a.z), a.m)?;
    }
    Ok(out)
}

fn measure_to_atoms(m: &DiscreteMeasure, d: usize) -> Vec<AtomJson> {
    m.iter()
        .map(|(z, &mass)| AtomJson {
            z: z.coords(d).to_vec(),
            m: mass,
        })
        .collect()
}

impl InstanceJson {
    pub fn parse(text: &str) -> Result<InstanceJson> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn build(&self) -> Result<(LatticeSpec, DiscreteMeasure, DiscreteMeasure, f64, Sense)> {
        let l = &self.lattice;
        let shell_tol = l.shell_tol.unwrap_or(l.h / 2.0);
        let spec = build_annulus(l.d, l.h, l.r_outer, l.r_inner, shell_tol)?;
        let mu = atoms_to_measure(&self.mu, l.d)?;
        let nu = atoms_to_measure(&self.nu, l.d)?;
        let sense = match self.sense.as_str() {
            "min" => Sense::Min,
            "max" => Sense::Max,
            other => {
                return Err(Error::InvalidInput(format!(
                    "sense must be \"min\" or \"max\", got {other:?}"
                )))
            }
        };
        Ok((spec, mu, nu, self.alpha, sense))
    }

    pub fn from_parts(
        spec: &LatticeSpec,
        mu: &DiscreteMeasure,
        nu: &DiscreteMeasure,
        alpha: f64,
        sense: Sense,
    ) -> InstanceJson {
        InstanceJson {
            lattice: LatticeJson {
                d: spec.d,
                h: spec.h,
                r_outer: spec.r_outer,
                r_inner: spec.r_inner,
                shell_tol: Some(spec.shell_tol),
            },
            mu: measure_to_atoms(mu, spec.d),
            nu: measure_to_atoms(nu, spec.d),
            alpha,
            sense: match sense {
                Sense::Min => "min".into(),
                Sense::Max => "max".into(),
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryJson {
    pub objective: f64,
    #[serde(rename = "E_tau")]
    pub e_tau: f64,
    pub gap: f64,
    pub status: String,
}

impl SummaryJson {
    pub fn of(solution: &StoppingSolution) -> SummaryJson {
        SummaryJson {
            objective: solution.objective,
            e_tau: solution.e_tau,
            gap: solution.lp_gap,
            status: match solution.status {
                LpStatus::Optimal => "optimal".into(),
                other => format!("{other:?}").to_lowercase(),
            },
        }
    }
}

fn coord_header(d: usize, prefix: &str) -> String {
    (0..d)
        .map(|k| format!("{prefix}{}", k + 1))
        .collect::<Vec<_>>()
        .join(",")
}

fn coord_row(z: &Node, d: usize) -> String {
    z.coords(d)
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Occupation and stop mass per (start, node).
pub fn solution_csv(spec: &LatticeSpec, solution: &StoppingSolution) -> String {
    let d = spec.d;
    let mut out = format!("{},{},m,s\n", coord_header(d, "start_z"), coord_header(d, "z"));
    for (p, &xi) in solution.starts.iter().enumerate() {
        for z in 0..spec.n_nodes() {
            let m = solution.occupation[p][z];
            let s = solution.stop[p][z];
            if m == 0.0 && s == 0.0 {
                continue;
            }
            out.push_str(&format!(
                "{},{},{},{}\n",
                coord_row(&spec.nodes[xi], d),
                coord_row(&spec.nodes[z], d),
                fmt(m),
                fmt(s)
            ));
        }
    }
    out
}

pub fn measure_csv(m: &DiscreteMeasure, d: usize) -> String {
    let mut out = format!("{},mass\n", coord_header(d, "z"));
    for (z, &mass) in m.iter() {
        out.push_str(&format!("{},{}\n", coord_row(z, d), fmt(mass)));
    }
    out
}

pub fn grid_csv(spec: &LatticeSpec, f: &GridFunction) -> String {
    let mut out = format!("{},value\n", coord_header(spec.d, "z"));
    for (z, &v) in spec.nodes.iter().zip(&f.values) {
        out.push_str(&format!("{},{}\n", coord_row(z, spec.d), fmt(v)));
    }
    out
}

pub fn cap_csv(spec: &LatticeSpec, report: &CapReport) -> String {
    let d = spec.d;
    let mut out = format!(
        "{},shell_r,stop_min_cos,stop_max_cos,pass_min_cos,pass_max_cos,violation,parallel_excluded\n",
        coord_header(d, "start_z")
    );
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            coord_row(&spec.nodes[r.start], d),
            fmt(r.shell_radius),
            fmt(r.stop_min_cos),
            fmt(r.stop_max_cos),
            fmt(r.pass_min_cos),
            fmt(r.pass_max_cos),
            r.violation as u8,
            r.parallel_excluded
        ));
    }
    out
}

pub fn scan_csv(table: &ScanTable, d: usize) -> String {
    let mut out = format!("{},dist,cos,lower,upper\n", coord_header(d, "x"));
    for r in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            coord_row(&r.x, d),
            fmt(r.dist_to_y),
            fmt(r.cos_to_y),
            fmt(r.lower),
            fmt(r.upper)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "lattice": {"d": 2, "h": 1.0, "R_O": 3.0},
        "mu": [{"z": [0, 0], "m": 1.0}],
        "nu": [{"z": [1, 0], "m": 0.5}, {"z": [-1, 0], "m": 0.5}],
        "alpha": 1.0,
        "sense": "min"
    }"#;

    #[test]
    fn parse_and_build_round_trip() {
        let inst = InstanceJson::parse(SAMPLE).unwrap();
        let (spec, mu, nu, alpha, sense) = inst.build().unwrap();
        assert_eq!(spec.d, 2);
        assert_eq!(mu.len(), 1);
        assert_eq!(nu.len(), 2);
        assert_eq!(alpha, 1.0);
        assert_eq!(sense, Sense::Min);
        let back = InstanceJson::from_parts(&spec, &mu, &nu, alpha, sense);
        let text = serde_json::to_string(&back).unwrap();
        let again = InstanceJson::parse(&text).unwrap();
        let (_, mu2, nu2, _, _) = again.build().unwrap();
        assert_eq!(mu2.len(), mu.len());
        assert_eq!(nu2.len(), nu.len());
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = SAMPLE.replace("\"alpha\"", "\"surprise\": 1, \"alpha\"");
        assert!(InstanceJson::parse(&bad).is_err());
        let bad = SAMPLE.replace("\"h\": 1.0,", "\"h\": 1.0, \"spacing\": 2,");
        assert!(InstanceJson::parse(&bad).is_err());
    }

    #[test]
    fn bad_sense_and_dimension_rejected() {
        let bad = SAMPLE.replace("\"min\"", "\"maximize\"");
        assert!(InstanceJson::parse(&bad).unwrap().build().is_err());
        let bad = SAMPLE.replace("[0, 0]", "[0, 0, 0]");
        assert!(InstanceJson::parse(&bad).unwrap().build().is_err());
    }

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt(1.0 / 3.0), "3.33333333333e-1");
        assert_eq!(fmt(0.0), "0.00000000000e0");
    }

    #[test]
    fn measure_csv_shape() {
        let m = crate::measures::DiscreteMeasure::dirac(Node([1, -2, 0]));
        let csv = measure_csv(&m, 2);
        assert_eq!(csv, "z1,z2,mass\n1,-2,1.00000000000e0\n");
    }
}
