//! Dense linear solves against the killed-walk operator I - P restricted to a
//! set of continue nodes.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lattice::{LatticeSpec, WalkKernel};

pub(crate) struct KilledChain {
    /// Node index per active position.
    pub ids: Vec<usize>,
    /// Active position per node index.
    pub pos: Vec<Option<usize>>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl KilledChain {
    /// active[i] must imply spec.interior[i]; transitions leaving the active
    /// set are treated as killed.
    pub fn new(spec: &LatticeSpec, kernel: &WalkKernel, active: &[bool]) -> Result<KilledChain> {
        let ids: Vec<usize> = (0..spec.n_nodes()).filter(|&i| active[i]).collect();
        let mut pos = vec![None; spec.n_nodes()];
        for (k, &i) in ids.iter().enumerate() {
            pos[i] = Some(k);
        }
        let m = ids.len();
        let mut a = DMatrix::<f64>::identity(m, m);
        let p = kernel.step_prob();
        for (k, &i) in ids.iter().enumerate() {
            debug_assert!(spec.interior[i]);
            for &w in &spec.neighbors[i] {
                if let Some(kw) = pos[w] {
                    a[(k, kw)] -= p;
                }
            }
        }
        let lu = a.clone().lu();
        let lu_t = a.transpose().lu();
        let mut min_d = f64::INFINITY;
        for i in 0..m {
            min_d = min_d.min(lu.u()[(i, i)].abs());
        }
        if m > 0 && !(min_d > 1e-13) {
            return Err(Error::SingularSystem(
                "killed-chain operator is singular".into(),
            ));
        }
        Ok(KilledChain { ids, pos, lu, lu_t })
    }

    /// Solve (I - P) x = rhs over the active set.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        if self.ids.is_empty() {
            return Vec::new();
        }
        let mut x = nalgebra::DVector::from_column_slice(rhs);
        assert!(self.lu.solve_mut(&mut x));
        x.data.into()
    }

    /// Solve (I - P)' x = rhs over the active set.
    pub fn solve_transpose(&self, rhs: &[f64]) -> Vec<f64> {
        if self.ids.is_empty() {
            return Vec::new();
        }
        let mut x = nalgebra::DVector::from_column_slice(rhs);
        assert!(self.lu_t.solve_mut(&mut x));
        x.data.into()
    }
}
