//! Explicit Runge–Kutta stepping with a configurable Butcher tableau.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Butcher tableau of an explicit Runge–Kutta method.
///
/// `coupling` is strictly lower triangular and stored row-wise; row `i` has
/// `i` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RkTableau {
    name: &'static str,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    coupling: Vec<Vec<f64>>,
}

const ORDER_TOL: f64 = 1e-12;

impl RkTableau {
    /// Builds a tableau, rejecting anything that is not at least second-order consistent.
    pub fn new(name: &'static str, nodes: Vec<f64>, weights: Vec<f64>, coupling: Vec<Vec<f64>>) -> Result<Self> {
        let s = nodes.len();
        if s == 0 || weights.len() != s || coupling.len() != s {
            return Err(Error::InvalidArgument(format!(
                "tableau `{name}`: inconsistent stage counts"
            )));
        }
        for (i, row) in coupling.iter().enumerate() {
            if row.len() != i {
                return Err(Error::InvalidArgument(format!(
                    "tableau `{name}`: coupling row {i} must have {i} entries"
                )));
            }
        }
        let tableau = Self {
            name,
            nodes,
            weights,
            coupling,
        };
        if tableau.order() < 2 {
            return Err(Error::InvalidArgument(format!(
                "tableau `{name}` is not second-order consistent"
            )));
        }
        Ok(tableau)
    }

    /// Two-stage Ralston method (nodes 0, 2/3; weights 1/4, 3/4).
    pub fn ralston2() -> Self {
        Self::new(
            "ralston2",
            vec![0.0, 2.0 / 3.0],
            vec![0.25, 0.75],
            vec![vec![], vec![2.0 / 3.0]],
        )
        .expect("valid tableau")
    }

    /// Three-stage third-order Ralston method.
    pub fn ralston3() -> Self {
        Self::new(
            "ralston3",
            vec![0.0, 0.5, 0.75],
            vec![2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0],
            vec![vec![], vec![0.5], vec![0.0, 0.75]],
        )
        .expect("valid tableau")
    }

    /// Four-stage fourth-order Ralston method with minimum truncation error bound.
    pub fn ralston4() -> Self {
        let r5 = 5f64.sqrt();
        Self::new(
            "ralston4",
            vec![0.0, 0.4, 7.0 / 8.0 - 3.0 * r5 / 16.0, 1.0],
            vec![
                (263.0 + 24.0 * r5) / 1812.0,
                (125.0 - 1000.0 * r5) / 3828.0,
                (3_426_304.0 + 1_661_952.0 * r5) / 5_924_787.0,
                (30.0 - 4.0 * r5) / 123.0,
            ],
            vec![
                vec![],
                vec![0.4],
                vec![(-2889.0 + 1428.0 * r5) / 1024.0, (3785.0 - 1620.0 * r5) / 1024.0],
                vec![
                    (-3365.0 + 2094.0 * r5) / 6040.0,
                    (-975.0 - 3046.0 * r5) / 2552.0,
                    (467_040.0 + 203_968.0 * r5) / 240_845.0,
                ],
            ],
        )
        .expect("valid tableau")
    }

    /// Looks up a tableau by name (`ralston2`, `ralston3`, `ralston4`).
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "ralston2" => Some(Self::ralston2()),
            "ralston3" => Some(Self::ralston3()),
            "ralston4" => Some(Self::ralston4()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn stages(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Highest order (up to 4) whose order conditions hold.
    pub fn order(&self) -> usize {
        let s = self.stages();
        let b = &self.weights;
        let c = &self.nodes;
        let a = |i: usize, j: usize| if j < i { self.coupling[i][j] } else { 0.0 };
        let close = |x: f64, y: f64| (x - y).abs() <= ORDER_TOL;

        // row-sum condition c_i = sum_j a_ij is required for the conditions below
        let row_sums_ok = (0..s).all(|i| close(c[i], (0..s).map(|j| a(i, j)).sum()));
        if !close(b.iter().sum(), 1.0) {
            return 0;
        }
        if !row_sums_ok {
            return 1;
        }
        let bc = |p: i32| -> f64 { (0..s).map(|i| b[i] * c[i].powi(p)).sum() };
        if !close(bc(1), 0.5) {
            return 1;
        }
        let ac = |i: usize, p: i32| -> f64 { (0..s).map(|j| a(i, j) * c[j].powi(p)).sum() };
        let bac = (0..s).map(|i| b[i] * ac(i, 1)).sum::<f64>();
        if !(close(bc(2), 1.0 / 3.0) && close(bac, 1.0 / 6.0)) {
            return 2;
        }
        let bcac = (0..s).map(|i| b[i] * c[i] * ac(i, 1)).sum::<f64>();
        let bac2 = (0..s).map(|i| b[i] * ac(i, 2)).sum::<f64>();
        let baac = (0..s)
            .map(|i| b[i] * (0..s).map(|j| a(i, j) * ac(j, 1)).sum::<f64>())
            .sum::<f64>();
        if close(bc(3), 0.25) && close(bcac, 0.125) && close(bac2, 1.0 / 12.0) && close(baac, 1.0 / 24.0) {
            4
        } else {
            3
        }
    }

    /// One explicit Runge–Kutta step of size `h` (negative `h` integrates backwards).
    pub fn step<F>(&self, mut f: F, t: f64, y: &DVector<f64>, h: f64) -> Result<DVector<f64>>
    where
        F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
    {
        if h == 0.0 || !h.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step size must be finite and non-zero, got {h}"
            )));
        }
        let mut stages: Vec<DVector<f64>> = Vec::with_capacity(self.stages());
        for i in 0..self.stages() {
            let mut yi = y.clone();
            for (j, kj) in stages.iter().enumerate() {
                let aij = self.coupling[i][j];
                if aij != 0.0 {
                    yi.axpy(h * aij, kj, 1.0);
                }
            }
            let ti = t + self.nodes[i] * h;
            let k = f(ti, &yi);
            if k.len() != y.len() {
                return Err(Error::Dimension(format!(
                    "derivative has length {}, state has length {}",
                    k.len(),
                    y.len()
                )));
            }
            if k.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integration {
                    t: ti,
                    what: format!("non-finite derivative in stage {i} of `{}`", self.name),
                });
            }
            stages.push(k);
        }
        let mut out = y.clone();
        for (bi, ki) in self.weights.iter().zip(&stages) {
            out.axpy(h * bi, ki, 1.0);
        }
        Ok(out)
    }
}

impl Default for RkTableau {
    fn default() -> Self {
        Self::ralston2()
    }
}

/// Integrates `dy/dt = f(t, y)` from `t0` to `t1` in `steps` equal steps.
pub fn integrate<F>(
    tableau: &RkTableau,
    mut f: F,
    t0: f64,
    y0: &DVector<f64>,
    t1: f64,
    steps: usize,
) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let h = (t1 - t0) / steps as f64;
    let mut y = y0.clone();
    for k in 0..steps {
        y = tableau.step(&mut f, t0 + k as f64 * h, &y, h)?;
    }
    Ok(y)
}
