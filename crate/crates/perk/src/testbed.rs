//! Periodic 1D finite-volume testbeds: upwind advection and Godunov Burgers
//! on non-uniform dyadic meshes, plus gradient-driven refinement.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Flat periodic mesh. `levels[i]` is the dyadic refinement level of cell `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh1D {
    pub domain_start: f64,
    pub domain_length: f64,
    pub widths: Vec<f64>,
    pub levels: Vec<u32>,
}

impl Mesh1D {
    pub fn new(domain_start: f64, widths: Vec<f64>, levels: Vec<u32>) -> Result<Self> {
        if widths.is_empty() {
            return invalid("mesh has no cells");
        }
        if widths.len() != levels.len() {
            return invalid(format!(
                "{} widths but {} levels",
                widths.len(),
                levels.len()
            ));
        }
        if let Some(w) = widths.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return invalid(format!("non-positive cell width {w}"));
        }
        let domain_length = widths.iter().sum();
        Ok(Self {
            domain_start,
            domain_length,
            widths,
            levels,
        })
    }

    pub fn uniform(domain_start: f64, domain_length: f64, cells: usize) -> Result<Self> {
        if cells == 0 {
            return invalid("mesh has no cells");
        }
        let w = domain_length / cells as f64;
        let mut mesh = Self::new(domain_start, vec![w; cells], vec![0; cells])?;
        mesh.domain_length = domain_length;
        Ok(mesh)
    }

    /// Dyadic mesh where cell `i` has width `base_width / 2^levels[i]`.
    pub fn dyadic(domain_start: f64, base_width: f64, levels: Vec<u32>) -> Result<Self> {
        let widths = levels
            .iter()
            .map(|&l| base_width / (1u64 << l) as f64)
            .collect();
        Self::new(domain_start, widths, levels)
    }

    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }

    pub fn domain_end(&self) -> f64 {
        self.domain_start + self.domain_length
    }

    /// Cell interfaces, `len() + 1` values.
    pub fn edges(&self) -> Vec<f64> {
        let mut edges = Vec::with_capacity(self.len() + 1);
        let mut x = self.domain_start;
        edges.push(x);
        for w in &self.widths {
            x += w;
            edges.push(x);
        }
        edges
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges().windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }

    pub fn min_width(&self) -> f64 {
        self.widths.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_level(&self) -> u32 {
        self.levels.iter().copied().max().unwrap_or(0)
    }

    /// Sorted distinct levels present in the mesh.
    pub fn distinct_levels(&self) -> Vec<u32> {
        let mut levels = self.levels.clone();
        levels.sort_unstable();
        levels.dedup();
        levels
    }

    /// `sum_i dx_i * u_i`.
    pub fn integral(&self, values: &[f64]) -> f64 {
        self.widths.iter().zip(values).map(|(w, u)| w * u).sum()
    }
}

/// Mesh plus cell averages. Serializes as
/// `{"domain": [a, b], "widths": [...], "levels": [...], "values": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshState {
    pub domain: [f64; 2],
    pub widths: Vec<f64>,
    pub levels: Vec<u32>,
    pub values: Vec<f64>,
}

impl MeshState {
    pub fn new(mesh: &Mesh1D, values: &[f64]) -> Result<Self> {
        if values.len() != mesh.len() {
            return invalid(format!(
                "state has {} values for {} cells",
                values.len(),
                mesh.len()
            ));
        }
        Ok(Self {
            domain: [mesh.domain_start, mesh.domain_end()],
            widths: mesh.widths.clone(),
            levels: mesh.levels.clone(),
            values: values.to_vec(),
        })
    }

    pub fn into_parts(self) -> Result<(Mesh1D, Vec<f64>)> {
        let mut mesh = Mesh1D::new(self.domain[0], self.widths, self.levels)?;
        let length = self.domain[1] - self.domain[0];
        if ((mesh.domain_length - length) / length).abs() > 1e-12 {
            return invalid(format!(
                "cell widths sum to {} but domain length is {length}",
                mesh.domain_length
            ));
        }
        mesh.domain_length = length;
        if self.values.len() != mesh.len() {
            return invalid("values and widths differ in length");
        }
        Ok((mesh, self.values))
    }
}

/// Sparse real operator in compressed-row form.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl LinearOperator {
    /// Builds from per-row `(column, value)` lists; duplicate columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (c, v) in row {
                assert!(c < n, "column {c} out of range");
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            for (c, v) in merged {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    /// Keeps the exact nonzeros of a square dense matrix.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return invalid("operator must be square");
        }
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter(|&j| m[(i, j)] != 0.0)
                    .map(|j| (j, m[(i, j)]))
                    .collect()
            })
            .collect();
        Ok(Self::from_rows(rows))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.row(i).map(|(j, v)| v * x[j]).sum()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row_dot(i, x)).collect()
    }

    pub fn apply_complex(&self, x: &[num_complex::Complex64]) -> Vec<num_complex::Complex64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| x[j] * v).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }
}

/// Godunov (upwind) operator for `u_t + speed * u_x = 0` with periodic wrap.
/// Positive speed couples cell `i` with `i - 1`, negative speed with `i + 1`.
pub fn assemble_upwind_advection(mesh: &Mesh1D, speed: f64) -> Result<LinearOperator> {
    let n = mesh.len();
    if n == 0 {
        return invalid("mesh has no cells");
    }
    if !speed.is_finite() {
        return invalid("advection speed must be finite");
    }
    let rows = (0..n)
        .map(|i| {
            let coeff = speed.abs() / mesh.widths[i];
            let upwind = if speed >= 0.0 { (i + n - 1) % n } else { (i + 1) % n };
            vec![(i, -coeff), (upwind, coeff)]
        })
        .collect();
    Ok(LinearOperator::from_rows(rows))
}

/// Exact cell averages of `1 + sin(pi x) / 2`.
pub fn smooth_advection_ic(mesh: &Mesh1D) -> Vec<f64> {
    mesh.centers()
        .iter()
        .zip(&mesh.widths)
        .map(|(&xm, &w)| {
            // average of sin over [xm - w/2, xm + w/2] = sin(pi xm) * sinc(pi w / 2)
            let half = 0.5 * PI * w;
            1.0 + 0.5 * (PI * xm).sin() * (half.sin() / half)
        })
        .collect()
}

/// Exact Godunov flux for `f(u) = u^2 / 2`.
pub fn burgers_godunov_flux(left: f64, right: f64) -> f64 {
    let f = |u: f64| 0.5 * u * u;
    if left <= right {
        if left > 0.0 {
            f(left)
        } else if right < 0.0 {
            f(right)
        } else {
            0.0
        }
    } else {
        f(left).max(f(right))
    }
}

/// Finite-volume RHS of periodic Burgers with the exact Godunov flux.
pub fn burgers_godunov_rhs(mesh: &Mesh1D, u: &[f64]) -> Vec<f64> {
    let n = u.len();
    // flux[i] sits at the right interface of cell i
    let flux: Vec<f64> = (0..n)
        .map(|i| burgers_godunov_flux(u[i], u[(i + 1) % n]))
        .collect();
    (0..n)
        .map(|i| -(flux[i] - flux[(i + n - 1) % n]) / mesh.widths[i])
        .collect()
}

/// Per-cell `max |u_i - u_{i+-1}| / max(|u_i|, 1e-12)` with periodic neighbours.
pub fn gradient_indicator(u: &[f64]) -> Result<Vec<f64>> {
    let n = u.len();
    if n < 2 {
        return invalid("gradient indicator needs at least two cells");
    }
    Ok((0..n)
        .map(|i| {
            let left = (u[i] - u[(i + n - 1) % n]).abs();
            let right = (u[i] - u[(i + 1) % n]).abs();
            left.max(right) / u[i].abs().max(1e-12)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmrThresholds {
    pub refine: f64,
    pub coarsen: f64,
    pub max_level: u32,
}

/// Position of cell `i` in the dyadic tree at its own level, if the mesh is
/// dyadic around `i`.
fn tree_index(mesh: &Mesh1D, left_edge: f64, i: usize) -> Option<u64> {
    let w = mesh.widths[i];
    let k = (left_edge - mesh.domain_start) / w;
    let rounded = k.round();
    ((k - rounded).abs() < 1e-6 && rounded >= 0.0).then_some(rounded as u64)
}

/// One refine/coarsen pass. Refinement splits a cell into two equal children
/// carrying the parent average; coarsening merges true sibling pairs whose
/// indicators are both below `coarsen` and averages them.
pub fn refine_coarsen(
    mesh: &Mesh1D,
    u: &[f64],
    indicator: &[f64],
    thresholds: AmrThresholds,
) -> Result<(Mesh1D, Vec<f64>)> {
    let n = mesh.len();
    if u.len() != n || indicator.len() != n {
        return invalid("state and indicator must match the cell count");
    }
    if !(thresholds.refine > thresholds.coarsen) {
        return invalid("refine threshold must exceed coarsen threshold");
    }
    let edges = mesh.edges();
    let mut widths = Vec::with_capacity(n);
    let mut levels = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let level = mesh.levels[i];
        if indicator[i] > thresholds.refine && level < thresholds.max_level {
            let half = 0.5 * mesh.widths[i];
            widths.extend([half, half]);
            levels.extend([level + 1, level + 1]);
            values.extend([u[i], u[i]]);
            i += 1;
            continue;
        }
        let mergeable = i + 1 < n
            && level > 0
            && mesh.levels[i + 1] == level
            && mesh.widths[i] == mesh.widths[i + 1]
            && indicator[i] < thresholds.coarsen
            && indicator[i + 1] < thresholds.coarsen
            && tree_index(mesh, edges[i], i).is_some_and(|k| k % 2 == 0);
        if mergeable {
            widths.push(mesh.widths[i] + mesh.widths[i + 1]);
            levels.push(level - 1);
            values.push(0.5 * (u[i] + u[i + 1]));
            i += 2;
        } else {
            widths.push(mesh.widths[i]);
            levels.push(level);
            values.push(u[i]);
            i += 1;
        }
    }
    let mut out = Mesh1D::new(mesh.domain_start, widths, levels)?;
    out.domain_length = mesh.domain_length;
    Ok((out, values))
}
