//! Structured simplicial meshes of the unit interval and the unit square.

use std::sync::{Arc, OnceLock};

use crate::error::{invalid, Result};
use crate::fem::FeFunction;

/// A conforming simplicial mesh of `(0,1)` or `(0,1)²`.
///
/// Nodes are numbered lexicographically (`x` fastest). In 2D every grid cell
/// is split along its lower-left to upper-right diagonal into two
/// counter-clockwise triangles.
#[derive(Debug)]
pub struct Mesh {
    dim: usize,
    cells: usize,
    coords: Vec<[f64; 2]>,
    elements: Vec<usize>,
    measures: Vec<f64>,
    grads: Vec<[[f64; 2]; 3]>,
    boundary: Vec<bool>,
    interior: Vec<usize>,
    interior_index: Vec<Option<usize>>,
    pattern: OnceLock<Pattern>,
}

/// Compressed-row sparsity of the node graph, plus the value slot of every
/// local element entry.
#[derive(Debug)]
pub(crate) struct Pattern {
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub slots: Vec<usize>,
}

impl Mesh {
    /// Uniform mesh of `(0,1)` with nodes `i/n`.
    pub fn interval(n: usize) -> Result<Arc<Mesh>> {
        if n < 2 {
            return invalid(format!("interval mesh needs at least 2 cells, got {n}"));
        }
        let coords = (0..=n).map(|i| [i as f64 / n as f64, 0.0]).collect();
        let elements = (0..n).flat_map(|i| [i, i + 1]).collect();
        Ok(Arc::new(Self::from_parts(1, n, coords, elements)))
    }

    /// Structured triangulation of `(0,1)²` with `n` cells per side.
    pub fn unit_square(n: usize) -> Result<Arc<Mesh>> {
        if n < 2 {
            return invalid(format!("square mesh needs at least 2 cells per side, got {n}"));
        }
        let nn = n + 1;
        let mut coords = Vec::with_capacity(nn * nn);
        for j in 0..=n {
            for i in 0..=n {
                coords.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let mut elements = Vec::with_capacity(6 * n * n);
        for j in 0..n {
            for i in 0..n {
                let a = j * nn + i;
                let b = a + 1;
                let c = a + nn + 1;
                let d = a + nn;
                elements.extend_from_slice(&[a, b, c, a, c, d]);
            }
        }
        Ok(Arc::new(Self::from_parts(2, n, coords, elements)))
    }

    fn from_parts(dim: usize, cells: usize, coords: Vec<[f64; 2]>, elements: Vec<usize>) -> Mesh {
        let nv = dim + 1;
        let n_el = elements.len() / nv;
        let mut measures = Vec::with_capacity(n_el);
        let mut grads = Vec::with_capacity(n_el);
        for e in 0..n_el {
            let v = &elements[e * nv..(e + 1) * nv];
            if dim == 1 {
                let len = coords[v[1]][0] - coords[v[0]][0];
                measures.push(len);
                grads.push([[-1.0 / len, 0.0], [1.0 / len, 0.0], [0.0, 0.0]]);
            } else {
                let [x0, y0] = coords[v[0]];
                let [x1, y1] = coords[v[1]];
                let [x2, y2] = coords[v[2]];
                let det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
                measures.push(0.5 * det);
                grads.push([
                    [(y1 - y2) / det, (x2 - x1) / det],
                    [(y2 - y0) / det, (x0 - x2) / det],
                    [(y0 - y1) / det, (x1 - x0) / det],
                ]);
            }
        }
        let boundary: Vec<bool> = coords
            .iter()
            .map(|p| p[..dim].iter().any(|&c| c == 0.0 || c == 1.0))
            .collect();
        let mut interior = Vec::new();
        let mut interior_index = vec![None; coords.len()];
        for (i, &b) in boundary.iter().enumerate() {
            if !b {
                interior_index[i] = Some(interior.len());
                interior.push(i);
            }
        }
        Mesh {
            dim,
            cells,
            coords,
            elements,
            measures,
            grads,
            boundary,
            interior,
            interior_index,
            pattern: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of grid cells per coordinate direction.
    pub fn cells_per_side(&self) -> usize {
        self.cells
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_elements(&self) -> usize {
        self.measures.len()
    }

    /// Vertices per element.
    pub fn nodes_per_element(&self) -> usize {
        self.dim + 1
    }

    /// Maximum element diameter: `1/n` in 1D, `√2/n` in 2D.
    pub fn h(&self) -> f64 {
        if self.dim == 1 {
            1.0 / self.cells as f64
        } else {
            std::f64::consts::SQRT_2 / self.cells as f64
        }
    }

    /// Coordinates of a node, `dim` components.
    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i][..self.dim]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.elements[e * nv..(e + 1) * nv]
    }

    /// Length or area of an element.
    pub fn measure(&self, e: usize) -> f64 {
        self.measures[e]
    }

    /// Gradients of the barycentric basis functions on element `e`.
    pub fn gradients(&self, e: usize) -> &[[f64; 2]] {
        &self.grads[e][..self.dim + 1]
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let v = self.element(e);
        let mut c = [0.0; 2];
        for &i in v {
            c[0] += self.coords[i][0];
            c[1] += self.coords[i][1];
        }
        let k = v.len() as f64;
        [c[0] / k, c[1] / k]
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    /// Node ids not on the boundary, in increasing order.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    /// Position of a node within [`Mesh::interior_nodes`].
    pub fn interior_index(&self, i: usize) -> Option<usize> {
        self.interior_index[i]
    }

    /// Node id → interior position table.
    pub fn interior_index_table(&self) -> &[Option<usize>] {
        &self.interior_index
    }

    pub fn dist_to_boundary(&self, node: usize) -> f64 {
        dist_point_to_boundary(self.node(node))
    }

    /// Element containing `p` and the barycentric coordinates of `p` in it.
    pub fn locate(&self, p: &[f64]) -> (usize, [f64; 3]) {
        let n = self.cells as f64;
        let cell = |x: f64| -> (usize, f64) {
            let s = (x.clamp(0.0, 1.0) * n).min(n);
            let i = (s.floor() as usize).min(self.cells - 1);
            (i, s - i as f64)
        };
        let (i, s) = cell(p[0]);
        if self.dim == 1 {
            return (i, [1.0 - s, s, 0.0]);
        }
        let (j, t) = cell(p[1]);
        let base = 2 * (j * self.cells + i);
        if s >= t {
            (base, [1.0 - s, s - t, t])
        } else {
            (base + 1, [1.0 - t, s, t - s])
        }
    }

    pub(crate) fn pattern(&self) -> &Pattern {
        self.pattern.get_or_init(|| self.build_pattern())
    }

    fn build_pattern(&self) -> Pattern {
        let n = self.n_nodes();
        let nv = self.nodes_per_element();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in 0..self.n_elements() {
            for &a in self.element(e) {
                rows[a].extend_from_slice(self.element(e));
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let mut slots = Vec::with_capacity(self.n_elements() * nv * nv);
        for e in 0..self.n_elements() {
            let v = self.element(e);
            for &a in v {
                let row = &col_idx[row_ptr[a]..row_ptr[a + 1]];
                for &b in v {
                    let k = row.binary_search(&b).expect("pattern covers element");
                    slots.push(row_ptr[a] + k);
                }
            }
        }
        Pattern {
            row_ptr,
            col_idx,
            slots,
        }
    }
}

/// Euclidean distance from a point of the closed unit interval or square to
/// the boundary.
pub fn dist_point_to_boundary(p: &[f64]) -> f64 {
    p.iter()
        .map(|&c| c.min(1.0 - c))
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

/// Restrict a nodal function on a fine structured mesh to a coarser one whose
/// cell count divides the fine one, by sampling at coinciding nodes.
pub fn transfer_nodal(fine: &FeFunction, coarse: &Arc<Mesh>) -> Result<FeFunction> {
    let fm = fine.mesh();
    if fm.dim() != coarse.dim() {
        return invalid(format!(
            "cannot transfer from a {}D mesh to a {}D mesh",
            fm.dim(),
            coarse.dim()
        ));
    }
    let (nf, nc) = (fm.cells_per_side(), coarse.cells_per_side());
    if nf % nc != 0 {
        return invalid(format!(
            "coarse cell count {nc} does not divide fine cell count {nf}"
        ));
    }
    let r = nf / nc;
    let fv = fine.values();
    let values: Vec<f64> = if coarse.dim() == 1 {
        (0..=nc).map(|i| fv[i * r]).collect()
    } else {
        let mut out = Vec::with_capacity((nc + 1) * (nc + 1));
        for j in 0..=nc {
            for i in 0..=nc {
                out.push(fv[(j * r) * (nf + 1) + i * r]);
            }
        }
        out
    };
    FeFunction::new(coarse.clone(), values, fine.space())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Space;
    use approx::assert_abs_diff_eq;

    #[test]
    fn interval_layout() {
        let m = Mesh::interval(4).unwrap();
        let xs: Vec<f64> = (0..m.n_nodes()).map(|i| m.node(i)[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(m.n_elements(), 4);
        let b: Vec<usize> = (0..5).filter(|&i| m.is_boundary(i)).collect();
        assert_eq!(b, vec![0, 4]);

        let m = Mesh::interval(2).unwrap();
        assert_eq!(m.h(), 0.5);
        assert_eq!(
            (0..3).map(|i| m.is_boundary(i)).collect::<Vec<_>>(),
            vec![true, false, true]
        );
        assert_eq!(Mesh::interval(3200).unwrap().n_nodes(), 3201);
    }

    #[test]
    fn too_few_cells() {
        assert!(Mesh::interval(1).is_err());
        assert!(Mesh::unit_square(1).is_err());
        assert!(Mesh::interval(0).is_err());
    }

    #[test]
    fn square_layout() {
        let m = Mesh::unit_square(2).unwrap();
        assert_eq!(m.n_nodes(), 9);
        assert_eq!(m.n_elements(), 8);
        for e in 0..8 {
            assert_abs_diff_eq!(m.measure(e), 0.125, epsilon = 1e-15);
        }
        assert_eq!(Mesh::unit_square(200).unwrap().n_nodes(), 40401);
        let m = Mesh::unit_square(7).unwrap();
        assert_eq!(m.n_elements(), 2 * 49);
        assert_abs_diff_eq!(m.h(), 2f64.sqrt() / 7.0);
    }

    #[test]
    fn total_measure_is_one() {
        for n in [2, 3, 10, 37] {
            let a: f64 = (0..Mesh::interval(n).unwrap().n_elements())
                .map(|e| Mesh::interval(n).unwrap().measure(e))
                .sum();
            assert_abs_diff_eq!(a, 1.0, epsilon = 1e-12);
            let m = Mesh::unit_square(n).unwrap();
            let a: f64 = (0..m.n_elements()).map(|e| m.measure(e)).sum();
            assert_abs_diff_eq!(a, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn elements_valid_and_positive() {
        for m in [Mesh::interval(9).unwrap(), Mesh::unit_square(9).unwrap()] {
            for e in 0..m.n_elements() {
                assert!(m.element(e).iter().all(|&i| i < m.n_nodes()));
                assert!(m.measure(e) > 0.0);
            }
        }
    }

    #[test]
    fn boundary_flags_match_coordinates() {
        let m = Mesh::unit_square(5).unwrap();
        for i in 0..m.n_nodes() {
            let p = m.node(i);
            let on = p.iter().any(|&c| c == 0.0 || c == 1.0);
            assert_eq!(m.is_boundary(i), on);
            assert_eq!(m.interior_index(i).is_some(), !on);
        }
        assert_eq!(m.interior_nodes().len(), 16);
    }

    // With a single diagonal direction every interior vertex touches six
    // triangles.
    #[test]
    fn interior_valence() {
        let m = Mesh::interval(6).unwrap();
        let mut count = vec![0; m.n_nodes()];
        for e in 0..m.n_elements() {
            for &v in m.element(e) {
                count[v] += 1;
            }
        }
        assert!(m.interior_nodes().iter().all(|&i| count[i] == 2));

        let m = Mesh::unit_square(6).unwrap();
        let mut count = vec![0; m.n_nodes()];
        for e in 0..m.n_elements() {
            for &v in m.element(e) {
                count[v] += 1;
            }
        }
        assert!(m.interior_nodes().iter().all(|&i| count[i] == 6));
    }

    #[test]
    fn barycentric_gradients_sum_to_zero() {
        let m = Mesh::unit_square(3).unwrap();
        for e in 0..m.n_elements() {
            let g = m.gradients(e);
            let sx: f64 = g.iter().map(|v| v[0]).sum();
            let sy: f64 = g.iter().map(|v| v[1]).sum();
            assert_abs_diff_eq!(sx, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(sy, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn distances() {
        let m = Mesh::interval(4).unwrap();
        assert_eq!(m.dist_to_boundary(1), 0.25);
        assert_eq!(dist_point_to_boundary(&[0.5, 0.1]), 0.1);
        let m2 = Mesh::unit_square(4).unwrap();
        for mesh in [m, m2] {
            for i in 0..mesh.n_nodes() {
                if mesh.is_boundary(i) {
                    assert_eq!(mesh.dist_to_boundary(i), 0.0);
                }
            }
        }
    }

    #[test]
    fn locate_reproduces_point() {
        let m = Mesh::unit_square(5).unwrap();
        for p in [[0.13, 0.71], [0.99, 0.01], [1.0, 1.0], [0.0, 0.0], [0.4, 0.4]] {
            let (e, lam) = m.locate(&p);
            let v = m.element(e);
            let mut x = [0.0; 2];
            for k in 0..3 {
                assert!(lam[k] >= -1e-12);
                x[0] += lam[k] * m.node(v[k])[0];
                x[1] += lam[k] * m.node(v[k])[1];
            }
            assert_abs_diff_eq!(x[0], p[0], epsilon = 1e-12);
            assert_abs_diff_eq!(x[1], p[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn transfer_subsamples() {
        let fine = Mesh::interval(8).unwrap();
        let coarse = Mesh::interval(4).unwrap();
        let v = FeFunction::new(
            fine.clone(),
            (0..9).map(|i| (i as f64 / 8.0).powi(3)).collect(),
            Space::Full,
        )
        .unwrap();
        let c = transfer_nodal(&v, &coarse).unwrap();
        for i in 0..5 {
            assert_eq!(c.values()[i], (i as f64 / 4.0).powi(3));
        }
        let k = FeFunction::constant(fine, 3.7);
        assert!(transfer_nodal(&k, &coarse).unwrap().values().iter().all(|&x| x == 3.7));
    }

    #[test]
    fn transfer_sine_from_fine_grid() {
        let fine = Mesh::interval(3200).unwrap();
        let coarse = Mesh::interval(40).unwrap();
        let f = |x: f64| (2.0 * std::f64::consts::PI * x).sin();
        let v = FeFunction::new(
            fine.clone(),
            (0..=3200).map(|i| f(i as f64 / 3200.0)).collect(),
            Space::Full,
        )
        .unwrap();
        let c = transfer_nodal(&v, &coarse).unwrap();
        let err = (0..=40)
            .map(|i| (c.values()[i] - f(i as f64 / 40.0)).abs())
            .fold(0.0, f64::max);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn transfer_rejects_non_divisible() {
        let fine = Mesh::interval(10).unwrap();
        let v = FeFunction::constant(fine, 1.0);
        assert!(transfer_nodal(&v, &Mesh::interval(4).unwrap()).is_err());
        let sq = Mesh::unit_square(4).unwrap();
        assert!(transfer_nodal(&v, &sq).is_err());
    }

    #[test]
    fn transfer_in_2d_and_composition() {
        let fine = Mesh::unit_square(12).unwrap();
        let mid = Mesh::unit_square(6).unwrap();
        let coarse = Mesh::unit_square(3).unwrap();
        let vals = (0..fine.n_nodes())
            .map(|i| {
                let p = fine.node(i);
                (3.0 * p[0]).sin() + p[1] * p[1]
            })
            .collect();
        let v = FeFunction::new(fine, vals, Space::Full).unwrap();
        let direct = transfer_nodal(&v, &coarse).unwrap();
        let two = transfer_nodal(&transfer_nodal(&v, &mid).unwrap(), &coarse).unwrap();
        assert_eq!(direct.values(), two.values());
        for i in 0..coarse.n_nodes() {
            let p = coarse.node(i);
            assert_abs_diff_eq!(direct.values()[i], (3.0 * p[0]).sin() + p[1] * p[1], epsilon = 1e-14);
        }
    }
}
