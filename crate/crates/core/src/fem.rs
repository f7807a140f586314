//! P1 finite elements: nodal functions, assembly of mass, coefficient-weighted
//! stiffness and load vectors, L² projection, Lagrange interpolation and
//! discrete norms.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::linalg::{cg_solve, CgOptions, SparseMatrix};
use crate::mesh::Mesh;

/// Which P1 space a nodal vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Unconstrained continuous piecewise linears.
    Full,
    /// Continuous piecewise linears vanishing on the boundary.
    ZeroTrace,
}

/// Analytic function of the spatial point.
#[derive(Clone)]
pub struct ScalarField(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>);

impl ScalarField {
    pub fn new(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c)
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        (self.0)(p)
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ScalarField(..)")
    }
}

/// Analytic function of space and time.
#[derive(Clone)]
pub struct SpaceTimeField {
    f: Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>,
    steady: bool,
}

impl SpaceTimeField {
    pub fn new(f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            f: Arc::new(f),
            steady: false,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::steady(ScalarField::constant(c))
    }

    /// Time-independent field.
    pub fn steady(f: ScalarField) -> Self {
        Self {
            f: Arc::new(move |p, _| f.eval(p)),
            steady: true,
        }
    }

    /// Whether the field is known not to depend on time.
    pub fn is_steady(&self) -> bool {
        self.steady
    }

    pub fn eval(&self, p: &[f64], t: f64) -> f64 {
        (self.f)(p, t)
    }

    pub fn at(&self, t: f64) -> ScalarField {
        let f = self.clone();
        ScalarField::new(move |p| f.eval(p, t))
    }
}

impl fmt::Debug for SpaceTimeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SpaceTimeField(..)")
    }
}

/// A P1 function given by its nodal values.
#[derive(Debug, Clone)]
pub struct FeFunction {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
    space: Space,
}

impl FeFunction {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>, space: Space) -> Result<Self> {
        if values.len() != mesh.n_nodes() {
            return invalid(format!(
                "expected {} nodal values, got {}",
                mesh.n_nodes(),
                values.len()
            ));
        }
        if space == Space::ZeroTrace
            && (0..mesh.n_nodes()).any(|i| mesh.is_boundary(i) && values[i] != 0.0)
        {
            return invalid("zero-trace function has a nonzero boundary value");
        }
        Ok(Self {
            mesh,
            values,
            space,
        })
    }

    pub fn constant(mesh: Arc<Mesh>, c: f64) -> Self {
        let values = vec![c; mesh.n_nodes()];
        Self {
            mesh,
            values,
            space: Space::Full,
        }
    }

    pub fn zeros(mesh: Arc<Mesh>, space: Space) -> Self {
        let values = vec![0.0; mesh.n_nodes()];
        Self {
            mesh,
            values,
            space,
        }
    }

    /// Zero-trace function from its values at interior nodes.
    pub fn from_interior(mesh: Arc<Mesh>, interior: &[f64]) -> Result<Self> {
        if interior.len() != mesh.interior_nodes().len() {
            return invalid(format!(
                "expected {} interior values, got {}",
                mesh.interior_nodes().len(),
                interior.len()
            ));
        }
        let mut values = vec![0.0; mesh.n_nodes()];
        for (&node, &v) in mesh.interior_nodes().iter().zip(interior) {
            values[node] = v;
        }
        Ok(Self {
            mesh,
            values,
            space: Space::ZeroTrace,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn space(&self) -> Space {
        self.space
    }

    /// Values at interior nodes, in [`Mesh::interior_nodes`] order.
    pub fn interior_values(&self) -> Vec<f64> {
        self.mesh
            .interior_nodes()
            .iter()
            .map(|&i| self.values[i])
            .collect()
    }

    /// Point evaluation of the piecewise linear interpolant.
    pub fn eval(&self, p: &[f64]) -> f64 {
        let (e, lam) = self.mesh.locate(p);
        self.mesh
            .element(e)
            .iter()
            .zip(lam)
            .map(|(&i, l)| l * self.values[i])
            .sum()
    }

    /// Nodal difference `self − other` on the same mesh.
    pub fn sub(&self, other: &FeFunction) -> Result<FeFunction> {
        if !Arc::ptr_eq(&self.mesh, &other.mesh) && self.mesh.n_nodes() != other.mesh.n_nodes() {
            return invalid("functions live on different meshes");
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        let space = if self.space == Space::ZeroTrace && other.space == Space::ZeroTrace {
            Space::ZeroTrace
        } else {
            Space::Full
        };
        Ok(FeFunction {
            mesh: self.mesh.clone(),
            values,
            space,
        })
    }
}

fn element_mass_factor(mesh: &Mesh, e: usize) -> f64 {
    let d = mesh.dim() as f64;
    mesh.measure(e) / ((d + 1.0) * (d + 2.0))
}

fn grad_dot(g: &[[f64; 2]], a: usize, b: usize) -> f64 {
    g[a][0] * g[b][0] + g[a][1] * g[b][1]
}

fn assemble_with(mesh: &Mesh, mut element: impl FnMut(usize, usize, usize) -> f64) -> SparseMatrix {
    let pat = mesh.pattern();
    let nv = mesh.nodes_per_element();
    let mut vals = vec![0.0; pat.col_idx.len()];
    let mut s = 0;
    for e in 0..mesh.n_elements() {
        for a in 0..nv {
            for b in 0..nv {
                vals[pat.slots[s]] += element(e, a, b);
                s += 1;
            }
        }
    }
    SparseMatrix::from_parts_unchecked(
        mesh.n_nodes(),
        pat.row_ptr.clone(),
        pat.col_idx.clone(),
        vals,
    )
}

/// Consistent mass matrix over all nodes.
pub fn assemble_mass(mesh: &Mesh) -> SparseMatrix {
    assemble_with(mesh, |e, a, b| {
        let w = element_mass_factor(mesh, e);
        if a == b {
            2.0 * w
        } else {
            w
        }
    })
}

/// Stiffness matrix of `(q∇u, ∇v)` over all nodes, with `q` piecewise linear.
/// Zero nodal values are accepted; the solvers need `q > 0`.
pub fn assemble_stiffness(mesh: &Mesh, q: &FeFunction) -> Result<SparseMatrix> {
    check_same_mesh(mesh, q)?;
    if let Some(i) = q.values().iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
        return invalid(format!(
            "coefficient must be nonnegative, node {i} has {}",
            q.values()[i]
        ));
    }
    Ok(stiffness_unchecked(mesh, q.values()))
}

fn stiffness_unchecked(mesh: &Mesh, q: &[f64]) -> SparseMatrix {
    let nv = mesh.nodes_per_element();
    let mut cached = (usize::MAX, 0.0);
    assemble_with(mesh, |e, a, b| {
        if cached.0 != e {
            let mean = mesh.element(e).iter().map(|&i| q[i]).sum::<f64>() / nv as f64;
            cached = (e, mean * mesh.measure(e));
        }
        cached.1 * grad_dot(mesh.gradients(e), a, b)
    })
}

/// Stiffness matrix of the unit coefficient.
pub fn assemble_unit_stiffness(mesh: &Mesh) -> SparseMatrix {
    assemble_with(mesh, |e, a, b| mesh.measure(e) * grad_dot(mesh.gradients(e), a, b))
}

/// Load vector `∫ f φ_i` over all nodes by the vertex rule.
pub fn assemble_load(mesh: &Mesh, f: &ScalarField) -> Vec<f64> {
    let nodal: Vec<f64> = (0..mesh.n_nodes()).map(|i| f.eval(mesh.node(i))).collect();
    lumped_load(mesh, &nodal)
}

/// `∫ f φ_i` with a quadrature exact for quadratics (two-point Gauss in 1D,
/// edge midpoints in 2D), so that projecting a P1 function reproduces it.
pub fn assemble_projection_load(mesh: &Mesh, f: &ScalarField) -> Vec<f64> {
    let mut b = vec![0.0; mesh.n_nodes()];
    for e in 0..mesh.n_elements() {
        let v = mesh.element(e);
        let area = mesh.measure(e);
        if mesh.dim() == 1 {
            let (x0, x1) = (mesh.node(v[0])[0], mesh.node(v[1])[0]);
            let off = 0.5 / 3f64.sqrt();
            for lam in [0.5 - off, 0.5 + off] {
                let fx = f.eval(&[x0 + lam * (x1 - x0)]);
                b[v[0]] += 0.5 * area * fx * (1.0 - lam);
                b[v[1]] += 0.5 * area * fx * lam;
            }
        } else {
            for (a, c) in [(0, 1), (1, 2), (2, 0)] {
                let (pa, pc) = (mesh.node(v[a]), mesh.node(v[c]));
                let mid = [0.5 * (pa[0] + pc[0]), 0.5 * (pa[1] + pc[1])];
                let w = area / 3.0 * f.eval(&mid) * 0.5;
                b[v[a]] += w;
                b[v[c]] += w;
            }
        }
    }
    b
}

/// `∫ v φ_i` over the nodes of `coarse` for a P1 function `v` on a nested
/// refinement. Exact: the quadrature runs over the fine elements, on which
/// both factors are linear.
pub fn assemble_nested_load(v: &FeFunction, coarse: &Mesh) -> Result<Vec<f64>> {
    let fine = v.mesh();
    if fine.dim() != coarse.dim() || fine.cells_per_side() % coarse.cells_per_side() != 0 {
        return invalid(format!(
            "mesh with {} cells is not a refinement of one with {}",
            fine.cells_per_side(),
            coarse.cells_per_side()
        ));
    }
    let x = v.values();
    let mut b = vec![0.0; coarse.n_nodes()];
    let mut add = |p: &[f64], w: f64| {
        let (ce, lam) = coarse.locate(p);
        for (&i, l) in coarse.element(ce).iter().zip(lam) {
            b[i] += w * l;
        }
    };
    for e in 0..fine.n_elements() {
        let el = fine.element(e);
        let area = fine.measure(e);
        if fine.dim() == 1 {
            let (x0, x1) = (fine.node(el[0])[0], fine.node(el[1])[0]);
            let off = 0.5 / 3f64.sqrt();
            for lam in [0.5 - off, 0.5 + off] {
                let val = (1.0 - lam) * x[el[0]] + lam * x[el[1]];
                add(&[x0 + lam * (x1 - x0)], 0.5 * area * val);
            }
        } else {
            for (a, c) in [(0, 1), (1, 2), (2, 0)] {
                let (pa, pc) = (fine.node(el[a]), fine.node(el[c]));
                let mid = [0.5 * (pa[0] + pc[0]), 0.5 * (pa[1] + pc[1])];
                add(&mid, area / 3.0 * 0.5 * (x[el[a]] + x[el[c]]));
            }
        }
    }
    Ok(b)
}

/// `Σ_T |T|/(d+1) · v(x_i)`: vertex-rule load for nodal data `v`.
pub(crate) fn lumped_load(mesh: &Mesh, nodal: &[f64]) -> Vec<f64> {
    let w = lumped_weights(mesh);
    w.iter().zip(nodal).map(|(a, b)| a * b).collect()
}

/// Row sums of the mass matrix, `∫ φ_i`.
pub fn lumped_weights(mesh: &Mesh) -> Vec<f64> {
    let nv = mesh.nodes_per_element() as f64;
    let mut b = vec![0.0; mesh.n_nodes()];
    for e in 0..mesh.n_elements() {
        let w = mesh.measure(e) / nv;
        for &i in mesh.element(e) {
            b[i] += w;
        }
    }
    b
}

/// Nodal evaluation of `f`.
pub fn lagrange_interpolate(mesh: &Arc<Mesh>, f: &ScalarField) -> FeFunction {
    let values = (0..mesh.n_nodes()).map(|i| f.eval(mesh.node(i))).collect();
    FeFunction {
        mesh: mesh.clone(),
        values,
        space: Space::Full,
    }
}

/// L² projection of `f` onto the zero-trace space.
pub fn l2_project(mesh: &Arc<Mesh>, f: &ScalarField) -> Result<FeFunction> {
    P1Space::new(mesh.clone()).l2_project(f)
}

fn check_same_mesh(mesh: &Mesh, v: &FeFunction) -> Result<()> {
    if !std::ptr::eq(mesh, v.mesh().as_ref()) && mesh.n_nodes() != v.mesh().n_nodes() {
        return invalid("function is defined on a different mesh");
    }
    Ok(())
}

/// `√(vᵀMv)` computed element by element.
pub fn norm_l2(v: &FeFunction) -> f64 {
    let mesh = v.mesh();
    let x = v.values();
    let mut s = 0.0;
    for e in 0..mesh.n_elements() {
        let w = element_mass_factor(mesh, e);
        let el = mesh.element(e);
        let sum: f64 = el.iter().map(|&i| x[i]).sum();
        let sq: f64 = el.iter().map(|&i| x[i] * x[i]).sum();
        // vᵀ M_T v = w (Σ v_a² + (Σ v_a)²)
        s += w * (sq + sum * sum);
    }
    s.max(0.0).sqrt()
}

/// `‖∇v‖_{L²}`.
pub fn seminorm_h1(v: &FeFunction) -> f64 {
    let mesh = v.mesh();
    let x = v.values();
    let mut s = 0.0;
    for e in 0..mesh.n_elements() {
        let g = element_gradient(mesh, e, x);
        s += mesh.measure(e) * (g[0] * g[0] + g[1] * g[1]);
    }
    s.sqrt()
}

pub fn norm_linf(v: &FeFunction) -> f64 {
    v.values().iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Constant gradient of a nodal function on element `e`.
pub fn element_gradient(mesh: &Mesh, e: usize, values: &[f64]) -> [f64; 2] {
    let mut g = [0.0; 2];
    for (&i, gr) in mesh.element(e).iter().zip(mesh.gradients(e)) {
        g[0] += values[i] * gr[0];
        g[1] += values[i] * gr[1];
    }
    g
}

/// A mesh together with the matrices every solve on it needs: the mass
/// matrix, the unit-coefficient stiffness, and the interior mass block.
#[derive(Debug)]
pub struct P1Space {
    mesh: Arc<Mesh>,
    mass: SparseMatrix,
    unit_stiffness: SparseMatrix,
    interior_mass: SparseMatrix,
    cg: CgOptions,
}

impl P1Space {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let mass = assemble_mass(&mesh);
        let unit_stiffness = assemble_unit_stiffness(&mesh);
        let interior_mass = mass.restrict(mesh.interior_nodes(), interior_map(&mesh));
        Self {
            mesh,
            mass,
            unit_stiffness,
            interior_mass,
            cg: CgOptions::default(),
        }
    }

    pub fn with_cg_options(mut self, cg: CgOptions) -> Self {
        self.cg = cg;
        self
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn mass(&self) -> &SparseMatrix {
        &self.mass
    }

    pub fn unit_stiffness(&self) -> &SparseMatrix {
        &self.unit_stiffness
    }

    pub fn interior_mass(&self) -> &SparseMatrix {
        &self.interior_mass
    }

    pub fn cg_options(&self) -> &CgOptions {
        &self.cg
    }

    pub fn n_interior(&self) -> usize {
        self.mesh.interior_nodes().len()
    }

    /// Interior block of the `q`-weighted stiffness. `q` must be positive.
    pub fn interior_stiffness(&self, q: &[f64]) -> Result<SparseMatrix> {
        if q.len() != self.mesh.n_nodes() {
            return invalid(format!(
                "coefficient has {} values for {} nodes",
                q.len(),
                self.mesh.n_nodes()
            ));
        }
        if let Some(i) = q.iter().position(|&v| !(v > 0.0)) {
            return invalid(format!("coefficient must be positive, node {i} has {}", q[i]));
        }
        Ok(self.restrict(&stiffness_unchecked(&self.mesh, q)))
    }

    pub fn restrict(&self, full: &SparseMatrix) -> SparseMatrix {
        full.restrict(self.mesh.interior_nodes(), interior_map(&self.mesh))
    }

    /// Vertex-rule load at interior nodes.
    pub fn interior_load(&self, f: &ScalarField) -> Vec<f64> {
        let full = assemble_load(&self.mesh, f);
        self.to_interior(&full)
    }

    pub fn to_interior(&self, full: &[f64]) -> Vec<f64> {
        self.mesh.interior_nodes().iter().map(|&i| full[i]).collect()
    }

    pub fn from_interior(&self, interior: &[f64]) -> Result<FeFunction> {
        FeFunction::from_interior(self.mesh.clone(), interior)
    }

    pub fn l2_project(&self, f: &ScalarField) -> Result<FeFunction> {
        let b = self.to_interior(&assemble_projection_load(&self.mesh, f));
        let x = cg_solve(&self.interior_mass, &b, &self.cg)?.x;
        self.from_interior(&x)
    }

    /// L² projection onto this (zero-trace) space of a function given on a
    /// nested refinement.
    pub fn project_nested(&self, v: &FeFunction) -> Result<FeFunction> {
        let b = self.to_interior(&assemble_nested_load(v, &self.mesh)?);
        let x = cg_solve(&self.interior_mass, &b, &self.cg)?.x;
        self.from_interior(&x)
    }

    pub fn interpolate(&self, f: &ScalarField) -> FeFunction {
        lagrange_interpolate(&self.mesh, f)
    }

    /// `(u, v)` in L² for interior vectors.
    pub fn interior_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let mu = self.interior_mass.matvec(u).expect("interior vector");
        crate::linalg::dot(&mu, v)
    }
}

fn interior_map(mesh: &Mesh) -> &[Option<usize>] {
    mesh.interior_index_table()
}
