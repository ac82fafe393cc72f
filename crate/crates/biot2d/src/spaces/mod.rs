//! Global DOF management for the triplet `RT_k x RT_k x Q_k`, canonical
//! interpolation, L2 projection, and the exact coarse-to-fine embedding
//! under 2x2 refinement.
//!
//! Both vector fields carry the essential condition `w . n = 0` on the
//! domain boundary: the normal moments on boundary faces are eliminated
//! from the free numbering (the tangential displacement condition stays
//! weak through the interior-penalty boundary terms). This makes the
//! constant pressure the exact kernel of the mixed operator when the
//! storage term vanishes, which is what the kernel-aware local solvers and
//! the mean-zero pressure convention rely on.

pub mod element;
pub mod quadrature;

use std::sync::Arc;

use crate::linalg::SparseMatrix;
use crate::mesh::Mesh;
use crate::{Error, Result};
use element::{q_dim, rt_dim, rt_interior_dim, ReferenceElement};
use quadrature::{gauss_legendre_unit, Quadrature};

pub const CONSTRAINED: u32 = u32::MAX;

/// Global numbering for one Raviart-Thomas space on a mesh.
///
/// Raw DOFs enumerate every face moment (faces first, `k+1` moments each)
/// and then the per-cell interior moments. A face DOF has exactly one raw
/// index shared by both adjacent cells, which makes normal-component
/// continuity structural. Boundary-face moments are constrained to zero and
/// excluded from the free numbering.
#[derive(Debug)]
pub struct RtDofMap {
    pub k: usize,
    pub n_raw: usize,
    pub n_free: usize,
    free_of_raw: Vec<u32>,
    raw_of_free: Vec<u32>,
    /// Cell-major local-to-raw map, `rt_dim(k)` entries per cell.
    cell_dofs: Vec<u32>,
    interior_base: usize,
}

impl RtDofMap {
    fn new(mesh: &Mesh, k: usize) -> Self {
        let per_face = k + 1;
        let per_cell_interior = rt_interior_dim(k);
        let interior_base = mesh.n_faces() * per_face;
        let n_raw = interior_base + mesh.n_cells() * per_cell_interior;

        let mut constrained = vec![false; n_raw];
        for bf in &mesh.boundary_faces {
            for m in 0..per_face {
                constrained[bf.face_id * per_face + m] = true;
            }
        }
        let mut free_of_raw = vec![CONSTRAINED; n_raw];
        let mut raw_of_free = Vec::new();
        for (raw, &c) in constrained.iter().enumerate() {
            if !c {
                free_of_raw[raw] = raw_of_free.len() as u32;
                raw_of_free.push(raw as u32);
            }
        }

        let ld = rt_dim(k);
        let mut cell_dofs = vec![0u32; mesh.n_cells() * ld];
        for c in 0..mesh.n_cells() {
            let faces = mesh.cell_faces(c);
            let dofs = &mut cell_dofs[c * ld..(c + 1) * ld];
            for (e, &f) in faces.iter().enumerate() {
                for m in 0..per_face {
                    dofs[e * per_face + m] = (f * per_face + m) as u32;
                }
            }
            for t in 0..per_cell_interior {
                dofs[4 * per_face + t] = (interior_base + c * per_cell_interior + t) as u32;
            }
        }

        RtDofMap {
            k,
            n_raw,
            n_free: raw_of_free.len(),
            free_of_raw,
            raw_of_free,
            cell_dofs,
            interior_base,
        }
    }

    pub fn cell_dofs(&self, cell: usize) -> &[u32] {
        let ld = rt_dim(self.k);
        &self.cell_dofs[cell * ld..(cell + 1) * ld]
    }

    pub fn face_dof(&self, face_id: usize, m: usize) -> usize {
        face_id * (self.k + 1) + m
    }

    pub fn interior_dof(&self, cell: usize, t: usize) -> usize {
        self.interior_base + cell * rt_interior_dim(self.k) + t
    }

    #[inline]
    pub fn free_of_raw(&self, raw: usize) -> Option<usize> {
        let f = self.free_of_raw[raw];
        (f != CONSTRAINED).then_some(f as usize)
    }

    pub fn raw_of_free(&self, free: usize) -> usize {
        self.raw_of_free[free] as usize
    }

    pub fn is_constrained(&self, raw: usize) -> bool {
        self.free_of_raw[raw] == CONSTRAINED
    }

    /// Spreads a free-DOF vector into raw numbering (zeros on constraints).
    pub fn raw_from_free(&self, free: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_raw];
        for (i, &raw) in self.raw_of_free.iter().enumerate() {
            out[raw as usize] = free[i];
        }
        out
    }

    /// Restricts a raw vector to the free DOFs.
    pub fn free_from_raw(&self, raw: &[f64]) -> Vec<f64> {
        self.raw_of_free
            .iter()
            .map(|&r| raw[r as usize])
            .collect()
    }
}

/// The mixed space triplet on one mesh: two RT spaces (displacement and
/// seepage velocity, sharing one DOF map) and the discontinuous pressure
/// space. Monolithic vectors are laid out `[u | v | p]` over free DOFs.
pub struct SpaceTriple {
    pub mesh: Arc<Mesh>,
    pub k: usize,
    /// Pressure degree; equals `k` except in deliberate mismatch studies.
    pub kq: usize,
    pub elem: Arc<ReferenceElement>,
    pub rt_dofs: Arc<RtDofMap>,
    pub quad: Quadrature,
}

impl SpaceTriple {
    pub fn n_u(&self) -> usize {
        self.rt_dofs.n_free
    }

    pub fn n_v(&self) -> usize {
        self.rt_dofs.n_free
    }

    pub fn n_p(&self) -> usize {
        self.mesh.n_cells() * q_dim(self.kq)
    }

    pub fn q_dim_per_cell(&self) -> usize {
        q_dim(self.kq)
    }

    pub fn u_offset(&self) -> usize {
        0
    }

    pub fn v_offset(&self) -> usize {
        self.n_u()
    }

    pub fn p_offset(&self) -> usize {
        self.n_u() + self.n_v()
    }

    /// Total free DOFs of the monolithic system.
    pub fn total_dofs(&self) -> usize {
        self.n_u() + self.n_v() + self.n_p()
    }

    /// Free DOFs of the displacement-velocity pair (the SPD reformulation).
    pub fn w_dofs(&self) -> usize {
        self.n_u() + self.n_v()
    }

    pub fn p_dof(&self, cell: usize, m: usize) -> usize {
        cell * q_dim(self.kq) + m
    }
}

/// Builds the equal-degree triplet `RT_k x RT_k x Q_k`.
pub fn build_spaces(mesh: &Arc<Mesh>, k: usize) -> SpaceTriple {
    build_spaces_with_pressure_degree(mesh, k, k)
}

/// Variant with an explicitly chosen pressure degree. Degrees other than
/// `k` break the matching condition; this exists for negative controls in
/// the verification suite.
pub fn build_spaces_with_pressure_degree(mesh: &Arc<Mesh>, k: usize, kq: usize) -> SpaceTriple {
    SpaceTriple {
        mesh: mesh.clone(),
        k,
        kq,
        elem: Arc::new(ReferenceElement::new(k)),
        rt_dofs: Arc::new(RtDofMap::new(mesh, k)),
        quad: Quadrature::for_degree(k.max(kq)),
    }
}

/// Canonical (moment-based) RT interpolation of an analytic vector field.
/// Returns raw coefficients; boundary moments are kept so tests can check
/// they vanish for admissible fields.
pub fn interpolate_rt(space: &SpaceTriple, f: impl Fn(f64, f64) -> [f64; 2]) -> Vec<f64> {
    let k = space.k;
    let h = space.mesh.h;
    let npts = (k + 2).max(10);
    let (qx, qw) = gauss_legendre_unit(npts);
    let mut raw = vec![0.0; space.rt_dofs.n_raw];
    for (c, cell) in space.mesh.cells.iter().enumerate() {
        // The Piola pullback of f to the reference cell is h*f.
        let vals = ReferenceElement::apply_functionals(k, &qx, &qw, |x, y| {
            let v = f(cell.x0 + h * x, cell.y0 + h * y);
            [h * v[0], h * v[1]]
        });
        for (l, &g) in space.rt_dofs.cell_dofs(c).iter().enumerate() {
            // shared face moments are recomputed identically from both sides
            raw[g as usize] = vals[l];
        }
    }
    raw
}

/// Cellwise L2 projection of a scalar field onto the pressure space.
pub fn l2_project(space: &SpaceTriple, g: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let h = space.mesh.h;
    let quad = Quadrature::fine_for_degree(space.kq.max(4));
    let qtab = element::tabulate_q(space.kq, &quad.cell_points);
    let nq = q_dim(space.kq);
    let npts = quad.cell_points.len();
    let mut out = vec![0.0; space.n_p()];
    for (c, cell) in space.mesh.cells.iter().enumerate() {
        for (p, &(x, y)) in quad.cell_points.iter().enumerate() {
            let gv = g(cell.x0 + h * x, cell.y0 + h * y) * quad.cell_weights[p];
            for m in 0..nq {
                out[space.p_dof(c, m)] += gv * qtab[m * npts + p];
            }
        }
    }
    out
}

/// Evaluates an RT function (raw coefficients) at a physical point.
pub fn eval_rt(space: &SpaceTriple, raw: &[f64], x: f64, y: f64) -> [f64; 2] {
    let (c, xr, yr) = locate(&space.mesh, x, y);
    let tab = space.elem.tabulate_rt(&[(xr, yr)]);
    let mut out = [0.0; 2];
    for (l, &g) in space.rt_dofs.cell_dofs(c).iter().enumerate() {
        out[0] += raw[g as usize] * tab.val[l][0];
        out[1] += raw[g as usize] * tab.val[l][1];
    }
    let h = space.mesh.h;
    [out[0] / h, out[1] / h]
}

/// Evaluates the divergence of an RT function at a physical point.
pub fn eval_rt_div(space: &SpaceTriple, raw: &[f64], x: f64, y: f64) -> f64 {
    let (c, xr, yr) = locate(&space.mesh, x, y);
    let tab = space.elem.tabulate_rt(&[(xr, yr)]);
    let mut out = 0.0;
    for (l, &g) in space.rt_dofs.cell_dofs(c).iter().enumerate() {
        out += raw[g as usize] * tab.div[l];
    }
    out / (space.mesh.h * space.mesh.h)
}

/// Evaluates a pressure function at a physical point.
pub fn eval_q(space: &SpaceTriple, coeffs: &[f64], x: f64, y: f64) -> f64 {
    let (c, xr, yr) = locate(&space.mesh, x, y);
    let tab = element::tabulate_q(space.kq, &[(xr, yr)]);
    let mut out = 0.0;
    for m in 0..q_dim(space.kq) {
        out += coeffs[space.p_dof(c, m)] * tab[m];
    }
    out
}

fn locate(mesh: &Mesh, x: f64, y: f64) -> (usize, f64, f64) {
    let n = mesh.n_per_side;
    let ix = ((x * n as f64).floor() as usize).min(n - 1);
    let iy = ((y * n as f64).floor() as usize).min(n - 1);
    let c = mesh.cell_index(ix, iy);
    let cell = &mesh.cells[c];
    ((c), (x - cell.x0) / cell.h, (y - cell.y0) / cell.h)
}

/// Sparse embeddings of a coarse triplet into the once-refined fine triplet.
///
/// RT and Q spaces nest exactly under 2x2 refinement, so applying these
/// matrices to coarse coefficients reproduces the coarse function pointwise.
pub struct Prolongation {
    /// Fine-free x coarse-free embedding of one RT space.
    pub rt_free: SparseMatrix,
    /// Fine x coarse embedding of the pressure space.
    pub q: SparseMatrix,
}

impl Prolongation {
    /// Block-diagonal embedding for the monolithic `[u | v | p]` layout.
    pub fn mixed(&self, coarse: &SpaceTriple, fine: &SpaceTriple) -> SparseMatrix {
        let blocks = [
            (&self.rt_free, fine.u_offset(), coarse.u_offset()),
            (&self.rt_free, fine.v_offset(), coarse.v_offset()),
            (&self.q, fine.p_offset(), coarse.p_offset()),
        ];
        stack_blocks(fine.total_dofs(), coarse.total_dofs(), &blocks)
    }

    /// Block-diagonal embedding for the `[u | v]` layout of the SPD system.
    pub fn w_pair(&self, coarse: &SpaceTriple, fine: &SpaceTriple) -> SparseMatrix {
        let blocks = [
            (&self.rt_free, fine.u_offset(), coarse.u_offset()),
            (&self.rt_free, fine.v_offset(), coarse.v_offset()),
        ];
        stack_blocks(fine.w_dofs(), coarse.w_dofs(), &blocks)
    }
}

fn stack_blocks(
    nrows: usize,
    ncols: usize,
    blocks: &[(&SparseMatrix, usize, usize)],
) -> SparseMatrix {
    let mut triplets = Vec::new();
    for (b, ro, co) in blocks {
        for i in 0..b.nrows() {
            let (cols, vals) = b.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                triplets.push((ro + i, co + j as usize, v));
            }
        }
    }
    SparseMatrix::from_triplets(nrows, ncols, &triplets)
}

/// Builds the exact embedding of `coarse` into `fine`.
///
/// Requires `fine.mesh.parent` to be exactly `coarse.mesh` and equal
/// degrees.
pub fn prolongation(coarse: &SpaceTriple, fine: &SpaceTriple) -> Result<Prolongation> {
    let parent_ok = fine
        .mesh
        .parent
        .as_ref()
        .is_some_and(|p| Arc::ptr_eq(p, &coarse.mesh));
    if !parent_ok {
        return Err(Error::InvalidSpace(
            "prolongation requires fine.mesh.parent == coarse.mesh".into(),
        ));
    }
    if coarse.k != fine.k || coarse.kq != fine.kq {
        return Err(Error::InvalidSpace(
            "prolongation requires equal polynomial degrees".into(),
        ));
    }
    let k = fine.k;
    let ld = rt_dim(k);
    let per_face = k + 1;
    let (qx, qw) = gauss_legendre_unit(k + 2);
    let fpts = ReferenceElement::functional_points(&qx);
    let npts = fpts.len();

    let mesh = &fine.mesh;
    let coarse_elem = &coarse.elem;

    let mut rt_triplets: Vec<(usize, usize, f64)> = Vec::new();
    for (c, cell) in mesh.cells.iter().enumerate() {
        let pc = mesh.parent_cell_of(c).expect("fine mesh has a parent");
        let (ox, oy) = (cell.ix % 2, cell.iy % 2);
        // functional points mapped into the parent reference cell
        let parent_pts: Vec<(f64, f64)> = fpts
            .iter()
            .map(|&(x, y)| ((x + ox as f64) / 2.0, (y + oy as f64) / 2.0))
            .collect();
        let ctab = coarse_elem.tabulate_rt(&parent_pts);

        // which of this cell's edges it owns in the global face enumeration
        let owns = [cell.ix == 0, true, cell.iy == 0, true];
        let faces = mesh.cell_faces(c);

        for l in 0..ld {
            // Piola: fine pullback of the coarse shape is (h/H) = 1/2 of it
            let vals: Vec<[f64; 2]> = (0..npts)
                .map(|p| {
                    let v = ctab.val[l * npts + p];
                    [0.5 * v[0], 0.5 * v[1]]
                })
                .collect();
            let fvals = ReferenceElement::apply_functionals_at(k, &qx, &qw, &vals);
            let col = coarse.rt_dofs.cell_dofs(pc)[l] as usize;
            for e in 0..4 {
                if !owns[e] {
                    continue;
                }
                for m in 0..per_face {
                    let row = fine.rt_dofs.face_dof(faces[e], m);
                    rt_triplets.push((row, col, fvals[e * per_face + m]));
                }
            }
            for t in 0..rt_interior_dim(k) {
                let row = fine.rt_dofs.interior_dof(c, t);
                rt_triplets.push((row, col, fvals[4 * per_face + t]));
            }
        }
    }

    // restrict to free rows and columns
    let mut rt_free_triplets = Vec::with_capacity(rt_triplets.len());
    for (r, c, v) in rt_triplets {
        if v == 0.0 {
            continue;
        }
        match (fine.rt_dofs.free_of_raw(r), coarse.rt_dofs.free_of_raw(c)) {
            (Some(rf), Some(cf)) => rt_free_triplets.push((rf, cf, v)),
            (None, Some(_)) => debug_assert!(
                v.abs() < 1e-12,
                "free coarse DOF leaks onto a constrained fine face ({v})"
            ),
            _ => {}
        }
    }
    let rt_free = SparseMatrix::from_triplets(
        fine.rt_dofs.n_free,
        coarse.rt_dofs.n_free,
        &rt_free_triplets,
    );

    // pressure embedding: cellwise L2 moments of the coarse basis
    let kq = fine.kq;
    let nq = q_dim(kq);
    let quad = Quadrature::for_degree(kq);
    let nqp = quad.cell_points.len();
    let ftab = element::tabulate_q(kq, &quad.cell_points);
    let mut q_triplets = Vec::new();
    for (c, cell) in mesh.cells.iter().enumerate() {
        let pc = mesh.parent_cell_of(c).unwrap();
        let (ox, oy) = (cell.ix % 2, cell.iy % 2);
        let parent_pts: Vec<(f64, f64)> = quad
            .cell_points
            .iter()
            .map(|&(x, y)| ((x + ox as f64) / 2.0, (y + oy as f64) / 2.0))
            .collect();
        let ptab = element::tabulate_q(kq, &parent_pts);
        for i in 0..nq {
            for j in 0..nq {
                let mut acc = 0.0;
                for (p, &w) in quad.cell_weights.iter().enumerate() {
                    acc += w * ftab[i * nqp + p] * ptab[j * nqp + p];
                }
                if acc.abs() > 1e-14 {
                    q_triplets.push((fine.p_dof(c, i), coarse.p_dof(pc, j), acc));
                }
            }
        }
    }
    let q = SparseMatrix::from_triplets(fine.n_p(), coarse.n_p(), &q_triplets);

    Ok(Prolongation { rt_free, q })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_uniform_mesh, refine, Orientation};
    use rand::RngExt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dof_counts_n4_k0() {
        let mesh = build_uniform_mesh(4).unwrap();
        let s = build_spaces(&mesh, 0);
        // one moment per face: 24 interior + 16 boundary
        assert_eq!(s.rt_dofs.n_raw, 40);
        // essential normal condition removes the boundary moments
        assert_eq!(s.n_v(), 24);
        assert_eq!(s.n_p(), 16);
    }

    #[test]
    fn dof_counts_n2_k1() {
        let mesh = build_uniform_mesh(2).unwrap();
        let s = build_spaces(&mesh, 1);
        assert_eq!(s.n_p(), 16); // (k+1)^2 per cell
        // faces: 12 total, 4 interior; 2 moments per face; 4 interior moments per cell
        assert_eq!(s.rt_dofs.n_raw, 12 * 2 + 4 * 4);
        assert_eq!(s.n_u(), 4 * 2 + 4 * 4);
    }

    #[test]
    fn face_dofs_shared_between_neighbors() {
        let mesh = build_uniform_mesh(3).unwrap();
        let s = build_spaces(&mesh, 1);
        for f in &mesh.interior_faces {
            let plus = s.rt_dofs.cell_dofs(f.cell_plus);
            let minus = s.rt_dofs.cell_dofs(f.cell_minus);
            for m in 0..2 {
                let g = s.rt_dofs.face_dof(f.face_id, m) as u32;
                assert!(plus.contains(&g) && minus.contains(&g));
            }
        }
    }

    #[test]
    fn constant_field_reproduced_exactly() {
        for k in 0..=2 {
            let mesh = build_uniform_mesh(3).unwrap();
            let s = build_spaces(&mesh, k);
            let raw = interpolate_rt(&s, |_, _| [1.0, 0.0]);
            for &(x, y) in &[(0.17, 0.43), (0.5, 0.9), (0.99, 0.01)] {
                let v = eval_rt(&s, &raw, x, y);
                assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12, "k={k}");
            }
        }
    }

    #[test]
    fn stream_function_interpolant_has_zero_boundary_moments() {
        // u = curl phi with phi = x^2(x-1)^2 y^2(y-1)^2 vanishes on the boundary
        let psi = |t: f64| t * t * (t - 1.0) * (t - 1.0);
        let dpsi = |t: f64| 2.0 * t * (t - 1.0) * (2.0 * t - 1.0);
        let u = move |x: f64, y: f64| [psi(x) * dpsi(y), -dpsi(x) * psi(y)];
        let mesh = build_uniform_mesh(4).unwrap();
        let s = build_spaces(&mesh, 2);
        let raw = interpolate_rt(&s, u);
        for bf in &mesh.boundary_faces {
            for m in 0..3 {
                let g = s.rt_dofs.face_dof(bf.face_id, m);
                assert!(raw[g].abs() < 1e-14, "boundary moment {}", raw[g]);
            }
        }
    }

    #[test]
    fn linear_pressure_projection_exact_for_k1() {
        let mesh = build_uniform_mesh(3).unwrap();
        let s = build_spaces(&mesh, 1);
        let c = l2_project(&s, |x, _| x);
        for &(x, y) in &[(0.1, 0.2), (0.62, 0.38), (0.9, 0.77)] {
            assert!((eval_q(&s, &c, x, y) - x).abs() < 1e-13);
        }
    }

    #[test]
    fn projection_reproduces_constants_and_is_idempotent() {
        let mesh = build_uniform_mesh(2).unwrap();
        let s = build_spaces(&mesh, 0);
        let c = l2_project(&s, |_, _| 1.0);
        assert!((eval_q(&s, &c, 0.3, 0.8) - 1.0).abs() < 1e-14);

        // idempotence: project an already-projected (piecewise poly) field
        let c1 = l2_project(&s, |x, y| x * y);
        let s2 = build_spaces(&mesh, 0);
        let c2 = l2_project(&s2, |x, y| eval_q(&s, &c1, x, y));
        for (a, b) in c1.iter().zip(&c2) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn manufactured_pressure_projection_has_zero_mean() {
        // p = 900 phi - 1 integrates to zero over the unit square
        let psi = |t: f64| t * t * (t - 1.0) * (t - 1.0);
        let mesh = build_uniform_mesh(4).unwrap();
        let s = build_spaces(&mesh, 2);
        let c = l2_project(&s, |x, y| 900.0 * psi(x) * psi(y) - 1.0);
        // the constant mode of the orthonormal basis integrates to h^2
        let h2 = s.mesh.h * s.mesh.h;
        let mean: f64 = (0..s.mesh.n_cells()).map(|cl| c[s.p_dof(cl, 0)] * h2).sum();
        assert!(mean.abs() < 1e-13, "mean {mean}");
    }

    #[test]
    fn prolongation_is_pointwise_exact() {
        let coarse_mesh = build_uniform_mesh(2).unwrap();
        let fine_mesh = refine(&coarse_mesh);
        for k in 0..=2 {
            let cs = build_spaces(&coarse_mesh, k);
            let fs = build_spaces(&fine_mesh, k);
            let p = prolongation(&cs, &fs).unwrap();

            let mut rng = ChaCha8Rng::seed_from_u64(42 + k as u64);
            let cfree: Vec<f64> = (0..cs.n_u()).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut ffree = vec![0.0; fs.n_u()];
            p.rt_free.matvec(&cfree, &mut ffree);

            let craw = cs.rt_dofs.raw_from_free(&cfree);
            let fraw = fs.rt_dofs.raw_from_free(&ffree);
            let mut max_dev = 0.0f64;
            for &(x, y) in &[(0.3, 0.7), (0.12, 0.9), (0.55, 0.51), (0.77, 0.23)] {
                let vc = eval_rt(&cs, &craw, x, y);
                let vf = eval_rt(&fs, &fraw, x, y);
                max_dev = max_dev.max((vc[0] - vf[0]).abs() + (vc[1] - vf[1]).abs());
            }
            assert!(max_dev < 1e-12, "k={k} dev={max_dev}");

            let cp: Vec<f64> = (0..cs.n_p()).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut fp = vec![0.0; fs.n_p()];
            p.q.matvec(&cp, &mut fp);
            for &(x, y) in &[(0.3, 0.7), (0.9, 0.1)] {
                assert!((eval_q(&cs, &cp, x, y) - eval_q(&fs, &fp, x, y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prolongation_preserves_constant_pressure_and_rt0_field() {
        let coarse_mesh = build_uniform_mesh(2).unwrap();
        let fine_mesh = refine(&coarse_mesh);
        let cs = build_spaces(&coarse_mesh, 0);
        let fs = build_spaces(&fine_mesh, 0);
        let p = prolongation(&cs, &fs).unwrap();

        let ones = l2_project(&cs, |_, _| 1.0);
        let mut fine_p = vec![0.0; fs.n_p()];
        p.q.matvec(&ones, &mut fine_p);
        assert!((eval_q(&fs, &fine_p, 0.3, 0.7) - 1.0).abs() < 1e-13);

        // RT_0 field (x, 0): fine evaluation matches coarse evaluation
        let craw = interpolate_rt(&cs, |x, _| [x, 0.0]);
        let cfree = cs.rt_dofs.free_from_raw(&craw);
        let mut ffree = vec![0.0; fs.n_u()];
        p.rt_free.matvec(&cfree, &mut ffree);
        let fraw = fs.rt_dofs.raw_from_free(&ffree);
        let vc = eval_rt(&cs, &craw, 0.3, 0.7);
        let vf = eval_rt(&fs, &fraw, 0.3, 0.7);
        assert!((vc[0] - vf[0]).abs() < 1e-13 && (vc[1] - vf[1]).abs() < 1e-13);

        // zero maps to zero
        let zero = vec![0.0; cs.n_u()];
        let mut out = vec![0.0; fs.n_u()];
        p.rt_free.matvec(&zero, &mut out);
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn prolongation_rejects_mismatched_inputs() {
        let m2 = build_uniform_mesh(2).unwrap();
        let m4 = build_uniform_mesh(4).unwrap(); // not linked by refinement
        let cs = build_spaces(&m2, 1);
        let fs = build_spaces(&m4, 1);
        assert!(prolongation(&cs, &fs).is_err());

        let fine = refine(&m2);
        let fs = build_spaces(&fine, 2); // degree mismatch
        assert!(prolongation(&cs, &fs).is_err());
    }

    #[test]
    fn normal_trace_continuity_of_random_functions() {
        let mesh = build_uniform_mesh(3).unwrap();
        let s = build_spaces(&mesh, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let free: Vec<f64> = (0..s.n_u()).map(|_| rng.random::<f64>() - 0.5).collect();
        let raw = s.rt_dofs.raw_from_free(&free);
        let h = mesh.h;
        for f in &mesh.interior_faces {
            for &t in &[0.15, 0.5, 0.85] {
                let (x, y) = match f.orientation {
                    Orientation::Vertical => {
                        let cell = &mesh.cells[f.cell_minus];
                        (cell.x0, cell.y0 + t * h)
                    }
                    Orientation::Horizontal => {
                        let cell = &mesh.cells[f.cell_minus];
                        (cell.x0 + t * h, cell.y0)
                    }
                };
                // evaluate from both sides by nudging into each cell
                let eps = 1e-9;
                let (vp, vm) = match f.orientation {
                    Orientation::Vertical => (
                        eval_rt(&s, &raw, x - eps, y),
                        eval_rt(&s, &raw, x + eps, y),
                    ),
                    Orientation::Horizontal => (
                        eval_rt(&s, &raw, x, y - eps),
                        eval_rt(&s, &raw, x, y + eps),
                    ),
                };
                let jump = (vp[0] - vm[0]) * f.normal[0] + (vp[1] - vm[1]) * f.normal[1];
                assert!(jump.abs() < 1e-6, "normal jump {jump}");
            }
        }
    }
}
