//! Assembly of the bilinear forms and right-hand sides of the mixed system:
//! the interior-penalty strain form on the displacement space, divergence
//! couplings, the scaled velocity mass form, pressure mass, the monolithic
//! mixed operator, its symmetric positive definite reformulation, and the
//! discrete norms.
//!
//! All cells are translates of one square, so every cell and face
//! contribution is a fixed reference block times a power of `1/h`; assembly
//! reduces to scattering precomputed dense blocks. The traversal order
//! (cells, then interior faces, then boundary faces) is fixed, which makes
//! assembled matrices bit-reproducible and lets the preconditioner share
//! factorizations between translated vertex patches.

use std::collections::HashMap;
use std::sync::Mutex;
use std::sync::OnceLock;

use std::sync::Arc;

use faer::Mat;

use crate::linalg::{self_adjoint_eigenvalues, PatternBuilder, SparseMatrix};
use crate::mesh::Orientation;
use crate::spaces::element::{
    q_dim, rt_dim, tabulate_q, EDGE_BOTTOM, EDGE_LEFT, EDGE_RIGHT, EDGE_TOP,
};
use crate::spaces::quadrature::Quadrature;
use crate::spaces::SpaceTriple;
use crate::{Error, Result};

/// Dimensionless parameters of the rescaled single-step system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledParameters {
    /// Ratio of the Lame coefficients.
    pub lambda_hat: f64,
    /// Inverse scaled permeability (the permeability tensor is this scalar
    /// times the identity).
    pub kappa_hat_inv: f64,
    /// Scaled storage coefficient; zero is admissible and is the hardest
    /// case for the solver.
    pub cs_hat: f64,
    /// Interior-penalty parameter.
    pub eta: f64,
    /// Polynomial degree of the spaces this parameter set targets.
    pub degree: usize,
}

/// Default penalty: standard interior-penalty scaling in the degree, with a
/// safety factor; coercivity is verified once per (degree, eta) by a dense
/// eigensolve on a 2x2 mesh rather than trusted.
pub fn default_eta(degree: usize) -> f64 {
    4.0 * ((degree + 1) * (degree + 1)) as f64
}

impl ScaledParameters {
    pub fn new(lambda_hat: f64, kappa_hat_inv: f64, cs_hat: f64, degree: usize) -> Result<Self> {
        Self::with_eta(lambda_hat, kappa_hat_inv, cs_hat, degree, default_eta(degree))
    }

    pub fn with_eta(
        lambda_hat: f64,
        kappa_hat_inv: f64,
        cs_hat: f64,
        degree: usize,
        eta: f64,
    ) -> Result<Self> {
        if !(lambda_hat > 0.0) {
            return Err(Error::InvalidParameter("lambda_hat must be positive".into()));
        }
        if !(kappa_hat_inv > 0.0) {
            return Err(Error::InvalidParameter(
                "kappa_hat_inv must be positive".into(),
            ));
        }
        if !(cs_hat >= 0.0) {
            return Err(Error::InvalidParameter("cs_hat must be non-negative".into()));
        }
        if !(eta > 0.0) {
            return Err(Error::InvalidParameter("eta must be positive".into()));
        }
        Ok(ScaledParameters {
            lambda_hat,
            kappa_hat_inv,
            cs_hat,
            eta,
            degree,
        })
    }
}

/// Maps physical parameters to the dimensionless ones of the rescaled
/// system: `kappa_hat_inv = alpha^2 / (2 mu tau K)`, `lambda_hat =
/// lambda / (2 mu)`, `cs_hat = 2 mu c_s / alpha^2`.
///
/// The returned parameter set carries the default penalty for the given
/// degree.
pub fn rescale(
    mu: f64,
    lambda: f64,
    alpha: f64,
    k_scalar: f64,
    cs: f64,
    tau: f64,
    degree: usize,
) -> Result<ScaledParameters> {
    if !(mu > 0.0 && alpha > 0.0 && tau > 0.0 && k_scalar > 0.0) {
        return Err(Error::InvalidParameter(
            "mu, alpha, tau and K must be positive".into(),
        ));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter("lambda must be positive".into()));
    }
    if !(cs >= 0.0) {
        return Err(Error::InvalidParameter("cs must be non-negative".into()));
    }
    ScaledParameters::new(
        lambda / (2.0 * mu),
        alpha * alpha / (2.0 * mu * tau * k_scalar),
        2.0 * mu * cs / (alpha * alpha),
        degree,
    )
}

/// Reference blocks shared by all cells and faces of a uniform mesh.
struct RefBlocks {
    m: usize,
    nq: usize,
    /// Cell integrals of the reference shape functions.
    strain: Mat<f64>,
    grad: Mat<f64>,
    divdiv: Mat<f64>,
    mass: Mat<f64>,
    /// (q, div) coupling, q-major rows.
    bdiv: Mat<f64>,
    /// Interior-face blocks over slots [plus-cell dofs, minus-cell dofs].
    face_pen: [Mat<f64>; 2],
    face_cons: [Mat<f64>; 2],
    /// Boundary blocks per side (left, right, bottom, top).
    bdy_pen: [Mat<f64>; 4],
    bdy_cons: [Mat<f64>; 4],
}

impl RefBlocks {
    fn new(space: &SpaceTriple) -> Self {
        let elem = &space.elem;
        let m = rt_dim(space.k);
        let nq = q_dim(space.kq);
        let quad = &space.quad;
        let npts = quad.cell_points.len();
        let tab = elem.tabulate_rt(&quad.cell_points);
        let qtab = tabulate_q(space.kq, &quad.cell_points);

        let mut strain = Mat::zeros(m, m);
        let mut grad = Mat::zeros(m, m);
        let mut divdiv = Mat::zeros(m, m);
        let mut mass = Mat::zeros(m, m);
        let mut bdiv = Mat::zeros(nq, m);
        for p in 0..npts {
            let w = quad.cell_weights[p];
            for i in 0..m {
                let gi = tab.grad[i * npts + p];
                let ei = sym(gi);
                let vi = tab.val[i * npts + p];
                let di = tab.div[i * npts + p];
                for j in 0..m {
                    let gj = tab.grad[j * npts + p];
                    strain[(i, j)] += w * frob(ei, sym(gj));
                    grad[(i, j)] += w * frob(gi, gj);
                    divdiv[(i, j)] += w * di * tab.div[j * npts + p];
                    mass[(i, j)] += w
                        * (vi[0] * tab.val[j * npts + p][0] + vi[1] * tab.val[j * npts + p][1]);
                }
                for q in 0..nq {
                    bdiv[(q, i)] += w * qtab[q * npts + p] * di;
                }
            }
        }

        // edge tabulations at the shared 1D rule
        let ne = quad.edge_points.len();
        let edge_tabs: Vec<_> = (0..4)
            .map(|e| {
                let pts: Vec<(f64, f64)> = quad
                    .edge_points
                    .iter()
                    .map(|&t| crate::spaces::element::edge_point(e, t))
                    .collect();
                elem.tabulate_rt(&pts)
            })
            .collect();

        // Interior faces: slots 0..m from the plus cell, m..2m from the
        // minus cell. The canonical normal points from plus to minus, so the
        // face is the plus cell's right/top edge and the jump is
        // (plus trace) - (minus trace).
        let mut face_pen = [Mat::zeros(2 * m, 2 * m), Mat::zeros(2 * m, 2 * m)];
        let mut face_cons = [Mat::zeros(2 * m, 2 * m), Mat::zeros(2 * m, 2 * m)];
        for (o, (e_plus, e_minus, nrm)) in [
            (EDGE_RIGHT, EDGE_LEFT, [1.0, 0.0]),
            (EDGE_TOP, EDGE_BOTTOM, [0.0, 1.0]),
        ]
        .into_iter()
        .enumerate()
        {
            let (tp, tm) = (&edge_tabs[e_plus], &edge_tabs[e_minus]);
            let mut jump = vec![[0.0; 2]; 2 * m];
            let mut mean_n = vec![[0.0; 2]; 2 * m];
            for p in 0..ne {
                let w = quad.edge_weights[p];
                for i in 0..m {
                    jump[i] = tp.val[i * ne + p];
                    mean_n[i] = mat_vec(scale2(sym(tp.grad[i * ne + p]), 0.5), nrm);
                    let vm = tm.val[i * ne + p];
                    jump[m + i] = [-vm[0], -vm[1]];
                    mean_n[m + i] = mat_vec(scale2(sym(tm.grad[i * ne + p]), 0.5), nrm);
                }
                for i in 0..2 * m {
                    for j in 0..2 * m {
                        face_pen[o][(i, j)] += w * dot2(jump[i], jump[j]);
                        face_cons[o][(i, j)] +=
                            w * (dot2(mean_n[i], jump[j]) + dot2(jump[i], mean_n[j]));
                    }
                }
            }
        }

        // boundary sides in the cell-local edge order with outward normals
        let mk4 = || {
            [
                Mat::zeros(m, m),
                Mat::zeros(m, m),
                Mat::zeros(m, m),
                Mat::zeros(m, m),
            ]
        };
        let mut bdy_pen = mk4();
        let mut bdy_cons = mk4();
        for (s, nrm) in [
            (EDGE_LEFT, [-1.0, 0.0]),
            (EDGE_RIGHT, [1.0, 0.0]),
            (EDGE_BOTTOM, [0.0, -1.0]),
            (EDGE_TOP, [0.0, 1.0]),
        ] {
            let t = &edge_tabs[s];
            for p in 0..ne {
                let w = quad.edge_weights[p];
                for i in 0..m {
                    let vi = t.val[i * ne + p];
                    let eni = mat_vec(sym(t.grad[i * ne + p]), nrm);
                    for j in 0..m {
                        let vj = t.val[j * ne + p];
                        let enj = mat_vec(sym(t.grad[j * ne + p]), nrm);
                        bdy_pen[s][(i, j)] += w * dot2(vi, vj);
                        bdy_cons[s][(i, j)] += w * (dot2(eni, vj) + dot2(vi, enj));
                    }
                }
            }
        }

        RefBlocks {
            m,
            nq,
            strain,
            grad,
            divdiv,
            mass,
            bdiv,
            face_pen,
            face_cons,
            bdy_pen,
            bdy_cons,
        }
    }
}

#[inline]
fn sym(g: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let off = 0.5 * (g[0][1] + g[1][0]);
    [[g[0][0], off], [off, g[1][1]]]
}

#[inline]
fn scale2(g: [[f64; 2]; 2], s: f64) -> [[f64; 2]; 2] {
    [[s * g[0][0], s * g[0][1]], [s * g[1][0], s * g[1][1]]]
}

#[inline]
fn frob(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

#[inline]
fn mat_vec(a: [[f64; 2]; 2], x: [f64; 2]) -> [f64; 2] {
    [
        a[0][0] * x[0] + a[0][1] * x[1],
        a[1][0] * x[0] + a[1][1] * x[1],
    ]
}

#[inline]
fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// All parameter-independent assembled blocks of one space triplet.
///
/// The strain form is split into its penalty part (to be scaled by `eta`)
/// and the consistency-plus-cell part, so one assembly serves every
/// parameter point of a sweep.
pub struct BlockSet {
    /// eta-free penalty part of the interior-penalty form (free u x free u).
    pub e_pen: SparseMatrix,
    /// Cell strain plus consistency terms of the interior-penalty form.
    pub e_cons: SparseMatrix,
    /// (div w, div z) on the RT space.
    pub d: SparseMatrix,
    /// RT mass matrix (unit coefficient).
    pub m: SparseMatrix,
    /// (q, div w) coupling: pressure rows, RT columns.
    pub b: SparseMatrix,
    /// Transpose of `b`.
    pub bt: SparseMatrix,
    /// Diagonal of the pressure mass matrix (orthonormal basis: h^2).
    pub mp_diag: Vec<f64>,
    /// Gram matrix of the broken-H1 norm (full gradients, 1/h jumps);
    /// omitted by the plain assembly to keep large sweeps lean.
    pub n_dg: Option<SparseMatrix>,
    /// Mesh size of the geometric factors.
    pub h: f64,
    /// Mesh size of the 1/h penalty factors (the coarse form is assembled
    /// with its own mesh size, not inherited from the fine one).
    pub h_penalty: f64,
}

/// Assembles every parameter-independent block on the triplet's own mesh,
/// without the norm Gram matrix.
pub fn assemble_blocks(space: &SpaceTriple) -> BlockSet {
    assemble_blocks_inner(space, space.mesh.h, false)
}

/// Variant that also assembles the broken-H1 norm Gram matrix.
pub fn assemble_blocks_with_norms(space: &SpaceTriple) -> BlockSet {
    assemble_blocks_inner(space, space.mesh.h, true)
}

/// Variant with an explicit penalty mesh size for the `eta/h` factors.
pub fn assemble_blocks_with_penalty_h(space: &SpaceTriple, h_penalty: f64) -> BlockSet {
    assemble_blocks_inner(space, h_penalty, true)
}

fn assemble_blocks_inner(space: &SpaceTriple, h_penalty: f64, with_norms: bool) -> BlockSet {
    let mesh = &space.mesh;
    let dofs = &space.rt_dofs;
    let refb = RefBlocks::new(space);
    let m = refb.m;
    let h = mesh.h;
    let inv_h2 = 1.0 / (h * h);
    let pen_scale = 1.0 / (h_penalty * h);
    const NONE: u32 = crate::spaces::CONSTRAINED;

    let n_free = dofs.n_free;
    let free_cell: Vec<Vec<u32>> = (0..mesh.n_cells())
        .map(|c| {
            dofs.cell_dofs(c)
                .iter()
                .map(|&raw| dofs.free_of_raw(raw as usize).map_or(NONE, |f| f as u32))
                .collect()
        })
        .collect();

    // sparsity patterns
    let mut pat_e = PatternBuilder::new(n_free, n_free);
    let mut pat_cell = PatternBuilder::new(n_free, n_free);
    let mut pat_b = PatternBuilder::new(space.n_p(), n_free);
    for c in 0..mesh.n_cells() {
        let own: Vec<u32> = free_cell[c].iter().copied().filter(|&f| f != NONE).collect();
        let mut reach = own.clone();
        for nb in mesh.face_neighbors(c) {
            reach.extend(free_cell[nb].iter().copied().filter(|&f| f != NONE));
        }
        for &r in &own {
            pat_e.insert(r as usize, reach.iter().copied());
            pat_cell.insert(r as usize, own.iter().copied());
        }
        for q in 0..refb.nq {
            pat_b.insert(space.p_dof(c, q), own.iter().copied());
        }
    }
    let mut e_pen = pat_e.build();
    let mut e_cons = e_pen.clone();
    let mut n_dg = with_norms.then(|| e_pen.clone());
    let mut d = pat_cell.build();
    let mut mm = d.clone();
    let mut b = pat_b.build();

    // cell terms
    for c in 0..mesh.n_cells() {
        let loc = &free_cell[c];
        for i in 0..m {
            let ri = loc[i];
            if ri == NONE {
                continue;
            }
            for j in 0..m {
                let cj = loc[j];
                if cj == NONE {
                    continue;
                }
                e_cons.add(ri as usize, cj as usize, inv_h2 * refb.strain[(i, j)]);
                if let Some(n_dg) = n_dg.as_mut() {
                    n_dg.add(ri as usize, cj as usize, inv_h2 * refb.grad[(i, j)]);
                }
                d.add(ri as usize, cj as usize, inv_h2 * refb.divdiv[(i, j)]);
                mm.add(ri as usize, cj as usize, refb.mass[(i, j)]);
            }
            for q in 0..refb.nq {
                b.add(space.p_dof(c, q), ri as usize, refb.bdiv[(q, i)]);
            }
        }
    }

    // interior faces
    for f in &mesh.interior_faces {
        let o = match f.orientation {
            Orientation::Vertical => 0,
            Orientation::Horizontal => 1,
        };
        let pen = &refb.face_pen[o];
        let cons = &refb.face_cons[o];
        let lp = &free_cell[f.cell_plus];
        let lm = &free_cell[f.cell_minus];
        for i in 0..2 * m {
            let ri = if i < m { lp[i] } else { lm[i - m] };
            if ri == NONE {
                continue;
            }
            for j in 0..2 * m {
                let cj = if j < m { lp[j] } else { lm[j - m] };
                if cj == NONE {
                    continue;
                }
                let pv = pen[(i, j)];
                if pv != 0.0 {
                    e_pen.add(ri as usize, cj as usize, pen_scale * pv);
                    if let Some(n_dg) = n_dg.as_mut() {
                        n_dg.add(ri as usize, cj as usize, inv_h2 * pv);
                    }
                }
                let cv = cons[(i, j)];
                if cv != 0.0 {
                    e_cons.add(ri as usize, cj as usize, -inv_h2 * cv);
                }
            }
        }
    }

    // boundary faces (weak tangential displacement condition)
    for bf in &mesh.boundary_faces {
        let side = boundary_side(bf.orientation, bf.outward_normal);
        let pen = &refb.bdy_pen[side];
        let cons = &refb.bdy_cons[side];
        let loc = &free_cell[bf.cell];
        for i in 0..m {
            let ri = loc[i];
            if ri == NONE {
                continue;
            }
            for j in 0..m {
                let cj = loc[j];
                if cj == NONE {
                    continue;
                }
                let pv = pen[(i, j)];
                if pv != 0.0 {
                    e_pen.add(ri as usize, cj as usize, pen_scale * pv);
                    if let Some(n_dg) = n_dg.as_mut() {
                        n_dg.add(ri as usize, cj as usize, inv_h2 * pv);
                    }
                }
                let cv = cons[(i, j)];
                if cv != 0.0 {
                    e_cons.add(ri as usize, cj as usize, -inv_h2 * cv);
                }
            }
        }
    }

    let bt = b.transpose();
    let mp_diag = vec![h * h; space.n_p()];
    BlockSet {
        e_pen,
        e_cons,
        d,
        m: mm,
        b,
        bt,
        mp_diag,
        n_dg,
        h,
        h_penalty,
    }
}

fn boundary_side(orientation: Orientation, outward: [f64; 2]) -> usize {
    match (orientation, outward) {
        (Orientation::Vertical, [x, _]) if x < 0.0 => EDGE_LEFT,
        (Orientation::Vertical, _) => EDGE_RIGHT,
        (Orientation::Horizontal, [_, y]) if y < 0.0 => EDGE_BOTTOM,
        (Orientation::Horizontal, _) => EDGE_TOP,
    }
}

/// The interior-penalty strain form for a given penalty.
pub fn assemble_eeh(blocks: &BlockSet, params: &ScaledParameters) -> SparseMatrix {
    combine(&[(&blocks.e_cons, 1.0), (&blocks.e_pen, params.eta)])
}

/// The scaled velocity mass form.
pub fn assemble_kform(blocks: &BlockSet, params: &ScaledParameters) -> SparseMatrix {
    combine(&[(&blocks.m, params.kappa_hat_inv)])
}

/// The divergence coupling `(q, div w)`.
pub fn assemble_div_coupling(blocks: &BlockSet) -> &SparseMatrix {
    &blocks.b
}

/// Sums sparse matrices of identical shape (patterns may differ).
fn combine(terms: &[(&SparseMatrix, f64)]) -> SparseMatrix {
    let (first, _) = terms[0];
    let (nr, nc) = (first.nrows(), first.ncols());
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for (mat, s) in terms {
        debug_assert_eq!((mat.nrows(), mat.ncols()), (nr, nc));
        if *s == 0.0 {
            continue;
        }
        push_block(&mut triplets, mat, *s, 0, 0);
    }
    SparseMatrix::from_triplets(nr, nc, &triplets)
}

/// The assembled monolithic mixed operator on `[u | v | p]`.
pub struct BlockOperator {
    pub matrix: Arc<SparseMatrix>,
    pub params: ScaledParameters,
    pub n_u: usize,
    pub n_v: usize,
    pub n_p: usize,
}

impl BlockOperator {
    pub fn p_offset(&self) -> usize {
        self.n_u + self.n_v
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.matvec(x, y);
    }
}

/// Assembles the monolithic symmetric indefinite operator: strain and
/// div-div blocks on u, the scaled mass on v, minus the divergence
/// couplings against p, and minus the scaled pressure mass.
pub fn assemble_mixed(
    space: &SpaceTriple,
    blocks: &BlockSet,
    params: &ScaledParameters,
) -> Result<BlockOperator> {
    verify_coercivity(space.k, params.eta)?;
    let (nu, nv, np) = (space.n_u(), space.n_v(), space.n_p());
    let n = nu + nv + np;
    let (vo, po) = (nu, nu + nv);
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    push_block(&mut triplets, &blocks.e_cons, 1.0, 0, 0);
    push_block(&mut triplets, &blocks.e_pen, params.eta, 0, 0);
    push_block(&mut triplets, &blocks.d, params.lambda_hat, 0, 0);
    push_block(&mut triplets, &blocks.bt, -1.0, 0, po);
    push_block(&mut triplets, &blocks.m, params.kappa_hat_inv, vo, vo);
    push_block(&mut triplets, &blocks.bt, -1.0, vo, po);
    push_block(&mut triplets, &blocks.b, -1.0, po, 0);
    push_block(&mut triplets, &blocks.b, -1.0, po, vo);
    if params.cs_hat != 0.0 {
        for (i, &w) in blocks.mp_diag.iter().enumerate() {
            triplets.push((po + i, po + i, -params.cs_hat * w));
        }
    }
    let matrix = Arc::new(SparseMatrix::from_triplets(n, n, &triplets));
    Ok(BlockOperator {
        matrix,
        params: *params,
        n_u: nu,
        n_v: nv,
        n_p: np,
    })
}

fn push_block(
    triplets: &mut Vec<(usize, usize, f64)>,
    m: &SparseMatrix,
    s: f64,
    ro: usize,
    co: usize,
) {
    if s == 0.0 {
        return;
    }
    for i in 0..m.nrows() {
        let (cols, vals) = m.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if v != 0.0 {
                triplets.push((ro + i, co + j as usize, s * v));
            }
        }
    }
}

/// Right-hand side of the mixed system together with the projected load
/// `g_h` (needed by the pointwise mass-balance audit).
pub struct MixedRhs {
    pub vec: Vec<f64>,
    pub g_h: Vec<f64>,
}

/// Assembles `F(phi, psi, q) = (f, phi) + (g_h, q)` with `g_h` the cellwise
/// L2 projection of `g`.
pub fn assemble_rhs(
    space: &SpaceTriple,
    f: impl Fn(f64, f64) -> [f64; 2],
    g: impl Fn(f64, f64) -> f64,
) -> MixedRhs {
    let mut vec = vec![0.0; space.total_dofs()];
    rhs_f_block(space, &f, &mut vec[..]);
    let g_h = crate::spaces::l2_project(space, g);
    let po = space.p_offset();
    let h2 = space.mesh.h * space.mesh.h;
    for (i, &c) in g_h.iter().enumerate() {
        vec[po + i] = h2 * c;
    }
    MixedRhs { vec, g_h }
}

fn rhs_f_block(space: &SpaceTriple, f: &impl Fn(f64, f64) -> [f64; 2], out: &mut [f64]) {
    let quad = Quadrature::fine_for_degree(space.k);
    let tab = space.elem.tabulate_rt(&quad.cell_points);
    let npts = quad.cell_points.len();
    let m = rt_dim(space.k);
    let h = space.mesh.h;
    for (c, cell) in space.mesh.cells.iter().enumerate() {
        let dofs = space.rt_dofs.cell_dofs(c);
        for (p, &(x, y)) in quad.cell_points.iter().enumerate() {
            let fv = f(cell.x0 + h * x, cell.y0 + h * y);
            let w = quad.cell_weights[p] * h;
            for l in 0..m {
                if let Some(free) = space.rt_dofs.free_of_raw(dofs[l] as usize) {
                    let v = tab.val[l * npts + p];
                    out[free] += w * (fv[0] * v[0] + fv[1] * v[1]);
                }
            }
        }
    }
}

/// The singularly perturbed SPD operator on `[u | v]` obtained by
/// eliminating the pressure through the pointwise mass balance.
pub struct SpdOperator {
    pub matrix: Arc<SparseMatrix>,
    pub params: ScaledParameters,
    pub n_u: usize,
    pub n_v: usize,
}

impl SpdOperator {
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.matvec(x, y);
    }
}

/// Assembles `E_h + D` on the displacement-velocity pair; requires a
/// strictly positive storage coefficient (the substitution divides by it).
pub fn assemble_spd(
    space: &SpaceTriple,
    blocks: &BlockSet,
    params: &ScaledParameters,
) -> Result<SpdOperator> {
    if params.cs_hat <= 0.0 {
        return Err(Error::InvalidParameter(
            "the SPD reformulation requires cs_hat > 0".into(),
        ));
    }
    verify_coercivity(space.k, params.eta)?;
    let (nu, nv) = (space.n_u(), space.n_v());
    let csi = 1.0 / params.cs_hat;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    push_block(&mut triplets, &blocks.e_cons, 1.0, 0, 0);
    push_block(&mut triplets, &blocks.e_pen, params.eta, 0, 0);
    push_block(&mut triplets, &blocks.d, params.lambda_hat + csi, 0, 0);
    push_block(&mut triplets, &blocks.d, csi, 0, nu);
    push_block(&mut triplets, &blocks.d, csi, nu, 0);
    push_block(&mut triplets, &blocks.m, params.kappa_hat_inv, nu, nu);
    push_block(&mut triplets, &blocks.d, csi, nu, nu);
    let matrix = Arc::new(SparseMatrix::from_triplets(nu + nv, nu + nv, &triplets));
    Ok(SpdOperator {
        matrix,
        params: *params,
        n_u: nu,
        n_v: nv,
    })
}

/// Right-hand side of the SPD system: `(f, phi) - cs^{-1}(g_h, div(phi+psi))`,
/// returned together with `g_h` for pressure recovery.
pub fn assemble_spd_rhs(
    space: &SpaceTriple,
    blocks: &BlockSet,
    params: &ScaledParameters,
    f: impl Fn(f64, f64) -> [f64; 2],
    g: impl Fn(f64, f64) -> f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if params.cs_hat <= 0.0 {
        return Err(Error::InvalidParameter(
            "the SPD reformulation requires cs_hat > 0".into(),
        ));
    }
    let nu = space.n_u();
    let mut vec = vec![0.0; space.w_dofs()];
    rhs_f_block(space, &f, &mut vec[..nu]);
    let g_h = crate::spaces::l2_project(space, g);
    let mut gdiv = vec![0.0; nu];
    blocks.bt.matvec(&g_h, &mut gdiv);
    let csi = 1.0 / params.cs_hat;
    for i in 0..nu {
        vec[i] -= csi * gdiv[i];
        vec[nu + i] -= csi * gdiv[i];
    }
    Ok((vec, g_h))
}

/// Recovers the pressure from an SPD solution via the pointwise balance
/// `p = -cs^{-1}(div u + div v + g_h)`; exact because both divergences lie
/// in the pressure space.
pub fn recover_pressure(
    space: &SpaceTriple,
    blocks: &BlockSet,
    params: &ScaledParameters,
    w: &[f64],
    g_h: &[f64],
) -> Vec<f64> {
    let nu = space.n_u();
    let np = space.n_p();
    let mut div_u = vec![0.0; np];
    blocks.b.matvec(&w[..nu], &mut div_u);
    let mut div_v = vec![0.0; np];
    blocks.b.matvec(&w[nu..], &mut div_v);
    let csi = 1.0 / params.cs_hat;
    (0..np)
        .map(|i| -csi * ((div_u[i] + div_v[i]) / blocks.mp_diag[i] + g_h[i]))
        .collect()
}

/// Broken-H1 norm of a displacement vector (free DOFs): cell gradients,
/// eta-free `1/h` jump terms and `1/h` boundary terms.
pub fn dg_norm_1(blocks: &BlockSet, u: &[f64]) -> f64 {
    let gram = blocks
        .n_dg
        .as_ref()
        .expect("norm Gram requested; assemble with assemble_blocks_with_norms");
    let mut y = vec![0.0; u.len()];
    gram.matvec(u, &mut y);
    crate::linalg::dot(u, &y).max(0.0).sqrt()
}

/// The same norm evaluated directly from raw coefficients by quadrature;
/// usable for unconstrained functions and as an independent check of the
/// Gram-matrix route.
pub fn dg_norm_1_raw(space: &SpaceTriple, raw: &[f64]) -> f64 {
    let mesh = &space.mesh;
    let quad = &space.quad;
    let m = rt_dim(space.k);
    let h = mesh.h;
    let tab = space.elem.tabulate_rt(&quad.cell_points);
    let npts = quad.cell_points.len();
    let mut total = 0.0;
    for c in 0..mesh.n_cells() {
        let dofs = space.rt_dofs.cell_dofs(c);
        for p in 0..npts {
            let mut g = [[0.0; 2]; 2];
            for l in 0..m {
                let cv = raw[dofs[l] as usize];
                let gl = tab.grad[l * npts + p];
                for r in 0..2 {
                    for s in 0..2 {
                        g[r][s] += cv * gl[r][s];
                    }
                }
            }
            // physical gradient carries 1/h^2; the cell measure carries h^2
            total += quad.cell_weights[p] * frob(g, g) / (h * h);
        }
    }
    let ne = quad.edge_points.len();
    let edge_tabs: Vec<_> = (0..4)
        .map(|e| {
            let pts: Vec<(f64, f64)> = quad
                .edge_points
                .iter()
                .map(|&t| crate::spaces::element::edge_point(e, t))
                .collect();
            space.elem.tabulate_rt(&pts)
        })
        .collect();
    for f in &mesh.interior_faces {
        let (ep, em) = match f.orientation {
            Orientation::Vertical => (EDGE_RIGHT, EDGE_LEFT),
            Orientation::Horizontal => (EDGE_TOP, EDGE_BOTTOM),
        };
        let dp = space.rt_dofs.cell_dofs(f.cell_plus);
        let dm = space.rt_dofs.cell_dofs(f.cell_minus);
        for p in 0..ne {
            let mut jump = [0.0; 2];
            for l in 0..m {
                let vp = edge_tabs[ep].val[l * ne + p];
                let vm = edge_tabs[em].val[l * ne + p];
                jump[0] += raw[dp[l] as usize] * vp[0] - raw[dm[l] as usize] * vm[0];
                jump[1] += raw[dp[l] as usize] * vp[1] - raw[dm[l] as usize] * vm[1];
            }
            // traces carry 1/h, dt carries h, the norm weight another 1/h
            total += quad.edge_weights[p] * dot2(jump, jump) / (h * h);
        }
    }
    for bf in &mesh.boundary_faces {
        let side = boundary_side(bf.orientation, bf.outward_normal);
        let dofs = space.rt_dofs.cell_dofs(bf.cell);
        for p in 0..ne {
            let mut v = [0.0; 2];
            for l in 0..m {
                let t = edge_tabs[side].val[l * ne + p];
                v[0] += raw[dofs[l] as usize] * t[0];
                v[1] += raw[dofs[l] as usize] * t[1];
            }
            total += quad.edge_weights[p] * dot2(v, v) / (h * h);
        }
    }
    total.max(0.0).sqrt()
}

/// The weighted norm in which the SPD form is coercive:
/// `(|u|_{1,h}^2 + lambda_hat |div u|^2 + kappa_hat_inv |v|^2
///   + cs_hat^{-1} |div(u+v)|^2)^{1/2}`.
pub fn w_norm(
    space: &SpaceTriple,
    blocks: &BlockSet,
    params: &ScaledParameters,
    w: &[f64],
) -> Result<f64> {
    if params.cs_hat <= 0.0 {
        return Err(Error::InvalidParameter(
            "the weighted norm requires cs_hat > 0".into(),
        ));
    }
    let nu = space.n_u();
    let (u, v) = w.split_at(nu);
    let quad_form = |mat: &SparseMatrix, x: &[f64]| -> f64 {
        let mut y = vec![0.0; x.len()];
        mat.matvec(x, y.as_mut_slice());
        crate::linalg::dot(x, &y)
    };
    let gram = blocks
        .n_dg
        .as_ref()
        .expect("norm Gram requested; assemble with assemble_blocks_with_norms");
    let mut sum = quad_form(gram, u);
    sum += params.lambda_hat * quad_form(&blocks.d, u);
    sum += params.kappa_hat_inv * quad_form(&blocks.m, v);
    let uv: Vec<f64> = u.iter().zip(v).map(|(a, b)| a + b).collect();
    sum += quad_form(&blocks.d, &uv) / params.cs_hat;
    Ok(sum.max(0.0).sqrt())
}

/// The mean-zero pressure projector of a triplet: cell-measure weights on
/// the constant modes of the orthonormal pressure basis.
pub fn mean_zero_projector(
    space: &SpaceTriple,
    blocks: &BlockSet,
) -> crate::linalg::MeanZeroProjector {
    let nq = space.q_dim_per_cell();
    let constant: Vec<f64> = (0..space.n_p())
        .map(|i| if i % nq == 0 { 1.0 } else { 0.0 })
        .collect();
    let weights: Vec<f64> = blocks
        .mp_diag
        .iter()
        .zip(&constant)
        .map(|(w, c)| w * c)
        .collect();
    crate::linalg::MeanZeroProjector::new(space.p_offset(), weights, constant)
}

/// Verifies once per (degree, eta) that the interior-penalty form is
/// coercive, by a dense eigensolve on a 2x2 mesh.
pub fn verify_coercivity(degree: usize, eta: f64) -> Result<()> {
    static CHECKED: OnceLock<Mutex<HashMap<(usize, u64), bool>>> = OnceLock::new();
    let map = CHECKED.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (degree, eta.to_bits());
    let cached = map.lock().unwrap().get(&key).copied();
    let ok = match cached {
        Some(ok) => ok,
        None => {
            let mesh = crate::mesh::build_uniform_mesh(2).expect("n=2 is valid");
            let space = crate::spaces::build_spaces(&mesh, degree);
            let blocks = assemble_blocks(&space);
            let e = combine(&[(&blocks.e_cons, 1.0), (&blocks.e_pen, eta)]);
            let ev = self_adjoint_eigenvalues(&e.to_dense())?;
            let ok = ev.first().copied().unwrap_or(0.0) > 0.0;
            map.lock().unwrap().insert(key, ok);
            ok
        }
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "eta = {eta} is below the coercivity threshold for degree {degree}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_uniform_mesh;
    use crate::spaces::{build_spaces, interpolate_rt};
    use rand::RngExt;
    #[allow(unused_imports)]
    use super::assemble_blocks_with_norms;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn psi(t: f64) -> f64 {
        t * t * (t - 1.0) * (t - 1.0)
    }

    fn dpsi(t: f64) -> f64 {
        2.0 * t * (t - 1.0) * (2.0 * t - 1.0)
    }

    fn curl_phi(x: f64, y: f64) -> [f64; 2] {
        [psi(x) * dpsi(y), -dpsi(x) * psi(y)]
    }

    #[test]
    fn rescale_examples() {
        let p = rescale(0.5, 3.0, 1.0, 1.0, 0.0, 1.0, 0).unwrap();
        assert_eq!(p.lambda_hat, 3.0);
        assert_eq!(p.kappa_hat_inv, 1.0);
        assert_eq!(p.cs_hat, 0.0);

        let p = rescale(0.5, 1.0, 1.0, 1.0, 2.0, 1.0, 0).unwrap();
        assert_eq!(p.cs_hat, 2.0);

        let p = rescale(0.5, 1.0, 2.0, 1.0, 0.0, 1.0, 0).unwrap();
        assert_eq!(p.kappa_hat_inv, 4.0);

        assert!(rescale(-1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0).is_err());
        assert!(rescale(1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn mixed_operator_is_symmetric() {
        let mesh = build_uniform_mesh(3).unwrap();
        let space = build_spaces(&mesh, 1);
        let blocks = assemble_blocks(&space);
        let params = ScaledParameters::new(2.0, 3.0, 0.5, 1).unwrap();
        let op = assemble_mixed(&space, &blocks, &params).unwrap();
        assert!(op.matrix.asymmetry() <= 1e-12);

        let e = assemble_eeh(&blocks, &params);
        assert!(e.asymmetry() <= 1e-12);
    }

    #[test]
    fn eeh_is_positive_definite_with_default_eta() {
        // coercivity observed through the smallest eigenvalue on n=4, k=2
        let mesh = build_uniform_mesh(4).unwrap();
        let space = build_spaces(&mesh, 2);
        let blocks = assemble_blocks(&space);
        let params = ScaledParameters::new(1.0, 1.0, 0.0, 2).unwrap();
        let e = assemble_eeh(&blocks, &params);
        let ev = self_adjoint_eigenvalues(&e.to_dense()).unwrap();
        assert!(ev[0] > 0.0, "smallest eigenvalue {}", ev[0]);
    }

    #[test]
    fn startup_coercivity_check_rejects_tiny_eta() {
        assert!(verify_coercivity(1, default_eta(1)).is_ok());
        assert!(verify_coercivity(1, 1e-3).is_err());
    }

    #[test]
    fn eeh_energy_of_stream_function_field_positive() {
        let mesh = build_uniform_mesh(8).unwrap();
        let space = build_spaces(&mesh, 2);
        let blocks = assemble_blocks_with_norms(&space);
        let params = ScaledParameters::new(1.0, 1.0, 0.0, 2).unwrap();
        let e = assemble_eeh(&blocks, &params);
        let raw = interpolate_rt(&space, curl_phi);
        let u = space.rt_dofs.free_from_raw(&raw);
        let mut y = vec![0.0; u.len()];
        e.matvec(&u, &mut y);
        let energy = crate::linalg::dot(&u, &y);
        assert!(energy > 0.0);
        // continuity constants: energy comparable to the squared DG norm
        let nrm = dg_norm_1(&blocks, &u);
        assert!(energy > 1e-2 * nrm * nrm && energy < 1e3 * nrm * nrm);
    }

    #[test]
    fn kform_is_scaled_rt_mass() {
        let mesh = build_uniform_mesh(2).unwrap();
        let space = build_spaces(&mesh, 1);
        let blocks = assemble_blocks(&space);
        let p1 = ScaledParameters::new(1.0, 1.0, 0.0, 1).unwrap();
        let p2 = ScaledParameters::new(1.0, 2.0, 0.0, 1).unwrap();
        let k1 = assemble_kform(&blocks, &p1);
        let k2 = assemble_kform(&blocks, &p2);
        for i in 0..k1.nrows() {
            let (cols, vals) = k1.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                assert!((blocks.m.get(i, j as usize) - v).abs() < 1e-15);
                assert!((k2.get(i, j as usize) - 2.0 * v).abs() < 1e-15);
            }
        }
        // positive definiteness of the mass form
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..space.n_v()).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut y = vec![0.0; v.len()];
        k1.matvec(&v, &mut y);
        assert!(crate::linalg::dot(&v, &y) > 0.0);
    }

    #[test]
    fn div_coupling_annihilates_divergence_free_fields() {
        let mesh = build_uniform_mesh(4).unwrap();
        let space = build_spaces(&mesh, 2);
        let blocks = assemble_blocks(&space);
        let raw = interpolate_rt(&space, curl_phi);
        let u = space.rt_dofs.free_from_raw(&raw);
        let mut bp = vec![0.0; space.n_p()];
        blocks.b.matvec(&u, &mut bp);
        let max = bp.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(max < 1e-13, "B * curl = {max}");
    }

    #[test]
    fn constant_pressure_row_annihilates_constrained_fields() {
        // with w.n = 0 on the boundary, (1, div w) = 0 for every member
        let mesh = build_uniform_mesh(3).unwrap();
        let space = build_spaces(&mesh, 1);
        let blocks = assemble_blocks(&space);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Vec<f64> = (0..space.n_v()).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut bp = vec![0.0; space.n_p()];
        blocks.b.matvec(&v, &mut bp);
        // constant pressure = 1 on every cell's constant mode
        let total: f64 = (0..mesh.n_cells()).map(|c| bp[space.p_dof(c, 0)]).sum();
        assert!(total.abs() < 1e-13);
    }

    #[test]
    fn lowest_order_face_function_has_two_opposite_pressure_entries() {
        let mesh = build_uniform_mesh(2).unwrap();
        let space = build_spaces(&mesh, 0);
        let blocks = assemble_blocks(&space);
        let f = &mesh.interior_faces[0];
        let raw_dof = space.rt_dofs.face_dof(f.face_id, 0);
        let free = space.rt_dofs.free_of_raw(raw_dof).unwrap();
        let mut e = vec![0.0; space.n_u()];
        e[free] = 1.0;
        let mut bp = vec![0.0; space.n_p()];
        blocks.b.matvec(&e, &mut bp);
        let nonzero: Vec<(usize, f64)> = bp
            .iter()
            .enumerate()
            .filter(|(_, &v)| v.abs() > 1e-14)
            .map(|(i, &v)| (i, v))
            .collect();
        assert_eq!(nonzero.len(), 2);
        assert!((nonzero[0].1 + nonzero[1].1).abs() < 1e-14, "opposite signs");
    }

    #[test]
    fn cs_zero_leaves_pressure_block_empty() {
        let mesh = build_uniform_mesh(2).unwrap();
        let space = build_spaces(&mesh, 0);
        let blocks = assemble_blocks(&space);
        let params = ScaledParameters::new(1.0, 1.0, 0.0, 0).unwrap();
        let op = assemble_mixed(&space, &blocks, &params).unwrap();
        let po = op.p_offset();
        for i in 0..space.n_p() {
            assert_eq!(op.matrix.get(po + i, po + i), 0.0);
        }
    }

    #[test]
    fn lambda_scaling_difference_is_exactly_the_div_block() {
        let mesh = build_uniform_mesh(3).unwrap();
        let space = build_spaces(&mesh, 1);
        let blocks = assemble_blocks(&space);
        let p1 = ScaledParameters::new(1.0, 1.0, 0.0, 1).unwrap();
        let p2 = ScaledParameters::new(2.0, 1.0, 0.0, 1).unwrap();
        let a1 = assemble_mixed(&space, &blocks, &p1).unwrap();
        let a2 = assemble_mixed(&space, &blocks, &p2).unwrap();
        for i in 0..space.n_u() {
            let (cols, vals) = a2.matrix.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if (j as usize) < space.n_u() {
                    let diff = v - a1.matrix.get(i, j as usize);
                    let dval = blocks.d.get(i, j as usize);
                    assert!(
                        (diff - dval).abs() <= 1e-12 * (1.0 + dval.abs()),
                        "entry ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn rhs_zero_data_gives_zero_vector() {
        let mesh = build_uniform_mesh(2).unwrap();
        let space = build_spaces(&mesh, 1);
        let rhs = assemble_rhs(&space, |_, _| [0.0, 0.0], |_, _| 0.0);
        assert!(rhs.vec.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rhs_constant_g_is_killed_by_mean_zero_projection() {
        let mesh = build_uniform_mesh(3).unwrap();
        let space = build_spaces(&mesh, 0);
        let rhs = assemble_rhs(&space, |_, _| [0.0, 0.0], |_, _| 4.0);
        let blocks = assemble_blocks(&space);
        let constant: Vec<f64> = (0..space.n_p())
            .map(|i| if i % q_dim(0) == 0 { 1.0 } else { 0.0 })
            .collect();
        let proj = crate::linalg::MeanZeroProjector::new(
            space.p_offset(),
            blocks.mp_diag.clone(),
            constant,
        );
        let mut v = rhs.vec.clone();
        proj.project(&mut v);
        let po = space.p_offset();
        assert!(v[po..].iter().all(|&x| x.abs() < 1e-13));
    }

    #[test]
    fn spd_operator_is_symmetric_positive_definite() {
        let mesh = build_uniform_mesh(2).unwrap();
        let space = build_spaces(&mesh, 0);
        let blocks = assemble_blocks(&space);
        let params = ScaledParameters::new(1.0, 1.0, 1.0, 0).unwrap();
        let op = assemble_spd(&space, &blocks, &params).unwrap();
        assert!(op.matrix.asymmetry() <= 1e-12);
        let ev = self_adjoint_eigenvalues(&op.matrix.to_dense()).unwrap();
        assert!(ev[0] > 0.0, "smallest eigenvalue {}", ev[0]);

        let zero_cs = ScaledParameters::new(1.0, 1.0, 0.0, 0).unwrap();
        assert!(assemble_spd(&space, &blocks, &zero_cs).is_err());
    }

    #[test]
    fn d_form_vanishes_on_stream_function_pairs() {
        let mesh = build_uniform_mesh(4).unwrap();
        let space = build_spaces(&mesh, 1);
        let blocks = assemble_blocks(&space);
        let raw_u = interpolate_rt(&space, curl_phi);
        let raw_v = interpolate_rt(&space, |x, y| {
            let s = |t: f64| (t * (1.0 - t)).powi(3);
            let ds = |t: f64| 3.0 * (t * (1.0 - t)).powi(2) * (1.0 - 2.0 * t);
            [s(x) * ds(y), -ds(x) * s(y)]
        });
        let u = space.rt_dofs.free_from_raw(&raw_u);
        let v = space.rt_dofs.free_from_raw(&raw_v);
        let mut y = vec![0.0; u.len()];
        blocks.d.matvec(&u, &mut y);
        assert!(crate::linalg::dot(&v, &y).abs() < 1e-13);
        assert!(crate::linalg::dot(&u, &y).abs() < 1e-13);
    }

    #[test]
    fn dg_norm_of_zero_is_zero_and_matches_direct_quadrature() {
        let mesh = build_uniform_mesh(3).unwrap();
        let space = build_spaces(&mesh, 1);
        let blocks = assemble_blocks_with_norms(&space);
        assert_eq!(dg_norm_1(&blocks, &vec![0.0; space.n_u()]), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u: Vec<f64> = (0..space.n_u()).map(|_| rng.random::<f64>() - 0.5).collect();
        let raw = space.rt_dofs.raw_from_free(&u);
        let a = dg_norm_1(&blocks, &u);
        let b = dg_norm_1_raw(&space, &raw);
        assert!((a - b).abs() <= 1e-11 * (1.0 + a), "{a} vs {b}");
    }

    #[test]
    fn dg_norm_of_continuous_linear_field_has_no_jump_content() {
        // u = (x, y) is in RT_1 and globally smooth: the interior jump sums
        // vanish, leaving the H1 seminorm plus the boundary trace terms
        let n = 4usize;
        let mesh = build_uniform_mesh(n).unwrap();
        let space = build_spaces(&mesh, 1);
        let raw = interpolate_rt(&space, |x, y| [x, y]);
        let nrm = dg_norm_1_raw(&space, &raw);
        // seminorm^2 = 2; boundary: int |u|^2 over the four sides = 10/3
        let expected = (2.0 + (10.0 / 3.0) * n as f64).sqrt();
        assert!(
            (nrm - expected).abs() < 1e-12 * expected,
            "{nrm} vs {expected}"
        );
    }

    #[test]
    fn w_norm_rejects_zero_storage_and_bounds_spd_energy() {
        let mesh = build_uniform_mesh(2).unwrap();
        let space = build_spaces(&mesh, 1);
        let blocks = assemble_blocks_with_norms(&space);
        let params = ScaledParameters::new(1.0, 1.0, 1.0, 1).unwrap();
        let zero = vec![0.0; space.w_dofs()];
        assert_eq!(w_norm(&space, &blocks, &params, &zero).unwrap(), 0.0);

        let bad = ScaledParameters::new(1.0, 1.0, 0.0, 1).unwrap();
        assert!(w_norm(&space, &blocks, &bad, &zero).is_err());

        // coercivity: A_spd(w, w) >= c |w|_W^2 with c stable under refinement
        let measure = |space: &SpaceTriple, blocks: &BlockSet, seed: u64| -> f64 {
            let op = assemble_spd(space, blocks, &params).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c_min = f64::INFINITY;
            for _ in 0..50 {
                let w: Vec<f64> = (0..space.w_dofs())
                    .map(|_| rng.random::<f64>() - 0.5)
                    .collect();
                let mut y = vec![0.0; w.len()];
                op.apply(&w, &mut y);
                let energy = crate::linalg::dot(&w, &y);
                let nrm = w_norm(space, blocks, &params, &w).unwrap();
                c_min = c_min.min(energy / (nrm * nrm));
            }
            c_min
        };
        let c1 = measure(&space, &blocks, 12);
        assert!(c1 > 0.0, "coercivity constant {c1}");

        let mesh2 = crate::mesh::refine(&mesh);
        let space2 = build_spaces(&mesh2, 1);
        let blocks2 = assemble_blocks_with_norms(&space2);
        let c2 = measure(&space2, &blocks2, 13);
        assert!(c2 > 0.0 && c2 > 0.2 * c1, "refinement: {c1} -> {c2}");
    }
}
