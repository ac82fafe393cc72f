//! Monolithic overlapping Schwarz preconditioners: vertex-patch
//! restrictions, kernel-aware SVD solves of the local problems, an exact
//! coarse solve on the nested coarse space (with the non-inherited coarse
//! form), and additive / multiplicative / multilevel composition.
//!
//! Local problems keep only degrees of freedom interior to their patch:
//! Raviart-Thomas face moments on the patch boundary are excluded for both
//! vector fields while all pressure modes of the patch cells stay. With a
//! vanishing storage coefficient every local operator then has the
//! one-dimensional constant-pressure kernel, which the SVD pseudo-inverse
//! removes exactly.
//!
//! On a uniform mesh, patches that are translates of each other have
//! bit-identical local matrices, so only one factorization per boundary
//! class (at most 16) is computed; every patch shares its class factor.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::forms::{self, BlockOperator, BlockSet, SpdOperator};
use crate::krylov::LinearOp;
use crate::linalg::{
    BorderedSparseLu, KernelAwarePseudoInverse, MeanZeroProjector, SparseLu, SparseMatrix,
};
use crate::mesh::{patch_interior_faces, vertex_patches, Mesh, Patch};
use crate::spaces::element::rt_interior_dim;
use crate::spaces::{build_spaces, prolongation, SpaceTriple};
use crate::{Error, Result};

/// Additive relaxation default: interior vertex patches 4-color, which
/// bounds the additive spectrum by 4 plus the coarse term.
pub const DEFAULT_OMEGA_ADDITIVE: f64 = 0.25;

/// Relative singular-value cutoff separating the local kernels (exact zeros
/// up to round-off) from the physical spectrum.
pub const DEFAULT_SVD_TOL: f64 = 1e-12;

/// Cap on coarse problems factored by dense SVD; larger coarse operators
/// use a kernel-aware bordered sparse LU instead.
pub const DENSE_COARSE_CAP: usize = 2500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchwarzMode {
    Additive,
    Multiplicative,
    Multilevel,
}

impl fmt::Display for SchwarzMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchwarzMode::Additive => write!(f, "additive"),
            SchwarzMode::Multiplicative => write!(f, "multiplicative"),
            SchwarzMode::Multilevel => write!(f, "multilevel"),
        }
    }
}

impl std::str::FromStr for SchwarzMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(SchwarzMode::Additive),
            "multiplicative" => Ok(SchwarzMode::Multiplicative),
            "multilevel" => Ok(SchwarzMode::Multilevel),
            other => Err(Error::Config(format!("unknown Schwarz mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SchwarzConfig {
    pub mode: SchwarzMode,
    /// Additive relaxation factor.
    pub omega: f64,
    /// Coarse-solve relaxation factor.
    pub omega0: f64,
    /// Relative singular-value cutoff of the local solves.
    pub svd_tol: f64,
}

impl Default for SchwarzConfig {
    fn default() -> Self {
        SchwarzConfig {
            mode: SchwarzMode::Multiplicative,
            omega: DEFAULT_OMEGA_ADDITIVE,
            omega0: 1.0,
            svd_tol: DEFAULT_SVD_TOL,
        }
    }
}

impl SchwarzConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::InvalidParameter("omega must lie in (0, 1]".into()));
        }
        if !(self.omega0 > 0.0 && self.omega0 <= 1.0) {
            return Err(Error::InvalidParameter("omega0 must lie in (0, 1]".into()));
        }
        if !(self.svd_tol > 0.0 && self.svd_tol <= 1e-6) {
            return Err(Error::InvalidParameter(
                "svd_tol must lie in (0, 1e-6]".into(),
            ));
        }
        Ok(())
    }
}

/// One local solver: the patch's interior DOFs in the global layout plus a
/// (class-shared) SVD pseudo-inverse of the Galerkin restriction.
pub struct PatchSolver {
    pub dofs: Vec<u32>,
    factor: Arc<KernelAwarePseudoInverse>,
}

impl PatchSolver {
    pub fn kernel_dim(&self) -> usize {
        self.factor.kernel_dim()
    }

    /// Moore-Penrose solve of the local problem.
    pub fn apply_pseudoinverse(&self, local_r: &[f64], local_x: &mut [f64]) {
        self.factor.apply(local_r, local_x);
    }
}

/// Boundary class of a patch: which domain edges its cells touch. Patches
/// in one class are translates of each other and share their local matrix.
fn patch_class(patch: &Patch, n: usize) -> (u8, u8) {
    let (i, j) = patch.vertex;
    let code = |t: usize| (t == 1) as u8 | (((t == n - 1) as u8) << 1);
    (code(i), code(j))
}

/// Interior DOFs of a patch in the monolithic `[u | v | p]` layout.
fn mixed_patch_dofs(space: &SpaceTriple, mesh: &Mesh, patch: &Patch) -> Vec<u32> {
    let mut dofs = rt_patch_dofs(space, mesh, patch, 0);
    dofs.extend(rt_patch_dofs(space, mesh, patch, space.v_offset()));
    let po = space.p_offset();
    for &c in &patch.cells {
        for q in 0..space.q_dim_per_cell() {
            dofs.push((po + space.p_dof(c, q)) as u32);
        }
    }
    dofs
}

/// Interior RT DOFs of a patch (face moments on the four central faces plus
/// all cell-interior moments), shifted by a block offset.
fn rt_patch_dofs(space: &SpaceTriple, mesh: &Mesh, patch: &Patch, offset: usize) -> Vec<u32> {
    let k = space.k;
    let mut dofs = Vec::new();
    for f in patch_interior_faces(mesh, patch) {
        for m in 0..=k {
            let raw = space.rt_dofs.face_dof(f, m);
            let free = space
                .rt_dofs
                .free_of_raw(raw)
                .expect("central patch faces are interior");
            dofs.push((offset + free) as u32);
        }
    }
    for &c in &patch.cells {
        for t in 0..rt_interior_dim(k) {
            let raw = space.rt_dofs.interior_dof(c, t);
            let free = space
                .rt_dofs
                .free_of_raw(raw)
                .expect("interior moments are unconstrained");
            dofs.push((offset + free) as u32);
        }
    }
    dofs
}

/// Builds one solver per interior-vertex patch with class-shared SVD
/// factors.
///
/// `kernel_pattern = Some((p_offset, nq))` declares the expected
/// one-dimensional constant-pressure kernel (storage-free operators): the
/// local kernel vector has a one on each patch cell's constant pressure
/// mode. The detected kernel dimension is validated per class and flags
/// assembly or selection bugs. Translation invariance is validated on a
/// sample of patches per class, with a per-patch factorization fallback if
/// it ever fails.
pub fn build_patch_solvers(
    matrix: &SparseMatrix,
    selections: Vec<((u8, u8), Vec<u32>)>,
    svd_tol: f64,
    kernel_pattern: Option<(usize, usize)>,
) -> Result<Vec<PatchSolver>> {
    let expected_kernel = kernel_pattern.is_some() as usize;
    let local_kernel = |dofs: &[u32]| -> Option<Vec<f64>> {
        kernel_pattern.map(|(p_offset, nq)| {
            dofs.iter()
                .map(|&g| {
                    let g = g as usize;
                    (g >= p_offset && (g - p_offset) % nq == 0) as usize as f64
                })
                .collect()
        })
    };
    let mut class_rep: HashMap<(u8, u8), (faer::Mat<f64>, Arc<KernelAwarePseudoInverse>)> =
        HashMap::new();
    let mut solvers = Vec::with_capacity(selections.len());
    let mut sampled: HashMap<(u8, u8), usize> = HashMap::new();
    let total = selections.len();
    for (idx, (class, dofs)) in selections.into_iter().enumerate() {
        let factor = match class_rep.get(&class) {
            Some((rep_mat, factor)) => {
                // verify translation invariance on a few patches per class
                let count = sampled.entry(class).or_insert(0);
                let check = *count < 2 || idx == total - 1;
                if check {
                    *count += 1;
                    let local = matrix.extract_dense(&dofs, &dofs);
                    if !mats_equal(&local, rep_mat) {
                        // fall back to an individual factorization
                        let f = Arc::new(factored(
                            &local,
                            svd_tol,
                            local_kernel(&dofs),
                            expected_kernel,
                            idx,
                        )?);
                        solvers.push(PatchSolver { dofs, factor: f });
                        continue;
                    }
                }
                factor.clone()
            }
            None => {
                let local = matrix.extract_dense(&dofs, &dofs);
                debug_assert!(
                    {
                        let mut asym = 0.0f64;
                        for i in 0..local.nrows() {
                            for j in 0..local.ncols() {
                                asym = asym.max((local[(i, j)] - local[(j, i)]).abs());
                            }
                        }
                        asym <= 1e-12 * local.norm_max().max(1.0)
                    },
                    "restricted patch matrix must be symmetric"
                );
                let factor = Arc::new(factored(
                    &local,
                    svd_tol,
                    local_kernel(&dofs),
                    expected_kernel,
                    idx,
                )?);
                class_rep.insert(class, (local, factor.clone()));
                factor
            }
        };
        solvers.push(PatchSolver { dofs, factor });
    }
    Ok(solvers)
}

fn factored(
    local: &faer::Mat<f64>,
    svd_tol: f64,
    kernel: Option<Vec<f64>>,
    expected_kernel: usize,
    patch_index: usize,
) -> Result<KernelAwarePseudoInverse> {
    let pinv = KernelAwarePseudoInverse::new(local, svd_tol, kernel)?;
    if pinv.kernel_dim() != expected_kernel {
        return Err(Error::KernelMismatch {
            what: format!("patch {patch_index}"),
            expected: expected_kernel,
            found: pinv.kernel_dim(),
        });
    }
    Ok(pinv)
}

fn mats_equal(a: &faer::Mat<f64>, b: &faer::Mat<f64>) -> bool {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return false;
    }
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if a[(i, j)] != b[(i, j)] {
                return false;
            }
        }
    }
    true
}

/// Exact solver of the coarse problem.
enum CoarseFactor {
    /// Dense SVD pseudo-inverse (equilibrated, kernel-aware).
    Svd(KernelAwarePseudoInverse),
    /// Sparse LU of the bordered system for the known 1-dim kernel.
    Bordered(BorderedSparseLu, Vec<f64>),
    /// Plain sparse LU (nonsingular coarse operator).
    Lu(SparseLu),
}

/// Coarse-space correction: restriction through the embedding transpose, a
/// kernel-aware exact solve of the non-inherited coarse operator, and
/// prolongation, scaled by `omega0`.
pub struct CoarseSolver {
    /// Embedding of the coarse space into the fine one.
    pub prolongation: SparseMatrix,
    factor: CoarseFactor,
    pub omega0: f64,
    n_coarse: usize,
}

impl CoarseSolver {
    pub fn new(
        coarse_matrix: &SparseMatrix,
        prolongation: SparseMatrix,
        kernel: Option<Vec<f64>>,
        omega0: f64,
        svd_tol: f64,
    ) -> Result<Self> {
        let n = coarse_matrix.nrows();
        let expected = kernel.is_some() as usize;
        let factor = if n <= DENSE_COARSE_CAP {
            let pinv =
                KernelAwarePseudoInverse::new(&coarse_matrix.to_dense(), svd_tol, kernel.clone())?;
            if pinv.kernel_dim() != expected {
                return Err(Error::KernelMismatch {
                    what: "coarse operator".into(),
                    expected,
                    found: pinv.kernel_dim(),
                });
            }
            CoarseFactor::Svd(pinv)
        } else if let Some(kernel) = kernel {
            CoarseFactor::Bordered(BorderedSparseLu::new(coarse_matrix, &kernel)?, kernel)
        } else {
            CoarseFactor::Lu(SparseLu::new(coarse_matrix)?)
        };
        Ok(CoarseSolver {
            prolongation,
            factor,
            omega0,
            n_coarse: n,
        })
    }

    /// c += omega0 * P A_H^+ P^T r.
    pub fn accumulate(&self, r: &[f64], c: &mut [f64]) {
        let mut rc = vec![0.0; self.n_coarse];
        self.prolongation.matvec_transpose(r, &mut rc);
        let mut xc = vec![0.0; self.n_coarse];
        match &self.factor {
            CoarseFactor::Svd(pinv) => pinv.apply(&rc, &mut xc),
            CoarseFactor::Bordered(lu, kernel) => {
                // remove the kernel component of the restricted residual
                let k2 = crate::linalg::dot(kernel, kernel);
                let proj = crate::linalg::dot(kernel, &rc) / k2;
                for (ri, ki) in rc.iter_mut().zip(kernel) {
                    *ri -= proj * ki;
                }
                lu.solve(&rc, &mut xc);
            }
            CoarseFactor::Lu(lu) => lu.solve(&rc, &mut xc),
        }
        let mut fine = vec![0.0; c.len()];
        self.prolongation.matvec(&xc, &mut fine);
        crate::linalg::axpy(self.omega0, &fine, c);
    }
}

/// One sweep level of the preconditioner: the level operator, its patch
/// solvers, and the embedding from the next-coarser space.
pub struct Level {
    pub matrix: Arc<SparseMatrix>,
    pub patches: Vec<PatchSolver>,
    /// Embedding from the level below (the exact level for the first entry).
    pub p_from_below: SparseMatrix,
}

/// Monolithic overlapping Schwarz preconditioner over a mesh hierarchy.
///
/// Two-level methods have a single sweep level (the fine one) above the
/// exact coarse solve; the multilevel variant sweeps every level from
/// coarse to fine with residuals transported through the embeddings.
pub struct SchwarzPreconditioner {
    pub mode: SchwarzMode,
    pub omega: f64,
    coarse: Option<CoarseSolver>,
    levels: Vec<Level>,
    projector: Option<MeanZeroProjector>,
    dim: usize,
}

impl SchwarzPreconditioner {
    /// Assembles the preconditioner pieces directly (used by tests and the
    /// SPD-path builder); `levels` are ordered coarse to fine and the last
    /// one must match the operator this preconditioner is applied to.
    pub fn from_parts(
        mode: SchwarzMode,
        omega: f64,
        coarse: Option<CoarseSolver>,
        levels: Vec<Level>,
        projector: Option<MeanZeroProjector>,
    ) -> Result<Self> {
        let dim = levels
            .last()
            .map(|l| l.matrix.nrows())
            .ok_or_else(|| Error::InvalidParameter("at least one sweep level".into()))?;
        if mode != SchwarzMode::Multilevel && levels.len() != 1 {
            return Err(Error::InvalidParameter(
                "two-level modes take exactly one sweep level".into(),
            ));
        }
        Ok(SchwarzPreconditioner {
            mode,
            omega,
            coarse,
            levels,
            projector,
            dim,
        })
    }

    pub fn n_patches(&self) -> usize {
        self.levels.iter().map(|l| l.patches.len()).sum()
    }

    /// Applies the preconditioner to a residual.
    pub fn correction(&self, r: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        match self.mode {
            SchwarzMode::Additive => {
                if let Some(coarse) = &self.coarse {
                    coarse.accumulate(r, &mut c);
                }
                let level = &self.levels[0];
                for patch in &level.patches {
                    let local_r: Vec<f64> =
                        patch.dofs.iter().map(|&g| r[g as usize]).collect();
                    let mut local_x = vec![0.0; local_r.len()];
                    patch.apply_pseudoinverse(&local_r, &mut local_x);
                    for (&g, &x) in patch.dofs.iter().zip(&local_x) {
                        c[g as usize] += x;
                    }
                }
                for v in c.iter_mut() {
                    *v *= self.omega;
                }
            }
            SchwarzMode::Multiplicative | SchwarzMode::Multilevel => {
                // restrict the residual down the hierarchy
                let nl = self.levels.len();
                let mut residuals: Vec<Vec<f64>> = Vec::with_capacity(nl);
                residuals.push(r.to_vec());
                for l in (1..nl).rev() {
                    let below = vec![0.0; self.levels[l].p_from_below.ncols()];
                    let mut below = below;
                    self.levels[l]
                        .p_from_below
                        .matvec_transpose(residuals.last().unwrap(), &mut below);
                    residuals.push(below);
                }
                residuals.reverse(); // coarse..fine order for levels

                // exact solve on the coarsest space, with its residual
                let mut c_level: Vec<f64> = vec![0.0; self.levels[0].matrix.nrows()];
                if let Some(coarse) = &self.coarse {
                    coarse.accumulate(&residuals[0], &mut c_level);
                }
                for (l, level) in self.levels.iter().enumerate() {
                    if l > 0 {
                        // carry the accumulated correction up one level
                        let mut up = vec![0.0; level.matrix.nrows()];
                        level.p_from_below.matvec(&c_level, &mut up);
                        c_level = up;
                    }
                    // up-to-date level residual
                    let mut rl = residuals[l].clone();
                    if c_level.iter().any(|&x| x != 0.0) {
                        level.matrix.matvec_add(-1.0, &c_level, &mut rl);
                    }
                    for patch in &level.patches {
                        let local_r: Vec<f64> =
                            patch.dofs.iter().map(|&g| rl[g as usize]).collect();
                        let mut local_x = vec![0.0; local_r.len()];
                        patch.apply_pseudoinverse(&local_r, &mut local_x);
                        for (&g, &x) in patch.dofs.iter().zip(&local_x) {
                            c_level[g as usize] += x;
                            // maintain the residual through the touched rows
                            let (cols, vals) = level.matrix.row(g as usize);
                            for (&col, &a) in cols.iter().zip(vals) {
                                rl[col as usize] -= a * x;
                            }
                        }
                    }
                }
                c = c_level;
            }
        }
        if let Some(proj) = &self.projector {
            proj.project(&mut c);
        }
        c
    }
}

impl LinearOp for SchwarzPreconditioner {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let c = self.correction(x);
        y.copy_from_slice(&c);
    }
}

/// Builds the preconditioner for the monolithic mixed operator over a
/// nested mesh hierarchy (ordered coarse to fine; the finest mesh must be
/// the operator's). Two-level modes use the last two meshes; the multilevel
/// mode sweeps every level above the coarsest.
pub fn build_preconditioner(
    meshes: &[Arc<Mesh>],
    space: &SpaceTriple,
    blocks: &BlockSet,
    op: &BlockOperator,
    config: &SchwarzConfig,
) -> Result<SchwarzPreconditioner> {
    config.validate()?;
    if meshes.len() < 2 {
        return Err(Error::InvalidMesh(
            "Schwarz preconditioners need a hierarchy of depth >= 2".into(),
        ));
    }
    let finest = meshes.last().unwrap();
    if !Arc::ptr_eq(finest, &space.mesh) {
        return Err(Error::InvalidMesh(
            "the finest hierarchy mesh must be the operator's mesh".into(),
        ));
    }
    let params = &op.params;
    let expected_kernel = (params.cs_hat == 0.0) as usize;
    let active: &[Arc<Mesh>] = match config.mode {
        SchwarzMode::Multilevel => meshes,
        _ => &meshes[meshes.len() - 2..],
    };

    // spaces per level (the finest reuses the caller's triplet structure)
    let mut spaces: Vec<SpaceTriple> = Vec::with_capacity(active.len());
    for mesh in active {
        spaces.push(build_spaces(mesh, space.k));
    }

    // level operators: the finest is shared with the caller
    let mut matrices: Vec<Arc<SparseMatrix>> = Vec::with_capacity(active.len());
    for (l, sp) in spaces.iter().enumerate() {
        if l == active.len() - 1 {
            matrices.push(op.matrix.clone());
        } else {
            let bl = forms::assemble_blocks(sp);
            matrices.push(forms::assemble_mixed(sp, &bl, params)?.matrix);
        }
    }

    // coarse exact solve on level 0
    let p01 = prolongation(&spaces[0], &spaces[1])?.mixed(&spaces[0], &spaces[1]);
    let kernel = (expected_kernel == 1).then(|| constant_pressure_vector(&spaces[0]));
    let coarse = CoarseSolver::new(&matrices[0], p01, kernel, config.omega0, config.svd_tol)?;

    // sweep levels 1..; each owns the embedding from below
    let mut levels = Vec::with_capacity(active.len() - 1);
    for l in 1..active.len() {
        let sp = &spaces[l];
        let patches = vertex_patches(&sp.mesh)?;
        let selections: Vec<((u8, u8), Vec<u32>)> = patches
            .iter()
            .map(|p| {
                (
                    patch_class(p, sp.mesh.n_per_side),
                    mixed_patch_dofs(sp, &sp.mesh, p),
                )
            })
            .collect();
        let kernel_pattern =
            (expected_kernel == 1).then(|| (sp.p_offset(), sp.q_dim_per_cell()));
        let solvers =
            build_patch_solvers(&matrices[l], selections, config.svd_tol, kernel_pattern)?;
        let p_from_below = if l == 1 {
            // already built for the coarse solver; rebuild the embedding
            prolongation(&spaces[0], sp)?.mixed(&spaces[0], sp)
        } else {
            prolongation(&spaces[l - 1], sp)?.mixed(&spaces[l - 1], sp)
        };
        levels.push(Level {
            matrix: matrices[l].clone(),
            patches: solvers,
            p_from_below,
        });
    }

    let projector = (expected_kernel == 1).then(|| forms::mean_zero_projector(space, blocks));
    SchwarzPreconditioner::from_parts(config.mode, config.omega, Some(coarse), levels, projector)
}

/// Coefficients of the constant-1 pressure function in the monolithic
/// layout of a triplet (the coarse kernel at vanishing storage).
pub fn constant_pressure_vector(space: &SpaceTriple) -> Vec<f64> {
    let mut kernel = vec![0.0; space.total_dofs()];
    let po = space.p_offset();
    for c in 0..space.mesh.n_cells() {
        kernel[po + space.p_dof(c, 0)] = 1.0;
    }
    kernel
}

/// Two-level preconditioner for the SPD displacement-velocity operator
/// (used by the contraction estimates; the local and coarse operators are
/// nonsingular here since the storage coefficient is positive).
pub fn build_spd_preconditioner(
    meshes: &[Arc<Mesh>],
    space: &SpaceTriple,
    op: &SpdOperator,
    config: &SchwarzConfig,
) -> Result<SchwarzPreconditioner> {
    config.validate()?;
    if meshes.len() != 2 {
        return Err(Error::InvalidMesh(
            "the SPD path is two-level: pass [coarse, fine]".into(),
        ));
    }
    if !Arc::ptr_eq(&meshes[1], &space.mesh) {
        return Err(Error::InvalidMesh(
            "the finest hierarchy mesh must be the operator's mesh".into(),
        ));
    }
    let coarse_space = build_spaces(&meshes[0], space.k);
    let coarse_blocks = forms::assemble_blocks(&coarse_space);
    let coarse_op = forms::assemble_spd(&coarse_space, &coarse_blocks, &op.params)?;
    let p = prolongation(&coarse_space, space)?.w_pair(&coarse_space, space);
    let coarse = CoarseSolver::new(&coarse_op.matrix, p, None, config.omega0, config.svd_tol)?;

    let patches = vertex_patches(&space.mesh)?;
    let selections: Vec<((u8, u8), Vec<u32>)> = patches
        .iter()
        .map(|pt| {
            let mut dofs = rt_patch_dofs(space, &space.mesh, pt, 0);
            dofs.extend(rt_patch_dofs(space, &space.mesh, pt, space.v_offset()));
            (patch_class(pt, space.mesh.n_per_side), dofs)
        })
        .collect();
    let solvers = build_patch_solvers(&op.matrix, selections, config.svd_tol, None)?;
    let p_from_below = prolongation(&coarse_space, space)?.w_pair(&coarse_space, space);
    SchwarzPreconditioner::from_parts(
        config.mode,
        config.omega,
        Some(coarse),
        vec![Level {
            matrix: op.matrix.clone(),
            patches: solvers,
            p_from_below,
        }],
        None,
    )
}
