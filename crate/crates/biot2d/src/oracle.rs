//! Independent brute-force verification: dense reference solves, inf-sup
//! constants from small eigenproblems, saddle/SPD equivalence, and the
//! pointwise mass-balance audit.
//!
//! Everything here goes through assembly and dense linear algebra only; the
//! Schwarz and Krylov machinery is never used, so these routines can serve
//! as ground truth for it.

use crate::forms::{self, BlockSet, ScaledParameters};
use crate::linalg::{self_adjoint_eigenvalues, PseudoInverse, SparseMatrix, DENSE_CAP};
use crate::spaces::element::{rt_dim, tabulate_q};
use crate::spaces::SpaceTriple;
use crate::{Error, Result};

/// Reference solve through a dense SVD pseudo-inverse; handles the
/// constant-pressure kernel of the storage-free mixed operator.
pub fn dense_solve(a: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    if a.nrows().max(a.ncols()) > DENSE_CAP {
        return Err(Error::Oversized {
            size: a.nrows().max(a.ncols()),
            cap: DENSE_CAP,
        });
    }
    let pinv = PseudoInverse::new(&a.to_dense(), 1e-12)?;
    let mut x = vec![0.0; a.ncols()];
    pinv.apply(rhs, &mut x);
    Ok(x)
}

/// Discrete inf-sup constants of the divergence coupling: `gamma_u` against
/// the broken-H1 norm of the displacement space and `gamma_v` against the
/// H(div) norm of the velocity space.
///
/// Both are the square roots of the second-smallest eigenvalue of
/// `B G^{-1} B^T` relative to the pressure mass; the smallest must be the
/// exact zero of the constant-pressure mode, anything else signals a broken
/// coupling.
pub fn inf_sup_constants(space: &SpaceTriple, blocks: &BlockSet) -> Result<(f64, f64)> {
    let hdiv_gram = add_sparse(&blocks.m, &blocks.d);
    let n_dg = blocks.n_dg.as_ref().ok_or_else(|| {
        Error::InvalidSpace("inf-sup needs the norm Gram; assemble with norms".into())
    })?;
    debug_assert_eq!(blocks.b.nrows(), space.n_p());
    let gamma_u = inf_sup_gamma(&blocks.b, n_dg, &blocks.mp_diag)?;
    let gamma_v = inf_sup_gamma(&blocks.b, &hdiv_gram, &blocks.mp_diag)?;
    Ok((gamma_u, gamma_v))
}

fn add_sparse(a: &SparseMatrix, b: &SparseMatrix) -> SparseMatrix {
    let mut triplets = Vec::with_capacity(a.nnz() + b.nnz());
    for m in [a, b] {
        for i in 0..m.nrows() {
            let (cols, vals) = m.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                triplets.push((i, j as usize, v));
            }
        }
    }
    SparseMatrix::from_triplets(a.nrows(), a.ncols(), &triplets)
}

fn inf_sup_gamma(b: &SparseMatrix, gram: &SparseMatrix, mp_diag: &[f64]) -> Result<f64> {
    let (np, nw) = (b.nrows(), b.ncols());
    if np.max(nw) > DENSE_CAP {
        return Err(Error::Oversized {
            size: np.max(nw),
            cap: DENSE_CAP,
        });
    }
    use faer::linalg::solvers::{PartialPivLu, Solve};
    let gram_d = gram.to_dense();
    let bt = b.transpose().to_dense();
    let lu = PartialPivLu::new(gram_d.as_ref());
    let x = lu.solve(&bt); // G^{-1} B^T
    let bd = b.to_dense();
    let mut s = &bd * &x; // B G^{-1} B^T, symmetric PSD
    // normalize by the (diagonal) pressure mass
    for i in 0..np {
        for j in 0..np {
            let w = (mp_diag[i] * mp_diag[j]).sqrt();
            s[(i, j)] /= w;
        }
    }
    let ev = self_adjoint_eigenvalues(&s)?;
    let max = ev.last().copied().unwrap_or(0.0);
    // exactly one zero eigenvalue: the constant-pressure mode
    let zeros = ev.iter().filter(|&&e| e.abs() <= 1e-10 * max).count();
    if zeros != 1 {
        return Err(Error::KernelMismatch {
            what: "inf-sup operator".into(),
            expected: 1,
            found: zeros,
        });
    }
    Ok(ev[1].max(0.0).sqrt())
}

/// Maximum pointwise residual of the discrete mass balance
/// `-div u_h - div v_h - cs p_h = g_h` over all cell quadrature points,
/// relative to the sup norm of `g_h` (absolute when `g_h` vanishes).
pub fn mass_conservation_audit(
    space: &SpaceTriple,
    params: &ScaledParameters,
    solution: &[f64],
    g_h: &[f64],
) -> f64 {
    let quad = &space.quad;
    let tab = space.elem.tabulate_rt(&quad.cell_points);
    let qtab = tabulate_q(space.kq, &quad.cell_points);
    let npts = quad.cell_points.len();
    let m = rt_dim(space.k);
    let nq = space.q_dim_per_cell();
    let nu = space.n_u();
    let po = space.p_offset();
    let inv_h2 = 1.0 / (space.mesh.h * space.mesh.h);
    let u_raw = space.rt_dofs.raw_from_free(&solution[..nu]);
    let v_raw = space.rt_dofs.raw_from_free(&solution[nu..2 * nu]);

    let mut max_res = 0.0f64;
    let mut max_g = 0.0f64;
    let mut max_terms = 0.0f64;
    for c in 0..space.mesh.n_cells() {
        let dofs = space.rt_dofs.cell_dofs(c);
        for p in 0..npts {
            let mut div_u = 0.0;
            let mut div_v = 0.0;
            for l in 0..m {
                let d = tab.div[l * npts + p];
                div_u += u_raw[dofs[l] as usize] * d;
                div_v += v_raw[dofs[l] as usize] * d;
            }
            div_u *= inv_h2;
            div_v *= inv_h2;
            let mut ph = 0.0;
            let mut gh = 0.0;
            for q in 0..nq {
                let base = qtab[q * npts + p];
                ph += solution[po + space.p_dof(c, q)] * base;
                gh += g_h[space.p_dof(c, q)] * base;
            }
            let res = (-div_u - div_v - params.cs_hat * ph - gh).abs();
            max_res = max_res.max(res);
            max_g = max_g.max(gh.abs());
            max_terms = max_terms
                .max(div_u.abs())
                .max(div_v.abs())
                .max((params.cs_hat * ph).abs());
        }
    }
    if max_res == 0.0 {
        0.0
    } else if max_g > 0.0 {
        max_res / max_g
    } else if max_terms > 0.0 {
        max_res / max_terms
    } else {
        max_res
    }
}

/// Solves the mixed and SPD systems with identical manufactured data and
/// returns the largest relative L2 discrepancy over the displacement, the
/// velocity, and the pressure recovered from the substitution.
pub fn spd_equivalence_check(
    space: &SpaceTriple,
    blocks: &BlockSet,
    params: &ScaledParameters,
    f: impl Fn(f64, f64) -> [f64; 2] + Copy,
    g: impl Fn(f64, f64) -> f64 + Copy,
) -> Result<f64> {
    if params.cs_hat <= 0.0 {
        return Err(Error::InvalidParameter(
            "the SPD equivalence needs cs_hat > 0".into(),
        ));
    }
    let mixed = forms::assemble_mixed(space, blocks, params)?;
    let rhs = forms::assemble_rhs(space, f, g);
    let x_mixed = dense_solve(&mixed.matrix, &rhs.vec)?;

    let spd = forms::assemble_spd(space, blocks, params)?;
    let (rhs_w, g_h) = forms::assemble_spd_rhs(space, blocks, params, f, g)?;
    let w = dense_solve(&spd.matrix, &rhs_w)?;
    let p_rec = forms::recover_pressure(space, blocks, params, &w, &g_h);

    let nu = space.n_u();
    let weighted = |mat: &SparseMatrix, x: &[f64]| -> f64 {
        let mut y = vec![0.0; x.len()];
        mat.matvec(x, &mut y);
        crate::linalg::dot(x, &y).max(0.0).sqrt()
    };
    let diff_u: Vec<f64> = (0..nu).map(|i| x_mixed[i] - w[i]).collect();
    let diff_v: Vec<f64> = (0..nu).map(|i| x_mixed[nu + i] - w[nu + i]).collect();
    let rel = |d: f64, r: f64| if r > 0.0 { d / r } else { d };
    let du = rel(
        weighted(&blocks.m, &diff_u),
        weighted(&blocks.m, &x_mixed[..nu]),
    );
    let dv = rel(
        weighted(&blocks.m, &diff_v),
        weighted(&blocks.m, &x_mixed[nu..2 * nu]),
    );
    let p_mixed = &x_mixed[2 * nu..];
    let l2p = |x: &[f64]| -> f64 {
        x.iter()
            .zip(&blocks.mp_diag)
            .map(|(v, w)| v * v * w)
            .sum::<f64>()
            .sqrt()
    };
    let diff_p: Vec<f64> = p_mixed.iter().zip(&p_rec).map(|(a, b)| a - b).collect();
    let dp = rel(l2p(&diff_p), l2p(p_mixed));
    Ok(du.max(dv).max(dp))
}

/// Dense kernel dimension of a sparse operator (oracle-sized only).
pub fn kernel_dimension(a: &SparseMatrix, tol_rel: f64) -> Result<usize> {
    if a.nrows().max(a.ncols()) > DENSE_CAP {
        return Err(Error::Oversized {
            size: a.nrows(),
            cap: DENSE_CAP,
        });
    }
    let (_, sigma, _) = crate::linalg::svd(&a.to_dense())?;
    let smax = sigma.first().copied().unwrap_or(0.0);
    Ok(sigma.iter().filter(|&&s| s <= tol_rel * smax).count())
}

/// Dense residual diagnostics of a reference solve: the part of the
/// residual orthogonal to the operator's (SVD-detected) kernel.
pub fn solve_residual_off_kernel(a: &SparseMatrix, x: &[f64], rhs: &[f64]) -> Result<f64> {
    let ad = a.to_dense();
    let (u, sigma, _) = crate::linalg::svd(&ad)?;
    let smax = sigma.first().copied().unwrap_or(0.0);
    let mut r = vec![0.0; a.nrows()];
    a.matvec(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(rhs) {
        *ri -= bi;
    }
    // remove kernel components (columns of U with negligible sigma)
    for (j, &s) in sigma.iter().enumerate() {
        if s <= 1e-12 * smax {
            let mut proj = 0.0;
            for i in 0..r.len() {
                proj += u[(i, j)] * r[i];
            }
            for i in 0..r.len() {
                r[i] -= proj * u[(i, j)];
            }
        }
    }
    Ok(crate::linalg::norm2(&r))
}
