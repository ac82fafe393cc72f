//! Reference-element bases on the unit square: Raviart-Thomas vector
//! elements of degree `k` (components in `Q_{k+1,k} x Q_{k,k+1}`) and the
//! discontinuous tensor-product scalar space `Q_k`.
//!
//! RT degrees of freedom are the canonical ones: normal moments against
//! degree-`k` edge polynomials on the four edges plus interior moments. Edge
//! functionals use the *canonical* normal (`+x` on vertical, `+y` on
//! horizontal edges) rather than the outward normal, so a face DOF shared by
//! two cells means the same moment on both sides and global H(div)
//! continuity needs no sign bookkeeping.
//!
//! The scalar basis is orthonormal on the reference square (tensor products
//! of shifted Legendre polynomials), which makes cell mass matrices
//! diagonal.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;

use super::quadrature::gauss_legendre_unit;

/// Values and derivatives of the orthonormal shifted Legendre polynomials
/// `L_0..=L_d` at `x in [0,1]`.
pub fn legendre_all(d: usize, x: f64, vals: &mut [f64], derivs: &mut [f64]) {
    debug_assert!(vals.len() > d && derivs.len() > d);
    let t = 2.0 * x - 1.0;
    let mut p_prev = 1.0;
    let mut p = t;
    let mut dp_prev = 0.0;
    let mut dp = 1.0;
    vals[0] = 1.0;
    derivs[0] = 0.0;
    if d == 0 {
        return;
    }
    vals[1] = 3.0f64.sqrt() * p;
    derivs[1] = 3.0f64.sqrt() * 2.0 * dp;
    for n in 2..=d {
        let nf = n as f64;
        let p_next = ((2.0 * nf - 1.0) * t * p - (nf - 1.0) * p_prev) / nf;
        let dp_next = dp_prev + (2.0 * nf - 1.0) * p;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
        let scale = (2.0 * nf + 1.0).sqrt();
        vals[n] = scale * p;
        derivs[n] = scale * 2.0 * dp;
    }
}

/// Tabulated Raviart-Thomas shape functions at a set of reference points.
/// Layout is DOF-major: entry `dof * npts + pt`.
#[derive(Debug, Clone)]
pub struct RtTabulation {
    pub npts: usize,
    pub val: Vec<[f64; 2]>,
    pub grad: Vec<[[f64; 2]; 2]>,
    pub div: Vec<f64>,
}

/// Raviart-Thomas element of degree `k` on the reference square.
#[derive(Debug)]
pub struct ReferenceElement {
    pub k: usize,
    pub rt_dim: usize,
    /// Dual-basis coefficients: `shape_i = sum_g coeff[(g, i)] * gen_g`.
    coeff: Mat<f64>,
}

/// Number of scalar `Q_k` basis functions per cell.
pub fn q_dim(k: usize) -> usize {
    (k + 1) * (k + 1)
}

/// Number of RT_k shape functions per cell: `2(k+1)(k+2)`.
pub fn rt_dim(k: usize) -> usize {
    2 * (k + 1) * (k + 2)
}

/// Number of interior (non-face) RT DOFs per cell: `2k(k+1)`.
pub fn rt_interior_dim(k: usize) -> usize {
    2 * k * (k + 1)
}

/// Local index layout of the RT DOFs.
///
/// Edges first, `k+1` moments each, in the order left, right, bottom, top;
/// then the `k(k+1)` interior x-moments, then the interior y-moments.
pub const EDGE_LEFT: usize = 0;
pub const EDGE_RIGHT: usize = 1;
pub const EDGE_BOTTOM: usize = 2;
pub const EDGE_TOP: usize = 3;

/// Reference coordinates of a point on edge `e` with edge parameter `t`.
pub fn edge_point(e: usize, t: f64) -> (f64, f64) {
    match e {
        EDGE_LEFT => (0.0, t),
        EDGE_RIGHT => (1.0, t),
        EDGE_BOTTOM => (t, 0.0),
        EDGE_TOP => (t, 1.0),
        _ => unreachable!(),
    }
}

/// Canonical normal of edge `e` (not the outward normal).
pub fn edge_canonical_normal(e: usize) -> [f64; 2] {
    match e {
        EDGE_LEFT | EDGE_RIGHT => [1.0, 0.0],
        EDGE_BOTTOM | EDGE_TOP => [0.0, 1.0],
        _ => unreachable!(),
    }
}

/// Generating (pre-dual) basis of RT_k: Legendre tensor products per
/// component.
struct Generating {
    k: usize,
}

impl Generating {
    fn dim(&self) -> usize {
        rt_dim(self.k)
    }

    /// Value, gradient and divergence of generating function `g` at (x, y).
    fn eval(&self, g: usize, x: f64, y: f64) -> ([f64; 2], [[f64; 2]; 2], f64) {
        let k = self.k;
        let d = k + 1;
        let mut lx = vec![0.0; d + 1];
        let mut dlx = vec![0.0; d + 1];
        let mut ly = vec![0.0; d + 1];
        let mut dly = vec![0.0; d + 1];
        legendre_all(d, x, &mut lx, &mut dlx);
        legendre_all(d, y, &mut ly, &mut dly);
        let count_x = (k + 2) * (k + 1);
        if g < count_x {
            let a = g % (k + 2);
            let b = g / (k + 2);
            let v = [lx[a] * ly[b], 0.0];
            let grad = [[dlx[a] * ly[b], lx[a] * dly[b]], [0.0, 0.0]];
            (v, grad, dlx[a] * ly[b])
        } else {
            let g = g - count_x;
            let a = g % (k + 1);
            let b = g / (k + 1);
            let v = [0.0, lx[a] * ly[b]];
            let grad = [[0.0, 0.0], [dlx[a] * ly[b], lx[a] * dly[b]]];
            (v, grad, lx[a] * dly[b])
        }
    }
}

impl ReferenceElement {
    pub fn new(k: usize) -> Self {
        let gen = Generating { k };
        let n = gen.dim();
        // Vandermonde of the DOF functionals against the generating basis
        let mut m = Mat::<f64>::zeros(n, n);
        let (qx, qw) = gauss_legendre_unit(k + 2);
        for g in 0..n {
            for (i, value) in Self::apply_functionals(k, &qx, &qw, |x, y| gen.eval(g, x, y).0)
                .into_iter()
                .enumerate()
            {
                m[(i, g)] = value;
            }
        }
        let lu = PartialPivLu::new(m.as_ref());
        let coeff = lu.solve(Mat::<f64>::identity(n, n));
        ReferenceElement {
            k,
            rt_dim: n,
            coeff,
        }
    }

    /// Reference points at which [`Self::apply_functionals_at`] samples a
    /// field: the four edges' Gauss points followed by the tensor cell
    /// points of the same 1D rule.
    pub fn functional_points(qx: &[f64]) -> Vec<(f64, f64)> {
        let n = qx.len();
        let mut pts = Vec::with_capacity(4 * n + n * n);
        for e in 0..4 {
            for &t in qx {
                pts.push(edge_point(e, t));
            }
        }
        for &x in qx {
            for &y in qx {
                pts.push((x, y));
            }
        }
        pts
    }

    /// Applies all RT DOF functionals given field values sampled at
    /// [`Self::functional_points`] (same 1D rule).
    pub fn apply_functionals_at(k: usize, qx: &[f64], qw: &[f64], vals: &[[f64; 2]]) -> Vec<f64> {
        let n = qx.len();
        debug_assert_eq!(vals.len(), 4 * n + n * n);
        let mut out = Vec::with_capacity(rt_dim(k));
        let mut lt = vec![0.0; k + 1];
        let mut dlt = vec![0.0; k + 1];
        // edge moments
        for e in 0..4 {
            let nrm = edge_canonical_normal(e);
            let mut moments = vec![0.0; k + 1];
            for (i, (&t, &w)) in qx.iter().zip(qw).enumerate() {
                let v = vals[e * n + i];
                let vn = v[0] * nrm[0] + v[1] * nrm[1];
                legendre_all(k, t, &mut lt, &mut dlt);
                for m in 0..=k {
                    moments[m] += w * vn * lt[m];
                }
            }
            out.extend_from_slice(&moments);
        }
        // interior moments
        if k > 0 {
            let mut lx = vec![0.0; k + 1];
            let mut dlx = vec![0.0; k + 1];
            let mut ly = vec![0.0; k + 1];
            let mut dly = vec![0.0; k + 1];
            let mut mx = vec![0.0; k * (k + 1)];
            let mut my = vec![0.0; k * (k + 1)];
            for (ix, (&x, &wx)) in qx.iter().zip(qw).enumerate() {
                legendre_all(k, x, &mut lx, &mut dlx);
                for (iy, (&y, &wy)) in qx.iter().zip(qw).enumerate() {
                    legendre_all(k, y, &mut ly, &mut dly);
                    let v = vals[4 * n + ix * n + iy];
                    let w = wx * wy;
                    for b in 0..=k {
                        for a in 0..k {
                            mx[a + k * b] += w * v[0] * lx[a] * ly[b];
                        }
                    }
                    for b in 0..k {
                        for a in 0..=k {
                            my[a + (k + 1) * b] += w * v[1] * lx[a] * ly[b];
                        }
                    }
                }
            }
            out.extend_from_slice(&mx);
            out.extend_from_slice(&my);
        }
        out
    }

    /// Applies all RT DOF functionals to a vector field on the reference
    /// square, using the provided 1D Gauss rule for every moment.
    pub fn apply_functionals(
        k: usize,
        qx: &[f64],
        qw: &[f64],
        f: impl Fn(f64, f64) -> [f64; 2],
    ) -> Vec<f64> {
        let vals: Vec<[f64; 2]> = Self::functional_points(qx)
            .into_iter()
            .map(|(x, y)| f(x, y))
            .collect();
        Self::apply_functionals_at(k, qx, qw, &vals)
    }

    /// Local indices of the `k+1` DOFs on edge `e`.
    pub fn edge_dofs(&self, e: usize) -> std::ops::Range<usize> {
        e * (self.k + 1)..(e + 1) * (self.k + 1)
    }

    /// Tabulates shape functions, gradients and divergences at reference
    /// points (points may lie on edges, which also yields the traces).
    pub fn tabulate_rt(&self, pts: &[(f64, f64)]) -> RtTabulation {
        let gen = Generating { k: self.k };
        let n = self.rt_dim;
        let npts = pts.len();
        // generating data, gen-major
        let mut gval = vec![[0.0; 2]; n * npts];
        let mut ggrad = vec![[[0.0; 2]; 2]; n * npts];
        let mut gdiv = vec![0.0; n * npts];
        for g in 0..n {
            for (p, &(x, y)) in pts.iter().enumerate() {
                let (v, gr, dv) = gen.eval(g, x, y);
                gval[g * npts + p] = v;
                ggrad[g * npts + p] = gr;
                gdiv[g * npts + p] = dv;
            }
        }
        let mut val = vec![[0.0; 2]; n * npts];
        let mut grad = vec![[[0.0; 2]; 2]; n * npts];
        let mut div = vec![0.0; n * npts];
        for i in 0..n {
            for g in 0..n {
                let c = self.coeff[(g, i)];
                if c == 0.0 {
                    continue;
                }
                for p in 0..npts {
                    let gv = gval[g * npts + p];
                    val[i * npts + p][0] += c * gv[0];
                    val[i * npts + p][1] += c * gv[1];
                    let gg = ggrad[g * npts + p];
                    for r in 0..2 {
                        for s in 0..2 {
                            grad[i * npts + p][r][s] += c * gg[r][s];
                        }
                    }
                    div[i * npts + p] += c * gdiv[g * npts + p];
                }
            }
        }
        RtTabulation {
            npts,
            val,
            grad,
            div,
        }
    }
}

/// Tabulates the `Q_k` scalar basis (orthonormal on the reference square)
/// at reference points; DOF-major layout.
pub fn tabulate_q(kq: usize, pts: &[(f64, f64)]) -> Vec<f64> {
    let nq = q_dim(kq);
    let npts = pts.len();
    let mut out = vec![0.0; nq * npts];
    let mut lx = vec![0.0; kq + 1];
    let mut dl = vec![0.0; kq + 1];
    let mut ly = vec![0.0; kq + 1];
    for (p, &(x, y)) in pts.iter().enumerate() {
        legendre_all(kq, x, &mut lx, &mut dl);
        legendre_all(kq, y, &mut ly, &mut dl);
        for j in 0..=kq {
            for i in 0..=kq {
                out[(i + (kq + 1) * j) * npts + p] = lx[i] * ly[j];
            }
        }
    }
    out
}
