//! Gauss-Legendre quadrature on the reference square and reference edge.

/// Tensor-product Gauss rule on `[0,1]^2` plus the 1D rule on `[0,1]`.
///
/// With `n` points per direction the rule integrates polynomials of degree
/// `2n-1` exactly in each variable; all assembled bilinear forms on affine
/// rectangles need degree `2k+2`, so `n = k+2` suffices.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub cell_points: Vec<(f64, f64)>,
    pub cell_weights: Vec<f64>,
    pub edge_points: Vec<f64>,
    pub edge_weights: Vec<f64>,
}

impl Quadrature {
    /// Rule exact for all integrands of the degree-`k` spaces (order `2k+3`).
    pub fn for_degree(k: usize) -> Self {
        Self::with_points(k + 2)
    }

    /// Finer rule for data integrals and error norms.
    pub fn fine_for_degree(k: usize) -> Self {
        Self::with_points(k + 6)
    }

    pub fn with_points(n: usize) -> Self {
        let (x, w) = gauss_legendre_unit(n);
        let mut cell_points = Vec::with_capacity(n * n);
        let mut cell_weights = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                cell_points.push((x[i], x[j]));
                cell_weights.push(w[i] * w[j]);
            }
        }
        Quadrature {
            cell_points,
            cell_weights,
            edge_points: x,
            edge_weights: w,
        }
    }
}

/// Gauss-Legendre nodes and weights on `[0,1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Newton iteration on P_n over [-1,1] from the Chebyshev guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // map [-1,1] -> [0,1]; reverse so nodes come out ascending
        nodes[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// (P_n(x), P_n'(x)) on [-1,1] by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
