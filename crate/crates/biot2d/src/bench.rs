//! Benchmark harness: the manufactured polynomial problem on the unit
//! square, single-case runs, parameter sweeps reproducing the iteration
//! tables, and CSV/markdown emission.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::forms::{self, ScaledParameters};
use crate::krylov::{self, GmresOptions};
use crate::mesh::{build_uniform_mesh, Mesh};
use crate::oracle;
use crate::schwarz::{self, SchwarzConfig, SchwarzMode};
use crate::spaces::{build_spaces, SpaceTriple};
use crate::{Error, Result};

/// Coefficients of `psi(t) = t^2 (t-1)^2` and its derivatives, frozen from
/// the symbolic expansion (Horner order, constant first).
const PSI: [f64; 5] = [0.0, 0.0, 1.0, -2.0, 1.0];
const DPSI: [f64; 5] = [0.0, 2.0, -6.0, 4.0, 0.0];
const D2PSI: [f64; 5] = [2.0, -12.0, 12.0, 0.0, 0.0];
const D3PSI: [f64; 5] = [-12.0, 24.0, 0.0, 0.0, 0.0];

fn horner(c: &[f64; 5], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * t + ci)
}

/// The manufactured problem: a divergence-free displacement given by the
/// stream function `phi = x^2(x-1)^2 y^2(y-1)^2`, a mean-zero pressure
/// `p = 900 phi - 1`, and the Darcy-consistent velocity `v = -kappa grad p`.
/// The loads `f` and `g` are the closed forms this triple satisfies under
/// the assembled equations.
#[derive(Debug, Clone, Copy)]
pub struct ManufacturedProblem {
    pub kappa_hat: f64,
    pub lambda_hat: f64,
    pub cs_hat: f64,
}

/// Exact field values at one point.
#[derive(Debug, Clone, Copy)]
pub struct ExactValues {
    pub u: [f64; 2],
    pub v: [f64; 2],
    pub p: f64,
}

impl ManufacturedProblem {
    pub fn new(params: &ScaledParameters) -> Self {
        ManufacturedProblem {
            kappa_hat: 1.0 / params.kappa_hat_inv,
            lambda_hat: params.lambda_hat,
            cs_hat: params.cs_hat,
        }
    }

    /// Closed-form solution evaluation.
    pub fn evaluate_exact(&self, x: f64, y: f64) -> ExactValues {
        let (px, py) = (horner(&PSI, x), horner(&PSI, y));
        let (dx, dy) = (horner(&DPSI, x), horner(&DPSI, y));
        ExactValues {
            u: [px * dy, -dx * py],
            v: [
                -900.0 * self.kappa_hat * dx * py,
                -900.0 * self.kappa_hat * px * dy,
            ],
            p: 900.0 * px * py - 1.0,
        }
    }

    /// Momentum load: `-div eps(u) - lambda_hat grad(div u) + grad p` with
    /// `div u = 0`; the strain term of the divergence-free curl field
    /// contributes half a vector Laplacian.
    pub fn f(&self, x: f64, y: f64) -> [f64; 2] {
        let (px, py) = (horner(&PSI, x), horner(&PSI, y));
        let (dx, dy) = (horner(&DPSI, x), horner(&DPSI, y));
        let (d2x, d2y) = (horner(&D2PSI, x), horner(&D2PSI, y));
        let (d3x, d3y) = (horner(&D3PSI, x), horner(&D3PSI, y));
        [
            900.0 * dx * py - 0.5 * (px * d3y + d2x * dy),
            900.0 * px * dy + 0.5 * (d3x * py + dx * d2y),
        ]
    }

    /// Mass load: `g = 900 kappa_hat lap(phi) - cs_hat (900 phi - 1)`.
    pub fn g(&self, x: f64, y: f64) -> f64 {
        let (px, py) = (horner(&PSI, x), horner(&PSI, y));
        let (d2x, d2y) = (horner(&D2PSI, x), horner(&D2PSI, y));
        let lap = d2x * py + px * d2y;
        900.0 * self.kappa_hat * lap - self.cs_hat * (900.0 * px * py - 1.0)
    }
}

/// L2 errors of a monolithic solution against the exact fields, by
/// high-order quadrature.
pub struct FieldErrors {
    pub err_u: f64,
    pub err_v: f64,
    pub err_p: f64,
}

pub fn field_errors(
    space: &SpaceTriple,
    problem: &ManufacturedProblem,
    solution: &[f64],
) -> FieldErrors {
    let quad = crate::spaces::quadrature::Quadrature::fine_for_degree(space.k + 4);
    let tab = space.elem.tabulate_rt(&quad.cell_points);
    let qtab = crate::spaces::element::tabulate_q(space.kq, &quad.cell_points);
    let npts = quad.cell_points.len();
    let m = crate::spaces::element::rt_dim(space.k);
    let nq = space.q_dim_per_cell();
    let h = space.mesh.h;
    let nu = space.n_u();
    let po = space.p_offset();
    let u_raw = space.rt_dofs.raw_from_free(&solution[..nu]);
    let v_raw = space.rt_dofs.raw_from_free(&solution[nu..2 * nu]);

    let (mut eu, mut ev, mut ep) = (0.0, 0.0, 0.0);
    for (c, cell) in space.mesh.cells.iter().enumerate() {
        let dofs = space.rt_dofs.cell_dofs(c);
        for (p, &(xr, yr)) in quad.cell_points.iter().enumerate() {
            let (x, y) = (cell.x0 + h * xr, cell.y0 + h * yr);
            let exact = problem.evaluate_exact(x, y);
            let mut uh = [0.0; 2];
            let mut vh = [0.0; 2];
            for l in 0..m {
                let val = tab.val[l * npts + p];
                let g = dofs[l] as usize;
                uh[0] += u_raw[g] * val[0];
                uh[1] += u_raw[g] * val[1];
                vh[0] += v_raw[g] * val[0];
                vh[1] += v_raw[g] * val[1];
            }
            let mut ph = 0.0;
            for q in 0..nq {
                ph += solution[po + space.p_dof(c, q)] * qtab[q * npts + p];
            }
            let w = quad.cell_weights[p] * h * h;
            let du = [uh[0] / h - exact.u[0], uh[1] / h - exact.u[1]];
            let dv = [vh[0] / h - exact.v[0], vh[1] / h - exact.v[1]];
            eu += w * (du[0] * du[0] + du[1] * du[1]);
            ev += w * (dv[0] * dv[0] + dv[1] * dv[1]);
            ep += w * (ph - exact.p) * (ph - exact.p);
        }
    }
    FieldErrors {
        err_u: eu.sqrt(),
        err_v: ev.sqrt(),
        err_p: ep.sqrt(),
    }
}

/// One benchmark solve: parameters, iteration history and solution quality.
#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub mode: SchwarzMode,
    pub degree: usize,
    pub n: usize,
    pub params: ScaledParameters,
    pub omega: f64,
    pub omega0: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub err_u: f64,
    pub err_v: f64,
    pub err_p: f64,
    pub mass_residual: f64,
}

/// Per-case solver configuration.
#[derive(Debug, Clone)]
pub struct CaseConfig {
    pub mode: SchwarzMode,
    pub rtol: f64,
    pub omega: f64,
    pub omega0: f64,
    /// Coarsest mesh of the multilevel hierarchy.
    pub coarsest_n: usize,
}

impl Default for CaseConfig {
    fn default() -> Self {
        CaseConfig {
            mode: SchwarzMode::Multiplicative,
            rtol: 1e-8,
            omega: schwarz::DEFAULT_OMEGA_ADDITIVE,
            omega0: 1.0,
            coarsest_n: 4,
        }
    }
}

/// Assembles and solves one manufactured-problem case.
///
/// The iteration count follows the benchmark stopping rule (reduction of
/// the starting residual by `rtol`); afterwards the solve is polished to
/// its round-off floor with extra uncounted GMRES rounds so the reported
/// field errors and the pointwise mass-balance audit measure the
/// discretization, not the leftover of the iteration.
pub fn run_case(
    params: &ScaledParameters,
    n: usize,
    config: &CaseConfig,
) -> Result<BenchmarkRun> {
    let problem = ManufacturedProblem::new(params);
    let hierarchy = MeshHierarchy::for_case(n, config)?;
    let space = build_spaces(hierarchy.finest(), params.degree);
    let blocks = forms::assemble_blocks(&space);
    let op = forms::assemble_mixed(&space, &blocks, params)?;
    let rhs = forms::assemble_rhs(&space, |x, y| problem.f(x, y), |x, y| problem.g(x, y));

    let precond = schwarz::build_preconditioner(
        &hierarchy.meshes,
        &space,
        &blocks,
        &op,
        &SchwarzConfig {
            mode: config.mode,
            omega: config.omega,
            omega0: config.omega0,
            ..Default::default()
        },
    )?;

    let projector = (params.cs_hat == 0.0).then(|| forms::mean_zero_projector(&space, &blocks));
    let mut b = rhs.vec.clone();
    if let Some(proj) = &projector {
        proj.project(&mut b);
    }

    let opts = GmresOptions {
        rtol: config.rtol,
        maxit: 200,
        x0: None,
    };
    let result = krylov::gmres(&op, Some(&precond), &b, &opts)?;
    let iterations = result.iterations;
    let residual_history = result.residual_history.clone();
    let converged = result.converged;

    // polish to the floating-point floor (uncounted)
    let mut solution = result.solution;
    if converged {
        polish(&op, &precond, &b, &mut solution);
    }
    if let Some(proj) = &projector {
        proj.project(&mut solution);
    }

    let errs = field_errors(&space, &problem, &solution);
    let mass_residual = oracle::mass_conservation_audit(&space, params, &solution, &rhs.g_h);
    Ok(BenchmarkRun {
        mode: config.mode,
        degree: params.degree,
        n,
        params: *params,
        omega: config.omega,
        omega0: config.omega0,
        iterations,
        residual_history,
        converged,
        err_u: errs.err_u,
        err_v: errs.err_v,
        err_p: errs.err_p,
        mass_residual,
    })
}

/// Nested meshes from the coarsest level up to the target size.
pub struct MeshHierarchy {
    pub meshes: Vec<Arc<Mesh>>,
}

impl MeshHierarchy {
    /// Two-level methods use [n/2, n]; the multilevel method grows the full
    /// chain from `coarsest_n`.
    pub fn for_case(n: usize, config: &CaseConfig) -> Result<Self> {
        match config.mode {
            SchwarzMode::Multilevel => Self::nested(config.coarsest_n, n),
            _ => {
                if n < 4 || n % 2 != 0 {
                    return Err(Error::InvalidMesh(format!(
                        "two-level runs need an even n >= 4, got {n}"
                    )));
                }
                Self::nested(n / 2, n)
            }
        }
    }

    pub fn nested(coarsest_n: usize, finest_n: usize) -> Result<Self> {
        if coarsest_n < 2 {
            return Err(Error::InvalidMesh(
                "the coarsest level needs vertex patches (n >= 2)".into(),
            ));
        }
        if finest_n < coarsest_n
            || finest_n % coarsest_n != 0
            || !(finest_n / coarsest_n).is_power_of_two()
        {
            return Err(Error::InvalidMesh(format!(
                "no nested refinement chain from n={coarsest_n} to n={finest_n}"
            )));
        }
        let mut meshes = vec![build_uniform_mesh(coarsest_n)?];
        while meshes.last().unwrap().n_per_side < finest_n {
            let next = crate::mesh::refine(meshes.last().unwrap());
            meshes.push(next);
        }
        Ok(MeshHierarchy { meshes })
    }

    pub fn finest(&self) -> &Arc<Mesh> {
        self.meshes.last().unwrap()
    }
}

/// Continues GMRES (uncounted) until the true residual stagnates at its
/// round-off floor.
fn polish(
    op: &dyn krylov::LinearOp,
    precond: &dyn krylov::LinearOp,
    b: &[f64],
    x: &mut Vec<f64>,
) {
    let n = b.len();
    let mut last = f64::INFINITY;
    for _ in 0..4 {
        let mut ax = vec![0.0; n];
        op.apply(x, &mut ax);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect();
        let rn = crate::linalg::norm2(&r);
        if rn == 0.0 || rn >= 0.2 * last {
            break;
        }
        last = rn;
        let opts = GmresOptions {
            rtol: 1e-8,
            maxit: 40,
            x0: None,
        };
        match krylov::gmres(op, Some(precond), &r, &opts) {
            Ok(res) => {
                for i in 0..n {
                    x[i] += res.solution[i];
                }
            }
            Err(_) => break,
        }
    }
}

/// Parameter sweep specification: the Cartesian product of the lists.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub lambda_hats: Vec<f64>,
    pub kappa_invs: Vec<f64>,
    pub cs_hats: Vec<f64>,
    pub ns: Vec<usize>,
    pub degree: usize,
    pub eta: Option<f64>,
    pub config: CaseConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_hats.is_empty()
            || self.kappa_invs.is_empty()
            || self.cs_hats.is_empty()
            || self.ns.is_empty()
        {
            return Err(Error::Config("empty parameter list in sweep".into()));
        }
        Ok(())
    }

    /// Deduplicated parameter points in deterministic order.
    pub fn points(&self) -> Vec<(f64, f64, f64, usize)> {
        let mut pts = Vec::new();
        for &n in &self.ns {
            for &l in &self.lambda_hats {
                for &k in &self.kappa_invs {
                    for &c in &self.cs_hats {
                        let pt = (l, k, c, n);
                        if !pts.contains(&pt) {
                            pts.push(pt);
                        }
                    }
                }
            }
        }
        pts
    }
}

/// Runs every case of the sweep; individual failures are recorded and the
/// sweep continues.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<BenchmarkRun>> {
    spec.validate()?;
    let mut out = Vec::new();
    for (l, kinv, cs, n) in spec.points() {
        let params = match spec.eta {
            Some(eta) => ScaledParameters::with_eta(l, kinv, cs, spec.degree, eta),
            None => ScaledParameters::new(l, kinv, cs, spec.degree),
        }?;
        match run_case(&params, n, &spec.config) {
            Ok(run) => out.push(run),
            Err(err) => {
                eprintln!(
                    "case (lambda_hat={l}, kappa_inv={kinv}, cs_hat={cs}, n={n}) failed: {err}"
                );
                out.push(BenchmarkRun {
                    mode: spec.config.mode,
                    degree: spec.degree,
                    n,
                    params: ScaledParameters::new(l, kinv, cs, spec.degree)?,
                    omega: spec.config.omega,
                    omega0: spec.config.omega0,
                    iterations: 0,
                    residual_history: Vec::new(),
                    converged: false,
                    err_u: f64::NAN,
                    err_v: f64::NAN,
                    err_p: f64::NAN,
                    mass_residual: f64::NAN,
                });
            }
        }
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "mode,k,h,lambda_hat,kappa_hat_inv,cs_hat,eta,omega,omega0,\
iterations,err_u_l2,err_v_l2,err_p_l2,mass_residual,converged";

pub fn csv_row(run: &BenchmarkRun) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        run.mode,
        run.degree,
        1.0 / run.n as f64,
        run.params.lambda_hat,
        run.params.kappa_hat_inv,
        run.params.cs_hat,
        run.params.eta,
        run.omega,
        run.omega0,
        run.iterations,
        run.err_u,
        run.err_v,
        run.err_p,
        run.mass_residual,
        run.converged
    )
}

pub fn to_csv(runs: &[BenchmarkRun]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for run in runs {
        out.push_str(&csv_row(run));
        out.push('\n');
    }
    out
}

/// Markdown table of iteration counts: rows over mesh size, columns over
/// (lambda_hat, kappa_hat_inv, cs_hat) triples, mirroring the benchmark
/// table layout.
pub fn to_markdown(runs: &[BenchmarkRun]) -> String {
    let mut cols: Vec<(f64, f64, f64)> = Vec::new();
    let mut rows: Vec<usize> = Vec::new();
    for r in runs {
        let c = (r.params.lambda_hat, r.params.kappa_hat_inv, r.params.cs_hat);
        if !cols.contains(&c) {
            cols.push(c);
        }
        if !rows.contains(&r.n) {
            rows.push(r.n);
        }
    }
    rows.sort_unstable();
    let mut md = String::from("| h |");
    for &(l, k, c) in &cols {
        let _ = write!(md, " l={l:.0e} kinv={k:.0e} cs={c:.0e} |");
    }
    md.push('\n');
    md.push_str("|---|");
    md.push_str(&"---|".repeat(cols.len()));
    md.push('\n');
    for &n in &rows {
        let _ = write!(md, "| 1/{n} |");
        for &(l, k, c) in &cols {
            let it = runs
                .iter()
                .find(|r| {
                    r.n == n
                        && r.params.lambda_hat == l
                        && r.params.kappa_hat_inv == k
                        && r.params.cs_hat == c
                })
                .map(|r| {
                    if r.converged {
                        r.iterations.to_string()
                    } else {
                        format!("{}*", r.iterations)
                    }
                })
                .unwrap_or_else(|| "-".into());
            let _ = write!(md, " {it} |");
        }
        md.push('\n');
    }
    md
}

/// Preset sweeps reproducing the published iteration tables.
pub fn table_preset(table: usize) -> Result<Vec<SweepSpec>> {
    let two_level = CaseConfig::default();
    let multilevel = CaseConfig {
        mode: SchwarzMode::Multilevel,
        ..Default::default()
    };
    let spec = |lambda_hats: Vec<f64>,
                kappa_invs: Vec<f64>,
                cs_hats: Vec<f64>,
                ns: Vec<usize>,
                degree: usize,
                config: CaseConfig| SweepSpec {
        lambda_hats,
        kappa_invs,
        cs_hats,
        ns,
        degree,
        eta: None,
        config,
    };
    match table {
        1 => Ok(vec![
            // left: two-level; the parameter pairs are the four columns
            spec(
                vec![1.0, 1e6],
                vec![1.0, 1e6],
                vec![0.0],
                vec![4, 8, 16, 32],
                2,
                two_level,
            ),
            // right: multilevel
            spec(
                vec![1.0, 1e6],
                vec![1.0, 1e6],
                vec![0.0],
                vec![16, 32, 64, 128],
                2,
                multilevel,
            ),
        ]),
        2 => {
            let grid = vec![1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4, 1e6];
            Ok(vec![spec(
                grid.clone(),
                grid,
                vec![0.0],
                vec![32],
                2,
                two_level,
            )])
        }
        3 => Ok(vec![spec(
            vec![1.0],
            vec![1.0],
            vec![0.0, 1e-10, 1e-4, 1e-2, 1.0, 1e2, 1e4, 1e6, 1e8],
            vec![32],
            2,
            two_level,
        )]),
        4 => Ok(vec![spec(
            vec![100.0],
            vec![1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4, 1e6],
            vec![0.0],
            vec![8, 16, 32, 64, 128],
            0,
            two_level,
        )]),
        _ => Err(Error::Config(format!(
            "unknown table preset {table}; expected 1..=4"
        ))),
    }
}
