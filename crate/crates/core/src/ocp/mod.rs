//! Finite-horizon data-driven optimal control problems.
//!
//! Both the Hankel-based and the frequency-based predictors lead to the same
//! problem shape: the stacked vector `(ū; u; ȳ + σ; y)` must equal the data
//! matrix times a real combination vector `g`, the stage cost is quadratic in
//! `(u, y)`, and `λ_g‖g‖₁ + λ_σ‖σ‖₁` regularizes noisy data. The ℓ1 terms are
//! handled through epigraph variables so the result is a plain convex QP.

mod qp;

pub use qp::{solve_qp, QpProblem, QpResiduals, QpSolution, SolverStatus};

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::freqdomain::{DataEquations, DataForm};
use crate::numcore::{row_space, RealMatrix, RealVector};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct OcpConfig {
    /// Prediction horizon `T`.
    pub horizon: usize,
    /// Length `T̄` of the past input/output window.
    pub past: usize,
    pub q: RealMatrix,
    pub r: RealMatrix,
    pub lambda_g: f64,
    pub lambda_sigma: f64,
    /// Per-channel `[lo, hi]` admissible inputs; infinite bounds disable a side.
    pub u_box: Vec<(f64, f64)>,
    pub y_box: Vec<(f64, f64)>,
    /// Drops `σ` and the `λ_g` term (noise-free data).
    pub nominal: bool,
}

impl OcpConfig {
    /// Unconstrained nominal configuration with the given weights.
    pub fn nominal(horizon: usize, past: usize, q: RealMatrix, r: RealMatrix) -> Self {
        let (nu, ny) = (r.nrows(), q.nrows());
        Self {
            horizon,
            past,
            q,
            r,
            lambda_g: 0.0,
            lambda_sigma: 0.0,
            u_box: vec![(f64::NEG_INFINITY, f64::INFINITY); nu],
            y_box: vec![(f64::NEG_INFINITY, f64::INFINITY); ny],
            nominal: true,
        }
    }

    pub fn nu(&self) -> usize {
        self.r.nrows()
    }

    pub fn ny(&self) -> usize {
        self.q.nrows()
    }

    pub fn depth(&self) -> usize {
        self.horizon + self.past
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.past == 0 {
            return invalid("horizon and past window must both be at least 1");
        }
        for (name, w) in [("Q", &self.q), ("R", &self.r)] {
            if !w.is_square() || w.nrows() == 0 {
                return invalid(format!("{name} must be square and non-empty"));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return invalid(format!("{name} contains non-finite entries"));
            }
            if (w - w.transpose()).amax() > 1e-12 * (1.0 + w.amax()) {
                return invalid(format!("{name} must be symmetric"));
            }
            let min_eig = w.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-12 * (1.0 + w.amax()) {
                return invalid(format!("{name} must be positive semidefinite"));
            }
        }
        if !(self.lambda_g >= 0.0 && self.lambda_g.is_finite())
            || !(self.lambda_sigma >= 0.0 && self.lambda_sigma.is_finite())
        {
            return invalid("regularization weights must be finite and non-negative");
        }
        if self.u_box.len() != self.nu() || self.y_box.len() != self.ny() {
            return invalid("one box interval per input and output channel required");
        }
        for &(lo, hi) in self.u_box.iter().chain(&self.y_box) {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return invalid(format!("box interval [{lo}, {hi}] is empty"));
            }
        }
        Ok(())
    }

    /// `Σ yᵀQy + uᵀRu` over a stacked trajectory.
    pub fn stage_cost(&self, u: &[f64], y: &[f64]) -> f64 {
        let quad = |w: &RealMatrix, v: &[f64]| {
            let n = w.nrows();
            v.chunks(n)
                .map(|c| {
                    let x = RealVector::from_column_slice(c);
                    x.dot(&(w * &x))
                })
                .sum::<f64>()
        };
        quad(&self.q, y) + quad(&self.r, u)
    }
}

/// One instance of the finite-horizon problem at a given time.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpProblem {
    pub eqs: DataEquations,
    pub u_past: RealVector,
    pub y_past: RealVector,
    pub config: OcpConfig,
}

/// Assembles the problem and checks every dimension.
pub fn build_ocp(eqs: &DataEquations, u_past: &[f64], y_past: &[f64], config: &OcpConfig) -> Result<OcpProblem> {
    config.validate()?;
    if eqs.depth() != config.depth() {
        return invalid(format!(
            "data depth {} differs from T̄ + T = {}",
            eqs.depth(),
            config.depth()
        ));
    }
    if eqs.nu() != config.nu() || eqs.ny() != config.ny() {
        return invalid("data channel counts do not match the weights");
    }
    if u_past.len() != config.past * config.nu() || y_past.len() != config.past * config.ny() {
        return invalid("past windows must hold T̄ samples of every channel");
    }
    if u_past.iter().chain(y_past).any(|v| !v.is_finite()) {
        return invalid("past windows contain non-finite samples");
    }
    Ok(OcpProblem {
        eqs: eqs.clone(),
        u_past: RealVector::from_column_slice(u_past),
        y_past: RealVector::from_column_slice(y_past),
        config: config.clone(),
    })
}

/// Offsets of each variable group inside the QP vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VarLayout {
    pub u: usize,
    pub y: usize,
    pub g: usize,
    pub sigma: Option<usize>,
    pub t_g: Option<usize>,
    pub t_sigma: Option<usize>,
    pub n_u: usize,
    pub n_y: usize,
    pub n_g: usize,
    pub n_sigma: usize,
    pub total: usize,
}

impl OcpProblem {
    pub fn equality_rows(&self) -> usize {
        self.eqs.lhs_dim()
    }

    pub fn layout(&self) -> VarLayout {
        self.layout_with(self.eqs.width())
    }

    fn layout_with(&self, n_g: usize) -> VarLayout {
        let c = &self.config;
        let n_u = c.horizon * c.nu();
        let n_y = c.horizon * c.ny();
        let n_sigma = c.past * c.ny();
        let mut next = 0;
        let mut take = |len: usize| {
            let at = next;
            next += len;
            at
        };
        let u = take(n_u);
        let y = take(n_y);
        let g = take(n_g);
        let sigma = (!c.nominal).then(|| take(n_sigma));
        let t_g = (!c.nominal && c.lambda_g > 0.0).then(|| take(n_g));
        let t_sigma = (!c.nominal && c.lambda_sigma > 0.0).then(|| take(n_sigma));
        VarLayout {
            u,
            y,
            g,
            sigma,
            t_g,
            t_sigma,
            n_u,
            n_y,
            n_g,
            n_sigma,
            total: next,
        }
    }

    /// Epigraph reformulation as a QP.
    pub fn to_qp(&self) -> (QpProblem, VarLayout) {
        self.assemble(self.eqs.matrix())
    }

    /// QP with `d` standing in for the data matrix (same rows, any width).
    fn assemble(&self, d: &RealMatrix) -> (QpProblem, VarLayout) {
        let lay = self.layout_with(d.ncols());
        let c = &self.config;
        let (nu, ny, t, tb) = (c.nu(), c.ny(), c.horizon, c.past);
        let n = lay.total;

        let mut hess = RealMatrix::zeros(n, n);
        for i in 0..t {
            hess.view_mut((lay.u + i * nu, lay.u + i * nu), (nu, nu))
                .copy_from(&(&c.r * 2.0));
            hess.view_mut((lay.y + i * ny, lay.y + i * ny), (ny, ny))
                .copy_from(&(&c.q * 2.0));
        }
        let mut lin = RealVector::zeros(n);
        if let Some(at) = lay.t_g {
            lin.rows_mut(at, lay.n_g).fill(c.lambda_g);
        }
        if let Some(at) = lay.t_sigma {
            lin.rows_mut(at, lay.n_sigma).fill(c.lambda_sigma);
        }

        // rows: past u | future u | past y | future y, each equal to its slice of D g
        let rows = self.eqs.lhs_dim();
        let (up, uf, yp) = (tb * nu, t * nu, tb * ny);
        let mut eq = RealMatrix::zeros(rows, n);
        let mut rhs = RealVector::zeros(rows);
        eq.view_mut((0, lay.g), (rows, lay.n_g)).copy_from(d);
        rhs.rows_mut(0, up).copy_from(&self.u_past);
        for i in 0..uf {
            eq[(up + i, lay.u + i)] = -1.0;
        }
        rhs.rows_mut(up + uf, yp).copy_from(&self.y_past);
        if let Some(at) = lay.sigma {
            for i in 0..yp {
                eq[(up + uf + i, at + i)] = -1.0;
            }
        }
        for i in 0..t * ny {
            eq[(up + uf + yp + i, lay.y + i)] = -1.0;
        }

        let mut g_rows: Vec<(Vec<(usize, f64)>, f64, f64)> = Vec::new();
        for i in 0..t {
            for (ch, &(lo, hi)) in c.u_box.iter().enumerate() {
                if lo.is_finite() || hi.is_finite() {
                    g_rows.push((vec![(lay.u + i * nu + ch, 1.0)], lo, hi));
                }
            }
            for (ch, &(lo, hi)) in c.y_box.iter().enumerate() {
                if lo.is_finite() || hi.is_finite() {
                    g_rows.push((vec![(lay.y + i * ny + ch, 1.0)], lo, hi));
                }
            }
        }
        let mut epigraph = |var: usize, aux: usize, len: usize| {
            for i in 0..len {
                // −t ≤ v ≤ t as v − t ≤ 0 and v + t ≥ 0
                g_rows.push((vec![(var + i, 1.0), (aux + i, -1.0)], f64::NEG_INFINITY, 0.0));
                g_rows.push((vec![(var + i, 1.0), (aux + i, 1.0)], 0.0, f64::INFINITY));
            }
        };
        if let Some(at) = lay.t_g {
            epigraph(lay.g, at, lay.n_g);
        }
        if let (Some(s), Some(at)) = (lay.sigma, lay.t_sigma) {
            epigraph(s, at, lay.n_sigma);
        }
        let m = g_rows.len();
        let mut gm = RealMatrix::zeros(m, n);
        let mut lo = RealVector::zeros(m);
        let mut hi = RealVector::zeros(m);
        for (k, (entries, l, h)) in g_rows.into_iter().enumerate() {
            for (j, v) in entries {
                gm[(k, j)] = v;
            }
            lo[k] = l;
            hi[k] = h;
        }
        let qp = QpProblem {
            hessian: hess,
            linear: lin,
            eq_matrix: eq,
            eq_rhs: rhs,
            ineq_matrix: gm,
            ineq_lo: lo,
            ineq_hi: hi,
        };
        (qp, lay)
    }

    /// Decision-variable count of `g`; depends only on the data form and size.
    pub fn g_dim(&self) -> usize {
        self.eqs.width()
    }

    pub fn form(&self) -> DataForm {
        self.eqs.form()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OcpSolution {
    /// `T × n_u`, one row per predicted step.
    pub u_future: Vec<Vec<f64>>,
    pub y_future: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Stage cost plus ℓ1 penalties at the returned point.
    pub objective: f64,
    pub solver_status: SolverStatus,
    pub residuals: QpResiduals,
    /// Epigraph variables, when present (diagnostics only).
    #[serde(skip)]
    pub t_g: Vec<f64>,
    #[serde(skip)]
    pub t_sigma: Vec<f64>,
}

impl OcpSolution {
    pub fn first_input(&self) -> &[f64] {
        &self.u_future[0]
    }

    pub fn u_stacked(&self) -> Vec<f64> {
        self.u_future.concat()
    }

    pub fn y_stacked(&self) -> Vec<f64> {
        self.y_future.concat()
    }
}

pub fn solve_ocp(p: &OcpProblem, tol: f64) -> Result<OcpSolution> {
    solve_ocp_with(p, tol, DEFAULT_MAX_ITER)
}

/// Relative singular-value cutoff for the row space of the data matrix.
const DATA_RANK_TOL: f64 = 1e-10;

/// Solves the OCP; `g` is returned in full even when it is optimized in a
/// reduced basis.
///
/// Without an ℓ1 price on `g`, only `D g` matters, and the null space of `D`
/// (large for exact Hankel data) would leave `g` free to drift in the solver.
/// In that case `g = Q h` with `Q` an orthonormal basis of the numerical row
/// space of `D`, which gives the same `(u, y)` and the minimum-norm `g`.
pub fn solve_ocp_with(p: &OcpProblem, tol: f64, max_iter: usize) -> Result<OcpSolution> {
    let c = &p.config;
    let g_priced = !c.nominal && c.lambda_g > 0.0;
    let (qp, lay, basis) = if g_priced {
        let (qp, lay) = p.to_qp();
        (qp, lay, None)
    } else {
        let dm = p.eqs.matrix();
        let basis = row_space(dm, DATA_RANK_TOL).basis;
        let d = dm * &basis;
        let (qp, lay) = p.assemble(&d);
        (qp, lay, Some(basis))
    };
    let sol = solve_qp(&qp, tol, max_iter)?;
    let z = &sol.z;
    let slice = |at: usize, len: usize| z.rows(at, len).iter().copied().collect::<Vec<f64>>();
    let rows = |flat: Vec<f64>, width: usize| flat.chunks(width).map(<[f64]>::to_vec).collect::<Vec<_>>();
    let u = slice(lay.u, lay.n_u);
    let y = slice(lay.y, lay.n_y);
    let g = match &basis {
        Some(b) => (b * z.rows(lay.g, lay.n_g)).iter().copied().collect(),
        None => slice(lay.g, lay.n_g),
    };
    let sigma = lay
        .sigma
        .map(|at| slice(at, lay.n_sigma))
        .unwrap_or_else(|| vec![0.0; lay.n_sigma]);
    let l1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    let mut objective = c.stage_cost(&u, &y);
    if !c.nominal {
        objective += c.lambda_g * l1(&g) + c.lambda_sigma * l1(&sigma);
    }
    Ok(OcpSolution {
        u_future: rows(u, c.nu()),
        y_future: rows(y, c.ny()),
        t_g: lay.t_g.map(|at| slice(at, lay.n_g)).unwrap_or_default(),
        t_sigma: lay.t_sigma.map(|at| slice(at, lay.n_sigma)).unwrap_or_default(),
        g,
        sigma,
        objective,
        solver_status: sol.status,
        residuals: sol.residuals,
    })
}

/// Plain-data view of an [`OcpProblem`] for debugging dumps.
#[derive(Debug, Clone, Serialize)]
pub struct OcpDump {
    pub form: String,
    pub horizon: usize,
    pub past: usize,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub lambda_g: f64,
    pub lambda_sigma: f64,
    pub u_box: Vec<[f64; 2]>,
    pub y_box: Vec<[f64; 2]>,
    pub nominal: bool,
    pub u_past: Vec<f64>,
    pub y_past: Vec<f64>,
    pub layout: VarLayout,
    pub data_matrix: Vec<Vec<f64>>,
}

fn matrix_rows(m: &RealMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl From<&OcpProblem> for OcpDump {
    fn from(p: &OcpProblem) -> Self {
        let c = &p.config;
        Self {
            form: format!("{:?}", p.eqs.form()).to_lowercase(),
            horizon: c.horizon,
            past: c.past,
            q: matrix_rows(&c.q),
            r: matrix_rows(&c.r),
            lambda_g: c.lambda_g,
            lambda_sigma: c.lambda_sigma,
            u_box: c.u_box.iter().map(|&(a, b)| [a, b]).collect(),
            y_box: c.y_box.iter().map(|&(a, b)| [a, b]).collect(),
            nominal: c.nominal,
            u_past: p.u_past.iter().copied().collect(),
            y_past: p.y_past.iter().copied().collect(),
            layout: p.layout(),
            data_matrix: matrix_rows(p.eqs.matrix()),
        }
    }
}
