//! Dense convex QP solver (Mehrotra predictor-corrector interior point).
//!
//! ```text
//! minimize    ½ zᵀ H z + cᵀ z
//! subject to  A z = b
//!             lo ≤ G z ≤ hi        (infinite bounds allowed)
//! ```

use crate::error::{invalid, Result};
use crate::numcore::{row_space, RealMatrix, RealVector};

/// Diagonal shift applied to both KKT blocks before factorization.
const KKT_REG: f64 = 1e-12;
/// Relative singular-value cutoff for dropping dependent equality rows.
const EQ_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: RealMatrix,
    pub linear: RealVector,
    pub eq_matrix: RealMatrix,
    pub eq_rhs: RealVector,
    pub ineq_matrix: RealMatrix,
    pub ineq_lo: RealVector,
    pub ineq_hi: RealVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

/// Residuals of the returned iterate, measured on the original problem.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct QpResiduals {
    pub eq: f64,
    pub ineq: f64,
    pub dual: f64,
    pub gap: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: RealVector,
    pub status: SolverStatus,
    pub residuals: QpResiduals,
    pub objective: f64,
}

impl QpProblem {
    /// Unconstrained problem with the given cost.
    pub fn unconstrained(hessian: RealMatrix, linear: RealVector) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            eq_matrix: RealMatrix::zeros(0, n),
            eq_rhs: RealVector::zeros(0),
            ineq_matrix: RealMatrix::zeros(0, n),
            ineq_lo: RealVector::zeros(0),
            ineq_hi: RealVector::zeros(0),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.hessian.shape() != (n, n) {
            return invalid("hessian must be n x n");
        }
        if self.eq_matrix.ncols() != n || self.eq_matrix.nrows() != self.eq_rhs.len() {
            return invalid("equality block dimensions are inconsistent");
        }
        let m = self.ineq_matrix.nrows();
        if self.ineq_matrix.ncols() != n || self.ineq_lo.len() != m || self.ineq_hi.len() != m {
            return invalid("inequality block dimensions are inconsistent");
        }
        let finite = |m: &RealMatrix| m.iter().all(|v| v.is_finite());
        if !finite(&self.hessian) || !finite(&self.eq_matrix) || !finite(&self.ineq_matrix) {
            return invalid("QP matrices contain non-finite entries");
        }
        if !self.linear.iter().chain(self.eq_rhs.iter()).all(|v| v.is_finite()) {
            return invalid("QP vectors contain non-finite entries");
        }
        if self.ineq_lo.iter().chain(self.ineq_hi.iter()).any(|v| v.is_nan()) {
            return invalid("inequality bounds contain NaN");
        }
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-12 * (1.0 + self.hessian.amax()) {
            return invalid("hessian must be symmetric");
        }
        Ok(())
    }

    pub fn objective(&self, z: &RealVector) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    /// Largest violation of `lo ≤ G z ≤ hi`.
    pub fn ineq_violation(&self, z: &RealVector) -> f64 {
        let gz = &self.ineq_matrix * z;
        (0..gz.len())
            .map(|i| (self.ineq_lo[i] - gz[i]).max(gz[i] - self.ineq_hi[i]).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn eq_residual(&self, z: &RealVector) -> f64 {
        if self.eq_rhs.is_empty() {
            return 0.0;
        }
        (&self.eq_matrix * z - &self.eq_rhs).amax()
    }
}

/// One-sided form `C z ≤ h` of the two-sided inequality block.
struct OneSided {
    c: RealMatrix,
    h: RealVector,
}

fn one_sided(qp: &QpProblem) -> OneSided {
    let n = qp.num_vars();
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    for i in 0..qp.ineq_matrix.nrows() {
        if qp.ineq_hi[i].is_finite() {
            rows.push((i, 1.0, qp.ineq_hi[i]));
        }
        if qp.ineq_lo[i].is_finite() {
            rows.push((i, -1.0, -qp.ineq_lo[i]));
        }
    }
    let mut c = RealMatrix::zeros(rows.len(), n);
    let mut h = RealVector::zeros(rows.len());
    for (k, (i, sign, bound)) in rows.into_iter().enumerate() {
        c.set_row(k, &(qp.ineq_matrix.row(i) * sign));
        h[k] = bound;
    }
    OneSided { c, h }
}

/// Full-row-rank equivalent of `A z = b`, or `None` if the equalities are inconsistent.
fn reduce_equalities(a: &RealMatrix, b: &RealVector) -> Option<(RealMatrix, RealVector)> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return Some((RealMatrix::zeros(0, n), RealVector::zeros(0)));
    }
    if a.amax() == 0.0 {
        return (b.amax() <= 1e-9 * (1.0 + b.amax())).then(|| (RealMatrix::zeros(0, n), RealVector::zeros(0)));
    }
    // independent rows A_s = Rᵀ Qᵀ, so A_s z = b_s  ⇔  Qᵀ z = R⁻ᵀ b_s
    let rs = row_space(a, EQ_RANK_TOL);
    let bs = RealVector::from_iterator(rs.rows.len(), rs.rows.iter().map(|&i| b[i]));
    let br = rs.r_factor.transpose().solve_lower_triangular(&bs)?;
    let ar = rs.basis.transpose();
    // dropped rows must be satisfied by the minimum-norm point of the kept ones
    let x = &rs.basis * &br;
    let miss = (a * x - b).norm();
    (miss <= 1e-8 * (1.0 + b.norm())).then_some((ar, br))
}

struct Kkt {
    exact: RealMatrix,
    n: usize,
    p: usize,
    /// Current diagonal shift and its factorization.
    factor: std::cell::RefCell<(f64, Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>)>,
}

impl Kkt {
    fn new(h: &RealMatrix, a: &RealMatrix, c: &RealMatrix, w: &RealVector) -> Self {
        let n = h.nrows();
        let p = a.nrows();
        let mut k = RealMatrix::zeros(n + p, n + p);
        let mut top = h.clone();
        if c.nrows() > 0 {
            let mut wc = c.clone();
            for (i, mut row) in wc.row_iter_mut().enumerate() {
                row *= w[i];
            }
            top += c.transpose() * wc;
        }
        k.view_mut((0, 0), (n, n)).copy_from(&top);
        k.view_mut((0, n), (n, p)).copy_from(&a.transpose());
        k.view_mut((n, 0), (p, n)).copy_from(a);
        Self {
            exact: k,
            n,
            p,
            factor: std::cell::RefCell::new((KKT_REG, None)),
        }
    }

    fn factor(&self, reg: f64) -> Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
        let mut kr = self.exact.clone();
        for i in 0..self.n {
            kr[(i, i)] += reg;
        }
        for i in self.n..self.n + self.p {
            kr[(i, i)] -= reg;
        }
        let lu = kr.lu();
        lu.is_invertible().then_some(lu)
    }

    /// Solves the unshifted system by iterative refinement on a shifted
    /// factorization. The shift starts at `KKT_REG` and grows by 100× while
    /// the refined residual stays above a relative 1e-8; the most accurate
    /// finite answer is returned.
    fn solve(&self, rhs: &RealVector) -> Option<(RealVector, RealVector)> {
        let scale = 1.0 + self.exact.amax();
        let mut best: Option<(f64, RealVector)> = None;
        let mut cell = self.factor.borrow_mut();
        loop {
            let reg = cell.0;
            if cell.1.is_none() {
                cell.1 = self.factor(reg);
            }
            if let Some(lu) = &cell.1 {
                if let Some(mut x) = lu.solve(rhs) {
                    let mut r = rhs - &self.exact * &x;
                    for _ in 0..3 {
                        if r.amax() <= 1e-15 * (1.0 + rhs.amax()) {
                            break;
                        }
                        match lu.solve(&r) {
                            Some(dx) => x += dx,
                            None => break,
                        }
                        r = rhs - &self.exact * &x;
                    }
                    if x.iter().all(|v| v.is_finite()) {
                        let err = r.amax() / (1.0 + rhs.amax() + (&self.exact * &x).amax());
                        if best.as_ref().is_none_or(|(e, _)| err < *e) {
                            best = Some((err, x));
                        }
                        if err <= 1e-8 {
                            break;
                        }
                    }
                }
            }
            if reg * 100.0 > 1e-4 * scale {
                break;
            }
            *cell = (reg * 100.0, None);
        }
        let (_, x) = best?;
        Some((x.rows(0, self.n).into_owned(), x.rows(self.n, self.p).into_owned()))
    }
}

fn max_step(v: &RealVector, dv: &RealVector) -> f64 {
    let mut alpha: f64 = 1.0;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}

/// Solves `qp` to relative tolerance `tol`.
///
/// When the interior-point iteration stalls or runs out of iterations, a
/// phase-1 problem decides between `Infeasible` and `MaxIter`.
pub fn solve_qp(qp: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution> {
    let sol = interior_point(qp, tol, max_iter)?;
    if sol.status != SolverStatus::MaxIter {
        return Ok(sol);
    }
    // a (nearly) feasible iterate already rules out infeasibility
    let scale = 1.0 + qp.eq_rhs.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if sol.residuals.eq <= 1e-6 * scale && sol.residuals.ineq <= 1e-6 * scale {
        return Ok(sol);
    }
    if !phase_one_feasible(qp, tol, max_iter)? {
        return Ok(QpSolution {
            status: SolverStatus::Infeasible,
            ..sol
        });
    }
    Ok(sol)
}

/// `false` only when a converged phase-1 solve proves a positive minimal violation.
/// Minimizes the total violation `1ᵀe` subject to `A z = b`, `C z − e ≤ h`, `e ≥ 0`.
fn phase_one_feasible(qp: &QpProblem, tol: f64, max_iter: usize) -> Result<bool> {
    let Some((a, b)) = reduce_equalities(&qp.eq_matrix, &qp.eq_rhs) else {
        return Ok(false);
    };
    let OneSided { c, h } = one_sided(qp);
    let (n, m) = (qp.num_vars(), c.nrows());
    if m == 0 {
        return Ok(true);
    }
    let nv = n + m;
    let mut hess = RealMatrix::zeros(nv, nv);
    for i in 0..n {
        hess[(i, i)] = 1e-10;
    }
    let mut lin = RealVector::zeros(nv);
    lin.rows_mut(n, m).fill(1.0);
    let mut eq = RealMatrix::zeros(a.nrows(), nv);
    eq.columns_mut(0, n).copy_from(&a);
    let mut g = RealMatrix::zeros(2 * m, nv);
    g.view_mut((0, 0), (m, n)).copy_from(&c);
    g.view_mut((0, n), (m, m)).copy_from(&(-RealMatrix::identity(m, m)));
    g.view_mut((m, n), (m, m)).copy_from(&RealMatrix::identity(m, m));
    let mut lo = RealVector::from_element(2 * m, f64::NEG_INFINITY);
    lo.rows_mut(m, m).fill(0.0);
    let mut hi = RealVector::from_element(2 * m, f64::INFINITY);
    hi.rows_mut(0, m).copy_from(&h);
    let p1 = QpProblem {
        hessian: hess,
        linear: lin,
        eq_matrix: eq,
        eq_rhs: b,
        ineq_matrix: g,
        ineq_lo: lo,
        ineq_hi: hi,
    };
    let sol = interior_point(&p1, tol, max_iter)?;
    if sol.status != SolverStatus::Optimal {
        // undecided: report the original failure rather than guess
        return Ok(true);
    }
    let violation: f64 = sol.z.rows(n, m).iter().map(|v| v.max(0.0)).sum();
    let scale = 1.0 + h.amax();
    Ok(violation <= 1e-6 * scale)
}

fn interior_point(qp: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.num_vars();
    let infeasible = |z: RealVector| -> QpSolution {
        QpSolution {
            residuals: QpResiduals {
                eq: qp.eq_residual(&z),
                ineq: qp.ineq_violation(&z),
                ..Default::default()
            },
            objective: qp.objective(&z),
            z,
            status: SolverStatus::Infeasible,
        }
    };
    if (0..qp.ineq_lo.len()).any(|i| qp.ineq_lo[i] > qp.ineq_hi[i]) {
        return Ok(infeasible(RealVector::zeros(n)));
    }
    let Some((a, b)) = reduce_equalities(&qp.eq_matrix, &qp.eq_rhs) else {
        return Ok(infeasible(RealVector::zeros(n)));
    };
    let OneSided { c, h } = one_sided(qp);
    let (p, m) = (a.nrows(), c.nrows());
    let hm = &qp.hessian;
    let cl = &qp.linear;

    // initial point from the least-squares-regularized KKT system
    let ones = RealVector::from_element(m, 1.0);
    let kkt0 = Kkt::new(hm, &a, &c, &ones);
    let mut rhs0 = RealVector::zeros(n + p);
    rhs0.rows_mut(0, n).copy_from(&(-cl + c.transpose() * &h));
    rhs0.rows_mut(n, p).copy_from(&b);
    let Some((mut z, mut y)) = kkt0.solve(&rhs0) else {
        return Ok(infeasible(RealVector::zeros(n)));
    };
    let mut s = &h - &c * &z;
    let mut lam = -s.clone();
    if m > 0 {
        let ap = -s.min();
        if ap >= 0.0 {
            s.add_scalar_mut(1.0 + ap);
        }
        let ad = -lam.min();
        if ad >= 0.0 {
            lam.add_scalar_mut(1.0 + ad);
        }
    }

    let bscale = 1.0 + b.amax();
    let hscale = 1.0 + if m > 0 { h.amax() } else { 0.0 };
    let mut status = SolverStatus::MaxIter;
    let mut iters = 0;
    let mut last = (0.0, 0.0, 0.0, 0.0);
    let mut short_steps = 0;

    for it in 0..=max_iter {
        iters = it;
        let hz = hm * &z;
        let aty = a.transpose() * &y;
        let ctl = c.transpose() * &lam;
        let rd = &hz + cl + &aty + &ctl;
        let rp = &a * &z - &b;
        let ri = &c * &z + &s - &h;
        let gap = s.dot(&lam);
        let obj = 0.5 * z.dot(&hz) + cl.dot(&z);
        let dscale = 1.0
            + [cl.amax(), hz.amax(), aty.amax(), ctl.amax()]
                .into_iter()
                .fold(0.0, f64::max);
        let rp_n = if p > 0 { rp.amax() } else { 0.0 };
        let ri_n = if m > 0 { ri.amax() } else { 0.0 };
        let rd_n = rd.amax();
        last = (rp_n, ri_n, rd_n, gap);
        if rp_n <= tol * bscale && ri_n <= tol * hscale && rd_n <= tol * dscale && gap <= tol * (1.0 + obj.abs()) {
            status = SolverStatus::Optimal;
            break;
        }
        if it == max_iter {
            break;
        }

        // Farkas certificate: Aᵀy + Cᵀλ ≈ 0, λ ≥ 0, bᵀy + hᵀλ < 0
        let mult = y.amax().max(if m > 0 { lam.amax() } else { 0.0 });
        if mult > 1e6 * dscale {
            let cert = b.dot(&y) + h.dot(&lam);
            if cert < 0.0 && (&aty + &ctl).amax() <= 1e-6 * cert.abs() {
                status = SolverStatus::Infeasible;
                break;
            }
        }

        let w = RealVector::from_fn(m, |i, _| lam[i] / s[i]);
        let kkt = Kkt::new(hm, &a, &c, &w);
        let newton = |rc: &RealVector| -> Option<(RealVector, RealVector, RealVector, RealVector)> {
            // dλ = S⁻¹(Λ rᵢ − r_c) + W C dz ; ds = −rᵢ − C dz
            let t = RealVector::from_fn(m, |i, _| (lam[i] * ri[i] - rc[i]) / s[i]);
            let mut rhs = RealVector::zeros(n + p);
            rhs.rows_mut(0, n).copy_from(&(-&rd - c.transpose() * &t));
            rhs.rows_mut(n, p).copy_from(&(-&rp));
            let (dz, dy) = kkt.solve(&rhs)?;
            let cdz = &c * &dz;
            let dl = t + w.component_mul(&cdz);
            let ds = -&ri - cdz;
            Some((dz, dy, ds, dl))
        };

        let mu = if m > 0 { gap / m as f64 } else { 0.0 };
        let rc_aff = s.component_mul(&lam);
        let Some((dz_a, dy_a, ds_a, dl_a)) = newton(&rc_aff) else {
            break;
        };
        let (dz, dy, ds, dl) = if m > 0 {
            let alpha_aff = max_step(&s, &ds_a).min(max_step(&lam, &dl_a));
            let mu_aff = (&s + &ds_a * alpha_aff).dot(&(&lam + &dl_a * alpha_aff)) / m as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let rc = rc_aff + ds_a.component_mul(&dl_a) - RealVector::from_element(m, sigma * mu);
            match newton(&rc) {
                Some(step) => step,
                None => break,
            }
        } else {
            (dz_a, dy_a, ds_a, dl_a)
        };
        let alpha = if m > 0 {
            (0.99 * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0)
        } else {
            1.0
        };
        short_steps = if alpha < 1e-8 { short_steps + 1 } else { 0 };
        if short_steps >= 5 {
            break;
        }
        z += &dz * alpha;
        y += &dy * alpha;
        s += &ds * alpha;
        lam += &dl * alpha;
    }

    let (_, _, rd_n, gap) = last;
    Ok(QpSolution {
        residuals: QpResiduals {
            eq: qp.eq_residual(&z),
            ineq: qp.ineq_violation(&z),
            dual: rd_n,
            gap,
            iterations: iters,
        },
        objective: qp.objective(&z),
        z,
        status,
    })
}
