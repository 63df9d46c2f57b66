//! Receding-horizon simulation of data-driven and model-based predictive
//! controllers, and the Monte Carlo study over FRF data sets.

use std::io::Write;

use nalgebra::DVector;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::freqdomain::{freq_data_equations, DataEquations};
use crate::frf::{estimate_frf, ClosedLoopExperiment};
use crate::lti::StateSpace;
use crate::numcore::{least_squares, RealMatrix, RealVector};
use crate::ocp::{build_ocp, solve_ocp, solve_qp, OcpConfig, QpProblem, SolverStatus, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::signals::{csv_err, fmt_f64, MultisineSpec, TimeSeries};

/// How the first samples, which seed the past window, are generated.
#[derive(Debug, Clone, PartialEq)]
pub enum Warmup {
    /// Inputs applied open-loop.
    OpenLoop(TimeSeries),
    /// A controller acting on the measured output, `u = d + K(−y)`, with `d` injected.
    Feedback {
        controller: StateSpace,
        injected: TimeSeries,
    },
}

impl Warmup {
    pub fn len(&self) -> usize {
        match self {
            Warmup::OpenLoop(u) => u.len(),
            Warmup::Feedback { injected, .. } => injected.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Settings shared by the data-driven and model-based loops.
#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub ocp: OcpConfig,
    pub sim_length: usize,
    pub warmup: Warmup,
    /// Plant state at the start of the warmup.
    pub x0: Option<RealVector>,
    pub noise_std: f64,
    pub rng_seed: u64,
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct RhcConfig {
    pub common: LoopConfig,
    pub eqs: DataEquations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhcResult {
    /// Inputs and measured outputs of the controlled phase.
    pub u: TimeSeries,
    pub y: TimeSeries,
    pub per_step_status: Vec<SolverStatus>,
    pub cost_j: f64,
    pub warmup_u: TimeSeries,
    pub warmup_y: TimeSeries,
}

impl RhcResult {
    /// CSV with columns `step, u…, y…, status`; warmup samples get negative step indices.
    pub fn write_csv<W: Write>(&self, w: W, include_warmup: bool) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["step".to_string()];
        header.extend((0..self.u.channels()).map(|i| {
            if self.u.channels() == 1 {
                "u".into()
            } else {
                format!("u{i}")
            }
        }));
        header.extend((0..self.y.channels()).map(|i| {
            if self.y.channels() == 1 {
                "y".into()
            } else {
                format!("y{i}")
            }
        }));
        header.push("status".into());
        wr.write_record(&header).map_err(csv_err)?;
        let mut emit = |step: i64, u: Vec<f64>, y: Vec<f64>, status: &str| -> Result<()> {
            let mut row = vec![step.to_string()];
            row.extend(u.into_iter().map(fmt_f64));
            row.extend(y.into_iter().map(fmt_f64));
            row.push(status.to_string());
            wr.write_record(&row).map_err(csv_err)
        };
        if include_warmup {
            let w = self.warmup_u.len() as i64;
            for k in 0..self.warmup_u.len() {
                emit(k as i64 - w, self.warmup_u.sample(k), self.warmup_y.sample(k), "warmup")?;
            }
        }
        for k in 0..self.u.len() {
            let st = match self.per_step_status[k] {
                SolverStatus::Optimal => "optimal",
                SolverStatus::MaxIter => "max_iter",
                SolverStatus::Infeasible => "infeasible",
            };
            emit(k as i64, self.u.sample(k), self.y.sample(k), st)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Computes the next input from the past window.
trait Policy {
    fn act(&mut self, u_past: &[f64], y_past: &[f64]) -> Result<(Vec<f64>, SolverStatus)>;
}

struct DataDriven<'a> {
    eqs: &'a DataEquations,
    ocp: &'a OcpConfig,
    tol: f64,
}

impl Policy for DataDriven<'_> {
    fn act(&mut self, u_past: &[f64], y_past: &[f64]) -> Result<(Vec<f64>, SolverStatus)> {
        let p = build_ocp(self.eqs, u_past, y_past, self.ocp)?;
        let sol = solve_ocp(&p, self.tol)?;
        Ok((sol.first_input().to_vec(), sol.solver_status))
    }
}

/// Exact-model MPC with the initial state fitted to the past window by least squares.
struct ModelBased<'a> {
    plant: &'a StateSpace,
    ocp: &'a OcpConfig,
    tol: f64,
    obs_past: RealMatrix,
    toe_past: RealMatrix,
    obs_future: RealMatrix,
    toe_future: RealMatrix,
}

impl<'a> ModelBased<'a> {
    fn new(plant: &'a StateSpace, ocp: &'a OcpConfig, tol: f64) -> Self {
        Self {
            plant,
            ocp,
            tol,
            obs_past: plant.observability(ocp.past),
            toe_past: plant.toeplitz(ocp.past),
            obs_future: plant.observability(ocp.horizon),
            toe_future: plant.toeplitz(ocp.horizon),
        }
    }

    fn current_state(&self, u_past: &[f64], y_past: &[f64]) -> Result<RealVector> {
        let up = RealVector::from_column_slice(u_past);
        let yp = RealVector::from_column_slice(y_past);
        let x_start = least_squares(&self.obs_past, &(yp - &self.toe_past * &up))?;
        let nu = self.plant.nu();
        let mut x = x_start;
        for k in 0..self.ocp.past {
            let uk = up.rows(k * nu, nu).into_owned();
            x = self.plant.step(&x, &uk).0;
        }
        Ok(x)
    }
}

impl Policy for ModelBased<'_> {
    fn act(&mut self, u_past: &[f64], y_past: &[f64]) -> Result<(Vec<f64>, SolverStatus)> {
        let x = self.current_state(u_past, y_past)?;
        let c = self.ocp;
        let (nu, ny, t) = (c.nu(), c.ny(), c.horizon);
        let (n_u, n_y) = (t * nu, t * ny);
        let n = n_u + n_y;
        let mut hess = RealMatrix::zeros(n, n);
        for i in 0..t {
            hess.view_mut((i * nu, i * nu), (nu, nu)).copy_from(&(&c.r * 2.0));
            hess.view_mut((n_u + i * ny, n_u + i * ny), (ny, ny))
                .copy_from(&(&c.q * 2.0));
        }
        // y − Γ u = O x
        let mut eq = RealMatrix::zeros(n_y, n);
        eq.view_mut((0, 0), (n_y, n_u)).copy_from(&(-&self.toe_future));
        eq.view_mut((0, n_u), (n_y, n_y))
            .copy_from(&RealMatrix::identity(n_y, n_y));
        let rhs = &self.obs_future * &x;
        let mut rows: Vec<(usize, f64, f64)> = Vec::new();
        for i in 0..t {
            for (ch, &(lo, hi)) in c.u_box.iter().enumerate() {
                if lo.is_finite() || hi.is_finite() {
                    rows.push((i * nu + ch, lo, hi));
                }
            }
            for (ch, &(lo, hi)) in c.y_box.iter().enumerate() {
                if lo.is_finite() || hi.is_finite() {
                    rows.push((n_u + i * ny + ch, lo, hi));
                }
            }
        }
        let mut g = RealMatrix::zeros(rows.len(), n);
        let mut lo = RealVector::zeros(rows.len());
        let mut hi = RealVector::zeros(rows.len());
        for (k, (j, l, h)) in rows.into_iter().enumerate() {
            g[(k, j)] = 1.0;
            lo[k] = l;
            hi[k] = h;
        }
        let qp = QpProblem {
            hessian: hess,
            linear: RealVector::zeros(n),
            eq_matrix: eq,
            eq_rhs: rhs,
            ineq_matrix: g,
            ineq_lo: lo,
            ineq_hi: hi,
        };
        let sol = solve_qp(&qp, self.tol, DEFAULT_MAX_ITER)?;
        Ok((sol.z.rows(0, nu).iter().copied().collect(), sol.status))
    }
}

struct NoiseSource {
    normal: Normal<f64>,
    rng: ChaCha8Rng,
    std: f64,
    ny: usize,
}

impl NoiseSource {
    fn new(std: f64, seed: u64, ny: usize) -> Result<Self> {
        if !(std >= 0.0) || !std.is_finite() {
            return invalid("noise standard deviation must be finite and non-negative");
        }
        Ok(Self {
            normal: Normal::new(0.0, std).map_err(|e| Error::InvalidInput(e.to_string()))?,
            rng: ChaCha8Rng::seed_from_u64(seed),
            std,
            ny,
        })
    }

    fn draw(&mut self) -> RealVector {
        if self.std > 0.0 {
            DVector::from_fn(self.ny, |_, _| self.normal.sample(&mut self.rng))
        } else {
            DVector::zeros(self.ny)
        }
    }
}

/// Runs the warmup phase; returns the stacked inputs, measured outputs and the plant state after it.
fn warmup(plant: &StateSpace, cfg: &LoopConfig, noise: &mut NoiseSource) -> Result<(Vec<f64>, Vec<f64>, RealVector)> {
    let (nu, ny) = (plant.nu(), plant.ny());
    let mut x = match &cfg.x0 {
        Some(x0) if x0.len() != plant.nx() => return invalid("initial state has the wrong dimension"),
        Some(x0) => x0.clone(),
        None => RealVector::zeros(plant.nx()),
    };
    let mut us: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let w = cfg.warmup.len();
    match &cfg.warmup {
        Warmup::OpenLoop(inputs) => {
            if inputs.channels() != nu {
                return invalid("warmup input channel count does not match the plant");
            }
            for k in 0..w {
                let uk = DVector::from_vec(inputs.sample(k));
                let (xn, yk) = plant.step(&x, &uk);
                let yk = yk + noise.draw();
                us.extend(uk.iter());
                ys.extend(yk.iter());
                x = xn;
            }
        }
        Warmup::Feedback { controller, injected } => {
            if injected.channels() != nu {
                return invalid("injected warmup signal channel count does not match the plant");
            }
            let cl = crate::lti::closed_loop(plant, controller)?;
            let mut xc = x.clone().resize_vertically(cl.nx(), 0.0);
            for k in 0..w {
                let mut inp = DVector::zeros(nu + ny);
                inp.rows_mut(0, nu).copy_from(&DVector::from_vec(injected.sample(k)));
                inp.rows_mut(nu, ny).copy_from(&noise.draw());
                let (xn, out) = cl.step(&xc, &inp);
                us.extend(out.rows(0, nu).iter());
                ys.extend(out.rows(nu, ny).iter());
                xc = xn;
            }
            x = xc.rows(0, plant.nx()).into_owned();
        }
    }
    Ok((us, ys, x))
}

fn series(v: &[f64], n: usize, prefix: &str) -> Result<TimeSeries> {
    let rows = v.len() / n;
    let names = (0..n)
        .map(|i| {
            if n == 1 {
                prefix.to_string()
            } else {
                format!("{prefix}{i}")
            }
        })
        .collect();
    TimeSeries::with_names(RealMatrix::from_row_slice(rows, n, v), names)
}

/// The warmup samples `(u, y)` a loop with this configuration starts from.
/// Identical to `RhcResult::warmup_u` / `warmup_y` of any run with `cfg`.
pub fn warmup_trajectory(plant: &StateSpace, cfg: &LoopConfig) -> Result<(TimeSeries, TimeSeries)> {
    let mut noise = NoiseSource::new(cfg.noise_std, cfg.rng_seed, plant.ny())?;
    let (us, ys, _) = warmup(plant, cfg, &mut noise)?;
    Ok((series(&us, plant.nu(), "u")?, series(&ys, plant.ny(), "y")?))
}

fn run_loop(plant: &StateSpace, cfg: &LoopConfig, policy: &mut dyn Policy) -> Result<RhcResult> {
    let ocp = &cfg.ocp;
    ocp.validate()?;
    let (nu, ny, tb) = (plant.nu(), plant.ny(), ocp.past);
    if ocp.nu() != nu || ocp.ny() != ny {
        return invalid("plant dimensions do not match the weights");
    }
    if cfg.sim_length == 0 {
        return invalid("simulation length must be at least 1");
    }
    if cfg.warmup.len() < tb {
        return invalid(format!(
            "warmup of {} samples is shorter than the past window {tb}",
            cfg.warmup.len()
        ));
    }
    let mut noise = NoiseSource::new(cfg.noise_std, cfg.rng_seed, ny)?;
    let (mut us, mut ys, mut x) = warmup(plant, cfg, &mut noise)?;
    let w = cfg.warmup.len();

    let mut statuses = Vec::with_capacity(cfg.sim_length);
    let mut cost = 0.0;
    for step in 0..cfg.sim_length {
        let k = w + step;
        let u_past = &us[(k - tb) * nu..k * nu];
        let y_past = &ys[(k - tb) * ny..k * ny];
        let (u0, status) = policy.act(u_past, y_past)?;
        if status != SolverStatus::Optimal {
            return Err(Error::SolverFailed { step, status });
        }
        let uk = DVector::from_vec(u0);
        let (xn, yk) = plant.step(&x, &uk);
        let yk = yk + noise.draw();
        cost += ocp.stage_cost(uk.as_slice(), yk.as_slice());
        us.extend(uk.iter());
        ys.extend(yk.iter());
        statuses.push(status);
        x = xn;
    }

    Ok(RhcResult {
        u: series(&us[w * nu..], nu, "u")?,
        y: series(&ys[w * ny..], ny, "y")?,
        per_step_status: statuses,
        cost_j: cost,
        warmup_u: series(&us[..w * nu], nu, "u")?,
        warmup_y: series(&ys[..w * ny], ny, "y")?,
    })
}

/// Receding-horizon loop driven by data equations (Hankel or frequency form).
pub fn run_rhc(plant: &StateSpace, cfg: &RhcConfig) -> Result<RhcResult> {
    if cfg.eqs.depth() != cfg.common.ocp.depth() {
        return invalid("data depth must equal T̄ + T");
    }
    if cfg.eqs.nu() != plant.nu() || cfg.eqs.ny() != plant.ny() {
        return invalid("plant dimensions do not match the data equations");
    }
    let mut policy = DataDriven {
        eqs: &cfg.eqs,
        ocp: &cfg.common.ocp,
        tol: cfg.common.tol,
    };
    run_loop(plant, &cfg.common, &mut policy)
}

/// Same loop with predictions from the exact model.
pub fn run_mpc_benchmark(plant: &StateSpace, cfg: &LoopConfig) -> Result<RhcResult> {
    let mut policy = ModelBased::new(plant, &cfg.ocp, cfg.tol);
    run_loop(plant, cfg, &mut policy)
}

/// SplitMix64 finalizer, used to derive independent per-run seeds.
pub fn derive_seed(master: u64, stream: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    stream.iter().fold(mix(master), |acc, &s| mix(acc ^ mix(s)))
}

/// Everything a Monte Carlo study needs besides the plant.
#[derive(Debug, Clone)]
pub struct MonteCarloConfig {
    pub controller: StateSpace,
    /// Excitation template; its `periods` field is overridden per data-set size.
    pub excitation: MultisineSpec,
    /// Draw new multi-sine phases for every data set instead of reusing the template's.
    pub fresh_phases: bool,
    pub experiment_noise_std: f64,
    pub discard_periods: usize,
    pub periods_list: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
    /// Closed-loop settings; the same noise seed is reused for every run.
    pub rhc: LoopConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloRow {
    pub periods: usize,
    pub mean_j: f64,
    pub var_j: f64,
    pub failures: usize,
    pub costs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloTable {
    pub rows: Vec<MonteCarloRow>,
}

impl MonteCarloTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["P", "mean_J", "var_J", "failures"]).map_err(csv_err)?;
        for r in &self.rows {
            wr.write_record([
                r.periods.to_string(),
                fmt_f64(r.mean_j),
                fmt_f64(r.var_j),
                r.failures.to_string(),
            ])
            .map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// One data set: closed-loop experiment, FRF estimate, FreePC loop. Returns the cost.
pub fn monte_carlo_run(plant: &StateSpace, cfg: &MonteCarloConfig, periods: usize, run: usize) -> Result<f64> {
    let mut excitation = cfg.excitation.clone();
    excitation.periods = periods;
    if cfg.fresh_phases {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[periods as u64, run as u64, 1]));
        for ph in excitation.phases.iter_mut() {
            *ph = rng.random_range(0.0..2.0 * std::f64::consts::PI);
        }
    }
    let exp = ClosedLoopExperiment {
        plant: plant.clone(),
        controller: cfg.controller.clone(),
        excitation,
        noise_std: cfg.experiment_noise_std,
        rng_seed: derive_seed(cfg.seed, &[periods as u64, run as u64]),
        discard_periods: cfg.discard_periods,
    };
    let data = exp.run()?;
    let est = estimate_frf(
        &data.d,
        &data.u,
        &data.y,
        cfg.excitation.period_length,
        &cfg.excitation.frequencies,
    )?;
    let eqs = freq_data_equations(&est.to_freq_data()?, cfg.rhc.ocp.depth())?;
    let res = run_rhc(
        plant,
        &RhcConfig {
            common: cfg.rhc.clone(),
            eqs,
        },
    )?;
    Ok(res.cost_j)
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        f64::NAN
    };
    (mean, var)
}

/// Mean and unbiased variance of the closed-loop cost per data-set size.
/// Runs execute on the current rayon pool; results do not depend on scheduling.
pub fn monte_carlo(plant: &StateSpace, cfg: &MonteCarloConfig) -> Result<MonteCarloTable> {
    if cfg.runs < 2 {
        return invalid("a Monte Carlo study needs at least two runs");
    }
    if cfg.periods_list.iter().any(|&p| p < 2) {
        return invalid("every data set needs at least two periods");
    }
    let mut rows = Vec::with_capacity(cfg.periods_list.len());
    for &p in &cfg.periods_list {
        let results: Vec<Result<f64>> = (0..cfg.runs)
            .into_par_iter()
            .map(|run| monte_carlo_run(plant, cfg, p, run))
            .collect();
        let costs: Vec<f64> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        let failures = results.len() - costs.len();
        let (mean_j, var_j) = mean_var(&costs);
        rows.push(MonteCarloRow {
            periods: p,
            mean_j,
            var_j,
            failures,
            costs,
        });
    }
    Ok(MonteCarloTable { rows })
}

/// Default solver tolerance for closed-loop runs.
pub const LOOP_TOL: f64 = DEFAULT_TOL;

/// Closed-loop simulation length of the case study.
pub const CASE_STUDY_SIM_LENGTH: usize = 50;
/// Measurement-noise standard deviation of the case study.
pub const CASE_STUDY_NOISE_STD: f64 = 0.1;
/// Constant injected into the stabilized loop during warmup; it parks the
/// plant near y ≈ 1 before the predictive controller takes over.
pub const CASE_STUDY_WARMUP_LEVEL: f64 = 0.5;
pub const CASE_STUDY_WARMUP_LENGTH: usize = 60;
/// Multi-sine amplitude per frequency used for the case-study experiments.
pub const CASE_STUDY_AMPLITUDE: f64 = 0.5;

/// T = 10, T̄ = 6, Q = 1, R = 0.01, λ_g = 0.1, λ_σ = 1e5, u ∈ [−3, 0.5], y ∈ [−0.5, 1.2].
pub fn case_study_ocp() -> OcpConfig {
    OcpConfig {
        horizon: 10,
        past: 6,
        q: RealMatrix::from_element(1, 1, 1.0),
        r: RealMatrix::from_element(1, 1, 0.01),
        lambda_g: 0.1,
        lambda_sigma: 1e5,
        u_box: vec![(-3.0, 0.5)],
        y_box: vec![(-0.5, 1.2)],
        nominal: false,
    }
}

/// Warmup of the case study: the stabilizing controller with a constant injected signal.
pub fn case_study_warmup(controller: &StateSpace, level: f64, length: usize) -> Result<Warmup> {
    Ok(Warmup::Feedback {
        controller: controller.clone(),
        injected: TimeSeries::scalar(&vec![level; length])?,
    })
}

/// Loop settings of the case study with the given closed-loop noise seed.
pub fn case_study_loop(rhc_seed: u64) -> Result<LoopConfig> {
    let controller = crate::lti::case_study_controller().to_state_space()?;
    Ok(LoopConfig {
        ocp: case_study_ocp(),
        sim_length: CASE_STUDY_SIM_LENGTH,
        warmup: case_study_warmup(&controller, CASE_STUDY_WARMUP_LEVEL, CASE_STUDY_WARMUP_LENGTH)?,
        x0: None,
        noise_std: CASE_STUDY_NOISE_STD,
        rng_seed: rhc_seed,
        tol: LOOP_TOL,
    })
}

/// Monte Carlo setup of the case study. `seed` drives the excitation phases
/// (fixed across data sets) and the per-run experiment noise. Noise enters
/// only the experiments; the closed loop itself runs noise-free, so the spread
/// of the cost reflects the quality of the data set alone.
pub fn case_study_monte_carlo(periods_list: Vec<usize>, runs: usize, seed: u64) -> Result<MonteCarloConfig> {
    let mut rhc = case_study_loop(0)?;
    rhc.noise_std = 0.0;
    Ok(MonteCarloConfig {
        controller: crate::lti::case_study_controller().to_state_space()?,
        excitation: MultisineSpec::random_phase(
            &crate::signals::CASE_STUDY_BINS,
            CASE_STUDY_AMPLITUDE,
            crate::signals::CASE_STUDY_PERIOD,
            2,
            seed,
        )?,
        fresh_phases: false,
        experiment_noise_std: CASE_STUDY_NOISE_STD,
        discard_periods: 0,
        periods_list,
        runs,
        seed,
        rhc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freqdomain::hankel_data_equations;
    use nalgebra::dmatrix;

    fn delay() -> StateSpace {
        StateSpace::new(dmatrix![0.0], dmatrix![1.0], dmatrix![1.0], dmatrix![0.0]).unwrap()
    }

    fn delay_eqs(depth: usize) -> DataEquations {
        let u: Vec<f64> = (0..60).map(|k| ((k * 37 + 11) % 17) as f64 / 8.0 - 1.0).collect();
        let ut = TimeSeries::scalar(&u).unwrap();
        let (y, _) = delay().simulate(&RealVector::zeros(1), &ut, None).unwrap();
        hankel_data_equations(&ut, &y, depth).unwrap()
    }

    fn base(ocp: OcpConfig, warm: usize) -> LoopConfig {
        LoopConfig {
            ocp,
            sim_length: 8,
            warmup: Warmup::OpenLoop(TimeSeries::scalar(&vec![0.0; warm]).unwrap()),
            x0: None,
            noise_std: 0.0,
            rng_seed: 1,
            tol: LOOP_TOL,
        }
    }

    #[test]
    fn delay_at_rest_stays_at_rest() {
        let ocp = OcpConfig::nominal(3, 2, dmatrix![1.0], dmatrix![0.0]);
        let cfg = RhcConfig {
            common: base(ocp, 2),
            eqs: delay_eqs(5),
        };
        let res = run_rhc(&delay(), &cfg).unwrap();
        assert!(res.u.channel(0).iter().all(|v| v.abs() < 1e-8));
        assert!(res.y.channel(0).iter().all(|v| v.abs() < 1e-8));
        assert!(res.cost_j < 1e-12);
        assert_eq!(res.per_step_status.len(), 8);
    }

    #[test]
    fn short_warmup_rejected() {
        let ocp = OcpConfig::nominal(3, 2, dmatrix![1.0], dmatrix![0.0]);
        let cfg = RhcConfig {
            common: base(ocp, 1),
            eqs: delay_eqs(5),
        };
        assert!(run_rhc(&delay(), &cfg).is_err());
    }

    #[test]
    fn window_discipline_golden_trace() {
        // record what the policy sees and compare with an independent slice of the trace
        struct Recorder(Vec<(Vec<f64>, Vec<f64>)>);
        impl Policy for Recorder {
            fn act(&mut self, u: &[f64], y: &[f64]) -> Result<(Vec<f64>, SolverStatus)> {
                self.0.push((u.to_vec(), y.to_vec()));
                Ok((vec![0.1 * self.0.len() as f64], SolverStatus::Optimal))
            }
        }
        let plant = StateSpace::new(dmatrix![0.5], dmatrix![1.0], dmatrix![1.0], dmatrix![0.0]).unwrap();
        let ocp = OcpConfig::nominal(2, 3, dmatrix![1.0], dmatrix![0.0]);
        let mut cfg = base(ocp, 4);
        cfg.warmup = Warmup::OpenLoop(TimeSeries::scalar(&[1.0, -1.0, 2.0, 0.5]).unwrap());
        let mut rec = Recorder(Vec::new());
        let res = run_loop(&plant, &cfg, &mut rec).unwrap();
        let all_u: Vec<f64> = res.warmup_u.channel(0).into_iter().chain(res.u.channel(0)).collect();
        let all_y: Vec<f64> = res.warmup_y.channel(0).into_iter().chain(res.y.channel(0)).collect();
        for (step, (u, y)) in rec.0.iter().enumerate() {
            let k = 4 + step;
            assert_eq!(u.as_slice(), &all_u[k - 3..k]);
            assert_eq!(y.as_slice(), &all_y[k - 3..k]);
        }
        // y_k = 0.5 y_{k−1} + u_{k−1} from rest
        let mut yk = 0.0;
        for k in 0..all_u.len() {
            assert!((all_y[k] - yk).abs() < 1e-15);
            yk = 0.5 * yk + all_u[k];
        }
    }

    #[test]
    fn infeasible_boxes_abort_with_step() {
        let mut ocp = OcpConfig::nominal(3, 2, dmatrix![1.0], dmatrix![0.0]);
        ocp.u_box = vec![(1.0, 2.0)];
        ocp.y_box = vec![(-0.5, 0.5)];
        let cfg = RhcConfig {
            common: base(ocp, 2),
            eqs: delay_eqs(5),
        };
        match run_rhc(&delay(), &cfg) {
            Err(Error::SolverFailed { step, status }) => {
                assert_eq!(step, 0);
                assert_eq!(status, SolverStatus::Infeasible);
            }
            other => panic!("expected a solver failure, got {other:?}"),
        }
    }

    #[test]
    fn identical_seeds_identical_results() {
        let ocp = OcpConfig::nominal(3, 2, dmatrix![1.0], dmatrix![0.1]);
        let mut common = base(ocp, 3);
        common.ocp.nominal = false;
        common.ocp.lambda_sigma = 10.0;
        common.ocp.lambda_g = 0.01;
        common.noise_std = 0.05;
        common.warmup = Warmup::OpenLoop(TimeSeries::scalar(&[1.0, 0.5, -0.3]).unwrap());
        let cfg = RhcConfig {
            common,
            eqs: delay_eqs(5),
        };
        let a = run_rhc(&delay(), &cfg).unwrap();
        let b = run_rhc(&delay(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn heavy_input_penalty_shrinks_inputs() {
        let plant = StateSpace::new(dmatrix![0.8], dmatrix![1.0], dmatrix![1.0], dmatrix![0.0]).unwrap();
        let mut light = base(OcpConfig::nominal(5, 2, dmatrix![1.0], dmatrix![0.01]), 2);
        light.x0 = Some(RealVector::from_element(1, 2.0));
        let mut heavy = light.clone();
        heavy.ocp.r = dmatrix![1e6];
        let ul = run_mpc_benchmark(&plant, &light).unwrap().u.channel(0);
        let uh = run_mpc_benchmark(&plant, &heavy).unwrap().u.channel(0);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm(&uh) < 1e-4 * norm(&ul), "{} vs {}", norm(&uh), norm(&ul));
    }

    #[test]
    fn seeds_are_distinct() {
        let a = derive_seed(7, &[5, 0]);
        assert_ne!(a, derive_seed(7, &[5, 1]));
        assert_ne!(a, derive_seed(7, &[10, 0]));
        assert_ne!(a, derive_seed(8, &[5, 0]));
        assert_eq!(a, derive_seed(7, &[5, 0]));
    }

    #[test]
    fn warmup_trajectory_matches_the_loop() {
        let plant = crate::lti::case_study_plant().to_state_space().unwrap();
        let mut cfg = case_study_loop(5).unwrap();
        cfg.sim_length = 2;
        // with loop noise the output box can be out of reach at the first step
        cfg.ocp.y_box = vec![(f64::NEG_INFINITY, f64::INFINITY)];
        let res = run_mpc_benchmark(&plant, &cfg).unwrap();
        let (u, y) = warmup_trajectory(&plant, &cfg).unwrap();
        assert_eq!(u, res.warmup_u);
        assert_eq!(y, res.warmup_y);
    }

    #[test]
    fn monte_carlo_needs_two_runs() {
        let plant = delay();
        let cfg = MonteCarloConfig {
            controller: StateSpace::static_gain(dmatrix![0.0]).unwrap(),
            excitation: MultisineSpec::random_phase(&[1, 2], 1.0, 8, 2, 0).unwrap(),
            fresh_phases: false,
            experiment_noise_std: 0.0,
            discard_periods: 0,
            periods_list: vec![2],
            runs: 1,
            seed: 0,
            rhc: base(OcpConfig::nominal(1, 1, dmatrix![1.0], dmatrix![0.1]), 1),
        };
        assert!(monte_carlo(&plant, &cfg).is_err());
    }
}
