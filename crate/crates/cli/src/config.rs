//! Experiment configuration file.
//!
//! Every section is optional; missing keys fall back to the case-study values,
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use freepc::freqdomain::DataEquations;
use freepc::lti::{case_study_controller, case_study_plant, SisoTransferFunction, StateSpace};
use freepc::numcore::RealMatrix;
use freepc::ocp::OcpConfig;
use freepc::signals::{MultisineSpec, CASE_STUDY_BINS, CASE_STUDY_PERIOD};
use freepc::simloop::{
    case_study_ocp, case_study_warmup, derive_seed, LoopConfig, MonteCarloConfig, RhcConfig, CASE_STUDY_AMPLITUDE,
    CASE_STUDY_NOISE_STD, CASE_STUDY_SIM_LENGTH, CASE_STUDY_WARMUP_LENGTH, CASE_STUDY_WARMUP_LEVEL, LOOP_TOL,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub plant: TransferFunction,
    pub controller: TransferFunction,
    pub excitation: Excitation,
    pub ocp: Ocp,
    pub closed_loop: ClosedLoop,
    pub monte_carlo: MonteCarlo,
}

/// Coefficients in descending powers of `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferFunction {
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Excitation {
    /// DFT bins of the excited frequencies.
    pub bins: Vec<usize>,
    pub period_length: usize,
    pub periods: usize,
    pub amplitude: f64,
    pub discard_periods: usize,
    /// Output measurement noise during the experiment.
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ocp {
    pub horizon: usize,
    pub past: usize,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub lambda_g: f64,
    pub lambda_sigma: f64,
    pub u_box: Vec<[f64; 2]>,
    pub y_box: Vec<[f64; 2]>,
    pub nominal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClosedLoop {
    pub sim_length: usize,
    pub noise_std: f64,
    /// Constant injected into the stabilized loop before the predictive controller starts.
    pub warmup_level: f64,
    pub warmup_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarlo {
    pub periods: Vec<usize>,
    pub runs: usize,
    pub fresh_phases: bool,
    /// Measurement noise inside the predictive loop (the experiments use `excitation.noise_std`).
    pub loop_noise_std: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: PathBuf::from("out"),
            plant: TransferFunction::from(&case_study_plant()),
            controller: TransferFunction::from(&case_study_controller()),
            excitation: Excitation::default(),
            ocp: Ocp::default(),
            closed_loop: ClosedLoop::default(),
            monte_carlo: MonteCarlo::default(),
        }
    }
}

impl From<&SisoTransferFunction> for TransferFunction {
    fn from(tf: &SisoTransferFunction) -> Self {
        Self {
            numerator: tf.numerator().to_vec(),
            denominator: tf.denominator().to_vec(),
        }
    }
}

impl Default for Excitation {
    fn default() -> Self {
        Self {
            bins: CASE_STUDY_BINS.to_vec(),
            period_length: CASE_STUDY_PERIOD,
            periods: 50,
            amplitude: CASE_STUDY_AMPLITUDE,
            discard_periods: 0,
            noise_std: CASE_STUDY_NOISE_STD,
        }
    }
}

impl Default for Ocp {
    fn default() -> Self {
        let c = case_study_ocp();
        Self {
            horizon: c.horizon,
            past: c.past,
            q: rows(&c.q),
            r: rows(&c.r),
            lambda_g: c.lambda_g,
            lambda_sigma: c.lambda_sigma,
            u_box: c.u_box.iter().map(|&(a, b)| [a, b]).collect(),
            y_box: c.y_box.iter().map(|&(a, b)| [a, b]).collect(),
            nominal: c.nominal,
        }
    }
}

impl Default for ClosedLoop {
    fn default() -> Self {
        Self {
            sim_length: CASE_STUDY_SIM_LENGTH,
            // as in the Monte Carlo study: noise enters the experiments only
            noise_std: 0.0,
            warmup_level: CASE_STUDY_WARMUP_LEVEL,
            warmup_length: CASE_STUDY_WARMUP_LENGTH,
        }
    }
}

impl Default for MonteCarlo {
    fn default() -> Self {
        Self {
            periods: vec![5, 10, 25, 50],
            runs: 100,
            fresh_phases: false,
            loop_noise_std: 0.0,
        }
    }
}

fn rows(m: &RealMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(name: &str, v: &[Vec<f64>]) -> Result<RealMatrix> {
    let n = v.len();
    if n == 0 || v.iter().any(|r| r.len() != n) {
        bail!("{name} must be a non-empty square matrix");
    }
    Ok(RealMatrix::from_fn(n, n, |i, j| v[i][j]))
}

/// Independent seed streams derived from the master seed.
pub mod stream {
    pub const PHASES: u64 = 0;
    pub const EXPERIMENT: u64 = 1;
    pub const LOOP: u64 = 2;
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()
            .with_context(|| format!("validating {}", path.display()))?;
        Ok(cfg)
    }

    /// Builds every derived object once so that errors surface at load time.
    pub fn validate(&self) -> Result<()> {
        self.plant()?;
        self.controller()?;
        self.excitation()?;
        self.ocp()?;
        if self.closed_loop.sim_length == 0 {
            bail!("closed_loop.sim_length must be positive");
        }
        if self.closed_loop.warmup_length < self.ocp.past {
            bail!(
                "closed_loop.warmup_length ({}) must cover the past window ({})",
                self.closed_loop.warmup_length,
                self.ocp.past
            );
        }
        for (name, v) in [
            ("excitation.noise_std", self.excitation.noise_std),
            ("closed_loop.noise_std", self.closed_loop.noise_std),
            ("monte_carlo.loop_noise_std", self.monte_carlo.loop_noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bail!("{name} must be finite and non-negative");
            }
        }
        if !self.closed_loop.warmup_level.is_finite() {
            bail!("closed_loop.warmup_level must be finite");
        }
        Ok(())
    }

    pub fn plant(&self) -> Result<StateSpace> {
        let tf =
            SisoTransferFunction::new(self.plant.numerator.clone(), self.plant.denominator.clone()).context("plant")?;
        Ok(tf.to_state_space()?)
    }

    pub fn controller(&self) -> Result<StateSpace> {
        let tf = SisoTransferFunction::new(self.controller.numerator.clone(), self.controller.denominator.clone())
            .context("controller")?;
        Ok(tf.to_state_space()?)
    }

    pub fn seed_for(&self, stream: u64) -> u64 {
        derive_seed(self.seed, &[stream])
    }

    pub fn excitation(&self) -> Result<MultisineSpec> {
        let e = &self.excitation;
        if e.amplitude <= 0.0 || !e.amplitude.is_finite() {
            bail!("excitation.amplitude must be positive");
        }
        Ok(MultisineSpec::random_phase(
            &e.bins,
            e.amplitude,
            e.period_length,
            e.periods,
            self.seed_for(stream::PHASES),
        )?)
    }

    pub fn ocp(&self) -> Result<OcpConfig> {
        let o = &self.ocp;
        let cfg = OcpConfig {
            horizon: o.horizon,
            past: o.past,
            q: matrix("ocp.q", &o.q)?,
            r: matrix("ocp.r", &o.r)?,
            lambda_g: o.lambda_g,
            lambda_sigma: o.lambda_sigma,
            u_box: o.u_box.iter().map(|b| (b[0], b[1])).collect(),
            y_box: o.y_box.iter().map(|b| (b[0], b[1])).collect(),
            nominal: o.nominal,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loop_config(&self) -> Result<LoopConfig> {
        let cl = &self.closed_loop;
        Ok(LoopConfig {
            ocp: self.ocp()?,
            sim_length: cl.sim_length,
            warmup: case_study_warmup(&self.controller()?, cl.warmup_level, cl.warmup_length)?,
            x0: None,
            noise_std: cl.noise_std,
            rng_seed: self.seed_for(stream::LOOP),
            tol: LOOP_TOL,
        })
    }

    pub fn rhc_config(&self, eqs: DataEquations) -> Result<RhcConfig> {
        Ok(RhcConfig {
            common: self.loop_config()?,
            eqs,
        })
    }

    pub fn monte_carlo(&self) -> Result<MonteCarloConfig> {
        let mc = &self.monte_carlo;
        let mut rhc = self.loop_config()?;
        rhc.noise_std = mc.loop_noise_std;
        Ok(MonteCarloConfig {
            controller: self.controller()?,
            excitation: self.excitation()?,
            fresh_phases: mc.fresh_phases,
            experiment_noise_std: self.excitation.noise_std,
            discard_periods: self.excitation.discard_periods,
            periods_list: mc.periods.clone(),
            runs: mc.runs,
            seed: self.seed,
            rhc,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[ocp]\nhorizon = 5\nlamda_g = 1.0").is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 9\n[ocp]\nhorizon = 4").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.ocp.horizon, 4);
        assert_eq!(cfg.ocp.past, 6);
    }

    #[test]
    fn infinite_boxes_parse() {
        let cfg: RunConfig = toml::from_str("[ocp]\nu_box = [[-inf, inf]]").unwrap();
        assert!(cfg.ocp().unwrap().u_box[0].0.is_infinite());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.ocp.q = vec![vec![1.0, 0.0]];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.closed_loop.warmup_length = 2;
        assert!(cfg.validate().is_err());
    }
}
