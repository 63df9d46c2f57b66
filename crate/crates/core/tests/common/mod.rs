#![allow(dead_code)]

use freepc::freqdomain::{frf_to_freq_data, is_pe_freq, FreqData};
use freepc::lti::StateSpace;
use freepc::numcore::{ComplexVector, RealMatrix, RealVector, DEFAULT_RANK_TOL};
use freepc::signals::{is_pe_time, TimeSeries};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> RealMatrix {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random controllable system with spectral radius in [0.3, 0.9].
pub fn random_system(rng: &mut ChaCha8Rng, nx: usize, nu: usize, ny: usize) -> StateSpace {
    loop {
        let mut a = gaussian(rng, nx, nx);
        let rho = freepc::numcore::spectral_radius(&a);
        if rho < 1e-6 {
            continue;
        }
        a *= rng.random_range(0.3..0.9) / rho;
        let b = gaussian(rng, nx, nu);
        let c = gaussian(rng, ny, nx);
        let d = if rng.random_bool(0.5) {
            gaussian(rng, ny, nu)
        } else {
            RealMatrix::zeros(ny, nu)
        };
        let sys = StateSpace::new(a, b, c, d).unwrap();
        if sys.is_controllable(1e-8).unwrap() {
            return sys;
        }
    }
}

pub fn random_dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (
        rng.random_range(1..=4),
        rng.random_range(1..=2),
        rng.random_range(1..=2),
    )
}

/// Exact spectra of `sys` at enough random frequencies to be PE of order `order`.
pub fn exact_freq_data(rng: &mut ChaCha8Rng, sys: &StateSpace, order: usize) -> FreqData {
    let nu = sys.nu();
    let m = (nu * order).div_ceil(2) + 1;
    loop {
        let mut freqs: Vec<f64> = (0..m)
            .map(|_| rng.random_range(0.05..std::f64::consts::PI - 0.05))
            .collect();
        freqs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if freqs.windows(2).any(|w| w[1] - w[0] < 1e-3) {
            continue;
        }
        let g: Vec<_> = freqs.iter().map(|&w| sys.freq_response(w).unwrap()).collect();
        let dirs: Vec<ComplexVector> = (0..m)
            .map(|_| ComplexVector::from_fn(nu, |_, _| Complex64::new(rng.sample(StandardNormal), 0.0)))
            .collect();
        let data = frf_to_freq_data(&freqs, &g, &dirs).unwrap();
        if is_pe_freq(&data.input, order, DEFAULT_RANK_TOL)
            .unwrap()
            .persistently_exciting
        {
            return data;
        }
    }
}

/// Noiseless input/output record from rest with a white input PE of order `order`.
pub fn time_data(rng: &mut ChaCha8Rng, sys: &StateSpace, order: usize) -> (TimeSeries, TimeSeries) {
    let nu = sys.nu();
    let n = (nu + 1) * order + 20;
    loop {
        let u = TimeSeries::new(gaussian(rng, n, nu)).unwrap();
        if !is_pe_time(&u, order, DEFAULT_RANK_TOL).unwrap().persistently_exciting {
            continue;
        }
        let (y, _) = sys.simulate(&RealVector::zeros(sys.nx()), &u, None).unwrap();
        return (u, y);
    }
}

/// A genuine past window of length `len`, plus the state right after it.
pub fn past_window(rng: &mut ChaCha8Rng, sys: &StateSpace, len: usize) -> (Vec<f64>, Vec<f64>, RealVector) {
    scaled_past_window(rng, sys, len, 1.0)
}

/// Same as [`past_window`] with initial state and inputs scaled by `scale`.
pub fn scaled_past_window(
    rng: &mut ChaCha8Rng,
    sys: &StateSpace,
    len: usize,
    scale: f64,
) -> (Vec<f64>, Vec<f64>, RealVector) {
    let x0 = gaussian(rng, sys.nx(), 1).column(0) * scale;
    let u = TimeSeries::new(gaussian(rng, len, sys.nu()) * scale).unwrap();
    let (y, x) = sys.simulate(&x0, &u, None).unwrap();
    (u.stacked(0, len), y.stacked(0, len), x)
}

/// Unconstrained finite-horizon LQ from the true state by batch least squares:
/// minimize Σ yᵢᵀQyᵢ + uᵢᵀRuᵢ with y = O x + Γ u. Returns (u, y) stacked.
pub fn lq_oracle(
    sys: &StateSpace,
    x: &RealVector,
    horizon: usize,
    q: &RealMatrix,
    r: &RealMatrix,
) -> (RealVector, RealVector) {
    let o = sys.observability(horizon);
    let gam = sys.toeplitz(horizon);
    let qb = block_diag(q, horizon);
    let rb = block_diag(r, horizon);
    let lhs = gam.transpose() * &qb * &gam + rb;
    let rhs = -(gam.transpose() * &qb * &o * x);
    let u = lhs.cholesky().expect("positive definite").solve(&rhs);
    let y = o * x + gam * &u;
    (u, y)
}

pub fn block_diag(m: &RealMatrix, count: usize) -> RealMatrix {
    let (r, c) = m.shape();
    let mut out = RealMatrix::zeros(r * count, c * count);
    for i in 0..count {
        out.view_mut((i * r, i * c), (r, c)).copy_from(m);
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
