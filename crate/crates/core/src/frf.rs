//! Closed-loop multi-sine experiments and the per-period FRF estimator.

use std::io::{Read, Write};

use nalgebra::DVector;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::freqdomain::{siso_frf_data, FreqData, SpectrumSamples};
use crate::lti::{closed_loop, StateSpace};
use crate::numcore::{ComplexMatrix, ComplexVector, RealMatrix};
use crate::signals::{csv_err, fmt_f64, parse_err, parse_f64, per_period_dft, MultisineSpec, TimeSeries};

/// `sqrt(ln(1/0.01))`: 99% radius of a circular complex Gaussian per unit standard deviation.
pub fn radius_99_factor() -> f64 {
    (1.0f64 / 0.01).ln().sqrt()
}

#[derive(Debug, Clone)]
pub struct ClosedLoopExperiment {
    pub plant: StateSpace,
    pub controller: StateSpace,
    pub excitation: MultisineSpec,
    pub noise_std: f64,
    pub rng_seed: u64,
    pub discard_periods: usize,
}

/// Measured signals of one experiment, restricted to the kept periods.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub d: TimeSeries,
    pub u: TimeSeries,
    pub y: TimeSeries,
}

impl ClosedLoopExperiment {
    /// Simulates the loop from rest and keeps the last `excitation.periods` periods.
    pub fn run(&self) -> Result<ExperimentData> {
        self.excitation.validate()?;
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return invalid("noise standard deviation must be finite and non-negative");
        }
        if self.plant.nu() != 1 {
            return invalid("multi-sine injection supports single-input plants only");
        }
        let cl = closed_loop(&self.plant, &self.controller)?;
        let rho = cl.spectral_radius();
        if rho >= 1.0 {
            return invalid(format!("closed loop is not stable (spectral radius {rho})"));
        }
        let ny = self.plant.ny();
        let plen = self.excitation.period_length;
        let total = (self.excitation.periods + self.discard_periods) * plen;
        let skip = self.discard_periods * plen;
        let keep = total - skip;
        let normal = Normal::new(0.0, self.noise_std).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);

        let mut x = DVector::zeros(cl.nx());
        let mut d = RealMatrix::zeros(keep, 1);
        let mut u = RealMatrix::zeros(keep, 1);
        let mut y = RealMatrix::zeros(keep, ny);
        let mut w = DVector::zeros(1 + ny);
        for k in 0..total {
            w[0] = self.excitation.value(k);
            for i in 0..ny {
                w[1 + i] = if self.noise_std > 0.0 {
                    normal.sample(&mut rng)
                } else {
                    0.0
                };
            }
            let (xn, out) = cl.step(&x, &w);
            if k >= skip {
                let r = k - skip;
                d[(r, 0)] = w[0];
                u[(r, 0)] = out[0];
                for i in 0..ny {
                    y[(r, i)] = out[1 + i];
                }
            }
            x = xn;
        }
        let y_names = (0..ny)
            .map(|i| if ny == 1 { "y".to_string() } else { format!("y{i}") })
            .collect();
        Ok(ExperimentData {
            d: TimeSeries::with_names(d, vec!["d".into()])?,
            u: TimeSeries::with_names(u, vec!["u".into()])?,
            y: TimeSeries::with_names(y, y_names)?,
        })
    }
}

/// Averaged FRF with per-frequency spread.
#[derive(Debug, Clone, PartialEq)]
pub struct FrfEstimate {
    pub frequencies: Vec<f64>,
    pub g_hat: Vec<Complex64>,
    pub variance: Vec<f64>,
    pub confidence_radius_99: Vec<f64>,
    pub periods_used: usize,
}

impl FrfEstimate {
    /// Unit-direction frequency data `U = 1`, `Y = Ĝ`.
    pub fn to_freq_data(&self) -> Result<FreqData> {
        siso_frf_data(&self.frequencies, &self.g_hat)
    }

    pub fn mean_variance(&self) -> f64 {
        self.variance.iter().sum::<f64>() / self.variance.len() as f64
    }

    /// CSV with columns `freq, re, im, variance, radius_99`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["freq", "re", "im", "variance", "radius_99"])
            .map_err(csv_err)?;
        for m in 0..self.frequencies.len() {
            wr.write_record([
                fmt_f64(self.frequencies[m]),
                fmt_f64(self.g_hat[m].re),
                fmt_f64(self.g_hat[m].im),
                fmt_f64(self.variance[m]),
                fmt_f64(self.confidence_radius_99[m]),
            ])
            .map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`FrfEstimate::write_csv`]. The period count is not stored and reads back as 0.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header: Vec<String> = rd
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        if header != ["freq", "re", "im", "variance", "radius_99"] {
            return Err(parse_err(1, "expected header freq,re,im,variance,radius_99"));
        }
        let mut est = Self {
            frequencies: vec![],
            g_hat: vec![],
            variance: vec![],
            confidence_radius_99: vec![],
            periods_used: 0,
        };
        for (i, rec) in rd.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
            let v = rec.iter().map(|f| parse_f64(f, line)).collect::<Result<Vec<_>>>()?;
            if v.len() != 5 {
                return Err(parse_err(line, "expected 5 fields"));
            }
            if v[3] < 0.0 {
                return Err(parse_err(line, "negative variance"));
            }
            est.frequencies.push(v[0]);
            est.g_hat.push(Complex64::new(v[1], v[2]));
            est.variance.push(v[3]);
            est.confidence_radius_99.push(v[4]);
        }
        if est.frequencies.is_empty() {
            return Err(parse_err(2, "no frequency rows"));
        }
        Ok(est)
    }
}

/// Per-period ratio estimates `Ĝ_p = Y_p D_p* / (U_p D_p*)`, then mean and
/// variance-of-the-mean over periods.
pub fn estimate_frf(
    d: &TimeSeries,
    u: &TimeSeries,
    y: &TimeSeries,
    period_length: usize,
    frequencies: &[f64],
) -> Result<FrfEstimate> {
    if d.len() != u.len() || d.len() != y.len() {
        return invalid("d, u and y must have equal lengths");
    }
    if d.channels() != 1 || u.channels() != 1 || y.channels() != 1 {
        return invalid("the ratio estimator handles single-input single-output data");
    }
    let dd = per_period_dft(d, period_length, frequencies)?;
    let ud = per_period_dft(u, period_length, frequencies)?;
    let yd = per_period_dft(y, period_length, frequencies)?;
    estimate_from_spectra(&dd, &ud, &yd)
}

/// Estimator on precomputed per-period spectra.
pub fn estimate_from_spectra(
    dd: &[SpectrumSamples],
    ud: &[SpectrumSamples],
    yd: &[SpectrumSamples],
) -> Result<FrfEstimate> {
    let p = dd.len();
    if p < 2 {
        return invalid(format!("at least two periods are needed for a variance, got {p}"));
    }
    if ud.len() != p || yd.len() != p {
        return invalid("spectra must cover the same number of periods");
    }
    let frequencies = dd[0].frequencies().to_vec();
    let m = frequencies.len();
    let mut per_period = vec![vec![Complex64::new(0.0, 0.0); m]; p];
    for k in 0..p {
        for (i, &w) in frequencies.iter().enumerate() {
            let dconj = dd[k].values()[i][0].conj();
            let num = yd[k].values()[i][0] * dconj;
            let den = ud[k].values()[i][0] * dconj;
            if den.norm() == 0.0 {
                return Err(Error::Singular(format!(
                    "zero denominator U·D* at ω = {w} in period {}",
                    k + 1
                )));
            }
            per_period[k][i] = num / den;
        }
    }
    let pf = p as f64;
    let g_hat: Vec<Complex64> = (0..m)
        .map(|i| per_period.iter().map(|row| row[i]).sum::<Complex64>() / pf)
        .collect();
    let variance: Vec<f64> = (0..m)
        .map(|i| per_period.iter().map(|row| (row[i] - g_hat[i]).norm_sqr()).sum::<f64>() / (pf * (pf - 1.0)))
        .collect();
    let confidence_radius_99 = variance.iter().map(|v| radius_99_factor() * v.sqrt()).collect();
    Ok(FrfEstimate {
        frequencies,
        g_hat,
        variance,
        confidence_radius_99,
        periods_used: p,
    })
}

/// Steady-state prediction of the plant-input spectra, `(I + K G)⁻¹ D_p` per period.
pub fn sensitivity_check(
    plant: &StateSpace,
    controller: &StateSpace,
    d_spectra: &[SpectrumSamples],
) -> Result<Vec<SpectrumSamples>> {
    let nu = plant.nu();
    let mut out = Vec::with_capacity(d_spectra.len());
    for spec in d_spectra {
        let mut values = Vec::with_capacity(spec.len());
        for (w, dv) in spec.frequencies().iter().zip(spec.values()) {
            let g = plant.freq_response(*w)?;
            let k = controller.freq_response(*w)?;
            let s = ComplexMatrix::identity(nu, nu) + k * g;
            let u: ComplexVector = s
                .lu()
                .solve(dv)
                .ok_or_else(|| Error::Singular(format!("I + KG is singular at ω = {w}")))?;
            values.push(u);
        }
        out.push(SpectrumSamples::new_unchecked(spec.frequencies().to_vec(), values));
    }
    Ok(out)
}
