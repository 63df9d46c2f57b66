//! Time-domain sequences: Hankel matrices, persistence of excitation,
//! multi-sine synthesis and per-period DFTs.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::freqdomain::SpectrumSamples;
use crate::numcore::{numerical_rank, ComplexVector, RealMatrix};

/// A multichannel sampled sequence, stored as an `N × n_v` matrix (one row per sample).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    data: RealMatrix,
    names: Vec<String>,
}

impl TimeSeries {
    pub fn new(data: RealMatrix) -> Result<Self> {
        let names = (0..data.ncols()).map(|c| format!("ch{c}")).collect();
        Self::with_names(data, names)
    }

    pub fn with_names(data: RealMatrix, names: Vec<String>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return invalid("time series needs at least one sample and one channel");
        }
        if names.len() != data.ncols() {
            return invalid("one channel name per column required");
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("time series contains non-finite samples");
        }
        Ok(Self { data, names })
    }

    /// Single-channel series from a slice of samples.
    pub fn scalar(samples: &[f64]) -> Result<Self> {
        Self::new(RealMatrix::from_column_slice(samples.len(), 1, samples))
    }

    /// Builds a series from a list of equally sized sample vectors.
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = samples.first() else {
            return invalid("empty sample list");
        };
        let nv = first.len();
        if samples.iter().any(|s| s.len() != nv) {
            return invalid("samples have inconsistent channel counts");
        }
        Self::new(RealMatrix::from_fn(samples.len(), nv, |r, c| samples[r][c]))
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rename(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.channels() {
            return invalid("one channel name per column required");
        }
        self.names = names;
        Ok(self)
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.data
    }

    pub fn get(&self, k: usize, ch: usize) -> f64 {
        self.data[(k, ch)]
    }

    pub fn sample(&self, k: usize) -> Vec<f64> {
        self.data.row(k).iter().copied().collect()
    }

    /// Channel `ch` as a plain vector.
    pub fn channel(&self, ch: usize) -> Vec<f64> {
        self.data.column(ch).iter().copied().collect()
    }

    /// Samples `start..start+len` stacked into one vector (sample-major).
    pub fn stacked(&self, start: usize, len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(len * self.channels());
        for k in start..start + len {
            out.extend(self.data.row(k).iter());
        }
        out
    }

    /// Sub-series of samples `start..start+len`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return invalid(format!(
                "window {start}..{} outside series of length {}",
                start + len,
                self.len()
            ));
        }
        Ok(Self {
            data: self.data.rows(start, len).into_owned(),
            names: self.names.clone(),
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.names).map_err(csv_err)?;
        for k in 0..self.len() {
            wr.write_record(self.data.row(k).iter().map(|v| fmt_f64(*v)))
                .map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let names: Vec<String> = rd
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        if names.is_empty() || names.iter().all(|n| n.is_empty()) {
            return Err(parse_err(1, "missing header row"));
        }
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
            if rec.len() != names.len() {
                return Err(parse_err(
                    line,
                    format!("expected {} fields, found {}", names.len(), rec.len()),
                ));
            }
            let row = rec.iter().map(|f| parse_f64(f, line)).collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(parse_err(2, "no samples"));
        }
        let n = rows.len();
        let data = RealMatrix::from_fn(n, names.len(), |r, c| rows[r][c]);
        Self::with_names(data, names)
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn parse_f64(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite value {field:?}")));
    }
    Ok(v)
}

pub(crate) fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Depth-`depth` block Hankel matrix: column `i` stacks samples `i..i+depth`.
pub fn hankel(x: &TimeSeries, depth: usize) -> Result<RealMatrix> {
    let n = x.len();
    if depth == 0 || depth > n {
        return invalid(format!("Hankel depth {depth} must lie in 1..={n}"));
    }
    let nv = x.channels();
    let cols = n - depth + 1;
    Ok(RealMatrix::from_fn(nv * depth, cols, |r, c| x.get(c + r / nv, r % nv)))
}

/// Outcome of a rank-based excitation test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeReport {
    pub persistently_exciting: bool,
    pub rank: usize,
    pub required: usize,
}

/// Time-domain persistence of excitation: `rank H_L(x) = n_v·L`.
pub fn is_pe_time(x: &TimeSeries, order: usize, tol: f64) -> Result<PeReport> {
    let h = hankel(x, order)?;
    let rank = numerical_rank(&h, tol)?;
    let required = x.channels() * order;
    Ok(PeReport {
        persistently_exciting: rank == required,
        rank,
        required,
    })
}

/// Periodic sum-of-cosines excitation.
#[derive(Debug, Clone, PartialEq)]
pub struct MultisineSpec {
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
    pub period_length: usize,
    pub periods: usize,
}

/// DFT bins of an 80-sample period that reproduce the 16-line excitation grid of the case study.
pub const CASE_STUDY_BINS: [usize; 16] = [1, 4, 6, 9, 11, 14, 16, 19, 21, 24, 26, 29, 31, 34, 36, 39];
pub const CASE_STUDY_PERIOD: usize = 80;

/// Frequency `2π·bin/period_length`.
pub fn bin_frequency(bin: usize, period_length: usize) -> f64 {
    2.0 * PI * bin as f64 / period_length as f64
}

/// Returns the integer DFT bin of `omega` on a `period_length` grid, if it lies on it.
pub fn grid_bin(omega: f64, period_length: usize) -> Option<i64> {
    let k = omega * period_length as f64 / (2.0 * PI);
    let kr = k.round();
    ((k - kr).abs() <= 1e-9 * (1.0 + kr.abs())).then_some(kr as i64)
}

impl MultisineSpec {
    /// Equal-amplitude multi-sine on the given bins with phases drawn uniformly from `[0, 2π)`.
    pub fn random_phase(
        bins: &[usize],
        amplitude: f64,
        period_length: usize,
        periods: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = Self {
            frequencies: bins.iter().map(|&b| bin_frequency(b, period_length)).collect(),
            amplitudes: vec![amplitude; bins.len()],
            phases: bins.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect(),
            period_length,
            periods,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.frequencies.len();
        if m == 0 {
            return invalid("multi-sine needs at least one frequency");
        }
        if self.amplitudes.len() != m || self.phases.len() != m {
            return invalid("multi-sine frequency, amplitude and phase lists differ in length");
        }
        if self.period_length == 0 || self.periods == 0 {
            return invalid("multi-sine period length and period count must be positive");
        }
        if self.frequencies.windows(2).any(|w| !(w[0] < w[1])) {
            return invalid("multi-sine frequencies must be strictly increasing");
        }
        for &w in &self.frequencies {
            if !(0.0..PI).contains(&w) {
                return invalid(format!("frequency {w} outside [0, π)"));
            }
            if grid_bin(w, self.period_length).is_none() {
                return invalid(format!("frequency {w} is not on the 2πk/{} grid", self.period_length));
            }
        }
        if self.amplitudes.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return invalid("multi-sine amplitudes must be positive");
        }
        if self.phases.iter().any(|p| !p.is_finite()) {
            return invalid("multi-sine phases must be finite");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.period_length * self.periods
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value at integer time `k`.
    pub fn value(&self, k: usize) -> f64 {
        // reduce k modulo the period so that every period is bitwise identical
        let kl = (k % self.period_length) as f64;
        self.frequencies
            .iter()
            .zip(&self.amplitudes)
            .zip(&self.phases)
            .map(|((w, a), p)| a * (w * kl + p).cos())
            .sum()
    }
}

/// Samples `periods · period_length` steps of the multi-sine.
pub fn synth_multisine(spec: &MultisineSpec) -> Result<TimeSeries> {
    spec.validate()?;
    let n = spec.len();
    let samples: Vec<f64> = (0..n).map(|k| spec.value(k)).collect();
    TimeSeries::scalar(&samples)?.rename(vec!["d".into()])
}

/// Unnormalized DFT of each full period of `x` at the requested grid frequencies.
pub fn per_period_dft(x: &TimeSeries, period_length: usize, frequencies: &[f64]) -> Result<Vec<SpectrumSamples>> {
    if period_length == 0 || !x.len().is_multiple_of(period_length) {
        return invalid(format!(
            "series length {} is not a multiple of the period {period_length}",
            x.len()
        ));
    }
    let mut bins = Vec::with_capacity(frequencies.len());
    for &w in frequencies {
        let Some(b) = grid_bin(w, period_length) else {
            return invalid(format!("frequency {w} is not on the 2πk/{period_length} grid"));
        };
        bins.push(b);
    }
    let nv = x.channels();
    let periods = x.len() / period_length;
    // twiddles computed from the integer bin to stay exact on the grid
    let twiddle: Vec<Vec<Complex64>> = bins
        .iter()
        .map(|&b| {
            (0..period_length)
                .map(|k| {
                    let idx = (b * k as i64).rem_euclid(period_length as i64) as f64;
                    Complex64::from_polar(1.0, -2.0 * PI * idx / period_length as f64)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(periods);
    for p in 0..periods {
        let base = p * period_length;
        let values = twiddle
            .iter()
            .map(|tw| {
                ComplexVector::from_fn(nv, |ch, _| {
                    tw.iter().enumerate().map(|(k, t)| t * x.get(base + k, ch)).sum()
                })
            })
            .collect();
        out.push(SpectrumSamples::new_unchecked(frequencies.to_vec(), values));
    }
    Ok(out)
}
