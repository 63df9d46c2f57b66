//! Frequency-domain trajectory data and the data equations that characterize
//! every finite-length trajectory of an LTI system.
//!
//! Given sampled input and output spectra `U_m`, `Y_m` at frequencies
//! `ω_m ∈ [0, π)`, a real pair `(u, y)` of length `L` is a trajectory of the
//! system iff it lies in the column space of
//!
//! ```text
//! [ Re F_L(U)  Im F_L(U) ]
//! [ Re F_L(Y)  Im F_L(Y) ]      F_L(V) = [ W_L(ω_0) ⊗ V_0  …  W_L(ω_{M−1}) ⊗ V_{M−1} ]
//! ```
//!
//! provided the input samples are persistently exciting of order `L + n_x`.
//! Conjugate symmetry of real spectra is what allows the split into real and
//! imaginary parts, so the combination vector stays real.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::numcore::{kron_vec, least_squares, numerical_rank, ComplexMatrix, ComplexVector, RealMatrix, RealVector};
use crate::signals::{csv_err, fmt_f64, hankel, parse_err, parse_f64, PeReport, TimeSeries};

/// Default relative tolerance for trajectory membership.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-8;

/// Spectrum samples, one complex vector per frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSamples {
    frequencies: Vec<f64>,
    values: Vec<ComplexVector>,
}

impl SpectrumSamples {
    pub fn new(frequencies: Vec<f64>, values: Vec<ComplexVector>) -> Result<Self> {
        if frequencies.is_empty() {
            return invalid("spectrum needs at least one frequency");
        }
        if frequencies.len() != values.len() {
            return invalid("one value vector per frequency required");
        }
        for &w in &frequencies {
            if !(0.0..PI).contains(&w) {
                return invalid(format!("frequency {w} outside [0, π)"));
            }
        }
        let mut sorted = frequencies.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return invalid("frequencies must be distinct (one direction per frequency)");
        }
        let nv = values[0].len();
        if nv == 0 || values.iter().any(|v| v.len() != nv) {
            return invalid("spectrum value vectors must share a non-zero channel count");
        }
        if values
            .iter()
            .flat_map(|v| v.iter())
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return invalid("spectrum contains non-finite values");
        }
        Ok(Self { frequencies, values })
    }

    pub(crate) fn new_unchecked(frequencies: Vec<f64>, values: Vec<ComplexVector>) -> Self {
        Self { frequencies, values }
    }

    /// Scalar spectrum from plain complex samples.
    pub fn scalar(frequencies: Vec<f64>, values: &[Complex64]) -> Result<Self> {
        let v = values.iter().map(|z| ComplexVector::from_element(1, *z)).collect();
        Self::new(frequencies, v)
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn values(&self) -> &[ComplexVector] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.values[0].len()
    }
}

/// Input and output spectra sampled on the same frequency set.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqData {
    pub input: SpectrumSamples,
    pub output: SpectrumSamples,
}

impl FreqData {
    pub fn new(input: SpectrumSamples, output: SpectrumSamples) -> Result<Self> {
        if input.frequencies() != output.frequencies() {
            return invalid("input and output spectra must share the frequency list");
        }
        Ok(Self { input, output })
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    /// CSV with columns `freq, u0_re, u0_im, …, y0_re, y0_im, …`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["freq".to_string()];
        for (prefix, n) in [("u", self.input.channels()), ("y", self.output.channels())] {
            for c in 0..n {
                header.push(format!("{prefix}{c}_re"));
                header.push(format!("{prefix}{c}_im"));
            }
        }
        wr.write_record(&header).map_err(csv_err)?;
        for m in 0..self.len() {
            let mut row = vec![fmt_f64(self.input.frequencies()[m])];
            for z in self.input.values()[m].iter().chain(self.output.values()[m].iter()) {
                row.push(fmt_f64(z.re));
                row.push(fmt_f64(z.im));
            }
            wr.write_record(&row).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header: Vec<String> = rd
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        if header.first().map(String::as_str) != Some("freq") {
            return Err(parse_err(1, "first column must be 'freq'"));
        }
        let count = |p: &str| header.iter().filter(|h| h.starts_with(p) && h.ends_with("_re")).count();
        let (nu, ny) = (count("u"), count("y"));
        if nu == 0 || ny == 0 || header.len() != 1 + 2 * (nu + ny) {
            return Err(parse_err(
                1,
                "header must list freq then Re/Im pairs for u and y channels",
            ));
        }
        let (mut freqs, mut uv, mut yv) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in rd.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
            let vals = rec.iter().map(|f| parse_f64(f, line)).collect::<Result<Vec<_>>>()?;
            if vals.len() != header.len() {
                return Err(parse_err(line, "wrong number of fields"));
            }
            freqs.push(vals[0]);
            let pair = |k: usize| Complex64::new(vals[1 + 2 * k], vals[2 + 2 * k]);
            uv.push(ComplexVector::from_fn(nu, |c, _| pair(c)));
            yv.push(ComplexVector::from_fn(ny, |c, _| pair(nu + c)));
        }
        if freqs.is_empty() {
            return Err(parse_err(2, "no frequency rows"));
        }
        Self::new(
            SpectrumSamples::new(freqs.clone(), uv)?,
            SpectrumSamples::new(freqs, yv)?,
        )
    }
}

/// Which construction produced a set of data equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataForm {
    Hankel,
    Frequency,
}

/// Stacked data matrix `[M_u; M_y]` whose column space holds the depth-`L` trajectories.
///
/// Rows are ordered as the `u` block then the `y` block; inside each block
/// samples are time-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct DataEquations {
    matrix: RealMatrix,
    nu: usize,
    ny: usize,
    depth: usize,
    form: DataForm,
}

impl DataEquations {
    pub fn new(matrix: RealMatrix, nu: usize, ny: usize, depth: usize, form: DataForm) -> Result<Self> {
        if matrix.nrows() != (nu + ny) * depth {
            return invalid("data matrix rows must equal (n_u + n_y)·L");
        }
        if matrix.ncols() == 0 {
            return invalid("data matrix has no columns");
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return invalid("data matrix contains non-finite entries");
        }
        Ok(Self {
            matrix,
            nu,
            ny,
            depth,
            form,
        })
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.matrix
    }
    pub fn nu(&self) -> usize {
        self.nu
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn depth(&self) -> usize {
        self.depth
    }
    pub fn form(&self) -> DataForm {
        self.form
    }
    pub fn lhs_dim(&self) -> usize {
        (self.nu + self.ny) * self.depth
    }
    /// Dimension of the combination vector `g`.
    pub fn width(&self) -> usize {
        self.matrix.ncols()
    }

    /// Rows of the `u` block.
    pub fn u_block(&self) -> RealMatrix {
        self.matrix.rows(0, self.nu * self.depth).into_owned()
    }

    /// Rows of the `y` block.
    pub fn y_block(&self) -> RealMatrix {
        self.matrix
            .rows(self.nu * self.depth, self.ny * self.depth)
            .into_owned()
    }

    /// The trajectory `(u; y)` generated by a combination vector.
    pub fn trajectory(&self, g: &RealVector) -> Result<(TimeSeries, TimeSeries)> {
        if g.len() != self.width() {
            return invalid("combination vector has the wrong length");
        }
        let w = &self.matrix * g;
        let split =
            |off: usize, nv: usize| TimeSeries::new(RealMatrix::from_fn(self.depth, nv, |k, c| w[off + k * nv + c]));
        Ok((split(0, self.nu)?, split(self.nu * self.depth, self.ny)?))
    }
}

/// `W_L(ω) = (1, e^{jω}, …, e^{jω(L−1)})`.
pub fn w_vector(omega: f64, len: usize) -> ComplexVector {
    ComplexVector::from_fn(len, |l, _| Complex64::from_polar(1.0, omega * l as f64))
}

/// `F_L(V, ω)`: column `m` is `W_L(ω_m) ⊗ V_m`.
pub fn f_matrix(v: &SpectrumSamples, depth: usize) -> Result<ComplexMatrix> {
    if depth == 0 {
        return invalid("depth must be at least 1");
    }
    let nv = v.channels();
    let mut f = ComplexMatrix::zeros(nv * depth, v.len());
    for (m, (w, val)) in v.frequencies().iter().zip(v.values()).enumerate() {
        f.set_column(m, &kron_vec(&w_vector(*w, depth), val));
    }
    Ok(f)
}

/// Frequency-domain persistence of excitation: `rank [F_L  F_L*] = n_v·L`.
pub fn is_pe_freq(v: &SpectrumSamples, order: usize, tol: f64) -> Result<PeReport> {
    let f = f_matrix(v, order)?;
    let m = f.ncols();
    let mut both = ComplexMatrix::zeros(f.nrows(), 2 * m);
    both.columns_mut(0, m).copy_from(&f);
    both.columns_mut(m, m).copy_from(&f.map(|z| z.conj()));
    let rank = numerical_rank(&both, tol)?;
    let required = v.channels() * order;
    Ok(PeReport {
        persistently_exciting: rank == required,
        rank,
        required,
    })
}

fn re_im_block(f: &ComplexMatrix) -> RealMatrix {
    let (r, m) = f.shape();
    RealMatrix::from_fn(r, 2 * m, |i, j| if j < m { f[(i, j)].re } else { f[(i, j - m)].im })
}

/// Real data equations `[Re F_L(U) Im F_L(U); Re F_L(Y) Im F_L(Y)]`, width `2M`.
pub fn freq_data_equations(data: &FreqData, depth: usize) -> Result<DataEquations> {
    let fu = re_im_block(&f_matrix(&data.input, depth)?);
    let fy = re_im_block(&f_matrix(&data.output, depth)?);
    let (nu, ny) = (data.input.channels(), data.output.channels());
    let mut m = RealMatrix::zeros((nu + ny) * depth, fu.ncols());
    m.rows_mut(0, nu * depth).copy_from(&fu);
    m.rows_mut(nu * depth, ny * depth).copy_from(&fy);
    DataEquations::new(m, nu, ny, depth, DataForm::Frequency)
}

/// Stacked Hankel data equations `[H_L(u); H_L(y)]`, width `N − L + 1`.
pub fn hankel_data_equations(u: &TimeSeries, y: &TimeSeries, depth: usize) -> Result<DataEquations> {
    if u.len() != y.len() {
        return invalid(format!(
            "input length {} differs from output length {}",
            u.len(),
            y.len()
        ));
    }
    let hu = hankel(u, depth)?;
    let hy = hankel(y, depth)?;
    let (nu, ny) = (u.channels(), y.channels());
    let mut m = RealMatrix::zeros((nu + ny) * depth, hu.ncols());
    m.rows_mut(0, nu * depth).copy_from(&hu);
    m.rows_mut(nu * depth, ny * depth).copy_from(&hy);
    DataEquations::new(m, nu, ny, depth, DataForm::Hankel)
}

/// Spectrum samples from FRF measurements along one input direction per frequency:
/// `U_m = r_m`, `Y_m = G(e^{jω_m}) r_m`.
pub fn frf_to_freq_data(frequencies: &[f64], frf: &[ComplexMatrix], directions: &[ComplexVector]) -> Result<FreqData> {
    if frf.len() != frequencies.len() || directions.len() != frequencies.len() {
        return invalid("one FRF matrix and one direction per frequency required");
    }
    let mut outputs = Vec::with_capacity(frf.len());
    for (m, (g, r)) in frf.iter().zip(directions).enumerate() {
        if g.ncols() != r.len() {
            return invalid(format!(
                "direction {m} has length {}, FRF has {} inputs",
                r.len(),
                g.ncols()
            ));
        }
        if r.iter().all(|z| z.norm() == 0.0) {
            return invalid(format!("direction {m} is zero"));
        }
        outputs.push(g * r);
    }
    FreqData::new(
        SpectrumSamples::new(frequencies.to_vec(), directions.to_vec())?,
        SpectrumSamples::new(frequencies.to_vec(), outputs)?,
    )
}

/// Unit-direction scalar data `U = 1`, `Y = Ĝ` for SISO FRF measurements.
pub fn siso_frf_data(frequencies: &[f64], frf: &[Complex64]) -> Result<FreqData> {
    let g: Vec<ComplexMatrix> = frf.iter().map(|z| ComplexMatrix::from_element(1, 1, *z)).collect();
    let r = vec![ComplexVector::from_element(1, Complex64::new(1.0, 0.0)); frf.len()];
    frf_to_freq_data(frequencies, &g, &r)
}

/// Result of a least-squares membership test.
#[derive(Debug, Clone)]
pub struct Consistency {
    pub consistent: bool,
    pub residual: f64,
    pub g: RealVector,
}

/// Checks whether `(u; y)` lies in the column space of the data matrix, up to
/// `tol · (1 + ‖(u; y)‖₂)`.
pub fn is_trajectory_consistent(eqs: &DataEquations, u: &TimeSeries, y: &TimeSeries, tol: f64) -> Result<Consistency> {
    if u.len() != eqs.depth() || y.len() != eqs.depth() {
        return invalid(format!("trajectory length must equal the data depth {}", eqs.depth()));
    }
    if u.channels() != eqs.nu() || y.channels() != eqs.ny() {
        return invalid("trajectory channel counts do not match the data");
    }
    let mut rhs = u.stacked(0, u.len());
    rhs.extend(y.stacked(0, y.len()));
    let rhs = RealVector::from_vec(rhs);
    let g = least_squares(eqs.matrix(), &rhs)?;
    let residual = (eqs.matrix() * &g - &rhs).norm();
    Ok(Consistency {
        consistent: residual <= tol * (1.0 + rhs.norm()),
        residual,
        g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{bin_frequency, CASE_STUDY_BINS, CASE_STUDY_PERIOD};
    use nalgebra::dmatrix;

    const J: Complex64 = Complex64::new(0.0, 1.0);
    const ONE: Complex64 = Complex64::new(1.0, 0.0);

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-14
    }

    #[test]
    fn w_vector_cases() {
        assert!(w_vector(0.0, 3).iter().all(|z| close(*z, ONE)));
        let w = w_vector(PI / 2.0, 3);
        assert!(close(w[0], ONE) && close(w[1], J) && close(w[2], -ONE));
        assert_eq!(w_vector(1.234, 1).len(), 1);
        assert!(close(w_vector(1.234, 1)[0], ONE));
    }

    #[test]
    fn f_matrix_scalar_dc() {
        let v = SpectrumSamples::scalar(vec![0.0], &[ONE]).unwrap();
        let f = f_matrix(&v, 2).unwrap();
        assert_eq!(f.shape(), (2, 1));
        assert!(close(f[(0, 0)], ONE) && close(f[(1, 0)], ONE));
    }

    #[test]
    fn f_matrix_kronecker_order() {
        let v = SpectrumSamples::new(
            vec![PI / 2.0],
            vec![ComplexVector::from_vec(vec![2.0 * ONE, 3.0 * ONE])],
        )
        .unwrap();
        let f = f_matrix(&v, 2).unwrap();
        let expect = [2.0 * ONE, 3.0 * ONE, 2.0 * J, 3.0 * J];
        for (i, e) in expect.iter().enumerate() {
            assert!(close(f[(i, 0)], *e), "row {i}: {}", f[(i, 0)]);
        }
    }

    #[test]
    fn f_matrix_two_frequencies() {
        let v = SpectrumSamples::scalar(vec![0.0, PI / 2.0], &[ONE, ONE]).unwrap();
        let f = f_matrix(&v, 2).unwrap();
        assert!(close(f[(0, 0)], ONE) && close(f[(0, 1)], ONE));
        assert!(close(f[(1, 0)], ONE) && close(f[(1, 1)], J));
    }

    fn case_study_unit_input() -> SpectrumSamples {
        let w: Vec<f64> = CASE_STUDY_BINS
            .iter()
            .map(|&b| bin_frequency(b, CASE_STUDY_PERIOD))
            .collect();
        SpectrumSamples::scalar(w, &[ONE; 16]).unwrap()
    }

    #[test]
    fn unit_input_pe_order_32() {
        let v = case_study_unit_input();
        let r32 = is_pe_freq(&v, 32, 1e-9).unwrap();
        assert!(r32.persistently_exciting);
        assert_eq!(r32.rank, 32);
        let r33 = is_pe_freq(&v, 33, 1e-9).unwrap();
        assert!(!r33.persistently_exciting);
        assert_eq!(r33.rank, 32);
    }

    #[test]
    fn single_dc_line_pe_order_two_fails() {
        let v = SpectrumSamples::scalar(vec![0.0], &[ONE]).unwrap();
        let r = is_pe_freq(&v, 2, 1e-9).unwrap();
        assert_eq!(r.rank, 1);
        assert!(!r.persistently_exciting);
    }

    #[test]
    fn freq_equations_dc() {
        let data = FreqData::new(
            SpectrumSamples::scalar(vec![0.0], &[ONE]).unwrap(),
            SpectrumSamples::scalar(vec![0.0], &[-2.0 * ONE]).unwrap(),
        )
        .unwrap();
        let eq = freq_data_equations(&data, 1).unwrap();
        assert_eq!(eq.matrix(), &dmatrix![1.0, 0.0; -2.0, 0.0]);
        assert_eq!(eq.form(), DataForm::Frequency);
    }

    #[test]
    fn freq_equations_quarter_turn() {
        let data = FreqData::new(
            SpectrumSamples::scalar(vec![PI / 2.0], &[ONE]).unwrap(),
            SpectrumSamples::scalar(vec![PI / 2.0], &[J]).unwrap(),
        )
        .unwrap();
        let eq = freq_data_equations(&data, 2).unwrap();
        let expect = dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 1.0; -1.0, 0.0];
        assert!((eq.matrix() - expect).amax() < 1e-15);
    }

    #[test]
    fn hankel_equations_shapes() {
        let u = TimeSeries::scalar(&[1.0, 2.0]).unwrap();
        let y = TimeSeries::scalar(&[3.0, 4.0]).unwrap();
        assert_eq!(
            hankel_data_equations(&u, &y, 1).unwrap().matrix(),
            &dmatrix![1.0, 2.0; 3.0, 4.0]
        );
        let one = hankel_data_equations(&u, &y, 2).unwrap();
        assert_eq!(one.matrix(), &dmatrix![1.0; 2.0; 3.0; 4.0]);
        let long = TimeSeries::scalar(&[0.5; 100]).unwrap();
        assert_eq!(hankel_data_equations(&long, &long, 16).unwrap().width(), 85);
        let short = TimeSeries::scalar(&[0.5; 99]).unwrap();
        assert!(hankel_data_equations(&long, &short, 16).is_err());
    }

    #[test]
    fn frf_unit_direction() {
        let w = vec![0.1, 0.5];
        let g = [Complex64::new(1.0, -1.0), Complex64::new(0.2, 0.3)];
        let data = siso_frf_data(&w, &g).unwrap();
        assert!(data.input.values().iter().all(|v| v[0] == ONE));
        assert_eq!(data.output.values()[1][0], g[1]);
    }

    #[test]
    fn frf_direction_scaling_and_columns() {
        let g = ComplexMatrix::from_row_slice(2, 2, &[ONE, 2.0 * J, 3.0 * ONE, -ONE]);
        let a = Complex64::new(0.5, -2.0);
        let r = ComplexVector::from_vec(vec![ONE, J]);
        let base = frf_to_freq_data(&[0.3], std::slice::from_ref(&g), std::slice::from_ref(&r)).unwrap();
        let scaled = frf_to_freq_data(&[0.3], std::slice::from_ref(&g), &[r.map(|z| z * a)]).unwrap();
        for c in 0..2 {
            assert!(close(scaled.input.values()[0][c], base.input.values()[0][c] * a));
            assert!(close(scaled.output.values()[0][c], base.output.values()[0][c] * a));
        }
        let e1 = ComplexVector::from_vec(vec![ONE, Complex64::new(0.0, 0.0)]);
        let col = frf_to_freq_data(&[0.3], std::slice::from_ref(&g), &[e1]).unwrap();
        assert_eq!(col.output.values()[0], g.column(0).into_owned());
        let zero = ComplexVector::zeros(2);
        assert!(frf_to_freq_data(&[0.3], &[g], &[zero]).is_err());
    }

    #[test]
    fn zero_trajectory_is_consistent() {
        let data = FreqData::new(case_study_unit_input(), case_study_unit_input()).unwrap();
        let eq = freq_data_equations(&data, 4).unwrap();
        let z = TimeSeries::scalar(&[0.0; 4]).unwrap();
        let c = is_trajectory_consistent(&eq, &z, &z, 1e-8).unwrap();
        assert!(c.consistent);
        assert!(c.g.norm() < 1e-14);
    }

    #[test]
    fn spectrum_rejects_duplicates_and_range() {
        assert!(SpectrumSamples::scalar(vec![0.1, 0.1], &[ONE, ONE]).is_err());
        assert!(SpectrumSamples::scalar(vec![PI], &[ONE]).is_err());
        assert!(SpectrumSamples::scalar(vec![-0.1], &[ONE]).is_err());
    }

    #[test]
    fn freq_data_csv_round_trip() {
        let w = vec![0.1, 0.7, 2.9];
        let g = [
            Complex64::new(1.0 / 3.0, -1.0),
            Complex64::new(0.2, 1e-17),
            Complex64::new(-7.5, 0.3),
        ];
        let data = siso_frf_data(&w, &g).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        assert_eq!(FreqData::read_csv(buf.as_slice()).unwrap(), data);
    }
}
