//! Discrete-time LTI systems: state-space and SISO transfer-function forms,
//! simulation, frequency response and feedback interconnection.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::numcore::{singular_values, ComplexMatrix, RealMatrix, RealVector};
use crate::signals::TimeSeries;

/// `x⁺ = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    a: RealMatrix,
    b: RealMatrix,
    c: RealMatrix,
    d: RealMatrix,
}

impl StateSpace {
    pub fn new(a: RealMatrix, b: RealMatrix, c: RealMatrix, d: RealMatrix) -> Result<Self> {
        let nx = a.nrows();
        if a.ncols() != nx {
            return invalid(format!("A must be square, got {}x{}", a.nrows(), a.ncols()));
        }
        if b.nrows() != nx || c.ncols() != nx {
            return invalid("B rows and C columns must equal the state dimension");
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return invalid("D must be n_y x n_u");
        }
        if d.nrows() == 0 || d.ncols() == 0 {
            return invalid("system needs at least one input and one output");
        }
        if [&a, &b, &c, &d].iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return invalid("state-space matrices contain non-finite entries");
        }
        Ok(Self { a, b, c, d })
    }

    /// Static gain `y = D u` with no state.
    pub fn static_gain(d: RealMatrix) -> Result<Self> {
        let (ny, nu) = d.shape();
        Self::new(
            RealMatrix::zeros(0, 0),
            RealMatrix::zeros(0, nu),
            RealMatrix::zeros(ny, 0),
            d,
        )
    }

    pub fn a(&self) -> &RealMatrix {
        &self.a
    }
    pub fn b(&self) -> &RealMatrix {
        &self.b
    }
    pub fn c(&self) -> &RealMatrix {
        &self.c
    }
    pub fn d(&self) -> &RealMatrix {
        &self.d
    }
    pub fn nx(&self) -> usize {
        self.a.nrows()
    }
    pub fn nu(&self) -> usize {
        self.b.ncols()
    }
    pub fn ny(&self) -> usize {
        self.c.nrows()
    }

    pub fn step(&self, x: &RealVector, u: &RealVector) -> (RealVector, RealVector) {
        let y = &self.c * x + &self.d * u;
        let xn = &self.a * x + &self.b * u;
        (xn, y)
    }

    /// Runs the recursion from `x0`; returns the outputs and the state after the last input.
    pub fn simulate(
        &self,
        x0: &RealVector,
        u: &TimeSeries,
        noise: Option<&TimeSeries>,
    ) -> Result<(TimeSeries, RealVector)> {
        if x0.len() != self.nx() {
            return invalid(format!("initial state has length {}, expected {}", x0.len(), self.nx()));
        }
        if u.channels() != self.nu() {
            return invalid(format!("input has {} channels, system has {}", u.channels(), self.nu()));
        }
        if let Some(n) = noise {
            if n.len() != u.len() || n.channels() != self.ny() {
                return invalid("noise must match the input length and the output dimension");
            }
        }
        let mut x = x0.clone();
        let mut y = RealMatrix::zeros(u.len(), self.ny());
        for k in 0..u.len() {
            let uk = DVector::from_vec(u.sample(k));
            let (xn, mut yk) = self.step(&x, &uk);
            if let Some(n) = noise {
                yk += DVector::from_vec(n.sample(k));
            }
            y.set_row(k, &yk.transpose());
            x = xn;
        }
        let names = (0..self.ny()).map(|i| format!("y{i}")).collect();
        Ok((TimeSeries::with_names(y, names)?, x))
    }

    /// `C (e^{jω} I − A)⁻¹ B + D`.
    pub fn freq_response(&self, omega: f64) -> Result<ComplexMatrix> {
        let d = self.d.map(|v| Complex64::new(v, 0.0));
        let nx = self.nx();
        if nx == 0 {
            return Ok(d);
        }
        let z = Complex64::from_polar(1.0, omega);
        let resolvent = ComplexMatrix::from_fn(nx, nx, |i, j| {
            let diag = if i == j { z } else { Complex64::new(0.0, 0.0) };
            diag - self.a[(i, j)]
        });
        let s = singular_values(&resolvent);
        let (smax, smin) = (s[0], s[nx - 1]);
        if smin <= 1e-13 * smax.max(1.0) {
            return Err(Error::Singular(format!(
                "zI - A is singular at ω = {omega} (pole on the unit circle)"
            )));
        }
        let b = self.b.map(|v| Complex64::new(v, 0.0));
        let c = self.c.map(|v| Complex64::new(v, 0.0));
        let x = resolvent
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Singular(format!("zI - A is singular at ω = {omega}")))?;
        Ok(c * x + d)
    }

    /// Extended observability matrix `[C; CA; …; CA^{len−1}]`.
    pub fn observability(&self, len: usize) -> RealMatrix {
        let (ny, nx) = (self.ny(), self.nx());
        let mut o = RealMatrix::zeros(len * ny, nx);
        let mut cak = self.c.clone();
        for k in 0..len {
            o.view_mut((k * ny, 0), (ny, nx)).copy_from(&cak);
            cak = &cak * &self.a;
        }
        o
    }

    /// Block lower-triangular Toeplitz matrix of Markov parameters mapping stacked inputs to stacked outputs.
    pub fn toeplitz(&self, len: usize) -> RealMatrix {
        let (ny, nu) = (self.ny(), self.nu());
        let mut markov = Vec::with_capacity(len);
        markov.push(self.d.clone());
        let mut akb = self.b.clone();
        for _ in 1..len {
            markov.push(&self.c * &akb);
            akb = &self.a * &akb;
        }
        let mut t = RealMatrix::zeros(len * ny, len * nu);
        for i in 0..len {
            for j in 0..=i {
                t.view_mut((i * ny, j * nu), (ny, nu)).copy_from(&markov[i - j]);
            }
        }
        t
    }

    /// `[B, AB, …, A^{n−1}B]`.
    pub fn controllability(&self) -> RealMatrix {
        let (nx, nu) = (self.nx(), self.nu());
        let mut m = RealMatrix::zeros(nx, nx * nu);
        let mut akb = self.b.clone();
        for k in 0..nx {
            m.view_mut((0, k * nu), (nx, nu)).copy_from(&akb);
            akb = &self.a * &akb;
        }
        m
    }

    pub fn is_controllable(&self, tol: f64) -> Result<bool> {
        if self.nx() == 0 {
            return Ok(true);
        }
        Ok(crate::numcore::numerical_rank(&self.controllability(), tol)? == self.nx())
    }

    pub fn spectral_radius(&self) -> f64 {
        crate::numcore::spectral_radius(&self.a)
    }
}

/// Rational `num(z)/den(z)`, coefficients in descending powers of `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct SisoTransferFunction {
    numerator: Vec<f64>,
    denominator: Vec<f64>,
}

impl SisoTransferFunction {
    pub fn new(numerator: Vec<f64>, denominator: Vec<f64>) -> Result<Self> {
        if numerator.is_empty() || denominator.is_empty() {
            return invalid("transfer function coefficient lists must be non-empty");
        }
        if numerator.iter().chain(&denominator).any(|v| !v.is_finite()) {
            return invalid("transfer function coefficients must be finite");
        }
        if denominator[0] == 0.0 {
            return invalid("denominator leading coefficient must be non-zero");
        }
        let lead_zeros = numerator.iter().take_while(|v| **v == 0.0).count();
        let num_deg = numerator.len().saturating_sub(lead_zeros + 1);
        if lead_zeros < numerator.len() && num_deg > denominator.len() - 1 {
            return invalid("improper transfer function: deg(num) > deg(den)");
        }
        Ok(Self { numerator, denominator })
    }

    pub fn numerator(&self) -> &[f64] {
        &self.numerator
    }

    pub fn denominator(&self) -> &[f64] {
        &self.denominator
    }

    pub fn order(&self) -> usize {
        self.denominator.len() - 1
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        horner(&self.numerator, z) / horner(&self.denominator, z)
    }

    /// `G(e^{jω})`.
    pub fn freq_response(&self, omega: f64) -> Complex64 {
        self.eval(Complex64::from_polar(1.0, omega))
    }

    /// Controllable canonical realization.
    pub fn to_state_space(&self) -> Result<StateSpace> {
        let n = self.order();
        let lead = self.denominator[0];
        let den: Vec<f64> = self.denominator.iter().map(|v| v / lead).collect();
        // right-align the numerator against the denominator
        let mut num = vec![0.0; n + 1];
        let trimmed: Vec<f64> = self
            .numerator
            .iter()
            .skip_while(|v| **v == 0.0)
            .map(|v| v / lead)
            .collect();
        if trimmed.len() > n + 1 {
            return invalid("improper transfer function");
        }
        num[n + 1 - trimmed.len()..].copy_from_slice(&trimmed);
        let feedthrough = num[0];
        let mut a = RealMatrix::zeros(n, n);
        let mut b = RealMatrix::zeros(n, 1);
        let mut c = RealMatrix::zeros(1, n);
        if n > 0 {
            for j in 0..n {
                a[(0, j)] = -den[j + 1];
                c[(0, j)] = num[j + 1] - feedthrough * den[j + 1];
            }
            for i in 1..n {
                a[(i, i - 1)] = 1.0;
            }
            b[(0, 0)] = 1.0;
        }
        StateSpace::new(a, b, c, RealMatrix::from_element(1, 1, feedthrough))
    }
}

fn horner(coeffs: &[f64], z: Complex64) -> Complex64 {
    coeffs.iter().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

/// Paired input/output sequences of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub u: TimeSeries,
    pub y: TimeSeries,
}

impl Trajectory {
    pub fn new(u: TimeSeries, y: TimeSeries) -> Result<Self> {
        if u.len() != y.len() {
            return invalid("trajectory input and output lengths differ");
        }
        Ok(Self { u, y })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Feedback interconnection used for closed-loop measurements.
///
/// The plant input is `u = d + K(−y)`, where `K` is the controller and
/// `y = y_plant + n` is the measured (noisy) plant output. The returned
/// system has inputs `[d; n]`, outputs `[u; y]` and state `[x_plant; x_ctrl]`.
/// For SISO loops the map `d → u` is the sensitivity `(1 + K G)⁻¹`.
pub fn closed_loop(plant: &StateSpace, controller: &StateSpace) -> Result<StateSpace> {
    let (nu, ny) = (plant.nu(), plant.ny());
    if controller.nu() != ny || controller.ny() != nu {
        return invalid("controller dimensions must mirror the plant's");
    }
    let (np, nc) = (plant.nx(), controller.nx());
    let (ap, bp, cp, dp) = (plant.a(), plant.b(), plant.c(), plant.d());
    let (ac, bc, cc, dc) = (controller.a(), controller.b(), controller.c(), controller.d());

    let well = RealMatrix::identity(nu, nu) + dc * dp;
    let s = singular_values(&well);
    if s.last().copied().unwrap_or(0.0) <= 1e-12 * s[0].max(1.0) {
        return invalid("algebraic loop is ill-posed: I + D_c D_p is singular");
    }
    let e = well
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("ill-posed loop".into()))?;

    // u = Uxp xp + Uxc xc + Ud d + Un n
    let u_xp = -(&e * dc * cp);
    let u_xc = &e * cc;
    let u_d = e.clone();
    let u_n = -(&e * dc);
    // y = Yxp xp + Yxc xc + Yd d + Yn n
    let y_xp = cp + dp * &u_xp;
    let y_xc = dp * &u_xc;
    let y_d = dp * &u_d;
    let y_n = RealMatrix::identity(ny, ny) + dp * &u_n;

    let n = np + nc;
    let mut a = RealMatrix::zeros(n, n);
    a.view_mut((0, 0), (np, np)).copy_from(&(ap + bp * &u_xp));
    a.view_mut((0, np), (np, nc)).copy_from(&(bp * &u_xc));
    a.view_mut((np, 0), (nc, np)).copy_from(&(-(bc * &y_xp)));
    a.view_mut((np, np), (nc, nc)).copy_from(&(ac - bc * &y_xc));

    let mut b = RealMatrix::zeros(n, nu + ny);
    b.view_mut((0, 0), (np, nu)).copy_from(&(bp * &u_d));
    b.view_mut((0, nu), (np, ny)).copy_from(&(bp * &u_n));
    b.view_mut((np, 0), (nc, nu)).copy_from(&(-(bc * &y_d)));
    b.view_mut((np, nu), (nc, ny)).copy_from(&(-(bc * &y_n)));

    let mut c = RealMatrix::zeros(nu + ny, n);
    c.view_mut((0, 0), (nu, np)).copy_from(&u_xp);
    c.view_mut((0, np), (nu, nc)).copy_from(&u_xc);
    c.view_mut((nu, 0), (ny, np)).copy_from(&y_xp);
    c.view_mut((nu, np), (ny, nc)).copy_from(&y_xc);

    let mut d = RealMatrix::zeros(nu + ny, nu + ny);
    d.view_mut((0, 0), (nu, nu)).copy_from(&u_d);
    d.view_mut((0, nu), (nu, ny)).copy_from(&u_n);
    d.view_mut((nu, 0), (ny, nu)).copy_from(&y_d);
    d.view_mut((nu, nu), (ny, ny)).copy_from(&y_n);

    StateSpace::new(a, b, c, d)
}

/// Unstable second-order plant used in the case study.
pub fn case_study_plant() -> SisoTransferFunction {
    SisoTransferFunction::new(vec![0.1164, 0.1071], vec![1.0, -1.891, 0.7788]).expect("valid coefficients")
}

/// Lead controller that stabilizes [`case_study_plant`] in negative feedback.
pub fn case_study_controller() -> SisoTransferFunction {
    SisoTransferFunction::new(vec![6.0, -5.135], vec![1.0, -0.1353]).expect("valid coefficients")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn scalar_ss(a: f64, b: f64, c: f64, d: f64) -> StateSpace {
        StateSpace::new(dmatrix![a], dmatrix![b], dmatrix![c], dmatrix![d]).unwrap()
    }

    #[test]
    fn simulate_feedthrough() {
        let sys = scalar_ss(0.0, 0.0, 0.0, 1.0);
        let u = TimeSeries::scalar(&[5.0]).unwrap();
        let (y, _) = sys.simulate(&DVector::zeros(1), &u, None).unwrap();
        assert_eq!(y.channel(0), vec![5.0]);
    }

    #[test]
    fn simulate_first_order() {
        let sys = scalar_ss(0.5, 1.0, 1.0, 0.0);
        let u = TimeSeries::scalar(&[1.0, 0.0, 0.0]).unwrap();
        let (y, x) = sys.simulate(&DVector::zeros(1), &u, None).unwrap();
        assert_eq!(y.channel(0), vec![0.0, 1.0, 0.5]);
        assert_eq!(x[0], 0.25);
    }

    #[test]
    fn simulate_adds_noise() {
        let sys = scalar_ss(0.0, 0.0, 0.0, 1.0);
        let u = TimeSeries::scalar(&[1.0, 2.0]).unwrap();
        let n = TimeSeries::scalar(&[0.5, -0.5]).unwrap();
        let (y, _) = sys.simulate(&DVector::zeros(1), &u, Some(&n)).unwrap();
        assert_eq!(y.channel(0), vec![1.5, 1.5]);
    }

    #[test]
    fn simulate_dimension_errors() {
        let sys = scalar_ss(0.5, 1.0, 1.0, 0.0);
        let u = TimeSeries::scalar(&[1.0, 0.0]).unwrap();
        assert!(sys.simulate(&DVector::zeros(2), &u, None).is_err());
        let n = TimeSeries::scalar(&[0.0]).unwrap();
        assert!(sys.simulate(&DVector::zeros(1), &u, Some(&n)).is_err());
    }

    #[test]
    fn case_study_plant_diverges() {
        let sys = case_study_plant().to_state_space().unwrap();
        assert_eq!(sys.nx(), 2);
        let u = TimeSeries::scalar(&[1.0; 50]).unwrap();
        let (y, _) = sys.simulate(&DVector::zeros(2), &u, None).unwrap();
        assert!(y.get(49, 0).abs() > 1e3);
        // unstable pole 1.28486743..., from the quadratic formula
        let disc: f64 = 1.891f64.powi(2) - 4.0 * 0.7788;
        assert_relative_eq!(sys.spectral_radius(), (1.891 + disc.sqrt()) / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn static_gain_realization() {
        let g = SisoTransferFunction::new(vec![1.0], vec![1.0]).unwrap();
        let ss = g.to_state_space().unwrap();
        assert_eq!(ss.nx(), 0);
        assert_eq!(ss.d()[(0, 0)], 1.0);
    }

    #[test]
    fn unit_delay_realization() {
        let g = SisoTransferFunction::new(vec![1.0], vec![1.0, 0.0]).unwrap();
        let ss = g.to_state_space().unwrap();
        assert_eq!(ss.a(), &dmatrix![0.0]);
        assert_eq!(ss.b(), &dmatrix![1.0]);
        assert_eq!(ss.c(), &dmatrix![1.0]);
        assert_eq!(ss.d(), &dmatrix![0.0]);
        let h = ss.freq_response(PI / 2.0).unwrap()[(0, 0)];
        assert!((h - Complex64::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn improper_rejected() {
        assert!(SisoTransferFunction::new(vec![1.0, 0.0, 0.0], vec![1.0, 0.5]).is_err());
        assert!(SisoTransferFunction::new(vec![1.0], vec![0.0, 1.0]).is_err());
        // leading zeros in the numerator do not count towards its degree
        assert!(SisoTransferFunction::new(vec![0.0, 0.0, 1.0], vec![1.0, 0.5]).is_ok());
    }

    #[test]
    fn case_study_dc_gain() {
        // (0.1164 + 0.1071) / (1 − 1.891 + 0.7788) = 0.2235 / −0.1122
        let expected = 0.2235 / -0.1122;
        let ss = case_study_plant().to_state_space().unwrap();
        let h = ss.freq_response(0.0).unwrap()[(0, 0)];
        assert_relative_eq!(h.re, expected, max_relative = 1e-12);
        assert!(h.im.abs() < 1e-14);
        assert_relative_eq!(expected, -1.9920, epsilon = 1e-4);
    }

    #[test]
    fn static_response_is_flat() {
        let ss = StateSpace::static_gain(dmatrix![2.5]).unwrap();
        for w in [0.0, 0.3, 2.0, -1.0] {
            assert_eq!(ss.freq_response(w).unwrap()[(0, 0)], Complex64::new(2.5, 0.0));
        }
    }

    #[test]
    fn singular_resolvent() {
        let ss = scalar_ss(1.0, 1.0, 1.0, 0.0);
        assert!(matches!(ss.freq_response(0.0), Err(Error::Singular(_))));
    }

    fn random_tf(rng: &mut ChaCha8Rng) -> SisoTransferFunction {
        let n = rng.random_range(1..5usize);
        let nn = rng.random_range(1..=n + 1);
        // keep poles off the unit circle by building the denominator from random roots
        let mut den = vec![1.0];
        let mut k = 0;
        while k < n {
            if n - k >= 2 && rng.random_bool(0.5) {
                let r = rng.random_range(0.1..0.9f64);
                let th = rng.random_range(0.1..3.0f64);
                let quad = [1.0, -2.0 * r * th.cos(), r * r];
                den = poly_mul(&den, &quad);
                k += 2;
            } else {
                let r = rng.random_range(-0.9..0.9);
                den = poly_mul(&den, &[1.0, -r]);
                k += 1;
            }
        }
        let num: Vec<f64> = (0..nn).map(|_| rng.random_range(-2.0..2.0)).collect();
        SisoTransferFunction::new(num, den).unwrap()
    }

    fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }

    #[test]
    fn realization_matches_rational_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let g = random_tf(&mut rng);
            let ss = g.to_state_space().unwrap();
            assert!(ss.is_controllable(1e-12).unwrap());
            for _ in 0..20 {
                let w = rng.random_range(-PI..PI);
                let h = ss.freq_response(w).unwrap()[(0, 0)];
                assert!((h - g.freq_response(w)).norm() <= 1e-9, "{g:?} at {w}");
            }
        }
    }

    #[test]
    fn conjugate_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_tf(&mut rng).to_state_space().unwrap();
        for _ in 0..20 {
            let w = rng.random_range(0.0..PI);
            let pos = g.freq_response(w).unwrap()[(0, 0)];
            let neg = g.freq_response(-w).unwrap()[(0, 0)];
            assert!((pos - neg.conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn superposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sys = random_tf(&mut rng).to_state_space().unwrap();
        let x0 = DVector::zeros(sys.nx());
        let u1: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u2: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b) = (1.7, -0.4);
        let mix: Vec<f64> = u1.iter().zip(&u2).map(|(p, q)| a * p + b * q).collect();
        let y1 = sys.simulate(&x0, &TimeSeries::scalar(&u1).unwrap(), None).unwrap().0;
        let y2 = sys.simulate(&x0, &TimeSeries::scalar(&u2).unwrap(), None).unwrap().0;
        let ym = sys.simulate(&x0, &TimeSeries::scalar(&mix).unwrap(), None).unwrap().0;
        for k in 0..30 {
            let lin = a * y1.get(k, 0) + b * y2.get(k, 0);
            assert!((ym.get(k, 0) - lin).abs() <= 1e-12 * (1.0 + lin.abs()));
        }
    }

    #[test]
    fn closed_loop_well_posed_static_controller() {
        let plant = scalar_ss(0.5, 1.0, 1.0, 0.0);
        for c in [-10.0, 0.0, 3.0] {
            let k = StateSpace::static_gain(dmatrix![c]).unwrap();
            assert!(closed_loop(&plant, &k).is_ok());
        }
    }

    #[test]
    fn closed_loop_ill_posed() {
        let plant = scalar_ss(0.5, 1.0, 1.0, 1.0);
        let k = StateSpace::static_gain(dmatrix![-1.0]).unwrap();
        assert!(closed_loop(&plant, &k).is_err());
    }

    #[test]
    fn case_study_loop_is_stable() {
        let plant = case_study_plant().to_state_space().unwrap();
        let ctrl = case_study_controller().to_state_space().unwrap();
        let cl = closed_loop(&plant, &ctrl).unwrap();
        assert!(cl.spectral_radius() < 1.0);
        assert_relative_eq!(cl.spectral_radius(), 0.92624917, epsilon = 1e-7);
    }

    #[test]
    fn closed_loop_dc_sensitivity() {
        let g = case_study_plant();
        let k = case_study_controller();
        let cl = closed_loop(&g.to_state_space().unwrap(), &k.to_state_space().unwrap()).unwrap();
        let h = cl.freq_response(0.0).unwrap();
        let gk = g.freq_response(0.0) * k.freq_response(0.0);
        let expected = 1.0 / (1.0 + gk.re);
        assert_relative_eq!(h[(0, 0)].re, expected, max_relative = 1e-10);
        // d → y is G times the sensitivity
        assert_relative_eq!(h[(1, 0)].re, g.freq_response(0.0).re * expected, max_relative = 1e-10);
    }

    #[test]
    fn closed_loop_with_feedthrough_matches_direct_simulation() {
        let plant = scalar_ss(0.3, 1.0, 0.7, 0.2);
        let ctrl = scalar_ss(0.1, 0.5, 1.0, 1.5);
        let cl = closed_loop(&plant, &ctrl).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut xp, mut xc) = (0.0, 0.0);
        let mut x = DVector::zeros(2);
        for _ in 0..20 {
            let d: f64 = rng.random_range(-1.0..1.0);
            let n: f64 = rng.random_range(-0.1..0.1);
            // u = d + Cc xc + Dc·(−(Cp xp + Dp u + n)), solved for u
            let u = (d + xc - 1.5 * (0.7 * xp + n)) / (1.0 + 1.5 * 0.2);
            let y = 0.7 * xp + 0.2 * u + n;
            let (xn, out) = cl.step(&x, &DVector::from_vec(vec![d, n]));
            assert!((out[0] - u).abs() < 1e-13 && (out[1] - y).abs() < 1e-13);
            xp = 0.3 * xp + u;
            xc = 0.1 * xc + 0.5 * (-y);
            x = xn;
        }
    }
}
