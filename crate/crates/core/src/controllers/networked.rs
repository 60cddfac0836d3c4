use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg::{matrix_exp, psi, spectral_radius};
use crate::plants::Polynomial;

use super::zoh::{input_delay_periods, measurement_delay_periods, InputRingBuffer};

/// Matrices of the networked recursion
/// `Φ_i = exp(A(r+τ)) y_i + Σ_{p=1}^{l+q+1} Q_p B u_{i-p}`, with `τ = lT`,
/// `q = ⌊r/T⌋`, `r̃ = r - qT`, `Q_p = exp(ApT) psi(-A, T)` for `p ≤ l+q` and
/// `Q_{l+q+1} = exp(A(l+q)T) psi(A, r̃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkedWeights {
    pub l: usize,
    pub q: usize,
    pub r_tilde: f64,
    /// `exp(A(r+τ))`.
    pub e_ad: DMatrix<f64>,
    /// `Q_p B` for `p = 1..=l+q+1` (index `p - 1`).
    pub qb: Vec<DMatrix<f64>>,
}

impl NetworkedWeights {
    pub fn new(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        r: f64,
        tau: f64,
        period: f64,
        h: f64,
    ) -> Result<Self> {
        check_len(a.ncols(), a.nrows())?;
        check_len(b.nrows(), a.nrows())?;
        let l = input_delay_periods(tau, period, h)?;
        let q = measurement_delay_periods(r, period);
        let mut r_tilde = r - q as f64 * period;
        if r_tilde.abs() < 0.5 * h {
            r_tilde = 0.0;
        }
        let e_ad = matrix_exp(&(a * (r + tau)))?;
        let head = psi(&-a, period)?;
        let mut qb = Vec::with_capacity(l + q + 1);
        for p in 1..=l + q {
            qb.push(matrix_exp(&(a * (p as f64 * period)))? * &head * b);
        }
        let tail = matrix_exp(&(a * ((l + q) as f64 * period)))? * psi(a, r_tilde)?;
        qb.push(tail * b);
        Ok(Self {
            l,
            q,
            r_tilde,
            e_ad,
            qb,
        })
    }

    pub fn depth(&self) -> usize {
        self.qb.len()
    }

    /// Prediction from the measurement and the ring of past inputs.
    pub fn predict(&self, y: &[f64], ring: &InputRingBuffer) -> Result<DVector<f64>> {
        check_len(y.len(), self.e_ad.ncols())?;
        let mut phi = &self.e_ad * DVector::from_column_slice(y);
        for (p, qb) in self.qb.iter().enumerate() {
            phi += qb * DVector::from_column_slice(ring.get(p + 1));
        }
        Ok(phi)
    }
}

/// Spectral radius of `M = exp(AT) (I + psi(-A, T) B K)`.
pub fn discrete_stability_check(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    period: f64,
) -> Result<f64> {
    if !(period > 0.0) {
        return Err(Error::Config(format!(
            "sampling period must be positive, got {period}"
        )));
    }
    let n = a.nrows();
    let m = matrix_exp(&(a * period))? * (DMatrix::identity(n, n) + psi(&-a, period)? * b * k);
    spectral_radius(&m)
}

/// Linear networked controller `u_i = K exp(A(r+τ)) y_i + K Σ Q_p B u_{i-p}`.
#[derive(Debug, Clone)]
pub struct LtiNetworked {
    k: DMatrix<f64>,
    weights: NetworkedWeights,
    /// `K exp(A(r+τ))`.
    gain_y: DMatrix<f64>,
    /// `K Q_p B`.
    gain_u: Vec<DMatrix<f64>>,
    ring: InputRingBuffer,
}

impl LtiNetworked {
    pub fn new(k: DMatrix<f64>, weights: NetworkedWeights, ring: InputRingBuffer) -> Result<Self> {
        check_len(k.ncols(), weights.e_ad.nrows())?;
        check_len(ring.capacity(), weights.depth())?;
        let gain_y = &k * &weights.e_ad;
        let gain_u = weights.qb.iter().map(|qb| &k * qb).collect();
        Ok(Self {
            k,
            weights,
            gain_y,
            gain_u,
            ring,
        })
    }

    pub fn weights(&self) -> &NetworkedWeights {
        &self.weights
    }

    pub fn ring(&self) -> &InputRingBuffer {
        &self.ring
    }

    /// Coefficient on `y_i`.
    pub fn gain_y(&self) -> &DMatrix<f64> {
        &self.gain_y
    }

    /// Coefficient on `u_{i-p}`.
    pub fn gain_u(&self, p: usize) -> &DMatrix<f64> {
        &self.gain_u[p - 1]
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// Returns the prediction and the new input, then shifts the ring.
    pub fn sample(&mut self, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let phi = self.weights.predict(y, &self.ring)?;
        let mut u = &self.gain_y * DVector::from_column_slice(y);
        for (p, g) in self.gain_u.iter().enumerate() {
            u += g * DVector::from_column_slice(self.ring.get(p + 1));
        }
        let u = u.as_slice().to_vec();
        self.ring.push(&u)?;
        Ok((phi.as_slice().to_vec(), u))
    }
}

/// Chain of `n` integrators `ż = A₀ z + B₀ u`.
pub fn chain_of_integrators(n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_fn(n, n, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
    let mut b = DMatrix::zeros(n, 1);
    b[(n - 1, 0)] = 1.0;
    (a, b)
}

/// Gain placing every eigenvalue of the sampled chain of integrators at zero
/// (Ackermann's formula on `(exp(A₀T), psi(A₀, T) B₀)`).
pub fn deadbeat_chain_gain(n: usize, period: f64) -> Result<DMatrix<f64>> {
    let (a0, b0) = chain_of_integrators(n);
    let phi = matrix_exp(&(&a0 * period))?;
    let gamma = psi(&a0, period)? * &b0;
    let mut ctrb = DMatrix::zeros(n, n);
    let mut col = gamma;
    for j in 0..n {
        ctrb.set_column(j, &col.column(0));
        col = &phi * col;
    }
    let inv = ctrb
        .try_inverse()
        .ok_or_else(|| Error::Config("chain of integrators is not controllable".into()))?;
    let mut phi_n = DMatrix::identity(n, n);
    for _ in 0..n {
        phi_n = &phi_n * &phi;
    }
    let row = inv.rows(n - 1, 1) * phi_n;
    Ok(-row)
}

/// Global coordinate change to a chain of integrators.
#[derive(Debug, Clone, PartialEq)]
pub enum Theta {
    Identity,
    /// `Θ(x) = (x₁ - ∫₀^{x₂} p, x₂)` for `ẋ₁ = x₂ + p(x₂)u, ẋ₂ = u`.
    StrictFeedforward2d(Polynomial),
}

impl Theta {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Identity => x.to_vec(),
            Self::StrictFeedforward2d(p) => vec![x[0] - p.antiderivative(x[1]), x[1]],
        }
    }
}

/// Networked recursion in the chain coordinates:
/// `u_i = K' exp(A₀(r+τ)) Θ(y_i) + K' Σ Q_p B₀ u_{i-p}`.
#[derive(Debug, Clone)]
pub struct DeciController {
    theta: Theta,
    inner: LtiNetworked,
}

impl DeciController {
    pub fn new(
        theta: Theta,
        k: DMatrix<f64>,
        r: f64,
        tau: f64,
        period: f64,
        h: f64,
        ring: InputRingBuffer,
    ) -> Result<Self> {
        let (a0, b0) = chain_of_integrators(k.ncols());
        let weights = NetworkedWeights::new(&a0, &b0, r, tau, period, h)?;
        Ok(Self {
            theta,
            inner: LtiNetworked::new(k, weights, ring)?,
        })
    }

    pub fn inner(&self) -> &LtiNetworked {
        &self.inner
    }

    /// Returns the prediction in chain coordinates and the new input.
    pub fn sample(&mut self, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.inner.sample(&self.theta.apply(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, data.len() / rows, data)
    }

    #[test]
    fn scalar_recursion_coefficients() {
        let one = m(1, &[1.0]);
        let w = NetworkedWeights::new(&one, &one, 0.3, 0.0, 1.0, 1e-3).unwrap();
        let ctl = LtiNetworked::new(m(1, &[-2.0]), w, InputRingBuffer::new(1, 1)).unwrap();
        assert!((ctl.gain_y()[(0, 0)] + 2.0 * 0.3f64.exp()).abs() < 1e-12);
        assert!((ctl.gain_y()[(0, 0)] + 2.699718).abs() < 1e-6);
        assert!((ctl.gain_u(1)[(0, 0)] + 2.0 * (0.3f64.exp() - 1.0)).abs() < 1e-12);
        assert!((ctl.gain_u(1)[(0, 0)] + 0.699718).abs() < 1e-6);
    }

    #[test]
    fn aligned_measurement_delay_gives_zero_tail() {
        let a = m(2, &[0.0, 1.0, -1.0, 0.0]);
        let b = m(2, &[0.0, 1.0]);
        let w = NetworkedWeights::new(&a, &b, 0.6, 0.3, 0.3, 1e-3).unwrap();
        assert_eq!((w.l, w.q, w.r_tilde), (1, 2, 0.0));
        assert_eq!(w.depth(), 4);
        assert!(w.qb[3].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn delay_counts_use_floor() {
        let one = m(1, &[1.0]);
        assert_eq!(
            NetworkedWeights::new(&one, &one, 0.99, 0.0, 1.0, 1e-3)
                .unwrap()
                .q,
            0
        );
        assert_eq!(
            NetworkedWeights::new(&one, &one, 1.01, 0.0, 1.0, 1e-3)
                .unwrap()
                .q,
            1
        );
    }

    #[test]
    fn scalar_stability_matrix() {
        let one = m(1, &[1.0]);
        let rho = discrete_stability_check(&one, &one, &m(1, &[-2.0]), 1.0).unwrap();
        assert!((rho - (std::f64::consts::E - 2.0)).abs() < 1e-12);
        assert!((rho - 0.718282).abs() < 1e-6);
        let rho = discrete_stability_check(&one, &one, &m(1, &[-2.0]), 3f64.ln()).unwrap();
        assert!((rho - 1.0).abs() < 1e-9);
    }

    #[test]
    fn double_integrator_deadbeat() {
        for t in [0.5, 1.0, 2.0] {
            let k = deadbeat_chain_gain(2, t).unwrap();
            assert!((k[(0, 0)] + 1.0 / (t * t)).abs() < 1e-12);
            assert!((k[(0, 1)] + 1.5 / t).abs() < 1e-12);
            let (a0, b0) = chain_of_integrators(2);
            let mmat = matrix_exp(&(&a0 * t)).unwrap()
                * (DMatrix::identity(2, 2) + psi(&-&a0, t).unwrap() * &b0 * &k);
            let want = m(2, &[0.5, t / 4.0, -1.0 / t, -0.5]);
            assert!((&mmat - want).abs().max() < 1e-12);
            assert!(discrete_stability_check(&a0, &b0, &k, t).unwrap() < 1e-9);
        }
    }

    #[test]
    fn triple_chain_deadbeat_is_nilpotent() {
        let t = 0.7;
        let k = deadbeat_chain_gain(3, t).unwrap();
        let (a0, b0) = chain_of_integrators(3);
        let mmat = matrix_exp(&(&a0 * t)).unwrap() + psi(&a0, t).unwrap() * &b0 * &k;
        let cube = &mmat * &mmat * &mmat;
        assert!(cube.abs().max() < 1e-10);
    }

    #[test]
    fn strict_feedforward_example_coefficients() {
        let (t, r) = (1.0, 0.5);
        let k = deadbeat_chain_gain(2, t).unwrap();
        let ctl = DeciController::new(
            Theta::StrictFeedforward2d(Polynomial::default()),
            k,
            r,
            0.0,
            t,
            1e-3,
            InputRingBuffer::new(1, 1),
        )
        .unwrap();
        let gu = ctl.inner().gain_u(1)[(0, 0)];
        assert!((gu + r * (r + 3.0 * t) / (2.0 * t * t)).abs() < 1e-12);
        assert!((gu + 0.875).abs() < 1e-12);
        let gy = ctl.inner().gain_y();
        assert!((gy[(0, 0)] + 1.0 / (t * t)).abs() < 1e-12);
        assert!((gy[(0, 1)] + (3.0 * t + 2.0 * r) / (2.0 * t * t)).abs() < 1e-12);
    }

    #[test]
    fn deci_zero_data_gives_zero_input() {
        let mut ctl = DeciController::new(
            Theta::StrictFeedforward2d(Polynomial::default()),
            deadbeat_chain_gain(2, 1.0).unwrap(),
            0.5,
            0.0,
            1.0,
            1e-3,
            InputRingBuffer::new(1, 1),
        )
        .unwrap();
        let (_, u) = ctl.sample(&[0.0, 0.0]).unwrap();
        assert_eq!(u, vec![0.0]);
    }
}
