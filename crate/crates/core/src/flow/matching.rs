use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::autodiff::Mat;
use super::{check_shape, FlowError};

/// Euler steps used at inference (step size `1/10`).
pub const DEFAULT_INTEGRATION_STEPS: usize = 10;

/// `H × D` action matrix, normalized per dimension to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk(pub Mat);

impl ActionChunk {
    pub fn horizon(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Flattened `tokens × token_dim` context embedding.
    pub context: Vec<f64>,
    pub state: Vec<f64>,
}

/// Which velocity the network regresses.
///
/// `DataMinusNoise` (default) trains against `u = A - ε`, the velocity of
/// `A_τ = τA + (1-τ)ε`, and integrates `A ← A + δ·v`. `NoiseMinusData`
/// trains against `u = ε - A` and integrates `A ← A - δ·v`; both recover
/// the data endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    #[default]
    DataMinusNoise,
    NoiseMinusData,
}

impl SignConvention {
    pub fn sign(&self) -> f64 {
        match self {
            SignConvention::DataMinusNoise => 1.0,
            SignConvention::NoiseMinusData => -1.0,
        }
    }
}

/// One training tuple `(A, ε, τ, A_τ, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub a: Mat,
    pub eps: Mat,
    pub tau: f64,
    pub a_tau: Mat,
    pub u: Mat,
}

impl FlowSample {
    pub fn new(a: Mat, eps: Mat, tau: f64, sign: SignConvention) -> Result<Self, FlowError> {
        let a_tau = corrupt(&a, &eps, tau)?;
        let u = target_field(&a, &eps, sign)?;
        Ok(Self { a, eps, tau, a_tau, u })
    }

    /// Draw `ε ~ N(0, I)` and `τ ~ U[0, 1]`.
    pub fn draw<R: Rng + ?Sized>(a: &Mat, sign: SignConvention, rng: &mut R) -> Self {
        let eps = standard_normal(a.nrows(), a.ncols(), rng);
        let tau = rng.random_range(0.0..=1.0);
        Self::new(a.clone(), eps, tau, sign).expect("shapes agree by construction")
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// `τ·A + (1-τ)·ε`, elementwise.
pub fn corrupt(a: &Mat, eps: &Mat, tau: f64) -> Result<Mat, FlowError> {
    check_shape(a.dim(), eps.dim())?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(FlowError::InvalidTau(tau));
    }
    Ok(ndarray::Zip::from(a).and(eps).map_collect(|&a, &e| tau * a + (1.0 - tau) * e))
}

pub fn target_field(a: &Mat, eps: &Mat, sign: SignConvention) -> Result<Mat, FlowError> {
    check_shape(a.dim(), eps.dim())?;
    Ok(match sign {
        SignConvention::DataMinusNoise => a - eps,
        SignConvention::NoiseMinusData => eps - a,
    })
}

/// Mean squared error over all `H × D` entries.
pub fn fm_loss(v_pred: &Mat, u: &Mat) -> Result<f64, FlowError> {
    check_shape(u.dim(), v_pred.dim())?;
    let n = u.len() as f64;
    Ok(v_pred.iter().zip(u.iter()).map(|(v, t)| (v - t) * (v - t)).sum::<f64>() / n)
}

/// Anything that predicts a velocity for a noisy chunk.
pub trait VelocityField {
    fn horizon(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn velocity(&self, a_tau: &Mat, tau: f64, obs: &Observation) -> Result<Mat, FlowError>;
}

/// Euler integration from `τ = 0` to `τ = 1` in `steps` equal steps,
/// starting at `start`.
pub fn integrate_from(
    field: &dyn VelocityField,
    obs: &Observation,
    start: Mat,
    steps: usize,
    sign: SignConvention,
) -> Result<Mat, FlowError> {
    check_shape((field.horizon(), field.action_dim()), start.dim())?;
    if steps == 0 {
        return Err(FlowError::InvalidConfig("integration needs at least one step".into()));
    }
    let delta = 1.0 / steps as f64;
    let mut a = start;
    for k in 0..steps {
        let tau = k as f64 * delta;
        let v = field.velocity(&a, tau, obs)?;
        check_shape(a.dim(), v.dim())?;
        a.scaled_add(sign.sign() * delta, &v);
        if a.iter().any(|x| !x.is_finite()) {
            return Err(FlowError::NonFiniteActivation("integration"));
        }
    }
    Ok(a)
}

/// Sample a chunk: draw `A_0 ~ N(0, I)` and integrate.
pub fn integrate<R: Rng + ?Sized>(
    field: &dyn VelocityField,
    obs: &Observation,
    steps: usize,
    sign: SignConvention,
    rng: &mut R,
) -> Result<Mat, FlowError> {
    let start = standard_normal(field.horizon(), field.action_dim(), rng);
    integrate_from(field, obs, start, steps, sign)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::seed::SeedScheme;
    use ndarray::array;

    struct Constant(Mat);

    impl VelocityField for Constant {
        fn horizon(&self) -> usize {
            self.0.nrows()
        }
        fn action_dim(&self) -> usize {
            self.0.ncols()
        }
        fn velocity(&self, _: &Mat, _: f64, _: &Observation) -> Result<Mat, FlowError> {
            Ok(self.0.clone())
        }
    }

    fn obs() -> Observation {
        Observation { context: vec![], state: vec![] }
    }

    #[test]
    fn corrupt_endpoints_and_midpoint() {
        let mut rng = SeedScheme::new(0).rng("c", 0);
        let a = standard_normal(4, 3, &mut rng);
        let e = standard_normal(4, 3, &mut rng);
        assert_eq!(corrupt(&a, &e, 1.0).unwrap(), a);
        assert_eq!(corrupt(&a, &e, 0.0).unwrap(), e);
        assert_eq!(corrupt(&array![[2.0]], &array![[0.0]], 0.5).unwrap(), array![[1.0]]);
        assert!(matches!(corrupt(&a, &array![[0.0]], 0.5), Err(FlowError::ShapeMismatch { .. })));
        assert_eq!(corrupt(&a, &e, 1.5), Err(FlowError::InvalidTau(1.5)));
    }

    #[test]
    fn target_field_examples() {
        let a = array![[1.0, -2.0]];
        assert_eq!(target_field(&a, &a, SignConvention::default()).unwrap(), Mat::zeros((1, 2)));
        assert_eq!(target_field(&array![[1.0]], &array![[0.0]], SignConvention::default()).unwrap(), array![[1.0]]);
        assert_eq!(target_field(&array![[1.0]], &array![[0.0]], SignConvention::NoiseMinusData).unwrap(), array![[-1.0]]);
        assert!(target_field(&a, &array![[1.0]], SignConvention::default()).is_err());
    }

    #[test]
    fn fm_loss_examples() {
        let u = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(fm_loss(&u, &u).unwrap(), 0.0);
        assert_eq!(fm_loss(&(&u + 1.0), &u).unwrap(), 1.0);
        assert!(fm_loss(&u, &array![[1.0]]).is_err());
    }

    #[test]
    fn fm_loss_matches_hand_sum() {
        let mut rng = SeedScheme::new(5).rng("l", 0);
        for _ in 0..50 {
            let v = standard_normal(4, 3, &mut rng);
            let u = standard_normal(4, 3, &mut rng);
            let mut s = 0.0;
            for r in 0..4 {
                for c in 0..3 {
                    s += (v[[r, c]] - u[[r, c]]).powi(2);
                }
            }
            assert!((fm_loss(&v, &u).unwrap() - s / 12.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_oracle_field_recovers_data() {
        let mut rng = SeedScheme::new(1).rng("i", 0);
        let a = standard_normal(4, 3, &mut rng);
        let eps0 = standard_normal(4, 3, &mut rng);
        for sign in [SignConvention::DataMinusNoise, SignConvention::NoiseMinusData] {
            let field = Constant(target_field(&a, &eps0, sign).unwrap());
            let out = integrate_from(&field, &obs(), eps0.clone(), DEFAULT_INTEGRATION_STEPS, sign).unwrap();
            let err = (&out - &a).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(err <= 1e-6, "{sign:?}: {err}");
        }
    }

    #[test]
    fn zero_field_returns_start_noise() {
        let field = Constant(Mat::zeros((4, 3)));
        let mut r1 = SeedScheme::new(2).rng("z", 0);
        let mut r2 = SeedScheme::new(2).rng("z", 0);
        let out = integrate(&field, &obs(), 10, SignConvention::default(), &mut r1).unwrap();
        assert_eq!(out, standard_normal(4, 3, &mut r2));
    }

    #[test]
    fn step_size_times_steps_is_one() {
        let delta = 1.0 / DEFAULT_INTEGRATION_STEPS as f64;
        assert_eq!(DEFAULT_INTEGRATION_STEPS, 10);
        assert_eq!(delta * DEFAULT_INTEGRATION_STEPS as f64, 1.0);
    }

    #[test]
    fn drawn_samples_satisfy_path_identity() {
        let mut rng = SeedScheme::new(3).rng("d", 0);
        let a = standard_normal(4, 3, &mut rng);
        for _ in 0..20 {
            let s = FlowSample::draw(&a, SignConvention::default(), &mut rng);
            assert!((0.0..=1.0).contains(&s.tau));
            let expect = &a * s.tau + &s.eps * (1.0 - s.tau);
            assert_eq!(s.a_tau, expect);
            assert_eq!(s.u, &a - &s.eps);
        }
    }
}
