//! Noise models with full-rank covariance and certified sub-Weibull tails.
//!
//! Every model draws `w = M z`, where `z` has i.i.d. zero-mean, unit-variance
//! coordinates of the chosen base law and `M` is the symmetric square root of
//! the covariance `C`. The stored tail triple `(b1, b2, alpha)` certifies
//! `P(|w_i| > y) <= b1 exp(-y^alpha / b2)` for every coordinate of the mixed
//! vector.
//!
//! Tail derivations:
//!
//! * Gaussian: `w_i ~ N(0, C_ii)`, so the standard bound gives `b1 = 2`,
//!   `b2 = 2 max_i C_ii`, `alpha = 2`.
//! * Symmetric Weibull with shape `alpha`, scaled to unit variance
//!   (`lambda = Gamma(1 + 2/alpha)^{-1/2}`): the base law satisfies
//!   `P(|z| > y) = exp(-(y/lambda)^alpha)` exactly. For mixed coordinates a
//!   union bound over the mixing weights applies: `|w_i| > y` forces
//!   `|z_j| > y / S` for some `j`, with `S` the largest absolute row sum of
//!   the mixer, so `b1 = p` and `b2 = (lambda S)^alpha`. When the mixer is
//!   diagonal the per-coordinate version is kept instead (`b1 = 1`,
//!   `b2 = (lambda m_ii,max)^alpha`).
//! * Bounded uniform on `[-sqrt(3), sqrt(3)]`: compact support; the noise
//!   bound formula degenerates to the support radius `sqrt(3) S` (the
//!   alpha-to-infinity limit), carried by a dedicated variant.
//!
//! The triples are certificates derived here, not literature values; the
//! empirical tail test below validates them against the samplers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform, Weibull};

use crate::error::{Error, Result};
use crate::linalg::{check_finite, check_square, op_norm_2, sym_lambda_max, sym_lambda_min, sym_sqrt_psd, symmetrize};
use crate::stats::gamma;

pub const UNIFORM_HALF_WIDTH: f64 = 1.7320508075688772; // sqrt(3), unit variance

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    Gaussian,
    WeibullSymmetric { shape: f64 },
    UniformBounded,
    /// Deterministic zero noise for unit tests; rejected by every formula
    /// that requires `lambda_min(C) > 0`.
    ZeroTest,
}

/// Certified coordinate tail of a noise model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailBound {
    SubWeibull { b1: f64, b2: f64, alpha: f64 },
    /// Compact support; stands in for the alpha-to-infinity limit.
    Bounded { radius: f64 },
}

/// How fourth-moment quantities are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FourthMomentMode {
    ClosedForm,
    MonteCarlo,
}

#[derive(Debug, Clone)]
pub struct NoiseModel {
    kind: NoiseKind,
    c: DMatrix<f64>,
    mixer: DMatrix<f64>,
    tail: TailBound,
    lambda_min: f64,
    lambda_max: f64,
    weibull: Option<Weibull<f64>>,
    uniform: Option<Uniform<f64>>,
}

fn validated_covariance(mut c: DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, f64, f64)> {
    check_square(&c, "noise covariance")?;
    check_finite(&c, "noise covariance")?;
    let scale = op_norm_2(&c).max(1.0);
    let skew = symmetrize(&mut c);
    if skew > 1e-10 * scale {
        return Err(Error::InvalidArgument(format!(
            "covariance asymmetric beyond tolerance ({skew:e})"
        )));
    }
    let lam_min = sym_lambda_min(&c);
    if lam_min <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "covariance must have lambda_min > 0, got {lam_min:e}"
        )));
    }
    let lam_max = sym_lambda_max(&c);
    let mixer = sym_sqrt_psd(&c)?;
    let residual = op_norm_2(&(&mixer * mixer.transpose() - &c));
    if residual > 1e-10 * scale {
        return Err(Error::Numerical(format!("covariance square root residual {residual:e}")));
    }
    Ok((c, mixer, lam_min, lam_max))
}

fn mixer_row_sup(mixer: &DMatrix<f64>) -> (f64, bool) {
    let p = mixer.nrows();
    let mut diag = true;
    let mut sup: f64 = 0.0;
    let mut diag_sup: f64 = 0.0;
    let scale = op_norm_2(mixer).max(1.0);
    for i in 0..p {
        let mut row_sum = 0.0;
        for j in 0..p {
            let v = mixer[(i, j)].abs();
            row_sum += v;
            if i != j && v > 1e-14 * scale {
                diag = false;
            }
        }
        sup = sup.max(row_sum);
        diag_sup = diag_sup.max(mixer[(i, i)].abs());
    }
    if diag {
        (diag_sup, true)
    } else {
        (sup, false)
    }
}

impl NoiseModel {
    pub fn gaussian(c: DMatrix<f64>) -> Result<Self> {
        let (c, mixer, lam_min, lam_max) = validated_covariance(c)?;
        let max_diag = (0..c.nrows()).map(|i| c[(i, i)]).fold(0.0, f64::max);
        let tail = TailBound::SubWeibull { b1: 2.0, b2: 2.0 * max_diag, alpha: 2.0 };
        Ok(Self {
            kind: NoiseKind::Gaussian,
            c,
            mixer,
            tail,
            lambda_min: lam_min,
            lambda_max: lam_max,
            weibull: None,
            uniform: None,
        })
    }

    /// Symmetric Weibull coordinates with the given shape (tail exponent),
    /// scaled to unit variance before mixing. Shapes below one give tails
    /// heavier than exponential while all moments stay finite.
    pub fn weibull_symmetric(shape: f64, c: DMatrix<f64>) -> Result<Self> {
        if !(shape > 0.0) || !shape.is_finite() {
            return Err(Error::InvalidArgument(format!("weibull shape must be positive, got {shape}")));
        }
        let (c, mixer, lam_min, lam_max) = validated_covariance(c)?;
        let scale = gamma(1.0 + 2.0 / shape).powf(-0.5);
        let (sup, _) = mixer_row_sup(&mixer);
        let (b1, eff_scale) = {
            let (sup_or_diag, is_diag) = mixer_row_sup(&mixer);
            if is_diag {
                (1.0, scale * sup_or_diag)
            } else {
                (c.nrows() as f64, scale * sup)
            }
        };
        let tail = TailBound::SubWeibull { b1, b2: eff_scale.powf(shape), alpha: shape };
        let weibull = Weibull::new(scale, shape)
            .map_err(|e| Error::InvalidArgument(format!("weibull parameters: {e}")))?;
        Ok(Self {
            kind: NoiseKind::WeibullSymmetric { shape },
            c,
            mixer,
            tail,
            lambda_min: lam_min,
            lambda_max: lam_max,
            weibull: Some(weibull),
            uniform: None,
        })
    }

    /// Uniform base law on `[-sqrt(3), sqrt(3)]` (unit variance).
    pub fn uniform_bounded(c: DMatrix<f64>) -> Result<Self> {
        let (c, mixer, lam_min, lam_max) = validated_covariance(c)?;
        let (sup, _) = mixer_row_sup(&mixer);
        let tail = TailBound::Bounded { radius: UNIFORM_HALF_WIDTH * sup };
        let uniform = Uniform::new_inclusive(-UNIFORM_HALF_WIDTH, UNIFORM_HALF_WIDTH)
            .map_err(|e| Error::InvalidArgument(format!("uniform support: {e}")))?;
        Ok(Self {
            kind: NoiseKind::UniformBounded,
            c,
            mixer,
            tail,
            lambda_min: lam_min,
            lambda_max: lam_max,
            weibull: None,
            uniform: Some(uniform),
        })
    }

    /// Deterministic zero noise for unit tests only.
    pub fn zero_test(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("noise dimension must be positive".into()));
        }
        Ok(Self {
            kind: NoiseKind::ZeroTest,
            c: DMatrix::zeros(dim, dim),
            mixer: DMatrix::zeros(dim, dim),
            tail: TailBound::Bounded { radius: 0.0 },
            lambda_min: 0.0,
            lambda_max: 0.0,
            weibull: None,
            uniform: None,
        })
    }

    /// Replaces the certified triple (used when a scenario supplies one).
    pub fn with_tail_override(mut self, tail: TailBound) -> Self {
        self.tail = tail;
        self
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn mixer(&self) -> &DMatrix<f64> {
        &self.mixer
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, NoiseKind::ZeroTest)
    }

    /// Rejects the zero-noise test model wherever `lambda_min(C) > 0` is a
    /// mathematical precondition.
    pub fn require_full_rank(&self) -> Result<()> {
        if self.is_zero() {
            Err(Error::Domain("zero-noise test mode has lambda_min(C) = 0".into()))
        } else {
            Ok(())
        }
    }

    pub fn tail_triple(&self) -> TailBound {
        self.tail
    }

    pub fn fourth_moment_mode(&self) -> FourthMomentMode {
        match self.kind {
            NoiseKind::Gaussian => FourthMomentMode::ClosedForm,
            _ => FourthMomentMode::MonteCarlo,
        }
    }

    fn draw_base(&self, rng: &mut impl Rng) -> f64 {
        match self.kind {
            NoiseKind::Gaussian => rng.sample(StandardNormal),
            NoiseKind::WeibullSymmetric { .. } => {
                let w = self.weibull.as_ref().unwrap().sample(rng);
                if rng.random::<bool>() {
                    w
                } else {
                    -w
                }
            }
            NoiseKind::UniformBounded => self.uniform.as_ref().unwrap().sample(rng),
            NoiseKind::ZeroTest => 0.0,
        }
    }

    /// Draws into preallocated buffers (`z` holds the base coordinates).
    pub fn sample_into(&self, rng: &mut impl Rng, z: &mut DVector<f64>, out: &mut DVector<f64>) {
        if self.is_zero() {
            out.fill(0.0);
            return;
        }
        for zi in z.iter_mut() {
            *zi = self.draw_base(rng);
        }
        out.gemv(1.0, &self.mixer, z, 0.0);
    }

    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        let p = self.dim();
        let mut z = DVector::zeros(p);
        let mut out = DVector::zeros(p);
        self.sample_into(rng, &mut z, &mut out);
        out
    }

    /// `Var[w' K w]` for symmetric K. Closed form `2 tr((KC)^2)` for the
    /// Gaussian model; otherwise a 10^6-draw Monte Carlo estimate returned
    /// with its standard error.
    pub fn var_quad_form(&self, k: &DMatrix<f64>, rng: &mut impl Rng) -> Result<(f64, Option<f64>)> {
        self.require_full_rank()?;
        if k.nrows() != self.dim() || k.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "quadratic form matrix is {}x{}, expected {0}x{0} with dim {}",
                k.nrows(),
                k.ncols(),
                self.dim()
            )));
        }
        match self.kind {
            NoiseKind::Gaussian => {
                let kc = k * &self.c;
                Ok((2.0 * (&kc * &kc).trace(), None))
            }
            _ => {
                const DRAWS: usize = 1_000_000;
                let p = self.dim();
                let mut z = DVector::zeros(p);
                let mut w = DVector::zeros(p);
                let mut kw = DVector::zeros(p);
                let mut vals = Vec::with_capacity(DRAWS);
                for _ in 0..DRAWS {
                    self.sample_into(rng, &mut z, &mut w);
                    kw.gemv(1.0, k, &w, 0.0);
                    vals.push(w.dot(&kw));
                }
                let n = DRAWS as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
                let m4 = vals.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
                let se = ((m4 - var * var).max(0.0) / n).sqrt();
                Ok((var, Some(se)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, STREAM_AUX};
    use approx::assert_relative_eq;

    fn diag(vals: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(vals))
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let model = NoiseModel::gaussian(DMatrix::identity(2, 2)).unwrap();
        let a = model.sample(&mut stream(42, STREAM_AUX));
        let b = model.sample(&mut stream(42, STREAM_AUX));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_covariance_matches_target() {
        let c = diag(&[4.0, 1.0]);
        let models = [
            NoiseModel::gaussian(c.clone()).unwrap(),
            NoiseModel::weibull_symmetric(0.5, c.clone()).unwrap(),
            NoiseModel::uniform_bounded(c.clone()).unwrap(),
        ];
        for (mi, model) in models.iter().enumerate() {
            let mut rng = stream(1000 + mi as u64, STREAM_AUX);
            let n = 1_000_000usize;
            let mut acc = DMatrix::<f64>::zeros(2, 2);
            let mut z = DVector::zeros(2);
            let mut w = DVector::zeros(2);
            for _ in 0..n {
                model.sample_into(&mut rng, &mut z, &mut w);
                acc.ger(1.0, &w, &w, 1.0);
            }
            acc /= n as f64;
            let tol = 0.02 * op_norm_2(&c);
            for i in 0..2 {
                for j in 0..2 {
                    assert!(
                        (acc[(i, j)] - c[(i, j)]).abs() <= tol,
                        "model {mi}: entry ({i},{j}) = {} vs {}",
                        acc[(i, j)],
                        c[(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn uniform_base_coordinates_stay_in_support() {
        let model = NoiseModel::uniform_bounded(DMatrix::identity(3, 3)).unwrap();
        let mut rng = stream(7, STREAM_AUX);
        for _ in 0..10_000 {
            let w = model.sample(&mut rng);
            // identity mixer, so w is the base draw itself
            assert!(w.amax() <= UNIFORM_HALF_WIDTH + 1e-12);
        }
    }

    #[test]
    fn tail_triples_by_kind() {
        let g = NoiseModel::gaussian(DMatrix::identity(2, 2)).unwrap();
        match g.tail_triple() {
            TailBound::SubWeibull { b1, b2, alpha } => {
                assert_eq!(alpha, 2.0);
                assert_eq!(b1, 2.0);
                assert_relative_eq!(b2, 2.0);
            }
            _ => panic!("gaussian must be sub-Weibull with alpha = 2"),
        }
        let w = NoiseModel::weibull_symmetric(0.5, DMatrix::identity(1, 1)).unwrap();
        match w.tail_triple() {
            TailBound::SubWeibull { b1, alpha, .. } => {
                assert_eq!(alpha, 0.5);
                assert_eq!(b1, 1.0);
            }
            _ => panic!("weibull must be sub-Weibull"),
        }
        let u = NoiseModel::uniform_bounded(DMatrix::identity(1, 1)).unwrap();
        match u.tail_triple() {
            TailBound::Bounded { radius } => assert_relative_eq!(radius, UNIFORM_HALF_WIDTH),
            _ => panic!("uniform must be bounded"),
        }
    }

    #[test]
    fn covariance_must_be_positive_definite() {
        assert!(NoiseModel::gaussian(diag(&[1.0, 0.0])).is_err());
        assert!(NoiseModel::gaussian(DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.2, 1.0])).is_err());
    }

    #[test]
    fn empirical_tails_respect_certificates() {
        // scalar draws against the certified (b1, b2, alpha) triple
        let models = [
            NoiseModel::gaussian(DMatrix::identity(1, 1)).unwrap(),
            NoiseModel::weibull_symmetric(0.5, DMatrix::identity(1, 1)).unwrap(),
            NoiseModel::weibull_symmetric(1.0, DMatrix::identity(1, 1)).unwrap(),
        ];
        for (mi, model) in models.iter().enumerate() {
            let (b1, b2, alpha) = match model.tail_triple() {
                TailBound::SubWeibull { b1, b2, alpha } => (b1, b2, alpha),
                _ => unreachable!(),
            };
            let mut rng = stream(2000 + mi as u64, STREAM_AUX);
            let n = 1_000_000usize;
            let mut draws: Vec<f64> = (0..n).map(|_| model.sample(&mut rng)[0].abs()).collect();
            draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q_hi = draws[((1.0 - 1e-5) * n as f64) as usize];
            let q_lo = draws[n / 2];
            for step in 0..20 {
                let y = q_lo + (q_hi - q_lo) * step as f64 / 19.0;
                let exceed = draws.iter().rev().take_while(|&&d| d > y).count() as f64 / n as f64;
                let bound = b1 * (-y.powf(alpha) / b2).exp();
                let se = (exceed * (1.0 - exceed) / n as f64).sqrt();
                assert!(
                    exceed <= bound * 1.05 + 3.0 * se,
                    "model {mi}: empirical tail {exceed} at y = {y} exceeds certificate {bound}"
                );
            }
        }
    }

    #[test]
    fn sample_mean_is_centered() {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        for (mi, model) in [
            NoiseModel::gaussian(c.clone()).unwrap(),
            NoiseModel::weibull_symmetric(0.5, c.clone()).unwrap(),
            NoiseModel::uniform_bounded(c.clone()).unwrap(),
        ]
        .iter()
        .enumerate()
        {
            let mut rng = stream(3000 + mi as u64, STREAM_AUX);
            let n = 1_000_000usize;
            let mut acc = DVector::<f64>::zeros(2);
            let mut z = DVector::zeros(2);
            let mut w = DVector::zeros(2);
            for _ in 0..n {
                model.sample_into(&mut rng, &mut z, &mut w);
                acc += &w;
            }
            acc /= n as f64;
            for i in 0..2 {
                let se = (c[(i, i)] / n as f64).sqrt();
                assert!(
                    acc[i].abs() <= 4.0 * se,
                    "model {mi}: coordinate {i} mean {} vs 4 SE {}",
                    acc[i],
                    4.0 * se
                );
            }
        }
    }

    #[test]
    fn zero_test_mode_is_rejected_by_full_rank_guard() {
        let z = NoiseModel::zero_test(2).unwrap();
        assert!(z.require_full_rank().is_err());
        assert_eq!(z.sample(&mut stream(1, STREAM_AUX)), DVector::zeros(2));
    }

    #[test]
    fn gaussian_var_quad_form_closed_form() {
        let model = NoiseModel::gaussian(DMatrix::identity(1, 1)).unwrap();
        let (v, se) = model
            .var_quad_form(&DMatrix::identity(1, 1), &mut stream(1, STREAM_AUX))
            .unwrap();
        assert_relative_eq!(v, 2.0);
        assert!(se.is_none());
    }

    use crate::linalg::op_norm_2;
}
