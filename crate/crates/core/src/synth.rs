//! Synthetic system generators used by tests, property suites, and the
//! verification harness.

use nalgebra::DMatrix;
use rand::Rng;

use crate::linalg::op_norm_2;
use crate::lqmodel::{spectral_radius, CostPair, DynamicsParameter};

/// Random matrix rescaled to a prescribed spectral radius.
pub fn random_stable_matrix(rng: &mut impl Rng, p: usize, rho_target: f64) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    let rho = spectral_radius(&raw).unwrap();
    if rho > 0.0 {
        raw * (rho_target / rho)
    } else {
        raw
    }
}

/// Random orthogonal matrix (QR of a Gaussian-free uniform draw).
pub fn random_orthogonal(rng: &mut impl Rng, p: usize) -> DMatrix<f64> {
    loop {
        let raw = DMatrix::<f64>::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        let qr = raw.qr();
        let q = qr.q();
        let det: f64 = q.determinant();
        if det.abs() > 0.5 {
            return q;
        }
    }
}

/// Well-conditioned random positive definite matrix.
pub fn random_pd(rng: &mut impl Rng, p: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    let shift: f64 = rng.random_range(0.3..1.5);
    &m * m.transpose() / p as f64 + DMatrix::identity(p, p) * shift
}

/// A stabilizable system with a known stabilizer and a random cost pair.
#[derive(Debug, Clone)]
pub struct StabilizableSystem {
    pub theta: DynamicsParameter,
    pub stabilizer: DMatrix<f64>,
    pub cost: CostPair,
}

/// Samples a stable closed loop D and a feedback L, then opens the loop:
/// `A = D - B L`. The result is stabilizable by construction (by L), without
/// being controllable in general.
pub fn random_system(rng: &mut impl Rng, p: usize, r: usize) -> StabilizableSystem {
    let rho: f64 = rng.random_range(0.05..0.95);
    let d = random_stable_matrix(rng, p, rho);
    let l = DMatrix::from_fn(r, p, |_, _| rng.random_range(-0.7..0.7));
    let b = DMatrix::from_fn(p, r, |_, _| rng.random_range(-1.0..1.0));
    let a = &d - &b * &l;
    let theta = DynamicsParameter::new(a, b).unwrap();
    let cost = CostPair::new(random_pd(rng, p), random_pd(rng, r)).unwrap();
    StabilizableSystem { theta, stabilizer: l, cost }
}

/// Scalar DARE solved by the quadratic formula; returns (k, gain).
///
/// Independent of the fixed-point solver, so it doubles as an oracle:
/// `b^2 k^2 + (r - q b^2 - a^2 r) k - q r = 0`, taking the positive root.
pub fn scalar_dare_oracle(a: f64, b: f64, q: f64, r: f64) -> (f64, f64) {
    assert!(q > 0.0 && r > 0.0);
    if b == 0.0 {
        assert!(a.abs() < 1.0, "uncontrollable mode must be stable");
        return (q / (1.0 - a * a), 0.0);
    }
    let b2 = b * b;
    let lin = r - q * b2 - a * a * r;
    let k = (-lin + (lin * lin + 4.0 * b2 * q * r).sqrt()) / (2.0 * b2);
    let gain = -b * k * a / (b2 * k + r);
    (k, gain)
}

/// A pair of distinct parameters with identical optimal gains, identical
/// closed loops under that gain, and identical optimal average costs.
#[derive(Debug, Clone)]
pub struct MatchedGainPair {
    pub truth: DynamicsParameter,
    pub optimistic: DynamicsParameter,
    pub cost: CostPair,
}

/// Constructs a matched-gain pair.
///
/// Non-trivial instances require the optimal closed loop of the base system
/// to be singular: given the closed loop D, the gain L and the Lyapunov
/// value K, the stationarity condition `B' K D + R L = 0` pins B uniquely
/// whenever `K D` is invertible, so equal-cost relatives only exist along
/// null directions of `K D`. The recipe below plants a dead-beat mode
/// (a = 0, so its optimal gain and closed-loop entry are both zero), builds
/// the rest of the system as decoupled scalar modes, perturbs `[A, B]` in
/// the null-space direction of the extended feedback so the closed loop is
/// untouched, and finally conjugates everything by a random orthogonal basis
/// so the instances look generic.
///
/// Requires `1 <= r <= p`.
pub fn matched_gain_pair(rng: &mut impl Rng, p: usize, r: usize) -> MatchedGainPair {
    assert!(r >= 1 && r <= p, "need 1 <= r <= p for the modal construction");
    // modal scalar data; mode 0 is dead-beat and carries input 0
    let mut a_diag = vec![0.0f64; p];
    let mut q_diag = vec![0.0f64; p];
    for (m, (a, q)) in a_diag.iter_mut().zip(q_diag.iter_mut()).enumerate() {
        *q = rng.random_range(0.4..1.6);
        *a = if m == 0 {
            0.0
        } else {
            let mag = rng.random_range(0.2..0.85);
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        };
    }
    let mut b_vals = vec![0.0f64; r];
    let mut r_diag = vec![0.0f64; r];
    for j in 0..r {
        b_vals[j] = rng.random_range(0.5..1.8) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        r_diag[j] = rng.random_range(0.4..1.6);
    }

    let a1 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(a_diag.clone()));
    let mut b1 = DMatrix::zeros(p, r);
    for j in 0..r {
        b1[(j, j)] = b_vals[j];
    }
    let q_mat = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(q_diag.clone()));
    let r_mat = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(r_diag.clone()));

    // per-mode optimal gains of the decoupled base system
    let mut l1 = DMatrix::zeros(r, p);
    for j in 0..r {
        let (_, gain) = scalar_dare_oracle(a_diag[j], b_vals[j], q_diag[j], r_diag[j]);
        l1[(j, j)] = gain;
    }

    // perturbation in the null space of the extended feedback: only the
    // dead-beat column of G may be populated (closed-loop column is zero
    // there, so the gain stationarity of the relative is preserved)
    let mut g = DMatrix::zeros(r, p);
    for j in 0..r {
        g[(j, 0)] = rng.random_range(0.2..0.8) * if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    let delta_b = g.transpose();
    let delta_a = -&delta_b * &l1;
    let a0 = &a1 + delta_a;
    let b0 = &b1 + delta_b;

    // conjugate by a random orthogonal basis
    let u = random_orthogonal(rng, p);
    let rot = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
        DynamicsParameter::new(&u * a * u.transpose(), &u * b).unwrap()
    };
    let truth = rot(&a0, &b0);
    let optimistic = rot(&a1, &b1);
    let cost = CostPair::new(&u * q_mat * u.transpose(), r_mat).unwrap();
    debug_assert!(op_norm_2(&(truth.stacked() - optimistic.stacked())) > 1e-6);
    MatchedGainPair { truth, optimistic, cost }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, STREAM_AUX};

    #[test]
    fn random_system_is_stabilized_by_its_certificate() {
        let mut rng = stream(1, STREAM_AUX);
        for _ in 0..50 {
            let p = rng.random_range(1..5usize);
            let r = rng.random_range(1..4usize);
            let sys = random_system(&mut rng, p, r);
            let d = sys.theta.closed_loop(&sys.stabilizer).unwrap();
            assert!(spectral_radius(&d).unwrap() < 1.0);
        }
    }

    #[test]
    fn scalar_oracle_satisfies_the_fixed_point() {
        let mut rng = stream(2, STREAM_AUX);
        for _ in 0..200 {
            let a: f64 = rng.random_range(-1.5..1.5);
            let b: f64 = rng.random_range(0.2..2.0);
            let q: f64 = rng.random_range(0.2..2.0);
            let r: f64 = rng.random_range(0.2..2.0);
            let (k, gain) = scalar_dare_oracle(a, b, q, r);
            let rhs = q + a * a * k - a * a * k * k * b * b / (b * b * k + r);
            assert!((k - rhs).abs() <= 1e-10 * (1.0 + k), "fixed point violated");
            assert!((gain + b * k * a / (b * b * k + r)).abs() <= 1e-12);
            assert!((a + b * gain).abs() < 1.0, "closed loop must be stable");
        }
    }

    #[test]
    fn matched_pair_parameters_differ() {
        let mut rng = stream(3, STREAM_AUX);
        let pair = matched_gain_pair(&mut rng, 3, 2);
        assert!(pair.truth.distance(&pair.optimistic).unwrap() > 1e-3);
    }
}
