//! Core domain types for linear-quadratic systems: dynamics parameters,
//! quadratic cost pairs, and the spectral analysis that certifies transient
//! state growth of stable closed loops.
//!
//! The central quantity here is the Jordan constant `zeta(D)` of a stable
//! matrix `D`: a computable series constant with the property that any
//! trajectory `x(t+1) = D x(t) + w(t+1)` driven by noise bounded by `c` in
//! sup-norm satisfies `max_t |x(t)|_2 <= zeta(D) (|x(0)|_inf + c)`. It is
//! consumed downstream as a conservative certificate, so over-estimating it
//! is safe while under-estimating it is not; the numerics below are chosen
//! accordingly.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{
    self, check_finite, check_square, inf_norm_c, inf_to_2_norm_ub, inf_to_2_norm_ub_c,
    op_norm_2, to_complex, CMatrix,
};

/// The dynamics pair `[A, B]`: `x(t+1) = A x(t) + B u(t) + w(t+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsParameter {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl DynamicsParameter {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        check_square(&a, "state transition matrix")?;
        check_finite(&a, "state transition matrix")?;
        check_finite(&b, "input matrix")?;
        if b.nrows() != a.nrows() {
            return Err(Error::Dimension(format!(
                "input matrix has {} rows, expected {}",
                b.nrows(),
                a.nrows()
            )));
        }
        if a.nrows() == 0 || b.ncols() == 0 {
            return Err(Error::Dimension("state and input dimensions must be positive".into()));
        }
        Ok(Self { a, b })
    }

    /// Rebuilds a parameter from the stacked `p x (p+r)` block `[A B]`.
    pub fn from_stacked(theta: &DMatrix<f64>, input_dim: usize) -> Result<Self> {
        let p = theta.nrows();
        if theta.ncols() != p + input_dim {
            return Err(Error::Dimension(format!(
                "stacked parameter is {}x{}, expected {}x{}",
                theta.nrows(),
                theta.ncols(),
                p,
                p + input_dim
            )));
        }
        let a = theta.view((0, 0), (p, p)).into_owned();
        let b = theta.view((0, p), (p, input_dim)).into_owned();
        Self::new(a, b)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// State dimension p.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension r.
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// q = p + r.
    pub fn joint_dim(&self) -> usize {
        self.state_dim() + self.input_dim()
    }

    /// The stacked `p x q` block `[A B]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let p = self.state_dim();
        let r = self.input_dim();
        let mut theta = DMatrix::zeros(p, p + r);
        theta.view_mut((0, 0), (p, p)).copy_from(&self.a);
        theta.view_mut((0, p), (p, r)).copy_from(&self.b);
        theta
    }

    /// Closed-loop matrix `A + B L` under feedback `L`.
    pub fn closed_loop(&self, l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if l.nrows() != self.input_dim() || l.ncols() != self.state_dim() {
            return Err(Error::Dimension(format!(
                "feedback is {}x{}, expected {}x{}",
                l.nrows(),
                l.ncols(),
                self.input_dim(),
                self.state_dim()
            )));
        }
        Ok(&self.a + &self.b * l)
    }

    /// `[A B] * ext` for an extended feedback `ext = [I; L]`.
    pub fn apply_extended(&self, ext: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if ext.nrows() != self.joint_dim() || ext.ncols() != self.state_dim() {
            return Err(Error::Dimension(format!(
                "extended feedback is {}x{}, expected {}x{}",
                ext.nrows(),
                ext.ncols(),
                self.joint_dim(),
                self.state_dim()
            )));
        }
        Ok(self.stacked() * ext)
    }

    /// Operator-norm distance between two parameters of identical shape.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        if self.state_dim() != other.state_dim() || self.input_dim() != other.input_dim() {
            return Err(Error::Dimension("parameters have different shapes".into()));
        }
        Ok(op_norm_2(&(self.stacked() - other.stacked())))
    }
}

/// Positive definite stage-cost pair (Q, R).
#[derive(Debug, Clone)]
pub struct CostPair {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl CostPair {
    /// Symmetrizes both matrices (tolerating asymmetry up to 1e-10 of their
    /// scale) and requires strict positive definiteness.
    pub fn new(mut q: DMatrix<f64>, mut r: DMatrix<f64>) -> Result<Self> {
        check_square(&q, "state cost Q")?;
        check_square(&r, "input cost R")?;
        check_finite(&q, "state cost Q")?;
        check_finite(&r, "input cost R")?;
        for (m, name) in [(&mut q, "Q"), (&mut r, "R")] {
            let scale = op_norm_2(m).max(1.0);
            let skew = linalg::symmetrize(m);
            if skew > 1e-10 * scale {
                return Err(Error::InvalidArgument(format!(
                    "{name} is asymmetric beyond tolerance ({skew:e})"
                )));
            }
            let lam_min = linalg::sym_lambda_min(m);
            if lam_min <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive definite (lambda_min = {lam_min:e})"
                )));
            }
        }
        Ok(Self { q, r })
    }

    pub fn state_cost(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn input_cost(&self) -> &DMatrix<f64> {
        &self.r
    }
}

/// One (eigenvalue, multiplicity) group of a spectral decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBlock {
    pub eigenvalue: Complex<f64>,
    pub size: usize,
}

/// How the transient-growth certificate was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZetaCertificate {
    /// Well-separated spectrum: eigenbasis similarity plus the block series.
    Eigenbasis,
    /// Clustered or ill-conditioned spectrum: direct summation of the
    /// (inf -> 2) norms of matrix powers, with a certified geometric tail.
    PowerSum,
}

/// Spectral data of a stable matrix together with the constant `zeta`.
#[derive(Debug, Clone)]
pub struct JordanData {
    /// Similarity transform P with `D = P^{-1} Lambda P` on the eigenbasis
    /// route; the identity on the power-sum route.
    pub p_transform: CMatrix,
    pub blocks: Vec<SpectralBlock>,
    pub zeta: f64,
    pub certificate: ZetaCertificate,
}

/// Largest eigenvalue magnitude.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    check_square(m, "spectral radius input")?;
    check_finite(m, "spectral radius input")?;
    if m.is_empty() {
        return Err(Error::Dimension("spectral radius of an empty matrix".into()));
    }
    Ok(m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// True iff `A + B L` has spectral radius below `1 - tol`.
pub fn is_stabilizer(theta: &DynamicsParameter, l: &DMatrix<f64>, tol: f64) -> Result<bool> {
    let closed = theta.closed_loop(l)?;
    Ok(spectral_radius(&closed)? < 1.0 - tol)
}

/// Default margin for [`is_stabilizer`]; the stability condition is a strict
/// inequality and needs numerical headroom.
pub const STABILIZER_TOL: f64 = 1e-9;

const CLUSTER_REL_TOL: f64 = 1e-7;
const EIGVEC_RESIDUAL_TOL: f64 = 1e-8;
const EIGBASIS_COND_FLOOR: f64 = 1e-8;
const SERIES_REL_TOL: f64 = 1e-12;
const SERIES_ITER_CAP: u64 = 10_000_000;
const RHO_GRID_POINTS: usize = 200;

/// Jordan constant of a stable matrix.
///
/// Two routes produce the certificate:
///
/// * If the spectrum is well separated (no two eigenvalues within relative
///   distance 1e-7) and the eigenbasis is well conditioned, the constant is
///   `ub(P^{-1}) * |P|_inf * sum_t zeta_t(Lambda)` on the eigenbasis
///   similarity, where `ub` is the certified (inf -> 2) norm bound and the
///   per-block series term is minimized over a 200-point log grid of decay
///   rates plus the endpoint `|lambda_i|`.
/// * Otherwise (clustered, possibly defective spectrum) the routine falls
///   back to summing `ub(D^t)` directly with a certified geometric tail.
///   Transient amplification of the non-normal part is then priced by the
///   actual powers rather than by a similarity, which keeps the value a
///   valid upper bound without constructing fragile Jordan chains.
///
/// Note the similarity transform is not unique, so `zeta` is decomposition
/// dependent; it is only guaranteed to be a valid certificate.
pub fn jordan_constant(d: &DMatrix<f64>) -> Result<JordanData> {
    check_square(d, "jordan constant input")?;
    check_finite(d, "jordan constant input")?;
    let rho = spectral_radius(d)?;
    if rho >= 1.0 {
        return Err(Error::Unstable { rho });
    }
    let p = d.nrows();
    let eigs: Vec<Complex<f64>> = d.complex_eigenvalues().iter().copied().collect();
    let clusters = cluster_eigenvalues(&eigs);
    let blocks: Vec<SpectralBlock> = clusters
        .iter()
        .map(|idxs| {
            let mean = idxs.iter().map(|&i| eigs[i]).sum::<Complex<f64>>() / idxs.len() as f64;
            SpectralBlock { eigenvalue: mean, size: idxs.len() }
        })
        .collect();

    let all_simple = blocks.iter().all(|b| b.size == 1);
    if all_simple {
        if let Some(v_basis) = eigenbasis(d, &eigs) {
            if let Some(p_tr) = v_basis.clone().try_inverse() {
                let series = zeta_series(&blocks)?;
                let zeta = inf_to_2_norm_ub_c(&v_basis) * inf_norm_c(&p_tr) * series;
                return Ok(JordanData {
                    p_transform: p_tr,
                    blocks,
                    zeta,
                    certificate: ZetaCertificate::Eigenbasis,
                });
            }
        }
    }

    let zeta = power_sum_zeta(d)?;
    Ok(JordanData {
        p_transform: to_complex(&DMatrix::identity(p, p)),
        blocks,
        zeta,
        certificate: ZetaCertificate::PowerSum,
    })
}

/// Groups eigenvalues whose pairwise distance is below the relative
/// clustering tolerance (transitive closure).
fn cluster_eigenvalues(eigs: &[Complex<f64>]) -> Vec<Vec<usize>> {
    let n = eigs.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let tol = CLUSTER_REL_TOL * eigs[i].norm().max(eigs[j].norm()).max(1.0);
            if (eigs[i] - eigs[j]).norm() <= tol {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Eigenvector basis from SVD null spaces of `D - lambda I`; `None` if any
/// eigenpair residual is poor or the basis is close to singular.
fn eigenbasis(d: &DMatrix<f64>, eigs: &[Complex<f64>]) -> Option<CMatrix> {
    let p = d.nrows();
    let dc = to_complex(d);
    let d_scale = op_norm_2(d).max(1.0);
    let mut basis = CMatrix::zeros(p, p);
    for (k, &lam) in eigs.iter().enumerate() {
        let mut shifted = dc.clone();
        for i in 0..p {
            shifted[(i, i)] -= lam;
        }
        let svd = shifted.clone().svd(false, true);
        let v_t = svd.v_t?;
        let v = v_t.row(p - 1).conjugate().transpose();
        let residual = (&dc * &v - &v * lam).norm();
        if residual > EIGVEC_RESIDUAL_TOL * d_scale {
            return None;
        }
        basis.column_mut(k).copy_from(&v);
    }
    let sv = basis.clone().svd(false, false).singular_values;
    let (smin, smax) = (sv.min(), sv.max());
    if smin < EIGBASIS_COND_FLOOR * smax.max(1.0) {
        return None;
    }
    Some(basis)
}

/// `sum_{t >= 0} zeta_t(Lambda)` with `zeta_0 = 1` and
/// `zeta_t = max_i inf_{rho >= |lambda_i|} t^{m_i - 1} rho^t sum_j rho^{-j}/j!`,
/// truncated when the closed-form polynomial-geometric tail bound drops below
/// 1e-12 of the partial sum.
pub fn zeta_series(blocks: &[SpectralBlock]) -> Result<f64> {
    let lam_bar = blocks.iter().map(|b| b.eigenvalue.norm()).fold(0.0, f64::max);
    if lam_bar >= 1.0 {
        return Err(Error::Unstable { rho: lam_bar });
    }
    let mu = blocks.iter().map(|b| b.size).max().unwrap_or(1);
    let mut total = 1.0; // t = 0 term
    let mut t: u64 = 1;
    loop {
        let zt = blocks
            .iter()
            .map(|b| zeta_t_block(b.eigenvalue.norm(), b.size, t))
            .fold(0.0, f64::max);
        total += zt;
        if lam_bar == 0.0 {
            if t >= mu as u64 {
                break;
            }
        } else if series_tail_bound(t + 1, lam_bar, mu) < SERIES_REL_TOL * total {
            break;
        }
        t += 1;
        if t > SERIES_ITER_CAP {
            return Err(Error::Numerical(format!(
                "zeta series did not truncate within {SERIES_ITER_CAP} terms (spectral radius {lam_bar})"
            )));
        }
    }
    Ok(total)
}

/// Per-block series term at time `t`, minimized over the decay-rate grid.
fn zeta_t_block(abs_lambda: f64, m: usize, t: u64) -> f64 {
    debug_assert!(abs_lambda < 1.0);
    let mut best = f64::INFINITY;
    // endpoint rho = |lambda|
    best = best.min(zeta_t_objective(abs_lambda, m, t));
    // log grid on [max(|lambda|, tiny), 1)
    let lo = abs_lambda.max(1e-16);
    let hi = 1.0 - 1e-12;
    if lo < hi {
        let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
        for k in 0..RHO_GRID_POINTS {
            let f = k as f64 / (RHO_GRID_POINTS - 1) as f64;
            let rho = (ln_lo + f * (ln_hi - ln_lo)).exp();
            best = best.min(zeta_t_objective(rho, m, t));
        }
    }
    best
}

/// `t^{m-1} rho^t sum_{j=0}^{m-1} rho^{-j} / j!`, with the rho = 0 limit
/// handled explicitly.
fn zeta_t_objective(rho: f64, m: usize, t: u64) -> f64 {
    let tm = t as f64;
    if rho == 0.0 {
        // only the j = t term survives; j > t terms diverge
        return if (t as usize) < m - 1 {
            f64::INFINITY
        } else if (t as usize) <= m - 1 {
            // t == m - 1
            tm.powi(m as i32 - 1) / factorial(t as usize)
        } else {
            0.0
        };
    }
    let mut sum = 0.0;
    let mut fact = 1.0;
    for j in 0..m {
        if j > 0 {
            fact *= j as f64;
        }
        sum += rho.powi(-(j as i32)) / fact;
    }
    let ln_val = (m as f64 - 1.0) * tm.ln() + tm * rho.ln();
    ln_val.exp() * sum
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Upper bound on `sum_{s >= t} s^{mu-1} lam^s e^{1/lam}` via the general
/// block bound and a geometric comparison once the ratio drops below one.
fn series_tail_bound(t: u64, lam_bar: f64, mu: usize) -> f64 {
    let mut t = t as f64;
    let e_term = (1.0 / lam_bar).exp();
    // advance until the term ratio ((t+1)/t)^{mu-1} * lam is below 1
    let mut head = 0.0;
    for _ in 0..64 {
        let ratio = ((t + 1.0) / t).powi(mu as i32 - 1) * lam_bar;
        if ratio < 1.0 {
            let first = t.powi(mu as i32 - 1) * lam_bar.powf(t) * e_term;
            return head + first / (1.0 - ratio);
        }
        head += t.powi(mu as i32 - 1) * lam_bar.powf(t) * e_term;
        t += 1.0;
    }
    f64::INFINITY
}

/// Fallback certificate: `sum_t ub(D^t)` with a certified geometric tail.
fn power_sum_zeta(d: &DMatrix<f64>) -> Result<f64> {
    let p = d.nrows();
    // Find k with |D^k|_2 <= 1/2 and accumulate sum_{a=1..k} |D^a|_2 for the
    // tail constant: sum_{j>=1} |D^j|_2 <= S_k / (1 - sigma_k).
    let mut power = d.clone();
    let mut sum_norms = 0.0;
    let mut sigma_k;
    let mut k: u64 = 1;
    loop {
        sigma_k = op_norm_2(&power);
        sum_norms += sigma_k;
        if sigma_k <= 0.5 {
            break;
        }
        k += 1;
        if k > 1_000_000 {
            return Err(Error::Numerical(
                "matrix powers do not contract; spectral radius too close to one".into(),
            ));
        }
        power *= d;
    }
    let tail_const = sum_norms / (1.0 - sigma_k);

    let mut acc = 0.0;
    let mut m = DMatrix::<f64>::identity(p, p);
    let mut t: u64 = 0;
    loop {
        acc += inf_to_2_norm_ub(&m);
        // tail over s > t: ub(D^s) <= |D^{s-t}|_2 ub(D^t)
        let tail = inf_to_2_norm_ub(&m) * tail_const;
        if tail < SERIES_REL_TOL * acc {
            break;
        }
        t += 1;
        if t > SERIES_ITER_CAP {
            return Err(Error::Numerical("power-sum certificate did not truncate".into()));
        }
        m *= d;
    }
    Ok(acc)
}

/// Deterministic transient bound behind the certificate: for any trajectory
/// with `|w(t)|_inf <= c`, `max_t |x(t)|_2 <= zeta (|x(0)|_inf + c)`.
pub fn state_norm_certificate(zeta: f64, x0_inf: f64, noise_sup: f64) -> f64 {
    zeta * (x0_inf + noise_sup)
}
