//! Eigen-structure of the update matrices and the machine-checkable
//! convergence prediction.
//!
//! Membership of a point in a numerically computed spectrum is ill-posed,
//! so the -1 and +1 membership tests go through `det(I + A)` and
//! `det(I - (2U - I)A)` via LU; the raw eigenvalue lists are advisory
//! cross-checks.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::dynamics::Confidence;
use crate::mat::{Lu, Mat};
use crate::topology::{self, AgentTypes, Topology};

/// Size cap for the dense eigenvalue path.
pub const MAX_EIGEN_N: usize = 64;

/// Iteration cap handed to the QR algorithm.
const MAX_EIGEN_ITERS: usize = 10_000;

/// Slack used when comparing spectral radii against 1.
const RADIUS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpectralError {
    #[error("{n} nodes exceed the dense eigenvalue limit of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("eigenvalue iteration did not converge within {MAX_EIGEN_ITERS} steps")]
    NoConvergence,
    #[error("agent types do not match the topology size")]
    DimensionMismatch,
    #[error("lambda must lie in [0, 1], got {0}")]
    LambdaOutOfRange(f64),
    #[error("digraph is not strongly connected")]
    NotStronglyConnected,
    #[error("theorem-based prediction requires a uniform confidence level")]
    NonUniformLambda,
    #[error("no convergence rate: the prediction is not ConvergesToMean")]
    NotConvergent,
}

/// All eigenvalues with multiplicity, sorted by descending real part then
/// descending imaginary part. Dense Schur factorization.
pub fn eigenvalues(m: &Mat) -> Result<Vec<Complex<f64>>, SpectralError> {
    let n = m.n();
    if n > MAX_EIGEN_N {
        return Err(SpectralError::TooLarge { n, max: MAX_EIGEN_N });
    }
    let schur = nalgebra::linalg::Schur::try_new(m.to_dmatrix(), f64::EPSILON, MAX_EIGEN_ITERS)
        .ok_or(SpectralError::NoConvergence)?;
    let mut eigs: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(eigs)
}

pub fn spectral_radius(eigs: &[Complex<f64>]) -> f64 {
    eigs.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `|det(M)| < 1e-9 * max(1, ||M||_inf^n)`: the determinant-based test for
/// a prescribed eigenvalue, computed by LU factorization.
fn det_says_singular(m: &Mat) -> bool {
    let det = Lu::factor(m).det();
    let tol = 1e-9 * m.inf_norm().powi(m.n() as i32).max(1.0);
    det.abs() < tol
}

/// True iff -1 is an eigenvalue of the weight matrix, decided by whether
/// the determinant of `I + A` vanishes.
pub fn has_minus_one_eigenvalue(t: &Topology) -> bool {
    let m = Mat::identity(t.n()).add_scaled(t.weights(), 1.0);
    det_says_singular(&m)
}

/// `(2U - I) A`: row `j` of the weight matrix kept for a conformist,
/// negated for a rebel.
pub fn signed_update_matrix(t: &Topology, types: &AgentTypes) -> Result<Mat, SpectralError> {
    if types.len() != t.n() {
        return Err(SpectralError::DimensionMismatch);
    }
    let mut m = t.weights().clone();
    for j in 0..t.n() {
        if types.is_rebel(j) {
            for w in m.row_mut(j) {
                *w = -*w;
            }
        }
    }
    Ok(m)
}

/// True iff +1 is an eigenvalue of `(2U - I) A`, via `det(I - (2U - I)A)`.
pub fn has_one_in_signed(t: &Topology, types: &AgentTypes) -> Result<bool, SpectralError> {
    let signed = signed_update_matrix(t, types)?;
    let m = Mat::identity(t.n()).add_scaled(&signed, -1.0);
    Ok(det_says_singular(&m))
}

/// The iteration matrix `B = lambda I + (1 - lambda)(2U - I)A`. With all
/// rebels this reduces to `lambda I - (1 - lambda) A`.
pub fn iteration_matrix(
    t: &Topology,
    types: &AgentTypes,
    lambda: f64,
) -> Result<Mat, SpectralError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(SpectralError::LambdaOutOfRange(lambda));
    }
    let signed = signed_update_matrix(t, types)?;
    let mut b = Mat::zeros(t.n());
    for j in 0..t.n() {
        for k in 0..t.n() {
            let diag = if j == k { lambda } else { 0.0 };
            b[(j, k)] = diag + (1.0 - lambda) * signed[(j, k)];
        }
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    ConvergesToMean,
    Divergent,
    Frozen,
    Unknown,
}

/// Which hypothesis backed the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionTag {
    Theorem1i,
    Theorem1ii,
    Corollary1,
    Theorem2i,
    Theorem2ii,
    Theorem3,
    LambdaOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub verdict: Verdict,
    pub basis: Vec<ConditionTag>,
    /// Whether the digraph is rebel-bipartite. A digraph that is not
    /// rebel-bipartite cannot host the non-convergent regime at all.
    pub rebel_bipartite_note: bool,
}

/// Decision ladder mapping the convergence theorems onto a verdict.
///
/// - lambda = 1 freezes the dynamic at its initial state.
/// - All rebels, lambda = 0: divergent exactly when -1 is an eigenvalue of
///   the weight matrix (the even-period oscillation), otherwise unknown.
/// - All rebels, 0 < lambda < 1: converges to the all-0.5 state when -1 is
///   not an eigenvalue; aperiodicity alone certifies that.
/// - Mixed types, lambda = 0: converges when the signed update matrix has
///   spectral radius strictly below 1.
/// - Mixed types, 0 < lambda < 1: converges when +1 is not an eigenvalue of
///   the signed update matrix; failing that, a graph that is not
///   rebel-bipartite still rules out non-convergence.
pub fn predict(t: &Topology, types: &AgentTypes, lambda: f64) -> Result<Prediction, SpectralError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(SpectralError::LambdaOutOfRange(lambda));
    }
    if types.len() != t.n() {
        return Err(SpectralError::DimensionMismatch);
    }
    let (bipartite, _) = topology::rebel_bipartite(t, types)
        .map_err(|_| SpectralError::NotStronglyConnected)?;
    let done = |verdict, basis| {
        Ok(Prediction {
            verdict,
            basis,
            rebel_bipartite_note: bipartite,
        })
    };

    if lambda == 1.0 {
        return done(Verdict::Frozen, vec![ConditionTag::LambdaOne]);
    }
    if types.all_rebel() {
        let minus_one = has_minus_one_eigenvalue(t);
        if lambda == 0.0 {
            if minus_one {
                return done(Verdict::Divergent, vec![ConditionTag::Theorem1i]);
            }
            return done(Verdict::Unknown, vec![]);
        }
        if !minus_one {
            let mut basis = vec![ConditionTag::Theorem1ii];
            if topology::period(t).map_err(|_| SpectralError::NotStronglyConnected)? == 1 {
                basis.push(ConditionTag::Corollary1);
            }
            return done(Verdict::ConvergesToMean, basis);
        }
        return done(Verdict::Unknown, vec![]);
    }
    if lambda == 0.0 {
        let signed = signed_update_matrix(t, types)?;
        let radius = spectral_radius(&eigenvalues(&signed)?);
        if radius < 1.0 - RADIUS_TOL {
            return done(Verdict::ConvergesToMean, vec![ConditionTag::Theorem2i]);
        }
        return done(Verdict::Unknown, vec![]);
    }
    if !has_one_in_signed(t, types)? {
        return done(Verdict::ConvergesToMean, vec![ConditionTag::Theorem2ii]);
    }
    if !bipartite {
        return done(Verdict::ConvergesToMean, vec![ConditionTag::Theorem3]);
    }
    done(Verdict::Unknown, vec![])
}

/// `predict` for a shared confidence level; refuses per-agent vectors whose
/// entries differ.
pub fn predict_for(
    t: &Topology,
    types: &AgentTypes,
    confidence: &Confidence,
) -> Result<Prediction, SpectralError> {
    if !confidence.is_uniform() {
        return Err(SpectralError::NonUniformLambda);
    }
    predict(t, types, confidence.lambda()[0])
}

/// Asymptotic per-step error contraction factor: the spectral radius of the
/// iteration matrix. Only defined when the prediction is ConvergesToMean
/// (the radius is then strictly below 1).
pub fn predicted_rate(
    t: &Topology,
    types: &AgentTypes,
    lambda: f64,
) -> Result<f64, SpectralError> {
    let prediction = predict(t, types, lambda)?;
    if prediction.verdict != Verdict::ConvergesToMean {
        return Err(SpectralError::NotConvergent);
    }
    let b = iteration_matrix(t, types, lambda)?;
    Ok(spectral_radius(&eigenvalues(&b)?))
}

/// Everything the spectral analysis has to say about one instance.
/// `eigenvalues` is the spectrum of the weight matrix as `[re, im]` pairs;
/// `rate` is present only when the prediction is ConvergesToMean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub eigenvalues: Vec<[f64; 2]>,
    pub spectral_radius: f64,
    pub has_minus_one: bool,
    pub has_one_in_signed: bool,
    pub signed_radius: f64,
    pub rate: Option<f64>,
}

pub fn spectral_report(
    t: &Topology,
    types: &AgentTypes,
    lambda: f64,
) -> Result<SpectralReport, SpectralError> {
    let eigs = eigenvalues(t.weights())?;
    let signed = signed_update_matrix(t, types)?;
    let signed_radius = spectral_radius(&eigenvalues(&signed)?);
    let rate = match predict(t, types, lambda) {
        Ok(p) if p.verdict == Verdict::ConvergesToMean => {
            let b = iteration_matrix(t, types, lambda)?;
            Some(spectral_radius(&eigenvalues(&b)?))
        }
        _ => None,
    };
    Ok(SpectralReport {
        spectral_radius: spectral_radius(&eigs),
        eigenvalues: eigs.iter().map(|z| [z.re, z.im]).collect(),
        has_minus_one: has_minus_one_eigenvalue(t),
        has_one_in_signed: has_one_in_signed(t, types)?,
        signed_radius,
        rate,
    })
}
