//! Executes the opinion update rules, records trajectories, classifies the
//! limit behavior, and provides a closed-form fixed-point oracle.
//!
//! A conformist averages her neighbors; a rebel adopts the complement of
//! that average. Both blend the result with their previous opinion through
//! a per-agent confidence level. Updates are synchronous: every new opinion
//! is computed from the old state, inner sums in ascending neighbor order,
//! so trajectories are bit-reproducible.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::mat::{Lu, Mat};
use crate::spectral;
use crate::topology::{AgentTypes, Topology};

/// Oscillation is only declared while consecutive states still move at
/// least this much.
pub const OSCILLATION_FLOOR: f64 = 1e-3;

/// Slack allowed around [0, 1] before the runner treats a state as a
/// violated invariant; row sums are only exact to `ROW_SUM_TOL`.
const BOX_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("dimension mismatch between state, topology, types, or confidence")]
    DimensionMismatch,
    #[error("initial opinion x[{index}] = {value} outside [0, 1]")]
    InvalidInitial { index: usize, value: f64 },
    #[error("lambda must lie in [0, 1], got {0}")]
    LambdaOutOfRange(f64),
    #[error("I - B is singular: 1 is an eigenvalue of the iteration matrix")]
    Singular,
    #[error("lambda = 1 freezes the dynamic; no fixed-point solve")]
    LambdaOne,
}

/// Opinion vector at one time step. Steps are numbered from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct OpinionState {
    pub x: Vec<f64>,
    pub t: usize,
}

impl OpinionState {
    pub fn initial(x: Vec<f64>) -> Result<OpinionState, DynamicsError> {
        for (index, &value) in x.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(DynamicsError::InvalidInitial { index, value });
            }
        }
        Ok(OpinionState { x, t: 1 })
    }
}

/// Per-agent confidence levels. `is_uniform` is true iff all entries are
/// equal; only then do the theorem-based predictions apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    lambda: Vec<f64>,
    uniform: bool,
}

impl Confidence {
    pub fn uniform(lambda: f64, n: usize) -> Result<Confidence, DynamicsError> {
        Confidence::per_agent(vec![lambda; n])
    }

    pub fn per_agent(lambda: Vec<f64>) -> Result<Confidence, DynamicsError> {
        for &l in &lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(DynamicsError::LambdaOutOfRange(l));
            }
        }
        let uniform = lambda.windows(2).all(|w| w[0] == w[1]);
        Ok(Confidence { lambda, uniform })
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    /// True when every agent fully trusts her previous opinion, freezing
    /// the dynamic at its initial state.
    pub fn is_frozen(&self) -> bool {
        self.lambda.iter().all(|&l| l == 1.0)
    }
}

/// One synchronous update. For agent `j` with confidence `l` and neighbor
/// average `s`: a conformist moves to `l x_j + (1 - l) s`, a rebel to
/// `l x_j + (1 - l)(1 - s)`.
pub fn step(
    state: &OpinionState,
    t: &Topology,
    types: &AgentTypes,
    c: &Confidence,
) -> Result<OpinionState, DynamicsError> {
    let n = t.n();
    if state.x.len() != n || types.len() != n || c.len() != n {
        return Err(DynamicsError::DimensionMismatch);
    }
    let mut x = Vec::with_capacity(n);
    for j in 0..n {
        let mut avg = 0.0;
        for (k, &w) in t.weights().row(j).iter().enumerate() {
            avg += w * state.x[k];
        }
        let target = if types.is_rebel(j) { 1.0 - avg } else { avg };
        let l = c.lambda()[j];
        x.push(l * state.x[j] + (1.0 - l) * target);
    }
    Ok(OpinionState { x, t: state.t + 1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict")]
pub enum TrajectoryVerdict {
    ConvergedTo { limit: Vec<f64> },
    PeriodTwoOscillation { pair: (Vec<f64>, Vec<f64>) },
    MaxIterations,
}

/// A recorded run: every visited state, the classification of the limit
/// behavior, and the number of steps executed.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<OpinionState>,
    pub verdict: TrajectoryVerdict,
    pub iterations_used: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &OpinionState {
        self.states.last().expect("trajectory has at least x0")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunParams {
    /// Step-difference threshold for convergence and oscillation tests.
    pub tol_step: f64,
    /// Consecutive detections required before a verdict is declared.
    pub window: usize,
    pub max_iter: usize,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            tol_step: 1e-10,
            window: 5,
            max_iter: 100_000,
        }
    }
}

fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Iterates the dynamic from `x0` until it settles, oscillates with period
/// two, or runs out of budget.
///
/// ConvergedTo fires after `window` consecutive steps with
/// `||x(t+1) - x(t)||_inf < tol_step`; PeriodTwoOscillation after `window`
/// consecutive steps with `||x(t+2) - x(t)||_inf < tol_step` while the
/// one-step difference stays above `OSCILLATION_FLOOR`.
pub fn run(
    x0: Vec<f64>,
    t: &Topology,
    types: &AgentTypes,
    c: &Confidence,
    params: &RunParams,
) -> Result<Trajectory, DynamicsError> {
    let initial = OpinionState::initial(x0)?;
    let mut states = vec![initial];
    let mut conv_streak = 0usize;
    let mut osc_streak = 0usize;

    for iter in 1..=params.max_iter {
        let next = step(states.last().unwrap(), t, types, c)?;
        for &v in &next.x {
            assert!(
                (-BOX_SLACK..=1.0 + BOX_SLACK).contains(&v),
                "state left [0,1] at step {iter}: {v}"
            );
        }
        let diff1 = inf_dist(&next.x, &states[states.len() - 1].x);
        let diff2 = (states.len() >= 2).then(|| inf_dist(&next.x, &states[states.len() - 2].x));
        states.push(next);

        if diff1 < params.tol_step {
            conv_streak += 1;
        } else {
            conv_streak = 0;
        }
        if diff2.is_some_and(|d| d < params.tol_step) && diff1 >= OSCILLATION_FLOOR {
            osc_streak += 1;
        } else {
            osc_streak = 0;
        }

        if conv_streak >= params.window {
            let limit = states.last().unwrap().x.clone();
            return Ok(Trajectory {
                states,
                verdict: TrajectoryVerdict::ConvergedTo { limit },
                iterations_used: iter,
            });
        }
        if osc_streak >= params.window {
            let a = states[states.len() - 2].x.clone();
            let b = states[states.len() - 1].x.clone();
            return Ok(Trajectory {
                states,
                verdict: TrajectoryVerdict::PeriodTwoOscillation { pair: (a, b) },
                iterations_used: iter,
            });
        }
    }
    Ok(Trajectory {
        states,
        verdict: TrajectoryVerdict::MaxIterations,
        iterations_used: params.max_iter,
    })
}

/// Solves `(I - B) x = (1 - lambda)(I - U) 1` by LU with partial pivoting.
/// Whenever at least one rebel exists and `I - B` is nonsingular the unique
/// fixed point is the all-0.5 vector, which makes this solve an algebraic
/// oracle for the simulation. With zero rebels the right-hand side is zero
/// and `I - B` is singular along the consensus subspace.
pub fn fixed_point_direct(
    t: &Topology,
    types: &AgentTypes,
    lambda: f64,
) -> Result<Vec<f64>, DynamicsError> {
    if types.len() != t.n() {
        return Err(DynamicsError::DimensionMismatch);
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(DynamicsError::LambdaOutOfRange(lambda));
    }
    if lambda == 1.0 {
        return Err(DynamicsError::LambdaOne);
    }
    let b = spectral::iteration_matrix(t, types, lambda).expect("inputs validated");
    let m = Mat::identity(t.n()).add_scaled(&b, -1.0);
    let rhs: Vec<f64> = (0..t.n())
        .map(|j| (1.0 - lambda) * (1.0 - types.u(j)))
        .collect();
    Lu::factor(&m).solve(&rhs).ok_or(DynamicsError::Singular)
}

/// True iff every consecutive pair of states reproduces under `step`
/// bitwise and the step indices are consecutive.
pub fn replay_check(
    traj: &Trajectory,
    t: &Topology,
    types: &AgentTypes,
    c: &Confidence,
) -> bool {
    traj.states.windows(2).all(|pair| match step(&pair[0], t, types, c) {
        Ok(next) => next == pair[1],
        Err(_) => false,
    })
}

/// CSV export: header `t,x_0,...,x_{n-1}`, one row per recorded state at
/// full (round-trip) precision. `thin` keeps every thin-th state plus the
/// last one.
pub fn write_trajectory_csv<W: Write>(
    traj: &Trajectory,
    mut out: W,
    thin: usize,
) -> io::Result<()> {
    let thin = thin.max(1);
    let n = traj.states.first().map_or(0, |s| s.x.len());
    write!(out, "t")?;
    for j in 0..n {
        write!(out, ",x_{j}")?;
    }
    writeln!(out)?;
    let last = traj.states.len().saturating_sub(1);
    for (i, state) in traj.states.iter().enumerate() {
        if i % thin != 0 && i != last {
            continue;
        }
        write!(out, "{}", state.t)?;
        for v in &state.x {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::generate_random;
    use approx::assert_abs_diff_eq;

    fn two_swap() -> Topology {
        Topology::uniform_from_support(&[vec![1], vec![0]]).unwrap()
    }

    fn directed_cycle(n: usize) -> Topology {
        let support: Vec<Vec<usize>> = (0..n).map(|j| vec![(j + 1) % n]).collect();
        Topology::uniform_from_support(&support).unwrap()
    }

    fn state(x: &[f64]) -> OpinionState {
        OpinionState::initial(x.to_vec()).unwrap()
    }

    #[test]
    fn step_all_rebels_lambda_zero_flips_ones() {
        let t = two_swap();
        let c = Confidence::uniform(0.0, 2).unwrap();
        let next = step(&state(&[1.0, 1.0]), &t, &AgentTypes::all_rebels(2), &c).unwrap();
        assert_eq!(next.x, vec![0.0, 0.0]);
        assert_eq!(next.t, 2);
    }

    #[test]
    fn step_consensus_is_fixed_for_conformists() {
        let t = generate_random(6, 3, 5, true).unwrap();
        let c = Confidence::uniform(0.3, 6).unwrap();
        let next = step(&state(&[0.7; 6]), &t, &AgentTypes::all_conformists(6), &c).unwrap();
        for v in next.x {
            assert_abs_diff_eq!(v, 0.7, epsilon = 1e-12);
        }
    }

    #[test]
    fn step_rebel_fixed_point_example() {
        // x = (1, 0) reproduces itself on the 2-swap with all rebels.
        let t = two_swap();
        let c = Confidence::uniform(0.5, 2).unwrap();
        let next = step(&state(&[1.0, 0.0]), &t, &AgentTypes::all_rebels(2), &c).unwrap();
        assert_eq!(next.x, vec![1.0, 0.0]);
    }

    #[test]
    fn run_converges_to_mean_on_directed_cycle() {
        let t = directed_cycle(3);
        let c = Confidence::uniform(0.5, 3).unwrap();
        let traj = run(
            vec![1.0, 0.0, 0.3],
            &t,
            &AgentTypes::all_rebels(3),
            &c,
            &RunParams::default(),
        )
        .unwrap();
        match &traj.verdict {
            TrajectoryVerdict::ConvergedTo { limit } => {
                for v in limit {
                    assert_abs_diff_eq!(*v, 0.5, epsilon = 1e-8);
                }
            }
            other => panic!("expected convergence, got {other:?}"),
        }
    }

    #[test]
    fn run_detects_period_two_oscillation() {
        let t = two_swap();
        let c = Confidence::uniform(0.0, 2).unwrap();
        let traj = run(
            vec![1.0, 1.0],
            &t,
            &AgentTypes::all_rebels(2),
            &c,
            &RunParams::default(),
        )
        .unwrap();
        match &traj.verdict {
            TrajectoryVerdict::PeriodTwoOscillation { pair } => {
                let mut phases = [pair.0.clone(), pair.1.clone()];
                phases.sort_by(|a, b| a.partial_cmp(b).unwrap());
                assert_eq!(phases[0], vec![0.0, 0.0]);
                assert_eq!(phases[1], vec![1.0, 1.0]);
            }
            other => panic!("expected oscillation, got {other:?}"),
        }
        // The proof formula: states alternate exactly between 1 and 0.
        for s in &traj.states {
            let expect = if s.t % 2 == 1 { 1.0 } else { 0.0 };
            assert_eq!(s.x, vec![expect; 2]);
        }
    }

    #[test]
    fn run_converges_for_mixed_two_swap() {
        let t = two_swap();
        let types = AgentTypes::from_rebel_indices(2, &[0]).unwrap();
        let c = Confidence::uniform(0.5, 2).unwrap();
        let traj = run(vec![0.9, 0.1], &t, &types, &c, &RunParams::default()).unwrap();
        match &traj.verdict {
            TrajectoryVerdict::ConvergedTo { limit } => {
                assert_abs_diff_eq!(limit[0], 0.5, epsilon = 1e-8);
                assert_abs_diff_eq!(limit[1], 0.5, epsilon = 1e-8);
            }
            other => panic!("expected convergence, got {other:?}"),
        }
    }

    #[test]
    fn run_rejects_out_of_range_initial() {
        let t = two_swap();
        let c = Confidence::uniform(0.5, 2).unwrap();
        let err = run(
            vec![1.2, 0.0],
            &t,
            &AgentTypes::all_rebels(2),
            &c,
            &RunParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, DynamicsError::InvalidInitial { index: 0, .. }));
    }

    #[test]
    fn frozen_dynamic_converges_to_initial_state() {
        let t = two_swap();
        let c = Confidence::uniform(1.0, 2).unwrap();
        assert!(c.is_frozen());
        let traj = run(
            vec![0.9, 0.2],
            &t,
            &AgentTypes::all_rebels(2),
            &c,
            &RunParams::default(),
        )
        .unwrap();
        assert_eq!(
            traj.verdict,
            TrajectoryVerdict::ConvergedTo { limit: vec![0.9, 0.2] }
        );
    }

    #[test]
    fn fixed_point_examples() {
        let types = AgentTypes::from_rebel_indices(2, &[0]).unwrap();
        let fp = fixed_point_direct(&two_swap(), &types, 0.5).unwrap();
        assert_abs_diff_eq!(fp[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fp[1], 0.5, epsilon = 1e-12);

        let fp = fixed_point_direct(&directed_cycle(3), &AgentTypes::all_rebels(3), 0.5).unwrap();
        for v in fp {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-12);
        }

        assert_eq!(
            fixed_point_direct(&two_swap(), &AgentTypes::all_conformists(2), 0.5).unwrap_err(),
            DynamicsError::Singular
        );
        assert_eq!(
            fixed_point_direct(&two_swap(), &AgentTypes::all_rebels(2), 1.0).unwrap_err(),
            DynamicsError::LambdaOne
        );
    }

    #[test]
    fn replay_check_accepts_runs_and_rejects_tampering() {
        let t = directed_cycle(3);
        let types = AgentTypes::all_rebels(3);
        let c = Confidence::uniform(0.4, 3).unwrap();
        let mut traj = run(
            vec![0.2, 0.9, 0.5],
            &t,
            &types,
            &c,
            &RunParams::default(),
        )
        .unwrap();
        assert!(replay_check(&traj, &t, &types, &c));

        let mid = traj.states.len() / 2;
        traj.states[mid].x[0] += 1e-3;
        assert!(!replay_check(&traj, &t, &types, &c));

        traj.states.truncate(1);
        assert!(replay_check(&traj, &t, &types, &c));
    }

    #[test]
    fn per_agent_lambda_equal_entries_matches_uniform_bitwise() {
        let t = generate_random(5, 2, 9, true).unwrap();
        let types = AgentTypes::from_rebel_indices(5, &[1, 3]).unwrap();
        let uniform = Confidence::uniform(0.35, 5).unwrap();
        let vector = Confidence::per_agent(vec![0.35; 5]).unwrap();
        assert!(vector.is_uniform());
        let x0 = vec![0.1, 0.9, 0.4, 0.6, 0.2];
        let a = run(x0.clone(), &t, &types, &uniform, &RunParams::default()).unwrap();
        let b = run(x0, &t, &types, &vector, &RunParams::default()).unwrap();
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn all_conformist_lambda_zero_is_plain_averaging() {
        let t = generate_random(6, 3, 17, true).unwrap();
        let types = AgentTypes::all_conformists(6);
        let c = Confidence::uniform(0.0, 6).unwrap();
        let mut s = state(&[0.9, 0.05, 0.3, 0.7, 0.5, 0.11]);
        for _ in 0..10 {
            let direct = t.weights().mat_vec(&s.x);
            s = step(&s, &t, &types, &c).unwrap();
            assert_eq!(s.x, direct);
        }
    }

    #[test]
    fn confidence_rejects_out_of_range() {
        assert!(Confidence::uniform(-0.1, 3).is_err());
        assert!(Confidence::per_agent(vec![0.5, 1.4]).is_err());
    }

    #[test]
    fn csv_export_has_header_and_thinning() {
        let t = two_swap();
        let c = Confidence::uniform(0.5, 2).unwrap();
        let traj = run(
            vec![0.9, 0.1],
            &t,
            &AgentTypes::from_rebel_indices(2, &[0]).unwrap(),
            &c,
            &RunParams::default(),
        )
        .unwrap();
        let mut all = Vec::new();
        write_trajectory_csv(&traj, &mut all, 1).unwrap();
        let text = String::from_utf8(all).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x_0,x_1");
        assert_eq!(text.lines().count(), traj.states.len() + 1);

        let mut thinned = Vec::new();
        write_trajectory_csv(&traj, &mut thinned, 10).unwrap();
        let thinned = String::from_utf8(thinned).unwrap();
        assert!(thinned.lines().count() < text.lines().count());
        // Last state always present.
        let last = text.lines().last().unwrap();
        assert_eq!(thinned.lines().last().unwrap(), last);
    }
}
