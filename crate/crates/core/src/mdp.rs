//! Tabular MDPs, soft (Boltzmann) value iteration, rollouts and the
//! maximum-entropy demonstration NLL.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::log_softmax_into;

const PROB_TOL: f64 = 1e-12;
/// Soft value iteration tries Newton once it has run `NEWTON_AFTER`
/// iterations and the increment span is below `NEWTON_START`, then again
/// every `NEWTON_EVERY` iterations. Runs that converge earlier never use it,
/// so their results stay equivariant to reward translation.
const NEWTON_AFTER: usize = 300;
const NEWTON_START: f64 = 1e-3;
const NEWTON_EVERY: usize = 100;
const NEWTON_STEPS: usize = 30;
const NEWTON_MIN_STEP: f64 = 1e-3;
/// Dense Jacobians over more states than this are too costly to factor.
const NEWTON_MAX_STATES: usize = 3000;

/// A finite MDP without a reward: states, actions, transition kernel,
/// discount and start distribution.
///
/// Transitions are stored sparsely per `(s, a)` pair; entries with zero
/// probability are dropped at construction.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transitions: Vec<Vec<(usize, f64)>>,
    discount: f64,
    start: Vec<(usize, f64)>,
}

impl TabularMdp {
    /// Builds an MDP from per-`(s, a)` successor lists indexed `s * n_actions + a`.
    pub fn from_sparse(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<Vec<(usize, f64)>>,
        discount: f64,
        start: Vec<(usize, f64)>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        if transitions.len() != n_states * n_actions {
            return Err(Error::InvalidMdp(format!(
                "expected {} transition rows, got {}",
                n_states * n_actions,
                transitions.len()
            )));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::InvalidMdp(format!("discount {discount} not in (0, 1)")));
        }
        let mut cleaned = Vec::with_capacity(transitions.len());
        for (idx, row) in transitions.into_iter().enumerate() {
            let mut total = 0.0;
            let mut kept: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (next, p) in row {
                if next >= n_states {
                    return Err(Error::InvalidMdp(format!("successor {next} out of range")));
                }
                if !(p >= 0.0) || !p.is_finite() {
                    return Err(Error::InvalidMdp(format!("invalid probability {p}")));
                }
                total += p;
                if p > 0.0 {
                    match kept.iter_mut().find(|(s, _)| *s == next) {
                        Some(entry) => entry.1 += p,
                        None => kept.push((next, p)),
                    }
                }
            }
            if (total - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidMdp(format!(
                    "row (s={}, a={}) sums to {total}",
                    idx / n_actions,
                    idx % n_actions
                )));
            }
            kept.sort_by_key(|&(s, _)| s);
            cleaned.push(kept);
        }
        if start.is_empty() {
            return Err(Error::InvalidMdp("empty start distribution".into()));
        }
        let mut start_total = 0.0;
        for &(s, w) in &start {
            if s >= n_states || !(w >= 0.0) {
                return Err(Error::InvalidMdp(format!("bad start entry ({s}, {w})")));
            }
            start_total += w;
        }
        if (start_total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidMdp(format!("start weights sum to {start_total}")));
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions: cleaned,
            discount,
            start,
        })
    }

    /// Builds an MDP from a dense tensor flattened as `[s][a][s']`.
    pub fn from_dense(
        n_states: usize,
        n_actions: usize,
        dense: &[f64],
        discount: f64,
        start: Vec<(usize, f64)>,
    ) -> Result<Self> {
        if dense.len() != n_states * n_actions * n_states {
            return Err(Error::InvalidMdp(format!(
                "dense tensor has {} entries, expected {}",
                dense.len(),
                n_states * n_actions * n_states
            )));
        }
        let rows = dense
            .chunks(n_states)
            .map(|row| row.iter().copied().enumerate().collect())
            .collect();
        Self::from_sparse(n_states, n_actions, rows, discount, start)
    }

    /// Deterministic dynamics `s' = next(s, a)`.
    pub fn deterministic(
        n_states: usize,
        n_actions: usize,
        next: impl Fn(usize, usize) -> usize,
        discount: f64,
        start: Vec<(usize, f64)>,
    ) -> Result<Self> {
        let mut rows = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                rows.push(vec![(next(s, a), 1.0)]);
            }
        }
        Self::from_sparse(n_states, n_actions, rows, discount, start)
    }

    /// Uniform start distribution over `states`.
    pub fn uniform_start(states: impl IntoIterator<Item = usize>) -> Vec<(usize, f64)> {
        let states: Vec<usize> = states.into_iter().collect();
        let w = 1.0 / states.len() as f64;
        states.into_iter().map(|s| (s, w)).collect()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn start_distribution(&self) -> &[(usize, f64)] {
        &self.start
    }

    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.n_actions + a]
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.successors(s, a)
            .iter()
            .find(|&&(n, _)| n == next)
            .map_or(0.0, |&(_, p)| p)
    }

    /// Same dynamics with a different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::InvalidMdp(format!("discount {discount} not in (0, 1)")));
        }
        Ok(Self {
            discount,
            ..self.clone()
        })
    }

    /// Same dynamics with a different start distribution.
    pub fn with_start(&self, start: Vec<(usize, f64)>) -> Result<Self> {
        Self::from_sparse(
            self.n_states,
            self.n_actions,
            self.transitions.clone(),
            self.discount,
            start,
        )
    }

    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_weighted(&self.start, rng)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_weighted(self.successors(s, a), rng)
    }
}

fn sample_weighted<R: Rng + ?Sized>(entries: &[(usize, f64)], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(s, w) in entries {
        acc += w;
        if u < acc {
            return s;
        }
    }
    // roundoff can leave acc a hair under 1
    entries
        .iter()
        .rev()
        .find(|&&(_, w)| w > 0.0)
        .map(|&(s, _)| s)
        .expect("distribution has positive mass")
}

/// Reward tensor `R(s, a, s')`, flattened `[s][a][s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl RewardTable {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions * n_states {
            return Err(Error::DimensionMismatch {
                expected: n_states * n_actions * n_states,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteReward);
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn from_fn(
        n_states: usize,
        n_actions: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(n_states * n_actions * n_states);
        for s in 0..n_states {
            for a in 0..n_actions {
                for next in 0..n_states {
                    values.push(f(s, a, next));
                }
            }
        }
        Self::new(n_states, n_actions, values)
    }

    /// `R(s, a, s') = r(s')`: reward for arriving in a state.
    pub fn from_arrival_rewards(n_actions: usize, state_rewards: &[f64]) -> Result<Self> {
        let n = state_rewards.len();
        Self::from_fn(n, n_actions, |_, _, next| state_rewards[next])
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize, next: usize) -> f64 {
        self.values[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Same table with `c` added to every entry.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.values.iter().map(|v| v + c).collect(),
        )
    }

    fn check_shape(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states() || self.n_actions != mdp.n_actions() {
            return Err(Error::InvalidMdp(format!(
                "reward table is {}x{}, MDP is {}x{}",
                self.n_states,
                self.n_actions,
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }
}

/// A fixed-length sequence of `(state, action)` steps plus the state reached
/// after the last action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    steps: Vec<(usize, usize)>,
    terminal: usize,
}

impl Trajectory {
    pub fn new(steps: Vec<(usize, usize)>, terminal: usize) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidTrajectory("a trajectory needs at least one step".into()));
        }
        Ok(Self { steps, terminal })
    }

    pub fn steps(&self) -> &[(usize, usize)] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn start(&self) -> usize {
        self.steps[0].0
    }

    pub fn terminal(&self) -> usize {
        self.terminal
    }

    /// `s_t` for `t ∈ [0, L]`; `s_L` is the terminal state.
    pub fn state_at(&self, t: usize) -> usize {
        if t == self.steps.len() {
            self.terminal
        } else {
            self.steps[t].0
        }
    }

    /// Iterates `(s_t, a_t, s_{t+1})` for `t ∈ [0, L)`.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.steps.len()).map(move |t| {
            let (s, a) = self.steps[t];
            (s, a, self.state_at(t + 1))
        })
    }

    /// Checks indices and that every transition has positive probability.
    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        for (t, (s, a, next)) in self.transitions().enumerate() {
            if s >= mdp.n_states() || a >= mdp.n_actions() || next >= mdp.n_states() {
                return Err(Error::InvalidTrajectory(format!("step {t} out of range")));
            }
            if mdp.prob(s, a, next) <= 0.0 {
                return Err(Error::InvalidTrajectory(format!(
                    "step {t}: P({next} | {s}, {a}) = 0"
                )));
            }
        }
        Ok(())
    }
}

/// JSON-lines record: `{"start": s0, "steps": [[s, a], ...], "terminal": sL}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub start: usize,
    pub steps: Vec<[usize; 2]>,
    pub terminal: usize,
}

impl From<&Trajectory> for TrajectoryRecord {
    fn from(t: &Trajectory) -> Self {
        Self {
            start: t.start(),
            steps: t.steps.iter().map(|&(s, a)| [s, a]).collect(),
            terminal: t.terminal,
        }
    }
}

impl TryFrom<TrajectoryRecord> for Trajectory {
    type Error = Error;

    fn try_from(r: TrajectoryRecord) -> Result<Self> {
        let traj = Trajectory::new(r.steps.iter().map(|p| (p[0], p[1])).collect(), r.terminal)?;
        if traj.start() != r.start {
            return Err(Error::InvalidTrajectory(format!(
                "declared start {} but first step is in state {}",
                r.start,
                traj.start()
            )));
        }
        Ok(traj)
    }
}

/// Boltzmann policy over a converged soft Q-table.
#[derive(Debug, Clone)]
pub struct SoftPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    q_values: Vec<f64>,
    temperature: f64,
    residual: f64,
    iterations: usize,
}

impl SoftPolicy {
    /// Wraps a Q-table, deriving probabilities by per-row softmax.
    pub fn from_q(n_states: usize, n_actions: usize, q_values: Vec<f64>, temperature: f64) -> Self {
        assert_eq!(q_values.len(), n_states * n_actions);
        let mut log_probs = vec![0.0; q_values.len()];
        for (q_row, lp_row) in q_values
            .chunks(n_actions)
            .zip(log_probs.chunks_mut(n_actions))
        {
            log_softmax_into(q_row, temperature, lp_row);
        }
        let probs = log_probs.iter().map(|lp| lp.exp()).collect();
        Self {
            n_states,
            n_actions,
            probs,
            log_probs,
            q_values,
            temperature,
            residual: 0.0,
            iterations: 0,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn log_prob(&self, s: usize, a: usize) -> f64 {
        self.log_probs[s * self.n_actions + a]
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q_values[s * self.n_actions + a]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn q_values(&self) -> &[f64] {
        &self.q_values
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Sup-norm Bellman residual of the returned Q-table.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        let row = &self.probs[s * self.n_actions..(s + 1) * self.n_actions];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        self.n_actions - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftViConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub temperature: f64,
}

impl Default for SoftViConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
            temperature: 1.0,
        }
    }
}

/// One Boltzmann backup: `out(s,a) = Σ_{s'} P(s'|s,a) [R(s,a,s') + γ V(s')]`
/// with `V(s') = Σ_{a'} π(s',a') Q(s',a')` and `π` the row softmax of `Q`.
fn boltzmann_backup(
    mdp: &TabularMdp,
    reward: &RewardTable,
    temperature: f64,
    q: &[f64],
    scratch: &mut [f64],
    values: &mut [f64],
    out: &mut [f64],
) {
    let na = mdp.n_actions();
    let ns = mdp.n_states();
    for s in 0..ns {
        let row = &q[s * na..(s + 1) * na];
        log_softmax_into(row, temperature, scratch);
        values[s] = row
            .iter()
            .zip(scratch.iter())
            .map(|(qv, lp)| lp.exp() * qv)
            .sum();
    }
    let gamma = mdp.discount();
    for s in 0..ns {
        for a in 0..na {
            let mut acc = 0.0;
            for &(next, p) in mdp.successors(s, a) {
                acc += p * (reward.get(s, a, next) + gamma * values[next]);
            }
            out[s * na + a] = acc;
        }
    }
}

/// Sup-norm of `T(q) - q`.
pub fn bellman_residual(mdp: &TabularMdp, reward: &RewardTable, temperature: f64, q: &[f64]) -> f64 {
    let mut scratch = vec![0.0; mdp.n_actions()];
    let mut values = vec![0.0; mdp.n_states()];
    let mut out = vec![0.0; q.len()];
    boltzmann_backup(mdp, reward, temperature, q, &mut scratch, &mut values, &mut out);
    out.iter()
        .zip(q)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Newton's method on the state values, started from the values of `q`.
///
/// With `Q(V)(s,a) = Σ_{s'} P(s'|s,a) [R(s,a,s') + γ V(s')]` and `B` the
/// Boltzmann average over actions, it solves `B(Q(V)) = V`, a system in
/// `n_states` unknowns instead of `n_states · n_actions`. The derivative of
/// `B(Q)(s)` with respect to `Q(s,b)` is `π(s,b) (1 + (Q(s,b) − B(Q)(s)) / temperature)`.
/// Returns `Q(V)` once its backup residual is at most `tol`.
fn newton_polish(
    mdp: &TabularMdp,
    reward: &RewardTable,
    temperature: f64,
    q: &[f64],
    tol: f64,
) -> Option<(Vec<f64>, f64)> {
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    if ns > NEWTON_MAX_STATES {
        return None;
    }
    let gamma = mdp.discount();
    let mut scratch = vec![0.0; na];
    let mut values = vec![0.0; ns];
    let mut q = q.to_vec();
    let mut backed = vec![0.0; q.len()];
    // values of `q`, and `q` replaced by its backup `Q(values)`
    boltzmann_backup(mdp, reward, temperature, &q, &mut scratch, &mut values, &mut backed);
    std::mem::swap(&mut q, &mut backed);
    let mut v = DVector::from_column_slice(&values);
    let mut grad = vec![0.0; na];
    let mut residual = bellman_residual(mdp, reward, temperature, &q);
    for _ in 0..NEWTON_STEPS {
        if !residual.is_finite() {
            return None;
        }
        if residual <= tol {
            return Some((q, residual));
        }
        let mut jac = DMatrix::<f64>::identity(ns, ns);
        let mut f = DVector::<f64>::zeros(ns);
        for s in 0..ns {
            let row = &q[s * na..(s + 1) * na];
            log_softmax_into(row, temperature, &mut scratch);
            let avg: f64 = row.iter().zip(&scratch).map(|(qv, lp)| lp.exp() * qv).sum();
            f[s] = avg - v[s];
            for b in 0..na {
                grad[b] = scratch[b].exp() * (1.0 + (row[b] - avg) / temperature);
                for &(next, p) in mdp.successors(s, b) {
                    jac[(s, next)] -= gamma * p * grad[b];
                }
            }
        }
        let step = jac.lu().solve(&f)?;
        // backtrack until the residual decreases
        let mut scale = 1.0;
        loop {
            let trial = &v + &step * scale;
            let trial_q = q_from_values(mdp, reward, trial.as_slice());
            let r = bellman_residual(mdp, reward, temperature, &trial_q);
            if r < residual {
                v = trial;
                q = trial_q;
                residual = r;
                break;
            }
            scale *= 0.5;
            if scale < NEWTON_MIN_STEP {
                return None;
            }
        }
    }
    None
}

fn q_from_values(mdp: &TabularMdp, reward: &RewardTable, values: &[f64]) -> Vec<f64> {
    let na = mdp.n_actions();
    let gamma = mdp.discount();
    let mut q = vec![0.0; mdp.n_states() * na];
    for (i, out) in q.iter_mut().enumerate() {
        let (s, a) = (i / na, i % na);
        *out = mdp
            .successors(s, a)
            .iter()
            .map(|&(next, p)| p * (reward.get(s, a, next) + gamma * values[next]))
            .sum();
    }
    q
}

/// Solves the Boltzmann fixed point by iterating the soft backup from `Q = 0`.
///
/// Convergence is tracked on the span of the increment (max − min). Once the
/// span is below `tol`, the remaining increments are (to first order) a
/// uniform constant decaying geometrically, so their sum is added in closed
/// form and the sup-norm residual is re-checked. The iteration runs on the
/// mean-centered reward, so a translated reward takes the same path and
/// gives the same policy up to roundoff. Damping (factor 0.5) switches on after
/// the span grows on three consecutive iterations. Long runs (γ close to 1)
/// also try a Newton solve on the state values from the current iterate,
/// since plain iteration can stall just above `tol` there.
pub fn soft_value_iteration(
    mdp: &TabularMdp,
    reward: &RewardTable,
    config: &SoftViConfig,
) -> Result<SoftPolicy> {
    reward.check_shape(mdp)?;
    if !(config.tol > 0.0) || !(config.temperature > 0.0) {
        return Err(Error::Config("tol and temperature must be positive".into()));
    }
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let gamma = mdp.discount();
    // Solve for the mean-centered reward: translated rewards then run the
    // same iteration up to roundoff, and the offset returns in closed form.
    let offset = reward.values().iter().sum::<f64>() / reward.values().len() as f64;
    let centered = reward.shifted(-offset)?;
    let reward = &centered;
    let finish = |q: Vec<f64>, residual: f64, iterations: usize| {
        let mut policy = SoftPolicy::from_q(ns, na, q, config.temperature);
        let lift = offset / (1.0 - gamma);
        for v in &mut policy.q_values {
            *v += lift;
        }
        policy.residual = residual;
        policy.iterations = iterations;
        policy
    };
    let mut q = vec![0.0; ns * na];
    let mut next = vec![0.0; ns * na];
    let mut scratch = vec![0.0; na];
    let mut values = vec![0.0; ns];

    let mut damped = false;
    let mut rising = 0usize;
    let mut prev_span = f64::INFINITY;
    let mut last_residual = f64::INFINITY;
    let mut next_newton = NEWTON_AFTER;

    for iteration in 1..=config.max_iter {
        boltzmann_backup(mdp, reward, config.temperature, &q, &mut scratch, &mut values, &mut next);
        if damped {
            for (n, &old) in next.iter_mut().zip(&q) {
                *n = 0.5 * old + 0.5 * *n;
            }
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (n, &old) in next.iter().zip(&q) {
            let d = n - old;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::NumericBlowup { iteration });
        }
        let span = hi - lo;
        last_residual = hi.abs().max(lo.abs());
        if span > prev_span {
            rising += 1;
            if rising >= 3 {
                damped = true;
            }
        } else {
            rising = 0;
        }
        prev_span = span;
        std::mem::swap(&mut q, &mut next);

        if span <= config.tol {
            // constant increments shrink by `rate` per step
            let rate = if damped { 0.5 + 0.5 * gamma } else { gamma };
            let drift = 0.5 * (lo + hi) * rate / (1.0 - rate);
            let candidate: Vec<f64> = q.iter().map(|v| v + drift).collect();
            let residual = bellman_residual(mdp, reward, config.temperature, &candidate);
            last_residual = residual;
            if residual <= config.tol {
                return Ok(finish(candidate, residual, iteration));
            }
            q = candidate;
        }
        if span <= NEWTON_START && iteration >= next_newton {
            next_newton = iteration + NEWTON_EVERY;
            if let Some((solved, residual)) = newton_polish(mdp, reward, config.temperature, &q, config.tol) {
                return Ok(finish(solved, residual, iteration));
            }
        }
    }
    Err(Error::NotConverged {
        iterations: config.max_iter,
        residual: last_residual,
    })
}

/// Negative log-likelihood of demonstrations:
/// `−Σ_τ Σ_{t=0}^{L−2} [log π(s_t,a_t) + log P(s_{t+1}|s_t,a_t)]`.
///
/// The final step's terms are not part of the sum. With
/// `include_transition_terms = false` the θ-independent dynamics term is
/// dropped.
pub fn nll(
    demos: &[Trajectory],
    policy: &SoftPolicy,
    mdp: &TabularMdp,
    include_transition_terms: bool,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, traj) in demos.iter().enumerate() {
        let steps = traj.steps();
        for t in 0..steps.len().saturating_sub(1) {
            let (s, a) = steps[t];
            let next = steps[t + 1].0;
            if s >= policy.n_states() || a >= policy.n_actions() {
                return Err(Error::ImpossibleDemonstration {
                    trajectory: i,
                    step: t,
                    reason: "state or action out of range".into(),
                });
            }
            let lp = policy.log_prob(s, a);
            if lp == f64::NEG_INFINITY {
                return Err(Error::ImpossibleDemonstration {
                    trajectory: i,
                    step: t,
                    reason: "policy assigns zero probability".into(),
                });
            }
            total -= lp;
            if include_transition_terms {
                let p = mdp.prob(s, a, next);
                if p <= 0.0 {
                    return Err(Error::ImpossibleDemonstration {
                        trajectory: i,
                        step: t,
                        reason: format!("P({next} | {s}, {a}) = 0"),
                    });
                }
                total -= p.ln();
            }
        }
    }
    Ok(total)
}

/// Policy used to roll out trajectories.
#[derive(Debug, Clone, Copy)]
pub enum RolloutPolicy<'a> {
    Soft(&'a SoftPolicy),
    Uniform,
}

impl RolloutPolicy<'_> {
    fn action<R: Rng + ?Sized>(&self, s: usize, n_actions: usize, rng: &mut R) -> usize {
        match self {
            RolloutPolicy::Soft(p) => p.sample_action(s, rng),
            RolloutPolicy::Uniform => rng.random_range(0..n_actions),
        }
    }
}

/// Rolls out `length` steps from `start` using the caller's generator.
pub fn rollout<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: RolloutPolicy<'_>,
    start: usize,
    length: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if length == 0 {
        return Err(Error::InvalidTrajectory("length must be at least 1".into()));
    }
    if start >= mdp.n_states() {
        return Err(Error::InvalidTrajectory(format!("start state {start} out of range")));
    }
    let mut steps = Vec::with_capacity(length);
    let mut s = start;
    for _ in 0..length {
        let a = policy.action(s, mdp.n_actions(), rng);
        steps.push((s, a));
        s = mdp.sample_next(s, a, rng);
    }
    Trajectory::new(steps, s)
}

/// Seeded rollout; the same seed reproduces the same trajectory.
pub fn sample_trajectory(
    mdp: &TabularMdp,
    policy: RolloutPolicy<'_>,
    start: usize,
    length: usize,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rollout(mdp, policy, start, length, &mut rng)
}

/// Discounted return `Σ_{t=0}^{L−1} γ^t R(s_t, a_t, s_{t+1})`.
pub fn traj_reward(traj: &Trajectory, reward: &RewardTable, gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut weight = 1.0;
    for (s, a, next) in traj.transitions() {
        total += weight * reward.get(s, a, next);
        weight *= gamma;
    }
    total
}
