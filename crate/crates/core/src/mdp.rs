//! Finite MDPs, policies, episodic wrappers and the built-in environments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::check_discount;
use crate::error::{Error, Result};

/// Allowed deviation of a kernel or policy row from summing to 1.
pub const ROW_TOL: f64 = 1e-12;

/// A reachable successor of some `(state, action)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Successor {
    pub state: usize,
    pub prob: f64,
    pub reward: f64,
}

/// Finite MDP `(X, A, P, r, gamma)` with transition-dependent rewards
/// `r(x, a, x')`.
///
/// Serialized as `{"n_states", "n_actions", "discount", "kernel": [[[p]]],
/// "reward": [[[r]]]}` indexed `[x][a][x']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDoc", into = "MdpDoc")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    discount: f64,
    kernel: Vec<f64>,
    reward: Vec<f64>,
    successors: Vec<Vec<Successor>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpDoc {
    n_states: usize,
    n_actions: usize,
    discount: f64,
    kernel: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<MdpDoc> for TabularMdp {
    type Error = Error;

    fn try_from(doc: MdpDoc) -> Result<Self> {
        let flatten = |name: &str, t: Vec<Vec<Vec<f64>>>| -> Result<Vec<f64>> {
            if t.len() != doc.n_states
                || t.iter().any(|row| {
                    row.len() != doc.n_actions || row.iter().any(|r| r.len() != doc.n_states)
                })
            {
                return Err(Error::InvalidMdp(format!(
                    "`{name}` must have shape [{}][{}][{}]",
                    doc.n_states, doc.n_actions, doc.n_states
                )));
            }
            Ok(t.into_iter().flatten().flatten().collect())
        };
        let kernel = flatten("kernel", doc.kernel)?;
        let reward = flatten("reward", doc.reward)?;
        TabularMdp::new(doc.n_states, doc.n_actions, doc.discount, kernel, reward)
    }
}

impl From<TabularMdp> for MdpDoc {
    fn from(m: TabularMdp) -> Self {
        let nest = |flat: &[f64]| -> Vec<Vec<Vec<f64>>> {
            flat.chunks(m.n_actions * m.n_states)
                .map(|s| s.chunks(m.n_states).map(<[f64]>::to_vec).collect())
                .collect()
        };
        MdpDoc {
            n_states: m.n_states,
            n_actions: m.n_actions,
            discount: m.discount,
            kernel: nest(&m.kernel),
            reward: nest(&m.reward),
        }
    }
}

impl TabularMdp {
    /// `kernel` and `reward` are flat, row-major over `(x, a, x')`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        discount: f64,
        kernel: Vec<f64>,
        reward: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        check_discount(discount).map_err(|_| {
            Error::InvalidMdp(format!("discount must lie in [0, 1), got {discount}"))
        })?;
        let size = n_states * n_actions * n_states;
        if kernel.len() != size || reward.len() != size {
            return Err(Error::InvalidMdp(format!(
                "kernel/reward need {size} entries, got {}/{}",
                kernel.len(),
                reward.len()
            )));
        }
        if let Some(p) = kernel.iter().find(|p| !(p.is_finite() && (0.0..=1.0).contains(*p))) {
            return Err(Error::InvalidMdp(format!("kernel entry {p} outside [0, 1]")));
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp(format!("non-finite reward {r}")));
        }
        let mut successors = Vec::with_capacity(n_states * n_actions);
        for (row_idx, (row, rew)) in kernel
            .chunks(n_states)
            .zip(reward.chunks(n_states))
            .enumerate()
        {
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidMdp(format!(
                    "kernel row (x={}, a={}) sums to {total}",
                    row_idx / n_actions,
                    row_idx % n_actions
                )));
            }
            successors.push(
                row.iter()
                    .zip(rew)
                    .enumerate()
                    .filter(|(_, (&p, _))| p > 0.0)
                    .map(|(state, (&prob, &reward))| Successor {
                        state,
                        prob,
                        reward,
                    })
                    .collect(),
            );
        }
        Ok(Self {
            n_states,
            n_actions,
            discount,
            kernel,
            reward,
            successors,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    fn idx(&self, x: usize, a: usize, y: usize) -> usize {
        (x * self.n_actions + a) * self.n_states + y
    }

    pub fn prob(&self, x: usize, a: usize, y: usize) -> f64 {
        self.kernel[self.idx(x, a, y)]
    }

    pub fn reward(&self, x: usize, a: usize, y: usize) -> f64 {
        self.reward[self.idx(x, a, y)]
    }

    /// Successors with positive probability, in increasing state order.
    pub fn successors(&self, x: usize, a: usize) -> &[Successor] {
        &self.successors[x * self.n_actions + a]
    }

    pub fn check_pair(&self, x: usize, a: usize) -> Result<()> {
        if x >= self.n_states {
            return Err(Error::IndexOutOfRange {
                what: "state",
                index: x,
                size: self.n_states,
            });
        }
        if a >= self.n_actions {
            return Err(Error::IndexOutOfRange {
                what: "action",
                index: a,
                size: self.n_actions,
            });
        }
        Ok(())
    }

    /// Draws `x' ~ P(.|x, a)` and returns the full transition.
    pub fn sample_step<R: Rng + ?Sized>(&self, x: usize, a: usize, rng: &mut R) -> Result<Transition> {
        self.check_pair(x, a)?;
        Ok(self.sample_unchecked(x, a, rng))
    }

    pub(crate) fn sample_unchecked<R: Rng + ?Sized>(&self, x: usize, a: usize, rng: &mut R) -> Transition {
        let succ = self.successors(x, a);
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut chosen = succ[succ.len() - 1];
        for s in succ {
            cum += s.prob;
            if u < cum {
                chosen = *s;
                break;
            }
        }
        Transition {
            state: x,
            action: a,
            reward: chosen.reward,
            next_state: chosen.state,
        }
    }

    /// Copy with `P(x|x,.) = 1` and zero reward at every state in `states`.
    pub fn make_absorbing(&self, states: &[usize]) -> Result<Self> {
        let mut kernel = self.kernel.clone();
        let mut reward = self.reward.clone();
        for &x in states {
            self.check_pair(x, 0)?;
            for a in 0..self.n_actions {
                for y in 0..self.n_states {
                    let i = self.idx(x, a, y);
                    kernel[i] = if y == x { 1.0 } else { 0.0 };
                    reward[i] = 0.0;
                }
            }
        }
        Self::new(self.n_states, self.n_actions, self.discount, kernel, reward)
    }
}

/// Stochastic policy `pi(a|x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    /// `probs` is row-major over `(x, a)`.
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions || n_actions == 0 {
            return Err(Error::InvalidPolicy(format!(
                "{} probabilities for {n_states} states x {n_actions} actions",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidPolicy(format!("probability {p} is negative or non-finite")));
        }
        for (x, row) in probs.chunks(n_actions).enumerate() {
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidPolicy(format!("row for state {x} sums to {total}")));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (x, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::IndexOutOfRange {
                    what: "action",
                    index: a,
                    size: n_actions,
                });
            }
            probs[x * n_actions + a] = 1.0;
        }
        Self::new(actions.len(), n_actions, probs)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.probs[x * self.n_actions + a]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.n_actions..(x + 1) * self.n_actions]
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let row = self.row(x);
        for (a, &p) in row.iter().enumerate() {
            cum += p;
            if u < cum {
                return a;
            }
        }
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    pub fn check_shape(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states() || self.n_actions != mdp.n_actions() {
            return Err(Error::ShapeMismatch(format!(
                "policy over {}x{} for an mdp over {}x{}",
                self.n_states,
                self.n_actions,
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }
}

/// One sampled interaction `(x_t, a_t, r_t, x_{t+1})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Fixed(usize),
    Distribution(Vec<f64>),
}

/// Episodic environment over an MDP whose terminal states have been made
/// absorbing with zero reward, so operators see an ordinary MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodicEnv {
    mdp: TabularMdp,
    terminal: Vec<bool>,
    initial: InitialState,
}

impl EpisodicEnv {
    pub fn new(mdp: &TabularMdp, terminal_states: &[usize], initial: InitialState) -> Result<Self> {
        let wrapped = mdp.make_absorbing(terminal_states)?;
        let mut terminal = vec![false; mdp.n_states()];
        for &x in terminal_states {
            terminal[x] = true;
        }
        match &initial {
            InitialState::Fixed(x) => mdp.check_pair(*x, 0)?,
            InitialState::Distribution(p) => {
                if p.len() != mdp.n_states() {
                    return Err(Error::ShapeMismatch(format!(
                        "initial distribution over {} states, mdp has {}",
                        p.len(),
                        mdp.n_states()
                    )));
                }
                crate::distributions::AtomicDistribution::new(vec![0.0; p.len()], p.clone())
                    .map_err(|e| Error::InvalidMdp(format!("initial distribution: {e}")))?;
            }
        }
        Ok(Self {
            mdp: wrapped,
            terminal,
            initial,
        })
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn is_terminal(&self, x: usize) -> bool {
        self.terminal[x]
    }

    pub fn terminal_mask(&self) -> &[bool] {
        &self.terminal
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.initial {
            InitialState::Fixed(x) => *x,
            InitialState::Distribution(p) => {
                let u: f64 = rng.random();
                let mut cum = 0.0;
                for (x, &w) in p.iter().enumerate() {
                    cum += w;
                    if u < cum {
                        return x;
                    }
                }
                p.iter().rposition(|&w| w > 0.0).unwrap_or(0)
            }
        }
    }

    pub fn sample_step<R: Rng + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> Result<Transition> {
        self.mdp.sample_step(state, action, rng)
    }
}

/// Two-state, two-action MDP with `gamma = 1/2` on which every policy is
/// optimal.
///
/// `x2` (index 1) is absorbing with zero reward. From `x1`: `a1` moves to
/// `x2` with reward 2; `a2` moves to `x2` with reward 0 or stays in `x1`
/// with reward 3, each with probability 1/2. Both actions at `x1` have
/// value 2.
pub fn make_toy_mdp() -> TabularMdp {
    toy_mdp_with_rewards(0.0, 3.0).expect("toy mdp is valid")
}

/// Toy MDP with the `(x1, a2)` rewards replaced: `exit_reward` on the move
/// to `x2`, `stay_reward` on the self-loop. Every policy stays optimal iff
/// `exit_reward + stay_reward = 3`.
pub fn toy_mdp_with_rewards(exit_reward: f64, stay_reward: f64) -> Result<TabularMdp> {
    // [x][a][x']
    let kernel = vec![
        0.0, 1.0, // x1, a1
        0.5, 0.5, // x1, a2
        0.0, 1.0, // x2, a1
        0.0, 1.0, // x2, a2
    ];
    let reward = vec![
        0.0, 2.0, //
        stay_reward, exit_reward, //
        0.0, 0.0, //
        0.0, 0.0,
    ];
    TabularMdp::new(2, 2, 0.5, kernel, reward)
}

/// The toy MDP as an episodic task starting in `x1` with `x2` terminal, so
/// sampled experience keeps revisiting `x1`.
pub fn make_toy_env() -> EpisodicEnv {
    EpisodicEnv::new(&make_toy_mdp(), &[1], InitialState::Fixed(0)).expect("toy env is valid")
}

pub const FROZEN_LAKE_MAP: [&str; 4] = ["SFFF", "FHFH", "FFFH", "HFFG"];
pub const FROZEN_LAKE_DISCOUNT: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum LakeAction {
    Left = 0,
    Down = 1,
    Right = 2,
    Up = 3,
}

/// 4x4 Frozen Lake. States are `row * 4 + col`; holes and the goal are
/// terminal; entering the goal pays `goal_reward`. When `slippery`, the
/// intended move and each perpendicular move happen with probability 1/3.
pub fn make_frozen_lake(slippery: bool, goal_reward: f64) -> Result<EpisodicEnv> {
    if !(goal_reward.is_finite() && goal_reward > 0.0) {
        return Err(crate::error::invalid_param(
            "goal_reward",
            format!("must be positive, got {goal_reward}"),
        ));
    }
    const N: usize = 4;
    let cells: Vec<u8> = FROZEN_LAKE_MAP.iter().flat_map(|r| r.bytes()).collect();
    let ns = N * N;
    let na = 4;
    let mut kernel = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na * ns];
    let step = |s: usize, a: usize| -> usize {
        let (r, c) = (s / N, s % N);
        let (r, c) = match a {
            0 => (r, c.saturating_sub(1)),
            1 => ((r + 1).min(N - 1), c),
            2 => (r, (c + 1).min(N - 1)),
            _ => (r.saturating_sub(1), c),
        };
        r * N + c
    };
    let terminal: Vec<usize> = (0..ns).filter(|&s| matches!(cells[s], b'H' | b'G')).collect();
    for s in 0..ns {
        for a in 0..na {
            let moves: Vec<(usize, f64)> = if slippery {
                vec![((a + 3) % 4, 1.0 / 3.0), (a, 1.0 / 3.0), ((a + 1) % 4, 1.0 / 3.0)]
            } else {
                vec![(a, 1.0)]
            };
            for (dir, p) in moves {
                let y = step(s, dir);
                let i = (s * na + a) * ns + y;
                kernel[i] += p;
                if cells[y] == b'G' {
                    reward[i] = goal_reward;
                }
            }
        }
    }
    let mdp = TabularMdp::new(ns, na, FROZEN_LAKE_DISCOUNT, kernel, reward)?;
    EpisodicEnv::new(&mdp, &terminal, InitialState::Fixed(0))
}
