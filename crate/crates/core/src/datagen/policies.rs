//! Behavior policies used to collect offline data.

use crate::envs::g2048::{Direction, G2048Board, SIZE};
use crate::envs::{c4_solver::C4Solver, AnyEnv};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Maps the current environment state to an action.
pub trait BehaviorPolicy: Send + Sync {
    fn tag(&self) -> &str;
    fn act(&self, env: &AnyEnv, rng: &mut Rng) -> Result<usize>;
}

fn uniform_legal(env: &AnyEnv, rng: &mut Rng) -> Result<usize> {
    let legal = env.legal_actions();
    if legal.is_empty() {
        return Err(Error::Terminal);
    }
    Ok(legal[rng.below(legal.len())])
}

/// Uniform over legal actions.
#[derive(Clone, Debug, Default)]
pub struct RandomPolicy;

pub fn random_policy() -> RandomPolicy {
    RandomPolicy
}

impl BehaviorPolicy for RandomPolicy {
    fn tag(&self) -> &str {
        "random"
    }

    fn act(&self, env: &AnyEnv, rng: &mut Rng) -> Result<usize> {
        uniform_legal(env, rng)
    }
}

/// Plays a solver-optimal column (lowest index on ties) with probability
/// `1 - epsilon`, otherwise a uniform legal column.
#[derive(Clone, Debug)]
pub struct C4EpsilonOptimal {
    pub epsilon: f64,
}

pub fn c4_epsilon_optimal_policy(epsilon: f64) -> Result<C4EpsilonOptimal> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [0, 1]")));
    }
    Ok(C4EpsilonOptimal { epsilon })
}

pub fn c4_optimal_move(solver: &C4Solver, env: &AnyEnv) -> Result<usize> {
    match env {
        AnyEnv::Connect4(e) => Ok(solver.solve(&e.board)?.best_moves[0]),
        _ => Err(Error::Config("optimal play needs a connect4 environment".into())),
    }
}

impl BehaviorPolicy for C4EpsilonOptimal {
    fn tag(&self) -> &str {
        "eps_optimal"
    }

    fn act(&self, env: &AnyEnv, rng: &mut Rng) -> Result<usize> {
        let AnyEnv::Connect4(e) = env else {
            return Err(Error::Config("eps_optimal needs a connect4 environment".into()));
        };
        // Draw both numbers every step so the stream layout is fixed.
        let explore = rng.uniform() < self.epsilon;
        let random = uniform_legal(env, rng)?;
        if explore {
            Ok(random)
        } else {
            c4_optimal_move(&e.solver, env)
        }
    }
}

/// Always the rightmost column while it is open, else uniform.
#[derive(Clone, Debug, Default)]
pub struct C4RightmostExploiter;

pub fn c4_rightmost_exploiter_policy() -> C4RightmostExploiter {
    C4RightmostExploiter
}

impl BehaviorPolicy for C4RightmostExploiter {
    fn tag(&self) -> &str {
        "exploiter"
    }

    fn act(&self, env: &AnyEnv, rng: &mut Rng) -> Result<usize> {
        let mask = env.legal_mask();
        match mask.last() {
            Some(true) => Ok(mask.len() - 1),
            _ => uniform_legal(env, rng),
        }
    }
}

/// Weights of the board heuristic used by [`G2048Expert`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeuristicWeights {
    pub empty: f64,
    pub monotonicity: f64,
    pub corner: f64,
    pub merges: f64,
}

impl Default for HeuristicWeights {
    fn default() -> Self {
        Self { empty: 1.0, monotonicity: 1.0, corner: 2.0, merges: 0.5 }
    }
}

/// One-ply expectimax over tile spawns with a hand-written board score.
#[derive(Clone, Debug, Default)]
pub struct G2048Expert {
    pub weights: HeuristicWeights,
}

pub fn g2048_heuristic_expert() -> G2048Expert {
    G2048Expert::default()
}

/// Direction preference when scores tie.
pub const EXPERT_TIE_ORDER: [Direction; 4] = [Direction::Up, Direction::Left, Direction::Right, Direction::Down];

fn line_monotonicity(line: [u8; SIZE]) -> f64 {
    let (mut inc, mut dec) = (0.0, 0.0);
    for k in 0..SIZE - 1 {
        let (a, b) = (line[k] as f64, line[k + 1] as f64);
        if a > b {
            dec += a - b;
        } else {
            inc += b - a;
        }
    }
    -inc.min(dec)
}

fn adjacent_pairs(board: &G2048Board) -> f64 {
    let g = &board.grid;
    let mut n = 0.0;
    for r in 0..SIZE {
        for c in 0..SIZE {
            if g[r][c] == 0 {
                continue;
            }
            if c + 1 < SIZE && g[r][c] == g[r][c + 1] {
                n += 1.0;
            }
            if r + 1 < SIZE && g[r][c] == g[r + 1][c] {
                n += 1.0;
            }
        }
    }
    n
}

impl G2048Expert {
    pub fn score(&self, board: &G2048Board) -> f64 {
        let w = &self.weights;
        let g = &board.grid;
        let empty = board.empty_cells().len() as f64;
        let mut mono = 0.0;
        for (i, &row) in g.iter().enumerate() {
            mono += line_monotonicity(row);
            mono += line_monotonicity([g[0][i], g[1][i], g[2][i], g[3][i]]);
        }
        let max = board.max_exponent();
        let corner = if [g[0][0], g[0][SIZE - 1], g[SIZE - 1][0], g[SIZE - 1][SIZE - 1]].contains(&max) {
            max as f64
        } else {
            0.0
        };
        w.empty * empty + w.monotonicity * mono + w.corner * corner + w.merges * adjacent_pairs(board)
    }

    /// Expected score after sliding `dir` and a random spawn; `None` when the
    /// direction is illegal, `+inf` when it creates the target tile.
    pub fn evaluate(&self, board: &G2048Board, dir: Direction) -> Option<f64> {
        let (next, changed, _) = board.slide(dir);
        if !changed {
            return None;
        }
        if next.max_exponent() >= next.target_exponent {
            return Some(f64::INFINITY);
        }
        let empties = next.empty_cells();
        if empties.is_empty() {
            return Some(self.score(&next));
        }
        let mut total = 0.0;
        for &(r, c) in &empties {
            for (e, p) in [(1u8, 0.9), (2u8, 0.1)] {
                let mut b = next;
                b.grid[r][c] = e;
                total += p * self.score(&b);
            }
        }
        Some(total / empties.len() as f64)
    }

    pub fn choose(&self, board: &G2048Board) -> Option<Direction> {
        let mut best: Option<(f64, Direction)> = None;
        for dir in EXPERT_TIE_ORDER {
            if let Some(v) = self.evaluate(board, dir) {
                if best.is_none_or(|(bv, _)| v > bv) {
                    best = Some((v, dir));
                }
            }
        }
        best.map(|(_, d)| d)
    }
}

impl BehaviorPolicy for G2048Expert {
    fn tag(&self) -> &str {
        "expert"
    }

    fn act(&self, env: &AnyEnv, _rng: &mut Rng) -> Result<usize> {
        let AnyEnv::G2048(e) = env else {
            return Err(Error::Config("expert needs a 2048 environment".into()));
        };
        self.choose(&e.board).map(Direction::action).ok_or(Error::Terminal)
    }
}
