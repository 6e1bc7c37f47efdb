//! The three benchmark environments behind one interface.

pub mod c4_solver;
pub mod connect4;
pub mod g2048;
pub mod gambling;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::trajectory::{EnvId, EnvState};
use c4_solver::C4Solver;
use connect4::{C4Board, Geometry, Outcome};
use g2048::{Direction, G2048Board};

/// Environment knobs, keyed as `connect4.*` / `g2048.*` in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub c4_width: usize,
    pub c4_height: usize,
    pub c4_slip_prob: f64,
    /// Let the opponent make the first move (the agent plays second).
    pub c4_opponent_first: bool,
    /// log2 of the solver's transposition-table slot count.
    pub c4_table_bits: u32,
    pub g2048_target_exponent: u8,
    pub g2048_spawn: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            c4_width: connect4::DEFAULT_WIDTH,
            c4_height: connect4::DEFAULT_HEIGHT,
            c4_slip_prob: 0.2,
            c4_opponent_first: false,
            c4_table_bits: 23,
            g2048_target_exponent: g2048::DEFAULT_TARGET_EXPONENT,
            g2048_spawn: true,
        }
    }
}

/// Outcome of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
}

/// Connect Four against the solver-backed opponent that sometimes refuses
/// the rightmost column.
#[derive(Clone)]
pub struct C4Env {
    pub board: C4Board,
    pub opponent_slip_prob: f64,
    pub opponent_first: bool,
    pub solver: Arc<C4Solver>,
    done: bool,
}

impl C4Env {
    pub fn new(geom: Geometry, slip_prob: f64, opponent_first: bool, solver: Arc<C4Solver>) -> Self {
        Self { board: C4Board::empty(geom), opponent_slip_prob: slip_prob, opponent_first, solver, done: false }
    }

    /// Stone colour of the agent: 0 moves first.
    pub fn agent_player(&self) -> u8 {
        u8::from(self.opponent_first)
    }
}

/// Opponent reply: a solver-optimal column (lowest index on ties), except
/// that when the rightmost column is optimal a draw below `slip_prob`
/// swaps it for the best other column.
pub fn c4_opponent_move(solver: &C4Solver, board: &C4Board, slip_prob: f64, rng: &mut Rng) -> Result<usize> {
    let sol = solver.solve(board)?;
    let rightmost = board.width() - 1;
    let slip = rng.uniform() < slip_prob;
    if slip && sol.best_moves.contains(&rightmost) {
        let alternative = (0..rightmost)
            .filter_map(|c| sol.move_values[c].map(|v| (v, c)))
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        if let Some((_, col)) = alternative {
            return Ok(col);
        }
    }
    Ok(sol.best_moves[0])
}

#[derive(Clone)]
pub struct G2048Env {
    pub board: G2048Board,
    pub spawn: bool,
    done: bool,
}

/// Any of the benchmark environments. Single owner per rollout.
#[derive(Clone)]
pub enum AnyEnv {
    Gambling(gambling::GamblingEnv),
    Connect4(C4Env),
    G2048(G2048Env),
}

impl AnyEnv {
    pub fn id(&self) -> EnvId {
        match self {
            AnyEnv::Gambling(_) => EnvId::Gambling,
            AnyEnv::Connect4(_) => EnvId::Connect4,
            AnyEnv::G2048(_) => EnvId::G2048,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            AnyEnv::Gambling(_) => gambling::N_ACTIONS,
            AnyEnv::Connect4(e) => e.board.width(),
            AnyEnv::G2048(_) => g2048::N_ACTIONS,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            AnyEnv::Gambling(_) => gambling::OBS_DIM,
            AnyEnv::Connect4(e) => 2 * e.board.geometry().cells(),
            AnyEnv::G2048(e) => G2048Board::obs_dim(e.board.target_exponent),
        }
    }

    pub fn is_done(&self) -> bool {
        match self {
            AnyEnv::Gambling(e) => e.done,
            AnyEnv::Connect4(e) => e.done,
            AnyEnv::G2048(e) => e.done,
        }
    }

    pub fn observe(&self) -> EnvState {
        let observation = match self {
            AnyEnv::Gambling(_) => gambling::initial_observation(),
            AnyEnv::Connect4(e) => e.board.planes(e.agent_player()),
            AnyEnv::G2048(e) => e.board.one_hot(),
        };
        EnvState { observation, terminal: self.is_done() }
    }

    pub fn reset(&mut self, rng: &mut Rng) -> EnvState {
        match self {
            AnyEnv::Gambling(e) => e.done = false,
            AnyEnv::Connect4(e) => {
                e.board = C4Board::empty(*e.board.geometry());
                e.done = false;
                if e.opponent_first {
                    let col = c4_opponent_move(&e.solver, &e.board, e.opponent_slip_prob, rng)
                        .expect("the empty board has a legal move");
                    e.board = e.board.apply(col).expect("opening move is legal").0;
                }
            }
            AnyEnv::G2048(e) => {
                e.board = G2048Board::empty(e.board.target_exponent);
                if e.spawn {
                    e.board.spawn(rng);
                    e.board.spawn(rng);
                } else {
                    // Fixed opening so a spawn-free game is fully deterministic.
                    e.board.grid[0][0] = 1;
                    e.board.grid[0][1] = 1;
                }
                e.done = false;
            }
        }
        self.observe()
    }

    /// Legal-action mask; all false once the episode is over.
    pub fn legal_mask(&self) -> Vec<bool> {
        if self.is_done() {
            return vec![false; self.n_actions()];
        }
        match self {
            AnyEnv::Gambling(_) => vec![true; gambling::N_ACTIONS],
            AnyEnv::Connect4(e) => (0..e.board.width()).map(|c| e.board.can_play(c)).collect(),
            AnyEnv::G2048(e) => e.board.legal_mask().to_vec(),
        }
    }

    pub fn legal_actions(&self) -> Vec<usize> {
        self.legal_mask().iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }

    pub fn step(&mut self, action: usize, rng: &mut Rng) -> Result<Transition> {
        if self.is_done() {
            return Err(Error::Terminal);
        }
        match self {
            AnyEnv::Gambling(e) => {
                let (reward, done) = gambling::gambling_step(action, rng)?;
                e.done = done;
                Ok(Transition {
                    state: EnvState { observation: gambling::outcome_observation(reward), terminal: true },
                    reward,
                    done,
                })
            }
            AnyEnv::Connect4(e) => {
                let (after_agent, outcome) = e.board.apply(action)?;
                let (board, reward, done) = match outcome {
                    Outcome::Win => (after_agent, 1.0, true),
                    Outcome::Draw => (after_agent, 0.0, true),
                    Outcome::Ongoing => {
                        let reply = c4_opponent_move(&e.solver, &after_agent, e.opponent_slip_prob, rng)?;
                        let (after_opp, outcome) = after_agent.apply(reply)?;
                        match outcome {
                            Outcome::Win => (after_opp, -1.0, true),
                            Outcome::Draw => (after_opp, 0.0, true),
                            Outcome::Ongoing => (after_opp, 0.0, false),
                        }
                    }
                };
                e.board = board;
                e.done = done;
                Ok(Transition {
                    state: EnvState { observation: board.planes(e.agent_player()), terminal: done },
                    reward,
                    done,
                })
            }
            AnyEnv::G2048(e) => {
                let s = g2048::g2048_step(&e.board, Direction::from_action(action)?, e.spawn, rng)?;
                e.board = s.board;
                e.done = s.done;
                Ok(Transition {
                    state: EnvState { observation: s.board.one_hot(), terminal: s.done },
                    reward: s.reward,
                    done: s.done,
                })
            }
        }
    }
}

/// Builds environments sharing one solver (for Connect Four) across every
/// episode.
#[derive(Clone)]
pub struct EnvFactory {
    pub id: EnvId,
    pub config: EnvConfig,
    solver: Option<Arc<C4Solver>>,
}

impl EnvFactory {
    pub fn new(id: EnvId, config: EnvConfig) -> Result<Self> {
        let solver = match id {
            EnvId::Connect4 => {
                let geom = Geometry::new(config.c4_width, config.c4_height)?;
                Some(shared_solver(geom, config.c4_table_bits))
            }
            _ => None,
        };
        if !(0.0..=1.0).contains(&config.c4_slip_prob) {
            return Err(Error::Config(format!("connect4.slip_prob {} outside [0, 1]", config.c4_slip_prob)));
        }
        if config.g2048_target_exponent < 2 {
            return Err(Error::Config("g2048.target_exponent must be at least 2".into()));
        }
        Ok(Self { id, config, solver })
    }

    pub fn solver(&self) -> Option<&Arc<C4Solver>> {
        self.solver.as_ref()
    }

    pub fn make(&self) -> AnyEnv {
        match self.id {
            EnvId::Gambling => AnyEnv::Gambling(gambling::GamblingEnv::default()),
            EnvId::Connect4 => {
                let solver = self.solver.clone().expect("connect4 factory holds a solver");
                AnyEnv::Connect4(C4Env::new(
                    *solver.geometry(),
                    self.config.c4_slip_prob,
                    self.config.c4_opponent_first,
                    solver,
                ))
            }
            EnvId::G2048 => AnyEnv::G2048(G2048Env {
                board: G2048Board::empty(self.config.g2048_target_exponent),
                spawn: self.config.g2048_spawn,
                done: false,
            }),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.make().n_actions()
    }

    pub fn obs_dim(&self) -> usize {
        self.make().obs_dim()
    }
}

/// Process-wide solver per (geometry, table size), so repeated pipelines and
/// seeds reuse solved positions.
pub fn shared_solver(geom: Geometry, table_bits: u32) -> Arc<C4Solver> {
    use std::collections::HashMap;
    use std::sync::{Mutex, OnceLock};
    type Registry = Mutex<HashMap<(usize, usize, u32), Arc<C4Solver>>>;
    static SOLVERS: OnceLock<Registry> = OnceLock::new();
    let map = SOLVERS.get_or_init(|| Mutex::new(HashMap::new()));
    map.lock()
        .expect("solver registry poisoned")
        .entry((geom.width, geom.height, table_bits))
        .or_insert_with(|| Arc::new(C4Solver::new(geom, table_bits)))
        .clone()
}
