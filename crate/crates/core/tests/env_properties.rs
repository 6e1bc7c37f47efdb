use std::sync::Arc;

use proptest::prelude::*;

use esper_core::datagen::policies::{
    c4_epsilon_optimal_policy, c4_rightmost_exploiter_policy, g2048_heuristic_expert, BehaviorPolicy,
};
use esper_core::envs::c4_solver::C4Solver;
use esper_core::envs::connect4::{C4Board, Geometry};
use esper_core::envs::g2048::{Direction, G2048Board};
use esper_core::envs::{c4_opponent_move, AnyEnv, C4Env, EnvConfig, EnvFactory};
use esper_core::rng::Rng;
use esper_core::trajectory::EnvId;

fn c4_env(w: usize, h: usize, moves: &[usize]) -> AnyEnv {
    let geom = Geometry::new(w, h).unwrap();
    let mut env = C4Env::new(geom, 0.2, false, Arc::new(C4Solver::new(geom, 16)));
    env.board = C4Board::from_moves(w, h, moves).unwrap();
    AnyEnv::Connect4(env)
}

#[test]
fn exploiter_prefers_the_rightmost_column() {
    let p = c4_rightmost_exploiter_policy();
    let mut rng = Rng::new(0);
    assert_eq!(p.act(&c4_env(7, 6, &[]), &mut rng).unwrap(), 6);
    let full = c4_env(5, 4, &[4, 4, 4, 4]);
    for _ in 0..50 {
        assert!(p.act(&full, &mut rng).unwrap() < 4);
    }
}

#[test]
fn epsilon_optimal_mixes_optimal_and_uniform_moves() {
    // Player 0 wins at once in column 0; that is the unique optimum.
    let env = c4_env(5, 4, &[0, 1, 0, 1, 0, 1]);
    let p = c4_epsilon_optimal_policy(0.3).unwrap();
    let mut rng = Rng::new(1);
    let n = 10_000;
    let hits = (0..n).filter(|_| p.act(&env, &mut rng).unwrap() == 0).count() as f64;
    let q = 0.7 + 0.3 / 5.0;
    let sigma = (n as f64 * q * (1.0 - q)).sqrt();
    assert!((hits - n as f64 * q).abs() < 3.0 * sigma, "hits {hits}");
    assert!(c4_epsilon_optimal_policy(1.5).is_err());
}

/// First random position of a seeded stream whose solution satisfies `want`.
fn find_position(solver: &C4Solver, want: impl Fn(&[usize]) -> bool) -> C4Board {
    let mut rng = Rng::new(99);
    loop {
        let mut board = C4Board::new(5, 4).unwrap();
        for _ in 0..rng.below(12) {
            let legal = board.legal_moves();
            let next = board.apply(legal[rng.below(legal.len())]).unwrap().0;
            if next.is_terminal() {
                break;
            }
            board = next;
        }
        if want(&solver.solve(&board).unwrap().best_moves) {
            return board;
        }
    }
}

#[test]
fn opponent_slip_only_avoids_an_optimal_rightmost_column() {
    let solver = C4Solver::new(Geometry::new(5, 4).unwrap(), 16);
    let mut rng = Rng::new(2);

    let board = find_position(&solver, |best| best == [4]);
    let sol = solver.solve(&board).unwrap();
    assert_eq!(c4_opponent_move(&solver, &board, 0.0, &mut rng).unwrap(), 4);
    let slipped = c4_opponent_move(&solver, &board, 1.0, &mut rng).unwrap();
    let runner_up = (0..4).filter_map(|c| sol.move_values[c]).max().unwrap();
    assert_eq!(sol.move_values[slipped], Some(runner_up));
    assert!((0..slipped).all(|c| sol.move_values[c] != Some(runner_up)));

    let board = find_position(&solver, |best| !best.contains(&4));
    let best = solver.solve(&board).unwrap().best_moves[0];
    assert_eq!(c4_opponent_move(&solver, &board, 1.0, &mut rng).unwrap(), best);
}

fn exploiter_win_rate(slip: f64, episodes: usize) -> f64 {
    let config =
        EnvConfig { c4_width: 6, c4_height: 4, c4_opponent_first: true, c4_slip_prob: slip, ..EnvConfig::default() };
    let factory = EnvFactory::new(EnvId::Connect4, config).unwrap();
    let p = c4_rightmost_exploiter_policy();
    let mut wins = 0;
    for e in 0..episodes {
        let mut rng = Rng::new(3).split(e as u64);
        let mut env = factory.make();
        env.reset(&mut rng);
        while !env.is_done() {
            let a = p.act(&env, &mut rng).unwrap();
            if env.step(a, &mut rng).unwrap().reward > 0.0 {
                wins += 1;
            }
        }
    }
    wins as f64 / episodes as f64
}

#[test]
fn exploiter_wins_only_through_slips() {
    let (none, some, many) = (exploiter_win_rate(0.0, 300), exploiter_win_rate(0.2, 300), exploiter_win_rate(0.6, 300));
    assert_eq!(none, 0.0);
    assert!(some > 0.0 && some < 1.0);
    assert!(many > some, "{many} vs {some}");
}

#[test]
fn expert_takes_an_immediate_target_merge() {
    let mut rows = [[0u8; 4]; 4];
    rows[3] = [6, 6, 2, 1];
    rows[2] = [1, 2, 3, 4];
    let board = G2048Board::from_rows(rows, 7);
    let dir = g2048_heuristic_expert().choose(&board).unwrap();
    assert!(board.slide(dir).0.max_exponent() >= 7, "{dir:?}");
}

#[test]
fn expert_reaches_128_in_most_games() {
    let factory = EnvFactory::new(EnvId::G2048, EnvConfig::default()).unwrap();
    let expert = g2048_heuristic_expert();
    let episodes = 100;
    let mut wins = 0;
    for e in 0..episodes {
        let mut rng = Rng::new(4).split(e);
        let mut env = factory.make();
        env.reset(&mut rng);
        while !env.is_done() {
            let a = expert.act(&env, &mut rng).unwrap();
            assert!(env.legal_mask()[a]);
            wins += usize::from(env.step(a, &mut rng).unwrap().reward > 0.0);
        }
    }
    assert!(wins * 2 >= episodes as usize, "{wins} wins");
}

fn arb_rows() -> impl Strategy<Value = [[u8; 4]; 4]> {
    proptest::array::uniform4(proptest::array::uniform4(prop_oneof![3 => Just(0u8), 5 => 1u8..6]))
}

proptest! {
    #[test]
    fn slide_conserves_mass_and_counts_merges(rows in arb_rows(), d in 0usize..4) {
        let board = G2048Board::from_rows(rows, 11);
        let dir = Direction::from_action(d).unwrap();
        let (next, changed, merges) = board.slide(dir);
        prop_assert_eq!(next.mass(), board.mass());
        let tiles = |b: &G2048Board| 16 - b.empty_cells().len();
        prop_assert_eq!(tiles(&next), tiles(&board) - merges as usize);
        prop_assert_eq!(changed, next != board);
        prop_assert_eq!(board.legal_mask()[d], changed);
        if merges == 0 {
            prop_assert_eq!(next.slide(dir).0, next);
        }
    }

    #[test]
    fn spawn_adds_exactly_one_small_tile(rows in arb_rows(), seed in any::<u64>()) {
        let mut board = G2048Board::from_rows(rows, 11);
        let before = board.empty_cells().len();
        let placed = board.spawn(&mut Rng::new(seed));
        prop_assert_eq!(placed, before > 0);
        if placed {
            prop_assert_eq!(board.empty_cells().len(), before - 1);
            let added = board.mass() - G2048Board::from_rows(rows, 11).mass();
            prop_assert!(added == 2 || added == 4);
        }
    }

    #[test]
    fn connect4_boards_stay_consistent(cols in proptest::collection::vec(0usize..7, 0..42)) {
        let mut board = C4Board::new(7, 6).unwrap();
        for c in cols {
            if board.is_terminal() || !board.can_play(c) {
                continue;
            }
            board = board.apply(c).unwrap().0;
            prop_assert_eq!(board.pieces[0] & board.pieces[1], 0);
            let (a, b) = (board.pieces[0].count_ones(), board.pieces[1].count_ones());
            prop_assert!(a == b || a == b + 1);
            prop_assert!(board.heights.iter().all(|&h| h <= 6));
            prop_assert_eq!(board.moves_played() as u32, a + b);
        }
    }
}
