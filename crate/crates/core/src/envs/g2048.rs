//! Simplified 2048: the episode ends with reward 1 once a tile reaches the
//! target exponent (default 7, the 128 tile), or with reward 0 when no move
//! changes the board.

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const SIZE: usize = 4;
pub const N_ACTIONS: usize = 4;
pub const DEFAULT_TARGET_EXPONENT: u8 = 7;
pub const SPAWN_TWO_PROB: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn from_action(a: usize) -> Result<Self> {
        Self::ALL.get(a).copied().ok_or(Error::InvalidAction { action: a, reason: "2048 has actions 0..4" })
    }

    pub fn action(self) -> usize {
        self as usize
    }
}

/// Tile exponents, `0` meaning empty; `grid[row][col]` with row 0 on top.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct G2048Board {
    pub grid: [[u8; SIZE]; SIZE],
    pub target_exponent: u8,
}

/// Slides one line toward index 0. Returns the new line and the merge count.
pub fn slide_line(line: [u8; SIZE]) -> ([u8; SIZE], u32) {
    let mut out = [0u8; SIZE];
    let mut n = 0;
    let mut merges = 0;
    let mut pending: Option<u8> = None;
    for &v in line.iter().filter(|&&v| v != 0) {
        match pending {
            Some(p) if p == v => {
                out[n] = p + 1;
                n += 1;
                merges += 1;
                pending = None;
            }
            Some(p) => {
                out[n] = p;
                n += 1;
                pending = Some(v);
            }
            None => pending = Some(v),
        }
    }
    if let Some(p) = pending {
        out[n] = p;
    }
    (out, merges)
}

impl G2048Board {
    pub fn empty(target_exponent: u8) -> Self {
        Self { grid: [[0; SIZE]; SIZE], target_exponent }
    }

    pub fn from_rows(rows: [[u8; SIZE]; SIZE], target_exponent: u8) -> Self {
        Self { grid: rows, target_exponent }
    }

    fn line(&self, dir: Direction, i: usize) -> [u8; SIZE] {
        let mut l = [0u8; SIZE];
        for (k, v) in l.iter_mut().enumerate() {
            *v = match dir {
                Direction::Left => self.grid[i][k],
                Direction::Right => self.grid[i][SIZE - 1 - k],
                Direction::Up => self.grid[k][i],
                Direction::Down => self.grid[SIZE - 1 - k][i],
            };
        }
        l
    }

    fn set_line(&mut self, dir: Direction, i: usize, l: [u8; SIZE]) {
        for (k, &v) in l.iter().enumerate() {
            match dir {
                Direction::Left => self.grid[i][k] = v,
                Direction::Right => self.grid[i][SIZE - 1 - k] = v,
                Direction::Up => self.grid[k][i] = v,
                Direction::Down => self.grid[SIZE - 1 - k][i] = v,
            }
        }
    }

    /// Slides every row/column toward `dir`.
    pub fn slide(&self, dir: Direction) -> (G2048Board, bool, u32) {
        let mut next = *self;
        let mut merges = 0;
        for i in 0..SIZE {
            let (l, m) = slide_line(self.line(dir, i));
            merges += m;
            next.set_line(dir, i, l);
        }
        (next, next.grid != self.grid, merges)
    }

    pub fn legal_mask(&self) -> [bool; N_ACTIONS] {
        let mut mask = [false; N_ACTIONS];
        for d in Direction::ALL {
            mask[d.action()] = self.slide(d).1;
        }
        mask
    }

    pub fn has_move(&self) -> bool {
        self.legal_mask().iter().any(|&m| m)
    }

    pub fn max_exponent(&self) -> u8 {
        self.grid.iter().flatten().copied().max().unwrap_or(0)
    }

    pub fn empty_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..SIZE {
            for c in 0..SIZE {
                if self.grid[r][c] == 0 {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// `sum 2^e` over occupied cells.
    pub fn mass(&self) -> u64 {
        self.grid.iter().flatten().filter(|&&e| e > 0).map(|&e| 1u64 << e).sum()
    }

    /// Places one tile (exponent 1 w.p. 0.9, else 2) in a uniform empty cell.
    pub fn spawn(&mut self, rng: &mut Rng) -> bool {
        let empties = self.empty_cells();
        if empties.is_empty() {
            return false;
        }
        let (r, c) = empties[rng.below(empties.len())];
        self.grid[r][c] = if rng.uniform() < SPAWN_TWO_PROB { 1 } else { 2 };
        true
    }

    /// One-hot exponent planes, cell-major: `cell * (target + 1) + exponent`.
    pub fn one_hot(&self) -> Vec<f64> {
        let depth = self.target_exponent as usize + 1;
        let mut out = vec![0.0; SIZE * SIZE * depth];
        for (cell, &e) in self.grid.iter().flatten().enumerate() {
            out[cell * depth + (e as usize).min(depth - 1)] = 1.0;
        }
        out
    }

    pub fn obs_dim(target_exponent: u8) -> usize {
        SIZE * SIZE * (target_exponent as usize + 1)
    }
}

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct G2048Step {
    pub board: G2048Board,
    pub reward: f64,
    pub done: bool,
}

/// Slides, rewards reaching the target, otherwise spawns a tile. A direction
/// that does not change the board is rejected.
pub fn g2048_step(board: &G2048Board, dir: Direction, spawn: bool, rng: &mut Rng) -> Result<G2048Step> {
    let (mut next, changed, _) = board.slide(dir);
    if !changed {
        return Err(Error::InvalidAction { action: dir.action(), reason: "direction does not change the board" });
    }
    if next.max_exponent() >= next.target_exponent {
        return Ok(G2048Step { board: next, reward: 1.0, done: true });
    }
    if spawn {
        next.spawn(rng);
    }
    let done = !next.has_move();
    Ok(G2048Step { board: next, reward: 0.0, done })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_merges_toward_edge() {
        assert_eq!(slide_line([1, 1, 0, 0]), ([2, 0, 0, 0], 1));
        assert_eq!(slide_line([1, 1, 1, 0]), ([2, 1, 0, 0], 1));
        assert_eq!(slide_line([1, 1, 1, 1]), ([2, 2, 0, 0], 2));
        assert_eq!(slide_line([2, 1, 1, 0]), ([2, 2, 0, 0], 1));
        assert_eq!(slide_line([0, 0, 0, 3]), ([3, 0, 0, 0], 0));
    }

    #[test]
    fn row_slide_left_reports_change_and_merges() {
        let b = G2048Board::from_rows([[1, 1, 0, 0], [0; 4], [0; 4], [0; 4]], 7);
        let (next, changed, merges) = b.slide(Direction::Left);
        assert!(changed);
        assert_eq!(merges, 1);
        assert_eq!(next.grid[0], [2, 0, 0, 0]);
        let (_, changed, _) = next.slide(Direction::Left);
        assert!(!changed);
    }

    #[test]
    fn directions_map_to_the_right_edges() {
        let b = G2048Board::from_rows([[0, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]], 7);
        assert_eq!(b.slide(Direction::Up).0.grid[0][1], 1);
        assert_eq!(b.slide(Direction::Down).0.grid[3][1], 1);
        assert_eq!(b.slide(Direction::Left).0.grid[1][0], 1);
        assert_eq!(b.slide(Direction::Right).0.grid[1][3], 1);
    }

    #[test]
    fn creating_target_tile_pays_and_ends() {
        let b = G2048Board::from_rows([[6, 6, 0, 0], [1, 0, 0, 0], [0; 4], [0; 4]], 7);
        let s = g2048_step(&b, Direction::Left, true, &mut Rng::new(0)).unwrap();
        assert_eq!(s.reward, 1.0);
        assert!(s.done);
        assert_eq!(s.board.grid[0][0], 7);
    }

    #[test]
    fn dead_board_ends_with_zero_reward() {
        // Sliding right opens one hole at (0, 0); whichever tile spawns there,
        // no direction changes the board afterwards.
        let b = G2048Board::from_rows([[3, 4, 3, 0], [3, 4, 3, 4], [4, 3, 4, 3], [3, 4, 3, 4]], 7);
        for seed in 0..20 {
            let s = g2048_step(&b, Direction::Right, true, &mut Rng::new(seed)).unwrap();
            assert_eq!(s.reward, 0.0);
            assert!(s.done);
            assert!(!s.board.has_move());
        }
    }

    #[test]
    fn no_change_direction_is_rejected() {
        let b = G2048Board::from_rows([[1, 0, 0, 0], [0; 4], [0; 4], [0; 4]], 7);
        assert!(g2048_step(&b, Direction::Left, true, &mut Rng::new(0)).is_err());
        assert_eq!(b.legal_mask(), [false, true, false, true]);
    }

    #[test]
    fn spawn_is_ninety_percent_twos() {
        let mut rng = Rng::new(42);
        let n = 100_000;
        let mut twos = 0;
        for _ in 0..n {
            let mut b = G2048Board::empty(7);
            b.spawn(&mut rng);
            if b.max_exponent() == 1 {
                twos += 1;
            }
        }
        let frac = twos as f64 / n as f64;
        assert!((frac - 0.9).abs() < 0.01, "{frac}");
    }
}
