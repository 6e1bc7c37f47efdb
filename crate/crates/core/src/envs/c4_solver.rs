//! Exact Connect Four solver: negamax with alpha-beta pruning, threat-based
//! move ordering, null-window search and a shared transposition table.
//!
//! Scores follow the usual convention: a win is worth the number of stones
//! the winner still had in hand, a loss the negation, a draw zero. Only the
//! sign is exposed; searches run with the narrow `[-1, 1]` window, which is
//! all a win/draw/loss value needs.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::connect4::{C4Board, Geometry, Outcome};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bound {
    Upper = 1,
    Lower = 2,
}

const SCORE_OFFSET: i32 = 32;
const ROOT_MEMO_CAP: usize = 4_000_000;

/// Fixed-capacity table shared by every search on one geometry.
///
/// Buckets hold two slots: the first keeps the entry with the largest
/// remaining subtree, the second is always overwritten. Entries carry the
/// full key, so a torn or racy replacement is detected on lookup and simply
/// reads as a miss.
pub struct TranspositionTable {
    slots: Vec<AtomicU64>,
    bucket_bits: u32,
}

impl TranspositionTable {
    /// `log2_entries` is the total slot count (two per bucket).
    pub fn new(log2_entries: u32) -> Self {
        let n = 1usize << log2_entries.max(1);
        Self { slots: (0..n).map(|_| AtomicU64::new(0)).collect(), bucket_bits: log2_entries.max(1) - 1 }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn clear(&self) {
        for s in &self.slots {
            s.store(0, Ordering::Relaxed);
        }
    }

    #[inline]
    fn bucket(&self, key: u64) -> usize {
        if self.bucket_bits == 0 {
            return 0;
        }
        let h = key.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        ((h >> (64 - self.bucket_bits)) as usize) * 2
    }

    #[inline]
    fn pack(key: u64, bound: Bound, score: i32, moves: u32) -> u64 {
        (key << 14) | ((bound as u64) << 12) | (((score + SCORE_OFFSET) as u64) << 6) | moves as u64
    }

    #[inline]
    fn get(&self, key: u64) -> Option<(Bound, i32)> {
        let b = self.bucket(key);
        for slot in &self.slots[b..b + 2] {
            let e = slot.load(Ordering::Relaxed);
            if e != 0 && e >> 14 == key {
                let bound = if (e >> 12) & 3 == 1 { Bound::Upper } else { Bound::Lower };
                let score = ((e >> 6) & 63) as i32 - SCORE_OFFSET;
                return Some((bound, score));
            }
        }
        None
    }

    #[inline]
    fn put(&self, key: u64, bound: Bound, score: i32, moves: u32) {
        let b = self.bucket(key);
        let entry = Self::pack(key, bound, score, moves);
        let deep = &self.slots[b];
        let cur = deep.load(Ordering::Relaxed);
        if cur == 0 || cur >> 14 == key || (cur & 63) as u32 >= moves {
            deep.store(entry, Ordering::Relaxed);
        } else {
            self.slots[b + 1].store(entry, Ordering::Relaxed);
        }
    }
}

/// Exact value of a position and the moves achieving it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Solution {
    /// -1, 0 or +1 from the mover's point of view.
    pub value: i8,
    /// Every column whose resulting value equals `value`, ascending.
    pub best_moves: Vec<usize>,
    /// Value for the mover of playing each column; `None` for full columns.
    pub move_values: Vec<Option<i8>>,
}

pub struct C4Solver {
    geom: Geometry,
    table: TranspositionTable,
    use_table: bool,
    column_order: Vec<usize>,
    memo: Mutex<HashMap<u64, i8>>,
}

#[derive(Clone, Copy)]
struct Pos {
    current: u64,
    mask: u64,
    moves: u32,
}

impl C4Solver {
    pub fn new(geom: Geometry, log2_entries: u32) -> Self {
        let w = geom.width as isize;
        let column_order = (0..w).map(|i| (w / 2 + (1 - 2 * (i % 2)) * (i + 1) / 2) as usize).collect();
        Self {
            geom,
            table: TranspositionTable::new(log2_entries),
            use_table: true,
            column_order,
            memo: Mutex::new(HashMap::new()),
        }
    }

    /// Solver without the transposition table or the root memo; used to
    /// cross-check that caching never changes a value.
    pub fn without_table(geom: Geometry) -> Self {
        let mut s = Self::new(geom, 1);
        s.use_table = false;
        s
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    fn check(&self, board: &C4Board) -> Result<()> {
        if board.geometry() != &self.geom {
            return Err(Error::Config("board geometry does not match the solver".into()));
        }
        if board.is_terminal() {
            return Err(Error::TerminalPosition);
        }
        Ok(())
    }

    /// Game-theoretic value for the mover plus all optimal columns.
    pub fn solve(&self, board: &C4Board) -> Result<Solution> {
        self.check(board)?;
        let mut move_values = vec![None; self.geom.width];
        for col in board.legal_moves() {
            let (next, outcome) = board.apply(col)?;
            move_values[col] = Some(match outcome {
                Outcome::Win => 1,
                Outcome::Draw => 0,
                Outcome::Ongoing => -self.value_unchecked(&next),
            });
        }
        let value = move_values.iter().flatten().copied().max().expect("non-terminal board has a legal move");
        let best_moves = (0..self.geom.width).filter(|&c| move_values[c] == Some(value)).collect();
        Ok(Solution { value, best_moves, move_values })
    }

    /// Value of a non-terminal position for the mover.
    pub fn value(&self, board: &C4Board) -> Result<i8> {
        self.check(board)?;
        Ok(self.value_unchecked(board))
    }

    fn value_unchecked(&self, board: &C4Board) -> i8 {
        let (current, mask, moves) = board.solver_position();
        let key = self.canonical_key(current + mask);
        if self.use_table {
            if let Some(&v) = self.memo.lock().expect("memo poisoned").get(&key) {
                return v;
            }
        }
        let v = self.weak_solve(Pos { current, mask, moves }).signum() as i8;
        if self.use_table {
            let mut memo = self.memo.lock().expect("memo poisoned");
            if memo.len() >= ROOT_MEMO_CAP {
                memo.clear();
            }
            memo.insert(key, v);
        }
        v
    }

    /// Positions and their mirror images share a value, so the memo is keyed
    /// by the smaller of the two encodings.
    fn canonical_key(&self, key: u64) -> u64 {
        let stride = self.geom.height + 1;
        let col = (1u64 << stride) - 1;
        let w = self.geom.width;
        let mirrored = (0..w).fold(0u64, |acc, c| acc | (((key >> (c * stride)) & col) << ((w - 1 - c) * stride)));
        key.min(mirrored)
    }

    fn weak_solve(&self, p: Pos) -> i32 {
        let g = &self.geom;
        let cells = g.cells() as i32;
        if g.winning_cells(p.current, p.mask) & g.playable(p.mask) != 0 {
            return (cells + 1 - p.moves as i32) / 2;
        }
        let (mut min, mut max) = (-1, 1);
        while min < max {
            let mut med = min + (max - min) / 2;
            if med <= 0 && min / 2 < med {
                med = min / 2;
            } else if med >= 0 && max / 2 > med {
                med = max / 2;
            }
            let r = self.negamax(p, med, med + 1);
            if r <= med {
                max = r;
            } else {
                min = r;
            }
        }
        min
    }

    /// Moves that do not hand the opponent an immediate win.
    #[inline]
    fn non_losing_moves(&self, p: Pos) -> u64 {
        let g = &self.geom;
        let mut possible = g.playable(p.mask);
        let opp_win = g.winning_cells(p.current ^ p.mask, p.mask);
        let forced = possible & opp_win;
        if forced != 0 {
            if forced & (forced - 1) != 0 {
                return 0;
            }
            possible = forced;
        }
        possible & !(opp_win >> 1)
    }

    // Precondition: the mover cannot win in one move.
    fn negamax(&self, p: Pos, mut alpha: i32, mut beta: i32) -> i32 {
        let g = &self.geom;
        let cells = g.cells() as i32;
        let moves = p.moves as i32;
        let possible = self.non_losing_moves(p);
        if possible == 0 {
            return -(cells - moves) / 2;
        }
        if moves >= cells - 2 {
            return 0;
        }
        let min = -(cells - 2 - moves) / 2;
        if alpha < min {
            alpha = min;
            if alpha >= beta {
                return alpha;
            }
        }
        let max = (cells - 1 - moves) / 2;
        if beta > max {
            beta = max;
            if alpha >= beta {
                return beta;
            }
        }
        let key = p.current + p.mask;
        if self.use_table {
            match self.table.get(key) {
                Some((Bound::Upper, v)) if beta > v => {
                    beta = v;
                    if alpha >= beta {
                        return beta;
                    }
                }
                Some((Bound::Lower, v)) if alpha < v => {
                    alpha = v;
                    if alpha >= beta {
                        return alpha;
                    }
                }
                _ => {}
            }
        }

        // (threat count, order rank, move bit)
        let mut candidates: [(u32, usize, u64); 16] = [(0, 0, 0); 16];
        let mut n = 0;
        for (rank, &col) in self.column_order.iter().enumerate() {
            let mv = possible & g.column_mask(col);
            if mv != 0 {
                let threats = (g.winning_cells(p.current | mv, p.mask) & !p.mask).count_ones();
                candidates[n] = (threats, rank, mv);
                n += 1;
            }
        }
        let cand = &mut candidates[..n];
        cand.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

        for &(_, _, mv) in cand.iter() {
            let child = Pos { current: p.current ^ p.mask, mask: p.mask | mv, moves: p.moves + 1 };
            let score = -self.negamax(child, -beta, -alpha);
            if score >= beta {
                if self.use_table {
                    self.table.put(key, Bound::Lower, score, p.moves);
                }
                return score;
            }
            if score > alpha {
                alpha = score;
            }
        }
        if self.use_table {
            self.table.put(key, Bound::Upper, alpha, p.moves);
        }
        alpha
    }

    pub fn clear(&self) {
        self.table.clear();
        self.memo.lock().expect("memo poisoned").clear();
    }
}
