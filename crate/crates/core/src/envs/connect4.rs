//! Connect Four on a `width x height` bitboard.
//!
//! Cells are numbered column-major with one sentinel bit on top of every
//! column: cell `(col, row)` is bit `col * (height + 1) + row`. The sentinel
//! row keeps shifted line patterns from wrapping between columns.

use crate::error::{Error, Result};

pub const DEFAULT_WIDTH: usize = 7;
pub const DEFAULT_HEIGHT: usize = 6;
pub const MAX_WIDTH: usize = 16;
/// Keys (`mover stones + mask`) must fit in this many bits so a key, a bound
/// and a depth pack into one `u64` transposition entry.
pub const MAX_KEY_BITS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ongoing,
    Win,
    Draw,
}

/// Board geometry and the derived masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub width: usize,
    pub height: usize,
    bottom: u64,
    full: u64,
}

impl Geometry {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || width > MAX_WIDTH || width * (height + 1) > MAX_KEY_BITS {
            return Err(Error::Config(format!("unsupported connect4 board {width}x{height}")));
        }
        let mut bottom = 0u64;
        for c in 0..width {
            bottom |= 1u64 << (c * (height + 1));
        }
        let full = bottom * ((1u64 << height) - 1);
        Ok(Self { width, height, bottom, full })
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn column_mask(&self, col: usize) -> u64 {
        ((1u64 << self.height) - 1) << (col * (self.height + 1))
    }

    #[inline]
    pub fn bit(&self, col: usize, row: usize) -> u64 {
        1u64 << (col * (self.height + 1) + row)
    }

    /// True when `stones` contains four in a row in any direction.
    #[inline]
    pub fn has_four(&self, stones: u64) -> bool {
        let h = self.height as u32;
        for shift in [h + 1, h, h + 2, 1] {
            let m = stones & (stones >> shift);
            if m & (m >> (2 * shift)) != 0 {
                return true;
            }
        }
        false
    }

    /// Empty cells that would complete a four for `stones`.
    #[inline]
    pub fn winning_cells(&self, stones: u64, mask: u64) -> u64 {
        let p = stones;
        let mut r = (p << 1) & (p << 2) & (p << 3);
        let h = self.height as u32;
        for s in [h + 1, h, h + 2] {
            let a = (p << s) & (p << (2 * s));
            r |= a & (p << (3 * s));
            r |= a & (p >> s);
            let b = (p >> s) & (p >> (2 * s));
            r |= b & (p << s);
            r |= b & (p >> (3 * s));
        }
        r & (self.full ^ mask)
    }

    #[inline]
    pub fn playable(&self, mask: u64) -> u64 {
        (mask + self.bottom) & self.full
    }
}

/// A Connect Four position. Player 0 always moves first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct C4Board {
    geom: Geometry,
    /// Stones per player.
    pub pieces: [u64; 2],
    /// Player to move.
    pub mover: u8,
    /// Fill count per column.
    pub heights: [u8; MAX_WIDTH],
}

impl C4Board {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        Ok(Self::empty(Geometry::new(width, height)?))
    }

    pub fn empty(geom: Geometry) -> Self {
        Self { geom, pieces: [0, 0], mover: 0, heights: [0; MAX_WIDTH] }
    }

    pub fn standard() -> Self {
        Self::new(DEFAULT_WIDTH, DEFAULT_HEIGHT).expect("7x6 is supported")
    }

    /// Plays a sequence of columns from the empty board.
    pub fn from_moves(width: usize, height: usize, cols: &[usize]) -> Result<Self> {
        let mut b = Self::new(width, height)?;
        for &c in cols {
            let (next, outcome) = b.apply(c)?;
            if outcome != Outcome::Ongoing {
                return Err(Error::TerminalPosition);
            }
            b = next;
        }
        Ok(b)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn width(&self) -> usize {
        self.geom.width
    }

    pub fn height(&self) -> usize {
        self.geom.height
    }

    pub fn mask(&self) -> u64 {
        self.pieces[0] | self.pieces[1]
    }

    pub fn moves_played(&self) -> usize {
        self.mask().count_ones() as usize
    }

    /// Stones of the player to move.
    pub fn mover_stones(&self) -> u64 {
        self.pieces[self.mover as usize]
    }

    /// Unique position key: mover stones plus the occupancy mask.
    pub fn key(&self) -> u64 {
        self.mover_stones() + self.mask()
    }

    pub fn is_full(&self) -> bool {
        self.mask() == self.geom.full
    }

    pub fn can_play(&self, col: usize) -> bool {
        col < self.geom.width && (self.heights[col] as usize) < self.geom.height
    }

    /// Non-full columns in increasing order.
    pub fn legal_moves(&self) -> Vec<usize> {
        (0..self.geom.width).filter(|&c| self.can_play(c)).collect()
    }

    /// Winner of a finished game, if any.
    pub fn winner(&self) -> Option<u8> {
        (0..2u8).find(|&p| self.geom.has_four(self.pieces[p as usize]))
    }

    pub fn is_terminal(&self) -> bool {
        self.winner().is_some() || self.is_full()
    }

    /// Drops a stone for the mover. The returned outcome is from the
    /// perspective of the player who just moved.
    pub fn apply(&self, col: usize) -> Result<(C4Board, Outcome)> {
        if !self.can_play(col) {
            return Err(Error::InvalidAction { action: col, reason: "column full or out of range" });
        }
        let mut next = *self;
        let row = self.heights[col] as usize;
        let p = self.mover as usize;
        next.pieces[p] |= self.geom.bit(col, row);
        next.heights[col] += 1;
        next.mover ^= 1;
        let outcome = if self.geom.has_four(next.pieces[p]) {
            Outcome::Win
        } else if next.is_full() {
            Outcome::Draw
        } else {
            Outcome::Ongoing
        };
        Ok((next, outcome))
    }

    /// Columns where the mover wins immediately.
    pub fn winning_moves(&self) -> Vec<usize> {
        let wins = self.geom.winning_cells(self.mover_stones(), self.mask()) & self.geom.playable(self.mask());
        (0..self.geom.width).filter(|&c| wins & self.geom.column_mask(c) != 0).collect()
    }

    /// Two binary planes (stones of `player`, then the other player's),
    /// row-major per plane.
    pub fn planes(&self, player: u8) -> Vec<f64> {
        let (w, h) = (self.geom.width, self.geom.height);
        let mut out = vec![0.0; 2 * w * h];
        for (plane, who) in [player as usize, 1 - player as usize].into_iter().enumerate() {
            for r in 0..h {
                for c in 0..w {
                    if self.pieces[who] & self.geom.bit(c, r) != 0 {
                        out[plane * w * h + r * w + c] = 1.0;
                    }
                }
            }
        }
        out
    }

    pub(crate) fn solver_position(&self) -> (u64, u64, u32) {
        (self.mover_stones(), self.mask(), self.moves_played() as u32)
    }
}

impl std::fmt::Display for C4Board {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for r in (0..self.geom.height).rev() {
            for c in 0..self.geom.width {
                let b = self.geom.bit(c, r);
                let ch = if self.pieces[0] & b != 0 {
                    'X'
                } else if self.pieces[1] & b != 0 {
                    'O'
                } else {
                    '.'
                };
                write!(f, "{ch}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
