use crate::{Error, Result};

/// A configuration on a periodic `rows x cols` lattice of tokens `0..n_tokens`.
///
/// Sites are numbered row-major. As a state-space index the lattice is read as
/// a base-`n_tokens` number with site 0 as the least significant digit.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LatticeState {
    rows: usize,
    cols: usize,
    n_tokens: usize,
    tokens: Vec<u8>,
}

impl LatticeState {
    pub fn new(rows: usize, cols: usize, n_tokens: usize, tokens: Vec<u8>) -> Result<Self> {
        check_shape(rows, cols, n_tokens)?;
        if tokens.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} tokens for a {rows}x{cols} lattice",
                tokens.len()
            )));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t as usize >= n_tokens) {
            return Err(Error::Domain(format!("token {bad} out of range 0..{n_tokens}")));
        }
        Ok(Self {
            rows,
            cols,
            n_tokens,
            tokens,
        })
    }

    pub fn filled(rows: usize, cols: usize, n_tokens: usize, token: u8) -> Result<Self> {
        Self::new(rows, cols, n_tokens, vec![token; rows * cols])
    }

    pub fn from_index(rows: usize, cols: usize, n_tokens: usize, mut index: usize) -> Result<Self> {
        check_shape(rows, cols, n_tokens)?;
        let mut tokens = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            tokens.push((index % n_tokens) as u8);
            index /= n_tokens;
        }
        if index != 0 {
            return Err(Error::Domain("state index out of range".into()));
        }
        Ok(Self {
            rows,
            cols,
            n_tokens,
            tokens,
        })
    }

    /// Writes the tokens of state `index` into `self`, keeping the shape.
    pub fn set_from_index(&mut self, mut index: usize) {
        for tok in self.tokens.iter_mut() {
            *tok = (index % self.n_tokens) as u8;
            index /= self.n_tokens;
        }
    }

    /// State-space index. Only meaningful when `n_tokens^d` fits in `usize`.
    pub fn index(&self) -> usize {
        self.tokens
            .iter()
            .rev()
            .fold(0usize, |acc, &t| acc * self.n_tokens + t as usize)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_sites(&self) -> usize {
        self.tokens.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn tokens(&self) -> &[u8] {
        &self.tokens
    }

    #[inline]
    pub fn token(&self, site: usize) -> usize {
        self.tokens[site] as usize
    }

    #[inline]
    pub fn set(&mut self, site: usize, token: usize) {
        debug_assert!(token < self.n_tokens);
        self.tokens[site] = token as u8;
    }

    /// `Swap(x, i, tau)`: the neighbor that differs from `self` only at `site`.
    pub fn swapped(&self, site: usize, token: usize) -> Self {
        let mut y = self.clone();
        y.set(site, token);
        y
    }

    /// Ising spin of a binary site: token 0 is -1, token 1 is +1.
    #[inline]
    pub fn spin(&self, site: usize) -> f64 {
        spin_of(self.tokens[site] as usize)
    }

    pub fn same_shape(&self, other: &LatticeState) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.n_tokens == other.n_tokens
    }
}

#[inline]
pub fn spin_of(token: usize) -> f64 {
    if token == 0 {
        -1.0
    } else {
        1.0
    }
}

fn check_shape(rows: usize, cols: usize, n_tokens: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::Geometry(format!("empty lattice {rows}x{cols}")));
    }
    if !(2..=256).contains(&n_tokens) {
        return Err(Error::Geometry(format!("token count {n_tokens} outside 2..=256")));
    }
    Ok(())
}

/// Neighbor tables of a periodic 2-D lattice. Immutable after construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Geometry {
    rows: usize,
    cols: usize,
    /// right, left, down, up
    neighbors: Vec<[usize; 4]>,
}

impl Geometry {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Geometry(format!("empty lattice {rows}x{cols}")));
        }
        let site = |r: usize, c: usize| r * cols + c;
        let neighbors = (0..rows * cols)
            .map(|i| {
                let (r, c) = (i / cols, i % cols);
                [
                    site(r, (c + 1) % cols),
                    site(r, (c + cols - 1) % cols),
                    site((r + 1) % rows, c),
                    site((r + rows - 1) % rows, c),
                ]
            })
            .collect();
        Ok(Self {
            rows,
            cols,
            neighbors,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_sites(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn neighbors(&self, site: usize) -> &[usize; 4] {
        &self.neighbors[site]
    }

    #[inline]
    pub fn right(&self, site: usize) -> usize {
        self.neighbors[site][0]
    }

    #[inline]
    pub fn down(&self, site: usize) -> usize {
        self.neighbors[site][2]
    }

    /// The site displaced by `(dr, dc)` with periodic wrap-around.
    pub fn shift(&self, site: usize, dr: isize, dc: isize) -> usize {
        let (r, c) = ((site / self.cols) as isize, (site % self.cols) as isize);
        let r = (r + dr).rem_euclid(self.rows as isize) as usize;
        let c = (c + dc).rem_euclid(self.cols as isize) as usize;
        r * self.cols + c
    }

    /// `n_tokens^d`, saturating in u128.
    pub fn state_space_size(&self, n_tokens: usize) -> u128 {
        (0..self.n_sites()).fold(1u128, |acc, _| acc.saturating_mul(n_tokens as u128))
    }

    pub fn check_state(&self, x: &LatticeState) -> Result<()> {
        if x.rows() != self.rows || x.cols() != self.cols {
            return Err(Error::Shape(format!(
                "state is {}x{}, expected {}x{}",
                x.rows(),
                x.cols(),
                self.rows,
                self.cols
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        for idx in 0..81 {
            let x = LatticeState::from_index(2, 2, 3, idx).unwrap();
            assert_eq!(x.index(), idx);
        }
        assert!(LatticeState::from_index(2, 2, 3, 81).is_err());
    }

    #[test]
    fn rejects_out_of_range_tokens() {
        assert!(LatticeState::new(2, 2, 2, vec![0, 1, 2, 0]).is_err());
        assert!(LatticeState::new(2, 2, 2, vec![0, 1, 1]).is_err());
    }

    #[test]
    fn periodic_neighbors() {
        let g = Geometry::new(3, 4).unwrap();
        assert_eq!(g.neighbors(0), &[1, 3, 4, 8]);
        assert_eq!(g.shift(0, -1, -1), 11);
        assert_eq!(g.shift(5, 3, 4), 5);
    }
}
