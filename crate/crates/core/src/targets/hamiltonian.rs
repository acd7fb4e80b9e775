//! Lattice Hamiltonians with periodic nearest-neighbor bonds.
//!
//! Bonds are the `2d` pairs `(i, right(i))` and `(i, down(i))`, so on a 2-wide
//! axis the same two sites share two bonds. Local energy differences visit the
//! four neighbor slots of the changed site, which matches that bond count on
//! every lattice size.

use serde::{Deserialize, Serialize};

use super::lattice::{spin_of, Geometry, LatticeState};
use crate::{Error, Result};

/// `H(x) = -J sum_<ij> s_i s_j + mu sum_i s_i` with spins `s = +-1`.
pub fn ising_hamiltonian(x: &LatticeState, coupling: f64, field: f64) -> Result<f64> {
    if x.n_tokens() != 2 {
        return Err(Error::Geometry(format!(
            "Ising needs binary tokens, got {}",
            x.n_tokens()
        )));
    }
    let g = Geometry::new(x.rows(), x.cols())?;
    Ok(ising_energy(&g, x, coupling, field))
}

/// `H(x) = -J sum_<ij> 1[x_i = x_j]`, the q-state Potts convention of the DISCS
/// benchmark suite.
pub fn potts_hamiltonian(x: &LatticeState, coupling: f64, q: usize) -> Result<f64> {
    if q < 2 || x.n_tokens() != q {
        return Err(Error::Geometry(format!(
            "Potts with q={q} on a state with {} tokens",
            x.n_tokens()
        )));
    }
    let g = Geometry::new(x.rows(), x.cols())?;
    Ok(potts_energy(&g, x, coupling))
}

pub(crate) fn ising_energy(g: &Geometry, x: &LatticeState, coupling: f64, field: f64) -> f64 {
    let mut bonds = 0.0;
    let mut mag = 0.0;
    for i in 0..g.n_sites() {
        let s = x.spin(i);
        bonds += s * (x.spin(g.right(i)) + x.spin(g.down(i)));
        mag += s;
    }
    -coupling * bonds + field * mag
}

pub(crate) fn potts_energy(g: &Geometry, x: &LatticeState, coupling: f64) -> f64 {
    let mut same = 0usize;
    for i in 0..g.n_sites() {
        let t = x.token(i);
        same += (t == x.token(g.right(i))) as usize + (t == x.token(g.down(i))) as usize;
    }
    -coupling * same as f64
}

/// The static energy `H` that an inverse-temperature schedule anneals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Model {
    Ising { coupling: f64, field: f64 },
    Potts { coupling: f64, q: usize },
    /// Arbitrary energies indexed by state index; tiny state spaces only.
    Tabular { energies: Vec<f64> },
}

impl Model {
    pub fn n_tokens(&self) -> Option<usize> {
        match self {
            Model::Ising { .. } => Some(2),
            Model::Potts { q, .. } => Some(*q),
            Model::Tabular { .. } => None,
        }
    }

    pub fn energy(&self, g: &Geometry, x: &LatticeState) -> f64 {
        match self {
            Model::Ising { coupling, field } => ising_energy(g, x, *coupling, *field),
            Model::Potts { coupling, .. } => potts_energy(g, x, *coupling),
            Model::Tabular { energies } => energies[x.index()],
        }
    }

    /// `H(Swap(x, site, token)) - H(x)` from the bonds touching `site`.
    #[inline]
    pub fn energy_delta(&self, g: &Geometry, x: &LatticeState, site: usize, token: usize) -> f64 {
        let current = x.token(site);
        if token == current {
            return 0.0;
        }
        match self {
            Model::Ising { coupling, field } => {
                let ds = spin_of(token) - spin_of(current);
                let mut nbr = 0.0;
                for &n in g.neighbors(site) {
                    if n != site {
                        nbr += x.spin(n);
                    }
                }
                -coupling * ds * nbr + field * ds
            }
            Model::Potts { coupling, .. } => {
                let mut diff = 0isize;
                for &n in g.neighbors(site) {
                    if n != site {
                        let t = x.token(n);
                        diff += (t == token) as isize - (t == current) as isize;
                    }
                }
                -coupling * diff as f64
            }
            Model::Tabular { energies } => {
                let stride = x.n_tokens().pow(site as u32);
                let idx = x.index();
                let idy = idx + token * stride - current * stride;
                energies[idy] - energies[idx]
            }
        }
    }
}
