//! Truncated Fock-space mode bookkeeping and ladder operators.
//!
//! The total space is the tensor product of `n` subharmonic (a-type) modes
//! followed by `m` pump (b-type) modes, each truncated to `d_k` occupation
//! levels. Basis indexing is row-major over the mode list, subharmonic modes
//! first, so index 0 is the vacuum.
//!
//! Truncation convention: the creation operator annihilates the top occupation
//! shell. Identities that hold on the untruncated space are checked behind
//! [`interior_projector`], which excludes the affected edge shells.

use num_complex::Complex64;

use crate::sparse::OperatorMatrix;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FockError {
    #[error("at least one subharmonic and one pump mode are required (got n={n}, m={m})")]
    NoModes { n: usize, m: usize },
    #[error("mode {mode} has cutoff {cutoff}; a mode must hold at least occupations 0 and 1")]
    CutoffTooSmall { mode: usize, cutoff: usize },
    #[error("mode index {mode} out of range (layout has {count} modes)")]
    ModeOutOfRange { mode: usize, count: usize },
    #[error("occupation {occ} on mode {mode} exceeds cutoff {cutoff}")]
    OccupationOutOfRange { mode: usize, occ: usize, cutoff: usize },
    #[error("occupation tuple has {got} entries, layout has {expected} modes")]
    WrongOccupationCount { got: usize, expected: usize },
    #[error("margin {margin} leaves no interior states (smallest cutoff {min_cutoff})")]
    MarginTooLarge { margin: usize, min_cutoff: usize },
}

/// Mode bookkeeping: counts, per-mode cutoffs, and the basis-index bijection.
///
/// Modes `0..n` are subharmonic, `n..n+m` are pump.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeLayout {
    n: usize,
    m: usize,
    trunc: Vec<usize>,
    strides: Vec<usize>,
    dim: usize,
}

impl ModeLayout {
    pub fn new(n: usize, m: usize, trunc: &[usize]) -> Result<Self, FockError> {
        if n < 1 || m < 1 {
            return Err(FockError::NoModes { n, m });
        }
        if trunc.len() != n + m {
            return Err(FockError::WrongOccupationCount { got: trunc.len(), expected: n + m });
        }
        if let Some((mode, &cutoff)) = trunc.iter().enumerate().find(|&(_, &d)| d < 2) {
            return Err(FockError::CutoffTooSmall { mode, cutoff });
        }
        let mut strides = vec![1usize; n + m];
        for k in (0..n + m - 1).rev() {
            strides[k] = strides[k + 1] * trunc[k + 1];
        }
        let dim = strides[0] * trunc[0];
        Ok(Self { n, m, trunc: trunc.to_vec(), strides, dim })
    }

    pub fn n_sub(&self) -> usize {
        self.n
    }

    pub fn n_pump(&self) -> usize {
        self.m
    }

    pub fn n_modes(&self) -> usize {
        self.n + self.m
    }

    pub fn cutoff(&self, mode: usize) -> usize {
        self.trunc[mode]
    }

    pub fn cutoffs(&self) -> &[usize] {
        &self.trunc
    }

    /// Total dimension D = prod d_k.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_pump_mode(&self, mode: usize) -> bool {
        mode >= self.n
    }

    fn check_mode(&self, mode: usize) -> Result<(), FockError> {
        if mode < self.n_modes() {
            Ok(())
        } else {
            Err(FockError::ModeOutOfRange { mode, count: self.n_modes() })
        }
    }

    /// Row-major basis index of an occupation tuple.
    pub fn basis_index(&self, occ: &[usize]) -> Result<usize, FockError> {
        if occ.len() != self.n_modes() {
            return Err(FockError::WrongOccupationCount { got: occ.len(), expected: self.n_modes() });
        }
        let mut idx = 0;
        for (mode, (&o, (&d, &s))) in
            occ.iter().zip(self.trunc.iter().zip(&self.strides)).enumerate()
        {
            if o >= d {
                return Err(FockError::OccupationOutOfRange { mode, occ: o, cutoff: d });
            }
            idx += o * s;
        }
        Ok(idx)
    }

    /// Occupation tuple of a basis index.
    pub fn occupations(&self, index: usize) -> Vec<usize> {
        assert!(index < self.dim);
        self.strides
            .iter()
            .zip(&self.trunc)
            .map(|(&s, &d)| (index / s) % d)
            .collect()
    }

    /// Occupation of one mode at a basis index, without allocating.
    pub fn occupation_of(&self, index: usize, mode: usize) -> usize {
        (index / self.strides[mode]) % self.trunc[mode]
    }
}

/// Annihilation operator of `mode` (a-type for `mode < n`, b-type otherwise),
/// acting as the identity on all other tensor factors.
pub fn annihilation(layout: &ModeLayout, mode: usize) -> Result<OperatorMatrix, FockError> {
    layout.check_mode(mode)?;
    let stride = layout.strides[mode];
    let mut triplets = Vec::with_capacity(layout.dim());
    for col in 0..layout.dim() {
        let o = layout.occupation_of(col, mode);
        if o > 0 {
            triplets.push((col - stride, col, Complex64::new((o as f64).sqrt(), 0.0)));
        }
    }
    Ok(OperatorMatrix::from_triplets(layout.dim(), triplets))
}

/// Creation operator of `mode`; the top occupation maps to zero (hard cutoff).
pub fn creation(layout: &ModeLayout, mode: usize) -> Result<OperatorMatrix, FockError> {
    Ok(annihilation(layout, mode)?.adjoint())
}

/// Number operator of `mode`: diagonal with the mode occupation.
pub fn number(layout: &ModeLayout, mode: usize) -> Result<OperatorMatrix, FockError> {
    layout.check_mode(mode)?;
    Ok(OperatorMatrix::from_triplets(
        layout.dim(),
        (0..layout.dim()).filter_map(|i| {
            let o = layout.occupation_of(i, mode);
            (o > 0).then(|| (i, i, Complex64::new(o as f64, 0.0)))
        }),
    ))
}

/// Diagonal 0/1 projector onto basis states with every occupation at least
/// `margin` below its cutoff.
pub fn interior_projector(layout: &ModeLayout, margin: usize) -> Result<OperatorMatrix, FockError> {
    let min_cutoff = *layout.trunc.iter().min().unwrap();
    if margin < 1 || margin >= min_cutoff {
        return Err(FockError::MarginTooLarge { margin, min_cutoff });
    }
    Ok(OperatorMatrix::from_triplets(
        layout.dim(),
        interior_indices(layout, margin).map(|i| (i, i, Complex64::ONE)),
    ))
}

/// Basis indices with every occupation at least `margin` below its cutoff.
pub fn interior_indices(layout: &ModeLayout, margin: usize) -> impl Iterator<Item = usize> + '_ {
    (0..layout.dim()).filter(move |&i| {
        (0..layout.n_modes()).all(|k| layout.occupation_of(i, k) + margin < layout.cutoff(k))
    })
}

/// Basis indices on the truncation edge: some occupation equals its cutoff - 1.
pub fn edge_indices(layout: &ModeLayout) -> impl Iterator<Item = usize> + '_ {
    (0..layout.dim()).filter(move |&i| {
        (0..layout.n_modes()).any(|k| layout.occupation_of(i, k) + 1 == layout.cutoff(k))
    })
}
