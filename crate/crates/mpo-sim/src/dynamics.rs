//! Reduced open-system dynamics: Lindblad master-equation propagation with
//! trace, positivity, and truncation-leak monitoring.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::fock::{self, ModeLayout};
use crate::linalg;
use crate::model::{self, ChannelSet, ModelError, ModelParams};
use crate::sparse::OperatorMatrix;
use crate::state::QuantumState;

/// Density-matrix propagation is capped at this dimension (memory D^2);
/// larger systems go through the trajectory ensemble instead.
pub const DENSITY_DIM_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("state dimension {state} does not match generator dimension {generator}")]
    DimensionMismatch { state: usize, generator: usize },
    #[error("dimension {dim} exceeds the density-matrix cap {DENSITY_DIM_CAP}; use the trajectory ensemble")]
    DimensionTooLarge { dim: usize },
    #[error("step size must be positive (got {dt})")]
    NonPositiveDt { dt: f64 },
    #[error("time grid must be non-empty, non-negative and strictly increasing")]
    BadTimeGrid,
    #[error("truncation-edge population {leak} exceeds leak_tol {tol} at t = {t}; the cutoffs are too small for this run")]
    LeakExceeded { t: f64, leak: f64, tol: f64 },
    #[error("|Tr rho - 1| = {err} exceeds trace_tol {tol} at t = {t}; reduce dt")]
    TraceDrift { t: f64, err: f64, tol: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The Lindblad generator in the predual (Schrodinger) picture, with cached
/// channel Gram operators R_k† R_k. Immutable once built.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    hamiltonian: OperatorMatrix,
    channels: Vec<OperatorMatrix>,
    grams: Vec<OperatorMatrix>,
    layout: ModeLayout,
    /// Present when a coherent pump drive makes the generator time-dependent.
    drive: Option<(ModelParams, ChannelSet)>,
}

impl Liouvillian {
    /// Build from explicit operators; channels with no entries are dropped.
    pub fn new(
        hamiltonian: OperatorMatrix,
        channels: Vec<OperatorMatrix>,
        layout: ModeLayout,
    ) -> Self {
        let channels: Vec<OperatorMatrix> =
            channels.into_iter().filter(|c| c.nnz() > 0).collect();
        let grams = channels
            .iter()
            .map(|r| r.adjoint().matmul(r).expect("same layout"))
            .collect();
        Self { hamiltonian, channels, grams, layout, drive: None }
    }

    /// Build from model parameters; wires up the drive shift when the pump
    /// drive is on.
    pub fn from_model(params: &ModelParams, layout: &ModeLayout) -> Result<Self, ModelError> {
        let h = model::hamiltonian(params, layout)?;
        let channels = model::flatten_channels(params, layout)?;
        // Surface an undefined drive amplitude at build time.
        model::drive_shift(params, &channels, 0.0)?;
        let mut liou = Self::new(h, channels.ops().to_vec(), layout.clone());
        if params.drive.lambda() != Complex64::ZERO {
            liou.drive = Some((params.clone(), channels));
        }
        Ok(liou)
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn layout(&self) -> &ModeLayout {
        &self.layout
    }

    pub fn channels(&self) -> &[OperatorMatrix] {
        &self.channels
    }

    /// Hamiltonian and channel list at time `t` (drive-shifted if applicable).
    fn operators_at(&self, t: f64) -> (OperatorMatrix, Vec<(OperatorMatrix, OperatorMatrix)>) {
        match &self.drive {
            None => (
                self.hamiltonian.clone(),
                self.channels.iter().cloned().zip(self.grams.iter().cloned()).collect(),
            ),
            Some((params, full_channels)) => {
                let shift = model::drive_shift(params, full_channels, t)
                    .expect("drive validated at build time");
                let h_t = self.hamiltonian.add(&shift.h_corr).expect("same layout");
                let ops = (0..full_channels.len())
                    .filter_map(|k| {
                        let l = shift.shifted_channel(full_channels, k);
                        (l.nnz() > 0).then(|| {
                            let gram = l.adjoint().matmul(&l).expect("same layout");
                            (l, gram)
                        })
                    })
                    .collect();
                (h_t, ops)
            }
        }
    }

    /// d rho = -i[H(t), rho] + sum_k (R_k rho R_k† - {R_k†R_k, rho}/2).
    ///
    /// `rho` must be Hermitian; the implementation uses (A rho)† = rho A† to
    /// halve the work.
    pub fn apply(&self, rho: &DMatrix<Complex64>, t: f64) -> DMatrix<Complex64> {
        let (h_t, channel_ops) = self.operators_at(t);
        let h_rho = h_t.mul_dense(rho);
        // -i[H, rho] = -i (H rho - (H rho)†)
        let mut drho = (&h_rho - h_rho.adjoint()) * Complex64::new(0.0, -1.0);
        let half = Complex64::new(0.5, 0.0);
        for (r, gram) in &channel_ops {
            let x = r.mul_dense(rho);
            drho += r.mul_dense_adjoint_from_right(&x);
            let g_rho = gram.mul_dense(rho);
            drho -= (&g_rho + g_rho.adjoint()) * half;
        }
        drho
    }

    /// Checked entry point matching the operation contract.
    pub fn apply_to_state(
        &self,
        rho: &QuantumState,
        t: f64,
    ) -> Result<DMatrix<Complex64>, DynamicsError> {
        if rho.dim() != self.dim() {
            return Err(DynamicsError::DimensionMismatch {
                state: rho.dim(),
                generator: self.dim(),
            });
        }
        Ok(self.apply(&rho.to_density(), t))
    }
}

#[derive(Debug, Clone)]
pub struct PropagateOptions {
    pub dt: f64,
    pub leak_tol: f64,
    pub trace_tol: f64,
    /// Keep full density-matrix snapshots (memory D^2 per grid point).
    pub store_states: bool,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        Self { dt: 1e-3, leak_tol: 1e-6, trace_tol: 1e-6, store_states: false }
    }
}

/// Snapshots and monitors from a master-equation run. All arrays share the
/// length of `times`.
#[derive(Debug, Clone)]
pub struct PropagationResult {
    pub times: Vec<f64>,
    /// |Tr rho - 1| per snapshot.
    pub trace_err: Vec<f64>,
    /// Smallest-eigenvalue estimate per snapshot (negative means positivity loss).
    pub pos_err: Vec<f64>,
    /// Population on truncation-edge shells per snapshot.
    pub edge_leak: Vec<f64>,
    /// expectations[i][j] = Tr(obs_i rho(t_j)).
    pub expectations: Vec<Vec<Complex64>>,
    pub states: Vec<DMatrix<Complex64>>,
    pub final_state: DMatrix<Complex64>,
}

/// Smallest index set containing `seed` that is invariant under every
/// operator: i joins whenever some op has an entry (i, k) with k already in.
/// With annihilation-only channels this confines the dynamics to the few
/// excitation shells below the initial one.
pub fn reachable_support(
    dim: usize,
    ops: &[&OperatorMatrix],
    seed: impl IntoIterator<Item = usize>,
) -> Vec<usize> {
    let mut hit = vec![false; dim];
    for i in seed {
        hit[i] = true;
    }
    loop {
        let mut grew = false;
        for op in ops {
            for (r, c, _) in op.entries() {
                if hit[c] && !hit[r] {
                    hit[r] = true;
                    grew = true;
                }
            }
        }
        if !grew {
            break;
        }
    }
    (0..dim).filter(|&i| hit[i]).collect()
}

/// Fixed-step RK4 integration of the master equation, with snapshots (and
/// observable expectations) at the requested times. Trace and edge-leak are
/// guarded every snapshot; positivity is estimated per snapshot.
///
/// Before stepping, the generator is restricted to the support reachable from
/// the initial state (exact, see [`reachable_support`]); indices outside it
/// carry no amplitude at any time, so the dense work shrinks accordingly.
/// Time-dependent (driven) generators skip the restriction.
pub fn propagate(
    liou: &Liouvillian,
    rho0: &QuantumState,
    t_grid: &[f64],
    observables: &[OperatorMatrix],
    opts: &PropagateOptions,
) -> Result<PropagationResult, DynamicsError> {
    if rho0.dim() != liou.dim() {
        return Err(DynamicsError::DimensionMismatch { state: rho0.dim(), generator: liou.dim() });
    }
    if liou.dim() > DENSITY_DIM_CAP {
        return Err(DynamicsError::DimensionTooLarge { dim: liou.dim() });
    }
    if opts.dt <= 0.0 {
        return Err(DynamicsError::NonPositiveDt { dt: opts.dt });
    }
    if t_grid.is_empty()
        || t_grid[0] < 0.0
        || t_grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(DynamicsError::BadTimeGrid);
    }

    let full_dim = liou.dim();
    let full_rho = rho0.to_density();
    let keep: Vec<usize> = if liou.drive.is_some() {
        (0..full_dim).collect()
    } else {
        let seed =
            (0..full_dim).filter(|&i| full_rho.row(i).iter().any(|v| v.norm_sqr() > 0.0));
        let mut ops: Vec<&OperatorMatrix> = vec![&liou.hamiltonian];
        ops.extend(liou.channels.iter());
        ops.extend(liou.grams.iter());
        reachable_support(full_dim, &ops, seed)
    };
    let restricted = keep.len() < full_dim;
    let full_edge: Vec<usize> = fock::edge_indices(liou.layout()).collect();
    let (work, obs_work, edge, mut rho) = if restricted {
        let h_r = liou.hamiltonian.restrict(&keep);
        let ch_r = liou.channels.iter().map(|c| c.restrict(&keep)).collect();
        let mut pos = vec![usize::MAX; full_dim];
        for (p, &i) in keep.iter().enumerate() {
            pos[i] = p;
        }
        (
            Liouvillian::new(h_r, ch_r, liou.layout.clone()),
            observables.iter().map(|o| o.restrict(&keep)).collect::<Vec<_>>(),
            full_edge.iter().filter(|&&i| pos[i] != usize::MAX).map(|&i| pos[i]).collect(),
            DMatrix::from_fn(keep.len(), keep.len(), |r, c| full_rho[(keep[r], keep[c])]),
        )
    } else {
        (liou.clone(), observables.to_vec(), full_edge, full_rho)
    };
    let embed = |r: &DMatrix<Complex64>| -> DMatrix<Complex64> {
        if !restricted {
            return r.clone();
        }
        let mut full = DMatrix::zeros(full_dim, full_dim);
        for (j, &kj) in keep.iter().enumerate() {
            for (i, &ki) in keep.iter().enumerate() {
                full[(ki, kj)] = r[(i, j)];
            }
        }
        full
    };
    let mut t = 0.0;
    let mut result = PropagationResult {
        times: t_grid.to_vec(),
        trace_err: Vec::new(),
        pos_err: Vec::new(),
        edge_leak: Vec::new(),
        expectations: vec![Vec::new(); observables.len()],
        states: Vec::new(),
        final_state: DMatrix::zeros(0, 0),
    };

    let sixth = Complex64::new(opts.dt / 6.0, 0.0);
    let snapshot = |rho: &DMatrix<Complex64>,
                        t: f64,
                        result: &mut PropagationResult|
     -> Result<(), DynamicsError> {
        let trace_err = (rho.diagonal().sum().re - 1.0).abs();
        if trace_err > opts.trace_tol {
            return Err(DynamicsError::TraceDrift { t, err: trace_err, tol: opts.trace_tol });
        }
        let leak: f64 = edge.iter().map(|&i| rho[(i, i)].re).sum();
        if leak > opts.leak_tol {
            return Err(DynamicsError::LeakExceeded { t, leak, tol: opts.leak_tol });
        }
        result.trace_err.push(trace_err);
        result.edge_leak.push(leak);
        // Off-support eigenvalues are exactly zero, so clamp when restricted.
        let min_eig = linalg::min_eigenvalue(rho);
        result.pos_err.push(if restricted { min_eig.min(0.0) } else { min_eig });
        let st = QuantumState::Mixed(rho.clone());
        for (i, obs) in obs_work.iter().enumerate() {
            let val = st.expectation(obs).map_err(|_| DynamicsError::DimensionMismatch {
                state: rho.nrows(),
                generator: obs.dim(),
            })?;
            result.expectations[i].push(val);
        }
        if opts.store_states {
            result.states.push(embed(rho));
        }
        Ok(())
    };

    for &t_target in t_grid {
        while t < t_target - 1e-12 {
            let h = opts.dt.min(t_target - t);
            let hc = Complex64::new(h, 0.0);
            let half = hc * Complex64::new(0.5, 0.0);
            let k1 = work.apply(&rho, t);
            let k2 = work.apply(&(&rho + &k1 * half), t + h / 2.0);
            let k3 = work.apply(&(&rho + &k2 * half), t + h / 2.0);
            let k4 = work.apply(&(&rho + &k3 * hc), t + h);
            let weight = if (h - opts.dt).abs() < 1e-15 {
                sixth
            } else {
                Complex64::new(h / 6.0, 0.0)
            };
            rho += (k1 + k2 * Complex64::new(2.0, 0.0) + k3 * Complex64::new(2.0, 0.0) + k4)
                * weight;
            t += h;
        }
        t = t_target;
        snapshot(&rho, t, &mut result)?;
    }
    result.final_state = embed(&rho);
    Ok(result)
}

/// Tr(X rho) for mixed states, <psi|X psi> for pure states.
pub fn expectation(
    state: &QuantumState,
    op: &OperatorMatrix,
) -> Result<Complex64, crate::state::StateError> {
    state.expectation(op)
}
