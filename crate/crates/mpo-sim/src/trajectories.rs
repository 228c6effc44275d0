//! Stochastic measurement-record sampling: quantum-jump (photocounting) and
//! diffusive (homodyne) unravelings of the reduced dynamics, ensemble
//! statistics, and the Monte-Carlo characteristic-functional estimate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dynamics::Liouvillian;
use crate::fock::{self, ModeLayout};
use crate::model::{self, ChannelSet, MeasurementScheme, ModelError, ModelParams};
use crate::rng::trajectory_rng;
use crate::sparse::OperatorMatrix;
use crate::state::QuantumState;
use crate::{dynamics, par};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrajectoryError {
    #[error("state dimension {state} does not match model dimension {model}")]
    DimensionMismatch { state: usize, model: usize },
    #[error("step size must be positive (got {dt})")]
    NonPositiveDt { dt: f64 },
    #[error("time grid must be non-empty, non-negative and strictly increasing")]
    BadTimeGrid,
    #[error("jump probability {p} on channel {channel} at t = {t} exceeds 0.1; reduce dt")]
    StepTooCoarse { t: f64, channel: usize, p: f64 },
    #[error("truncation-edge population {leak} exceeds leak_tol {tol} at t = {t}")]
    LeakExceeded { t: f64, leak: f64, tol: f64 },
    #[error("ensemble needs at least one trajectory")]
    EmptyEnsemble,
    #[error("trajectory {index} failed: {message}")]
    TrajectoryFailed { index: usize, message: String },
    #[error("homodyne channel {channel} carries a drive offset; not supported")]
    DrivenHomodyneChannel { channel: usize },
    #[error("kappa has {got} entries but the records monitor {expected} channels")]
    KappaLength { expected: usize, got: usize },
    #[error("records disagree on monitored channels or horizons")]
    InconsistentRecords,
    #[error("partition must be increasing and end at or before t_final")]
    BadPartition,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] dynamics::DynamicsError),
}

/// One sampled measurement record.
///
/// `counting[i]` holds the jump times on the i-th counted channel (flat index
/// in `counting_channels[i]`), strictly increasing. `homodyne[i]` holds one
/// `(t, dY)` entry per step for the i-th monitored quadrature.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeasurementRecord {
    pub seed: u64,
    pub dt: f64,
    pub t_final: f64,
    pub counting_channels: Vec<usize>,
    pub counting: Vec<Vec<f64>>,
    pub homodyne_channels: Vec<usize>,
    pub homodyne: Vec<Vec<(f64, f64)>>,
}

impl MeasurementRecord {
    fn new(seed: u64, dt: f64, t_final: f64, counted: &[usize], homodyne: &[usize]) -> Self {
        Self {
            seed,
            dt,
            t_final,
            counting_channels: counted.to_vec(),
            counting: vec![Vec::new(); counted.len()],
            homodyne_channels: homodyne.to_vec(),
            homodyne: vec![Vec::new(); homodyne.len()],
        }
    }

    pub fn total_jumps(&self) -> usize {
        self.counting.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnravelingMode {
    /// Photocounting on the counted channels; everything else folded into the
    /// no-jump decay (pure-state path).
    Jump,
    /// Diffusive monitoring of the homodyne channels, jumps on the rest
    /// (pure-state path).
    Homodyne,
    /// Stochastic master equation in density form; non-homodyne channels
    /// dissipate unobserved, so counting records stay empty. Cross-validation
    /// path for small dimensions.
    HomodyneSme,
}

/// Immutable operator bundle shared by all trajectories of an ensemble.
#[derive(Debug, Clone)]
pub struct TrajectoryModel {
    hamiltonian: OperatorMatrix,
    /// K = -iH - (1/2) sum_k R_k† R_k (static part).
    k_op: OperatorMatrix,
    channel_ops: Vec<OperatorMatrix>,
    /// Adjoints R_k†, cached for the drive-corrected drift.
    channel_adjoints: Vec<OperatorMatrix>,
    scheme: MeasurementScheme,
    layout: ModeLayout,
    /// Needed to evaluate the coherent-pump offsets f_k(t).
    drive: Option<(ModelParams, ChannelSet)>,
    edge: Vec<usize>,
}

impl TrajectoryModel {
    pub fn from_model(
        params: &ModelParams,
        layout: &ModeLayout,
        scheme: MeasurementScheme,
    ) -> Result<Self, ModelError> {
        let hamiltonian = model::hamiltonian(params, layout)?;
        let channels = model::flatten_channels(params, layout)?;
        model::drive_shift(params, &channels, 0.0)?;
        let k_op = model::effective_k(params, layout)?;
        let drive = (params.drive.lambda() != Complex64::ZERO)
            .then(|| (params.clone(), channels.clone()));
        Ok(Self {
            hamiltonian,
            k_op,
            channel_adjoints: channels.ops().iter().map(|r| r.adjoint()).collect(),
            channel_ops: channels.ops().to_vec(),
            scheme,
            layout: layout.clone(),
            drive,
            edge: fock::edge_indices(layout).collect(),
        })
    }

    /// Assemble from explicit operators (no drive); mainly for small reference
    /// systems and tests.
    pub fn from_operators(
        hamiltonian: OperatorMatrix,
        channel_ops: Vec<OperatorMatrix>,
        scheme: MeasurementScheme,
        layout: ModeLayout,
    ) -> Self {
        let mut k_op = hamiltonian.scale(Complex64::new(0.0, -1.0));
        for r in &channel_ops {
            let gram = r.adjoint().matmul(r).expect("same layout");
            k_op = k_op.sub(&gram.scale(Complex64::new(0.5, 0.0))).expect("same layout");
        }
        Self {
            hamiltonian,
            k_op,
            channel_adjoints: channel_ops.iter().map(|r| r.adjoint()).collect(),
            channel_ops,
            scheme,
            layout: layout.clone(),
            drive: None,
            edge: fock::edge_indices(&layout).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.k_op.dim()
    }

    pub fn scheme(&self) -> &MeasurementScheme {
        &self.scheme
    }

    fn drive_offsets(&self, t: f64) -> Option<Vec<Complex64>> {
        self.drive.as_ref().map(|(params, channels)| {
            model::drive_shift(params, channels, t)
                .expect("drive validated at construction")
                .offsets
        })
    }

    /// Exact support restriction for undriven models: starting amplitudes can
    /// only spread along operator images (see [`dynamics::reachable_support`]),
    /// so ensembles run on the reachable sub-block. Returns `None` when the
    /// drive is on or nothing shrinks.
    fn restricted(
        &self,
        psi0: &QuantumState,
        observables: &[OperatorMatrix],
    ) -> Option<(TrajectoryModel, QuantumState, Vec<OperatorMatrix>)> {
        if self.drive.is_some() {
            return None;
        }
        let dim = self.dim();
        let seed: Vec<usize> = match psi0 {
            QuantumState::Pure(v) => {
                (0..dim).filter(|&i| v[i].norm_sqr() > 0.0).collect()
            }
            QuantumState::Mixed(m) => (0..dim)
                .filter(|&i| m.row(i).iter().any(|c| c.norm_sqr() > 0.0))
                .collect(),
        };
        let mut ops: Vec<&OperatorMatrix> = vec![&self.hamiltonian, &self.k_op];
        ops.extend(self.channel_ops.iter());
        let keep = dynamics::reachable_support(dim, &ops, seed);
        if keep.len() >= dim {
            return None;
        }
        let mut pos = vec![usize::MAX; dim];
        for (p, &i) in keep.iter().enumerate() {
            pos[i] = p;
        }
        let work = TrajectoryModel {
            hamiltonian: self.hamiltonian.restrict(&keep),
            k_op: self.k_op.restrict(&keep),
            channel_ops: self.channel_ops.iter().map(|c| c.restrict(&keep)).collect(),
            channel_adjoints: self
                .channel_adjoints
                .iter()
                .map(|c| c.restrict(&keep))
                .collect(),
            scheme: self.scheme.clone(),
            layout: self.layout.clone(),
            drive: None,
            edge: self
                .edge
                .iter()
                .filter(|&&i| pos[i] != usize::MAX)
                .map(|&i| pos[i])
                .collect(),
        };
        let psi = match psi0 {
            QuantumState::Pure(v) => {
                QuantumState::Pure(DVector::from_iterator(keep.len(), keep.iter().map(|&i| v[i])))
            }
            QuantumState::Mixed(m) => QuantumState::Mixed(DMatrix::from_fn(
                keep.len(),
                keep.len(),
                |r, c| m[(keep[r], keep[c])],
            )),
        };
        let obs = observables.iter().map(|o| o.restrict(&keep)).collect();
        Some((work, psi, obs))
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub dt: f64,
    pub leak_tol: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { dt: 1e-2, leak_tol: 1e-4 }
    }
}

/// Output of a single trajectory: final state, its record, and observable
/// expectations on the requested grid (`observables[i][j]` = obs i at grid j).
#[derive(Debug, Clone)]
pub struct TrajectoryOutput {
    pub final_state: QuantumState,
    pub record: MeasurementRecord,
    pub observables: Vec<Vec<f64>>,
}

fn check_grid(t_grid: &[f64], dt: f64) -> Result<(), TrajectoryError> {
    if dt <= 0.0 {
        return Err(TrajectoryError::NonPositiveDt { dt });
    }
    if t_grid.is_empty() || t_grid[0] < 0.0 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(TrajectoryError::BadTimeGrid);
    }
    Ok(())
}

/// Pure-state stepper shared by the jump and (pure-path) homodyne modes.
fn run_pure(
    model: &TrajectoryModel,
    psi0: &DVector<Complex64>,
    t_grid: &[f64],
    observables: &[OperatorMatrix],
    mode: UnravelingMode,
    opts: &RunOptions,
    seed_label: u64,
    rng: &mut ChaCha8Rng,
) -> Result<TrajectoryOutput, TrajectoryError> {
    check_grid(t_grid, opts.dt)?;
    if psi0.len() != model.dim() {
        return Err(TrajectoryError::DimensionMismatch { state: psi0.len(), model: model.dim() });
    }
    let dt = opts.dt;
    let t_final = *t_grid.last().unwrap();
    let n_steps = (t_final / dt).round() as usize;
    let grid_steps: Vec<usize> = t_grid.iter().map(|&t| (t / dt).round() as usize).collect();

    // Diffusively monitored channels only exist in homodyne mode; everything
    // else jumps (counted channels fill the record, the rest is marginalized
    // by discarding).
    let diffusive: Vec<(usize, f64, f64)> = match mode {
        UnravelingMode::Homodyne => model.scheme.homodyne.clone(),
        _ => Vec::new(),
    };
    let jump_set: Vec<usize> = (0..model.channel_ops.len())
        .filter(|k| {
            model.channel_ops[*k].nnz() > 0 && !diffusive.iter().any(|&(ch, _, _)| ch == *k)
        })
        .collect();
    let counted_slot = |ch: usize| model.scheme.counted.iter().position(|&c| c == ch);

    let hom_channels: Vec<usize> = diffusive.iter().map(|&(ch, _, _)| ch).collect();
    let mut record =
        MeasurementRecord::new(seed_label, dt, t_final, &model.scheme.counted, &hom_channels);
    let mut obs_vals = vec![Vec::with_capacity(t_grid.len()); observables.len()];

    let mut psi = psi0.clone();
    psi /= Complex64::new(psi.norm(), 0.0);
    let mut grid_ptr = 0usize;
    let sqrt_dt = dt.sqrt();

    for step in 0..=n_steps {
        while grid_ptr < grid_steps.len() && grid_steps[grid_ptr] == step {
            let st = QuantumState::Pure(psi.clone());
            for (i, op) in observables.iter().enumerate() {
                obs_vals[i].push(
                    st.expectation(op)
                        .map_err(|_| TrajectoryError::DimensionMismatch {
                            state: psi.len(),
                            model: op.dim(),
                        })?
                        .re,
                );
            }
            grid_ptr += 1;
        }
        if step == n_steps {
            break;
        }
        let t = step as f64 * dt;
        let offsets = model.drive_offsets(t);
        let offset = |k: usize| offsets.as_ref().map_or(Complex64::ZERO, |o| o[k]);
        for &(ch, _, _) in &diffusive {
            if offset(ch) != Complex64::ZERO {
                return Err(TrajectoryError::DrivenHomodyneChannel { channel: ch });
            }
        }

        // Homodyne increments from the pre-step state (phase theta - w t).
        let mut diffusion: Option<DVector<Complex64>> = None;
        for (slot, &(ch, theta, w)) in diffusive.iter().enumerate() {
            let phase = Complex64::new(0.0, -(theta - w * t)).exp();
            let mut c_psi = model.channel_ops[ch].apply(&psi);
            c_psi *= phase;
            let m = 2.0 * psi.dotc(&c_psi).re;
            let dw: f64 = rng.sample::<f64, _>(StandardNormal) * sqrt_dt;
            let dy = m * dt + dw;
            record.homodyne[slot].push((t, dy));
            let acc = diffusion.get_or_insert_with(|| DVector::zeros(psi.len()));
            c_psi *= Complex64::new(dy, 0.0);
            *acc += c_psi;
        }

        // Jump lottery over every non-diffusive channel with shifted ops
        // L_k = R_k + f_k(t); only counted channels land in the record.
        let mut p_tot = 0.0;
        let mut probs = Vec::with_capacity(jump_set.len());
        for &k in &jump_set {
            let f = offset(k);
            let p = if f == Complex64::ZERO {
                model.channel_ops[k].apply_norm_sq(&psi) * dt
            } else {
                let mut v = model.channel_ops[k].apply(&psi);
                v += &psi * f;
                v.norm_squared() * dt
            };
            if p > 0.1 {
                return Err(TrajectoryError::StepTooCoarse { t, channel: k, p });
            }
            probs.push(p);
            p_tot += p;
        }

        let u: f64 = rng.gen();
        let mut jumped = false;
        if u < p_tot {
            let mut acc = 0.0;
            for (i, &k) in jump_set.iter().enumerate() {
                acc += probs[i];
                if u < acc {
                    let f = offset(k);
                    let mut v = model.channel_ops[k].apply(&psi);
                    if f != Complex64::ZERO {
                        v += &psi * f;
                    }
                    let norm = v.norm();
                    psi = v / Complex64::new(norm, 0.0);
                    if let Some(slot) = counted_slot(k) {
                        record.counting[slot].push(t + dt);
                    }
                    jumped = true;
                    break;
                }
            }
        }

        if !jumped {
            // Euler drift with the drive-corrected generator
            // K(t) = K - sum_k f_k R_k† - (1/2) sum_k |f_k|^2,
            // plus the diffusive back-action, then renormalize.
            let mut dpsi = model.k_op.apply(&psi);
            if let Some(offs) = &offsets {
                let mut f_sq = 0.0;
                for (k, &f) in offs.iter().enumerate() {
                    if f != Complex64::ZERO {
                        let rdag_psi = model.channel_adjoints[k].apply(&psi);
                        dpsi -= rdag_psi * f;
                        f_sq += f.norm_sqr();
                    }
                }
                dpsi -= psi.scale(0.5 * f_sq);
            }
            psi += dpsi * Complex64::new(dt, 0.0);
            if let Some(acc) = diffusion {
                psi += acc;
            }
            let norm = psi.norm();
            psi /= Complex64::new(norm, 0.0);
        }

        let leak: f64 = model.edge.iter().map(|&i| psi[i].norm_sqr()).sum();
        if leak > opts.leak_tol {
            return Err(TrajectoryError::LeakExceeded { t, leak, tol: opts.leak_tol });
        }
    }

    Ok(TrajectoryOutput {
        final_state: QuantumState::Pure(psi),
        record,
        observables: obs_vals,
    })
}

/// Diffusive stochastic master equation in density form: deterministic
/// Lindblad drift on every channel plus measurement back-action
/// H[c]rho = c rho + rho c† - Tr(c rho + rho c†) rho on the homodyne set.
fn run_sme(
    model: &TrajectoryModel,
    rho0: &DMatrix<Complex64>,
    t_grid: &[f64],
    observables: &[OperatorMatrix],
    opts: &RunOptions,
    seed_label: u64,
    rng: &mut ChaCha8Rng,
) -> Result<TrajectoryOutput, TrajectoryError> {
    check_grid(t_grid, opts.dt)?;
    if rho0.nrows() != model.dim() {
        return Err(TrajectoryError::DimensionMismatch {
            state: rho0.nrows(),
            model: model.dim(),
        });
    }
    let dt = opts.dt;
    let t_final = *t_grid.last().unwrap();
    let n_steps = (t_final / dt).round() as usize;
    let grid_steps: Vec<usize> = t_grid.iter().map(|&t| (t / dt).round() as usize).collect();
    let sqrt_dt = dt.sqrt();

    let liou = match &model.drive {
        Some((params, _)) => Liouvillian::from_model(params, &model.layout)?,
        None => Liouvillian::new(
            model.hamiltonian.clone(),
            model.channel_ops.clone(),
            model.layout.clone(),
        ),
    };

    let hom_channels: Vec<usize> = model.scheme.homodyne.iter().map(|&(ch, _, _)| ch).collect();
    let mut record = MeasurementRecord::new(seed_label, dt, t_final, &[], &hom_channels);
    let mut obs_vals = vec![Vec::with_capacity(t_grid.len()); observables.len()];

    let mut rho = rho0.clone();
    let mut grid_ptr = 0usize;
    for step in 0..=n_steps {
        while grid_ptr < grid_steps.len() && grid_steps[grid_ptr] == step {
            let st = QuantumState::Mixed(rho.clone());
            for (i, op) in observables.iter().enumerate() {
                obs_vals[i].push(
                    st.expectation(op)
                        .map_err(|_| TrajectoryError::DimensionMismatch {
                            state: rho.nrows(),
                            model: op.dim(),
                        })?
                        .re,
                );
            }
            grid_ptr += 1;
        }
        if step == n_steps {
            break;
        }
        let t = step as f64 * dt;
        let mut drho = liou.apply(&rho, t) * Complex64::new(dt, 0.0);
        for (slot, &(ch, theta, w)) in model.scheme.homodyne.iter().enumerate() {
            let phase = Complex64::new(0.0, -(theta - w * t)).exp();
            let c_rho = model.channel_ops[ch].mul_dense(&rho) * phase;
            let sym = &c_rho + c_rho.adjoint();
            let m = sym.diagonal().sum().re;
            let dw: f64 = rng.sample::<f64, _>(StandardNormal) * sqrt_dt;
            let dy = m * dt + dw;
            record.homodyne[slot].push((t, dy));
            drho += (sym - &rho * Complex64::new(m, 0.0)) * Complex64::new(dw, 0.0);
        }
        rho += drho;
        let tr = rho.diagonal().sum().re;
        rho /= Complex64::new(tr, 0.0);
        let leak: f64 = model.edge.iter().map(|&i| rho[(i, i)].re).sum();
        if leak > opts.leak_tol {
            return Err(TrajectoryError::LeakExceeded { t, leak, tol: opts.leak_tol });
        }
    }

    Ok(TrajectoryOutput {
        final_state: QuantumState::Mixed(rho),
        record,
        observables: obs_vals,
    })
}

/// Monte-Carlo wave function with photocounting on the counted channels.
pub fn jump_unraveling(
    model: &TrajectoryModel,
    psi0: &QuantumState,
    t_final: f64,
    opts: &RunOptions,
    seed: u64,
) -> Result<(QuantumState, MeasurementRecord), TrajectoryError> {
    let psi = pure_vector(model, psi0)?;
    let mut rng = trajectory_rng(seed, 0);
    let out = run_pure(
        model,
        &psi,
        &[t_final],
        &[],
        UnravelingMode::Jump,
        opts,
        seed,
        &mut rng,
    )?;
    Ok((out.final_state, out.record))
}

/// Diffusive homodyne unraveling with rotating local-oscillator phase.
pub fn homodyne_unraveling(
    model: &TrajectoryModel,
    psi0: &QuantumState,
    t_final: f64,
    opts: &RunOptions,
    seed: u64,
) -> Result<(QuantumState, MeasurementRecord), TrajectoryError> {
    let psi = pure_vector(model, psi0)?;
    let mut rng = trajectory_rng(seed, 0);
    let out = run_pure(
        model,
        &psi,
        &[t_final],
        &[],
        UnravelingMode::Homodyne,
        opts,
        seed,
        &mut rng,
    )?;
    Ok((out.final_state, out.record))
}

fn pure_vector(
    model: &TrajectoryModel,
    psi0: &QuantumState,
) -> Result<DVector<Complex64>, TrajectoryError> {
    if psi0.dim() != model.dim() {
        return Err(TrajectoryError::DimensionMismatch { state: psi0.dim(), model: model.dim() });
    }
    match psi0 {
        QuantumState::Pure(v) => Ok(v.clone()),
        QuantumState::Mixed(_) => Err(TrajectoryError::DimensionMismatch {
            state: psi0.dim(),
            model: model.dim(),
        }),
    }
}

/// Ensemble statistics. Standard errors are NaN when `n_traj < 2` (a single
/// trajectory has no spread estimate).
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub n_traj: usize,
    pub times: Vec<f64>,
    /// obs_mean[i][j]: ensemble mean of observable i at grid point j.
    pub obs_mean: Vec<Vec<f64>>,
    pub obs_se: Vec<Vec<f64>>,
    pub counting_channels: Vec<usize>,
    /// Mean counting rate per counted channel (total jumps / t_final).
    pub count_rate_mean: Vec<f64>,
    pub count_rate_se: Vec<f64>,
    pub homodyne_channels: Vec<usize>,
    /// Time-averaged dY/dt over the second half of the run, per channel.
    pub signal_mean: Vec<f64>,
    pub signal_se: Vec<f64>,
    /// Populated only when records are kept.
    pub records: Vec<MeasurementRecord>,
}

#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    pub run: RunOptions,
    /// Keep every per-trajectory record (memory: one dY per step per channel).
    pub keep_records: bool,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self { run: RunOptions::default(), keep_records: false }
    }
}

struct PerTraj {
    observables: Vec<Vec<f64>>,
    rates: Vec<f64>,
    signals: Vec<f64>,
    record: Option<MeasurementRecord>,
}

fn mean_se(samples: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = samples.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = samples.map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Run `n_traj` independent trajectories with per-trajectory streams derived
/// from `(seed, index)` and reduce them in index order, so the result does not
/// depend on scheduling.
#[allow(clippy::too_many_arguments)]
pub fn ensemble_average(
    model: &TrajectoryModel,
    psi0: &QuantumState,
    n_traj: usize,
    t_grid: &[f64],
    observables: &[OperatorMatrix],
    mode: UnravelingMode,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<EnsembleStats, TrajectoryError> {
    if n_traj == 0 {
        return Err(TrajectoryError::EmptyEnsemble);
    }
    check_grid(t_grid, opts.run.dt)?;
    let t_final = *t_grid.last().unwrap();

    let reduced = model.restricted(psi0, observables);
    let (model, psi0, observables): (&TrajectoryModel, &QuantumState, &[OperatorMatrix]) =
        match &reduced {
            Some((m, p, o)) => (m, p, o),
            None => (model, psi0, observables),
        };

    let results: Vec<Result<PerTraj, TrajectoryError>> = par::map_indexed(n_traj, |i| {
        let mut rng = trajectory_rng(seed, i as u64);
        let out = match mode {
            UnravelingMode::Jump | UnravelingMode::Homodyne => {
                let psi = pure_vector(model, psi0)?;
                run_pure(model, &psi, t_grid, observables, mode, &opts.run, seed, &mut rng)?
            }
            UnravelingMode::HomodyneSme => run_sme(
                model,
                &psi0.to_density(),
                t_grid,
                observables,
                &opts.run,
                seed,
                &mut rng,
            )?,
        };
        let rates = out
            .record
            .counting
            .iter()
            .map(|times| times.len() as f64 / t_final)
            .collect();
        // Steady-window signal estimate: average dY/dt over [t_final/2, t_final].
        let signals = out
            .record
            .homodyne
            .iter()
            .map(|series| {
                let window: Vec<f64> = series
                    .iter()
                    .filter(|(t, _)| *t >= t_final / 2.0)
                    .map(|(_, dy)| dy / out.record.dt)
                    .collect();
                if window.is_empty() {
                    0.0
                } else {
                    window.iter().sum::<f64>() / window.len() as f64
                }
            })
            .collect();
        Ok(PerTraj {
            observables: out.observables,
            rates,
            signals,
            record: opts.keep_records.then_some(out.record),
        })
    });

    let mut per_traj = Vec::with_capacity(n_traj);
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) => per_traj.push(p),
            Err(e) => {
                return Err(TrajectoryError::TrajectoryFailed { index, message: e.to_string() })
            }
        }
    }

    let n_obs = observables.len();
    let n_grid = t_grid.len();
    let mut obs_mean = vec![vec![0.0; n_grid]; n_obs];
    let mut obs_se = vec![vec![0.0; n_grid]; n_obs];
    for i in 0..n_obs {
        for j in 0..n_grid {
            let (m, s) = mean_se(per_traj.iter().map(|p| p.observables[i][j]), n_traj);
            obs_mean[i][j] = m;
            obs_se[i][j] = s;
        }
    }
    let n_count = per_traj[0].rates.len();
    let mut count_rate_mean = Vec::with_capacity(n_count);
    let mut count_rate_se = Vec::with_capacity(n_count);
    for c in 0..n_count {
        let (m, s) = mean_se(per_traj.iter().map(|p| p.rates[c]), n_traj);
        count_rate_mean.push(m);
        count_rate_se.push(s);
    }
    let n_hom = per_traj[0].signals.len();
    let mut signal_mean = Vec::with_capacity(n_hom);
    let mut signal_se = Vec::with_capacity(n_hom);
    for c in 0..n_hom {
        let (m, s) = mean_se(per_traj.iter().map(|p| p.signals[c]), n_traj);
        signal_mean.push(m);
        signal_se.push(s);
    }

    let homodyne_channels = match mode {
        UnravelingMode::Jump => Vec::new(),
        _ => model.scheme.homodyne.iter().map(|&(ch, _, _)| ch).collect(),
    };
    let counting_channels = match mode {
        UnravelingMode::HomodyneSme => Vec::new(),
        _ => model.scheme.counted.clone(),
    };
    Ok(EnsembleStats {
        n_traj,
        times: t_grid.to_vec(),
        obs_mean,
        obs_se,
        counting_channels,
        count_rate_mean,
        count_rate_se,
        homodyne_channels,
        signal_mean,
        signal_se,
        records: per_traj.into_iter().filter_map(|p| p.record).collect(),
    })
}

/// Monte-Carlo estimate of the measurement characteristic functional
/// E[exp(i sum_k kappa_k DX_k)] over the partition, with X the counting
/// totals followed by the integrated homodyne signals.
pub fn characteristic_functional(
    records: &[MeasurementRecord],
    kappa: &[f64],
    partition: &[f64],
) -> Result<(Complex64, f64), TrajectoryError> {
    let first = records.first().ok_or(TrajectoryError::EmptyEnsemble)?;
    let d = first.counting_channels.len() + first.homodyne_channels.len();
    if kappa.len() != d {
        return Err(TrajectoryError::KappaLength { expected: d, got: kappa.len() });
    }
    if partition.is_empty()
        || partition[0] < 0.0
        || partition.windows(2).any(|w| w[1] <= w[0])
        || *partition.last().unwrap() > first.t_final + 1e-9
    {
        return Err(TrajectoryError::BadPartition);
    }

    let mut samples = Vec::with_capacity(records.len());
    for rec in records {
        if rec.counting_channels != first.counting_channels
            || rec.homodyne_channels != first.homodyne_channels
            || (rec.t_final - first.t_final).abs() > 1e-12
        {
            return Err(TrajectoryError::InconsistentRecords);
        }
        let mut exponent = 0.0;
        let mut lo = 0.0;
        for &hi in partition {
            for (c, times) in rec.counting.iter().enumerate() {
                let dn = times.iter().filter(|&&t| t > lo && t <= hi).count() as f64;
                exponent += kappa[c] * dn;
            }
            for (h, series) in rec.homodyne.iter().enumerate() {
                let dy: f64 = series
                    .iter()
                    .filter(|(t, _)| *t >= lo && *t < hi)
                    .map(|(_, dy)| dy)
                    .sum();
                exponent += kappa[rec.counting_channels.len() + h] * dy;
            }
            lo = hi;
        }
        samples.push(Complex64::new(0.0, exponent).exp());
    }

    let n = samples.len() as f64;
    let mean = samples.iter().sum::<Complex64>() / n;
    let se = if samples.len() < 2 {
        f64::NAN
    } else {
        let var = samples.iter().map(|s| (s - mean).norm_sqr()).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    Ok((mean, se))
}
