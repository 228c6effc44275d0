//! The multi-photon model: Hamiltonian, measurement/loss channels, effective
//! generator, and the coherent-pump drive shift.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fock::{self, FockError, ModeLayout};
use crate::sparse::OperatorMatrix;

/// Absolute tolerance for the energy-resonance condition sum(ws) = sum(wp).
pub const TOL_RES: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("resonance violated: sum of subharmonic frequencies {sum_ws} != sum of pump frequencies {sum_wp} (energy conservation requires equality within {TOL_RES})")]
    ResonanceViolated { sum_ws: f64, sum_wp: f64 },
    #[error("coupling constant g must be nonzero")]
    ZeroCoupling,
    #[error("frequency list has {got} entries, expected {expected}")]
    FrequencyLength { expected: usize, got: usize },
    #[error("channel amplitude list {block} has {got} entries, expected {expected}")]
    AmplitudeLength { block: usize, expected: usize, got: usize },
    #[error("homodyne phase list has {got} entries, expected {expected} (one per subharmonic mode)")]
    PhaseLength { expected: usize, got: usize },
    #[error("pump drive is nonzero but pump-input amplitude alpha^(4)_{mode} is zero; the coherent input amplitude is undefined")]
    DriveUndefined { mode: usize },
    #[error(transparent)]
    Fock(#[from] FockError),
}

/// Coherent monochromatic pump drive: amplitude, horizon, and homodyne phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveParams {
    pub lambda_re: f64,
    pub lambda_im: f64,
    /// Drive is on for t in [0, horizon).
    pub horizon: f64,
    /// Local-oscillator phases, one per subharmonic mode.
    pub thetas: Vec<f64>,
}

impl DriveParams {
    pub fn off(n_sub: usize) -> Self {
        Self { lambda_re: 0.0, lambda_im: 0.0, horizon: 0.0, thetas: vec![0.0; n_sub] }
    }

    pub fn lambda(&self) -> Complex64 {
        Complex64::new(self.lambda_re, self.lambda_im)
    }
}

/// Physical parameters of the model.
///
/// `alpha[l]` holds the channel amplitudes of block `l+1` in the channel
/// table: blocks 1,3,5,7 (indices 0,2,4,6) act on the n subharmonic modes,
/// blocks 2,4,6,8 on the m pump modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub ws: Vec<f64>,
    pub wp: Vec<f64>,
    pub g: f64,
    pub alpha: [Vec<Complex64>; 8],
    pub drive: DriveParams,
}

impl ModelParams {
    pub fn validate(&self, layout: &ModeLayout) -> Result<(), ModelError> {
        let (n, m) = (layout.n_sub(), layout.n_pump());
        if self.ws.len() != n {
            return Err(ModelError::FrequencyLength { expected: n, got: self.ws.len() });
        }
        if self.wp.len() != m {
            return Err(ModelError::FrequencyLength { expected: m, got: self.wp.len() });
        }
        if self.g == 0.0 {
            return Err(ModelError::ZeroCoupling);
        }
        let sum_ws: f64 = self.ws.iter().sum();
        let sum_wp: f64 = self.wp.iter().sum();
        if (sum_ws - sum_wp).abs() > TOL_RES {
            return Err(ModelError::ResonanceViolated { sum_ws, sum_wp });
        }
        for (l, list) in self.alpha.iter().enumerate() {
            let expected = if l % 2 == 0 { n } else { m };
            if list.len() != expected {
                return Err(ModelError::AmplitudeLength { block: l + 1, expected, got: list.len() });
            }
        }
        if self.drive.thetas.len() != n {
            return Err(ModelError::PhaseLength { expected: n, got: self.drive.thetas.len() });
        }
        Ok(())
    }

    /// Eigenvalue q of the weighted number operator N on a basis state.
    pub fn n_eigenvalue(&self, layout: &ModeLayout, index: usize) -> f64 {
        (0..layout.n_modes())
            .map(|k| self.mode_frequency(layout, k) * layout.occupation_of(index, k) as f64)
            .sum()
    }

    pub fn mode_frequency(&self, layout: &ModeLayout, mode: usize) -> f64 {
        if layout.is_pump_mode(mode) {
            self.wp[mode - layout.n_sub()]
        } else {
            self.ws[mode]
        }
    }
}

/// What a channel is wired to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelRole {
    PhotocountSub,
    PhotocountPump,
    Homodyne,
    PumpInput,
    LossA,
    LossB,
    ThermalA,
    ThermalB,
}

impl ChannelRole {
    fn of_block(block: usize) -> Self {
        match block {
            1 => Self::PhotocountSub,
            2 => Self::PhotocountPump,
            3 => Self::Homodyne,
            4 => Self::PumpInput,
            5 => Self::LossA,
            6 => Self::LossB,
            7 => Self::ThermalA,
            8 => Self::ThermalB,
            _ => unreachable!("block index {block}"),
        }
    }
}

/// The 4(n+m) channel operators in ascending block order.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    ops: Vec<OperatorMatrix>,
    roles: Vec<ChannelRole>,
    amplitudes: Vec<Complex64>,
    /// (block 1..=8, within-block mode index) per flat channel.
    block_index: Vec<(usize, usize)>,
}

impl ChannelSet {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn op(&self, k: usize) -> &OperatorMatrix {
        &self.ops[k]
    }

    pub fn role(&self, k: usize) -> ChannelRole {
        self.roles[k]
    }

    pub fn amplitude(&self, k: usize) -> Complex64 {
        self.amplitudes[k]
    }

    pub fn ops(&self) -> &[OperatorMatrix] {
        &self.ops
    }

    /// Flat index of channel (block, j).
    pub fn flat_index(&self, block: usize, j: usize) -> Option<usize> {
        self.block_index.iter().position(|&bi| bi == (block, j))
    }

    pub fn block_of(&self, flat: usize) -> (usize, usize) {
        self.block_index[flat]
    }

    pub fn indices_with_role(&self, role: ChannelRole) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.roles[k] == role).collect()
    }
}

/// The interaction operator I = prod a†_i prod b_j - prod a_i prod b†_j.
pub fn interaction(layout: &ModeLayout) -> OperatorMatrix {
    let id = OperatorMatrix::identity(layout.dim());
    let mut raise = id.clone();
    let mut lower = id;
    for k in 0..layout.n_modes() {
        let a = fock::annihilation(layout, k).expect("mode in range");
        if layout.is_pump_mode(k) {
            raise = raise.matmul(&a).expect("same layout");
            lower = lower.matmul(&a.adjoint()).expect("same layout");
        } else {
            raise = raise.matmul(&a.adjoint()).expect("same layout");
            lower = lower.matmul(&a).expect("same layout");
        }
    }
    raise.sub(&lower).expect("same layout")
}

/// The weighted number operator N = N_s + N_p.
pub fn weighted_number(params: &ModelParams, layout: &ModeLayout) -> OperatorMatrix {
    OperatorMatrix::from_diagonal(
        (0..layout.dim())
            .map(|i| Complex64::new(params.n_eigenvalue(layout, i), 0.0))
            .collect(),
    )
}

/// H = N_s + N_p + (i g / 2) I.
pub fn hamiltonian(params: &ModelParams, layout: &ModeLayout) -> Result<OperatorMatrix, ModelError> {
    params.validate(layout)?;
    let ig_half = Complex64::new(0.0, params.g / 2.0);
    Ok(weighted_number(params, layout)
        .add(&interaction(layout).scale(ig_half))
        .expect("same layout"))
}

/// Build the 4(n+m) channel operators, block by block in ascending l.
pub fn flatten_channels(
    params: &ModelParams,
    layout: &ModeLayout,
) -> Result<ChannelSet, ModelError> {
    params.validate(layout)?;
    let (n, m) = (layout.n_sub(), layout.n_pump());
    let mut ops = Vec::with_capacity(4 * (n + m));
    let mut roles = Vec::new();
    let mut amplitudes = Vec::new();
    let mut block_index = Vec::new();
    for block in 1..=8 {
        let (count, daggered) = match block {
            7 | 8 => (if block % 2 == 1 { n } else { m }, true),
            _ => (if block % 2 == 1 { n } else { m }, false),
        };
        for j in 0..count {
            let mode = if block % 2 == 1 { j } else { n + j };
            let alpha = params.alpha[block - 1][j];
            let ladder = fock::annihilation(layout, mode)?;
            let op = if daggered { ladder.adjoint() } else { ladder };
            ops.push(op.scale(alpha));
            roles.push(ChannelRole::of_block(block));
            amplitudes.push(alpha);
            block_index.push((block, j));
        }
    }
    Ok(ChannelSet { ops, roles, amplitudes, block_index })
}

/// R = sum_k R_k† R_k, Hermitian positive semidefinite.
pub fn dissipator_sum(channels: &ChannelSet) -> OperatorMatrix {
    let dim = channels.op(0).dim();
    channels
        .ops()
        .iter()
        .map(|r| r.adjoint().matmul(r).expect("same layout"))
        .fold(OperatorMatrix::zeros(dim), |acc, x| acc.add(&x).expect("same layout"))
}

/// K = -iH - R/2.
pub fn effective_k(params: &ModelParams, layout: &ModeLayout) -> Result<OperatorMatrix, ModelError> {
    let h = hamiltonian(params, layout)?;
    let r = dissipator_sum(&flatten_channels(params, layout)?);
    Ok(h
        .scale(Complex64::new(0.0, -1.0))
        .add(&r.scale(Complex64::new(-0.5, 0.0)))
        .expect("same layout"))
}

/// The Weyl shift realizing a coherent pump input in the reduced dynamics:
/// per-channel scalar offsets f_k(t) plus a Hamiltonian correction.
#[derive(Debug, Clone)]
pub struct DriveShift {
    /// Offset f_k(t) per flat channel; zero everywhere except pump inputs.
    pub offsets: Vec<Complex64>,
    /// H_corr(t) = (1/2i) sum_k (f_k R_k† - conj(f_k) R_k).
    pub h_corr: OperatorMatrix,
}

impl DriveShift {
    pub fn is_active(&self) -> bool {
        self.offsets.iter().any(|f| *f != Complex64::ZERO)
    }

    /// The shifted channel L_k(t) = R_k + f_k(t) 1.
    pub fn shifted_channel(&self, channels: &ChannelSet, k: usize) -> OperatorMatrix {
        let op = channels.op(k);
        if self.offsets[k] == Complex64::ZERO {
            op.clone()
        } else {
            op.add(&OperatorMatrix::identity(op.dim()).scale(self.offsets[k]))
                .expect("same layout")
        }
    }
}

/// Evaluate the drive shift at time `t`. The coherent input amplitude on pump
/// channel k is f_k(t) = i lambda e^{-i wp_k t} / conj(alpha^(4)_k) for t
/// inside the drive window and 0 outside.
pub fn drive_shift(
    params: &ModelParams,
    channels: &ChannelSet,
    t: f64,
) -> Result<DriveShift, ModelError> {
    let dim = channels.op(0).dim();
    let mut offsets = vec![Complex64::ZERO; channels.len()];
    let lambda = params.drive.lambda();
    let mut h_corr = OperatorMatrix::zeros(dim);
    if lambda != Complex64::ZERO {
        for k in channels.indices_with_role(ChannelRole::PumpInput) {
            let (_, j) = channels.block_of(k);
            let alpha = channels.amplitude(k);
            if alpha == Complex64::ZERO {
                return Err(ModelError::DriveUndefined { mode: j });
            }
            if t >= 0.0 && t < params.drive.horizon {
                let phase = Complex64::new(0.0, -params.wp[j] * t).exp();
                let f = Complex64::i() * lambda * phase / alpha.conj();
                offsets[k] = f;
                // (1/2i)(f R† - conj(f) R). Together with the channel shift
                // L = R + f this reproduces the coherent-input reduced
                // dynamics (total drive Hamiltonian i(conj(f) R - f R†));
                // the opposite sign would cancel the shift term exactly.
                let term = channels
                    .op(k)
                    .scale(f.conj())
                    .sub(&channels.op(k).adjoint().scale(f))
                    .expect("same layout")
                    .scale(Complex64::new(0.0, 0.5));
                h_corr = h_corr.add(&term).expect("same layout");
            }
        }
    }
    Ok(DriveShift { offsets, h_corr })
}

/// Outcome of the measurement-compatibility check.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatReport {
    pub pass: bool,
    /// Violated pair (condition, detail) when failing.
    pub violation: Option<(String, String)>,
}

/// A concrete detection scheme on the channel space C^d, d = 4(n+m):
/// projective counting on `counted` channels and homodyne h-functions
/// supported on single channels with rotating phase theta - w t.
#[derive(Debug, Clone)]
pub struct MeasurementScheme {
    pub n_channels: usize,
    pub counted: Vec<usize>,
    /// (channel index, theta, w) per homodyne function.
    pub homodyne: Vec<(usize, f64, f64)>,
}

impl MeasurementScheme {
    /// Default detection layout: counting on blocks 1-2, homodyne on block 3
    /// with phase theta_k - ws_k t.
    pub fn standard(params: &ModelParams, layout: &ModeLayout) -> Self {
        let (n, m) = (layout.n_sub(), layout.n_pump());
        Self {
            n_channels: 4 * (n + m),
            counted: (0..n + m).collect(),
            homodyne: (0..n)
                .map(|k| (n + m + k, params.drive.thetas[k], params.ws[k]))
                .collect(),
        }
    }

    fn h_vector(&self, idx: usize, t: f64) -> Vec<Complex64> {
        let (ch, theta, w) = self.homodyne[idx];
        let mut v = vec![Complex64::ZERO; self.n_channels];
        // <z_ch | h> = e^{-i(theta - w t)}, so <h | z_ch> = e^{i(theta - w t)}.
        v[ch] = Complex64::new(0.0, -(theta - w * t)).exp();
        v
    }
}

/// Verify Im<h_i|h_j> = 0 and B_k h_j = 0 for the scheme, sampling the
/// rotating phases at several times.
pub fn measurement_compatibility_check(scheme: &MeasurementScheme) -> CompatReport {
    let sample_times = [0.0, 0.37, 1.13, 2.71];
    for &t in &sample_times {
        for i in 0..scheme.homodyne.len() {
            let hi = scheme.h_vector(i, t);
            for j in 0..scheme.homodyne.len() {
                let hj = scheme.h_vector(j, t);
                let inner: Complex64 =
                    hi.iter().zip(&hj).map(|(a, b)| a.conj() * b).sum();
                if inner.im.abs() > 1e-12 {
                    return CompatReport {
                        pass: false,
                        violation: Some((
                            format!("Im<h_{i}|h_{j}> = {} != 0", inner.im),
                            format!("t = {t}"),
                        )),
                    };
                }
            }
            for &k in &scheme.counted {
                if hi[k].norm() > 1e-12 {
                    return CompatReport {
                        pass: false,
                        violation: Some((
                            format!("B_{k} h_{i} != 0"),
                            format!("h_{i} supported on counted channel {k}"),
                        )),
                    };
                }
            }
        }
    }
    CompatReport { pass: true, violation: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::interior_projector;
    use crate::state::QuantumState;
    use nalgebra::DVector;

    pub(crate) fn plain_params(n: usize, m: usize, ws: &[f64], wp: &[f64], g: f64) -> ModelParams {
        ModelParams {
            ws: ws.to_vec(),
            wp: wp.to_vec(),
            g,
            alpha: [
                vec![Complex64::ZERO; n],
                vec![Complex64::ZERO; m],
                vec![Complex64::ZERO; n],
                vec![Complex64::ZERO; m],
                vec![Complex64::ZERO; n],
                vec![Complex64::ZERO; m],
                vec![Complex64::ZERO; n],
                vec![Complex64::ZERO; m],
            ],
            drive: DriveParams::off(n),
        }
    }

    #[test]
    fn interaction_on_basis_states() {
        let layout = ModeLayout::new(1, 1, &[2, 2]).unwrap();
        let i_op = interaction(&layout);
        // I e(0,1) = e(1,0), I e(1,0) = -e(0,1), I e(0,0) = 0.
        let e01 = layout.basis_index(&[0, 1]).unwrap();
        let e10 = layout.basis_index(&[1, 0]).unwrap();
        let dense = i_op.to_dense();
        assert_eq!(dense[(e10, e01)], Complex64::ONE);
        assert_eq!(dense[(e01, e10)], -Complex64::ONE);
        assert_eq!(dense.column(0).norm(), 0.0);
        // Anti-Hermitian: ||I + I†|| = 0.
        assert_eq!(i_op.add(&i_op.adjoint()).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn hamiltonian_diagonal_part() {
        let layout = ModeLayout::new(2, 1, &[4, 4, 3]).unwrap();
        let params = plain_params(2, 1, &[1.0, 2.0], &[3.0], 0.5);
        let h = hamiltonian(&params, &layout).unwrap();
        assert!(h.is_hermitian(1e-12));
        // <e(s,p)|N|e(s,p)> = q, e.g. s=(2,1), p=(1) -> 1*2 + 2*1 + 3*1 = 7.
        let st = QuantumState::basis_state(&layout, &[2, 1, 1]).unwrap();
        let n_op = weighted_number(&params, &layout);
        assert_eq!(st.expectation(&n_op).unwrap().re, 7.0);
    }

    #[test]
    fn resonance_rejected() {
        let layout = ModeLayout::new(1, 1, &[2, 2]).unwrap();
        let params = plain_params(1, 1, &[1.0], &[1.5], 0.2);
        assert!(matches!(
            hamiltonian(&params, &layout),
            Err(ModelError::ResonanceViolated { .. })
        ));
        let mut zero_g = plain_params(1, 1, &[1.0], &[1.0], 0.2);
        zero_g.g = 0.0;
        assert_eq!(hamiltonian(&zero_g, &layout).unwrap_err(), ModelError::ZeroCoupling);
    }

    #[test]
    fn channel_flattening_order() {
        let layout = ModeLayout::new(1, 1, &[3, 3]).unwrap();
        let mut params = plain_params(1, 1, &[1.0], &[1.0], 0.2);
        for l in 0..8 {
            params.alpha[l][0] = Complex64::ONE;
        }
        let channels = flatten_channels(&params, &layout).unwrap();
        assert_eq!(channels.len(), 8);
        let expected_roles = [
            ChannelRole::PhotocountSub,
            ChannelRole::PhotocountPump,
            ChannelRole::Homodyne,
            ChannelRole::PumpInput,
            ChannelRole::LossA,
            ChannelRole::LossB,
            ChannelRole::ThermalA,
            ChannelRole::ThermalB,
        ];
        for (k, &role) in expected_roles.iter().enumerate() {
            assert_eq!(channels.role(k), role);
        }
        // Order a,b,a,b,a,b,a†,b†: check the operators themselves.
        let a = fock::annihilation(&layout, 0).unwrap();
        let b = fock::annihilation(&layout, 1).unwrap();
        assert_eq!(channels.op(0), &a);
        assert_eq!(channels.op(1), &b);
        assert_eq!(channels.op(6), &a.adjoint());
        assert_eq!(channels.op(7), &b.adjoint());
    }

    #[test]
    fn channel_count_and_single_channel() {
        let layout = ModeLayout::new(2, 1, &[3, 3, 3]).unwrap();
        let mut params = plain_params(2, 1, &[1.0, 1.0], &[2.0], 0.2);
        params.alpha[0][0] = Complex64::ONE;
        let channels = flatten_channels(&params, &layout).unwrap();
        assert_eq!(channels.len(), 12);
        let nonzero: Vec<usize> =
            (0..channels.len()).filter(|&k| channels.op(k).nnz() > 0).collect();
        assert_eq!(nonzero, vec![0]);
        assert_eq!(channels.op(0), &fock::annihilation(&layout, 0).unwrap());
    }

    #[test]
    fn flatten_round_trip_bijection() {
        for n in 1..=4usize {
            for m in 1..=4usize {
                let layout = ModeLayout::new(n, m, &vec![2; n + m]).unwrap();
                let sum_ws = 2.0 * m as f64;
                let params = plain_params(
                    n,
                    m,
                    &vec![sum_ws / n as f64; n],
                    &vec![2.0; m],
                    0.1,
                );
                let channels = flatten_channels(&params, &layout).unwrap();
                assert_eq!(channels.len(), 4 * (n + m));
                for flat in 0..channels.len() {
                    let (block, j) = channels.block_of(flat);
                    assert_eq!(channels.flat_index(block, j), Some(flat));
                }
            }
        }
    }

    #[test]
    fn dissipator_sum_closed_forms() {
        // Single loss channel alpha*a on d=3: R = |alpha|^2 diag(0,1,2).
        let layout = ModeLayout::new(1, 1, &[3, 2]).unwrap();
        let mut params = plain_params(1, 1, &[1.0], &[1.0], 0.2);
        params.alpha[4][0] = Complex64::new(0.0, 0.7);
        let r = dissipator_sum(&flatten_channels(&params, &layout).unwrap());
        let n0 = fock::number(&layout, 0).unwrap();
        assert!(r.sub(&n0.scale(Complex64::new(0.49, 0.0))).unwrap().max_abs() < 1e-12);

        // Only alpha^(7) = c: R P = |c|^2 (N_1 + 1) P on the interior.
        let mut thermal = plain_params(1, 1, &[1.0], &[1.0], 0.2);
        thermal.alpha[6][0] = Complex64::new(0.5, 0.5);
        let r7 = dissipator_sum(&flatten_channels(&thermal, &layout).unwrap());
        let p = interior_projector(&layout, 1).unwrap();
        let expected = n0
            .add(&OperatorMatrix::identity(layout.dim()))
            .unwrap()
            .scale(Complex64::new(0.5, 0.0));
        assert!(
            r7.sub(&expected).unwrap().matmul(&p).unwrap().max_abs() < 1e-12,
            "thermal closed form"
        );

        // Positive semidefinite.
        let ev = crate::linalg::hermitian_eigenvalues(&r7.to_dense());
        assert!(ev[0] >= -1e-12);
    }

    #[test]
    fn effective_k_identities() {
        let layout = ModeLayout::new(1, 1, &[4, 3]).unwrap();
        let mut params = plain_params(1, 1, &[1.0], &[1.0], 1e-3);
        params.alpha[0][0] = Complex64::new(0.6, 0.0);
        params.alpha[3][0] = Complex64::new(0.0, 0.4);
        let k = effective_k(&params, &layout).unwrap();
        let r = dissipator_sum(&flatten_channels(&params, &layout).unwrap());
        // K + K† = -R.
        assert!(k.add(&k.adjoint()).unwrap().add(&r).unwrap().max_abs() < 1e-12);
        // Anti-Hermitian part of K equals -iH.
        let h = hamiltonian(&params, &layout).unwrap();
        let anti = k.sub(&k.adjoint()).unwrap().scale(Complex64::new(0.5, 0.0));
        assert!(anti.add(&h.scale(Complex64::i())).unwrap().max_abs() < 1e-12);
        // Vacuum with pure a-loss is in the kernel of K.
        let mut loss = plain_params(1, 1, &[0.5], &[0.5], 1e-3);
        loss.alpha[4][0] = Complex64::ONE;
        let k_loss = effective_k(&loss, &layout).unwrap();
        let vac = QuantumState::basis_state(&layout, &[0, 0]).unwrap();
        if let QuantumState::Pure(v) = vac {
            // I, N and R all annihilate the vacuum.
            assert!(k_loss.apply(&v).norm() < 1e-12);
        }
    }

    #[test]
    fn hypothesis6_on_random_interior_vectors() {
        let layout = ModeLayout::new(2, 1, &[4, 4, 3]).unwrap();
        let mut params = plain_params(2, 1, &[1.0, 1.0], &[2.0], 0.3);
        params.alpha[0][0] = Complex64::new(0.3, 0.0);
        params.alpha[1][0] = Complex64::new(0.0, 0.25);
        params.alpha[6][0] = Complex64::new(0.2, 0.1);
        let k = effective_k(&params, &layout).unwrap();
        let channels = flatten_channels(&params, &layout).unwrap();
        let mut seed = 12345u64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for _ in 0..200 {
            let mut u = DVector::from_fn(layout.dim(), |_, _| Complex64::new(next(), next()));
            u /= Complex64::new(u.norm(), 0.0);
            let lhs = 2.0 * u.dotc(&k.apply(&u)).re;
            let rhs: f64 = channels.ops().iter().map(|r| r.apply_norm_sq(&u)).sum();
            assert!(
                (lhs + rhs).abs() <= 1e-10 * layout.dim() as f64,
                "dissipation identity violated: {lhs} vs -{rhs}"
            );
        }
    }

    #[test]
    fn drive_shift_values() {
        let layout = ModeLayout::new(1, 1, &[2, 2]).unwrap();
        let mut params = plain_params(1, 1, &[2.0], &[2.0], 0.2);
        params.alpha[3][0] = Complex64::ONE;
        params.drive = DriveParams {
            lambda_re: 0.1,
            lambda_im: 0.0,
            horizon: 5.0,
            thetas: vec![0.0],
        };
        let channels = flatten_channels(&params, &layout).unwrap();
        // t = 0: f = i lambda / conj(alpha4) = 0.1i.
        let shift = drive_shift(&params, &channels, 0.0).unwrap();
        let k4 = channels.indices_with_role(ChannelRole::PumpInput)[0];
        assert!((shift.offsets[k4] - Complex64::new(0.0, 0.1)).norm() < 1e-15);
        assert!(shift.h_corr.is_hermitian(1e-15));
        // Past the horizon the drive switches off.
        let late = drive_shift(&params, &channels, 5.0).unwrap();
        assert!(!late.is_active());
        assert_eq!(late.h_corr.nnz(), 0);
        // lambda = 0 leaves channels untouched.
        params.drive = DriveParams::off(1);
        let channels0 = flatten_channels(&params, &layout).unwrap();
        let off = drive_shift(&params, &channels0, 0.0).unwrap();
        assert!(!off.is_active());
        // Nonzero drive with alpha4 = 0 is rejected.
        let mut bad = plain_params(1, 1, &[2.0], &[2.0], 0.2);
        bad.drive =
            DriveParams { lambda_re: 0.1, lambda_im: 0.0, horizon: 1.0, thetas: vec![0.0] };
        let bad_channels = flatten_channels(&bad, &layout).unwrap();
        assert_eq!(
            drive_shift(&bad, &bad_channels, 0.0).unwrap_err(),
            ModelError::DriveUndefined { mode: 0 }
        );
    }

    #[test]
    fn hn_commutator_vanishes_on_interior() {
        let layout = ModeLayout::new(2, 1, &[4, 4, 4]).unwrap();
        let params = plain_params(2, 1, &[1.0, 1.0], &[2.0], 0.2);
        let h = hamiltonian(&params, &layout).unwrap();
        let n_op = weighted_number(&params, &layout);
        let p = interior_projector(&layout, 1).unwrap();
        let resid = h.commutator(&n_op).unwrap().matmul(&p).unwrap();
        assert!(resid.max_abs() <= 1e-12);
    }

    #[test]
    fn measurement_scheme_compatibility() {
        let layout = ModeLayout::new(2, 1, &[2, 2, 2]).unwrap();
        let mut params = plain_params(2, 1, &[1.0, 1.0], &[2.0], 0.2);
        params.drive.thetas = vec![0.4, 0.4]; // equal phases still pass
        let scheme = MeasurementScheme::standard(&params, &layout);
        assert!(measurement_compatibility_check(&scheme).pass);

        // Adversarial: homodyne function supported on a counted channel.
        let mut bad = scheme.clone();
        bad.homodyne[0].0 = 0;
        let report = measurement_compatibility_check(&bad);
        assert!(!report.pass);
        let (cond, _) = report.violation.unwrap();
        assert!(cond.contains("B_0 h_0"));
    }
}
