//! Finite-truncation certification suite: structural operator identities,
//! the weighted-number intertwining relations, and the auxiliary-functional
//! inequalities, each reported as a pass/fail check with worst-case location.

use num_complex::Complex64;
use rand::Rng;

use crate::fock::{self, ModeLayout};
use crate::model::{self, ModelError, ModelParams};
use crate::rng::trajectory_rng;
use crate::sparse::OperatorMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VerifyError {
    #[error("epsilon {eps} outside the admissible range (0, {limit}) for r = {r}")]
    EpsilonOutOfRange { eps: f64, limit: f64, r: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One certified check: name, outcome, worst-case margin and its location.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    /// Worst-case residual (identity checks) or slack consumed (inequalities).
    pub margin: f64,
    pub tolerance: f64,
    /// Populated whenever the check fails, and on pass when a meaningful
    /// worst case exists.
    pub worst_case: Option<String>,
    /// States or grid points excluded from the check (edge shells, q = 0
    /// creation branches); always reported so exclusions stay visible.
    pub excluded: usize,
}

impl CheckReport {
    fn new(name: &str, margin: f64, tolerance: f64, worst: Option<String>, excluded: usize) -> Self {
        let pass = margin <= tolerance;
        Self {
            name: name.to_string(),
            pass,
            margin,
            tolerance,
            worst_case: worst,
            excluded,
        }
    }
}

/// The scalar profile q^{2(n+m)} / (1 + eps q^{2(n+m)})^2.
pub fn l0(q: f64, eps: f64, n: usize, m: usize) -> f64 {
    let p = q.powi(2 * (n + m) as i32);
    p / (1.0 + eps * p).powi(2)
}

/// Scan 1/(1+eps(x-r)^{2k})^2 <= 16^k/(1+eps x^{2k})^2 over the given grid,
/// a dense sweep of [0, 2r], and the analytic maximizer
/// x_M = 2^{2k/(2k-1)}/(2^{2k/(2k-1)} - 1) r, where grid scanning alone could
/// miss the sharp maximum.
pub fn lemma_rk_check(r: f64, k: usize, eps: f64, grid: &[f64]) -> CheckReport {
    let pow = |x: f64| x.powi(2 * k as i32);
    let sixteen_k = 16f64.powi(k as i32);
    // Ratio LHS/RHS; the inequality asks for <= 1.
    let ratio = |x: f64| {
        let lhs = 1.0 / (1.0 + eps * pow(x - r)).powi(2);
        let rhs = sixteen_k / (1.0 + eps * pow(x)).powi(2);
        lhs / rhs
    };
    let e = 2f64.powf(2.0 * k as f64 / (2.0 * k as f64 - 1.0));
    let x_m = e / (e - 1.0) * r;
    let mut xs: Vec<f64> = grid.iter().copied().filter(|x| *x >= 0.0).collect();
    let steps = 4000;
    xs.extend((0..=steps).map(|i| 2.0 * r * i as f64 / steps as f64));
    xs.extend([x_m, x_m * (1.0 - 1e-6), x_m * (1.0 + 1e-6), 2.0 * r, 4.0 * r, 10.0 * r]);
    let mut worst = (f64::NEG_INFINITY, 0.0);
    for x in xs {
        let v = ratio(x);
        if v > worst.0 {
            worst = (v, x);
        }
    }
    CheckReport::new(
        "lemma-rk-inequality",
        worst.0 - 1.0,
        1e-12,
        Some(format!("x = {}, ratio = {}", worst.1, worst.0)),
        0,
    )
}

/// The four auxiliary functionals of a basis state, as direct sparse matrix
/// elements <x_k e | [C_eps, x_k] e>.
fn functional_elements(
    c_eps: &OperatorMatrix,
    op: &OperatorMatrix,
    state_index: usize,
    dim: usize,
) -> f64 {
    let mut e = nalgebra::DVector::<Complex64>::zeros(dim);
    e[state_index] = Complex64::ONE;
    let xe = op.apply(&e);
    let comm = c_eps.apply(&xe) - op.apply(&c_eps.apply(&e));
    xe.dotc(&comm).re
}

/// Compare the four functionals against their closed forms on every interior
/// basis state and check the 32^{n+m} domination bound.
///
/// The bound has no content for creation-type functionals on q = 0 states
/// (its right side vanishes while the left does not); those branches are
/// excluded and counted.
pub fn script_l_bound_check(
    params: &ModelParams,
    layout: &ModeLayout,
    eps: f64,
    margin: usize,
) -> Result<CheckReport, VerifyError> {
    let (n, m) = (layout.n_sub(), layout.n_pump());
    let r = params
        .ws
        .iter()
        .chain(params.wp.iter())
        .fold(0.0f64, |a, &w| a.max(w));
    let limit = 1.0 / (2.0 * r.powi(2 * (n + m) as i32));
    if eps <= 0.0 || eps >= limit {
        return Err(VerifyError::EpsilonOutOfRange { eps, limit, r });
    }

    let dim = layout.dim();
    let c_eps = OperatorMatrix::from_diagonal(
        (0..dim)
            .map(|i| Complex64::new(l0(params.n_eigenvalue(layout, i), eps, n, m), 0.0))
            .collect(),
    );
    let big = 32f64.powi((n + m) as i32);
    let mut worst_eq = (0.0f64, String::new());
    let mut worst_bound = (f64::NEG_INFINITY, String::new());
    let mut excluded = 0usize;
    let interior: Vec<usize> = fock::interior_indices(layout, margin).collect();
    let edge_excluded = dim - interior.len();

    for &idx in &interior {
        let occ = layout.occupations(idx);
        let q = params.n_eigenvalue(layout, idx);
        let l0_q = l0(q, eps, n, m);
        for mode in 0..n + m {
            let (w, o) = (params.mode_frequency(layout, mode), occ[mode] as f64);
            let cases = [
                (fock::annihilation(layout, mode).unwrap(), o * (l0(q - w, eps, n, m) - l0_q), false),
                (fock::creation(layout, mode).unwrap(), (o + 1.0) * (l0(q + w, eps, n, m) - l0_q), true),
            ];
            for (op, closed, is_creation) in cases {
                let measured = functional_elements(&c_eps, &op, idx, dim);
                let diff = (measured - closed).abs();
                if diff > worst_eq.0 {
                    worst_eq = (diff, format!("state {occ:?}, mode {mode}, creation={is_creation}"));
                }
                if is_creation && q == 0.0 {
                    excluded += 1;
                    continue;
                }
                let slack = measured.abs() - big * l0_q;
                if slack > worst_bound.0 {
                    worst_bound =
                        (slack, format!("state {occ:?}, mode {mode}, creation={is_creation}"));
                }
            }
        }
    }

    // Equality at 1e-10 and the bound with the same slack budget; report the
    // binding one.
    let (margin_val, worst) = if worst_eq.0 >= worst_bound.0 {
        (worst_eq.0, worst_eq.1)
    } else {
        (worst_bound.0, worst_bound.1)
    };
    Ok(CheckReport::new(
        "scriptL-closed-form-and-bound",
        margin_val,
        1e-10,
        Some(worst),
        excluded + edge_excluded,
    ))
}

/// x_k f(N) = f(N ± w 1) x_k for the four ladder families, with the shifted
/// diagonal built independently; residuals measured on the interior
/// projector.
pub fn f_n_intertwine_check(
    layout: &ModeLayout,
    params: &ModelParams,
    f: impl Fn(f64) -> f64,
    margin: usize,
) -> CheckReport {
    let dim = layout.dim();
    let diag = |shift: f64| {
        OperatorMatrix::from_diagonal(
            (0..dim)
                .map(|i| Complex64::new(f(params.n_eigenvalue(layout, i) + shift), 0.0))
                .collect(),
        )
    };
    let f_n = diag(0.0);
    let proj = fock::interior_projector(layout, margin).expect("margin checked by caller");
    let excluded = dim - fock::interior_indices(layout, margin).count();

    let mut worst = (0.0f64, String::new());
    for mode in 0..layout.n_modes() {
        let w = params.mode_frequency(layout, mode);
        let cases = [
            (fock::annihilation(layout, mode).unwrap(), w, "annihilation"),
            (fock::creation(layout, mode).unwrap(), -w, "creation"),
        ];
        for (op, shift, label) in cases {
            let lhs = op.matmul(&f_n).unwrap();
            let rhs = diag(shift).matmul(&op).unwrap();
            let resid = lhs.sub(&rhs).unwrap().matmul(&proj).unwrap().max_abs();
            if resid > worst.0 {
                worst = (resid, format!("mode {mode} ({label})"));
            }
        }
    }
    CheckReport::new("fN-intertwining", worst.0, 1e-12, Some(worst.1), excluded)
}

/// [H, N] on the interior projector, plus the off-resonance control: with one
/// pump frequency perturbed the commutator must become visibly nonzero.
pub fn h_n_commute_check(params: &ModelParams, layout: &ModeLayout, margin: usize) -> CheckReport {
    params.validate(layout).expect("resonant model required");
    let proj = fock::interior_projector(layout, margin).expect("margin checked by caller");
    let excluded = layout.dim() - fock::interior_indices(layout, margin).count();
    let h = model::hamiltonian(params, layout).unwrap();
    let n_op = model::weighted_number(params, layout);
    let resid = h.commutator(&n_op).unwrap().matmul(&proj).unwrap().max_abs();

    // Control: breaking resonance must break the commutation. Build the
    // perturbed operators directly, bypassing parameter validation.
    let mut perturbed = params.clone();
    perturbed.wp[0] += 0.1;
    let n_pert = model::weighted_number(&perturbed, layout);
    let interaction = model::interaction(layout);
    let h_pert = n_pert
        .add(&interaction.scale(Complex64::new(0.0, perturbed.g / 2.0)))
        .unwrap();
    let control = h_pert.commutator(&n_pert).unwrap().matmul(&proj).unwrap().max_abs();
    let control_floor = 0.1 * perturbed.g / 2.0;

    let mut report = CheckReport::new(
        "HN-commutation",
        resid,
        1e-12,
        Some(format!("off-resonance control residual {control}")),
        excluded,
    );
    if control < control_floor {
        report.pass = false;
        report.worst_case =
            Some(format!("control too small: {control} < {control_floor}; check insensitive"));
    }
    report
}

/// Random unit vectors supported on the interior of the truncation.
fn interior_samples(
    layout: &ModeLayout,
    margin: usize,
    n_samples: usize,
    seed: u64,
) -> Vec<nalgebra::DVector<Complex64>> {
    let interior: Vec<usize> = fock::interior_indices(layout, margin).collect();
    let mut rng = trajectory_rng(seed, 0);
    (0..n_samples)
        .map(|_| {
            let mut v = nalgebra::DVector::<Complex64>::zeros(layout.dim());
            for &i in &interior {
                v[i] = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            }
            let norm = v.norm();
            v / Complex64::new(norm, 0.0)
        })
        .collect()
}

/// Entrywise check that the counting compensators equal -R_k†. Pass explicit
/// `n_ops` to audit an external construction; `None` derives them from the
/// channel list (and then checks the construction is self-consistent).
pub fn hypothesis7_check(
    params: &ModelParams,
    layout: &ModeLayout,
    n_ops: Option<&[OperatorMatrix]>,
) -> CheckReport {
    let channels = model::flatten_channels(params, layout).unwrap();
    let derived: Vec<OperatorMatrix> = channels
        .ops()
        .iter()
        .map(|r| r.adjoint().scale(-Complex64::ONE))
        .collect();
    let candidates = n_ops.unwrap_or(&derived);
    let mut worst = (0.0f64, String::new());
    for (j, (cand, want)) in candidates.iter().zip(&derived).enumerate() {
        let resid = cand.sub(want).map_or(f64::INFINITY, |d| d.max_abs());
        if resid > worst.0 {
            worst = (resid, format!("channel {j}"));
        }
    }
    CheckReport::new("hyp7-compensator-adjoint", worst.0, 0.0, Some(worst.1), 0)
}

/// The finite-truncation hypothesis witnesses:
/// trivial unitarity of the scattering part, the dissipation identity
/// 2 Re<Ku|u> = -sum_k ||R_k u||^2 on random interior vectors (for K and K*),
/// the compensator-adjoint identity, and the domination witness
/// Q = k1 (N_s + N_p) + k2 1 over Z = sum R_k† R_k.
pub fn hypothesis_suite(
    params: &ModelParams,
    layout: &ModeLayout,
    n_samples: usize,
    seed: u64,
) -> Vec<CheckReport> {
    let mut reports = Vec::new();

    // Item (2): the scattering matrix is the identity by construction; there
    // is nothing numerical to falsify, recorded for completeness.
    reports.push(CheckReport::new("hyp2-trivial-scattering", 0.0, 0.0, None, 0));

    let channels = model::flatten_channels(params, layout).unwrap();
    let k_op = model::effective_k(params, layout).unwrap();
    let samples = interior_samples(layout, 1, n_samples, seed);
    let mut worst = (0.0f64, 0usize);
    for (i, u) in samples.iter().enumerate() {
        let lhs = 2.0 * u.dotc(&k_op.apply(u)).re;
        let lhs_adj = 2.0 * k_op.apply(u).dotc(u).re;
        let rhs: f64 = channels.ops().iter().map(|r| r.apply_norm_sq(u)).sum();
        let resid = (lhs + rhs).abs().max((lhs_adj + rhs).abs());
        if resid > worst.0 {
            worst = (resid, i);
        }
    }
    reports.push(CheckReport::new(
        "hyp6-dissipation-identity",
        worst.0,
        1e-10,
        Some(format!("sample {}", worst.1)),
        0,
    ));

    reports.push(hypothesis7_check(params, layout, None));

    // Domination witness: k1 = max |alpha|^2, k2 = total thermal weight.
    let k1 = params
        .alpha
        .iter()
        .flatten()
        .fold(0.0f64, |a, c| a.max(c.norm_sqr()));
    let k2: f64 = params.alpha[6]
        .iter()
        .chain(params.alpha[7].iter())
        .map(|c| c.norm_sqr())
        .sum();
    let n_op = model::weighted_number(params, layout);
    let z_op = model::dissipator_sum(&channels);
    let mut worst_dom = (f64::NEG_INFINITY, 0usize);
    for (i, u) in samples.iter().enumerate() {
        let z = u.dotc(&z_op.apply(u)).re;
        let q = k1 * u.dotc(&n_op.apply(u)).re + k2;
        let slack = z - q;
        if slack > worst_dom.0 {
            worst_dom = (slack, i);
        }
    }
    reports.push(CheckReport::new(
        "qz-domination",
        worst_dom.0,
        1e-10,
        Some(format!("sample {}", worst_dom.1)),
        0,
    ));

    reports
}

/// The full default suite on a model, as run by the `verify` subcommand.
pub fn default_suite(params: &ModelParams, layout: &ModeLayout) -> Result<Vec<CheckReport>, VerifyError> {
    params.validate(layout)?;
    let (n, m) = (layout.n_sub(), layout.n_pump());
    let r = params
        .ws
        .iter()
        .chain(params.wp.iter())
        .fold(0.0f64, |a, &w| a.max(w));
    let eps = 1.0 / (4.0 * r.powi(2 * (n + m) as i32));

    let mut reports = vec![
        h_n_commute_check(params, layout, 1),
        f_n_intertwine_check(layout, params, |q| l0(q, eps, n, m), 1),
        lemma_rk_check(r, n + m, eps, &[]),
        script_l_bound_check(params, layout, eps, 1)?,
    ];
    reports.extend(hypothesis_suite(params, layout, 200, 0x5eed));
    Ok(reports)
}
