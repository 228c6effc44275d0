//! Named observables for configs and output columns.
//!
//! Flat micro-grammar, no expressions: `n_a1`/`n_b2` for mode occupations and
//! `quad_a1@0.75` for the quadrature (e^{-i phi} a + e^{i phi} a†)/sqrt(2) at
//! local-oscillator phase phi (radians).

use num_complex::Complex64;

use crate::fock::{self, ModeLayout};
use crate::sparse::OperatorMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObservableError {
    #[error("unknown observable `{0}`; expected n_<mode> or quad_<mode>@<phase> with mode a1..a{{n}} or b1..b{{m}}")]
    Unknown(String),
    #[error("observable `{name}` references mode {mode} but the layout has {available}")]
    ModeOutOfRange { name: String, mode: String, available: String },
    #[error("bad phase in `{0}`; expected a real number after `@`")]
    BadPhase(String),
}

/// Mode label `a<k>` or `b<k>` (1-based) to flat mode index.
fn parse_mode(name: &str, label: &str, layout: &ModeLayout) -> Result<usize, ObservableError> {
    let out_of_range = || ObservableError::ModeOutOfRange {
        name: name.to_string(),
        mode: label.to_string(),
        available: format!("a1..a{} and b1..b{}", layout.n_sub(), layout.n_pump()),
    };
    let (family, num) = label.split_at(1);
    let k: usize = num.parse().map_err(|_| ObservableError::Unknown(name.to_string()))?;
    if k == 0 {
        return Err(out_of_range());
    }
    match family {
        "a" if k <= layout.n_sub() => Ok(k - 1),
        "b" if k <= layout.n_pump() => Ok(layout.n_sub() + k - 1),
        "a" | "b" => Err(out_of_range()),
        _ => Err(ObservableError::Unknown(name.to_string())),
    }
}

/// Resolve an observable name to its sparse operator.
pub fn resolve(name: &str, layout: &ModeLayout) -> Result<OperatorMatrix, ObservableError> {
    if let Some(label) = name.strip_prefix("n_") {
        let mode = parse_mode(name, label, layout)?;
        return Ok(fock::number(layout, mode).expect("mode checked"));
    }
    if let Some(rest) = name.strip_prefix("quad_") {
        let (label, phase_str) =
            rest.split_once('@').ok_or_else(|| ObservableError::Unknown(name.to_string()))?;
        let mode = parse_mode(name, label, layout)?;
        let phi: f64 =
            phase_str.parse().map_err(|_| ObservableError::BadPhase(name.to_string()))?;
        let a = fock::annihilation(layout, mode).expect("mode checked");
        let half = Complex64::new(1.0 / 2f64.sqrt(), 0.0);
        let rot = Complex64::new(0.0, -phi).exp();
        return Ok(a
            .scale(rot * half)
            .add(&a.adjoint().scale(rot.conj() * half))
            .expect("same layout"));
    }
    Err(ObservableError::Unknown(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::QuantumState;

    fn layout() -> ModeLayout {
        ModeLayout::new(2, 1, &[3, 3, 3]).unwrap()
    }

    #[test]
    fn number_observables_resolve() {
        let l = layout();
        let st = QuantumState::basis_state(&l, &[2, 0, 1]).unwrap();
        let n_a1 = resolve("n_a1", &l).unwrap();
        let n_b1 = resolve("n_b1", &l).unwrap();
        assert_eq!(st.expectation(&n_a1).unwrap().re, 2.0);
        assert_eq!(st.expectation(&n_b1).unwrap().re, 1.0);
    }

    #[test]
    fn quadrature_is_hermitian_and_phase_sensitive() {
        let l = layout();
        let x = resolve("quad_a1@0", &l).unwrap();
        let p = resolve("quad_a1@1.5707963267948966", &l).unwrap();
        assert!(x.is_hermitian(1e-15));
        assert!(p.is_hermitian(1e-15));
        // x and p differ: [x, p] = i on the interior.
        let comm = x.commutator(&p).unwrap();
        let proj = fock::interior_projector(&l, 1).unwrap();
        let reduced = comm.matmul(&proj).unwrap();
        let diag_im = reduced
            .entries()
            .find(|&(r, c, _)| r == 0 && c == 0)
            .map(|(_, _, v)| v.im)
            .unwrap();
        assert!((diag_im - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors_are_specific() {
        let l = layout();
        assert!(matches!(resolve("foo", &l), Err(ObservableError::Unknown(_))));
        assert!(matches!(resolve("n_a3", &l), Err(ObservableError::ModeOutOfRange { .. })));
        assert!(matches!(resolve("n_b2", &l), Err(ObservableError::ModeOutOfRange { .. })));
        assert!(matches!(resolve("quad_a1@x", &l), Err(ObservableError::BadPhase(_))));
        assert!(matches!(resolve("n_a0", &l), Err(ObservableError::ModeOutOfRange { .. })));
    }
}
