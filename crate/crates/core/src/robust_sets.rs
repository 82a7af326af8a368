//! Robust pre-sets under norm-bounded uncertainty, maximal robust control
//! invariant sets, N-step robust controllable sets, and the terminal
//! ingredients (local gain, terminal weight, certified terminal set) needed
//! by the receding-horizon stability machinery.
//!
//! The robust pre-set of a target `S` is computed exactly: per facet `(f, b)`
//! of `S` the tight worst case over the uncertainty is
//!
//! ```text
//!   f'(A x + B u) + eps_A ||f||_1 ||x||_inf + eps_B ||f||_1 ||u||_inf
//!                 + sigma_w ||f||_1  <=  b
//! ```
//!
//! and each max-norm term is expanded into the equivalent family of linear
//! constraints over all (coordinate, sign) pairs, which is exact because the
//! coefficients are nonnegative: `g + c * max_{i,s} s v_i <= b` iff
//! `g + c s v_i <= b` for all `(i, s)`.

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

use crate::blt::{SystemModel, UncertaintyParams};
use crate::geometry::{GeometryError, Polytope};

#[derive(Debug, Error)]
pub enum RobustSetsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Riccati iteration did not converge (unstabilizable pair?)")]
    RiccatiDiverged,
    #[error("closed-loop matrix is not Schur stable (spectral radius {0:.4})")]
    UnstableClosedLoop(f64),
    #[error("R weight is not positive definite")]
    NotPositiveDefinite,
    #[error("terminal-set computation supports state dimension <= 3, got {0}; supply a terminal set explicitly")]
    DimensionTooLarge(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Sign-expansion helper: all `(coordinate, sign)` unit functionals of
/// dimension `n`, or the single zero functional when `coef == 0`.
fn sign_expansion(n: usize, coef: f64) -> Vec<RowDVector<f64>> {
    if coef == 0.0 {
        return vec![RowDVector::zeros(n)];
    }
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        for s in [1.0f64, -1.0] {
            let mut row = RowDVector::zeros(n);
            row[i] = coef * s;
            out.push(row);
        }
    }
    out
}

/// Exact robust pre-set
/// `{x in X : exists u in U, forall Delta_A, Delta_B, w : (A+Delta_A)x + (B+Delta_B)u + w in S}`.
///
/// An empty result is returned as an explicit empty polytope, not an error.
pub fn robust_pre(
    target: &Polytope,
    state_set: &Polytope,
    input_set: &Polytope,
    model: &SystemModel,
    unc: &UncertaintyParams,
) -> Result<Polytope, RobustSetsError> {
    let nx = model.nx();
    let nu = model.nu();
    check_dims(target, state_set, input_set, model)?;

    let mut rows: Vec<(RowDVector<f64>, f64)> = Vec::new();
    for fi in 0..target.num_facets() {
        let (f, b) = target.facet(fi);
        let f1 = f.iter().map(|v| v.abs()).sum::<f64>();
        let fa = &f * &model.a_hat;
        let fb = &f * &model.b_hat;
        let rhs = b - unc.sigma_w * f1;
        for xr in sign_expansion(nx, unc.eps_a * f1) {
            for ur in sign_expansion(nu, unc.eps_b * f1) {
                let mut row = RowDVector::zeros(nx + nu);
                for j in 0..nx {
                    row[j] = fa[j] + xr[j];
                }
                for j in 0..nu {
                    row[nx + j] = fb[j] + ur[j];
                }
                rows.push((row, rhs));
            }
        }
    }
    let mut lifted_f = DMatrix::zeros(rows.len(), nx + nu);
    let mut lifted_b = DVector::zeros(rows.len());
    for (i, (row, off)) in rows.iter().enumerate() {
        lifted_f.row_mut(i).copy_from(row);
        lifted_b[i] = *off;
    }
    let lifted = Polytope::from_parts(lifted_f, lifted_b)?
        .intersect(&state_set.product(input_set))?;
    let projected = lifted.fm_project(nu)?;
    if projected.is_empty()? {
        return Ok(Polytope::empty(nx));
    }
    Ok(projected)
}

/// Robust pre-set of the closed loop `u = Kx`: no input variable and no
/// projection; the `||Kx||_inf` term expands over the (row, sign) pairs of
/// `K`. Intersects with the state set and `{x : Kx in U}`.
///
/// An empty result is returned as an explicit empty polytope.
pub fn robust_pre_closed(
    target: &Polytope,
    state_set: &Polytope,
    input_set: &Polytope,
    model: &SystemModel,
    unc: &UncertaintyParams,
    k_gain: &DMatrix<f64>,
) -> Result<Polytope, RobustSetsError> {
    let nx = model.nx();
    let nu = model.nu();
    check_dims(target, state_set, input_set, model)?;
    if k_gain.nrows() != nu || k_gain.ncols() != nx {
        return Err(RobustSetsError::Dimension(format!(
            "K has shape {}x{}, expected {}x{}",
            k_gain.nrows(),
            k_gain.ncols(),
            nu,
            nx
        )));
    }
    let a_cl = &model.a_hat + &model.b_hat * k_gain;
    let mut rows: Vec<(RowDVector<f64>, f64)> = Vec::new();
    for fi in 0..target.num_facets() {
        let (f, b) = target.facet(fi);
        let f1 = f.iter().map(|v| v.abs()).sum::<f64>();
        let fa = &f * &a_cl;
        let rhs = b - unc.sigma_w * f1;
        // ||Kx||_inf expands over (row of K, sign)
        let u_terms: Vec<RowDVector<f64>> = if unc.eps_b == 0.0 {
            vec![RowDVector::zeros(nx)]
        } else {
            let mut v = Vec::with_capacity(2 * nu);
            for r in 0..nu {
                for s in [1.0f64, -1.0] {
                    v.push(RowDVector::from(k_gain.row(r)) * (unc.eps_b * f1 * s));
                }
            }
            v
        };
        for xr in sign_expansion(nx, unc.eps_a * f1) {
            for ur in &u_terms {
                rows.push((&fa + &xr + ur, rhs));
            }
        }
    }
    // Kx in U
    for fi in 0..input_set.num_facets() {
        let (f, b) = input_set.facet(fi);
        rows.push((&f * k_gain, b));
    }
    let mut big_f = DMatrix::zeros(rows.len(), nx);
    let mut big_b = DVector::zeros(rows.len());
    for (i, (row, off)) in rows.iter().enumerate() {
        big_f.row_mut(i).copy_from(row);
        big_b[i] = *off;
    }
    let pre = Polytope::from_parts(big_f, big_b)?.intersect(state_set)?;
    if pre.is_empty()? {
        return Ok(Polytope::empty(nx));
    }
    Ok(pre.remove_redundant()?)
}

/// Result of a fixed-point set iteration.
#[derive(Debug, Clone)]
pub struct InvariantSetResult {
    pub set: Polytope,
    pub converged: bool,
    pub iterations: usize,
}

/// Maximal robust control invariant subset of `X`: iterate
/// `Omega_{k+1} = robust_pre(Omega_k) /\ X` from `Omega_0 = X` until the
/// iterates agree up to `set_equal` tolerance 1e-6. Non-convergence within
/// `max_iters` returns the last iterate flagged; an empty iterate returns the
/// empty set (a fixed point).
pub fn max_robust_control_invariant_set(
    state_set: &Polytope,
    input_set: &Polytope,
    model: &SystemModel,
    unc: &UncertaintyParams,
    max_iters: usize,
) -> Result<InvariantSetResult, RobustSetsError> {
    iterate_fixed_point(state_set, max_iters, |omega| {
        robust_pre(omega, state_set, input_set, model, unc)
    })
}

/// Maximal robust invariant subset of `{x in X : Kx in U}` under the local
/// controller `u = Kx`; produced by iterating the closed-loop robust
/// pre-set. By construction a converged nonempty result certifies robust
/// forward invariance under `K`.
pub fn max_robust_invariant_set_closed(
    state_set: &Polytope,
    input_set: &Polytope,
    model: &SystemModel,
    unc: &UncertaintyParams,
    k_gain: &DMatrix<f64>,
    max_iters: usize,
) -> Result<InvariantSetResult, RobustSetsError> {
    iterate_fixed_point(state_set, max_iters, |omega| {
        robust_pre_closed(omega, state_set, input_set, model, unc, k_gain)
    })
}

fn iterate_fixed_point<F>(
    start: &Polytope,
    max_iters: usize,
    mut pre: F,
) -> Result<InvariantSetResult, RobustSetsError>
where
    F: FnMut(&Polytope) -> Result<Polytope, RobustSetsError>,
{
    let mut omega = start.canonicalize();
    for iter in 1..=max_iters {
        let next = pre(&omega)?;
        if next.is_empty()? {
            return Ok(InvariantSetResult {
                set: next,
                converged: true,
                iterations: iter,
            });
        }
        if next.set_equal(&omega, 1e-6)? {
            return Ok(InvariantSetResult {
                set: next,
                converged: true,
                iterations: iter,
            });
        }
        omega = next;
    }
    Ok(InvariantSetResult {
        set: omega,
        converged: false,
        iterations: max_iters,
    })
}

/// N-step robust controllable sets to `S`: `C_0 = S`,
/// `C_{k+1} = robust_pre(C_k) /\ X`. An empty intermediate set truncates the
/// list with the flag set.
#[derive(Debug, Clone)]
pub struct ControllableSets {
    pub sets: Vec<Polytope>,
    pub truncated: bool,
}

pub fn n_step_robust_controllable(
    target: &Polytope,
    state_set: &Polytope,
    input_set: &Polytope,
    model: &SystemModel,
    unc: &UncertaintyParams,
    n: usize,
) -> Result<ControllableSets, RobustSetsError> {
    let mut sets = vec![target.clone()];
    for _ in 0..n {
        let next = robust_pre(sets.last().unwrap(), state_set, input_set, model, unc)?;
        if next.is_empty()? {
            return Ok(ControllableSets {
                sets,
                truncated: true,
            });
        }
        sets.push(next);
    }
    Ok(ControllableSets {
        sets,
        truncated: false,
    })
}

/// Infinite-horizon LQR gain for `u = Kx` from the fixed-point Riccati
/// iteration (tolerance 1e-10, cap 10000 iterations).
pub fn lqr_gain(
    model: &SystemModel,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, RobustSetsError> {
    let nx = model.nx();
    let nu = model.nu();
    if q.nrows() != nx || q.ncols() != nx || r.nrows() != nu || r.ncols() != nu {
        return Err(RobustSetsError::Dimension("weight shapes".into()));
    }
    let a = &model.a_hat;
    let b = &model.b_hat;
    let mut p = q.clone();
    for _ in 0..10_000 {
        let btp = b.transpose() * &p;
        let gram = r + &btp * b;
        let gram_inv = gram
            .clone()
            .cholesky()
            .ok_or(RobustSetsError::NotPositiveDefinite)?
            .inverse();
        let atp = a.transpose() * &p;
        let next = q + &atp * a - (&atp * b) * &gram_inv * (&btp * a);
        let diff = (&next - &p).amax();
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(RobustSetsError::RiccatiDiverged);
        }
        if diff <= 1e-10 {
            let btp = b.transpose() * &p;
            let gram = r + &btp * b;
            let gram_inv = gram
                .cholesky()
                .ok_or(RobustSetsError::NotPositiveDefinite)?
                .inverse();
            let k = -gram_inv * (&btp * a);
            return Ok(k);
        }
    }
    Err(RobustSetsError::RiccatiDiverged)
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|e| e.norm())
        .fold(0.0, f64::max)
}

/// Solves `A' X A - X + W = 0` for Schur-stable `A` by squaring iteration;
/// `X = sum_j (A')^j W A^j`.
pub fn solve_discrete_lyapunov(
    a_cl: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<DMatrix<f64>, RobustSetsError> {
    if a_cl.nrows() != a_cl.ncols() || w.nrows() != a_cl.nrows() || w.ncols() != a_cl.ncols() {
        return Err(RobustSetsError::Dimension("Lyapunov shapes".into()));
    }
    let rho = spectral_radius(a_cl);
    if rho >= 1.0 - 1e-12 {
        return Err(RobustSetsError::UnstableClosedLoop(rho));
    }
    let mut x = w.clone();
    let mut m = a_cl.clone();
    for _ in 0..200 {
        let incr = m.transpose() * &x * &m;
        let delta = incr.amax();
        x += incr;
        m = &m * &m;
        if delta <= 1e-16 * x.amax().max(1.0) {
            break;
        }
    }
    // symmetrize round-off
    let xt = x.transpose();
    Ok((x + xt) * 0.5)
}

/// Local gain, terminal weight, and terminal set backing the terminal
/// constraint: `K` from LQR, `Q_T` solving the discrete Lyapunov equation
/// with `W = Q + K'RK` (so the terminal decrease condition holds with
/// equality), and the terminal set from the robust control invariant set
/// iteration. `certified` records whether the set is robustly forward
/// invariant under `u = Kx`, checked exactly via containment in the
/// closed-loop robust pre-set.
#[derive(Debug, Clone)]
pub struct TerminalIngredients {
    pub k_gain: DMatrix<f64>,
    pub q_terminal: DMatrix<f64>,
    pub terminal_set: Polytope,
    pub certified: bool,
}

pub fn terminal_ingredients(
    model: &SystemModel,
    unc: &UncertaintyParams,
    state_set: &Polytope,
    input_set: &Polytope,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    max_iters: usize,
) -> Result<TerminalIngredients, RobustSetsError> {
    if model.nx() > 3 {
        return Err(RobustSetsError::DimensionTooLarge(model.nx()));
    }
    let terminal =
        max_robust_control_invariant_set(state_set, input_set, model, unc, max_iters)?;
    terminal_ingredients_with_set(model, unc, state_set, input_set, q, r, terminal.set)
}

pub fn terminal_ingredients_with_set(
    model: &SystemModel,
    unc: &UncertaintyParams,
    state_set: &Polytope,
    input_set: &Polytope,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    terminal_set: Polytope,
) -> Result<TerminalIngredients, RobustSetsError> {
    let k_gain = lqr_gain(model, q, r)?;
    let a_cl = &model.a_hat + &model.b_hat * &k_gain;
    let w = q + k_gain.transpose() * r * &k_gain;
    let q_terminal = solve_discrete_lyapunov(&a_cl, &w)?;
    let certified = if terminal_set.is_empty()? {
        false
    } else {
        let pre = robust_pre_closed(&terminal_set, state_set, input_set, model, unc, &k_gain)?;
        if pre.is_empty()? {
            false
        } else {
            terminal_set.contained_in(&pre, 1e-7)?
        }
    };
    Ok(TerminalIngredients {
        k_gain,
        q_terminal,
        terminal_set,
        certified,
    })
}

fn check_dims(
    target: &Polytope,
    state_set: &Polytope,
    input_set: &Polytope,
    model: &SystemModel,
) -> Result<(), RobustSetsError> {
    let nx = model.nx();
    let nu = model.nu();
    if target.dim() != nx || state_set.dim() != nx {
        return Err(RobustSetsError::Dimension(format!(
            "sets over dim {} / {}, model nx {}",
            target.dim(),
            state_set.dim(),
            nx
        )));
    }
    if input_set.dim() != nu {
        return Err(RobustSetsError::Dimension(format!(
            "input set dim {}, model nu {}",
            input_set.dim(),
            nu
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model(a: f64, b: f64) -> SystemModel {
        SystemModel::new(
            DMatrix::from_row_slice(1, 1, &[a]),
            DMatrix::from_row_slice(1, 1, &[b]),
        )
        .unwrap()
    }

    #[test]
    fn scalar_pre_without_uncertainty() {
        // x+ = 0.5x + u, S = [-1,1], U = [-1,1], X = [-10,10] -> [-4,4]
        let model = scalar_model(0.5, 1.0);
        let unc = UncertaintyParams::zero();
        let s = Polytope::from_box(&[-1.0], &[1.0]).unwrap();
        let x = Polytope::from_box(&[-10.0], &[10.0]).unwrap();
        let u = Polytope::from_box(&[-1.0], &[1.0]).unwrap();
        let pre = robust_pre(&s, &x, &u, &model, &unc).unwrap();
        let expected = Polytope::from_box(&[-4.0], &[4.0]).unwrap();
        assert!(pre.set_equal(&expected, 1e-7).unwrap());
    }

    #[test]
    fn disturbance_wider_than_target_gives_empty_pre() {
        let model = scalar_model(0.5, 1.0);
        let unc = UncertaintyParams::new(0.0, 0.0, 3.0).unwrap();
        let s = Polytope::from_box(&[-1.0], &[1.0]).unwrap();
        let x = Polytope::from_box(&[-10.0], &[10.0]).unwrap();
        let u = Polytope::from_box(&[-1.0], &[1.0]).unwrap();
        let pre = robust_pre(&s, &x, &u, &model, &unc).unwrap();
        assert!(pre.is_empty().unwrap());
    }

    #[test]
    fn closed_loop_pre_with_zero_gain_matches_autonomous() {
        let model = scalar_model(0.5, 1.0);
        let unc = UncertaintyParams::new(0.05, 0.3, 0.1).unwrap();
        let s = Polytope::from_box(&[-1.0], &[1.0]).unwrap();
        let x = Polytope::from_box(&[-10.0], &[10.0]).unwrap();
        let u = Polytope::from_box(&[-1.0], &[1.0]).unwrap();
        let k = DMatrix::zeros(1, 1);
        let pre = robust_pre_closed(&s, &x, &u, &model, &unc, &k).unwrap();
        // with u = 0 the eps_B term vanishes: |0.5 x| + 0.05 |x| <= 0.9
        let expected = Polytope::from_box(&[-0.9 / 0.55], &[0.9 / 0.55]).unwrap();
        assert!(pre.set_equal(&expected, 1e-6).unwrap());
    }

    #[test]
    fn closed_loop_pre_contains_target_for_contractive_dynamics() {
        let model = scalar_model(0.8, 1.0);
        let unc = UncertaintyParams::zero();
        let k = DMatrix::from_row_slice(1, 1, &[-0.5]); // A + BK = 0.3
        let s = Polytope::from_box(&[-2.0], &[2.0]).unwrap();
        let x = Polytope::from_box(&[-10.0], &[10.0]).unwrap();
        let u = Polytope::from_box(&[-8.0], &[8.0]).unwrap();
        let pre = robust_pre_closed(&s, &x, &u, &model, &unc, &k).unwrap();
        assert!(s.contained_in(&pre, 1e-7).unwrap());
    }

    #[test]
    fn invariant_set_trivial_without_uncertainty() {
        // stable dynamics, huge boxes: X is invariant immediately
        let model = scalar_model(0.5, 1.0);
        let unc = UncertaintyParams::zero();
        let x = Polytope::from_box(&[-100.0], &[100.0]).unwrap();
        let u = Polytope::from_box(&[-100.0], &[100.0]).unwrap();
        let res = max_robust_control_invariant_set(&x, &u, &model, &unc, 10).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        assert!(res.set.set_equal(&x, 1e-6).unwrap());
    }

    #[test]
    fn invariant_set_empty_for_huge_disturbance() {
        let model = scalar_model(1.0, 1.0);
        let unc = UncertaintyParams::new(0.0, 0.0, 10.0).unwrap();
        let x = Polytope::from_box(&[-1.0], &[1.0]).unwrap();
        let u = Polytope::from_box(&[-1.0], &[1.0]).unwrap();
        let res = max_robust_control_invariant_set(&x, &u, &model, &unc, 10).unwrap();
        assert!(res.set.is_empty().unwrap());
    }

    #[test]
    fn controllable_sets_scalar_growth() {
        let model = scalar_model(0.5, 1.0);
        let unc = UncertaintyParams::zero();
        let s = Polytope::from_box(&[-1.0], &[1.0]).unwrap();
        let x = Polytope::from_box(&[-10.0], &[10.0]).unwrap();
        let u = Polytope::from_box(&[-1.0], &[1.0]).unwrap();
        let res = n_step_robust_controllable(&s, &x, &u, &model, &unc, 1).unwrap();
        assert_eq!(res.sets.len(), 2);
        assert!(!res.truncated);
        let expected = Polytope::from_box(&[-4.0], &[4.0]).unwrap();
        assert!(res.sets[1].set_equal(&expected, 1e-7).unwrap());
    }

    #[test]
    fn controllable_sets_zero_steps() {
        let model = scalar_model(0.5, 1.0);
        let unc = UncertaintyParams::zero();
        let s = Polytope::from_box(&[-1.0], &[1.0]).unwrap();
        let x = Polytope::from_box(&[-10.0], &[10.0]).unwrap();
        let u = Polytope::from_box(&[-1.0], &[1.0]).unwrap();
        let res = n_step_robust_controllable(&s, &x, &u, &model, &unc, 0).unwrap();
        assert_eq!(res.sets.len(), 1);
        assert!(res.sets[0].set_equal(&s, 1e-9).unwrap());
    }

    #[test]
    fn controllable_sets_nest_when_target_invariant() {
        let model = scalar_model(0.5, 1.0);
        let unc = UncertaintyParams::new(0.05, 0.05, 0.05).unwrap();
        let x = Polytope::from_box(&[-10.0], &[10.0]).unwrap();
        let u = Polytope::from_box(&[-2.0], &[2.0]).unwrap();
        let inv = max_robust_control_invariant_set(&x, &u, &model, &unc, 50).unwrap();
        assert!(inv.converged);
        let res = n_step_robust_controllable(&inv.set, &x, &u, &model, &unc, 3).unwrap();
        for k in 0..res.sets.len() - 1 {
            assert!(res.sets[k].contained_in(&res.sets[k + 1], 1e-6).unwrap());
        }
    }

    #[test]
    fn lyapunov_scalar_geometric_series() {
        // A = 0.5, W = 1 -> X = 1/(1 - 0.25) = 4/3
        let a = DMatrix::from_row_slice(1, 1, &[0.5]);
        let w = DMatrix::from_row_slice(1, 1, &[1.0]);
        let x = solve_discrete_lyapunov(&a, &w).unwrap();
        assert!((x[(0, 0)] - 4.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn lyapunov_zero_dynamics() {
        let a = DMatrix::zeros(2, 2);
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let x = solve_discrete_lyapunov(&a, &w).unwrap();
        assert!((x - w).amax() <= 1e-14);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let a = DMatrix::from_row_slice(1, 1, &[1.01]);
        let w = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(matches!(
            solve_discrete_lyapunov(&a, &w),
            Err(RobustSetsError::UnstableClosedLoop(_))
        ));
    }

    #[test]
    fn lqr_stabilizes_paper_system() {
        let model = SystemModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.15, 0.1, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.1, 1.1]),
        )
        .unwrap();
        let q = DMatrix::identity(2, 2) * 10.0;
        let r = DMatrix::identity(1, 1);
        let k = lqr_gain(&model, &q, &r).unwrap();
        let a_cl = &model.a_hat + &model.b_hat * &k;
        assert!(spectral_radius(&a_cl) < 1.0);
        // Lyapunov residual for the Assumption-style weight
        let w = &q + k.transpose() * &r * &k;
        let qt = solve_discrete_lyapunov(&a_cl, &w).unwrap();
        let resid = (a_cl.transpose() * &qt * &a_cl - &qt + &w).amax();
        assert!(resid <= 1e-9, "residual {resid}");
    }

    #[test]
    fn lqr_rejects_uncontrollable_unstable_pair() {
        let model = scalar_model(2.0, 0.0);
        let q = DMatrix::identity(1, 1);
        let r = DMatrix::identity(1, 1);
        assert!(lqr_gain(&model, &q, &r).is_err());
    }
}
