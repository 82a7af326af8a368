//! Assembly of the robust synthesis quadratic program and its solution
//! decoding.
//!
//! The decision variables are the closed-loop response operators
//! `(Phi_x, Phi_u)` over the horizon, the per-step lumped-disturbance bounds
//! `sigma_t`, nominal-trajectory auxiliaries, and epigraph auxiliaries for
//! the norm terms. The constraints are
//!
//! 1. the response (affine) constraint
//!    `[I - Z A_hat, -Z B_hat][Phi_x; Phi_u] = Sigma` with
//!    `Sigma = blkdiag(I, sigma_0 I, ..., sigma_{T-1} I)`;
//! 2. the lumped-disturbance bound per step,
//!    `eps_A (||Phi_x^{t,t} x0||_inf + sum_i ||Phi_x^{t,t-i}||_ind) +
//!     eps_B (...) + sigma_w <= sigma_t`;
//! 3. tightened state/terminal/input constraints per facet `(f, b)`:
//!    `f' Phi^{t,t} x0 + sum_i ||f' Phi^{t,t-i}||_1 <= b`.
//!
//! The objective is the nominal quadratic cost, expressed through explicit
//! nominal-trajectory auxiliaries so the quadratic term stays block diagonal.
//!
//! `Mode::UnifDf` is the baseline that freezes every `sigma_t` at the single
//! uniform bound from [`uniform_sigma_bound`]; its feasible set is a subset
//! of the `Mode::AugDist` feasible set by construction.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::blt::{
    self, BltError, BltOperator, SystemModel, UncertaintyParams,
};
use crate::geometry::{GeometryError, Polytope};
use crate::qp::{self, QpError, QpSolution, Settings, SolveStatus, StandardQp};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("invalid problem specification: {0}")]
    BadSpec(String),
    #[error("horizon must be >= 1")]
    HorizonTooShort,
    #[error("uniform disturbance bound requires bounded constraint sets")]
    UnboundedSet,
    #[error("operation requires a Solved solution, got {0:?}")]
    NotSolved(SolveStatus),
    #[error("successor state is zero; the shifted candidate is undefined (augment the state with a constant to handle this case)")]
    DegenerateSuccessor,
    #[error("solver did not reach a verdict (status {0:?})")]
    SolverStalled(SolveStatus),
    #[error(transparent)]
    Blt(#[from] BltError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Synthesis mode: jointly optimized per-step disturbance bounds, or the
/// uniform-bound baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    AugDist,
    UnifDf,
}

/// One finite-horizon robust optimal control problem instance.
#[derive(Debug, Clone)]
pub struct OcpSpec {
    pub model: SystemModel,
    pub unc: UncertaintyParams,
    pub state_set: Polytope,
    pub input_set: Polytope,
    pub terminal_set: Option<Polytope>,
    pub q_weight: DMatrix<f64>,
    pub r_weight: DMatrix<f64>,
    pub q_terminal: DMatrix<f64>,
    pub horizon: usize,
    pub x0: DVector<f64>,
}

impl OcpSpec {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        let nx = self.model.nx();
        let nu = self.model.nu();
        if self.horizon < 1 {
            return Err(SynthesisError::HorizonTooShort);
        }
        if self.x0.len() != nx {
            return Err(SynthesisError::BadSpec(format!(
                "x0 has length {}, expected {nx}",
                self.x0.len()
            )));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(SynthesisError::BadSpec("x0 must be finite".into()));
        }
        if self.state_set.dim() != nx {
            return Err(SynthesisError::BadSpec("state set dimension".into()));
        }
        if self.input_set.dim() != nu {
            return Err(SynthesisError::BadSpec("input set dimension".into()));
        }
        if let Some(t) = &self.terminal_set {
            if t.dim() != nx {
                return Err(SynthesisError::BadSpec("terminal set dimension".into()));
            }
        }
        check_weight(&self.q_weight, nx, "Q")?;
        check_weight(&self.r_weight, nu, "R")?;
        check_weight(&self.q_terminal, nx, "Q_T")?;
        if self.r_weight.clone().cholesky().is_none() {
            return Err(SynthesisError::BadSpec(
                "R must be positive definite".into(),
            ));
        }
        Ok(())
    }

    pub fn with_x0(&self, x0: DVector<f64>) -> Self {
        let mut s = self.clone();
        s.x0 = x0;
        s
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        let mut s = self.clone();
        s.horizon = horizon;
        s
    }
}

fn check_weight(m: &DMatrix<f64>, n: usize, name: &str) -> Result<(), SynthesisError> {
    if m.nrows() != n || m.ncols() != n {
        return Err(SynthesisError::BadSpec(format!(
            "{name} has shape {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    if (m - m.transpose()).amax() > 1e-10 {
        return Err(SynthesisError::BadSpec(format!("{name} must be symmetric")));
    }
    Ok(())
}

fn tri(t: usize) -> usize {
    t * (t + 1) / 2
}

/// Offsets and extents of every variable group in the assembled program.
/// Offsets are contiguous and non-overlapping; `total()` equals the QP
/// dimension.
#[derive(Debug, Clone)]
pub struct VariableLayout {
    nx: usize,
    nu: usize,
    horizon: usize,
    has_eps_a: bool,
    has_eps_b: bool,
    n_state_facets: usize,
    n_input_facets: usize,
    n_terminal_facets: usize,
    phi_x_start: usize,
    phi_u_start: usize,
    sigma_start: usize,
    xhat_start: usize,
    uhat_start: usize,
    ex_start: usize,
    eu_start: usize,
    dx_start: usize,
    du_start: usize,
    gx_start: usize,
    gu_start: usize,
    s_state_start: usize,
    s_input_start: usize,
    s_term_start: usize,
    total: usize,
}

impl VariableLayout {
    fn new(spec: &OcpSpec) -> Self {
        let nx = spec.model.nx();
        let nu = spec.model.nu();
        let t = spec.horizon;
        let has_eps_a = spec.unc.eps_a > 0.0;
        let has_eps_b = spec.unc.eps_b > 0.0;
        let n_state_facets = spec.state_set.num_facets();
        let n_input_facets = spec.input_set.num_facets();
        let n_terminal_facets = spec.terminal_set.as_ref().map_or(0, |p| p.num_facets());

        let n_blocks = tri(t + 1); // (T+1)(T+2)/2
        let lag_pairs = tri(t) - t; // number of (t, i) pairs with 1 <= i <= t <= T-1
        let mut off = 0;
        let mut take = |count: usize| {
            let start = off;
            off += count;
            start
        };
        let phi_x_start = take(n_blocks * nx * nx);
        let phi_u_start = take(n_blocks * nu * nx);
        let sigma_start = take(t);
        let xhat_start = take((t + 1) * nx);
        let uhat_start = take(t * nu);
        let ex_start = take(if has_eps_a { t } else { 0 });
        let eu_start = take(if has_eps_b { t } else { 0 });
        let dx_start = take(if has_eps_a { lag_pairs } else { 0 });
        let du_start = take(if has_eps_b { lag_pairs } else { 0 });
        let gx_start = take(if has_eps_a { lag_pairs * nx * nx } else { 0 });
        let gu_start = take(if has_eps_b { lag_pairs * nu * nx } else { 0 });
        let s_state_start = take(n_state_facets * nx * tri(t.saturating_sub(1)));
        let s_input_start = take(n_input_facets * nx * tri(t.saturating_sub(1)));
        let s_term_start = take(n_terminal_facets * nx * t);
        VariableLayout {
            nx,
            nu,
            horizon: t,
            has_eps_a,
            has_eps_b,
            n_state_facets,
            n_input_facets,
            n_terminal_facets,
            phi_x_start,
            phi_u_start,
            sigma_start,
            xhat_start,
            uhat_start,
            ex_start,
            eu_start,
            dx_start,
            du_start,
            gx_start,
            gu_start,
            s_state_start,
            s_input_start,
            s_term_start,
            total: off,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of free response entries (all `Phi_x` and `Phi_u` blocks).
    pub fn response_entries(&self) -> usize {
        self.sigma_start
    }

    fn blk(t: usize, lag: usize) -> usize {
        tri(t) + lag
    }

    pub fn phi_x_entry(&self, t: usize, lag: usize, r: usize, c: usize) -> usize {
        self.phi_x_start + Self::blk(t, lag) * self.nx * self.nx + r * self.nx + c
    }

    pub fn phi_u_entry(&self, t: usize, lag: usize, r: usize, c: usize) -> usize {
        self.phi_u_start + Self::blk(t, lag) * self.nu * self.nx + r * self.nx + c
    }

    pub fn sigma(&self, t: usize) -> usize {
        self.sigma_start + t
    }

    pub fn xhat(&self, t: usize, r: usize) -> usize {
        self.xhat_start + t * self.nx + r
    }

    pub fn uhat(&self, t: usize, r: usize) -> usize {
        self.uhat_start + t * self.nu + r
    }

    fn ex(&self, t: usize) -> usize {
        self.ex_start + t
    }

    fn eu(&self, t: usize) -> usize {
        self.eu_start + t
    }

    /// Index of the (t, i) lag pair, 1 <= i <= t <= T-1; pairs for smaller
    /// `t` come first.
    fn lag_pair(t: usize, i: usize) -> usize {
        tri(t - 1) + (i - 1)
    }

    fn dx(&self, t: usize, i: usize) -> usize {
        self.dx_start + Self::lag_pair(t, i)
    }

    fn du(&self, t: usize, i: usize) -> usize {
        self.du_start + Self::lag_pair(t, i)
    }

    fn gx(&self, t: usize, i: usize, r: usize, c: usize) -> usize {
        self.gx_start + Self::lag_pair(t, i) * self.nx * self.nx + r * self.nx + c
    }

    fn gu(&self, t: usize, i: usize, r: usize, c: usize) -> usize {
        self.gu_start + Self::lag_pair(t, i) * self.nu * self.nx + r * self.nx + c
    }

    fn s_state(&self, t: usize, facet: usize, i: usize, c: usize) -> usize {
        let below = self.n_state_facets * self.nx * tri(t.saturating_sub(1));
        self.s_state_start + below + facet * (t * self.nx) + (i - 1) * self.nx + c
    }

    fn s_input(&self, t: usize, facet: usize, i: usize, c: usize) -> usize {
        let below = self.n_input_facets * self.nx * tri(t.saturating_sub(1));
        self.s_input_start + below + facet * (t * self.nx) + (i - 1) * self.nx + c
    }

    fn s_term(&self, facet: usize, i: usize, c: usize) -> usize {
        self.s_term_start + facet * (self.horizon * self.nx) + (i - 1) * self.nx + c
    }
}

struct RowBuilder {
    rows: Vec<Vec<(usize, f64)>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl RowBuilder {
    fn new() -> Self {
        Self {
            rows: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
        }
    }

    fn eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.rows.push(coeffs);
        self.lower.push(rhs);
        self.upper.push(rhs);
    }

    fn le(&mut self, coeffs: Vec<(usize, f64)>, ub: f64) {
        self.rows.push(coeffs);
        self.lower.push(f64::NEG_INFINITY);
        self.upper.push(ub);
    }

    fn range(&mut self, coeffs: Vec<(usize, f64)>, lb: f64, ub: f64) {
        self.rows.push(coeffs);
        self.lower.push(lb);
        self.upper.push(ub);
    }

    fn materialize(self, n: usize) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let m = self.rows.len();
        let mut a = DMatrix::zeros(m, n);
        for (r, coeffs) in self.rows.iter().enumerate() {
            for &(c, v) in coeffs {
                a[(r, c)] += v;
            }
        }
        (
            a,
            DVector::from_vec(self.lower),
            DVector::from_vec(self.upper),
        )
    }
}

/// The single uniform lumped-disturbance bound used by the `UnifDf`
/// baseline: `eps_A max_{x in X} ||x||_inf + eps_B max_{u in U} ||u||_inf +
/// sigma_w`, each maximum computed by per-coordinate support solves.
pub fn uniform_sigma_bound(spec: &OcpSpec) -> Result<f64, SynthesisError> {
    let mut bound = spec.unc.sigma_w;
    if spec.unc.eps_a > 0.0 {
        bound += spec.unc.eps_a * inf_norm_max(&spec.state_set)?;
    }
    if spec.unc.eps_b > 0.0 {
        bound += spec.unc.eps_b * inf_norm_max(&spec.input_set)?;
    }
    Ok(bound)
}

fn inf_norm_max(set: &Polytope) -> Result<f64, SynthesisError> {
    let n = set.dim();
    let mut best: f64 = 0.0;
    for i in 0..n {
        for s in [1.0f64, -1.0] {
            let mut dir = DVector::zeros(n);
            dir[i] = s;
            match set.support(&dir) {
                Ok(v) => best = best.max(v),
                Err(GeometryError::Unbounded) => return Err(SynthesisError::UnboundedSet),
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(best)
}

/// Assembles the synthesis program for `spec` in the given mode.
pub fn build_program(
    spec: &OcpSpec,
    mode: Mode,
) -> Result<(StandardQp, VariableLayout), SynthesisError> {
    spec.validate()?;
    let layout = VariableLayout::new(spec);
    let nx = layout.nx;
    let nu = layout.nu;
    let t_end = spec.horizon;
    let x0 = &spec.x0;
    let a_hat = &spec.model.a_hat;
    let b_hat = &spec.model.b_hat;
    let unc = &spec.unc;
    let mut rows = RowBuilder::new();

    // (1) response constraint: block row i, block column cb
    for i in 0..=t_end {
        for cb in 0..=i {
            for r in 0..nx {
                for c in 0..nx {
                    let mut coeffs = vec![(layout.phi_x_entry(i, i - cb, r, c), 1.0)];
                    if i >= 1 && cb <= i - 1 {
                        for rr in 0..nx {
                            let v = a_hat[(r, rr)];
                            if v != 0.0 {
                                coeffs.push((layout.phi_x_entry(i - 1, i - 1 - cb, rr, c), -v));
                            }
                        }
                        for rr in 0..nu {
                            let v = b_hat[(r, rr)];
                            if v != 0.0 {
                                coeffs.push((layout.phi_u_entry(i - 1, i - 1 - cb, rr, c), -v));
                            }
                        }
                    }
                    let mut rhs = 0.0;
                    if i == cb {
                        if i == 0 {
                            rhs = if r == c { 1.0 } else { 0.0 };
                        } else if r == c {
                            coeffs.push((layout.sigma(i - 1), -1.0));
                        }
                    }
                    rows.eq(coeffs, rhs);
                }
            }
        }
    }

    // (2) nominal-trajectory definitions: xhat_t = Phi_x^{t,t} x0, etc.
    for t in 0..=t_end {
        for r in 0..nx {
            let mut coeffs = vec![(layout.xhat(t, r), 1.0)];
            for c in 0..nx {
                if x0[c] != 0.0 {
                    coeffs.push((layout.phi_x_entry(t, t, r, c), -x0[c]));
                }
            }
            rows.eq(coeffs, 0.0);
        }
    }
    for t in 0..t_end {
        for r in 0..nu {
            let mut coeffs = vec![(layout.uhat(t, r), 1.0)];
            for c in 0..nx {
                if x0[c] != 0.0 {
                    coeffs.push((layout.phi_u_entry(t, t, r, c), -x0[c]));
                }
            }
            rows.eq(coeffs, 0.0);
        }
    }

    // (3) sigma bounds: explicit lower bound, plus the frozen value in the
    // uniform baseline.
    for t in 0..t_end {
        rows.range(vec![(layout.sigma(t), 1.0)], unc.sigma_w, f64::INFINITY);
    }
    if mode == Mode::UnifDf {
        let bound = uniform_sigma_bound(spec)?;
        for t in 0..t_end {
            rows.eq(vec![(layout.sigma(t), 1.0)], bound);
        }
    }

    // (4) lumped-disturbance bound machinery
    if layout.has_eps_a {
        for t in 0..t_end {
            for r in 0..nx {
                for s in [1.0f64, -1.0] {
                    let mut coeffs = vec![(layout.ex(t), -1.0)];
                    for c in 0..nx {
                        if x0[c] != 0.0 {
                            coeffs.push((layout.phi_x_entry(t, t, r, c), s * x0[c]));
                        }
                    }
                    rows.le(coeffs, 0.0);
                }
            }
        }
        for t in 1..t_end {
            for i in 1..=t {
                for r in 0..nx {
                    for c in 0..nx {
                        for s in [1.0f64, -1.0] {
                            rows.le(
                                vec![
                                    (layout.phi_x_entry(t, t - i, r, c), s),
                                    (layout.gx(t, i, r, c), -1.0),
                                ],
                                0.0,
                            );
                        }
                    }
                    let mut coeffs: Vec<(usize, f64)> = (0..nx)
                        .map(|c| (layout.gx(t, i, r, c), 1.0))
                        .collect();
                    coeffs.push((layout.dx(t, i), -1.0));
                    rows.le(coeffs, 0.0);
                }
            }
        }
    }
    if layout.has_eps_b {
        for t in 0..t_end {
            for r in 0..nu {
                for s in [1.0f64, -1.0] {
                    let mut coeffs = vec![(layout.eu(t), -1.0)];
                    for c in 0..nx {
                        if x0[c] != 0.0 {
                            coeffs.push((layout.phi_u_entry(t, t, r, c), s * x0[c]));
                        }
                    }
                    rows.le(coeffs, 0.0);
                }
            }
        }
        for t in 1..t_end {
            for i in 1..=t {
                for r in 0..nu {
                    for c in 0..nx {
                        for s in [1.0f64, -1.0] {
                            rows.le(
                                vec![
                                    (layout.phi_u_entry(t, t - i, r, c), s),
                                    (layout.gu(t, i, r, c), -1.0),
                                ],
                                0.0,
                            );
                        }
                    }
                    let mut coeffs: Vec<(usize, f64)> = (0..nx)
                        .map(|c| (layout.gu(t, i, r, c), 1.0))
                        .collect();
                    coeffs.push((layout.du(t, i), -1.0));
                    rows.le(coeffs, 0.0);
                }
            }
        }
    }
    if layout.has_eps_a || layout.has_eps_b {
        for t in 0..t_end {
            let mut coeffs = vec![(layout.sigma(t), -1.0)];
            if layout.has_eps_a {
                coeffs.push((layout.ex(t), unc.eps_a));
                for i in 1..=t.min(t_end.saturating_sub(1)) {
                    coeffs.push((layout.dx(t, i), unc.eps_a));
                }
            }
            if layout.has_eps_b {
                coeffs.push((layout.eu(t), unc.eps_b));
                for i in 1..=t.min(t_end.saturating_sub(1)) {
                    coeffs.push((layout.du(t, i), unc.eps_b));
                }
            }
            rows.le(coeffs, -unc.sigma_w);
        }
    }

    // (5) tightened state constraints, t = 0..T-1
    for t in 0..t_end {
        for fi in 0..layout.n_state_facets {
            let (f, b) = spec.state_set.facet(fi);
            for i in 1..=t {
                for c in 0..nx {
                    for s in [1.0f64, -1.0] {
                        let mut coeffs = vec![(layout.s_state(t, fi, i, c), -1.0)];
                        for r in 0..nx {
                            if f[r] != 0.0 {
                                coeffs.push((layout.phi_x_entry(t, t - i, r, c), s * f[r]));
                            }
                        }
                        rows.le(coeffs, 0.0);
                    }
                }
            }
            let mut coeffs: Vec<(usize, f64)> = Vec::new();
            for r in 0..nx {
                for c in 0..nx {
                    let v = f[r] * x0[c];
                    if v != 0.0 {
                        coeffs.push((layout.phi_x_entry(t, t, r, c), v));
                    }
                }
            }
            for i in 1..=t {
                for c in 0..nx {
                    coeffs.push((layout.s_state(t, fi, i, c), 1.0));
                }
            }
            rows.le(coeffs, b);
        }
    }

    // (6) tightened terminal constraint at t = T
    if let Some(terminal) = &spec.terminal_set {
        for fi in 0..layout.n_terminal_facets {
            let (f, b) = terminal.facet(fi);
            for i in 1..=t_end {
                for c in 0..nx {
                    for s in [1.0f64, -1.0] {
                        let mut coeffs = vec![(layout.s_term(fi, i, c), -1.0)];
                        for r in 0..nx {
                            if f[r] != 0.0 {
                                coeffs.push((layout.phi_x_entry(t_end, t_end - i, r, c), s * f[r]));
                            }
                        }
                        rows.le(coeffs, 0.0);
                    }
                }
            }
            let mut coeffs: Vec<(usize, f64)> = Vec::new();
            for r in 0..nx {
                for c in 0..nx {
                    let v = f[r] * x0[c];
                    if v != 0.0 {
                        coeffs.push((layout.phi_x_entry(t_end, t_end, r, c), v));
                    }
                }
            }
            for i in 1..=t_end {
                for c in 0..nx {
                    coeffs.push((layout.s_term(fi, i, c), 1.0));
                }
            }
            rows.le(coeffs, b);
        }
    }

    // (7) tightened input constraints, t = 0..T-1
    for t in 0..t_end {
        for fi in 0..layout.n_input_facets {
            let (f, b) = spec.input_set.facet(fi);
            for i in 1..=t {
                for c in 0..nx {
                    for s in [1.0f64, -1.0] {
                        let mut coeffs = vec![(layout.s_input(t, fi, i, c), -1.0)];
                        for r in 0..nu {
                            if f[r] != 0.0 {
                                coeffs.push((layout.phi_u_entry(t, t - i, r, c), s * f[r]));
                            }
                        }
                        rows.le(coeffs, 0.0);
                    }
                }
            }
            let mut coeffs: Vec<(usize, f64)> = Vec::new();
            for r in 0..nu {
                for c in 0..nx {
                    let v = f[r] * x0[c];
                    if v != 0.0 {
                        coeffs.push((layout.phi_u_entry(t, t, r, c), v));
                    }
                }
            }
            for i in 1..=t {
                for c in 0..nx {
                    coeffs.push((layout.s_input(t, fi, i, c), 1.0));
                }
            }
            rows.le(coeffs, b);
        }
    }

    // Objective: J = sum_t xhat'Q xhat + uhat'R uhat + xhat_T'Q_T xhat_T,
    // i.e. P carries 2Q / 2R / 2Q_T blocks on the auxiliaries.
    let n = layout.total();
    let mut p = DMatrix::zeros(n, n);
    for t in 0..=t_end {
        let w = if t < t_end {
            &spec.q_weight
        } else {
            &spec.q_terminal
        };
        for r in 0..nx {
            for c in 0..nx {
                p[(layout.xhat(t, r), layout.xhat(t, c))] = 2.0 * w[(r, c)];
            }
        }
    }
    for t in 0..t_end {
        for r in 0..nu {
            for c in 0..nu {
                p[(layout.uhat(t, r), layout.uhat(t, c))] = 2.0 * spec.r_weight[(r, c)];
            }
        }
    }
    let (a, l, u) = rows.materialize(n);
    let qp = StandardQp::new(p, DVector::zeros(n), a, l, u)?;
    Ok((qp, layout))
}

/// Decoded solution of the synthesis program.
#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub phi_x: BltOperator,
    pub phi_u: BltOperator,
    pub sigma: Vec<f64>,
    pub j_star: f64,
    /// First control input `Phi_u^{0,0} x0`.
    pub u0: DVector<f64>,
    pub x0: DVector<f64>,
    pub status: SolveStatus,
    /// Post-solve validation failures (solver accuracy faults); `None` when
    /// all decoded invariants hold.
    pub accuracy_fault: Option<String>,
}

const DECODE_RESIDUAL_TOL: f64 = 1e-6;

/// Reassembles the response operators and `sigma` from a solved program and
/// validates the decoded invariants. Violations beyond tolerance are flagged
/// on the result, never silently dropped.
pub fn decode(
    spec: &OcpSpec,
    layout: &VariableLayout,
    solution: &QpSolution,
) -> Result<SynthesisResult, SynthesisError> {
    if solution.status != SolveStatus::Solved {
        return Err(SynthesisError::NotSolved(solution.status));
    }
    let nx = layout.nx;
    let nu = layout.nu;
    let t_end = layout.horizon;
    let z = &solution.z;
    let phi_x = BltOperator::from_block_fn(t_end, nx, nx, |i, j| {
        DMatrix::from_fn(nx, nx, |r, c| z[layout.phi_x_entry(i, j, r, c)])
    });
    let phi_u = BltOperator::from_block_fn(t_end, nu, nx, |i, j| {
        DMatrix::from_fn(nu, nx, |r, c| z[layout.phi_u_entry(i, j, r, c)])
    });
    let sigma: Vec<f64> = (0..t_end).map(|t| z[layout.sigma(t)]).collect();

    let mut faults: Vec<String> = Vec::new();
    let filter = BltOperator::sigma_filter(&sigma, nx);
    let residual = blt::validate_affine_constraint(&phi_x, &phi_u, &spec.model, &filter)?;
    if residual > DECODE_RESIDUAL_TOL {
        faults.push(format!("affine residual {residual:.3e}"));
    }
    for (t, &s) in sigma.iter().enumerate() {
        if s < spec.unc.sigma_w - 1e-8 {
            faults.push(format!("sigma_{t} = {s:.3e} below sigma_w"));
        }
    }
    let first_diag = (phi_x.block(0, 0) - DMatrix::identity(nx, nx)).amax();
    if first_diag > 1e-6 {
        faults.push(format!("Phi_x^(0,0) deviates from I by {first_diag:.3e}"));
    }
    let u0 = phi_u.block(0, 0) * &spec.x0;
    Ok(SynthesisResult {
        phi_x,
        phi_u,
        sigma,
        j_star: solution.objective,
        u0,
        x0: spec.x0.clone(),
        status: solution.status,
        accuracy_fault: if faults.is_empty() {
            None
        } else {
            Some(faults.join("; "))
        },
    })
}

/// Outcome of one build-solve-decode pass.
#[derive(Debug, Clone)]
pub enum SynthesisOutcome {
    Solved(SynthesisResult),
    /// Primal infeasibility with an independently verified certificate.
    Infeasible { certificate_valid: bool },
    /// Solver could not reach a verdict (stall or unbounded direction).
    Unknown(SolveStatus),
}

impl SynthesisOutcome {
    pub fn as_solved(&self) -> Option<&SynthesisResult> {
        match self {
            SynthesisOutcome::Solved(r) => Some(r),
            _ => None,
        }
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, SynthesisOutcome::Infeasible { .. })
    }
}

/// Builds, solves, and decodes one instance.
pub fn synthesize(
    spec: &OcpSpec,
    mode: Mode,
    settings: &Settings,
) -> Result<SynthesisOutcome, SynthesisError> {
    let (qp_prob, layout) = build_program(spec, mode)?;
    let sol = qp::solve(&qp_prob, settings)?;
    match sol.status {
        SolveStatus::Solved => Ok(SynthesisOutcome::Solved(decode(spec, &layout, &sol)?)),
        SolveStatus::PrimalInfeasible => {
            let valid = sol
                .certificate
                .as_ref()
                .map(|c| qp::check_primal_certificate(&qp_prob, c, 1e-8).valid)
                .unwrap_or(false);
            Ok(SynthesisOutcome::Infeasible {
                certificate_valid: valid,
            })
        }
        other => Ok(SynthesisOutcome::Unknown(other)),
    }
}

/// Exact feasibility of the horizon-one robust problem at `spec.x0`: a
/// single feasibility solve over `u0` with the worst case per facet written
/// in closed form and the `||u0||_inf` term expanded exactly over
/// (coordinate, sign) pairs.
pub fn t1_exact_oracle(spec: &OcpSpec) -> Result<bool, SynthesisError> {
    if spec.horizon != 1 {
        return Err(SynthesisError::BadSpec(
            "the exact oracle is defined for horizon 1".into(),
        ));
    }
    spec.validate()?;
    if !spec.state_set.contains(&spec.x0, 1e-9) {
        return Ok(false);
    }
    let nx = spec.model.nx();
    let nu = spec.model.nu();
    let x0 = &spec.x0;
    let x0_inf = x0.amax();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for fi in 0..spec.input_set.num_facets() {
        let (f, b) = spec.input_set.facet(fi);
        rows.push((f.iter().copied().collect(), b));
    }
    if let Some(terminal) = &spec.terminal_set {
        for fi in 0..terminal.num_facets() {
            let (f, b) = terminal.facet(fi);
            let f1: f64 = f.iter().map(|v| v.abs()).sum();
            let fa = &f * &spec.model.a_hat;
            let fb = &f * &spec.model.b_hat;
            let fax0 = (0..nx).map(|j| fa[j] * x0[j]).sum::<f64>();
            let rhs = b - fax0 - spec.unc.eps_a * f1 * x0_inf - spec.unc.sigma_w * f1;
            if spec.unc.eps_b == 0.0 {
                rows.push((fb.iter().copied().collect(), rhs));
            } else {
                for j in 0..nu {
                    for s in [1.0f64, -1.0] {
                        let mut row: Vec<f64> = fb.iter().copied().collect();
                        row[j] += spec.unc.eps_b * f1 * s;
                        rows.push((row, rhs));
                    }
                }
            }
        }
    }
    let m = rows.len();
    let mut a = DMatrix::zeros(m, nu);
    let mut u = DVector::zeros(m);
    for (i, (row, rhs)) in rows.iter().enumerate() {
        for j in 0..nu {
            a[(i, j)] = row[j];
        }
        u[i] = *rhs;
    }
    let sol = qp::solve_lp(
        DVector::zeros(nu),
        a,
        DVector::from_element(m, f64::NEG_INFINITY),
        u,
    )?;
    match sol.status {
        SolveStatus::Solved => Ok(true),
        SolveStatus::PrimalInfeasible => Ok(false),
        other => Err(SynthesisError::SolverStalled(other)),
    }
}

/// Feasible-point candidate for a shifted problem.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub phi_x: BltOperator,
    pub phi_u: BltOperator,
    pub sigma: Vec<f64>,
}

/// Builds the shifted candidate for the `(T-1)`-horizon problem at the
/// successor state: the controller blocks are copied one step forward, the
/// new leading column is completed by the minimum-norm rank-one solution
/// matching the previous policy on the successor direction, the disturbance
/// bounds shift by one, and the responses are rebuilt from the candidate
/// controller.
pub fn construct_shifted_candidate(
    prev: &SynthesisResult,
    model: &SystemModel,
    x_next: &DVector<f64>,
) -> Result<Candidate, SynthesisError> {
    let t_prev = prev.phi_x.horizon();
    if t_prev < 2 {
        return Err(SynthesisError::BadSpec(
            "shifted candidate requires previous horizon >= 2".into(),
        ));
    }
    let norm2 = x_next.dot(x_next);
    if norm2 <= 0.0 {
        return Err(SynthesisError::DegenerateSuccessor);
    }
    let nx = model.nx();
    let nu = model.nu();
    let k_prev = blt::controller_from_responses(&prev.phi_x, &prev.phi_u)?;
    let t_new = t_prev - 1;
    let mut k_new = BltOperator::zero(t_new, nu, nx);
    for i in 0..=t_new {
        for j in 0..i {
            k_new.set_block(i, j, k_prev.block(i + 1, j).clone());
        }
        // leading column: K_new^{i,i} x_next = K_prev^{i+1,i+1} x_prev +
        // K_prev^{i+1,i} x_next, minimum-norm completion
        let rhs = k_prev.block(i + 1, i + 1) * &prev.x0 + k_prev.block(i + 1, i) * x_next;
        let block = &rhs * x_next.transpose() / norm2;
        k_new.set_block(i, i, block);
    }
    let sigma: Vec<f64> = prev.sigma[1..].to_vec();
    let filter = BltOperator::sigma_filter(&sigma, nx);
    let (phi_x, phi_u) = blt::build_responses(&k_new, model, &filter)?;
    Ok(Candidate {
        phi_x,
        phi_u,
        sigma,
    })
}

/// Per-family worst violations of the synthesis constraints for an explicit
/// `(Phi_x, Phi_u, sigma)` triple, evaluated directly on the norm form of
/// the constraints (independently of the epigraph encoding used by
/// [`build_program`]).
#[derive(Debug, Clone, Copy)]
pub struct ConstraintReport {
    pub affine_residual: f64,
    pub eta_bound_violation: f64,
    pub state_violation: f64,
    pub input_violation: f64,
    pub terminal_violation: f64,
}

impl ConstraintReport {
    pub fn max_inequality_violation(&self) -> f64 {
        self.eta_bound_violation
            .max(self.state_violation)
            .max(self.input_violation)
            .max(self.terminal_violation)
    }

    pub fn feasible(&self, eq_tol: f64, ineq_tol: f64) -> bool {
        self.affine_residual <= eq_tol && self.max_inequality_violation() <= ineq_tol
    }
}

fn row_abs_sum_max(m: &DMatrix<f64>) -> f64 {
    let mut best: f64 = 0.0;
    for r in 0..m.nrows() {
        let sum: f64 = (0..m.ncols()).map(|c| m[(r, c)].abs()).sum();
        best = best.max(sum);
    }
    best
}

pub fn check_candidate(
    spec: &OcpSpec,
    phi_x: &BltOperator,
    phi_u: &BltOperator,
    sigma: &[f64],
) -> Result<ConstraintReport, SynthesisError> {
    let t_end = spec.horizon;
    if phi_x.horizon() != t_end || sigma.len() != t_end {
        return Err(SynthesisError::BadSpec(
            "candidate horizon does not match spec".into(),
        ));
    }
    let nx = spec.model.nx();
    let x0 = &spec.x0;
    let filter = BltOperator::sigma_filter(sigma, nx);
    let affine_residual = blt::validate_affine_constraint(phi_x, phi_u, &spec.model, &filter)?;

    let mut eta_violation: f64 = 0.0;
    for t in 0..t_end {
        let mut lhs = spec.unc.sigma_w;
        if spec.unc.eps_a > 0.0 {
            let mut term = (phi_x.block(t, t) * x0).amax();
            for i in 1..=t {
                term += row_abs_sum_max(phi_x.block(t, t - i));
            }
            lhs += spec.unc.eps_a * term;
        }
        if spec.unc.eps_b > 0.0 {
            let mut term = (phi_u.block(t, t) * x0).amax();
            for i in 1..=t {
                term += row_abs_sum_max(phi_u.block(t, t - i));
            }
            lhs += spec.unc.eps_b * term;
        }
        eta_violation = eta_violation.max(lhs - sigma[t]);
    }

    let tightened = |set: &Polytope, op: &BltOperator, t: usize| -> f64 {
        let mut worst: f64 = f64::NEG_INFINITY;
        for fi in 0..set.num_facets() {
            let (f, b) = set.facet(fi);
            let mut lhs = (&f * (op.block(t, t) * x0))[0];
            for i in 1..=t {
                let fr = &f * op.block(t, t - i);
                lhs += fr.iter().map(|v| v.abs()).sum::<f64>();
            }
            worst = worst.max(lhs - b);
        }
        worst.max(0.0)
    };

    let mut state_violation: f64 = 0.0;
    for t in 0..t_end {
        state_violation = state_violation.max(tightened(&spec.state_set, phi_x, t));
    }
    let mut input_violation: f64 = 0.0;
    for t in 0..t_end {
        input_violation = input_violation.max(tightened(&spec.input_set, phi_u, t));
    }
    let terminal_violation = spec
        .terminal_set
        .as_ref()
        .map(|term| tightened(term, phi_x, t_end))
        .unwrap_or(0.0);

    Ok(ConstraintReport {
        affine_residual,
        eta_bound_violation: eta_violation.max(0.0),
        state_violation,
        input_violation,
        terminal_violation,
    })
}
