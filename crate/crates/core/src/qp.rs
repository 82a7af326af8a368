//! Embedded convex quadratic-program solver.
//!
//! Solves problems of the form
//!
//! ```text
//!     minimize    1/2 z' P z + q' z
//!     subject to  l <= A z <= u
//! ```
//!
//! with `P` symmetric positive semidefinite. Equality rows are encoded as
//! `l = u`; one-sided rows use `f64::INFINITY` / `f64::NEG_INFINITY`.
//!
//! The algorithm is operator splitting (ADMM) with over-relaxation, Ruiz
//! equilibration, a fixed-schedule adaptive penalty, and a terminal polish
//! step that solves an equality-constrained KKT system on the detected active
//! set. The linear subproblem is solved through a Cholesky factorization of
//! the condensed matrix `P + sigma*I + A' R A`, refactorized only on penalty
//! updates.
//!
//! Dual sign convention: the stationarity condition is
//! `P z + q + A' y = 0`, so a constraint active at its *lower* bound carries
//! `y < 0` and one active at its *upper* bound carries `y > 0`. For example,
//! `min z^2 s.t. z >= 2` solves to `z = 2`, `y = -4`.
//!
//! Infeasibility is reported with Farkas-type certificates. A primal
//! certificate is a direction `dy` with `A' dy ~ 0` and
//! `u'[dy]+ + l'[dy]- < 0`; certificates are refined by projection onto the
//! null space of `A'` before being accepted, and can be re-verified
//! independently of the solver through [`check_primal_certificate`].

use std::io::{self, BufRead, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Errors raised while constructing or setting up a problem.
#[derive(Debug, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("P is not symmetric within 1e-12 (max asymmetry {0:.3e})")]
    Asymmetric(f64),
    #[error("bounds violate l <= u at row {0}")]
    BoundOrder(usize),
    #[error("P is not positive semidefinite (KKT factorization failed during setup)")]
    NotPsd,
    #[error("malformed problem dump: {0}")]
    Parse(String),
}

/// `min 1/2 z'Pz + q'z  s.t.  l <= Az <= u`.
#[derive(Debug, Clone)]
pub struct StandardQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl StandardQp {
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a: DMatrix<f64>,
        l: DVector<f64>,
        u: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = p.nrows();
        if p.ncols() != n {
            return Err(QpError::Dimension(format!(
                "P must be square, got {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        if q.len() != n {
            return Err(QpError::Dimension(format!(
                "q has length {}, expected {}",
                q.len(),
                n
            )));
        }
        if a.ncols() != n {
            return Err(QpError::Dimension(format!(
                "A has {} columns, expected {}",
                a.ncols(),
                n
            )));
        }
        let m = a.nrows();
        if l.len() != m || u.len() != m {
            return Err(QpError::Dimension(format!(
                "bounds have lengths {}/{}, expected {}",
                l.len(),
                u.len(),
                m
            )));
        }
        let mut asym: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                asym = asym.max((p[(i, j)] - p[(j, i)]).abs());
            }
        }
        if asym > 1e-12 {
            return Err(QpError::Asymmetric(asym));
        }
        for i in 0..m {
            if l[i] > u[i] {
                return Err(QpError::BoundOrder(i));
            }
        }
        Ok(Self { p, q, a, l, u })
    }

    /// Pure feasibility problem: `P = 0, q = 0`.
    pub fn feasibility(a: DMatrix<f64>, l: DVector<f64>, u: DVector<f64>) -> Result<Self, QpError> {
        let n = a.ncols();
        Self::new(DMatrix::zeros(n, n), DVector::zeros(n), a, l, u)
    }

    /// Linear program `min c'z s.t. l <= Az <= u`.
    pub fn lp(c: DVector<f64>, a: DMatrix<f64>, l: DVector<f64>, u: DVector<f64>) -> Result<Self, QpError> {
        let n = a.ncols();
        Self::new(DMatrix::zeros(n, n), c, a, l, u)
    }

    pub fn num_vars(&self) -> usize {
        self.p.nrows()
    }

    pub fn num_constraints(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * (z.transpose() * &self.p * z)[(0, 0)] + self.q.dot(z)
    }

    /// Writes the problem in the plain-text dump format: a dimensions header
    /// followed by row-major entries of each section. Infinite bounds are
    /// written as `inf` / `-inf`.
    pub fn dump<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "standard_qp v1")?;
        writeln!(w, "n {} m {}", self.num_vars(), self.num_constraints())?;
        let write_mat = |w: &mut W, name: &str, m: &DMatrix<f64>| -> io::Result<()> {
            writeln!(w, "{name}")?;
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|j| fmt_entry(m[(i, j)])).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
            Ok(())
        };
        let write_vec = |w: &mut W, name: &str, v: &DVector<f64>| -> io::Result<()> {
            writeln!(w, "{name}")?;
            let row: Vec<String> = v.iter().map(|&x| fmt_entry(x)).collect();
            writeln!(w, "{}", row.join(" "))?;
            Ok(())
        };
        write_mat(w, "P", &self.p)?;
        write_vec(w, "q", &self.q)?;
        write_mat(w, "A", &self.a)?;
        write_vec(w, "l", &self.l)?;
        write_vec(w, "u", &self.u)
    }

    /// Parses a problem previously written by [`StandardQp::dump`].
    pub fn parse<R: BufRead>(r: R) -> Result<Self, QpError> {
        fn next_line<I: Iterator<Item = io::Result<String>>>(
            lines: &mut I,
        ) -> Result<String, QpError> {
            lines
                .next()
                .ok_or_else(|| QpError::Parse("unexpected end of input".into()))?
                .map_err(|e| QpError::Parse(e.to_string()))
        }
        fn expect<I: Iterator<Item = io::Result<String>>>(
            lines: &mut I,
            name: &str,
        ) -> Result<(), QpError> {
            let line = next_line(lines)?;
            if line.trim() != name {
                return Err(QpError::Parse(format!(
                    "expected section {name}, got {line}"
                )));
            }
            Ok(())
        }
        fn parse_row(line: &str, len: usize) -> Result<Vec<f64>, QpError> {
            let vals: Result<Vec<f64>, _> = line.split_whitespace().map(parse_entry).collect();
            let vals = vals?;
            if vals.len() != len {
                return Err(QpError::Parse(format!(
                    "row has {} entries, expected {len}",
                    vals.len()
                )));
            }
            Ok(vals)
        }
        let mut lines = r.lines();
        let header = next_line(&mut lines)?;
        if header.trim() != "standard_qp v1" {
            return Err(QpError::Parse(format!("bad header: {header}")));
        }
        let dims = next_line(&mut lines)?;
        let toks: Vec<&str> = dims.split_whitespace().collect();
        if toks.len() != 4 || toks[0] != "n" || toks[2] != "m" {
            return Err(QpError::Parse(format!("bad dimensions line: {dims}")));
        }
        let n: usize = toks[1]
            .parse()
            .map_err(|_| QpError::Parse("bad n".into()))?;
        let m: usize = toks[3]
            .parse()
            .map_err(|_| QpError::Parse("bad m".into()))?;
        expect(&mut lines, "P")?;
        let mut p = DMatrix::zeros(n, n);
        for i in 0..n {
            let row = parse_row(&next_line(&mut lines)?, n)?;
            for j in 0..n {
                p[(i, j)] = row[j];
            }
        }
        expect(&mut lines, "q")?;
        let q = DVector::from_vec(parse_row(&next_line(&mut lines)?, n)?);
        expect(&mut lines, "A")?;
        let mut a = DMatrix::zeros(m, n);
        for i in 0..m {
            let row = parse_row(&next_line(&mut lines)?, n)?;
            for j in 0..n {
                a[(i, j)] = row[j];
            }
        }
        expect(&mut lines, "l")?;
        let l = DVector::from_vec(parse_row(&next_line(&mut lines)?, m)?);
        expect(&mut lines, "u")?;
        let u = DVector::from_vec(parse_row(&next_line(&mut lines)?, m)?);
        Self::new(p, q, a, l, u)
    }
}

fn fmt_entry(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

fn parse_entry(s: &str) -> Result<f64, QpError> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s
            .parse()
            .map_err(|_| QpError::Parse(format!("bad number: {s}"))),
    }
}

/// Termination status of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Solved,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
}

/// Result of a solve, including residuals and (when infeasible) the
/// certificate direction.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub y: DVector<f64>,
    pub status: SolveStatus,
    pub objective: f64,
    pub prim_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    /// `dy` direction for `PrimalInfeasible`, `dz` for `DualInfeasible`.
    pub certificate: Option<DVector<f64>>,
    pub polished: bool,
}

/// Solver settings. Defaults target general QPs; [`Settings::lp`] tightens
/// tolerances for the support/redundancy/oracle linear programs.
#[derive(Debug, Clone)]
pub struct Settings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_prim_inf: f64,
    pub eps_dual_inf: f64,
    pub max_iter: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub rho: f64,
    pub rho_eq_scale: f64,
    pub check_every: usize,
    pub adapt_rho_every: usize,
    pub ruiz_iters: usize,
    pub polish: bool,
    /// Attempt an active-set polish on a fixed schedule during the iteration
    /// and return early when the polished point meets the absolute
    /// tolerances. Pays off on linear programs, where the ADMM tail is slow
    /// but the active set settles quickly.
    pub early_polish: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            eps_prim_inf: 1e-5,
            eps_dual_inf: 1e-6,
            max_iter: 200_000,
            alpha: 1.6,
            sigma: 1e-6,
            rho: 0.1,
            rho_eq_scale: 1e3,
            check_every: 25,
            adapt_rho_every: 200,
            ruiz_iters: 10,
            polish: true,
            early_polish: false,
        }
    }
}

impl Settings {
    /// Tightened settings for linear programs (support functions, redundancy
    /// checks, feasibility oracles).
    pub fn lp() -> Self {
        Self {
            eps_abs: 1e-8,
            eps_rel: 1e-8,
            early_polish: true,
            ..Self::default()
        }
    }
}

const MIN_SCALING: f64 = 1e-4;
const MAX_SCALING: f64 = 1e4;
// Penalty window kept narrow: the condensed matrix P + sigma I + A'RA must
// stay well-conditioned for the Cholesky subproblem.
const RHO_MIN: f64 = 1e-3;
const RHO_MAX: f64 = 1e3;
const CERT_TOL: f64 = 1e-8;

/// Diagonal scalings produced by Ruiz equilibration.
struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn col_inf_norm(p: &DMatrix<f64>, a: &DMatrix<f64>, j: usize) -> f64 {
    let mut v: f64 = 0.0;
    for i in 0..p.nrows() {
        v = v.max(p[(i, j)].abs());
    }
    for i in 0..a.nrows() {
        v = v.max(a[(i, j)].abs());
    }
    v
}

/// Norms below `MIN_SCALING` count as 1 (no scaling) so degenerate rows,
/// columns, and a zero cost vector never inflate the scaling.
fn limit_scaling(v: f64) -> f64 {
    if v < MIN_SCALING {
        1.0
    } else {
        v.min(MAX_SCALING)
    }
}

fn ruiz_equilibrate(
    p: &mut DMatrix<f64>,
    q: &mut DVector<f64>,
    a: &mut DMatrix<f64>,
    iters: usize,
) -> Scaling {
    let n = p.nrows();
    let m = a.nrows();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let mut c = 1.0;
    let mut dd = DVector::from_element(n, 1.0);
    let mut de = DVector::from_element(m, 1.0);
    for _ in 0..iters {
        // norms from the current data, then one joint application
        for j in 0..n {
            dd[j] = 1.0 / limit_scaling(col_inf_norm(p, a, j)).sqrt();
        }
        for i in 0..m {
            let mut norm: f64 = 0.0;
            for j in 0..n {
                norm = norm.max(a[(i, j)].abs());
            }
            de[i] = 1.0 / limit_scaling(norm).sqrt();
        }
        for j in 0..n {
            for i in 0..n {
                p[(i, j)] *= dd[i] * dd[j];
            }
            q[j] *= dd[j];
            d[j] *= dd[j];
            for i in 0..m {
                a[(i, j)] *= de[i] * dd[j];
            }
        }
        for i in 0..m {
            e[i] *= de[i];
        }
        // cost scaling
        let mut mean_col = 0.0;
        for j in 0..n {
            let mut norm: f64 = 0.0;
            for i in 0..n {
                norm = norm.max(p[(i, j)].abs());
            }
            mean_col += norm;
        }
        if n > 0 {
            mean_col /= n as f64;
        }
        let gamma = 1.0 / limit_scaling(mean_col.max(limit_scaling(q.amax())));
        *p *= gamma;
        *q *= gamma;
        c *= gamma;
    }
    Scaling { d, e, c }
}

/// Builds the condensed matrix `P + sigma I + A' R A` and factorizes it.
fn factorize(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    rho: &DVector<f64>,
    sigma: f64,
) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = p.nrows();
    let m = a.nrows();
    let mut g = p.clone();
    for i in 0..n {
        g[(i, i)] += sigma;
    }
    // G += A' R A, accumulated row by row of A
    for i in 0..m {
        let r = rho[i];
        for j in 0..n {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            let w = r * aij;
            for k in j..n {
                g[(j, k)] += w * a[(i, k)];
            }
        }
    }
    for j in 0..n {
        for k in 0..j {
            g[(j, k)] = g[(k, j)];
        }
    }
    nalgebra::Cholesky::new(g)
}

struct Workspace {
    x: DVector<f64>,
    z: DVector<f64>,
    y: DVector<f64>,
    xt: DVector<f64>,
    zt: DVector<f64>,
    rhs: DVector<f64>,
    dx: DVector<f64>,
    dy: DVector<f64>,
}

/// Solves the QP. Deterministic: identical inputs and settings produce
/// identical iterates.
pub fn solve(qp: &StandardQp, settings: &Settings) -> Result<QpSolution, QpError> {
    let n = qp.num_vars();
    let m = qp.num_constraints();

    let mut ps = qp.p.clone();
    let mut qs = qp.q.clone();
    let mut as_ = qp.a.clone();
    let scaling = ruiz_equilibrate(&mut ps, &mut qs, &mut as_, settings.ruiz_iters);
    let mut ls = DVector::zeros(m);
    let mut us = DVector::zeros(m);
    for i in 0..m {
        ls[i] = qp.l[i] * scaling.e[i];
        us[i] = qp.u[i] * scaling.e[i];
    }

    let is_eq: Vec<bool> = (0..m).map(|i| qp.l[i] == qp.u[i]).collect();
    let mut rho_base = settings.rho;
    let build_rho = |rho_base: f64| -> DVector<f64> {
        DVector::from_fn(m, |i, _| {
            if is_eq[i] {
                (rho_base * settings.rho_eq_scale).clamp(RHO_MIN, RHO_MAX * settings.rho_eq_scale)
            } else {
                rho_base.clamp(RHO_MIN, RHO_MAX)
            }
        })
    };
    let mut rho = build_rho(rho_base);
    let mut chol = factorize(&ps, &as_, &rho, settings.sigma).ok_or(QpError::NotPsd)?;

    let mut w = Workspace {
        x: DVector::zeros(n),
        z: DVector::zeros(m),
        y: DVector::zeros(m),
        xt: DVector::zeros(n),
        zt: DVector::zeros(m),
        rhs: DVector::zeros(n),
        dx: DVector::zeros(n),
        dy: DVector::zeros(m),
    };

    let mut iterations = 0;
    let mut status = SolveStatus::MaxIterations;
    let mut certificate: Option<DVector<f64>> = None;

    while iterations < settings.max_iter {
        iterations += 1;

        // rhs = sigma*x - q + A'(rho.*z - y)
        w.rhs.copy_from(&w.x);
        w.rhs *= settings.sigma;
        w.rhs -= &qs;
        for i in 0..m {
            w.zt[i] = rho[i] * w.z[i] - w.y[i];
        }
        w.rhs.gemv_tr(1.0, &as_, &w.zt, 1.0);
        w.xt.copy_from(&w.rhs);
        chol.solve_mut(&mut w.xt);
        w.zt.gemv(1.0, &as_, &w.xt, 0.0);

        let alpha = settings.alpha;
        // x update (dx tracked for dual-infeasibility detection)
        for j in 0..n {
            let xn = alpha * w.xt[j] + (1.0 - alpha) * w.x[j];
            w.dx[j] = xn - w.x[j];
            w.x[j] = xn;
        }
        // z, y updates
        for i in 0..m {
            let z_pre = alpha * w.zt[i] + (1.0 - alpha) * w.z[i];
            let zn = (z_pre + w.y[i] / rho[i]).clamp(ls[i], us[i]);
            let yn = w.y[i] + rho[i] * (z_pre - zn);
            w.dy[i] = yn - w.y[i];
            w.z[i] = zn;
            w.y[i] = yn;
        }

        if iterations % settings.check_every == 0 || iterations == settings.max_iter {
            let (rp, rd, eps_p, eps_d, norms) =
                residuals(qp, &ps, &qs, &as_, &scaling, &w, settings);
            if std::env::var("QP_DEBUG").is_ok() && iterations % 5000 == 0 {
                eprintln!(
                    "it={iterations} rp={rp:.3e} rd={rd:.3e} eps_p={eps_p:.3e} eps_d={eps_d:.3e} rho={rho_base:.3e} |x|={:.3e} |y|={:.3e}",
                    w.x.amax(),
                    w.y.amax()
                );
            }
            if rp <= eps_p && rd <= eps_d {
                status = SolveStatus::Solved;
                break;
            }
            if settings.early_polish && iterations % 500 == 0 {
                let mut y_un = DVector::zeros(m);
                for i in 0..m {
                    y_un[i] = scaling.e[i] * w.y[i] / scaling.c;
                }
                let attempt = polish(qp, &y_un);
                if std::env::var("QP_DEBUG").is_ok() && iterations % 2000 == 0 {
                    match &attempt {
                        Some((zp, yp)) => {
                            let (rp_u, rd_u) = unscaled_residuals(qp, zp, yp);
                            let act = (0..m).filter(|&i| y_un[i] != 0.0).count();
                            eprintln!("polish it={iterations}: act={act} rp={rp_u:.3e} rd={rd_u:.3e}");
                        }
                        None => eprintln!("polish it={iterations}: failed"),
                    }
                }
                if let Some((zp, yp)) = attempt {
                    let (rp_u, rd_u) = unscaled_residuals(qp, &zp, &yp);
                    if rp_u <= settings.eps_abs && rd_u <= settings.eps_abs {
                        let objective = qp.objective(&zp);
                        return Ok(QpSolution {
                            z: zp,
                            y: yp,
                            status: SolveStatus::Solved,
                            objective,
                            prim_residual: rp_u,
                            dual_residual: rd_u,
                            iterations,
                            certificate: None,
                            polished: true,
                        });
                    }
                }
            }
            if let Some(cert) = primal_infeasibility(qp, &scaling, &w.dy, settings) {
                status = SolveStatus::PrimalInfeasible;
                certificate = Some(cert);
                break;
            }
            if let Some(cert) = dual_infeasibility(qp, &scaling, &w.dx, settings) {
                status = SolveStatus::DualInfeasible;
                certificate = Some(cert);
                break;
            }
            if iterations % settings.adapt_rho_every == 0 {
                let ratio = ((rp / norms.prim.max(1e-12)) / (rd / norms.dual.max(1e-12))).sqrt();
                let new_rho = (rho_base * ratio).clamp(RHO_MIN, RHO_MAX);
                if new_rho > 5.0 * rho_base || new_rho < rho_base / 5.0 {
                    rho_base = new_rho;
                    rho = build_rho(rho_base);
                    chol = factorize(&ps, &as_, &rho, settings.sigma).ok_or(QpError::NotPsd)?;
                }
            }
        }
    }

    // Unscale.
    let mut z_un = DVector::zeros(n);
    for j in 0..n {
        z_un[j] = scaling.d[j] * w.x[j];
    }
    let mut y_un = DVector::zeros(m);
    for i in 0..m {
        y_un[i] = scaling.e[i] * w.y[i] / scaling.c;
    }

    let (mut prim_res, mut dual_res) = unscaled_residuals(qp, &z_un, &y_un);
    let mut polished = false;

    if status == SolveStatus::Solved && settings.polish {
        if let Some((zp, yp)) = polish(qp, &y_un) {
            let (rp, rd) = unscaled_residuals(qp, &zp, &yp);
            if rp.max(rd) < prim_res.max(dual_res) {
                z_un = zp;
                y_un = yp;
                prim_res = rp;
                dual_res = rd;
                polished = true;
            }
        }
    }

    if std::env::var("QP_SLOW").is_ok() && iterations > 5_000 {
        eprintln!(
            "slow solve: n={n} m={m} status={status:?} iters={iterations} rp={prim_res:.2e} rd={dual_res:.2e}"
        );
    }
    let objective = qp.objective(&z_un);
    Ok(QpSolution {
        z: z_un,
        y: y_un,
        status,
        objective,
        prim_residual: prim_res,
        dual_residual: dual_res,
        iterations,
        certificate,
        polished,
    })
}

/// Solves `min c'z s.t. l <= Az <= u` with tightened tolerances. Pass `c = 0`
/// for a pure feasibility check.
pub fn solve_lp(
    c: DVector<f64>,
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
) -> Result<QpSolution, QpError> {
    let qp = StandardQp::lp(c, a, l, u)?;
    solve(&qp, &Settings::lp())
}

struct ResidualNorms {
    prim: f64,
    dual: f64,
}

fn residuals(
    qp: &StandardQp,
    ps: &DMatrix<f64>,
    qs: &DVector<f64>,
    as_: &DMatrix<f64>,
    scaling: &Scaling,
    w: &Workspace,
    settings: &Settings,
) -> (f64, f64, f64, f64, ResidualNorms) {
    let n = qp.num_vars();
    let m = qp.num_constraints();
    let mut ax = DVector::zeros(m);
    ax.gemv(1.0, as_, &w.x, 0.0);
    let mut px = DVector::zeros(n);
    px.gemv(1.0, ps, &w.x, 0.0);
    let mut aty = DVector::zeros(n);
    aty.gemv_tr(1.0, as_, &w.y, 0.0);

    let mut rp: f64 = 0.0;
    let mut ax_n: f64 = 0.0;
    let mut z_n: f64 = 0.0;
    for i in 0..m {
        let inv_e = 1.0 / scaling.e[i];
        rp = rp.max(((ax[i] - w.z[i]) * inv_e).abs());
        ax_n = ax_n.max((ax[i] * inv_e).abs());
        z_n = z_n.max((w.z[i] * inv_e).abs());
    }
    let mut rd: f64 = 0.0;
    let mut px_n: f64 = 0.0;
    let mut aty_n: f64 = 0.0;
    let mut q_n: f64 = 0.0;
    let inv_c = 1.0 / scaling.c;
    for j in 0..n {
        let inv_d = 1.0 / scaling.d[j];
        rd = rd.max(((px[j] + qs[j] + aty[j]) * inv_d * inv_c).abs());
        px_n = px_n.max((px[j] * inv_d * inv_c).abs());
        aty_n = aty_n.max((aty[j] * inv_d * inv_c).abs());
        q_n = q_n.max((qs[j] * inv_d * inv_c).abs());
    }
    let eps_p = settings.eps_abs + settings.eps_rel * ax_n.max(z_n);
    let eps_d = settings.eps_abs + settings.eps_rel * px_n.max(aty_n).max(q_n);
    (
        rp,
        rd,
        eps_p,
        eps_d,
        ResidualNorms {
            prim: ax_n.max(z_n),
            dual: px_n.max(aty_n).max(q_n),
        },
    )
}

fn unscaled_residuals(qp: &StandardQp, z: &DVector<f64>, y: &DVector<f64>) -> (f64, f64) {
    let m = qp.num_constraints();
    let mut az = DVector::zeros(m);
    az.gemv(1.0, &qp.a, z, 0.0);
    let mut rp: f64 = 0.0;
    for i in 0..m {
        let proj = az[i].clamp(qp.l[i], qp.u[i]);
        rp = rp.max((az[i] - proj).abs());
    }
    let n = qp.num_vars();
    let mut rd_vec = qp.q.clone();
    rd_vec.gemv(1.0, &qp.p, z, 1.0);
    rd_vec.gemv_tr(1.0, &qp.a, y, 1.0);
    let mut rd: f64 = 0.0;
    for j in 0..n {
        rd = rd.max(rd_vec[j].abs());
    }
    (rp, rd)
}

/// Outcome of an independent Farkas-certificate verification.
#[derive(Debug, Clone, Copy)]
pub struct CertificateCheck {
    /// `||A' dy||_inf / ||dy||_inf`
    pub normal_residual: f64,
    /// `u'[dy]+ + l'[dy]-` after normalizing `||dy||_inf = 1`; valid
    /// certificates are strictly negative. `+inf` marks a sign violation on a
    /// one-sided row.
    pub support_value: f64,
    pub valid: bool,
}

/// Re-checks a primal infeasibility certificate from the problem data alone,
/// independently of the solver's internal bookkeeping.
pub fn check_primal_certificate(qp: &StandardQp, dy: &DVector<f64>, tol: f64) -> CertificateCheck {
    let norm = dy.amax();
    if norm <= 0.0 {
        return CertificateCheck {
            normal_residual: f64::INFINITY,
            support_value: f64::INFINITY,
            valid: false,
        };
    }
    let n = qp.num_vars();
    let mut aty = DVector::zeros(n);
    aty.gemv_tr(1.0, &qp.a, dy, 0.0);
    let normal_residual = aty.amax() / norm;
    let mut support = 0.0;
    let mut sign_ok = true;
    for i in 0..qp.num_constraints() {
        let v = dy[i] / norm;
        if v > tol {
            if qp.u[i] == f64::INFINITY {
                sign_ok = false;
                break;
            }
            support += qp.u[i] * v;
        } else if v < -tol {
            if qp.l[i] == f64::NEG_INFINITY {
                sign_ok = false;
                break;
            }
            support += qp.l[i] * v;
        }
    }
    let support_value = if sign_ok { support } else { f64::INFINITY };
    CertificateCheck {
        normal_residual,
        support_value,
        valid: sign_ok && normal_residual <= tol && support_value <= -tol,
    }
}

/// Detects primal infeasibility from the dual-iterate difference and refines
/// the direction by projecting onto the null space of `A'` before accepting.
fn primal_infeasibility(
    qp: &StandardQp,
    scaling: &Scaling,
    dy_scaled: &DVector<f64>,
    settings: &Settings,
) -> Option<DVector<f64>> {
    let m = qp.num_constraints();
    if m == 0 {
        return None;
    }
    let mut dy = DVector::zeros(m);
    for i in 0..m {
        dy[i] = scaling.e[i] * dy_scaled[i];
    }
    let norm = dy.amax();
    if norm <= 1e-12 {
        return None;
    }
    dy /= norm;
    // Cheap trigger test before the expensive refinement.
    let quick = check_primal_certificate(qp, &dy, settings.eps_prim_inf);
    if !quick.valid {
        return None;
    }
    // Refine: dy <- dy - A w with (A'A + reg I) w = A' dy, then re-verify at
    // the certificate tolerance.
    let n = qp.num_vars();
    let mut ata = DMatrix::zeros(n, n);
    ata.gemm_tr(1.0, &qp.a, &qp.a, 0.0);
    for j in 0..n {
        ata[(j, j)] += 1e-12;
    }
    let mut aty = DVector::zeros(n);
    aty.gemv_tr(1.0, &qp.a, &dy, 0.0);
    if let Some(chol) = nalgebra::Cholesky::new(ata) {
        let w = chol.solve(&aty);
        let mut refined = dy.clone();
        refined.gemv(-1.0, &qp.a, &w, 1.0);
        let rn = refined.amax();
        if rn > 1e-12 {
            refined /= rn;
            let check = check_primal_certificate(qp, &refined, CERT_TOL);
            if check.valid {
                return Some(refined);
            }
        }
    }
    // Accept the unrefined direction only if it already meets the strict
    // certificate tolerance.
    let strict = check_primal_certificate(qp, &dy, CERT_TOL);
    if strict.valid {
        Some(dy)
    } else {
        None
    }
}

fn dual_infeasibility(
    qp: &StandardQp,
    scaling: &Scaling,
    dx_scaled: &DVector<f64>,
    settings: &Settings,
) -> Option<DVector<f64>> {
    let n = qp.num_vars();
    let mut dx = DVector::zeros(n);
    for j in 0..n {
        dx[j] = scaling.d[j] * dx_scaled[j];
    }
    let norm = dx.amax();
    if norm <= 1e-12 {
        return None;
    }
    dx /= norm;
    let eps = settings.eps_dual_inf;
    let mut pdx = DVector::zeros(n);
    pdx.gemv(1.0, &qp.p, &dx, 0.0);
    if pdx.amax() > eps {
        return None;
    }
    if qp.q.dot(&dx) > -eps {
        return None;
    }
    let m = qp.num_constraints();
    let mut adx = DVector::zeros(m);
    adx.gemv(1.0, &qp.a, &dx, 0.0);
    for i in 0..m {
        let v = adx[i];
        let l_inf = qp.l[i] == f64::NEG_INFINITY;
        let u_inf = qp.u[i] == f64::INFINITY;
        let ok = match (l_inf, u_inf) {
            (true, true) => true,
            (false, true) => v >= -eps,
            (true, false) => v <= eps,
            (false, false) => v.abs() <= eps,
        };
        if !ok {
            return None;
        }
    }
    Some(dx)
}

/// Active-set polish: solves the equality-constrained KKT system on the rows
/// detected active from the dual variables, trying a ladder of magnitude
/// thresholds (stale multipliers from the ADMM oscillation otherwise
/// contaminate the active set) and keeping the best verified candidate.
fn polish(qp: &StandardQp, y: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let y_norm = y.amax();
    let mut best: Option<(DVector<f64>, DVector<f64>, f64)> = None;
    for thr_rel in [0.0, 1e-8, 1e-6, 1e-4, 1e-2] {
        let thr = thr_rel * y_norm;
        if let Some((zp, yp)) = polish_with_threshold(qp, y, thr) {
            let (rp, rd) = unscaled_residuals(qp, &zp, &yp);
            let score = rp.max(rd);
            if !score.is_finite() {
                continue;
            }
            let better = best.as_ref().map_or(true, |(_, _, s)| score < *s);
            if better {
                let done = score <= 1e-10;
                best = Some((zp, yp, score));
                if done {
                    break;
                }
            }
        }
    }
    best.map(|(z, y, _)| (z, y))
}

fn polish_with_threshold(
    qp: &StandardQp,
    y: &DVector<f64>,
    thr: f64,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = qp.num_vars();
    let m = qp.num_constraints();
    let mut active: Vec<(usize, f64)> = Vec::new(); // (row, bound value)
    for i in 0..m {
        if qp.l[i] == qp.u[i] {
            active.push((i, qp.l[i]));
        } else if y[i] < -thr {
            active.push((i, qp.l[i]));
        } else if y[i] > thr {
            active.push((i, qp.u[i]));
        }
    }
    let k = active.len();
    let dim = n + k;
    let delta = 1e-9;
    let mut kkt = DMatrix::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            kkt[(i, j)] = qp.p[(i, j)];
        }
        kkt[(i, i)] += delta;
    }
    for (r, &(row, _)) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = qp.a[(row, j)];
            kkt[(j, n + r)] = qp.a[(row, j)];
        }
        kkt[(n + r, n + r)] = -delta;
    }
    let mut rhs = DVector::zeros(dim);
    for j in 0..n {
        rhs[j] = -qp.q[j];
    }
    for (r, &(_, b)) in active.iter().enumerate() {
        rhs[n + r] = b;
    }
    let lu = kkt.clone().lu();
    let mut sol = lu.solve(&rhs)?;
    // Iterative refinement against the unregularized system.
    for _ in 0..3 {
        let mut resid = rhs.clone();
        // resid -= K0 * sol where K0 is the unregularized KKT
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += qp.p[(i, j)] * sol[j];
            }
            for (r, &(row, _)) in active.iter().enumerate() {
                acc += qp.a[(row, i)] * sol[n + r];
            }
            resid[i] -= acc;
        }
        for (r, &(row, _)) in active.iter().enumerate() {
            let mut acc = 0.0;
            for j in 0..n {
                acc += qp.a[(row, j)] * sol[j];
            }
            resid[n + r] -= acc;
        }
        let corr = lu.solve(&resid)?;
        sol += corr;
    }
    let zp = DVector::from_fn(n, |j, _| sol[j]);
    let mut yp = DVector::zeros(m);
    for (r, &(row, _)) in active.iter().enumerate() {
        yp[row] = sol[n + r];
    }
    if zp.iter().any(|v| !v.is_finite()) || yp.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((zp, yp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn unconstrained_minimum() {
        let qp = StandardQp::new(
            mat(1, 1, &[1.0]),
            DVector::from_vec(vec![-1.0]),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = solve(&qp, &Settings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Solved);
        assert_abs_diff_eq!(sol.z[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.objective, -0.5, epsilon = 1e-6);
    }

    #[test]
    fn active_lower_bound_dual_sign() {
        // min z^2 s.t. z >= 2 -> z = 2, y = -4 under the documented convention
        let qp = StandardQp::new(
            mat(1, 1, &[2.0]),
            DVector::zeros(1),
            mat(1, 1, &[1.0]),
            DVector::from_vec(vec![2.0]),
            DVector::from_vec(vec![f64::INFINITY]),
        )
        .unwrap();
        let sol = solve(&qp, &Settings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Solved);
        assert_abs_diff_eq!(sol.z[0], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.y[0], -4.0, epsilon = 1e-5);
    }

    #[test]
    fn detects_primal_infeasibility_with_certificate() {
        // z >= 1 and z <= 0
        let qp = StandardQp::new(
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            mat(2, 1, &[1.0, 1.0]),
            DVector::from_vec(vec![1.0, f64::NEG_INFINITY]),
            DVector::from_vec(vec![f64::INFINITY, 0.0]),
        )
        .unwrap();
        let sol = solve(&qp, &Settings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::PrimalInfeasible);
        let cert = sol.certificate.expect("certificate present");
        let check = check_primal_certificate(&qp, &cert, 1e-8);
        assert!(check.valid, "certificate check failed: {check:?}");
    }

    #[test]
    fn detects_unbounded_lp() {
        // min -z s.t. z >= 0: unbounded below
        let qp = StandardQp::new(
            DMatrix::zeros(1, 1),
            DVector::from_vec(vec![-1.0]),
            mat(1, 1, &[1.0]),
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![f64::INFINITY]),
        )
        .unwrap();
        let sol = solve(&qp, &Settings::lp()).unwrap();
        assert_eq!(sol.status, SolveStatus::DualInfeasible);
    }

    #[test]
    fn lp_support_over_unit_box() {
        // max x1 over [-1,1]^2 -> 1
        let c = DVector::from_vec(vec![-1.0, 0.0]);
        let a = mat(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let l = DVector::from_vec(vec![-1.0, -1.0]);
        let u = DVector::from_vec(vec![1.0, 1.0]);
        let sol = solve_lp(c, a, l, u).unwrap();
        assert_eq!(sol.status, SolveStatus::Solved);
        assert_abs_diff_eq!(sol.z[0], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn deterministic_iterates() {
        let qp = StandardQp::new(
            mat(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            DVector::from_vec(vec![-1.0, 0.3]),
            mat(3, 2, &[1.0, 1.0, 1.0, -1.0, 0.3, 0.7]),
            DVector::from_vec(vec![-1.0, -2.0, -0.5]),
            DVector::from_vec(vec![1.0, 2.0, 0.5]),
        )
        .unwrap();
        let s1 = solve(&qp, &Settings::default()).unwrap();
        let s2 = solve(&qp, &Settings::default()).unwrap();
        assert_eq!(s1.iterations, s2.iterations);
        assert_eq!(s1.z.as_slice(), s2.z.as_slice());
        assert_eq!(s1.y.as_slice(), s2.y.as_slice());
    }

    #[test]
    fn row_scaling_does_not_change_status() {
        let base = StandardQp::new(
            mat(2, 2, &[2.0, 0.0, 0.0, 2.0]),
            DVector::from_vec(vec![-1.0, -1.0]),
            mat(2, 2, &[1.0, 1.0, 1.0, -1.0]),
            DVector::from_vec(vec![f64::NEG_INFINITY, -0.5]),
            DVector::from_vec(vec![1.0, 0.5]),
        )
        .unwrap();
        let mut scaled = base.clone();
        for j in 0..2 {
            scaled.a[(0, j)] *= 10.0;
        }
        scaled.l[0] *= 10.0;
        scaled.u[0] *= 10.0;
        let s1 = solve(&base, &Settings::default()).unwrap();
        let s2 = solve(&scaled, &Settings::default()).unwrap();
        assert_eq!(s1.status, s2.status);
        assert_abs_diff_eq!(s1.z[0], s2.z[0], epsilon = 1e-5);
    }

    #[test]
    fn rejects_non_psd() {
        let qp = StandardQp::new(
            mat(1, 1, &[-1.0]),
            DVector::zeros(1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DVector::zeros(0),
        )
        .unwrap();
        assert!(matches!(solve(&qp, &Settings::default()), Err(QpError::NotPsd)));
    }

    #[test]
    fn dump_round_trip() {
        let qp = StandardQp::new(
            mat(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            DVector::from_vec(vec![-1.0, 0.25]),
            mat(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DVector::from_vec(vec![f64::NEG_INFINITY, -1.0]),
            DVector::from_vec(vec![1.0, f64::INFINITY]),
        )
        .unwrap();
        let mut buf = Vec::new();
        qp.dump(&mut buf).unwrap();
        let back = StandardQp::parse(io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(qp.p.as_slice(), back.p.as_slice());
        assert_eq!(qp.q.as_slice(), back.q.as_slice());
        assert_eq!(qp.a.as_slice(), back.a.as_slice());
        assert_eq!(qp.l.as_slice(), back.l.as_slice());
        assert_eq!(qp.u.as_slice(), back.u.as_slice());
    }

    #[test]
    fn bound_order_rejected() {
        let err = StandardQp::new(
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            mat(1, 1, &[1.0]),
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![0.0]),
        );
        assert!(matches!(err, Err(QpError::BoundOrder(0))));
    }
}
