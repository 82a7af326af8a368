//! Block-lower-triangular (BLT) causal operators over a finite horizon.
//!
//! An operator over horizon `T` has `T + 1` block rows and columns with
//! blocks `R^{i,j}` sitting in block row `i`, block column `i - j`; the
//! superscript `j` is the lag of the disturbance the block acts on:
//!
//! ```text
//!     [ R^{0,0}                        ]
//!     [ R^{1,1}  R^{1,0}               ]
//!     [   ...      ...     ...         ]
//!     [ R^{T,T}   ...    R^{T,1} R^{T,0} ]
//! ```
//!
//! The strictly upper block triangle is identically zero by construction
//! (causality), and all stored blocks share the same dimensions.
//! Operators are immutable after construction and safe to share across
//! threads.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BltError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular diagonal block at block row {0}")]
    SingularDiagonalBlock(usize),
}

/// Nominal dynamics `x+ = A_hat x + B_hat u`. No stability assumption is
/// made on `A_hat`.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
}

impl SystemModel {
    pub fn new(a_hat: DMatrix<f64>, b_hat: DMatrix<f64>) -> Result<Self, BltError> {
        if a_hat.nrows() != a_hat.ncols() {
            return Err(BltError::Dimension(format!(
                "A_hat must be square, got {}x{}",
                a_hat.nrows(),
                a_hat.ncols()
            )));
        }
        if b_hat.nrows() != a_hat.nrows() {
            return Err(BltError::Dimension(format!(
                "B_hat has {} rows, expected {}",
                b_hat.nrows(),
                a_hat.nrows()
            )));
        }
        Ok(Self { a_hat, b_hat })
    }

    pub fn nx(&self) -> usize {
        self.a_hat.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b_hat.ncols()
    }
}

/// Uncertainty description: `||Delta_A|| <= eps_a`, `||Delta_B|| <= eps_b`
/// in the `l_inf -> l_inf` induced norm, and `||w||_inf <= sigma_w`.
#[derive(Debug, Clone, Copy)]
pub struct UncertaintyParams {
    pub eps_a: f64,
    pub eps_b: f64,
    pub sigma_w: f64,
}

impl UncertaintyParams {
    pub fn new(eps_a: f64, eps_b: f64, sigma_w: f64) -> Result<Self, BltError> {
        if eps_a < 0.0 || eps_b < 0.0 || sigma_w < 0.0 {
            return Err(BltError::Dimension(
                "uncertainty parameters must be nonnegative".into(),
            ));
        }
        Ok(Self {
            eps_a,
            eps_b,
            sigma_w,
        })
    }

    pub fn zero() -> Self {
        Self {
            eps_a: 0.0,
            eps_b: 0.0,
            sigma_w: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.eps_a == 0.0 && self.eps_b == 0.0 && self.sigma_w == 0.0
    }
}

/// Block-lower-triangular operator. `blocks[i][j]` stores `R^{i,j}` (block
/// row `i`, lag `j`, block column `i - j`).
#[derive(Debug, Clone)]
pub struct BltOperator {
    horizon: usize,
    block_rows: usize,
    block_cols: usize,
    blocks: Vec<Vec<DMatrix<f64>>>,
}

impl BltOperator {
    pub fn zero(horizon: usize, block_rows: usize, block_cols: usize) -> Self {
        assert!(block_rows >= 1 && block_cols >= 1);
        let blocks = (0..=horizon)
            .map(|i| vec![DMatrix::zeros(block_rows, block_cols); i + 1])
            .collect();
        Self {
            horizon,
            block_rows,
            block_cols,
            blocks,
        }
    }

    /// Identity operator with `n x n` blocks.
    pub fn identity(horizon: usize, n: usize) -> Self {
        let mut op = Self::zero(horizon, n, n);
        for i in 0..=horizon {
            op.blocks[i][0] = DMatrix::identity(n, n);
        }
        op
    }

    /// Block-downshift operator `Z`: identity blocks on the first block
    /// sub-diagonal, zeros elsewhere.
    pub fn block_downshift(horizon: usize, n: usize) -> Self {
        let mut op = Self::zero(horizon, n, n);
        for i in 1..=horizon {
            op.blocks[i][1] = DMatrix::identity(n, n);
        }
        op
    }

    /// `blkdiag(M, ..., M, 0)` when `zero_last` (the last diagonal block is
    /// zero), otherwise `blkdiag(M, ..., M)`.
    pub fn block_diagonal(m: &DMatrix<f64>, horizon: usize, zero_last: bool) -> Self {
        let mut op = Self::zero(horizon, m.nrows(), m.ncols());
        let last = if zero_last { horizon } else { horizon + 1 };
        for i in 0..=horizon {
            if i < last {
                op.blocks[i][0] = m.clone();
            }
        }
        op
    }

    /// The filter `blkdiag(I, sigma_0 I, ..., sigma_{T-1} I)` over horizon
    /// `T = sigmas.len()`.
    pub fn sigma_filter(sigmas: &[f64], n: usize) -> Self {
        let horizon = sigmas.len();
        let mut op = Self::zero(horizon, n, n);
        op.blocks[0][0] = DMatrix::identity(n, n);
        for (t, &s) in sigmas.iter().enumerate() {
            op.blocks[t + 1][0] = DMatrix::identity(n, n) * s;
        }
        op
    }

    pub fn from_block_fn<F>(horizon: usize, block_rows: usize, block_cols: usize, mut f: F) -> Self
    where
        F: FnMut(usize, usize) -> DMatrix<f64>,
    {
        let mut op = Self::zero(horizon, block_rows, block_cols);
        for i in 0..=horizon {
            for j in 0..=i {
                let b = f(i, j);
                assert_eq!((b.nrows(), b.ncols()), (block_rows, block_cols));
                op.blocks[i][j] = b;
            }
        }
        op
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn block_rows(&self) -> usize {
        self.block_rows
    }

    pub fn block_cols(&self) -> usize {
        self.block_cols
    }

    /// Block `R^{i,j}` (block row `i`, lag `j`).
    pub fn block(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.blocks[i][j]
    }

    pub fn set_block(&mut self, i: usize, j: usize, b: DMatrix<f64>) {
        assert_eq!((b.nrows(), b.ncols()), (self.block_rows, self.block_cols));
        self.blocks[i][j] = b;
    }

    /// Block at matrix position (block row `i`, block column `c`), `c <= i`.
    pub fn block_at(&self, i: usize, c: usize) -> &DMatrix<f64> {
        &self.blocks[i][i - c]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = self.block_rows;
        let q = self.block_cols;
        let mut dense = DMatrix::zeros((self.horizon + 1) * p, (self.horizon + 1) * q);
        for i in 0..=self.horizon {
            for j in 0..=i {
                let c = i - j;
                dense
                    .view_mut((i * p, c * q), (p, q))
                    .copy_from(&self.blocks[i][j]);
            }
        }
        dense
    }

    pub fn max_abs(&self) -> f64 {
        let mut v: f64 = 0.0;
        for row in &self.blocks {
            for b in row {
                v = v.max(b.amax());
            }
        }
        v
    }

    pub fn multiply(&self, rhs: &BltOperator) -> Result<BltOperator, BltError> {
        if self.block_cols != rhs.block_rows {
            return Err(BltError::Dimension(format!(
                "block dims {}x{} * {}x{}",
                self.block_rows, self.block_cols, rhs.block_rows, rhs.block_cols
            )));
        }
        if self.horizon != rhs.horizon {
            return Err(BltError::Dimension(format!(
                "horizons {} vs {}",
                self.horizon, rhs.horizon
            )));
        }
        let mut out = BltOperator::zero(self.horizon, self.block_rows, rhs.block_cols);
        for i in 0..=self.horizon {
            for c in 0..=i {
                let mut acc = DMatrix::zeros(self.block_rows, rhs.block_cols);
                for k in c..=i {
                    acc.gemm(1.0, self.block_at(i, k), rhs.block_at(k, c), 1.0);
                }
                out.blocks[i][i - c] = acc;
            }
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &BltOperator) -> Result<BltOperator, BltError> {
        self.zip(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &BltOperator) -> Result<BltOperator, BltError> {
        self.zip(rhs, |a, b| a - b)
    }

    fn zip<F>(&self, rhs: &BltOperator, f: F) -> Result<BltOperator, BltError>
    where
        F: Fn(&DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64>,
    {
        if self.horizon != rhs.horizon
            || self.block_rows != rhs.block_rows
            || self.block_cols != rhs.block_cols
        {
            return Err(BltError::Dimension("operator shapes differ".into()));
        }
        let mut out = self.clone();
        for i in 0..=self.horizon {
            for j in 0..=i {
                out.blocks[i][j] = f(&self.blocks[i][j], &rhs.blocks[i][j]);
            }
        }
        Ok(out)
    }

    /// Inverse by block forward substitution. Requires square blocks with
    /// every diagonal block invertible.
    pub fn inverse(&self) -> Result<BltOperator, BltError> {
        if self.block_rows != self.block_cols {
            return Err(BltError::Dimension("blocks must be square".into()));
        }
        let n = self.block_rows;
        let mut diag_inv = Vec::with_capacity(self.horizon + 1);
        for i in 0..=self.horizon {
            let inv = self.blocks[i][0]
                .clone()
                .try_inverse()
                .ok_or(BltError::SingularDiagonalBlock(i))?;
            diag_inv.push(inv);
        }
        let mut out = BltOperator::zero(self.horizon, n, n);
        for c in 0..=self.horizon {
            out.blocks[c][0] = diag_inv[c].clone();
            for i in (c + 1)..=self.horizon {
                let mut acc = DMatrix::zeros(n, n);
                for k in c..i {
                    acc.gemm(1.0, self.block_at(i, k), out.block_at(k, c), 1.0);
                }
                out.blocks[i][i - c] = -&diag_inv[i] * acc;
            }
        }
        Ok(out)
    }

    /// Applies the operator to a stacked vector.
    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>, BltError> {
        let q = self.block_cols;
        let p = self.block_rows;
        if v.len() != (self.horizon + 1) * q {
            return Err(BltError::Dimension(format!(
                "vector length {} vs {}",
                v.len(),
                (self.horizon + 1) * q
            )));
        }
        let mut out = DVector::zeros((self.horizon + 1) * p);
        for i in 0..=self.horizon {
            for c in 0..=i {
                let seg = v.rows(c * q, q);
                let mut dst = out.rows_mut(i * p, p);
                dst.gemv(1.0, self.block_at(i, c), &seg, 1.0);
            }
        }
        Ok(out)
    }
}

/// `K = Phi_u Phi_x^{-1}`: the state-feedback controller achieving the given
/// system responses.
pub fn controller_from_responses(
    phi_x: &BltOperator,
    phi_u: &BltOperator,
) -> Result<BltOperator, BltError> {
    phi_u.multiply(&phi_x.inverse()?)
}

/// Builds the responses achieved by a controller `K` under the filter
/// `Sigma`: `Phi_x = (I - Z(A_hat + B_hat K))^{-1} Sigma`, `Phi_u = K Phi_x`.
pub fn build_responses(
    k: &BltOperator,
    model: &SystemModel,
    sigma: &BltOperator,
) -> Result<(BltOperator, BltOperator), BltError> {
    let t = k.horizon();
    let nx = model.nx();
    if k.block_rows() != model.nu() || k.block_cols() != nx {
        return Err(BltError::Dimension("controller block dims".into()));
    }
    let a_diag = BltOperator::block_diagonal(&model.a_hat, t, true);
    let b_diag = BltOperator::block_diagonal(&model.b_hat, t, true);
    let z = BltOperator::block_downshift(t, nx);
    let closed = a_diag.add(&b_diag.multiply(k)?)?;
    let m = BltOperator::identity(t, nx).sub(&z.multiply(&closed)?)?;
    let phi_x = m.inverse()?.multiply(sigma)?;
    let phi_u = k.multiply(&phi_x)?;
    Ok((phi_x, phi_u))
}

/// Max-abs residual of the response constraint
/// `[I - Z A_hat, -Z B_hat][Phi_x; Phi_u] = Sigma`.
pub fn validate_affine_constraint(
    phi_x: &BltOperator,
    phi_u: &BltOperator,
    model: &SystemModel,
    sigma: &BltOperator,
) -> Result<f64, BltError> {
    let t = phi_x.horizon();
    let nx = model.nx();
    if phi_x.block_rows() != nx || phi_u.block_rows() != model.nu() {
        return Err(BltError::Dimension("response block dims".into()));
    }
    let a_diag = BltOperator::block_diagonal(&model.a_hat, t, true);
    let b_diag = BltOperator::block_diagonal(&model.b_hat, t, true);
    let z = BltOperator::block_downshift(t, nx);
    let za = z.multiply(&a_diag)?;
    let zb = z.multiply(&b_diag)?;
    let residual = phi_x
        .sub(&za.multiply(phi_x)?)?
        .sub(&zb.multiply(phi_u)?)?
        .sub(sigma)?;
    Ok(residual.max_abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_blt(rng: &mut StdRng, t: usize, p: usize, q: usize, scale: f64) -> BltOperator {
        BltOperator::from_block_fn(t, p, q, |_, _| {
            DMatrix::from_fn(p, q, |_, _| rng.random_range(-scale..scale))
        })
    }

    #[test]
    fn downshift_degenerate_horizon() {
        let z = BltOperator::block_downshift(0, 2);
        assert_eq!(z.to_dense(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn downshift_definition() {
        let z = BltOperator::block_downshift(1, 1);
        assert_eq!(
            z.to_dense(),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0])
        );
    }

    #[test]
    fn downshift_composes_to_second_subdiagonal() {
        let z = BltOperator::block_downshift(2, 2);
        let zz = z.multiply(&z).unwrap();
        let dense = zz.to_dense();
        let mut expected = DMatrix::zeros(6, 6);
        expected.view_mut((4, 0), (2, 2)).copy_from(&DMatrix::identity(2, 2));
        assert_eq!(dense, expected);
    }

    #[test]
    fn identity_multiplication() {
        let mut rng = StdRng::seed_from_u64(7);
        let r = random_blt(&mut rng, 3, 2, 2, 1.0);
        let id = BltOperator::identity(3, 2);
        let prod = id.multiply(&r).unwrap();
        assert_eq!(prod.to_dense(), r.to_dense());
    }

    #[test]
    fn downshift_times_block_diagonal_matches_structure() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.15, 0.1, 1.0]);
        let z = BltOperator::block_downshift(2, 2);
        let ad = BltOperator::block_diagonal(&a, 2, true);
        let za = z.multiply(&ad).unwrap();
        // A on the first sub-diagonal of block rows 1..=T, zero elsewhere
        for i in 0..=2usize {
            for j in 0..=i {
                let b = za.block(i, j);
                if i >= 1 && j == 1 {
                    assert_eq!(b, &a);
                } else {
                    assert_eq!(b.amax(), 0.0);
                }
            }
        }
    }

    #[test]
    fn multiply_matches_dense_product() {
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..10 {
            let t = rng.random_range(0..5usize);
            let p = rng.random_range(1..4usize);
            let q = rng.random_range(1..4usize);
            let r = rng.random_range(1..4usize);
            let left = random_blt(&mut rng, t, p, q, 1.0);
            let right = random_blt(&mut rng, t, q, r, 1.0);
            let prod = left.multiply(&right).unwrap();
            let dense = left.to_dense() * right.to_dense();
            assert!((prod.to_dense() - dense).amax() <= 1e-12);
        }
    }

    #[test]
    fn inverse_of_identity() {
        let id = BltOperator::identity(3, 2);
        let inv = id.inverse().unwrap();
        assert_eq!(inv.to_dense(), DMatrix::identity(8, 8));
    }

    #[test]
    fn inverse_two_block_case() {
        // [[I,0],[A,I]]^{-1} = [[I,0],[-A,I]]
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 0.5, 0.1]);
        let mut m = BltOperator::identity(1, 2);
        m.set_block(1, 1, a.clone());
        let inv = m.inverse().unwrap();
        assert_eq!(inv.block(0, 0), &DMatrix::identity(2, 2));
        assert_eq!(inv.block(1, 0), &DMatrix::identity(2, 2));
        assert!((inv.block(1, 1) + a).amax() <= 1e-15);
    }

    #[test]
    fn inverse_multiplies_back_to_identity() {
        let mut rng = StdRng::seed_from_u64(3);
        let mut m = random_blt(&mut rng, 4, 3, 3, 0.8);
        for i in 0..=4 {
            m.set_block(i, 0, DMatrix::identity(3, 3) * 0.3);
        }
        let inv = m.inverse().unwrap();
        let prod = m.multiply(&inv).unwrap();
        let residual = (prod.to_dense() - DMatrix::identity(15, 15)).amax();
        assert!(residual <= 1e-10, "residual {residual}");
    }

    #[test]
    fn singular_diagonal_reports_block_index() {
        let mut m = BltOperator::identity(2, 2);
        m.set_block(1, 0, DMatrix::zeros(2, 2));
        match m.inverse() {
            Err(BltError::SingularDiagonalBlock(1)) => {}
            other => panic!("expected singular block 1, got {other:?}"),
        }
    }

    fn paper_model() -> SystemModel {
        SystemModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.15, 0.1, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.1, 1.1]),
        )
        .unwrap()
    }

    #[test]
    fn zero_input_response_gives_zero_controller() {
        let model = paper_model();
        let sigma = BltOperator::sigma_filter(&[0.5, 0.7, 0.4], 2);
        let k = BltOperator::zero(3, 1, 2);
        let (phi_x, phi_u) = build_responses(&k, &model, &sigma).unwrap();
        let rec = controller_from_responses(&phi_x, &phi_u).unwrap();
        assert_eq!(rec.max_abs(), 0.0);
    }

    #[test]
    fn controller_round_trip() {
        let mut rng = StdRng::seed_from_u64(11);
        let model = paper_model();
        let k = random_blt(&mut rng, 4, 1, 2, 0.5);
        let sigmas: Vec<f64> = (0..4).map(|_| rng.random_range(0.2..1.5)).collect();
        let sigma = BltOperator::sigma_filter(&sigmas, 2);
        let (phi_x, phi_u) = build_responses(&k, &model, &sigma).unwrap();
        let rec = controller_from_responses(&phi_x, &phi_u).unwrap();
        assert!((rec.to_dense() - k.to_dense()).amax() <= 1e-8);
    }

    #[test]
    fn sigma_identity_reduces_to_unscaled_responses() {
        let mut rng = StdRng::seed_from_u64(13);
        let model = paper_model();
        let k = random_blt(&mut rng, 3, 1, 2, 0.5);
        let id = BltOperator::identity(3, 2);
        let (phi_x, phi_u) = build_responses(&k, &model, &id).unwrap();
        let rec = controller_from_responses(&phi_x, &phi_u).unwrap();
        assert!((rec.to_dense() - k.to_dense()).amax() <= 1e-9);
    }

    #[test]
    fn affine_residual_trivial_case() {
        let model = SystemModel::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1)).unwrap();
        let phi_x = BltOperator::identity(0, 2);
        let phi_u = BltOperator::zero(0, 1, 2);
        let sigma = BltOperator::identity(0, 2);
        let r = validate_affine_constraint(&phi_x, &phi_u, &model, &sigma).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn affine_residual_of_constructed_responses() {
        let mut rng = StdRng::seed_from_u64(17);
        let model = paper_model();
        let k = random_blt(&mut rng, 4, 1, 2, 0.5);
        let sigmas: Vec<f64> = (0..4).map(|_| rng.random_range(0.3..1.2)).collect();
        let sigma = BltOperator::sigma_filter(&sigmas, 2);
        let (phi_x, phi_u) = build_responses(&k, &model, &sigma).unwrap();
        let r = validate_affine_constraint(&phi_x, &phi_u, &model, &sigma).unwrap();
        assert!(r <= 1e-10, "residual {r}");
    }

    #[test]
    fn affine_residual_detects_perturbation() {
        let mut rng = StdRng::seed_from_u64(19);
        let model = paper_model();
        let k = random_blt(&mut rng, 3, 1, 2, 0.5);
        let sigma = BltOperator::sigma_filter(&[0.5, 0.5, 0.5], 2);
        let (mut phi_x, phi_u) = build_responses(&k, &model, &sigma).unwrap();
        let mut b = phi_x.block(2, 1).clone();
        b[(0, 0)] += 1e-3;
        phi_x.set_block(2, 1, b);
        let r = validate_affine_constraint(&phi_x, &phi_u, &model, &sigma).unwrap();
        assert!(r >= 1e-3 - 1e-12, "residual {r}");
    }

    #[test]
    fn remark_scaling_identity() {
        // Phi_x~ = Phi_x Sigma and Phi_u~ = Phi_u Sigma for the same K
        let mut rng = StdRng::seed_from_u64(23);
        let model = paper_model();
        let k = random_blt(&mut rng, 4, 1, 2, 0.5);
        let sigmas: Vec<f64> = (0..4).map(|_| rng.random_range(0.2..1.4)).collect();
        let sigma = BltOperator::sigma_filter(&sigmas, 2);
        let id = BltOperator::identity(4, 2);
        let (phi_x_s, phi_u_s) = build_responses(&k, &model, &sigma).unwrap();
        let (phi_x, phi_u) = build_responses(&k, &model, &id).unwrap();
        let scaled_x = phi_x.multiply(&sigma).unwrap();
        let scaled_u = phi_u.multiply(&sigma).unwrap();
        assert!((phi_x_s.to_dense() - scaled_x.to_dense()).amax() <= 1e-10);
        assert!((phi_u_s.to_dense() - scaled_u.to_dense()).amax() <= 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_theorem_round_trip(seed in 0u64..5000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let t = rng.random_range(1..5usize);
            let nx = rng.random_range(1..4usize);
            let nu = rng.random_range(1..3usize);
            let a = DMatrix::from_fn(nx, nx, |_, _| rng.random_range(-0.4..0.4));
            let b = DMatrix::from_fn(nx, nu, |_, _| rng.random_range(-0.4..0.4));
            let model = SystemModel::new(a, b).unwrap();
            let k = random_blt(&mut rng, t, nu, nx, 0.4);
            let sigmas: Vec<f64> = (0..t).map(|_| rng.random_range(0.3..1.5)).collect();
            let sigma = BltOperator::sigma_filter(&sigmas, nx);
            let (phi_x, phi_u) = build_responses(&k, &model, &sigma).unwrap();
            let rec = controller_from_responses(&phi_x, &phi_u).unwrap();
            prop_assert!((rec.to_dense() - k.to_dense()).amax() <= 1e-8);
            let r = validate_affine_constraint(&phi_x, &phi_u, &model, &sigma).unwrap();
            prop_assert!(r <= 1e-10);
        }

        #[test]
        fn prop_multiply_preserves_causality(seed in 0u64..5000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let t = rng.random_range(0..5usize);
            let l = random_blt(&mut rng, t, 2, 2, 1.0);
            let r = random_blt(&mut rng, t, 2, 2, 1.0);
            let dense = l.multiply(&r).unwrap().to_dense();
            for i in 0..=t {
                for c in (i + 1)..=t {
                    let blockv = dense.view((i * 2, c * 2), (2, 2));
                    prop_assert_eq!(blockv.amax(), 0.0);
                }
            }
        }
    }

    #[test]
    fn apply_matches_dense() {
        let mut rng = StdRng::seed_from_u64(29);
        let op = random_blt(&mut rng, 3, 2, 3, 1.0);
        let v = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
        let out = op.apply(&v).unwrap();
        let dense_out = op.to_dense() * &v;
        assert_abs_diff_eq!(out.as_slice(), dense_out.as_slice(), epsilon = 1e-12);
    }
}
