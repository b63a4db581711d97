//! Dense complex operators and column-stacked superoperators.
//!
//! Vectorization is column-stacking throughout the crate: `vec(X)` lists the
//! columns of `X` top to bottom, so `vec(A X B) = (B^T (x) A) vec(X)`. A
//! superoperator on a `d`-dimensional space is stored as its `d^2 x d^2`
//! matrix in that convention.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

pub type C64 = Complex64;

/// Hermiticity acceptance threshold, relative to the largest entry.
const HERM_TOL: f64 = 1e-12;

/// Probe count used by [`superop_norm_estimate`] when callers have no reason
/// to pick another one.
pub const DEFAULT_N_PROBE: usize = 64;

pub(crate) fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub(crate) fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Largest entry modulus, zero for an empty matrix.
pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Square complex matrix tagged with whether it is (numerically) Hermitian.
///
/// The tag is set by the constructor that verified it, never guessed, and it
/// selects the eigendecomposition path in [`mat_exp`].
#[derive(Clone, Debug)]
pub struct Operator {
    mat: DMatrix<C64>,
    hermitian: bool,
}

impl Operator {
    /// Wraps a square matrix with no structural claim.
    pub fn new(mat: DMatrix<C64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() || mat.nrows() == 0 {
            return Err(Error::Dim(format!(
                "operator must be square and nonempty, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        Ok(Operator { mat, hermitian: false })
    }

    /// Wraps a square matrix after checking `A = A^dagger` to within
    /// `1e-12` relative to the largest entry.
    pub fn hermitian(mat: DMatrix<C64>) -> Result<Self> {
        let mut op = Operator::new(mat)?;
        let res = max_abs(&(&op.mat - op.mat.adjoint()));
        let scale = max_abs(&op.mat).max(1.0);
        if res > HERM_TOL * scale {
            return Err(Error::Invalid(format!(
                "matrix is not Hermitian: residual {res:.3e} exceeds {HERM_TOL:.0e} x scale"
            )));
        }
        op.hermitian = true;
        Ok(op)
    }

    pub(crate) fn wrap(mat: DMatrix<C64>, hermitian: bool) -> Self {
        Operator { mat, hermitian }
    }

    pub fn zeros(dim: usize) -> Self {
        Operator { mat: DMatrix::zeros(dim, dim), hermitian: true }
    }

    pub fn identity(dim: usize) -> Self {
        Operator { mat: DMatrix::identity(dim, dim), hermitian: true }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn mat(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_mat(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn dagger(&self) -> Self {
        Operator { mat: self.mat.adjoint(), hermitian: self.hermitian }
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    /// Operator (spectral) norm, the largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        self.mat.singular_values().max()
    }
}

/// Column-stacking of a matrix into a vector.
pub fn vectorize(x: &DMatrix<C64>) -> DVector<C64> {
    // nalgebra stores column-major, so the raw data already is vec(X).
    DVector::from_column_slice(x.as_slice())
}

/// Inverse of [`vectorize`]; the length must be a perfect square.
pub fn devectorize(v: &DVector<C64>) -> Result<DMatrix<C64>> {
    let len = v.len();
    let d = (len as f64).sqrt().round() as usize;
    if d * d != len || len == 0 {
        return Err(Error::Dim(format!(
            "vector of length {len} is not a stacked square matrix"
        )));
    }
    Ok(DMatrix::from_column_slice(d, d, v.as_slice()))
}

/// Linear map on operators over a `d`-dimensional space, stored as its
/// `d^2 x d^2` matrix in the column-stacking convention.
#[derive(Clone, Debug)]
pub struct SuperOperator {
    d: usize,
    mat: DMatrix<C64>,
}

impl SuperOperator {
    /// Wraps a `d^2 x d^2` matrix; the side length must be a perfect square.
    pub fn from_matrix(mat: DMatrix<C64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::Dim(format!(
                "superoperator matrix must be square, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let d = (mat.nrows() as f64).sqrt().round() as usize;
        if d * d != mat.nrows() || d == 0 {
            return Err(Error::Dim(format!(
                "superoperator side {} is not a perfect square",
                mat.nrows()
            )));
        }
        Ok(SuperOperator { d, mat })
    }

    pub(crate) fn wrap(d: usize, mat: DMatrix<C64>) -> Self {
        debug_assert_eq!(mat.nrows(), d * d);
        debug_assert_eq!(mat.ncols(), d * d);
        SuperOperator { d, mat }
    }

    pub fn identity(d: usize) -> Self {
        SuperOperator { d, mat: DMatrix::identity(d * d, d * d) }
    }

    pub fn zeros(d: usize) -> Self {
        SuperOperator { d, mat: DMatrix::zeros(d * d, d * d) }
    }

    /// Dimension `d` of the operator space the map acts on.
    pub fn op_dim(&self) -> usize {
        self.d
    }

    pub fn mat(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn apply(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        debug_assert_eq!(x.nrows(), self.d);
        debug_assert_eq!(x.ncols(), self.d);
        DMatrix::from_column_slice(self.d, self.d, (&self.mat * vectorize(x)).as_slice())
    }

    /// Composition `self . rhs` (apply `rhs` first).
    pub fn compose(&self, rhs: &SuperOperator) -> SuperOperator {
        debug_assert_eq!(self.d, rhs.d);
        SuperOperator { d: self.d, mat: &self.mat * &rhs.mat }
    }

    pub fn scale(&self, z: C64) -> SuperOperator {
        SuperOperator { d: self.d, mat: self.mat.map(|e| e * z) }
    }

    pub fn add(&self, rhs: &SuperOperator) -> SuperOperator {
        debug_assert_eq!(self.d, rhs.d);
        SuperOperator { d: self.d, mat: &self.mat + &rhs.mat }
    }

    pub fn sub(&self, rhs: &SuperOperator) -> SuperOperator {
        debug_assert_eq!(self.d, rhs.d);
        SuperOperator { d: self.d, mat: &self.mat - &rhs.mat }
    }
}

/// Superoperator form of `X -> A X`, the matrix `1 (x) A`.
pub fn left_mult(a: &DMatrix<C64>) -> SuperOperator {
    let d = a.nrows();
    SuperOperator::wrap(d, DMatrix::identity(d, d).kronecker(a))
}

/// Superoperator form of `X -> X B`, the matrix `B^T (x) 1`.
pub fn right_mult(b: &DMatrix<C64>) -> SuperOperator {
    let d = b.nrows();
    SuperOperator::wrap(d, b.transpose().kronecker(&DMatrix::identity(d, d)))
}

/// Superoperator form of `X -> [A, X]`.
pub fn commutator_superop(a: &DMatrix<C64>) -> SuperOperator {
    left_mult(a).sub(&right_mult(a))
}

/// Superoperator form of `X -> U X U^dagger`, the matrix `conj(U) (x) U`.
pub fn conjugation_superop(u: &DMatrix<C64>) -> SuperOperator {
    SuperOperator::wrap(u.nrows(), u.conjugate().kronecker(u))
}

/// Partial trace over the second (bath) factor of a `d_s * d_r` space,
/// indexed system-major: basis index `i = s * d_r + r`.
pub fn partial_trace_r(rho: &DMatrix<C64>, d_s: usize, d_r: usize) -> Result<DMatrix<C64>> {
    let d = d_s * d_r;
    if rho.nrows() != d || rho.ncols() != d {
        return Err(Error::Dim(format!(
            "partial trace expects a {d}x{d} matrix for d_s = {d_s}, d_r = {d_r}, got {}x{}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    let mut out = DMatrix::zeros(d_s, d_s);
    for s in 0..d_s {
        for sp in 0..d_s {
            let mut acc = C64::ZERO;
            for r in 0..d_r {
                acc += rho[(s * d_r + r, sp * d_r + r)];
            }
            out[(s, sp)] = acc;
        }
    }
    Ok(out)
}

/// Hermitian eigendecomposition `A = V diag(vals) V^dagger`, kept around to
/// exponentiate the same operator at many times.
#[derive(Clone, Debug)]
pub(crate) struct EigH {
    pub vals: DVector<f64>,
    pub vecs: DMatrix<C64>,
}

impl EigH {
    pub fn new(a: &DMatrix<C64>) -> Self {
        let se = nalgebra::SymmetricEigen::new(a.clone());
        EigH { vals: se.eigenvalues, vecs: se.eigenvectors }
    }

    /// `exp(-i t A)`.
    pub fn evolution(&self, t: f64) -> DMatrix<C64> {
        self.phase_map(|e| C64::from_polar(1.0, -t * e))
    }

    /// `f` applied to the spectrum: `V diag(f(e_k)) V^dagger`.
    pub fn phase_map(&self, f: impl Fn(f64) -> C64) -> DMatrix<C64> {
        let d = self.vals.len();
        let mut scaled = self.vecs.clone();
        for k in 0..d {
            let fk = f(self.vals[k]);
            for i in 0..d {
                scaled[(i, k)] *= fk;
            }
        }
        scaled * self.vecs.adjoint()
    }
}

/// `exp(t A)`.
///
/// A Hermitian-flagged operator goes through its eigendecomposition; anything
/// else through scaling-and-squaring Pade approximation.
pub fn mat_exp(a: &Operator, t: f64) -> Operator {
    if a.hermitian {
        let eig = EigH::new(a.mat());
        let m = eig.phase_map(|e| cr((t * e).exp()));
        // exp(tA) of Hermitian A is Hermitian (and positive definite).
        Operator::wrap(m, true)
    } else {
        Operator::wrap(a.mat().map(|z| z * t).exp(), false)
    }
}

/// `exp(t S)` of a superoperator; always the Pade path, superoperators carry
/// no Hermitian tag.
pub fn mat_exp_super(s: &SuperOperator, t: f64) -> SuperOperator {
    SuperOperator::wrap(s.d, s.mat.map(|z| z * t).exp())
}

/// `exp(-i t H)` for Hermitian-flagged `H`.
pub fn evolution(h: &Operator, t: f64) -> Result<DMatrix<C64>> {
    if !h.hermitian {
        return Err(Error::Invalid(
            "evolution requires a Hermitian-flagged generator".into(),
        ));
    }
    Ok(EigH::new(h.mat()).evolution(t))
}

/// Trace norm (sum of singular values).
pub fn trace_norm(x: &DMatrix<C64>) -> f64 {
    x.singular_values().iter().sum()
}

/// Random matrix with unit trace norm: Ginibre draw, rescaled.
pub fn random_unit_trace_norm(d: usize, rng: &mut impl Rng) -> DMatrix<C64> {
    let g = DMatrix::from_fn(d, d, |_, _| {
        c(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let tn = trace_norm(&g);
    g.map(|z| z / cr(tn))
}

/// Lower bound on the trace-norm induced superoperator norm
/// `sup {|S X|_1 : |X|_1 = 1}`.
///
/// Probes are all matrix units plus `n_probe` seeded random unit-trace-norm
/// operators; the result is the best probe value, so it underestimates. It is
/// exact on maps that attain their norm on a matrix unit.
pub fn superop_norm_estimate(s: &SuperOperator, n_probe: usize, seed: u64) -> f64 {
    let d = s.d;
    let mut best = 0.0f64;
    let mut unit = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            unit[(i, j)] = C64::ONE;
            best = best.max(trace_norm(&s.apply(&unit)));
            unit[(i, j)] = C64::ZERO;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_probe {
        let x = random_unit_trace_norm(d, &mut rng);
        best = best.max(trace_norm(&s.apply(&x)));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rand_mat(d: usize, seed: u64) -> DMatrix<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(d, d, |_, _| {
            c(rng.sample(StandardNormal), rng.sample(StandardNormal))
        })
    }

    fn rand_herm(d: usize, seed: u64) -> DMatrix<C64> {
        let g = rand_mat(d, seed);
        (&g + g.adjoint()).map(|z| z * cr(0.5))
    }

    #[test]
    fn vectorize_is_column_stacking() {
        // X = [[a, b], [c, d]] stacks to [a, c, b, d].
        let x = DMatrix::from_row_slice(2, 2, &[cr(1.0), cr(2.0), cr(3.0), cr(4.0)]);
        let v = vectorize(&x);
        assert_eq!(v[0], cr(1.0));
        assert_eq!(v[1], cr(3.0));
        assert_eq!(v[2], cr(2.0));
        assert_eq!(v[3], cr(4.0));
        assert_eq!(devectorize(&v).unwrap(), x);
    }

    #[test]
    fn devectorize_rejects_non_square_length() {
        let v = DVector::from_element(5, C64::ONE);
        assert!(devectorize(&v).is_err());
    }

    #[test]
    fn sandwich_identity() {
        // vec(A X B) = (B^T (x) A) vec(X) pins the stacking convention.
        let (a, x, b) = (rand_mat(4, 1), rand_mat(4, 2), rand_mat(4, 3));
        let lhs = vectorize(&(&a * &x * &b));
        let rhs = b.transpose().kronecker(&a) * vectorize(&x);
        assert!(max_abs(&devectorize(&(lhs - rhs)).unwrap()) < 1e-12);
    }

    #[test]
    fn left_right_commutator_agree_with_direct_products() {
        let a = rand_mat(3, 10);
        let x = rand_mat(3, 11);
        assert!(max_abs(&(left_mult(&a).apply(&x) - &a * &x)) < 1e-12);
        assert!(max_abs(&(right_mult(&a).apply(&x) - &x * &a)) < 1e-12);
        let comm = &a * &x - &x * &a;
        assert!(max_abs(&(commutator_superop(&a).apply(&x) - comm)) < 1e-12);
    }

    #[test]
    fn partial_trace_of_product_state() {
        let sigma = rand_mat(2, 20);
        let omega = rand_mat(3, 21);
        let full = sigma.kronecker(&omega);
        let red = partial_trace_r(&full, 2, 3).unwrap();
        let expect = sigma.map(|z| z * omega.trace());
        assert!(max_abs(&(red - expect)) < 1e-12);
    }

    #[test]
    fn partial_trace_rejects_wrong_shape() {
        assert!(partial_trace_r(&DMatrix::zeros(5, 5), 2, 3).is_err());
    }

    #[test]
    fn mat_exp_diagonal_antihermitian() {
        // exp(pi * (-i) diag(0, 1)) = diag(1, -1).
        let a = Operator::new(DMatrix::from_diagonal(&DVector::from_vec(vec![
            c(0.0, 0.0),
            c(0.0, -1.0),
        ])))
        .unwrap();
        let e = mat_exp(&a, std::f64::consts::PI);
        assert_abs_diff_eq!(e.mat()[(0, 0)].re, 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(e.mat()[(1, 1)].re, -1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(e.mat()[(1, 1)].im, 0.0, epsilon = 1e-13);
    }

    #[test]
    fn mat_exp_hermitian_path_matches_pade_path() {
        let h = rand_herm(5, 30);
        let viaeig = mat_exp(&Operator::hermitian(h.clone()).unwrap(), 0.7);
        let viapade = mat_exp(&Operator::new(h).unwrap(), 0.7);
        assert!(max_abs(&(viaeig.mat() - viapade.mat())) < 1e-12);
    }

    #[test]
    fn mat_exp_inverse_pair() {
        let a = Operator::new(rand_mat(4, 40)).unwrap();
        let prod = mat_exp(&a, 0.3).mat() * mat_exp(&a, -0.3).mat();
        assert!(max_abs(&(prod - DMatrix::<C64>::identity(4, 4))) < 1e-12);
    }

    #[test]
    fn mat_exp_semigroup() {
        let a = Operator::new(rand_mat(4, 41)).unwrap();
        let lhs = mat_exp(&a, 0.9).into_mat();
        let rhs = mat_exp(&a, 0.5).mat() * mat_exp(&a, 0.4).mat();
        assert!(max_abs(&(lhs - rhs)) < 1e-12);
    }

    #[test]
    fn evolution_is_unitary() {
        let h = Operator::hermitian(rand_herm(6, 50)).unwrap();
        let u = evolution(&h, 1.3).unwrap();
        assert!(max_abs(&(&u * u.adjoint() - DMatrix::<C64>::identity(6, 6))) < 1e-12);
    }

    #[test]
    fn evolution_requires_the_flag() {
        let a = Operator::new(rand_mat(3, 51)).unwrap();
        assert!(evolution(&a, 1.0).is_err());
    }

    #[test]
    fn hermitian_constructor_rejects_skew() {
        let mut m = rand_herm(3, 60);
        m[(0, 1)] += c(0.0, 1e-6);
        assert!(Operator::hermitian(m).is_err());
    }

    #[test]
    fn norm_estimate_of_identity_and_scaling() {
        let s = SuperOperator::identity(3);
        let n1 = superop_norm_estimate(&s, 16, 7);
        assert_abs_diff_eq!(n1, 1.0, epsilon = 1e-12);
        let n3 = superop_norm_estimate(&s.scale(cr(-3.0)), 16, 7);
        assert_abs_diff_eq!(n3, 3.0 * n1, epsilon = 1e-12);
    }

    #[test]
    fn norm_estimate_of_unitary_conjugation_is_one() {
        let u = EigH::new(&rand_herm(3, 70)).evolution(0.8);
        let s = conjugation_superop(&u);
        assert_abs_diff_eq!(superop_norm_estimate(&s, 32, 8), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn norm_estimate_is_deterministic_in_the_seed() {
        let s = SuperOperator::from_matrix(rand_mat(9, 80)).unwrap();
        let a = superop_norm_estimate(&s, 24, 123);
        let b = superop_norm_estimate(&s, 24, 123);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn trace_norm_of_projector() {
        let mut p = DMatrix::zeros(4, 4);
        p[(0, 0)] = C64::ONE;
        p[(1, 1)] = C64::ONE;
        assert_abs_diff_eq!(trace_norm(&p), 2.0, epsilon = 1e-13);
    }

    proptest! {
        #[test]
        fn vec_devec_round_trip(d in 1usize..6, seed in 0u64..1000) {
            let x = rand_mat(d, seed);
            let back = devectorize(&vectorize(&x)).unwrap();
            prop_assert!(max_abs(&(back - x)) == 0.0);
        }

        #[test]
        fn superop_apply_matches_matrix_action(d in 1usize..4, seed in 0u64..200) {
            let a = rand_mat(d, seed);
            let x = rand_mat(d, seed + 1);
            let s = left_mult(&a);
            let direct = &a * &x;
            prop_assert!(max_abs(&(s.apply(&x) - direct)) < 1e-12);
        }
    }
}
