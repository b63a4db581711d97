//! Projection onto the bath reference state and the block structure it
//! induces on the Liouvillian.
//!
//! `P rho = tr_R(rho) (x) |Omega><Omega|` and `Q = 1 - P`. Both are
//! materialized as explicit `d^2 x d^2` matrices (the model validator caps
//! `d` at 64), so every projected product downstream is a plain matrix
//! product. `P` factors as `embed . extract` through the `d_S^2`-dimensional
//! reduced space, and that factorization is what the kernel evaluations use
//! to avoid full-size products.

use nalgebra::DMatrix;

use crate::model::{liouvillian_parts, SystemBathModel};
use crate::opcore::{
    commutator_superop, conjugation_superop, max_abs, trace_norm, SuperOperator, C64,
};

/// The pair `(P, Q)` plus the rectangular factors of `P`.
#[derive(Clone, Debug)]
pub struct ProjectionPair {
    pub d_s: usize,
    pub d_r: usize,
    p: SuperOperator,
    q: SuperOperator,
    extract: DMatrix<C64>,
    embed: DMatrix<C64>,
}

impl ProjectionPair {
    pub fn p(&self) -> &SuperOperator {
        &self.p
    }

    pub fn q(&self) -> &SuperOperator {
        &self.q
    }

    /// `d_S^2 x d^2` matrix of `rho -> vec(tr_R rho)`.
    pub(crate) fn extract(&self) -> &DMatrix<C64> {
        &self.extract
    }

    /// `d^2 x d_S^2` matrix of `sigma -> vec(sigma (x) omega)`.
    pub(crate) fn embed(&self) -> &DMatrix<C64> {
        &self.embed
    }

    /// Lifts a reduced superoperator `S` to `embed . S . extract` on the
    /// full space; the result annihilates `Ran Q` and maps into `Ran P`.
    pub fn lift(&self, reduced: &SuperOperator) -> SuperOperator {
        let d = self.d_s * self.d_r;
        SuperOperator::wrap(d, &self.embed * reduced.mat() * &self.extract)
    }
}

pub fn build_projections(model: &SystemBathModel) -> ProjectionPair {
    let d_s = model.d_s();
    let d_r = model.d_r();
    let d = d_s * d_r;
    let omega = model.omega_state();

    // vec index of entry (i, j) in a d x d matrix is j*d + i.
    let mut extract = DMatrix::zeros(d_s * d_s, d * d);
    for s in 0..d_s {
        for sp in 0..d_s {
            for r in 0..d_r {
                extract[(sp * d_s + s, (sp * d_r + r) * d + s * d_r + r)] = C64::ONE;
            }
        }
    }
    let mut embed = DMatrix::zeros(d * d, d_s * d_s);
    for s in 0..d_s {
        for sp in 0..d_s {
            for r in 0..d_r {
                for rp in 0..d_r {
                    embed[((sp * d_r + rp) * d + s * d_r + r, sp * d_s + s)] = omega[(r, rp)];
                }
            }
        }
    }

    let p = SuperOperator::wrap(d, &embed * &extract);
    let q = SuperOperator::identity(d).sub(&p);
    ProjectionPair { d_s, d_r, p, q, extract, embed }
}

#[derive(Clone, Debug)]
pub struct AlgebraCheck {
    pub name: &'static str,
    pub residual: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct AlgebraReport {
    pub tol: f64,
    pub checks: Vec<AlgebraCheck>,
}

impl AlgebraReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl std::fmt::Display for AlgebraReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<28} residual {:>12.4e}  {}",
                c.name,
                c.residual,
                if c.pass { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Residuals of the identities the kernel derivation rests on: `P` and `Q`
/// are complementary projections, the free system part commutes with `P`,
/// the free bath evolution fixes `Ran P` pointwise, and the coupling has no
/// `P`-to-`P` matrix element. Residuals are largest matrix entries; the
/// passing threshold is `1e-10`.
pub fn verify_projection_algebra(model: &SystemBathModel, pair: &ProjectionPair) -> AlgebraReport {
    let tol = 1e-10;
    let d = model.dim();
    let d_r = model.d_r();
    let is = DMatrix::<C64>::identity(model.d_s(), model.d_s());
    let ir = DMatrix::<C64>::identity(d_r, d_r);

    let l_s = commutator_superop(&model.h_s().kronecker(&ir));
    let l_r = commutator_superop(&is.kronecker(model.h_r()));
    let parts = liouvillian_parts(model);

    let mut checks = Vec::new();
    let mut push = |name, residual: f64| {
        checks.push(AlgebraCheck { name, residual, pass: residual <= tol });
    };

    push("p_idempotent", max_abs(&pair.p.compose(&pair.p).sub(&pair.p).mat().clone()));
    push(
        "p_q_complementary",
        max_abs(&pair.p.add(&pair.q).sub(&SuperOperator::identity(d)).mat().clone()),
    );
    push("p_q_orthogonal", max_abs(&pair.p.compose(&pair.q).mat().clone()));
    push(
        "p_commutes_with_l_s",
        max_abs(&pair.p.compose(&l_s).sub(&l_s.compose(&pair.p)).mat().clone()),
    );

    // e^{-it L_R} P = P e^{-it L_R} = P at incommensurate sample times.
    let mut bath_fix = 0.0f64;
    for &t in &[0.7, 2.31] {
        let u_r = is.kronecker(&model.eig_r().evolution(t));
        let e = conjugation_superop(&u_r);
        bath_fix = bath_fix.max(max_abs(&e.compose(&pair.p).sub(&pair.p).mat().clone()));
        bath_fix = bath_fix.max(max_abs(&pair.p.compose(&e).sub(&pair.p).mat().clone()));
    }
    push("bath_evolution_fixes_ran_p", bath_fix);

    push(
        "coupling_blocked_on_ran_p",
        max_abs(&pair.p.compose(&parts.l_sr).compose(&pair.p).mat().clone()),
    );
    push("l_r_annihilates_ran_p", max_abs(&l_r.compose(&pair.p).mat().clone()));

    AlgebraReport { tol, checks }
}

/// The Liouvillian split into the blocks the kernel derivation works with.
/// Coupling blocks are stored without the factor `lambda`.
#[derive(Clone, Debug)]
pub struct LiouvDecomposition {
    /// Free system action compressed to `Ran P`.
    pub p_ls_p: SuperOperator,
    /// Free action on `Ran Q`. This is the whole free Liouvillian `L_0`
    /// there: the bath part vanishes on `Ran P` but the system part does
    /// not vanish on `Ran Q`, so the exact block is `Q L_0 Q`.
    pub q_l0_q: SuperOperator,
    pub q_lsr_q: SuperOperator,
    pub p_lsr_q: SuperOperator,
    pub q_lsr_p: SuperOperator,
}

impl LiouvDecomposition {
    /// `p_ls_p + q_l0_q + lambda (q_lsr_q + p_lsr_q + q_lsr_p)`.
    pub fn reassemble(&self, lambda: f64) -> SuperOperator {
        let coupling =
            self.q_lsr_q.add(&self.p_lsr_q).add(&self.q_lsr_p).scale(C64::new(lambda, 0.0));
        self.p_ls_p.add(&self.q_l0_q).add(&coupling)
    }
}

pub fn decompose_liouvillian(model: &SystemBathModel, pair: &ProjectionPair) -> LiouvDecomposition {
    let ir = DMatrix::<C64>::identity(model.d_r(), model.d_r());
    let l_s = commutator_superop(&model.h_s().kronecker(&ir));
    let parts = liouvillian_parts(model);
    let (p, q) = (&pair.p, &pair.q);
    LiouvDecomposition {
        p_ls_p: p.compose(&l_s).compose(p),
        q_l0_q: q.compose(&parts.l0).compose(q),
        q_lsr_q: q.compose(&parts.l_sr).compose(q),
        p_lsr_q: p.compose(&parts.l_sr).compose(q),
        q_lsr_p: q.compose(&parts.l_sr).compose(p),
    }
}

/// Largest entry of `L - reassemble(decomposition)`; zero up to rounding for
/// any validated model.
pub fn reassembly_residual(model: &SystemBathModel, pair: &ProjectionPair) -> f64 {
    let dec = decompose_liouvillian(model, pair);
    let parts = liouvillian_parts(model);
    max_abs(&dec.reassemble(model.lambda()).sub(&parts.l_total).mat().clone())
}

/// `|P rho|_1 = |tr_R rho|_1`: `Ran P` carries the reduced trace norm
/// isometrically because the bath factor is a rank-one state.
pub fn ran_p_isometry_residual(model: &SystemBathModel, pair: &ProjectionPair, rho: &DMatrix<C64>) -> f64 {
    let projected = pair.p.apply(rho);
    let reduced = crate::opcore::partial_trace_r(rho, model.d_s(), model.d_r())
        .expect("shape fixed by the pair");
    (trace_norm(&projected) - trace_norm(&reduced)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{preset, PresetKind};
    use crate::opcore::{c, cr};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rand_full(d: usize, seed: u64) -> DMatrix<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(d, d, |_, _| {
            c(rng.sample(StandardNormal), rng.sample(StandardNormal))
        })
    }

    #[test]
    fn p_reproduces_definition() {
        let b = preset(PresetKind::StarBath, 0);
        let pair = build_projections(&b.model);
        let rho = rand_full(b.model.dim(), 1);
        let direct = crate::opcore::partial_trace_r(&rho, 2, 6)
            .unwrap()
            .kronecker(&b.model.omega_state());
        assert!(max_abs(&(pair.p().apply(&rho) - direct)) < 1e-12);
    }

    #[test]
    fn p_fixes_product_states() {
        let b = preset(PresetKind::Dephasing, 0);
        let pair = build_projections(&b.model);
        let sigma = rand_full(2, 2);
        let rho = sigma.kronecker(&b.model.omega_state());
        assert!(max_abs(&(pair.p().apply(&rho) - rho)) < 1e-12);
    }

    #[test]
    fn p_ignores_bath_correlations() {
        // Two states with equal reduced part project to the same element.
        let b = preset(PresetKind::Parity, 0);
        let pair = build_projections(&b.model);
        let sigma = rand_full(2, 3);
        let mut correlated = sigma.kronecker(&b.model.omega_state());
        // Add a bath-traceless disturbance: preserves tr_R.
        let mut disturb = DMatrix::zeros(4, 4);
        disturb[(1, 2)] = cr(0.3);
        disturb[(2, 1)] = cr(0.3);
        correlated += sigma.kronecker(&disturb);
        let clean = sigma.kronecker(&b.model.omega_state());
        assert!(max_abs(&(pair.p().apply(&correlated) - pair.p().apply(&clean))) < 1e-12);
    }

    #[test]
    fn algebra_report_passes_on_every_preset() {
        for kind in PresetKind::ALL {
            let b = preset(kind, 5);
            let pair = build_projections(&b.model);
            let rep = verify_projection_algebra(&b.model, &pair);
            assert!(rep.pass(), "{}:\n{}", kind.name(), rep);
        }
    }

    #[test]
    fn shifted_coupling_breaks_the_blocking_identity() {
        // P [W (x) (V + c), .] P = c * P [W (x) 1, .] P, so an uncentered
        // coupling shows up with weight |c|.
        let b = preset(PresetKind::Dephasing, 0);
        let pair = build_projections(&b.model);
        let ir = DMatrix::<C64>::identity(4, 4);
        let shift = 0.05;
        let shifted = b.model.w().kronecker(&(b.model.v() + ir.map(|z| z * cr(shift))));
        let blocked = pair.p().compose(&commutator_superop(&shifted)).compose(pair.p());
        let reference = pair
            .p()
            .compose(&commutator_superop(&b.model.w().kronecker(&ir)))
            .compose(pair.p());
        let lhs = max_abs(&blocked.mat().clone());
        let rhs = shift * max_abs(&reference.mat().clone());
        assert!(lhs > 1e-3);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn decomposition_reassembles_exactly() {
        for kind in PresetKind::ALL {
            let b = preset(kind, 9);
            let pair = build_projections(&b.model);
            let res = reassembly_residual(&b.model, &pair);
            assert!(res < 1e-12, "{}: residual {res:.3e}", kind.name());
        }
    }

    #[test]
    fn coupling_block_is_p_orthogonal() {
        let b = preset(PresetKind::Random, 4);
        let pair = build_projections(&b.model);
        let dec = decompose_liouvillian(&b.model, &pair);
        let sandwiched = pair.p().compose(&dec.q_lsr_q).compose(pair.p());
        assert!(max_abs(&sandwiched.mat().clone()) < 1e-12);
    }

    #[test]
    fn free_blocks_sum_to_free_liouvillian() {
        let b = preset(PresetKind::StarBath, 0);
        let pair = build_projections(&b.model);
        let dec = decompose_liouvillian(&b.model, &pair);
        let parts = liouvillian_parts(&b.model);
        let free = dec.p_ls_p.add(&dec.q_l0_q);
        assert!(max_abs(&free.sub(&parts.l0).mat().clone()) < 1e-12);
    }

    #[test]
    fn ran_p_is_isometric_to_reduced_space() {
        let b = preset(PresetKind::Random, 12);
        let pair = build_projections(&b.model);
        for seed in 0..5 {
            let rho = rand_full(8, 100 + seed);
            assert!(ran_p_isometry_residual(&b.model, &pair, &rho) < 1e-12);
        }
    }

    #[test]
    fn lift_round_trips_through_extract() {
        // extract . embed = identity on the reduced space.
        let b = preset(PresetKind::Dephasing, 0);
        let pair = build_projections(&b.model);
        let prod = pair.extract() * pair.embed();
        assert!(max_abs(&(prod - DMatrix::<C64>::identity(4, 4))) < 1e-12);
        // Lifting the reduced identity gives P itself.
        let lifted = pair.lift(&SuperOperator::identity(2));
        assert!(max_abs(&lifted.sub(pair.p()).mat().clone()) < 1e-12);
    }

    #[test]
    fn omega_is_stationary_for_the_bath_part() {
        let b = preset(PresetKind::StarBath, 0);
        let sigma = rand_full(2, 7);
        let rho = sigma.kronecker(&b.model.omega_state());
        let is = DMatrix::<C64>::identity(2, 2);
        let l_r = commutator_superop(&is.kronecker(b.model.h_r()));
        assert!(max_abs(&l_r.apply(&rho)) < 1e-12);
    }
}
