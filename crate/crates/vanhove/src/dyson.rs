//! Time-ordered expansion of the reduced dynamics: the conjugated
//! propagator, the exact memory kernel at finite coupling, and brute-force
//! simplex quadrature of the expansion coefficients `K_n(t)`.
//!
//! Everything here is assembled directly from operator products, with no
//! combinatorial input. The diagram module computes the same coefficients
//! from connected correlations, and the two routes are compared pointwise;
//! this module is the oracle side of that comparison.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::model::{coupling_at, l_sr_at, liouvillian_parts, SystemBathModel};
use crate::nz::ProjectionPair;
use crate::opcore::{
    conjugation_superop, mat_exp_super, partial_trace_r, superop_norm_estimate, vectorize, EigH,
    SuperOperator, C64, DEFAULT_N_PROBE,
};
use crate::quad;
use crate::{Error, Result};

pub const DEFAULT_AXIS_ORDER: usize = 12;

/// Kernel quadratures split long time ranges into panels of at most this
/// length so the per-panel Gauss rule resolves the oscillations.
const MAX_PANEL_LEN: f64 = 2.0;

/// Quadrature nodes on the ordered simplex
/// `0 <= z_1 <= ... <= z_{n+1} <= t`.
///
/// Built from an iterated Gauss-Legendre rule on the unit cube through the
/// substitution `z_{n+1} = t u_{n+1}`, `z_j = z_{j+1} u_j`, whose Jacobian
/// is `t z_2 ... z_{n+1}`.
#[derive(Clone, Debug)]
pub struct SimplexGrid {
    /// Index of the expansion coefficient the grid integrates; the simplex
    /// dimension is `n + 1`.
    pub n: usize,
    pub t: f64,
    /// Gauss-Legendre nodes per axis.
    pub order: usize,
    nodes: Vec<(Vec<f64>, f64)>,
}

impl SimplexGrid {
    pub fn new(n: usize, t: f64, order: usize) -> Result<Self> {
        if t < 0.0 {
            return Err(Error::Invalid(format!("simplex horizon must be >= 0, got {t}")));
        }
        if order < 2 {
            return Err(Error::Invalid(format!(
                "need at least 2 nodes per axis to integrate the Jacobian exactly, got {order}"
            )));
        }
        let dim = n + 1;
        let base = quad::on_interval(order, 0.0, 1.0);
        let mut nodes = Vec::with_capacity(order.pow(dim as u32));
        let mut idx = vec![0usize; dim];
        loop {
            let mut z = vec![0.0; dim];
            let (u_top, w_top) = base[idx[dim - 1]];
            z[dim - 1] = t * u_top;
            let mut w = t * w_top;
            for j in (0..dim - 1).rev() {
                let (u, wj) = base[idx[j]];
                z[j] = z[j + 1] * u;
                w *= z[j + 1] * wj;
            }
            nodes.push((z, w));
            let mut carry = 0;
            while carry < dim {
                idx[carry] += 1;
                if idx[carry] < order {
                    break;
                }
                idx[carry] = 0;
                carry += 1;
            }
            if carry == dim {
                break;
            }
        }
        Ok(SimplexGrid { n, t, order, nodes })
    }

    pub fn with_default_order(n: usize, t: f64) -> Result<Self> {
        Self::new(n, t, DEFAULT_AXIS_ORDER)
    }

    /// Ascending time vectors `(z_1, ..., z_{n+1})` with weights.
    pub fn nodes(&self) -> &[(Vec<f64>, f64)] {
        &self.nodes
    }

    /// Equals the simplex volume `t^{n+1}/(n+1)!` up to rounding.
    pub fn weight_sum(&self) -> f64 {
        self.nodes.iter().map(|(_, w)| w).sum()
    }
}

pub(crate) fn validate_times(z: &[f64]) -> Result<()> {
    if z.len() < 2 {
        return Err(Error::Invalid(format!(
            "time vector needs z_0 and at least one later time, got {} entries",
            z.len()
        )));
    }
    if z[0] != 0.0 {
        return Err(Error::Invalid(format!("z_0 must be exactly 0, got {}", z[0])));
    }
    if z.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::Invalid("time vector must be nondecreasing".into()));
    }
    Ok(())
}

/// `P L_SR(z_{n+1}) Q ... Q L_SR(z_1) Q L_SR(0) P` at one point of the
/// simplex, as a superoperator on the reduced space. `z` carries the fixed
/// first time: `z = (0, z_1, ..., z_{n+1})`.
///
/// The chain is applied to a basis of `Ran P` at the operator level, which
/// keeps every intermediate at full dimension but avoids any
/// `d^2 x d^2` product.
pub fn dyson_integrand_reduced(model: &SystemBathModel, z: &[f64]) -> Result<SuperOperator> {
    validate_times(z)?;
    let d_s = model.d_s();
    let d_r = model.d_r();
    let omega = model.omega_state();
    let couplings: Vec<DMatrix<C64>> = z.iter().map(|&s| coupling_at(model, s)).collect();

    let comm = |cm: &DMatrix<C64>, x: &DMatrix<C64>| cm * x - x * cm;
    let mut reduced = DMatrix::zeros(d_s * d_s, d_s * d_s);
    for k in 0..d_s * d_s {
        let mut sigma = DMatrix::<C64>::zeros(d_s, d_s);
        sigma[(k % d_s, k / d_s)] = C64::ONE;
        let mut x = sigma.kronecker(&omega);
        x = comm(&couplings[0], &x);
        for cm in &couplings[1..] {
            let red = partial_trace_r(&x, d_s, d_r).expect("shape is d x d by construction");
            x -= red.kronecker(&omega);
            x = comm(cm, &x);
        }
        let out = partial_trace_r(&x, d_s, d_r).expect("shape is d x d by construction");
        reduced.set_column(k, &vectorize(&out));
    }
    Ok(SuperOperator::wrap(d_s, reduced))
}

/// Full-space form of [`dyson_integrand_reduced`]: maps `Ran P` into
/// `Ran P` and annihilates `Ran Q`, so `P S P = S`.
pub fn dyson_integrand(
    model: &SystemBathModel,
    pair: &ProjectionPair,
    z: &[f64],
) -> Result<SuperOperator> {
    Ok(pair.lift(&dyson_integrand_reduced(model, z)?))
}

pub(crate) fn pairwise_sum(mut terms: Vec<DMatrix<C64>>, d_sq: usize) -> DMatrix<C64> {
    if terms.is_empty() {
        return DMatrix::zeros(d_sq, d_sq);
    }
    while terms.len() > 1 {
        terms = terms
            .chunks(2)
            .map(|c| if c.len() == 2 { &c[0] + &c[1] } else { c[0].clone() })
            .collect();
    }
    terms.pop().unwrap()
}

/// `K_n(t)` by weighted summation of [`dyson_integrand`] over the grid.
/// Node evaluations run in parallel; accumulation is pairwise over the
/// fixed node order, so the result does not depend on scheduling.
pub fn k_n_bruteforce(
    model: &SystemBathModel,
    pair: &ProjectionPair,
    n: usize,
    t: f64,
    grid: &SimplexGrid,
) -> Result<SuperOperator> {
    if n == 0 {
        return Err(Error::Invalid("the n = 0 term is a 1-D integral, not a simplex sum".into()));
    }
    if n > 3 {
        return Err(Error::Unsupported(format!(
            "brute-force cost grows as nodes^(n+1); n = {n} > 3 is not offered"
        )));
    }
    if grid.n != n {
        return Err(Error::Invalid(format!(
            "grid integrates K_{} but K_{n} was requested",
            grid.n
        )));
    }
    if (grid.t - t).abs() > 1e-12 * t.abs().max(1.0) {
        return Err(Error::Invalid(format!(
            "grid horizon {} does not match requested t = {t}",
            grid.t
        )));
    }
    let d_s = model.d_s();
    let terms: Vec<DMatrix<C64>> = grid
        .nodes()
        .par_iter()
        .map(|(zs, w)| {
            let mut z = Vec::with_capacity(zs.len() + 1);
            z.push(0.0);
            z.extend_from_slice(zs);
            let s = dyson_integrand_reduced(model, &z).expect("grid nodes are sorted with z_0 = 0");
            s.mat().map(|v| v * crate::opcore::cr(*w))
        })
        .collect();
    let sum = pairwise_sum(terms, d_s * d_s);
    Ok(pair.lift(&SuperOperator::wrap(d_s, sum)))
}

/// `U(tau) = e^{i (tau/lambda^2) L_S} P e^{-i (tau/lambda^2) L} P`:
/// the full propagator sandwiched between projections, with the free system
/// motion undone. Maps `Ran P` into `Ran P` and preserves the trace.
pub fn u_lambda(
    model: &SystemBathModel,
    pair: &ProjectionPair,
    tau: f64,
) -> Result<SuperOperator> {
    if tau < 0.0 {
        return Err(Error::Invalid(format!("propagator time must be >= 0, got {tau}")));
    }
    let t = tau / (model.lambda() * model.lambda());
    let ir = DMatrix::<C64>::identity(model.d_r(), model.d_r());
    let free = conjugation_superop(&model.eig_s().evolution(-t).kronecker(&ir));
    let full = conjugation_superop(&EigH::new(&model.h_total()).evolution(t));
    Ok(free.compose(pair.p()).compose(&full).compose(pair.p()))
}

/// Per-panel machinery for kernel quadratures over `[0, T]`: equal panels
/// of length at most [`MAX_PANEL_LEN`], Gauss-Legendre offsets inside each.
struct PanelRule {
    panel_len: f64,
    panels: usize,
    local: Vec<(f64, f64)>,
}

impl PanelRule {
    fn new(t_top: f64, order: usize) -> Self {
        let panels = (t_top / MAX_PANEL_LEN).ceil().max(1.0) as usize;
        let panel_len = t_top / panels as f64;
        PanelRule { panel_len, panels, local: quad::on_interval(order, 0.0, panel_len) }
    }
}

/// `K(tau) = int_0^{tau/lambda^2} P e^{i s L_0} L_SR Q
/// e^{-i s (L_0 + lambda Q L_SR Q)} Q L_SR P ds`, the exact finite-coupling
/// memory kernel.
///
/// The only non-unitary exponential is the middle factor. It is advanced
/// panel by panel: one Pade exponential per distinct step length, then the
/// semigroup property. The propagated object is the `d_S^2`-column block
/// `e^{-isM} Q L_SR embed`, never the full exponential at each node.
pub fn k_lambda(
    model: &SystemBathModel,
    pair: &ProjectionPair,
    tau: f64,
    quad_order: usize,
) -> Result<SuperOperator> {
    if quad_order < 2 {
        return Err(Error::Invalid(format!("kernel quadrature needs order >= 2, got {quad_order}")));
    }
    if tau < 0.0 {
        return Err(Error::Invalid(format!("kernel time must be >= 0, got {tau}")));
    }
    let d = model.dim();
    let d_s = model.d_s();
    if tau == 0.0 {
        return Ok(SuperOperator::zeros(d));
    }
    let lambda = model.lambda();
    let t_top = tau / (lambda * lambda);

    let parts = liouvillian_parts(model);
    let q_lsr_q = pair.q().compose(&parts.l_sr).compose(pair.q());
    let gen = parts
        .l0
        .add(&q_lsr_q.scale(crate::opcore::cr(lambda)))
        .scale(C64::new(0.0, -1.0));

    // Right block: Q L_SR P factored through embed, d_S^2 columns.
    let right0 = pair.q().mat() * parts.l_sr.mat() * pair.embed();
    // Left block: extract applied after P L_SR(s); the s-dependence enters
    // through the interaction-picture coupling alone.
    let lsr_q = parts.l_sr.mat() * pair.q().mat();

    let rule = PanelRule::new(t_top, quad_order);
    let mut step_cache: HashMap<u64, DMatrix<C64>> = HashMap::new();
    let mut exp_step = |len: f64| -> DMatrix<C64> {
        step_cache
            .entry(len.to_bits())
            .or_insert_with(|| mat_exp_super(&gen, len).mat().clone())
            .clone()
    };

    let offsets: Vec<DMatrix<C64>> =
        rule.local.iter().map(|&(x, _)| exp_step(x)).collect();
    let panel_step = exp_step(rule.panel_len);

    let mut acc = DMatrix::<C64>::zeros(d_s * d_s, d_s * d_s);
    let mut carried = right0.clone();
    for p in 0..rule.panels {
        let base = p as f64 * rule.panel_len;
        for (k, &(x, w)) in rule.local.iter().enumerate() {
            let s = base + x;
            let mid = &offsets[k] * &carried;
            let u0 = model.eig_s().evolution(-s).kronecker(&model.eig_r().evolution(-s));
            let left = pair.extract() * conjugation_superop(&u0).mat() * &lsr_q;
            acc += (&left * &mid).map(|v| v * crate::opcore::cr(w));
        }
        carried = &panel_step * &carried;
    }
    Ok(pair.lift(&SuperOperator::wrap(d_s, acc)))
}

/// Probe-estimated residual of the renewal identity
/// `U(tau) = P - int_0^tau e^{i (u/lambda^2) L_S} K(tau - u)
/// e^{-i (u/lambda^2) L_S} U(u) du` at coupling `lambda`.
///
/// Both sides are assembled with the same quadrature order; the residual
/// reflects quadrature error only and shrinks with `quad_order`.
pub fn verify_integral_equation(
    model: &SystemBathModel,
    pair: &ProjectionPair,
    tau: f64,
    lambda: f64,
    quad_order: usize,
) -> Result<f64> {
    let model = model.with_lambda(lambda)?;
    let lhs = u_lambda(&model, pair, tau)?;
    let ir = DMatrix::<C64>::identity(model.d_r(), model.d_r());
    let lam_sq = lambda * lambda;

    let mut rhs = pair.p().clone();
    if tau > 0.0 {
        for &(u, w) in &quad::composite(quad_order, 0.0, tau, MAX_PANEL_LEN * lam_sq) {
            let kern = k_lambda(&model, pair, tau - u, quad_order)?;
            let prop = u_lambda(&model, pair, u)?;
            let rot = conjugation_superop(&model.eig_s().evolution(-u / lam_sq).kronecker(&ir));
            let unrot = conjugation_superop(&model.eig_s().evolution(u / lam_sq).kronecker(&ir));
            let term = rot.compose(&kern).compose(&unrot).compose(&prop);
            rhs = rhs.sub(&term.scale(crate::opcore::cr(w)));
        }
    }
    Ok(superop_norm_estimate(&lhs.sub(&rhs), DEFAULT_N_PROBE, 7))
}

/// Leading kernel term `int_0^T P L_SR(s) Q L_SR P ds` on the reduced
/// space, by panelled Gauss quadrature.
fn leading_term_reduced(
    model: &SystemBathModel,
    pair: &ProjectionPair,
    t_top: f64,
    order: usize,
) -> SuperOperator {
    let d_s = model.d_s();
    let parts = liouvillian_parts(model);
    let right = pair.q().mat() * parts.l_sr.mat() * pair.embed();
    let mut acc = DMatrix::<C64>::zeros(d_s * d_s, d_s * d_s);
    if t_top > 0.0 {
        for &(s, w) in &quad::composite(order, 0.0, t_top, MAX_PANEL_LEN) {
            let left = pair.extract() * l_sr_at(model, s).mat();
            acc += (&left * &right).map(|v| v * crate::opcore::cr(w));
        }
    }
    SuperOperator::wrap(d_s, acc)
}

/// Kernel series truncated after `K_{n_max}`: the second-order integral
/// `int_0^{tau/lambda^2} P L_SR(s) Q L_SR P ds` plus
/// `sum_{n=1}^{n_max} (-i lambda)^n K_n(tau/lambda^2)`.  The dropped tail
/// is controlled by the combinatorial coefficient bound, not recomputed
/// here.
pub fn k_lambda_series(
    model: &SystemBathModel,
    pair: &ProjectionPair,
    tau: f64,
    lambda: f64,
    n_max: usize,
) -> Result<SuperOperator> {
    if n_max > 3 {
        return Err(Error::Unsupported(format!(
            "series terms beyond K_3 are not computed; got n_max = {n_max}"
        )));
    }
    if tau < 0.0 {
        return Err(Error::Invalid(format!("kernel time must be >= 0, got {tau}")));
    }
    let model = model.with_lambda(lambda)?;
    let d = model.dim();
    if tau == 0.0 {
        return Ok(SuperOperator::zeros(d));
    }
    let t_top = tau / (lambda * lambda);
    let mut total = pair.lift(&leading_term_reduced(&model, pair, t_top, DEFAULT_AXIS_ORDER));
    for n in 1..=n_max {
        let grid = SimplexGrid::with_default_order(n, t_top)?;
        let kn = k_n_bruteforce(&model, pair, n, t_top, &grid)?;
        let coeff = C64::new(0.0, -lambda).powu(n as u32);
        total = total.add(&kn.scale(coeff));
    }
    Ok(total)
}
