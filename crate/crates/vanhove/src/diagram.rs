//! Combinatorial expansion of the memory-kernel coefficients.
//!
//! The reduced action of the order-n coefficient is a signed sum over
//! subsets of the interaction indices, with scalar weights given by
//! connected bath correlations indexed by contiguous partitions.  This
//! module builds that expansion directly from bath correlators and
//! ordered system products, with no reference to the projected
//! superoperator chain, so it serves as an independent cross-check of
//! the quadrature route in `dyson`.
//!
//! Conventions, fixed once here and used everywhere below:
//!
//! * a coefficient of order n carries n+2 interaction times indexed by
//!   (0, ..., n+1), with z_0 = 0 pinned and z ascending;
//! * a partition of order m splits the tuple (0, ..., m) into contiguous
//!   runs, each of length at least two, listed left to right; the
//!   order-n coefficient sums over partitions of order n+1;
//! * the rearrangement of a block by a subset A keeps the members of A
//!   first in ascending order, then appends the rest in descending
//!   order;
//! * a partition with b blocks carries sign (-1)^(b+1), a subset A
//!   carries sign (-1)^|A|;
//! * ordered system products: indices outside A multiply the state
//!   from the left in descending order, indices in A multiply it from
//!   the right in ascending order.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dyson::{pairwise_sum, validate_times, SimplexGrid};
use crate::model::{heisenberg_v, heisenberg_w, SystemBathModel};
use crate::nz::ProjectionPair;
use crate::opcore::{c, cr, left_mult, max_abs, right_mult, SuperOperator, C64};
use crate::{Error, Result};

/// Largest order accepted by the correlation-coefficient routines.  The
/// subset sum has 2^(n+2) terms and each term sums over every
/// contiguous partition, so the cost grows too fast to be useful beyond
/// this.
pub const MAX_DIAGRAM_ORDER: usize = 6;

/// Partition of the index tuple (0, ..., n) into contiguous runs of
/// length at least two, stored as the run lengths from left to right.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoncrossingPartition {
    n: usize,
    lengths: Vec<usize>,
}

impl NoncrossingPartition {
    /// Builds a partition of (0, ..., n) from its block lengths.
    pub fn new(n: usize, lengths: Vec<usize>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("partition order must be at least 1".into()));
        }
        if lengths.iter().any(|&l| l < 2) {
            return Err(Error::Invalid("every block needs length at least 2".into()));
        }
        if lengths.iter().sum::<usize>() != n + 1 {
            return Err(Error::Invalid(format!(
                "block lengths must cover all {} indices",
                n + 1
            )));
        }
        Ok(Self { n, lengths })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn block_count(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// Sign carried by the partition in the expansion.
    pub fn sign(&self) -> f64 {
        if self.lengths.len() % 2 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    /// Materializes the blocks as index runs, left to right.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(self.lengths.len());
        let mut next = 0;
        for &len in &self.lengths {
            out.push((next..next + len).collect());
            next += len;
        }
        out
    }
}

/// Enumerates every partition of (0, ..., n) into contiguous runs of
/// length at least two.  Deterministic order: longest first block, then
/// recursively on the remainder.
pub fn enumerate_nc(n: usize) -> Result<Vec<NoncrossingPartition>> {
    if n == 0 {
        return Err(Error::Invalid("partition order must be at least 1".into()));
    }
    let mut out = Vec::new();
    let mut stack = Vec::new();
    fill_compositions(n + 1, &mut stack, &mut out);
    out.into_iter().map(|lengths| NoncrossingPartition::new(n, lengths)).collect()
}

fn fill_compositions(remaining: usize, stack: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if remaining == 0 {
        out.push(stack.clone());
        return;
    }
    for first in (2..=remaining).rev() {
        if remaining - first == 1 {
            continue;
        }
        stack.push(first);
        fill_compositions(remaining - first, stack, out);
        stack.pop();
    }
}

/// Subset of the interaction indices (0, ..., n+1), selecting which
/// system factors act from the right of the state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexSubsetA {
    n: usize,
    members: Vec<usize>,
}

impl IndexSubsetA {
    /// Builds a subset of (0, ..., n+1); members are sorted and
    /// deduplicated.
    pub fn new(n: usize, members: &[usize]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("subset order must be at least 1".into()));
        }
        let mut members = members.to_vec();
        members.sort_unstable();
        members.dedup();
        if members.last().is_some_and(|&m| m > n + 1) {
            return Err(Error::Invalid(format!("subset member exceeds index {}", n + 1)));
        }
        Ok(Self { n, members })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn contains(&self, k: usize) -> bool {
        self.members.binary_search(&k).is_ok()
    }

    /// Complement within (0, ..., n+1), ascending.
    pub fn complement(&self) -> Vec<usize> {
        (0..=self.n + 1).filter(|k| !self.contains(*k)).collect()
    }

    /// Sign carried by the subset in the expansion.
    pub fn sign(&self) -> f64 {
        if self.members.len().is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }
}

/// All 2^(n+2) subsets of (0, ..., n+1), in ascending bitmask order.
pub fn all_subsets(n: usize) -> Result<Vec<IndexSubsetA>> {
    if n == 0 {
        return Err(Error::Invalid("subset order must be at least 1".into()));
    }
    if n > MAX_DIAGRAM_ORDER {
        return Err(Error::Unsupported(format!(
            "subset enumeration capped at order {MAX_DIAGRAM_ORDER}"
        )));
    }
    let mut out = Vec::with_capacity(1 << (n + 2));
    for mask in 0u32..(1 << (n + 2)) {
        let members: Vec<usize> = (0..=n + 1).filter(|k| mask >> k & 1 == 1).collect();
        out.push(IndexSubsetA { n, members });
    }
    Ok(out)
}

/// Rearranges an ascending index block by a subset: members of A keep
/// ascending order and come first, the rest follow in descending order.
pub fn rearrange(block: &[usize], a: &IndexSubsetA) -> Vec<usize> {
    let mut out: Vec<usize> = block.iter().copied().filter(|&k| a.contains(k)).collect();
    out.extend(block.iter().rev().copied().filter(|&k| !a.contains(k)));
    out
}

/// Expectation of an ordered product of interaction-picture bath
/// factors in the reference vector, evaluated as a chain of
/// matrix-vector products.
fn bath_correlator(v_at: &[DMatrix<C64>], tuple: &[usize], omega: &DVector<C64>) -> C64 {
    let mut ket = omega.clone();
    for &k in tuple.iter().rev() {
        ket = &v_at[k] * ket;
    }
    omega.dotc(&ket)
}

/// Signed sum over contiguous partitions of products of bath
/// correlators, each block read in its rearranged order.
fn connected_weight(
    partitions: &[NoncrossingPartition],
    v_at: &[DMatrix<C64>],
    omega: &DVector<C64>,
    a: &IndexSubsetA,
) -> C64 {
    let mut total = c(0.0, 0.0);
    for d in partitions {
        let mut product = cr(d.sign());
        for block in d.blocks() {
            product *= bath_correlator(v_at, &rearrange(&block, a), omega);
        }
        total += product;
    }
    total
}

fn check_diagram_times(z: &[f64]) -> Result<usize> {
    validate_times(z)?;
    if z.len() < 3 {
        return Err(Error::Invalid("need at least three interaction times".into()));
    }
    let n = z.len() - 2;
    if n > MAX_DIAGRAM_ORDER {
        return Err(Error::Unsupported(format!(
            "correlation coefficients capped at order {MAX_DIAGRAM_ORDER}"
        )));
    }
    Ok(n)
}

/// Correlation coefficient of order n for subset A at the given times.
pub fn g_n(model: &SystemBathModel, a: &IndexSubsetA, z: &[f64]) -> Result<C64> {
    let n = check_diagram_times(z)?;
    if a.n() != n {
        return Err(Error::Invalid("subset order does not match the time vector".into()));
    }
    let v_at: Vec<DMatrix<C64>> = z.iter().map(|&t| heisenberg_v(model, t)).collect();
    let partitions = enumerate_nc(n + 1)?;
    Ok(connected_weight(&partitions, &v_at, model.omega_r(), a))
}

/// Reduced integrand of the order-n coefficient at the given times: the
/// signed subset sum of correlation coefficients times ordered products
/// of interaction-picture system factors.
fn diagram_integrand_reduced(model: &SystemBathModel, z: &[f64]) -> Result<DMatrix<C64>> {
    let n = check_diagram_times(z)?;
    let d_s = model.d_s();
    let d_sq = d_s * d_s;
    let w_at: Vec<DMatrix<C64>> = z.iter().map(|&t| heisenberg_w(model, t)).collect();
    let v_at: Vec<DMatrix<C64>> = z.iter().map(|&t| heisenberg_v(model, t)).collect();
    let partitions = enumerate_nc(n + 1)?;
    let omega = model.omega_r();
    let mut acc = DMatrix::<C64>::zeros(d_sq, d_sq);
    for a in all_subsets(n)? {
        let weight = connected_weight(&partitions, &v_at, omega, &a) * cr(a.sign());
        if weight.norm() == 0.0 {
            continue;
        }
        let mut left = DMatrix::<C64>::identity(d_s, d_s);
        for &j in a.complement().iter().rev() {
            left *= &w_at[j];
        }
        let mut right = DMatrix::<C64>::identity(d_s, d_s);
        for &k in a.members() {
            right *= &w_at[k];
        }
        let sandwich = left_mult(&left).compose(&right_mult(&right));
        acc += sandwich.mat() * weight;
    }
    Ok(acc)
}

/// Integrand of the order-n coefficient on the full space, built from
/// the combinatorial expansion and conjugated back through the
/// projection pair.  Pointwise equal to [`crate::dyson::dyson_integrand`].
pub fn diagram_integrand(
    model: &SystemBathModel,
    pair: &ProjectionPair,
    z: &[f64],
) -> Result<SuperOperator> {
    let reduced = diagram_integrand_reduced(model, z)?;
    Ok(pair.lift(&SuperOperator::wrap(model.d_s(), reduced)))
}

/// Order-n coefficient at horizon t by the combinatorial route, acting
/// on system states only.
pub fn k_n_combinatorial_reduced(
    model: &SystemBathModel,
    n: usize,
    t: f64,
    grid: &SimplexGrid,
) -> Result<SuperOperator> {
    if n == 0 {
        return Err(Error::Invalid("coefficient order must be at least 1".into()));
    }
    if n > MAX_DIAGRAM_ORDER {
        return Err(Error::Unsupported(format!(
            "combinatorial coefficients capped at order {MAX_DIAGRAM_ORDER}"
        )));
    }
    if grid.n != n {
        return Err(Error::Invalid(format!(
            "grid was built for order {}, requested order {n}",
            grid.n
        )));
    }
    if (grid.t - t).abs() > 1e-12 * t.abs().max(1.0) {
        return Err(Error::Invalid(format!(
            "grid horizon {} does not match requested horizon {t}",
            grid.t
        )));
    }
    let d_sq = model.d_s() * model.d_s();
    let weighted: Result<Vec<DMatrix<C64>>> = grid
        .nodes()
        .par_iter()
        .map(|(zs, w)| {
            let mut z = Vec::with_capacity(zs.len() + 1);
            z.push(0.0);
            z.extend_from_slice(zs);
            Ok(diagram_integrand_reduced(model, &z)? * cr(*w))
        })
        .collect();
    let reduced = pairwise_sum(weighted?, d_sq);
    Ok(SuperOperator::wrap(model.d_s(), reduced))
}

/// Order-n coefficient at horizon t by the combinatorial route, on the
/// same simplex grid as the quadrature route so the two integrands can
/// be compared node for node.
pub fn k_n_combinatorial(
    model: &SystemBathModel,
    pair: &ProjectionPair,
    n: usize,
    t: f64,
    grid: &SimplexGrid,
) -> Result<SuperOperator> {
    Ok(pair.lift(&k_n_combinatorial_reduced(model, n, t, grid)?))
}

/// Maximum entrywise deviation between the projected interaction chain
/// at the given times and its expansion as a signed sum over contiguous
/// partitions of projection-bracketed sub-chains.
pub fn verify_pqp_expansion(
    model: &SystemBathModel,
    pair: &ProjectionPair,
    n: usize,
    z: &[f64],
) -> Result<f64> {
    let order = check_diagram_times(z)?;
    if order != n {
        return Err(Error::Invalid("time vector does not match the requested order".into()));
    }
    let lsr: Vec<SuperOperator> = z.iter().map(|&t| crate::model::l_sr_at(model, t)).collect();
    let p = pair.p();
    let q = pair.q();

    let mut chain = lsr[0].compose(p);
    for factor in lsr.iter().skip(1) {
        chain = factor.compose(&q.compose(&chain));
    }
    let lhs = p.compose(&chain);

    let mut rhs = DMatrix::<C64>::zeros(lhs.mat().nrows(), lhs.mat().ncols());
    for d in enumerate_nc(n + 1)? {
        let mut term = SuperOperator::identity(model.dim());
        for block in d.blocks() {
            let mut bracket = p.clone();
            for &k in &block {
                bracket = lsr[k].compose(&bracket);
            }
            term = p.compose(&bracket).compose(&term);
        }
        rhs += term.mat() * cr(d.sign());
    }
    Ok(max_abs(&(lhs.mat() - rhs)))
}

/// Renders one term of the expansion as fixed-width text: the index
/// axis, the side each system factor acts on, the partition blocks as
/// bracket spans, and each block's correlator in rearranged order, with
/// the overall sign.  Output is deterministic byte for byte.
pub fn render_diagram(n: usize, a: &IndexSubsetA, d: &NoncrossingPartition) -> Result<String> {
    if a.n() != n {
        return Err(Error::Invalid("subset order must match the requested order".into()));
    }
    if d.n() != n + 1 {
        return Err(Error::Invalid("partition must have order n + 1 for an order-n term".into()));
    }
    let cell = 4;
    let label = |s: &str| format!("{s:<10}");

    let mut axis = label("index");
    let mut side = label("W side");
    let mut arcs = label("V blocks");
    for k in 0..=n + 1 {
        axis.push_str(&format!("{k:<cell$}"));
        side.push_str(&format!("{:<cell$}", if a.contains(k) { "R" } else { "L" }));
    }
    for block in d.blocks() {
        let width = cell * block.len();
        let mut span = String::from("[");
        while span.len() < width - 1 {
            span.push('=');
        }
        span.push(']');
        arcs.push_str(&span);
    }

    let sign = a.sign() * d.sign();
    let mut out = format!(
        "order {}  A = {{{}}}  sign = {}\n",
        n,
        a.members().iter().map(|k| k.to_string()).collect::<Vec<_>>().join(", "),
        if sign > 0.0 { "+" } else { "-" },
    );
    for line in [axis, side, arcs] {
        out.push_str(line.trim_end());
        out.push('\n');
    }
    for (s, block) in d.blocks().iter().enumerate() {
        let tuple = rearrange(block, a);
        out.push_str(&format!(
            "block {}   tr[ {} w ]\n",
            s + 1,
            tuple.iter().map(|k| format!("V{k}")).collect::<Vec<_>>().join(" "),
        ));
    }
    Ok(out)
}
