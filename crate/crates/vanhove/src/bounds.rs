//! Integral estimates controlling the kernel expansion term by term:
//! simplex moments of difference kernels, the epsilon-weighted growth
//! constants, gapped permutations, and the per-order bound check.
//!
//! The central identity reduces the `(m+1)`-fold simplex integral of a
//! kernel of one time difference to a single weighted 1-D integral.
//! With an epsilon of smoothness traded away, the gapped pairs admit a
//! `t^{m-eps}` estimate whose constant is the finite max `xi_m^(eps)`,
//! and the per-order coefficients inherit factorially decaying bounds.

use crate::diagram::k_n_combinatorial_reduced;
use crate::dyson::SimplexGrid;
use crate::model::SystemBathModel;
use crate::opcore::superop_norm_estimate;
use crate::{quad, Error, Result};

/// Clustering certificate for a model: asserts the correlator combinations
/// entering order `n` are bounded by `C^{n+2}/[n/2]!` times a sum over
/// gapped permutations of products of `f(z_j - z_k)`, with
/// `f(s) = f_amp e^{-f_rate |s|}`.
///
/// Certificates are inputs (preset-supplied or user-supplied); the crate
/// consumes them through the bound checks rather than proving them.
#[derive(Clone, Debug)]
pub struct ClusteringData {
    pub c: f64,
    pub f_amp: f64,
    pub f_rate: f64,
    /// Weight exponent for the `(1+|s|)^epsilon` norm, in `(0, 1)`.
    pub epsilon: f64,
}

impl ClusteringData {
    /// `integral_R f = 2 f_amp / f_rate`.
    pub fn f_l1(&self) -> f64 {
        2.0 * self.f_amp / self.f_rate
    }

    /// `integral_R f(s) (1+|s|)^epsilon ds`, by quadrature (no elementary
    /// closed form for fractional epsilon). The integrand decays like
    /// `e^{-f_rate s}`, so the cutoff is far past negligible.
    pub fn f_l1_eps(&self) -> f64 {
        let cutoff = 60.0 / self.f_rate;
        let half: f64 = quad::composite(16, 0.0, cutoff, 2.0 / self.f_rate)
            .iter()
            .map(|&(s, w)| w * self.f_amp * (-self.f_rate * s).exp() * (1.0 + s).powf(self.epsilon))
            .sum();
        2.0 * half
    }
}

/// Permutation of the `n+2` time indices whose first two slots hold
/// values at least two apart, so the pair they select spans a gap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GappedPermutation {
    n: usize,
    mapping: Vec<usize>,
}

impl GappedPermutation {
    pub fn new(n: usize, mapping: Vec<usize>) -> Result<Self> {
        if mapping.len() != n + 2 {
            return Err(Error::Invalid(format!(
                "mapping has {} entries, a permutation of 0..={} needs {}",
                mapping.len(),
                n + 1,
                n + 2
            )));
        }
        let mut seen = vec![false; n + 2];
        for &v in &mapping {
            if v > n + 1 || seen[v] {
                return Err(Error::Invalid(format!(
                    "mapping is not a permutation of 0..={}",
                    n + 1
                )));
            }
            seen[v] = true;
        }
        if mapping[1].abs_diff(mapping[0]) < 2 {
            return Err(Error::Invalid(format!(
                "first two slots hold {} and {}; they must differ by at least 2",
                mapping[0], mapping[1]
            )));
        }
        Ok(GappedPermutation { n, mapping })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }
}

/// Result of [`enumerate_gapped`]: the full list where enumeration is
/// affordable, otherwise just the closed-form count.
#[derive(Clone, Debug)]
pub enum GappedEnumeration {
    Full(Vec<GappedPermutation>),
    CountOnly(u128),
}

impl GappedEnumeration {
    pub fn count(&self) -> u128 {
        match self {
            GappedEnumeration::Full(v) => v.len() as u128,
            GappedEnumeration::CountOnly(c) => *c,
        }
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|x| x as f64).product()
}

fn factorial_u128(k: usize) -> Result<u128> {
    let mut acc: u128 = 1;
    for x in 1..=k as u128 {
        acc = acc
            .checked_mul(x)
            .ok_or_else(|| Error::Unsupported(format!("{k}! overflows the count type")))?;
    }
    Ok(acc)
}

/// All gapped permutations of `{0,...,n+1}` for `n <= 7` (by filtering
/// every permutation), or the count `(n+2)! - 2(n+1)!` alone beyond
/// that.  The full listings are counted as filtered, never assumed.
pub fn enumerate_gapped(n: usize) -> Result<GappedEnumeration> {
    if n > 7 {
        let total = factorial_u128(n + 2)?;
        let adjacent = 2 * factorial_u128(n + 1)?;
        return Ok(GappedEnumeration::CountOnly(total - adjacent));
    }
    let mut out = Vec::new();
    let mut slots: Vec<usize> = (0..n + 2).collect();
    permute_into(&mut slots, 0, &mut |p| {
        if p[1].abs_diff(p[0]) >= 2 {
            out.push(GappedPermutation { n, mapping: p.to_vec() });
        }
    });
    Ok(GappedEnumeration::Full(out))
}

fn permute_into(slots: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k + 1 >= slots.len() {
        visit(slots);
        return;
    }
    for i in k..slots.len() {
        slots.swap(k, i);
        permute_into(slots, k + 1, visit);
        slots.swap(k, i);
    }
}

fn check_pair(m: usize, k: usize, i: usize) -> Result<()> {
    if k <= i {
        return Err(Error::Invalid(format!(
            "pair (k, i) = ({k}, {i}) has k <= i; the moment needs 0 <= i < k <= m+1"
        )));
    }
    if k > m + 1 {
        return Err(Error::Invalid(format!(
            "pair index k = {k} exceeds the largest time index {} at order m = {m}",
            m + 1
        )));
    }
    Ok(())
}

/// `integral over the ordered simplex of g(z_k - z_i)`, through the
/// closed form
/// `integral_0^t g(s) s^{k-i-1}/(k-i-1)! (t-s)^{m-k+i+1}/(m-k+i+1)! ds`
/// evaluated by 1-D quadrature.  The tuple has `m+1` free times plus
/// `z_0 = 0` pinned.
pub fn simplex_moment(g: impl Fn(f64) -> f64, m: usize, k: usize, i: usize, t: f64) -> Result<f64> {
    check_pair(m, k, i)?;
    if !(t >= 0.0) {
        return Err(Error::Invalid(format!("horizon must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let a = k - i - 1;
    let b = m + 1 - (k - i);
    let fa = factorial(a);
    let fb = factorial(b);
    Ok(quad::composite(16, 0.0, t, t / 8.0)
        .iter()
        .map(|&(s, w)| w * g(s) * s.powi(a as i32) / fa * (t - s).powi(b as i32) / fb)
        .sum())
}

/// Oracle for [`simplex_moment`]: direct iterated quadrature over
/// `0 <= z_1 <= ... <= z_{m+1} <= t`, one Gauss panel per level.
pub fn simplex_moment_bruteforce(
    g: impl Fn(f64) -> f64,
    m: usize,
    k: usize,
    i: usize,
    t: f64,
    nodes: usize,
) -> Result<f64> {
    check_pair(m, k, i)?;
    if m > 4 {
        return Err(Error::Unsupported(format!(
            "direct simplex quadrature is capped at order 4 (cost grows as nodes^(m+1)), got m = {m}"
        )));
    }
    if nodes < 2 {
        return Err(Error::Invalid(format!("need at least 2 nodes per axis, got {nodes}")));
    }
    if !(t >= 0.0) {
        return Err(Error::Invalid(format!("horizon must be >= 0, got {t}")));
    }
    let mut z = vec![0.0f64; m + 2];
    Ok(nest(&g, k, i, t, m + 1, nodes, &mut z))
}

fn nest(
    g: &impl Fn(f64) -> f64,
    k: usize,
    i: usize,
    upper: f64,
    level: usize,
    nodes: usize,
    z: &mut Vec<f64>,
) -> f64 {
    if level == 0 {
        return g(z[k] - z[i]);
    }
    let mut acc = 0.0;
    for (s, w) in quad::on_interval(nodes, 0.0, upper) {
        z[level] = s;
        acc += w * nest(g, k, i, s, level - 1, nodes, z);
    }
    acc
}

/// Monte Carlo oracle for [`simplex_moment`]: ordered uniform samples.
/// Returns the estimate and its standard error.
pub fn simplex_moment_montecarlo(
    g: impl Fn(f64) -> f64,
    m: usize,
    k: usize,
    i: usize,
    t: f64,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    use rand::{Rng, SeedableRng};
    check_pair(m, k, i)?;
    if samples < 2 {
        return Err(Error::Invalid(format!("need at least 2 samples, got {samples}")));
    }
    if !(t >= 0.0) {
        return Err(Error::Invalid(format!("horizon must be >= 0, got {t}")));
    }
    let volume = t.powi(m as i32 + 1) / factorial(m + 1);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    let mut draw = vec![0.0f64; m + 2];
    for _ in 0..samples {
        draw[0] = 0.0;
        for slot in draw.iter_mut().skip(1) {
            *slot = t * rng.random::<f64>();
        }
        draw[1..].sort_by(f64::total_cmp);
        let val = g(draw[k] - draw[i]);
        sum += val;
        sum_sq += val * val;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) / (n - 1.0);
    Ok((volume * mean, volume * var.sqrt()))
}

/// `x^p` with the convention `0^0 = 1`, needed when the outer factor's
/// exponent `m-k+i+1` vanishes.
fn xpow(x: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else {
        x.powf(p)
    }
}

/// Closed-form maximum of `s^{k-i-1-eps} (t-s)^{m-k+i+1}` over
/// `s in [0, t]`, attained at the interior critical point (or at `s = t`
/// when the second exponent vanishes).
pub fn moment_peak(m: usize, k: usize, i: usize, t: f64, epsilon: f64) -> Result<f64> {
    check_pair(m, k, i)?;
    if k == i + 1 {
        return Err(Error::Invalid(format!(
            "pair (k, i) = ({k}, {i}) has no gap; the first exponent {} - eps is negative and \
             the peak estimate is not claimed without k > i+1",
            k - i - 1
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Invalid(format!("epsilon must lie in (0,1), got {epsilon}")));
    }
    if !(t > 0.0) {
        return Err(Error::Invalid(format!("horizon must be positive, got {t}")));
    }
    let a = (k - i - 1) as f64 - epsilon;
    let b = (m + 1 - (k - i)) as f64;
    let whole = m as f64 - epsilon;
    Ok(xpow(t, whole) * xpow(a, a) * xpow(b, b) / xpow(whole, whole))
}

/// Every gapped candidate entering the max of [`xi_eps`], as
/// `(k, i, value)` with
/// `value = a^a b^b / ((m-eps)^{m-eps} (k-i-1)! (m-k+i+1)!)` and
/// `a = k-i-1-eps`, `b = m-k+i+1`.
pub fn xi_candidates(m: usize, epsilon: f64) -> Result<Vec<(usize, usize, f64)>> {
    if m < 1 {
        return Err(Error::Invalid("the weighted estimate starts at order m = 1".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Invalid(format!("epsilon must lie in (0,1), got {epsilon}")));
    }
    let mut out = Vec::new();
    for i in 0..=m + 1 {
        for k in i + 2..=m + 1 {
            let a = (k - i - 1) as f64 - epsilon;
            let b = (m + 1 - (k - i)) as f64;
            let whole = m as f64 - epsilon;
            let value = xpow(a, a) * xpow(b, b)
                / (xpow(whole, whole) * factorial(k - i - 1) * factorial(m + 1 - (k - i)));
            out.push((k, i, value));
        }
    }
    Ok(out)
}

/// `xi_m^(eps)`: exact maximum over the finite gapped `(k, i)` grid.
pub fn xi_eps(m: usize, epsilon: f64) -> Result<f64> {
    Ok(xi_candidates(m, epsilon)?
        .iter()
        .fold(0.0f64, |best, &(_, _, v)| best.max(v)))
}

/// `integral_R |g(s)| (1+|s|)^eps ds` by quadrature over `[-span, span]`;
/// the caller vouches that `g` is negligible beyond the span.
pub fn weighted_l1(g: impl Fn(f64) -> f64, epsilon: f64, span: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Invalid(format!("epsilon must lie in (0,1), got {epsilon}")));
    }
    if !(span > 0.0) {
        return Err(Error::Invalid(format!("span must be positive, got {span}")));
    }
    Ok(quad::composite(16, -span, span, span / 24.0)
        .iter()
        .map(|&(s, w)| w * g(s).abs() * (1.0 + s.abs()).powf(epsilon))
        .sum())
}

/// Checks the gapped-pair estimate
/// `simplex_moment <= |g|_{1,eps} xi_m^(eps) t^{m-eps}` and returns
/// `(lhs, rhs)`.  `span` is the quadrature range for the weighted norm
/// of `g`.  The pair must have a gap: for `k = i+1` the estimate is not
/// claimed and the call is rejected.
pub fn eps_estimate_check(
    g: impl Fn(f64) -> f64,
    m: usize,
    k: usize,
    i: usize,
    t: f64,
    epsilon: f64,
    span: f64,
) -> Result<(f64, f64)> {
    check_pair(m, k, i)?;
    if k == i + 1 {
        return Err(Error::Invalid(format!(
            "pair (k, i) = ({k}, {i}) has no gap: the weighted estimate trades an eps power of \
             the inner variable and needs k > i+1 for that power to stay positive"
        )));
    }
    let lhs = simplex_moment(&g, m, k, i, t)?;
    let rhs = weighted_l1(&g, epsilon, span)? * xi_eps(m, epsilon)? * xpow(t, m as f64 - epsilon);
    if lhs > rhs * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::Invalid(format!(
            "gapped moment {lhs:.6e} exceeds its weighted-norm bound {rhs:.6e}; the kernel \
             likely violates the stated preconditions (non-negative, negligible past the span)"
        )));
    }
    Ok((lhs, rhs))
}

/// `g~(x) = g(-x)`: the reflection that transfers a one-sided bound
/// across the diagonal; it preserves every `(1+|s|)^eps`-weighted norm.
pub fn reflect(g: impl Fn(f64) -> f64) -> impl Fn(f64) -> f64 {
    move |x| g(-x)
}

/// `c_n = (2 C |W|)^{n+2} / [n/2]! * |f|_1^{[(n+1)/2]+1}`.
pub fn constant_cn(clustering: &ClusteringData, w_norm: f64, n: usize) -> f64 {
    let base = 2.0 * clustering.c * w_norm;
    base.powi(n as i32 + 2) / factorial(n / 2) * clustering.f_l1().powi((n.div_ceil(2) + 1) as i32)
}

/// `d_m = (2 C |W|)^{2m+2} / m! * (2m+2)! * |f|_{1,eps} * xi_m^(eps)`.
pub fn constant_dm(clustering: &ClusteringData, w_norm: f64, m: usize) -> Result<f64> {
    let base = 2.0 * clustering.c * w_norm;
    Ok(base.powi(2 * m as i32 + 2) / factorial(m)
        * factorial(2 * m + 2)
        * clustering.f_l1_eps()
        * xi_eps(m, clustering.epsilon)?)
}

/// One horizon of the per-order bound check.
#[derive(Clone, Copy, Debug)]
pub struct KnBoundRow {
    pub t: f64,
    /// Probe lower bound on the coefficient's trace-norm induced norm;
    /// a pass against it is meaningful, a failure is decisive.
    pub norm_probe: f64,
    /// `c_n t^[n/2]`.
    pub poly_bound: f64,
    /// `d_m t^{m-eps}` when `n = 2m`; absent at odd orders.
    pub eps_bound: Option<f64>,
    pub pass: bool,
}

/// Checks `norm(K_n(t)) <= c_n t^[n/2]` (and the epsilon-weighted bound
/// at even orders) over a horizon grid, against a supplied certificate.
/// The crate never derives certificates from a model; a missing one is
/// rejected.
pub fn verify_kn_bound(
    model: &SystemBathModel,
    certificate: Option<&ClusteringData>,
    n: usize,
    t_grid: &[f64],
) -> Result<Vec<KnBoundRow>> {
    let Some(clustering) = certificate else {
        return Err(Error::Config(
            "no clustering certificate supplied for this model; the bound check consumes one \
             rather than deriving it (presets carry theirs)"
                .into(),
        ));
    };
    if t_grid.is_empty() {
        return Err(Error::Invalid("horizon grid must be nonempty".into()));
    }
    let w_norm = model.w_norm();
    let cn = constant_cn(clustering, w_norm, n);
    let dm = if n >= 2 && n.is_multiple_of(2) {
        Some(constant_dm(clustering, w_norm, n / 2)?)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let grid = SimplexGrid::with_default_order(n, t)?;
        let kernel = k_n_combinatorial_reduced(model, n, t, &grid)?;
        let norm_probe = superop_norm_estimate(&kernel, 64, 0);
        let poly_bound = cn * t.powi((n / 2) as i32);
        let eps_bound = dm.map(|d| d * t.powf((n / 2) as f64 - clustering.epsilon));
        let pass = norm_probe <= poly_bound && eps_bound.is_none_or(|e| norm_probe <= e);
        rows.push(KnBoundRow { t, norm_probe, poly_bound, eps_bound, pass });
    }
    Ok(rows)
}
