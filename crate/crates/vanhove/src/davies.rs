//! Second-order generator of the reduced dynamics, its spectral average,
//! the limiting semigroup, complete-positivity diagnostics, and the
//! weak-coupling convergence study.
//!
//! The generator acts on system states as
//! `K s = integral_0^T ( phi(z) [W(z), W s] - phi(-z) [W(z), s W] ) dz`.
//! With the analytic correlation family the cutoff sits under an
//! integrable tail; with the model's own finite-bath correlator it has
//! to stay inside the pre-recurrence window, and the result is flagged
//! accordingly.  The semigroup is only formed after spectral averaging,
//! which is what makes it completely positive.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::model::{heisenberg_w, BohrSpectrum, CorrelationFunction, ExponentialPhi, SystemBathModel};
use crate::nz::ProjectionPair;
use crate::opcore::{
    c, conjugation_superop, cr, left_mult, mat_exp_super, right_mult, trace_norm, EigH,
    SuperOperator, C64,
};
use crate::{quad, Error, Result};

/// Axis order for the generator and time-average quadratures.
pub const DEFAULT_QUAD_ORDER: usize = 8;

/// Panel length for the cutoff integral; short enough that one Gauss
/// panel resolves the fastest bath oscillation in every preset.
const PANEL_LEN: f64 = 0.4;

/// Second-order generator before or after spectral averaging.
#[derive(Clone, Debug)]
pub struct DaviesGenerator {
    /// The generator conjugated back onto the full space; supported on
    /// the range of the projection.
    pub k_full: SuperOperator,
    /// The generator acting on system states.
    pub k_reduced: SuperOperator,
    /// Set once the generator has been spectrally averaged; the
    /// semigroup is only formed from an averaged generator.
    pub natural_averaged: bool,
    /// Set on the finite-bath path, where the cutoff sits inside a
    /// recurrence window instead of under an integrable tail.
    pub window_limited: bool,
}

impl DaviesGenerator {
    /// Spectrally averaged copy; the only form [`gkls_semigroup`] accepts.
    pub fn averaged(
        &self,
        spectrum: &BohrSpectrum,
        pair: &ProjectionPair,
    ) -> Result<DaviesGenerator> {
        let k_reduced = spectral_average(&self.k_reduced, spectrum)?;
        Ok(DaviesGenerator {
            k_full: pair.lift(&k_reduced),
            k_reduced,
            natural_averaged: true,
            window_limited: self.window_limited,
        })
    }
}

fn k_reduced_mat(
    model: &SystemBathModel,
    phi: &CorrelationFunction,
    cutoff: f64,
    quad_order: usize,
    taper: bool,
) -> Result<DMatrix<C64>> {
    if !(cutoff > 0.0) {
        return Err(Error::Invalid(format!("cutoff must be positive, got {cutoff}")));
    }
    if quad_order < 2 {
        return Err(Error::Invalid(format!("need a quadrature order of at least 2, got {quad_order}")));
    }
    let d_sq = model.d_s() * model.d_s();
    let lw = left_mult(model.w());
    let rw = right_mult(model.w());
    let mut acc = DMatrix::<C64>::zeros(d_sq, d_sq);
    for (z, wt) in quad::composite(quad_order, 0.0, cutoff, PANEL_LEN) {
        let wt = if taper { wt * (1.0 - z / cutoff) } else { wt };
        let wz = heisenberg_w(model, z);
        let ad = left_mult(&wz).mat() - right_mult(&wz).mat();
        acc += (&ad * lw.mat()) * (phi.phi(z) * cr(wt)) - (&ad * rw.mat()) * (phi.phi(-z) * cr(wt));
    }
    Ok(acc)
}

/// Generator from the analytic correlation family.  The caller picks the
/// cutoff; [`analytic_cutoff`] gives one with a tail below a target.
pub fn davies_k_analytic(
    model: &SystemBathModel,
    pair: &ProjectionPair,
    phi: &ExponentialPhi,
    cutoff: f64,
    quad_order: usize,
) -> Result<DaviesGenerator> {
    let corr = CorrelationFunction::Exponential(phi.clone());
    let red = k_reduced_mat(model, &corr, cutoff, quad_order, false)?;
    let k_reduced = SuperOperator::wrap(model.d_s(), red);
    Ok(DaviesGenerator {
        k_full: pair.lift(&k_reduced),
        k_reduced,
        natural_averaged: false,
        window_limited: false,
    })
}

/// Generator from the model's own correlation function.  A finite bath
/// is quasi-periodic, so no cutoff has a tail estimate; the result is
/// always flagged window-limited and the caller is responsible for a
/// cutoff inside the pre-recurrence window.
pub fn davies_k_finite(
    model: &SystemBathModel,
    pair: &ProjectionPair,
    cutoff: f64,
    quad_order: usize,
) -> Result<DaviesGenerator> {
    let corr = CorrelationFunction::finite_from_model(model);
    let red = k_reduced_mat(model, &corr, cutoff, quad_order, false)?;
    let k_reduced = SuperOperator::wrap(model.d_s(), red);
    Ok(DaviesGenerator {
        k_full: pair.lift(&k_reduced),
        k_reduced,
        natural_averaged: false,
        window_limited: true,
    })
}

/// Cutoff average `(1/T) integral_0^T K_t dt` of the finite-bath
/// generator; by Fubini the plain integrand just picks up the weight
/// `1 - z/T`.  A quasi-periodic correlator makes the sharp-cutoff
/// generator oscillate with `T` at amplitude `1/gap` indefinitely,
/// where `gap` separates the bath energies from the Bohr frequencies;
/// the average damps the oscillation to `1/(gap^2 T)` and settles on
/// the principal value of the half-line transform.  Still flagged
/// window-limited: `T` has to stay inside the pre-recurrence window.
pub fn davies_k_finite_cesaro(
    model: &SystemBathModel,
    pair: &ProjectionPair,
    cutoff: f64,
    quad_order: usize,
) -> Result<DaviesGenerator> {
    let corr = CorrelationFunction::finite_from_model(model);
    let red = k_reduced_mat(model, &corr, cutoff, quad_order, true)?;
    let k_reduced = SuperOperator::wrap(model.d_s(), red);
    Ok(DaviesGenerator {
        k_full: pair.lift(&k_reduced),
        k_reduced,
        natural_averaged: false,
        window_limited: true,
    })
}

/// Cutoff at which the neglected generator tail `4 |W|^2 gamma tau_c
/// e^{-T/tau_c}` drops below `tol`.
pub fn analytic_cutoff(phi: &ExponentialPhi, w_norm: f64, tol: f64) -> f64 {
    let scale = 4.0 * w_norm * w_norm * phi.gamma * phi.tau_c;
    if scale <= tol {
        return phi.tau_c;
    }
    phi.tau_c * (scale / tol).ln()
}

/// `X^nat = sum_a Q_a X Q_a` over the frequency projections, picked on
/// the system or the full space by the operand's dimension.
pub fn spectral_average(x: &SuperOperator, spectrum: &BohrSpectrum) -> Result<SuperOperator> {
    let projectors = if x.op_dim() == spectrum.d_s {
        spectrum.reduced_projectors()
    } else if x.op_dim() == spectrum.d_s * spectrum.d_r {
        spectrum.full_projectors()
    } else {
        return Err(Error::Dim(format!(
            "operand acts on dimension {}, spectrum covers {} or {}",
            x.op_dim(),
            spectrum.d_s,
            spectrum.d_s * spectrum.d_r
        )));
    };
    let d_sq = x.op_dim() * x.op_dim();
    let mut acc = DMatrix::<C64>::zeros(d_sq, d_sq);
    for q in projectors {
        acc += q.compose(x).compose(q).mat();
    }
    Ok(SuperOperator::wrap(x.op_dim(), acc))
}

/// `e^{+i t H_S}` assembled from the spectral data, exact per frequency.
fn system_phase(spectrum: &BohrSpectrum, t: f64) -> DMatrix<C64> {
    let mut u = DMatrix::<C64>::zeros(spectrum.d_s, spectrum.d_s);
    for (e, p) in spectrum.energies.iter().zip(&spectrum.projectors) {
        u += p * C64::from_polar(1.0, e * t);
    }
    u
}

/// `(1/T) integral_0^T e^{i t L_S} X e^{-i t L_S} dt` by quadrature.
/// Converges to [`spectral_average`] at rate `1/(T * min gap)`.
pub fn time_average(x: &SuperOperator, spectrum: &BohrSpectrum, t_avg: f64) -> Result<SuperOperator> {
    if !(t_avg > 0.0) {
        return Err(Error::Invalid(format!("averaging time must be positive, got {t_avg}")));
    }
    let on_full = if x.op_dim() == spectrum.d_s {
        false
    } else if x.op_dim() == spectrum.d_s * spectrum.d_r {
        true
    } else {
        return Err(Error::Dim(format!(
            "operand acts on dimension {}, spectrum covers {} or {}",
            x.op_dim(),
            spectrum.d_s,
            spectrum.d_s * spectrum.d_r
        )));
    };
    let max_freq = spectrum
        .frequencies
        .iter()
        .fold(0.0f64, |m, f| m.max(f.abs()));
    let panel = if max_freq > 0.0 { 2.0 / max_freq } else { t_avg };
    let ir = DMatrix::<C64>::identity(spectrum.d_r, spectrum.d_r);
    let d_sq = x.op_dim() * x.op_dim();
    let mut acc = DMatrix::<C64>::zeros(d_sq, d_sq);
    for (t, wt) in quad::composite(DEFAULT_QUAD_ORDER, 0.0, t_avg, panel) {
        let mut u = system_phase(spectrum, t);
        if on_full {
            u = u.kronecker(&ir);
        }
        let fwd = conjugation_superop(&u);
        let bwd = conjugation_superop(&u.adjoint());
        acc += fwd.compose(x).compose(&bwd).mat() * cr(wt);
    }
    Ok(SuperOperator::wrap(x.op_dim(), acc * cr(1.0 / t_avg)))
}

/// Half-line transform `Gamma(w) = integral_0^inf phi(s) e^{i w s} ds`,
/// in closed form where the family has one.
pub fn one_sided_transform(phi: &CorrelationFunction, omega: f64) -> Result<C64> {
    match phi {
        CorrelationFunction::Exponential(e) => Ok(e.one_sided(omega)),
        CorrelationFunction::Finite(_) => Err(Error::Config(
            "a finite-bath correlation function is quasi-periodic and has no closed-form \
             half-line transform; use the analytic family"
                .into(),
        )),
    }
}

/// `e^{-tau K}` for a spectrally averaged generator.  The raw generator
/// is refused: without averaging the exponential need not be completely
/// positive.
pub fn gkls_semigroup(gen: &DaviesGenerator, tau: f64) -> Result<SuperOperator> {
    if !gen.natural_averaged {
        return Err(Error::Invalid(
            "semigroup requires the spectrally averaged generator".into(),
        ));
    }
    if tau < 0.0 {
        return Err(Error::Invalid(format!("semigroup time must be >= 0, got {tau}")));
    }
    Ok(mat_exp_super(&gen.k_reduced, -tau))
}

/// Complete-positivity and trace diagnostics for a map on system states.
///
/// Returns the minimum eigenvalue of the Choi matrix
/// `sum_ij map(E_ij) (x) E_ij` and the largest trace defect
/// `|tr(map(E_ij)) - tr(E_ij)|` over the matrix-unit basis.
pub fn cptp_check(map: &SuperOperator) -> (f64, f64) {
    let d = map.op_dim();
    let mut choi = DMatrix::<C64>::zeros(d * d, d * d);
    let mut trace_residual = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let mut e = DMatrix::<C64>::zeros(d, d);
            e[(i, j)] = C64::ONE;
            let out = map.apply(&e);
            let target = if i == j { 1.0 } else { 0.0 };
            trace_residual = trace_residual.max((out.trace() - cr(target)).norm());
            choi += out.kronecker(&e);
        }
    }
    let herm = (choi.adjoint() + &choi) * cr(0.5);
    let eig = EigH::new(&herm);
    let min_eig = eig.vals.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    (min_eig, trace_residual)
}

/// Initial states for the convergence study: on a qubit the six
/// axis-aligned pure states plus the maximally mixed state; on larger
/// systems six seeded random pure states plus the maximally mixed state.
pub fn probe_states(d_s: usize, seed: u64) -> Vec<DMatrix<C64>> {
    use rand::{Rng, SeedableRng};
    let mut out: Vec<DMatrix<C64>> = Vec::with_capacity(7);
    if d_s == 2 {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let kets: [[C64; 2]; 6] = [
            [cr(1.0), cr(0.0)],
            [cr(0.0), cr(1.0)],
            [cr(h), cr(h)],
            [cr(h), cr(-h)],
            [cr(h), c(0.0, h)],
            [cr(h), c(0.0, -h)],
        ];
        for ket in kets {
            let mut rho = DMatrix::<C64>::zeros(2, 2);
            for i in 0..2 {
                for j in 0..2 {
                    rho[(i, j)] = ket[i] * ket[j].conj();
                }
            }
            out.push(rho);
        }
    } else {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..6 {
            let mut ket: Vec<C64> = (0..d_s)
                .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let norm = ket.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            for z in &mut ket {
                *z /= cr(norm);
            }
            let mut rho = DMatrix::<C64>::zeros(d_s, d_s);
            for i in 0..d_s {
                for j in 0..d_s {
                    rho[(i, j)] = ket[i] * ket[j].conj();
                }
            }
            out.push(rho);
        }
    }
    out.push(DMatrix::<C64>::identity(d_s, d_s) * cr(1.0 / d_s as f64));
    out
}

/// `(1/2) |a - b|_1`.
pub fn trace_distance(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    0.5 * trace_norm(&(a - b))
}

/// One point of the convergence study.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub lambda: f64,
    pub tau: f64,
    /// Largest trace distance over the probe set between the reduced
    /// rescaled dynamics and the limiting semigroup.
    pub error: f64,
    /// Set when `tau / lambda^2` leaves the pre-recurrence window, so
    /// the finite bath no longer imitates a mixing one at this point.
    pub flagged: bool,
}

/// Rows sorted by time, then by coupling descending, so each block reads
/// as one approach to the limit.
#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    pub fn any_flagged(&self) -> bool {
        self.rows.iter().any(|r| r.flagged)
    }
}

/// Compares the rescaled propagator against the limiting semigroup over
/// a coupling grid.  `window` is the model's pre-recurrence span in
/// unrescaled time; rows with `tau / lambda^2` beyond it are flagged.
pub fn vanhove_convergence(
    model: &SystemBathModel,
    pair: &ProjectionPair,
    gen: &DaviesGenerator,
    taus: &[f64],
    lambdas: &[f64],
    window: f64,
    seed: u64,
) -> Result<ConvergenceReport> {
    if taus.is_empty() || lambdas.is_empty() {
        return Err(Error::Invalid("time and coupling grids must be nonempty".into()));
    }
    if lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Invalid("couplings must be positive".into()));
    }
    if !(window > 0.0) {
        return Err(Error::Invalid(format!("window must be positive, got {window}")));
    }
    let mut taus = taus.to_vec();
    taus.sort_by(f64::total_cmp);
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(|a, b| f64::total_cmp(b, a));

    let probes = probe_states(model.d_s(), seed);
    let omega = model.omega_state();
    let d_s = model.d_s();
    let d_r = model.d_r();
    let points: Vec<(f64, f64)> = taus
        .iter()
        .flat_map(|&tau| lambdas.iter().map(move |&lam| (tau, lam)))
        .collect();
    let rows: Result<Vec<ConvergenceRow>> = points
        .par_iter()
        .map(|&(tau, lambda)| {
            let target = gkls_semigroup(gen, tau)?;
            let rescaled = model.with_lambda(lambda)?;
            let u = crate::dyson::u_lambda(&rescaled, pair, tau)?;
            let mut error = 0.0f64;
            for sigma in &probes {
                let rho0 = sigma.kronecker(&omega);
                let evolved = u.apply(&rho0);
                let reduced = crate::opcore::partial_trace_r(&evolved, d_s, d_r)?;
                error = error.max(trace_distance(&reduced, &target.apply(sigma)));
            }
            Ok(ConvergenceRow { lambda, tau, error, flagged: tau / (lambda * lambda) > window })
        })
        .collect();
    Ok(ConvergenceReport { rows: rows? })
}
