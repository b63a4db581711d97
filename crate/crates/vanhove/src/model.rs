//! System-bath models `H = H_S (x) 1 + 1 (x) H_R + lambda W (x) V` with a
//! rank-one invariant bath state, plus the derived spectral data the rest of
//! the crate consumes: Bohr decompositions, Heisenberg-picture factors, and
//! bath correlation functions.
//!
//! A model is only constructible through validation. The structural
//! requirements are: all four matrices Hermitian, the bath state normalized
//! and annihilated by `H_R` (so the free bath leaves it invariant), the
//! coupling centered (`<Omega|V|Omega> = 0`, which kills the first-order
//! kernel term), a positive coupling constant, and total dimension at most
//! 64 so superoperators stay materializable.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::opcore::{
    c, commutator_superop, cr, max_abs, EigH, Operator, SuperOperator, C64,
};
use crate::{Error, Result};

/// Residual threshold for the structural checks in [`validate`].
pub const VALIDATION_TOL: f64 = 1e-10;

/// Largest supported total dimension `d_S * d_R`.
pub const MAX_DIM: usize = 64;

/// Unvalidated model data, as parsed from a config file or assembled by a
/// preset.
#[derive(Clone, Debug)]
pub struct RawModel {
    pub h_s: DMatrix<C64>,
    pub h_r: DMatrix<C64>,
    pub w: DMatrix<C64>,
    pub v: DMatrix<C64>,
    pub omega_r: DVector<C64>,
    pub lambda: f64,
}

#[derive(Clone, Debug)]
pub struct ValidationCheck {
    pub name: &'static str,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("{}: residual {:.3e} exceeds {:.1e}", c.name, c.residual, c.tol))
            .collect()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<20} residual {:>12.4e}  tol {:>8.1e}  {}",
                c.name,
                c.residual,
                c.tol,
                if c.pass { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn herm_residual(m: &DMatrix<C64>) -> f64 {
    max_abs(&(m - m.adjoint())) / max_abs(m).max(1.0)
}

/// Structural checks on raw model data; every check is reported with its
/// residual whether it passes or not.
pub fn validate(raw: &RawModel) -> ValidationReport {
    let mut checks = Vec::new();
    let mut push = |name, residual: f64, tol: f64| {
        checks.push(ValidationCheck { name, residual, tol, pass: residual <= tol });
    };

    push("h_s_hermitian", herm_residual(&raw.h_s), VALIDATION_TOL);
    push("h_r_hermitian", herm_residual(&raw.h_r), VALIDATION_TOL);
    push("w_hermitian", herm_residual(&raw.w), VALIDATION_TOL);
    push("v_hermitian", herm_residual(&raw.v), VALIDATION_TOL);

    let d_s = raw.h_s.nrows();
    let d_r = raw.h_r.nrows();
    let square =
        raw.h_s.ncols() == d_s && raw.h_r.ncols() == d_r && raw.w.nrows() == d_s
            && raw.w.ncols() == d_s && raw.v.nrows() == d_r && raw.v.ncols() == d_r
            && raw.omega_r.len() == d_r;
    push("shapes_consistent", if square { 0.0 } else { 1.0 }, 0.5);
    push("dimension_cap", (d_s * d_r) as f64, MAX_DIM as f64);

    if square {
        push("omega_normalized", (raw.omega_r.norm() - 1.0).abs(), VALIDATION_TOL);
        push("bath_ground_state", (&raw.h_r * &raw.omega_r).norm(), VALIDATION_TOL);
        // <Omega|V|Omega> = 0 removes the first-order memory term.
        let centered = raw.omega_r.dotc(&(&raw.v * &raw.omega_r)).norm();
        push("coupling_centered", centered, VALIDATION_TOL);
    }

    let lambda_ok = raw.lambda.is_finite() && raw.lambda > 0.0;
    push("lambda_positive", if lambda_ok { 0.0 } else { 1.0 }, 0.5);

    ValidationReport { checks }
}

/// A validated system-bath model with cached eigendecompositions of `H_S`
/// and `H_R`.
#[derive(Clone, Debug)]
pub struct SystemBathModel {
    h_s: DMatrix<C64>,
    h_r: DMatrix<C64>,
    w: DMatrix<C64>,
    v: DMatrix<C64>,
    omega_r: DVector<C64>,
    lambda: f64,
    eig_s: EigH,
    eig_r: EigH,
}

impl SystemBathModel {
    pub fn from_raw(raw: RawModel) -> Result<Self> {
        let report = validate(&raw);
        if !report.pass() {
            return Err(Error::Validation(report.failures()));
        }
        let eig_s = EigH::new(&raw.h_s);
        let eig_r = EigH::new(&raw.h_r);
        Ok(SystemBathModel {
            h_s: raw.h_s,
            h_r: raw.h_r,
            w: raw.w,
            v: raw.v,
            omega_r: raw.omega_r,
            lambda: raw.lambda,
            eig_s,
            eig_r,
        })
    }

    pub fn d_s(&self) -> usize {
        self.h_s.nrows()
    }

    pub fn d_r(&self) -> usize {
        self.h_r.nrows()
    }

    /// Total dimension `d_S * d_R`.
    pub fn dim(&self) -> usize {
        self.d_s() * self.d_r()
    }

    pub fn h_s(&self) -> &DMatrix<C64> {
        &self.h_s
    }

    pub fn h_r(&self) -> &DMatrix<C64> {
        &self.h_r
    }

    pub fn w(&self) -> &DMatrix<C64> {
        &self.w
    }

    pub fn v(&self) -> &DMatrix<C64> {
        &self.v
    }

    pub fn omega_r(&self) -> &DVector<C64> {
        &self.omega_r
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Same model at a different coupling constant.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Invalid(format!("lambda must be positive, got {lambda}")));
        }
        let mut m = self.clone();
        m.lambda = lambda;
        Ok(m)
    }

    /// The bath state `|Omega><Omega|`.
    pub fn omega_state(&self) -> DMatrix<C64> {
        let d = self.d_r();
        let mut out = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                out[(i, j)] = self.omega_r[i] * self.omega_r[j].conj();
            }
        }
        out
    }

    /// `H_S (x) 1 + 1 (x) H_R`.
    pub fn h0(&self) -> DMatrix<C64> {
        let is = DMatrix::identity(self.d_s(), self.d_s());
        let ir = DMatrix::identity(self.d_r(), self.d_r());
        self.h_s.kronecker(&ir) + is.kronecker(&self.h_r)
    }

    /// `W (x) V`.
    pub fn coupling(&self) -> DMatrix<C64> {
        self.w.kronecker(&self.v)
    }

    /// Full Hamiltonian at the model's coupling constant.
    pub fn h_total(&self) -> DMatrix<C64> {
        self.h0() + self.coupling().map(|z| z * cr(self.lambda))
    }

    /// Spectral norm of `W`, the factor entering the kernel norm bound.
    pub fn w_norm(&self) -> f64 {
        self.w.singular_values().max()
    }

    pub(crate) fn eig_s(&self) -> &EigH {
        &self.eig_s
    }

    pub(crate) fn eig_r(&self) -> &EigH {
        &self.eig_r
    }
}

/// Interaction-picture system factor `W(t) = e^{i t H_S} W e^{-i t H_S}`.
pub fn heisenberg_w(model: &SystemBathModel, t: f64) -> DMatrix<C64> {
    let u = model.eig_s.evolution(-t);
    &u * &model.w * u.adjoint()
}

/// Interaction-picture bath factor `V(t) = e^{i t H_R} V e^{-i t H_R}`.
pub fn heisenberg_v(model: &SystemBathModel, t: f64) -> DMatrix<C64> {
    let u = model.eig_r.evolution(-t);
    &u * &model.v * u.adjoint()
}

/// Interaction-picture coupling `W(t) (x) V(t)` on the full space.
pub fn coupling_at(model: &SystemBathModel, t: f64) -> DMatrix<C64> {
    heisenberg_w(model, t).kronecker(&heisenberg_v(model, t))
}

/// Commutator superoperators of the free and interaction parts.
#[derive(Clone, Debug)]
pub struct LiouvillianParts {
    /// `rho -> [H_0, rho]`.
    pub l0: SuperOperator,
    /// `rho -> [W (x) V, rho]` (coupling constant not included).
    pub l_sr: SuperOperator,
    /// `l0 + lambda * l_sr`.
    pub l_total: SuperOperator,
}

pub fn liouvillian_parts(model: &SystemBathModel) -> LiouvillianParts {
    let l0 = commutator_superop(&model.h0());
    let l_sr = commutator_superop(&model.coupling());
    let l_total = l0.add(&l_sr.scale(cr(model.lambda())));
    LiouvillianParts { l0, l_sr, l_total }
}

/// Interaction-picture commutator superoperator
/// `rho -> [W(s) (x) V(s), rho]`.
pub fn l_sr_at(model: &SystemBathModel, s: f64) -> SuperOperator {
    commutator_superop(&coupling_at(model, s))
}

/// Spectral data of `H_S`: distinct energies, their projectors, the distinct
/// transition frequencies, and the frequency-eigenprojections of the free
/// system Liouvillian, both on the system space and lifted to the full
/// space.
#[derive(Clone, Debug)]
pub struct BohrSpectrum {
    pub d_s: usize,
    pub d_r: usize,
    /// Distinct eigenvalues of `H_S`, ascending.
    pub energies: Vec<f64>,
    /// Spectral projector of `H_S` per entry of `energies`.
    pub projectors: Vec<DMatrix<C64>>,
    /// Distinct transition frequencies `e_j - e_k`, ascending; always
    /// contains 0 and is symmetric under negation.
    pub frequencies: Vec<f64>,
    reduced: Vec<SuperOperator>,
    full: Vec<SuperOperator>,
}

impl BohrSpectrum {
    /// Frequency projections acting on system operators (`d_S`).
    pub fn reduced_projectors(&self) -> &[SuperOperator] {
        &self.reduced
    }

    /// Frequency projections acting on full-space operators, sandwiching
    /// with `P_j (x) 1`.
    pub fn full_projectors(&self) -> &[SuperOperator] {
        &self.full
    }

    /// Smallest spacing between distinct transition frequencies. This sets
    /// the slowest oscillation a time average has to suppress.
    pub fn min_frequency_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for w in self.frequencies.windows(2) {
            gap = gap.min(w[1] - w[0]);
        }
        gap
    }
}

/// Groups sorted values into clusters no wider than `tol`; returns one
/// representative (the cluster mean) plus the member indices per cluster.
fn cluster(values: &[f64], tol: f64) -> Vec<(f64, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out: Vec<(f64, Vec<usize>)> = Vec::new();
    for i in idx {
        match out.last_mut() {
            Some((rep, members))
                if (values[i] - values[*members.last().unwrap()]).abs() <= tol =>
            {
                members.push(i);
                let n = members.len() as f64;
                *rep += (values[i] - *rep) / n;
            }
            _ => out.push((values[i], vec![i])),
        }
    }
    out
}

/// Bohr decomposition of a Hermitian-flagged `h_s`, with full-space
/// projectors for a bath of dimension `d_r`.
///
/// Energies closer than `1e-9 * max|e|` are treated as degenerate, and the
/// same resolution deduplicates the transition frequencies.
pub fn bohr_decomposition(h_s: &Operator, d_r: usize) -> Result<BohrSpectrum> {
    if !h_s.is_hermitian() {
        return Err(Error::Invalid("bohr_decomposition needs a Hermitian-flagged h_s".into()));
    }
    if d_r == 0 {
        return Err(Error::Dim("bath dimension must be at least 1".into()));
    }
    let d_s = h_s.dim();
    let eig = EigH::new(h_s.mat());
    let scale = eig.vals.iter().fold(0.0f64, |m, e| m.max(e.abs())).max(1.0);
    let tol = 1e-9 * scale;

    let vals: Vec<f64> = eig.vals.iter().copied().collect();
    let groups = cluster(&vals, tol);
    let mut energies = Vec::with_capacity(groups.len());
    let mut projectors = Vec::with_capacity(groups.len());
    for (rep, members) in &groups {
        energies.push(*rep);
        let mut p = DMatrix::zeros(d_s, d_s);
        for &k in members {
            let col = eig.vecs.column(k);
            for i in 0..d_s {
                for j in 0..d_s {
                    p[(i, j)] += col[i] * col[j].conj();
                }
            }
        }
        projectors.push(p);
    }

    // All transition frequencies, clustered at the same resolution.
    let mut pairs = Vec::new();
    let mut diffs = Vec::new();
    for (j, ej) in energies.iter().enumerate() {
        for (k, ek) in energies.iter().enumerate() {
            pairs.push((j, k));
            diffs.push(ej - ek);
        }
    }
    let freq_groups = cluster(&diffs, tol);

    let ir = DMatrix::<C64>::identity(d_r, d_r);
    let mut frequencies = Vec::with_capacity(freq_groups.len());
    let mut reduced = Vec::with_capacity(freq_groups.len());
    let mut full = Vec::with_capacity(freq_groups.len());
    for (rep, members) in &freq_groups {
        frequencies.push(*rep);
        let mut red = DMatrix::zeros(d_s * d_s, d_s * d_s);
        let mut ful = DMatrix::zeros(d_s * d_s * d_r * d_r, d_s * d_s * d_r * d_r);
        for &m in members {
            let (j, k) = pairs[m];
            // vec(P_j sigma P_k) = (P_k^T (x) P_j) vec(sigma).
            red += projectors[k].transpose().kronecker(&projectors[j]);
            let pj = projectors[j].kronecker(&ir);
            let pk = projectors[k].kronecker(&ir);
            ful += pk.transpose().kronecker(&pj);
        }
        reduced.push(SuperOperator::wrap(d_s, red));
        full.push(SuperOperator::wrap(d_s * d_r, ful));
    }

    Ok(BohrSpectrum { d_s, d_r, energies, projectors, frequencies, reduced, full })
}

/// Bath two-point function data. The finite variant is exact for the model
/// it came from but quasi-periodic, so it has no integrable envelope; the
/// exponential variant is the analytic family with closed-form integrals.
#[derive(Clone, Debug)]
pub enum CorrelationFunction {
    Finite(FiniteCorrelation),
    Exponential(ExponentialPhi),
}

/// `phi(t) = sum_k w_k e^{-i e_k t}` from the spectral weights of `V|Omega>`
/// in the `H_R` eigenbasis.
#[derive(Clone, Debug)]
pub struct FiniteCorrelation {
    pub energies: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `phi(t) = gamma e^{-|t|/tau_c} e^{-i nu t}`.
#[derive(Clone, Debug)]
pub struct ExponentialPhi {
    pub gamma: f64,
    pub tau_c: f64,
    pub nu: f64,
}

impl ExponentialPhi {
    /// `integral |phi| = 2 gamma tau_c`.
    pub fn l1(&self) -> f64 {
        2.0 * self.gamma * self.tau_c
    }

    /// Half-line transform `Gamma(omega) = integral_0^inf phi(s) e^{i omega s} ds
    /// = gamma / (1/tau_c + i(nu - omega))`, closed form.
    pub fn one_sided(&self, omega: f64) -> C64 {
        cr(self.gamma) / c(1.0 / self.tau_c, self.nu - omega)
    }
}

impl CorrelationFunction {
    pub fn finite_from_model(model: &SystemBathModel) -> Self {
        let v_omega = model.v() * model.omega_r();
        let eig = model.eig_r();
        let d = eig.vals.len();
        let mut energies = Vec::with_capacity(d);
        let mut weights = Vec::with_capacity(d);
        for k in 0..d {
            let amp = eig.vecs.column(k).dotc(&v_omega);
            energies.push(eig.vals[k]);
            weights.push(amp.norm_sqr());
        }
        CorrelationFunction::Finite(FiniteCorrelation { energies, weights })
    }

    pub fn phi(&self, t: f64) -> C64 {
        match self {
            CorrelationFunction::Finite(f) => {
                let mut acc = C64::ZERO;
                for (e, w) in f.energies.iter().zip(&f.weights) {
                    acc += cr(*w) * C64::from_polar(1.0, -e * t);
                }
                acc
            }
            CorrelationFunction::Exponential(e) => {
                cr(e.gamma * (-t.abs() / e.tau_c).exp()) * C64::from_polar(1.0, -e.nu * t)
            }
        }
    }

    /// `integral_R |phi|` where it exists in closed form.
    pub fn l1_norm(&self) -> Option<f64> {
        match self {
            CorrelationFunction::Finite(_) => None,
            CorrelationFunction::Exponential(e) => Some(e.l1()),
        }
    }
}

/// `|tr(A(t) B omega) - tr(A omega) tr(B omega)|` over a time grid.
///
/// For a mixing bath this tends to zero; a finite bath only approximates
/// that inside its pre-recurrence window, which is what the probe is for.
pub fn mixing_probe(
    model: &SystemBathModel,
    a: &DMatrix<C64>,
    b: &DMatrix<C64>,
    t_grid: &[f64],
) -> Vec<(f64, f64)> {
    let omega = model.omega_state();
    let mean_a = (a * &omega).trace();
    let mean_b = (b * &omega).trace();
    t_grid
        .iter()
        .map(|&t| {
            let u = model.eig_r().evolution(-t);
            let a_t = &u * a * u.adjoint();
            let corr = (a_t * b * &omega).trace();
            (t, (corr - mean_a * mean_b).norm())
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PresetKind {
    /// `[W, H_S] = 0`: coherences decay, populations frozen; the one case
    /// with a closed-form check on the averaged generator.
    Dephasing,
    /// Qubit with an off-diagonal coupling to a six-level bath whose levels
    /// are spread off resonance.
    StarBath,
    /// Bath coupling odd under a unitary fixing the bath state, which makes
    /// every odd-order kernel term vanish.
    Parity,
    /// Seeded random draw, post-processed to satisfy the structural
    /// requirements exactly.
    Random,
}

impl PresetKind {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "dephasing" => Ok(PresetKind::Dephasing),
            "star-bath" => Ok(PresetKind::StarBath),
            "parity" => Ok(PresetKind::Parity),
            "random" => Ok(PresetKind::Random),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected dephasing, star-bath, parity, random)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PresetKind::Dephasing => "dephasing",
            PresetKind::StarBath => "star-bath",
            PresetKind::Parity => "parity",
            PresetKind::Random => "random",
        }
    }

    pub const ALL: [PresetKind; 4] =
        [PresetKind::Dephasing, PresetKind::StarBath, PresetKind::Parity, PresetKind::Random];
}

/// A model plus the companion data the verification commands need: an
/// analytic correlation function for generator-level checks, a clustering
/// certificate for the term bounds, and the time windows inside which the
/// finite bath imitates a mixing one.
#[derive(Clone, Debug)]
pub struct PresetBundle {
    pub kind: PresetKind,
    pub model: SystemBathModel,
    pub analytic_phi: ExponentialPhi,
    pub clustering: crate::bounds::ClusteringData,
    /// Largest time up to which the finite bath's correlations stay clear of
    /// revivals (documented per preset, checked by `mixing_probe`).
    pub recurrence_window: f64,
    /// Integration cutoff for the window-limited finite-bath generator.
    pub davies_cutoff: f64,
}

fn diag(entries: &[f64]) -> DMatrix<C64> {
    DMatrix::from_diagonal(&DVector::from_iterator(entries.len(), entries.iter().map(|&x| cr(x))))
}

fn basis_vec(d: usize, k: usize) -> DVector<C64> {
    let mut v = DVector::zeros(d);
    v[k] = C64::ONE;
    v
}

/// Star coupling on the bath: level 0 to each excited level `k` with
/// strength `g[k-1]`, Hermitian, no diagonal part.
fn star_coupling(g: &[f64]) -> DMatrix<C64> {
    let d = g.len() + 1;
    let mut v = DMatrix::zeros(d, d);
    for (k, &gk) in g.iter().enumerate() {
        v[(0, k + 1)] = cr(gk);
        v[(k + 1, 0)] = cr(gk);
    }
    v
}

/// Builds one of the named models. `seed` only matters for
/// [`PresetKind::Random`]; the other three are fully deterministic.
pub fn preset(kind: PresetKind, seed: u64) -> PresetBundle {
    use crate::bounds::ClusteringData;
    let sx = DMatrix::from_row_slice(2, 2, &[C64::ZERO, C64::ONE, C64::ONE, C64::ZERO]);
    let sz = diag(&[1.0, -1.0]);
    let raw = match kind {
        PresetKind::Dephasing => RawModel {
            h_s: diag(&[0.0, 1.0]),
            h_r: diag(&[0.0, 1.3, 2.1, 3.4]),
            w: sz,
            // Star couplings plus terms inside the excited sector, so odd
            // bath correlators do not vanish and the order-one kernel term
            // is exercised.
            v: {
                let mut v = star_coupling(&[0.6, 0.45, 0.35]);
                v[(1, 1)] = cr(0.4);
                v[(1, 2)] = cr(0.3);
                v[(2, 1)] = cr(0.3);
                v
            },
            omega_r: basis_vec(4, 0),
            lambda: 0.5,
        },
        PresetKind::StarBath => RawModel {
            h_s: diag(&[0.0, 1.0]),
            // Levels spread well off the system transition frequencies
            // {0, +-1}, so second-order rates stay small and the reduced
            // motion inside the window is dominated by the averaged
            // generator.
            h_r: diag(&[0.0, 2.2, 2.9, 3.7, 4.6, 5.8]),
            w: sx,
            v: star_coupling(&[0.30, 0.34, 0.28, 0.26, 0.22]),
            omega_r: basis_vec(6, 0),
            lambda: 0.2,
        },
        PresetKind::Parity => RawModel {
            h_s: diag(&[0.0, 1.0]),
            h_r: diag(&[0.0, 1.9, 2.7, 3.6]),
            // Pure star coupling: diag(1, -1, -1, -1) fixes the bath state,
            // commutes with H_R, and flips V, so odd V-correlators vanish.
            w: sx,
            v: star_coupling(&[0.7, 0.5, 0.4]),
            omega_r: basis_vec(4, 0),
            lambda: 0.3,
        },
        PresetKind::Random => random_raw(seed),
    };
    let model = SystemBathModel::from_raw(raw).expect("preset models satisfy the validator");
    // The finite-bath generator has no integrable tail, so its cutoff is
    // the whole pre-recurrence window rather than a tail-bound choice.
    let (analytic_phi, clustering, recurrence_window, davies_cutoff) = match kind {
        PresetKind::Dephasing => (
            ExponentialPhi { gamma: 1.0, tau_c: 0.5, nu: 0.0 },
            ClusteringData { c: 0.25, f_amp: 1.25, f_rate: 0.4, epsilon: 0.5 },
            40.0,
            40.0,
        ),
        PresetKind::StarBath => (
            ExponentialPhi { gamma: 0.8, tau_c: 0.4, nu: 1.5 },
            ClusteringData { c: 1.3, f_amp: 0.8, f_rate: 0.8, epsilon: 0.5 },
            120.0,
            120.0,
        ),
        PresetKind::Parity => (
            ExponentialPhi { gamma: 0.6, tau_c: 0.7, nu: 0.0 },
            ClusteringData { c: 1.5, f_amp: 1.1, f_rate: 0.7, epsilon: 0.5 },
            40.0,
            40.0,
        ),
        PresetKind::Random => (
            ExponentialPhi { gamma: 0.5, tau_c: 0.6, nu: 0.3 },
            ClusteringData { c: 2.0, f_amp: 1.5, f_rate: 0.8, epsilon: 0.5 },
            30.0,
            30.0,
        ),
    };
    PresetBundle { kind, model, analytic_phi, clustering, recurrence_window, davies_cutoff }
}

/// Random qubit + four-level bath. The draw is Gaussian Hermitian; the bath
/// Hamiltonian is shifted so its lowest eigenvalue is exactly zero and the
/// bath state is rotated onto that eigenvector, then the coupling is
/// centered by subtracting its bath-state expectation.
fn random_raw(seed: u64) -> RawModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut herm = |d: usize| -> DMatrix<C64> {
        let g = DMatrix::from_fn(d, d, |_, _| {
            c(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        (&g + g.adjoint()).map(|z| z * cr(0.5))
    };
    let h_s = herm(2);
    let w = herm(2);
    let h_r_drawn = herm(4);
    let mut v = herm(4);

    let eig = EigH::new(&h_r_drawn);
    // The eigensolver promises no eigenvalue ordering; scan for the
    // ground state.
    let mut k0 = 0;
    for k in 1..eig.vals.len() {
        if eig.vals[k] < eig.vals[k0] {
            k0 = k;
        }
    }
    let shift = eig.vals[k0];
    let h_r = &h_r_drawn - DMatrix::<C64>::identity(4, 4).map(|z| z * cr(shift));
    let omega_r: DVector<C64> = eig.vecs.column(k0).into_owned();

    let expect = omega_r.dotc(&(&v * &omega_r));
    v -= DMatrix::<C64>::identity(4, 4).map(|z| z * expect);

    RawModel { h_s, h_r, w, v, omega_r, lambda: 0.3 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opcore::{self, vectorize};
    use approx::assert_abs_diff_eq;

    #[test]
    fn presets_validate() {
        for kind in PresetKind::ALL {
            let b = preset(kind, 0);
            let raw = RawModel {
                h_s: b.model.h_s().clone(),
                h_r: b.model.h_r().clone(),
                w: b.model.w().clone(),
                v: b.model.v().clone(),
                omega_r: b.model.omega_r().clone(),
                lambda: b.model.lambda(),
            };
            let rep = validate(&raw);
            assert!(rep.pass(), "{}: {:?}", kind.name(), rep.failures());
        }
    }

    #[test]
    fn random_preset_validates_across_seeds() {
        for seed in 0..20 {
            let b = preset(PresetKind::Random, seed);
            assert!(b.model.dim() == 8);
        }
    }

    #[test]
    fn random_preset_is_seed_deterministic() {
        let a = preset(PresetKind::Random, 7);
        let b = preset(PresetKind::Random, 7);
        assert_eq!(a.model.v(), b.model.v());
        let c = preset(PresetKind::Random, 8);
        assert!(max_abs(&(a.model.v() - c.model.v())) > 1e-3);
    }

    #[test]
    fn uncentered_coupling_is_reported() {
        let b = preset(PresetKind::Dephasing, 0);
        let mut v = b.model.v().clone();
        v[(0, 0)] = cr(0.02);
        let raw = RawModel {
            h_s: b.model.h_s().clone(),
            h_r: b.model.h_r().clone(),
            w: b.model.w().clone(),
            v,
            omega_r: b.model.omega_r().clone(),
            lambda: b.model.lambda(),
        };
        let rep = validate(&raw);
        assert!(!rep.pass());
        let check = rep.checks.iter().find(|c| c.name == "coupling_centered").unwrap();
        assert!(!check.pass);
        assert_abs_diff_eq!(check.residual, 0.02, epsilon = 1e-14);
    }

    #[test]
    fn liouvillian_total_matches_commutator_of_h_total() {
        let b = preset(PresetKind::StarBath, 0);
        let parts = liouvillian_parts(&b.model);
        let direct = commutator_superop(&b.model.h_total());
        assert!(max_abs(&parts.l_total.sub(&direct).mat().clone()) < 1e-12);
    }

    #[test]
    fn bohr_qubit_frequencies() {
        let h_s = Operator::hermitian(diag(&[0.0, 1.0])).unwrap();
        let spec = bohr_decomposition(&h_s, 4).unwrap();
        assert_eq!(spec.frequencies, vec![-1.0, 0.0, 1.0]);
        assert_abs_diff_eq!(spec.min_frequency_gap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bohr_projectors_resolve_identity_and_are_orthogonal() {
        let b = preset(PresetKind::Random, 3);
        let h_s = Operator::hermitian(b.model.h_s().clone()).unwrap();
        let spec = bohr_decomposition(&h_s, b.model.d_r()).unwrap();
        for projs in [spec.reduced_projectors(), spec.full_projectors()] {
            let d2 = projs[0].mat().nrows();
            let mut sum = DMatrix::zeros(d2, d2);
            for q in projs {
                sum += q.mat();
            }
            assert!(max_abs(&(sum - DMatrix::<C64>::identity(d2, d2))) < 1e-9);
            for (a, qa) in projs.iter().enumerate() {
                for (bi, qb) in projs.iter().enumerate() {
                    let prod = qa.compose(qb);
                    let expect =
                        if a == bi { qa.mat().clone() } else { DMatrix::zeros(d2, d2) };
                    assert!(max_abs(&(prod.mat() - expect)) < 1e-9);
                }
            }
        }
    }

    #[test]
    fn free_evolution_expands_over_bohr_phases() {
        // e^{-it L_S} X = sum_alpha e^{-it w_alpha} Q_alpha X on the system
        // space, checked at an incommensurate time.
        let b = preset(PresetKind::Dephasing, 0);
        let h_s = Operator::hermitian(b.model.h_s().clone()).unwrap();
        let spec = bohr_decomposition(&h_s, 1).unwrap();
        let t = 0.773;
        let u = b.model.eig_s().evolution(t);
        let x = DMatrix::from_row_slice(2, 2, &[cr(0.3), c(0.1, -0.4), c(0.2, 0.9), cr(-1.1)]);
        let direct = &u * &x * u.adjoint();
        let mut summed = DMatrix::zeros(2, 2);
        for (wa, q) in spec.frequencies.iter().zip(spec.reduced_projectors()) {
            summed += q.apply(&x).map(|z| z * C64::from_polar(1.0, -t * wa));
        }
        assert!(max_abs(&(direct - summed)) < 1e-12);
    }

    #[test]
    fn heisenberg_factors_reduce_to_static_at_zero() {
        let b = preset(PresetKind::StarBath, 0);
        assert!(max_abs(&(heisenberg_w(&b.model, 0.0) - b.model.w())) < 1e-13);
        assert!(max_abs(&(heisenberg_v(&b.model, 0.0) - b.model.v())) < 1e-13);
    }

    #[test]
    fn correlation_matches_direct_expectation() {
        let b = preset(PresetKind::Random, 11);
        let phi = CorrelationFunction::finite_from_model(&b.model);
        for &t in &[0.0, 0.4, 1.7, -2.3] {
            let vt = heisenberg_v(&b.model, t);
            let direct = (&vt * b.model.v() * b.model.omega_state()).trace();
            let viaspec = phi.phi(t);
            assert!((direct - viaspec).norm() < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn correlation_hermitian_symmetry() {
        let b = preset(PresetKind::StarBath, 0);
        let phi = CorrelationFunction::finite_from_model(&b.model);
        for &t in &[0.3, 1.1, 4.2] {
            let diff = (phi.phi(-t) - phi.phi(t).conj()).norm();
            assert!(diff < 1e-13);
        }
        assert!(phi.phi(0.0).im.abs() < 1e-13);
    }

    #[test]
    fn exponential_transform_matches_quadrature() {
        let e = ExponentialPhi { gamma: 0.8, tau_c: 0.4, nu: 1.5 };
        let phi = CorrelationFunction::Exponential(e.clone());
        for &omega in &[-2.0, 0.0, 0.7, 3.0] {
            let closed = e.one_sided(omega);
            let quad: C64 = crate::quad::composite(24, 0.0, 30.0, 0.5)
                .iter()
                .map(|&(s, wt)| phi.phi(s) * C64::from_polar(1.0, omega * s) * cr(wt))
                .sum();
            assert!((closed - quad).norm() < 1e-10, "omega = {omega}");
        }
    }

    #[test]
    fn parity_kills_odd_correlators() {
        let b = preset(PresetKind::Parity, 0);
        for &(z1, z2) in &[(0.3, 0.9), (1.4, 2.0), (0.0, 0.5)] {
            let v0 = b.model.v().clone();
            let v1 = heisenberg_v(&b.model, z1);
            let v2 = heisenberg_v(&b.model, z2);
            let tr = (&v2 * &v1 * &v0 * b.model.omega_state()).trace();
            assert!(tr.norm() < 1e-13);
        }
    }

    #[test]
    fn mixing_probe_zero_mean_coupling_gives_phi_magnitude() {
        let b = preset(PresetKind::StarBath, 0);
        let phi = CorrelationFunction::finite_from_model(&b.model);
        let rows =
            mixing_probe(&b.model, b.model.v(), b.model.v(), &[0.0, 1.0, 3.0]);
        for (t, r) in rows {
            assert_abs_diff_eq!(r, phi.phi(t).norm(), epsilon = 1e-12);
        }
    }

    #[test]
    fn with_lambda_rejects_nonpositive() {
        let b = preset(PresetKind::Dephasing, 0);
        assert!(b.model.with_lambda(0.0).is_err());
        assert!(b.model.with_lambda(-0.1).is_err());
        assert!(b.model.with_lambda(0.25).is_ok());
    }

    #[test]
    fn vectorize_convention_reaches_superoperators() {
        // The full-projector route and the reduced route agree on product
        // operators: tr_R((P_j (x) 1) (sigma (x) omega) (P_k (x) 1)) =
        // P_j sigma P_k.
        let b = preset(PresetKind::Dephasing, 0);
        let h_s = Operator::hermitian(b.model.h_s().clone()).unwrap();
        let spec = bohr_decomposition(&h_s, b.model.d_r()).unwrap();
        let sigma =
            DMatrix::from_row_slice(2, 2, &[cr(0.6), c(0.2, 0.1), c(0.2, -0.1), cr(0.4)]);
        let full_in = sigma.kronecker(&b.model.omega_state());
        for (qf, qr) in spec.full_projectors().iter().zip(spec.reduced_projectors()) {
            let lifted = qf.apply(&full_in);
            let red = opcore::partial_trace_r(&lifted, 2, 4).unwrap();
            let direct = qr.apply(&sigma);
            assert!(max_abs(&(red - direct)) < 1e-12);
        }
        // Column-stacked identity reused here so the convention cannot
        // silently drift: vec is column-major data order.
        let v = vectorize(&sigma);
        assert_eq!(v[1], sigma[(1, 0)]);
    }
}
