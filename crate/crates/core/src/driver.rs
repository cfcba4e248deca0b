//! Scenario orchestration: solve, linearize, build the pencil and the Krein matrix,
//! classify the spectrum, cross-check it against the direct oracle, sweep in `mu`
//! and write every artifact to disk.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Serialize;

use crate::config::{ScenarioConfig, Tolerances};
use crate::error::{KreinError, Result, StageExt};
use crate::grid::Grid;
use crate::krein::{
    complex_zero_search, phase_field, pole_clusters, residue, trace_krein_eigenvalues, ComplexZeroSearch, KreinMatrix,
    KreinTrace, KreinZero, PhaseField, Region, ResidueReport, ResidueVerdict, Signature, TracePole,
};
use crate::linearize::{
    assemble_linearization, d_matrix, direct_spectrum, kernel_basis, operator_indices, signature_of_eigenvalue, DMatrix,
    DirectSpectrum, KernelBasis, Linearization, OperatorIndices, OracleMethod,
};
use crate::pencil::{
    build_pencil, hamiltonian_krein_index, map_z, negative_subspace, pencil_index_expectation, pencil_summary,
    HamiltonianKreinIndex, PencilSummary,
};
use crate::stationary::{
    continue_branch, newton_solve, seed_dipole, seed_gauss_hermite, seed_vortex, Branch, BranchPoint, StateLabel,
    StationaryState,
};

/// Relative distance below which Krein zeros on different traces are one eigenvalue.
const ZERO_CLUSTER_TOL: f64 = 1e-6;
/// `|Re lambda|` below which a direct eigenvalue counts as purely imaginary.
const IMAGINARY_TOL: f64 = 1e-7;
/// Largest residue contour half-width, relative to `max(1, |z_p|)`.
const RESIDUE_MAX_HALF_WIDTH: f64 = 1e-2;

// ---------------------------------------------------------------------------
// states

/// Weakly nonlinear amplitude of the `k`-th Gauss-Hermite mode at `mu`:
/// `mu - mu_k = a^2 int h^4 / int h^2` with `mu_k` the linear eigenvalue.
pub fn linear_limit_amplitude(k: usize, mu: f64, omega: f64, grid: &Grid) -> Result<f64> {
    let mu_k = omega * (k as f64 + 0.5 * grid.dim() as f64);
    if !(mu > mu_k) {
        return Err(KreinError::InvalidArgument(format!(
            "mu = {mu} lies below the linear limit {mu_k} of mode {k}; no nonlinear branch to seed"
        )));
    }
    let h = seed_gauss_hermite(k, 1.0, omega, grid)?.re();
    let h2: f64 = h.iter().map(|v| v * v).sum();
    let h4: f64 = h.iter().map(|v| v.powi(4)).sum();
    Ok(((mu - mu_k) * h2 / h4).sqrt())
}

/// Imprint the configured seed at `seed.mu` (or the first target) and converge it.
pub fn initial_state(cfg: &ScenarioConfig) -> Result<StationaryState> {
    let grid = cfg.grid()?;
    let mu = cfg.seed.mu.unwrap_or(cfg.mu_values()[0]);
    let omega = cfg.omega;
    let label = cfg.label();
    let field = match label {
        StateLabel::Ground | StateLabel::DarkSoliton(_) => {
            let k = match label {
                StateLabel::DarkSoliton(k) => k,
                _ => 0,
            };
            let amp = match cfg.seed.amplitude {
                Some(a) => a,
                None => linear_limit_amplitude(k, mu, omega, &grid)?,
            };
            seed_gauss_hermite(k, amp, omega, &grid)?
        }
        StateLabel::Vortex => seed_vortex(1, mu, omega, &grid)?,
        StateLabel::VortexDipole => {
            let sep = cfg.seed.separation.unwrap_or(2.0 / omega.sqrt());
            seed_dipole(sep, mu, omega, &grid)?
        }
        StateLabel::Unlabeled => return Err(KreinError::Config("cannot seed an unlabeled state".into())),
    };
    let state = newton_solve(&field, mu, omega, label, cfg.tolerances.newton_options())?;
    if !state.holds_structure() {
        return Err(KreinError::Unresolved(format!("seed at mu = {mu} converged to a state that is not a {label}")));
    }
    Ok(state)
}

/// Outcome of continuing a branch through the configured targets.
#[derive(Debug, Clone)]
pub struct BranchRun {
    pub branch: Branch,
    /// `(last_mu, reason)` when continuation stopped before the final target.
    pub termination: Option<(f64, String)>,
}

/// Seed and continue through `cfg.mu_values()`, keeping every state reached.
pub fn solve_branch(cfg: &ScenarioConfig) -> Result<BranchRun> {
    let seed = initial_state(cfg).stage("seed")?;
    let mut branch = Branch {
        label: seed.label,
        omega: seed.omega,
        d_mu: cfg.d_mu_max(),
        seed: format!("{} at mu={}", seed.label, seed.mu),
        points: Vec::new(),
    };
    let mut current = seed;
    for mu in cfg.mu_values() {
        if (mu - current.mu).abs() <= 1e-14 {
            branch.points.push(BranchPoint {
                mu,
                power: current.power(),
                state: current.clone(),
            });
            continue;
        }
        match continue_branch(&current, &[mu], cfg.d_mu_max(), cfg.tolerances.newton_options()) {
            Ok(b) => {
                let p = b.points.into_iter().next().expect("one target");
                current = p.state.clone();
                branch.points.push(p);
            }
            Err(KreinError::BranchTermination { last_mu, reason }) => {
                log::warn!("branch {} terminated after mu = {last_mu}: {reason}", branch.label);
                return Ok(BranchRun {
                    branch,
                    termination: Some((last_mu, reason)),
                });
            }
            Err(e) => return Err(e.at("continuation")),
        }
    }
    Ok(BranchRun { branch, termination: None })
}

// ---------------------------------------------------------------------------
// analysis of one state

/// Everything computed from one stationary state up to the Krein matrix.
pub struct Analysis {
    pub state: StationaryState,
    pub lin: Linearization,
    pub kernels: KernelBasis,
    pub d: DMatrix,
    pub indices: OperatorIndices,
    pub index: HamiltonianKreinIndex,
    pub pencil: PencilSummary,
    pub krein: KreinMatrix,
}

pub fn prepare(state: StationaryState, tol: &Tolerances) -> Result<Analysis> {
    let lin = assemble_linearization(&state).stage("linearize")?;
    let (lin, kernels) = kernel_basis(&lin, tol.zero_tol).stage("kernel")?;
    let d = d_matrix(&lin, &kernels).stage("d-matrix")?;
    let indices = operator_indices(&lin, tol.zero_tol).stage("indices")?;
    let index = hamiltonian_krein_index(&indices, &d).stage("indices")?;
    let (krein, pencil) = {
        let pencil = build_pencil(&lin, &kernels, tol.zero_tol).stage("pencil")?;
        let neg = negative_subspace(&pencil);
        let summary = pencil_summary(&pencil, &neg, &index);
        (KreinMatrix::new(&pencil, &neg).stage("krein")?, summary)
    };
    Ok(Analysis {
        state,
        lin,
        kernels,
        d,
        indices,
        index,
        pencil,
        krein,
    })
}

impl Analysis {
    /// Left end of every scan: the certified bound with a small margin.
    pub fn z_min(&self, z_max: f64) -> Result<f64> {
        let lb = self.krein.real_lower_bound()?;
        Ok(lb - 0.01 * (z_max - lb).abs().max(1e-3))
    }

    pub fn complex_region(&self, z_min: f64, z_max: f64) -> Region {
        Region {
            re: (z_min, z_max),
            im: (1e-7, 1.01 * self.krein.imag_bound().max(1e-6)),
        }
    }

    /// Residue report for every pole cluster in `(lo, hi)`.
    pub fn residues(&self, lo: f64, hi: f64, tol: &Tolerances) -> Result<Vec<PoleResidue>> {
        pole_clusters(&self.krein, lo, hi, 1e-8)
            .into_iter()
            .map(|c| {
                let cap = RESIDUE_MAX_HALF_WIDTH * c.z.abs().max(1.0);
                let report = residue(&self.krein, c.z, Some(cap), tol.residue_increment, tol.removable_tol)?;
                Ok(PoleResidue {
                    multiplicity: c.indices.len(),
                    report,
                })
            })
            .collect::<Result<_>>()
            .stage("residue")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PoleResidue {
    /// Number of coincident poles of `K` in the cluster.
    pub multiplicity: usize,
    #[serde(flatten)]
    pub report: ResidueReport,
}

// ---------------------------------------------------------------------------
// classification

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigenSource {
    KreinZero,
    RemovablePole,
    Direct,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifiedEigenvalue {
    pub lambda: Complex64,
    pub z: Complex64,
    /// Algebraic multiplicity of `lambda` in the Hamiltonian problem.
    pub multiplicity: usize,
    pub source: EigenSource,
    pub signature: Signature,
    /// Mean slope of the Krein eigenvalues vanishing here.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub k_r: usize,
    pub k_c: usize,
    pub k_i_minus: usize,
}

impl Counts {
    pub fn weighted(&self) -> usize {
        self.k_r + 2 * self.k_c + 2 * self.k_i_minus
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ReportStatus {
    Passed,
    Flagged,
    Failed,
}

/// What [`classify_spectrum`] derives from the Krein data alone.
#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    /// Counts of zeros of `K` in the `z` plane (with multiplicity).
    pub pencil_counts: Counts,
    /// Counts in the `lambda` plane.
    pub counts: Counts,
    /// `k_r + 2k_c + 2k_i^-` expected on the pencil side.
    pub expected: usize,
    pub identity_holds: bool,
    pub eigenvalues: Vec<ClassifiedEigenvalue>,
    pub status: ReportStatus,
    pub notes: Vec<String>,
}

impl Classification {
    /// `(k_c, k_i^-)` in the `lambda` plane, plus `k_r`.
    pub fn key(&self) -> (usize, usize, usize) {
        (self.counts.k_r, self.counts.k_c, self.counts.k_i_minus)
    }

    fn deficit(&self) -> bool {
        self.pencil_counts.weighted() < self.expected
    }
}

/// Group zeros with nearly equal `z` (zeros of different traces at a common point).
fn cluster_zeros(zeros: &[KreinZero]) -> Vec<Vec<&KreinZero>> {
    let mut sorted: Vec<&KreinZero> = zeros.iter().collect();
    sorted.sort_by(|a, b| a.z.total_cmp(&b.z));
    let mut out: Vec<Vec<&KreinZero>> = Vec::new();
    for z in sorted {
        match out.last_mut() {
            Some(c) if (z.z - c[c.len() - 1].z).abs() <= ZERO_CLUSTER_TOL * z.z.abs().max(1e-3) => c.push(z),
            _ => out.push(vec![z]),
        }
    }
    out
}

fn halve(count: usize, doubled: bool, what: &str, notes: &mut Vec<String>) -> usize {
    if !doubled {
        return count;
    }
    if count % 2 == 1 {
        notes.push(format!("odd {what} count {count} on the doubled pencil"));
    }
    count.div_ceil(2)
}

/// Counts, eigenvalue list and index identity from one pencil's Krein data.
///
/// Negative real zeros give `k_r`, zeros in the upper half plane `k_c` and zeros on
/// the positive axis with positive slope `k_i^-`; removable poles are positive-signature
/// imaginary eigenvalues. A violated identity marks the result FAILED.
pub fn classify_spectrum(
    trace: &KreinTrace,
    residues: &[PoleResidue],
    complex: &ComplexZeroSearch,
    index: &HamiltonianKreinIndex,
    doubled: bool,
) -> Classification {
    let mut notes = Vec::new();
    let mut eigenvalues = Vec::new();
    let mut z_counts = Counts::default();
    let mut l_counts = Counts::default();
    let mult = |n: usize| if doubled { n.div_ceil(2) } else { n };

    for k in &trace.zeros {
        match k.signature {
            Signature::NotApplicable => z_counts.k_r += 1,
            Signature::Negative => z_counts.k_i_minus += 1,
            _ => {}
        }
    }
    for cluster in cluster_zeros(&trace.zeros) {
        let n = cluster.len();
        let z = cluster.iter().map(|k| k.z).sum::<f64>() / n as f64;
        let slope = cluster.iter().map(|k| k.slope).sum::<f64>() / n as f64;
        let sig = cluster[0].signature;
        if cluster.iter().any(|k| k.signature != sig) {
            notes.push(format!("zeros at z = {z:.6e} disagree in slope sign"));
        }
        if sig == Signature::NearDegenerate {
            notes.push(format!("zero at z = {z:.6e} has near-zero slope {slope:.2e}"));
        }
        let zc = Complex64::new(z, 0.0);
        eigenvalues.push(ClassifiedEigenvalue {
            lambda: map_z(zc),
            z: zc,
            multiplicity: mult(n),
            source: EigenSource::KreinZero,
            signature: sig,
            slope: Some(slope),
        });
    }

    for p in residues.iter().filter(|p| p.report.verdict == ResidueVerdict::Removable) {
        let zc = Complex64::new(p.report.z_p, 0.0);
        if p.report.z_p <= 0.0 {
            notes.push(format!("removable pole at non-positive z = {:.6e}", p.report.z_p));
        }
        eigenvalues.push(ClassifiedEigenvalue {
            lambda: map_z(zc),
            z: zc,
            multiplicity: mult(p.multiplicity),
            source: EigenSource::RemovablePole,
            signature: Signature::Positive,
            slope: None,
        });
    }

    for cz in &complex.zeros {
        z_counts.k_c += cz.multiplicity;
        eigenvalues.push(ClassifiedEigenvalue {
            lambda: map_z(cz.z),
            z: cz.z,
            multiplicity: mult(cz.multiplicity),
            source: EigenSource::KreinZero,
            signature: Signature::NotApplicable,
            slope: None,
        });
    }
    if !complex.unresolved.is_empty() {
        notes.push(format!("{} complex search cells unresolved", complex.unresolved.len()));
    }
    if complex.total_winding != complex.count() as i64 {
        notes.push(format!(
            "winding number {} differs from the {} located complex zeros",
            complex.total_winding,
            complex.count()
        ));
    }
    if !trace.undetected_poles.is_empty() {
        notes.push(format!("genuine poles not resolved by the trace: {:?}", trace.undetected_poles));
    }

    l_counts.k_r = halve(z_counts.k_r, doubled, "real-zero", &mut notes);
    l_counts.k_c = halve(z_counts.k_c, doubled, "complex-zero", &mut notes);
    l_counts.k_i_minus = halve(z_counts.k_i_minus, doubled, "negative-signature zero", &mut notes);

    let expected = pencil_index_expectation(index.k_ham, doubled);
    let identity_holds = z_counts.weighted() == expected;
    if !identity_holds {
        notes.push(format!(
            "index identity violated: k_r + 2k_c + 2k_i^- = {} on the pencil, expected {expected}",
            z_counts.weighted()
        ));
    }
    eigenvalues.sort_by(|a, b| a.z.re.total_cmp(&b.z.re).then(a.z.im.total_cmp(&b.z.im)));
    let status = if !identity_holds {
        ReportStatus::Failed
    } else if !trace.undetected_poles.is_empty() || !complex.unresolved.is_empty() {
        ReportStatus::Flagged
    } else {
        ReportStatus::Passed
    };
    Classification {
        pencil_counts: z_counts,
        counts: l_counts,
        expected,
        identity_holds,
        eigenvalues,
        status,
        notes,
    }
}

// ---------------------------------------------------------------------------
// direct cross-check

#[derive(Debug, Clone, Serialize)]
pub struct OracleMatch {
    pub lambda_krein: Complex64,
    pub lambda_direct: Complex64,
    pub deviation: f64,
    pub krein_signature: Signature,
    /// Dimension of the direct eigenspace and its negative count under `L`.
    pub eigenspace_dim: usize,
    pub direct_negative: usize,
    pub signature_agrees: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleCheck {
    pub method: OracleMethod,
    pub eigenvalues_computed: usize,
    pub quartet_defect: f64,
    pub matches: Vec<OracleMatch>,
    pub max_deviation: f64,
    pub unmatched: Vec<Complex64>,
    /// `(agreeing, compared)` signature checks.
    pub signature_agreement: (usize, usize),
    /// Direct eigenvalues in the window that the Krein data did not produce.
    pub direct_only: Vec<ClassifiedEigenvalue>,
    pub flagged: bool,
}

/// Direct spectrum covering `|lambda| <= radius`, grown from `k0` eigenvalues.
pub fn direct_covering(lin: &Linearization, radius: f64, k0: usize) -> Result<DirectSpectrum> {
    let dim = lin.dim();
    let mut k = k0.clamp(1, dim);
    loop {
        let ds = direct_spectrum(lin, k)?;
        let reach = ds.eigs.iter().map(|e| e.lambda.norm()).fold(0.0, f64::max);
        if reach > radius || k == dim {
            return Ok(ds);
        }
        k = (2 * k).min(dim);
        log::debug!("direct oracle reaches |lambda| = {reach:.4} < {radius:.4}; asking for {k}");
    }
}

fn eigenspace_tol(lambda: Complex64) -> f64 {
    1e-6 * lambda.norm().max(1.0)
}

/// Mark every direct eigenvalue near `lambda`, `-lambda` or their conjugates.
fn mark_quartet(ds: &DirectSpectrum, lambda: Complex64, used: &mut [bool]) {
    let tol = eigenspace_tol(lambda);
    for (i, d) in ds.eigs.iter().enumerate() {
        let l = d.lambda;
        if [lambda, -lambda, lambda.conj(), -lambda.conj()].iter().any(|q| (l - q).norm() <= tol) {
            used[i] = true;
        }
    }
}

/// Match each Krein eigenvalue to the nearest direct eigenvalue of `JL` on the same
/// discretization and compare slope-rule signatures with the eigenspace restriction of `L`.
pub fn crosscheck_direct(
    classification: &Classification,
    lin: &Linearization,
    window: (f64, f64),
    tol: &Tolerances,
    k_eigs: usize,
) -> Result<OracleCheck> {
    let radius = classification
        .eigenvalues
        .iter()
        .map(|e| e.lambda.norm())
        .fold(window.1.abs().sqrt(), f64::max);
    let ds = direct_covering(lin, 1.05 * radius, k_eigs).stage("direct oracle")?;

    let mut matches = Vec::new();
    let mut unmatched = Vec::new();
    let mut agree = (0, 0);
    let mut used: Vec<bool> = vec![false; ds.eigs.len()];
    for e in &classification.eigenvalues {
        let Some((k, near)) = ds
            .eigs
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.lambda - e.lambda).norm().total_cmp(&(b.1.lambda - e.lambda).norm()))
        else {
            unmatched.push(e.lambda);
            continue;
        };
        let deviation = (near.lambda - e.lambda).norm();
        if deviation > tol.oracle_tol {
            unmatched.push(e.lambda);
        }
        let space = ds.eigenspace(near.lambda, eigenspace_tol(near.lambda));
        mark_quartet(&ds, near.lambda, &mut used);
        used[k] = true;
        let neg = signature_of_eigenvalue(lin, &space).stage("signature")?;
        let signature_agrees = match e.signature {
            Signature::Negative => Some(neg == space.len()),
            Signature::Positive => Some(neg == 0),
            _ => None,
        };
        if let Some(a) = signature_agrees {
            agree.1 += 1;
            agree.0 += usize::from(a);
        }
        matches.push(OracleMatch {
            lambda_krein: e.lambda,
            lambda_direct: near.lambda,
            deviation,
            krein_signature: e.signature,
            eigenspace_dim: space.len(),
            direct_negative: neg,
            signature_agrees,
        });
    }

    // direct eigenvalues in the window that Krein did not report
    let mut direct_only = Vec::new();
    for i in 0..ds.eigs.len() {
        let l = ds.eigs[i].lambda;
        let imaginary = l.re.abs() <= IMAGINARY_TOL;
        if used[i] || l.norm() <= tol.zero_tol || l.re < -IMAGINARY_TOL || (imaginary && l.im <= 0.0) {
            continue;
        }
        let z = -(l * l);
        if imaginary && (z.re < window.0 || z.re > window.1) {
            continue;
        }
        let space = ds.eigenspace(l, eigenspace_tol(l));
        let signature = if imaginary {
            let neg = signature_of_eigenvalue(lin, &space).stage("signature")?;
            if neg == 0 {
                Signature::Positive
            } else if neg == space.len() {
                Signature::Negative
            } else {
                Signature::NearDegenerate
            }
        } else {
            Signature::NotApplicable
        };
        mark_quartet(&ds, l, &mut used);
        direct_only.push(ClassifiedEigenvalue {
            lambda: l,
            z,
            multiplicity: space.len(),
            source: EigenSource::Direct,
            signature,
            slope: None,
        });
    }
    let max_deviation = matches.iter().map(|m| m.deviation).fold(0.0, f64::max);
    // an unstable direct eigenvalue missed by the Krein data is as serious as a mismatch
    let missed_unstable = direct_only.iter().any(|e| e.lambda.re > IMAGINARY_TOL || e.signature == Signature::Negative);
    let flagged = !unmatched.is_empty() || agree.0 != agree.1 || missed_unstable;
    Ok(OracleCheck {
        method: ds.method,
        eigenvalues_computed: ds.eigs.len(),
        quartet_defect: ds.quartet_defect,
        matches,
        max_deviation,
        unmatched,
        signature_agreement: agree,
        direct_only,
        flagged,
    })
}

// ---------------------------------------------------------------------------
// reports

#[derive(Debug, Clone, Serialize)]
pub struct StateSummary {
    pub label: StateLabel,
    pub mu: f64,
    pub omega: f64,
    pub power: f64,
    pub residual_norm: f64,
    pub grid_dim: usize,
    pub grid_n: usize,
    pub grid_dx: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub scenario: String,
    pub state: StateSummary,
    pub index: HamiltonianKreinIndex,
    pub indices: OperatorIndices,
    pub d_matrix: Vec<Vec<f64>>,
    pub pencil: PencilSummary,
    pub kernel_dims: (usize, usize),
    pub symmetry_corrections: Vec<(String, f64)>,
    /// `n(S)` agrees with the index prediction.
    pub negative_dim_ok: bool,
    pub window: (f64, f64),
    pub window_extensions: usize,
    pub imag_bound: f64,
    pub krein_backward_error: f64,
    #[serde(flatten)]
    pub classification: Classification,
    pub zeros: Vec<KreinZero>,
    pub poles: Vec<TracePole>,
    pub residues: Vec<PoleResidue>,
    pub complex: ComplexZeroSearch,
    pub oracle: Option<OracleCheck>,
}

impl SpectrumReport {
    pub fn status(&self) -> ReportStatus {
        self.classification.status
    }

    pub fn counts(&self) -> Counts {
        self.classification.counts
    }
}

/// Large intermediate results kept next to a report for the artifact writers.
pub struct ReportArtifacts {
    pub trace: KreinTrace,
    pub phase: Option<PhaseField>,
}

fn worst(a: ReportStatus, b: ReportStatus) -> ReportStatus {
    use ReportStatus::*;
    match (a, b) {
        (Failed, _) | (_, Failed) => Failed,
        (Flagged, _) | (_, Flagged) => Flagged,
        _ => Passed,
    }
}

/// Classify the spectrum of `analysis`, doubling the real window while the index
/// identity is short, then cross-check against the direct oracle if `oracle` is set.
pub fn analyze(cfg: &ScenarioConfig, analysis: &Analysis, oracle: bool) -> Result<(SpectrumReport, ReportArtifacts)> {
    let tol = &cfg.tolerances;
    let opts = tol.krein_options();
    let km = &analysis.krein;
    let doubled = km.doubled();
    let mut z_max = cfg.z_max();
    let mut extensions = 0;
    let (trace, residues, complex, mut classification, window) = loop {
        let z_min = analysis.z_min(z_max)?;
        let trace = trace_krein_eigenvalues(km, z_min, z_max, cfg.scan.samples, &opts).stage("trace")?;
        let residues = analysis.residues(z_min, z_max, tol)?;
        let region = analysis.complex_region(z_min, z_max);
        let complex = complex_zero_search(km, region, cfg.scan.complex_cells).stage("complex search")?;
        let c = classify_spectrum(&trace, &residues, &complex, &analysis.index, doubled);
        if c.deficit() && extensions < cfg.scan.max_extensions {
            log::info!(
                "index identity short ({} < {}) on [{z_min:.4}, {z_max:.4}]; doubling the window",
                c.pencil_counts.weighted(),
                c.expected
            );
            z_max *= 2.0;
            extensions += 1;
            continue;
        }
        break (trace, residues, complex, c, (z_min, z_max));
    };

    let negative_dim_ok = km.size() == analysis.index.expected_negative_dim();
    if !negative_dim_ok {
        classification.notes.push(format!(
            "n(S) = {} but the indices predict {}",
            km.size(),
            analysis.index.expected_negative_dim()
        ));
        classification.status = ReportStatus::Failed;
    }

    let oracle_check = if oracle {
        let check = crosscheck_direct(&classification, &analysis.lin, window, tol, cfg.oracle.k_eigs)?;
        if check.flagged {
            classification.notes.push(format!(
                "direct cross-check: {} unmatched, signatures {}/{}, {} direct-only",
                check.unmatched.len(),
                check.signature_agreement.0,
                check.signature_agreement.1,
                check.direct_only.len()
            ));
            classification.status = worst(classification.status, ReportStatus::Flagged);
        }
        Some(check)
    } else {
        None
    };

    let phase = match cfg.scan.phase_field {
        Some((nx, ny)) => Some(phase_field(km, analysis.complex_region(window.0, window.1), nx, ny).stage("phase field")?),
        None => None,
    };

    let st = &analysis.state;
    let grid = st.grid();
    let report = SpectrumReport {
        scenario: cfg.name.clone(),
        state: StateSummary {
            label: st.label,
            mu: st.mu,
            omega: st.omega,
            power: st.power(),
            residual_norm: st.residual_norm,
            grid_dim: grid.dim(),
            grid_n: grid.n(),
            grid_dx: grid.dx(),
        },
        index: analysis.index,
        indices: analysis.indices,
        d_matrix: analysis.d.d.clone(),
        pencil: analysis.pencil.clone(),
        kernel_dims: (analysis.kernels.plus.len(), analysis.kernels.minus.len()),
        symmetry_corrections: analysis.lin.corrections().iter().map(|c| (c.name.clone(), c.eps)).collect(),
        negative_dim_ok,
        window,
        window_extensions: extensions,
        imag_bound: km.imag_bound(),
        krein_backward_error: km.relative_backward_error(),
        classification,
        zeros: trace.zeros.clone(),
        poles: trace.poles.clone(),
        residues,
        complex,
        oracle: oracle_check,
    };
    Ok((report, ReportArtifacts { trace, phase }))
}

/// Full pipeline for one converged state.
pub fn report_for_state(cfg: &ScenarioConfig, state: StationaryState, oracle: bool) -> Result<(SpectrumReport, ReportArtifacts)> {
    let analysis = prepare(state, &cfg.tolerances)?;
    analyze(cfg, &analysis, oracle)
}

// ---------------------------------------------------------------------------
// artifacts

fn mu_dir(root: &Path, mu: f64) -> PathBuf {
    root.join(format!("mu_{mu:.6}"))
}

/// `spectrum.json`, `trace.csv`, `residues.json` and (if computed) `phase_field.csv`.
pub fn write_report(dir: &Path, report: &SpectrumReport, artifacts: &ReportArtifacts) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("spectrum.json"), serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join("trace.csv"), artifacts.trace.to_csv())?;
    fs::write(dir.join("residues.json"), serde_json::to_string_pretty(&report.residues)?)?;
    if let Some(p) = &artifacts.phase {
        fs::write(dir.join("phase_field.csv"), p.to_csv())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioRun {
    pub scenario: String,
    pub reports: Vec<SpectrumReport>,
    pub termination: Option<(f64, String)>,
    pub status: ReportStatus,
}

fn run_status(reports: &[SpectrumReport]) -> ReportStatus {
    reports.iter().map(|r| r.status()).fold(ReportStatus::Passed, worst)
}

/// Solve, analyze every `mu` of the scenario and write all artifacts under `cfg.output`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    cfg.validate()?;
    let run = solve_branch(cfg)?;
    fs::create_dir_all(&cfg.output)?;
    fs::write(cfg.output.join("config.toml"), cfg.to_toml())?;
    run.branch.save(&cfg.output.join("branch")).stage("write branch")?;
    analyze_branch(cfg, &run.branch, run.termination)
}

/// Re-run the spectral analysis on persisted branch files.
pub fn run_from_branch(cfg: &ScenarioConfig, branch_dir: &Path) -> Result<ScenarioRun> {
    let branch = Branch::load(branch_dir).stage("read branch")?;
    analyze_branch(cfg, &branch, None)
}

fn analyze_branch(cfg: &ScenarioConfig, branch: &Branch, termination: Option<(f64, String)>) -> Result<ScenarioRun> {
    let single = branch.points.len() == 1 && termination.is_none();
    let mut reports = Vec::new();
    for p in &branch.points {
        log::info!("{}: analyzing mu = {}", cfg.name, p.mu);
        let (report, artifacts) = report_for_state(cfg, p.state.clone(), cfg.oracle.enabled).stage("spectrum")?;
        let dir = if single { cfg.output.clone() } else { mu_dir(&cfg.output, p.mu) };
        write_report(&dir, &report, &artifacts)?;
        reports.push(report);
    }
    let mut status = run_status(&reports);
    if termination.is_some() {
        status = worst(status, ReportStatus::Flagged);
    }
    let run = ScenarioRun {
        scenario: cfg.name.clone(),
        reports,
        termination,
        status,
    };
    Ok(run)
}

// ---------------------------------------------------------------------------
// sweeps

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub mu: f64,
    pub power: f64,
    pub counts: Counts,
    pub k_ham: usize,
    pub index: HamiltonianKreinIndex,
    /// On the canonical path this is the 1x1 matrix `P'(mu)/2`.
    pub d_matrix: Vec<Vec<f64>>,
    pub status: ReportStatus,
    /// True for points added by transition bisection.
    pub bisection: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Transition {
    /// `(k_r, k_c, k_i^-)` on either side.
    pub from: Counts,
    pub to: Counts,
    pub interval: (f64, f64),
    pub estimate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub scenario: String,
    pub points: Vec<SweepPoint>,
    pub transitions: Vec<Transition>,
    pub termination: Option<(f64, String)>,
    pub status: ReportStatus,
}

fn sweep_point(report: &SpectrumReport, bisection: bool) -> SweepPoint {
    SweepPoint {
        mu: report.state.mu,
        power: report.state.power,
        counts: report.counts(),
        k_ham: report.index.k_ham,
        index: report.index,
        d_matrix: report.d_matrix.clone(),
        status: report.status(),
        bisection,
    }
}

/// Reports along the configured `mu` range, then bisection (to `sweep_tol`) of every
/// interval across which `(k_r, k_c, k_i^-)` changes.
pub fn sweep_mu(cfg: &ScenarioConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let run = solve_branch(cfg)?;
    fs::create_dir_all(&cfg.output)?;
    fs::write(cfg.output.join("config.toml"), cfg.to_toml())?;
    run.branch.save(&cfg.output.join("branch")).stage("write branch")?;

    let mut points = Vec::new();
    let mut status = ReportStatus::Passed;
    let mut keyed: Vec<(StationaryState, Counts)> = Vec::new();
    for p in &run.branch.points {
        log::info!("{}: sweep point mu = {}", cfg.name, p.mu);
        let (report, artifacts) = report_for_state(cfg, p.state.clone(), cfg.oracle.enabled).stage("spectrum")?;
        write_report(&mu_dir(&cfg.output, p.mu), &report, &artifacts)?;
        status = worst(status, report.status());
        points.push(sweep_point(&report, false));
        keyed.push((p.state.clone(), report.counts()));
    }

    let mut transitions = Vec::new();
    for w in keyed.windows(2) {
        let ((sa, ca), (sb, cb)) = (&w[0], &w[1]);
        if ca == cb {
            continue;
        }
        let (mut a, mut b) = (sa.clone(), sb.mu);
        let (from, to) = (*ca, *cb);
        while (b - a.mu).abs() > cfg.tolerances.sweep_tol {
            let mid = 0.5 * (a.mu + b);
            let state = continue_branch(&a, &[mid], cfg.d_mu_max(), cfg.tolerances.newton_options())
                .stage("bisection")?
                .points
                .remove(0)
                .state;
            let (report, _) = report_for_state(cfg, state.clone(), false).stage("bisection")?;
            status = worst(status, report.status());
            points.push(sweep_point(&report, true));
            if report.counts() == from {
                a = state;
            } else {
                b = mid;
            }
        }
        let interval = if a.mu < b { (a.mu, b) } else { (b, a.mu) };
        transitions.push(Transition {
            from,
            to,
            interval,
            estimate: 0.5 * (interval.0 + interval.1),
        });
    }
    points.sort_by(|a, b| a.mu.total_cmp(&b.mu));
    if run.termination.is_some() {
        status = worst(status, ReportStatus::Flagged);
    }
    let report = SweepReport {
        scenario: cfg.name.clone(),
        points,
        transitions,
        termination: run.termination,
        status,
    };
    fs::write(cfg.output.join("sweep.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Convenience for tools that only need the converged state at one `mu`.
pub fn state_at(cfg: &ScenarioConfig, mu: f64) -> Result<StationaryState> {
    let mut c = cfg.clone();
    c.mu = Some(mu);
    c.mu_range = None;
    let run = solve_branch(&c)?;
    match (run.branch.points.into_iter().next(), run.termination) {
        (Some(p), _) => Ok(p.state),
        (None, Some((last_mu, reason))) => Err(KreinError::BranchTermination { last_mu, reason }),
        (None, None) => Err(KreinError::Unresolved(format!("no state at mu = {mu}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krein::ComplexZero;

    fn zero(z: f64, trace: usize, slope: f64) -> KreinZero {
        let signature = if z < 0.0 {
            Signature::NotApplicable
        } else if slope > 0.0 {
            Signature::Negative
        } else {
            Signature::Positive
        };
        KreinZero { z, trace, slope, signature, residual: 0.0 }
    }

    fn trace_with(zeros: Vec<KreinZero>) -> KreinTrace {
        KreinTrace {
            z: vec![],
            r: vec![],
            pairing: vec![],
            pole_adjacent: vec![],
            poles: vec![],
            undetected_poles: vec![],
            zeros,
            window: (-1.0, 1.0),
        }
    }

    #[test]
    fn nearby_small_zeros_stay_separate() {
        // two nearly split dipolar modes at z ~ 0.04, 8.6e-7 apart, each seen on both traces
        let zeros = vec![zero(0.0394461, 0, -85.0), zero(0.0394461, 1, -85.0), zero(0.03944696, 0, -2494.0), zero(0.03944696, 1, -2494.0)];
        let clusters = cluster_zeros(&zeros);
        assert_eq!(clusters.len(), 2);
        assert!(clusters.iter().all(|c| c.len() == 2));
    }

    fn search(zeros: Vec<ComplexZero>) -> ComplexZeroSearch {
        let total = zeros.iter().map(|z| z.multiplicity as i64).sum();
        ComplexZeroSearch {
            region: Region { re: (-1.0, 1.0), im: (1e-7, 1.0) },
            zeros,
            total_winding: total,
            unresolved: vec![],
        }
    }

    fn index(k_ham: usize, canonical: bool) -> HamiltonianKreinIndex {
        HamiltonianKreinIndex {
            k_ham,
            canonical,
            n_l: k_ham,
            n_l_minus: None,
            n_d: 0,
            real_lower_bound: None,
        }
    }

    #[test]
    fn empty_krein_matrix_is_stable() {
        let c = classify_spectrum(&trace_with(vec![]), &[], &search(vec![]), &index(0, false), true);
        assert_eq!(c.counts, Counts::default());
        assert!(c.identity_holds);
        assert_eq!(c.status, ReportStatus::Passed);
    }

    #[test]
    fn doubled_vortex_pattern() {
        let zeros = vec![zero(0.031, 0, 3.1), zero(0.031 + 1e-12, 1, 3.1), zero(0.039, 0, -2.0), zero(0.039, 1, -2.0)];
        let c = classify_spectrum(&trace_with(zeros), &[], &search(vec![]), &index(2, false), true);
        assert_eq!(c.pencil_counts.k_i_minus, 2);
        assert_eq!(c.counts, Counts { k_r: 0, k_c: 0, k_i_minus: 1 });
        assert!(c.identity_holds);
        let anomalous = &c.eigenvalues[0];
        assert_eq!(anomalous.multiplicity, 1);
        assert!((anomalous.lambda - Complex64::new(0.0, 0.031f64.sqrt())).norm() < 1e-9);
    }

    #[test]
    fn doubled_quartet_pattern() {
        let cz = ComplexZero { z: Complex64::new(0.021, 0.009), multiplicity: 2, residual: 0.0 };
        let c = classify_spectrum(&trace_with(vec![zero(0.1, 0, -1.0), zero(0.1, 1, -1.0)]), &[], &search(vec![cz]), &index(2, false), true);
        assert_eq!(c.counts, Counts { k_r: 0, k_c: 1, k_i_minus: 0 });
        assert_eq!(c.pencil_counts.k_c, 2);
        assert!(c.identity_holds);
    }

    #[test]
    fn canonical_counts_are_not_halved() {
        let cz = |re: f64| ComplexZero { z: Complex64::new(re, 0.3), multiplicity: 1, residual: 0.0 };
        let c = classify_spectrum(
            &trace_with(vec![zero(2.0, 2, 0.5), zero(-0.2, 0, 0.0)]),
            &[],
            &search(vec![cz(1.0), cz(3.0)]),
            &index(7, true),
            false,
        );
        assert_eq!(c.counts, Counts { k_r: 1, k_c: 2, k_i_minus: 1 });
        assert!(c.identity_holds);
        assert!(c.eigenvalues[0].lambda.re > 0.0 && c.eigenvalues[0].lambda.im == 0.0);
    }

    #[test]
    fn identity_violation_fails() {
        let c = classify_spectrum(&trace_with(vec![zero(0.03, 0, 1.0)]), &[], &search(vec![]), &index(2, false), true);
        assert!(!c.identity_holds);
        assert_eq!(c.status, ReportStatus::Failed);
        assert!(c.notes.iter().any(|n| n.contains("identity")));
    }

    #[test]
    fn linear_limit_amplitude_scales_with_distance() {
        let g = Grid::new(1, 400, 0.05).unwrap();
        let a1 = linear_limit_amplitude(3, 3.6, 1.0, &g).unwrap();
        let a2 = linear_limit_amplitude(3, 3.9, 1.0, &g).unwrap();
        assert!((a2 / a1 - 2.0).abs() < 1e-12);
        assert!(linear_limit_amplitude(3, 3.4, 1.0, &g).is_err());
    }
}
