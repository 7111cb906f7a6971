//! Pairwise difference tabulation and floor-corrected probit fitting.
//!
//! Within each subject every response is compared with every other
//! response, and the pair is called different when the productions differ
//! by more than a threshold in F1 or in F2. The proportion of different
//! pairs as a function of the mel distance `d` between the two stimuli is
//! modelled as
//!
//! ```text
//! P(different | d) = c + (1 - c) * Phi(alpha + beta * d)
//! ```
//!
//! with floor `c`. The limen `X50` is the distance at which `P = 0.5`, and
//! `X75 - X50` measures the inverse steepness.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::normal;
use crate::simulator::MimicryResponse;
use crate::synth::StimulusSpec;
use crate::units::{mel_distance, FormantPoint, MelDistance};
use crate::Error;

/// When two productions count as different.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct DifferenceRule {
    pub f1_threshold: f64,
    pub f2_threshold: f64,
    /// Also require the production difference to point the same way as the
    /// stimulus difference in the dimension that exceeds its threshold.
    pub directional: bool,
}

impl Default for DifferenceRule {
    fn default() -> Self {
        Self {
            f1_threshold: 81.3,
            f2_threshold: 161.4,
            directional: false,
        }
    }
}

impl DifferenceRule {
    pub fn validate(&self) -> Result<(), Error> {
        if self.f1_threshold > 0.0 && self.f2_threshold > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument("difference thresholds must be positive".into()))
        }
    }

    /// The rule on raw differences. `produced` is comparison minus
    /// reference production, `stimulus` the same for the stimulus targets.
    pub fn differs(&self, produced: (f64, f64), stimulus: (f64, f64)) -> bool {
        let agrees = |p: f64, s: f64| !self.directional || (p * s > 0.0);
        (libm::fabs(produced.0) > self.f1_threshold && agrees(produced.0, stimulus.0))
            || (libm::fabs(produced.1) > self.f2_threshold && agrees(produced.1, stimulus.1))
    }
}

/// Whether a comparison production differs from a reference production.
///
/// The stimulus targets are only consulted by the directional rule.
pub fn classify_pair(
    reference: &MimicryResponse,
    comparison: &MimicryResponse,
    reference_target: &FormantPoint,
    comparison_target: &FormantPoint,
    rule: &DifferenceRule,
) -> Result<bool, Error> {
    if reference.subject != comparison.subject {
        return Err(Error::Contract("pairs must come from a single subject"));
    }
    let produced = (
        comparison.produced.f1() - reference.produced.f1(),
        comparison.produced.f2() - reference.produced.f2(),
    );
    let stimulus = (
        comparison_target.f1() - reference_target.f1(),
        comparison_target.f2() - reference_target.f2(),
    );
    Ok(rule.differs(produced, stimulus))
}

/// Counts for one (reference stimulus, comparison stimulus) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DifferenceCell {
    pub n_pairs: u64,
    pub n_different: u64,
    /// Between the stimulus targets, not the responses.
    pub distance: MelDistance,
}

impl DifferenceCell {
    pub fn proportion(&self) -> f64 {
        if self.n_pairs == 0 {
            0.0
        } else {
            self.n_different as f64 / self.n_pairs as f64
        }
    }
}

/// Cells keyed by `(reference_stim, comparison_stim)`.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DifferenceTable {
    pub cells: BTreeMap<(i32, i32), DifferenceCell>,
}

impl DifferenceTable {
    pub fn get(&self, reference: i32, comparison: i32) -> Option<&DifferenceCell> {
        self.cells.get(&(reference, comparison))
    }

    pub fn references(&self) -> Vec<i32> {
        let mut refs: Vec<i32> = self.cells.keys().map(|k| k.0).collect();
        refs.dedup();
        refs
    }

    /// Cells with the given reference, in comparison order.
    pub fn row(&self, reference: i32) -> impl Iterator<Item = (i32, &DifferenceCell)> {
        self.cells
            .range((reference, i32::MIN)..=(reference, i32::MAX))
            .map(|(k, c)| (k.1, c))
    }

    /// Adds another table's counts into this one.
    pub fn merge(&mut self, other: &DifferenceTable) {
        for (k, c) in &other.cells {
            let e = self.cells.entry(*k).or_insert(DifferenceCell {
                n_pairs: 0,
                n_different: 0,
                distance: c.distance,
            });
            e.n_pairs += c.n_pairs;
            e.n_different += c.n_different;
        }
    }

    /// Pooled same-stimulus proportion of different pairs.
    pub fn same_stimulus_rate(&self) -> Option<f64> {
        let (k, n) = self
            .cells
            .iter()
            .filter(|(key, _)| key.0 == key.1)
            .fold((0, 0), |(k, n), (_, c)| (k + c.n_different, n + c.n_pairs));
        (n > 0).then(|| k as f64 / n as f64)
    }
}

fn target_lookup(stimuli: &[StimulusSpec]) -> BTreeMap<i32, FormantPoint> {
    stimuli.iter().map(|s| (s.id, s.target)).collect()
}

/// One subject's pairs. Every ordered pair of distinct responses is
/// counted once.
fn tabulate_subject(
    responses: &[&MimicryResponse],
    targets: &BTreeMap<i32, FormantPoint>,
    rule: &DifferenceRule,
    table: &mut DifferenceTable,
) -> Result<(), Error> {
    for (i, a) in responses.iter().enumerate() {
        let ta = targets.get(&a.stimulus_id).ok_or_else(|| {
            Error::InvalidArgument(format!("response to unknown stimulus {}", a.stimulus_id))
        })?;
        for (j, b) in responses.iter().enumerate() {
            if i == j {
                continue;
            }
            let tb = targets.get(&b.stimulus_id).ok_or_else(|| {
                Error::InvalidArgument(format!("response to unknown stimulus {}", b.stimulus_id))
            })?;
            let different = classify_pair(a, b, ta, tb, rule)?;
            let cell = table
                .cells
                .entry((a.stimulus_id, b.stimulus_id))
                .or_insert(DifferenceCell {
                    n_pairs: 0,
                    n_different: 0,
                    distance: mel_distance(ta, tb),
                });
            cell.n_pairs += 1;
            cell.n_different += u64::from(different);
        }
    }
    Ok(())
}

/// Per-subject difference tables.
pub fn tabulate_by_subject(
    responses: &[MimicryResponse],
    stimuli: &[StimulusSpec],
    rule: &DifferenceRule,
) -> Result<BTreeMap<u32, DifferenceTable>, Error> {
    rule.validate()?;
    if responses.is_empty() {
        return Err(Error::InsufficientData("no responses to tabulate".into()));
    }
    let targets = target_lookup(stimuli);
    let mut by_subject: BTreeMap<u32, Vec<&MimicryResponse>> = BTreeMap::new();
    for r in responses {
        by_subject.entry(r.subject).or_default().push(r);
    }
    by_subject
        .into_iter()
        .map(|(subject, rs)| {
            let mut table = DifferenceTable::default();
            tabulate_subject(&rs, &targets, rule, &mut table)?;
            Ok((subject, table))
        })
        .collect()
}

/// Difference table pooled over all subjects.
pub fn tabulate(
    responses: &[MimicryResponse],
    stimuli: &[StimulusSpec],
    rule: &DifferenceRule,
) -> Result<DifferenceTable, Error> {
    let mut pooled = DifferenceTable::default();
    for table in tabulate_by_subject(responses, stimuli, rule)?.values() {
        pooled.merge(table);
    }
    Ok(pooled)
}

/// Binomial observation at one distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinomialPoint {
    pub x: f64,
    pub n: f64,
    pub k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FitStatus {
    Converged,
    /// Iteration limit reached or the likelihood surface broke down.
    NotConverged,
    /// The optimum has `beta <= 0`.
    NonMonotone,
    /// The data carry no graded information: nothing above the floor, or
    /// every cell all-or-none.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbitFit {
    pub alpha: f64,
    /// Per unit of the predictor (mels for limen fits).
    pub beta: f64,
    pub floor_c: f64,
    pub converged: bool,
    pub status: FitStatus,
    pub log_likelihood: f64,
    pub n_iterations: u32,
    /// Euclidean norm of the score per observation at the returned point.
    pub gradient_norm: f64,
}

impl ProbitFit {
    pub fn probability(&self, x: f64) -> f64 {
        self.floor_c + (1.0 - self.floor_c) * normal::cdf(self.alpha + self.beta * x)
    }

    /// Predictor value at which the fitted probability equals `p`.
    pub fn inverse(&self, p: f64) -> Option<f64> {
        let c = self.floor_c;
        if !(p > c && p < 1.0) || self.beta == 0.0 {
            return None;
        }
        Some((normal::quantile((p - c) / (1.0 - c)) - self.alpha) / self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FloorMode {
    Fixed(f64),
    /// Maximizes the profile likelihood over `c` in `[0, 0.45]`.
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FitOptions {
    pub floor: FloorMode,
    pub max_iterations: u32,
    /// Convergence threshold on the score norm per observation.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            floor: FloorMode::Fixed(0.1),
            max_iterations: 200,
            tolerance: 1e-9,
        }
    }
}

/// Log-likelihood of `c + (1 - c) Phi(alpha + beta x)`.
pub fn log_likelihood(points: &[BinomialPoint], alpha: f64, beta: f64, c: f64) -> f64 {
    points
        .iter()
        .map(|p| {
            let eta = alpha + beta * p.x;
            let prob = c + (1.0 - c) * normal::cdf(eta);
            let comp = (1.0 - c) * normal::sf(eta);
            let mut ll = 0.0;
            if p.k > 0.0 {
                ll += p.k * libm::log(prob.max(1e-300));
            }
            if p.n - p.k > 0.0 {
                ll += (p.n - p.k) * libm::log(comp.max(1e-300));
            }
            ll
        })
        .sum()
}

/// Score, observed information and expected information at `(alpha, beta)`.
fn derivatives(points: &[BinomialPoint], alpha: f64, beta: f64, c: f64) -> ([f64; 2], [f64; 3], [f64; 3]) {
    let mut g = [0.0; 2];
    let mut h = [0.0; 3];
    let mut fisher = [0.0; 3];
    for p in points {
        let eta = alpha + beta * p.x;
        let phi = normal::pdf(eta);
        let prob = (c + (1.0 - c) * normal::cdf(eta)).max(1e-300);
        let comp = ((1.0 - c) * normal::sf(eta)).max(1e-300);
        let s = (1.0 - c) * phi;
        let fail = p.n - p.k;
        let d1 = s * (p.k / prob - fail / comp);
        // d/d eta of d1; phi' = -eta phi
        let d2 = -(1.0 - c) * eta * phi * (p.k / prob - fail / comp)
            - s * s * (p.k / (prob * prob) + fail / (comp * comp));
        let info = p.n * s * s / (prob * comp);
        g[0] += d1;
        g[1] += d1 * p.x;
        h[0] += d2;
        h[1] += d2 * p.x;
        h[2] += d2 * p.x * p.x;
        fisher[0] += info;
        fisher[1] += info * p.x;
        fisher[2] += info * p.x * p.x;
    }
    (g, h, fisher)
}

/// Solves the 2x2 system `[a b; b d] s = r`.
fn solve2(m: [f64; 3], r: [f64; 2]) -> Option<[f64; 2]> {
    let det = m[0] * m[2] - m[1] * m[1];
    if !det.is_finite() || det.abs() < 1e-300 {
        return None;
    }
    Some([(m[2] * r[0] - m[1] * r[1]) / det, (m[0] * r[1] - m[1] * r[0]) / det])
}

/// Probit-transformed least squares start.
fn starting_point(points: &[BinomialPoint], c: f64) -> (f64, f64) {
    let (mut sw, mut sx, mut sz, mut sxx, mut sxz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points.iter().filter(|p| p.n > 0.0) {
        let q = ((p.k / p.n - c) / (1.0 - c)).clamp(0.02, 0.98);
        let z = normal::quantile(q);
        let w = p.n;
        sw += w;
        sx += w * p.x;
        sz += w * z;
        sxx += w * p.x * p.x;
        sxz += w * p.x * z;
    }
    let var = sxx - sx * sx / sw;
    let beta = if var > 0.0 { (sxz - sx * sz / sw) / var } else { 0.0 };
    let alpha = (sz - beta * sx) / sw;
    if alpha.is_finite() && beta.is_finite() {
        (alpha, beta)
    } else {
        (0.0, 0.0)
    }
}

fn is_degenerate(points: &[BinomialPoint], c: f64) -> bool {
    let nothing_above_floor = points.iter().all(|p| p.n == 0.0 || p.k / p.n <= c);
    let all_or_none = points.iter().all(|p| p.k == 0.0 || p.k == p.n);
    nothing_above_floor || all_or_none
}

/// Maximum-likelihood fit of `c + (1 - c) Phi(alpha + beta x)` for fixed
/// `c` by damped Newton iteration. Steps fall back to Fisher scoring
/// whenever the observed information is not positive definite, and are
/// halved until the likelihood increases.
pub fn fit_probit_fixed(points: &[BinomialPoint], c: f64, opts: &FitOptions) -> ProbitFit {
    let total_n: f64 = points.iter().map(|p| p.n).sum::<f64>().max(1.0);
    let (mut alpha, mut beta) = starting_point(points, c);
    let mut ll = log_likelihood(points, alpha, beta, c);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    let mut broke_down = false;

    while iterations < opts.max_iterations {
        let (g, h, fisher) = derivatives(points, alpha, beta, c);
        grad_norm = libm::hypot(g[0], g[1]) / total_n;
        if !grad_norm.is_finite() {
            broke_down = true;
            break;
        }
        if grad_norm < opts.tolerance {
            break;
        }
        iterations += 1;
        let neg_h = [-h[0], -h[1], -h[2]];
        let newton_ok = neg_h[0] > 0.0 && neg_h[0] * neg_h[2] - neg_h[1] * neg_h[1] > 0.0;
        let step = if newton_ok { solve2(neg_h, g) } else { None }
            .or_else(|| solve2(fisher, g));
        let Some(step) = step else {
            broke_down = true;
            break;
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let (a, b) = (alpha + t * step[0], beta + t * step[1]);
            let trial = log_likelihood(points, a, b, c);
            if trial.is_finite() && trial >= ll - 1e-12 * ll.abs().max(1.0) {
                improved = trial > ll || t < 1e-12;
                alpha = a;
                beta = b;
                ll = trial;
                break;
            }
            t *= 0.5;
        }
        if !improved && t < 1e-15 {
            broke_down = true;
            break;
        }
    }

    let converged = !broke_down && grad_norm < opts.tolerance && alpha.is_finite() && beta.is_finite();
    let status = if is_degenerate(points, c) {
        FitStatus::Degenerate
    } else if !converged {
        FitStatus::NotConverged
    } else if beta <= 0.0 {
        FitStatus::NonMonotone
    } else {
        FitStatus::Converged
    };
    ProbitFit {
        alpha,
        beta,
        floor_c: c,
        converged,
        status,
        log_likelihood: ll,
        n_iterations: iterations,
        gradient_norm: grad_norm,
    }
}

/// Fit with the floor either fixed or estimated by golden-section search
/// on the profile likelihood.
pub fn fit_probit(points: &[BinomialPoint], opts: &FitOptions) -> ProbitFit {
    match opts.floor {
        FloorMode::Fixed(c) => fit_probit_fixed(points, c, opts),
        FloorMode::Estimated => {
            let profile = |c: f64| fit_probit_fixed(points, c, opts);
            let ratio = 0.5 * (libm::sqrt(5.0) - 1.0);
            let (mut lo, mut hi) = (0.0, 0.45);
            let mut x1 = hi - ratio * (hi - lo);
            let mut x2 = lo + ratio * (hi - lo);
            let mut f1 = profile(x1).log_likelihood;
            let mut f2 = profile(x2).log_likelihood;
            for _ in 0..40 {
                if f1 < f2 {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + ratio * (hi - lo);
                    f2 = profile(x2).log_likelihood;
                } else {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - ratio * (hi - lo);
                    f1 = profile(x1).log_likelihood;
                }
            }
            profile(0.5 * (lo + hi))
        }
    }
}

/// A limen estimate for one reference stimulus.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct JpdEstimate {
    pub reference_stim: i32,
    /// Mels; NaN when the fit gives no crossing.
    pub x50: f64,
    /// `X75 - X50`, mels.
    pub inverse_steepness: f64,
    pub fit: ProbitFit,
    /// Pairs behind the fit, or subjects averaged for per-subject means.
    pub n: u64,
}

impl JpdEstimate {
    /// Usable for summary bounds: converged, increasing, positive limen.
    pub fn is_usable(&self) -> bool {
        self.fit.status == FitStatus::Converged && self.x50 > 0.0 && self.x50.is_finite()
    }

    pub fn x50_distance(&self) -> Option<MelDistance> {
        self.is_usable().then(|| MelDistance::new(self.x50).ok()).flatten()
    }
}

/// Binomial points of one table row, keyed by stimulus distance.
pub fn row_points(table: &DifferenceTable, reference_stim: i32) -> Vec<BinomialPoint> {
    table
        .row(reference_stim)
        .filter(|(_, c)| c.n_pairs > 0)
        .map(|(_, c)| BinomialPoint {
            x: c.distance.value(),
            n: c.n_pairs as f64,
            k: c.n_different as f64,
        })
        .collect()
}

fn distinct_distances(points: &[BinomialPoint]) -> usize {
    let mut xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    xs.len()
}

/// Fits the psychometric function of one reference stimulus and derives
/// `X50` and `X75 - X50`.
pub fn fit_jpd(
    table: &DifferenceTable,
    reference_stim: i32,
    opts: &FitOptions,
) -> Result<JpdEstimate, Error> {
    fit_jpd_points(reference_stim, &row_points(table, reference_stim), opts)
}

/// [`fit_jpd`] on explicit binomial points, for rows pooled from tables
/// whose stimuli differ (for example one continuum per subject group).
pub fn fit_jpd_points(
    reference_stim: i32,
    points: &[BinomialPoint],
    opts: &FitOptions,
) -> Result<JpdEstimate, Error> {
    if distinct_distances(points) < 3 {
        return Err(Error::InsufficientData(format!(
            "reference {reference_stim} has fewer than 3 distinct comparison distances"
        )));
    }
    let fit = fit_probit(points, opts);
    let (x50, x75) = match fit.status {
        FitStatus::Degenerate => (f64::NAN, f64::NAN),
        _ => (
            fit.inverse(0.5).unwrap_or(f64::NAN),
            fit.inverse(0.75).unwrap_or(f64::NAN),
        ),
    };
    Ok(JpdEstimate {
        reference_stim,
        x50,
        inverse_steepness: x75 - x50,
        fit,
        n: points.iter().map(|p| p.n as u64).sum(),
    })
}

/// How subjects are combined before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Aggregation {
    /// One fit per reference on the pooled table.
    #[default]
    Pooled,
    /// One fit per subject and reference, then the mean over subjects whose
    /// fit is usable.
    PerSubjectMean,
}

/// Fits every reference stimulus of the table.
pub fn fit_references(table: &DifferenceTable, opts: &FitOptions) -> Result<Vec<JpdEstimate>, Error> {
    table
        .references()
        .into_iter()
        .map(|r| fit_jpd(table, r, opts))
        .collect()
}

/// Per-subject fits averaged per reference. Alpha, beta and floor are
/// averaged too; the estimate's `n` counts the subjects averaged, and its
/// status is `Converged` when at least one subject contributed.
pub fn fit_per_subject_mean(
    tables: &BTreeMap<u32, DifferenceTable>,
    opts: &FitOptions,
) -> Result<Vec<JpdEstimate>, Error> {
    let mut by_ref: BTreeMap<i32, Vec<JpdEstimate>> = BTreeMap::new();
    for table in tables.values() {
        for e in fit_references(table, opts)? {
            by_ref.entry(e.reference_stim).or_default().push(e);
        }
    }
    Ok(by_ref
        .into_iter()
        .map(|(reference_stim, all)| {
            let usable: Vec<&JpdEstimate> = all.iter().filter(|e| e.is_usable()).collect();
            let m = usable.len() as f64;
            let mean = |f: &dyn Fn(&JpdEstimate) -> f64| {
                if usable.is_empty() {
                    f64::NAN
                } else {
                    usable.iter().map(|e| f(e)).sum::<f64>() / m
                }
            };
            let template = all[0].fit;
            let status = if usable.is_empty() {
                all.iter()
                    .map(|e| e.fit.status)
                    .find(|s| *s == FitStatus::Degenerate)
                    .unwrap_or(FitStatus::NotConverged)
            } else {
                FitStatus::Converged
            };
            JpdEstimate {
                reference_stim,
                x50: mean(&|e| e.x50),
                inverse_steepness: mean(&|e| e.inverse_steepness),
                fit: ProbitFit {
                    alpha: mean(&|e| e.fit.alpha),
                    beta: mean(&|e| e.fit.beta),
                    floor_c: if usable.is_empty() { template.floor_c } else { mean(&|e| e.fit.floor_c) },
                    converged: !usable.is_empty(),
                    status,
                    log_likelihood: all.iter().map(|e| e.fit.log_likelihood).sum(),
                    n_iterations: all.iter().map(|e| e.fit.n_iterations).max().unwrap_or(0),
                    gradient_norm: mean(&|e| e.fit.gradient_norm),
                },
                n: usable.len() as u64,
            }
        })
        .collect())
}

/// Upper and lower limen bounds over usable estimates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct JpdSummary {
    /// `(reference_stim, x50)` of the largest usable limen.
    pub upper: Option<(i32, f64)>,
    pub lower: Option<(i32, f64)>,
    /// References left out because their fit was not usable.
    pub excluded: Vec<i32>,
}

pub fn summarize(estimates: &[JpdEstimate]) -> JpdSummary {
    let usable: Vec<&JpdEstimate> = estimates.iter().filter(|e| e.is_usable()).collect();
    let pick = |better: fn(f64, f64) -> bool| {
        usable
            .iter()
            .fold(None::<(i32, f64)>, |best, e| match best {
                Some((_, x)) if !better(e.x50, x) => best,
                _ => Some((e.reference_stim, e.x50)),
            })
    };
    JpdSummary {
        upper: pick(|a, b| a > b),
        lower: pick(|a, b| a < b),
        excluded: estimates
            .iter()
            .filter(|e| !e.is_usable())
            .map(|e| e.reference_stim)
            .collect(),
    }
}

/// True when the largest usable limen sits at a prototype-adjacent
/// reference and the smallest at a boundary-adjacent one.
pub fn magnet_ordering_holds(
    estimates: &[JpdEstimate],
    prototype_refs: &[i32],
    boundary_refs: &[i32],
) -> bool {
    let s = summarize(estimates);
    match (s.upper, s.lower) {
        (Some((hi, _)), Some((lo, _))) => prototype_refs.contains(&hi) && boundary_refs.contains(&lo),
        _ => false,
    }
}

/// Same value as [`log_likelihood`] with one `erfc` per point: the
/// smaller tail is computed directly and the other one by complement.
fn grid_log_likelihood(points: &[BinomialPoint], alpha: f64, beta: f64, c: f64) -> f64 {
    let mut total = 0.0;
    for p in points {
        let eta = alpha + beta * p.x;
        let (lower, upper) = if eta < 0.0 {
            let t = normal::cdf(eta);
            (t, 1.0 - t)
        } else {
            let t = normal::sf(eta);
            (1.0 - t, t)
        };
        if p.k > 0.0 {
            total += p.k * libm::log((c + (1.0 - c) * lower).max(1e-300));
        }
        if p.n - p.k > 0.0 {
            total += (p.n - p.k) * libm::log(((1.0 - c) * upper).max(1e-300));
        }
    }
    total
}

/// Exhaustive search over `alpha` in `[-10, 10]` (step 0.01) and `beta` in
/// `(0, 1]` (step 0.001) at fixed floor. An independent check on
/// [`fit_jpd`]; slow by design.
pub fn grid_oracle_fit(
    table: &DifferenceTable,
    reference_stim: i32,
    floor_c: f64,
) -> Result<ProbitFit, Error> {
    let points = row_points(table, reference_stim);
    if points.is_empty() || distinct_distances(&points) < 3 {
        return Err(Error::InsufficientData(format!(
            "reference {reference_stim} has too little data for a grid fit"
        )));
    }
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for bi in 1..=1000 {
        let beta = bi as f64 * 0.001;
        for ai in 0..=2000 {
            let alpha = -10.0 + ai as f64 * 0.01;
            let ll = grid_log_likelihood(&points, alpha, beta, floor_c);
            if ll > best.0 {
                best = (ll, alpha, beta);
            }
        }
    }
    Ok(ProbitFit {
        alpha: best.1,
        beta: best.2,
        floor_c,
        converged: true,
        status: FitStatus::Converged,
        log_likelihood: best.0,
        n_iterations: 0,
        gradient_norm: f64::NAN,
    })
}

/// Result of a categorization probit.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CategorizationFit {
    pub alpha: f64,
    pub beta: f64,
    /// Stimulus coordinate with 50% upper-category responses. Bracketed
    /// between adjacent stimuli under perfect separation; `None` when
    /// every response has the same label.
    pub boundary: Option<f64>,
    /// Responses are perfectly separated, so the MLE does not exist.
    pub separated: bool,
    pub status: FitStatus,
}

/// Probit MLE of upper-category proportion against stimulus coordinate.
/// Each point carries `x` = stimulus coordinate, `n` judgements and `k`
/// upper-category labels.
pub fn fit_categorization(points: &[BinomialPoint]) -> Result<CategorizationFit, Error> {
    let mut pts: Vec<BinomialPoint> = points.iter().copied().filter(|p| p.n > 0.0).collect();
    if distinct_distances(&pts) < 2 {
        return Err(Error::InsufficientData(
            "categorization needs at least 2 stimulus points".into(),
        ));
    }
    pts.sort_by(|a, b| a.x.total_cmp(&b.x));
    let total_k: f64 = pts.iter().map(|p| p.k).sum();
    let total_n: f64 = pts.iter().map(|p| p.n).sum();
    if total_k == 0.0 || total_k == total_n {
        return Ok(CategorizationFit {
            alpha: f64::NAN,
            beta: f64::NAN,
            boundary: None,
            separated: true,
            status: FitStatus::Degenerate,
        });
    }
    // perfect separation: all lower below some point, all upper above it
    let last_lower = pts.iter().rposition(|p| p.k == 0.0);
    let first_upper = pts.iter().position(|p| p.k == p.n);
    let separated = pts.iter().all(|p| p.k == 0.0 || p.k == p.n)
        && matches!((last_lower, first_upper), (Some(l), Some(u)) if l + 1 == u);
    if separated {
        let (l, u) = (last_lower.unwrap_or(0), first_upper.unwrap_or(0));
        return Ok(CategorizationFit {
            alpha: f64::NAN,
            beta: f64::NAN,
            boundary: Some(0.5 * (pts[l].x + pts[u].x)),
            separated: true,
            status: FitStatus::Degenerate,
        });
    }
    let fit = fit_probit_fixed(&pts, 0.0, &FitOptions::default());
    let boundary = (fit.beta != 0.0).then(|| -fit.alpha / fit.beta);
    Ok(CategorizationFit {
        alpha: fit.alpha,
        beta: fit.beta,
        boundary,
        separated: false,
        status: if fit.converged {
            if fit.beta > 0.0 {
                FitStatus::Converged
            } else {
                FitStatus::NonMonotone
            }
        } else {
            FitStatus::NotConverged
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{run_block, Stimulus, SubjectProfile};
    use crate::synth::{parametric_specs, PitchContour};
    use proptest::prelude::*;

    #[test]
    fn grid_likelihood_matches_reference_likelihood() {
        let pts = [
            BinomialPoint { x: 0.0, n: 20.0, k: 2.0 },
            BinomialPoint { x: 30.0, n: 20.0, k: 9.0 },
            BinomialPoint { x: 90.0, n: 20.0, k: 20.0 },
        ];
        for &(a, b) in &[(-2.0, 0.05), (-9.5, 0.9), (3.0, 0.001), (0.0, 0.02)] {
            let fast = grid_log_likelihood(&pts, a, b, 0.1);
            let slow = log_likelihood(&pts, a, b, 0.1);
            assert!((fast - slow).abs() <= 1e-9 * slow.abs().max(1.0), "{a} {b}: {fast} vs {slow}");
        }
    }

    fn response(subject: u32, stimulus_id: i32, f1: f64, f2: f64) -> MimicryResponse {
        MimicryResponse {
            subject,
            stimulus_id,
            repetition: 0,
            order: 0,
            produced: FormantPoint::new(f1, f2).unwrap(),
        }
    }

    fn specs() -> Vec<StimulusSpec> {
        parametric_specs(
            FormantPoint::new(270.0, 2290.0).unwrap(),
            FormantPoint::new(390.0, 1990.0).unwrap(),
            9,
            0.25,
            PitchContour::rise_fall(117.0),
        )
        .unwrap()
    }

    /// Expected counts (rounded) from known parameters at the continuum's
    /// distances from stimulus 1.
    fn exact_table(alpha: f64, beta: f64, c: f64, n: u64) -> DifferenceTable {
        let specs = specs();
        let mut t = DifferenceTable::default();
        for s in &specs {
            let d = mel_distance(&specs[0].target, &s.target);
            let p = c + (1.0 - c) * normal::cdf(alpha + beta * d.value());
            t.cells.insert(
                (1, s.id),
                DifferenceCell {
                    n_pairs: n,
                    n_different: libm::round(p * n as f64) as u64,
                    distance: d,
                },
            );
        }
        t
    }

    #[test]
    fn classify_examples() {
        let rule = DifferenceRule::default();
        let t = FormantPoint::new(300.0, 2000.0).unwrap();
        let a = response(1, 1, 300.0, 2000.0);
        let same = classify_pair(&a, &response(1, 1, 300.0, 2000.0), &t, &t, &rule).unwrap();
        assert!(!same);
        assert!(classify_pair(&a, &response(1, 1, 400.0, 2000.0), &t, &t, &rule).unwrap());
        assert!(!classify_pair(&a, &response(1, 1, 350.0, 2150.0), &t, &t, &rule).unwrap());
        // strictly more than the threshold
        assert!(!rule.differs((81.3, 0.0), (0.0, 0.0)));
        assert!(!rule.differs((0.0, -161.4), (0.0, 0.0)));
        assert_eq!(
            classify_pair(&a, &response(2, 1, 300.0, 2000.0), &t, &t, &rule),
            Err(Error::Contract("pairs must come from a single subject"))
        );
    }

    #[test]
    fn directional_rule_needs_agreeing_sign() {
        let rule = DifferenceRule {
            directional: true,
            ..DifferenceRule::default()
        };
        let ta = FormantPoint::new(300.0, 2200.0).unwrap();
        let tb = FormantPoint::new(350.0, 2100.0).unwrap();
        let a = response(1, 1, 300.0, 2200.0);
        assert!(classify_pair(&a, &response(1, 2, 400.0, 2200.0), &ta, &tb, &rule).unwrap());
        assert!(!classify_pair(&a, &response(1, 2, 200.0, 2200.0), &ta, &tb, &rule).unwrap());
        assert!(classify_pair(&a, &response(1, 2, 300.0, 2000.0), &ta, &tb, &rule).unwrap());
    }

    #[test]
    fn counting_matches_brute_force() {
        let specs = specs();
        let stimuli: Vec<Stimulus> = specs.iter().map(Stimulus::from).collect();
        let p = SubjectProfile { seed: 4, ..SubjectProfile::default() };
        let responses = run_block(&p, &stimuli, 6).unwrap();
        let table = tabulate(&responses, &specs, &DifferenceRule::default()).unwrap();
        assert_eq!(table.cells.len(), 81);
        for s in &specs {
            assert_eq!(table.get(s.id, s.id).unwrap().n_pairs, 30);
            assert_eq!(table.get(s.id, s.id).unwrap().distance, MelDistance::ZERO);
        }
        // brute force over index pairs
        let rule = DifferenceRule::default();
        let mut k = 0;
        for (i, a) in responses.iter().enumerate() {
            for (j, b) in responses.iter().enumerate() {
                if i != j
                    && a.stimulus_id == 2
                    && b.stimulus_id == 7
                    && ((a.produced.f1() - b.produced.f1()).abs() > rule.f1_threshold
                        || (a.produced.f2() - b.produced.f2()).abs() > rule.f2_threshold)
                {
                    k += 1;
                }
            }
        }
        assert_eq!(table.get(2, 7).unwrap().n_different, k);
        assert_eq!(table.get(2, 7).unwrap().n_pairs, 36);
    }

    #[test]
    fn identity_subject_never_differs_on_same_stimulus() {
        let specs = specs();
        let stimuli: Vec<Stimulus> = specs.iter().map(Stimulus::from).collect();
        let responses = run_block(&SubjectProfile::identity(1, 2), &stimuli, 6).unwrap();
        let table = tabulate(&responses, &specs, &DifferenceRule::default()).unwrap();
        assert_eq!(table.same_stimulus_rate(), Some(0.0));
        for s in &specs {
            assert_eq!(table.get(s.id, s.id).unwrap().n_different, 0);
        }
        assert!(tabulate(&[], &specs, &DifferenceRule::default()).is_err());
    }

    #[test]
    fn recovers_known_limen_from_exact_data() {
        let table = exact_table(-2.0, 0.05, 0.1, 10_000);
        let e = fit_jpd(&table, 1, &FitOptions::default()).unwrap();
        assert_eq!(e.fit.status, FitStatus::Converged);
        assert!(e.fit.gradient_norm < 1e-9);
        let x50 = (normal::quantile(0.4 / 0.9) + 2.0) / 0.05;
        let x75 = (normal::quantile(0.65 / 0.9) + 2.0) / 0.05;
        assert!((x50 - 37.2).abs() < 0.1);
        assert!((e.x50 - 37.2).abs() / 37.2 < 0.02, "x50 {}", e.x50);
        assert!((e.inverse_steepness - (x75 - x50)).abs() / 14.6 < 0.05);
        assert!((e.inverse_steepness - 14.6).abs() / 14.6 < 0.05);
    }

    #[test]
    fn grid_optimum_is_one_step_from_truth() {
        let table = exact_table(-2.0, 0.05, 0.1, 10_000);
        let g = grid_oracle_fit(&table, 1, 0.1).unwrap();
        assert!((g.alpha + 2.0).abs() <= 0.01 + 1e-9, "alpha {}", g.alpha);
        assert!((g.beta - 0.05).abs() <= 0.001 + 1e-9, "beta {}", g.beta);
        let e = fit_jpd(&table, 1, &FitOptions::default()).unwrap();
        assert!(e.fit.log_likelihood >= g.log_likelihood - 1e-3);
        assert!(grid_oracle_fit(&DifferenceTable::default(), 1, 0.1).is_err());
    }

    #[test]
    fn flat_data_is_degenerate() {
        let mut table = exact_table(-2.0, 0.05, 0.1, 100);
        for c in table.cells.values_mut() {
            c.n_different = 0;
        }
        let e = fit_jpd(&table, 1, &FitOptions::default()).unwrap();
        assert_eq!(e.fit.status, FitStatus::Degenerate);
        assert!(!e.is_usable());
        assert!(e.x50.is_nan());
    }

    #[test]
    fn too_few_distances_is_a_data_error() {
        let mut table = exact_table(-2.0, 0.05, 0.1, 100);
        table.cells.retain(|k, _| k.1 <= 2);
        assert!(matches!(
            fit_jpd(&table, 1, &FitOptions::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn estimated_floor_recovers_truth() {
        let table = exact_table(-2.0, 0.05, 0.15, 100_000);
        let opts = FitOptions {
            floor: FloorMode::Estimated,
            ..FitOptions::default()
        };
        let e = fit_jpd(&table, 1, &opts).unwrap();
        assert!((e.fit.floor_c - 0.15).abs() < 0.01, "c {}", e.fit.floor_c);
    }

    #[test]
    fn categorization_boundary_matches_grid_oracle() {
        let props = [0.02, 0.10, 0.50, 0.90, 0.98];
        let pts: Vec<BinomialPoint> = props
            .iter()
            .enumerate()
            .map(|(i, &p)| BinomialPoint {
                x: i as f64 + 1.0,
                n: 100.0,
                k: p * 100.0,
            })
            .collect();
        let fit = fit_categorization(&pts).unwrap();
        assert_eq!(fit.status, FitStatus::Converged);
        let b = fit.boundary.unwrap();
        assert!((b - 3.0).abs() < 1e-6, "boundary {b}");
        // brute-force grid over (alpha, beta)
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for bi in 1..=400 {
            let beta = bi as f64 * 0.01;
            for ai in 0..=2000 {
                let alpha = -10.0 + ai as f64 * 0.01;
                let ll = log_likelihood(&pts, alpha, beta, 0.0);
                if ll > best.0 {
                    best = (ll, alpha, beta);
                }
            }
        }
        assert!((-best.1 / best.2 - b).abs() < 0.05);
        assert!(log_likelihood(&pts, fit.alpha, fit.beta, 0.0) >= best.0 - 1e-6);
    }

    #[test]
    fn categorization_separation_is_flagged() {
        let pts = |ks: [f64; 4]| -> Vec<BinomialPoint> {
            ks.iter()
                .enumerate()
                .map(|(i, &k)| BinomialPoint { x: i as f64 + 1.0, n: 10.0, k })
                .collect()
        };
        let all_lower = fit_categorization(&pts([0.0; 4])).unwrap();
        assert!(all_lower.separated && all_lower.boundary.is_none());
        let step = fit_categorization(&pts([0.0, 0.0, 10.0, 10.0])).unwrap();
        assert!(step.separated);
        assert_eq!(step.boundary, Some(2.5));
    }

    #[test]
    fn summary_skips_unusable_fits() {
        let good = fit_jpd(&exact_table(-2.0, 0.05, 0.1, 1000), 1, &FitOptions::default()).unwrap();
        let mut big = good;
        big.reference_stim = 2;
        big.x50 = 60.0;
        let mut bad = good;
        bad.reference_stim = 3;
        bad.x50 = 500.0;
        bad.fit.status = FitStatus::NotConverged;
        let s = summarize(&[good, big, bad]);
        assert_eq!(s.upper, Some((2, 60.0)));
        assert_eq!(s.lower.unwrap().0, 1);
        assert_eq!(s.excluded, alloc::vec![3]);
        assert!(magnet_ordering_holds(&[good, big, bad], &[2], &[1]));
        assert!(!magnet_ordering_holds(&[good, big, bad], &[1], &[2]));
    }

    #[test]
    fn fitted_curve_is_monotone_and_bounded() {
        let e = fit_jpd(&exact_table(-1.0, 0.03, 0.1, 500), 1, &FitOptions::default()).unwrap();
        let mut prev = 0.0;
        // beyond eta = 8 the normal CDF rounds to one
        for i in 0..250 {
            let p = e.fit.probability(i as f64);
            assert!(p >= prev && (0.1..1.0).contains(&p));
            prev = p;
        }
    }

    proptest! {
        #[test]
        fn enlarging_thresholds_never_adds_differences(
            seed in 0u64..1000,
            extra1 in 0.0f64..100.0,
            extra2 in 0.0f64..200.0,
        ) {
            let specs = specs();
            let stimuli: Vec<Stimulus> = specs.iter().map(Stimulus::from).collect();
            let p = SubjectProfile { seed, warp_strength: 0.3, ..SubjectProfile::default() };
            let responses = run_block(&p, &stimuli, 3).unwrap();
            let base = DifferenceRule::default();
            let wider = DifferenceRule {
                f1_threshold: base.f1_threshold + extra1,
                f2_threshold: base.f2_threshold + extra2,
                ..base
            };
            let a = tabulate(&responses, &specs, &base).unwrap();
            let b = tabulate(&responses, &specs, &wider).unwrap();
            for (k, cell) in &a.cells {
                prop_assert!(b.cells[k].n_different <= cell.n_different);
            }
        }
    }
}
