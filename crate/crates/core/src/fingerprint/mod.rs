//! Fingerprint generation.
//!
//! The pipeline per anchor: select high-margin training samples, push each
//! across the protected model's decision boundary with the minimal
//! perturbation, estimate margin/Lipschitz/logit-shift statistics over the
//! surrogate pools, derive the admissible stretch-factor interval, and
//! grid-search the stretch factor that maximizes slack to both interval
//! ends. The fingerprint input is the anchor stretched by that factor; its
//! label is whatever the protected model predicts there.
//!
//! The stretch factor `tau` lives in an interval whose ends come from two
//! requirements. Robustness against pirated models bounds it from below:
//! `tau_lower(tau) = 1 + 2 * eps_logit(x*(tau)) / (c_g * ||delta*||)`,
//! where `eps_logit` is the worst-case per-class logit shift a pirated
//! model exhibits at the stretched input (a function of tau, hence the
//! grid search). Uniqueness against independently trained models bounds it
//! from above: `tau_upper = m_min / (2 * L_uniq * ||delta*||)`, where
//! `m_min` bounds independent models' margins at the anchor from below and
//! `L_uniq` bounds their local Lipschitz constants from above. Both
//! statistics are quantile-relaxed over finite surrogate pools.

mod boundary;

pub use boundary::{find_min_perturbation, BoundaryResult};

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::modelops::{ModelPool, PoolRole};
use crate::nn::{self, Model};
use crate::stats::quantile;

fn default_m_anchor() -> f64 {
    8.0
}
fn default_q_margin() -> f64 {
    0.5
}
fn default_q_lip() -> f64 {
    0.5
}
fn default_q_eps() -> f64 {
    1.0
}
fn default_n_grid() -> usize {
    500
}
fn default_boundary_tol() -> f64 {
    1e-4
}
fn default_cw_steps() -> usize {
    3000
}
fn default_cw_lr() -> f64 {
    0.01
}
fn default_cw_c() -> f64 {
    1.0
}
fn default_kappa() -> f64 {
    0.0
}
fn default_max_fingerprints() -> usize {
    100
}

/// Generation settings. The defaults suit small dense classifiers on
/// blob-like 2-D tasks; `m_anchor` and `cw_c` are the task-sensitive ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Minimum logit margin for anchor selection.
    #[serde(default = "default_m_anchor")]
    pub m_anchor: f64,
    /// Quantile level for the independent-pool margin lower bound.
    #[serde(default = "default_q_margin")]
    pub q_margin: f64,
    /// Quantile level for the independent-pool Lipschitz upper bound.
    #[serde(default = "default_q_lip")]
    pub q_lip: f64,
    /// Quantile level for the pirated-pool logit-shift bound.
    #[serde(default = "default_q_eps")]
    pub q_eps: f64,
    /// Number of stretch-factor candidates per anchor.
    #[serde(default = "default_n_grid")]
    pub n_grid: usize,
    /// Margin magnitude below which a point counts as on the boundary.
    #[serde(default = "default_boundary_tol")]
    pub boundary_tol: f64,
    #[serde(default = "default_cw_steps")]
    pub cw_steps: usize,
    #[serde(default = "default_cw_lr")]
    pub cw_lr: f64,
    /// Initial penalty weight for the boundary search; doubled up to 8
    /// times when no prediction flip is achieved.
    #[serde(default = "default_cw_c")]
    pub cw_c: f64,
    /// Confidence offset in the boundary-search penalty.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Stop after this many fingerprints.
    #[serde(default = "default_max_fingerprints")]
    pub max_fingerprints: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            m_anchor: default_m_anchor(),
            q_margin: default_q_margin(),
            q_lip: default_q_lip(),
            q_eps: default_q_eps(),
            n_grid: default_n_grid(),
            boundary_tol: default_boundary_tol(),
            cw_steps: default_cw_steps(),
            cw_lr: default_cw_lr(),
            cw_c: default_cw_c(),
            kappa: default_kappa(),
            max_fingerprints: default_max_fingerprints(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, q) in [
            ("q_margin", self.q_margin),
            ("q_lip", self.q_lip),
            ("q_eps", self.q_eps),
        ] {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Config(format!("{name} must lie in [0,1], got {q}")));
            }
        }
        if self.n_grid < 2 {
            return Err(Error::Config(format!(
                "n_grid must be at least 2, got {}",
                self.n_grid
            )));
        }
        for (name, v) in [
            ("boundary_tol", self.boundary_tol),
            ("cw_lr", self.cw_lr),
            ("cw_c", self.cw_c),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.cw_steps == 0 {
            return Err(Error::Config("cw_steps must be positive".into()));
        }
        if self.max_fingerprints == 0 {
            return Err(Error::Config("max_fingerprints must be positive".into()));
        }
        Ok(())
    }
}

/// A high-confidence training sample chosen as a fingerprint origin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Anchor {
    pub x_a: Vec<f64>,
    pub y: usize,
    pub margin: f64,
    /// Row index in the source dataset, kept for provenance and for the
    /// documented tie order.
    pub dataset_index: usize,
}

/// Pool statistics for one anchor: the quantile-relaxed margin lower bound
/// and Lipschitz upper bound, with the per-model raw values retained as
/// diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorEstimates {
    pub m_min: f64,
    pub l_uniq: f64,
    pub per_model_margins: Vec<f64>,
    pub per_model_lipschitz: Vec<f64>,
}

/// One fingerprint: the stretched input, the protected model's label
/// there, and the stretch-factor provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fingerprint {
    pub x_star: Vec<f64>,
    pub y_star: usize,
    pub tau_star: f64,
    pub tau_lower_at_star: f64,
    pub tau_upper: f64,
    pub anchor_index: usize,
    pub slack: f64,
}

/// Why anchors were discarded during generation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscardCounts {
    pub boundary_failure: usize,
    pub interval_void: usize,
    pub no_feasible_tau: usize,
}

impl DiscardCounts {
    pub fn total(&self) -> usize {
        self.boundary_failure + self.interval_void + self.no_feasible_tau
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FingerprintSet {
    pub fingerprints: Vec<Fingerprint>,
    pub gen_config: GenConfig,
    pub protected_model_ref: String,
    pub discarded_anchor_count: usize,
    pub discards: DiscardCounts,
}

impl FingerprintSet {
    pub fn len(&self) -> usize {
        self.fingerprints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fingerprints.is_empty()
    }
}

/// Every correctly classified sample whose logit margin reaches
/// `cfg.m_anchor`, sorted by descending margin; ties keep dataset order.
pub fn select_anchors(model: &Model, data: &Dataset, cfg: &GenConfig) -> Result<Vec<Anchor>> {
    data.validate()?;
    let mut anchors = Vec::new();
    for (i, (x, &y)) in data.inputs.iter().zip(&data.labels).enumerate() {
        let margin = nn::logit_margin(model, x, y)?;
        if margin < cfg.m_anchor || nn::predict(model, x)? != y {
            continue;
        }
        anchors.push(Anchor {
            x_a: x.clone(),
            y,
            margin,
            dataset_index: i,
        });
    }
    anchors.sort_by(|a, b| {
        b.margin
            .total_cmp(&a.margin)
            .then(a.dataset_index.cmp(&b.dataset_index))
    });
    Ok(anchors)
}

fn check_role(pool: &ModelPool, expected: PoolRole) -> Result<()> {
    if pool.role != expected {
        return Err(Error::Config(format!(
            "expected a {} pool, got {}",
            expected.name(),
            pool.role.name()
        )));
    }
    Ok(())
}

/// Estimate the margin lower bound and local-Lipschitz upper bound for an
/// anchor over the independent surrogate pool. Per member: the logit
/// margin at the anchor, and the ratio of logit displacement to input
/// displacement between the anchor and its boundary point.
pub fn estimate_anchor(
    anchor: &Anchor,
    boundary: &BoundaryResult,
    independent_pool: &ModelPool,
    cfg: &GenConfig,
) -> Result<AnchorEstimates> {
    check_role(independent_pool, PoolRole::IndependentSurrogate)?;
    let mut margins = Vec::with_capacity(independent_pool.len());
    let mut lipschitz = Vec::with_capacity(independent_pool.len());
    for model in &independent_pool.models {
        margins.push(nn::logit_margin(model, &anchor.x_a, anchor.y)?);
        let s_a = nn::forward_logits(model, &anchor.x_a)?;
        let s_q = nn::forward_logits(model, &boundary.q)?;
        let displacement: f64 = s_q
            .iter()
            .zip(&s_a)
            .map(|(q, a)| (q - a) * (q - a))
            .sum::<f64>()
            .sqrt();
        lipschitz.push(displacement / boundary.delta_norm);
    }
    Ok(AnchorEstimates {
        m_min: quantile(&margins, cfg.q_margin)?,
        l_uniq: quantile(&lipschitz, cfg.q_lip)?,
        per_model_margins: margins,
        per_model_lipschitz: lipschitz,
    })
}

/// Quantile-relaxed per-class logit shift between the protected model and
/// the pirated surrogate pool at input `x`.
pub fn eps_logit_at(
    x: &[f64],
    protected: &Model,
    pirated_pool: &ModelPool,
    q_eps: f64,
) -> Result<f64> {
    check_role(pirated_pool, PoolRole::PiratedSurrogate)?;
    let s_p = nn::forward_logits(protected, x)?;
    let mut shifts = Vec::with_capacity(pirated_pool.len());
    for model in &pirated_pool.models {
        let s = nn::forward_logits(model, x)?;
        let max_shift = s
            .iter()
            .zip(&s_p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        shifts.push(max_shift);
    }
    quantile(&shifts, q_eps)
}

/// Uniqueness bound on the stretch factor:
/// `m_min / (2 * L_uniq * ||delta*||)`. May come out at or below 1, which
/// voids the admissible interval for that anchor.
pub fn tau_upper(estimates: &AnchorEstimates, delta_norm: f64) -> Result<f64> {
    if estimates.l_uniq.is_nan() || estimates.l_uniq <= 0.0 {
        return Err(Error::Numeric(format!(
            "tau_upper needs positive L_uniq, got {}",
            estimates.l_uniq
        )));
    }
    if delta_norm.is_nan() || delta_norm <= 0.0 {
        return Err(Error::Numeric(format!(
            "tau_upper needs positive delta norm, got {delta_norm}"
        )));
    }
    Ok(estimates.m_min / (2.0 * estimates.l_uniq * delta_norm))
}

/// Robustness bound on the stretch factor, evaluated at the stretched
/// input `x*(tau) = x_a + tau * delta*`:
/// `1 + 2 * eps_logit(x*(tau)) / (c_g * ||delta*||)`. Always at least 1.
pub fn tau_lower(
    tau: f64,
    anchor: &Anchor,
    boundary: &BoundaryResult,
    protected: &Model,
    pirated_pool: &ModelPool,
    cfg: &GenConfig,
) -> Result<f64> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!("tau must be positive, got {tau}")));
    }
    let x_star: Vec<f64> = anchor
        .x_a
        .iter()
        .zip(&boundary.delta_star)
        .map(|(a, d)| a + tau * d)
        .collect();
    let eps = eps_logit_at(&x_star, protected, pirated_pool, cfg.q_eps)?;
    Ok(1.0 + 2.0 * eps / (boundary.c_g * boundary.delta_norm))
}

/// Why an anchor yielded no feasible stretch factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibleReason {
    /// `tau_upper <= 1`: the admissible interval is empty before any
    /// candidate is tried.
    IntervalVoid,
    /// Candidates exist but none clears its own lower bound with positive
    /// slack to both ends.
    NoFeasibleTau,
}

/// Outcome of the stretch-factor grid search for one anchor.
#[derive(Debug, Clone)]
pub enum GridSearch {
    Feasible {
        tau_star: f64,
        tau_lower_at_star: f64,
        tau_upper: f64,
        slack: f64,
    },
    Infeasible(InfeasibleReason),
}

/// Grid search over `(1, tau_upper]`: `n_grid` evenly spaced candidates
/// (the first at `1 + (tau_upper - 1)/n_grid`, the last at `tau_upper`),
/// keeping those strictly above their own lower bound and returning the
/// one that maximizes the minimum slack to both interval ends. Slack ties
/// resolve to the smallest candidate. Infeasibility is a value, not an
/// error.
pub fn grid_search_tau(
    anchor: &Anchor,
    boundary: &BoundaryResult,
    estimates: &AnchorEstimates,
    protected: &Model,
    pirated_pool: &ModelPool,
    cfg: &GenConfig,
) -> Result<GridSearch> {
    let upper = tau_upper(estimates, boundary.delta_norm)?;
    if upper.is_nan() || upper <= 1.0 {
        return Ok(GridSearch::Infeasible(InfeasibleReason::IntervalVoid));
    }
    let step = (upper - 1.0) / cfg.n_grid as f64;
    let mut best: Option<(f64, f64, f64)> = None; // (slack, tau, lower_at_tau)
    for j in 1..=cfg.n_grid {
        let tau = 1.0 + step * j as f64;
        let lower = tau_lower(tau, anchor, boundary, protected, pirated_pool, cfg)?;
        if tau <= lower {
            continue;
        }
        let slack = (tau - lower).min(upper - tau);
        if best.as_ref().is_none_or(|(s, _, _)| slack > *s) {
            best = Some((slack, tau, lower));
        }
    }
    match best {
        // A best candidate with zero slack can only be tau_upper itself;
        // emitting it would put the fingerprint exactly on the uniqueness
        // bound, so it is treated as infeasible.
        Some((slack, tau, lower)) if slack > 0.0 => Ok(GridSearch::Feasible {
            tau_star: tau,
            tau_lower_at_star: lower,
            tau_upper: upper,
            slack,
        }),
        _ => Ok(GridSearch::Infeasible(InfeasibleReason::NoFeasibleTau)),
    }
}

/// Run the full generation pipeline: anchors in descending-margin order,
/// boundary search, pool estimation, stretch-factor search, fingerprint
/// emission, until `max_fingerprints` are produced or anchors run out.
/// Producing zero fingerprints is a valid outcome; the discard counters
/// say why.
pub fn generate(
    protected: &Model,
    data: &Dataset,
    surrogate_pirated: &ModelPool,
    surrogate_independent: &ModelPool,
    cfg: &GenConfig,
) -> Result<FingerprintSet> {
    cfg.validate()?;
    check_role(surrogate_pirated, PoolRole::PiratedSurrogate)?;
    check_role(surrogate_independent, PoolRole::IndependentSurrogate)?;
    let anchors = select_anchors(protected, data, cfg)?;
    let mut fingerprints = Vec::new();
    let mut discards = DiscardCounts::default();
    for anchor in &anchors {
        if fingerprints.len() >= cfg.max_fingerprints {
            break;
        }
        let Some(boundary) = find_min_perturbation(protected, anchor, cfg)? else {
            discards.boundary_failure += 1;
            continue;
        };
        let estimates = estimate_anchor(anchor, &boundary, surrogate_independent, cfg)?;
        match grid_search_tau(
            anchor,
            &boundary,
            &estimates,
            protected,
            surrogate_pirated,
            cfg,
        )? {
            GridSearch::Infeasible(InfeasibleReason::IntervalVoid) => {
                discards.interval_void += 1;
            }
            GridSearch::Infeasible(InfeasibleReason::NoFeasibleTau) => {
                discards.no_feasible_tau += 1;
            }
            GridSearch::Feasible {
                tau_star,
                tau_lower_at_star,
                tau_upper,
                slack,
            } => {
                let x_star: Vec<f64> = anchor
                    .x_a
                    .iter()
                    .zip(&boundary.delta_star)
                    .map(|(a, d)| a + tau_star * d)
                    .collect();
                let y_star = nn::predict(protected, &x_star)?;
                fingerprints.push(Fingerprint {
                    x_star,
                    y_star,
                    tau_star,
                    tau_lower_at_star,
                    tau_upper,
                    anchor_index: anchor.dataset_index,
                    slack,
                });
            }
        }
    }
    Ok(FingerprintSet {
        fingerprints,
        gen_config: cfg.clone(),
        protected_model_ref: protected.lineage.clone(),
        discarded_anchor_count: discards.total(),
        discards,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelops::ModelPool;
    use crate::nn::{init_model, Activation, Model, ModelSpec};

    /// Model whose logits equal `bias` for every input.
    fn constant_model(bias: &[f64], dim: usize) -> Model {
        let k = bias.len();
        let mut m = init_model(&ModelSpec::new(vec![dim, k], Activation::Relu, 0)).unwrap();
        m.weights[0] = vec![0.0; dim * k];
        m.biases[0] = bias.to_vec();
        m
    }

    /// Linear model with the given per-class weight columns and biases.
    fn linear_model(columns: &[Vec<f64>], bias: &[f64]) -> Model {
        let d = columns[0].len();
        let k = columns.len();
        let mut m = init_model(&ModelSpec::new(vec![d, k], Activation::Relu, 0)).unwrap();
        for i in 0..d {
            for (j, col) in columns.iter().enumerate() {
                m.weights[0][i * k + j] = col[i];
            }
        }
        m.biases[0] = bias.to_vec();
        m
    }

    fn pool_of(models: Vec<Model>, role: PoolRole) -> ModelPool {
        let mut tagged = models;
        for m in tagged.iter_mut() {
            m.tag = role.tag();
        }
        let n = tagged.len() as u64;
        ModelPool::new(tagged, role, (0..n).collect(), (0, 0)).unwrap()
    }

    fn unit_boundary(dim: usize) -> BoundaryResult {
        BoundaryResult {
            delta_star: {
                let mut d = vec![0.0; dim];
                d[0] = -1.0;
                d
            },
            q: vec![0.0; dim],
            delta_norm: 1.0,
            c_g: 1.0,
            adversarial_class: 1,
            residual_margin: 0.0,
        }
    }

    fn anchor_at(x: Vec<f64>, y: usize) -> Anchor {
        Anchor {
            x_a: x,
            y,
            margin: 1.0,
            dataset_index: 0,
        }
    }

    #[test]
    fn select_anchors_threshold_off_takes_all_correct() {
        let m = linear_model(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[0.0, 0.0]);
        let data = Dataset::new(
            "t",
            vec![vec![2.0, 0.0], vec![-1.0, 0.0], vec![0.5, 1.0]],
            vec![0, 1, 0],
            2,
        );
        let cfg = GenConfig {
            m_anchor: f64::NEG_INFINITY,
            ..GenConfig::default()
        };
        let anchors = select_anchors(&m, &data, &cfg).unwrap();
        assert_eq!(anchors.len(), 3);
        // Sorted by descending margin: margins are 4, 2, 1.
        assert_eq!(anchors[0].dataset_index, 0);
        assert_eq!(anchors[1].dataset_index, 1);
        assert_eq!(anchors[2].dataset_index, 2);
    }

    #[test]
    fn select_anchors_above_max_is_empty() {
        let m = linear_model(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[0.0, 0.0]);
        let data = Dataset::new("t", vec![vec![2.0, 0.0]], vec![0], 2);
        let cfg = GenConfig {
            m_anchor: 100.0,
            ..GenConfig::default()
        };
        assert!(select_anchors(&m, &data, &cfg).unwrap().is_empty());
    }

    #[test]
    fn select_anchors_ties_keep_dataset_order() {
        let m = linear_model(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[0.0, 0.0]);
        let data = Dataset::new("t", vec![vec![1.0, 5.0], vec![1.0, -5.0]], vec![0, 0], 2);
        let cfg = GenConfig {
            m_anchor: 0.0,
            ..GenConfig::default()
        };
        let anchors = select_anchors(&m, &data, &cfg).unwrap();
        assert_eq!(anchors[0].dataset_index, 0);
        assert_eq!(anchors[1].dataset_index, 1);
    }

    #[test]
    fn estimate_anchor_quantile_cases() {
        // Margin models: constant logits produce margins 1, 2, 3 at y=0.
        let models = vec![
            constant_model(&[1.0, 0.0], 2),
            constant_model(&[2.0, 0.0], 2),
            constant_model(&[3.0, 0.0], 2),
        ];
        let pool = pool_of(models, PoolRole::IndependentSurrogate);
        let anchor = anchor_at(vec![1.0, 0.0], 0);
        let boundary = unit_boundary(2);
        let cfg = GenConfig {
            q_margin: 0.0,
            q_lip: 1.0,
            ..GenConfig::default()
        };
        let est = estimate_anchor(&anchor, &boundary, &pool, &cfg).unwrap();
        assert_eq!(est.m_min, 1.0);
        assert_eq!(est.per_model_margins, vec![1.0, 2.0, 3.0]);
        // Constant models have zero logit displacement, so Lipschitz 0.
        assert_eq!(est.l_uniq, 0.0);
    }

    #[test]
    fn estimate_anchor_lipschitz_ratio() {
        // Diagonal linear models scale the input by a, so the logit
        // displacement over a unit input step is exactly a per class used.
        let scale_model = |a: f64| linear_model(&[vec![a, 0.0], vec![-a, 0.0]], &[0.0, 0.0]);
        let pool = pool_of(
            vec![scale_model(0.5), scale_model(1.5)],
            PoolRole::IndependentSurrogate,
        );
        let anchor = anchor_at(vec![1.0, 0.0], 0);
        let boundary = unit_boundary(2);
        let cfg = GenConfig {
            q_lip: 1.0,
            ..GenConfig::default()
        };
        let est = estimate_anchor(&anchor, &boundary, &pool, &cfg).unwrap();
        // Displacement per model: ||(a*dx, -a*dx)|| = a*sqrt(2) over ||dx||=1.
        let expect: Vec<f64> = vec![0.5 * 2f64.sqrt(), 1.5 * 2f64.sqrt()];
        for (got, want) in est.per_model_lipschitz.iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((est.l_uniq - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn estimate_anchor_median_interpolates() {
        let models = vec![
            constant_model(&[1.0, 0.0], 2),
            constant_model(&[2.0, 0.0], 2),
            constant_model(&[3.0, 0.0], 2),
            constant_model(&[4.0, 0.0], 2),
        ];
        let pool = pool_of(models, PoolRole::IndependentSurrogate);
        let cfg = GenConfig {
            q_margin: 0.5,
            ..GenConfig::default()
        };
        let est = estimate_anchor(
            &anchor_at(vec![0.0, 0.0], 0),
            &unit_boundary(2),
            &pool,
            &cfg,
        )
        .unwrap();
        assert_eq!(est.m_min, 2.5);
    }

    #[test]
    fn eps_logit_zero_for_exact_copies() {
        let protected = linear_model(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[0.1, -0.2]);
        let pool = pool_of(vec![protected.clone()], PoolRole::PiratedSurrogate);
        let eps = eps_logit_at(&[0.7, -0.3], &protected, &pool, 1.0).unwrap();
        assert_eq!(eps, 0.0);
    }

    #[test]
    fn eps_logit_quantile_and_oracle() {
        let protected = constant_model(&[0.0, 0.0], 2);
        // Offsets produce per-class max shifts of 0.1 and 0.3.
        let shifted = |d: f64| constant_model(&[d, -d / 2.0], 2);
        let pool = pool_of(vec![shifted(0.1), shifted(0.3)], PoolRole::PiratedSurrogate);
        let x = [0.0, 0.0];
        let eps = eps_logit_at(&x, &protected, &pool, 1.0).unwrap();
        assert!((eps - 0.3).abs() < 1e-12);

        // Duplicate-implementation oracle: explicit per-class loop.
        let s_p = nn::forward_logits(&protected, &x).unwrap();
        let mut oracle_shifts = Vec::new();
        for m in &pool.models {
            let s = nn::forward_logits(m, &x).unwrap();
            let mut worst = 0.0f64;
            for k in 0..s.len() {
                worst = worst.max((s[k] - s_p[k]).abs());
            }
            oracle_shifts.push(worst);
        }
        assert_eq!(quantile(&oracle_shifts, 1.0).unwrap(), eps);
    }

    #[test]
    fn eps_logit_rejects_wrong_role() {
        let protected = constant_model(&[0.0, 0.0], 2);
        let pool = pool_of(vec![protected.clone()], PoolRole::IndependentSurrogate);
        assert!(eps_logit_at(&[0.0, 0.0], &protected, &pool, 1.0).is_err());
    }

    #[test]
    fn tau_upper_arithmetic() {
        let est = AnchorEstimates {
            m_min: 4.0,
            l_uniq: 1.0,
            per_model_margins: vec![],
            per_model_lipschitz: vec![],
        };
        assert_eq!(tau_upper(&est, 1.0).unwrap(), 2.0);
        let est0 = AnchorEstimates {
            m_min: 0.0,
            ..est.clone()
        };
        assert_eq!(tau_upper(&est0, 1.0).unwrap(), 0.0);
        assert!(tau_upper(&est, 0.0).is_err());
        let bad = AnchorEstimates { l_uniq: 0.0, ..est };
        assert!(tau_upper(&bad, 1.0).is_err());
    }

    #[test]
    fn tau_lower_arithmetic() {
        let protected = constant_model(&[1.0, 0.0], 2);
        // Copy-only pool: eps is exactly 0, so the bound is exactly 1.
        let pool = pool_of(vec![protected.clone()], PoolRole::PiratedSurrogate);
        let anchor = anchor_at(vec![1.0, 0.0], 0);
        let boundary = unit_boundary(2);
        let cfg = GenConfig::default();
        let got = tau_lower(2.0, &anchor, &boundary, &protected, &pool, &cfg).unwrap();
        assert_eq!(got, 1.0);

        // eps = 0.5 with c_g = 1 and ||delta|| = 1 gives 2.
        let shifted = constant_model(&[1.5, 0.0], 2);
        let pool = pool_of(vec![shifted], PoolRole::PiratedSurrogate);
        let got = tau_lower(2.0, &anchor, &boundary, &protected, &pool, &cfg).unwrap();
        assert!((got - 2.0).abs() < 1e-12);
    }

    #[test]
    fn grid_search_void_interval() {
        let protected = constant_model(&[1.0, 0.0], 2);
        let pool = pool_of(vec![protected.clone()], PoolRole::PiratedSurrogate);
        let est = AnchorEstimates {
            m_min: 1.6,
            l_uniq: 1.0,
            per_model_margins: vec![],
            per_model_lipschitz: vec![],
        };
        // tau_upper = 0.8.
        let out = grid_search_tau(
            &anchor_at(vec![1.0, 0.0], 0),
            &unit_boundary(2),
            &est,
            &protected,
            &pool,
            &GenConfig::default(),
        )
        .unwrap();
        match out {
            GridSearch::Infeasible(InfeasibleReason::IntervalVoid) => {}
            other => panic!("expected void interval, got {other:?}"),
        }
    }

    #[test]
    fn grid_search_zero_shift_lands_midpoint() {
        let protected = constant_model(&[1.0, 0.0], 2);
        let pool = pool_of(vec![protected.clone()], PoolRole::PiratedSurrogate);
        let est = AnchorEstimates {
            m_min: 6.0,
            l_uniq: 1.0,
            per_model_margins: vec![],
            per_model_lipschitz: vec![],
        };
        // tau_upper = 3, tau_lower identically 1: optimum at the midpoint 2.
        let cfg = GenConfig::default();
        let out = grid_search_tau(
            &anchor_at(vec![1.0, 0.0], 0),
            &unit_boundary(2),
            &est,
            &protected,
            &pool,
            &cfg,
        )
        .unwrap();
        let step = 2.0 / cfg.n_grid as f64;
        match out {
            GridSearch::Feasible {
                tau_star,
                tau_lower_at_star,
                tau_upper,
                slack,
            } => {
                assert!((tau_star - 2.0).abs() <= step / 2.0 + 1e-12);
                assert_eq!(tau_lower_at_star, 1.0);
                assert_eq!(tau_upper, 3.0);
                assert!((slack - 1.0).abs() <= step);
                assert!(tau_lower_at_star < tau_star && tau_star < tau_upper);
            }
            other => panic!("expected feasible search, got {other:?}"),
        }
    }

    #[test]
    fn grid_search_postcondition_reevaluates() {
        let protected = constant_model(&[2.0, 0.0], 2);
        let shifted = constant_model(&[2.2, -0.1], 2);
        let pool = pool_of(vec![shifted], PoolRole::PiratedSurrogate);
        let est = AnchorEstimates {
            m_min: 8.0,
            l_uniq: 1.0,
            per_model_margins: vec![],
            per_model_lipschitz: vec![],
        };
        let anchor = anchor_at(vec![1.0, 0.0], 0);
        let boundary = unit_boundary(2);
        let cfg = GenConfig::default();
        match grid_search_tau(&anchor, &boundary, &est, &protected, &pool, &cfg).unwrap() {
            GridSearch::Feasible {
                tau_star,
                tau_lower_at_star,
                tau_upper: upper,
                ..
            } => {
                let re_lower =
                    tau_lower(tau_star, &anchor, &boundary, &protected, &pool, &cfg).unwrap();
                assert_eq!(re_lower, tau_lower_at_star);
                assert!(re_lower < tau_star && tau_star < upper);
            }
            other => panic!("expected feasible, got {other:?}"),
        }
    }
}
