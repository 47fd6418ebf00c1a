//! Performance-preserving model modifications and pool construction.
//!
//! The attacks here produce pirated variants of a protected model:
//! fine-tuning, global magnitude pruning, weight-noise injection,
//! knowledge distillation, one-step adversarial fine-tuning, and their
//! compositions. Independent pools are trained from scratch and never see
//! the protected model's parameters.

use serde::{Deserialize, Serialize};

use crate::datagen::{self, Dataset};
use crate::error::{Error, Result};
use crate::nn::{self, Loss, Model, ModelSpec, ModelTag, TrainConfig};
use crate::rng::{derive_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Finetune,
    Prune,
    NoiseFinetune,
    PruneFinetune,
    Distill,
    AdversarialTrain,
    PruneDistill,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Finetune => "finetune",
            AttackKind::Prune => "prune",
            AttackKind::NoiseFinetune => "noise_finetune",
            AttackKind::PruneFinetune => "prune_finetune",
            AttackKind::Distill => "distill",
            AttackKind::AdversarialTrain => "adversarial_train",
            AttackKind::PruneDistill => "prune_distill",
        }
    }

    fn involves_pruning(self) -> bool {
        matches!(
            self,
            AttackKind::Prune | AttackKind::PruneFinetune | AttackKind::PruneDistill
        )
    }

    fn involves_distillation(self) -> bool {
        matches!(self, AttackKind::Distill | AttackKind::PruneDistill)
    }
}

fn default_noise_scale() -> f64 {
    0.09
}

fn default_temperature() -> f64 {
    1.0
}

fn default_adv_epsilon_scale() -> f64 {
    0.1
}

/// Recipe for one pirated model. `seed` is the attack's master seed; the
/// training and noise streams are derived from it by name, so two specs
/// differing only in seed produce fully decorrelated members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<f64>,
    /// Weight-noise scale as a multiple of each tensor's std.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub student_spec: Option<ModelSpec>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Signed-gradient step size as a multiple of the per-feature data std.
    #[serde(default = "default_adv_epsilon_scale")]
    pub adv_epsilon_scale: f64,
    /// Optimizer settings for the attack; its seed field is ignored, the
    /// training stream is derived from the attack seed below.
    pub train_cfg: TrainConfig,
    pub seed: u64,
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kind.involves_pruning() {
            match self.sparsity {
                None => {
                    return Err(Error::Config(format!(
                        "attack {} requires sparsity",
                        self.kind.name()
                    )))
                }
                Some(s) if !(0.0..1.0).contains(&s) => {
                    return Err(Error::Config(format!(
                        "sparsity must lie in [0,1), got {s}"
                    )))
                }
                _ => {}
            }
        } else if self.sparsity.is_some() {
            return Err(Error::Config(format!(
                "attack {} does not take sparsity",
                self.kind.name()
            )));
        }
        if self.kind.involves_distillation() {
            if self.student_spec.is_none() {
                return Err(Error::Config(format!(
                    "attack {} requires student_spec",
                    self.kind.name()
                )));
            }
        } else if self.student_spec.is_some() {
            return Err(Error::Config(format!(
                "attack {} does not take student_spec",
                self.kind.name()
            )));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.noise_scale < 0.0 {
            return Err(Error::Config(format!(
                "noise_scale must be non-negative, got {}",
                self.noise_scale
            )));
        }
        self.train_cfg.validate()
    }

    pub fn lineage(&self) -> String {
        let mut s = format!("{} seed={}", self.kind.name(), self.seed);
        if let Some(sp) = self.sparsity {
            s.push_str(&format!(" sparsity={sp}"));
        }
        if self.kind == AttackKind::NoiseFinetune {
            s.push_str(&format!(" noise_scale={}", self.noise_scale));
        }
        if let Some(student) = &self.student_spec {
            s.push_str(&format!(
                " student={:?} temperature={}",
                student.layer_sizes, self.temperature
            ));
        }
        s
    }
}

/// Zero the globally smallest-magnitude fraction of weights. Exactly
/// `ceil(sparsity * total)` entries are zeroed; magnitude ties resolve to
/// the earlier entry in layer-major traversal order. Biases are untouched.
pub fn prune_weights(model: &Model, sparsity: f64) -> Result<Model> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::Config(format!(
            "sparsity must lie in [0,1), got {sparsity}"
        )));
    }
    let total = model.weight_count();
    let to_zero = (sparsity * total as f64).ceil() as usize;
    let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(total);
    let mut flat_index = 0usize;
    for layer in &model.weights {
        for w in layer {
            ranked.push((w.abs(), flat_index));
            flat_index += 1;
        }
    }
    // Stable order: magnitude ascending, then traversal order.
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut zero_mask = vec![false; total];
    for (_, idx) in ranked.iter().take(to_zero) {
        zero_mask[*idx] = true;
    }
    let mut out = model.clone();
    let mut flat_index = 0usize;
    for layer in out.weights.iter_mut() {
        for w in layer.iter_mut() {
            if zero_mask[flat_index] {
                *w = 0.0;
            }
            flat_index += 1;
        }
    }
    Ok(out)
}

/// Perturb every parameter tensor in place:
/// `param += scale * std(param) * N(0,1)`, the std taken per tensor.
fn add_weight_noise(model: &mut Model, scale: f64, seed: u64) {
    let mut rng = Rng::from_seed(seed);
    for tensor in model.weights.iter_mut().chain(model.biases.iter_mut()) {
        let std = crate::stats::std_dev(tensor);
        for v in tensor.iter_mut() {
            *v += scale * std * rng.normal();
        }
    }
}

/// Dataset whose soft-label channel holds the teacher's logits on every
/// input row.
fn distillation_dataset(teacher: &Model, data: &Dataset) -> Result<Dataset> {
    let mut soft = Vec::with_capacity(data.len());
    for x in &data.inputs {
        soft.push(nn::forward_logits(teacher, x)?);
    }
    let mut out = data.clone();
    out.soft_labels = Some(soft);
    Ok(out)
}

/// Mix of the clean dataset with a one-step signed-gradient perturbation
/// of every sample (50/50 overall). The step in feature `j` is
/// `eps_scale * std_j * sign(dL/dx_j)` against the given model.
fn adversarial_mix(model: &Model, data: &Dataset, eps_scale: f64) -> Result<Dataset> {
    let eps: Vec<f64> = datagen::feature_std(data)
        .into_iter()
        .map(|s| eps_scale * s)
        .collect();
    let mut inputs = data.inputs.clone();
    let mut labels = data.labels.clone();
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        let grad = nn::loss_input_gradient(model, x, y)?;
        let perturbed: Vec<f64> = x
            .iter()
            .zip(&grad)
            .zip(&eps)
            .map(|((xi, gi), ei)| xi + ei * gi.signum())
            .collect();
        inputs.push(perturbed);
        labels.push(y);
    }
    let mut out = Dataset::new(&data.name, inputs, labels, data.num_classes);
    out.normalization = data.normalization.clone();
    Ok(out)
}

/// Apply one performance-preserving modification to the protected model.
/// Deterministic: identical `(protected, data, spec)` produce an identical
/// output model.
pub fn apply_attack(protected: &Model, data: &Dataset, spec: &AttackSpec) -> Result<Model> {
    spec.validate()?;
    protected.validate()?;
    let train_seed = derive_seed(spec.seed, "attack-train");
    let cfg = spec.train_cfg.clone().with_seed(train_seed);
    let mut out = match spec.kind {
        AttackKind::Finetune => nn::train(protected, data, &cfg)?,
        AttackKind::Prune => prune_weights(protected, spec.sparsity.unwrap_or(0.0))?,
        AttackKind::NoiseFinetune => {
            let mut noisy = protected.clone();
            add_weight_noise(
                &mut noisy,
                spec.noise_scale,
                derive_seed(spec.seed, "noise"),
            );
            nn::train(&noisy, data, &cfg)?
        }
        AttackKind::PruneFinetune => {
            let pruned = prune_weights(protected, spec.sparsity.unwrap_or(0.0))?;
            nn::train(&pruned, data, &cfg)?
        }
        AttackKind::Distill => {
            let student_spec = spec.student_spec.as_ref().expect("validated");
            let soft_data = distillation_dataset(protected, data)?;
            let student = nn::init_model(student_spec)?;
            let kd_cfg = TrainConfig {
                loss: Loss::SoftKl {
                    temperature: spec.temperature,
                },
                ..cfg
            };
            nn::train(&student, &soft_data, &kd_cfg)?
        }
        AttackKind::PruneDistill => {
            let pruned = prune_weights(protected, spec.sparsity.unwrap_or(0.0))?;
            let student_spec = spec.student_spec.as_ref().expect("validated");
            let soft_data = distillation_dataset(&pruned, data)?;
            let student = nn::init_model(student_spec)?;
            let kd_cfg = TrainConfig {
                loss: Loss::SoftKl {
                    temperature: spec.temperature,
                },
                ..cfg
            };
            nn::train(&student, &soft_data, &kd_cfg)?
        }
        AttackKind::AdversarialTrain => {
            let mixed = adversarial_mix(protected, data, spec.adv_epsilon_scale)?;
            nn::train(protected, &mixed, &cfg)?
        }
    };
    out.tag = ModelTag::PiratedTest;
    out.lineage = spec.lineage();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolRole {
    PiratedSurrogate,
    IndependentSurrogate,
    PiratedTest,
    IndependentTest,
}

impl PoolRole {
    pub fn is_pirated(self) -> bool {
        matches!(self, PoolRole::PiratedSurrogate | PoolRole::PiratedTest)
    }

    pub fn is_surrogate(self) -> bool {
        matches!(
            self,
            PoolRole::PiratedSurrogate | PoolRole::IndependentSurrogate
        )
    }

    pub fn tag(self) -> ModelTag {
        match self {
            PoolRole::PiratedSurrogate => ModelTag::PiratedSurrogate,
            PoolRole::IndependentSurrogate => ModelTag::IndependentSurrogate,
            PoolRole::PiratedTest => ModelTag::PiratedTest,
            PoolRole::IndependentTest => ModelTag::IndependentTest,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PoolRole::PiratedSurrogate => "pirated_surrogate",
            PoolRole::IndependentSurrogate => "independent_surrogate",
            PoolRole::PiratedTest => "pirated_test",
            PoolRole::IndependentTest => "independent_test",
        }
    }
}

/// Recipe for one independently trained model: architecture plus training
/// configuration, no access to the protected model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependentSpec {
    pub spec: ModelSpec,
    pub train: TrainConfig,
}

/// Member recipes for one pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "specs")]
pub enum PoolRecipe {
    Attacks(Vec<AttackSpec>),
    Independent(Vec<IndependentSpec>),
}

/// A labeled collection of models playing one role in the protocol.
#[derive(Debug, Clone)]
pub struct ModelPool {
    pub models: Vec<Model>,
    pub role: PoolRole,
    /// The identifying seed of each member (attack seed or independent
    /// model seed), parallel to `models`.
    pub member_seeds: Vec<u64>,
    /// Closed interval covering every seed the pool consumed, used to
    /// enforce that surrogate and test pools never share seeds.
    pub seed_range: (u64, u64),
}

impl ModelPool {
    pub fn new(
        models: Vec<Model>,
        role: PoolRole,
        member_seeds: Vec<u64>,
        seed_range: (u64, u64),
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Empty(format!("{} pool", role.name())));
        }
        if member_seeds.len() != models.len() {
            return Err(Error::Shape {
                expected: format!("{} member seeds", models.len()),
                got: format!("{}", member_seeds.len()),
            });
        }
        let dim = models[0].input_dim();
        let k = models[0].num_classes();
        for m in &models {
            if m.input_dim() != dim || m.num_classes() != k {
                return Err(Error::Shape {
                    expected: format!("all pool members {dim}-d, {k} classes"),
                    got: format!("{}-d, {} classes", m.input_dim(), m.num_classes()),
                });
            }
        }
        Ok(ModelPool {
            models,
            role,
            member_seeds,
            seed_range,
        })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// Build a pool from member recipes. Pirated roles require attack recipes
/// (applied to the protected model); independent roles require
/// from-scratch recipes and never touch the protected model.
pub fn build_pool(
    protected: &Model,
    data: &Dataset,
    recipe: &PoolRecipe,
    role: PoolRole,
) -> Result<ModelPool> {
    match recipe {
        PoolRecipe::Attacks(specs) => {
            if !role.is_pirated() {
                return Err(Error::Config(format!(
                    "attack recipes cannot build an {} pool",
                    role.name()
                )));
            }
            if specs.is_empty() {
                return Err(Error::Empty("attack spec list".into()));
            }
            let mut models = Vec::with_capacity(specs.len());
            let mut seeds = Vec::with_capacity(specs.len());
            for spec in specs {
                let mut m = apply_attack(protected, data, spec)?;
                m.tag = role.tag();
                models.push(m);
                seeds.push(spec.seed);
            }
            let range = seed_interval(&seeds);
            ModelPool::new(models, role, seeds, range)
        }
        PoolRecipe::Independent(specs) => {
            if role.is_pirated() {
                return Err(Error::Config(format!(
                    "independent recipes cannot build a {} pool",
                    role.name()
                )));
            }
            if specs.is_empty() {
                return Err(Error::Empty("independent spec list".into()));
            }
            let mut models = Vec::with_capacity(specs.len());
            let mut member_seeds = Vec::with_capacity(specs.len());
            let mut all_seeds = Vec::with_capacity(2 * specs.len());
            for IndependentSpec { spec, train } in specs {
                let init = nn::init_model(spec)?;
                let mut m = nn::train(&init, data, train)?;
                m.tag = role.tag();
                m.lineage = format!(
                    "independent seed={} arch={:?} train_seed={}",
                    spec.seed, spec.layer_sizes, train.seed
                );
                models.push(m);
                member_seeds.push(spec.seed);
                all_seeds.push(spec.seed);
                all_seeds.push(train.seed);
            }
            let range = seed_interval(&all_seeds);
            ModelPool::new(models, role, member_seeds, range)
        }
    }
}

fn seed_interval(seeds: &[u64]) -> (u64, u64) {
    let lo = seeds.iter().copied().min().unwrap_or(0);
    let hi = seeds.iter().copied().max().unwrap_or(0);
    (lo, hi)
}

/// Error if the two pools' seed intervals intersect.
pub fn ensure_disjoint_seed_ranges(a: &ModelPool, b: &ModelPool) -> Result<()> {
    let (a_lo, a_hi) = a.seed_range;
    let (b_lo, b_hi) = b.seed_range;
    if a_lo <= b_hi && b_lo <= a_hi {
        return Err(Error::Config(format!(
            "seed ranges overlap: {} uses [{a_lo}, {a_hi}], {} uses [{b_lo}, {b_hi}]",
            a.role.name(),
            b.role.name()
        )));
    }
    Ok(())
}

/// Check every surrogate pool against every test pool.
pub fn check_surrogate_test_disjoint(pools: &[&ModelPool]) -> Result<()> {
    for a in pools.iter().filter(|p| p.role.is_surrogate()) {
        for b in pools.iter().filter(|p| !p.role.is_surrogate()) {
            ensure_disjoint_seed_ranges(a, b)?;
        }
    }
    Ok(())
}

/// Soft performance-preservation check: report (never fail) any pool
/// member whose held-out accuracy falls more than `tolerance` below the
/// protected model's.
pub fn performance_warnings(
    protected: &Model,
    pool: &ModelPool,
    holdout: &Dataset,
    tolerance: f64,
) -> Result<Vec<String>> {
    let base = nn::accuracy(protected, holdout)?;
    let mut warnings = Vec::new();
    for m in &pool.models {
        let acc = nn::accuracy(m, holdout)?;
        if acc + tolerance < base {
            warnings.push(format!(
                "{}: accuracy {acc:.3} is more than {tolerance:.2} below protected {base:.3}",
                m.lineage
            ));
        }
    }
    Ok(warnings)
}
