//! Pipeline orchestration for the `modelprint` binary: configuration,
//! stage seeding, artifact layout, and the five pipeline commands.
//!
//! A run is driven by one [`RunConfig`] plus a global seed. The seed fans
//! out to per-stage seeds through a documented derivation
//! (`derive_seed(global, stage_name)`), so each stage is individually
//! reproducible; pool members carry explicit seeds from the config so
//! that surrogate and test seed ranges can be audited for disjointness.
//!
//! Artifact layout under the output directory:
//!
//! ```text
//! out/
//!   train.csv, heldout.csv, dataset.meta.json
//!   protected.json
//!   pools/{pirated_surrogate,independent_surrogate,pirated_test,independent_test}/
//!     manifest.json, m000.json, ...
//!   fingerprints.json
//!   report.json
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use modelprint::datagen::{self, Dataset};
use modelprint::error::{Error, Result};
use modelprint::fingerprint::{generate, GenConfig};
use modelprint::modelops::{
    self, build_pool, AttackKind, AttackSpec, IndependentSpec, ModelPool, PoolRecipe, PoolRole,
};
use modelprint::nn::{self, Activation, Loss, Model, ModelSpec, ModelTag, TrainConfig};
use modelprint::persist;
use modelprint::rng::derive_seed;
use modelprint::verify;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

fn default_config_version() -> u32 {
    CONFIG_FORMAT_VERSION
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Blobs {
        n_per_class: usize,
        centers: Vec<Vec<f64>>,
        stddev: f64,
    },
    TwoMoons {
        n_per_class: usize,
        noise_stddev: f64,
    },
    Csv {
        path: PathBuf,
        has_header: bool,
    },
}

/// Training settings without a seed; the pipeline assigns stage seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: Loss,
}

impl TrainSettings {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            loss: self.loss,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtectedConfig {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub train: TrainSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_config_version")]
    pub format_version: u32,
    pub seed: u64,
    pub theta: f64,
    pub dataset: DatasetConfig,
    pub standardize: bool,
    pub split_fraction: f64,
    pub protected: ProtectedConfig,
    pub surrogate_pirated: Vec<AttackSpec>,
    pub surrogate_independent: Vec<IndependentSpec>,
    pub test_pirated: Vec<AttackSpec>,
    pub test_independent: Vec<IndependentSpec>,
    pub gen: GenConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::Format {
                found: self.format_version,
                expected: CONFIG_FORMAT_VERSION,
            });
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!(
                "theta must lie in [0,1], got {}",
                self.theta
            )));
        }
        if !(0.0 < self.split_fraction && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction must lie in (0,1), got {}",
                self.split_fraction
            )));
        }
        self.gen.validate()?;
        for spec in self.surrogate_pirated.iter().chain(&self.test_pirated) {
            spec.validate()?;
        }
        for IndependentSpec { spec, train } in self
            .surrogate_independent
            .iter()
            .chain(&self.test_independent)
        {
            spec.validate()?;
            train.validate()?;
        }
        self.check_seed_ranges()
    }

    /// Surrogate member seeds and test member seeds must occupy disjoint
    /// intervals.
    fn check_seed_ranges(&self) -> Result<()> {
        let collect = |attacks: &[AttackSpec], inds: &[IndependentSpec]| -> Vec<u64> {
            let mut seeds: Vec<u64> = attacks.iter().map(|a| a.seed).collect();
            for ind in inds {
                seeds.push(ind.spec.seed);
                seeds.push(ind.train.seed);
            }
            seeds
        };
        let surrogate = collect(&self.surrogate_pirated, &self.surrogate_independent);
        let test = collect(&self.test_pirated, &self.test_independent);
        let bounds = |seeds: &[u64]| {
            (
                seeds.iter().copied().min().unwrap_or(0),
                seeds.iter().copied().max().unwrap_or(0),
            )
        };
        let (s_lo, s_hi) = bounds(&surrogate);
        let (t_lo, t_hi) = bounds(&test);
        if !surrogate.is_empty() && !test.is_empty() && s_lo <= t_hi && t_lo <= s_hi {
            return Err(Error::Config(format!(
                "surrogate seed range [{s_lo}, {s_hi}] overlaps test seed range [{t_lo}, {t_hi}]"
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

/// The built-in desk-scale benchmark: three Gaussian classes in 40
/// dimensions. Dimensions 0-1 carry the main class separation; the rest
/// carry weak class-dependent offsets that an unregularized protected
/// model amplifies, giving its decision boundary short crossing
/// directions that independently trained models do not share.
pub fn desk_config() -> RunConfig {
    let dim = 40;
    let mut centers = vec![vec![0.0; dim]; 3];
    centers[0][0] = 4.5;
    centers[1][0] = -2.25;
    centers[1][1] = 3.9;
    centers[2][0] = -2.25;
    centers[2][1] = -3.9;
    for (class, center) in centers.iter_mut().enumerate() {
        for (j, v) in center.iter_mut().enumerate().skip(2) {
            let sign = match (class * 31 + j * 17) % 3 {
                0 => 1.0,
                1 => -1.0,
                _ => {
                    if (class + j) % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            *v = sign;
        }
    }

    let settings = |epochs: usize, lr: f64, wd: f64| TrainSettings {
        learning_rate: lr,
        momentum: 0.9,
        weight_decay: wd,
        epochs,
        batch_size: 32,
        loss: Loss::CrossEntropy,
    };
    let attack =
        |kind: AttackKind, seed: u64, sparsity: Option<f64>, student: Option<Vec<usize>>| {
            let (epochs, lr) = match kind {
                AttackKind::Distill | AttackKind::PruneDistill => (400, 0.05),
                AttackKind::Prune => (0, 0.05),
                _ => (30, 0.02),
            };
            AttackSpec {
                kind,
                sparsity,
                noise_scale: 0.09,
                student_spec: student.map(|arch| ModelSpec::new(arch, Activation::Tanh, seed)),
                temperature: 1.0,
                adv_epsilon_scale: 0.1,
                train_cfg: settings(epochs, lr, 0.0).to_train_config(0),
                seed,
            }
        };
    let independent =
        |arch: Vec<usize>, epochs: usize, lr: f64, wd: f64, seed: u64| IndependentSpec {
            spec: ModelSpec::new(arch, Activation::Tanh, seed),
            train: settings(epochs, lr, wd).to_train_config(seed),
        };

    RunConfig {
        format_version: CONFIG_FORMAT_VERSION,
        seed: 7,
        theta: 0.5,
        dataset: DatasetConfig::Blobs {
            n_per_class: 100,
            centers,
            stddev: 1.0,
        },
        standardize: false,
        split_fraction: 0.8,
        protected: ProtectedConfig {
            layer_sizes: vec![dim, 48, 48, 3],
            activation: Activation::Tanh,
            train: settings(800, 0.1, 0.0),
        },
        surrogate_pirated: vec![
            attack(AttackKind::Finetune, 1000, None, None),
            attack(AttackKind::Finetune, 1001, None, None),
            attack(AttackKind::Finetune, 1002, None, None),
            attack(AttackKind::NoiseFinetune, 1003, None, None),
            attack(AttackKind::NoiseFinetune, 1004, None, None),
            attack(AttackKind::NoiseFinetune, 1005, None, None),
        ],
        // Diversity matters twice over: the mid-pool members set the
        // default (median) quantile estimates, while the weakly trained
        // and unregularized members pin the conservative tails.
        surrogate_independent: vec![
            independent(vec![dim, 3], 100, 0.1, 3e-2, 1100),
            independent(vec![dim, 3], 100, 0.1, 3e-2, 1101),
            independent(vec![dim, 12, 3], 12, 0.05, 5e-3, 1102),
            independent(vec![dim, 12, 3], 120, 0.05, 5e-3, 1103),
            independent(vec![dim, 24, 24, 3], 800, 0.1, 0.0, 1104),
            independent(vec![dim, 3], 1500, 0.2, 0.0, 1105),
        ],
        test_pirated: vec![
            attack(AttackKind::Finetune, 2000, None, None),
            attack(AttackKind::Finetune, 2001, None, None),
            attack(AttackKind::Prune, 2002, Some(0.3), None),
            attack(AttackKind::Prune, 2003, Some(0.6), None),
            attack(AttackKind::NoiseFinetune, 2004, None, None),
            attack(AttackKind::NoiseFinetune, 2005, None, None),
            attack(AttackKind::Distill, 2006, None, Some(vec![dim, 48, 48, 3])),
            attack(AttackKind::PruneFinetune, 2007, Some(0.3), None),
            attack(AttackKind::PruneFinetune, 2008, Some(0.5), None),
            attack(AttackKind::AdversarialTrain, 2009, None, None),
            attack(AttackKind::AdversarialTrain, 2010, None, None),
            attack(AttackKind::Finetune, 2011, None, None),
        ],
        test_independent: vec![
            independent(vec![dim, 3], 100, 0.1, 3e-2, 2100),
            independent(vec![dim, 3], 120, 0.1, 3e-2, 2101),
            independent(vec![dim, 3], 150, 0.1, 3e-2, 2102),
            independent(vec![dim, 12, 3], 120, 0.05, 5e-3, 2103),
            independent(vec![dim, 12, 3], 120, 0.05, 5e-3, 2104),
            independent(vec![dim, 12, 3], 150, 0.05, 5e-3, 2105),
            independent(vec![dim, 12, 12, 3], 300, 0.05, 1e-3, 2106),
            independent(vec![dim, 12, 12, 3], 300, 0.05, 1e-3, 2107),
            independent(vec![dim, 12, 12, 3], 300, 0.05, 1e-3, 2108),
            independent(vec![dim, 24, 24, 3], 500, 0.1, 0.0, 2109),
            independent(vec![dim, 24, 24, 3], 500, 0.1, 0.0, 2110),
            independent(vec![dim, 24, 24, 3], 500, 0.1, 0.0, 2111),
        ],
        gen: GenConfig {
            m_anchor: 8.0,
            max_fingerprints: 40,
            ..GenConfig::default()
        },
    }
}

/// Output file locations for one run.
pub struct OutPaths {
    pub dir: PathBuf,
}

impl OutPaths {
    pub fn new(dir: &Path) -> Self {
        OutPaths {
            dir: dir.to_path_buf(),
        }
    }

    pub fn train_csv(&self) -> PathBuf {
        self.dir.join("train.csv")
    }
    pub fn heldout_csv(&self) -> PathBuf {
        self.dir.join("heldout.csv")
    }
    pub fn dataset_meta(&self) -> PathBuf {
        self.dir.join("dataset.meta.json")
    }
    pub fn protected(&self) -> PathBuf {
        self.dir.join("protected.json")
    }
    pub fn pool_dir(&self, role: PoolRole) -> PathBuf {
        self.dir.join("pools").join(role.name())
    }
    pub fn pool_manifest(&self, role: PoolRole) -> PathBuf {
        self.pool_dir(role).join("manifest.json")
    }
    pub fn fingerprints(&self) -> PathBuf {
        self.dir.join("fingerprints.json")
    }
    pub fn report(&self) -> PathBuf {
        self.dir.join("report.json")
    }
}

/// Deterministically rebuild the train/heldout datasets for a config.
/// Every stage calls this rather than reading back the exported CSVs, so
/// the artifacts on disk are for inspection only.
pub fn prepare_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let data_seed = derive_seed(cfg.seed, "dataset");
    let raw = match &cfg.dataset {
        DatasetConfig::Blobs {
            n_per_class,
            centers,
            stddev,
        } => datagen::gen_blobs(*n_per_class, centers, *stddev, data_seed)?,
        DatasetConfig::TwoMoons {
            n_per_class,
            noise_stddev,
        } => datagen::gen_two_moons(*n_per_class, *noise_stddev, data_seed)?,
        DatasetConfig::Csv { path, has_header } => datagen::load_csv(path, *has_header)?,
    };
    let data = if cfg.standardize {
        datagen::standardize(&raw)?.0
    } else {
        raw
    };
    datagen::split(&data, cfg.split_fraction, derive_seed(cfg.seed, "split"))
}

macro_rules! say {
    ($quiet:expr, $($arg:tt)*) => {
        if !$quiet {
            println!($($arg)*);
        }
    };
}

fn write_text(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Train and persist the protected model; prints held-out accuracy.
pub fn cmd_train(cfg: &RunConfig, out: &OutPaths, quiet: bool) -> Result<()> {
    cfg.validate()?;
    let (train_data, heldout) = prepare_data(cfg)?;
    std::fs::create_dir_all(&out.dir).map_err(|e| Error::Io {
        path: out.dir.display().to_string(),
        source: e,
    })?;
    datagen::save_csv(&train_data, &out.train_csv())?;
    datagen::save_csv(&heldout, &out.heldout_csv())?;
    persist::save_dataset_meta(
        &persist::DatasetMeta {
            format_version: persist::FORMAT_VERSION,
            name: train_data.name.clone(),
            dim: train_data.dim(),
            num_classes: train_data.num_classes,
            normalization: train_data.normalization.clone(),
        },
        &out.dataset_meta(),
    )?;

    let spec = ModelSpec::new(
        cfg.protected.layer_sizes.clone(),
        cfg.protected.activation,
        derive_seed(cfg.seed, "protected-init"),
    );
    let train_cfg = cfg
        .protected
        .train
        .to_train_config(derive_seed(cfg.seed, "protected-train"));
    let mut model = nn::train(&nn::init_model(&spec)?, &train_data, &train_cfg)?;
    model.tag = ModelTag::Protected;
    model.lineage = format!(
        "protected arch={:?} data={} seed={}",
        spec.layer_sizes, train_data.name, cfg.seed
    );
    persist::save_model(&model, &out.protected())?;

    let train_acc = nn::accuracy(&model, &train_data)?;
    let heldout_acc = nn::accuracy(&model, &heldout)?;
    say!(
        quiet,
        "protected model: train accuracy {train_acc:.4}, held-out accuracy {heldout_acc:.4}"
    );
    say!(quiet, "wrote {}", out.protected().display());
    Ok(())
}

/// Build all four pools, enforce surrogate/test seed disjointness, and
/// persist the manifests. Prints per-pool sizes and soft accuracy
/// warnings.
pub fn cmd_pool(cfg: &RunConfig, out: &OutPaths, quiet: bool) -> Result<()> {
    cfg.validate()?;
    let (train_data, heldout) = prepare_data(cfg)?;
    let protected = persist::load_model(&out.protected())?;

    let recipes: Vec<(PoolRole, PoolRecipe)> = vec![
        (
            PoolRole::PiratedSurrogate,
            PoolRecipe::Attacks(cfg.surrogate_pirated.clone()),
        ),
        (
            PoolRole::IndependentSurrogate,
            PoolRecipe::Independent(cfg.surrogate_independent.clone()),
        ),
        (
            PoolRole::PiratedTest,
            PoolRecipe::Attacks(cfg.test_pirated.clone()),
        ),
        (
            PoolRole::IndependentTest,
            PoolRecipe::Independent(cfg.test_independent.clone()),
        ),
    ];
    let mut built: Vec<ModelPool> = Vec::new();
    for (role, recipe) in &recipes {
        let pool = build_pool(&protected, &train_data, recipe, *role)?;
        say!(
            quiet,
            "{}: {} models (seeds {}..={})",
            role.name(),
            pool.len(),
            pool.seed_range.0,
            pool.seed_range.1
        );
        built.push(pool);
    }
    let refs: Vec<&ModelPool> = built.iter().collect();
    modelops::check_surrogate_test_disjoint(&refs)?;

    for pool in &built {
        if pool.role.is_pirated() {
            for warning in modelops::performance_warnings(&protected, pool, &heldout, 0.10)? {
                say!(quiet, "warning: {warning}");
            }
        }
        persist::save_pool(pool, &out.pool_dir(pool.role))?;
    }
    say!(
        quiet,
        "wrote pool manifests under {}",
        out.dir.join("pools").display()
    );
    Ok(())
}

/// Generate the fingerprint set from the protected model and the two
/// surrogate pools.
pub fn cmd_fingerprint(cfg: &RunConfig, out: &OutPaths, quiet: bool) -> Result<()> {
    cfg.validate()?;
    let (train_data, _) = prepare_data(cfg)?;
    let protected = persist::load_model(&out.protected())?;
    let pirated = persist::load_pool(&out.pool_manifest(PoolRole::PiratedSurrogate))?;
    let independent = persist::load_pool(&out.pool_manifest(PoolRole::IndependentSurrogate))?;

    let fps = generate(&protected, &train_data, &pirated, &independent, &cfg.gen)?;
    persist::save_fingerprints(&fps, &out.fingerprints())?;
    say!(
        quiet,
        "fingerprints: {} emitted, {} anchors discarded (boundary {}, interval void {}, no feasible tau {})",
        fps.len(),
        fps.discarded_anchor_count,
        fps.discards.boundary_failure,
        fps.discards.interval_void,
        fps.discards.no_feasible_tau
    );
    if fps.is_empty() {
        say!(
            quiet,
            "warning: fingerprint set is empty; relax the quantiles or lower m_anchor"
        );
    }
    say!(quiet, "wrote {}", out.fingerprints().display());
    Ok(())
}

/// Verify one suspect model file against a fingerprint-set file.
pub fn cmd_verify(
    fingerprints: &Path,
    suspect: &Path,
    theta: f64,
    report_out: Option<&Path>,
    quiet: bool,
) -> Result<()> {
    let fps = persist::load_fingerprints(fingerprints)?;
    let model: Model = persist::load_model(suspect)?;
    let report = verify::matching_rate(&model, &suspect.display().to_string(), &fps)?;
    let report = verify::decide(report, theta)?;
    say!(
        quiet,
        "suspect {}: matching rate {:.4} over {} fingerprints, theta {theta} -> {:?}",
        report.suspect_ref,
        report.matching_rate,
        report.per_fingerprint_matches.len(),
        report.decision.expect("decided")
    );
    if let Some(path) = report_out {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        write_text(path, text)?;
        say!(quiet, "wrote {}", path.display());
    }
    Ok(())
}

/// Score the test pools against the fingerprint set and write the
/// benchmark report.
pub fn cmd_evaluate(cfg: &RunConfig, out: &OutPaths, quiet: bool) -> Result<()> {
    cfg.validate()?;
    let fps = persist::load_fingerprints(&out.fingerprints())?;
    let pirated = persist::load_pool(&out.pool_manifest(PoolRole::PiratedTest))?;
    let independent = persist::load_pool(&out.pool_manifest(PoolRole::IndependentTest))?;
    let result = verify::evaluate(&fps, &pirated, &independent, cfg.theta)?;
    persist::save_report(&result, &out.report())?;
    print_report(&result, quiet);
    say!(quiet, "wrote {}", out.report().display());
    Ok(())
}

/// Print a saved report; optionally export the ROC points as
/// tab-separated text for external plotting.
pub fn cmd_report(report_path: &Path, roc_out: Option<&Path>, quiet: bool) -> Result<()> {
    let result = persist::load_report(report_path)?;
    print_report(&result, quiet);
    if let Some(path) = roc_out {
        let mut text = String::from("fpr\ttpr\n");
        for (fpr, tpr) in &result.roc_points {
            text.push_str(&format!("{fpr}\t{tpr}\n"));
        }
        write_text(path, text)?;
        say!(quiet, "wrote {}", path.display());
    }
    Ok(())
}

fn print_report(result: &verify::BenchmarkResult, quiet: bool) {
    if quiet {
        return;
    }
    println!(
        "benchmark: {} pirated vs {} independent, theta {}",
        result.pirated_scores.len(),
        result.independent_scores.len(),
        result.theta
    );
    println!("AUC {:.4}", result.auc);
    println!("per-attack breakdown:");
    for (attack, entry) in &result.per_attack {
        println!("  {attack:<18} n={:<3} auc={:.4}", entry.count, entry.auc);
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
    println!(
        "matching rates: pirated mean {:.3}, independent mean {:.3}",
        mean(&result.pirated_scores),
        mean(&result.independent_scores)
    );
}

/// Map an error to the process exit code: 2 for configuration/input
/// problems, 3 for runtime/numeric failures.
pub fn exit_code_for(err: &Error) -> u8 {
    if err.is_input_error() {
        2
    } else {
        3
    }
}
