//! Line-oriented experiment configs: `[section]` headers over `key = value`
//! lines, `#` comments, strict parsing. Unknown keys, unknown sections, and
//! missing required keys all fail before any computation starts.

use std::cell::Cell;
use std::collections::BTreeSet;
use std::path::PathBuf;

use super::HarnessError;
use crate::optimizers::{BaseOptimizer, OptimizerConfig, Schedule};
use crate::rotations::{LayerKind, LayerSpec, RotationSpec, Scope};
use crate::testbeds::{
    make_mlp, make_quadratic, Activation, Basis, MlpSpec, MlpTask, Problem, QuadraticSpec, Spectrum,
};

#[derive(Debug)]
struct RawEntry {
    key: String,
    value: String,
    line: usize,
    used: Cell<bool>,
}

#[derive(Debug)]
struct RawSection {
    name: String,
    line: usize,
    entries: Vec<RawEntry>,
}

fn parse_sections(text: &str) -> Result<Vec<RawSection>, HarnessError> {
    let mut sections: Vec<RawSection> = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return Err(HarnessError::Parse {
                    line,
                    column: trimmed.len(),
                    message: "section header must end with ']'".into(),
                });
            };
            sections.push(RawSection {
                name: name.trim().to_string(),
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let Some(eq) = trimmed.find('=') else {
            return Err(HarnessError::Parse {
                line,
                column: 1,
                message: format!("expected 'key = value', got '{trimmed}'"),
            });
        };
        let key = trimmed[..eq].trim().to_string();
        let value = trimmed[eq + 1..].trim().to_string();
        if key.is_empty() {
            return Err(HarnessError::Parse {
                line,
                column: eq + 1,
                message: "empty key".into(),
            });
        }
        let Some(section) = sections.last_mut() else {
            return Err(HarnessError::Parse {
                line,
                column: 1,
                message: format!("key '{key}' appears before any [section]"),
            });
        };
        if section.entries.iter().any(|e| e.key == key) {
            return Err(HarnessError::Parse {
                line,
                column: 1,
                message: format!("duplicate key '{key}' in [{}]", section.name),
            });
        }
        section.entries.push(RawEntry {
            key,
            value,
            line,
            used: Cell::new(false),
        });
    }
    Ok(sections)
}

struct SectionReader<'a> {
    section: &'a RawSection,
}

impl<'a> SectionReader<'a> {
    fn get(&self, key: &str) -> Option<&'a str> {
        self.section.entries.iter().find(|e| e.key == key).map(|e| {
            e.used.set(true);
            e.value.as_str()
        })
    }

    fn require(&self, key: &str) -> Result<&'a str, HarnessError> {
        self.get(key).ok_or_else(|| HarnessError::Validation {
            key: format!("{}.{}", self.section.name, key),
            message: "required key is missing".into(),
        })
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, HarnessError> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| self.bad(key, raw)),
        }
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, HarnessError> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn parse_required<T: std::str::FromStr>(&self, key: &str) -> Result<T, HarnessError> {
        let raw = self.require(key)?;
        raw.parse::<T>().map_err(|_| self.bad(key, raw))
    }

    fn bad(&self, key: &str, raw: &str) -> HarnessError {
        let line = self
            .section
            .entries
            .iter()
            .find(|e| e.key == key)
            .map_or(self.section.line, |e| e.line);
        HarnessError::Parse {
            line,
            column: 1,
            message: format!("cannot parse '{raw}' for key '{}.{key}'", self.section.name),
        }
    }

    fn finish(&self) -> Result<(), HarnessError> {
        for entry in &self.section.entries {
            if !entry.used.get() {
                return Err(HarnessError::Parse {
                    line: entry.line,
                    column: 1,
                    message: format!(
                        "unknown key '{}' in section [{}]",
                        entry.key, self.section.name
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Problem half of a config.
#[derive(Debug, Clone)]
pub enum ProblemConfig {
    Quadratic(QuadraticSpec),
    Mlp(MlpSpec),
}

impl ProblemConfig {
    pub fn build(&self) -> Result<Box<dyn Problem>, HarnessError> {
        match self {
            ProblemConfig::Quadratic(spec) => Ok(Box::new(make_quadratic(spec)?)),
            ProblemConfig::Mlp(spec) => Ok(Box::new(make_mlp(spec)?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Train,
    Trajectories,
}

#[derive(Debug, Clone)]
pub struct RunSection {
    pub steps: u64,
    pub seeds: Vec<u64>,
    pub snapshot_every: u64,
    pub out_dir: PathBuf,
    /// Rotation scopes to sweep; defaults to the `[rotation]` scope alone.
    pub variants: Vec<Scope>,
    pub mode: RunMode,
}

#[derive(Debug, Clone)]
pub struct TrajectoriesSection {
    pub angle: f64,
    pub eigenvalues: [f64; 2],
    pub start: [f64; 2],
    pub sgd_alpha: f64,
    pub sgd_momentum: f64,
}

#[derive(Debug, Clone)]
pub struct DiagnoseSection {
    pub trials: usize,
    pub rows: usize,
    pub batches_per_row: usize,
    pub hist_bins: usize,
    pub seed: u64,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        Self {
            trials: 1000,
            rows: 16,
            batches_per_row: 32,
            hist_bins: 24,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquivarianceRotation {
    /// A dense Haar-orthogonal sample drawn from `rotation_seed`.
    Haar,
    Identity,
}

#[derive(Debug, Clone)]
pub struct EquivarianceSection {
    pub alg: BaseOptimizer,
    pub steps: u64,
    pub rotation_seed: u64,
    pub rotation: EquivarianceRotation,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub optimizer: OptimizerConfig,
    pub base: BaseOptimizer,
    pub reproject_moments: bool,
    pub rotation: RotationSpec,
    pub run: RunSection,
    pub trajectories: Option<TrajectoriesSection>,
    pub diagnose: DiagnoseSection,
    pub equivariance: Option<EquivarianceSection>,
    /// Original text, embedded in manifests so a run can be replayed.
    pub text: String,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let sections = parse_sections(text)?;
        let known = [
            "problem",
            "optimizer",
            "rotation",
            "run",
            "trajectories",
            "diagnose",
            "equivariance",
        ];
        for section in &sections {
            if !known.contains(&section.name.as_str()) {
                return Err(HarnessError::Parse {
                    line: section.line,
                    column: 1,
                    message: format!("unknown section [{}]", section.name),
                });
            }
        }
        let reader = |name: &str| -> Option<SectionReader<'_>> {
            sections
                .iter()
                .find(|s| s.name == name)
                .map(|section| SectionReader { section })
        };
        let required = |name: &'static str| -> Result<SectionReader<'_>, HarnessError> {
            reader(name).ok_or(HarnessError::MissingSection(name))
        };

        let problem = parse_problem(&required("problem")?)?;
        let (optimizer, base, reproject_moments) = match reader("optimizer") {
            Some(r) => parse_optimizer(&r)?,
            None => (OptimizerConfig::default(), BaseOptimizer::AdamW, false),
        };
        let rotation = match reader("rotation") {
            Some(r) => parse_rotation(&r)?,
            None => RotationSpec::default(),
        };
        let run = parse_run(&required("run")?, rotation.scope)?;
        let trajectories = match reader("trajectories") {
            Some(r) => Some(parse_trajectories(&r)?),
            None => None,
        };
        if run.mode == RunMode::Trajectories && trajectories.is_none() {
            return Err(HarnessError::MissingSection("trajectories"));
        }
        let diagnose = match reader("diagnose") {
            Some(r) => parse_diagnose(&r)?,
            None => DiagnoseSection::default(),
        };
        let equivariance = match reader("equivariance") {
            Some(r) => Some(parse_equivariance(&r)?),
            None => None,
        };

        Ok(Self {
            problem,
            optimizer,
            base,
            reproject_moments,
            rotation,
            run,
            trajectories,
            diagnose,
            equivariance,
            text: text.to_string(),
        })
    }
}

pub(crate) fn parse_layer_list(raw: &str) -> Result<Vec<LayerSpec>, String> {
    // name:matrix:RxC[:transposed] or name:vector:N, comma separated
    let mut specs = Vec::new();
    for part in raw.split(',') {
        let fields: Vec<&str> = part.trim().split(':').collect();
        match fields.as_slice() {
            [name, "vector", len] => {
                let len: usize = len.parse().map_err(|_| format!("bad length '{len}'"))?;
                specs.push(LayerSpec {
                    name: name.to_string(),
                    kind: LayerKind::Vector { len },
                    transposed: false,
                });
            }
            [name, "matrix", shape] | [name, "matrix", shape, "transposed"] => {
                let (rows, cols) = shape
                    .split_once('x')
                    .ok_or_else(|| format!("bad shape '{shape}', expected RxC"))?;
                let out_dim: usize = rows.parse().map_err(|_| format!("bad rows '{rows}'"))?;
                let in_dim: usize = cols.parse().map_err(|_| format!("bad cols '{cols}'"))?;
                specs.push(LayerSpec {
                    name: name.to_string(),
                    kind: LayerKind::Matrix { out_dim, in_dim },
                    transposed: fields.len() == 4,
                });
            }
            _ => return Err(format!("bad layer '{part}'")),
        }
    }
    Ok(specs)
}

fn parse_problem(r: &SectionReader<'_>) -> Result<ProblemConfig, HarnessError> {
    let kind = r.require("kind")?;
    let config = match kind {
        "quadratic" => {
            let dim: usize = r.parse_required("dim")?;
            let spectrum = match r.get("spectrum").unwrap_or("log-uniform") {
                "log-uniform" => Spectrum::LogUniform {
                    min: r.parse_or("eig_min", 1e-2)?,
                    max: r.parse_or("eig_max", 1e2)?,
                    seed: r.parse_or("eig_seed", 0u64)?,
                },
                "log-uniform-sorted" => Spectrum::LogUniformSorted {
                    min: r.parse_or("eig_min", 1e-2)?,
                    max: r.parse_or("eig_max", 1e2)?,
                    seed: r.parse_or("eig_seed", 0u64)?,
                },
                "explicit" => {
                    let raw = r.require("eigenvalues")?;
                    let values: Result<Vec<f64>, _> =
                        raw.split(',').map(|v| v.trim().parse::<f64>()).collect();
                    Spectrum::Explicit(values.map_err(|_| r.bad("eigenvalues", raw))?)
                }
                other => {
                    return Err(HarnessError::Validation {
                        key: "problem.spectrum".into(),
                        message: format!("unknown spectrum '{other}'"),
                    })
                }
            };
            let basis = match r.get("basis").unwrap_or("axis-aligned") {
                "axis-aligned" => Basis::AxisAligned,
                other => match other.strip_prefix("rotated:") {
                    Some(seed) => Basis::RotatedBy {
                        seed: seed.parse().map_err(|_| r.bad("basis", other))?,
                    },
                    None => {
                        return Err(HarnessError::Validation {
                            key: "problem.basis".into(),
                            message: format!(
                                "unknown basis '{other}' (axis-aligned or rotated:<seed>)"
                            ),
                        })
                    }
                },
            };
            let layers = match r.get("layers") {
                Some(raw) => {
                    Some(
                        parse_layer_list(raw).map_err(|message| HarnessError::Validation {
                            key: "problem.layers".into(),
                            message,
                        })?,
                    )
                }
                None => None,
            };
            ProblemConfig::Quadratic(QuadraticSpec {
                dim,
                spectrum,
                basis,
                minimizer: None,
                noise: r.parse_or("noise", 0.0)?,
                layers,
                init_seed: r.parse_or("init_seed", 0u64)?,
                init_scale: r.parse_or("init_scale", 1.0)?,
            })
        }
        "mlp" => {
            let activation = match r.get("activation").unwrap_or("tanh") {
                "tanh" => Activation::Tanh,
                "relu" => Activation::Relu,
                other => {
                    return Err(HarnessError::Validation {
                        key: "problem.activation".into(),
                        message: format!("unknown activation '{other}'"),
                    })
                }
            };
            let task = match r.get("task").unwrap_or("regression") {
                "regression" => MlpTask::Regression,
                "classification" => MlpTask::Classification,
                other => {
                    return Err(HarnessError::Validation {
                        key: "problem.task".into(),
                        message: format!("unknown task '{other}'"),
                    })
                }
            };
            ProblemConfig::Mlp(MlpSpec {
                in_dim: r.parse_required("in_dim")?,
                hidden_dim: r.parse_required("hidden_dim")?,
                out_dim: r.parse_required("out_dim")?,
                activation,
                task,
                dataset_seed: r.parse_or("dataset_seed", 1u64)?,
                dataset_size: r.parse_or("dataset_size", 64usize)?,
                batch_size: r.parse_or("batch_size", 8usize)?,
                init_seed: r.parse_or("init_seed", 2u64)?,
                init_scale: r.parse_or("init_scale", 1.0)?,
                feature_density: r.parse_or("feature_density", 0.4)?,
            })
        }
        other => {
            return Err(HarnessError::Validation {
                key: "problem.kind".into(),
                message: format!("unknown problem kind '{other}'"),
            })
        }
    };
    r.finish()?;
    Ok(config)
}

fn parse_optimizer(
    r: &SectionReader<'_>,
) -> Result<(OptimizerConfig, BaseOptimizer, bool), HarnessError> {
    let base: BaseOptimizer = match r.get("base") {
        Some(raw) => raw.parse().map_err(|_| r.bad("base", raw))?,
        None => BaseOptimizer::AdamW,
    };
    let schedule = match r.get("schedule").unwrap_or("constant") {
        "constant" => Schedule::Constant,
        other => match other.strip_prefix("cosine:") {
            Some(rest) => {
                let (warmup, min_alpha) = rest
                    .split_once(':')
                    .ok_or_else(|| r.bad("schedule", other))?;
                Schedule::Cosine {
                    warmup: warmup.parse().map_err(|_| r.bad("schedule", other))?,
                    min_alpha: min_alpha.parse().map_err(|_| r.bad("schedule", other))?,
                }
            }
            None => {
                return Err(HarnessError::Validation {
                    key: "optimizer.schedule".into(),
                    message: format!(
                        "unknown schedule '{other}' (constant or cosine:<warmup>:<min_alpha>)"
                    ),
                })
            }
        },
    };
    let cfg = OptimizerConfig {
        alpha: r.parse_or("alpha", 1e-3)?,
        beta1: r.parse_or("beta1", 0.9)?,
        beta2: r.parse_or("beta2", 0.999)?,
        epsilon: r.parse_or("epsilon", 1e-9)?,
        lambda: r.parse_or("lambda", 0.0)?,
        momentum: r.parse_or("momentum", 0.0)?,
        clip_norm: r.parse("clip_norm")?,
        schedule,
    };
    cfg.validate().map_err(|e| HarnessError::Validation {
        key: "optimizer".into(),
        message: e.to_string(),
    })?;
    let reproject = r.parse_or("reproject_moments", false)?;
    r.finish()?;
    Ok((cfg, base, reproject))
}

fn parse_rotation(r: &SectionReader<'_>) -> Result<RotationSpec, HarnessError> {
    let scope: Scope = match r.get("scope") {
        Some(raw) => raw.parse().map_err(|_| r.bad("scope", raw))?,
        None => Scope::None,
    };
    let layer_mask = r.get("layer_mask").map(|raw| {
        raw.split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect::<BTreeSet<String>>()
    });
    let spec = RotationSpec {
        scope,
        block_dim: r.parse_or("block_dim", 8usize)?,
        seed: r.parse_or("seed", 0u64)?,
        shared_blocks: r.parse_or("shared_blocks", true)?,
        refresh_interval: r.parse_or("refresh_interval", 200u64)?,
        layer_mask,
        omit_permutation_undo: r.parse_or("omit_permutation_undo", false)?,
    };
    r.finish()?;
    Ok(spec)
}

fn parse_run(r: &SectionReader<'_>, default_scope: Scope) -> Result<RunSection, HarnessError> {
    let seeds = match r.get("seeds") {
        Some(raw) => {
            let parsed: Result<Vec<u64>, _> =
                raw.split(',').map(|v| v.trim().parse::<u64>()).collect();
            parsed.map_err(|_| r.bad("seeds", raw))?
        }
        None => vec![0],
    };
    if seeds.is_empty() {
        return Err(HarnessError::Validation {
            key: "run.seeds".into(),
            message: "at least one seed is required".into(),
        });
    }
    let variants = match r.get("variants") {
        Some(raw) => {
            let parsed: Result<Vec<Scope>, _> =
                raw.split(',').map(|v| v.trim().parse::<Scope>()).collect();
            parsed.map_err(|_| r.bad("variants", raw))?
        }
        None => vec![default_scope],
    };
    let mode = match r.get("mode").unwrap_or("train") {
        "train" => RunMode::Train,
        "trajectories" => RunMode::Trajectories,
        other => {
            return Err(HarnessError::Validation {
                key: "run.mode".into(),
                message: format!("unknown mode '{other}' (train or trajectories)"),
            })
        }
    };
    let run = RunSection {
        steps: r.parse_required("steps")?,
        seeds,
        snapshot_every: r.parse_or("snapshot_every", 0u64)?,
        out_dir: PathBuf::from(r.require("out_dir")?),
        variants,
        mode,
    };
    r.finish()?;
    Ok(run)
}

fn parse_pair(
    r: &SectionReader<'_>,
    key: &str,
    default: [f64; 2],
) -> Result<[f64; 2], HarnessError> {
    match r.get(key) {
        None => Ok(default),
        Some(raw) => {
            let (a, b) = raw.split_once(',').ok_or_else(|| r.bad(key, raw))?;
            Ok([
                a.trim().parse().map_err(|_| r.bad(key, raw))?,
                b.trim().parse().map_err(|_| r.bad(key, raw))?,
            ])
        }
    }
}

fn parse_trajectories(r: &SectionReader<'_>) -> Result<TrajectoriesSection, HarnessError> {
    let section = TrajectoriesSection {
        angle: r.parse_or("angle", std::f64::consts::FRAC_PI_4)?,
        eigenvalues: parse_pair(r, "eigenvalues", [1.0, 100.0])?,
        start: parse_pair(r, "start", [1.0, 1.0])?,
        sgd_alpha: r.parse_or("sgd_alpha", 0.01)?,
        sgd_momentum: r.parse_or("sgd_momentum", 0.9)?,
    };
    r.finish()?;
    Ok(section)
}

fn parse_diagnose(r: &SectionReader<'_>) -> Result<DiagnoseSection, HarnessError> {
    let defaults = DiagnoseSection::default();
    let section = DiagnoseSection {
        trials: r.parse_or("trials", defaults.trials)?,
        rows: r.parse_or("rows", defaults.rows)?,
        batches_per_row: r.parse_or("k", defaults.batches_per_row)?,
        hist_bins: r.parse_or("hist_bins", defaults.hist_bins)?,
        seed: r.parse_or("seed", defaults.seed)?,
    };
    r.finish()?;
    Ok(section)
}

fn parse_equivariance(r: &SectionReader<'_>) -> Result<EquivarianceSection, HarnessError> {
    let alg: BaseOptimizer = match r.get("alg") {
        Some(raw) => raw.parse().map_err(|_| r.bad("alg", raw))?,
        None => BaseOptimizer::Sgd,
    };
    let rotation = match r.get("rotation").unwrap_or("haar") {
        "haar" => EquivarianceRotation::Haar,
        "identity" => EquivarianceRotation::Identity,
        other => {
            return Err(HarnessError::Validation {
                key: "equivariance.rotation".into(),
                message: format!("unknown rotation '{other}' (haar or identity)"),
            })
        }
    };
    let section = EquivarianceSection {
        alg,
        steps: r.parse_or("steps", 100u64)?,
        rotation_seed: r.parse_or("rotation_seed", 0u64)?,
        rotation,
    };
    r.finish()?;
    Ok(section)
}
