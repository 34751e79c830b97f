//! Flag groups, the TOML config file and their merge.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use maxmargin::group::GroupKind;
use maxmargin::net::Activation;
use maxmargin::tasks::TaskSpec;
use maxmargin::trainer::{Batch, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::Usage;

/// Fills every `None` field of `self` from `other`.
macro_rules! merge_fields {
    ($a:expr, $b:expr, $($f:ident),+) => {
        $( if $a.$f.is_none() { $a.$f = $b.$f.clone(); } )+
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Modular,
    Parity,
    Group,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TaskArgs {
    /// Task family
    #[arg(long, value_enum)]
    pub task: Option<TaskKind>,
    /// Modulus for modular addition
    #[arg(long)]
    pub p: Option<usize>,
    /// Number of input bits for parity
    #[arg(long)]
    pub n: Option<usize>,
    /// Parity degree (defaults to the size of --set)
    #[arg(long)]
    pub k: Option<usize>,
    /// Parity support, comma separated (defaults to 0..k)
    #[arg(long, value_delimiter = ',')]
    pub set: Option<Vec<usize>>,
    /// Group name: s3, s4, s5, s6 or z<p>
    #[arg(long)]
    pub group: Option<String>,
}

impl TaskArgs {
    pub fn merge(&mut self, file: &TaskArgs) {
        merge_fields!(self, file, task, p, n, k, set, group);
    }

    pub fn is_empty(&self) -> bool {
        self.task.is_none() && self.p.is_none() && self.n.is_none() && self.group.is_none()
    }

    pub fn resolve(&self) -> Result<TaskSpec, Usage> {
        let kind = match self.task {
            Some(k) => k,
            None if self.group.is_some() => TaskKind::Group,
            None if self.n.is_some() => TaskKind::Parity,
            None if self.p.is_some() => TaskKind::Modular,
            None => return Err(Usage("no task given: pass --task with --p, --n/--k or --group".into())),
        };
        let spec = match kind {
            TaskKind::Modular => TaskSpec::Modular { p: self.p.ok_or_else(|| Usage("--task modular needs --p".into()))? },
            TaskKind::Parity => {
                let n = self.n.ok_or_else(|| Usage("--task parity needs --n".into()))?;
                let set = match (&self.set, self.k) {
                    (Some(s), Some(k)) if s.len() != k => {
                        return Err(Usage(format!("--k {k} does not match --set of size {}", s.len())))
                    }
                    (Some(s), _) => s.clone(),
                    (None, Some(k)) => (0..k).collect(),
                    (None, None) => return Err(Usage("--task parity needs --k or --set".into())),
                };
                TaskSpec::parity(n, set)
            }
            TaskKind::Group => {
                let name = self.group.as_deref().ok_or_else(|| Usage("--task group needs --group".into()))?;
                let group: GroupKind = name.parse().map_err(|e| Usage(format!("{e}")))?;
                TaskSpec::Group { group }
            }
        };
        spec.validate().map_err(|e| Usage(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Start from a named preset (modular71, modular71-relu, modular13, parity10_4, s3, s4, s5)
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub width: Option<usize>,
    /// square, relu or power<k>
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub reg_lambda: Option<f64>,
    /// Regularizer exponent r (defaults to the homogeneity)
    #[arg(long)]
    pub reg_exp: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Steps at which the learning rate doubles, comma separated
    #[arg(long, value_delimiter = ',')]
    pub double_at: Option<Vec<usize>>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Minibatch size; 0 or absent means full batch
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Standard deviation for every initial weight
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
}

impl TrainArgs {
    pub fn merge(&mut self, file: &TrainArgs) {
        merge_fields!(
            self, file, preset, width, activation, reg_lambda, reg_exp, lr, double_at, steps, batch, seed, init_scale,
            eval_every
        );
    }

    /// Preset (if any), then task flags, then the remaining flags.
    pub fn resolve(&self, task: &TaskArgs) -> Result<TrainConfig, Usage> {
        let mut cfg = match &self.preset {
            Some(name) => TrainConfig::preset(name).map_err(|e| Usage(e.to_string()))?,
            None => {
                let spec = task.resolve()?;
                let act = default_activation(&spec);
                let width = self.width.ok_or_else(|| Usage("train needs --width or --preset".into()))?;
                TrainConfig::new(spec, width, act)
            }
        };
        if self.preset.is_some() && !task.is_empty() {
            cfg.task = task.resolve()?;
            cfg.activation = default_activation(&cfg.task);
        }
        if let Some(a) = &self.activation {
            cfg.activation = parse_activation(a)?;
        }
        if let Some(w) = self.width {
            cfg.width = w;
        }
        if let Some(x) = self.reg_lambda {
            cfg.reg_lambda = x;
        }
        if self.reg_exp.is_some() {
            cfg.reg_exp = self.reg_exp;
        }
        if let Some(x) = self.lr {
            cfg.lr = x;
        }
        if let Some(x) = &self.double_at {
            cfg.double_at = x.clone();
        }
        if let Some(x) = self.steps {
            cfg.steps = x;
        }
        if let Some(b) = self.batch {
            cfg.batch = if b == 0 { Batch::Full } else { Batch::Mini(b) };
        }
        if let Some(x) = self.seed {
            cfg.seed = x;
        }
        if self.init_scale.is_some() {
            cfg.init_scale = self.init_scale;
        }
        if let Some(x) = self.eval_every {
            cfg.eval_every = x;
        }
        cfg.validate().map_err(|e| Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct OracleArgs {
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl OracleArgs {
    pub fn merge(&mut self, file: &OracleArgs) {
        merge_fields!(self, file, activation, restarts, steps, step_size, seed);
    }
}

/// Everything a config file may set. Keys match the long flag names with `_`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub out: Option<PathBuf>,
    pub tol: Option<f64>,
    pub task: Option<TaskKind>,
    pub p: Option<usize>,
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub set: Option<Vec<usize>>,
    pub group: Option<String>,
    pub preset: Option<String>,
    pub width: Option<usize>,
    pub activation: Option<String>,
    pub reg_lambda: Option<f64>,
    pub reg_exp: Option<f64>,
    pub lr: Option<f64>,
    pub double_at: Option<Vec<usize>>,
    pub steps: Option<usize>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
    pub init_scale: Option<f64>,
    pub eval_every: Option<usize>,
    pub restarts: Option<usize>,
    pub step_size: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", path.display())).into())
    }

    pub fn task(&self) -> TaskArgs {
        TaskArgs {
            task: self.task,
            p: self.p,
            n: self.n,
            k: self.k,
            set: self.set.clone(),
            group: self.group.clone(),
        }
    }

    pub fn train(&self) -> TrainArgs {
        TrainArgs {
            preset: self.preset.clone(),
            width: self.width,
            activation: self.activation.clone(),
            reg_lambda: self.reg_lambda,
            reg_exp: self.reg_exp,
            lr: self.lr,
            double_at: self.double_at.clone(),
            steps: self.steps,
            batch: self.batch,
            seed: self.seed,
            init_scale: self.init_scale,
            eval_every: self.eval_every,
        }
    }

    pub fn oracle(&self) -> OracleArgs {
        OracleArgs {
            activation: self.activation.clone(),
            restarts: self.restarts,
            steps: self.steps,
            step_size: self.step_size,
            seed: self.seed,
        }
    }
}

pub fn parse_activation(s: &str) -> Result<Activation, Usage> {
    s.parse().map_err(|e: maxmargin::Error| Usage(e.to_string()))
}

/// Square for group tasks, `x^k` for degree-`k` parity.
pub fn default_activation(task: &TaskSpec) -> Activation {
    match task {
        TaskSpec::Parity { k, .. } => Activation::Power(*k as u32),
        _ => Activation::Square,
    }
}

/// Short file-name tag for a task.
pub fn slug(task: &TaskSpec) -> String {
    match task {
        TaskSpec::Modular { p } => format!("modular_p{p}"),
        TaskSpec::Parity { n, k, .. } => format!("parity_n{n}_k{k}"),
        TaskSpec::Group { group } => format!("group_{group}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: FileConfig = toml::from_str("task = \"modular\"\np = 13\nwidth = 100\nlr = 0.5\n").unwrap();
        let mut task = TaskArgs { p: Some(7), ..Default::default() };
        task.merge(&file.task());
        let mut train = TrainArgs { lr: Some(0.01), ..Default::default() };
        train.merge(&file.train());
        let cfg = train.resolve(&task).unwrap();
        assert_eq!(cfg.task, TaskSpec::Modular { p: 7 });
        assert_eq!(cfg.width, 100);
        assert_eq!(cfg.lr, 0.01);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("wdth = 3").is_err());
    }

    #[test]
    fn parity_resolution() {
        let t = TaskArgs { task: Some(TaskKind::Parity), n: Some(10), k: Some(4), ..Default::default() };
        assert_eq!(t.resolve().unwrap(), TaskSpec::parity(10, vec![0, 1, 2, 3]));
        let bad = TaskArgs { set: Some(vec![1, 2]), ..t };
        assert!(bad.resolve().is_err());
        let g = TaskArgs { group: Some("s5".into()), ..Default::default() };
        assert!(matches!(g.resolve().unwrap(), TaskSpec::Group { .. }));
    }

    #[test]
    fn preset_with_overrides() {
        let train = TrainArgs { preset: Some("modular13".into()), steps: Some(10), ..Default::default() };
        let cfg = train.resolve(&TaskArgs::default()).unwrap();
        assert_eq!(cfg.steps, 10);
        assert_eq!(cfg.width, 100);
    }
}
