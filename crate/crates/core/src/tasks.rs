//! Full-population datasets for modular addition, sparse parity and group
//! composition.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{is_prime, Group, GroupKind};

pub const MAX_PARITY_BITS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskSpec {
    Modular { p: usize },
    Parity { n: usize, k: usize, set: Vec<usize> },
    Group { group: GroupKind },
}

impl TaskSpec {
    pub fn parity(n: usize, set: Vec<usize>) -> Self {
        TaskSpec::Parity { n, k: set.len(), set }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TaskSpec::Modular { p } => {
                if *p < 3 || !is_prime(*p) {
                    return Err(Error::NotPrime(*p));
                }
            }
            TaskSpec::Parity { n, k, set } => {
                if *n == 0 || *n > MAX_PARITY_BITS {
                    return Err(Error::InvalidTask(format!("parity needs 1 <= n <= {MAX_PARITY_BITS}, got {n}")));
                }
                if set.len() != *k || *k == 0 {
                    return Err(Error::InvalidTask(format!("parity set {set:?} does not have k = {k} >= 1 elements")));
                }
                let mut sorted = set.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != set.len() || sorted.iter().any(|&j| j >= *n) {
                    return Err(Error::InvalidTask(format!("parity set {set:?} must hold distinct indices below {n}")));
                }
            }
            TaskSpec::Group { group } => {
                Group::new(*group)?;
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        match self {
            TaskSpec::Modular { p } => *p,
            TaskSpec::Parity { .. } => 2,
            TaskSpec::Group { group } => match group {
                GroupKind::Cyclic { p } => *p,
                GroupKind::Symmetric { n } => (1..=*n).product(),
            },
        }
    }

    /// Length of each input weight vector (`u`, and `v` for pair tasks).
    pub fn input_dim(&self) -> usize {
        match self {
            TaskSpec::Parity { n, .. } => *n,
            _ => self.num_classes(),
        }
    }

    pub fn is_pair_task(&self) -> bool {
        !matches!(self, TaskSpec::Parity { .. })
    }

    /// The group behind a pair task (`Z_p` for modular addition).
    pub fn group(&self) -> Result<Option<Group>> {
        match self {
            TaskSpec::Modular { p } => Group::new(GroupKind::Cyclic { p: *p }).map(Some),
            TaskSpec::Group { group } => Group::new(*group).map(Some),
            TaskSpec::Parity { .. } => Ok(None),
        }
    }

    /// Cyclic order when the task is addition mod p (either spelling).
    pub fn cyclic_order(&self) -> Option<usize> {
        match self {
            TaskSpec::Modular { p } | TaskSpec::Group { group: GroupKind::Cyclic { p } } => Some(*p),
            _ => None,
        }
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskSpec::Modular { p } => write!(f, "modular(p={p})"),
            TaskSpec::Parity { n, k, set } => write!(f, "parity(n={n},k={k},S={set:?})"),
            TaskSpec::Group { group } => write!(f, "group({group})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Pair(usize, usize),
    Bits(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub task: TaskSpec,
    pub inputs: Vec<Input>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// Writes one row per point: input tokens followed by the label.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        match &self.task {
            TaskSpec::Parity { n, .. } => {
                let header: Vec<String> = (0..*n).map(|j| format!("x{j}")).collect();
                writeln!(out, "{},label", header.join(","))?;
            }
            _ => writeln!(out, "a,b,label")?,
        }
        for (x, y) in self.inputs.iter().zip(&self.labels) {
            match x {
                Input::Pair(a, b) => writeln!(out, "{a},{b},{y}")?,
                Input::Bits(bits) => {
                    let cells: Vec<String> = bits.iter().map(|b| format!("{}", *b as i64)).collect();
                    writeln!(out, "{},{y}", cells.join(","))?;
                }
            }
        }
        Ok(())
    }
}

/// Builds the full dataset in row-major input order.
pub fn build_dataset(task: &TaskSpec) -> Result<Dataset> {
    task.validate()?;
    match task {
        TaskSpec::Parity { n, set, .. } => {
            let n = *n;
            let mut inputs = Vec::with_capacity(1 << n);
            let mut labels = Vec::with_capacity(1 << n);
            for i in 0..1usize << n {
                // bit (n-1-j) set means x_j = -1, so index 0 is all ones
                let bits: Vec<f64> = (0..n)
                    .map(|j| if (i >> (n - 1 - j)) & 1 == 1 { -1.0 } else { 1.0 })
                    .collect();
                let prod: f64 = set.iter().map(|&j| bits[j]).product();
                labels.push(if prod > 0.0 { 0 } else { 1 });
                inputs.push(Input::Bits(bits));
            }
            Ok(Dataset { task: task.clone(), inputs, labels, num_classes: 2 })
        }
        _ => {
            let group = task.group()?.expect("pair tasks have a group");
            Ok(group_dataset(task.clone(), &group))
        }
    }
}

fn group_dataset(task: TaskSpec, group: &Group) -> Dataset {
    let n = group.order();
    let mut inputs = Vec::with_capacity(n * n);
    let mut labels = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            inputs.push(Input::Pair(a, b));
            labels.push(group.mul(a, b));
        }
    }
    Dataset { task, inputs, labels, num_classes: n }
}
