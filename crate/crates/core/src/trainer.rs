//! Gradient-descent training with cross-entropy plus `sum_i ||omega_i||^r`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{basis_vectors, irreps, Group, GroupKind};
use crate::net::{dataset_margin_tol, Activation, Network, Neuron, TRAINED_MARGIN_TOL};
use crate::spectra::{census, Analysis};
use crate::tasks::{build_dataset, Dataset, Input, TaskSpec};

/// Points per parallel gradient chunk. Fixed so the reduction order never changes.
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Batch {
    Full,
    Mini(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: TaskSpec,
    pub width: usize,
    pub activation: Activation,
    pub reg_lambda: f64,
    /// Defaults to the homogeneity of the activation.
    #[serde(default)]
    pub reg_exp: Option<f64>,
    pub lr: f64,
    /// Steps at which the learning rate doubles.
    #[serde(default)]
    pub double_at: Vec<usize>,
    pub steps: usize,
    #[serde(default = "full_batch")]
    pub batch: Batch,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation for every weight; defaults to `1/sqrt(fan-in)`.
    #[serde(default)]
    pub init_scale: Option<f64>,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

fn full_batch() -> Batch {
    Batch::Full
}

fn default_eval_every() -> usize {
    500
}

impl TrainConfig {
    pub fn new(task: TaskSpec, width: usize, activation: Activation) -> Self {
        Self {
            task,
            width,
            activation,
            reg_lambda: 1e-4,
            reg_exp: None,
            lr: 0.05,
            double_at: vec![],
            steps: 1000,
            batch: Batch::Full,
            seed: 0,
            init_scale: None,
            eval_every: default_eval_every(),
        }
    }

    pub fn reg_exponent(&self) -> f64 {
        self.reg_exp.unwrap_or(self.activation.homogeneity() as f64)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if self.width == 0 {
            return Err(Error::Config("width must be positive".into()));
        }
        if !(self.reg_lambda >= 0.0) || !self.reg_lambda.is_finite() {
            return Err(Error::Config(format!("reg_lambda must be finite and >= 0, got {}", self.reg_lambda)));
        }
        if !(self.reg_exponent() >= 1.0) {
            return Err(Error::Config(format!("reg_exp must be >= 1, got {}", self.reg_exponent())));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.double_at.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("doubling steps {:?} must be strictly increasing", self.double_at)));
        }
        if let Batch::Mini(0) = self.batch {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if let Some(s) = self.init_scale {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::Config(format!("init_scale must be finite and >= 0, got {s}")));
            }
        }
        Ok(())
    }

    /// Learning rate used at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let doublings = self.double_at.iter().filter(|&&s| s <= step).count();
        self.lr * 2f64.powi(doublings as i32)
    }

    /// Named run presets. `modular71`, `modular71-relu`, `modular13`, `parity10_4`, `s3`, `s4`, `s5`.
    pub fn preset(name: &str) -> Result<Self> {
        let thousands = |n: usize| (1..=n).map(|i| i * 1000).collect::<Vec<_>>();
        let sym_doubling: Vec<usize> = (1..=13).map(|i| i * 200).chain([5000, 10000]).collect();
        let group = |n| TaskSpec::Group { group: GroupKind::Symmetric { n } };
        let cfg = match name {
            "modular71" | "modular71-relu" => {
                let relu = name.ends_with("relu");
                Self {
                    reg_lambda: 1e-4,
                    reg_exp: relu.then_some(2.0),
                    lr: 0.05,
                    double_at: thousands(10),
                    steps: 40000,
                    eval_every: 1000,
                    ..Self::new(TaskSpec::Modular { p: 71 }, 500, if relu { Activation::Relu } else { Activation::Square })
                }
            }
            "modular13" => Self {
                reg_lambda: 1e-4,
                lr: 0.05,
                double_at: thousands(10),
                steps: 20000,
                eval_every: 500,
                ..Self::new(TaskSpec::Modular { p: 13 }, 100, Activation::Square)
            },
            "parity10_4" => Self {
                reg_lambda: 1e-3,
                lr: 0.1,
                steps: 30000,
                // fan-in init overflows the degree-4 activation at lr 0.1
                init_scale: Some(0.1),
                eval_every: 1000,
                ..Self::new(TaskSpec::parity(10, vec![0, 1, 2, 3]), 40, Activation::Power(4))
            },
            "s3" | "s4" => Self {
                reg_lambda: 1e-7,
                lr: 0.05,
                double_at: sym_doubling,
                steps: 50000,
                eval_every: 1000,
                ..Self::new(group(if name == "s3" { 3 } else { 4 }), if name == "s3" { 30 } else { 200 }, Activation::Square)
            },
            "s5" => Self {
                reg_lambda: 1e-5,
                lr: 0.05,
                double_at: (1..=8).map(|i| i * 3000).collect(),
                steps: 75000,
                batch: Batch::Mini(1000),
                eval_every: 2500,
                ..Self::new(group(5), 2000, Activation::Square)
            },
            _ => return Err(Error::Config(format!("unknown preset '{name}'"))),
        };
        Ok(cfg)
    }

    pub const PRESETS: [&'static str; 7] = ["modular71", "modular71-relu", "modular13", "parity10_4", "s3", "s4", "s5"];
}

/// Independent normal entries; `u`, `v` use `1/sqrt(input dim)` and `w` uses
/// `1/sqrt(width)` unless `init_scale` fixes one deviation for all.
pub fn init_network(cfg: &TrainConfig) -> Result<Network> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.task.input_dim();
    let (su, sw) = match cfg.init_scale {
        Some(s) => (s, s),
        None => (1.0 / (d as f64).sqrt(), 1.0 / (cfg.width as f64).sqrt()),
    };
    let mut draw = |sigma: f64, n: usize| -> Vec<f64> {
        if sigma == 0.0 {
            return vec![0.0; n];
        }
        let dist = Normal::new(0.0, sigma).expect("finite sigma");
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    };
    let c = cfg.task.num_classes();
    let pair = cfg.task.is_pair_task();
    let neurons = (0..cfg.width)
        .map(|_| {
            let u = draw(su, d);
            let v = pair.then(|| draw(su, d));
            let w = draw(sw, c);
            Neuron { u, v, w }
        })
        .collect();
    let mut net = Network::new(cfg.task.clone(), cfg.activation, neurons, "train");
    net.meta.seed = Some(cfg.seed);
    Ok(net)
}

/// Objective pieces at one parameter point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Loss {
    pub ce: f64,
    pub reg: f64,
    pub total: f64,
}

/// Flat parameters: `u` and `v` are `m x d`, `w` is `m x c`, row-major.
#[derive(Debug, Clone, PartialEq)]
struct Params {
    m: usize,
    d: usize,
    c: usize,
    u: Vec<f64>,
    v: Vec<f64>,
    w: Vec<f64>,
}

impl Params {
    fn from_net(net: &Network) -> Self {
        let m = net.width();
        let d = net.task.input_dim();
        let c = net.num_classes();
        let mut p = Self::zeros(m, d, c, net.task.is_pair_task());
        for (i, n) in net.neurons.iter().enumerate() {
            p.u[i * d..(i + 1) * d].copy_from_slice(&n.u);
            if let Some(v) = &n.v {
                p.v[i * d..(i + 1) * d].copy_from_slice(v);
            }
            p.w[i * c..(i + 1) * c].copy_from_slice(&n.w);
        }
        p
    }

    fn zeros(m: usize, d: usize, c: usize, pair: bool) -> Self {
        Self { m, d, c, u: vec![0.0; m * d], v: if pair { vec![0.0; m * d] } else { vec![] }, w: vec![0.0; m * c] }
    }

    fn write_into(&self, net: &mut Network) {
        let (d, c) = (self.d, self.c);
        for (i, n) in net.neurons.iter_mut().enumerate() {
            n.u.copy_from_slice(&self.u[i * d..(i + 1) * d]);
            if let Some(v) = n.v.as_mut() {
                v.copy_from_slice(&self.v[i * d..(i + 1) * d]);
            }
            n.w.copy_from_slice(&self.w[i * c..(i + 1) * c]);
        }
    }

    fn add_scaled(&mut self, other: &Self, s: f64) {
        for (a, b) in self.u.iter_mut().zip(&other.u).chain(self.v.iter_mut().zip(&other.v)).chain(self.w.iter_mut().zip(&other.w)) {
            *a += s * b;
        }
    }

    fn neuron_norm_sq(&self, i: usize) -> f64 {
        let (d, c) = (self.d, self.c);
        let sq = |xs: &[f64]| xs.iter().map(|x| x * x).sum::<f64>();
        sq(&self.u[i * d..(i + 1) * d]) + if self.v.is_empty() { 0.0 } else { sq(&self.v[i * d..(i + 1) * d]) } + sq(&self.w[i * c..(i + 1) * c])
    }
}

/// Cross-entropy summed over `idx` and its gradient (unscaled by batch size).
fn ce_sum_grad(p: &Params, act: Activation, data: &Dataset, idx: &[usize]) -> (f64, Params) {
    let (m, d, c) = (p.m, p.d, p.c);
    let mut g = Params::zeros(m, d, c, !p.v.is_empty());
    let mut loss = 0.0;
    let mut pre = vec![0.0; m];
    let mut h = vec![0.0; m];
    let mut z = vec![0.0; c];
    for &k in idx {
        let x = &data.inputs[k];
        let y = data.labels[k];
        for i in 0..m {
            pre[i] = match x {
                Input::Pair(a, b) => p.u[i * d + a] + p.v[i * d + b],
                Input::Bits(bits) => p.u[i * d..(i + 1) * d].iter().zip(bits).map(|(u, x)| u * x).sum(),
            };
            h[i] = act.apply(pre[i]);
        }
        z.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..m {
            if h[i] != 0.0 {
                for (zc, wc) in z.iter_mut().zip(&p.w[i * c..(i + 1) * c]) {
                    *zc += h[i] * wc;
                }
            }
        }
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for zc in z.iter_mut() {
            *zc = (*zc - zmax).exp();
            sum += *zc;
        }
        loss += sum.ln() - (z[y].ln());
        // z now holds softmax - onehot
        for zc in z.iter_mut() {
            *zc /= sum;
        }
        z[y] -= 1.0;
        for i in 0..m {
            let wi = &p.w[i * c..(i + 1) * c];
            let gw = &mut g.w[i * c..(i + 1) * c];
            let mut back = 0.0;
            for ((gwc, wc), dc) in gw.iter_mut().zip(wi).zip(&z) {
                *gwc += h[i] * dc;
                back += wc * dc;
            }
            let dpre = act.derivative(pre[i]) * back;
            if dpre != 0.0 {
                match x {
                    Input::Pair(a, b) => {
                        g.u[i * d + a] += dpre;
                        g.v[i * d + b] += dpre;
                    }
                    Input::Bits(bits) => {
                        for (gu, xb) in g.u[i * d..(i + 1) * d].iter_mut().zip(bits) {
                            *gu += dpre * xb;
                        }
                    }
                }
            }
        }
    }
    (loss, g)
}

fn loss_and_grad_params(p: &Params, act: Activation, data: &Dataset, idx: &[usize], lambda: f64, r: f64) -> (Loss, Params) {
    let parts: Vec<(f64, Params)> = idx.par_chunks(CHUNK).map(|ch| ce_sum_grad(p, act, data, ch)).collect();
    let mut grad = Params::zeros(p.m, p.d, p.c, !p.v.is_empty());
    let mut ce = 0.0;
    for (l, g) in &parts {
        ce += l;
        grad.add_scaled(g, 1.0);
    }
    let inv = 1.0 / idx.len() as f64;
    ce *= inv;
    grad.u.iter_mut().chain(grad.v.iter_mut()).chain(grad.w.iter_mut()).for_each(|x| *x *= inv);

    let mut reg = 0.0;
    if lambda > 0.0 {
        let (d, c) = (p.d, p.c);
        for i in 0..p.m {
            let nsq = p.neuron_norm_sq(i);
            let norm = nsq.sqrt();
            reg += norm.powf(r);
            if norm > 0.0 {
                let s = lambda * r * norm.powf(r - 2.0);
                for j in i * d..(i + 1) * d {
                    grad.u[j] += s * p.u[j];
                    if !p.v.is_empty() {
                        grad.v[j] += s * p.v[j];
                    }
                }
                for j in i * c..(i + 1) * c {
                    grad.w[j] += s * p.w[j];
                }
            }
        }
        reg *= lambda;
    }
    (Loss { ce, reg, total: ce + reg }, grad)
}

/// Mean cross-entropy over `idx` plus `lambda sum_i ||omega_i||_2^r`, with its
/// gradient laid out like the network.
pub fn loss_and_grad(net: &Network, data: &Dataset, idx: &[usize], lambda: f64, r: f64) -> Result<(Loss, Network)> {
    net.validate()?;
    if idx.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if idx.iter().any(|&i| i >= data.len()) || net.task != data.task {
        return Err(Error::Shape("batch indices or task do not match the dataset".into()));
    }
    let p = Params::from_net(net);
    let (loss, g) = loss_and_grad_params(&p, net.activation, data, idx, lambda, r);
    if !loss.total.is_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    let mut grad = net.clone();
    g.write_into(&mut grad);
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub reg: f64,
    pub norm: f64,
    pub normalized_margin: f64,
    pub accuracy: f64,
    /// Mean max normalized power per live neuron; absent for parity tasks.
    pub mean_max_power: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    /// The initial network was all zeros, a stationary point for `nu >= 3`.
    pub degenerate_start: bool,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn best_margin(&self) -> f64 {
        self.records.iter().map(|r| r.normalized_margin).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,lr,loss,reg,norm,normalized_margin,accuracy,mean_max_power")?;
        for r in &self.records {
            let power = r.mean_max_power.map(|x| format!("{x:e}")).unwrap_or_default();
            writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                r.step, r.lr, r.loss, r.reg, r.norm, r.normalized_margin, r.accuracy, power
            )?;
        }
        Ok(())
    }
}

/// Spectral summary used in training traces.
enum PowerProbe {
    None,
    Fourier(usize),
    Rep(crate::group::BasisVectors, Vec<String>),
}

impl PowerProbe {
    fn for_task(task: &TaskSpec) -> Result<Self> {
        if let Some(p) = task.cyclic_order() {
            return Ok(PowerProbe::Fourier(p));
        }
        match task {
            TaskSpec::Group { group } => {
                let g = Group::new(*group)?;
                let reps = irreps(&g)?;
                let basis = basis_vectors(&reps, &g)?;
                Ok(PowerProbe::Rep(basis, reps.into_iter().map(|r| r.name).collect()))
            }
            _ => Ok(PowerProbe::None),
        }
    }

    fn measure(&self, net: &Network) -> Result<Option<f64>> {
        let analysis = match self {
            PowerProbe::None => return Ok(None),
            PowerProbe::Fourier(p) => Analysis::Fourier { p: *p },
            PowerProbe::Rep(basis, names) => Analysis::Rep { basis, names: names.clone() },
        };
        Ok(Some(census(net, &analysis)?.mean_max_power))
    }
}

fn evaluate(net: &Network, data: &Dataset, cfg: &TrainConfig, probe: &PowerProbe, step: usize, all: &[usize]) -> Result<TraceRecord> {
    let p = Params::from_net(net);
    let (loss, _) = loss_and_grad_params(&p, net.activation, data, all, cfg.reg_lambda, cfg.reg_exponent());
    let nu = net.nu as f64;
    let report = dataset_margin_tol(net, data, 2.0, nu, TRAINED_MARGIN_TOL)?;
    Ok(TraceRecord {
        step,
        lr: cfg.lr_at(step),
        loss: loss.ce,
        reg: loss.reg,
        norm: report.norm,
        normalized_margin: report.normalized_margin,
        accuracy: report.accuracy,
        mean_max_power: probe.measure(net)?,
    })
}

/// Runs gradient descent (full batch) or minibatch SGD with deterministic
/// shuffling, recording the trace at step 0, every `eval_every` steps and at the end.
pub fn train(cfg: &TrainConfig) -> Result<(Network, TrainTrace)> {
    let data = build_dataset(&cfg.task)?;
    train_on(cfg, &data, init_network(cfg)?)
}

/// Like [`train`] but from a given starting network.
pub fn train_on(cfg: &TrainConfig, data: &Dataset, init: Network) -> Result<(Network, TrainTrace)> {
    cfg.validate()?;
    init.validate()?;
    if init.task != cfg.task || init.activation != cfg.activation {
        return Err(Error::Config("initial network does not match the config".into()));
    }
    let probe = PowerProbe::for_task(&cfg.task)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let r = cfg.reg_exponent();
    let mut net = init;
    let mut params = Params::from_net(&net);
    let mut trace = TrainTrace { records: vec![], degenerate_start: net.neurons.iter().all(|n| n.params().all(|&x| x == 0.0)) };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut order = all.clone();
    let mut cursor = order.len();

    for step in 0..=cfg.steps {
        if step % cfg.eval_every == 0 || step == cfg.steps {
            params.write_into(&mut net);
            let rec = evaluate(&net, data, cfg, &probe, step, &all)?;
            let bad = !rec.loss.is_finite() || !rec.norm.is_finite();
            trace.records.push(rec);
            if bad {
                return Err(Error::Diverged { step, trace: Box::new(trace) });
            }
        }
        if step == cfg.steps {
            break;
        }
        let batch: &[usize] = match cfg.batch {
            Batch::Full => &all,
            Batch::Mini(size) => {
                let size = size.min(order.len());
                if cursor + size > order.len() {
                    order.shuffle(&mut shuffle_rng);
                    cursor = 0;
                }
                cursor += size;
                &order[cursor - size..cursor]
            }
        };
        let (loss, grad) = loss_and_grad_params(&params, cfg.activation, data, batch, cfg.reg_lambda, r);
        if !loss.total.is_finite() || grad.w.iter().any(|x| !x.is_finite()) {
            params.write_into(&mut net);
            return Err(Error::Diverged { step, trace: Box::new(trace) });
        }
        params.add_scaled(&grad, -cfg.lr_at(step));
    }
    params.write_into(&mut net);
    Ok((net, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_net(task: TaskSpec, act: Activation, m: usize, seed: u64) -> Network {
        let cfg = TrainConfig { seed, ..TrainConfig::new(task, m, act) };
        init_network(&cfg).unwrap()
    }

    /// Central finite differences of the full objective over every parameter.
    fn check_gradient(net: &Network, lambda: f64, r: f64) -> f64 {
        let data = build_dataset(&net.task).unwrap();
        let idx: Vec<usize> = (0..data.len()).collect();
        let (_, grad) = loss_and_grad(net, &data, &idx, lambda, r).unwrap();
        let analytic: Vec<f64> = grad.neurons.iter().flat_map(|n| n.params().copied().collect::<Vec<_>>()).collect();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut k = 0;
        for i in 0..net.width() {
            let count = net.neurons[i].num_params();
            for j in 0..count {
                let mut plus = net.clone();
                let mut minus = net.clone();
                *plus.neurons[i].params_mut().nth(j).unwrap() += h;
                *minus.neurons[i].params_mut().nth(j).unwrap() -= h;
                let lp = loss_and_grad(&plus, &data, &idx, lambda, r).unwrap().0.total;
                let lm = loss_and_grad(&minus, &data, &idx, lambda, r).unwrap().0.total;
                let fd = (lp - lm) / (2.0 * h);
                let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-3);
                worst = worst.max(err);
                k += 1;
            }
        }
        worst
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let net = Network::zeros(TaskSpec::Modular { p: 7 }, Activation::Square, 3);
        let data = build_dataset(&net.task).unwrap();
        let idx: Vec<usize> = (0..data.len()).collect();
        let (loss, grad) = loss_and_grad(&net, &data, &idx, 0.1, 3.0).unwrap();
        assert!((loss.ce - 7f64.ln()).abs() < 1e-12);
        assert_eq!(loss.reg, 0.0);
        assert!(grad.neurons.iter().all(|n| n.params().all(|&x| x == 0.0)));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cases = [
            (TaskSpec::Modular { p: 5 }, Activation::Square, 4, 1e-3, 3.0),
            (TaskSpec::Modular { p: 5 }, Activation::Relu, 3, 1e-3, 2.0),
            (TaskSpec::parity(4, vec![0, 3]), Activation::Power(3), 3, 1e-2, 4.0),
            (TaskSpec::Group { group: GroupKind::Symmetric { n: 3 } }, Activation::Square, 3, 1e-2, 3.0),
        ];
        for (seed, (task, act, m, lambda, r)) in cases.into_iter().enumerate() {
            let net = random_net(task, act, m, seed as u64);
            let err = check_gradient(&net, lambda, r);
            assert!(err < 1e-6, "{act:?}: relative error {err}");
        }
    }

    #[test]
    fn separating_net_loss_vanishes_with_scale() {
        let net = crate::constructions::build_cyclic(5).unwrap();
        let data = build_dataset(&net.task).unwrap();
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut prev = f64::INFINITY;
        for s in [1.0, 4.0, 16.0, 64.0] {
            let l = loss_and_grad(&net.scaled(s), &data, &idx, 0.0, 3.0).unwrap().0.ce;
            assert!(l <= prev);
            prev = l;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn small_step_decreases_loss() {
        let task = TaskSpec::Modular { p: 5 };
        let data = build_dataset(&task).unwrap();
        let idx: Vec<usize> = (0..data.len()).collect();
        for seed in 0..50 {
            let net = random_net(task.clone(), Activation::Square, 4, seed);
            let (l0, g) = loss_and_grad(&net, &data, &idx, 1e-3, 3.0).unwrap();
            let mut next = net.clone();
            for (n, gn) in next.neurons.iter_mut().zip(&g.neurons) {
                for (x, gx) in n.params_mut().zip(gn.params()) {
                    *x -= 1e-4 * gx;
                }
            }
            let l1 = loss_and_grad(&next, &data, &idx, 1e-3, 3.0).unwrap().0;
            assert!(l1.total <= l0.total, "seed {seed}");
        }
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = TrainConfig { seed: 9, ..TrainConfig::new(TaskSpec::Modular { p: 7 }, 5, Activation::Square) };
        assert_eq!(init_network(&cfg).unwrap(), init_network(&cfg).unwrap());
        let zero = TrainConfig { init_scale: Some(0.0), steps: 3, eval_every: 1, ..cfg };
        let (_, trace) = train(&zero).unwrap();
        assert!(trace.degenerate_start);
        assert_eq!(trace.records.len(), 4);
        assert!(trace.records.iter().all(|r| r.normalized_margin == 0.0));
    }

    #[test]
    fn training_is_reproducible() {
        let cfg = TrainConfig {
            steps: 40,
            eval_every: 10,
            batch: Batch::Mini(7),
            seed: 3,
            ..TrainConfig::new(TaskSpec::Modular { p: 5 }, 6, Activation::Square)
        };
        let (a, ta) = train(&cfg).unwrap();
        let (b, tb) = train(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(ta.records.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 10, 20, 30, 40]);
    }

    #[test]
    fn schedule_and_validation() {
        let mut cfg = TrainConfig::new(TaskSpec::Modular { p: 5 }, 2, Activation::Square);
        cfg.double_at = vec![10, 20];
        assert_eq!(cfg.lr_at(9), 0.05);
        assert_eq!(cfg.lr_at(10), 0.1);
        assert_eq!(cfg.lr_at(25), 0.2);
        cfg.double_at = vec![20, 10];
        assert!(cfg.validate().is_err());
        let p71 = TrainConfig::preset("modular71").unwrap();
        assert_eq!(p71.lr_at(40000), 51.2);
        let s3 = TrainConfig::preset("s3").unwrap();
        assert!((s3.lr_at(50000) - 1638.4).abs() < 1e-9);
        for name in TrainConfig::PRESETS {
            TrainConfig::preset(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn divergence_returns_trace() {
        let cfg = TrainConfig { lr: 1e6, steps: 200, eval_every: 1, reg_lambda: 0.0, ..TrainConfig::new(TaskSpec::Modular { p: 5 }, 4, Activation::Square) };
        match train(&cfg) {
            Err(Error::Diverged { trace, .. }) => assert!(!trace.records.is_empty()),
            other => panic!("expected divergence, got {:?}", other.map(|(_, t)| t.records.len())),
        }
    }

    #[test]
    fn random_parity_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = random_net(TaskSpec::parity(3, vec![0, 1, 2]), Activation::Power(3), 2, rng.random());
        assert!(check_gradient(&net, 1e-3, 4.0) < 1e-6);
    }
}
