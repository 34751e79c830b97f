//! Homogeneous one-hidden-layer networks: forward pass, margins, `L_{a,b}`
//! norms and the JSON network format.
//!
//! A pair-task neuron computes `act(u[a] + v[b]) * w`; a parity neuron
//! computes `act(<u, x>) * w` with `w` of length 2 (index 0 is class `+1`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{Dataset, Input, TaskSpec};

/// Relative tolerance for "on the margin" membership of analytic networks.
pub const ANALYTIC_MARGIN_TOL: f64 = 1e-9;
/// Default relative tolerance for trained networks.
pub const TRAINED_MARGIN_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Square,
    Power(u32),
    Relu,
}

impl Activation {
    /// Homogeneity of a single neuron: activation degree plus one for `w`.
    /// ReLU nets carry 2 for norm bookkeeping only.
    pub fn homogeneity(self) -> u32 {
        match self {
            Activation::Square => 3,
            Activation::Power(k) => k + 1,
            Activation::Relu => 2,
        }
    }

    #[inline]
    pub fn apply(self, s: f64) -> f64 {
        match self {
            Activation::Square => s * s,
            Activation::Power(k) => s.powi(k as i32),
            Activation::Relu => s.max(0.0),
        }
    }

    #[inline]
    pub fn derivative(self, s: f64) -> f64 {
        match self {
            Activation::Square => 2.0 * s,
            Activation::Power(0) => 0.0,
            Activation::Power(k) => k as f64 * s.powi(k as i32 - 1),
            Activation::Relu => {
                if s > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn is_polynomial(self) -> bool {
        !matches!(self, Activation::Relu)
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    /// `square`, `relu`, `power4`, `power:4`, `x^4`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "square" | "quadratic" | "x^2" => return Ok(Activation::Square),
            "relu" => return Ok(Activation::Relu),
            _ => {}
        }
        let digits = s
            .strip_prefix("power")
            .map(|r| r.trim_start_matches([':', '=']))
            .or_else(|| s.strip_prefix("x^"));
        digits
            .and_then(|d| d.parse::<u32>().ok())
            .filter(|&k| k >= 1)
            .map(Activation::Power)
            .ok_or_else(|| Error::InvalidTask(format!("unknown activation '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neuron {
    pub u: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    pub w: Vec<f64>,
}

impl Neuron {
    pub fn pair(u: Vec<f64>, v: Vec<f64>, w: Vec<f64>) -> Self {
        Self { u, v: Some(v), w }
    }

    pub fn parity(u: Vec<f64>, w: Vec<f64>) -> Self {
        Self { u, v: None, w }
    }

    pub fn zeros(task: &TaskSpec) -> Self {
        let d = task.input_dim();
        let c = task.num_classes();
        Self {
            u: vec![0.0; d],
            v: task.is_pair_task().then(|| vec![0.0; d]),
            w: vec![0.0; c],
        }
    }

    /// All weights in `u, v, w` order.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.u.iter().chain(self.v.iter().flatten()).chain(self.w.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.u.iter_mut().chain(self.v.iter_mut().flatten()).chain(self.w.iter_mut())
    }

    pub fn num_params(&self) -> usize {
        self.u.len() + self.v.as_ref().map_or(0, Vec::len) + self.w.len()
    }

    /// `a`-norm of the concatenated weights.
    pub fn norm(&self, a: f64) -> f64 {
        if a == 2.0 {
            self.params().map(|x| x * x).sum::<f64>().sqrt()
        } else if a.is_infinite() {
            self.params().fold(0.0, |m, x| m.max(x.abs()))
        } else {
            self.params().map(|x| x.abs().powf(a)).sum::<f64>().powf(1.0 / a)
        }
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        let mut n = self.clone();
        n.params_mut().for_each(|x| *x *= lambda);
        n
    }

    /// Pre-activation for one input.
    #[inline]
    pub fn preactivation(&self, input: &Input) -> f64 {
        match input {
            Input::Pair(a, b) => self.u[*a] + self.v.as_ref().map_or(0.0, |v| v[*b]),
            Input::Bits(x) => self.u.iter().zip(x).map(|(u, x)| u * x).sum(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub created_by: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub task: TaskSpec,
    pub activation: Activation,
    pub nu: u32,
    pub neurons: Vec<Neuron>,
    #[serde(default)]
    pub meta: Meta,
}

impl Network {
    pub fn new(task: TaskSpec, activation: Activation, neurons: Vec<Neuron>, created_by: &str) -> Self {
        Self {
            task,
            activation,
            nu: activation.homogeneity(),
            neurons,
            meta: Meta { created_by: created_by.to_string(), seed: None },
        }
    }

    pub fn zeros(task: TaskSpec, activation: Activation, width: usize) -> Self {
        let neurons = (0..width).map(|_| Neuron::zeros(&task)).collect();
        Self::new(task, activation, neurons, "zeros")
    }

    pub fn width(&self) -> usize {
        self.neurons.len()
    }

    pub fn num_classes(&self) -> usize {
        self.task.num_classes()
    }

    /// Checks vector lengths against the task and `nu` against the activation.
    pub fn validate(&self) -> Result<()> {
        if self.nu != self.activation.homogeneity() {
            return Err(Error::Shape(format!(
                "nu = {} does not match activation {:?} (expected {})",
                self.nu,
                self.activation,
                self.activation.homogeneity()
            )));
        }
        let d = self.task.input_dim();
        let c = self.task.num_classes();
        let pair = self.task.is_pair_task();
        for (i, n) in self.neurons.iter().enumerate() {
            let v_ok = match (&n.v, pair) {
                (Some(v), true) => v.len() == d,
                (None, false) => true,
                _ => false,
            };
            if n.u.len() != d || n.w.len() != c || !v_ok {
                return Err(Error::Shape(format!("neuron {i} does not match task {}", self.task)));
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &Input) -> Result<()> {
        let d = self.task.input_dim();
        let ok = match input {
            Input::Pair(a, b) => self.task.is_pair_task() && *a < d && *b < d,
            Input::Bits(x) => !self.task.is_pair_task() && x.len() == d,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("input {input:?} is not valid for task {}", self.task)))
        }
    }

    /// Logit vector for one input.
    pub fn forward(&self, input: &Input) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.forward_unchecked(input))
    }

    pub(crate) fn forward_unchecked(&self, input: &Input) -> Vec<f64> {
        let mut out = vec![0.0; self.num_classes()];
        for n in &self.neurons {
            let h = self.activation.apply(n.preactivation(input));
            if h != 0.0 {
                for (o, w) in out.iter_mut().zip(&n.w) {
                    *o += h * w;
                }
            }
        }
        out
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        let mut net = self.clone();
        net.neurons = self.neurons.iter().map(|n| n.scaled(lambda)).collect();
        net
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: Network = serde_json::from_str(s)?;
        net.validate()?;
        Ok(net)
    }
}

/// `||theta||_{a,b} = (sum_i ||omega_i||_a^b)^{1/b}`.
pub fn lab_norm(net: &Network, a: f64, b: f64) -> f64 {
    net.neurons
        .iter()
        .map(|n| n.norm(a).powf(b))
        .sum::<f64>()
        .powf(1.0 / b)
}

/// Correct logit minus the best incorrect logit.
pub fn margin_of_logits(logits: &[f64], y: usize) -> f64 {
    let best_other = logits
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != y)
        .map(|(_, &z)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    logits[y] - best_other
}

/// Lowest-index argmax.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn point_margin(net: &Network, input: &Input, y: usize) -> Result<f64> {
    if y >= net.num_classes() {
        return Err(Error::Shape(format!("label {y} out of range")));
    }
    Ok(margin_of_logits(&net.forward(input)?, y))
}

/// Validates a class weighting `tau` over the incorrect labels of `y`.
pub fn check_tau(tau: &[f64], y: usize) -> Result<()> {
    if tau.get(y).copied().unwrap_or(1.0) != 0.0 {
        return Err(Error::InvalidWeighting(format!("tau must put zero weight on the true label {y}")));
    }
    if tau.iter().any(|&t| t < 0.0 || !t.is_finite()) {
        return Err(Error::InvalidWeighting("tau entries must be finite and non-negative".into()));
    }
    let s: f64 = tau.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidWeighting(format!("tau sums to {s}, not 1")));
    }
    Ok(())
}

/// `f[y] - sum_{y' != y} tau[y'] f[y']` on precomputed logits; `tau[y]` must be 0.
pub fn weighted_margin_of_logits(logits: &[f64], y: usize, tau: &[f64]) -> f64 {
    logits[y] - logits.iter().zip(tau).map(|(z, t)| z * t).sum::<f64>()
}

pub fn weighted_point_margin(net: &Network, input: &Input, y: usize, tau: &[f64]) -> Result<f64> {
    if tau.len() != net.num_classes() || y >= net.num_classes() {
        return Err(Error::Shape("tau or label does not match the class count".into()));
    }
    check_tau(tau, y)?;
    Ok(weighted_margin_of_logits(&net.forward(input)?, y, tau))
}

/// Uniform weighting `1/(|Y|-1)` over the incorrect labels.
pub fn uniform_tau(num_classes: usize, y: usize) -> Vec<f64> {
    let mut t = vec![1.0 / (num_classes as f64 - 1.0); num_classes];
    t[y] = 0.0;
    t
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginReport {
    pub margins: Vec<f64>,
    pub min_margin: f64,
    /// Lowest index attaining the minimum.
    pub argmin: usize,
    /// All points within the relative tolerance of the minimum.
    pub argmin_set: Vec<usize>,
    pub norm_a: f64,
    pub norm_b: f64,
    pub norm: f64,
    pub nu: u32,
    pub normalized_margin: f64,
    pub accuracy: f64,
}

impl MarginReport {
    pub fn on_margin_fraction(&self) -> f64 {
        self.argmin_set.len() as f64 / self.margins.len() as f64
    }
}

/// All logits of the dataset, evaluated in parallel but returned in index order.
pub fn dataset_logits(net: &Network, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    net.validate()?;
    if net.task != data.task {
        return Err(Error::Shape(format!("network task {} differs from dataset task {}", net.task, data.task)));
    }
    Ok(data.inputs.par_iter().map(|x| net.forward_unchecked(x)).collect())
}

pub fn dataset_margin(net: &Network, data: &Dataset, a: f64, b: f64) -> Result<MarginReport> {
    dataset_margin_tol(net, data, a, b, ANALYTIC_MARGIN_TOL)
}

/// Margin report with a relative argmin tolerance `rel_tol * max(1, |h|)`.
pub fn dataset_margin_tol(net: &Network, data: &Dataset, a: f64, b: f64, rel_tol: f64) -> Result<MarginReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if a < 1.0 || b < 1.0 {
        return Err(Error::InvalidTask(format!("L_(a,b) norm needs a, b >= 1, got ({a}, {b})")));
    }
    let logits = dataset_logits(net, data)?;
    Ok(margin_report_from_logits(net, &logits, &data.labels, a, b, rel_tol))
}

pub(crate) fn margin_report_from_logits(
    net: &Network,
    logits: &[Vec<f64>],
    labels: &[usize],
    a: f64,
    b: f64,
    rel_tol: f64,
) -> MarginReport {
    let margins: Vec<f64> = logits.iter().zip(labels).map(|(z, &y)| margin_of_logits(z, y)).collect();
    let mut argmin = 0;
    for (i, &g) in margins.iter().enumerate() {
        if g < margins[argmin] {
            argmin = i;
        }
    }
    let h = margins[argmin];
    let tol = rel_tol * h.abs().max(1.0);
    let argmin_set = margins
        .iter()
        .enumerate()
        .filter(|(_, &g)| g - h <= tol)
        .map(|(i, _)| i)
        .collect();
    let correct = logits.iter().zip(labels).filter(|(z, &y)| argmax(z) == y && margin_of_logits(z, y) > 0.0).count();
    let norm = lab_norm(net, a, b);
    let normalized_margin = if norm > 0.0 { h / norm.powi(net.nu as i32) } else { 0.0 };
    MarginReport {
        margins,
        min_margin: h,
        argmin,
        argmin_set,
        norm_a: a,
        norm_b: b,
        norm,
        nu: net.nu,
        normalized_margin,
        accuracy: correct as f64 / labels.len() as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::build_dataset;

    fn modular(p: usize) -> TaskSpec {
        TaskSpec::Modular { p }
    }

    #[test]
    fn zero_network_has_zero_logits_and_margin() {
        let net = Network::zeros(modular(5), Activation::Square, 3);
        assert_eq!(net.forward(&Input::Pair(1, 2)).unwrap(), vec![0.0; 5]);
        let data = build_dataset(&modular(5)).unwrap();
        let r = dataset_margin(&net, &data, 2.0, 3.0).unwrap();
        assert_eq!(r.min_margin, 0.0);
        assert_eq!(r.normalized_margin, 0.0);
        assert_eq!(r.argmin_set.len(), 25);
    }

    #[test]
    fn one_hot_neuron_gives_four_w() {
        let mut u = vec![0.0; 5];
        let mut v = vec![0.0; 5];
        u[1] = 1.0;
        v[3] = 1.0;
        let w = vec![0.5, -1.0, 2.0, 0.0, 3.0];
        let net = Network::new(modular(5), Activation::Square, vec![Neuron::pair(u, v, w.clone())], "test");
        let out = net.forward(&Input::Pair(1, 3)).unwrap();
        let want: Vec<f64> = w.iter().map(|x| 4.0 * x).collect();
        assert_eq!(out, want);
    }

    #[test]
    fn doubling_weights_scales_logits_by_eight() {
        let n = Neuron::pair(vec![0.3, -0.2, 0.1], vec![0.7, 0.4, -0.9], vec![1.0, -0.5, 0.25]);
        let net = Network::new(modular(3), Activation::Square, vec![n], "test");
        let x = Input::Pair(2, 1);
        let base = net.forward(&x).unwrap();
        let doubled = net.scaled(2.0).forward(&x).unwrap();
        for (a, b) in base.iter().zip(doubled) {
            assert!((8.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn margin_examples() {
        assert_eq!(margin_of_logits(&[3.0, 1.0, 1.0], 0), 2.0);
        assert_eq!(margin_of_logits(&[2.0, 2.0, 2.0], 1), 0.0);
        let tau = [0.0, 0.5, 0.5];
        assert_eq!(weighted_margin_of_logits(&[3.0, 1.0, 1.0], 0, &tau), 2.0);
        let z = [3.0, 2.0, 0.0];
        assert_eq!(weighted_margin_of_logits(&z, 0, &tau), 2.0);
        assert_eq!(margin_of_logits(&z, 0), 1.0);
    }

    #[test]
    fn tau_validation() {
        assert!(check_tau(&[0.0, 0.5, 0.5], 0).is_ok());
        assert!(check_tau(&[0.0, 0.5, 0.4], 0).is_err());
        assert!(check_tau(&[0.1, 0.5, 0.4], 0).is_err());
        assert!(check_tau(&[0.0, 1.5, -0.5], 0).is_err());
        let t = uniform_tau(5, 2);
        assert!(check_tau(&t, 2).is_ok());
    }

    #[test]
    fn lab_norm_examples() {
        let unit = Neuron::pair(vec![0.6, 0.0], vec![0.0, 0.8], vec![0.0, 0.0]);
        let one = Network::new(modular(3), Activation::Square, vec![], "t");
        assert_eq!(lab_norm(&one, 2.0, 3.0), 0.0);
        let net = Network {
            neurons: vec![unit.clone()],
            ..one.clone()
        };
        assert!((lab_norm(&net, 2.0, 3.0) - 1.0).abs() < 1e-15);
        let m = 7;
        let wide = Network {
            neurons: vec![unit; m],
            ..one
        };
        assert!((lab_norm(&wide, 2.0, 3.0) - (m as f64).powf(1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let net = Network::zeros(modular(5), Activation::Square, 1);
        assert!(net.forward(&Input::Pair(5, 0)).is_err());
        assert!(net.forward(&Input::Bits(vec![1.0; 5])).is_err());
        assert!(point_margin(&net, &Input::Pair(0, 0), 9).is_err());
        let mut bad = net.clone();
        bad.neurons[0].w.pop();
        assert!(bad.validate().is_err());
        let mut bad_nu = net;
        bad_nu.nu = 2;
        assert!(bad_nu.validate().is_err());
    }

    #[test]
    fn activation_parsing() {
        assert_eq!("square".parse::<Activation>().unwrap(), Activation::Square);
        assert_eq!("power4".parse::<Activation>().unwrap(), Activation::Power(4));
        assert_eq!("x^3".parse::<Activation>().unwrap(), Activation::Power(3));
        assert_eq!("relu".parse::<Activation>().unwrap(), Activation::Relu);
        assert!("tanh".parse::<Activation>().is_err());
        assert_eq!(Activation::Power(4).homogeneity(), 5);
    }

    #[test]
    fn json_shape() {
        let net = Network::new(
            modular(3),
            Activation::Power(2),
            vec![Neuron::pair(vec![0.1, 0.2, 0.3], vec![0.0; 3], vec![1.0 / 3.0, 0.0, -1e-300])],
            "unit-test",
        );
        let s = serde_json::to_string(&net).unwrap();
        assert!(s.contains(r#""activation":{"power":2}"#));
        assert!(s.contains(r#""nu":3"#));
        assert!(s.contains(r#""created_by":"unit-test""#));
        let back = Network::from_json(&s).unwrap();
        assert_eq!(back, net);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_net(p: usize, act: Activation) -> impl Strategy<Value = Network> {
            prop::collection::vec(
                (
                    prop::collection::vec(-1.0f64..1.0, p),
                    prop::collection::vec(-1.0f64..1.0, p),
                    prop::collection::vec(-1.0f64..1.0, p),
                ),
                1..5,
            )
            .prop_map(move |ns| {
                let neurons = ns.into_iter().map(|(u, v, w)| Neuron::pair(u, v, w)).collect();
                Network::new(TaskSpec::Modular { p }, act, neurons, "proptest")
            })
        }

        fn random_parity_net() -> impl Strategy<Value = Network> {
            prop::collection::vec(
                (prop::collection::vec(-1.0f64..1.0, 4), prop::collection::vec(-1.0f64..1.0, 2)),
                1..4,
            )
            .prop_map(|ns| {
                let neurons = ns.into_iter().map(|(u, w)| Neuron::parity(u, w)).collect();
                Network::new(TaskSpec::parity(4, vec![0, 2]), Activation::Power(2), neurons, "proptest")
            })
        }

        proptest! {
            #[test]
            fn homogeneity(net in random_net(5, Activation::Square), lam in prop::sample::select(vec![0.5, 2.0, 3.0])) {
                let scaled = net.scaled(lam);
                let data = build_dataset(&net.task).unwrap();
                for x in &data.inputs {
                    let a = net.forward(x).unwrap();
                    let b = scaled.forward(x).unwrap();
                    for (a, b) in a.iter().zip(b) {
                        let want = lam.powi(3) * a;
                        prop_assert!((want - b).abs() <= 1e-9 * want.abs().max(1e-12));
                    }
                }
            }

            #[test]
            fn parity_homogeneity(net in random_parity_net(), lam in 0.5f64..3.0) {
                let scaled = net.scaled(lam);
                let data = build_dataset(&net.task).unwrap();
                for x in &data.inputs {
                    let a = net.forward(x).unwrap();
                    let b = scaled.forward(x).unwrap();
                    for (a, b) in a.iter().zip(b) {
                        let want = lam.powi(3) * a;
                        prop_assert!((want - b).abs() <= 1e-9 * want.abs().max(1e-12));
                    }
                }
            }

            #[test]
            fn weighted_margin_dominates(
                net in random_net(5, Activation::Square),
                raw in prop::collection::vec(0.01f64..1.0, 5),
            ) {
                let data = build_dataset(&net.task).unwrap();
                for (x, &y) in data.inputs.iter().zip(&data.labels) {
                    let mut tau = raw.clone();
                    tau[y] = 0.0;
                    let s: f64 = tau.iter().sum();
                    tau.iter_mut().for_each(|t| *t /= s);
                    let g = point_margin(&net, x, y).unwrap();
                    let gp = weighted_point_margin(&net, x, y, &tau).unwrap();
                    prop_assert!(gp >= g - 1e-12);
                }
            }

            #[test]
            fn normalized_margin_scale_invariant(net in random_net(5, Activation::Square), lam in 0.1f64..10.0) {
                let data = build_dataset(&net.task).unwrap();
                let a = dataset_margin(&net, &data, 2.0, 3.0).unwrap().normalized_margin;
                let b = dataset_margin(&net.scaled(lam), &data, 2.0, 3.0).unwrap().normalized_margin;
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12));
            }

            #[test]
            fn json_round_trip_is_bit_exact(net in random_net(5, Activation::Relu)) {
                let back = Network::from_json(&net.to_json().unwrap()).unwrap();
                let data = build_dataset(&net.task).unwrap();
                for x in &data.inputs {
                    let a = net.forward(x).unwrap();
                    let b = back.forward(x).unwrap();
                    prop_assert_eq!(
                        a.iter().map(|z| z.to_bits()).collect::<Vec<_>>(),
                        b.iter().map(|z| z.to_bits()).collect::<Vec<_>>()
                    );
                }
            }
        }
    }
}
