//! Analytic networks: the cyclic, parity and group-trace max-margin
//! constructions and the one-hot memorization baseline.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{character_table, negativity_condition, BasisVectors, Group, GroupKind, Irrep};
use crate::net::{lab_norm, Activation, Network, Neuron};
use crate::tasks::TaskSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTriple {
    pub theta_u: f64,
    pub theta_v: f64,
    pub theta_w: f64,
}

impl PhaseTriple {
    const fn new(theta_u: f64, theta_v: f64, theta_w: f64) -> Self {
        Self { theta_u, theta_v, theta_w }
    }

    /// `theta_u + theta_v - theta_w` reduced to `(-pi, pi]`.
    pub fn phase_defect(&self) -> f64 {
        let d = (self.theta_u + self.theta_v - self.theta_w).rem_euclid(2.0 * PI);
        if d > PI {
            d - 2.0 * PI
        } else {
            d
        }
    }
}

/// The eight phase triples used per frequency. Consecutive entries form pairs
/// that differ by `pi` in `v` and `w`.
pub const CYCLIC_PHASES: [PhaseTriple; 8] = [
    PhaseTriple::new(0.0, 0.0, 0.0),
    PhaseTriple::new(0.0, PI, PI),
    PhaseTriple::new(FRAC_PI_2, -FRAC_PI_2, 0.0),
    PhaseTriple::new(FRAC_PI_2, FRAC_PI_2, PI),
    PhaseTriple::new(-FRAC_PI_2, 0.0, -FRAC_PI_2),
    PhaseTriple::new(-FRAC_PI_2, PI, FRAC_PI_2),
    PhaseTriple::new(0.0, -FRAC_PI_2, -FRAC_PI_2),
    PhaseTriple::new(0.0, FRAC_PI_2, FRAC_PI_2),
];

/// `a -> amp * cos(theta + 2 pi zeta a / p)`.
pub fn sampled_cosine(p: usize, zeta: usize, theta: f64, amp: f64) -> Vec<f64> {
    (0..p)
        .map(|a| amp * (theta + 2.0 * PI * ((zeta * a) % p) as f64 / p as f64).cos())
        .collect()
}

/// Unit-norm neuron at frequency `zeta` with the given phases.
pub fn cyclic_neuron(p: usize, zeta: usize, phase: PhaseTriple) -> Neuron {
    let amp = (2.0 / (3.0 * p as f64)).sqrt();
    Neuron::pair(
        sampled_cosine(p, zeta, phase.theta_u, amp),
        sampled_cosine(p, zeta, phase.theta_v, amp),
        sampled_cosine(p, zeta, phase.theta_w, amp),
    )
}

/// Eight neurons per listed frequency, uniformly scaled to `L_{2,3}` norm 1.
pub fn build_cyclic_subnetwork(p: usize, zetas: &[usize]) -> Result<Network> {
    let task = TaskSpec::Modular { p };
    task.validate()?;
    if zetas.is_empty() || zetas.iter().any(|&z| z == 0 || z > (p - 1) / 2) {
        return Err(Error::InvalidTask(format!("frequencies {zetas:?} must lie in 1..={}", (p - 1) / 2)));
    }
    let lambda = (8.0 * zetas.len() as f64).powf(-1.0 / 3.0);
    let neurons = zetas
        .iter()
        .flat_map(|&z| CYCLIC_PHASES.iter().map(move |&ph| cyclic_neuron(p, z, ph).scaled(lambda)))
        .collect();
    Ok(Network::new(task, Activation::Square, neurons, "construct:cyclic"))
}

/// Width `4(p-1)` quadratic network for addition mod `p`.
pub fn build_cyclic(p: usize) -> Result<Network> {
    if p < 3 || !crate::group::is_prime(p) {
        return Err(Error::NotPrime(p));
    }
    let zetas: Vec<usize> = (1..=(p - 1) / 2).collect();
    build_cyclic_subnetwork(p, &zetas)
}

/// Sign patterns with first entry `+1`, lexicographic with `+1` before `-1`.
pub fn parity_sign_patterns(k: usize) -> Vec<Vec<f64>> {
    (0..1usize << (k - 1))
        .map(|i| {
            std::iter::once(1.0)
                .chain((1..k).map(|t| if (i >> (k - 1 - t)) & 1 == 1 { -1.0 } else { 1.0 }))
                .collect()
        })
        .collect()
}

/// `2^{k-1}` power-`k` neurons computing a multiple of `prod_{i in S} x_i (1, -1)`.
pub fn build_parity(n: usize, set: &[usize]) -> Result<Network> {
    let task = TaskSpec::parity(n, set.to_vec());
    task.validate()?;
    let k = set.len();
    let c = 1.0 / ((k + 1) as f64).sqrt();
    let scale = 2f64.powf(-((k - 1) as f64) / ((k + 1) as f64));
    let neurons = parity_sign_patterns(k)
        .into_iter()
        .map(|sigma| {
            let mut u = vec![0.0; n];
            for (&j, s) in set.iter().zip(&sigma) {
                u[j] = s * c;
            }
            let sign: f64 = sigma.iter().product();
            let wv = sign * c * FRAC_1_SQRT_2;
            Neuron::parity(u, vec![wv, -wv]).scaled(scale)
        })
        .collect();
    Ok(Network::new(task, Activation::Power(k as u32), neurons, "construct:parity"))
}

/// Basis-vector coefficients of one neuron restricted to one representation:
/// `u = sum_{ij} alpha[i,j] rho_{(i,j)}` and likewise for `v`, `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffMatrices {
    pub alpha: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

impl CoeffMatrices {
    pub fn zeros(d: usize) -> Self {
        Self {
            alpha: DMatrix::zeros(d, d),
            beta: DMatrix::zeros(d, d),
            gamma: DMatrix::zeros(d, d),
        }
    }

    /// One matrix triple per representation, in basis order.
    pub fn from_neuron(neuron: &Neuron, basis: &BasisVectors) -> Result<Vec<Self>> {
        let v = neuron
            .v
            .as_ref()
            .ok_or_else(|| Error::Shape("coefficient matrices need a pair-task neuron".into()))?;
        let (a, b, c) = (basis.coefficients(&neuron.u), basis.coefficients(v), basis.coefficients(&neuron.w));
        Ok((0..basis.num_reps())
            .map(|r| {
                let d = basis.dims[r];
                let range = basis.rep_range(r);
                Self {
                    alpha: DMatrix::from_row_slice(d, d, &a[range.clone()]),
                    beta: DMatrix::from_row_slice(d, d, &b[range.clone()]),
                    gamma: DMatrix::from_row_slice(d, d, &c[range]),
                }
            })
            .collect())
    }

    /// Inverse of [`CoeffMatrices::from_neuron`].
    pub fn to_neuron(mats: &[Self], basis: &BasisVectors) -> Neuron {
        let flat = |pick: fn(&Self) -> &DMatrix<f64>| {
            let coeffs: Vec<f64> = mats.iter().flat_map(|m| pick(m).transpose().iter().copied().collect::<Vec<_>>()).collect();
            basis.combine(&coeffs)
        };
        Neuron::pair(flat(|m| &m.alpha), flat(|m| &m.beta), flat(|m| &m.gamma))
    }

    pub fn trace_product(&self) -> f64 {
        (&self.alpha * &self.beta * self.gamma.transpose()).trace()
    }
}

/// Trace network for a symmetric group: `2 d^3` neurons per non-trivial irrep,
/// rescaled per irrep by `d^{1/3}/Delta` to unit `L_{2,3}` norm.
pub fn build_group_trace(group: &Group, irreps: &[Irrep]) -> Result<Network> {
    let table = character_table(irreps, group)?;
    let report = negativity_condition(&table);
    if !report.all_negative {
        let bad = report.offending();
        return Err(Error::HypothesisViolated {
            classes: bad.iter().map(|&c| group.class_label(c)).collect(),
            sums: bad.iter().map(|&c| report.sums[c - 1]).collect(),
        });
    }
    let order = group.order();
    let c = 1.0 / (3.0 * order as f64).sqrt();
    let entry = |rep: &Irrep, i: usize, j: usize| -> Vec<f64> { (0..order).map(|g| c * rep.matrices[g][(i, j)]).collect() };

    let mut blocks: Vec<(f64, Vec<Neuron>)> = Vec::new();
    for rep in irreps.iter().skip(1) {
        let d = rep.dim;
        let mut neurons = Vec::with_capacity(2 * d * d * d);
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let u = entry(rep, i, j);
                    let v = entry(rep, j, k);
                    let w = entry(rep, i, k);
                    let nv: Vec<f64> = v.iter().map(|x| -x).collect();
                    let nw: Vec<f64> = w.iter().map(|x| -x).collect();
                    neurons.push(Neuron::pair(u.clone(), v, w));
                    neurons.push(Neuron::pair(u, nv, nw));
                }
            }
        }
        blocks.push(((d as f64).powf(1.0 / 3.0), neurons));
    }

    let task = TaskSpec::Group { group: group.kind() };
    let unnormalized: Vec<Neuron> = blocks
        .iter()
        .flat_map(|(s, ns)| ns.iter().map(move |n| n.scaled(*s)))
        .collect();
    let delta = lab_norm(&Network::new(task.clone(), Activation::Square, unnormalized.clone(), ""), 2.0, 3.0);
    let neurons = unnormalized.into_iter().map(|n| n.scaled(1.0 / delta)).collect();
    Ok(Network::new(task, Activation::Square, neurons, "construct:group-trace"))
}

/// Convenience wrapper building the group and its irreps from a kind.
pub fn build_group_trace_for(kind: GroupKind) -> Result<Network> {
    let group = Group::new(kind)?;
    let irreps = crate::group::irreps(&group)?;
    build_group_trace(&group, &irreps)
}

/// Width `2p^2` network whose output is exactly the indicator of `target[a*p + b]`.
pub fn build_memorization(p: usize, target: &[usize]) -> Result<Network> {
    let task = TaskSpec::Modular { p };
    task.validate()?;
    if target.len() != p * p || target.iter().any(|&c| c >= p) {
        return Err(Error::InvalidTask(format!("target map must have {} entries below {p}", p * p)));
    }
    let one_hot = |i: usize, x: f64| {
        let mut e = vec![0.0; p];
        e[i] = x;
        e
    };
    let mut neurons = Vec::with_capacity(2 * p * p);
    for a in 0..p {
        for b in 0..p {
            let r = target[a * p + b];
            neurons.push(Neuron::pair(one_hot(a, 1.0), one_hot(b, 1.0), one_hot(r, 0.25)));
            neurons.push(Neuron::pair(one_hot(a, 1.0), one_hot(b, -1.0), one_hot(r, -0.25)));
        }
    }
    Ok(Network::new(task, Activation::Square, neurons, "construct:memorization"))
}

/// Memorization of true addition mod `p`.
pub fn build_memorization_addition(p: usize) -> Result<Network> {
    let target: Vec<usize> = (0..p * p).map(|i| (i / p + i % p) % p).collect();
    build_memorization(p, &target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{basis_vectors, irreps};
    use crate::net::{dataset_margin, margin_of_logits};
    use crate::tasks::{build_dataset, Input};
    use approx::assert_relative_eq;

    fn gamma_cyclic(p: f64) -> f64 {
        (2.0f64 / 27.0).sqrt() / (p.sqrt() * (p - 1.0))
    }

    #[test]
    fn phases_satisfy_sum_rule() {
        for ph in CYCLIC_PHASES {
            assert!(ph.phase_defect().abs() < 1e-15);
        }
    }

    #[test]
    fn cyclic_five() {
        let net = build_cyclic(5).unwrap();
        assert_eq!(net.width(), 16);
        assert_relative_eq!(lab_norm(&net, 2.0, 3.0), 1.0, max_relative = 1e-12);
        let data = build_dataset(&net.task).unwrap();
        let r = dataset_margin(&net, &data, 2.0, 3.0).unwrap();
        assert_relative_eq!(r.normalized_margin, 0.0304290, max_relative = 1e-5);
        assert_relative_eq!(r.normalized_margin, gamma_cyclic(5.0), max_relative = 1e-10);
        assert_eq!(r.argmin_set.len(), 25);
    }

    #[test]
    fn cyclic_output_shape() {
        // per-unit output is sum_zeta cos(2 pi zeta (a+b-c)/p): (p-1)/2 on the label, -1/2 elsewhere
        let p = 7;
        let net = build_cyclic(p).unwrap();
        let amp = (2.0 / (3.0 * p as f64)).sqrt();
        let lambda = (4.0 * (p as f64 - 1.0)).powf(-1.0 / 3.0);
        let unit = 4.0 * (amp * lambda).powi(3);
        let z = net.forward(&Input::Pair(3, 6)).unwrap();
        for (c, zc) in z.iter().enumerate() {
            let want = if c == 2 { 3.0 } else { -0.5 };
            assert!((zc / unit - want).abs() < 1e-12, "c={c} got {}", zc / unit);
        }
    }

    #[test]
    fn cyclic_rejects_composite() {
        assert!(build_cyclic(9).is_err());
        assert!(build_cyclic_subnetwork(7, &[4]).is_err());
    }

    #[test]
    fn parity_ten_four() {
        let net = build_parity(10, &[0, 1, 2, 3]).unwrap();
        assert_eq!(net.width(), 8);
        assert_eq!(net.nu, 5);
        assert_relative_eq!(lab_norm(&net, 2.0, 5.0), 1.0, max_relative = 1e-12);
        let data = build_dataset(&net.task).unwrap();
        let r = dataset_margin(&net, &data, 2.0, 5.0).unwrap();
        assert_relative_eq!(r.normalized_margin, 0.6071576, max_relative = 1e-6);
        assert_eq!(r.argmin_set.len(), 1024);
    }

    #[test]
    fn parity_output_is_pure_monomial() {
        let set = [1, 3, 4];
        let net = build_parity(5, &set).unwrap();
        let data = build_dataset(&net.task).unwrap();
        let k = 3.0f64;
        let coef = FRAC_1_SQRT_2 * 6.0 * (k + 1.0).powf(-(k + 1.0) / 2.0);
        for x in &data.inputs {
            let Input::Bits(bits) = x else { unreachable!() };
            let prod: f64 = set.iter().map(|&j| bits[j]).product();
            let z = net.forward(x).unwrap();
            assert!((z[0] - coef * prod).abs() < 1e-13);
            assert!((z[1] + coef * prod).abs() < 1e-13);
        }
    }

    #[test]
    fn parity_k_one() {
        let net = build_parity(3, &[2]).unwrap();
        assert_eq!(net.width(), 1);
        let data = build_dataset(&net.task).unwrap();
        let r = dataset_margin(&net, &data, 2.0, 2.0).unwrap();
        assert_relative_eq!(r.normalized_margin, FRAC_1_SQRT_2, max_relative = 1e-12);
    }

    #[test]
    fn sign_patterns_order() {
        let a = parity_sign_patterns(3);
        assert_eq!(a, vec![vec![1.0, 1.0, 1.0], vec![1.0, 1.0, -1.0], vec![1.0, -1.0, 1.0], vec![1.0, -1.0, -1.0]]);
    }

    #[test]
    fn s3_trace() {
        let net = build_group_trace_for(GroupKind::Symmetric { n: 3 }).unwrap();
        assert_eq!(net.width(), 18);
        assert_relative_eq!(lab_norm(&net, 2.0, 3.0), 1.0, max_relative = 1e-12);
        let data = build_dataset(&net.task).unwrap();
        let r = dataset_margin(&net, &data, 2.0, 3.0).unwrap();
        let want = 2.0 / (3.0 * 18f64.sqrt()) / (1.0 + 2f64.powf(2.5));
        assert_relative_eq!(r.normalized_margin, want, max_relative = 1e-10);
        assert_relative_eq!(r.normalized_margin, 0.023605, max_relative = 1e-5);
        for (x, &y) in data.inputs.iter().zip(&data.labels) {
            let z = net.forward(x).unwrap();
            assert_eq!(crate::net::argmax(&z), y);
            assert!(margin_of_logits(&z, y) > 0.0);
        }
    }

    #[test]
    fn trace_neurons_have_single_entry_coefficients() {
        let g = Group::new(GroupKind::Symmetric { n: 3 }).unwrap();
        let reps = irreps(&g).unwrap();
        let basis = basis_vectors(&reps, &g).unwrap();
        let net = build_group_trace(&g, &reps).unwrap();
        let n = &net.neurons[5];
        let mats = CoeffMatrices::from_neuron(n, &basis).unwrap();
        let nonzero = mats
            .iter()
            .map(|m| m.alpha.iter().filter(|x| x.abs() > 1e-12).count())
            .sum::<usize>();
        assert_eq!(nonzero, 1);
        let back = CoeffMatrices::to_neuron(&mats, &basis);
        for (a, b) in back.params().zip(n.params()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn memorization_is_an_indicator() {
        let net = build_memorization_addition(5).unwrap();
        assert_eq!(net.width(), 50);
        let data = build_dataset(&net.task).unwrap();
        for (x, &y) in data.inputs.iter().zip(&data.labels) {
            let z = net.forward(x).unwrap();
            for (c, zc) in z.iter().enumerate() {
                assert_eq!(*zc, if c == y { 1.0 } else { 0.0 });
            }
        }
        let r = dataset_margin(&net, &data, 2.0, 3.0).unwrap();
        assert_eq!(r.min_margin, 1.0);
        assert_relative_eq!(r.normalized_margin, 1.0 / (50.0 * 2.0625f64.powf(1.5)), max_relative = 1e-12);
        assert!(r.normalized_margin < gamma_cyclic(5.0));
    }

    #[test]
    fn memorization_arbitrary_target() {
        let p = 3;
        let target = vec![2, 2, 2, 0, 1, 0, 1, 1, 0];
        let net = build_memorization(p, &target).unwrap();
        for a in 0..p {
            for b in 0..p {
                let z = net.forward(&Input::Pair(a, b)).unwrap();
                assert_eq!(crate::net::argmax(&z), target[a * p + b]);
            }
        }
        assert!(build_memorization(p, &[0; 8]).is_err());
    }
}
