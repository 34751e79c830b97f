//! Fourier and representation spectra of network weights.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::BasisVectors;
use crate::net::{Network, Neuron};
use crate::tasks::Input;

/// Largest `p` accepted by [`multidim_presence`].
pub const MAX_MULTIDIM_P: usize = 31;
/// Neurons with norm at most this fraction of the largest norm are treated as zero.
pub const ZERO_NEURON_REL: f64 = 1e-8;

/// `u_hat(j) = sum_k u(k) exp(-2 pi i j k / p)`, computed directly.
pub fn dft(u: &[f64]) -> Vec<Complex64> {
    let p = u.len();
    (0..p)
        .map(|j| {
            u.iter()
                .enumerate()
                .map(|(k, &x)| x * Complex64::from_polar(1.0, -2.0 * PI * ((j * k) % p) as f64 / p as f64))
                .sum()
        })
        .collect()
}

pub fn idft(spec: &[Complex64]) -> Vec<Complex64> {
    let p = spec.len();
    (0..p)
        .map(|k| {
            spec.iter()
                .enumerate()
                .map(|(j, &x)| x * Complex64::from_polar(1.0, 2.0 * PI * ((j * k) % p) as f64 / p as f64))
                .sum::<Complex64>()
                / p as f64
        })
        .collect()
}

/// Unnormalized power per physical frequency `1..=p/2`, combining `j` and `p-j`.
/// Index 0 of the result is the DC power.
pub fn folded_power_raw(u: &[f64]) -> Vec<f64> {
    let p = u.len();
    let spec = dft(u);
    let mut out = vec![0.0; p / 2 + 1];
    out[0] = spec[0].norm_sqr();
    for (j, s) in spec.iter().enumerate().skip(1) {
        out[j.min(p - j)] += s.norm_sqr();
    }
    out
}

/// Folded power fractions over frequencies `1..=p/2` (DC excluded).
/// `None` when the non-DC power vanishes.
pub fn folded_power(u: &[f64]) -> Option<Vec<f64>> {
    normalize_ac(&folded_power_raw(u))
}

/// Round-off floor for non-DC power, relative to total power.
const AC_FLOOR: f64 = 1e-20;

fn normalize_ac(raw: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = raw.iter().sum();
    let ac: f64 = raw[1..].iter().sum();
    if ac <= AC_FLOOR * total {
        return None;
    }
    normalize(&raw[1..])
}

fn normalize(xs: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = xs.iter().sum();
    (total > 0.0 && total.is_finite()).then(|| xs.iter().map(|x| x / total).collect())
}

/// `max_j |u_hat(j)|^2 / sum_j |u_hat(j)|^2`. Folded combines `j` and `p-j`
/// and drops DC; unfolded uses every `j` including DC.
pub fn max_normalized_power(u: &[f64], fold: bool) -> Option<f64> {
    let powers = if fold {
        folded_power(u)?
    } else {
        normalize(&dft(u).iter().map(|z| z.norm_sqr()).collect::<Vec<_>>())?
    };
    Some(powers.into_iter().fold(0.0, f64::max))
}

/// Fraction of `|u|^2` lying in each representation's basis span.
pub fn rep_power(u: &[f64], basis: &BasisVectors) -> Option<Vec<f64>> {
    normalize(&rep_power_raw(u, basis))
}

fn rep_power_raw(u: &[f64], basis: &BasisVectors) -> Vec<f64> {
    let coeffs = basis.coefficients(u);
    let order = u.len() as f64;
    (0..basis.num_reps())
        .map(|r| {
            let norm2 = order / basis.dims[r] as f64;
            coeffs[basis.rep_range(r)].iter().map(|c| c * c * norm2).sum()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub enum Analysis<'a> {
    /// Buckets: 0 = DC only, then folded frequencies `1..=(p-1)/2`.
    Fourier { p: usize },
    /// Buckets: one per representation, trivial first.
    Rep { basis: &'a BasisVectors, names: Vec<String> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeuronSpectrum {
    pub index: usize,
    pub norm: f64,
    pub nonzero: bool,
    /// Combined `u`, `v`, `w` power fractions per bucket.
    pub power: Vec<f64>,
    pub max_power: f64,
    pub dominant: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub analysis: String,
    pub buckets: Vec<String>,
    pub neurons: Vec<NeuronSpectrum>,
    pub counts: Vec<usize>,
    /// Every folded frequency (or every non-trivial rep) dominates at least one neuron.
    pub all_present: bool,
    pub mean_max_power: f64,
    pub nonzero_neurons: usize,
}

impl SpectrumReport {
    pub fn write_neuron_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "index,norm,dominant,dominant_label,max_power")?;
        for n in self.neurons.iter().filter(|n| n.nonzero) {
            let (d, label) = match n.dominant {
                Some(d) => (d.to_string(), self.buckets[d].clone()),
                None => (String::new(), String::new()),
            };
            writeln!(out, "{},{:e},{},{},{:e}", n.index, n.norm, d, label, n.max_power)?;
        }
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "bucket,label,count")?;
        for (i, (label, c)) in self.buckets.iter().zip(&self.counts).enumerate() {
            writeln!(out, "{i},{label},{c}")?;
        }
        Ok(())
    }
}

fn neuron_parts(n: &Neuron) -> impl Iterator<Item = &Vec<f64>> {
    std::iter::once(&n.u).chain(n.v.iter()).chain(std::iter::once(&n.w))
}

fn neuron_buckets(n: &Neuron, analysis: &Analysis<'_>) -> Vec<f64> {
    let mut total: Option<Vec<f64>> = None;
    for part in neuron_parts(n) {
        let raw = match analysis {
            Analysis::Fourier { .. } => folded_power_raw(part),
            Analysis::Rep { basis, .. } => rep_power_raw(part, basis),
        };
        match total.as_mut() {
            None => total = Some(raw),
            Some(t) => t.iter_mut().zip(raw).for_each(|(t, r)| *t += r),
        }
    }
    total.unwrap_or_default()
}

/// Per-neuron dominant frequency or representation plus a census.
pub fn census(net: &Network, analysis: &Analysis<'_>) -> Result<SpectrumReport> {
    if !net.task.is_pair_task() {
        return Err(Error::InvalidTask("spectra are defined for pair tasks".into()));
    }
    let dim = net.task.input_dim();
    let (buckets, name) = match analysis {
        Analysis::Fourier { p } => {
            if *p != dim {
                return Err(Error::Shape(format!("Fourier analysis at p = {p} on vectors of length {dim}")));
            }
            let mut b = vec!["dc".to_string()];
            b.extend((1..=p / 2).map(|z| format!("freq{z}")));
            (b, "fourier")
        }
        Analysis::Rep { basis, names } => {
            if basis.vectors.first().map_or(0, Vec::len) != dim || names.len() != basis.num_reps() {
                return Err(Error::Shape("basis does not match the network".into()));
            }
            (names.clone(), "rep")
        }
    };
    let max_norm = net.neurons.iter().map(|n| n.norm(2.0)).fold(0.0, f64::max);
    let neurons: Vec<NeuronSpectrum> = net
        .neurons
        .par_iter()
        .enumerate()
        .map(|(index, n)| {
            let norm = n.norm(2.0);
            let nonzero = max_norm > 0.0 && norm > ZERO_NEURON_REL * max_norm;
            if !nonzero {
                return NeuronSpectrum { index, norm, nonzero, power: vec![0.0; buckets.len()], max_power: 0.0, dominant: None };
            }
            let raw = neuron_buckets(n, analysis);
            let (power, max_power, dominant) = match analysis {
                Analysis::Fourier { .. } => {
                    // fractions exclude DC; a neuron with no non-DC power goes to bucket 0
                    match normalize_ac(&raw) {
                        Some(f) => {
                            let d = crate::net::argmax(&f);
                            let mut power = vec![0.0];
                            power.extend(&f);
                            (power, f[d], d + 1)
                        }
                        None => {
                            let mut power = vec![0.0; raw.len()];
                            power[0] = 1.0;
                            (power, 1.0, 0)
                        }
                    }
                }
                Analysis::Rep { .. } => {
                    let f = normalize(&raw).unwrap_or_else(|| vec![0.0; raw.len()]);
                    let d = crate::net::argmax(&f);
                    let m = f[d];
                    (f, m, d)
                }
            };
            NeuronSpectrum { index, norm, nonzero, power, max_power, dominant: Some(dominant) }
        })
        .collect();

    let mut counts = vec![0; buckets.len()];
    for d in neurons.iter().filter_map(|n| n.dominant) {
        counts[d] += 1;
    }
    let live: Vec<&NeuronSpectrum> = neurons.iter().filter(|n| n.nonzero).collect();
    let mean_max_power = if live.is_empty() { 0.0 } else { live.iter().map(|n| n.max_power).sum::<f64>() / live.len() as f64 };
    let all_present = !live.is_empty() && counts[1..].iter().all(|&c| c > 0);
    Ok(SpectrumReport {
        analysis: name.to_string(),
        buckets,
        nonzero_neurons: live.len(),
        neurons,
        counts,
        all_present,
        mean_max_power,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultidimReport {
    pub p: usize,
    /// `|f_hat(j, j, -j)|` for `j = 1..p-1`.
    pub magnitudes: Vec<f64>,
    pub present: Vec<bool>,
    /// Presence per folded frequency `1..=(p-1)/2`.
    pub folded_present: Vec<bool>,
    pub threshold: f64,
}

impl MultidimReport {
    pub fn num_present_folded(&self) -> usize {
        self.folded_present.iter().filter(|&&b| b).count()
    }
}

/// Evaluates `f_hat(j, j, -j) = sum_{a,b,c} f(a,b)[c] w^{-j(a+b-c)}` on the full grid.
pub fn multidim_presence(net: &Network, p: usize) -> Result<MultidimReport> {
    if net.task.cyclic_order() != Some(p) {
        return Err(Error::InvalidTask(format!("multidimensional transform needs a cyclic task of order {p}")));
    }
    if p > MAX_MULTIDIM_P {
        return Err(Error::InvalidTask(format!("p = {p} exceeds the grid limit {MAX_MULTIDIM_P}")));
    }
    net.validate()?;
    // g(s) = sum of f over a + b - c = s (mod p)
    let mut g = vec![0.0; p];
    let mut max_abs: f64 = 0.0;
    let mut h = f64::INFINITY;
    for a in 0..p {
        for b in 0..p {
            let z = net.forward(&Input::Pair(a, b))?;
            h = h.min(crate::net::margin_of_logits(&z, (a + b) % p));
            for (c, zc) in z.iter().enumerate() {
                g[(a + b + p - c) % p] += zc;
                max_abs = max_abs.max(zc.abs());
            }
        }
    }
    let scale = if h != 0.0 { h.abs() } else { max_abs };
    let threshold = 1e-6 * (p * p) as f64 * scale;
    let spec = dft(&g);
    let magnitudes: Vec<f64> = spec[1..].iter().map(|z| z.norm()).collect();
    let present: Vec<bool> = magnitudes.iter().map(|&m| m > threshold).collect();
    let folded_present = (1..=(p - 1) / 2).map(|z| present[z - 1] || present[p - z - 1]).collect();
    Ok(MultidimReport { p, magnitudes, present, folded_present, threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructions::{build_cyclic, build_cyclic_subnetwork, build_group_trace, build_memorization_addition};
    use crate::group::{basis_vectors, irreps, Group, GroupKind};
    use crate::net::Activation;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_vector() {
        let s = dft(&[2.0; 7]);
        assert!((s[0].re - 14.0).abs() < 1e-12);
        assert!(s[1..].iter().all(|z| z.norm() < 1e-12));
        assert_eq!(folded_power(&[2.0; 7]), None);
        assert_eq!(max_normalized_power(&[2.0; 7], false), Some(1.0));
    }

    #[test]
    fn cosine_has_two_peaks() {
        let p = 11;
        let u: Vec<f64> = (0..p).map(|a| (2.0 * PI * 3.0 * a as f64 / p as f64).cos()).collect();
        let s = dft(&u);
        for (j, z) in s.iter().enumerate() {
            let want = if j == 3 || j == 8 { p as f64 / 2.0 } else { 0.0 };
            assert!((z.norm() - want).abs() < 1e-10);
        }
        assert!((max_normalized_power(&u, true).unwrap() - 1.0).abs() < 1e-12);
        assert!((max_normalized_power(&u, false).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_hot_is_flat() {
        let mut u = vec![0.0; 13];
        u[4] = 1.0;
        let m = max_normalized_power(&u, true).unwrap();
        assert!((m - 2.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn cyclic_census() {
        let net = build_cyclic(5).unwrap();
        let r = census(&net, &Analysis::Fourier { p: 5 }).unwrap();
        assert_eq!(r.counts, vec![0, 8, 8]);
        assert!(r.all_present);
        assert!((r.mean_max_power - 1.0).abs() < 1e-12);
        for (i, n) in r.neurons.iter().enumerate() {
            assert_eq!(n.dominant, Some(i / 8 + 1));
        }
    }

    #[test]
    fn s3_rep_census() {
        let g = Group::new(GroupKind::Symmetric { n: 3 }).unwrap();
        let reps = irreps(&g).unwrap();
        let basis = basis_vectors(&reps, &g).unwrap();
        let net = build_group_trace(&g, &reps).unwrap();
        let names = reps.iter().map(|r| r.name.clone()).collect();
        let r = census(&net, &Analysis::Rep { basis: &basis, names }).unwrap();
        assert_eq!(r.counts, vec![0, 2, 16]);
        assert!(r.all_present);
        assert!(r.neurons.iter().all(|n| (n.max_power - 1.0).abs() < 1e-12));
        let frac = rep_power(&[1.0; 6], &basis).unwrap();
        assert!((frac[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn memorization_census_is_flat() {
        let net = build_memorization_addition(5).unwrap();
        let r = census(&net, &Analysis::Fourier { p: 5 }).unwrap();
        for n in &r.neurons {
            assert!(n.max_power <= 0.5 + 1e-9);
            for part in neuron_parts(&net.neurons[n.index]) {
                assert!((max_normalized_power(part, true).unwrap() - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_neurons_are_skipped() {
        let mut net = build_cyclic(5).unwrap();
        net.neurons[3] = net.neurons[3].scaled(0.0);
        let r = census(&net, &Analysis::Fourier { p: 5 }).unwrap();
        assert_eq!(r.nonzero_neurons, 15);
        assert_eq!(r.counts.iter().sum::<usize>(), 15);
        let mut csv = Vec::new();
        r.write_neuron_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 16);
    }

    #[test]
    fn multidim_full_and_single() {
        let full = multidim_presence(&build_cyclic(5).unwrap(), 5).unwrap();
        assert!(full.present.iter().all(|&b| b));
        let sub = multidim_presence(&build_cyclic_subnetwork(7, &[2]).unwrap(), 7).unwrap();
        assert_eq!(sub.present, vec![false, true, false, false, true, false]);
        assert_eq!(sub.num_present_folded(), 1);
        let zero = Network::zeros(crate::tasks::TaskSpec::Modular { p: 5 }, Activation::Square, 2);
        assert!(multidim_presence(&zero, 5).unwrap().present.iter().all(|&b| !b));
        assert!(multidim_presence(&build_cyclic(37).unwrap(), 37).is_err());
    }

    #[test]
    fn rep_power_is_basis_invariant() {
        let g = Group::new(GroupKind::Symmetric { n: 4 }).unwrap();
        let reps = irreps(&g).unwrap();
        let basis = basis_vectors(&reps, &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
        let before = rep_power(&u, &basis).unwrap();
        // rotate the 9-dimensional block of the first 3-dimensional irrep
        let r = reps.iter().position(|r| r.dim == 3).unwrap();
        let range = basis.rep_range(r);
        let k = range.len();
        let m = nalgebra::DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        let q = m.qr().q();
        let mut rotated = basis.clone();
        for a in 0..k {
            let mut v = vec![0.0; 24];
            for b in 0..k {
                for (x, y) in v.iter_mut().zip(&basis.vectors[range.start + b]) {
                    *x += q[(a, b)] * y;
                }
            }
            rotated.vectors[range.start + a] = v;
        }
        let after = rep_power(&u, &rotated).unwrap();
        for (x, y) in before.iter().zip(after) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((before.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn parseval_and_round_trip(u in prop::collection::vec(-1.0f64..1.0, 2..20)) {
            let s = dft(&u);
            let lhs: f64 = s.iter().map(|z| z.norm_sqr()).sum();
            let rhs = u.len() as f64 * u.iter().map(|x| x * x).sum::<f64>();
            prop_assert!((lhs - rhs).abs() < 1e-9 * rhs.max(1.0));
            let back = idft(&s);
            for (a, b) in u.iter().zip(back) {
                prop_assert!((a - b.re).abs() < 1e-10 && b.im.abs() < 1e-10);
            }
            for j in 1..u.len() {
                prop_assert!((s[j] - s[u.len() - j].conj()).norm() < 1e-10);
            }
        }
    }
}
