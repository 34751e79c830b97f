//! Closed-form margins, optimality certificates, the single-neuron oracle and
//! the class-weighting solver for general groups.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constructions::CoeffMatrices;
use crate::error::{Error, Result};
use crate::group::{character_table, irreps, negativity_condition, CharacterTable, Group, GroupKind};
use crate::net::{argmax, check_tau, dataset_logits, lab_norm, Activation, Network, Neuron};
use crate::spectra::dft;
use crate::tasks::{Dataset, Input, TaskSpec};

/// Closed-form maximum normalized margin for a task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoreticalGamma {
    pub value: f64,
    /// `(a, b)` of the norm the value refers to.
    pub norm: (f64, f64),
    /// False when the group fails the negativity condition, so the value is
    /// only what the formula gives.
    pub certified: bool,
}

pub fn gamma_cyclic(p: usize) -> f64 {
    let p = p as f64;
    (2.0f64 / 27.0).sqrt() / (p.sqrt() * (p - 1.0))
}

pub fn gamma_parity(k: usize) -> f64 {
    let fact: f64 = (1..=k).map(|i| i as f64).product();
    fact * (2.0 * ((k + 1) as f64).powi(-((k + 1) as i32))).sqrt()
}

/// `2 / (3 sqrt(3|G|)) / sum_{n>=2} d_n^{2.5}`.
pub fn gamma_group(order: usize, dims: &[usize]) -> f64 {
    let s: f64 = dims.iter().skip(1).map(|&d| (d as f64).powf(2.5)).sum();
    2.0 / (3.0 * (3.0 * order as f64).sqrt()) / s
}

pub fn theoretical_gamma(task: &TaskSpec) -> Result<TheoreticalGamma> {
    task.validate()?;
    Ok(match task {
        TaskSpec::Parity { k, .. } => TheoreticalGamma { value: gamma_parity(*k), norm: (2.0, (k + 1) as f64), certified: true },
        TaskSpec::Modular { p } | TaskSpec::Group { group: GroupKind::Cyclic { p } } => {
            TheoreticalGamma { value: gamma_cyclic(*p), norm: (2.0, 3.0), certified: true }
        }
        TaskSpec::Group { group } => {
            let g = Group::new(*group)?;
            let table = character_table(&irreps(&g)?, &g)?;
            TheoreticalGamma {
                value: gamma_group(g.order(), &table.dims),
                norm: (2.0, 3.0),
                certified: negativity_condition(&table).all_negative,
            }
        }
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateReport {
    pub tol: f64,
    pub min_margin: f64,
    /// `(max g - min g) / |h|` over the dataset.
    pub uniform_margin_deviation: f64,
    pub uniform_margin_ok: bool,
    /// Max over inputs of the incorrect-logit range, relative to `|h|`.
    pub c1_spread: f64,
    pub c1_ok: bool,
    pub gamma_theory: f64,
    pub gamma_measured: f64,
    pub rel_error: f64,
    pub gamma_ok: bool,
    /// Theory value is backed by the theorem hypotheses.
    pub theory_certified: bool,
    pub passed: bool,
}

/// Checks uniform margin, equal incorrect logits and the measured normalized
/// margin against the closed form, all at relative tolerance `tol`.
pub fn certify_network(net: &Network, data: &Dataset, tol: f64) -> Result<CertificateReport> {
    if !net.activation.is_polynomial() {
        return Err(Error::InvalidTask("certificates need a square or power activation".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let theory = theoretical_gamma(&net.task)?;
    let logits = dataset_logits(net, data)?;
    let mut g_min = f64::INFINITY;
    let mut g_max = f64::NEG_INFINITY;
    let mut spread: f64 = 0.0;
    for (z, &y) in logits.iter().zip(&data.labels) {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (c, &zc) in z.iter().enumerate() {
            if c != y {
                lo = lo.min(zc);
                hi = hi.max(zc);
            }
        }
        let g = z[y] - hi;
        g_min = g_min.min(g);
        g_max = g_max.max(g);
        spread = spread.max(hi - lo);
    }
    let scale = if g_min != 0.0 { g_min.abs() } else { 1.0 };
    let uniform_margin_deviation = (g_max - g_min) / scale;
    let c1_spread = spread / scale;
    let norm = lab_norm(net, theory.norm.0, theory.norm.1);
    let gamma_measured = if norm > 0.0 { g_min / norm.powi(net.nu as i32) } else { 0.0 };
    let rel_error = (gamma_measured - theory.value).abs() / theory.value;
    let uniform_margin_ok = uniform_margin_deviation <= tol;
    let c1_ok = c1_spread <= tol;
    let gamma_ok = rel_error <= tol;
    Ok(CertificateReport {
        tol,
        min_margin: g_min,
        uniform_margin_deviation,
        uniform_margin_ok,
        c1_spread,
        c1_ok,
        gamma_theory: theory.value,
        gamma_measured,
        rel_error,
        gamma_ok,
        theory_certified: theory.certified,
        passed: uniform_margin_ok && c1_ok && gamma_ok,
    })
}

/// Distribution of incorrect-label weight per datapoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    /// `1/(|Y|-1)` on every incorrect label.
    Uniform,
    /// Per-element weight for each conjugacy class: incorrect label `c` of
    /// input `(a, b)` gets `tau[class(ab c^{-1})]`. Entry 0 is ignored.
    ByClass(Vec<f64>),
}

/// One `tau` row per datapoint, validated.
pub fn point_weights(data: &Dataset, weighting: &ClassWeighting) -> Result<Vec<Vec<f64>>> {
    let k = data.num_classes;
    let rows: Vec<Vec<f64>> = match weighting {
        ClassWeighting::Uniform => data.labels.iter().map(|&y| crate::net::uniform_tau(k, y)).collect(),
        ClassWeighting::ByClass(tau) => {
            let group = data
                .task
                .group()?
                .ok_or_else(|| Error::InvalidWeighting("class weights need a group task".into()))?;
            if tau.len() != group.num_classes() {
                return Err(Error::InvalidWeighting(format!(
                    "{} class weights for {} classes",
                    tau.len(),
                    group.num_classes()
                )));
            }
            data.labels
                .iter()
                .map(|&y| {
                    (0..k)
                        .map(|c| if c == y { 0.0 } else { tau[group.class_of(group.mul(y, group.inv(c)))] })
                        .collect()
                })
                .collect()
        }
    };
    for (row, &y) in rows.iter().zip(&data.labels) {
        check_tau(row, y)?;
    }
    Ok(rows)
}

/// `E_q[psi'(omega, x, y)]` and its gradient for one neuron.
pub fn neuron_objective(
    neuron: &Neuron,
    activation: Activation,
    data: &Dataset,
    tau: &[Vec<f64>],
    q: &[f64],
) -> (f64, Neuron) {
    let mut grad = Neuron { u: vec![0.0; neuron.u.len()], v: neuron.v.as_ref().map(|v| vec![0.0; v.len()]), w: vec![0.0; neuron.w.len()] };
    let mut obj = 0.0;
    for (((x, &y), t), &qi) in data.inputs.iter().zip(&data.labels).zip(tau).zip(q) {
        if qi == 0.0 {
            continue;
        }
        let s = neuron.preactivation(x);
        let h = activation.apply(s);
        let wt = neuron.w[y] - neuron.w.iter().zip(t).map(|(w, t)| w * t).sum::<f64>();
        obj += qi * h * wt;
        for (c, gw) in grad.w.iter_mut().enumerate() {
            let coef = if c == y { 1.0 } else { 0.0 } - t[c];
            *gw += qi * h * coef;
        }
        let ds = qi * activation.derivative(s) * wt;
        match x {
            Input::Pair(a, b) => {
                grad.u[*a] += ds;
                if let Some(gv) = grad.v.as_mut() {
                    gv[*b] += ds;
                }
            }
            Input::Bits(bits) => {
                for (gu, xb) in grad.u.iter_mut().zip(bits) {
                    *gu += ds * xb;
                }
            }
        }
    }
    (obj, grad)
}

/// Direct `E_{uniform}[psi']` over the whole dataset.
pub fn expected_weighted_margin(neuron: &Neuron, activation: Activation, data: &Dataset, weighting: &ClassWeighting) -> Result<f64> {
    let tau = point_weights(data, weighting)?;
    let q = vec![1.0 / data.len() as f64; data.len()];
    Ok(neuron_objective(neuron, activation, data, &tau, &q).0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleConfig {
    pub restarts: usize,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    /// Tangential gradient norm below which a run counts as converged.
    pub grad_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { restarts: 32, steps: 2000, step_size: 0.1, seed: 0, grad_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleRun {
    pub restart: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleResult {
    pub best_objective: f64,
    pub best_restart: usize,
    pub neuron: Neuron,
    pub converged: bool,
    pub grad_norm: f64,
    pub runs: Vec<OracleRun>,
}

fn flatten(n: &Neuron) -> Vec<f64> {
    n.params().copied().collect()
}

fn unflatten(template: &Neuron, xs: &[f64]) -> Neuron {
    let mut n = template.clone();
    for (p, x) in n.params_mut().zip(xs) {
        *p = *x;
    }
    n
}

fn normalize(xs: &mut [f64]) {
    let n = xs.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        xs.iter_mut().for_each(|x| *x /= n);
    }
}

/// Maximizes `E_q[psi'(omega)]` over unit-norm neurons by projected gradient
/// ascent from random starts. `q = None` means uniform.
pub fn single_neuron_oracle(
    data: &Dataset,
    activation: Activation,
    weighting: &ClassWeighting,
    q: Option<&[f64]>,
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.restarts == 0 {
        return Err(Error::Config("oracle needs at least one restart".into()));
    }
    let tau = point_weights(data, weighting)?;
    let q: Vec<f64> = match q {
        Some(q) => {
            let s: f64 = q.iter().sum();
            if q.len() != data.len() || q.iter().any(|&x| x < 0.0) || (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidWeighting("q must be a distribution over the dataset".into()));
            }
            q.to_vec()
        }
        None => vec![1.0 / data.len() as f64; data.len()],
    };
    let template = Neuron::zeros(&data.task);

    let results: Vec<(OracleRun, Vec<f64>)> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            let mut x: Vec<f64> = (0..template.num_params()).map(|_| StandardNormal.sample(&mut rng)).collect();
            normalize(&mut x);
            let mut obj = 0.0;
            let mut gnorm = f64::INFINITY;
            for step in 0..=cfg.steps {
                let (o, g) = neuron_objective(&unflatten(&template, &x), activation, data, &tau, &q);
                let g = flatten(&g);
                let radial: f64 = g.iter().zip(&x).map(|(g, x)| g * x).sum();
                gnorm = g.iter().zip(&x).map(|(g, x)| (g - radial * x).powi(2)).sum::<f64>().sqrt();
                obj = o;
                if step == cfg.steps || gnorm <= cfg.grad_tol {
                    break;
                }
                for (xi, gi) in x.iter_mut().zip(&g) {
                    *xi += cfg.step_size * gi;
                }
                normalize(&mut x);
            }
            let run = OracleRun { restart: r, objective: obj, grad_norm: gnorm, converged: gnorm <= cfg.grad_tol };
            (run, x)
        })
        .collect();

    let mut best = 0;
    for (i, (run, _)) in results.iter().enumerate() {
        if run.objective > results[best].0.objective {
            best = i;
        }
    }
    let (best_run, x) = &results[best];
    Ok(OracleResult {
        best_objective: best_run.objective,
        best_restart: best_run.restart,
        neuron: unflatten(&template, x),
        converged: best_run.converged,
        grad_norm: best_run.grad_norm,
        runs: results.iter().map(|(r, _)| r.clone()).collect(),
    })
}

/// `2/((p-1)p^2) sum_{j != 0} u_hat(j) v_hat(j) w_hat(-j)` with `w` centred.
pub fn fourier_margin_formula(u: &[f64], v: &[f64], w: &[f64]) -> Result<f64> {
    let p = u.len();
    if v.len() != p || w.len() != p || p < 2 {
        return Err(Error::Shape("u, v, w must share a length p >= 2".into()));
    }
    let mean = w.iter().sum::<f64>() / p as f64;
    let wc: Vec<f64> = w.iter().map(|x| x - mean).collect();
    let (uh, vh, wh) = (dft(u), dft(v), dft(&wc));
    let s: f64 = (1..p).map(|j| (uh[j] * vh[j] * wh[p - j]).re).sum();
    let p = p as f64;
    Ok(2.0 / ((p - 1.0) * p * p) * s)
}

/// `2 sum_m [1 - sum_n tau_n |C_n| chi_m(C_n) / d_m] tr(alpha_m beta_m gamma_m^T) / d_m^2`,
/// where `tau` holds per-element class weights (entry 0 ignored).
pub fn rep_margin_formula(mats: &[CoeffMatrices], tau: &[f64], table: &CharacterTable) -> Result<f64> {
    if mats.len() != table.num_reps() || tau.len() != table.num_classes() {
        return Err(Error::Shape("coefficient or weight count does not match the character table".into()));
    }
    let mut total = 0.0;
    for (m, cm) in mats.iter().enumerate() {
        let d = table.dims[m] as f64;
        if cm.alpha.nrows() != table.dims[m] {
            return Err(Error::Shape(format!("rep {m} expects {d}x{d} coefficients")));
        }
        let shift: f64 = (1..table.num_classes())
            .map(|n| tau[n] * table.class_sizes[n] as f64 * table.chi[m][n] / d)
            .sum();
        total += (1.0 - shift) * cm.trace_product() / (d * d);
    }
    Ok(2.0 * total)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightingSolution {
    pub kappa_r: Vec<usize>,
    pub kappa_c: Vec<usize>,
    /// Total weight `tau_n |C_n|` per class in `kappa_c` (sums to 1).
    pub class_totals: Vec<f64>,
    /// Per-element weight for every class, zero outside `kappa_c`.
    pub tau: Vec<f64>,
    /// Rep scalings for `kappa_r` (sum to 1).
    pub lambda: Vec<f64>,
    /// `A_m / sqrt(d_m)` for every non-trivial rep, `A_m = 1 - sum tau |C| chi / d`.
    pub rep_values: Vec<f64>,
    /// `sum_m lambda_m chi_m(C_n)` for every non-trivial class.
    pub class_values: Vec<f64>,
    pub singular: bool,
    pub positive: bool,
    pub reps_dominate: bool,
    pub classes_dominate: bool,
    pub feasible: bool,
    /// Closed-form per-element weights when both subsets are full.
    pub tau_closed_form: Option<Vec<f64>>,
    pub closed_form_error: Option<f64>,
}

const CONDITION_TOL: f64 = 1e-10;

fn solve_square(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    let x = a.clone().lu().solve(&b)?;
    let resid = (&a * &x - &b).amax();
    (x.iter().all(|v| v.is_finite()) && resid <= 1e-9 * (1.0 + b.amax())).then_some(x)
}

/// Closed-form per-element class weights `tau_n = -sum_R z_R chi_R(C_n)` with
/// `z_R = d_R^{1.5} / sum d^{2.5}`.
pub fn closed_form_tau(table: &CharacterTable) -> Vec<f64> {
    let s: f64 = table.dims.iter().skip(1).map(|&d| (d as f64).powf(2.5)).sum();
    let mut tau: Vec<f64> = (0..table.num_classes())
        .map(|n| -(1..table.num_reps()).map(|r| (table.dims[r] as f64).powf(1.5) / s * table.chi[r][n]).sum::<f64>())
        .collect();
    tau[0] = 0.0;
    tau
}

/// Solves the class-weight and rep-scaling systems on subsets of the
/// character table and checks the three feasibility conditions.
pub fn solve_general_weighting(table: &CharacterTable, kappa_r: &[usize], kappa_c: &[usize]) -> Result<WeightingSolution> {
    let (nr, nc) = (table.num_reps(), table.num_classes());
    let valid = |ks: &[usize], n: usize| {
        let mut s = ks.to_vec();
        s.sort_unstable();
        s.dedup();
        s.len() == ks.len() && ks.iter().all(|&i| i >= 1 && i < n)
    };
    if kappa_r.is_empty() || kappa_r.len() != kappa_c.len() {
        return Err(Error::InvalidWeighting(format!(
            "subsets must be non-empty and of equal size, got {} reps and {} classes",
            kappa_r.len(),
            kappa_c.len()
        )));
    }
    if !valid(kappa_r, nr) || !valid(kappa_c, nc) {
        return Err(Error::InvalidWeighting("subset indices must be distinct and exclude the trivial rep/class".into()));
    }
    let k = kappa_r.len();
    let d = |m: usize| table.dims[m] as f64;
    let chi = |m: usize, n: usize| table.chi[m][n];

    // tau system: rows m in kappa_r[1..] equalize A_m/sqrt(d_m) with kappa_r[0]; last row sums T
    let coef = |m: usize, n: usize| -chi(m, n) / d(m) / d(m).sqrt();
    let mut a = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);
    let m0 = kappa_r[0];
    for (row, &m) in kappa_r.iter().enumerate().skip(1) {
        for (col, &n) in kappa_c.iter().enumerate() {
            a[(row - 1, col)] = coef(m, n) - coef(m0, n);
        }
        b[row - 1] = 1.0 / d(m0).sqrt() - 1.0 / d(m).sqrt();
    }
    for col in 0..k {
        a[(k - 1, col)] = 1.0;
    }
    b[k - 1] = 1.0;
    let totals = solve_square(a, b);

    // lambda system: columns are reps, rows equalize class values with kappa_c[0]
    let mut a = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);
    let n0 = kappa_c[0];
    for (row, &n) in kappa_c.iter().enumerate().skip(1) {
        for (col, &m) in kappa_r.iter().enumerate() {
            a[(row - 1, col)] = chi(m, n) - chi(m, n0);
        }
    }
    for col in 0..k {
        a[(k - 1, col)] = 1.0;
    }
    b[k - 1] = 1.0;
    let lambdas = solve_square(a, b);

    let full = k == nr - 1;
    let tau_closed_form = full.then(|| closed_form_tau(table));

    let (Some(totals), Some(lambdas)) = (totals, lambdas) else {
        return Ok(WeightingSolution {
            kappa_r: kappa_r.to_vec(),
            kappa_c: kappa_c.to_vec(),
            class_totals: vec![],
            tau: vec![0.0; nc],
            lambda: vec![],
            rep_values: vec![],
            class_values: vec![],
            singular: true,
            positive: false,
            reps_dominate: false,
            classes_dominate: false,
            feasible: false,
            tau_closed_form,
            closed_form_error: None,
        });
    };

    let mut tau = vec![0.0; nc];
    for (&n, t) in kappa_c.iter().zip(totals.iter()) {
        tau[n] = t / table.class_sizes[n] as f64;
    }
    let rep_values: Vec<f64> = (1..nr)
        .map(|m| {
            let am = 1.0 - kappa_c.iter().zip(totals.iter()).map(|(&n, t)| t * chi(m, n) / d(m)).sum::<f64>();
            am / d(m).sqrt()
        })
        .collect();
    let class_values: Vec<f64> = (1..nc)
        .map(|n| kappa_r.iter().zip(lambdas.iter()).map(|(&m, l)| l * chi(m, n)).sum())
        .collect();

    let positive = totals.iter().chain(lambdas.iter()).all(|&x| x > 0.0);
    let rep_level = rep_values[m0 - 1];
    let reps_dominate = (1..nr)
        .filter(|m| !kappa_r.contains(m))
        .all(|m| rep_values[m - 1] <= rep_level + CONDITION_TOL);
    let class_level = class_values[n0 - 1];
    let classes_dominate = (1..nc)
        .filter(|n| !kappa_c.contains(n))
        .all(|n| class_values[n - 1] <= class_level + CONDITION_TOL);
    let closed_form_error = tau_closed_form
        .as_ref()
        .map(|cf| cf.iter().zip(&tau).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));

    Ok(WeightingSolution {
        kappa_r: kappa_r.to_vec(),
        kappa_c: kappa_c.to_vec(),
        class_totals: totals.iter().copied().collect(),
        tau,
        lambda: lambdas.iter().copied().collect(),
        rep_values,
        class_values,
        singular: false,
        positive,
        reps_dominate,
        classes_dominate,
        feasible: positive && reps_dominate && classes_dominate,
        tau_closed_form,
        closed_form_error,
    })
}

/// Smallest folded single-frequency power among `u`, `v` and `w`.
pub fn neuron_min_folded_power(n: &Neuron) -> f64 {
    std::iter::once(&n.u)
        .chain(n.v.iter())
        .chain(std::iter::once(&n.w))
        .map(|x| crate::spectra::max_normalized_power(x, true).unwrap_or(0.0))
        .fold(1.0, f64::min)
}

/// Deviations from the optimal single-neuron shape for a parity task:
/// mass off `S`, spread of `|u_j|` against `||w||`, imbalance `w_0 + w_1`, and
/// whether the sign product agrees with `w_0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParityShape {
    pub off_support: f64,
    pub magnitude_gap: f64,
    pub w_imbalance: f64,
    pub sign_consistent: bool,
}

impl ParityShape {
    pub fn max_violation(&self) -> f64 {
        self.off_support.max(self.magnitude_gap).max(self.w_imbalance)
    }
}

pub fn parity_shape(n: &Neuron, set: &[usize]) -> ParityShape {
    let off_support = n.u.iter().enumerate().filter(|(j, _)| !set.contains(j)).map(|(_, x)| x.abs()).fold(0.0, f64::max);
    let wnorm = n.w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let magnitude_gap = set.iter().map(|&j| (n.u[j].abs() - wnorm).abs()).fold(0.0, f64::max);
    let w_imbalance = (n.w[0] + n.w[1]).abs();
    let sign: f64 = set.iter().map(|&j| n.u[j].signum()).product();
    let sign_consistent = sign * (n.w[0] - n.w[1]) > 0.0;
    ParityShape { off_support, magnitude_gap, w_imbalance, sign_consistent }
}

/// Predicted labels agree with the dataset labels everywhere.
pub fn classifies_all(net: &Network, data: &Dataset) -> Result<bool> {
    Ok(dataset_logits(net, data)?.iter().zip(&data.labels).all(|(z, &y)| argmax(z) == y && crate::net::margin_of_logits(z, y) > 0.0))
}
