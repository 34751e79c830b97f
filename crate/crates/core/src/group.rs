//! Finite groups (cyclic and symmetric), their real irreducible
//! representations, character tables and the matrix-entry basis vectors.
//!
//! Element indexing is fixed: residues for `Z_p`, lexicographic rank of the
//! one-line permutation word for `S_n`. Index 0 is always the identity.
//! Composition is `(a * b)(x) = a(b(x))`.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TRACE_TOL: f64 = 1e-9;
const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GroupKind {
    Cyclic { p: usize },
    Symmetric { n: usize },
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKind::Cyclic { p } => write!(f, "z{p}"),
            GroupKind::Symmetric { n } => write!(f, "s{n}"),
        }
    }
}

impl FromStr for GroupKind {
    type Err = Error;

    /// Accepts `s3`, `S5`, `z7`, `c7`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let bad = || Error::InvalidTask(format!("unknown group '{s}' (expected s<n> or z<p>)"));
        let (head, tail) = s.split_at(1.min(s.len()));
        let k: usize = tail.parse().map_err(|_| bad())?;
        match head {
            "s" => Ok(GroupKind::Symmetric { n: k }),
            "z" | "c" => Ok(GroupKind::Cyclic { p: k }),
            _ => Err(bad()),
        }
    }
}

pub fn is_prime(p: usize) -> bool {
    if p < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= p {
        if p % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// A finite group given by its full multiplication table.
#[derive(Debug, Clone)]
pub struct Group {
    kind: GroupKind,
    order: usize,
    mul: Vec<usize>,
    inv: Vec<usize>,
    classes: Vec<Vec<usize>>,
    class_of: Vec<usize>,
    /// One-line words, only for symmetric groups.
    perms: Option<Vec<Vec<u8>>>,
}

impl Group {
    pub fn new(kind: GroupKind) -> Result<Self> {
        match kind {
            GroupKind::Cyclic { p } => {
                if p < 3 || !is_prime(p) {
                    return Err(Error::NotPrime(p));
                }
                let mul = (0..p * p).map(|i| (i / p + i % p) % p).collect();
                let inv = (0..p).map(|a| (p - a) % p).collect();
                Ok(Self::from_tables(kind, p, mul, inv, None))
            }
            GroupKind::Symmetric { n } => {
                if !(2..=6).contains(&n) {
                    return Err(Error::DegreeOutOfRange(n));
                }
                let perms = all_permutations(n);
                let order = perms.len();
                let mut mul = vec![0; order * order];
                let mut inv = vec![0; order];
                for (a, pa) in perms.iter().enumerate() {
                    for (b, pb) in perms.iter().enumerate() {
                        let c: Vec<u8> = pb.iter().map(|&x| pa[x as usize]).collect();
                        mul[a * order + b] = perm_rank(&c);
                    }
                    let mut q = vec![0u8; n];
                    for (x, &y) in pa.iter().enumerate() {
                        q[y as usize] = x as u8;
                    }
                    inv[a] = perm_rank(&q);
                }
                Ok(Self::from_tables(kind, order, mul, inv, Some(perms)))
            }
        }
    }

    fn from_tables(
        kind: GroupKind,
        order: usize,
        mul: Vec<usize>,
        inv: Vec<usize>,
        perms: Option<Vec<Vec<u8>>>,
    ) -> Self {
        // brute-force conjugation orbits, classes ordered by smallest member
        let mut class_of = vec![usize::MAX; order];
        let mut classes = Vec::new();
        for g in 0..order {
            if class_of[g] != usize::MAX {
                continue;
            }
            let id = classes.len();
            let mut members = Vec::new();
            for h in 0..order {
                let c = mul[mul[h * order + g] * order + inv[h]];
                if class_of[c] == usize::MAX {
                    class_of[c] = id;
                    members.push(c);
                }
            }
            members.sort_unstable();
            classes.push(members);
        }
        Self {
            kind,
            order,
            mul,
            inv,
            classes,
            class_of,
            perms,
        }
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn mul(&self, a: usize, b: usize) -> usize {
        self.mul[a * self.order + b]
    }

    #[inline]
    pub fn inv(&self, a: usize) -> usize {
        self.inv[a]
    }

    pub fn identity(&self) -> usize {
        0
    }

    pub fn classes(&self) -> &[Vec<usize>] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    #[inline]
    pub fn class_of(&self, g: usize) -> usize {
        self.class_of[g]
    }

    /// One-line word of a permutation (0-based images), `None` for cyclic groups.
    pub fn word(&self, g: usize) -> Option<&[u8]> {
        self.perms.as_ref().map(|p| p[g].as_slice())
    }

    /// Cycle notation on 1-based points, e.g. `(1 2)(3 4 5)`; `e` for the identity.
    /// Cyclic elements are written as residues.
    pub fn element_label(&self, g: usize) -> String {
        match self.word(g) {
            None => g.to_string(),
            Some(w) => cycle_notation(w),
        }
    }

    /// Label of a conjugacy class via its smallest-index representative.
    pub fn class_label(&self, class: usize) -> String {
        self.element_label(self.classes[class][0])
    }

    /// Cycle type (descending) for symmetric groups.
    pub fn cycle_type(&self, g: usize) -> Option<Vec<usize>> {
        self.word(g).map(cycle_type)
    }

    /// Exhaustive group-axiom check; only meant for small groups.
    pub fn check_axioms(&self) -> bool {
        let n = self.order;
        for a in 0..n {
            if self.mul(0, a) != a || self.mul(a, 0) != a {
                return false;
            }
            if self.mul(a, self.inv(a)) != 0 || self.mul(self.inv(a), a) != 0 {
                return false;
            }
            for b in 0..n {
                let ab = self.mul(a, b);
                for c in 0..n {
                    if self.mul(ab, c) != self.mul(a, self.mul(b, c)) {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn degree(&self) -> Option<usize> {
        match self.kind {
            GroupKind::Symmetric { n } => Some(n),
            GroupKind::Cyclic { .. } => None,
        }
    }
}

fn all_permutations(n: usize) -> Vec<Vec<u8>> {
    let mut cur: Vec<u8> = (0..n as u8).collect();
    let mut out = vec![cur.clone()];
    // standard next-permutation walk yields lexicographic order
    loop {
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| cur[i] < cur[i + 1]) else {
            break;
        };
        let j = (i + 1..n).rev().find(|&j| cur[j] > cur[i]).unwrap();
        cur.swap(i, j);
        cur[i + 1..].reverse();
        out.push(cur.clone());
    }
    out
}

/// Lexicographic rank via the Lehmer code.
pub(crate) fn perm_rank(p: &[u8]) -> usize {
    let n = p.len();
    let mut rank = 0;
    for i in 0..n {
        let smaller = p[i + 1..].iter().filter(|&&x| x < p[i]).count();
        rank = rank * (n - i) + smaller;
    }
    rank
}

fn cycles(w: &[u8]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; w.len()];
    let mut out = Vec::new();
    for s in 0..w.len() {
        if seen[s] {
            continue;
        }
        let mut cyc = vec![s];
        seen[s] = true;
        let mut x = w[s] as usize;
        while x != s {
            seen[x] = true;
            cyc.push(x);
            x = w[x] as usize;
        }
        out.push(cyc);
    }
    out
}

fn cycle_type(w: &[u8]) -> Vec<usize> {
    let mut t: Vec<usize> = cycles(w).iter().map(Vec::len).collect();
    t.sort_unstable_by(|a, b| b.cmp(a));
    t
}

fn cycle_notation(w: &[u8]) -> String {
    let s: String = cycles(w)
        .into_iter()
        .filter(|c| c.len() > 1)
        .map(|c| {
            let pts: Vec<String> = c.iter().map(|x| (x + 1).to_string()).collect();
            format!("({})", pts.join(" "))
        })
        .collect();
    if s.is_empty() {
        "e".to_string()
    } else {
        s
    }
}

/// A real orthogonal irreducible representation, one matrix per element.
#[derive(Debug, Clone)]
pub struct Irrep {
    pub name: String,
    pub partition: Vec<usize>,
    pub dim: usize,
    pub matrices: Vec<DMatrix<f64>>,
}

impl Irrep {
    pub fn character(&self, g: usize) -> f64 {
        self.matrices[g].trace()
    }
}

/// Integer partitions of `n` in descending lexicographic order.
pub fn partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n == 0 {
            out.push(cur.clone());
            return;
        }
        for part in (1..=n.min(max)).rev() {
            cur.push(part);
            rec(n - part, part, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, n, &mut Vec::new(), &mut out);
    out
}

/// Standard Young tableaux of a shape, each encoded by the row of every entry.
fn standard_tableaux(shape: &[usize]) -> Vec<Vec<u8>> {
    fn rec(shape: &[usize], fill: &mut Vec<usize>, rows: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        let n: usize = shape.iter().sum();
        if rows.len() == n {
            out.push(rows.clone());
            return;
        }
        for r in 0..shape.len() {
            if fill[r] < shape[r] && (r == 0 || fill[r - 1] > fill[r]) {
                fill[r] += 1;
                rows.push(r as u8);
                rec(shape, fill, rows, out);
                rows.pop();
                fill[r] -= 1;
            }
        }
    }
    let mut out = Vec::new();
    rec(shape, &mut vec![0; shape.len()], &mut Vec::new(), &mut out);
    out
}

/// Contents (column minus row) of every entry of a tableau.
fn contents(rows: &[u8]) -> Vec<i64> {
    let mut fill = [0i64; 8];
    rows.iter()
        .map(|&r| {
            let col = fill[r as usize];
            fill[r as usize] += 1;
            col - r as i64
        })
        .collect()
}

/// Young's orthogonal form of the adjacent transposition swapping `i` and `i+1`.
fn young_generator(tableaux: &[Vec<u8>], index: &HashMap<Vec<u8>, usize>, i: usize) -> DMatrix<f64> {
    let d = tableaux.len();
    let mut m = DMatrix::zeros(d, d);
    for (t, rows) in tableaux.iter().enumerate() {
        let c = contents(rows);
        let r = (c[i + 1] - c[i]) as f64;
        m[(t, t)] = 1.0 / r;
        if r.abs() > 1.0 {
            let mut swapped = rows.clone();
            swapped.swap(i, i + 1);
            let s = index[&swapped];
            m[(s, t)] = (1.0 - 1.0 / (r * r)).sqrt();
        }
    }
    m
}

fn irrep_name(shape: &[usize], n: usize) -> String {
    let ones = |k: usize| shape.len() == k + 1 && shape[1..].iter().all(|&x| x == 1);
    if shape.len() == 1 {
        "trivial".into()
    } else if shape.len() == n {
        "sign".into()
    } else if shape == [n - 1, 1] {
        "standard".into()
    } else if shape[0] == 2 && ones(n - 2) {
        "standard*sign".into()
    } else {
        let parts: Vec<String> = shape.iter().map(|x| x.to_string()).collect();
        format!("[{}]", parts.join(","))
    }
}

/// All real irreducible representations of a symmetric group via Young's
/// orthogonal form. Ordered trivial, sign, then by dimension (ties by
/// descending partition).
pub fn irreps(group: &Group) -> Result<Vec<Irrep>> {
    let n = group.degree().ok_or(Error::UnsupportedKind)?;
    let perms = group.perms.as_ref().expect("symmetric group carries words");

    let mut shapes = partitions(n);
    let trivial = shapes.remove(0);
    let sign = shapes.pop().expect("n >= 2 has the sign partition");
    let mut rest: Vec<(usize, Vec<usize>)> = shapes
        .into_iter()
        .map(|s| (standard_tableaux(&s).len(), s))
        .collect();
    rest.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    let ordered: Vec<Vec<usize>> = [trivial, sign]
        .into_iter()
        .chain(rest.into_iter().map(|(_, s)| s))
        .collect();

    // right-multiplication BFS over adjacent transpositions
    let gens: Vec<usize> = (0..n - 1)
        .map(|i| {
            let mut w: Vec<u8> = (0..n as u8).collect();
            w.swap(i, i + 1);
            perm_rank(&w)
        })
        .collect();
    debug_assert_eq!(perms.len(), group.order());

    let mut out = Vec::with_capacity(ordered.len());
    for shape in ordered {
        let tableaux = standard_tableaux(&shape);
        let index: HashMap<Vec<u8>, usize> =
            tableaux.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let d = tableaux.len();
        let gen_mats: Vec<DMatrix<f64>> =
            (0..n - 1).map(|i| young_generator(&tableaux, &index, i)).collect();

        let mut mats: Vec<Option<DMatrix<f64>>> = vec![None; group.order()];
        mats[0] = Some(DMatrix::identity(d, d));
        let mut queue = VecDeque::from([0usize]);
        while let Some(g) = queue.pop_front() {
            for (s, &gen) in gens.iter().enumerate() {
                let h = group.mul(g, gen);
                if mats[h].is_none() {
                    mats[h] = Some(mats[g].as_ref().unwrap() * &gen_mats[s]);
                    queue.push_back(h);
                }
            }
        }
        let matrices = mats
            .into_iter()
            .map(|m| m.ok_or_else(|| Error::Inconsistent("generators do not reach every element".into())))
            .collect::<Result<Vec<_>>>()?;
        out.push(Irrep {
            name: irrep_name(&shape, n),
            partition: shape,
            dim: d,
            matrices,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CharacterTable {
    /// `chi[rep][class]`
    pub chi: Vec<Vec<f64>>,
    pub class_sizes: Vec<usize>,
    pub dims: Vec<usize>,
    pub rep_names: Vec<String>,
    pub class_labels: Vec<String>,
}

impl CharacterTable {
    pub fn num_classes(&self) -> usize {
        self.class_sizes.len()
    }

    pub fn num_reps(&self) -> usize {
        self.dims.len()
    }

    pub fn group_order(&self) -> usize {
        self.class_sizes.iter().sum()
    }

    /// Largest deviation of `(1/|G|) sum_n |C_n| chi_i chi_j` from `delta_ij`.
    pub fn row_orthogonality_error(&self) -> f64 {
        let g = self.group_order() as f64;
        let mut worst: f64 = 0.0;
        for i in 0..self.num_reps() {
            for j in 0..self.num_reps() {
                let s: f64 = (0..self.num_classes())
                    .map(|n| self.class_sizes[n] as f64 * self.chi[i][n] * self.chi[j][n])
                    .sum::<f64>()
                    / g;
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - want).abs());
            }
        }
        worst
    }
}

pub fn character_table(irreps: &[Irrep], group: &Group) -> Result<CharacterTable> {
    let mut chi = Vec::with_capacity(irreps.len());
    for rep in irreps {
        let mut row = Vec::with_capacity(group.num_classes());
        for (c, members) in group.classes().iter().enumerate() {
            let x = rep.character(members[0]);
            for &g in &members[1..] {
                let y = rep.character(g);
                if (x - y).abs() > TRACE_TOL {
                    return Err(Error::Inconsistent(format!(
                        "character of {} differs within class {c}: {x} vs {y}",
                        rep.name
                    )));
                }
            }
            row.push(x);
        }
        chi.push(row);
    }
    Ok(CharacterTable {
        chi,
        class_sizes: group.classes().iter().map(Vec::len).collect(),
        dims: irreps.iter().map(|r| r.dim).collect(),
        rep_names: irreps.iter().map(|r| r.name.clone()).collect(),
        class_labels: (0..group.num_classes()).map(|c| group.class_label(c)).collect(),
    })
}

/// Matrix-entry vectors `g -> R(g)[i][j]`, rep-major then row-major.
#[derive(Debug, Clone)]
pub struct BasisVectors {
    pub vectors: Vec<Vec<f64>>,
    /// `(rep, i, j)` for each vector.
    pub owners: Vec<(usize, usize, usize)>,
    pub dims: Vec<usize>,
}

impl BasisVectors {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn num_reps(&self) -> usize {
        self.dims.len()
    }

    /// Index of the vector for `(rep, i, j)`.
    pub fn index_of(&self, rep: usize, i: usize, j: usize) -> usize {
        let offset: usize = self.dims[..rep].iter().map(|d| d * d).sum();
        offset + i * self.dims[rep] + j
    }

    /// Indices belonging to one representation.
    pub fn rep_range(&self, rep: usize) -> std::ops::Range<usize> {
        let offset: usize = self.dims[..rep].iter().map(|d| d * d).sum();
        offset..offset + self.dims[rep] * self.dims[rep]
    }

    /// Coefficients of `u` in this basis (exact, since the basis is orthogonal).
    pub fn coefficients(&self, u: &[f64]) -> Vec<f64> {
        self.vectors
            .iter()
            .zip(&self.owners)
            .map(|(rho, &(r, _, _))| {
                let norm2 = u.len() as f64 / self.dims[r] as f64;
                dot(rho, u) / norm2
            })
            .collect()
    }

    /// `sum_i coeffs[i] * rho_i`.
    pub fn combine(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.vectors.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        for (c, rho) in coeffs.iter().zip(&self.vectors) {
            if *c != 0.0 {
                for (o, x) in out.iter_mut().zip(rho) {
                    *o += c * x;
                }
            }
        }
        out
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn basis_vectors(irreps: &[Irrep], group: &Group) -> Result<BasisVectors> {
    let order = group.order();
    let mut vectors = Vec::with_capacity(order);
    let mut owners = Vec::with_capacity(order);
    for (r, rep) in irreps.iter().enumerate() {
        for i in 0..rep.dim {
            for j in 0..rep.dim {
                vectors.push((0..order).map(|g| rep.matrices[g][(i, j)]).collect::<Vec<f64>>());
                owners.push((r, i, j));
            }
        }
    }
    if vectors.len() != order {
        return Err(Error::Inconsistent(format!(
            "{} basis vectors for a group of order {order}",
            vectors.len()
        )));
    }
    let dims: Vec<usize> = irreps.iter().map(|r| r.dim).collect();
    for a in 0..order {
        let want = order as f64 / dims[owners[a].0] as f64;
        let n2 = dot(&vectors[a], &vectors[a]);
        if (n2 - want).abs() > ORTHO_TOL * want.max(1.0) {
            return Err(Error::Inconsistent(format!("basis vector {a} has squared norm {n2}, expected {want}")));
        }
        for b in a + 1..order {
            let ip = dot(&vectors[a], &vectors[b]);
            if ip.abs() > ORTHO_TOL * order as f64 {
                return Err(Error::Inconsistent(format!("basis vectors {a} and {b} overlap by {ip}")));
            }
        }
    }
    Ok(BasisVectors { vectors, owners, dims })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NegativityReport {
    /// `sum_{n>=2} d^{1.5} chi(C)` for each non-trivial class, in class order 1..K.
    pub sums: Vec<f64>,
    pub all_negative: bool,
}

impl NegativityReport {
    /// Non-trivial class indices whose sum is not negative.
    pub fn offending(&self) -> Vec<usize> {
        self.sums
            .iter()
            .enumerate()
            .filter(|(_, s)| **s >= 0.0)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

/// Evaluates `sum_{n>=2} d_{R_n}^{1.5} chi_{R_n}(C)` for every non-trivial class.
/// Rep 0 is the trivial representation and class 0 the identity.
pub fn negativity_condition(table: &CharacterTable) -> NegativityReport {
    let sums: Vec<f64> = (1..table.num_classes())
        .map(|c| {
            (1..table.num_reps())
                .map(|r| (table.dims[r] as f64).powf(1.5) * table.chi[r][c])
                .sum()
        })
        .collect();
    let all_negative = sums.iter().all(|&s| s < 0.0);
    NegativityReport { sums, all_negative }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassExport {
    pub index: usize,
    pub size: usize,
    pub representative: usize,
    pub label: String,
    pub word: Option<Vec<u8>>,
}

/// JSON-facing summary of a group and (optionally) its character table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupExport {
    #[serde(flatten)]
    pub kind: GroupKind,
    pub order: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mul: Option<Vec<Vec<usize>>>,
    pub classes: Vec<ClassExport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rep_names: Option<Vec<String>>,
}

impl GroupExport {
    pub fn new(group: &Group, table: Option<&CharacterTable>, include_mul: bool) -> Self {
        let n = group.order();
        Self {
            kind: group.kind(),
            order: n,
            mul: include_mul.then(|| (0..n).map(|a| (0..n).map(|b| group.mul(a, b)).collect()).collect()),
            classes: group
                .classes()
                .iter()
                .enumerate()
                .map(|(i, m)| ClassExport {
                    index: i,
                    size: m.len(),
                    representative: m[0],
                    label: group.class_label(i),
                    word: group.word(m[0]).map(<[u8]>::to_vec),
                })
                .collect(),
            chi: table.map(|t| t.chi.clone()),
            dims: table.map(|t| t.dims.clone()),
            rep_names: table.map(|t| t.rep_names.clone()),
        }
    }
}
