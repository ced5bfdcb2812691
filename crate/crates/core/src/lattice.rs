//! Breadth-first subset-lattice traversal with bound-based pruning.
//!
//! The traversal only ever touches scores through a [`ScoringBackend`], so the
//! same control flow drives the plaintext oracles and the secure protocol.
//! Everything the loop branches on is either public (set structure, records
//! already in the output) or a single comparison bit produced by the backend.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldParams, FixedPoint};
use crate::scoring::{
    contingency, entropy2_fixed, entropy_float, penalty_coefficient, score2_fixed, DataTable, LogTable, Schema,
};

/// Which way the pruning branch is taken. `w` is the candidate's lower bound
/// `nc(U) + H_full` and `s'` the best score among its recorded strict subsets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Expand and insert when `s' ≤ w`. Kept for comparison only: a score
    /// never falls below its bound, so nothing past the empty set is recorded.
    Verbatim,
    /// Expand and insert when `s' > w`; ban the supersets otherwise.
    #[default]
    Corrected,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Verbatim => "verbatim",
            Mode::Corrected => "corrected",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "verbatim" => Ok(Mode::Verbatim),
            "corrected" => Ok(Mode::Corrected),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

/// A revealed (public) score.
pub trait ScoreValue: Copy + PartialOrd + Debug {
    /// Fixed-point mantissa, when the score is quantized.
    fn mantissa(&self) -> Option<i128>;
    /// The doubled score as a real number.
    fn doubled(&self, frac_bits: u32) -> f64;
}

impl ScoreValue for FixedPoint {
    fn mantissa(&self) -> Option<i128> {
        Some(self.0)
    }
    fn doubled(&self, frac_bits: u32) -> f64 {
        self.decode(frac_bits)
    }
}

impl ScoreValue for f64 {
    fn mantissa(&self) -> Option<i128> {
        None
    }
    fn doubled(&self, _: u32) -> f64 {
        *self
    }
}

/// Comparison operand: a backend-held score or a public value.
pub enum Operand<'a, S, P> {
    Secret(&'a S),
    Public(P),
}

/// What the backend is about to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope<'a> {
    /// The entropy bound over all non-target variables.
    Bound,
    /// A candidate parent set (the empty set included).
    Candidate(&'a [usize]),
}

/// Score provider for the traversal. Scores are doubled (2·MDL).
pub trait ScoringBackend {
    type Secret: Clone;
    type Public: ScoreValue;

    fn schema(&self) -> &Schema;

    /// Doubled entropy of the target given `set`.
    fn entropy2(&mut self, set: &[usize]) -> Result<Self::Secret>;

    /// `coefficient · T[m]`, the doubled penalty for a public `q_U·(r_i − 1)`.
    fn penalty2(&mut self, coefficient: u64) -> Result<Self::Secret>;

    fn add(&mut self, a: &Self::Secret, b: &Self::Secret) -> Result<Self::Secret>;

    /// Public bit `a < b`.
    fn lt(&mut self, a: Operand<'_, Self::Secret, Self::Public>, b: Operand<'_, Self::Secret, Self::Public>)
        -> Result<bool>;

    fn reveal(&mut self, s: &Self::Secret) -> Result<Self::Public>;

    /// Called before each unit of scoring work.
    fn begin_scope(&mut self, _scope: Scope<'_>) -> Result<()> {
        Ok(())
    }

    /// Called after every layer with a digest of the public traversal state.
    fn end_layer(&mut self, _layer: usize, _digest: &[u8; 32]) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParentSetRecord<P> {
    pub set: Vec<usize>,
    pub score2: P,
}

/// Maximal parent sets in insertion order; the empty set always comes first.
#[derive(Clone, Debug, PartialEq)]
pub struct PGStructure<P> {
    pub records: Vec<ParentSetRecord<P>>,
}

impl<P> Default for PGStructure<P> {
    fn default() -> Self {
        PGStructure { records: Vec::new() }
    }
}

fn is_subset(small: &[usize], big: &[usize]) -> bool {
    small.iter().all(|v| big.binary_search(v).is_ok())
}

fn is_strict_subset(small: &[usize], big: &[usize]) -> bool {
    small.len() < big.len() && is_subset(small, big)
}

impl<P: ScoreValue> PGStructure<P> {
    pub fn insert(&mut self, set: Vec<usize>, score2: P) {
        self.records.push(ParentSetRecord { set, score2 });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Lowest score among records that are strict subsets of `set`.
    pub fn best_subset(&self, set: &[usize]) -> Result<P> {
        if set.is_empty() {
            return Err(Error::Config("best subset of the empty set is undefined".into()));
        }
        let mut best: Option<P> = None;
        for r in self.records.iter().filter(|r| is_strict_subset(&r.set, set)) {
            if best.is_none_or(|b| r.score2 < b) {
                best = Some(r.score2);
            }
        }
        best.ok_or_else(|| Error::Config("parent set structure lacks the empty-set record".into()))
    }

    /// Best record among those contained in `candidates`; earliest wins ties.
    pub fn select_parents(&self, candidates: &[usize]) -> Option<&ParentSetRecord<P>> {
        let mut sorted = candidates.to_vec();
        sorted.sort_unstable();
        let mut best: Option<&ParentSetRecord<P>> = None;
        for r in self.records.iter().filter(|r| is_subset(&r.set, &sorted)) {
            if best.is_none_or(|b| r.score2 < b.score2) {
                best = Some(r);
            }
        }
        best
    }

    /// Checks that every record strictly beats each of its recorded subsets.
    pub fn dominance_violations(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let mut out = Vec::new();
        for u in &self.records {
            for v in &self.records {
                if is_strict_subset(&v.set, &u.set) && u.score2 >= v.score2 {
                    out.push((v.set.clone(), u.set.clone()));
                }
            }
        }
        out
    }

    pub fn to_document(&self, schema: &Schema, target: usize, mode: Mode, frac_bits: u32) -> PgDocument {
        PgDocument {
            target: schema.variables[target].name.clone(),
            mode,
            f: frac_bits,
            records: self
                .records
                .iter()
                .map(|r| RecordDocument {
                    set: schema.names(&r.set),
                    score2_mantissa: r.score2.mantissa().map(|m| m as i64),
                    score: r.score2.doubled(frac_bits) / 2.0,
                })
                .collect(),
        }
    }
}

/// JSON form of a parent set structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgDocument {
    pub target: String,
    pub mode: Mode,
    pub f: u32,
    pub records: Vec<RecordDocument>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordDocument {
    pub set: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score2_mantissa: Option<i64>,
    pub score: f64,
}

impl PgDocument {
    /// Rebuilds the fixed-point structure; fails for float documents.
    pub fn to_fixed(&self, schema: &Schema) -> Result<PGStructure<FixedPoint>> {
        let mut pg = PGStructure::default();
        for r in &self.records {
            let mut set = r.set.iter().map(|n| schema.index_of(n)).collect::<Result<Vec<_>>>()?;
            set.sort_unstable();
            let m = r
                .score2_mantissa
                .ok_or_else(|| Error::Data("record has no fixed-point mantissa".into()))?;
            pg.insert(set, FixedPoint(m as i128));
        }
        Ok(pg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeConfig {
    pub target: usize,
    pub l_max: usize,
    pub mode: Mode,
    /// Adds the complexity penalty to the empty-set record as well.
    pub empty_set_penalty: bool,
}

impl LatticeConfig {
    pub fn new(target: usize, l_max: usize) -> LatticeConfig {
        LatticeConfig { target, l_max, mode: Mode::Corrected, empty_set_penalty: false }
    }
}

/// Output of a traversal together with the public sequence of scored sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Traversal<P> {
    pub pg: PGStructure<P>,
    pub trace: Vec<Vec<usize>>,
}

fn layer_digest(layer: usize, next: &BTreeSet<Vec<usize>>, inserted: usize) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update((layer as u64).to_be_bytes());
    h.update((inserted as u64).to_be_bytes());
    for set in next {
        h.update((set.len() as u32).to_be_bytes());
        for &v in set {
            h.update((v as u32).to_be_bytes());
        }
    }
    h.finalize().into()
}

/// Runs the traversal for `config.target` and returns the maximal parent sets.
pub fn maximal_parent_sets<B: ScoringBackend>(backend: &mut B, config: &LatticeConfig) -> Result<Traversal<B::Public>> {
    let schema = backend.schema();
    let n = schema.len();
    let target = config.target;
    if target >= n {
        return Err(Error::Config(format!("target index {target} out of range")));
    }
    let r_target = schema.arity(target);
    let pool: Vec<usize> = (0..n).filter(|&v| v != target).collect();
    let arities = schema.arities();

    let mut trace = Vec::new();
    let mut pg = PGStructure::default();

    backend.begin_scope(Scope::Bound)?;
    let full_entropy = backend.entropy2(&pool)?;

    trace.push(Vec::new());
    backend.begin_scope(Scope::Candidate(&[]))?;
    let mut empty = backend.entropy2(&[])?;
    if config.empty_set_penalty {
        let nc = backend.penalty2(penalty_coefficient(1, r_target))?;
        empty = backend.add(&nc, &empty)?;
    }
    let revealed = backend.reveal(&empty)?;
    pg.insert(Vec::new(), revealed);

    let mut next: BTreeSet<Vec<usize>> = pool.iter().map(|&v| vec![v]).collect();
    let mut layer = 1;
    while !next.is_empty() && layer <= config.l_max {
        let current = std::mem::take(&mut next);
        let mut banned: BTreeSet<Vec<usize>> = BTreeSet::new();
        for set in current {
            trace.push(set.clone());
            backend.begin_scope(Scope::Candidate(&set))?;
            let supersets = pool.iter().filter(|v| set.binary_search(v).is_err()).map(|&v| {
                let mut s = set.clone();
                s.push(v);
                s.sort_unstable();
                s
            });
            let cells: usize = set.iter().map(|&v| arities[v]).product();
            let nc = backend.penalty2(penalty_coefficient(cells, r_target))?;
            let h = backend.entropy2(&set)?;
            let score = backend.add(&nc, &h)?;
            let best = pg.best_subset(&set)?;
            let bound = backend.add(&nc, &full_entropy)?;
            let bound_below_best = backend.lt(Operand::Secret(&bound), Operand::Public(best))?;
            let expand = match config.mode {
                Mode::Corrected => bound_below_best,
                Mode::Verbatim => !bound_below_best,
            };
            if expand {
                if backend.lt(Operand::Secret(&score), Operand::Public(best))? {
                    let revealed = backend.reveal(&score)?;
                    pg.insert(set.clone(), revealed);
                }
                next.extend(supersets);
            } else {
                banned.extend(supersets);
            }
        }
        if !banned.is_empty() {
            next.retain(|s| !banned.contains(s));
        }
        backend.end_layer(layer, &layer_digest(layer, &next, pg.len()))?;
        layer += 1;
    }
    Ok(Traversal { pg, trace })
}

/// Plaintext backend over quantized scores; the ground truth for the secure path.
pub struct FixedBackend<'a> {
    schema: &'a Schema,
    data: &'a DataTable,
    target: usize,
    params: FieldParams,
    table: LogTable,
    log_m: FixedPoint,
}

impl<'a> FixedBackend<'a> {
    pub fn new(schema: &'a Schema, data: &'a DataTable, target: usize, params: FieldParams) -> Result<Self> {
        let m = data.len() as u64;
        if m > schema.m_max {
            return Err(Error::Data(format!("{m} rows exceed m_max {}", schema.m_max)));
        }
        let table = LogTable::build(schema.m_max, params.frac_bits);
        let log_m = table.get(m)?;
        Ok(FixedBackend { schema, data, target, params, table, log_m })
    }

    pub fn score2(&self, set: &[usize]) -> Result<FixedPoint> {
        let c = contingency(self.schema, self.data, self.target, set)?;
        score2_fixed(&c, self.data.len() as u64, &self.table, &self.params)
    }
}

impl ScoringBackend for FixedBackend<'_> {
    type Secret = FixedPoint;
    type Public = FixedPoint;

    fn schema(&self) -> &Schema {
        self.schema
    }

    fn entropy2(&mut self, set: &[usize]) -> Result<FixedPoint> {
        let c = contingency(self.schema, self.data, self.target, set)?;
        entropy2_fixed(&c, &self.table, &self.params)
    }

    fn penalty2(&mut self, coefficient: u64) -> Result<FixedPoint> {
        self.params.check_magnitude(FixedPoint(coefficient as i128 * self.log_m.0))
    }

    fn add(&mut self, a: &FixedPoint, b: &FixedPoint) -> Result<FixedPoint> {
        self.params.check_magnitude(*a + *b)
    }

    fn lt(&mut self, a: Operand<'_, FixedPoint, FixedPoint>, b: Operand<'_, FixedPoint, FixedPoint>) -> Result<bool> {
        let value = |o: Operand<'_, FixedPoint, FixedPoint>| match o {
            Operand::Secret(s) => *s,
            Operand::Public(p) => p,
        };
        Ok(value(a) < value(b))
    }

    fn reveal(&mut self, s: &FixedPoint) -> Result<FixedPoint> {
        Ok(*s)
    }
}

/// Plaintext backend in double precision.
pub struct FloatBackend<'a> {
    schema: &'a Schema,
    data: &'a DataTable,
    target: usize,
    log_m: f64,
}

impl<'a> FloatBackend<'a> {
    pub fn new(schema: &'a Schema, data: &'a DataTable, target: usize) -> Self {
        let m = data.len();
        let log_m = if m > 0 { (m as f64).ln() } else { 0.0 };
        FloatBackend { schema, data, target, log_m }
    }
}

impl ScoringBackend for FloatBackend<'_> {
    type Secret = f64;
    type Public = f64;

    fn schema(&self) -> &Schema {
        self.schema
    }

    fn entropy2(&mut self, set: &[usize]) -> Result<f64> {
        Ok(2.0 * entropy_float(&contingency(self.schema, self.data, self.target, set)?))
    }

    fn penalty2(&mut self, coefficient: u64) -> Result<f64> {
        Ok(coefficient as f64 * self.log_m)
    }

    fn add(&mut self, a: &f64, b: &f64) -> Result<f64> {
        Ok(a + b)
    }

    fn lt(&mut self, a: Operand<'_, f64, f64>, b: Operand<'_, f64, f64>) -> Result<bool> {
        let value = |o: Operand<'_, f64, f64>| match o {
            Operand::Secret(s) => *s,
            Operand::Public(p) => p,
        };
        Ok(value(a) < value(b))
    }

    fn reveal(&mut self, s: &f64) -> Result<f64> {
        Ok(*s)
    }
}

/// Largest variable count the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX_VARS: usize = 16;

/// Every set of size at most `l_max` whose quantized score is strictly below
/// the score of each of its strict subsets, by exhaustive enumeration.
pub fn brute_force_mps(
    schema: &Schema,
    data: &DataTable,
    params: &FieldParams,
    target: usize,
    l_max: usize,
    empty_set_penalty: bool,
) -> Result<PGStructure<FixedPoint>> {
    let n = schema.len();
    if n > BRUTE_FORCE_MAX_VARS {
        return Err(Error::SizeGuard(format!(
            "{n} variables exceed the brute-force limit of {BRUTE_FORCE_MAX_VARS}"
        )));
    }
    if target >= n {
        return Err(Error::Config(format!("target index {target} out of range")));
    }
    let m = data.len() as u64;
    let table = LogTable::build(schema.m_max, params.frac_bits);
    let pool: Vec<usize> = (0..n).filter(|&v| v != target).collect();
    let size = pool.len();
    let limit = l_max.min(size);

    // bitmask over positions in `pool`
    let set_of = |mask: usize| -> Vec<usize> { (0..size).filter(|b| mask >> b & 1 == 1).map(|b| pool[b]).collect() };
    let mut masks: Vec<usize> = (0..1usize << size).filter(|m| m.count_ones() as usize <= limit).collect();
    masks.sort_by_key(|&mask| (mask.count_ones(), set_of(mask)));

    let mut score: HashMap<usize, i128> = HashMap::new();
    // min score over all strict subsets
    let mut below: HashMap<usize, i128> = HashMap::new();
    let mut pg = PGStructure::default();
    for mask in masks {
        let set = set_of(mask);
        let c = contingency(schema, data, target, &set)?;
        let s = if mask == 0 {
            let h = entropy2_fixed(&c, &table, params)?;
            if empty_set_penalty {
                h.0 + penalty_coefficient(1, c.target_arity) as i128 * table.get(m)?.0
            } else {
                h.0
            }
        } else {
            score2_fixed(&c, m, &table, params)?.0
        };
        let mut best: Option<i128> = None;
        for b in (0..size).filter(|b| mask >> b & 1 == 1) {
            let sub = mask & !(1 << b);
            for cand in [score.get(&sub), below.get(&sub)].into_iter().flatten() {
                best = Some(best.map_or(*cand, |x: i128| x.min(*cand)));
            }
        }
        if best.is_none_or(|b| s < b) {
            pg.insert(set, FixedPoint(s));
        }
        score.insert(mask, s);
        if let Some(b) = best {
            below.insert(mask, b);
        }
    }
    Ok(pg)
}

/// Record-by-record comparison; returns a human-readable list of differences.
pub fn diff_structures(schema: &Schema, left: &PGStructure<FixedPoint>, right: &PGStructure<FixedPoint>) -> Vec<String> {
    let mut out = Vec::new();
    let len = left.len().max(right.len());
    for i in 0..len {
        let show = |r: Option<&ParentSetRecord<FixedPoint>>| match r {
            Some(r) => format!("{{{}}} score2={}", schema.names(&r.set).join(","), r.score2.0),
            None => "<missing>".to_string(),
        };
        let (l, r) = (left.records.get(i), right.records.get(i));
        if l != r {
            out.push(format!("record {i}: {} vs {}", show(l), show(r)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::fixtures::*;
    use crate::scoring::Variable;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn pg(records: &[(&[usize], i128)]) -> PGStructure<FixedPoint> {
        let mut pg = PGStructure::default();
        for (set, s) in records {
            pg.insert(set.to_vec(), FixedPoint(*s));
        }
        pg
    }

    #[test]
    fn best_subset_examples() {
        let only_empty = pg(&[(&[], 41589)]);
        assert_eq!(only_empty.best_subset(&[0]).unwrap(), FixedPoint(41589));
        assert_eq!(pg(&[(&[], 10), (&[1], 8)]).best_subset(&[1, 2]).unwrap(), FixedPoint(8));
        assert_eq!(pg(&[(&[], 10), (&[3], 7)]).best_subset(&[1, 2]).unwrap(), FixedPoint(10));
        assert!(only_empty.best_subset(&[]).is_err());
        // the set itself is not a strict subset
        assert_eq!(pg(&[(&[], 10), (&[1], 8)]).best_subset(&[1]).unwrap(), FixedPoint(10));
    }

    #[test]
    fn select_parents_examples() {
        let p = pg(&[(&[], 10), (&[1], 8), (&[2], 9)]);
        assert_eq!(p.select_parents(&[]).unwrap().set, Vec::<usize>::new());
        assert_eq!(p.select_parents(&[2]).unwrap().set, vec![2]);
        assert_eq!(p.select_parents(&[0, 1, 2, 3]).unwrap().set, vec![1]);
        let tie = pg(&[(&[], 10), (&[1], 8), (&[2], 8)]);
        assert_eq!(tie.select_parents(&[2, 1]).unwrap().set, vec![1]);
    }

    #[test]
    fn table1_traversal() {
        let schema = table1_schema();
        let data = table1();
        let params = FieldParams::default();
        let mut backend = FixedBackend::new(&schema, &data, 3, params).unwrap();
        let out = maximal_parent_sets(&mut backend, &LatticeConfig::new(3, 3)).unwrap();
        assert_eq!(out.pg.len(), 1);
        assert!(out.pg.records[0].set.is_empty());
        assert!((params.decode(out.pg.records[0].score2) / 2.0 - 4.158883).abs() <= 12.0 / 65536.0);
        // singletons expand, every pair is then banned by its bound
        let trace: Vec<Vec<usize>> = vec![vec![], vec![0], vec![1], vec![2], vec![0, 1], vec![0, 2], vec![1, 2]];
        assert_eq!(out.trace, trace);

        let brute = brute_force_mps(&schema, &data, &params, 3, 3, false).unwrap();
        assert_eq!(brute, out.pg);

        let mut float = FloatBackend::new(&schema, &data, 3);
        let fl = maximal_parent_sets(&mut float, &LatticeConfig::new(3, 3)).unwrap();
        assert_eq!(fl.pg.len(), 1);
        assert!((fl.pg.records[0].score2 / 2.0 - 6.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn zero_layers() {
        let schema = table1_schema();
        let data = table1();
        let mut backend = FixedBackend::new(&schema, &data, 3, FieldParams::default()).unwrap();
        let out = maximal_parent_sets(&mut backend, &LatticeConfig::new(3, 0)).unwrap();
        assert_eq!(out.pg.len(), 1);
        assert_eq!(out.trace, vec![Vec::<usize>::new()]);
    }

    #[test]
    fn verbatim_mode_only_keeps_empty_set() {
        let schema = table1_schema();
        let data = table1();
        let mut backend = FixedBackend::new(&schema, &data, 3, FieldParams::default()).unwrap();
        let cfg = LatticeConfig { mode: Mode::Verbatim, ..LatticeConfig::new(3, 3) };
        let out = maximal_parent_sets(&mut backend, &cfg).unwrap();
        assert_eq!(out.pg.len(), 1);
    }

    fn copy_dataset(m: usize, seed: u64) -> (Schema, DataTable) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let vars = (0..4).map(|i| Variable { name: format!("X{i}"), arity: 2, states: None }).collect();
        let schema = Schema::new(vars, 4096).unwrap();
        let rows = (0..m)
            .map(|_| {
                let x1: u32 = rng.gen_range(0..2);
                vec![x1, x1, rng.gen_range(0..2), rng.gen_range(0..2)]
            })
            .collect();
        (schema, DataTable::new(rows))
    }

    #[test]
    fn planted_copy_is_maximal() {
        let (schema, data) = copy_dataset(512, 3);
        let params = FieldParams::default();
        let brute = brute_force_mps(&schema, &data, &params, 0, 3, false).unwrap();
        assert!(brute.records.iter().any(|r| r.set == vec![1]));
        let mut backend = FixedBackend::new(&schema, &data, 0, params).unwrap();
        let out = maximal_parent_sets(&mut backend, &LatticeConfig::new(0, 3)).unwrap();
        assert_eq!(out.pg, brute);
        assert!(out.pg.dominance_violations().is_empty());
    }

    #[test]
    fn single_variable_has_empty_pool() {
        let schema = Schema::new(vec![Variable { name: "Y".into(), arity: 2, states: None }], 16).unwrap();
        let data = DataTable::new(vec![vec![0], vec![1], vec![1]]);
        let params = FieldParams::default();
        let brute = brute_force_mps(&schema, &data, &params, 0, 0, false).unwrap();
        assert_eq!(brute.len(), 1);
        let mut backend = FixedBackend::new(&schema, &data, 0, params).unwrap();
        assert_eq!(maximal_parent_sets(&mut backend, &LatticeConfig::new(0, 5)).unwrap().pg, brute);
    }

    #[test]
    fn brute_force_size_guard() {
        let vars = (0..17).map(|i| Variable { name: format!("X{i}"), arity: 2, states: None }).collect();
        let schema = Schema::new(vars, 16).unwrap();
        let err = brute_force_mps(&schema, &DataTable::default(), &FieldParams::default(), 0, 2, false);
        assert!(matches!(err, Err(Error::SizeGuard(_))));
    }

    #[test]
    fn empty_set_penalty_switch() {
        let schema = table1_schema();
        let data = table1();
        let params = FieldParams::default();
        let cfg = LatticeConfig { empty_set_penalty: true, ..LatticeConfig::new(3, 3) };
        let mut backend = FixedBackend::new(&schema, &data, 3, params).unwrap();
        let out = maximal_parent_sets(&mut backend, &cfg).unwrap();
        // 6·T[2]·2 + T[6]
        assert_eq!(out.pg.records[0].score2, FixedPoint(12 * 45426 + 117425));
        assert_eq!(out.pg, brute_force_mps(&schema, &data, &params, 3, 3, true).unwrap());
    }

    #[test]
    fn document_round_trip() {
        let schema = table1_schema();
        let p = pg(&[(&[], 545112), (&[0, 2], 500000)]);
        let doc = p.to_document(&schema, 3, Mode::Corrected, 16);
        assert_eq!(doc.records[1].set, vec!["Sex".to_string(), "Race".to_string()]);
        assert!((doc.records[0].score - 545112.0 / 131072.0).abs() < 1e-12);
        let json = serde_json::to_string(&doc).unwrap();
        let back: PgDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_fixed(&schema).unwrap(), p);
        assert!(diff_structures(&schema, &p, &back.to_fixed(&schema).unwrap()).is_empty());
    }
}
