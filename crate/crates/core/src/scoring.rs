//! Categorical data, joint counts and MDL scoring.
//!
//! Scores are carried doubled (2·MDL) so the 1/2 in the complexity penalty
//! stays integral in fixed point. Cells of a candidate set `U` are ranked in
//! mixed radix over `U` sorted by ascending variable index, first variable
//! fastest; count vectors are laid out `(j, k)` at `j·r_i + k`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldParams, FixedPoint};

pub const DEFAULT_M_MAX: u64 = 4096;

fn default_m_max() -> u64 {
    DEFAULT_M_MAX
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub arity: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<String>>,
}

/// Public description of the jointly agreed data representation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub variables: Vec<Variable>,
    #[serde(default = "default_m_max")]
    pub m_max: u64,
}

impl Schema {
    pub fn new(variables: Vec<Variable>, m_max: u64) -> Result<Schema> {
        let schema = Schema { variables, m_max };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_max < 1 {
            return Err(Error::Config("m_max must be at least 1".into()));
        }
        let mut names = HashSet::new();
        for v in &self.variables {
            if v.arity < 2 {
                return Err(Error::Config(format!("variable {} has arity {} < 2", v.name, v.arity)));
            }
            if !names.insert(v.name.as_str()) {
                return Err(Error::Config(format!("duplicate variable name {}", v.name)));
            }
            if let Some(states) = &v.states {
                if states.len() != v.arity {
                    return Err(Error::Config(format!(
                        "variable {} lists {} states for arity {}",
                        v.name,
                        states.len(),
                        v.arity
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn arity(&self, var: usize) -> usize {
        self.variables[var].arity
    }

    pub fn arities(&self) -> Vec<usize> {
        self.variables.iter().map(|v| v.arity).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| Error::Config(format!("unknown variable {name}")))
    }

    pub fn names(&self, set: &[usize]) -> Vec<String> {
        set.iter().map(|&v| self.variables[v].name.clone()).collect()
    }

    /// Resolves a cell of column `var`: a listed state label or an integer code.
    pub fn parse_state(&self, var: usize, cell: &str) -> Result<u32> {
        let v = &self.variables[var];
        let cell = cell.trim();
        if let Some(states) = &v.states {
            if let Some(code) = states.iter().position(|s| s == cell) {
                return Ok(code as u32);
            }
        }
        match cell.parse::<u32>() {
            Ok(code) if (code as usize) < v.arity => Ok(code),
            Ok(code) => Err(Error::Data(format!(
                "code {code} out of range for {} (arity {})",
                v.name, v.arity
            ))),
            Err(_) => Err(Error::Data(format!("unknown label {cell:?} for {}", v.name))),
        }
    }

    /// q_U: number of joint states of `set`.
    pub fn cells(&self, set: &[usize]) -> usize {
        set.iter().map(|&v| self.arity(v)).product()
    }
}

/// Rows of state indices, one column per schema variable.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DataTable {
    pub rows: Vec<Vec<u32>>,
}

impl DataTable {
    pub fn new(rows: Vec<Vec<u32>>) -> DataTable {
        DataTable { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::Data(format!(
                    "row {i} has {} columns, schema has {}",
                    row.len(),
                    schema.len()
                )));
            }
            for (var, &state) in row.iter().enumerate() {
                if state as usize >= schema.arity(var) {
                    return Err(Error::Data(format!(
                        "row {i}: state {state} out of range for {}",
                        schema.variables[var].name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Row-wise concatenation in the given order.
    pub fn concat<'a>(tables: impl IntoIterator<Item = &'a DataTable>) -> DataTable {
        DataTable {
            rows: tables.into_iter().flat_map(|t| t.rows.iter().cloned()).collect(),
        }
    }
}

/// Mixed-radix rank of the states of `set` (ascending variable order, first variable stride 1).
pub fn radix_index(states: &[u32], set: &[usize], arities: &[usize]) -> Result<usize> {
    let mut j = 0usize;
    let mut stride = 1usize;
    for &var in set {
        let state = *states
            .get(var)
            .ok_or_else(|| Error::Data(format!("no state for variable {var}")))?
            as usize;
        let arity = arities[var];
        if state >= arity {
            return Err(Error::Data(format!("state {state} out of range for arity {arity}")));
        }
        j += state * stride;
        stride *= arity;
    }
    Ok(j)
}

/// Checks that `set` is strictly ascending, in range and excludes `target`.
pub fn check_candidate(schema: &Schema, target: usize, set: &[usize]) -> Result<()> {
    if target >= schema.len() {
        return Err(Error::Config(format!("target index {target} out of range")));
    }
    for w in set.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Config(format!("candidate set {set:?} is not strictly ascending")));
        }
    }
    if let Some(&bad) = set.iter().find(|&&v| v >= schema.len() || v == target) {
        return Err(Error::Config(format!(
            "candidate set {set:?} contains {} (target {target})",
            if bad == target { "the target" } else { "an unknown variable" }
        )));
    }
    Ok(())
}

/// N_ijk for one target and candidate set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyVector {
    pub target: usize,
    pub set: Vec<usize>,
    pub target_arity: usize,
    pub counts: Vec<u64>,
}

impl ContingencyVector {
    pub fn zeros(schema: &Schema, target: usize, set: &[usize]) -> ContingencyVector {
        let r = schema.arity(target);
        ContingencyVector {
            target,
            set: set.to_vec(),
            target_arity: r,
            counts: vec![0; schema.cells(set) * r],
        }
    }

    pub fn cells(&self) -> usize {
        self.counts.len() / self.target_arity
    }

    pub fn get(&self, j: usize, k: usize) -> u64 {
        self.counts[j * self.target_arity + k]
    }

    /// N_ij for every cell.
    pub fn cell_totals(&self) -> Vec<u64> {
        self.counts.chunks(self.target_arity).map(|c| c.iter().sum()).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Entrywise sum; both vectors must describe the same target and set.
    pub fn add(&self, other: &ContingencyVector) -> Result<ContingencyVector> {
        if self.target != other.target || self.set != other.set || self.counts.len() != other.counts.len() {
            return Err(Error::Data("adding contingency vectors of different shapes".into()));
        }
        Ok(ContingencyVector {
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect(),
            ..self.clone()
        })
    }
}

pub fn contingency(schema: &Schema, table: &DataTable, target: usize, set: &[usize]) -> Result<ContingencyVector> {
    check_candidate(schema, target, set)?;
    let arities = schema.arities();
    let mut cv = ContingencyVector::zeros(schema, target, set);
    let r = cv.target_arity;
    for row in &table.rows {
        let j = radix_index(row, set, &arities)?;
        let k = row[target] as usize;
        if k >= r {
            return Err(Error::Data(format!("target state {k} out of range")));
        }
        cv.counts[j * r + k] += 1;
    }
    Ok(cv)
}

/// Quantized natural logarithms of `0..=m_max`, with `T[0] = 0`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogTable {
    pub frac_bits: u32,
    pub entries: Vec<FixedPoint>,
}

impl LogTable {
    pub fn build(m_max: u64, frac_bits: u32) -> LogTable {
        let scale = (frac_bits as f64).exp2();
        let entries = (0..=m_max)
            .map(|x| {
                if x == 0 {
                    FixedPoint::ZERO
                } else {
                    FixedPoint(((x as f64).ln() * scale).round_ties_even() as i128)
                }
            })
            .collect();
        LogTable { frac_bits, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, x: u64) -> Result<FixedPoint> {
        self.entries
            .get(x as usize)
            .copied()
            .ok_or_else(|| Error::Overflow(format!("count {x} exceeds the log table (m_max {})", self.len() - 1)))
    }
}

/// Σ N_ijk·(ln N_ij − ln N_ijk), empty terms contributing 0.
pub fn entropy_float(c: &ContingencyVector) -> f64 {
    let totals = c.cell_totals();
    let mut h = 0.0;
    for (j, &nij) in totals.iter().enumerate() {
        for k in 0..c.target_arity {
            let nijk = c.get(j, k);
            if nijk > 0 {
                h += nijk as f64 * ((nij as f64).ln() - (nijk as f64).ln());
            }
        }
    }
    h
}

/// Undoubled MDL score: entropy plus `0.5·q_U·ln(m)·(r_i − 1)`.
pub fn mdl_float(c: &ContingencyVector, m: u64) -> f64 {
    let nc = if m > 0 {
        0.5 * c.cells() as f64 * (m as f64).ln() * (c.target_arity - 1) as f64
    } else {
        0.0
    };
    entropy_float(c) + nc
}

/// Public coefficient of `T[m]` in the doubled penalty: `q_U·(r_i − 1)`.
pub fn penalty_coefficient(cells: usize, target_arity: usize) -> u64 {
    (cells * (target_arity - 1)) as u64
}

/// Doubled quantized entropy `2·Σ N_ijk·(T[N_ij] − T[N_ijk])`, exact in integers.
pub fn entropy2_fixed(c: &ContingencyVector, table: &LogTable, params: &FieldParams) -> Result<FixedPoint> {
    let totals = c.cell_totals();
    let mut acc: i128 = 0;
    for (j, &nij) in totals.iter().enumerate() {
        let t_nij = table.get(nij)?.0;
        for k in 0..c.target_arity {
            let nijk = c.get(j, k);
            acc += nijk as i128 * (t_nij - table.get(nijk)?.0);
        }
    }
    params.check_magnitude(FixedPoint(2 * acc))
}

/// Doubled quantized MDL: entropy part plus `q_U·(r_i − 1)·T[m]`.
pub fn score2_fixed(c: &ContingencyVector, m: u64, table: &LogTable, params: &FieldParams) -> Result<FixedPoint> {
    let h = entropy2_fixed(c, table, params)?;
    let nc = penalty_coefficient(c.cells(), c.target_arity) as i128 * table.get(m)?.0;
    params.check_magnitude(FixedPoint(h.0 + nc))
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn radix_examples() {
        let arities = [2, 2, 3, 2];
        assert_eq!(radix_index(&[0, 0, 0, 0], &[0, 1], &arities).unwrap(), 0);
        assert_eq!(radix_index(&[0, 1, 0, 0], &[0, 1], &arities).unwrap(), 2);
        assert_eq!(radix_index(&[1, 1, 0, 0], &[0, 1], &arities).unwrap(), 3);
        assert_eq!(radix_index(&[1, 1, 2, 0], &[0, 2], &arities).unwrap(), 5);
        assert!(radix_index(&[2, 0, 0, 0], &[0], &arities).is_err());
    }

    #[test]
    fn table1_contingency() {
        let schema = table1_schema();
        let data = table1();
        let c = contingency(&schema, &data, 3, &[0, 1]).unwrap();
        // cell (F, [18-45)) is j = 0
        assert_eq!(c.cell_totals()[0], 2);
        assert_eq!(c.get(0, 1), 1);
        assert_eq!(c.counts, vec![1, 1, 1, 0, 1, 1, 0, 1]);

        let empty = contingency(&schema, &data, 3, &[]).unwrap();
        assert_eq!(empty.counts, vec![3, 3]);

        let race = contingency(&schema, &data, 3, &[2]).unwrap();
        assert_eq!(race.counts, vec![1, 2, 1, 0, 1, 1]);

        assert!(contingency(&schema, &data, 3, &[3]).is_err());
        assert!(contingency(&schema, &data, 3, &[1, 0]).is_err());
    }

    #[test]
    fn entropy_examples() {
        let schema = table1_schema();
        let data = table1();
        let det = ContingencyVector { target: 1, set: vec![0], target_arity: 2, counts: vec![5, 0, 0, 7] };
        assert_eq!(entropy_float(&det), 0.0);
        let h0 = entropy_float(&contingency(&schema, &data, 3, &[]).unwrap());
        assert!((h0 - 6.0 * LN2).abs() < 1e-12);
        assert!((h0 - 4.158883).abs() < 1e-6);
        let h_sa = entropy_float(&contingency(&schema, &data, 3, &[0, 1]).unwrap());
        assert!((h_sa - 4.0 * LN2).abs() < 1e-12);
    }

    #[test]
    fn log_table_examples() {
        let t = LogTable::build(4096, 16);
        assert_eq!(t.len(), 4097);
        assert_eq!(t.get(0).unwrap(), FixedPoint(0));
        assert_eq!(t.get(1).unwrap(), FixedPoint(0));
        assert_eq!(t.get(2).unwrap(), FixedPoint(45426));
        assert_eq!(t.get(6).unwrap(), FixedPoint(117425));
        assert!(t.entries.windows(2).all(|w| w[0] <= w[1]));
        assert!(t.get(4097).is_err());
    }

    #[test]
    fn fixed_scores_on_table1() {
        let schema = table1_schema();
        let data = table1();
        let params = FieldParams::default();
        let t = LogTable::build(schema.m_max, 16);

        let zero = ContingencyVector::zeros(&schema, 3, &[]);
        assert_eq!(score2_fixed(&zero, 0, &t, &params).unwrap(), FixedPoint(0));

        let c = contingency(&schema, &data, 3, &[0, 1]).unwrap();
        let s = score2_fixed(&c, 6, &t, &params).unwrap();
        let doubled = 2.0 * 4.0 * LN2 + 4.0 * 6f64.ln();
        assert!((params.decode(s) - doubled).abs() < 1e-3);
        assert!((params.decode(s) - 12.71221).abs() < 1e-3);
        // exact: 2·(4·T[2]) + 4·T[6]
        assert_eq!(s, FixedPoint(8 * 45426 + 4 * 117425));

        let e = entropy2_fixed(&contingency(&schema, &data, 3, &[]).unwrap(), &t, &params).unwrap();
        assert!((params.decode(e) / 2.0 - 6.0 * LN2).abs() <= 12.0 / 65536.0);

        let single = ContingencyVector { target: 3, set: vec![], target_arity: 2, counts: vec![9, 0] };
        assert_eq!(entropy2_fixed(&single, &t, &params).unwrap(), FixedPoint(0));

        let singletons = [(0usize, 5.9507), (1, 5.6108), (2, 5.9835)];
        for (var, expect) in singletons {
            let c = contingency(&schema, &data, 3, &[var]).unwrap();
            assert!((mdl_float(&c, 6) - expect).abs() < 1e-4, "{var}");
            let q = score2_fixed(&c, 6, &t, &params).unwrap();
            assert!((params.decode(q) / 2.0 - expect).abs() < 1e-3);
        }
    }

    #[test]
    fn overflow_is_reported() {
        let params = FieldParams { frac_bits: 16, magnitude_bits: 20, sigma: 40 };
        let t = LogTable::build(4096, 16);
        let c = ContingencyVector { target: 0, set: vec![], target_arity: 2, counts: vec![2000, 2000] };
        assert!(matches!(entropy2_fixed(&c, &t, &params), Err(Error::Overflow(_))));
    }

    #[test]
    fn label_resolution() {
        let schema = table1_schema();
        assert_eq!(schema.parse_state(0, "F").unwrap(), 0);
        assert_eq!(schema.parse_state(0, "1").unwrap(), 1);
        assert!(schema.parse_state(0, "X").is_err());
        assert!(schema.parse_state(2, "3").is_err());
    }

    #[test]
    fn schema_validation() {
        let mut schema = table1_schema();
        schema.variables[1].name = "Sex".into();
        assert!(schema.validate().is_err());
        let mut schema = table1_schema();
        schema.variables[0].arity = 1;
        assert!(schema.validate().is_err());
    }

    pub(crate) fn random_instance(rng: &mut ChaCha20Rng, n: usize, m: usize) -> (Schema, DataTable) {
        let vars = (0..n)
            .map(|i| Variable { name: format!("X{i}"), arity: rng.gen_range(2..=3), states: None })
            .collect();
        let schema = Schema::new(vars, 4096).unwrap();
        let rows = (0..m)
            .map(|_| (0..n).map(|v| rng.gen_range(0..schema.arity(v)) as u32).collect())
            .collect();
        (schema, DataTable::new(rows))
    }

    fn subsets_of(pool: &[usize]) -> Vec<Vec<usize>> {
        (0..1usize << pool.len())
            .map(|mask| pool.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &v)| v).collect())
            .collect()
    }

    #[test]
    fn count_consistency_and_partition_additivity() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..50 {
            let m = rng.gen_range(0..60);
            let (schema, data) = random_instance(&mut rng, 4, m);
            let cut = rng.gen_range(0..=data.len());
            let (a, b) = (
                DataTable::new(data.rows[..cut].to_vec()),
                DataTable::new(data.rows[cut..].to_vec()),
            );
            let target = rng.gen_range(0..4);
            let pool: Vec<usize> = (0..4).filter(|&v| v != target).collect();
            for set in subsets_of(&pool) {
                let c = contingency(&schema, &data, target, &set).unwrap();
                assert_eq!(c.total(), data.len() as u64);
                assert_eq!(c.cell_totals().iter().sum::<u64>(), data.len() as u64);
                let ca = contingency(&schema, &a, target, &set).unwrap();
                let cb = contingency(&schema, &b, target, &set).unwrap();
                assert_eq!(ca.add(&cb).unwrap(), c);
            }
        }
    }

    #[test]
    fn conditioning_never_increases_entropy() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        for _ in 0..100 {
            let m = rng.gen_range(1..120);
            let (schema, data) = random_instance(&mut rng, 5, m);
            let target = rng.gen_range(0..5);
            let pool: Vec<usize> = (0..5).filter(|&v| v != target).collect();
            for set in subsets_of(&pool) {
                let h = entropy_float(&contingency(&schema, &data, target, &set).unwrap());
                for &extra in pool.iter().filter(|v| !set.contains(v)) {
                    let mut bigger = set.clone();
                    bigger.push(extra);
                    bigger.sort_unstable();
                    let hb = entropy_float(&contingency(&schema, &data, target, &bigger).unwrap());
                    assert!(hb <= h + 1e-9, "{set:?} -> {bigger:?}: {h} < {hb}");
                }
            }
        }
    }

    #[test]
    fn quantization_error_bound() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let params = FieldParams::default();
        let t = LogTable::build(4096, 16);
        for _ in 0..200 {
            let m = rng.gen_range(0..400);
            let (schema, data) = random_instance(&mut rng, 4, m);
            let target = rng.gen_range(0..4);
            let pool: Vec<usize> = (0..4).filter(|&v| v != target).collect();
            for set in subsets_of(&pool) {
                let c = contingency(&schema, &data, target, &set).unwrap();
                let m = data.len() as u64;
                let q = score2_fixed(&c, m, &t, &params).unwrap();
                let bound = (2 * m + penalty_coefficient(c.cells(), c.target_arity)) as f64 / 65536.0;
                assert!((params.decode(q) - 2.0 * mdl_float(&c, m)).abs() <= bound);
            }
        }
    }
}
