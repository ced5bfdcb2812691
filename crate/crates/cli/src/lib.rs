//! Command implementations behind the `parentsets` binary.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use parentsets::lattice::{
    brute_force_mps, diff_structures, maximal_parent_sets, FixedBackend, FloatBackend, PgDocument,
};
use parentsets::scoring::Variable;
use parentsets::session::{self, derive_seed, SessionConfig, Timings};
use parentsets::transcript::{transcript_audit, AuditReport, TranscriptSummary};
use parentsets::transport::{Endpoint, TcpTransport};
use parentsets::wire::SessionId;
use parentsets::{DataTable, FieldParams, FixedPoint, LatticeConfig, Mode, PGStructure, Schema};

pub fn load_schema(path: &Path) -> Result<Schema> {
    let text = fs::read_to_string(path).with_context(|| format!("reading schema {}", path.display()))?;
    let schema: Schema = serde_json::from_str(&text).with_context(|| format!("parsing schema {}", path.display()))?;
    schema.validate()?;
    Ok(schema)
}

pub fn save_schema(path: &Path, schema: &Schema) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(schema)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Reads a CSV whose header lists the schema variables in order. Cells are
/// state codes or state labels.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<DataTable> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let expected = schema.names(&(0..schema.len()).collect::<Vec<_>>());
    ensure!(
        header == expected,
        "{}: header {:?} does not match schema order {:?}",
        path.display(),
        header,
        expected
    );
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let record = record.with_context(|| format!("{} row {line}", path.display()))?;
        ensure!(
            record.len() == schema.len(),
            "{} row {line}: {} cells, expected {}",
            path.display(),
            record.len(),
            schema.len()
        );
        let row = record
            .iter()
            .enumerate()
            .map(|(v, cell)| schema.parse_state(v, cell))
            .collect::<parentsets::Result<Vec<u32>>>()
            .with_context(|| format!("{} row {line}", path.display()))?;
        rows.push(row);
    }
    Ok(DataTable::new(rows))
}

/// Writes state codes under a header of variable names.
pub fn write_csv(path: &Path, schema: &Schema, table: &DataTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(schema.variables.iter().map(|v| v.name.as_str()))?;
    for row in &table.rows {
        w.write_record(row.iter().map(|c| c.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Precision {
    Float,
    Fixed,
}

/// What a run prints: the output structure plus timing, transcript and audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub pg: PgDocument,
    /// Candidate sets in the order they were scored.
    pub trace: Vec<Vec<String>>,
    pub timings: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<TranscriptSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditReport>,
}

impl RunReport {
    pub fn fixed_pg(&self, schema: &Schema) -> Result<PGStructure<FixedPoint>> {
        Ok(self.pg.to_fixed(schema)?)
    }
}

fn timing_map(t: &Timings) -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("setup".to_string(), t.setup_secs),
        ("traversal".to_string(), t.traversal_secs),
        ("total".to_string(), t.total_secs),
    ])
}

fn names_trace(schema: &Schema, trace: &[Vec<usize>]) -> Vec<Vec<String>> {
    trace.iter().map(|s| schema.names(s)).collect()
}

/// Shared traversal options.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub target: usize,
    pub l_max: usize,
    pub mode: Mode,
    pub empty_set_penalty: bool,
}

impl RunOptions {
    /// Resolves the target name; `l_max` defaults to `n − 1`.
    pub fn new(schema: &Schema, target: &str, l_max: Option<usize>, mode: Mode) -> Result<RunOptions> {
        let target = schema.index_of(target)?;
        Ok(RunOptions {
            target,
            l_max: l_max.unwrap_or(schema.len().saturating_sub(1)),
            mode,
            empty_set_penalty: false,
        })
    }

    pub fn lattice(&self) -> LatticeConfig {
        LatticeConfig {
            target: self.target,
            l_max: self.l_max,
            mode: self.mode,
            empty_set_penalty: self.empty_set_penalty,
        }
    }
}

/// Plaintext run over the pooled data.
pub fn cmd_oracle(schema: &Schema, tables: &[DataTable], opts: &RunOptions, precision: Precision) -> Result<RunReport> {
    let data = DataTable::concat(tables);
    data.validate(schema)?;
    let params = FieldParams::default();
    let start = Instant::now();
    let (pg, trace) = match precision {
        Precision::Fixed => {
            let mut backend = FixedBackend::new(schema, &data, opts.target, params)?;
            let t = maximal_parent_sets(&mut backend, &opts.lattice())?;
            (t.pg.to_document(schema, opts.target, opts.mode, params.frac_bits), t.trace)
        }
        Precision::Float => {
            let mut backend = FloatBackend::new(schema, &data, opts.target);
            let t = maximal_parent_sets(&mut backend, &opts.lattice())?;
            (t.pg.to_document(schema, opts.target, opts.mode, params.frac_bits), t.trace)
        }
    };
    Ok(RunReport {
        command: "oracle".into(),
        pg,
        trace: names_trace(schema, &trace),
        timings: BTreeMap::from([("total".to_string(), start.elapsed().as_secs_f64())]),
        transcript: None,
        audit: None,
    })
}

/// Session configuration for an in-process or networked run.
pub fn session_config(schema: &Schema, opts: &RunOptions, owners: usize, csps: usize, seed: u64) -> SessionConfig {
    let mut c = SessionConfig::new(schema.clone(), opts.target, owners, csps);
    c.l_max = opts.l_max;
    c.mode = opts.mode;
    c.empty_set_penalty = opts.empty_set_penalty;
    c.dealer_seed = seed;
    c.owner_seed = seed.wrapping_add(1);
    let id = derive_seed(seed, "session", 0);
    c.session_id = SessionId(id[..16].try_into().unwrap());
    c
}

/// Secure run with every party hosted in this process.
pub fn cmd_sim(schema: &Schema, tables: &[DataTable], opts: &RunOptions, csps: usize, seed: u64) -> Result<RunReport> {
    ensure!(csps >= 2, "need at least 2 computing parties");
    ensure!(!tables.is_empty(), "need at least one data file");
    let config = session_config(schema, opts, tables.len(), csps, seed);
    let out = session::simulate_session(&config, tables)?;
    let lead = &out.csps[0];
    let audit = transcript_audit(&lead.transcript, &lead.pg);
    Ok(RunReport {
        command: "sim".into(),
        pg: lead.pg.to_document(schema, opts.target, opts.mode, config.params.frac_bits),
        trace: names_trace(schema, &lead.trace),
        timings: timing_map(&lead.timings),
        transcript: Some(lead.transcript.summary()),
        audit: Some(audit),
    })
}

/// Outcome of comparing the traversal with exhaustive enumeration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub records: usize,
    pub diffs: Vec<String>,
}

/// Deliberate damage applied before comparison, to prove the check can fail.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VerifyHook {
    #[default]
    None,
    /// Adds one unit in the last place to the given record's score.
    CorruptRecord(usize),
}

pub fn cmd_verify(schema: &Schema, tables: &[DataTable], target: usize, l_max: usize, hook: VerifyHook) -> Result<VerifyReport> {
    let data = DataTable::concat(tables);
    data.validate(schema)?;
    let params = FieldParams::default();
    let expected = brute_force_mps(schema, &data, &params, target, l_max, false)?;
    let mut backend = FixedBackend::new(schema, &data, target, params)?;
    let mut got = maximal_parent_sets(&mut backend, &LatticeConfig::new(target, l_max))?.pg;
    if let VerifyHook::CorruptRecord(i) = hook {
        if let Some(r) = got.records.get_mut(i) {
            r.score2 = FixedPoint(r.score2.0 + 1);
        }
    }
    let diffs = diff_structures(schema, &got, &expected);
    Ok(VerifyReport { passed: diffs.is_empty(), records: expected.len(), diffs })
}

/// Synthetic corpus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GenSpec {
    pub variables: usize,
    pub rows: usize,
    /// One arity for all variables, or one per variable.
    pub arities: Vec<usize>,
    pub shards: usize,
    pub seed: u64,
    /// Probability that a planted variable ignores its parents for a row.
    pub noise: f64,
    /// Largest planted parent set.
    pub max_parents: usize,
    /// Makes the last variable an exact copy of the first.
    pub copy_first: bool,
    /// Public row bound; defaults to the next power of two at or above `rows`.
    pub m_max: Option<u64>,
}

impl GenSpec {
    pub fn new(variables: usize, rows: usize, seed: u64) -> GenSpec {
        GenSpec {
            variables,
            rows,
            arities: vec![2],
            shards: 1,
            seed,
            noise: 0.2,
            max_parents: 2,
            copy_first: false,
            m_max: None,
        }
    }
}

/// Planted data: each variable is a noisy function of a random set of
/// earlier variables. Rows are split into contiguous shards.
pub fn cmd_gen(spec: &GenSpec) -> Result<(Schema, Vec<DataTable>)> {
    let n = spec.variables;
    ensure!(n >= 1 && spec.shards >= 1, "variables and shards must be positive");
    ensure!((0.0..=1.0).contains(&spec.noise), "noise must lie in [0, 1]");
    let mut arities = match spec.arities.len() {
        1 => vec![spec.arities[0]; n],
        k if k == n => spec.arities.clone(),
        k => bail!("{k} arities given for {n} variables"),
    };
    if spec.copy_first && n >= 2 {
        arities[n - 1] = arities[0];
    }
    let m_max = spec.m_max.unwrap_or((spec.rows.max(1) as u64).next_power_of_two());
    ensure!(spec.rows as u64 <= m_max, "{} rows exceed m_max {m_max}", spec.rows);
    let variables = arities
        .iter()
        .enumerate()
        .map(|(i, &arity)| Variable { name: format!("X{i}"), arity, states: None })
        .collect();
    let schema = Schema::new(variables, m_max)?;

    let mut rng = ChaCha20Rng::from_seed(derive_seed(spec.seed, "gen", 0));
    // planted parents and a random function table per variable
    let mut plans: Vec<(Vec<usize>, Vec<u32>)> = Vec::with_capacity(n);
    for (v, &arity) in arities.iter().enumerate() {
        let k = rng.gen_range(0..=spec.max_parents.min(v));
        let mut parents = rand::seq::index::sample(&mut rng, v.max(1), k.min(v)).into_vec();
        parents.sort_unstable();
        let cells = schema.cells(&parents);
        let table = (0..cells).map(|_| rng.gen_range(0..arity as u32)).collect();
        plans.push((parents, table));
    }
    let mut rows = Vec::with_capacity(spec.rows);
    for _ in 0..spec.rows {
        let mut row = vec![0u32; n];
        for v in 0..n {
            if spec.copy_first && n >= 2 && v == n - 1 {
                row[v] = row[0];
                continue;
            }
            let (parents, table) = &plans[v];
            row[v] = if parents.is_empty() || rng.gen_bool(spec.noise) {
                rng.gen_range(0..arities[v] as u32)
            } else {
                let idx = parentsets::scoring::radix_index(&row, parents, &arities)?;
                table[idx]
            };
        }
        rows.push(row);
    }
    let mut shards = Vec::with_capacity(spec.shards);
    let base = spec.rows / spec.shards;
    let extra = spec.rows % spec.shards;
    let mut it = rows.into_iter();
    for s in 0..spec.shards {
        let take = base + usize::from(s < extra);
        shards.push(DataTable::new(it.by_ref().take(take).collect()));
    }
    Ok((schema, shards))
}

/// Writes `schema.json` and `owner{l}.csv` (1-based) into `dir`.
pub fn write_corpus(dir: &Path, schema: &Schema, shards: &[DataTable]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    save_schema(&dir.join("schema.json"), schema)?;
    let mut paths = Vec::new();
    for (l, shard) in shards.iter().enumerate() {
        let p = dir.join(format!("owner{}.csv", l + 1));
        write_csv(&p, schema, shard)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Networked deployment file shared by every party.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartyConfig {
    /// 32 hex digits.
    pub session_id: String,
    pub schema: Schema,
    pub target: String,
    #[serde(default)]
    pub l_max: Option<usize>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub empty_set_penalty: bool,
    #[serde(default)]
    pub params: FieldParams,
    pub csps: usize,
    pub owners: usize,
    /// Listen addresses by roster index: computing parties, owners, dealer.
    pub roster: Vec<SocketAddr>,
    #[serde(default)]
    pub dealer_seed: u64,
    #[serde(default)]
    pub owner_seed: u64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

impl PartyConfig {
    pub fn load(path: &Path) -> Result<PartyConfig> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn session(&self) -> Result<SessionConfig> {
        let opts = RunOptions::new(&self.schema, &self.target, self.l_max, self.mode)?;
        let mut c = SessionConfig::new(self.schema.clone(), opts.target, self.owners, self.csps);
        c.l_max = opts.l_max;
        c.mode = self.mode;
        c.empty_set_penalty = self.empty_set_penalty;
        c.params = self.params;
        c.session_id = SessionId::from_hex(&self.session_id)?;
        c.dealer_seed = self.dealer_seed;
        c.owner_seed = self.owner_seed;
        c.timeout = Duration::from_secs(self.timeout_secs);
        ensure!(
            self.roster.len() == c.party_count(),
            "roster lists {} addresses for {} parties",
            self.roster.len(),
            c.party_count()
        );
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Role {
    /// Data owner.
    Do,
    /// Computing party.
    Csp,
    Dealer,
}

/// What a networked party prints when it finishes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PartyOutput {
    Report(RunReport),
    Owner { pg: PgDocument },
    Dealer { served: usize },
}

/// Joins the session over TCP as `role` number `index` (0-based within the role).
pub fn cmd_party(config: &PartyConfig, role: Role, index: usize, data: Option<&DataTable>) -> Result<PartyOutput> {
    let session = config.session()?;
    let (me, peers): (usize, Vec<usize>) = match role {
        Role::Csp => {
            ensure!(index < session.csps, "computing party index {index} out of range");
            (index, (0..session.party_count()).filter(|&p| p != index).collect())
        }
        Role::Do => {
            ensure!(data.is_some(), "a data owner needs --data");
            ensure!(index < session.owners, "owner index {index} out of range");
            (session.owner_index(index), session.csp_indices())
        }
        Role::Dealer => (session.dealer_index(), session.csp_indices()),
    };
    let transport = TcpTransport::establish(me, &config.roster, &peers, session.timeout)?;
    let net = Endpoint::new(Box::new(transport), session.session_id, session.timeout);
    let target = session.target;
    match role {
        Role::Csp => {
            let out = session::run_csp(&session, net, index)?;
            let audit = transcript_audit(&out.transcript, &out.pg);
            Ok(PartyOutput::Report(RunReport {
                command: "party".into(),
                pg: out.pg.to_document(&session.schema, target, session.mode, session.params.frac_bits),
                trace: names_trace(&session.schema, &out.trace),
                timings: timing_map(&out.timings),
                transcript: Some(out.transcript.summary()),
                audit: Some(audit),
            }))
        }
        Role::Do => {
            let data = data.context("a data owner needs --data")?;
            let pg = session::run_data_owner(&session, net, index, data)?;
            Ok(PartyOutput::Owner {
                pg: pg.to_document(&session.schema, target, session.mode, session.params.frac_bits),
            })
        }
        Role::Dealer => {
            let report = session::run_dealer(&session, net)?;
            Ok(PartyOutput::Dealer { served: report.stats.served.iter().map(|(_, n)| n).sum() })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
    }

    #[test]
    fn bundled_table1_loads() {
        let schema = load_schema(&table1_dir().join("table1_schema.json")).unwrap();
        let t = load_csv(&table1_dir().join("table1_owner1.csv"), &schema).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.rows[0], vec![0, 0, 0, 1]);
        assert_eq!(schema.parse_state(0, "F").unwrap(), 0);
    }

    #[test]
    fn csv_errors_carry_row_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let schema = load_schema(&table1_dir().join("table1_schema.json")).unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "Sex,Age,Race,T2D\nF,[18-45),White,1\nM,[18-45),Green,0\n").unwrap();
        let err = format!("{:#}", load_csv(&p, &schema).unwrap_err());
        assert!(err.contains("row 3") && err.contains("Green"), "{err}");
        fs::write(&p, "Sex,Age,Race,T2D\nF,0,0\n").unwrap();
        assert!(format!("{:#}", load_csv(&p, &schema).unwrap_err()).contains("row 2"));
        fs::write(&p, "Sex,Age,Race,T2D\n0,0,5,0\n").unwrap();
        assert!(format!("{:#}", load_csv(&p, &schema).unwrap_err()).contains("out of range"));
        fs::write(&p, "Sex,Age,Race,T2D\n").unwrap();
        assert_eq!(load_csv(&p, &schema).unwrap().len(), 0);
        fs::write(&p, "Age,Sex,Race,T2D\n").unwrap();
        assert!(load_csv(&p, &schema).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (schema, shards) = cmd_gen(&GenSpec { arities: vec![3], ..GenSpec::new(4, 50, 9) }).unwrap();
        let p = dir.path().join("t.csv");
        write_csv(&p, &schema, &shards[0]).unwrap();
        assert_eq!(load_csv(&p, &schema).unwrap(), shards[0]);
    }

    #[test]
    fn gen_is_reproducible_and_sharded() {
        let spec = GenSpec { shards: 3, arities: vec![2, 3, 2, 3], ..GenSpec::new(4, 100, 1) };
        let (s1, a) = cmd_gen(&spec).unwrap();
        let (s2, b) = cmd_gen(&spec).unwrap();
        assert_eq!((s1.clone(), a.clone()), (s2, b));
        assert_eq!(a.iter().map(DataTable::len).collect::<Vec<_>>(), vec![34, 33, 33]);
        assert_eq!(s1.m_max, 128);
        let (_, single) = cmd_gen(&GenSpec::new(4, 100, 1)).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].len(), 100);
        let (_, other) = cmd_gen(&GenSpec::new(4, 100, 2)).unwrap();
        assert_ne!(single, other);
    }

    #[test]
    fn planted_copy_is_recovered() {
        let spec = GenSpec { copy_first: true, arities: vec![3], ..GenSpec::new(4, 512, 3) };
        let (schema, shards) = cmd_gen(&spec).unwrap();
        let opts = RunOptions::new(&schema, "X0", None, Mode::Corrected).unwrap();
        let report = cmd_oracle(&schema, &shards, &opts, Precision::Fixed).unwrap();
        assert!(report.pg.records.iter().any(|r| r.set == vec!["X3".to_string()]), "{:?}", report.pg);
    }

    #[test]
    fn verify_hook_is_detected() {
        let schema = load_schema(&table1_dir().join("table1_schema.json")).unwrap();
        let t = load_csv(&table1_dir().join("table1_owner1.csv"), &schema).unwrap();
        assert!(cmd_verify(&schema, std::slice::from_ref(&t), 3, 3, VerifyHook::None).unwrap().passed);
        let bad = cmd_verify(&schema, &[t], 3, 3, VerifyHook::CorruptRecord(0)).unwrap();
        assert!(!bad.passed);
        assert_eq!(bad.diffs.len(), 1);
    }
}
