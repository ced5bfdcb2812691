//! Session roles and the secure scoring backend.
//!
//! Roster layout by global index: computing parties `0..β` (party 0
//! coordinates), data owners `β..β+α`, then the dealer. Data owners are also
//! the output recipients.
//!
//! Session flow:
//! 1. The coordinator sends `SETUP` (config digest) to every other party and
//!    collects matching `SETUP_ACK`s.
//! 2. Each owner sends every computing party a share of its row count.
//! 3. The computing parties look up `T[m]` once, then run the traversal. For
//!    each scored set the coordinator sends `COUNT_REQUEST` to the owners,
//!    who answer every computing party with `COUNT_SHARES`.
//! 4. After each layer the computing parties exchange `LAYER_DIGEST`s of the
//!    public traversal state.
//! 5. Each computing party sends the output to every owner as `RESULT`; the
//!    owners check that all copies agree.

use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{Fe, FieldParams, FixedPoint};
use crate::lattice::{maximal_parent_sets, LatticeConfig, Mode, Operand, PGStructure, PgDocument, Scope, ScoringBackend};
use crate::mpc::{serve_material, Csp, DealerStats, MaterialUsage};
use crate::scoring::{check_candidate, contingency, penalty_coefficient, DataTable, LogTable, Schema};
use crate::sharing::{share_values, Dealer};
use crate::transcript::{LeakageClass, ScopeKind, Transcript};
use crate::transport::{Endpoint, InProcessTransport, TrafficRecord, Transport};
use crate::wire::{decode_fes, decode_set_header, encode_fes, encode_set_header, MessageType, SessionId};

pub const DEFAULT_CELL_BUDGET: usize = 1_000_000;

/// Everything the parties must agree on, plus local seeds and timeouts.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionConfig {
    pub schema: Schema,
    pub target: usize,
    pub l_max: usize,
    pub mode: Mode,
    pub empty_set_penalty: bool,
    pub params: FieldParams,
    pub owners: usize,
    pub csps: usize,
    pub session_id: SessionId,
    pub dealer_seed: u64,
    pub owner_seed: u64,
    pub cell_budget: usize,
    pub timeout: Duration,
}

#[derive(Serialize)]
struct PublicView<'a> {
    schema: &'a Schema,
    target: usize,
    l_max: usize,
    mode: Mode,
    empty_set_penalty: bool,
    params: &'a FieldParams,
    owners: usize,
    csps: usize,
    cell_budget: usize,
}

impl SessionConfig {
    /// Defaults: corrected mode, `l_max = n − 1`, default field parameters.
    pub fn new(schema: Schema, target: usize, owners: usize, csps: usize) -> SessionConfig {
        let l_max = schema.len().saturating_sub(1);
        SessionConfig {
            schema,
            target,
            l_max,
            mode: Mode::Corrected,
            empty_set_penalty: false,
            params: FieldParams::default(),
            owners,
            csps,
            session_id: SessionId::default(),
            dealer_seed: 0,
            owner_seed: 0,
            cell_budget: DEFAULT_CELL_BUDGET,
            timeout: Duration::from_secs(120),
        }
    }

    pub fn lattice(&self) -> LatticeConfig {
        LatticeConfig {
            target: self.target,
            l_max: self.l_max,
            mode: self.mode,
            empty_set_penalty: self.empty_set_penalty,
        }
    }

    pub fn owner_index(&self, owner: usize) -> usize {
        self.csps + owner
    }

    pub fn dealer_index(&self) -> usize {
        self.csps + self.owners
    }

    pub fn party_count(&self) -> usize {
        self.csps + self.owners + 1
    }

    pub fn csp_indices(&self) -> Vec<usize> {
        (0..self.csps).collect()
    }

    pub fn owner_indices(&self) -> Vec<usize> {
        (0..self.owners).map(|l| self.owner_index(l)).collect()
    }

    /// Digest of the public configuration every party must share.
    pub fn digest(&self) -> [u8; 32] {
        let view = PublicView {
            schema: &self.schema,
            target: self.target,
            l_max: self.l_max,
            mode: self.mode,
            empty_set_penalty: self.empty_set_penalty,
            params: &self.params,
            owners: self.owners,
            csps: self.csps,
            cell_budget: self.cell_budget,
        };
        Sha256::digest(serde_json::to_vec(&view).expect("config serializes")).into()
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        self.params.validate()?;
        if self.csps < 2 {
            return Err(Error::Config(format!("need at least 2 computing parties, got {}", self.csps)));
        }
        if self.owners < 1 {
            return Err(Error::Config("need at least one data owner".into()));
        }
        let n = self.schema.len();
        if self.target >= n {
            return Err(Error::Config(format!("target index {} out of range", self.target)));
        }
        let pool: Vec<usize> = (0..n).filter(|&v| v != self.target).collect();
        let full_cells = self.schema.cells(&pool);
        if full_cells > self.cell_budget {
            return Err(Error::Config(format!(
                "entropy bound needs {full_cells} cells, budget is {}",
                self.cell_budget
            )));
        }
        let bound = self.params.magnitude_bound();
        if (self.schema.m_max as i128) + 1 >= bound {
            return Err(Error::Config(format!("m_max {} too large for K = {}", self.schema.m_max, self.params.magnitude_bits)));
        }
        let t_max = LogTable::build(self.schema.m_max, self.params.frac_bits).get(self.schema.m_max)?.0;
        let r = self.schema.arity(self.target);
        let worst = (2 * self.schema.m_max as i128 + penalty_coefficient(full_cells, r) as i128) * t_max;
        if worst >= bound {
            return Err(Error::Config(format!(
                "doubled scores may reach {worst}, beyond 2^{}; raise K or lower m_max",
                self.params.magnitude_bits
            )));
        }
        Ok(())
    }
}

/// 32-byte RNG seed derived from a base seed, a role label and an index.
pub fn derive_seed(base: u64, label: &str, index: usize) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(base.to_be_bytes());
    h.update(label.as_bytes());
    h.update((index as u64).to_be_bytes());
    h.finalize().into()
}

fn lead_setup(net: &mut Endpoint, config: &SessionConfig) -> Result<()> {
    let digest = config.digest();
    let others: Vec<usize> = (1..config.party_count()).collect();
    for &p in &others {
        net.send(p, MessageType::Setup, 0, 0, digest.to_vec())?;
    }
    for &p in &others {
        let ack = net.recv(p, MessageType::SetupAck)?;
        if ack.payload != digest {
            return Err(Error::Config(format!("party {p} runs a different session configuration")));
        }
    }
    Ok(())
}

fn follow_setup(net: &mut Endpoint, config: &SessionConfig) -> Result<()> {
    let digest = config.digest();
    let setup = net.recv(0, MessageType::Setup)?;
    net.send(0, MessageType::SetupAck, 0, 0, digest.to_vec())?;
    if setup.payload != digest {
        return Err(Error::Config("coordinator runs a different session configuration".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub setup_secs: f64,
    pub traversal_secs: f64,
    pub total_secs: f64,
}

/// What one computing party ends the session with.
#[derive(Clone, Debug)]
pub struct CspOutcome {
    pub pg: PGStructure<FixedPoint>,
    pub trace: Vec<Vec<usize>>,
    pub transcript: Transcript,
    pub usage: MaterialUsage,
    pub timings: Timings,
}

/// The secure realization of the scoring interface at one computing party.
pub struct SecureBackend<'a> {
    csp: &'a mut Csp,
    config: &'a SessionConfig,
    table: Vec<Fe>,
    log_m: Fe,
}

impl<'a> SecureBackend<'a> {
    /// Looks up the shared `T[m]` once from the shared row total.
    pub fn new(csp: &'a mut Csp, config: &'a SessionConfig, m_share: Fe) -> Result<SecureBackend<'a>> {
        let table: Vec<Fe> = LogTable::build(config.schema.m_max, config.params.frac_bits)
            .entries
            .iter()
            .map(|t| t.to_field())
            .collect();
        let log_m = csp.lookup(&[m_share], &table)?[0];
        Ok(SecureBackend { csp, config, table, log_m })
    }

    fn operand(&self, o: Operand<'_, Fe, FixedPoint>) -> Fe {
        match o {
            Operand::Secret(s) => *s,
            Operand::Public(p) => self.csp.constant(p.to_field()),
        }
    }

    /// Sums every owner's share vector of the counts for `set`.
    fn gather_counts(&mut self, set: &[usize]) -> Result<Vec<Fe>> {
        let config = self.config;
        let header = encode_set_header(config.target, set);
        if self.csp.is_coordinator() {
            let round = self.csp.round();
            for o in config.owner_indices() {
                self.csp.net().send(o, MessageType::CountRequest, round, 0, header.clone())?;
            }
        }
        let len = config.schema.cells(set) * config.schema.arity(config.target);
        let mut sums = vec![Fe::ZERO; len];
        for o in config.owner_indices() {
            let frame = self.csp.net().recv(o, MessageType::CountShares)?;
            let (target, got, body) = decode_set_header(&frame.payload)?;
            if target != config.target || got != set {
                return Err(Error::Protocol(format!(
                    "owner {o} sent counts for {got:?} (target {target}), expected {set:?}"
                )));
            }
            let values = decode_fes(body)?;
            if values.len() != len {
                return Err(Error::Protocol(format!("owner {o} sent {} counts, expected {len}", values.len())));
            }
            for (s, v) in sums.iter_mut().zip(values) {
                *s += v;
            }
        }
        Ok(sums)
    }
}

impl ScoringBackend for SecureBackend<'_> {
    type Secret = Fe;
    type Public = FixedPoint;

    fn schema(&self) -> &Schema {
        &self.config.schema
    }

    fn entropy2(&mut self, set: &[usize]) -> Result<Fe> {
        let r = self.config.schema.arity(self.config.target);
        let joint = self.gather_counts(set)?;
        let cells = joint.len() / r;
        let mut indices: Vec<Fe> = joint.chunks(r).map(|c| c.iter().copied().sum()).collect();
        indices.extend_from_slice(&joint);
        let logs = self.csp.lookup(&indices, &self.table)?;
        let (log_cell, log_joint) = logs.split_at(cells);
        let diffs: Vec<Fe> = log_joint
            .iter()
            .enumerate()
            .map(|(jk, &t)| log_cell[jk / r] - t)
            .collect();
        let terms = self.csp.mul(&joint, &diffs)?;
        Ok(Fe::from_u64(2) * terms.into_iter().sum::<Fe>())
    }

    fn penalty2(&mut self, coefficient: u64) -> Result<Fe> {
        Ok(Fe::from_u64(coefficient) * self.log_m)
    }

    fn add(&mut self, a: &Fe, b: &Fe) -> Result<Fe> {
        Ok(*a + *b)
    }

    fn lt(&mut self, a: Operand<'_, Fe, FixedPoint>, b: Operand<'_, Fe, FixedPoint>) -> Result<bool> {
        let (x, y) = (self.operand(a), self.operand(b));
        Ok(self.csp.cmp_open_lt(&[x], &[y])?[0])
    }

    fn reveal(&mut self, s: &Fe) -> Result<FixedPoint> {
        let v = self.csp.open(&[*s], LeakageClass::InsertedRecord)?[0];
        self.config.params.check_magnitude(FixedPoint::from_field(v))
    }

    fn begin_scope(&mut self, scope: Scope<'_>) -> Result<()> {
        let kind = match scope {
            Scope::Bound => ScopeKind::Bound,
            Scope::Candidate(set) => ScopeKind::Candidate(set.to_vec()),
        };
        self.csp.transcript.begin_scope(kind);
        Ok(())
    }

    fn end_layer(&mut self, layer: usize, digest: &[u8; 32]) -> Result<()> {
        let mut payload = (layer as u32).to_be_bytes().to_vec();
        payload.extend_from_slice(digest);
        let round = self.csp.round();
        let peers: Vec<usize> = self.csp.peers().collect();
        for &p in &peers {
            self.csp.net().send(p, MessageType::LayerDigest, round, 0, payload.clone())?;
        }
        for &p in &peers {
            let frame = self.csp.net().recv(p, MessageType::LayerDigest)?;
            if frame.payload != payload {
                return Err(Error::Protocol(format!("party {p} disagrees on the traversal state after layer {layer}")));
            }
        }
        Ok(())
    }
}

fn run_csp_inner(config: &SessionConfig, csp: &mut Csp) -> Result<(PGStructure<FixedPoint>, Vec<Vec<usize>>, Timings)> {
    let start = Instant::now();
    if csp.is_coordinator() {
        lead_setup(csp.net(), config)?;
    } else {
        follow_setup(csp.net(), config)?;
    }
    let mut m_share = Fe::ZERO;
    for o in config.owner_indices() {
        let frame = csp.net().recv(o, MessageType::InputMShare)?;
        let v = decode_fes(&frame.payload)?;
        if v.len() != 1 {
            return Err(Error::Protocol(format!("owner {o} sent {} row-count shares", v.len())));
        }
        m_share += v[0];
    }
    let mut backend = SecureBackend::new(csp, config, m_share)?;
    let setup_secs = start.elapsed().as_secs_f64();
    let traversal = maximal_parent_sets(&mut backend, &config.lattice())?;
    let traversal_secs = start.elapsed().as_secs_f64() - setup_secs;
    csp.finish()?;
    let doc = traversal
        .pg
        .to_document(&config.schema, config.target, config.mode, config.params.frac_bits);
    let payload = serde_json::to_vec(&doc)?;
    let round = csp.round();
    for o in config.owner_indices() {
        csp.net().send(o, MessageType::Result, round, 0, payload.clone())?;
    }
    let timings = Timings { setup_secs, traversal_secs, total_secs: start.elapsed().as_secs_f64() };
    Ok((traversal.pg, traversal.trace, timings))
}

/// Runs computing party `index` to completion.
pub fn run_csp(config: &SessionConfig, net: Endpoint, index: usize) -> Result<CspOutcome> {
    config.validate()?;
    let mut csp = Csp::new(index, config.csps, config.dealer_index(), config.params, net)?;
    match run_csp_inner(config, &mut csp) {
        Ok((pg, trace, timings)) => Ok(CspOutcome {
            pg,
            trace,
            transcript: std::mem::take(&mut csp.transcript),
            usage: std::mem::take(&mut csp.usage),
            timings,
        }),
        Err(e) => {
            let everyone: Vec<usize> = (0..config.party_count()).filter(|&p| p != index).collect();
            csp.net().abort(&everyone, &e.to_string());
            Err(e)
        }
    }
}

fn run_owner_inner(
    config: &SessionConfig,
    net: &mut Endpoint,
    owner: usize,
    table: &DataTable,
) -> Result<PGStructure<FixedPoint>> {
    table.validate(&config.schema)?;
    let rows = table.len() as u64;
    if rows > config.schema.m_max {
        return Err(Error::Data(format!("{rows} rows exceed m_max {}", config.schema.m_max)));
    }
    follow_setup(net, config)?;
    let mut rng = ChaCha20Rng::from_seed(derive_seed(config.owner_seed, "owner", owner));
    let csps = config.csp_indices();
    for (&p, s) in csps.iter().zip(share_values(Fe::from_u64(rows), config.csps, &mut rng)) {
        net.send(p, MessageType::InputMShare, 0, 0, encode_fes(&[s]))?;
    }
    loop {
        let frame = net.recv_any(0)?;
        match frame.kind {
            MessageType::CountRequest => {
                let (target, set, rest) = decode_set_header(&frame.payload)?;
                if !rest.is_empty() {
                    return Err(Error::Malformed("trailing bytes after count request".into()));
                }
                if target != config.target {
                    return Err(Error::Protocol(format!("count request for target {target}")));
                }
                check_candidate(&config.schema, target, &set)?;
                let counts = contingency(&config.schema, table, target, &set)?;
                let mut per_party: Vec<Vec<Fe>> = vec![Vec::with_capacity(counts.counts.len()); config.csps];
                for &c in &counts.counts {
                    for (i, s) in share_values(Fe::from_u64(c), config.csps, &mut rng).into_iter().enumerate() {
                        per_party[i].push(s);
                    }
                }
                let header = encode_set_header(target, &set);
                for (&p, shares) in csps.iter().zip(per_party) {
                    let mut payload = header.clone();
                    payload.extend_from_slice(&encode_fes(&shares));
                    net.send(p, MessageType::CountShares, frame.round, 0, payload)?;
                }
            }
            MessageType::Result => {
                let first = frame.payload;
                for &p in &csps[1..] {
                    let other = net.recv(p, MessageType::Result)?;
                    if other.payload != first {
                        return Err(Error::Protocol(format!("party {p} reported a different result")));
                    }
                }
                let doc: PgDocument = serde_json::from_slice(&first)?;
                return doc.to_fixed(&config.schema);
            }
            other => return Err(Error::Protocol(format!("owner received unexpected {other:?}"))),
        }
    }
}

/// Runs data owner `owner` (0-based) holding `table`; returns the output it receives.
pub fn run_data_owner(config: &SessionConfig, mut net: Endpoint, owner: usize, table: &DataTable) -> Result<PGStructure<FixedPoint>> {
    match run_owner_inner(config, &mut net, owner, table) {
        Ok(pg) => Ok(pg),
        Err(e) => {
            net.abort(&config.csp_indices(), &e.to_string());
            Err(e)
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct DealerReport {
    pub stats: DealerStats,
    pub inbound: Vec<TrafficRecord>,
}

/// Runs the dealer; it only ever receives setup and material requests.
pub fn run_dealer(config: &SessionConfig, mut net: Endpoint) -> Result<DealerReport> {
    net.log_inbound(true);
    let result = follow_setup(&mut net, config).and_then(|_| {
        let rng = ChaCha20Rng::from_seed(derive_seed(config.dealer_seed, "dealer", 0));
        let mut dealer = Dealer::new(rng, config.csps, config.params);
        serve_material(&mut net, &config.csp_indices(), &mut dealer)
    });
    match result {
        Ok(stats) => Ok(DealerReport { stats, inbound: net.inbound().to_vec() }),
        Err(e) => {
            net.abort(&config.csp_indices(), &e.to_string());
            Err(e)
        }
    }
}

/// Results of a completed session, as seen by every party.
pub struct SessionOutcome {
    pub csps: Vec<CspOutcome>,
    pub owners: Vec<PGStructure<FixedPoint>>,
    pub dealer: DealerReport,
}

impl SessionOutcome {
    pub fn pg(&self) -> &PGStructure<FixedPoint> {
        &self.csps[0].pg
    }

    pub fn transcript(&self) -> &Transcript {
        &self.csps[0].transcript
    }

    /// Every computing party and owner must hold the same output, and the
    /// computing parties the same transcript.
    pub fn check_agreement(&self) -> Result<()> {
        let first = &self.csps[0];
        let digest = first.transcript.digest();
        for (i, c) in self.csps.iter().enumerate().skip(1) {
            if c.pg != first.pg || c.trace != first.trace {
                return Err(Error::Protocol(format!("computing party {i} ended with a different output")));
            }
            if c.transcript.digest() != digest {
                return Err(Error::Protocol(format!("computing party {i} ended with a different transcript")));
            }
        }
        for (l, pg) in self.owners.iter().enumerate() {
            if pg != &first.pg {
                return Err(Error::Protocol(format!("owner {l} received a different output")));
            }
        }
        Ok(())
    }
}

fn join<T>(r: thread::Result<Result<T>>) -> Result<T> {
    r.unwrap_or_else(|_| Err(Error::Protocol("party thread panicked".into())))
}

fn pick_error(errors: Vec<Error>) -> Error {
    // prefer the root cause over the abort notices it triggered
    let mut rest = Vec::new();
    for e in errors {
        match e {
            Error::Aborted { .. } | Error::Transport(_) => rest.push(e),
            other => return other,
        }
    }
    rest.into_iter().next().unwrap_or_else(|| Error::Protocol("session failed".into()))
}

/// Hosts every party on its own thread over the in-process transport.
pub fn simulate_session(config: &SessionConfig, tables: &[DataTable]) -> Result<SessionOutcome> {
    config.validate()?;
    if tables.len() != config.owners {
        return Err(Error::Config(format!("{} tables for {} owners", tables.len(), config.owners)));
    }
    let mut nodes: Vec<Option<InProcessTransport>> = InProcessTransport::mesh(config.party_count()).into_iter().map(Some).collect();
    let endpoint = |t: InProcessTransport| Endpoint::new(Box::new(t) as Box<dyn Transport>, config.session_id, config.timeout);

    thread::scope(|scope| {
        let csp_handles: Vec<_> = (0..config.csps)
            .map(|i| {
                let net = endpoint(nodes[i].take().unwrap());
                scope.spawn(move || run_csp(config, net, i))
            })
            .collect();
        let owner_handles: Vec<_> = tables
            .iter()
            .enumerate()
            .map(|(l, table)| {
                let net = endpoint(nodes[config.owner_index(l)].take().unwrap());
                scope.spawn(move || run_data_owner(config, net, l, table))
            })
            .collect();
        let dealer_net = endpoint(nodes[config.dealer_index()].take().unwrap());
        let dealer_handle = scope.spawn(move || run_dealer(config, dealer_net));

        let csps: Vec<Result<CspOutcome>> = csp_handles.into_iter().map(|h| join(h.join())).collect();
        let owners: Vec<Result<PGStructure<FixedPoint>>> = owner_handles.into_iter().map(|h| join(h.join())).collect();
        let dealer = join(dealer_handle.join());

        let mut errors = Vec::new();
        let csps: Vec<CspOutcome> = csps.into_iter().filter_map(|r| r.map_err(|e| errors.push(e)).ok()).collect();
        let owners: Vec<_> = owners.into_iter().filter_map(|r| r.map_err(|e| errors.push(e)).ok()).collect();
        let dealer = dealer.map_err(|e| errors.push(e)).ok();
        if !errors.is_empty() {
            return Err(pick_error(errors));
        }
        let outcome = SessionOutcome { csps, owners, dealer: dealer.unwrap() };
        outcome.check_agreement()?;
        Ok(outcome)
    })
}
