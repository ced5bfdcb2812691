//! Interactive gadgets run by the computing parties over additive shares.
//!
//! Every gadget is batched: it takes one share per instance and performs all
//! instances in the same communication rounds. A share here is a plain
//! [`Fe`] held by this party; the secret is the sum over all parties.
//!
//! Material use per instance: `mul` one triple; `ltz` one comparison mask
//! and `K - 1` triples; `lookup` one lookup vector plus one `ltz`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::field::{Fe, FieldParams};
use crate::sharing::{BeaverTriple, CmpMaterial, Dealer, LookupMaterial, MaterialBatch, MaterialKind, MaterialRequest};
use crate::transcript::{LeakageClass, Transcript};
use crate::transport::{Endpoint, InProcessTransport};
use crate::wire::{decode_fes, encode_fes, MessageType, SessionId};

/// Material consumed and requested so far.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaterialUsage {
    pub triples: usize,
    pub lookups: usize,
    pub cmps: usize,
    pub requests: Vec<(MaterialKind, usize)>,
}

#[derive(Default)]
struct MaterialPool {
    triples: VecDeque<BeaverTriple>,
    lookups: HashMap<usize, VecDeque<LookupMaterial>>,
    cmps: VecDeque<CmpMaterial>,
    // a-shares of consumed triples; a repeat means replayed material
    spent_triples: HashSet<u128>,
}

/// One computing party's protocol state.
pub struct Csp {
    index: usize,
    parties: usize,
    dealer: usize,
    params: FieldParams,
    net: Endpoint,
    round: u32,
    gadget: u32,
    pool: MaterialPool,
    two_k_inv: Fe,
    pub transcript: Transcript,
    pub usage: MaterialUsage,
}

impl Csp {
    /// Computing parties occupy global indices `0..parties`.
    pub fn new(index: usize, parties: usize, dealer: usize, params: FieldParams, net: Endpoint) -> Result<Csp> {
        params.validate()?;
        if parties < 2 || index >= parties {
            return Err(Error::Config(format!("party {index} of {parties} computing parties")));
        }
        let two_k_inv = Fe::pow2(params.magnitude_bits).inverse().expect("2^K is invertible");
        Ok(Csp {
            index,
            parties,
            dealer,
            params,
            net,
            round: 0,
            gadget: 0,
            pool: MaterialPool::default(),
            two_k_inv,
            transcript: Transcript::default(),
            usage: MaterialUsage::default(),
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    pub fn params(&self) -> &FieldParams {
        &self.params
    }

    pub fn is_coordinator(&self) -> bool {
        self.index == 0
    }

    pub fn net(&mut self) -> &mut Endpoint {
        &mut self.net
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn peers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.parties).filter(move |&p| p != self.index)
    }

    /// This party's share of a public constant.
    pub fn constant(&self, c: Fe) -> Fe {
        if self.index == 0 {
            c
        } else {
            Fe::ZERO
        }
    }

    fn next_gadget(&mut self) -> u32 {
        self.gadget += 1;
        self.gadget
    }

    /// One round: broadcast my shares, collect everyone's, return the sums.
    fn exchange(&mut self, gadget: u32, values: &[Fe]) -> Result<Vec<Fe>> {
        self.round += 1;
        let round = self.round;
        let payload = encode_fes(values);
        let peers: Vec<usize> = self.peers().collect();
        for &p in &peers {
            self.net.send(p, MessageType::OpenPart, round, gadget, payload.clone())?;
        }
        let mut sums = values.to_vec();
        for &p in &peers {
            let frame = self.net.recv(p, MessageType::OpenPart)?;
            if frame.round != round || frame.gadget != gadget {
                return Err(Error::Protocol(format!(
                    "party {p} is at round {}/gadget {}, expected {round}/{gadget}",
                    frame.round, frame.gadget
                )));
            }
            let theirs = decode_fes(&frame.payload)?;
            if theirs.len() != sums.len() {
                return Err(Error::Protocol(format!(
                    "party {p} opened {} values, expected {}",
                    theirs.len(),
                    sums.len()
                )));
            }
            for (s, t) in sums.iter_mut().zip(theirs) {
                *s += t;
            }
        }
        Ok(sums)
    }

    fn open_in(&mut self, gadget: u32, values: &[Fe], class: LeakageClass) -> Result<Vec<Fe>> {
        let opened = self.exchange(gadget, values)?;
        for &v in &opened {
            self.transcript.record(self.round, gadget, v, class);
        }
        Ok(opened)
    }

    /// Reconstructs shared values at every party and logs them under `class`.
    pub fn open(&mut self, values: &[Fe], class: LeakageClass) -> Result<Vec<Fe>> {
        let g = self.next_gadget();
        self.open_in(g, values, class)
    }

    fn request(&mut self, kind: MaterialKind, count: usize) -> Result<()> {
        let req = MaterialRequest::Batch { kind, count };
        self.net.send(self.dealer, MessageType::MaterialRequest, self.round, self.gadget, req.encode())?;
        let frame = self.net.recv(self.dealer, MessageType::Material)?;
        let batch = MaterialBatch::decode(&frame.payload)?;
        if batch.kind() != kind || batch.count() != count {
            return Err(Error::Material(format!(
                "asked for {count} x {kind:?}, dealer sent {} x {:?}",
                batch.count(),
                batch.kind()
            )));
        }
        self.usage.requests.push((kind, count));
        match batch {
            MaterialBatch::Triples(items) => self.pool.triples.extend(items),
            MaterialBatch::Lookups { len, items } => self.pool.lookups.entry(len).or_default().extend(items),
            MaterialBatch::Cmps { bits, items } => {
                if bits != self.params.magnitude_bits as usize + 1 {
                    return Err(Error::Material(format!("comparison material with {bits} bits")));
                }
                self.pool.cmps.extend(items)
            }
        }
        Ok(())
    }

    fn take_triples(&mut self, n: usize) -> Result<Vec<BeaverTriple>> {
        if self.pool.triples.len() < n {
            self.request(MaterialKind::Triple, n - self.pool.triples.len())?;
        }
        let items: Vec<BeaverTriple> = self.pool.triples.drain(..n).collect();
        for t in &items {
            if !self.pool.spent_triples.insert(t.a.value()) {
                return Err(Error::Material("multiplication triple reused".into()));
            }
        }
        self.usage.triples += n;
        Ok(items)
    }

    fn take_cmps(&mut self, n: usize) -> Result<Vec<CmpMaterial>> {
        if self.pool.cmps.len() < n {
            self.request(MaterialKind::Cmp, n - self.pool.cmps.len())?;
        }
        self.usage.cmps += n;
        Ok(self.pool.cmps.drain(..n).collect())
    }

    fn take_lookups(&mut self, len: usize, n: usize) -> Result<Vec<LookupMaterial>> {
        let have = self.pool.lookups.get(&len).map_or(0, VecDeque::len);
        if have < n {
            self.request(MaterialKind::Lookup { len }, n - have)?;
        }
        self.usage.lookups += n;
        Ok(self.pool.lookups.get_mut(&len).unwrap().drain(..n).collect())
    }

    /// Hands triples to the pool directly. Test hook for replay detection.
    #[doc(hidden)]
    pub fn inject_triples(&mut self, triples: Vec<BeaverTriple>) {
        self.pool.triples.extend(triples);
    }

    fn mul_in(&mut self, gadget: u32, xs: &[Fe], ys: &[Fe]) -> Result<Vec<Fe>> {
        if xs.len() != ys.len() {
            return Err(Error::Protocol("multiplying vectors of different lengths".into()));
        }
        let n = xs.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let triples = self.take_triples(n)?;
        let mut masked = Vec::with_capacity(2 * n);
        masked.extend(xs.iter().zip(&triples).map(|(&x, t)| x - t.a));
        masked.extend(ys.iter().zip(&triples).map(|(&y, t)| y - t.b));
        let opened = self.open_in(gadget, &masked, LeakageClass::MaskedComparisonValue)?;
        let (d, e) = opened.split_at(n);
        Ok(triples
            .iter()
            .zip(d.iter().zip(e))
            .map(|(t, (&d, &e))| t.c + d * t.b + e * t.a + self.constant(d * e))
            .collect())
    }

    /// Elementwise products of shared vectors.
    pub fn mul(&mut self, xs: &[Fe], ys: &[Fe]) -> Result<Vec<Fe>> {
        let g = self.next_gadget();
        self.mul_in(g, xs, ys)
    }

    fn ltz_in(&mut self, gadget: u32, ds: &[Fe]) -> Result<Vec<Fe>> {
        let n = ds.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let k = self.params.magnitude_bits;
        let cmps = self.take_cmps(n)?;
        let shift = Fe::pow2(k);
        let masked: Vec<Fe> = ds
            .iter()
            .zip(&cmps)
            .map(|(&d, m)| d + self.constant(shift) + m.mask)
            .collect();
        let opened = self.open_in(gadget, &masked, LeakageClass::MaskedComparisonValue)?;
        let limit = (1u128 << (k + 1 + self.params.sigma)) + (1u128 << (k + 1));
        if let Some(bad) = opened.iter().find(|c| c.value() >= limit) {
            return Err(Error::Protocol(format!("masked comparison value {bad} out of range")));
        }
        let low_mask = (1u128 << k) - 1;
        let c_low: Vec<u128> = opened.iter().map(|c| c.value() & low_mask).collect();
        let c_bit = |i: usize, b: u32| (c_low[i] >> b) & 1 == 1;

        // [c_low < R_low], scanning bits from least significant upward
        let mut lt: Vec<Fe> = (0..n)
            .map(|i| if c_bit(i, 0) { Fe::ZERO } else { cmps[i].bits[0] })
            .collect();
        for b in 1..k {
            let differ: Vec<Fe> = (0..n)
                .map(|i| {
                    let r = cmps[i].bits[b as usize];
                    if c_bit(i, b) {
                        self.constant(Fe::ONE) - r
                    } else {
                        r
                    }
                })
                .collect();
            let toward: Vec<Fe> = (0..n).map(|i| cmps[i].bits[b as usize] - lt[i]).collect();
            let prod = self.mul_in(gadget, &differ, &toward)?;
            for (l, p) in lt.iter_mut().zip(prod) {
                *l += p;
            }
        }

        Ok((0..n)
            .map(|i| {
                let r_low: Fe = (0..k).map(|b| Fe::pow2(b) * cmps[i].bits[b as usize]).sum();
                let d_low = self.constant(Fe::new(c_low[i])) - r_low + shift * lt[i];
                let shifted = ds[i] + self.constant(shift);
                let non_negative = (shifted - d_low) * self.two_k_inv;
                self.constant(Fe::ONE) - non_negative
            })
            .collect())
    }

    /// Shares of `[d < 0]` for shared `d` with `|d| < 2^K`.
    pub fn ltz(&mut self, ds: &[Fe]) -> Result<Vec<Fe>> {
        let g = self.next_gadget();
        self.ltz_in(g, ds)
    }

    /// Public bits `a < b`; ties give `false`.
    pub fn cmp_open_lt(&mut self, a: &[Fe], b: &[Fe]) -> Result<Vec<bool>> {
        if a.len() != b.len() {
            return Err(Error::Protocol("comparing vectors of different lengths".into()));
        }
        let g = self.next_gadget();
        let diff: Vec<Fe> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
        let bits = self.ltz_in(g, &diff)?;
        let opened = self.open_in(g, &bits, LeakageClass::ComparisonBit)?;
        opened
            .into_iter()
            .map(|bit| match bit.value() {
                0 => Ok(false),
                1 => Ok(true),
                v => Err(Error::Protocol(format!("comparison opened non-bit {v}"))),
            })
            .collect()
    }

    /// Shares of `table[idx]` for shared indices in `[0, table.len())`.
    pub fn lookup(&mut self, idx: &[Fe], table: &[Fe]) -> Result<Vec<Fe>> {
        let g = self.next_gadget();
        let n = idx.len();
        let len = table.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        if len == 0 {
            return Err(Error::Config("lookup in an empty table".into()));
        }
        let mats = self.take_lookups(len, n)?;
        let t: Vec<Fe> = idx.iter().zip(&mats).map(|(&x, m)| x - m.r).collect();
        let wrapped = self.ltz_in(g, &t)?;
        let l = Fe::from_u64(len as u64);
        let rotated: Vec<Fe> = t.iter().zip(&wrapped).map(|(&t, &b)| t + l * b).collect();
        let zs = self.open_in(g, &rotated, LeakageClass::MaskedLookupIndex)?;
        zs.iter()
            .zip(&mats)
            .map(|(z, m)| {
                if z.value() >= len as u128 {
                    return Err(Error::Protocol(format!("rotated lookup index {z} outside table of {len}")));
                }
                let z = z.value() as usize;
                Ok(m.one_hot
                    .iter()
                    .enumerate()
                    .map(|(j, &e)| e * table[(j + z) % len])
                    .sum())
            })
            .collect()
    }

    /// Tells the dealer this party needs no more material.
    pub fn finish(&mut self) -> Result<()> {
        self.net.send(
            self.dealer,
            MessageType::MaterialRequest,
            self.round,
            self.gadget,
            MaterialRequest::Finish.encode(),
        )
    }
}

/// What the dealer handed out during a session.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DealerStats {
    pub served: Vec<(MaterialKind, usize)>,
}

/// Serves identical material requests from all computing parties until each
/// sends `Finish`. Requests are read from parties in index order.
pub fn serve_material<R: rand::Rng>(net: &mut Endpoint, csps: &[usize], dealer: &mut Dealer<R>) -> Result<DealerStats> {
    let mut stats = DealerStats::default();
    loop {
        let mut first: Option<MaterialRequest> = None;
        for &p in csps {
            let frame = net.recv(p, MessageType::MaterialRequest)?;
            let req = MaterialRequest::decode(&frame.payload)?;
            match first {
                None => first = Some(req),
                Some(f) if f != req => {
                    return Err(Error::Protocol(format!("party {p} requested {req:?}, party {} requested {f:?}", csps[0])))
                }
                _ => {}
            }
        }
        match first {
            None | Some(MaterialRequest::Finish) => return Ok(stats),
            Some(MaterialRequest::Batch { kind, count }) => {
                let batches = dealer.generate(kind, count)?;
                for (&p, batch) in csps.iter().zip(batches) {
                    net.send(p, MessageType::Material, 0, 0, batch.encode())?;
                }
                stats.served.push((kind, count));
            }
        }
    }
}

/// Outcome of [`simulate`] for one computing party.
pub struct SimulatedParty<T> {
    pub output: T,
    pub transcript: Transcript,
    pub usage: MaterialUsage,
}

/// Runs `body` at `parties` computing parties on threads, with a dealer
/// seeded by `seed`, over in-process channels.
pub fn simulate<T, F>(parties: usize, params: FieldParams, seed: u64, body: F) -> Result<(Vec<SimulatedParty<T>>, DealerStats)>
where
    T: Send + 'static,
    F: Fn(&mut Csp) -> Result<T> + Send + Sync + 'static,
{
    let session = SessionId(*b"gadget-harness!!");
    let timeout = Duration::from_secs(60);
    let dealer_index = parties;
    let mut nodes = InProcessTransport::mesh(parties + 1);
    let dealer_node = nodes.pop().unwrap();
    let body = Arc::new(body);
    let handles: Vec<_> = nodes
        .into_iter()
        .enumerate()
        .map(|(i, node)| {
            let body = Arc::clone(&body);
            thread::spawn(move || -> Result<SimulatedParty<T>> {
                let net = Endpoint::new(Box::new(node), session, timeout);
                let mut csp = Csp::new(i, parties, dealer_index, params, net)?;
                let out = body(&mut csp);
                match out {
                    Ok(output) => {
                        csp.finish()?;
                        Ok(SimulatedParty { output, transcript: csp.transcript, usage: csp.usage })
                    }
                    Err(e) => {
                        let everyone: Vec<usize> = (0..=parties).filter(|&p| p != i).collect();
                        csp.net.abort(&everyone, &e.to_string());
                        Err(e)
                    }
                }
            })
        })
        .collect();
    let mut dealer_net = Endpoint::new(Box::new(dealer_node), session, timeout);
    let mut dealer = Dealer::new(ChaCha20Rng::seed_from_u64(seed), parties, params);
    let csps: Vec<usize> = (0..parties).collect();
    let dealer_result = serve_material(&mut dealer_net, &csps, &mut dealer);
    let results: Vec<Result<SimulatedParty<T>>> = handles
        .into_iter()
        .map(|h| h.join().map_err(|_| Error::Protocol("party thread panicked".into()))?)
        .collect();
    let mut out = Vec::with_capacity(parties);
    for r in results {
        out.push(r?);
    }
    Ok((out, dealer_result?))
}
