//! Additive secret sharing among the computing parties and the correlated
//! randomness handed out by the dealer.
//!
//! Material batches travel in a compact binary layout:
//!
//! ```text
//! kind: u8 | count: u32 BE | width: u32 BE | items...
//! ```
//!
//! where `width` is the table length `L` for lookup material, the number of
//! mask bits for comparison material and 0 for triples. Every field element
//! is 16 bytes little-endian and items are laid out as `a, b, c` (triples),
//! `r, e_r[0..L)` (lookup) or `R, bit_0..bit_K` (comparison).

use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{Fe, FieldParams};

/// One party's share of a secret.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdditiveShare {
    pub party: usize,
    pub value: Fe,
}

/// Splits `x` into `parties` additive shares.
pub fn share<R: Rng + ?Sized>(x: Fe, parties: usize, rng: &mut R) -> Result<Vec<AdditiveShare>> {
    if parties < 2 {
        return Err(Error::Sharing(format!("need at least 2 parties, got {parties}")));
    }
    Ok(share_values(x, parties, rng)
        .into_iter()
        .enumerate()
        .map(|(party, value)| AdditiveShare { party, value })
        .collect())
}

/// Raw share values, party 0 first. Callers guarantee `parties >= 1`.
pub(crate) fn share_values<R: Rng + ?Sized>(x: Fe, parties: usize, rng: &mut R) -> Vec<Fe> {
    let mut out = Vec::with_capacity(parties);
    let mut acc = Fe::ZERO;
    for _ in 1..parties {
        let r = Fe::random(rng);
        acc += r;
        out.push(r);
    }
    out.push(x - acc);
    out
}

/// Sums a complete set of shares. Party indices must be exactly `0..shares.len()`.
pub fn reconstruct(shares: &[AdditiveShare]) -> Result<Fe> {
    let n = shares.len();
    if n < 2 {
        return Err(Error::Sharing(format!("cannot reconstruct from {n} share(s)")));
    }
    let mut seen = vec![false; n];
    for s in shares {
        match seen.get_mut(s.party) {
            None => {
                return Err(Error::Sharing(format!(
                    "party index {} out of range for {n} shares",
                    s.party
                )))
            }
            Some(true) => return Err(Error::Sharing(format!("duplicate party index {}", s.party))),
            Some(slot) => *slot = true,
        }
    }
    Ok(shares.iter().map(|s| s.value).sum())
}

/// Local linear combination `Σ coeff·x + constant`; only party 0 adds the constant.
pub fn local_lincomb(party: usize, terms: &[(Fe, AdditiveShare)], constant: Fe) -> Result<AdditiveShare> {
    let mut acc = Fe::ZERO;
    for (coeff, s) in terms {
        if s.party != party {
            return Err(Error::Sharing(format!(
                "term held by party {} in a combination for party {party}",
                s.party
            )));
        }
        acc += *coeff * s.value;
    }
    if party == 0 {
        acc += constant;
    }
    Ok(AdditiveShare { party, value: acc })
}

/// One party's share of a multiplication triple `c = a·b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BeaverTriple {
    pub a: Fe,
    pub b: Fe,
    pub c: Fe,
}

/// One party's share of a random index `r ∈ [0, L)` and of its one-hot vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LookupMaterial {
    pub r: Fe,
    pub one_hot: Vec<Fe>,
}

impl LookupMaterial {
    pub fn len(&self) -> usize {
        self.one_hot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.one_hot.is_empty()
    }
}

/// One party's share of a comparison mask `R` and of its low bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CmpMaterial {
    pub mask: Fe,
    pub bits: Vec<Fe>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaterialKind {
    Triple,
    Lookup { len: usize },
    Cmp,
}

const KIND_TRIPLE: u8 = 1;
const KIND_LOOKUP: u8 = 2;
const KIND_CMP: u8 = 3;
const KIND_FINISH: u8 = 0xff;

/// A request sent by each computing party to the dealer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaterialRequest {
    Batch { kind: MaterialKind, count: usize },
    Finish,
}

impl MaterialRequest {
    pub fn encode(&self) -> Vec<u8> {
        let (kind, count, width) = match *self {
            MaterialRequest::Finish => (KIND_FINISH, 0, 0),
            MaterialRequest::Batch { kind, count } => match kind {
                MaterialKind::Triple => (KIND_TRIPLE, count, 0),
                MaterialKind::Lookup { len } => (KIND_LOOKUP, count, len),
                MaterialKind::Cmp => (KIND_CMP, count, 0),
            },
        };
        let mut out = Vec::with_capacity(9);
        out.push(kind);
        out.extend_from_slice(&(count as u32).to_be_bytes());
        out.extend_from_slice(&(width as u32).to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<MaterialRequest> {
        if bytes.len() != 9 {
            return Err(Error::Malformed(format!("material request of {} bytes", bytes.len())));
        }
        let count = u32::from_be_bytes(bytes[1..5].try_into().unwrap()) as usize;
        let width = u32::from_be_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let kind = match bytes[0] {
            KIND_FINISH => return Ok(MaterialRequest::Finish),
            KIND_TRIPLE => MaterialKind::Triple,
            KIND_LOOKUP => MaterialKind::Lookup { len: width },
            KIND_CMP => MaterialKind::Cmp,
            k => return Err(Error::Malformed(format!("unknown material kind {k}"))),
        };
        Ok(MaterialRequest::Batch { kind, count })
    }
}

/// One party's view of a batch of preprocessing material.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MaterialBatch {
    Triples(Vec<BeaverTriple>),
    Lookups { len: usize, items: Vec<LookupMaterial> },
    Cmps { bits: usize, items: Vec<CmpMaterial> },
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let (head, rest) = self
            .buf
            .split_first_chunk::<4>()
            .ok_or_else(|| Error::Malformed("truncated u32".into()))?;
        self.buf = rest;
        Ok(u32::from_be_bytes(*head))
    }

    fn fe(&mut self) -> Result<Fe> {
        let (head, rest) = self
            .buf
            .split_first_chunk::<16>()
            .ok_or_else(|| Error::Malformed("truncated field element".into()))?;
        self.buf = rest;
        Fe::from_le_bytes(*head)
    }

    fn fes(&mut self, n: usize) -> Result<Vec<Fe>> {
        (0..n).map(|_| self.fe()).collect()
    }
}

impl MaterialBatch {
    pub fn kind(&self) -> MaterialKind {
        match self {
            MaterialBatch::Triples(_) => MaterialKind::Triple,
            MaterialBatch::Lookups { len, .. } => MaterialKind::Lookup { len: *len },
            MaterialBatch::Cmps { .. } => MaterialKind::Cmp,
        }
    }

    pub fn count(&self) -> usize {
        match self {
            MaterialBatch::Triples(v) => v.len(),
            MaterialBatch::Lookups { items, .. } => items.len(),
            MaterialBatch::Cmps { items, .. } => items.len(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let header = |out: &mut Vec<u8>, kind: u8, count: usize, width: usize| {
            out.push(kind);
            out.extend_from_slice(&(count as u32).to_be_bytes());
            out.extend_from_slice(&(width as u32).to_be_bytes());
        };
        match self {
            MaterialBatch::Triples(items) => {
                header(&mut out, KIND_TRIPLE, items.len(), 0);
                out.reserve(items.len() * 48);
                for t in items {
                    for x in [t.a, t.b, t.c] {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
            MaterialBatch::Lookups { len, items } => {
                header(&mut out, KIND_LOOKUP, items.len(), *len);
                out.reserve(items.len() * 16 * (len + 1));
                for m in items {
                    out.extend_from_slice(&m.r.to_le_bytes());
                    for x in &m.one_hot {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
            MaterialBatch::Cmps { bits, items } => {
                header(&mut out, KIND_CMP, items.len(), *bits);
                out.reserve(items.len() * 16 * (bits + 1));
                for m in items {
                    out.extend_from_slice(&m.mask.to_le_bytes());
                    for x in &m.bits {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<MaterialBatch> {
        let (&kind, rest) = bytes
            .split_first()
            .ok_or_else(|| Error::Malformed("empty material batch".into()))?;
        let mut rd = Reader { buf: rest };
        let count = rd.u32()? as usize;
        let width = rd.u32()? as usize;
        let per_item = match kind {
            KIND_TRIPLE => 3,
            KIND_LOOKUP | KIND_CMP => width + 1,
            k => return Err(Error::Malformed(format!("unknown material kind {k}"))),
        };
        if rd.buf.len() != count * per_item * 16 {
            return Err(Error::Malformed(format!(
                "material batch body is {} bytes, expected {}",
                rd.buf.len(),
                count * per_item * 16
            )));
        }
        let batch = match kind {
            KIND_TRIPLE => MaterialBatch::Triples(
                (0..count)
                    .map(|_| Ok(BeaverTriple { a: rd.fe()?, b: rd.fe()?, c: rd.fe()? }))
                    .collect::<Result<_>>()?,
            ),
            KIND_LOOKUP => MaterialBatch::Lookups {
                len: width,
                items: (0..count)
                    .map(|_| Ok(LookupMaterial { r: rd.fe()?, one_hot: rd.fes(width)? }))
                    .collect::<Result<_>>()?,
            },
            _ => MaterialBatch::Cmps {
                bits: width,
                items: (0..count)
                    .map(|_| Ok(CmpMaterial { mask: rd.fe()?, bits: rd.fes(width)? }))
                    .collect::<Result<_>>()?,
            },
        };
        Ok(batch)
    }
}

/// Generates correlated randomness for `parties` computing parties.
///
/// The dealer only ever sees material requests; it never learns anything
/// about the values the parties compute on.
pub struct Dealer<R> {
    rng: R,
    parties: usize,
    params: FieldParams,
}

impl<R: Rng> Dealer<R> {
    pub fn new(rng: R, parties: usize, params: FieldParams) -> Self {
        Dealer { rng, parties, params }
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    /// Produces one batch per party, indexed by party.
    pub fn generate(&mut self, kind: MaterialKind, count: usize) -> Result<Vec<MaterialBatch>> {
        let n = self.parties;
        match kind {
            MaterialKind::Triple => {
                let mut per_party: Vec<Vec<BeaverTriple>> = vec![Vec::with_capacity(count); n];
                for _ in 0..count {
                    let a = Fe::random(&mut self.rng);
                    let b = Fe::random(&mut self.rng);
                    let sa = share_values(a, n, &mut self.rng);
                    let sb = share_values(b, n, &mut self.rng);
                    let sc = share_values(a * b, n, &mut self.rng);
                    for (i, items) in per_party.iter_mut().enumerate() {
                        items.push(BeaverTriple { a: sa[i], b: sb[i], c: sc[i] });
                    }
                }
                Ok(per_party.into_iter().map(MaterialBatch::Triples).collect())
            }
            MaterialKind::Lookup { len } => {
                if len == 0 {
                    return Err(Error::Material("lookup table length must be positive".into()));
                }
                let mut per_party: Vec<Vec<LookupMaterial>> = vec![Vec::with_capacity(count); n];
                for _ in 0..count {
                    let r = self.rng.gen_range(0..len);
                    let sr = share_values(Fe::from_u64(r as u64), n, &mut self.rng);
                    let mut hots: Vec<Vec<Fe>> = vec![Vec::with_capacity(len); n];
                    for j in 0..len {
                        let bit = if j == r { Fe::ONE } else { Fe::ZERO };
                        for (i, v) in share_values(bit, n, &mut self.rng).into_iter().enumerate() {
                            hots[i].push(v);
                        }
                    }
                    for (i, (items, one_hot)) in per_party.iter_mut().zip(hots).enumerate() {
                        items.push(LookupMaterial { r: sr[i], one_hot });
                    }
                }
                Ok(per_party
                    .into_iter()
                    .map(|items| MaterialBatch::Lookups { len, items })
                    .collect())
            }
            MaterialKind::Cmp => {
                let low_bits = self.params.magnitude_bits as usize + 1;
                let total_bits = self.params.magnitude_bits + 1 + self.params.sigma;
                let mut per_party: Vec<Vec<CmpMaterial>> = vec![Vec::with_capacity(count); n];
                for _ in 0..count {
                    let mask = self.rng.gen::<u128>() & ((1u128 << total_bits) - 1);
                    let sm = share_values(Fe::new(mask), n, &mut self.rng);
                    let mut bits: Vec<Vec<Fe>> = vec![Vec::with_capacity(low_bits); n];
                    for k in 0..low_bits {
                        let bit = Fe::new((mask >> k) & 1);
                        for (i, v) in share_values(bit, n, &mut self.rng).into_iter().enumerate() {
                            bits[i].push(v);
                        }
                    }
                    for (i, (items, bits)) in per_party.iter_mut().zip(bits).enumerate() {
                        items.push(CmpMaterial { mask: sm[i], bits });
                    }
                }
                Ok(per_party
                    .into_iter()
                    .map(|items| MaterialBatch::Cmps { bits: low_bits, items })
                    .collect())
            }
        }
    }
}
