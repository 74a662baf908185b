//! Byte encodings of protocol messages.
//!
//! Integers are little-endian; public keys follow the big-endian
//! length-prefixed layout of [`crate::secagg::public_key_to_bytes`].

use num_bigint::BigUint;

use crate::federation::{Cell, IntersectionTable};
use crate::kmeans::UNASSIGNED;
use crate::secagg::{public_key_from_bytes, public_key_to_bytes};
use crate::{Error, Result};

const NONE: u32 = u32::MAX;

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn len(&mut self, n: usize) -> &mut Self {
        self.u64(n as u64)
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }
}

pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::Wire(format!("message truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// A collection length, sanity-checked against the remaining bytes.
    pub fn len(&mut self, min_item_bytes: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(min_item_bytes.max(1)) > self.buf.len() - self.pos {
            return Err(Error::Wire(format!("length {n} exceeds the message")));
        }
        Ok(n)
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::Wire(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )))
        }
    }
}

pub fn encode_f64s(values: &[f64]) -> Vec<u8> {
    let mut e = Encoder::new();
    e.len(values.len());
    values.iter().for_each(|v| {
        e.f64(*v);
    });
    e.finish()
}

pub fn decode_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    let mut d = Decoder::new(bytes);
    let n = d.len(8)?;
    let v = (0..n).map(|_| d.f64()).collect::<Result<_>>()?;
    d.finish()?;
    Ok(v)
}

pub fn encode_assignment(assignment: &[usize]) -> Vec<u8> {
    let mut e = Encoder::new();
    e.len(assignment.len());
    for &a in assignment {
        e.u32(if a == UNASSIGNED { NONE } else { a as u32 });
    }
    e.finish()
}

pub fn decode_assignment(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut d = Decoder::new(bytes);
    let n = d.len(4)?;
    let v = (0..n)
        .map(|_| d.u32().map(|a| if a == NONE { UNASSIGNED } else { a as usize }))
        .collect::<Result<_>>()?;
    d.finish()?;
    Ok(v)
}

/// Node ids of every cluster, in cluster order.
pub fn encode_clusters(clusters: &[Vec<u64>]) -> Vec<u8> {
    let mut e = Encoder::new();
    e.len(clusters.len());
    for c in clusters {
        e.len(c.len());
        c.iter().for_each(|id| {
            e.u64(*id);
        });
    }
    e.finish()
}

pub fn decode_clusters(bytes: &[u8]) -> Result<Vec<Vec<u64>>> {
    let mut d = Decoder::new(bytes);
    let k = d.len(8)?;
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let n = d.len(8)?;
        out.push((0..n).map(|_| d.u64()).collect::<Result<_>>()?);
    }
    d.finish()?;
    Ok(out)
}

pub fn encode_cells(table: &IntersectionTable) -> Vec<u8> {
    let mut e = Encoder::new();
    e.len(table.sources());
    e.len(table.cells().len());
    for cell in table.cells() {
        cell.local_clusters.iter().for_each(|r| {
            e.u32(*r as u32);
        });
        e.len(cell.members.len());
        cell.members.iter().for_each(|id| {
            e.u64(*id);
        });
    }
    e.finish()
}

pub fn decode_cells(bytes: &[u8]) -> Result<IntersectionTable> {
    let mut d = Decoder::new(bytes);
    let sources = d.len(0)?;
    let count = d.len(8)?;
    let mut cells = Vec::with_capacity(count);
    for _ in 0..count {
        let local_clusters = (0..sources)
            .map(|_| d.u32().map(|r| r as usize))
            .collect::<Result<_>>()?;
        let n = d.len(8)?;
        let members = (0..n).map(|_| d.u64()).collect::<Result<_>>()?;
        cells.push(Cell {
            members,
            local_clusters,
        });
    }
    d.finish()?;
    Ok(IntersectionTable::from_cells(sources, cells))
}

/// `(participant index, public key)` pairs relayed by the coordinator.
pub fn encode_key_table(keys: &[(usize, BigUint)]) -> Vec<u8> {
    let mut e = Encoder::new();
    e.len(keys.len());
    for (i, k) in keys {
        e.u32(*i as u32).raw(&public_key_to_bytes(k));
    }
    e.finish()
}

pub fn decode_key_table(bytes: &[u8]) -> Result<Vec<(usize, BigUint)>> {
    let mut d = Decoder::new(bytes);
    let n = d.len(8)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let i = d.u32()? as usize;
        let len = u32::from_be_bytes(d.raw(4)?.try_into().expect("4 bytes")) as usize;
        let body = d.raw(len)?;
        let mut framed = (len as u32).to_be_bytes().to_vec();
        framed.extend_from_slice(body);
        out.push((i, public_key_from_bytes(&framed)?));
    }
    d.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn messages_round_trip() {
        let a = vec![0, 3, UNASSIGNED, 1];
        assert_eq!(decode_assignment(&encode_assignment(&a)).unwrap(), a);
        let c = vec![vec![4, 2], vec![], vec![9]];
        assert_eq!(decode_clusters(&encode_clusters(&c)).unwrap(), c);
        let f = vec![1.5, -0.0, f64::MAX];
        assert_eq!(decode_f64s(&encode_f64s(&f)).unwrap(), f);
        let keys = vec![(0, BigUint::from(77u32)), (2, BigUint::from(1u32) << 300)];
        assert_eq!(decode_key_table(&encode_key_table(&keys)).unwrap(), keys);
        let table = IntersectionTable::from_cells(
            2,
            vec![Cell { members: vec![1, 5], local_clusters: vec![0, 1] }],
        );
        assert_eq!(decode_cells(&encode_cells(&table)).unwrap(), table);
    }

    #[test]
    fn malformed_messages_are_rejected() {
        let mut bytes = encode_assignment(&[1, 2]);
        bytes.pop();
        assert!(decode_assignment(&bytes).is_err());
        let mut bytes = encode_f64s(&[1.0]);
        bytes.push(0);
        assert!(decode_f64s(&bytes).is_err());
        // absurd declared length
        assert!(decode_clusters(&u64::MAX.to_le_bytes()).is_err());
    }
}
