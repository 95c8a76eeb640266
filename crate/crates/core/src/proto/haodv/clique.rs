//! Maximal-clique enumeration and the Notify_Source neighborhood encoding.
//!
//! Wire layout (big endian):
//!
//! ```text
//! u8  format            0 = edge list, 1 = clique groups
//! u16 node count, then per node: u16 id, u8 PST (ms, rounded up, saturating), u8 IL (saturating)
//! format 0: u16 link count, then per link: u16 a, u16 b, u32 LLT (ms), u8 flags
//! format 1: u16 clique count, then per clique: u8 size, size x u16 ids,
//!           then u32 LLT + u8 flags for each member pair (in listing order)
//!           whose link was not already written by an earlier clique
//! ```
//!
//! Isolated nodes appear only in the node table.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::packet::NodeId;
use crate::proto::haodv::pipe::{Adjacency, LinkStat, Topology};
use crate::proto::messages::NodeStats;

/// All maximal cliques, each sorted, in lexicographic order.
pub fn maximal_cliques(adj: &Adjacency) -> Vec<Vec<NodeId>> {
    let mut out = Vec::new();
    let p: BTreeSet<NodeId> = adj.keys().copied().collect();
    bron_kerbosch(adj, &mut Vec::new(), p, BTreeSet::new(), &mut out);
    for c in out.iter_mut() {
        c.sort_unstable();
    }
    out.sort();
    out
}

fn bron_kerbosch(
    adj: &Adjacency,
    r: &mut Vec<NodeId>,
    mut p: BTreeSet<NodeId>,
    mut x: BTreeSet<NodeId>,
    out: &mut Vec<Vec<NodeId>>,
) {
    if p.is_empty() {
        if x.is_empty() {
            out.push(r.clone());
        }
        return;
    }
    // Tomita pivot: the vertex of P or X with most neighbors in P.
    let pivot = p
        .iter()
        .chain(x.iter())
        .copied()
        .max_by_key(|u| (adj[u].intersection(&p).count(), std::cmp::Reverse(*u)))
        .unwrap();
    let candidates: Vec<NodeId> = p.difference(&adj[&pivot]).copied().collect();
    for v in candidates {
        let nv = &adj[&v];
        r.push(v);
        bron_kerbosch(
            adj,
            r,
            p.intersection(nv).copied().collect(),
            x.intersection(nv).copied().collect(),
            out,
        );
        r.pop();
        p.remove(&v);
        x.insert(v);
    }
}

pub fn quantize_pst(pst: f64) -> u8 {
    (pst * 1000.0 - 1e-6).ceil().clamp(0.0, 255.0) as u8
}

pub fn quantize_llt(llt: f64) -> u32 {
    (llt * 1000.0).round().clamp(0.0, u32::MAX as f64) as u32
}

/// The topology as it survives a round trip through the wire format.
pub fn quantize(t: &Topology) -> Topology {
    Topology {
        nodes: t
            .nodes
            .iter()
            .map(|(&id, s)| {
                (id, NodeStats { pst: quantize_pst(s.pst) as f64 / 1000.0, il: s.il.min(255) })
            })
            .collect(),
        links: t
            .links
            .iter()
            .map(|(&k, l)| (k, LinkStat { llt: quantize_llt(l.llt) as f64 / 1000.0, active: l.active }))
            .collect(),
    }
}

fn put_link(buf: &mut Vec<u8>, l: &LinkStat) {
    buf.extend_from_slice(&quantize_llt(l.llt).to_be_bytes());
    buf.push(l.active as u8);
}

pub fn encode(t: &Topology, use_cliques: bool) -> Vec<u8> {
    let mut buf = Vec::with_capacity(3 + 4 * t.nodes.len() + 9 * t.links.len());
    buf.push(use_cliques as u8);
    buf.extend_from_slice(&(t.nodes.len() as u16).to_be_bytes());
    for (&id, s) in &t.nodes {
        buf.extend_from_slice(&id.to_be_bytes());
        buf.push(quantize_pst(s.pst));
        buf.push(s.il.min(255) as u8);
    }
    if !use_cliques {
        buf.extend_from_slice(&(t.links.len() as u16).to_be_bytes());
        for (&(a, b), l) in &t.links {
            buf.extend_from_slice(&a.to_be_bytes());
            buf.extend_from_slice(&b.to_be_bytes());
            put_link(&mut buf, l);
        }
        return buf;
    }
    let cliques: Vec<Vec<NodeId>> =
        maximal_cliques(&t.adjacency()).into_iter().filter(|c| c.len() > 1).collect();
    buf.extend_from_slice(&(cliques.len() as u16).to_be_bytes());
    let mut written = BTreeSet::new();
    for c in &cliques {
        assert!(c.len() <= u8::MAX as usize, "clique too large for the wire format");
        buf.push(c.len() as u8);
        for id in c {
            buf.extend_from_slice(&id.to_be_bytes());
        }
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                if written.insert((c[i], c[j])) {
                    put_link(&mut buf, &t.links[&(c[i], c[j])]);
                }
            }
        }
    }
    buf
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("payload truncated")]
    Truncated,
    #[error("unknown payload format {0}")]
    Format(u8),
    #[error("link references unknown node {0}")]
    UnknownNode(NodeId),
    #[error("trailing bytes after payload")]
    Trailing,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let s = self.buf.get(self.pos..self.pos + N).ok_or(DecodeError::Truncated)?;
        self.pos += N;
        Ok(s.try_into().unwrap())
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take()?))
    }
    fn link(&mut self) -> Result<LinkStat, DecodeError> {
        let llt = self.u32()? as f64 / 1000.0;
        let active = self.u8()? & 1 == 1;
        Ok(LinkStat { llt, active })
    }
}

pub fn decode(buf: &[u8]) -> Result<Topology, DecodeError> {
    let mut r = Reader { buf, pos: 0 };
    let format = r.u8()?;
    if format > 1 {
        return Err(DecodeError::Format(format));
    }
    let mut t = Topology::new();
    for _ in 0..r.u16()? {
        let id = r.u16()?;
        let pst = r.u8()? as f64 / 1000.0;
        let il = r.u8()? as u16;
        t.nodes.insert(id, NodeStats { pst, il });
    }
    let check = |t: &Topology, id: NodeId| {
        if t.nodes.contains_key(&id) { Ok(()) } else { Err(DecodeError::UnknownNode(id)) }
    };
    let mut links = BTreeMap::new();
    if format == 0 {
        for _ in 0..r.u16()? {
            let (a, b) = (r.u16()?, r.u16()?);
            check(&t, a)?;
            check(&t, b)?;
            links.insert((a.min(b), a.max(b)), r.link()?);
        }
    } else {
        for _ in 0..r.u16()? {
            let k = r.u8()? as usize;
            let mut members = Vec::with_capacity(k);
            for _ in 0..k {
                let id = r.u16()?;
                check(&t, id)?;
                members.push(id);
            }
            for i in 0..k {
                for j in i + 1..k {
                    let key = (members[i].min(members[j]), members[i].max(members[j]));
                    if !links.contains_key(&key) {
                        links.insert(key, r.link()?);
                    }
                }
            }
        }
    }
    if r.pos != buf.len() {
        return Err(DecodeError::Trailing);
    }
    t.links = links;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo(n: u16, edges: &[(u16, u16)]) -> Topology {
        let mut t = Topology::new();
        for i in 0..n {
            t.add_node(i, NodeStats { pst: 0.001 * i as f64, il: i });
        }
        for (k, &(a, b)) in edges.iter().enumerate() {
            t.add_link(a, b, LinkStat { llt: k as f64 + 0.5, active: k % 2 == 0 });
        }
        t
    }

    #[test]
    fn triangle_is_one_clique_with_three_links() {
        let t = topo(3, &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(maximal_cliques(&t.adjacency()), vec![vec![0, 1, 2]]);
        let bytes = encode(&t, true);
        // header 3 + nodes 12 + clique count 2 + size 1 + ids 6 + links 15
        assert_eq!(bytes.len(), 39);
        assert_eq!(decode(&bytes).unwrap(), t);
    }

    #[test]
    fn path_is_two_edge_cliques() {
        let t = topo(3, &[(0, 1), (1, 2)]);
        assert_eq!(maximal_cliques(&t.adjacency()), vec![vec![0, 1], vec![1, 2]]);
        assert_eq!(decode(&encode(&t, true)).unwrap(), t);
        assert_eq!(decode(&encode(&t, false)).unwrap(), t);
    }

    #[test]
    fn shared_edge_written_once() {
        // K4 minus the 2-3 edge: cliques {0,1,2} and {0,1,3} share 0-1.
        let t = topo(4, &[(0, 1), (0, 2), (1, 2), (0, 3), (1, 3)]);
        assert_eq!(maximal_cliques(&t.adjacency()), vec![vec![0, 1, 2], vec![0, 1, 3]]);
        let bytes = encode(&t, true);
        assert_eq!(bytes.len(), 3 + 16 + 2 + 2 * 7 + 5 * 5);
        assert_eq!(decode(&bytes).unwrap(), t);
    }

    #[test]
    fn isolated_nodes_survive() {
        let t = topo(3, &[(0, 1)]);
        assert_eq!(decode(&encode(&t, true)).unwrap(), t);
    }

    #[test]
    fn quantization() {
        assert_eq!(quantize_pst(0.007), 7);
        assert_eq!(quantize_pst(0.0071), 8);
        assert_eq!(quantize_pst(9.0), 255);
        assert_eq!(quantize_llt(3600.0), 3_600_000);
    }

    #[test]
    fn corrupt_payloads_are_rejected() {
        let bytes = encode(&topo(3, &[(0, 1), (1, 2)]), true);
        assert_eq!(decode(&bytes[..bytes.len() - 1]), Err(DecodeError::Truncated));
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(decode(&extra), Err(DecodeError::Trailing));
        assert_eq!(decode(&[7]), Err(DecodeError::Format(7)));
    }
}
