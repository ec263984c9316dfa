use std::collections::HashMap;
use std::io::{self, Read, Write};

use super::MatcherError;

const MAGIC: &[u8; 8] = b"QACTRIE\0";
pub const SNAPSHOT_VERSION: u32 = 1;
const NO_QUERY: u32 = u32::MAX;

#[derive(Clone, Debug, Default, PartialEq)]
struct Node {
    children: Vec<(char, u32)>,
    /// Query ending exactly at this node, if any.
    terminal: u32,
    /// Up to K query ids beneath this node, best first.
    top: Vec<u32>,
}

/// Character trie over background queries with a materialised top-K
/// completion list at every node.
///
/// Query ids are assigned in rank order (frequency descending, then
/// lexicographic), so each top list is simply the smallest ids beneath the
/// node.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletionTrie {
    queries: Vec<(String, u64)>,
    nodes: Vec<Node>,
    k: usize,
}

impl CompletionTrie {
    pub fn build(background: impl IntoIterator<Item = (String, u64)>, k: usize) -> Self {
        let mut merged: HashMap<String, u64> = HashMap::new();
        for (q, f) in background {
            if !q.is_empty() {
                *merged.entry(q).or_default() += f;
            }
        }
        let mut queries: Vec<(String, u64)> = merged.into_iter().collect();
        queries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut nodes = vec![Node {
            terminal: NO_QUERY,
            ..Node::default()
        }];
        for (id, (q, _)) in queries.iter().enumerate() {
            let mut cur = 0usize;
            for c in q.chars() {
                cur = match nodes[cur].children.binary_search_by_key(&c, |&(ch, _)| ch) {
                    Ok(i) => nodes[cur].children[i].1 as usize,
                    Err(i) => {
                        let next = nodes.len() as u32;
                        nodes.push(Node {
                            terminal: NO_QUERY,
                            ..Node::default()
                        });
                        nodes[cur].children.insert(i, (c, next));
                        next as usize
                    }
                };
                // ids arrive in rank order, so appending keeps each list sorted
                if nodes[cur].top.len() < k {
                    nodes[cur].top.push(id as u32);
                }
            }
            nodes[cur].terminal = id as u32;
        }
        // the root covers every query
        nodes[0].top = (0..queries.len().min(k) as u32).collect();
        Self { queries, nodes, k }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn query(&self, id: u32) -> (&str, u64) {
        let (q, f) = &self.queries[id as usize];
        (q, *f)
    }

    pub fn queries(&self) -> impl Iterator<Item = (&str, u64)> {
        self.queries.iter().map(|(q, f)| (q.as_str(), *f))
    }

    fn find(&self, prefix: &str) -> Option<&Node> {
        let mut cur = 0usize;
        for c in prefix.chars() {
            let node = &self.nodes[cur];
            let i = node.children.binary_search_by_key(&c, |&(ch, _)| ch).ok()?;
            cur = node.children[i].1 as usize;
        }
        Some(&self.nodes[cur])
    }

    /// Background frequency of an exact query.
    pub fn frequency(&self, query: &str) -> Option<u64> {
        let node = self.find(query)?;
        (node.terminal != NO_QUERY).then(|| self.queries[node.terminal as usize].1)
    }

    pub fn contains(&self, query: &str) -> bool {
        self.frequency(query).is_some()
    }

    /// Ids of the `k` best completions of `prefix` (at most K).
    pub fn top_ids(&self, prefix: &str, k: usize) -> &[u32] {
        match self.find(prefix) {
            Some(node) => &node.top[..node.top.len().min(k)],
            None => &[],
        }
    }

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&(self.k as u32).to_le_bytes())?;
        w.write_all(&(self.queries.len() as u64).to_le_bytes())?;
        for (q, f) in &self.queries {
            w.write_all(&(q.len() as u32).to_le_bytes())?;
            w.write_all(q.as_bytes())?;
            w.write_all(&f.to_le_bytes())?;
        }
        w.write_all(&(self.nodes.len() as u64).to_le_bytes())?;
        for n in &self.nodes {
            w.write_all(&n.terminal.to_le_bytes())?;
            w.write_all(&(n.children.len() as u32).to_le_bytes())?;
            for &(c, idx) in &n.children {
                w.write_all(&(c as u32).to_le_bytes())?;
                w.write_all(&idx.to_le_bytes())?;
            }
            w.write_all(&(n.top.len() as u32).to_le_bytes())?;
            for &id in &n.top {
                w.write_all(&id.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self, MatcherError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(MatcherError::Corrupt("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != SNAPSHOT_VERSION {
            return Err(MatcherError::Version {
                found: version,
                expected: SNAPSHOT_VERSION,
            });
        }
        let k = read_u32(&mut r)? as usize;
        let nq = read_u64(&mut r)? as usize;
        let mut queries = Vec::with_capacity(nq.min(1 << 24));
        for _ in 0..nq {
            let len = read_u32(&mut r)? as usize;
            let mut b = vec![0u8; len];
            r.read_exact(&mut b)?;
            let q = String::from_utf8(b).map_err(|e| MatcherError::Corrupt(e.to_string()))?;
            queries.push((q, read_u64(&mut r)?));
        }
        let nn = read_u64(&mut r)? as usize;
        let mut nodes = Vec::with_capacity(nn.min(1 << 24));
        for _ in 0..nn {
            let terminal = read_u32(&mut r)?;
            let nc = read_u32(&mut r)? as usize;
            let mut children = Vec::with_capacity(nc);
            for _ in 0..nc {
                let c = char::from_u32(read_u32(&mut r)?)
                    .ok_or_else(|| MatcherError::Corrupt("invalid char".into()))?;
                let idx = read_u32(&mut r)?;
                if idx as usize >= nn {
                    return Err(MatcherError::Corrupt(format!("child index {idx}")));
                }
                children.push((c, idx));
            }
            let nt = read_u32(&mut r)? as usize;
            let mut top = Vec::with_capacity(nt);
            for _ in 0..nt {
                let id = read_u32(&mut r)?;
                if id as usize >= nq {
                    return Err(MatcherError::Corrupt(format!("query id {id}")));
                }
                top.push(id);
            }
            if terminal != NO_QUERY && terminal as usize >= nq {
                return Err(MatcherError::Corrupt(format!("terminal id {terminal}")));
            }
            nodes.push(Node {
                children,
                terminal,
                top,
            });
        }
        if nodes.is_empty() {
            return Err(MatcherError::Corrupt("no root node".into()));
        }
        Ok(Self { queries, nodes, k })
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
