use crate::error::{Error, Result};

/// Directed edges grouped by target node.
///
/// Messages flow from `src` to `dst`; edges are stored sorted by
/// `(dst, src)` so the incoming edges of node `i` occupy the contiguous
/// range [`EdgeIndex::incoming`].
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeIndex {
    num_nodes: usize,
    src: Vec<usize>,
    dst: Vec<usize>,
    offsets: Vec<usize>,
    /// Edge ids ordered by `(src, dst)`, grouped per source by `out_offsets`.
    by_src: Vec<usize>,
    out_offsets: Vec<usize>,
}

impl EdgeIndex {
    /// Builds the index from `(src, dst)` pairs.
    pub fn new(num_nodes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        for &(s, d) in pairs {
            for v in [s, d] {
                if v >= num_nodes {
                    return Err(Error::IndexOutOfRange { what: "edge endpoint", index: v, len: num_nodes });
                }
            }
        }
        let mut sorted: Vec<(usize, usize)> = pairs.iter().map(|&(s, d)| (d, s)).collect();
        sorted.sort_unstable();
        let mut offsets = vec![0usize; num_nodes + 1];
        for &(d, _) in &sorted {
            offsets[d + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let (dst, src): (Vec<usize>, Vec<usize>) = sorted.into_iter().unzip();
        let mut by_src: Vec<usize> = (0..src.len()).collect();
        by_src.sort_unstable_by_key(|&e| (src[e], dst[e]));
        let mut out_offsets = vec![0usize; num_nodes + 1];
        for &s in &src {
            out_offsets[s + 1] += 1;
        }
        for i in 0..num_nodes {
            out_offsets[i + 1] += out_offsets[i];
        }
        Ok(EdgeIndex { num_nodes, src, dst, offsets, by_src, out_offsets })
    }

    /// Same edges plus one `i → i` loop per node.
    pub fn with_self_loops(&self) -> Self {
        let mut pairs: Vec<(usize, usize)> = self.pairs().filter(|(s, d)| s != d).collect();
        pairs.extend((0..self.num_nodes).map(|i| (i, i)));
        EdgeIndex::new(self.num_nodes, &pairs).expect("indices already validated")
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn src(&self) -> &[usize] {
        &self.src
    }

    pub fn dst(&self) -> &[usize] {
        &self.dst
    }

    pub fn incoming(&self, node: usize) -> std::ops::Range<usize> {
        self.offsets[node]..self.offsets[node + 1]
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    /// Ids of the edges leaving `node`, ordered by target.
    pub fn outgoing(&self, node: usize) -> &[usize] {
        &self.by_src[self.out_offsets[node]..self.out_offsets[node + 1]]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.src.iter().copied().zip(self.dst.iter().copied())
    }
}
