use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

/// Structural summary of a labeled graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub homophily_ratio: f64,
    pub density: f64,
    pub avg_degree: f64,
    pub clustering_coef: f64,
    /// Newman modularity of the label partition.
    pub modularity: f64,
    /// Same-label over cross-label edge count; `None` when no edge crosses labels.
    pub intra_inter_ratio: Option<f64>,
}

pub fn compute_stats(g: &Graph) -> Result<GraphStats> {
    let n = g.num_nodes;
    if n < 2 {
        return Err(Error::Domain(format!("statistics need at least 2 nodes, got {n}")));
    }
    let edges = g.undirected_pos();
    let m = edges.len();
    let intra = edges.iter().filter(|&&(i, j)| g.labels[i] == g.labels[j]).count();
    let inter = m - intra;
    let nf = n as f64;
    let mf = m as f64;

    let adj = g.adjacency();
    let mut clustering = 0.0;
    for nbrs in &adj {
        let k = nbrs.len();
        if k < 2 {
            continue;
        }
        // Linked neighbor pairs (j, l) with j before l in the sorted list.
        let mut pairs = 0usize;
        for (a, &j) in nbrs.iter().enumerate() {
            pairs += sorted_intersection(&nbrs[a + 1..], &adj[j]);
        }
        clustering += 2.0 * pairs as f64 / (k * (k - 1)) as f64;
    }

    let modularity = if m == 0 {
        0.0
    } else {
        let mut deg_sum = vec![0.0; g.num_classes.max(1)];
        for (i, nbrs) in adj.iter().enumerate() {
            deg_sum[g.labels[i]] += nbrs.len() as f64;
        }
        let two_m = 2.0 * mf;
        intra as f64 / mf - deg_sum.iter().map(|dc| (dc / two_m).powi(2)).sum::<f64>()
    };

    Ok(GraphStats {
        num_nodes: n,
        num_edges: m,
        homophily_ratio: if m == 0 { 0.0 } else { intra as f64 / mf },
        density: 2.0 * mf / (nf * (nf - 1.0)),
        avg_degree: 2.0 * mf / nf,
        clustering_coef: clustering / nf,
        modularity,
        intra_inter_ratio: (inter > 0).then(|| intra as f64 / inter as f64),
    })
}

fn sorted_intersection(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut c) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                c += 1;
                i += 1;
                j += 1;
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn k4_single_label() {
        let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        let g = Graph::new(Tensor::zeros(&[4, 1]), vec![0; 4], &pairs).unwrap();
        let s = compute_stats(&g).unwrap();
        assert_eq!((s.homophily_ratio, s.density, s.clustering_coef), (1.0, 1.0, 1.0));
        assert_eq!(s.intra_inter_ratio, None);
    }

    #[test]
    fn k22_bipartite() {
        let pairs = [(0, 2), (0, 3), (1, 2), (1, 3)];
        let g = Graph::new(Tensor::zeros(&[4, 1]), vec![0, 0, 1, 1], &pairs).unwrap();
        let s = compute_stats(&g).unwrap();
        assert_eq!((s.homophily_ratio, s.clustering_coef), (0.0, 0.0));
        assert!((s.modularity + 0.5).abs() < 1e-15);
    }
}
