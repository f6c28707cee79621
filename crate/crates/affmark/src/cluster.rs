//! Agglomerative hierarchical clustering, generic over the scalar type.
//!
//! [`agglomerate`] consumes a full pairwise distance matrix and repeatedly
//! merges the closest pair of active clusters under the chosen linkage.
//! Node ids follow the usual convention: leaves are `0..n`, the k-th merge
//! creates node `n + k`. Ties are broken deterministically by the smallest
//! `(left id, right id)` pair, where two candidate distances within a
//! relative `1e-9` count as tied; this keeps the merge sequence stable even
//! when incremental linkage updates and from-scratch recomputation disagree
//! in the last few bits.

use num_traits::Float;
use std::str::FromStr;

/// Relative tolerance under which two merge distances are considered tied.
pub const TIE_RELATIVE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linkage {
    Single,
    Complete,
    Average,
}

impl FromStr for Linkage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            other => Err(format!(
                "unknown linkage {other:?}; expected single, complete or average"
            )),
        }
    }
}

impl std::fmt::Display for Linkage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Linkage::Single => "single",
            Linkage::Complete => "complete",
            Linkage::Average => "average",
        })
    }
}

/// One merge step: `left` and `right` are node ids, `left < right`.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge<F> {
    pub left: usize,
    pub right: usize,
    pub distance: F,
}

/// Result of a clustering run: `n_leaves` input points and `n_leaves - 1`
/// merges (for non-empty input).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree<F> {
    pub n_leaves: usize,
    pub merges: Vec<Merge<F>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("clustering needs at least one point")]
    Empty,
    #[error("distance matrix must be square, got row {row} of length {len} for {n} points")]
    RaggedMatrix { row: usize, len: usize, n: usize },
}

fn tied<F: Float>(a: F, b: F) -> bool {
    let eps = F::from(TIE_RELATIVE_EPSILON).unwrap();
    let scale = a.abs().max(b.abs()).max(F::one());
    (a - b).abs() <= eps * scale
}

/// True when candidate (d, pair) should replace the current best.
fn improves<F: Float>(d: F, pair: (usize, usize), best: F, best_pair: (usize, usize)) -> bool {
    if tied(d, best) {
        pair < best_pair
    } else {
        d < best
    }
}

/// Bottom-up clustering of `n` points given their `n x n` symmetric
/// distance matrix. Linkage distances are maintained incrementally via the
/// Lance-Williams update for the supported linkages.
pub fn agglomerate<F: Float>(
    dist: &[Vec<F>],
    linkage: Linkage,
) -> Result<ClusterTree<F>, ClusterError> {
    let n = dist.len();
    if n == 0 {
        return Err(ClusterError::Empty);
    }
    for (row, r) in dist.iter().enumerate() {
        if r.len() != n {
            return Err(ClusterError::RaggedMatrix {
                row,
                len: r.len(),
                n,
            });
        }
    }

    // Active-cluster state; index into these vectors is transient, node ids
    // in `ids` are stable.
    let mut ids: Vec<usize> = (0..n).collect();
    let mut sizes: Vec<usize> = vec![1; n];
    let mut mat: Vec<Vec<F>> = dist.to_vec();
    let mut merges: Vec<Merge<F>> = Vec::with_capacity(n.saturating_sub(1));

    for step in 0..n.saturating_sub(1) {
        let m = ids.len();
        let mut best = (0usize, 1usize);
        let mut best_d = mat[0][1];
        let mut best_pair = ordered(ids[0], ids[1]);
        for i in 0..m {
            for j in (i + 1)..m {
                let pair = ordered(ids[i], ids[j]);
                if (i, j) != (0, 1) && improves(mat[i][j], pair, best_d, best_pair) {
                    best = (i, j);
                    best_d = mat[i][j];
                    best_pair = pair;
                }
            }
        }

        let (bi, bj) = best;
        let new_id = n + step;
        merges.push(Merge {
            left: best_pair.0,
            right: best_pair.1,
            distance: best_d,
        });

        // Lance-Williams distances from the merged cluster to the rest.
        let (si, sj) = (sizes[bi], sizes[bj]);
        let mut fresh: Vec<F> = Vec::with_capacity(m - 2);
        for k in 0..m {
            if k == bi || k == bj {
                continue;
            }
            let dik = mat[bi][k];
            let djk = mat[bj][k];
            let d = match linkage {
                Linkage::Single => dik.min(djk),
                Linkage::Complete => dik.max(djk),
                Linkage::Average => {
                    let fi = F::from(si).unwrap();
                    let fj = F::from(sj).unwrap();
                    (fi * dik + fj * djk) / (fi + fj)
                }
            };
            fresh.push(d);
        }

        // Drop rows/cols bj then bi (bj > bi is not guaranteed; order them).
        let (lo, hi) = (bi.min(bj), bi.max(bj));
        for row in &mut mat {
            row.remove(hi);
            row.remove(lo);
        }
        mat.remove(hi);
        mat.remove(lo);
        ids.remove(hi);
        ids.remove(lo);
        sizes.remove(hi);
        sizes.remove(lo);

        // Append the merged cluster.
        for (row, &d) in mat.iter_mut().zip(&fresh) {
            row.push(d);
        }
        fresh.push(F::zero());
        mat.push(fresh);
        ids.push(new_id);
        sizes.push(si + sj);
    }

    Ok(ClusterTree {
        n_leaves: n,
        merges,
    })
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl<F: Float> ClusterTree<F> {
    /// Partition of the leaves into the connected components formed by
    /// merges with distance ≤ `threshold`. Clusters are sorted internally
    /// and ordered by their smallest member.
    pub fn cut(&self, threshold: F) -> Vec<Vec<usize>> {
        let total = self.n_leaves + self.merges.len();
        let mut parent: Vec<usize> = (0..total).collect();

        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }

        for (k, m) in self.merges.iter().enumerate() {
            if m.distance <= threshold {
                let node = self.n_leaves + k;
                let l = find(&mut parent, m.left);
                parent[l] = node;
                let r = find(&mut parent, m.right);
                parent[r] = node;
            }
        }

        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for leaf in 0..self.n_leaves {
            let root = find(&mut parent, leaf);
            groups.entry(root).or_default().push(leaf);
        }
        let mut clusters: Vec<Vec<usize>> = groups.into_values().collect();
        clusters.sort_by_key(|c| c[0]);
        clusters
    }
}
