//! Exact nearest-neighbour search over a fixed point set.
//!
//! Queries return the same point a linear scan would: the smallest squared
//! Euclidean distance, ties resolved to the lowest point index.

#[derive(Debug, Clone)]
enum Node {
    Leaf(Vec<usize>),
    Split {
        dim: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    points: Vec<f64>,
    root: Node,
}

/// Squared distance with a fixed summation order, shared by tree and scan.
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Reference nearest neighbour: `(index, squared distance)`.
pub fn linear_nearest(points: &[f64], dim: usize, q: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.chunks_exact(dim).enumerate() {
        let d = sq_dist(p, q);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best
}

impl KdTree {
    /// `points` is row-major with `dim` columns.
    pub fn build(points: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0 && points.len().is_multiple_of(dim));
        let n = points.len() / dim;
        let mut idx: Vec<usize> = (0..n).collect();
        let root = Self::split(&points, dim, &mut idx);
        Self { dim, points, root }
    }

    fn split(points: &[f64], dim: usize, idx: &mut [usize]) -> Node {
        if idx.len() <= LEAF_SIZE {
            return Node::Leaf(idx.to_vec());
        }
        // Split on the dimension of largest spread.
        let mut best = (0, f64::NEG_INFINITY);
        for d in 0..dim {
            let (lo, hi) = idx
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = points[i * dim + d];
                    (lo.min(v), hi.max(v))
                });
            if hi - lo > best.1 {
                best = (d, hi - lo);
            }
        }
        let d = best.0;
        if best.1 <= 0.0 {
            return Node::Leaf(idx.to_vec());
        }
        idx.sort_by(|&a, &b| {
            points[a * dim + d]
                .total_cmp(&points[b * dim + d])
                .then(a.cmp(&b))
        });
        let mid = idx.len() / 2;
        let value = points[idx[mid] * dim + d];
        let (l, r) = idx.split_at_mut(mid);
        Node::Split {
            dim: d,
            value,
            left: Box::new(Self::split(points, dim, l)),
            right: Box::new(Self::split(points, dim, r)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// `(index, squared distance)` of the nearest point.
    pub fn nearest(&self, q: &[f64]) -> Option<(usize, f64)> {
        assert_eq!(q.len(), self.dim);
        let mut best = None;
        self.visit(&self.root, q, &mut best);
        best
    }

    fn visit(&self, node: &Node, q: &[f64], best: &mut Option<(usize, f64)>) {
        match node {
            Node::Leaf(ids) => {
                for &i in ids {
                    let d = sq_dist(self.point(i), q);
                    let better = match *best {
                        None => true,
                        Some((bi, bd)) => d < bd || (d == bd && i < bi),
                    };
                    if better {
                        *best = Some((i, d));
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[*dim] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.visit(near, q, best);
                // Only a strictly farther plane can be skipped; ties may hide a
                // lower index on the other side.
                if best.is_none_or(|(_, bd)| diff * diff <= bd) {
                    self.visit(far, q, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn matches_linear_scan() {
        let mut r = crate::rng::stream(5, &[]);
        let dim = 3;
        let pts: Vec<f64> = (0..300 * dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let tree = KdTree::build(pts.clone(), dim);
        for _ in 0..500 {
            let q: Vec<f64> = (0..dim).map(|_| r.random_range(-1.2..1.2)).collect();
            assert_eq!(tree.nearest(&q), linear_nearest(&pts, dim, &q));
        }
    }

    #[test]
    fn duplicate_points_resolve_to_lowest_index() {
        let pts = [1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let tree = KdTree::build(pts.repeat(5), 2);
        assert_eq!(tree.nearest(&[0.9, 0.9]).unwrap().0, 0);
        assert_eq!(tree.nearest(&[0.1, 0.0]).unwrap().0, 1);
    }
}
