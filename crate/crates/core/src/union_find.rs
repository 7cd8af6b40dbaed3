//! Union-find with merge timestamps.
//!
//! Links are only ever added between current roots and at nondecreasing
//! steps, so the stamps along any parent chain are nondecreasing. Walking the
//! chain while `stamp <= step` therefore recovers the class representative as
//! of any past step, without path compression. Union by size keeps chains
//! logarithmic.

/// Sentinel stamp of a root.
pub const NEVER: u32 = u32::MAX;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TimedUnionFind {
    parent: Vec<u32>,
    stamp: Vec<u32>,
    size: Vec<u32>,
}

impl TimedUnionFind {
    pub fn new(n: usize) -> Self {
        let mut uf = Self::default();
        for _ in 0..n {
            uf.push();
        }
        uf
    }

    /// Rebuild from stored parent/stamp arrays; sizes are recomputed.
    pub fn from_parts(parent: Vec<u32>, stamp: Vec<u32>) -> Option<Self> {
        let n = parent.len();
        if stamp.len() != n {
            return None;
        }
        for i in 0..n {
            let p = parent[i] as usize;
            if p >= n || (p == i) != (stamp[i] == NEVER) {
                return None;
            }
        }
        // Stored sizes are subtree sizes: a node's size froze when it was
        // linked. Accumulate children into parents, deepest first.
        let mut uf = Self {
            parent,
            stamp,
            size: vec![1; n],
        };
        let mut depth = vec![0u32; n];
        for i in 0..n {
            let mut j = i as u32;
            let mut d = 0;
            while !uf.is_root(j) {
                j = uf.parent[j as usize];
                d += 1;
                if d as usize > n {
                    return None;
                }
            }
            depth[i] = d;
        }
        let mut order: Vec<usize> = (0..n).filter(|&i| depth[i] > 0).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(depth[i]));
        for i in order {
            let p = uf.parent[i] as usize;
            uf.size[p] += uf.size[i];
        }
        Some(uf)
    }

    pub fn push(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        self.stamp.push(NEVER);
        self.size.push(1);
        id
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn parents(&self) -> &[u32] {
        &self.parent
    }

    pub fn stamps(&self) -> &[u32] {
        &self.stamp
    }

    pub fn is_root(&self, i: u32) -> bool {
        self.parent[i as usize] == i
    }

    /// Step at which `i` stopped being a representative, if it did.
    pub fn merge_step(&self, i: u32) -> Option<u32> {
        let s = self.stamp[i as usize];
        (s != NEVER).then_some(s)
    }

    /// Current representative.
    pub fn root(&self, mut i: u32) -> u32 {
        while self.parent[i as usize] != i {
            i = self.parent[i as usize];
        }
        i
    }

    /// Representative of `i`'s class as of `step`.
    #[inline]
    pub fn find_at(&self, mut i: u32, step: u32) -> u32 {
        loop {
            let p = self.parent[i as usize];
            if p == i || self.stamp[i as usize] > step {
                return i;
            }
            i = p;
        }
    }

    pub fn same_class_at(&self, a: u32, b: u32, step: u32) -> bool {
        self.find_at(a, step) == self.find_at(b, step)
    }

    /// Attach root `child` under root `parent` at `step`.
    pub fn link(&mut self, child: u32, parent: u32, step: u32) {
        debug_assert!(self.is_root(child) && self.is_root(parent) && child != parent);
        debug_assert!(step != NEVER);
        self.parent[child as usize] = parent;
        self.stamp[child as usize] = step;
        self.size[parent as usize] += self.size[child as usize];
    }

    /// Merge the classes of roots `a` and `b` at `step`; the larger class
    /// (lower id on ties) survives. Returns the surviving root.
    pub fn union(&mut self, a: u32, b: u32, step: u32) -> u32 {
        if a == b {
            return a;
        }
        let (sa, sb) = (self.size[a as usize], self.size[b as usize]);
        let (keep, drop) = if sa > sb || (sa == sb && a < b) { (a, b) } else { (b, a) };
        self.link(drop, keep, step);
        keep
    }

    pub fn class_size(&self, root: u32) -> u32 {
        self.size[root as usize]
    }
}
