//! Treap of workers in best-fit order, with per-subtree maxima of each
//! worker's remaining room so a scan can skip whole subtrees that cannot
//! take a request.

use std::cmp::Reverse;

use ordered_float::OrderedFloat;

use super::WorkerId;

pub(crate) type Key = (Reverse<OrderedFloat<f64>>, WorkerId);

const NIL: usize = usize::MAX;

/// Upper bounds on what a worker can still take. Each field is a necessary
/// condition only; the exact check runs at the leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Room {
    /// Prefill tokens a TTFT-bound request may add (min of the TTFT and
    /// preemption limits).
    pub tokens: f64,
    /// Prefill tokens a TTFT-exempt request may add (preemption limit only).
    pub tokens_exempt: f64,
    /// Weighted context left in the decode budget at the next batch size.
    pub ctx: f64,
    /// KV left at the next iteration.
    pub kv: f64,
}

impl Room {
    const NONE: Room =
        Room { tokens: f64::NEG_INFINITY, tokens_exempt: f64::NEG_INFINITY, ctx: f64::NEG_INFINITY, kv: f64::NEG_INFINITY };

    fn max(self, o: Room) -> Room {
        Room {
            tokens: self.tokens.max(o.tokens),
            tokens_exempt: self.tokens_exempt.max(o.tokens_exempt),
            ctx: self.ctx.max(o.ctx),
            kv: self.kv.max(o.kv),
        }
    }
}

/// What a candidate needs, in the units of [`Room`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct Need {
    pub tokens: f64,
    pub exempt: bool,
    pub ctx: f64,
    pub kv: f64,
}

impl Need {
    fn fits(&self, r: &Room) -> bool {
        let tokens = if self.exempt { r.tokens_exempt } else { r.tokens };
        tokens >= self.tokens && r.ctx >= self.ctx && r.kv >= self.kv
    }
}

#[derive(Debug, Clone)]
struct Node {
    key: Key,
    prio: u64,
    left: usize,
    right: usize,
    own: Room,
    agg: Room,
}

fn priority(id: WorkerId) -> u64 {
    // splitmix64
    let mut z = (id as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Default)]
pub(crate) struct RankTree {
    nodes: Vec<Node>,
    free: Vec<usize>,
    root: Option<usize>,
    len: usize,
}

impl RankTree {
    pub fn len(&self) -> usize {
        self.len
    }

    fn root(&self) -> usize {
        self.root.unwrap_or(NIL)
    }

    fn agg(&self, t: usize) -> Room {
        if t == NIL {
            Room::NONE
        } else {
            self.nodes[t].agg
        }
    }

    fn pull(&mut self, t: usize) {
        let (l, r) = (self.nodes[t].left, self.nodes[t].right);
        self.nodes[t].agg = self.nodes[t].own.max(self.agg(l)).max(self.agg(r));
    }

    /// Splits `t` into keys `< key` and keys `>= key`.
    fn split(&mut self, t: usize, key: &Key) -> (usize, usize) {
        if t == NIL {
            return (NIL, NIL);
        }
        if self.nodes[t].key < *key {
            let (a, b) = self.split(self.nodes[t].right, key);
            self.nodes[t].right = a;
            self.pull(t);
            (t, b)
        } else {
            let (a, b) = self.split(self.nodes[t].left, key);
            self.nodes[t].left = b;
            self.pull(t);
            (a, t)
        }
    }

    fn merge(&mut self, a: usize, b: usize) -> usize {
        if a == NIL {
            return b;
        }
        if b == NIL {
            return a;
        }
        if self.nodes[a].prio > self.nodes[b].prio {
            let m = self.merge(self.nodes[a].right, b);
            self.nodes[a].right = m;
            self.pull(a);
            a
        } else {
            let m = self.merge(a, self.nodes[b].left);
            self.nodes[b].left = m;
            self.pull(b);
            b
        }
    }

    pub fn insert(&mut self, key: Key, room: Room) {
        let node = Node { key, prio: priority(key.1), left: NIL, right: NIL, own: room, agg: room };
        let n = match self.free.pop() {
            Some(i) => {
                self.nodes[i] = node;
                i
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        };
        let (a, b) = self.split(self.root(), &key);
        let left = self.merge(a, n);
        let root = self.merge(left, b);
        self.root = Some(root);
        self.len += 1;
    }

    /// Removes `key`; returns whether it was present.
    pub fn remove(&mut self, key: &Key) -> bool {
        let (a, b) = self.split(self.root(), key);
        let next = (key.0, key.1 + 1);
        let (mid, c) = self.split(b, &next);
        let found = mid != NIL;
        if found {
            self.free.push(mid);
            self.len -= 1;
        }
        let root = self.merge(a, c);
        self.root = (root != NIL).then_some(root);
        found
    }

    /// Keys in order.
    pub fn keys(&self) -> Vec<Key> {
        let mut out = Vec::with_capacity(self.len);
        let mut stack = Vec::new();
        let mut t = self.root();
        while t != NIL || !stack.is_empty() {
            while t != NIL {
                stack.push(t);
                t = self.nodes[t].left;
            }
            let n = stack.pop().expect("stack is non-empty");
            out.push(self.nodes[n].key);
            t = self.nodes[n].right;
        }
        out
    }

    /// First key in order whose room fits `need` and that `accept` takes.
    pub fn first(&self, need: &Need, accept: &mut impl FnMut(&Key) -> bool) -> Option<Key> {
        self.first_in(self.root(), need, accept)
    }

    fn first_in(&self, t: usize, need: &Need, accept: &mut impl FnMut(&Key) -> bool) -> Option<Key> {
        if t == NIL || !need.fits(&self.nodes[t].agg) {
            return None;
        }
        let n = &self.nodes[t];
        if let Some(k) = self.first_in(n.left, need, accept) {
            return Some(k);
        }
        if need.fits(&n.own) && accept(&n.key) {
            return Some(n.key);
        }
        self.first_in(n.right, need, accept)
    }
}
