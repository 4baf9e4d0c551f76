//! Read-tracking evaluation of transition rules.
//!
//! A rule is selected by the action. It first checks guards, then
//! assigns some of its declared write factors. Every state factor a guard
//! evaluates becomes an edge into all declared writes; every factor an
//! assignment evaluates becomes an edge into the assigned factor. Only
//! factors that were actually evaluated are recorded, so short-circuited
//! conditions contribute nothing.

use crate::factored::EdgeMask;
use std::cell::RefCell;

/// Read access to the pre-transition state that records what was read.
pub struct Reader<'a> {
    state: &'a [usize],
    reads: RefCell<Vec<bool>>,
}

impl<'a> Reader<'a> {
    fn new(state: &'a [usize]) -> Self {
        Self {
            state,
            reads: RefCell::new(vec![false; state.len()]),
        }
    }

    pub fn get(&self, factor: usize) -> usize {
        self.reads.borrow_mut()[factor] = true;
        self.state[factor]
    }

    fn take(self) -> Vec<bool> {
        self.reads.into_inner()
    }
}

/// Evaluation context of one rule application.
pub struct Tracker<'a> {
    state: &'a [usize],
    declared: &'a [usize],
    next: Vec<usize>,
    guard_reads: Vec<bool>,
    effect_reads: Vec<Option<Vec<bool>>>,
    failed: bool,
}

impl<'a> Tracker<'a> {
    pub fn new(state: &'a [usize], declared: &'a [usize]) -> Self {
        Self {
            state,
            declared,
            next: state.to_vec(),
            guard_reads: vec![false; state.len()],
            effect_reads: vec![None; state.len()],
            failed: false,
        }
    }

    /// Evaluates a guard; once one fails, later guards and assignments are ignored.
    pub fn guard(&mut self, f: impl FnOnce(&Reader) -> bool) -> bool {
        if self.failed {
            return false;
        }
        let r = Reader::new(self.state);
        let ok = f(&r);
        for (g, read) in self.guard_reads.iter_mut().zip(r.take()) {
            *g |= read;
        }
        self.failed = !ok;
        ok
    }

    /// A guard that also selects a value; `None` fails the rule.
    pub fn check<R>(&mut self, f: impl FnOnce(&Reader) -> Option<R>) -> Option<R> {
        let mut out = None;
        self.guard(|r| {
            out = f(r);
            out.is_some()
        });
        out
    }

    /// Assigns `factor` from values computed by `f`.
    pub fn set(&mut self, factor: usize, f: impl FnOnce(&Reader) -> usize) {
        if self.failed {
            return;
        }
        assert!(self.declared.contains(&factor), "rule writes undeclared factor {factor}");
        let r = Reader::new(self.state);
        self.next[factor] = f(&r);
        self.effect_reads[factor] = Some(r.take());
    }

    /// Whether every guard held.
    pub fn fired(&self) -> bool {
        !self.failed
    }

    /// Next state and its local dependency graph. The action row is active
    /// for every declared write of a rule whose guards held; after a failed
    /// guard no action could have changed those factors, so it stays empty.
    pub fn finish(self) -> (Vec<usize>, EdgeMask) {
        let n = self.state.len();
        let mut g = EdgeMask::empty(n);
        for j in 0..n {
            if !self.declared.contains(&j) {
                g.set(j, j, true);
                continue;
            }
            g.set(n, j, !self.failed);
            for i in (0..n).filter(|&i| self.guard_reads[i]) {
                g.set(i, j, true);
            }
            match &self.effect_reads[j] {
                Some(reads) => {
                    for i in (0..n).filter(|&i| reads[i]) {
                        g.set(i, j, true);
                    }
                }
                // unassigned: the old value carries over
                None => g.set(j, j, true),
            }
        }
        (self.next, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_guard_keeps_values_and_records_guard_reads() {
        let s = [3, 0, 7];
        let mut t = Tracker::new(&s, &[1]);
        // short-circuit: factor 2 is never evaluated
        assert!(!t.guard(|r| r.get(0) == 4 && r.get(2) == 7));
        t.set(1, |_| 1);
        let (next, g) = t.finish();
        assert_eq!(next, vec![3, 0, 7]);
        assert!(g.get(0, 1) && g.get(1, 1));
        assert!(!g.get(2, 1) && !g.get(3, 1));
        assert!(g.get(0, 0) && g.get(2, 2));
        assert_eq!(g.count(), 4);
    }

    #[test]
    fn effect_reads_only_reach_their_target() {
        let s = [1, 5, 0, 0];
        let mut t = Tracker::new(&s, &[2, 3]);
        assert!(t.guard(|r| r.get(0) == 1));
        t.set(2, |r| r.get(1) + 1);
        t.set(3, |_| 9);
        let (next, g) = t.finish();
        assert_eq!(next, vec![1, 5, 6, 9]);
        assert!(g.get(1, 2) && !g.get(1, 3));
        assert!(g.get(0, 2) && g.get(0, 3));
        // constant assignment: no self-edge
        assert!(!g.get(3, 3) && !g.get(2, 2));
    }
}
