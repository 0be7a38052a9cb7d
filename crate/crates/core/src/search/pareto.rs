use std::collections::HashSet;

use crate::expr::Expression;

/// A scored candidate with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoEntry {
    pub expression: Expression,
    /// Canonical prefix string; unique key within a pool.
    pub key: String,
    pub cv_loss: f64,
    pub complexity: usize,
    pub train_loss: f64,
    pub seed: u64,
    pub generation: usize,
}

impl ParetoEntry {
    pub fn gate_count(&self) -> usize {
        self.expression.gate_count()
    }

    /// `self` is no worse on both objectives and strictly better on one.
    pub fn dominates(&self, other: &ParetoEntry) -> bool {
        dominates((self.cv_loss, self.complexity), (other.cv_loss, other.complexity))
    }
}

pub fn dominates(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

/// Objective order: loss, then complexity, then key.
pub fn objective_order(a: &ParetoEntry, b: &ParetoEntry) -> std::cmp::Ordering {
    a.cv_loss
        .total_cmp(&b.cv_loss)
        .then(a.complexity.cmp(&b.complexity))
        .then_with(|| a.key.cmp(&b.key))
}

/// Brute-force non-dominated filter over `(loss, complexity)` points.
pub fn non_dominated(points: &[(f64, usize)]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| !points.iter().any(|&p| dominates(p, points[i])))
        .collect()
}

pub const DEFAULT_ARCHIVE: usize = 100;

/// Non-dominated front in (cv loss, complexity) plus a bounded archive of the
/// best candidates by objective.
#[derive(Debug, Clone, Default)]
pub struct ParetoPool {
    front: Vec<ParetoEntry>,
    archive: Vec<ParetoEntry>,
    capacity: usize,
}

impl ParetoPool {
    pub fn new(capacity: usize) -> Self {
        ParetoPool {
            front: Vec::new(),
            archive: Vec::new(),
            capacity,
        }
    }

    pub fn front(&self) -> &[ParetoEntry] {
        &self.front
    }

    /// Archive sorted by objective.
    pub fn archive(&self) -> &[ParetoEntry] {
        &self.archive
    }

    /// Would `(loss, complexity, key)` change the pool?
    pub fn wants(&self, cv_loss: f64, complexity: usize, key: &str) -> bool {
        if !cv_loss.is_finite() {
            return false;
        }
        let point = (cv_loss, complexity);
        let on_front = !self.front.iter().any(|e| e.key == key)
            && !self.front.iter().any(|e| dominates((e.cv_loss, e.complexity), point));
        let in_archive = !self.archive.iter().any(|e| e.key == key)
            && (self.archive.len() < self.capacity
                || self.archive.last().is_some_and(|w| {
                    cv_loss
                        .total_cmp(&w.cv_loss)
                        .then(complexity.cmp(&w.complexity))
                        .then_with(|| key.cmp(&w.key))
                        .is_lt()
                }));
        on_front || in_archive
    }

    pub fn insert(&mut self, entry: ParetoEntry) {
        if !entry.cv_loss.is_finite() {
            return;
        }
        if !self.front.iter().any(|e| e.key == entry.key) && !self.front.iter().any(|e| e.dominates(&entry)) {
            self.front.retain(|e| !entry.dominates(e));
            self.front.push(entry.clone());
            self.front.sort_by(objective_order);
        }
        if self.capacity > 0 && !self.archive.iter().any(|e| e.key == entry.key) {
            let pos = self
                .archive
                .binary_search_by(|e| objective_order(e, &entry))
                .unwrap_or_else(|p| p);
            if pos < self.capacity {
                self.archive.insert(pos, entry);
                self.archive.truncate(self.capacity);
            }
        }
    }

    /// Union of front and archive, unique by key, sorted by objective.
    pub fn entries(&self) -> Vec<ParetoEntry> {
        let mut seen = HashSet::new();
        let mut out: Vec<ParetoEntry> = self
            .front
            .iter()
            .chain(&self.archive)
            .filter(|e| seen.insert(e.key.clone()))
            .cloned()
            .collect();
        out.sort_by(objective_order);
        out
    }

    /// The `k` best entries by objective.
    pub fn top_k(&self, k: usize) -> Vec<ParetoEntry> {
        let mut all = self.entries();
        all.truncate(k);
        all
    }

    pub fn best(&self) -> Option<&ParetoEntry> {
        self.front.first()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Node;

    fn entry(key: &str, loss: f64, c: usize) -> ParetoEntry {
        ParetoEntry {
            expression: Expression::new(Node::Const(0.0)),
            key: key.into(),
            cv_loss: loss,
            complexity: c,
            train_loss: loss,
            seed: 1,
            generation: 0,
        }
    }

    #[test]
    fn front_matches_brute_force() {
        let pts = [
            ("a", 1.0, 5),
            ("b", 0.5, 9),
            ("c", 0.7, 5),
            ("d", 2.0, 1),
            ("e", 0.5, 12),
            ("f", 0.7, 5),
            ("g", 3.0, 1),
            ("h", 0.4, 30),
        ];
        let mut pool = ParetoPool::new(3);
        for (k, l, c) in pts {
            pool.insert(entry(k, l, c));
        }
        let brute: HashSet<&str> = non_dominated(&pts.iter().map(|p| (p.1, p.2)).collect::<Vec<_>>())
            .into_iter()
            .map(|i| pts[i].0)
            .collect();
        let front: HashSet<&str> = pool.front().iter().map(|e| e.key.as_str()).collect();
        assert_eq!(front, brute);
        let archive: Vec<&str> = pool.archive().iter().map(|e| e.key.as_str()).collect();
        assert_eq!(archive, vec!["h", "b", "e"]);
        for a in pool.front() {
            for b in pool.front() {
                assert!(!a.dominates(b));
            }
        }
    }

    #[test]
    fn rejects_non_finite_losses() {
        let mut pool = ParetoPool::new(5);
        pool.insert(entry("x", f64::INFINITY, 1));
        assert!(pool.entries().is_empty());
        assert!(!pool.wants(f64::NAN, 1, "x"));
    }
}
