use std::collections::BTreeMap;

/// Why the reference policy was queried.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QueryKind {
    /// Labelling a collected state for training.
    Label,
    /// Driving in place of the primary under the safe strategy or a mixture.
    Takeover,
    /// Evaluation-only comparison (steering error), never a training cost.
    Metric,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueryCounts {
    pub label: u64,
    pub takeover: u64,
    pub metric: u64,
}

impl QueryCounts {
    fn add(&mut self, kind: QueryKind, n: u64) {
        match kind {
            QueryKind::Label => self.label += n,
            QueryKind::Takeover => self.takeover += n,
            QueryKind::Metric => self.metric += n,
        }
    }

    fn merge(&mut self, other: &QueryCounts) {
        self.label += other.label;
        self.takeover += other.takeover;
        self.metric += other.metric;
    }

    pub fn total(&self) -> u64 {
        self.label + self.takeover + self.metric
    }
}

/// Run-confined counter of reference-policy queries, broken down by kind and
/// by training iteration. Counts only ever grow.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QueryLedger {
    iteration: u32,
    per_iteration: BTreeMap<u32, QueryCounts>,
}

impl QueryLedger {
    pub fn new() -> QueryLedger {
        QueryLedger::default()
    }

    /// Attributes subsequent queries to `iteration`.
    pub fn set_iteration(&mut self, iteration: u32) {
        self.iteration = iteration;
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn record(&mut self, kind: QueryKind, n: u64) {
        self.per_iteration.entry(self.iteration).or_default().add(kind, n);
    }

    pub fn totals(&self) -> QueryCounts {
        let mut t = QueryCounts::default();
        for c in self.per_iteration.values() {
            t.merge(c);
        }
        t
    }

    pub fn at_iteration(&self, iteration: u32) -> QueryCounts {
        self.per_iteration.get(&iteration).copied().unwrap_or_default()
    }

    pub fn label_queries(&self) -> u64 {
        self.totals().label
    }

    pub fn takeover_queries(&self) -> u64 {
        self.totals().takeover
    }

    pub fn metric_queries(&self) -> u64 {
        self.totals().metric
    }

    pub fn total(&self) -> u64 {
        self.totals().total()
    }

    /// Folds another ledger's counts into this one, iteration by iteration.
    pub fn merge(&mut self, other: &QueryLedger) {
        for (it, c) in &other.per_iteration {
            self.per_iteration.entry(*it).or_default().merge(c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_iteration_breakdown_sums_to_total() {
        let mut l = QueryLedger::new();
        l.record(QueryKind::Label, 5);
        l.set_iteration(1);
        l.record(QueryKind::Label, 2);
        l.record(QueryKind::Takeover, 7);
        assert_eq!(l.at_iteration(0).label, 5);
        assert_eq!(l.at_iteration(1), QueryCounts { label: 2, takeover: 7, metric: 0 });
        assert_eq!(l.total(), 14);
    }

    #[test]
    fn merge_is_associative() {
        let mk = |it: u32, k: QueryKind, n: u64| {
            let mut l = QueryLedger::new();
            l.set_iteration(it);
            l.record(k, n);
            l
        };
        let (a, b, c) = (mk(0, QueryKind::Label, 3), mk(1, QueryKind::Takeover, 4), mk(1, QueryKind::Metric, 5));
        let mut left = a.clone();
        left.merge(&b);
        left.merge(&c);
        let mut bc = b.clone();
        bc.merge(&c);
        let mut right = a.clone();
        right.merge(&bc);
        assert_eq!(left.totals(), right.totals());
        assert_eq!(left.at_iteration(1), right.at_iteration(1));
    }
}
