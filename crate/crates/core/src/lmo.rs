//! Exact linear minimization over one video's integer assignments.
//!
//! Minimizes `⟨G, Y⟩` over one-hot `Y` satisfying the fixed entries and the
//! at-least-one bags. Without bags every row simply takes its cheapest
//! allowed class; bags are repaired by a depth-first branch-and-bound:
//!
//! * a node locks some rows to a class and bans some (row, class) pairs;
//!   every other row sits at its cheapest allowed class;
//! * if all bags are satisfied the node is optimal for its subtree;
//! * otherwise the unsatisfied bag with the fewest candidates is branched
//!   on: candidate `i` takes the bag's class while candidates `0..i` are
//!   banned from it, so subtrees do not overlap;
//! * the bound adds the cheapest switch cost of a family of unsatisfied
//!   bags with pairwise disjoint candidate rows.
//!
//! Bags that share no row never interact, so each connected group of bags
//! is searched on its own and the repairs are combined.
//!
//! Candidates are tried cheapest first, so the first leaf reached is the
//! greedy min-regret repair.

use alloc::vec;
use alloc::vec::Vec;

use crate::constraints::{validate, RowRules, VideoConstraintSet};
use crate::error::{Error, Result};

/// An integer-feasible assignment of one video's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVertex {
    pub video: usize,
    /// Class per row of the video, in row order.
    pub labels: Vec<usize>,
    /// `⟨G, Y⟩`
    pub value: f64,
}

impl BlockVertex {
    /// Dense one-hot rows, row-major.
    pub fn one_hot(&self, classes: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.labels.len() * classes];
        for (r, &c) in self.labels.iter().enumerate() {
            out[r * classes + c] = 1.0;
        }
        out
    }
}

fn check_grad(set: &VideoConstraintSet, grad: &[f64]) -> Result<()> {
    let expected = set.rows.len() * set.classes;
    if grad.len() != expected {
        return Err(Error::DimensionMismatch {
            what: "gradient block",
            expected,
            got: grad.len(),
        });
    }
    Ok(())
}

fn infeasible(set: &VideoConstraintSet, detail: impl Into<alloc::string::String>) -> Error {
    Error::Infeasible {
        video: alloc::format!("#{}", set.video),
        detail: detail.into(),
    }
}

/// Exact minimizer of `⟨G, Y⟩` over the integer points of `set`. `grad` is
/// the video's gradient block, row-major `rows × classes`.
pub fn lmo(set: &VideoConstraintSet, grad: &[f64]) -> Result<BlockVertex> {
    check_grad(set, grad)?;
    if let Some(v) = validate(set).first() {
        return Err(infeasible(set, alloc::format!("{v}")));
    }
    let mut search = Search::new(set, grad)?;
    for group in bag_groups(set) {
        search.active = group;
        search.best = None;
        search.best_cost = f64::INFINITY;
        search.run();
        let best = search
            .best
            .take()
            .ok_or_else(|| infeasible(set, "no assignment satisfies every bag"))?;
        search.cur = best;
        search.cost = search.best_cost;
    }
    let labels = search.cur;
    let value = labels
        .iter()
        .enumerate()
        .map(|(r, &c)| grad[r * set.classes + c])
        .sum();
    Ok(BlockVertex {
        video: set.video,
        labels,
        value,
    })
}

/// Bag indices grouped by shared rows, each group in ascending order and
/// groups ordered by their first bag.
fn bag_groups(set: &VideoConstraintSet) -> Vec<Vec<usize>> {
    let n = set.rows.len();
    let mut parent: Vec<usize> = (0..set.bags.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (i, bag) in set.bags.iter().enumerate() {
        for &r in &bag.rows {
            let r = r - set.rows.start;
            match owner[r] {
                Some(j) => {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
                None => owner[r] = Some(i),
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: Vec<Option<usize>> = vec![None; set.bags.len()];
    for i in 0..set.bags.len() {
        let root = find(&mut parent, i);
        let g = *slot[root].get_or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

struct Search<'a> {
    grad: &'a [f64],
    k: usize,
    locked: Vec<Option<usize>>,
    banned: Vec<bool>,
    cur: Vec<usize>,
    cost: f64,
    bags: Vec<(usize, Vec<usize>)>,
    active: Vec<usize>,
    best: Option<Vec<usize>>,
    best_cost: f64,
    mark: Vec<u32>,
    stamp: u32,
}

impl<'a> Search<'a> {
    fn new(set: &VideoConstraintSet, grad: &'a [f64]) -> Result<Self> {
        let rules = RowRules::new(set);
        let (n, k) = (set.rows.len(), set.classes);
        let mut banned = vec![false; n * k];
        for r in 0..n {
            for c in 0..k {
                banned[r * k + c] = !rules.allowed(r, c);
            }
        }
        let bags = set
            .bags
            .iter()
            .map(|b| (b.class, b.rows.iter().map(|r| r - set.rows.start).collect()))
            .collect();
        let mut s = Search {
            grad,
            k,
            locked: rules.fixed.clone(),
            banned,
            cur: vec![0; n],
            cost: 0.0,
            bags,
            active: Vec::new(),
            best: None,
            best_cost: f64::INFINITY,
            mark: vec![0; n],
            stamp: 0,
        };
        for r in 0..n {
            let c = match s.locked[r] {
                Some(c) => c,
                None => s.cheapest(r).ok_or_else(|| infeasible(set, alloc::format!("row {r} has no allowed class")))?,
            };
            s.cur[r] = c;
            s.cost += grad[r * k + c];
        }
        Ok(s)
    }

    fn cheapest(&self, r: usize) -> Option<usize> {
        let row = &self.grad[r * self.k..(r + 1) * self.k];
        let mut best: Option<usize> = None;
        for c in 0..self.k {
            if self.banned[r * self.k + c] {
                continue;
            }
            if best.map_or(true, |b| row[c] < row[b]) {
                best = Some(c);
            }
        }
        best
    }

    fn regret(&self, r: usize, c: usize) -> f64 {
        self.grad[r * self.k + c] - self.grad[r * self.k + self.cur[r]]
    }

    fn is_candidate(&self, r: usize, c: usize) -> bool {
        self.locked[r].is_none() && !self.banned[r * self.k + c]
    }

    fn run(&mut self) {
        // unsatisfied bags: (bag index, candidate rows sorted by regret)
        let mut open: Vec<(usize, Vec<usize>)> = Vec::new();
        for &i in &self.active {
            let (class, rows) = &self.bags[i];
            if rows.iter().any(|&r| self.cur[r] == *class) {
                continue;
            }
            let mut cand: Vec<usize> = rows.iter().copied().filter(|&r| self.is_candidate(r, *class)).collect();
            if cand.is_empty() {
                return;
            }
            cand.sort_by(|&a, &b| {
                self.regret(a, *class)
                    .partial_cmp(&self.regret(b, *class))
                    .unwrap_or(core::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            open.push((i, cand));
        }

        if open.is_empty() {
            if self.cost < self.best_cost {
                self.best_cost = self.cost;
                self.best = Some(self.cur.clone());
            }
            return;
        }

        if self.cost + self.packing_bound(&open) >= self.best_cost {
            return;
        }

        let (bag, cand) = open
            .into_iter()
            .min_by_key(|(i, c)| (c.len(), *i))
            .unwrap_or_default();
        let class = self.bags[bag].0;
        let mut banned_here = Vec::with_capacity(cand.len());
        for &r in &cand {
            let step = self.regret(r, class);
            if self.cost + step >= self.best_cost {
                break;
            }
            let prev = self.cur[r];
            self.locked[r] = Some(class);
            self.cur[r] = class;
            self.cost += step;

            self.run();

            self.cost -= step;
            self.cur[r] = prev;
            self.locked[r] = None;
            self.banned[r * self.k + class] = true;
            banned_here.push(r);
        }
        for r in banned_here {
            self.banned[r * self.k + class] = false;
        }
    }

    /// Sum of the cheapest switch over unsatisfied bags whose candidate rows
    /// are pairwise disjoint; each such bag needs its own switched row.
    fn packing_bound(&mut self, open: &[(usize, Vec<usize>)]) -> f64 {
        let mut order: Vec<(f64, usize)> = open
            .iter()
            .enumerate()
            .map(|(j, (bag, cand))| (self.regret(cand[0], self.bags[*bag].0), j))
            .collect();
        order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.mark.iter_mut().for_each(|m| *m = 0);
            self.stamp = 1;
        }
        let mut total = 0.0;
        for (regret, j) in order {
            let cand = &open[j].1;
            if cand.iter().any(|&r| self.mark[r] == self.stamp) {
                continue;
            }
            for &r in cand {
                self.mark[r] = self.stamp;
            }
            total += regret;
        }
        total
    }
}

/// Largest search space [`lmo_bruteforce`] accepts.
pub const BRUTEFORCE_LIMIT: u128 = 10_000_000;

/// Exhaustive minimum over every integer assignment; a test oracle for
/// [`lmo`]. Ties go to the first assignment in lexicographic order.
pub fn lmo_bruteforce(set: &VideoConstraintSet, grad: &[f64]) -> Result<BlockVertex> {
    check_grad(set, grad)?;
    let (n, k) = (set.rows.len(), set.classes);
    let space = (k as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if space > BRUTEFORCE_LIMIT {
        return Err(Error::TooLarge(space));
    }
    // per-row option lists, narrowed by the equality constraints only
    let options: Vec<Vec<usize>> = (0..n)
        .map(|r| {
            let row = set.rows.start + r;
            if let Some(&(_, c)) = set.fixed_one.iter().find(|(rr, _)| *rr == row) {
                vec![c]
            } else {
                (0..k).filter(|&c| !set.fixed_zero.contains(&(row, c))).collect()
            }
        })
        .collect();
    // bags hit by (row, class)
    let mut hits: Vec<Vec<usize>> = vec![Vec::new(); n * k];
    for (b, bag) in set.bags.iter().enumerate() {
        for &r in &bag.rows {
            hits[(r - set.rows.start) * k + bag.class].push(b);
        }
    }
    let mut counts = vec![0u32; set.bags.len()];
    let mut labels = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    if options.iter().all(|o| !o.is_empty()) {
        enumerate(0, 0.0, grad, k, &options, &hits, &mut counts, &mut labels, &mut best);
    }
    let (value, labels) = best.ok_or_else(|| infeasible(set, "no feasible assignment"))?;
    Ok(BlockVertex {
        video: set.video,
        labels,
        value,
    })
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    r: usize,
    cost: f64,
    grad: &[f64],
    k: usize,
    options: &[Vec<usize>],
    hits: &[Vec<usize>],
    counts: &mut [u32],
    labels: &mut [usize],
    best: &mut Option<(f64, Vec<usize>)>,
) {
    if r == options.len() {
        if counts.iter().all(|&c| c > 0) && best.as_ref().map_or(true, |(b, _)| cost < *b) {
            *best = Some((cost, labels.to_vec()));
        }
        return;
    }
    for &c in &options[r] {
        labels[r] = c;
        for &b in &hits[r * k + c] {
            counts[b] += 1;
        }
        enumerate(r + 1, cost + grad[r * k + c], grad, k, options, hits, counts, labels, best);
        for &b in &hits[r * k + c] {
            counts[b] -= 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{is_feasible_integer, Bag};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unconstrained_is_rowwise_argmin() {
        let set = VideoConstraintSet::unconstrained(0, 0..3, 3);
        let g = [0.5, 0.1, 0.1, 2.0, 1.0, 3.0, -1.0, -1.0, -1.0];
        let v = lmo(&set, &g).unwrap();
        assert_eq!(v.labels, vec![1, 1, 0]);
        assert!((v.value - (0.1 + 1.0 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn single_bag_forces_its_row() {
        let mut set = VideoConstraintSet::unconstrained(0, 0..3, 3);
        set.bags.push(Bag { class: 2, rows: vec![0] });
        let g = [0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
        let v = lmo(&set, &g).unwrap();
        assert_eq!(v.labels, vec![2, 0, 0]);
    }

    #[test]
    fn independent_groups_do_not_multiply() {
        // each pair of rows carries two competing bags, so the packing bound
        // undercounts every group by one switch
        let groups = 60;
        let mut set = VideoConstraintSet::unconstrained(0, 0..2 * groups, 3);
        for i in 0..groups {
            set.bags.push(Bag { class: 1, rows: vec![2 * i, 2 * i + 1] });
            set.bags.push(Bag { class: 2, rows: vec![2 * i, 2 * i + 1] });
        }
        let g: Vec<f64> = (0..2 * groups).flat_map(|_| [0.0, 1.0, 1.0]).collect();
        let v = lmo(&set, &g).unwrap();
        assert_eq!(v.value, 2.0 * groups as f64);
        assert_eq!(&v.labels[..4], &[1, 2, 1, 2]);
    }

    #[test]
    fn bruteforce_examples() {
        let set = VideoConstraintSet::unconstrained(0, 0..1, 2);
        let v = lmo_bruteforce(&set, &[0.3, 0.1]).unwrap();
        assert_eq!(v.labels, vec![1]);
        assert!((v.value - 0.1).abs() < 1e-15);

        let mut fixed = set.clone();
        fixed.fixed_one.push((0, 0));
        assert_eq!(lmo_bruteforce(&fixed, &[0.3, 0.1]).unwrap().labels, vec![0]);

        let mut bad = set.clone();
        bad.fixed_zero = vec![(0, 0), (0, 1)];
        assert!(lmo_bruteforce(&bad, &[0.0, 0.0]).is_err());
        assert!(lmo(&bad, &[0.0, 0.0]).is_err());

        let big = VideoConstraintSet::unconstrained(0, 0..20, 4);
        assert!(matches!(lmo_bruteforce(&big, &[0.0; 80]), Err(Error::TooLarge(_))));
    }

    #[test]
    fn dimension_mismatch() {
        let set = VideoConstraintSet::unconstrained(0, 0..2, 2);
        assert!(matches!(lmo(&set, &[0.0; 3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_gradient_tie_breaks() {
        // two bags over all rows: the first class takes row 0, the next row 1
        let mut set = VideoConstraintSet::unconstrained(0, 10..14, 4);
        set.bags.push(Bag { class: 3, rows: vec![10, 11, 12, 13] });
        set.bags.push(Bag { class: 1, rows: vec![10, 11, 12, 13] });
        let v = lmo(&set, &[0.0; 16]).unwrap();
        assert_eq!(v.labels, vec![3, 1, 0, 0]);
    }

    #[test]
    fn shared_row_satisfies_two_bags() {
        // row 1 sits in both bags of class 1; switching it alone is optimal
        let mut set = VideoConstraintSet::unconstrained(0, 0..3, 2);
        set.bags.push(Bag { class: 1, rows: vec![0, 1] });
        set.bags.push(Bag { class: 1, rows: vec![1, 2] });
        let g = [0.0, 0.6, 0.0, 0.7, 0.0, 0.6];
        let v = lmo(&set, &g).unwrap();
        let b = lmo_bruteforce(&set, &g).unwrap();
        assert_eq!(v.labels, vec![0, 1, 0]);
        assert!((v.value - b.value).abs() < 1e-15);
    }

    pub(crate) fn random_instance(rng: &mut ChaCha8Rng) -> (VideoConstraintSet, Vec<f64>) {
        let (n, k) = loop {
            let n = rng.random_range(1..=12usize);
            let k = rng.random_range(2..=4usize);
            if (k as u64).pow(n as u32) <= 1 << 20 {
                break (n, k);
            }
        };
        let base = rng.random_range(0..50usize);
        let mut set = VideoConstraintSet::unconstrained(7, base..base + n, k);
        for r in 0..n {
            let u: f64 = rng.random();
            if u < 0.15 {
                set.fixed_one.push((base + r, rng.random_range(0..k)));
            } else if u < 0.35 {
                set.fixed_zero.push((base + r, rng.random_range(1..k)));
            }
        }
        for _ in 0..rng.random_range(0..=4usize) {
            let class = rng.random_range(1..k);
            let size = rng.random_range(1..=n);
            let mut rows: Vec<usize> = (base..base + n).collect();
            for i in 0..size {
                let j = rng.random_range(i..n);
                rows.swap(i, j);
            }
            rows.truncate(size);
            rows.sort_unstable();
            set.bags.push(Bag { class, rows });
        }
        let g = (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        (set, g)
    }

    #[test]
    fn matches_bruteforce_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        for _ in 0..300 {
            let (set, g) = random_instance(&mut rng);
            let exact = lmo_bruteforce(&set, &g);
            let fast = lmo(&set, &g);
            match (exact, fast) {
                (Ok(e), Ok(f)) => {
                    assert!((e.value - f.value).abs() < 1e-12, "{} vs {}", e.value, f.value);
                    assert!(is_feasible_integer(&set, &f.labels).unwrap());
                    checked += 1;
                }
                (Err(_), Err(_)) => {}
                (e, f) => panic!("disagreement: {e:?} vs {f:?}"),
            }
        }
        assert!(checked > 200);
    }

    #[test]
    fn adding_a_bag_never_lowers_the_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let (set, g) = random_instance(&mut rng);
            let Ok(before) = lmo(&set, &g) else { continue };
            let mut more = set.clone();
            let class = rng.random_range(1..set.classes);
            more.bags.push(Bag { class, rows: vec![set.rows.start + rng.random_range(0..set.rows.len())] });
            if let Ok(after) = lmo(&more, &g) {
                assert!(after.value >= before.value - 1e-12);
            }
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let (set, g) = random_instance(&mut rng);
            assert_eq!(lmo(&set, &g), lmo(&set, &g));
        }
    }
}
