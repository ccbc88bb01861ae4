//! Nearest-neighbour counterfactual environments over a logged dataset.

use std::collections::BTreeMap;

use super::{Environment, Response, UserState};
use crate::datapipe::{InteractionRecord, Normalizer};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Leaves hold at most this many points.
const LEAF: usize = 8;

/// Static kd-tree over the normalized states of one action's records.
#[derive(Clone, Debug)]
struct KdTree {
    dim: usize,
    /// Row-major normalized points, one row per entry of `order`.
    points: Vec<f64>,
    /// Record index of each point.
    record: Vec<usize>,
    /// Permutation of `0..record.len()` arranged as an implicit tree.
    order: Vec<usize>,
    /// Split dimension of the node whose median sits at this slot.
    split: Vec<usize>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KdTree {
    fn new(dim: usize, points: Vec<f64>, record: Vec<usize>) -> Self {
        let n = record.len();
        let mut tree = Self { dim, points, record, order: (0..n).collect(), split: vec![0; n] };
        tree.build(0, n, 0);
        tree
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, lo: usize, hi: usize, depth: usize) {
        if hi - lo <= LEAF {
            return;
        }
        let d = depth % self.dim;
        let mid = lo + (hi - lo) / 2;
        let (points, dim) = (&self.points, self.dim);
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            points[a * dim + d].total_cmp(&points[b * dim + d])
        });
        self.split[mid] = d;
        self.build(lo, mid, depth + 1);
        self.build(mid + 1, hi, depth + 1);
    }

    /// Nearest record index; ties go to the lowest record index.
    fn nearest(&self, q: &[f64]) -> usize {
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(q, 0, self.order.len(), &mut best);
        best.1
    }

    fn consider(&self, q: &[f64], slot: usize, best: &mut (f64, usize)) {
        let p = self.order[slot];
        let d = sq_dist(q, self.point(p));
        let rec = self.record[p];
        if d < best.0 || (d == best.0 && rec < best.1) {
            *best = (d, rec);
        }
    }

    fn search(&self, q: &[f64], lo: usize, hi: usize, best: &mut (f64, usize)) {
        if hi - lo <= LEAF {
            for slot in lo..hi {
                self.consider(q, slot, best);
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        self.consider(q, mid, best);
        let d = self.split[mid];
        let diff = q[d] - self.point(self.order[mid])[d];
        let (near, far) = if diff <= 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, best);
        // Equal distances must still be visited for the index tie-break.
        if !(diff * diff > best.0) {
            self.search(q, far.0, far.1, best);
        }
    }
}

/// `(reward, cost)` of the nearest logged record with the same action, by
/// exhaustive scan in the dataset's normalized state space.
pub fn counterfactual(
    dataset: &[InteractionRecord],
    state: &[f64],
    action: usize,
) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::Empty("counterfactual dataset"));
    }
    let norm = Normalizer::fit_rows(dataset.iter().map(|r| r.features.as_slice()))?;
    check_dim(&norm, state)?;
    let q = norm.apply(state);
    let mut best: Option<(f64, usize)> = None;
    for (i, r) in dataset.iter().enumerate().filter(|(_, r)| r.action == action) {
        let d = sq_dist(&q, &norm.apply(&r.features));
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    let (_, i) = best.ok_or(Error::UncoveredAction(action))?;
    Ok((dataset[i].reward, dataset[i].cost))
}

fn check_dim(norm: &Normalizer, state: &[f64]) -> Result<()> {
    if state.len() != norm.dim() {
        return Err(Error::Shape(format!(
            "query has {} features, dataset has {}",
            state.len(),
            norm.dim()
        )));
    }
    Ok(())
}

/// Answers `(state, action)` queries with the nearest logged record taking
/// that action. The next state is the matched record's logged successor, or
/// the query state when the record ends its user's log.
#[derive(Clone, Debug)]
pub struct CounterfactualEnv {
    records: Vec<InteractionRecord>,
    successor: Vec<Option<usize>>,
    normalizer: Normalizer,
    trees: Vec<Option<KdTree>>,
    max_cost: Vec<f64>,
    horizon: usize,
}

impl CounterfactualEnv {
    /// `n_actions` fixes the action space; actions absent from the log stay
    /// queryable but fail with [`Error::UncoveredAction`].
    pub fn new(records: Vec<InteractionRecord>, n_actions: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("counterfactual dataset"));
        }
        let normalizer = Normalizer::fit_rows(records.iter().map(|r| r.features.as_slice()))?;
        let dim = normalizer.dim().max(1);
        let mut points = vec![Vec::new(); n_actions];
        let mut ids = vec![Vec::new(); n_actions];
        let mut max_cost = vec![0.0f64; n_actions];
        for (i, r) in records.iter().enumerate() {
            if r.action >= n_actions {
                return Err(Error::ActionOutOfRange { action: r.action, n_actions });
            }
            if normalizer.dim() == 0 {
                points[r.action].push(0.0);
            } else {
                points[r.action].extend(normalizer.apply(&r.features));
            }
            ids[r.action].push(i);
            max_cost[r.action] = max_cost[r.action].max(r.cost);
        }
        let trees = points
            .into_iter()
            .zip(ids)
            .map(|(p, id)| (!id.is_empty()).then(|| KdTree::new(dim, p, id)))
            .collect();

        let mut by_user: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if let Some(u) = r.user_id {
                by_user.entry(u).or_default().push(i);
            }
        }
        let mut successor = vec![None; records.len()];
        let mut horizon = 1;
        for idx in by_user.values_mut() {
            idx.sort_by_key(|&i| records[i].time);
            horizon = horizon.max(idx.len());
            for w in idx.windows(2) {
                successor[w[0]] = Some(w[1]);
            }
        }
        Ok(Self { records, successor, normalizer, trees, max_cost, horizon })
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    /// Index of the record answering `(state, action)`.
    pub fn nearest(&self, state: &[f64], action: usize) -> Result<usize> {
        self.check_action(action)?;
        check_dim(&self.normalizer, state)?;
        let tree = self.trees[action].as_ref().ok_or(Error::UncoveredAction(action))?;
        if self.normalizer.dim() == 0 {
            return Ok(tree.record.iter().copied().min().unwrap_or(0));
        }
        Ok(tree.nearest(&self.normalizer.apply(state)))
    }
}

impl Environment for CounterfactualEnv {
    fn n_actions(&self) -> usize {
        self.trees.len()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn max_cost(&self, action: usize) -> f64 {
        self.max_cost.get(action).copied().unwrap_or(0.0)
    }

    fn respond(&self, state: &UserState, action: usize, _rng: &mut StreamRng) -> Result<Response> {
        let i = self.nearest(&state.features, action)?;
        let r = &self.records[i];
        let next_features = match self.successor[i] {
            Some(j) => self.records[j].features.clone(),
            None => state.features.clone(),
        };
        Ok(Response { reward: r.reward, cost: r.cost, next_features })
    }

    fn expected_response(&self, state: &UserState, action: usize) -> Result<(f64, f64)> {
        let r = &self.records[self.nearest(&state.features, action)?];
        Ok((r.reward, r.cost))
    }
}

/// Replays each logged user's own state sequence and prices every
/// `(state, action)` through a [`CounterfactualEnv`]. States therefore do not
/// depend on the policy.
#[derive(Clone, Debug)]
pub struct LoggedEnv {
    inner: CounterfactualEnv,
    states: BTreeMap<u64, Vec<Vec<f64>>>,
}

impl LoggedEnv {
    pub fn new(records: Vec<InteractionRecord>, n_actions: usize) -> Result<Self> {
        let inner = CounterfactualEnv::new(records, n_actions)?;
        let mut rows: BTreeMap<u64, Vec<(i64, usize)>> = BTreeMap::new();
        for (i, r) in inner.records.iter().enumerate() {
            if let Some(u) = r.user_id {
                rows.entry(u).or_default().push((r.time, i));
            }
        }
        if rows.is_empty() {
            return Err(Error::Empty("logged records with user ids"));
        }
        let states = rows
            .into_iter()
            .map(|(u, mut v)| {
                v.sort_by_key(|&(t, _)| t);
                (u, v.into_iter().map(|(_, i)| inner.records[i].features.clone()).collect())
            })
            .collect();
        Ok(Self { inner, states })
    }

    /// Round-0 state of every logged user, ordered by user id.
    pub fn population(&self) -> Vec<UserState> {
        self.states
            .iter()
            .map(|(&user_id, s)| UserState { user_id, round: 0, features: s[0].clone() })
            .collect()
    }

    pub fn inner(&self) -> &CounterfactualEnv {
        &self.inner
    }
}

impl Environment for LoggedEnv {
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn max_cost(&self, action: usize) -> f64 {
        self.inner.max_cost(action)
    }

    fn respond(&self, state: &UserState, action: usize, rng: &mut StreamRng) -> Result<Response> {
        let mut resp = self.inner.respond(state, action, rng)?;
        if let Some(seq) = self.states.get(&state.user_id) {
            resp.next_features = seq.get(state.round + 1).unwrap_or(&state.features).clone();
        }
        Ok(resp)
    }

    fn expected_response(&self, state: &UserState, action: usize) -> Result<(f64, f64)> {
        self.inner.expected_response(state, action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn rec(features: Vec<f64>, action: usize, reward: f64, cost: f64) -> InteractionRecord {
        InteractionRecord { user_id: Some(0), time: 0, features, action, cost, reward }
    }

    fn brute(data: &[InteractionRecord], q: &[f64], action: usize) -> Option<usize> {
        let norm = Normalizer::fit_rows(data.iter().map(|r| r.features.as_slice())).unwrap();
        let q = norm.apply(q);
        let mut best: Option<(f64, usize)> = None;
        for (i, r) in data.iter().enumerate() {
            if r.action != action {
                continue;
            }
            let p = norm.apply(&r.features);
            let d: f64 = q.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum();
            match best {
                Some((bd, _)) if bd <= d => {}
                _ => best = Some((d, i)),
            }
        }
        best.map(|b| b.1)
    }

    #[test]
    fn exact_match_returns_that_record() {
        let data = vec![
            rec(vec![0.0, 1.0], 1, 5.0, 2.0),
            rec(vec![3.0, -1.0], 1, 7.0, 3.0),
            rec(vec![3.0, -1.0], 0, 1.0, 0.0),
        ];
        assert_eq!(counterfactual(&data, &[3.0, -1.0], 1).unwrap(), (7.0, 3.0));
        let env = CounterfactualEnv::new(data, 2).unwrap();
        let s = UserState { user_id: 0, round: 0, features: vec![3.0, -1.0] };
        assert_eq!(env.expected_response(&s, 1).unwrap(), (7.0, 3.0));
    }

    #[test]
    fn single_record_answers_everything() {
        let data = vec![rec(vec![1.0, 2.0, 3.0], 2, 4.5, 1.5)];
        assert_eq!(counterfactual(&data, &[-9.0, 0.0, 9.0], 2).unwrap(), (4.5, 1.5));
    }

    #[test]
    fn uncovered_action_is_explicit() {
        let data = vec![rec(vec![1.0], 0, 1.0, 0.0)];
        assert!(matches!(counterfactual(&data, &[1.0], 3), Err(Error::UncoveredAction(3))));
        let env = CounterfactualEnv::new(data, 4).unwrap();
        assert!(matches!(env.nearest(&[1.0], 3), Err(Error::UncoveredAction(3))));
        assert!(matches!(env.nearest(&[1.0], 4), Err(Error::ActionOutOfRange { .. })));
    }

    #[test]
    fn five_record_midpoint_matches_scan() {
        let data = vec![
            rec(vec![0.0, 0.0], 1, 1.0, 1.0),
            rec(vec![4.0, 0.0], 1, 2.0, 1.0),
            rec(vec![0.0, 4.0], 1, 3.0, 1.0),
            rec(vec![4.0, 4.0], 1, 4.0, 1.0),
            rec(vec![2.5, 1.5], 1, 5.0, 1.0),
        ];
        let q = [2.0, 2.0];
        let want = brute(&data, &q, 1).unwrap();
        assert_eq!(want, 4);
        assert_eq!(counterfactual(&data, &q, 1).unwrap(), (5.0, 1.0));
        assert_eq!(CounterfactualEnv::new(data, 2).unwrap().nearest(&q, 1).unwrap(), want);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let data: Vec<_> = (0..40).map(|i| rec(vec![(i % 2) as f64 * 2.0 - 1.0], 0, i as f64, 0.0)).collect();
        let env = CounterfactualEnv::new(data, 1).unwrap();
        assert_eq!(env.nearest(&[0.0], 0).unwrap(), 0);
        assert_eq!(env.nearest(&[1.0], 0).unwrap(), 1);
    }

    #[test]
    fn logged_env_replays_user_states() {
        let mut data = Vec::new();
        for u in 0..3u64 {
            for t in 0..4i64 {
                data.push(InteractionRecord {
                    user_id: Some(u),
                    time: t,
                    features: vec![u as f64, t as f64],
                    action: (u as usize + t as usize) % 2,
                    cost: 1.0,
                    reward: 2.0,
                });
            }
        }
        let env = LoggedEnv::new(data, 2).unwrap();
        assert_eq!(env.horizon(), 4);
        let pop = env.population();
        assert_eq!(pop.len(), 3);
        let mut s = pop[2].clone();
        let mut r = rng::stream(0);
        for t in 0..3 {
            let resp = env.respond(&s, 0, &mut r).unwrap();
            assert_eq!(resp.next_features, vec![2.0, (t + 1) as f64]);
            s.features = resp.next_features;
            s.round += 1;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn tree_agrees_with_exhaustive_scan(n in 1usize..1000, dim in 1usize..5, seed in any::<u64>(), grid in any::<bool>()) {
            let mut r = rng::stream(seed);
            let draw = |r: &mut StreamRng| if grid { r.random_range(0..4) as f64 } else { r.random::<f64>() * 10.0 - 5.0 };
            let data: Vec<_> = (0..n)
                .map(|_| {
                    let f = (0..dim).map(|_| draw(&mut r)).collect();
                    rec(f, r.random_range(0..3), r.random::<f64>(), r.random::<f64>())
                })
                .collect();
            let env = CounterfactualEnv::new(data.clone(), 3).unwrap();
            for _ in 0..20 {
                let q: Vec<f64> = (0..dim).map(|_| draw(&mut r)).collect();
                for a in 0..3 {
                    match brute(&data, &q, a) {
                        Some(want) => prop_assert_eq!(env.nearest(&q, a).unwrap(), want),
                        None => prop_assert!(env.nearest(&q, a).is_err()),
                    }
                }
            }
        }
    }
}
