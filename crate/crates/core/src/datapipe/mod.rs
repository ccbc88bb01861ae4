//! Logged interactions to λ-tagged training trajectories.

mod io;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

pub use io::{read_dataset, read_trajectories, write_dataset, write_trajectories, DATASET_VERSION};

/// Standard deviations below this are replaced by 1.
pub const SIGMA_GUARD: f64 = 1e-8;

/// One logged decision.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionRecord {
    /// `None` when the log lacks a user id; see [`GroupKey::Feature`].
    pub user_id: Option<u64>,
    pub time: i64,
    pub features: Vec<f64>,
    pub action: usize,
    pub cost: f64,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub cost: f64,
    pub rtg: f64,
    pub ctg: f64,
    /// Position of the step in its trajectory.
    pub t: usize,
}

/// A user's chronologically ordered steps. λ-augmented copies share the
/// same step buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub user_id: u64,
    pub steps: Arc<[TrajectoryStep]>,
    pub lambda: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipeConfig {
    pub gamma: f64,
    pub lambda_copies: usize,
    pub train_fraction: f64,
    /// Feature column used to group records that carry no user id.
    pub key_column: Option<usize>,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PipeConfig {
    fn default() -> Self {
        Self { gamma: 1.0, lambda_copies: 10, train_fraction: 0.8, key_column: None, seed: 0 }
    }
}

impl PipeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma != 1.0 {
            return Err(Error::Config("pipe: gamma is fixed at 1.0".into()));
        }
        if self.lambda_copies == 0 {
            return Err(Error::Config("pipe: lambda_copies must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config("pipe: train_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum GroupKey {
    User(u64),
    /// Bit pattern of the designated stable feature.
    Feature(u64),
}

/// Group records by user and sort each group by time.
///
/// Records without a user id are grouped on `features[key_column]`. Ties in
/// time keep input order. Trajectories come out ordered by key.
pub fn build_trajectories(
    records: &[InteractionRecord],
    key_column: Option<usize>,
) -> Result<Vec<Trajectory>> {
    if records.is_empty() {
        return Err(Error::Empty("records"));
    }
    let mut groups: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (index, rec) in records.iter().enumerate() {
        let invalid = |reason: &str| Error::InvalidRecord { index, reason: reason.into() };
        if !rec.features.iter().all(|f| f.is_finite()) {
            return Err(invalid("non-finite feature"));
        }
        if !(rec.cost >= 0.0 && rec.reward >= 0.0 && rec.cost.is_finite() && rec.reward.is_finite())
        {
            return Err(invalid("cost and reward must be finite and non-negative"));
        }
        let key = match (rec.user_id, key_column) {
            (Some(id), _) => GroupKey::User(id),
            (None, Some(col)) => match rec.features.get(col) {
                Some(v) => GroupKey::Feature(v.to_bits()),
                None => return Err(invalid("key column beyond feature vector")),
            },
            (None, None) => return Err(invalid("missing user id and no key column configured")),
        };
        groups.entry(key).or_default().push(index);
    }
    Ok(groups
        .into_iter()
        .map(|(key, mut idx)| {
            idx.sort_by_key(|&i| records[i].time);
            let steps: Vec<TrajectoryStep> = idx
                .iter()
                .enumerate()
                .map(|(t, &i)| {
                    let r = &records[i];
                    TrajectoryStep {
                        state: r.features.clone(),
                        action: r.action,
                        reward: r.reward,
                        cost: r.cost,
                        rtg: 0.0,
                        ctg: 0.0,
                        t,
                    }
                })
                .collect();
            let user_id = match key {
                GroupKey::User(id) | GroupKey::Feature(id) => id,
            };
            Trajectory { user_id, steps: steps.into(), lambda: None }
        })
        .collect())
}

/// Fill return-to-go and cost-to-go: `rtg_t = r_t + gamma * rtg_{t+1}`.
pub fn annotate_to_go(traj: &Trajectory, gamma: f64) -> Trajectory {
    let mut steps: Vec<TrajectoryStep> = traj.steps.to_vec();
    let (mut rtg, mut ctg) = (0.0f64, 0.0f64);
    for s in steps.iter_mut().rev() {
        rtg = s.reward + gamma * rtg;
        ctg = s.cost + gamma * ctg;
        s.rtg = rtg;
        s.ctg = ctg;
    }
    Trajectory { user_id: traj.user_id, steps: steps.into(), lambda: traj.lambda }
}

/// Draw λ ~ Uniform(0, 1), excluding 0.
pub fn sample_lambda(rng: &mut StreamRng) -> f64 {
    loop {
        let l: f64 = rng.random();
        if l > 0.0 {
            return l;
        }
    }
}

/// `copies` λ-tagged copies of every trajectory, in input order.
pub fn augment_lambda(
    trajectories: &[Trajectory],
    copies: usize,
    rng: &mut StreamRng,
) -> Result<Vec<Trajectory>> {
    if copies == 0 {
        return Err(Error::Config("lambda_copies must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(trajectories.len() * copies);
    for traj in trajectories {
        for _ in 0..copies {
            out.push(Trajectory {
                user_id: traj.user_id,
                steps: Arc::clone(&traj.steps),
                lambda: Some(sample_lambda(rng)),
            });
        }
    }
    Ok(out)
}

/// Per-dimension state standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self { mu: vec![0.0; dim], sigma: vec![1.0; dim] }
    }

    /// Two-pass mean / population-variance fit over `rows`.
    pub fn fit_rows<'a, I>(rows: I) -> Result<Self>
    where
        I: Iterator<Item = &'a [f64]> + Clone,
    {
        let mut n = 0usize;
        let mut mu: Vec<f64> = Vec::new();
        for row in rows.clone() {
            if n == 0 {
                mu = vec![0.0; row.len()];
            } else if row.len() != mu.len() {
                return Err(Error::Shape(format!(
                    "state of dimension {} among states of dimension {}",
                    row.len(),
                    mu.len()
                )));
            }
            for (m, x) in mu.iter_mut().zip(row) {
                *m += x;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Empty("states to fit a normalizer"));
        }
        mu.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; mu.len()];
        for row in rows {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mu) {
                *v += (x - m) * (x - m);
            }
        }
        let sigma = var
            .into_iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s < SIGMA_GUARD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn apply(&self, state: &[f64]) -> Vec<f64> {
        state.iter().zip(&self.mu).zip(&self.sigma).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn apply_into(&self, state: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(state.iter().zip(&self.mu).zip(&self.sigma).map(|((x, m), s)| (x - m) / s));
    }
}

pub fn fit_normalizer(trajectories: &[Trajectory]) -> Result<Normalizer> {
    Normalizer::fit_rows(trajectories.iter().flat_map(|t| t.steps.iter().map(|s| s.state.as_slice())))
}

pub fn apply_normalizer(normalizer: &Normalizer, state: &[f64]) -> Vec<f64> {
    normalizer.apply(state)
}

/// Seeded split of user ids into (train, test) sets.
pub fn split_user_ids(ids: &[u64], train_fraction: f64, seed: u64) -> (Vec<u64>, Vec<u64>) {
    let mut shuffled = ids.to_vec();
    shuffled.sort_unstable();
    shuffled.dedup();
    shuffled.shuffle(&mut rng::stream(rng::substream(seed, "split")));
    let n_train = ((shuffled.len() as f64) * train_fraction).round() as usize;
    let mut test = shuffled.split_off(n_train.min(shuffled.len()));
    shuffled.sort_unstable();
    test.sort_unstable();
    (shuffled, test)
}

/// Seeded 80/20-style split by user.
pub fn train_test_split(
    trajectories: Vec<Trajectory>,
    train_fraction: f64,
    seed: u64,
) -> (Vec<Trajectory>, Vec<Trajectory>) {
    let ids: Vec<u64> = trajectories.iter().map(|t| t.user_id).collect();
    let (train_ids, _) = split_user_ids(&ids, train_fraction, seed);
    trajectories.into_iter().partition(|t| train_ids.binary_search(&t.user_id).is_ok())
}

/// Build, annotate, split and λ-augment a log. Returns `(train, test)`; only
/// the training part is augmented.
pub fn prepare(
    records: &[InteractionRecord],
    config: &PipeConfig,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    config.validate()?;
    let trajs: Vec<Trajectory> = build_trajectories(records, config.key_column)?
        .iter()
        .map(|t| annotate_to_go(t, config.gamma))
        .collect();
    let (train, test) = train_test_split(trajs, config.train_fraction, config.seed);
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let mut rng = rng::stream(rng::substream(config.seed, "lambda"));
    let train = augment_lambda(&train, config.lambda_copies, &mut rng)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn rec(user: u64, time: i64, reward: f64, cost: f64) -> InteractionRecord {
        InteractionRecord { user_id: Some(user), time, features: vec![time as f64, 1.0], action: 1, cost, reward }
    }

    #[test]
    fn single_user_steps_are_time_sorted() {
        let recs = vec![rec(4, 2, 3.0, 1.0), rec(4, 0, 1.0, 0.0), rec(4, 1, 2.0, 1.0)];
        let trajs = build_trajectories(&recs, None).unwrap();
        assert_eq!(trajs.len(), 1);
        let times: Vec<f64> = trajs[0].steps.iter().map(|s| s.state[0]).collect();
        assert_eq!(times, vec![0.0, 1.0, 2.0]);
        assert_eq!(trajs[0].steps.iter().map(|s| s.t).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn interleaved_users_are_partitioned() {
        let recs = vec![rec(2, 0, 1.0, 0.0), rec(1, 0, 1.0, 0.0), rec(2, 1, 1.0, 0.0), rec(1, 1, 5.0, 0.0)];
        let trajs = build_trajectories(&recs, None).unwrap();
        assert_eq!(trajs.iter().map(|t| t.user_id).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(trajs[0].steps[1].reward, 5.0);
        assert!(trajs.iter().all(|t| t.len() == 2));
    }

    #[test]
    fn time_ties_keep_input_order() {
        let mut a = rec(1, 5, 1.0, 0.0);
        a.action = 3;
        let mut b = rec(1, 5, 1.0, 0.0);
        b.action = 2;
        let trajs = build_trajectories(&[a, b], None).unwrap();
        assert_eq!(trajs[0].steps[0].action, 3);
    }

    #[test]
    fn missing_user_id_falls_back_to_key_column() {
        let mut recs = vec![rec(0, 1, 1.0, 0.0), rec(0, 0, 1.0, 0.0), rec(0, 2, 1.0, 0.0)];
        for (r, key) in recs.iter_mut().zip([7.0, 7.0, 9.0]) {
            r.user_id = None;
            r.features[1] = key;
        }
        assert!(build_trajectories(&recs, None).is_err());
        let trajs = build_trajectories(&recs, Some(1)).unwrap();
        assert_eq!(trajs.len(), 2);
        assert_eq!(trajs.iter().map(|t| t.len()).sum::<usize>(), 3);
    }

    #[test]
    fn non_finite_features_report_the_index() {
        let mut recs = vec![rec(1, 0, 1.0, 0.0), rec(1, 1, 1.0, 0.0)];
        recs[1].features[0] = f64::NAN;
        match build_trajectories(&recs, None) {
            Err(Error::InvalidRecord { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
        assert!(build_trajectories(&[], None).is_err());
    }

    #[test]
    fn suffix_sums_of_small_trajectory() {
        let recs = vec![rec(1, 0, 1.0, 0.0), rec(1, 1, 2.0, 0.0), rec(1, 2, 3.0, 0.0)];
        let traj = annotate_to_go(&build_trajectories(&recs, None).unwrap()[0], 1.0);
        assert_eq!(traj.steps.iter().map(|s| s.rtg).collect::<Vec<_>>(), vec![6.0, 5.0, 3.0]);
        assert!(traj.steps.iter().all(|s| s.ctg == 0.0));
    }

    fn oracle_suffix(xs: &[f64]) -> Vec<f64> {
        (0..xs.len()).map(|t| xs[t..].iter().rev().fold(0.0, |acc, x| acc + x)).collect()
    }

    #[test]
    fn suffix_sums_match_reverse_accumulation_oracle() {
        let mut r = rng::stream(11);
        for _ in 0..100 {
            let recs: Vec<_> =
                (0..10).map(|t| rec(1, t, r.random::<f64>() * 10.0, r.random::<f64>() * 3.0)).collect();
            let traj = annotate_to_go(&build_trajectories(&recs, None).unwrap()[0], 1.0);
            let rewards: Vec<f64> = recs.iter().map(|x| x.reward).collect();
            let costs: Vec<f64> = recs.iter().map(|x| x.cost).collect();
            for (s, (er, ec)) in traj.steps.iter().zip(oracle_suffix(&rewards).into_iter().zip(oracle_suffix(&costs))) {
                assert!((s.rtg - er).abs() <= 1e-12 * er.abs().max(1.0));
                assert!((s.ctg - ec).abs() <= 1e-12 * ec.abs().max(1.0));
            }
        }
    }

    #[test]
    fn augmentation_multiplies_and_shares_steps() {
        let recs: Vec<_> = (0..100).flat_map(|u| (0..3).map(move |t| rec(u, t, 1.0, 0.5))).collect();
        let trajs = build_trajectories(&recs, None).unwrap();
        let mut r = rng::stream(3);
        let aug = augment_lambda(&trajs, 10, &mut r).unwrap();
        assert_eq!(aug.len(), 1000);
        assert!(Arc::ptr_eq(&aug[0].steps, &trajs[0].steps));
        assert!(aug.iter().all(|t| matches!(t.lambda, Some(l) if l > 0.0 && l < 1.0)));
        let once = augment_lambda(&trajs, 1, &mut r).unwrap();
        assert_eq!(once.len(), trajs.len());
        assert!(augment_lambda(&trajs, 0, &mut r).is_err());
    }

    #[test]
    fn sampled_lambdas_are_centered() {
        let mut r = rng::stream(5);
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_lambda(&mut r)).collect();
        assert!(xs.iter().all(|&l| l > 0.0 && l < 1.0));
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.05);
    }

    #[test]
    fn constant_column_gets_guarded_sigma() {
        let rows = [vec![3.0, 1.0], vec![3.0, -1.0]];
        let n = Normalizer::fit_rows(rows.iter().map(|r| r.as_slice())).unwrap();
        assert_eq!(n.sigma[0], 1.0);
        assert_eq!(n.apply(&rows[0])[0], 0.0);
        assert_eq!(n.apply(&rows[1])[0], 0.0);
        assert!((n.sigma[1] - 1.0).abs() < 1e-15);
        assert!(n.mu[1].abs() < 1e-15);
    }

    #[test]
    fn normalized_corpus_has_unit_moments() {
        let mut r = rng::stream(8);
        let rows: Vec<Vec<f64>> =
            (0..1000).map(|_| vec![r.random::<f64>() * 50.0 - 3.0, r.random::<f64>() * 0.01, 7.0 + r.random::<f64>()]).collect();
        let n = Normalizer::fit_rows(rows.iter().map(|r| r.as_slice())).unwrap();
        let z: Vec<Vec<f64>> = rows.iter().map(|r| n.apply(r)).collect();
        for d in 0..3 {
            let mean = z.iter().map(|r| r[d]).sum::<f64>() / 1000.0;
            let var = z.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / 1000.0;
            assert!(mean.abs() < 1e-6);
            assert!((var.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let ids: Vec<u64> = (0..100).collect();
        let (a, b) = split_user_ids(&ids, 0.8, 4);
        assert_eq!((a.len(), b.len()), (80, 20));
        assert!(a.iter().all(|x| !b.contains(x)));
        assert_eq!(split_user_ids(&ids, 0.8, 4), (a, b));
    }

    proptest! {
        #[test]
        fn to_go_invariants(rewards in proptest::collection::vec(0.0f64..100.0, 1..12),
                            costs in proptest::collection::vec(0.0f64..10.0, 12)) {
            let recs: Vec<_> = rewards.iter().enumerate()
                .map(|(t, &r)| rec(1, t as i64, r, costs[t])).collect();
            let traj = annotate_to_go(&build_trajectories(&recs, None).unwrap()[0], 1.0);
            let total_r = traj.total_reward();
            let total_c = traj.total_cost();
            prop_assert!((traj.steps[0].rtg - total_r).abs() <= 1e-9 * total_r.max(1.0));
            prop_assert!((traj.steps[0].ctg - total_c).abs() <= 1e-9 * total_c.max(1.0));
            prop_assert!(traj.steps.windows(2).all(|w| w[0].rtg >= w[1].rtg && w[0].ctg >= w[1].ctg));
        }
    }
}
