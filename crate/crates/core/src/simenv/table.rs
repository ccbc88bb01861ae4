//! Deterministic lookup-table environment for small hand-built fixtures.

use super::{Environment, Response, UserState};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Every user has a fixed `(reward, cost)` per action, identical in every
/// round. User `i` is represented by the one-feature state `[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TableEnv {
    /// `outcomes[user][action] = (reward, cost)`.
    outcomes: Vec<Vec<(f64, f64)>>,
    horizon: usize,
}

impl TableEnv {
    pub fn new(outcomes: Vec<Vec<(f64, f64)>>, horizon: usize) -> Result<Self> {
        let n_actions = outcomes.first().map_or(0, Vec::len);
        if outcomes.is_empty() || n_actions == 0 || horizon == 0 {
            return Err(Error::Config("table env needs users, actions and rounds".into()));
        }
        if outcomes.iter().any(|row| row.len() != n_actions) {
            return Err(Error::Shape("every user needs one outcome per action".into()));
        }
        if outcomes.iter().flatten().any(|&(r, c)| !(r >= 0.0 && c >= 0.0)) {
            return Err(Error::Config("table outcomes must be non-negative".into()));
        }
        Ok(Self { outcomes, horizon })
    }

    pub fn population(&self) -> Vec<UserState> {
        (0..self.outcomes.len())
            .map(|i| UserState { user_id: i as u64, round: 0, features: vec![i as f64] })
            .collect()
    }

    fn lookup(&self, state: &UserState, action: usize) -> Result<(f64, f64)> {
        self.check_action(action)?;
        self.outcomes
            .get(state.user_id as usize)
            .map(|row| row[action])
            .ok_or_else(|| Error::Config(format!("unknown user id {}", state.user_id)))
    }
}

impl Environment for TableEnv {
    fn n_actions(&self) -> usize {
        self.outcomes[0].len()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn max_cost(&self, action: usize) -> f64 {
        self.outcomes.iter().filter_map(|row| row.get(action)).map(|o| o.1).fold(0.0, f64::max)
    }

    fn respond(&self, state: &UserState, action: usize, _rng: &mut StreamRng) -> Result<Response> {
        let (reward, cost) = self.lookup(state, action)?;
        Ok(Response { reward, cost, next_features: state.features.clone() })
    }

    fn expected_response(&self, state: &UserState, action: usize) -> Result<(f64, f64)> {
        self.lookup(state, action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_lookup_is_exact() {
        let env = TableEnv::new(vec![vec![(1.0, 0.0), (10.0, 4.0)], vec![(2.0, 0.0), (3.0, 4.0)]], 1).unwrap();
        let pop = env.population();
        assert_eq!(env.expected_response(&pop[0], 1).unwrap(), (10.0, 4.0));
        assert_eq!(env.expected_response(&pop[1], 0).unwrap(), (2.0, 0.0));
        assert_eq!(env.max_cost(1), 4.0);
        assert_eq!(env.c_max(2), 8.0);
        assert!(env.expected_response(&pop[0], 2).is_err());
        assert!(TableEnv::new(vec![vec![(1.0, 0.0)], vec![]], 1).is_err());
    }
}
