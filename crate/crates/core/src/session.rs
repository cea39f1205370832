//! Live assignment sessions with an append-only event journal.
//!
//! A session owns the committed state plus the latest recommendation issued
//! for each upcoming ordinal. Every mutation emits a [`JournalEvent`] carrying
//! the SHA-256 of the resulting state, so replaying the journal from genesis
//! can verify that it reconstructs the live session at every sequence number.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::batch::{assign_batch_approx, Batch, BatchItem};
use crate::data::Direction;
use crate::error::{Error, Result};
use crate::lap::AgentPool;
use crate::mechanisms::{recommend, DynamicState, Mechanism, MechanismConfig, MechanismContext, Recommendation};
use crate::predictor::{train_ensemble, Ensemble, EnsembleConfig};
use crate::stochastic::{HistoricalPool, QuantileTable};

pub const SESSION_SCHEMA: &str = "v1";

/// Predictor training settings for sessions using the predicted mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub runs: usize,
    /// Seed for training; defaults to the mechanism seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Everything needed to open a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub agents: Vec<String>,
    pub capacities: Vec<u32>,
    /// Declared number of arrivals.
    pub n: usize,
    /// Historical vectors, one entry per agent, in the session's direction.
    pub pool: Vec<Vec<f64>>,
    pub mechanism: MechanismConfig,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictor: Option<PredictorSpec>,
}

impl SessionSpec {
    pub fn new(agents: Vec<String>, capacities: Vec<u32>, n: usize, pool: Vec<Vec<f64>>, mechanism: MechanismConfig) -> Self {
        Self {
            agents,
            capacities,
            n,
            pool,
            mechanism,
            direction: Direction::Min,
            predictor: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Genesis,
    Recommend,
    Commit,
}

/// One journal line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub payload: Value,
    /// Milliseconds since the Unix epoch. Not part of the state hash.
    pub wall_clock: u64,
    pub state_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GenesisPayload {
    session_id: String,
    spec: SessionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RecommendPayload {
    ordinal: usize,
    vectors: Vec<Vec<f64>>,
    #[serde(default)]
    exclude: Vec<String>,
    recommendations: Vec<Recommendation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CommitPayload {
    ordinal: usize,
    item_id: String,
    agent_id: String,
    #[serde(default)]
    recommended_agent: Option<String>,
}

/// One committed arrival with the recommendation that preceded it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub ordinal: usize,
    pub item_id: String,
    pub agent_id: String,
    pub recommended_agent: Option<String>,
    #[serde(rename = "override")]
    pub is_override: bool,
    pub recommendation: Option<Recommendation>,
}

/// Read-only snapshot for clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub schema: String,
    pub id: String,
    pub n: usize,
    pub mechanism: MechanismConfig,
    pub direction: Direction,
    pub agents: Vec<String>,
    pub capacities: Vec<u32>,
    pub remaining: Vec<u32>,
    pub committed: usize,
    pub next_ordinal: usize,
    pub closed: bool,
    pub seq: u64,
    pub state_hash: String,
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    spec: SessionSpec,
    pool: HistoricalPool,
    quantiles: QuantileTable,
    ensemble: Option<Ensemble>,
    state: DynamicState,
    pending: BTreeMap<usize, Recommendation>,
    seq: u64,
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

impl Session {
    /// Validates the spec, builds the session and returns its genesis event.
    pub fn create(id: String, spec: SessionSpec) -> Result<(Self, JournalEvent)> {
        let session = Self::build(id, spec)?;
        let payload = GenesisPayload {
            session_id: session.id.clone(),
            spec: session.spec.clone(),
        };
        let event = session.event(EventKind::Genesis, serde_json::to_value(payload)?);
        Ok((session, event))
    }

    fn build(id: String, spec: SessionSpec) -> Result<Self> {
        if id.is_empty() {
            return Err(Error::invalid("session id is empty"));
        }
        spec.mechanism.validate()?;
        if spec.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        let agents = AgentPool::new(spec.agents.clone(), spec.capacities.clone())?;
        let state = DynamicState::new(agents.clone(), spec.n)?;
        let vectors = spec
            .pool
            .iter()
            .map(|v| v.iter().map(|&x| spec.direction.to_cost(x)).collect())
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let pool = HistoricalPool::new(spec.agents.clone(), vectors)?;
        let quantiles = QuantileTable::from_pool(&pool);
        let ensemble = match (spec.mechanism.mechanism, spec.predictor) {
            (Mechanism::Predicted, Some(p)) => {
                let config = EnsembleConfig::new(p.runs, spec.n, p.seed.unwrap_or(spec.mechanism.seed));
                Some(train_ensemble(&pool, &agents, &config)?)
            }
            (Mechanism::Predicted, None) => {
                return Err(Error::invalid("predicted mechanism needs a `predictor` training block"));
            }
            _ => None,
        };
        Ok(Self {
            id,
            spec,
            pool,
            quantiles,
            ensemble,
            state,
            pending: BTreeMap::new(),
            seq: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn spec(&self) -> &SessionSpec {
        &self.spec
    }

    pub fn state(&self) -> &DynamicState {
        &self.state
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn pending_for(&self, ordinal: usize) -> Option<&Recommendation> {
        self.pending.get(&ordinal)
    }

    /// SHA-256 over the canonical JSON of the committed state and the pending
    /// recommendations.
    pub fn state_hash(&self) -> String {
        let bytes = serde_json::to_vec(&(&self.state, &self.pending)).expect("state serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            schema: SESSION_SCHEMA.to_string(),
            id: self.id.clone(),
            n: self.spec.n,
            mechanism: self.spec.mechanism,
            direction: self.spec.direction,
            agents: self.spec.agents.clone(),
            capacities: self.spec.capacities.clone(),
            remaining: self.state.remaining().to_vec(),
            committed: self.state.history().len(),
            next_ordinal: self.state.next_ordinal(),
            closed: self.state.is_closed(),
            seq: self.seq,
            state_hash: self.state_hash(),
        }
    }

    pub fn trace(&self) -> Vec<TraceEntry> {
        self.state
            .history()
            .iter()
            .map(|c| {
                let recommended = c.recommendation.as_ref().map(|r| r.chosen_agent.clone());
                TraceEntry {
                    ordinal: c.ordinal,
                    item_id: c.item_id.clone(),
                    agent_id: c.agent_id.clone(),
                    is_override: recommended.as_ref().is_some_and(|r| *r != c.agent_id),
                    recommended_agent: recommended,
                    recommendation: c.recommendation.clone(),
                }
            })
            .collect()
    }

    fn event(&self, kind: EventKind, payload: Value) -> JournalEvent {
        JournalEvent {
            seq: self.seq,
            kind,
            payload,
            wall_clock: now_millis(),
            state_hash: self.state_hash(),
        }
    }

    /// Recommends agents for the next `vectors.len()` arrivals, all observed
    /// at once. Nothing is committed. Unless `what_if` is set, the answers
    /// are recorded as pending and journaled. `exclude` removes agents from
    /// consideration for this call only.
    pub fn recommend(
        &mut self,
        vectors: &[Vec<f64>],
        what_if: bool,
        exclude: &[String],
    ) -> Result<(Vec<Recommendation>, Option<JournalEvent>)> {
        let recs = self.what_if(vectors, exclude)?;
        if what_if {
            return Ok((recs, None));
        }
        let payload = RecommendPayload {
            ordinal: self.state.next_ordinal(),
            vectors: vectors.to_vec(),
            exclude: exclude.to_vec(),
            recommendations: recs.clone(),
        };
        self.apply_recommend(&payload);
        let event = self.event(EventKind::Recommend, serde_json::to_value(payload)?);
        Ok((recs, Some(event)))
    }

    /// The recommendations [`Session::recommend`] would return, without
    /// touching the session.
    pub fn what_if(&self, vectors: &[Vec<f64>], exclude: &[String]) -> Result<Vec<Recommendation>> {
        if vectors.is_empty() {
            return Err(Error::invalid("no arrival vectors given"));
        }
        if self.state.is_closed() {
            return Err(Error::Conflict("session is closed".into()));
        }
        let excluded = exclude
            .iter()
            .map(|id| self.state.agents().index_of(id))
            .collect::<Result<Vec<_>>>()?;
        let mut scratch = self.state.without_agents(&excluded)?;
        let left = scratch.horizon() - scratch.history().len();
        if vectors.len() > left {
            return Err(Error::invalid(format!(
                "{} arrivals given but only {left} can still be assigned",
                vectors.len()
            )));
        }
        let costs = vectors
            .iter()
            .map(|v| {
                if v.len() != self.spec.agents.len() {
                    return Err(Error::DimensionMismatch {
                        expected: self.spec.agents.len(),
                        actual: v.len(),
                    });
                }
                v.iter().map(|&x| self.spec.direction.to_cost(x)).collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let config = &self.spec.mechanism;
        if costs.len() > 1 && config.mechanism.is_simulation() {
            let batch = Batch {
                group: 0,
                items: costs
                    .into_iter()
                    .enumerate()
                    .map(|(k, c)| BatchItem {
                        item_id: k.to_string(),
                        costs: c,
                    })
                    .collect(),
            };
            return assign_batch_approx(&mut scratch, &batch, &self.pool, config);
        }
        let ctx = MechanismContext {
            pool: &self.pool,
            quantiles: &self.quantiles,
            ensemble: self.ensemble.as_ref(),
        };
        let mut out = Vec::with_capacity(costs.len());
        for c in &costs {
            let rec = recommend(&scratch, c, &ctx, config)?;
            if costs.len() > 1 {
                scratch.commit("", rec.chosen, None)?;
            }
            out.push(rec);
        }
        Ok(out)
    }

    fn apply_recommend(&mut self, payload: &RecommendPayload) {
        for (k, rec) in payload.recommendations.iter().enumerate() {
            self.pending.insert(payload.ordinal + k, rec.clone());
        }
        self.seq += 1;
    }

    /// Commits arrival `ordinal` to `agent_id`, which may differ from the
    /// pending recommendation. The ordinal must be the next one.
    pub fn commit(&mut self, ordinal: usize, agent_id: &str, item_id: Option<String>) -> Result<JournalEvent> {
        let payload = CommitPayload {
            ordinal,
            item_id: item_id.unwrap_or_else(|| ordinal.to_string()),
            agent_id: agent_id.to_string(),
            recommended_agent: self.pending.get(&ordinal).map(|r| r.chosen_agent.clone()),
        };
        self.apply_commit(&payload)?;
        Ok(self.event(EventKind::Commit, serde_json::to_value(payload)?))
    }

    fn apply_commit(&mut self, payload: &CommitPayload) -> Result<()> {
        if self.state.is_closed() {
            return Err(Error::Conflict("session is closed".into()));
        }
        let next = self.state.next_ordinal();
        if payload.ordinal != next {
            let what = if payload.ordinal < next { "already committed" } else { "out of sequence" };
            return Err(Error::Conflict(format!(
                "ordinal {} is {what}; the next ordinal is {next}",
                payload.ordinal
            )));
        }
        let agent = self.state.agents().index_of(&payload.agent_id)?;
        let rec = self.pending.get(&payload.ordinal).cloned();
        self.state.commit(payload.item_id.clone(), agent, rec)?;
        self.pending = self.pending.split_off(&(payload.ordinal + 1));
        self.seq += 1;
        Ok(())
    }
}

/// Rebuilds a session from its journal, checking sequence numbers and the
/// recorded state hash after every event.
pub fn replay_journal(events: &[JournalEvent]) -> Result<Session> {
    let genesis = events.first().ok_or_else(|| Error::Parse("journal is empty".into()))?;
    if genesis.kind != EventKind::Genesis {
        return Err(Error::Parse("journal does not start with a genesis event".into()));
    }
    let g: GenesisPayload = serde_json::from_value(genesis.payload.clone())?;
    let mut session = Session::build(g.session_id, g.spec)?;
    check_event(&session, genesis)?;
    for event in &events[1..] {
        match event.kind {
            EventKind::Genesis => return Err(Error::Parse(format!("second genesis event at seq {}", event.seq))),
            EventKind::Recommend => {
                let p: RecommendPayload = serde_json::from_value(event.payload.clone())?;
                if p.ordinal != session.state.next_ordinal() {
                    return Err(Error::Parse(format!("recommendation at seq {} has a stale ordinal", event.seq)));
                }
                session.apply_recommend(&p);
            }
            EventKind::Commit => {
                let p: CommitPayload = serde_json::from_value(event.payload.clone())?;
                session.apply_commit(&p)?;
            }
        }
        check_event(&session, event)?;
    }
    Ok(session)
}

fn check_event(session: &Session, event: &JournalEvent) -> Result<()> {
    if event.seq != session.seq {
        return Err(Error::Parse(format!(
            "journal sequence {} where {} was expected",
            event.seq, session.seq
        )));
    }
    let hash = session.state_hash();
    if hash != event.state_hash {
        return Err(Error::Parse(format!("state hash mismatch at seq {}", event.seq)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(mechanism: Mechanism) -> SessionSpec {
        SessionSpec::new(
            vec!["x".into(), "y".into()],
            vec![1, 2],
            3,
            vec![vec![0.2, 0.4], vec![0.6, 0.1], vec![0.3, 0.3]],
            MechanismConfig::new(mechanism, 5),
        )
    }

    #[test]
    fn minimal_session() {
        let s = SessionSpec::new(
            vec!["only".into()],
            vec![1],
            1,
            vec![vec![0.5]],
            MechanismConfig::new(Mechanism::Greedy, 0),
        );
        let (mut session, genesis) = Session::create("s1".into(), s).unwrap();
        assert_eq!(genesis.seq, 0);
        let (recs, _) = session.recommend(&[vec![0.9]], true, &[]).unwrap();
        assert_eq!(recs[0].chosen_agent, "only");
        session.commit(1, "only", None).unwrap();
        assert!(session.view().closed);
    }

    #[test]
    fn short_capacity_is_infeasible() {
        let mut s = spec(Mechanism::Greedy);
        s.n = 4;
        assert!(matches!(Session::create("s".into(), s), Err(Error::Infeasible(_))));
    }

    #[test]
    fn what_if_is_pure_and_repeatable() {
        let (mut session, _) = Session::create("s".into(), spec(Mechanism::MinRisk { m: 50 })).unwrap();
        let before = session.state_hash();
        let a = session.recommend(&[vec![0.5, 0.2]], true, &[]).unwrap();
        let b = session.recommend(&[vec![0.5, 0.2]], true, &["y".into()]).unwrap();
        let c = session.recommend(&[vec![0.5, 0.2]], true, &[]).unwrap();
        assert_eq!(a, c);
        assert!(a.1.is_none());
        assert_eq!(b.0[0].chosen_agent, "x");
        assert_eq!(session.state_hash(), before);
        assert_eq!(session.seq(), 0);
    }

    #[test]
    fn commit_rules() {
        let (mut session, _) = Session::create("s".into(), spec(Mechanism::Greedy)).unwrap();
        session.recommend(&[vec![0.1, 0.2]], false, &[]).unwrap();
        session.commit(1, "y", None).unwrap();
        assert!(session.trace()[0].is_override);
        assert!(matches!(session.commit(1, "x", None), Err(Error::Conflict(_))));
        assert!(matches!(session.commit(3, "x", None), Err(Error::Conflict(_))));
        session.commit(2, "x", None).unwrap();
        assert!(matches!(session.commit(3, "x", None), Err(Error::Infeasible(_))));
        session.commit(3, "y", None).unwrap();
        assert!(session.view().closed);
        assert!(session.recommend(&[vec![0.1, 0.2]], true, &[]).is_err());
        assert_eq!(session.trace()[1].recommended_agent, None);
    }

    #[test]
    fn replay_matches_live_state() {
        let (mut session, genesis) = Session::create("s".into(), spec(Mechanism::ApproxMinRisk { m: 30 })).unwrap();
        let mut journal = vec![genesis];
        let (recs, e) = session.recommend(&[vec![0.3, 0.6], vec![0.7, 0.2]], false, &[]).unwrap();
        journal.extend(e);
        journal.push(session.commit(1, &recs[0].chosen_agent, Some("a".into())).unwrap());
        journal.push(session.commit(2, &recs[1].chosen_agent, None).unwrap());
        let text: Vec<String> = journal.iter().map(|e| serde_json::to_string(e).unwrap()).collect();
        let parsed: Vec<JournalEvent> = text.iter().map(|l| serde_json::from_str(l).unwrap()).collect();
        for k in 1..=parsed.len() {
            let partial = replay_journal(&parsed[..k]).unwrap();
            assert_eq!(partial.state_hash(), parsed[k - 1].state_hash);
        }
        assert_eq!(replay_journal(&parsed).unwrap().view(), session.view());

        let mut tampered = parsed.clone();
        tampered[2].payload["agent_id"] = Value::String("x".into());
        tampered[2].payload["ordinal"] = Value::from(1);
        if recs[0].chosen_agent != "x" {
            assert!(replay_journal(&tampered).is_err());
        }
        assert!(replay_journal(&parsed[1..]).is_err());
    }

    #[test]
    fn max_direction_converts_scores() {
        let mut s = spec(Mechanism::Greedy);
        s.direction = Direction::Max;
        let (mut session, _) = Session::create("s".into(), s).unwrap();
        let (recs, _) = session.recommend(&[vec![0.9, 0.1]], true, &[]).unwrap();
        assert_eq!(recs[0].chosen_agent, "x");
        assert!(session.recommend(&[vec![1.5, 0.1]], true, &[]).is_err());
    }
}
