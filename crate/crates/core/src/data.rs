//! CSV ingestion and export for pools, cohorts and cost matrices.
//!
//! Pool files have a header of agent ids and one row per historical item.
//! Cohort and matrix files start with an `item_id` column; cohorts may add a
//! `batch_id` column right after it. Values are raw costs, or outcome scores
//! in `[0, 1]` converted to costs `1 − s` under [`Direction::Max`].

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::batch::{batch_ranges, Batch, BatchItem};
use crate::error::{Error, Result};
use crate::lap::CostMatrix;
use crate::stochastic::HistoricalPool;

/// Whether file values are costs to minimise or scores to maximise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Min,
    Max,
}

impl Direction {
    pub fn to_cost(self, value: f64) -> Result<f64> {
        if !value.is_finite() {
            return Err(Error::invalid(format!("non-finite value {value}")));
        }
        match self {
            Direction::Min => Ok(value),
            Direction::Max if (0.0..=1.0).contains(&value) => Ok(1.0 - value),
            Direction::Max => Err(Error::invalid(format!("score {value} lies outside [0, 1]"))),
        }
    }

    pub fn from_cost(self, cost: f64) -> f64 {
        match self {
            Direction::Min => cost,
            Direction::Max => 1.0 - cost,
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(Direction::Min),
            "max" => Ok(Direction::Max),
            other => Err(Error::invalid(format!("direction must be `min` or `max`, got `{other}`"))),
        }
    }
}

fn parse_value(raw: &str, line: usize, direction: Direction) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: `{raw}` is not a number")))?;
    direction
        .to_cost(v)
        .map_err(|e| Error::Parse(format!("line {line}: {e}")))
}

fn check_ids(ids: &[String]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::Parse("header names no agents".into()));
    }
    for (k, id) in ids.iter().enumerate() {
        if id.is_empty() {
            return Err(Error::Parse(format!("header column {} is empty", k + 1)));
        }
        if ids[..k].contains(id) {
            return Err(Error::Parse(format!("duplicate agent id `{id}` in header")));
        }
    }
    Ok(())
}

pub fn read_pool_csv(reader: impl Read, direction: Direction) -> Result<HistoricalPool> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let ids: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    check_ids(&ids)?;
    let mut vectors = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let line = r + 2;
        vectors.push(
            record
                .iter()
                .map(|v| parse_value(v, line, direction))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    HistoricalPool::new(ids, vectors)
}

pub fn write_vectors_csv(mut writer: impl Write, ids: &[String], vectors: &[Vec<f64>], direction: Direction) -> Result<()> {
    let mut w = csv::Writer::from_writer(&mut writer);
    w.write_record(ids)?;
    for v in vectors {
        w.write_record(v.iter().map(|&c| direction.from_cost(c).to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortItem {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_id: Option<String>,
    pub costs: Vec<f64>,
}

/// Arrivals in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    agent_ids: Vec<String>,
    items: Vec<CohortItem>,
}

impl Cohort {
    pub fn new(agent_ids: Vec<String>, items: Vec<CohortItem>) -> Result<Self> {
        check_ids(&agent_ids)?;
        for item in &items {
            if item.costs.len() != agent_ids.len() {
                return Err(Error::DimensionMismatch {
                    expected: agent_ids.len(),
                    actual: item.costs.len(),
                });
            }
            if item.costs.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("item `{}` has a non-finite cost", item.item_id)));
            }
        }
        let has_batches = items.iter().filter(|i| i.batch_id.is_some()).count();
        if has_batches != 0 && has_batches != items.len() {
            return Err(Error::invalid("batch_id must be given for every item or none"));
        }
        Ok(Self { agent_ids, items })
    }

    /// Items with sequential ids `1..` and no batches.
    pub fn from_vectors(agent_ids: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let items = vectors
            .into_iter()
            .enumerate()
            .map(|(i, costs)| CohortItem {
                item_id: (i + 1).to_string(),
                batch_id: None,
                costs,
            })
            .collect();
        Self::new(agent_ids, items)
    }

    pub fn agent_ids(&self) -> &[String] {
        &self.agent_ids
    }

    pub fn items(&self) -> &[CohortItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn vectors(&self) -> Vec<Vec<f64>> {
        self.items.iter().map(|i| i.costs.clone()).collect()
    }

    pub fn has_batches(&self) -> bool {
        self.items.first().is_some_and(|i| i.batch_id.is_some())
    }

    /// Maximal runs of equal batch ids; every item is its own batch when the
    /// cohort has none.
    pub fn batches(&self) -> Vec<Batch> {
        let ranges = if self.has_batches() {
            let ids: Vec<&Option<String>> = self.items.iter().map(|i| &i.batch_id).collect();
            batch_ranges(&ids)
        } else {
            (0..self.items.len()).map(|i| i..i + 1).collect()
        };
        ranges
            .into_iter()
            .enumerate()
            .map(|(group, range)| Batch {
                group,
                items: self.items[range]
                    .iter()
                    .map(|i| BatchItem {
                        item_id: i.item_id.clone(),
                        costs: i.costs.clone(),
                    })
                    .collect(),
            })
            .collect()
    }
}

pub fn read_cohort_csv(reader: impl Read, direction: Direction) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("item_id") {
        return Err(Error::Parse("cohort header must start with `item_id`".into()));
    }
    let with_batch = header.get(1).map(String::as_str) == Some("batch_id");
    let first_agent = if with_batch { 2 } else { 1 };
    let agent_ids = header[first_agent..].to_vec();
    check_ids(&agent_ids)?;
    let mut items = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let line = r + 2;
        let costs = record
            .iter()
            .skip(first_agent)
            .map(|v| parse_value(v, line, direction))
            .collect::<Result<Vec<_>>>()?;
        items.push(CohortItem {
            item_id: record[0].to_string(),
            batch_id: with_batch.then(|| record[1].to_string()),
            costs,
        });
    }
    Cohort::new(agent_ids, items)
}

pub fn write_cohort_csv(mut writer: impl Write, cohort: &Cohort, direction: Direction) -> Result<()> {
    let mut w = csv::Writer::from_writer(&mut writer);
    let mut header = vec!["item_id".to_string()];
    if cohort.has_batches() {
        header.push("batch_id".into());
    }
    header.extend(cohort.agent_ids.iter().cloned());
    w.write_record(&header)?;
    for item in &cohort.items {
        let mut row = vec![item.item_id.clone()];
        if let Some(b) = &item.batch_id {
            row.push(b.clone());
        }
        row.extend(item.costs.iter().map(|&c| direction.from_cost(c).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Cost matrix file: `item_id` column followed by one column per capacity
/// unit (or agent).
pub fn read_matrix_csv(reader: impl Read, direction: Direction) -> Result<CostMatrix> {
    let cohort = read_cohort_csv(reader, direction)?;
    if cohort.has_batches() {
        return Err(Error::Parse("cost matrix files take no batch_id column".into()));
    }
    let row_ids = cohort.items.iter().map(|i| i.item_id.clone()).collect();
    let col_ids = cohort.agent_ids.clone();
    CostMatrix::with_ids(cohort.vectors(), row_ids, col_ids)
}
