use std::fs;
use std::path::Path;

use super::container::{list_cases, read_container};
use super::prep::{split_cases, DatasetSplit, NormalizationStats};
use super::record::CaseRecord;
use super::DataError;
use crate::flowgen::Problem;

pub const SPLIT_FILE: &str = "split.json";

/// A set of cases of one problem plus their train/val/test assignment.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub cases: Vec<CaseRecord>,
    pub split: DatasetSplit,
}

impl Dataset {
    pub fn new(mut cases: Vec<CaseRecord>, split: DatasetSplit) -> Result<Self, DataError> {
        let problem = cases.first().ok_or_else(|| DataError::EmptyInput("dataset without cases".into()))?.problem();
        if let Some(c) = cases.iter().find(|c| c.problem() != problem) {
            return Err(DataError::Invalid(format!("case {} is {} but the dataset is {problem}", c.meta.case_id, c.problem())));
        }
        cases.sort_by(|a, b| a.meta.case_id.cmp(&b.meta.case_id));
        let mut ids: Vec<&String> = cases.iter().map(|c| &c.meta.case_id).collect();
        ids.dedup();
        if ids.len() != cases.len() {
            return Err(DataError::Invalid("duplicate case ids".into()));
        }
        let mut assigned: Vec<&String> = split.all().collect();
        assigned.sort();
        if assigned != ids {
            return Err(DataError::Invalid("split does not cover exactly the dataset's cases".into()));
        }
        Ok(Self { cases, split })
    }

    /// Splits in-memory cases by seed.
    pub fn with_seed(cases: Vec<CaseRecord>, seed: u64) -> Result<Self, DataError> {
        let ids: Vec<String> = cases.iter().map(|c| c.meta.case_id.clone()).collect();
        let split = split_cases(&ids, seed)?;
        Self::new(cases, split)
    }

    /// Loads every case under `root`. Uses `split.json` when present, else splits with `seed`.
    pub fn load(root: &Path, seed: u64) -> Result<Self, DataError> {
        let cases = list_cases(root)?.iter().map(|d| read_container(d)).collect::<Result<Vec<_>, _>>()?;
        let split_path = root.join(SPLIT_FILE);
        if split_path.is_file() {
            let text = fs::read(&split_path).map_err(|source| DataError::Io { path: split_path.clone(), source })?;
            let split = serde_json::from_slice(&text).map_err(|e| DataError::Parse(format!("{}: {e}", split_path.display())))?;
            Self::new(cases, split)
        } else {
            Self::with_seed(cases, seed)
        }
    }

    pub fn write_split(&self, root: &Path) -> Result<(), DataError> {
        let path = root.join(SPLIT_FILE);
        let text = serde_json::to_vec_pretty(&self.split).map_err(|e| DataError::Parse(e.to_string()))?;
        fs::write(&path, text).map_err(|source| DataError::Io { path, source })
    }

    pub fn problem(&self) -> Problem {
        self.cases[0].problem()
    }

    fn by_ids<'a>(&'a self, ids: &'a [String]) -> Vec<&'a CaseRecord> {
        ids.iter().filter_map(|id| self.cases.iter().find(|c| &c.meta.case_id == id)).collect()
    }

    pub fn train(&self) -> Vec<&CaseRecord> {
        self.by_ids(&self.split.train)
    }

    pub fn val(&self) -> Vec<&CaseRecord> {
        self.by_ids(&self.split.val)
    }

    pub fn test(&self) -> Vec<&CaseRecord> {
        self.by_ids(&self.split.test)
    }

    /// Cases of a split by name (`train`, `val` or `test`).
    pub fn split_cases(&self, name: &str) -> Result<Vec<&CaseRecord>, DataError> {
        match name {
            "train" => Ok(self.train()),
            "val" => Ok(self.val()),
            "test" => Ok(self.test()),
            other => Err(DataError::Invalid(format!("unknown split '{other}'"))),
        }
    }

    /// Normalization statistics from the training cases only.
    pub fn stats(&self) -> Result<NormalizationStats, DataError> {
        let omegas: Vec<Vec<f64>> = self.train().iter().map(|c| c.omega()).collect();
        NormalizationStats::from_training(&omegas)
    }
}
