//! Ordered transition datasets and their JSON Lines file format.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One (s, a, s') record with its episode bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub episode_id: u32,
    pub t: u32,
}

/// Sidecar metadata for a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub task_id: String,
    pub count: usize,
    /// "expert" or "policy".
    pub source: String,
}

/// An ordered demonstration dataset. Within an episode, `next_obs` of record
/// t equals `obs` of record t+1 exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionDataset {
    pub transitions: Vec<Transition>,
    pub meta: DatasetMeta,
}

impl TransitionDataset {
    pub fn new(transitions: Vec<Transition>, meta: DatasetMeta) -> Result<Self> {
        let ds = Self { transitions, meta };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Checks episode chaining and the metadata count.
    pub fn validate(&self) -> Result<()> {
        if self.meta.count != self.transitions.len() {
            return Err(Error::Config(format!(
                "dataset metadata count {} but {} records present",
                self.meta.count,
                self.transitions.len()
            )));
        }
        for (i, pair) in self.transitions.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if a.episode_id == b.episode_id {
                if b.t != a.t + 1 {
                    return Err(Error::Config(format!(
                        "dataset record {i}: non-consecutive timestep within episode {}",
                        a.episode_id
                    )));
                }
                if a.next_obs != b.obs {
                    return Err(Error::Config(format!(
                        "dataset record {i}: next_obs does not chain to the following obs"
                    )));
                }
            }
        }
        Ok(())
    }

    /// True for records that end their episode (no successor record).
    pub fn is_episode_final(&self, index: usize) -> bool {
        match self.transitions.get(index + 1) {
            None => true,
            Some(next) => next.episode_id != self.transitions[index].episode_id,
        }
    }

    /// Whole-episode prefix covering at least `budget` timesteps, mirroring
    /// the collection contract (never truncates mid-episode).
    pub fn prefix_by_budget(&self, budget: usize) -> Result<TransitionDataset> {
        if budget == 0 {
            return Err(Error::Config("budget must be >= 1".into()));
        }
        let mut cut = self.transitions.len();
        for i in 0..self.transitions.len() {
            if i + 1 >= budget && self.is_episode_final(i) {
                cut = i + 1;
                break;
            }
        }
        let transitions: Vec<Transition> = self.transitions[..cut].to_vec();
        let meta = DatasetMeta {
            task_id: self.meta.task_id.clone(),
            count: transitions.len(),
            source: self.meta.source.clone(),
        };
        TransitionDataset::new(transitions, meta)
    }

    /// Path of the metadata file that sits next to a dataset file.
    pub fn meta_path(path: &Path) -> PathBuf {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".meta.json");
        path.with_file_name(name)
    }

    /// Writes one JSON record per line plus the metadata sidecar.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        for t in &self.transitions {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let meta_file = std::fs::File::create(Self::meta_path(path))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(meta_file), &self.meta)?;
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut transitions = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            transitions.push(serde_json::from_str(&line)?);
        }
        let meta_file = std::fs::File::open(Self::meta_path(path))?;
        let meta: DatasetMeta = serde_json::from_reader(std::io::BufReader::new(meta_file))?;
        Self::new(transitions, meta)
    }
}
