//! Episode container and line-delimited JSON persistence.
//!
//! One episode per line.  The on-disk record is `{meta, steps}` with
//! `meta = {range, seed, success, horizon, obs_dim, proprio_dim,
//! action_dim}` and `steps = [{obs, proprio, action}, …]`; field names
//! and ordering are fixed by the structs below.  Every float is written
//! in scientific notation with 17 significant digits — enough for exact
//! `f64` round-trips, comfortably above the 9-digit floor the format
//! guarantees.
//!
//! Rewards and the underlying state trace exist only in memory (training
//! consumes observations and actions; rewards are diagnostics, states
//! are privileged).  Loading an episode therefore yields empty `rewards`
//! and `states`.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write as IoWrite};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnvState, SimError};
use crate::reward::N_TERMS;

/// Flattened action length: end-effector delta xyz + aperture command.
pub const ACTION_DIM: usize = 4;

/// Episode-level metadata, stored first on each line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeMeta {
    /// Randomization preset name the episode was drawn from.
    pub range: String,
    /// Reset/rollout seed.
    pub seed: u64,
    /// Task success flag (see [`super::is_success`]).
    pub success: bool,
    /// Number of steps.
    pub horizon: usize,
    /// Visual feature length per step.
    pub obs_dim: usize,
    /// Proprioceptive feature length per step.
    pub proprio_dim: usize,
    /// Action vector length per step.
    pub action_dim: usize,
}

/// One stored step: what the policy saw and what it did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeStep {
    /// Visual features (concatenated bboxes, failures already applied).
    pub obs: Vec<f64>,
    /// Proprioceptive features.
    pub proprio: Vec<f64>,
    /// Action taken.
    pub action: Vec<f64>,
}

/// A completed rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub meta: EpisodeMeta,
    pub steps: Vec<EpisodeStep>,
    /// Per-step reward terms (in memory only; empty after loading).
    #[serde(skip)]
    pub rewards: Vec<[f64; N_TERMS]>,
    /// State trace, `horizon + 1` entries including the reset state
    /// (in memory only; empty after loading).
    #[serde(skip)]
    pub states: Vec<EnvState>,
}

impl Episode {
    /// Number of steps.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Check the step vectors against the declared dimensions.
    fn validate(&self) -> Result<(), String> {
        if self.steps.len() != self.meta.horizon {
            return Err(format!(
                "{} steps but horizon {}",
                self.steps.len(),
                self.meta.horizon
            ));
        }
        for (i, s) in self.steps.iter().enumerate() {
            if s.obs.len() != self.meta.obs_dim
                || s.proprio.len() != self.meta.proprio_dim
                || s.action.len() != self.meta.action_dim
            {
                return Err(format!(
                    "step {i} dims ({}, {}, {}) disagree with meta ({}, {}, {})",
                    s.obs.len(),
                    s.proprio.len(),
                    s.action.len(),
                    self.meta.obs_dim,
                    self.meta.proprio_dim,
                    self.meta.action_dim
                ));
            }
        }
        Ok(())
    }
}

/// JSON formatter writing every float as `{:.16e}` — 17 significant
/// digits, the shortest count that round-trips any `f64` exactly.
struct SciNotation;

impl serde_json::ser::Formatter for SciNotation {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.8e}")
    }
}

fn io_err(path: &Path, source: io::Error) -> SimError {
    SimError::EpisodeIo {
        path: path.display().to_string(),
        source,
    }
}

/// Serialize one episode to its single-line JSON form.
pub fn episode_to_line(episode: &Episode) -> Vec<u8> {
    let mut buf = Vec::with_capacity(4096);
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciNotation);
    episode
        .serialize(&mut ser)
        .expect("episode serialization to memory cannot fail");
    buf
}

/// Write episodes to `path`, one JSON record per line.
pub fn save_episodes(path: &Path, episodes: &[Episode]) -> Result<(), SimError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    for ep in episodes {
        out.write_all(&episode_to_line(ep))
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

/// Read back a line-delimited episode file, validating dimensions.
///
/// Loaded episodes carry no rewards or state trace; their `success`
/// flag is whatever the writer recorded.
pub fn load_episodes(path: &Path) -> Result<Vec<Episode>, SimError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut episodes = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |detail: String| SimError::EpisodeParse {
            path: path.display().to_string(),
            line: idx + 1,
            detail,
        };
        let ep: Episode = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        ep.validate().map_err(parse)?;
        episodes.push(ep);
    }
    Ok(episodes)
}
