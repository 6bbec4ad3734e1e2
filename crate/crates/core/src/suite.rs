//! Seeded benchmark suites: disjoint train and held-out (world seed,
//! episode seed) pairs, and their materialization into episodes.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::world::{generate_episode, generate_world, Episode, EpisodeParams, GridWorld, WorldParams};

/// Episode ids of the held-out split start here.
pub const HELDOUT_ID_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteParams {
    pub seed: u64,
    pub train_worlds: usize,
    pub train_episodes_per_world: usize,
    pub heldout_worlds: usize,
    pub heldout_episodes_per_world: usize,
}

impl Default for SuiteParams {
    fn default() -> Self {
        Self { seed: 0, train_worlds: 100, train_episodes_per_world: 20, heldout_worlds: 50, heldout_episodes_per_world: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Heldout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSuite {
    pub name: String,
    pub world: WorldParams,
    pub episode: EpisodeParams,
    pub train: Vec<(u64, u64)>,
    pub heldout: Vec<(u64, u64)>,
}

fn pick_pairs(
    seed: u64,
    purpose: &str,
    worlds: usize,
    per_world: usize,
    world_params: &WorldParams,
    episode_params: &EpisodeParams,
) -> Result<Vec<(u64, u64)>> {
    let mut pairs = Vec::with_capacity(worlds * per_world);
    let mut found = 0;
    let mut candidate = 0u64;
    while found < worlds {
        if candidate > 50 * worlds as u64 + 100 {
            return Err(Error::GenerationFailed(format!("could not find {worlds} usable {purpose} worlds")));
        }
        let world_seed = rng::stream_key(seed, purpose, &[candidate]);
        candidate += 1;
        let Ok(world) = generate_world(world_seed, world_params) else {
            continue;
        };
        let world = Arc::new(world);
        let mut eps = Vec::with_capacity(per_world);
        let mut e = 0u64;
        while eps.len() < per_world && e < 4 * per_world as u64 + 8 {
            let ep_seed = rng::stream_key(world_seed, "episode-seed", &[e]);
            e += 1;
            if generate_episode(world.clone(), ep_seed, 0, episode_params).is_ok() {
                eps.push((world_seed, ep_seed));
            }
        }
        if eps.len() == per_world {
            pairs.extend(eps);
            found += 1;
        }
    }
    Ok(pairs)
}

impl BenchmarkSuite {
    pub fn generate(name: &str, params: &SuiteParams, world: &WorldParams, episode: &EpisodeParams) -> Result<Self> {
        let train = pick_pairs(params.seed, "train-world", params.train_worlds, params.train_episodes_per_world, world, episode)?;
        let heldout =
            pick_pairs(params.seed, "heldout-world", params.heldout_worlds, params.heldout_episodes_per_world, world, episode)?;
        let suite = Self { name: name.to_string(), world: *world, episode: *episode, train, heldout };
        suite.check_disjoint()?;
        Ok(suite)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let train: HashSet<u64> = self.train.iter().map(|p| p.0).collect();
        if self.heldout.iter().any(|p| train.contains(&p.0)) {
            return Err(Error::Config("train and held-out world seeds overlap".into()));
        }
        Ok(())
    }

    pub fn pairs(&self, split: Split) -> &[(u64, u64)] {
        match split {
            Split::Train => &self.train,
            Split::Heldout => &self.heldout,
        }
    }

    /// Regenerates every episode of a split. Ids are the pair index (offset by
    /// [`HELDOUT_ID_BASE`] for the held-out split).
    pub fn materialize(&self, split: Split) -> Result<Vec<Episode>> {
        let pairs = self.pairs(split);
        let base = match split {
            Split::Train => 0,
            Split::Heldout => HELDOUT_ID_BASE,
        };
        let mut worlds: BTreeMap<u64, Arc<GridWorld>> = BTreeMap::new();
        for &(ws, _) in pairs {
            if !worlds.contains_key(&ws) {
                worlds.insert(ws, Arc::new(generate_world(ws, &self.world)?));
            }
        }
        pairs
            .par_iter()
            .enumerate()
            .map(|(i, &(ws, es))| generate_episode(worlds[&ws].clone(), es, base + i as u64, &self.episode))
            .collect()
    }
}
