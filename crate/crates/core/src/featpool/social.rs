use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split};
use crate::error::{Error, Result};

/// Undirected friendship graph plus each user's most visited locations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SocialGraph {
    adjacency: BTreeMap<String, BTreeSet<String>>,
    top_locations: BTreeMap<String, Vec<String>>,
}

impl SocialGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an undirected edge; self-loops are ignored.
    pub fn add_edge(&mut self, a: &str, b: &str) {
        if a == b {
            return;
        }
        self.adjacency.entry(a.into()).or_default().insert(b.into());
        self.adjacency.entry(b.into()).or_default().insert(a.into());
    }

    /// Parses `user_a<TAB>user_b` lines. Blank lines and `#` comments are skipped.
    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut g = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            match (parts.next(), parts.next()) {
                (Some(a), Some(b)) if !a.trim().is_empty() && !b.trim().is_empty() => {
                    g.add_edge(a.trim(), b.trim())
                }
                _ => {
                    return Err(Error::invalid(format!(
                        "edge list line {} is not `user_a<TAB>user_b`",
                        i + 1
                    )))
                }
            }
        }
        Ok(g)
    }

    /// Adds `other`'s edges with every user id prefixed `"{prefix}:"`.
    pub fn extend_namespaced(&mut self, other: &SocialGraph, prefix: &str) {
        for (a, peers) in &other.adjacency {
            for b in peers {
                self.add_edge(&format!("{prefix}:{a}"), &format!("{prefix}:{b}"));
            }
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_edge_list(&text)
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn contains(&self, user: &str) -> bool {
        self.adjacency.contains_key(user)
    }

    pub fn neighbors(&self, user: &str) -> Vec<String> {
        self.adjacency
            .get(user)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default()
    }

    /// Number of users at shortest-path distance exactly 2.
    pub fn two_hop_count(&self, user: &str) -> usize {
        let mut dist: BTreeMap<&str, usize> = BTreeMap::new();
        let mut queue = VecDeque::new();
        dist.insert(user, 0);
        queue.push_back(user);
        while let Some(u) = queue.pop_front() {
            let d = dist[u];
            if d == 2 {
                continue;
            }
            for v in self.adjacency.get(u).into_iter().flatten() {
                if !dist.contains_key(v.as_str()) {
                    dist.insert(v, d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist.values().filter(|&&d| d == 2).count()
    }

    /// Records each user's `n` most visited locations from training sessions.
    pub fn attach_top_locations(&mut self, corpus: &Corpus, n: usize) {
        for (user, sessions) in &corpus.users {
            let stays = sessions
                .iter()
                .filter(|s| s.split.is_none() || s.split == Some(Split::Train))
                .flat_map(|s| &s.stays);
            let ranked = super::count_ranked(stays.map(|s| s.location_id.as_str()));
            self.top_locations.insert(
                user.clone(),
                ranked.into_iter().take(n).map(|(l, _)| l).collect(),
            );
        }
    }

    pub fn top_locations(&self, user: &str) -> &[String] {
        self.top_locations.get(user).map(Vec::as_slice).unwrap_or(&[])
    }
}
