use super::PreferencePair;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eviction {
    /// Oldest pair first.
    #[default]
    Fifo,
    /// Smallest teacher margin first, oldest among equal margins.
    Adaptive,
}

/// Bounded store of preference pairs, kept in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceBuffer {
    capacity: usize,
    eviction: Eviction,
    pairs: VecDeque<PreferencePair>,
}

impl PreferenceBuffer {
    pub fn new(capacity: usize, eviction: Eviction) -> Self {
        Self {
            capacity,
            eviction,
            pairs: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn eviction(&self) -> Eviction {
        self.eviction
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&PreferencePair> {
        self.pairs.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PreferencePair> {
        self.pairs.iter()
    }

    /// Append `new_pairs` one at a time, evicting on overflow. Returns the
    /// evicted pairs in eviction order.
    pub fn update(&mut self, new_pairs: impl IntoIterator<Item = PreferencePair>) -> Vec<PreferencePair> {
        let mut evicted = Vec::new();
        for pair in new_pairs {
            self.pairs.push_back(pair);
            while self.pairs.len() > self.capacity {
                let victim = match self.eviction {
                    Eviction::Fifo => 0,
                    Eviction::Adaptive => self.min_margin_index(),
                };
                evicted.extend(self.pairs.remove(victim));
            }
        }
        evicted
    }

    fn min_margin_index(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.pairs.iter().enumerate() {
            if p.teacher_margin() < self.pairs[best].teacher_margin() {
                best = i;
            }
        }
        best
    }
}
