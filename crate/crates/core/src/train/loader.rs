use rand::seq::SliceRandom;

use crate::numkit::SeededRng;

/// Endless mini-batch source over a fixed index set, reshuffled on every pass.
#[derive(Debug, Clone)]
pub struct CyclingLoader {
    order: Vec<usize>,
    pos: usize,
    pass: usize,
    rng: SeededRng,
}

/// A row index together with the pass (epoch) it was drawn in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub index: usize,
    pub pass: usize,
}

impl CyclingLoader {
    pub fn new(indices: Vec<usize>, mut rng: SeededRng) -> Self {
        let mut order = indices;
        order.shuffle(&mut rng);
        Self {
            order,
            pos: 0,
            pass: 0,
            rng,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    /// Number of completed passes.
    pub fn completed_passes(&self) -> usize {
        self.pass
    }

    /// Next `n` draws, wrapping into a freshly shuffled pass when needed.
    /// An empty loader yields nothing.
    pub fn next_batch(&mut self, n: usize) -> Vec<Draw> {
        if self.order.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
                self.pass += 1;
            }
            out.push(Draw {
                index: self.order[self.pos],
                pass: self.pass,
            });
            self.pos += 1;
        }
        if self.pos == self.order.len() {
            // close the pass eagerly so completed_passes is exact at batch boundaries
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.pass += 1;
        }
        out
    }
}
