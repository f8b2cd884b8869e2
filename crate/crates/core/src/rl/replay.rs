use rand::Rng;

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(4096)),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Stores `item`, overwriting the oldest entry when full; returns its index.
    pub fn push(&mut self, item: T) -> usize {
        let idx = self.next;
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[idx] = item;
        }
        self.next = (self.next + 1) % self.capacity;
        idx
    }

    pub fn get(&self, idx: usize) -> &T {
        &self.items[idx]
    }

    /// Uniform indices, with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        assert!(!self.items.is_empty(), "sampling from an empty buffer");
        (0..batch).map(|_| rng.gen_range(0..self.items.len())).collect()
    }
}

/// Binary sum tree over `capacity` leaves.
#[derive(Debug, Clone)]
pub struct SumTree {
    capacity: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.next_power_of_two();
        Self {
            capacity,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    fn leaves(&self) -> usize {
        self.nodes.len() / 2
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.nodes[self.leaves() + idx]
    }

    pub fn set(&mut self, idx: usize, value: f64) {
        assert!(idx < self.capacity, "leaf {idx} out of range");
        assert!(value >= 0.0 && value.is_finite(), "priority mass must be finite and non-negative");
        let mut i = self.leaves() + idx;
        self.nodes[i] = value;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative interval contains `mass` (`0 ≤ mass < total`).
    pub fn find(&self, mass: f64) -> usize {
        let mut i = 1;
        let mut m = mass;
        while i < self.leaves() {
            let left = self.nodes[2 * i];
            if m < left || self.nodes[2 * i + 1] == 0.0 {
                i *= 2;
            } else {
                m -= left;
                i = 2 * i + 1;
            }
        }
        (i - self.leaves()).min(self.capacity - 1)
    }
}

/// Proportional prioritized replay: `P(i) ∝ pᵢ^α`.
#[derive(Debug, Clone)]
pub struct PrioritizedReplay<T> {
    buffer: ReplayBuffer<T>,
    tree: SumTree,
    alpha: f64,
    epsilon: f64,
    max_priority: f64,
}

impl<T> PrioritizedReplay<T> {
    pub fn new(capacity: usize, alpha: f64, epsilon: f64) -> Self {
        Self {
            buffer: ReplayBuffer::new(capacity),
            tree: SumTree::new(capacity),
            alpha,
            epsilon,
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn get(&self, idx: usize) -> &T {
        self.buffer.get(idx)
    }

    /// New items enter at the largest priority seen so far.
    pub fn push(&mut self, item: T) -> usize {
        let idx = self.buffer.push(item);
        self.tree.set(idx, self.max_priority.powf(self.alpha));
        idx
    }

    pub fn set_priority(&mut self, idx: usize, priority: f64) {
        assert!(priority > 0.0 && priority.is_finite(), "priorities must be positive");
        self.max_priority = self.max_priority.max(priority);
        self.tree.set(idx, priority.powf(self.alpha));
    }

    /// Sets priorities from absolute TD errors, `|δ| + ε`.
    pub fn update_from_errors(&mut self, indices: &[usize], errors: &[f64]) {
        for (&i, &e) in indices.iter().zip(errors) {
            self.set_priority(i, e.abs() + self.epsilon);
        }
    }

    pub fn probability(&self, idx: usize) -> f64 {
        self.tree.get(idx) / self.tree.total()
    }

    /// Draws `batch` indices and their importance weights
    /// `(N·P(i))^(−β) / max w`.
    ///
    /// # Panics
    /// If `batch` exceeds the number of stored items.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, beta: f64, rng: &mut R) -> (Vec<usize>, Vec<f64>) {
        assert!(batch <= self.len(), "batch of {batch} exceeds buffer size {}", self.len());
        let total = self.tree.total();
        let n = self.len() as f64;
        let indices: Vec<usize> = (0..batch).map(|_| self.tree.find(rng.gen::<f64>() * total)).collect();
        let raw: Vec<f64> = indices.iter().map(|&i| (n * self.probability(i)).powf(-beta)).collect();
        let max_w = raw.iter().cloned().fold(0.0, f64::max);
        let weights = raw.iter().map(|w| w / max_w).collect();
        (indices, weights)
    }
}
