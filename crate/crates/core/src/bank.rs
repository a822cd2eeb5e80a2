//! Memory prototype bank.
//!
//! Per-category FIFO stores of ground-truth embeddings, capacity `2k` for
//! a k-shot run. When full, the oldest entry is evicted. Augmented
//! samples never enter the bank — their features are incomplete by
//! construction. Cluster centers (or plain means) derived from the bank
//! serve as the prototype side of the contrastive loss.
//!
//! The training loop is the single writer; [`PrototypeBank::centers`]
//! returns an owned snapshot that readers may use concurrently.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::MatrixFile;
use crate::kmeans::kmeans;

/// Bounded FIFO of embeddings per category.
#[derive(Debug, Clone)]
pub struct PrototypeBank {
    categories: usize,
    dim: usize,
    capacity: usize,
    queues: Vec<VecDeque<Vec<f64>>>,
    /// Monotone counter per category; diagnostic only.
    inserted: Vec<u64>,
}

/// Clustered (or averaged) prototypes, grouped by category.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeCenters {
    pub centers: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl PrototypeCenters {
    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }
}

impl PrototypeBank {
    /// `k_shot` fixes the capacity at `2 * k_shot` per category.
    pub fn new(categories: usize, dim: usize, k_shot: usize) -> Self {
        Self {
            categories,
            dim,
            capacity: 2 * k_shot,
            queues: vec![VecDeque::new(); categories],
            inserted: vec![0; categories],
        }
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self, category: usize) -> usize {
        self.queues[category].len()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(|q| q.is_empty())
    }

    /// Entries of one category, oldest first.
    pub fn entries(&self, category: usize) -> impl Iterator<Item = &[f64]> {
        self.queues[category].iter().map(|v| v.as_slice())
    }

    /// Stores `embedding` under `category`. Augmented samples are
    /// silently ignored; a full queue evicts its oldest entry first.
    pub fn push(
        &mut self,
        category: usize,
        embedding: Vec<f64>,
        is_augmented: bool,
    ) -> Result<()> {
        if category >= self.categories {
            return Err(Error::invalid(format!(
                "category {category} out of range (C = {})",
                self.categories
            )));
        }
        if embedding.len() != self.dim {
            return Err(Error::dimension(format!(
                "embedding has {} dims, bank stores {}",
                embedding.len(),
                self.dim
            )));
        }
        if is_augmented {
            return Ok(());
        }
        let q = &mut self.queues[category];
        if q.len() == self.capacity {
            q.pop_front();
        }
        q.push_back(embedding);
        self.inserted[category] += 1;
        Ok(())
    }

    /// Prototype centers per category: k-means with `n_centers` clusters
    /// for categories holding at least that many entries, the plain mean
    /// for smaller non-empty ones, nothing for empty ones. `n_centers = 1`
    /// is exactly the arithmetic mean.
    pub fn centers(&self, n_centers: usize, seed: u64) -> Result<PrototypeCenters> {
        if n_centers == 0 {
            return Err(Error::invalid("n_centers must be positive"));
        }
        let mut centers = Vec::new();
        let mut labels = Vec::new();
        for (category, q) in self.queues.iter().enumerate() {
            if q.is_empty() {
                continue;
            }
            let points: Vec<Vec<f64>> = q.iter().cloned().collect();
            let k = if points.len() >= n_centers { n_centers } else { 1 };
            for center in kmeans(&points, k, seed)? {
                centers.push(center);
                labels.push(category);
            }
        }
        Ok(PrototypeCenters { centers, labels })
    }

    /// Every stored embedding with its category, oldest first within each
    /// category. Used by the no-clustering ablation, where raw bank
    /// entries stand in for cluster centers.
    pub fn all_entries(&self) -> PrototypeCenters {
        let mut centers = Vec::new();
        let mut labels = Vec::new();
        for (category, q) in self.queues.iter().enumerate() {
            for e in q {
                centers.push(e.clone());
                labels.push(category);
            }
        }
        PrototypeCenters { centers, labels }
    }

    /// Checkpoints the bank: one binary matrix holding all entries plus a
    /// JSON index of per-category counts and insertion counters.
    pub fn save(&self, matrix_path: &Path, index_path: &Path) -> Result<()> {
        let flat = self.all_entries();
        let m = MatrixFile::from_rows(&flat.centers)?;
        crate::io::write_matrix(matrix_path, &m)?;
        let index = BankIndex {
            categories: self.categories,
            dim: self.dim,
            capacity: self.capacity,
            counts: self.queues.iter().map(|q| q.len()).collect(),
            inserted: self.inserted.clone(),
        };
        let text = serde_json::to_string_pretty(&index)?;
        std::fs::write(index_path, text + "\n")?;
        Ok(())
    }

    pub fn load(matrix_path: &Path, index_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(index_path)?;
        let index: BankIndex = serde_json::from_str(&text)?;
        if index.counts.len() != index.categories {
            return Err(Error::parse("bank index count table mismatch"));
        }
        if index.capacity % 2 != 0 {
            return Err(Error::parse("bank capacity must be 2k"));
        }
        let m = crate::io::read_matrix(matrix_path)?;
        let total: usize = index.counts.iter().sum();
        if m.rows != total {
            return Err(Error::parse(format!(
                "bank matrix holds {} rows, index expects {total}",
                m.rows
            )));
        }
        let mut bank = Self::new(index.categories, index.dim, index.capacity / 2);
        let mut row = 0usize;
        for (category, count) in index.counts.iter().enumerate() {
            for _ in 0..*count {
                bank.push(category, m.row(row).to_vec(), false)?;
                row += 1;
            }
        }
        bank.inserted = index.inserted;
        Ok(bank)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BankIndex {
    categories: usize,
    dim: usize,
    capacity: usize,
    counts: Vec<usize>,
    inserted: Vec<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_appends_and_respects_capacity() {
        let mut bank = PrototypeBank::new(2, 2, 2); // capacity 4
        bank.push(0, vec![0.0, 0.0], false).unwrap();
        assert_eq!(bank.len(0), 1);
        for i in 1..=4 {
            bank.push(0, vec![i as f64, 0.0], false).unwrap();
        }
        // Pushed 5 into capacity 4: the first entry is evicted.
        assert_eq!(bank.len(0), 4);
        let first: Vec<f64> = bank.entries(0).next().unwrap().to_vec();
        assert_eq!(first, vec![1.0, 0.0]);
    }

    #[test]
    fn augmented_pushes_leave_the_bank_unchanged() {
        let mut bank = PrototypeBank::new(1, 2, 1);
        bank.push(0, vec![1.0, 2.0], false).unwrap();
        let before: Vec<Vec<f64>> = bank.entries(0).map(|e| e.to_vec()).collect();
        bank.push(0, vec![9.0, 9.0], true).unwrap();
        let after: Vec<Vec<f64>> = bank.entries(0).map(|e| e.to_vec()).collect();
        assert_eq!(before, after);
        assert_eq!(bank.inserted[0], 1);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut bank = PrototypeBank::new(1, 3, 1);
        assert!(bank.push(0, vec![1.0], false).is_err());
    }

    #[test]
    fn centers_with_one_cluster_is_the_mean() {
        let mut bank = PrototypeBank::new(2, 2, 2);
        bank.push(0, vec![1.0, 1.0], false).unwrap();
        bank.push(0, vec![3.0, 3.0], false).unwrap();
        let c = bank.centers(1, 0).unwrap();
        assert_eq!(c.labels, vec![0]);
        assert!((c.centers[0][0] - 2.0).abs() < 1e-12);
        assert!((c.centers[0][1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn centers_two_clusters_match_partition_oracle() {
        let mut bank = PrototypeBank::new(1, 1, 4);
        for v in [0.0, 0.2, 8.0, 8.2] {
            bank.push(0, vec![v], false).unwrap();
        }
        let c = bank.centers(2, 7).unwrap();
        let mut got: Vec<f64> = c.centers.iter().map(|v| v[0]).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Exhaustive 2-partition oracle on four scalar points.
        assert!((got[0] - 0.1).abs() < 1e-12);
        assert!((got[1] - 8.1).abs() < 1e-12);
    }

    #[test]
    fn sparse_category_falls_back_to_mean() {
        let mut bank = PrototypeBank::new(2, 1, 3);
        bank.push(0, vec![4.0], false).unwrap();
        // Category 1 stays empty: omitted. Category 0 has 1 < 2 entries:
        // mean fallback.
        let c = bank.centers(2, 0).unwrap();
        assert_eq!(c.labels, vec![0]);
        assert_eq!(c.centers[0], vec![4.0]);
    }

    #[test]
    fn empty_bank_yields_empty_centers() {
        let bank = PrototypeBank::new(3, 2, 1);
        let c = bank.centers(1, 0).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut bank = PrototypeBank::new(2, 2, 2);
        bank.push(0, vec![1.0, 2.0], false).unwrap();
        bank.push(1, vec![3.0, 4.0], false).unwrap();
        bank.push(1, vec![5.0, 6.0], false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("bank.fsm");
        let ipath = dir.path().join("bank.json");
        bank.save(&mpath, &ipath).unwrap();
        let back = PrototypeBank::load(&mpath, &ipath).unwrap();
        assert_eq!(back.len(0), 1);
        assert_eq!(back.len(1), 2);
        let entries: Vec<Vec<f64>> = back.entries(1).map(|e| e.to_vec()).collect();
        assert_eq!(entries, vec![vec![3.0, 4.0], vec![5.0, 6.0]]);
    }
}
