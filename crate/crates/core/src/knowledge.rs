//! Category similarity from side information.
//!
//! A knowledge matrix is a C-by-C symmetric matrix with unit diagonal and
//! entries in \[0,1\]; entry (a,b) scores how semantically similar
//! categories a and b are. It is built once, before training, from one of
//! three kinds of side information:
//!
//! - attribute-model embeddings, clustered per category and compared by
//!   mean pairwise cosine of the cluster centers (case 1),
//! - binary attribute label vectors compared by cosine (case 2),
//! - word embeddings, per category word (case 4) or per attribute word
//!   with a null filler for absent attributes (case 5).
//!
//! Case 3 mixes 1 and 2: embedding similarity when both categories are
//! base categories, label similarity otherwise.
//!
//! Negative cosines are clamped to zero so every entry stays in \[0,1\],
//! and the diagonal is overwritten with exactly 1 after filling.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::MatrixFile;
use crate::kmeans::kmeans;
use crate::math::{cosine, l2_norm};

/// Word-embedding dimension used by the text similarity cases.
pub const WORD_DIM: usize = 300;
/// Shipped default number of attribute bits; label files may declare any length.
pub const DEFAULT_ATTRIBUTE_COUNT: usize = 64;
/// Default clustering count for embedding similarity.
pub const DEFAULT_CLUSTER_COUNT: usize = 5;

/// Binary attribute labels of one category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeLabelVector {
    pub category_id: usize,
    pub bits: Vec<u8>,
}

impl AttributeLabelVector {
    /// Rejects non-binary entries and all-zero vectors at ingestion.
    pub fn new(category_id: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|b| *b > 1) {
            return Err(Error::invalid(format!(
                "category {category_id}: attribute labels must be 0/1"
            )));
        }
        if bits.iter().all(|b| *b == 0) {
            return Err(Error::invalid(format!(
                "category {category_id}: a category with no attributes is rejected"
            )));
        }
        Ok(Self { category_id, bits })
    }

    fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|b| *b as f64).collect()
    }
}

/// Attribute-model feature vectors for one category's images.
#[derive(Debug, Clone)]
pub struct CategoryEmbeddingSet {
    pub category_id: usize,
    pub embeddings: Vec<Vec<f64>>,
}

impl CategoryEmbeddingSet {
    pub fn new(category_id: usize, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::invalid(format!(
                "category {category_id}: empty embedding set"
            )));
        }
        let dim = embeddings[0].len();
        if embeddings.iter().any(|e| e.len() != dim) {
            return Err(Error::dimension(format!(
                "category {category_id}: embeddings differ in dimension"
            )));
        }
        Ok(Self {
            category_id,
            embeddings,
        })
    }
}

/// Word vectors for categories and attributes, plus the null filler.
#[derive(Debug, Clone)]
pub struct TextEmbeddingTable {
    /// Per-category word vector, indexed by category id.
    pub category_words: Vec<Vec<f64>>,
    /// Per-attribute word vector, indexed by attribute id.
    pub attribute_words: Vec<Vec<f64>>,
    /// Filler vector standing in for absent attributes.
    pub null_vector: Vec<f64>,
}

impl TextEmbeddingTable {
    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.category_words.iter().enumerate() {
            if w.len() != WORD_DIM {
                return Err(Error::dimension(format!(
                    "category word {i} has {} dims, expected {WORD_DIM}",
                    w.len()
                )));
            }
        }
        for (i, w) in self.attribute_words.iter().enumerate() {
            if w.len() != WORD_DIM {
                return Err(Error::dimension(format!(
                    "attribute word {i} has {} dims, expected {WORD_DIM}",
                    w.len()
                )));
            }
        }
        if self.null_vector.len() != WORD_DIM {
            return Err(Error::dimension(format!(
                "null vector has {} dims, expected {WORD_DIM}",
                self.null_vector.len()
            )));
        }
        Ok(())
    }
}

/// Symmetric \[0,1\] category-similarity matrix with unit diagonal.
/// Immutable once built; concurrent reads need no synchronization.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeMatrix {
    categories: usize,
    names: Vec<String>,
    values: Vec<f64>,
}

impl KnowledgeMatrix {
    /// Builds from raw values, enforcing the defining invariants.
    pub fn from_values(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let c = names.len();
        if values.len() != c * c {
            return Err(Error::dimension(format!(
                "knowledge matrix payload {} != {c}x{c}",
                values.len()
            )));
        }
        let m = Self {
            categories: c,
            names,
            values,
        };
        m.check_invariants()?;
        Ok(m)
    }

    /// All-ones matrix: every category maximally similar. This is the
    /// configuration that reduces the knowledge-weighted loss to the plain
    /// prototype contrastive loss.
    pub fn all_ones(names: Vec<String>) -> Self {
        let c = names.len();
        Self {
            categories: c,
            names,
            values: vec![1.0; c * c],
        }
    }

    fn check_invariants(&self) -> Result<()> {
        let c = self.categories;
        for i in 0..c {
            if self.values[i * c + i] != 1.0 {
                return Err(Error::invalid(format!("diagonal entry {i} != 1")));
            }
            for j in 0..c {
                let v = self.values[i * c + j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(format!("entry ({i},{j}) = {v} outside [0,1]")));
                }
                if v != self.values[j * c + i] {
                    return Err(Error::invalid(format!("entry ({i},{j}) breaks symmetry")));
                }
            }
        }
        Ok(())
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.categories + b]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// CSV export: header row of category names, then C rows of values.
    /// Values use shortest-round-trip formatting, so import is lossless.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "{}", self.names.join(","))?;
        for i in 0..self.categories {
            let row: Vec<String> = (0..self.categories)
                .map(|j| format!("{}", self.get(i, j)))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let r = BufReader::new(std::fs::File::open(path)?);
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(format!("{}: empty file", path.display())))??;
        let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let c = names.len();
        let mut values = Vec::with_capacity(c * c);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            for field in line.split(',') {
                values.push(field.trim().parse::<f64>().map_err(|e| {
                    Error::parse(format!("{}: {}", path.display(), e))
                })?);
            }
        }
        Self::from_values(names, values)
    }
}

/// Clusters one category's embeddings into `k` centers with the shared
/// deterministic k-means. `k = 1` collapses to the arithmetic mean.
pub fn cluster_category_embeddings(
    set: &CategoryEmbeddingSet,
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if set.embeddings.len() < k {
        return Err(Error::invalid(format!(
            "category {}: {} embeddings but clustering needs at least {}",
            set.category_id,
            set.embeddings.len(),
            k
        )));
    }
    kmeans(&set.embeddings, k, seed)
}

/// Mean of all pairwise cosine similarities between two center sets,
/// clamped to \[0,1\]. The terms are summed in sorted order, which makes
/// the operation exactly symmetric in its arguments: swapping them
/// transposes the term grid but leaves the sorted multiset unchanged.
pub fn embedding_similarity(centers_a: &[Vec<f64>], centers_b: &[Vec<f64>]) -> Result<f64> {
    for (side, centers) in [("left", centers_a), ("right", centers_b)] {
        for (row, c) in centers.iter().enumerate() {
            if l2_norm(c) == 0.0 {
                return Err(Error::invalid(format!(
                    "{side} center row {row} has zero norm"
                )));
            }
        }
    }
    let mut terms = Vec::with_capacity(centers_a.len() * centers_b.len());
    for a in centers_a {
        for b in centers_b {
            terms.push(cosine(a, b)?);
        }
    }
    terms.sort_by(f64::total_cmp);
    let mean = terms.iter().sum::<f64>() / terms.len() as f64;
    Ok(clamp_unit(mean))
}

/// Cosine of two binary attribute label vectors. Nonnegative by
/// construction; clamped so rounding can never push it past 1.
pub fn label_similarity(a: &AttributeLabelVector, b: &AttributeLabelVector) -> Result<f64> {
    if a.bits.len() != b.bits.len() {
        return Err(Error::dimension(format!(
            "label vectors of lengths {} and {}",
            a.bits.len(),
            b.bits.len()
        )));
    }
    Ok(clamp_unit(cosine(&a.as_f64(), &b.as_f64())?))
}

/// Cosine of two category word vectors, clamped to \[0,1\].
pub fn text_similarity_category(e1: &[f64], e2: &[f64]) -> Result<f64> {
    Ok(clamp_unit(cosine(e1, e2)?))
}

/// Attribute-word similarity: flatten each category into an
/// (attributes x word-dim) vector, substituting the null vector for
/// absent attributes, then take the cosine, clamped to \[0,1\].
pub fn text_similarity_attribute(
    labels_a: &AttributeLabelVector,
    labels_b: &AttributeLabelVector,
    table: &TextEmbeddingTable,
) -> Result<f64> {
    let fa = flatten_attribute_words(labels_a, table)?;
    let fb = flatten_attribute_words(labels_b, table)?;
    Ok(clamp_unit(cosine(&fa, &fb)?))
}

fn flatten_attribute_words(
    labels: &AttributeLabelVector,
    table: &TextEmbeddingTable,
) -> Result<Vec<f64>> {
    let mut flat = Vec::with_capacity(labels.bits.len() * WORD_DIM);
    for (i, bit) in labels.bits.iter().enumerate() {
        let word = if *bit == 1 {
            table.attribute_words.get(i).ok_or_else(|| {
                Error::invalid(format!("no word embedding for attribute index {i}"))
            })?
        } else {
            &table.null_vector
        };
        flat.extend_from_slice(word);
    }
    Ok(flat)
}

/// Which similarity fills the off-diagonal entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    /// Clustered attribute-model embeddings for every pair.
    Embedding = 1,
    /// Binary attribute labels for every pair.
    Label = 2,
    /// Embeddings when both categories are base, labels otherwise.
    Mixed = 3,
    /// Category word vectors.
    CategoryWord = 4,
    /// Attribute word vectors with null filler.
    AttributeWord = 5,
}

impl Case {
    pub fn from_number(n: u8) -> Result<Self> {
        Ok(match n {
            1 => Case::Embedding,
            2 => Case::Label,
            3 => Case::Mixed,
            4 => Case::CategoryWord,
            5 => Case::AttributeWord,
            _ => return Err(Error::invalid(format!("unknown knowledge case {n}"))),
        })
    }

    pub fn number(self) -> u8 {
        self as u8
    }
}

/// Everything the five cases may consume. Only the parts required by the
/// chosen case need to be present.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeInputs {
    pub category_names: Vec<String>,
    /// Attribute-model embedding sets, indexed by category id (cases 1, 3).
    pub embedding_sets: Vec<Option<CategoryEmbeddingSet>>,
    /// Binary attribute labels, indexed by category id (cases 2, 3, 5).
    pub labels: Vec<Option<AttributeLabelVector>>,
    /// Word vectors (cases 4, 5).
    pub text: Option<TextEmbeddingTable>,
    /// Clustering count for embedding similarity.
    pub cluster_count: usize,
    /// Seed for the deterministic clustering.
    pub seed: u64,
}

impl KnowledgeInputs {
    pub fn new(category_names: Vec<String>) -> Self {
        let c = category_names.len();
        Self {
            category_names,
            embedding_sets: vec![None; c],
            labels: vec![None; c],
            text: None,
            cluster_count: DEFAULT_CLUSTER_COUNT,
            seed: 0,
        }
    }
}

/// Builds the knowledge matrix for `case`. `base_set` is only consulted by
/// case 3 and must be a subset of all category ids. Off-diagonal entries
/// come from the case's similarity, the diagonal is forced to exactly 1,
/// and symmetry holds by construction.
pub fn build_knowledge_matrix(
    case: Case,
    base_set: &BTreeSet<usize>,
    inputs: &KnowledgeInputs,
) -> Result<KnowledgeMatrix> {
    let c = inputs.category_names.len();
    if c == 0 {
        return Err(Error::invalid("no categories"));
    }
    if let Some(&bad) = base_set.iter().find(|&&id| id >= c) {
        return Err(Error::invalid(format!(
            "base set contains unknown category id {bad}"
        )));
    }
    validate_case_inputs(case, base_set, inputs)?;

    // Pre-cluster every embedding set the case will touch.
    let mut centers: Vec<Option<Vec<Vec<f64>>>> = vec![None; c];
    if matches!(case, Case::Embedding | Case::Mixed) {
        for id in 0..c {
            let needed = case == Case::Embedding || base_set.contains(&id);
            if needed {
                let set = inputs.embedding_sets[id].as_ref().unwrap();
                centers[id] =
                    Some(cluster_category_embeddings(set, inputs.cluster_count, inputs.seed)?);
            }
        }
    }

    let mut values = vec![0.0; c * c];
    for i in 0..c {
        values[i * c + i] = 1.0;
        for j in (i + 1)..c {
            let s = pair_similarity(case, base_set, inputs, &centers, i, j)?;
            values[i * c + j] = s;
            values[j * c + i] = s;
        }
    }
    KnowledgeMatrix::from_values(inputs.category_names.clone(), values)
}

fn pair_similarity(
    case: Case,
    base_set: &BTreeSet<usize>,
    inputs: &KnowledgeInputs,
    centers: &[Option<Vec<Vec<f64>>>],
    i: usize,
    j: usize,
) -> Result<f64> {
    match case {
        Case::Embedding => embedding_similarity(
            centers[i].as_ref().unwrap(),
            centers[j].as_ref().unwrap(),
        ),
        Case::Label => label_similarity(
            inputs.labels[i].as_ref().unwrap(),
            inputs.labels[j].as_ref().unwrap(),
        ),
        Case::Mixed => {
            if base_set.contains(&i) && base_set.contains(&j) {
                embedding_similarity(
                    centers[i].as_ref().unwrap(),
                    centers[j].as_ref().unwrap(),
                )
            } else {
                label_similarity(
                    inputs.labels[i].as_ref().unwrap(),
                    inputs.labels[j].as_ref().unwrap(),
                )
            }
        }
        Case::CategoryWord => {
            let table = inputs.text.as_ref().unwrap();
            text_similarity_category(&table.category_words[i], &table.category_words[j])
        }
        Case::AttributeWord => text_similarity_attribute(
            inputs.labels[i].as_ref().unwrap(),
            inputs.labels[j].as_ref().unwrap(),
            inputs.text.as_ref().unwrap(),
        ),
    }
}

fn validate_case_inputs(
    case: Case,
    base_set: &BTreeSet<usize>,
    inputs: &KnowledgeInputs,
) -> Result<()> {
    let c = inputs.category_names.len();
    let missing = |pred: &dyn Fn(usize) -> bool| -> Vec<String> {
        (0..c)
            .filter(|&id| pred(id))
            .map(|id| inputs.category_names[id].clone())
            .collect()
    };
    let need_embeddings: Vec<String> = match case {
        Case::Embedding => missing(&|id| inputs.embedding_sets[id].is_none()),
        Case::Mixed => {
            missing(&|id| base_set.contains(&id) && inputs.embedding_sets[id].is_none())
        }
        _ => Vec::new(),
    };
    if !need_embeddings.is_empty() {
        return Err(Error::MissingCategories(need_embeddings));
    }
    let need_labels: Vec<String> = match case {
        Case::Label | Case::AttributeWord => missing(&|id| inputs.labels[id].is_none()),
        Case::Mixed => missing(&|id| {
            !(base_set.contains(&id)) && inputs.labels[id].is_none()
        }),
        _ => Vec::new(),
    };
    if !need_labels.is_empty() {
        return Err(Error::MissingCategories(need_labels));
    }
    match case {
        Case::CategoryWord => {
            let table = inputs
                .text
                .as_ref()
                .ok_or_else(|| Error::invalid("case 4 needs a text embedding table"))?;
            table.validate()?;
            if table.category_words.len() < c {
                let names = (table.category_words.len()..c)
                    .map(|id| inputs.category_names[id].clone())
                    .collect();
                return Err(Error::MissingCategories(names));
            }
        }
        Case::AttributeWord => {
            let table = inputs
                .text
                .as_ref()
                .ok_or_else(|| Error::invalid("case 5 needs a text embedding table"))?;
            table.validate()?;
        }
        _ => {}
    }
    Ok(())
}

/// The `k_e` categories most similar to `c` under the matrix, excluding
/// `c` itself, in descending similarity; ties break toward the lower
/// category index.
pub fn top_counter_categories(
    zeta: &KnowledgeMatrix,
    c: usize,
    k_e: usize,
) -> Result<Vec<usize>> {
    let n = zeta.categories();
    if c >= n {
        return Err(Error::invalid(format!("category {c} out of range")));
    }
    if k_e == 0 {
        return Err(Error::invalid("k_e must be positive"));
    }
    if k_e >= n {
        return Err(Error::invalid(format!(
            "k_e = {k_e} must be at most C-1 = {}",
            n - 1
        )));
    }
    let mut others: Vec<usize> = (0..n).filter(|&j| j != c).collect();
    others.sort_by(|&a, &b| {
        zeta.get(c, b)
            .partial_cmp(&zeta.get(c, a))
            .unwrap()
            .then(a.cmp(&b))
    });
    others.truncate(k_e);
    Ok(others)
}

fn clamp_unit(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Parses an attribute-label JSON file of shape `{category_name: [0/1,..]}`.
/// Category order follows the file; every vector must share one length,
/// which defines the attribute count.
pub fn read_attribute_labels_json(
    path: &Path,
) -> Result<(Vec<String>, Vec<AttributeLabelVector>)> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::parse(format!("{}: expected a JSON object", path.display())))?;
    let mut names = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (id, (name, bits)) in obj.iter().enumerate() {
        let arr = bits.as_array().ok_or_else(|| {
            Error::parse(format!("{}: {name}: expected an array of 0/1", path.display()))
        })?;
        let bits: Result<Vec<u8>> = arr
            .iter()
            .map(|v| {
                v.as_u64()
                    .filter(|b| *b <= 1)
                    .map(|b| b as u8)
                    .ok_or_else(|| Error::parse(format!("{name}: entries must be 0 or 1")))
            })
            .collect();
        let bits = bits?;
        if let Some(w) = width {
            if bits.len() != w {
                return Err(Error::parse(format!(
                    "{name}: {} attributes, expected {w}",
                    bits.len()
                )));
            }
        } else {
            width = Some(bits.len());
        }
        names.push(name.clone());
        labels.push(AttributeLabelVector::new(id, bits)?);
    }
    if names.is_empty() {
        return Err(Error::parse(format!("{}: no categories", path.display())));
    }
    Ok((names, labels))
}

/// Writes the `{category_name: [0/1,..]}` JSON used by the CLI.
pub fn write_attribute_labels_json(
    path: &Path,
    names: &[String],
    labels: &[AttributeLabelVector],
) -> Result<()> {
    let mut map = serde_json::Map::new();
    for (name, label) in names.iter().zip(labels.iter()) {
        map.insert(
            name.clone(),
            serde_json::Value::Array(
                label
                    .bits
                    .iter()
                    .map(|b| serde_json::Value::from(*b as u64))
                    .collect(),
            ),
        );
    }
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(map))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Loads per-category embedding sets from a directory of `<name>.fsm` or
/// `<name>.csv` matrix files (rows are samples).
pub fn read_embedding_sets_dir(
    dir: &Path,
    names: &[String],
) -> Result<Vec<Option<CategoryEmbeddingSet>>> {
    let mut sets = vec![None; names.len()];
    for (id, name) in names.iter().enumerate() {
        let bin = dir.join(format!("{name}.fsm"));
        let csv = dir.join(format!("{name}.csv"));
        let m: Option<MatrixFile> = if bin.exists() {
            Some(crate::io::read_matrix(&bin)?)
        } else if csv.exists() {
            Some(crate::io::read_matrix_csv(&csv)?)
        } else {
            None
        };
        if let Some(m) = m {
            sets[id] = Some(CategoryEmbeddingSet::new(id, m.to_rows())?);
        }
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(id: usize, bits: &[u8]) -> AttributeLabelVector {
        AttributeLabelVector::new(id, bits.to_vec()).unwrap()
    }

    #[test]
    fn label_similarity_matches_hand_cosine() {
        let a = labels(0, &[1, 1, 0]);
        let b = labels(1, &[1, 0, 1]);
        // dot = 1, norms sqrt(2)*sqrt(2) = 2.
        assert!((label_similarity(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert!((label_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let c = labels(2, &[0, 0, 1]);
        assert_eq!(label_similarity(&a, &c).unwrap(), 0.0);
    }

    #[test]
    fn label_similarity_is_symmetric() {
        let a = labels(0, &[1, 0, 1, 1]);
        let b = labels(1, &[0, 1, 1, 0]);
        assert_eq!(
            label_similarity(&a, &b).unwrap().to_bits(),
            label_similarity(&b, &a).unwrap().to_bits()
        );
    }

    #[test]
    fn all_zero_label_vector_is_rejected() {
        assert!(AttributeLabelVector::new(0, vec![0, 0, 0]).is_err());
    }

    #[test]
    fn embedding_similarity_single_centers() {
        let a = vec![vec![1.0, 0.0]];
        assert!((embedding_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let b = vec![vec![0.0, 1.0]];
        assert_eq!(embedding_similarity(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn embedding_similarity_averages_all_pairs() {
        // cosines: (1,0)x(1,0)=1, (1,0)x(1,0)=1, (0,1)x(1,0)=0, (0,1)x(1,0)=0.
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let b = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        assert!((embedding_similarity(&a, &b).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn embedding_similarity_is_exactly_symmetric() {
        use rand::Rng;
        let mut rng = crate::rng::seeded_rng(6);
        for _ in 0..20 {
            let a: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let b: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let ab = embedding_similarity(&a, &b).unwrap();
            let ba = embedding_similarity(&b, &a).unwrap();
            assert_eq!(ab.to_bits(), ba.to_bits());
        }
    }

    #[test]
    fn embedding_similarity_rejects_zero_rows() {
        let a = vec![vec![0.0, 0.0]];
        let b = vec![vec![1.0, 0.0]];
        let err = embedding_similarity(&a, &b).unwrap_err().to_string();
        assert!(err.contains("row 0"), "{err}");
    }

    #[test]
    fn text_similarity_clamps_negative_cosine() {
        let mut e1 = vec![0.0; WORD_DIM];
        e1[0] = 1.0;
        let e2: Vec<f64> = e1.iter().map(|v| -v).collect();
        assert_eq!(text_similarity_category(&e1, &e2).unwrap(), 0.0);
        assert!((text_similarity_category(&e1, &e1).unwrap() - 1.0).abs() < 1e-15);
        let mut e3 = vec![0.0; WORD_DIM];
        e3[0] = 1.0;
        e3[1] = 1.0;
        let expected = 1.0 / 2.0_f64.sqrt();
        assert!((text_similarity_category(&e1, &e3).unwrap() - expected).abs() < 1e-12);
    }

    fn toy_table(n_attr: usize) -> TextEmbeddingTable {
        let mut attribute_words = Vec::new();
        for i in 0..n_attr {
            let mut w = vec![0.0; WORD_DIM];
            w[i] = 1.0;
            w[i + 1] = 0.5;
            attribute_words.push(w);
        }
        TextEmbeddingTable {
            category_words: Vec::new(),
            attribute_words,
            null_vector: vec![0.0; WORD_DIM],
        }
    }

    #[test]
    fn attribute_word_similarity_matches_flatten_oracle() {
        let table = toy_table(2);
        let a = labels(0, &[1, 0]);
        let b = labels(1, &[1, 1]);
        // Independent oracle: build the flattened vectors by hand and take
        // the scalar-by-scalar cosine.
        let mut fa = Vec::new();
        fa.extend_from_slice(&table.attribute_words[0]);
        fa.extend_from_slice(&table.null_vector);
        let mut fb = Vec::new();
        fb.extend_from_slice(&table.attribute_words[0]);
        fb.extend_from_slice(&table.attribute_words[1]);
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for i in 0..fa.len() {
            dot += fa[i] * fb[i];
            na += fa[i] * fa[i];
            nb += fb[i] * fb[i];
        }
        let expected = (dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 1.0);
        let got = text_similarity_attribute(&a, &b, &table).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn attribute_word_similarity_identical_labels_is_one() {
        let table = toy_table(3);
        let a = labels(0, &[1, 0, 1]);
        assert!((text_similarity_attribute(&a, &a, &table).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn attribute_word_similarity_disjoint_with_zero_null_is_zero() {
        let table = toy_table(2);
        let a = labels(0, &[1, 0]);
        let b = labels(1, &[0, 1]);
        // Supports are disjoint and null is zero, so the dot vanishes.
        assert_eq!(text_similarity_attribute(&a, &b, &table).unwrap(), 0.0);
    }

    #[test]
    fn attribute_word_similarity_names_missing_attribute() {
        let table = toy_table(1);
        let a = labels(0, &[1, 1]);
        let err = text_similarity_attribute(&a, &a, &table).unwrap_err().to_string();
        assert!(err.contains("attribute index 1"), "{err}");
    }

    #[test]
    fn single_category_matrix_is_unit() {
        let mut inputs = KnowledgeInputs::new(vec!["only".into()]);
        inputs.labels[0] = Some(labels(0, &[1]));
        let m = build_knowledge_matrix(Case::Label, &BTreeSet::new(), &inputs).unwrap();
        assert_eq!(m.values(), &[1.0]);
    }

    #[test]
    fn identical_labels_give_unit_off_diagonal() {
        let mut inputs = KnowledgeInputs::new(vec!["a".into(), "b".into()]);
        inputs.labels[0] = Some(labels(0, &[1, 0, 1]));
        inputs.labels[1] = Some(labels(1, &[1, 0, 1]));
        let m = build_knowledge_matrix(Case::Label, &BTreeSet::new(), &inputs).unwrap();
        assert!((m.get(0, 1) - 1.0).abs() < 1e-12);
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(m.get(1, 1), 1.0);
    }

    #[test]
    fn mixed_case_matches_per_pair_oracle() {
        // 2 base + 1 novel with toy data; every entry must equal a direct
        // call of the corresponding similarity operation.
        let names = vec!["b0".into(), "b1".into(), "n0".into()];
        let mut inputs = KnowledgeInputs::new(names);
        inputs.cluster_count = 1;
        inputs.embedding_sets[0] = Some(
            CategoryEmbeddingSet::new(0, vec![vec![1.0, 0.2], vec![0.8, 0.0]]).unwrap(),
        );
        inputs.embedding_sets[1] = Some(
            CategoryEmbeddingSet::new(1, vec![vec![0.1, 1.0], vec![0.0, 0.9]]).unwrap(),
        );
        inputs.labels[0] = Some(labels(0, &[1, 1, 0]));
        inputs.labels[1] = Some(labels(1, &[0, 1, 1]));
        inputs.labels[2] = Some(labels(2, &[1, 0, 1]));
        let base: BTreeSet<usize> = [0, 1].into_iter().collect();
        let m = build_knowledge_matrix(Case::Mixed, &base, &inputs).unwrap();

        let c0 = cluster_category_embeddings(inputs.embedding_sets[0].as_ref().unwrap(), 1, 0)
            .unwrap();
        let c1 = cluster_category_embeddings(inputs.embedding_sets[1].as_ref().unwrap(), 1, 0)
            .unwrap();
        let want01 = embedding_similarity(&c0, &c1).unwrap();
        assert!((m.get(0, 1) - want01).abs() < 1e-15);
        let want02 = label_similarity(
            inputs.labels[0].as_ref().unwrap(),
            inputs.labels[2].as_ref().unwrap(),
        )
        .unwrap();
        assert!((m.get(0, 2) - want02).abs() < 1e-15);
        let want12 = label_similarity(
            inputs.labels[1].as_ref().unwrap(),
            inputs.labels[2].as_ref().unwrap(),
        )
        .unwrap();
        assert!((m.get(1, 2) - want12).abs() < 1e-15);
    }

    #[test]
    fn mixed_case_cross_checks_the_pure_cases() {
        // One shared toy dataset with embeddings and labels everywhere:
        // the mixed build must equal the embedding build on base-base
        // pairs and the label build elsewhere, entry for entry.
        let names: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let mut inputs = KnowledgeInputs::new(names);
        inputs.cluster_count = 2;
        let mut rng = crate::rng::seeded_rng(17);
        use rand::Rng;
        for id in 0..4 {
            let set: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            inputs.embedding_sets[id] = Some(CategoryEmbeddingSet::new(id, set).unwrap());
            let bits: Vec<u8> = (0..6).map(|b| ((b + id) % 3 == 0) as u8).collect();
            inputs.labels[id] = Some(AttributeLabelVector::new(id, bits).unwrap());
        }
        let base: BTreeSet<usize> = [0, 1].into_iter().collect();
        let embedding = build_knowledge_matrix(Case::Embedding, &base, &inputs).unwrap();
        let label = build_knowledge_matrix(Case::Label, &base, &inputs).unwrap();
        let mixed = build_knowledge_matrix(Case::Mixed, &base, &inputs).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if base.contains(&i) && base.contains(&j) {
                    embedding.get(i, j)
                } else if i == j {
                    1.0
                } else {
                    label.get(i, j)
                };
                assert_eq!(mixed.get(i, j).to_bits(), want.to_bits(), "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn missing_inputs_name_the_categories() {
        let mut inputs = KnowledgeInputs::new(vec!["a".into(), "b".into()]);
        inputs.labels[0] = Some(labels(0, &[1]));
        let err = build_knowledge_matrix(Case::Label, &BTreeSet::new(), &inputs)
            .unwrap_err()
            .to_string();
        assert!(err.contains('b'), "{err}");
    }

    #[test]
    fn counter_categories_break_ties_by_index() {
        let names: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let values = vec![
            1.0, 0.9, 0.2, 0.9, //
            0.9, 1.0, 0.3, 0.1, //
            0.2, 0.3, 1.0, 0.4, //
            0.9, 0.1, 0.4, 1.0,
        ];
        let m = KnowledgeMatrix::from_values(names, values).unwrap();
        assert_eq!(top_counter_categories(&m, 0, 2).unwrap(), vec![1, 3]);
        // k_e = C-1 returns everyone else, sorted.
        assert_eq!(top_counter_categories(&m, 0, 3).unwrap(), vec![1, 3, 2]);
        assert!(top_counter_categories(&m, 0, 4).is_err());
    }

    #[test]
    fn two_categories_counter_is_forced() {
        let m = KnowledgeMatrix::from_values(
            vec!["a".into(), "b".into()],
            vec![1.0, 0.3, 0.3, 1.0],
        )
        .unwrap();
        assert_eq!(top_counter_categories(&m, 0, 1).unwrap(), vec![1]);
        assert_eq!(top_counter_categories(&m, 1, 1).unwrap(), vec![0]);
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let names: Vec<String> = vec!["cat".into(), "dog".into(), "car".into()];
        let mut inputs = KnowledgeInputs::new(names);
        inputs.labels[0] = Some(labels(0, &[1, 1, 0, 1]));
        inputs.labels[1] = Some(labels(1, &[1, 1, 1, 0]));
        inputs.labels[2] = Some(labels(2, &[0, 0, 1, 1]));
        let m = build_knowledge_matrix(Case::Label, &BTreeSet::new(), &inputs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zeta.csv");
        m.write_csv(&path).unwrap();
        let back = KnowledgeMatrix::read_csv(&path).unwrap();
        assert_eq!(back.names(), m.names());
        for (a, b) in m.values().iter().zip(back.values().iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn labels_json_round_trip_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.json");
        let names = vec!["zebra".into(), "ant".into()];
        let lab = vec![labels(0, &[1, 0]), labels(1, &[0, 1])];
        write_attribute_labels_json(&path, &names, &lab).unwrap();
        let (rnames, rlabels) = read_attribute_labels_json(&path).unwrap();
        assert_eq!(rnames, names);
        assert_eq!(rlabels[0].bits, vec![1, 0]);
        assert_eq!(rlabels[1].bits, vec![0, 1]);
    }
}
