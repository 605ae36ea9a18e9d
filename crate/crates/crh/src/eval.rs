//! Retrieval evaluation (mean average precision) and semantic-alignment
//! evaluation (class prototypes, cosine similarity matrices, and Pearson
//! correlation over their strictly-upper-triangle entries).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::code::{codebook_distance_stats, hamming_distance, BinaryCode, DistanceStats};
use crate::data::LabelMask;
use crate::{Error, Result};

/// How queries with no relevant item in the (truncated) ranking enter the
/// mean: counted with AP 0, or excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroRelevantPolicy {
    CountAsZero,
    Exclude,
}

/// Mean average precision at cutoff `k` (`None` ranks the whole database).
///
/// The database is ranked by Hamming distance ascending with ties broken
/// stably by database index; an item is relevant if it shares at least one
/// label with the query.
pub fn map_at_k(
    db_codes: &[BinaryCode],
    db_labels: &[LabelMask],
    query_codes: &[BinaryCode],
    query_labels: &[LabelMask],
    k: Option<usize>,
    zero_relevant: ZeroRelevantPolicy,
) -> Result<f64> {
    if db_codes.is_empty() || query_codes.is_empty() {
        return Err(Error::InvalidParameter(
            "mAP needs a nonempty database and nonempty queries".into(),
        ));
    }
    if db_codes.len() != db_labels.len() || query_codes.len() != query_labels.len() {
        return Err(Error::InvalidParameter(
            "codes and labels must have matching lengths".into(),
        ));
    }
    let cutoff = k.unwrap_or(db_codes.len());

    let aps: Vec<Result<Option<f64>>> = query_codes
        .par_iter()
        .zip(query_labels.par_iter())
        .map(|(code, labels)| {
            let mut ranked: Vec<(u32, usize)> = db_codes
                .iter()
                .enumerate()
                .map(|(idx, db)| Ok((hamming_distance(code, db)?, idx)))
                .collect::<Result<_>>()?;
            ranked.sort_unstable_by_key(|&(dist, idx)| (dist, idx));
            ranked.truncate(cutoff);

            let mut hits = 0u64;
            let mut precision_sum = 0.0;
            for (rank0, &(_, idx)) in ranked.iter().enumerate() {
                if labels.intersects(&db_labels[idx]) {
                    hits += 1;
                    precision_sum += hits as f64 / (rank0 + 1) as f64;
                }
            }
            Ok(if hits == 0 {
                match zero_relevant {
                    ZeroRelevantPolicy::CountAsZero => Some(0.0),
                    ZeroRelevantPolicy::Exclude => None,
                }
            } else {
                Some(precision_sum / hits as f64)
            })
        })
        .collect();

    let mut total = 0.0;
    let mut counted = 0usize;
    for ap in aps {
        if let Some(ap) = ap? {
            total += ap;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::InvalidParameter(
            "no queries with relevant items remain after exclusion".into(),
        ));
    }
    Ok(total / counted as f64)
}

/// Per-class weighted mean embeddings, each sample weighted by
/// `1 / ||y||_1`.
pub fn class_prototypes(embeddings: &[Vec<f64>], labels: &[LabelMask]) -> Result<Vec<Vec<f64>>> {
    if embeddings.is_empty() || embeddings.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "{} embeddings vs {} label records",
            embeddings.len(),
            labels.len()
        )));
    }
    let dim = embeddings[0].len();
    let classes = labels[0].classes();
    let mut sums = vec![vec![0.0f64; dim]; classes];
    let mut weights = vec![0.0f64; classes];
    for (emb, mask) in embeddings.iter().zip(labels) {
        if emb.len() != dim {
            return Err(Error::LengthMismatch {
                left: dim,
                right: emb.len(),
            });
        }
        let w = 1.0 / mask.count() as f64;
        for c in mask.iter() {
            weights[c] += w;
            for (s, &e) in sums[c].iter_mut().zip(emb) {
                *s += w * e;
            }
        }
    }
    for (class, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            return Err(Error::EmptyClass { class });
        }
    }
    Ok(sums
        .into_iter()
        .zip(&weights)
        .map(|(s, &w)| s.into_iter().map(|v| v / w).collect())
        .collect())
}

/// Symmetric cosine matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl SimilarityMatrix {
    /// Cosine similarities of real vectors; errors on a zero vector.
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let size = vectors.len();
        if size == 0 {
            return Err(Error::InvalidParameter("no vectors".into()));
        }
        let norms: Vec<f64> = vectors
            .iter()
            .map(|v| v.iter().map(|a| a * a).sum::<f64>().sqrt())
            .collect();
        if let Some(i) = norms.iter().position(|&n| n == 0.0) {
            return Err(Error::InvalidParameter(format!("vector {i} has zero norm")));
        }
        let mut entries = vec![0.0; size * size];
        for i in 0..size {
            entries[i * size + i] = 1.0;
            for j in i + 1..size {
                let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
                let cos = dot / (norms[i] * norms[j]);
                entries[i * size + j] = cos;
                entries[j * size + i] = cos;
            }
        }
        Ok(Self { size, entries })
    }

    /// Similarities of `{-1,+1}` centers via the exact identity
    /// `cos = 1 - 2 * hamming / K`.
    pub fn from_centers(centers: &[BinaryCode]) -> Result<Self> {
        let size = centers.len();
        if size == 0 {
            return Err(Error::InvalidParameter("no centers".into()));
        }
        let k = centers[0].len() as f64;
        let mut entries = vec![0.0; size * size];
        for i in 0..size {
            entries[i * size + i] = 1.0;
            for j in i + 1..size {
                let h = hamming_distance(&centers[i], &centers[j])? as f64;
                let cos = 1.0 - 2.0 * h / k;
                entries[i * size + j] = cos;
                entries[j * size + i] = cos;
            }
        }
        Ok(Self { size, entries })
    }

    pub fn from_entries(size: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != size * size {
            return Err(Error::InvalidParameter(format!(
                "{} entries for a {size}x{size} matrix",
                entries.len()
            )));
        }
        Ok(Self { size, entries })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    /// Strictly-upper-triangle entries in row-major order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.size * (self.size - 1) / 2);
        for i in 0..self.size {
            for j in i + 1..self.size {
                out.push(self.get(i, j));
            }
        }
        out
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.size)
            .map(|i| self.entries[i * self.size..(i + 1) * self.size].to_vec())
            .collect()
    }
}

/// Pearson correlation between the strictly-upper-triangle entries of two
/// equally sized similarity matrices.
pub fn pcc(a: &SimilarityMatrix, b: &SimilarityMatrix) -> Result<f64> {
    if a.size() != b.size() {
        return Err(Error::LengthMismatch {
            left: a.size(),
            right: b.size(),
        });
    }
    if a.size() < 3 {
        return Err(Error::InvalidParameter(format!(
            "Pearson correlation needs at least 3 classes, got {}",
            a.size()
        )));
    }
    let xs = a.upper_triangle();
    let ys = b.upper_triangle();
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(Error::InvalidParameter(
            "constant similarity matrix: zero variance in the upper triangle".into(),
        ));
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

/// Semantic-alignment summary: correlation of the center similarities with
/// the reference similarities, plus center distance statistics.
#[derive(Debug, Clone, Copy)]
pub struct AlignmentReport {
    pub pcc: f64,
    pub stats: DistanceStats,
}

/// Builds reference similarities from embeddings and compares them with the
/// center similarities.
pub fn semantic_alignment_report(
    centers: &[BinaryCode],
    embeddings: &[Vec<f64>],
    labels: &[LabelMask],
) -> Result<AlignmentReport> {
    let prototypes = class_prototypes(embeddings, labels)?;
    let reference = SimilarityMatrix::from_vectors(&prototypes)?;
    alignment_against_reference(centers, &reference)
}

/// Same as [`semantic_alignment_report`] but with a precomputed reference
/// similarity matrix.
pub fn alignment_against_reference(
    centers: &[BinaryCode],
    reference: &SimilarityMatrix,
) -> Result<AlignmentReport> {
    let center_sim = SimilarityMatrix::from_centers(centers)?;
    Ok(AlignmentReport {
        pcc: pcc(&center_sim, reference)?,
        stats: codebook_distance_stats(centers)?,
    })
}

/// Metrics output schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsFile {
    pub map: f64,
    pub pcc: Option<f64>,
    pub d_min: Option<u32>,
    pub d_avg: Option<f64>,
    pub k: Option<usize>,
    pub num_queries: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::sample_codebook_unique;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn mask(classes: usize, members: &[usize]) -> LabelMask {
        LabelMask::from_classes(classes, members).unwrap()
    }

    fn code(signs: &[i8]) -> BinaryCode {
        BinaryCode::from_signs(signs)
    }

    // Definition-level oracle: explicit ranking and average precision.
    fn oracle_map(
        db: &[(BinaryCode, LabelMask)],
        queries: &[(BinaryCode, LabelMask)],
        k: Option<usize>,
    ) -> f64 {
        let cutoff = k.unwrap_or(db.len());
        let mut total = 0.0;
        for (qc, ql) in queries {
            let mut order: Vec<usize> = (0..db.len()).collect();
            order.sort_by(|&a, &b| {
                let da = hamming_distance(qc, &db[a].0).unwrap();
                let db_ = hamming_distance(qc, &db[b].0).unwrap();
                (da, a).cmp(&(db_, b))
            });
            let mut hits = 0.0;
            let mut acc = 0.0;
            for (rank0, &idx) in order.iter().take(cutoff).enumerate() {
                if ql.intersects(&db[idx].1) {
                    hits += 1.0;
                    acc += hits / (rank0 as f64 + 1.0);
                }
            }
            if hits > 0.0 {
                total += acc / hits;
            }
        }
        total / queries.len() as f64
    }

    #[test]
    fn map_perfect_ranking_is_one() {
        let db = vec![
            (code(&[1, 1, 1, 1]), mask(2, &[0])),
            (code(&[1, 1, 1, -1]), mask(2, &[0])),
            (code(&[-1, -1, -1, -1]), mask(2, &[1])),
        ];
        let (codes, labels): (Vec<_>, Vec<_>) = db.into_iter().unzip();
        let q = vec![code(&[1, 1, 1, 1])];
        let ql = vec![mask(2, &[0])];
        let map = map_at_k(
            &codes,
            &labels,
            &q,
            &ql,
            None,
            ZeroRelevantPolicy::CountAsZero,
        )
        .unwrap();
        assert_eq!(map, 1.0);
    }

    #[test]
    fn map_single_hit_at_rank_two() {
        let codes = vec![code(&[1, 1]), code(&[1, -1])];
        let labels = vec![mask(2, &[1]), mask(2, &[0])];
        let q = vec![code(&[1, 1])];
        let ql = vec![mask(2, &[0])];
        let map = map_at_k(
            &codes,
            &labels,
            &q,
            &ql,
            Some(2),
            ZeroRelevantPolicy::CountAsZero,
        )
        .unwrap();
        assert_eq!(map, 0.5);
    }

    #[test]
    fn map_zero_relevant_policies() {
        let codes = vec![code(&[1, 1])];
        let labels = vec![mask(2, &[1])];
        let q = vec![code(&[1, 1]), code(&[-1, -1])];
        let ql = vec![mask(2, &[0]), mask(2, &[1])];
        let counted = map_at_k(
            &codes,
            &labels,
            &q,
            &ql,
            None,
            ZeroRelevantPolicy::CountAsZero,
        )
        .unwrap();
        assert_eq!(counted, 0.5); // (0 + 1) / 2
        let excluded =
            map_at_k(&codes, &labels, &q, &ql, None, ZeroRelevantPolicy::Exclude).unwrap();
        assert_eq!(excluded, 1.0);
    }

    #[test]
    fn map_matches_definition_oracle() {
        let mut r = rng(20);
        for trial in 0..50 {
            let classes = 3;
            let k_bits = 6;
            let db: Vec<(BinaryCode, LabelMask)> = (0..12)
                .map(|_| {
                    let signs: Vec<i8> = (0..k_bits)
                        .map(|_| if r.random::<bool>() { 1 } else { -1 })
                        .collect();
                    (code(&signs), mask(classes, &[r.random_range(0..classes)]))
                })
                .collect();
            let queries: Vec<(BinaryCode, LabelMask)> = (0..5)
                .map(|_| {
                    let signs: Vec<i8> = (0..k_bits)
                        .map(|_| if r.random::<bool>() { 1 } else { -1 })
                        .collect();
                    (code(&signs), mask(classes, &[r.random_range(0..classes)]))
                })
                .collect();
            let cutoff = if trial % 2 == 0 { None } else { Some(5) };
            let (codes, labels): (Vec<_>, Vec<_>) = db.iter().cloned().unzip();
            let (qc, ql): (Vec<_>, Vec<_>) = queries.iter().cloned().unzip();
            let got = map_at_k(
                &codes,
                &labels,
                &qc,
                &ql,
                cutoff,
                ZeroRelevantPolicy::CountAsZero,
            )
            .unwrap();
            let expect = oracle_map(&db, &queries, cutoff);
            assert!(
                (got - expect).abs() < 1e-12,
                "trial {trial}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn map_tie_handling_is_stable_by_index() {
        // Several identical codes: shuffling the candidate list before
        // sorting must not change the ranking because the sort key includes
        // the index.
        let mut r = rng(21);
        let codes = vec![code(&[1, 1]); 6];
        let q = code(&[1, 1]);

        let mut candidates: Vec<(u32, usize)> = codes
            .iter()
            .enumerate()
            .map(|(i, c)| (hamming_distance(&q, c).unwrap(), i))
            .collect();
        let natural = {
            let mut v = candidates.clone();
            v.sort_unstable_by_key(|&(d, i)| (d, i));
            v
        };
        for _ in 0..10 {
            candidates.shuffle(&mut r);
            let mut sorted = candidates.clone();
            sorted.sort_unstable_by_key(|&(d, i)| (d, i));
            assert_eq!(sorted, natural);
        }
    }

    #[test]
    fn map_rejects_empty_inputs() {
        let codes = vec![code(&[1])];
        let labels = vec![mask(1, &[0])];
        assert!(map_at_k(
            &[],
            &[],
            &codes,
            &labels,
            None,
            ZeroRelevantPolicy::CountAsZero
        )
        .is_err());
        assert!(map_at_k(
            &codes,
            &labels,
            &[],
            &[],
            None,
            ZeroRelevantPolicy::CountAsZero
        )
        .is_err());
    }

    #[test]
    fn prototypes_examples() {
        let embeddings = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let labels = vec![mask(1, &[0]), mask(1, &[0])];
        let protos = class_prototypes(&embeddings, &labels).unwrap();
        assert_eq!(protos[0], vec![0.5, 0.5]);

        // weighted: (a/2 + b) / (3/2)
        let a = vec![2.0, 4.0];
        let b = vec![1.0, -1.0];
        let embeddings = vec![a.clone(), b.clone()];
        let labels = vec![mask(2, &[0, 1]), mask(2, &[0])];
        let protos = class_prototypes(&embeddings, &labels).unwrap();
        for (i, p) in protos[0].iter().enumerate() {
            let expect = (0.5 * a[i] + b[i]) / 1.5;
            assert!((p - expect).abs() < 1e-12);
        }

        let err = class_prototypes(&embeddings, &vec![mask(3, &[0]), mask(3, &[1])]).unwrap_err();
        assert!(matches!(err, Error::EmptyClass { class: 2 }));
    }

    #[test]
    fn prototypes_reduce_to_plain_mean_on_single_label() {
        let mut r = rng(22);
        let embeddings: Vec<Vec<f64>> = (0..9)
            .map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<LabelMask> = (0..9).map(|i| mask(3, &[i % 3])).collect();
        let protos = class_prototypes(&embeddings, &labels).unwrap();
        for c in 0..3 {
            let members: Vec<&Vec<f64>> = embeddings
                .iter()
                .zip(&labels)
                .filter(|(_, m)| m.contains(c))
                .map(|(e, _)| e)
                .collect();
            for d in 0..3 {
                let mean: f64 = members.iter().map(|e| e[d]).sum::<f64>() / members.len() as f64;
                assert!((protos[c][d] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn similarity_examples() {
        let centers = vec![
            code(&[1, 1, -1, -1]),
            code(&[1, 1, -1, -1]),
            code(&[1, -1, 1, -1]),
        ];
        let sim = SimilarityMatrix::from_centers(&centers).unwrap();
        assert_eq!(sim.get(0, 1), 1.0);
        assert_eq!(sim.get(0, 2), 0.0); // distance K/2
        assert_eq!(sim.get(0, 0), 1.0);

        assert!(SimilarityMatrix::from_vectors(&[vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn center_similarity_matches_cosine_within_float_error() {
        let mut r = rng(23);
        let centers = sample_codebook_unique(9, 6, &mut r)
            .unwrap()
            .codes()
            .to_vec();
        let closed = SimilarityMatrix::from_centers(&centers).unwrap();
        let generic = SimilarityMatrix::from_vectors(
            &centers.iter().map(|c| c.to_signs_f64()).collect::<Vec<_>>(),
        )
        .unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert!((closed.get(i, j) - generic.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pcc_identity_and_negation() {
        let mut r = rng(24);
        let vectors: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let a = SimilarityMatrix::from_vectors(&vectors).unwrap();
        assert!((pcc(&a, &a).unwrap() - 1.0).abs() < 1e-12);

        let mut negated = a.clone();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    negated.entries[i * 5 + j] = -a.get(i, j);
                }
            }
        }
        assert!((pcc(&a, &negated).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pcc_of_independent_matrices_is_near_zero() {
        let mut values = Vec::new();
        for seed in 0..100 {
            let mut r = rng(1000 + seed);
            let make = |r: &mut ChaCha8Rng| {
                let vectors: Vec<Vec<f64>> = (0..50)
                    .map(|_| (0..8).map(|_| r.random_range(-1.0..1.0)).collect())
                    .collect();
                SimilarityMatrix::from_vectors(&vectors).unwrap()
            };
            let a = make(&mut r);
            let b = make(&mut r);
            let v = pcc(&a, &b).unwrap();
            assert!(v.abs() < 0.3, "seed {seed}: pcc {v}");
            values.push(v);
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        assert!(mean.abs() < 0.05, "mean pcc {mean}");
    }

    #[test]
    fn pcc_rejects_constant_matrices() {
        let constant = SimilarityMatrix::from_entries(3, vec![1.0; 9]).unwrap();
        let other =
            SimilarityMatrix::from_entries(3, vec![1.0, 0.5, 0.2, 0.5, 1.0, 0.1, 0.2, 0.1, 1.0])
                .unwrap();
        assert!(pcc(&constant, &other).is_err());
    }

    #[test]
    fn random_assignments_show_no_alignment() {
        // Untrained centers against hierarchical references: correlation
        // averages out near zero over seeds.
        use crate::data::{generate_synthetic, SynthSpec};
        let mut values = Vec::new();
        for seed in 0..20 {
            let synth = generate_synthetic(&SynthSpec {
                classes: 16,
                superclasses: 4,
                dim: 8,
                samples_per_class: 1,
                seed,
                ..SynthSpec::default()
            })
            .unwrap();
            let centers = sample_codebook_unique(16, 16, &mut rng(900 + seed))
                .unwrap()
                .codes()
                .to_vec();
            let report =
                alignment_against_reference(&centers, &synth.reference_similarity).unwrap();
            values.push(report.pcc);
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        assert!(mean.abs() < 0.1, "mean pcc of random assignments {mean}");
    }

    #[test]
    fn constant_embeddings_surface_zero_variance_error() {
        // dimension-1 constant embeddings give identical prototypes, whose
        // similarity matrix has no variance to correlate against.
        let embeddings = vec![vec![1.0]; 6];
        let labels: Vec<LabelMask> = (0..6).map(|i| mask(3, &[i % 3])).collect();
        let centers = sample_codebook_unique(8, 3, &mut rng(31))
            .unwrap()
            .codes()
            .to_vec();
        let err = semantic_alignment_report(&centers, &embeddings, &labels).unwrap_err();
        assert!(err.to_string().contains("zero variance"), "{err}");
    }

    #[test]
    fn alignment_is_perfect_when_centers_equal_prototypes() {
        let mut r = rng(25);
        let centers = sample_codebook_unique(8, 5, &mut r)
            .unwrap()
            .codes()
            .to_vec();
        // one sample per class, embedding = the +/-1 center itself
        let embeddings: Vec<Vec<f64>> = centers.iter().map(|c| c.to_signs_f64()).collect();
        let labels: Vec<LabelMask> = (0..5).map(|c| mask(5, &[c])).collect();
        let report = semantic_alignment_report(&centers, &embeddings, &labels).unwrap();
        assert!((report.pcc - 1.0).abs() < 1e-9, "pcc {}", report.pcc);
    }

    proptest! {
        #[test]
        fn pcc_is_invariant_under_positive_affine_maps(seed in 0u64..50, a in 0.1f64..5.0, b in -1.0f64..1.0) {
            let mut r = rng(seed);
            let vectors: Vec<Vec<f64>> =
                (0..6).map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
            let x = SimilarityMatrix::from_vectors(&vectors).unwrap();
            let vectors2: Vec<Vec<f64>> =
                (0..6).map(|_| (0..4).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
            let y = SimilarityMatrix::from_vectors(&vectors2).unwrap();

            let mut mapped = x.clone();
            for i in 0..6 {
                for j in 0..6 {
                    if i != j {
                        mapped.entries[i * 6 + j] = a * x.get(i, j) + b;
                    }
                }
            }
            let base = pcc(&x, &y).unwrap();
            let transformed = pcc(&mapped, &y).unwrap();
            prop_assert!((base - transformed).abs() < 1e-9);
        }

        #[test]
        fn pcc_is_invariant_under_simultaneous_class_permutation(seed in 0u64..50) {
            let mut r = rng(seed);
            let n = 6usize;
            let centers = sample_codebook_unique(8, n, &mut r).unwrap().codes().to_vec();
            let embeddings: Vec<Vec<f64>> =
                (0..n).map(|_| (0..5).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
            let labels: Vec<LabelMask> = (0..n).map(|c| mask(n, &[c])).collect();
            let base = semantic_alignment_report(&centers, &embeddings, &labels).unwrap();

            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut r);
            let centers_p: Vec<BinaryCode> = perm.iter().map(|&i| centers[i].clone()).collect();
            let embeddings_p: Vec<Vec<f64>> = perm.iter().map(|&i| embeddings[i].clone()).collect();
            let permuted = semantic_alignment_report(&centers_p, &embeddings_p, &labels).unwrap();
            prop_assert!((base.pcc - permuted.pcc).abs() < 1e-9);
        }

        #[test]
        fn map_stays_in_unit_interval(seed in 0u64..100) {
            let mut r = rng(seed);
            let n = r.random_range(2..10usize);
            let codes: Vec<BinaryCode> = (0..n)
                .map(|_| {
                    let signs: Vec<i8> = (0..5).map(|_| if r.random::<bool>() { 1 } else { -1 }).collect();
                    code(&signs)
                })
                .collect();
            let labels: Vec<LabelMask> = (0..n).map(|_| mask(3, &[r.random_range(0..3)])).collect();
            let v = map_at_k(&codes, &labels, &codes, &labels, Some(3), ZeroRelevantPolicy::CountAsZero).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
