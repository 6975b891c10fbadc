//! Superset construction from a large external corpus: cluster a subsample,
//! de-duplicate within each cluster, index every cluster on its own and
//! retrieve target-relevant samples under a distance cutoff.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::formats::EmbeddingFile;
use crate::index::{check_radius, IndexConfig, VectorIndex};
use crate::vector::{cosine_distance, dot, EmbeddingVector};

/// Seeded uniform sample of `round(fraction * n)` positions (at least one),
/// returned in ascending order.
pub fn subsample(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Empty("pool"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside (0, 1]")));
    }
    let size = ((fraction * n as f64).round() as usize).clamp(1, n);
    if size == n {
        return Ok((0..n).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, size).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub k: usize,
    pub dim: usize,
    /// Row-major unit centroids.
    pub centroids: Vec<f32>,
    /// Cluster of each input vector.
    pub assignment: Vec<usize>,
    /// Total cosine distance to the assigned centroid after each assignment step.
    pub cost_history: Vec<f64>,
}

impl ClusterAssignment {
    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn cost(&self) -> f64 {
        self.cost_history.last().copied().unwrap_or(0.0)
    }

    /// Index of the centroid nearest to `v`; ties go to the lower index.
    pub fn nearest(&self, v: &[f32]) -> usize {
        self.nearest_many(v, 1)[0]
    }

    /// The `q` nearest centroids to `v`, nearest first.
    pub fn nearest_many(&self, v: &[f32], q: usize) -> Vec<usize> {
        let mut scored: Vec<(f32, usize)> = (0..self.k)
            .map(|c| (cosine_distance(v, self.centroid(c)), c))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.truncate(q.max(1));
        scored.into_iter().map(|(_, c)| c).collect()
    }
}

fn normalize_into(sum: &[f64], out: &mut [f32]) -> bool {
    let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 1e-12) {
        return false;
    }
    out.iter_mut().zip(sum).for_each(|(o, s)| *o = (s / norm) as f32);
    true
}

/// Spherical k-means over unit vectors with k-means++ seeding.
///
/// Every iteration assigns each vector to its nearest centroid and moves each
/// centroid to the normalized mean of its members. A cluster that ends up
/// empty keeps its previous centroid.
pub fn kmeans(vectors: &[&[f32]], k: usize, max_iters: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = vectors.len();
    if n == 0 {
        return Err(Error::Empty("vectors"));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cluster count {k} not in 1..={n}")));
    }
    let dim = vectors[0].len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; n];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(vectors[first]);
    let mut nearest: Vec<f64> = vectors
        .iter()
        .map(|v| cosine_distance(v, vectors[first]) as f64)
        .collect();
    for _ in 1..k {
        let weights: Vec<f64> = nearest
            .iter()
            .zip(&chosen)
            .map(|(&d, &c)| if c { 0.0 } else { d * d })
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // Everything left coincides with a centroid already.
            let open: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            open[rng.random_range(0..open.len())]
        };
        chosen[pick] = true;
        centroids.extend_from_slice(vectors[pick]);
        for (d, v) in nearest.iter_mut().zip(vectors) {
            *d = d.min(cosine_distance(v, vectors[pick]) as f64);
        }
    }

    let mut result = ClusterAssignment {
        k,
        dim,
        centroids,
        assignment: vec![usize::MAX; n],
        cost_history: Vec::new(),
    };
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut cost = 0.0;
        for (i, v) in vectors.iter().enumerate() {
            let c = result.nearest(v);
            cost += cosine_distance(v, result.centroid(c)) as f64;
            if result.assignment[i] != c {
                result.assignment[i] = c;
                changed = true;
            }
        }
        result.cost_history.push(cost);
        if !changed {
            break;
        }
        let mut sums = vec![0.0f64; k * dim];
        for (v, &c) in vectors.iter().zip(&result.assignment) {
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(v.iter()) {
                *s += x as f64;
            }
        }
        for c in 0..k {
            normalize_into(
                &sums[c * dim..(c + 1) * dim],
                &mut result.centroids[c * dim..(c + 1) * dim],
            );
        }
    }
    Ok(result)
}

/// Greedy de-duplication in input order: a member is dropped iff an already
/// kept member lies within `threshold` cosine distance. Returns the positions
/// of the kept members.
pub fn dedup_cluster(members: &[&[f32]], threshold: f32) -> Result<Vec<usize>> {
    check_radius(threshold)?;
    let mut kept: Vec<usize> = Vec::new();
    for (i, v) in members.iter().enumerate() {
        if !kept.iter().any(|&j| cosine_distance(v, members[j]) <= threshold) {
            kept.push(i);
        }
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    /// Share of the corpus used to fit the clustering.
    pub subsample_fraction: f64,
    /// Cluster count; `None` means `max(1, n / 2000)`.
    pub clusters: Option<usize>,
    pub max_iters: usize,
    pub dedup_threshold: f32,
    /// Clusters searched per target.
    pub route: usize,
    pub seed: u64,
    pub index: IndexConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            subsample_fraction: 1.0,
            clusters: None,
            max_iters: 50,
            dedup_threshold: 0.02,
            route: 3,
            seed: 0,
            index: IndexConfig::default(),
        }
    }
}

pub fn default_cluster_count(n: usize) -> usize {
    (n / 2000).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalHit {
    /// Position of the target that reached this hit first at the smallest distance.
    pub target: usize,
    pub id: String,
    pub distance: f32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CorpusStats {
    pub total: usize,
    pub invalid: usize,
    pub kept: usize,
    pub clusters: usize,
    pub largest_cluster: usize,
}

/// A clustered, de-duplicated and indexed corpus.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    dim: usize,
    ids: Vec<String>,
    clustering: ClusterAssignment,
    /// Per cluster, indexed by corpus row.
    clusters: Vec<VectorIndex>,
    kept: Vec<usize>,
    stats: CorpusStats,
}

impl CorpusIndex {
    /// Runs the whole pipeline over `file`. Rows that cannot be normalized
    /// (zero or non-finite) are skipped and counted as invalid.
    pub fn build(file: &EmbeddingFile, config: &CorpusConfig) -> Result<Self> {
        let dim = file.dim();
        let mut rows: Vec<usize> = Vec::with_capacity(file.len());
        let mut unit: Vec<Option<EmbeddingVector>> = Vec::with_capacity(file.len());
        for (i, row) in file.rows().enumerate() {
            let v = EmbeddingVector::new(row.to_vec()).ok();
            if v.is_some() {
                rows.push(i);
            }
            unit.push(v);
        }
        if rows.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        let n = rows.len();
        let slice = |i: usize| unit[i].as_ref().expect("valid row").as_slice();

        let fit = subsample(n, config.subsample_fraction, config.seed)?;
        let k = config
            .clusters
            .unwrap_or_else(|| default_cluster_count(n))
            .min(fit.len());
        let fit_vectors: Vec<&[f32]> = fit.iter().map(|&j| slice(rows[j])).collect();
        let mut clustering = kmeans(&fit_vectors, k, config.max_iters, config.seed)?;

        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for &i in &rows {
            members[clustering.nearest(slice(i))].push(i);
        }
        clustering.assignment = vec![usize::MAX; file.len()];
        for (c, m) in members.iter().enumerate() {
            m.iter().for_each(|&i| clustering.assignment[i] = c);
        }

        let mut clusters = Vec::with_capacity(k);
        let mut kept = Vec::new();
        for (c, m) in members.iter().enumerate() {
            let vs: Vec<&[f32]> = m.iter().map(|&i| slice(i)).collect();
            let keep = dedup_cluster(&vs, config.dedup_threshold)?;
            let mut index_config = config.index.clone();
            index_config.seed = config.index.seed.wrapping_add(c as u64);
            let mut index = VectorIndex::new(dim, index_config);
            for j in keep {
                let row = m[j];
                index.insert(row as u64, unit[row].as_ref().expect("valid row"))?;
                kept.push(row);
            }
            clusters.push(index);
        }
        kept.sort_unstable();

        let stats = CorpusStats {
            total: file.len(),
            invalid: file.len() - n,
            kept: kept.len(),
            clusters: k,
            largest_cluster: clusters.iter().map(VectorIndex::len).max().unwrap_or(0),
        };
        Ok(Self {
            dim,
            ids: (0..file.len()).map(|i| file.id(i)).collect(),
            clustering,
            clusters,
            kept,
            stats,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn clustering(&self) -> &ClusterAssignment {
        &self.clustering
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }

    /// Corpus rows that survived de-duplication, ascending.
    pub fn kept_rows(&self) -> &[usize] {
        &self.kept
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn vector(&self, row: usize) -> Option<&[f32]> {
        let c = *self.clustering.assignment.get(row)?;
        self.clusters.get(c)?.vector(row as u64)
    }

    /// The `k` nearest kept rows to `target` within `max_distance`, searching
    /// the `route` nearest clusters. Sorted by distance, then row.
    pub fn search(
        &self,
        target: &EmbeddingVector,
        k: usize,
        max_distance: f32,
        route: usize,
    ) -> Result<Vec<(usize, f32)>> {
        if target.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: target.dim(),
            });
        }
        check_radius(max_distance)?;
        let mut hits: Vec<(usize, f32)> = Vec::new();
        for c in self.clustering.nearest_many(target.as_slice(), route) {
            hits.extend(
                self.clusters[c]
                    .knn(target, k)?
                    .into_iter()
                    .filter(|h| h.distance <= max_distance)
                    .map(|h| (h.id as usize, h.distance)),
            );
        }
        hits.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        hits.truncate(k);
        Ok(hits)
    }

    /// Per-target retrieval merged across targets: each corpus row appears
    /// once, at the smallest distance any target reached it. Sorted by
    /// distance, then id.
    pub fn retrieve(
        &self,
        targets: &[EmbeddingVector],
        k: usize,
        max_distance: f32,
        route: usize,
    ) -> Result<Vec<RetrievalHit>> {
        let mut best: HashMap<usize, (f32, usize)> = HashMap::new();
        for (t, target) in targets.iter().enumerate() {
            for (row, d) in self.search(target, k, max_distance, route)? {
                best.entry(row)
                    .and_modify(|e| {
                        if d < e.0 {
                            *e = (d, t);
                        }
                    })
                    .or_insert((d, t));
            }
        }
        let mut hits: Vec<RetrievalHit> = best
            .into_iter()
            .map(|(row, (distance, target))| RetrievalHit {
                target,
                id: self.ids[row].clone(),
                distance,
            })
            .collect();
        hits.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id)));
        Ok(hits)
    }
}

#[derive(Serialize)]
struct ManifestLine<'a> {
    target: &'a str,
    hit: &'a str,
    distance: f32,
}

/// Writes one JSON object per hit: `{"target", "hit", "distance"}`.
pub fn write_manifest<W: Write>(mut out: W, hits: &[RetrievalHit], target_ids: &[String]) -> Result<()> {
    for h in hits {
        let line = ManifestLine {
            target: &target_ids[h.target],
            hit: &h.id,
            distance: h.distance,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Exact top-`k` over `rows` of `vectors`, for checking routed retrieval.
pub fn exact_top_k(vectors: &[&[f32]], q: &[f32], k: usize) -> Vec<usize> {
    let mut scored: Vec<(f32, usize)> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| (-dot(q, v), i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn unit(v: &[f32]) -> Vec<f32> {
        EmbeddingVector::new(v.to_vec()).unwrap().into_inner()
    }

    fn at_distance(d: f32) -> Vec<f32> {
        let c = 1.0 - d;
        vec![c, (1.0 - c * c).max(0.0).sqrt()]
    }

    fn refs(v: &[Vec<f32>]) -> Vec<&[f32]> {
        v.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn subsample_sizes_and_determinism() {
        assert_eq!(subsample(7, 1.0, 3).unwrap(), (0..7).collect::<Vec<_>>());
        let half = subsample(10, 0.5, 3).unwrap();
        assert_eq!(half.len(), 5);
        assert!(half.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(half, subsample(10, 0.5, 3).unwrap());
        assert!(subsample(0, 0.5, 0).is_err());
        assert!(subsample(5, 0.0, 0).is_err());
        assert!(subsample(5, 1.5, 0).is_err());
        assert_eq!(subsample(50, 0.001, 0).unwrap().len(), 1);
    }

    #[test]
    fn kmeans_with_one_cluster_per_point_has_zero_cost() {
        let pts: Vec<Vec<f32>> = (0..6).map(|i| unit(&[1.0, i as f32, (i * i) as f32])).collect();
        let r = kmeans(&refs(&pts), 6, 20, 1).unwrap();
        assert!(r.cost() < 1e-6);
        let mut seen = r.assignment.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 6);
        assert!(kmeans(&refs(&pts), 7, 20, 1).is_err());
    }

    #[test]
    fn kmeans_recovers_two_far_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0f32, 0.05).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for i in 0..80 {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let v: Vec<f32> = (0..8)
                .map(|d| if d == 0 { sign } else { 0.0 } + noise.sample(&mut rng))
                .collect();
            pts.push(unit(&v));
            truth.push(i % 2);
        }
        let r = kmeans(&refs(&pts), 2, 50, 4).unwrap();
        let flip = r.assignment[0] != truth[0];
        for (a, t) in r.assignment.iter().zip(&truth) {
            assert_eq!(*a, if flip { 1 - t } else { *t });
        }
        assert!(r.centroids.chunks(8).all(|c| (dot(c, c) - 1.0).abs() < 1e-5));
    }

    #[test]
    fn kmeans_cost_beats_random_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Normal::new(0.0f32, 1.0).unwrap();
        let pts: Vec<Vec<f32>> = (0..300)
            .map(|_| unit(&(0..6).map(|_| g.sample(&mut rng)).collect::<Vec<_>>()))
            .collect();
        let r = kmeans(&refs(&pts), 5, 100, 0).unwrap();
        assert!(r.cost_history.windows(2).all(|w| w[1] <= w[0] + 1e-6));
        let random: f64 = pts
            .iter()
            .map(|p| cosine_distance(p, r.centroid(rng.random_range(0..5))) as f64)
            .sum();
        assert!(r.cost() <= random);
    }

    #[test]
    fn dedup_examples() {
        let same = vec![unit(&[1.0, 2.0]), unit(&[1.0, 2.0])];
        assert_eq!(dedup_cluster(&refs(&same), 0.2).unwrap(), vec![0]);
        assert_eq!(dedup_cluster(&refs(&same), 0.0).unwrap(), vec![0]);
        let near = vec![at_distance(0.0), at_distance(0.1)];
        assert_eq!(dedup_cluster(&refs(&near), 0.2).unwrap(), vec![0]);
        let far = vec![at_distance(0.0), at_distance(0.3)];
        assert_eq!(dedup_cluster(&refs(&far), 0.2).unwrap(), vec![0, 1]);
        assert_eq!(dedup_cluster(&refs(&near), 0.0).unwrap(), vec![0, 1]);
        assert!(dedup_cluster(&refs(&near), 2.5).is_err());
    }

    fn corpus(rows: &[Vec<f32>]) -> EmbeddingFile {
        let dim = rows[0].len();
        let ids = (0..rows.len()).map(|i| format!("c{i}")).collect();
        EmbeddingFile::from_rows(dim, rows.concat(), Some(ids)).unwrap()
    }

    #[test]
    fn retrieval_examples() {
        let rows: Vec<Vec<f32>> = vec![
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.7, 0.3, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0],
        ];
        let cfg = CorpusConfig {
            clusters: Some(2),
            ..CorpusConfig::default()
        };
        let c = CorpusIndex::build(&corpus(&rows), &cfg).unwrap();
        assert_eq!(c.stats().invalid, 1);
        assert_eq!(c.stats().kept, 4);
        assert!(!c.kept_rows().contains(&1));

        let q = EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        let hits = c.retrieve(std::slice::from_ref(&q), 3, 0.2, 3).unwrap();
        assert_eq!(hits[0].id, "c0");
        assert_eq!(hits[0].distance, 0.0);
        assert!(hits.iter().all(|h| h.distance <= 0.2));

        let lonely = EmbeddingVector::new(vec![-1.0, -1.0, -1.0]).unwrap();
        assert!(c.retrieve(&[lonely], 5, 0.2, 3).unwrap().is_empty());
    }

    #[test]
    fn retrieve_merges_targets_by_id() {
        let rows: Vec<Vec<f32>> = (0..20).map(|i| unit(&[1.0, i as f32 * 0.01, 0.5])).collect();
        let c = CorpusIndex::build(&corpus(&rows), &CorpusConfig {
            dedup_threshold: 0.0,
            ..CorpusConfig::default()
        })
        .unwrap();
        let t1 = EmbeddingVector::new(rows[0].clone()).unwrap();
        let t2 = EmbeddingVector::new(rows[19].clone()).unwrap();
        let hits = c.retrieve(&[t1, t2], 20, 0.2, 1).unwrap();
        assert_eq!(hits.len(), 20);
        let mut ids: Vec<&str> = hits.iter().map(|h| h.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 20);
        let c19 = hits.iter().find(|h| h.id == "c19").unwrap();
        assert_eq!((c19.target, c19.distance), (1, 0.0));

        let mut out = Vec::new();
        write_manifest(&mut out, &hits[..2], &["a".into(), "b".into()]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["distance"], 0.0);
    }

    #[test]
    fn pipeline_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Normal::new(0.0f32, 1.0).unwrap();
        let rows: Vec<Vec<f32>> = (0..400).map(|_| (0..8).map(|_| g.sample(&mut rng)).collect()).collect();
        let cfg = CorpusConfig {
            subsample_fraction: 0.3,
            clusters: Some(4),
            dedup_threshold: 0.3,
            ..CorpusConfig::default()
        };
        let a = CorpusIndex::build(&corpus(&rows), &cfg).unwrap();
        let b = CorpusIndex::build(&corpus(&rows), &cfg).unwrap();
        assert_eq!(a.kept_rows(), b.kept_rows());
        assert_eq!(a.clustering(), b.clustering());
        let targets: Vec<EmbeddingVector> = rows[..5]
            .iter()
            .map(|r| EmbeddingVector::new(r.clone()).unwrap())
            .collect();
        assert_eq!(
            a.retrieve(&targets, 10, 0.5, 3).unwrap(),
            b.retrieve(&targets, 10, 0.5, 3).unwrap()
        );
    }

    fn unit_rows(dim: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
        prop::collection::vec(prop::collection::vec(-3i8..=3, dim), 1..40).prop_map(|rows| {
            rows.into_iter()
                .map(|r| {
                    let v: Vec<f32> = r.into_iter().map(f32::from).collect();
                    EmbeddingVector::new(v.clone())
                        .map(EmbeddingVector::into_inner)
                        .unwrap_or_else(|_| unit(&[1.0, 0.0, 0.0]))
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn dedup_is_idempotent_and_separated(rows in unit_rows(3), threshold in 0.0f32..1.0) {
            let all = refs(&rows);
            let kept = dedup_cluster(&all, threshold).unwrap();
            let survivors: Vec<&[f32]> = kept.iter().map(|&i| all[i]).collect();
            let again = dedup_cluster(&survivors, threshold).unwrap();
            prop_assert_eq!(again, (0..survivors.len()).collect::<Vec<_>>());
            for (i, a) in survivors.iter().enumerate() {
                for b in &survivors[i + 1..] {
                    prop_assert!(cosine_distance(a, b) > threshold);
                }
            }
        }

        #[test]
        fn retrieval_respects_cutoff(
            rows in unit_rows(3),
            cutoff in 0.0f32..0.6,
            seed in 0u64..50,
        ) {
            let cfg = CorpusConfig { clusters: Some(2.min(rows.len())), seed, ..CorpusConfig::default() };
            let c = CorpusIndex::build(&corpus(&rows), &cfg).unwrap();
            let kept: Vec<String> = c.kept_rows().iter().map(|&r| c.id(r).to_string()).collect();
            let targets: Vec<EmbeddingVector> = rows.iter().take(4)
                .map(|r| EmbeddingVector::new(r.clone()).unwrap()).collect();
            for h in c.retrieve(&targets, 5, cutoff, 3).unwrap() {
                prop_assert!(h.distance <= cutoff);
                prop_assert!(kept.contains(&h.id));
            }
        }
    }
}
