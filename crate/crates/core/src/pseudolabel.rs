//! Ward-linkage agglomerative clustering and pseudo-attribute assignment
//! for machines without attribute labels.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetManifest, Split};
use crate::error::{Error, Result};

/// Error sum of squares around the centroid.
pub fn ess(points: &ArrayView2<f64>) -> Result<f64> {
    let mean = points
        .mean_axis(Axis(0))
        .filter(|_| points.nrows() > 0)
        .ok_or_else(|| Error::invalid("ESS of an empty cluster"))?;
    Ok(points
        .rows()
        .into_iter()
        .map(|r| {
            let d = &r - &mean;
            d.dot(&d)
        })
        .sum())
}

/// Increase in total ESS caused by merging two clusters.
pub fn ward_merge_cost(size_a: usize, mean_a: &ArrayView1<f64>, size_b: usize, mean_b: &ArrayView1<f64>) -> f64 {
    let (na, nb) = (size_a as f64, size_b as f64);
    let diff = mean_a - mean_b;
    na * nb / (na + nb) * diff.dot(&diff)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    /// Smaller of the two merged cluster ids.
    pub id_a: usize,
    pub id_b: usize,
    pub cost: f64,
    pub new_id: usize,
    pub new_size: usize,
}

/// Merge history. Leaves carry ids `0..n`; merge `t` creates id `n + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

/// Condensed index of pair `(i, j)`, `i < j`, among `n` slots.
fn pair_index(n: usize, i: usize, j: usize) -> usize {
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// Tolerance under which two merge costs count as tied, relative to the
/// larger cost or the largest initial pairwise cost, whichever is bigger.
/// Costs that are equal in exact arithmetic can differ in the last bits
/// depending on the order of the updates that produced them.
pub const TIE_RTOL: f64 = 1e-10;

fn same_cost(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= TIE_RTOL * a.abs().max(b.abs()).max(scale)
}

/// Greedy Ward agglomeration with Lance–Williams distance updates.
///
/// Each step merges the active pair with the smallest merge cost; equal
/// costs are resolved by the lexicographically smallest `(id_a, id_b)`.
pub fn agglomerate(embeddings: &ArrayView2<f64>) -> Result<Dendrogram> {
    let n = embeddings.nrows();
    if n < 2 {
        return Err(Error::invalid(format!("agglomeration needs at least 2 points, got {n}")));
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("clustering input".into()));
    }

    let mut dist = vec![0.0f64; n * (n - 1) / 2];
    for i in 0..n {
        for j in i + 1..n {
            let d = &embeddings.row(i) - &embeddings.row(j);
            dist[pair_index(n, i, j)] = 0.5 * d.dot(&d);
        }
    }
    let scale = dist.iter().fold(0.0f64, |m, &d| m.max(d));
    // slot -> (cluster id, size); slots of merged clusters are deactivated
    let mut ids: Vec<usize> = (0..n).collect();
    let mut sizes = vec![1usize; n];
    let mut active = vec![true; n];
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if !active[j] {
                    continue;
                }
                let d = dist[pair_index(n, i, j)];
                let (a, b) = if ids[i] < ids[j] { (ids[i], ids[j]) } else { (ids[j], ids[i]) };
                let better = match best {
                    None => true,
                    Some((bd, ba, bb, _, _)) => {
                        if same_cost(d, bd, scale) {
                            (a, b) < (ba, bb)
                        } else {
                            d < bd
                        }
                    }
                };
                if better {
                    best = Some((d, a, b, i, j));
                }
            }
        }
        let (cost, id_a, id_b, si, sj) = best.expect("at least two active clusters");
        let (ni, nj) = (sizes[si] as f64, sizes[sj] as f64);
        for k in 0..n {
            if !active[k] || k == si || k == sj {
                continue;
            }
            let nk = sizes[k] as f64;
            let dki = dist[pair_index(n, k.min(si), k.max(si))];
            let dkj = dist[pair_index(n, k.min(sj), k.max(sj))];
            let updated = ((ni + nk) * dki + (nj + nk) * dkj - nk * cost) / (ni + nj + nk);
            dist[pair_index(n, k.min(si), k.max(si))] = updated;
        }
        active[sj] = false;
        sizes[si] += sizes[sj];
        ids[si] = n + step;
        merges.push(Merge {
            id_a,
            id_b,
            cost,
            new_id: n + step,
            new_size: sizes[si],
        });
    }
    Ok(Dendrogram { n, merges })
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Flat clustering into `k` groups by undoing the last `k − 1` merges.
/// Labels are numbered in order of first appearance over the leaves.
pub fn cut(dendrogram: &Dendrogram, k: usize) -> Result<Vec<usize>> {
    let n = dendrogram.n;
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot cut {n} leaves into {k} clusters")));
    }
    let total = 2 * n - 1;
    let mut parent: Vec<usize> = (0..total).collect();
    for m in &dendrogram.merges[..n - k] {
        parent[m.id_a] = m.new_id;
        parent[m.id_b] = m.new_id;
    }
    let mut label_of_root: HashMap<usize, usize> = HashMap::new();
    let mut labels = Vec::with_capacity(n);
    for leaf in 0..n {
        let root = find(&mut parent, leaf);
        let next = label_of_root.len();
        labels.push(*label_of_root.entry(root).or_insert(next));
    }
    Ok(labels)
}

fn pairwise_distances(x: &ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let diff = &x.row(i) - &x.row(j);
            let v = diff.dot(&diff).sqrt();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Mean silhouette coefficient (Euclidean). Singleton clusters and points
/// with `max(a, b) == 0` contribute 0.
pub fn silhouette(distances: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = labels.len();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return 0.0;
    }
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        let li = labels[i];
        if counts[li] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += distances[[i, j]];
            }
        }
        let a = sums[li] / (counts[li] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != li && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KPolicy {
    Fixed { k: usize },
    Silhouette { k_min: usize, k_max: usize },
}

impl Default for KPolicy {
    fn default() -> Self {
        KPolicy::Silhouette { k_min: 2, k_max: 8 }
    }
}

impl std::fmt::Display for KPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KPolicy::Fixed { k } => write!(f, "fixed({k})"),
            KPolicy::Silhouette { k_min, k_max } => write!(f, "silhouette({k_min}..{k_max})"),
        }
    }
}

/// Number of clusters under `policy`; silhouette ties go to the smaller k.
pub fn select_k(dendrogram: &Dendrogram, embeddings: &ArrayView2<f64>, policy: KPolicy) -> Result<usize> {
    let n = dendrogram.n;
    match policy {
        KPolicy::Fixed { k } => {
            if k == 0 || k > n {
                return Err(Error::invalid(format!("fixed k={k} outside [1, {n}]")));
            }
            Ok(k)
        }
        KPolicy::Silhouette { k_min, k_max } => {
            if k_min < 2 || k_min > k_max || k_max > n {
                return Err(Error::invalid(format!(
                    "silhouette range {k_min}..{k_max} outside [2, {n}]"
                )));
            }
            if embeddings.nrows() != n {
                return Err(Error::shape("embeddings do not match dendrogram leaves"));
            }
            let d = pairwise_distances(embeddings);
            let mut best = (k_min, f64::NEG_INFINITY);
            for k in k_min..=k_max {
                let s = silhouette(&d, &cut(dendrogram, k)?);
                if s > best.1 {
                    best = (k, s);
                }
            }
            Ok(best.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeling {
    pub machine_type: String,
    /// (clip key, cluster label) for every training clip, manifest order.
    pub labels: Vec<(String, usize)>,
    pub k: usize,
    pub policy: KPolicy,
    pub dendrogram: Dendrogram,
}

pub const PSEUDO_PREFIX: &str = "pseudo";

pub fn pseudo_token(label: usize) -> String {
    format!("{PSEUDO_PREFIX}{label}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Fixed,
    Silhouette,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterOptions {
    pub policy: PolicyKind,
    /// Cluster count for the fixed policy.
    pub k: usize,
    pub k_min: usize,
    pub k_max: usize,
    /// L2-normalise embeddings before clustering.
    pub normalize: bool,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Silhouette,
            k: 3,
            k_min: 2,
            k_max: 8,
            normalize: true,
        }
    }
}

impl ClusterOptions {
    pub fn k_policy(&self) -> KPolicy {
        match self.policy {
            PolicyKind::Fixed => KPolicy::Fixed { k: self.k },
            PolicyKind::Silhouette => KPolicy::Silhouette {
                k_min: self.k_min,
                k_max: self.k_max,
            },
        }
    }
}

fn l2_normalized(x: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = x.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroEmbedding(format!("row {i}")));
        }
        row /= norm;
    }
    Ok(out)
}

/// Clusters the training clips (both domains) of one unattributed machine.
pub fn pseudo_label_machine(
    manifest: &DatasetManifest,
    machine: &str,
    embeddings: &HashMap<String, Array1<f64>>,
    options: ClusterOptions,
) -> Result<PseudoLabeling> {
    if manifest.is_attributed(machine) {
        return Err(Error::AttributedMachine(machine.to_string()));
    }
    if !manifest.machines.iter().any(|m| m == machine) {
        return Err(Error::UnknownMachine(machine.to_string()));
    }
    let keys: Vec<String> = manifest.clips_of(machine, Split::Train).map(|c| c.key()).collect();
    let dim = keys
        .first()
        .and_then(|k| embeddings.get(k))
        .map(|e| e.len())
        .ok_or_else(|| Error::MissingEmbedding(keys.first().cloned().unwrap_or_else(|| machine.to_string())))?;
    let mut x = Array2::zeros((keys.len(), dim));
    for (i, key) in keys.iter().enumerate() {
        let e = embeddings.get(key).ok_or_else(|| Error::MissingEmbedding(key.clone()))?;
        if e.len() != dim {
            return Err(Error::shape(format!("embedding of {key} has dimension {}", e.len())));
        }
        x.row_mut(i).assign(e);
    }
    if options.normalize {
        x = l2_normalized(&x)?;
    }
    let dendrogram = agglomerate(&x.view())?;
    let policy = options.k_policy();
    let k = select_k(&dendrogram, &x.view(), policy)?;
    let labels = cut(&dendrogram, k)?;
    Ok(PseudoLabeling {
        machine_type: machine.to_string(),
        labels: keys.into_iter().zip(labels).collect(),
        k,
        policy,
        dendrogram,
    })
}

/// Pseudo labels for every unattributed machine of the manifest.
pub fn assign_pseudo_attributes(
    manifest: &DatasetManifest,
    embeddings: &HashMap<String, Array1<f64>>,
    options: ClusterOptions,
) -> Result<Vec<PseudoLabeling>> {
    manifest
        .unattributed_machines
        .iter()
        .map(|m| pseudo_label_machine(manifest, m, embeddings, options))
        .collect()
}

/// Fraction of points whose cluster's majority truth label matches their own.
pub fn cluster_purity(labels: &[usize], truth: &[&str]) -> f64 {
    let mut table: BTreeMap<usize, BTreeMap<&str, usize>> = BTreeMap::new();
    for (&l, &t) in labels.iter().zip(truth) {
        *table.entry(l).or_default().entry(t).or_default() += 1;
    }
    let hits: usize = table.values().map(|c| c.values().copied().max().unwrap_or(0)).sum();
    hits as f64 / labels.len().max(1) as f64
}

/// Writes `path,machine,pseudo_attribute`.
pub fn write_pseudo_labels(path: &Path, labelings: &[PseudoLabeling]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["path", "machine", "pseudo_attribute"])
        .map_err(|e| Error::csv(path, e))?;
    for pl in labelings {
        for (key, label) in &pl.labels {
            w.write_record([key.as_str(), pl.machine_type.as_str(), pseudo_token(*label).as_str()])
                .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `path,machine,pseudo_attribute` table back into per-machine
/// labelings (dendrograms are not stored there and come back empty).
pub fn read_pseudo_labels(path: &Path) -> Result<Vec<PseudoLabeling>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut by_machine: BTreeMap<String, Vec<(String, usize)>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let label = rec
            .get(2)
            .and_then(|t| t.strip_prefix(PSEUDO_PREFIX))
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| Error::Format(format!("{}: bad pseudo attribute row {rec:?}", path.display())))?;
        by_machine
            .entry(rec[1].to_string())
            .or_default()
            .push((rec[0].to_string(), label));
    }
    Ok(by_machine
        .into_iter()
        .map(|(machine_type, labels)| {
            let k = labels.iter().map(|l| l.1 + 1).max().unwrap_or(0);
            PseudoLabeling {
                machine_type,
                k,
                policy: KPolicy::Fixed { k },
                dendrogram: Dendrogram {
                    n: labels.len(),
                    merges: Vec::new(),
                },
                labels,
            }
        })
        .collect())
}

/// Writes `step,id_a,id_b,cost,new_id,size`.
pub fn write_dendrogram(path: &Path, dendrogram: &Dendrogram) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["step", "id_a", "id_b", "cost", "new_id", "size"])
        .map_err(|e| Error::csv(path, e))?;
    for (step, m) in dendrogram.merges.iter().enumerate() {
        w.write_record([
            step.to_string(),
            m.id_a.to_string(),
            m.id_b.to_string(),
            m.cost.to_string(),
            m.new_id.to_string(),
            m.new_size.to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    #[test]
    fn ess_examples() {
        assert_eq!(ess(&array![[3.0, 4.0]].view()).unwrap(), 0.0);
        assert_eq!(ess(&array![[0.0, 0.0], [2.0, 0.0]].view()).unwrap(), 2.0);
        assert!(ess(&Array2::<f64>::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn merge_cost_examples() {
        let a = array![1.0, 2.0];
        assert_eq!(ward_merge_cost(3, &a.view(), 5, &a.view()), 0.0);
        let (p, q) = (array![0.0, 0.0], array![2.0, 0.0]);
        assert_eq!(ward_merge_cost(1, &p.view(), 1, &q.view()), 2.0);
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, d), || rng.random_range(-5.0..5.0))
    }

    proptest! {
        #[test]
        fn ess_translation_and_scaling(seed in 0u64..1000, shift in -10.0f64..10.0, alpha in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_points(&mut rng, 7, 3);
            let base = ess(&x.view()).unwrap();
            let moved = ess(&(&x + shift).view()).unwrap();
            prop_assert!((base - moved).abs() <= 1e-9 * base.max(1.0));
            let scaled = ess(&(&x * alpha).view()).unwrap();
            prop_assert!((scaled - alpha * alpha * base).abs() <= 1e-9 * base.max(1.0));
        }
    }

    #[test]
    fn two_points_single_merge() {
        let x = array![[0.0, 1.0], [3.0, -1.0]];
        let d = agglomerate(&x.view()).unwrap();
        assert_eq!(d.merges.len(), 1);
        let m = d.merges[0];
        assert_eq!((m.id_a, m.id_b, m.new_id, m.new_size), (0, 1, 2, 2));
        let expected = ward_merge_cost(1, &x.row(0), 1, &x.row(1));
        assert!((m.cost - expected).abs() < 1e-12);
        assert!(agglomerate(&array![[1.0]].view()).is_err());
        assert!(agglomerate(&array![[1.0], [f64::NAN]].view()).is_err());
    }

    fn blobs(rng: &mut ChaCha8Rng, centers: &[[f64; 2]], per: usize, spread: f64) -> (Array2<f64>, Vec<usize>) {
        let mut x = Array2::zeros((centers.len() * per, 2));
        let mut truth = Vec::new();
        for (i, row) in x.rows_mut().into_iter().enumerate() {
            let c = centers[i % centers.len()];
            let mut row = row;
            row[0] = c[0] + rng.random_range(-spread..spread);
            row[1] = c[1] + rng.random_range(-spread..spread);
            truth.push(i % centers.len());
        }
        (x, truth)
    }

    #[test]
    fn separated_blobs_merge_last_and_cut_cleanly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, truth) = blobs(&mut rng, &[[0.0, 0.0], [100.0, 0.0]], 10, 0.5);
        let d = agglomerate(&x.view()).unwrap();
        let last = d.merges.last().unwrap().cost;
        assert!(d.merges.iter().all(|m| m.cost <= last));
        let labels = cut(&d, 2).unwrap();
        for i in 0..labels.len() {
            for j in 0..labels.len() {
                assert_eq!(labels[i] == labels[j], truth[i] == truth[j]);
            }
        }
    }

    #[test]
    fn cut_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_points(&mut rng, 9, 2);
        let d = agglomerate(&x.view()).unwrap();
        assert!(cut(&d, 1).unwrap().iter().all(|&l| l == 0));
        let all: BTreeSet<usize> = cut(&d, 9).unwrap().into_iter().collect();
        assert_eq!(all.len(), 9);
        assert!(cut(&d, 0).is_err());
        assert!(cut(&d, 10).is_err());
    }

    #[test]
    fn cuts_are_nested() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_points(&mut rng, 20, 3);
        let d = agglomerate(&x.view()).unwrap();
        for k in 2..=20 {
            let fine = cut(&d, k).unwrap();
            let coarse = cut(&d, k - 1).unwrap();
            for i in 0..20 {
                for j in 0..20 {
                    if fine[i] == fine[j] {
                        assert_eq!(coarse[i], coarse[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn monotone_merge_costs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x = random_points(&mut rng, 30, 4);
            let d = agglomerate(&x.view()).unwrap();
            for w in d.merges.windows(2) {
                assert!(w[1].cost >= w[0].cost - 1e-9 * w[0].cost.abs().max(1.0));
            }
        }
    }

    fn partition(labels: &[usize], order: &[usize]) -> BTreeSet<BTreeSet<usize>> {
        let mut groups: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for (pos, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().insert(order[pos]);
        }
        groups.into_values().collect()
    }

    #[test]
    fn row_permutation_gives_same_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_points(&mut rng, 15, 3);
        let perm: Vec<usize> = {
            let mut p: Vec<usize> = (0..15).collect();
            p.reverse();
            p.swap(2, 9);
            p
        };
        let xp = x.select(Axis(0), &perm);
        let d = agglomerate(&x.view()).unwrap();
        let dp = agglomerate(&xp.view()).unwrap();
        let identity: Vec<usize> = (0..15).collect();
        for k in 1..=15 {
            assert_eq!(
                partition(&cut(&d, k).unwrap(), &identity),
                partition(&cut(&dp, k).unwrap(), &perm)
            );
        }
    }

    #[test]
    fn select_k_policies() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (x, _) = blobs(&mut rng, &[[0.0, 0.0], [50.0, 0.0], [0.0, 50.0]], 8, 1.0);
        let d = agglomerate(&x.view()).unwrap();
        assert_eq!(select_k(&d, &x.view(), KPolicy::Fixed { k: 3 }).unwrap(), 3);
        assert_eq!(
            select_k(&d, &x.view(), KPolicy::Silhouette { k_min: 2, k_max: 6 }).unwrap(),
            3
        );
        assert!(select_k(&d, &x.view(), KPolicy::Silhouette { k_min: 1, k_max: 4 }).is_err());
        assert!(select_k(&d, &x.view(), KPolicy::Silhouette { k_min: 5, k_max: 4 }).is_err());
    }

    #[test]
    fn select_k_degenerate_ties_pick_smallest() {
        let same = Array2::from_elem((8, 3), 0.25);
        let d = agglomerate(&same.view()).unwrap();
        assert_eq!(
            select_k(&d, &same.view(), KPolicy::Silhouette { k_min: 2, k_max: 4 }).unwrap(),
            2
        );
        let mut two = Array2::zeros((8, 2));
        for i in 4..8 {
            two[[i, 0]] = 1.0;
        }
        let d = agglomerate(&two.view()).unwrap();
        assert_eq!(
            select_k(&d, &two.view(), KPolicy::Silhouette { k_min: 2, k_max: 4 }).unwrap(),
            2
        );
    }

    #[test]
    fn purity_examples() {
        assert_eq!(cluster_purity(&[0, 0, 1, 1], &["a", "a", "b", "b"]), 1.0);
        assert_eq!(cluster_purity(&[0, 0, 0, 0], &["a", "a", "b", "b"]), 0.5);
        assert_eq!(cluster_purity(&[0, 1, 0, 1], &["a", "a", "a", "b"]), 0.75);
    }
}
