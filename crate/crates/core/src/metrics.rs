//! AUC, partial AUC, harmonic-mean aggregation and a 2-D PCA projection.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};

use crate::corpus::{Condition, DatasetManifest, Domain, Split};
use crate::error::{Error, Result};

fn check_scores(normal: &[f64], anomaly: &[f64]) -> Result<()> {
    if normal.is_empty() || anomaly.is_empty() {
        return Err(Error::invalid("AUC needs at least one normal and one anomalous score"));
    }
    if normal.iter().chain(anomaly).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("anomaly scores".into()));
    }
    Ok(())
}

/// Mann–Whitney estimate via mid-ranks; ties count one half.
pub fn auc(normal: &[f64], anomaly: &[f64]) -> Result<f64> {
    check_scores(normal, anomaly)?;
    let mut all: Vec<(f64, bool)> = normal
        .iter()
        .map(|&s| (s, false))
        .chain(anomaly.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid_rank = (i + j + 1) as f64 / 2.0;
        rank_sum += mid_rank * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let (nn, na) = (normal.len() as f64, anomaly.len() as f64);
    Ok((rank_sum - na * (na + 1.0) / 2.0) / (nn * na))
}

/// ROC vertices `(fpr, tpr)` from a descending threshold sweep; tied
/// scores form a single diagonal step.
pub fn roc_curve(normal: &[f64], anomaly: &[f64]) -> Vec<(f64, f64)> {
    let mut all: Vec<(f64, bool)> = normal
        .iter()
        .map(|&s| (s, false))
        .chain(anomaly.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (nn, na) = (normal.len() as f64, anomaly.len() as f64);
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut points = vec![(0.0, 0.0)];
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / nn, tp as f64 / na));
        i = j;
    }
    points
}

/// Area under the ROC curve over `fpr ∈ [0, p]`, divided by `p`.
pub fn pauc(normal: &[f64], anomaly: &[f64], p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("pAUC limit {p} outside (0, 1]")));
    }
    check_scores(normal, anomaly)?;
    let roc = roc_curve(normal, anomaly);
    let mut area = 0.0;
    for w in roc.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= p {
            break;
        }
        if x1 <= p {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y_p = y0 + (y1 - y0) * (p - x0) / (x1 - x0);
            area += (p - x0) * (y0 + y_p) / 2.0;
        }
    }
    Ok(area / p)
}

pub fn harmonic_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("harmonic mean of no values"));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::invalid(format!("harmonic mean needs positive values, got {v}")));
    }
    Ok(values.len() as f64 / values.iter().map(|v| 1.0 / v).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineResult {
    pub machine_type: String,
    pub auc_source: f64,
    pub auc_target: f64,
    pub pauc: f64,
}

pub const DEFAULT_P: f64 = 0.1;

/// Per-machine metrics from test-clip scores keyed by clip id.
pub fn machine_results(manifest: &DatasetManifest, scores: &HashMap<String, f64>, p: f64) -> Result<Vec<MachineResult>> {
    manifest
        .machines
        .iter()
        .map(|m| {
            let mut buckets: BTreeMap<(Domain, Condition), Vec<f64>> = BTreeMap::new();
            for c in manifest.clips_of(m, Split::Test) {
                let key = c.key();
                let s = scores
                    .get(&key)
                    .ok_or_else(|| Error::invalid(format!("missing score for {key}")))?;
                buckets.entry((c.domain, c.condition)).or_default().push(*s);
            }
            let get = |d, c| buckets.get(&(d, c)).map(Vec::as_slice).unwrap_or(&[]);
            let pooled = |c| [get(Domain::Source, c), get(Domain::Target, c)].concat();
            Ok(MachineResult {
                machine_type: m.clone(),
                auc_source: auc(get(Domain::Source, Condition::Normal), get(Domain::Source, Condition::Anomalous))?,
                auc_target: auc(get(Domain::Target, Condition::Normal), get(Domain::Target, Condition::Anomalous))?,
                pauc: pauc(&pooled(Condition::Normal), &pooled(Condition::Anomalous), p)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subset {
    pub name: String,
    pub machines: Vec<String>,
}

/// The `all` and `noattr` subsets, plus `dev`/`eval` when their lists are non-empty.
pub fn standard_subsets(manifest: &DatasetManifest, dev: &[String], eval: &[String]) -> Vec<Subset> {
    let mut out = Vec::new();
    for (name, machines) in [("dev", dev), ("eval", eval)] {
        if !machines.is_empty() {
            out.push(Subset {
                name: name.into(),
                machines: machines.to_vec(),
            });
        }
    }
    if !manifest.unattributed_machines.is_empty() {
        out.push(Subset {
            name: "noattr".into(),
            machines: manifest.unattributed_machines.clone(),
        });
    }
    out.push(Subset {
        name: "all".into(),
        machines: manifest.machines.clone(),
    });
    out
}

/// Harmonic mean (percent) of every machine's source AUC, target AUC and pAUC.
pub fn official_score(results: &[MachineResult], subset: &Subset) -> Result<f64> {
    let mut values = Vec::with_capacity(3 * subset.machines.len());
    for m in &subset.machines {
        let r = results
            .iter()
            .find(|r| &r.machine_type == m)
            .ok_or_else(|| Error::UnknownMachine(m.clone()))?;
        values.extend([r.auc_source, r.auc_target, r.pauc]);
    }
    Ok(100.0 * harmonic_mean(&values)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub machines: Vec<MachineResult>,
    pub subsets: Vec<(String, f64)>,
}

impl ScoreReport {
    pub fn build(results: Vec<MachineResult>, subsets: &[Subset]) -> Result<Self> {
        let scores = subsets
            .iter()
            .map(|s| Ok((s.name.clone(), official_score(&results, s)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            machines: results,
            subsets: scores,
        })
    }

    pub fn subset(&self, name: &str) -> Option<f64> {
        self.subsets.iter().find(|s| s.0 == name).map(|s| s.1)
    }

    /// `machine,auc_source,auc_target,pauc` rows, a blank line, then `subset,score`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("machine,auc_source,auc_target,pauc\n");
        for r in &self.machines {
            let _ = writeln!(s, "{},{},{},{}", r.machine_type, r.auc_source, r.auc_target, r.pauc);
        }
        s.push_str("\nsubset,score\n");
        for (name, v) in &self.subsets {
            let _ = writeln!(s, "{name},{v}");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Projection onto the two leading principal components. Each component's
/// largest-magnitude loading is made positive.
pub fn pca_2d(x: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::invalid("projection needs at least 2 embeddings"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projection input".into()));
    }
    let mean = x.mean_axis(ndarray::Axis(0)).expect("n >= 2");
    let centered = x - &mean;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    let total: f64 = cov.diag().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut out = Array2::zeros((n, 2));
    for (c, &k) in order.iter().take(2).enumerate() {
        let mut v: Array1<f64> = Array1::from_iter(eig.eigenvectors.column(k).iter().copied());
        let lead = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if lead < 0.0 {
            v.mapv_inplace(|e| -e);
        }
        out.column_mut(c).assign(&centered.dot(&v));
    }
    Ok(out)
}

/// Writes `path,label,x,y` for the PCA projection of `embeddings`.
pub fn export_projection(path: &Path, ids: &[String], labels: &[String], embeddings: &Array2<f64>) -> Result<Array2<f64>> {
    if ids.len() != embeddings.nrows() || labels.len() != embeddings.nrows() {
        return Err(Error::shape("projection ids, labels and rows differ in length"));
    }
    let xy = pca_2d(embeddings)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["path", "label", "x", "y"]).map_err(|e| Error::csv(path, e))?;
    for i in 0..ids.len() {
        w.write_record([ids[i].clone(), labels[i].clone(), xy[[i, 0]].to_string(), xy[[i, 1]].to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(xy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn pair_count(normal: &[f64], anomaly: &[f64]) -> f64 {
        let mut s = 0.0;
        for &a in anomaly {
            for &n in normal {
                s += if a > n { 1.0 } else if a == n { 0.5 } else { 0.0 };
            }
        }
        s / (normal.len() * anomaly.len()) as f64
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2], &[0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.9], &[0.2, 0.8]).unwrap(), 0.5);
        assert_eq!(auc(&[0.3; 4], &[0.3; 3]).unwrap(), 0.5);
        assert!(auc(&[], &[1.0]).is_err());
    }

    #[test]
    fn pauc_examples() {
        assert_eq!(pauc(&[0.1, 0.2], &[0.8, 0.9], 0.1).unwrap(), 1.0);
        assert_eq!(pauc(&[0.8, 0.9], &[0.1, 0.2], 0.1).unwrap(), 0.0);
        assert!(pauc(&[0.1], &[0.2], 0.0).is_err());
        assert!(pauc(&[0.1], &[0.2], 1.5).is_err());
    }

    proptest! {
        #[test]
        fn auc_matches_pairs_and_transforms(
            normal in prop::collection::vec(0u8..20, 1..30),
            anomaly in prop::collection::vec(0u8..20, 1..30),
        ) {
            let n: Vec<f64> = normal.iter().map(|&v| v as f64).collect();
            let a: Vec<f64> = anomaly.iter().map(|&v| v as f64).collect();
            let value = auc(&n, &a).unwrap();
            prop_assert!((value - pair_count(&n, &a)).abs() < 1e-12);
            prop_assert!((pauc(&n, &a, 1.0).unwrap() - value).abs() < 1e-12);
            let tn: Vec<f64> = n.iter().map(|v| (v / 3.0).exp()).collect();
            let ta: Vec<f64> = a.iter().map(|v| (v / 3.0).exp()).collect();
            prop_assert!((auc(&tn, &ta).unwrap() - value).abs() < 1e-12);
        }
    }

    #[test]
    fn harmonic_examples() {
        assert!((harmonic_mean(&[60.0, 60.0]).unwrap() - 60.0).abs() < 1e-12);
        assert!((harmonic_mean(&[50.0, 100.0]).unwrap() - 200.0 / 3.0).abs() < 1e-12);
        assert!(harmonic_mean(&[1.0, 0.0]).is_err());
    }

    fn result(m: &str, v: f64) -> MachineResult {
        MachineResult {
            machine_type: m.into(),
            auc_source: v,
            auc_target: v,
            pauc: v,
        }
    }

    #[test]
    fn official_score_examples() {
        let one = Subset {
            name: "all".into(),
            machines: vec!["a".into()],
        };
        assert!((official_score(&[result("a", 0.6)], &one).unwrap() - 60.0).abs() < 1e-9);
        let two = Subset {
            name: "all".into(),
            machines: vec!["a".into(), "b".into()],
        };
        let v = official_score(&[result("a", 0.5), result("b", 1.0)], &two).unwrap();
        assert!((v - 200.0 / 3.0).abs() < 1e-9);
        let missing = Subset {
            name: "x".into(),
            machines: vec!["c".into()],
        };
        assert!(official_score(&[result("a", 0.5)], &missing).is_err());
    }

    #[test]
    fn report_csv_layout() {
        let subsets = [Subset {
            name: "all".into(),
            machines: vec!["a".into()],
        }];
        let r = ScoreReport::build(vec![result("a", 0.5)], &subsets).unwrap();
        assert_eq!(
            r.to_csv(),
            "machine,auc_source,auc_target,pauc\na,0.5,0.5,0.5\n\nsubset,score\nall,50\n"
        );
    }

    #[test]
    fn pca_line_and_ordering() {
        let dir = array![1.0, -2.0, 0.5];
        let x = Array2::from_shape_fn((12, 3), |(i, j)| (i as f64 - 3.0) * dir[j] + 7.0);
        let xy = pca_2d(&x).unwrap();
        assert!(xy.column(1).iter().all(|v| v.abs() < 1e-8));
        let var = |c: usize| xy.column(c).mapv(|v| v * v).sum();
        assert!(var(0) >= var(1));
        assert!(matches!(pca_2d(&Array2::from_elem((5, 3), 1.0)), Err(Error::ZeroVariance)));
    }
}
