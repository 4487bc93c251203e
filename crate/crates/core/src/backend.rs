//! KNN anomaly scoring against a bank of normal training embeddings.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetManifest, Domain, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainMode {
    /// One bank per machine with both domains together.
    Pooled,
    /// Minimum over per-domain scores.
    PerDomainMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub k: usize,
    pub domain_mode: DomainMode,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            k: 1,
            domain_mode: DomainMode::Pooled,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineBank {
    /// Unit-norm rows.
    pub rows: Array2<f64>,
    pub ids: Vec<String>,
    pub domains: Vec<Domain>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MemoryBank {
    pub machines: BTreeMap<String, MachineBank>,
}

fn unit_vector(v: &ArrayView1<f64>, what: &str) -> Result<Array1<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    let norm = v.dot(v).sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroEmbedding(what.to_string()));
    }
    Ok(v / norm)
}

pub fn build_memory_bank(manifest: &DatasetManifest, embeddings: &HashMap<String, Array1<f64>>) -> Result<MemoryBank> {
    let mut bank = MemoryBank::default();
    for machine in &manifest.machines {
        let clips: Vec<_> = manifest.clips_of(machine, Split::Train).collect();
        if clips.is_empty() {
            return Err(Error::invalid(format!("machine {machine} has no training clips for the memory bank")));
        }
        let mut rows = Vec::with_capacity(clips.len());
        for c in &clips {
            let key = c.key();
            let e = embeddings.get(&key).ok_or_else(|| Error::MissingEmbedding(key.clone()))?;
            rows.push(unit_vector(&e.view(), &key)?);
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::shape(format!("embeddings of {machine} differ in dimension")));
        }
        let mut m = Array2::zeros((rows.len(), dim));
        for (i, r) in rows.iter().enumerate() {
            m.row_mut(i).assign(r);
        }
        bank.machines.insert(
            machine.clone(),
            MachineBank {
                rows: m,
                ids: clips.iter().map(|c| c.key()).collect(),
                domains: clips.iter().map(|c| c.domain).collect(),
            },
        );
    }
    Ok(bank)
}

/// Mean of the `k` smallest values.
fn mean_smallest(mut d: Vec<f64>, k: usize) -> f64 {
    d.sort_by(f64::total_cmp);
    d[..k].iter().sum::<f64>() / k as f64
}

/// Mean cosine distance to the `k` nearest rows (brute-force scan).
pub fn knn_distance(query_unit: &ArrayView1<f64>, rows: &Array2<f64>, k: usize) -> Result<f64> {
    if k == 0 || k > rows.nrows() {
        return Err(Error::invalid(format!("k={k} outside [1, {}]", rows.nrows())));
    }
    let d: Vec<f64> = rows.dot(query_unit).iter().map(|s| 1.0 - s).collect();
    Ok(mean_smallest(d, k))
}

pub fn anomaly_score(
    embedding: &ArrayView1<f64>,
    bank: &MemoryBank,
    machine: &str,
    config: &BackendConfig,
) -> Result<f64> {
    let mb = bank
        .machines
        .get(machine)
        .ok_or_else(|| Error::UnknownMachine(machine.to_string()))?;
    if embedding.len() != mb.rows.ncols() {
        return Err(Error::shape(format!(
            "query of dimension {} against a bank of width {}",
            embedding.len(),
            mb.rows.ncols()
        )));
    }
    let q = unit_vector(embedding, "query embedding")?;
    match config.domain_mode {
        DomainMode::Pooled => knn_distance(&q.view(), &mb.rows, config.k),
        DomainMode::PerDomainMin => {
            let mut best = f64::INFINITY;
            for domain in [Domain::Source, Domain::Target] {
                let idx: Vec<usize> = (0..mb.domains.len()).filter(|&i| mb.domains[i] == domain).collect();
                if idx.is_empty() {
                    continue;
                }
                let rows = mb.rows.select(ndarray::Axis(0), &idx);
                best = best.min(knn_distance(&q.view(), &rows, config.k.min(idx.len()))?);
            }
            Ok(best)
        }
    }
}

/// Embedding store: `<stem>.bin` holds `count`, `dim` (u32 LE) then f32 LE
/// rows; `<stem>.ids.csv` lists the clip ids in row order.
pub fn ids_path(bin: &Path) -> PathBuf {
    bin.with_extension("ids.csv")
}

pub fn write_embeddings(path: &Path, ids: &[String], rows: &[Array1<f64>]) -> Result<()> {
    if ids.len() != rows.len() {
        return Err(Error::shape("embedding ids and rows differ in length"));
    }
    let dim = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::shape("embeddings differ in dimension"));
    }
    let mut bytes = Vec::with_capacity(8 + 4 * dim * rows.len());
    bytes.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    for r in rows {
        for &v in r {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))?;
    let sidecar = ids_path(path);
    let mut w = csv::Writer::from_path(&sidecar).map_err(|e| Error::csv(&sidecar, e))?;
    w.write_record(["path"]).map_err(|e| Error::csv(&sidecar, e))?;
    for id in ids {
        w.write_record([id]).map_err(|e| Error::csv(&sidecar, e))?;
    }
    w.flush().map_err(|e| Error::io(&sidecar, e))
}

pub fn read_embeddings(path: &Path) -> Result<Vec<(String, Array1<f64>)>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |why: &str| Error::Format(format!("{}: {why}", path.display()));
    if bytes.len() < 8 {
        return Err(bad("truncated header"));
    }
    let count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + 4 * count * dim {
        return Err(bad("payload size does not match header"));
    }
    let sidecar = ids_path(path);
    let mut r = csv::Reader::from_path(&sidecar).map_err(|e| Error::csv(&sidecar, e))?;
    let ids: Vec<String> = r
        .records()
        .map(|rec| rec.map(|r| r[0].to_string()).map_err(|e| Error::csv(&sidecar, e)))
        .collect::<Result<_>>()?;
    if ids.len() != count {
        return Err(bad("id sidecar length does not match row count"));
    }
    let values: Vec<f64> = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, Array1::from(values[i * dim..(i + 1) * dim].to_vec())))
        .collect())
}

/// Writes `path,score`.
pub fn write_scores(path: &Path, scores: &[(String, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["path", "score"]).map_err(|e| Error::csv(path, e))?;
    for (id, s) in scores {
        w.write_record([id.clone(), s.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let score = rec
                .get(1)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad score row {rec:?}", path.display())))?;
            Ok((rec[0].to_string(), score))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ClipMeta, Condition};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn manifest(n: u32) -> DatasetManifest {
        let clips = (0..n)
            .map(|i| ClipMeta {
                machine_type: "fan".into(),
                split: Split::Train,
                domain: if i % 5 == 0 { Domain::Target } else { Domain::Source },
                condition: Condition::Normal,
                index: i,
                attribute: None,
                path: Default::default(),
            })
            .collect();
        DatasetManifest::from_clips("r", clips).unwrap()
    }

    fn embeddings(m: &DatasetManifest, rows: &[Array1<f64>]) -> HashMap<String, Array1<f64>> {
        m.clips.iter().map(|c| c.key()).zip(rows.iter().cloned()).collect()
    }

    #[test]
    fn bank_rows_are_unit_and_counted() {
        let m = manifest(10);
        let rows: Vec<Array1<f64>> = (0..10).map(|i| array![i as f64 + 1.0, 2.0, -1.0]).collect();
        let bank = build_memory_bank(&m, &embeddings(&m, &rows)).unwrap();
        let fan = &bank.machines["fan"];
        assert_eq!(fan.rows.nrows(), 10);
        for r in fan.rows.rows() {
            assert!((r.dot(&r) - 1.0).abs() < 1e-12);
        }
        let mut zero = rows.clone();
        zero[3] = Array1::zeros(3);
        assert!(build_memory_bank(&m, &embeddings(&m, &zero)).is_err());
        assert!(build_memory_bank(&m, &HashMap::new()).is_err());
    }

    #[test]
    fn score_examples() {
        let m = manifest(2);
        let rows = vec![array![1.0, 0.0, 0.0], array![0.0, 1.0, 0.0]];
        let bank = build_memory_bank(&m, &embeddings(&m, &rows)).unwrap();
        let cfg = BackendConfig::default();
        assert!(anomaly_score(&rows[0].view(), &bank, "fan", &cfg).unwrap().abs() < 1e-12);
        let ortho = array![0.0, 0.0, 4.0];
        assert!((anomaly_score(&ortho.view(), &bank, "fan", &cfg).unwrap() - 1.0).abs() < 1e-12);
        let all = BackendConfig { k: 2, ..cfg };
        let q = array![1.0, 1.0, 0.0];
        let expected = 1.0 - 1.0 / 2f64.sqrt();
        assert!((anomaly_score(&q.view(), &bank, "fan", &all).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(
            anomaly_score(&q.view(), &bank, "pump", &cfg),
            Err(Error::UnknownMachine(_))
        ));
    }

    #[test]
    fn score_nondecreasing_in_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = manifest(20);
        let rows: Vec<Array1<f64>> = (0..20)
            .map(|_| Array1::from_shape_simple_fn(4, || rng.random_range(-1.0..1.0)))
            .collect();
        let bank = build_memory_bank(&m, &embeddings(&m, &rows)).unwrap();
        let q = Array1::from_shape_simple_fn(4, || rng.random_range(-1.0..1.0));
        let mut prev = -1.0;
        for k in 1..=20 {
            let s = anomaly_score(&q.view(), &bank, "fan", &BackendConfig { k, ..Default::default() }).unwrap();
            assert!(s >= prev - 1e-15);
            assert!((0.0..=2.0).contains(&s));
            prev = s;
        }
    }

    #[test]
    fn embedding_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        let ids = vec!["a/train/x.wav".to_string(), "b/test/y.wav".to_string()];
        let rows = vec![array![0.5, -1.25], array![2.0, 0.0]];
        write_embeddings(&path, &ids, &rows).unwrap();
        let back = read_embeddings(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, ids[0]);
        assert_eq!(back[1].1, rows[1]);
        assert_eq!(fs::metadata(&path).unwrap().len(), 8 + 16);
    }
}
