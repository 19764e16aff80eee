//! On-disk dataset format.
//!
//! Layout per split directory: `meta.json` plus one raw array file per
//! field. Arrays are little-endian float64, row-major, shape recorded in the
//! metadata. Generation is deterministic, so a dataset is identified by the
//! hash of its generating config; `data_hash` covers the payload bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::poisson::{NormStats, PoissonConfig, PoissonDataset, SplitData};
use crate::tensor::Tensor;

pub const POISSON_SPLITS: [&str; 4] = ["train", "val", "test_id", "test_ood"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitMeta {
    pub split: String,
    pub count: usize,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub seed: u64,
    pub config_hash: String,
    pub data_hash: String,
    pub norm_stats: NormStats,
    pub config: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

/// Hash of the canonical JSON encoding of a config.
pub fn config_hash<C: Serialize>(cfg: &C) -> String {
    sha256_hex(serde_json::to_string(cfg).expect("config serializes").as_bytes())
}

fn tensor_bytes(t: &Tensor<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.len() * 8);
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn tensor_from_bytes(shape: &[usize], bytes: &[u8]) -> Result<Tensor<f64>> {
    let n: usize = shape.iter().product();
    if bytes.len() != n * 8 {
        return Err(Error::Format(format!(
            "array payload has {} bytes, shape {:?} wants {}",
            bytes.len(),
            shape,
            n * 8
        )));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::from_vec(shape, data)
}

fn write_split(
    dir: &Path,
    split: &str,
    data: &SplitData,
    cfg: &PoissonConfig,
    stats: &NormStats,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let f_bytes = tensor_bytes(&data.f);
    let u_bytes = tensor_bytes(&data.u);
    let mut hasher = Sha256::new();
    hasher.update(&f_bytes);
    hasher.update(&u_bytes);
    let meta = SplitMeta {
        split: split.to_string(),
        count: data.count(),
        shape: data.f.shape().to_vec(),
        dtype: "f64".to_string(),
        seed: cfg.seed,
        config_hash: config_hash(cfg),
        data_hash: format!("{:x}", hasher.finalize()),
        norm_stats: *stats,
        config: serde_json::to_value(cfg)?,
    };
    fs::write(dir.join("f.bin"), &f_bytes)?;
    fs::write(dir.join("u.bin"), &u_bytes)?;
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

/// Write all four splits under `root`. Layout:
/// `<root>/{train,val,test_id,test_ood}/{meta.json,f.bin,u.bin}`.
pub fn write_poisson_dataset(root: &Path, cfg: &PoissonConfig, ds: &PoissonDataset) -> Result<()> {
    for (name, split) in POISSON_SPLITS
        .iter()
        .zip([&ds.train, &ds.val, &ds.test_id, &ds.test_ood])
    {
        write_split(&root.join(name), name, split, cfg, &ds.stats)?;
    }
    Ok(())
}

pub fn read_split_meta(root: &Path, split: &str) -> Result<SplitMeta> {
    let path = root.join(split).join("meta.json");
    let bytes = fs::read(&path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn load_split(root: &Path, split: &str) -> Result<(SplitMeta, SplitData)> {
    let meta = read_split_meta(root, split)?;
    let dir = root.join(split);
    let f_bytes = fs::read(dir.join("f.bin"))?;
    let u_bytes = fs::read(dir.join("u.bin"))?;
    let mut hasher = Sha256::new();
    hasher.update(&f_bytes);
    hasher.update(&u_bytes);
    let actual = format!("{:x}", hasher.finalize());
    if actual != meta.data_hash {
        return Err(Error::DatasetHashMismatch { expected: meta.data_hash.clone(), found: actual });
    }
    let f = tensor_from_bytes(&meta.shape, &f_bytes)?;
    let u = tensor_from_bytes(&meta.shape, &u_bytes)?;
    Ok((meta, SplitData { f, u }))
}

pub fn load_poisson_dataset(root: &Path) -> Result<(SplitMeta, PoissonDataset)> {
    let (meta, train) = load_split(root, "train")?;
    let (_, val) = load_split(root, "val")?;
    let (_, test_id) = load_split(root, "test_id")?;
    let (_, test_ood) = load_split(root, "test_ood")?;
    let stats = meta.norm_stats;
    Ok((meta, PoissonDataset { train, val, test_id, test_ood, stats }))
}

/// True when every split exists and carries the hash of `cfg`.
pub fn poisson_dataset_up_to_date(root: &Path, cfg: &PoissonConfig) -> bool {
    let expect = config_hash(cfg);
    POISSON_SPLITS
        .iter()
        .all(|split| read_split_meta(root, split).map(|m| m.config_hash == expect).unwrap_or(false))
}

/// Verify that the dataset on disk was generated by `cfg`. A missing
/// dataset counts as a mismatch (run gen-data first).
pub fn check_poisson_dataset(root: &Path, cfg: &PoissonConfig) -> Result<()> {
    let expect = config_hash(cfg);
    for split in POISSON_SPLITS {
        if !root.join(split).join("meta.json").exists() {
            return Err(Error::DatasetHashMismatch {
                expected: expect,
                found: format!("no dataset at {}", root.display()),
            });
        }
        let meta = read_split_meta(root, split)?;
        if meta.config_hash != expect {
            return Err(Error::DatasetHashMismatch { expected: expect, found: meta.config_hash });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sequence datasets (cascade trajectories)
// ---------------------------------------------------------------------------

pub const SEQUENCE_SPLITS: [&str; 2] = ["train", "test"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub split: String,
    pub count: usize,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub seed: u64,
    pub config_hash: String,
    pub data_hash: String,
    pub config: serde_json::Value,
}

pub fn write_sequence_split<C: Serialize>(
    root: &Path,
    split: &str,
    seqs: &Tensor<f64>,
    cfg: &C,
    seed: u64,
) -> Result<()> {
    let dir = root.join(split);
    fs::create_dir_all(&dir)?;
    let bytes = tensor_bytes(seqs);
    let meta = SequenceMeta {
        split: split.to_string(),
        count: seqs.shape()[0],
        shape: seqs.shape().to_vec(),
        dtype: "f64".to_string(),
        seed,
        config_hash: config_hash(cfg),
        data_hash: sha256_hex(&bytes),
        config: serde_json::to_value(cfg)?,
    };
    fs::write(dir.join("seq.bin"), &bytes)?;
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

pub fn load_sequence_split(root: &Path, split: &str) -> Result<(SequenceMeta, Tensor<f64>)> {
    let dir = root.join(split);
    let meta: SequenceMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
    let bytes = fs::read(dir.join("seq.bin"))?;
    let actual = sha256_hex(&bytes);
    if actual != meta.data_hash {
        return Err(Error::DatasetHashMismatch { expected: meta.data_hash.clone(), found: actual });
    }
    Ok((meta.clone(), tensor_from_bytes(&meta.shape, &bytes)?))
}

pub fn sequence_dataset_up_to_date<C: Serialize>(root: &Path, cfg: &C) -> bool {
    let expect = config_hash(cfg);
    SEQUENCE_SPLITS.iter().all(|split| {
        root.join(split).join("meta.json").exists()
            && fs::read(root.join(split).join("meta.json"))
                .ok()
                .and_then(|b| serde_json::from_slice::<SequenceMeta>(&b).ok())
                .map(|m| m.config_hash == expect)
                .unwrap_or(false)
    })
}

/// Path helper for artifacts under a run directory.
pub fn ensure_dir(path: &Path) -> Result<PathBuf> {
    fs::create_dir_all(path)?;
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poisson::generate_dataset;

    fn tiny_cfg() -> PoissonConfig {
        let mut cfg = PoissonConfig::desk(5);
        cfg.grid = 12;
        cfg.n_train = 4;
        cfg.n_val = 2;
        cfg.n_test_id = 2;
        cfg.n_test_ood = 2;
        cfg
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let cfg = tiny_cfg();
        let ds = generate_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_poisson_dataset(dir.path(), &cfg, &ds).unwrap();
        write_poisson_dataset(dir.path(), &cfg, &ds).unwrap(); // idempotent rewrite
        let (meta, back) = load_poisson_dataset(dir.path()).unwrap();
        assert_eq!(back.train, ds.train);
        assert_eq!(back.test_ood, ds.test_ood);
        assert_eq!(meta.norm_stats, ds.stats);
        assert!(poisson_dataset_up_to_date(dir.path(), &cfg));
        assert!(check_poisson_dataset(dir.path(), &cfg).is_ok());
    }

    #[test]
    fn config_change_invalidates_hash() {
        let cfg = tiny_cfg();
        let ds = generate_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_poisson_dataset(dir.path(), &cfg, &ds).unwrap();
        let mut other = cfg;
        other.seed += 1;
        assert!(!poisson_dataset_up_to_date(dir.path(), &other));
        assert!(matches!(
            check_poisson_dataset(dir.path(), &other),
            Err(Error::DatasetHashMismatch { .. })
        ));
    }

    #[test]
    fn corrupted_payload_is_detected() {
        let cfg = tiny_cfg();
        let ds = generate_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_poisson_dataset(dir.path(), &cfg, &ds).unwrap();
        let path = dir.path().join("train").join("u.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes[40] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_split(dir.path(), "train"),
            Err(Error::DatasetHashMismatch { .. })
        ));
    }
}
