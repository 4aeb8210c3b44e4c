//! On-disk corpus container.
//!
//! `corpus.bin`: 8-byte magic `ALIASIM1`, little-endian u32 version, u32
//! record count, then per record a u32 header length, a UTF-8 JSON header
//! (task id, seed, array shapes, windows, success flag), the contiguous
//! little-endian f64 payload arrays in header-declared order, and a CRC32 of
//! the payload bytes. `manifest.json`: the task spec, generation seed, and
//! file listing.

use super::{AmbiguityWindow, Corpus, EpisodeRecord};
use crate::env::TaskSpec;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"ALIASIM1";
pub const VERSION: u32 = 1;
pub const CORPUS_FILE: &str = "corpus.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus format error: {0}")]
    Format(String),
    #[error("unsupported corpus version {found} (expected {VERSION})")]
    Version { found: u32 },
    #[error("payload checksum mismatch in record {record}")]
    Checksum { record: usize },
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
}

/// Sidecar manifest describing a corpus directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<String>,
    pub task_spec: TaskSpec,
    pub seed: u64,
    pub instruction: usize,
    pub episodes: usize,
    /// Resolved generation config, echoed for auditability.
    pub config: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordHeader {
    task: String,
    seed: u64,
    /// (name, shape) of each payload array, in payload order.
    arrays: Vec<(String, Vec<usize>)>,
    windows: Vec<AmbiguityWindow>,
    success: bool,
}

fn push_f64s(buf: &mut Vec<u8>, values: impl Iterator<Item = f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn record_payload(record: &EpisodeRecord) -> Vec<u8> {
    let mut buf = Vec::new();
    push_f64s(&mut buf, record.obs.iter().flatten().copied());
    push_f64s(&mut buf, record.actions.iter().flatten().copied());
    push_f64s(&mut buf, record.z.iter().map(|&v| v as f64));
    push_f64s(&mut buf, record.phase.iter().map(|&v| v as f64));
    buf
}

pub fn write_records(w: &mut impl Write, records: &[EpisodeRecord]) -> Result<(), DataError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let count = u32::try_from(records.len())
        .map_err(|_| DataError::Format("too many records".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for record in records {
        let t = record.len();
        let obs_dim = record.obs.first().map(|o| o.len()).unwrap_or(0);
        let act_dim = record.actions.first().map(|a| a.len()).unwrap_or(0);
        let header = RecordHeader {
            task: record.task.clone(),
            seed: record.seed,
            arrays: vec![
                ("obs".into(), vec![t, obs_dim]),
                ("actions".into(), vec![t, act_dim]),
                ("z".into(), vec![t]),
                ("phase".into(), vec![t]),
            ],
            windows: record.windows.clone(),
            success: record.success,
        };
        let header_json = serde_json::to_vec(&header)?;
        let header_len = u32::try_from(header_json.len())
            .map_err(|_| DataError::Format("header too large".into()))?;
        w.write_all(&header_len.to_le_bytes())?;
        w.write_all(&header_json)?;
        let payload = record_payload(record);
        w.write_all(&payload)?;
        w.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
    }
    Ok(())
}

fn read_exact_or_format(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), DataError> {
    r.read_exact(buf)
        .map_err(|e| DataError::Format(format!("truncated corpus while reading {what}: {e}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32, DataError> {
    let mut b = [0u8; 4];
    read_exact_or_format(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn take_f64s(payload: &[f64], offset: &mut usize, n: usize) -> Vec<f64> {
    let out = payload[*offset..*offset + n].to_vec();
    *offset += n;
    out
}

pub fn read_records(r: &mut impl Read) -> Result<Vec<EpisodeRecord>, DataError> {
    let mut magic = [0u8; 8];
    read_exact_or_format(r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(DataError::Format(format!(
            "bad magic {:?}, not a corpus file",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = read_u32(r, "version")?;
    if version != VERSION {
        return Err(DataError::Version { found: version });
    }
    let count = read_u32(r, "record count")? as usize;
    let mut records = Vec::with_capacity(count);
    for idx in 0..count {
        let header_len = read_u32(r, "record header length")? as usize;
        let mut header_json = vec![0u8; header_len];
        read_exact_or_format(r, &mut header_json, "record header")?;
        let header: RecordHeader = serde_json::from_slice(&header_json)
            .map_err(|e| DataError::Format(format!("bad record header: {e}")))?;
        let total: usize = header
            .arrays
            .iter()
            .map(|(_, shape)| shape.iter().product::<usize>())
            .sum();
        let mut payload_bytes = vec![0u8; total * 8];
        read_exact_or_format(r, &mut payload_bytes, "record payload")?;
        let stored_crc = read_u32(r, "record checksum")?;
        if crc32fast::hash(&payload_bytes) != stored_crc {
            return Err(DataError::Checksum { record: idx });
        }
        let payload: Vec<f64> = payload_bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(decode_record(header, &payload)?);
    }
    Ok(records)
}

fn decode_record(header: RecordHeader, payload: &[f64]) -> Result<EpisodeRecord, DataError> {
    let shape_of = |name: &str| -> Result<Vec<usize>, DataError> {
        header
            .arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.clone())
            .ok_or_else(|| DataError::Format(format!("missing array '{name}'")))
    };
    let obs_shape = shape_of("obs")?;
    let act_shape = shape_of("actions")?;
    let t = obs_shape[0];
    let mut offset = 0;
    let obs_flat = take_f64s(payload, &mut offset, obs_shape.iter().product());
    let act_flat = take_f64s(payload, &mut offset, act_shape.iter().product());
    let z_flat = take_f64s(payload, &mut offset, t);
    let phase_flat = take_f64s(payload, &mut offset, t);
    let rows = |flat: &[f64], width: usize| -> Vec<Vec<f64>> {
        flat.chunks_exact(width.max(1)).map(|c| c.to_vec()).collect()
    };
    Ok(EpisodeRecord {
        task: header.task,
        seed: header.seed,
        obs: if t == 0 { Vec::new() } else { rows(&obs_flat, obs_shape[1]) },
        actions: if t == 0 { Vec::new() } else { rows(&act_flat, act_shape[1]) },
        z: z_flat.iter().map(|&v| v as usize).collect(),
        phase: phase_flat.iter().map(|&v| v as usize).collect(),
        windows: header.windows,
        success: header.success,
    })
}

/// Write `corpus.bin` and `manifest.json` into `dir`.
pub fn save_corpus_dir(
    dir: &Path,
    corpus: &Corpus,
    config_echo: serde_json::Value,
) -> Result<(), DataError> {
    std::fs::create_dir_all(dir)?;
    let mut file = std::fs::File::create(dir.join(CORPUS_FILE))?;
    write_records(&mut file, &corpus.records)?;
    let manifest = Manifest {
        files: vec![CORPUS_FILE.to_string()],
        task_spec: corpus.task_spec.clone(),
        seed: corpus.seed,
        instruction: corpus.instruction,
        episodes: corpus.records.len(),
        config: config_echo,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(())
}

/// Load a corpus directory (or a direct path to `corpus.bin` with its
/// sibling manifest).
pub fn load_corpus_dir(path: &Path) -> Result<Corpus, DataError> {
    let dir = if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent()
            .ok_or_else(|| DataError::Format("corpus path has no parent".into()))?
            .to_path_buf()
    };
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let mut file = std::fs::File::open(dir.join(CORPUS_FILE))?;
    let records = read_records(&mut file)?;
    Ok(Corpus {
        task_spec: manifest.task_spec,
        instruction: manifest.instruction,
        seed: manifest.seed,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_corpus;
    use crate::env::{make_task, FamilyKind, TaskOverrides};

    fn sample_records() -> Vec<EpisodeRecord> {
        let spec = make_task(FamilyKind::CrossingPath, &TaskOverrides::default()).unwrap();
        generate_corpus(&spec, 3, 17).records
    }

    #[test]
    fn roundtrip_is_bitwise_identical() {
        let records = sample_records();
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        let loaded = read_records(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded, records);
        // Re-serialization is byte-identical.
        let mut buf2 = Vec::new();
        write_records(&mut buf2, &loaded).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn corrupted_magic_rejected() {
        let mut buf = Vec::new();
        write_records(&mut buf, &sample_records()).unwrap();
        buf[0] = b'X';
        let err = read_records(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, DataError::Format(_)), "{err}");
    }

    #[test]
    fn wrong_version_rejected() {
        let mut buf = Vec::new();
        write_records(&mut buf, &sample_records()).unwrap();
        buf[8..12].copy_from_slice(&9u32.to_le_bytes());
        let err = read_records(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, DataError::Version { found: 9 }), "{err}");
    }

    #[test]
    fn truncated_file_rejected() {
        let mut buf = Vec::new();
        write_records(&mut buf, &sample_records()).unwrap();
        buf.truncate(buf.len() - 13);
        let err = read_records(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, DataError::Format(_)), "{err}");
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let mut buf = Vec::new();
        write_records(&mut buf, &sample_records()).unwrap();
        // Flip one byte in the middle of the first record's payload.
        let offset = 8 + 4 + 4 + 4 + 200; // into the first payload region
        buf[offset] ^= 0x40;
        let err = read_records(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, DataError::Checksum { record: 0 }), "{err}");
    }

    #[test]
    fn empty_corpus_is_valid() {
        let mut buf = Vec::new();
        write_records(&mut buf, &[]).unwrap();
        let loaded = read_records(&mut buf.as_slice()).unwrap();
        assert!(loaded.is_empty());
    }
}
