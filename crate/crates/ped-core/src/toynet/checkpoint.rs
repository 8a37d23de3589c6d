//! Binary network checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! | bytes | content                                      |
//! |-------|----------------------------------------------|
//! | 0..4  | magic `PEDN`                                 |
//! | 4     | format version, currently 1                  |
//! | 5..8  | reserved, zero on write                      |
//! | 8..   | u64 length + JSON of the network config      |
//! |       | u64 length + JSON of the pruning policy      |
//! |       | u64 count + that many f64 weights            |
//!
//! Weights are the full storage in [`SkipNetwork::flatten_all_params`]
//! order, pruned slots included, so a reloaded network is bit-identical
//! to the saved one.

use std::path::Path;

use super::net::SkipNetwork;
use super::{SkipNetConfig, ToynetError};
use crate::ped::PruningPolicy;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PEDN";
const CHECKPOINT_VERSION: u8 = 1;

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

pub fn save_checkpoint(net: &SkipNetwork, path: impl AsRef<Path>) -> Result<(), ToynetError> {
    let path = path.as_ref();
    let cfg_json = serde_json::to_vec(net.cfg()).expect("config serialises");
    let policy_json = serde_json::to_vec(net.policy()).expect("policy serialises");
    let weights = net.flatten_all_params();
    let mut bytes =
        Vec::with_capacity(8 + 16 + cfg_json.len() + policy_json.len() + 8 + weights.len() * 8);
    bytes.extend_from_slice(&CHECKPOINT_MAGIC);
    bytes.push(CHECKPOINT_VERSION);
    bytes.extend_from_slice(&[0u8; 3]);
    bytes.extend_from_slice(&(cfg_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&cfg_json);
    bytes.extend_from_slice(&(policy_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&policy_json);
    bytes.extend_from_slice(&(weights.len() as u64).to_le_bytes());
    for w in &weights {
        bytes.extend_from_slice(&w.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|source| ToynetError::CheckpointWrite {
        path: path_str(path),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ToynetError> {
        if self.bytes.len() - self.at < n {
            return Err(ToynetError::CheckpointTruncated {
                path: self.path.clone(),
                detail: format!(
                    "need {n} bytes for {what} at offset {}, found {}",
                    self.at,
                    self.bytes.len() - self.at
                ),
            });
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn take_u64(&mut self, what: &str) -> Result<u64, ToynetError> {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(self.take(8, what)?);
        Ok(u64::from_le_bytes(buf))
    }

    fn take_len(&mut self, what: &str) -> Result<usize, ToynetError> {
        let v = self.take_u64(what)?;
        usize::try_from(v).map_err(|_| ToynetError::CheckpointTruncated {
            path: self.path.clone(),
            detail: format!("{what} length {v} exceeds addressable memory"),
        })
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SkipNetwork, ToynetError> {
    let path = path.as_ref();
    let name = path_str(path);
    let bytes = std::fs::read(path).map_err(|source| ToynetError::CheckpointRead {
        path: name.clone(),
        source,
    })?;
    let mut r = Reader {
        bytes: &bytes,
        at: 0,
        path: name.clone(),
    };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ToynetError::CheckpointMagic {
            path: name,
            found: [magic[0], magic[1], magic[2], magic[3]],
            expected: CHECKPOINT_MAGIC,
        });
    }
    let version = r.take(1, "version")?[0];
    if version != CHECKPOINT_VERSION {
        return Err(ToynetError::CheckpointVersion {
            path: name,
            found: version,
        });
    }
    r.take(3, "reserved")?;

    let cfg_len = r.take_len("config")?;
    let cfg_json = r.take(cfg_len, "config JSON")?;
    let cfg: SkipNetConfig =
        serde_json::from_slice(cfg_json).map_err(|e| ToynetError::CheckpointMeta {
            path: name.clone(),
            detail: format!("config: {e}"),
        })?;

    let policy_len = r.take_len("policy")?;
    let policy_json = r.take(policy_len, "policy JSON")?;
    let policy: PruningPolicy =
        serde_json::from_slice(policy_json).map_err(|e| ToynetError::CheckpointMeta {
            path: name.clone(),
            detail: format!("policy: {e}"),
        })?;

    let count = r.take_len("weight count")?;
    let mut weights = Vec::with_capacity(count);
    let raw = r.take(count.checked_mul(8).ok_or_else(|| ToynetError::CheckpointTruncated {
        path: name.clone(),
        detail: format!("weight count {count} exceeds addressable memory"),
    })?, "weights")?;
    for chunk in raw.chunks_exact(8) {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(chunk);
        weights.push(f64::from_le_bytes(buf));
    }
    if r.at != bytes.len() {
        return Err(ToynetError::CheckpointTrailing {
            path: name,
            found: bytes.len() - r.at,
        });
    }

    let mut net = SkipNetwork::new(cfg)?;
    if weights.len() != net.stored_param_count() {
        return Err(ToynetError::CheckpointWeights {
            path: name,
            expected: net.stored_param_count(),
            found: weights.len(),
        });
    }
    net.set_all_params(&weights)?;
    net.set_policy(&policy)?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toynet::data::{gen_synthetic, DataKind};
    use crate::toynet::net::TrainConfig;
    use crate::toynet::Composition;

    fn trained_net() -> SkipNetwork {
        let cfg = SkipNetConfig {
            input_dim: 2,
            stem_width: 4,
            units: 3,
            unit_width: 3,
            classes: 2,
            composition: Composition::Dense,
            seed: 21,
        };
        let mut net = SkipNetwork::new(cfg).unwrap();
        let data = gen_synthetic(DataKind::Blobs, 20, 2, 2, 0.3, 1).unwrap();
        net.train(
            &data,
            &TrainConfig {
                epochs: 2,
                lr: 0.05,
                batch_size: 5,
                seed: 0,
            },
        )
        .unwrap();
        let policy = PruningPolicy::from_alphas(vec![1, 0, 1], 1).unwrap();
        net.set_policy(&policy).unwrap();
        net
    }

    #[test]
    fn round_trip_preserves_weights_config_and_policy() {
        let net = trained_net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.pedn");
        save_checkpoint(&net, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.cfg(), net.cfg());
        assert_eq!(back.policy(), net.policy());
        assert_eq!(back.flatten_all_params(), net.flatten_all_params());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.pedn");
        std::fs::write(&path, b"WXYZ0000").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(ToynetError::CheckpointMagic { .. })
        ));
    }

    #[test]
    fn truncation_and_trailing_bytes_are_detected() {
        let net = trained_net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.pedn");
        save_checkpoint(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(ToynetError::CheckpointTruncated { .. })
        ));

        let mut longer = bytes.clone();
        longer.extend_from_slice(&[1, 2, 3]);
        std::fs::write(&path, longer).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(ToynetError::CheckpointTrailing { found: 3, .. })
        ));
    }

    #[test]
    fn weight_count_mismatch_is_detected() {
        let net = trained_net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.pedn");
        save_checkpoint(&net, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Drop the last weight (8 bytes) and patch the count field, which
        // sits right before the weights.
        let count = net.flatten_all_params().len() as u64;
        let count_at = bytes.len() - 8 * count as usize - 8;
        bytes[count_at..count_at + 8].copy_from_slice(&(count - 1).to_le_bytes());
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(ToynetError::CheckpointWeights { .. })
        ));
    }

    #[test]
    fn corrupted_policy_json_names_the_field() {
        let net = trained_net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.pedn");
        save_checkpoint(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let needle = br#""alphas""#;
        let at = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        let mut corrupt = bytes.clone();
        corrupt[at + 1] = b'x';
        std::fs::write(&path, corrupt).unwrap();
        match load_checkpoint(&path) {
            Err(ToynetError::CheckpointMeta { detail, .. }) => {
                assert!(detail.contains("policy"), "{detail}");
            }
            other => panic!("expected CheckpointMeta, got {other:?}"),
        }
    }
}
