use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::arch::ArchSpec;
use super::network::Network;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"VNCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    arch: ArchSpec,
    arch_hash: u64,
    params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    networks: Vec<Entry>,
    payload_sha256: String,
    metadata: serde_json::Value,
}

/// Named networks plus free-form metadata.
///
/// Layout: magic, version (u32 LE), header length (u64 LE), JSON header, then every
/// network's parameters as little-endian f32 in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub networks: Vec<(String, Network<f32>)>,
    pub metadata: serde_json::Value,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self {
            networks: Vec::new(),
            metadata,
        }
    }

    pub fn with(mut self, name: &str, net: &Network<f32>) -> Self {
        self.networks.push((name.to_string(), net.clone()));
        self
    }

    pub fn get(&self, name: &str) -> Option<&Network<f32>> {
        self.networks.iter().find(|(n, _)| n == name).map(|(_, net)| net)
    }

    /// Network `name`, which must have been built from `expected`.
    pub fn network(&self, name: &str, expected: &ArchSpec) -> Result<Network<f32>> {
        let net = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("no network named {name:?}")))?;
        if net.arch().hash() != expected.hash() {
            return Err(Error::ArchMismatch {
                expected: expected.hash(),
                found: net.arch().hash(),
            });
        }
        Ok(net.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        for (_, net) in &self.networks {
            for p in net.params() {
                payload.extend_from_slice(&p.to_le_bytes());
            }
        }
        let header = Header {
            networks: self
                .networks
                .iter()
                .map(|(name, net)| Entry {
                    name: name.clone(),
                    arch: net.arch().clone(),
                    arch_hash: net.arch().hash(),
                    params: net.param_count(),
                })
                .collect(),
            payload_sha256: hex(&Sha256::digest(&payload)),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| bad("truncated version"))?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
        let len = u64::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&r[..len])?;
        let payload = &r[len..];
        if hex(&Sha256::digest(payload)) != header.payload_sha256 {
            return Err(bad("payload digest mismatch"));
        }
        let total: usize = header.networks.iter().map(|e| e.params).sum();
        if payload.len() != 4 * total {
            return Err(Error::Checkpoint(format!(
                "payload holds {} bytes, header declares {} parameters",
                payload.len(),
                total
            )));
        }
        let mut networks = Vec::with_capacity(header.networks.len());
        let mut offset = 0;
        for e in header.networks {
            if e.arch.hash() != e.arch_hash {
                return Err(Error::ArchMismatch {
                    expected: e.arch.hash(),
                    found: e.arch_hash,
                });
            }
            let mut net = Network::<f32>::zeros(e.arch)?;
            if net.param_count() != e.params {
                return Err(Error::Checkpoint(format!("{}: parameter count disagrees with its architecture", e.name)));
            }
            let values: Vec<f32> = payload[offset..offset + 4 * e.params]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            offset += 4 * e.params;
            net.set_params(&values)?;
            networks.push((e.name, net));
        }
        Ok(Self {
            networks,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// SHA-256 of a file, hex encoded.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn sample() -> Checkpoint {
        let mut rng = substream(1, "ck");
        let actor = Network::<f32>::init(ArchSpec::actor(), &mut rng).unwrap();
        let critic = Network::<f32>::init(ArchSpec::critic(), &mut rng).unwrap();
        Checkpoint::new(serde_json::json!({"episode": 3}))
            .with("actor", &actor)
            .with("critic1", &critic)
    }

    #[test]
    fn roundtrip_is_exact() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.network("actor", &ArchSpec::actor()).unwrap().param_count(), 104_100);
    }

    #[test]
    fn arch_mismatch_rejected() {
        let ck = sample();
        assert!(matches!(
            ck.network("actor", &ArchSpec::critic()),
            Err(Error::ArchMismatch { .. })
        ));
    }

    #[test]
    fn corruption_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let good = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&good[..good.len() - 4]).is_err());
    }

    #[test]
    fn tampered_arch_hash_rejected() {
        let bytes = sample().to_bytes().unwrap();
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let hash = ArchSpec::actor().hash().to_string();
        assert!(text.contains(&hash));
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[16..16 + len]).unwrap();
        let forged = header.replacen(&hash, &(ArchSpec::actor().hash() ^ 1).to_string(), 1);
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(forged.len() as u64).to_le_bytes());
        out.extend_from_slice(forged.as_bytes());
        out.extend_from_slice(&bytes[16 + len..]);
        assert!(matches!(Checkpoint::from_bytes(&out), Err(Error::ArchMismatch { .. })));
    }
}
