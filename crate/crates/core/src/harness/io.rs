//! Versioned artifact files: a JSON envelope with provenance, plus an
//! optional little-endian f64 sidecar holding network weights.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distill::EndToEndPolicy;
use crate::error::{Error, Result};
use crate::hsp::HspAgent;
use crate::learners::{Approximator, Mlp};

pub const FORMAT: &str = "skillforge";
pub const FORMAT_VERSION: u32 = 1;

/// Who produced an artifact.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactProvenance {
    pub config_hash: String,
    pub seed: u64,
    pub producer: String,
    pub crate_version: String,
}

impl ArtifactProvenance {
    pub fn new(config_hash: &str, seed: u64, producer: &str) -> Self {
        ArtifactProvenance {
            config_hash: config_hash.into(),
            seed,
            producer: producer.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarRef {
    pub file: String,
    pub count: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    kind: String,
    version: u32,
    provenance: ArtifactProvenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sidecar: Option<SidecarRef>,
    body: T,
}

/// Values whose network weights are stored out of line.
pub trait Weights {
    fn networks(&mut self) -> Vec<&mut Mlp>;
}

impl Weights for HspAgent {
    fn networks(&mut self) -> Vec<&mut Mlp> {
        self.approximators_mut().into_iter().map(|a| &mut a.net).collect()
    }
}

impl Weights for Vec<Approximator> {
    fn networks(&mut self) -> Vec<&mut Mlp> {
        self.iter_mut().map(|a| &mut a.net).collect()
    }
}

impl Weights for EndToEndPolicy {
    fn networks(&mut self) -> Vec<&mut Mlp> {
        vec![&mut self.policy.net]
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| io_err(path, e))
}

fn sidecar_path(json: &Path) -> PathBuf {
    json.with_extension("f64")
}

fn encode(header_and_body: &impl Serialize, path: &Path) -> Result<Vec<u8>> {
    let mut text = serde_json::to_vec_pretty(header_and_body).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    text.push(b'\n');
    Ok(text)
}

/// Writes a plain JSON artifact.
pub fn save_json<T: Serialize>(path: &Path, kind: &str, provenance: &ArtifactProvenance, body: &T) -> Result<()> {
    let env = Envelope { format: FORMAT.into(), kind: kind.into(), version: FORMAT_VERSION, provenance: provenance.clone(), sidecar: None, body };
    write_bytes(path, &encode(&env, path)?)
}

/// Writes a JSON artifact and its weight sidecar next to it.
pub fn save_with_weights<T: Serialize + Weights + Clone>(path: &Path, kind: &str, provenance: &ArtifactProvenance, body: &T) -> Result<()> {
    let mut copy = body.clone();
    let mut flat: Vec<u8> = Vec::new();
    let mut count = 0;
    for net in copy.networks() {
        for v in &net.params {
            flat.extend_from_slice(&v.to_le_bytes());
        }
        count += net.params.len();
    }
    let side = sidecar_path(path);
    write_bytes(&side, &flat)?;
    let sidecar = SidecarRef {
        file: side.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        count,
        sha256: sha256_hex(&flat),
    };
    let env = Envelope { format: FORMAT.into(), kind: kind.into(), version: FORMAT_VERSION, provenance: provenance.clone(), sidecar: Some(sidecar), body: &copy };
    write_bytes(path, &encode(&env, path)?)
}

/// Header fields checked before the body is interpreted.
fn check_header(path: &Path, value: &serde_json::Value, kind: &str) -> Result<()> {
    let format = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
    if format != FORMAT {
        return Err(Error::InvalidDataset(format!("{} is not a {FORMAT} artifact", path.display())));
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(u64::MAX);
    if version > FORMAT_VERSION as u64 {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version.min(u32::MAX as u64) as u32,
            supported: FORMAT_VERSION,
        });
    }
    let found = value.get("kind").and_then(|v| v.as_str()).unwrap_or("");
    if found != kind {
        return Err(Error::InvalidDataset(format!("{} holds a {found} artifact, expected {kind}", path.display())));
    }
    Ok(())
}

fn load_envelope<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Envelope<T>> {
    let bytes = read_bytes(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    check_header(path, &value, kind)?;
    serde_json::from_value(value).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })
}

/// Provenance of any artifact, without interpreting its body.
pub fn read_provenance(path: &Path) -> Result<ArtifactProvenance> {
    let bytes = read_bytes(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(u64::MAX);
    if version > FORMAT_VERSION as u64 {
        return Err(Error::UnsupportedVersion { path: path.to_path_buf(), found: version as u32, supported: FORMAT_VERSION });
    }
    let p = value.get("provenance").cloned().unwrap_or_default();
    serde_json::from_value(p).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })
}

pub fn load_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<(T, ArtifactProvenance)> {
    let env: Envelope<T> = load_envelope(path, kind)?;
    Ok((env.body, env.provenance))
}

pub fn load_with_weights<T: DeserializeOwned + Weights>(path: &Path, kind: &str) -> Result<(T, ArtifactProvenance)> {
    let mut env: Envelope<T> = load_envelope(path, kind)?;
    let side_ref = env.sidecar.clone().ok_or_else(|| Error::Sidecar { path: path.to_path_buf(), reason: "no sidecar reference".into() })?;
    let side = path.with_file_name(&side_ref.file);
    let bytes = read_bytes(&side)?;
    let bad = |reason: String| Error::Sidecar { path: side.clone(), reason };
    if bytes.len() != 8 * side_ref.count {
        return Err(bad(format!("{} bytes for {} values", bytes.len(), side_ref.count)));
    }
    if sha256_hex(&bytes) != side_ref.sha256 {
        return Err(bad("checksum mismatch".into()));
    }
    let mut values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    let mut used = 0;
    for net in env.body.networks() {
        // layer sizes live in the manifest, values in the sidecar
        let n = Mlp::n_params_for(&net.sizes);
        net.params = values.by_ref().take(n).collect();
        if net.params.len() != n {
            return Err(bad(format!("sidecar ends before network of {n} parameters")));
        }
        used += n;
    }
    if used != side_ref.count {
        return Err(bad(format!("manifest networks use {used} of {} values", side_ref.count)));
    }
    Ok((env.body, env.provenance))
}
