//! Checkpoint files: `LEAPSCKPT`, a little-endian `u16` format version, a
//! `u64` length and that many bytes of JSON manifest, then the flux-net and
//! free-energy parameters as little-endian `f64` in manifest order. The
//! manifest carries a SHA-256 of the parameter bytes, so edited or corrupted
//! parameters are refused at load time.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layout::Layout;
use super::{FluxNet, FreeEnergyNet, NetSpec};
use crate::{Error, Result};

const MAGIC: &[u8; 9] = b"LEAPSCKPT";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub net: NetSpec,
    pub layout: Layout,
    pub free_energy_hidden: usize,
    pub free_energy_params: usize,
    pub params_sha256: String,
}

fn digest(body: &[u8]) -> String {
    Sha256::digest(body).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn to_bytes(net: &FluxNet, gphi: &FreeEnergyNet) -> Result<Vec<u8>> {
    let mut body = Vec::with_capacity(8 * (net.n_params() + gphi.n_params()));
    for v in net.params().iter().chain(gphi.params()) {
        body.extend_from_slice(&v.to_le_bytes());
    }
    let manifest = Manifest {
        net: net.spec().clone(),
        layout: net.layout().clone(),
        free_energy_hidden: gphi.hidden(),
        free_energy_params: gphi.n_params(),
        params_sha256: digest(&body),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(MAGIC.len() + 10 + json.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&body);
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = at.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| {
        Error::Format(format!("checkpoint truncated while reading {what} ({} bytes available)", bytes.len()))
    })?;
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(FluxNet, FreeEnergyNet)> {
    let mut at = 0;
    if take(bytes, &mut at, MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Format("not a LEAPS checkpoint (bad magic)".into()));
    }
    let version = u16::from_le_bytes(take(bytes, &mut at, 2, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint format version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(take(bytes, &mut at, 8, "manifest length")?.try_into().unwrap());
    let json = take(bytes, &mut at, usize::try_from(len).unwrap_or(usize::MAX), "manifest")?;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("bad checkpoint manifest: {e}")))?;
    let mut net = FluxNet::zeros(manifest.net.clone())?;
    if net.layout() != &manifest.layout {
        return Err(Error::Format("manifest layout disagrees with its own net spec".into()));
    }
    let mut gphi = FreeEnergyNet::zeros(manifest.free_energy_hidden)?;
    if gphi.n_params() != manifest.free_energy_params {
        return Err(Error::Format("free-energy parameter count disagrees with its width".into()));
    }
    let n_theta = net.n_params();
    let n_phi = gphi.n_params();
    let body = take(bytes, &mut at, 8 * (n_theta + n_phi), "parameters")?;
    if at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after parameters", bytes.len() - at)));
    }
    if digest(body) != manifest.params_sha256 {
        return Err(Error::Format("parameter checksum mismatch; the checkpoint was modified or corrupted".into()));
    }
    let values: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    net.set_params(values[..n_theta].to_vec())
        .map_err(|e| Error::Format(format!("checkpoint parameters rejected: {e}")))?;
    gphi.set_params(values[n_theta..].to_vec())
        .map_err(|e| Error::Format(format!("checkpoint parameters rejected: {e}")))?;
    Ok((net, gphi))
}

/// Writes to a sibling temp file and renames, so readers never see a partial file.
pub fn save_checkpoint(path: impl AsRef<Path>, net: &FluxNet, gphi: &FreeEnergyNet) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(net, gphi)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(FluxNet, FreeEnergyNet)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    from_bytes(&bytes).map_err(|e| e.context(format!("loading {}", path.display())))
}

/// Loads and insists the checkpoint was built for `spec` and `free_energy_hidden`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, spec: &NetSpec, free_energy_hidden: usize) -> Result<(FluxNet, FreeEnergyNet)> {
    let (net, gphi) = load_checkpoint(path)?;
    if net.spec() != spec {
        return Err(Error::ManifestMismatch(format!(
            "checkpoint net {} does not match configured {}",
            serde_json::to_string(net.spec())?,
            serde_json::to_string(spec)?
        )));
    }
    if gphi.hidden() != free_energy_hidden {
        return Err(Error::ManifestMismatch(format!(
            "checkpoint free-energy width {} does not match configured {free_energy_hidden}",
            gphi.hidden()
        )));
    }
    Ok((net, gphi))
}
