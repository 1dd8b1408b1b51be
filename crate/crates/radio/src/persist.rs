//! File formats: a 4-byte magic, a u32 version, a length-prefixed JSON header
//! and little-endian binary blobs.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::dataset::{CfStore, CsiTuple, GroundMeasurementGrid, Normalization};
use crate::error::{RadioError, Result};
use crate::scene::{BsConfig, Scenario};

pub const VERSION: u32 = 1;
const SCENE_MAGIC: &[u8; 4] = b"CF3S";
const STORE_MAGIC: &[u8; 4] = b"CF3T";
const GRID_MAGIC: &[u8; 4] = b"CF3G";

#[derive(Serialize, Deserialize)]
struct SceneHeader {
    version: u32,
    grid_w: usize,
    grid_h: usize,
    seed: u64,
    bs: BsConfig,
}

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    version: u32,
    scenario_id: u64,
    g_thr: f64,
    g_max: f64,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct GridHeader {
    version: u32,
    grid_w: usize,
    grid_h: usize,
}

fn frame<H: Serialize>(magic: &[u8; 4], header: &H, blobs: &[&[u8]]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + blobs.iter().map(|b| b.len()).sum::<usize>());
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for b in blobs {
        out.extend_from_slice(b);
    }
    out
}

fn unframe<'a, H: DeserializeOwned>(magic: &[u8; 4], bytes: &'a [u8]) -> Result<(H, &'a [u8])> {
    if bytes.len() < 12 || &bytes[..4] != magic {
        return Err(RadioError::Format(format!(
            "bad magic, expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(RadioError::Format(format!("unsupported version {}", version)));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes
        .get(12..12 + len)
        .ok_or_else(|| RadioError::Format("truncated header".into()))?;
    let header = serde_json::from_slice(body).map_err(|e| RadioError::Format(format!("header: {}", e)))?;
    Ok((header, &bytes[12 + len..]))
}

fn expect_len(blob: &[u8], want: usize, what: &str) -> Result<()> {
    if blob.len() != want {
        return Err(RadioError::Format(format!(
            "{} blob has {} bytes, expected {}",
            what,
            blob.len(),
            want
        )));
    }
    Ok(())
}

pub fn encode_scenario(scn: &Scenario) -> Vec<u8> {
    let header = SceneHeader {
        version: VERSION,
        grid_w: scn.grid_w,
        grid_h: scn.grid_h,
        seed: scn.seed,
        bs: scn.bs,
    };
    let heights: Vec<u8> = scn.e_v.iter().flat_map(|v| v.to_le_bytes()).collect();
    frame(SCENE_MAGIC, &header, &[&scn.e_h, &heights])
}

pub fn decode_scenario(bytes: &[u8]) -> Result<Scenario> {
    let (h, rest): (SceneHeader, _) = unframe(SCENE_MAGIC, bytes)?;
    let n = h.grid_w * h.grid_h;
    expect_len(rest, n * 5, "scenario")?;
    let e_h = rest[..n].to_vec();
    let e_v = rest[n..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Scenario::from_maps(h.grid_w, h.grid_h, e_h, e_v, h.bs, h.seed)
}

pub fn encode_store(store: &CfStore) -> Vec<u8> {
    let header = StoreHeader {
        version: VERSION,
        scenario_id: store.scenario_id,
        g_thr: store.norm.g_thr,
        g_max: store.norm.g_max,
        count: store.len(),
    };
    let mut records = Vec::with_capacity(store.len() * 40);
    for t in &store.tuples {
        for v in [t.position[0], t.position[1], t.position[2], t.rss_db, t.rss_norm] {
            records.extend_from_slice(&v.to_le_bytes());
        }
    }
    frame(STORE_MAGIC, &header, &[&records])
}

pub fn decode_store(bytes: &[u8]) -> Result<CfStore> {
    let (h, rest): (StoreHeader, _) = unframe(STORE_MAGIC, bytes)?;
    expect_len(rest, h.count * 40, "store")?;
    let norm = Normalization::new(h.g_thr, h.g_max)?;
    let tuples = rest
        .chunks_exact(40)
        .map(|r| {
            let f = |k: usize| f64::from_le_bytes(r[k * 8..k * 8 + 8].try_into().unwrap());
            CsiTuple {
                position: [f(0), f(1), f(2)],
                rss_db: f(3),
                rss_norm: f(4),
            }
        })
        .collect();
    Ok(CfStore {
        tuples,
        scenario_id: h.scenario_id,
        norm,
    })
}

pub fn encode_grid(grid: &GroundMeasurementGrid) -> Vec<u8> {
    let header = GridHeader {
        version: VERSION,
        grid_w: grid.grid_w,
        grid_h: grid.grid_h,
    };
    let values: Vec<u8> = grid.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    frame(GRID_MAGIC, &header, &[&values, &grid.mask])
}

pub fn decode_grid(bytes: &[u8]) -> Result<GroundMeasurementGrid> {
    let (h, rest): (GridHeader, _) = unframe(GRID_MAGIC, bytes)?;
    let n = h.grid_w * h.grid_h;
    expect_len(rest, n * 5, "grid")?;
    let values: Vec<f32> = rest[..4 * n]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(RadioError::Format("grid value outside [0, 1]".into()));
    }
    Ok(GroundMeasurementGrid {
        grid_w: h.grid_w,
        grid_h: h.grid_h,
        values,
        mask: rest[4 * n..].to_vec(),
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn save_scenario(scn: &Scenario, path: &Path) -> Result<()> {
    write(path, &encode_scenario(scn))
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    decode_scenario(&std::fs::read(path)?)
}

pub fn save_store(store: &CfStore, path: &Path) -> Result<()> {
    write(path, &encode_store(store))
}

pub fn load_store(path: &Path) -> Result<CfStore> {
    decode_store(&std::fs::read(path)?)
}

pub fn save_grid(grid: &GroundMeasurementGrid, path: &Path) -> Result<()> {
    write(path, &encode_grid(grid))
}

pub fn load_grid(path: &Path) -> Result<GroundMeasurementGrid> {
    decode_grid(&std::fs::read(path)?)
}
