//! Little-endian binary dataset file.
//!
//! ```text
//! magic "XMAV" | version u16
//! K, clips per class, T, D_V, D_A, m : u32
//! p_event, sigma : f64 | seed : u64
//! per clip: id u32 | label u32 | event mask T bytes
//!           visual T*D_V f32 | audio T*D_A f32
//! ```

use std::path::Path;

use crate::error::{Result, XmaError};
use crate::io_util::{atomic_write, ByteReader};
use crate::synth::{split_sizes, ClipRecord, Dataset, DatasetHeader};

pub const DATASET_MAGIC: [u8; 4] = *b"XMAV";
pub const DATASET_VERSION: u16 = 1;

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let h = &ds.header;
    let mut out = Vec::new();
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for v in [
        h.num_classes,
        h.clips_per_class,
        h.timesteps,
        h.visual_dim,
        h.audio_dim,
        h.latent_dim,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&h.event_prob.to_le_bytes());
    out.extend_from_slice(&h.noise.to_le_bytes());
    out.extend_from_slice(&h.seed.to_le_bytes());
    for c in &ds.clips {
        out.extend_from_slice(&c.id.to_le_bytes());
        out.extend_from_slice(&c.label.to_le_bytes());
        out.extend(c.events.iter().map(|&e| e as u8));
        for x in c.visual.iter().chain(&c.audio) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &encode_dataset(ds))
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes, path);
    let magic = r.array4("magic")?;
    if magic != DATASET_MAGIC {
        return Err(XmaError::BadMagic {
            path: path.to_path_buf(),
            expected: DATASET_MAGIC,
            found: magic,
        });
    }
    let version = r.u16("version")?;
    if version != DATASET_VERSION {
        return Err(XmaError::VersionMismatch {
            path: path.to_path_buf(),
            expected: DATASET_VERSION,
            found: version,
        });
    }
    let header = DatasetHeader {
        num_classes: r.u32("header")?,
        clips_per_class: r.u32("header")?,
        timesteps: r.u32("header")?,
        visual_dim: r.u32("header")?,
        audio_dim: r.u32("header")?,
        latent_dim: r.u32("header")?,
        event_prob: r.f64("header")?,
        noise: r.f64("header")?,
        seed: r.u64("header")?,
    };
    if header.timesteps == 0 || header.visual_dim == 0 || header.audio_dim == 0 {
        return Err(XmaError::Malformed {
            path: path.to_path_buf(),
            context: "zero timesteps or frame dimension in header".into(),
        });
    }
    split_sizes(header.clips_per_class).map_err(|e| XmaError::Malformed {
        path: path.to_path_buf(),
        context: e.to_string(),
    })?;
    let total = header.num_classes as u64 * header.clips_per_class as u64;
    let t = header.timesteps as usize;
    let (dv, da) = (header.visual_dim as usize, header.audio_dim as usize);
    let mut clips = Vec::with_capacity(total as usize);
    for n in 0..total {
        let id = r.u32(&format!("clip #{n} id"))?;
        let ctx = format!("clip id {id}");
        let label = r.u32(&ctx)?;
        let events = r
            .take(t, &ctx)?
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(XmaError::Malformed {
                    path: path.to_path_buf(),
                    context: format!("{ctx}: event flag {other}"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        let visual = r.f32_vec(t * dv, &ctx)?;
        let audio = r.f32_vec(t * da, &ctx)?;
        clips.push(ClipRecord {
            id,
            label,
            events,
            visual,
            audio,
        });
    }
    if !r.is_empty() {
        return Err(XmaError::Malformed {
            path: path.to_path_buf(),
            context: format!("{} trailing bytes", r.remaining()),
        });
    }
    Ok(Dataset { header, clips })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            XmaError::MissingArtifact(path.to_path_buf())
        } else {
            XmaError::io(path, e)
        }
    })?;
    decode_dataset(&bytes, path)
}
