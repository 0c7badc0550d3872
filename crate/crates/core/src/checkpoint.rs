//! Parameter checkpoints.
//!
//! ```text
//! magic "XMAP" | version u16 | network count u32
//! per network: activation u8 | input kind u8 | activate output u8 | frozen u8
//!              width count u32 | widths u32...
//! then, per network in order: f64 parameters in layer order
//! ```
//!
//! A visual checkpoint holds `[f_V, G]`, an audio checkpoint `[frame net, head]`.

use std::path::Path;

use crate::encoders::{AudioEncoder, VisualModels};
use crate::error::{Result, XmaError};
use crate::io_util::{atomic_write, ByteReader};
use crate::network::{Activation, InputKind, Mlp, NetworkSpec};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"XMAP";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn encode_networks(nets: &[&Mlp]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(nets.len() as u32).to_le_bytes());
    for net in nets {
        let spec = net.spec();
        out.push(spec.activation.code());
        out.push(spec.input_kind.code());
        out.push(spec.activate_output as u8);
        out.push(net.is_frozen() as u8);
        out.extend_from_slice(&(spec.widths.len() as u32).to_le_bytes());
        for &w in &spec.widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
    }
    for net in nets {
        for p in net.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    out
}

pub fn decode_networks(bytes: &[u8], path: &Path) -> Result<Vec<Mlp>> {
    let malformed = |context: String| XmaError::Malformed {
        path: path.to_path_buf(),
        context,
    };
    let mut r = ByteReader::new(bytes, path);
    let magic = r.array4("magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(XmaError::BadMagic {
            path: path.to_path_buf(),
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(XmaError::VersionMismatch {
            path: path.to_path_buf(),
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let count = r.u32("network count")? as usize;
    if count > 64 {
        return Err(malformed(format!("implausible network count {count}")));
    }
    let mut specs = Vec::with_capacity(count);
    for n in 0..count {
        let ctx = format!("network {n} spec");
        let activation = Activation::from_code(r.u8(&ctx)?)
            .ok_or_else(|| malformed(format!("{ctx}: unknown activation")))?;
        let input_kind = InputKind::from_code(r.u8(&ctx)?)
            .ok_or_else(|| malformed(format!("{ctx}: unknown input kind")))?;
        let activate_output = r.u8(&ctx)? != 0;
        let frozen = r.u8(&ctx)? != 0;
        let n_widths = r.u32(&ctx)? as usize;
        if n_widths > 1024 {
            return Err(malformed(format!("{ctx}: implausible width count {n_widths}")));
        }
        let widths = (0..n_widths)
            .map(|_| r.u32(&ctx).map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let spec = NetworkSpec::new(widths, activation, input_kind, activate_output)
            .map_err(|e| malformed(format!("{ctx}: {e}")))?;
        specs.push((spec, frozen));
    }
    let mut nets = Vec::with_capacity(count);
    for (n, (spec, frozen)) in specs.into_iter().enumerate() {
        let params = r.f64_vec(spec.param_count(), &format!("network {n} parameters"))?;
        nets.push(Mlp::from_params(spec, params, frozen).map_err(|e| malformed(e.to_string()))?);
    }
    if !r.is_empty() {
        return Err(malformed(format!("{} trailing bytes", r.remaining())));
    }
    Ok(nets)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            XmaError::MissingArtifact(path.to_path_buf())
        } else {
            XmaError::io(path, e)
        }
    })
}

pub fn save_visual(models: &VisualModels, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &encode_networks(&[&models.encoder, &models.generator]))
}

pub fn load_visual(path: impl AsRef<Path>) -> Result<VisualModels> {
    let path = path.as_ref();
    let mut nets = decode_networks(&read(path)?, path)?;
    if nets.len() != 2 {
        return Err(XmaError::Malformed {
            path: path.to_path_buf(),
            context: format!("visual checkpoint holds {} networks, expected 2", nets.len()),
        });
    }
    let generator = nets.pop().unwrap();
    let encoder = nets.pop().unwrap();
    let models = VisualModels { encoder, generator };
    models.validate()?;
    Ok(models)
}

pub fn save_audio(encoder: &AudioEncoder, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &encode_networks(&[&encoder.frame_net, &encoder.head]))
}

pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioEncoder> {
    let path = path.as_ref();
    let mut nets = decode_networks(&read(path)?, path)?;
    if nets.len() != 2 {
        return Err(XmaError::Malformed {
            path: path.to_path_buf(),
            context: format!("audio checkpoint holds {} networks, expected 2", nets.len()),
        });
    }
    let head = nets.pop().unwrap();
    let frame_net = nets.pop().unwrap();
    AudioEncoder::from_networks(frame_net, head)
}
