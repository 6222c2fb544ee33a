//! Little-endian binary frame container and CSV export.
//!
//! Layout (all integers and floats little-endian):
//!
//! | offset | size | field                                        |
//! |--------|------|----------------------------------------------|
//! | 0      | 8    | magic `WVAFRAME`                             |
//! | 8      | 2    | format version (1)                           |
//! | 10     | 2    | scheme code (0 cm, 1 rwva, 2 iwva)           |
//! | 12     | 8    | calibration fingerprint (8 raw bytes)        |
//! | 20     | 32   | θ_i, φ_i, θ_f, φ_f (f64, zeros for cm)       |
//! | 52     | 8    | g (mm)                                       |
//! | 60     | 8    | n̄_t                                          |
//! | 68     | 8    | seed                                         |
//! | 76     | 16   | σ, X₀ (mm)                                   |
//! | 92     | 24   | η, μ_d, σ_d                                  |
//! | 116    | 1    | classical noise flag                         |
//! | 117    | 16   | a, b                                         |
//! | 133    | 4    | k_s                                          |
//! | 137    | 16   | gain, pixel pitch                            |
//! | 153    | 4    | τ (pixels per frame)                         |
//! | 157    | 4    | frame count                                  |
//! | 161    | ...  | readouts, u16 per pixel, frame-major         |

use std::io::{Read, Write};

use thiserror::Error;

use super::{DetectorCalib, Frame, FrameMeta, FrameSet, NoiseLaw};
use crate::qmeter::{MeasurementScheme, MeterParams, QubitState, SchemeKind};

pub const MAGIC: &[u8; 8] = b"WVAFRAME";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 161;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a frame container (bad magic bytes)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    Version(u16),
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error("readout {value} does not fit the 16-bit container")]
    ReadoutRange { value: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(ContainerError::Corrupt("truncated header".into()));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, ContainerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Serializes a frame pool; readouts must fit in 16 bits.
pub fn write_frames<W: Write>(set: &FrameSet, mut out: W) -> Result<(), ContainerError> {
    let m = &set.meta;
    let c = &m.calib;
    let mut h = Vec::with_capacity(HEADER_LEN);
    h.extend_from_slice(MAGIC);
    h.extend_from_slice(&VERSION.to_le_bytes());
    h.extend_from_slice(&(m.scheme.kind().code() as u16).to_le_bytes());
    let fp = hex::decode(c.fingerprint()).expect("fingerprint is hex");
    h.extend_from_slice(&fp);
    let angles = match m.scheme.selection() {
        Some((pre, post)) => [pre.theta(), pre.phi(), post.theta(), post.phi()],
        None => [0.0; 4],
    };
    for a in angles {
        h.extend_from_slice(&a.to_le_bytes());
    }
    h.extend_from_slice(&m.g.to_le_bytes());
    h.extend_from_slice(&m.nbar_t.to_le_bytes());
    h.extend_from_slice(&m.seed.to_le_bytes());
    h.extend_from_slice(&m.meter.sigma().to_le_bytes());
    h.extend_from_slice(&m.meter.x0().to_le_bytes());
    for v in [c.eta, c.mu_d, c.sigma_d] {
        h.extend_from_slice(&v.to_le_bytes());
    }
    let (flag, a, b) = match &c.classical_noise {
        Some(l) => (1u8, l.a, l.b),
        None => (0u8, 0.0, 0.0),
    };
    h.push(flag);
    h.extend_from_slice(&a.to_le_bytes());
    h.extend_from_slice(&b.to_le_bytes());
    h.extend_from_slice(&c.k_s.to_le_bytes());
    h.extend_from_slice(&c.gain.to_le_bytes());
    h.extend_from_slice(&c.pixel_pitch.to_le_bytes());
    h.extend_from_slice(&(c.n_pixels as u32).to_le_bytes());
    h.extend_from_slice(&(set.frames.len() as u32).to_le_bytes());
    debug_assert_eq!(h.len(), HEADER_LEN);
    out.write_all(&h)?;

    let mut payload = Vec::with_capacity(set.frames.len() * c.n_pixels * 2);
    for f in &set.frames {
        if f.readouts.len() != c.n_pixels {
            return Err(ContainerError::Corrupt(format!(
                "frame {} has {} readouts, expected {}",
                f.index,
                f.readouts.len(),
                c.n_pixels
            )));
        }
        for &k in &f.readouts {
            let v = u16::try_from(k).map_err(|_| ContainerError::ReadoutRange { value: k })?;
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&payload)?;
    Ok(())
}

/// Parses a frame container, checking magic, version, sizes and fingerprint.
pub fn read_frames<R: Read>(mut input: R) -> Result<FrameSet, ContainerError> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let mut cur = Cursor { buf: &buf, pos: MAGIC.len() };
    let version = cur.u16()?;
    if version != VERSION {
        return Err(ContainerError::Version(version));
    }
    let code = cur.u16()?;
    let kind = u8::try_from(code)
        .ok()
        .and_then(SchemeKind::from_code)
        .ok_or_else(|| ContainerError::Corrupt(format!("unknown scheme code {code}")))?;
    let fingerprint = hex::encode(cur.take(8)?);
    let angles = [cur.f64()?, cur.f64()?, cur.f64()?, cur.f64()?];
    let g = cur.f64()?;
    let nbar_t = cur.f64()?;
    let seed = cur.u64()?;
    let sigma = cur.f64()?;
    let x0 = cur.f64()?;
    let (eta, mu_d, sigma_d) = (cur.f64()?, cur.f64()?, cur.f64()?);
    let flag = cur.u8()?;
    let (a, b) = (cur.f64()?, cur.f64()?);
    let k_s = cur.u32()?;
    let gain = cur.f64()?;
    let pixel_pitch = cur.f64()?;
    let tau = cur.u32()? as usize;
    let count = cur.u32()? as usize;

    let calib = DetectorCalib {
        eta,
        mu_d,
        sigma_d,
        classical_noise: (flag == 1).then_some(NoiseLaw { a, b }),
        k_s,
        gain,
        pixel_pitch,
        n_pixels: tau,
    };
    calib.validate().map_err(|e| ContainerError::Corrupt(e.to_string()))?;
    if calib.fingerprint() != fingerprint {
        return Err(ContainerError::Corrupt("calibration fingerprint mismatch".into()));
    }
    let meter = MeterParams::new(sigma, x0).map_err(|e| ContainerError::Corrupt(e.to_string()))?;
    let scheme = match kind {
        SchemeKind::Cm => MeasurementScheme::conventional(),
        _ => {
            let pre = QubitState::new(angles[0], angles[1]);
            let post = QubitState::new(angles[2], angles[3]);
            match (pre, post) {
                (Ok(pre), Ok(post)) => MeasurementScheme::from_selection(pre, post)
                    .map_err(|e| ContainerError::Corrupt(e.to_string()))?,
                _ => return Err(ContainerError::Corrupt("invalid selection angles".into())),
            }
        }
    };
    if scheme.kind() != kind {
        return Err(ContainerError::Corrupt("scheme code disagrees with selection angles".into()));
    }

    let expected = HEADER_LEN + count * tau * 2;
    if buf.len() != expected {
        return Err(ContainerError::Corrupt(format!(
            "payload size {} does not match {count} frames of {tau} pixels",
            buf.len() - HEADER_LEN.min(buf.len())
        )));
    }
    let payload = &buf[HEADER_LEN..];
    let frames = payload
        .chunks_exact(tau * 2)
        .enumerate()
        .map(|(i, chunk)| Frame {
            index: i as u32,
            readouts: chunk.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]]) as u32).collect(),
        })
        .collect();
    Ok(FrameSet { meta: FrameMeta { scheme, g, nbar_t, seed, meter, calib }, frames })
}

/// One row per frame: `frame,k_0,...,k_{τ-1}`, preceded by a `#` comment line
/// carrying the run inputs.
pub fn write_frames_csv<W: Write>(set: &FrameSet, mut out: W) -> Result<(), ContainerError> {
    let m = &set.meta;
    writeln!(
        out,
        "# scheme={} g={:.16e} nbar_t={:.16e} seed={} calib={}",
        m.scheme.kind(),
        m.g,
        m.nbar_t,
        m.seed,
        m.calib.fingerprint()
    )?;
    let mut header = String::from("frame");
    for j in 0..m.calib.n_pixels {
        header.push_str(&format!(",k_{j}"));
    }
    writeln!(out, "{header}")?;
    for f in &set.frames {
        let mut line = f.index.to_string();
        for k in &f.readouts {
            line.push(',');
            line.push_str(&k.to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
