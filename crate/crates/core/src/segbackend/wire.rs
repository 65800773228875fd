//! Binary frames exchanged with an external segmenter process.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! request:  "SGRQ" | u32 version | u32 nx | u32 ny | u32 nz | f32 spacing_mm
//!           | u8 mode | nx*ny*nz f32 intensity | nx*ny*nz u8 memory
//! response: "SGRS" | u32 version | f32 predicted_level | nx*ny*nz f32 probabilities
//! ```

use super::{BackendError, Mode, SegmentRequest, SegmentResponse};
use crate::volgrid::Patch;

pub const REQUEST_MAGIC: &[u8; 4] = b"SGRQ";
pub const RESPONSE_MAGIC: &[u8; 4] = b"SGRS";
pub const VERSION: u32 = 1;

pub const REQUEST_HEADER_BYTES: usize = 4 + 4 + 12 + 4 + 1;
pub const RESPONSE_HEADER_BYTES: usize = 4 + 4 + 4;

pub fn request_len(voxels: usize) -> usize {
    REQUEST_HEADER_BYTES + voxels * 5
}

pub fn response_len(voxels: usize) -> usize {
    RESPONSE_HEADER_BYTES + voxels * 4
}

pub fn encode_request(req: &SegmentRequest) -> Result<Vec<u8>, BackendError> {
    let size = req.intensity.size();
    if req.memory.size() != size {
        return Err(BackendError::Protocol(format!(
            "intensity patch {size:?} and memory patch {:?} differ",
            req.memory.size()
        )));
    }
    let mut out = Vec::with_capacity(request_len(req.voxels()));
    out.extend_from_slice(REQUEST_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in size {
        let d = u32::try_from(d).map_err(|_| BackendError::Protocol(format!("patch dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&req.spacing_mm.to_le_bytes());
    out.push(req.mode.wire_code());
    for v in req.intensity.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(req.memory.data());
    Ok(out)
}

/// Parses a complete request frame. Decoded patches start at the origin and
/// use a fill of 0, since neither travels on the wire.
pub fn decode_request(frame: &[u8]) -> Result<SegmentRequest, BackendError> {
    if frame.len() < REQUEST_HEADER_BYTES {
        return Err(BackendError::Protocol(format!("request truncated at {} bytes", frame.len())));
    }
    check_magic_version(frame, REQUEST_MAGIC)?;
    let dims = [u32_at(frame, 8) as usize, u32_at(frame, 12) as usize, u32_at(frame, 16) as usize];
    let spacing_mm = f32_at(frame, 20);
    let mode = Mode::from_wire(frame[24]).ok_or_else(|| BackendError::Protocol(format!("unknown mode byte {}", frame[24])))?;
    let voxels = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| BackendError::Protocol(format!("patch dims {dims:?} overflow")))?;
    if voxels.checked_mul(5).and_then(|b| b.checked_add(REQUEST_HEADER_BYTES)) != Some(frame.len()) {
        return Err(BackendError::Protocol(format!(
            "request of {} bytes does not match dims {dims:?}",
            frame.len()
        )));
    }
    if !(spacing_mm.is_finite() && spacing_mm > 0.0) {
        return Err(BackendError::Range(format!("spacing {spacing_mm} is not positive")));
    }
    let body = &frame[REQUEST_HEADER_BYTES..];
    let intensity: Vec<f32> = body[..voxels * 4].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let memory = body[voxels * 4..].to_vec();
    let spacing = [spacing_mm as f64; 3];
    let bad = |e: crate::Error| BackendError::Protocol(e.to_string());
    Ok(SegmentRequest {
        intensity: Patch::from_parts(dims, spacing, [0; 3], 0.0, intensity).map_err(bad)?,
        memory: Patch::from_parts(dims, spacing, [0; 3], 0, memory).map_err(bad)?,
        mode,
        spacing_mm,
    })
}

pub fn encode_response(resp: &SegmentResponse) -> Vec<u8> {
    let mut out = Vec::with_capacity(response_len(resp.probabilities.len()));
    out.extend_from_slice(RESPONSE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&resp.predicted_level.to_le_bytes());
    for p in &resp.probabilities {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

/// Parses and validates a response frame for a request of `voxels` voxels.
pub fn decode_response(frame: &[u8], voxels: usize) -> Result<SegmentResponse, BackendError> {
    if frame.len() < RESPONSE_HEADER_BYTES {
        return Err(BackendError::Protocol(format!("response truncated at {} bytes", frame.len())));
    }
    check_magic_version(frame, RESPONSE_MAGIC)?;
    if frame.len() != response_len(voxels) {
        return Err(BackendError::Protocol(format!(
            "response of {} bytes, expected {} for {voxels} voxels",
            frame.len(),
            response_len(voxels)
        )));
    }
    let resp = SegmentResponse {
        predicted_level: f32_at(frame, 8),
        probabilities: frame[RESPONSE_HEADER_BYTES..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    resp.validate(voxels)?;
    Ok(resp)
}

/// Checks the first eight bytes of a frame.
pub fn check_magic_version(frame: &[u8], magic: &[u8; 4]) -> Result<(), BackendError> {
    if frame.len() < 4 || &frame[..4] != magic {
        let got = &frame[..frame.len().min(4)];
        return Err(BackendError::Protocol(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(got),
            String::from_utf8_lossy(magic)
        )));
    }
    if frame.len() >= 8 {
        let version = u32_at(frame, 4);
        if version != VERSION {
            return Err(BackendError::Protocol(format!("unsupported protocol version {version}")));
        }
    }
    Ok(())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}
