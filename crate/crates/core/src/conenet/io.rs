//! Binary model files.
//!
//! Layout, little-endian: magic `CNET`, `u32` version, `u32` layer count,
//! one `u32` channel count per layer, `u64` parameter count, then the
//! parameters as `f64`.

use super::{Architecture, ConenetError, Network};

pub const MAGIC: &[u8; 4] = b"CNET";
pub const VERSION: u32 = 1;

/// Upper bound on layers accepted when decoding.
const MAX_LAYERS: usize = 64;

pub fn encode_model(net: &Network) -> Vec<u8> {
    let ch = &net.architecture().channels;
    let mut out = Vec::with_capacity(16 + 4 * ch.len() + 8 * net.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ch.len() as u32).to_le_bytes());
    for c in ch {
        out.extend_from_slice(&(*c as u32).to_le_bytes());
    }
    out.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ConenetError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| ConenetError::Decode(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ConenetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ConenetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Network, ConenetError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ConenetError::Decode("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ConenetError::Decode(format!("unsupported version {version}")));
    }
    let layers = r.u32()? as usize;
    if !(2..=MAX_LAYERS).contains(&layers) {
        return Err(ConenetError::Decode(format!("bad layer count {layers}")));
    }
    let mut channels = Vec::with_capacity(layers);
    for _ in 0..layers {
        let c = r.u32()? as usize;
        if c == 0 || c > 4096 {
            return Err(ConenetError::Decode(format!("bad channel count {c}")));
        }
        channels.push(c);
    }
    let arch = Architecture { channels };
    let count = r.u64()?;
    let expected = Network::param_count_for(&arch);
    if count != expected as u64 {
        return Err(ConenetError::Decode(format!(
            "parameter count {count} does not match architecture ({expected})"
        )));
    }
    let remaining = bytes.len() - r.pos;
    if remaining != 8 * expected {
        return Err(ConenetError::Decode(format!(
            "expected {} parameter bytes, found {remaining}",
            8 * expected
        )));
    }
    let mut params = Vec::with_capacity(expected);
    for _ in 0..expected {
        let v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(ConenetError::Decode("non-finite parameter".into()));
        }
        params.push(v);
    }
    Network::from_params(arch, params).ok_or_else(|| ConenetError::Decode("bad architecture".into()))
}
