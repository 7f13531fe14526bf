//! Parameter checkpoint (`.kdpn`): magic `KDPN`, version u32, layer count u32,
//! layer sizes u32 each, parameters as LE f32 in the network's flat layout,
//! CRC32 of all preceding bytes.

use std::fs;
use std::path::Path;

use super::net::FeedForwardNet;
use crate::binio::{Reader, Writer};
use crate::error::{Error, FormatError, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"KDPN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_net(net: &FeedForwardNet) -> Vec<u8> {
    let mut w = Writer::new(&CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    w.u32(net.sizes().len() as u32);
    for &s in net.sizes() {
        w.u32(s as u32);
    }
    w.f32s(net.params());
    w.finish()
}

pub fn decode_net(bytes: &[u8]) -> Result<FeedForwardNet> {
    let mut r = Reader::open(bytes, &CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let n = r.u32()? as usize;
    if !(2..=64).contains(&n) {
        return Err(FormatError::Header(format!("implausible layer count {n}")).into());
    }
    let mut sizes = Vec::with_capacity(n);
    for _ in 0..n {
        sizes.push(r.u32()? as usize);
    }
    let count = FeedForwardNet::zeros(&sizes)
        .map_err(|e| FormatError::Header(e.to_string()))?
        .param_count();
    r.expect_body(count * 4)?;
    let params = r.f32s(count)?;
    FeedForwardNet::from_params(&sizes, params)
}

pub fn save_net(net: &FeedForwardNet, path: &Path) -> Result<()> {
    fs::write(path, encode_net(net)).map_err(|e| Error::io(path, e))
}

pub fn load_net(path: &Path) -> Result<FeedForwardNet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_net(&bytes)
}
