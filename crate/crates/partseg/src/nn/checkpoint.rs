//! PNET parameter checkpoints: magic, version, alpha, architecture hash,
//! then named parameter arrays in a fixed order. Round-trip is bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::graph::Param;
use crate::nn::net::MultiPathNet;

const MAGIC: &[u8; 4] = b"PNET";
const VERSION: u16 = 1;

fn write_param(buf: &mut Vec<u8>, p: &Param) {
    buf.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
    buf.extend_from_slice(p.name.as_bytes());
    buf.push(p.shape.len() as u8);
    for &d in &p.shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &p.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse("checkpoint truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_param_into(r: &mut Reader, p: &mut Param) -> Result<()> {
    let name_len = r.u16()? as usize;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|_| Error::parse("checkpoint: bad parameter name"))?;
    if name != p.name {
        return Err(Error::parse(format!(
            "checkpoint: expected parameter {}, found {}",
            p.name, name
        )));
    }
    let ndims = r.take(1)?[0] as usize;
    let mut shape = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        shape.push(r.u32()? as usize);
    }
    if shape != p.shape {
        return Err(Error::parse(format!(
            "checkpoint: parameter {} shape mismatch",
            p.name
        )));
    }
    for v in p.data.iter_mut() {
        *v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    }
    Ok(())
}

pub fn save_checkpoint(net: &MultiPathNet, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(net.alpha as u16).to_le_bytes());
    buf.extend_from_slice(&net.architecture_hash().to_le_bytes());
    for p in &net.encoder.params {
        write_param(&mut buf, p);
    }
    for d in &net.decoders {
        for p in &d.params {
            write_param(&mut buf, p);
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MultiPathNet> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(Error::parse(format!("{}: not a PNET checkpoint", path.display())));
    }
    if r.u16()? != VERSION {
        return Err(Error::parse("unsupported checkpoint version"));
    }
    let alpha = r.u16()? as usize;
    let arch_hash = r.u64()?;
    let mut net = MultiPathNet::new(alpha, 0)?;
    if arch_hash != net.architecture_hash() {
        return Err(Error::parse("checkpoint architecture hash mismatch"));
    }
    for p in &mut net.encoder.params {
        read_param_into(&mut r, p)?;
    }
    for d in &mut net.decoders {
        for p in &mut d.params {
            read_param_into(&mut r, p)?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::parse("checkpoint has trailing bytes"));
    }
    Ok(net)
}
