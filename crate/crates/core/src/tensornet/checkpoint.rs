//! Binary network checkpoints.
//!
//! Layout (little-endian): magic "HSNC" | version u32 | header length u64 |
//! JSON header (input shape, layer layout, architecture echo) | parameter
//! values f64 in layer order | per batch-norm layer: running mean f64s,
//! running variance f64s, update count u64 | Adam first moments | Adam second
//! moments | Adam update counter u64.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, LayerSpec, Network};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HSNC";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    input: [usize; 3],
    layout: Vec<LayerSpec>,
    arch: Option<ArchConfig>,
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_checkpoint<W: Write>(net: &Network, mut out: W) -> Result<()> {
    let (h, w, c) = net.input_shape();
    let header = serde_json::to_vec(&Header {
        input: [h, w, c],
        layout: net.layout().to_vec(),
        arch: net.arch().cloned(),
    })
    .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    net.visit_params(&mut |p| put_f64s(&mut buf, &p.value));
    net.visit_batchnorm(&mut |bn| {
        put_f64s(&mut buf, &bn.running_mean);
        put_f64s(&mut buf, &bn.running_var);
        buf.extend_from_slice(&bn.updates.to_le_bytes());
    });
    net.visit_params(&mut |p| put_f64s(&mut buf, &p.m));
    net.visit_params(&mut |p| put_f64s(&mut buf, &p.v));
    buf.extend_from_slice(&net.updates.to_le_bytes());
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Truncated {
                expected: (self.pos + n) as u64,
                found: self.data.len() as u64,
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s_into(&mut self, dst: &mut [f64]) -> Result<()> {
        let bytes = self.take(dst.len() * 8)?;
        for (d, chunk) in dst.iter_mut().zip(bytes.chunks_exact(8)) {
            *d = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        Ok(())
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Network> {
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    let mut cur = Cursor { data: &data, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a network checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let header_len = cur.u64()? as usize;
    let header: Header = serde_json::from_slice(cur.take(header_len)?)
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let [h, w, c] = header.input;
    let mut net = Network::from_layout((h, w, c), header.layout, header.arch, 0)?;

    let mut failure = None;
    let mut read_into = |cur: &mut Cursor, dst: &mut [f64]| {
        if failure.is_none() {
            if let Err(e) = cur.f64s_into(dst) {
                failure = Some(e);
            }
        }
    };
    net.visit_params_mut(&mut |p| read_into(&mut cur, &mut p.value));
    net.visit_batchnorm_mut(&mut |bn| {
        read_into(&mut cur, &mut bn.running_mean);
        read_into(&mut cur, &mut bn.running_var);
        let mut count = [0.0];
        read_into(&mut cur, &mut count);
        bn.updates = count[0].to_bits();
    });
    net.visit_params_mut(&mut |p| read_into(&mut cur, &mut p.m));
    net.visit_params_mut(&mut |p| read_into(&mut cur, &mut p.v));
    if let Some(e) = failure {
        return Err(e);
    }
    net.updates = cur.u64()?;
    if cur.pos != data.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", data.len() - cur.pos)));
    }
    let mut bad = false;
    net.visit_params(&mut |p| bad |= p.value.iter().any(|v| !v.is_finite()));
    if bad {
        return Err(Error::InvalidData("non-finite parameter in checkpoint".into()));
    }
    Ok(net)
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    write_checkpoint(net, BufWriter::new(file))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    read_checkpoint(BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::super::{build_network, AdamHyper, Batch, Family};
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn trained_net() -> (Network, Batch) {
        let cfg = ArchConfig::desk(Family::ResnetB, [6, 8, 3], 2);
        let mut net = build_network(&cfg, 5).unwrap();
        let mut rng = stream(3, &[]);
        let x = Batch::new(4, 6, 8, 3, (0..4 * 6 * 8 * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        for _ in 0..3 {
            net.train_batch(&x, &[0, 1, 0, 1], &AdamHyper::default()).unwrap();
        }
        (net, x)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (net, x) = trained_net();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.flat_params(), net.flat_params());
        assert_eq!(back.running_stats(), net.running_stats());
        assert_eq!(back.updates(), net.updates());
        assert_eq!(back.arch(), net.arch());
        assert_eq!(back.predict_proba(&x).unwrap(), net.predict_proba(&x).unwrap());
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let (net, _) = trained_net();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Format(_))));
        let short = &buf[..buf.len() - 9];
        assert!(matches!(read_checkpoint(short), Err(Error::Truncated { .. })));
    }
}
