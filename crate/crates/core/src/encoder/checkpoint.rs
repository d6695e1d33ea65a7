//! Checkpoint container.
//!
//! ```text
//! QREDUCE-ENCODER 1
//! hidden=64 layers=2 heads=4 ff=128 vocab_size=437 max_len=60 dropout=0.2 seed=0
//! tensors 37
//! embeddings.token 437x64 0
//! ...
//! end
//! <little-endian f32 payload, tensors in directory order>
//! ```
//!
//! Directory offsets are byte offsets into the payload.

use std::io::{BufRead, Write};

use super::{build_layout, Encoder, EncoderConfig};
use crate::{Error, Result};

const MAGIC: &str = "QREDUCE-ENCODER 1";

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &Encoder) -> Result<()> {
    let c = &model.config;
    writeln!(w, "{MAGIC}")?;
    writeln!(
        w,
        "hidden={} layers={} heads={} ff={} vocab_size={} max_len={} dropout={} seed={}",
        c.hidden, c.layers, c.heads, c.ff, c.vocab_size, c.max_len, c.dropout, c.seed
    )?;
    writeln!(w, "tensors {}", model.layout.tensors.len())?;
    for t in &model.layout.tensors {
        let shape: Vec<String> = t.shape.iter().map(usize::to_string).collect();
        writeln!(w, "{} {} {}", t.name, shape.join("x"), t.offset * 4)?;
    }
    writeln!(w, "end")?;
    let mut payload = Vec::with_capacity(model.params.len() * 4);
    for &p in &model.params {
        payload.extend_from_slice(&(p as f32).to_le_bytes());
    }
    w.write_all(&payload)?;
    Ok(())
}

fn header_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(bad("unexpected end of header"));
    }
    Ok(line.trim_end_matches('\n').to_owned())
}

fn parse_config(line: &str) -> Result<EncoderConfig> {
    let mut cfg = EncoderConfig::toy(0, 0);
    let mut seen = 0;
    for kv in line.split_whitespace() {
        let (key, val) = kv.split_once('=').ok_or_else(|| bad(format!("bad config entry `{kv}`")))?;
        let int = || val.parse::<usize>().map_err(|_| bad(format!("bad value for {key}")));
        match key {
            "hidden" => cfg.hidden = int()?,
            "layers" => cfg.layers = int()?,
            "heads" => cfg.heads = int()?,
            "ff" => cfg.ff = int()?,
            "vocab_size" => cfg.vocab_size = int()?,
            "max_len" => cfg.max_len = int()?,
            "dropout" => cfg.dropout = val.parse().map_err(|_| bad("bad dropout"))?,
            "seed" => cfg.seed = val.parse().map_err(|_| bad("bad seed"))?,
            other => return Err(bad(format!("unknown config key `{other}`"))),
        }
        seen += 1;
    }
    if seen != 8 {
        return Err(bad("incomplete config line"));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<Encoder> {
    if header_line(&mut r)? != MAGIC {
        return Err(bad("not an encoder checkpoint"));
    }
    let cfg = parse_config(&header_line(&mut r)?)?;
    let (layout, _, _) = build_layout(&cfg);
    let count_line = header_line(&mut r)?;
    let count: usize = count_line
        .strip_prefix("tensors ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| bad("missing tensor count"))?;
    if count != layout.tensors.len() {
        return Err(bad(format!("expected {} tensors, found {count}", layout.tensors.len())));
    }
    for t in &layout.tensors {
        let line = header_line(&mut r)?;
        let fields: Vec<&str> = line.split(' ').collect();
        let shape: Vec<String> = t.shape.iter().map(usize::to_string).collect();
        let offset = (t.offset * 4).to_string();
        if fields != [t.name.as_str(), &shape.join("x"), &offset] {
            return Err(bad(format!("directory entry `{line}` does not match `{}`", t.name)));
        }
    }
    if header_line(&mut r)? != "end" {
        return Err(bad("missing end of directory"));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != layout.total * 4 {
        return Err(bad(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            layout.total * 4
        )));
    }
    let params: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(bad("non-finite parameter"));
    }
    Encoder::from_parts(cfg, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_single_precision() {
        let mut cfg = EncoderConfig::toy(20, 12);
        cfg.hidden = 8;
        cfg.heads = 2;
        cfg.ff = 16;
        cfg.seed = 4;
        let model = Encoder::init(cfg).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.config(), model.config());
        for (a, b) in back.params().iter().zip(model.params()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        // Writing the reloaded model is byte-identical.
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(buf, again);

        let text = String::from_utf8_lossy(&buf);
        assert!(text.starts_with("QREDUCE-ENCODER 1\nhidden=8 layers=2"));
        assert!(text.contains("\nembeddings.token 20x8 0\n"));
    }

    #[test]
    fn rejects_corruption() {
        let model = Encoder::init(EncoderConfig {
            hidden: 4,
            heads: 1,
            ff: 4,
            layers: 1,
            ..EncoderConfig::toy(6, 5)
        })
        .unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model).unwrap();
        let truncated = &buf[..buf.len() - 4];
        assert!(read_checkpoint(truncated).is_err());
        assert!(read_checkpoint(&b"garbage\n"[..]).is_err());
        let text = String::from_utf8_lossy(&buf).replace("ff=4", "ff=5");
        assert!(read_checkpoint(text.as_bytes()).is_err());
    }
}
