//! Text checkpoint format.
//!
//! ```text
//! DRRNET-CKPT v1
//! model.width = 32
//! ...
//! stage0.block0.attention.wq 2 32 32 :
//! 1.2345678901234567e-1 ...
//! ```
//!
//! Each record line is `name rank d1 .. d_rank :`; its values follow on
//! subsequent lines, eight per line, in 17-significant-digit scientific form.

use std::fmt::Write as _;
use std::path::Path;

use drrnet_core::blocks::{Checkpoint, NetConfig, ParamRecord, Pattern};

use crate::error::{HarnessError, Result};

pub const MAGIC: &str = "DRRNET-CKPT";
const PER_LINE: usize = 8;

pub fn to_text(ckpt: &Checkpoint) -> String {
    let c = &ckpt.config;
    let mut out = format!("{MAGIC} v{}\n", ckpt.version);
    for (k, v) in [
        ("model.width", c.width.to_string()),
        ("model.hidden", c.hidden.to_string()),
        ("model.seq_len", c.seq_len.to_string()),
        ("model.stages", c.stages.to_string()),
        ("model.depth_per_stage", c.depth_per_stage.to_string()),
        ("model.pattern", c.pattern.name().to_string()),
        ("model.classes", c.classes.to_string()),
    ] {
        writeln!(out, "{k} = {v}").unwrap();
    }
    for r in &ckpt.records {
        write!(out, "{} {}", r.name, r.shape.len()).unwrap();
        for d in &r.shape {
            write!(out, " {d}").unwrap();
        }
        out.push_str(" :\n");
        for chunk in r.values.chunks(PER_LINE) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn from_text(text: &str) -> std::result::Result<Checkpoint, (usize, String)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, header) = lines.next().ok_or((1, "empty checkpoint".to_string()))?;
    let version = header
        .strip_prefix(MAGIC)
        .and_then(|rest| rest.trim().strip_prefix('v'))
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or((1, format!("bad header {header:?}, expected `{MAGIC} v1`")))?;

    let mut config = NetConfig::default();
    let mut records = Vec::new();
    let mut pending: Option<ParamRecord> = None;
    let mut remaining = 0usize;
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        if remaining > 0 {
            let rec = pending.as_mut().unwrap();
            for tok in line.split_whitespace() {
                if remaining == 0 {
                    return Err((n, format!("{}: too many values", rec.name)));
                }
                let v = tok
                    .parse::<f64>()
                    .map_err(|_| (n, format!("{}: bad value {tok:?}", rec.name)))?;
                rec.values.push(v);
                remaining -= 1;
            }
            if remaining == 0 {
                records.push(pending.take().unwrap());
            }
            continue;
        }
        if let Some((key, value)) = line.split_once('=') {
            if !records.is_empty() {
                return Err((n, "config line after parameter records".into()));
            }
            set_config(&mut config, key.trim(), value.trim()).map_err(|m| (n, m))?;
            continue;
        }
        let body = line
            .strip_suffix(':')
            .ok_or((n, format!("expected a record header ending in ':', got {line:?}")))?;
        let mut toks = body.split_whitespace();
        let name = toks.next().ok_or((n, "record without a name".to_string()))?;
        let rank: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or((n, format!("{name}: missing rank")))?;
        let shape: Vec<usize> = toks
            .map(|t| t.parse().map_err(|_| (n, format!("{name}: bad dimension {t:?}"))))
            .collect::<std::result::Result<_, _>>()?;
        if shape.len() != rank {
            return Err((n, format!("{name}: rank {rank} but {} dimensions", shape.len())));
        }
        let count = shape.iter().product();
        let rec = ParamRecord {
            name: name.to_string(),
            shape,
            values: Vec::with_capacity(count),
        };
        if count == 0 {
            records.push(rec);
        } else {
            pending = Some(rec);
            remaining = count;
        }
    }
    if let Some(rec) = pending {
        return Err((0, format!("{}: missing {remaining} values at end of file", rec.name)));
    }
    Ok(Checkpoint {
        version,
        config,
        records,
    })
}

fn set_config(c: &mut NetConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    let int = || value.parse::<usize>().map_err(|_| format!("{key}: bad integer {value:?}"));
    match key {
        "model.width" => c.width = int()?,
        "model.hidden" => c.hidden = int()?,
        "model.seq_len" => c.seq_len = int()?,
        "model.stages" => c.stages = int()?,
        "model.depth_per_stage" => c.depth_per_stage = int()?,
        "model.classes" => c.classes = int()?,
        "model.pattern" => {
            c.pattern = Pattern::parse(value).ok_or(format!("{key}: unknown pattern {value:?}"))?
        }
        _ => return Err(format!("unknown checkpoint config key {key:?}")),
    }
    Ok(())
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(ckpt)).map_err(|e| HarnessError::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    from_text(&text).map_err(|(line, message)| HarnessError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use drrnet_core::blocks::Backbone;
    use drrnet_core::Prng;

    fn sample() -> (NetConfig, Checkpoint) {
        let cfg = NetConfig {
            width: 4,
            hidden: 6,
            seq_len: 3,
            stages: 2,
            depth_per_stage: 3,
            pattern: Pattern::Interleaved,
            classes: 3,
        };
        let bb = Backbone::<f64>::random(&cfg, &mut Prng::new(4)).unwrap();
        let ckpt = Checkpoint::from_backbone(&cfg, &bb);
        (cfg, ckpt)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let (_, ckpt) = sample();
        let text = to_text(&ckpt);
        let back = from_text(&text).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(to_text(&back), text);
    }

    #[test]
    fn values_round_trip_bit_exactly() {
        let (cfg, mut ckpt) = sample();
        ckpt.records[0].values[0] = 0.1 + 0.2;
        ckpt.records[0].values[1] = f64::MIN_POSITIVE;
        ckpt.records[0].values[2] = -0.0;
        let back = from_text(&to_text(&ckpt)).unwrap();
        let v = &back.records[0].values;
        assert_eq!(v[0].to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(v[1], f64::MIN_POSITIVE);
        assert_eq!(v[2].to_bits(), (-0.0f64).to_bits());
        assert!(back.to_backbone::<f64>(&cfg).is_ok());
    }

    #[test]
    fn header_and_layout() {
        let (_, ckpt) = sample();
        let text = to_text(&ckpt);
        assert!(text.starts_with("DRRNET-CKPT v1\nmodel.width = 4\n"));
        assert!(text.contains("\nstage0.block0.attention.wq 2 4 4 :\n"));
        assert!(text.contains("\nhead.bias 1 3 :\n"));
    }

    #[test]
    fn malformed_inputs() {
        let (_, ckpt) = sample();
        let text = to_text(&ckpt);
        assert_eq!(from_text("NOPE v1").unwrap_err().0, 1);
        let truncated: String = text.lines().take(12).collect::<Vec<_>>().join("\n");
        assert!(from_text(&truncated).is_err());
        let bad_rank = text.replace("wq 2 4 4 :", "wq 3 4 4 :");
        assert!(from_text(&bad_rank).is_err());
        let bad_value = text.replacen("e-1 ", "e-1x ", 1);
        assert!(from_text(&bad_value).is_err());
    }

    #[test]
    fn topology_mismatch_is_reported() {
        let (mut cfg, ckpt) = sample();
        cfg.depth_per_stage = 4;
        let err = from_text(&to_text(&ckpt)).unwrap().to_backbone::<f64>(&cfg).unwrap_err();
        assert!(err.to_string().contains("depth_per_stage"), "{err}");
    }
}
