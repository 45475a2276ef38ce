//! Plain-text checkpoint format. Values are written as the hex of their IEEE
//! bit pattern, so a save / load cycle is bit-exact.
//!
//! ```text
//! ccoref-checkpoint 1
//! seed 7
//! step 120
//! tensor encoder.embed encoder 40 16
//! 3fb999999999999a bfc3333333333333 ...
//! ```

use std::fs;
use std::path::Path;

use super::store::{ParamGroup, ParameterStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "ccoref-checkpoint 1";

pub fn to_checkpoint_string(store: &ParameterStore) -> String {
    let mut s = String::new();
    s.push_str(MAGIC);
    s.push('\n');
    s.push_str(&format!("seed {}\nstep {}\n", store.seed, store.step));
    for t in &store.tensors {
        s.push_str(&format!(
            "tensor {} {} {} {}\n",
            t.name,
            t.group.as_str(),
            t.rows,
            t.cols
        ));
        let hex: Vec<String> = t.data.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
        s.push_str(&hex.join(" "));
        s.push('\n');
    }
    s
}

pub fn save_checkpoint(store: &ParameterStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_checkpoint_string(store)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParameterStore> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text)
}

pub fn parse_checkpoint(text: &str) -> Result<ParameterStore> {
    let bad = |m: String| Error::Checkpoint(m);
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing header".into()));
    }
    let mut field = |key: &str| -> Result<u64> {
        let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
        line.strip_prefix(key)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad(format!("malformed {key} line {line:?}")))
    };
    let seed = field("seed ")?;
    let step = field("step ")?;
    let mut tensors = Vec::new();
    while let Some(header) = lines.next() {
        if header.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 5 || f[0] != "tensor" {
            return Err(bad(format!("malformed tensor header {header:?}")));
        }
        let group = match f[2] {
            "encoder" => ParamGroup::Encoder,
            "task" => ParamGroup::Task,
            g => return Err(bad(format!("unknown group {g}"))),
        };
        let rows: usize = f[3].parse().map_err(|_| bad(format!("bad rows in {header:?}")))?;
        let cols: usize = f[4].parse().map_err(|_| bad(format!("bad cols in {header:?}")))?;
        let body = lines.next().unwrap_or("");
        let data = body
            .split_whitespace()
            .map(|h| u64::from_str_radix(h, 16).map(f64::from_bits))
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| bad(format!("tensor {}: {e}", f[1])))?;
        if data.len() != rows * cols {
            return Err(Error::Shape {
                name: f[1].to_string(),
                expected: rows * cols,
                actual: data.len(),
            });
        }
        tensors.push(Tensor {
            name: f[1].to_string(),
            rows,
            cols,
            group,
            data,
        });
    }
    Ok(ParameterStore {
        tensors,
        step,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            vals in proptest::collection::vec(any::<f64>(), 0..24),
            seed in any::<u64>(),
            step in any::<u64>(),
        ) {
            let store = ParameterStore {
                tensors: vec![
                    Tensor { name: "a.b".into(), rows: 1, cols: vals.len(), group: ParamGroup::Task, data: vals.clone() },
                    Tensor { name: "empty".into(), rows: 0, cols: 3, group: ParamGroup::Encoder, data: vec![] },
                ],
                step,
                seed,
            };
            let back = parse_checkpoint(&to_checkpoint_string(&store)).unwrap();
            prop_assert_eq!(back.seed, seed);
            prop_assert_eq!(back.step, step);
            let bits = |s: &ParameterStore| -> Vec<u64> { s.tensors[0].data.iter().map(|v| v.to_bits()).collect() };
            prop_assert_eq!(bits(&back), bits(&store));
            prop_assert_eq!(back.tensors[1].rows, 0);
        }
    }

    #[test]
    fn truncated_tensor_is_rejected() {
        let text = format!("{MAGIC}\nseed 1\nstep 0\ntensor w task 1 2\n3ff0000000000000\n");
        assert!(matches!(parse_checkpoint(&text), Err(Error::Shape { .. })));
        assert!(parse_checkpoint("nonsense").is_err());
    }
}
