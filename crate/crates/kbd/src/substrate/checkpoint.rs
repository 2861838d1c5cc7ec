use super::{ParamSet, SubstrateError, Tensor};
use std::collections::BTreeMap;
use std::path::Path;

/// Self-describing text snapshot of a parameter set plus string metadata.
///
/// Layout, line by line:
///
/// ```text
/// kbd-checkpoint 1
/// meta <key> <value>
/// tensor <name> <rank> <dim0> <dim1> ...
/// values <v0> <v1> ...
/// end
/// ```
///
/// Values are written in shortest round-trip decimal form, so reloading
/// reproduces every f64 bit-exactly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamSet,
}

const HEADER: &str = "kbd-checkpoint 1";

impl Checkpoint {
    pub fn new(params: ParamSet) -> Self {
        Checkpoint {
            meta: BTreeMap::new(),
            params,
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn meta_f64(&self, key: &str) -> Option<f64> {
        self.meta.get(key).and_then(|v| v.parse().ok())
    }

    pub fn meta_usize(&self, key: &str) -> Option<usize> {
        self.meta.get(key).and_then(|v| v.parse().ok())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        for (k, v) in &self.meta {
            out.push_str(&format!("meta {k} {v}\n"));
        }
        for (name, tensor) in self.params.iter() {
            out.push_str(&format!("tensor {name} {}", tensor.rank()));
            for d in tensor.shape() {
                out.push_str(&format!(" {d}"));
            }
            out.push('\n');
            out.push_str("values");
            for v in tensor.values() {
                out.push_str(&format!(" {v}"));
            }
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self, SubstrateError> {
        let err = |line: usize, message: &str| SubstrateError::Parse {
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim_end() == HEADER => {}
            Some((n, _)) => return Err(err(n + 1, "missing kbd-checkpoint header")),
            None => return Err(err(1, "empty checkpoint")),
        }

        let mut ckpt = Checkpoint::default();
        let mut pending: Option<(String, Vec<usize>, usize)> = None;
        let mut saw_end = false;
        for (n, raw) in lines {
            let line = raw.trim_end();
            let lineno = n + 1;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_ascii_whitespace();
            match fields.next() {
                Some("meta") => {
                    let key = fields
                        .next()
                        .ok_or_else(|| err(lineno, "meta line missing key"))?;
                    let rest = line
                        .splitn(3, ' ')
                        .nth(2)
                        .ok_or_else(|| err(lineno, "meta line missing value"))?;
                    ckpt.meta.insert(key.to_string(), rest.to_string());
                }
                Some("tensor") => {
                    if pending.is_some() {
                        return Err(err(lineno, "tensor declared before previous values line"));
                    }
                    let name = fields
                        .next()
                        .ok_or_else(|| err(lineno, "tensor line missing name"))?;
                    let rank: usize = fields
                        .next()
                        .and_then(|r| r.parse().ok())
                        .ok_or_else(|| err(lineno, "tensor line missing rank"))?;
                    let dims: Vec<usize> = fields
                        .map(|d| d.parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| err(lineno, "bad tensor dimension"))?;
                    if dims.len() != rank {
                        return Err(err(lineno, "tensor rank does not match dimension count"));
                    }
                    pending = Some((name.to_string(), dims, lineno));
                }
                Some("values") => {
                    let (name, dims, _) = pending
                        .take()
                        .ok_or_else(|| err(lineno, "values line without tensor declaration"))?;
                    let values: Vec<f64> = fields
                        .map(|v| v.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| err(lineno, "bad value literal"))?;
                    let tensor = Tensor::new(dims, values).map_err(|e| SubstrateError::Parse {
                        line: lineno,
                        message: e.to_string(),
                    })?;
                    ckpt.params.insert(name, tensor);
                }
                Some("end") => {
                    saw_end = true;
                    break;
                }
                _ => return Err(err(lineno, "unrecognized line")),
            }
        }
        if pending.is_some() {
            return Err(err(0, "tensor declaration missing its values line"));
        }
        if !saw_end {
            return Err(err(0, "missing end marker"));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), SubstrateError> {
        std::fs::write(path, self.render())
            .map_err(|e| SubstrateError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, SubstrateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SubstrateError::Io(format!("{}: {e}", path.display())))?;
        Checkpoint::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trips_exactly() {
        let mut params = ParamSet::new();
        params.insert("a.w", Tensor::matrix(&[vec![0.1, -0.2], vec![1e-300, 3.5]]).unwrap());
        params.insert("a.b", Tensor::vector(vec![2.0f64.powi(-52), -0.0]));
        let ckpt = Checkpoint::new(params)
            .with_meta("segments", "10")
            .with_meta("kind", "price-volume");
        let text = ckpt.render();
        let back = Checkpoint::parse(&text).unwrap();
        assert_eq!(ckpt, back);
        // Bit-exact, not just approximate.
        let orig = ckpt.params.get("a.b").unwrap().values();
        let parsed = back.params.get("a.b").unwrap().values();
        assert_eq!(orig[1].to_bits(), parsed[1].to_bits());
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(Checkpoint::parse("").is_err());
        assert!(Checkpoint::parse("not-a-checkpoint\nend\n").is_err());
        assert!(Checkpoint::parse("kbd-checkpoint 1\ntensor w 1 2\nend\n").is_err());
        assert!(Checkpoint::parse("kbd-checkpoint 1\ntensor w 1 2\nvalues 1.0\nend\n").is_err());
        assert!(Checkpoint::parse("kbd-checkpoint 1\n").is_err());
    }

    proptest! {
        #[test]
        fn any_finite_tensor_round_trips(values in proptest::collection::vec(
            prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
            1..40
        )) {
            let mut params = ParamSet::new();
            params.insert("t", Tensor::vector(values.clone()));
            let ckpt = Checkpoint::new(params);
            let back = Checkpoint::parse(&ckpt.render()).unwrap();
            let parsed = back.params.get("t").unwrap().values();
            for (a, b) in values.iter().zip(parsed) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
