//! Plain-text calibrator parameter files.
//!
//! One `key = value` pair per line after a version line. Vectors are
//! space-separated, matrices row-major, and every float is written with 17
//! significant digits so that a round trip is exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::uncert::UncertaintyHead;

use super::{Calibrator, CalibratorKind, CalibratorParams, FitLog};

const HEADER: &str = "occrel-calibrator 1";

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_v(v: &[f64]) -> String {
    v.iter().map(|&x| fmt_f(x)).collect::<Vec<_>>().join(" ")
}

/// Serializes parameters to the text format.
pub fn params_to_string(p: &CalibratorParams) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("kind", p.kind().name().to_string());
    kv("width", p.width.to_string());
    match &p.calibrator {
        Calibrator::TempS { temperature } => kv("temperature", fmt_f(*temperature)),
        Calibrator::DiriS { weight, bias } => {
            kv("weight", fmt_v(weight));
            kv("bias", fmt_v(bias));
        }
        Calibrator::MetaC { temperature, eta } => {
            kv("temperature", fmt_f(*temperature));
            kv("eta", fmt_f(*eta));
        }
        Calibrator::DeptS { k1, k2, t1, t2, eta } => {
            kv("k1", fmt_f(*k1));
            kv("k2", fmt_f(*k2));
            kv("t1", fmt_f(*t1));
            kv("t2", fmt_f(*t2));
            kv("eta", fmt_f(*eta));
        }
        Calibrator::ReliOcc {
            k1,
            k2,
            weight_diag,
            bias,
            head,
        } => {
            kv("k1", fmt_f(*k1));
            kv("k2", fmt_f(*k2));
            kv("weight_diag", fmt_v(weight_diag));
            kv("bias", fmt_v(bias));
            kv(
                "head_sizes",
                head.mlp.sizes.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "),
            );
            kv("head_params", fmt_v(&head.mlp.params));
        }
    }
    kv("final_nll", fmt_f(p.fit_log.final_nll));
    kv("iterations", p.fit_log.iterations.to_string());
    kv("epoch_nll", fmt_v(&p.fit_log.epoch_nll));
    if let Some(eta) = p.fit_log.selected_eta {
        kv("selected_eta", fmt_f(eta));
    }
    format!("{HEADER}\n{s}")
}

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn raw(&self, key: &'static str) -> Result<&str> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Parse(format!("missing key {key:?}")))
    }

    fn f(&self, key: &'static str) -> Result<f64> {
        let v = self.raw(key)?;
        v.parse().map_err(|_| Error::Parse(format!("{key}: bad number {v:?}")))
    }

    fn usize(&self, key: &'static str) -> Result<usize> {
        let v = self.raw(key)?;
        v.parse().map_err(|_| Error::Parse(format!("{key}: bad integer {v:?}")))
    }

    fn vec(&self, key: &'static str, len: Option<usize>) -> Result<Vec<f64>> {
        let v = self
            .raw(key)?
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("{key}: bad number {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        match len {
            Some(n) if v.len() != n => Err(Error::Parse(format!("{key}: expected {n} values, got {}", v.len()))),
            _ => Ok(v),
        }
    }
}

/// Parses the text format.
pub fn params_from_str(text: &str) -> Result<CalibratorParams> {
    let mut lines = text.lines();
    match lines.next().map(str::trim) {
        Some(HEADER) => {}
        Some(h) if h.starts_with("occrel-calibrator ") => {
            let v = h["occrel-calibrator ".len()..].trim().parse().unwrap_or(0);
            return Err(Error::UnsupportedVersion(v));
        }
        _ => return Err(Error::Parse("not a calibrator parameter file".into())),
    }
    let mut map = BTreeMap::new();
    for (n, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", n + 2)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let f = Fields(map);
    let kind: CalibratorKind = f.raw("kind")?.parse()?;
    let w = f.usize("width")?;
    if w < 2 {
        return Err(Error::Parse(format!("width must be at least 2, got {w}")));
    }
    let calibrator = match kind {
        CalibratorKind::TempS => Calibrator::TempS {
            temperature: f.f("temperature")?,
        },
        CalibratorKind::DiriS => Calibrator::DiriS {
            weight: f.vec("weight", Some(w * w))?,
            bias: f.vec("bias", Some(w))?,
        },
        CalibratorKind::MetaC => Calibrator::MetaC {
            temperature: f.f("temperature")?,
            eta: f.f("eta")?,
        },
        CalibratorKind::DeptS => Calibrator::DeptS {
            k1: f.f("k1")?,
            k2: f.f("k2")?,
            t1: f.f("t1")?,
            t2: f.f("t2")?,
            eta: f.f("eta")?,
        },
        CalibratorKind::ReliOcc => {
            let sizes = f
                .raw("head_sizes")?
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| Error::Parse(format!("head_sizes: bad integer {t:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if sizes.len() < 2 || sizes.last() != Some(&1) {
                return Err(Error::Parse("head_sizes must end in 1".into()));
            }
            let mut mlp = Mlp::zeros(&sizes);
            let n = mlp.num_params();
            mlp.params = f.vec("head_params", Some(n))?;
            Calibrator::ReliOcc {
                k1: f.f("k1")?,
                k2: f.f("k2")?,
                weight_diag: f.vec("weight_diag", Some(w))?,
                bias: f.vec("bias", Some(w))?,
                head: UncertaintyHead { mlp },
            }
        }
    };
    let fit_log = FitLog {
        final_nll: f.f("final_nll").unwrap_or(f64::NAN),
        iterations: f.usize("iterations").unwrap_or(0),
        epoch_nll: f.vec("epoch_nll", None).unwrap_or_default(),
        selected_eta: f.f("selected_eta").ok(),
    };
    let p = CalibratorParams {
        width: w,
        calibrator,
        fit_log,
    };
    p.check()?;
    Ok(p)
}

pub fn write_params(path: &Path, p: &CalibratorParams) -> Result<()> {
    std::fs::write(path, params_to_string(p))?;
    Ok(())
}

pub fn read_params(path: &Path) -> Result<CalibratorParams> {
    params_from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(p: &CalibratorParams) -> CalibratorParams {
        params_from_str(&params_to_string(p)).unwrap()
    }

    #[test]
    fn every_kind_roundtrips_bit_exactly() {
        for kind in CalibratorKind::ALL {
            let mut p = CalibratorParams::identity(kind, 4, 3, 17);
            p.fit_log = FitLog {
                final_nll: 0.1 + 0.2,
                iterations: 7,
                epoch_nll: vec![1.0 / 3.0, std::f64::consts::PI],
                selected_eta: Some(0.1 * 5f64.ln()),
            };
            if let Calibrator::DiriS { weight, .. } = &mut p.calibrator {
                weight[1] = -1e-300;
            }
            assert_eq!(roundtrip(&p), p, "{kind}");
        }
    }

    #[test]
    fn rejects_wrong_header_and_bad_lengths() {
        assert!(matches!(params_from_str("hello\n"), Err(Error::Parse(_))));
        assert!(matches!(
            params_from_str("occrel-calibrator 9\nkind = temps\n"),
            Err(Error::UnsupportedVersion(9))
        ));
        let bad = "occrel-calibrator 1\nkind = diris\nwidth = 2\nweight = 1 0 0\nbias = 0 0\n";
        assert!(matches!(params_from_str(bad), Err(Error::Parse(_))));
        let neg = "occrel-calibrator 1\nkind = temps\nwidth = 3\ntemperature = -1\n";
        assert!(params_from_str(neg).is_err());
    }
}
