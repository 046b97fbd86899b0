//! On-disk formats: dataset and sample CSVs with `#` header comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::simulators::{Dataset, JointDraw, Latent, Observation, SimulatorSpec, TaskKind};

/// Scientific notation with 17 significant digits.
pub fn fmt_sig17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write through a temporary sibling file so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// `key=value` pairs from a `# k1=v1 k2=v2 ...` comment. The last key may
/// contain spaces only if it is `params` (JSON), which runs to end of line.
pub fn parse_header_comment(line: &str) -> Result<BTreeMap<String, String>> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::Format("missing `#` header comment".into()))?
        .trim();
    let mut out = BTreeMap::new();
    let mut rest = body;
    while !rest.is_empty() {
        let (key, after) = rest
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("malformed header field `{rest}`")))?;
        let key = key.trim().to_string();
        if key == "params" {
            out.insert(key, after.trim().to_string());
            break;
        }
        let (value, tail) = after.split_once(' ').unwrap_or((after, ""));
        out.insert(key, value.to_string());
        rest = tail.trim_start();
    }
    Ok(out)
}

fn csv_header(spec: &SimulatorSpec) -> String {
    let mut cols: Vec<String> = (0..spec.theta_dim()).map(|i| format!("theta_{i}")).collect();
    cols.extend((0..spec.latent_dim()).map(|i| format!("z_{i}")));
    cols.push("x".into());
    cols.join(",")
}

/// Serialize a dataset: header comment, column header, one row per draw.
pub fn dataset_to_csv(data: &Dataset) -> String {
    let spec = &data.spec;
    let mut s = format!(
        "# sim={} seed={} M={} params={}\n{}\n",
        spec.kind().id(),
        data.seed,
        data.len(),
        spec.params_json(),
        csv_header(spec)
    );
    for d in &data.draws {
        let mut fields: Vec<String> = d.theta.iter().map(|&v| fmt_sig17(v)).collect();
        match &d.z {
            Latent::Real(v) => fields.push(fmt_sig17(*v)),
            Latent::Bit(b) => fields.push(b.to_string()),
            Latent::Bits(bs) => fields.extend(bs.iter().map(|b| b.to_string())),
        }
        fields.push(match d.x {
            Observation::Real(v) => fmt_sig17(v),
            Observation::Class(k) | Observation::Bin(k) => k.to_string(),
        });
        let _ = writeln!(s, "{}", fields.join(","));
    }
    s
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_atomic(path, dataset_to_csv(data).as_bytes())
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("line {line}: bad number `{s}`")))
}

fn parse_u(s: &str, line: usize) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("line {line}: bad integer `{s}`")))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format("empty dataset file".into()))??;
    let header = parse_header_comment(&first)?;
    let field = |k: &str| {
        header
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Format(format!("dataset header missing `{k}`")))
    };
    let kind = TaskKind::parse(&field("sim")?)?;
    let spec = SimulatorSpec::from_params_json(kind, &field("params")?)?;
    let seed: u64 = field("seed")?
        .parse()
        .map_err(|_| Error::Format("bad seed".into()))?;
    let m: usize = field("M")?
        .parse()
        .map_err(|_| Error::Format("bad M".into()))?;
    let cols = lines
        .next()
        .ok_or_else(|| Error::Format("missing column header".into()))??;
    if cols.trim() != csv_header(&spec) {
        return Err(Error::Format(format!("unexpected columns `{cols}`")));
    }
    let (d, l) = (spec.theta_dim(), spec.latent_dim());
    let mut draws = Vec::with_capacity(m);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 3;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != d + l + 1 {
            return Err(Error::Format(format!("line {lineno}: expected {} fields", d + l + 1)));
        }
        let theta = f[..d]
            .iter()
            .map(|s| parse_f64(s, lineno))
            .collect::<Result<Vec<_>>>()?;
        let z = match kind {
            TaskKind::Gaussian => Latent::Real(parse_f64(f[d], lineno)?),
            TaskKind::MixtureCategorical => Latent::Bit(parse_u(f[d], lineno)? as u8),
            TaskKind::Galton => Latent::Bits(
                f[d..d + l]
                    .iter()
                    .map(|s| parse_u(s, lineno).map(|v| v as u8))
                    .collect::<Result<_>>()?,
            ),
        };
        let xs = f[d + l];
        let x = match kind {
            TaskKind::Gaussian => Observation::Real(parse_f64(xs, lineno)?),
            TaskKind::MixtureCategorical => Observation::Class(parse_u(xs, lineno)?),
            TaskKind::Galton => Observation::Bin(parse_u(xs, lineno)?),
        };
        draws.push(JointDraw {
            theta,
            z,
            x,
            sim: kind,
        });
    }
    if draws.len() != m {
        return Err(Error::Format(format!(
            "header declares M={m} but file has {} rows",
            draws.len()
        )));
    }
    Ok(Dataset { draws, spec, seed })
}

/// Samples CSV: optional header comment fields, then `theta_0,...`.
pub fn samples_to_csv(samples: &[Vec<f64>], meta: &[(&str, String)]) -> String {
    let d = samples.first().map_or(1, |s| s.len());
    let mut s = String::from("#");
    for (k, v) in meta {
        let _ = write!(s, " {k}={v}");
    }
    s.push('\n');
    s.push_str(
        &(0..d)
            .map(|i| format!("theta_{i}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    s.push('\n');
    for row in samples {
        s.push_str(
            &row.iter()
                .map(|&v| fmt_sig17(v))
                .collect::<Vec<_>>()
                .join(","),
        );
        s.push('\n');
    }
    s
}

/// Header key/value pairs and sample rows.
pub type SamplesFile = (BTreeMap<String, String>, Vec<Vec<f64>>);

pub fn read_samples(path: &Path) -> Result<SamplesFile> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let mut meta = BTreeMap::new();
    let mut header = None;
    for (_, line) in lines.by_ref() {
        if line.starts_with('#') {
            meta.extend(parse_header_comment(line)?);
        } else {
            header = Some(line);
            break;
        }
    }
    let header = header.ok_or_else(|| Error::Format("missing sample column header".into()))?;
    let d = header.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| parse_f64(s, i + 1))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != d {
            return Err(Error::Format(format!("line {}: expected {d} fields", i + 1)));
        }
        rows.push(row);
    }
    Ok((meta, rows))
}

/// Minimal CSV table writer for metric outputs.
pub struct CsvTable {
    buf: String,
    width: usize,
}

impl CsvTable {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            buf: format!("{}\n", columns.join(",")),
            width: columns.len(),
        }
    }

    pub fn push(&mut self, fields: &[String]) {
        assert_eq!(fields.len(), self.width, "row width mismatch");
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.buf.as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.buf.as_bytes())
    }
}
