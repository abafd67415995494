//! Text serialization: instance files, sweep CSVs and checksums.
//!
//! Floats are written with 17 significant digits (`{:.16e}`), which
//! round-trips every `f64`.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::problem::{GenSpec, ProblemInstance};
use crate::Mat;

pub const INSTANCE_MAGIC: &str = "DSPREC";
pub const INSTANCE_VERSION: &str = "v1";

pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_matrix(out: &mut String, m: &Mat) {
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| fmt_float(m[(r, c)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

/// Serializes an instance with its generation spec and planted weights.
pub fn instance_to_string(p: &ProblemInstance) -> Result<String> {
    let (Some(gen), Some(w_true)) = (p.gen_spec(), p.w_true()) else {
        return Err(Error::Format("only instances with planted weights and a generation spec can be saved".into()));
    };
    let mut out = format!(
        "{INSTANCE_MAGIC} {INSTANCE_VERSION} {} {} {} {} {}\n",
        p.n(),
        p.d(),
        p.k(),
        gen.seed,
        fmt_float(gen.noise)
    );
    for (j, m) in [p.x(), p.y(), p.w0(), w_true].into_iter().enumerate() {
        if j > 0 {
            out.push('\n');
        }
        write_matrix(&mut out, m);
    }
    Ok(out)
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn parse_instance(text: &str) -> Result<ProblemInstance> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err("empty instance file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 7 || fields[0] != INSTANCE_MAGIC || fields[1] != INSTANCE_VERSION {
        return Err(parse_err(format!("bad header line: {header:?}")));
    }
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse().map_err(|_| parse_err(format!("bad {what}: {s:?}")))
    };
    let (n, d, k) = (num(fields[2], "n")?, num(fields[3], "d")?, num(fields[4], "k")?);
    let seed: u64 = fields[5].parse().map_err(|_| parse_err(format!("bad seed: {:?}", fields[5])))?;
    let noise: f64 = fields[6].parse().map_err(|_| parse_err(format!("bad noise: {:?}", fields[6])))?;

    let mut blocks: Vec<Vec<Vec<f64>>> = vec![Vec::new()];
    for line in lines {
        if line.trim().is_empty() {
            if !blocks.last().expect("nonempty").is_empty() {
                blocks.push(Vec::new());
            }
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(format!("bad number {t:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        blocks.last_mut().expect("nonempty").push(row);
    }
    if blocks.last().is_some_and(|b| b.is_empty()) {
        blocks.pop();
    }
    if blocks.len() != 4 {
        return Err(parse_err(format!("expected 4 matrices, found {}", blocks.len())));
    }
    let shapes = [(n, d, "X"), (n, k, "Y"), (d, k, "W0"), (d, k, "W_true")];
    let mut mats = Vec::with_capacity(4);
    for (block, (rows, cols, name)) in blocks.into_iter().zip(shapes) {
        if block.len() != rows || block.iter().any(|r| r.len() != cols) {
            return Err(parse_err(format!("{name} must be {rows}x{cols}")));
        }
        let flat: Vec<f64> = block.into_iter().flatten().collect();
        mats.push(Mat::from_row_slice(rows, cols, &flat));
    }
    let w_true = mats.pop().expect("four matrices");
    let w0 = mats.pop().expect("four matrices");
    let y = mats.pop().expect("four matrices");
    let x = mats.pop().expect("four matrices");
    let spec = GenSpec { n, d, k, seed, noise };
    ProblemInstance::new(x, y, w0)?.with_planted(w_true, spec)
}

pub fn write_instance(p: &ProblemInstance, path: &Path) -> Result<()> {
    std::fs::write(path, instance_to_string(p)?)?;
    Ok(())
}

pub fn read_instance(path: &Path) -> Result<ProblemInstance> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    parse_instance(&text)
}

/// SHA-256 over the dimensions and the 17-digit text of `X`, `Y`, `W0`
/// (and `W_true` when present).
pub fn instance_checksum(p: &ProblemInstance) -> String {
    let mut text = format!("{} {} {}\n", p.n(), p.d(), p.k());
    for m in [Some(p.x()), Some(p.y()), Some(p.w0()), p.w_true()].into_iter().flatten() {
        write_matrix(&mut text, m);
        text.push('\n');
    }
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn bytes_checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// One sweep point. Distances to references that were not requested are
/// NaN. `dist_ref`/`ref_norm` are only written for step-size sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub dist_l1: f64,
    pub dist_l2: f64,
    pub dist_linf: f64,
    pub dist_gd: f64,
    pub iters: usize,
    pub final_loss: f64,
    pub converged: bool,
    pub reference: Option<(f64, f64)>,
}

pub const SWEEP_COLUMNS: [&str; 9] = [
    "param",
    "value",
    "dist_l1",
    "dist_l2",
    "dist_linf",
    "dist_gd",
    "iters",
    "final_loss",
    "converged",
];
pub const REFERENCE_COLUMNS: [&str; 2] = ["dist_ref", "ref_norm"];

fn csv_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        fmt_float(v)
    }
}

/// Writes rows with a header. The reference columns appear when any row
/// carries them.
pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let with_ref = rows.iter().any(|r| r.reference.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = SWEEP_COLUMNS.to_vec();
    if with_ref {
        header.extend(REFERENCE_COLUMNS);
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.param.clone(),
            csv_float(r.value),
            csv_float(r.dist_l1),
            csv_float(r.dist_l2),
            csv_float(r.dist_linf),
            csv_float(r.dist_gd),
            r.iters.to_string(),
            csv_float(r.final_loss),
            r.converged.to_string(),
        ];
        if with_ref {
            let (a, b) = r.reference.unwrap_or((f64::NAN, f64::NAN));
            rec.push(csv_float(a));
            rec.push(csv_float(b));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn sweep_csv_string(rows: &[SweepRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, rows)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    let with_ref = match names.len() {
        9 => false,
        11 => true,
        _ => return Err(Error::Format(format!("unexpected sweep header: {}", names.join(",")))),
    };
    if names[..9] != SWEEP_COLUMNS || (with_ref && names[9..] != REFERENCE_COLUMNS) {
        return Err(Error::Format(format!("unexpected sweep header: {}", names.join(","))));
    }
    let float = |s: &str| -> Result<f64> { s.parse::<f64>().map_err(|_| Error::Format(format!("bad number {s:?}"))) };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| float(&rec[i]);
        rows.push(SweepRow {
            param: rec[0].to_string(),
            value: f(1)?,
            dist_l1: f(2)?,
            dist_l2: f(3)?,
            dist_linf: f(4)?,
            dist_gd: f(5)?,
            iters: rec[6].parse().map_err(|_| Error::Format(format!("bad iters {:?}", &rec[6])))?,
            final_loss: f(7)?,
            converged: rec[8].parse().map_err(|_| Error::Format(format!("bad flag {:?}", &rec[8])))?,
            reference: if with_ref { Some((f(9)?, f(10)?)) } else { None },
        });
    }
    Ok(rows)
}
