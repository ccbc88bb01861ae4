//! Tab-separated dataset and trajectory-cache files.
//!
//! ```text
//! coupondt-v1<TAB>feature_dim=<d>
//! user_id  time  f_0 .. f_{d-1}  action  cost  reward
//! ```
//!
//! Reals are written with 17 significant digits so files round-trip exactly.
//! A missing user id is written as `-`. The trajectory cache adds a
//! `kind=trajectory` header field and `rtg  ctg  lambda` columns.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use super::{InteractionRecord, Trajectory, TrajectoryStep};
use crate::error::{Error, Result};

pub const DATASET_VERSION: &str = "coupondt-v1";
const TRAJECTORY_KIND: &str = "kind=trajectory";

pub(crate) fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn feature_dim_of(records: impl IntoIterator<Item = usize>) -> Result<usize> {
    let mut dim = None;
    for d in records {
        match dim {
            None => dim = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::Shape(format!("records mix feature dimensions {prev} and {d}")))
            }
            _ => {}
        }
    }
    Ok(dim.unwrap_or(0))
}

fn write_fields(out: &mut impl Write, user: Option<u64>, time: i64, features: &[f64], action: usize, cost: f64, reward: f64) -> std::io::Result<()> {
    match user {
        Some(id) => write!(out, "{id}")?,
        None => write!(out, "-")?,
    }
    write!(out, "\t{time}")?;
    for f in features {
        write!(out, "\t{}", fmt_real(*f))?;
    }
    write!(out, "\t{action}\t{}\t{}", fmt_real(cost), fmt_real(reward))
}

pub fn write_dataset(path: &Path, records: &[InteractionRecord]) -> Result<()> {
    let dim = feature_dim_of(records.iter().map(|r| r.features.len()))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = (|| -> std::io::Result<()> {
        writeln!(out, "{DATASET_VERSION}\tfeature_dim={dim}")?;
        for r in records {
            write_fields(&mut out, r.user_id, r.time, &r.features, r.action, r.cost, r.reward)?;
            writeln!(out)?;
        }
        out.flush()
    })();
    io.map_err(|e| Error::io(path, e))
}

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let dim = feature_dim_of(trajectories.iter().flat_map(|t| t.steps.iter().map(|s| s.state.len())))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = (|| -> std::io::Result<()> {
        writeln!(out, "{DATASET_VERSION}\tfeature_dim={dim}\t{TRAJECTORY_KIND}")?;
        for traj in trajectories {
            for s in traj.steps.iter() {
                write_fields(&mut out, Some(traj.user_id), s.t as i64, &s.state, s.action, s.cost, s.reward)?;
                write!(out, "\t{}\t{}\t", fmt_real(s.rtg), fmt_real(s.ctg))?;
                match traj.lambda {
                    Some(l) => writeln!(out, "{}", fmt_real(l))?,
                    None => writeln!(out, "-")?,
                }
            }
        }
        out.flush()
    })();
    io.map_err(|e| Error::io(path, e))
}

struct Reader<'p> {
    path: &'p Path,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
}

impl<'p> Reader<'p> {
    fn open(path: &'p Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { path, lines: BufReader::new(file).lines(), line_no: 0 })
    }

    fn next_line(&mut self) -> Result<Option<String>> {
        match self.lines.next() {
            None => Ok(None),
            Some(line) => {
                self.line_no += 1;
                line.map(Some).map_err(|e| Error::io(self.path, e))
            }
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { path: self.path.to_path_buf(), line: self.line_no, msg: msg.into() }
    }

    /// Parse the header and return the feature dimension.
    fn header(&mut self, trajectory: bool) -> Result<usize> {
        let line = self.next_line()?.ok_or_else(|| self.err("missing header"))?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields[0] != DATASET_VERSION {
            return Err(Error::Version {
                path: self.path.to_path_buf(),
                found: fields[0].to_string(),
                expected: DATASET_VERSION,
            });
        }
        let want = if trajectory { 3 } else { 2 };
        if fields.len() != want || (trajectory && fields[2] != TRAJECTORY_KIND) {
            return Err(self.err(if trajectory {
                "expected a trajectory cache header"
            } else {
                "expected a dataset header"
            }));
        }
        fields[1]
            .strip_prefix("feature_dim=")
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| self.err("malformed feature_dim"))
    }

    fn real(&self, s: &str, what: &str) -> Result<f64> {
        s.parse::<f64>().map_err(|_| self.err(format!("bad {what} {s:?}")))
    }

    fn record(&self, fields: &[&str], dim: usize) -> Result<InteractionRecord> {
        let user_id = match fields[0] {
            "-" => None,
            s => Some(s.parse().map_err(|_| self.err(format!("bad user_id {s:?}")))?),
        };
        let time = fields[1].parse().map_err(|_| self.err(format!("bad time {:?}", fields[1])))?;
        let features = fields[2..2 + dim]
            .iter()
            .map(|s| self.real(s, "feature"))
            .collect::<Result<Vec<_>>>()?;
        let action = fields[2 + dim]
            .parse()
            .map_err(|_| self.err(format!("bad action {:?}", fields[2 + dim])))?;
        let cost = self.real(fields[3 + dim], "cost")?;
        let reward = self.real(fields[4 + dim], "reward")?;
        Ok(InteractionRecord { user_id, time, features, action, cost, reward })
    }
}

pub fn read_dataset(path: &Path) -> Result<Vec<InteractionRecord>> {
    let mut rd = Reader::open(path)?;
    let dim = rd.header(false)?;
    let mut out = Vec::new();
    while let Some(line) = rd.next_line()? {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != dim + 5 {
            return Err(rd.err(format!("expected {} fields, found {}", dim + 5, fields.len())));
        }
        out.push(rd.record(&fields, dim)?);
    }
    Ok(out)
}

/// Read a trajectory cache. A new trajectory starts whenever the user id or
/// λ changes or the step index does not increase.
pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let mut rd = Reader::open(path)?;
    let dim = rd.header(true)?;
    let mut out: Vec<Trajectory> = Vec::new();
    let mut cur: Option<(u64, Option<u64>, Vec<TrajectoryStep>)> = None;
    let flush = |cur: &mut Option<(u64, Option<u64>, Vec<TrajectoryStep>)>, out: &mut Vec<Trajectory>| {
        if let Some((user_id, lambda, steps)) = cur.take() {
            out.push(Trajectory { user_id, steps: Arc::from(steps), lambda: lambda.map(f64::from_bits) });
        }
    };
    while let Some(line) = rd.next_line()? {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != dim + 8 {
            return Err(rd.err(format!("expected {} fields, found {}", dim + 8, fields.len())));
        }
        let rec = rd.record(&fields[..dim + 5], dim)?;
        let user_id = rec.user_id.ok_or_else(|| rd.err("trajectory rows need a user id"))?;
        let rtg = rd.real(fields[dim + 5], "rtg")?;
        let ctg = rd.real(fields[dim + 6], "ctg")?;
        let lambda = match fields[dim + 7] {
            "-" => None,
            s => Some(rd.real(s, "lambda")?.to_bits()),
        };
        let t = usize::try_from(rec.time).map_err(|_| rd.err("negative step index"))?;
        let continues = matches!(&cur, Some((u, l, steps)) if *u == user_id && *l == lambda
            && steps.last().is_some_and(|s| s.t < t));
        if !continues {
            flush(&mut cur, &mut out);
            cur = Some((user_id, lambda, Vec::new()));
        }
        if let Some((_, _, steps)) = cur.as_mut() {
            steps.push(TrajectoryStep {
                state: rec.features,
                action: rec.action,
                reward: rec.reward,
                cost: rec.cost,
                rtg,
                ctg,
                t,
            });
        }
    }
    flush(&mut cur, &mut out);
    Ok(out)
}
