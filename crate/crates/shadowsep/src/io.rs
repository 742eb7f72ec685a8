//! File formats: measures and closed sets as JSON, tabular outputs as CSV,
//! reports as versioned JSON envelopes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::grid::{Barrier, GridSpec, PotentialSurface};
use crate::mc::{Simulation, StoppedSample};
use crate::measure::{ClosedSet, DiscreteMeasure};
use crate::shadow::Coupling;

/// Version stamp written into every JSON artifact.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
struct QuantileParams {
    #[serde(default)]
    mean: f64,
    #[serde(default = "default_std")]
    std: f64,
}

fn default_std() -> f64 {
    1.0
}

impl Default for QuantileParams {
    fn default() -> Self {
        QuantileParams {
            mean: 0.0,
            std: 1.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MeasureSpec {
    Atoms {
        #[serde(default)]
        #[allow(dead_code)]
        format_version: Option<u32>,
        atoms: Vec<(f64, f64)>,
    },
    Quantile {
        quantile_of: String,
        #[serde(default)]
        params: QuantileParams,
        n: usize,
    },
}

/// `n`-point mid-quantile discretization of a named distribution: one atom
/// of weight `1/n` at each quantile `(i + 0.5) / n`.
pub fn quantile_measure(dist: &str, mean: f64, std: f64, n: usize) -> Result<DiscreteMeasure> {
    if n == 0 {
        return Err(Error::EmptyInput("quantile count"));
    }
    match dist {
        "normal" => {
            let normal = Normal::new(mean, std)
                .map_err(|e| Error::Parse(format!("normal({mean}, {std}): {e}")))?;
            DiscreteMeasure::new((0..n).map(|i| {
                let p = (i as f64 + 0.5) / n as f64;
                (normal.inverse_cdf(p), 1.0 / n as f64)
            }))
        }
        other => Err(Error::Parse(format!(
            "unknown quantile family {other:?}; expected \"normal\""
        ))),
    }
}

/// Parses a measure from JSON text: either an explicit atom list
/// `{"atoms": [[x, w], ...]}` or a quantile spec
/// `{"quantile_of": "normal", "params": {"mean": 0, "std": 1}, "n": 64}`.
pub fn measure_from_json_str(s: &str) -> Result<DiscreteMeasure> {
    let spec: MeasureSpec = serde_json::from_str(s)?;
    match spec {
        MeasureSpec::Atoms { atoms, .. } => DiscreteMeasure::new(atoms),
        MeasureSpec::Quantile {
            quantile_of,
            params,
            n,
        } => quantile_measure(&quantile_of, params.mean, params.std, n),
    }
}

pub fn read_measure_json(path: &Path) -> Result<DiscreteMeasure> {
    measure_from_json_str(&fs::read_to_string(path)?)
}

pub fn write_measure_json(path: &Path, m: &DiscreteMeasure) -> Result<()> {
    let atoms: Vec<[f64; 2]> = m.iter().map(|(x, w)| [x, w]).collect();
    let doc = json!({ "format_version": FORMAT_VERSION, "atoms": atoms });
    fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

pub fn read_closed_set_json(path: &Path) -> Result<ClosedSet> {
    #[derive(Deserialize)]
    struct SetSpec {
        components: Vec<(f64, f64)>,
    }
    let spec: SetSpec = serde_json::from_str(&fs::read_to_string(path)?)?;
    ClosedSet::new(spec.components)
}

pub fn write_closed_set_json(path: &Path, set: &ClosedSet) -> Result<()> {
    let doc = json!({ "format_version": FORMAT_VERSION, "components": set.components() });
    fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

/// Writes any serializable report inside a versioned envelope.
pub fn write_report_json<T: Serialize>(path: &Path, kind: &str, report: &T) -> Result<()> {
    let doc = json!({
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "report": report,
    });
    fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

pub fn write_measure_csv(path: &Path, m: &DiscreteMeasure) -> Result<()> {
    let mut out = String::from("x,w\n");
    for (x, w) in m.iter() {
        writeln!(out, "{x},{w}").expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_coupling_csv(path: &Path, c: &Coupling) -> Result<()> {
    let mut out = String::from("source_x,source_w,target_x,cond_w\n");
    for row in c.rows() {
        for (y, q) in row.conditional.iter() {
            writeln!(out, "{},{},{y},{q}", row.source_x, row.source_w).expect("string write");
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes every level's stopping intervals with node positions in x units.
pub fn write_barrier_csv(path: &Path, barrier: &Barrier, grid: &GridSpec) -> Result<()> {
    let mut out = String::from("level,interval_lo,interval_hi\n");
    for level in 0..barrier.n_levels() {
        for &(lo, hi) in barrier.level_intervals(level) {
            writeln!(out, "{level},{},{}", grid.x(lo as usize), grid.x(hi as usize))
                .expect("string write");
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes the stored rows of the obstacle surface alongside the target
/// potential.
pub fn write_surface_csv(path: &Path, surface: &PotentialSurface) -> Result<()> {
    let grid = surface.grid();
    let v = surface.v();
    let mut out = String::from("level,x,u,v\n");
    for (level, row) in surface.rows() {
        for (i, u) in row.iter().enumerate() {
            writeln!(out, "{level},{},{u},{}", grid.x(i), v[i]).expect("string write");
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes simulated paths with the snapshot levels recorded in a header
/// comment, one column per requested level.
pub fn write_samples_csv(path: &Path, sim: &Simulation) -> Result<()> {
    let mut out = String::new();
    let levels: Vec<String> = sim.levels.iter().map(|l| l.to_string()).collect();
    writeln!(out, "# levels: {}", levels.join(" ")).expect("string write");
    out.push_str("start,stop_level,stop_x,cap_hit");
    for l in &sim.levels {
        write!(out, ",at_level_{l}").expect("string write");
    }
    out.push('\n');
    for s in &sim.samples {
        write!(
            out,
            "{},{},{},{}",
            s.start, s.stop_level, s.stop_x, s.cap_hit as u8
        )
        .expect("string write");
        for x in &s.at_levels {
            write!(out, ",{x}").expect("string write");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads back a samples CSV: the snapshot levels from the header comment
/// and one sample per data row.
pub fn read_samples_csv(path: &Path) -> Result<(Vec<u32>, Vec<StoppedSample>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty samples file".into()))?;
    let levels: Vec<u32> = header
        .strip_prefix("# levels:")
        .ok_or_else(|| Error::Parse("samples file must start with '# levels:'".into()))?
        .split_whitespace()
        .map(|t| {
            t.parse::<u32>()
                .map_err(|e| Error::Parse(format!("level {t:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    let mut samples = Vec::new();
    for (idx, line) in lines.enumerate() {
        if idx == 0 && line.starts_with("start,") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 + levels.len() {
            return Err(Error::Parse(format!(
                "sample row has {} fields, expected {}",
                fields.len(),
                4 + levels.len()
            )));
        }
        let num = |t: &str| -> Result<f64> {
            t.parse::<f64>()
                .map_err(|e| Error::Parse(format!("number {t:?}: {e}")))
        };
        let stop_level = fields[1]
            .parse::<u32>()
            .map_err(|e| Error::Parse(format!("stop level {:?}: {e}", fields[1])))?;
        let cap_hit = match fields[3] {
            "0" => false,
            "1" => true,
            other => return Err(Error::Parse(format!("cap_hit flag {other:?}"))),
        };
        let at_levels = fields[4..]
            .iter()
            .map(|t| num(t))
            .collect::<Result<Vec<f64>>>()?;
        samples.push(StoppedSample {
            start: num(fields[0])?,
            stop_level,
            stop_x: num(fields[2])?,
            cap_hit,
            at_levels,
        });
    }
    Ok((levels, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::mc::{simulate, SimPlan};
    use crate::root::root_solve;

    fn m(atoms: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(atoms.iter().copied()).unwrap()
    }

    #[test]
    fn measure_json_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let src = m(&[(-1.25, 0.3), (0.5, 0.45), (2.0, 0.25)]);
        write_measure_json(&path, &src).unwrap();
        let back = read_measure_json(&path).unwrap();
        assert_eq!(src, back);
    }

    #[test]
    fn quantile_spec_builds_mid_quantile_atoms() {
        let q = measure_from_json_str(r#"{"quantile_of":"normal","n":4}"#).unwrap();
        assert_eq!(q.len(), 4);
        assert!((q.mass() - 1.0).abs() < 1e-12);
        assert!(q.first_moment().abs() < 1e-12);
        // Standard normal quantile at p = 0.875.
        assert!((q.xs()[3] - 1.15035).abs() < 1e-4);

        let shifted = measure_from_json_str(
            r#"{"quantile_of":"normal","params":{"mean":2.0,"std":0.5},"n":4}"#,
        )
        .unwrap();
        assert!((shifted.first_moment() - 2.0).abs() < 1e-12);
        assert!((shifted.xs()[3] - (2.0 + 0.5 * q.xs()[3])).abs() < 1e-12);
    }

    #[test]
    fn unknown_quantile_family_is_rejected() {
        let err = measure_from_json_str(r#"{"quantile_of":"cauchy","n":4}"#).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn closed_set_json_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.json");
        let set = ClosedSet::new([(-2.0, -1.0), (0.5, 0.5), (1.0, 3.0)]).unwrap();
        write_closed_set_json(&path, &set).unwrap();
        let back = read_closed_set_json(&path).unwrap();
        assert_eq!(set.components(), back.components());
    }

    #[test]
    fn samples_csv_round_trips_exactly() {
        let mu = DiscreteMeasure::dirac(0.0);
        let nu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        let grid = GridSpec::cover(&mu, &nu, 0.05, None).unwrap();
        let sol = root_solve(&mu, &nu, &grid, None).unwrap();
        let sim = simulate(&SimPlan::Root(&sol), 50, 21, &[0, 40, 200]).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        write_samples_csv(&path, &sim).unwrap();
        let (levels, samples) = read_samples_csv(&path).unwrap();
        assert_eq!(levels, sim.levels);
        assert_eq!(samples, sim.samples);
    }

    #[test]
    fn tabular_writers_emit_headers_and_rows() {
        let mu = DiscreteMeasure::dirac(0.0);
        let nu = m(&[(-1.0, 0.5), (1.0, 0.5)]);
        let grid = GridSpec::cover(&mu, &nu, 0.1, None).unwrap();
        let sol = root_solve(&mu, &nu, &grid, None).unwrap();
        let dir = tempfile::tempdir().unwrap();

        let mp = dir.path().join("m.csv");
        write_measure_csv(&mp, &nu).unwrap();
        let text = fs::read_to_string(&mp).unwrap();
        assert_eq!(text.lines().count(), 1 + nu.len());
        assert!(text.starts_with("x,w\n"));

        let bp = dir.path().join("b.csv");
        write_barrier_csv(&bp, &sol.barrier, &sol.grid).unwrap();
        let text = fs::read_to_string(&bp).unwrap();
        assert!(text.starts_with("level,interval_lo,interval_hi\n"));
        assert!(text.lines().count() > sol.barrier.n_levels());

        let sp = dir.path().join("s.csv");
        write_surface_csv(&sp, &sol.surface).unwrap();
        let text = fs::read_to_string(&sp).unwrap();
        assert!(text.starts_with("level,x,u,v\n"));

        let rp = dir.path().join("r.json");
        write_report_json(&rp, "smoke", &vec![1, 2, 3]).unwrap();
        let doc: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&rp).unwrap()).unwrap();
        assert_eq!(doc["format_version"], 1);
        assert_eq!(doc["kind"], "smoke");
    }
}
