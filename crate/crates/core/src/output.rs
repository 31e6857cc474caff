//! Run artifacts: CSVs that start with a manifest reference, coverage grid
//! files and the run manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Config;
use crate::env::Trajectory;
use crate::error::Result;
use crate::training::Coverage;

pub const MANIFEST_FILE: &str = "manifest.toml";

/// A CSV writer whose first line is `# manifest: manifest.toml`.
pub struct CsvSink {
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvSink {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut file = BufWriter::new(File::create(path)?);
        writeln!(file, "# manifest: {MANIFEST_FILE}")?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(header)?;
        Ok(Self { writer })
    }

    pub fn row<I, T>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Reads a CSV written by [`CsvSink`], skipping the manifest line.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)?;
    let body = text.split_once('\n').map_or("", |(_, rest)| rest);
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}

/// Row-major visited counts, one grid row per line, lowest `y` first.
pub fn write_coverage_grid(path: &Path, coverage: &Coverage) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "# manifest: {MANIFEST_FILE}")?;
    writeln!(f, "# fraction: {}", coverage.fraction)?;
    for row in &coverage.counts {
        let line: Vec<String> = row.iter().map(u64::to_string).collect();
        writeln!(f, "{}", line.join(" "))?;
    }
    f.flush()?;
    Ok(())
}

/// `episode,t,z0..,s0,s1,a0..,reward`, one row per transition.
pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let d = trajectories.first().map_or(0, |t| t.skill.len());
    let a = trajectories
        .iter()
        .find_map(|t| t.steps.first())
        .map_or(0, |s| s.action.components().len());
    let mut header = vec!["episode".to_string(), "t".to_string()];
    header.extend((0..d).map(|i| format!("z{i}")));
    header.extend(["s0".to_string(), "s1".to_string()]);
    header.extend((0..a).map(|i| format!("a{i}")));
    header.push("reward".to_string());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut sink = CsvSink::create(path, &header)?;
    for (e, traj) in trajectories.iter().enumerate() {
        for (t, step) in traj.steps.iter().enumerate() {
            let mut row = vec![e.to_string(), t.to_string()];
            row.extend(traj.skill.iter().map(f64::to_string));
            row.extend(step.state.iter().map(f64::to_string));
            row.extend(step.action.components().iter().map(f64::to_string));
            row.push(step.reward.to_string());
            sink.row(&row)?;
        }
    }
    sink.finish()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub environment: String,
    pub group: String,
    pub representation: String,
    /// Output files, relative to the manifest.
    pub outputs: Vec<String>,
}

/// Everything needed to rerun: `--config manifest.toml` reads the
/// `[config]` table back.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub run: RunInfo,
    pub config: Config,
}

impl RunManifest {
    pub fn new(command: &str, config: &Config) -> Self {
        let environment = match config.env {
            crate::config::EnvKind::Grid => format!(
                "grid side={} slip={}",
                config.grid_side, config.slip
            ),
            crate::config::EnvKind::PointMass => format!(
                "point-mass dt={} radius={} noise={} action_max={}",
                config.dt, config.arena_radius, config.noise_std, config.action_max
            ),
        };
        Self {
            run: RunInfo {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed: config.seed,
                environment,
                group: format!("C{}", config.group_order),
                representation: config.rep_blocks.clone(),
                outputs: Vec::new(),
            },
            config: config.clone(),
        }
    }

    pub fn add_output(&mut self, name: impl Into<String>) {
        self.run.outputs.push(name.into());
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = toml::to_string(self).expect("manifest serializes");
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_manifest_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut sink = CsvSink::create(&path, &["a", "b"]).unwrap();
        sink.row(["1", "2.5"]).unwrap();
        sink.finish().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# manifest: manifest.toml\na,b\n"));
        let (h, rows) = read_csv(&path).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(rows, vec![vec!["1".to_string(), "2.5".to_string()]]);
    }

    #[test]
    fn manifest_config_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = Config {
            epochs: 7,
            ..Config::default()
        };
        let mut m = RunManifest::new("train-skills", &cfg);
        m.add_output("metrics.csv");
        let path = m.write(dir.path()).unwrap();
        assert_eq!(Config::load(&path).unwrap(), cfg);
    }
}
