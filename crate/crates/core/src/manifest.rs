//! Record of one command-line run, sufficient to re-run it.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::Config;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Version of this build, `git describe` style.
pub const VERSION: &str = env!("EVSTAR_VERSION");

const HEADER: &str = "# evstar run manifest";

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub command: String,
    /// Subcommand arguments, without global flags.
    pub args: Vec<String>,
    pub config: Config,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub out_dir: String,
    /// Files written into `out_dir`, this manifest excluded.
    pub outputs: Vec<String>,
    pub version: String,
    pub wall_time_s: f64,
}

fn check_field(s: &str) -> Result<()> {
    if s.contains('\n') || s.contains('\r') {
        return Err(Error::invalid(format!("manifest field {s:?} spans lines")));
    }
    Ok(())
}

impl RunManifest {
    pub fn to_text(&self) -> Result<String> {
        let mut s = String::new();
        let _ = writeln!(s, "{HEADER}");
        let _ = writeln!(s, "command={}", self.command);
        let _ = writeln!(s, "version={}", self.version);
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed={seed}");
        }
        let _ = writeln!(s, "wall_time_s={}", self.wall_time_s);
        let _ = writeln!(s, "out_dir={}", self.out_dir);
        let lists = [("arg", &self.args), ("input", &self.inputs), ("output", &self.outputs)];
        for (key, values) in lists {
            for v in values {
                check_field(v)?;
                let _ = writeln!(s, "{key}={v}");
            }
        }
        check_field(&self.command)?;
        check_field(&self.out_dir)?;
        for line in self.config.to_text().lines() {
            let _ = writeln!(s, "config.{line}");
        }
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == HEADER => {}
            _ => return Err(Error::parse(1, "missing manifest header")),
        }
        let mut m = RunManifest {
            command: String::new(),
            args: vec![],
            config: Config::default(),
            seed: None,
            inputs: vec![],
            out_dir: String::new(),
            outputs: vec![],
            version: String::new(),
            wall_time_s: 0.0,
        };
        let mut config = String::new();
        for (i, line) in lines {
            let n = i + 1;
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(n, "expected key=value"))?;
            match k {
                "command" => m.command = v.to_string(),
                "version" => m.version = v.to_string(),
                "seed" => m.seed = Some(v.parse().map_err(|_| Error::parse(n, "bad seed"))?),
                "wall_time_s" => {
                    m.wall_time_s = v.parse().map_err(|_| Error::parse(n, "bad wall time"))?
                }
                "out_dir" => m.out_dir = v.to_string(),
                "arg" => m.args.push(v.to_string()),
                "input" => m.inputs.push(v.to_string()),
                "output" => m.outputs.push(v.to_string()),
                _ => match k.strip_prefix("config.") {
                    Some(key) => {
                        let _ = writeln!(config, "{key}={v}");
                    }
                    None => return Err(Error::parse(n, format!("unknown key {k:?}"))),
                },
            }
        }
        if m.command.is_empty() {
            return Err(Error::parse(0, "manifest has no command"));
        }
        m.config = Config::parse(&config)?;
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST_FILE), self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        RunManifest::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> RunManifest {
        RunManifest {
            command: "track".into(),
            args: vec!["--events".into(), "run/events.txt".into(), "--method=cm".into()],
            config: Config {
                dt_ms: 25,
                resolutions_ms: vec![100, 50],
                ..Config::default()
            },
            seed: Some(7),
            inputs: vec!["run/events.txt".into(), "run/intrinsics.txt".into()],
            out_dir: "out dir/track".into(),
            outputs: vec!["edges.csv".into(), "diagnostics.csv".into()],
            version: VERSION.into(),
            wall_time_s: 0.123456789,
        }
    }

    #[test]
    fn round_trips() {
        let m = sample();
        assert_eq!(RunManifest::parse(&m.to_text().unwrap()).unwrap(), m);
        let bare = RunManifest { seed: None, args: vec![], ..sample() };
        assert_eq!(RunManifest::parse(&bare.to_text().unwrap()).unwrap(), bare);
    }

    #[test]
    fn version_looks_like_git_describe() {
        assert!(VERSION.starts_with('v'));
    }

    #[test]
    fn rejects_multiline_fields_and_junk() {
        let m = RunManifest { args: vec!["a\nb".into()], ..sample() };
        assert!(m.to_text().is_err());
        assert!(RunManifest::parse("command=x\n").is_err());
        assert!(RunManifest::parse(&format!("{HEADER}\ncommand=x\nbogus=1\n")).is_err());
        assert!(RunManifest::parse(&format!("{HEADER}\nseed=1\n")).is_err());
    }

    #[test]
    fn write_and_load_from_dir() {
        let dir = tempfile::tempdir().unwrap();
        let m = sample();
        m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::load(dir.path()).unwrap(), m);
    }

    proptest! {
        #[test]
        fn arbitrary_args_round_trip(args in prop::collection::vec("[ -~]{0,20}", 0..8),
                                     seed in prop::option::of(any::<u64>()),
                                     wall in 0.0..1e4f64) {
            let m = RunManifest { args, seed, wall_time_s: wall, ..sample() };
            prop_assert_eq!(RunManifest::parse(&m.to_text().unwrap()).unwrap(), m);
        }
    }
}
