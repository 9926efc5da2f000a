//! `key=value` run configuration shared by the command-line tools.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::averaging::SolveOptions;
use crate::bank::{BankConfig, REFERENCE_RESOLUTION_US};
use crate::error::{Error, Result};
use crate::hough::HoughConfig;
use crate::motion::CmOptions;

/// Tunables of the whole pipeline. `hough` is tuned for 100 ms windows and
/// rescaled for the other resolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub hough: HoughConfig,
    pub resolutions_ms: Vec<u64>,
    pub dt_ms: u64,
    pub anchor_weight: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub kernel_sigma: f64,
    pub use_polarity: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            hough: HoughConfig::default(),
            resolutions_ms: vec![400, 200, 100],
            dt_ms: 50,
            anchor_weight: 10.0,
            max_iters: SolveOptions::default().max_iters,
            tol: SolveOptions::default().tol,
            kernel_sigma: 1.0,
            use_polarity: false,
        }
    }
}

fn value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::parse(line, format!("bad value {v:?} for {key}")))
}

impl Config {
    /// Parses `key=value` lines over the defaults. Blank lines and `#`
    /// comments are skipped; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(n, "expected key=value"))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "subdivision_level" => c.hough.subdivision_level = value(n, k, v)?,
                "delta" => c.hough.delta = value(n, k, v)?,
                "bin_size" => c.hough.bin_size = value(n, k, v)?,
                "time_scale_ms" => c.hough.time_scale_ms = value(n, k, v)?,
                "eps_dir" => c.hough.eps_dir = value(n, k, v)?,
                "resolutions_ms" => {
                    c.resolutions_ms = v
                        .split(',')
                        .map(|s| value(n, k, s.trim()))
                        .collect::<Result<_>>()?
                }
                "dt_ms" => c.dt_ms = value(n, k, v)?,
                "anchor_weight" => c.anchor_weight = value(n, k, v)?,
                "max_iters" => c.max_iters = value(n, k, v)?,
                "tol" => c.tol = value(n, k, v)?,
                "kernel_sigma" => c.kernel_sigma = value(n, k, v)?,
                "use_polarity" => c.use_polarity = value(n, k, v)?,
                _ => return Err(Error::parse(n, format!("unknown key {k:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let h = &self.hough;
        let res: Vec<String> = self.resolutions_ms.iter().map(u64::to_string).collect();
        let _ = write!(
            s,
            "subdivision_level={}\ndelta={}\nbin_size={}\ntime_scale_ms={}\neps_dir={}\n\
             resolutions_ms={}\ndt_ms={}\nanchor_weight={}\nmax_iters={}\ntol={}\n\
             kernel_sigma={}\nuse_polarity={}\n",
            h.subdivision_level,
            h.delta,
            h.bin_size,
            h.time_scale_ms,
            h.eps_dir,
            res.join(","),
            self.dt_ms,
            self.anchor_weight,
            self.max_iters,
            self.tol,
            self.kernel_sigma,
            self.use_polarity
        );
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.hough.validate()?;
        if !(self.anchor_weight > 0.0) || !(self.tol > 0.0) || !(self.kernel_sigma > 0.0) {
            return Err(Error::invalid(
                "anchor_weight, tol and kernel_sigma must be positive",
            ));
        }
        self.bank().map(|_| ())
    }

    pub fn bank(&self) -> Result<BankConfig> {
        BankConfig::scaled(
            self.resolutions_ms.iter().map(|r| r * 1000).collect(),
            self.dt_ms * 1000,
            self.hough,
            REFERENCE_RESOLUTION_US,
        )
    }

    pub fn dt_us(&self) -> u64 {
        self.dt_ms * 1000
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            max_iters: self.max_iters,
            tol: self.tol,
            ..SolveOptions::default()
        }
    }

    pub fn cm_options(&self) -> CmOptions {
        CmOptions {
            kernel_sigma: self.kernel_sigma,
            use_polarity: self.use_polarity,
            ..CmOptions::default()
        }
    }
}
