//! Run configuration files: `[section]` headers followed by `key = value`
//! lines. `#` starts a comment. Unknown sections and keys are errors.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::HyperParams;
use crate::netblocks::WidthConfig;

/// Named network family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    MobileNetV2,
    /// `micro:<divisor>:<inverted residuals>:<image size>`
    Micro {
        divisor: usize,
        blocks: usize,
        size: usize,
    },
}

impl Family {
    pub fn micronet() -> Self {
        Family::Micro {
            divisor: 8,
            blocks: 4,
            size: 32,
        }
    }

    pub fn width_config(&self) -> WidthConfig {
        match *self {
            Family::MobileNetV2 => WidthConfig::mobilenet_v2_cifar(),
            Family::Micro {
                divisor,
                blocks,
                size,
            } => WidthConfig::micro(divisor, blocks, size),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Family::MobileNetV2 => f.write_str("mobilenet_v2"),
            Family::Micro {
                divisor,
                blocks,
                size,
            } => write!(f, "micro:{divisor}:{blocks}:{size}"),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mobilenet_v2" => return Ok(Family::MobileNetV2),
            "micronet" => return Ok(Family::micronet()),
            _ => {}
        }
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || {
            Error::Config(format!(
                "unknown model family {s:?}; use mobilenet_v2, micronet or micro:D:B:S"
            ))
        };
        if parts.len() != 4 || parts[0] != "micro" {
            return Err(bad());
        }
        let num = |p: &str| p.parse::<usize>().map_err(|_| bad());
        let (divisor, blocks, size) = (num(parts[1])?, num(parts[2])?, num(parts[3])?);
        if divisor == 0 || blocks == 0 || blocks > 17 || size < 4 {
            return Err(bad());
        }
        Ok(Family::Micro {
            divisor,
            blocks,
            size,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic {
        n_per_class: usize,
        n_test_per_class: usize,
        classes: usize,
        noise: f64,
        seed: u64,
    },
    Cifar10 {
        dir: PathBuf,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            n_per_class: 200,
            n_test_per_class: 50,
            classes: 10,
            noise: 0.15,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub hyper: HyperParams,
    pub family: Family,
    pub blocks_removed: usize,
    pub data: DataSource,
    pub seed: u64,
    pub runs: usize,
    pub ig_map: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hyper: HyperParams::tuned(),
            family: Family::micronet(),
            blocks_removed: 2,
            data: DataSource::default(),
            seed: 0,
            runs: 10,
            ig_map: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value {v:?} for {key}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        let (mut kind, mut dir) = (None::<String>, None::<PathBuf>);
        let (mut n_per_class, mut n_test, mut classes, mut noise, mut data_seed) =
            match DataSource::default() {
                DataSource::Synthetic {
                    n_per_class,
                    n_test_per_class,
                    classes,
                    noise,
                    seed,
                } => (n_per_class, n_test_per_class, classes, noise, seed),
                DataSource::Cifar10 { .. } => unreachable!("default is synthetic"),
            };
        for (i, raw) in text.lines().enumerate() {
            let no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !["hyper", "model", "data", "run"].contains(&section.as_str()) {
                    return Err(Error::Config(format!(
                        "line {no}: unknown section [{section}]"
                    )));
                }
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {no}: expected key = value")))?;
            let (k, v) = (k.trim(), v.trim());
            let h = &mut cfg.hyper;
            match (section.as_str(), k) {
                ("hyper", "alpha") => h.alpha = parse_value(no, k, v)?,
                ("hyper", "temperature") => h.temperature = parse_value(no, k, v)?,
                ("hyper", "gamma") => h.gamma = parse_value(no, k, v)?,
                ("hyper", "overlay_p") => h.overlay_p = parse_value(no, k, v)?,
                ("hyper", "attention_power") => h.attention_power = parse_value(no, k, v)?,
                ("hyper", "lr") => h.lr = parse_value(no, k, v)?,
                ("hyper", "epochs") => h.epochs = parse_value(no, k, v)?,
                ("hyper", "batch_size") => h.batch_size = parse_value(no, k, v)?,
                ("model", "family") => cfg.family = v.parse()?,
                ("model", "blocks_removed") => cfg.blocks_removed = parse_value(no, k, v)?,
                ("data", "kind") => kind = Some(v.to_string()),
                ("data", "path") => dir = Some(PathBuf::from(v)),
                ("data", "n_per_class") => n_per_class = parse_value(no, k, v)?,
                ("data", "n_test_per_class") => n_test = parse_value(no, k, v)?,
                ("data", "classes") => classes = parse_value(no, k, v)?,
                ("data", "noise") => noise = parse_value(no, k, v)?,
                ("data", "seed") => data_seed = parse_value(no, k, v)?,
                ("run", "seed") => cfg.seed = parse_value(no, k, v)?,
                ("run", "runs") => cfg.runs = parse_value(no, k, v)?,
                ("run", "ig_map") => cfg.ig_map = Some(PathBuf::from(v)),
                ("run", "output_dir") => cfg.output_dir = PathBuf::from(v),
                ("", _) => {
                    return Err(Error::Config(format!(
                        "line {no}: key {k} appears before any section"
                    )))
                }
                (s, _) => {
                    return Err(Error::Config(format!(
                        "line {no}: unknown key {k} in [{s}]"
                    )))
                }
            }
        }
        cfg.data = match kind.as_deref().unwrap_or("synthetic") {
            "synthetic" => DataSource::Synthetic {
                n_per_class,
                n_test_per_class: n_test,
                classes,
                noise,
                seed: data_seed,
            },
            "cifar10" => DataSource::Cifar10 {
                dir: dir
                    .ok_or_else(|| Error::Config("[data] kind = cifar10 needs a path".into()))?,
            },
            other => return Err(Error::Config(format!("unknown data kind {other:?}"))),
        };
        cfg.hyper.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let h = &self.hyper;
        let mut s = String::new();
        let _ = writeln!(s, "[hyper]");
        let _ = writeln!(s, "alpha = {}", h.alpha);
        let _ = writeln!(s, "temperature = {}", h.temperature);
        let _ = writeln!(s, "gamma = {}", h.gamma);
        let _ = writeln!(s, "overlay_p = {}", h.overlay_p);
        let _ = writeln!(s, "attention_power = {}", h.attention_power);
        let _ = writeln!(s, "lr = {}", h.lr);
        let _ = writeln!(s, "epochs = {}", h.epochs);
        let _ = writeln!(s, "batch_size = {}", h.batch_size);
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "family = {}", self.family);
        let _ = writeln!(s, "blocks_removed = {}", self.blocks_removed);
        let _ = writeln!(s, "\n[data]");
        match &self.data {
            DataSource::Synthetic {
                n_per_class,
                n_test_per_class,
                classes,
                noise,
                seed,
            } => {
                let _ = writeln!(s, "kind = synthetic");
                let _ = writeln!(s, "n_per_class = {n_per_class}");
                let _ = writeln!(s, "n_test_per_class = {n_test_per_class}");
                let _ = writeln!(s, "classes = {classes}");
                let _ = writeln!(s, "noise = {noise}");
                let _ = writeln!(s, "seed = {seed}");
            }
            DataSource::Cifar10 { dir } => {
                let _ = writeln!(s, "kind = cifar10");
                let _ = writeln!(s, "path = {}", dir.display());
            }
        }
        let _ = writeln!(s, "\n[run]");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "runs = {}", self.runs);
        if let Some(p) = &self.ig_map {
            let _ = writeln!(s, "ig_map = {}", p.display());
        }
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        s
    }

    /// Fails when an input path named by the config does not exist.
    pub fn check_paths(&self) -> Result<()> {
        let mut inputs: Vec<&Path> = Vec::new();
        if let DataSource::Cifar10 { dir } = &self.data {
            inputs.push(dir);
        }
        if let Some(p) = &self.ig_map {
            inputs.push(p);
        }
        match inputs.into_iter().find(|p| !p.exists()) {
            Some(p) => Err(Error::Config(format!("{} does not exist", p.display()))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn cifar_round_trip_with_ig_map() {
        let cfg = RunConfig {
            data: DataSource::Cifar10 {
                dir: PathBuf::from("/data/cifar"),
            },
            ig_map: Some(PathBuf::from("maps.dfig")),
            family: Family::MobileNetV2,
            hyper: HyperParams::untuned(),
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(cfg.check_paths().is_err());
    }

    #[test]
    fn unknown_keys_and_sections_fail() {
        assert!(matches!(
            RunConfig::parse("[hyper]\nalhpa = 0.1\n"),
            Err(Error::Config(_))
        ));
        assert!(RunConfig::parse("[extra]\n").is_err());
        assert!(RunConfig::parse("alpha = 0.1\n").is_err());
        assert!(RunConfig::parse("[hyper]\nalpha = lots\n").is_err());
        assert!(RunConfig::parse("[hyper]\nalpha = 2\n").is_err());
    }

    #[test]
    fn comments_and_family_names() {
        let cfg = RunConfig::parse("# top\n[model]\nfamily = micro:4:6:16 # trailing\n").unwrap();
        assert_eq!(
            cfg.family,
            Family::Micro {
                divisor: 4,
                blocks: 6,
                size: 16
            }
        );
        assert_eq!("micronet".parse::<Family>().unwrap(), Family::micronet());
        assert!("resnet".parse::<Family>().is_err());
    }
}
