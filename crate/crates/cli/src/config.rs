use std::path::Path;

use anyhow::Context;
use serde::Deserialize;
use thermotwin::pipeline::TrainConfig;
use thermotwin::plant::{PlantConfig, Scenario};

/// Optional settings file given with `--config`. Every table is optional and
/// keys mirror the library's field names; explicit flags win over the file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub plant: PlantConfig,
    pub train: Option<TrainConfig>,
    pub twin: TwinSection,
    pub serve: ServeSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwinSection {
    pub max_steps: Option<usize>,
    pub eps: Option<f64>,
    pub window: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub port: Option<u16>,
    pub http_port: Option<u16>,
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("invalid TOML in {}", path.display()))
    }
}

pub fn load(path: Option<&Path>) -> anyhow::Result<FileConfig> {
    let cfg: FileConfig = match path {
        Some(p) => parse(p)?,
        None => FileConfig::default(),
    };
    cfg.plant.validate()?;
    Ok(cfg)
}

/// A scenario file (TOML, or JSON by extension).
pub fn load_scenario(path: &Path) -> anyhow::Result<Scenario> {
    let sc: Scenario = parse(path)?;
    sc.validate()?;
    Ok(sc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn empty_file_is_all_defaults() {
        let mut f = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
        writeln!(f).unwrap();
        let c = load(Some(f.path())).unwrap();
        assert_eq!(c.plant, PlantConfig::default());
        assert!(c.train.is_none());
    }

    #[test]
    fn sections_override_fields() {
        let mut f = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
        writeln!(f, "[plant]\nhx1_ua = 2600.0\n[train]\nhidden = 128\n[twin]\nwindow = 20\n[serve]\nport = 5000").unwrap();
        let c = load(Some(f.path())).unwrap();
        assert_eq!(c.plant.hx1_ua, 2600.0);
        assert_eq!(c.plant.hx2_ua, PlantConfig::default().hx2_ua);
        let t = c.train.unwrap();
        assert_eq!((t.hidden, t.layers), (128, 2));
        assert_eq!((c.twin.window, c.serve.port), (Some(20), Some(5000)));
    }

    #[test]
    fn unknown_keys_and_bad_plants_are_rejected() {
        let mut f = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
        writeln!(f, "[plantt]\nx = 1").unwrap();
        assert!(load(Some(f.path())).is_err());
        let mut g = tempfile::Builder::new().suffix(".json").tempfile().unwrap();
        writeln!(g, r#"{{"plant": {{"cp": -1.0}}}}"#).unwrap();
        assert!(load(Some(g.path())).is_err());
    }

    #[test]
    fn scenario_files_load() {
        let mut f = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
        writeln!(f, "duration = 20\n[[schedule]]\nt = 0.0\nheater = 50.0\npump1 = 20.0\npump2 = 20.0\nrod = 0.0").unwrap();
        let sc = load_scenario(f.path()).unwrap();
        assert_eq!((sc.duration, sc.schedule.len()), (20, 1));
    }
}
