//! Settings resolution: flags > environment > `catalog.conf` in the store
//! root. The conf file is plain `key=value` lines with `#` comments; keys
//! used here: `site`, `federation`, `search_path`, `listen`, `tick`,
//! `backoff_max`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use catalog_core::federation::Federation;
use catalog_core::model::{decode_exact, SiteId};

use crate::CliError;

pub struct Settings {
    pub home: PathBuf,
    pub federation_path: Option<PathBuf>,
    pub conf: BTreeMap<String, String>,
}

impl Settings {
    pub fn gather(
        home_flag: Option<PathBuf>,
        federation_flag: Option<PathBuf>,
    ) -> Result<Settings, CliError> {
        let home = home_flag
            .or_else(|| std::env::var_os("CATALOG_HOME").map(PathBuf::from))
            .ok_or_else(|| {
                CliError::Usage("no store directory: pass --home or set CATALOG_HOME".into())
            })?;
        let conf = read_conf(&home.join("catalog.conf"))?;
        let federation_path = federation_flag
            .or_else(|| std::env::var_os("CATALOG_FEDERATION").map(PathBuf::from))
            .or_else(|| conf.get("federation").map(PathBuf::from));
        Ok(Settings {
            home,
            federation_path,
            conf,
        })
    }

    pub fn federation(&self) -> Result<Federation, CliError> {
        let path = self.federation_path.as_ref().ok_or_else(|| {
            CliError::Usage(
                "no federation config: pass --federation or set CATALOG_FEDERATION".into(),
            )
        })?;
        Ok(Federation::load(path)?)
    }

    /// The local site identity: the store's `site` file once initialized,
    /// otherwise the `site` key from catalog.conf.
    pub fn site(&self, federation: &Federation) -> Result<SiteId, CliError> {
        let site_file = self.home.join("site");
        if let Ok(bytes) = std::fs::read(&site_file) {
            let site: SiteId = decode_exact(&bytes)
                .map_err(|e| CliError::Store(format!("corrupt site file: {e}")))?;
            return Ok(site);
        }
        if let Some(id) = self.conf.get("site") {
            return Ok(federation.by_id(id)?.site.clone());
        }
        Err(CliError::Store(format!(
            "store at {} not initialized: run `catalog init --site <ID>`",
            self.home.display()
        )))
    }

    /// Writes catalog.conf after init, preserving unknown keys.
    pub fn write_conf(&self, site_id: &str) -> Result<(), CliError> {
        let mut conf = self.conf.clone();
        conf.insert("site".into(), site_id.to_string());
        if let Some(path) = &self.federation_path {
            conf.insert("federation".into(), path.display().to_string());
        }
        let mut text = String::new();
        for (k, v) in &conf {
            text.push_str(&format!("{k}={v}\n"));
        }
        std::fs::write(self.home.join("catalog.conf"), text)
            .map_err(|e| CliError::Store(format!("cannot write catalog.conf: {e}")))?;
        Ok(())
    }

    /// Duration setting: the flag value wins unless it is the built-in
    /// default and catalog.conf overrides it.
    pub fn duration(&self, key: &str, flag_value: &str) -> Result<Duration, CliError> {
        let defaults: &[(&str, &str)] = &[("tick", "30s"), ("backoff_max", "10m")];
        let is_default = defaults
            .iter()
            .any(|(k, v)| *k == key && *v == flag_value);
        let chosen = if is_default {
            self.conf.get(key).map(String::as_str).unwrap_or(flag_value)
        } else {
            flag_value
        };
        parse_duration(chosen)
            .ok_or_else(|| CliError::Usage(format!("bad duration for {key}: {chosen:?}")))
    }
}

fn read_conf(path: &PathBuf) -> Result<BTreeMap<String, String>, CliError> {
    let mut conf = BTreeMap::new();
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(conf),
        Err(e) => return Err(CliError::Store(format!("cannot read catalog.conf: {e}"))),
    };
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            conf.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(conf)
}

/// `500ms`, `30s`, `10m`, `2h`, or a bare second count.
pub fn parse_duration(s: &str) -> Option<Duration> {
    let s = s.trim();
    if let Some(ms) = s.strip_suffix("ms") {
        return ms.trim().parse::<u64>().ok().map(Duration::from_millis);
    }
    if let Some(secs) = s.strip_suffix('s') {
        return secs.trim().parse::<u64>().ok().map(Duration::from_secs);
    }
    if let Some(mins) = s.strip_suffix('m') {
        return mins.trim().parse::<u64>().ok().map(|m| Duration::from_secs(m * 60));
    }
    if let Some(hours) = s.strip_suffix('h') {
        return hours
            .trim()
            .parse::<u64>()
            .ok()
            .map(|h| Duration::from_secs(h * 3600));
    }
    s.parse::<u64>().ok().map(Duration::from_secs)
}
