//! URI-keyed adapter registry.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use url::Url;

use super::{Capabilities, Extractor, Generator, MockExtractor, MockGenerator, MockSpec};
use crate::error::{Error, Result};

/// Extra adapter options, merged over the URI query parameters.
pub type Options = serde_json::Map<String, serde_json::Value>;

type ExtractorFactory = Box<dyn Fn(&Url, &Options) -> Result<Box<dyn Extractor>> + Send + Sync>;
type GeneratorFactory = Box<dyn Fn(&Url, &Options) -> Result<Box<dyn Generator>> + Send + Sync>;

/// Backend selection as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryConfig {
    pub extractor: String,
    pub generator: String,
    #[serde(default)]
    pub options: Options,
}

#[derive(Default)]
pub struct BackendRegistry {
    extractors: BTreeMap<String, ExtractorFactory>,
    generators: BTreeMap<String, GeneratorFactory>,
}

impl BackendRegistry {
    /// A registry with the `mock` scheme installed.
    pub fn with_defaults() -> Self {
        let mut reg = Self::default();
        reg.register_extractor("mock", |url, opts| {
            expect_host(url, "extractor")?;
            let spec = mock_spec(url, opts)?;
            Ok(Box::new(MockExtractor::new(&spec)) as Box<dyn Extractor>)
        });
        reg.register_generator("mock", |url, opts| {
            expect_host(url, "generator")?;
            let spec = mock_spec(url, opts)?;
            Ok(Box::new(MockGenerator::new(&spec)) as Box<dyn Generator>)
        });
        reg
    }

    pub fn register_extractor<F>(&mut self, scheme: &str, factory: F)
    where
        F: Fn(&Url, &Options) -> Result<Box<dyn Extractor>> + Send + Sync + 'static,
    {
        self.extractors.insert(scheme.to_string(), Box::new(factory));
    }

    pub fn register_generator<F>(&mut self, scheme: &str, factory: F)
    where
        F: Fn(&Url, &Options) -> Result<Box<dyn Generator>> + Send + Sync + 'static,
    {
        self.generators.insert(scheme.to_string(), Box::new(factory));
    }

    pub fn schemes(&self) -> Vec<&str> {
        let set: std::collections::BTreeSet<&str> = self
            .extractors
            .keys()
            .chain(self.generators.keys())
            .map(String::as_str)
            .collect();
        set.into_iter().collect()
    }

    pub fn extractor(&self, uri: &str, options: &Options) -> Result<Box<dyn Extractor>> {
        let url = parse(uri)?;
        let factory = self.extractors.get(url.scheme()).ok_or_else(|| {
            Error::Backend(format!("no extractor adapter registered for {}://", url.scheme()))
        })?;
        factory(&url, options)
    }

    pub fn generator(&self, uri: &str, options: &Options) -> Result<Box<dyn Generator>> {
        let url = parse(uri)?;
        let factory = self.generators.get(url.scheme()).ok_or_else(|| {
            Error::Backend(format!("no generator adapter registered for {}://", url.scheme()))
        })?;
        factory(&url, options)
    }

    pub fn resolve(&self, config: &RegistryConfig) -> Result<(Box<dyn Extractor>, Box<dyn Generator>)> {
        Ok((
            self.extractor(&config.extractor, &config.options)?,
            self.generator(&config.generator, &config.options)?,
        ))
    }
}

fn parse(uri: &str) -> Result<Url> {
    Url::parse(uri).map_err(|e| Error::Backend(format!("invalid backend uri {uri:?}: {e}")))
}

fn expect_host(url: &Url, role: &str) -> Result<()> {
    match url.host_str() {
        Some(h) if h == role => Ok(()),
        other => Err(Error::Backend(format!(
            "mock uri must be mock://{role}, got host {:?}",
            other.unwrap_or("")
        ))),
    }
}

/// Query parameters overlaid with `options`.
fn params(url: &Url, options: &Options) -> BTreeMap<String, String> {
    let mut out: BTreeMap<String, String> = url.query_pairs().into_owned().collect();
    for (k, v) in options {
        let s = match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        out.insert(k.clone(), s);
    }
    out
}

fn mock_spec(url: &Url, options: &Options) -> Result<MockSpec> {
    let p = params(url, options);
    let get = |key: &str| p.get(key).map(String::as_str);
    fn num<T: std::str::FromStr>(key: &str, v: Option<&str>, default: T) -> Result<T> {
        match v {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Backend(format!("mock option {key}={s:?} is not a valid number"))),
        }
    }
    fn flag(key: &str, v: Option<&str>) -> Result<bool> {
        match v {
            None | Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(s) => Err(Error::Backend(format!("mock option {key}={s:?} is not a boolean"))),
        }
    }
    let d = MockSpec::default();
    let size = num("size", get("size"), d.output_size.0)?;
    let spec = MockSpec {
        seed: num("seed", get("seed"), d.seed)?,
        z_dim: num("z_dim", get("z_dim"), d.z_dim)?,
        num_ws: num("num_ws", get("num_ws"), d.num_ws)?,
        output_size: (size, size),
        layers: d.layers,
        capabilities: Capabilities {
            constant_access: flag("const", get("const"))?,
            affine_access: flag("affine", get("affine"))?,
        },
    };
    if spec.z_dim == 0 || spec.num_ws == 0 || size == 0 {
        return Err(Error::Backend("mock dimensions must be positive".into()));
    }
    Ok(spec)
}
