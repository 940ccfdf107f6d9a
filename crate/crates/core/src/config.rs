//! Run configuration: where the data comes from, how it is evaluated and
//! where outputs go.
//!
//! ```toml
//! output_dir = "out"
//! seed = 7
//!
//! [data]
//! generator_file = "generator.toml"   # or an inline [data.generator] table,
//!                                     # or csv = "weekly.csv" with [data.hierarchy]
//!
//! [experiment]
//! variants = ["M1", "M3"]
//! projection = { mode = "mean" }
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use crate::data::{generate_synthetic, ingest_csv, Corpus, GeneratorConfig, LatentTruth};
use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::hierarchy::HierarchySpec;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub csv: Option<PathBuf>,
    pub hierarchy: Option<HierarchySpec>,
    pub generator: Option<GeneratorConfig>,
    pub generator_file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Csv { path: PathBuf, hierarchy: HierarchySpec },
    Generator(Box<GeneratorConfig>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Overrides the generator and experiment seeds when set.
    pub seed: Option<u64>,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut c: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.base_dir = base_dir.into();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&s, base)
    }

    /// Apply a seed override, as from the command line.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if seed.is_some() {
            self.seed = seed;
        }
        self
    }

    pub fn output_dir(&self) -> PathBuf {
        resolve(&self.base_dir, &self.output_dir)
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let mut e = self.experiment.clone();
        if let Some(s) = self.seed {
            e.seed = s;
        }
        e
    }

    pub fn source(&self) -> Result<DataSource> {
        let d = &self.data;
        let n = d.csv.is_some() as u8 + d.generator.is_some() as u8 + d.generator_file.is_some() as u8;
        if n != 1 {
            return Err(Error::Config("[data] needs exactly one of csv, generator or generator_file".into()));
        }
        if let Some(p) = &d.csv {
            let hierarchy =
                d.hierarchy.clone().ok_or_else(|| Error::Config("[data] csv input needs a hierarchy".into()))?;
            return Ok(DataSource::Csv { path: resolve(&self.base_dir, p), hierarchy });
        }
        if d.hierarchy.is_some() {
            return Err(Error::Config(
                "[data] hierarchy is only used with csv input; generators define their own".into(),
            ));
        }
        let mut g = match (&d.generator, &d.generator_file) {
            (Some(g), _) => g.clone(),
            (_, Some(p)) => {
                let p = resolve(&self.base_dir, p);
                let s = std::fs::read_to_string(&p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                GeneratorConfig::from_toml_str(&s)?
            }
            _ => unreachable!(),
        };
        if let Some(s) = self.seed {
            g.seed = s;
        }
        g.validate()?;
        Ok(DataSource::Generator(Box::new(g)))
    }

    pub fn hierarchy(&self) -> Result<HierarchySpec> {
        match self.source()? {
            DataSource::Csv { hierarchy, .. } => Ok(hierarchy),
            DataSource::Generator(g) => g.hierarchy(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hierarchy()?;
        self.experiment.validate()?;
        for item in &self.experiment.items {
            if h.item_index(item).is_none() {
                return Err(Error::Config(format!("experiment item '{item}' is not in the hierarchy")));
            }
        }
        Ok(())
    }

    /// Load or generate the corpus; generated data also returns its truth.
    pub fn load_corpus(&self) -> Result<(Corpus, Option<LatentTruth>)> {
        match self.source()? {
            DataSource::Csv { path, hierarchy } => Ok((ingest_csv(path, &hierarchy)?, None)),
            DataSource::Generator(g) => {
                let s = generate_synthetic(&g)?;
                Ok((s.corpus, Some(s.truth)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GEN: &str = r#"
output_dir = "out"
[data.generator]
households_per_group = 2
weeks = 20
[experiment]
variants = ["M1", { name = "mine", covariates = { return_model = ["intercept"], global = ["intercept"], category = ["intercept"], sub_category = ["intercept"], item = ["intercept", "household_discount"] } }]
projection = { mode = "ensemble", size = 5 }
items = ["milk_whole"]
"#;

    #[test]
    fn parses_inline_generator_and_custom_variant() {
        let c = RunConfig::from_toml_str(GEN, "/tmp/x").unwrap().with_seed(Some(9));
        assert_eq!(c.output_dir(), PathBuf::from("/tmp/x/out"));
        let v = c.experiment().resolved_variants().unwrap();
        assert_eq!(v[0].0, "M1");
        assert_eq!(v[1].0, "mine");
        assert_eq!(c.experiment().seed, 9);
        match c.source().unwrap() {
            DataSource::Generator(g) => assert_eq!((g.seed, g.households_per_group), (9, 2)),
            _ => panic!("expected generator"),
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let unknown_item = GEN.replace("milk_whole", "caviar");
        assert!(matches!(RunConfig::from_toml_str(&unknown_item, ""), Err(Error::Config(_))));
        let both = GEN.replace("[experiment]", "csv = \"a.csv\"\n[experiment]");
        assert!(matches!(RunConfig::from_toml_str(&both, ""), Err(Error::Config(_))));
        let csv_no_h = "[data]\ncsv = \"a.csv\"\n";
        assert!(matches!(RunConfig::from_toml_str(csv_no_h, ""), Err(Error::Config(_))));
        let bad_variant = GEN.replace("\"M1\"", "\"M9\"");
        assert!(matches!(RunConfig::from_toml_str(&bad_variant, ""), Err(Error::Config(_))));
        let typo = GEN.replace("burn_in", "x").replace("[experiment]", "[experiment]\nburnin = 3");
        assert!(matches!(RunConfig::from_toml_str(&typo, ""), Err(Error::Config(_))));
    }

    #[test]
    fn csv_source_with_hierarchy() {
        let s = r#"
[data]
csv = "w.csv"
[[data.hierarchy.categories]]
name = "dairy"
[[data.hierarchy.categories.sub_categories]]
name = "milk"
items = ["a", "b"]
"#;
        let c = RunConfig::from_toml_str(s, "/d").unwrap();
        match c.source().unwrap() {
            DataSource::Csv { path, hierarchy } => {
                assert_eq!(path, PathBuf::from("/d/w.csv"));
                assert_eq!(hierarchy.n_items(), 2);
            }
            _ => panic!("expected csv"),
        }
    }
}
