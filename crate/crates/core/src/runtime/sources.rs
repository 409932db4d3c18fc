use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::driver::{table_hash, DbDriver};
use super::exec::{Bindings, RuntimeError};
use crate::spec::{Catalog, DataOrigin, VizSpec};
use crate::table::Table;
use crate::value::Schema;

/// Resolves spec data references against a driver. `tables` renames spec
/// table names to DBMS tables; file urls are read relative to `file_root`.
pub struct DriverCatalog<'a> {
    pub driver: &'a dyn DbDriver,
    pub tables: &'a BTreeMap<String, String>,
    pub file_root: Option<&'a Path>,
}

impl DriverCatalog<'_> {
    fn table_name<'b>(&'b self, name: &'b str) -> &'b str {
        self.tables.get(name).map_or(name, String::as_str)
    }

    fn file_path(&self, url: &str) -> PathBuf {
        let url = url.strip_prefix("file://").unwrap_or(url);
        match self.file_root {
            Some(root) => root.join(url),
            None => PathBuf::from(url),
        }
    }
}

impl Catalog for DriverCatalog<'_> {
    fn schema_of(&self, origin: &DataOrigin) -> Option<Schema> {
        match origin {
            DataOrigin::Table { table } => self.driver.table_schema(self.table_name(table)).ok(),
            DataOrigin::File { url } => {
                let bytes = std::fs::read(self.file_path(url)).ok()?;
                Table::from_csv(&bytes, None).ok().map(|t| t.schema().clone())
            }
            DataOrigin::Inline { .. } => None,
        }
    }
}

/// Makes every data source of `spec` available in the DBMS and returns the
/// source-to-table bindings with content hashes. Inline rows and files are
/// ingested under content-addressed names, so repeated setup is a no-op.
pub fn bind_sources(spec: &VizSpec, catalog: &DriverCatalog) -> Result<Bindings, RuntimeError> {
    let driver = catalog.driver;
    let mut b = Bindings::default();
    for src in &spec.sources {
        let table = match &src.origin {
            DataOrigin::Table { table } => catalog.table_name(table).to_string(),
            DataOrigin::Inline { rows } => {
                let t = Table::from_json_rows(rows, Some(&src.schema))
                    .map_err(|e| RuntimeError::Source(format!("{}: {e}", src.name)))?;
                ingest_named(driver, "inline", &src.name, &t)?
            }
            DataOrigin::File { url } => {
                let path = catalog.file_path(url);
                let bytes = std::fs::read(&path)
                    .map_err(|e| RuntimeError::Source(format!("{}: {e}", path.display())))?;
                let t = Table::from_csv(&bytes, Some(&src.schema))
                    .map_err(|e| RuntimeError::Source(format!("{}: {e}", path.display())))?;
                ingest_named(driver, "file", &src.name, &t)?
            }
        };
        let hash = driver.content_hash(&table)?;
        b.hashes.insert(table.clone(), hash);
        b.tables.insert(src.name.clone(), table);
    }
    Ok(b)
}

fn ingest_named(driver: &dyn DbDriver, prefix: &str, name: &str, t: &Table) -> Result<String, RuntimeError> {
    let hash = table_hash(t);
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    let table = format!("__{prefix}_{clean}_{}", &hash[..8]);
    driver.ingest(&table, t)?;
    Ok(table)
}
