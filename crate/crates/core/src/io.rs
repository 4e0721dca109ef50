//! Site CSV files (`y,t,x1,...,xp`) and the JSON manifest listing them.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MultiSiteData, SiteDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifestEntry {
    Path(PathBuf),
    Site { path: PathBuf, site_id: Option<u32> },
}

/// Ordered list of site files. Relative paths resolve against the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub sites: Vec<ManifestEntry>,
}

impl Manifest {
    /// `(site_id, path)` pairs; ids default to 1-based positions.
    pub fn resolve(&self, base: &Path) -> Vec<(u32, PathBuf)> {
        self.sites
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let (path, id) = match e {
                    ManifestEntry::Path(p) => (p, None),
                    ManifestEntry::Site { path, site_id } => (path, *site_id),
                };
                (id.unwrap_or(i as u32 + 1), base.join(path))
            })
            .collect()
    }
}

pub fn read_site<R: Read>(reader: R, site_id: u32) -> Result<SiteDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 || &header[0] != "y" || &header[1] != "t" {
        return Err(Error::Format(format!(
            "site {site_id}: header must start with y,t"
        )));
    }
    let p = header.len() - 2;
    let mut y = Vec::new();
    let mut t = Vec::new();
    let mut x = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != p + 2 {
            return Err(Error::Format(format!(
                "site {site_id} row {row}: expected {} fields, found {}",
                p + 2,
                rec.len()
            )));
        }
        let mut vals = rec.iter().enumerate().map(|(col, f)| {
            f.parse::<f64>().map_err(|_| {
                Error::Format(format!("site {site_id} row {row} column {}: '{f}' is not a number", &header[col]))
            })
        });
        y.push(vals.next().expect("length checked")?);
        t.push(vals.next().expect("length checked")?);
        for v in vals {
            x.push(v?);
        }
    }
    let n = y.len();
    let site = SiteDataset::new(
        site_id,
        DVector::from_vec(y),
        DVector::from_vec(t),
        DMatrix::from_row_slice(n, p, &x),
    )?;
    site.validate()?;
    Ok(site)
}

pub fn read_site_csv(path: &Path, site_id: u32) -> Result<SiteDataset> {
    read_site(File::open(path)?, site_id)
}

pub fn write_site<W: Write>(site: &SiteDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string(), "t".to_string()];
    header.extend((1..=site.p()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for i in 0..site.n() {
        let mut rec = vec![site.y[i].to_string(), site.t[i].to_string()];
        rec.extend(site.x.row(i).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_site_csv(site: &SiteDataset, path: &Path) -> Result<()> {
    write_site(site, File::create(path)?)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}

/// Loads and validates every site named in the manifest.
pub fn load_manifest(path: &Path) -> Result<MultiSiteData> {
    let manifest = read_manifest(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let sites = manifest
        .resolve(base)
        .into_iter()
        .map(|(id, p)| read_site_csv(&p, id))
        .collect::<Result<Vec<_>>>()?;
    MultiSiteData::new(sites)
}

/// Writes one CSV per site plus a manifest into `dir`.
pub fn write_dataset(data: &MultiSiteData, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for site in data.sites() {
        let name = format!("site{}.csv", site.site_id);
        write_site_csv(site, &dir.join(&name))?;
        entries.push(ManifestEntry::Site {
            path: PathBuf::from(name),
            site_id: Some(site.site_id),
        });
    }
    let manifest_path = dir.join("manifest.json");
    let file = File::create(&manifest_path)?;
    serde_json::to_writer_pretty(file, &Manifest { sites: entries })?;
    Ok(manifest_path)
}
