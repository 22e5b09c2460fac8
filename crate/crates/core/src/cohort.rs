//! A directory of meshes plus a `cohort.json` manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::io::{read_mesh, write_mesh};
use crate::mesh::SurfaceMesh;
use crate::synth::{DeformationField, PopulationSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct CohortEntry {
    pub id: String,
    pub mesh: SurfaceMesh,
    pub label: Option<usize>,
    pub truth: Option<DeformationField>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cohort {
    pub entries: Vec<CohortEntry>,
    pub spec: Option<PopulationSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub vertex_count: usize,
    #[serde(default)]
    pub label: Option<usize>,
    #[serde(default)]
    pub truth: Option<DeformationField>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub shapes: Vec<ManifestEntry>,
    #[serde(default)]
    pub spec: Option<PopulationSpec>,
}

pub const MANIFEST: &str = "cohort.json";

impl Cohort {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn meshes(&self) -> Vec<SurfaceMesh> {
        self.entries.iter().map(|e| e.mesh.clone()).collect()
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        self.entries.iter().map(|e| e.label).collect()
    }

    /// First `n` entries and the rest.
    pub fn split(&self, n: usize) -> (Cohort, Cohort) {
        let n = n.min(self.entries.len());
        let head = Cohort { entries: self.entries[..n].to_vec(), spec: self.spec.clone() };
        let tail = Cohort { entries: self.entries[n..].to_vec(), spec: self.spec.clone() };
        (head, tail)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut shapes = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let file = format!("{}.obj", e.id);
            write_mesh(&dir.join(&file), &e.mesh)?;
            shapes.push(ManifestEntry {
                id: e.id.clone(),
                file,
                vertex_count: e.mesh.vertices.len(),
                label: e.label,
                truth: e.truth.clone(),
            });
        }
        let manifest = Manifest { shapes, spec: self.spec.clone() };
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    /// Reads `cohort.json` when present, otherwise every mesh file in the directory in
    /// name order.
    pub fn read(dir: &Path) -> Result<Cohort> {
        let manifest_path = dir.join(MANIFEST);
        if manifest_path.exists() {
            let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
            let mut entries = Vec::with_capacity(manifest.shapes.len());
            for s in manifest.shapes {
                let mesh = read_mesh(&dir.join(&s.file))?;
                if mesh.vertices.len() != s.vertex_count {
                    return Err(Error::Parse {
                        path: dir.join(&s.file),
                        msg: format!("manifest says {} vertices, file has {}", s.vertex_count, mesh.vertices.len()),
                    });
                }
                entries.push(CohortEntry { id: s.id, mesh, label: s.label, truth: s.truth });
            }
            return Ok(Cohort { entries, spec: manifest.spec });
        }
        let mut files: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| crate::mesh::io::MeshFormat::from_path(p).is_ok())
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::InvalidArgument(format!("no meshes in {}", dir.display())));
        }
        let entries = files
            .iter()
            .map(|p| {
                let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("shape").to_string();
                Ok(CohortEntry { id, mesh: read_mesh(p)?, label: None, truth: None })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Cohort { entries, spec: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;
    use crate::synth::{generate_population, Family};

    #[test]
    fn manifest_round_trip() {
        let spec = PopulationSpec { family: Family::Bimodal, count: 4, n_lo: 20, n_hi: 40, amplitude: 0.1, seed: 5 };
        let c = generate_population(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        c.write(dir.path()).unwrap();
        let back = Cohort::read(dir.path()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bare_directory_of_meshes() {
        let dir = tempfile::tempdir().unwrap();
        write_mesh(&dir.path().join("b.off"), &icosphere(0, 1.0)).unwrap();
        write_mesh(&dir.path().join("a.obj"), &icosphere(1, 1.0)).unwrap();
        let c = Cohort::read(dir.path()).unwrap();
        assert_eq!(c.entries.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(c.labels(), None);
    }
}
