//! Dataset directory layout:
//! `cases/<id>/{ref.vgrd, sub.vgrd, ref.pcld, sub.pcld}`, `splits.csv`,
//! `stats.bin`.

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, StandardizationStats, VoxelGrid};
use crate::io;
use crate::synthdata::{Dataset, Split};
use std::path::{Path, PathBuf};

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    let cases_dir = dir.join("cases");
    std::fs::create_dir_all(&cases_dir)?;
    for case in &dataset.cases {
        let cd = cases_dir.join(&case.id);
        std::fs::create_dir_all(&cd)?;
        io::write_voxel_grid(&cd.join("ref.vgrd"), &case.ref_grid)?;
        io::write_voxel_grid(&cd.join("sub.vgrd"), &case.sub_grid)?;
        io::write_point_cloud(&cd.join("ref.pcld"), &case.ref_cloud)?;
        io::write_point_cloud(&cd.join("sub.pcld"), &case.sub_cloud)?;
    }
    let mut splits = String::from("case_id,split\n");
    for (case, split) in dataset.cases.iter().zip(&dataset.splits) {
        splits.push_str(&format!("{},{}\n", case.id, split.name()));
    }
    std::fs::write(dir.join("splits.csv"), splits)?;
    io::write_stats(&dir.join("stats.bin"), &dataset.stats)?;
    Ok(())
}

/// On-disk view of a dataset; clouds and grids load on demand.
pub struct LoadedDataset {
    dir: PathBuf,
    pub ids: Vec<String>,
    pub splits: Vec<Split>,
    pub stats: StandardizationStats,
}

impl LoadedDataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let splits_text = std::fs::read_to_string(dir.join("splits.csv"))?;
        let mut ids = Vec::new();
        let mut splits = Vec::new();
        for (i, line) in splits_text.lines().enumerate() {
            if i == 0 {
                if line != "case_id,split" {
                    return Err(Error::Format(format!("splits.csv: bad header {line:?}")));
                }
                continue;
            }
            let (id, split) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("splits.csv line {}: {line:?}", i + 1)))?;
            ids.push(id.to_string());
            splits.push(match split {
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                other => {
                    return Err(Error::Format(format!("splits.csv: unknown split {other:?}")))
                }
            });
        }
        if ids.is_empty() {
            return Err(Error::EmptyInput("dataset has no cases".into()));
        }
        let stats = io::read_stats(&dir.join("stats.bin"))?;
        Ok(Self { dir: dir.to_path_buf(), ids, splits, stats })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    fn case_dir(&self, i: usize) -> PathBuf {
        self.dir.join("cases").join(&self.ids[i])
    }

    pub fn ref_cloud(&self, i: usize) -> Result<PointCloud> {
        io::read_point_cloud(&self.case_dir(i).join("ref.pcld"))
    }

    pub fn sub_cloud(&self, i: usize) -> Result<PointCloud> {
        io::read_point_cloud(&self.case_dir(i).join("sub.pcld"))
    }

    pub fn ref_grid(&self, i: usize) -> Result<VoxelGrid> {
        io::read_voxel_grid(&self.case_dir(i).join("ref.vgrd"))
    }
}
