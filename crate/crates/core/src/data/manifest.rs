//! Raw task manifests: a `key = value` file pointing at a flat u8 pixel file
//! (row-major `[count, c, h, w]`) and a u8 label file.

use std::path::{Path, PathBuf};

use super::TaskDataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::kv;

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub shape: [usize; 3],
    pub count: usize,
    pub images_file: PathBuf,
    pub labels_file: PathBuf,
    pub split: [usize; 3],
    pub flip_lr: bool,
    pub classes: usize,
}

impl Manifest {
    /// Relative file paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let entries = kv::parse(text).map_err(Error::ManifestInvalid)?;
        let get = |key: &str| {
            entries
                .iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::ManifestInvalid(format!("missing '{key}'")))
        };
        let triple = |key: &str| -> Result<[usize; 3]> {
            kv::parse_list::<usize>(get(key)?)
                .and_then(|v| <[usize; 3]>::try_from(v).ok())
                .ok_or_else(|| Error::ManifestInvalid(format!("'{key}' must be three integers")))
        };
        let shape = triple("shape")?;
        if shape.contains(&0) {
            return Err(Error::ManifestInvalid("shape extents must be positive".into()));
        }
        let count = get("count")?
            .parse()
            .map_err(|_| Error::ManifestInvalid("'count' must be an integer".into()))?;
        let flip_lr = match entries.iter().rev().find(|(k, _)| k == "flip_lr") {
            Some((_, v)) => kv::parse_bool(v).ok_or_else(|| Error::ManifestInvalid(format!("bad flip_lr '{v}'")))?,
            None => false,
        };
        let classes = match entries.iter().rev().find(|(k, _)| k == "classes") {
            Some((_, v)) => v
                .parse()
                .ok()
                .filter(|&c: &usize| (2..=256).contains(&c))
                .ok_or_else(|| Error::ManifestInvalid(format!("bad classes '{v}'")))?,
            None => 10,
        };
        Ok(Self {
            name: get("name")?.to_string(),
            shape,
            count,
            images_file: base.join(get("images_file")?),
            labels_file: base.join(get("labels_file")?),
            split: triple("split")?,
            flip_lr,
            classes,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ManifestInvalid(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Loads the referenced files into a task with the given index.
    pub fn load(&self, task_index: usize) -> Result<TaskDataset> {
        if self.split.iter().sum::<usize>() != self.count {
            return Err(Error::SizeMismatch(format!(
                "split {:?} sums to {}, count is {}",
                self.split,
                self.split.iter().sum::<usize>(),
                self.count
            )));
        }
        let read = |p: &Path| {
            std::fs::read(p).map_err(|e| Error::ManifestInvalid(format!("{}: {e}", p.display())))
        };
        let pixels = read(&self.images_file)?;
        let labels = read(&self.labels_file)?;
        let per: usize = self.shape.iter().product();
        if pixels.len() != self.count * per {
            return Err(Error::SizeMismatch(format!(
                "{} holds {} bytes, expected {}",
                self.images_file.display(),
                pixels.len(),
                self.count * per
            )));
        }
        if labels.len() != self.count {
            return Err(Error::SizeMismatch(format!(
                "{} holds {} labels, expected {}",
                self.labels_file.display(),
                labels.len(),
                self.count
            )));
        }
        let mut shape = vec![self.count];
        shape.extend_from_slice(&self.shape);
        let images = Tensor::new(shape, pixels.iter().map(|&b| b as f32).collect())?;
        let [tr, va, _] = self.split;
        let task = TaskDataset {
            name: self.name.clone(),
            task_index,
            classes: self.classes,
            images,
            labels: labels.iter().map(|&l| l as usize).collect(),
            train: (0..tr).collect(),
            valid: (tr..tr + va).collect(),
            test: (tr + va..self.count).collect(),
            flip_lr: self.flip_lr,
        };
        task.validate()?;
        Ok(task)
    }
}

pub fn load_raw_task(manifest_path: impl AsRef<Path>, task_index: usize) -> Result<TaskDataset> {
    Manifest::read(manifest_path.as_ref())?.load(task_index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_task(dir: &Path, count: usize, split: &str, with_labels: bool) -> PathBuf {
        std::fs::write(dir.join("img.u8"), vec![7u8; count * 3 * 4 * 4]).unwrap();
        if with_labels {
            std::fs::write(dir.join("lab.u8"), (0..count).map(|i| (i % 10) as u8).collect::<Vec<_>>()).unwrap();
        }
        let manifest = format!(
            "name = toy\nshape = 3,4,4\ncount = {count}\nimages_file = img.u8\nlabels_file = lab.u8\nsplit = {split}\nflip_lr = true\n"
        );
        let path = dir.join("toy.manifest");
        std::fs::write(&path, manifest).unwrap();
        path
    }

    #[test]
    fn loads_partitions() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_task(dir.path(), 12, "6,4,2", true);
        let task = load_raw_task(&path, 1).unwrap();
        assert_eq!(task.images.shape(), &[12, 3, 4, 4]);
        assert_eq!((task.train.len(), task.valid.len(), task.test.len()), (6, 4, 2));
        assert!(task.flip_lr);
        assert_eq!(task.global_unit(3), 13);
    }

    #[test]
    fn split_must_sum_to_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_task(dir.path(), 12, "6,4,1", true);
        assert!(matches!(load_raw_task(&path, 0), Err(Error::SizeMismatch(_))));
    }

    #[test]
    fn missing_label_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_task(dir.path(), 12, "6,4,2", false);
        assert!(matches!(load_raw_task(&path, 0), Err(Error::ManifestInvalid(_))));
    }

    #[test]
    fn paper_sized_manifest_parses() {
        let text = "name = cifar10\nshape = 3,32,32\ncount = 60000\nimages_file = a\nlabels_file = b\nsplit = 37500,12500,10000\nflip_lr = true\n";
        let m = Manifest::parse(text, Path::new("/data")).unwrap();
        assert_eq!(m.split, [37_500, 12_500, 10_000]);
        assert_eq!(m.split.iter().sum::<usize>(), m.count);
        assert_eq!(m.images_file, Path::new("/data/a"));
    }
}
