use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::pgm::read_pgm;
use super::rescale::resize_bilinear;
use super::{GroupTag, LabeledDataset, PIXELS, SIDE};

/// Class name → group tag, as read from a class-map file.
pub type ClassMap = BTreeMap<String, GroupTag>;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoadRecord {
    pub path: PathBuf,
    pub class: usize,
    pub width: usize,
    pub height: usize,
    /// The image was dark-on-bright and has been inverted.
    pub inverted: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub files: Vec<LoadRecord>,
    /// Files skipped because they are not PGM.
    pub skipped: Vec<PathBuf>,
}

impl LoadReport {
    pub fn inverted_count(&self) -> usize {
        self.files.iter().filter(|r| r.inverted).count()
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn is_pgm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Loads a corpus laid out as one sub-directory of PGM images per class.
///
/// Classes are numbered by sorted sub-directory name. Every image is
/// rescaled to 28×28 and inverted when its mean intensity exceeds 0.5, so
/// that glyphs are bright on a dark background.
pub fn load_directory_dataset<T: Scalar>(
    root: impl AsRef<Path>,
) -> Result<(LabeledDataset<T>, LoadReport)> {
    let root = root.as_ref();
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if class_dirs.is_empty() {
        return Err(Error::Input(format!(
            "{} has no class sub-directories",
            root.display()
        )));
    }
    let mut names = Vec::with_capacity(class_dirs.len());
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut report = LoadReport::default();
    for (class, dir) in class_dirs.iter().enumerate() {
        names.push(dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
        let mut found = 0;
        for path in sorted_entries(dir)? {
            if !path.is_file() {
                continue;
            }
            if !is_pgm(&path) {
                report.skipped.push(path);
                continue;
            }
            let img = read_pgm(&path)?;
            let mut values = resize_bilinear(&img.unit_values(), img.height, img.width, SIDE, SIDE);
            let inverted = values.iter().sum::<f64>() / PIXELS as f64 > 0.5;
            if inverted {
                values.iter_mut().for_each(|v| *v = 1.0 - *v);
            }
            pixels.extend(values.into_iter().map(T::of));
            labels.push(class);
            report.files.push(LoadRecord {
                path,
                class,
                width: img.width,
                height: img.height,
                inverted,
            });
            found += 1;
        }
        if found == 0 {
            return Err(Error::Input(format!(
                "class directory {} contains no PGM images",
                dir.display()
            )));
        }
    }
    let n = labels.len();
    let images = Tensor::new(&[n, 1, SIDE, SIDE], pixels)?;
    let ds = LabeledDataset::new(images, labels, names.len())?.with_class_names(names)?;
    Ok((ds, report))
}

/// Parses a class-map file: one `class_name group_tag` pair per line. Blank
/// lines and lines starting with `#` are ignored.
pub fn parse_class_map(text: &str) -> Result<ClassMap> {
    let mut map = ClassMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, tag] = fields[..] else {
            return Err(Error::Format(format!(
                "class map line {}: expected `name tag`, got `{line}`",
                no + 1
            )));
        };
        let tag = tag
            .parse()
            .map_err(|e| Error::Format(format!("class map line {}: {e}", no + 1)))?;
        if map.insert(name.to_string(), tag).is_some() {
            return Err(Error::Format(format!(
                "class map line {}: duplicate class `{name}`",
                no + 1
            )));
        }
    }
    Ok(map)
}

pub fn read_class_map(path: impl AsRef<Path>) -> Result<ClassMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_class_map(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::pgm::write_pgm;

    #[test]
    fn classes_follow_sorted_directory_names() {
        let root = tempfile::tempdir().unwrap();
        for name in ["b", "a"] {
            fs::create_dir(root.path().join(name)).unwrap();
        }
        write_pgm(root.path().join("a/x.pgm"), 2, 2, &[0, 0, 0, 255]).unwrap();
        write_pgm(root.path().join("b/y.pgm"), 3, 1, &[255, 255, 0]).unwrap();
        fs::write(root.path().join("b/notes.txt"), "ignored").unwrap();

        let (ds, report) = load_directory_dataset::<f32>(root.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.class_count(), 2);
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(ds.class_names().unwrap(), &["a".to_string(), "b".to_string()]);
        assert_eq!(report.files.iter().map(|r| r.inverted).collect::<Vec<_>>(), [false, true]);
        assert_eq!(report.skipped.len(), 1);
        assert!(ds.image(1).iter().sum::<f32>() / 784.0 <= 0.5);
    }

    #[test]
    fn empty_class_and_empty_root_are_input_errors() {
        let root = tempfile::tempdir().unwrap();
        assert!(matches!(load_directory_dataset::<f32>(root.path()), Err(Error::Input(_))));
        fs::create_dir(root.path().join("hollow")).unwrap();
        let err = load_directory_dataset::<f32>(root.path()).unwrap_err();
        assert!(matches!(err, Error::Input(ref m) if m.contains("hollow")), "{err}");
    }

    #[test]
    fn corrupt_pgm_names_the_file() {
        let root = tempfile::tempdir().unwrap();
        fs::create_dir(root.path().join("a")).unwrap();
        fs::write(root.path().join("a/bad.pgm"), b"P5\n4 4\n255\n\x00").unwrap();
        let err = load_directory_dataset::<f32>(root.path()).unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("bad.pgm")), "{err}");
    }

    #[test]
    fn class_map_parsing() {
        let map = parse_class_map("# groups\nka C\n\na V\nek N\n").unwrap();
        assert_eq!(map.len(), 3);
        assert_eq!(map["ka"], GroupTag::C);
        assert!(parse_class_map("ka Q\n").is_err());
        assert!(parse_class_map("ka\n").is_err());
        assert!(parse_class_map("ka C\nka V\n").is_err());
    }
}
