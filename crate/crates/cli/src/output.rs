//! Output directory with atomic writes and rollback.

use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use anyhow::{bail, Context, Result};

/// Files are written to a temporary sibling and renamed into place. Every
/// file (and directory) this value created is removed by [`OutputDir::rollback`].
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        let mut out = OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
            dirs: Vec::new(),
        };
        out.ensure_dir(root)?;
        Ok(out)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn ensure_dir(&mut self, dir: &Path) -> Result<()> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(d) = cur {
            if d.as_os_str().is_empty() || d.exists() {
                break;
            }
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        for d in missing.into_iter().rev() {
            fs::create_dir(&d).with_context(|| format!("creating {}", d.display()))?;
            self.dirs.push(d);
        }
        if !dir.is_dir() {
            bail!("{} is not a directory", dir.display());
        }
        Ok(())
    }

    /// Writes `name` (relative, no `..`) under the root.
    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let rel = Path::new(name);
        if rel.is_absolute() || rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            bail!("output name `{name}` escapes the output directory");
        }
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            let parent = parent.to_path_buf();
            self.ensure_dir(&parent)?;
        }
        let file_name = path.file_name().expect("normal component").to_string_lossy();
        let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
        let result = (|| {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(contents)?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        })();
        if let Err(e) = result {
            let _ = fs::remove_file(&tmp);
            return Err(e).with_context(|| format!("writing {}", path.display()));
        }
        if !self.files.contains(&path) {
            self.files.push(path.clone());
        }
        Ok(path)
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    /// Removes everything written so far, newest first.
    pub fn rollback(self) {
        for f in self.files.iter().rev() {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

/// CSV text from a header and rows of already formatted cells.
pub fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    table(',', header, rows)
}

pub fn tsv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    table('\t', header, rows)
}

fn table(sep: char, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = String::new();
    if !header.is_empty() {
        s.push_str(&header.join(&sep.to_string()));
        s.push('\n');
    }
    for row in rows {
        s.push_str(&row.join(&sep.to_string()));
        s.push('\n');
    }
    s
}
