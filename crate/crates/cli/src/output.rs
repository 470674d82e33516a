//! Output staging: files are written to a hidden directory inside the
//! output directory and moved into place only when the command succeeds.

use crate::failure::Failure;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use tempfile::TempDir;

pub struct Staging {
    dir: Option<TempDir>,
    out: PathBuf,
    created_out: bool,
    files: Vec<String>,
    committed: bool,
}

impl Staging {
    pub fn new(out: &Path) -> Result<Self, Failure> {
        let created_out = !out.exists();
        fs::create_dir_all(out).map_err(|e| Failure::Data(format!("cannot create {}: {e}", out.display())))?;
        let dir = tempfile::Builder::new()
            .prefix(".latmom-staging-")
            .tempdir_in(out)
            .map_err(|e| Failure::Data(format!("cannot stage outputs in {}: {e}", out.display())))?;
        Ok(Staging { dir: Some(dir), out: out.to_path_buf(), created_out, files: Vec::new(), committed: false })
    }

    /// Writes one output file through `f`.
    pub fn write<F>(&mut self, name: &str, f: F) -> Result<(), Failure>
    where
        F: FnOnce(&mut BufWriter<File>) -> latmom::Result<()>,
    {
        let path = self.dir.as_ref().expect("staging directory").path().join(name);
        let file = File::create(&path).map_err(|e| Failure::Data(format!("cannot write {name}: {e}")))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| Failure::Data(format!("cannot write {name}: {e}")))?;
        w.get_ref().sync_all().map_err(|e| Failure::Data(format!("cannot write {name}: {e}")))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    /// Moves every staged file into the output directory.
    pub fn commit(mut self) -> Result<Vec<PathBuf>, Failure> {
        let dir = self.dir.take().expect("staging directory");
        let mut moved = Vec::new();
        for name in &self.files {
            let target = self.out.join(name);
            fs::rename(dir.path().join(name), &target)
                .map_err(|e| Failure::Data(format!("cannot move {name} into {}: {e}", self.out.display())))?;
            moved.push(target);
        }
        self.committed = true;
        Ok(moved)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        drop(self.dir.take());
        if !self.committed && self.created_out {
            let _ = fs::remove_dir(&self.out);
        }
    }
}
