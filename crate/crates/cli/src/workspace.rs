//! Output directory access. Every read and write goes through here and is
//! appended to `access.log`, which the data-separation audit inspects.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::artifact::Artifact;
use crate::error::{CliError, CliResult};

pub const ACCESS_LOG: &str = "access.log";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Read,
    Write,
    Remove,
}

impl Access {
    fn name(self) -> &'static str {
        match self {
            Access::Read => "read",
            Access::Write => "write",
            Access::Remove => "remove",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRecord {
    pub stage: String,
    pub access: String,
    pub file: String,
}

pub struct Workspace {
    root: PathBuf,
    stage: &'static str,
}

impl Workspace {
    pub fn open(root: &Path, stage: &'static str) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Workspace {
            root: root.to_path_buf(),
            stage,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage(&self) -> &'static str {
        self.stage
    }

    fn log(&self, access: Access, file: &str) -> CliResult<()> {
        let path = self.root.join(ACCESS_LOG);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| CliError::io(&path, e))?;
        writeln!(f, "{}\t{}\t{}", self.stage, access.name(), file).map_err(|e| CliError::io(&path, e))
    }

    pub fn exists(&self, file: &str) -> bool {
        self.root.join(file).is_file()
    }

    /// Reads `file`; a missing file names the stage that produces it.
    pub fn read(&self, file: &str, producer: &'static str) -> CliResult<String> {
        let path = self.root.join(file);
        if !path.is_file() {
            return Err(CliError::MissingInput {
                file: file.to_string(),
                producer,
            });
        }
        self.log(Access::Read, file)?;
        fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))
    }

    pub fn read_artifact(&self, file: &str, kind: &str, producer: &'static str) -> CliResult<Artifact> {
        let artifact = Artifact::parse(&self.read(file, producer)?, file)?;
        artifact.expect_kind(kind, file)?;
        Ok(artifact)
    }

    /// Reads a file outside the output directory, such as a user density.
    pub fn read_external(&self, path: &Path) -> CliResult<String> {
        self.log(Access::Read, &path.display().to_string())?;
        fs::read_to_string(path).map_err(|e| CliError::io(path, e))
    }

    pub fn write(&self, file: &str, contents: &str) -> CliResult<()> {
        let path = self.root.join(file);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        self.log(Access::Write, file)?;
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))
    }

    pub fn write_artifact(&self, file: &str, artifact: &Artifact) -> CliResult<()> {
        self.write(file, &artifact.render())
    }

    pub fn remove(&self, file: &str) -> CliResult<()> {
        let path = self.root.join(file);
        if path.is_file() {
            self.log(Access::Remove, file)?;
            fs::remove_file(&path).map_err(|e| CliError::io(&path, e))?;
        }
        Ok(())
    }

    /// Checks that `artifact` (read from `file`) was built from `input` with hash `found`.
    pub fn check_input(
        &self,
        artifact: &Artifact,
        file: &str,
        input: &str,
        found: &str,
        producer: &'static str,
    ) -> CliResult<()> {
        let recorded = artifact
            .input(input)
            .ok_or_else(|| CliError::artifact(file, format!("header does not record input '{input}'")))?;
        if recorded != found {
            return Err(CliError::Mismatch {
                file: file.to_string(),
                input: input.to_string(),
                recorded: recorded.to_string(),
                found: found.to_string(),
                producer,
            });
        }
        Ok(())
    }
}

pub fn read_access_log(root: &Path) -> CliResult<Vec<AccessRecord>> {
    let path = root.join(ACCESS_LOG);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(text
        .lines()
        .filter_map(|line| {
            let mut parts = line.splitn(3, '\t');
            Some(AccessRecord {
                stage: parts.next()?.to_string(),
                access: parts.next()?.to_string(),
                file: parts.next()?.to_string(),
            })
        })
        .collect())
}
