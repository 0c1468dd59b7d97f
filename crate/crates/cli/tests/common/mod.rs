#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

/// Temporary run directory holding the bracket part and a config file.
pub struct Workspace {
    pub dir: TempDir,
}

impl Workspace {
    /// `extra` is appended to a minimal config with seed 7.
    pub fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        clusterpose_cli::commands::make_part(&dir.path().join("part")).expect("bracket files");
        let ws = Workspace { dir };
        ws.write_config("config.toml", extra);
        ws
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn config(&self) -> PathBuf {
        self.path().join("config.toml")
    }

    pub fn dataset(&self) -> PathBuf {
        self.path().join("dataset")
    }

    pub fn output(&self) -> PathBuf {
        self.path().join("out")
    }

    pub fn write_config(&self, name: &str, extra: &str) -> PathBuf {
        let text = format!(
            "seed = 7\nscenes = 10\n\n[paths]\nmesh = \"part/bracket.obj\"\nedges = \"part/bracket.edges\"\n\
             dataset = \"dataset\"\noutput = \"out\"\n\n{extra}"
        );
        let path = self.path().join(name);
        std::fs::write(&path, text).expect("write config");
        path
    }

    pub fn run(&self, args: &[&str]) -> Output {
        let out = Command::new(env!("CARGO_BIN_EXE_clusterpose"))
            .args(args)
            .current_dir(self.path())
            .output()
            .expect("spawn clusterpose");
        out
    }

    /// Runs with `--config <config>` appended after the subcommand and
    /// asserts success.
    pub fn ok(&self, command: &str, extra: &[&str]) -> String {
        let config = self.config();
        let mut args = vec![command, "--config", config.to_str().unwrap()];
        args.extend_from_slice(extra);
        let out = self.run(&args);
        assert!(
            out.status.success(),
            "{command} failed ({:?}):\n{}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

pub const NOISELESS: &str = "[detector]\nsigma = 0.0\ndropout = 0.0\ncontamination = 0.0\n";

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Every file under `root`, relative path paired with contents, sorted.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(root).unwrap().to_path_buf(), read(&p)));
            }
        }
    }
    files.sort();
    files
}
