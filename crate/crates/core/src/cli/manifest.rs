//! Run manifests: what a command was asked to do and the digests of what it
//! read and wrote.
//!
//! ```text
//! [run]
//! command = sample
//! version = 0.1.0
//! cwd = /home/me/runs
//! seed = 7
//! wall_clock_s = 0.41
//!
//! [argv]
//! 0 = sample
//! 1 = --code
//! ...
//!
//! [outputs]
//! 0 = <sha256> data.qsyn
//! ```

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::{render, Ini};
use crate::error::{invalid, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub cwd: PathBuf,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub code: Option<(String, u64)>,
    /// Resolved settings of the run.
    pub config: Vec<(String, String)>,
    /// `(path, sha256)` of every file read.
    pub inputs: Vec<(String, String)>,
    /// `(path, sha256)` of every file written.
    pub outputs: Vec<(String, String)>,
    pub wall_clock_s: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn indexed(items: impl Iterator<Item = String>) -> Vec<(String, String)> {
    items.enumerate().map(|(i, v)| (i.to_string(), v)).collect()
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut run = vec![
            ("command".to_string(), self.command.clone()),
            ("version".to_string(), self.version.clone()),
            ("cwd".to_string(), self.cwd.display().to_string()),
        ];
        if let Some(seed) = self.seed {
            run.push(("seed".into(), seed.to_string()));
        }
        if let Some((label, hash)) = &self.code {
            run.push(("code".into(), label.clone()));
            run.push(("code_hash".into(), format!("{hash:016x}")));
        }
        run.push(("wall_clock_s".into(), format!("{:.3}", self.wall_clock_s)));
        let argv = indexed(self.argv.iter().cloned());
        let inputs = indexed(self.inputs.iter().map(|(p, h)| format!("{h} {p}")));
        let outputs = indexed(self.outputs.iter().map(|(p, h)| format!("{h} {p}")));
        fn as_refs(v: &[(String, String)]) -> Vec<(&str, String)> {
            v.iter().map(|(k, v)| (k.as_str(), v.clone())).collect()
        }
        render(&[
            ("run", as_refs(&run)),
            ("argv", as_refs(&argv)),
            ("config", as_refs(&self.config)),
            ("inputs", as_refs(&inputs)),
            ("outputs", as_refs(&outputs)),
        ])
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut ini = Ini::parse(text)?;
        let command = ini.take_required("run", "command")?;
        let version = ini.take_required("run", "version")?;
        let cwd: String = ini.take_required("run", "cwd")?;
        let seed = ini.take("run", "seed").map(|s| s.parse()).transpose().map_err(|_| invalid("bad seed in manifest"))?;
        let code = match (ini.take("run", "code"), ini.take("run", "code_hash")) {
            (Some(label), Some(hash)) => Some((
                label,
                u64::from_str_radix(&hash, 16).map_err(|_| invalid("bad code hash in manifest"))?,
            )),
            (None, None) => None,
            _ => return Err(invalid("manifest has a code label without a hash or the reverse")),
        };
        let wall_clock_s = ini.take_or("run", "wall_clock_s", 0.0)?;
        let take_list = |ini: &mut Ini, section: &str| -> Vec<String> {
            (0..).map_while(|i: usize| ini.take(section, &i.to_string())).collect()
        };
        let argv = take_list(&mut ini, "argv");
        let digests = |ini: &mut Ini, section: &str| -> Result<Vec<(String, String)>> {
            take_list(ini, section)
                .into_iter()
                .map(|v| {
                    let (h, p) = v
                        .split_once(' ')
                        .ok_or_else(|| invalid(format!("bad [{section}] entry {v:?}")))?;
                    Ok((p.to_string(), h.to_string()))
                })
                .collect()
        };
        let inputs = digests(&mut ini, "inputs")?;
        let outputs = digests(&mut ini, "outputs")?;
        let config = ini.take_section("config");
        ini.finish(&["run", "argv", "config", "inputs", "outputs"])?;
        if argv.is_empty() {
            return Err(invalid("manifest records no arguments"));
        }
        Ok(Self {
            command,
            version,
            cwd: PathBuf::from(cwd),
            argv,
            seed,
            code,
            config,
            inputs,
            outputs,
            wall_clock_s,
        })
    }
}
