#![allow(dead_code)]

use std::path::{Path, PathBuf};

use tempfile::TempDir;

pub const PUC_QUESTION: &str = "What is the PUC architecture of Samsung or Hynix NAND chip?";

pub const SCRIPT: &str = r#"
default = "Answer: 4"

[[rule]]
contains = "Summarize the document excerpt"
response = "An excerpt about NAND die layout."

[[rule]]
pattern = '(?s)Identify every jargon term.*Question: What is the PUC'
response = '["PUC"]'

[[rule]]
pattern = '(?s)Identify every jargon term.*Question: [^\n]*QZXV'
response = '["QZXV"]'

[[rule]]
pattern = '(?s)Identify every jargon term.*Question: [^\n]*GARBLE'
response = "I would rather not say."

[[rule]]
contains = "Identify every jargon term"
response = "[]"

[[rule]]
contains = "Identify the context of the question"
response = "This is about flash memory design.\nContext: nand-design"

[[rule]]
contains = "Answer the question using the documents"
response = "PUC places the peripheral circuits under the cell array. Answer: 4"
"#;

pub fn core_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

/// A scratch directory holding `glossa.toml`, the backend script and the
/// data directory.
pub struct Setup {
    pub dir: TempDir,
}

impl Setup {
    pub fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("mock.toml"), SCRIPT).unwrap();
        let config = format!(
            r#"
[storage]
data_dir = "data"

[pipeline]
llm_backend = "mock"
top_k = 2

[ingest]
counter = "words"

[llm.mock]
kind = "scripted"
script = "mock.toml"

[contexts.default]
path = {contexts:?}
{extra}
"#,
            contexts = core_fixture("contexts.toml").display().to_string(),
        );
        std::fs::write(dir.path().join("glossa.toml"), config).unwrap();
        Self { dir }
    }

    pub fn config_path(&self) -> PathBuf {
        self.dir.path().join("glossa.toml")
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn engine(&self) -> glossa_core::Engine {
        let config = glossa_core::Config::load(Some(&self.config_path())).unwrap();
        glossa_core::Engine::open(config).unwrap()
    }
}

pub fn documents_json() -> serde_json::Value {
    serde_json::json!({
        "documents": [
            {
                "id": "nand-puc",
                "text": "Peripheral Under Cell places the CMOS peripheral circuits underneath the memory cell array. Moving the peripheral circuits below the cell array shrinks the die area of 3D NAND flash."
            },
            {
                "id": "fab-dispatch",
                "text": "PUC architecture at Samsung and Hynix: the Process Unit Controller schedules each chip lot through the fab. Samsung and Hynix chip plants use a PUC architecture for lot dispatch."
            }
        ]
    })
}
