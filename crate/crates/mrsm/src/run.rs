use std::fs;
use std::path::{Path, PathBuf};

use mrsm_core::engine::{CloudServer, Engine, OwnerRegistry, TrustedProxy};

use crate::formats::{self, read_json, write_json};
use crate::{Error, Result};

/// Directory holding a saved [`Engine`].
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn corpus(&self) -> PathBuf {
        self.file("corpus.jsonl")
    }

    pub fn exists(&self) -> bool {
        self.file("proxy.json").is_file()
    }

    /// Writes every component. Trees are stored in preorder, so proxy and
    /// server slot numbers agree again after loading.
    pub fn save(&self, engine: &Engine) -> Result<()> {
        fs::create_dir_all(&self.path).map_err(|e| Error::io(&self.path, e))?;
        formats::write_corpus(&self.corpus(), &engine.owners.documents())?;
        write_json(&self.file("proxy.json"), &engine.proxy)?;
        formats::write_keys(&self.file("keys.bin"), &engine.proxy.keys)?;
        formats::write_index(&self.file("index.bin"), &engine.proxy.forest)?;
        formats::write_forest(&self.file("forest.bin"), &engine.server.forest)
    }

    /// Saves only the proxy counters, after a search.
    pub fn save_proxy(&self, proxy: &TrustedProxy) -> Result<()> {
        write_json(&self.file("proxy.json"), proxy)
    }

    pub fn load(&self) -> Result<Engine> {
        if !self.exists() {
            return Err(Error::Config(format!("{} is not a run directory", self.path.display())));
        }
        let mut proxy: TrustedProxy = read_json(&self.file("proxy.json"))?;
        proxy.reindex();
        proxy.keys = formats::read_keys(&self.file("keys.bin"))?;
        proxy.forest = formats::read_index(&self.file("index.bin"))?;
        let server = CloudServer::new(formats::read_forest(&self.file("forest.bin"))?);
        let owners = OwnerRegistry::from_documents(&formats::read_corpus(&self.corpus())?)?;
        Ok(Engine { owners, proxy, server })
    }
}

impl AsRef<Path> for RunDir {
    fn as_ref(&self) -> &Path {
        &self.path
    }
}
