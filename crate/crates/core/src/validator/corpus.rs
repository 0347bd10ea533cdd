//! Reference-passage retrieval: a live encyclopedia summary endpoint or a
//! local directory of title→text files for offline runs.

use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Deserialize;

/// Lookup result for one entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lookup {
    Hit {
        title: String,
        extract: String,
        source: String,
    },
    Miss {
        title: String,
    },
}

pub trait ReferenceCorpus: Send + Sync {
    fn lookup(&self, title: &str) -> Lookup;
}

/// Turn a page title into the corpus filename: lowercase, non-alphanumeric
/// runs collapsed to single underscores.
pub fn slugify(title: &str) -> String {
    let mut slug = String::with_capacity(title.len());
    let mut last_was_sep = true;
    for c in title.chars() {
        if c.is_alphanumeric() {
            slug.extend(c.to_lowercase());
            last_was_sep = false;
        } else if !last_was_sep {
            slug.push('_');
            last_was_sep = true;
        }
    }
    while slug.ends_with('_') {
        slug.pop();
    }
    slug
}

/// Offline corpus: one UTF-8 text file per title, named `<slug>.txt`.
pub struct LocalCorpus {
    dir: PathBuf,
}

impl LocalCorpus {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl ReferenceCorpus for LocalCorpus {
    fn lookup(&self, title: &str) -> Lookup {
        let path = self.dir.join(format!("{}.txt", slugify(title)));
        match std::fs::read_to_string(&path) {
            Ok(extract) => Lookup::Hit {
                title: title.to_string(),
                extract,
                source: path.display().to_string(),
            },
            Err(_) => Lookup::Miss {
                title: title.to_string(),
            },
        }
    }
}

/// Live REST summary endpoint (`GET {base}/{title}`), rate limited.
pub struct LiveCorpus {
    base_url: String,
    agent: ureq::Agent,
    min_interval: Duration,
    last_request: Mutex<Option<Instant>>,
}

#[derive(Deserialize)]
struct SummaryResponse {
    #[serde(default)]
    title: String,
    #[serde(default)]
    extract: String,
}

impl LiveCorpus {
    /// `requests_per_sec` throttles lookups (default policy: 2 req/s).
    pub fn new(base_url: impl Into<String>, requests_per_sec: f64) -> Self {
        let rps = requests_per_sec.max(0.1);
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent: ureq::Agent::new_with_defaults(),
            min_interval: Duration::from_secs_f64(1.0 / rps),
            last_request: Mutex::new(None),
        }
    }

    fn throttle(&self) {
        let mut last = self.last_request.lock().expect("throttle lock poisoned");
        if let Some(at) = *last {
            let since = at.elapsed();
            if since < self.min_interval {
                std::thread::sleep(self.min_interval - since);
            }
        }
        *last = Some(Instant::now());
    }

    fn fetch(&self, title: &str) -> Result<SummaryResponse, String> {
        self.throttle();
        let encoded = title.replace(' ', "_");
        let url = format!("{}/{}", self.base_url, encoded);
        let mut attempt = 0;
        loop {
            match self.agent.get(&url).call() {
                Ok(mut resp) => {
                    return resp
                        .body_mut()
                        .read_json::<SummaryResponse>()
                        .map_err(|e| e.to_string())
                }
                Err(ureq::Error::StatusCode(404)) => return Err("not found".into()),
                Err(e) if attempt < 2 => {
                    attempt += 1;
                    log::warn!("retrying lookup of {title}: {e}");
                    std::thread::sleep(Duration::from_millis(200 << attempt));
                }
                Err(e) => return Err(e.to_string()),
            }
        }
    }
}

impl ReferenceCorpus for LiveCorpus {
    fn lookup(&self, title: &str) -> Lookup {
        match self.fetch(title) {
            Ok(summary) if !summary.extract.is_empty() => Lookup::Hit {
                title: if summary.title.is_empty() {
                    title.to_string()
                } else {
                    summary.title
                },
                extract: summary.extract,
                source: format!("{}/{}", self.base_url, title.replace(' ', "_")),
            },
            Ok(_) | Err(_) => Lookup::Miss {
                title: title.to_string(),
            },
        }
    }
}
