//! Stable identifiers for repositories, notebooks and runs.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const HASH_HEX_LEN: usize = 16;

fn short_hash(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0u8]);
        }
        hasher.update(part.as_bytes());
    }
    let digest = hex::encode(hasher.finalize());
    digest[..HASH_HEX_LEN].to_string()
}

macro_rules! id_newtype {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            /// Wraps an identifier read back from the store or a baseline file.
            pub fn from_raw(raw: impl Into<String>) -> Self {
                Self(raw.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

id_newtype!(RepositoryId);
id_newtype!(NotebookId);
id_newtype!(RunId);

impl RepositoryId {
    /// Content hash of an already-normalized repository URL.
    pub fn for_normalized_url(normalized_url: &str) -> Self {
        Self(short_hash(&[normalized_url]))
    }
}

impl NotebookId {
    pub fn for_path(repository_id: &RepositoryId, relative_path: &str) -> Self {
        Self(short_hash(&[repository_id.as_str(), relative_path]))
    }
}

impl RunId {
    /// Fresh random token; one per pipeline invocation and repository.
    pub fn generate() -> Self {
        Self(uuid::Uuid::new_v4().simple().to_string())
    }
}
