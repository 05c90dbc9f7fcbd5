//! Presigned blob URLs.
//!
//! `sig = hex(HMAC-SHA-256(secret, "{objectId}\n{key}\n{mode}\n{expires}"))`,
//! lowercase hex. URLs look like
//! `/blobs/{objectId}/{key}?mode=GET&expires=1700000000&sig=...`.

use std::fmt;
use std::str::FromStr;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::error::StoreError;
use super::record::ObjectId;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BlobMode {
    Get,
    Put,
}

impl BlobMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BlobMode::Get => "GET",
            BlobMode::Put => "PUT",
        }
    }
}

impl fmt::Display for BlobMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlobMode {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "GET" => Ok(BlobMode::Get),
            "PUT" => Ok(BlobMode::Put),
            other => Err(StoreError::Forbidden(format!("bad mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresignedUrl {
    pub object_id: ObjectId,
    pub key: String,
    pub mode: BlobMode,
    pub expires: u64,
    pub sig: String,
}

impl PresignedUrl {
    pub fn path(&self) -> String {
        format!("/blobs/{}/{}", self.object_id, self.key)
    }

    pub fn path_and_query(&self) -> String {
        format!(
            "{}?mode={}&expires={}&sig={}",
            self.path(),
            self.mode,
            self.expires,
            self.sig
        )
    }

    pub fn query(&self) -> BlobQuery {
        BlobQuery {
            mode: Some(self.mode.to_string()),
            expires: Some(self.expires.to_string()),
            sig: Some(self.sig.clone()),
        }
    }

    /// Absolute URL under `base` (e.g. `http://127.0.0.1:8080`).
    pub fn to_url(&self, base: &str) -> String {
        format!("{}{}", base.trim_end_matches('/'), self.path_and_query())
    }
}

/// The raw, still-untrusted parts of a blob request.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
pub struct BlobQuery {
    pub mode: Option<String>,
    pub expires: Option<String>,
    pub sig: Option<String>,
}

#[derive(Clone)]
pub struct Presigner {
    secret: Vec<u8>,
}

impl fmt::Debug for Presigner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Presigner").finish_non_exhaustive()
    }
}

fn canonical(object_id: &str, key: &str, mode: &str, expires: &str) -> String {
    format!("{object_id}\n{key}\n{mode}\n{expires}")
}

impl Presigner {
    pub fn new(secret: impl AsRef<[u8]>) -> Self {
        Presigner {
            secret: secret.as_ref().to_vec(),
        }
    }

    fn mac(&self, message: &str) -> HmacSha256 {
        let mut mac = HmacSha256::new_from_slice(&self.secret).expect("hmac accepts any key length");
        mac.update(message.as_bytes());
        mac
    }

    pub fn sign(&self, object_id: &ObjectId, key: &str, mode: BlobMode, expires: u64) -> PresignedUrl {
        let msg = canonical(object_id.as_str(), key, mode.as_str(), &expires.to_string());
        let sig = hex::encode(self.mac(&msg).finalize().into_bytes());
        PresignedUrl {
            object_id: object_id.clone(),
            key: key.to_string(),
            mode,
            expires,
            sig,
        }
    }

    /// Checks a request against its signature. The MAC is computed over the
    /// strings exactly as received, so re-encodings of the same number or a
    /// differently-cased signature never verify.
    pub fn verify(
        &self,
        object_id: &str,
        key: &str,
        query: &BlobQuery,
        verb: BlobMode,
        now_secs: u64,
    ) -> Result<(), StoreError> {
        let forbidden = |m: &str| StoreError::Forbidden(m.to_string());
        let mode = query.mode.as_deref().ok_or_else(|| forbidden("missing mode"))?;
        let expires = query.expires.as_deref().ok_or_else(|| forbidden("missing expires"))?;
        let sig = query.sig.as_deref().ok_or_else(|| forbidden("missing sig"))?;

        if sig.len() != 64 || !sig.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(forbidden("malformed signature"));
        }
        let sig_bytes = hex::decode(sig).map_err(|_| forbidden("malformed signature"))?;
        self.mac(&canonical(object_id, key, mode, expires))
            .verify_slice(&sig_bytes)
            .map_err(|_| forbidden("signature mismatch"))?;

        let mode: BlobMode = mode.parse()?;
        if mode != verb {
            return Err(forbidden("mode does not match request method"));
        }
        if !expires.bytes().all(|b| b.is_ascii_digit()) {
            return Err(forbidden("malformed expiry"));
        }
        let expires: u64 = expires.parse().map_err(|_| forbidden("malformed expiry"))?;
        if now_secs >= expires {
            return Err(forbidden("url expired"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn query(url: &PresignedUrl) -> BlobQuery {
        BlobQuery {
            mode: Some(url.mode.to_string()),
            expires: Some(url.expires.to_string()),
            sig: Some(url.sig.clone()),
        }
    }

    #[test]
    fn url_shape() {
        let p = Presigner::new("secret");
        let url = p.sign(&"obj1".into(), "image", BlobMode::Put, 1_000_600);
        assert_eq!(url.path(), "/blobs/obj1/image");
        assert!(url
            .path_and_query()
            .starts_with("/blobs/obj1/image?mode=PUT&expires=1000600&sig="));
        assert_eq!(url.sig.len(), 64);
        assert!(!url.to_url("http://h").contains("secret"));
        p.verify("obj1", "image", &query(&url), BlobMode::Put, 1_000_000).unwrap();
    }

    #[test]
    fn known_vector() {
        // python: hmac.new(b"key", b"obj1\nimage\nGET\n1700000000", sha256).hexdigest()
        let p = Presigner::new("key");
        let url = p.sign(&"obj1".into(), "image", BlobMode::Get, 1700000000);
        assert_eq!(
            url.sig,
            "617fca58646d1390d4cc05a549896361ddc15e9f1e78cbe37cd929aab6f9066a"
        );
    }

    #[test]
    fn rejects_tampering_and_expiry() {
        let p = Presigner::new("secret");
        let url = p.sign(&"obj1".into(), "image", BlobMode::Get, 100);
        let q = query(&url);
        assert!(p.verify("obj1", "image", &q, BlobMode::Get, 99).is_ok());
        assert!(p.verify("obj1", "image", &q, BlobMode::Get, 100).is_err());
        assert!(p.verify("obj2", "image", &q, BlobMode::Get, 0).is_err());
        assert!(p.verify("obj1", "image", &q, BlobMode::Put, 0).is_err());
        let mut upper = q.clone();
        upper.sig = Some(url.sig.to_uppercase());
        assert!(p.verify("obj1", "image", &upper, BlobMode::Get, 0).is_err());
        let mut padded = q.clone();
        padded.expires = Some("0100".into());
        assert!(p.verify("obj1", "image", &padded, BlobMode::Get, 0).is_err());
        assert!(Presigner::new("other")
            .verify("obj1", "image", &q, BlobMode::Get, 0)
            .is_err());
        assert!(p
            .verify("obj1", "image", &BlobQuery::default(), BlobMode::Get, 0)
            .is_err());
    }
}
