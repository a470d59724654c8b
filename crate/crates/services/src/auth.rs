//! Static bearer tokens standing in for federated identity.

use std::collections::{BTreeMap, BTreeSet};

use axum::http::{header, HeaderMap};
use serde::{Deserialize, Serialize};

/// Maps bearer tokens to principal names.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tokens(pub BTreeMap<String, String>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthError {
    Missing,
    Invalid,
}

impl Tokens {
    pub fn single(token: impl Into<String>, principal: impl Into<String>) -> Self {
        Self(BTreeMap::from([(token.into(), principal.into())]))
    }

    pub fn insert(&mut self, token: impl Into<String>, principal: impl Into<String>) {
        self.0.insert(token.into(), principal.into());
    }

    pub fn principal(&self, token: &str) -> Option<&str> {
        self.0.get(token).map(String::as_str)
    }

    /// Principal for the request, `Ok(None)` when no credentials were sent.
    pub fn identify(&self, headers: &HeaderMap) -> Result<Option<&str>, AuthError> {
        match bearer(headers) {
            None if headers.contains_key(header::AUTHORIZATION) => Err(AuthError::Invalid),
            None => Ok(None),
            Some(token) => self.principal(token).map(Some).ok_or(AuthError::Invalid),
        }
    }

    /// Like [`Tokens::identify`] but anonymous requests are refused.
    pub fn require(&self, headers: &HeaderMap) -> Result<&str, AuthError> {
        self.identify(headers)?.ok_or(AuthError::Missing)
    }

    pub fn principals(&self) -> BTreeSet<&str> {
        self.0.values().map(String::as_str).collect()
    }
}

/// Token from an `Authorization: Bearer <token>` header.
pub fn bearer(headers: &HeaderMap) -> Option<&str> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = value.split_once(' ')?;
    let token = token.trim();
    (scheme.eq_ignore_ascii_case("bearer") && !token.is_empty()).then_some(token)
}

#[cfg(test)]
mod tests {
    use super::*;
    use axum::http::HeaderValue;

    fn headers(auth: Option<&str>) -> HeaderMap {
        let mut h = HeaderMap::new();
        if let Some(a) = auth {
            h.insert(header::AUTHORIZATION, HeaderValue::from_str(a).unwrap());
        }
        h
    }

    #[test]
    fn identify() {
        let t = Tokens::single("s3cret", "alice");
        assert_eq!(t.identify(&headers(None)), Ok(None));
        assert_eq!(t.identify(&headers(Some("Bearer s3cret"))), Ok(Some("alice")));
        assert_eq!(t.identify(&headers(Some("bearer s3cret"))), Ok(Some("alice")));
        assert_eq!(t.identify(&headers(Some("Bearer nope"))), Err(AuthError::Invalid));
        assert_eq!(t.identify(&headers(Some("Basic s3cret"))), Err(AuthError::Invalid));
        assert_eq!(t.require(&headers(None)), Err(AuthError::Missing));
    }
}
