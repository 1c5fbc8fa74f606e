use std::collections::HashMap;

use parking_lot::Mutex;
use rand::rngs::OsRng;
use rand::RngCore;

use crate::api::{auth_signing_bytes, ApiSession, ChallengeResponse, VerifyRequest};
use crate::crypto::verify_signature;
use crate::registry::{Did, Registry, Role};
use crate::time::Timestamp;

use super::ApiError;

const CHALLENGE_TTL_SECONDS: i64 = 120;

/// An authenticated caller. The role is read from the registry on every
/// request rather than trusted from the session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Caller {
    pub did: Did,
    pub role: Role,
}

pub(crate) fn random_token() -> String {
    let mut bytes = [0u8; 32];
    OsRng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

/// Outstanding login challenges and live bearer sessions.
pub(crate) struct Sessions {
    ttl: i64,
    challenges: Mutex<HashMap<String, (Did, Timestamp)>>,
    sessions: Mutex<HashMap<String, ApiSession>>,
}

impl Sessions {
    pub(crate) fn new(ttl_seconds: u32) -> Self {
        Sessions { ttl: i64::from(ttl_seconds), challenges: Mutex::default(), sessions: Mutex::default() }
    }

    pub(crate) fn challenge(&self, did: &Did, registry: &Registry, now: Timestamp) -> Result<ChallengeResponse, ApiError> {
        registry.resolve_did(did).map_err(|_| ApiError::new("UnknownDid", format!("{did} is not registered")))?;
        let challenge = random_token();
        let expires_at = now.plus_seconds(CHALLENGE_TTL_SECONDS);
        let mut map = self.challenges.lock();
        map.retain(|_, (_, exp)| *exp > now);
        map.insert(challenge.clone(), (did.clone(), expires_at));
        Ok(ChallengeResponse { challenge, expires_at })
    }

    /// Challenges are single use whether or not the signature verifies.
    pub(crate) fn verify(&self, req: &VerifyRequest, registry: &Registry, now: Timestamp) -> Result<ApiSession, ApiError> {
        let issued = self.challenges.lock().remove(&req.challenge);
        match issued {
            Some((did, exp)) if did == req.did && exp > now => {}
            _ => return Err(ApiError::unauthenticated("unknown or expired challenge")),
        }
        let doc = registry
            .resolve_did(&req.did)
            .map_err(|_| ApiError::new("UnknownDid", format!("{} is not registered", req.did)))?;
        if !verify_signature(&doc.signing_key, &auth_signing_bytes(&req.did, &req.challenge), &req.signature) {
            return Err(ApiError::new("BadSignature", "challenge signature does not verify"));
        }
        let session = ApiSession {
            token: random_token(),
            caller_did: req.did.clone(),
            role: doc.role,
            issued_at: now,
            expires_at: now.plus_seconds(self.ttl),
        };
        let mut map = self.sessions.lock();
        map.retain(|_, s| s.expires_at > now);
        map.insert(session.token.clone(), session.clone());
        Ok(session)
    }

    pub(crate) fn caller(&self, token: &str, registry: &Registry, now: Timestamp) -> Result<Caller, ApiError> {
        let session = self.sessions.lock().get(token).cloned();
        let session = match session {
            Some(s) if s.expires_at > now => s,
            Some(_) => {
                self.sessions.lock().remove(token);
                return Err(ApiError::unauthenticated("session expired"));
            }
            None => return Err(ApiError::unauthenticated("unknown session token")),
        };
        let doc = registry
            .resolve_did(&session.caller_did)
            .map_err(|_| ApiError::unauthenticated("session DID no longer resolves"))?;
        Ok(Caller { did: session.caller_did, role: doc.role })
    }
}
